//! Dataset ingestion, ground-truth preparation and synthetic data.

mod manifest;
pub mod netpbm;
mod prep;
mod synth;

pub use manifest::{Dataset, Manifest, ManifestEntry, Sample, Split};
pub use netpbm::{image_to_raster, load_image, load_mask, read_netpbm, write_netpbm, Raster};
pub use prep::{class_frequencies, downscale_majority, downscale_mean, threshold_mask};
pub use synth::{synth_dataset, synth_in_memory, synth_rasters, SynthConfig};
