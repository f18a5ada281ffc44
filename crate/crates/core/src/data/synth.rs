//! Procedural segmentation datasets: solid shapes on textured backgrounds.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Dataset, Manifest, ManifestEntry, Sample, Split};
use super::netpbm::{write_netpbm, Raster};
use crate::error::{Error, Result};

/// Base RGB of each foreground class; background is class 0.
const PALETTE: [[f32; 3]; 4] = [[0.9, 0.25, 0.2], [0.25, 0.85, 0.3], [0.25, 0.35, 0.95], [0.95, 0.85, 0.25]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    /// Including the background class; 2 to 5.
    pub classes: usize,
    pub seed: u64,
    /// Side (rectangles) or diameter (discs) bounds in pixels.
    pub min_size: usize,
    pub max_size: usize,
}

impl SynthConfig {
    pub fn new(n: usize, height: usize, width: usize, classes: usize, seed: u64) -> Self {
        let short = height.min(width);
        SynthConfig {
            n,
            height,
            width,
            classes,
            seed,
            min_size: (short / 5).max(2).min(short),
            max_size: (short / 2).max(2).min(short),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("synthetic set needs at least one image".into()));
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(4) || !self.width.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "synthetic extents {}×{} must be positive multiples of 4",
                self.height, self.width
            )));
        }
        if !(2..=5).contains(&self.classes) {
            return Err(Error::Config(format!("synthetic class count must be 2 to 5, got {}", self.classes)));
        }
        if self.min_size == 0 || self.min_size > self.max_size || self.max_size > self.height.min(self.width) {
            return Err(Error::Config(format!(
                "shape sizes {}..={} do not fit a {}×{} image",
                self.min_size, self.max_size, self.height, self.width
            )));
        }
        Ok(())
    }

    /// Split of image `i`: the first 70% train, the next 15% valid, the rest test.
    pub fn split_of(&self, i: usize) -> Split {
        let train = (self.n as f64 * 0.7).round() as usize;
        let valid = (self.n as f64 * 0.15).round() as usize;
        if i < train {
            Split::Train
        } else if i < train + valid {
            Split::Valid
        } else {
            Split::Test
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        const NAMES: [&str; 5] = ["background", "red", "green", "blue", "yellow"];
        NAMES[..self.classes].iter().map(|s| s.to_string()).collect()
    }
}

fn jitter(rng: &mut ChaCha8Rng, amount: f32) -> f32 {
    rng.random_range(-amount..=amount)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One image and label map.
fn render(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Raster, Raster) {
    let (h, w) = (cfg.height, cfg.width);
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.35));
    let period = rng.random_range(3.0..8.0f32);
    let phase = rng.random_range(0.0..std::f32::consts::TAU);
    let mut rgb = vec![[0f32; 3]; h * w];
    for (i, px) in rgb.iter_mut().enumerate() {
        let (r, c) = ((i / w) as f32, (i % w) as f32);
        let stripe = 0.05 * ((r + 0.5 * c) / period + phase).sin();
        for (ch, v) in px.iter_mut().enumerate() {
            *v = base[ch] + stripe + jitter(rng, 0.06);
        }
    }
    let mut mask = vec![0u8; h * w];
    for class in 1..cfg.classes {
        let color: [f32; 3] = std::array::from_fn(|ch| PALETTE[class - 1][ch] + jitter(rng, 0.08));
        let sh = rng.random_range(cfg.min_size..=cfg.max_size);
        let sw = rng.random_range(cfg.min_size..=cfg.max_size);
        let top = rng.random_range(0..=h - sh);
        let left = rng.random_range(0..=w - sw);
        let disc = rng.random_bool(0.5);
        let (cy, cx) = (top as f32 + sh as f32 / 2.0, left as f32 + sw as f32 / 2.0);
        for r in top..top + sh {
            for c in left..left + sw {
                if disc {
                    let dy = (r as f32 + 0.5 - cy) / (sh as f32 / 2.0);
                    let dx = (c as f32 + 0.5 - cx) / (sw as f32 / 2.0);
                    if dy * dy + dx * dx > 1.0 {
                        continue;
                    }
                }
                mask[r * w + c] = class as u8;
                for ch in 0..3 {
                    rgb[r * w + c][ch] = color[ch] + jitter(rng, 0.03);
                }
            }
        }
    }
    let data = rgb.iter().flat_map(|p| p.map(quantize)).collect();
    (
        Raster::rgb(w, h, data).expect("extent arithmetic"),
        Raster::gray(w, h, mask).expect("extent arithmetic"),
    )
}

/// Generates every image/mask raster of `cfg`, deterministically.
pub fn synth_rasters(cfg: &SynthConfig) -> Result<Vec<(Raster, Raster)>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.n).map(|_| render(cfg, &mut rng)).collect())
}

fn sample_id(i: usize) -> String {
    format!("img_{i:04}")
}

fn manifest_for(cfg: &SynthConfig) -> Manifest {
    Manifest {
        classes: cfg.class_names(),
        void_index: None,
        samples: (0..cfg.n)
            .map(|i| ManifestEntry {
                image: format!("images/{}.ppm", sample_id(i)),
                mask: format!("masks/{}.pgm", sample_id(i)),
                split: cfg.split_of(i),
            })
            .collect(),
    }
}

/// Same content as [`synth_dataset`] would write, without touching disk.
pub fn synth_in_memory(cfg: &SynthConfig) -> Result<Dataset> {
    let samples = synth_rasters(cfg)?
        .into_iter()
        .enumerate()
        .map(|(i, (img, mask))| {
            let labels = mask.data.iter().map(|&v| u32::from(v)).collect();
            Ok((cfg.split_of(i), Sample::new(sample_id(i), img.to_image(), labels)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::from_samples(manifest_for(cfg), samples))
}

/// Writes `images/*.ppm`, `masks/*.pgm` and `manifest.json` under `out_dir`.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out = out_dir.as_ref();
    let rasters = synth_rasters(cfg)?;
    for sub in ["images", "masks"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let manifest = manifest_for(cfg);
    for (entry, (img, mask)) in manifest.samples.iter().zip(&rasters) {
        write_netpbm(out.join(&entry.image), img)?;
        write_netpbm(out.join(&entry.mask), mask)?;
    }
    manifest.save(out.join("manifest.json"))?;
    Ok(manifest)
}
