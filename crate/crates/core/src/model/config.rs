use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{frontend_geometry, FrontendStage};

fn default_channels() -> usize {
    3
}

/// Extents of the images a model accepts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
}

/// One ReNet layer: patch extents and recurrent units per direction. The
/// layer emits `2 · units` channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReNetLayerConfig {
    pub patch: [usize; 2],
    pub units: usize,
}

/// One transposed-convolution upsampling layer; stride equals `filter`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsampleLayerConfig {
    pub filter: [usize; 2],
    pub channels: usize,
}

/// Declarative architecture: stem → ReNet stack → upsampling stack →
/// 1×1 classifier → softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input: InputShape,
    #[serde(default)]
    pub frontend: Vec<FrontendStage>,
    #[serde(default)]
    pub frozen_frontend: bool,
    pub renet: Vec<ReNetLayerConfig>,
    #[serde(default)]
    pub upsample: Vec<UpsampleLayerConfig>,
    pub classes: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Channel and extent bookkeeping derived from a validated config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    /// Total downsampling (rows, cols) of stem and patch tilings.
    pub down: (usize, usize),
    /// Total upsampling (rows, cols) of the transposed convolutions.
    pub up: (usize, usize),
    /// Channel count entering each ReNet layer.
    pub renet_in: Vec<usize>,
    /// Channel count entering each upsampling layer.
    pub upsample_in: Vec<usize>,
    /// Channel count entering the classifier.
    pub classifier_in: usize,
    /// Extents of the map after the stem.
    pub stem_out: (usize, usize, usize),
}

impl ModelConfig {
    /// Small profile used for gradient checks and smoke tests: 8×8×3 input,
    /// identity stem, one 2×2 ReNet layer with 4 units, one 2×2 upsampling
    /// layer, two classes.
    pub fn tiny() -> Self {
        ModelConfig {
            input: InputShape {
                height: 8,
                width: 8,
                channels: 3,
            },
            frontend: vec![],
            frozen_frontend: false,
            renet: vec![ReNetLayerConfig {
                patch: [2, 2],
                units: 4,
            }],
            upsample: vec![UpsampleLayerConfig {
                filter: [2, 2],
                channels: 4,
            }],
            classes: 2,
            seed: 0,
        }
    }

    /// The CamVid hyperparameter row: patches (2×2), (1×1); 100 units per
    /// direction in each ReNet layer; upsampling filters (2×2), (1×1) with 50
    /// channels each.
    pub fn camvid_row(height: usize, width: usize, classes: usize) -> Self {
        ModelConfig {
            input: InputShape {
                height,
                width,
                channels: 3,
            },
            frontend: vec![],
            frozen_frontend: false,
            renet: vec![
                ReNetLayerConfig {
                    patch: [2, 2],
                    units: 100,
                },
                ReNetLayerConfig {
                    patch: [1, 1],
                    units: 100,
                },
            ],
            upsample: vec![
                UpsampleLayerConfig {
                    filter: [2, 2],
                    channels: 50,
                },
                UpsampleLayerConfig {
                    filter: [1, 1],
                    channels: 50,
                },
            ],
            classes,
            seed: 0,
        }
    }

    pub fn with_input(mut self, height: usize, width: usize) -> Self {
        self.input.height = height;
        self.input.width = width;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every structural invariant and returns the derived geometry.
    pub fn validate(&self) -> Result<Geometry> {
        let InputShape {
            height,
            width,
            channels,
        } = self.input;
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Config("input extents must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.renet.is_empty() {
            return Err(Error::Config("at least one ReNet layer is required".into()));
        }
        let (stem_factor, mut c) = frontend_geometry(&self.frontend, (height, width, channels))?;
        let (mut h, mut w) = (height / stem_factor, width / stem_factor);
        let stem_out = (h, w, c);
        let mut down = (stem_factor, stem_factor);
        let mut renet_in = Vec::new();
        for (l, layer) in self.renet.iter().enumerate() {
            let [ph, pw] = layer.patch;
            if ph == 0 || pw == 0 || layer.units == 0 {
                return Err(Error::Config(format!("ReNet layer {l}: patch and units must be positive")));
            }
            if h % ph != 0 || w % pw != 0 {
                return Err(Error::Config(format!(
                    "ReNet layer {l}: a {h}×{w} map cannot be tiled by {ph}×{pw} patches; resize \
                     the input or change the patch size"
                )));
            }
            renet_in.push(c);
            h /= ph;
            w /= pw;
            c = 2 * layer.units;
            down = (down.0 * ph, down.1 * pw);
        }
        let mut up = (1, 1);
        let mut upsample_in = Vec::new();
        for (l, layer) in self.upsample.iter().enumerate() {
            let [fh, fw] = layer.filter;
            if fh == 0 || fw == 0 || layer.channels == 0 {
                return Err(Error::Config(format!(
                    "upsampling layer {l}: filter and channels must be positive"
                )));
            }
            upsample_in.push(c);
            c = layer.channels;
            up = (up.0 * fh, up.1 * fw);
        }
        if down != up {
            return Err(Error::Config(format!(
                "output resolution would not match the input: downsampling factor {}×{} (stem \
                 {stem_factor}, ReNet patches) but upsampling factor {}×{}",
                down.0, down.1, up.0, up.1
            )));
        }
        Ok(Geometry {
            down,
            up,
            renet_in,
            upsample_in,
            classifier_in: c,
            stem_out,
        })
    }
}
