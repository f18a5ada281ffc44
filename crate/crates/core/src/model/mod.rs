//! The assembled segmentation network: convolutional stem, stacked ReNet
//! layers, transposed-convolution upsampling, a 1×1 classifier and a
//! per-pixel softmax.

mod config;
pub mod init;
mod io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{
    conv_frontend, renet_layer, upsample_layer, Direction, FrontendLayer, GruParams, ReNetParams,
    SweepMode, GRU_PARAM_NAMES,
};
use crate::tensor::{
    activation, conv2d, max_pool2x2, softmax_channels, transposed_conv2d, Activation, ConvSpec, Scalar, Tensor,
};

pub use config::{Geometry, InputShape, ModelConfig, ReNetLayerConfig, UpsampleLayerConfig};
pub use init::{init_glorot, init_orthonormal};
pub use io::{load_checkpoint, load_model, load_params_into, save_checkpoint, save_model, Checkpoint, FORMAT_VERSION, MAGIC};

/// Transposed-convolution layer weights.
#[derive(Clone, Debug, PartialEq)]
pub struct UpsampleParams<T = f32> {
    pub spec: ConvSpec,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

/// 1×1 convolution mapping the last feature map to class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams<T = f32> {
    pub spec: ConvSpec,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Role of a parameter, used for weight decay and freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// A realized, parameterized model.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    config: ModelConfig,
    frontend: Vec<FrontendLayer<T>>,
    renet: Vec<ReNetParams<T>>,
    upsample: Vec<UpsampleParams<T>>,
    classifier: ClassifierParams<T>,
}

/// Metadata of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamInfo {
    pub id: String,
    pub kind: ParamKind,
    pub frozen: bool,
}

/// Tape handles for every model parameter, produced by [`Model::register`].
pub struct ModelVars {
    frontend: Vec<Option<(Var, Var)>>,
    renet: Vec<[[Var; 9]; 4]>,
    upsample: Vec<(Var, Var)>,
    classifier: (Var, Var),
    all: Vec<(ParamInfo, Var)>,
}

impl ModelVars {
    pub fn all(&self) -> &[(ParamInfo, Var)] {
        &self.all
    }
}

/// Builds a model with a fresh initialization drawn from `seed`.
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
    Model::build(config, seed)
}

impl<T: Scalar> Model<T> {
    /// Recurrent matrices orthonormal, every other weight Glorot uniform,
    /// biases zero. Deterministic for a fixed seed.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let geo = config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frontend = Vec::new();
        let mut c = config.input.channels;
        for stage in &config.frontend {
            match stage.conv_spec(c) {
                Some(spec) => {
                    let fan_in = spec.kernel_h * spec.kernel_w * spec.in_channels;
                    let fan_out = spec.kernel_h * spec.kernel_w * spec.out_channels;
                    frontend.push(FrontendLayer::Conv {
                        spec,
                        kernels: init_glorot(fan_in, fan_out, &spec.kernel_shape(), &mut rng),
                        bias: Tensor::zeros(vec![spec.out_channels]),
                    });
                    c = spec.out_channels;
                }
                None => frontend.push(FrontendLayer::Pool),
            }
        }
        let renet = config
            .renet
            .iter()
            .zip(&geo.renet_in)
            .map(|(l, &cin)| ReNetParams::init(cin, l.patch[0], l.patch[1], l.units, &mut rng))
            .collect();
        let upsample = config
            .upsample
            .iter()
            .zip(&geo.upsample_in)
            .map(|(l, &cin)| {
                let spec = ConvSpec::tied(l.filter[0], l.filter[1], cin, l.channels);
                let area = l.filter[0] * l.filter[1];
                let shape = [l.filter[0], l.filter[1], l.channels, cin];
                UpsampleParams {
                    spec,
                    kernels: init_glorot(area * cin, area * l.channels, &shape, &mut rng),
                    bias: Tensor::zeros(vec![l.channels]),
                }
            })
            .collect();
        let spec = ConvSpec::new(1, 1, geo.classifier_in, config.classes);
        let classifier = ClassifierParams {
            spec,
            kernels: init_glorot(geo.classifier_in, config.classes, &spec.kernel_shape(), &mut rng),
            bias: Tensor::zeros(vec![config.classes]),
        };
        Ok(Model {
            config: config.clone(),
            frontend,
            renet,
            upsample,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn renet_layers(&self) -> &[ReNetParams<T>] {
        &self.renet
    }

    /// Every parameter with its stable identifier, in a fixed order.
    pub fn params(&self) -> Vec<(ParamInfo, &Tensor<T>)> {
        let frozen = self.config.frozen_frontend;
        let mut out = Vec::new();
        for (i, layer) in self.frontend.iter().enumerate() {
            if let FrontendLayer::Conv { kernels, bias, .. } = layer {
                out.push((info(format!("frontend.{i}.kernels"), ParamKind::Weight, frozen), kernels));
                out.push((info(format!("frontend.{i}.bias"), ParamKind::Bias, frozen), bias));
            }
        }
        for (l, layer) in self.renet.iter().enumerate() {
            for sweep in layer.sweeps() {
                for (name, t) in GRU_PARAM_NAMES.iter().zip(sweep.gru.tensors()) {
                    out.push((info(renet_id(l, sweep.direction, name), gru_kind(name), false), t));
                }
            }
        }
        for (l, up) in self.upsample.iter().enumerate() {
            out.push((info(format!("upsample.{l}.kernels"), ParamKind::Weight, false), &up.kernels));
            out.push((info(format!("upsample.{l}.bias"), ParamKind::Bias, false), &up.bias));
        }
        out.push((info("classifier.kernels".into(), ParamKind::Weight, false), &self.classifier.kernels));
        out.push((info("classifier.bias".into(), ParamKind::Bias, false), &self.classifier.bias));
        out
    }

    /// Mutable view in the same order as [`Model::params`].
    pub fn params_mut(&mut self) -> Vec<(ParamInfo, &mut Tensor<T>)> {
        let frozen = self.config.frozen_frontend;
        let mut out = Vec::new();
        for (i, layer) in self.frontend.iter_mut().enumerate() {
            if let FrontendLayer::Conv { kernels, bias, .. } = layer {
                out.push((info(format!("frontend.{i}.kernels"), ParamKind::Weight, frozen), kernels));
                out.push((info(format!("frontend.{i}.bias"), ParamKind::Bias, frozen), bias));
            }
        }
        for (l, layer) in self.renet.iter_mut().enumerate() {
            for sweep in layer.sweeps_mut() {
                let dir = sweep.direction;
                for (name, t) in GRU_PARAM_NAMES.iter().zip(sweep.gru.tensors_mut()) {
                    out.push((info(renet_id(l, dir, name), gru_kind(name), false), t));
                }
            }
        }
        for (l, up) in self.upsample.iter_mut().enumerate() {
            out.push((info(format!("upsample.{l}.kernels"), ParamKind::Weight, false), &mut up.kernels));
            out.push((info(format!("upsample.{l}.bias"), ParamKind::Bias, false), &mut up.bias));
        }
        out.push((info("classifier.kernels".into(), ParamKind::Weight, false), &mut self.classifier.kernels));
        out.push((info("classifier.bias".into(), ParamKind::Bias, false), &mut self.classifier.bias));
        out
    }

    pub fn param(&self, id: &str) -> Option<&Tensor<T>> {
        self.params().into_iter().find(|(i, _)| i.id == id).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, id: &str) -> Option<&mut Tensor<T>> {
        self.params_mut().into_iter().find(|(i, _)| i.id == id).map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Sets the frozen flag of the stem parameters.
    pub fn set_frozen_frontend(&mut self, frozen: bool) {
        self.config.frozen_frontend = frozen;
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            frontend: self
                .frontend
                .iter()
                .map(|l| match l {
                    FrontendLayer::Conv { spec, kernels, bias } => FrontendLayer::Conv {
                        spec: *spec,
                        kernels: kernels.cast(),
                        bias: bias.cast(),
                    },
                    FrontendLayer::Pool => FrontendLayer::Pool,
                })
                .collect(),
            renet: self
                .renet
                .iter()
                .map(|r| {
                    let cast_sweep = |s: &crate::layers::SweepParams<T>| {
                        let mut g = GruParams::<U>::zeros(s.gru.in_dim(), s.gru.units());
                        for (dst, src) in g.tensors_mut().into_iter().zip(s.gru.tensors()) {
                            *dst = src.cast();
                        }
                        crate::layers::SweepParams::new(s.direction, g)
                    };
                    ReNetParams {
                        patch_h: r.patch_h,
                        patch_w: r.patch_w,
                        down: cast_sweep(&r.down),
                        up: cast_sweep(&r.up),
                        right: cast_sweep(&r.right),
                        left: cast_sweep(&r.left),
                    }
                })
                .collect(),
            upsample: self
                .upsample
                .iter()
                .map(|u| UpsampleParams {
                    spec: u.spec,
                    kernels: u.kernels.cast(),
                    bias: u.bias.cast(),
                })
                .collect(),
            classifier: ClassifierParams {
                spec: self.classifier.spec,
                kernels: self.classifier.kernels.cast(),
                bias: self.classifier.bias.cast(),
            },
        }
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        let (h, w, c) = image.dims3("forward")?;
        let want = self.config.input;
        if h != want.height {
            return Err(Error::dim("forward", "rows", want.height, h));
        }
        if w != want.width {
            return Err(Error::dim("forward", "cols", want.width, w));
        }
        if c != want.channels {
            return Err(Error::dim("forward", "channels", want.channels, c));
        }
        Ok(())
    }

    /// Class logits before the softmax, `H×W×K`.
    pub fn logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_image(image)?;
        let mut x = conv_frontend(&self.frontend, image)?;
        for layer in &self.renet {
            x = renet_layer(layer, &x, SweepMode::Parallel)?;
        }
        for up in &self.upsample {
            x = upsample_layer(&up.spec, &up.kernels, &up.bias, &x)?;
        }
        conv2d(&x, &self.classifier.spec, &self.classifier.kernels, &self.classifier.bias)
    }

    /// Per-pixel class probabilities, `H×W×K`.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        softmax_channels(&self.logits(image)?)
    }

    /// Most probable class of every pixel, row-major.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Vec<u32>> {
        Ok(argmax_channels(&self.forward(image)?))
    }

    /// Which side of every non-differentiable point the forward pass of
    /// `image` lands on: the sign of each pre-ReLU value and the winner of
    /// each 2×2 pool window. Two parameter settings with equal patterns lie
    /// in the same smooth piece of the network.
    pub fn kink_pattern(&self, image: &Tensor<T>) -> Result<Vec<u32>> {
        self.check_image(image)?;
        let mut pattern = Vec::new();
        let relu = |x: Tensor<T>, pattern: &mut Vec<u32>| {
            pattern.extend(x.data().iter().map(|&v| u32::from(v > T::zero())));
            activation(&x, Activation::Relu)
        };
        let mut x = image.clone();
        for layer in &self.frontend {
            x = match layer {
                FrontendLayer::Conv { spec, kernels, bias } => relu(conv2d(&x, spec, kernels, bias)?, &mut pattern),
                FrontendLayer::Pool => {
                    let (y, arg) = max_pool2x2(&x)?;
                    pattern.extend(arg.iter().map(|&a| a as u32));
                    y
                }
            };
        }
        for layer in &self.renet {
            x = renet_layer(layer, &x, SweepMode::Parallel)?;
        }
        for up in &self.upsample {
            x = relu(transposed_conv2d(&x, &up.spec, &up.kernels, &up.bias)?, &mut pattern);
        }
        Ok(pattern)
    }

    /// Records every parameter on `tape`. Call once per tape.
    pub fn register(&self, tape: &mut Tape<T>) -> ModelVars {
        let mut all = Vec::new();
        let mut reg = |tape: &mut Tape<T>, info: ParamInfo, t: &Tensor<T>| {
            let v = tape.param(info.id.clone(), t.clone(), !info.frozen);
            all.push((info, v));
            v
        };
        let frozen = self.config.frozen_frontend;
        let frontend = self
            .frontend
            .iter()
            .enumerate()
            .map(|(i, l)| match l {
                FrontendLayer::Conv { kernels, bias, .. } => Some((
                    reg(tape, info(format!("frontend.{i}.kernels"), ParamKind::Weight, frozen), kernels),
                    reg(tape, info(format!("frontend.{i}.bias"), ParamKind::Bias, frozen), bias),
                )),
                FrontendLayer::Pool => None,
            })
            .collect();
        let renet = self
            .renet
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                layer.sweeps().map(|s| {
                    let ts = s.gru.tensors();
                    std::array::from_fn(|k| {
                        let name = GRU_PARAM_NAMES[k];
                        reg(tape, info(renet_id(l, s.direction, name), gru_kind(name), false), ts[k])
                    })
                })
            })
            .collect();
        let upsample = self
            .upsample
            .iter()
            .enumerate()
            .map(|(l, u)| {
                (
                    reg(tape, info(format!("upsample.{l}.kernels"), ParamKind::Weight, false), &u.kernels),
                    reg(tape, info(format!("upsample.{l}.bias"), ParamKind::Bias, false), &u.bias),
                )
            })
            .collect();
        let classifier = (
            reg(tape, info("classifier.kernels".into(), ParamKind::Weight, false), &self.classifier.kernels),
            reg(tape, info("classifier.bias".into(), ParamKind::Bias, false), &self.classifier.bias),
        );
        ModelVars {
            frontend,
            renet,
            upsample,
            classifier,
            all,
        }
    }

    /// Differentiable forward pass of one image already recorded on `tape`.
    /// Returns the probability map.
    pub fn forward_on_tape(&self, tape: &mut Tape<T>, vars: &ModelVars, image: Var) -> Result<Var> {
        self.check_image(tape.value(image))?;
        let mut x = image;
        for (layer, v) in self.frontend.iter().zip(&vars.frontend) {
            x = match (layer, v) {
                (FrontendLayer::Conv { spec, .. }, Some((k, b))) => {
                    let y = tape.conv2d(x, *k, *b, *spec)?;
                    tape.activation(y, Activation::Relu)
                }
                _ => tape.max_pool2x2(x)?,
            };
        }
        for (layer, v) in self.renet.iter().zip(&vars.renet) {
            let grid = tape.split_patches(x, layer.patch_h, layer.patch_w)?;
            let down = tape.directional_sweep(grid, v[0], Direction::Down)?;
            let up = tape.directional_sweep(grid, v[1], Direction::Up)?;
            let vertical = tape.concat_channels(down, up)?;
            let right = tape.directional_sweep(vertical, v[2], Direction::Right)?;
            let left = tape.directional_sweep(vertical, v[3], Direction::Left)?;
            x = tape.concat_channels(right, left)?;
        }
        for (up, (k, b)) in self.upsample.iter().zip(&vars.upsample) {
            let y = tape.transposed_conv2d(x, *k, *b, up.spec)?;
            x = tape.activation(y, Activation::Relu);
        }
        let (k, b) = vars.classifier;
        let logits = tape.conv2d(x, k, b, self.classifier.spec)?;
        tape.softmax_channels(logits)
    }
}

/// Index of the largest channel at every pixel (first wins on ties).
pub fn argmax_channels<T: Scalar>(probs: &Tensor<T>) -> Vec<u32> {
    let k = probs.shape()[probs.rank() - 1];
    probs
        .data()
        .chunks_exact(k)
        .map(|px| {
            let mut best = 0;
            for (i, &v) in px.iter().enumerate() {
                if v > px[best] {
                    best = i;
                }
            }
            best as u32
        })
        .collect()
}

fn info(id: String, kind: ParamKind, frozen: bool) -> ParamInfo {
    ParamInfo { id, kind, frozen }
}

fn renet_id(layer: usize, dir: Direction, name: &str) -> String {
    format!("renet.{layer}.{}.{name}", dir.name())
}

fn gru_kind(name: &str) -> ParamKind {
    if name.starts_with("b_") {
        ParamKind::Bias
    } else {
        ParamKind::Weight
    }
}
