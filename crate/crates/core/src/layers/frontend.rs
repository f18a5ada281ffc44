use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{activation, conv2d, max_pool2x2, transposed_conv2d, Activation, ConvSpec, Scalar, Tensor};

/// One stage of the convolutional stem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontendStage {
    /// Stride-1 `kernel × kernel` convolution followed by a ReLU. The padding
    /// must keep the spatial extents unchanged (`2·padding = kernel − 1`).
    Conv {
        kernel: usize,
        out_channels: usize,
        padding: usize,
    },
    /// 2×2 max pooling with stride 2.
    Pool,
}

impl FrontendStage {
    pub fn conv_spec(&self, in_channels: usize) -> Option<ConvSpec> {
        match *self {
            FrontendStage::Conv {
                kernel,
                out_channels,
                padding,
            } => Some(
                ConvSpec::new(kernel, kernel, in_channels, out_channels)
                    .with_padding(crate::tensor::Padding::uniform(padding)),
            ),
            FrontendStage::Pool => None,
        }
    }
}

/// Downsampling factor and output channel count of a stem, checking that
/// every pooling stage sees even extents and every convolution preserves
/// extents.
pub fn frontend_geometry(
    stages: &[FrontendStage],
    (h, w, c): (usize, usize, usize),
) -> Result<(usize, usize)> {
    let (mut h, mut w, mut c) = (h, w, c);
    let mut factor = 1;
    for (idx, stage) in stages.iter().enumerate() {
        match *stage {
            FrontendStage::Conv {
                kernel,
                out_channels,
                padding,
            } => {
                if kernel == 0 || out_channels == 0 || 2 * padding + 1 != kernel {
                    return Err(Error::Config(format!(
                        "frontend stage {idx}: convolution must be {kernel}×{kernel} with padding \
                         {} to preserve extents, got padding {padding}",
                        kernel.saturating_sub(1) / 2
                    )));
                }
                c = out_channels;
            }
            FrontendStage::Pool => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Config(format!(
                        "frontend stage {idx}: 2×2 pooling on a {h}×{w} map; extents must be even"
                    )));
                }
                h /= 2;
                w /= 2;
                factor *= 2;
            }
        }
    }
    Ok((factor, c))
}

/// Realized stem stage.
#[derive(Clone, Debug, PartialEq)]
pub enum FrontendLayer<T = f32> {
    Conv {
        spec: ConvSpec,
        kernels: Tensor<T>,
        bias: Tensor<T>,
    },
    Pool,
}

/// Runs the stem. An empty stem is the identity.
pub fn conv_frontend<T: Scalar>(layers: &[FrontendLayer<T>], x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut cur = x.clone();
    for layer in layers {
        cur = match layer {
            FrontendLayer::Conv { spec, kernels, bias } => {
                activation(&conv2d(&cur, spec, kernels, bias)?, Activation::Relu)
            }
            FrontendLayer::Pool => max_pool2x2(&cur)?.0,
        };
    }
    Ok(cur)
}

/// `relu(transposed_conv2d(x))`: multiplies both spatial extents by the
/// filter size.
pub fn upsample_layer<T: Scalar>(
    spec: &ConvSpec,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    Ok(activation(&transposed_conv2d(x, spec, kernels, bias)?, Activation::Relu))
}
