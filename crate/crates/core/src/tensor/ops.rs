use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => {
                if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    /// Relu uses subgradient 0 at the origin.
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}

/// Per-pixel softmax over the channel axis of an `H×W×K` map, computed
/// after subtracting the pixel's maximum logit.
pub fn softmax_channels<T: Scalar>(map: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, k) = map.dims3("softmax_channels")?;
    if !map.is_finite() {
        return Err(Error::Numeric {
            context: "softmax_channels".into(),
            detail: "non-finite logit".into(),
        });
    }
    let mut out = map.clone();
    for px in out.data_mut().chunks_exact_mut(k) {
        let max = px.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in px.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in px.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

/// Stacks two maps along channels: the channels of `a` precede those of `b`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ha, wa, ca) = a.dims3("concat_channels")?;
    let (hb, wb, cb) = b.dims3("concat_channels")?;
    if ha != hb {
        return Err(Error::dim("concat_channels", "rows", ha, hb));
    }
    if wa != wb {
        return Err(Error::dim("concat_channels", "cols", wa, wb));
    }
    let mut data = Vec::with_capacity(ha * wa * (ca + cb));
    for (pa, pb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Tensor::new(vec![ha, wa, ca + cb], data)
}
