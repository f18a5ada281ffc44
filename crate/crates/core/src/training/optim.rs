//! Adadelta with decoupled-from-the-loss L2 weight decay.

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::model::{Model, ParamKind};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPS: f64 = 1e-6;

/// Running averages of squared gradients and squared updates, one pair per
/// parameter tensor in [`Model::params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState<T = f32> {
    pub rho: f64,
    pub eps: f64,
    pub sq_grad: Vec<Tensor<T>>,
    pub sq_update: Vec<Tensor<T>>,
}

impl<T: Scalar> AdadeltaState<T> {
    pub fn new(model: &Model<T>) -> Self {
        Self::with_constants(model, DEFAULT_RHO, DEFAULT_EPS)
    }

    pub fn with_constants(model: &Model<T>, rho: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor<T>> = model.params().iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
        AdadeltaState {
            rho,
            eps,
            sq_grad: zeros.clone(),
            sq_update: zeros,
        }
    }

    /// Checks that the accumulators line up with `model`.
    pub fn matches(&self, model: &Model<T>) -> bool {
        let params = model.params();
        params.len() == self.sq_grad.len()
            && params.len() == self.sq_update.len()
            && params
                .iter()
                .zip(self.sq_grad.iter().zip(&self.sq_update))
                .all(|((_, p), (g, u))| p.shape() == g.shape() && p.shape() == u.shape())
    }
}

/// One Adadelta step. `l2 · θ` is added to the gradient of every trainable
/// weight first; frozen parameters and their accumulators are left alone.
/// Every gradient is checked before anything is modified.
pub fn adadelta_update<T: Scalar>(
    model: &mut Model<T>,
    grads: &Gradients<T>,
    state: &mut AdadeltaState<T>,
    l2: f64,
) -> Result<()> {
    if !state.matches(model) {
        return Err(Error::Usage("optimizer state does not match the model parameters".into()));
    }
    let params = model.params_mut();
    let mut per_param = Vec::with_capacity(params.len());
    for (info, p) in &params {
        let g = grads
            .get(&info.id)
            .ok_or_else(|| Error::MissingParam(format!("{} (no gradient)", info.id)))?;
        if g.shape() != p.shape() {
            return Err(Error::ParamShape {
                id: info.id.clone(),
                stored: g.shape().to_vec(),
                expected: p.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::Numeric {
                context: format!("gradient of {}", info.id),
                detail: "non-finite value; step aborted".into(),
            });
        }
        per_param.push(g);
    }
    let rho = T::from_f64(state.rho);
    let one_minus = T::from_f64(1.0 - state.rho);
    let eps = T::from_f64(state.eps);
    let decay = T::from_f64(l2);
    for (i, ((info, p), g)) in params.into_iter().zip(per_param).enumerate() {
        if info.frozen {
            continue;
        }
        let weight = info.kind == ParamKind::Weight;
        let eg = state.sq_grad[i].data_mut();
        let ex = state.sq_update[i].data_mut();
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            let mut gj = g.data()[j];
            if weight {
                gj = gj + decay * *theta;
            }
            eg[j] = rho * eg[j] + one_minus * gj * gj;
            let delta = -((ex[j] + eps).sqrt() / (eg[j] + eps).sqrt()) * gj;
            ex[j] = rho * ex[j] + one_minus * delta * delta;
            *theta = *theta + delta;
        }
    }
    Ok(())
}
