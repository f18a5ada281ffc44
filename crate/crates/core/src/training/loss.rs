//! Class-weighted, void-masked cross-entropy and the full training objective.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Model, ModelVars, ParamKind};
use crate::tensor::{Scalar, Tensor};

fn default_l2() -> f64 {
    0.001
}

/// Loss settings shared by the training step and the gradient checker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// One positive weight per class; `None` means unit weights.
    #[serde(default)]
    pub class_weights: Option<Vec<f64>>,
    /// Label excluded from the loss.
    #[serde(default)]
    pub void_class: Option<u32>,
    /// Weight-decay coefficient applied to weights, never to biases.
    #[serde(default = "default_l2")]
    pub l2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            class_weights: None,
            void_class: None,
            l2: default_l2(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("l2 must be a non-negative number, got {}", self.l2)));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != classes {
                return Err(Error::Config(format!(
                    "{} class weights given for {classes} classes",
                    w.len()
                )));
            }
            // zero is allowed for classes absent from the training split
            if let Some((k, v)) = w.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("class weight {k} is {v}; weights must be positive")));
            }
        }
        Ok(())
    }

    /// Weights as a length-`classes` vector in `T`.
    pub fn weights<T: Scalar>(&self, classes: usize) -> Vec<T> {
        match &self.class_weights {
            Some(w) => w.iter().map(|&v| T::from_f64(v)).collect(),
            None => vec![T::one(); classes],
        }
    }
}

/// `w_k = median(freqs) / freqs_k`. Classes with zero frequency get weight 0.
pub fn median_frequency_weights(freqs: &[f64]) -> Result<Vec<f64>> {
    if freqs.is_empty() {
        return Err(Error::Usage("median frequency weights need at least one class".into()));
    }
    if let Some(f) = freqs.iter().find(|f| !(**f >= 0.0 && f.is_finite())) {
        return Err(Error::Usage(format!("class frequency {f} is not a non-negative number")));
    }
    let mut present: Vec<f64> = freqs.iter().copied().filter(|&f| f > 0.0).collect();
    if present.is_empty() {
        return Err(Error::Usage("every class frequency is zero".into()));
    }
    present.sort_by(f64::total_cmp);
    let n = present.len();
    let median = if n % 2 == 1 {
        present[n / 2]
    } else {
        (present[n / 2 - 1] + present[n / 2]) / 2.0
    };
    Ok(freqs
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            if f > 0.0 {
                median / f
            } else {
                log::warn!("class {k} never occurs in the training split; its weight is 0");
                0.0
            }
        })
        .collect())
}

/// Sum of weighted negative log-likelihoods and the number of non-void
/// pixels over a batch of probability maps.
pub fn cross_entropy_terms<T: Scalar>(
    probs: &[&Tensor<T>],
    targets: &[&[u32]],
    weights: &[f64],
    void: Option<u32>,
) -> Result<(f64, usize)> {
    if probs.len() != targets.len() {
        return Err(Error::dim("weighted_cross_entropy", "batch size", probs.len(), targets.len()));
    }
    let mut total = 0.0;
    let mut count = 0;
    for (p, t) in probs.iter().zip(targets) {
        let (h, w, k) = p.dims3("weighted_cross_entropy")?;
        if weights.len() != k {
            return Err(Error::dim("weighted_cross_entropy", "class weights", k, weights.len()));
        }
        if t.len() != h * w {
            return Err(Error::dim("weighted_cross_entropy", "target pixels", h * w, t.len()));
        }
        for (px, &label) in t.iter().enumerate() {
            if Some(label) == void {
                continue;
            }
            if label as usize >= k {
                return Err(Error::Usage(format!("target class {label} out of range for {k} classes")));
            }
            let prob = p.data()[px * k + label as usize].as_f64().max(crate::autodiff::LOG_CLAMP);
            total -= weights[label as usize] * prob.ln();
            count += 1;
        }
    }
    Ok((total, count))
}

/// Mean weighted negative log-likelihood over the non-void pixels of one
/// probability map. Zero when every pixel is void.
pub fn weighted_cross_entropy<T: Scalar>(probs: &Tensor<T>, target: &[u32], cfg: &LossConfig) -> Result<f64> {
    let k = probs.shape().last().copied().unwrap_or(0);
    let weights = cfg.weights::<f64>(k);
    let (total, count) = cross_entropy_terms(&[probs], &[target], &weights, cfg.void_class)?;
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// `l2/2 · Σθ²` over the trainable weights of `model`.
pub fn l2_penalty<T: Scalar>(model: &Model<T>, l2: f64) -> f64 {
    model
        .params()
        .iter()
        .filter(|(i, _)| i.kind == ParamKind::Weight && !i.frozen)
        .map(|(_, t)| t.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>())
        .sum::<f64>()
        * l2
        / 2.0
}

/// Batch objective evaluated without a tape: cross-entropy over the batch,
/// plus the L2 term when `with_l2` is set.
pub fn objective<T: Scalar>(
    model: &Model<T>,
    images: &[Tensor<T>],
    targets: &[&[u32]],
    cfg: &LossConfig,
    with_l2: bool,
) -> Result<f64> {
    let probs = images.iter().map(|x| model.forward(x)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor<T>> = probs.iter().collect();
    let weights = cfg.weights::<f64>(model.config().classes);
    let (total, count) = cross_entropy_terms(&refs, targets, &weights, cfg.void_class)?;
    let ce = if count == 0 { 0.0 } else { total / count as f64 };
    Ok(if with_l2 { ce + l2_penalty(model, cfg.l2) } else { ce })
}

/// A recorded batch objective ready for [`Tape::backward`].
pub struct RecordedObjective<T: Scalar> {
    pub tape: Tape<T>,
    pub vars: ModelVars,
    pub loss: Var,
    pub probs: Vec<Var>,
}

/// Records the forward pass of a batch on a fresh tape and marks the loss.
/// With `with_l2` the weight-decay term is part of the recorded objective;
/// the training step instead adds it inside the optimizer.
pub fn record_objective<T: Scalar>(
    model: &Model<T>,
    images: &[Tensor<T>],
    targets: &[&[u32]],
    cfg: &LossConfig,
    with_l2: bool,
) -> Result<RecordedObjective<T>> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let mut probs = Vec::with_capacity(images.len());
    for img in images {
        let x = tape.constant(img.clone());
        probs.push(model.forward_on_tape(&mut tape, &vars, x)?);
    }
    let weights = cfg.weights::<T>(model.config().classes);
    let mut loss = tape.weighted_cross_entropy(&probs, targets, &weights, cfg.void_class)?;
    if with_l2 && cfg.l2 > 0.0 {
        for (info, v) in vars.all() {
            if info.kind == ParamKind::Weight && !info.frozen {
                let sq = tape.sum_squares(*v);
                let term = tape.scale(sq, T::from_f64(cfg.l2 / 2.0));
                loss = tape.add(loss, term)?;
            }
        }
    }
    tape.set_loss(loss)?;
    Ok(RecordedObjective {
        tape,
        vars,
        loss,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn median_frequency_examples() {
        assert!(close(&median_frequency_weights(&[1.0 / 3.0; 3]).unwrap(), &[1.0; 3], 1e-12));
        assert!(close(&median_frequency_weights(&[0.5, 0.3, 0.2]).unwrap(), &[0.6, 1.0, 1.5], 1e-12));
        assert!(close(
            &median_frequency_weights(&[0.4, 0.3, 0.2, 0.1]).unwrap(),
            &[0.625, 0.25 / 0.3, 1.25, 2.5],
            1e-12
        ));
        assert!(median_frequency_weights(&[]).is_err());
        assert_eq!(median_frequency_weights(&[0.5, 0.0, 0.5]).unwrap(), vec![1.0, 0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn median_frequency_scale_invariant(freqs in prop::collection::vec(0.01f64..1.0, 1..8), c in 0.1f64..10.0) {
            let a = median_frequency_weights(&freqs).unwrap();
            let scaled: Vec<f64> = freqs.iter().map(|f| f * c).collect();
            let b = median_frequency_weights(&scaled).unwrap();
            prop_assert!(close(&a, &b, 1e-9));
        }
    }

    fn random_probs(h: usize, w: usize, k: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let logits = Tensor::from_fn(vec![h, w, k], |_| rng.random_range(-2.0..2.0));
        crate::tensor::softmax_channels(&logits).unwrap()
    }

    #[test]
    fn perfect_and_uniform() {
        let one_hot = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let cfg = LossConfig::default();
        assert!(weighted_cross_entropy(&one_hot, &[0, 1], &cfg).unwrap() <= 1e-10);
        let uniform = Tensor::full(vec![2, 2, 2], 0.5f64);
        let l = weighted_cross_entropy(&uniform, &[0, 1, 1, 0], &cfg).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_pixel_loop_with_void() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_probs(4, 4, 3, &mut rng);
        let mut t: Vec<u32> = (0..16).map(|_| rng.random_range(0..3)).collect();
        t[5] = 9;
        let cfg = LossConfig {
            class_weights: Some(vec![0.5, 2.0, 1.5]),
            void_class: Some(9),
            l2: 0.0,
        };
        let mut sum = 0.0;
        let mut n = 0.0;
        for r in 0..4 {
            for c in 0..4 {
                let label = t[r * 4 + c];
                if label == 9 {
                    continue;
                }
                sum += -cfg.class_weights.as_ref().unwrap()[label as usize] * p.at3(r, c, label as usize).ln();
                n += 1.0;
            }
        }
        let got = weighted_cross_entropy(&p, &t, &cfg).unwrap();
        assert!((got - sum / n).abs() <= 1e-6);
    }

    #[test]
    fn unit_weights_equal_plain_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_probs(5, 3, 4, &mut rng);
        let t: Vec<u32> = (0..15).map(|_| rng.random_range(0..4)).collect();
        let plain: f64 = t
            .iter()
            .enumerate()
            .map(|(i, &l)| -p.data()[i * 4 + l as usize].ln())
            .sum::<f64>()
            / 15.0;
        let got = weighted_cross_entropy(&p, &t, &LossConfig::default()).unwrap();
        assert!((got - plain).abs() <= 1e-7);
    }

    #[test]
    fn pixel_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = random_probs(1, 12, 3, &mut rng);
        let t: Vec<u32> = (0..12).map(|_| rng.random_range(0..3)).collect();
        let mut order: Vec<usize> = (0..12).collect();
        order.reverse();
        order.swap(2, 7);
        let pp = Tensor::from_fn(vec![1, 12, 3], |i| p.data()[order[i / 3] * 3 + i % 3]);
        let tp: Vec<u32> = order.iter().map(|&i| t[i]).collect();
        let cfg = LossConfig {
            class_weights: Some(vec![1.0, 3.0, 0.2]),
            ..LossConfig::default()
        };
        let a = weighted_cross_entropy(&p, &t, &cfg).unwrap();
        let b = weighted_cross_entropy(&pp, &tp, &cfg).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_target() {
        let p = Tensor::full(vec![1, 1, 2], 0.5f64);
        assert!(weighted_cross_entropy(&p, &[2], &LossConfig::default()).is_err());
    }

    #[test]
    fn recorded_objective_matches_pure() {
        let model: Model<f64> = Model::build(&crate::model::ModelConfig::tiny(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let imgs: Vec<Tensor<f64>> =
            (0..2).map(|_| Tensor::from_fn(vec![8, 8, 3], |_| rng.random_range(0.0..1.0))).collect();
        let t1: Vec<u32> = (0..64).map(|i| (i % 3 == 0) as u32).collect();
        let t2: Vec<u32> = (0..64).map(|i| if i < 5 { 7 } else { (i % 2) as u32 }).collect();
        let cfg = LossConfig {
            class_weights: Some(vec![0.7, 1.9]),
            void_class: Some(7),
            l2: 0.01,
        };
        for with_l2 in [false, true] {
            let rec = record_objective(&model, &imgs, &[&t1, &t2], &cfg, with_l2).unwrap();
            let pure = objective(&model, &imgs, &[&t1, &t2], &cfg, with_l2).unwrap();
            assert!((rec.tape.value(rec.loss).data()[0] - pure).abs() < 1e-12);
        }
    }
}
