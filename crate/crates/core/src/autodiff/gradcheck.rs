//! Finite-difference verification of tape gradients.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Gradients;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;
use crate::training::{objective, record_objective, LossConfig};

/// Coordinates compared per parameter tensor at most.
pub const MAX_COORDS: usize = 200;
/// Step of the central difference relative to `max(|θ_i|, 1)`.
pub const REL_STEP: f64 = 1e-3;
/// Smallest relative step tried when a probe crosses a ReLU or pooling kink.
pub const MIN_REL_STEP: f64 = 1e-7;

/// `|a − f| / max(|a|, |f|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn check_deterministic(evaluate: &mut impl FnMut(&Tensor<f64>) -> Result<f64>, params: &Tensor<f64>) -> Result<()> {
    let first = evaluate(params)?;
    let second = evaluate(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }
    Ok(())
}

/// Central difference `(f(θ + εe_i) − f(θ − εe_i)) / 2ε` for every coordinate.
pub fn finite_difference_grad(
    mut evaluate: impl FnMut(&Tensor<f64>) -> Result<f64>,
    params: &Tensor<f64>,
    epsilon: f64,
) -> Result<Tensor<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::Usage(format!("epsilon must be positive, got {epsilon}")));
    }
    check_deterministic(&mut evaluate, params)?;
    let mut probe = params.clone();
    let mut grad = Tensor::zeros(params.shape().to_vec());
    for i in 0..params.len() {
        let theta = params.data()[i];
        probe.data_mut()[i] = theta + epsilon;
        let plus = evaluate(&probe)?;
        probe.data_mut()[i] = theta - epsilon;
        let minus = evaluate(&probe)?;
        probe.data_mut()[i] = theta;
        grad.data_mut()[i] = (plus - minus) / (2.0 * epsilon);
    }
    Ok(grad)
}

/// Comparison summary of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientRow {
    pub id: String,
    pub coords: usize,
    pub max_rel: f64,
    pub mean_rel: f64,
    pub max_abs_grad: f64,
    /// Coordinates whose step was shrunk because `θ ± ε` crossed a kink.
    pub shrunk: usize,
    /// Coordinates sitting on a kink at every step size, left out of the comparison.
    pub skipped: usize,
    pub frozen: bool,
    pub passed: bool,
}

/// Side of every kink for a parameter setting; see [`Model::kink_pattern`].
pub type KinkProbe<'a> = &'a mut dyn FnMut(&Model<f64>) -> Result<Vec<u32>>;

/// The single worst coordinate of a check.
#[derive(Clone, Debug, PartialEq)]
pub struct WorstCoordinate {
    pub id: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub tolerance: f64,
    pub rows: Vec<GradientRow>,
    pub worst: Option<WorstCoordinate>,
    pub passed: bool,
}

impl GradientReport {
    pub fn max_rel(&self) -> f64 {
        self.rows.iter().filter(|r| !r.frozen).map(|r| r.max_rel).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> impl Iterator<Item = &GradientRow> {
        self.rows.iter().filter(|r| !r.passed)
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.id.len()).max().unwrap_or(9).max(9);
        let mut out = format!(
            "{:<width$}  {:>6}  {:>10}  {:>10}  {:>10}  {:>6}  status\n",
            "parameter", "coords", "max rel", "mean rel", "max |g|", "kinks"
        );
        for r in &self.rows {
            let status = match (r.frozen, r.passed) {
                (true, _) => "frozen",
                (false, true) => "ok",
                (false, false) => "FAIL",
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>10.3e}  {:>10.3e}  {:>10.3e}  {:>6}  {status}",
                r.id,
                r.coords,
                r.max_rel,
                r.mean_rel,
                r.max_abs_grad,
                r.shrunk + r.skipped
            );
        }
        if let Some(w) = &self.worst {
            let _ = writeln!(
                out,
                "worst: {}[{}] analytic {:.6e} numeric {:.6e} rel {:.3e}",
                w.id, w.index, w.analytic, w.numeric, w.rel
            );
        }
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{verdict}: max relative error {:.3e} (tolerance {:.1e})", self.max_rel(), self.tolerance);
        out
    }
}

/// Compares `analytic` against central differences of `evaluate` for every
/// parameter of `model`, at most [`MAX_COORDS`] coordinates per tensor
/// drawn with a fixed seed. Frozen parameters are reported, not compared;
/// their analytic gradient must be exactly zero.
///
/// With `kinks`, a coordinate whose probes `θ ± ε` land on a different side
/// of a ReLU or pooling kink than `θ` is retried with ε/10 down to
/// [`MIN_REL_STEP`]; a central difference across a kink measures the jump,
/// not the derivative. Coordinates still crossing at the smallest step are
/// skipped and counted.
pub fn check_gradients(
    model: &Model<f64>,
    analytic: &Gradients<f64>,
    mut evaluate: impl FnMut(&Model<f64>) -> Result<f64>,
    mut kinks: Option<KinkProbe<'_>>,
    tolerance: f64,
) -> Result<GradientReport> {
    let mut probe = model.clone();
    let base_pattern = match kinks.as_mut() {
        Some(k) => Some(k(&probe)?),
        None => None,
    };
    let base = evaluate(&probe)?;
    let again = evaluate(&probe)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Determinism {
            first: base,
            second: again,
        });
    }
    let infos: Vec<_> = model.params().into_iter().map(|(i, t)| (i, t.len())).collect();
    let mut rows = Vec::with_capacity(infos.len());
    let mut worst: Option<WorstCoordinate> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    for (info, len) in infos {
        let g = analytic
            .get(&info.id)
            .ok_or_else(|| Error::MissingParam(format!("{} (no analytic gradient)", info.id)))?;
        let max_abs_grad = g.max_abs();
        if info.frozen {
            rows.push(GradientRow {
                id: info.id,
                coords: 0,
                max_rel: 0.0,
                mean_rel: 0.0,
                max_abs_grad,
                shrunk: 0,
                skipped: 0,
                frozen: true,
                passed: max_abs_grad == 0.0,
            });
            continue;
        }
        let coords: Vec<usize> = if len <= MAX_COORDS {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, MAX_COORDS).into_vec();
            c.sort_unstable();
            c
        };
        let (mut max_rel, mut sum_rel) = (0.0f64, 0.0);
        let (mut shrunk, mut skipped) = (0, 0);
        for &i in &coords {
            let theta = probe.param(&info.id).expect("id from params").data()[i];
            let scale = theta.abs().max(1.0);
            let mut rel_step = REL_STEP;
            let numeric = loop {
                let eps = rel_step * scale;
                let mut side = |probe: &mut Model<f64>, value: f64| -> Result<(f64, bool)> {
                    probe.param_mut(&info.id).expect("id").data_mut()[i] = value;
                    let f = evaluate(probe)?;
                    let same = match (kinks.as_mut(), &base_pattern) {
                        (Some(k), Some(base)) => k(probe)? == *base,
                        _ => true,
                    };
                    Ok((f, same))
                };
                let (plus, same_plus) = side(&mut probe, theta + eps)?;
                let (minus, same_minus) = side(&mut probe, theta - eps)?;
                probe.param_mut(&info.id).expect("id").data_mut()[i] = theta;
                if same_plus && same_minus {
                    break Some((plus - minus) / (2.0 * eps));
                }
                if rel_step / 10.0 < MIN_REL_STEP * 0.999 {
                    break None;
                }
                rel_step /= 10.0;
            };
            if rel_step < REL_STEP {
                shrunk += 1;
            }
            let Some(numeric) = numeric else {
                skipped += 1;
                shrunk -= 1;
                continue;
            };
            let a = g.data()[i];
            let rel = relative_error(a, numeric);
            sum_rel += rel;
            max_rel = max_rel.max(rel);
            if worst.as_ref().is_none_or(|w| rel > w.rel) {
                worst = Some(WorstCoordinate {
                    id: info.id.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel,
                });
            }
        }
        let compared = coords.len() - skipped;
        rows.push(GradientRow {
            id: info.id,
            coords: coords.len(),
            max_rel,
            mean_rel: if compared == 0 { 0.0 } else { sum_rel / compared as f64 },
            max_abs_grad,
            shrunk,
            skipped,
            frozen: false,
            passed: max_rel < tolerance,
        });
    }
    let passed = rows.iter().all(|r| r.passed);
    Ok(GradientReport {
        tolerance,
        rows,
        worst,
        passed,
    })
}

/// A labeled batch of `n` random images matching `config`.
pub fn random_batch(config: &ModelConfig, n: usize, seed: u64) -> (Vec<Tensor<f64>>, Vec<Vec<u32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (config.input.height, config.input.width, config.input.channels);
    let k = config.classes as u32;
    (0..n)
        .map(|_| {
            let img = Tensor::from_fn(vec![h, w, c], |_| rng.random_range(0.0..1.0));
            let labels = (0..h * w).map(|_| rng.random_range(0..k)).collect();
            (img, labels)
        })
        .unzip()
}

/// Full check of the training objective (cross-entropy plus L2) of `model`
/// on one batch: tape gradients against central differences.
pub fn gradient_check(
    model: &Model<f64>,
    images: &[Tensor<f64>],
    targets: &[Vec<u32>],
    loss: &LossConfig,
    tolerance: f64,
) -> Result<GradientReport> {
    let refs: Vec<&[u32]> = targets.iter().map(Vec::as_slice).collect();
    let rec = record_objective(model, images, &refs, loss, true)?;
    let analytic = rec.tape.backward()?;
    let mut kinks = |m: &Model<f64>| -> Result<Vec<u32>> {
        let mut all = Vec::new();
        for img in images {
            all.extend(m.kink_pattern(img)?);
        }
        Ok(all)
    };
    check_gradients(
        model,
        &analytic,
        |m| objective(m, images, &refs, loss, true),
        Some(&mut kinks),
        tolerance,
    )
}
