use rand::Rng;

use crate::error::{Error, Result};
use crate::model::init::{init_glorot, init_orthonormal};
use crate::tensor::ops::sigmoid;
use crate::tensor::{Scalar, Tensor};

/// Parameters of one gated recurrent unit.
///
/// Input-to-hidden matrices are `in_dim × units`, hidden-to-hidden matrices
/// `units × units`; a gate pre-activation is `b + xᵀW + hᵀR`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<T = f32> {
    pub w_update: Tensor<T>,
    pub w_reset: Tensor<T>,
    pub w_cand: Tensor<T>,
    pub r_update: Tensor<T>,
    pub r_reset: Tensor<T>,
    pub r_cand: Tensor<T>,
    pub b_update: Tensor<T>,
    pub b_reset: Tensor<T>,
    pub b_cand: Tensor<T>,
}

/// Names of the nine GRU tensors, in the order [`GruParams::tensors`] yields them.
pub const GRU_PARAM_NAMES: [&str; 9] = [
    "w_update", "w_reset", "w_cand", "r_update", "r_reset", "r_cand", "b_update", "b_reset",
    "b_cand",
];

impl<T: Scalar> GruParams<T> {
    pub fn zeros(in_dim: usize, units: usize) -> Self {
        let w = || Tensor::zeros(vec![in_dim, units]);
        let r = || Tensor::zeros(vec![units, units]);
        let b = || Tensor::zeros(vec![units]);
        GruParams {
            w_update: w(),
            w_reset: w(),
            w_cand: w(),
            r_update: r(),
            r_reset: r(),
            r_cand: r(),
            b_update: b(),
            b_reset: b(),
            b_cand: b(),
        }
    }

    /// Glorot input weights, orthonormal recurrent weights, zero biases.
    pub fn init(in_dim: usize, units: usize, rng: &mut impl Rng) -> Self {
        let mut w = || init_glorot(in_dim, units, &[in_dim, units], rng);
        let (w_update, w_reset, w_cand) = (w(), w(), w());
        let mut r = || init_orthonormal(units, units, rng);
        let (r_update, r_reset, r_cand) = (r(), r(), r());
        let b = || Tensor::zeros(vec![units]);
        GruParams {
            w_update,
            w_reset,
            w_cand,
            r_update,
            r_reset,
            r_cand,
            b_update: b(),
            b_reset: b(),
            b_cand: b(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_update.shape()[0]
    }

    pub fn units(&self) -> usize {
        self.w_update.shape()[1]
    }

    pub fn tensors(&self) -> [&Tensor<T>; 9] {
        [
            &self.w_update,
            &self.w_reset,
            &self.w_cand,
            &self.r_update,
            &self.r_reset,
            &self.r_cand,
            &self.b_update,
            &self.b_reset,
            &self.b_cand,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 9] {
        [
            &mut self.w_update,
            &mut self.w_reset,
            &mut self.w_cand,
            &mut self.r_update,
            &mut self.r_reset,
            &mut self.r_cand,
            &mut self.b_update,
            &mut self.b_reset,
            &mut self.b_cand,
        ]
    }

    pub fn view(&self) -> GruView<'_, T> {
        let t = self.tensors();
        GruView::new(t.map(|x| x.data()), self.in_dim(), self.units())
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let (d, u) = (self.in_dim(), self.units());
        for (name, t) in GRU_PARAM_NAMES.iter().zip(self.tensors()) {
            let want: &[usize] = match name.as_bytes()[0] {
                b'w' => &[d, u],
                b'r' => &[u, u],
                _ => &[u],
            };
            if t.shape() != want {
                return Err(Error::Shape {
                    op: "gru",
                    shape: t.shape().to_vec(),
                    reason: format!("{name} should be {want:?}"),
                });
            }
        }
        Ok(())
    }
}

/// Borrowed flat views of the nine GRU tensors, shared by the inference path
/// and the differentiable path so both run the exact same arithmetic.
#[derive(Clone, Copy)]
pub struct GruView<'a, T> {
    pub w: [&'a [T]; 3],
    pub r: [&'a [T]; 3],
    pub b: [&'a [T]; 3],
    pub in_dim: usize,
    pub units: usize,
}

impl<'a, T: Scalar> GruView<'a, T> {
    pub fn new(t: [&'a [T]; 9], in_dim: usize, units: usize) -> Self {
        GruView {
            w: [t[0], t[1], t[2]],
            r: [t[3], t[4], t[5]],
            b: [t[6], t[7], t[8]],
            in_dim,
            units,
        }
    }

    /// One recurrence step. `gates` receives `[u; r; c]` (3·units values)
    /// and `next` the new state.
    pub fn step(&self, prev: &[T], input: &[T], gates: &mut [T], next: &mut [T]) {
        let u_n = self.units;
        let (upd, rest) = gates.split_at_mut(u_n);
        let (rst, cand) = rest.split_at_mut(u_n);
        for (k, (gu, gr)) in upd.iter_mut().zip(rst.iter_mut()).enumerate() {
            let mut au = self.b[0][k];
            let mut ar = self.b[1][k];
            for (d, &x) in input.iter().enumerate() {
                au = au + x * self.w[0][d * u_n + k];
                ar = ar + x * self.w[1][d * u_n + k];
            }
            for (j, &h) in prev.iter().enumerate() {
                au = au + h * self.r[0][j * u_n + k];
                ar = ar + h * self.r[1][j * u_n + k];
            }
            *gu = sigmoid(au);
            *gr = sigmoid(ar);
        }
        for k in 0..u_n {
            let mut ac = self.b[2][k];
            for (d, &x) in input.iter().enumerate() {
                ac = ac + x * self.w[2][d * u_n + k];
            }
            for (j, &h) in prev.iter().enumerate() {
                ac = ac + (rst[j] * h) * self.r[2][j * u_n + k];
            }
            cand[k] = ac.tanh();
        }
        for k in 0..u_n {
            next[k] = (T::one() - upd[k]) * prev[k] + upd[k] * cand[k];
        }
    }

    /// Backward through [`GruView::step`]. Accumulates parameter gradients
    /// into `grads` (nine flat buffers in [`GRU_PARAM_NAMES`] order), and
    /// input/previous-state gradients into `d_input` / `d_prev`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_backward(
        &self,
        prev: &[T],
        input: &[T],
        gates: &[T],
        d_next: &[T],
        grads: &mut [Vec<T>; 9],
        d_input: Option<&mut [T]>,
        d_prev: &mut [T],
        scratch: &mut [T],
    ) {
        let u_n = self.units;
        let upd = &gates[..u_n];
        let rst = &gates[u_n..2 * u_n];
        let cand = &gates[2 * u_n..];
        // scratch: [d_au | d_ar | d_ac | d_rh]
        let (d_au, rest) = scratch.split_at_mut(u_n);
        let (d_ar, rest) = rest.split_at_mut(u_n);
        let (d_ac, d_rh) = rest.split_at_mut(u_n);
        for k in 0..u_n {
            let g = d_next[k];
            d_prev[k] = d_prev[k] + g * (T::one() - upd[k]);
            d_au[k] = g * (cand[k] - prev[k]) * upd[k] * (T::one() - upd[k]);
            d_ac[k] = g * upd[k] * (T::one() - cand[k] * cand[k]);
        }
        // candidate path through r ⊙ h
        for j in 0..u_n {
            let mut s = T::zero();
            for k in 0..u_n {
                s = s + self.r[2][j * u_n + k] * d_ac[k];
            }
            d_rh[j] = s;
        }
        for j in 0..u_n {
            d_prev[j] = d_prev[j] + d_rh[j] * rst[j];
            let dr = d_rh[j] * prev[j];
            d_ar[j] = dr * rst[j] * (T::one() - rst[j]);
        }
        let pre = [&*d_au, &*d_ar, &*d_ac];
        for (gate, dpre) in pre.iter().enumerate() {
            let gw = &mut grads[gate];
            for (d, &x) in input.iter().enumerate() {
                let row = &mut gw[d * u_n..(d + 1) * u_n];
                for (gv, &dp) in row.iter_mut().zip(dpre.iter()) {
                    *gv = *gv + x * dp;
                }
            }
            let gb = &mut grads[6 + gate];
            for (gv, &dp) in gb.iter_mut().zip(dpre.iter()) {
                *gv = *gv + dp;
            }
        }
        for j in 0..u_n {
            let rh = rst[j] * prev[j];
            for k in 0..u_n {
                grads[3][j * u_n + k] = grads[3][j * u_n + k] + prev[j] * d_au[k];
                grads[4][j * u_n + k] = grads[4][j * u_n + k] + prev[j] * d_ar[k];
                grads[5][j * u_n + k] = grads[5][j * u_n + k] + rh * d_ac[k];
            }
        }
        for j in 0..u_n {
            let mut s = T::zero();
            for k in 0..u_n {
                s = s + self.r[0][j * u_n + k] * d_au[k] + self.r[1][j * u_n + k] * d_ar[k];
            }
            d_prev[j] = d_prev[j] + s;
        }
        if let Some(d_input) = d_input {
            for (d, dx) in d_input.iter_mut().enumerate() {
                let mut s = T::zero();
                for k in 0..u_n {
                    s = s
                        + self.w[0][d * u_n + k] * d_au[k]
                        + self.w[1][d * u_n + k] * d_ar[k]
                        + self.w[2][d * u_n + k] * d_ac[k];
                }
                *dx = *dx + s;
            }
        }
    }
}

/// One GRU step. The emitted projection is the new hidden state, so the
/// returned vector is both the output and the state carried forward.
pub fn gru_step<T: Scalar>(params: &GruParams<T>, prev_state: &[T], input: &[T]) -> Result<Vec<T>> {
    params.validate()?;
    if prev_state.len() != params.units() {
        return Err(Error::dim("gru_step", "state length", params.units(), prev_state.len()));
    }
    if input.len() != params.in_dim() {
        return Err(Error::dim("gru_step", "input length", params.in_dim(), input.len()));
    }
    let u = params.units();
    let mut gates = vec![T::zero(); 3 * u];
    let mut next = vec![T::zero(); u];
    params.view().step(prev_state, input, &mut gates, &mut next);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_everything_gives_zero_state() {
        let p: GruParams<f64> = GruParams::zeros(3, 4);
        let h = gru_step(&p, &[0.0; 4], &[0.0; 3]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
    }

    #[test]
    fn closed_update_gate_carries_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p: GruParams<f64> = GruParams::init(3, 4, &mut rng);
        p.b_update = Tensor::full(vec![4], -1e3);
        let prev = [0.3, -0.7, 0.1, 0.9];
        let h = gru_step(&p, &prev, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(h, prev.to_vec());
    }

    #[test]
    fn dimension_errors() {
        let p: GruParams<f32> = GruParams::zeros(3, 2);
        assert!(matches!(
            gru_step(&p, &[0.0; 3], &[0.0; 3]),
            Err(Error::Dimension { axis: "state length", .. })
        ));
        assert!(matches!(
            gru_step(&p, &[0.0; 2], &[0.0; 4]),
            Err(Error::Dimension { axis: "input length", .. })
        ));
    }

    /// Textbook GRU with nested `Vec` matrices, one scalar at a time.
    fn oracle(p: &GruParams<f64>, h: &[f64], x: &[f64]) -> Vec<f64> {
        let (d, u) = (p.in_dim(), p.units());
        let m = |t: &Tensor<f64>, rows: usize| -> Vec<Vec<f64>> {
            (0..rows).map(|i| t.data()[i * u..(i + 1) * u].to_vec()).collect()
        };
        let (wu, wr, wc) = (m(&p.w_update, d), m(&p.w_reset, d), m(&p.w_cand, d));
        let (ru, rr, rc) = (m(&p.r_update, u), m(&p.r_reset, u), m(&p.r_cand, u));
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut upd = vec![0.0; u];
        let mut rst = vec![0.0; u];
        for k in 0..u {
            let mut a = p.b_update.data()[k];
            let mut b = p.b_reset.data()[k];
            for i in 0..d {
                a += wu[i][k] * x[i];
                b += wr[i][k] * x[i];
            }
            for j in 0..u {
                a += ru[j][k] * h[j];
                b += rr[j][k] * h[j];
            }
            upd[k] = sig(a);
            rst[k] = sig(b);
        }
        let mut out = vec![0.0; u];
        for k in 0..u {
            let mut a = p.b_cand.data()[k];
            for i in 0..d {
                a += wc[i][k] * x[i];
            }
            for j in 0..u {
                a += rc[j][k] * rst[j] * h[j];
            }
            out[k] = (1.0 - upd[k]) * h[k] + upd[k] * a.tanh();
        }
        out
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut p: GruParams<f64> = GruParams::init(5, 3, &mut rng);
            for t in p.tensors_mut() {
                *t = Tensor::from_fn(t.shape().to_vec(), |_| rng.random_range(-1.0..1.0));
            }
            let h: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = gru_step(&p, &h, &x).unwrap();
            for (a, b) in got.iter().zip(oracle(&p, &h, &x)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p: GruParams<f64> = GruParams::init(3, 2, &mut rng);
        for t in p.tensors_mut() {
            *t = Tensor::from_fn(t.shape().to_vec(), |_| rng.random_range(-1.0..1.0));
        }
        let h = vec![0.4, -0.3];
        let x = vec![0.2, 0.9, -0.5];
        let dn = vec![0.7, -1.1];
        let loss = |p: &GruParams<f64>, h: &[f64], x: &[f64]| -> f64 {
            gru_step(p, h, x).unwrap().iter().zip(&dn).map(|(a, b)| a * b).sum()
        };
        let mut gates = vec![0.0; 6];
        let mut next = vec![0.0; 2];
        p.view().step(&h, &x, &mut gates, &mut next);
        let mut grads: [Vec<f64>; 9] = p.tensors().map(|t| vec![0.0; t.len()]);
        let mut dx = vec![0.0; 3];
        let mut dh = vec![0.0; 2];
        let mut scratch = vec![0.0; 8];
        p.view()
            .step_backward(&h, &x, &gates, &dn, &mut grads, Some(&mut dx), &mut dh, &mut scratch);
        let eps = 1e-6;
        for which in 0..9 {
            for i in 0..grads[which].len() {
                let mut pp = p.clone();
                pp.tensors_mut()[which].data_mut()[i] += eps;
                let mut pm = p.clone();
                pm.tensors_mut()[which].data_mut()[i] -= eps;
                let fd = (loss(&pp, &h, &x) - loss(&pm, &h, &x)) / (2.0 * eps);
                assert!((fd - grads[which][i]).abs() < 1e-8, "{} {i}", GRU_PARAM_NAMES[which]);
            }
        }
        for i in 0..3 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (loss(&p, &h, &xp) - loss(&p, &h, &xm)) / (2.0 * eps);
            assert!((fd - dx[i]).abs() < 1e-8);
        }
        for i in 0..2 {
            let (mut hp, mut hm) = (h.clone(), h.clone());
            hp[i] += eps;
            hm[i] -= eps;
            let fd = (loss(&p, &hp, &x) - loss(&p, &hm, &x)) / (2.0 * eps);
            assert!((fd - dh[i]).abs() < 1e-8);
        }
    }
}
