use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layers::{permute_patches, check_divisible, Direction, GruView, SweepMode};
use crate::tensor::{
    concat_channels, conv2d, conv2d_adjoint, conv2d_bias_grad, conv2d_kernel_grad, max_pool2x2,
    max_pool2x2_backward, softmax_channels, transposed_conv2d, Activation, ConvSpec, Scalar, Tensor,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Minimum work (multiply-adds per step) before a sweep step fans out over
/// threads. Results do not depend on it.
const PARALLEL_STEP_WORK: usize = 1 << 14;

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Scale(Var, T),
    Sum(Var),
    SumSquares(Var),
    Act(Var, Activation),
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        spec: ConvSpec,
    },
    TransposedConv2d {
        x: Var,
        k: Var,
        b: Var,
        spec: ConvSpec,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat(Var, Var),
    SplitPatches {
        x: Var,
        ph: usize,
        pw: usize,
        origin: [usize; 3],
    },
    /// One time step of a sweep over every sequence at once. The value is
    /// `n_seq × units`.
    SweepStep {
        grid: Var,
        prev: Option<Var>,
        params: [Var; 9],
        dir: Direction,
        t: usize,
        gates: Vec<T>,
    },
    /// Scatters the step states of one sweep into an `I×J×U` map.
    Assemble {
        steps: Vec<Var>,
        dir: Direction,
    },
    Softmax(Var),
    CrossEntropy {
        probs: Vec<Var>,
        targets: Vec<Vec<u32>>,
        weights: Vec<T>,
        void: Option<u32>,
        count: usize,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::SumSquares(_) => "sum_squares",
            Op::Act(..) => "activation",
            Op::Conv2d { .. } => "conv2d",
            Op::TransposedConv2d { .. } => "transposed_conv2d",
            Op::MaxPool { .. } => "max_pool2x2",
            Op::Concat(..) => "concat_channels",
            Op::SplitPatches { .. } => "split_patches",
            Op::SweepStep { .. } => "sweep_step",
            Op::Assemble { .. } => "assemble_sweep",
            Op::Softmax(_) => "softmax_channels",
            Op::CrossEntropy { .. } => "weighted_cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Concat(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Sum(a) | Op::SumSquares(a) | Op::Act(a, _) | Op::Softmax(a) => vec![*a],
            Op::Conv2d { x, k, b, .. } | Op::TransposedConv2d { x, k, b, .. } => vec![*x, *k, *b],
            Op::MaxPool { x, .. } | Op::SplitPatches { x, .. } => vec![*x],
            Op::SweepStep { grid, prev, params, .. } => {
                let mut v = vec![*grid];
                v.extend(prev.iter().copied());
                v.extend_from_slice(params);
                v
            }
            Op::Assemble { steps, .. } => steps.clone(),
            Op::CrossEntropy { probs, .. } => probs.clone(),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of the loss with respect to every named parameter of a tape,
/// in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Self {
        Gradients { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn into_entries(self) -> Vec<(String, Tensor<T>)> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reverse-mode recording of tensor operations.
///
/// Every operation appends one node whose inputs are earlier nodes, so the
/// node list is a topological order. Sweeps record one node per time step.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    loss: Option<Var>,
    sweep_mode: SweepMode,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            loss: None,
            sweep_mode: SweepMode::Parallel,
        }
    }

    pub fn with_sweep_mode(mut self, mode: SweepMode) -> Self {
        self.sweep_mode = mode;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Named parameter. Frozen parameters are recorded but always report a
    /// zero gradient.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push((name.into(), v));
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape {
                op: "add",
                shape: vb.shape().to_vec(),
                reason: format!("expected {:?}", va.shape()),
            });
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &v| acc + v * v);
        self.push(Tensor::scalar(s), Op::SumSquares(a))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let out = crate::tensor::activation(self.value(a), kind);
        self.push(out, Op::Act(a, kind))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        let out = conv2d(self.value(x), &spec, self.value(k), self.value(b))?;
        Ok(self.push(out, Op::Conv2d { x, k, b, spec }))
    }

    pub fn transposed_conv2d(&mut self, x: Var, k: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        let out = transposed_conv2d(self.value(x), &spec, self.value(k), self.value(b))?;
        Ok(self.push(out, Op::TransposedConv2d { x, k, b, spec }))
    }

    pub fn max_pool2x2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = max_pool2x2(self.value(x))?;
        Ok(self.push(out, Op::MaxPool { x, argmax }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    pub fn split_patches(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var> {
        let grid = crate::layers::split_patches(self.value(x), ph, pw)?;
        let origin = grid.origin_shape();
        Ok(self.push(grid.into_vectors(), Op::SplitPatches { x, ph, pw, origin }))
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let out = softmax_channels(self.value(x))?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Directional GRU sweep over an `I×J×D` grid. `gru` holds the nine
    /// parameter vars in [`crate::layers::GRU_PARAM_NAMES`] order.
    pub fn directional_sweep(&mut self, grid: Var, gru: [Var; 9], dir: Direction) -> Result<Var> {
        let (rows, cols, d) = self.value(grid).dims3("directional_sweep")?;
        let in_dim = self.value(gru[0]).shape()[0];
        let units = self.value(gru[0]).shape()[1];
        if d != in_dim {
            return Err(Error::dim("directional_sweep", "input vector length", in_dim, d));
        }
        let (n_seq, len) = dir.layout(rows, cols);
        let mut steps = Vec::with_capacity(len);
        let mut prev: Option<Var> = None;
        for t in 0..len {
            let mut states = vec![T::zero(); n_seq * units];
            let mut gates = vec![T::zero(); n_seq * 3 * units];
            {
                let grid_v = self.value(grid);
                let view = GruView::new(gru.map(|v| self.value(v).data()), in_dim, units);
                let zeros = vec![T::zero(); units];
                let prev_v = prev.map(|p| self.value(p).data());
                let step = |seq: usize, next: &mut [T], g: &mut [T]| {
                    let (i, j) = dir.position(rows, cols, seq, t);
                    let h = match prev_v {
                        Some(p) => &p[seq * units..(seq + 1) * units],
                        None => &zeros[..],
                    };
                    view.step(h, grid_v.pixel(i, j), g, next);
                };
                let work = n_seq * units * (in_dim + units);
                if self.sweep_mode == SweepMode::Parallel && n_seq > 1 && work >= PARALLEL_STEP_WORK {
                    states
                        .par_chunks_mut(units)
                        .zip(gates.par_chunks_mut(3 * units))
                        .enumerate()
                        .for_each(|(seq, (n, g))| step(seq, n, g));
                } else {
                    for (seq, (n, g)) in states
                        .chunks_mut(units)
                        .zip(gates.chunks_mut(3 * units))
                        .enumerate()
                    {
                        step(seq, n, g);
                    }
                }
            }
            let value = Tensor::new(vec![n_seq, units], states)?;
            let node = self.push(
                value,
                Op::SweepStep {
                    grid,
                    prev,
                    params: gru,
                    dir,
                    t,
                    gates,
                },
            );
            steps.push(node);
            prev = Some(node);
        }
        let mut out = Tensor::zeros(vec![rows, cols, units]);
        for (t, s) in steps.iter().enumerate() {
            let sv = self.value(*s).data();
            for seq in 0..n_seq {
                let (i, j) = dir.position(rows, cols, seq, t);
                let at = (i * cols + j) * units;
                out.data_mut()[at..at + units].copy_from_slice(&sv[seq * units..(seq + 1) * units]);
            }
        }
        Ok(self.push(out, Op::Assemble { steps, dir }))
    }

    /// Class-weighted mean negative log-likelihood over every non-void pixel
    /// of every `(probs, target)` pair. Targets are flat `H·W` label maps.
    pub fn weighted_cross_entropy(
        &mut self,
        probs: &[Var],
        targets: &[&[u32]],
        weights: &[T],
        void: Option<u32>,
    ) -> Result<Var> {
        if probs.len() != targets.len() {
            return Err(Error::dim("weighted_cross_entropy", "batch size", probs.len(), targets.len()));
        }
        let mut total = T::zero();
        let mut count = 0usize;
        let clamp = T::from_f64(LOG_CLAMP);
        for (&p, &tgt) in probs.iter().zip(targets) {
            let (h, w, k) = self.value(p).dims3("weighted_cross_entropy")?;
            if weights.len() != k {
                return Err(Error::dim("weighted_cross_entropy", "class weights", k, weights.len()));
            }
            if tgt.len() != h * w {
                return Err(Error::dim("weighted_cross_entropy", "target pixels", h * w, tgt.len()));
            }
            let pv = self.value(p).data();
            for (px, &t) in tgt.iter().enumerate() {
                if Some(t) == void {
                    continue;
                }
                if t as usize >= k {
                    return Err(Error::Usage(format!(
                        "target class {t} out of range for {k} classes"
                    )));
                }
                let prob = pv[px * k + t as usize].max(clamp);
                total = total - weights[t as usize] * prob.ln();
                count += 1;
            }
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::from_f64(count as f64)
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs: probs.to_vec(),
                targets: targets.iter().map(|t| t.to_vec()).collect(),
                weights: weights.to_vec(),
                void,
                count,
            },
        ))
    }

    /// Marks the scalar node whose gradient [`Tape::backward`] computes.
    pub fn set_loss(&mut self, v: Var) -> Result<()> {
        if self.value(v).len() != 1 {
            return Err(Error::Usage(format!(
                "loss root must be a scalar, node {} has shape {:?}",
                v.0,
                self.value(v).shape()
            )));
        }
        self.loss = Some(v);
        Ok(())
    }

    pub fn loss(&self) -> Option<Var> {
        self.loss
    }

    /// Gradients of the loss root for every registered parameter. Frozen or
    /// unreachable parameters get zeros.
    pub fn backward(&self) -> Result<Gradients<T>> {
        let grads = self.backward_all()?;
        let entries = self
            .params
            .iter()
            .map(|(name, v)| {
                let g = if self.nodes[v.0].needs_grad {
                    grads[v.0].clone()
                } else {
                    None
                };
                let g = g.unwrap_or_else(|| Tensor::zeros(self.value(*v).shape().to_vec()));
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients { entries })
    }

    fn backward_all(&self) -> Result<Vec<Option<Tensor<T>>>> {
        let root = self
            .loss
            .ok_or_else(|| Error::Usage("backward called before a loss root was marked".into()))?;
        let root_val = self.value(root).data()[0];
        if !root_val.is_finite() {
            return Err(Error::Numeric {
                context: format!("node {} ({})", root.0, self.nodes[root.0].op.name()),
                detail: format!("loss root is {root_val}"),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !node.value.is_finite() || !g.is_finite() {
                return Err(Error::Numeric {
                    context: format!("node {idx} ({})", node.op.name()),
                    detail: "non-finite value or gradient".into(),
                });
            }
            self.backward_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, contrib: Tensor<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Mutable gradient buffer of `v`, zero-initialized on first use.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> &'g mut Tensor<T> {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape().to_vec()))
    }

    fn backward_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| v * *c)),
            Op::Sum(a) => {
                let s = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape().to_vec(), s));
            }
            Op::SumSquares(a) => {
                let s = g.data()[0];
                let two = T::from_f64(2.0);
                self.accumulate(grads, *a, self.value(*a).map(|v| two * v * s));
            }
            Op::Act(a, kind) => {
                let mut d = g.clone();
                for (dv, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                    *dv = *dv * kind.derivative_from_output(y);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Conv2d { x, k, b, spec } => {
                let xv = self.value(*x);
                if self.needs(*x) {
                    let (h, w, _) = xv.dims3("conv2d")?;
                    let dx = conv2d_adjoint(g, spec, self.value(*k), h, w)?;
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*k) {
                    self.accumulate(grads, *k, conv2d_kernel_grad(xv, g, spec)?);
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, conv2d_bias_grad(g)?);
                }
            }
            Op::TransposedConv2d { x, k, b, spec } => {
                let direct = spec.adjoint();
                if self.needs(*x) {
                    let zero = Tensor::zeros(vec![direct.out_channels]);
                    self.accumulate(grads, *x, conv2d(g, &direct, self.value(*k), &zero)?);
                }
                if self.needs(*k) {
                    self.accumulate(grads, *k, conv2d_kernel_grad(g, self.value(*x), &direct)?);
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, conv2d_bias_grad(g)?);
                }
            }
            Op::MaxPool { x, argmax } => {
                let dx = max_pool2x2_backward(g, argmax, self.value(*x).shape());
                self.accumulate(grads, *x, dx);
            }
            Op::Concat(a, b) => {
                let ca = self.value(*a).shape()[2];
                let c = node.value.shape()[2];
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.slice_channels(0, ca)?);
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.slice_channels(ca, c)?);
                }
            }
            Op::SplitPatches { x, ph, pw, origin } => {
                let mut dx = Tensor::zeros(origin.to_vec());
                check_divisible(origin[0], origin[1], *ph, *pw)?;
                permute_patches(g.data(), dx.data_mut(), *origin, *ph, *pw, false);
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax(a) => {
                let k = node.value.shape()[2];
                let mut d = g.clone();
                for (dp, yp) in d.data_mut().chunks_exact_mut(k).zip(node.value.data().chunks_exact(k)) {
                    let dot = dp.iter().zip(yp).fold(T::zero(), |s, (&gv, &y)| s + gv * y);
                    for (dv, &y) in dp.iter_mut().zip(yp) {
                        *dv = y * (*dv - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::CrossEntropy {
                probs,
                targets,
                weights,
                void,
                count,
            } => {
                if *count == 0 {
                    return Ok(());
                }
                let scale = g.data()[0] / T::from_f64(*count as f64);
                let clamp = T::from_f64(LOG_CLAMP);
                for (&p, tgt) in probs.iter().zip(targets) {
                    if !self.needs(p) {
                        continue;
                    }
                    let pv = self.value(p);
                    let k = pv.shape()[2];
                    let mut d = Tensor::zeros(pv.shape().to_vec());
                    for (px, &t) in tgt.iter().enumerate() {
                        if Some(t) == *void {
                            continue;
                        }
                        let at = px * k + t as usize;
                        let prob = pv.data()[at];
                        if prob > clamp {
                            d.data_mut()[at] = -scale * weights[t as usize] / prob;
                        }
                    }
                    self.accumulate(grads, p, d);
                }
            }
            Op::Assemble { steps, dir } => {
                let (rows, cols, units) = (node.value.shape()[0], node.value.shape()[1], node.value.shape()[2]);
                let (n_seq, _) = dir.layout(rows, cols);
                for (t, s) in steps.iter().enumerate() {
                    let mut d = Tensor::zeros(vec![n_seq, units]);
                    for seq in 0..n_seq {
                        let (i, j) = dir.position(rows, cols, seq, t);
                        d.data_mut()[seq * units..(seq + 1) * units].copy_from_slice(g.pixel(i, j));
                    }
                    self.accumulate(grads, *s, d);
                }
            }
            Op::SweepStep {
                grid,
                prev,
                params,
                dir,
                t,
                gates,
            } => self.sweep_step_backward(g, *grid, *prev, params, *dir, *t, gates, grads)?,
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn sweep_step_backward(
        &self,
        g: &Tensor<T>,
        grid: Var,
        prev: Option<Var>,
        params: &[Var; 9],
        dir: Direction,
        t: usize,
        gates: &[T],
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let grid_v = self.value(grid);
        let (rows, cols, in_dim) = grid_v.dims3("sweep_step")?;
        let units = self.value(params[0]).shape()[1];
        let (n_seq, _) = dir.layout(rows, cols);
        let view = GruView::new(params.map(|v| self.value(v).data()), in_dim, units);

        let mut pbufs: [Vec<T>; 9] = params.map(|v| {
            if self.needs(v) {
                self.slot(grads, v);
                std::mem::take(&mut grads[v.0]).map(Tensor::into_data).unwrap_or_default()
            } else {
                vec![T::zero(); self.value(v).len()]
            }
        });
        let mut grid_g = if self.needs(grid) {
            self.slot(grads, grid);
            grads[grid.0].take()
        } else {
            None
        };
        let mut prev_g = match prev {
            Some(p) if self.needs(p) => {
                self.slot(grads, p);
                grads[p.0].take()
            }
            _ => None,
        };

        let zeros = vec![T::zero(); units];
        let mut d_prev = vec![T::zero(); units];
        let mut scratch = vec![T::zero(); 4 * units];
        for seq in 0..n_seq {
            let (i, j) = dir.position(rows, cols, seq, t);
            let h = match prev {
                Some(p) => &self.value(p).data()[seq * units..(seq + 1) * units],
                None => &zeros[..],
            };
            d_prev.iter_mut().for_each(|v| *v = T::zero());
            let d_input = grid_g.as_mut().map(|gg| {
                let at = (i * cols + j) * in_dim;
                &mut gg.data_mut()[at..at + in_dim]
            });
            view.step_backward(
                h,
                grid_v.pixel(i, j),
                &gates[seq * 3 * units..(seq + 1) * 3 * units],
                &g.data()[seq * units..(seq + 1) * units],
                &mut pbufs,
                d_input,
                &mut d_prev,
                &mut scratch,
            );
            if let Some(pg) = prev_g.as_mut() {
                for (a, &b) in pg.data_mut()[seq * units..(seq + 1) * units].iter_mut().zip(&d_prev) {
                    *a = *a + b;
                }
            }
        }

        for (v, buf) in params.iter().zip(pbufs) {
            if self.needs(*v) {
                grads[v.0] = Some(Tensor::new(self.value(*v).shape().to_vec(), buf)?);
            }
        }
        if let Some(gg) = grid_g {
            grads[grid.0] = Some(gg);
        }
        if let (Some(p), Some(pg)) = (prev, prev_g) {
            grads[p.0] = Some(pg);
        }
        Ok(())
    }
}
