use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gru::GruParams;
use super::patches::split_patches;
use crate::error::{Error, Result};
use crate::tensor::{concat_channels, Scalar, Tensor};

/// Direction a recurrent sweep travels over a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Top to bottom along each column.
    Down,
    /// Bottom to top along each column.
    Up,
    /// Left to right along each row.
    Right,
    /// Right to left along each row.
    Left,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Down, Direction::Up, Direction::Right, Direction::Left];

    pub fn name(self) -> &'static str {
        match self {
            Direction::Down => "down",
            Direction::Up => "up",
            Direction::Right => "right",
            Direction::Left => "left",
        }
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, Direction::Down | Direction::Up)
    }

    /// (number of independent sequences, sequence length) on an `rows × cols` grid.
    pub fn layout(self, rows: usize, cols: usize) -> (usize, usize) {
        if self.is_vertical() {
            (cols, rows)
        } else {
            (rows, cols)
        }
    }

    /// Grid position (row, col) visited by sequence `seq` at step `t`.
    pub fn position(self, rows: usize, cols: usize, seq: usize, t: usize) -> (usize, usize) {
        match self {
            Direction::Down => (t, seq),
            Direction::Up => (rows - 1 - t, seq),
            Direction::Right => (seq, t),
            Direction::Left => (seq, cols - 1 - t),
        }
    }
}

/// How a sweep schedules its independent rows or columns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SweepMode {
    /// One sequence after another on the calling thread.
    Sequential,
    /// Independent sequences distributed over the rayon pool.
    #[default]
    Parallel,
}

/// One directional RNN.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepParams<T = f32> {
    pub direction: Direction,
    pub gru: GruParams<T>,
}

impl<T: Scalar> SweepParams<T> {
    pub fn new(direction: Direction, gru: GruParams<T>) -> Self {
        SweepParams { direction, gru }
    }
}

/// Runs the GRU of `params` along every column (vertical directions) or row
/// (horizontal directions) of an `I×J×D` grid, starting from a zero state.
/// Output `(i, j)` is the state emitted when the sweep visits `(i, j)`.
pub fn directional_sweep<T: Scalar>(
    params: &SweepParams<T>,
    grid: &Tensor<T>,
    mode: SweepMode,
) -> Result<Tensor<T>> {
    let (rows, cols, d) = grid.dims3("directional_sweep")?;
    params.gru.validate()?;
    if d != params.gru.in_dim() {
        return Err(Error::dim("directional_sweep", "input vector length", params.gru.in_dim(), d));
    }
    let u = params.gru.units();
    let dir = params.direction;
    let (n_seq, len) = dir.layout(rows, cols);
    let view = params.gru.view();

    let run = |seq: usize| -> Vec<T> {
        let mut states = vec![T::zero(); len * u];
        let mut gates = vec![T::zero(); 3 * u];
        let mut prev = vec![T::zero(); u];
        for t in 0..len {
            let (i, j) = dir.position(rows, cols, seq, t);
            let next = &mut states[t * u..(t + 1) * u];
            view.step(&prev, grid.pixel(i, j), &mut gates, next);
            prev.copy_from_slice(next);
        }
        states
    };
    let per_seq: Vec<Vec<T>> = match mode {
        SweepMode::Sequential => (0..n_seq).map(run).collect(),
        SweepMode::Parallel => (0..n_seq).into_par_iter().map(run).collect(),
    };

    let mut out = Tensor::zeros(vec![rows, cols, u]);
    let od = out.data_mut();
    for (seq, states) in per_seq.iter().enumerate() {
        for t in 0..len {
            let (i, j) = dir.position(rows, cols, seq, t);
            let at = (i * cols + j) * u;
            od[at..at + u].copy_from_slice(&states[t * u..(t + 1) * u]);
        }
    }
    Ok(out)
}

/// Parameters of one ReNet layer: a vertical pair of sweeps over the patch
/// grid and a horizontal pair over their concatenated output.
#[derive(Clone, Debug, PartialEq)]
pub struct ReNetParams<T = f32> {
    pub patch_h: usize,
    pub patch_w: usize,
    pub down: SweepParams<T>,
    pub up: SweepParams<T>,
    pub right: SweepParams<T>,
    pub left: SweepParams<T>,
}

impl<T: Scalar> ReNetParams<T> {
    /// `in_channels` is the channel count of the map fed to the layer.
    pub fn init(
        in_channels: usize,
        patch_h: usize,
        patch_w: usize,
        units: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let vdim = patch_h * patch_w * in_channels;
        ReNetParams {
            patch_h,
            patch_w,
            down: SweepParams::new(Direction::Down, GruParams::init(vdim, units, rng)),
            up: SweepParams::new(Direction::Up, GruParams::init(vdim, units, rng)),
            right: SweepParams::new(Direction::Right, GruParams::init(2 * units, units, rng)),
            left: SweepParams::new(Direction::Left, GruParams::init(2 * units, units, rng)),
        }
    }

    pub fn units(&self) -> usize {
        self.down.gru.units()
    }

    pub fn sweeps(&self) -> [&SweepParams<T>; 4] {
        [&self.down, &self.up, &self.right, &self.left]
    }

    pub fn sweeps_mut(&mut self) -> [&mut SweepParams<T>; 4] {
        [&mut self.down, &mut self.up, &mut self.right, &mut self.left]
    }

    fn validate(&self) -> Result<()> {
        let u = self.units();
        for s in self.sweeps() {
            if s.gru.units() != u {
                return Err(Error::Config(format!(
                    "ReNet sweep {} has {} units, layer uses {u}",
                    s.direction.name(),
                    s.gru.units()
                )));
            }
        }
        for s in [&self.right, &self.left] {
            if s.gru.in_dim() != 2 * u {
                return Err(Error::dim("renet_layer", "horizontal input length", 2 * u, s.gru.in_dim()));
            }
        }
        Ok(())
    }
}

/// Output of a ReNet layer together with the vertical-pair intermediate.
#[derive(Clone, Debug)]
pub struct ReNetOutput<T> {
    /// Concatenated down/up sweeps, `I×J×2U`.
    pub vertical: Tensor<T>,
    /// Concatenated right/left sweeps over `vertical`, `I×J×2U`.
    pub output: Tensor<T>,
}

/// Full ReNet layer keeping the vertical intermediate.
pub fn renet_layer_parts<T: Scalar>(
    params: &ReNetParams<T>,
    x: &Tensor<T>,
    mode: SweepMode,
) -> Result<ReNetOutput<T>> {
    params.validate()?;
    let grid = split_patches(x, params.patch_h, params.patch_w)?;
    let down = directional_sweep(&params.down, grid.vectors(), mode)?;
    let up = directional_sweep(&params.up, grid.vectors(), mode)?;
    let vertical = concat_channels(&down, &up)?;
    // the horizontal pair reads the vertical output as 1×1 patches
    let right = directional_sweep(&params.right, &vertical, mode)?;
    let left = directional_sweep(&params.left, &vertical, mode)?;
    let output = concat_channels(&right, &left)?;
    Ok(ReNetOutput { vertical, output })
}

/// `H×W×C → (H/Hp)×(W/Wp)×2U`.
pub fn renet_layer<T: Scalar>(params: &ReNetParams<T>, x: &Tensor<T>, mode: SweepMode) -> Result<Tensor<T>> {
    Ok(renet_layer_parts(params, x, mode)?.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gru::gru_step;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(dir: Direction, d: usize, u: usize, rng: &mut ChaCha8Rng) -> SweepParams<f64> {
        let mut g = GruParams::init(d, u, rng);
        for t in g.tensors_mut() {
            *t = Tensor::from_fn(t.shape().to_vec(), |_| rng.random_range(-1.0..1.0));
        }
        SweepParams::new(dir, g)
    }

    fn random_grid(shape: [usize; 3], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    fn flip_rows(t: &Tensor<f64>) -> Tensor<f64> {
        let (h, w, c) = t.dims3("flip").unwrap();
        let mut out = t.clone();
        for i in 0..h {
            for j in 0..w {
                let src = t.pixel(h - 1 - i, j).to_vec();
                out.data_mut()[(i * w + j) * c..(i * w + j + 1) * c].copy_from_slice(&src);
            }
        }
        out
    }

    #[test]
    fn single_row_grid_is_one_step_per_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = random_grid([1, 3, 2], &mut rng);
        for dir in [Direction::Down, Direction::Up] {
            let p = random_params(dir, 2, 3, &mut rng);
            let out = directional_sweep(&p, &grid, SweepMode::Sequential).unwrap();
            for j in 0..3 {
                let want = gru_step(&p.gru, &[0.0; 3], grid.pixel(0, j)).unwrap();
                assert_eq!(out.pixel(0, j), &want[..]);
            }
        }
    }

    #[test]
    fn down_and_flipped_up_agree_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = random_grid([5, 3, 4], &mut rng);
        let down = random_params(Direction::Down, 4, 3, &mut rng);
        let up = SweepParams::new(Direction::Up, down.gru.clone());
        let a = directional_sweep(&down, &grid, SweepMode::Sequential).unwrap();
        let b = directional_sweep(&up, &flip_rows(&grid), SweepMode::Sequential).unwrap();
        assert_eq!(a, flip_rows(&b));
    }

    #[test]
    fn matches_hand_threaded_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // 3×2 grid of distinct one-hot vectors
        let grid = Tensor::from_fn(vec![3, 2, 6], |idx| if idx % 7 == 0 { 1.0 } else { 0.0 });
        for dir in Direction::ALL {
            let p = random_params(dir, 6, 2, &mut rng);
            let out = directional_sweep(&p, &grid, SweepMode::Sequential).unwrap();
            let mut want = Tensor::zeros(vec![3, 2, 2]);
            let lines: Vec<Vec<(usize, usize)>> = match dir {
                Direction::Down => (0..2).map(|j| (0..3).map(|i| (i, j)).collect()).collect(),
                Direction::Up => (0..2).map(|j| (0..3).rev().map(|i| (i, j)).collect()).collect(),
                Direction::Right => (0..3).map(|i| (0..2).map(|j| (i, j)).collect()).collect(),
                Direction::Left => (0..3).map(|i| (0..2).rev().map(|j| (i, j)).collect()).collect(),
            };
            for line in lines {
                let mut h = vec![0.0; 2];
                for (i, j) in line {
                    h = gru_step(&p.gru, &h, grid.pixel(i, j)).unwrap();
                    want.data_mut()[(i * 2 + j) * 2..(i * 2 + j) * 2 + 2].copy_from_slice(&h);
                }
            }
            assert_eq!(out, want, "{dir:?}");
        }
    }

    #[test]
    fn columns_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = random_grid([4, 4, 3], &mut rng);
        for dir in [Direction::Down, Direction::Up] {
            let p = random_params(dir, 3, 2, &mut rng);
            let base = directional_sweep(&p, &grid, SweepMode::Sequential).unwrap();
            let mut zeroed = grid.clone();
            for i in 0..4 {
                for c in 0..3 {
                    zeroed.data_mut()[(i * 4 + 1) * 3 + c] = 0.0;
                }
            }
            let changed = directional_sweep(&p, &zeroed, SweepMode::Sequential).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    if j == 1 {
                        assert_ne!(base.pixel(i, j), changed.pixel(i, j));
                    } else {
                        assert_eq!(base.pixel(i, j), changed.pixel(i, j));
                    }
                }
            }
        }
    }

    #[test]
    fn parallel_equals_sequential_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let grid = random_grid([6, 7, 5], &mut rng).cast::<f32>();
        for dir in Direction::ALL {
            let p = random_params(dir, 5, 4, &mut rng);
            let p = SweepParams::new(dir, cast_gru(&p.gru));
            let a = directional_sweep(&p, &grid, SweepMode::Sequential).unwrap();
            let b = directional_sweep(&p, &grid, SweepMode::Parallel).unwrap();
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    fn cast_gru(g: &GruParams<f64>) -> GruParams<f32> {
        let mut out = GruParams::zeros(g.in_dim(), g.units());
        for (dst, src) in out.tensors_mut().into_iter().zip(g.tensors()) {
            *dst = src.cast();
        }
        out
    }

    #[test]
    fn renet_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p: ReNetParams<f32> = ReNetParams::init(1, 2, 2, 3, &mut rng);
        let x = Tensor::full(vec![2, 2, 1], 0.5f32);
        assert_eq!(renet_layer(&p, &x, SweepMode::Sequential).unwrap().shape(), &[1, 1, 6]);
        let p: ReNetParams<f32> = ReNetParams::init(3, 2, 2, 5, &mut rng);
        let x = Tensor::full(vec![8, 6, 3], 0.1f32);
        let out = renet_layer_parts(&p, &x, SweepMode::Parallel).unwrap();
        assert_eq!(out.vertical.shape(), &[4, 3, 10]);
        assert_eq!(out.output.shape(), &[4, 3, 10]);
    }

    #[test]
    fn renet_fig2_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p: ReNetParams<f32> = ReNetParams::init(3, 2, 2, 256, &mut rng);
        let x = Tensor::from_fn(vec![32, 32, 3], |i| (i % 17) as f32 / 17.0);
        let out = renet_layer_parts(&p, &x, SweepMode::Parallel).unwrap();
        assert_eq!(out.vertical.shape(), &[16, 16, 512]);
        assert_eq!(out.output.shape(), &[16, 16, 512]);
    }

    #[test]
    fn renet_rejects_indivisible_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p: ReNetParams<f32> = ReNetParams::init(1, 2, 2, 3, &mut rng);
        let x = Tensor::zeros(vec![3, 4, 1]);
        assert!(matches!(renet_layer(&p, &x, SweepMode::Sequential), Err(Error::Config(_))));
    }

    #[test]
    fn renet_output_sees_every_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut p: ReNetParams<f64> = ReNetParams::init(1, 1, 1, 3, &mut rng);
        for s in p.sweeps_mut() {
            for t in s.gru.tensors_mut() {
                *t = Tensor::from_fn(t.shape().to_vec(), |_| rng.random_range(-1.0..1.0));
            }
        }
        let x = random_grid([4, 4, 1], &mut rng);
        let base = renet_layer(&p, &x, SweepMode::Sequential).unwrap();
        for px in 0..16 {
            let mut xp = x.clone();
            xp.data_mut()[px] += 0.5;
            let moved = renet_layer(&p, &xp, SweepMode::Sequential).unwrap();
            for (i, j) in (0..4).flat_map(|i| (0..4).map(move |j| (i, j))) {
                let diff: f64 = base
                    .pixel(i, j)
                    .iter()
                    .zip(moved.pixel(i, j))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(diff > 1e-6, "pixel {px} does not reach ({i},{j})");
            }
        }
    }
}
