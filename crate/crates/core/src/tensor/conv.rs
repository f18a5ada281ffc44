use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Zero padding added on each side of the input before a convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Padding::default()
    }
}

/// Geometry of a 2-D convolution.
///
/// Kernels are stored as `kernel_h × kernel_w × in_channels × out_channels`.
/// For [`transposed_conv2d`] the channel counts are read from the transposed
/// operation's point of view (input `in_channels`, output `out_channels`) and
/// the kernel is stored as `kernel_h × kernel_w × out_channels × in_channels`,
/// i.e. it is the kernel of the direct convolution described by
/// [`ConvSpec::adjoint`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub padding: Padding,
}

impl ConvSpec {
    /// Stride 1, no padding.
    pub fn new(kernel_h: usize, kernel_w: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel_h,
            kernel_w,
            in_channels,
            out_channels,
            stride_h: 1,
            stride_w: 1,
            padding: Padding::default(),
        }
    }

    /// Stride tied to the kernel size, no padding: the only geometry accepted
    /// by [`transposed_conv2d`].
    pub fn tied(kernel_h: usize, kernel_w: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            stride_h: kernel_h,
            stride_w: kernel_w,
            ..ConvSpec::new(kernel_h, kernel_w, in_channels, out_channels)
        }
    }

    pub fn with_stride(mut self, stride_h: usize, stride_w: usize) -> Self {
        self.stride_h = stride_h;
        self.stride_w = stride_w;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    /// Same geometry with the channel roles swapped.
    pub fn adjoint(&self) -> Self {
        ConvSpec {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            ..*self
        }
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.kernel_h, self.kernel_w, self.in_channels, self.out_channels]
    }

    pub fn is_tied(&self) -> bool {
        self.stride_h == self.kernel_h && self.stride_w == self.kernel_w && self.padding.is_zero()
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        let extents = [
            self.kernel_h,
            self.kernel_w,
            self.in_channels,
            self.out_channels,
            self.stride_h,
            self.stride_w,
        ];
        if extents.contains(&0) {
            return Err(Error::Config(format!(
                "{op}: kernel, channel and stride extents must be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Output extents of the direct convolution on an `h × w` input.
    pub fn output_extents(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + self.padding.top + self.padding.bottom;
        let pw = w + self.padding.left + self.padding.right;
        if ph < self.kernel_h {
            return Err(Error::dim("conv2d", "rows", self.kernel_h, ph));
        }
        if pw < self.kernel_w {
            return Err(Error::dim("conv2d", "cols", self.kernel_w, pw));
        }
        Ok((
            (ph - self.kernel_h) / self.stride_h + 1,
            (pw - self.kernel_w) / self.stride_w + 1,
        ))
    }
}

fn check_kernels<T: Scalar>(
    op: &'static str,
    spec: &ConvSpec,
    kernels: &Tensor<T>,
) -> Result<()> {
    let expected = spec.kernel_shape();
    if kernels.shape() != expected {
        let names = ["kernel rows", "kernel cols", "kernel in-channels", "kernel out-channels"];
        if kernels.rank() != 4 {
            return Err(Error::Shape {
                op,
                shape: kernels.shape().to_vec(),
                reason: format!("expected kernel shape {expected:?}"),
            });
        }
        for (axis, (&e, &a)) in expected.iter().zip(kernels.shape()).enumerate() {
            if e != a {
                return Err(Error::dim(op, names[axis], e, a));
            }
        }
    }
    Ok(())
}

fn check_bias<T: Scalar>(op: &'static str, len: usize, bias: &Tensor<T>) -> Result<()> {
    if bias.shape() != [len] {
        return Err(Error::dim(op, "bias length", len, bias.len()));
    }
    Ok(())
}

/// Calls `f(out_pixel, in_pixel, ky, kx)` for every kernel tap that lands
/// inside the unpadded input.
fn for_each_tap(
    spec: &ConvSpec,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    mut f: impl FnMut(usize, usize, usize, usize),
) {
    let pad = spec.padding;
    for oy in 0..oh {
        for ky in 0..spec.kernel_h {
            let iy = (oy * spec.stride_h + ky) as isize - pad.top as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            for ox in 0..ow {
                for kx in 0..spec.kernel_w {
                    let ix = (ox * spec.stride_w + kx) as isize - pad.left as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    f(oy * ow + ox, iy as usize * w + ix as usize, ky, kx);
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip) of an `H×W×C` map with
/// `kh×kw×C×F` kernels, plus a per-output-channel bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    spec.validate("conv2d")?;
    let (h, w, c) = input.dims3("conv2d")?;
    if c != spec.in_channels {
        return Err(Error::dim("conv2d", "channels", spec.in_channels, c));
    }
    check_kernels("conv2d", spec, kernels)?;
    check_bias("conv2d", spec.out_channels, bias)?;
    let (oh, ow) = spec.output_extents(h, w)?;
    let f_out = spec.out_channels;

    let mut out = Vec::with_capacity(oh * ow * f_out);
    for _ in 0..oh * ow {
        out.extend_from_slice(bias.data());
    }
    let x = input.data();
    let k = kernels.data();
    for_each_tap(spec, (h, w), (oh, ow), |o, i, ky, kx| {
        let xin = &x[i * c..(i + 1) * c];
        let kbase = (ky * spec.kernel_w + kx) * c * f_out;
        let acc = &mut out[o * f_out..(o + 1) * f_out];
        for (ci, &xv) in xin.iter().enumerate() {
            let krow = &k[kbase + ci * f_out..kbase + (ci + 1) * f_out];
            for (a, &kv) in acc.iter_mut().zip(krow) {
                *a = *a + xv * kv;
            }
        }
    });
    Tensor::new(vec![oh, ow, f_out], out)
}

/// Adjoint of the linear part of [`conv2d`] with respect to its input:
/// maps an `H'×W'×F` map back to the `rows×cols×C` input space.
pub fn conv2d_adjoint<T: Scalar>(
    output: &Tensor<T>,
    spec: &ConvSpec,
    kernels: &Tensor<T>,
    rows: usize,
    cols: usize,
) -> Result<Tensor<T>> {
    spec.validate("conv2d_adjoint")?;
    check_kernels("conv2d_adjoint", spec, kernels)?;
    let (oh, ow, f_out) = output.dims3("conv2d_adjoint")?;
    let (eh, ew) = spec.output_extents(rows, cols)?;
    if eh != oh {
        return Err(Error::dim("conv2d_adjoint", "rows", eh, oh));
    }
    if ew != ow {
        return Err(Error::dim("conv2d_adjoint", "cols", ew, ow));
    }
    if f_out != spec.out_channels {
        return Err(Error::dim("conv2d_adjoint", "channels", spec.out_channels, f_out));
    }
    let c = spec.in_channels;
    let mut dx = vec![T::zero(); rows * cols * c];
    let dy = output.data();
    let k = kernels.data();
    for_each_tap(spec, (rows, cols), (oh, ow), |o, i, ky, kx| {
        let g = &dy[o * f_out..(o + 1) * f_out];
        let kbase = (ky * spec.kernel_w + kx) * c * f_out;
        let target = &mut dx[i * c..(i + 1) * c];
        for (ci, t) in target.iter_mut().enumerate() {
            let krow = &k[kbase + ci * f_out..kbase + (ci + 1) * f_out];
            let mut s = T::zero();
            for (&gv, &kv) in g.iter().zip(krow) {
                s = s + gv * kv;
            }
            *t = *t + s;
        }
    });
    Tensor::new(vec![rows, cols, c], dx)
}

/// Gradient of `<conv2d(input, kernels), out_grad>` with respect to the kernels.
pub fn conv2d_kernel_grad<T: Scalar>(
    input: &Tensor<T>,
    out_grad: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (h, w, c) = input.dims3("conv2d_kernel_grad")?;
    let (oh, ow, f_out) = out_grad.dims3("conv2d_kernel_grad")?;
    if c != spec.in_channels {
        return Err(Error::dim("conv2d_kernel_grad", "channels", spec.in_channels, c));
    }
    if f_out != spec.out_channels {
        return Err(Error::dim("conv2d_kernel_grad", "out channels", spec.out_channels, f_out));
    }
    let mut dk = Tensor::zeros(spec.kernel_shape().to_vec());
    let x = input.data();
    let dy = out_grad.data();
    let dkd = dk.data_mut();
    for_each_tap(spec, (h, w), (oh, ow), |o, i, ky, kx| {
        let g = &dy[o * f_out..(o + 1) * f_out];
        let kbase = (ky * spec.kernel_w + kx) * c * f_out;
        for (ci, &xv) in x[i * c..(i + 1) * c].iter().enumerate() {
            let krow = &mut dkd[kbase + ci * f_out..kbase + (ci + 1) * f_out];
            for (d, &gv) in krow.iter_mut().zip(g) {
                *d = *d + xv * gv;
            }
        }
    });
    Ok(dk)
}

/// Per-channel sum of a rank-3 map: the bias gradient of a convolution.
pub fn conv2d_bias_grad<T: Scalar>(out_grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, f_out) = out_grad.dims3("conv2d_bias_grad")?;
    let mut db = vec![T::zero(); f_out];
    for px in out_grad.data().chunks_exact(f_out) {
        for (d, &g) in db.iter_mut().zip(px) {
            *d = *d + g;
        }
    }
    Tensor::new(vec![f_out], db)
}

/// Transposed convolution with stride tied to the filter size: an
/// `I×J×F` map becomes `(I·kh)×(J·kw)×F'`, each input pixel painting one
/// non-overlapping `kh×kw` block. Equals [`conv2d_adjoint`] under
/// [`ConvSpec::adjoint`], plus `bias`.
pub fn transposed_conv2d<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    spec.validate("transposed_conv2d")?;
    if !spec.is_tied() {
        return Err(Error::Config(format!(
            "transposed convolution requires stride equal to filter size and no padding, got \
             filter {}×{}, stride {}×{}, padding {:?}",
            spec.kernel_h, spec.kernel_w, spec.stride_h, spec.stride_w, spec.padding
        )));
    }
    let (i, j, f) = input.dims3("transposed_conv2d")?;
    if f != spec.in_channels {
        return Err(Error::dim("transposed_conv2d", "channels", spec.in_channels, f));
    }
    check_bias("transposed_conv2d", spec.out_channels, bias)?;
    let direct = spec.adjoint();
    let mut out = conv2d_adjoint(input, &direct, kernels, i * spec.kernel_h, j * spec.kernel_w)?;
    let fo = spec.out_channels;
    for px in out.data_mut().chunks_exact_mut(fo) {
        for (v, &b) in px.iter_mut().zip(bias.data()) {
            *v = *v + b;
        }
    }
    Ok(out)
}

/// 2×2 max pooling with stride 2. Returns the pooled map and, for each
/// output element, the flat input index it was taken from (first maximum
/// wins on ties).
pub fn max_pool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (h, w, c) = input.dims3("max_pool2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!(
            "2×2 pooling needs even extents, got {h}×{w}; resize the input"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut arg = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = usize::MAX;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if best == usize::MAX || x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![oh, ow, c], out)?, arg))
}

/// Routes pooled gradients back to the recorded argmax positions.
pub fn max_pool2x2_backward<T: Scalar>(
    out_grad: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&g, &i) in out_grad.data().iter().zip(argmax) {
        d[i] = d[i] + g;
    }
    dx
}
