use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{GradSink, Graph, Var};
use crate::tensor::{gemm, Element, Mat, Tensor};

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    /// Output columns `lo..hi` whose input column `ox*stride + j - pad` lies inside the image.
    fn valid_cols(&self, j: usize) -> (usize, usize) {
        let lo = if j >= self.pad { 0 } else { (self.pad - j).div_ceil(self.stride) };
        let hi = if self.w + self.pad > j { ((self.w - 1 + self.pad - j) / self.stride + 1).min(self.wo) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Unfold one sample into columns `off..off + ho*wo` of a row-major
    /// `[c*kh*kw, ld]` matrix.
    fn im2col<F: Element>(&self, x: &[F], cols: &mut [F], ld: usize, off: usize) {
        let plane = self.ho * self.wo;
        for c in 0..self.c {
            let xc = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut cols[((c * self.kh + i) * self.kw + j) * ld + off..][..plane];
                    let (lo, hi) = self.valid_cols(j);
                    for oy in 0..self.ho {
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        let iy = oy * self.stride + i;
                        if iy < self.pad || iy - self.pad >= self.h {
                            dst.fill(F::zero());
                            continue;
                        }
                        let src = &xc[(iy - self.pad) * self.w..][..self.w];
                        dst[..lo].fill(F::zero());
                        dst[hi..].fill(F::zero());
                        if self.stride == 1 {
                            dst[lo..hi].copy_from_slice(&src[lo + j - self.pad..hi + j - self.pad]);
                        } else {
                            for (ox, d) in (lo..hi).zip(&mut dst[lo..hi]) {
                                *d = src[ox * self.stride + j - self.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: accumulate columns back into one sample.
    fn col2im<F: Element>(&self, cols: &[F], ld: usize, off: usize, dx: &mut [F]) {
        let plane = self.ho * self.wo;
        for c in 0..self.c {
            let dxc = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &cols[((c * self.kh + i) * self.kw + j) * ld + off..][..plane];
                    let (lo, hi) = self.valid_cols(j);
                    for oy in 0..self.ho {
                        let iy = oy * self.stride + i;
                        if iy < self.pad || iy - self.pad >= self.h {
                            continue;
                        }
                        let dst = &mut dxc[(iy - self.pad) * self.w..][..self.w];
                        let src = &row[oy * self.wo..(oy + 1) * self.wo];
                        if self.stride == 1 {
                            for (d, &v) in dst[lo + j - self.pad..hi + j - self.pad].iter_mut().zip(&src[lo..hi]) {
                                *d += v;
                            }
                        } else {
                            for ox in lo..hi {
                                dst[ox * self.stride + j - self.pad] += src[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Unfolded-column budget per GEMM, in elements; keeps the buffer cache-resident.
const CHUNK_ELEMS: usize = 1 << 18;

/// Samples per GEMM for this geometry.
fn chunk_len(geo: &Geometry, n: usize) -> usize {
    let per = geo.c * geo.kh * geo.kw * geo.ho * geo.wo;
    (CHUNK_ELEMS / per.max(1)).clamp(1, n.max(1))
}

/// Columns of samples `start..start + len` side by side: `[c*kh*kw, len*ho*wo]`.
fn unfold<F: Element>(geo: &Geometry, x: &[F], start: usize, len: usize, cols: &mut Vec<F>) {
    let plane = geo.ho * geo.wo;
    let in_per = geo.c * geo.h * geo.w;
    let ld = len * plane;
    cols.resize(geo.c * geo.kh * geo.kw * ld, F::zero());
    for s in 0..len {
        let xs = &x[(start + s) * in_per..(start + s + 1) * in_per];
        geo.im2col(xs, cols, ld, s * plane);
    }
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(kernel).map(|span| span / stride + 1)
}

fn geometry<F: Element>(x: &Tensor<F>, w: &Tensor<F>, stride: usize, pad: usize) -> Result<Geometry> {
    let (_, c, h, wd) = x.dims4("conv2d")?;
    let (_, wc, kh, kw) = w.dims4("conv2d")?;
    if wc != c {
        return Err(TensorError::Dimension { op: "conv2d", axis: "in_channels", expected: wc, got: c });
    }
    if stride == 0 {
        return Err(TensorError::arg("conv2d", "stride must be positive"));
    }
    let ho = conv_out_dim(h, kh, stride, pad).ok_or(TensorError::Dimension {
        op: "conv2d",
        axis: "height",
        expected: kh,
        got: h + 2 * pad,
    })?;
    let wo = conv_out_dim(wd, kw, stride, pad).ok_or(TensorError::Dimension {
        op: "conv2d",
        axis: "width",
        expected: kw,
        got: wd + 2 * pad,
    })?;
    Ok(Geometry { c, h, w: wd, kh, kw, stride, pad, ho, wo })
}

impl<F: Element> Graph<F> {
    /// 2-D cross-correlation over NCHW input with an `[out, in, kh, kw]` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let geo = geometry(xv, wv, stride, pad)?;
        let n = xv.batch();
        let o = wv.shape()[0];
        if let Some(b) = b {
            let bl = self.value(b).numel();
            if bl != o {
                return Err(TensorError::Dimension { op: "conv2d", axis: "bias", expected: o, got: bl });
            }
        }
        let plane = geo.ho * geo.wo;
        let ck = geo.c * geo.kh * geo.kw;
        let bias = b.map(|b| self.value(b).data());
        let mut out = vec![F::zero(); n * o * plane];
        let chunk = chunk_len(&geo, n);
        let mut cols = Vec::new();
        let mut prod = Vec::new();
        // Batched products `[o, ck] x [ck, len*plane]` over groups of samples.
        for start in (0..n).step_by(chunk) {
            let len = chunk.min(n - start);
            let ld = len * plane;
            unfold(&geo, xv.data(), start, len, &mut cols);
            prod.resize(o * ld, F::zero());
            gemm(Mat::new(wv.data(), o, ck), Mat::new(&cols, ck, ld), F::zero(), &mut prod);
            for s in 0..len {
                for k in 0..o {
                    let dst = &mut out[((start + s) * o + k) * plane..][..plane];
                    dst.copy_from_slice(&prod[k * ld + s * plane..][..plane]);
                    if let Some(bias) = bias {
                        dst.iter_mut().for_each(|v| *v += bias[k]);
                    }
                }
            }
        }
        let value = Tensor::new([n, o, geo.ho, geo.wo], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, pad }))
    }

    /// Affine map on flattened samples: `[N, K..] x [O, K] -> [N, O, 1.., 1]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        if wv.shape().len() != 2 {
            return Err(TensorError::Rank { op: "linear", expected: 2, shape: wv.shape().to_vec() });
        }
        let (o, k) = (wv.shape()[0], wv.shape()[1]);
        let n = xv.batch();
        if xv.per_sample() != k {
            return Err(TensorError::Dimension { op: "linear", axis: "features", expected: k, got: xv.per_sample() });
        }
        let mut out = vec![F::zero(); n * o];
        if let Some(b) = b {
            let bias = self.value(b).data();
            if bias.len() != o {
                return Err(TensorError::Dimension { op: "linear", axis: "bias", expected: o, got: bias.len() });
            }
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bias);
            }
        }
        gemm(Mat::new(xv.data(), n, k), Mat::t(wv.data(), o, k), F::one(), &mut out);
        let mut shape = vec![n, o];
        shape.extend(std::iter::repeat_n(1, xv.shape().len().saturating_sub(2)));
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv2d_backward<F: Element>(
    xv: &Tensor<F>,
    wv: &Tensor<F>,
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    pad: usize,
    out: &Tensor<F>,
    g: &[F],
    sink: &mut GradSink<'_, F>,
) {
    let geo = geometry(xv, wv, stride, pad).expect("validated in forward");
    let n = xv.batch();
    let o = out.shape()[1];
    let plane = geo.ho * geo.wo;
    let ck = geo.c * geo.kh * geo.kw;
    let in_per = geo.c * geo.h * geo.w;

    if let Some(b) = b {
        if sink.wants(b) {
            let db = sink.slot(b);
            for s in 0..n {
                for k in 0..o {
                    let start = (s * o + k) * plane;
                    db[k] += g[start..start + plane].iter().copied().sum::<F>();
                }
            }
        }
    }

    let want_w = sink.wants(w);
    let want_x = sink.wants(x);
    if !want_w && !want_x {
        return;
    }
    let mut dw = if want_w { vec![F::zero(); o * ck] } else { Vec::new() };
    let mut dx = if want_x { vec![F::zero(); xv.numel()] } else { Vec::new() };
    let chunk = chunk_len(&geo, n);
    let (mut gt, mut cols, mut dcols) = (Vec::new(), Vec::new(), Vec::new());
    for start in (0..n).step_by(chunk) {
        let len = chunk.min(n - start);
        let ld = len * plane;
        // Gradient rearranged to `[o, len*plane]` to match the forward product.
        gt.resize(o * ld, F::zero());
        for s in 0..len {
            for k in 0..o {
                gt[k * ld + s * plane..][..plane].copy_from_slice(&g[((start + s) * o + k) * plane..][..plane]);
            }
        }
        if want_w {
            unfold(&geo, xv.data(), start, len, &mut cols);
            gemm(Mat::new(&gt, o, ld), Mat::t(&cols, ck, ld), F::one(), &mut dw);
        }
        if want_x {
            dcols.resize(ck * ld, F::zero());
            gemm(Mat::t(wv.data(), o, ck), Mat::new(&gt, o, ld), F::zero(), &mut dcols);
            for s in 0..len {
                let dxs = &mut dx[(start + s) * in_per..(start + s + 1) * in_per];
                geo.col2im(&dcols, ld, s * plane, dxs);
            }
        }
    }
    if want_w {
        sink.add(w, &dw);
    }
    if want_x {
        sink.add(x, &dx);
    }
}

pub(super) fn linear_backward<F: Element>(
    xv: &Tensor<F>,
    wv: &Tensor<F>,
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &[F],
    sink: &mut GradSink<'_, F>,
) {
    let (o, k) = (wv.shape()[0], wv.shape()[1]);
    let n = xv.batch();
    if let Some(b) = b {
        if sink.wants(b) {
            let db = sink.slot(b);
            for row in g.chunks(o) {
                for (d, &v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
    }
    if sink.wants(w) {
        gemm(Mat::t(g, n, o), Mat::new(xv.data(), n, k), F::one(), sink.slot(w));
    }
    if sink.wants(x) {
        gemm(Mat::new(g, n, o), Mat::new(wv.data(), o, k), F::one(), sink.slot(x));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_two_halves_mnist_resolution() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 1, 28, 28]));
        let w = g.constant(Tensor::zeros([4, 1, 3, 3]));
        let y = g.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 4, 14, 14]);
    }

    #[test]
    fn ones_kernel_sums_ones() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full([1, 1, 3, 3], 1.0));
        let w = g.constant(Tensor::full([1, 1, 3, 3], 1.0));
        let b = g.constant(Tensor::zeros([1]));
        let y = g.conv2d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 2, 5, 5]));
        let w = g.constant(Tensor::zeros([1, 3, 3, 3]));
        match g.conv2d(x, w, None, 1, 0) {
            Err(TensorError::Dimension { axis, .. }) => assert_eq!(axis, "in_channels"),
            other => panic!("unexpected {other:?}", other = other.map(|_| ())),
        }
    }

    #[test]
    fn kernel_larger_than_padded_input_fails() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 1, 2, 2]));
        let w = g.constant(Tensor::zeros([1, 1, 4, 4]));
        match g.conv2d(x, w, None, 1, 0) {
            Err(TensorError::Dimension { axis, .. }) => assert_eq!(axis, "height"),
            other => panic!("unexpected {other:?}", other = other.map(|_| ())),
        }
    }

    #[test]
    fn output_shape_formula_over_grid() {
        for k in [1usize, 3, 4] {
            for stride in [1usize, 2] {
                for pad in [0usize, 1] {
                    let mut g = Graph::<f32>::new();
                    let x = g.constant(Tensor::zeros([2, 2, 9, 8]));
                    let w = g.constant(Tensor::zeros([3, 2, k, k]));
                    let y = g.conv2d(x, w, None, stride, pad).unwrap();
                    let ho = (9 + 2 * pad - k) / stride + 1;
                    let wo = (8 + 2 * pad - k) / stride + 1;
                    assert_eq!(g.shape(y), &[2, 3, ho, wo], "k={k} s={stride} p={pad}");
                }
            }
        }
    }

    #[test]
    fn linear_matches_manual_product() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new([2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let w = g.constant(Tensor::new([2, 3], vec![1., 0., -1., 0.5, 0.5, 0.5]).unwrap());
        let b = g.constant(Tensor::new([2], vec![10., 20.]).unwrap());
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[8.0, 23.0, 8.0, 27.5]);
    }
}
