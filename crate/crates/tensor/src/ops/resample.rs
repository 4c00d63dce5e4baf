use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{GradSink, Graph, Var};
use crate::tensor::{Element, Tensor};

/// Source taps for one output coordinate under the half-pixel-centers rule:
/// `src = (dst + 0.5) / factor - 0.5`, clamped to the valid range.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(len: usize, factor: usize) -> Vec<Tap> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            Tap { lo, hi, frac: src - lo as f64 }
        })
        .collect()
}

impl<F: Element> Graph<F> {
    /// Bilinear upsampling of NCHW input by an integer factor.
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor < 2 {
            return Err(TensorError::arg("bilinear_upsample", format!("factor must be >= 2, got {factor}")));
        }
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4("bilinear_upsample")?;
        let (ty, tx) = (taps(h, factor), taps(w, factor));
        let (ho, wo) = (h * factor, w * factor);
        let mut out = vec![F::zero(); n * c * ho * wo];
        for (plane, dst) in xv.data().chunks(h * w).zip(out.chunks_mut(ho * wo)) {
            for (oy, a) in ty.iter().enumerate() {
                let (fy1, fy0) = (F::from_f64(a.frac), F::from_f64(1.0 - a.frac));
                let r0 = &plane[a.lo * w..(a.lo + 1) * w];
                let r1 = &plane[a.hi * w..(a.hi + 1) * w];
                for (ox, b) in tx.iter().enumerate() {
                    let (fx1, fx0) = (F::from_f64(b.frac), F::from_f64(1.0 - b.frac));
                    dst[oy * wo + ox] =
                        fy0 * (fx0 * r0[b.lo] + fx1 * r0[b.hi]) + fy1 * (fx0 * r1[b.lo] + fx1 * r1[b.hi]);
                }
            }
        }
        let value = Tensor::new([n, c, ho, wo], out)?;
        Ok(self.push(value, Op::Upsample { x, factor }))
    }
}

pub(super) fn upsample_backward<F: Element>(
    xv: &Tensor<F>,
    x: Var,
    factor: usize,
    g: &[F],
    sink: &mut GradSink<'_, F>,
) {
    if !sink.wants(x) {
        return;
    }
    let (_, _, h, w) = xv.dims4("bilinear_upsample").expect("validated in forward");
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let (ho, wo) = (h * factor, w * factor);
    let dx = sink.slot(x);
    for (dplane, gplane) in dx.chunks_mut(h * w).zip(g.chunks(ho * wo)) {
        for (oy, a) in ty.iter().enumerate() {
            let (fy1, fy0) = (F::from_f64(a.frac), F::from_f64(1.0 - a.frac));
            for (ox, b) in tx.iter().enumerate() {
                let (fx1, fx0) = (F::from_f64(b.frac), F::from_f64(1.0 - b.frac));
                let gv = gplane[oy * wo + ox];
                dplane[a.lo * w + b.lo] += gv * fy0 * fx0;
                dplane[a.lo * w + b.hi] += gv * fy0 * fx1;
                dplane[a.hi * w + b.lo] += gv * fy1 * fx0;
                dplane[a.hi * w + b.hi] += gv * fy1 * fx1;
            }
        }
    }
}
