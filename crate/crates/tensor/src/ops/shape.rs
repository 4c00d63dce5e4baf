use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{GradSink, Graph, Node, Var};
use crate::tensor::{Element, Tensor};

impl<F: Element> Graph<F> {
    /// Concatenate along the channel axis (1); all other axes must agree.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| TensorError::arg("concat", "no inputs"))?);
        let n = first.batch();
        let rest: Vec<usize> = first.shape()[2..].to_vec();
        let spatial: usize = rest.iter().product();
        let mut channels = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() < 2 || s[0] != n {
                return Err(TensorError::Dimension { op: "concat", axis: "batch", expected: n, got: s[0] });
            }
            if s[2..] != rest[..] {
                let got = s[2..].iter().product();
                return Err(TensorError::Dimension { op: "concat", axis: "spatial", expected: spatial, got });
            }
            channels += s[1];
        }
        let mut out = Vec::with_capacity(n * channels * spatial);
        for s in 0..n {
            for &p in parts {
                let v = self.value(p);
                let per = v.per_sample();
                out.extend_from_slice(&v.data()[s * per..(s + 1) * per]);
            }
        }
        let mut shape = vec![n, channels];
        shape.extend(rest);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec() }))
    }

    /// Channels `start..start + len` of an `[N, C, ...]` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = *xv.shape().get(1).ok_or(TensorError::Rank { op: "slice", expected: 2, shape: xv.shape().to_vec() })?;
        if len == 0 || start + len > c {
            return Err(TensorError::Dimension { op: "slice", axis: "channels", expected: c, got: start + len });
        }
        let spatial = xv.per_sample() / c;
        let per = xv.per_sample();
        let mut out = Vec::with_capacity(xv.batch() * len * spatial);
        for s in 0..xv.batch() {
            let base = s * per + start * spatial;
            out.extend_from_slice(&xv.data()[base..base + len * spatial]);
        }
        let mut shape = xv.shape().to_vec();
        shape[1] = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::SliceChannels { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape { x }))
    }
}

pub(super) fn concat_backward<F: Element>(nodes: &[Node<F>], parts: &[Var], g: &[F], sink: &mut GradSink<'_, F>) {
    let n = nodes[parts[0].0].value.batch();
    let pers: Vec<usize> = parts.iter().map(|p| nodes[p.0].value.per_sample()).collect();
    let total: usize = pers.iter().sum();
    let mut offset = 0;
    for (&p, &per) in parts.iter().zip(&pers) {
        if sink.wants(p) {
            let d = sink.slot(p);
            for s in 0..n {
                let src = &g[s * total + offset..s * total + offset + per];
                for (a, &b) in d[s * per..(s + 1) * per].iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
        offset += per;
    }
}

pub(super) fn slice_backward<F: Element>(
    xv: &Tensor<F>,
    yv: &Tensor<F>,
    x: Var,
    start: usize,
    g: &[F],
    sink: &mut GradSink<'_, F>,
) {
    if !sink.wants(x) {
        return;
    }
    let c = xv.shape()[1];
    let spatial = xv.per_sample() / c;
    let (per_in, per_out) = (xv.per_sample(), yv.per_sample());
    let d = sink.slot(x);
    for s in 0..xv.batch() {
        let base = s * per_in + start * spatial;
        for (a, &b) in d[base..base + per_out].iter_mut().zip(&g[s * per_out..(s + 1) * per_out]) {
            *a += b;
        }
    }
}
