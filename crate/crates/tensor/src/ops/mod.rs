//! Differentiable operations. Each submodule adds its forward methods to
//! [`Graph`](crate::Graph) and provides the matching backward rule.

mod conv;
mod norm;
mod pointwise;
mod reduce;
mod resample;
mod shape;
mod stochastic;

pub use pointwise::Activation;
pub use norm::RunningStats;
pub use conv::conv_out_dim;

use crate::graph::{GradSink, Node, Var};
use crate::tensor::Element;

pub(crate) enum Op<F> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Upsample { x: Var, factor: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, inv_std: Vec<F>, batch_stats: bool },
    WeightNorm { v: Var, g: Var, norms: Vec<F> },
    Unary { x: Var, kind: pointwise::Unary },
    Softmax { x: Var },
    Binary { a: Var, b: Var, kind: pointwise::Binary },
    Mask { x: Var, mask: Vec<F> },
    Identity { x: Var },
    Concat { parts: Vec<Var> },
    SliceChannels { x: Var, start: usize },
    Reshape { x: Var },
    SumPerSample { x: Var },
    MeanAll { x: Var },
    GaussLogDensity { mu: Var, sigma: Var, value: Var },
}

impl<F> Op<F> {
    pub fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::WeightNorm { v, g, .. } => vec![*v, *g],
            Op::Binary { a, b, .. } => vec![*a, *b],
            Op::Concat { parts } => parts.clone(),
            Op::GaussLogDensity { mu, sigma, value } => vec![*mu, *sigma, *value],
            Op::Upsample { x, .. }
            | Op::Unary { x, .. }
            | Op::Softmax { x }
            | Op::Mask { x, .. }
            | Op::Identity { x }
            | Op::SliceChannels { x, .. }
            | Op::Reshape { x }
            | Op::SumPerSample { x }
            | Op::MeanAll { x } => vec![*x],
        }
    }
}

pub(crate) fn backward<F: Element>(nodes: &[Node<F>], i: usize, g: &[F], sink: &mut GradSink<'_, F>) {
    let node = &nodes[i];
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d { x, w, b, stride, pad } => {
            conv::conv2d_backward(val(*x), val(*w), *x, *w, *b, *stride, *pad, &node.value, g, sink)
        }
        Op::Linear { x, w, b } => conv::linear_backward(val(*x), val(*w), *x, *w, *b, g, sink),
        Op::Upsample { x, factor } => resample::upsample_backward(val(*x), *x, *factor, g, sink),
        Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => norm::batch_norm_backward(
            val(*x),
            val(*gamma),
            (*x, *gamma, *beta),
            xhat,
            inv_std,
            *batch_stats,
            g,
            sink,
        ),
        Op::WeightNorm { v, g: gain, norms } => {
            norm::weight_norm_backward(val(*v), val(*gain), *v, *gain, norms, g, sink)
        }
        Op::Unary { x, kind } => pointwise::unary_backward(*kind, val(*x), &node.value, *x, g, sink),
        Op::Softmax { x } => pointwise::softmax_backward(&node.value, *x, g, sink),
        Op::Binary { a, b, kind } => pointwise::binary_backward(*kind, val(*a), val(*b), *a, *b, g, sink),
        Op::Mask { x, mask } => {
            if sink.wants(*x) {
                for ((s, &gi), &m) in sink.slot(*x).iter_mut().zip(g).zip(mask) {
                    *s += gi * m;
                }
            }
        }
        Op::Identity { x } | Op::Reshape { x } => sink.add(*x, g),
        Op::Concat { parts } => shape::concat_backward(nodes, parts, g, sink),
        Op::SliceChannels { x, start } => {
            shape::slice_backward(val(*x), &node.value, *x, *start, g, sink)
        }
        Op::SumPerSample { x } => reduce::sum_per_sample_backward(val(*x), *x, g, sink),
        Op::MeanAll { x } => reduce::mean_all_backward(val(*x), *x, g, sink),
        Op::GaussLogDensity { mu, sigma, value } => reduce::gauss_log_density_backward(
            (val(*mu), val(*sigma), val(*value)),
            (*mu, *sigma, *value),
            g,
            sink,
        ),
    }
}
