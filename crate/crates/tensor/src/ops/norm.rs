use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{GradSink, Graph, Mode, Var};
use crate::tensor::{Element, Tensor};

/// Per-channel running statistics used by batch normalization in eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub momentum: f64,
    pub eps: f64,
}

impl RunningStats {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// `(channels, spatial)` for an `[N, C, ...]` tensor.
fn channel_layout<F: Element>(x: &Tensor<F>) -> Result<(usize, usize, usize)> {
    if x.shape().len() < 2 {
        return Err(TensorError::Rank { op: "batch_norm", expected: 2, shape: x.shape().to_vec() });
    }
    let n = x.shape()[0];
    let c = x.shape()[1];
    Ok((n, c, x.numel() / (n * c)))
}

impl<F: Element> Graph<F> {
    /// Batch normalization over every axis except the channel axis (1).
    ///
    /// Train mode normalizes with the biased batch variance and folds the
    /// batch mean and unbiased variance into `stats`; eval mode uses `stats`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, spatial) = channel_layout(xv)?;
        for (v, axis) in [(gamma, "gamma"), (beta, "beta")] {
            let len = self.value(v).numel();
            if len != c {
                return Err(TensorError::Dimension { op: "batch_norm", axis, expected: c, got: len });
            }
        }
        if stats.channels() != c {
            return Err(TensorError::Dimension {
                op: "batch_norm",
                axis: "running_stats",
                expected: c,
                got: stats.channels(),
            });
        }
        let eps = stats.eps;
        let m = (n * spatial) as f64;
        let data = xv.data();
        let mut mean = vec![0.0f64; c];
        let mut inv_std = vec![F::zero(); c];
        let batch_stats = mode == Mode::Train;
        if batch_stats {
            let mut var = vec![0.0f64; c];
            for s in 0..n {
                for (ch, mu) in mean.iter_mut().enumerate() {
                    let start = (s * c + ch) * spatial;
                    *mu += data[start..start + spatial].iter().map(|v| v.as_f64()).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|mu| *mu /= m);
            for s in 0..n {
                for ch in 0..c {
                    let start = (s * c + ch) * spatial;
                    var[ch] += data[start..start + spatial]
                        .iter()
                        .map(|v| (v.as_f64() - mean[ch]).powi(2))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
            let mom = stats.momentum;
            for ch in 0..c {
                inv_std[ch] = F::from_f64(1.0 / (var[ch] + eps).sqrt());
                let unbiased = if m > 1.0 { var[ch] * m / (m - 1.0) } else { var[ch] };
                stats.mean[ch] = ((1.0 - mom) * stats.mean[ch] as f64 + mom * mean[ch]) as f32;
                stats.var[ch] = ((1.0 - mom) * stats.var[ch] as f64 + mom * unbiased) as f32;
            }
        } else {
            for ch in 0..c {
                mean[ch] = stats.mean[ch] as f64;
                inv_std[ch] = F::from_f64(1.0 / (stats.var[ch] as f64 + eps).sqrt());
            }
        }
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![F::zero(); data.len()];
        let mut out = vec![F::zero(); data.len()];
        for s in 0..n {
            for ch in 0..c {
                let mu = F::from_f64(mean[ch]);
                let start = (s * c + ch) * spatial;
                for i in start..start + spatial {
                    let h = (data[i] - mu) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }))
    }

    /// Weight normalization: `w[o] = g[o] * v[o] / |v[o]|` for each output unit `o`.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let vv = self.value(v);
        let gv = self.value(g);
        let units = vv.shape()[0];
        if gv.numel() != units {
            return Err(TensorError::Dimension { op: "weight_norm", axis: "gain", expected: units, got: gv.numel() });
        }
        let per = vv.numel() / units;
        let mut norms = Vec::with_capacity(units);
        let mut out = Vec::with_capacity(vv.numel());
        for (o, row) in vv.data().chunks(per).enumerate() {
            let norm = row.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(TensorError::DegenerateDirection { unit: o, norm });
            }
            let scale = gv.data()[o] / F::from_f64(norm);
            out.extend(row.iter().map(|&x| x * scale));
            norms.push(F::from_f64(norm));
        }
        let value = Tensor::new(vv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::WeightNorm { v, g, norms }))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn batch_norm_backward<F: Element>(
    xv: &Tensor<F>,
    gammav: &Tensor<F>,
    (x, gamma, beta): (Var, Var, Var),
    xhat: &[F],
    inv_std: &[F],
    batch_stats: bool,
    g: &[F],
    sink: &mut GradSink<'_, F>,
) {
    let (n, c, spatial) = channel_layout(xv).expect("validated in forward");
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let start = (s * c + ch) * spatial;
            for i in start..start + spatial {
                dgamma[ch] += g[i] * xhat[i];
                dbeta[ch] += g[i];
            }
        }
    }
    if sink.wants(x) {
        let gam = gammav.data();
        let m = F::from_f64((n * spatial) as f64);
        let dx = sink.slot(x);
        for ch in 0..c {
            // sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
            let (s1, s2) = (gam[ch] * dbeta[ch], gam[ch] * dgamma[ch]);
            for s in 0..n {
                let start = (s * c + ch) * spatial;
                for i in start..start + spatial {
                    let dxhat = g[i] * gam[ch];
                    dx[i] += if batch_stats {
                        inv_std[ch] * (dxhat - (s1 + xhat[i] * s2) / m)
                    } else {
                        inv_std[ch] * dxhat
                    };
                }
            }
        }
    }
    sink.add(gamma, &dgamma);
    sink.add(beta, &dbeta);
}

pub(super) fn weight_norm_backward<F: Element>(
    vv: &Tensor<F>,
    gv: &Tensor<F>,
    v: Var,
    g_var: Var,
    norms: &[F],
    g: &[F],
    sink: &mut GradSink<'_, F>,
) {
    let units = norms.len();
    let per = vv.numel() / units;
    let mut dgain = vec![F::zero(); units];
    let mut dv = vec![F::zero(); vv.numel()];
    for o in 0..units {
        let row = &vv.data()[o * per..(o + 1) * per];
        let grow = &g[o * per..(o + 1) * per];
        let norm = norms[o];
        let proj: F = row.iter().zip(grow).map(|(&a, &b)| a * b).sum::<F>() / norm;
        dgain[o] = proj;
        let scale = gv.data()[o] / norm;
        for i in 0..per {
            dv[o * per + i] = scale * (grow[i] - proj * row[i] / norm);
        }
    }
    sink.add(g_var, &dgain);
    sink.add(v, &dv);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_batch_normalizes_to_zero() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full([4, 2, 3, 3], 7.5));
        let gamma = g.constant(Tensor::full([2], 1.0));
        let beta = g.constant(Tensor::zeros([2]));
        let mut stats = RunningStats::new(2);
        let y = g.batch_norm(x, gamma, beta, &mut stats, Mode::Train).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_sample_zero_variance_is_finite() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::full([1, 3], 2.0));
        let gamma = g.param(Tensor::full([3], 1.0));
        let beta = g.param(Tensor::zeros([3]));
        let mut stats = RunningStats::new(3);
        let y = g.batch_norm(x, gamma, beta, &mut stats, Mode::Train).unwrap();
        g.value(y).check_finite("bn").unwrap();
        let l = g.mean_all(y).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new([2, 1], vec![1.0, 3.0]).unwrap());
        let gamma = g.constant(Tensor::full([1], 1.0));
        let beta = g.constant(Tensor::zeros([1]));
        let mut stats = RunningStats::new(1);
        g.batch_norm(x, gamma, beta, &mut stats, Mode::Train).unwrap();
        // batch mean 2, unbiased variance 2
        assert!((stats.mean[0] - 0.2).abs() < 1e-7);
        assert!((stats.var[0] - (0.9 + 0.2)).abs() < 1e-6);
    }

    #[test]
    fn eval_uses_running_stats() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new([1, 1], vec![5.0]).unwrap());
        let gamma = g.constant(Tensor::full([1], 2.0));
        let beta = g.constant(Tensor::full([1], 1.0));
        let mut stats = RunningStats { mean: vec![1.0], var: vec![4.0], momentum: 0.1, eps: 0.0 };
        let y = g.batch_norm(x, gamma, beta, &mut stats, Mode::Eval).unwrap();
        assert_eq!(g.value(y).data(), &[5.0]);
        assert_eq!(stats.mean, vec![1.0]);
    }

    #[test]
    fn weight_norm_unit_vector() {
        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::new([1, 2], vec![3.0, 4.0]).unwrap());
        let gain = g.constant(Tensor::full([1], 1.0));
        let w = g.weight_norm(v, gain).unwrap();
        let d = g.value(w).data();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn weight_norm_rejects_zero_direction() {
        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::zeros([2, 3]));
        let gain = g.constant(Tensor::full([2], 1.0));
        assert!(matches!(g.weight_norm(v, gain), Err(TensorError::DegenerateDirection { unit: 0, .. })));
    }
}
