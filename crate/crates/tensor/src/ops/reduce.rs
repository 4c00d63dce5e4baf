use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{GradSink, Graph, Var};
use crate::tensor::{Element, Tensor};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

impl<F: Element> Graph<F> {
    /// Sum over all non-batch axes: `[N, ...] -> [N]`.
    pub fn sum_per_sample(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let per = xv.per_sample();
        let data = xv.data().chunks(per).map(|row| F::from_f64(row.iter().map(|v| v.as_f64()).sum())).collect();
        let value = Tensor::new([xv.batch()], data)?;
        Ok(self.push(value, Op::SumPerSample { x }))
    }

    /// Mean of every element, as a scalar.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mean = xv.data().iter().map(|v| v.as_f64()).sum::<f64>() / xv.numel() as f64;
        Ok(self.push(Tensor::scalar(F::from_f64(mean)), Op::MeanAll { x }))
    }

    /// Diagonal Gaussian log-density summed over each sample's dimensions:
    /// `sum_i -0.5 ln(2 pi sigma_i^2) - (v_i - mu_i)^2 / (2 sigma_i^2)`.
    pub fn gaussian_log_density(&mut self, mu: Var, sigma: Var, value: Var) -> Result<Var> {
        let (m, s, v) = (self.value(mu), self.value(sigma), self.value(value));
        for (t, axis) in [(s, "sigma"), (v, "value")] {
            if t.shape() != m.shape() {
                return Err(TensorError::Dimension {
                    op: "gaussian_log_density",
                    axis,
                    expected: m.numel(),
                    got: t.numel(),
                });
            }
        }
        let per = m.per_sample();
        let mut out = Vec::with_capacity(m.batch());
        for b in 0..m.batch() {
            let mut acc = 0.0f64;
            for i in b * per..(b + 1) * per {
                let sd = s.data()[i].as_f64();
                let z = (v.data()[i].as_f64() - m.data()[i].as_f64()) / sd;
                acc += -HALF_LN_2PI - sd.ln() - 0.5 * z * z;
            }
            out.push(F::from_f64(acc));
        }
        let t = Tensor::new([m.batch()], out)?;
        Ok(self.push(t, Op::GaussLogDensity { mu, sigma, value }))
    }
}

pub(super) fn sum_per_sample_backward<F: Element>(xv: &Tensor<F>, x: Var, g: &[F], sink: &mut GradSink<'_, F>) {
    if sink.wants(x) {
        let per = xv.per_sample();
        for (row, &gi) in sink.slot(x).chunks_mut(per).zip(g) {
            row.iter_mut().for_each(|d| *d += gi);
        }
    }
}

pub(super) fn mean_all_backward<F: Element>(xv: &Tensor<F>, x: Var, g: &[F], sink: &mut GradSink<'_, F>) {
    if sink.wants(x) {
        let share = g[0] / F::from_f64(xv.numel() as f64);
        sink.slot(x).iter_mut().for_each(|d| *d += share);
    }
}

pub(super) fn gauss_log_density_backward<F: Element>(
    (m, s, v): (&Tensor<F>, &Tensor<F>, &Tensor<F>),
    (mu, sigma, value): (Var, Var, Var),
    g: &[F],
    sink: &mut GradSink<'_, F>,
) {
    let per = m.per_sample();
    let n = m.numel();
    let mut dmu = vec![F::zero(); n];
    let mut dsig = vec![F::zero(); n];
    for i in 0..n {
        let gi = g[i / per];
        let sd = s.data()[i];
        let diff = v.data()[i] - m.data()[i];
        let inv_var = F::one() / (sd * sd);
        dmu[i] = gi * diff * inv_var;
        dsig[i] = gi * (diff * diff * inv_var - F::one()) / sd;
    }
    sink.add(mu, &dmu);
    sink.add(sigma, &dsig);
    if sink.wants(value) {
        for (d, &x) in sink.slot(value).iter_mut().zip(&dmu) {
            *d -= x;
        }
    }
}
