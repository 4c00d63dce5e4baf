use super::Op;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Mode, Var};
use crate::rng::SeededRng;
use crate::tensor::{Element, Tensor};

impl<F: Element> Graph<F> {
    /// Inverted dropout: in train mode each unit is kept with probability
    /// `retention` and rescaled by `1 / retention`; eval mode is the identity.
    pub fn dropout(&mut self, x: Var, retention: f64, mode: Mode, rng: &mut SeededRng) -> Result<Var> {
        if !(retention > 0.0 && retention <= 1.0) {
            return Err(TensorError::arg("dropout", format!("retention must lie in (0, 1], got {retention}")));
        }
        if mode == Mode::Eval || retention == 1.0 {
            return Ok(x);
        }
        let xv = self.value(x);
        let keep = F::from_f64(1.0 / retention);
        let mask: Vec<F> = (0..xv.numel())
            .map(|_| if rng.uniform() < retention { keep } else { F::zero() })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mask { x, mask }))
    }

    /// Additive i.i.d. `N(0, sigma^2)` noise in train mode; identity in eval mode.
    pub fn gaussian_noise(&mut self, x: Var, sigma: f64, mode: Mode, rng: &mut SeededRng) -> Result<Var> {
        if !(sigma >= 0.0) {
            return Err(TensorError::arg("gaussian_noise", format!("sigma must be >= 0, got {sigma}")));
        }
        if mode == Mode::Eval {
            return Ok(x);
        }
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| v + F::from_f64(rng.normal() * sigma))
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Identity { x }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_dropout_is_identity() {
        let mut g = Graph::<f32>::new();
        let mut rng = SeededRng::new(1);
        let x = g.constant(Tensor::from_fn([4, 5], |i| i as f32));
        let y = g.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn dropout_outputs_are_zero_or_rescaled() {
        let mut g = Graph::<f32>::new();
        let mut rng = SeededRng::new(2);
        let x = g.constant(Tensor::from_fn([1000], |i| 1.0 + i as f32));
        let y = g.dropout(x, 0.25, Mode::Train, &mut rng).unwrap();
        for (&o, &i) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!(o == 0.0 || o == i / 0.25, "{o} from {i}");
        }
    }

    #[test]
    fn retention_out_of_range_rejected() {
        let mut g = Graph::<f32>::new();
        let mut rng = SeededRng::new(3);
        let x = g.constant(Tensor::zeros([2]));
        for r in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(g.dropout(x, r, Mode::Train, &mut rng).is_err());
        }
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let mut g = Graph::<f32>::new();
        let mut rng = SeededRng::new(4);
        let x = g.constant(Tensor::from_fn([10], |i| i as f32 - 3.0));
        let y = g.gaussian_noise(x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn noise_same_seed_same_output() {
        let run = || {
            let mut g = Graph::<f32>::new();
            let mut rng = SeededRng::new(77);
            let x = g.constant(Tensor::zeros([64]));
            let y = g.gaussian_noise(x, 0.2, Mode::Train, &mut rng).unwrap();
            g.value(y).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn noise_gradient_is_identity() {
        let mut g = Graph::<f64>::new();
        let mut rng = SeededRng::new(5);
        let x = g.param(Tensor::zeros([1, 3]));
        let y = g.gaussian_noise(x, 1.0, Mode::Train, &mut rng).unwrap();
        let s = g.sum_per_sample(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }
}
