//! Central finite-difference oracle for reverse-mode gradients.
//!
//! The function under test is re-evaluated from scratch for every perturbed
//! input element, so the numeric side never touches the backward rules.

use crate::error::Result;
use crate::graph::{Graph, Mode, Var};
use crate::ops::{Activation, RunningStats};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub rel_tol: f64,
    /// Absolute differences at or below this count as agreement near zero.
    pub abs_floor: f64,
    /// Seed for the random cotangent used when the output is not scalar.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-3, rel_tol: 1e-3, abs_floor: 1e-5, seed: 0x5eed }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub failures: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.failures += other.failures;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Compare analytic gradients of `f` against central differences for every
/// element of every input.
///
/// A non-scalar output is reduced with a fixed random projection `sum_i w_i y_i`
/// evaluated in f64 outside the graph; the analytic side backpropagates `w`.
pub fn check_gradients<B>(inputs: &[Tensor<f64>], f: B, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let numel = g.value(out).numel();
    let weights: Vec<f64> = if numel == 1 {
        vec![1.0]
    } else {
        let mut rng = SeededRng::new(opts.seed);
        rng.normal_vec(numel, 1.0)
    };
    g.backward_with_seed(out, weights.clone())?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data().iter().zip(&weights).map(|(y, w)| y * w).sum())
    };

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + opts.step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - opts.step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[i][j];
            let diff = (a - numeric).abs();
            report.checked += 1;
            if diff <= opts.abs_floor {
                continue;
            }
            let rel = diff / a.abs().max(numeric.abs());
            if rel > opts.rel_tol {
                report.failures += 1;
            }
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(Mismatch { input: i, index: j, analytic: a, numeric });
            }
        }
    }
    Ok(report)
}

/// Uniform values on `[-2, 2]`, the range used throughout the gradient suite.
pub fn random_input(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform() * 4.0 - 2.0)
}

/// A named gradient check in a suite.
pub type SuiteEntry = (String, GradCheckReport);

fn run_case<B>(out: &mut Vec<SuiteEntry>, name: &str, inputs: Vec<Tensor<f64>>, build: B) -> Result<()>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    out.push((name.to_string(), check_gradients(&inputs, build, GradCheckOptions::default())?));
    Ok(())
}

/// Maps `[-2, 2]` onto `[0.5, 2]`.
fn positive(mut t: Tensor<f64>) -> Tensor<f64> {
    t.data_mut().iter_mut().for_each(|x| *x = 1.25 + 0.375 * *x);
    t
}

/// Every differentiable op on random inputs from `[-2, 2]` (strictly positive
/// where the op requires it), one entry per case.
pub fn op_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = SeededRng::new(seed);
    let mut rand = |shapes: &[&[usize]]| -> Vec<Tensor<f64>> { shapes.iter().map(|s| random_input(s, &mut rng)).collect() };
    let mut out = Vec::new();
    let o = &mut out;
    run_case(o, "conv2d", rand(&[&[2, 3, 6, 6], &[4, 3, 3, 3], &[4]]), |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1))?;
    run_case(o, "conv2d_strided", rand(&[&[2, 2, 7, 7], &[3, 2, 3, 3]]), |g, v| g.conv2d(v[0], v[1], None, 2, 1))?;
    run_case(o, "conv2d_valid", rand(&[&[2, 2, 4, 4], &[3, 2, 4, 4], &[3]]), |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 0))?;
    run_case(o, "linear", rand(&[&[3, 5], &[4, 5], &[4]]), |g, v| g.linear(v[0], v[1], Some(v[2])))?;
    run_case(o, "upsample_bilinear", rand(&[&[2, 2, 3, 4]]), |g, v| g.upsample_bilinear(v[0], 2))?;
    run_case(o, "batch_norm_train", rand(&[&[4, 3, 2, 2], &[3], &[3]]), |g, v| {
        g.batch_norm(v[0], v[1], v[2], &mut RunningStats::new(3), Mode::Train)
    })?;
    run_case(o, "batch_norm_eval", rand(&[&[4, 3, 2, 2], &[3], &[3]]), |g, v| {
        let mut stats = RunningStats { mean: vec![0.1, -0.2, 0.3], var: vec![0.5, 1.5, 2.0], momentum: 0.1, eps: 1e-5 };
        g.batch_norm(v[0], v[1], v[2], &mut stats, Mode::Eval)
    })?;
    run_case(o, "weight_norm", rand(&[&[3, 2, 3, 3], &[3]]), |g, v| g.weight_norm(v[0], v[1]))?;
    for (name, act) in [
        ("leaky_relu", Activation::leaky()),
        ("tanh", Activation::Tanh),
        ("sigmoid", Activation::Sigmoid),
        ("softmax", Activation::Softmax),
    ] {
        run_case(o, name, rand(&[&[3, 6]]), move |g, v| Ok(g.activation(v[0], act)))?;
    }
    run_case(o, "softplus", rand(&[&[4, 5]]), |g, v| Ok(g.softplus(v[0])))?;
    run_case(o, "exp", rand(&[&[4, 5]]), |g, v| Ok(g.exp(v[0])))?;
    let pos = rand(&[&[3, 4]]).into_iter().map(positive).collect();
    run_case(o, "log_clamped", pos, |g, v| Ok(g.log_clamped(v[0], 1e-7)))?;
    run_case(o, "add_sub_mul_affine", rand(&[&[3, 4], &[3, 4]]), |g, v| {
        let a = g.add(v[0], v[1])?;
        let m = g.mul(a, v[1])?;
        let s = g.sub(m, v[0])?;
        Ok(g.affine(s, -0.7, 0.3))
    })?;
    run_case(o, "dropout", rand(&[&[4, 6]]), |g, v| g.dropout(v[0], 0.5, Mode::Train, &mut SeededRng::new(99)))?;
    run_case(o, "gaussian_noise", rand(&[&[4, 6]]), |g, v| g.gaussian_noise(v[0], 0.2, Mode::Train, &mut SeededRng::new(98)))?;
    run_case(o, "concat_slice_reshape", rand(&[&[2, 2, 3, 3], &[2, 1, 3, 3]]), |g, v| {
        let c = g.concat_channels(&[v[0], v[1]])?;
        let s = g.slice_channels(c, 1, 2)?;
        g.reshape(s, &[2, 18])
    })?;
    run_case(o, "sum_per_sample", rand(&[&[3, 2, 2]]), |g, v| g.sum_per_sample(v[0]))?;
    run_case(o, "mean_all", rand(&[&[3, 2, 2]]), |g, v| g.mean_all(v[0]))?;
    let mut ld = rand(&[&[3, 4], &[3, 4], &[3, 4]]);
    ld[1] = positive(ld[1].clone());
    run_case(o, "gaussian_log_density", ld, |g, v| g.gaussian_log_density(v[0], v[1], v[2]))?;
    Ok(out)
}
