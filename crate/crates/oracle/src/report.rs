//! Randomized verification suite with a line-per-check text report.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discrete::{build_discrete_hali, floored_dirichlet, random_joint};
use crate::dist::{Conditional, FiniteDist};
use crate::divergence::{h, Generator};
use crate::error::Result;
use crate::theory::{check_lemma1, check_lemma2, check_prop1, check_prop2, SLACK};

#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    /// Random pairs per shape and generator for the divergence checks.
    pub trials: usize,
    /// Random encoder/decoder instances for the reconstruction bounds.
    pub hali_trials: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { trials: 1000, hali_trials: 500, seed: 7 }
    }
}

/// One checked quantity. `margin >= 0` means the check passed for every trial;
/// `statistic` is the worst observed value and `bound` what it is compared to.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteLine {
    pub name: String,
    pub statistic: f64,
    pub bound: f64,
    pub margin: f64,
    pub trials: usize,
    pub violations: usize,
}

impl SuiteLine {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

impl fmt::Display for SuiteLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\tstatistic={:.12e}\tbound={:.12e}\tmargin={:.6e}\tviolations={}/{}\t{}",
            self.name,
            self.statistic,
            self.bound,
            self.margin,
            self.violations,
            self.trials,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub lines: Vec<SuiteLine>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(SuiteLine::passed)
    }

    pub fn violations(&self) -> usize {
        self.lines.iter().map(|l| l.violations).sum()
    }

    pub fn line(&self, name: &str) -> Option<&SuiteLine> {
        self.lines.iter().find(|l| l.name == name)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# check\tstatistic\tbound\tmargin\tviolations\tresult")?;
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Tracks the tightest `upper - value` over many trials of `value <= upper`.
struct Tally {
    name: String,
    worst: Option<(f64, f64)>,
    trials: usize,
    violations: usize,
}

impl Tally {
    fn new(name: impl Into<String>) -> Self {
        Tally { name: name.into(), worst: None, trials: 0, violations: 0 }
    }

    /// Record `value <= upper` within `tol`.
    fn le(&mut self, value: f64, upper: f64, tol: f64) {
        self.trials += 1;
        let margin = upper - value;
        if !(margin >= -tol) {
            self.violations += 1;
        }
        if self.worst.is_none_or(|(v, u)| margin < u - v || margin.is_nan()) {
            self.worst = Some((value, upper));
        }
    }

    /// Record `|value - target| <= tol`.
    fn close(&mut self, value: f64, target: f64, tol: f64) {
        self.trials += 1;
        let err = (value - target).abs();
        if !(err <= tol) {
            self.violations += 1;
        }
        if self.worst.is_none_or(|(v, t)| err > (v - t).abs() || err.is_nan()) {
            self.worst = Some((value, target));
        }
    }

    fn finish(self) -> SuiteLine {
        let (statistic, bound) = self.worst.unwrap_or((0.0, 0.0));
        SuiteLine {
            name: self.name,
            statistic,
            bound,
            margin: bound - statistic,
            trials: self.trials,
            violations: self.violations,
        }
    }
}

const AXIS_NAMES: [&str; 3] = ["a", "b", "c"];

fn random_keep<'a, R: Rng>(names: &[&'a str], rng: &mut R) -> Vec<&'a str> {
    // Non-empty strict subset.
    let n = names.len();
    let mask = rng.random_range(1..(1u32 << n) - 1);
    names.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &s)| s).collect()
}

fn monotonicity_lines<R: Rng>(shape: &[usize], trials: usize, rng: &mut R) -> Result<Vec<SuiteLine>> {
    let axes: Vec<(&str, usize)> = AXIS_NAMES.iter().copied().zip(shape.iter().copied()).collect();
    let label = shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x");
    let mut tallies: Vec<Tally> = Generator::ALL.iter().map(|g| Tally::new(format!("monotonicity/{label}/{g}"))).collect();
    let mut nonneg = Tally::new(format!("nonnegativity/{label}"));
    let names: Vec<&str> = axes.iter().map(|a| a.0).collect();
    for _ in 0..trials {
        let p = random_joint(&axes, rng)?;
        let q = random_joint(&axes, rng)?;
        let keep = random_keep(&names, rng);
        for (g, tally) in Generator::ALL.into_iter().zip(&mut tallies) {
            let r = check_lemma1(&p, &q, &keep, g)?;
            tally.le(r.marginal, r.joint, SLACK);
            nonneg.le(0.0, r.joint, SLACK);
            nonneg.le(0.0, r.marginal, SLACK);
        }
    }
    let mut lines: Vec<SuiteLine> = tallies.into_iter().map(Tally::finish).collect();
    lines.push(nonneg.finish());
    Ok(lines)
}

/// Reference values for `p = (1/2, 1/2)`, `q = (1/4, 3/4)`.
pub const WORKED_KL: f64 = 0.14384;
pub const WORKED_CHI2: f64 = 0.33333;
pub const WORKED_K: f64 = 5.8858;
pub const WORKED_K_JS: f64 = 0.39816;

fn chain_lines<R: Rng>(trials: usize, rng: &mut R) -> Result<Vec<SuiteLine>> {
    let mut kl_log = Tally::new("chain/kl<=ln(1+chi2)");
    let mut log_chi = Tally::new("chain/ln(1+chi2)<=chi2");
    let mut chi_js = Tally::new("chain/chi2<=K*js");
    for _ in 0..trials {
        let n = rng.random_range(2..=6);
        let p = FiniteDist::new(floored_dirichlet(n, 0.0, rng))?;
        let q = FiniteDist::new(floored_dirichlet(n, 1e-3, rng))?;
        let r = check_lemma2(&p, &q)?;
        kl_log.le(r.kl, r.log1p_chi2, SLACK);
        log_chi.le(r.log1p_chi2, r.chi2, SLACK);
        chi_js.le(r.chi2, r.k_js(), SLACK);
    }
    let p = FiniteDist::new(vec![0.5, 0.5])?;
    let q = FiniteDist::new(vec![0.25, 0.75])?;
    let worked = check_lemma2(&p, &q)?;
    let mut lines: Vec<SuiteLine> = [kl_log, log_chi, chi_js].into_iter().map(Tally::finish).collect();
    for (name, value, target) in [
        ("worked/kl", worked.kl, WORKED_KL),
        ("worked/chi2", worked.chi2, WORKED_CHI2),
        ("worked/K", worked.bound.k, WORKED_K),
        ("worked/K*js", worked.k_js(), WORKED_K_JS),
    ] {
        let mut t = Tally::new(name);
        t.close(value, target, 1e-4);
        lines.push(t.finish());
    }
    let mut chain = Tally::new("worked/chi2<=K*js");
    chain.le(worked.chi2, worked.k_js(), SLACK);
    lines.push(chain.finish());
    Ok(lines)
}

fn h_monotone_line() -> SuiteLine {
    // Log-spaced grid on [1e-3, 100] plus points straddling t = 1.
    let mut grid: Vec<f64> = (0..=5000).map(|i| 10f64.powf(-3.0 + 5.0 * i as f64 / 5000.0)).collect();
    grid.extend([1.0 - 1e-6, 1.0, 1.0 + 1e-6]);
    grid.sort_by(|a, b| a.total_cmp(b));
    let mut t = Tally::new("h/non-decreasing");
    for w in grid.windows(2) {
        t.le(h(w[0]), h(w[1]), SLACK);
    }
    t.finish()
}

fn hali_lines<R: Rng>(trials: usize, rng: &mut R) -> Result<Vec<SuiteLine>> {
    let mut lines = Vec::new();
    let mut tallies: Vec<Tally> = Vec::new();
    for level in ["z1", "z2"] {
        for what in ["gap<=K*js", "gap=conditional-kl", "nll>=H", "nll-H=conditional-kl"] {
            tallies.push(Tally::new(format!("reconstruction/{level}/{what}")));
        }
    }
    for _ in 0..trials {
        let sizes = [rng.random_range(2..=4), rng.random_range(2..=4), rng.random_range(2..=4)];
        let inst = build_discrete_hali(sizes, rng)?;
        for (li, level) in ["z1", "z2"].into_iter().enumerate() {
            let t = &mut tallies[li * 4..li * 4 + 4];
            let r1 = check_prop1(&inst.encoder, &inst.decoder, level)?;
            t[0].le(r1.lhs, r1.rhs(), SLACK);
            t[1].close(r1.lhs, r1.conditional_kl, SLACK);
            let cond = Conditional::from_joint(&inst.decoder, "x", level)?;
            let r2 = check_prop2(&inst.encoder, &cond)?;
            t[2].le(r2.cond_entropy, r2.nll, SLACK);
            t[3].close(r2.gap, r2.conditional_kl, SLACK);
        }
    }
    lines.extend(tallies.into_iter().map(Tally::finish));
    Ok(lines)
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

/// Marginal-versus-joint monotonicity for every generator on the 2x2, 3x4 and
/// 2x3x2 shapes, `trials` random pairs each.
pub fn monotonicity_suite(trials: usize, seed: u64) -> Result<Vec<SuiteLine>> {
    let mut lines = Vec::new();
    for (k, shape) in [vec![2, 2], vec![3, 4], vec![2, 3, 2]].iter().enumerate() {
        lines.extend(monotonicity_lines(shape, trials, &mut stream(seed, k as u64))?);
    }
    Ok(lines)
}

/// The KL, chi-squared and JS chain on bounded pairs, the worked pair, and the
/// monotonicity of `h`.
pub fn chain_suite(trials: usize, seed: u64) -> Result<Vec<SuiteLine>> {
    let mut lines = chain_lines(trials, &mut stream(seed, 10))?;
    lines.push(h_monotone_line());
    Ok(lines)
}

/// Reconstruction gap and entropy bounds on random discrete hierarchies.
pub fn reconstruction_suite(trials: usize, seed: u64) -> Result<Vec<SuiteLine>> {
    hali_lines(trials, &mut stream(seed, 20))
}

/// Runs every check. Each family draws from its own seeded stream so that
/// changing one trial count does not perturb the others.
pub fn run_suite(opts: SuiteOptions) -> Result<SuiteReport> {
    let mut lines = monotonicity_suite(opts.trials, opts.seed)?;
    lines.extend(chain_suite(opts.trials, opts.seed)?);
    lines.extend(reconstruction_suite(opts.hali_trials, opts.seed)?);
    Ok(SuiteReport { lines })
}
