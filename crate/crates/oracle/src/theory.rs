//! Inequality checks between divergences, conditional entropies and
//! reconstruction costs, evaluated exactly on finite tables.

use crate::dist::{conditional_entropy, same_layout, Conditional, FiniteJoint, Table};
use crate::divergence::{compute_k, f_divergence, Generator, KBound};
use crate::error::{OracleError, Result};

/// Slack allowed on every inequality.
pub const SLACK: f64 = 1e-12;

/// Name of the data axis in encoder and decoder joints.
pub const DATA_AXIS: &str = "x";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonotonicityReport {
    pub joint: f64,
    pub marginal: f64,
    pub holds: bool,
}

/// Divergence between joints versus divergence between their marginals on `keep`.
pub fn check_lemma1(p: &FiniteJoint, q: &FiniteJoint, keep: &[&str], generator: Generator) -> Result<MonotonicityReport> {
    same_layout(p, q)?;
    if p.names() != q.names() {
        return Err(OracleError::Argument("joints must share axis names".into()));
    }
    let joint = f_divergence(p, q, generator)?;
    let marginal = f_divergence(&p.marginalize(keep)?, &q.marginalize(keep)?, generator)?;
    let holds = joint >= marginal - SLACK || joint == f64::INFINITY;
    Ok(MonotonicityReport { joint, marginal, holds })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainReport {
    pub kl: f64,
    pub chi2: f64,
    pub js: f64,
    pub bound: KBound,
    /// `ln(1 + chi2)`, the intermediate step between KL and chi-squared.
    pub log1p_chi2: f64,
    pub holds: bool,
}

impl ChainReport {
    pub fn k_js(&self) -> f64 {
        self.bound.k * self.js
    }
}

/// `KL <= ln(1 + chi2) <= chi2 <= K * JS` with `K` from [`compute_k`].
pub fn check_lemma2<T: Table>(p: &T, q: &T) -> Result<ChainReport> {
    let bound = compute_k(p, q)?;
    let kl = f_divergence(p, q, Generator::Kl)?;
    let chi2 = f_divergence(p, q, Generator::Chi2)?;
    let js = f_divergence(p, q, Generator::Js)?;
    let log1p_chi2 = chi2.ln_1p();
    let holds = kl <= log1p_chi2 + SLACK && log1p_chi2 <= chi2 + SLACK && chi2 <= bound.k * js + SLACK;
    Ok(ChainReport { kl, chi2, js, bound, log1p_chi2, holds })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelBoundReport {
    /// `E_q[-ln p(x|z)] - H_q(x|z)`.
    pub lhs: f64,
    /// `sum_z q(z) KL(q(x|z) || p(x|z))`, the same quantity summed in another order.
    pub conditional_kl: f64,
    pub k: f64,
    /// Divergence between the full joints.
    pub js: f64,
    /// Divergence between the `(x, z)` marginals.
    pub js_marginal: f64,
    pub kl_marginal: f64,
    pub chi2_marginal: f64,
    pub holds: bool,
}

impl LevelBoundReport {
    pub fn rhs(&self) -> f64 {
        self.k * self.js
    }
}

fn check_axes(encoder: &FiniteJoint, decoder: &FiniteJoint, level: &str) -> Result<()> {
    same_layout(encoder, decoder)?;
    if encoder.names() != decoder.names() {
        return Err(OracleError::Argument("encoder and decoder joints must share axes".into()));
    }
    if level == DATA_AXIS {
        return Err(OracleError::Argument("level must be a latent axis".into()));
    }
    encoder.axis_index(DATA_AXIS)?;
    encoder.axis_index(level)?;
    Ok(())
}

/// Expected negative decoder log-likelihood under the encoder's `(x, z)` marginal.
fn cross_entropy(q_xz: &FiniteJoint, p_x_given_z: &Conditional, level: &str) -> Result<f64> {
    let x_first = q_xz.axis_index(DATA_AXIS)? == 0;
    let (xs, zs) = (q_xz.size_of(DATA_AXIS)?, q_xz.size_of(level)?);
    let mut total = 0.0;
    for x in 0..xs {
        for z in 0..zs {
            let mass = if x_first { q_xz.at(&[x, z]) } else { q_xz.at(&[z, x]) };
            if mass > 0.0 {
                let p = p_x_given_z.prob(x, z);
                total += if p > 0.0 { -mass * p.ln() } else { f64::INFINITY };
            }
        }
    }
    Ok(total)
}

/// `sum_z q(z) KL(q(x|z) || p(x|z))`, accumulated row by row.
fn expected_conditional_kl(q_xz: &FiniteJoint, p_x_given_z: &Conditional, level: &str) -> Result<f64> {
    let q_cond = Conditional::from_joint(q_xz, DATA_AXIS, level)?;
    let q_z = q_xz.marginalize(&[level])?;
    let mut total = 0.0;
    for (z, &w) in q_z.table().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let kl: f64 = q_cond
            .row(z)
            .iter()
            .zip(p_x_given_z.row(z))
            .map(|(&a, &b)| if a == 0.0 { 0.0 } else if b == 0.0 { f64::INFINITY } else { a * (a / b).ln() })
            .sum();
        total += w * kl;
    }
    Ok(total)
}

/// Reconstruction-gap bound at latent `level`: the gap between the encoder's
/// expected decoder cost and its conditional entropy is at most `K * JS`,
/// with `K` computed on the `(x, z)` marginals using the decoder as the
/// bounded reference.
pub fn check_prop1(encoder: &FiniteJoint, decoder: &FiniteJoint, level: &str) -> Result<LevelBoundReport> {
    check_axes(encoder, decoder, level)?;
    let q_xz = encoder.marginalize(&[DATA_AXIS, level])?;
    let p_xz = decoder.marginalize(&[DATA_AXIS, level])?;
    let bound = compute_k(&q_xz, &p_xz)?;
    let p_cond = Conditional::from_joint(decoder, DATA_AXIS, level)?;
    let lhs = cross_entropy(&q_xz, &p_cond, level)? - conditional_entropy(encoder, DATA_AXIS, &[level])?;
    let conditional_kl = expected_conditional_kl(&q_xz, &p_cond, level)?;
    let js = f_divergence(encoder, decoder, Generator::Js)?;
    let js_marginal = f_divergence(&q_xz, &p_xz, Generator::Js)?;
    let kl_marginal = f_divergence(&q_xz, &p_xz, Generator::Kl)?;
    let chi2_marginal = f_divergence(&q_xz, &p_xz, Generator::Chi2)?;
    let holds = lhs <= bound.k * js + SLACK;
    Ok(LevelBoundReport { lhs, conditional_kl, k: bound.k, js, js_marginal, kl_marginal, chi2_marginal, holds })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyBoundReport {
    pub nll: f64,
    pub cond_entropy: f64,
    /// `nll - cond_entropy`.
    pub gap: f64,
    pub conditional_kl: f64,
    pub holds: bool,
}

/// The expected reconstruction cost `E_q[-ln p(x|z)]` never falls below `H_q(x|z)`.
pub fn check_prop2(encoder: &FiniteJoint, decoder_conditional: &Conditional) -> Result<EntropyBoundReport> {
    let level = decoder_conditional.given.name.as_str();
    if decoder_conditional.target.name != DATA_AXIS {
        return Err(OracleError::Argument(format!("conditional must be over `{DATA_AXIS}`")));
    }
    if encoder.size_of(DATA_AXIS)? != decoder_conditional.target.size
        || encoder.size_of(level)? != decoder_conditional.given.size
    {
        return Err(OracleError::ShapeMismatch {
            left: vec![encoder.size_of(DATA_AXIS)?, encoder.size_of(level)?],
            right: vec![decoder_conditional.target.size, decoder_conditional.given.size],
        });
    }
    let q_xz = encoder.marginalize(&[DATA_AXIS, level])?;
    let nll = cross_entropy(&q_xz, decoder_conditional, level)?;
    let cond_entropy = conditional_entropy(encoder, DATA_AXIS, &[level])?;
    let conditional_kl = expected_conditional_kl(&q_xz, decoder_conditional, level)?;
    let gap = nll - cond_entropy;
    Ok(EntropyBoundReport { nll, cond_entropy, gap, conditional_kl, holds: nll >= cond_entropy - SLACK })
}
