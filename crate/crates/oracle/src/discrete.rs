//! Random finite instances: Dirichlet tables and two-level encoder/decoder pairs.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::dist::{Axis, FiniteDist, FiniteJoint};
use crate::error::{OracleError, Result};

/// Floor applied to every sampled factor before renormalization.
pub const FACTOR_FLOOR: f64 = 1e-6;

/// Dirichlet(alpha, ..., alpha) draw via normalized Gamma variates.
pub fn dirichlet<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut v: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        v.iter_mut().for_each(|x| *x = 1.0 / n as f64);
    }
    v
}

/// Dirichlet draw with every entry raised to `floor`, then renormalized.
pub fn floored_dirichlet<R: Rng + ?Sized>(n: usize, floor: f64, rng: &mut R) -> Vec<f64> {
    let mut v = dirichlet(n, 1.0, rng);
    v.iter_mut().for_each(|x| *x = x.max(floor));
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Exact normalization after floating-point accumulation.
fn renormalize(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Uniformly random joint (flat Dirichlet) over the given axes.
pub fn random_joint<R: Rng + ?Sized>(axes: &[(&str, usize)], rng: &mut R) -> Result<FiniteJoint> {
    let axes: Vec<Axis> = axes.iter().map(|&(n, s)| Axis::new(n, s)).collect();
    let cells = axes.iter().map(|a| a.size).product();
    FiniteJoint::new(axes, dirichlet(cells, 1.0, rng))
}

/// Random distribution with every entry at least `floor` before renormalization.
pub fn random_bounded<R: Rng + ?Sized>(n: usize, floor: f64, rng: &mut R) -> Result<FiniteDist> {
    FiniteDist::new(floored_dirichlet(n, floor, rng))
}

/// An encoder joint `q(x) q(z1|x) q(z2|z1)` and a decoder joint
/// `p(z2) p(z1|z2) p(x|z1)` over axes `(x, z1, z2)`.
#[derive(Clone, Debug)]
pub struct DiscreteHali {
    pub encoder: FiniteJoint,
    pub decoder: FiniteJoint,
    /// The sampled data distribution `q(x)`.
    pub q_x: Vec<f64>,
}

/// Kernel rows `[from][to]`, each a floored Dirichlet draw.
fn kernel<R: Rng + ?Sized>(from: usize, to: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..from).map(|_| floored_dirichlet(to, FACTOR_FLOOR, rng)).collect()
}

pub fn build_discrete_hali<R: Rng + ?Sized>(sizes: [usize; 3], rng: &mut R) -> Result<DiscreteHali> {
    if sizes.iter().any(|&s| s < 2) {
        return Err(OracleError::Argument(format!("alphabet sizes must be >= 2, got {sizes:?}")));
    }
    let [nx, n1, n2] = sizes;
    let q_x = floored_dirichlet(nx, FACTOR_FLOOR, rng);
    let q_z1_x = kernel(nx, n1, rng);
    let q_z2_z1 = kernel(n1, n2, rng);
    let p_z2 = floored_dirichlet(n2, FACTOR_FLOOR, rng);
    let p_z1_z2 = kernel(n2, n1, rng);
    let p_x_z1 = kernel(n1, nx, rng);

    let axes = || vec![Axis::new("x", nx), Axis::new("z1", n1), Axis::new("z2", n2)];
    let mut enc = Vec::with_capacity(nx * n1 * n2);
    let mut dec = Vec::with_capacity(nx * n1 * n2);
    for x in 0..nx {
        for z1 in 0..n1 {
            for z2 in 0..n2 {
                enc.push(q_x[x] * q_z1_x[x][z1] * q_z2_z1[z1][z2]);
                dec.push(p_z2[z2] * p_z1_z2[z2][z1] * p_x_z1[z1][x]);
            }
        }
    }
    Ok(DiscreteHali {
        encoder: FiniteJoint::new(axes(), renormalize(enc))?,
        decoder: FiniteJoint::new(axes(), renormalize(dec))?,
        q_x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn small_alphabets_rejected() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(0);
        assert!(build_discrete_hali([2, 1, 2], &mut rng).is_err());
    }

    #[test]
    fn floored_entries_stay_positive() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        for _ in 0..100 {
            let v = floored_dirichlet(5, FACTOR_FLOOR, &mut rng);
            assert!(v.iter().all(|&x| x >= FACTOR_FLOOR / 2.0));
        }
    }
}
