use std::fmt;
use std::str::FromStr;

use crate::dist::{same_layout, Table};
use crate::error::{OracleError, Result};

/// f-divergence generators. `D_f(p || q) = sum_i q_i f(p_i / q_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Generator {
    /// `f(t) = t ln t`
    Kl,
    /// `f(t) = (t - 1)^2`
    Chi2,
    /// `f(t) = t ln(2t / (t + 1)) + ln(2 / (t + 1))`, twice the half-mixture
    /// Jensen-Shannon divergence.
    Js,
}

impl Generator {
    pub const ALL: [Generator; 3] = [Generator::Kl, Generator::Chi2, Generator::Js];

    /// `f(t)` for `t >= 0`.
    pub fn eval(self, t: f64) -> f64 {
        match self {
            Generator::Kl => {
                if t == 0.0 {
                    0.0
                } else {
                    t * t.ln()
                }
            }
            Generator::Chi2 => (t - 1.0) * (t - 1.0),
            Generator::Js => f_js(t),
        }
    }

    /// One summand `q f(p / q)`, with the limits `0 f(0/0) = 0` and
    /// `0 f(p/0) = p lim_{t->inf} f(t)/t`.
    fn term(self, p: f64, q: f64) -> f64 {
        if p == 0.0 && q == 0.0 {
            return 0.0;
        }
        match self {
            Generator::Kl => {
                if p == 0.0 {
                    0.0
                } else if q == 0.0 {
                    f64::INFINITY
                } else {
                    p * (p / q).ln()
                }
            }
            Generator::Chi2 => {
                if q == 0.0 {
                    f64::INFINITY
                } else {
                    (p - q) * (p - q) / q
                }
            }
            // Symmetric closed form; finite everywhere.
            Generator::Js => {
                let m = p + q;
                let a = if p > 0.0 { p * (2.0 * p / m).ln() } else { 0.0 };
                let b = if q > 0.0 { q * (2.0 * q / m).ln() } else { 0.0 };
                a + b
            }
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Generator::Kl => "kl",
            Generator::Chi2 => "chi2",
            Generator::Js => "js",
        })
    }
}

impl FromStr for Generator {
    type Err = OracleError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(Generator::Kl),
            "chi2" => Ok(Generator::Chi2),
            "js" => Ok(Generator::Js),
            other => Err(OracleError::Argument(format!("unknown generator `{other}`"))),
        }
    }
}

fn f_js(t: f64) -> f64 {
    let u = t - 1.0;
    if u.abs() < 1e-4 {
        // Taylor expansion about t = 1: f'' = 1/2, f''' = -3/4, f'''' = 7/4, f''''' = -45/8.
        return u * u * (0.25 + u * (-0.125 + u * (7.0 / 96.0 - u * 0.046875)));
    }
    if t == 0.0 {
        return std::f64::consts::LN_2;
    }
    let w = u / (t + 1.0);
    t * w.ln_1p() + (-w).ln_1p()
}

/// `sum q f(p / q)`. Infinite when `p` puts mass where `q` has none and the
/// generator grows superlinearly (KL, chi-squared).
pub fn f_divergence<T: Table>(p: &T, q: &T, generator: Generator) -> Result<f64> {
    same_layout(p, q)?;
    Ok(p.probs().iter().zip(q.probs()).map(|(&a, &b)| generator.term(a, b)).sum())
}

/// Jensen-Shannon divergence with the half-mixture convention,
/// `1/2 KL(p || m) + 1/2 KL(q || m)`, `m = (p + q) / 2`.
pub fn js_half_mixture<T: Table>(p: &T, q: &T) -> Result<f64> {
    Ok(0.5 * f_divergence(p, q, Generator::Js)?)
}

/// `h(t) = f_chi2(t) / f_js(t)`, continuous at `t = 1` with value 4.
pub fn h(t: f64) -> f64 {
    if t == 1.0 {
        return 4.0;
    }
    let u = t - 1.0;
    if u.abs() < 1e-4 {
        return 1.0 / (0.25 + u * (-0.125 + u * (7.0 / 96.0 - u * 0.046875)));
    }
    u * u / f_js(t)
}

/// Smallest admissible reference probability.
pub const BOUNDEDNESS_FLOOR: f64 = 1e-9;

/// Constant for `chi2(p || q) <= K * JS(p || q)` on a reference `q` bounded below by `c1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KBound {
    pub c1: f64,
    pub c2: f64,
    pub k: f64,
}

/// `c1 = min q`, `c2 = max p / c1`, `K = h(c2)`.
pub fn compute_k<T: Table>(p: &T, q: &T) -> Result<KBound> {
    same_layout(p, q)?;
    if let Some((index, &value)) = q.probs().iter().enumerate().find(|(_, &v)| v < BOUNDEDNESS_FLOOR) {
        return Err(OracleError::Boundedness { index, value, floor: BOUNDEDNESS_FLOOR });
    }
    let c1 = q.probs().iter().copied().fold(f64::INFINITY, f64::min);
    let pmax = p.probs().iter().copied().fold(0.0, f64::max);
    let c2 = pmax / c1;
    Ok(KBound { c1, c2, k: h(c2) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::FiniteDist;

    #[test]
    fn generator_values() {
        assert_eq!(Generator::Kl.eval(1.0), 0.0);
        assert_eq!(Generator::Chi2.eval(3.0), 4.0);
        assert!(f_js(1.0).abs() < 1e-300);
        assert!((f_js(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn series_and_closed_form_agree_at_switch() {
        for t in [1.0 - 1.0001e-4, 1.0 + 1.0001e-4, 1.0 - 0.9999e-4, 1.0 + 0.9999e-4] {
            let u: f64 = t - 1.0;
            let series = u * u * (0.25 + u * (-0.125 + u * (7.0 / 96.0 - u * 0.046875)));
            let w = u / (t + 1.0);
            let closed = t * w.ln_1p() + (-w).ln_1p();
            assert!((series - closed).abs() / closed < 1e-8, "{t}: {series} vs {closed}");
        }
    }

    #[test]
    fn infinite_when_support_missing() {
        let p = FiniteDist::new(vec![0.5, 0.5]).unwrap();
        let q = FiniteDist::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(f_divergence(&p, &q, Generator::Kl).unwrap(), f64::INFINITY);
        assert_eq!(f_divergence(&p, &q, Generator::Chi2).unwrap(), f64::INFINITY);
        assert!(f_divergence(&p, &q, Generator::Js).unwrap().is_finite());
    }

    #[test]
    fn shape_mismatch_is_error() {
        let p = FiniteDist::uniform(2).unwrap();
        let q = FiniteDist::uniform(3).unwrap();
        assert!(matches!(f_divergence(&p, &q, Generator::Kl), Err(OracleError::ShapeMismatch { .. })));
    }

    #[test]
    fn unbounded_reference_rejected() {
        let p = FiniteDist::uniform(2).unwrap();
        let q = FiniteDist::new(vec![1.0 - 1e-12, 1e-12]).unwrap();
        assert!(matches!(compute_k(&p, &q), Err(OracleError::Boundedness { index: 1, .. })));
    }

    #[test]
    fn generator_names_roundtrip() {
        for g in Generator::ALL {
            assert_eq!(g.to_string().parse::<Generator>().unwrap(), g);
        }
        assert!("tv".parse::<Generator>().is_err());
    }
}
