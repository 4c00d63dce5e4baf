//! Exact 64-bit f-divergences, entropies and bound checks on finite
//! probability tables.
//!
//! ```
//! use hali_oracle::{f_divergence, FiniteDist, Generator};
//!
//! let p = FiniteDist::new(vec![0.5, 0.5]).unwrap();
//! let q = FiniteDist::new(vec![0.25, 0.75]).unwrap();
//! let kl = f_divergence(&p, &q, Generator::Kl).unwrap();
//! assert!((kl - 0.143841).abs() < 1e-6);
//! ```

mod discrete;
mod dist;
mod divergence;
mod error;
mod report;
mod theory;

pub use discrete::{build_discrete_hali, dirichlet, floored_dirichlet, random_bounded, random_joint, DiscreteHali, FACTOR_FLOOR};
pub use dist::{conditional_entropy, entropy, Axis, Conditional, FiniteDist, FiniteJoint, Table, TOL};
pub use divergence::{compute_k, f_divergence, h, js_half_mixture, Generator, KBound, BOUNDEDNESS_FLOOR};
pub use error::{OracleError, Result};
pub use report::{chain_suite, monotonicity_suite, reconstruction_suite, run_suite, SuiteLine, SuiteOptions, SuiteReport};
pub use theory::{
    check_lemma1, check_lemma2, check_prop1, check_prop2, ChainReport, EntropyBoundReport, LevelBoundReport,
    MonotonicityReport, DATA_AXIS, SLACK,
};
