//! Non-negative sparse regression with exact support recovery guarantees.
//!
//! The crate solves the non-negative lasso (and NNLS, its `γ = 0` case),
//! evaluates the coherence metrics and model-recovery conditions that predict
//! whether the solver identifies exactly the atoms that generated a signal,
//! and provides a brute-force oracle plus a synthetic benchmark to check
//! those predictions.
//!
//! Module map:
//! - [`linalg`]: dictionaries, supports, pseudoinverses and projectors.
//! - [`solvers`]: splitting and active-set solvers, KKT certificates.
//! - [`conditions`]: ERC/PSC/PERC and the recovery conditions.
//! - [`oracle`]: exhaustive support enumeration.
//! - [`bench`]: synthetic instances, batch confusion matrices, γ sweeps.

pub mod bench;
pub mod conditions;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod serde_vec;
pub mod solvers;

pub use error::{Error, Result};
pub use linalg::{Dictionary, GroundTruth, Observation, SubdictionaryCache, Support};
pub use solvers::{Problem, Solution, SolverOptions};
