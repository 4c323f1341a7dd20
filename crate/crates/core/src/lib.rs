//! Batched high-dimensional contextual bandits with teamwork/selfish LASSO
//! allocation.
//!
//! - [`lasso`]: coordinate-descent LASSO with KKT certificates.
//! - [`environment`]: sparse linear treatment worlds and their oracle.
//! - [`scheduler`]: the power-of-two teamwork schedule and theory constants.
//! - [`agent`]: the teamwork LASSO bandit policy.
//! - [`diagnostics`]: checks of the deviation bounds and the good event.
//! - [`harness`]: episodes, replication grids and CSV output.

pub mod agent;
pub mod diagnostics;
pub mod environment;
pub mod error;
pub mod harness;
pub mod lasso;
pub mod scheduler;

pub use error::{Error, Result};
