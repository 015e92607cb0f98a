//! Hybrid symbolic and numeric solver for linear age-structured transport with
//! a renewal boundary condition and Dirac-derivative data.

pub mod characteristics;
pub mod cli;
pub mod error;
pub mod expr;
pub mod function;
pub mod jet;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod report;
pub mod singular;
pub mod smooth_solver;
pub mod testfn;

pub use error::{Error, Result};
pub use model::{load_config, parse_config, DataAtom, ModelConfig, Numerics};
