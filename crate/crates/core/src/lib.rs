//! Multivariate Student-t Markov-switching models and joint tail-risk
//! measures.
//!
//! The crate fits an `L`-state hidden Markov model with multivariate
//! Student-t emissions to a panel of sector returns, builds the one-step
//! predictive mixture at every date, and evaluates Multiple-CoVaR and
//! Multiple-CoES (a sector's VaR/ES conditional on a set of other sectors
//! sitting at their own tail levels), their delta versions, and the Shapley
//! attribution of total co-risk across contributing sectors.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod attribution;
pub mod cli;
pub mod corisk;
pub mod error;
pub mod ingest;
pub mod linalg;
pub mod msmodel;
pub mod predictive;
pub mod sim;
pub mod tdist;

pub use error::{Error, Result};

/// Version tag carried by every CSV and JSON output.
pub const SCHEMA_VERSION: u32 = 1;

/// Leading comment line of CSV outputs; readers treat `#` lines as comments.
pub(crate) fn write_schema_line<W: std::io::Write>(out: &mut W) -> Result<()> {
    writeln!(out, "# schema-version: {SCHEMA_VERSION}").map_err(|e| Error::io("<output>", e))
}
