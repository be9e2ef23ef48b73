//! Intertwining relations, Stein factors and mixture bounds for birth-death
//! processes on the non-negative integers.
//!
//! A birth-death process with rates `(alpha, beta)` has generator
//! `Lf(x) = alpha(x) (f(x+1) - f(x)) + beta(x) (f(x-1) - f(x))`. The crate
//! builds the modified processes and potentials that appear when gradients are
//! commuted with the semigroup, evaluates all semigroups on a truncated state
//! space by uniformization, and uses them to compute exact and bounded Stein
//! factors, mixture-approximation bounds and Monte Carlo cross-checks.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bdp;
pub mod error;
pub mod intertwine;
pub mod measures;
pub mod mixture;
pub mod montecarlo;
pub mod quadrature;
pub mod stein;

pub use error::{Error, Result};

/// Joins fields into one CSV record, quoting any field that needs it.
pub(crate) fn csv_record<I, S>(fields: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    // Writing to a Vec cannot fail.
    w.write_record(fields).expect("in-memory CSV write");
    let mut bytes = w.into_inner().expect("in-memory CSV flush");
    bytes.pop();
    String::from_utf8(bytes).expect("CSV fields are UTF-8")
}

/// Number of states next to the truncation boundary excluded from suprema.
pub const DEFAULT_MARGIN: usize = 10;
