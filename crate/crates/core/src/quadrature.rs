//! Gauss-Legendre and generalized Gauss-Laguerre rules.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Nodes and weights of a quadrature rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Golub-Welsch: eigen-decomposition of the Jacobi matrix with diagonal `a`
/// and off-diagonal `b`, scaled by the zeroth moment `mu0`.
fn golub_welsch(a: &[f64], b: &[f64], mu0: f64) -> Rule {
    let n = a.len();
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = a[i];
        if i + 1 < n {
            j[(i, i + 1)] = b[i];
            j[(i + 1, i)] = b[i];
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|k| (eig.eigenvalues[k], mu0 * eig.eigenvectors[(0, k)].powi(2))).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    Rule { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1).collect() }
}

/// `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Result<Rule> {
    if n == 0 {
        return Err(Error::InvalidParameter("Gauss-Legendre needs at least one node".into()));
    }
    let a = vec![0.0; n];
    let b: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    Ok(golub_welsch(&a, &b, 2.0))
}

/// `n`-point rule for the weight `x^a exp(-x)` on `(0, inf)`, `a > -1`.
pub fn gauss_laguerre(n: usize, a: f64) -> Result<Rule> {
    if n == 0 || !(a > -1.0) {
        return Err(Error::InvalidParameter(format!("Gauss-Laguerre needs n >= 1 and a > -1 (got {n}, {a})")));
    }
    let diag: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 + a + 1.0).collect();
    let off: Vec<f64> = (1..n).map(|k| (k as f64 * (k as f64 + a)).sqrt()).collect();
    Ok(golub_welsch(&diag, &off, ln_gamma(a + 1.0).exp()))
}

/// Composite Gauss-Legendre integral of `f` over `[lo, hi]` with `panels` panels.
pub fn composite_legendre(rule: &Rule, lo: f64, hi: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let a = lo + p as f64 * h;
        let mid = a + h / 2.0;
        let mut s = 0.0;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            s += w * f(mid + h / 2.0 * x);
        }
        total += s * h / 2.0;
    }
    total
}
