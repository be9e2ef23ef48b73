//! Shared oracles for the integration suites.

#![allow(dead_code)]

use bdstein::bdp::BirthDeathRates;
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use proptest::prelude::*;

/// Optimal transport cost between `mu` and `nu` on `{0..k-1}` with ground cost
/// `|d(x) - d(y)|`, solved as a linear program.
pub fn transport_lp(mu: &[f64], nu: &[f64], d: &[f64]) -> f64 {
    let k = mu.len();
    let mut pb = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<_>> =
        (0..k).map(|i| (0..k).map(|j| pb.add_var((d[i] - d[j]).abs(), (0.0, f64::INFINITY))).collect()).collect();
    for i in 0..k {
        let row: Vec<_> = (0..k).map(|j| (vars[i][j], 1.0)).collect();
        pb.add_constraint(row.as_slice(), ComparisonOp::Eq, mu[i]);
    }
    for j in 0..k {
        let col: Vec<_> = (0..k).map(|i| (vars[i][j], 1.0)).collect();
        pb.add_constraint(col.as_slice(), ComparisonOp::Eq, nu[j]);
    }
    pb.solve().expect("transport LP is feasible").objective()
}

/// Probability vector of length `k` from positive raw weights.
pub fn normalize(w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Finite rate tables on `{0..len-1}`. With `v1_nonneg`, births are sorted
/// decreasing and deaths increasing, so `V_1 = alpha - alpha(+1) + beta(+1) - beta >= 0`.
pub fn arb_rate_table(len: usize, v1_nonneg: bool) -> impl Strategy<Value = BirthDeathRates> {
    (prop::collection::vec(0.3f64..3.0, len), prop::collection::vec(0.5f64..4.0, len - 1)).prop_map(
        move |(mut alpha, mut tail)| {
            if v1_nonneg {
                alpha.sort_by(|a, b| b.total_cmp(a));
                tail.sort_by(f64::total_cmp);
            }
            let mut beta = vec![0.0];
            beta.extend(tail);
            BirthDeathRates::table(alpha, beta).expect("valid table")
        },
    )
}
