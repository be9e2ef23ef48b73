//! Solutions of the Stein equation `alpha(x) g(x+1) - beta(x) g(x) = f(x) - pi(f)`,
//! exact Stein factors through their argmax test functions, the integral
//! bounds built on modified processes, and closed-form bounds for the
//! Poisson, negative binomial and geometric targets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::bdp::{build_generator, semigroup_apply, BirthDeathRates, TransitionSweep, TruncatedOperator, Truncation};
use crate::error::{Error, Result};
use crate::measures::{pairwise_sum, poisson_measure, DiscreteMeasure, WeightSequence};
use crate::quadrature::{composite_legendre, gauss_legendre};

/// Log-gap between the invariant weight at `N+1` and at the end of the solver window.
const WINDOW_LOG_GAP: f64 = 80.0;
/// Hard cap on the solver window beyond `N`.
const MAX_WINDOW: usize = 2_000_000;

/// Normalization of the Stein solution at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `g(0) = 0`, used for first factors.
    First,
    /// `g(0) = g(1)`, used for second factors.
    Second,
}

/// A birth-death target `pi` with head and tail sums on a window `{0..M}`, `M > N`,
/// chosen so that `pi(M) / pi(N+1)` is negligible.
#[derive(Clone, Debug)]
pub struct SteinTarget {
    rates: BirthDeathRates,
    pi: Vec<f64>,
    head: Vec<f64>,
    tail: Vec<f64>,
    /// `ln(pi(x+1) / pi(x))`.
    log_step: Vec<f64>,
    /// `ln(pi(x) / pi(0))`.
    log_pi: Vec<f64>,
    /// `sum_{k<=i} pi(k) / pi(i)`.
    head_ratio: Vec<f64>,
    /// `sum_{k>=i} pi(k) / pi(i)`.
    tail_ratio: Vec<f64>,
    trunc: Truncation,
}

impl SteinTarget {
    pub fn new(rates: &BirthDeathRates, trunc: impl Into<Truncation>) -> Result<Self> {
        let trunc = trunc.into();
        let n = trunc.n;
        trunc.interior_end()?;
        let horizon = rates.horizon();
        if let Some(h) = horizon {
            if n + 1 > h {
                return Err(Error::Precondition(format!(
                    "truncation {n} needs states up to {}, table ends at {h}",
                    n + 1
                )));
            }
        }
        let mut logs = vec![0.0f64];
        let mut max = 0.0f64;
        let mut x = 0usize;
        loop {
            if horizon == Some(x) {
                break;
            }
            let step = rates.alpha(x).ln() - rates.beta(x + 1).ln();
            let cur = logs[x];
            if x > n + 1 {
                let anchor = logs[n + 1].min(max);
                if cur < anchor - WINDOW_LOG_GAP && cur < max - WINDOW_LOG_GAP && step < 0.0 {
                    break;
                }
            }
            if x > n + MAX_WINDOW {
                return Err(Error::Divergent(format!("invariant weights do not decay beyond state {x}")));
            }
            logs.push(cur + step);
            max = max.max(cur + step);
            x += 1;
        }
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total = pairwise_sum(&w);
        let pi: Vec<f64> = w.iter().map(|v| v / total).collect();
        let mut head = Vec::with_capacity(pi.len());
        let mut acc = 0.0;
        for p in &pi {
            acc += p;
            head.push(acc);
        }
        let mut tail = vec![0.0; pi.len()];
        let mut acc = 0.0;
        for k in (0..pi.len()).rev() {
            acc += pi[k];
            tail[k] = acc;
        }
        // Ratios to pi(i) are accumulated with the rate ratios so that they stay
        // accurate where pi itself underflows.
        let log_step: Vec<f64> = logs.windows(2).map(|w| w[1] - w[0]).collect();
        let m = pi.len();
        let mut head_ratio = vec![1.0; m];
        for i in 1..m {
            head_ratio[i] = 1.0 + (-log_step[i - 1]).exp() * head_ratio[i - 1];
        }
        let mut tail_ratio = vec![1.0; m];
        for i in (0..m - 1).rev() {
            tail_ratio[i] = 1.0 + log_step[i].exp() * tail_ratio[i + 1];
        }
        Ok(SteinTarget { rates: rates.clone(), pi, head, tail, log_step, log_pi: logs, head_ratio, tail_ratio, trunc })
    }

    pub fn rates(&self) -> &BirthDeathRates {
        &self.rates
    }

    pub fn truncation(&self) -> Truncation {
        self.trunc
    }

    /// Number of states `M+1` of the solver window; test functions and weights must cover it.
    pub fn window_len(&self) -> usize {
        self.pi.len()
    }

    /// `pi` on the solver window.
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// `sum_{k<=i} pi(k)`.
    pub fn head(&self, i: usize) -> f64 {
        self.head[i]
    }

    /// `sum_{k>=i} pi(k)`, summed directly over the window.
    pub fn tail(&self, i: usize) -> f64 {
        self.tail[i]
    }

    /// `pi` restricted to `{0..N}` with the remaining mass as tail.
    pub fn measure(&self) -> Result<DiscreteMeasure> {
        let n = self.trunc.n;
        DiscreteMeasure::new(self.pi[..=n].to_vec(), self.tail[n + 1])
    }

    /// `pi(f)` over the window.
    pub fn expectation(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f.len(), "test function")?;
        let terms: Vec<f64> = self.pi.iter().zip(f).map(|(p, v)| p * v).collect();
        Ok(pairwise_sum(&terms))
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len < self.pi.len() {
            return Err(Error::InvalidParameter(format!(
                "{what} has {len} values, the solver window needs {}",
                self.pi.len()
            )));
        }
        Ok(())
    }

    /// `g_f(i)` for `i >= 1` from the centred head and tail sums:
    /// `sum_{k<i} pi(k) h(k) / (beta(i) pi(i)) = -sum_{k>=i} pi(k) h(k) / (beta(i) pi(i))`
    /// with `h = f - pi(f)`, taking the head form below the median and the tail form above.
    /// Both sums are scaled by `pi(i)` as they accumulate.
    fn solution_values(&self, f: &[f64], last: usize) -> Vec<f64> {
        let m = self.pi.len();
        let terms: Vec<f64> = self.pi.iter().zip(f).map(|(p, v)| p * v).collect();
        let pi_f = pairwise_sum(&terms);
        let h = |k: usize| f[k] - pi_f;
        let mut head_f = vec![0.0; m];
        for i in 1..m {
            head_f[i] = (-self.log_step[i - 1]).exp() * (h(i - 1) + head_f[i - 1]);
        }
        let mut tail_f = vec![0.0; m];
        tail_f[m - 1] = h(m - 1);
        for i in (0..m - 1).rev() {
            tail_f[i] = h(i) + self.log_step[i].exp() * tail_f[i + 1];
        }
        (1..=last)
            .map(|i| {
                let scaled = if self.head[i - 1] <= 0.5 { head_f[i] } else { -tail_f[i] };
                scaled / self.rates.beta(i)
            })
            .collect()
    }

    /// Stein solution on `{0..N+1}` from the explicit head/tail representation.
    pub fn solve(&self, f: &[f64], normalization: Normalization) -> Result<SteinSolution> {
        self.check_len(f.len(), "test function")?;
        let n = self.trunc.n;
        let tail = self.solution_values(f, n + 1);
        let g0 = match normalization {
            Normalization::First => 0.0,
            Normalization::Second => tail[0],
        };
        let mut values = Vec::with_capacity(n + 2);
        values.push(g0);
        values.extend(tail);
        Ok(SteinSolution { values, normalization, pi_f: self.expectation(f)? })
    }

    /// Convenience wrapper evaluating `f` on the solver window.
    pub fn solve_fn(&self, f: impl Fn(usize) -> f64, normalization: Normalization) -> Result<SteinSolution> {
        let values: Vec<f64> = (0..self.window_len()).map(f).collect();
        self.solve(&values, normalization)
    }

    /// `g_f(i+1) - g_f(i)` for a single `i >= 1`.
    fn gradient_at(&self, f: &[f64], i: usize) -> f64 {
        let g = self.solution_values(f, i + 1);
        g[i] - g[i - 1]
    }
}

/// A Stein solution on `{0..N+1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteinSolution {
    pub values: Vec<f64>,
    pub normalization: Normalization,
    pub pi_f: f64,
}

impl SteinSolution {
    /// `max_{x<=N} |alpha(x) g(x+1) - beta(x) g(x) - (f(x) - pi(f))|`.
    pub fn residual(&self, rates: &BirthDeathRates, f: &[f64]) -> f64 {
        (0..self.values.len() - 1)
            .map(|x| (rates.alpha(x) * self.values[x + 1] - rates.beta(x) * self.values[x] - (f[x] - self.pi_f)).abs())
            .fold(0.0, f64::max)
    }

    /// `g(x+1) - g(x)` on `{0..N}`.
    pub fn gradient(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// The Poisson-equation solution `h` with `g = -d* h`, i.e. `h(x) = sum_{k<=x} g(k)`.
    pub fn poisson_view(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.values
            .iter()
            .map(|g| {
                acc += g;
                acc
            })
            .collect()
    }
}

/// Independent solver: forward recursion from the origin up to the median of
/// `pi` and backward recursion from the end of the window down to it.
pub fn stein_solve_recursive(target: &SteinTarget, f: &[f64], normalization: Normalization) -> Result<SteinSolution> {
    target.check_len(f.len(), "test function")?;
    let rates = target.rates();
    let pi = target.pi();
    let m = pi.len() - 1;
    let n = target.truncation().n;
    let terms: Vec<f64> = pi.iter().zip(f).map(|(p, v)| p * v).collect();
    let pi_f = pairwise_sum(&terms);
    let c = |x: usize| f[x] - pi_f;
    let mut g = vec![0.0; m + 1];
    let median = target.head.iter().position(|h| *h >= 0.5).unwrap_or(0).max(1);
    g[1] = c(0) / rates.alpha(0);
    for x in 1..median {
        g[x + 1] = (c(x) + rates.beta(x) * g[x]) / rates.alpha(x);
    }
    if median < m {
        g[m] = -c(m) / rates.beta(m);
        for x in (median + 1..m).rev() {
            g[x] = (rates.alpha(x) * g[x + 1] - c(x)) / rates.beta(x);
        }
    }
    g[0] = match normalization {
        Normalization::First => 0.0,
        Normalization::Second => g[1],
    };
    g.truncate(n + 2);
    Ok(SteinSolution { values: g, normalization, pi_f })
}

/// The sequences `e+` and `e-` on `{0..N+1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteinHelpers {
    e_plus: Vec<f64>,
    e_minus: Vec<f64>,
    /// Mass of `pi` beyond the solver window (bounded by the window construction).
    pub tail_bound: f64,
}

impl SteinHelpers {
    /// `e+_i = sum_{k<=i} pi(k) / (alpha(i) pi(i))`.
    pub fn e_plus(&self, i: usize) -> f64 {
        self.e_plus[i]
    }

    /// `e-_i = sum_{k>=i} pi(k) / (beta(i) pi(i))`, defined for `i >= 1`.
    pub fn e_minus(&self, i: usize) -> Result<f64> {
        if i == 0 {
            return Err(Error::InvalidParameter("e- is defined on the positive integers only".into()));
        }
        Ok(self.e_minus[i])
    }

    pub fn len(&self) -> usize {
        self.e_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_plus.is_empty()
    }

    /// Whether `e+` is non-decreasing and `e-` non-increasing on `{0..last}`.
    pub fn monotone_on(&self, last: usize) -> bool {
        let last = last.min(self.len() - 1);
        let rel = |a: f64, b: f64| b >= a - 1e-12 * a.abs().max(b.abs());
        (0..last).all(|i| rel(self.e_plus[i], self.e_plus[i + 1]))
            && (1..last).all(|i| rel(self.e_minus[i + 1], self.e_minus[i]))
    }
}

/// Computes `e+` and `e-` on `{0..N+1}` from direct head and tail sums.
pub fn stein_helpers(target: &SteinTarget) -> SteinHelpers {
    let n = target.truncation().n;
    let rates = target.rates();
    let pi = target.pi();
    let e_plus = (0..=n + 1).map(|i| target.head_ratio[i] / rates.alpha(i)).collect();
    let e_minus = (0..=n + 1).map(|i| if i == 0 { f64::NAN } else { target.tail_ratio[i] / rates.beta(i) }).collect();
    SteinHelpers { e_plus, e_minus, tail_bound: (pi[pi.len() - 1] * 1e3).min(1.0) }
}

/// `g_j(i)` and `dg_j(i) = g_j(i+1) - g_j(i)` for `g_j` the solution with `f = 1_j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplicitValue {
    pub g: f64,
    pub dg: f64,
}

/// Explicit solution for an indicator `1_j` at `i >= 1`; the origin is refused
/// because there the value is fixed only by the normalization convention.
pub fn stein_solution_explicit(helpers: &SteinHelpers, pi: &[f64], j: usize, i: usize) -> Result<ExplicitValue> {
    if i == 0 {
        return Err(Error::InvalidParameter(
            "explicit indicator solutions are defined for i >= 1 only; g(0) is a normalization choice".into(),
        ));
    }
    if i + 1 >= helpers.len() {
        return Err(Error::InvalidParameter(format!("state {i} lies outside the helper range")));
    }
    let pj = pi[j];
    let g = if i <= j { -pj * helpers.e_plus[i - 1] } else { pj * helpers.e_minus[i] };
    let dg = if j > i {
        pj * (helpers.e_plus[i - 1] - helpers.e_plus[i])
    } else if j == i {
        pj * (helpers.e_minus[i + 1] + helpers.e_plus[i - 1])
    } else {
        pj * (helpers.e_minus[i + 1] - helpers.e_minus[i])
    };
    Ok(ExplicitValue { g, dg })
}

/// `phi_i(x) = -d_u(i, x)` on `{0..len-1}`; `u` must cover `len - 1` states.
pub fn phi_test_function(u: &WeightSequence, i: usize, len: usize) -> Vec<f64> {
    (0..len).map(|x| -u.distance(i, x)).collect()
}

/// `psi_i = d*_u d phi_i`: `u(j-1)/u(j) - 1` below `i`, `1 + u(i-1)/u(i)` at `i`,
/// `1 - u(j-1)/u(j)` above, with `u(-1) = 0`.
pub fn psi_test_function(u: &WeightSequence, i: usize, len: usize) -> Vec<f64> {
    let ratio = |j: usize| if j == 0 { 0.0 } else { u.value(j - 1) / u.value(j) };
    (0..len)
        .map(|j| {
            if j < i {
                ratio(j) - 1.0
            } else if j == i {
                1.0 + ratio(j)
            } else {
                1.0 - ratio(j)
            }
        })
        .collect()
}

/// `Psi_i = -d_u d phi_{i+1}`.
pub fn big_psi_test_function(u: &WeightSequence, i: usize, len: usize) -> Vec<f64> {
    let ratio = |j: usize| u.value(j + 1) / u.value(j);
    (0..len)
        .map(|j| {
            if j < i {
                1.0 - ratio(j)
            } else if j == i {
                1.0 + ratio(j)
            } else {
                ratio(j) - 1.0
            }
        })
        .collect()
}

/// Test-function classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorClass {
    /// `0 <= f <= 1`.
    Bounded,
    /// Half-line indicators `1_[0,m]`.
    Indicator,
    /// `|f(x+1) - f(x)| <= u(x)`, second factor in the norm `sup_{x>=1} |dg(x)| / u(x)`.
    Lipschitz,
    /// Lipschitz class with the second factor in the norm `sup_x |dg(x+1)| / u(x)`.
    LipschitzShifted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorOrder {
    First,
    Second,
}

/// An exact factor: supremum of the pointwise factor over the interior window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorValue {
    pub value: f64,
    /// State `x` at which `|g(x)|` or `|dg(x)|` attains the supremum.
    pub argmax: usize,
    pub boundary_flag: bool,
}

fn require_v1_nonneg(target: &SteinTarget) -> Result<()> {
    let rates = target.rates();
    let n = target.truncation().n;
    for x in 0..=n {
        let v = rates.v1(x);
        if v < -1e-12 * rates.alpha(x).max(rates.beta(x + 1)).max(1.0) {
            return Err(Error::Hypothesis(format!("V_1({x}) = {v} is negative")));
        }
    }
    Ok(())
}

fn collect_profile(values: impl Iterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    values.collect()
}

fn sup_over(values: impl Iterator<Item = (usize, f64)>, trunc: Truncation) -> FactorValue {
    let mut best = FactorValue { value: f64::NEG_INFINITY, argmax: 0, boundary_flag: false };
    for (x, v) in values {
        if v > best.value {
            best.value = v;
            best.argmax = x;
        }
    }
    best.boundary_flag = trunc.near_boundary(best.argmax);
    best
}

/// `g_{1_[0,m]}(x)` for `x >= 1`, using `beta(x) pi(x) = alpha(x-1) pi(x-1)` on the head side.
/// The ratio `tail(m+1) / pi(x-1)` is formed in log space since both ends may underflow.
fn half_line_solution(target: &SteinTarget, m: usize, x: usize) -> f64 {
    let rates = target.rates();
    if m < x {
        target.head(m) * target.tail_ratio[x] / rates.beta(x)
    } else {
        let ratio = target.tail_ratio[m + 1] * (target.log_pi[m + 1] - target.log_pi[x - 1]).exp();
        target.head(x - 1) * ratio / rates.alpha(x - 1)
    }
}

/// Exact Stein factor on the interior window `{0..N-margin}` through the argmax test functions.
///
/// Second factors of the bounded, indicator and Lipschitz classes require `V_1 >= 0`.
/// `u` must cover the solver window (see [`SteinTarget::window_len`]); it is ignored
/// by the bounded and indicator classes.
pub fn exact_factor(
    target: &SteinTarget,
    class: FactorClass,
    order: FactorOrder,
    u: &WeightSequence,
) -> Result<FactorValue> {
    let profile = factor_profile(target, class, order, u)?;
    Ok(sup_over(profile.into_iter(), target.truncation()))
}

/// Pointwise factor `(x, sup_f |g_f(x)|)` (first order) or `(i, sup_f |dg_f(i)|)` (second
/// order), divided by the class weight, over the interior window.
pub fn factor_profile(
    target: &SteinTarget,
    class: FactorClass,
    order: FactorOrder,
    u: &WeightSequence,
) -> Result<Vec<(usize, f64)>> {
    let end = target.truncation().interior_end()?;
    if end < 1 {
        return Err(Error::InvalidParameter("interior window is too small".into()));
    }
    let pi = target.pi();
    let m_last = pi.len() - 2;
    let lipschitz = matches!(class, FactorClass::Lipschitz | FactorClass::LipschitzShifted);
    if lipschitz {
        target.check_len(u.len(), "weight sequence")?;
    }
    if order == FactorOrder::Second {
        require_v1_nonneg(target)?;
    }
    Ok(match (class, order) {
        (FactorClass::Bounded, FactorOrder::First) => {
            collect_profile((1..=end).map(|x| (x, half_line_solution(target, x - 1, x))))
        }
        (FactorClass::Indicator, FactorOrder::First) => collect_profile(
            (1..=end).map(|x| (x, (0..=m_last).map(|m| half_line_solution(target, m, x).abs()).fold(0.0, f64::max))),
        ),
        (FactorClass::Bounded, FactorOrder::Second) => {
            // pi(i) (e-_{i+1} + e+_{i-1}) with the ratios cancelled through detailed balance.
            let rates = target.rates();
            collect_profile(
                (1..=end).map(|i| (i, target.tail(i + 1) / rates.alpha(i) + target.head(i - 1) / rates.beta(i))),
            )
        }
        (FactorClass::Indicator, FactorOrder::Second) => {
            let dg = |m: usize, i: usize| half_line_solution(target, m, i + 1) - half_line_solution(target, m, i);
            collect_profile((1..=end).map(|i| (i, (-dg(i - 1, i)).max(dg(i, i)))))
        }
        (_, FactorOrder::First) => {
            let f: Vec<f64> = (0..target.window_len()).map(|x| -u.prefix(x)).collect();
            let g = target.solve(&f, Normalization::First)?;
            collect_profile((0..=end).map(|x| (x + 1, g.values[x + 1].abs() / u.value(x))))
        }
        (FactorClass::Lipschitz, FactorOrder::Second) => {
            let len = target.window_len();
            collect_profile(
                (1..=end).map(|i| (i, target.gradient_at(&phi_test_function(u, i, len), i).abs() / u.value(i))),
            )
        }
        (FactorClass::LipschitzShifted, FactorOrder::Second) => {
            let len = target.window_len();
            collect_profile(
                (0..end)
                    .map(|x| (x + 1, target.gradient_at(&phi_test_function(u, x + 1, len), x + 1).abs() / u.value(x))),
            )
        }
    })
}

/// Suprema of instantaneous probabilities entering the integral bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagKind {
    /// `sup_i P(X^i_t = i)`.
    SupDiag,
    /// `sup_i (2 P(X^i_t = i) - P(X^i_t = i-1) - P(X^i_t = i+1))`.
    SupDiagMinusNeighbors,
    /// `sup_i |P(X^i_t = i) - P(X^i_t = i-1)|`.
    AbsDiagDiff,
}

impl DiagKind {
    fn envelope(&self) -> f64 {
        match self {
            DiagKind::SupDiagMinusNeighbors => 2.0,
            _ => 1.0,
        }
    }
}

/// Index set of the supremum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexSet {
    /// `i >= 0`.
    All,
    /// `i >= 1`.
    Positive,
}

/// Value of an integral bound with its truncation horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundIntegral {
    pub value: f64,
    pub t_max: f64,
    pub tail_bound: f64,
    pub panels: usize,
}

/// Evaluates `s(t)` from transition probabilities `p(i, j)` at a fixed time.
fn diag_sup_with(p: impl Fn(usize, usize) -> f64, kind: DiagKind, first: usize, end: usize) -> f64 {
    (first..=end)
        .map(|i| match kind {
            DiagKind::SupDiag => p(i, i),
            DiagKind::SupDiagMinusNeighbors => {
                let below = if i == 0 { 0.0 } else { p(i, i - 1) };
                2.0 * p(i, i) - below - p(i, i + 1)
            }
            DiagKind::AbsDiagDiff => {
                let below = if i == 0 { 0.0 } else { p(i, i - 1) };
                (p(i, i) - below).abs()
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Evaluates `s(t)` for the rows of a transition sweep.
fn diag_sup(sweep: &TransitionSweep<'_>, kind: DiagKind, first: usize, end: usize) -> f64 {
    diag_sup_with(|i, j| sweep.prob(i, j), kind, first, end)
}

/// Diagonal and neighbouring entries of `e^{tG}` for a tridiagonal conservative
/// generator `G`, which is reversible. With `S = D^{1/2} G D^{-1/2} = Q diag(l) Q^T`
/// and `D = diag(pi)`, `P_t(i, j) = sqrt(pi(j) / pi(i)) sum_k Q_ik Q_jk e^{l_k t}`,
/// and `pi(i+1) / pi(i) = G(i, i+1) / G(i+1, i)`.
struct SpectralDiag {
    eigenvalues: Vec<f64>,
    /// Row `i` holds `Q_ik^2`.
    diag: Vec<Vec<f64>>,
    /// Row `i` holds `sqrt(pi(i+1) / pi(i)) Q_ik Q_{i+1,k}`.
    up: Vec<Vec<f64>>,
    /// Row `i` holds `sqrt(pi(i-1) / pi(i)) Q_ik Q_{i-1,k}`; row 0 is empty.
    down: Vec<Vec<f64>>,
}

impl SpectralDiag {
    /// `None` unless the operator is tridiagonal with matching positive off-diagonal pairs.
    fn new(op: &TruncatedOperator) -> Option<Self> {
        let n = op.n_states();
        for x in 0..n {
            if op.jumps(x).iter().any(|&(y, _)| y + 1 != x && y != x + 1) {
                return None;
            }
        }
        let mut sym = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut ratio = vec![0.0; n.saturating_sub(1)];
        for x in 0..n {
            sym[(x, x)] = -op.out_rate(x);
            if x + 1 < n {
                let (a, b) = (op.entry(x, x + 1), op.entry(x + 1, x));
                if !(a > 0.0 && b > 0.0) {
                    return None;
                }
                let off = (a * b).sqrt();
                sym[(x, x + 1)] = off;
                sym[(x + 1, x)] = off;
                ratio[x] = (a / b).sqrt();
            }
        }
        let eig = nalgebra::SymmetricEigen::new(sym);
        let q = &eig.eigenvectors;
        let row = |i: usize, j: usize, c: f64| (0..n).map(|k| c * q[(i, k)] * q[(j, k)]).collect::<Vec<f64>>();
        Some(SpectralDiag {
            eigenvalues: eig.eigenvalues.iter().map(|l| l.min(0.0)).collect(),
            diag: (0..n).map(|i| row(i, i, 1.0)).collect(),
            up: (0..n).map(|i| if i + 1 < n { row(i, i + 1, ratio[i]) } else { Vec::new() }).collect(),
            down: (0..n).map(|i| if i > 0 { row(i, i - 1, 1.0 / ratio[i - 1]) } else { Vec::new() }).collect(),
        })
    }

    fn s(&self, t: f64, kind: DiagKind, first: usize, end: usize) -> f64 {
        let decay: Vec<f64> = self.eigenvalues.iter().map(|l| (l * t).exp()).collect();
        let dot = |w: &[f64]| w.iter().zip(&decay).map(|(a, b)| a * b).sum::<f64>();
        diag_sup_with(
            |i, j| {
                if j == i {
                    dot(&self.diag[i])
                } else if j == i + 1 {
                    dot(&self.up[i])
                } else {
                    dot(&self.down[i])
                }
            },
            kind,
            first,
            end,
        )
    }
}

/// `int_0^inf e^{-sigma t} (a + b s(t)) dt` with `s` the requested supremum over
/// the interior window of the process generated by `op` (its potential is ignored).
///
/// Composite Gauss-Legendre panels on `[0, T]` are doubled until two passes
/// differ by less than `tol / 2`; `T` is chosen so the tail is below `tol / 2`.
pub fn bound_integral(
    sigma: f64,
    op: &TruncatedOperator,
    kind: DiagKind,
    index_set: IndexSet,
    affine: (f64, f64),
    trunc: impl Into<Truncation>,
    tol: f64,
) -> Result<BoundIntegral> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma = {sigma} must be positive")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")));
    }
    let trunc = trunc.into();
    let end = trunc.interior_end()?;
    if op.n_states() < trunc.n + 1 {
        return Err(Error::InvalidParameter("operator has fewer states than the truncation".into()));
    }
    let generator = op.with_potential(vec![0.0; op.n_states()])?;
    let first = match index_set {
        IndexSet::All => 0,
        IndexSet::Positive => 1,
    };
    let (a, b) = affine;
    let envelope = a.abs() + b.abs() * kind.envelope();
    let t_max = if envelope == 0.0 { 1.0 } else { ((2.0 * envelope / (sigma * tol)).ln() / sigma).max(1.0 / sigma) };
    let tail_bound = envelope * (-sigma * t_max).exp() / sigma;
    let spectral = SpectralDiag::new(&generator);
    let rule = gauss_legendre(8)?;
    let mut panels = 4usize;
    let mut previous: Option<f64> = None;
    for _ in 0..9 {
        let mut nodes = Vec::with_capacity(panels * rule.nodes.len());
        composite_legendre(&rule, 0.0, t_max, panels, |t| {
            nodes.push(t);
            0.0
        });
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by(|i, j| nodes[*i].total_cmp(&nodes[*j]));
        let mut s = vec![0.0; nodes.len()];
        if let Some(spec) = &spectral {
            s = nodes.par_iter().map(|t| spec.s(*t, kind, first, end)).collect();
        } else {
            let mut sweep = TransitionSweep::new(&generator);
            for k in order {
                sweep.advance_to(nodes[k])?;
                s[k] = diag_sup(&sweep, kind, first, end);
            }
        }
        let mut idx = 0;
        let value = composite_legendre(&rule, 0.0, t_max, panels, |t| {
            let v = (-sigma * t).exp() * (a + b * s[idx]);
            idx += 1;
            v
        });
        if let Some(prev) = previous {
            // s(t) has kinks where the argmax state switches, so convergence is only
            // first order; the change between doublings bounds the finer error.
            if (value - prev).abs() < tol / 2.0 {
                return Ok(BoundIntegral { value: value + tail_bound, t_max, tail_bound, panels });
            }
        }
        previous = Some(value);
        panels *= 2;
    }
    Err(Error::Quadrature(format!(
        "bound integral did not settle within {} panels (last value {:?})",
        panels / 2,
        previous
    )))
}

/// Named bound with an applicability flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedBound {
    pub name: String,
    pub value: f64,
    pub applicable: bool,
}

impl NamedBound {
    fn new(name: &str, value: f64) -> Self {
        NamedBound { name: name.into(), value, applicable: value.is_finite() }
    }

    fn inapplicable(name: &str) -> Self {
        NamedBound { name: name.into(), value: f64::NAN, applicable: false }
    }
}

/// `K(r) = sqrt(r) Gamma(r - 1/2) / Gamma(r)` for `r > 1/2`.
pub fn k_constant(r: f64) -> Option<f64> {
    if r > 0.5 {
        Some((0.5 * r.ln() + ln_gamma(r - 0.5) - ln_gamma(r)).exp())
    } else {
        None
    }
}

/// `e^{1/sqrt 2} / sqrt(2 pi)`.
pub fn poisson_diff_constant() -> f64 {
    std::f64::consts::FRAC_1_SQRT_2.exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `8 K(2) / (3 sqrt(2e)) = 4 sqrt(pi) / (3 sqrt(e))`, the constant the integral
/// bound for the negative binomial Lipschitz second factor actually produces.
pub fn nb_lipschitz_constant() -> f64 {
    4.0 * std::f64::consts::PI.sqrt() / (3.0 * std::f64::consts::E.sqrt())
}

/// `2 sqrt(pi) / (3 sqrt(e))`, half of [`nb_lipschitz_constant`]. Bounds built on it
/// fail for small `r` (the exact factor for `r = 1, p = 0.3` is 1 while the bound is 0.90),
/// so they are reported for comparison and never marked applicable.
pub fn nb_lipschitz_constant_halved() -> f64 {
    0.5 * nb_lipschitz_constant()
}

/// Targets with closed-form factor bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ClosedFormModel {
    Poisson { lambda: f64 },
    NegativeBinomial { r: f64, p: f64 },
    Geometric { alpha: f64, beta: f64 },
}

/// Every closed-form factor bound available for the model.
pub fn closed_form_bounds(model: ClosedFormModel) -> Result<Vec<NamedBound>> {
    let e = std::f64::consts::E;
    Ok(match model {
        ClosedFormModel::Poisson { lambda } => {
            if !(lambda > 0.0) {
                return Err(Error::InvalidParameter(format!("lambda = {lambda} must be positive")));
            }
            vec![
                NamedBound::new("bounded_first", (2.0 / (lambda * e)).sqrt().min(1.0)),
                NamedBound::new("lipschitz_first", 1.0),
                NamedBound::new("lipschitz_second", (8.0 / (3.0 * (2.0 * e * lambda).sqrt())).min(1.0)),
                NamedBound::new("bounded_second_classical", (1.0 - (-lambda).exp()) / lambda),
                NamedBound::new("bounded_second_rate", (1.0 / lambda).min(1.0)),
            ]
        }
        ClosedFormModel::NegativeBinomial { r, p } => {
            if !(r > 0.0 && p > 0.0 && p < 1.0) {
                return Err(Error::InvalidParameter(format!("need r > 0 and 0 < p < 1 (got {r}, {p})")));
            }
            let q = 1.0 - p;
            let first = 1.0 / q;
            let k_bound = |name: &str, k: Option<f64>, f: &dyn Fn(f64) -> f64| match k {
                Some(k) => NamedBound::new(name, f(k)),
                None => NamedBound::inapplicable(name),
            };
            vec![
                NamedBound::new("lipschitz_first", first),
                NamedBound::new("lipschitz_second", first.min(nb_lipschitz_constant() / ((r + 2.0) * p * q).sqrt())),
                NamedBound {
                    name: "lipschitz_second_halved_constant".into(),
                    value: first.min(nb_lipschitz_constant_halved() / ((r + 2.0) * p * q).sqrt()),
                    applicable: false,
                },
                k_bound("lipschitz_second_k", k_constant(r + 2.0), &|k| {
                    first.min(8.0 * k / (3.0 * (2.0 * e).sqrt()) / ((r + 2.0) * p * q).sqrt())
                }),
                NamedBound::new(
                    "lipschitz_second_barbour",
                    (2.0 / q).min((1.0 + p) / (q * q)).min(1.5 / (r * p * q.powi(3)).sqrt()),
                ),
                NamedBound::new("bounded_first", first.min(std::f64::consts::PI.sqrt() / ((r + 1.0) * p * q).sqrt())),
                k_bound("bounded_first_k", k_constant(r + 1.0), &|k| {
                    first.min((2.0 / e).sqrt() * k / ((r + 1.0) * p * q).sqrt())
                }),
                NamedBound::new("bounded_first_brown_phillips", 1.0 / p.max(if r >= 1.0 { q } else { 0.0 })),
            ]
        }
        ClosedFormModel::Geometric { alpha, beta } => {
            if !(alpha > 0.0 && alpha < beta) {
                return Err(Error::InvalidParameter(format!("need 0 < alpha < beta (got {alpha}, {beta})")));
            }
            let gap = beta.sqrt() - alpha.sqrt();
            let sigma = gap * gap;
            let inner = (2.0 * std::f64::consts::PI.sqrt() * gap / (alpha * beta).powf(0.25) - 1.0).min(1.0);
            vec![
                NamedBound::new("lipschitz_first", 1.0 / sigma),
                NamedBound::new("lipschitz_second", (1.0 + (alpha / beta).sqrt() * inner) / sigma),
            ]
        }
    })
}

/// Exact value, applicable bounds and margins for one factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteinFactorReport {
    pub class: FactorClass,
    pub order: FactorOrder,
    pub exact_value: f64,
    pub argmax: usize,
    pub boundary_flag: bool,
    pub bounds: Vec<NamedBound>,
    /// `bound - exact` per bound (NaN when inapplicable).
    pub margins: Vec<f64>,
    pub h1: bool,
    pub h2: bool,
}

impl SteinFactorReport {
    pub fn new(
        class: FactorClass,
        order: FactorOrder,
        exact: FactorValue,
        bounds: Vec<NamedBound>,
        h1: bool,
        h2: bool,
    ) -> Self {
        let margins = bounds.iter().map(|b| if b.applicable { b.value - exact.value } else { f64::NAN }).collect();
        SteinFactorReport {
            class,
            order,
            exact_value: exact.value,
            argmax: exact.argmax,
            boundary_flag: exact.boundary_flag,
            bounds,
            margins,
            h1,
            h2,
        }
    }

    /// True when the exact value is below every applicable bound up to `1e-8`.
    pub fn consistent(&self) -> bool {
        self.bounds.iter().filter(|b| b.applicable).all(|b| self.exact_value <= b.value + 1e-8)
    }

    /// CSV header matching [`SteinFactorReport::csv_rows`].
    pub fn csv_header() -> &'static str {
        "model,class,order,exact,argmax,boundary_flag,bound_name,bound,applicable,margin"
    }

    /// One row per bound (or a single row when no bound applies).
    pub fn csv_rows(&self, model: &str) -> Vec<String> {
        let head = [
            model.to_string(),
            format!("{:?}", self.class),
            format!("{:?}", self.order),
            format!("{:.12e}", self.exact_value),
            self.argmax.to_string(),
            self.boundary_flag.to_string(),
        ];
        if self.bounds.is_empty() {
            return vec![crate::csv_record(head.iter().cloned().chain(std::iter::repeat_n(String::new(), 4)))];
        }
        self.bounds
            .iter()
            .zip(&self.margins)
            .map(|(b, m)| {
                let tail = [b.name.clone(), format!("{:.12e}", b.value), b.applicable.to_string(), format!("{m:.12e}")];
                crate::csv_record(head.iter().cloned().chain(tail))
            })
            .collect()
    }
}

/// Instantaneous-probability lemmas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "lemma", rename_all = "snake_case")]
pub enum PointwiseLemma {
    /// `sup_x |P_lambda(x) - P_lambda(x-1)| <= 1 ^ C / lambda`.
    PoissonDiff { lambda: f64 },
    /// Diagonal and diagonal-difference bounds for M/M/inf.
    MmInfinity { lambda: f64 },
    /// Diagonal bound for GWI with `K(r)`.
    Gwi { r: f64, p: f64 },
    /// `sup_{i>=1} P(Y^i_t = i) <= 1 / sqrt(lambda t)` for the M/M/1 queue `(lambda, lambda)`.
    Mm1 { lambda: f64 },
}

/// One evaluated grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaPoint {
    pub bound_name: String,
    pub t: f64,
    pub lhs: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// Outcome of a lemma check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub points: Vec<LemmaPoint>,
    pub max_ratio: f64,
    pub holds: bool,
    /// For the M/M/1 lemma: whether `1/sqrt(2 lambda t)` also holds at every `t > 0`.
    pub stronger_bound_holds: Option<bool>,
}

fn point(name: &str, t: f64, lhs: f64, bound: f64) -> LemmaPoint {
    let ratio = if bound > 0.0 { lhs / bound } else { f64::INFINITY };
    LemmaPoint { bound_name: name.into(), t, lhs, bound, ratio }
}

/// Computes the left side exactly (pmf or uniformization) and compares with the stated bound.
/// Violations are reported, not raised.
pub fn pointwise_prob_lemma_check(
    lemma: PointwiseLemma,
    t_grid: &[f64],
    trunc: impl Into<Truncation>,
) -> Result<LemmaReport> {
    let trunc = trunc.into();
    let n = trunc.n;
    let end = trunc.interior_end()?;
    let mut points = Vec::new();
    let mut stronger = None;
    let mut times: Vec<f64> = t_grid.to_vec();
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::InvalidParameter(format!("time {t} must be non-negative")));
    }
    times.sort_by(f64::total_cmp);
    let diag_rows = |rates: &BirthDeathRates, f: &mut dyn FnMut(f64, &TransitionSweep<'_>)| -> Result<()> {
        let g = build_generator(rates, n)?;
        let mut sweep = TransitionSweep::new(&g);
        for &t in &times {
            sweep.advance_to(t)?;
            f(t, &sweep);
        }
        Ok(())
    };
    match lemma {
        PointwiseLemma::PoissonDiff { lambda } => {
            let p = poisson_measure(lambda, n)?;
            let lhs = (0..=n).map(|x| (p.pmf(x) - if x == 0 { 0.0 } else { p.pmf(x - 1) }).abs()).fold(0.0, f64::max);
            points.push(point("poisson_diff", f64::NAN, lhs, (poisson_diff_constant() / lambda).min(1.0)));
        }
        PointwiseLemma::MmInfinity { lambda } => {
            let rates = BirthDeathRates::mm_infinity(lambda)?;
            let c = 1.0 / (2.0 * std::f64::consts::E).sqrt();
            let cc = poisson_diff_constant();
            diag_rows(&rates, &mut |t, s| {
                let scale = lambda * (1.0 - (-t).exp());
                let diag = diag_sup(s, DiagKind::SupDiag, 0, end);
                let diff = diag_sup(s, DiagKind::AbsDiagDiff, 1, end);
                points.push(point("mminfty_diag", t, diag, (c / scale.sqrt()).min(1.0)));
                points.push(point("mminfty_diff", t, diff, (cc / scale).min(1.0)));
            })?;
        }
        PointwiseLemma::Gwi { r, p } => {
            let k = k_constant(r)
                .ok_or_else(|| Error::InvalidParameter(format!("the GWI lemma needs r > 1/2 (got {r})")))?;
            let rates = BirthDeathRates::gwi(r, p)?;
            let c = 1.0 / (2.0 * std::f64::consts::E).sqrt();
            diag_rows(&rates, &mut |t, s| {
                let q = 1.0 - p;
                let bound = (c * (q / (p * (1.0 - (-q * t).exp()))).sqrt() * k / r.sqrt()).min(1.0);
                points.push(point("gwi_diag", t, diag_sup(s, DiagKind::SupDiag, 0, end), bound));
            })?;
        }
        PointwiseLemma::Mm1 { lambda } => {
            let rates = BirthDeathRates::mm1(lambda, lambda)?;
            let mut strong = true;
            diag_rows(&rates, &mut |t, s| {
                let lhs = diag_sup(s, DiagKind::SupDiag, 1, end);
                points.push(point("mm1_diag", t, lhs, 1.0 / (lambda * t).sqrt()));
                if t > 0.0 && lhs > 1.0 / (2.0 * lambda * t).sqrt() {
                    strong = false;
                }
            })?;
            stronger = Some(strong);
        }
    }
    let max_ratio = points.iter().map(|p| p.ratio).fold(0.0, f64::max);
    Ok(LemmaReport { holds: max_ratio <= 1.0, max_ratio, points, stronger_bound_holds: stronger })
}

/// `g_f(i) = int_0^inf d* P_t f(i) dt` for `i` in `{1..N-margin}`, by
/// composite Gauss-Legendre quadrature on `[0, T]` with `T` from the decay `e^{-sigma t}`.
pub fn semigroup_representation(
    rates: &BirthDeathRates,
    f: &[f64],
    sigma: f64,
    trunc: impl Into<Truncation>,
    tol: f64,
) -> Result<Vec<f64>> {
    let trunc = trunc.into();
    let n = trunc.n;
    let end = trunc.interior_end()?;
    if f.len() < n + 1 {
        return Err(Error::InvalidParameter(format!("test function needs {} values", n + 1)));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma = {sigma} must be positive")));
    }
    let op = build_generator(rates, n)?;
    let scale = f[..=n].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let t_max = ((4.0 * scale.max(1e-300) / (sigma * tol)).ln() / sigma).max(1.0);
    let rule = gauss_legendre(8)?;
    let mut panels = 8usize;
    let mut previous: Option<Vec<f64>> = None;
    for _ in 0..8 {
        let h = t_max / panels as f64;
        let mut acc = vec![0.0; end + 1];
        let mut cur = f[..=n].to_vec();
        let mut t0 = 0.0;
        for p in 0..panels {
            let a = p as f64 * h;
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let t = a + h / 2.0 * (1.0 + x);
                cur = semigroup_apply(&op, t - t0, &cur)?;
                t0 = t;
                for i in 1..=end {
                    acc[i] += w * h / 2.0 * (cur[i - 1] - cur[i]);
                }
            }
        }
        if let Some(prev) = &previous {
            let change = acc.iter().zip(prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if change < tol / 10.0 {
                return Ok(acc);
            }
        }
        previous = Some(acc);
        panels *= 2;
    }
    Err(Error::Quadrature("semigroup representation did not settle".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_diagonal_matches_the_sweep() {
        for rates in [BirthDeathRates::gwi(2.0, 0.4).unwrap(), BirthDeathRates::mm1(1.0, 3.0).unwrap()] {
            let op = build_generator(&rates, 80).unwrap();
            let spec = SpectralDiag::new(&op).expect("tridiagonal");
            let mut sweep = TransitionSweep::new(&op);
            for t in [0.0, 0.3, 1.7, 6.0] {
                sweep.advance_to(t).unwrap();
                for kind in [DiagKind::SupDiag, DiagKind::SupDiagMinusNeighbors, DiagKind::AbsDiagDiff] {
                    let a = spec.s(t, kind, 0, 70);
                    let b = diag_sup(&sweep, kind, 0, 70);
                    assert!((a - b).abs() < 1e-10, "{kind:?} t={t}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn constant_function_has_zero_solution() {
        let t = SteinTarget::new(&BirthDeathRates::mm_infinity(2.0).unwrap(), 60).unwrap();
        let s = t.solve_fn(|_| 3.0, Normalization::First).unwrap();
        assert!(s.values.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn e_plus_at_origin() {
        let rates = BirthDeathRates::gwi(2.0, 0.3).unwrap();
        let t = SteinTarget::new(&rates, 60).unwrap();
        let h = stein_helpers(&t);
        assert!((h.e_plus(0) - 1.0 / rates.alpha(0)).abs() < 1e-14);
        assert!(h.e_minus(0).is_err());
        assert!(h.monotone_on(50));
    }

    #[test]
    fn explicit_refuses_origin() {
        let t = SteinTarget::new(&BirthDeathRates::mm_infinity(1.0).unwrap(), 40).unwrap();
        let h = stein_helpers(&t);
        assert!(stein_solution_explicit(&h, t.pi(), 2, 0).is_err());
        let d = stein_solution_explicit(&h, t.pi(), 3, 3).unwrap();
        assert!(d.dg > 0.0);
    }

    #[test]
    fn lipschitz_first_mminfty_is_one() {
        let t = SteinTarget::new(&BirthDeathRates::mm_infinity(3.0).unwrap(), 80).unwrap();
        let u = WeightSequence::ones(t.window_len());
        let v = exact_factor(&t, FactorClass::Lipschitz, FactorOrder::First, &u).unwrap();
        assert!((v.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn closed_forms() {
        let b = closed_form_bounds(ClosedFormModel::NegativeBinomial { r: 2.0, p: 0.5 }).unwrap();
        let l2 = b.iter().find(|b| b.name == "lipschitz_second").unwrap();
        assert!((l2.value - 2.0f64.min(nb_lipschitz_constant())).abs() < 1e-15);
        let k2 = k_constant(2.0).unwrap();
        let e = std::f64::consts::E;
        assert!((nb_lipschitz_constant() - 8.0 * k2 / (3.0 * (2.0 * e).sqrt())).abs() < 1e-14);
        assert!((nb_lipschitz_constant_halved() - 0.716_698_402_333).abs() < 1e-11);
        let p = closed_form_bounds(ClosedFormModel::Poisson { lambda: 1.0 }).unwrap();
        assert!((p[0].value - (2.0 / std::f64::consts::E).sqrt()).abs() < 1e-15);
        let g = closed_form_bounds(ClosedFormModel::Geometric { alpha: 1.0, beta: 4.0 }).unwrap();
        assert_eq!(g[0].value, 1.0);
        assert!(k_constant(0.5).is_none());
        assert!((k_constant(1.0).unwrap() - std::f64::consts::PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn psi_identities() {
        let u = WeightSequence::from_values(vec![1.0, 0.5, 2.0, 1.5, 0.7, 3.0, 1.1, 0.9]).unwrap();
        let len = 6;
        for i in 1..5 {
            let phi = phi_test_function(&u, i, len + 1);
            let dphi: Vec<f64> = phi.windows(2).map(|w| w[1] - w[0]).collect();
            let psi = psi_test_function(&u, i, len);
            for j in 0..len {
                let prev = if j == 0 { 0.0 } else { dphi[j - 1] };
                assert!((psi[j] - (prev - dphi[j]) / u.value(j)).abs() < 1e-14);
            }
            let phi1 = phi_test_function(&u, i + 1, len + 2);
            let d1: Vec<f64> = phi1.windows(2).map(|w| w[1] - w[0]).collect();
            let big = big_psi_test_function(&u, i, len);
            for j in 0..len {
                assert!((big[j] + (d1[j + 1] - d1[j]) / u.value(j)).abs() < 1e-14);
            }
        }
    }
}
