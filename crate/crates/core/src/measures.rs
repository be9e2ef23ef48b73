//! Discrete probability measures on the non-negative integers, weight
//! sequences, the model families used as approximation targets, and the three
//! probability metrics (total variation, weighted Wasserstein, Kolmogorov).

use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, NegativeBinomial, Poisson};
use statrs::function::gamma::ln_gamma;

use crate::bdp::{BirthDeathRates, RateModel};
use crate::error::{Error, Result};

/// Default bound on the tail mass of a measure entering a distance.
pub const DEFAULT_TAIL_TOL: f64 = 1e-10;

/// Largest number of states explored beyond the truncation when estimating a tail.
const MAX_TAIL_STEPS: usize = 2_000_000;

/// Named positive weight families used for the weighted gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightFamily {
    /// `u(x) = c`.
    Constant { value: f64 },
    /// `u(x) = q^x`.
    Geometric { q: f64 },
    /// `u(x) = 1 / ((x + 1)(x + 2))`.
    InverseQuadratic,
    /// Explicit values `u(0), u(1), ...`.
    Table { values: Vec<f64> },
}

impl Default for WeightFamily {
    fn default() -> Self {
        WeightFamily::Constant { value: 1.0 }
    }
}

impl WeightFamily {
    /// Value at `x`, or `None` beyond an explicit table.
    pub fn value(&self, x: usize) -> Option<f64> {
        match self {
            WeightFamily::Constant { value } => Some(*value),
            WeightFamily::Geometric { q } => Some(q.powi(x as i32)),
            WeightFamily::InverseQuadratic => Some(1.0 / ((x as f64 + 1.0) * (x as f64 + 2.0))),
            WeightFamily::Table { values } => values.get(x).copied(),
        }
    }
}

/// A positive sequence `u` on `{0, ..., len-1}` with cached prefix sums.
///
/// `prefix(x) = sum_{k<x} u(k)`, so that `d_u(x, y) = |prefix(x) - prefix(y)|`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSequence {
    values: Vec<f64>,
    prefix: Vec<f64>,
}

impl WeightSequence {
    /// Builds a weight sequence from explicit positive values.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("weight sequence is empty".into()));
        }
        if let Some(x) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "weight u({x}) = {} is not a positive finite number",
                values[x]
            )));
        }
        let mut prefix = Vec::with_capacity(values.len() + 1);
        let mut acc = 0.0;
        prefix.push(acc);
        for v in &values {
            acc += v;
            prefix.push(acc);
        }
        Ok(WeightSequence { values, prefix })
    }

    /// Tabulates a named family on `{0, ..., len-1}`.
    pub fn from_family(family: &WeightFamily, len: usize) -> Result<Self> {
        let values = (0..len)
            .map(|x| {
                family
                    .value(x)
                    .ok_or_else(|| Error::InvalidParameter(format!("weight table has {} entries, {len} required", x)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_values(values)
    }

    /// The constant sequence `u = 1`.
    pub fn ones(len: usize) -> Self {
        Self::from_values(vec![1.0; len.max(1)]).expect("ones are positive")
    }

    /// The geometric sequence `u(x) = q^x`.
    pub fn geometric(q: f64, len: usize) -> Result<Self> {
        Self::from_family(&WeightFamily::Geometric { q }, len)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `u(x)`; panics beyond the tabulated range.
    pub fn value(&self, x: usize) -> f64 {
        self.values[x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `sum_{k<x} u(k)` for `x <= len`.
    pub fn prefix(&self, x: usize) -> f64 {
        self.prefix[x]
    }

    /// The path distance `d_u(x, y)`.
    pub fn distance(&self, x: usize, y: usize) -> f64 {
        (self.prefix[x] - self.prefix[y]).abs()
    }

    /// Minimum of the tabulated values.
    pub fn inf(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Maximum of the tabulated values.
    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// The shifted sequence `x -> u(x+1)`.
    pub fn shifted(&self) -> Result<Self> {
        Self::from_values(self.values[1..].to_vec())
    }
}

/// A truncated probability measure on `{0, ..., N}` with recorded tail mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
    tail_mass: f64,
}

impl DiscreteMeasure {
    /// Validates non-negativity and total mass `1 +- 1e-12`.
    pub fn new(weights: Vec<f64>, tail_mass: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("measure has no weights".into()));
        }
        if let Some(x) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "weight at {x} is {} (must be finite and non-negative)",
                weights[x]
            )));
        }
        if !(tail_mass.is_finite() && tail_mass >= 0.0) {
            return Err(Error::InvalidParameter(format!("tail mass {tail_mass} is invalid")));
        }
        let total = pairwise_sum(&weights) + tail_mass;
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("total mass {total:.15} differs from 1 by more than 1e-12")));
        }
        Ok(DiscreteMeasure { weights, tail_mass })
    }

    /// Normalizes non-negative weights so that they sum to `1 - tail_mass`.
    pub fn normalized(mut weights: Vec<f64>, tail_mass: f64) -> Result<Self> {
        let total = pairwise_sum(&weights);
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("weights sum to zero".into()));
        }
        let scale = (1.0 - tail_mass) / total;
        weights.iter_mut().for_each(|w| *w *= scale);
        Self::new(weights, tail_mass)
    }

    /// The point mass at `k`.
    pub fn dirac(k: usize) -> Self {
        let mut weights = vec![0.0; k + 1];
        weights[k] = 1.0;
        DiscreteMeasure { weights, tail_mass: 0.0 }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Largest state carried explicitly.
    pub fn truncation(&self) -> usize {
        self.weights.len() - 1
    }

    /// Probability of `x`; zero beyond the truncation.
    pub fn pmf(&self, x: usize) -> f64 {
        self.weights.get(x).copied().unwrap_or(0.0)
    }

    /// Cumulative distribution `F(x)` for `x` in `0..len`.
    pub fn cdf(&self, len: usize) -> Vec<f64> {
        let mut acc = 0.0;
        (0..len)
            .map(|x| {
                acc += self.pmf(x);
                acc
            })
            .collect()
    }

    /// Expectation of `f` over the explicit states.
    pub fn expect(&self, f: impl Fn(usize) -> f64) -> f64 {
        let terms: Vec<f64> = self.weights.iter().enumerate().map(|(x, w)| w * f(x)).collect();
        pairwise_sum(&terms)
    }

    pub fn mean(&self) -> f64 {
        self.expect(|x| x as f64)
    }

    /// Convolution of two measures, truncated at `n`.
    pub fn convolve(&self, other: &DiscreteMeasure, n: usize) -> Result<Self> {
        let mut out = vec![0.0; n + 1];
        for (i, a) in self.weights.iter().enumerate().take(n + 1) {
            for (j, b) in other.weights.iter().enumerate().take(n + 1 - i) {
                out[i + j] += a * b;
            }
        }
        let tail = (1.0 - pairwise_sum(&out)).max(0.0);
        Self::new(out, tail)
    }

    /// CSV export, one row per state.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("state,probability\n");
        for (x, w) in self.weights.iter().enumerate() {
            s.push_str(&format!("{x},{w:.17e}\n"));
        }
        s
    }
}

/// Shape of the death-rate function of the family `I_phi(lambda)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PhiShape {
    /// `phi(x) = x`: the Poisson family.
    Identity,
    /// `phi(x) = 1` on the positive integers: the geometric family.
    Unit,
    /// Explicit values `phi(0), phi(1), ...`; `phi(0)` is ignored.
    Table { values: Vec<f64> },
}

impl PhiShape {
    /// `phi(x)`, with `phi(0)` forced to zero.
    pub fn value(&self, x: usize) -> f64 {
        if x == 0 {
            return 0.0;
        }
        match self {
            PhiShape::Identity => x as f64,
            PhiShape::Unit => 1.0,
            PhiShape::Table { values } => values[x],
        }
    }

    /// Last state at which `phi` is defined, if finite.
    pub fn horizon(&self) -> Option<usize> {
        match self {
            PhiShape::Table { values } => Some(values.len() - 1),
            _ => None,
        }
    }
}

/// The family `I_phi(lambda)`: invariant law of the process with rates `(lambda, phi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiFamily {
    pub phi: PhiShape,
    pub lambda: f64,
}

impl PhiFamily {
    pub fn new(phi: PhiShape, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} must be positive")));
        }
        if let PhiShape::Table { values } = &phi {
            if values.len() < 2 {
                return Err(Error::InvalidParameter("phi table needs at least 2 entries".into()));
            }
            if let Some(x) = (1..values.len()).find(|&x| !(values[x] > 0.0)) {
                return Err(Error::InvalidParameter(format!("phi({x}) must be positive")));
            }
        }
        Ok(PhiFamily { phi, lambda })
    }

    /// The birth-death rates `(lambda, phi)` whose invariant law is `I_phi(lambda)`.
    pub fn rates(&self) -> Result<BirthDeathRates> {
        BirthDeathRates::new(RateModel::Phi { phi: self.phi.clone(), lambda: self.lambda })
    }

    /// `I_phi(lambda)` truncated at `n`.
    pub fn measure(&self, n: usize) -> Result<DiscreteMeasure> {
        invariant_measure(&self.rates()?, n)
    }
}

/// Model families available as approximation targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelMeasure {
    Poisson {
        lambda: f64,
    },
    /// `NB(r,p)(x) = Gamma(r+x)/(Gamma(r) x!) (1-p)^r p^x`.
    NegativeBinomial {
        r: f64,
        p: f64,
    },
    /// `G(rho)(k) = (1-rho) rho^k`.
    Geometric {
        rho: f64,
    },
    /// `pi(x) = (x+1)/(2e x!)`.
    SizeBiasedPoisson,
    IPhi {
        phi: PhiShape,
        lambda: f64,
    },
}

/// Builds a model measure truncated at `n`; fails when the tail exceeds `1e-10`.
pub fn make_model_measure(model: &ModelMeasure, n: usize) -> Result<DiscreteMeasure> {
    let m = match model {
        ModelMeasure::Poisson { lambda } => poisson_measure(*lambda, n)?,
        ModelMeasure::NegativeBinomial { r, p } => negative_binomial_measure(*r, *p, n)?,
        ModelMeasure::Geometric { rho } => geometric_measure(*rho, n)?,
        ModelMeasure::SizeBiasedPoisson => size_biased_measure(n)?,
        ModelMeasure::IPhi { phi, lambda } => PhiFamily::new(phi.clone(), *lambda)?.measure(n)?,
    };
    check_tail(&m, DEFAULT_TAIL_TOL)?;
    Ok(m)
}

fn check_tail(m: &DiscreteMeasure, tol: f64) -> Result<()> {
    if m.tail_mass() >= tol {
        return Err(Error::TailMass {
            tail: m.tail_mass(),
            tol,
            hint: format!("increase the truncation beyond N = {}", m.truncation()),
        });
    }
    Ok(())
}

/// Poisson pmf on `{0..n}` from log-space terms, with the exact survival tail.
pub fn poisson_measure(lambda: f64, n: usize) -> Result<DiscreteMeasure> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("Poisson mean {lambda} must be positive")));
    }
    let dist = Poisson::new(lambda).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let weights: Vec<f64> =
        (0..=n).map(|k| (-lambda + k as f64 * lambda.ln() - ln_gamma(k as f64 + 1.0)).exp()).collect();
    let tail = dist.sf(n as u64).max(0.0);
    DiscreteMeasure::normalized(weights, tail)
}

/// Negative binomial pmf `Gamma(r+x)/(Gamma(r) x!) (1-p)^r p^x` on `{0..n}`.
pub fn negative_binomial_measure(r: f64, p: f64, n: usize) -> Result<DiscreteMeasure> {
    if !(r > 0.0 && p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("NB parameters r={r}, p={p} out of range")));
    }
    let dist = NegativeBinomial::new(r, 1.0 - p).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let weights: Vec<f64> = (0..=n)
        .map(|x| {
            let x = x as f64;
            (ln_gamma(r + x) - ln_gamma(r) - ln_gamma(x + 1.0) + r * (1.0 - p).ln() + x * p.ln()).exp()
        })
        .collect();
    let tail = dist.sf(n as u64).max(0.0);
    DiscreteMeasure::normalized(weights, tail)
}

/// Geometric pmf `(1-rho) rho^k` on `{0..n}`; the tail is `rho^(n+1)`.
pub fn geometric_measure(rho: f64, n: usize) -> Result<DiscreteMeasure> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("geometric parameter {rho} not in (0,1)")));
    }
    let weights: Vec<f64> = (0..=n).map(|k| (1.0 - rho) * rho.powi(k as i32)).collect();
    DiscreteMeasure::new(weights, rho.powi(n as i32 + 1))
}

/// The law `(x+1)/(2e x!)`.
fn size_biased_measure(n: usize) -> Result<DiscreteMeasure> {
    let term = |x: usize| ((x as f64 + 1.0).ln() - ln_gamma(x as f64 + 1.0) - 1.0 - 2f64.ln()).exp();
    let weights: Vec<f64> = (0..=n).map(term).collect();
    let mut tail = 0.0;
    let mut x = n + 1;
    loop {
        let t = term(x);
        tail += t;
        if t < 1e-300 || t < tail * 1e-17 {
            break;
        }
        x += 1;
    }
    DiscreteMeasure::normalized(weights, tail)
}

/// Invariant measure of a birth-death process on `{0..n}` with recorded tail.
///
/// Terms `prod_{y<=x} alpha(y-1)/beta(y)` are accumulated in log space and the
/// series is continued past `n` until its terms are negligible; finite rate
/// tables contribute their remaining states exactly.
pub fn invariant_measure(rates: &BirthDeathRates, n: usize) -> Result<DiscreteMeasure> {
    let (log_terms, tail_start) = invariant_log_terms(rates, n)?;
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let all: Vec<f64> = log_terms.iter().map(|l| (l - max).exp()).collect();
    let total = pairwise_sum(&all);
    let head: Vec<f64> = all[..=n].iter().map(|w| w / total).collect();
    let tail = pairwise_sum(&all[tail_start..]) / total;
    DiscreteMeasure::normalized(head, tail)
}

/// Unnormalized log invariant terms on `{0..M}` with `M >= n` chosen so the
/// remainder is negligible, plus the index `n+1` where the tail starts.
pub(crate) fn invariant_log_terms(rates: &BirthDeathRates, n: usize) -> Result<(Vec<f64>, usize)> {
    if let Some(h) = rates.horizon() {
        if n > h {
            return Err(Error::Precondition(format!("truncation {n} exceeds the last tabulated state {h}")));
        }
    }
    let mut logs = Vec::with_capacity(n + 64);
    logs.push(0.0f64);
    for x in 1..=n {
        let prev = logs[x - 1];
        logs.push(prev + rates.alpha(x - 1).ln() - rates.beta(x).ln());
    }
    let mut max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut x = n;
    loop {
        if let Some(h) = rates.horizon() {
            if x >= h {
                break;
            }
        }
        let ratio = rates.alpha(x).ln() - rates.beta(x + 1).ln();
        let current = *logs.last().unwrap();
        if x > n && current < max - 80.0 && ratio < 0.0 {
            break;
        }
        if x - n > MAX_TAIL_STEPS || !ratio.is_finite() {
            return Err(Error::Divergent(format!(
                "terms of prod alpha(y-1)/beta(y) still at exp({:.1}) relative to the maximum after state {x}",
                current - max
            )));
        }
        logs.push(current + ratio);
        max = max.max(current + ratio);
        x += 1;
    }
    Ok((logs, n + 1))
}

/// A distance value with the error bound induced by truncation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub value: f64,
    pub error_bound: f64,
}

fn combined_tail(mu: &DiscreteMeasure, nu: &DiscreteMeasure, tol: f64) -> Result<f64> {
    let tail = mu.tail_mass() + nu.tail_mass();
    if tail >= tol {
        let n = mu.truncation().max(nu.truncation());
        return Err(Error::TailMass { tail, tol, hint: format!("increase the truncation beyond N = {n}") });
    }
    Ok(tail)
}

/// `1/2 sum_x |mu(x) - nu(x)|`.
pub fn tv_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<DistanceEstimate> {
    tv_distance_with_tol(mu, nu, DEFAULT_TAIL_TOL)
}

pub fn tv_distance_with_tol(mu: &DiscreteMeasure, nu: &DiscreteMeasure, tol: f64) -> Result<DistanceEstimate> {
    let tail = combined_tail(mu, nu, tol)?;
    let len = mu.weights().len().max(nu.weights().len());
    let diffs: Vec<f64> = (0..len).map(|x| (mu.pmf(x) - nu.pmf(x)).abs()).collect();
    Ok(DistanceEstimate { value: (0.5 * pairwise_sum(&diffs)).min(1.0), error_bound: tail })
}

/// `W_{d_u}(mu, nu) = sum_x u(x) |F_mu(x) - F_nu(x)|` (monotone coupling).
pub fn wasserstein_du(mu: &DiscreteMeasure, nu: &DiscreteMeasure, u: &WeightSequence) -> Result<DistanceEstimate> {
    wasserstein_du_with_tol(mu, nu, u, DEFAULT_TAIL_TOL)
}

pub fn wasserstein_du_with_tol(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    u: &WeightSequence,
    tol: f64,
) -> Result<DistanceEstimate> {
    let tail = combined_tail(mu, nu, tol)?;
    let len = mu.weights().len().max(nu.weights().len());
    if u.len() < len {
        return Err(Error::InvalidParameter(format!("weight sequence has {} entries, {len} required", u.len())));
    }
    let fm = mu.cdf(len);
    let fn_ = nu.cdf(len);
    // Far in the tail `F(x)` is 1 up to rounding, so the difference is taken
    // between survival sums there to keep large weights from amplifying it.
    let sm = survival(mu, len);
    let sn = survival(nu, len);
    let terms: Vec<f64> = (0..len)
        .map(|x| {
            let gap = if sm[x].max(sn[x]) < 0.5 { sm[x] - sn[x] } else { fm[x] - fn_[x] };
            u.value(x) * gap.abs()
        })
        .collect();
    let umax = u.values()[..len].iter().copied().fold(0.0, f64::max);
    Ok(DistanceEstimate { value: pairwise_sum(&terms), error_bound: tail * umax })
}

/// `mu({x+1, ...})` for `x < len`, accumulated from the right and including the tail mass.
fn survival(mu: &DiscreteMeasure, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut acc = mu.tail_mass() + mu.weights().iter().skip(len).sum::<f64>();
    for x in (0..len).rev() {
        out[x] = acc;
        acc += mu.pmf(x);
    }
    out
}

/// `sup_x |F_mu(x) - F_nu(x)|`.
pub fn kolmogorov_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<DistanceEstimate> {
    kolmogorov_distance_with_tol(mu, nu, DEFAULT_TAIL_TOL)
}

pub fn kolmogorov_distance_with_tol(mu: &DiscreteMeasure, nu: &DiscreteMeasure, tol: f64) -> Result<DistanceEstimate> {
    let tail = combined_tail(mu, nu, tol)?;
    let len = mu.weights().len().max(nu.weights().len());
    let fm = mu.cdf(len);
    let fn_ = nu.cdf(len);
    let value = (0..len).map(|x| (fm[x] - fn_[x]).abs()).fold(0.0, f64::max);
    Ok(DistanceEstimate { value, error_bound: tail })
}

/// Pairwise (cascade) summation; deterministic and order-insensitive up to
/// the fixed split, with error growing like `log n`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_at_zero_is_exp_minus_lambda() {
        let m = make_model_measure(&ModelMeasure::Poisson { lambda: 1.0 }, 50).unwrap();
        assert!((m.pmf(0) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn geometric_weights_match_closed_form() {
        let rho = 0.3;
        let m = make_model_measure(&ModelMeasure::Geometric { rho }, 40).unwrap();
        for k in 0..=40 {
            let expect = (1.0 - rho) * rho.powi(k as i32);
            assert!((m.pmf(k) - expect).abs() <= 1e-15 * expect.max(1e-300));
        }
    }

    #[test]
    fn identity_phi_reproduces_poisson() {
        for lambda in [0.5, 1.0, 3.0, 12.0] {
            let p = make_model_measure(&ModelMeasure::Poisson { lambda }, 80).unwrap();
            let i = make_model_measure(&ModelMeasure::IPhi { phi: PhiShape::Identity, lambda }, 80).unwrap();
            for x in 0..=80 {
                assert!((p.pmf(x) - i.pmf(x)).abs() < 1e-14, "lambda={lambda} x={x}");
            }
        }
    }

    #[test]
    fn size_biased_closed_form() {
        let m = make_model_measure(&ModelMeasure::SizeBiasedPoisson, 40).unwrap();
        let rates = BirthDeathRates::new(RateModel::SizeBiased).unwrap();
        let inv = invariant_measure(&rates, 40).unwrap();
        for x in 0..=40 {
            assert!((m.pmf(x) - inv.pmf(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_distances() {
        let d0 = DiscreteMeasure::dirac(0);
        let d1 = DiscreteMeasure::dirac(1);
        assert_eq!(tv_distance(&d0, &d1).unwrap().value, 1.0);
        assert_eq!(kolmogorov_distance(&d0, &d1).unwrap().value, 1.0);
        let p = poisson_measure(2.0, 60).unwrap();
        assert_eq!(tv_distance(&p, &p).unwrap().value, 0.0);
        assert_eq!(kolmogorov_distance(&p, &p).unwrap().value, 0.0);
        assert_eq!(wasserstein_du(&p, &p, &WeightSequence::ones(61)).unwrap().value, 0.0);
    }

    #[test]
    fn excessive_tail_is_rejected_with_hint() {
        let p = poisson_measure(30.0, 20).unwrap();
        let err = tv_distance(&p, &p).unwrap_err();
        assert!(matches!(err, Error::TailMass { .. }));
        assert!(err.to_string().contains("N = 20"));
        assert!(make_model_measure(&ModelMeasure::Poisson { lambda: 30.0 }, 20).is_err());
    }

    #[test]
    fn weighted_gradient_weights() {
        let u = WeightSequence::geometric(2.0, 10).unwrap();
        assert_eq!(u.prefix(3), 7.0);
        assert_eq!(u.distance(1, 4), 14.0);
        assert!(WeightSequence::from_values(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn measure_validation() {
        assert!(DiscreteMeasure::new(vec![0.5, 0.4], 0.0).is_err());
        assert!(DiscreteMeasure::new(vec![0.5, -0.1, 0.6], 0.0).is_err());
        assert!(DiscreteMeasure::new(vec![0.5, 0.4], 0.1).is_ok());
    }

    #[test]
    fn measure_json_shape() {
        let m = DiscreteMeasure::dirac(1);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"weights":[0.0,1.0],"tail_mass":0.0}"#);
    }
}
