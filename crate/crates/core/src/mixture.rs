//! Mixtures `L(W | Lambda) = I_phi(Lambda)` of the family `I_phi`, their exact
//! laws and the distance bounds against `I_phi(E[Lambda])`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::bdp::{BirthDeathRates, Truncation};
use crate::error::{Error, Result};
use crate::measures::{
    pairwise_sum, poisson_measure, tv_distance, DiscreteMeasure, PhiFamily, PhiShape, WeightSequence,
};
use crate::quadrature::gauss_laguerre;
use crate::stein::{factor_profile, FactorClass, FactorOrder, SteinTarget};

/// Default number of Gauss-Laguerre nodes for gamma mixing.
pub const DEFAULT_QUAD_NODES: usize = 64;
/// Largest node count tried before giving up.
const MAX_QUAD_NODES: usize = 1024;
/// TV change between two node counts accepted as converged.
const QUAD_TOL: f64 = 1e-10;
/// Quantile at which gamma mixing is truncated for support checks.
const GAMMA_SUPPORT_QUANTILE: f64 = 1.0 - 1e-12;

/// Law of the random intensity `Lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixingLaw {
    /// Density `rate^shape x^(shape-1) e^(-rate x) / Gamma(shape)`.
    Gamma {
        shape: f64,
        rate: f64,
    },
    Discrete {
        support: Vec<f64>,
        weights: Vec<f64>,
    },
    Point {
        lambda: f64,
    },
}

impl MixingLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            MixingLaw::Gamma { shape, rate } => {
                if !(*shape > 0.0 && *rate > 0.0 && shape.is_finite() && rate.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "gamma mixing needs shape, rate > 0 (got {shape}, {rate})"
                    )));
                }
            }
            MixingLaw::Discrete { support, weights } => {
                if support.is_empty() || support.len() != weights.len() {
                    return Err(Error::InvalidParameter(
                        "discrete mixing needs matching non-empty support and weights".into(),
                    ));
                }
                if let Some(x) = support.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
                    return Err(Error::InvalidParameter(format!("mixing support point {x} must be positive")));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(Error::InvalidParameter("mixing weights must be non-negative".into()));
                }
                let total = pairwise_sum(weights);
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!("mixing weights sum to {total}")));
                }
            }
            MixingLaw::Point { lambda } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::InvalidParameter(format!("point mixing at {lambda} must be positive")));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            MixingLaw::Gamma { shape, rate } => shape / rate,
            MixingLaw::Discrete { support, weights } => {
                pairwise_sum(&support.iter().zip(weights).map(|(x, w)| x * w).collect::<Vec<_>>())
            }
            MixingLaw::Point { lambda } => *lambda,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            MixingLaw::Gamma { shape, rate } => shape / (rate * rate),
            MixingLaw::Discrete { support, weights } => {
                let m = self.mean();
                pairwise_sum(&support.iter().zip(weights).map(|(x, w)| w * (x - m).powi(2)).collect::<Vec<_>>())
            }
            MixingLaw::Point { .. } => 0.0,
        }
    }

    /// `E|E[Lambda] - Lambda|`.
    pub fn mean_abs_deviation(&self) -> f64 {
        let m = self.mean();
        match self {
            MixingLaw::Gamma { shape, rate } => {
                // E|X - m| = 2 s^s e^{-s} / (Gamma(s) rate).
                let s = *shape;
                2.0 * (s * s.ln() - s - ln_gamma(s)).exp() / rate
            }
            MixingLaw::Discrete { support, weights } => {
                pairwise_sum(&support.iter().zip(weights).map(|(x, w)| w * (x - m).abs()).collect::<Vec<_>>())
            }
            MixingLaw::Point { .. } => 0.0,
        }
    }

    /// Largest point of the support (gamma: the `1 - 1e-12` quantile).
    pub fn support_max(&self) -> Result<f64> {
        Ok(match self {
            MixingLaw::Gamma { shape, rate } => Gamma::new(*shape, *rate)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?
                .inverse_cdf(GAMMA_SUPPORT_QUANTILE),
            MixingLaw::Discrete { support, weights } => support
                .iter()
                .zip(weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(x, _)| *x)
                .fold(f64::NEG_INFINITY, f64::max),
            MixingLaw::Point { lambda } => *lambda,
        })
    }

    /// Quadrature nodes `(lambda_k, w_k)`; exact for discrete and point laws.
    pub fn nodes(&self, quad_nodes: usize) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        Ok(match self {
            MixingLaw::Gamma { shape, rate } => {
                let rule = gauss_laguerre(quad_nodes, shape - 1.0)?;
                let norm = ln_gamma(*shape).exp();
                rule.nodes
                    .iter()
                    .zip(&rule.weights)
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(x, w)| (x / rate, w / norm))
                    .collect()
            }
            MixingLaw::Discrete { support, weights } => {
                support.iter().copied().zip(weights.iter().copied()).filter(|(_, w)| *w > 0.0).collect()
            }
            MixingLaw::Point { lambda } => vec![(*lambda, 1.0)],
        })
    }
}

fn family_measure(phi: &PhiShape, lambda: f64, n: usize) -> Result<DiscreteMeasure> {
    match phi {
        PhiShape::Identity => poisson_measure(lambda, n),
        _ => PhiFamily::new(phi.clone(), lambda)?.measure(n),
    }
}

fn average(nodes: &[(f64, f64)], phi: &PhiShape, n: usize) -> Result<DiscreteMeasure> {
    let mut weights = vec![0.0; n + 1];
    let mut tail = 0.0;
    for (lambda, w) in nodes {
        let m = family_measure(phi, *lambda, n)?;
        for (acc, p) in weights.iter_mut().zip(m.weights()) {
            *acc += w * p;
        }
        tail += w * m.tail_mass();
    }
    DiscreteMeasure::normalized(weights, tail)
}

/// Law of `W` on `{0..n}`. Gamma mixing starts at `quad_nodes` Gauss-Laguerre
/// nodes and doubles until the TV change is below `1e-10`.
pub fn mixed_measure(phi: &PhiShape, mixing: &MixingLaw, n: usize, quad_nodes: usize) -> Result<DiscreteMeasure> {
    mixing.validate()?;
    if !matches!(mixing, MixingLaw::Gamma { .. }) {
        return average(&mixing.nodes(quad_nodes)?, phi, n);
    }
    let mut k = quad_nodes.max(2);
    let mut previous = average(&mixing.nodes(k)?, phi, n)?;
    let mut trace = vec![k];
    while k < MAX_QUAD_NODES {
        k *= 2;
        trace.push(k);
        let next = average(&mixing.nodes(k)?, phi, n)?;
        if tv_distance(&previous, &next)?.value < QUAD_TOL {
            return Ok(next);
        }
        previous = next;
    }
    Err(Error::Quadrature(format!("mixed measure did not settle; node counts tried: {trace:?}")))
}

/// Distance classes of the mixture bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceClass {
    /// Total variation (`0 <= f <= 1`).
    TotalVariation,
    /// Wasserstein with the distance `d_u`.
    Wasserstein,
}

impl DistanceClass {
    fn factor_class(self) -> FactorClass {
        match self {
            DistanceClass::TotalVariation => FactorClass::Bounded,
            DistanceClass::Wasserstein => FactorClass::Lipschitz,
        }
    }
}

fn family_target(phi: &PhiShape, lambda: f64, trunc: Truncation) -> Result<(BirthDeathRates, SteinTarget)> {
    let rates = PhiFamily::new(phi.clone(), lambda)?.rates()?;
    let target = SteinTarget::new(&rates, trunc)?;
    Ok((rates, target))
}

/// `sup_{x>=1} sup_f |g_f(x)| / w(x)` over the interior window, with `f` ranging in
/// the class (Wasserstein class weighted by `u`).
fn first_sup(target: &SteinTarget, class: DistanceClass, u: &WeightSequence, w: &dyn Fn(usize) -> f64) -> Result<f64> {
    let profile = factor_profile(target, class.factor_class(), FactorOrder::First, u)?;
    let shift = matches!(class, DistanceClass::Wasserstein);
    Ok(profile
        .into_iter()
        .map(|(x, v)| {
            // The Lipschitz profile is normalized by u(x-1); undo it.
            let raw = if shift { v * u.value(x - 1) } else { v };
            raw / w(x)
        })
        .fold(0.0, f64::max))
}

/// `|lambda - lambda'| sup_f ||g_{lambda,f} / u||_inf E[u(X'+1)]`, optionally
/// minimized over the symmetrized form. For the Wasserstein class `d_1` is used.
pub fn closeness_bound(
    phi: &PhiShape,
    lambda: f64,
    lambda_prime: f64,
    class: DistanceClass,
    u: &WeightSequence,
    trunc: impl Into<Truncation>,
    symmetric: bool,
) -> Result<f64> {
    let trunc = trunc.into();
    let one_sided = |l: f64, lp: f64| -> Result<f64> {
        if l == lp {
            return Ok(0.0);
        }
        let (_, target) = family_target(phi, l, trunc)?;
        let ones = WeightSequence::ones(target.window_len());
        let sup = first_sup(&target, class, &ones, &|x| u.value(x))?;
        let other = family_measure(phi, lp, trunc.n)?;
        let moment = other.expect(|x| u.value(x + 1));
        Ok((l - lp).abs() * sup * moment)
    };
    if !(lambda > 0.0 && lambda_prime > 0.0) {
        return Err(Error::InvalidParameter(format!("intensities must be positive (got {lambda}, {lambda_prime})")));
    }
    if u.len() < trunc.n + 2 {
        return Err(Error::InvalidParameter(format!("weight sequence needs {} values", trunc.n + 2)));
    }
    let forward = one_sided(lambda, lambda_prime)?;
    if symmetric {
        Ok(forward.min(one_sided(lambda_prime, lambda)?))
    } else {
        Ok(forward)
    }
}

/// Components of the unbiased and biased mixture bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureBound {
    /// `sup_f ||d_u g_f||_inf` over the distance class.
    pub gradient_factor: f64,
    /// `sup_r ||g_r / v||_inf` over `Lip(d_{u shifted})`.
    pub solution_factor: f64,
    /// `E[|lambda - Lambda|^2 E[v(W+1) | Lambda]]`.
    pub moment: f64,
    /// Product of the three terms above.
    pub bound: f64,
    /// `E|lambda - Lambda| sup_f ||g_f||_inf`.
    pub biased_bound: f64,
}

/// Unbiased mixture bound against `I_phi(E[Lambda])`, with the biased bound alongside.
///
/// `u` weights the gradient norm `||d_u g||` and `v` the solution norm; both must
/// cover `N + 3` states. Second factors require `V_1 >= 0` for the target.
pub fn mixture_bound(
    phi: &PhiShape,
    mixing: &MixingLaw,
    class: DistanceClass,
    u: &WeightSequence,
    v: &WeightSequence,
    trunc: impl Into<Truncation>,
) -> Result<MixtureBound> {
    let trunc = trunc.into();
    mixing.validate()?;
    let lambda = mixing.mean();
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("mixing mean {lambda} must be positive and finite")));
    }
    if u.len() < trunc.n + 3 || v.len() < trunc.n + 3 {
        return Err(Error::InvalidParameter(format!("weight sequences need {} values", trunc.n + 3)));
    }
    let (_, target) = family_target(phi, lambda, trunc)?;
    let ones = WeightSequence::ones(target.window_len());
    let biased = mixing.mean_abs_deviation() * first_sup(&target, class, &ones, &|_| 1.0)?;
    if mixing.variance() == 0.0 {
        return Ok(MixtureBound {
            gradient_factor: 0.0,
            solution_factor: 0.0,
            moment: 0.0,
            bound: 0.0,
            biased_bound: biased,
        });
    }
    let gradient_factor = factor_profile(&target, class.factor_class(), FactorOrder::Second, &ones)?
        .into_iter()
        .map(|(i, val)| val / u.value(i))
        .fold(0.0, f64::max);
    let shifted: Vec<f64> = (0..target.window_len()).map(|x| u.value((x + 1).min(u.len() - 1))).collect();
    let shifted = WeightSequence::from_values(shifted)?;
    let solution_factor = first_sup(&target, DistanceClass::Wasserstein, &shifted, &|x| v.value(x))?;
    let v_is_one = v.values().iter().all(|x| *x == 1.0);
    let moment = if v_is_one { mixing.variance() } else { mixture_moment(phi, mixing, lambda, v, trunc.n)? };
    Ok(MixtureBound {
        gradient_factor,
        solution_factor,
        moment,
        bound: gradient_factor * solution_factor * moment,
        biased_bound: biased,
    })
}

/// `E[(lambda - Lambda)^2 E[v(W+1) | Lambda]]` by quadrature with node doubling.
fn mixture_moment(phi: &PhiShape, mixing: &MixingLaw, lambda: f64, v: &WeightSequence, n: usize) -> Result<f64> {
    let eval = |k: usize| -> Result<f64> {
        let mut terms = Vec::new();
        for (l, w) in mixing.nodes(k)? {
            let m = family_measure(phi, l, n)?;
            terms.push(w * (lambda - l).powi(2) * m.expect(|x| v.value(x + 1)));
        }
        Ok(pairwise_sum(&terms))
    };
    if !matches!(mixing, MixingLaw::Gamma { .. }) {
        return eval(1);
    }
    let mut k = DEFAULT_QUAD_NODES;
    let mut prev = eval(k)?;
    while k < MAX_QUAD_NODES {
        k *= 2;
        let next = eval(k)?;
        if (next - prev).abs() <= QUAD_TOL * next.abs().max(1e-300) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Quadrature(format!("mixture moment did not settle after {k} nodes")))
}

/// `E[d_u(G, G')] = |rho - rho'| / ((1 - q rho)(1 - q rho'))` for the monotone coupling
/// of two geometric laws and `u(k) = q^k`.
pub fn geometric_coupling_distance(rho: f64, rho_prime: f64, q: f64) -> Result<f64> {
    for r in [rho, rho_prime] {
        if !(r > 0.0 && r < 1.0 && q * r < 1.0) {
            return Err(Error::InvalidParameter(format!("need 0 < rho < 1 and q rho < 1 (rho = {r}, q = {q})")));
        }
    }
    Ok((rho - rho_prime).abs() / ((1.0 - q * rho) * (1.0 - q * rho_prime)).abs())
}

/// `((1 + rho^{-1/2}) / (1 - sqrt rho)^3) E[(rho - R)^2 / (1 - R / sqrt rho)]`, a bound on
/// `W_{d_u}(L(W), G(rho))` with `u(k) = rho^{-k/2}`. Requires `E[R] = rho` and `R < sqrt rho`.
pub fn geometric_mixture_bound(rho: f64, mixing: &MixingLaw) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho = {rho} must lie in (0, 1)")));
    }
    mixing.validate()?;
    if (mixing.mean() - rho).abs() > 1e-12 {
        return Err(Error::Precondition(format!("E[R] = {} differs from rho = {rho}", mixing.mean())));
    }
    let root = rho.sqrt();
    let top = mixing.support_max()?;
    if top >= root {
        return Err(Error::Precondition(format!("support reaches {top}, which is not below sqrt(rho) = {root}")));
    }
    let integrand = |r: f64| (rho - r).powi(2) / (1.0 - r / root);
    let expectation = match mixing {
        MixingLaw::Point { .. } => 0.0,
        MixingLaw::Discrete { .. } => {
            pairwise_sum(&mixing.nodes(1)?.iter().map(|(r, w)| w * integrand(*r)).collect::<Vec<_>>())
        }
        MixingLaw::Gamma { .. } => {
            // Gamma mixing is truncated at the 1 - 1e-12 quantile, checked above.
            let mut k = DEFAULT_QUAD_NODES;
            let eval = |k: usize| -> Result<f64> {
                let terms: Vec<f64> =
                    mixing.nodes(k)?.iter().filter(|(r, _)| *r <= top).map(|(r, w)| w * integrand(*r)).collect();
                Ok(pairwise_sum(&terms))
            };
            let mut prev = eval(k)?;
            loop {
                k *= 2;
                let next = eval(k)?;
                if (next - prev).abs() <= QUAD_TOL * next.abs().max(1e-300) {
                    break next;
                }
                if k >= MAX_QUAD_NODES {
                    return Err(Error::Quadrature(format!("geometric mixture moment did not settle after {k} nodes")));
                }
                prev = next;
            }
        }
    };
    Ok((1.0 + 1.0 / root) / (1.0 - root).powi(3) * expectation)
}

/// One row of a mixture bound table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureRow {
    pub target: String,
    pub mixing: String,
    pub class: DistanceClass,
    pub bound_name: String,
    pub bound: f64,
    pub exact_distance: f64,
}

impl MixtureRow {
    pub fn slack(&self) -> f64 {
        self.bound - self.exact_distance
    }
}

/// CSV with columns `target,mixing,class,bound_name,bound,exact_distance,slack`.
pub fn mixture_rows_csv(rows: &[MixtureRow]) -> String {
    let mut s = String::from("target,mixing,class,bound_name,bound,exact_distance,slack\n");
    for r in rows {
        s.push_str(&crate::csv_record([
            r.target.clone(),
            r.mixing.clone(),
            format!("{:?}", r.class),
            r.bound_name.clone(),
            format!("{:.12e}", r.bound),
            format!("{:.12e}", r.exact_distance),
            format!("{:.12e}", r.slack()),
        ]));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let g = MixingLaw::Gamma { shape: 3.0, rate: 2.0 };
        assert!((g.mean() - 1.5).abs() < 1e-15);
        assert!((g.variance() - 0.75).abs() < 1e-15);
        let d = MixingLaw::Discrete { support: vec![0.5, 1.5], weights: vec![0.5, 0.5] };
        assert!((d.mean() - 1.0).abs() < 1e-15);
        assert!((d.variance() - 0.25).abs() < 1e-15);
        assert!((d.mean_abs_deviation() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gamma_mean_abs_deviation_matches_quadrature() {
        use crate::quadrature::{composite_legendre, gauss_legendre};
        use statrs::distribution::Continuous;
        let g = MixingLaw::Gamma { shape: 2.5, rate: 0.7 };
        let m = g.mean();
        let pdf = Gamma::new(2.5, 0.7).unwrap();
        let rule = gauss_legendre(16).unwrap();
        let below = composite_legendre(&rule, 0.0, m, 64, |x| (m - x) * pdf.pdf(x));
        let above = composite_legendre(&rule, m, 120.0, 256, |x| (x - m) * pdf.pdf(x));
        assert!((below + above - g.mean_abs_deviation()).abs() < 1e-9);
    }

    #[test]
    fn point_mixing_is_degenerate() {
        let m = mixed_measure(&PhiShape::Identity, &MixingLaw::Point { lambda: 2.0 }, 40, 64).unwrap();
        let p = poisson_measure(2.0, 40).unwrap();
        assert_eq!(m.weights(), p.weights());
    }

    #[test]
    fn coupling_distance_example() {
        let d = geometric_coupling_distance(0.2, 0.3, 2.0).unwrap();
        assert!((d - 0.1 / (0.6 * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn geometric_support_violation() {
        let r = MixingLaw::Discrete { support: vec![0.1, 0.7], weights: vec![0.5, 0.5] };
        assert!(geometric_mixture_bound(0.4, &r).is_err());
        assert_eq!(geometric_mixture_bound(0.25, &MixingLaw::Point { lambda: 0.25 }).unwrap(), 0.0);
    }
}
