//! First- and second-order intertwining constructions: the modified rates and
//! potentials obtained when a (weighted) gradient is commuted with the
//! semigroup, hypothesis checks, and numerical verification of the relations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bdp::{
    build_generator, semigroup_apply, BirthDeathRates, Potential, RateTable, TruncatedOperator, Truncation,
};
use crate::error::{Error, Result};
use crate::measures::WeightSequence;

/// Relative tolerance used for the monotonicity and constancy tests on potentials.
const SHAPE_TOL: f64 = 1e-12;

/// Test functions used by the verification routines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `min(x, cap)`.
    CappedIdentity { cap: f64 },
    /// `min(x, cap)^2`.
    CappedSquare { cap: f64 },
    /// `sum_k c_k x^k` (unbounded).
    Polynomial { coeffs: Vec<f64> },
    /// Uniform values in `[-1, 1]` on `{0..window}`, constant afterwards.
    RandomBounded { seed: u64, window: usize },
    /// Explicit values, extended by the last one.
    Table { values: Vec<f64> },
}

impl TestFunction {
    /// Values on `{0..len-1}`.
    pub fn values(&self, len: usize) -> Vec<f64> {
        match self {
            TestFunction::CappedIdentity { cap } => (0..len).map(|x| (x as f64).min(*cap)).collect(),
            TestFunction::CappedSquare { cap } => (0..len).map(|x| (x as f64).min(*cap).powi(2)).collect(),
            TestFunction::Polynomial { coeffs } => {
                (0..len).map(|x| coeffs.iter().rev().fold(0.0, |acc, c| acc * x as f64 + c)).collect()
            }
            TestFunction::RandomBounded { seed, window } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let head: Vec<f64> = (0..=*window).map(|_| rng.random_range(-1.0..=1.0)).collect();
                (0..len).map(|x| head[x.min(*window)]).collect()
            }
            TestFunction::Table { values } => {
                let last = values.last().copied().unwrap_or(0.0);
                (0..len).map(|x| values.get(x).copied().unwrap_or(last)).collect()
            }
        }
    }
}

fn require_len(u: &WeightSequence, len: usize, name: &str) -> Result<()> {
    if u.len() < len {
        return Err(Error::InvalidParameter(format!("weight sequence {name} has {} entries, {len} required", u.len())));
    }
    Ok(())
}

fn require_f(f: &[f64], len: usize) -> Result<()> {
    if f.len() < len {
        return Err(Error::InvalidParameter(format!("test function has {} values, {len} required", f.len())));
    }
    Ok(())
}

/// Minimum over the interior window, its index, and whether the index is near `N`.
fn interior_min(values: &[f64], trunc: Truncation) -> Result<(f64, usize, bool)> {
    let end = trunc.interior_end()?;
    let mut best = (f64::INFINITY, 0);
    for (x, v) in values[..=end].iter().enumerate() {
        if *v < best.0 {
            best = (*v, x);
        }
    }
    Ok((best.0, best.1, trunc.near_boundary(best.1)))
}

/// `V_u(x) = alpha(x) - alpha_u(x) + beta(x+1) - beta_u(x)`.
pub fn forward_potential_at(rates: &BirthDeathRates, u: &dyn Fn(usize) -> f64, x: usize) -> f64 {
    let alpha_u = u(x + 1) / u(x) * rates.alpha(x + 1);
    let beta_u = if x == 0 { 0.0 } else { u(x - 1) / u(x) * rates.beta(x) };
    rates.alpha(x) - alpha_u + rates.beta(x + 1) - beta_u
}

/// `(V_u(x-1) - V_u(x)) / v(x)` for `x >= 1`.
fn star_drop_at(rates: &BirthDeathRates, u: &dyn Fn(usize) -> f64, v: &dyn Fn(usize) -> f64, x: usize) -> f64 {
    (forward_potential_at(rates, u, x - 1) - forward_potential_at(rates, u, x)) / v(x)
}

/// The potential `V_{u,*v}(x)` of the second-order (forward then backward gradient) relation.
pub fn second_star_potential_at(
    rates: &BirthDeathRates,
    u: &dyn Fn(usize) -> f64,
    v: &dyn Fn(usize) -> f64,
    x: usize,
) -> f64 {
    let a = |y| rates.alpha(y);
    let b = |y| rates.beta(y);
    let lead = (1.0 + v(x + 1) / v(x)) * u(x + 1) / u(x) * a(x + 1);
    if x == 0 {
        return a(0) - lead + b(1);
    }
    let back = if x >= 2 { v(x - 1) / v(x) * u(x - 2) / u(x - 1) * b(x - 1) } else { 0.0 };
    let mass: f64 = (0..x).map(v).sum();
    (1.0 + u(x) / u(x - 1)) * a(x) - lead + b(x + 1) - back - mass * star_drop_at(rates, u, v, x)
}

/// Modified process and potential of the first-order forward relation
/// `d_u P_t f = P^{V_u}_{u,t} d_u f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardSystem {
    pub rates_u: BirthDeathRates,
    pub potential_u: Potential,
    pub sigma_u: f64,
    pub argmin: usize,
    pub boundary_flag: bool,
}

impl ForwardSystem {
    /// `L_u - V_u` on `{0..N}`.
    pub fn operator(&self) -> Result<TruncatedOperator> {
        let t = self.rates_u.tabulate(self.potential_u.values().len())?;
        TruncatedOperator::birth_death(&t.alpha, &t.beta, Some(self.potential_u.values()))
    }
}

/// Derives `alpha_u`, `beta_u`, `V_u` on `{0..N}`; needs `u` on `{0..N+1}`.
pub fn derive_forward(
    rates: &BirthDeathRates,
    u: &WeightSequence,
    trunc: impl Into<Truncation>,
) -> Result<ForwardSystem> {
    let trunc = trunc.into();
    let n = trunc.n;
    require_len(u, n + 2, "u")?;
    rates.tabulate(n + 2)?;
    let uf = |x: usize| u.value(x);
    let alpha: Vec<f64> = (0..=n).map(|x| uf(x + 1) / uf(x) * rates.alpha(x + 1)).collect();
    let beta: Vec<f64> = (0..=n).map(|x| if x == 0 { 0.0 } else { uf(x - 1) / uf(x) * rates.beta(x) }).collect();
    let v: Vec<f64> = (0..=n).map(|x| forward_potential_at(rates, &uf, x)).collect();
    let (sigma_u, argmin, boundary_flag) = interior_min(&v, trunc)?;
    Ok(ForwardSystem {
        rates_u: BirthDeathRates::table(alpha, beta)?,
        potential_u: Potential::new(v)?,
        sigma_u,
        argmin,
        boundary_flag,
    })
}

/// Modified process and potential of the backward-gradient relation
/// `d*_u P_t f = P^{V_{*u}}_{*u,t} d*_u f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackwardSystem {
    /// `alpha_{*u}`, `beta_{*u}`; `beta_{*u}(1) = 0`, so state 0 is never re-entered.
    pub rates: RateTable,
    pub potential: Potential,
    pub sigma: f64,
    pub argmin: usize,
    pub boundary_flag: bool,
    /// `max_x |V_{*u}(x+1) - V_{u(.+1)}(x)|` over `{0..N-1}`.
    pub shift_identity_error: f64,
}

impl BackwardSystem {
    /// `L_{*u} - V_{*u}` on `{0..N}`.
    pub fn operator(&self) -> Result<TruncatedOperator> {
        TruncatedOperator::birth_death(&self.rates.alpha, &self.rates.beta, Some(self.potential.values()))
    }
}

/// Derives `alpha_{*u}`, `beta_{*u}`, `V_{*u}` on `{0..N}`; needs `u` on `{0..N+1}`.
pub fn derive_backward(
    rates: &BirthDeathRates,
    u: &WeightSequence,
    trunc: impl Into<Truncation>,
) -> Result<BackwardSystem> {
    let trunc = trunc.into();
    let n = trunc.n;
    require_len(u, n + 2, "u")?;
    rates.tabulate(n + 1)?;
    let uf = |x: usize| u.value(x);
    let alpha: Vec<f64> = (0..=n).map(|x| uf(x + 1) / uf(x) * rates.alpha(x)).collect();
    let beta: Vec<f64> = (0..=n).map(|x| if x == 0 { 0.0 } else { uf(x - 1) / uf(x) * rates.beta(x - 1) }).collect();
    let v: Vec<f64> = (0..=n)
        .map(|x| {
            let prev = if x == 0 { 0.0 } else { rates.alpha(x - 1) };
            prev - alpha[x] + rates.beta(x) - beta[x]
        })
        .collect();
    let shifted = |x: usize| uf(x + 1);
    let shift_identity_error =
        (0..n).map(|x| (v[x + 1] - forward_potential_at(rates, &shifted, x)).abs()).fold(0.0, f64::max);
    let (sigma, argmin, boundary_flag) = interior_min(&v, trunc)?;
    Ok(BackwardSystem {
        rates: RateTable { alpha, beta },
        potential: Potential::new(v)?,
        sigma,
        argmin,
        boundary_flag,
        shift_identity_error,
    })
}

/// Modified process of the second-order relation `d*_v d_u P_t f = P^{V_{u,*v}}_{u,*v,t} d*_v d_u f`.
///
/// Besides nearest-neighbour moves, the process jumps from `x >= 2` to
/// `k <= x-2` at rate `drop(x) v(k)`, where `drop(x) = (V_u(x-1) - V_u(x)) / v(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderStarSystem {
    pub rates: RateTable,
    /// `drop(x)` on `{0..N}` (zero at the origin).
    pub drop: Vec<f64>,
    /// Total nonlocal rate `drop(x) * sum_{j<=x-2} v(j)`.
    pub nonlocal_rate: Vec<f64>,
    /// `v` on `{0..N}`; the nonlocal target `k` is chosen with weight `v(k)`.
    pub v: Vec<f64>,
    pub potential: Potential,
    pub sigma: f64,
    pub argmin: usize,
    pub boundary_flag: bool,
}

impl SecondOrderStarSystem {
    /// Off-diagonal jump rates on `{0..N}`, reflecting at `N`.
    fn jumps(&self) -> Vec<Vec<(usize, f64)>> {
        let n = self.v.len() - 1;
        (0..=n)
            .map(|x| {
                let mut row = Vec::new();
                if x >= 2 && self.drop[x] > 0.0 {
                    for k in 0..x - 1 {
                        row.push((k, self.drop[x] * self.v[k]));
                    }
                }
                if x >= 1 && self.rates.beta[x] > 0.0 {
                    row.push((x - 1, self.rates.beta[x]));
                }
                if x < n {
                    row.push((x + 1, self.rates.alpha[x]));
                }
                row
            })
            .collect()
    }

    /// Markov generator of the nonlocal process (no potential).
    pub fn generator(&self) -> Result<TruncatedOperator> {
        let n = self.v.len() - 1;
        TruncatedOperator::from_jumps(self.jumps(), None, self.rates.alpha[n])
    }

    /// `L_{u,*v} - V_{u,*v}` on `{0..N}`.
    pub fn operator(&self) -> Result<TruncatedOperator> {
        let n = self.v.len() - 1;
        TruncatedOperator::from_jumps(self.jumps(), Some(self.potential.values().to_vec()), self.rates.alpha[n])
    }
}

fn check_nonincreasing(v: &[f64], what: &str) -> Result<()> {
    let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    for x in 0..v.len().saturating_sub(1) {
        if v[x + 1] > v[x] + SHAPE_TOL * scale {
            return Err(Error::Hypothesis(format!(
                "{what} increases between states {x} and {} ({} -> {})",
                x + 1,
                v[x],
                v[x + 1]
            )));
        }
    }
    Ok(())
}

fn max_deviation(v: &[f64]) -> f64 {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Derives the second-order system on `{0..N}`; needs `V_u` non-increasing on
/// `{0..N}` and `u`, `v` on `{0..N+1}`.
pub fn derive_second_star(
    rates: &BirthDeathRates,
    u: &WeightSequence,
    v: &WeightSequence,
    trunc: impl Into<Truncation>,
) -> Result<SecondOrderStarSystem> {
    let trunc = trunc.into();
    let n = trunc.n;
    require_len(u, n + 2, "u")?;
    require_len(v, n + 2, "v")?;
    rates.tabulate(n + 2)?;
    let uf = |x: usize| u.value(x);
    let vf = |x: usize| v.value(x);
    let vu: Vec<f64> = (0..=n).map(|x| forward_potential_at(rates, &uf, x)).collect();
    check_nonincreasing(&vu, "V_u")?;
    let drop: Vec<f64> = (0..=n).map(|x| if x == 0 { 0.0 } else { ((vu[x - 1] - vu[x]) / vf(x)).max(0.0) }).collect();
    let alpha: Vec<f64> = (0..=n).map(|x| vf(x + 1) / vf(x) * uf(x + 1) / uf(x) * rates.alpha(x + 1)).collect();
    let beta: Vec<f64> = (0..=n)
        .map(|x| match x {
            0 => 0.0,
            1 => vf(0) * drop[1],
            _ => vf(x - 1) / vf(x) * uf(x - 2) / uf(x - 1) * rates.beta(x - 1) + vf(x - 1) * drop[x],
        })
        .collect();
    let nonlocal_rate: Vec<f64> = (0..=n).map(|x| if x < 2 { 0.0 } else { drop[x] * v.prefix(x - 1) }).collect();
    let pot: Vec<f64> = (0..=n).map(|x| second_star_potential_at(rates, &uf, &vf, x)).collect();
    let (sigma, argmin, boundary_flag) = interior_min(&pot, trunc)?;
    Ok(SecondOrderStarSystem {
        rates: RateTable { alpha, beta },
        drop,
        nonlocal_rate,
        v: v.values()[..=n].to_vec(),
        potential: Potential::new(pot)?,
        sigma,
        argmin,
        boundary_flag,
    })
}

/// Modified process of the second-order relation `d_v d_u P_t f = P^{V_{u,v}}_{u,v,t} d_v d_u f`,
/// valid when `V_u` is constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderPlainSystem {
    pub rates_uv: BirthDeathRates,
    pub potential_uv: Potential,
    pub sigma: f64,
    pub argmin: usize,
    pub boundary_flag: bool,
}

impl SecondOrderPlainSystem {
    /// `L_{u,v} - V_{u,v}` on `{0..N}`.
    pub fn operator(&self) -> Result<TruncatedOperator> {
        let t = self.rates_uv.tabulate(self.potential_uv.values().len())?;
        TruncatedOperator::birth_death(&t.alpha, &t.beta, Some(self.potential_uv.values()))
    }
}

/// Derives the plain second-order system on `{0..N}`; needs `V_u` constant on
/// the interior window and `u` on `{0..N+2}`, `v` on `{0..N+1}`.
pub fn derive_second_plain(
    rates: &BirthDeathRates,
    u: &WeightSequence,
    v: &WeightSequence,
    trunc: impl Into<Truncation>,
) -> Result<SecondOrderPlainSystem> {
    let trunc = trunc.into();
    let n = trunc.n;
    require_len(u, n + 3, "u")?;
    require_len(v, n + 2, "v")?;
    rates.tabulate(n + 3)?;
    let uf = |x: usize| u.value(x);
    let vf = |x: usize| v.value(x);
    let end = trunc.interior_end()?;
    let vu: Vec<f64> = (0..=end).map(|x| forward_potential_at(rates, &uf, x)).collect();
    let dev = max_deviation(&vu);
    let scale = vu.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if dev > SHAPE_TOL * scale {
        return Err(Error::Hypothesis(format!("V_u is not constant: max deviation {dev:.3e}")));
    }
    let alpha: Vec<f64> = (0..=n).map(|x| vf(x + 1) / vf(x) * uf(x + 2) / uf(x + 1) * rates.alpha(x + 2)).collect();
    let beta: Vec<f64> =
        (0..=n).map(|x| if x == 0 { 0.0 } else { vf(x - 1) / vf(x) * uf(x - 1) / uf(x) * rates.beta(x) }).collect();
    let pot: Vec<f64> = (0..=n)
        .map(|x| {
            let tail = if x == 0 { 0.0 } else { (1.0 + vf(x - 1) / vf(x)) * uf(x - 1) / uf(x) * rates.beta(x) };
            rates.alpha(x) - alpha[x] + (1.0 + uf(x) / uf(x + 1)) * rates.beta(x + 1) - tail
        })
        .collect();
    let (sigma, argmin, boundary_flag) = interior_min(&pot, trunc)?;
    Ok(SecondOrderPlainSystem {
        rates_uv: BirthDeathRates::table(alpha, beta)?,
        potential_uv: Potential::new(pot)?,
        sigma,
        argmin,
        boundary_flag,
    })
}

/// Shape of `V_1` and the resulting hypothesis sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub v1_nonneg: bool,
    pub v1_nonincreasing: bool,
    pub v1_constant: bool,
    /// `V_1` non-increasing and non-negative.
    pub h1_ok: bool,
    /// `V_1` a non-negative constant.
    pub h2_ok: bool,
    pub inf_v1: f64,
    /// `inf V_{1,*u}` when `V_1` is non-increasing.
    pub inf_v1_star_u: Option<f64>,
    /// `inf V_{1,u}` when `V_1` is constant.
    pub inf_v1_u: Option<f64>,
}

/// Evaluates `V_1` on `{0..N}` and the second-order infima with weight `u`.
pub fn check_hypotheses(
    rates: &BirthDeathRates,
    u: &WeightSequence,
    trunc: impl Into<Truncation>,
) -> Result<HypothesisReport> {
    let trunc = trunc.into();
    let n = trunc.n;
    rates.tabulate(n + 2)?;
    let v1: Vec<f64> = (0..=n).map(|x| rates.v1(x)).collect();
    let scale = v1.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let inf_v1 = v1.iter().copied().fold(f64::INFINITY, f64::min);
    let v1_nonneg = inf_v1 >= -SHAPE_TOL * scale;
    let v1_nonincreasing = check_nonincreasing(&v1, "V_1").is_ok();
    let v1_constant = max_deviation(&v1) <= SHAPE_TOL * scale;
    let ones = WeightSequence::ones(n + 3);
    let inf_v1_star_u = if v1_nonincreasing && u.len() >= n + 2 {
        Some(derive_second_star(rates, &ones, u, trunc)?.sigma)
    } else {
        None
    };
    let inf_v1_u =
        if v1_constant && u.len() >= n + 2 { Some(derive_second_plain(rates, &ones, u, trunc)?.sigma) } else { None };
    Ok(HypothesisReport {
        v1_nonneg,
        v1_nonincreasing,
        v1_constant,
        h1_ok: v1_nonneg && v1_nonincreasing,
        h2_ok: v1_nonneg && v1_constant,
        inf_v1,
        inf_v1_star_u,
        inf_v1_u,
    })
}

/// The intertwining relations that can be verified.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    FirstForward,
    FirstBackward,
    SecondStar,
    SecondPlain,
}

/// Residual of a verified relation on the interior window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub relation: String,
    pub hypotheses: String,
    pub residual: f64,
    pub argmax_index: usize,
    pub boundary_flag: bool,
    /// Sup norm of the left-hand side on the window, for scale.
    pub lhs_sup: f64,
}

fn forward_diff(f: &[f64], u: &WeightSequence) -> Vec<f64> {
    (0..f.len() - 1).map(|x| (f[x + 1] - f[x]) / u.value(x)).collect()
}

fn backward_diff(f: &[f64], v: &WeightSequence) -> Vec<f64> {
    (0..f.len())
        .map(|x| {
            let prev = if x == 0 { 0.0 } else { f[x - 1] };
            (prev - f[x]) / v.value(x)
        })
        .collect()
}

fn compare(
    lhs: &[f64],
    rhs: &[f64],
    trunc: Truncation,
    relation: String,
    hypotheses: String,
) -> Result<VerificationReport> {
    let end = trunc.interior_end()?;
    let mut residual = 0.0;
    let mut argmax_index = 0;
    let mut lhs_sup = 0.0f64;
    for x in 0..=end {
        let d = (lhs[x] - rhs[x]).abs();
        if d > residual {
            residual = d;
            argmax_index = x;
        }
        lhs_sup = lhs_sup.max(lhs[x].abs());
    }
    Ok(VerificationReport {
        relation,
        hypotheses,
        residual,
        argmax_index,
        boundary_flag: residual > 0.0 && trunc.near_boundary(argmax_index),
        lhs_sup,
    })
}

/// Gradient(s) of `P_t f` and of `f` for the given relation, on `{0..N}`
/// (with `N-1` valid entries for forward gradients of `P_t f`).
fn gradient_pair(
    relation: Relation,
    pf: &[f64],
    f: &[f64],
    u: &WeightSequence,
    v: &WeightSequence,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    match relation {
        Relation::FirstForward => (forward_diff(pf, u), forward_diff(&f[..=n + 1], u)),
        Relation::FirstBackward => (backward_diff(pf, u), backward_diff(&f[..=n], u)),
        Relation::SecondStar => {
            (backward_diff(&forward_diff(pf, u), v), backward_diff(&forward_diff(&f[..=n + 1], u), v))
        }
        Relation::SecondPlain => {
            (forward_diff(&forward_diff(pf, u), v), forward_diff(&forward_diff(&f[..=n + 2], u), v))
        }
    }
}

/// Derived operator of a relation, with a description of the checked hypotheses.
fn derived_operator(
    relation: Relation,
    rates: &BirthDeathRates,
    u: &WeightSequence,
    v: &WeightSequence,
    trunc: Truncation,
) -> Result<(TruncatedOperator, f64, String)> {
    Ok(match relation {
        Relation::FirstForward => {
            let s = derive_forward(rates, u, trunc)?;
            (s.operator()?, s.sigma_u, "none".into())
        }
        Relation::FirstBackward => {
            let s = derive_backward(rates, u, trunc)?;
            (s.operator()?, s.sigma, "none".into())
        }
        Relation::SecondStar => {
            let s = derive_second_star(rates, u, v, trunc)?;
            (s.operator()?, s.sigma, "V_u non-increasing on {0..N}".into())
        }
        Relation::SecondPlain => {
            let s = derive_second_plain(rates, u, v, trunc)?;
            (s.operator()?, s.sigma, "V_u constant on the interior window".into())
        }
    })
}

/// Compares the gradient of `P_t f` with the derived Feynman-Kac semigroup
/// applied to the gradient of `f`, on `{0..N-margin}`.
///
/// `f` must hold values on `{0..N+2}`; `u`, `v` on `{0..N+2}`. When all three
/// hold more values, both semigroups run on the wider window `{0..M}` with
/// `M + 3` the shortest length, which pushes the reflecting boundary away
/// from the reported states.
pub fn verify_intertwining(
    relation: Relation,
    rates: &BirthDeathRates,
    u: &WeightSequence,
    v: &WeightSequence,
    t: f64,
    f: &[f64],
    trunc: impl Into<Truncation>,
) -> Result<VerificationReport> {
    let trunc = trunc.into();
    let n = trunc.n;
    require_f(f, n + 3)?;
    require_len(u, n + 3, "u")?;
    require_len(v, n + 3, "v")?;
    let m = f.len().min(u.len()).min(v.len()) - 3;
    let work = Truncation::with_margin(m, trunc.margin + (m - n));
    let (op, _, hyp) = derived_operator(relation, rates, u, v, work)?;
    let base = build_generator(rates, m)?;
    let pf = semigroup_apply(&base, t, &f[..=m])?;
    let (lhs, df) = gradient_pair(relation, &pf, f, u, v, m);
    let rhs = semigroup_apply(&op, t, &df[..=m])?;
    compare(&lhs, &rhs, trunc, format!("{relation:?}"), hyp)
}

/// Models with explicit iterated relations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum IteratedModel {
    MmInfinity { lambda: f64 },
    Gwi { r: f64, p: f64 },
}

/// Residual of `d^k P_t f = e^{-c k t} P_{k,t} d^k f` with `c = 1` (M/M/inf) or
/// `c = 1-p` and `P_k` the GWI semigroup with immigration `r + k`.
///
/// `f` must hold values on `{0..N+k}`; extra values widen the working window
/// as in [`verify_intertwining`].
pub fn verify_iterated(
    model: IteratedModel,
    k: usize,
    t: f64,
    f: &[f64],
    trunc: impl Into<Truncation>,
) -> Result<VerificationReport> {
    let trunc = trunc.into();
    let reported = trunc.n;
    if k > 5 {
        return Err(Error::InvalidParameter(format!("order k = {k} exceeds the cap 5")));
    }
    require_f(f, reported + k + 1)?;
    let n = f.len() - k - 1;
    let (base, shifted, c) = match model {
        IteratedModel::MmInfinity { lambda } => {
            let r = BirthDeathRates::mm_infinity(lambda)?;
            (r.clone(), r, 1.0)
        }
        IteratedModel::Gwi { r, p } => (BirthDeathRates::gwi(r, p)?, BirthDeathRates::gwi(r + k as f64, p)?, 1.0 - p),
    };
    let diff_k = |g: &[f64]| {
        let mut g = g.to_vec();
        for _ in 0..k {
            g = g.windows(2).map(|w| w[1] - w[0]).collect();
        }
        g
    };
    let pf = semigroup_apply(&build_generator(&base, n)?, t, &f[..=n])?;
    let lhs = diff_k(&pf);
    let dkf = diff_k(&f[..=n + k]);
    let damp = (-c * k as f64 * t).exp();
    let rhs: Vec<f64> =
        semigroup_apply(&build_generator(&shifted, n)?, t, &dkf)?.into_iter().map(|x| x * damp).collect();
    trunc.interior_end()?;
    let window = Truncation::with_margin(reported, trunc.margin.max(k));
    compare(&lhs, &rhs, window, format!("iterated order {k}"), "none".into())
}

/// Second-order contraction variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractionVariant {
    Star,
    Plain,
}

/// Both sides of `sup |D P_t f| <= e^{-sigma t} sup |D f|` on the interior window,
/// with `D = d*_v d_u` (star) or `d_v d_u` (plain).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub lhs: f64,
    pub rhs: f64,
    pub sigma: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Checks the contraction bound; `f`, `u` and `v` need values on `{0..N+2}`, and
/// extra values widen the working window as in [`verify_intertwining`].
pub fn verify_contraction(
    rates: &BirthDeathRates,
    u: &WeightSequence,
    v: &WeightSequence,
    variant: ContractionVariant,
    f: &[f64],
    t: f64,
    trunc: impl Into<Truncation>,
) -> Result<ContractionReport> {
    let trunc = trunc.into();
    let n = trunc.n;
    require_f(f, n + 3)?;
    require_len(u, n + 3, "u")?;
    require_len(v, n + 3, "v")?;
    let relation = match variant {
        ContractionVariant::Star => Relation::SecondStar,
        ContractionVariant::Plain => Relation::SecondPlain,
    };
    let m = f.len().min(u.len()).min(v.len()) - 3;
    let work = Truncation::with_margin(m, trunc.margin + (m - n));
    let (_, sigma, _) = derived_operator(relation, rates, u, v, work)?;
    let pf = semigroup_apply(&build_generator(rates, m)?, t, &f[..=m])?;
    let (dpf, df) = gradient_pair(relation, &pf, f, u, v, m);
    let end = trunc.interior_end()?;
    let sup = |g: &[f64]| g[..=end].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let lhs = sup(&dpf);
    let rhs = (-sigma * t).exp() * sup(&df);
    let slack = rhs - lhs;
    Ok(ContractionReport { lhs, rhs, sigma, slack, holds: slack >= -1e-10 })
}

/// Result of the M/M/1 grid search over geometric weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSearch {
    pub best_sigma: f64,
    /// Grid points `(r, q)` within `1e-9` of the best value.
    pub argmax: Vec<(f64, f64)>,
}

/// Maximizes `sigma(u,*v) = min_x V_{u,*v}(x)` over `u = r^x`, `v = q^x` for
/// the M/M/1 queue; the potential is constant on `x >= 1`, so `x in {0,1,2}` suffices.
pub fn mm1_sigma_search(alpha: f64, beta: f64, r_grid: &[f64], q_grid: &[f64]) -> Result<SigmaSearch> {
    if !(alpha > 0.0 && alpha < beta) {
        return Err(Error::InvalidParameter(format!("need 0 < alpha < beta (got {alpha}, {beta})")));
    }
    if let Some(q) = q_grid.iter().find(|q| **q < 1.0) {
        return Err(Error::InvalidParameter(format!("q grid value {q} is below 1")));
    }
    if let Some(r) = r_grid.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::InvalidParameter(format!("r grid value {r} is not positive")));
    }
    let rates = BirthDeathRates::mm1(alpha, beta)?;
    let mut values = Vec::with_capacity(r_grid.len() * q_grid.len());
    for &r in r_grid {
        for &q in q_grid {
            let u = |x: usize| r.powi(x as i32);
            let v = |x: usize| q.powi(x as i32);
            let s = (0..3).map(|x| second_star_potential_at(&rates, &u, &v, x)).fold(f64::INFINITY, f64::min);
            values.push((r, q, s));
        }
    }
    let best_sigma = values.iter().map(|t| t.2).fold(f64::NEG_INFINITY, f64::max);
    let argmax = values.iter().filter(|t| t.2 >= best_sigma - 1e-9).map(|t| (t.0, t.1)).collect();
    Ok(SigmaSearch { best_sigma, argmax })
}
