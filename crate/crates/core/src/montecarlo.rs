//! Event-driven simulation of birth-death and nonlocal jump processes,
//! Feynman-Kac estimates, the monotone coupling of two neighbouring starts,
//! and the Mehler-type decompositions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::bdp::{
    build_generator, evolve_distribution, kendall_law, kendall_theta, BirthDeathRates, TruncatedOperator,
};
use crate::error::{Error, Result};
use crate::measures::{pairwise_sum, poisson_measure, tv_distance, DiscreteMeasure};

/// Dynamics that can be simulated.
#[derive(Clone, Copy, Debug)]
pub enum Dynamics<'a> {
    /// Birth-death rates with a hard state cap.
    Rates { rates: &'a BirthDeathRates, cap: usize },
    /// A truncated jump operator (for instance a second-order nonlocal system);
    /// reaching its last state counts as an explosion. Potentials are ignored.
    Operator(&'a TruncatedOperator),
}

impl Dynamics<'_> {
    fn cap(&self) -> usize {
        match self {
            Dynamics::Rates { cap, .. } => *cap,
            Dynamics::Operator(op) => op.last_state(),
        }
    }

    fn total_rate(&self, x: usize) -> f64 {
        match self {
            Dynamics::Rates { rates, .. } => rates.alpha(x) + rates.beta(x),
            Dynamics::Operator(op) => op.out_rate(x),
        }
    }

    fn next_state(&self, x: usize, total: f64, rng: &mut ChaCha8Rng) -> usize {
        let target = rng.random::<f64>() * total;
        match self {
            Dynamics::Rates { rates, .. } => {
                if target < rates.alpha(x) || x == 0 {
                    x + 1
                } else {
                    x - 1
                }
            }
            Dynamics::Operator(op) => {
                let jumps = op.jumps(x);
                let mut acc = 0.0;
                for (y, r) in jumps {
                    acc += r;
                    if target < acc {
                        return *y;
                    }
                }
                jumps.last().map(|j| j.0).unwrap_or(x)
            }
        }
    }
}

/// A piecewise-constant path on `[0, terminal_time]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    /// Jump times, strictly increasing.
    pub jump_times: Vec<f64>,
    /// `states[0]` is the start and `states[k]` the state after the `k`-th jump.
    pub states: Vec<usize>,
    pub terminal_time: f64,
}

impl PathSample {
    /// State at time `t`.
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|s| *s <= t);
        self.states[k]
    }

    pub fn final_state(&self) -> usize {
        *self.states.last().unwrap()
    }

    /// `int_0^T v(X_s) ds`, exact on the piecewise-constant path.
    pub fn integral(&self, v: impl Fn(usize) -> f64) -> f64 {
        let mut prev = 0.0;
        let mut terms = Vec::with_capacity(self.states.len());
        for (k, x) in self.states.iter().enumerate() {
            let end = self.jump_times.get(k).copied().unwrap_or(self.terminal_time);
            terms.push(v(*x) * (end - prev));
            prev = end;
        }
        pairwise_sum(&terms)
    }

    /// Largest state visited.
    pub fn max_state(&self) -> usize {
        self.states.iter().copied().max().unwrap_or(0)
    }
}

/// Generator for path `index` of the run seeded with `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn exp_time(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / rate
}

fn simulate_with(dynamics: Dynamics<'_>, x0: usize, horizon: f64, rng: &mut ChaCha8Rng) -> Result<PathSample> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon {horizon} must be positive")));
    }
    let cap = dynamics.cap();
    if x0 >= cap {
        return Err(Error::Explosion { state: x0, cap });
    }
    let mut path = PathSample { jump_times: Vec::new(), states: vec![x0], terminal_time: horizon };
    let mut t = 0.0;
    let mut x = x0;
    loop {
        let total = dynamics.total_rate(x);
        if !(total > 0.0) {
            break;
        }
        t += exp_time(rng, total);
        if t > horizon {
            break;
        }
        x = dynamics.next_state(x, total, rng);
        if x >= cap {
            return Err(Error::Explosion { state: x, cap });
        }
        path.jump_times.push(t);
        path.states.push(x);
    }
    Ok(path)
}

/// Exact Gillespie simulation of one path of length `horizon` from `x0`, using stream `index`.
pub fn simulate_path(dynamics: Dynamics<'_>, x0: usize, horizon: f64, seed: u64, index: u64) -> Result<PathSample> {
    simulate_with(dynamics, x0, horizon, &mut path_rng(seed, index))
}

/// `n_paths` independent paths, one stream per path index.
pub fn simulate_paths(
    dynamics: Dynamics<'_>,
    x0: usize,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<PathSample>> {
    (0..n_paths as u64).into_par_iter().map(|i| simulate_path(dynamics, x0, horizon, seed, i)).collect()
}

/// CSV rows `path_id,time,state` (the start at time 0 and every jump).
pub fn paths_csv(paths: &[PathSample]) -> String {
    let mut s = String::from("path_id,time,state\n");
    for (id, p) in paths.iter().enumerate() {
        s.push_str(&format!("{id},0,{}\n", p.states[0]));
        for (t, x) in p.jump_times.iter().zip(&p.states[1..]) {
            s.push_str(&format!("{id},{t:.17e},{x}\n"));
        }
    }
    s
}

/// A Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl McEstimate {
    fn from_samples(samples: &[f64], seed: u64) -> Self {
        let n = samples.len();
        let mean = pairwise_sum(samples) / n as f64;
        let sq: Vec<f64> = samples.iter().map(|v| (v - mean).powi(2)).collect();
        let var = if n > 1 { pairwise_sum(&sq) / (n - 1) as f64 } else { 0.0 };
        McEstimate { estimate: mean, std_error: (var / n as f64).sqrt(), n_paths: n, seed }
    }

    /// `|estimate - reference| <= k * std_error`, with a floor for zero-variance samples.
    pub fn within(&self, reference: f64, k: f64) -> bool {
        (self.estimate - reference).abs() <= k * self.std_error + 1e-12
    }
}

fn check_samples(n_paths: usize) -> Result<()> {
    if n_paths == 0 {
        return Err(Error::InvalidParameter("at least one path is required".into()));
    }
    Ok(())
}

/// Monte Carlo estimate of `E[f(X_t) exp(-int_0^t V(X_s) ds)]` from `x0`.
/// `v` and `f` are tabulated; leaving their range counts as an explosion.
pub fn feynman_kac_mc(
    rates: &BirthDeathRates,
    v: &[f64],
    f: &[f64],
    x0: usize,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_samples(n_paths)?;
    let cap = v.len().min(f.len());
    let dynamics = Dynamics::Rates { rates, cap };
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = simulate_path(dynamics, x0, t, seed, i)?;
            Ok(f[path.final_state()] * (-path.integral(|x| v[x])).exp())
        })
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&samples, seed))
}

/// Jointly simulated paths from `x` and `x+1` with the indicator `S = X^{x+1} - X^x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledPath {
    pub lower: PathSample,
    pub upper: PathSample,
    /// Time at which `S` is absorbed at `0`, if before the horizon.
    pub absorption_time: Option<f64>,
}

impl CoupledPath {
    /// `S` as a path with values in `{1, 0}`.
    pub fn s_path(&self) -> PathSample {
        match self.absorption_time {
            Some(t) => PathSample { jump_times: vec![t], states: vec![1, 0], terminal_time: self.lower.terminal_time },
            None => PathSample { jump_times: Vec::new(), states: vec![1], terminal_time: self.lower.terminal_time },
        }
    }
}

fn coupled_with(
    rates: &BirthDeathRates,
    x: usize,
    horizon: f64,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CoupledPath> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon {horizon} must be positive")));
    }
    let mut lower = PathSample { jump_times: Vec::new(), states: vec![x], terminal_time: horizon };
    let mut upper = PathSample { jump_times: Vec::new(), states: vec![x + 1], terminal_time: horizon };
    let mut absorption = None;
    let (mut lo, mut up) = (x, x + 1);
    let mut t = 0.0;
    loop {
        if up >= cap {
            return Err(Error::Explosion { state: up, cap });
        }
        let together_up = rates.alpha(up);
        let together_down = rates.beta(lo);
        let (split_up, split_down) = if lo == up {
            (0.0, 0.0)
        } else {
            let a = rates.alpha(lo) - rates.alpha(up);
            let b = rates.beta(up) - rates.beta(lo);
            if a < 0.0 || b < 0.0 {
                return Err(Error::Monotonicity(lo));
            }
            (a, b)
        };
        let total = together_up + together_down + split_up + split_down;
        if !(total > 0.0) {
            break;
        }
        t += exp_time(rng, total);
        if t > horizon {
            break;
        }
        let r = rng.random::<f64>() * total;
        let (new_lo, new_up) = if r < together_up {
            (lo + 1, up + 1)
        } else if r < together_up + together_down {
            (lo - 1, up - 1)
        } else if r < together_up + together_down + split_up {
            (lo + 1, up)
        } else {
            (lo, up - 1)
        };
        if new_lo == new_up && lo != up {
            absorption = Some(t);
        }
        if new_lo != lo {
            lower.jump_times.push(t);
            lower.states.push(new_lo);
        }
        if new_up != up {
            upper.jump_times.push(t);
            upper.states.push(new_up);
        }
        lo = new_lo;
        up = new_up;
    }
    Ok(CoupledPath { lower, upper, absorption_time: absorption })
}

/// Coupling of `X^x` and `X^{x+1}` in which, while they differ, both move together at
/// rates `alpha(X^{x+1})` and `beta(X^x)`, and they merge at rate `V_1(X^x)`; after
/// merging they move as one. Requires `alpha` non-increasing and `beta` non-decreasing
/// on the visited states.
pub fn coupling_simulate(
    rates: &BirthDeathRates,
    x: usize,
    horizon: f64,
    cap: usize,
    seed: u64,
    index: u64,
) -> Result<CoupledPath> {
    coupled_with(rates, x, horizon, cap, &mut path_rng(seed, index))
}

/// Estimates of `P(S_t = 1)` and `E[f(X^{x+1}_t) - f(X^x_t)]` from coupled paths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingEstimate {
    pub survival: McEstimate,
    pub gradient: McEstimate,
}

pub fn coupling_estimate(
    rates: &BirthDeathRates,
    x: usize,
    t: f64,
    f: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<CouplingEstimate> {
    check_samples(n_paths)?;
    let cap = f.len();
    let pairs: Vec<(f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let c = coupling_simulate(rates, x, t, cap, seed, i)?;
            let s = if c.absorption_time.is_none() { 1.0 } else { 0.0 };
            Ok((s, f[c.upper.final_state()] - f[c.lower.final_state()]))
        })
        .collect::<Result<_>>()?;
    let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let d: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(CouplingEstimate { survival: McEstimate::from_samples(&s, seed), gradient: McEstimate::from_samples(&d, seed) })
}

/// Law of the increment `Z_{i,t}` in `Y^x_t = Y^0_t + sum_{i<=x} Z_{i,t}` for the
/// process with rates `(p(s+k), k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MehlerWeights {
    pub w: Vec<f64>,
    pub p: f64,
    pub s: f64,
    pub t: f64,
    pub increment: IncrementLaw,
}

impl MehlerWeights {
    pub fn total(&self) -> f64 {
        pairwise_sum(&self.w)
    }

    pub fn measure(&self) -> Result<DiscreteMeasure> {
        DiscreteMeasure::new(self.w.clone(), 0.0)
    }
}

/// Law of the extra population `W` carried by the once-shifted process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncrementLaw {
    /// `W ~ NB(1, theta_t(p))`: one extra immigrant line that keeps branching.
    /// This is the law for which the convolution identity holds.
    Geometric,
    /// `W ~ Poisson(p(1 - e^{-t}))`, an M/M/inf queue that ignores branching of
    /// the extra population. Kept for comparison; the identity fails with it.
    Poisson,
}

fn pmf_list(law: IncrementLaw, p: f64, t: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0usize;
    match law {
        IncrementLaw::Poisson => {
            let mean = p * (1.0 - (-t).exp());
            if mean == 0.0 {
                return vec![1.0];
            }
            loop {
                let v = (-mean + k as f64 * mean.ln() - ln_gamma(k as f64 + 1.0)).exp();
                out.push(v);
                if k as f64 > mean && v < 1e-300 {
                    return out;
                }
                k += 1;
            }
        }
        IncrementLaw::Geometric => {
            let theta = kendall_theta(p, t);
            if theta <= 0.0 {
                return vec![1.0];
            }
            let mut v = 1.0 - theta;
            while v >= 1e-300 {
                out.push(v);
                v *= theta;
            }
            out
        }
    }
}

/// `w(0) = 1 - e^{-qt} P(W=0)` and `w(k) = e^{-qt} (P(W=k-1) - P(W=k))` with
/// `W ~ NB(1, theta_t(p))`, `q = 1 - p`.
pub fn mehler_weights_gwi(p: f64, s: f64, t: f64) -> Result<MehlerWeights> {
    mehler_weights_gwi_with(p, s, t, IncrementLaw::Geometric)
}

/// Mehler weights for a chosen law of `W`.
pub fn mehler_weights_gwi_with(p: f64, s: f64, t: f64, increment: IncrementLaw) -> Result<MehlerWeights> {
    if !(p > 0.0 && p < 1.0 && s > 0.0 && t >= 0.0) {
        return Err(Error::InvalidParameter(format!("need 0 < p < 1, s > 0, t >= 0 (got {p}, {s}, {t})")));
    }
    let q = 1.0 - p;
    let decay = (-q * t).exp();
    let pw = pmf_list(increment, p, t);
    let mut w = Vec::with_capacity(pw.len() + 1);
    w.push(1.0 - decay * pw[0]);
    for k in 1..=pw.len() {
        let below = pw[k - 1];
        let here = pw.get(k).copied().unwrap_or(0.0);
        w.push(decay * (below - here));
    }
    Ok(MehlerWeights { w, p, s, t, increment })
}

/// TV distance between the uniformization law of `Y^x_t` (rates `(p(s+k), k)`) and
/// `kendall_law(s, p, t) * w^{*x}`, both on `{0..n}`.
pub fn mehler_check_gwi(p: f64, s: f64, x: usize, t: f64, n: usize) -> Result<f64> {
    mehler_check_gwi_with(p, s, x, t, n, IncrementLaw::Geometric)
}

/// [`mehler_check_gwi`] with a chosen increment law.
pub fn mehler_check_gwi_with(p: f64, s: f64, x: usize, t: f64, n: usize, increment: IncrementLaw) -> Result<f64> {
    let weights = mehler_weights_gwi_with(p, s, t, increment)?.measure()?;
    let mut law = kendall_law(s, p, t, n)?;
    for _ in 0..x {
        law = law.convolve(&weights, n)?;
    }
    let rates = BirthDeathRates::gwi(s, p)?;
    let exact = transient_law(&rates, x, t, n)?;
    Ok(tv_distance(&exact, &law)?.value)
}

fn transient_law(rates: &BirthDeathRates, x: usize, t: f64, n: usize) -> Result<DiscreteMeasure> {
    if x > n {
        return Err(Error::InvalidParameter(format!("start {x} lies beyond the truncation {n}")));
    }
    let op = build_generator(rates, n)?;
    let mut mu = vec![0.0; n + 1];
    mu[x] = 1.0;
    let law = evolve_distribution(&op, t, &mu)?;
    DiscreteMeasure::normalized(law.into_iter().map(|v| v.max(0.0)).collect(), 0.0)
}

/// TV distance between the uniformization law of the M/M/inf queue from `x` at time
/// `t` and `Binomial(x, e^{-t}) * Poisson(lambda (1 - e^{-t}))`.
pub fn mehler_check_mminfty(lambda: f64, x: usize, t: f64, n: usize) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("time {t} must be non-negative")));
    }
    let rates = BirthDeathRates::mm_infinity(lambda)?;
    let exact = transient_law(&rates, x, t, n)?;
    let keep = (-t).exp();
    let binom: Vec<f64> = (0..=x)
        .map(|k| {
            if keep == 1.0 {
                return if k == x { 1.0 } else { 0.0 };
            }
            let (k, xf) = (k as f64, x as f64);
            (ln_gamma(xf + 1.0) - ln_gamma(k + 1.0) - ln_gamma(xf - k + 1.0)
                + k * keep.ln()
                + (xf - k) * (-(-t).exp_m1()).ln())
            .exp()
        })
        .collect();
    let binom = DiscreteMeasure::new(binom, 0.0)?;
    let mean = lambda * (1.0 - keep);
    let reference = if mean > 0.0 { binom.convolve(&poisson_measure(mean, n)?, n)? } else { binom };
    Ok(tv_distance(&exact, &reference)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_invariants() {
        let rates = BirthDeathRates::mm_infinity(2.0).unwrap();
        let p = simulate_path(Dynamics::Rates { rates: &rates, cap: 100 }, 3, 5.0, 7, 0).unwrap();
        assert!(p.jump_times.windows(2).all(|w| w[0] < w[1]));
        assert!(p.states.windows(2).all(|w| w[0].abs_diff(w[1]) == 1));
        assert!(p.jump_times.iter().all(|t| *t <= 5.0));
        let again = simulate_path(Dynamics::Rates { rates: &rates, cap: 100 }, 3, 5.0, 7, 0).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn integral_of_constant() {
        let rates = BirthDeathRates::mm_infinity(1.0).unwrap();
        let p = simulate_path(Dynamics::Rates { rates: &rates, cap: 100 }, 0, 2.5, 1, 3).unwrap();
        assert!((p.integral(|_| 2.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn explosion_guard() {
        let rates = BirthDeathRates::mm_infinity(50.0).unwrap();
        let r = simulate_path(Dynamics::Rates { rates: &rates, cap: 5 }, 0, 10.0, 1, 0);
        assert!(matches!(r, Err(Error::Explosion { .. })));
    }

    #[test]
    fn mehler_weights_degenerate_time() {
        let w = mehler_weights_gwi(0.5, 2.0, 0.0).unwrap();
        assert_eq!(w.w[0], 0.0);
        assert_eq!(w.w[1], 1.0);
        let w = mehler_weights_gwi(0.5, 2.0, 1.0).unwrap();
        assert!((w.total() - 1.0).abs() < 1e-12);
        assert!(w.w.iter().all(|v| *v >= -1e-15));
    }

    #[test]
    fn coupling_sticks() {
        let rates = BirthDeathRates::mm_infinity(1.0).unwrap();
        for i in 0..50 {
            let c = coupling_simulate(&rates, 2, 3.0, 200, 11, i).unwrap();
            if let Some(t) = c.absorption_time {
                for s in [t, (t + 3.0) / 2.0, 3.0] {
                    assert_eq!(c.lower.state_at(s), c.upper.state_at(s));
                }
            }
            for s in [0.0, 0.5, 1.0, 2.0] {
                let d = c.upper.state_at(s) - c.lower.state_at(s);
                assert!(d <= 1);
            }
        }
    }
}
