//! Birth-death rates, discrete gradients, truncated generators and
//! Schrodinger operators, and semigroup / Feynman-Kac evaluation by
//! uniformization.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{negative_binomial_measure, DiscreteMeasure, PhiShape, WeightSequence};

/// Residual Poisson mass allowed when truncating the uniformization series.
pub const UNIFORMIZATION_RESIDUAL: f64 = 1e-13;
/// Largest `Lambda * t` accepted by a single uniformization call.
pub const MAX_LAMBDA_T: f64 = 1e6;

/// A truncation level `N` and the number of states next to `N` excluded from suprema.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub n: usize,
    pub margin: usize,
}

impl Truncation {
    pub fn new(n: usize) -> Self {
        Truncation { n, margin: crate::DEFAULT_MARGIN }
    }

    pub fn with_margin(n: usize, margin: usize) -> Self {
        Truncation { n, margin }
    }

    /// Last state of the interior window `{0..N-margin}`.
    pub fn interior_end(&self) -> Result<usize> {
        self.n
            .checked_sub(self.margin)
            .ok_or_else(|| Error::InvalidParameter(format!("margin {} exceeds truncation N = {}", self.margin, self.n)))
    }

    /// True when `x` is at the end of the interior window or beyond.
    pub fn near_boundary(&self, x: usize) -> bool {
        x + self.margin >= self.n
    }
}

impl From<usize> for Truncation {
    fn from(n: usize) -> Self {
        Truncation::new(n)
    }
}

/// Named rate models and explicit tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum RateModel {
    /// `alpha = lambda`, `beta(x) = x`.
    MmInfinity { lambda: f64 },
    /// Galton-Watson with immigration: `alpha(x) = p (r + x)`, `beta(x) = x`.
    Gwi { r: f64, p: f64 },
    /// `alpha = a`, `beta = b` on the positive integers.
    Mm1 { alpha: f64, beta: f64 },
    /// `alpha(x) = x + 2`, `beta(x) = x^2`.
    SizeBiased,
    /// `alpha = lambda`, `beta = phi` (with `beta(0) = 0`).
    Phi { phi: PhiShape, lambda: f64 },
    /// Finite state space `{0..len-1}`; the last birth rate is never used.
    Table { alpha: Vec<f64>, beta: Vec<f64> },
}

/// Validated birth-death rates: `alpha > 0`, `beta(0) = 0`, `beta > 0` on the positive integers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RateModel", into = "RateModel")]
pub struct BirthDeathRates {
    model: RateModel,
}

impl TryFrom<RateModel> for BirthDeathRates {
    type Error = Error;
    fn try_from(model: RateModel) -> Result<Self> {
        BirthDeathRates::new(model)
    }
}

impl From<BirthDeathRates> for RateModel {
    fn from(r: BirthDeathRates) -> Self {
        r.model
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} must be positive and finite")))
    }
}

impl BirthDeathRates {
    pub fn new(model: RateModel) -> Result<Self> {
        match &model {
            RateModel::MmInfinity { lambda } => positive("lambda", *lambda)?,
            RateModel::Gwi { r, p } => {
                positive("r", *r)?;
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(Error::InvalidParameter(format!("p = {p} must lie in (0,1)")));
                }
            }
            RateModel::Mm1 { alpha, beta } => {
                positive("alpha", *alpha)?;
                positive("beta", *beta)?;
            }
            RateModel::SizeBiased => {}
            RateModel::Phi { phi, lambda } => {
                positive("lambda", *lambda)?;
                if let PhiShape::Table { values } = phi {
                    if values.len() < 2 {
                        return Err(Error::InvalidParameter("phi table needs at least 2 entries".into()));
                    }
                    for (x, v) in values.iter().enumerate().skip(1) {
                        positive(&format!("phi({x})"), *v)?;
                    }
                }
            }
            RateModel::Table { alpha, beta } => {
                if alpha.len() != beta.len() || alpha.len() < 2 {
                    return Err(Error::InvalidParameter("rate tables must have equal length of at least 2".into()));
                }
                if beta[0] != 0.0 {
                    return Err(Error::InvalidParameter(format!("beta(0) = {} must be 0", beta[0])));
                }
                for (x, a) in alpha.iter().enumerate() {
                    positive(&format!("alpha({x})"), *a)?;
                }
                for (x, b) in beta.iter().enumerate().skip(1) {
                    if !(b.is_finite() && *b > 0.0) {
                        return Err(Error::Precondition(format!(
                            "beta({x}) = {b}: death rates must be positive on the positive integers"
                        )));
                    }
                }
            }
        }
        Ok(BirthDeathRates { model })
    }

    pub fn mm_infinity(lambda: f64) -> Result<Self> {
        Self::new(RateModel::MmInfinity { lambda })
    }

    pub fn gwi(r: f64, p: f64) -> Result<Self> {
        Self::new(RateModel::Gwi { r, p })
    }

    pub fn mm1(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(RateModel::Mm1 { alpha, beta })
    }

    pub fn size_biased() -> Self {
        BirthDeathRates { model: RateModel::SizeBiased }
    }

    pub fn table(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        Self::new(RateModel::Table { alpha, beta })
    }

    pub fn model(&self) -> &RateModel {
        &self.model
    }

    /// Birth rate `alpha(x)`.
    pub fn alpha(&self, x: usize) -> f64 {
        match &self.model {
            RateModel::MmInfinity { lambda } => *lambda,
            RateModel::Gwi { r, p } => p * (r + x as f64),
            RateModel::Mm1 { alpha, .. } => *alpha,
            RateModel::SizeBiased => x as f64 + 2.0,
            RateModel::Phi { lambda, .. } => *lambda,
            RateModel::Table { alpha, .. } => alpha[x],
        }
    }

    /// Death rate `beta(x)`, zero at the origin.
    pub fn beta(&self, x: usize) -> f64 {
        if x == 0 {
            return 0.0;
        }
        match &self.model {
            RateModel::MmInfinity { .. } | RateModel::Gwi { .. } => x as f64,
            RateModel::Mm1 { beta, .. } => *beta,
            RateModel::SizeBiased => (x * x) as f64,
            RateModel::Phi { phi, .. } => phi.value(x),
            RateModel::Table { beta, .. } => beta[x],
        }
    }

    /// Last state of a finite state space, `None` for models on all of N.
    pub fn horizon(&self) -> Option<usize> {
        match &self.model {
            RateModel::Table { alpha, .. } => Some(alpha.len() - 1),
            RateModel::Phi { phi, .. } => phi.horizon(),
            _ => None,
        }
    }

    /// Rates tabulated on `{0..len-1}`.
    pub fn tabulate(&self, len: usize) -> Result<RateTable> {
        if let Some(h) = self.horizon() {
            if len > h + 1 {
                return Err(Error::Precondition(format!("rates are tabulated up to state {h}, {} required", len - 1)));
            }
        }
        Ok(RateTable {
            alpha: (0..len).map(|x| self.alpha(x)).collect(),
            beta: (0..len).map(|x| self.beta(x)).collect(),
        })
    }

    /// The first-order potential `V_1(x) = alpha(x) - alpha(x+1) + beta(x+1) - beta(x)`.
    pub fn v1(&self, x: usize) -> f64 {
        self.alpha(x) - self.alpha(x + 1) + self.beta(x + 1) - self.beta(x)
    }
}

/// Tabulated non-negative birth and death rates of a derived process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl RateTable {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// A killing rate `V`, possibly negative, with its minimum over the window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    values: Vec<f64>,
    lower_bound: f64,
}

impl Potential {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(x) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("potential at {x} is not finite")));
        }
        let lower_bound = values.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Potential { values, lower_bound })
    }

    pub fn constant(c: f64, len: usize) -> Self {
        Potential { values: vec![c; len], lower_bound: c }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, x: usize) -> f64 {
        self.values[x]
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    /// Minimum over `{0..=last}` and the index where it is attained.
    pub fn min_on(&self, last: usize) -> (f64, usize) {
        let last = last.min(self.values.len() - 1);
        let mut best = (f64::INFINITY, 0);
        for (x, v) in self.values[..=last].iter().enumerate() {
            if *v < best.0 {
                best = (*v, x);
            }
        }
        best
    }
}

/// Outcome of the ergodicity and non-explosion series tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityReport {
    pub ergodic: bool,
    pub nonexplosive: bool,
    pub ergodic_inconclusive: bool,
    pub nonexplosive_inconclusive: bool,
    /// Partial sums of `sum_x prod alpha(y-1)/beta(y)` (log10 scale).
    pub log10_ergodic_partial_sums: Vec<f64>,
    /// Partial sums of the non-explosion series (log10 scale).
    pub log10_nonexplosive_partial_sums: Vec<f64>,
}

/// Evaluates partial sums of the ergodicity series
/// `sum_x alpha(0)..alpha(x-1) / (beta(1)..beta(x))` and the non-explosion
/// series `sum_x sum_{k<=x} beta(x)..beta(k+1) / (alpha(x)..alpha(k))` in log space.
pub fn check_ergodic_nonexplosive(rates: &BirthDeathRates, terms: usize, tol: f64) -> Result<ErgodicityReport> {
    if terms < 10 {
        return Err(Error::InvalidParameter(format!("terms = {terms} must be at least 10")));
    }
    let terms = rates.horizon().map_or(terms, |h| terms.min(h));
    let mut log_pi = 0.0f64;
    let mut log_head = 0.0f64; // log sum_{k<=x} pi~(k)
    let mut log_erg = f64::NEG_INFINITY;
    let mut log_nonexp = f64::NEG_INFINITY;
    let mut erg_sums = Vec::with_capacity(terms);
    let mut nonexp_sums = Vec::with_capacity(terms);
    let mut last_erg_increment = 0.0f64;
    let mut small_tail_terms = 0usize;
    let window = (terms / 10).max(1);
    for x in 1..=terms {
        log_pi += rates.alpha(x - 1).ln() - rates.beta(x).ln();
        log_erg = log_add(log_erg, log_pi);
        log_head = log_add(log_head, log_pi);
        let log_term = log_head - rates.alpha(x).ln() - log_pi;
        log_nonexp = log_add(log_nonexp, log_term);
        erg_sums.push(log_erg / std::f64::consts::LN_10);
        nonexp_sums.push(log_nonexp / std::f64::consts::LN_10);
        last_erg_increment = (log_pi - log_erg).exp();
        if x + window > terms && log_term.exp() < tol {
            small_tail_terms += 1;
        }
    }
    let ergodic = last_erg_increment < tol;
    let diverged = log_nonexp > (1.0 / tol).ln();
    let terms_persist = small_tail_terms == 0;
    Ok(ErgodicityReport {
        ergodic,
        nonexplosive: diverged || terms_persist,
        ergodic_inconclusive: !ergodic,
        nonexplosive_inconclusive: !diverged && !terms_persist,
        log10_ergodic_partial_sums: erg_sums,
        log10_nonexplosive_partial_sums: nonexp_sums,
    })
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// A generator or Schrodinger operator `L - V` on `{0..N}`.
///
/// Stored as off-diagonal jump rates per row plus a potential; the dense
/// matrix is available through [`TruncatedOperator::to_dense`].
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedOperator {
    jumps: Vec<Vec<(usize, f64)>>,
    out_rate: Vec<f64>,
    potential: Vec<f64>,
    tail_error_rate: f64,
}

impl TruncatedOperator {
    /// Builds an operator from off-diagonal jump rates and an optional potential.
    pub fn from_jumps(
        jumps: Vec<Vec<(usize, f64)>>,
        potential: Option<Vec<f64>>,
        tail_error_rate: f64,
    ) -> Result<Self> {
        let n = jumps.len();
        if n == 0 {
            return Err(Error::InvalidParameter("operator has no states".into()));
        }
        let mut out_rate = Vec::with_capacity(n);
        for (x, row) in jumps.iter().enumerate() {
            let mut total = 0.0;
            for &(j, r) in row {
                if j >= n || j == x {
                    return Err(Error::InvalidParameter(format!("jump {x} -> {j} is not off-diagonal in range")));
                }
                if !(r.is_finite() && r >= 0.0) {
                    return Err(Error::InvalidParameter(format!("jump rate {x} -> {j} is {r}")));
                }
                total += r;
            }
            out_rate.push(total);
        }
        let potential = potential.unwrap_or_else(|| vec![0.0; n]);
        if potential.len() != n {
            return Err(Error::InvalidParameter("potential length differs from state count".into()));
        }
        Ok(TruncatedOperator { jumps, out_rate, potential, tail_error_rate })
    }

    /// Tridiagonal birth-death operator on `{0..N}` with `N = birth.len() - 1`,
    /// reflecting at `N` (the birth rate at `N` is dropped).
    pub fn birth_death(birth: &[f64], death: &[f64], potential: Option<&[f64]>) -> Result<Self> {
        let n = birth.len() - 1;
        if death.len() != birth.len() {
            return Err(Error::InvalidParameter("birth and death tables differ in length".into()));
        }
        let jumps = (0..=n)
            .map(|x| {
                let mut row = Vec::with_capacity(2);
                if x > 0 && death[x] > 0.0 {
                    row.push((x - 1, death[x]));
                }
                if x < n && birth[x] > 0.0 {
                    row.push((x + 1, birth[x]));
                }
                row
            })
            .collect();
        Self::from_jumps(jumps, potential.map(|p| p[..=n].to_vec()), birth[n])
    }

    pub fn n_states(&self) -> usize {
        self.jumps.len()
    }

    /// Largest state `N`.
    pub fn last_state(&self) -> usize {
        self.jumps.len() - 1
    }

    pub fn jumps(&self, x: usize) -> &[(usize, f64)] {
        &self.jumps[x]
    }

    pub fn out_rate(&self, x: usize) -> f64 {
        self.out_rate[x]
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// Outflow rate suppressed at the reflecting boundary.
    pub fn tail_error_rate(&self) -> f64 {
        self.tail_error_rate
    }

    pub fn is_conservative(&self) -> bool {
        self.potential.iter().all(|v| *v == 0.0)
    }

    /// Matrix entry `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return -self.out_rate[i] - self.potential[i];
        }
        self.jumps[i].iter().filter(|(k, _)| *k == j).map(|(_, r)| r).sum()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        -self.potential[i]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_states();
        let mut m = DMatrix::zeros(n, n);
        for x in 0..n {
            m[(x, x)] = -self.out_rate[x] - self.potential[x];
            for &(j, r) in &self.jumps[x] {
                m[(x, j)] += r;
            }
        }
        m
    }

    /// Plain-text dump of the dense matrix, one row per line.
    pub fn dump(&self) -> String {
        let m = self.to_dense();
        let mut s = String::new();
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.6e}", m[(i, j)])).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// `(op f)(x)` for every state.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n_states())
            .map(|x| {
                let mut acc = -(self.out_rate[x] + self.potential[x]) * f[x];
                for &(j, r) in &self.jumps[x] {
                    acc += r * f[j];
                }
                acc
            })
            .collect()
    }

    /// The same jumps with the potential replaced.
    pub fn with_potential(&self, potential: Vec<f64>) -> Result<Self> {
        Self::from_jumps(self.jumps.clone(), Some(potential), self.tail_error_rate)
    }

    fn uniformizer(&self) -> Uniformizer<'_> {
        let shift = self.potential.iter().copied().fold(f64::INFINITY, f64::min);
        let diag: Vec<f64> = (0..self.n_states()).map(|x| self.out_rate[x] + self.potential[x] - shift).collect();
        let lambda = diag.iter().copied().fold(0.0, f64::max);
        Uniformizer { op: self, diag, lambda, shift }
    }
}

/// Generator of a birth-death process on `{0..N}`, reflecting at `N`.
pub fn build_generator(rates: &BirthDeathRates, n: usize) -> Result<TruncatedOperator> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("truncation N = {n} must be at least 2")));
    }
    let t = rates.tabulate(n + 1)?;
    TruncatedOperator::birth_death(&t.alpha, &t.beta, None)
}

/// `L - V` on `{0..N}`.
pub fn build_schrodinger(rates: &BirthDeathRates, v: &Potential, n: usize) -> Result<TruncatedOperator> {
    if v.values().len() < n + 1 {
        return Err(Error::InvalidParameter(format!("potential has {} entries, {} required", v.values().len(), n + 1)));
    }
    let g = build_generator(rates, n)?;
    g.with_potential(v.values()[..=n].to_vec())
}

struct Uniformizer<'a> {
    op: &'a TruncatedOperator,
    diag: Vec<f64>,
    lambda: f64,
    shift: f64,
}

impl Uniformizer<'_> {
    /// `(I + Q/Lambda) f` with `Q` the shifted operator.
    fn step_right(&self, f: &[f64], out: &mut [f64]) {
        let l = self.lambda;
        for x in 0..f.len() {
            let mut acc = (1.0 - self.diag[x] / l) * f[x];
            for &(j, r) in &self.op.jumps[x] {
                acc += r / l * f[j];
            }
            out[x] = acc;
        }
    }

    /// `mu (I + Q/Lambda)` for a row vector `mu`.
    fn step_left(&self, mu: &[f64], out: &mut [f64]) {
        let l = self.lambda;
        for (x, o) in out.iter_mut().enumerate() {
            *o = (1.0 - self.diag[x] / l) * mu[x];
        }
        for (x, m) in mu.iter().enumerate() {
            if *m == 0.0 {
                continue;
            }
            for &(j, r) in &self.op.jumps[x] {
                out[j] += m * r / l;
            }
        }
    }

    fn run(&self, t: f64, v0: &[f64], left: bool) -> Result<Vec<f64>> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter(format!("time t = {t} must be finite and non-negative")));
        }
        if v0.len() != self.op.n_states() {
            return Err(Error::InvalidParameter(format!(
                "vector has {} entries, operator has {} states",
                v0.len(),
                self.op.n_states()
            )));
        }
        let damp = (-self.shift * t).exp();
        if t == 0.0 || self.lambda == 0.0 {
            return Ok(v0.iter().map(|v| v * damp).collect());
        }
        let m = self.lambda * t;
        if m > MAX_LAMBDA_T {
            return Err(Error::HorizonTooLong(m));
        }
        let (lo, weights) = poisson_window(m);
        let hi = lo + weights.len() - 1;
        let mut acc = vec![0.0; v0.len()];
        let mut cur = v0.to_vec();
        let mut next = vec![0.0; v0.len()];
        for k in 0..=hi {
            if k >= lo {
                let w = weights[k - lo];
                for (a, c) in acc.iter_mut().zip(&cur) {
                    *a += w * c;
                }
            }
            if k < hi {
                if left {
                    self.step_left(&cur, &mut next);
                } else {
                    self.step_right(&cur, &mut next);
                }
                std::mem::swap(&mut cur, &mut next);
            }
        }
        Ok(acc.into_iter().map(|v| v * damp).collect())
    }
}

/// Normalized Poisson(m) weights on a window `[lo, lo + len)` whose complement
/// has mass below the uniformization residual.
pub(crate) fn poisson_window(m: f64) -> (usize, Vec<f64>) {
    const REL_CUT: f64 = 1e-18;
    let mode = m.floor() as usize;
    let mut up = vec![1.0f64];
    let mut w = 1.0;
    let mut k = mode;
    loop {
        w *= m / (k as f64 + 1.0);
        k += 1;
        if w < REL_CUT && (k as f64) > m {
            break;
        }
        up.push(w);
    }
    let mut down = Vec::new();
    let mut w = 1.0;
    let mut k = mode;
    while k > 0 {
        w *= k as f64 / m;
        k -= 1;
        if w < REL_CUT {
            break;
        }
        down.push(w);
    }
    let lo = mode - down.len();
    let mut weights: Vec<f64> = down.into_iter().rev().collect();
    weights.extend(up);
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mut tail = 0.0;
    while weights.len() > 1 {
        let last = *weights.last().unwrap();
        if tail + last >= UNIFORMIZATION_RESIDUAL / 2.0 {
            break;
        }
        tail += last;
        weights.pop();
    }
    (lo, weights)
}

/// `exp(t op) f` by uniformization.
///
/// For a potential `V`, the operator is shifted by `c = min V` so the
/// uniformized matrix is substochastic, and the result multiplied by `exp(-c t)`.
pub fn semigroup_apply(op: &TruncatedOperator, t: f64, f: &[f64]) -> Result<Vec<f64>> {
    op.uniformizer().run(t, f, false)
}

/// `mu exp(t op)`: the law at time `t` of the (killed) process started from `mu`.
pub fn evolve_distribution(op: &TruncatedOperator, t: f64, mu: &[f64]) -> Result<Vec<f64>> {
    op.uniformizer().run(t, mu, true)
}

/// Rows `P_t(x, .)` for every state `x`, computed in parallel.
pub fn transition_matrix(op: &TruncatedOperator, t: f64) -> Result<Vec<Vec<f64>>> {
    let n = op.n_states();
    (0..n)
        .into_par_iter()
        .map(|x| {
            let mut e = vec![0.0; n];
            e[x] = 1.0;
            evolve_distribution(op, t, &e)
        })
        .collect()
}

/// Advances all rows of the transition matrix through an increasing sequence of times.
pub struct TransitionSweep<'a> {
    op: &'a TruncatedOperator,
    time: f64,
    rows: Vec<Vec<f64>>,
}

impl<'a> TransitionSweep<'a> {
    pub fn new(op: &'a TruncatedOperator) -> Self {
        let n = op.n_states();
        let rows = (0..n)
            .map(|x| {
                let mut e = vec![0.0; n];
                e[x] = 1.0;
                e
            })
            .collect();
        TransitionSweep { op, time: 0.0, rows }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Moves the checkpoint to time `t >= self.time()`.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        if t < self.time {
            return Err(Error::InvalidParameter(format!("sweep cannot move backwards from {} to {t}", self.time)));
        }
        let dt = t - self.time;
        if dt > 0.0 {
            let op = self.op;
            self.rows = self.rows.par_iter().map(|row| evolve_distribution(op, dt, row)).collect::<Result<Vec<_>>>()?;
        }
        self.time = t;
        Ok(())
    }

    /// `P_t(x, y)` at the current checkpoint.
    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.rows[x][y]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Function values on `{0..N}` with a validity mask for boundary entries.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionValues {
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl FunctionValues {
    /// All entries valid.
    pub fn new(values: Vec<f64>) -> Self {
        let valid = vec![true; values.len()];
        FunctionValues { values, valid }
    }

    pub fn from_fn(len: usize, f: impl Fn(usize) -> f64) -> Self {
        Self::new((0..len).map(f).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checked read; invalid entries are an error.
    pub fn get(&self, x: usize) -> Result<f64> {
        if x >= self.values.len() || !self.valid[x] {
            return Err(Error::InvalidBoundary(x));
        }
        Ok(self.values[x])
    }

    pub fn is_valid(&self, x: usize) -> bool {
        x < self.valid.len() && self.valid[x]
    }

    /// Number of leading valid entries.
    pub fn valid_prefix(&self) -> usize {
        self.valid.iter().position(|v| !v).unwrap_or(self.valid.len())
    }

    /// The leading valid entries.
    pub fn valid_values(&self) -> &[f64] {
        &self.values[..self.valid_prefix()]
    }

    /// Unchecked raw values (invalid entries hold NaN).
    pub fn raw(&self) -> &[f64] {
        &self.values
    }
}

/// Discrete gradients.
#[derive(Clone, Copy, Debug)]
pub enum GradientKind<'a> {
    /// `f(x+1) - f(x)`.
    Forward,
    /// `f(x-1) - f(x)`, with `-f(0)` at the origin.
    Backward,
    /// Forward difference divided by `u(x)`.
    WeightedForward(&'a WeightSequence),
    /// Backward difference divided by `u(x)`.
    WeightedBackward(&'a WeightSequence),
}

/// Applies a gradient; forward gradients mark the last entry invalid and
/// invalid inputs propagate to every output that reads them.
pub fn gradient_apply(kind: GradientKind<'_>, f: &FunctionValues) -> Result<FunctionValues> {
    let n = f.len();
    let mut values = vec![f64::NAN; n];
    let mut valid = vec![false; n];
    let weight = |x: usize| -> Result<f64> {
        match kind {
            GradientKind::WeightedForward(u) | GradientKind::WeightedBackward(u) => {
                if x >= u.len() {
                    Err(Error::InvalidParameter(format!("weight sequence too short for state {x}")))
                } else {
                    Ok(u.value(x))
                }
            }
            _ => Ok(1.0),
        }
    };
    for x in 0..n {
        let (ok, d) = match kind {
            GradientKind::Forward | GradientKind::WeightedForward(_) => {
                if x + 1 < n && f.valid[x] && f.valid[x + 1] {
                    (true, f.values[x + 1] - f.values[x])
                } else {
                    (false, f64::NAN)
                }
            }
            GradientKind::Backward | GradientKind::WeightedBackward(_) => {
                if x == 0 {
                    (f.valid[0], -f.values[0])
                } else if f.valid[x] && f.valid[x - 1] {
                    (true, f.values[x - 1] - f.values[x])
                } else {
                    (false, f64::NAN)
                }
            }
        };
        if ok {
            values[x] = d / weight(x)?;
            valid[x] = true;
        }
    }
    Ok(FunctionValues { values, valid })
}

/// `theta_t(p) = 1 - (1-p) / (1 - p exp(-(1-p) t))`.
pub fn kendall_theta(p: f64, t: f64) -> f64 {
    let q = 1.0 - p;
    1.0 - q / (1.0 - p * (-q * t).exp())
}

/// Law at time `t` of the GWI process `(p(r+x), x)` started at 0: `NB(r, theta_t(p))`.
pub fn kendall_law(r: f64, p: f64, t: f64, n: usize) -> Result<DiscreteMeasure> {
    if !(r > 0.0 && p > 0.0 && p < 1.0 && t >= 0.0) {
        return Err(Error::InvalidParameter(format!("kendall_law needs r>0, 0<p<1, t>=0 (got {r}, {p}, {t})")));
    }
    let theta = kendall_theta(p, t);
    if theta <= 0.0 {
        let mut w = vec![0.0; n + 1];
        w[0] = 1.0;
        return DiscreteMeasure::new(w, 0.0);
    }
    negative_binomial_measure(r, theta, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::poisson_measure;

    #[test]
    fn generator_entries_and_conservation() {
        let rates = BirthDeathRates::mm_infinity(2.0).unwrap();
        let g = build_generator(&rates, 5).unwrap();
        assert_eq!(g.entry(3, 4), 2.0);
        assert_eq!(g.entry(3, 2), 3.0);
        assert_eq!(g.entry(5, 5), -5.0);
        assert_eq!(g.tail_error_rate(), 2.0);
        let d = g.to_dense();
        for i in 0..6 {
            assert!(d.row(i).sum().abs() < 1e-12);
        }
        assert!(g.is_conservative());
    }

    #[test]
    fn generator_on_identity() {
        let lambda = 3.0;
        let rates = BirthDeathRates::mm_infinity(lambda).unwrap();
        let g = build_generator(&rates, 30).unwrap();
        let f: Vec<f64> = (0..=30).map(|x| x as f64).collect();
        let lf = g.apply(&f);
        for (x, v) in lf.iter().take(30).enumerate() {
            assert!((v - (lambda - x as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn schrodinger_row_sums() {
        let rates = BirthDeathRates::gwi(2.0, 0.4).unwrap();
        let v = Potential::new((0..=20).map(|x| (x as f64).sin()).collect()).unwrap();
        let s = build_schrodinger(&rates, &v, 20).unwrap();
        let d = s.to_dense();
        for i in 0..20 {
            assert!((d.row(i).sum() + v.value(i)).abs() < 1e-12);
        }
        assert!(!s.is_conservative());
        let c = build_schrodinger(&rates, &Potential::constant(0.7, 21), 20).unwrap();
        let g = build_generator(&rates, 20).unwrap().to_dense();
        let diff = c.to_dense() - (g - DMatrix::identity(21, 21) * 0.7);
        assert!(diff.abs().max() < 1e-14);
    }

    #[test]
    fn identity_at_time_zero_and_conservation() {
        let rates = BirthDeathRates::mm_infinity(1.5).unwrap();
        let g = build_generator(&rates, 40).unwrap();
        let f: Vec<f64> = (0..=40).map(|x| (x as f64).cos()).collect();
        assert_eq!(semigroup_apply(&g, 0.0, &f).unwrap(), f);
        let one = semigroup_apply(&g, 2.5, &vec![1.0; 41]).unwrap();
        assert!(one.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(semigroup_apply(&g, -1.0, &f).is_err());
    }

    #[test]
    fn mminfty_law_from_zero() {
        let lambda = 1.0;
        let rates = BirthDeathRates::mm_infinity(lambda).unwrap();
        let g = build_generator(&rates, 60).unwrap();
        let t = 0.8f64;
        let p = poisson_measure(lambda * (1.0 - (-t).exp()), 60).unwrap();
        for k in 0..10 {
            let mut f = vec![0.0; 61];
            f[k] = 1.0;
            let r = semigroup_apply(&g, t, &f).unwrap();
            assert!((r[0] - p.pmf(k)).abs() < 1e-10);
        }
    }

    #[test]
    fn horizon_cap() {
        let rates = BirthDeathRates::mm_infinity(1.0).unwrap();
        let g = build_generator(&rates, 100).unwrap();
        assert!(matches!(semigroup_apply(&g, 1e5, &vec![0.0; 101]), Err(Error::HorizonTooLong(_))));
    }

    #[test]
    fn poisson_window_mass() {
        for m in [0.01, 0.5, 3.0, 40.0, 1234.5, 2e5] {
            let (lo, w) = poisson_window(m);
            let total: f64 = w.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            let mode = m.floor() as usize;
            assert!(lo <= mode && mode < lo + w.len());
        }
    }

    #[test]
    fn gradients() {
        let f = FunctionValues::new(vec![1.0; 6]);
        let d = gradient_apply(GradientKind::Forward, &f).unwrap();
        assert_eq!(d.valid_values(), &[0.0; 5]);
        assert!(matches!(d.get(5), Err(Error::InvalidBoundary(5))));
        let b = gradient_apply(GradientKind::Backward, &f).unwrap();
        assert_eq!(b.get(0).unwrap(), -1.0);
        assert!((1..6).all(|x| b.get(x).unwrap() == 0.0));
        let u = WeightSequence::geometric(2.0, 8).unwrap();
        let g = FunctionValues::from_fn(8, |x| 2f64.powi(x as i32));
        let du = gradient_apply(GradientKind::WeightedForward(&u), &g).unwrap();
        assert!(du.valid_values().iter().all(|v| *v == 1.0));
        let dd = gradient_apply(GradientKind::Forward, &d).unwrap();
        assert_eq!(dd.valid_prefix(), 4);
    }

    #[test]
    fn ergodicity_classification() {
        let r = check_ergodic_nonexplosive(&BirthDeathRates::mm_infinity(1.0).unwrap(), 200, 1e-10).unwrap();
        assert!(r.ergodic && r.nonexplosive);
        let r = check_ergodic_nonexplosive(&BirthDeathRates::mm1(1.0, 4.0).unwrap(), 200, 1e-10).unwrap();
        assert!(r.ergodic && r.nonexplosive);
        let r = check_ergodic_nonexplosive(&BirthDeathRates::mm1(4.0, 1.0).unwrap(), 200, 1e-10).unwrap();
        assert!(!r.ergodic);
        assert!(check_ergodic_nonexplosive(&BirthDeathRates::mm1(1.0, 4.0).unwrap(), 5, 1e-10).is_err());
    }

    #[test]
    fn pure_birth_rejected() {
        let err = BirthDeathRates::table(vec![1.0; 5], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn kendall_degenerate_at_zero() {
        let m = kendall_law(2.0, 0.5, 0.0, 10).unwrap();
        assert_eq!(m.pmf(0), 1.0);
        assert!((kendall_theta(0.5, 200.0) - 0.5).abs() < 1e-15);
    }
}
