mod common;

use bdstein::bdp::{semigroup_apply, BirthDeathRates};
use bdstein::intertwine::{
    derive_backward, derive_forward, derive_second_plain, derive_second_star, mm1_sigma_search, verify_contraction,
    verify_intertwining, verify_iterated, ContractionVariant, IteratedModel, Relation, TestFunction,
};
use bdstein::measures::{WeightFamily, WeightSequence};
use proptest::prelude::*;

const N: usize = 200;

fn ones(len: usize) -> WeightSequence {
    WeightSequence::ones(len)
}

/// Test-function values on a window twice as wide as the reported one.
fn wide(f: TestFunction) -> Vec<f64> {
    f.values(2 * N + 3)
}

#[test]
fn mminfty_first_forward_capped_identity() {
    let rates = BirthDeathRates::mm_infinity(2.0).unwrap();
    let f = TestFunction::CappedIdentity { cap: 20.0 }.values(N + 3);
    let r = verify_intertwining(Relation::FirstForward, &rates, &ones(N + 3), &ones(N + 3), 1.0, &f, N).unwrap();
    assert!(r.residual < 1e-8, "{}", r.residual);
    assert!(!r.boundary_flag);
}

#[test]
fn time_zero_residual_vanishes() {
    let models = [
        BirthDeathRates::mm_infinity(1.0).unwrap(),
        BirthDeathRates::gwi(2.0, 0.5).unwrap(),
        BirthDeathRates::mm1(1.0, 4.0).unwrap(),
    ];
    let f = TestFunction::RandomBounded { seed: 5, window: 40 }.values(N + 3);
    for rates in &models {
        for rel in [Relation::FirstForward, Relation::FirstBackward, Relation::SecondStar] {
            let r = verify_intertwining(rel, rates, &ones(N + 3), &ones(N + 3), 0.0, &f, N).unwrap();
            assert_eq!(r.residual, 0.0);
        }
    }
}

#[test]
fn gwi_second_plain_square() {
    let rates = BirthDeathRates::gwi(2.0, 0.4).unwrap();
    let f = wide(TestFunction::Polynomial { coeffs: vec![0.0, 0.0, 1.0] });
    let u = ones(2 * N + 3);
    let r = verify_intertwining(Relation::SecondPlain, &rates, &u, &u, 0.5, &f, N).unwrap();
    assert!(r.residual < 1e-8 * r.lhs_sup.max(1.0), "{} (sup {})", r.residual, r.lhs_sup);
}

#[test]
fn mm1_second_plain_is_refused() {
    let rates = BirthDeathRates::mm1(1.0, 4.0).unwrap();
    let f = TestFunction::CappedSquare { cap: 10.0 }.values(N + 3);
    let err = verify_intertwining(Relation::SecondPlain, &rates, &ones(N + 3), &ones(N + 3), 1.0, &f, N).unwrap_err();
    assert!(err.is_hypothesis());
}

#[test]
fn iterated_relations() {
    let cube = TestFunction::Polynomial { coeffs: vec![0.0, 0.0, 0.0, 1.0] };
    let zero = verify_iterated(IteratedModel::MmInfinity { lambda: 1.0 }, 0, 0.7, &cube.values(N + 1), N).unwrap();
    assert!(zero.residual < 1e-9 * zero.lhs_sup);
    let r = verify_iterated(IteratedModel::MmInfinity { lambda: 1.0 }, 3, 0.7, &cube.values(2 * N + 4), N).unwrap();
    assert!(r.residual < 1e-7, "{} at {}", r.residual, r.argmax_index);
    let sq = TestFunction::Polynomial { coeffs: vec![1.0, -2.0, 3.0] };
    let r = verify_iterated(IteratedModel::Gwi { r: 2.0, p: 0.5 }, 2, 0.7, &sq.values(2 * N + 3), N).unwrap();
    assert!(r.residual < 1e-7, "{} at {}", r.residual, r.argmax_index);
}

#[test]
fn polynomials_stay_polynomials() {
    let (r, p, t) = (2.0, 0.5, 0.9);
    let rates = BirthDeathRates::gwi(r, p).unwrap();
    let n = 2 * N;
    let q: Vec<f64> = (0..=n).map(|x| 1.0 - 2.0 * x as f64 + 3.0 * (x * x) as f64).collect();
    let pq = semigroup_apply(&bdstein::bdp::build_generator(&rates, n).unwrap(), t, &q).unwrap();
    // d^2 P_t Q = e^{-2(1-p)t} P_{2,t} d^2 Q = 6 e^{-2(1-p)t}.
    let expect = 6.0 * (-2.0 * (1.0 - p) * t).exp();
    for x in 0..50 {
        let d2 = pq[x + 2] - 2.0 * pq[x + 1] + pq[x];
        assert!((d2 - expect).abs() < 1e-7 * pq[x + 2].abs().max(1.0), "x = {x}: {d2} vs {expect}");
    }
}

#[test]
fn size_biased_plain_potential() {
    let rates = BirthDeathRates::size_biased();
    let n = 60;
    let u = WeightSequence::from_family(&WeightFamily::InverseQuadratic, n + 3).unwrap();
    let s = derive_second_plain(&rates, &u, &ones(n + 3), n).unwrap();
    for x in 0..=n - 10 {
        assert!((s.potential_uv.value(x) - (2.0 * x as f64 + 4.0)).abs() < 1e-9 * (x as f64 + 1.0));
    }
}

#[test]
fn forward_twice_matches_plain() {
    for rates in [BirthDeathRates::mm_infinity(1.5).unwrap(), BirthDeathRates::gwi(1.5, 0.3).unwrap()] {
        let n = 60;
        let once = derive_forward(&rates, &ones(n + 4), n + 1).unwrap();
        let twice = derive_forward(&once.rates_u, &ones(n + 3), n).unwrap();
        let plain = derive_second_plain(&rates, &ones(n + 3), &ones(n + 3), n).unwrap();
        for x in 0..=n {
            assert!((twice.rates_u.alpha(x) - plain.rates_uv.alpha(x)).abs() < 1e-12);
            assert!((twice.rates_u.beta(x) - plain.rates_uv.beta(x)).abs() < 1e-12);
            let total = once.potential_u.value(x) + twice.potential_u.value(x);
            assert!((total - plain.potential_uv.value(x)).abs() < 1e-12);
        }
    }
}

#[test]
fn star_system_with_decreasing_potential() {
    // alpha decreasing and convex, beta linear: V_1 strictly decreasing.
    let len = 40;
    let alpha: Vec<f64> = (0..len).map(|x| 1.0 + 8.0 / (x as f64 + 1.0)).collect();
    let beta: Vec<f64> = (0..len).map(|x| x as f64).collect();
    let rates = BirthDeathRates::table(alpha, beta).unwrap();
    let n = 30;
    let s = derive_second_star(&rates, &ones(n + 2), &ones(n + 2), n).unwrap();
    assert!(s.nonlocal_rate[2..n].iter().all(|r| *r > 0.0));
    let g = s.generator().unwrap();
    for x in 0..n {
        assert!(g.row_sum(x).abs() < 1e-12);
    }
}

#[test]
fn mm1_star_decay_rate() {
    let search = mm1_sigma_search(1.0, 4.0, &[0.5, 1.0, 1.25, 2.0], &[1.0, 1.6, 2.0, 4.0]).unwrap();
    assert!((search.best_sigma - 1.0).abs() < 1e-12);
    assert!(search.argmax.iter().any(|(r, q)| (r * q - 2.0).abs() < 1e-12));
    let (r, q) = search.argmax[0];
    let n = 120;
    let u = WeightSequence::geometric(r, n + 3).unwrap();
    let v = WeightSequence::geometric(q, n + 3).unwrap();
    let rates = BirthDeathRates::mm1(1.0, 4.0).unwrap();
    let f = TestFunction::RandomBounded { seed: 11, window: 20 }.values(n + 3);
    let times: Vec<f64> = (2..=12).map(|k| k as f64 * 0.5).collect();
    let logs: Vec<f64> = times
        .iter()
        .map(|t| {
            let rep = verify_contraction(&rates, &u, &v, ContractionVariant::Star, &f, *t, n).unwrap();
            assert!(rep.holds, "t = {t}: {rep:?}");
            rep.lhs.ln()
        })
        .collect();
    let (mt, ml) = (times.iter().sum::<f64>() / 11.0, logs.iter().sum::<f64>() / 11.0);
    let cov: f64 = times.iter().zip(&logs).map(|(t, l)| (t - mt) * (l - ml)).sum();
    let var: f64 = times.iter().map(|t| (t - mt).powi(2)).sum();
    let slope = cov / var;
    assert!(slope <= -1.0 + 1e-3, "slope {slope}");
}

#[test]
fn near_critical_sigma() {
    let eps = 0.21;
    let grid: Vec<f64> = (100..=130).map(|k| k as f64 / 100.0).collect();
    let s = mm1_sigma_search(1.0, 1.0 + eps, &grid, &grid).unwrap();
    let expect = ((1.0f64 + eps).sqrt() - 1.0).powi(2);
    assert!((s.best_sigma - expect).abs() < 1e-6, "{} vs {expect}", s.best_sigma);
}

#[test]
fn contraction_at_time_zero_is_equality() {
    let rates = BirthDeathRates::mm_infinity(1.0).unwrap();
    let f = TestFunction::CappedSquare { cap: 30.0 }.values(N + 3);
    let r = verify_contraction(&rates, &ones(N + 3), &ones(N + 3), ContractionVariant::Plain, &f, 0.0, N).unwrap();
    assert_eq!(r.lhs, r.rhs);
}

#[test]
fn mminfty_square_contracts_at_rate_two() {
    let rates = BirthDeathRates::mm_infinity(3.0).unwrap();
    let f = wide(TestFunction::Polynomial { coeffs: vec![0.0, 0.0, 1.0] });
    let u = ones(2 * N + 3);
    for t in [0.2, 1.0, 2.5] {
        let r = verify_contraction(&rates, &u, &u, ContractionVariant::Plain, &f, t, N).unwrap();
        assert!(r.lhs <= (-2.0 * t).exp() * 2.0 + 1e-10);
        assert!((r.sigma - 2.0).abs() < 1e-12);
    }
}

#[test]
fn plain_and_star_processes_are_shifts() {
    for rates in [BirthDeathRates::mm_infinity(2.0).unwrap(), BirthDeathRates::gwi(2.0, 0.3).unwrap()] {
        let n = 120;
        let plain = derive_second_plain(&rates, &ones(n + 4), &ones(n + 4), n).unwrap().operator().unwrap();
        let star = derive_second_star(&rates, &ones(n + 4), &ones(n + 4), n + 1).unwrap().operator().unwrap();
        let f = TestFunction::RandomBounded { seed: 2, window: 30 }.values(n + 1);
        let shifted: Vec<f64> = (0..=n + 1).map(|y| if y == 0 { 0.0 } else { f[y - 1] }).collect();
        let a = semigroup_apply(&plain, 0.8, &f).unwrap();
        let b = semigroup_apply(&star, 0.8, &shifted).unwrap();
        for x in 0..=n - 20 {
            assert!((a[x] - b[x + 1]).abs() < 1e-9, "x = {x}: {} vs {}", a[x], b[x + 1]);
        }
    }
}

proptest! {
    #[test]
    fn backward_shift_identity(rates in common::arb_rate_table(54, false),
                               u in prop::collection::vec(0.5f64..2.0, 54)) {
        let u = WeightSequence::from_values(u).unwrap();
        let s = derive_backward(&rates, &u, 50).unwrap();
        prop_assert!(s.shift_identity_error < 1e-12);
        prop_assert_eq!(s.rates.beta[1], 0.0);
    }

    #[test]
    fn second_order_sign_propagates(t in 0.05f64..2.0, steps in prop::collection::vec(0.0f64..0.3, 60)) {
        // Convex f: d* d f >= 0 away from the origin term.
        let mut slope = 0.0;
        let mut f = vec![0.0];
        for s in &steps {
            slope += s;
            f.push(f.last().unwrap() + slope);
        }
        let rates = BirthDeathRates::gwi(1.0, 0.4).unwrap();
        let n = 40;
        let pf = semigroup_apply(&bdstein::bdp::build_generator(&rates, n + 20).unwrap(), t, &f).unwrap();
        for x in 1..n - 10 {
            prop_assert!(pf[x + 1] - 2.0 * pf[x] + pf[x - 1] >= -1e-10);
        }
    }
}
