use bdstein::bdp::{
    build_generator, build_schrodinger, evolve_distribution, semigroup_apply, BirthDeathRates, Potential,
};
use bdstein::montecarlo::{
    coupling_estimate, coupling_simulate, feynman_kac_mc, mehler_check_gwi, mehler_check_gwi_with,
    mehler_check_mminfty, mehler_weights_gwi, path_rng, paths_csv, simulate_paths, Dynamics, IncrementLaw,
};
use bdstein::Error;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const SEED: u64 = 20_240_601;

#[test]
fn feynman_kac_matches_matrix_semigroup() {
    let rates = BirthDeathRates::mm_infinity(2.0).unwrap();
    let n = 60;
    let v: Vec<f64> = (0..=n).map(|x| 0.1 * (x as f64).min(8.0)).collect();
    let f: Vec<f64> = (0..=n).map(|x| if x <= 3 { 1.0 } else { 0.0 }).collect();
    let op = build_schrodinger(&rates, &Potential::new(v.clone()).unwrap(), n).unwrap();
    let (x0, t) = (4, 0.8);
    let reference = semigroup_apply(&op, t, &f).unwrap()[x0];
    let est = feynman_kac_mc(&rates, &v, &f, x0, t, 40_000, SEED).unwrap();
    assert!(est.within(reference, 3.0), "{} +- {} vs {reference}", est.estimate, est.std_error);
    assert_eq!(est.n_paths, 40_000);
}

#[test]
fn constant_potential_discounts_exactly() {
    let rates = BirthDeathRates::mm_infinity(1.0).unwrap();
    let v = vec![0.7; 80];
    let f = vec![1.0; 80];
    let est = feynman_kac_mc(&rates, &v, &f, 2, 1.5, 200, SEED).unwrap();
    assert!((est.estimate - (-0.7f64 * 1.5).exp()).abs() < 1e-12);
    assert!(est.std_error < 1e-12);
}

#[test]
fn marginals_pass_chi_square() {
    let rates = BirthDeathRates::mm1(1.0, 1.5).unwrap();
    let (x0, t, n_paths) = (2usize, 1.2, 20_000);
    let paths = simulate_paths(Dynamics::Rates { rates: &rates, cap: 400 }, x0, t, n_paths, SEED).unwrap();
    let op = build_generator(&rates, 120).unwrap();
    let mut mu = vec![0.0; 121];
    mu[x0] = 1.0;
    let law = evolve_distribution(&op, t, &mu).unwrap();
    // Bins with expected count >= 5, the rest pooled.
    let mut counts = vec![0usize; 121];
    for p in &paths {
        counts[p.state_at(t).min(120)] += 1;
    }
    let mut stat = 0.0;
    let mut bins = 0;
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for x in 0..=120 {
        let expected = law[x] * n_paths as f64;
        if expected >= 5.0 {
            stat += (counts[x] as f64 - expected).powi(2) / expected;
            bins += 1;
        } else {
            pooled_obs += counts[x] as f64;
            pooled_exp += expected;
        }
    }
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        bins += 1;
    }
    let p_value = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
    assert!(p_value > 1e-3, "chi-square {stat} on {} dof, p = {p_value}", bins - 1);
}

#[test]
fn coupled_paths_stay_ordered() {
    let rates = BirthDeathRates::mm1(1.0, 2.0).unwrap();
    for i in 0..200 {
        let c = coupling_simulate(&rates, 3, 2.0, 500, SEED, i).unwrap();
        let s = c.s_path();
        for k in 0..=40 {
            let t = 0.05 * k as f64;
            let gap = c.upper.state_at(t) as i64 - c.lower.state_at(t) as i64;
            assert_eq!(gap, s.state_at(t) as i64, "path {i} t={t}");
        }
    }
}

#[test]
fn mminfty_coupling_survival_is_exponential() {
    // For M/M/inf the merge rate V_1 is 1, so P(S_t = 1) = e^{-t}.
    let rates = BirthDeathRates::mm_infinity(3.0).unwrap();
    let t = 0.7;
    let f: Vec<f64> = (0..=80).map(|x| (x as f64).sqrt()).collect();
    let est = coupling_estimate(&rates, 2, t, &f, 40_000, SEED).unwrap();
    assert!(est.survival.within((-t).exp(), 3.0), "{:?}", est.survival);
    let pf = semigroup_apply(&build_generator(&rates, 80).unwrap(), t, &f).unwrap();
    assert!(est.gradient.within(pf[3] - pf[2], 3.0), "{:?} vs {}", est.gradient, pf[3] - pf[2]);
}

#[test]
fn coupling_marginals_match_independent_runs() {
    let rates = BirthDeathRates::mm_infinity(2.0).unwrap();
    let (x, t, n) = (4usize, 1.0, 20_000u64);
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for i in 0..n {
        let c = coupling_simulate(&rates, x, t, 200, SEED, i).unwrap();
        lower.push(c.lower.final_state() as f64);
        upper.push(c.upper.final_state() as f64);
    }
    let op = build_generator(&rates, 80).unwrap();
    let id: Vec<f64> = (0..=80).map(|k| k as f64).collect();
    let means = semigroup_apply(&op, t, &id).unwrap();
    for (sample, want) in [(&lower, means[x]), (&upper, means[x + 1])] {
        let m = sample.iter().sum::<f64>() / n as f64;
        let var = sample.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((m - want).abs() <= 4.0 * (var / n as f64).sqrt(), "{m} vs {want}");
    }
}

#[test]
fn coupling_refuses_non_monotone_rates() {
    // GWI birth rates increase, so the gap could widen to 2.
    let rates = BirthDeathRates::gwi(2.0, 0.4).unwrap();
    let r = coupling_simulate(&rates, 3, 1.0, 500, SEED, 0);
    assert!(matches!(r, Err(Error::Monotonicity(3))), "{r:?}");
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let rates = BirthDeathRates::gwi(1.5, 0.3).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let paths = simulate_paths(Dynamics::Rates { rates: &rates, cap: 400 }, 2, 3.0, 300, SEED).unwrap();
            let v = vec![0.2; 400];
            let f: Vec<f64> = (0..400).map(|x| x as f64).collect();
            let fk = feynman_kac_mc(&rates, &v, &f, 2, 1.0, 2_000, SEED).unwrap();
            (paths_csv(&paths), fk.estimate.to_bits())
        })
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(3));
}

#[test]
fn streams_are_independent_per_path() {
    let a: u64 = path_rng(SEED, 0).random();
    let b: u64 = path_rng(SEED, 1).random();
    let c: u64 = path_rng(SEED, 0).random();
    assert_ne!(a, b);
    assert_eq!(a, c);
}

#[test]
fn paths_csv_layout() {
    let rates = BirthDeathRates::mm_infinity(1.0).unwrap();
    let paths = simulate_paths(Dynamics::Rates { rates: &rates, cap: 100 }, 1, 1.0, 3, SEED).unwrap();
    let csv = paths_csv(&paths);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("path_id,time,state"));
    let rows: usize = paths.iter().map(|p| p.states.len()).sum();
    assert_eq!(lines.count(), rows);
}

#[test]
fn operator_dynamics_follow_the_jump_table() {
    let rates = BirthDeathRates::mm1(1.0, 2.0).unwrap();
    let op = build_generator(&rates, 50).unwrap();
    let paths = simulate_paths(Dynamics::Operator(&op), 0, 2.0, 200, SEED).unwrap();
    for p in &paths {
        for w in p.states.windows(2) {
            assert!(op.entry(w[0], w[1]) > 0.0);
        }
    }
}

#[test]
fn invalid_requests() {
    let rates = BirthDeathRates::mm_infinity(1.0).unwrap();
    assert!(feynman_kac_mc(&rates, &[0.0; 10], &[1.0; 10], 0, 1.0, 0, SEED).is_err());
    assert!(coupling_estimate(&rates, 0, -1.0, &[1.0; 10], 10, SEED).is_err());
    assert!(mehler_weights_gwi(1.5, 1.0, 1.0).is_err());
    assert!(mehler_check_mminfty(1.0, 2, -0.5, 40).is_err());
}

#[test]
fn mehler_identities() {
    for (x, t) in [(0usize, 0.5), (3, 1.0), (6, 2.5)] {
        let tv = mehler_check_mminfty(2.0, x, t, 120).unwrap();
        assert!(tv < 1e-10, "mminfty x={x} t={t}: {tv}");
    }
    for (p, s, x, t) in [(0.4, 1.0, 2usize, 0.5), (0.3, 2.0, 4, 1.5), (0.6, 0.5, 3, 1.0)] {
        let tv = mehler_check_gwi(p, s, x, t, 300).unwrap();
        assert!(tv < 1e-10, "gwi ({p},{s}) x={x} t={t}: {tv}");
        let w = mehler_weights_gwi(p, s, t).unwrap();
        assert!((w.total() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn poisson_increment_breaks_the_gwi_identity() {
    let tv = mehler_check_gwi_with(0.4, 1.0, 3, 1.0, 300, IncrementLaw::Poisson).unwrap();
    assert!(tv > 1e-3, "{tv}");
}
