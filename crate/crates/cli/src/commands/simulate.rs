//! Seeded Monte Carlo runs, checked against the matrix semigroup where a reference exists.

use bdstein::bdp::{build_generator, semigroup_apply};
use bdstein::intertwine::derive_forward;
use bdstein::montecarlo::{
    coupling_estimate, feynman_kac_mc, paths_csv, simulate_paths, Dynamics, McEstimate, PathSample,
};
use serde::Serialize;

use super::{Context, Outcome};
use crate::config::{weight_sequence, SimulationKind};
use crate::error::CliError;
use crate::output::{csv_table, num, Envelope, Status};

/// Paths may wander this many truncations away before the run counts as explosive.
const PATH_CAP_FACTOR: usize = 10;

#[derive(Serialize)]
struct Comparison {
    quantity: &'static str,
    #[serde(flatten)]
    estimate: McEstimate,
    reference: f64,
    z_score: f64,
    status: Status,
}

impl Comparison {
    fn new(quantity: &'static str, estimate: McEstimate, reference: f64, z_max: f64) -> Self {
        let gap = (estimate.estimate - reference).abs();
        let z_score = if estimate.std_error > 0.0 { gap / estimate.std_error } else { 0.0 };
        let status = Status::from_holds(estimate.within(reference, z_max));
        Comparison { quantity, estimate, reference, z_score, status }
    }
}

fn compare(ctx: &Context) -> Result<Comparison, CliError> {
    let sim = &ctx.cfg.simulate;
    let n = ctx.cfg.truncation;
    let f = sim.f.values(n + 2);
    match sim.kind {
        SimulationKind::FeynmanKac => {
            let u = weight_sequence(&ctx.cfg.weights.u, n + 2)?;
            let fw = derive_forward(&sim.rates, &u, ctx.truncation())?;
            let df: Vec<f64> = (0..=n).map(|x| (f[x + 1] - f[x]) / u.value(x)).collect();
            let reference = semigroup_apply(&fw.operator()?, sim.horizon, &df)?[sim.x0];
            let est =
                feynman_kac_mc(&fw.rates_u, fw.potential_u.values(), &df, sim.x0, sim.horizon, sim.n_paths, ctx.seed)?;
            Ok(Comparison::new("weighted_gradient", est, reference, sim.z_max))
        }
        SimulationKind::Coupling => {
            let pf = semigroup_apply(&build_generator(&sim.rates, n)?, sim.horizon, &f[..=n])?;
            let est = coupling_estimate(&sim.rates, sim.x0, sim.horizon, &f[..=n], sim.n_paths, ctx.seed)?;
            Ok(Comparison::new("gradient", est.gradient, pf[sim.x0 + 1] - pf[sim.x0], sim.z_max))
        }
        SimulationKind::Paths => unreachable!("paths are written without a comparison"),
    }
}

fn write_paths(ctx: &Context, paths: &[PathSample]) -> Result<Outcome, CliError> {
    let envelope = Envelope { command: "simulate", seed: ctx.seed, status: Status::Pass, rows: paths };
    let path = ctx.sink.write("simulate", &envelope, || paths_csv(paths))?;
    Ok(Outcome { status: Status::Pass, rows: paths.len(), path })
}

pub fn run(ctx: &Context) -> Result<Outcome, CliError> {
    let sim = &ctx.cfg.simulate;
    if sim.x0 + 1 >= ctx.cfg.truncation {
        return Err(CliError::Config(format!("x0 = {} must lie below the truncation", sim.x0)));
    }
    if sim.kind == SimulationKind::Paths {
        let cap = PATH_CAP_FACTOR * ctx.cfg.truncation;
        let paths =
            simulate_paths(Dynamics::Rates { rates: &sim.rates, cap }, sim.x0, sim.horizon, sim.n_paths, ctx.seed)?;
        return write_paths(ctx, &paths);
    }
    let row = compare(ctx)?;
    let status = row.status;
    let rows = [row];
    let envelope = Envelope { command: "simulate", seed: ctx.seed, status, rows: &rows };
    let path = ctx.sink.write("simulate", &envelope, || {
        csv_table(
            &["seed", "quantity", "estimate", "std_error", "n_paths", "reference", "z_score", "status"],
            rows.iter().map(|r| {
                vec![
                    ctx.seed.to_string(),
                    r.quantity.into(),
                    num(r.estimate.estimate),
                    num(r.estimate.std_error),
                    r.estimate.n_paths.to_string(),
                    num(r.reference),
                    num(r.z_score),
                    r.status.as_str().into(),
                ]
            }),
        )
    })?;
    Ok(Outcome { status, rows: rows.len(), path })
}
