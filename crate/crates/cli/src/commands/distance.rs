//! Total variation, Wasserstein and Kolmogorov distances between two configured laws.

use bdstein::measures::{kolmogorov_distance, make_model_measure, tv_distance, wasserstein_du, DistanceEstimate};
use serde::Serialize;

use super::{label, Context, Outcome};
use crate::config::weight_sequence;
use crate::error::CliError;
use crate::output::{csv_table, num, Envelope, Status};

#[derive(Serialize)]
struct Row {
    metric: &'static str,
    mu: String,
    nu: String,
    #[serde(flatten)]
    estimate: DistanceEstimate,
}

pub fn run(ctx: &Context) -> Result<Outcome, CliError> {
    let spec = ctx
        .cfg
        .distance
        .as_ref()
        .ok_or_else(|| CliError::Config("the distance command needs a [distance] section".into()))?;
    let n = ctx.cfg.truncation;
    let mu = make_model_measure(&spec.mu, n)?;
    let nu = make_model_measure(&spec.nu, n)?;
    let u = weight_sequence(&ctx.cfg.weights.u, n + 2)?;
    let (mu_label, nu_label) = (label(&spec.mu), label(&spec.nu));
    let row = |metric, estimate| Row { metric, mu: mu_label.clone(), nu: nu_label.clone(), estimate };
    let rows = vec![
        row("total_variation", tv_distance(&mu, &nu)?),
        row("wasserstein", wasserstein_du(&mu, &nu, &u)?),
        row("kolmogorov", kolmogorov_distance(&mu, &nu)?),
    ];
    let envelope = Envelope { command: "distance", seed: ctx.seed, status: Status::Pass, rows: &rows };
    let path = ctx.sink.write("distance", &envelope, || {
        csv_table(
            &["metric", "mu", "nu", "value", "error_bound"],
            rows.iter().map(|r| {
                vec![r.metric.into(), r.mu.clone(), r.nu.clone(), num(r.estimate.value), num(r.estimate.error_bound)]
            }),
        )
    })?;
    Ok(Outcome { status: Status::Pass, rows: rows.len(), path })
}
