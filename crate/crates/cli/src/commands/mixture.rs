//! Mixture bounds against the exact distances they control.

use bdstein::measures::{geometric_measure, tv_distance, wasserstein_du, PhiFamily, PhiShape, WeightSequence};
use bdstein::mixture::{geometric_mixture_bound, mixed_measure, mixture_bound, DistanceClass, MixtureRow};
use rayon::prelude::*;
use serde::Serialize;

use super::{hypothesis_note, label, Context, Outcome};
use crate::config::{weight_sequence, GeometricCase, MixtureCase};
use crate::error::CliError;
use crate::output::{csv_table, num, Envelope, Status};

/// Gauss-Laguerre nodes used first for gamma mixing.
const QUAD_NODES: usize = 64;
/// Absolute slack allowed between an exact distance and its bound.
const BOUND_TOL: f64 = 1e-12;

#[derive(Serialize)]
struct Row {
    case: String,
    #[serde(flatten)]
    row: MixtureRow,
    slack: f64,
    status: Status,
    note: String,
}

impl Row {
    fn new(case: &str, row: MixtureRow) -> Self {
        let status = Status::from_holds(row.exact_distance <= row.bound + BOUND_TOL);
        Row { case: case.into(), slack: row.slack(), row, status, note: String::new() }
    }

    fn hypothesis(case: &str, target: String, mixing: String, class: DistanceClass, note: String) -> Self {
        let row =
            MixtureRow { target, mixing, class, bound_name: String::new(), bound: f64::NAN, exact_distance: f64::NAN };
        Row { case: case.into(), row, slack: f64::NAN, status: Status::HypothesisFailed, note }
    }
}

fn family_case(ctx: &Context, case: &MixtureCase, class: DistanceClass) -> Result<Vec<Row>, CliError> {
    let n = ctx.cfg.truncation;
    let lambda = case.mixing.mean();
    let target = format!("phi={} lambda={lambda}", label(&case.phi));
    let mixing = label(&case.mixing);
    let u = weight_sequence(&ctx.cfg.weights.u, n + 3)?;
    let v = weight_sequence(&ctx.cfg.weights.v, n + 3)?;
    let bound = match mixture_bound(&case.phi, &case.mixing, class, &u, &v, ctx.truncation()) {
        Ok(b) => b,
        Err(e) => return Ok(vec![Row::hypothesis(&case.name, target, mixing, class, hypothesis_note(e)?)]),
    };
    let w = mixed_measure(&case.phi, &case.mixing, n, QUAD_NODES)?;
    let reference = PhiFamily::new(case.phi.clone(), lambda)?.measure(n)?;
    let exact = match class {
        DistanceClass::TotalVariation => tv_distance(&w, &reference)?.value,
        DistanceClass::Wasserstein => wasserstein_du(&w, &reference, &u)?.value,
    };
    let make = |name: &str, value: f64| MixtureRow {
        target: target.clone(),
        mixing: mixing.clone(),
        class,
        bound_name: name.into(),
        bound: value,
        exact_distance: exact,
    };
    Ok(vec![
        Row::new(&case.name, make("unbiased", bound.bound)),
        Row::new(&case.name, make("biased", bound.biased_bound)),
    ])
}

/// `W_{d_u}` between a mixed geometric law and `G(rho)` with `u(k) = rho^{-k/2}`.
fn geometric_case(ctx: &Context, case: &GeometricCase) -> Result<Row, CliError> {
    let n = ctx.cfg.truncation;
    let target = format!("geometric rho={}", case.rho);
    let mixing = label(&case.mixing);
    let class = DistanceClass::Wasserstein;
    let bound = match geometric_mixture_bound(case.rho, &case.mixing) {
        Ok(b) => b,
        Err(e) => return Ok(Row::hypothesis(&case.name, target, mixing, class, hypothesis_note(e)?)),
    };
    // With phi = 1 the family `I_phi(rho)` is the geometric law `G(rho)`.
    let w = mixed_measure(&PhiShape::Unit, &case.mixing, n, QUAD_NODES)?;
    let g = geometric_measure(case.rho, n)?;
    let u = WeightSequence::geometric(1.0 / case.rho.sqrt(), n + 3)?;
    let exact = wasserstein_du(&w, &g, &u)?.value;
    Ok(Row::new(
        &case.name,
        MixtureRow { target, mixing, class, bound_name: "geometric".into(), bound, exact_distance: exact },
    ))
}

pub fn run(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.cfg.mixture;
    let cells: Vec<(&MixtureCase, DistanceClass)> =
        cfg.cases.iter().flat_map(|c| c.classes.iter().map(move |k| (c, *k))).collect();
    let family: Vec<Vec<Row>> = cells.par_iter().map(|(c, k)| family_case(ctx, c, *k)).collect::<Result<_, _>>()?;
    let geometric: Vec<Row> = cfg.geometric.par_iter().map(|c| geometric_case(ctx, c)).collect::<Result<_, _>>()?;
    let rows: Vec<Row> = family.into_iter().flatten().chain(geometric).collect();
    let status = Status::worst(rows.iter().map(|r| r.status));
    let envelope = Envelope { command: "mixture", seed: ctx.seed, status, rows: &rows };
    let path = ctx.sink.write("mixture", &envelope, || {
        csv_table(
            &["case", "target", "mixing", "class", "bound_name", "bound", "exact_distance", "slack", "status", "note"],
            rows.iter().map(|r| {
                vec![
                    r.case.clone(),
                    r.row.target.clone(),
                    r.row.mixing.clone(),
                    format!("{:?}", r.row.class),
                    r.row.bound_name.clone(),
                    num(r.row.bound),
                    num(r.row.exact_distance),
                    num(r.slack),
                    r.status.as_str().into(),
                    r.note.clone(),
                ]
            }),
        )
    })?;
    Ok(Outcome { status, rows: rows.len(), path })
}
