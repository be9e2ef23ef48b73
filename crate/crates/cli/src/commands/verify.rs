//! Intertwining and contraction checks over the model, time and test-function grid.

use bdstein::intertwine::{verify_contraction, verify_intertwining, ContractionVariant, Relation, TestFunction};
use bdstein::measures::WeightSequence;
use rayon::prelude::*;
use serde::Serialize;

use super::{hypothesis_note, label, Context, Outcome};
use crate::config::{weight_sequence, ModelSpec};
use crate::error::CliError;
use crate::output::{csv_table, num, Envelope, Status};

/// Slack accepted on a contraction bound.
const CONTRACTION_TOL: f64 = 1e-10;

#[derive(Clone, Copy)]
enum Check {
    Relation(Relation),
    Contraction(ContractionVariant),
}

impl Check {
    fn name(self) -> String {
        match self {
            Check::Relation(r) => label(&r).trim_matches('"').to_string(),
            Check::Contraction(c) => format!("contraction_{}", label(&c).trim_matches('"')),
        }
    }
}

#[derive(Serialize)]
struct Row {
    model: String,
    check: String,
    test_function: String,
    t: f64,
    /// Intertwining residual, or the excess of the contracted side over its bound.
    residual: f64,
    threshold: f64,
    argmax: Option<usize>,
    boundary_flag: bool,
    status: Status,
    note: String,
}

struct Cell<'a> {
    model: &'a ModelSpec,
    t: f64,
    f: &'a TestFunction,
    check: Check,
}

fn evaluate(cell: &Cell<'_>, ctx: &Context, u: &WeightSequence, v: &WeightSequence) -> Result<Row, CliError> {
    let len = u.len().min(v.len());
    let f = cell.f.values(len);
    let trunc = ctx.truncation();
    let rates = &cell.model.rates;
    let mut row = Row {
        model: cell.model.name.clone(),
        check: cell.check.name(),
        test_function: label(cell.f),
        t: cell.t,
        residual: f64::NAN,
        threshold: f64::NAN,
        argmax: None,
        boundary_flag: false,
        status: Status::Pass,
        note: String::new(),
    };
    let result = match cell.check {
        Check::Relation(r) => verify_intertwining(r, rates, u, v, cell.t, &f, trunc).map(|rep| {
            row.residual = rep.residual;
            row.threshold = ctx.cfg.tolerance * rep.lhs_sup.max(1.0);
            row.argmax = Some(rep.argmax_index);
            row.boundary_flag = rep.boundary_flag;
            row.note = rep.hypotheses;
        }),
        Check::Contraction(c) => verify_contraction(rates, u, v, c, &f, cell.t, trunc).map(|rep| {
            row.residual = (rep.lhs - rep.rhs).max(0.0);
            row.threshold = CONTRACTION_TOL;
            row.note = format!("sigma = {}", rep.sigma);
        }),
    };
    match result {
        Ok(()) => row.status = Status::from_holds(row.residual <= row.threshold),
        Err(e) => {
            row.note = hypothesis_note(e)?;
            row.status = Status::HypothesisFailed;
        }
    }
    Ok(row)
}

pub fn run(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.cfg;
    // The wide window keeps the reflecting boundary far from the reported states.
    let len = 2 * cfg.truncation + 3;
    let u = weight_sequence(&cfg.weights.u, len)?;
    let v = weight_sequence(&cfg.weights.v, len)?;
    let checks: Vec<Check> = cfg
        .verify
        .relations
        .iter()
        .map(|r| Check::Relation(*r))
        .chain(cfg.verify.contractions.iter().map(|c| Check::Contraction(*c)))
        .collect();
    let mut cells = Vec::new();
    for model in &cfg.models {
        for &t in &cfg.times {
            for f in &cfg.verify.test_functions {
                for &check in &checks {
                    cells.push(Cell { model, t, f, check });
                }
            }
        }
    }
    let rows: Vec<Row> = cells.par_iter().map(|c| evaluate(c, ctx, &u, &v)).collect::<Result<_, _>>()?;
    let status = Status::worst(rows.iter().map(|r| r.status));
    let envelope = Envelope { command: "verify", seed: ctx.seed, status, rows: &rows };
    let path = ctx.sink.write("verify", &envelope, || {
        csv_table(
            &[
                "model",
                "check",
                "test_function",
                "t",
                "residual",
                "threshold",
                "argmax",
                "boundary_flag",
                "status",
                "note",
            ],
            rows.iter().map(|r| {
                vec![
                    r.model.clone(),
                    r.check.clone(),
                    r.test_function.clone(),
                    num(r.t),
                    num(r.residual),
                    num(r.threshold),
                    r.argmax.map(|a| a.to_string()).unwrap_or_default(),
                    r.boundary_flag.to_string(),
                    r.status.as_str().to_string(),
                    r.note.clone(),
                ]
            }),
        )
    })?;
    Ok(Outcome { status, rows: rows.len(), path })
}
