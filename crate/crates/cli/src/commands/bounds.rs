//! Closed-form factor bounds, instantaneous-probability lemmas and integral bounds.

use bdstein::bdp::build_generator;
use bdstein::stein::{
    bound_integral, closed_form_bounds, pointwise_prob_lemma_check, BoundIntegral, LemmaReport, NamedBound,
};
use rayon::prelude::*;
use serde::Serialize;

use super::{label, Context, Outcome};
use crate::error::CliError;
use crate::output::{csv_table, num, Envelope, Status};

#[derive(Serialize)]
struct ClosedFormRow {
    model: String,
    bounds: Vec<NamedBound>,
}

#[derive(Serialize)]
struct LemmaRow {
    lemma: String,
    report: LemmaReport,
    status: Status,
}

#[derive(Serialize)]
struct IntegralRow {
    name: String,
    result: BoundIntegral,
}

#[derive(Serialize)]
struct Rows {
    closed_forms: Vec<ClosedFormRow>,
    lemmas: Vec<LemmaRow>,
    integrals: Vec<IntegralRow>,
}

pub fn run(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.cfg.bounds;
    let trunc = ctx.truncation();
    let closed_forms = cfg
        .closed_forms
        .iter()
        .map(|m| Ok(ClosedFormRow { model: label(m), bounds: closed_form_bounds(*m)? }))
        .collect::<Result<Vec<_>, CliError>>()?;
    let lemmas = cfg
        .lemmas
        .par_iter()
        .map(|l| {
            let report = pointwise_prob_lemma_check(*l, &ctx.cfg.times, trunc)?;
            Ok(LemmaRow { lemma: label(l), status: Status::from_holds(report.holds), report })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let integrals = cfg
        .integrals
        .par_iter()
        .map(|spec| {
            let op = build_generator(&spec.rates, trunc.n)?;
            let affine = (spec.affine[0], spec.affine[1]);
            let result = bound_integral(spec.sigma, &op, spec.kind, spec.index_set, affine, trunc, spec.tolerance)?;
            Ok(IntegralRow { name: spec.name.clone(), result })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let rows = Rows { closed_forms, lemmas, integrals };
    let status = Status::worst(rows.lemmas.iter().map(|l| l.status));
    let count = rows.closed_forms.len() + rows.lemmas.len() + rows.integrals.len();
    let envelope = Envelope { command: "bounds", seed: ctx.seed, status, rows: &rows };
    let path = ctx.sink.write("bounds", &envelope, || {
        let mut table = Vec::new();
        for c in &rows.closed_forms {
            for b in &c.bounds {
                table.push(vec![
                    "closed_form".into(),
                    c.model.clone(),
                    b.name.clone(),
                    String::new(),
                    num(b.value),
                    String::new(),
                    if b.applicable { "applicable" } else { "inapplicable" }.into(),
                ]);
            }
        }
        for l in &rows.lemmas {
            for p in &l.report.points {
                let status = Status::from_holds(p.ratio <= 1.0);
                table.push(vec![
                    "lemma".into(),
                    l.lemma.clone(),
                    p.bound_name.clone(),
                    num(p.t),
                    num(p.lhs),
                    num(p.bound),
                    status.as_str().into(),
                ]);
            }
        }
        for i in &rows.integrals {
            table.push(vec![
                "integral".into(),
                i.name.clone(),
                "value".into(),
                num(i.result.t_max),
                num(i.result.value),
                String::new(),
                Status::Pass.as_str().into(),
            ]);
        }
        // For integrals `t` holds the truncation horizon of the quadrature.
        csv_table(&["section", "name", "item", "t", "value", "bound", "status"], table)
    })?;
    Ok(Outcome { status, rows: count, path })
}
