//! Exact Stein factors with the closed-form bounds that apply to them.

use bdstein::bdp::{BirthDeathRates, RateModel};
use bdstein::intertwine::check_hypotheses;
use bdstein::measures::{WeightFamily, WeightSequence};
use bdstein::stein::{
    closed_form_bounds, exact_factor, ClosedFormModel, FactorClass, FactorOrder, NamedBound, SteinFactorReport,
    SteinTarget,
};
use rayon::prelude::*;
use serde::Serialize;

use super::{hypothesis_note, Context, Outcome};
use crate::config::{weight_sequence, ModelSpec};
use crate::error::CliError;
use crate::output::{csv_line, Envelope, Status};

/// Relative tolerance when matching a configured weight to the one a bound assumes.
const WEIGHT_TOL: f64 = 1e-12;

#[derive(Serialize)]
struct Row {
    model: String,
    class: FactorClass,
    order: FactorOrder,
    report: Option<SteinFactorReport>,
    status: Status,
    note: String,
}

/// Closed-form model of a named rate family, if one exists.
fn closed_form_model(rates: &BirthDeathRates) -> Option<ClosedFormModel> {
    match rates.model() {
        RateModel::MmInfinity { lambda } => Some(ClosedFormModel::Poisson { lambda: *lambda }),
        RateModel::Gwi { r, p } => Some(ClosedFormModel::NegativeBinomial { r: *r, p: *p }),
        RateModel::Mm1 { alpha, beta } if alpha < beta => {
            Some(ClosedFormModel::Geometric { alpha: *alpha, beta: *beta })
        }
        _ => None,
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= WEIGHT_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Whether the Lipschitz bounds of `model` were derived for the weight family `u`:
/// `u = 1` for Poisson and negative binomial, `u(x) = (beta/alpha)^{x/2}` for the geometric law.
fn lipschitz_weight_matches(model: ClosedFormModel, u: &WeightFamily) -> bool {
    match (model, u) {
        (
            ClosedFormModel::Poisson { .. } | ClosedFormModel::NegativeBinomial { .. },
            WeightFamily::Constant { value },
        ) => close(*value, 1.0),
        (ClosedFormModel::Geometric { alpha, beta }, WeightFamily::Geometric { q }) => close(*q, (beta / alpha).sqrt()),
        _ => false,
    }
}

/// Bound-name prefix covering the given factor. Indicator first factors equal the
/// bounded ones and indicator second factors are dominated by them; the shifted
/// Lipschitz norm coincides with the plain one when `u` is constant.
fn bound_prefix(class: FactorClass, order: FactorOrder, u: &WeightFamily) -> Option<&'static str> {
    let constant = matches!(u, WeightFamily::Constant { .. });
    match (class, order) {
        (FactorClass::Bounded | FactorClass::Indicator, FactorOrder::First) => Some("bounded_first"),
        (FactorClass::Bounded | FactorClass::Indicator, FactorOrder::Second) => Some("bounded_second"),
        (FactorClass::Lipschitz | FactorClass::LipschitzShifted, FactorOrder::First) => Some("lipschitz_first"),
        (FactorClass::Lipschitz, FactorOrder::Second) => Some("lipschitz_second"),
        (FactorClass::LipschitzShifted, FactorOrder::Second) if constant => Some("lipschitz_second"),
        (FactorClass::LipschitzShifted, FactorOrder::Second) => None,
    }
}

fn bounds_for(
    rates: &BirthDeathRates,
    class: FactorClass,
    order: FactorOrder,
    u: &WeightFamily,
) -> Result<Vec<NamedBound>, CliError> {
    let Some(model) = closed_form_model(rates) else {
        return Ok(Vec::new());
    };
    let Some(prefix) = bound_prefix(class, order, u) else {
        return Ok(Vec::new());
    };
    let lipschitz = matches!(class, FactorClass::Lipschitz | FactorClass::LipschitzShifted);
    if lipschitz && !lipschitz_weight_matches(model, u) {
        return Ok(Vec::new());
    }
    Ok(closed_form_bounds(model)?.into_iter().filter(|b| b.name.starts_with(prefix)).collect())
}

fn evaluate(ctx: &Context, model: &ModelSpec, class: FactorClass, order: FactorOrder) -> Result<Row, CliError> {
    let mut row =
        Row { model: model.name.clone(), class, order, report: None, status: Status::Pass, note: String::new() };
    let computed = (|| {
        let target = SteinTarget::new(&model.rates, ctx.truncation())?;
        let u = weight_sequence(&ctx.cfg.weights.u, target.window_len())?;
        let hyp = check_hypotheses(&model.rates, &WeightSequence::ones(target.window_len()), ctx.truncation())?;
        let exact = exact_factor(&target, class, order, &u)?;
        Ok::<_, bdstein::Error>((exact, hyp))
    })();
    match computed {
        Ok((exact, hyp)) => {
            let bounds = bounds_for(&model.rates, class, order, &ctx.cfg.weights.u)?;
            let report = SteinFactorReport::new(class, order, exact, bounds, hyp.h1_ok, hyp.h2_ok);
            row.status = Status::from_holds(report.consistent());
            row.report = Some(report);
        }
        Err(e) => {
            row.note = hypothesis_note(e)?;
            row.status = Status::HypothesisFailed;
        }
    }
    Ok(row)
}

pub fn run(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.cfg;
    let mut cells = Vec::new();
    for model in &cfg.models {
        for &class in &cfg.factors.classes {
            for &order in &cfg.factors.orders {
                cells.push((model, class, order));
            }
        }
    }
    let rows: Vec<Row> = cells.par_iter().map(|&(m, c, o)| evaluate(ctx, m, c, o)).collect::<Result<_, _>>()?;
    let status = Status::worst(rows.iter().map(|r| r.status));
    let envelope = Envelope { command: "factors", seed: ctx.seed, status, rows: &rows };
    let path = ctx.sink.write("factors", &envelope, || {
        let mut s = format!("{},status,note\n", SteinFactorReport::csv_header());
        for r in &rows {
            let tail = csv_line(&[r.status.as_str().to_string(), r.note.clone()]);
            match &r.report {
                Some(rep) => {
                    for line in rep.csv_rows(&r.model) {
                        s.push_str(&format!("{line},{tail}\n"));
                    }
                }
                None => {
                    let mut fields = vec![r.model.clone(), format!("{:?}", r.class), format!("{:?}", r.order)];
                    fields.extend(std::iter::repeat_n(String::new(), 7));
                    s.push_str(&format!("{},{tail}\n", csv_line(&fields)));
                }
            }
        }
        s
    })?;
    Ok(Outcome { status, rows: rows.len(), path })
}
