//! Text tables and CSV for estimation results.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::Result;
use crate::firststage::{FirstStageFit, FirstStageMethod};
use crate::io::format_f64;

use super::pipeline::{EstimationRun, MethodOutcome};

const LABEL_WIDTH: usize = 16;
const COLUMN_WIDTH: usize = 20;

fn fixed(v: f64) -> String {
    format!("{v:.3}")
}

fn row(out: &mut String, label: &str, cells: &[String]) {
    let _ = write!(out, "{label:<LABEL_WIDTH$}");
    for c in cells {
        let _ = write!(out, "{c:>COLUMN_WIDTH$}");
    }
    out.push('\n');
}

/// Coefficient names over all successful fits, in first-seen order.
fn term_names(outcomes: &[MethodOutcome]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for o in outcomes {
        if let Ok(fit) = &o.fit {
            for n in &fit.names {
                if !names.contains(n) {
                    names.push(n.clone());
                }
            }
        }
    }
    names
}

/// One column per method: coefficients with SEs in parentheses, then D and N.
pub fn second_stage_table(run: &EstimationRun) -> String {
    let outcomes = &run.outcomes;
    let mut out = String::new();
    let header: Vec<String> = (1..=outcomes.len()).map(|k| format!("({k})")).collect();
    row(&mut out, "", &header);
    row(&mut out, "Estimation", &outcomes.iter().map(|o| o.method.to_string()).collect::<Vec<_>>());
    row(
        &mut out,
        "First stage",
        &outcomes.iter().map(|o| o.method.first_stage_label().to_string()).collect::<Vec<_>>(),
    );
    let rule = "-".repeat(LABEL_WIDTH + COLUMN_WIDTH * outcomes.len());
    out.push_str(&rule);
    out.push('\n');
    for name in term_names(outcomes) {
        let mut coefs = Vec::new();
        let mut ses = Vec::new();
        for o in outcomes {
            match &o.fit {
                Ok(fit) => match (fit.coefficient(&name), fit.std_error(&name)) {
                    (Some(c), Some(s)) => {
                        coefs.push(fixed(c));
                        ses.push(format!("({})", fixed(s)));
                    }
                    _ => {
                        coefs.push(String::new());
                        ses.push(String::new());
                    }
                },
                Err(_) => {
                    coefs.push("failed".into());
                    ses.push(String::new());
                }
            }
        }
        row(&mut out, &name, &coefs);
        row(&mut out, "", &ses);
    }
    out.push_str(&rule);
    out.push('\n');
    let count = |f: fn(&crate::secondstage::SecondStageFit) -> usize| -> Vec<String> {
        outcomes
            .iter()
            .map(|o| o.fit.as_ref().map(|fit| f(fit).to_string()).unwrap_or_default())
            .collect()
    };
    row(&mut out, "D", &count(|f| f.d));
    row(&mut out, "N", &count(|f| f.n));

    let mut notes = Vec::new();
    for (k, o) in outcomes.iter().enumerate() {
        match &o.fit {
            Ok(fit) => {
                if let Some(h) = fit.bandwidth {
                    notes.push(format!("({}) bandwidth {}", k + 1, format_f64(h)));
                }
                for w in &fit.warnings {
                    notes.push(format!("({}) warning: {w}", k + 1));
                }
                if !o.converged {
                    notes.push(format!("({}) first stage did not converge", k + 1));
                }
            }
            Err(e) => notes.push(format!("({}) error: {e}", k + 1)),
        }
    }
    if !notes.is_empty() {
        out.push('\n');
        for n in notes {
            out.push_str(&n);
            out.push('\n');
        }
    }
    out
}

/// Long-format CSV of [`second_stage_table`]; failed methods get one row
/// carrying the error.
pub fn write_second_stage_csv<W: Write>(run: &EstimationRun, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "method",
        "first_stage",
        "term",
        "estimate",
        "std_error",
        "d",
        "n",
        "bandwidth",
        "converged",
        "error",
    ])?;
    for o in &run.outcomes {
        let method = o.method.to_string();
        let stage = o.method.first_stage_label();
        match &o.fit {
            Ok(fit) => {
                let se = fit.std_errors();
                let h = fit.bandwidth.map(format_f64).unwrap_or_default();
                for (k, name) in fit.names.iter().enumerate() {
                    wtr.write_record([
                        method.as_str(),
                        stage,
                        name,
                        &format_f64(fit.coefficients[k]),
                        &format_f64(se[k]),
                        &fit.d.to_string(),
                        &fit.n.to_string(),
                        &h,
                        if o.converged { "true" } else { "false" },
                        "",
                    ])?;
                }
            }
            Err(e) => wtr.write_record([method.as_str(), stage, "", "", "", "", "", "", "false", e])?,
        }
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn first_stage_columns(run: &EstimationRun) -> Vec<(&'static str, &FirstStageFit)> {
    let stages = &run.first_stages;
    let mut cols = Vec::new();
    if let Some(Ok(p)) = &stages.probit {
        cols.push(("Probit", p));
    }
    if let Some(Ok(k)) = &stages.ks {
        cols.push(("K/S", k));
    }
    if let Some(f) = &stages.no_selection {
        cols.push(("none", f));
    }
    cols
}

/// Normalized first-stage coefficients side by side, with D and N.
pub fn first_stage_table(run: &EstimationRun) -> Option<String> {
    let cols = first_stage_columns(run);
    let first = cols.first()?.1;
    let mut out = String::new();
    row(&mut out, "First stage", &cols.iter().map(|(l, _)| l.to_string()).collect::<Vec<_>>());
    out.push_str(&"-".repeat(LABEL_WIDTH + COLUMN_WIDTH * cols.len()));
    out.push('\n');
    if cols.iter().any(|(_, f)| f.intercept.is_some()) {
        let c: Vec<String> = cols.iter().map(|(_, f)| f.intercept.map(|i| fixed(i.0)).unwrap_or_default()).collect();
        let s: Vec<String> =
            cols.iter().map(|(_, f)| f.intercept.map(|i| format!("({})", fixed(i.1))).unwrap_or_default()).collect();
        row(&mut out, "intercept", &c);
        row(&mut out, "", &s);
    }
    for (k, name) in first.names.iter().enumerate() {
        let c: Vec<String> = cols.iter().map(|(_, f)| fixed(f.delta_hat[k])).collect();
        let s: Vec<String> = cols
            .iter()
            .map(|(_, f)| match f.std_errors[k] {
                Some(se) => format!("({})", fixed(se)),
                None if k == f.normalized => "(normalized)".into(),
                None => String::new(),
            })
            .collect();
        row(&mut out, name, &c);
        row(&mut out, "", &s);
    }
    let d = first.outcomes.iter().filter(|&&y| y).count();
    row(&mut out, "D", &vec![d.to_string(); cols.len()]);
    row(&mut out, "N", &vec![first.outcomes.len().to_string(); cols.len()]);
    for (label, f) in &cols {
        if let Some(h) = f.bandwidth {
            let _ = writeln!(out, "{label} bandwidth {}", format_f64(h));
        }
        if f.method == FirstStageMethod::KleinSpady {
            let _ = writeln!(
                out,
                "{label} winning start {} after {} iterations (converged: {})",
                f.report.start_index, f.report.iterations, f.report.converged
            );
        }
    }
    Some(out)
}

pub fn write_first_stage_csv<W: Write>(run: &EstimationRun, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["first_stage", "term", "estimate", "std_error", "normalized"])?;
    for (label, f) in first_stage_columns(run) {
        if let Some((c, s)) = f.intercept {
            wtr.write_record([label, "intercept", &format_f64(c), &format_f64(s), "false"])?;
        }
        for (k, name) in f.names.iter().enumerate() {
            let se = f.std_errors[k].map(format_f64).unwrap_or_default();
            let norm = if k == f.normalized { "true" } else { "false" };
            wtr.write_record([label, name, &format_f64(f.delta_hat[k]), &se, norm])?;
        }
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}
