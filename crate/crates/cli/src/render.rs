//! Report output: a human-readable table, CSV rows and JSON.

use std::fmt::Write as _;

use exit_spectrum_core::BoundsReport;

use crate::config::Format;
use crate::report::RunReport;
use crate::CliError;

pub fn render(report: &RunReport, format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => render_json(report),
        Format::Csv => render_csv(report),
        Format::Text => Ok(render_text(report)),
    }
}

pub fn render_json(report: &RunReport) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| CliError::Output(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.12e}"))
}

/// One row per order of the raw-measure bounds.
pub fn render_csv(report: &RunReport) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Output(e.to_string());
    w.write_record(["k", "T_k", "upper_odd", "upper_ratio", "lower_moment"]).map_err(err)?;
    for o in &report.bounds.orders {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        w.write_record([o.k.to_string(), opt(o.t_k), opt(o.upper_odd), opt(o.upper_ratio), opt(o.lower_moment)])
            .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Output(e.to_string()))
}

fn bounds_table(out: &mut String, title: &str, b: &BoundsReport) {
    let _ = writeln!(out, "{title} (mu(Omega) = {:.12e}, mu(phi0)^2 = {:.12e})", b.mu_total, b.mass0_sq);
    let _ = writeln!(
        out,
        "{:>4}  {:>19}  {:>19}  {:>19}  {:>19}",
        "k", "T_k", "upper_odd", "upper_ratio", "lower_moment"
    );
    for o in &b.orders {
        let _ = writeln!(
            out,
            "{:>4}  {:>19}  {:>19}  {:>19}  {:>19}",
            o.k,
            cell(o.t_k),
            cell(o.upper_odd),
            cell(o.upper_ratio),
            cell(o.lower_moment)
        );
    }
    if let Some(est) = &b.estimator {
        let how = if est.accelerated { "extrapolated" } else { "last ratio" };
        let _ = writeln!(out, "moment-ratio estimate of lambda0: {:.12e} ({how})", est.estimate);
    }
    for e in &b.exp {
        let _ = writeln!(
            out,
            "beta = {:e}: {:.12e} <= E[exp(beta tau)] = {} <= {:.12e}",
            e.beta,
            e.lower,
            cell(e.exact),
            e.upper
        );
    }
}

/// Human-readable report; a pure function of the report, so a re-parsed
/// JSON report renders identically.
pub fn render_text(report: &RunReport) -> String {
    let mut out = String::new();
    let g = &report.generator;
    let s = &report.spectrum;
    let _ = writeln!(
        out,
        "model: {}, {} states, {} in the domain, bandwidth {}{}",
        g.model,
        g.states,
        g.domain_states,
        g.bandwidth,
        if g.banded_solver { " (banded solver)" } else { "" }
    );
    let _ = writeln!(out, "detailed balance residual: {:e}", g.detailed_balance_residual);
    let _ = writeln!(out, "lambda0 = {:.15e} ({}), mu(phi0)^2 = {:.12e}", s.lambda0, s.method, s.mass0_sq);
    if s.lowest.len() > 1 {
        let list: Vec<String> = s.lowest.iter().map(|v| format!("{v:.10e}")).collect();
        let _ = writeln!(out, "lowest eigenvalues: {}", list.join(", "));
    }
    out.push('\n');
    bounds_table(&mut out, "bounds, raw measure", &report.bounds);
    if let Some(b) = &report.bounds_normalized {
        out.push('\n');
        bounds_table(&mut out, "bounds, normalized measure", b);
    }
    if let Some(r) = &report.reference {
        let upper = r.upper.map_or_else(String::new, |u| format!(" <= {u:.12e}"));
        let verdict = if r.holds { "holds" } else { "does not hold" };
        let _ = writeln!(out, "\nreference ({}): {:.12e} <= lambda0{upper} {verdict}", r.description, r.lower);
    }
    if let Some(mc) = &report.mc {
        let e = &mc.estimate;
        let _ = writeln!(
            out,
            "\nmonte carlo: {} paths, seed {}, scheme {:?}, dt {:e}",
            e.n_paths, e.seed, e.scheme, e.dt
        );
        for m in &e.moments {
            let _ = writeln!(out, "  T_{} ~ {:.8e} +- {:.2e}", m.k, m.mean, m.std_err);
        }
        for z in mc.z_scores.iter().flatten() {
            let flag = if z.flagged { " FLAGGED" } else { "" };
            let _ = writeln!(out, "  k = {}: z = {:+.3}{flag}", z.k, z.z);
        }
    }
    let passed = report.checks.len() - report.failed.len();
    let _ = writeln!(out, "\nchecks: {passed} of {} passed", report.checks.len());
    for name in &report.failed {
        let c = report.checks.iter().find(|c| &c.name == name);
        match c {
            Some(c) => {
                let _ = writeln!(out, "  FAIL {name}: {:.15e} > {:.15e}", c.lhs, c.rhs);
            }
            None => {
                let _ = writeln!(out, "  FAIL {name}");
            }
        }
    }
    let times: Vec<String> = report.timings.iter().map(|t| format!("{} {:.3}s", t.stage, t.seconds)).collect();
    let _ = writeln!(out, "timings: {}", times.join(", "));
    out
}
