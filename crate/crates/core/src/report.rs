//! CSV and table emission.
//!
//! All numeric formatting goes through f64's shortest-roundtrip `Display`,
//! so identical runs produce byte-identical files.

use std::fmt::Write as _;

use crate::orchestrator::{Method, ObjectiveMode, RunReport, RunSet};

/// One aggregate row of the benchmark grid.
#[derive(Clone, Debug)]
pub struct AggregateRow {
    pub method: Method,
    pub objective: ObjectiveMode,
    pub stages: usize,
    pub replications: u64,
    pub probability: Option<f64>,
    pub probability_hw: Option<f64>,
    pub gradient: f64,
    pub gradient_hw: Option<f64>,
    pub function: f64,
    pub function_hw: Option<f64>,
}

impl AggregateRow {
    pub fn from_run_set(
        method: Method,
        objective: ObjectiveMode,
        stages: usize,
        set: &RunSet,
    ) -> Self {
        let a = &set.aggregate;
        Self {
            method,
            objective,
            stages,
            replications: a.replications,
            probability: a.probability,
            probability_hw: a.probability_hw,
            gradient: a.gradient_mean,
            gradient_hw: a.gradient_hw,
            function: a.function_mean,
            function_hw: a.function_hw,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".into(), |x| x.to_string())
}

/// Per-replication CSV: replication, selected, epsOptimal, gradEvals, funcEvals.
pub fn replications_csv(set: &RunSet) -> String {
    let mut out = String::from("replication,selected,epsOptimal,gradEvals,funcEvals\n");
    for r in &set.per_rep {
        let eps_opt = match r.eps_optimal {
            Some(true) => "1",
            Some(false) => "0",
            None => "na",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.replication, r.selected, eps_opt, r.grad_evals, r.func_evals
        );
    }
    out
}

pub const AGGREGATE_HEADER: &str = "method,objective,stages,replications,probability,probability_hw,gradient,gradient_hw,function,function_hw";

/// Aggregate CSV with one row per benchmark cell.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method.as_str(),
            r.objective.as_str(),
            r.stages,
            r.replications,
            opt(r.probability),
            opt(r.probability_hw),
            r.gradient,
            opt(r.gradient_hw),
            r.function,
            opt(r.function_hw),
        );
    }
    out
}

/// Parses a CSV produced by `aggregate_csv` (used by table emission).
pub fn parse_aggregate_csv(text: &str) -> Result<Vec<AggregateRow>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty aggregate CSV")?;
    if header != AGGREGATE_HEADER {
        return Err(format!("unexpected aggregate header: {header}"));
    }
    let field = |s: &str| -> Result<Option<f64>, String> {
        if s == "na" {
            Ok(None)
        } else {
            s.parse::<f64>().map(Some).map_err(|e| format!("bad number '{s}': {e}"))
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 10 {
            return Err(format!("bad aggregate row: {line}"));
        }
        rows.push(AggregateRow {
            method: parts[0].parse().map_err(|e: String| e)?,
            objective: parts[1].parse().map_err(|e: String| e)?,
            stages: parts[2].parse().map_err(|e| format!("bad stages: {e}"))?,
            replications: parts[3].parse().map_err(|e| format!("bad replications: {e}"))?,
            probability: field(parts[4])?,
            probability_hw: field(parts[5])?,
            gradient: field(parts[6])?.ok_or("gradient missing")?,
            gradient_hw: field(parts[7])?,
            function: field(parts[8])?.ok_or("function missing")?,
            function_hw: field(parts[9])?,
        });
    }
    Ok(rows)
}

fn superscript(exp: i32) -> String {
    const DIGITS: [char; 10] = ['⁰', '¹', '²', '³', '⁴', '⁵', '⁶', '⁷', '⁸', '⁹'];
    let mut out = String::new();
    if exp < 0 {
        out.push('⁻');
    }
    for ch in exp.abs().to_string().chars() {
        out.push(DIGITS[ch.to_digit(10).unwrap() as usize]);
    }
    out
}

fn round_sig(v: f64, sig: i32) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let mag = v.abs().log10().floor() as i32;
    let factor = 10f64.powi(sig - 1 - mag);
    (v * factor).round() / factor
}

fn trim_mantissa(v: f64, sig: i32) -> String {
    // `sig` significant digits, trailing zeros trimmed but one decimal kept
    if v == 0.0 {
        return "0.0".to_string();
    }
    let decimals = ((sig - 1) - v.abs().log10().floor() as i32).max(1) as usize;
    let s = format!("{v:.decimals$}");
    let s = s.trim_end_matches('0');
    let s = if s.ends_with('.') { format!("{s}0") } else { s.to_string() };
    s
}

/// Formats a budget-style value as mean (±hw)×10^e with a 3-significant-digit
/// mantissa, e.g. `9.02 (±0.0)×10⁶`.
pub fn format_sci3(value: f64, hw: Option<f64>) -> String {
    if value == 0.0 {
        return "0.0 (±0.0)".to_string();
    }
    let exp = value.abs().log10().floor() as i32;
    let scale = 10f64.powi(exp);
    let mantissa = trim_mantissa(round_sig(value, 3) / scale, 3);
    let hw_str = match hw {
        None => "±na".to_string(),
        Some(h) => format!("±{}", trim_mantissa(round_sig(h, 2) / scale, 2)),
    };
    format!("{mantissa} ({hw_str})×10{}", superscript(exp))
}

/// Formats a probability as mean (±hw) with 3 significant digits.
pub fn format_probability(value: Option<f64>, hw: Option<f64>) -> String {
    let Some(v) = value else { return "na".to_string() };
    let v = round_sig(v, 3);
    let hw_str = match hw {
        None => "±na".to_string(),
        Some(h) if h == 0.0 => "±0.0".to_string(),
        Some(h) => format!("±{}", round_sig(h, 2)),
    };
    format!("{v} ({hw_str})")
}

/// Emits the benchmark grid as a markdown table: rows = method × metric,
/// columns = T. Missing cells are marked `—`.
pub fn emit_tables_markdown(rows: &[AggregateRow], objective: ObjectiveMode) -> String {
    let rows: Vec<&AggregateRow> = rows.iter().filter(|r| r.objective == objective).collect();
    let mut stages: Vec<usize> = rows.iter().map(|r| r.stages).collect();
    stages.sort_unstable();
    stages.dedup();
    let mut out = format!("## Objective: {}\n\n", objective.as_str());
    let mut header = String::from("| Method | Metric |");
    let mut rule = String::from("|---|---|");
    for t in &stages {
        let _ = write!(header, " T={t} |");
        rule.push_str("---|");
    }
    out.push_str(&header);
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    for method in [Method::Exact, Method::Asymptotic] {
        for metric in ["Probability", "Gradient", "Function"] {
            let mut line = format!("| {} | {metric} |", method.as_str());
            for &t in &stages {
                let cell = rows.iter().find(|r| r.method == method && r.stages == t);
                let text = match cell {
                    None => "—".to_string(),
                    Some(r) => match metric {
                        "Probability" => format_probability(r.probability, r.probability_hw),
                        "Gradient" => format_sci3(r.gradient, r.gradient_hw),
                        _ => format_sci3(r.function, r.function_hw),
                    },
                };
                let _ = write!(line, " {text} |");
            }
            out.push_str(&line);
            out.push('\n');
        }
    }
    out.push('\n');
    out
}

/// Human-readable structured text of one replication's audit trail.
pub fn render_run_report(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "replication {} selected system {} (grad {}, func {}, {:?})",
        report.replication,
        report.selected,
        report.budget.grad_evals,
        report.budget.func_evals,
        report.elapsed
    );
    if let Some(t) = report.early_stop_stage {
        let _ = writeln!(
            out,
            "  early stop at stage {t}: survivor certified only at that stage's tolerances"
        );
    }
    for s in &report.stages {
        let _ = writeln!(
            out,
            "  stage {}: remaining {:?} -> {:?}, grad {}, func {}",
            s.t, s.remaining_before, s.remaining_after, s.grad_evals, s.func_evals
        );
        let _ = writeln!(out, "    targets: {:?}", s.targets);
        if !s.evictions.is_empty() {
            let evs: Vec<String> =
                s.evictions.iter().map(|e| format!("{}@r{}", e.system, e.round)).collect();
            let _ = writeln!(out, "    evictions: {}", evs.join(", "));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sci3_examples() {
        assert_eq!(format_sci3(9.02e6, Some(0.0)), "9.02 (±0.0)×10⁶");
        assert_eq!(format_sci3(2.54e2, Some(0.0)), "2.54 (±0.0)×10²");
        assert_eq!(format_sci3(1.78e5, Some(1.2e3)), "1.78 (±0.012)×10⁵");
    }

    #[test]
    fn probability_examples() {
        assert_eq!(format_probability(Some(1.0), Some(0.0)), "1 (±0.0)");
        assert_eq!(format_probability(Some(0.914), Some(0.02)), "0.914 (±0.02)");
        assert_eq!(format_probability(None, None), "na");
    }

    #[test]
    fn aggregate_roundtrip() {
        let rows = vec![AggregateRow {
            method: Method::Exact,
            objective: ObjectiveMode::Different,
            stages: 1,
            replications: 100,
            probability: Some(1.0),
            probability_hw: Some(0.0),
            gradient: 9.02e6,
            gradient_hw: Some(0.0),
            function: 1.78e5,
            function_hw: Some(1.2e3),
        }];
        let csv = aggregate_csv(&rows);
        let parsed = parse_aggregate_csv(&csv).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].gradient, 9.02e6);
        assert_eq!(parsed[0].probability, Some(1.0));
        // parsing is stable under re-emission
        assert_eq!(aggregate_csv(&parsed), csv);
    }

    #[test]
    fn empty_grid_gives_header_only_table() {
        let md = emit_tables_markdown(&[], ObjectiveMode::Same);
        assert!(md.contains("| Method | Metric |"));
        assert!(md.contains("| exact | Probability |"));
    }
}
