//! Plain-text summaries of sweep results.

use std::fmt::Write;

use super::sweep::{ExperimentResult, Row};

/// Allowed distance between a measured slope and its predicted value.
pub const SLOPE_TOLERANCE: f64 = 0.3;

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
    let s = if s == "-0" { "0".to_string() } else { s };
    s.replace('-', "−")
}

fn context(r: &Row, skip: &[&str]) -> String {
    let mut parts: Vec<String> = ["scheme", "schedule_kind", "alpha", "grid_kind", "N", "c", "d", "delta", "T", "eps0", "score_kind"]
        .iter()
        .filter(|c| !skip.contains(c) && !r.get(c).is_empty())
        .map(|c| format!("{c}={}", r.get(c)))
        .collect();
    if !r.get("params").is_empty() {
        parts.push(r.get("params").to_string());
    }
    parts.join(" ")
}

/// One line per fitted slope, an EM-vs-EI ratio table when both schemes are
/// present, and a count of failed cells.
pub fn report(result: &ExperimentResult) -> String {
    if result.rows.is_empty() {
        return "no cells\n".to_string();
    }
    let mut out = String::new();
    let n_cells = {
        let mut seeds: Vec<(&str, &str)> = result.rows.iter().map(|r| (r.get("seed"), r.get("params"))).collect();
        seeds.sort();
        seeds.dedup();
        seeds.len()
    };
    let _ = writeln!(out, "{n_cells} cells, {} rows", result.rows.len());

    if !result.slopes.is_empty() {
        let _ = writeln!(out, "\nslopes");
        for s in &result.slopes {
            let mut parts = s.get("metric").splitn(3, ':').skip(1);
            let (metric, axis) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
            let slope = s.num("value").unwrap_or(f64::NAN);
            let line = match s.num("predicted_bound") {
                Some(target) => {
                    let verdict = if (slope - target).abs() <= SLOPE_TOLERANCE { "PASS" } else { "FAIL" };
                    format!("slope {} (target {} ± {}): {verdict}", num(slope), num(target), SLOPE_TOLERANCE)
                }
                None => format!("slope {} (no prediction)", num(slope)),
            };
            let _ = writeln!(out, "  {metric} vs {axis} [{}]: {line}", context(s, &[]));
        }
    }

    let mut pairs: Vec<(String, Option<f64>, Option<f64>)> = Vec::new();
    for r in result.rows.iter().filter(|r| !r.is_error()) {
        let key = format!("{} | {}", r.get("metric"), context(r, &["scheme"]));
        let idx = match pairs.iter().position(|(k, _, _)| *k == key) {
            Some(i) => i,
            None => {
                pairs.push((key, None, None));
                pairs.len() - 1
            }
        };
        match r.get("scheme") {
            "em" => pairs[idx].1 = r.num("value"),
            "ei" => pairs[idx].2 = r.num("value"),
            _ => {}
        }
    }
    let both: Vec<_> = pairs.into_iter().filter_map(|(k, em, ei)| Some((k, em?, ei?))).collect();
    if !both.is_empty() {
        let _ = writeln!(out, "\nEM vs EI");
        let _ = writeln!(out, "  {:<12} {:<12} {:<12} cell", "em", "ei", "ratio");
        for (k, em, ei) in both {
            let ratio = if ei > 0.0 { format!("{:.4e}", em / ei) } else { "inf".to_string() };
            let _ = writeln!(out, "  {em:<12.4e} {ei:<12.4e} {ratio:<12} {k}");
        }
    }

    let failed: Vec<&Row> = result.rows.iter().filter(|r| r.is_error()).collect();
    if !failed.is_empty() {
        let _ = writeln!(out, "\n{} failed rows", failed.len());
        for r in failed {
            let _ = writeln!(out, "  {} [{}]: {}", r.get("metric"), context(r, &[]), r.get("error"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(num(-0.9712), "−0.97");
        assert_eq!(num(-1.0), "−1");
        assert_eq!(num(2.5), "2.5");
        assert_eq!(num(-0.001), "0");
    }

    #[test]
    fn empty_result() {
        assert_eq!(report(&ExperimentResult::default()), "no cells\n");
    }

    #[test]
    fn slope_line() {
        let mut s = Row::default();
        s.set("metric", "slope:kl:grid.N");
        s.set("value", "-0.97");
        s.set("predicted_bound", "-1.0");
        let mut r = Row::default();
        r.set("metric", "kl");
        r.set("value", "0.1");
        let text = report(&ExperimentResult { rows: vec![r], slopes: vec![s] });
        assert!(text.contains("slope −0.97 (target −1 ± 0.3): PASS"), "{text}");
    }
}
