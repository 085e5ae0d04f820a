//! Evaluation reports and their CSV and Markdown renderings.
//!
//! The CSV form is a long `section,key,value` table that parses back to the
//! same report. It omits wall-clock timings so that identical runs produce
//! identical files; the Markdown form includes them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Column label for test trials with no decision (utterance emptied by VAD).
pub const NO_DECISION: &str = "none";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    /// Accuracy (%) of each repetition.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single repetition.
    pub std: f64,
    /// Rows: true speaker; columns: decided speaker, then [`NO_DECISION`].
    pub confusion: Vec<Vec<u64>>,
}

impl ConditionReport {
    pub fn new(name: String, accuracies: Vec<f64>, confusion: Vec<Vec<u64>>) -> Self {
        let (mean, std) = mean_std(&accuracies);
        Self { name, accuracies, mean, std, confusion }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub name: String,
    pub fingerprint: u64,
    pub config: Vec<(String, String)>,
    /// Speakers indexing the confusion matrices.
    pub labels: Vec<String>,
    pub conditions: Vec<ConditionReport>,
    /// Wall-clock seconds per stage, summed over repetitions.
    pub timings: Vec<(String, f64)>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

pub fn render_report(r: &EvaluationReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(r),
        ReportFormat::Markdown => render_markdown(r),
    }
}

fn render_csv(r: &EvaluationReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut row = |s: &str, k: &str, v: &str| w.write_record([s, k, v]).expect("write to vec");
    row("section", "key", "value");
    row("report", "name", &r.name);
    row("report", "fingerprint", &format!("{:016x}", r.fingerprint));
    for (k, v) in &r.config {
        row("config", k, v);
    }
    for (i, l) in r.labels.iter().enumerate() {
        row("label", &i.to_string(), l);
    }
    for (ci, c) in r.conditions.iter().enumerate() {
        row("condition", &ci.to_string(), &c.name);
        for (i, a) in c.accuracies.iter().enumerate() {
            row("accuracy", &format!("{ci}/{}", i + 1), &a.to_string());
        }
        row("summary", &format!("{ci}/mean"), &c.mean.to_string());
        row("summary", &format!("{ci}/std"), &c.std.to_string());
        for (t, counts) in c.confusion.iter().enumerate() {
            for (p, &n) in counts.iter().enumerate().filter(|(_, &n)| n > 0) {
                let pred = if p < r.labels.len() { p.to_string() } else { NO_DECISION.to_string() };
                row("confusion", &format!("{ci}/{t}/{pred}"), &n.to_string());
            }
        }
    }
    String::from_utf8(w.into_inner().expect("flush to vec")).expect("utf-8")
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Data(format!("report CSV: {}", msg.into()))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| bad(format!("bad number `{s}`")))
}

/// Parses a report written by [`render_report`] in CSV form. Timings are
/// not part of the CSV and come back empty.
pub fn parse_report_csv(text: &str) -> Result<EvaluationReport> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut r =
        EvaluationReport { name: String::new(), fingerprint: 0, config: vec![], labels: vec![], conditions: vec![], timings: vec![] };
    let mut confusion: Vec<(usize, usize, Option<usize>, u64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let (s, k, v) = (&rec[0], &rec[1], &rec[2]);
        let parts: Vec<&str> = k.split('/').collect();
        let cond = |r: &mut EvaluationReport| -> Result<usize> {
            let ci: usize = num(parts[0])?;
            if ci >= r.conditions.len() {
                return Err(bad(format!("condition {ci} used before it is declared")));
            }
            Ok(ci)
        };
        match s {
            "report" if k == "name" => r.name = v.to_string(),
            "report" if k == "fingerprint" => r.fingerprint = u64::from_str_radix(v, 16).map_err(|_| bad("bad fingerprint"))?,
            "config" => r.config.push((k.to_string(), v.to_string())),
            "label" => r.labels.push(v.to_string()),
            "condition" => r.conditions.push(ConditionReport {
                name: v.to_string(),
                accuracies: vec![],
                mean: f64::NAN,
                std: f64::NAN,
                confusion: vec![],
            }),
            "accuracy" => {
                let ci = cond(&mut r)?;
                r.conditions[ci].accuracies.push(num(v)?);
            }
            "summary" if parts.len() == 2 => {
                let ci = cond(&mut r)?;
                match parts[1] {
                    "mean" => r.conditions[ci].mean = num(v)?,
                    "std" => r.conditions[ci].std = num(v)?,
                    other => return Err(bad(format!("unknown summary `{other}`"))),
                }
            }
            "confusion" if parts.len() == 3 => {
                let ci = cond(&mut r)?;
                let pred = if parts[2] == NO_DECISION { None } else { Some(num(parts[2])?) };
                confusion.push((ci, num(parts[1])?, pred, num(v)?));
            }
            _ => return Err(bad(format!("unknown row `{s},{k}`"))),
        }
    }
    let n = r.labels.len();
    for c in &mut r.conditions {
        c.confusion = vec![vec![0; n + 1]; n];
    }
    for (ci, t, p, count) in confusion {
        let col = p.unwrap_or(n);
        if t >= n || col > n {
            return Err(bad("confusion index out of range"));
        }
        r.conditions[ci].confusion[t][col] = count;
    }
    Ok(r)
}

fn render_markdown(r: &EvaluationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Evaluation report: {}\n", r.name);
    let _ = writeln!(s, "Config fingerprint `{:016x}`.\n", r.fingerprint);
    let _ = writeln!(s, "## Accuracy (%)\n");
    let names: Vec<&str> = r.conditions.iter().map(|c| c.name.as_str()).collect();
    let _ = writeln!(s, "| repetition | {} |", names.join(" | "));
    let _ = writeln!(s, "|---|{}", "---:|".repeat(names.len()));
    let reps = r.conditions.iter().map(|c| c.accuracies.len()).max().unwrap_or(0);
    for i in 0..reps {
        let cells: Vec<String> = r.conditions.iter().map(|c| c.accuracies.get(i).map_or(String::new(), |a| format!("{a:.2}"))).collect();
        let _ = writeln!(s, "| {} | {} |", i + 1, cells.join(" | "));
    }
    let cells: Vec<String> = r.conditions.iter().map(|c| format!("{:.2}", c.mean)).collect();
    let _ = writeln!(s, "| mean | {} |", cells.join(" | "));
    let cells: Vec<String> = r.conditions.iter().map(|c| format!("{:.2}", c.std)).collect();
    let _ = writeln!(s, "| std | {} |", cells.join(" | "));
    if !r.timings.is_empty() {
        let _ = writeln!(s, "\n## Runtime\n\n| stage | seconds |\n|---|---:|");
        for (k, v) in &r.timings {
            let _ = writeln!(s, "| {k} | {v:.2} |");
        }
    }
    let _ = writeln!(s, "\n## Configuration\n\n| key | value |\n|---|---|");
    for (k, v) in &r.config {
        let _ = writeln!(s, "| {k} | {} |", v.replace('|', "\\|"));
    }
    s
}

/// Number of rows in the Markdown accuracy table besides the repetitions.
pub const SUMMARY_ROWS: usize = 2;

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvaluationReport {
        EvaluationReport {
            name: "speakers=3".into(),
            fingerprint: 0xdead_beef_0123_4567,
            config: vec![("experiment.repetitions".into(), "3".into()), ("frontend.ace.map_file".into(), "a,b \"c\"".into())],
            labels: vec!["a".into(), "b".into(), "c".into()],
            conditions: vec![
                ConditionReport::new(
                    "clean".into(),
                    vec![100.0, 200.0 / 3.0, 0.1 + 0.2],
                    vec![vec![3, 0, 0, 0], vec![1, 2, 0, 0], vec![0, 0, 2, 1]],
                ),
                ConditionReport::new(
                    "wgn:10".into(),
                    vec![33.333333333333336, 50.0, 1e-300],
                    vec![vec![0, 3, 0, 0], vec![0, 3, 0, 0], vec![0, 0, 0, 3]],
                ),
            ],
            timings: vec![("train".into(), 1.5)],
        }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let r = report();
        let back = parse_report_csv(&render_report(&r, ReportFormat::Csv)).unwrap();
        assert_eq!(back, EvaluationReport { timings: vec![], ..r });
    }

    #[test]
    fn csv_excludes_timings() {
        assert!(!render_report(&report(), ReportFormat::Csv).contains("train,1.5"));
    }

    #[test]
    fn markdown_has_one_column_per_condition_and_one_row_per_repetition() {
        let md = render_report(&report(), ReportFormat::Markdown);
        let table: Vec<&str> = md.lines().skip_while(|l| !l.starts_with("| repetition")).take_while(|l| l.starts_with('|')).collect();
        assert_eq!(table.len(), 2 + 3 + SUMMARY_ROWS);
        assert_eq!(table[0], "| repetition | clean | wgn:10 |");
        assert!(md.contains("| train | 1.50 |"));
    }

    #[test]
    fn mean_and_std() {
        assert_eq!(mean_std(&[42.0]), (42.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15 && (s - 1.0).abs() < 1e-15);
    }
}
