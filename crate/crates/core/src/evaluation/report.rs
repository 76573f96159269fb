use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Condition, EvalOutcome, EvalResult};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub project: String,
    pub baseline_proved: u64,
    pub enhanced_proved: u64,
    pub baseline_tactics: u64,
    pub enhanced_tactics: u64,
}

impl ReportRow {
    pub fn proved_improvement(&self) -> Option<i64> {
        improvement_bp(self.baseline_proved, self.enhanced_proved)
    }

    pub fn tactics_improvement(&self) -> Option<i64> {
        improvement_bp(self.baseline_tactics, self.enhanced_tactics)
    }

    fn absorb(&mut self, other: &ReportRow) {
        self.baseline_proved += other.baseline_proved;
        self.enhanced_proved += other.enhanced_proved;
        self.baseline_tactics += other.baseline_tactics;
        self.enhanced_tactics += other.enhanced_tactics;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub total: ReportRow,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        let mut total = ReportRow {
            project: "Total".into(),
            ..Default::default()
        };
        for r in &rows {
            total.absorb(r);
        }
        Self { rows, total }
    }
}

/// Relative change in hundredths of a percent, rounded half away from zero.
/// `None` when the baseline is zero.
pub fn improvement_bp(baseline: u64, enhanced: u64) -> Option<i64> {
    if baseline == 0 {
        return None;
    }
    let num = (i128::from(enhanced) - i128::from(baseline)) * 10_000;
    let den = i128::from(baseline);
    let q = (2 * num.abs() + den) / (2 * den);
    Some((q as i64) * num.signum() as i64)
}

/// `+13.41%`, `-2.00%` or `n/a`.
pub fn render_percent(bp: Option<i64>) -> String {
    match bp {
        None => "n/a".into(),
        Some(v) => {
            let sign = if v < 0 { '-' } else { '+' };
            format!("{sign}{}.{:02}%", v.abs() / 100, v.abs() % 100)
        }
    }
}

/// Per-project counts from outcomes; a theorem's project is the first
/// segment of its id. `projects` fixes the row order; unlisted projects
/// follow in name order.
pub fn aggregate(outcomes: &[EvalOutcome], projects: &[String]) -> EvalReport {
    let mut rows: BTreeMap<String, ReportRow> = BTreeMap::new();
    for p in projects {
        rows.entry(p.clone()).or_insert_with(|| ReportRow {
            project: p.clone(),
            ..Default::default()
        });
    }
    for o in outcomes {
        let project = o.project().to_string();
        let row = rows.entry(project.clone()).or_insert_with(|| ReportRow {
            project,
            ..Default::default()
        });
        if o.result != EvalResult::Proved {
            continue;
        }
        match o.condition {
            Condition::Baseline => {
                row.baseline_proved += 1;
                row.baseline_tactics += o.tactic_count as u64;
            }
            Condition::Enhanced => {
                row.enhanced_proved += 1;
                row.enhanced_tactics += o.tactic_count as u64;
            }
        }
    }
    let mut ordered: Vec<ReportRow> = projects
        .iter()
        .filter_map(|p| rows.remove(p))
        .collect();
    ordered.extend(rows.into_values());
    EvalReport::from_rows(ordered)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

const HEADERS: [&str; 7] = [
    "Project",
    "Proved (baseline)",
    "Proved (enhanced)",
    "Proved improvement",
    "Tactics (baseline)",
    "Tactics (enhanced)",
    "Tactics improvement",
];

fn cells(row: &ReportRow) -> [String; 7] {
    [
        row.project.clone(),
        row.baseline_proved.to_string(),
        row.enhanced_proved.to_string(),
        render_percent(row.proved_improvement()),
        row.baseline_tactics.to_string(),
        row.enhanced_tactics.to_string(),
        render_percent(row.tactics_improvement()),
    ]
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    let rows = report.rows.iter().chain(std::iter::once(&report.total));
    match format {
        ReportFormat::Markdown => {
            let mut out = String::new();
            let _ = writeln!(out, "| {} |", HEADERS.join(" | "));
            let _ = writeln!(out, "|---|{}", "---:|".repeat(HEADERS.len() - 1));
            for row in rows {
                let _ = writeln!(out, "| {} |", cells(row).join(" | "));
            }
            out
        }
        ReportFormat::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            writer.write_record(HEADERS).expect("in-memory csv");
            for row in rows {
                writer.write_record(cells(row)).expect("in-memory csv");
            }
            String::from_utf8(writer.into_inner().expect("in-memory csv")).expect("utf-8 csv")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(render_percent(improvement_bp(880, 998)), "+13.41%");
        assert_eq!(render_percent(improvement_bp(8, 8)), "+0.00%");
        assert_eq!(render_percent(improvement_bp(0, 5)), "n/a");
        assert_eq!(render_percent(improvement_bp(100, 90)), "-10.00%");
        // 1/8 = 12.5 bp, rounds up.
        assert_eq!(improvement_bp(80000, 80001), Some(0));
        assert_eq!(improvement_bp(8, 9), Some(1250));
        assert_eq!(improvement_bp(16000, 16002), Some(1));
        assert_eq!(improvement_bp(16000, 15998), Some(-1));
    }

    #[test]
    fn empty_report() {
        let md = render_report(&EvalReport::from_rows(Vec::new()), ReportFormat::Markdown);
        assert!(md.ends_with("| Total | 0 | 0 | n/a | 0 | 0 | n/a |\n"));
        let csv = render_report(&EvalReport::from_rows(Vec::new()), ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 2);
    }
}
