use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::cases::{CaseSet, CATEGORIES};
use crate::backends::CallLedger;
use crate::planner::{ActionKind, EngineConfig, Route};

/// One session of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub repeat: u32,
    pub route: Option<Route>,
    pub oracle_route: Option<Route>,
    pub category: Option<String>,
    pub actions: Vec<ActionKind>,
    pub ledger: CallLedger,
    pub fallback: bool,
    pub failure: Option<String>,
    pub steps: u32,
    pub trace_path: Option<PathBuf>,
    pub score: Option<f64>,
}

impl CaseRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub scored: u32,
    pub mean: f64,
}

/// Batch totals; always recomputable from the records alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub records: u32,
    /// Route name, or `none` for sessions that were never routed.
    pub route_distribution: BTreeMap<String, u32>,
    pub mean_editor_calls: f64,
    pub mean_segmenter_calls: f64,
    pub mean_mllm_calls: f64,
    pub fallbacks: u32,
    pub fallback_rate: f64,
    pub failures: u32,
    pub scored: u32,
    pub mean_score: Option<f64>,
    pub score_by_category: BTreeMap<String, CategoryScore>,
    /// Share of labelled records whose route equals the label.
    pub oracle_agreement: Option<f64>,
}

fn mean(sum: f64, n: u32) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl Aggregates {
    pub fn compute(records: &[CaseRecord]) -> Self {
        let n = records.len() as u32;
        let mut route_distribution = BTreeMap::new();
        for r in records {
            let key = r.route.map_or("none", Route::as_str).to_string();
            *route_distribution.entry(key).or_insert(0) += 1;
        }
        let total = |f: fn(&CallLedger) -> u32| records.iter().map(|r| f64::from(f(&r.ledger))).sum::<f64>();
        let fallbacks = records.iter().filter(|r| r.fallback).count() as u32;
        let scores: Vec<(&CaseRecord, f64)> = records.iter().filter_map(|r| r.score.map(|s| (r, s))).collect();
        let mut by_cat: BTreeMap<String, (f64, u32)> = BTreeMap::new();
        for (r, s) in &scores {
            if let Some(c) = &r.category {
                let e = by_cat.entry(c.clone()).or_default();
                e.0 += s;
                e.1 += 1;
            }
        }
        let labelled: Vec<&CaseRecord> = records.iter().filter(|r| r.oracle_route.is_some()).collect();
        let agree = labelled.iter().filter(|r| r.route == r.oracle_route).count() as u32;
        Self {
            records: n,
            route_distribution,
            mean_editor_calls: mean(total(|l| l.editor_calls), n),
            mean_segmenter_calls: mean(total(|l| l.segmenter_calls), n),
            mean_mllm_calls: mean(total(|l| l.mllm_calls), n),
            fallbacks,
            fallback_rate: mean(f64::from(fallbacks), n),
            failures: records.iter().filter(|r| r.failed()).count() as u32,
            scored: scores.len() as u32,
            mean_score: (!scores.is_empty()).then(|| mean(scores.iter().map(|(_, s)| s).sum(), scores.len() as u32)),
            score_by_category: by_cat.into_iter().map(|(k, (sum, c))| (k, CategoryScore { scored: c, mean: mean(sum, c) })).collect(),
            oracle_agreement: (!labelled.is_empty()).then(|| mean(f64::from(agree), labelled.len() as u32)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub strategy: String,
    pub config: EngineConfig,
    /// Sorted by case id, then repeat.
    pub records: Vec<CaseRecord>,
    pub aggregates: Aggregates,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotRow {
    pub category: String,
    pub title: String,
    pub count: u32,
    pub percent: f64,
    /// Mean score per strategy, in the table's strategy order; 0 where nothing was scored.
    pub means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotTable {
    pub strategies: Vec<String>,
    pub rows: Vec<PilotRow>,
}

impl PilotTable {
    /// Every standard category gets a row, empty or not; other labels found
    /// in the cases get rows just before `others`.
    pub fn from_runs(cases: &CaseSet, runs: &[RunReport]) -> Self {
        let mut keys: Vec<(String, String)> =
            CATEGORIES.iter().filter(|(k, _)| *k != "others").map(|(k, t)| (k.to_string(), t.to_string())).collect();
        let mut extra: Vec<String> =
            cases.cases.iter().filter_map(|c| c.category.clone()).filter(|c| !CATEGORIES.iter().any(|(k, _)| k == c)).collect();
        extra.sort();
        extra.dedup();
        keys.extend(extra.into_iter().map(|k| (k.clone(), k)));
        keys.push(("others".into(), "Others".into()));

        let total = cases.len() as u32;
        let rows = keys
            .into_iter()
            .map(|(category, title)| {
                let count = cases.cases.iter().filter(|c| c.category.as_deref() == Some(category.as_str())).count() as u32;
                let means = runs
                    .iter()
                    .map(|run| {
                        let scores: Vec<f64> = run
                            .records
                            .iter()
                            .filter(|r| r.category.as_deref() == Some(category.as_str()))
                            .filter_map(|r| r.score)
                            .collect();
                        mean(scores.iter().sum(), scores.len() as u32)
                    })
                    .collect();
                PilotRow { category, title, count, percent: 100.0 * mean(f64::from(count), total), means }
            })
            .collect();
        Self { strategies: runs.iter().map(|r| r.strategy.clone()).collect(), rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotReport {
    pub runs: Vec<RunReport>,
    pub table: PilotTable,
}

/// Category × strategy table of mean scores.
pub fn render_pilot_table(table: &PilotTable) -> String {
    let width = table.rows.iter().map(|r| r.title.len()).max().unwrap_or(0).max("Failure category".len());
    let mut out = format!("{:<width$}  {:>12}", "Failure category", "Count (%)");
    for s in &table.strategies {
        let _ = write!(out, "  {s:>8}");
    }
    out.push('\n');
    for r in &table.rows {
        let _ = write!(out, "{:<width$}  {:>12}", r.title, format!("{} ({:.1}%)", r.count, r.percent));
        for m in &r.means {
            let _ = write!(out, "  {m:>8.2}");
        }
        out.push('\n');
    }
    out
}

fn route_counts(a: &Aggregates) -> String {
    Route::ALL
        .iter()
        .map(|r| format!("{}={}", r.code(), a.route_distribution.get(r.as_str()).copied().unwrap_or(0)))
        .chain(a.route_distribution.get("none").map(|n| format!("none={n}")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn score_text(a: &Aggregates) -> String {
    a.mean_score.map_or("-".into(), |s| format!("{s:.2}"))
}

pub fn render_summary(report: &RunReport) -> String {
    let a = &report.aggregates;
    format!(
        "{} [{}] {} records\n  routes: {}\n  mean calls: editor {:.2}, segmenter {:.2}, mllm {:.2}\n  fallback rate {:.3} ({}), failures {}, mean score {}\n",
        report.label,
        report.strategy,
        a.records,
        route_counts(a),
        a.mean_editor_calls,
        a.mean_segmenter_calls,
        a.mean_mllm_calls,
        a.fallback_rate,
        a.fallbacks,
        a.failures,
        score_text(a),
    )
}

/// One row per report, keyed by its label.
pub fn render_comparison(reports: &[RunReport]) -> String {
    let flags: Vec<String> = reports.iter().map(|r| r.config.flag_summary()).collect();
    let fw = flags.iter().map(String::len).max().unwrap_or(0).max(5);
    let lw = reports.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<lw$}  {:<fw$}  {:>5}  {:<28}  {:>6}  {:>6}  {:>8}  {:>6}  {:>6}\n",
        "config", "flags", "cases", "routes", "editor", "mllm", "fallback", "failed", "score"
    );
    for (r, f) in reports.iter().zip(&flags) {
        let a = &r.aggregates;
        let _ = writeln!(
            out,
            "{:<lw$}  {:<fw$}  {:>5}  {:<28}  {:>6.2}  {:>6.2}  {:>8.3}  {:>6}  {:>6}",
            r.label,
            f,
            a.records,
            route_counts(a),
            a.mean_editor_calls,
            a.mean_mllm_calls,
            a.fallback_rate,
            a.failures,
            score_text(a),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, route: Option<Route>, editor: u32, score: Option<f64>, category: &str) -> CaseRecord {
        CaseRecord {
            case_id: id.into(),
            repeat: 0,
            route,
            oracle_route: Some(Route::CLocal),
            category: Some(category.into()),
            actions: vec![],
            ledger: CallLedger { editor_calls: editor, mllm_calls: 2, ..CallLedger::default() },
            fallback: editor > 1,
            failure: None,
            steps: 1,
            trace_path: None,
            score,
        }
    }

    #[test]
    fn aggregates_by_hand() {
        let rs = vec![
            rec("a", Some(Route::CLocal), 1, Some(4.0), "x"),
            rec("b", Some(Route::BSpatial), 2, Some(1.0), "x"),
            rec("c", Some(Route::CLocal), 3, None, "y"),
        ];
        let a = Aggregates::compute(&rs);
        assert_eq!(a.records, 3);
        assert_eq!(a.route_distribution.get("C_local"), Some(&2));
        assert_eq!(a.mean_editor_calls, 2.0);
        assert_eq!(a.mean_mllm_calls, 2.0);
        assert_eq!((a.fallbacks, a.fallback_rate), (2, 2.0 / 3.0));
        assert_eq!(a.mean_score, Some(2.5));
        assert_eq!(a.score_by_category["x"], CategoryScore { scored: 2, mean: 2.5 });
        assert!(!a.score_by_category.contains_key("y"));
        assert_eq!(a.oracle_agreement, Some(2.0 / 3.0));
        let empty = Aggregates::compute(&[]);
        assert_eq!((empty.mean_editor_calls, empty.mean_score, empty.oracle_agreement), (0.0, None, None));
    }

    #[test]
    fn comparison_has_one_row_per_report() {
        let rs = vec![rec("a", Some(Route::CLocal), 1, Some(4.0), "x")];
        let report = |label: &str| RunReport {
            label: label.into(),
            strategy: "atr".into(),
            config: EngineConfig::default(),
            aggregates: Aggregates::compute(&rs),
            records: rs.clone(),
        };
        let text = render_comparison(&[report("a"), report("b")]);
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("a "));
        assert!(render_summary(&report("a")).contains("C=1"));
    }
}
