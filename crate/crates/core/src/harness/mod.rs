//! Batch evaluation: strategies over case sets, pilot comparisons and
//! ablation sweeps, with per-case traces and aggregate reports.

mod cases;
mod report;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{Backend, SessionClient};
use crate::planner::{EditRequest, Engine, EngineConfig, Route, SessionOutput};
use crate::toolkit::{parse, prompts};

pub use cases::{Case, CaseDocument, CaseSet, CATEGORIES};
pub use report::{
    render_comparison, render_pilot_table, render_summary, Aggregates, CaseRecord, CategoryScore, PilotReport, PilotRow, PilotTable,
    RunReport,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("case set: {0}")]
    CaseSet(String),
    #[error("case {0} has no {1} label")]
    MissingLabel(String, &'static str),
    #[error("{0}")]
    Config(String),
    #[error("scoring requires a judge backend")]
    NoJudge,
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Atr,
    Direct,
    Bo2,
    Fixed(Route),
}

impl Strategy {
    /// The four strategies compared per case in a pilot study.
    pub const PILOT: [Strategy; 4] =
        [Strategy::Direct, Strategy::Fixed(Route::ARewrite), Strategy::Fixed(Route::BSpatial), Strategy::Fixed(Route::CLocal)];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Atr => "atr",
            Strategy::Direct => "direct",
            Strategy::Bo2 => "bo2",
            Strategy::Fixed(Route::ADirect) => "fixed_direct",
            Strategy::Fixed(Route::ARewrite) => "rewrite",
            Strategy::Fixed(Route::BSpatial) => "spatial",
            Strategy::Fixed(Route::CLocal) => "local",
        }
    }

    /// The configuration a batch actually runs with.
    fn apply(self, config: &EngineConfig) -> EngineConfig {
        let mut c = config.clone();
        match self {
            Strategy::Atr | Strategy::Direct => {}
            Strategy::Bo2 => c.bo2 = true,
            Strategy::Fixed(r) => {
                c.oracle_route = Some(r);
                c.use_oracle_labels = false;
            }
        }
        c
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = String;

    /// `atr`, `direct`, `bo2`, the pilot names `rewrite`/`spatial`/`local`,
    /// or `fixed:<route>` with any route spelling.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(route) = lower.strip_prefix("fixed:").or_else(|| lower.strip_prefix("fixed_")) {
            return route.parse().map(Strategy::Fixed);
        }
        match lower.as_str() {
            "atr" => Ok(Strategy::Atr),
            "direct" => Ok(Strategy::Direct),
            "bo2" => Ok(Strategy::Bo2),
            "rewrite" => Ok(Strategy::Fixed(Route::ARewrite)),
            "spatial" => Ok(Strategy::Fixed(Route::BSpatial)),
            "local" => Ok(Strategy::Fixed(Route::CLocal)),
            _ => Err(format!("unknown strategy '{s}' (expected atr, direct, bo2, rewrite, spatial, local or fixed:<route>)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    /// Cases run concurrently.
    pub parallelism: usize,
    /// Independent runs per case; scores are averaged over them.
    pub repeats: u32,
    /// Where per-case traces are written; none means traces stay in memory.
    pub trace_dir: Option<PathBuf>,
    pub retry_limit: u32,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self { parallelism: 1, repeats: 1, trace_dir: None, retry_limit: 2 }
    }
}

pub struct Harness {
    backend: Arc<dyn Backend>,
    judge: Option<Arc<dyn Backend>>,
    settings: HarnessConfig,
}

impl Harness {
    pub fn new(backend: Arc<dyn Backend>, settings: HarnessConfig) -> Self {
        Self { backend, judge: None, settings }
    }

    /// Scores each successful result with one `score:<strategy>` completion.
    pub fn with_judge(mut self, judge: Arc<dyn Backend>) -> Self {
        self.judge = Some(judge);
        self
    }

    pub fn settings(&self) -> &HarnessConfig {
        &self.settings
    }

    /// Runs every case under one strategy. Session failures are recorded and
    /// the batch continues.
    pub fn run_batch(&self, label: &str, cases: &CaseSet, config: &EngineConfig, strategy: Strategy) -> Result<RunReport, HarnessError> {
        let config = strategy.apply(config);
        config.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if config.use_oracle_labels {
            if let Some(c) = cases.cases.iter().find(|c| c.oracle_route.is_none()) {
                return Err(HarnessError::MissingLabel(c.id.clone(), "oracle_route"));
            }
        }
        if self.settings.repeats == 0 {
            return Err(HarnessError::Config("repeats must be at least 1".into()));
        }
        let trace_dir = self.settings.trace_dir.as_ref().map(|d| d.join(label));
        if let Some(dir) = &trace_dir {
            fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.clone(), source })?;
        }

        let jobs: Vec<(&Case, u32)> = cases.cases.iter().flat_map(|c| (0..self.settings.repeats).map(move |r| (c, r))).collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.settings.parallelism.max(1))
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
        let records: Result<Vec<CaseRecord>, HarnessError> = pool.install(|| {
            jobs.par_iter().map(|(case, repeat)| self.run_case(case, *repeat, &config, strategy, trace_dir.as_ref())).collect()
        });
        let mut records = records?;
        records.sort_by(|a, b| (&a.case_id, a.repeat).cmp(&(&b.case_id, b.repeat)));
        let aggregates = Aggregates::compute(&records);
        Ok(RunReport { label: label.to_string(), strategy: strategy.label().to_string(), config, records, aggregates })
    }

    fn run_case(
        &self,
        case: &Case,
        repeat: u32,
        config: &EngineConfig,
        strategy: Strategy,
        trace_dir: Option<&PathBuf>,
    ) -> Result<CaseRecord, HarnessError> {
        let mut config = config.clone();
        if config.use_oracle_labels {
            config.oracle_route = case.oracle_route;
        }
        let engine = Engine::new(self.backend.clone(), config)
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .with_retry_limit(self.settings.retry_limit);
        let request = EditRequest { image: case.image.clone(), instruction: case.instruction.clone() };
        let result = match strategy {
            Strategy::Direct => engine.run_direct(&engine.client(&case.id), &request),
            _ => engine.run_session(&case.id, &request),
        };
        let (trace, ledger, output, failure) = match result {
            Ok(SessionOutput { image, trace, ledger }) => (trace, ledger, Some(image), None),
            Err(f) => (*f.trace, f.ledger, None, Some(f.reason)),
        };
        if let Some(reason) = &failure {
            tracing::warn!(case = %case.id, repeat, %reason, "session failed");
        }
        let trace_path = match trace_dir {
            Some(dir) => {
                let name = if self.settings.repeats > 1 {
                    format!("{}.r{repeat}.trace.jsonl", case.id)
                } else {
                    format!("{}.trace.jsonl", case.id)
                };
                let path = dir.join(name);
                fs::write(&path, trace.to_jsonl()).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
                Some(path)
            }
            None => None,
        };
        let score = match (&self.judge, &output) {
            (Some(judge), Some(image)) => self.score(judge, case, strategy, image),
            _ => None,
        };
        Ok(CaseRecord {
            case_id: case.id.clone(),
            repeat,
            route: trace.route(),
            oracle_route: case.oracle_route,
            category: case.category.clone(),
            actions: trace.actions(),
            ledger,
            fallback: trace.fallback(),
            failure,
            steps: trace.steps.len() as u32,
            trace_path,
            score,
        })
    }

    fn score(&self, judge: &Arc<dyn Backend>, case: &Case, strategy: Strategy, result: &crate::raster::ImageBuffer) -> Option<f64> {
        let client = SessionClient::new(judge.clone(), &case.id, self.settings.retry_limit);
        let role = format!("score:{}", strategy.label());
        match client.complete(&prompts::score(&role, &case.instruction, &case.image, result)) {
            Ok(reply) => {
                let score = parse::first_number(&reply);
                if score.is_none() {
                    tracing::warn!(case = %case.id, %reply, "judge reply has no score");
                }
                score
            }
            Err(e) => {
                tracing::warn!(case = %case.id, error = %e, "judge call failed");
                None
            }
        }
    }

    /// Runs the four pilot strategies on every case and tabulates mean judge
    /// scores per failure category.
    pub fn pilot_compare(&self, cases: &CaseSet, config: &EngineConfig) -> Result<PilotReport, HarnessError> {
        if self.judge.is_none() {
            return Err(HarnessError::NoJudge);
        }
        if let Some(c) = cases.cases.iter().find(|c| c.category.is_none()) {
            return Err(HarnessError::MissingLabel(c.id.clone(), "category"));
        }
        let runs = Strategy::PILOT
            .iter()
            .map(|s| self.run_batch(&format!("pilot_{}", s.label()), cases, config, *s))
            .collect::<Result<Vec<_>, _>>()?;
        let table = PilotTable::from_runs(cases, &runs);
        Ok(PilotReport { runs, table })
    }

    /// One batch per labelled configuration, all under the routed strategy.
    pub fn ablation_sweep(&self, cases: &CaseSet, configs: &[(String, EngineConfig)]) -> Result<Vec<RunReport>, HarnessError> {
        let mut seen = BTreeSet::new();
        for (label, config) in configs {
            if !seen.insert(label.as_str()) {
                return Err(HarnessError::Config(format!("duplicate config label '{label}'")));
            }
            config.validate().map_err(|e| HarnessError::Config(format!("{label}: {e}")))?;
        }
        configs.iter().map(|(label, config)| self.run_batch(label, cases, config, Strategy::Atr)).collect()
    }
}
