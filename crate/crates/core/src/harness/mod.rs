//! Verification harness: runs the suites over the configured catalog and
//! assembles a deterministic JSON report.
//!
//! Suites run as independent (suite, model) tasks on a rayon pool capped by
//! `SHRINKERLAB_THREADS`; results are put back in canonical order so the
//! digest does not depend on scheduling.

pub mod config;
pub mod report;
pub mod suites;
pub mod volumes;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

pub use config::{parse_model, OutputConfig, RunConfig, TauGrid, Tolerances, SUITES};
pub use report::{canonical_json, sha256_hex, CheckReport, ModelEntry, Report, Status, Summary, Timing, SCHEMA_VERSION};
pub use suites::ModelContext;

use crate::error::{Error, Result};
use crate::models::ShrinkerModel;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "SHRINKERLAB_THREADS";

#[derive(Clone, Copy)]
enum Task {
    PerModel(&'static str, usize),
    Catalog(&'static str),
}

fn run_task(task: Task, cfg: &RunConfig, ctxs: &[ModelContext], out_dir: Option<&Path>) -> (Vec<CheckReport>, f64) {
    let start = Instant::now();
    let (suite, model, result) = match task {
        Task::PerModel(suite, i) => {
            let ctx = &ctxs[i];
            let r = match suite {
                "geometry" => suites::geometry(cfg, ctx),
                "flow" => suites::flow(cfg, ctx),
                "rigidity" => suites::rigidity(cfg, ctx),
                "entropy" => suites::entropy(cfg, ctx, out_dir),
                "heat" => suites::heat(cfg, ctx),
                "kernel" => suites::kernel(cfg, ctx, out_dir),
                "concentration" => suites::concentration(cfg, ctx),
                "lgeo" => suites::lgeo(cfg, ctx, out_dir),
                "collapsing" => suites::collapsing(cfg, ctx, out_dir),
                "pseudo-locality" => suites::pseudo_locality(cfg, ctx),
                "curvature-integrals" => suites::curvature_integrals(cfg, ctx),
                other => Err(Error::Config(format!("no per-model suite {other}"))),
            };
            (suite, Some(ctx.model.name()), r)
        }
        Task::Catalog(suite) => {
            let r = match suite {
                "gap" => {
                    let models: Vec<&ShrinkerModel> = ctxs.iter().map(|c| &c.model).collect();
                    suites::gap(cfg, &models)
                }
                _ => suites::rigidity_synthetic(cfg),
            };
            (if suite == "gap" { "gap" } else { "rigidity" }, None, r)
        }
    };
    let checks = result.unwrap_or_else(|e| {
        vec![CheckReport::holds("suite-error", &serde_json::json!({"suite": suite, "model": model}), false)
            .named_as("error")
            .note(e.to_string())]
    });
    let elapsed = start.elapsed().as_secs_f64();
    let each = elapsed / checks.len().max(1) as f64;
    let checks = checks
        .into_iter()
        .map(|mut c| {
            c.suite = suite.to_string();
            c.model = model.clone();
            let prefix = match &model {
                Some(m) => format!("{suite}/{m}/"),
                None => format!("{suite}/catalog/"),
            };
            let local = if c.id.is_empty() { c.anchor.clone() } else { c.id.clone() };
            c.id = prefix + &local;
            c.runtime = each;
            c
        })
        .collect();
    (checks, elapsed)
}

impl CheckReport {
    fn named_as(mut self, id: &str) -> Self {
        self.id = id.to_string();
        self
    }
}

fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

/// Run the selected suites, write the report and CSV artifacts into
/// `cfg.output.dir`, and return the report.
pub fn run_suite(cfg: &RunConfig) -> Result<Report> {
    let report = evaluate(cfg, true)?;
    let path = Path::new(&cfg.output.dir).join(&cfg.output.report);
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Run the suites without writing the report file. CSV artifacts are
/// written only when `artifacts` is set and `cfg.output.csv` is on.
pub fn evaluate(cfg: &RunConfig, artifacts: bool) -> Result<Report> {
    cfg.validate()?;
    let begin = Instant::now();
    let out_dir = Path::new(&cfg.output.dir);
    if artifacts {
        fs::create_dir_all(out_dir)?;
    }
    let csv_dir = (artifacts && cfg.output.csv).then_some(out_dir);
    let ctxs = cfg
        .models
        .iter()
        .map(|s| s.build().map(ModelContext::new))
        .collect::<Result<Vec<_>>>()?;
    let selected = cfg.selected_suites();
    let mut tasks = Vec::new();
    for &suite in &selected {
        match suite {
            "gap" => tasks.push(Task::Catalog("gap")),
            _ => {
                tasks.extend((0..ctxs.len()).map(|i| Task::PerModel(suite, i)));
                if suite == "rigidity" {
                    tasks.push(Task::Catalog("rigidity-synthetic"));
                }
            }
        }
    }
    let run = || -> Vec<(Vec<CheckReport>, f64)> {
        tasks.par_iter().map(|&t| run_task(t, cfg, &ctxs, csv_dir)).collect()
    };
    let results = match thread_count() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("{THREADS_ENV}: {e}")))?
            .install(run),
        None => run(),
    };
    let mut checks = Vec::new();
    let mut timing = BTreeMap::new();
    for (task, (c, secs)) in tasks.iter().zip(results) {
        let suite = match task {
            Task::PerModel(s, _) => *s,
            Task::Catalog("gap") => "gap",
            Task::Catalog(_) => "rigidity",
        };
        *timing.entry(suite.to_string()).or_insert(0.0) += secs;
        checks.extend(c);
    }
    dedup_ids(&mut checks);
    let mut report = Report {
        schema_version: SCHEMA_VERSION,
        digest: String::new(),
        config: cfg.clone(),
        models: ctxs
            .iter()
            .map(|c| ModelEntry {
                name: c.model.name(),
                spec: c.model.spec(),
                mu: c.model.mu,
            })
            .collect(),
        suites: selected.iter().map(|s| s.to_string()).collect(),
        summary: report::summarize(&checks),
        checks,
        notes: vec!["status recorded marks constant-recording checks; only fail affects the exit status".into()],
        timing: Timing {
            total_seconds: begin.elapsed().as_secs_f64(),
            finished_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            suites: timing,
        },
    };
    report.digest = report.compute_digest();
    Ok(report)
}

fn dedup_ids(checks: &mut [CheckReport]) {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for c in checks.iter_mut() {
        let n = seen.entry(c.id.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            c.id = format!("{}#{}", c.id, *n - 1);
        }
    }
}
