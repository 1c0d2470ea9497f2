//! Subcommand implementations. Each writes its outputs and a
//! `manifest.json` under its output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use channelpage_core::io::{read_dataset, read_jsonl, write_dataset, write_jsonl, USERS_FILE};
use channelpage_core::metrics::{report_csv, report_table, MeanEstimate, Rate, ReportRow, RequestDump};
use channelpage_core::model::{validate_dataset, UserRequest};
use channelpage_models::ctr::{CtrContext, CtrTrainState};
use channelpage_models::eval::EpochStats;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, CtrVariant, ExperimentConfig};
use crate::evaluate::{comparisons_csv, sweep_csv};
use crate::experiment::{world_and_logs, Experiment};
use crate::methods::{draw_requests, Allocator, Method, PlanSettings};
use crate::pipeline::{
    ctr_file, curve_file, estimate_thresholds, train_click_model, train_reranker, Models, DHANR_FILE, THRESHOLDS_FILE,
};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WORLD_FILE: &str = "world.json";
pub const REPORT_FILE: &str = "report.csv";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const DUMP_FILE: &str = "requests.jsonl";
pub const COMPARISONS_FILE: &str = "comparisons.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const PAGES_FILE: &str = "pages.jsonl";
pub const MODELS_DIR: &str = "models";

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_digest: String,
    config: &'a ExperimentConfig,
    /// SHA-256 of every file the command wrote, by path relative to `out`.
    outputs: BTreeMap<String, String>,
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

fn write_manifest(out: &Path, command: &str, config: &ExperimentConfig, files: &[PathBuf]) -> Result<()> {
    let outputs = files
        .iter()
        .map(|f| {
            let rel = f.strip_prefix(out).unwrap_or(f).display().to_string();
            Ok((rel, file_digest(f)?))
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: config.seed,
        config_digest: config.digest(),
        config,
        outputs,
    };
    std::fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, contents)?;
    written.push(path);
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

/// Simulated catalog, channels, users and a randomly logged click history.
pub fn generate(config: &ExperimentConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    let (world, logs) = world_and_logs(config)?;
    let dataset = world.dataset(logs);
    let report = validate_dataset(&dataset);
    if !report.is_empty() {
        return Err(Error::Data(format!("generated data failed validation: {:?}", report.violations[0])));
    }
    write_dataset(out, &dataset)?;
    write_jsonl(out.join(USERS_FILE), &world.users)?;
    std::fs::write(out.join(WORLD_FILE), serde_json::to_string_pretty(&world.manifest())? + "\n")?;
    let files = [
        channelpage_core::io::CATALOG_FILE,
        channelpage_core::io::CHANNELS_FILE,
        channelpage_core::io::LOGS_FILE,
        USERS_FILE,
        WORLD_FILE,
    ]
    .map(|f| out.join(f));
    write_manifest(out, "generate", config, &files)
}

pub fn estimate(config: &ExperimentConfig, data: &Path, out: &Path) -> Result<()> {
    let dataset = read_dataset(data)?;
    if dataset.records.is_empty() {
        return Err(Error::Data(format!("{} holds no click logs", data.display())));
    }
    let estimates = estimate_thresholds(&dataset.catalog, &dataset.records, config.min_support)?;
    create_dir(out)?;
    let path = out.join(THRESHOLDS_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&estimates)? + "\n")?;
    write_manifest(out, "estimate-thresholds", config, &[path])
}

pub fn train_ctr_command(
    config: &ExperimentConfig,
    data: &Path,
    out: &Path,
    variant: &CtrVariant,
    resume: Option<&Path>,
) -> Result<()> {
    let dataset = read_dataset(data)?;
    let ctx = CtrContext {
        catalog: &dataset.catalog,
        channels: &dataset.channels,
    };
    let resume = resume.map(CtrTrainState::load).transpose()?;
    let outcome = train_click_model(config, &ctx, &dataset.records, variant, resume)?;
    create_dir(out)?;
    let ckpt = out.join(ctr_file(variant));
    outcome.state.save(&ckpt)?;
    let mut written = vec![ckpt.clone(), ckpt.with_extension("json")];
    write(out.join(curve_file(&format!("ctr-{variant}"))), &EpochStats::csv(&outcome.curve), &mut written)?;
    write_manifest(out, "train-ctr", config, &written)
}

pub fn train_rerank_command(config: &ExperimentConfig, data: &Path, ctr: &Path, out: &Path) -> Result<()> {
    let dataset = read_dataset(data)?;
    let ctx = CtrContext {
        catalog: &dataset.catalog,
        channels: &dataset.channels,
    };
    let ctr = CtrTrainState::load(ctr)?.model;
    let outcome = train_reranker(config, &ctx, &ctr, &dataset.records)?;
    create_dir(out)?;
    let ckpt = out.join(DHANR_FILE);
    outcome.model.save(&ckpt)?;
    let mut written = vec![ckpt.clone(), ckpt.with_extension("json")];
    write(out.join(curve_file("dhanr")), &EpochStats::csv(&outcome.curve), &mut written)?;
    write_manifest(out, "train-rerank", config, &written)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct AllocatedPage {
    pub request: usize,
    pub user_id: String,
    /// Item ids per channel, best predicted first, `V_i + h` each.
    pub channels: Vec<Vec<String>>,
    pub objective: f64,
    pub slack: BTreeMap<String, f64>,
}

/// Allocates `n` requests drawn from the users in `data`. Fails with the
/// first infeasible request after writing the feasible ones.
pub fn allocate_command(
    config: &ExperimentConfig,
    data: &Path,
    ctr: &Path,
    thresholds: &Path,
    n: usize,
    out: &Path,
) -> Result<()> {
    let dataset = read_dataset(data)?;
    let users: Vec<UserRequest> = read_jsonl(data.join(USERS_FILE))?;
    if users.is_empty() {
        return Err(Error::Data("no users to allocate for".into()));
    }
    let ctr = CtrTrainState::load(ctr)?.model;
    let estimates = serde_json::from_str(&std::fs::read_to_string(thresholds)?)?;
    let ctx = CtrContext {
        catalog: &dataset.catalog,
        channels: &dataset.channels,
    };
    let allocator = Allocator::new(ctx, &ctr, &estimates, PlanSettings::from_config(config));
    let requests = draw_requests(
        &users,
        dataset.catalog.len(),
        config.candidates,
        &config.stream().derive("allocate"),
        n,
    );
    let mut pages = Vec::with_capacity(n);
    let mut first_error = None;
    for req in &requests {
        match allocator.allocate(req, config.diversity_penalty) {
            Ok(a) => {
                let page = allocator.ranked_allocation(req, &a);
                let doc = a.allocation.to_doc(
                    |j| dataset.catalog.item(req.candidates[j]).id.clone(),
                    |c| dataset.catalog.category_name(c).to_string(),
                );
                pages.push(AllocatedPage {
                    request: req.index,
                    user_id: req.user.user_id.clone(),
                    channels: page
                        .channels
                        .iter()
                        .map(|ch| ch.iter().map(|&it| dataset.catalog.item(it).id.clone()).collect())
                        .collect(),
                    objective: a.allocation.objective,
                    slack: doc.slacks,
                });
            }
            Err(e @ (Error::Infeasible { .. } | Error::Verification { .. })) => {
                eprintln!("{e}");
                first_error.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    create_dir(out)?;
    let path = out.join(PAGES_FILE);
    write_jsonl(&path, &pages)?;
    write_manifest(out, "allocate", config, &[path])?;
    first_error.map_or(Ok(()), Err)
}

/// Runs `methods` on the simulated request stream. Models come from
/// `models` when given and are trained (and saved under `out`) otherwise.
pub fn evaluate_command(config: &ExperimentConfig, methods: &[Method], models: Option<&Path>, out: &Path) -> Result<()> {
    if methods.is_empty() {
        return Err(Error::Config("no methods to evaluate".into()));
    }
    create_dir(out)?;
    let loaded = models.map(|dir| Models::load(dir, config.world.channels())).transpose()?;
    let trained_here = loaded.is_none();
    let mut exp = Experiment::prepare(config.clone(), loaded)?;
    let mut written = Vec::new();
    if trained_here {
        let dir = out.join(MODELS_DIR);
        exp.models.save(&dir, &exp.curves)?;
    }
    let eval = exp.evaluate(methods)?;
    write(out.join(REPORT_FILE), &report_csv(&eval.report), &mut written)?;
    write(out.join(REPORT_TABLE_FILE), &report_table(&eval.report), &mut written)?;
    let dumps = out.join(DUMP_FILE);
    write_jsonl(&dumps, &eval.dumps)?;
    written.push(dumps);
    write(out.join(COMPARISONS_FILE), &comparisons_csv(&eval.comparisons), &mut written)?;
    if methods.contains(&Method::UciAa) && !config.u_sweep.is_empty() {
        let points = exp.sweep(&config.u_sweep)?;
        write(out.join(SWEEP_FILE), &sweep_csv(&points), &mut written)?;
    }
    write_manifest(out, "evaluate", config, &written)
}

/// Aggregates per-request dumps into the report table.
pub fn report_from_dumps(dumps: &[RequestDump], k: usize) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(&str, &str), Vec<&RequestDump>> = BTreeMap::new();
    for d in dumps {
        groups.entry((d.method.as_str(), d.channel.as_str())).or_default().push(d);
    }
    // Keep methods in first-seen order and `total` after the channels.
    let mut methods: Vec<&str> = Vec::new();
    for d in dumps {
        if !methods.contains(&d.method.as_str()) {
            methods.push(&d.method);
        }
    }
    let row = |method: &str, channel: &str, metric: String, value: f64, ci: (f64, f64), n: usize| ReportRow {
        method: method.into(),
        channel: channel.into(),
        metric,
        value,
        ci_low: ci.0,
        ci_high: ci.1,
        n,
    };
    let mut rows = Vec::new();
    for m in methods {
        let mut channels: Vec<&str> = groups.keys().filter(|(gm, _)| *gm == m).map(|(_, c)| *c).collect();
        channels.sort_by_key(|c| (*c == "total", c.parse::<usize>().unwrap_or(usize::MAX)));
        for c in channels {
            let g = &groups[&(m, c)];
            let pak: Vec<f64> = g.iter().filter_map(|d| d.precision_at_k).collect();
            let mean = MeanEstimate::from_values(&pak, vec![]);
            if let (Some(v), Some(ci)) = (mean.value, mean.ci()) {
                rows.push(row(m, c, format!("precision@{k}"), v, ci, mean.n));
            }
            if c == "total" {
                let page: Vec<f64> = g.iter().filter(|d| d.shown > 0).map(|d| d.clicked as f64 / d.shown as f64).collect();
                let mean = MeanEstimate::from_values(&page, vec![]);
                if let (Some(v), Some(ci)) = (mean.value, mean.ci()) {
                    rows.push(row(m, c, "precision".into(), v, ci, mean.n));
                }
            }
            let il: Vec<f64> = g.iter().filter_map(|d| d.ilad).collect();
            let mean = MeanEstimate::from_values(&il, vec![]);
            if let (Some(v), Some(ci)) = (mean.value, mean.ci()) {
                rows.push(row(m, c, "ilad".into(), v, ci, mean.n));
            }
            let rate = Rate {
                clicks: g.iter().map(|d| d.clicked as u64).sum(),
                impressions: g.iter().map(|d| d.shown as u64).sum(),
            };
            if let (Some(v), Some(ci)) = (rate.value(), rate.ci()) {
                rows.push(row(m, c, "ctr".into(), v, ci, rate.impressions as usize));
            }
        }
    }
    rows
}

pub fn report_command(input: &Path, k: usize, out: &Path) -> Result<()> {
    let dumps: Vec<RequestDump> = read_jsonl(input)?;
    if dumps.is_empty() {
        return Err(Error::Data(format!("{} holds no request dumps", input.display())));
    }
    let rows = report_from_dumps(&dumps, k);
    create_dir(out)?;
    std::fs::write(out.join(REPORT_FILE), report_csv(&rows))?;
    std::fs::write(out.join(REPORT_TABLE_FILE), report_table(&rows))?;
    Ok(())
}
