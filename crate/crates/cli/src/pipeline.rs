//! Training of every learned component and their on-disk layout.

use std::collections::BTreeMap;
use std::path::Path;

use channelpage_core::diversity::{estimate_category_thresholds, thresholds_by_name, ThresholdEstimate};
use channelpage_core::model::{Catalog, CategoryId, ClickRecord};
use channelpage_models::ctr::{train_ctr, CtrContext, CtrModel, CtrTrainState, TrainOutcome};
use channelpage_models::dhanr::{train_dhanr, DhanrModel, DhanrTrainOutcome};
use channelpage_models::eval::EpochStats;
use serde::{Deserialize, Serialize};

use crate::config::{CtrVariant, ExperimentConfig};
use crate::{Error, Result};

pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const GREEDY_FILE: &str = "greedy.json";
pub const DHANR_FILE: &str = "dhanr.ckpt";

pub fn ctr_file(variant: &CtrVariant) -> String {
    format!("ctr-{variant}.ckpt")
}

pub fn curve_file(name: &str) -> String {
    format!("curve-{name}.csv")
}

/// Per-category tolerance estimates keyed by category name. Categories the
/// logs never show are absent.
pub fn estimate_thresholds(
    catalog: &Catalog,
    logs: &[ClickRecord],
    min_support: u64,
) -> Result<BTreeMap<String, ThresholdEstimate>> {
    let est = estimate_category_thresholds(catalog, logs, min_support)?;
    Ok(thresholds_by_name(catalog, &est))
}

/// Thresholds for the allocation. A category without a supported estimate
/// gets `fallback`.
pub fn resolve_thresholds(
    catalog: &Catalog,
    estimates: &BTreeMap<String, ThresholdEstimate>,
    fallback: u32,
) -> BTreeMap<CategoryId, u32> {
    catalog
        .categories()
        .names()
        .iter()
        .enumerate()
        .map(|(id, name)| {
            let t = estimates.get(name).and_then(|e| e.threshold).unwrap_or(fallback);
            (CategoryId(id as u32), t)
        })
        .collect()
}

/// MMR and MSD trade-off parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyParams {
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for GreedyParams {
    fn default() -> Self {
        Self { lambda: 0.9, gamma: 0.01 }
    }
}

/// Trained components the methods rely on.
#[derive(Debug, Clone)]
pub struct Models {
    pub thresholds: BTreeMap<String, ThresholdEstimate>,
    /// User, channel and item scorer; also the re-ranker's deep component.
    pub ctr: CtrModel,
    pub per_channel: Vec<CtrModel>,
    pub dhanr: DhanrModel,
    pub greedy: GreedyParams,
}

/// Loss curves produced while training, keyed by component name.
pub type Curves = Vec<(String, Vec<EpochStats>)>;

pub fn train_click_model(
    config: &ExperimentConfig,
    ctx: &CtrContext<'_>,
    logs: &[ClickRecord],
    variant: &CtrVariant,
    resume: Option<CtrTrainState>,
) -> Result<TrainOutcome> {
    Ok(train_ctr(ctx, logs, &config.ctr_config(variant), resume)?)
}

pub fn train_reranker(
    config: &ExperimentConfig,
    ctx: &CtrContext<'_>,
    ctr: &CtrModel,
    logs: &[ClickRecord],
) -> Result<DhanrTrainOutcome> {
    let pages = &logs[..config.rerank_pages.min(logs.len())];
    Ok(train_dhanr(ctx, ctr, pages, &config.dhanr_config())?)
}

/// Trains every click model and the re-ranker. The greedy parameters are
/// left at their defaults; see [`crate::methods::tune_greedy`].
pub fn train_models(config: &ExperimentConfig, ctx: &CtrContext<'_>, logs: &[ClickRecord]) -> Result<(Models, Curves)> {
    let thresholds = estimate_thresholds(ctx.catalog, logs, config.min_support)?;
    let mut curves = Curves::new();
    let mut train = |variant: CtrVariant| -> Result<CtrModel> {
        let out = train_click_model(config, ctx, logs, &variant, None)?;
        curves.push((format!("ctr-{variant}"), out.curve));
        Ok(out.state.model)
    };
    let ctr = train(CtrVariant::Full)?;
    let per_channel = (0..ctx.channels.len())
        .map(|i| train(CtrVariant::Channel(i)))
        .collect::<Result<Vec<_>>>()?;
    let rerank = train_reranker(config, ctx, &ctr, logs)?;
    curves.push(("dhanr".into(), rerank.curve));
    Ok((
        Models {
            thresholds,
            ctr: rerank.ctr,
            per_channel,
            dhanr: rerank.model,
            greedy: GreedyParams::default(),
        },
        curves,
    ))
}

fn save_model(model: &CtrModel, path: &Path) -> Result<()> {
    // Optimizer state is not needed for inference; a fresh one keeps the
    // checkpoint format shared with resumable training runs.
    let state = CtrTrainState {
        model: model.clone(),
        adam: channelpage_tensor::AdamState::new(model.params().tensors()),
        epoch: 0,
    };
    Ok(state.save(path)?)
}

impl Models {
    pub fn save(&self, dir: &Path, curves: &Curves) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(THRESHOLDS_FILE), serde_json::to_string_pretty(&self.thresholds)?)?;
        std::fs::write(dir.join(GREEDY_FILE), serde_json::to_string_pretty(&self.greedy)?)?;
        save_model(&self.ctr, &dir.join(ctr_file(&CtrVariant::Full)))?;
        for (i, m) in self.per_channel.iter().enumerate() {
            save_model(m, &dir.join(ctr_file(&CtrVariant::Channel(i))))?;
        }
        self.dhanr.save(dir.join(DHANR_FILE))?;
        for (name, curve) in curves {
            std::fs::write(dir.join(curve_file(name)), EpochStats::csv(curve))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, n_channels: usize) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            std::fs::read_to_string(dir.join(name)).map_err(|e| Error::Data(format!("{}: {e}", dir.join(name).display())))
        };
        let load_ctr = |v: CtrVariant| -> Result<CtrModel> { Ok(CtrTrainState::load(dir.join(ctr_file(&v)))?.model) };
        Ok(Self {
            thresholds: serde_json::from_str(&read(THRESHOLDS_FILE)?)?,
            ctr: load_ctr(CtrVariant::Full)?,
            per_channel: (0..n_channels).map(|i| load_ctr(CtrVariant::Channel(i))).collect::<Result<_>>()?,
            dhanr: DhanrModel::load(dir.join(DHANR_FILE))?,
            greedy: serde_json::from_str(&read(GREEDY_FILE)?)?,
        })
    }
}
