use std::path::Path;

use channelpage_core::diversity::{SimilarityMode, DEFAULT_MIN_SUPPORT};
use channelpage_core::rng::SeedStream;
use channelpage_models::ctr::{CtrConfig, CtrTrainConfig};
use channelpage_models::dhanr::{DhanrConfig, DhanrTrainConfig};
use channelpage_sim::SimConfig;
use channelpage_tensor::AdamConfig;
use serde::de::{DeserializeOwned, Error as _};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Everything one experiment run depends on. Every random stream is derived
/// from `seed`; the `seed` fields of the nested configs are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub world: SimConfig,
    /// Randomly filled pages in the training log.
    pub train_logs: usize,
    /// Exposures a repetition count needs before it can be a threshold.
    pub min_support: u64,
    /// Candidates drawn per request.
    pub candidates: usize,
    pub eval_requests: usize,
    /// Requests used to pick the MMR and MSD trade-off parameters.
    pub tuning_requests: usize,
    pub sweep_requests: usize,
    /// Cutoff of the per-channel precision metric.
    pub k: usize,
    /// Factor applied to predicted click-through rates before allocation.
    pub score_scale: f64,
    pub diversity_penalty: f64,
    pub per_channel_bound: u32,
    pub overflow: usize,
    pub u_sweep: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub similarity: SimilarityMode,
    #[serde(deserialize_with = "ctr_over_default")]
    pub ctr: CtrTrainConfig,
    /// Logged pages the re-ranker trains on, taken from the log's start.
    pub rerank_pages: usize,
    #[serde(deserialize_with = "dhanr_over_default")]
    pub dhanr: DhanrTrainConfig,
}

/// Reads a nested table over the experiment's own defaults, so that a partial
/// `[ctr]` table keeps the learning rate and epochs it does not mention.
fn over_default<'de, D: Deserializer<'de>, T: Serialize + DeserializeOwned>(de: D, default: T) -> Result<T, D::Error> {
    fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
        match (base, patch) {
            (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
                for (k, v) in p {
                    merge(b.entry(k).or_insert(serde_json::Value::Null), v);
                }
            }
            (b, p) => *b = p,
        }
    }
    let patch = serde_json::Value::deserialize(de)?;
    let mut base = serde_json::to_value(default).map_err(D::Error::custom)?;
    merge(&mut base, patch);
    serde_json::from_value(base).map_err(D::Error::custom)
}

fn ctr_over_default<'de, D: Deserializer<'de>>(de: D) -> Result<CtrTrainConfig, D::Error> {
    over_default(de, ExperimentConfig::default().ctr)
}

fn dhanr_over_default<'de, D: Deserializer<'de>>(de: D) -> Result<DhanrTrainConfig, D::Error> {
    over_default(de, ExperimentConfig::default().dhanr)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            world: SimConfig::default(),
            train_logs: 12_000,
            min_support: DEFAULT_MIN_SUPPORT,
            candidates: 24,
            eval_requests: 10_000,
            tuning_requests: 1_000,
            sweep_requests: 4_000,
            k: 1,
            score_scale: 10.0,
            diversity_penalty: 1.0,
            per_channel_bound: 2,
            overflow: 1,
            u_sweep: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
            lambda_grid: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0],
            gamma_grid: vec![0.0, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0],
            similarity: SimilarityMode::CategoryBrand,
            ctr: CtrTrainConfig {
                adam: AdamConfig {
                    lr: 3e-3,
                    ..AdamConfig::default()
                },
                epochs: 3,
                model: CtrConfig::default(),
                ..CtrTrainConfig::default()
            },
            rerank_pages: 10_000,
            dhanr: DhanrTrainConfig {
                adam: AdamConfig {
                    lr: 2e-3,
                    ..AdamConfig::default()
                },
                epochs: 4,
                model: DhanrConfig::default(),
                ..DhanrTrainConfig::default()
            },
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub u_sweep: Option<Vec<f64>>,
    pub per_channel_bound: Option<u32>,
    pub overflow: Option<usize>,
    pub diversity_penalty: Option<f64>,
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(k) = o.k {
            self.k = k;
        }
        if let Some(u) = &o.u_sweep {
            self.u_sweep.clone_from(u);
        }
        if let Some(b) = o.per_channel_bound {
            self.per_channel_bound = b;
        }
        if let Some(h) = o.overflow {
            self.overflow = h;
        }
        if let Some(u) = o.diversity_penalty {
            self.diversity_penalty = u;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.ctr.validate()?;
        self.dhanr.validate()?;
        let demand = self.world.page_size() + self.overflow * self.world.channels();
        if self.candidates < demand || self.candidates > self.world.n_items {
            return Err(Error::Config(format!(
                "candidates must lie between the allocation demand {demand} and the catalog size {}",
                self.world.n_items
            )));
        }
        if self.train_logs == 0 || self.eval_requests == 0 {
            return Err(Error::Config("train_logs and eval_requests must be positive".into()));
        }
        if self.k == 0 || self.world.capacities.iter().any(|&v| v < self.k) {
            return Err(Error::Config(format!("k = {} must lie in 1..=smallest capacity", self.k)));
        }
        if self.per_channel_bound == 0 {
            return Err(Error::Config("per_channel_bound must be at least 1".into()));
        }
        let non_negative = |xs: &[f64]| xs.iter().all(|x| x.is_finite() && *x >= 0.0);
        if !(self.score_scale > 0.0) || !non_negative(&[self.diversity_penalty]) || !non_negative(&self.u_sweep) {
            return Err(Error::Config("score_scale must be positive, penalties finite and non-negative".into()));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::Config("lambda_grid must be a non-empty subset of [0, 1]".into()));
        }
        if self.gamma_grid.is_empty() || !non_negative(&self.gamma_grid) {
            return Err(Error::Config("gamma_grid must be non-empty and non-negative".into()));
        }
        Ok(())
    }

    pub fn stream(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }

    pub fn world_config(&self) -> SimConfig {
        SimConfig {
            seed: self.stream().derive("world").as_u64(),
            ..self.world.clone()
        }
    }

    pub fn logs_seed(&self) -> u64 {
        self.stream().derive("logs").as_u64()
    }

    /// Training config of a click model variant, seeded per variant.
    pub fn ctr_config(&self, variant: &CtrVariant) -> CtrTrainConfig {
        let mut cfg = self.ctr.clone();
        cfg.seed = self.stream().derive("ctr").derive(&variant.to_string()).as_u64();
        match variant {
            CtrVariant::Full => cfg.model.use_channel = true,
            CtrVariant::Channel(i) => {
                cfg.model.use_channel = false;
                cfg.channel = Some(*i);
            }
        }
        cfg
    }

    pub fn dhanr_config(&self) -> DhanrTrainConfig {
        DhanrTrainConfig {
            seed: self.stream().derive("dhanr").as_u64(),
            ..self.dhanr.clone()
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// The click models the methods need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtrVariant {
    /// User, channel and item features: the allocation scorer.
    Full,
    /// Trained only on one channel's impressions.
    Channel(usize),
}

impl std::fmt::Display for CtrVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Full => f.write_str("full"),
            Self::Channel(i) => write!(f, "channel-{i}"),
        }
    }
}

impl std::str::FromStr for CtrVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            _ => s
                .strip_prefix("channel-")
                .and_then(|i| i.parse().ok())
                .map(Self::Channel)
                .ok_or_else(|| Error::Config(format!("unknown click model variant {s}"))),
        }
    }
}
