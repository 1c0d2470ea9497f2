use std::path::{Path, PathBuf};

use channelpage_core::model::{ClickRecord, ItemIdx};
use channelpage_core::rng::SeedStream;
use channelpage_tensor::{read_checkpoint, write_checkpoint, AdamConfig, AdamState, Graph, ParamSet, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CtrConfig, CtrContext, CtrModel, FeatureDims, Query};
use crate::eval::{log_loss, roc_auc, EpochStats};
use crate::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CtrTrainConfig {
    pub model: CtrConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Share of click records held out for the eval loss and AUC.
    pub eval_fraction: f64,
    /// Train only on impressions from this channel.
    pub channel: Option<usize>,
}

impl Default for CtrTrainConfig {
    fn default() -> Self {
        Self {
            model: CtrConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 512,
            epochs: 10,
            seed: 0,
            eval_fraction: 0.1,
            channel: None,
        }
    }
}

impl CtrTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(ModelError::Config(format!("eval_fraction {} outside [0, 1)", self.eval_fraction)));
        }
        if !(self.adam.lr > 0.0) {
            return Err(ModelError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One impression with its click label.
#[derive(Debug, Clone, Copy)]
pub struct LabeledExample<'a> {
    pub user: &'a [f64],
    pub channel: usize,
    pub item: ItemIdx,
    pub clicked: bool,
}

impl<'a> LabeledExample<'a> {
    fn query(&self) -> Query<'a> {
        Query {
            user: self.user,
            channel: self.channel,
            item: self.item,
        }
    }
}

/// Every impression in `records`, optionally restricted to one channel.
pub fn examples_from_records(records: &[ClickRecord], channel: Option<usize>) -> Vec<LabeledExample<'_>> {
    records
        .iter()
        .flat_map(|r| {
            r.page
                .iter_items()
                .filter(move |&(c, _, _)| channel.is_none_or(|want| want == c))
                .map(move |(c, p, item)| LabeledExample {
                    user: &r.request.user_features,
                    channel: c,
                    item,
                    clicked: r.is_clicked(c, p),
                })
        })
        .collect()
}

/// Model plus optimizer moments and the number of finished epochs, enough
/// to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct CtrTrainState {
    pub model: CtrModel,
    pub adam: AdamState,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: CtrConfig,
    dims: FeatureDims,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

impl CtrTrainState {
    pub fn fresh(config: &CtrTrainConfig, dims: FeatureDims) -> Result<Self> {
        let mut rng = SeedStream::new(config.seed).derive("ctr/init").rng();
        let model = CtrModel::new(config.model.clone(), dims, &mut rng)?;
        let adam = AdamState::new(model.params().tensors());
        Ok(Self { model, adam, epoch: 0 })
    }

    /// Flattens into one parameter set: model tensors, then `adam.m/*`,
    /// `adam.v/*`, `state.t` and `state.epoch`.
    pub fn to_checkpoint(&self) -> ParamSet {
        let mut out = self.model.params().clone();
        let names = self.model.params().names().to_vec();
        for (n, t) in names.iter().zip(&self.adam.m) {
            out.push(format!("adam.m/{n}"), t.clone());
        }
        for (n, t) in names.iter().zip(&self.adam.v) {
            out.push(format!("adam.v/{n}"), t.clone());
        }
        out.push("state.t", Tensor::scalar(self.adam.t as f64));
        out.push("state.epoch", Tensor::scalar(self.epoch as f64));
        out
    }

    pub fn from_checkpoint(config: CtrConfig, dims: FeatureDims, all: &ParamSet) -> Result<Self> {
        let mut params = ParamSet::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        let mut t = None;
        let mut epoch = None;
        for (name, tensor) in all.iter() {
            if name.starts_with("adam.m/") {
                m.push(tensor.clone());
            } else if name.starts_with("adam.v/") {
                v.push(tensor.clone());
            } else if name == "state.t" {
                t = Some(tensor.item() as u64);
            } else if name == "state.epoch" {
                epoch = Some(tensor.item() as usize);
            } else {
                params.push(name, tensor.clone());
            }
        }
        let model = CtrModel::from_params(config, dims, params)?;
        let adam = match t {
            Some(t) if m.len() == model.params().len() && v.len() == m.len() => AdamState { m, v, t },
            None if m.is_empty() && v.is_empty() => AdamState::new(model.params().tensors()),
            _ => return Err(ModelError::Config("checkpoint optimizer state is incomplete".into())),
        };
        Ok(Self {
            model,
            adam,
            epoch: epoch.unwrap_or(0),
        })
    }

    /// Writes the binary checkpoint and a JSON sidecar with the model shape.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_checkpoint(path, &self.to_checkpoint())?;
        let sidecar = Sidecar {
            config: self.model.config().clone(),
            dims: *self.model.dims(),
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        Self::from_checkpoint(sidecar.config, sidecar.dims, &read_checkpoint(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: CtrTrainState,
    /// Stats for the epochs run by this call.
    pub curve: Vec<EpochStats>,
}

fn split_records(records: &[ClickRecord], config: &CtrTrainConfig) -> (Vec<ClickRecord>, Vec<ClickRecord>) {
    let mut rng = SeedStream::new(config.seed).derive("ctr/split").rng();
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for r in records {
        if rng.random::<f64>() < config.eval_fraction {
            eval.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    (train, eval)
}

fn evaluate(model: &CtrModel, ctx: &CtrContext<'_>, examples: &[LabeledExample<'_>], batch: usize) -> Result<(Option<f64>, Option<f64>)> {
    if examples.is_empty() {
        return Ok((None, None));
    }
    let mut probs = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch) {
        let queries: Vec<Query<'_>> = chunk.iter().map(LabeledExample::query).collect();
        probs.extend(model.predict_batch(ctx, &queries)?.0);
    }
    let labels: Vec<bool> = examples.iter().map(|e| e.clicked).collect();
    Ok((Some(log_loss(&probs, &labels)), roc_auc(&probs, &labels)))
}

/// Trains for `config.epochs` total epochs, continuing from `resume` when
/// given. Shuffling and dropout draw from per-epoch streams, so a run split
/// across a save and a resume ends with the same parameters as an
/// uninterrupted one.
pub fn train_ctr(
    ctx: &CtrContext<'_>,
    records: &[ClickRecord],
    config: &CtrTrainConfig,
    resume: Option<CtrTrainState>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let user_dim = records
        .first()
        .map(|r| r.request.user_features.len())
        .ok_or_else(|| ModelError::Empty("no click records".into()))?;
    let dims = FeatureDims::of(ctx.catalog, ctx.channels, user_dim);
    let mut state = match resume {
        Some(s) => {
            if s.model.config() != &config.model || s.model.dims() != &dims {
                return Err(ModelError::Config("resumed state does not match the training configuration".into()));
            }
            s
        }
        None => CtrTrainState::fresh(config, dims)?,
    };

    let (train_records, eval_records) = split_records(records, config);
    let train = examples_from_records(&train_records, config.channel);
    let eval = examples_from_records(&eval_records, config.channel);
    if train.is_empty() {
        return Err(ModelError::Empty("no training impressions".into()));
    }

    let root = SeedStream::new(config.seed);
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    while state.epoch < config.epochs {
        let e = state.epoch as u64;
        order.sort_unstable();
        order.shuffle(&mut root.derive_index("ctr/shuffle", e).rng());
        let mut dropout_rng = root.derive_index("ctr/dropout", e).rng();
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let queries: Vec<Query<'_>> = chunk.iter().map(|&i| train[i].query()).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| f64::from(u8::from(train[i].clicked))).collect();
            let mut g = Graph::new();
            let vars = state.model.params().bind(&mut g);
            let f = state.model.forward(&mut g, &vars, ctx, &queries, Some(&mut dropout_rng))?;
            let loss = g.bce_with_logits(f.logits, &targets)?;
            loss_sum += g.value(loss).item() * chunk.len() as f64;
            let grads = g.backward(loss)?;
            let grads: Vec<Tensor> = vars
                .iter()
                .zip(state.model.params().tensors())
                .map(|(&v, t)| grads.get_or_zeros(v, t))
                .collect();
            state
                .adam
                .step(state.model.params_mut().tensors_mut(), &grads, &config.adam)?;
        }
        state.epoch += 1;
        let (eval_loss, eval_auc) = evaluate(&state.model, ctx, &eval, config.batch_size)?;
        curve.push(EpochStats {
            epoch: state.epoch,
            train_loss: loss_sum / train.len() as f64,
            eval_loss,
            eval_auc,
        });
    }
    Ok(TrainOutcome { state, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctr::tests::toy;
    use channelpage_core::model::{Page, UserRequest};
    use std::collections::BTreeSet;

    /// Users with feature +1 click item 0 wherever it shows; others never click.
    fn records(n: usize) -> Vec<ClickRecord> {
        (0..n)
            .map(|k| {
                let likes = k % 2 == 0;
                let page = Page::new(vec![vec![ItemIdx(0), ItemIdx(1)], vec![ItemIdx(2), ItemIdx(3)]]);
                let page = if k % 4 < 2 {
                    page
                } else {
                    Page::new(vec![vec![ItemIdx(2), ItemIdx(3)], vec![ItemIdx(0), ItemIdx(4)]])
                };
                let mut clicks = BTreeSet::new();
                if likes {
                    for (c, p, it) in page.iter_items() {
                        if it == ItemIdx(0) {
                            clicks.insert((c, p));
                        }
                    }
                }
                ClickRecord {
                    request: UserRequest {
                        user_id: format!("u{k}"),
                        user_features: vec![if likes { 1.0 } else { -1.0 }],
                        cluster_hint: None,
                    },
                    page,
                    clicks,
                }
            })
            .collect()
    }

    fn config(epochs: usize) -> CtrTrainConfig {
        CtrTrainConfig {
            model: CtrConfig {
                hidden: vec![8],
                dropout: 0.0,
                ..CtrConfig::default()
            },
            adam: AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            batch_size: 16,
            epochs,
            seed: 3,
            eval_fraction: 0.0,
            channel: None,
        }
    }

    #[test]
    fn examples_cover_impressions_and_filter() {
        let recs = records(4);
        assert_eq!(examples_from_records(&recs, None).len(), 16);
        let ch1 = examples_from_records(&recs, Some(1));
        assert_eq!(ch1.len(), 8);
        assert!(ch1.iter().all(|e| e.channel == 1));
        assert_eq!(examples_from_records(&recs, None).iter().filter(|e| e.clicked).count(), 2);
    }

    #[test]
    fn memorizes_a_small_log() {
        let (catalog, channels) = toy();
        let ctx = CtrContext {
            catalog: &catalog,
            channels: &channels,
        };
        let recs = records(32);
        let out = train_ctr(&ctx, &recs, &config(150), None).unwrap();
        let last = out.curve.last().unwrap();
        assert!(last.train_loss < 0.02, "loss {}", last.train_loss);
        let m = &out.state.model;
        assert!(m.forward_ctr(&ctx, &[1.0], 0, ItemIdx(0)).unwrap() > 0.9);
        assert!(m.forward_ctr(&ctx, &[-1.0], 0, ItemIdx(0)).unwrap() < 0.1);
        assert!(m.forward_ctr(&ctx, &[1.0], 1, ItemIdx(3)).unwrap() < 0.1);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (catalog, channels) = toy();
        let ctx = CtrContext {
            catalog: &catalog,
            channels: &channels,
        };
        let recs = records(24);
        let mut cfg = config(4);
        cfg.model.dropout = 0.2;
        cfg.eval_fraction = 0.25;
        let full = train_ctr(&ctx, &recs, &cfg, None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ctr.ckpt");
        let half = train_ctr(&ctx, &recs, &config_with_epochs(&cfg, 2), None).unwrap();
        half.state.save(&path).unwrap();
        let resumed = train_ctr(&ctx, &recs, &cfg, Some(CtrTrainState::load(&path).unwrap())).unwrap();

        assert_eq!(resumed.state, full.state);
        assert_eq!(&full.curve[2..], resumed.curve.as_slice());
    }

    fn config_with_epochs(cfg: &CtrTrainConfig, epochs: usize) -> CtrTrainConfig {
        CtrTrainConfig { epochs, ..cfg.clone() }
    }

    #[test]
    fn rejects_bad_config_and_empty_logs() {
        let (catalog, channels) = toy();
        let ctx = CtrContext {
            catalog: &catalog,
            channels: &channels,
        };
        let mut cfg = config(1);
        cfg.batch_size = 0;
        assert!(train_ctr(&ctx, &records(4), &cfg, None).is_err());
        assert!(matches!(train_ctr(&ctx, &[], &config(1), None), Err(ModelError::Empty(_))));
    }
}
