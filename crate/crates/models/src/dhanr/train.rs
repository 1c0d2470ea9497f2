use channelpage_core::model::ClickRecord;
use channelpage_core::rng::SeedStream;
use channelpage_tensor::{AdamConfig, AdamState, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{DhanrConfig, DhanrDims, DhanrModel, PageInput};
use crate::ctr::{CtrContext, CtrModel, Query};
use crate::eval::{log_loss, roc_auc, EpochStats};
use crate::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DhanrTrainConfig {
    pub model: DhanrConfig,
    pub adam: AdamConfig,
    /// Pages per optimizer step.
    pub batch_pages: usize,
    pub epochs: usize,
    pub seed: u64,
    pub eval_fraction: f64,
}

impl Default for DhanrTrainConfig {
    fn default() -> Self {
        Self {
            model: DhanrConfig::default(),
            adam: AdamConfig::default(),
            batch_pages: 32,
            epochs: 10,
            seed: 0,
            eval_fraction: 0.1,
        }
    }
}

impl DhanrTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_pages == 0 {
            return Err(ModelError::Config("batch_pages must be positive".into()));
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

#[derive(Debug, Clone)]
pub struct DhanrTrainOutcome {
    pub model: DhanrModel,
    /// The click model, fine-tuned when `train_deep` is set and unchanged
    /// otherwise.
    pub ctr: CtrModel,
    pub curve: Vec<EpochStats>,
}

/// Click labels of a logged page, shaped like the page.
pub fn page_labels(record: &ClickRecord) -> Vec<Vec<f64>> {
    record
        .click_indicators()
        .into_iter()
        .map(|row| row.into_iter().map(|c| f64::from(u8::from(c))).collect())
        .collect()
}

struct Example {
    input: PageInput,
    labels: Vec<f64>,
}

fn examples(ctr: &CtrModel, ctx: &CtrContext<'_>, records: &[&ClickRecord]) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            Ok(Example {
                input: PageInput::build(ctr, ctx, &r.request.user_features, &r.page)?,
                labels: page_labels(r).concat(),
            })
        })
        .collect()
}

/// Mean per-item BCE of one page on `g`.
fn page_loss(
    g: &mut Graph,
    model: &DhanrModel,
    vars: &[Var],
    ctr: Option<(&CtrModel, &[Var], &CtrContext<'_>)>,
    ex: &Example,
    dropout: &mut dyn RngCore,
) -> Result<Var> {
    let deep = match ctr {
        Some((ctr, cvars, ctx)) => {
            let queries: Vec<Query<'_>> = ex
                .input
                .channels
                .iter()
                .enumerate()
                .flat_map(|(channel, ch)| {
                    ch.items.iter().map(move |&item| Query {
                        user: &ex.input.user,
                        channel,
                        item,
                    })
                })
                .collect();
            let f = ctr.forward(g, cvars, ctx, &queries, None)?;
            let all = g.concat(&[f.hidden, f.logits], 1)?;
            let mut offset = 0;
            let mut per_channel = Vec::with_capacity(ex.input.channels.len());
            for ch in &ex.input.channels {
                let rows: Vec<usize> = (offset..offset + ch.items.len()).collect();
                offset += ch.items.len();
                per_channel.push(g.gather_rows(all, &rows)?);
            }
            Some(per_channel)
        }
        None => None,
    };
    let f = model.forward(g, vars, &ex.input, deep.as_deref(), Some(dropout))?;
    let logits = if f.logits.len() == 1 { f.logits[0] } else { g.concat(&f.logits, 0)? };
    Ok(g.bce_with_logits(logits, &ex.labels)?)
}

fn evaluate(model: &DhanrModel, eval: &[Example]) -> Result<(Option<f64>, Option<f64>)> {
    if eval.is_empty() {
        return Ok((None, None));
    }
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for ex in eval {
        probs.extend(model.score_page(&ex.input)?.scores.concat());
        labels.extend(ex.labels.iter().map(|&y| y > 0.5));
    }
    Ok((Some(log_loss(&probs, &labels)), roc_auc(&probs, &labels)))
}

fn accumulate(sum: &mut Option<Vec<Tensor>>, grads: Vec<Tensor>) {
    match sum {
        None => *sum = Some(grads),
        Some(acc) => {
            for (a, g) in acc.iter_mut().zip(grads) {
                for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                    *x += y;
                }
            }
        }
    }
}

fn mean_of(sum: Option<Vec<Tensor>>, n: usize) -> Vec<Tensor> {
    sum.unwrap_or_default()
        .into_iter()
        .map(|t| t.map(|x| x / n as f64))
        .collect()
}

/// Trains the re-ranker on logged pages with per-item click labels.
pub fn train_dhanr(
    ctx: &CtrContext<'_>,
    ctr: &CtrModel,
    records: &[ClickRecord],
    config: &DhanrTrainConfig,
) -> Result<DhanrTrainOutcome> {
    config.validate()?;
    if records.is_empty() {
        return Err(ModelError::Empty("no click records".into()));
    }
    let root = SeedStream::new(config.seed);
    let dims = DhanrDims {
        item_features: ctx.catalog.feature_dim(),
        deep: ctr.deep_dim(),
        n_channels: ctx.channels.len(),
    };
    let mut model = DhanrModel::new(config.model.clone(), dims, &mut root.derive("dhanr/init").rng())?;
    let mut ctr = ctr.clone();

    let mut split_rng = root.derive("dhanr/split").rng();
    let (mut train_recs, mut eval_recs) = (Vec::new(), Vec::new());
    for r in records {
        if split_rng.random::<f64>() < config.eval_fraction {
            eval_recs.push(r);
        } else {
            train_recs.push(r);
        }
    }
    if train_recs.is_empty() {
        return Err(ModelError::Empty("no training pages".into()));
    }
    let train = examples(&ctr, ctx, &train_recs)?;
    let mut eval = examples(&ctr, ctx, &eval_recs)?;

    let train_deep = config.model.train_deep;
    let mut adam = AdamState::new(model.params().tensors());
    let mut ctr_adam = AdamState::new(ctr.params().tensors());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for e in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut root.derive_index("dhanr/shuffle", e as u64).rng());
        let mut dropout_rng = root.derive_index("dhanr/dropout", e as u64).rng();
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_pages) {
            let mut sum = None;
            let mut ctr_sum = None;
            for &k in chunk {
                let mut g = Graph::new();
                let vars = model.params().bind(&mut g);
                let cvars = if train_deep { ctr.params().bind(&mut g) } else { Vec::new() };
                let deep = train_deep.then_some((&ctr, cvars.as_slice(), ctx));
                let loss = page_loss(&mut g, &model, &vars, deep, &train[k], &mut dropout_rng)?;
                loss_sum += g.value(loss).item();
                let grads = g.backward(loss)?;
                accumulate(
                    &mut sum,
                    vars.iter()
                        .zip(model.params().tensors())
                        .map(|(&v, t)| grads.get_or_zeros(v, t))
                        .collect(),
                );
                if train_deep {
                    accumulate(
                        &mut ctr_sum,
                        cvars
                            .iter()
                            .zip(ctr.params().tensors())
                            .map(|(&v, t)| grads.get_or_zeros(v, t))
                            .collect(),
                    );
                }
            }
            adam.step(model.params_mut().tensors_mut(), &mean_of(sum, chunk.len()), &config.adam)?;
            if train_deep {
                ctr_adam.step(ctr.params_mut().tensors_mut(), &mean_of(ctr_sum, chunk.len()), &config.adam)?;
            }
        }
        if train_deep && !eval.is_empty() {
            eval = examples(&ctr, ctx, &eval_recs)?;
        }
        let (eval_loss, eval_auc) = evaluate(&model, &eval)?;
        curve.push(EpochStats {
            epoch: e + 1,
            train_loss: loss_sum / train.len() as f64,
            eval_loss,
            eval_auc,
        });
    }
    Ok(DhanrTrainOutcome { model, ctr, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctr::{CtrConfig, FeatureDims};
    use crate::dhanr::tests::small_config;
    use channelpage_core::model::{Catalog, Channel, ItemIdx, ItemRecord, Page, UserRequest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn world() -> (Catalog, Vec<Channel>, CtrModel) {
        let catalog = Catalog::from_records((0..6).map(|i| ItemRecord {
            item_id: format!("i{i}"),
            category_id: format!("c{}", i % 3),
            brand_id: "b".into(),
            features: vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()],
        }))
        .unwrap();
        let channels: Vec<Channel> = (0..2)
            .map(|c| Channel {
                channel_id: c,
                capacity: 3,
                features: vec![c as f64],
            })
            .collect();
        let dims = FeatureDims::of(&catalog, &channels, 1);
        let cfg = CtrConfig {
            hidden: vec![4],
            ..CtrConfig::default()
        };
        let ctr = CtrModel::new(cfg, dims, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (catalog, channels, ctr)
    }

    fn single_page_log() -> Vec<ClickRecord> {
        vec![ClickRecord {
            request: UserRequest {
                user_id: "u".into(),
                user_features: vec![0.5],
                cluster_hint: None,
            },
            page: Page::new(vec![vec![ItemIdx(0), ItemIdx(1), ItemIdx(2)], vec![ItemIdx(3), ItemIdx(4), ItemIdx(5)]]),
            clicks: BTreeSet::from([(0, 1), (1, 0), (1, 2)]),
        }]
    }

    fn config(epochs: usize) -> DhanrTrainConfig {
        DhanrTrainConfig {
            model: DhanrConfig {
                fusion_hidden: 16,
                ..small_config()
            },
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            batch_pages: 1,
            epochs,
            seed: 9,
            eval_fraction: 0.0,
        }
    }

    #[test]
    fn memorizes_one_page() {
        let (catalog, channels, ctr) = world();
        let ctx = CtrContext {
            catalog: &catalog,
            channels: &channels,
        };
        let out = train_dhanr(&ctx, &ctr, &single_page_log(), &config(500)).unwrap();
        let first = out.curve[0].train_loss;
        let last = out.curve.last().unwrap().train_loss;
        assert!(last < 0.05 && last < first, "loss {first} -> {last}");
        assert_eq!(out.ctr, ctr);
    }

    #[test]
    fn reproducible_and_fine_tunes_when_asked() {
        let (catalog, channels, ctr) = world();
        let ctx = CtrContext {
            catalog: &catalog,
            channels: &channels,
        };
        let log = single_page_log();
        let a = train_dhanr(&ctx, &ctr, &log, &config(3)).unwrap();
        let b = train_dhanr(&ctx, &ctr, &log, &config(3)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.curve, b.curve);

        let mut cfg = config(3);
        cfg.model.train_deep = true;
        let tuned = train_dhanr(&ctx, &ctr, &log, &cfg).unwrap();
        assert_ne!(tuned.ctr, ctr);
    }

    #[test]
    fn labels_follow_the_page() {
        assert_eq!(page_labels(&single_page_log()[0]), vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]]);
    }

    #[test]
    fn empty_log_is_an_error() {
        let (catalog, channels, ctr) = world();
        let ctx = CtrContext {
            catalog: &catalog,
            channels: &channels,
        };
        assert!(matches!(train_dhanr(&ctx, &ctr, &[], &config(1)), Err(ModelError::Empty(_))));
    }
}
