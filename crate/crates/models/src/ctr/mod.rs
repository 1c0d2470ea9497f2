//! User-channel-item click model: user features, channel features and
//! embedding, item features and embedding, concatenated into a ReLU MLP
//! with a sigmoid output.

mod train;

use channelpage_core::lp::ScoreMatrix;
use channelpage_core::model::{Catalog, Channel, ItemIdx};
use channelpage_tensor::{Graph, ParamSet, Tensor, Var};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::init::glorot;
use crate::{ModelError, Result};

pub use train::{examples_from_records, train_ctr, CtrTrainConfig, CtrTrainState, LabeledExample, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CtrConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub item_embedding: usize,
    pub channel_embedding: usize,
    /// When false, channel features and the channel embedding are dropped,
    /// giving a user-item model.
    pub use_channel: bool,
}

impl Default for CtrConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32, 16],
            dropout: 0.01,
            item_embedding: 8,
            channel_embedding: 4,
            use_channel: true,
        }
    }
}

impl CtrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.hidden.contains(&0) {
            return Err(ModelError::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Input sizes the model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub user: usize,
    pub channel: usize,
    pub item: usize,
    pub n_items: usize,
    pub n_channels: usize,
}

impl FeatureDims {
    pub fn of(catalog: &Catalog, channels: &[Channel], user_dim: usize) -> Self {
        Self {
            user: user_dim,
            channel: channels.first().map_or(0, |c| c.features.len()),
            item: catalog.feature_dim(),
            n_items: catalog.len(),
            n_channels: channels.len(),
        }
    }
}

/// Catalog and channel tables the model reads features from.
#[derive(Debug, Clone, Copy)]
pub struct CtrContext<'a> {
    pub catalog: &'a Catalog,
    pub channels: &'a [Channel],
}

/// One (user, channel, item) query.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub user: &'a [f64],
    pub channel: usize,
    pub item: ItemIdx,
}

#[derive(Debug, Clone, Copy)]
pub struct CtrForward {
    /// `B x 1` logits.
    pub logits: Var,
    /// `B x w` activations of the last hidden layer.
    pub hidden: Var,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    item_emb: Option<usize>,
    channel_emb: Option<usize>,
    hidden: Vec<(usize, usize)>,
    out: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtrModel {
    config: CtrConfig,
    dims: FeatureDims,
    params: ParamSet,
    layout: Layout,
}

fn param_index(params: &ParamSet, name: &str) -> Result<usize> {
    params
        .index_of(name)
        .ok_or_else(|| ModelError::Config(format!("checkpoint lacks parameter {name}")))
}

impl CtrModel {
    pub fn new<R: Rng + ?Sized>(config: CtrConfig, dims: FeatureDims, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        if config.item_embedding > 0 {
            params.push("item_emb", glorot(dims.n_items, config.item_embedding, rng));
        }
        if config.use_channel && config.channel_embedding > 0 {
            params.push("channel_emb", glorot(dims.n_channels, config.channel_embedding, rng));
        }
        let mut width = Self::input_width(&config, &dims);
        for (k, &h) in config.hidden.iter().enumerate() {
            params.push(format!("hidden{k}.w"), glorot(width, h, rng));
            params.push(format!("hidden{k}.b"), Tensor::zeros(&[1, h]));
            width = h;
        }
        params.push("out.w", glorot(width, 1, rng));
        params.push("out.b", Tensor::zeros(&[1, 1]));
        Self::from_params(config, dims, params)
    }

    /// Wraps loaded parameters, checking names and shapes.
    pub fn from_params(config: CtrConfig, dims: FeatureDims, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let item_emb = (config.item_embedding > 0)
            .then(|| param_index(&params, "item_emb"))
            .transpose()?;
        let channel_emb = (config.use_channel && config.channel_embedding > 0)
            .then(|| param_index(&params, "channel_emb"))
            .transpose()?;
        let hidden = (0..config.hidden.len())
            .map(|k| Ok((param_index(&params, &format!("hidden{k}.w"))?, param_index(&params, &format!("hidden{k}.b"))?)))
            .collect::<Result<Vec<_>>>()?;
        let out = (param_index(&params, "out.w")?, param_index(&params, "out.b")?);

        let mut expected = Vec::new();
        if let Some(i) = item_emb {
            expected.push((i, vec![dims.n_items, config.item_embedding]));
        }
        if let Some(i) = channel_emb {
            expected.push((i, vec![dims.n_channels, config.channel_embedding]));
        }
        let mut width = Self::input_width(&config, &dims);
        for (&(w, b), &h) in hidden.iter().zip(&config.hidden) {
            expected.push((w, vec![width, h]));
            expected.push((b, vec![1, h]));
            width = h;
        }
        expected.push((out.0, vec![width, 1]));
        expected.push((out.1, vec![1, 1]));
        for (i, shape) in expected {
            if params.get(i).shape() != shape.as_slice() {
                return Err(ModelError::Dimension(format!(
                    "parameter {} has shape {:?}, expected {shape:?}",
                    params.name(i),
                    params.get(i).shape()
                )));
            }
        }
        Ok(Self {
            config,
            dims,
            params,
            layout: Layout {
                item_emb,
                channel_emb,
                hidden,
                out,
            },
        })
    }

    fn input_width(config: &CtrConfig, dims: &FeatureDims) -> usize {
        let channel = if config.use_channel {
            dims.channel + config.channel_embedding
        } else {
            0
        };
        dims.user + channel + dims.item + config.item_embedding
    }

    pub fn config(&self) -> &CtrConfig {
        &self.config
    }

    pub fn dims(&self) -> &FeatureDims {
        &self.dims
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Width of the last hidden layer (the input width with no hidden layers).
    pub fn penultimate_dim(&self) -> usize {
        self.config
            .hidden
            .last()
            .copied()
            .unwrap_or_else(|| Self::input_width(&self.config, &self.dims))
    }

    /// Width of [`CtrModel::deep_vectors`] rows: last hidden layer plus logit.
    pub fn deep_dim(&self) -> usize {
        self.penultimate_dim() + 1
    }

    fn check(&self, ctx: &CtrContext<'_>, batch: &[Query<'_>]) -> Result<()> {
        if batch.is_empty() {
            return Err(ModelError::Dimension("empty batch".into()));
        }
        if ctx.catalog.feature_dim() != self.dims.item || ctx.catalog.len() != self.dims.n_items {
            return Err(ModelError::Dimension("catalog differs from the one the model was built for".into()));
        }
        for q in batch {
            if q.user.len() != self.dims.user {
                return Err(ModelError::Dimension(format!(
                    "user features have {} entries, model expects {}",
                    q.user.len(),
                    self.dims.user
                )));
            }
            if q.channel >= self.dims.n_channels || q.channel >= ctx.channels.len() {
                return Err(ModelError::Dimension(format!("channel {} out of range", q.channel)));
            }
            if q.item.get() >= self.dims.n_items {
                return Err(ModelError::Dimension(format!("item index {} out of range", q.item.0)));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `g`. `vars` are this model's parameters
    /// bound on `g`, in [`ParamSet`] order; `dropout` enables train mode.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        ctx: &CtrContext<'_>,
        batch: &[Query<'_>],
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<CtrForward> {
        self.check(ctx, batch)?;
        let b = batch.len();
        let mut parts = Vec::new();
        if self.dims.user > 0 {
            let users: Vec<f64> = batch.iter().flat_map(|q| q.user.iter().copied()).collect();
            parts.push(g.constant(Tensor::new(vec![b, self.dims.user], users)?));
        }
        if self.config.use_channel {
            if self.dims.channel > 0 {
                let feats: Vec<f64> = batch
                    .iter()
                    .flat_map(|q| ctx.channels[q.channel].features.iter().copied())
                    .collect();
                parts.push(g.constant(Tensor::new(vec![b, self.dims.channel], feats)?));
            }
            if let Some(e) = self.layout.channel_emb {
                let idx: Vec<usize> = batch.iter().map(|q| q.channel).collect();
                parts.push(g.gather_rows(vars[e], &idx)?);
            }
        }
        if self.dims.item > 0 {
            let feats: Vec<f64> = batch
                .iter()
                .flat_map(|q| ctx.catalog.item(q.item).features.iter().copied())
                .collect();
            parts.push(g.constant(Tensor::new(vec![b, self.dims.item], feats)?));
        }
        if let Some(e) = self.layout.item_emb {
            let idx: Vec<usize> = batch.iter().map(|q| q.item.get()).collect();
            parts.push(g.gather_rows(vars[e], &idx)?);
        }
        if parts.is_empty() {
            return Err(ModelError::Config("model has no inputs".into()));
        }
        let mut h = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 1)? };
        for &(w, bias) in &self.layout.hidden {
            let z = g.matmul(h, vars[w])?;
            let z = g.add_row(z, vars[bias])?;
            h = g.relu(z)?;
            if let Some(rng) = dropout.as_deref_mut() {
                h = g.dropout(h, self.config.dropout, rng, true)?;
            }
        }
        let z = g.matmul(h, vars[self.layout.out.0])?;
        let logits = g.add_row(z, vars[self.layout.out.1])?;
        Ok(CtrForward { logits, hidden: h })
    }

    /// Eval-mode probabilities and last hidden activations for a batch.
    pub fn predict_batch(&self, ctx: &CtrContext<'_>, batch: &[Query<'_>]) -> Result<(Vec<f64>, Tensor)> {
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g);
        let f = self.forward(&mut g, &vars, ctx, batch, None)?;
        let probs = g.sigmoid(f.logits)?;
        Ok((g.value(probs).data().to_vec(), g.value(f.hidden).clone()))
    }

    /// Click probability of one query, eval mode.
    pub fn forward_ctr(&self, ctx: &CtrContext<'_>, user: &[f64], channel: usize, item: ItemIdx) -> Result<f64> {
        let (p, _) = self.predict_batch(ctx, &[Query { user, channel, item }])?;
        Ok(p[0])
    }

    /// Last hidden layer of one query, eval mode.
    pub fn penultimate_vector(&self, ctx: &CtrContext<'_>, user: &[f64], channel: usize, item: ItemIdx) -> Result<Vec<f64>> {
        let (_, h) = self.predict_batch(ctx, &[Query { user, channel, item }])?;
        Ok(h.into_data())
    }

    /// Per-query deep vectors: last hidden layer followed by the logit.
    pub fn deep_vectors(&self, ctx: &CtrContext<'_>, batch: &[Query<'_>]) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g);
        let f = self.forward(&mut g, &vars, ctx, batch, None)?;
        let deep = g.concat(&[f.hidden, f.logits], 1)?;
        Ok(g.value(deep).clone())
    }

    /// `M x N` predicted click-through rates for `candidates` in every
    /// channel of `ctx`.
    pub fn score_matrix(&self, ctx: &CtrContext<'_>, user: &[f64], candidates: &[ItemIdx]) -> Result<ScoreMatrix> {
        let m = ctx.channels.len();
        if candidates.is_empty() {
            return Ok(ScoreMatrix::new(m, 0, vec![])?);
        }
        let batch: Vec<Query<'_>> = (0..m)
            .flat_map(|channel| candidates.iter().map(move |&item| Query { user, channel, item }))
            .collect();
        let (probs, _) = self.predict_batch(ctx, &batch)?;
        Ok(ScoreMatrix::new(m, candidates.len(), probs)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use channelpage_core::model::ItemRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy() -> (Catalog, Vec<Channel>) {
        let catalog = Catalog::from_records((0..5).map(|i| ItemRecord {
            item_id: format!("i{i}"),
            category_id: format!("c{}", i % 2),
            brand_id: "b".into(),
            features: vec![i as f64 / 5.0, 1.0 - i as f64 / 5.0],
        }))
        .unwrap();
        let channels = (0..2)
            .map(|c| Channel {
                channel_id: c,
                capacity: 2,
                features: vec![c as f64, 1.0 - c as f64],
            })
            .collect();
        (catalog, channels)
    }

    fn model(seed: u64) -> (Catalog, Vec<Channel>, CtrModel) {
        let (catalog, channels) = toy();
        let dims = FeatureDims::of(&catalog, &channels, 3);
        let cfg = CtrConfig {
            hidden: vec![6, 4],
            ..CtrConfig::default()
        };
        let m = CtrModel::new(cfg, dims, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (catalog, channels, m)
    }

    #[test]
    fn zero_weights_give_half() {
        let (catalog, channels, mut m) = model(1);
        for t in m.params_mut().tensors_mut() {
            *t = Tensor::zeros(t.shape());
        }
        let ctx = CtrContext {
            catalog: &catalog,
            channels: &channels,
        };
        assert_eq!(m.forward_ctr(&ctx, &[0.3, -1.0, 2.0], 1, ItemIdx(2)).unwrap(), 0.5);
    }

    #[test]
    fn penultimate_dimension_and_determinism() {
        let (catalog, channels, m) = model(2);
        let ctx = CtrContext {
            catalog: &catalog,
            channels: &channels,
        };
        let u = [0.1, 0.2, 0.3];
        let a = m.penultimate_vector(&ctx, &u, 0, ItemIdx(1)).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, m.penultimate_vector(&ctx, &u, 0, ItemIdx(1)).unwrap());
        assert_ne!(a, m.penultimate_vector(&ctx, &u, 1, ItemIdx(1)).unwrap());
        assert_eq!(m.deep_dim(), 5);
    }

    #[test]
    fn score_matrix_matches_single_queries() {
        let (catalog, channels, m) = model(3);
        let ctx = CtrContext {
            catalog: &catalog,
            channels: &channels,
        };
        let u = [0.5, -0.5, 0.25];
        let cands = [ItemIdx(4), ItemIdx(0), ItemIdx(2)];
        let s = m.score_matrix(&ctx, &u, &cands).unwrap();
        assert_eq!((s.channels(), s.candidates()), (2, 3));
        for i in 0..2 {
            for (j, &it) in cands.iter().enumerate() {
                let p = m.forward_ctr(&ctx, &u, i, it).unwrap();
                assert_eq!(s.get(i, j), p);
                assert!(p > 0.0 && p < 1.0);
            }
        }
        let perm = [ItemIdx(2), ItemIdx(4), ItemIdx(0)];
        let sp = m.score_matrix(&ctx, &u, &perm).unwrap();
        for i in 0..2 {
            assert_eq!(sp.get(i, 0), s.get(i, 2));
            assert_eq!(sp.get(i, 1), s.get(i, 0));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (catalog, channels, m) = model(4);
        let ctx = CtrContext {
            catalog: &catalog,
            channels: &channels,
        };
        assert!(m.forward_ctr(&ctx, &[0.0; 2], 0, ItemIdx(0)).is_err());
        assert!(m.forward_ctr(&ctx, &[0.0; 3], 5, ItemIdx(0)).is_err());
        assert!(m.forward_ctr(&ctx, &[0.0; 3], 0, ItemIdx(9)).is_err());
    }

    #[test]
    fn params_roundtrip_through_from_params() {
        let (_, _, m) = model(5);
        let back = CtrModel::from_params(m.config().clone(), *m.dims(), m.params().clone()).unwrap();
        assert_eq!(back, m);
        let mut bad = m.params().clone();
        *bad.get_mut(0) = Tensor::zeros(&[1, 1]);
        assert!(CtrModel::from_params(m.config().clone(), *m.dims(), bad).is_err());
    }
}
