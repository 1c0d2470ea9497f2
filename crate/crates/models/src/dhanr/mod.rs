//! Hierarchical attention re-ranker. Items of each channel pass through a
//! transformer encoder and an attention pooling into one vector per channel;
//! the channel vectors go through a second encoder and pooling into a page
//! vector. Each item is scored from its deep vector, its encoded vector, its
//! channel's encoded vector and the page vector.

mod dump;
mod page;
mod train;

use std::path::{Path, PathBuf};

use channelpage_tensor::{read_checkpoint, write_checkpoint, Graph, ParamSet, Tensor, Var};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::init::glorot;
use crate::{ModelError, Result};

pub use dump::{attention_by_category, category_attention_csv, CategoryPairWeight, ATTENTION_HEADER};
pub use page::{order_and_truncate, ChannelInput, PageInput};
use page::select_rows;
pub use train::{page_labels, train_dhanr, DhanrTrainConfig, DhanrTrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DhanrConfig {
    pub d_model: usize,
    pub d_k: usize,
    pub n_heads: usize,
    /// Encoder blocks at both the item and the channel level.
    pub n_blocks: usize,
    pub ffn_hidden: usize,
    /// Width of the `tanh` layer inside both attention poolings.
    pub attention_dim: usize,
    pub fusion_hidden: usize,
    pub dropout: f64,
    /// One item-level context vector per channel instead of a shared one.
    pub per_channel_context: bool,
    /// Learned position embeddings added to the item inputs. Off by default,
    /// which keeps scores equivariant to reordering items within a channel.
    pub positional: bool,
    pub max_positions: usize,
    /// Fine-tune the click model through the deep vectors while training.
    pub train_deep: bool,
}

impl Default for DhanrConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            d_k: 8,
            n_heads: 1,
            n_blocks: 2,
            ffn_hidden: 64,
            attention_dim: 32,
            fusion_hidden: 32,
            dropout: 0.01,
            per_channel_context: false,
            positional: false,
            max_positions: 32,
            train_deep: false,
        }
    }
}

impl DhanrConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("d_model", self.d_model),
            ("d_k", self.d_k),
            ("n_heads", self.n_heads),
            ("ffn_hidden", self.ffn_hidden),
            ("attention_dim", self.attention_dim),
            ("fusion_hidden", self.fusion_hidden),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, w)| *w == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.positional && self.max_positions == 0 {
            return Err(ModelError::Config("max_positions must be positive".into()));
        }
        Ok(())
    }
}

/// Input widths the re-ranker is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DhanrDims {
    pub item_features: usize,
    pub deep: usize,
    pub n_channels: usize,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Glorot,
    Zeros,
    Ones,
}

/// Every parameter with its shape and initializer, in storage order.
fn param_plan(config: &DhanrConfig, dims: &DhanrDims) -> Vec<(String, [usize; 2], Init)> {
    let d = config.d_model;
    let mut plan = vec![
        ("input.w".to_string(), [dims.item_features + dims.deep, d], Init::Glorot),
        ("input.b".to_string(), [1, d], Init::Zeros),
    ];
    if config.positional {
        plan.push(("pos_emb".into(), [config.max_positions, d], Init::Glorot));
    }
    let encoder = |plan: &mut Vec<_>, prefix: &str| {
        for b in 0..config.n_blocks {
            let p = format!("{prefix}{b}");
            for h in 0..config.n_heads {
                for w in ["wq", "wk", "wv"] {
                    plan.push((format!("{p}.h{h}.{w}"), [d, config.d_k], Init::Glorot));
                }
            }
            plan.push((format!("{p}.wo"), [config.n_heads * config.d_k, d], Init::Glorot));
            plan.push((format!("{p}.ln1.g"), [1, d], Init::Ones));
            plan.push((format!("{p}.ln1.b"), [1, d], Init::Zeros));
            plan.push((format!("{p}.ffn.w1"), [d, config.ffn_hidden], Init::Glorot));
            plan.push((format!("{p}.ffn.b1"), [1, config.ffn_hidden], Init::Zeros));
            plan.push((format!("{p}.ffn.w2"), [config.ffn_hidden, d], Init::Glorot));
            plan.push((format!("{p}.ffn.b2"), [1, d], Init::Zeros));
            plan.push((format!("{p}.ln2.g"), [1, d], Init::Ones));
            plan.push((format!("{p}.ln2.b"), [1, d], Init::Zeros));
        }
    };
    encoder(&mut plan, "item_enc");
    let a = config.attention_dim;
    plan.push(("item_att.w".into(), [d, a], Init::Glorot));
    plan.push(("item_att.b".into(), [1, a], Init::Zeros));
    if config.per_channel_context {
        for i in 0..dims.n_channels {
            plan.push((format!("item_att.r{i}"), [a, 1], Init::Glorot));
        }
    } else {
        plan.push(("item_att.r".into(), [a, 1], Init::Glorot));
    }
    encoder(&mut plan, "chan_enc");
    plan.push(("chan_att.w".into(), [d, a], Init::Glorot));
    plan.push(("chan_att.b".into(), [1, a], Init::Zeros));
    plan.push(("chan_att.v".into(), [a, 1], Init::Glorot));
    plan.push(("fusion.w1".into(), [dims.deep + 3 * d, config.fusion_hidden], Init::Glorot));
    plan.push(("fusion.b1".into(), [1, config.fusion_hidden], Init::Zeros));
    plan.push(("fusion.w2".into(), [config.fusion_hidden, 1], Init::Glorot));
    plan.push(("fusion.b2".into(), [1, 1], Init::Zeros));
    plan
}

#[derive(Debug, Clone, PartialEq)]
struct BlockLayout {
    heads: Vec<[usize; 3]>,
    wo: usize,
    ln1: (usize, usize),
    ffn1: (usize, usize),
    ffn2: (usize, usize),
    ln2: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    input: (usize, usize),
    pos: Option<usize>,
    item_blocks: Vec<BlockLayout>,
    item_att: (usize, usize),
    item_context: Vec<usize>,
    chan_blocks: Vec<BlockLayout>,
    chan_att: (usize, usize),
    chan_context: usize,
    fusion1: (usize, usize),
    fusion2: (usize, usize),
}

impl Layout {
    fn resolve(config: &DhanrConfig, dims: &DhanrDims, params: &ParamSet) -> Result<Self> {
        let at = |name: &str| {
            params
                .index_of(name)
                .ok_or_else(|| ModelError::Config(format!("checkpoint lacks parameter {name}")))
        };
        let pair = |a: &str, b: &str| Ok::<_, ModelError>((at(a)?, at(b)?));
        let blocks = |prefix: &str| {
            (0..config.n_blocks)
                .map(|b| {
                    let p = format!("{prefix}{b}");
                    Ok(BlockLayout {
                        heads: (0..config.n_heads)
                            .map(|h| {
                                Ok([
                                    at(&format!("{p}.h{h}.wq"))?,
                                    at(&format!("{p}.h{h}.wk"))?,
                                    at(&format!("{p}.h{h}.wv"))?,
                                ])
                            })
                            .collect::<Result<_>>()?,
                        wo: at(&format!("{p}.wo"))?,
                        ln1: pair(&format!("{p}.ln1.g"), &format!("{p}.ln1.b"))?,
                        ffn1: pair(&format!("{p}.ffn.w1"), &format!("{p}.ffn.b1"))?,
                        ffn2: pair(&format!("{p}.ffn.w2"), &format!("{p}.ffn.b2"))?,
                        ln2: pair(&format!("{p}.ln2.g"), &format!("{p}.ln2.b"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        };
        let item_context = if config.per_channel_context {
            (0..dims.n_channels)
                .map(|i| at(&format!("item_att.r{i}")))
                .collect::<Result<_>>()?
        } else {
            vec![at("item_att.r")?]
        };
        Ok(Self {
            input: pair("input.w", "input.b")?,
            pos: if config.positional { Some(at("pos_emb")?) } else { None },
            item_blocks: blocks("item_enc")?,
            item_att: pair("item_att.w", "item_att.b")?,
            item_context,
            chan_blocks: blocks("chan_enc")?,
            chan_att: pair("chan_att.w", "chan_att.b")?,
            chan_context: at("chan_att.v")?,
            fusion1: pair("fusion.w1", "fusion.b1")?,
            fusion2: pair("fusion.w2", "fusion.b2")?,
        })
    }
}

/// Attention weights of one forward pass, indexed like the input page.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    /// `[channel][block][head]`, each `L x L` with rows summing to one.
    pub item_self: Vec<Vec<Vec<Tensor>>>,
    /// `[channel]`, one weight per item.
    pub item_level: Vec<Vec<f64>>,
    /// `[block][head]`, each `M x M`.
    pub channel_self: Vec<Vec<Tensor>>,
    /// One weight per channel.
    pub channel_level: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DhanrForward {
    /// Per channel, `L x 1` logits in input order.
    pub logits: Vec<Var>,
    pub attention: AttentionWeights,
}

/// Eval-mode output for one page.
#[derive(Debug, Clone, PartialEq)]
pub struct DhanrScores {
    /// Click probabilities shaped like the page.
    pub scores: Vec<Vec<f64>>,
    pub attention: AttentionWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DhanrModel {
    config: DhanrConfig,
    dims: DhanrDims,
    params: ParamSet,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: DhanrConfig,
    dims: DhanrDims,
}

/// Row order that sorts the rows of `t` lexicographically.
fn canonical_order(t: &Tensor) -> Vec<usize> {
    let mut order: Vec<usize> = (0..t.rows()).collect();
    order.sort_by(|&a, &b| {
        t.row_slice(a)
            .iter()
            .zip(t.row_slice(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

/// Reindexes an attention matrix computed on rows `perm` back to input order.
fn unpermute_square(t: &Tensor, inv: &[usize]) -> Tensor {
    Tensor::from_fn(inv.len(), inv.len(), |a, b| t.get(inv[a], inv[b]))
}

impl DhanrModel {
    pub fn new<R: Rng + ?Sized>(config: DhanrConfig, dims: DhanrDims, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (name, [r, c], init) in param_plan(&config, &dims) {
            let t = match init {
                Init::Glorot => glorot(r, c, rng),
                Init::Zeros => Tensor::zeros(&[r, c]),
                Init::Ones => Tensor::filled(&[r, c], 1.0),
            };
            params.push(name, t);
        }
        Self::from_params(config, dims, params)
    }

    /// Wraps loaded parameters, checking names and shapes.
    pub fn from_params(config: DhanrConfig, dims: DhanrDims, params: ParamSet) -> Result<Self> {
        config.validate()?;
        for (name, shape, _) in param_plan(&config, &dims) {
            let idx = params
                .index_of(&name)
                .ok_or_else(|| ModelError::Config(format!("checkpoint lacks parameter {name}")))?;
            if params.get(idx).shape() != shape {
                return Err(ModelError::Dimension(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    params.get(idx).shape()
                )));
            }
        }
        let layout = Layout::resolve(&config, &dims, &params)?;
        Ok(Self {
            config,
            dims,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &DhanrConfig {
        &self.config
    }

    pub fn dims(&self) -> &DhanrDims {
        &self.dims
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_checkpoint(path, &self.params)?;
        let sidecar = Sidecar {
            config: self.config.clone(),
            dims: self.dims,
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        Self::from_params(sidecar.config, sidecar.dims, read_checkpoint(path)?)
    }

    fn check(&self, page: &PageInput) -> Result<()> {
        if page.channels.is_empty() {
            return Err(ModelError::Dimension("page has no channels".into()));
        }
        if self.config.per_channel_context && page.channels.len() != self.dims.n_channels {
            return Err(ModelError::Dimension(format!(
                "page has {} channels, model has context vectors for {}",
                page.channels.len(),
                self.dims.n_channels
            )));
        }
        for (i, ch) in page.channels.iter().enumerate() {
            if ch.items.is_empty() {
                return Err(ModelError::Dimension(format!("channel {i} is empty")));
            }
            if ch.features.shape() != [ch.items.len(), self.dims.item_features]
                || ch.deep.shape() != [ch.items.len(), self.dims.deep]
            {
                return Err(ModelError::Dimension(format!(
                    "channel {i} inputs have shapes {:?} and {:?}, expected {} and {} columns",
                    ch.features.shape(),
                    ch.deep.shape(),
                    self.dims.item_features,
                    self.dims.deep
                )));
            }
            if self.config.positional && ch.items.len() > self.config.max_positions {
                return Err(ModelError::Dimension(format!(
                    "channel {i} has {} items, more than max_positions {}",
                    ch.items.len(),
                    self.config.max_positions
                )));
            }
        }
        Ok(())
    }

    fn block(&self, g: &mut Graph, vars: &[Var], b: &BlockLayout, x: Var) -> Result<(Var, Vec<Var>)> {
        let inv_sqrt_dk = 1.0 / (self.config.d_k as f64).sqrt();
        let mut outs = Vec::with_capacity(b.heads.len());
        let mut weights = Vec::with_capacity(b.heads.len());
        for &[wq, wk, wv] in &b.heads {
            let q = g.matmul(x, vars[wq])?;
            let k = g.matmul(x, vars[wk])?;
            let v = g.matmul(x, vars[wv])?;
            let kt = g.transpose(k)?;
            let s = g.matmul(q, kt)?;
            let s = g.scale(s, inv_sqrt_dk)?;
            let a = g.softmax(s, 1)?;
            outs.push(g.matmul(a, v)?);
            weights.push(a);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
        let attn = g.matmul(cat, vars[b.wo])?;
        let x = g.add(x, attn)?;
        let x = g.layer_norm(x, vars[b.ln1.0], vars[b.ln1.1])?;
        let f = g.matmul(x, vars[b.ffn1.0])?;
        let f = g.add_row(f, vars[b.ffn1.1])?;
        let f = g.relu(f)?;
        let f = g.matmul(f, vars[b.ffn2.0])?;
        let f = g.add_row(f, vars[b.ffn2.1])?;
        let x = g.add(x, f)?;
        let x = g.layer_norm(x, vars[b.ln2.0], vars[b.ln2.1])?;
        Ok((x, weights))
    }

    /// `tanh` attention pooling over rows: returns the `1 x d` pooled row
    /// and the `L x 1` weights.
    fn pool(&self, g: &mut Graph, vars: &[Var], h: Var, (w, b): (usize, usize), context: usize) -> Result<(Var, Var)> {
        let u = g.matmul(h, vars[w])?;
        let u = g.add_row(u, vars[b])?;
        let u = g.tanh(u)?;
        let scores = g.matmul(u, vars[context])?;
        let a = g.softmax(scores, 0)?;
        let at = g.transpose(a)?;
        Ok((g.matmul(at, h)?, a))
    }

    /// Records the forward pass on `g`. `vars` are this model's parameters
    /// bound on `g` in [`ParamSet`] order. `deep`, when given, replaces the
    /// page's stored deep vectors with graph nodes (one `L x deep` node per
    /// channel) so gradients can reach the click model. `dropout` enables
    /// train mode.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        page: &PageInput,
        deep: Option<&[Var]>,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<DhanrForward> {
        self.check(page)?;
        if let Some(deep) = deep {
            if deep.len() != page.channels.len() {
                return Err(ModelError::Dimension("one deep node per channel required".into()));
            }
        }
        let m = page.channels.len();

        // Without position embeddings each channel is processed with its rows
        // sorted, so any input order yields bit-identical per-item results.
        let orders: Vec<Vec<usize>> = page
            .channels
            .iter()
            .map(|ch| {
                if self.config.positional || deep.is_some() {
                    (0..ch.items.len()).collect()
                } else {
                    canonical_order(&ch.inputs())
                }
            })
            .collect();

        let mut encoded = Vec::with_capacity(m);
        let mut deep_rows = Vec::with_capacity(m);
        let mut item_self = Vec::with_capacity(m);
        let mut item_level = Vec::with_capacity(m);
        let mut pooled = Vec::with_capacity(m);
        for (i, ch) in page.channels.iter().enumerate() {
            let order = &orders[i];
            let inv = inverse(order);
            let deep_i = match deep {
                Some(d) => d[i],
                None => g.constant(select_rows(&ch.deep, order)),
            };
            let x = if self.dims.item_features == 0 {
                deep_i
            } else {
                let f = g.constant(select_rows(&ch.features, order));
                g.concat(&[f, deep_i], 1)?
            };
            let h = g.matmul(x, vars[self.layout.input.0])?;
            let mut h = g.add_row(h, vars[self.layout.input.1])?;
            if let Some(pos) = self.layout.pos {
                let rows: Vec<usize> = (0..ch.items.len()).collect();
                let p = g.gather_rows(vars[pos], &rows)?;
                h = g.add(h, p)?;
            }
            let mut blocks = Vec::with_capacity(self.layout.item_blocks.len());
            for b in &self.layout.item_blocks {
                let (next, w) = self.block(g, vars, b, h)?;
                h = next;
                blocks.push(w.iter().map(|&a| unpermute_square(g.value(a), &inv)).collect());
            }
            let context = self.layout.item_context[if self.config.per_channel_context { i } else { 0 }];
            let (s, a) = self.pool(g, vars, h, self.layout.item_att, context)?;
            let a = g.value(a);
            item_level.push(inv.iter().map(|&k| a.data()[k]).collect());
            item_self.push(blocks);
            pooled.push(s);
            encoded.push(h);
            deep_rows.push(deep_i);
        }

        let mut hc = if m == 1 { pooled[0] } else { g.concat(&pooled, 0)? };
        let mut channel_self = Vec::with_capacity(self.layout.chan_blocks.len());
        for b in &self.layout.chan_blocks {
            let (next, w) = self.block(g, vars, b, hc)?;
            hc = next;
            channel_self.push(w.iter().map(|&a| g.value(a).clone()).collect());
        }
        let (t, a) = self.pool(g, vars, hc, self.layout.chan_att, self.layout.chan_context)?;
        let channel_level = g.value(a).data().to_vec();

        let mut logits = Vec::with_capacity(m);
        for i in 0..m {
            let l = page.channels[i].items.len();
            let ones = g.constant(Tensor::filled(&[l, 1], 1.0));
            let hc_i = g.gather_rows(hc, &[i])?;
            let hc_b = g.matmul(ones, hc_i)?;
            let t_b = g.matmul(ones, t)?;
            let z = g.concat(&[deep_rows[i], encoded[i], hc_b, t_b], 1)?;
            let z = g.matmul(z, vars[self.layout.fusion1.0])?;
            let z = g.add_row(z, vars[self.layout.fusion1.1])?;
            let mut z = g.relu(z)?;
            if let Some(rng) = dropout.as_deref_mut() {
                z = g.dropout(z, self.config.dropout, rng, true)?;
            }
            let z = g.matmul(z, vars[self.layout.fusion2.0])?;
            let z = g.add_row(z, vars[self.layout.fusion2.1])?;
            let inv = inverse(&orders[i]);
            logits.push(if orders[i].iter().enumerate().all(|(k, &o)| k == o) {
                z
            } else {
                g.gather_rows(z, &inv)?
            });
        }
        Ok(DhanrForward {
            logits,
            attention: AttentionWeights {
                item_self,
                item_level,
                channel_self,
                channel_level,
            },
        })
    }

    /// Eval-mode click probabilities for every item on the page.
    pub fn score_page(&self, page: &PageInput) -> Result<DhanrScores> {
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g);
        let f = self.forward(&mut g, &vars, page, None, None)?;
        let mut scores = Vec::with_capacity(f.logits.len());
        for &l in &f.logits {
            let p = g.sigmoid(l)?;
            scores.push(g.value(p).data().to_vec());
        }
        Ok(DhanrScores {
            scores,
            attention: f.attention,
        })
    }

    /// Orders each channel by descending score and keeps the first
    /// `capacities[i]` items.
    pub fn rerank_page(&self, page: &PageInput, capacities: &[usize]) -> Result<channelpage_core::model::Page> {
        let scores = self.score_page(page)?.scores;
        order_and_truncate(&page.page(), &scores, capacities)
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use channelpage_core::model::ItemIdx;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn small_config() -> DhanrConfig {
        DhanrConfig {
            d_model: 6,
            d_k: 3,
            n_heads: 2,
            n_blocks: 1,
            ffn_hidden: 5,
            attention_dim: 4,
            fusion_hidden: 4,
            dropout: 0.0,
            ..DhanrConfig::default()
        }
    }

    pub(crate) fn random_page(rng: &mut ChaCha8Rng, lens: &[usize], dims: &DhanrDims) -> PageInput {
        let mut next = 0;
        PageInput {
            user: vec![],
            channels: lens
                .iter()
                .map(|&l| {
                    let items = (0..l)
                        .map(|_| {
                            next += 1;
                            ItemIdx(next)
                        })
                        .collect();
                    ChannelInput {
                        items,
                        features: Tensor::from_fn(l, dims.item_features, |_, _| rng.random_range(-1.0..1.0)),
                        deep: Tensor::from_fn(l, dims.deep, |_, _| rng.random_range(-1.0..1.0)),
                    }
                })
                .collect(),
        }
    }

    fn setup(config: DhanrConfig) -> (DhanrModel, ChaCha8Rng) {
        let dims = DhanrDims {
            item_features: 3,
            deep: 4,
            n_channels: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (DhanrModel::new(config, dims, &mut rng).unwrap(), rng)
    }

    #[test]
    fn parameter_shapes_chain() {
        let (m, _) = setup(small_config());
        let wq = m.params().get(m.params().index_of("item_enc0.h1.wq").unwrap());
        assert_eq!(wq.shape(), [6, 3]);
        let wo = m.params().get(m.params().index_of("chan_enc0.wo").unwrap());
        assert_eq!(wo.shape(), [6, 6]);
        let f = m.params().get(m.params().index_of("fusion.w1").unwrap());
        assert_eq!(f.shape(), [4 + 18, 4]);
    }

    #[test]
    fn singleton_page_has_unit_weights() {
        let (m, mut rng) = setup(small_config());
        let page = random_page(&mut rng, &[1], m.dims());
        let out = m.score_page(&page).unwrap();
        assert_eq!(out.scores.len(), 1);
        assert!(out.scores[0][0].is_finite());
        assert_eq!(out.attention.item_self[0][0][0].data(), [1.0]);
        assert_eq!(out.attention.item_level[0], [1.0]);
        assert_eq!(out.attention.channel_level, [1.0]);
    }

    #[test]
    fn zero_fusion_output_gives_half() {
        let (mut m, mut rng) = setup(small_config());
        for name in ["fusion.w2", "fusion.b2"] {
            let i = m.params().index_of(name).unwrap();
            let shape = m.params().get(i).shape().to_vec();
            *m.params_mut().get_mut(i) = Tensor::zeros(&shape);
        }
        let page = random_page(&mut rng, &[3, 2], m.dims());
        for row in m.score_page(&page).unwrap().scores {
            assert!(row.iter().all(|&p| p == 0.5));
        }
    }

    #[test]
    fn identical_items_get_uniform_weights() {
        let (m, _) = setup(small_config());
        let row_f = Tensor::from_fn(3, 3, |_, j| j as f64 * 0.1);
        let row_d = Tensor::from_fn(3, 4, |_, j| 0.5 - j as f64 * 0.2);
        let page = PageInput {
            user: vec![],
            channels: vec![ChannelInput {
                items: vec![ItemIdx(0), ItemIdx(1), ItemIdx(2)],
                features: row_f,
                deep: row_d,
            }],
        };
        let out = m.score_page(&page).unwrap();
        for &w in &out.attention.item_level[0] {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(out.scores[0][0], out.scores[0][1]);
        assert_eq!(out.scores[0][1], out.scores[0][2]);
    }

    #[test]
    fn rejects_malformed_pages() {
        let (m, mut rng) = setup(small_config());
        let mut page = random_page(&mut rng, &[2, 2], m.dims());
        page.channels[1].items.clear();
        assert!(m.score_page(&page).is_err());
        let mut page = random_page(&mut rng, &[2], m.dims());
        page.channels[0].deep = Tensor::zeros(&[2, 3]);
        assert!(m.score_page(&page).is_err());
        assert!(m.score_page(&PageInput { user: vec![], channels: vec![] }).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (m, _) = setup(DhanrConfig {
            positional: true,
            per_channel_context: true,
            ..small_config()
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rerank.ckpt");
        m.save(&path).unwrap();
        assert_eq!(DhanrModel::load(&path).unwrap(), m);
    }
}
