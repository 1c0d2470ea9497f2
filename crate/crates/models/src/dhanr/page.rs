use channelpage_core::model::{ItemIdx, Page};
use channelpage_tensor::Tensor;

use crate::ctr::{CtrContext, CtrModel, Query};
use crate::{ModelError, Result};

/// Re-ranker input for one channel: the allocated items with their catalog
/// features and click-model deep vectors, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelInput {
    pub items: Vec<ItemIdx>,
    pub features: Tensor,
    pub deep: Tensor,
}

impl ChannelInput {
    /// Features and deep vector side by side, `L x (f + deep)`.
    pub fn inputs(&self) -> Tensor {
        let (f, d) = (self.features.cols(), self.deep.cols());
        Tensor::from_fn(self.items.len(), f + d, |r, c| {
            if c < f {
                self.features.get(r, c)
            } else {
                self.deep.get(r, c - f)
            }
        })
    }
}

/// Re-ranker input for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct PageInput {
    pub user: Vec<f64>,
    pub channels: Vec<ChannelInput>,
}

pub(crate) fn select_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    Tensor::from_fn(rows.len(), t.cols(), |r, c| t.get(rows[r], c))
}

impl PageInput {
    /// Looks up item features and computes deep vectors for every item of
    /// `page`, scoring each item in the channel it sits in.
    pub fn build(ctr: &CtrModel, ctx: &CtrContext<'_>, user: &[f64], page: &Page) -> Result<Self> {
        if page.channels.is_empty() {
            return Err(ModelError::Dimension("page has no channels".into()));
        }
        let queries: Vec<Query<'_>> = page
            .iter_items()
            .map(|(channel, _, item)| Query { user, channel, item })
            .collect();
        let deep = if queries.is_empty() {
            Tensor::zeros(&[0, ctr.deep_dim()])
        } else {
            ctr.deep_vectors(ctx, &queries)?
        };
        let dim = ctx.catalog.feature_dim();
        let mut offset = 0;
        let channels = page
            .channels
            .iter()
            .map(|items| {
                let rows: Vec<usize> = (offset..offset + items.len()).collect();
                offset += items.len();
                ChannelInput {
                    items: items.clone(),
                    features: Tensor::from_fn(items.len(), dim, |r, c| ctx.catalog.item(items[r]).features[c]),
                    deep: select_rows(&deep, &rows),
                }
            })
            .collect();
        Ok(Self {
            user: user.to_vec(),
            channels,
        })
    }

    pub fn page(&self) -> Page {
        Page::new(self.channels.iter().map(|c| c.items.clone()).collect())
    }
}

/// Sorts each channel of `page` by descending score, keeping the original
/// order among equal scores, and truncates channel `i` to `capacities[i]`.
pub fn order_and_truncate(page: &Page, scores: &[Vec<f64>], capacities: &[usize]) -> Result<Page> {
    if scores.len() != page.channels.len() || capacities.len() != page.channels.len() {
        return Err(ModelError::Dimension(format!(
            "page has {} channels, got {} score rows and {} capacities",
            page.channels.len(),
            scores.len(),
            capacities.len()
        )));
    }
    let channels = page
        .channels
        .iter()
        .zip(scores)
        .zip(capacities)
        .enumerate()
        .map(|(i, ((items, s), &cap))| {
            if s.len() != items.len() {
                return Err(ModelError::Dimension(format!("channel {i}: {} scores for {} items", s.len(), items.len())));
            }
            if items.len() < cap {
                return Err(ModelError::Dimension(format!(
                    "channel {i} holds {} items, fewer than its capacity {cap}",
                    items.len()
                )));
            }
            let mut order: Vec<usize> = (0..items.len()).collect();
            order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
            Ok(order.into_iter().take(cap).map(|k| items[k]).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Page::new(channels))
}
