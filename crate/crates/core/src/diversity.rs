//! Category tolerance thresholds, item similarity and intra-list distance.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{Catalog, CategoryId, ClickRecord, Item};
use crate::{Error, Result};

pub const DEFAULT_MIN_SUPPORT: u64 = 50;

/// Click rate of a category as a function of how many of its items a page
/// shows, and the count that maximizes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    /// Best supported count; `None` when no count reaches `min_support`.
    #[serde(rename = "T")]
    pub threshold: Option<u32>,
    pub ctr_by_k: BTreeMap<u32, f64>,
    pub support_by_k: BTreeMap<u32, u64>,
}

impl ThresholdEstimate {
    fn from_counts(counts: &BTreeMap<u32, (u64, u64)>, min_support: u64) -> Self {
        let ctr_by_k: BTreeMap<u32, f64> = counts.iter().map(|(&k, &(n, c))| (k, c as f64 / n as f64)).collect();
        let support_by_k = counts.iter().map(|(&k, &(n, _))| (k, n)).collect();
        // Ascending k with a strict comparison keeps the smaller k on ties.
        let mut threshold = None;
        let mut best = f64::NEG_INFINITY;
        for (&k, &(n, _)) in counts {
            if n >= min_support && ctr_by_k[&k] > best {
                best = ctr_by_k[&k];
                threshold = Some(k);
            }
        }
        Self {
            threshold,
            ctr_by_k,
            support_by_k,
        }
    }
}

/// For every page and every category it shows `k >= 1` items of, records one
/// exposure at `k` and whether any of those items was clicked.
pub fn estimate_category_thresholds(
    catalog: &Catalog,
    logs: &[ClickRecord],
    min_support: u64,
) -> Result<BTreeMap<CategoryId, ThresholdEstimate>> {
    if logs.is_empty() {
        return Err(Error::Data("threshold estimation needs at least one log record".into()));
    }
    // category -> k -> (exposures, clicked exposures)
    let mut counts: BTreeMap<CategoryId, BTreeMap<u32, (u64, u64)>> = BTreeMap::new();
    for rec in logs {
        let mut shown: BTreeMap<CategoryId, u32> = BTreeMap::new();
        let mut clicked: BTreeSet<CategoryId> = BTreeSet::new();
        for (c, p, idx) in rec.page.iter_items() {
            let item = catalog
                .try_item(idx)
                .ok_or_else(|| Error::Data(format!("item index {} outside catalog", idx.0)))?;
            *shown.entry(item.category).or_default() += 1;
            if rec.is_clicked(c, p) {
                clicked.insert(item.category);
            }
        }
        for (cat, k) in shown {
            let e = counts.entry(cat).or_default().entry(k).or_default();
            e.0 += 1;
            e.1 += u64::from(clicked.contains(&cat));
        }
    }
    Ok(counts
        .iter()
        .map(|(&cat, by_k)| (cat, ThresholdEstimate::from_counts(by_k, min_support)))
        .collect())
}

/// Estimates keyed by category name, the on-disk form.
pub fn thresholds_by_name(
    catalog: &Catalog,
    estimates: &BTreeMap<CategoryId, ThresholdEstimate>,
) -> BTreeMap<String, ThresholdEstimate> {
    estimates
        .iter()
        .map(|(&c, e)| (catalog.category_name(c).to_string(), e.clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    /// Attribute set `{category, brand}`.
    #[default]
    CategoryBrand,
    CategoryOnly,
}

/// Jaccard index of the two items' attribute sets.
pub fn jaccard_similarity(a: &Item, b: &Item, mode: SimilarityMode) -> f64 {
    let same_category = a.category == b.category;
    match mode {
        SimilarityMode::CategoryOnly => f64::from(u8::from(same_category)),
        SimilarityMode::CategoryBrand => {
            let shared = u8::from(same_category) + u8::from(a.brand == b.brand);
            f64::from(shared) / f64::from(4 - shared)
        }
    }
}

/// One minus the mean of `similarity(i, j)` over unordered pairs of `n`
/// elements; `None` below two elements.
pub fn mean_pairwise_distance(n: usize, similarity: impl Fn(usize, usize) -> f64) -> Option<f64> {
    if n < 2 {
        return None;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += similarity(i, j);
        }
    }
    Some(1.0 - total / (n * (n - 1) / 2) as f64)
}

/// Intra-list average distance of one page.
pub fn ilad(items: &[&Item], mode: SimilarityMode) -> Option<f64> {
    mean_pairwise_distance(items.len(), |i, j| jaccard_similarity(items[i], items[j], mode))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IladSummary {
    /// Unweighted mean over included pages; `None` if none qualified.
    pub mean: Option<f64>,
    pub included: usize,
    /// Positions of pages skipped for having fewer than two items.
    pub excluded: Vec<usize>,
}

pub fn dataset_ilad<'a, I>(pages: I, mode: SimilarityMode) -> IladSummary
where
    I: IntoIterator<Item = Vec<&'a Item>>,
{
    let mut sum = 0.0;
    let mut included = 0;
    let mut excluded = Vec::new();
    for (n, page) in pages.into_iter().enumerate() {
        match ilad(&page, mode) {
            Some(v) => {
                sum += v;
                included += 1;
            }
            None => excluded.push(n),
        }
    }
    IladSummary {
        mean: (included > 0).then(|| sum / included as f64),
        included,
        excluded,
    }
}
