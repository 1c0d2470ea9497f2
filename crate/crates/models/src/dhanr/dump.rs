use std::collections::BTreeMap;
use std::fmt::Write as _;

use channelpage_core::model::{Catalog, CategoryId};

use super::{AttentionWeights, PageInput};

pub const ATTENTION_HEADER: &str = "query_category,key_category,mean_weight,count";

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryPairWeight {
    pub query: String,
    pub key: String,
    pub mean_weight: f64,
    pub count: usize,
}

/// Mean item-to-item self-attention weight for every (query category, key
/// category) pair, taken from the last item-encoder block and averaged over
/// heads. Pairs are sorted by category name.
pub fn attention_by_category(catalog: &Catalog, pages: &[(PageInput, AttentionWeights)]) -> Vec<CategoryPairWeight> {
    let mut acc: BTreeMap<(CategoryId, CategoryId), (f64, usize)> = BTreeMap::new();
    for (page, att) in pages {
        for (ch, blocks) in page.channels.iter().zip(&att.item_self) {
            let Some(heads) = blocks.last() else { continue };
            let cats: Vec<CategoryId> = ch.items.iter().map(|&it| catalog.item(it).category).collect();
            for (a, &ca) in cats.iter().enumerate() {
                for (b, &cb) in cats.iter().enumerate() {
                    let w = heads.iter().map(|h| h.get(a, b)).sum::<f64>() / heads.len() as f64;
                    let e = acc.entry((ca, cb)).or_default();
                    e.0 += w;
                    e.1 += 1;
                }
            }
        }
    }
    let mut rows: Vec<CategoryPairWeight> = acc
        .into_iter()
        .map(|((q, k), (sum, n))| CategoryPairWeight {
            query: catalog.category_name(q).to_string(),
            key: catalog.category_name(k).to_string(),
            mean_weight: sum / n as f64,
            count: n,
        })
        .collect();
    rows.sort_by(|a, b| (&a.query, &a.key).cmp(&(&b.query, &b.key)));
    rows
}

pub fn category_attention_csv(rows: &[CategoryPairWeight]) -> String {
    let mut out = format!("{ATTENTION_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.query, r.key, r.mean_weight, r.count);
    }
    out
}
