//! Domain types shared across the engine.
//!
//! Identifiers are opaque strings on disk and dense indices in memory; the
//! [`Catalog`] owns the interning maps for items, categories and brands.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemIdx(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BrandId(pub u32);

impl ItemIdx {
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

/// String <-> dense index map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub category: CategoryId,
    pub brand: BrandId,
    pub features: Vec<f64>,
}

/// On-disk item record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub category_id: String,
    pub brand_id: String,
    pub features: Vec<f64>,
}

/// Immutable item catalog with its interning maps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    items: Vec<Item>,
    by_id: HashMap<String, ItemIdx>,
    categories: Interner,
    brands: Interner,
    feature_dim: usize,
}

impl Catalog {
    pub fn from_records(records: impl IntoIterator<Item = ItemRecord>) -> Result<Self> {
        let mut cat = Catalog::default();
        for (n, r) in records.into_iter().enumerate() {
            if n == 0 {
                cat.feature_dim = r.features.len();
            } else if r.features.len() != cat.feature_dim {
                return Err(Error::Data(format!(
                    "item {} has {} features, expected {}",
                    r.item_id,
                    r.features.len(),
                    cat.feature_dim
                )));
            }
            if cat.by_id.contains_key(&r.item_id) {
                return Err(Error::Data(format!("duplicate item_id {}", r.item_id)));
            }
            let idx = ItemIdx(cat.items.len() as u32);
            let category = CategoryId(cat.categories.intern(&r.category_id));
            let brand = BrandId(cat.brands.intern(&r.brand_id));
            cat.by_id.insert(r.item_id.clone(), idx);
            cat.items.push(Item {
                id: r.item_id,
                category,
                brand,
                features: r.features,
            });
        }
        Ok(cat)
    }

    pub fn to_records(&self) -> Vec<ItemRecord> {
        self.items
            .iter()
            .map(|it| ItemRecord {
                item_id: it.id.clone(),
                category_id: self.categories.name(it.category.0).to_string(),
                brand_id: self.brands.name(it.brand.0).to_string(),
                features: it.features.clone(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, idx: ItemIdx) -> &Item {
        &self.items[idx.get()]
    }

    pub fn try_item(&self, idx: ItemIdx) -> Option<&Item> {
        self.items.get(idx.get())
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn lookup(&self, id: &str) -> Option<ItemIdx> {
        self.by_id.get(id).copied()
    }

    pub fn categories(&self) -> &Interner {
        &self.categories
    }

    pub fn brands(&self) -> &Interner {
        &self.brands
    }

    pub fn category_name(&self, c: CategoryId) -> &str {
        self.categories.name(c.0)
    }

    pub fn category_id(&self, name: &str) -> Option<CategoryId> {
        self.categories.get(name).map(CategoryId)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// All item indices, in catalog order.
    pub fn indices(&self) -> impl Iterator<Item = ItemIdx> {
        (0..self.items.len() as u32).map(ItemIdx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRequest {
    pub user_id: String,
    pub user_features: Vec<f64>,
    /// Simulator ground truth; never a model input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_hint: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub channel_id: usize,
    pub capacity: usize,
    pub features: Vec<f64>,
}

/// Checks the channel list invariants: ids `0..M` in order, capacities ≥ 1,
/// one feature dimension.
pub fn validate_channels(channels: &[Channel]) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::Data("no channels".into()));
    }
    let dim = channels[0].features.len();
    for (i, ch) in channels.iter().enumerate() {
        if ch.channel_id != i {
            return Err(Error::Data(format!("channel ids must be 0..M in order, found {} at {i}", ch.channel_id)));
        }
        if ch.capacity == 0 {
            return Err(Error::Data(format!("channel {i} has zero capacity")));
        }
        if ch.features.len() != dim {
            return Err(Error::Data(format!("channel {i} feature dimension differs")));
        }
    }
    Ok(())
}

/// A homepage: ordered item lists, one per channel, indexed by channel id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Page {
    pub channels: Vec<Vec<ItemIdx>>,
}

impl Page {
    pub fn new(channels: Vec<Vec<ItemIdx>>) -> Self {
        Self { channels }
    }

    pub fn num_items(&self) -> usize {
        self.channels.iter().map(Vec::len).sum()
    }

    /// Items in channel order, then position order.
    pub fn iter_items(&self) -> impl Iterator<Item = (usize, usize, ItemIdx)> + '_ {
        self.channels
            .iter()
            .enumerate()
            .flat_map(|(c, items)| items.iter().enumerate().map(move |(p, &it)| (c, p, it)))
    }

    /// First duplicated item, with the two channels it sits in.
    pub fn find_duplicate(&self) -> Option<(ItemIdx, usize, usize)> {
        let mut seen: HashMap<ItemIdx, usize> = HashMap::new();
        for (c, _, it) in self.iter_items() {
            if let Some(&first) = seen.get(&it) {
                return Some((it, first, c));
            }
            seen.insert(it, c);
        }
        None
    }
}

/// Set of items shown on a page. Fails on pages that repeat an item.
pub fn page_item_set(page: &Page) -> Result<BTreeSet<ItemIdx>> {
    if let Some((it, first, second)) = page.find_duplicate() {
        return Err(Error::MalformedPage {
            item: format!("#{}", it.0),
            first,
            second,
        });
    }
    Ok(page.iter_items().map(|(_, _, it)| it).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickRecord {
    pub request: UserRequest,
    pub page: Page,
    /// Clicked (channel, position) pairs, sorted and unique.
    pub clicks: BTreeSet<(usize, usize)>,
}

impl ClickRecord {
    pub fn is_clicked(&self, channel: usize, position: usize) -> bool {
        self.clicks.contains(&(channel, position))
    }

    /// Items that were clicked.
    pub fn clicked_items(&self) -> BTreeSet<ItemIdx> {
        self.clicks
            .iter()
            .filter_map(|&(c, p)| self.page.channels.get(c).and_then(|ch| ch.get(p)).copied())
            .collect()
    }

    /// Per-channel click indicators in display order.
    pub fn click_indicators(&self) -> Vec<Vec<bool>> {
        self.page
            .channels
            .iter()
            .enumerate()
            .map(|(c, items)| (0..items.len()).map(|p| self.is_clicked(c, p)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub catalog: Catalog,
    pub channels: Vec<Channel>,
    pub records: Vec<ClickRecord>,
}

/// One invariant violation found by validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DanglingItem { record: usize, item: String },
    DuplicateItem { record: usize, item: String, first_channel: usize, second_channel: usize },
    ClickOutOfRange { record: usize, channel: usize, position: usize },
    UnknownChannel { record: usize, channel: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every invariant violation in `dataset`. Violations are data, not
/// errors: an empty report means the dataset is well-formed.
pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n_channels = dataset.channels.len();
    for (r, rec) in dataset.records.iter().enumerate() {
        let mut seen: HashMap<ItemIdx, usize> = HashMap::new();
        for (c, items) in rec.page.channels.iter().enumerate() {
            if c >= n_channels {
                report.violations.push(Violation::UnknownChannel { record: r, channel: c });
            }
            for &it in items {
                if dataset.catalog.try_item(it).is_none() {
                    report.violations.push(Violation::DanglingItem {
                        record: r,
                        item: format!("#{}", it.0),
                    });
                    continue;
                }
                match seen.get(&it) {
                    Some(&first) => report.violations.push(Violation::DuplicateItem {
                        record: r,
                        item: dataset.catalog.item(it).id.clone(),
                        first_channel: first,
                        second_channel: c,
                    }),
                    None => {
                        seen.insert(it, c);
                    }
                }
            }
        }
        for &(c, p) in &rec.clicks {
            let ok = rec.page.channels.get(c).is_some_and(|ch| p < ch.len());
            if !ok {
                report.violations.push(Violation::ClickOutOfRange {
                    record: r,
                    channel: c,
                    position: p,
                });
            }
        }
    }
    report
}
