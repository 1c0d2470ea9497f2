use serde::{Deserialize, Serialize};

use crate::{Result, SimError};

/// One item category and the shape of its repetition tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    /// Page-wide count at which the category's click-through peaks.
    pub peak: u32,
    pub brands: usize,
    /// Relative share of the catalog.
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl CategorySpec {
    pub fn new(name: &str, peak: u32, brands: usize) -> Self {
        Self {
            name: name.to_string(),
            peak,
            brands,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub n_items: usize,
    pub n_users: usize,
    pub capacities: Vec<usize>,
    pub categories: Vec<CategorySpec>,
    pub item_feature_dim: usize,
    pub user_feature_dim: usize,
    /// Share of users in each of the three preference clusters.
    pub cluster_mix: [f64; 3],
    /// `cluster_channel[g][i]`: click multiplier of cluster `g` in channel `i`.
    pub cluster_channel: Vec<Vec<f64>>,
    /// Log-scale spread of the per (channel, category) multipliers.
    pub channel_category_spread: f64,
    /// Logit of an average item for an average user.
    pub base_logit: f64,
    /// Logit boost of each cluster's favourite category.
    pub favourite_boost: f64,
    /// Spread of the remaining cluster-category logits.
    pub category_affinity_spread: f64,
    /// Weight of the user-taste / item-feature inner product.
    pub taste_weight: f64,
    pub item_quality_spread: f64,
    pub feature_noise: f64,
    /// Decay rate of the repetition factor past a category's tolerance.
    pub repetition_decay: f64,
    /// Extra tolerance a cluster has for its favourite category.
    pub favourite_tolerance: u32,
    /// Strength of the same-channel sibling interaction; zero disables it.
    pub interaction_strength: f64,
    /// Interaction between two same-category siblings.
    pub same_category_interaction: f64,
    pub max_probability: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_items: 600,
            n_users: 3000,
            capacities: vec![3, 4, 3],
            categories: vec![
                CategorySpec::new("phone", 2, 5),
                CategorySpec::new("clothes", 3, 6),
                CategorySpec::new("shoes", 2, 5),
                CategorySpec::new("books", 3, 6),
                CategorySpec::new("beauty", 2, 5),
                CategorySpec::new("food", 3, 6),
            ],
            item_feature_dim: 8,
            user_feature_dim: 6,
            cluster_mix: [0.3, 0.35, 0.35],
            cluster_channel: vec![vec![1.2, 0.9, 0.85], vec![0.85, 1.2, 0.9], vec![0.9, 0.85, 1.2]],
            channel_category_spread: 0.1,
            base_logit: -2.6,
            favourite_boost: 2.5,
            category_affinity_spread: 0.5,
            taste_weight: 1.0,
            item_quality_spread: 0.4,
            feature_noise: 0.5,
            repetition_decay: 0.8,
            favourite_tolerance: 3,
            interaction_strength: 1.5,
            same_category_interaction: 0.0,
            max_probability: 0.95,
        }
    }
}

fn bad(msg: impl Into<String>) -> SimError {
    SimError::Config(msg.into())
}

impl SimConfig {
    pub fn channels(&self) -> usize {
        self.capacities.len()
    }

    pub fn page_size(&self) -> usize {
        self.capacities.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacities.is_empty() || self.capacities.contains(&0) {
            return Err(bad("capacities must be non-empty and positive"));
        }
        if self.n_items < self.page_size() {
            return Err(bad(format!("{} items cannot fill a page of {}", self.n_items, self.page_size())));
        }
        if self.n_users == 0 {
            return Err(bad("n_users must be positive"));
        }
        if self.categories.is_empty() {
            return Err(bad("at least one category required"));
        }
        let mut names: Vec<&str> = self.categories.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(bad("category names must be unique"));
        }
        for c in &self.categories {
            if c.peak == 0 || c.brands == 0 || !(c.weight > 0.0) {
                return Err(bad(format!("category {} needs positive peak, brands and weight", c.name)));
            }
        }
        if self.item_feature_dim == 0 || self.user_feature_dim == 0 {
            return Err(bad("feature dimensions must be positive"));
        }
        let mix_sum: f64 = self.cluster_mix.iter().sum();
        if self.cluster_mix.iter().any(|&w| !(w >= 0.0)) || (mix_sum - 1.0).abs() > 1e-9 {
            return Err(bad("cluster_mix must be non-negative and sum to 1"));
        }
        if self.cluster_channel.len() != 3 || self.cluster_channel.iter().any(|r| r.len() != self.channels()) {
            return Err(bad(format!("cluster_channel must be 3 x {}", self.channels())));
        }
        if self.cluster_channel.iter().flatten().any(|&m| !(m > 0.0)) {
            return Err(bad("cluster_channel multipliers must be positive"));
        }
        let non_negative = [
            ("channel_category_spread", self.channel_category_spread),
            ("category_affinity_spread", self.category_affinity_spread),
            ("item_quality_spread", self.item_quality_spread),
            ("feature_noise", self.feature_noise),
            ("repetition_decay", self.repetition_decay),
            ("interaction_strength", self.interaction_strength),
        ];
        if let Some((name, _)) = non_negative.iter().find(|(_, v)| !(*v >= 0.0)) {
            return Err(bad(format!("{name} must be non-negative")));
        }
        if !(self.max_probability > 0.0 && self.max_probability < 1.0) {
            return Err(bad("max_probability must lie in (0, 1)"));
        }
        Ok(())
    }
}
