use std::collections::{BTreeSet, HashMap};

use channelpage_core::metrics::ClickModel;
use channelpage_core::model::{ItemIdx, Page, UserRequest};
use channelpage_core::rng::SeedStream;
use rand::Rng;

use crate::world::Latent;
use crate::{Result, SimConfig, SimError};

/// Ground-truth click model of a simulated world.
///
/// The click probability of item `j` shown to user `u` in channel `i` is
/// the product of
/// - `sigmoid(base + affinity[g][c] + w * taste_u . x_j / sqrt(d) + q_j)`,
/// - the cluster-channel multiplier and the channel-category multiplier,
/// - the repetition factor of `c`, which is 1 up to the tolerance and decays
///   exponentially past it, evaluated at the page-wide count of `c`,
/// - `exp(s * mean interaction with the other items of channel i)`,
///
/// clamped to `(0, max_probability]`. The tolerance is the category's peak,
/// raised for the cluster whose favourite category it is.
#[derive(Debug, Clone)]
pub struct ClickOracle {
    config: SimConfig,
    latent: Latent,
    user_index: HashMap<String, usize>,
}

impl ClickOracle {
    pub fn new(config: SimConfig, latent: Latent, users: &[UserRequest]) -> Result<Self> {
        if users.len() != latent.user_cluster.len() {
            return Err(SimError::Config("user list does not match latent parameters".into()));
        }
        let user_index = users.iter().enumerate().map(|(k, u)| (u.user_id.clone(), k)).collect();
        Ok(Self {
            config,
            latent,
            user_index,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn latent(&self) -> &Latent {
        &self.latent
    }

    pub fn cluster_of(&self, request: &UserRequest) -> Result<u8> {
        Ok(self.latent.user_cluster[self.user(request)?])
    }

    fn user(&self, request: &UserRequest) -> Result<usize> {
        self.user_index
            .get(&request.user_id)
            .copied()
            .ok_or_else(|| SimError::UnknownUser(request.user_id.clone()))
    }

    /// Page-wide count at which category `category` stops being tolerated by
    /// users of `cluster`.
    pub fn tolerance(&self, category: usize, cluster: u8) -> u32 {
        let peak = self.config.categories[category].peak;
        if self.latent.favourite[usize::from(cluster)] == category {
            peak + self.config.favourite_tolerance
        } else {
            peak
        }
    }

    pub fn repetition_factor(&self, category: usize, cluster: u8, count: u32) -> f64 {
        let tol = self.tolerance(category, cluster);
        if count <= tol {
            1.0
        } else {
            (-self.config.repetition_decay * f64::from(count - tol)).exp()
        }
    }

    /// Click probability before page context: relevance times the channel
    /// multipliers.
    pub fn base_probability(&self, request: &UserRequest, channel: usize, item: ItemIdx) -> Result<f64> {
        let u = self.user(request)?;
        self.check_slot(channel, item)?;
        Ok(self.base(u, channel, item.get()))
    }

    fn check_slot(&self, channel: usize, item: ItemIdx) -> Result<()> {
        if channel >= self.config.channels() {
            return Err(SimError::Position(format!("channel {channel} out of range")));
        }
        if item.get() >= self.latent.item_category.len() {
            return Err(SimError::Position(format!("item #{} out of range", item.0)));
        }
        Ok(())
    }

    fn base(&self, u: usize, channel: usize, j: usize) -> f64 {
        let lat = &self.latent;
        let g = usize::from(lat.user_cluster[u]);
        let c = lat.item_category[j];
        let taste: f64 = lat.user_taste[u].iter().zip(&lat.item_vector[j]).map(|(a, b)| a * b).sum();
        let logit = self.config.base_logit
            + lat.category_affinity[g][c]
            + self.config.taste_weight * taste / (self.config.item_feature_dim as f64).sqrt()
            + lat.item_quality[j];
        let relevance = 1.0 / (1.0 + (-logit).exp());
        relevance * self.config.cluster_channel[g][channel] * lat.channel_category[channel][c]
    }

    /// Click probabilities of every slot of `page`, shaped like the page.
    pub fn try_click_probabilities(&self, request: &UserRequest, page: &Page) -> Result<Vec<Vec<f64>>> {
        let u = self.user(request)?;
        if page.channels.len() != self.config.channels() {
            return Err(SimError::Position(format!(
                "page has {} channels, world has {}",
                page.channels.len(),
                self.config.channels()
            )));
        }
        if let Some((it, a, b)) = page.find_duplicate() {
            return Err(SimError::Position(format!("item #{} shown in channels {a} and {b}", it.0)));
        }
        let lat = &self.latent;
        let cluster = lat.user_cluster[u];
        let mut counts = vec![0u32; self.config.categories.len()];
        for (c, _, it) in page.iter_items() {
            self.check_slot(c, it)?;
            counts[lat.item_category[it.get()]] += 1;
        }
        let s = self.config.interaction_strength;
        Ok(page
            .channels
            .iter()
            .enumerate()
            .map(|(i, items)| {
                items
                    .iter()
                    .enumerate()
                    .map(|(p, &it)| {
                        let j = it.get();
                        let cat = lat.item_category[j];
                        let mut q = self.base(u, i, j) * self.repetition_factor(cat, cluster, counts[cat]);
                        if s > 0.0 && items.len() > 1 {
                            let mean = items
                                .iter()
                                .enumerate()
                                .filter(|&(k, _)| k != p)
                                .map(|(_, &other)| lat.interaction[cat][lat.item_category[other.get()]])
                                .sum::<f64>()
                                / (items.len() - 1) as f64;
                            q *= (s * mean).exp();
                        }
                        q.clamp(f64::MIN_POSITIVE, self.config.max_probability)
                    })
                    .collect()
            })
            .collect())
    }

    /// Probability that the item at `(channel, position)` is clicked.
    pub fn click_probability(&self, request: &UserRequest, page: &Page, channel: usize, position: usize) -> Result<f64> {
        let probs = self.try_click_probabilities(request, page)?;
        probs
            .get(channel)
            .and_then(|row| row.get(position))
            .copied()
            .ok_or_else(|| SimError::Position(format!("no slot at channel {channel}, position {position}")))
    }
}

impl ClickModel for ClickOracle {
    /// # Panics
    /// On users outside the world's population or malformed pages; use
    /// [`ClickOracle::try_click_probabilities`] to handle those.
    fn click_probabilities(&self, request: &UserRequest, page: &Page) -> Vec<Vec<f64>> {
        self.try_click_probabilities(request, page)
            .unwrap_or_else(|e| panic!("click oracle: {e}"))
    }

    /// Draws one seed from `rng` and derives each item's uniform from it and
    /// the item index. Two pages shown for the same draw then share the
    /// randomness of every item they have in common, which makes paired
    /// comparisons between policies much tighter.
    fn sample_clicks<R: Rng + ?Sized>(&self, request: &UserRequest, page: &Page, rng: &mut R) -> BTreeSet<(usize, usize)> {
        let probs = self.click_probabilities(request, page);
        let draw = SeedStream::new(rng.random::<u64>());
        page.iter_items()
            .filter(|&(c, p, it)| draw.derive_index("item", u64::from(it.0)).rng().random::<f64>() < probs[c][p])
            .map(|(c, p, _)| (c, p))
            .collect()
    }
}
