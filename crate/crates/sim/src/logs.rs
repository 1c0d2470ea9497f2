use channelpage_core::metrics::ClickModel;
use channelpage_core::model::{ClickRecord, Dataset, ItemIdx, Page, UserRequest};
use channelpage_core::rng::SeedStream;
use rand::seq::index;
use rand::Rng;

use crate::{Result, SimError, World};

/// Logging policy that fills every channel with distinct items drawn
/// uniformly from the catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomPagePolicy {
    pub n_items: usize,
    pub capacities: Vec<usize>,
}

impl RandomPagePolicy {
    pub fn new(n_items: usize, capacities: Vec<usize>) -> Result<Self> {
        let total: usize = capacities.iter().sum();
        if total > n_items {
            return Err(SimError::Config(format!("{n_items} items cannot fill a page of {total}")));
        }
        Ok(Self { n_items, capacities })
    }

    pub fn for_world(world: &World) -> Self {
        Self {
            n_items: world.catalog.len(),
            capacities: world.config.capacities.clone(),
        }
    }

    pub fn page<R: Rng + ?Sized>(&self, rng: &mut R) -> Page {
        let mut items = sample_candidates(self.n_items, self.capacities.iter().sum(), rng).into_iter();
        Page::new(self.capacities.iter().map(|&v| items.by_ref().take(v).collect()).collect())
    }
}

/// `n` distinct catalog indices in random order.
///
/// # Panics
/// If `n > n_items`.
pub fn sample_candidates<R: Rng + ?Sized>(n_items: usize, n: usize, rng: &mut R) -> Vec<ItemIdx> {
    index::sample(rng, n_items, n).into_iter().map(|j| ItemIdx(j as u32)).collect()
}

/// A uniformly drawn member of `users`.
pub fn sample_request<'a, R: Rng + ?Sized>(users: &'a [UserRequest], rng: &mut R) -> &'a UserRequest {
    &users[rng.random_range(0..users.len())]
}

/// Shows `n` random pages to random users and records the sampled clicks.
/// Request `r` draws from its own stream, so prefixes of a longer log equal
/// shorter logs with the same seed.
pub fn simulate_logs<M: ClickModel>(
    model: &M,
    users: &[UserRequest],
    policy: &RandomPagePolicy,
    n: usize,
    seed: u64,
) -> Result<Vec<ClickRecord>> {
    if users.is_empty() {
        return Err(SimError::Config("no users to simulate".into()));
    }
    let stream = SeedStream::new(seed).derive("logs");
    Ok((0..n)
        .map(|r| {
            let mut rng = stream.derive_index("request", r as u64).rng();
            let request = sample_request(users, &mut rng).clone();
            let page = policy.page(&mut rng);
            let clicks = model.sample_clicks(&request, &page, &mut rng);
            ClickRecord { request, page, clicks }
        })
        .collect())
}

impl World {
    /// Click logs of `n` random pages under the world's own click model.
    pub fn logs(&self, n: usize, seed: u64) -> Result<Vec<ClickRecord>> {
        simulate_logs(&self.oracle, &self.users, &RandomPagePolicy::for_world(self), n, seed)
    }

    pub fn dataset(&self, records: Vec<ClickRecord>) -> Dataset {
        Dataset {
            catalog: self.catalog.clone(),
            channels: self.channels.clone(),
            records,
        }
    }
}
