use channelpage_core::model::{Catalog, Channel, ItemRecord, UserRequest};
use channelpage_core::rng::SeedStream;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::oracle::ClickOracle;
use crate::{Result, SimConfig};

/// Hidden parameters of the click model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    /// Per item: category index, feature vector, quality offset.
    pub item_category: Vec<usize>,
    pub item_vector: Vec<Vec<f64>>,
    pub item_quality: Vec<f64>,
    /// Per user: cluster and taste vector.
    pub user_cluster: Vec<u8>,
    pub user_taste: Vec<Vec<f64>>,
    /// `[cluster][category]` logit offsets.
    pub category_affinity: Vec<Vec<f64>>,
    pub favourite: [usize; 3],
    /// `[channel][category]` click multipliers.
    pub channel_category: Vec<Vec<f64>>,
    /// Symmetric `[category][category]` sibling interaction.
    pub interaction: Vec<Vec<f64>>,
}

impl Latent {
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("latent parameters serialize");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: SimConfig,
    pub catalog: Catalog,
    pub channels: Vec<Channel>,
    /// User population; the index is the user's position in `latent`.
    pub users: Vec<UserRequest>,
    pub oracle: ClickOracle,
}

/// Reproducibility record written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldManifest {
    pub seed: u64,
    pub config: SimConfig,
    pub latent_digest: String,
}

impl World {
    pub fn manifest(&self) -> WorldManifest {
        WorldManifest {
            seed: self.config.seed,
            config: self.config.clone(),
            latent_digest: self.oracle.latent().digest(),
        }
    }
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, sd: f64) -> Vec<f64> {
    (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Builds the catalog, channels, users and click oracle for `config`.
/// Identical configs give identical worlds.
pub fn generate_world(config: &SimConfig) -> Result<World> {
    config.validate()?;
    let root = SeedStream::new(config.seed).derive("world");
    let n_cat = config.categories.len();
    let m = config.channels();

    let mut rng = root.derive("categories").rng();
    let centroids: Vec<Vec<f64>> = (0..n_cat).map(|_| normal_vec(&mut rng, config.item_feature_dim, 1.0)).collect();

    let mut rng = root.derive("items").rng();
    let weights = WeightedIndex::new(config.categories.iter().map(|c| c.weight))
        .map_err(|e| crate::SimError::Config(e.to_string()))?;
    let mut item_category = Vec::with_capacity(config.n_items);
    let mut item_vector = Vec::with_capacity(config.n_items);
    let mut item_quality = Vec::with_capacity(config.n_items);
    let mut records = Vec::with_capacity(config.n_items);
    for j in 0..config.n_items {
        let c = weights.sample(&mut rng);
        let spec = &config.categories[c];
        let brand = rng.random_range(0..spec.brands);
        let noise = normal_vec(&mut rng, config.item_feature_dim, config.feature_noise);
        let v: Vec<f64> = centroids[c].iter().zip(&noise).map(|(a, b)| a + b).collect();
        item_quality.push(config.item_quality_spread * rng.sample::<f64, _>(StandardNormal));
        records.push(ItemRecord {
            item_id: format!("item-{j:05}"),
            category_id: spec.name.clone(),
            brand_id: format!("{}-b{brand}", spec.name),
            features: v.clone(),
        });
        item_category.push(c);
        item_vector.push(v);
    }
    let catalog = Catalog::from_records(records)?;

    let mut rng = root.derive("clusters").rng();
    let user_centroids: Vec<Vec<f64>> = (0..3).map(|_| normal_vec(&mut rng, config.user_feature_dim, 1.0)).collect();
    let taste_centroids: Vec<Vec<f64>> = (0..3).map(|_| normal_vec(&mut rng, config.item_feature_dim, 1.0)).collect();
    // Favourites are the last three categories, leaving the first ones with a
    // single tolerance across the population.
    let favourite = [0, 1, 2].map(|g| (n_cat.saturating_sub(3) + g) % n_cat);
    let category_affinity: Vec<Vec<f64>> = (0..3)
        .map(|g| {
            (0..n_cat)
                .map(|c| {
                    let base = config.category_affinity_spread * rng.sample::<f64, _>(StandardNormal);
                    if c == favourite[g] {
                        base + config.favourite_boost
                    } else {
                        base
                    }
                })
                .collect()
        })
        .collect();

    let mut rng = root.derive("users").rng();
    let mix = WeightedIndex::new(config.cluster_mix).map_err(|e| crate::SimError::Config(e.to_string()))?;
    let mut users = Vec::with_capacity(config.n_users);
    let mut user_cluster = Vec::with_capacity(config.n_users);
    let mut user_taste = Vec::with_capacity(config.n_users);
    for u in 0..config.n_users {
        let g = mix.sample(&mut rng);
        let noise = normal_vec(&mut rng, config.user_feature_dim, config.feature_noise);
        let features = user_centroids[g].iter().zip(&noise).map(|(a, b)| a + b).collect();
        let taste_noise = normal_vec(&mut rng, config.item_feature_dim, 0.5);
        user_taste.push(taste_centroids[g].iter().zip(&taste_noise).map(|(a, b)| a + b).collect());
        user_cluster.push(g as u8);
        users.push(UserRequest {
            user_id: format!("user-{u:05}"),
            user_features: features,
            cluster_hint: Some(g as u8),
        });
    }

    let mut rng = root.derive("channels").rng();
    let channel_category: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            (0..n_cat)
                .map(|_| (config.channel_category_spread * rng.sample::<f64, _>(StandardNormal)).exp())
                .collect()
        })
        .collect();
    let channels = config
        .capacities
        .iter()
        .enumerate()
        .map(|(i, &capacity)| Channel {
            channel_id: i,
            capacity,
            features: (0..m).map(|k| f64::from(u8::from(k == i))).collect(),
        })
        .collect();

    let mut rng = root.derive("interaction").rng();
    let mut interaction = vec![vec![0.0; n_cat]; n_cat];
    for a in 0..n_cat {
        interaction[a][a] = config.same_category_interaction;
        for b in a + 1..n_cat {
            let v = rng.random_range(-1.0..1.0);
            interaction[a][b] = v;
            interaction[b][a] = v;
        }
    }

    let latent = Latent {
        item_category,
        item_vector,
        item_quality,
        user_cluster,
        user_taste,
        category_affinity,
        favourite,
        channel_category,
        interaction,
    };
    let oracle = ClickOracle::new(config.clone(), latent, &users)?;
    Ok(World {
        config: config.clone(),
        catalog,
        channels,
        users,
        oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            n_items: 120,
            n_users: 200,
            ..SimConfig::default()
        }
    }

    #[test]
    fn same_seed_same_world() {
        let a = generate_world(&small()).unwrap();
        let b = generate_world(&small()).unwrap();
        assert_eq!(a.catalog, b.catalog);
        assert_eq!(a.users, b.users);
        assert_eq!(a.channels, b.channels);
        assert_eq!(a.manifest(), b.manifest());
        let c = generate_world(&SimConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.manifest().latent_digest, c.manifest().latent_digest);
    }

    #[test]
    fn shapes_follow_config() {
        let w = generate_world(&small()).unwrap();
        assert_eq!(w.catalog.len(), 120);
        assert_eq!(w.catalog.feature_dim(), 8);
        assert_eq!(w.users.len(), 200);
        assert_eq!(w.channels.len(), 3);
        channelpage_core::model::validate_channels(&w.channels).unwrap();
        for item in w.catalog.items() {
            let cat = w.catalog.category_name(item.category);
            assert!(w.catalog.brands().name(item.brand.0).starts_with(cat));
        }
        let lat = w.oracle.latent();
        assert!(lat.interaction.iter().enumerate().all(|(a, row)| row.iter().enumerate().all(|(b, &v)| v == lat.interaction[b][a])));
    }
}
