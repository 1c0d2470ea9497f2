use channelpage_core::model::{Catalog, Channel, ItemIdx, ItemRecord, Page};
use channelpage_models::ctr::{CtrConfig, CtrContext, CtrModel, FeatureDims};
use channelpage_models::dhanr::{
    order_and_truncate, AttentionWeights, ChannelInput, DhanrConfig, DhanrDims, DhanrModel, PageInput,
};
use channelpage_tensor::{grad_check, Tensor, TensorError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_config() -> DhanrConfig {
    DhanrConfig {
        d_model: 4,
        d_k: 2,
        n_heads: 2,
        n_blocks: 1,
        ffn_hidden: 3,
        attention_dim: 3,
        fusion_hidden: 3,
        dropout: 0.0,
        ..DhanrConfig::default()
    }
}

fn dims() -> DhanrDims {
    DhanrDims {
        item_features: 2,
        deep: 3,
        n_channels: 2,
    }
}

fn random_page(rng: &mut ChaCha8Rng, lens: &[usize], dims: &DhanrDims) -> PageInput {
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
                    features: Tensor::from_fn(l, dims.item_features, |_, _| rng.random_range(-2.0..2.0)),
                    deep: Tensor::from_fn(l, dims.deep, |_, _| rng.random_range(-2.0..2.0)),
                }
            })
            .collect(),
    }
}

fn as_tensor_err(e: channelpage_models::ModelError) -> TensorError {
    TensorError::Invalid(e.to_string())
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for config in [
        toy_config(),
        DhanrConfig {
            positional: true,
            per_channel_context: true,
            ..toy_config()
        },
    ] {
        let model = DhanrModel::new(config, dims(), &mut rng).unwrap();
        let page = random_page(&mut rng, &[3, 3], &dims());
        let labels = [1.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let report = grad_check(model.params().tensors(), |g, vars| {
            let f = model.forward(g, vars, &page, None, None).map_err(as_tensor_err)?;
            let logits = g.concat(&f.logits, 0)?;
            g.bce_with_logits(logits, &labels)
        })
        .unwrap();
        assert_eq!(report.checked, model.params().num_scalars());
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}

#[test]
fn gradients_reach_the_click_model_when_fine_tuning() {
    let catalog = Catalog::from_records((0..6).map(|i| ItemRecord {
        item_id: format!("i{i}"),
        category_id: format!("c{}", i % 2),
        brand_id: format!("b{}", i % 3),
        features: vec![i as f64 * 0.3 - 0.5, (i as f64).sin()],
    }))
    .unwrap();
    let channels: Vec<Channel> = (0..2)
        .map(|c| Channel {
            channel_id: c,
            capacity: 3,
            features: vec![c as f64 - 0.5],
        })
        .collect();
    let ctx = CtrContext {
        catalog: &catalog,
        channels: &channels,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ctr_cfg = CtrConfig {
        hidden: vec![3],
        item_embedding: 2,
        channel_embedding: 2,
        ..CtrConfig::default()
    };
    let ctr = CtrModel::new(ctr_cfg, FeatureDims::of(&catalog, &channels, 2), &mut rng).unwrap();
    let d = DhanrDims {
        item_features: 2,
        deep: ctr.deep_dim(),
        n_channels: 2,
    };
    let model = DhanrModel::new(
        DhanrConfig {
            train_deep: true,
            ..toy_config()
        },
        d,
        &mut rng,
    )
    .unwrap();
    let user = vec![0.4, -0.7];
    let page = Page::new(vec![vec![ItemIdx(0), ItemIdx(1), ItemIdx(2)], vec![ItemIdx(3), ItemIdx(4), ItemIdx(5)]]);
    let input = PageInput::build(&ctr, &ctx, &user, &page).unwrap();
    let n_rerank = model.params().len();
    let all: Vec<Tensor> = model
        .params()
        .tensors()
        .iter()
        .chain(ctr.params().tensors())
        .cloned()
        .collect();
    let labels = [0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
    let report = grad_check(&all, |g, vars| {
        let (rerank_vars, ctr_vars) = vars.split_at(n_rerank);
        let queries: Vec<_> = page
            .iter_items()
            .map(|(channel, _, item)| channelpage_models::ctr::Query {
                user: &user,
                channel,
                item,
            })
            .collect();
        let f = ctr.forward(g, ctr_vars, &ctx, &queries, None).map_err(as_tensor_err)?;
        let deep_all = g.concat(&[f.hidden, f.logits], 1)?;
        let deep = [g.gather_rows(deep_all, &[0, 1, 2])?, g.gather_rows(deep_all, &[3, 4, 5])?];
        let out = model
            .forward(g, rerank_vars, &input, Some(&deep), None)
            .map_err(as_tensor_err)?;
        let logits = g.concat(&out.logits, 0)?;
        g.bce_with_logits(logits, &labels)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

fn softmax_vectors(att: &AttentionWeights) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let rows = |t: &Tensor| (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect::<Vec<_>>();
    for blocks in &att.item_self {
        for heads in blocks {
            for h in heads {
                out.extend(rows(h));
            }
        }
    }
    out.extend(att.item_level.iter().cloned());
    for heads in &att.channel_self {
        for h in heads {
            out.extend(rows(h));
        }
    }
    out.push(att.channel_level.clone());
    out
}

#[test]
fn attention_weights_are_distributions_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = DhanrModel::new(
        DhanrConfig {
            n_blocks: 2,
            ..toy_config()
        },
        dims(),
        &mut rng,
    )
    .unwrap();
    let mut vectors = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=2);
        let lens: Vec<usize> = (0..m).map(|_| rng.random_range(1..=5)).collect();
        let page = random_page(&mut rng, &lens, &dims());
        let att = model.score_page(&page).unwrap().attention;
        for v in softmax_vectors(&att) {
            let sum: f64 = v.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
            assert!(v.iter().all(|&w| w > 0.0));
            vectors += 1;
        }
    }
    assert!(vectors > 1000);
}

#[test]
fn scores_are_exactly_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = DhanrModel::new(DhanrConfig::default(), dims(), &mut rng).unwrap();
    for _ in 0..100 {
        let lens = [rng.random_range(1..=6), rng.random_range(1..=6)];
        let page = random_page(&mut rng, &lens, &dims());
        let base = model.score_page(&page).unwrap();
        let mut shuffled = page.clone();
        let mut perms = Vec::new();
        for ch in &mut shuffled.channels {
            let mut perm: Vec<usize> = (0..ch.items.len()).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            ch.items = perm.iter().map(|&k| ch.items[k]).collect();
            ch.features = Tensor::from_fn(perm.len(), ch.features.cols(), |r, c| ch.features.get(perm[r], c));
            ch.deep = Tensor::from_fn(perm.len(), ch.deep.cols(), |r, c| ch.deep.get(perm[r], c));
            perms.push(perm);
        }
        let out = model.score_page(&shuffled).unwrap();
        for (i, perm) in perms.iter().enumerate() {
            for (r, &k) in perm.iter().enumerate() {
                assert_eq!(out.scores[i][r], base.scores[i][k]);
                assert_eq!(out.attention.item_level[i][r], base.attention.item_level[i][k]);
            }
        }
        assert_eq!(out.attention.channel_level, base.attention.channel_level);
    }
}

#[test]
fn channel_order_only_permutes_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = DhanrModel::new(toy_config(), dims(), &mut rng).unwrap();
    let page = random_page(&mut rng, &[3, 2], &dims());
    let mut swapped = page.clone();
    swapped.channels.swap(0, 1);
    let a = model.score_page(&page).unwrap().scores;
    let b = model.score_page(&swapped).unwrap().scores;
    for (x, y) in a[0].iter().zip(&b[1]).chain(a[1].iter().zip(&b[0])) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn positions_matter_only_when_enabled() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = DhanrModel::new(
        DhanrConfig {
            positional: true,
            ..toy_config()
        },
        dims(),
        &mut rng,
    )
    .unwrap();
    let page = random_page(&mut rng, &[3], &dims());
    let mut rev = page.clone();
    let ch = &mut rev.channels[0];
    ch.items.reverse();
    ch.features = Tensor::from_fn(3, 2, |r, c| page.channels[0].features.get(2 - r, c));
    ch.deep = Tensor::from_fn(3, 3, |r, c| page.channels[0].deep.get(2 - r, c));
    let a = model.score_page(&page).unwrap().scores;
    let b = model.score_page(&rev).unwrap().scores;
    assert_ne!(a[0][0], b[0][2]);
}

#[test]
fn encoder_free_model_still_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = DhanrModel::new(
        DhanrConfig {
            n_blocks: 0,
            ..toy_config()
        },
        dims(),
        &mut rng,
    )
    .unwrap();
    let page = random_page(&mut rng, &[2, 4], &dims());
    let out = model.score_page(&page).unwrap();
    assert!(out.attention.item_self.iter().all(Vec::is_empty));
    assert!(out.attention.channel_self.is_empty());
    assert!(out.scores.concat().iter().all(|p| *p > 0.0 && *p < 1.0));
}

#[test]
fn eval_scoring_is_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = DhanrModel::new(DhanrConfig::default(), dims(), &mut rng).unwrap();
    let page = random_page(&mut rng, &[4, 3], &dims());
    assert_eq!(model.score_page(&page).unwrap(), model.score_page(&page).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rerank_keeps_capacity_subsets_and_drops_the_minimum(seed in any::<u64>(), l0 in 2usize..6, l1 in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = DhanrModel::new(toy_config(), dims(), &mut rng).unwrap();
        let page = random_page(&mut rng, &[l0, l1], &dims());
        let caps = [l0 - 1, l1 - 1];
        let out = model.rerank_page(&page, &caps).unwrap();
        let scores = model.score_page(&page).unwrap().scores;
        for (i, ch) in page.channels.iter().enumerate() {
            prop_assert_eq!(out.channels[i].len(), caps[i]);
            let dropped: Vec<_> = ch.items.iter().filter(|it| !out.channels[i].contains(it)).collect();
            prop_assert_eq!(dropped.len(), 1);
            let k = ch.items.iter().position(|it| it == dropped[0]).unwrap();
            let min = scores[i].iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(scores[i][k], min);
            for w in out.channels[i].windows(2) {
                let a = ch.items.iter().position(|it| *it == w[0]).unwrap();
                let b = ch.items.iter().position(|it| *it == w[1]).unwrap();
                prop_assert!(scores[i][a] >= scores[i][b]);
            }
        }
        let full = order_and_truncate(&page.page(), &scores, &[l0, l1]).unwrap();
        for (a, b) in full.channels.iter().zip(&page.page().channels) {
            let mut a = a.clone();
            let mut b = b.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
