use std::collections::BTreeSet;

use channelpage_core::baselines::{mmr_select, msd_exhaustive, msd_objective, msd_select};
use channelpage_core::diversity::{estimate_category_thresholds, ilad, jaccard_similarity, SimilarityMode};
use channelpage_core::metrics::{precision, precision_at_k_channel};
use channelpage_core::model::{BrandId, Catalog, CategoryId, ClickRecord, Item, ItemIdx, ItemRecord, Page, UserRequest};
use proptest::prelude::*;

fn items() -> impl Strategy<Value = Vec<Item>> {
    prop::collection::vec((0u32..4, 0u32..3), 1..10).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (c, b))| Item {
                id: format!("i{i}"),
                category: CategoryId(c),
                brand: BrandId(c * 10 + b),
                features: vec![],
            })
            .collect()
    })
}

fn relevance_and_items() -> impl Strategy<Value = (Vec<f64>, Vec<Item>)> {
    items().prop_flat_map(|it| {
        let n = it.len();
        (prop::collection::vec(0.0f64..1.0, n), Just(it))
    })
}

fn sim(items: &[Item]) -> impl Fn(usize, usize) -> f64 + '_ {
    move |a, b| jaccard_similarity(&items[a], &items[b], SimilarityMode::CategoryBrand)
}

fn top_k(rel: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rel.len()).collect();
    idx.sort_by(|&a, &b| rel[b].total_cmp(&rel[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

proptest! {
    #[test]
    fn greedy_outputs_are_distinct_and_sized((rel, it) in relevance_and_items(), k_frac in 0.0f64..=1.0, t in 0.0f64..=1.0) {
        let k = ((rel.len() as f64) * k_frac).round() as usize;
        for picks in [mmr_select(&rel, sim(&it), t, k).unwrap(), msd_select(&rel, sim(&it), 3.0 * t, k).unwrap()] {
            prop_assert_eq!(picks.len(), k);
            prop_assert_eq!(picks.iter().collect::<BTreeSet<_>>().len(), k);
        }
        prop_assert_eq!(mmr_select(&rel, sim(&it), t, k).unwrap(), mmr_select(&rel, sim(&it), t, k).unwrap());
    }

    #[test]
    fn degenerate_tradeoffs_match_top_k((rel, it) in relevance_and_items(), k_frac in 0.0f64..=1.0) {
        let k = ((rel.len() as f64) * k_frac).round() as usize;
        prop_assert_eq!(mmr_select(&rel, sim(&it), 1.0, k).unwrap(), top_k(&rel, k));
        prop_assert_eq!(msd_select(&rel, sim(&it), 0.0, k).unwrap(), top_k(&rel, k));
    }

    #[test]
    fn msd_greedy_within_half_of_exhaustive((rel, it) in relevance_and_items(), k_frac in 0.0f64..=1.0, gamma in 0.0f64..3.0) {
        let k = ((rel.len() as f64) * k_frac).round() as usize;
        let greedy = msd_select(&rel, sim(&it), gamma, k).unwrap();
        let greedy_value = msd_objective(&rel, sim(&it), gamma, &greedy);
        let (_, best) = msd_exhaustive(&rel, sim(&it), gamma, k).unwrap();
        prop_assert!(greedy_value <= best + 1e-12, "greedy {} exhaustive {}", greedy_value, best);
        prop_assert!(greedy_value >= 0.5 * best - 1e-12, "greedy {} exhaustive {}", greedy_value, best);
    }

    #[test]
    fn jaccard_symmetric_and_reflexive(it in items()) {
        for a in &it {
            prop_assert_eq!(jaccard_similarity(a, a, SimilarityMode::CategoryBrand), 1.0);
            for b in &it {
                let s = jaccard_similarity(a, b, SimilarityMode::CategoryBrand);
                prop_assert_eq!(s, jaccard_similarity(b, a, SimilarityMode::CategoryBrand));
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }
    }

    #[test]
    fn ilad_permutation_invariant(it in items(), seed in any::<u64>()) {
        let refs: Vec<&Item> = it.iter().collect();
        let mut shuffled = refs.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let (a, b) = (ilad(&refs, SimilarityMode::CategoryBrand), ilad(&shuffled, SimilarityMode::CategoryBrand));
        match (a, b) {
            (Some(x), Some(y)) => {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&x));
            }
            (None, None) => {}
            _ => prop_assert!(false),
        }
    }

    #[test]
    fn precision_in_unit_interval_and_order_free(
        reqs in prop::collection::vec((prop::collection::btree_set(0u32..20, 0..8), prop::collection::btree_set(0u32..20, 0..8)), 1..20)
    ) {
        let pairs: Vec<(BTreeSet<ItemIdx>, BTreeSet<ItemIdx>)> = reqs
            .iter()
            .map(|(r, c)| (r.iter().map(|&x| ItemIdx(x)).collect(), c.iter().map(|&x| ItemIdx(x)).collect()))
            .collect();
        let p = precision(&pairs);
        if let Some(v) = p.value {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let mut rev = pairs.clone();
        rev.reverse();
        let q = precision(&rev);
        match (p.value, q.value) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (None, None) => {}
            _ => prop_assert!(false),
        }
        prop_assert_eq!(precision(&pairs), p);
    }

    #[test]
    fn precision_at_k_in_unit_interval(log in prop::collection::vec(prop::collection::vec(prop::collection::vec(any::<bool>(), 0..5), 1..4), 1..10), k in 1usize..4) {
        for m in precision_at_k_channel(&log, k).unwrap() {
            if let Some(v) = m.value {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn thresholds_ignore_record_order(pages in prop::collection::vec(prop::collection::vec((0usize..6, any::<bool>()), 1..5), 1..30)) {
        let catalog = Catalog::from_records((0..6).map(|i| ItemRecord {
            item_id: format!("i{i}"),
            category_id: format!("c{}", i % 3),
            brand_id: "b".into(),
            features: vec![],
        }))
        .unwrap();
        let records: Vec<ClickRecord> = pages
            .iter()
            .map(|slots| {
                let mut seen = BTreeSet::new();
                let mut items = Vec::new();
                let mut clicks = BTreeSet::new();
                for &(i, click) in slots {
                    if seen.insert(i) {
                        if click {
                            clicks.insert((0, items.len()));
                        }
                        items.push(ItemIdx(i as u32));
                    }
                }
                ClickRecord {
                    request: UserRequest { user_id: "u".into(), user_features: vec![], cluster_hint: None },
                    page: Page::new(vec![items]),
                    clicks,
                }
            })
            .collect();
        let forward = estimate_category_thresholds(&catalog, &records, 1).unwrap();
        let mut rev = records.clone();
        rev.reverse();
        prop_assert_eq!(forward, estimate_category_thresholds(&catalog, &rev, 1).unwrap());
    }
}
