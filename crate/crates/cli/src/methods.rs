//! The page construction methods compared in evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use channelpage_core::baselines::{channelwise_baseline_page, GreedyMethod};
use channelpage_core::diversity::{jaccard_similarity, SimilarityMode, ThresholdEstimate};
use channelpage_core::lp::{solve_allocation, verify_allocation, Allocation, AllocationConfig, ScoreMatrix};
use channelpage_core::metrics::ClickModel;
use channelpage_core::model::{Catalog, CategoryId, ItemIdx, Page, UserRequest};
use channelpage_core::rng::SeedStream;
use channelpage_models::ctr::{CtrContext, CtrModel};
use channelpage_models::dhanr::PageInput;
use channelpage_sim::{sample_candidates, sample_request};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::pipeline::{resolve_thresholds, GreedyParams, Models};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// User-item scores, channels filled in order with the best remaining.
    DnnTopk,
    /// One model per channel trained on that channel's impressions.
    DnnSingle,
    Mmr,
    Msd,
    /// Diversity-constrained allocation ordered by predicted CTR.
    UciAa,
    /// The same allocation re-ranked by the attention network.
    UciAaDhanr,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::DnnTopk,
        Method::DnnSingle,
        Method::Mmr,
        Method::Msd,
        Method::UciAa,
        Method::UciAaDhanr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::DnnTopk => "dnn-topk",
            Self::DnnSingle => "dnn-single",
            Self::Mmr => "mmr",
            Self::Msd => "msd",
            Self::UciAa => "uci-aa",
            Self::UciAaDhanr => "uci-aa-dhanr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s}; expected one of {}", method_names())))
    }
}

pub fn method_names() -> String {
    Method::ALL.map(Method::name).join(", ")
}

/// One evaluation request: a user and the candidates to place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub index: usize,
    pub user: UserRequest,
    pub candidates: Vec<ItemIdx>,
}

/// `n` requests, each drawn from its own stream under `stream`.
pub fn draw_requests(users: &[UserRequest], n_items: usize, n_candidates: usize, stream: &SeedStream, n: usize) -> Vec<Request> {
    (0..n)
        .map(|index| {
            let mut rng = stream.derive_index("request", index as u64).rng();
            let user = sample_request(users, &mut rng).clone();
            let mut candidates = sample_candidates(n_items, n_candidates, &mut rng);
            candidates.sort_unstable();
            Request { index, user, candidates }
        })
        .collect()
}

/// Allocation settings shared by every request.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanSettings {
    pub capacities: Vec<usize>,
    pub score_scale: f64,
    pub diversity_penalty: f64,
    pub per_channel_bound: u32,
    pub overflow: usize,
    pub similarity: SimilarityMode,
}

impl PlanSettings {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            capacities: config.world.capacities.clone(),
            score_scale: config.score_scale,
            diversity_penalty: config.diversity_penalty,
            per_channel_bound: config.per_channel_bound,
            overflow: config.overflow,
            similarity: config.similarity,
        }
    }
}

/// A verified allocation with the inputs it was solved from.
#[derive(Debug, Clone)]
pub struct Allocated {
    pub scores: ScoreMatrix,
    pub config: AllocationConfig,
    pub allocation: Allocation,
}

/// Solves diversity-constrained allocations with the channel-aware scorer.
pub struct Allocator<'a> {
    pub ctx: CtrContext<'a>,
    pub ctr: &'a CtrModel,
    pub settings: PlanSettings,
    thresholds: BTreeMap<CategoryId, u32>,
    verified: AtomicUsize,
}

impl<'a> Allocator<'a> {
    pub fn new(
        ctx: CtrContext<'a>,
        ctr: &'a CtrModel,
        estimates: &BTreeMap<String, ThresholdEstimate>,
        settings: PlanSettings,
    ) -> Self {
        // Without a supported estimate a category is only bounded by the page.
        let fallback = (settings.capacities.iter().sum::<usize>() + settings.overflow * settings.capacities.len()) as u32;
        let thresholds = resolve_thresholds(ctx.catalog, estimates, fallback);
        Self {
            ctx,
            ctr,
            settings,
            thresholds,
            verified: AtomicUsize::new(0),
        }
    }

    pub fn thresholds(&self) -> &BTreeMap<CategoryId, u32> {
        &self.thresholds
    }

    /// Allocations solved and verified so far.
    pub fn verified_allocations(&self) -> usize {
        self.verified.load(Ordering::Relaxed)
    }

    fn model_scores(&self, model: &CtrModel, req: &Request) -> Result<ScoreMatrix> {
        Ok(model.score_matrix(&self.ctx, &req.user.user_features, &req.candidates)?)
    }

    /// Scaled channel-aware scores `R`.
    pub fn scores(&self, req: &Request) -> Result<ScoreMatrix> {
        Ok(self.model_scores(self.ctr, req)?.scaled(self.settings.score_scale))
    }

    pub fn allocation_config(&self, req: &Request, penalty: f64, overflow: usize) -> AllocationConfig {
        let category_of: Vec<CategoryId> = req.candidates.iter().map(|&it| self.ctx.catalog.item(it).category).collect();
        AllocationConfig {
            capacities: self.settings.capacities.clone(),
            overflow,
            thresholds: category_of.iter().map(|c| (*c, self.thresholds[c])).collect(),
            per_channel_bound: self.settings.per_channel_bound,
            diversity_penalty: penalty,
            category_of,
        }
    }

    /// Solves and verifies the allocation of `req` at diversity penalty
    /// `penalty`.
    pub fn allocate(&self, req: &Request, penalty: f64) -> Result<Allocated> {
        let scores = self.scores(req)?;
        let config = self.allocation_config(req, penalty, self.settings.overflow);
        if let Some(family) = config.infeasibility() {
            return Err(Error::Infeasible {
                request: req.index,
                family,
            });
        }
        let allocation = solve_allocation(&scores, &config)?;
        let report = verify_allocation(&allocation, &scores, &config);
        if !allocation.is_optimal() || !report.all_passed() {
            let detail = report
                .families
                .iter()
                .find_map(|f| f.first_violation.clone())
                .unwrap_or_else(|| format!("status {:?}", allocation.status));
            return Err(Error::Verification {
                request: req.index,
                detail,
            });
        }
        self.verified.fetch_add(1, Ordering::Relaxed);
        Ok(Allocated {
            scores,
            config,
            allocation,
        })
    }

    /// Allocated items per channel, best predicted first, including the
    /// overflow items.
    pub fn ranked_allocation(&self, req: &Request, allocated: &Allocated) -> Page {
        let channels = (0..allocated.config.channels())
            .map(|i| {
                let mut items = allocated.allocation.channel_items(i);
                items.sort_by(|&a, &b| allocated.scores.get(i, b).total_cmp(&allocated.scores.get(i, a)).then(a.cmp(&b)));
                items.into_iter().map(|j| req.candidates[j]).collect()
            })
            .collect();
        Page::new(channels)
    }

    /// Keeps the first `V_i` items of every channel.
    pub fn truncate(&self, page: &Page) -> Page {
        Page::new(
            page.channels
                .iter()
                .zip(&self.settings.capacities)
                .map(|(items, &v)| items[..v.min(items.len())].to_vec())
                .collect(),
        )
    }

    pub fn uci_aa_page(&self, req: &Request, penalty: f64) -> Result<Page> {
        let allocated = self.allocate(req, penalty)?;
        Ok(self.truncate(&self.ranked_allocation(req, &allocated)))
    }
}

/// Builds pages for requests with the trained models.
pub struct Planner<'a> {
    pub allocator: Allocator<'a>,
    pub models: &'a Models,
}

impl<'a> Planner<'a> {
    pub fn new(ctx: CtrContext<'a>, models: &'a Models, settings: PlanSettings) -> Self {
        Self {
            allocator: Allocator::new(ctx, &models.ctr, &models.thresholds, settings),
            models,
        }
    }

    pub fn catalog(&self) -> &'a Catalog {
        self.allocator.ctx.catalog
    }

    pub fn settings(&self) -> &PlanSettings {
        &self.allocator.settings
    }

    pub fn dhanr_page(&self, req: &Request, penalty: f64) -> Result<Page> {
        let a = &self.allocator;
        let allocated = a.allocate(req, penalty)?;
        let ranked = a.ranked_allocation(req, &allocated);
        let input = PageInput::build(a.ctr, &a.ctx, &req.user.user_features, &ranked)?;
        Ok(self.models.dhanr.rerank_page(&input, &a.settings.capacities)?)
    }

    fn fill_in_order(&self, req: &Request, scores: &ScoreMatrix, method: GreedyMethod) -> Result<Page> {
        let config = self.allocator.allocation_config(req, 0.0, 0);
        let catalog = self.catalog();
        let mode = self.settings().similarity;
        let sim = |a: usize, b: usize| jaccard_similarity(catalog.item(req.candidates[a]), catalog.item(req.candidates[b]), mode);
        let picks = channelwise_baseline_page(scores, &config, sim, method)?;
        Ok(Page::new(
            picks.into_iter().map(|ch| ch.into_iter().map(|j| req.candidates[j]).collect()).collect(),
        ))
    }

    pub fn greedy_page(&self, req: &Request, method: GreedyMethod) -> Result<Page> {
        self.fill_in_order(req, &self.allocator.scores(req)?, method)
    }

    pub fn page(&self, method: Method, req: &Request) -> Result<Page> {
        let a = &self.allocator;
        let top = GreedyMethod::Mmr { lambda: 1.0 };
        let GreedyParams { lambda, gamma } = self.models.greedy;
        match method {
            Method::DnnTopk => self.greedy_page(req, top),
            Method::DnnSingle => {
                let rows = self
                    .models
                    .per_channel
                    .iter()
                    .enumerate()
                    .map(|(i, m)| Ok(a.model_scores(m, req)?.row(i).to_vec()))
                    .collect::<Result<Vec<_>>>()?;
                self.fill_in_order(req, &ScoreMatrix::from_rows(&rows)?, top)
            }
            Method::Mmr => self.greedy_page(req, GreedyMethod::Mmr { lambda }),
            Method::Msd => self.greedy_page(req, GreedyMethod::Msd { gamma }),
            Method::UciAa => a.uci_aa_page(req, a.settings.diversity_penalty),
            Method::UciAaDhanr => self.dhanr_page(req, a.settings.diversity_penalty),
        }
    }
}

/// Mean expected clicks per page under `oracle`.
pub fn expected_clicks<M: ClickModel>(oracle: &M, pages: &[(&UserRequest, Page)]) -> f64 {
    let total: f64 = pages
        .iter()
        .map(|(user, page)| oracle.click_probabilities(user, page).iter().flatten().sum::<f64>())
        .sum();
    total / pages.len().max(1) as f64
}

/// Picks the MMR `lambda` and MSD `gamma` that maximize expected clicks on
/// `requests`. Ties keep the earlier grid value.
pub fn tune_greedy<M: ClickModel>(
    planner: &Planner<'_>,
    oracle: &M,
    requests: &[Request],
    lambda_grid: &[f64],
    gamma_grid: &[f64],
) -> Result<GreedyParams> {
    let best = |methods: Vec<GreedyMethod>| -> Result<GreedyMethod> {
        let mut best: Option<(GreedyMethod, f64)> = None;
        for m in methods {
            let pages = requests
                .iter()
                .map(|r| Ok((&r.user, planner.greedy_page(r, m)?)))
                .collect::<Result<Vec<_>>>()?;
            let value = expected_clicks(oracle, &pages);
            if best.is_none_or(|(_, v)| value > v) {
                best = Some((m, value));
            }
        }
        best.map(|(m, _)| m).ok_or_else(|| Error::Config("empty tuning grid".into()))
    };
    let lambda = match best(lambda_grid.iter().map(|&lambda| GreedyMethod::Mmr { lambda }).collect())? {
        GreedyMethod::Mmr { lambda } => lambda,
        GreedyMethod::Msd { .. } => unreachable!("MMR grid"),
    };
    let gamma = match best(gamma_grid.iter().map(|&gamma| GreedyMethod::Msd { gamma }).collect())? {
        GreedyMethod::Msd { gamma } => gamma,
        GreedyMethod::Mmr { .. } => unreachable!("MSD grid"),
    };
    Ok(GreedyParams { lambda, gamma })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        let err = "dnn".parse::<Method>().unwrap_err();
        assert!(err.to_string().contains("uci-aa-dhanr"));
    }

    #[test]
    fn requests_are_reproducible_and_distinct() {
        let users: Vec<UserRequest> = (0..5)
            .map(|u| UserRequest {
                user_id: format!("u{u}"),
                user_features: vec![u as f64],
                cluster_hint: None,
            })
            .collect();
        let s = SeedStream::new(3);
        let a = draw_requests(&users, 40, 12, &s, 20);
        assert_eq!(a, draw_requests(&users, 40, 12, &s, 20));
        assert_eq!(a[..5], draw_requests(&users, 40, 12, &s, 5)[..]);
        for r in &a {
            let mut c = r.candidates.clone();
            c.dedup();
            assert_eq!(c.len(), 12);
        }
    }
}
