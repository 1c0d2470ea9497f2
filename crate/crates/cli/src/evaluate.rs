//! Simulated evaluation of methods on a shared request stream.

use std::fmt::Write as _;

use channelpage_core::diversity::{ilad, SimilarityMode};
use channelpage_core::metrics::{ClickModel, MeanEstimate, MethodOutcome};
use channelpage_core::model::{Catalog, ClickRecord};
use channelpage_core::rng::SeedStream;
use serde::{Deserialize, Serialize};

use crate::methods::{Method, Planner, Request};
use crate::Result;

/// Shows each request's page to `oracle`. The click draw of request `r`
/// comes from the `r`-th stream under `clicks`, whatever the method, so
/// methods that show the same item to the same request share its outcome.
pub fn simulate_pages<M: ClickModel>(
    oracle: &M,
    requests: &[Request],
    clicks: &SeedStream,
    mut page_for: impl FnMut(&Request) -> Result<channelpage_core::model::Page>,
) -> Result<Vec<ClickRecord>> {
    requests
        .iter()
        .map(|req| {
            let page = page_for(req)?;
            let mut rng = clicks.derive_index("clicks", req.index as u64).rng();
            let clicks = oracle.sample_clicks(&req.user, &page, &mut rng);
            Ok(ClickRecord {
                request: req.user.clone(),
                page,
                clicks,
            })
        })
        .collect()
}

pub fn run_methods<M: ClickModel>(
    planner: &Planner<'_>,
    oracle: &M,
    methods: &[Method],
    requests: &[Request],
    clicks: &SeedStream,
) -> Result<Vec<MethodOutcome>> {
    methods
        .iter()
        .map(|&m| {
            Ok(MethodOutcome {
                method: m.name().to_string(),
                records: simulate_pages(oracle, requests, clicks, |r| planner.page(m, r))?,
            })
        })
        .collect()
}

/// Clicks over impressions of one page.
pub fn page_ctr(record: &ClickRecord) -> f64 {
    record.clicks.len() as f64 / record.page.num_items().max(1) as f64
}

pub fn page_ilad(record: &ClickRecord, catalog: &Catalog, mode: SimilarityMode) -> Option<f64> {
    let items: Vec<_> = record.page.iter_items().map(|(_, _, it)| catalog.item(it)).collect();
    ilad(&items, mode)
}

/// Share of channel `c`'s first `k` slots that were clicked.
pub fn channel_precision(record: &ClickRecord, channel: usize, k: usize) -> f64 {
    (0..k).filter(|&p| record.is_clicked(channel, p)).count() as f64 / k as f64
}

/// Mean of `a - b` over requests with its 95% interval.
pub fn paired_difference(a: &[f64], b: &[f64]) -> MeanEstimate {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    MeanEstimate::from_values(&diffs, vec![])
}

/// Whether the interval of `m` lies strictly above zero.
pub fn significantly_positive(m: &MeanEstimate) -> bool {
    m.ci().is_some_and(|(lo, _)| lo > 0.0)
}

/// Whether the interval of `m` contains zero.
pub fn consistent_with_zero(m: &MeanEstimate) -> bool {
    m.ci().is_some_and(|(lo, hi)| lo <= 0.0 && hi >= 0.0)
}

/// Per-request metric of one method.
pub fn per_request(outcome: &MethodOutcome, metric: impl Fn(&ClickRecord) -> f64) -> Vec<f64> {
    outcome.records.iter().map(metric).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub channel: String,
    pub better: String,
    pub worse: String,
    pub difference: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

pub const COMPARISON_HEADER: &str = "metric,channel,better,worse,difference,ci_low,ci_high,n";

impl Comparison {
    pub fn new(metric: &str, channel: &str, better: &str, worse: &str, est: &MeanEstimate) -> Self {
        let (ci_low, ci_high) = est.ci().unwrap_or((f64::NAN, f64::NAN));
        Self {
            metric: metric.into(),
            channel: channel.into(),
            better: better.into(),
            worse: worse.into(),
            difference: est.value.unwrap_or(f64::NAN),
            ci_low,
            ci_high,
            n: est.n,
        }
    }

    pub fn significant(&self) -> bool {
        self.ci_low > 0.0
    }
}

pub fn comparisons_csv(rows: &[Comparison]) -> String {
    let mut out = format!("{COMPARISON_HEADER}\n");
    for c in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.metric, c.channel, c.better, c.worse, c.difference, c.ci_low, c.ci_high, c.n
        );
    }
    out
}

/// Paired page-level comparisons of CTR and ILAD, and per-channel
/// precision@k, for every ordered pair in `pairs`.
pub fn compare(
    outcomes: &[MethodOutcome],
    pairs: &[(Method, Method)],
    catalog: &Catalog,
    k: usize,
    mode: SimilarityMode,
) -> Vec<Comparison> {
    let find = |m: Method| outcomes.iter().find(|o| o.method == m.name());
    let mut rows = Vec::new();
    for &(a, b) in pairs {
        let (Some(oa), Some(ob)) = (find(a), find(b)) else {
            continue;
        };
        let ctr = paired_difference(&per_request(oa, page_ctr), &per_request(ob, page_ctr));
        rows.push(Comparison::new("ctr", "total", a.name(), b.name(), &ctr));
        let il = |o: &MethodOutcome| per_request(o, |r| page_ilad(r, catalog, mode).unwrap_or(0.0));
        rows.push(Comparison::new("ilad", "total", a.name(), b.name(), &paired_difference(&il(oa), &il(ob))));
        let channels = oa.records.first().map_or(0, |r| r.page.channels.len());
        for c in 0..channels {
            let pa = per_request(oa, |r| channel_precision(r, c, k));
            let pb = per_request(ob, |r| channel_precision(r, c, k));
            rows.push(Comparison::new(
                &format!("precision@{k}"),
                &c.to_string(),
                a.name(),
                b.name(),
                &paired_difference(&pa, &pb),
            ));
        }
    }
    rows
}

/// Outcome of the allocation at one diversity penalty.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub penalty: f64,
    pub ctr: Vec<f64>,
    pub ilad: Vec<f64>,
    /// Summed threshold overflow of the optimal allocations.
    pub slack: f64,
}

impl SweepPoint {
    pub fn mean_ctr(&self) -> MeanEstimate {
        MeanEstimate::from_values(&self.ctr, vec![])
    }

    pub fn mean_ilad(&self) -> MeanEstimate {
        MeanEstimate::from_values(&self.ilad, vec![])
    }
}

/// UCI-AA pages of `requests` at each penalty, clicked with shared draws.
pub fn penalty_sweep<M: ClickModel>(
    planner: &Planner<'_>,
    oracle: &M,
    requests: &[Request],
    penalties: &[f64],
    clicks: &SeedStream,
) -> Result<Vec<SweepPoint>> {
    let catalog = planner.catalog();
    let mode = planner.settings().similarity;
    let a = &planner.allocator;
    penalties
        .iter()
        .map(|&penalty| {
            let mut slack = 0.0;
            let records = simulate_pages(oracle, requests, clicks, |r| {
                let allocated = a.allocate(r, penalty)?;
                slack += allocated.allocation.total_slack();
                Ok(a.truncate(&a.ranked_allocation(r, &allocated)))
            })?;
            Ok(SweepPoint {
                penalty,
                ctr: records.iter().map(page_ctr).collect(),
                ilad: records.iter().map(|r| page_ilad(r, catalog, mode).unwrap_or(0.0)).collect(),
                slack,
            })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "penalty,ctr,ctr_ci_low,ctr_ci_high,ilad,ilad_ci_low,ilad_ci_high,slack,n";

/// Plot-ready sweep table.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for p in points {
        let (c, i) = (p.mean_ctr(), p.mean_ilad());
        let (cl, ch) = c.ci().unwrap_or((f64::NAN, f64::NAN));
        let (il, ih) = i.ci().unwrap_or((f64::NAN, f64::NAN));
        let _ = writeln!(
            out,
            "{},{},{cl},{ch},{},{il},{ih},{},{}",
            p.penalty,
            c.value.unwrap_or(f64::NAN),
            i.value.unwrap_or(f64::NAN),
            p.slack,
            c.n
        );
    }
    out
}
