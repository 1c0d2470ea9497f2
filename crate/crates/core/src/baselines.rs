//! Greedy relevance/diversity selectors (MMR and max-sum diversification)
//! and their sequential multi-channel composition.
//!
//! Candidates are positions `0..n`; ties fall to higher relevance, then to
//! the smaller position.

use serde::{Deserialize, Serialize};

use crate::lp::{AllocationConfig, ScoreMatrix};
use crate::{Error, Result};

/// Largest candidate count the exhaustive subset oracle accepts.
pub const EXHAUSTIVE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum GreedyMethod {
    /// `lambda * rel - (1 - lambda) * max similarity to the picks so far`.
    Mmr { lambda: f64 },
    /// Marginal gain `rel + gamma * summed distance to the picks so far`.
    Msd { gamma: f64 },
}

impl GreedyMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Mmr { lambda } if !(0.0..=1.0).contains(&lambda) => {
                Err(Error::Config(format!("MMR lambda must lie in [0, 1], got {lambda}")))
            }
            Self::Msd { gamma } if !(gamma.is_finite() && gamma >= 0.0) => {
                Err(Error::Config(format!("MSD gamma must be finite and non-negative, got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mmr { .. } => "mmr",
            Self::Msd { .. } => "msd",
        }
    }

    /// Greedy selection of `k` out of `candidates`.
    pub fn select_from(
        &self,
        candidates: &[usize],
        relevance: &[f64],
        similarity: &impl Fn(usize, usize) -> f64,
        k: usize,
    ) -> Result<Vec<usize>> {
        self.validate()?;
        if k > candidates.len() {
            return Err(Error::InsufficientCandidates {
                needed: k,
                available: candidates.len(),
            });
        }
        let mut remaining = candidates.to_vec();
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        while chosen.len() < k {
            let value = |j: usize| match *self {
                Self::Mmr { lambda } => {
                    if chosen.is_empty() {
                        relevance[j]
                    } else {
                        let worst = chosen.iter().map(|&s| similarity(j, s)).fold(f64::NEG_INFINITY, f64::max);
                        lambda * relevance[j] - (1.0 - lambda) * worst
                    }
                }
                Self::Msd { gamma } => relevance[j] + gamma * chosen.iter().map(|&s| 1.0 - similarity(j, s)).sum::<f64>(),
            };
            let best = (0..remaining.len())
                .max_by(|&a, &b| {
                    let (ja, jb) = (remaining[a], remaining[b]);
                    value(ja)
                        .total_cmp(&value(jb))
                        .then(relevance[ja].total_cmp(&relevance[jb]))
                        .then(jb.cmp(&ja))
                })
                .expect("k <= remaining");
            chosen.push(remaining.swap_remove(best));
        }
        Ok(chosen)
    }
}

pub fn mmr_select(relevance: &[f64], similarity: impl Fn(usize, usize) -> f64, lambda: f64, k: usize) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..relevance.len()).collect();
    GreedyMethod::Mmr { lambda }.select_from(&all, relevance, &similarity, k)
}

pub fn msd_select(relevance: &[f64], similarity: impl Fn(usize, usize) -> f64, gamma: f64, k: usize) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..relevance.len()).collect();
    GreedyMethod::Msd { gamma }.select_from(&all, relevance, &similarity, k)
}

/// Summed relevance plus `gamma` times summed pairwise distance.
pub fn msd_objective(relevance: &[f64], similarity: impl Fn(usize, usize) -> f64, gamma: f64, set: &[usize]) -> f64 {
    let rel: f64 = set.iter().map(|&j| relevance[j]).sum();
    let mut dist = 0.0;
    for (a, &i) in set.iter().enumerate() {
        for &j in &set[a + 1..] {
            dist += 1.0 - similarity(i, j);
        }
    }
    rel + gamma * dist
}

/// Best `k`-subset under [`msd_objective`] by enumeration.
pub fn msd_exhaustive(
    relevance: &[f64],
    similarity: impl Fn(usize, usize) -> f64,
    gamma: f64,
    k: usize,
) -> Result<(Vec<usize>, f64)> {
    let n = relevance.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(Error::TooLarge(format!("{n} candidates for subset enumeration")));
    }
    if k > n {
        return Err(Error::InsufficientCandidates { needed: k, available: n });
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let set: Vec<usize> = (0..n).filter(|&j| mask & (1 << j) != 0).collect();
        let v = msd_objective(relevance, &similarity, gamma, &set);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((set, v));
        }
    }
    Ok(best.expect("at least one subset"))
}

/// Fills channels in order, each from the candidates earlier channels left,
/// using that channel's row of `scores` as relevance. Returns candidate
/// positions per channel in pick order.
pub fn channelwise_baseline_page(
    scores: &ScoreMatrix,
    config: &AllocationConfig,
    similarity: impl Fn(usize, usize) -> f64,
    method: GreedyMethod,
) -> Result<Vec<Vec<usize>>> {
    let (m, n) = (config.channels(), config.candidates());
    if scores.channels() != m || scores.candidates() != n {
        return Err(Error::Dimension(format!(
            "score matrix is {}x{}, config expects {m}x{n}",
            scores.channels(),
            scores.candidates()
        )));
    }
    if config.total_demand() > n {
        return Err(Error::InsufficientCandidates {
            needed: config.total_demand(),
            available: n,
        });
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut page = Vec::with_capacity(m);
    for i in 0..m {
        let picks = method.select_from(&remaining, scores.row(i), &similarity, config.demand(i))?;
        remaining.retain(|j| !picks.contains(j));
        page.push(picks);
    }
    Ok(page)
}
