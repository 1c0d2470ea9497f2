//! Diversity-constrained channel allocation.
//!
//! Each of `M` channels receives exactly `V_i + h` of `N` candidates, no
//! candidate is used twice, each category is softly limited page-wide by a
//! threshold with a penalized slack, and hard-limited per channel by `B`.

mod brute;
mod problem;
mod simplex;
mod solve;
mod verify;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{CategoryId, Interner};
use crate::{Error, Result};

pub use brute::{brute_force_allocation, BRUTE_FORCE_LIMIT};
pub use problem::{build_allocation_problem, AllocationProblem, Constraint, LpProblem, Relation};
pub use simplex::{solve_relaxation, FractionalSolution, LpOutcome, PIVOT_TOL};
pub use solve::{branch_and_bound, solve_allocation, solve_allocation_with, MipOutcome, SolveMode, INTEGRALITY_TOL};
pub use verify::{verify_allocation, ConstraintReport, FamilyCheck};

/// Objective agreement tolerance used by the verifier and tie-breaking.
pub const OBJECTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    AtMostOneChannel,
    ChannelFill,
    CategoryThreshold,
    PerChannelBound,
    Domain,
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::AtMostOneChannel => "at_most_one_channel",
            Self::ChannelFill => "channel_fill",
            Self::CategoryThreshold => "category_threshold",
            Self::PerChannelBound => "per_channel_bound",
            Self::Domain => "domain",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationConfig {
    /// Items shown per channel, `V_i`.
    pub capacities: Vec<usize>,
    /// Extra items per channel handed to re-ranking, `h`.
    pub overflow: usize,
    /// Page-wide soft limit per category.
    pub thresholds: BTreeMap<CategoryId, u32>,
    /// Hard limit of one category within one channel.
    pub per_channel_bound: u32,
    /// Penalty per unit of threshold overflow.
    pub diversity_penalty: f64,
    /// Category of each candidate, indexed by candidate position.
    pub category_of: Vec<CategoryId>,
}

impl AllocationConfig {
    pub fn channels(&self) -> usize {
        self.capacities.len()
    }

    pub fn candidates(&self) -> usize {
        self.category_of.len()
    }

    /// Items each channel must receive.
    pub fn demand(&self, channel: usize) -> usize {
        self.capacities[channel] + self.overflow
    }

    pub fn total_demand(&self) -> usize {
        (0..self.channels()).map(|i| self.demand(i)).sum()
    }

    /// Distinct categories among the candidates, ascending.
    pub fn categories(&self) -> Vec<CategoryId> {
        self.category_of.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn threshold(&self, c: CategoryId) -> u32 {
        self.thresholds[&c]
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacities.is_empty() {
            return Err(Error::Config("at least one channel is required".into()));
        }
        if self.per_channel_bound < 1 {
            return Err(Error::Config("per-channel bound must be at least 1".into()));
        }
        if !(self.diversity_penalty.is_finite() && self.diversity_penalty >= 0.0) {
            return Err(Error::Config(format!(
                "diversity penalty must be finite and non-negative, got {}",
                self.diversity_penalty
            )));
        }
        if let Some(c) = self.category_of.iter().find(|c| !self.thresholds.contains_key(c)) {
            return Err(Error::Config(format!("no threshold for category {}", c.0)));
        }
        Ok(())
    }

    /// Which family makes the instance infeasible, if any.
    pub fn infeasibility(&self) -> Option<ConstraintFamily> {
        if self.total_demand() > self.candidates() {
            return Some(ConstraintFamily::ChannelFill);
        }
        let mut per_category: BTreeMap<CategoryId, usize> = BTreeMap::new();
        for &c in &self.category_of {
            *per_category.entry(c).or_default() += 1;
        }
        let bound = self.per_channel_bound as usize;
        let reachable: usize = per_category.values().map(|&k| k.min(bound)).sum();
        if (0..self.channels()).any(|i| self.demand(i) > reachable) {
            return Some(ConstraintFamily::PerChannelBound);
        }
        None
    }
}

/// Allocation settings as written in a config file, with category names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationSettings {
    pub capacities: Vec<usize>,
    #[serde(default)]
    pub overflow: usize,
    #[serde(default = "default_bound")]
    pub per_channel_bound: u32,
    #[serde(default = "default_penalty")]
    pub diversity_penalty: f64,
    /// Threshold for categories missing from `thresholds`.
    #[serde(default)]
    pub default_threshold: Option<u32>,
    #[serde(default)]
    pub thresholds: BTreeMap<String, u32>,
}

fn default_bound() -> u32 {
    2
}

fn default_penalty() -> f64 {
    2.0
}

impl AllocationSettings {
    /// Resolves against candidate category names.
    pub fn resolve(&self, candidate_categories: &[&str], categories: &Interner) -> Result<AllocationConfig> {
        let mut thresholds = BTreeMap::new();
        let mut category_of = Vec::with_capacity(candidate_categories.len());
        for &name in candidate_categories {
            let id = CategoryId(
                categories
                    .get(name)
                    .ok_or_else(|| Error::Config(format!("unknown category {name}")))?,
            );
            let t = self
                .thresholds
                .get(name)
                .copied()
                .or(self.default_threshold)
                .ok_or_else(|| Error::Config(format!("no threshold for category {name}")))?;
            thresholds.insert(id, t);
            category_of.push(id);
        }
        let config = AllocationConfig {
            capacities: self.capacities.clone(),
            overflow: self.overflow,
            thresholds,
            per_channel_bound: self.per_channel_bound,
            diversity_penalty: self.diversity_penalty,
            category_of,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Dense `M x N` matrix of predicted click-through rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    channels: usize,
    candidates: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(channels: usize, candidates: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * candidates {
            return Err(Error::Dimension(format!(
                "{} values for a {channels}x{candidates} score matrix",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite score {v}")));
        }
        Ok(Self {
            channels,
            candidates,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("ragged score rows".into()));
        }
        Self::new(rows.len(), n, rows.concat())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn candidates(&self) -> usize {
        self.candidates
    }

    pub fn get(&self, channel: usize, item: usize) -> f64 {
        self.values[channel * self.candidates + item]
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.candidates..(channel + 1) * self.candidates]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            channels: self.channels,
            candidates: self.candidates,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// One row per channel, comma separated, no header.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, line)| {
                line.split(',')
                    .map(|cell| {
                        cell.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Data(format!("score row {}: {e}", n + 1)))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.channels {
            let cells: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "family", rename_all = "snake_case")]
pub enum AllocationStatus {
    Optimal,
    Infeasible(ConstraintFamily),
    RelaxationOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub channels: usize,
    pub candidates: usize,
    /// Row-major `M x N`; exactly 0 or 1 unless the status is
    /// `RelaxationOnly`.
    pub assignment: Vec<f64>,
    pub slacks: BTreeMap<CategoryId, f64>,
    pub objective: f64,
    pub status: AllocationStatus,
}

impl Allocation {
    pub(crate) fn infeasible(config: &AllocationConfig, family: ConstraintFamily) -> Self {
        let (m, n) = (config.channels(), config.candidates());
        Self {
            channels: m,
            candidates: n,
            assignment: vec![0.0; m * n],
            slacks: BTreeMap::new(),
            objective: f64::NEG_INFINITY,
            status: AllocationStatus::Infeasible(family),
        }
    }

    /// Builds an integral allocation with slacks set to the minimal overflow.
    pub(crate) fn integral(scores: &ScoreMatrix, config: &AllocationConfig, assignment: Vec<f64>) -> Self {
        let (m, n) = (config.channels(), config.candidates());
        let mut counts: BTreeMap<CategoryId, u32> = config.categories().into_iter().map(|c| (c, 0)).collect();
        for i in 0..m {
            for j in 0..n {
                if assignment[i * n + j] > 0.5 {
                    *counts.get_mut(&config.category_of[j]).expect("known category") += 1;
                }
            }
        }
        let slacks: BTreeMap<CategoryId, f64> = counts
            .into_iter()
            .map(|(c, k)| (c, k.saturating_sub(config.threshold(c)) as f64))
            .collect();
        let gain: f64 = scores.values().iter().zip(&assignment).map(|(r, x)| r * x).sum();
        let objective = gain - config.diversity_penalty * slacks.values().sum::<f64>();
        Self {
            channels: m,
            candidates: n,
            assignment,
            slacks,
            objective,
            status: AllocationStatus::Optimal,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == AllocationStatus::Optimal
    }

    pub fn x(&self, channel: usize, item: usize) -> f64 {
        self.assignment[channel * self.candidates + item]
    }

    pub fn is_assigned(&self, channel: usize, item: usize) -> bool {
        self.x(channel, item) > 0.5
    }

    /// Candidate positions assigned to `channel`, ascending.
    pub fn channel_items(&self, channel: usize) -> Vec<usize> {
        (0..self.candidates).filter(|&j| self.is_assigned(channel, j)).collect()
    }

    /// `(channel, candidate)` pairs of the assignment.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.channels)
            .flat_map(|i| self.channel_items(i).into_iter().map(move |j| (i, j)))
            .collect()
    }

    pub fn total_slack(&self) -> f64 {
        self.slacks.values().sum()
    }

    /// Output document with candidate and category names substituted.
    pub fn to_doc(&self, item_name: impl Fn(usize) -> String, category_name: impl Fn(CategoryId) -> String) -> AllocationDoc {
        AllocationDoc {
            assignment: self.pairs().into_iter().map(|(i, j)| (i, item_name(j))).collect(),
            slacks: self.slacks.iter().map(|(&c, &v)| (category_name(c), v)).collect(),
            objective: self.objective.is_finite().then_some(self.objective),
            status: self.status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDoc {
    pub assignment: Vec<(usize, String)>,
    pub slacks: BTreeMap<String, f64>,
    pub objective: Option<f64>,
    pub status: AllocationStatus,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_csv_roundtrip() {
        let s = ScoreMatrix::parse_csv("0.9,0.1\n0.25, 1e-3\n").unwrap();
        assert_eq!(s.channels(), 2);
        assert_eq!(s.get(1, 1), 1e-3);
        assert_eq!(ScoreMatrix::parse_csv(&s.to_csv()).unwrap(), s);
        assert!(ScoreMatrix::parse_csv("1,2\n3\n").is_err());
        assert!(ScoreMatrix::parse_csv("1,nan\n").is_err());
    }

    #[test]
    fn settings_resolve_names() {
        let mut names = Interner::default();
        names.intern("phone");
        names.intern("shoe");
        let settings: AllocationSettings = serde_json::from_str(
            r#"{"capacities":[1,2],"per_channel_bound":1,"default_threshold":3,"thresholds":{"phone":1}}"#,
        )
        .unwrap();
        let cfg = settings.resolve(&["shoe", "phone", "shoe"], &names).unwrap();
        assert_eq!(cfg.diversity_penalty, 2.0);
        assert_eq!(cfg.threshold(CategoryId(0)), 1);
        assert_eq!(cfg.threshold(CategoryId(1)), 3);
        assert!(settings.resolve(&["hat"], &names).is_err());
    }

    #[test]
    fn status_json_shape() {
        let s = serde_json::to_string(&AllocationStatus::Infeasible(ConstraintFamily::ChannelFill)).unwrap();
        assert_eq!(s, r#"{"kind":"infeasible","family":"channel_fill"}"#);
        assert_eq!(serde_json::to_string(&AllocationStatus::Optimal).unwrap(), r#"{"kind":"optimal"}"#);
    }
}
