use serde::{Deserialize, Serialize};

use super::{Allocation, AllocationConfig, ConstraintFamily, ScoreMatrix, OBJECTIVE_TOL};
use crate::model::CategoryId;

const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyCheck {
    pub family: ConstraintFamily,
    pub passed: bool,
    /// Human-readable index of the first violated row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_violation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub families: Vec<FamilyCheck>,
    pub objective_recomputed: f64,
    pub objective_consistent: bool,
}

impl ConstraintReport {
    pub fn all_passed(&self) -> bool {
        self.objective_consistent && self.families.iter().all(|f| f.passed)
    }

    pub fn check(&self, family: ConstraintFamily) -> Option<&FamilyCheck> {
        self.families.iter().find(|f| f.family == family)
    }
}

fn family(family: ConstraintFamily, first_violation: Option<String>) -> FamilyCheck {
    FamilyCheck {
        family,
        passed: first_violation.is_none(),
        first_violation,
    }
}

/// Checks every constraint family and recomputes the objective.
pub fn verify_allocation(alloc: &Allocation, scores: &ScoreMatrix, config: &AllocationConfig) -> ConstraintReport {
    let (m, n) = (alloc.channels, alloc.candidates);
    let x = |i: usize, j: usize| alloc.x(i, j);
    let categories = config.categories();
    let slack = |c: CategoryId| alloc.slacks.get(&c).copied().unwrap_or(0.0);

    let at_most_one = (0..n)
        .find(|&j| (0..m).map(|i| x(i, j)).sum::<f64>() > 1.0 + FEAS_TOL)
        .map(|j| format!("item {j}"));
    let fill = (0..m)
        .find(|&i| {
            let total: f64 = (0..n).map(|j| x(i, j)).sum();
            (total - config.demand(i) as f64).abs() > FEAS_TOL
        })
        .map(|i| format!("channel {i}"));
    let in_category = |c: CategoryId| (0..n).filter(move |&j| config.category_of[j] == c);
    let threshold = categories
        .iter()
        .find(|&&c| {
            let total: f64 = (0..m).flat_map(|i| in_category(c).map(move |j| x(i, j))).sum();
            total > config.threshold(c) as f64 + slack(c) + FEAS_TOL
        })
        .map(|c| format!("category {}", c.0));
    let per_channel = categories
        .iter()
        .flat_map(|&c| (0..m).map(move |i| (c, i)))
        .find(|&(c, i)| in_category(c).map(|j| x(i, j)).sum::<f64>() > config.per_channel_bound as f64 + FEAS_TOL)
        .map(|(c, i)| format!("category {} channel {i}", c.0));
    let bad_x = alloc
        .assignment
        .iter()
        .position(|&v| v.min((v - 1.0).abs()).abs() > FEAS_TOL)
        .map(|k| format!("x[{}][{}]", k / n.max(1), k % n.max(1)));
    let domain = bad_x.or_else(|| {
        alloc
            .slacks
            .iter()
            .find(|(_, &v)| v < -FEAS_TOL || !v.is_finite())
            .map(|(c, _)| format!("slack of category {}", c.0))
    });

    let gain: f64 = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| scores.get(i, j) * x(i, j)).sum();
    let recomputed = gain - config.diversity_penalty * alloc.total_slack();
    ConstraintReport {
        families: vec![
            family(ConstraintFamily::AtMostOneChannel, at_most_one),
            family(ConstraintFamily::ChannelFill, fill),
            family(ConstraintFamily::CategoryThreshold, threshold),
            family(ConstraintFamily::PerChannelBound, per_channel),
            family(ConstraintFamily::Domain, domain),
        ],
        objective_recomputed: recomputed,
        objective_consistent: (recomputed - alloc.objective).abs() <= OBJECTIVE_TOL,
    }
}
