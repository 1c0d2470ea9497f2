use serde::{Deserialize, Serialize};

use super::{AllocationConfig, ConstraintFamily, ScoreMatrix};
use crate::model::CategoryId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// Sparse `(variable, coefficient)` pairs.
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ConstraintFamily>,
}

/// A maximization problem with bounds and integrality flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integer: Vec<bool>,
}

impl LpProblem {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n || self.integer.len() != n {
            return Err(Error::Dimension(format!(
                "{n} objective coefficients but {} lower, {} upper, {} integrality flags",
                self.lower.len(),
                self.upper.len(),
                self.integer.len()
            )));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("objective coefficients must be finite".into()));
        }
        for (r, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(Error::Config(format!("row {r} has non-finite rhs")));
            }
            if let Some(&(k, _)) = c.coeffs.iter().find(|&&(k, a)| k >= n || !a.is_finite()) {
                return Err(Error::Dimension(format!("row {r} references variable {k} of {n}")));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// The allocation program together with its variable layout.
///
/// Variables `0..M*N` are the row-major assignment indicators; variable
/// `M*N + s` is the slack of `categories[s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    pub lp: LpProblem,
    pub channels: usize,
    pub candidates: usize,
    pub categories: Vec<CategoryId>,
}

impl AllocationProblem {
    pub fn x_var(&self, channel: usize, item: usize) -> usize {
        channel * self.candidates + item
    }

    pub fn slack_var(&self, s: usize) -> usize {
        self.channels * self.candidates + s
    }

    pub fn num_assignment_vars(&self) -> usize {
        self.channels * self.candidates
    }
}

pub fn build_allocation_problem(scores: &ScoreMatrix, config: &AllocationConfig) -> Result<AllocationProblem> {
    config.validate()?;
    let (m, n) = (config.channels(), config.candidates());
    if scores.channels() != m || scores.candidates() != n {
        return Err(Error::Dimension(format!(
            "score matrix is {}x{}, config expects {m}x{n}",
            scores.channels(),
            scores.candidates()
        )));
    }
    let categories = config.categories();
    let s_count = categories.len();
    let nx = m * n;
    let nv = nx + s_count;

    let mut objective = Vec::with_capacity(nv);
    for i in 0..m {
        objective.extend_from_slice(scores.row(i));
    }
    objective.extend(std::iter::repeat_n(-config.diversity_penalty, s_count));

    let items_of: Vec<Vec<usize>> = categories
        .iter()
        .map(|c| (0..n).filter(|&j| config.category_of[j] == *c).collect())
        .collect();

    let mut constraints = Vec::with_capacity(n + m + s_count + m * s_count);
    for j in 0..n {
        constraints.push(Constraint {
            coeffs: (0..m).map(|i| (i * n + j, 1.0)).collect(),
            relation: Relation::Le,
            rhs: 1.0,
            label: Some(ConstraintFamily::AtMostOneChannel),
        });
    }
    for i in 0..m {
        constraints.push(Constraint {
            coeffs: (0..n).map(|j| (i * n + j, 1.0)).collect(),
            relation: Relation::Eq,
            rhs: (config.capacities[i] + config.overflow) as f64,
            label: Some(ConstraintFamily::ChannelFill),
        });
    }
    for (s, items) in items_of.iter().enumerate() {
        let mut coeffs: Vec<(usize, f64)> = (0..m)
            .flat_map(|i| items.iter().map(move |&j| (i * n + j, 1.0)))
            .collect();
        coeffs.push((nx + s, -1.0));
        constraints.push(Constraint {
            coeffs,
            relation: Relation::Le,
            rhs: config.threshold(categories[s]) as f64,
            label: Some(ConstraintFamily::CategoryThreshold),
        });
    }
    for items in &items_of {
        for i in 0..m {
            constraints.push(Constraint {
                coeffs: items.iter().map(|&j| (i * n + j, 1.0)).collect(),
                relation: Relation::Le,
                rhs: config.per_channel_bound as f64,
                label: Some(ConstraintFamily::PerChannelBound),
            });
        }
    }

    let mut lower = vec![0.0; nv];
    let mut upper = vec![1.0; nv];
    let mut integer = vec![true; nv];
    for s in 0..s_count {
        lower[nx + s] = 0.0;
        upper[nx + s] = n as f64;
        integer[nx + s] = false;
    }
    Ok(AllocationProblem {
        lp: LpProblem {
            objective,
            constraints,
            lower,
            upper,
            integer,
        },
        channels: m,
        candidates: n,
        categories,
    })
}
