//! Best-bound branch-and-bound and the allocation driver.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::problem::{build_allocation_problem, LpProblem};
use super::simplex::{solve_bounded, LpOutcome};
use super::{Allocation, AllocationConfig, AllocationStatus, ConstraintFamily, ScoreMatrix, OBJECTIVE_TOL};
use crate::{Error, Result};

pub const INTEGRALITY_TOL: f64 = 1e-6;
const NODE_LIMIT: usize = 500_000;

#[derive(Debug, Clone, PartialEq)]
pub enum MipOutcome {
    Optimal {
        x: Vec<f64>,
        objective: f64,
        /// The root relaxation was integral with a unique optimum.
        root_certified: bool,
    },
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMode {
    /// Exact integral optimum with lexicographic tie-breaking.
    #[default]
    Exact,
    /// Return the continuous relaxation without rounding.
    RelaxationOnly,
}

struct Node {
    bound: f64,
    seq: u64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Max-heap: higher bound first, then older node.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Integer variable furthest from integrality, lowest index on ties.
fn most_fractional(x: &[f64], integer: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, (&v, &int)) in x.iter().zip(integer).enumerate() {
        if !int {
            continue;
        }
        let frac = v - v.floor();
        if frac <= INTEGRALITY_TOL || frac >= 1.0 - INTEGRALITY_TOL {
            continue;
        }
        let closeness = (frac - 0.5).abs();
        if best.is_none_or(|(_, b)| closeness < b) {
            best = Some((k, closeness));
        }
    }
    best.map(|(k, _)| k)
}

/// Maximizes `problem` over its integrality flags.
///
/// With `cutoff`, stops at the first integral point whose objective reaches
/// it and prunes every node whose bound cannot.
pub fn branch_and_bound(problem: &LpProblem, cutoff: Option<f64>) -> Result<MipOutcome> {
    problem.check()?;
    bnb(problem, problem.lower.clone(), problem.upper.clone(), cutoff)
}

fn bnb(problem: &LpProblem, lower: Vec<f64>, upper: Vec<f64>, cutoff: Option<f64>) -> Result<MipOutcome> {
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let root_certified;
    match solve_bounded(problem, &lower, &upper)? {
        LpOutcome::Infeasible => return Ok(MipOutcome::Infeasible),
        LpOutcome::Unbounded => return Err(Error::Config("relaxation is unbounded".into())),
        LpOutcome::Optimal(sol) => {
            root_certified = sol.unique && most_fractional(&sol.x, &problem.integer).is_none();
            heap.push(Node {
                bound: sol.objective,
                seq,
                lower,
                upper,
                x: sol.x,
            });
        }
    }
    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let mut explored = 0usize;
    while let Some(node) = heap.pop() {
        explored += 1;
        if explored > NODE_LIMIT {
            return Err(Error::TooLarge(format!("branch-and-bound exceeded {NODE_LIMIT} nodes")));
        }
        if let Some(c) = cutoff {
            if node.bound < c {
                break;
            }
        }
        if let Some((_, best)) = &incumbent {
            if node.bound <= best + OBJECTIVE_TOL {
                break;
            }
        }
        let Some(k) = most_fractional(&node.x, &problem.integer) else {
            let x: Vec<f64> = node
                .x
                .iter()
                .zip(&problem.integer)
                .map(|(&v, &int)| if int { v.round() } else { v })
                .collect();
            let objective = problem.objective_value(&x);
            if cutoff.is_some() {
                return Ok(MipOutcome::Optimal {
                    x,
                    objective,
                    root_certified,
                });
            }
            if incumbent.as_ref().is_none_or(|(_, best)| objective > *best) {
                incumbent = Some((x, objective));
            }
            continue;
        };
        let v = node.x[k];
        let children = [(node.lower[k], v.floor()), (v.ceil(), node.upper[k])];
        for (lo, hi) in children {
            let mut lower = node.lower.clone();
            let mut upper = node.upper.clone();
            lower[k] = lo;
            upper[k] = hi;
            if let LpOutcome::Optimal(sol) = solve_bounded(problem, &lower, &upper)? {
                seq += 1;
                heap.push(Node {
                    bound: sol.objective,
                    seq,
                    lower,
                    upper,
                    x: sol.x,
                });
            }
        }
    }
    Ok(match incumbent {
        Some((x, objective)) => MipOutcome::Optimal {
            x,
            objective,
            root_certified,
        },
        None => MipOutcome::Infeasible,
    })
}

pub fn solve_allocation(scores: &ScoreMatrix, config: &AllocationConfig) -> Result<Allocation> {
    solve_allocation_with(scores, config, SolveMode::Exact)
}

pub fn solve_allocation_with(scores: &ScoreMatrix, config: &AllocationConfig, mode: SolveMode) -> Result<Allocation> {
    let problem = build_allocation_problem(scores, config)?;
    if let Some(family) = config.infeasibility() {
        return Ok(Allocation::infeasible(config, family));
    }
    let lp = &problem.lp;
    let nx = problem.num_assignment_vars();

    if mode == SolveMode::RelaxationOnly {
        return Ok(match solve_bounded(lp, &lp.lower, &lp.upper)? {
            LpOutcome::Optimal(sol) => Allocation {
                channels: problem.channels,
                candidates: problem.candidates,
                assignment: sol.x[..nx].to_vec(),
                slacks: problem
                    .categories
                    .iter()
                    .enumerate()
                    .map(|(s, &c)| (c, sol.x[problem.slack_var(s)]))
                    .collect(),
                objective: sol.objective,
                status: AllocationStatus::RelaxationOnly,
            },
            _ => Allocation::infeasible(config, ConstraintFamily::PerChannelBound),
        });
    }

    let (mut x, best, certified) = match bnb(lp, lp.lower.clone(), lp.upper.clone(), None)? {
        MipOutcome::Optimal {
            x,
            objective,
            root_certified,
        } => (x, objective, root_certified),
        // Fill and uniqueness alone are satisfiable once demand fits, so the
        // per-channel bound is what blocks the instance.
        MipOutcome::Infeasible => return Ok(Allocation::infeasible(config, ConstraintFamily::PerChannelBound)),
    };

    if !certified {
        // Walk the assignment in row-major order and zero each set entry if
        // some completion still reaches the optimum.
        let target = best - OBJECTIVE_TOL;
        for k in 0..nx {
            if x[k] < 0.5 {
                continue;
            }
            let mut lower = lp.lower.clone();
            let mut upper = lp.upper.clone();
            lower[..k].copy_from_slice(&x[..k]);
            upper[..k].copy_from_slice(&x[..k]);
            lower[k] = 0.0;
            upper[k] = 0.0;
            if let MipOutcome::Optimal { x: better, .. } = bnb(lp, lower, upper, Some(target))? {
                x = better;
            }
        }
    }
    Ok(Allocation::integral(scores, config, x[..nx].to_vec()))
}
