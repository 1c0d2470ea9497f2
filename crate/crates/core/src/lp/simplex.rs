//! Dense two-phase primal simplex over a general bounded LP.
//!
//! Fixed variables are substituted out, the rest are shifted to a zero lower
//! bound, and finite upper bounds become rows unless a nonnegative `<=` row
//! already implies them.

use super::problem::{LpProblem, Relation};
use crate::{Error, Result};

pub const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-7;
const MAX_ITERS: usize = 100_000;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct FractionalSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Every nonbasic column prices strictly negative: the optimum is the
    /// unique maximizer of the relaxation.
    pub unique: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(FractionalSolution),
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows x (cols + 1)`; last column is the right-hand side.
    t: Vec<f64>,
    basis: Vec<usize>,
    /// Reduced costs for the current phase (maximization).
    d: Vec<f64>,
    /// Columns that may never enter (artificials in phase 2).
    blocked: Vec<bool>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.t[r * (self.cols + 1) + self.cols]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let pv = self.t[pr * w + pc];
        for k in 0..w {
            self.t[pr * w + k] /= pv;
        }
        let prow: Vec<f64> = self.t[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.t[r * w + pc];
            if f == 0.0 {
                continue;
            }
            for (k, &pk) in prow.iter().enumerate() {
                self.t[r * w + k] -= f * pk;
            }
        }
        let f = self.d[pc];
        if f != 0.0 {
            for k in 0..self.cols {
                self.d[k] -= f * prow[k];
            }
        }
        self.basis[pr] = pc;
    }

    /// Runs simplex iterations on the current reduced costs.
    fn optimize(&mut self) -> Result<bool> {
        let mut degenerate_run = 0;
        for _ in 0..MAX_ITERS {
            let bland = degenerate_run >= DEGENERATE_SWITCH;
            let mut enter = None;
            let mut best = OPT_TOL;
            for j in 0..self.cols {
                if self.blocked[j] || self.d[j] <= OPT_TOL {
                    continue;
                }
                if bland {
                    enter = Some(j);
                    break;
                }
                if self.d[j] > best {
                    best = self.d[j];
                    enter = Some(j);
                }
            }
            let Some(pc) = enter else { return Ok(true) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12 || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr]) {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((pr, ratio)) = leave else { return Ok(false) };
            if ratio.abs() <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(pr, pc);
        }
        Err(Error::Config("simplex iteration limit reached".into()))
    }
}

/// Solves the continuous relaxation of `problem` (integrality ignored).
pub fn solve_relaxation(problem: &LpProblem) -> Result<LpOutcome> {
    problem.check()?;
    solve_bounded(problem, &problem.lower, &problem.upper)
}

/// Like [`solve_relaxation`] with the variable bounds replaced.
pub(crate) fn solve_bounded(problem: &LpProblem, lower: &[f64], upper: &[f64]) -> Result<LpOutcome> {
    let nv = problem.num_vars();
    let mut fixed: Vec<Option<f64>> = vec![None; nv];
    for k in 0..nv {
        let (lo, hi) = (lower[k], upper[k]);
        if !lo.is_finite() {
            return Err(Error::Config(format!("variable {k} has no finite lower bound")));
        }
        if hi < lo - PIVOT_TOL {
            return Ok(LpOutcome::Infeasible);
        }
        if hi - lo <= PIVOT_TOL {
            fixed[k] = Some(lo);
        }
    }
    // Column index of each free variable in the tableau.
    let mut col_of = vec![usize::MAX; nv];
    let mut free_vars = Vec::new();
    for k in 0..nv {
        if fixed[k].is_none() {
            col_of[k] = free_vars.len();
            free_vars.push(k);
        }
    }
    let n_struct = free_vars.len();

    // Rows over shifted free variables: (coeffs by column, relation, rhs).
    let mut rows: Vec<(Vec<(usize, f64)>, Relation, f64)> = Vec::new();
    for c in &problem.constraints {
        let mut rhs = c.rhs;
        let mut coeffs = Vec::new();
        for &(k, a) in &c.coeffs {
            match fixed[k] {
                Some(v) => rhs -= a * v,
                None => {
                    rhs -= a * lower[k];
                    if a != 0.0 {
                        coeffs.push((col_of[k], a));
                    }
                }
            }
        }
        if coeffs.is_empty() {
            let ok = match c.relation {
                Relation::Le => rhs >= -PHASE1_TOL,
                Relation::Ge => rhs <= PHASE1_TOL,
                Relation::Eq => rhs.abs() <= PHASE1_TOL,
            };
            if !ok {
                return Ok(LpOutcome::Infeasible);
            }
            continue;
        }
        rows.push((coeffs, c.relation, rhs));
    }
    // Upper bounds not already implied by a nonnegative <= row.
    for (col, &k) in free_vars.iter().enumerate() {
        let span = upper[k] - lower[k];
        if !span.is_finite() {
            continue;
        }
        let implied = rows.iter().any(|(coeffs, rel, rhs)| {
            *rel == Relation::Le
                && coeffs.iter().all(|&(_, a)| a >= 0.0)
                && coeffs.iter().any(|&(c, a)| c == col && a > 0.0 && *rhs / a <= span + PIVOT_TOL)
        });
        if !implied {
            rows.push((vec![(col, 1.0)], Relation::Le, span));
        }
    }

    // Normalize to rhs >= 0 and count auxiliary columns.
    for (coeffs, rel, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            for (_, a) in coeffs.iter_mut() {
                *a = -*a;
            }
            *rhs = -*rhs;
            *rel = match *rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let cols = n_struct + n_slack + n_art;
    let w = cols + 1;
    let mut tab = Tableau {
        rows: m,
        cols,
        t: vec![0.0; m * w],
        basis: vec![0; m],
        d: vec![0.0; cols],
        blocked: vec![false; cols],
    };
    let mut is_art = vec![false; cols];
    let (mut s_next, mut a_next) = (n_struct, n_struct + n_slack);
    for (r, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        for &(c, a) in coeffs {
            tab.t[r * w + c] += a;
        }
        tab.t[r * w + cols] = *rhs;
        match rel {
            Relation::Le => {
                tab.t[r * w + s_next] = 1.0;
                tab.basis[r] = s_next;
                s_next += 1;
            }
            Relation::Ge => {
                tab.t[r * w + s_next] = -1.0;
                s_next += 1;
                tab.t[r * w + a_next] = 1.0;
                is_art[a_next] = true;
                tab.basis[r] = a_next;
                a_next += 1;
            }
            Relation::Eq => {
                tab.t[r * w + a_next] = 1.0;
                is_art[a_next] = true;
                tab.basis[r] = a_next;
                a_next += 1;
            }
        }
    }

    if n_art > 0 {
        // Phase 1: maximize -sum(artificials).
        for r in 0..m {
            if is_art[tab.basis[r]] {
                for j in 0..cols {
                    if !is_art[j] {
                        tab.d[j] += tab.at(r, j);
                    }
                }
            }
        }
        tab.optimize()?;
        let infeas: f64 = (0..m).filter(|&r| is_art[tab.basis[r]]).map(|r| tab.rhs(r)).sum();
        if infeas > PHASE1_TOL {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < tab.rows {
            if is_art[tab.basis[r]] {
                let col = (0..cols).find(|&j| !is_art[j] && tab.at(r, j).abs() > PIVOT_TOL);
                match col {
                    Some(j) => tab.pivot(r, j),
                    None => {
                        tab.t.drain(r * w..(r + 1) * w);
                        tab.basis.remove(r);
                        tab.rows -= 1;
                        continue;
                    }
                }
            }
            r += 1;
        }
        tab.blocked[..cols].copy_from_slice(&is_art[..cols]);
    }

    // Phase 2 reduced costs.
    let mut cost = vec![0.0; cols];
    for (col, &k) in free_vars.iter().enumerate() {
        cost[col] = problem.objective[k];
    }
    tab.d = cost.clone();
    for r in 0..tab.rows {
        let cb = cost[tab.basis[r]];
        if cb != 0.0 {
            for j in 0..cols {
                tab.d[j] -= cb * tab.at(r, j);
            }
        }
    }
    if !tab.optimize()? {
        return Ok(LpOutcome::Unbounded);
    }

    let mut y = vec![0.0; cols];
    for r in 0..tab.rows {
        y[tab.basis[r]] = tab.rhs(r);
    }
    let mut basic = vec![false; cols];
    for &b in &tab.basis {
        basic[b] = true;
    }
    let unique = (0..cols).all(|j| basic[j] || tab.blocked[j] || tab.d[j] < -OPT_TOL);
    let x: Vec<f64> = (0..nv)
        .map(|k| match fixed[k] {
            Some(v) => v,
            None => lower[k] + y[col_of[k]].max(0.0),
        })
        .collect();
    let objective = problem.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpOutcome::Optimal(FractionalSolution { x, objective, unique }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::problem::{Constraint, LpProblem};

    fn lp(objective: Vec<f64>, constraints: Vec<Constraint>, upper: f64) -> LpProblem {
        let n = objective.len();
        LpProblem {
            objective,
            constraints,
            lower: vec![0.0; n],
            upper: vec![upper; n],
            integer: vec![false; n],
        }
    }

    fn row(coeffs: &[(usize, f64)], relation: Relation, rhs: f64) -> Constraint {
        Constraint {
            coeffs: coeffs.to_vec(),
            relation,
            rhs,
            label: None,
        }
    }

    fn optimal(o: LpOutcome) -> FractionalSolution {
        match o {
            LpOutcome::Optimal(s) => s,
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36.
        let p = lp(
            vec![3.0, 5.0],
            vec![
                row(&[(0, 1.0)], Relation::Le, 4.0),
                row(&[(1, 2.0)], Relation::Le, 12.0),
                row(&[(0, 3.0), (1, 2.0)], Relation::Le, 18.0),
            ],
            f64::INFINITY,
        );
        let s = optimal(solve_relaxation(&p).unwrap());
        assert!((s.objective - 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
        assert!(s.unique);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max x - y s.t. x + y = 3, y >= 1, x,y <= 10 -> x=2,y=1.
        let p = lp(
            vec![1.0, -1.0],
            vec![row(&[(0, 1.0), (1, 1.0)], Relation::Eq, 3.0), row(&[(1, 1.0)], Relation::Ge, 1.0)],
            10.0,
        );
        let s = optimal(solve_relaxation(&p).unwrap());
        assert!((s.objective - 1.0).abs() < 1e-9, "{s:?}");
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let p = lp(vec![1.0], vec![row(&[(0, 1.0)], Relation::Ge, 2.0)], 1.0);
        assert_eq!(solve_relaxation(&p).unwrap(), LpOutcome::Infeasible);
        let p = lp(vec![1.0], vec![row(&[(0, 1.0)], Relation::Ge, 2.0)], f64::INFINITY);
        assert_eq!(solve_relaxation(&p).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn fixed_variables_are_substituted() {
        let mut p = lp(
            vec![1.0, 1.0],
            vec![row(&[(0, 1.0), (1, 1.0)], Relation::Le, 1.5)],
            1.0,
        );
        p.lower[0] = 1.0;
        let s = optimal(solve_relaxation(&p).unwrap());
        assert_eq!(s.x[0], 1.0);
        assert!((s.x[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn tie_is_not_unique() {
        let p = lp(vec![1.0, 1.0], vec![row(&[(0, 1.0), (1, 1.0)], Relation::Le, 1.0)], 1.0);
        let s = optimal(solve_relaxation(&p).unwrap());
        assert!(!s.unique);
        assert!((s.objective - 1.0).abs() < 1e-12);
    }
}
