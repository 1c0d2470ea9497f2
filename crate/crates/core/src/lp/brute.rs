//! Exhaustive enumeration over assignment maps, used as a test oracle.

use super::{Allocation, AllocationConfig, ConstraintFamily, ScoreMatrix, OBJECTIVE_TOL};
use crate::{Error, Result};

/// Largest number of assignment maps the oracle will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

struct Search<'a> {
    scores: &'a ScoreMatrix,
    config: &'a AllocationConfig,
    /// Dense category slot for each candidate.
    slot_of: Vec<usize>,
    thresholds: Vec<u32>,
    demand: Vec<usize>,
    fill: Vec<usize>,
    /// `channel * slots + slot` counts.
    per_channel: Vec<u32>,
    per_category: Vec<u32>,
    choice: Vec<Option<usize>>,
    gain: f64,
    best: Option<(Vec<Option<usize>>, f64)>,
}

/// True if assignment map `a` gives a row-major smaller X than `b`.
fn lex_smaller(a: &[Option<usize>], b: &[Option<usize>], channels: usize) -> bool {
    for i in 0..channels {
        for (ca, cb) in a.iter().zip(b) {
            let (xa, xb) = (*ca == Some(i), *cb == Some(i));
            if xa != xb {
                return !xa;
            }
        }
    }
    false
}

impl Search<'_> {
    fn slots(&self) -> usize {
        self.thresholds.len()
    }

    fn leaf(&mut self) {
        if self.fill != self.demand {
            return;
        }
        let overflow: u32 = self
            .per_category
            .iter()
            .zip(&self.thresholds)
            .map(|(&k, &t)| k.saturating_sub(t))
            .sum();
        let value = self.gain - self.config.diversity_penalty * overflow as f64;
        let better = match &self.best {
            None => true,
            Some((x, best)) => {
                value > best + OBJECTIVE_TOL
                    || (value >= best - OBJECTIVE_TOL && lex_smaller(&self.choice, x, self.config.channels()))
            }
        };
        if better {
            self.best = Some((self.choice.clone(), value));
        }
    }

    fn visit(&mut self, j: usize) {
        let n = self.choice.len();
        if j == n {
            self.leaf();
            return;
        }
        let missing: usize = self.demand.iter().zip(&self.fill).map(|(d, f)| d - f).sum();
        if missing > n - j {
            return;
        }
        let slot = self.slot_of[j];
        let s = self.slots();
        self.visit(j + 1);
        for i in 0..self.config.channels() {
            if self.fill[i] == self.demand[i] || self.per_channel[i * s + slot] >= self.config.per_channel_bound {
                continue;
            }
            self.fill[i] += 1;
            self.per_channel[i * s + slot] += 1;
            self.per_category[slot] += 1;
            self.gain += self.scores.get(i, j);
            self.choice[j] = Some(i);
            self.visit(j + 1);
            self.choice[j] = None;
            self.gain -= self.scores.get(i, j);
            self.per_category[slot] -= 1;
            self.per_channel[i * s + slot] -= 1;
            self.fill[i] -= 1;
        }
    }
}

/// Exact optimum by enumerating every map from candidates to a channel or
/// to nothing. Ties go to the lexicographically smallest X.
pub fn brute_force_allocation(scores: &ScoreMatrix, config: &AllocationConfig) -> Result<Allocation> {
    config.validate()?;
    let (m, n) = (config.channels(), config.candidates());
    if scores.channels() != m || scores.candidates() != n {
        return Err(Error::Dimension(format!(
            "score matrix is {}x{}, config expects {m}x{n}",
            scores.channels(),
            scores.candidates()
        )));
    }
    let maps = (m as f64 + 1.0).powi(n as i32);
    if maps > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!("{maps} assignment maps for M={m}, N={n}")));
    }
    if config.total_demand() > n {
        return Ok(Allocation::infeasible(config, ConstraintFamily::ChannelFill));
    }
    let categories = config.categories();
    let slot_of = config
        .category_of
        .iter()
        .map(|c| categories.binary_search(c).expect("category listed"))
        .collect();
    let mut search = Search {
        scores,
        config,
        slot_of,
        thresholds: categories.iter().map(|&c| config.threshold(c)).collect(),
        demand: (0..m).map(|i| config.demand(i)).collect(),
        fill: vec![0; m],
        per_channel: vec![0; m * categories.len()],
        per_category: vec![0; categories.len()],
        choice: vec![None; n],
        gain: 0.0,
        best: None,
    };
    search.visit(0);
    let Some((choice, _)) = search.best else {
        return Ok(Allocation::infeasible(config, ConstraintFamily::PerChannelBound));
    };
    let mut assignment = vec![0.0; m * n];
    for (j, c) in choice.iter().enumerate() {
        if let Some(i) = c {
            assignment[i * n + j] = 1.0;
        }
    }
    Ok(Allocation::integral(scores, config, assignment))
}
