//! Enumeration of nested candidate-ball pairs `Q ⊆ R`.
//!
//! For a ball `Q` and a center `c'`, the balls at `c'` containing `Q` are the
//! suffix of `c'`'s radii starting at `max_{y∈Q} d(c', y)`. The farthest
//! distances are maintained incrementally while `Q` grows at a fixed center,
//! so the sweep costs `O(N³ log N)` plus the visited pairs.
//!
//! When the total pair count exceeds the budget, each pair is kept
//! independently with a fixed probability. The draw depends only on the seed
//! and the ball ids, never on the function being analysed, so two sweeps with
//! equal geometry visit identical pairs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balls::Analysis;

pub const DEFAULT_PAIR_CAP: u64 = 100_000;
pub const DEFAULT_PAIR_SEED: u64 = 0x5eed_ba11;

/// Pair-enumeration budget: exact up to `per_point · N` pairs, sampled above.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairBudget {
    pub per_point: u64,
    pub seed: u64,
}

impl Default for PairBudget {
    fn default() -> Self {
        PairBudget {
            per_point: DEFAULT_PAIR_CAP,
            seed: DEFAULT_PAIR_SEED,
        }
    }
}

impl PairBudget {
    pub fn new(per_point: u64) -> Self {
        PairBudget {
            per_point,
            ..Default::default()
        }
    }
}

/// Which balls may play the role of `Q` and `R`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairFamily {
    All,
    Doubling,
}

/// Best pair per `Q`: `(score, R id)`; `None` if no pair was visited.
pub struct PairSweep {
    pub best: Vec<Option<(f64, usize)>>,
    pub exact: bool,
    pub total: u64,
    pub visited: u64,
}

struct Candidates<'a> {
    analysis: &'a Analysis<'a>,
    /// Per center: admissible R ids and their radii, ascending.
    r_ids: Vec<Vec<usize>>,
    r_radii: Vec<Vec<f64>>,
    family: PairFamily,
}

impl<'a> Candidates<'a> {
    fn new(analysis: &'a Analysis<'a>, family: PairFamily) -> Self {
        let index = &analysis.index;
        let mut r_ids = Vec::with_capacity(index.points());
        let mut r_radii = Vec::with_capacity(index.points());
        for c in 0..index.points() {
            let ids: Vec<usize> = index
                .balls_at(c)
                .filter(|&id| family == PairFamily::All || analysis.is_doubling(id))
                .collect();
            r_radii.push(ids.iter().map(|&id| index.radius(id)).collect());
            r_ids.push(ids);
        }
        Candidates {
            analysis,
            r_ids,
            r_radii,
            family,
        }
    }

    fn q_allowed(&self, id: usize) -> bool {
        self.family == PairFamily::All || self.analysis.is_doubling(id)
    }

    /// Calls `per_q(q, starts)` for every admissible `Q` at `center`, where
    /// `starts[c']` is the first admissible R index at `c'` containing `Q`.
    fn for_each_q(&self, center: usize, mut per_q: impl FnMut(usize, &[usize])) {
        let space = self.analysis.space;
        let index = &self.analysis.index;
        let n = index.points();
        let order = index.order(center);
        let mut farthest = vec![0.0f64; n];
        let mut starts = vec![0usize; n];
        let mut added = 0;
        for q in index.balls_at(center) {
            let count = index.count(q);
            for &y in &order[added..count] {
                let row = space.row(y as usize);
                for (f, d) in farthest.iter_mut().zip(row) {
                    if *d > *f {
                        *f = *d;
                    }
                }
            }
            added = count;
            if !self.q_allowed(q) {
                continue;
            }
            for c in 0..n {
                starts[c] = self.r_radii[c].partition_point(|r| *r < farthest[c]);
            }
            per_q(q, &starts);
        }
    }
}

fn pair_total(cands: &Candidates<'_>) -> u64 {
    let n = cands.analysis.index.points();
    (0..n)
        .into_par_iter()
        .map(|c| {
            let mut total = 0u64;
            cands.for_each_q(c, |_, starts| {
                for (c2, &s) in starts.iter().enumerate() {
                    total += (cands.r_ids[c2].len() - s) as u64;
                }
            });
            total
        })
        .sum()
}

/// Visits admissible pairs `Q ⊆ R` and keeps the best `score(q, r)` per `Q`.
pub fn sweep<F>(analysis: &Analysis<'_>, family: PairFamily, budget: PairBudget, score: F) -> PairSweep
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let cands = Candidates::new(analysis, family);
    let index = &analysis.index;
    let n = index.points();
    let total = pair_total(&cands);
    let cap = budget.per_point.saturating_mul(n as u64);
    let exact = total <= cap;
    let rate = if exact { 1.0 } else { cap as f64 / total as f64 };
    let geometric = if exact || rate <= 0.0 {
        None
    } else {
        Some(Geometric::new(rate).expect("rate in (0, 1)"))
    };

    let per_center: Vec<(Vec<(usize, Option<(f64, usize)>)>, u64)> = (0..n)
        .into_par_iter()
        .map(|c| {
            let mut out = Vec::new();
            let mut visited = 0u64;
            cands.for_each_q(c, |q, starts| {
                let mut best: Option<(f64, usize)> = None;
                let mut consider = |r: usize| {
                    let s = score(q, r);
                    if best.is_none_or(|(b, _)| s > b) {
                        best = Some((s, r));
                    }
                };
                match (&geometric, rate > 0.0) {
                    (_, false) => {}
                    (None, true) => {
                        for (c2, &s) in starts.iter().enumerate() {
                            for &r in &cands.r_ids[c2][s..] {
                                consider(r);
                                visited += 1;
                            }
                        }
                    }
                    (Some(geo), true) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
                        rng.set_stream(q as u64);
                        let mut skip = geo.sample(&mut rng);
                        for (c2, &s) in starts.iter().enumerate() {
                            let ids = &cands.r_ids[c2][s..];
                            let mut pos = 0u64;
                            let len = ids.len() as u64;
                            while pos + skip < len {
                                pos += skip;
                                consider(ids[pos as usize]);
                                visited += 1;
                                pos += 1;
                                skip = geo.sample(&mut rng);
                            }
                            skip -= len - pos;
                        }
                    }
                }
                out.push((q, best));
            });
            (out, visited)
        })
        .collect();

    let mut best = vec![None; index.len()];
    let mut visited = 0;
    for (entries, v) in per_center {
        visited += v;
        for (q, b) in entries {
            best[q] = b;
        }
    }
    PairSweep {
        best,
        exact,
        total,
        visited,
    }
}
