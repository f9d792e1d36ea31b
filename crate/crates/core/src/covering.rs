//! Greedy covering selections: the Vitali `5r` family and the finite-overlap
//! `6r` family used by the Calderón–Zygmund decomposition.

use serde::{Deserialize, Serialize};

use crate::balls::Ball;
use crate::mspace::DiscreteSpace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverSelection {
    /// Indices into the input family, in selection order.
    pub selected: Vec<usize>,
    pub dilation: f64,
    /// Per point: number of dilated selected balls containing it.
    pub overlap: Vec<u32>,
}

impl CoverSelection {
    pub fn max_overlap(&self) -> u32 {
        self.overlap.iter().copied().max().unwrap_or(0)
    }
}

/// Why a selection fails its contract.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CoverViolation {
    NotDisjoint { first: usize, second: usize, point: usize },
    Uncovered { ball: usize, point: usize },
    /// A rejected ball meets no selected ball at least as large.
    Greedy { ball: usize },
}

/// `5` for metrics, `2A² + 3A` for quasi-metrics.
pub fn vitali_dilation(quasi_constant: f64) -> f64 {
    if quasi_constant <= 1.0 {
        5.0
    } else {
        2.0 * quasi_constant * quasi_constant + 3.0 * quasi_constant
    }
}

/// `6` for metrics, `2A² + 3A + 1` for quasi-metrics.
pub fn overlap_dilation(quasi_constant: f64) -> f64 {
    if quasi_constant <= 1.0 {
        6.0
    } else {
        vitali_dilation(quasi_constant) + 1.0
    }
}

fn greedy_order(balls: &[Ball]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..balls.len()).collect();
    order.sort_by(|a, b| balls[*b].radius.total_cmp(&balls[*a].radius).then(a.cmp(b)));
    order
}

fn disjoint_selection(space: &DiscreteSpace, balls: &[Ball]) -> Vec<usize> {
    let mut taken = vec![false; space.len()];
    let mut selected = Vec::new();
    for i in greedy_order(balls) {
        let members = balls[i].members(space);
        if members.iter().all(|&x| !taken[x]) {
            for x in members {
                taken[x] = true;
            }
            selected.push(i);
        }
    }
    selected
}

fn overlap_profile(space: &DiscreteSpace, balls: &[Ball], selected: &[usize], dilation: f64) -> Vec<u32> {
    let mut overlap = vec![0u32; space.len()];
    for &i in selected {
        for x in balls[i].dilate(dilation).members(space) {
            overlap[x] += 1;
        }
    }
    overlap
}

/// Greedy disjoint selection, radius descending with ties by index.
pub fn vitali_cover(space: &DiscreteSpace, balls: &[Ball]) -> CoverSelection {
    let dilation = vitali_dilation(space.quasi_constant());
    let selected = disjoint_selection(space, balls);
    let overlap = overlap_profile(space, balls, &selected, dilation);
    let out = CoverSelection {
        selected,
        dilation,
        overlap,
    };
    debug_assert_eq!(verify_cover(space, balls, &out), Ok(()));
    debug_assert_eq!(verify_greedy(space, balls, &out), Ok(()));
    out
}

/// Vitali selection, then pruning of selected balls whose `6`-dilates are
/// nested (the smaller one goes; ties drop the higher index), then repair of
/// any coverage the pruning broke.
pub fn finite_overlap_cover(space: &DiscreteSpace, balls: &[Ball]) -> CoverSelection {
    let dilation = overlap_dilation(space.quasi_constant());
    let initial = disjoint_selection(space, balls);
    let dilates: Vec<Vec<bool>> = initial
        .iter()
        .map(|&i| {
            let b = balls[i].dilate(dilation);
            (0..space.len()).map(|x| b.contains(space, x)).collect()
        })
        .collect();
    let sizes: Vec<usize> = dilates.iter().map(|d| d.iter().filter(|m| **m).count()).collect();

    // Largest dilates first so that a dropped ball is always nested in a kept one.
    let mut by_size: Vec<usize> = (0..initial.len()).collect();
    by_size.sort_by(|a, b| sizes[*b].cmp(&sizes[*a]).then(initial[*a].cmp(&initial[*b])));
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped: Vec<usize> = Vec::new();
    for s in by_size {
        let nested = kept
            .iter()
            .any(|&k| dilates[s].iter().zip(&dilates[k]).all(|(a, b)| !*a || *b));
        if nested {
            dropped.push(s);
        } else {
            kept.push(s);
        }
    }

    // Repair: re-admit dropped balls (in original selection order) until
    // every input ball is covered again.
    dropped.sort_by_key(|s| initial[*s]);
    loop {
        let mut covered = vec![false; space.len()];
        for &k in &kept {
            for (x, m) in dilates[k].iter().enumerate() {
                covered[x] |= *m;
            }
        }
        let hole = balls
            .iter()
            .flat_map(|b| b.members(space))
            .find(|&x| !covered[x]);
        let Some(x) = hole else { break };
        match dropped.iter().position(|&s| dilates[s][x]) {
            Some(pos) => kept.push(dropped.remove(pos)),
            None => {
                // Unreachable for a valid disjoint selection; keep everything.
                kept.append(&mut dropped);
                break;
            }
        }
    }
    let mut selected: Vec<usize> = kept.into_iter().map(|s| initial[s]).collect();
    selected.sort_by_key(|i| initial.iter().position(|j| j == i));
    let overlap = overlap_profile(space, balls, &selected, dilation);
    let out = CoverSelection {
        selected,
        dilation,
        overlap,
    };
    debug_assert_eq!(verify_cover(space, balls, &out), Ok(()));
    out
}

/// Exact check of disjointness and dilated coverage.
pub fn verify_cover(
    space: &DiscreteSpace,
    balls: &[Ball],
    selection: &CoverSelection,
) -> Result<(), CoverViolation> {
    let mut owner: Vec<Option<usize>> = vec![None; space.len()];
    for &i in &selection.selected {
        for x in balls[i].members(space) {
            if let Some(j) = owner[x] {
                return Err(CoverViolation::NotDisjoint {
                    first: j,
                    second: i,
                    point: x,
                });
            }
            owner[x] = Some(i);
        }
    }
    let mut covered = vec![false; space.len()];
    for &i in &selection.selected {
        for x in balls[i].dilate(selection.dilation).members(space) {
            covered[x] = true;
        }
    }
    for (b, ball) in balls.iter().enumerate() {
        if let Some(x) = ball.members(space).into_iter().find(|&x| !covered[x]) {
            return Err(CoverViolation::Uncovered { ball: b, point: x });
        }
    }
    Ok(())
}

/// Every rejected ball meets a selected ball of at least its radius — the fact
/// behind the Vitali constant. Only meaningful for [`vitali_cover`].
pub fn verify_greedy(
    space: &DiscreteSpace,
    balls: &[Ball],
    selection: &CoverSelection,
) -> Result<(), CoverViolation> {
    for (b, ball) in balls.iter().enumerate() {
        if selection.selected.contains(&b) {
            continue;
        }
        let ok = selection
            .selected
            .iter()
            .any(|&i| balls[i].radius >= ball.radius && balls[i].intersects(space, ball));
        if !ok {
            return Err(CoverViolation::Greedy { ball: b });
        }
    }
    Ok(())
}
