//! Calderón–Zygmund decomposition `f = g + Σ b_i` at height `λ`, and an
//! independent verifier of its postconditions.
//!
//! Construction:
//! 1. every positive-mass `x` with `|f(x)| > λ` gets the largest concentric
//!    candidate ball `Q_x` with `∫_Q |f|^p / μ(36Q) > λ^p/β₀`;
//! 2. [`finite_overlap_cover`] selects disjoint `Q_i` from the `Q_x`;
//! 3. `R_i` is the first `(108, C_λ^{log₂108+1})`-doubling ball among
//!    `108^k Q_i`, `k >= 1`;
//! 4. corrections `φ_i = α_i χ_{A_i}` are built greedily in increasing
//!    `r(R_i)`, with `A_k` cut down to where the earlier overlapping
//!    corrections are at most `2 C₁ λ`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balls::{coefficient_k, is_doubling, smallest_doubling_up, Analysis, Ball, DoublingParams};
use crate::covering::finite_overlap_cover;
use crate::fspaces::{self, AtomicBlock};
use crate::mspace::{DiscreteSpace, DominatingFunction, SpaceError};

/// `3·6²`, the dilation defining the hulls `R_i`.
pub const HULL_DILATION: f64 = 108.0;
/// `6²`, the dilation in the stopping condition.
pub const STOP_DILATION: f64 = 36.0;

#[derive(Debug, Error)]
pub enum CzError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("height too small: need λ^p > β₀‖f‖_p^p/‖μ‖, got λ^p = {lhs} <= {rhs}")]
    Proviso { lhs: f64, rhs: f64 },
    #[error("no stopping ball at point {0}: every candidate ball fails the threshold")]
    NoStoppingBall(usize),
    #[error("correction set of piece {piece} has zero measure")]
    NullCorrection { piece: usize },
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// One selected ball with its hull and correction `φ_i = α_i χ_{A_i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzPiece {
    pub q: Ball,
    pub r: Ball,
    /// `R_i = 108^k Q_i`.
    pub k: u32,
    pub alpha: f64,
    pub a_set: Vec<usize>,
    /// `∫ f ω_i dμ`.
    pub weighted_integral: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzDecomposition {
    pub lambda: f64,
    pub p: f64,
    pub beta0: f64,
    /// Support dilation of the weights `ω_i` (6 on metric spaces).
    pub dilation: f64,
    /// Stopping balls `Q_x`, one per point of the level set.
    pub stopping: Vec<Ball>,
    pub pieces: Vec<CzPiece>,
    /// Order in which the corrections were built.
    pub order: Vec<usize>,
    pub good: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub kappa: f64,
}

impl CzDecomposition {
    /// `ω_i` as dense vectors.
    pub fn weights(&self, space: &DiscreteSpace) -> Vec<Vec<f64>> {
        weights(space, &self.pieces.iter().map(|p| p.q).collect::<Vec<_>>(), self.dilation)
    }

    /// `φ_i` as dense vectors.
    pub fn corrections(&self, n: usize) -> Vec<Vec<f64>> {
        self.pieces
            .iter()
            .map(|p| {
                let mut v = vec![0.0; n];
                for &x in &p.a_set {
                    v[x] = p.alpha;
                }
                v
            })
            .collect()
    }

    /// `b_i = f ω_i - φ_i`.
    pub fn blocks(&self, space: &DiscreteSpace, f: &[f64]) -> Vec<Vec<f64>> {
        let w = self.weights(space);
        let phi = self.corrections(space.len());
        w.iter()
            .zip(&phi)
            .map(|(w, p)| (0..space.len()).map(|x| f[x] * w[x] - p[x]).collect())
            .collect()
    }
}

fn weights(space: &DiscreteSpace, qs: &[Ball], dilation: f64) -> Vec<Vec<f64>> {
    let n = space.len();
    let members: Vec<Vec<bool>> = qs
        .iter()
        .map(|q| {
            let d = q.dilate(dilation);
            (0..n).map(|x| d.contains(space, x)).collect()
        })
        .collect();
    let count: Vec<f64> = (0..n)
        .map(|x| members.iter().filter(|m| m[x]).count() as f64)
        .collect();
    members
        .iter()
        .map(|m| (0..n).map(|x| if m[x] { 1.0 / count[x] } else { 0.0 }).collect())
        .collect()
}

/// `β` of the hull doubling condition: `C_λ^{log₂108 + 1}`.
pub fn hull_beta(lambda: &DominatingFunction) -> f64 {
    lambda.c_lambda().powf(HULL_DILATION.log2() + 1.0)
}

pub fn cz_decompose(analysis: &Analysis<'_>, f: &[f64], lambda: f64, p: f64) -> Result<CzDecomposition, CzError> {
    let space = analysis.space;
    space.check_function(f)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(CzError::Param(format!("height must be positive, got {lambda}")));
    }
    if !(p >= 1.0) || !p.is_finite() {
        return Err(CzError::Param(format!("p must be >= 1, got {p}")));
    }
    let beta0 = analysis.beta0;
    let lp = lambda.powf(p);
    let fp: f64 = space.lp_norm(f, p).powf(p);
    let rhs = beta0 * fp / space.total_mass();
    if !(lp > rhs) {
        return Err(CzError::Proviso { lhs: lp, rhs });
    }
    let n = space.len();
    let threshold = lp / beta0;
    let index = &analysis.index;
    let abs_p: Vec<f64> = f.iter().map(|v| v.abs().powf(p)).collect();
    let pre = index.weighted_prefix(space, &abs_p);

    // (a) stopping balls
    let level: Vec<usize> = (0..n).filter(|&x| f[x].abs() > lambda && space.mass(x) > 0.0).collect();
    let stopping: Vec<Ball> = level
        .par_iter()
        .map(|&x| {
            let range = index.balls_at(x);
            range
                .rev()
                .find(|&id| {
                    let r = index.radius(id);
                    let denom = index.measure_within(x, STOP_DILATION * r);
                    denom > 0.0 && pre.sum(x, index.count(id)) / denom > threshold
                })
                .map(|id| index.ball(id))
                .ok_or(CzError::NoStoppingBall(x))
        })
        .collect::<Result<_, _>>()?;
    let selection = finite_overlap_cover(space, &stopping);
    let qs: Vec<Ball> = selection.selected.iter().map(|&i| stopping[i]).collect();
    let dilation = selection.dilation;
    let w = weights(space, &qs, dilation);

    // (b) hulls and corrections
    let hull_params = DoublingParams::new(HULL_DILATION, hull_beta(analysis.lambda), beta0)
        .map_err(|e| CzError::Param(e.to_string()))?;
    let mut pieces: Vec<CzPiece> = Vec::with_capacity(qs.len());
    for (i, q) in qs.iter().enumerate() {
        let (r, j) = smallest_doubling_up(space, analysis.lambda, &q.dilate(HULL_DILATION), &hull_params)
            .map_err(|e| CzError::Param(e.to_string()))?;
        let weighted_integral: f64 = (0..n).map(|x| f[x] * w[i][x] * space.mass(x)).sum();
        pieces.push(CzPiece {
            q: *q,
            r,
            k: j + 1,
            alpha: 0.0,
            a_set: Vec::new(),
            weighted_integral,
        });
    }
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    order.sort_by(|a, b| pieces[*a].r.radius.total_cmp(&pieces[*b].r.radius).then(a.cmp(b)));
    let hull_members: Vec<Vec<bool>> = pieces
        .iter()
        .map(|pc| (0..n).map(|x| pc.r.contains(space, x)).collect())
        .collect();
    let overlaps = |a: usize, b: usize| (0..n).any(|x| hull_members[a][x] && hull_members[b][x]);
    // Earlier overlapping hulls, per position in the processing order.
    let earlier: Vec<Vec<usize>> = order
        .iter()
        .enumerate()
        .map(|(pos, &k)| order[..pos].iter().copied().filter(|&j| overlaps(j, k)).collect())
        .collect();
    let mut c1: f64 = 0.0;
    for (pos, &k) in order.iter().enumerate() {
        let mu_r = space.ball_measure(pieces[k].r.center, pieces[k].r.radius);
        let s: f64 = earlier[pos].iter().map(|&j| pieces[j].weighted_integral.abs()).sum();
        c1 = c1.max(s / (lambda * mu_r));
    }
    let mut phi_sum = vec![0.0; n];
    let mut overlap_sum = vec![0.0; n];
    for (pos, &k) in order.iter().enumerate() {
        let a_set: Vec<usize> = if earlier[pos].is_empty() || c1 == 0.0 {
            (0..n).filter(|&x| hull_members[k][x]).collect()
        } else {
            overlap_sum.iter_mut().for_each(|v| *v = 0.0);
            for &j in &earlier[pos] {
                for &x in &pieces[j].a_set {
                    overlap_sum[x] += pieces[j].alpha.abs();
                }
            }
            (0..n)
                .filter(|&x| hull_members[k][x] && overlap_sum[x] <= 2.0 * c1 * lambda)
                .collect()
        };
        let mu_a = space.measure(&a_set);
        if !(mu_a > 0.0) {
            return Err(CzError::NullCorrection { piece: k });
        }
        let alpha = pieces[k].weighted_integral / mu_a;
        for &x in &a_set {
            phi_sum[x] += alpha.abs();
        }
        pieces[k].alpha = alpha;
        pieces[k].a_set = a_set;
    }
    let c2 = pieces.iter().map(|pc| pc.alpha.abs()).fold(0.0, f64::max) / lambda;
    let kappa = phi_sum.iter().copied().fold(0.0, f64::max) / lambda;

    let covered: Vec<bool> = (0..n).map(|x| w.iter().any(|wi| wi[x] > 0.0)).collect();
    let mut good: Vec<f64> = (0..n).map(|x| if covered[x] { 0.0 } else { f[x] }).collect();
    for pc in &pieces {
        for &x in &pc.a_set {
            good[x] += pc.alpha;
        }
    }
    Ok(CzDecomposition {
        lambda,
        p,
        beta0,
        dilation,
        stopping,
        pieces,
        order,
        good,
        c1,
        c2,
        kappa,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzCheck {
    pub name: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzVerification {
    pub checks: Vec<CzCheck>,
    pub constants: BTreeMap<String, f64>,
    pub blocks: Vec<AtomicBlock>,
}

impl CzVerification {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CzCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&CzCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

const TOL: f64 = 1e-9;

fn le(a: f64, b: f64, scale: f64) -> bool {
    a <= b + TOL * scale.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

struct Checks(Vec<CzCheck>);

impl Checks {
    fn push(&mut self, name: &str, witness: Option<String>) {
        self.0.push(CzCheck {
            name: name.into(),
            passed: witness.is_none(),
            witness,
        });
    }
}

/// Recomputes every postcondition from `dec` and brute-force ball
/// enumeration; shares nothing with the construction beyond its output.
pub fn verify_cz(
    space: &DiscreteSpace,
    lambda_fn: &DominatingFunction,
    f: &[f64],
    dec: &CzDecomposition,
) -> Result<CzVerification, CzError> {
    space.check_function(f)?;
    let n = space.len();
    let lam = dec.lambda;
    let p = dec.p;
    let lp = lam.powf(p);
    let thr = lp / dec.beta0;
    let mut checks = Checks(Vec::new());
    let mut constants = BTreeMap::new();
    let abs_p: Vec<f64> = f.iter().map(|v| v.abs().powf(p)).collect();
    let integral_p = |members: &[usize]| -> f64 { members.iter().map(|&x| abs_p[x] * space.mass(x)).sum() };

    // disjointness of Q_i
    let q_members: Vec<Vec<usize>> = dec.pieces.iter().map(|pc| pc.q.members(space)).collect();
    let mut owner = vec![None; n];
    let mut w = None;
    'outer: for (i, m) in q_members.iter().enumerate() {
        for &x in m {
            if let Some(j) = owner[x] {
                w = Some(format!("Q_{j} and Q_{i} share point {x}"));
                break 'outer;
            }
            owner[x] = Some(i);
        }
    }
    checks.push("disjoint", w);

    // (cz1)
    let w = dec.pieces.iter().enumerate().find_map(|(i, pc)| {
        let v = integral_p(&q_members[i]) / pc.q.dilate(STOP_DILATION).measure(space);
        (!(v > thr)).then(|| format!("piece {i}: {v} <= {thr}"))
    });
    checks.push("cz1", w);

    // (cz2): every strictly larger concentric ball fails the threshold
    let w = dec.pieces.iter().enumerate().find_map(|(i, pc)| {
        space
            .candidate_radii(pc.q.center)
            .into_iter()
            .filter(|r| *r > pc.q.radius)
            .find_map(|r| {
                let m = space.ball_members(pc.q.center, r);
                let v = integral_p(&m) / space.ball_measure(pc.q.center, STOP_DILATION * r);
                (!le(v, thr, thr)).then(|| format!("piece {i}, radius {r}: {v} > {thr}"))
            })
    });
    checks.push("cz2", w);

    // ω_i, recomputed
    let qs: Vec<Ball> = dec.pieces.iter().map(|pc| pc.q).collect();
    let omega = weights(space, &qs, dec.dilation);
    let covered: Vec<bool> = (0..n).map(|x| qs.iter().any(|q| q.dilate(dec.dilation).contains(space, x))).collect();
    let w = (0..n).find_map(|x| {
        let s: f64 = omega.iter().map(|o| o[x]).sum();
        let expect = if covered[x] { 1.0 } else { 0.0 };
        ((s - expect).abs() > TOL).then(|| format!("point {x}: Σω = {s}"))
    });
    checks.push("partition_of_unity", w);

    // (cz3)
    let w = (0..n)
        .find(|&x| !covered[x] && space.mass(x) > 0.0 && f[x].abs() > lam)
        .map(|x| format!("point {x}: |f| = {} > {lam}", f[x].abs()));
    checks.push("cz3", w);

    // hulls R_i
    let hull_beta = hull_beta(lambda_fn);
    let w = dec.pieces.iter().enumerate().find_map(|(i, pc)| {
        let expect = pc.q.radius * HULL_DILATION.powi(pc.k as i32);
        if pc.r.center != pc.q.center || (pc.r.radius - expect).abs() > TOL * expect || pc.k == 0 {
            return Some(format!("piece {i}: R is not 108^k Q with k >= 1"));
        }
        if !(pc.r.radius > STOP_DILATION * pc.q.radius) {
            return Some(format!("piece {i}: r(R) <= 36 r(Q)"));
        }
        if !is_doubling(space, &pc.r, HULL_DILATION, hull_beta) {
            return Some(format!("piece {i}: R not doubling"));
        }
        let prev = pc.r.dilate(1.0 / HULL_DILATION);
        (pc.k > 1 && is_doubling(space, &prev, HULL_DILATION, hull_beta))
            .then(|| format!("piece {i}: a smaller hull 108^{} Q is already doubling", pc.k - 1))
    });
    checks.push("hull", w);

    // supp φ_i ⊆ R_i, constant sign (α_i finite)
    let w = dec.pieces.iter().enumerate().find_map(|(i, pc)| {
        if !pc.alpha.is_finite() {
            return Some(format!("piece {i}: α not finite"));
        }
        pc.a_set
            .iter()
            .find(|&&x| !pc.r.contains(space, x))
            .map(|x| format!("piece {i}: A contains {x} outside R"))
    });
    checks.push("phi_support", w);

    // (cz4)
    let fw: Vec<f64> = omega
        .iter()
        .map(|o| (0..n).map(|x| f[x] * o[x] * space.mass(x)).sum())
        .collect();
    let fw_abs: Vec<f64> = omega
        .iter()
        .map(|o| (0..n).map(|x| (f[x] * o[x]).abs() * space.mass(x)).sum())
        .collect();
    let w = dec.pieces.iter().enumerate().find_map(|(i, pc)| {
        let int_phi = pc.alpha * space.measure(&pc.a_set);
        ((int_phi - fw[i]).abs() > TOL * fw_abs[i].max(f64::MIN_POSITIVE))
            .then(|| format!("piece {i}: ∫φ = {int_phi}, ∫fω = {}", fw[i]))
    });
    checks.push("cz4", w);

    // (cz5) and the κ bound 2C₁ + C₂
    let mut phi_abs = vec![0.0; n];
    for pc in &dec.pieces {
        for &x in &pc.a_set {
            phi_abs[x] += pc.alpha.abs();
        }
    }
    let kappa = phi_abs.iter().copied().fold(0.0, f64::max) / lam;
    let w = (0..n)
        .find(|&x| !le(phi_abs[x], dec.kappa * lam, lam))
        .map(|x| format!("point {x}: Σ|φ| = {} > κλ", phi_abs[x]));
    checks.push("cz5", w);
    let mut order: Vec<usize> = (0..dec.pieces.len()).collect();
    order.sort_by(|a, b| dec.pieces[*a].r.radius.total_cmp(&dec.pieces[*b].r.radius).then(a.cmp(b)));
    let mut c1: f64 = 0.0;
    for (pos, &k) in order.iter().enumerate() {
        let rk = &dec.pieces[k].r;
        let s: f64 = order[..pos]
            .iter()
            .filter(|&&j| dec.pieces[j].r.intersects(space, rk))
            .map(|&j| fw[j].abs())
            .sum();
        c1 = c1.max(s / (lam * rk.measure(space)));
    }
    let c2 = dec.pieces.iter().map(|pc| pc.alpha.abs()).fold(0.0, f64::max) / lam;
    let w = (!le(kappa, 2.0 * c1 + c2, 2.0 * c1 + c2)).then(|| format!("κ = {kappa} > 2C₁ + C₂ = {}", 2.0 * c1 + c2));
    checks.push("kappa_bound", w);

    // μ(A_i) >= μ(R_i)/2
    let w = dec.pieces.iter().enumerate().find_map(|(i, pc)| {
        let ma = space.measure(&pc.a_set);
        let mr = pc.r.measure(space);
        (!le(mr, 2.0 * ma, mr)).then(|| format!("piece {i}: μ(A) = {ma} < μ(R)/2 = {}", mr / 2.0))
    });
    checks.push("correction_mass", w);

    // f = g + Σ b_i and ∫ b_i = 0
    let phi: Vec<Vec<f64>> = dec.corrections(n);
    let blocks: Vec<Vec<f64>> = omega
        .iter()
        .zip(&phi)
        .map(|(o, ph)| (0..n).map(|x| f[x] * o[x] - ph[x]).collect())
        .collect();
    let w = (0..n).find_map(|x| {
        let s = dec.good[x] + blocks.iter().map(|b| b[x]).sum::<f64>();
        let scale = f[x].abs() + dec.good[x].abs() + phi_abs[x];
        ((s - f[x]).abs() > TOL * scale.max(f64::MIN_POSITIVE)).then(|| format!("point {x}: g + Σb = {s}, f = {}", f[x]))
    });
    checks.push("reconstruction", w);
    let w = blocks.iter().enumerate().find_map(|(i, b)| {
        let m: f64 = (0..n).map(|x| b[x] * space.mass(x)).sum();
        (m.abs() > TOL * fw_abs[i].max(f64::MIN_POSITIVE)).then(|| format!("block {i}: ∫b = {m}"))
    });
    checks.push("block_mean_zero", w);

    // |g| <= (1 + κ) λ
    let w = (0..n)
        .find(|&x| space.mass(x) > 0.0 && !le(dec.good[x].abs(), (1.0 + kappa) * lam, lam))
        .map(|x| format!("point {x}: |g| = {}", dec.good[x].abs()));
    checks.push("good_bound", w);

    // μ(∪36Q_i) <= β₀/λ^p Σ ∫_{Q_i}|f|^p <= β₀/λ^p ‖f‖_p^p
    let mut big = vec![false; n];
    for q in &qs {
        for x in q.dilate(STOP_DILATION).members(space) {
            big[x] = true;
        }
    }
    let mu_big: f64 = (0..n).filter(|&x| big[x]).map(|x| space.mass(x)).sum();
    let mid = dec.beta0 / lp * q_members.iter().map(|m| integral_p(m)).sum::<f64>();
    let top = dec.beta0 / lp * integral_p(&(0..n).collect::<Vec<_>>());
    let w = (!(le(mu_big, mid, mid) && le(mid, top, top))).then(|| format!("{mu_big} / {mid} / {top}"));
    checks.push("level_measure", w);

    // fitted constants
    let mut cz6: f64 = 0.0;
    let mut cz61: f64 = 0.0;
    let mut k_max: f64 = 1.0;
    for (i, pc) in dec.pieces.iter().enumerate() {
        let mr = pc.r.measure(space);
        if fw_abs[i] > 0.0 {
            cz6 = cz6.max(pc.alpha.abs() * mr / fw_abs[i]);
        }
        if p > 1.0 {
            let phi_p = (pc.alpha.abs().powf(p) * space.measure(&pc.a_set)).powf(1.0 / p);
            let wf_p: f64 = (0..n).map(|x| (omega[i][x] * f[x]).abs().powf(p) * space.mass(x)).sum();
            if wf_p > 0.0 {
                cz61 = cz61.max(phi_p * mr.powf(1.0 - 1.0 / p) * lam.powf(p - 1.0) / wf_p);
            }
        }
        let k = coefficient_k(space, lambda_fn, &pc.q, &pc.r)
            .map_err(|e| CzError::Param(e.to_string()))?
            .value;
        k_max = k_max.max(k);
    }
    if p == 1.0 {
        let w = (!le(cz6, 2.0, 2.0)).then(|| format!("fitted constant {cz6} > 2"));
        checks.push("cz6", w);
    }
    constants.insert("kappa".into(), kappa);
    constants.insert("c1".into(), c1);
    constants.insert("c2".into(), c2);
    constants.insert("cz6".into(), cz6);
    if p > 1.0 {
        constants.insert("cz6_1".into(), cz61);
    }
    constants.insert("k_q_r_max".into(), k_max);
    constants.insert("pieces".into(), dec.pieces.len() as f64);

    // atomic blocks
    let atoms = fspaces::cz_atomic_blocks(space, lambda_fn, f, dec);
    let mut hardy = 0.0;
    let mut w = None;
    for (i, b) in atoms.iter().enumerate() {
        match fspaces::atomic_block_validate(space, lambda_fn, b) {
            Ok(v) => hardy += v,
            Err(e) => {
                w.get_or_insert(format!("block {i}: {e}"));
            }
        }
    }
    checks.push("atomic_blocks", w);
    constants.insert("hardy_upper".into(), hardy);
    let fp = integral_p(&(0..n).collect::<Vec<_>>());
    if fp > 0.0 {
        constants.insert("hardy_fit".into(), hardy * lam.powf(p - 1.0) / fp);
    }
    Ok(CzVerification {
        checks: checks.0,
        constants,
        blocks: atoms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mspace::tests::{line, line3};

    fn grid_space(n: usize) -> (DiscreteSpace, DominatingFunction) {
        let coords: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let s = line(&coords, &vec![1.0; n]);
        let l = DominatingFunction::floored_power(4.0, 1.0, vec![0.25; n]).unwrap();
        (s, l)
    }

    /// Grid of `n` unit masses plus one far heavy point, so that the height
    /// proviso leaves room for several spikes.
    fn padded_grid(n: usize) -> (DiscreteSpace, DominatingFunction) {
        let mut coords: Vec<f64> = (0..n).map(|i| i as f64).collect();
        coords.push(n as f64 + 50.0);
        let mut masses = vec![1.0; n];
        masses.push(20.0 * n as f64);
        let s = line(&coords, &masses);
        let l = DominatingFunction::fit_floored_power(&s, 4.0, 1.0).unwrap();
        (s, l)
    }

    #[test]
    fn empty_level_set() {
        let (s, l) = line3();
        let an = Analysis::with_default_beta0(&s, &l);
        let f = [0.001, -0.002, 0.0];
        let dec = cz_decompose(&an, &f, 1.0, 1.0).unwrap();
        assert!(dec.pieces.is_empty());
        assert_eq!(dec.good, f.to_vec());
        assert!(verify_cz(&s, &l, &f, &dec).unwrap().passed());
        let dec = cz_decompose(&an, &[0.0; 3], 1.0, 1.0).unwrap();
        assert!(dec.pieces.is_empty());
    }

    #[test]
    fn proviso_enforced() {
        let (s, l) = grid_space(10);
        let an = Analysis::with_default_beta0(&s, &l);
        let mut f = vec![0.0; 10];
        f[0] = 10.0;
        assert!(matches!(cz_decompose(&an, &f, 1.0, 1.0), Err(CzError::Proviso { .. })));
    }

    #[test]
    fn spike_on_grid() {
        let (s, l) = grid_space(300);
        let an = Analysis::with_default_beta0(&s, &l);
        let mut f = vec![0.0; 300];
        f[150] = 10.0;
        let dec = cz_decompose(&an, &f, 8.0, 1.0).unwrap();
        assert_eq!(dec.pieces.len(), 1);
        let q = dec.pieces[0].q;
        assert_eq!(q.center, 150);
        // 10/(73·1) > 8/217 while 10/(2·36r+1) for r = 4 gives 10/289 < 8/217.
        assert_eq!(q.radius, 3.0);
        let v = verify_cz(&s, &l, &f, &dec).unwrap();
        assert!(v.passed(), "{:?}", v.failures());
        assert_eq!(v.blocks.len(), 1);
    }

    #[test]
    fn corrupted_alpha_is_caught() {
        let (s, l) = padded_grid(60);
        let an = Analysis::with_default_beta0(&s, &l);
        let mut f = vec![0.0; 61];
        f[10] = 6.0;
        f[40] = -5.0;
        let mut dec = cz_decompose(&an, &f, 4.0, 1.0).unwrap();
        assert!(verify_cz(&s, &l, &f, &dec).unwrap().passed());
        dec.pieces[0].alpha *= 2.0;
        let v = verify_cz(&s, &l, &f, &dec).unwrap();
        let c = v.check("cz4").unwrap();
        assert!(!c.passed);
        assert!(c.witness.as_ref().unwrap().starts_with("piece 0"));
    }

    #[test]
    fn roundtrip_serialization() {
        let (s, l) = padded_grid(40);
        let an = Analysis::with_default_beta0(&s, &l);
        let mut f = vec![0.0; 41];
        f[5] = 3.0;
        let dec = cz_decompose(&an, &f, 2.5, 2.0).unwrap();
        let text = serde_json::to_string(&dec).unwrap();
        let back: CzDecomposition = serde_json::from_str(&text).unwrap();
        assert_eq!(back, dec);
    }

    #[test]
    fn overlapping_hulls_use_the_threshold() {
        // Several spikes close together: hulls overlap and A_k is cut down.
        let (s, l) = padded_grid(100);
        let an = Analysis::with_default_beta0(&s, &l);
        let mut f = vec![0.0; 101];
        for (i, v) in [(20, 7.0), (26, -9.0), (33, 8.0), (60, 6.5), (67, -7.5)] {
            f[i] = v;
        }
        for p in [1.0, 2.0] {
            let dec = cz_decompose(&an, &f, 6.0, p).unwrap();
            assert!(dec.pieces.len() >= 2);
            assert!(dec.c1 > 0.0);
            let v = verify_cz(&s, &l, &f, &dec).unwrap();
            assert!(v.passed(), "p = {p}: {:?}", v.failures());
        }
    }
}
