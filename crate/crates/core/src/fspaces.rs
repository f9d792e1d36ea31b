//! RBMO norm estimators, the John–Nirenberg check, atomic blocks and their
//! Hardy norms, the duality pairing, and the `K`-chain inequality.
//!
//! All RBMO numbers use the canonical choice `f_B = m_{B̃} f` or `m_B f` and
//! are upper-bound estimators: no infimum over other collections is taken.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balls::{coefficient_k, Analysis, Ball};
use crate::czdecomp::{cz_decompose, CzDecomposition, CzError};
use crate::czop::{self, max_with_index, Kernel, KernelError};
use crate::maximal::{self, ball_means, oscillations, tilde_means, MaximalError};
use crate::mspace::{DiscreteSpace, DominatingFunction};
use crate::pairs::{self, PairBudget, PairFamily};

#[derive(Debug, Error)]
pub enum FspaceError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Maximal(#[from] MaximalError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Cz(#[from] CzError),
}

/// Which RBMO constant to estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RbmoForm {
    /// All balls: `μ(6B)⁻¹∫_B|f - m_B f|` and
    /// `|m_Q f - m_R f| / (K_{Q,R}(μ(6Q)/μ(Q) + μ(6R)/μ(R)))`.
    Balls,
    /// Doubling balls only: `μ(B)⁻¹∫_B|f - m_B f|` and `|m_Q f - m_R f| / K_{Q,R}`.
    Doubling,
    /// `μ(6B)⁻¹∫_B|f - m_{B̃} f|` over all balls and the doubling pair term.
    Star,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RbmoEstimate {
    pub form: RbmoForm,
    pub value: f64,
    pub oscillation: f64,
    pub compatibility: f64,
    pub ball_witness: Option<Ball>,
    pub pair_witness: Option<(Ball, Ball)>,
    /// `f_B` per candidate ball id.
    #[serde(skip)]
    pub f_b: Vec<f64>,
    pub exact: bool,
}

pub fn rbmo_with(
    analysis: &Analysis<'_>,
    f: &[f64],
    form: RbmoForm,
    budget: PairBudget,
) -> Result<RbmoEstimate, FspaceError> {
    analysis.space.check_function(f).map_err(MaximalError::from)?;
    let index = &analysis.index;
    let means = ball_means(analysis, f);
    let (f_b, rho) = match form {
        RbmoForm::Balls => (means.clone(), 6.0),
        RbmoForm::Doubling => (means.clone(), 1.0),
        RbmoForm::Star => (tilde_means(analysis, f), 6.0),
    };
    let mut osc = oscillations(analysis, f, &f_b, 1.0, rho);
    if form == RbmoForm::Doubling {
        for (id, v) in osc.iter_mut().enumerate() {
            if !analysis.is_doubling(id) {
                *v = None;
            }
        }
    }
    let (oscillation, ball_id) = max_with_index(&osc);

    let sw = match form {
        RbmoForm::Balls => {
            let ratio6: Vec<f64> = (0..index.len())
                .into_par_iter()
                .map(|id| {
                    let m = index.ball_measure(id);
                    if m > 0.0 {
                        index.measure_within(index.center(id), 6.0 * index.radius(id)) / m
                    } else {
                        0.0
                    }
                })
                .collect();
            pairs::sweep(analysis, PairFamily::All, budget, |q, r| {
                if ratio6[q] == 0.0 || ratio6[r] == 0.0 {
                    return 0.0;
                }
                let k = analysis.k_coefficient(index.center(q), index.radius(q), index.radius(r));
                (means[q] - means[r]).abs() / (k * (ratio6[q] + ratio6[r]))
            })
        }
        RbmoForm::Doubling | RbmoForm::Star => pairs::sweep(analysis, PairFamily::Doubling, budget, |q, r| {
            let k = analysis.k_coefficient(index.center(q), index.radius(q), index.radius(r));
            (means[q] - means[r]).abs() / k
        }),
    };
    let mut compatibility = 0.0;
    let mut pair_witness = None;
    for (q, b) in sw.best.iter().enumerate() {
        if let Some((v, r)) = b {
            if *v > compatibility {
                compatibility = *v;
                pair_witness = Some((index.ball(q), index.ball(*r)));
            }
        }
    }
    let oscillation = oscillation.unwrap_or(0.0);
    Ok(RbmoEstimate {
        form,
        value: oscillation.max(compatibility),
        oscillation,
        compatibility,
        ball_witness: ball_id.map(|id| index.ball(id)),
        pair_witness,
        f_b,
        exact: sw.exact,
    })
}

/// `C_b`.
pub fn rbmo_estimate(analysis: &Analysis<'_>, f: &[f64], budget: PairBudget) -> Result<RbmoEstimate, FspaceError> {
    rbmo_with(analysis, f, RbmoForm::Balls, budget)
}

/// `C_c`.
pub fn rbmo_doubling_estimate(
    analysis: &Analysis<'_>,
    f: &[f64],
    budget: PairBudget,
) -> Result<RbmoEstimate, FspaceError> {
    rbmo_with(analysis, f, RbmoForm::Doubling, budget)
}

/// `‖f‖_*`, the normalization of the John–Nirenberg ratio.
pub fn rbmo_star(analysis: &Analysis<'_>, f: &[f64], budget: PairBudget) -> Result<RbmoEstimate, FspaceError> {
    rbmo_with(analysis, f, RbmoForm::Star, budget)
}

/// `C_b` of a complex function, combining the real and imaginary parts
/// with `hypot` (within `√2` of the complex constant either way).
pub fn rbmo_estimate_complex(
    analysis: &Analysis<'_>,
    z: &[Complex64],
    budget: PairBudget,
) -> Result<f64, FspaceError> {
    let re: Vec<f64> = z.iter().map(|v| v.re).collect();
    let im: Vec<f64> = z.iter().map(|v| v.im).collect();
    let a = rbmo_estimate(analysis, &re, budget)?.value;
    let b = rbmo_estimate(analysis, &im, budget)?.value;
    Ok(a.hypot(b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JohnNirenbergReport {
    pub p: f64,
    pub rho: f64,
    pub sup: f64,
    pub norm: f64,
    /// `None` when `f` is constant.
    pub ratio: Option<f64>,
    pub witness: Option<Ball>,
    pub exact: bool,
}

/// `sup_{B₀} (μ(ρB₀)⁻¹∫_{B₀}|f - m_{B̃₀} f|^p)^{1/p} / ‖f‖_*`.
pub fn john_nirenberg_check(
    analysis: &Analysis<'_>,
    f: &[f64],
    p: f64,
    rho: f64,
    budget: PairBudget,
) -> Result<JohnNirenbergReport, FspaceError> {
    if !(p >= 1.0) || !(rho > 1.0) {
        return Err(FspaceError::Param(format!("need p >= 1 and rho > 1, got p = {p}, rho = {rho}")));
    }
    let norm = rbmo_star(analysis, f, budget)?;
    let osc = oscillations(analysis, f, &norm.f_b, p, rho);
    let (sup, id) = max_with_index(&osc);
    let sup = sup.unwrap_or(0.0).powf(1.0 / p);
    Ok(JohnNirenbergReport {
        p,
        rho,
        sup,
        norm: norm.value,
        ratio: (norm.value > 0.0).then(|| sup / norm.value),
        witness: id.map(|id| analysis.index.ball(id)),
        exact: norm.exact,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BlockVariant {
    Infinity,
    P { p: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomicTerm {
    pub coefficient: f64,
    pub ball: Ball,
    /// Sparse `a_j`: `(point, value)`.
    pub values: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomicBlock {
    pub host: Ball,
    pub terms: Vec<AtomicTerm>,
    pub variant: BlockVariant,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Error, Serialize, Deserialize)]
pub enum BlockViolation {
    #[error("invalid block parameter: {0}")]
    Param(String),
    #[error("term {term}: ball not contained in the host")]
    NotNested { term: usize },
    #[error("term {term}: value at point {point} outside its ball")]
    OutsideBall { term: usize, point: usize },
    #[error("term {term}: size bound exceeded, margin {margin}")]
    NormBound { term: usize, margin: f64 },
    #[error("block integral {integral} is not zero")]
    MeanNonzero { integral: f64 },
}

const BLOCK_TOL: f64 = 1e-9;

fn term_norm(space: &DiscreteSpace, values: &[(usize, f64)], variant: BlockVariant) -> f64 {
    match variant {
        BlockVariant::Infinity => values
            .iter()
            .filter(|(x, _)| space.mass(*x) > 0.0)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max),
        BlockVariant::P { p } => values
            .iter()
            .map(|(x, v)| v.abs().powf(p) * space.mass(*x))
            .sum::<f64>()
            .powf(1.0 / p),
    }
}

/// `μ(ρB_j)·K_{B_j,B}` for `∞`, `μ(ρB_j)^{1-1/p}·K_{B_j,B}` for `p`: the
/// reciprocal of the size bound.
fn term_scale(
    space: &DiscreteSpace,
    lambda: &DominatingFunction,
    ball: &Ball,
    host: &Ball,
    variant: BlockVariant,
    rho: f64,
) -> Option<f64> {
    let k = coefficient_k(space, lambda, ball, host).ok()?.value;
    let m = ball.dilate(rho).measure(space);
    Some(match variant {
        BlockVariant::Infinity => m * k,
        BlockVariant::P { p } => m.powf(1.0 - 1.0 / p) * k,
    })
}

/// Checks every block invariant; returns `|b|_H = Σ|λ_j|`.
pub fn atomic_block_validate(
    space: &DiscreteSpace,
    lambda: &DominatingFunction,
    block: &AtomicBlock,
) -> Result<f64, BlockViolation> {
    if !(block.rho > 1.0) {
        return Err(BlockViolation::Param(format!("rho must exceed 1, got {}", block.rho)));
    }
    if let BlockVariant::P { p } = block.variant {
        if !(p > 1.0) || !p.is_finite() {
            return Err(BlockViolation::Param(format!("p must lie in (1, ∞), got {p}")));
        }
    }
    let n = space.len();
    let mut integral = 0.0;
    let mut scale = 0.0;
    for (j, t) in block.terms.iter().enumerate() {
        if t.ball.center >= n || !t.ball.is_subset_of(space, &block.host) {
            return Err(BlockViolation::NotNested { term: j });
        }
        if !t.coefficient.is_finite() {
            return Err(BlockViolation::Param(format!("term {j}: coefficient not finite")));
        }
        for &(x, v) in &t.values {
            if x >= n || !t.ball.contains(space, x) {
                return Err(BlockViolation::OutsideBall { term: j, point: x });
            }
            if !v.is_finite() {
                return Err(BlockViolation::Param(format!("term {j}: value at {x} not finite")));
            }
            integral += t.coefficient * v * space.mass(x);
            scale += (t.coefficient * v).abs() * space.mass(x);
        }
        let norm = term_norm(space, &t.values, block.variant);
        let s = term_scale(space, lambda, &t.ball, &block.host, block.variant, block.rho)
            .ok_or(BlockViolation::NotNested { term: j })?;
        // ‖a_j‖ <= 1/s  ⇔  ‖a_j‖·s <= 1
        let margin = norm * s - 1.0;
        if margin > BLOCK_TOL {
            return Err(BlockViolation::NormBound { term: j, margin });
        }
    }
    if integral.abs() > BLOCK_TOL * scale {
        return Err(BlockViolation::MeanNonzero { integral });
    }
    Ok(block.terms.iter().map(|t| t.coefficient.abs()).sum())
}

impl AtomicBlock {
    /// Normalizes each piece into `λ_j a_j` with the smallest admissible
    /// `|λ_j|`; zero pieces are dropped.
    pub fn from_pieces(
        space: &DiscreteSpace,
        lambda: &DominatingFunction,
        host: Ball,
        pieces: Vec<(Ball, Vec<(usize, f64)>)>,
        variant: BlockVariant,
        rho: f64,
    ) -> Self {
        let terms = pieces
            .into_iter()
            .filter_map(|(ball, values)| {
                let norm = term_norm(space, &values, variant);
                let scale = term_scale(space, lambda, &ball, &host, variant, rho)?;
                let coefficient = norm * scale;
                (coefficient > 0.0).then(|| AtomicTerm {
                    coefficient,
                    ball,
                    values: values.into_iter().map(|(x, v)| (x, v / coefficient)).collect(),
                })
            })
            .collect();
        AtomicBlock {
            host,
            terms,
            variant,
            rho,
        }
    }

    /// `Σ λ_j a_j` as a dense function.
    pub fn function(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for t in &self.terms {
            for &(x, v) in &t.values {
                out[x] += t.coefficient * v;
            }
        }
        out
    }

    pub fn hardy_norm(&self) -> f64 {
        self.terms.iter().map(|t| t.coefficient.abs()).sum()
    }
}

/// `b_i = f ω_i - φ_i` as blocks hosted by `R_i`, with pieces `f ω_i` on the
/// dilated `Q_i` and `-φ_i` on `R_i`; `ρ = 6`.
pub fn cz_atomic_blocks(
    space: &DiscreteSpace,
    lambda: &DominatingFunction,
    f: &[f64],
    dec: &CzDecomposition,
) -> Vec<AtomicBlock> {
    let variant = if dec.p > 1.0 {
        BlockVariant::P { p: dec.p }
    } else {
        BlockVariant::Infinity
    };
    let omega = dec.weights(space);
    dec.pieces
        .iter()
        .zip(&omega)
        .map(|(pc, w)| {
            let small = pc.q.dilate(dec.dilation);
            let fw: Vec<(usize, f64)> = (0..space.len())
                .filter(|&x| w[x] > 0.0 && f[x] != 0.0)
                .map(|x| (x, f[x] * w[x]))
                .collect();
            let phi: Vec<(usize, f64)> = pc.a_set.iter().map(|&x| (x, -pc.alpha)).collect();
            AtomicBlock::from_pieces(space, lambda, pc.r, vec![(small, fw), (pc.r, phi)], variant, 6.0)
        })
        .collect()
}

/// Decomposes `f` at height `λ` and returns the bad part's blocks with
/// `Σ|b_i|_H`, an upper bound for its Hardy norm.
pub fn hardy_from_cz(
    analysis: &Analysis<'_>,
    f: &[f64],
    lambda: f64,
    p: f64,
) -> Result<(Vec<AtomicBlock>, f64), FspaceError> {
    let dec = cz_decompose(analysis, f, lambda, p)?;
    let blocks = cz_atomic_blocks(analysis.space, analysis.lambda, f, &dec);
    let mut total = 0.0;
    for (i, b) in blocks.iter().enumerate() {
        total += atomic_block_validate(analysis.space, analysis.lambda, b)
            .map_err(|e| FspaceError::Param(format!("block {i}: {e}")))?;
    }
    Ok((blocks, total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityRow {
    pub pairing: f64,
    pub hardy: f64,
    pub rbmo: f64,
    /// `None` when a denominator vanishes.
    pub ratio: Option<f64>,
}

/// `|∫ b g dμ| / (|b|_H · C_b(g))` with `C_b(g)` supplied.
pub fn duality_ratio(space: &DiscreteSpace, block: &AtomicBlock, g: &[f64], rbmo_g: f64) -> DualityRow {
    let mut pairing = 0.0;
    for t in &block.terms {
        for &(x, v) in &t.values {
            pairing += t.coefficient * v * g[x] * space.mass(x);
        }
    }
    let hardy = block.hardy_norm();
    let ratio = if hardy > 0.0 && pairing == 0.0 {
        Some(0.0)
    } else {
        (hardy > 0.0 && rbmo_g > 0.0).then(|| pairing.abs() / (hardy * rbmo_g))
    };
    DualityRow {
        pairing,
        hardy,
        rbmo: rbmo_g,
        ratio,
    }
}

pub fn duality_pairing_check(
    analysis: &Analysis<'_>,
    block: &AtomicBlock,
    g: &[f64],
    budget: PairBudget,
) -> Result<DualityRow, FspaceError> {
    let c = rbmo_estimate(analysis, g, budget)?.value;
    Ok(duality_ratio(analysis.space, block, g, c))
}

/// `‖T_{ε_min} b‖₁ / |b|_H`.
pub fn hardy_to_l1_ratio(space: &DiscreteSpace, kernel: &dyn Kernel, block: &AtomicBlock) -> Result<Option<f64>, FspaceError> {
    let h = block.hardy_norm();
    if !(h > 0.0) {
        return Ok(None);
    }
    let tb = czop::apply(space, kernel, &block.function(space.len()))?;
    let l1: f64 = tb.iter().enumerate().map(|(x, z)| z.norm() * space.mass(x)).sum();
    Ok(Some(l1 / h))
}

/// `C_b(T_{ε_min} f) / ‖f‖_∞`.
pub fn rbmo_image_ratio(
    analysis: &Analysis<'_>,
    kernel: &dyn Kernel,
    f: &[f64],
    budget: PairBudget,
) -> Result<Option<f64>, FspaceError> {
    let sup = analysis.space.sup_norm(f);
    if !(sup > 0.0) {
        return Ok(None);
    }
    let tf = czop::apply(analysis.space, kernel, f)?;
    Ok(Some(rbmo_estimate_complex(analysis, &tf, budget)? / sup))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRun {
    /// Ball indices `start..=end` into the radius sequence.
    pub start: usize,
    pub end: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    /// `K_{B_i,B_{i+1}}`.
    pub consecutive: Vec<f64>,
    /// Maximal runs with every consecutive `K > 2`.
    pub runs: Vec<ChainRun>,
    /// First qualifying sub-chain violating the inequality.
    pub violation: Option<ChainRun>,
    /// Some radius equals a distance from the center to a charged point.
    pub boundary_atoms: bool,
}

impl ChainReport {
    pub fn holds(&self) -> bool {
        self.violation.is_none()
    }

    pub fn vacuous(&self) -> bool {
        self.runs.is_empty()
    }
}

/// `Σ_{i<m} K_{B_i,B_{i+1}} <= 2 K_{B_1,B_m}` on every contiguous sub-chain
/// whose consecutive coefficients all exceed 2.
pub fn chain_inequality_check(
    space: &DiscreteSpace,
    lambda: &DominatingFunction,
    center: usize,
    radii: &[f64],
) -> Result<ChainReport, FspaceError> {
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[0] < w[1])) || !(radii[0] > 0.0) {
        return Err(FspaceError::Param("radii must be positive, strictly ascending, length >= 2".into()));
    }
    space.check_index(center).map_err(MaximalError::from)?;
    let balls: Vec<Ball> = radii.iter().map(|&r| Ball::new(center, r)).collect();
    let k = |a: usize, b: usize| -> f64 {
        coefficient_k(space, lambda, &balls[a], &balls[b]).map(|r| r.value).unwrap_or(f64::NAN)
    };
    let consecutive: Vec<f64> = (0..radii.len() - 1).map(|i| k(i, i + 1)).collect();
    let row = space.row(center);
    let boundary_atoms = (0..space.len()).any(|x| space.mass(x) > 0.0 && radii.contains(&row[x]));

    let mut runs = Vec::new();
    let mut violation = None;
    let mut i = 0;
    while i < consecutive.len() {
        if !(consecutive[i] > 2.0) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < consecutive.len() && consecutive[j + 1] > 2.0 {
            j += 1;
        }
        // pairs i..=j, balls i..=j+1; every contiguous sub-chain qualifies
        for a in i..=j {
            let mut lhs = 0.0;
            for b in a..=j {
                lhs += consecutive[b];
                let rhs = 2.0 * k(a, b + 1);
                if lhs > rhs && violation.is_none() {
                    violation = Some(ChainRun {
                        start: a,
                        end: b + 1,
                        lhs,
                        rhs,
                    });
                }
            }
        }
        runs.push(ChainRun {
            start: i,
            end: j + 1,
            lhs: consecutive[i..=j].iter().sum(),
            rhs: 2.0 * k(i, j + 1),
        });
        i = j + 1;
    }
    Ok(ChainReport {
        consecutive,
        runs,
        violation,
        boundary_atoms,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CommutatorReport {
    pub p: f64,
    pub rbmo_b: f64,
    pub ratios: Vec<Option<f64>>,
    pub constant: Option<f64>,
    pub worst: Option<usize>,
    pub exact: bool,
}

/// `M^♯([b,T]f) / (C_b(b)·(M_{p,5}f + M_{p,6}(T f) + T_* f))` pointwise,
/// `T = T_{ε_min}`. `M^♯` of the complex commutator is the `hypot` of the
/// componentwise values.
pub fn commutator_pointwise_check(
    analysis: &Analysis<'_>,
    kernel: &dyn Kernel,
    b: &[f64],
    f: &[f64],
    p: f64,
    budget: PairBudget,
) -> Result<CommutatorReport, FspaceError> {
    if !(p > 1.0) {
        return Err(FspaceError::Param(format!("p must exceed 1, got {p}")));
    }
    let space = analysis.space;
    let comm = czop::commutator_apply(space, kernel, b, f, space.eps_min())?;
    let re: Vec<f64> = comm.iter().map(|z| z.re).collect();
    let im: Vec<f64> = comm.iter().map(|z| z.im).collect();
    let s_re = maximal::sharp_maximal(analysis, &re, budget)?;
    let s_im = maximal::sharp_maximal(analysis, &im, budget)?;
    let rb = rbmo_estimate(analysis, b, budget)?;
    let m5 = maximal::maximal_p(analysis, f, p, 5.0)?.values;
    let tf: Vec<f64> = czop::apply(space, kernel, f)?.iter().map(|z| z.norm()).collect();
    let m6 = maximal::maximal_p(analysis, &tf, p, 6.0)?.values;
    let tstar = czop::maximal_truncated(space, kernel, f)?;
    let bsup = space.sup_norm(b);
    let ratios: Vec<Option<f64>> = (0..space.len())
        .map(|x| {
            let num = s_re.values[x].hypot(s_im.values[x]);
            let den = m5[x] + m6[x] + tstar[x];
            if !(den > 0.0) {
                None
            } else if num <= 1e-12 * bsup * den {
                // [b, T] vanishes up to rounding (b constant)
                Some(0.0)
            } else {
                (rb.value > 0.0).then(|| num / (rb.value * den))
            }
        })
        .collect();
    let (constant, worst) = max_with_index(&ratios);
    Ok(CommutatorReport {
        p,
        rbmo_b: rb.value,
        ratios,
        constant,
        worst,
        exact: rb.exact && s_re.exact && s_im.exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::czop::HilbertKernel;
    use crate::mspace::tests::{line, line3};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    /// Double loop over candidate balls via `ball_members`.
    fn brute_cb(space: &DiscreteSpace, lambda: &DominatingFunction, f: &[f64]) -> f64 {
        let mut balls = Vec::new();
        for c in 0..space.len() {
            for r in space.candidate_radii(c) {
                balls.push(Ball::new(c, r));
            }
        }
        let mean = |b: &Ball| {
            let m = b.members(space);
            let mu = space.measure(&m);
            (mu > 0.0).then(|| m.iter().map(|&x| f[x] * space.mass(x)).sum::<f64>() / mu)
        };
        let mut best: f64 = 0.0;
        for b in &balls {
            if let Some(mb) = mean(b) {
                let s: f64 = b.members(space).iter().map(|&x| (f[x] - mb).abs() * space.mass(x)).sum();
                best = best.max(s / b.dilate(6.0).measure(space));
            }
        }
        for q in &balls {
            for r in &balls {
                if !q.is_subset_of(space, r) {
                    continue;
                }
                if let (Some(mq), Some(mr)) = (mean(q), mean(r)) {
                    let k = coefficient_k(space, lambda, q, r).unwrap().value;
                    let d = q.dilate(6.0).measure(space) / q.measure(space)
                        + r.dilate(6.0).measure(space) / r.measure(space);
                    best = best.max((mq - mr).abs() / (k * d));
                }
            }
        }
        best
    }

    #[test]
    fn constant_has_zero_norm() {
        let (s, l) = line3();
        let an = Analysis::with_default_beta0(&s, &l);
        for form in [RbmoForm::Balls, RbmoForm::Doubling, RbmoForm::Star] {
            assert_eq!(rbmo_with(&an, &[2.5; 3], form, PairBudget::default()).unwrap().value, 0.0);
        }
        let jn = john_nirenberg_check(&an, &[2.5; 3], 2.0, 2.0, PairBudget::default()).unwrap();
        assert_eq!(jn.ratio, None);
    }

    #[test]
    fn indicator_matches_double_loop() {
        let (s, l) = line3();
        let an = Analysis::with_default_beta0(&s, &l);
        for x in 0..3 {
            let mut f = [0.0; 3];
            f[x] = 1.0;
            let est = rbmo_estimate(&an, &f, PairBudget::default()).unwrap();
            let oracle = brute_cb(&s, &l, &f);
            assert!((est.value - oracle).abs() < 1e-12, "{x}: {} vs {oracle}", est.value);
            assert!(est.value > 0.0);
        }
    }

    #[test]
    fn zero_block_is_valid() {
        let (s, l) = line3();
        let b = AtomicBlock {
            host: Ball::new(1, 2.0),
            terms: vec![],
            variant: BlockVariant::Infinity,
            rho: 2.0,
        };
        assert_eq!(atomic_block_validate(&s, &l, &b), Ok(0.0));
    }

    #[test]
    fn injected_norm_violation_reports_margin() {
        let (s, l) = line3();
        let host = Ball::new(1, 2.0);
        let ball = Ball::new(1, 1.0);
        let scale = term_scale(&s, &l, &ball, &host, BlockVariant::Infinity, 2.0).unwrap();
        let v = 1.01 / scale;
        let b = AtomicBlock {
            host,
            terms: vec![AtomicTerm {
                coefficient: 1.0,
                ball,
                values: vec![(0, v), (1, -v)],
            }],
            variant: BlockVariant::Infinity,
            rho: 2.0,
        };
        match atomic_block_validate(&s, &l, &b) {
            Err(BlockViolation::NormBound { term: 0, margin }) => assert!((margin - 0.01).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let mut ok = b.clone();
        ok.terms[0].values = vec![(0, 1.0 / scale), (1, -1.0 / scale)];
        assert_eq!(atomic_block_validate(&s, &l, &ok), Ok(1.0));
        let mut skew = ok.clone();
        skew.terms[0].values[1].1 *= 0.5;
        assert!(matches!(atomic_block_validate(&s, &l, &skew), Err(BlockViolation::MeanNonzero { .. })));
        let mut outside = ok;
        outside.terms[0].values.push((2, 0.0));
        assert!(matches!(
            atomic_block_validate(&s, &l, &outside),
            Err(BlockViolation::OutsideBall { term: 0, point: 2 })
        ));
    }

    fn grid(n: usize) -> (DiscreteSpace, DominatingFunction) {
        let coords: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let s = line(&coords, &vec![1.0; n]);
        let l = DominatingFunction::floored_power(4.0, 1.0, vec![0.25; n]).unwrap();
        (s, l)
    }

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
    fn hardy_blocks_from_decomposition() {
        let (s, l) = padded_grid(120);
        let an = Analysis::with_default_beta0(&s, &l);
        let (blocks, norm) = hardy_from_cz(&an, &[0.0; 121], 1.0, 2.0).unwrap();
        assert!(blocks.is_empty());
        assert_eq!(norm, 0.0);

        let mut f = vec![0.0; 121];
        f[30] = 6.0;
        f[90] = -6.0;
        for p in [1.0, 2.0] {
            let (blocks, norm) = hardy_from_cz(&an, &f, 4.0, p).unwrap();
            assert_eq!(blocks.len(), 2);
            assert!(norm > 0.0);
            for b in &blocks {
                let h = atomic_block_validate(&s, &l, b).unwrap();
                // pairing with a constant vanishes
                let row = duality_ratio(&s, b, &[3.0; 121], 1.0);
                assert!(row.pairing.abs() <= 1e-9 * h);
                assert!(b.terms.iter().all(|t| t.ball.is_subset_of(&s, &b.host)));
            }
        }
    }

    #[test]
    fn chain_trivia() {
        let (s, l) = grid(40);
        let r = chain_inequality_check(&s, &l, 20, &[0.5, 3.5]).unwrap();
        assert!(r.holds());
        assert!(chain_inequality_check(&s, &l, 20, &[1.0]).is_err());
        assert!(chain_inequality_check(&s, &l, 20, &[2.0, 1.0]).is_err());
        // K between radius 0.5 and 0.7 is 1: nothing qualifies.
        let r = chain_inequality_check(&s, &l, 20, &[0.5, 0.7]).unwrap();
        assert!(r.vacuous());
    }

    #[test]
    fn heavy_annulus_chain() {
        // Unit grid under the tight λ = max{1, 3r}: annuli of ratio > e^1.5
        // carry K > 2.
        let coords: Vec<f64> = (0..300).map(|i| i as f64).collect();
        let s = line(&coords, &[1.0; 300]);
        let l = DominatingFunction::floored_power(3.0, 1.0, vec![1.0 / 3.0; 300]).unwrap();
        let radii = [0.5, 4.5, 25.5, 120.5];
        let r = chain_inequality_check(&s, &l, 150, &radii).unwrap();
        assert!(!r.boundary_atoms);
        assert!(!r.vacuous(), "{:?}", r.consecutive);
        assert!(r.holds(), "{:?}", r.violation);
    }

    #[test]
    fn commutator_with_constant_symbol_vanishes() {
        let coords: Vec<f64> = (0..12).map(|i| (i * i) as f64 * 0.3).collect();
        let s = line(&coords, &[1.0; 12]);
        let l = DominatingFunction::fit_floored_power(&s, 4.0, 1.0).unwrap();
        let an = Analysis::with_default_beta0(&s, &l);
        let k = HilbertKernel::new(coords.clone());
        let f: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let r = commutator_pointwise_check(&an, &k, &[1.5; 12], &f, 2.0, PairBudget::default()).unwrap();
        assert!(r.ratios.iter().all(|v| *v == Some(0.0) || v.is_none()));
        let r = commutator_pointwise_check(&an, &k, &f, &[0.0; 12], 2.0, PairBudget::default()).unwrap();
        assert_eq!(r.constant, None);
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let r = commutator_pointwise_check(&an, &k, &b, &f, 2.0, PairBudget::default()).unwrap();
        assert!(r.constant.unwrap() > 0.0 && r.constant.unwrap().is_finite());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn affine_homogeneity(
            coords in proptest::collection::vec(0.0f64..30.0, 2..14),
            raw in proptest::collection::vec(-5.0f64..5.0, 14),
            a in -3.0f64..3.0,
            c in -10.0f64..10.0,
        ) {
            let n = coords.len();
            let s = line(&coords, &vec![1.0; n]);
            let l = DominatingFunction::fit_floored_power(&s, 4.0, 1.0).unwrap();
            let an = Analysis::with_default_beta0(&s, &l);
            let f = &raw[..n];
            let g: Vec<f64> = f.iter().map(|v| a * v + c).collect();
            let cf = rbmo_estimate(&an, f, PairBudget::default()).unwrap().value;
            let cg = rbmo_estimate(&an, &g, PairBudget::default()).unwrap().value;
            let scale = 1e-9 * (1.0 + c.abs() + a.abs() * cf) ;
            prop_assert!((cg - a.abs() * cf).abs() <= scale * 10.0, "{} vs {}", cg, a.abs() * cf);
        }

        #[test]
        fn john_nirenberg_p1_is_subcase(
            coords in proptest::collection::vec(0.0f64..30.0, 2..14),
            masses in proptest::collection::vec(0.1f64..3.0, 14),
            raw in proptest::collection::vec(-5.0f64..5.0, 14),
        ) {
            let n = coords.len();
            let s = line(&coords, &masses[..n]);
            let l = DominatingFunction::fit_floored_power(&s, 4.0, 1.0).unwrap();
            let an = Analysis::with_default_beta0(&s, &l);
            let jn = john_nirenberg_check(&an, &raw[..n], 1.0, 6.0, PairBudget::default()).unwrap();
            if let Some(r) = jn.ratio {
                prop_assert!(r <= 1.0, "{}", r);
            }
        }

        #[test]
        fn chains_on_random_lines(
            coords in proptest::collection::vec(0.0f64..20.0, 2..16),
            masses in proptest::collection::vec(0.1f64..50.0, 16),
            center in 0usize..16,
        ) {
            let n = coords.len();
            let s = line(&coords, &masses[..n]);
            let l = DominatingFunction::fit_floored_power(&s, 4.0, 1.0).unwrap();
            let c = center % n;
            // midpoints between consecutive distinct distances
            let mut d: Vec<f64> = s.row(c).to_vec();
            d.sort_by(f64::total_cmp);
            d.dedup();
            let mut radii: Vec<f64> = d.windows(2).map(|w| 0.5 * (w[0] + w[1])).filter(|r| *r > 0.0).collect();
            radii.push(d.last().unwrap() + 1.0);
            if radii.len() >= 2 {
                let r = chain_inequality_check(&s, &l, c, &radii).unwrap();
                prop_assert!(!r.boundary_atoms);
                prop_assert!(r.holds(), "{:?}", r.violation);
            }
        }
    }
}
