//! Maximal operators over candidate balls: `M_(ρ)`, the doubling maximal
//! operator `N`, the sharp maximal operator `M^♯`, and `M_{p,ρ}`; plus the
//! good-λ distribution check.
//!
//! Every ball is a prefix of its center's distance order, so a ball's value
//! needs two prefix lookups. The sup at a point `x` is a suffix maximum over
//! the balls at each center that contain `x`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balls::{Analysis, Ball};
use crate::mspace::SpaceError;
use crate::pairs::{self, PairBudget, PairFamily};

#[derive(Debug, Error)]
pub enum MaximalError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaximalOp {
    Noncentered { rho: f64 },
    Doubling,
    Sharp,
    Power { p: f64, rho: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaximalResult {
    pub op: MaximalOp,
    pub values: Vec<f64>,
    /// Ball attaining the sup (for `M^♯`, the first term).
    pub witnesses: Vec<Option<Ball>>,
    /// `M^♯` only: the pair attaining the second term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_witnesses: Option<Vec<Option<(Ball, Ball)>>>,
    /// `M^♯` only: the two terms separately.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<(Vec<f64>, Vec<f64>)>,
    /// False when the pair term was sampled.
    pub exact: bool,
}

/// Propagates per-ball values to points: `out[x] = max` over balls containing `x`.
fn propagate(analysis: &Analysis<'_>, ball_value: &[Option<f64>]) -> (Vec<f64>, Vec<Option<usize>>) {
    let index = &analysis.index;
    let n = index.points();
    // Suffix maxima per center over ball ids (ascending radius).
    let mut suffix: Vec<Option<(f64, usize)>> = vec![None; index.len()];
    suffix
        .par_chunks_mut(1)
        .enumerate()
        .for_each(|(id, slot)| slot[0] = ball_value[id].map(|v| (v, id)));
    // Sequential per center; cheap relative to the value computation.
    for c in 0..n {
        let range = index.balls_at(c);
        let mut acc: Option<(f64, usize)> = None;
        for id in range.rev() {
            if let Some(v) = suffix[id] {
                if acc.is_none_or(|a| v.0 > a.0) {
                    acc = Some(v);
                }
            }
            suffix[id] = acc;
        }
    }
    (0..n)
        .into_par_iter()
        .map(|x| {
            let mut best: Option<(f64, usize)> = None;
            for c in 0..n {
                let first = index.first_ball_containing(c, x);
                if first < index.balls_at(c).end {
                    if let Some(v) = suffix[first] {
                        if best.is_none_or(|b| v.0 > b.0) {
                            best = Some(v);
                        }
                    }
                }
            }
            match best {
                Some((v, id)) => (v, Some(id)),
                None => (0.0, None),
            }
        })
        .unzip()
}

fn average_values(
    analysis: &Analysis<'_>,
    g: &[f64],
    rho: f64,
    doubling_only: bool,
) -> Vec<Option<f64>> {
    let index = &analysis.index;
    let pre = index.weighted_prefix(analysis.space, g);
    (0..index.len())
        .into_par_iter()
        .map(|id| {
            if doubling_only && !analysis.is_doubling(id) {
                return None;
            }
            let c = index.center(id);
            let denom = if rho == 1.0 {
                index.ball_measure(id)
            } else {
                index.measure_within(c, rho * index.radius(id))
            };
            if denom > 0.0 {
                Some(pre.sum(c, index.count(id)) / denom)
            } else {
                None
            }
        })
        .collect()
}

fn result(analysis: &Analysis<'_>, op: MaximalOp, values: Vec<f64>, ids: Vec<Option<usize>>) -> MaximalResult {
    MaximalResult {
        op,
        values,
        witnesses: ids.into_iter().map(|i| i.map(|id| analysis.index.ball(id))).collect(),
        pair_witnesses: None,
        terms: None,
        exact: true,
    }
}

fn check_f(analysis: &Analysis<'_>, f: &[f64]) -> Result<(), MaximalError> {
    analysis.space.check_function(f)?;
    Ok(())
}

/// `M_(ρ) f(x) = sup_{Q ∋ x} μ(ρQ)^{-1} ∫_Q |f| dμ`.
pub fn maximal_noncentered(analysis: &Analysis<'_>, f: &[f64], rho: f64) -> Result<MaximalResult, MaximalError> {
    check_f(analysis, f)?;
    if !(rho >= 1.0) {
        return Err(MaximalError::Param(format!("rho must be >= 1, got {rho}")));
    }
    let abs: Vec<f64> = f.iter().map(|v| v.abs()).collect();
    let vals = average_values(analysis, &abs, rho, false);
    let (values, ids) = propagate(analysis, &vals);
    Ok(result(analysis, MaximalOp::Noncentered { rho }, values, ids))
}

/// `N f(x)`: the sup of `m_Q |f|` over `(6, β₀)`-doubling `Q ∋ x`.
pub fn maximal_doubling(analysis: &Analysis<'_>, f: &[f64]) -> Result<MaximalResult, MaximalError> {
    check_f(analysis, f)?;
    let abs: Vec<f64> = f.iter().map(|v| v.abs()).collect();
    let vals = average_values(analysis, &abs, 1.0, true);
    let (values, ids) = propagate(analysis, &vals);
    debug_assert!(ids.iter().zip(analysis.space.masses()).all(|(i, m)| i.is_some() || *m == 0.0));
    Ok(result(analysis, MaximalOp::Doubling, values, ids))
}

/// `M_{p,ρ} f(x) = sup_{Q ∋ x} (μ(ρQ)^{-1} ∫_Q |f|^p dμ)^{1/p}`; any `p > 0`.
pub fn maximal_p(analysis: &Analysis<'_>, f: &[f64], p: f64, rho: f64) -> Result<MaximalResult, MaximalError> {
    check_f(analysis, f)?;
    if !(p > 0.0) || !(rho >= 1.0) {
        return Err(MaximalError::Param(format!("need p > 0 and rho >= 1, got p = {p}, rho = {rho}")));
    }
    let pow: Vec<f64> = f.iter().map(|v| v.abs().powf(p)).collect();
    let vals = average_values(analysis, &pow, rho, false);
    let (values, ids) = propagate(analysis, &vals);
    let values = values.into_iter().map(|v| v.powf(1.0 / p)).collect();
    Ok(result(analysis, MaximalOp::Power { p, rho }, values, ids))
}

/// Per-ball means `m_B f` (zero on null balls).
pub(crate) fn ball_means(analysis: &Analysis<'_>, f: &[f64]) -> Vec<f64> {
    let index = &analysis.index;
    let pre = index.weighted_prefix(analysis.space, f);
    (0..index.len())
        .into_par_iter()
        .map(|id| {
            let m = index.ball_measure(id);
            if m > 0.0 {
                pre.sum(index.center(id), index.count(id)) / m
            } else {
                0.0
            }
        })
        .collect()
}

/// `m_{B̃} f` for every ball.
pub(crate) fn tilde_means(analysis: &Analysis<'_>, f: &[f64]) -> Vec<f64> {
    let index = &analysis.index;
    let pre = index.weighted_prefix(analysis.space, f);
    (0..index.len())
        .into_par_iter()
        .map(|id| {
            let c = index.center(id);
            let k = analysis.tilde_count(id);
            let m = index.mass_of_prefix(c, k);
            if m > 0.0 {
                pre.sum(c, k) / m
            } else {
                0.0
            }
        })
        .collect()
}

/// `μ(ρB)^{-1} ∫_B |f - a_B|^p dμ` for every ball, with `a_B` given per ball.
pub(crate) fn oscillations(analysis: &Analysis<'_>, f: &[f64], centers: &[f64], p: f64, rho: f64) -> Vec<Option<f64>> {
    let index = &analysis.index;
    let space = analysis.space;
    (0..index.points())
        .into_par_iter()
        .flat_map_iter(|c| {
            let order = index.order(c);
            index.balls_at(c).map(move |id| {
                let denom = index.measure_within(c, rho * index.radius(id));
                if denom <= 0.0 {
                    return None;
                }
                let a = centers[id];
                let s: f64 = order[..index.count(id)]
                    .iter()
                    .map(|&y| {
                        let y = y as usize;
                        let d = (f[y] - a).abs();
                        let d = if p == 1.0 { d } else { d.powf(p) };
                        d * space.mass(y)
                    })
                    .sum();
                Some(s / denom)
            })
        })
        .collect()
}

/// `M^♯ f(x) = sup_{B ∋ x} μ(6B)^{-1} ∫_B |f - m_{B̃} f| dμ
///            + sup_{(Q,R) ∈ Δ_x} |m_Q f - m_R f| / K_{Q,R}`,
/// with `Δ_x` the doubling pairs `x ∈ Q ⊆ R`.
pub fn sharp_maximal(analysis: &Analysis<'_>, f: &[f64], budget: PairBudget) -> Result<MaximalResult, MaximalError> {
    check_f(analysis, f)?;
    let index = &analysis.index;
    let tilde = tilde_means(analysis, f);
    let first = oscillations(analysis, f, &tilde, 1.0, 6.0);
    let (t1, t1_ids) = propagate(analysis, &first);

    let means = ball_means(analysis, f);
    let sw = pairs::sweep(analysis, PairFamily::Doubling, budget, |q, r| {
        let k = analysis.k_coefficient(index.center(q), index.radius(q), index.radius(r));
        (means[q] - means[r]).abs() / k
    });
    let pair_vals: Vec<Option<f64>> = sw.best.iter().map(|b| b.map(|(v, _)| v)).collect();
    let (t2, t2_ids) = propagate(analysis, &pair_vals);
    let pair_witnesses = t2_ids
        .iter()
        .map(|q| q.and_then(|q| sw.best[q].map(|(_, r)| (index.ball(q), index.ball(r)))))
        .collect();
    let values = t1.iter().zip(&t2).map(|(a, b)| a + b).collect();
    Ok(MaximalResult {
        op: MaximalOp::Sharp,
        values,
        witnesses: t1_ids.into_iter().map(|i| i.map(|id| index.ball(id))).collect(),
        pair_witnesses: Some(pair_witnesses),
        terms: Some((t1, t2)),
        exact: sw.exact,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodLambdaParams {
    pub epsilon: f64,
    pub delta: f64,
    pub nu: f64,
    pub lambdas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodLambdaRow {
    pub lambda: f64,
    /// `μ{N f > (1+ε)λ, M^♯ f <= δλ}`.
    pub lhs: f64,
    /// `μ{N f > λ}`.
    pub rhs: f64,
    /// `lhs / rhs`, the smallest admissible `ν` (`None` when `rhs = 0`).
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodLambdaReport {
    pub rows: Vec<GoodLambdaRow>,
    pub worst_ratio: Option<f64>,
    pub holds_with_nu: bool,
    pub exact: bool,
}

/// Both sides of the good-λ inequality on a grid of heights.
pub fn good_lambda_check(
    analysis: &Analysis<'_>,
    f: &[f64],
    params: &GoodLambdaParams,
    budget: PairBudget,
) -> Result<GoodLambdaReport, MaximalError> {
    check_f(analysis, f)?;
    let space = analysis.space;
    if !(params.epsilon > 0.0 && params.delta > 0.0 && params.nu > 0.0 && params.nu < 1.0) {
        return Err(MaximalError::Param("need epsilon, delta > 0 and nu in (0, 1)".into()));
    }
    if params.lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(MaximalError::Param("heights must be positive".into()));
    }
    let l1 = space.lp_norm(f, 1.0);
    if space.integral(f).abs() > 1e-9 * l1.max(f64::MIN_POSITIVE) {
        return Err(MaximalError::Param(
            "f must have zero integral on a space of finite measure".into(),
        ));
    }
    let nf = maximal_doubling(analysis, f)?.values;
    let sharp = sharp_maximal(analysis, f, budget)?;
    let mut rows = Vec::with_capacity(params.lambdas.len());
    for &lambda in &params.lambdas {
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for x in 0..space.len() {
            if nf[x] > lambda {
                rhs += space.mass(x);
                if nf[x] > (1.0 + params.epsilon) * lambda && sharp.values[x] <= params.delta * lambda {
                    lhs += space.mass(x);
                }
            }
        }
        let ratio = (rhs > 0.0).then(|| lhs / rhs);
        rows.push(GoodLambdaRow { lambda, lhs, rhs, ratio });
    }
    let worst_ratio = rows.iter().filter_map(|r| r.ratio).fold(None, |a: Option<f64>, r| {
        Some(a.map_or(r, |a| a.max(r)))
    });
    Ok(GoodLambdaReport {
        holds_with_nu: rows.iter().all(|r| r.lhs <= params.nu * r.rhs),
        rows,
        worst_ratio,
        exact: sharp.exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balls::{coefficient_k, smallest_doubling_up, DoublingParams};
    use crate::mspace::tests::{line, line3};
    use crate::mspace::{DiscreteSpace, DominatingFunction};
    use proptest::prelude::*;

    fn grid(n: usize) -> (DiscreteSpace, DominatingFunction) {
        let coords: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let s = line(&coords, &vec![1.0; n]);
        let l = DominatingFunction::floored_power(4.0, 1.0, vec![0.25; n]).unwrap();
        (s, l)
    }

    /// All (center, radius) candidate balls, by brute force.
    fn all_balls(s: &DiscreteSpace) -> Vec<Ball> {
        (0..s.len())
            .flat_map(|c| s.candidate_radii(c).into_iter().map(move |r| Ball::new(c, r)))
            .collect()
    }

    fn mean(s: &DiscreteSpace, b: &Ball, f: &[f64]) -> f64 {
        let m = b.members(s);
        let mu = s.measure(&m);
        if mu == 0.0 {
            0.0
        } else {
            m.iter().map(|&y| f[y] * s.mass(y)).sum::<f64>() / mu
        }
    }

    fn oracle_mp(s: &DiscreteSpace, f: &[f64], p: f64, rho: f64, doubling: Option<f64>) -> Vec<f64> {
        let balls = all_balls(s);
        (0..s.len())
            .map(|x| {
                balls
                    .iter()
                    .filter(|b| b.contains(s, x))
                    .filter(|b| doubling.is_none_or(|beta| crate::balls::is_doubling(s, b, 6.0, beta)))
                    .filter_map(|b| {
                        let d = b.dilate(rho).measure(s);
                        (d > 0.0).then(|| {
                            let num: f64 = b.members(s).iter().map(|&y| f[y].abs().powf(p) * s.mass(y)).sum();
                            (num / d).powf(1.0 / p)
                        })
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    fn oracle_sharp(s: &DiscreteSpace, l: &DominatingFunction, f: &[f64]) -> Vec<f64> {
        let params = DoublingParams::standard(l);
        let balls = all_balls(s);
        let dbl: Vec<&Ball> = balls
            .iter()
            .filter(|b| crate::balls::is_doubling(s, b, 6.0, params.beta0))
            .collect();
        (0..s.len())
            .map(|x| {
                let t1 = balls
                    .iter()
                    .filter(|b| b.contains(s, x))
                    .map(|b| {
                        let (t, _) = smallest_doubling_up(s, l, b, &params).unwrap();
                        let mt = mean(s, &t, f);
                        let num: f64 = b.members(s).iter().map(|&y| (f[y] - mt).abs() * s.mass(y)).sum();
                        num / b.dilate(6.0).measure(s)
                    })
                    .fold(0.0, f64::max);
                let mut t2: f64 = 0.0;
                for q in dbl.iter().filter(|q| q.contains(s, x)) {
                    for r in dbl.iter().filter(|r| q.is_subset_of(s, r)) {
                        let k = coefficient_k_loose(s, l, q, r);
                        t2 = t2.max((mean(s, q, f) - mean(s, r, f)).abs() / k);
                    }
                }
                t1 + t2
            })
            .collect()
    }

    /// K_{Q,R} by direct summation, without the radius-order precondition.
    fn coefficient_k_loose(s: &DiscreteSpace, l: &DominatingFunction, q: &Ball, r: &Ball) -> f64 {
        let mut k = 1.0;
        for y in 0..s.len() {
            let d = s.distance(q.center, y);
            if d >= q.radius && d <= r.radius && d > 0.0 {
                k += s.mass(y) / l.eval(q.center, d);
            }
        }
        let _ = coefficient_k;
        k
    }

    fn close(a: &[f64], b: &[f64]) {
        for (x, (u, v)) in a.iter().zip(b).enumerate() {
            assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()), "x={x}: {u} vs {v}");
        }
    }

    #[test]
    fn constants_are_fixed_points() {
        let (s, l) = grid(12);
        let an = Analysis::with_default_beta0(&s, &l);
        let f = vec![-2.5; 12];
        for v in maximal_noncentered(&an, &f, 1.0).unwrap().values {
            assert!((v - 2.5).abs() < 1e-12);
        }
        for v in maximal_doubling(&an, &f).unwrap().values {
            assert!((v - 2.5).abs() < 1e-12);
        }
        for v in maximal_p(&an, &f, 3.0, 1.0).unwrap().values {
            assert!((v - 2.5).abs() < 1e-12);
        }
        for v in sharp_maximal(&an, &f, PairBudget::default()).unwrap().values {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn line3_singleton_value() {
        let (s, l) = line3();
        let an = Analysis::with_default_beta0(&s, &l);
        let r = maximal_noncentered(&an, &[0.0, 1.0, 0.0], 6.0).unwrap();
        assert_eq!(r.values[1], 1.0);
        assert_eq!(r.witnesses[1].unwrap().radius, s.eps_min());
    }

    #[test]
    fn operators_match_brute_force() {
        let s = line(&[0.0, 1.0, 1.3, 3.0, 7.0, 7.2, 12.0], &[1.0, 2.0, 0.3, 1.0, 5.0, 1.0, 0.7]);
        let l = DominatingFunction::fit_floored_power(&s, 4.0, 1.0).unwrap();
        let an = Analysis::with_default_beta0(&s, &l);
        let f = [0.0, 9.0, -1.0, 2.5, 0.0, -3.0, 1.0];
        close(&maximal_noncentered(&an, &f, 5.0).unwrap().values, &oracle_mp(&s, &f, 1.0, 5.0, None));
        close(&maximal_p(&an, &f, 2.0, 5.0).unwrap().values, &oracle_mp(&s, &f, 2.0, 5.0, None));
        close(
            &maximal_doubling(&an, &f).unwrap().values,
            &oracle_mp(&s, &f, 1.0, 1.0, Some(an.beta0)),
        );
        let sharp = sharp_maximal(&an, &f, PairBudget::default()).unwrap();
        assert!(sharp.exact);
        close(&sharp.values, &oracle_sharp(&s, &l, &f));
    }

    #[test]
    fn line3_spike_sharp_matches_double_loop() {
        let (s, l) = line3();
        let an = Analysis::with_default_beta0(&s, &l);
        let f = [0.0, 0.0, 9.0];
        close(&sharp_maximal(&an, &f, PairBudget::default()).unwrap().values, &oracle_sharp(&s, &l, &f));
        close(&maximal_p(&an, &f, 2.0, 5.0).unwrap().values, &oracle_mp(&s, &f, 2.0, 5.0, None));
        close(&maximal_doubling(&an, &f).unwrap().values, &oracle_mp(&s, &f, 1.0, 1.0, Some(an.beta0)));
    }

    #[test]
    fn witnesses_contain_their_point() {
        let (s, l) = grid(20);
        let an = Analysis::with_default_beta0(&s, &l);
        let f: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let r = maximal_noncentered(&an, &f, 2.0).unwrap();
        for (x, w) in r.witnesses.iter().enumerate() {
            assert!(w.unwrap().contains(&s, x));
        }
        let r = sharp_maximal(&an, &f, PairBudget::default()).unwrap();
        for (x, w) in r.pair_witnesses.unwrap().iter().enumerate() {
            let (q, rr) = w.unwrap();
            assert!(q.contains(&s, x) && q.is_subset_of(&s, &rr));
        }
    }

    #[test]
    fn good_lambda_zero_function() {
        let (s, l) = grid(10);
        let an = Analysis::with_default_beta0(&s, &l);
        let params = GoodLambdaParams {
            epsilon: 1.0,
            delta: 0.01,
            nu: 0.5,
            lambdas: vec![0.1, 1.0],
        };
        let rep = good_lambda_check(&an, &[0.0; 10], &params, PairBudget::default()).unwrap();
        assert!(rep.rows.iter().all(|r| r.lhs == 0.0 && r.rhs == 0.0));
        let mut f = vec![0.0; 10];
        f[0] = 1.0;
        assert!(good_lambda_check(&an, &f, &params, PairBudget::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pointwise_dominations(
            coords in proptest::collection::vec(0.0f64..40.0, 2..18),
            masses in proptest::collection::vec(0.05f64..5.0, 18),
            vals in proptest::collection::vec(-10.0f64..10.0, 18),
        ) {
            let n = coords.len();
            let s = line(&coords, &masses[..n]);
            let l = DominatingFunction::fit_floored_power(&s, 4.0, 1.0).unwrap();
            let an = Analysis::with_default_beta0(&s, &l);
            let f = &vals[..n];
            let abs: Vec<f64> = f.iter().map(|v| v.abs()).collect();
            let budget = PairBudget::new(3);
            let sharp = sharp_maximal(&an, f, budget).unwrap().values;
            let sharp_abs = sharp_maximal(&an, &abs, budget).unwrap().values;
            let m6 = maximal_noncentered(&an, f, 6.0).unwrap().values;
            let m5 = maximal_noncentered(&an, f, 5.0).unwrap().values;
            let m1 = maximal_noncentered(&an, f, 1.0).unwrap().values;
            let nf = maximal_doubling(&an, f).unwrap().values;
            for x in 0..n {
                let tol = 1e-9;
                prop_assert!(sharp[x] <= (m6[x] + 3.0 * nf[x]) * (1.0 + tol));
                prop_assert!(sharp_abs[x] <= 5.0 * an.beta0 * sharp[x] * (1.0 + tol) + 1e-300);
                prop_assert!(m6[x] <= m5[x] && m5[x] <= m1[x]);
                prop_assert!(nf[x] <= m1[x] * (1.0 + tol));
                if s.mass(x) > 0.0 {
                    prop_assert!(m1[x] >= f[x].abs() * (1.0 - tol));
                }
            }
            // Weak (1,1) for M_(5) with constant 1.
            let l1 = s.lp_norm(f, 1.0);
            for &lam in m5.iter().filter(|v| **v > 0.0) {
                for h in [lam * 0.999, lam * 0.5] {
                    let level: f64 = (0..n).filter(|&x| m5[x] > h).map(|x| s.mass(x)).sum();
                    prop_assert!(h * level <= l1 * (1.0 + 1e-9));
                }
            }
        }
    }
}
