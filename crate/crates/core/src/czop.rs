//! Singular-integral side: kernels, truncations `T_ε`, the maximal truncation
//! `T_*`, commutators, kernel-condition fits, and the Cotlar and weak-(1,1)
//! checks.
//!
//! Kernels are complex-valued; real kernels simply have a zero imaginary part.
//! All inequalities are stated for moduli.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balls::Analysis;
use crate::maximal::{self, MaximalError};
use crate::mspace::{DiscreteSpace, DistanceKind, DominatingFunction, Geometry, SpaceError};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("kernel '{kernel}' needs {need}")]
    Geometry { kernel: String, need: String },
    #[error("unknown kernel '{0}'")]
    Unknown(String),
    #[error("no admissible mass scaling: point {point} has λ(x, r) = {lambda} at r = {radius}")]
    Rescale { point: usize, radius: f64, lambda: f64 },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Maximal(#[from] MaximalError),
}

pub trait Kernel: Send + Sync {
    /// `K(x, y)` for `x != y`; never called on the diagonal.
    fn eval(&self, x: usize, y: usize) -> Complex64;
    fn name(&self) -> String;
}

/// `(1 - conj(x)·y)^{-m}` on points of the unit ball of `C^n`.
#[derive(Clone, Debug)]
pub struct BergmanKernel {
    points: Vec<Vec<Complex64>>,
    m: f64,
}

impl BergmanKernel {
    pub fn new(points: Vec<Vec<Complex64>>, m: f64) -> Result<Self, KernelError> {
        if !(m > 0.0) {
            return Err(KernelError::Param(format!("exponent m must be positive, got {m}")));
        }
        Ok(BergmanKernel { points, m })
    }

    /// Reads complex coordinates from an interleaved (re, im) coordinate table.
    pub fn from_space(space: &DiscreteSpace, m: f64) -> Result<Self, KernelError> {
        match space.geometry() {
            Geometry::Coords { dim, points, .. } if dim % 2 == 0 => {
                Self::new(points.iter().map(|p| interleaved_to_complex(p)).collect(), m)
            }
            _ => Err(KernelError::Geometry {
                kernel: "bergman".into(),
                need: "a coordinate table with an even number of (re, im) columns".into(),
            }),
        }
    }
}

fn interleaved_to_complex(p: &[f64]) -> Vec<Complex64> {
    p.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

impl Kernel for BergmanKernel {
    fn eval(&self, x: usize, y: usize) -> Complex64 {
        let dot: Complex64 = self.points[x]
            .iter()
            .zip(&self.points[y])
            .map(|(a, b)| a.conj() * b)
            .sum();
        let base = Complex64::new(1.0, 0.0) - dot;
        if self.m.fract() == 0.0 && self.m.abs() < 64.0 {
            base.powi(-(self.m as i32))
        } else {
            base.powf(-self.m)
        }
    }

    fn name(&self) -> String {
        format!("bergman(m={})", self.m)
    }
}

/// `1 / (x - y)` on the real line.
#[derive(Clone, Debug)]
pub struct HilbertKernel {
    coords: Vec<f64>,
}

impl HilbertKernel {
    pub fn new(coords: Vec<f64>) -> Self {
        HilbertKernel { coords }
    }

    pub fn from_space(space: &DiscreteSpace) -> Result<Self, KernelError> {
        match space.geometry() {
            Geometry::Coords { dim: 1, points, .. } => Ok(Self::new(points.iter().map(|p| p[0]).collect())),
            _ => Err(KernelError::Geometry {
                kernel: "hilbert".into(),
                need: "one-dimensional coordinates".into(),
            }),
        }
    }
}

impl Kernel for HilbertKernel {
    fn eval(&self, x: usize, y: usize) -> Complex64 {
        Complex64::new(1.0 / (self.coords[x] - self.coords[y]), 0.0)
    }

    fn name(&self) -> String {
        "hilbert".into()
    }
}

/// `1 / λ(x, d(x, y))`: the extremal kernel for the size condition.
#[derive(Clone)]
pub struct InverseLambdaKernel {
    space: Arc<DiscreteSpace>,
    lambda: DominatingFunction,
}

impl InverseLambdaKernel {
    pub fn new(space: &DiscreteSpace, lambda: &DominatingFunction) -> Self {
        InverseLambdaKernel {
            space: Arc::new(space.clone()),
            lambda: lambda.clone(),
        }
    }
}

impl Kernel for InverseLambdaKernel {
    fn eval(&self, x: usize, y: usize) -> Complex64 {
        Complex64::new(1.0 / self.lambda.eval(x, self.space.distance(x, y)), 0.0)
    }

    fn name(&self) -> String {
        "inverse-lambda".into()
    }
}

/// A kernel given by a closure (custom registry entries, tests).
#[derive(Clone)]
pub struct FnKernel {
    name: String,
    rule: Arc<dyn Fn(usize, usize) -> Complex64 + Send + Sync>,
}

impl FnKernel {
    pub fn new(name: impl Into<String>, rule: impl Fn(usize, usize) -> Complex64 + Send + Sync + 'static) -> Self {
        FnKernel {
            name: name.into(),
            rule: Arc::new(rule),
        }
    }
}

impl Kernel for FnKernel {
    fn eval(&self, x: usize, y: usize) -> Complex64 {
        (self.rule)(x, y)
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Dense `N × N` kernel table (diagonal zero). Agrees exactly with the
/// streamed kernel it was built from.
#[derive(Clone, Debug)]
pub struct MatrixKernel {
    n: usize,
    name: String,
    values: Vec<Complex64>,
}

impl MatrixKernel {
    pub fn materialize(kernel: &dyn Kernel, n: usize) -> Self {
        let mut values = vec![Complex64::new(0.0, 0.0); n * n];
        values.par_chunks_mut(n.max(1)).enumerate().for_each(|(x, row)| {
            for (y, v) in row.iter_mut().enumerate() {
                if x != y {
                    *v = kernel.eval(x, y);
                }
            }
        });
        MatrixKernel {
            n,
            name: kernel.name(),
            values,
        }
    }
}

impl Kernel for MatrixKernel {
    #[inline]
    fn eval(&self, x: usize, y: usize) -> Complex64 {
        self.values[x * self.n + y]
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Kernel choice as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelSpec {
    Bergman {
        #[serde(default = "one")]
        m: f64,
    },
    Hilbert,
    InverseLambda,
    Zero,
}

fn one() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn parse(name: &str) -> Result<Self, KernelError> {
        match name {
            "bergman" => Ok(KernelSpec::Bergman { m: 1.0 }),
            "hilbert" => Ok(KernelSpec::Hilbert),
            "inverse-lambda" => Ok(KernelSpec::InverseLambda),
            "zero" => Ok(KernelSpec::Zero),
            other => Err(KernelError::Unknown(other.into())),
        }
    }

    pub fn build(&self, space: &DiscreteSpace, lambda: &DominatingFunction) -> Result<Box<dyn Kernel>, KernelError> {
        Ok(match self {
            KernelSpec::Bergman { m } => Box::new(BergmanKernel::from_space(space, *m)?),
            KernelSpec::Hilbert => Box::new(HilbertKernel::from_space(space)?),
            KernelSpec::InverseLambda => Box::new(InverseLambdaKernel::new(space, lambda)),
            KernelSpec::Zero => Box::new(FnKernel::new("zero", |_, _| Complex64::new(0.0, 0.0))),
        })
    }
}

/// `T_ε f(x) = Σ_{d(x,y) >= ε} K(x, y) f(y) μ({y})`; the diagonal is always
/// excluded (`ε > 0`).
pub fn apply_truncated(
    space: &DiscreteSpace,
    kernel: &dyn Kernel,
    f: &[f64],
    epsilon: f64,
) -> Result<Vec<Complex64>, KernelError> {
    space.check_function(f)?;
    if !(epsilon > 0.0) {
        return Err(KernelError::Param(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok((0..space.len())
        .into_par_iter()
        .map(|x| {
            let row = space.row(x);
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..space.len() {
                if row[y] >= epsilon && f[y] != 0.0 {
                    acc += kernel.eval(x, y) * (f[y] * space.mass(y));
                }
            }
            acc
        })
        .collect())
}

/// `T_{ε_min} f`, the default stand-in for the untruncated operator.
pub fn apply(space: &DiscreteSpace, kernel: &dyn Kernel, f: &[f64]) -> Result<Vec<Complex64>, KernelError> {
    apply_truncated(space, kernel, f, space.eps_min())
}

/// `T_* f(x) = max_ε |T_ε f(x)|`, exact: `T_ε f(x)` only changes when `ε`
/// crosses a distance from `x`.
pub fn maximal_truncated(space: &DiscreteSpace, kernel: &dyn Kernel, f: &[f64]) -> Result<Vec<f64>, KernelError> {
    space.check_function(f)?;
    Ok((0..space.len())
        .into_par_iter()
        .map(|x| {
            let row = space.row(x);
            let mut order: Vec<usize> = (0..space.len()).filter(|&y| row[y] > 0.0).collect();
            order.sort_by(|a, b| row[*b].total_cmp(&row[*a]));
            // Accumulate from the farthest point inwards; read off at each
            // distinct distance.
            let mut acc = Complex64::new(0.0, 0.0);
            let mut best: f64 = 0.0;
            let mut i = 0;
            while i < order.len() {
                let d = row[order[i]];
                while i < order.len() && row[order[i]] == d {
                    let y = order[i];
                    if f[y] != 0.0 {
                        acc += kernel.eval(x, y) * (f[y] * space.mass(y));
                    }
                    i += 1;
                }
                best = best.max(acc.norm());
            }
            best
        })
        .collect())
}

/// `[b, T_ε] f = b · T_ε f - T_ε (b f)`.
pub fn commutator_apply(
    space: &DiscreteSpace,
    kernel: &dyn Kernel,
    b: &[f64],
    f: &[f64],
    epsilon: f64,
) -> Result<Vec<Complex64>, KernelError> {
    space.check_function(b)?;
    let tf = apply_truncated(space, kernel, f, epsilon)?;
    let bf: Vec<f64> = b.iter().zip(f).map(|(u, v)| u * v).collect();
    let tbf = apply_truncated(space, kernel, &bf, epsilon)?;
    Ok(tf.iter().zip(&tbf).zip(b).map(|((t, s), bb)| t * *bb - s).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeFit {
    pub c_fit: f64,
    pub worst: Option<(usize, usize)>,
}

/// Smallest `C` with `|K(x,y)| <= C min{1/λ(x,d), 1/λ(y,d)}` over all pairs at
/// positive distance.
pub fn validate_kernel_size(space: &DiscreteSpace, kernel: &dyn Kernel, lambda: &DominatingFunction) -> SizeFit {
    let per_row: Vec<(f64, Option<(usize, usize)>)> = (0..space.len())
        .into_par_iter()
        .map(|x| {
            let row = space.row(x);
            let mut best = (0.0, None);
            for y in 0..space.len() {
                let d = row[y];
                if d <= 0.0 {
                    continue;
                }
                let v = kernel.eval(x, y).norm() * lambda.eval(x, d).max(lambda.eval(y, d));
                if v > best.0 {
                    best = (v, Some((x, y)));
                }
            }
            best
        })
        .collect();
    let (c_fit, worst) = per_row
        .into_iter()
        .fold((0.0, None), |a, b| if b.0 > a.0 { b } else { a });
    SizeFit { c_fit, worst }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    /// Smallest `C` for the claimed exponent.
    pub c_fit: f64,
    pub delta: f64,
    /// Largest `δ <= 1` with fitted constant at most `ceiling`.
    pub delta_fit: f64,
    pub ceiling: f64,
    /// `(x, x', y)` attaining `c_fit`.
    pub worst: Option<(usize, usize, usize)>,
    pub triples: u64,
    pub empty: bool,
}

/// Fits the regularity condition
/// `|K(x,y)-K(x',y)| + |K(y,x)-K(y,x')| <= C (d(x,x')/d(x,y))^δ / λ(x, d(x,y))`
/// over triples with `0 < d(x,x') <= shrink · d(x,y)`.
///
/// `ceiling` defaults to `4·C(0)`, four times the best constant at `δ = 0`.
pub fn validate_kernel_holder(
    space: &DiscreteSpace,
    kernel: &dyn Kernel,
    lambda: &DominatingFunction,
    shrink: f64,
    delta: f64,
    ceiling: Option<f64>,
) -> Result<HolderFit, KernelError> {
    if !(shrink > 0.0 && shrink <= 1.0) {
        return Err(KernelError::Param(format!("shrink must lie in (0, 1], got {shrink}")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(KernelError::Param(format!("delta must lie in (0, 1], got {delta}")));
    }
    let n = space.len();
    // (v, s) per triple with s = -ln t; the fit at δ is max v·e^{δ s}.
    struct Acc {
        c0: f64,
        c_delta: (f64, Option<(usize, usize, usize)>),
        /// (ln v, s); the δ allowed by a ceiling L is (ln L - ln v)/s.
        envelope: Vec<(f64, f64)>,
        triples: u64,
    }
    let accs: Vec<Acc> = (0..n)
        .into_par_iter()
        .map(|x| {
            let row = space.row(x);
            let mut acc = Acc {
                c0: 0.0,
                c_delta: (0.0, None),
                envelope: Vec::new(),
                triples: 0,
            };
            for y in 0..n {
                let dxy = row[y];
                if dxy <= 0.0 {
                    continue;
                }
                let kxy = kernel.eval(x, y);
                let kyx = kernel.eval(y, x);
                let lam = lambda.eval(x, dxy);
                for xp in 0..n {
                    let dxx = row[xp];
                    if dxx <= 0.0 || dxx > shrink * dxy || space.distance(xp, y) <= 0.0 {
                        continue;
                    }
                    let lhs = (kxy - kernel.eval(xp, y)).norm() + (kyx - kernel.eval(y, xp)).norm();
                    acc.triples += 1;
                    if lhs == 0.0 {
                        continue;
                    }
                    let v = lhs * lam;
                    let s = (dxy / dxx).ln();
                    acc.c0 = acc.c0.max(v);
                    let cd = v * (delta * s).exp();
                    if cd > acc.c_delta.0 {
                        acc.c_delta = (cd, Some((x, xp, y)));
                    }
                    acc.envelope.push((v.ln(), s));
                }
            }
            // Keep the upper envelope only: for equal s the larger ln v dominates.
            prune_envelope(&mut acc.envelope);
            acc
        })
        .collect();
    let triples: u64 = accs.iter().map(|a| a.triples).sum();
    let c0 = accs.iter().map(|a| a.c0).fold(0.0, f64::max);
    let (c_fit, worst) = accs
        .iter()
        .map(|a| a.c_delta)
        .fold((0.0, None), |a, b| if b.0 > a.0 { b } else { a });
    let ceiling = ceiling.unwrap_or(4.0 * c0);
    let delta_fit = if c0 == 0.0 {
        1.0
    } else if c0 > ceiling {
        0.0
    } else {
        let ln_ceiling = ceiling.ln();
        accs.iter()
            .flat_map(|a| a.envelope.iter())
            .filter(|(_, s)| *s > 0.0)
            .map(|(lv, s)| (ln_ceiling - lv) / s)
            .fold(1.0, f64::min)
            .max(0.0)
    };
    Ok(HolderFit {
        c_fit,
        delta,
        delta_fit,
        ceiling,
        worst,
        triples,
        empty: triples == 0,
    })
}

/// Keeps the Pareto envelope of `(ln v, s)`: the bound `(L - ln v)/s` is
/// decreasing in both coordinates whenever `L > ln v`, so a point dominated
/// in both never binds.
fn prune_envelope(points: &mut Vec<(f64, f64)>) {
    points.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.total_cmp(&a.0)));
    let mut best_lv = f64::NEG_INFINITY;
    points.retain(|p| {
        if p.0 > best_lv {
            best_lv = p.0;
            true
        } else {
            false
        }
    });
}

#[derive(Clone, Debug)]
pub struct BergmanConfig {
    /// Complex dimension `n`.
    pub n: usize,
    pub m: f64,
    /// Points of the closed unit ball of `C^n`, `0 < |x| <= 1`.
    pub points: Vec<Vec<Complex64>>,
    /// Boundary sample size for `δ(x) = d(x, H^c)`; default `256·n`.
    pub boundary_samples: Option<usize>,
    pub boundary_seed: u64,
}

/// Deterministic sample of the unit sphere of `C^n`: equally spaced angles
/// for `n = 1`, seeded normalized Gaussians otherwise.
pub fn boundary_sample(n: usize, count: usize, seed: u64) -> Vec<Vec<Complex64>> {
    if n == 1 {
        return (0..count)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / count as f64;
                vec![Complex64::new(t.cos(), t.sin())]
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v: Vec<Complex64> = (0..n)
                .map(|_| {
                    let a: f64 = rng.sample(rand_distr::StandardNormal);
                    let b: f64 = rng.sample(rand_distr::StandardNormal);
                    Complex64::new(a, b)
                })
                .collect();
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.into_iter().map(|z| z / norm).collect()
        })
        .collect()
}

fn complex_to_interleaved(p: &[Complex64]) -> Vec<f64> {
    p.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// Builds the space, `λ(x, r) = max{δ(x)^m, r^m}`, and the kernel. Masses are
/// uniform, scaled by the largest factor keeping `μ(B(x,r)) <= λ(x,r)` on the
/// candidate grid (times `1 - 1e-12`).
pub fn bergman_kernel(config: &BergmanConfig) -> Result<(DiscreteSpace, DominatingFunction, BergmanKernel), KernelError> {
    if config.n == 0 {
        return Err(KernelError::Param("complex dimension must be positive".into()));
    }
    if !(config.m > 0.0) {
        return Err(KernelError::Param(format!("m must be positive, got {}", config.m)));
    }
    for (i, p) in config.points.iter().enumerate() {
        let r = p.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if p.len() != config.n || !(r > 0.0) || r > 1.0 + 1e-12 {
            return Err(KernelError::Param(format!(
                "point {i} must be a nonzero vector of C^{} with |x| <= 1",
                config.n
            )));
        }
    }
    let coords: Vec<Vec<f64>> = config.points.iter().map(|p| complex_to_interleaved(p)).collect();
    let count = config.boundary_samples.unwrap_or(256 * config.n);
    let boundary: Vec<Vec<f64>> = boundary_sample(config.n, count, config.boundary_seed)
        .iter()
        .map(|p| complex_to_interleaved(p))
        .collect();
    let floor: Vec<f64> = coords
        .par_iter()
        .map(|x| {
            boundary
                .iter()
                .map(|b| crate::mspace::bergman_distance(x, b))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let quasi = if config.n == 1 { 1.0 } else { 2.0 };
    let npts = coords.len();
    let unit = DiscreteSpace::from_coords(coords.clone(), vec![1.0; npts], DistanceKind::Bergman, quasi)?;
    let lambda = DominatingFunction::floored_power(1.0, config.m, floor)?;
    let scale = (0..npts)
        .into_par_iter()
        .map(|x| {
            let mut best = (f64::INFINITY, 0.0);
            for r in unit.candidate_radii(x) {
                let cnt = unit.ball_measure(x, r);
                let v = lambda.eval(x, r) / cnt;
                if v < best.0 {
                    best = (v, r);
                }
            }
            (best.0, x, best.1)
        })
        .reduce(|| (f64::INFINITY, 0, 0.0), |a, b| if b.0 < a.0 { b } else { a });
    if !(scale.0 > 0.0) || !scale.0.is_finite() {
        return Err(KernelError::Rescale {
            point: scale.1,
            radius: scale.2,
            lambda: lambda.eval(scale.1, scale.2),
        });
    }
    let w = scale.0 * (1.0 - 1e-12);
    let space = DiscreteSpace::from_coords(coords, vec![w; npts], DistanceKind::Bergman, quasi)?;
    let kernel = BergmanKernel::new(config.points.clone(), config.m)?;
    Ok((space, lambda, kernel))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CotlarReport {
    pub eta: f64,
    pub ratios: Vec<Option<f64>>,
    pub constant: Option<f64>,
    pub worst: Option<usize>,
}

/// `T_* f / (M_{η,6}(T_{ε_min} f) + M_(5) f)` pointwise; `M_{η,6}` acts on the
/// modulus of `T_{ε_min} f`.
pub fn cotlar_check(
    analysis: &Analysis<'_>,
    kernel: &dyn Kernel,
    f: &[f64],
    eta: f64,
) -> Result<CotlarReport, KernelError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(KernelError::Param(format!("eta must lie in (0, 1), got {eta}")));
    }
    let space = analysis.space;
    let tstar = maximal_truncated(space, kernel, f)?;
    let tf: Vec<f64> = apply(space, kernel, f)?.iter().map(|z| z.norm()).collect();
    let m_eta = maximal::maximal_p(analysis, &tf, eta, 6.0)?.values;
    let m5 = maximal::maximal_noncentered(analysis, f, 5.0)?.values;
    let ratios: Vec<Option<f64>> = (0..space.len())
        .map(|x| {
            let d = m_eta[x] + m5[x];
            (d > 0.0).then(|| tstar[x] / d)
        })
        .collect();
    let (constant, worst) = max_with_index(&ratios);
    Ok(CotlarReport {
        eta,
        ratios,
        constant,
        worst,
    })
}

pub(crate) fn max_with_index(values: &[Option<f64>]) -> (Option<f64>, Option<usize>) {
    let mut best: Option<(f64, usize)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|b| *v > b.0) {
                best = Some((*v, i));
            }
        }
    }
    (best.map(|b| b.0), best.map(|b| b.1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub lambda: f64,
    pub level_measure: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weak11Report {
    pub rows: Vec<LevelRow>,
    /// `None` when `‖f‖₁ = 0`.
    pub constant: Option<f64>,
}

/// `λ μ{|g| > λ} / ‖f‖₁` over a grid of heights.
pub fn level_ratios(space: &DiscreteSpace, g: &[f64], l1: f64, lambdas: &[f64]) -> Weak11Report {
    if !(l1 > 0.0) {
        return Weak11Report {
            rows: Vec::new(),
            constant: None,
        };
    }
    let rows: Vec<LevelRow> = lambdas
        .iter()
        .map(|&lambda| {
            let level_measure: f64 = (0..space.len())
                .filter(|&x| g[x] > lambda)
                .map(|x| space.mass(x))
                .sum();
            LevelRow {
                lambda,
                level_measure,
                ratio: lambda * level_measure / l1,
            }
        })
        .collect();
    let constant = Some(rows.iter().map(|r| r.ratio).fold(0.0, f64::max));
    Weak11Report { rows, constant }
}

/// Geometric grid of `count` heights spanning the positive values of `g`.
pub fn height_grid(g: &[f64], count: usize) -> Vec<f64> {
    let lo = g.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    let hi = g.iter().copied().fold(0.0, f64::max);
    if !(hi > 0.0) || count == 0 {
        return Vec::new();
    }
    if count == 1 || lo >= hi {
        return vec![hi * 0.5; count.min(1)];
    }
    // Just below each endpoint so both extremes produce non-empty level sets.
    let (a, b) = ((lo * 0.999).ln(), (hi * 0.999).ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Empirical weak-(1,1) constant of `T_{ε_min}`.
pub fn weak11_check(
    space: &DiscreteSpace,
    kernel: &dyn Kernel,
    f: &[f64],
    lambdas: &[f64],
) -> Result<Weak11Report, KernelError> {
    let tf: Vec<f64> = apply(space, kernel, f)?.iter().map(|z| z.norm()).collect();
    Ok(level_ratios(space, &tf, space.lp_norm(f, 1.0), lambdas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mspace::tests::{line, line3};
    use proptest::prelude::{prop_assert, prop_assume, proptest, ProptestConfig};

    fn hilbert_line(coords: &[f64]) -> (DiscreteSpace, HilbertKernel) {
        let s = line(coords, &vec![1.0; coords.len()]);
        (s, HilbertKernel::new(coords.to_vec()))
    }

    fn zero() -> FnKernel {
        FnKernel::new("zero", |_, _| Complex64::new(0.0, 0.0))
    }

    #[test]
    fn truncation_trivia() {
        let (s, k) = hilbert_line(&[0.0, 1.0, 3.0, 4.5]);
        assert!(apply_truncated(&s, &k, &[0.0; 4], 0.1).unwrap().iter().all(|z| z.norm() == 0.0));
        let f = [1.0, -2.0, 0.5, 3.0];
        assert!(apply_truncated(&s, &k, &f, 10.0).unwrap().iter().all(|z| z.norm() == 0.0));
        assert!(apply_truncated(&s, &k, &f, 0.0).is_err());
    }

    #[test]
    fn antisymmetric_pairing_vanishes() {
        let (s, k) = hilbert_line(&[0.0, 0.7, 1.0, 2.2, 5.0, 5.5]);
        let f = [1.0, -2.0, 0.5, 3.0, -1.0, 4.0];
        for eps in [0.1, 0.5, 1.2] {
            let tf = apply_truncated(&s, &k, &f, eps).unwrap();
            let pairing: f64 = (0..6).map(|x| tf[x].re * f[x] * s.mass(x)).sum();
            assert!(pairing.abs() < 1e-12, "{pairing}");
        }
    }

    #[test]
    fn linearity() {
        let (s, k) = hilbert_line(&[0.0, 0.7, 1.0, 2.2, 5.0]);
        let f = [1.0, -2.0, 0.5, 3.0, -1.0];
        let g = [0.3, 0.0, -4.0, 1.0, 2.0];
        let fg: Vec<f64> = f.iter().zip(&g).map(|(a, b)| 2.0 * a + b).collect();
        let tf = apply(&s, &k, &f).unwrap();
        let tg = apply(&s, &k, &g).unwrap();
        let tfg = apply(&s, &k, &fg).unwrap();
        for x in 0..5 {
            assert!((tfg[x] - (tf[x] * 2.0 + tg[x])).norm() < 1e-12);
        }
    }

    fn tstar_oracle(s: &DiscreteSpace, k: &dyn Kernel, f: &[f64]) -> Vec<f64> {
        (0..s.len())
            .map(|x| {
                let mut thresholds: Vec<f64> = s.row(x).iter().copied().filter(|d| *d > 0.0).collect();
                thresholds.push(s.eps_min());
                thresholds
                    .iter()
                    .map(|&e| apply_truncated(s, k, f, e).unwrap()[x].norm())
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    #[test]
    fn maximal_truncation_single_atom() {
        let (s, k) = hilbert_line(&[0.0, 1.0, 3.0]);
        let f = [0.0, 2.0, 0.0];
        let t = maximal_truncated(&s, &k, &f).unwrap();
        assert!((t[0] - 2.0).abs() < 1e-15);
        assert!((t[2] - 1.0).abs() < 1e-15);
        assert_eq!(maximal_truncated(&s, &k, &[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn truncation_is_constant_between_distances() {
        let (s, k) = hilbert_line(&[0.0, 0.7, 1.0, 2.2, 5.0]);
        let f = [1.0, -2.0, 0.5, 3.0, -1.0];
        for x in 0..5 {
            let mut d: Vec<f64> = s.row(x).iter().copied().filter(|d| *d > 0.0).collect();
            d.sort_by(f64::total_cmp);
            d.dedup();
            for w in d.windows(2) {
                // any ε in (d_i, d_{i+1}] gives the same truncation
                let a = apply_truncated(&s, &k, &f, w[0] + 1e-9).unwrap()[x];
                let b = apply_truncated(&s, &k, &f, w[1]).unwrap()[x];
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn commutator_identities() {
        let (s, k) = hilbert_line(&[0.0, 0.7, 1.0, 2.2, 5.0]);
        let f = [1.0, -2.0, 0.5, 3.0, -1.0];
        let c = commutator_apply(&s, &k, &[3.0; 5], &f, 0.1).unwrap();
        assert!(c.iter().all(|z| z.norm() < 1e-12));
        let z = commutator_apply(&s, &k, &f, &[0.0; 5], 0.1).unwrap();
        assert!(z.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn size_fit_examples() {
        let (s, lambda) = line3();
        assert_eq!(validate_kernel_size(&s, &zero(), &lambda).c_fit, 0.0);
        let k = InverseLambdaKernel::new(&s, &lambda);
        let fit = validate_kernel_size(&s, &k, &lambda);
        assert!(fit.c_fit >= 1.0);
    }

    #[test]
    fn holder_fit_examples() {
        let (s, lambda) = line3();
        let c = FnKernel::new("const", |_, _| Complex64::new(2.0, 0.0));
        let fit = validate_kernel_holder(&s, &c, &lambda, 0.5, 1.0, None).unwrap();
        assert_eq!(fit.c_fit, 0.0);
        let two = line(&[0.0, 1.0], &[1.0, 1.0]);
        let k = HilbertKernel::new(vec![0.0, 1.0]);
        let fit = validate_kernel_holder(&two, &k, &lambda, 0.5, 1.0, None).unwrap();
        assert!(fit.empty);
    }

    fn small_bergman(count: usize, seed: u64) -> BergmanConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..count)
            .map(|_| {
                let r: f64 = rng.random_range(0.05..0.9);
                let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                vec![Complex64::from_polar(r, t)]
            })
            .collect();
        BergmanConfig {
            n: 1,
            m: 1.0,
            points,
            boundary_samples: None,
            boundary_seed: 1,
        }
    }

    #[test]
    fn bergman_single_point() {
        let cfg = BergmanConfig {
            n: 1,
            m: 1.0,
            points: vec![vec![Complex64::new(0.5, 0.0)]],
            boundary_samples: None,
            boundary_seed: 0,
        };
        let (s, lambda, _) = bergman_kernel(&cfg).unwrap();
        assert!((lambda.eval(0, 1e-9) - 0.5).abs() < 1e-12);
        assert!(crate::mspace::validate_upper_doubling(&s, &lambda).passed());
    }

    #[test]
    fn bergman_antipodal_pair() {
        let cfg = BergmanConfig {
            n: 1,
            m: 1.0,
            points: vec![vec![Complex64::new(0.5, 0.0)], vec![Complex64::new(-0.5, 0.0)]],
            boundary_samples: None,
            boundary_seed: 0,
        };
        let (s, _, k) = bergman_kernel(&cfg).unwrap();
        // ||x|-|y|| = 0, |1 - conj(x)y/(|x||y|)| = |1 - (-1)| = 2
        assert!((s.distance(0, 1) - 2.0).abs() < 1e-15);
        // 1 - conj(0.5)(-0.5) = 1.25
        assert!((k.eval(0, 1) - Complex64::new(0.8, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn bergman_sample_is_upper_doubling() {
        let (s, lambda, k) = bergman_kernel(&small_bergman(100, 3)).unwrap();
        assert!(crate::mspace::validate_upper_doubling(&s, &lambda).passed());
        let size = validate_kernel_size(&s, &k, &lambda);
        assert!(size.c_fit.is_finite() && size.c_fit > 0.0);
        let h = validate_kernel_holder(&s, &k, &lambda, 0.5, 1.0, None).unwrap();
        assert!(h.c_fit.is_finite() && h.delta_fit > 0.0 && !h.empty);
    }

    #[test]
    fn fitted_constants_are_minimal() {
        let (s, lambda, k) = bergman_kernel(&small_bergman(40, 9)).unwrap();
        let size = validate_kernel_size(&s, &k, &lambda);
        let (x, y) = size.worst.unwrap();
        let d = s.distance(x, y);
        let bound = size.c_fit * (1.0 - 1e-9) / lambda.eval(x, d).max(lambda.eval(y, d));
        assert!(k.eval(x, y).norm() > bound);
        let h = validate_kernel_holder(&s, &k, &lambda, 0.5, 0.5, None).unwrap();
        let (x, xp, y) = h.worst.unwrap();
        let dxy = s.distance(x, y);
        let t = s.distance(x, xp) / dxy;
        let lhs = (k.eval(x, y) - k.eval(xp, y)).norm() + (k.eval(y, x) - k.eval(y, xp)).norm();
        assert!(lhs > h.c_fit * (1.0 - 1e-9) * t.powf(0.5) / lambda.eval(x, dxy));
    }

    #[test]
    fn delta_fit_matches_direct_scan() {
        let (s, lambda, k) = bergman_kernel(&small_bergman(25, 4)).unwrap();
        let h = validate_kernel_holder(&s, &k, &lambda, 0.5, 1.0, None).unwrap();
        // The fitted constant at δ_fit sits at the ceiling (or δ_fit = 1).
        let at = validate_kernel_holder(&s, &k, &lambda, 0.5, h.delta_fit.max(1e-6), Some(h.ceiling)).unwrap();
        assert!(at.c_fit <= h.ceiling * (1.0 + 1e-9));
        if h.delta_fit < 1.0 {
            let above = validate_kernel_holder(&s, &k, &lambda, 0.5, (h.delta_fit * 1.01).min(1.0), None).unwrap();
            assert!(above.c_fit > h.ceiling);
        }
    }

    #[test]
    fn materialized_matches_streamed() {
        let (s, _, k) = bergman_kernel(&small_bergman(30, 5)).unwrap();
        let m = MatrixKernel::materialize(&k, s.len());
        let f: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(apply(&s, &k, &f).unwrap(), apply(&s, &m, &f).unwrap());
        assert_eq!(maximal_truncated(&s, &k, &f).unwrap(), maximal_truncated(&s, &m, &f).unwrap());
    }

    #[test]
    fn cotlar_and_weak_trivia() {
        let (s, lambda, k) = bergman_kernel(&small_bergman(20, 6)).unwrap();
        let an = Analysis::with_default_beta0(&s, &lambda);
        let rep = cotlar_check(&an, &k, &[0.0; 20], 0.5).unwrap();
        assert_eq!(rep.constant, None);
        let mut f = vec![0.0; 20];
        f[3] = 1.0;
        let rep = cotlar_check(&an, &k, &f, 0.5).unwrap();
        assert!(rep.ratios.iter().enumerate().all(|(x, r)| x == 3 || r.is_some_and(f64::is_finite)));
        assert_eq!(weak11_check(&s, &k, &[0.0; 20], &[1.0]).unwrap().constant, None);
        let tf: Vec<f64> = apply(&s, &k, &f).unwrap().iter().map(|z| z.norm()).collect();
        let top = tf.iter().copied().fold(0.0, f64::max);
        let rep = weak11_check(&s, &k, &f, &[top * 1.01]).unwrap();
        assert_eq!(rep.constant, Some(0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn tstar_matches_threshold_scan(
            coords in proptest::collection::vec(-20.0f64..20.0, 2..14),
            vals in proptest::collection::vec(-5.0f64..5.0, 14),
        ) {
            let mut coords = coords;
            coords.sort_by(f64::total_cmp);
            coords.dedup();
            prop_assume!(coords.len() >= 2);
            let n = coords.len();
            let (s, k) = hilbert_line(&coords);
            let f = &vals[..n];
            let fast = maximal_truncated(&s, &k, f).unwrap();
            let slow = tstar_oracle(&s, &k, f);
            for x in 0..n {
                prop_assert!((fast[x] - slow[x]).abs() <= 1e-9 * (1.0 + slow[x]));
                for e in s.candidate_radii(x) {
                    prop_assert!(fast[x] >= apply_truncated(&s, &k, f, e).unwrap()[x].norm() * (1.0 - 1e-12));
                }
            }
        }

        #[test]
        fn commutator_is_linear_in_f(
            vals in proptest::collection::vec(-5.0f64..5.0, 18),
        ) {
            let coords: Vec<f64> = (0..6).map(|i| i as f64 * 1.3).collect();
            let (s, k) = hilbert_line(&coords);
            let (b, rest) = vals.split_at(6);
            let (f1, f2) = rest.split_at(6);
            let sum: Vec<f64> = f1.iter().zip(f2).map(|(a, c)| a + c).collect();
            let c1 = commutator_apply(&s, &k, b, f1, 0.5).unwrap();
            let c2 = commutator_apply(&s, &k, b, f2, 0.5).unwrap();
            let c12 = commutator_apply(&s, &k, b, &sum, 0.5).unwrap();
            for x in 0..6 {
                prop_assert!((c12[x] - c1[x] - c2[x]).norm() < 1e-9);
            }
        }
    }
}
