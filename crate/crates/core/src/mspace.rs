//! Finite non-homogeneous spaces.
//!
//! A [`DiscreteSpace`] is a finite point set with a (quasi-)distance and an
//! atomic measure. Balls are closed: `B(x, r) = { y : d(x, y) <= r }`, so the
//! distinct positive distances from a center realize every distinct concentric
//! ball exactly once. A [`DominatingFunction`] bounds ball measures from above.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest dilation factor applied to any ball (3·6², the hull factor of the
/// decomposition). Singleton balls stay singletons under every dilation up to it.
pub const MAX_DILATION: f64 = 108.0;

/// Spaces up to this size get an exhaustive quasi-triangle check at load.
pub const EXHAUSTIVE_TRIANGLE_LIMIT: usize = 160;
const TRIANGLE_SAMPLES: usize = 2_000_000;
const TRIANGLE_SEED: u64 = 0x7472_6961_6e67_6c65;
const TRIANGLE_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("space must contain at least one point")]
    Empty,
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("distance matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("invalid distance {2} at ({0}, {1})")]
    BadDistance(usize, usize, f64),
    #[error("nonzero self-distance at point {0}")]
    Diagonal(usize),
    #[error("invalid mass {1} at point {0}")]
    BadMass(usize, f64),
    #[error("total mass must be positive and finite, got {0}")]
    TotalMass(f64),
    #[error("quasi constant must be >= 1, got {0}")]
    QuasiConstant(f64),
    #[error("quasi-triangle inequality fails on ({x}, {y}, {z}): d(x,z) = {dxz} > {a} * ({dxy} + {dyz})")]
    Triangle {
        x: usize,
        y: usize,
        z: usize,
        dxz: f64,
        dxy: f64,
        dyz: f64,
        a: f64,
    },
    #[error("point {index} has {got} coordinates, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("bergman distance needs an even coordinate count (complex pairs), got {0}")]
    OddBergmanDim(usize),
    #[error("bergman distance is undefined at the origin (point {0})")]
    Origin(usize),
    #[error("non-finite function value at point {0}")]
    NonFinite(usize),
    #[error("point index {0} out of range")]
    Index(usize),
    #[error("invalid space document: {0}")]
    Schema(String),
    #[error("invalid dominating function: {0}")]
    Lambda(String),
}

/// Named distance for coordinate tables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    Euclidean,
    /// `||x| - |y|| + |1 - conj(x)·y / (|x||y|)|` on complex vectors stored as
    /// interleaved (re, im) pairs.
    Bergman,
}

impl DistanceKind {
    fn eval(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            DistanceKind::Euclidean => x
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
            DistanceKind::Bergman => bergman_distance(x, y),
        }
    }
}

/// The regular quasi-distance on the closed unit ball of `C^n`, coordinates
/// interleaved as (re, im).
pub fn bergman_distance(x: &[f64], y: &[f64]) -> f64 {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    // conj(x)·y
    let (mut re, mut im) = (0.0, 0.0);
    for (a, b) in x.chunks_exact(2).zip(y.chunks_exact(2)) {
        re += a[0] * b[0] + a[1] * b[1];
        im += a[0] * b[1] - a[1] * b[0];
    }
    let s = nx * ny;
    let (re, im) = (1.0 - re / s, -im / s);
    (nx - ny).abs() + (re * re + im * im).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    Coords {
        dim: usize,
        points: Vec<Vec<f64>>,
        distance: DistanceKind,
    },
    Matrix,
}

/// On-disk form of a space. `kind` is `"coords"` or `"matrix"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceFile {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<DistanceKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<Vec<f64>>,
    pub masses: Vec<f64>,
    #[serde(default = "unit_quasi")]
    pub quasi_constant: f64,
}

fn unit_quasi() -> f64 {
    1.0
}

/// A finite (quasi-)metric measure space with atomic masses.
#[derive(Clone, Debug)]
pub struct DiscreteSpace {
    n: usize,
    dist: Vec<f64>,
    masses: Vec<f64>,
    total_mass: f64,
    quasi_constant: f64,
    min_positive: Option<f64>,
    geometry: Geometry,
}

impl DiscreteSpace {
    pub fn from_coords(
        points: Vec<Vec<f64>>,
        masses: Vec<f64>,
        distance: DistanceKind,
        quasi_constant: f64,
    ) -> Result<Self, SpaceError> {
        let n = points.len();
        if n == 0 {
            return Err(SpaceError::Empty);
        }
        let dim = points[0].len();
        for (index, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(SpaceError::Dimension {
                    index,
                    expected: dim,
                    got: p.len(),
                });
            }
            if let Some(v) = p.iter().find(|v| !v.is_finite()) {
                return Err(SpaceError::BadDistance(index, index, *v));
            }
        }
        if distance == DistanceKind::Bergman {
            if dim % 2 != 0 {
                return Err(SpaceError::OddBergmanDim(dim));
            }
            if let Some(i) = points.iter().position(|p| p.iter().all(|v| *v == 0.0)) {
                return Err(SpaceError::Origin(i));
            }
        }
        let mut dist = vec![0.0; n * n];
        dist.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, d) in row.iter_mut().enumerate() {
                if i != j {
                    *d = distance.eval(&points[i], &points[j]);
                }
            }
        });
        // Exact symmetry regardless of floating evaluation order.
        for i in 0..n {
            for j in (i + 1)..n {
                let v = dist[i * n + j];
                dist[j * n + i] = v;
            }
        }
        let geometry = Geometry::Coords {
            dim,
            points,
            distance,
        };
        Self::build(n, dist, masses, quasi_constant, geometry)
    }

    /// Builds a space from a row-major `n × n` distance matrix.
    pub fn from_matrix(
        dist: Vec<f64>,
        masses: Vec<f64>,
        quasi_constant: f64,
    ) -> Result<Self, SpaceError> {
        let n = masses.len();
        if n == 0 {
            return Err(SpaceError::Empty);
        }
        if dist.len() != n * n {
            return Err(SpaceError::Length {
                expected: n * n,
                got: dist.len(),
            });
        }
        Self::build(n, dist, masses, quasi_constant, Geometry::Matrix)
    }

    fn build(
        n: usize,
        dist: Vec<f64>,
        masses: Vec<f64>,
        quasi_constant: f64,
        geometry: Geometry,
    ) -> Result<Self, SpaceError> {
        if masses.len() != n {
            return Err(SpaceError::Length {
                expected: n,
                got: masses.len(),
            });
        }
        if !(quasi_constant >= 1.0) || !quasi_constant.is_finite() {
            return Err(SpaceError::QuasiConstant(quasi_constant));
        }
        for (i, m) in masses.iter().enumerate() {
            if !(*m >= 0.0) || !m.is_finite() {
                return Err(SpaceError::BadMass(i, *m));
            }
        }
        let total_mass: f64 = masses.iter().sum();
        if !(total_mass > 0.0) || !total_mass.is_finite() {
            return Err(SpaceError::TotalMass(total_mass));
        }
        let mut min_positive: Option<f64> = None;
        for i in 0..n {
            if dist[i * n + i] != 0.0 {
                return Err(SpaceError::Diagonal(i));
            }
            for j in (i + 1)..n {
                let d = dist[i * n + j];
                if !(d >= 0.0) || !d.is_finite() {
                    return Err(SpaceError::BadDistance(i, j, d));
                }
                if d != dist[j * n + i] {
                    return Err(SpaceError::Asymmetric(i, j));
                }
                if d > 0.0 {
                    min_positive = Some(min_positive.map_or(d, |m| m.min(d)));
                }
            }
        }
        let space = DiscreteSpace {
            n,
            dist,
            masses,
            total_mass,
            quasi_constant,
            min_positive,
            geometry,
        };
        space.check_quasi_triangle()?;
        Ok(space)
    }

    fn check_quasi_triangle(&self) -> Result<(), SpaceError> {
        let n = self.n;
        let a = self.quasi_constant;
        let check = |x: usize, y: usize, z: usize| -> Result<(), SpaceError> {
            let dxz = self.distance(x, z);
            let dxy = self.distance(x, y);
            let dyz = self.distance(y, z);
            if dxz > a * (dxy + dyz) * (1.0 + TRIANGLE_SLACK) {
                return Err(SpaceError::Triangle {
                    x,
                    y,
                    z,
                    dxz,
                    dxy,
                    dyz,
                    a,
                });
            }
            Ok(())
        };
        if n <= EXHAUSTIVE_TRIANGLE_LIMIT {
            (0..n).into_par_iter().try_for_each(|x| {
                for y in 0..n {
                    for z in (x + 1)..n {
                        check(x, y, z)?;
                    }
                }
                Ok(())
            })
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(TRIANGLE_SEED);
            for _ in 0..TRIANGLE_SAMPLES {
                let (x, y, z) = (
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                );
                check(x, y, z)?;
            }
            Ok(())
        }
    }

    pub fn from_file(file: SpaceFile) -> Result<Self, SpaceError> {
        match file.kind.as_str() {
            "coords" => {
                let points = file
                    .points
                    .ok_or_else(|| SpaceError::Schema("coords space needs `points`".into()))?;
                if let (Some(dim), Some(first)) = (file.dim, points.first()) {
                    if first.len() != dim {
                        return Err(SpaceError::Dimension {
                            index: 0,
                            expected: dim,
                            got: first.len(),
                        });
                    }
                }
                Self::from_coords(
                    points,
                    file.masses,
                    file.distance.unwrap_or_default(),
                    file.quasi_constant,
                )
            }
            "matrix" => {
                let dist = file
                    .dist
                    .ok_or_else(|| SpaceError::Schema("matrix space needs `dist`".into()))?;
                Self::from_matrix(dist, file.masses, file.quasi_constant)
            }
            other => Err(SpaceError::Schema(format!("unknown kind {other:?}"))),
        }
    }

    pub fn to_file(&self) -> SpaceFile {
        match &self.geometry {
            Geometry::Coords {
                dim,
                points,
                distance,
            } => SpaceFile {
                kind: "coords".into(),
                dim: Some(*dim),
                points: Some(points.clone()),
                distance: Some(*distance),
                dist: None,
                masses: self.masses.clone(),
                quasi_constant: self.quasi_constant,
            },
            Geometry::Matrix => SpaceFile {
                kind: "matrix".into(),
                dim: None,
                points: None,
                distance: None,
                dist: Some(self.dist.clone()),
                masses: self.masses.clone(),
                quasi_constant: self.quasi_constant,
            },
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn distance(&self, x: usize, y: usize) -> f64 {
        self.dist[x * self.n + y]
    }

    /// Distances from `x` to every point, in point order.
    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.dist[x * self.n..(x + 1) * self.n]
    }

    #[inline]
    pub fn mass(&self, x: usize) -> f64 {
        self.masses[x]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// `‖μ‖`.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn quasi_constant(&self) -> f64 {
        self.quasi_constant
    }

    pub fn is_metric(&self) -> bool {
        self.quasi_constant == 1.0
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn diameter(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest positive pairwise distance, if any two points are distinct.
    pub fn min_positive_distance(&self) -> Option<f64> {
        self.min_positive
    }

    /// Radius of the smallest candidate ball: `d_min⁺ / (2·MAX_DILATION)`, or
    /// `1.0` when no two points are apart.
    pub fn eps_min(&self) -> f64 {
        match self.min_positive {
            Some(d) => d / (2.0 * MAX_DILATION),
            None => 1.0,
        }
    }

    /// Closed ball `{ y : d(center, y) <= radius }` in point order.
    pub fn ball_members(&self, center: usize, radius: f64) -> Vec<usize> {
        self.row(center)
            .iter()
            .enumerate()
            .filter(|(_, d)| **d <= radius)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn measure(&self, members: &[usize]) -> f64 {
        members.iter().map(|&i| self.masses[i]).sum()
    }

    /// `μ(B(center, radius))` without materializing the member list.
    pub fn ball_measure(&self, center: usize, radius: f64) -> f64 {
        self.row(center)
            .iter()
            .zip(&self.masses)
            .filter(|(d, _)| **d <= radius)
            .map(|(_, m)| m)
            .sum()
    }

    /// `ε_min` followed by the distinct positive distances from `center`,
    /// ascending. A space whose points all coincide yields `[1.0]`.
    pub fn candidate_radii(&self, center: usize) -> Vec<f64> {
        if self.min_positive.is_none() {
            return vec![1.0];
        }
        let mut d: Vec<f64> = self
            .row(center)
            .iter()
            .copied()
            .filter(|v| *v > 0.0)
            .collect();
        d.sort_by(f64::total_cmp);
        d.dedup();
        let mut out = Vec::with_capacity(d.len() + 1);
        out.push(self.eps_min());
        out.extend(d);
        out
    }

    pub fn check_index(&self, x: usize) -> Result<(), SpaceError> {
        if x < self.n {
            Ok(())
        } else {
            Err(SpaceError::Index(x))
        }
    }

    /// Validates a function on this space: one finite value per point.
    pub fn check_function(&self, f: &[f64]) -> Result<(), SpaceError> {
        if f.len() != self.n {
            return Err(SpaceError::Length {
                expected: self.n,
                got: f.len(),
            });
        }
        match f.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(SpaceError::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn integral(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.masses).map(|(v, m)| v * m).sum()
    }

    pub fn lp_norm(&self, f: &[f64], p: f64) -> f64 {
        if p.is_infinite() {
            return self.sup_norm(f);
        }
        f.iter()
            .zip(&self.masses)
            .map(|(v, m)| v.abs().powf(p) * m)
            .sum::<f64>()
            .powf(1.0 / p)
    }

    /// Supremum of `|f|` over points of positive mass.
    pub fn sup_norm(&self, f: &[f64]) -> f64 {
        f.iter()
            .zip(&self.masses)
            .filter(|(_, m)| **m > 0.0)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max)
    }
}

/// Largest observed `d(x,z) / (d(x,y) + d(y,z))` over all triples, snapped to
/// 1 when within rounding of a true metric.
pub fn estimate_quasi_constant(n: usize, dist: &[f64]) -> f64 {
    let worst = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut worst: f64 = 1.0;
            for y in 0..n {
                let dxy = dist[x * n + y];
                for z in 0..n {
                    let s = dxy + dist[y * n + z];
                    if s > 0.0 {
                        worst = worst.max(dist[x * n + z] / s);
                    }
                }
            }
            worst
        })
        .reduce(|| 1.0, f64::max);
    if worst <= 1.0 + 1e-12 {
        1.0
    } else {
        worst
    }
}

/// Evaluation rule of a dominating function.
#[derive(Clone)]
pub enum LambdaFamily {
    /// `c·r^n`.
    PowerLaw { c: f64 },
    /// `c·max{floor(x), r}^n` with a per-point floor.
    FlooredPower { c: f64, floor: Vec<f64> },
    Custom {
        name: String,
        rule: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for LambdaFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaFamily::PowerLaw { c } => f.debug_struct("PowerLaw").field("c", c).finish(),
            LambdaFamily::FlooredPower { c, floor } => f
                .debug_struct("FlooredPower")
                .field("c", c)
                .field("floor_len", &floor.len())
                .finish(),
            LambdaFamily::Custom { name, .. } => {
                f.debug_struct("Custom").field("name", name).finish()
            }
        }
    }
}

/// The dominating function `λ(x, r)` with its doubling constant `C_λ` and
/// doubling order `n`.
#[derive(Clone, Debug)]
pub struct DominatingFunction {
    family: LambdaFamily,
    c_lambda: f64,
    degree: f64,
}

impl DominatingFunction {
    pub fn power_law(c: f64, degree: f64) -> Result<Self, SpaceError> {
        if !(c > 0.0) || !(degree > 0.0) {
            return Err(SpaceError::Lambda(format!(
                "power law needs c > 0 and degree > 0 (c = {c}, degree = {degree})"
            )));
        }
        Ok(DominatingFunction {
            family: LambdaFamily::PowerLaw { c },
            c_lambda: 2f64.powf(degree),
            degree,
        })
    }

    pub fn floored_power(c: f64, degree: f64, floor: Vec<f64>) -> Result<Self, SpaceError> {
        if !(c > 0.0) || !(degree > 0.0) {
            return Err(SpaceError::Lambda(format!(
                "floored power needs c > 0 and degree > 0 (c = {c}, degree = {degree})"
            )));
        }
        if let Some(v) = floor.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(SpaceError::Lambda(format!("invalid floor {v}")));
        }
        Ok(DominatingFunction {
            family: LambdaFamily::FlooredPower { c, floor },
            c_lambda: 2f64.powf(degree),
            degree,
        })
    }

    pub fn custom(
        name: impl Into<String>,
        c_lambda: f64,
        degree: f64,
        rule: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, SpaceError> {
        if !(c_lambda > 1.0) || !(degree > 0.0) {
            return Err(SpaceError::Lambda(format!(
                "custom rule needs C_λ > 1 and degree > 0 (C_λ = {c_lambda}, degree = {degree})"
            )));
        }
        Ok(DominatingFunction {
            family: LambdaFamily::Custom {
                name: name.into(),
                rule: Arc::new(rule),
            },
            c_lambda,
            degree,
        })
    }

    /// Smallest floored power law `c·max{F(x), r}^n` dominating the measure on
    /// the candidate grid, with `F` made 1-Lipschitz so that `λ(x,r)` and
    /// `λ(y,r)` stay within `2^n` of each other when `d(x,y) <= r`.
    pub fn fit_floored_power(space: &DiscreteSpace, c: f64, degree: f64) -> Result<Self, SpaceError> {
        let n = space.len();
        let raw: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|x| {
                let mut order: Vec<usize> = (0..n).collect();
                let row = space.row(x);
                order.sort_by(|a, b| row[*a].total_cmp(&row[*b]));
                let mut floor: f64 = 0.0;
                let mut acc = 0.0;
                let mut i = 0;
                let radii = space.candidate_radii(x);
                for r in radii {
                    while i < n && row[order[i]] <= r {
                        acc += space.mass(order[i]);
                        i += 1;
                    }
                    if c * r.powf(degree) < acc {
                        floor = floor.max((acc / c).powf(1.0 / degree));
                    }
                }
                floor
            })
            .collect();
        let floor: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|x| {
                let row = space.row(x);
                let best = raw
                    .iter()
                    .zip(row)
                    .map(|(f, d)| f - d)
                    .fold(0.0, f64::max);
                best * (1.0 + 1e-12)
            })
            .collect();
        Self::floored_power(c, degree, floor)
    }

    #[inline]
    pub fn eval(&self, x: usize, r: f64) -> f64 {
        match &self.family {
            LambdaFamily::PowerLaw { c } => c * r.powf(self.degree),
            LambdaFamily::FlooredPower { c, floor } => c * floor[x].max(r).powf(self.degree),
            LambdaFamily::Custom { rule, .. } => rule(x, r),
        }
    }

    pub fn c_lambda(&self) -> f64 {
        self.c_lambda
    }

    /// Overrides `C_λ` (e.g. from a configuration file).
    pub fn with_c_lambda(mut self, c_lambda: f64) -> Self {
        self.c_lambda = c_lambda;
        self
    }

    pub fn degree(&self) -> f64 {
        self.degree
    }

    pub fn family(&self) -> &LambdaFamily {
        &self.family
    }

    /// `Some(m)` when `λ(x, a·r) = a^m λ(x, r)` holds identically.
    pub fn homogeneous_degree(&self) -> Option<f64> {
        match self.family {
            LambdaFamily::PowerLaw { .. } => Some(self.degree),
            _ => None,
        }
    }

    pub fn to_spec(&self) -> Option<LambdaSpec> {
        match &self.family {
            LambdaFamily::PowerLaw { c } => Some(LambdaSpec::PowerLaw {
                c: *c,
                degree: self.degree,
                c_lambda: Some(self.c_lambda),
            }),
            LambdaFamily::FlooredPower { c, floor } => Some(LambdaSpec::FlooredPower {
                c: *c,
                degree: self.degree,
                floor: FloorSpec::PerPoint(floor.clone()),
                c_lambda: Some(self.c_lambda),
            }),
            LambdaFamily::Custom { .. } => None,
        }
    }
}

/// On-disk form of a dominating function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LambdaSpec {
    PowerLaw {
        c: f64,
        degree: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c_lambda: Option<f64>,
    },
    FlooredPower {
        c: f64,
        degree: f64,
        floor: FloorSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c_lambda: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FloorSpec {
    Uniform(f64),
    PerPoint(Vec<f64>),
}

impl LambdaSpec {
    pub fn build(&self, space: &DiscreteSpace) -> Result<DominatingFunction, SpaceError> {
        let (lambda, c_lambda) = match self {
            LambdaSpec::PowerLaw {
                c,
                degree,
                c_lambda,
            } => (DominatingFunction::power_law(*c, *degree)?, *c_lambda),
            LambdaSpec::FlooredPower {
                c,
                degree,
                floor,
                c_lambda,
            } => {
                let floor = match floor {
                    FloorSpec::Uniform(v) => vec![*v; space.len()],
                    FloorSpec::PerPoint(v) => {
                        if v.len() != space.len() {
                            return Err(SpaceError::Length {
                                expected: space.len(),
                                got: v.len(),
                            });
                        }
                        v.clone()
                    }
                };
                (DominatingFunction::floored_power(*c, *degree, floor)?, *c_lambda)
            }
        };
        Ok(match c_lambda {
            Some(c) => lambda.with_c_lambda(c),
            None => lambda,
        })
    }
}

/// Outcome of one checked property, with the extreme ratio and where it occurs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub passed: bool,
    pub worst: f64,
    pub witness: Option<(usize, usize, f64)>,
}

impl PropertyCheck {
    fn new() -> Self {
        PropertyCheck {
            passed: true,
            worst: 0.0,
            witness: None,
        }
    }

    fn observe(&mut self, value: f64, x: usize, y: usize, r: f64) {
        if value > self.worst || self.witness.is_none() {
            self.worst = value;
            self.witness = Some((x, y, r));
        }
    }
}

/// Upper-doubling properties (positivity, monotonicity, doubling in `r`,
/// domination of `μ`, comparability at nearby centers) evaluated on every
/// center × candidate radius.
///
/// Witnesses are `(x, y, r)`; `y == x` for single-point properties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub positive: PropertyCheck,
    pub monotone: PropertyCheck,
    pub doubling: PropertyCheck,
    pub domination: PropertyCheck,
    pub comparability: PropertyCheck,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.positive.passed
            && self.monotone.passed
            && self.doubling.passed
            && self.domination.passed
            && self.comparability.passed
    }
}

pub fn validate_upper_doubling(
    space: &DiscreteSpace,
    lambda: &DominatingFunction,
) -> ValidationReport {
    let n = space.len();
    let c_lambda = lambda.c_lambda();
    let per_center: Vec<ValidationReport> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut positive = PropertyCheck::new();
            let mut monotone = PropertyCheck::new();
            let mut doubling = PropertyCheck::new();
            let mut domination = PropertyCheck::new();
            let mut comparability = PropertyCheck::new();
            let radii = space.candidate_radii(x);
            let row = space.row(x);
            let mut prev: Option<f64> = None;
            for &r in &radii {
                let lam = lambda.eval(x, r);
                // positivity: worst is the reciprocal so that a zero floor dominates.
                positive.observe(if lam > 0.0 { 1.0 / lam } else { f64::INFINITY }, x, x, r);
                if !(lam > 0.0) || !lam.is_finite() {
                    positive.passed = false;
                }
                if let Some(p) = prev {
                    let ratio = if lam > 0.0 { p / lam } else { f64::INFINITY };
                    monotone.observe(ratio, x, x, r);
                    if p > lam {
                        monotone.passed = false;
                    }
                }
                prev = Some(lam);
                let lam2 = lambda.eval(x, 2.0 * r);
                let ratio = lam2 / lam;
                doubling.observe(ratio, x, x, r);
                if !(lam2 <= c_lambda * lam * (1.0 + 1e-12)) {
                    doubling.passed = false;
                }
                let mu = space.ball_measure(x, r);
                domination.observe(mu / lam, x, x, r);
                if !(mu <= lam) {
                    domination.passed = false;
                }
                for (y, d) in row.iter().enumerate() {
                    if y != x && *d <= r {
                        let ratio = lam / lambda.eval(y, r);
                        comparability.observe(ratio, x, y, r);
                        if !ratio.is_finite() {
                            comparability.passed = false;
                        }
                    }
                }
            }
            ValidationReport {
                positive,
                monotone,
                doubling,
                domination,
                comparability,
            }
        })
        .collect();
    let mut out = ValidationReport {
        positive: PropertyCheck::new(),
        monotone: PropertyCheck::new(),
        doubling: PropertyCheck::new(),
        domination: PropertyCheck::new(),
        comparability: PropertyCheck::new(),
    };
    for r in per_center {
        merge(&mut out.positive, r.positive);
        merge(&mut out.monotone, r.monotone);
        merge(&mut out.doubling, r.doubling);
        merge(&mut out.domination, r.domination);
        merge(&mut out.comparability, r.comparability);
    }
    out
}

fn merge(into: &mut PropertyCheck, other: PropertyCheck) {
    into.passed &= other.passed;
    if let Some((x, y, r)) = other.witness {
        if other.worst > into.worst || into.witness.is_none() {
            into.worst = other.worst;
            into.witness = Some((x, y, r));
        }
    }
}

/// Empirical geometric-doubling constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricDoubling {
    /// Largest number of half-radius balls the greedy cover needed.
    pub count: usize,
    /// `log2(count)`.
    pub dimension: f64,
    /// `(center, radius)` of a ball needing `count` pieces.
    pub witness: (usize, f64),
}

/// Greedily covers every candidate ball `B(x, r)` by balls `B(y, r/2)` centered
/// at members, visiting members nearest-first.
pub fn validate_geometric_doubling(space: &DiscreteSpace) -> GeometricDoubling {
    let n = space.len();
    let per_center: Vec<(usize, f64)> = (0..n)
        .into_par_iter()
        .map(|x| {
            let row = space.row(x);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|a, b| row[*a].total_cmp(&row[*b]).then(a.cmp(b)));
            let mut covered = vec![false; n];
            let mut best = (0usize, 0.0);
            for r in space.candidate_radii(x) {
                let end = order.partition_point(|&y| row[y] <= r);
                let members = &order[..end];
                for &y in members {
                    covered[y] = false;
                }
                let mut count = 0;
                for &y in members {
                    if covered[y] {
                        continue;
                    }
                    count += 1;
                    let cy = space.row(y);
                    for &z in members {
                        if cy[z] <= r / 2.0 {
                            covered[z] = true;
                        }
                    }
                }
                if count > best.0 {
                    best = (count, r);
                }
            }
            best
        })
        .collect();
    let (mut count, mut witness) = (1usize, (0usize, space.candidate_radii(0)[0]));
    for (x, (c, r)) in per_center.into_iter().enumerate() {
        if c > count {
            count = c;
            witness = (x, r);
        }
    }
    GeometricDoubling {
        count,
        dimension: (count as f64).log2(),
        witness,
    }
}
