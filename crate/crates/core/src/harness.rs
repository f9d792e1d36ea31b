//! Reproducible scenarios and the check suite that runs over them.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balls::{is_doubling, Analysis, Ball};
use crate::covering::{finite_overlap_cover, verify_cover, verify_greedy, vitali_cover};
use crate::czdecomp::{cz_decompose, verify_cz, CzDecomposition};
use crate::czop::{self, bergman_kernel, BergmanConfig, Kernel, KernelSpec};
use crate::fspaces::{self, AtomicBlock, BlockVariant};
use crate::maximal::{self, GoodLambdaParams};
use crate::mspace::{DiscreteSpace, DistanceKind, DominatingFunction, LambdaSpec, SpaceFile};
use crate::pairs::PairBudget;
use crate::report::{regressions, Report};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown scenario kind `{0}`")]
    UnknownKind(String),
    #[error("unknown check `{0}`")]
    UnknownCheck(String),
    #[error("invalid scenario: {0}")]
    Param(String),
    #[error("{check} on {scenario}: {message}")]
    Check {
        check: String,
        scenario: String,
        message: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Grid,
    ClusterSpike,
    PowerFloorLine,
    BergmanSample,
    Line3Canonical,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Grid,
        ScenarioKind::ClusterSpike,
        ScenarioKind::PowerFloorLine,
        ScenarioKind::BergmanSample,
        ScenarioKind::Line3Canonical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Grid => "grid",
            ScenarioKind::ClusterSpike => "cluster-spike",
            ScenarioKind::PowerFloorLine => "power-floor-line",
            ScenarioKind::BergmanSample => "bergman-sample",
            ScenarioKind::Line3Canonical => "line3-canonical",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::UnknownKind(s.into()))
    }
}

/// A generated instance: space, dominating function, and the kernel used by
/// the operator checks.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub size: usize,
    pub seed: u64,
    pub space: DiscreteSpace,
    pub lambda: DominatingFunction,
    pub kernel: KernelSpec,
}

impl Scenario {
    pub fn id(&self) -> String {
        format!("{}-{}-{}", self.kind, self.size, self.seed)
    }

    pub fn build_kernel(&self) -> Result<Box<dyn Kernel>, HarnessError> {
        self.kernel
            .build(&self.space, &self.lambda)
            .map_err(|e| HarnessError::Param(e.to_string()))
    }

    /// Seeded rng for one consumer of this scenario.
    pub fn rng(&self, salt: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(salt);
        r
    }

    /// Standard normal test function.
    pub fn function(&self, salt: u64) -> Vec<f64> {
        let mut rng = self.rng(salt);
        (0..self.space.len()).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// `function(salt)` minus its mean.
    pub fn mean_zero_function(&self, salt: u64) -> Vec<f64> {
        let f = self.function(salt);
        let m = self.space.integral(&f) / self.space.total_mass();
        f.iter().map(|v| v - m).collect()
    }
}

/// On-disk form of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub kind: ScenarioKind,
    pub size: usize,
    pub seed: u64,
    pub space: SpaceFile,
    pub lambda: LambdaSpec,
    pub kernel: KernelSpec,
}

impl Scenario {
    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            kind: self.kind,
            size: self.size,
            seed: self.seed,
            space: self.space.to_file(),
            lambda: self.lambda.to_spec().expect("generated dominating functions are serializable"),
            kernel: self.kernel.clone(),
        }
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, HarnessError> {
        let space = DiscreteSpace::from_file(file.space).map_err(|e| HarnessError::Param(e.to_string()))?;
        let lambda = file.lambda.build(&space).map_err(|e| HarnessError::Param(e.to_string()))?;
        Ok(Scenario {
            kind: file.kind,
            size: file.size,
            seed: file.seed,
            space,
            lambda,
            kernel: file.kernel,
        })
    }
}

fn line_space(coords: &[f64], masses: Vec<f64>) -> Result<DiscreteSpace, HarnessError> {
    DiscreteSpace::from_coords(
        coords.iter().map(|c| vec![*c]).collect(),
        masses,
        DistanceKind::Euclidean,
        1.0,
    )
    .map_err(|e| HarnessError::Param(e.to_string()))
}

/// Points of the cluster at grid site `g`: `g + 1/2 + 0.4·2^{-j}` with mass `2^j`.
pub const CLUSTER_LEN: usize = 8;

pub fn generate(kind: ScenarioKind, size: usize, seed: u64) -> Result<Scenario, HarnessError> {
    if size == 0 {
        return Err(HarnessError::Param("size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fit = |space: &DiscreteSpace| {
        DominatingFunction::fit_floored_power(space, 4.0, 1.0).map_err(|e| HarnessError::Param(e.to_string()))
    };
    let (space, lambda, kernel, size) = match kind {
        ScenarioKind::Line3Canonical => {
            let space = line_space(&[0.0, 1.0, 3.0], vec![1.0; 3])?;
            let lambda = DominatingFunction::floored_power(4.0, 1.0, vec![0.25; 3]).expect("valid");
            (space, lambda, KernelSpec::Hilbert, 3)
        }
        ScenarioKind::Grid => {
            let coords: Vec<f64> = (0..size).map(|i| i as f64).collect();
            let space = line_space(&coords, vec![1.0; size])?;
            let lambda = DominatingFunction::floored_power(4.0, 1.0, vec![0.25; size]).expect("valid");
            (space, lambda, KernelSpec::Hilbert, size)
        }
        ScenarioKind::ClusterSpike => {
            if size <= CLUSTER_LEN {
                return Err(HarnessError::Param(format!("cluster-spike needs size > {CLUSTER_LEN}")));
            }
            let clusters = (size / (4 * CLUSTER_LEN)).max(1);
            let background = size - clusters * CLUSTER_LEN;
            let mut sites: Vec<usize> = (0..background).collect();
            // partial Fisher–Yates for distinct sites
            for i in 0..clusters.min(background) {
                let j = rng.random_range(i..background);
                sites.swap(i, j);
            }
            let mut coords: Vec<f64> = (0..background).map(|i| i as f64).collect();
            let mut masses = vec![1.0; background];
            for &g in &sites[..clusters.min(background)] {
                for j in 0..CLUSTER_LEN {
                    coords.push(g as f64 + 0.5 + 0.4 * 0.5f64.powi(j as i32));
                    masses.push(2f64.powi(j as i32));
                }
            }
            let space = line_space(&coords, masses)?;
            let lambda = fit(&space)?;
            let n = space.len();
            (space, lambda, KernelSpec::Hilbert, n)
        }
        ScenarioKind::PowerFloorLine => {
            let mut coords: Vec<f64> = (0..size).map(|_| rng.random_range(0.0..size as f64)).collect();
            coords.sort_by(f64::total_cmp);
            let masses: Vec<f64> = (0..size).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
            let space = line_space(&coords, masses)?;
            let lambda = fit(&space)?;
            (space, lambda, KernelSpec::Hilbert, size)
        }
        ScenarioKind::BergmanSample => {
            let points: Vec<Vec<Complex64>> = (0..size)
                .map(|_| {
                    let r: f64 = rng.random_range(0.05..0.9);
                    let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    vec![Complex64::from_polar(r, t)]
                })
                .collect();
            let cfg = BergmanConfig {
                n: 1,
                m: 1.0,
                points,
                boundary_samples: None,
                boundary_seed: seed,
            };
            let (space, lambda, _) = bergman_kernel(&cfg).map_err(|e| HarnessError::Param(e.to_string()))?;
            (space, lambda, KernelSpec::Bergman { m: 1.0 }, size)
        }
    };
    Ok(Scenario {
        kind,
        size,
        seed,
        space,
        lambda,
        kernel,
    })
}

/// Ball maximizing `μ(2B)/μ(B)`; unbounded ratios under refinement are what
/// make a measure non-doubling.
pub fn doubling_measure_witness(space: &DiscreteSpace) -> (Ball, f64) {
    (0..space.len())
        .into_par_iter()
        .map(|c| {
            let mut best = (Ball::new(c, 0.0), 0.0);
            for r in space.candidate_radii(c) {
                let m = space.ball_measure(c, r);
                if m > 0.0 {
                    let v = space.ball_measure(c, 2.0 * r) / m;
                    if v > best.1 {
                        best = (Ball::new(c, r), v);
                    }
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((Ball::new(0, 0.0), 0.0), |a, b| if b.1 > a.1 { b } else { a })
}

/// Random `(f, λ)` satisfying the decomposition proviso with a non-empty
/// level set when the space allows: spikes of height in `(λ, 3λ]` on the
/// lightest points plus small noise, within `90%` of the budget
/// `λ^p ‖μ‖/β₀` for `‖f‖_p^p`.
pub fn cz_instance(space: &DiscreteSpace, beta0: f64, p: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let lambda = 1.0;
    let n = space.len();
    let budget = 0.9 * space.total_mass() / beta0;
    let mut order: Vec<usize> = (0..n).collect();
    let keys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    order.sort_by(|a, b| space.mass(*a).total_cmp(&space.mass(*b)).then(keys[*a].total_cmp(&keys[*b])));
    let mut f = vec![0.0; n];
    let mut used = 0.0;
    let spikes = rng.random_range(1..=4usize);
    for &x in order.iter().filter(|&&x| space.mass(x) > 0.0).take(4 * spikes) {
        if f.iter().filter(|v: &&f64| v.abs() > lambda).count() >= spikes {
            break;
        }
        let want: f64 = rng.random_range(1.05..3.0);
        let cap = ((budget - used).max(0.0) / space.mass(x)).powf(1.0 / p);
        let v = want.min(cap);
        if v > 1.01 * lambda {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            f[x] = sign * v;
            used += space.mass(x) * v.powf(p);
        }
    }
    let rest = (budget - used).max(0.0);
    let amp = (0.5 * rest / space.total_mass()).powf(1.0 / p).min(0.5 * lambda);
    for v in f.iter_mut() {
        if *v == 0.0 {
            *v = amp * rng.random_range(-1.0..1.0);
        }
    }
    (f, lambda)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    UpperDoubling,
    Covering,
    MaximalWeak11,
    SharpDomination,
    ThreeDoubling,
    Chain,
    Czdecomp,
    JohnNirenberg,
    RbmoCharacterizations,
    SharpNorm,
    GoodLambda,
    KernelFit,
    OperatorWeak11,
    Cotlar,
    RbmoImage,
    HardyL1,
    Duality,
    Commutator,
}

impl CheckKind {
    pub const ALL: [CheckKind; 18] = [
        CheckKind::UpperDoubling,
        CheckKind::Covering,
        CheckKind::MaximalWeak11,
        CheckKind::SharpDomination,
        CheckKind::ThreeDoubling,
        CheckKind::Chain,
        CheckKind::Czdecomp,
        CheckKind::JohnNirenberg,
        CheckKind::RbmoCharacterizations,
        CheckKind::SharpNorm,
        CheckKind::GoodLambda,
        CheckKind::KernelFit,
        CheckKind::OperatorWeak11,
        CheckKind::Cotlar,
        CheckKind::RbmoImage,
        CheckKind::HardyL1,
        CheckKind::Duality,
        CheckKind::Commutator,
    ];

    pub fn name(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default()
    }
}

impl FromStr for CheckKind {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| HarnessError::UnknownCheck(s.into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub sizes: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![7]
}

fn default_trial_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub scenarios: Vec<ScenarioSpec>,
    /// `None` runs every check.
    #[serde(default)]
    pub checks: Option<Vec<CheckKind>>,
    /// Pair-enumeration budget per point.
    #[serde(default)]
    pub pair_cap: Option<u64>,
    /// Multiplies the random-trial counts (families, balls, chains).
    #[serde(default = "default_trial_scale")]
    pub trial_scale: f64,
    /// Corrupts one decomposition coefficient to exercise the verifier.
    #[serde(default)]
    pub inject_fault: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            scenarios: Vec::new(),
            checks: None,
            pair_cap: None,
            trial_scale: 1.0,
            inject_fault: false,
        }
    }
}

impl SuiteConfig {
    pub fn budget(&self) -> PairBudget {
        match self.pair_cap {
            Some(c) => PairBudget::new(c),
            None => PairBudget::default(),
        }
    }

    pub fn checks(&self) -> Vec<CheckKind> {
        self.checks.clone().unwrap_or_else(|| CheckKind::ALL.to_vec())
    }

    fn trials(&self, base: usize) -> usize {
        ((base as f64 * self.trial_scale).round() as usize).max(1)
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub reports: Vec<Report>,
}

impl SuiteOutcome {
    /// True iff every exact assertion passed.
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed())
    }

    pub fn drift(&self) -> bool {
        self.reports.iter().any(|r| r.flags.values().any(|v| !v))
    }
}

pub fn run_suite(config: &SuiteConfig) -> Result<SuiteOutcome, HarnessError> {
    let checks = config.checks();
    let mut instances = Vec::new();
    for spec in &config.scenarios {
        for &size in &spec.sizes {
            for &seed in &spec.seeds {
                instances.push((spec.kind, size, seed));
            }
        }
    }
    if checks.is_empty() {
        return Ok(SuiteOutcome { reports: Vec::new() });
    }
    let per: Vec<Vec<Report>> = instances
        .par_iter()
        .map(|&(kind, size, seed)| {
            let scn = generate(kind, size, seed)?;
            checks.iter().map(|&c| run_check(&scn, c, config)).collect()
        })
        .collect::<Result<_, HarnessError>>()?;
    let mut reports: Vec<Report> = per.into_iter().flatten().collect();
    let reg = regressions(&reports);
    reports.extend(reg);
    Ok(SuiteOutcome { reports })
}

const REL_TOL: f64 = 1e-9;

fn le(a: f64, b: f64) -> bool {
    a <= b + REL_TOL * a.abs().max(b.abs())
}

fn err(c: CheckKind, scn: &Scenario, e: impl fmt::Display) -> HarnessError {
    HarnessError::Check {
        check: c.name(),
        scenario: scn.id(),
        message: e.to_string(),
    }
}

pub fn run_check(scn: &Scenario, check: CheckKind, config: &SuiteConfig) -> Result<Report, HarnessError> {
    let start = Instant::now();
    let mut rep = Report::new(&check.name(), scn.id(), scn.kind.name(), scn.size, scn.seed);
    let e = |m: &dyn fmt::Display| err(check, scn, m);
    let budget = config.budget();
    let space = &scn.space;
    let n = space.len();
    match check {
        CheckKind::UpperDoubling => {
            let v = crate::mspace::validate_upper_doubling(space, &scn.lambda);
            rep.pass("upper_doubling", v.passed());
            rep.constant("domination", Some(v.domination.worst));
            rep.constant("comparability", Some(v.comparability.worst));
            let (ball, ratio) = doubling_measure_witness(space);
            rep.constant("measure_doubling_ratio", Some(ratio));
            rep.witness("measure_doubling", format!("{ball:?}"));
        }
        CheckKind::Covering => covering_check(scn, config.trials(200), &mut rep),
        CheckKind::MaximalWeak11 => {
            let an = Analysis::with_default_beta0(space, &scn.lambda);
            let f = scn.function(1);
            let mut spike = vec![0.0; n];
            spike[n / 2] = 1.0;
            let abs: Vec<f64> = f.iter().map(|v| v.abs()).collect();
            let mut worst: f64 = 0.0;
            for g in [&f, &abs, &spike] {
                let m = maximal::maximal_noncentered(&an, g, 5.0).map_err(|x| e(&x))?.values;
                let heights = czop::height_grid(&m, 16);
                let r = czop::level_ratios(space, &m, space.lp_norm(g, 1.0), &heights);
                if let Some(c) = r.constant {
                    worst = worst.max(c);
                }
            }
            rep.constant("weak11_m5", Some(worst));
            rep.pass("weak11_constant_1", le(worst, 1.0));
        }
        CheckKind::SharpDomination => {
            let an = Analysis::with_default_beta0(space, &scn.lambda);
            let f = scn.function(2);
            let abs: Vec<f64> = f.iter().map(|v| v.abs()).collect();
            let s = maximal::sharp_maximal(&an, &f, budget).map_err(|x| e(&x))?;
            let sa = maximal::sharp_maximal(&an, &abs, budget).map_err(|x| e(&x))?;
            let m6 = maximal::maximal_noncentered(&an, &f, 6.0).map_err(|x| e(&x))?.values;
            let nf = maximal::maximal_doubling(&an, &f).map_err(|x| e(&x))?.values;
            let mut r1: f64 = 0.0;
            let mut r2: f64 = 0.0;
            for x in 0..n {
                let ok1 = le(s.values[x], m6[x] + 3.0 * nf[x]);
                let ok2 = le(sa.values[x], 5.0 * an.beta0 * s.values[x]);
                rep.pass("sharp_le_m6_plus_3n", ok1);
                rep.pass("sharp_abs_le_5beta0_sharp", ok2);
                if !ok1 {
                    rep.witness("sharp_le_m6_plus_3n", format!("point {x}"));
                }
                if !ok2 {
                    rep.witness("sharp_abs_le_5beta0_sharp", format!("point {x}"));
                }
                if m6[x] + 3.0 * nf[x] > 0.0 {
                    r1 = r1.max(s.values[x] / (m6[x] + 3.0 * nf[x]));
                }
                if s.values[x] > 0.0 {
                    r2 = r2.max(sa.values[x] / s.values[x]);
                }
            }
            rep.constant("sharp_over_m6_3n", Some(r1));
            rep.constant("sharp_abs_over_sharp", Some(r2));
            rep.exact = s.exact && sa.exact;
        }
        CheckKind::ThreeDoubling => {
            let mut rng = scn.rng(4);
            let trials = config.trials(1000);
            let mut premise = 0;
            for t in 0..trials {
                let c = rng.random_range(0..n);
                let radii = space.candidate_radii(c);
                let r = radii[rng.random_range(0..radii.len())] * rng.random_range(0.5..1.5);
                let alpha: f64 = rng.random_range(1.05..4.0);
                let beta: f64 = 10f64.powf(rng.random_range(0.1..2.5));
                let b = Ball::new(c, r);
                if is_doubling(space, &b, alpha.powi(3), beta) {
                    premise += 1;
                    let ok = is_doubling(space, &b, alpha, beta)
                        && is_doubling(space, &b.dilate(alpha), alpha, beta)
                        && is_doubling(space, &b.dilate(alpha * alpha), alpha, beta);
                    rep.pass("three_consecutive", ok);
                    if !ok {
                        rep.witness("three_consecutive", format!("trial {t}: {b:?}, alpha {alpha}, beta {beta}"));
                    }
                }
            }
            rep.pass("three_consecutive", true);
            rep.count("premise_trials", premise);
        }
        CheckKind::Chain => {
            let mut rng = scn.rng(5);
            let mut qualifying = 0;
            for t in 0..config.trials(100) {
                let c = rng.random_range(0..n);
                let mut d: Vec<f64> = space.row(c).to_vec();
                d.sort_by(f64::total_cmp);
                d.dedup();
                let mut mids: Vec<f64> = d.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                mids.push(d.last().copied().unwrap_or(0.0) + 1.0);
                let mut radii: Vec<f64> = mids.into_iter().filter(|_| rng.random::<f64>() < 0.3).collect();
                if radii.len() < 2 {
                    continue;
                }
                radii.dedup();
                let r = fspaces::chain_inequality_check(space, &scn.lambda, c, &radii).map_err(|x| e(&x))?;
                qualifying += r.runs.len();
                rep.pass("chain_inequality", r.holds());
                if let Some(v) = r.violation {
                    rep.witness("chain_inequality", format!("trial {t}, center {c}: {v:?}"));
                }
            }
            rep.pass("chain_inequality", true);
            rep.count("qualifying_runs", qualifying as u64);
        }
        CheckKind::Czdecomp => czdecomp_check(scn, config, &mut rep)?,
        CheckKind::JohnNirenberg => {
            let an = Analysis::with_default_beta0(space, &scn.lambda);
            let f = scn.function(7);
            let j1 = fspaces::john_nirenberg_check(&an, &f, 1.0, 6.0, budget).map_err(|x| e(&x))?;
            let j2 = fspaces::john_nirenberg_check(&an, &f, 2.0, 2.0, budget).map_err(|x| e(&x))?;
            rep.pass("p1_ratio_le_1", j1.ratio.is_none_or(|r| r <= 1.0));
            rep.constant("jn_p1", j1.ratio);
            rep.constant("jn_p2", j2.ratio);
            rep.exact = j1.exact && j2.exact;
        }
        CheckKind::RbmoCharacterizations => {
            let an = Analysis::with_default_beta0(space, &scn.lambda);
            let f = scn.function(8);
            let b = fspaces::rbmo_estimate(&an, &f, budget).map_err(|x| e(&x))?;
            let c = fspaces::rbmo_doubling_estimate(&an, &f, budget).map_err(|x| e(&x))?;
            rep.constant("c_b", Some(b.value));
            rep.constant("c_c", Some(c.value));
            rep.constant("c_b_over_c_c", (c.value > 0.0).then(|| b.value / c.value));
            rep.exact = b.exact && c.exact;
        }
        CheckKind::SharpNorm => {
            let an = Analysis::with_default_beta0(space, &scn.lambda);
            let f = scn.mean_zero_function(9);
            let nf = maximal::maximal_doubling(&an, &f).map_err(|x| e(&x))?.values;
            let s = maximal::sharp_maximal(&an, &f, budget).map_err(|x| e(&x))?;
            for p in [1.5, 2.0, 4.0] {
                let a = space.lp_norm(&nf, p);
                let b = space.lp_norm(&s.values, p);
                rep.constant(&format!("n_over_sharp_p{p}"), (b > 0.0).then(|| a / b));
            }
            rep.exact = s.exact;
        }
        CheckKind::GoodLambda => {
            let an = Analysis::with_default_beta0(space, &scn.lambda);
            let f = scn.mean_zero_function(10);
            let nf = maximal::maximal_doubling(&an, &f).map_err(|x| e(&x))?.values;
            let params = GoodLambdaParams {
                epsilon: 1.0,
                delta: 0.01,
                nu: 0.5,
                lambdas: czop::height_grid(&nf, 8),
            };
            let r = maximal::good_lambda_check(&an, &f, &params, budget).map_err(|x| e(&x))?;
            rep.constant("good_lambda_nu", r.worst_ratio);
            rep.exact = r.exact;
        }
        CheckKind::KernelFit => {
            let k = scn.build_kernel()?;
            let size = czop::validate_kernel_size(space, k.as_ref(), &scn.lambda);
            let holder = czop::validate_kernel_holder(space, k.as_ref(), &scn.lambda, 0.5, 0.5, None)
                .map_err(|x| e(&x))?;
            rep.constant("size_c_fit", Some(size.c_fit));
            rep.constant("holder_c_fit", Some(holder.c_fit));
            rep.constant("holder_delta_fit", Some(holder.delta_fit));
            rep.pass("size_finite", size.c_fit.is_finite());
            rep.pass("holder_finite", holder.c_fit.is_finite());
            rep.pass("delta_fit_positive", holder.empty || holder.delta_fit > 0.0);
            // minimality: the recorded worst pair violates C·(1 - 1e-9)
            if let Some((x, y)) = size.worst {
                let d = space.distance(x, y);
                let need = k.eval(x, y).norm() * scn.lambda.eval(x, d).max(scn.lambda.eval(y, d));
                rep.pass("size_minimal", need > size.c_fit * (1.0 - 1e-9));
            }
            if let Some((x, xp, y)) = holder.worst {
                let need = holder_need(space, k.as_ref(), &scn.lambda, x, xp, y, holder.delta);
                rep.pass("holder_minimal", need > holder.c_fit * (1.0 - 1e-9));
            }
        }
        CheckKind::OperatorWeak11 => {
            let k = scn.build_kernel()?;
            let f = scn.function(12);
            let tf: Vec<f64> = czop::apply(space, k.as_ref(), &f).map_err(|x| e(&x))?.iter().map(|z| z.norm()).collect();
            let r = czop::level_ratios(space, &tf, space.lp_norm(&f, 1.0), &czop::height_grid(&tf, 16));
            rep.constant("weak11_t", r.constant);
        }
        CheckKind::Cotlar => {
            let an = Analysis::with_default_beta0(space, &scn.lambda);
            let k = scn.build_kernel()?;
            let r = czop::cotlar_check(&an, k.as_ref(), &scn.function(13), 0.5).map_err(|x| e(&x))?;
            rep.constant("cotlar", r.constant);
        }
        CheckKind::RbmoImage => {
            let an = Analysis::with_default_beta0(space, &scn.lambda);
            let k = scn.build_kernel()?;
            let mut rng = scn.rng(14);
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = fspaces::rbmo_image_ratio(&an, k.as_ref(), &f, budget).map_err(|x| e(&x))?;
            rep.constant("linf_to_rbmo", r);
        }
        CheckKind::HardyL1 => {
            let k = scn.build_kernel()?;
            let mut blocks = sample_blocks(scn, 15, 8);
            blocks.extend(point_blocks(scn, 15, 32));
            let mut worst: Option<f64> = None;
            for b in &blocks {
                fspaces::atomic_block_validate(space, &scn.lambda, b).map_err(|x| e(&x))?;
                if let Some(v) = fspaces::hardy_to_l1_ratio(space, k.as_ref(), b).map_err(|x| e(&x))? {
                    worst = Some(worst.map_or(v, |w: f64| w.max(v)));
                }
            }
            rep.constant("hardy_to_l1", worst);
        }
        CheckKind::Duality => {
            let an = Analysis::with_default_beta0(space, &scn.lambda);
            let blocks = sample_blocks(scn, 16, 8);
            let g = scn.function(17);
            let cb = fspaces::rbmo_estimate(&an, &g, budget).map_err(|x| e(&x))?;
            let mut worst: Option<f64> = None;
            for b in &blocks {
                let row = fspaces::duality_ratio(space, b, &g, cb.value);
                if let Some(v) = row.ratio {
                    worst = Some(worst.map_or(v, |w: f64| w.max(v)));
                }
                // constant g pairs to zero
                let c = fspaces::duality_ratio(space, b, &vec![1.0; n], 1.0);
                rep.pass("constant_pairing_zero", c.pairing.abs() <= 1e-9 * b.hardy_norm().max(1e-300));
            }
            rep.constant("duality", worst);
            rep.exact = cb.exact;
        }
        CheckKind::Commutator => {
            let an = Analysis::with_default_beta0(space, &scn.lambda);
            let k = scn.build_kernel()?;
            let b = scn.function(18);
            let f = scn.function(19);
            let r = fspaces::commutator_pointwise_check(&an, k.as_ref(), &b, &f, 2.0, budget).map_err(|x| e(&x))?;
            rep.constant("commutator", r.constant);
            rep.exact = r.exact;
        }
    }
    rep.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(rep)
}

fn holder_need(
    space: &DiscreteSpace,
    k: &dyn Kernel,
    lambda: &DominatingFunction,
    x: usize,
    xp: usize,
    y: usize,
    delta: f64,
) -> f64 {
    let dxy = space.distance(x, y);
    let dxx = space.distance(x, xp);
    let lhs = (k.eval(x, y) - k.eval(xp, y)).norm() + (k.eval(y, x) - k.eval(y, xp)).norm();
    lhs * lambda.eval(x, dxy) / (dxx / dxy).powf(delta)
}

fn covering_check(scn: &Scenario, families: usize, rep: &mut Report) {
    let space = &scn.space;
    let n = space.len();
    let mut rng = scn.rng(3);
    let mut max_overlap = 0u32;
    for t in 0..families {
        let k = rng.random_range(1..=24usize);
        let balls: Vec<Ball> = (0..k)
            .map(|_| {
                let c = rng.random_range(0..n);
                let radii = space.candidate_radii(c);
                let r = radii[rng.random_range(0..radii.len())];
                let r = if rng.random::<bool>() { r } else { r * rng.random_range(0.3..1.7) };
                Ball::new(c, r)
            })
            .collect();
        let v = vitali_cover(space, &balls);
        let f = finite_overlap_cover(space, &balls);
        let checks = [
            ("vitali_cover", verify_cover(space, &balls, &v)),
            ("vitali_greedy", verify_greedy(space, &balls, &v)),
            ("finite_overlap_cover", verify_cover(space, &balls, &f)),
        ];
        for (name, res) in checks {
            rep.pass(name, res.is_ok());
            if let Err(w) = res {
                rep.witness(name, format!("family {t}: {w:?}"));
            }
        }
        max_overlap = max_overlap.max(f.max_overlap());
    }
    rep.pass("vitali_cover", true).pass("vitali_greedy", true).pass("finite_overlap_cover", true);
    rep.count("max_overlap", max_overlap as u64);
}

fn czdecomp_check(scn: &Scenario, config: &SuiteConfig, rep: &mut Report) -> Result<(), HarnessError> {
    let space = &scn.space;
    let an = Analysis::with_default_beta0(space, &scn.lambda);
    let mut rng = scn.rng(6);
    let mut pieces = 0usize;
    let mut fits: [Option<f64>; 3] = [None; 3];
    for p in [1.0, 2.0] {
        let (f, lambda) = cz_instance(space, an.beta0, p, &mut rng);
        let mut dec: CzDecomposition =
            cz_decompose(&an, &f, lambda, p).map_err(|x| err(CheckKind::Czdecomp, scn, x))?;
        if config.inject_fault {
            if let Some(pc) = dec.pieces.first_mut() {
                pc.alpha *= 2.0;
            }
        }
        pieces += dec.pieces.len();
        let v = verify_cz(space, &scn.lambda, &f, &dec).map_err(|x| err(CheckKind::Czdecomp, scn, x))?;
        for c in &v.checks {
            rep.pass(&c.name, c.passed);
            if let Some(w) = &c.witness {
                rep.witness(&c.name, format!("p = {p}: {w}"));
            }
        }
        let slot = if p == 1.0 { 0 } else { 1 };
        let key = if p == 1.0 { "cz6" } else { "cz6_1" };
        fits[slot] = v.constants.get(key).copied().filter(|_| !dec.pieces.is_empty());
        if p > 1.0 {
            fits[2] = v.constants.get("hardy_fit").copied();
        }
        if !dec.pieces.is_empty() {
            rep.constant(&format!("kappa_p{p}"), v.constants.get("kappa").copied());
            rep.constant(&format!("k_q_r_max_p{p}"), v.constants.get("k_q_r_max").copied());
        }
    }
    rep.count("pieces", pieces as u64);
    rep.constant("cz6", fits[0]);
    rep.constant("cz6_1", fits[1]);
    rep.constant("hardy_fit", fits[2]);
    Ok(())
}

/// Random mean-zero `∞`-blocks: a random piece on an inner ball plus the
/// compensating constant on the host.
pub fn sample_blocks(scn: &Scenario, salt: u64, count: usize) -> Vec<AtomicBlock> {
    let space = &scn.space;
    let n = space.len();
    let mut rng = scn.rng(salt);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let c = rng.random_range(0..n);
        let radii = space.candidate_radii(c);
        let i = rng.random_range(0..radii.len());
        let j = rng.random_range(i..radii.len());
        let inner = Ball::new(c, radii[i]);
        let host = Ball::new(c, radii[j]);
        let piece: Vec<(usize, f64)> = inner
            .members(space)
            .into_iter()
            .map(|x| (x, rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let mass: f64 = piece.iter().map(|(x, v)| v * space.mass(*x)).sum();
        let mu = host.measure(space);
        let comp: Vec<(usize, f64)> = host.members(space).into_iter().map(|x| (x, -mass / mu)).collect();
        out.push(AtomicBlock::from_pieces(
            space,
            &scn.lambda,
            host,
            vec![(inner, piece), (host, comp)],
            BlockVariant::Infinity,
            2.0,
        ));
    }
    out
}

/// Unit point masses at seeded centers, compensated on hosts at
/// geometrically spaced candidate radii. Cheap, and they probe every scale,
/// which keeps the sup over blocks stable as the size grows.
pub fn point_blocks(scn: &Scenario, salt: u64, centers: usize) -> Vec<AtomicBlock> {
    let space = &scn.space;
    let n = space.len();
    let mut rng = scn.rng(salt ^ 0x9e37_79b9);
    let mut ids: Vec<usize> = (0..n).collect();
    for i in 0..centers.min(n) {
        let j = rng.random_range(i..n);
        ids.swap(i, j);
    }
    let mut out = Vec::new();
    for &c in &ids[..centers.min(n)] {
        let radii = space.candidate_radii(c);
        let inner = Ball::new(c, radii[0]);
        let mut j = 1;
        while j < radii.len() {
            let host = Ball::new(c, radii[j]);
            let mu = host.measure(space);
            let comp: Vec<(usize, f64)> = host
                .members(space)
                .into_iter()
                .map(|x| (x, -space.mass(c) / mu))
                .collect();
            out.push(AtomicBlock::from_pieces(
                space,
                &scn.lambda,
                host,
                vec![(inner, vec![(c, 1.0)]), (host, comp)],
                BlockVariant::Infinity,
                2.0,
            ));
            j *= 2;
        }
    }
    out
}
