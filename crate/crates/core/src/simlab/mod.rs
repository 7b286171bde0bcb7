//! Simulation laboratory: ground-truth scenarios, samplers, exact
//! coefficients by quadrature, and Monte Carlo risk measurement.
//!
//! Risk is reported in the sequence norm restricted to the covered index set
//! plus a tail correction (the energy of the two slabs past the maximal
//! level, estimated once from the truth); for Haar the in-span part equals
//! the squared L2 distance and the tail does not depend on the estimator.

pub mod copula;

use crate::frameworks::{
    empirical_coefficients, ingest, sup_norm_proxy, CoefficientTable, FrameworkData,
    FrameworkKind, IngestSpec, LevelMode, Points,
};
use crate::hyperbolic::{Domain, IndexSet};
use crate::numeric::{adaptive_quad, adaptive_quad_2d, KahanSum};
use crate::pyramid::SparsitySchedule;
use crate::selection::{select_pyramid, select_within, PenaltyConfig};
use crate::uniwavelet::UnivariateBasis;
use crate::{Error, Result};
use copula::Copula2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution, Poisson as PoissonDist};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::sync::Arc;

/// A univariate mixture component factor: uniform or rescaled Beta on an
/// interval.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum Marginal {
    Uniform { lo: f64, hi: f64 },
    Beta { lo: f64, hi: f64, a: f64, b: f64 },
}

impl Marginal {
    fn support(&self) -> (f64, f64) {
        match *self {
            Marginal::Uniform { lo, hi } | Marginal::Beta { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Marginal::Beta { lo, hi, a, b } => {
                if !(lo..=hi).contains(&x) {
                    return 0.0;
                }
                let u = (x - lo) / (hi - lo);
                let log_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
                (log_norm + (a - 1.0) * u.ln() + (b - 1.0) * (1.0 - u).ln()).exp() / (hi - lo)
            }
        }
    }

    /// Distribution function by adaptive Gauss-Legendre quadrature of the
    /// density (absolute tolerance 1e-10); uniform is closed-form.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Marginal::Beta { lo, hi, .. } => {
                if x <= lo {
                    0.0
                } else if x >= hi {
                    1.0
                } else {
                    adaptive_quad(&|t| self.pdf(t), lo, x, 1e-10).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// Cumulative values at an ascending grid of points, integrating each
    /// gap once so the whole grid costs one sweep.
    fn cdf_grid(&self, xs: &[f64]) -> Vec<f64> {
        let (lo, _) = self.support();
        let mut out = Vec::with_capacity(xs.len());
        let mut acc = KahanSum::new();
        let mut prev = lo;
        for &x in xs {
            if x > prev {
                acc.add(adaptive_quad(&|t| self.pdf(t), prev, x, 1e-12));
                prev = x;
            }
            out.push(acc.value().clamp(0.0, 1.0));
        }
        out
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Marginal::Beta { lo, hi, a, b } => {
                let dist = BetaDist::new(a, b).expect("valid Beta parameters");
                lo + (hi - lo) * dist.sample(rng)
            }
        }
    }
}

/// Mixture of product densities: `sum_k w_k prod_axis g_{k,axis}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProductMixture {
    pub weights: Vec<f64>,
    /// `components[k][axis]`.
    pub components: Vec<Vec<Marginal>>,
}

impl ProductMixture {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, comp)| w * comp.iter().zip(x).map(|(m, &xi)| m.pdf(xi)).product::<f64>())
            .sum()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = k;
                break;
            }
        }
        for m in &self.components[pick] {
            out.push(m.sample(rng));
        }
    }
}

/// Ground truth of a scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Truth {
    /// Density on the scenario domain.
    ProductMixture(ProductMixture),
    /// Copula density on the unit square (d = 2).
    CopulaMixture { weights: Vec<f64>, components: Vec<Copula2> },
    /// Intensity, constant on the dyadic grid with `2^level` cells per axis,
    /// values row-major (last axis fastest).
    PiecewiseConstant { level: u32, values: Vec<f64> },
    /// Compound-Poisson jump intensity: `rate` jumps per unit time with
    /// product-form size density; the estimation target is
    /// `rate * density` restricted to the scenario domain.
    CompoundPoisson { rate: f64, jump: ProductMixture },
}

/// A named ground-truth configuration for one framework.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub kind: FrameworkKind,
    pub domain: Domain,
    pub truth: Truth,
    /// Increment spacing for the discrete-Lévy kind.
    pub delta: Option<f64>,
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Evaluate the estimation target at a point of the domain.
    pub fn eval_truth(&self, x: &[f64]) -> f64 {
        match &self.truth {
            Truth::ProductMixture(m) => m.eval(x),
            Truth::CopulaMixture { weights, components } => weights
                .iter()
                .zip(components)
                .map(|(w, c)| w * c.density(x[0], x[1]))
                .sum(),
            Truth::PiecewiseConstant { level, values } => {
                let cells = 1usize << level;
                let mut unit = Vec::with_capacity(x.len());
                if self.domain.to_unit(x, &mut unit).is_err() {
                    return 0.0;
                }
                let mut cell = 0usize;
                for u in &unit {
                    let c = ((u * cells as f64).floor() as usize).min(cells - 1);
                    cell = cell * cells + c;
                }
                values[cell]
            }
            Truth::CompoundPoisson { rate, jump } => {
                if self.domain.contains(x) {
                    rate * jump.eval(x)
                } else {
                    0.0
                }
            }
        }
    }
}

/// The scenarios shipped with the crate.
///
/// - `uniform2d`: flat density on the unit square.
/// - `mixture4`: four-component product mixture with three well-separated
///   bumps (weights 0.6 / 0.1 / 0.025 / 0.275), one of them a sharp peak.
/// - `frank_clayton`: equal-weight mixture of Frank(4) and Clayton(2)
///   copula densities.
/// - `poisson_blocks`: piecewise-constant intensity on `[0,10]^2` averaging
///   1, so the expected point count is 10^4.
/// - `levy_cp` / `levy_cp_disc`: compound-Poisson process with unit jump
///   rate and product-Beta jump sizes on `[0,2]^2`, estimated on
///   `[0.5,1.5]^2`; continuous observation and increments with spacing 0.1.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let beta = |lo: f64, hi: f64, a: f64, b: f64| Marginal::Beta { lo, hi, a, b };
    let unif = |lo: f64, hi: f64| Marginal::Uniform { lo, hi };
    let mixture4 = ProductMixture {
        weights: vec![0.6, 0.1, 0.025, 0.275],
        components: vec![
            vec![beta(0.0, 0.6, 4.0, 4.0), beta(0.0, 0.4, 4.0, 4.0)],
            vec![beta(0.4, 1.0, 100.0, 100.0), beta(0.4, 1.0, 20.0, 20.0)],
            vec![unif(0.0, 1.0), unif(0.0, 1.0)],
            vec![beta(0.6, 1.0, 8.0, 4.0), unif(0.4, 1.0)],
        ],
    };
    let jump = ProductMixture {
        weights: vec![1.0],
        components: vec![vec![beta(0.0, 2.0, 2.0, 2.0), beta(0.0, 2.0, 2.0, 2.0)]],
    };
    vec![
        Scenario {
            name: "uniform2d".into(),
            kind: FrameworkKind::Density,
            domain: Domain::unit(2),
            truth: Truth::ProductMixture(ProductMixture {
                weights: vec![1.0],
                components: vec![vec![unif(0.0, 1.0), unif(0.0, 1.0)]],
            }),
            delta: None,
        },
        Scenario {
            name: "mixture4".into(),
            kind: FrameworkKind::Density,
            domain: Domain::unit(2),
            truth: Truth::ProductMixture(mixture4),
            delta: None,
        },
        Scenario {
            name: "frank_clayton".into(),
            kind: FrameworkKind::Copula,
            domain: Domain::unit(2),
            truth: Truth::CopulaMixture {
                weights: vec![0.5, 0.5],
                components: vec![Copula2::Frank { theta: 4.0 }, Copula2::Clayton { theta: 2.0 }],
            },
            delta: None,
        },
        Scenario {
            name: "poisson_blocks".into(),
            kind: FrameworkKind::Poisson,
            domain: Domain::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap(),
            truth: Truth::PiecewiseConstant {
                level: 1,
                values: vec![0.4, 0.8, 1.2, 1.6],
            },
            delta: None,
        },
        Scenario {
            name: "levy_cp".into(),
            kind: FrameworkKind::LevyContinuous,
            domain: Domain::new(vec![0.5, 0.5], vec![1.5, 1.5]).unwrap(),
            truth: Truth::CompoundPoisson { rate: 1.0, jump: jump.clone() },
            delta: None,
        },
        Scenario {
            name: "levy_cp_disc".into(),
            kind: FrameworkKind::LevyDiscrete,
            domain: Domain::new(vec![0.5, 0.5], vec![1.5, 1.5]).unwrap(),
            truth: Truth::CompoundPoisson { rate: 1.0, jump },
            delta: Some(0.1),
        },
    ]
}

pub fn scenario_by_name(name: &str) -> Result<Scenario> {
    builtin_scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| {
            let names: Vec<String> =
                builtin_scenarios().into_iter().map(|s| s.name).collect();
            Error::Config(format!(
                "unknown scenario '{name}'; built-ins: {}",
                names.join(", ")
            ))
        })
}

/// Raw observations drawn from a scenario, with the metadata `ingest` needs.
#[derive(Clone, Debug)]
pub struct Sample {
    pub points: Points,
    pub kind: FrameworkKind,
    pub horizon: Option<f64>,
    pub delta: Option<f64>,
}

/// Draw a reproducible sample.
///
/// `n_or_horizon` means: sample size for density/copula, observation horizon
/// `T` for continuous Lévy data, increment count for discrete Lévy data. The
/// Poisson scenario ignores it; its window and intensity fix the expected
/// count (`Poisson(vol * integral of s)`, locations by rejection).
pub fn sample(scenario: &Scenario, n_or_horizon: f64, seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = scenario.dim();
    let mut data: Vec<f64> = Vec::new();
    let mut horizon = None;
    match (&scenario.truth, scenario.kind) {
        (Truth::ProductMixture(m), FrameworkKind::Density) => {
            let n = n_or_horizon as usize;
            if n == 0 {
                return Err(Error::Config("sample size must be positive".into()));
            }
            for _ in 0..n {
                m.sample(&mut rng, &mut data);
            }
        }
        (Truth::CopulaMixture { weights, components }, FrameworkKind::Copula) => {
            let n = n_or_horizon as usize;
            if n == 0 {
                return Err(Error::Config("sample size must be positive".into()));
            }
            for _ in 0..n {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = components.len() - 1;
                for (k, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                let p = components[pick].sample(&mut rng);
                data.extend_from_slice(&p);
            }
        }
        (Truth::PiecewiseConstant { values, .. }, FrameworkKind::Poisson) => {
            let vol = scenario.domain.volume();
            let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
            let total = vol * vol * mean; // vol * integral of s over Q
            let count = PoissonDist::new(total)
                .map_err(|e| Error::Config(format!("invalid Poisson mean: {e}")))?
                .sample(&mut rng) as usize;
            let sup = values.iter().cloned().fold(f64::MIN, f64::max);
            let lower = scenario.domain.lower().to_vec();
            let upper = scenario.domain.upper().to_vec();
            let mut point = vec![0.0; d];
            for _ in 0..count {
                // Rejection from the intensity shape.
                loop {
                    for (slot, (a, b)) in point.iter_mut().zip(lower.iter().zip(&upper)) {
                        *slot = a + (b - a) * rng.random::<f64>();
                    }
                    let accept: f64 = rng.random();
                    if accept * sup <= scenario.eval_truth(&point) {
                        break;
                    }
                }
                data.extend_from_slice(&point);
            }
        }
        (Truth::CompoundPoisson { rate, jump }, FrameworkKind::LevyContinuous) => {
            let t = n_or_horizon;
            if t <= 0.0 {
                return Err(Error::Config("horizon must be positive".into()));
            }
            let count = PoissonDist::new(rate * t)
                .map_err(|e| Error::Config(format!("invalid jump rate: {e}")))?
                .sample(&mut rng) as usize;
            for _ in 0..count {
                jump.sample(&mut rng, &mut data);
            }
            horizon = Some(t);
        }
        (Truth::CompoundPoisson { rate, jump }, FrameworkKind::LevyDiscrete) => {
            let n = n_or_horizon as usize;
            if n == 0 {
                return Err(Error::Config("increment count must be positive".into()));
            }
            let delta = scenario
                .delta
                .ok_or_else(|| Error::Config("scenario lacks a delta".into()))?;
            let per_window = PoissonDist::new(rate * delta)
                .map_err(|e| Error::Config(format!("invalid jump rate: {e}")))?;
            let mut jump_buf: Vec<f64> = Vec::new();
            for _ in 0..n {
                let jumps = per_window.sample(&mut rng) as usize;
                let mut increment = vec![0.0; d];
                for _ in 0..jumps {
                    jump_buf.clear();
                    jump.sample(&mut rng, &mut jump_buf);
                    for (axis, v) in jump_buf.iter().enumerate() {
                        increment[axis] += v;
                    }
                }
                data.extend_from_slice(&increment);
            }
        }
        (truth, kind) => {
            return Err(Error::Config(format!(
                "scenario truth {truth:?} does not fit framework {}",
                kind.as_str()
            )))
        }
    }
    Ok(Sample {
        points: Points::new(d, data)?,
        kind: scenario.kind,
        horizon,
        delta: scenario.delta,
    })
}

/// Ingest a sample drawn from a scenario into framework data.
pub fn ingest_sample(scenario: &Scenario, sample: Sample) -> Result<FrameworkData> {
    let spec = match sample.kind {
        FrameworkKind::Density => IngestSpec::Density,
        FrameworkKind::Copula => IngestSpec::Copula,
        FrameworkKind::Poisson => IngestSpec::Poisson,
        FrameworkKind::LevyContinuous => IngestSpec::LevyContinuous {
            horizon: sample.horizon.expect("sampler sets the horizon"),
        },
        FrameworkKind::LevyDiscrete => IngestSpec::LevyDiscrete {
            delta: sample.delta.expect("scenario carries delta"),
            path: false,
        },
    };
    let domain = match sample.kind {
        FrameworkKind::Copula => None,
        _ => Some(scenario.domain.clone()),
    };
    ingest(spec, sample.points, domain)
}

/// Exact coefficients of the estimation target over the index set up to
/// `l_bullet`.
///
/// The `sigma2` slot of the returned table holds the exact second moments
/// `<Psi^2, s>`: the population value of the point-process variance
/// estimators, and `Var(Psi(Y_1)) = <Psi^2, s> - beta^2` for density data.
///
/// Product-form truths go through per-coordinate distribution-function
/// differences (Beta CDFs by adaptive quadrature, tolerance 1e-10); copula
/// truths through 2-d adaptive quadrature cell masses (tolerance 1e-8);
/// piecewise-constant truths through exact cell masses.
pub fn true_coefficients<B: UnivariateBasis>(
    scenario: &Scenario,
    basis: &B,
    l_bullet: u32,
) -> Result<CoefficientTable> {
    let d = scenario.dim();
    let set = Arc::new(IndexSet::new(basis, d, l_bullet)?);
    match &scenario.truth {
        Truth::ProductMixture(m) => {
            separable_coefficients(&set, basis, &scenario.domain, m, 1.0)
        }
        Truth::CompoundPoisson { rate, jump } => {
            separable_coefficients(&set, basis, &scenario.domain, jump, *rate)
        }
        Truth::CopulaMixture { .. } => {
            let g = l_bullet.max(basis.j0());
            let masses = cell_mass_grid(scenario, g)?;
            grid_coefficients(&set, basis, &scenario.domain, &masses, g)
        }
        Truth::PiecewiseConstant { level, .. } => {
            let g = l_bullet.max(*level).max(basis.j0());
            let masses = cell_mass_grid(scenario, g)?;
            grid_coefficients(&set, basis, &scenario.domain, &masses, g)
        }
    }
}

/// Masses `integral of s over cell` on the dyadic tensor grid with `2^g`
/// cells per axis (row-major, last axis fastest).
pub fn cell_mass_grid(scenario: &Scenario, g: u32) -> Result<Vec<f64>> {
    let d = scenario.dim();
    let cells = 1usize << g;
    let total = cells.pow(d as u32);
    let lower = scenario.domain.lower();
    let upper = scenario.domain.upper();
    match &scenario.truth {
        Truth::CopulaMixture { .. } => {
            if d != 2 {
                return Err(Error::Config("copula truths are bivariate".into()));
            }
            let masses: Vec<f64> = (0..total)
                .into_par_iter()
                .map(|cell| {
                    let cx = cell / cells;
                    let cy = cell % cells;
                    let rect = [
                        cx as f64 / cells as f64,
                        (cx + 1) as f64 / cells as f64,
                        cy as f64 / cells as f64,
                        (cy + 1) as f64 / cells as f64,
                    ];
                    adaptive_quad_2d(&|u, v| scenario.eval_truth(&[u, v]), rect, 1e-8)
                })
                .collect();
            Ok(masses)
        }
        Truth::PiecewiseConstant { level, values } => {
            if g < *level {
                return Err(Error::Config(format!(
                    "grid level {g} coarser than the intensity's level {level}"
                )));
            }
            let cell_vol = scenario.domain.volume() / total as f64;
            let coarse = 1usize << level;
            let mut out = vec![0.0; total];
            for (cell, slot) in out.iter_mut().enumerate() {
                let mut rest = cell;
                let mut coarse_cell = 0usize;
                let mut axes = vec![0usize; d];
                for axis in (0..d).rev() {
                    axes[axis] = rest % cells;
                    rest /= cells;
                }
                for &c in &axes {
                    coarse_cell = coarse_cell * coarse + (c >> (g - level));
                }
                *slot = values[coarse_cell] * cell_vol;
            }
            Ok(out)
        }
        Truth::ProductMixture(_) | Truth::CompoundPoisson { .. } => {
            // 2d quadrature of the closed form; the separable route is the
            // primary path, this one serves cross-checks.
            if d != 2 {
                return Err(Error::Config("grid masses implemented for d = 2".into()));
            }
            let masses: Vec<f64> = (0..total)
                .into_par_iter()
                .map(|cell| {
                    let cx = cell / cells;
                    let cy = cell % cells;
                    let rect = [
                        lower[0] + (upper[0] - lower[0]) * cx as f64 / cells as f64,
                        lower[0] + (upper[0] - lower[0]) * (cx + 1) as f64 / cells as f64,
                        lower[1] + (upper[1] - lower[1]) * cy as f64 / cells as f64,
                        lower[1] + (upper[1] - lower[1]) * (cy + 1) as f64 / cells as f64,
                    ];
                    adaptive_quad_2d(&|x, y| scenario.eval_truth(&[x, y]), rect, 1e-9)
                })
                .collect();
            Ok(masses)
        }
    }
}

/// Coefficients from cell masses: every basis function is constant on the
/// grid cells, so `beta = sum Psi(midpoint) * mass` is exact.
fn grid_coefficients<B: UnivariateBasis>(
    set: &Arc<IndexSet>,
    basis: &B,
    domain: &Domain,
    masses: &[f64],
    g: u32,
) -> Result<CoefficientTable> {
    let d = set.dim();
    let cells = 1usize << g;
    let scale = domain.volume().powf(-0.5);
    let mut beta = vec![KahanSum::new(); set.len()];
    let mut second = vec![KahanSum::new(); set.len()];
    let mut unit = vec![0.0; d];
    for (cell, &mass) in masses.iter().enumerate() {
        let mut rest = cell;
        for u in unit.iter_mut().rev() {
            *u = ((rest % cells) as f64 + 0.5) / cells as f64;
            rest /= cells;
        }
        set.visit_active(basis, &unit, scale, |pos, v| {
            beta[pos].add(v * mass);
            second[pos].add(v * v * mass);
        });
    }
    Ok(CoefficientTable::from_parts(
        set.clone(),
        beta.iter().map(KahanSum::value).collect(),
        second.iter().map(KahanSum::value).collect(),
    ))
}

/// Separable route for product mixtures: per-axis distribution-function
/// differences at dyadic points give each univariate factor; tensor
/// coefficients are weighted products.
fn separable_coefficients<B: UnivariateBasis>(
    set: &Arc<IndexSet>,
    basis: &B,
    domain: &Domain,
    mixture: &ProductMixture,
    scale_truth: f64,
) -> Result<CoefficientTable> {
    let d = set.dim();
    let j0 = basis.j0();
    let g = set.l_max().max(j0);
    let grid = 1usize << g;
    let lower = domain.lower();
    let upper = domain.upper();
    let n_comp = mixture.weights.len();

    // cdfs[k][axis][i] = F_{k,axis}(domain point at i/2^g).
    let mut cdfs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_comp);
    for comp in &mixture.components {
        let mut per_axis = Vec::with_capacity(d);
        for (axis, marginal) in comp.iter().enumerate() {
            let xs: Vec<f64> = (0..=grid)
                .map(|i| lower[axis] + (upper[axis] - lower[axis]) * i as f64 / grid as f64)
                .collect();
            per_axis.push(marginal.cdf_grid(&xs));
        }
        cdfs.push(per_axis);
    }

    // Univariate factor of the coefficient and of the squared-function mass
    // for one (level, translation), from the cumulative values.
    let uni = |h: &[f64], level: u32, t: usize| -> (f64, f64) {
        if level <= j0 {
            let stride = grid >> j0;
            let (l, r) = (t * stride, (t + 1) * stride);
            let amp = 2f64.powf(j0 as f64 / 2.0);
            let mass = h[r] - h[l];
            (amp * mass, amp * amp * mass)
        } else {
            let stride = grid >> (level - 1);
            let (l, r) = (t * stride, (t + 1) * stride);
            let m = l + stride / 2;
            let amp = 2f64.powf((level as f64 - 1.0) / 2.0);
            ((2.0 * h[m] - h[l] - h[r]) * amp, amp * amp * (h[r] - h[l]))
        }
    };

    let vol = domain.volume();
    let mut beta = Vec::with_capacity(set.len());
    let mut second = Vec::with_capacity(set.len());
    for pos in 0..set.len() {
        let idx = set.index_at(pos);
        let mut b = KahanSum::new();
        let mut s = KahanSum::new();
        for (k, w) in mixture.weights.iter().enumerate() {
            let mut prod_b = *w;
            let mut prod_s = *w;
            for axis in 0..d {
                let (cb, cs) = uni(
                    &cdfs[k][axis],
                    idx.levels.0[axis],
                    idx.translations[axis] as usize,
                );
                prod_b *= cb;
                prod_s *= cs;
            }
            b.add(prod_b);
            s.add(prod_s);
        }
        beta.push(scale_truth * b.value() * vol.powf(-0.5));
        second.push(scale_truth * s.value() / vol);
    }
    Ok(CoefficientTable::from_parts(set.clone(), beta, second))
}

/// How the pipeline under Monte Carlo study chooses its pieces.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PipelineConfig {
    pub level: LevelChoice,
    pub c1: f64,
    pub c2: f64,
    pub r_bar: RBarMode,
    pub estimator: EstimatorChoice,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub enum LevelChoice {
    Theory,
    Practice,
    Fixed(u32),
}

#[derive(Clone, Copy, Debug, Serialize)]
pub enum RBarMode {
    Fixed(f64),
    /// Sup norm of the preliminary tensor estimator at per-axis level
    /// `floor(L/d)`, floored at 1.
    Proxy,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub enum EstimatorChoice {
    /// Full two-step selection.
    Selected,
    /// Projection on the whole covered index set.
    FullModel,
    /// Best model at a fixed cut level.
    FixedCut(u32),
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            level: LevelChoice::Practice,
            c1: 1.5,
            c2: 0.5,
            r_bar: RBarMode::Proxy,
            estimator: EstimatorChoice::Selected,
        }
    }
}

/// Monte Carlo risk summary; `std_error = sample std / sqrt(replications)`.
#[derive(Clone, Debug, Serialize)]
pub struct RiskReport {
    pub scenario: String,
    pub n_or_horizon: f64,
    pub replications: usize,
    pub seed: u64,
    pub max_level: u32,
    pub mean_risk: f64,
    pub std_error: f64,
    pub risks: Vec<f64>,
}

/// Effective sample size implied by a scenario and the `n_or_horizon` knob,
/// without sampling.
pub fn expected_n_bar(scenario: &Scenario, n_or_horizon: f64) -> f64 {
    match scenario.kind {
        FrameworkKind::Density | FrameworkKind::Copula => n_or_horizon,
        FrameworkKind::Poisson => scenario.domain.volume(),
        FrameworkKind::LevyContinuous => n_or_horizon,
        FrameworkKind::LevyDiscrete => n_or_horizon * scenario.delta.unwrap_or(1.0),
    }
}

/// Resolve the pipeline's maximal level for a scenario at a given size.
pub fn resolve_level(
    scenario: &Scenario,
    config: &PipelineConfig,
    n_or_horizon: f64,
    j0: u32,
) -> Result<u32> {
    Ok(match config.level {
        LevelChoice::Fixed(l) => l,
        LevelChoice::Theory => crate::frameworks::max_level_for(
            scenario.kind,
            expected_n_bar(scenario, n_or_horizon),
            scenario.dim(),
            j0,
            LevelMode::Theory,
        )?,
        LevelChoice::Practice => crate::frameworks::max_level_for(
            scenario.kind,
            expected_n_bar(scenario, n_or_horizon),
            scenario.dim(),
            j0,
            LevelMode::Practice,
        )?,
    })
}

/// Risk of one fitted table against the truth: squared coefficient distance
/// over the covered set (zeros off the model) plus the fixed tail energy.
pub fn risk_against_truth(
    truth: &CoefficientTable,
    fitted: &CoefficientTable,
    kept: &[usize],
    tail_energy: f64,
) -> f64 {
    let mut in_model = vec![false; truth.len()];
    for &pos in kept {
        in_model[pos] = true;
    }
    let mut acc = KahanSum::new();
    for pos in 0..truth.len() {
        let est = if in_model[pos] { fitted.beta()[pos] } else { 0.0 };
        let diff = est - truth.beta()[pos];
        acc.add(diff * diff);
    }
    acc.value() + tail_energy
}

/// Energy of the truth between levels `l_bullet + 1` and `l_bullet + 2`:
/// the tail correction added to every in-span risk.
pub fn tail_energy<B: UnivariateBasis>(
    scenario: &Scenario,
    basis: &B,
    l_bullet: u32,
) -> Result<f64> {
    let extended = true_coefficients(scenario, basis, l_bullet + 2)?;
    let set = extended.index_set();
    let mut acc = KahanSum::new();
    for ell in (l_bullet + 1)..=(l_bullet + 2) {
        for pos in set.slab_range(ell)? {
            let b = extended.beta()[pos];
            acc.add(b * b);
        }
    }
    Ok(acc.value())
}

/// Monte Carlo risk of the configured pipeline on a scenario.
///
/// Replications run in parallel, each on its own counter-derived stream of
/// the named generator (`ChaCha8`, seed plus replication index), and are
/// aggregated in replication order, so reports are reproducible bit-for-bit
/// for any worker count.
pub fn monte_carlo_risk<B: UnivariateBasis + Clone>(
    scenario: &Scenario,
    basis: &B,
    config: &PipelineConfig,
    n_or_horizon: f64,
    replications: usize,
    seed: u64,
) -> Result<RiskReport> {
    let j0 = basis.j0();
    let l_bullet = resolve_level(scenario, config, n_or_horizon, j0)?;
    let truth = true_coefficients(scenario, basis, l_bullet)?;
    let tail = tail_energy(scenario, basis, l_bullet)?;
    let schedule = SparsitySchedule::paper(basis, scenario.dim(), l_bullet)?;
    let risks: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|rep| -> Result<f64> {
            let rep_seed = derive_seed(seed, rep as u64);
            let s = sample(scenario, n_or_horizon, rep_seed)?;
            let data = ingest_sample(scenario, s)?;
            let table = empirical_coefficients(&data, basis, l_bullet)?;
            let r_bar = match config.r_bar {
                RBarMode::Fixed(r) => r,
                RBarMode::Proxy => sup_norm_proxy(
                    &table,
                    basis,
                    &scenario.domain,
                    (l_bullet / scenario.dim() as u32).max(j0),
                )?,
            };
            let pen = PenaltyConfig::new(r_bar, data.n_bar).with_constants(config.c1, config.c2);
            let kept: Vec<usize> = match config.estimator {
                EstimatorChoice::Selected => {
                    let result = select_pyramid(&table, &schedule, &pen)?;
                    result.model.positions(table.index_set())
                }
                EstimatorChoice::FullModel => (0..table.len()).collect(),
                EstimatorChoice::FixedCut(ell1) => {
                    let (model, _) = select_within(ell1, &table, &schedule, &pen)?;
                    model.positions(table.index_set())
                }
            };
            Ok(risk_against_truth(&truth, &table, &kept, tail))
        })
        .collect::<Result<_>>()?;
    let mean = risks.iter().sum::<f64>() / replications as f64;
    let var = risks.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
        / (replications as f64 - 1.0).max(1.0);
    Ok(RiskReport {
        scenario: scenario.name.clone(),
        n_or_horizon,
        replications,
        seed,
        max_level: l_bullet,
        mean_risk: mean,
        std_error: (var / replications as f64).sqrt(),
        risks,
    })
}

/// Stream id for one replication: the seed names the experiment, the
/// replication index names the stream.
pub fn derive_seed(seed: u64, replication: u64) -> u64 {
    // SplitMix64 step keeps streams well separated even for adjacent seeds.
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(replication.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperbolic::WaveletIndex;
    use crate::uniwavelet::Haar;
    use approx::assert_abs_diff_eq;
    use statrs::distribution::ContinuousCDF;

    fn by_name(name: &str) -> Scenario {
        scenario_by_name(name).unwrap()
    }

    #[test]
    fn builtin_parameters() {
        let m4 = by_name("mixture4");
        if let Truth::ProductMixture(m) = &m4.truth {
            assert_eq!(m.weights, vec![0.6, 0.1, 0.025, 0.275]);
            match m.components[0][0] {
                Marginal::Beta { lo, hi, a, b } => {
                    assert_eq!((lo, hi, a, b), (0.0, 0.6, 4.0, 4.0));
                }
                _ => panic!("component (1,1) must be a rescaled Beta"),
            }
        } else {
            panic!("mixture4 must be a product mixture");
        }
        assert!(scenario_by_name("nope").is_err());
    }

    #[test]
    fn density_scenarios_integrate_to_one() {
        for name in ["uniform2d", "mixture4"] {
            let sc = by_name(name);
            // Separable check: weights sum to one, every marginal magnifies
            // to mass one under quadrature.
            if let Truth::ProductMixture(m) = &sc.truth {
                assert_abs_diff_eq!(m.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                for comp in &m.components {
                    for marg in comp {
                        let (lo, hi) = marg.support();
                        let mass = adaptive_quad(&|x| marg.pdf(x), lo, hi, 1e-10);
                        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
                    }
                }
            }
        }
        // Copula mixture integrates to one over the unit square.
        let fc = by_name("frank_clayton");
        let mass = adaptive_quad_2d(&|u, v| fc.eval_truth(&[u, v]), [0.0, 1.0, 0.0, 1.0], 1e-8);
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn marginal_cdf_matches_closed_form() {
        // Independent oracle: regularized incomplete beta.
        let marg = Marginal::Beta { lo: 0.4, hi: 1.0, a: 20.0, b: 20.0 };
        let dist = statrs::distribution::Beta::new(20.0, 20.0).unwrap();
        for x in [0.41, 0.55, 0.7, 0.85, 0.99] {
            let want = dist.cdf((x - 0.4) / 0.6);
            assert_abs_diff_eq!(marg.cdf(x), want, epsilon = 1e-9);
        }
        // Grid route agrees with pointwise route.
        let xs: Vec<f64> = (0..=64).map(|i| 0.4 + 0.6 * i as f64 / 64.0).collect();
        let grid = marg.cdf_grid(&xs);
        for (x, g) in xs.iter().zip(&grid) {
            assert_abs_diff_eq!(*g, marg.cdf(*x), epsilon = 1e-9);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let sc = by_name("uniform2d");
        let a = sample(&sc, 4.0, 7).unwrap();
        let b = sample(&sc, 4.0, 7).unwrap();
        assert_eq!(a.points.len(), 4);
        for i in 0..4 {
            assert_eq!(a.points.row(i), b.points.row(i));
            assert!(Domain::unit(2).contains(a.points.row(i)));
        }
        let c = sample(&sc, 4.0, 8).unwrap();
        assert_ne!(a.points.row(0), c.points.row(0));
    }

    #[test]
    fn uniform_truth_is_pure_scaling() {
        let sc = by_name("uniform2d");
        let table = true_coefficients(&sc, &Haar::new(0), 3).unwrap();
        let set = table.index_set().clone();
        for pos in 0..set.len() {
            let want = if pos == 0 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(table.beta()[pos], want, epsilon = 1e-9);
        }
        // Second moments of the flat density: <Psi^2, 1> = 1 for every index.
        for pos in 0..set.len() {
            assert_abs_diff_eq!(table.sigma2()[pos], 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn step_density_coefficients_by_hand() {
        // Density 2 * 1{x<1/2} * 1{y<1/2} + (2/3) * rest: hand-computed Haar
        // coefficients on the four quadrants.
        let sc = Scenario {
            name: "step".into(),
            kind: FrameworkKind::Poisson,
            domain: Domain::unit(2),
            truth: Truth::PiecewiseConstant {
                level: 1,
                values: vec![2.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0],
            },
            delta: None,
        };
        let table = true_coefficients(&sc, &Haar::new(0), 2).unwrap();
        // Total mass 0.25 * (2 + 3 * 2/3) = 1.
        let scaling = table
            .entry(&WaveletIndex::new(vec![0, 0], vec![0, 0]))
            .unwrap()
            .0;
        assert_abs_diff_eq!(scaling, 1.0, epsilon = 1e-12);
        // (1,0) wavelet: +1 on x<1/2 minus -1 on x>1/2 of the marginal in x:
        // masses (0.25*(2+2/3)) left, (0.25*(2/3+2/3)) right.
        let left = 0.25 * (2.0 + 2.0 / 3.0);
        let right = 0.25 * (2.0 / 3.0 + 2.0 / 3.0);
        let got = table
            .entry(&WaveletIndex::new(vec![1, 0], vec![0, 0]))
            .unwrap()
            .0;
        assert_abs_diff_eq!(got, left - right, epsilon = 1e-12);
        // The (1,1) wavelet sees the 2x2 sign pattern.
        let got = table
            .entry(&WaveletIndex::new(vec![1, 1], vec![0, 0]))
            .unwrap()
            .0;
        let want = 0.25 * (2.0 - 2.0 / 3.0 - 2.0 / 3.0 + 2.0 / 3.0);
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn separable_route_matches_grid_quadrature() {
        // Dual routes onto the same coefficients for the mixture scenario.
        let sc = by_name("mixture4");
        let basis = Haar::new(0);
        let separable = true_coefficients(&sc, &basis, 3).unwrap();
        let set = separable.index_set().clone();
        let masses = cell_mass_grid(&sc, 3).unwrap();
        let grid = grid_coefficients(&set, &basis, &sc.domain, &masses, 3).unwrap();
        for pos in 0..set.len() {
            assert_abs_diff_eq!(separable.beta()[pos], grid.beta()[pos], epsilon = 1e-6);
            assert_abs_diff_eq!(separable.sigma2()[pos], grid.sigma2()[pos], epsilon = 1e-5);
        }
    }

    #[test]
    fn bessel_energy_monotone() {
        let sc = by_name("mixture4");
        let basis = Haar::new(0);
        let mut prev = 0.0;
        for l in [1u32, 3, 5] {
            let t = true_coefficients(&sc, &basis, l).unwrap();
            let energy: f64 = t.beta().iter().map(|b| b * b).sum();
            assert!(energy >= prev - 1e-12);
            prev = energy;
        }
        // Bounded by the L2 mass of the density (quadrature).
        let l2 = adaptive_quad_2d(
            &|x, y| sc.eval_truth(&[x, y]).powi(2),
            [0.0, 1.0, 0.0, 1.0],
            1e-8,
        );
        assert!(prev <= l2 + 1e-6, "{prev} vs {l2}");
    }

    #[test]
    fn tail_energy_shrinks_with_level() {
        let sc = by_name("mixture4");
        let basis = Haar::new(0);
        let t3 = tail_energy(&sc, &basis, 3).unwrap();
        let t5 = tail_energy(&sc, &basis, 5).unwrap();
        assert!(t5 < t3, "{t5} vs {t3}");
    }

    #[test]
    fn sampler_cell_frequencies_match_masses() {
        // Chi-square on the 8x8 dyadic grid at n = 1e5, one fixed seed, for
        // every scenario whose sampled law equals the normalized truth.
        let n = 100_000usize;
        let grid = 8usize;
        for name in ["uniform2d", "mixture4", "frank_clayton", "poisson_blocks", "levy_cp"] {
            let sc = by_name(name);
            let masses_scenario = match name {
                // Jumps live on the ambient box, not the estimation window.
                "levy_cp" => Scenario {
                    name: sc.name.clone(),
                    kind: FrameworkKind::Density,
                    domain: Domain::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap(),
                    truth: match &sc.truth {
                        Truth::CompoundPoisson { jump, .. } => {
                            Truth::ProductMixture(jump.clone())
                        }
                        _ => unreachable!(),
                    },
                    delta: None,
                },
                _ => sc.clone(),
            };
            let masses = cell_mass_grid(&masses_scenario, 3).unwrap();
            let total_mass: f64 = masses.iter().sum();
            let smp = sample(&sc, n as f64, 2026).unwrap();
            let count = smp.points.len();
            let mut observed = vec![0usize; grid * grid];
            let dom = &masses_scenario.domain;
            let mut unit = Vec::new();
            for row in smp.points.rows() {
                dom.to_unit(row, &mut unit).unwrap();
                let cx = ((unit[0] * grid as f64).floor() as usize).min(grid - 1);
                let cy = ((unit[1] * grid as f64).floor() as usize).min(grid - 1);
                observed[cx * grid + cy] += 1;
            }
            let mut chi2 = 0.0;
            for (o, m) in observed.iter().zip(&masses) {
                let expected = count as f64 * m / total_mass;
                chi2 += (*o as f64 - expected).powi(2) / expected;
            }
            let dof = (grid * grid - 1) as f64;
            let p = 1.0
                - statrs::distribution::ChiSquared::new(dof)
                    .unwrap()
                    .cdf(chi2);
            assert!(p > 0.001, "{name}: chi2 = {chi2}, p = {p}");
        }
    }

    #[test]
    fn discrete_levy_window_counts() {
        // The increment sampler puts Poisson(rate * delta) jumps per window:
        // the nonzero-window fraction matches 1 - exp(-rate*delta).
        let sc = by_name("levy_cp_disc");
        let n = 200_000usize;
        let smp = sample(&sc, n as f64, 5).unwrap();
        let nonzero = smp
            .points
            .rows()
            .filter(|r| r.iter().any(|&v| v != 0.0))
            .count();
        let p_hat = nonzero as f64 / n as f64;
        let p = 1.0 - (-0.1f64).exp();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((p_hat - p).abs() < 4.0 * se, "{p_hat} vs {p}");
    }

    #[test]
    fn poisson_expected_count() {
        let sc = by_name("poisson_blocks");
        let smp = sample(&sc, 0.0, 11).unwrap();
        // vol * integral s = 100 * 100; Poisson concentrates tightly.
        let count = smp.points.len() as f64;
        assert!((count - 10_000.0).abs() < 500.0, "count = {count}");
        let data = ingest_sample(&sc, smp).unwrap();
        assert_eq!(data.n_bar, 100.0);
    }

    #[test]
    fn risk_decreases_with_sample_size() {
        let sc = by_name("uniform2d");
        let basis = Haar::new(0);
        let config = PipelineConfig {
            level: LevelChoice::Fixed(3),
            r_bar: RBarMode::Fixed(1.0),
            ..Default::default()
        };
        let small = monte_carlo_risk(&sc, &basis, &config, 200.0, 20, 3).unwrap();
        let large = monte_carlo_risk(&sc, &basis, &config, 3200.0, 20, 3).unwrap();
        assert!(large.mean_risk < small.mean_risk);
        assert_eq!(small.replications, 20);
        assert!(small.std_error > 0.0);
    }

    #[test]
    fn monte_carlo_deterministic_across_thread_counts() {
        let sc = by_name("uniform2d");
        let basis = Haar::new(0);
        let config = PipelineConfig {
            level: LevelChoice::Fixed(2),
            r_bar: RBarMode::Fixed(1.0),
            ..Default::default()
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| monte_carlo_risk(&sc, &basis, &config, 300.0, 8, 9).unwrap())
        };
        let a = run(1);
        let b = run(8);
        assert_eq!(a.risks, b.risks);
    }
}
