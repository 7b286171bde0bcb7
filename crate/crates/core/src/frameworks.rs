//! Data ingestion and empirical-measure mechanics for the five supported
//! frameworks.
//!
//! Each framework turns raw observations into a weighted point measure with
//! an effective sample size `n_bar` (the normalization under which
//! coefficient variances scale like `sup(s)/n_bar`):
//!
//! | kind             | points                      | n_bar      |
//! |------------------|-----------------------------|------------|
//! | density          | the sample itself           | n          |
//! | copula           | rank pseudo-observations    | n          |
//! | poisson          | process points in Q         | vol(Q)     |
//! | levy-continuous  | jump sizes landing in Q     | T          |
//! | levy-discrete    | increments landing in Q     | n * delta  |
//!
//! Empirical coefficients are `weight * sum Psi(point)` with
//! `weight = 1/n_bar`; per-coefficient variance estimates use the pairwise
//! U-statistic for the two sample-based kinds and the empirical second
//! moment for the three point-process kinds.

use crate::hyperbolic::{Domain, IndexSet};
use crate::numeric::KahanSum;
use crate::uniwavelet::UnivariateBasis;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameworkKind {
    Density,
    Copula,
    Poisson,
    LevyContinuous,
    LevyDiscrete,
}

impl FrameworkKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrameworkKind::Density => "density",
            FrameworkKind::Copula => "copula",
            FrameworkKind::Poisson => "poisson",
            FrameworkKind::LevyContinuous => "levy-continuous",
            FrameworkKind::LevyDiscrete => "levy-discrete",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "density" => Ok(FrameworkKind::Density),
            "copula" => Ok(FrameworkKind::Copula),
            "poisson" => Ok(FrameworkKind::Poisson),
            "levy-continuous" => Ok(FrameworkKind::LevyContinuous),
            "levy-discrete" => Ok(FrameworkKind::LevyDiscrete),
            other => Err(Error::Config(format!(
                "unknown framework '{other}' (expected density, copula, poisson, \
                 levy-continuous or levy-discrete)"
            ))),
        }
    }
}

/// Framework-specific ingestion parameters.
#[derive(Clone, Copy, Debug)]
pub enum IngestSpec {
    Density,
    Copula,
    Poisson,
    LevyContinuous {
        horizon: f64,
    },
    /// `path = true` means rows are positions to be differenced.
    LevyDiscrete {
        delta: f64,
        path: bool,
    },
}

impl IngestSpec {
    pub fn kind(&self) -> FrameworkKind {
        match self {
            IngestSpec::Density => FrameworkKind::Density,
            IngestSpec::Copula => FrameworkKind::Copula,
            IngestSpec::Poisson => FrameworkKind::Poisson,
            IngestSpec::LevyContinuous { .. } => FrameworkKind::LevyContinuous,
            IngestSpec::LevyDiscrete { .. } => FrameworkKind::LevyDiscrete,
        }
    }
}

/// Flat row-major point storage.
#[derive(Clone, Debug)]
pub struct Points {
    d: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || data.len() % d != 0 {
            return Err(Error::Ingestion(format!(
                "flat data of length {} is not a multiple of dimension {d}",
                data.len()
            )));
        }
        Ok(Self { d, data })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }
}

/// Ingested dataset: retained points, effective sample size, domain and
/// bookkeeping (dropped points, framework parameters, warnings).
#[derive(Clone, Debug)]
pub struct FrameworkData {
    pub kind: FrameworkKind,
    pub points: Points,
    pub n_bar: f64,
    pub domain: Domain,
    /// Points discarded for lying outside the domain.
    pub dropped: usize,
    /// Raw observation count before any dropping/differencing.
    pub n_raw: usize,
    pub horizon: Option<f64>,
    pub delta: Option<f64>,
    pub warnings: Vec<String>,
}

impl FrameworkData {
    /// Mass carried by each retained point.
    pub fn weight(&self) -> f64 {
        1.0 / self.n_bar
    }
}

/// Coordinatewise rank transform onto `{1/n, ..., n/n}`.
///
/// Ranks are 1-based among the `n` values of each coordinate; exact ties are
/// broken by order of first appearance (the framework assumes continuous
/// marginals, so ties signal discrete data and are reported as a warning).
/// The coordinate maximum maps to 1, which the boundary-closed last Haar
/// cell absorbs.
fn pseudo_observations(raw: &Points, warnings: &mut Vec<String>) -> Points {
    let n = raw.len();
    let d = raw.dim();
    let mut out = vec![0.0; n * d];
    let mut ties = false;
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for j in 0..d {
        order.clear();
        order.extend(0..n);
        // Stable sort on the value keeps first-appearance order within ties.
        order.sort_by(|&a, &b| raw.row(a)[j].total_cmp(&raw.row(b)[j]));
        for (rank0, &i) in order.iter().enumerate() {
            out[i * d + j] = (rank0 + 1) as f64 / n as f64;
        }
        for w in order.windows(2) {
            if raw.row(w[0])[j] == raw.row(w[1])[j] {
                ties = true;
            }
        }
    }
    if ties {
        warnings.push("ties in some coordinate; ranks broken by first appearance".into());
    }
    Points { d, data: out }
}

/// Build a [`FrameworkData`] from raw observations.
///
/// Copula data must come without a domain (it lives on the unit cube by
/// construction). Lévy kinds keep only observations inside the domain and
/// count the rest; a discrete-Lévy path is differenced first.
pub fn ingest(spec: IngestSpec, raw: Points, domain: Option<Domain>) -> Result<FrameworkData> {
    if raw.is_empty() {
        return Err(Error::Ingestion("no observations".into()));
    }
    let kind = spec.kind();
    let mut warnings = Vec::new();
    let d = raw.dim();
    let domain = match (kind, domain) {
        (FrameworkKind::Copula, None) => Domain::unit(d),
        (FrameworkKind::Copula, Some(q)) if q.is_unit() && q.dim() == d => q,
        (FrameworkKind::Copula, Some(_)) => {
            return Err(Error::Config(
                "copula estimation is defined on the unit cube; omit the domain".into(),
            ))
        }
        (_, Some(q)) => {
            if q.dim() != d {
                return Err(Error::Config(format!(
                    "domain dimension {} does not match data dimension {d}",
                    q.dim()
                )));
            }
            q
        }
        (_, None) => {
            return Err(Error::Config(format!(
                "framework '{}' requires an explicit domain",
                kind.as_str()
            )))
        }
    };

    let n_raw = raw.len();
    let transformed = match spec {
        IngestSpec::Copula => pseudo_observations(&raw, &mut warnings),
        IngestSpec::LevyDiscrete { path: true, .. } => {
            if raw.len() < 2 {
                return Err(Error::Ingestion("a path needs at least two positions".into()));
            }
            let mut data = Vec::with_capacity((raw.len() - 1) * d);
            for i in 1..raw.len() {
                for j in 0..d {
                    data.push(raw.row(i)[j] - raw.row(i - 1)[j]);
                }
            }
            Points { d, data }
        }
        _ => raw,
    };

    // Drop points outside the domain (counted); for Lévy kinds this is part
    // of the estimator's definition, elsewhere it guards stray rows.
    let mut kept = Vec::with_capacity(transformed.data.len());
    let mut dropped = 0usize;
    for row in transformed.rows() {
        if domain.contains(row) {
            kept.extend_from_slice(row);
        } else {
            dropped += 1;
        }
    }
    let points = Points { d, data: kept };
    if dropped > 0
        && matches!(
            kind,
            FrameworkKind::Density | FrameworkKind::Copula | FrameworkKind::Poisson
        )
    {
        warnings.push(format!(
            "{dropped} observation(s) outside the domain were dropped"
        ));
        log::warn!("{}: {dropped} observation(s) outside the domain", kind.as_str());
    }

    let (n_bar, horizon, delta) = match spec {
        IngestSpec::Density | IngestSpec::Copula => (points.len() as f64, None, None),
        IngestSpec::Poisson => (domain.volume(), None, None),
        IngestSpec::LevyContinuous { horizon } => {
            if horizon <= 0.0 {
                return Err(Error::Config("horizon must be positive".into()));
            }
            (horizon, Some(horizon), None)
        }
        IngestSpec::LevyDiscrete { delta, path } => {
            if delta <= 0.0 {
                return Err(Error::Config("delta must be positive".into()));
            }
            let n = if path { n_raw - 1 } else { n_raw };
            let n_bar = n as f64 * delta;
            if n as f64 * delta * delta > 1.0 {
                warnings.push(format!(
                    "n*delta^2 = {} > 1: outside the high-frequency regime, increments \
                     are a biased proxy for jump sizes",
                    n as f64 * delta * delta
                ));
                log::warn!("levy-discrete: n*delta^2 > 1");
            }
            (n_bar, Some(n_bar), Some(delta))
        }
    };
    if n_bar <= 0.0 {
        return Err(Error::Ingestion(format!(
            "effective sample size {n_bar} not positive"
        )));
    }

    Ok(FrameworkData {
        kind,
        points,
        n_bar,
        domain,
        dropped,
        n_raw,
        horizon,
        delta,
        warnings,
    })
}

/// How the maximal resolution level is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelMode {
    /// The framework-specific rule from the risk analysis.
    Theory,
    /// `2^L = n_bar / ((log n_bar)/d)^2`: the coarser rule used in
    /// simulation studies, read as defining a dimension.
    Practice,
}

/// Level rule from raw values; see [`default_max_level`].
pub fn max_level_for(
    kind: FrameworkKind,
    n_bar: f64,
    d: usize,
    j0: u32,
    mode: LevelMode,
) -> Result<u32> {
    if n_bar < 8.0 {
        return Err(Error::Config(format!(
            "effective sample size {n_bar} too small (need at least 8)"
        )));
    }
    let df = d as f64;
    let log_n = n_bar.ln();
    let budget = match mode {
        LevelMode::Practice => n_bar / (log_n / df).powi(2),
        LevelMode::Theory => {
            let common = n_bar * (log_n / df).powi(-2 * d as i32);
            match kind {
                FrameworkKind::Density | FrameworkKind::Poisson | FrameworkKind::LevyContinuous => {
                    common
                }
                FrameworkKind::Copula => common.min(n_bar.powf(1.0 / 8.0) * log_n.powf(-0.25)),
                FrameworkKind::LevyDiscrete => common.min(n_bar.powf(0.25)),
            }
        }
    };
    let floor = d as u32 * j0 + 1;
    if budget <= 1.0 {
        return Ok(floor);
    }
    Ok((budget.log2().floor() as u32).max(floor))
}

/// Default maximal global level for a dataset.
///
/// Theory mode sets `2^L = n_bar ((log n_bar)/d)^-2d` for density, Poisson
/// and continuous-Lévy data, adds the cap `n^(1/8) (log n)^(-1/4)` for
/// copulas and `(n delta)^(1/4)` for discrete-Lévy data. Both modes take the
/// floor of `log2` and clamp to at least `d*j0 + 1`.
pub fn default_max_level(data: &FrameworkData, j0: u32, mode: LevelMode) -> Result<u32> {
    max_level_for(data.kind, data.n_bar, data.points.dim(), j0, mode)
}

/// Empirical wavelet coefficients and variance estimates over the full index
/// set up to `l_bullet`, stored positionally in canonical order.
#[derive(Clone, Debug)]
pub struct CoefficientTable {
    index_set: Arc<IndexSet>,
    beta: Vec<f64>,
    sigma2: Vec<f64>,
}

impl CoefficientTable {
    pub fn from_parts(index_set: Arc<IndexSet>, beta: Vec<f64>, sigma2: Vec<f64>) -> Self {
        assert_eq!(beta.len(), index_set.len());
        assert_eq!(sigma2.len(), index_set.len());
        Self {
            index_set,
            beta,
            sigma2,
        }
    }

    pub fn index_set(&self) -> &Arc<IndexSet> {
        &self.index_set
    }

    pub fn l_bullet(&self) -> u32 {
        self.index_set.l_max()
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    /// Entry for a fully-specified index, if covered.
    pub fn entry(&self, idx: &crate::hyperbolic::WaveletIndex) -> Option<(f64, f64)> {
        let pos = self.index_set.position(idx)?;
        Some((self.beta[pos], self.sigma2[pos]))
    }

    /// Tables must cover the same index set to be compared coefficientwise.
    pub fn check_same_coverage(&self, other: &Self) -> Result<()> {
        let a = &self.index_set;
        let b = &other.index_set;
        if a.dim() != b.dim() || a.j0() != b.j0() || a.l_max() != b.l_max() {
            return Err(Error::CoverageMismatch(format!(
                "(d={}, j0={}, L={}) vs (d={}, j0={}, L={})",
                a.dim(),
                a.j0(),
                a.l_max(),
                b.dim(),
                b.j0(),
                b.l_max()
            )));
        }
        Ok(())
    }
}

/// Observation chunk size for the deterministic parallel accumulation.
/// Fixed (never derived from the worker count) so results are bit-identical
/// for any thread pool.
const CHUNK: usize = 4096;

struct PartialSums {
    s1: Vec<f64>,
    s1c: Vec<f64>,
    s2: Vec<f64>,
    s2c: Vec<f64>,
}

/// Accumulate the empirical coefficients of a dataset.
///
/// For every index: `beta = weight * sum Psi(x_i)`. Variance estimates:
/// density and copula use the pairwise U-statistic
/// `sum_{i<j} (Psi(x_i) - Psi(x_j))^2 / (n(n-1))`, evaluated in O(n) through
/// the moment identity `(n * sum Psi^2 - (sum Psi)^2) / (n(n-1))`; the three
/// point-process kinds use `weight * sum Psi^2`.
///
/// Each observation touches exactly one index per level vector for Haar, so
/// the cost is `O(#points * #level_vectors)`. Observations are processed in
/// fixed-size chunks merged in chunk order with compensated summation, so
/// the result does not depend on the number of worker threads.
pub fn empirical_coefficients<B: UnivariateBasis>(
    data: &FrameworkData,
    basis: &B,
    l_bullet: u32,
) -> Result<CoefficientTable> {
    let d = data.points.dim();
    let set = Arc::new(IndexSet::new(basis, d, l_bullet)?);
    let n_points = data.points.len();
    if matches!(data.kind, FrameworkKind::Density | FrameworkKind::Copula) && n_points < 2 {
        return Err(Error::VarianceUndefined(format!(
            "{} framework needs at least two points, got {n_points}",
            data.kind.as_str()
        )));
    }

    let scale = data.domain.volume().powf(-0.5);
    let ranges: Vec<(usize, usize)> = (0..n_points)
        .step_by(CHUNK)
        .map(|start| (start, (start + CHUNK).min(n_points)))
        .collect();
    let chunks: Vec<PartialSums> = ranges
        .par_iter()
        .map(|&(start, end)| {
            let mut part = PartialSums {
                s1: vec![0.0; set.len()],
                s1c: vec![0.0; set.len()],
                s2: vec![0.0; set.len()],
                s2c: vec![0.0; set.len()],
            };
            let mut unit = Vec::with_capacity(d);
            for i in start..end {
                let row = data.points.row(i);
                data.domain
                    .to_unit(row, &mut unit)
                    .expect("ingestion keeps points inside the domain");
                set.visit_active(basis, &unit, scale, |pos, v| {
                    // Inline Kahan on both accumulators.
                    let y = v - part.s1c[pos];
                    let t = part.s1[pos] + y;
                    part.s1c[pos] = (t - part.s1[pos]) - y;
                    part.s1[pos] = t;
                    let v2 = v * v;
                    let y = v2 - part.s2c[pos];
                    let t = part.s2[pos] + y;
                    part.s2c[pos] = (t - part.s2[pos]) - y;
                    part.s2[pos] = t;
                });
            }
            part
        })
        .collect();

    // Merge partials in chunk order.
    let len = set.len();
    let mut s1 = vec![KahanSum::new(); len];
    let mut s2 = vec![KahanSum::new(); len];
    for part in &chunks {
        for pos in 0..len {
            s1[pos].add(part.s1[pos]);
            s2[pos].add(part.s2[pos]);
        }
    }

    let weight = data.weight();
    let mut beta = Vec::with_capacity(len);
    let mut sigma2 = Vec::with_capacity(len);
    for pos in 0..len {
        let t1 = s1[pos].value();
        let t2 = s2[pos].value();
        beta.push(weight * t1);
        let var = match data.kind {
            FrameworkKind::Density | FrameworkKind::Copula => {
                let n = n_points as f64;
                // Nonnegative in exact arithmetic; clamp rounding residue.
                ((n * t2 - t1 * t1) / (n * (n - 1.0))).max(0.0)
            }
            FrameworkKind::Poisson
            | FrameworkKind::LevyContinuous
            | FrameworkKind::LevyDiscrete => weight * t2,
        };
        sigma2.push(var);
    }
    Ok(CoefficientTable::from_parts(set, beta, sigma2))
}

/// Sup-norm proxy from a preliminary isotropic tensor model.
///
/// The estimator restricted to level vectors with every coordinate at most
/// `per_axis_level` is piecewise constant on the `2^(g*d)` tensor cells
/// (Haar), so the sup over cell midpoints is exact; the proxy is the max of
/// that sup-norm and 1.
pub fn sup_norm_proxy<B: UnivariateBasis>(
    table: &CoefficientTable,
    basis: &B,
    domain: &Domain,
    per_axis_level: u32,
) -> Result<f64> {
    let set = table.index_set();
    let d = set.dim();
    let g = per_axis_level;
    if g < basis.j0() {
        return Err(Error::Config(format!(
            "per-axis level {g} below coarsest level {}",
            basis.j0()
        )));
    }
    if g as usize * d > set.l_max() as usize {
        return Err(Error::Config(format!(
            "per-axis level {g} exceeds floor(L/d) = {}",
            set.l_max() as usize / d
        )));
    }
    // Level vectors fully inside the tensor model.
    let tensor_lvs: Vec<usize> = set
        .level_vectors()
        .iter()
        .enumerate()
        .filter(|(_, lv)| lv.0.iter().all(|&j| j <= g))
        .map(|(i, _)| i)
        .collect();
    let cells_per_axis = 1usize << g;
    let total_cells = cells_per_axis.pow(d as u32);
    let scale = domain.volume().powf(-0.5);
    let mut sup = 0.0f64;
    let mut unit = vec![0.0; d];
    for cell in 0..total_cells {
        let mut rest = cell;
        for u in unit.iter_mut().rev() {
            *u = ((rest % cells_per_axis) as f64 + 0.5) / cells_per_axis as f64;
            rest /= cells_per_axis;
        }
        let mut acc = KahanSum::new();
        for &lv in &tensor_lvs {
            let block = set.block(lv);
            let levels = &set.level_vectors()[lv];
            let mut rank = 0usize;
            let mut value = scale;
            for (axis, &level) in levels.0.iter().enumerate() {
                let mut t_active = 0u32;
                let mut v_active = 0.0;
                basis.visit_active(level, unit[axis], |t, v| {
                    t_active = t;
                    v_active = v;
                });
                rank = rank * basis.detail_count(level) + t_active as usize;
                value *= v_active;
            }
            acc.add(table.beta()[block.start + rank] * value);
        }
        sup = sup.max(acc.value().abs());
    }
    Ok(sup.max(1.0))
}

/// Read numeric CSV: one observation per row, `d` columns, '.' decimal
/// separator, optional single header row (detected when the first row does
/// not parse as numbers).
pub fn read_csv_points<R: Read>(reader: R, expect_dim: Option<usize>) -> Result<Points> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data: Vec<f64> = Vec::new();
    let mut d: Option<usize> = expect_dim;
    let mut first_data_row = true;
    for (row_idx, record) in rdr.records().enumerate() {
        let line = row_idx + 1;
        let record = record.map_err(|e| Error::CsvParse {
            line,
            msg: e.to_string(),
        })?;
        if record.is_empty() || (record.len() == 1 && record[0].is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Err(_) if first_data_row => {
                // Header row.
                first_data_row = false;
                continue;
            }
            Err(e) => {
                return Err(Error::CsvParse {
                    line,
                    msg: e.to_string(),
                })
            }
            Ok(values) => {
                first_data_row = false;
                match d {
                    None => d = Some(values.len()),
                    Some(expected) if expected != values.len() => {
                        return Err(Error::CsvParse {
                            line,
                            msg: format!("expected {expected} columns, found {}", values.len()),
                        })
                    }
                    _ => {}
                }
                data.extend(values);
            }
        }
    }
    let d = d.ok_or_else(|| Error::Ingestion("empty csv".into()))?;
    if data.is_empty() {
        return Err(Error::Ingestion("csv contains no data rows".into()));
    }
    Points::new(d, data)
}
