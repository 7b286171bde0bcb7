//! Anisotropic tensor-product indexing over a hyperrectangle.
//!
//! A d-variate basis function is a product of univariate functions whose
//! levels may differ per coordinate. Its global resolution level is the sum
//! of the coordinate levels, and all enumeration in the crate is ordered by
//! `(global level, level vector, translations)` lexicographically; every
//! downstream tie-break inherits this total order.

use crate::numeric::KahanSum;
use crate::uniwavelet::{UniIndex, UnivariateBasis};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Per-coordinate resolution levels `(j_1, ..., j_d)`, each `>= j0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelVector(pub Vec<u32>);

impl LevelVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Global resolution level `|j| = j_1 + ... + j_d`.
    pub fn global_level(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl PartialOrd for LevelVector {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for LevelVector {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.global_level(), &self.0).cmp(&(other.global_level(), &other.0))
    }
}

/// Full label of a d-variate basis function: level vector plus one
/// translation per coordinate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WaveletIndex {
    pub levels: LevelVector,
    pub translations: Vec<u32>,
}

impl WaveletIndex {
    pub fn new(levels: Vec<u32>, translations: Vec<u32>) -> Self {
        Self {
            levels: LevelVector(levels),
            translations,
        }
    }

    pub fn dim(&self) -> usize {
        self.levels.dim()
    }

    pub fn global_level(&self) -> u32 {
        self.levels.global_level()
    }
}

impl PartialOrd for WaveletIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for WaveletIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.levels
            .cmp(&other.levels)
            .then_with(|| self.translations.cmp(&other.translations))
    }
}

/// Axis-aligned hyperrectangle `Q = prod [a_k, b_k]` with positive volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Config(format!(
                "domain bounds must be nonempty and of equal length, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::Config(format!(
                    "domain axis {k} has empty or invalid extent [{a}, {b}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit cube `[0,1]^d`.
    pub fn unit(d: usize) -> Self {
        Self {
            lower: vec![0.0; d],
            upper: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| b - a)
            .product()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (a, b))| *a <= *x && *x <= *b)
    }

    pub fn is_unit(&self) -> bool {
        self.lower.iter().all(|&a| a == 0.0) && self.upper.iter().all(|&b| b == 1.0)
    }

    /// Map a point of `Q` onto the unit cube coordinatewise.
    pub fn to_unit(&self, point: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if !self.contains(point) {
            return Err(Error::OutsideDomain(format!(
                "point {point:?} outside {:?} x {:?}",
                self.lower, self.upper
            )));
        }
        out.clear();
        for (x, (a, b)) in point.iter().zip(self.lower.iter().zip(&self.upper)) {
            out.push((x - a) / (b - a));
        }
        Ok(())
    }

    /// Map a unit-cube point onto `Q`.
    pub fn from_unit(&self, unit: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (u, (a, b)) in unit.iter().zip(self.lower.iter().zip(&self.upper)) {
            out.push(a + (b - a) * u);
        }
    }
}

/// All level vectors with `|j| = ell` in ascending lexicographic order.
///
/// Their count is the number of compositions of `ell - d*j0` into `d`
/// nonnegative parts, `C(ell - d*j0 + d - 1, d - 1)`.
pub fn enumerate_level_vectors(d: usize, j0: u32, ell: u32) -> Result<Vec<LevelVector>> {
    if d == 0 {
        return Err(Error::Config("dimension must be at least 1".into()));
    }
    let base = d as u32 * j0;
    if ell < base {
        return Err(Error::EmptyLevelRange(format!(
            "global level {ell} below d*j0 = {base}"
        )));
    }
    let budget = ell - base;
    let mut out = Vec::new();
    let mut current = vec![j0; d];
    fn recurse(current: &mut Vec<u32>, axis: usize, left: u32, j0: u32, out: &mut Vec<LevelVector>) {
        if axis + 1 == current.len() {
            current[axis] = j0 + left;
            out.push(LevelVector(current.clone()));
            return;
        }
        for take in 0..=left {
            current[axis] = j0 + take;
            recurse(current, axis + 1, left - take, j0, out);
        }
    }
    recurse(&mut current, 0, budget, j0, &mut out);
    Ok(out)
}

/// Number of basis functions with level vector `jvec`:
/// the product of per-axis counts.
pub fn slice_cardinality<B: UnivariateBasis>(basis: &B, jvec: &LevelVector) -> usize {
    jvec.0.iter().map(|&j| basis.detail_count(j)).product()
}

/// Total number of basis functions at global level `ell`.
pub fn resolution_slab_size<B: UnivariateBasis>(
    basis: &B,
    d: usize,
    ell: u32,
) -> Result<usize> {
    let vectors = enumerate_level_vectors(d, basis.j0(), ell)?;
    Ok(vectors.iter().map(|j| slice_cardinality(basis, j)).sum())
}

/// Canonical enumeration of every index with global level at most `l_max`.
///
/// Indices are stored positionally: level vectors sorted by the canonical
/// order, each owning a contiguous block of translation tuples in row-major
/// order. Coefficient tables array over these positions, which keeps lookups
/// arithmetic and iteration order reproducible.
#[derive(Clone, Debug)]
pub struct IndexSet {
    d: usize,
    j0: u32,
    l_max: u32,
    level_vectors: Vec<LevelVector>,
    /// Per level vector: per-axis function counts.
    axis_counts: Vec<Vec<u32>>,
    /// Block start of each level vector; last entry is the total count.
    offsets: Vec<usize>,
    /// Start (within `level_vectors`) of each global level `dj0..=l_max`.
    slab_starts: Vec<usize>,
}

impl IndexSet {
    pub fn new<B: UnivariateBasis>(basis: &B, d: usize, l_max: u32) -> Result<Self> {
        let j0 = basis.j0();
        let base = d as u32 * j0;
        if l_max < base {
            return Err(Error::EmptyLevelRange(format!(
                "l_max {l_max} below d*j0 = {base}"
            )));
        }
        let mut level_vectors = Vec::new();
        let mut slab_starts = Vec::new();
        for ell in base..=l_max {
            slab_starts.push(level_vectors.len());
            level_vectors.extend(enumerate_level_vectors(d, j0, ell)?);
        }
        slab_starts.push(level_vectors.len());
        let axis_counts: Vec<Vec<u32>> = level_vectors
            .iter()
            .map(|j| j.0.iter().map(|&l| basis.detail_count(l) as u32).collect())
            .collect();
        let mut offsets = Vec::with_capacity(level_vectors.len() + 1);
        let mut total = 0usize;
        for counts in &axis_counts {
            offsets.push(total);
            total += counts.iter().map(|&c| c as usize).product::<usize>();
        }
        offsets.push(total);
        Ok(Self {
            d,
            j0,
            l_max,
            level_vectors,
            axis_counts,
            offsets,
            slab_starts,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn j0(&self) -> u32 {
        self.j0
    }

    pub fn l_max(&self) -> u32 {
        self.l_max
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn level_vectors(&self) -> &[LevelVector] {
        &self.level_vectors
    }

    /// Positions `[start, end)` of the block owned by level vector `lv_pos`.
    pub fn block(&self, lv_pos: usize) -> std::ops::Range<usize> {
        self.offsets[lv_pos]..self.offsets[lv_pos + 1]
    }

    /// Positions of all indices at global level `ell`.
    pub fn slab_range(&self, ell: u32) -> Result<std::ops::Range<usize>> {
        let base = self.d as u32 * self.j0;
        if ell < base || ell > self.l_max {
            return Err(Error::IndexOutOfRange(format!(
                "global level {ell} outside {base}..={}",
                self.l_max
            )));
        }
        let i = (ell - base) as usize;
        let lv_lo = self.slab_starts[i];
        let lv_hi = self.slab_starts[i + 1];
        Ok(self.offsets[lv_lo]..self.offsets[lv_hi])
    }

    /// Positions of all indices with global level strictly below `ell`.
    pub fn below_level(&self, ell: u32) -> std::ops::Range<usize> {
        let base = self.d as u32 * self.j0;
        let i = (ell.max(base) - base) as usize;
        let lv = self.slab_starts[i.min(self.slab_starts.len() - 1)];
        0..self.offsets[lv]
    }

    fn lv_position(&self, levels: &LevelVector) -> Option<usize> {
        self.level_vectors.binary_search(levels).ok()
    }

    /// Position of `idx` in the canonical enumeration, if covered.
    pub fn position(&self, idx: &WaveletIndex) -> Option<usize> {
        if idx.dim() != self.d {
            return None;
        }
        let lv = self.lv_position(&idx.levels)?;
        let counts = &self.axis_counts[lv];
        let mut rank = 0usize;
        for (t, &c) in idx.translations.iter().zip(counts) {
            if *t >= c {
                return None;
            }
            rank = rank * c as usize + *t as usize;
        }
        Some(self.offsets[lv] + rank)
    }

    /// Index stored at `pos`.
    pub fn index_at(&self, pos: usize) -> WaveletIndex {
        assert!(pos < self.len(), "position {pos} out of range");
        let lv = match self.offsets.binary_search(&pos) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let counts = &self.axis_counts[lv];
        let mut rank = pos - self.offsets[lv];
        let mut translations = vec![0u32; self.d];
        for axis in (0..self.d).rev() {
            let c = counts[axis] as usize;
            translations[axis] = (rank % c) as u32;
            rank /= c;
        }
        WaveletIndex {
            levels: self.level_vectors[lv].clone(),
            translations,
        }
    }

    /// Iterate all indices in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = WaveletIndex> + '_ {
        (0..self.len()).map(|p| self.index_at(p))
    }

    /// Visit, for every level vector, the position and value of each basis
    /// function that is nonzero at `unit_point` (unit-cube coordinates).
    /// `scale` multiplies every reported value; pass `1/sqrt(vol(Q))` to
    /// evaluate on a general domain.
    pub fn visit_active<B: UnivariateBasis, F: FnMut(usize, f64)>(
        &self,
        basis: &B,
        unit_point: &[f64],
        scale: f64,
        mut visit: F,
    ) {
        debug_assert_eq!(unit_point.len(), self.d);
        for (lv, levels) in self.level_vectors.iter().enumerate() {
            let counts = &self.axis_counts[lv];
            self.visit_active_rec(basis, levels, counts, unit_point, scale, 0, 0, lv, &mut visit);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn visit_active_rec<B: UnivariateBasis, F: FnMut(usize, f64)>(
        &self,
        basis: &B,
        levels: &LevelVector,
        counts: &[u32],
        unit_point: &[f64],
        value: f64,
        axis: usize,
        rank: usize,
        lv: usize,
        visit: &mut F,
    ) {
        if axis == self.d {
            visit(self.offsets[lv] + rank, value);
            return;
        }
        // Collected per axis to keep the recursion borrow-free; at most
        // kappa entries per level.
        let mut active: Vec<(u32, f64)> = Vec::with_capacity(2);
        basis.visit_active(levels.0[axis], unit_point[axis], |t, v| active.push((t, v)));
        for (t, v) in active {
            self.visit_active_rec(
                basis,
                levels,
                counts,
                unit_point,
                value * v,
                axis + 1,
                rank * counts[axis] as usize + t as usize,
                lv,
                visit,
            );
        }
    }
}

/// Evaluate the d-variate basis function `idx` at a point of `domain`.
///
/// The unit-cube tensor product is composed with the affine coordinate map
/// and rescaled by `vol(Q)^{-1/2}` so it keeps unit L2 norm on `Q`.
pub fn tensor_eval<B: UnivariateBasis>(
    basis: &B,
    idx: &WaveletIndex,
    domain: &Domain,
    point: &[f64],
    dual: bool,
) -> Result<f64> {
    if idx.dim() != domain.dim() {
        return Err(Error::Config(format!(
            "index dimension {} does not match domain dimension {}",
            idx.dim(),
            domain.dim()
        )));
    }
    let mut unit = Vec::with_capacity(point.len());
    domain.to_unit(point, &mut unit)?;
    let mut value = domain.volume().powf(-0.5);
    for (axis, (&level, &t)) in idx.levels.0.iter().zip(&idx.translations).enumerate() {
        let uni = UniIndex::new(level, t);
        let v = if dual {
            basis.eval_dual(uni, unit[axis])?
        } else {
            basis.eval_primal(uni, unit[axis])?
        };
        value *= v;
    }
    Ok(value)
}

/// All indices at level vector `jvec` whose basis function is nonzero at
/// `point`; exactly one for Haar, at most `kappa^d` in general.
pub fn locate_active_indices<B: UnivariateBasis>(
    basis: &B,
    jvec: &LevelVector,
    domain: &Domain,
    point: &[f64],
) -> Result<Vec<WaveletIndex>> {
    let mut unit = Vec::with_capacity(point.len());
    domain.to_unit(point, &mut unit)?;
    let mut per_axis: Vec<Vec<u32>> = Vec::with_capacity(jvec.dim());
    for (axis, &level) in jvec.0.iter().enumerate() {
        let mut active = Vec::new();
        basis.visit_active(level, unit[axis], |t, v| {
            if v != 0.0 {
                active.push(t);
            }
        });
        per_axis.push(active);
    }
    let mut out = Vec::new();
    let mut trans = vec![0u32; jvec.dim()];
    fn product(
        per_axis: &[Vec<u32>],
        axis: usize,
        trans: &mut Vec<u32>,
        levels: &LevelVector,
        out: &mut Vec<WaveletIndex>,
    ) {
        if axis == per_axis.len() {
            out.push(WaveletIndex {
                levels: levels.clone(),
                translations: trans.clone(),
            });
            return;
        }
        for &t in &per_axis[axis] {
            trans[axis] = t;
            product(per_axis, axis + 1, trans, levels, out);
        }
    }
    product(&per_axis, 0, &mut trans, jvec, &mut out);
    Ok(out)
}

/// Proven sup-norm amplification factor for coefficient sequences on the
/// full index set up to level `l_max`: any linear combination with
/// coefficients bounded by 1 in absolute value has sup norm at most this.
pub fn localization_bound(d: usize, j0: u32, l_max: u32, kappa: f64) -> f64 {
    assert!(d >= 2, "localization bound is stated for d >= 2");
    let dm1 = (d - 1) as f64;
    let spread = (std::f64::consts::E * (l_max as f64 - (d as u32 * j0) as f64 + dm1) / dm1)
        .powf(dm1)
        * 2f64.powf(l_max as f64 / 2.0);
    kappa.powi(2 * d as i32) * (2.0 + std::f64::consts::SQRT_2) * spread
}

/// Squared L2 norm of `sum coef[pos] * Psi*_pos` computed by exact cell sums
/// (Haar-grade: every basis function must be piecewise constant on the dyadic
/// grid with `2^grid_level` cells per axis). Test utility for the Parseval
/// identity.
pub fn synthesis_l2_norm_sq<B: UnivariateBasis>(
    basis: &B,
    set: &IndexSet,
    domain: &Domain,
    coefficients: &[f64],
    grid_level: u32,
) -> Result<f64> {
    assert_eq!(coefficients.len(), set.len());
    let d = set.dim();
    let cells_per_axis = 1usize << grid_level;
    let total_cells = cells_per_axis.pow(d as u32);
    let mut acc = KahanSum::new();
    let mut unit = vec![0.0; d];
    let mut point = vec![0.0; d];
    let cell_vol = domain.volume() / total_cells as f64;
    for cell in 0..total_cells {
        let mut rest = cell;
        for u in unit.iter_mut().rev() {
            *u = ((rest % cells_per_axis) as f64 + 0.5) / cells_per_axis as f64;
            rest /= cells_per_axis;
        }
        domain.from_unit(&unit, &mut point);
        let mut value = KahanSum::new();
        let scale = domain.volume().powf(-0.5);
        set.visit_active(basis, &unit, scale, |pos, v| value.add(coefficients[pos] * v));
        let v = value.value();
        acc.add(v * v * cell_vol);
    }
    Ok(acc.value())
}
