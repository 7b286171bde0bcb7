//! Univariate biorthogonal wavelet bases on `[0,1]`.
//!
//! A basis is described by its coarsest level `j0`, the dimension offset `B`
//! (the scaling space at level `j` has dimension `2^j + B`), and a
//! localization constant `kappa` bounding sup-norms and support overlaps.
//! Levels are indexed with the convention that level `j0` holds the scaling
//! functions themselves and each level `j > j0` holds the `2^(j-1)` wavelets
//! spanning the complement of one refinement step.
//!
//! Haar is the only shipped instance. The trait is the seam where a
//! boundary-adapted spline basis could be added later without touching the
//! tensor-product, model or selection code; such a basis would also satisfy
//! the Lipschitz regularity that Haar lacks (the residual-term analysis for
//! copula and discrete-Lévy data assumes Lipschitz analysis wavelets, so for
//! Haar those two pipelines are heuristic).

use crate::{Error, Result};

/// Index of a univariate basis function: a level and a translation.
///
/// `level == j0` addresses scaling functions, deeper levels address wavelets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UniIndex {
    pub level: u32,
    pub translation: u32,
}

impl UniIndex {
    pub fn new(level: u32, translation: u32) -> Self {
        Self { level, translation }
    }
}

/// A univariate basis on `[0,1]`.
///
/// All functions are normalized to unit L2 norm. Evaluation is
/// right-continuous with `x = 1` assigned to the last dyadic cell, so point
/// masses on the closed cube are always attributed to exactly one cell.
pub trait UnivariateBasis: Sync {
    /// Coarsest resolution level.
    fn j0(&self) -> u32;

    /// Dimension offset `B`: the scaling space at level `j` has `2^j + B`
    /// functions.
    fn dim_offset(&self) -> u32;

    /// Localization constant bounding overlaps and sup-norms.
    fn kappa(&self) -> f64;

    /// Whether primal and dual families coincide.
    fn is_orthonormal(&self) -> bool;

    /// Number of functions at `level` (`2^j0 + B` scaling functions at the
    /// coarsest level, `2^(level-1)` wavelets deeper).
    fn detail_count(&self, level: u32) -> usize;

    fn check_index(&self, idx: UniIndex) -> Result<()> {
        if idx.level < self.j0() {
            return Err(Error::IndexOutOfRange(format!(
                "level {} below coarsest level {}",
                idx.level,
                self.j0()
            )));
        }
        let count = self.detail_count(idx.level) as u32;
        if idx.translation >= count {
            return Err(Error::IndexOutOfRange(format!(
                "translation {} out of range 0..{} at level {}",
                idx.translation, count, idx.level
            )));
        }
        Ok(())
    }

    /// Evaluate the primal (analysis) function at `x` in `[0,1]`.
    fn eval_primal(&self, idx: UniIndex, x: f64) -> Result<f64>;

    /// Evaluate the dual (synthesis) function at `x`.
    fn eval_dual(&self, idx: UniIndex, x: f64) -> Result<f64>;

    /// Visit every function at `level` that is nonzero at `x`, passing its
    /// translation and primal value. At most `kappa` visits per call.
    fn visit_active<F: FnMut(u32, f64)>(&self, level: u32, x: f64, visit: F);
}

fn check_unit_interval(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::OutsideDomain(format!("x = {x} outside [0,1]")));
    }
    Ok(())
}

/// The Haar basis: orthonormal, piecewise constant, `B = 0`, `kappa = 1`.
#[derive(Clone, Copy, Debug)]
pub struct Haar {
    j0: u32,
}

impl Haar {
    pub fn new(j0: u32) -> Self {
        Self { j0 }
    }

    /// Dyadic cell of `x` among `count` cells, with `x = 1` in the last one.
    #[inline]
    fn cell_of(x: f64, count: u32) -> u32 {
        let c = (x * count as f64).floor() as i64;
        c.clamp(0, count as i64 - 1) as u32
    }

    /// Translation and value of the single Haar function at `level` that is
    /// nonzero at `x`. Infallible counterpart of `eval_primal` used on hot
    /// accumulation paths.
    #[inline]
    pub fn active_value(&self, level: u32, x: f64) -> (u32, f64) {
        if level == self.j0 {
            let count = 1u32 << self.j0;
            let t = Self::cell_of(x, count);
            (t, (count as f64).sqrt())
        } else {
            let cells = 1u32 << (level - 1);
            let t = Self::cell_of(x, cells);
            let frac = x * cells as f64 - t as f64;
            let amp = ((cells) as f64).sqrt();
            // x = 1 clamps into the last cell with frac = 1: second half.
            let sign = if frac < 0.5 { 1.0 } else { -1.0 };
            (t, sign * amp)
        }
    }
}

impl Default for Haar {
    fn default() -> Self {
        Self::new(0)
    }
}

impl UnivariateBasis for Haar {
    fn j0(&self) -> u32 {
        self.j0
    }

    fn dim_offset(&self) -> u32 {
        0
    }

    fn kappa(&self) -> f64 {
        1.0
    }

    fn is_orthonormal(&self) -> bool {
        true
    }

    fn detail_count(&self, level: u32) -> usize {
        if level <= self.j0 {
            1usize << self.j0
        } else {
            1usize << (level - 1)
        }
    }

    fn eval_primal(&self, idx: UniIndex, x: f64) -> Result<f64> {
        self.check_index(idx)?;
        check_unit_interval(x)?;
        let (t, v) = self.active_value(idx.level, x);
        Ok(if t == idx.translation { v } else { 0.0 })
    }

    fn eval_dual(&self, idx: UniIndex, x: f64) -> Result<f64> {
        // Orthonormal: self-dual.
        self.eval_primal(idx, x)
    }

    fn visit_active<F: FnMut(u32, f64)>(&self, level: u32, x: f64, mut visit: F) {
        let (t, v) = self.active_value(level, x);
        visit(t, v);
    }
}

/// Matrix of inner products `<psi_lambda, psi*_mu>` between all functions at
/// `level_a` (rows) and `level_b` (columns), computed by exact
/// piecewise-constant integration. Test utility for the biorthogonality and
/// cross-level orthogonality requirements.
pub fn gram<B: UnivariateBasis>(basis: &B, level_a: u32, level_b: u32) -> Result<Vec<Vec<f64>>> {
    for level in [level_a, level_b] {
        if level < basis.j0() {
            return Err(Error::IndexOutOfRange(format!(
                "level {level} below coarsest level {}",
                basis.j0()
            )));
        }
    }
    let na = basis.detail_count(level_a);
    let nb = basis.detail_count(level_b);
    // Haar functions at level l are constant on cells of width 2^-max(l, j0);
    // integrate on the common refinement.
    let resolution = level_a.max(level_b).max(basis.j0());
    let cells = 1u64 << resolution;
    let h = 1.0 / cells as f64;
    let mut out = vec![vec![0.0; nb]; na];
    for (ia, row) in out.iter_mut().enumerate() {
        let idx_a = UniIndex::new(level_a, ia as u32);
        for (ib, entry) in row.iter_mut().enumerate() {
            let idx_b = UniIndex::new(level_b, ib as u32);
            let mut acc = crate::numeric::KahanSum::new();
            for cell in 0..cells {
                let mid = (cell as f64 + 0.5) * h;
                let fa = basis.eval_primal(idx_a, mid)?;
                let fb = basis.eval_dual(idx_b, mid)?;
                acc.add(fa * fb * h);
            }
            *entry = acc.value();
        }
    }
    Ok(out)
}
