//! The pyramidal model collection.
//!
//! A model is indexed by a cut level `ell1`: it keeps every basis function
//! with global level below `ell1` and, at each deeper level `ell1 + k`, an
//! arbitrary subset of exactly `N(ell1, k)` functions. The default budgets
//! follow the floor-exact sparsity schedule
//! `N(ell1, k) = floor(2 * slab(ell1+k) * (k+2)^-(d+2) * 2^-k * M^-d)` with
//! `M = 2 + B * 2^(1-j0)`, which keeps the number of models per dimension
//! bounded. All models with the same `ell1` share one dimension `D(ell1)`.
//!
//! At desk scales the default budgets are all zero (see the `budget` tests),
//! so a custom-budget mode exists to exercise the sparse machinery; paper
//! budgets remain the default for estimation runs.

use crate::hyperbolic::IndexSet;
use crate::numeric::{binomial, series_sum};
use crate::uniwavelet::UnivariateBasis;
use crate::{Error, Result};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use std::collections::BTreeMap;

/// Sparsity budgets for one model collection: the maximal level, per-slab
/// sizes and the budget rule.
#[derive(Clone, Debug)]
pub struct SparsitySchedule {
    d: usize,
    j0: u32,
    dim_offset: u32,
    l_max: u32,
    /// Slab sizes indexed by `ell - d*j0`.
    slab_sizes: Vec<usize>,
    custom: Option<BTreeMap<(u32, u32), usize>>,
}

impl SparsitySchedule {
    /// Schedule with the default floor-exact budgets.
    pub fn paper<B: UnivariateBasis>(basis: &B, d: usize, l_max: u32) -> Result<Self> {
        Self::build(basis, d, l_max, None)
    }

    /// Schedule with caller-supplied budgets; entries not present are zero.
    /// Keys are `(ell1, k)`.
    pub fn custom<B: UnivariateBasis>(
        basis: &B,
        d: usize,
        l_max: u32,
        budgets: BTreeMap<(u32, u32), usize>,
    ) -> Result<Self> {
        Self::build(basis, d, l_max, Some(budgets))
    }

    fn build<B: UnivariateBasis>(
        basis: &B,
        d: usize,
        l_max: u32,
        custom: Option<BTreeMap<(u32, u32), usize>>,
    ) -> Result<Self> {
        let j0 = basis.j0();
        let base = d as u32 * j0;
        if l_max < base {
            return Err(Error::EmptyLevelRange(format!(
                "l_max {l_max} below d*j0 = {base}"
            )));
        }
        let slab_sizes: Vec<usize> = (base..=l_max)
            .map(|ell| crate::hyperbolic::resolution_slab_size(basis, d, ell))
            .collect::<Result<_>>()?;
        let sched = Self {
            d,
            j0,
            dim_offset: basis.dim_offset(),
            l_max,
            slab_sizes,
            custom,
        };
        if let Some(map) = &sched.custom {
            for (&(ell1, k), &n) in map {
                sched.check_pair(ell1, k)?;
                let cap = sched.slab_size(ell1 + k)?;
                if n > cap {
                    return Err(Error::Config(format!(
                        "custom budget N({ell1},{k}) = {n} exceeds slab size {cap}"
                    )));
                }
            }
        }
        Ok(sched)
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

    pub fn is_paper_mode(&self) -> bool {
        self.custom.is_none()
    }

    /// Smallest admissible cut level, `d*j0 + 1`.
    pub fn ell1_min(&self) -> u32 {
        self.d as u32 * self.j0 + 1
    }

    /// Largest admissible cut level, `l_max + 1` (the full model).
    pub fn ell1_max(&self) -> u32 {
        self.l_max + 1
    }

    pub fn slab_size(&self, ell: u32) -> Result<usize> {
        let base = self.d as u32 * self.j0;
        if ell < base || ell > self.l_max {
            return Err(Error::IndexOutOfRange(format!(
                "global level {ell} outside {base}..={}",
                self.l_max
            )));
        }
        Ok(self.slab_sizes[(ell - base) as usize])
    }

    fn check_ell1(&self, ell1: u32) -> Result<()> {
        if ell1 < self.ell1_min() || ell1 > self.ell1_max() {
            return Err(Error::IndexOutOfRange(format!(
                "ell1 = {ell1} outside {}..={}",
                self.ell1_min(),
                self.ell1_max()
            )));
        }
        Ok(())
    }

    fn check_pair(&self, ell1: u32, k: u32) -> Result<()> {
        self.check_ell1(ell1)?;
        if ell1 + k > self.l_max {
            return Err(Error::IndexOutOfRange(format!(
                "sparse level {} beyond l_max {}",
                ell1 + k,
                self.l_max
            )));
        }
        Ok(())
    }

    /// Sparse budget `N(ell1, k)` for the slab at global level `ell1 + k`.
    ///
    /// Paper mode evaluates the floor formula in exact integer arithmetic:
    /// `M^d = (2^j0 + B)^d * 2^d / 2^(d*j0)`, so
    /// `N = (2 * slab * 2^(d*j0)) / ((k+2)^(d+2) * 2^(k+d) * (2^j0 + B)^d)`.
    pub fn budget(&self, ell1: u32, k: u32) -> Result<usize> {
        self.check_pair(ell1, k)?;
        if let Some(map) = &self.custom {
            return Ok(*map.get(&(ell1, k)).unwrap_or(&0));
        }
        let slab = self.slab_size(ell1 + k)? as u128;
        let d = self.d as u32;
        let numerator = 2u128 * slab * (1u128 << (d * self.j0));
        let scaled_m = ((1u128 << self.j0) + self.dim_offset as u128).pow(d);
        let denominator = (k as u128 + 2).pow(d + 2) * (1u128 << (k + d)) * scaled_m;
        Ok((numerator / denominator) as usize)
    }

    /// Common dimension `D(ell1)` of every model with cut level `ell1`.
    pub fn model_dimension(&self, ell1: u32) -> Result<usize> {
        self.check_ell1(ell1)?;
        let base = self.d as u32 * self.j0;
        let mandatory: usize = (base..ell1)
            .map(|ell| self.slab_size(ell))
            .sum::<Result<usize>>()?;
        let mut sparse = 0usize;
        if ell1 <= self.l_max {
            for k in 0..=(self.l_max - ell1) {
                sparse += self.budget(ell1, k)?;
            }
        }
        Ok(mandatory + sparse)
    }

    /// Number of models sharing cut level `ell1`, saturating at `u128::MAX`.
    pub fn model_count(&self, ell1: u32) -> Result<u128> {
        self.check_ell1(ell1)?;
        let mut count = 1u128;
        if ell1 <= self.l_max {
            for k in 0..=(self.l_max - ell1) {
                let c = binomial(self.slab_size(ell1 + k)?, self.budget(ell1, k)?);
                count = count.saturating_mul(c);
            }
        }
        Ok(count)
    }

    /// `log(#models at ell1)`, computed through log-gamma so collections far
    /// beyond `u128` stay exact to floating precision.
    pub fn log_model_count(&self, ell1: u32) -> Result<f64> {
        use statrs::function::gamma::ln_gamma;
        self.check_ell1(ell1)?;
        let mut acc = 0.0f64;
        if ell1 <= self.l_max {
            for k in 0..=(self.l_max - ell1) {
                let n = self.slab_size(ell1 + k)? as f64;
                let r = self.budget(ell1, k)? as f64;
                acc += ln_gamma(n + 1.0) - ln_gamma(r + 1.0) - ln_gamma(n - r + 1.0);
            }
        }
        Ok(acc)
    }

    /// Total number of models across all cut levels, saturating.
    pub fn total_model_count(&self) -> Result<u128> {
        let mut total = 0u128;
        for ell1 in self.ell1_min()..=self.ell1_max() {
            total = total.saturating_add(self.model_count(ell1)?);
        }
        Ok(total)
    }
}

/// Canonical index set covering the whole collection (every index with
/// global level at most the schedule's `l_max`).
pub fn full_index_set<B: UnivariateBasis>(basis: &B, schedule: &SparsitySchedule) -> Result<IndexSet> {
    IndexSet::new(basis, schedule.dim(), schedule.l_max())
}

/// One member of the collection: the cut level plus the chosen sparse subset
/// at each deeper slab, stored as sorted positions into the canonical index
/// set. Equality is structural.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PyramidModel {
    pub ell1: u32,
    /// Entry `k` holds the positions kept at global level `ell1 + k`,
    /// ascending.
    pub sparse_levels: Vec<Vec<usize>>,
}

impl PyramidModel {
    /// The model keeping exactly the mandatory pyramid below `ell1` and
    /// nothing above (only valid for schedules with zero budgets at `ell1`).
    pub fn bare(ell1: u32, schedule: &SparsitySchedule) -> Result<Self> {
        let mut sparse_levels = Vec::new();
        if ell1 <= schedule.l_max() {
            for k in 0..=(schedule.l_max() - ell1) {
                let n = schedule.budget(ell1, k)?;
                if n != 0 {
                    return Err(Error::Config(format!(
                        "budget N({ell1},{k}) = {n} is nonzero; bare model undefined"
                    )));
                }
                sparse_levels.push(Vec::new());
            }
        }
        Ok(Self { ell1, sparse_levels })
    }

    /// Number of retained indices.
    pub fn dimension(&self, set: &IndexSet) -> usize {
        set.below_level(self.ell1).len() + self.sparse_levels.iter().map(Vec::len).sum::<usize>()
    }

    /// All retained positions in canonical order.
    pub fn positions(&self, set: &IndexSet) -> Vec<usize> {
        let mut out: Vec<usize> = set.below_level(self.ell1).collect();
        for level in &self.sparse_levels {
            out.extend(level.iter().copied());
        }
        out
    }

    /// Check budgets, slab membership and ordering against a schedule.
    pub fn validate(&self, schedule: &SparsitySchedule, set: &IndexSet) -> Result<()> {
        if self.ell1 < schedule.ell1_min() || self.ell1 > schedule.ell1_max() {
            return Err(Error::IndexOutOfRange(format!(
                "ell1 = {} outside schedule range",
                self.ell1
            )));
        }
        let expected_levels = if self.ell1 > schedule.l_max() {
            0
        } else {
            (schedule.l_max() - self.ell1 + 1) as usize
        };
        if self.sparse_levels.len() != expected_levels {
            return Err(Error::Config(format!(
                "model carries {} sparse levels, schedule expects {expected_levels}",
                self.sparse_levels.len()
            )));
        }
        for (k, kept) in self.sparse_levels.iter().enumerate() {
            let budget = schedule.budget(self.ell1, k as u32)?;
            if kept.len() != budget {
                return Err(Error::Config(format!(
                    "sparse level {} keeps {} indices, budget is {budget}",
                    self.ell1 + k as u32,
                    kept.len()
                )));
            }
            let slab = set.slab_range(self.ell1 + k as u32)?;
            for w in kept.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Config("sparse level not strictly ascending".into()));
                }
            }
            for &pos in kept {
                if !slab.contains(&pos) {
                    return Err(Error::Config(format!(
                        "position {pos} outside slab {slab:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Retained indices materialized per sparse level; the JSON surface.
    pub fn to_json_value(&self, set: &IndexSet) -> serde_json::Value {
        let sparse: Vec<serde_json::Value> = self
            .sparse_levels
            .iter()
            .enumerate()
            .map(|(k, kept)| {
                let indices: Vec<serde_json::Value> = kept
                    .iter()
                    .map(|&pos| {
                        let idx = set.index_at(pos);
                        serde_json::json!([idx.levels.0, idx.translations])
                    })
                    .collect();
                serde_json::json!({
                    "level": self.ell1 + k as u32,
                    "indices": indices,
                })
            })
            .collect();
        serde_json::json!({ "ell1": self.ell1, "sparse_levels": sparse })
    }
}

impl Serialize for PyramidModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        // Positions only; `to_json_value` gives the index-resolved form.
        let mut s = serializer.serialize_struct("PyramidModel", 2)?;
        s.serialize_field("ell1", &self.ell1)?;
        s.serialize_field("sparse_levels", &self.sparse_levels)?;
        s.end()
    }
}

/// Iterator over every model in the collection, cut levels ascending and
/// sparse subsets in lexicographic position order.
pub struct ModelIter<'a> {
    schedule: &'a SparsitySchedule,
    set: &'a IndexSet,
    ell1: u32,
    /// Per sparse level: chosen offsets within the slab (combination state).
    state: Option<Vec<Vec<usize>>>,
    done: bool,
}

/// Enumerate all models, refusing when the collection exceeds `cap`.
pub fn enumerate_models<'a>(
    schedule: &'a SparsitySchedule,
    set: &'a IndexSet,
    cap: u128,
) -> Result<ModelIter<'a>> {
    let total = schedule.total_model_count()?;
    if total > cap {
        return Err(Error::EnumerationCap(format!(
            "collection holds {total} models, cap is {cap}"
        )));
    }
    let mut it = ModelIter {
        schedule,
        set,
        ell1: schedule.ell1_min(),
        state: None,
        done: false,
    };
    it.reset_state()?;
    Ok(it)
}

/// Default enumeration cap.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

impl ModelIter<'_> {
    fn reset_state(&mut self) -> Result<()> {
        let l_max = self.schedule.l_max();
        let mut state = Vec::new();
        if self.ell1 <= l_max {
            for k in 0..=(l_max - self.ell1) {
                let n = self.schedule.budget(self.ell1, k)?;
                state.push((0..n).collect());
            }
        }
        self.state = Some(state);
        Ok(())
    }

    fn materialize(&self) -> PyramidModel {
        let state = self.state.as_ref().unwrap();
        let sparse_levels = state
            .iter()
            .enumerate()
            .map(|(k, combo)| {
                let slab = self.set.slab_range(self.ell1 + k as u32).unwrap();
                combo.iter().map(|&off| slab.start + off).collect()
            })
            .collect();
        PyramidModel {
            ell1: self.ell1,
            sparse_levels,
        }
    }

    /// Advance one combination in lexicographic order; false when exhausted.
    fn advance(&mut self) -> bool {
        let l_max = self.schedule.l_max();
        let state = self.state.as_mut().unwrap();
        for k in (0..state.len()).rev() {
            let slab_len = self
                .schedule
                .slab_size(self.ell1 + k as u32)
                .expect("slab in range")
                ;
            let combo = &mut state[k];
            let n = combo.len();
            // Find the rightmost slot that can still move right.
            let mut slot = n;
            while slot > 0 {
                let i = slot - 1;
                if combo[i] < slab_len - (n - i) {
                    combo[i] += 1;
                    for j in i + 1..n {
                        combo[j] = combo[j - 1] + 1;
                    }
                    // Reset deeper levels to their first combination.
                    for deeper in state[k + 1..].iter_mut() {
                        let m = deeper.len();
                        *deeper = (0..m).collect();
                    }
                    return true;
                }
                slot -= 1;
            }
        }
        // All combinations exhausted at this ell1; move to the next cut.
        if self.ell1 >= l_max + 1 {
            return false;
        }
        self.ell1 += 1;
        self.reset_state().expect("valid ell1");
        true
    }
}

impl Iterator for ModelIter<'_> {
    type Item = PyramidModel;

    fn next(&mut self) -> Option<PyramidModel> {
        if self.done {
            return None;
        }
        let model = self.materialize();
        if !self.advance() {
            self.done = true;
        }
        Some(model)
    }
}

/// Constant `kappa_1(d) = 2^-(d+1) (d-1)^-(d-1)` of the two-sided dimension
/// bound `kappa_1 (ell1 - d j0 + d - 2)^(d-1) 2^ell1 <= D(ell1) <= kappa_2 (...)`.
pub fn dimension_lower_const(d: usize) -> f64 {
    2f64.powi(-(d as i32 + 1)) * ((d - 1) as f64).powi(-(d as i32 - 1))
}

fn m_param(j0: u32, dim_offset: u32) -> f64 {
    2.0 + dim_offset as f64 * 2f64.powi(1 - j0 as i32)
}

fn c1_const(m: f64, d: usize) -> f64 {
    let dm1 = (d - 1) as f64;
    (m / 2.0).powi(d as i32) * (std::f64::consts::E / dm1).powf(dm1)
}

/// Constant `kappa_2(j0, B, d)` of the dimension upper bound.
pub fn dimension_upper_const(j0: u32, dim_offset: u32, d: usize) -> f64 {
    let m = m_param(j0, dim_offset);
    let c1 = c1_const(m, d);
    let dm1 = (d - 1) as f64;
    // s1(d) = sum_k (1 + k/(d-1))^(d-1) / (k+2)^(d+2). Each term is at most
    // (k+2)^-3 because 1 + k/(d-1) <= k+2 for d >= 2, so the tail from k is
    // dominated by 1/(2(k+1)^2).
    let s1 = series_sum(
        |k| (1.0 + k as f64 / dm1).powf(dm1) / ((k + 2) as f64).powi(d as i32 + 2),
        |k| 0.5 / ((k + 1) as f64).powi(2),
        1e-10,
    );
    c1 * (1.0 + 2.0 * m.powi(-(d as i32)) * c1 * s1)
}

/// Constant `kappa_3(j0, B, d)` bounding `log(#models at ell1) / D(ell1)`.
pub fn log_cardinality_const(j0: u32, dim_offset: u32, d: usize) -> f64 {
    let m = m_param(j0, dim_offset);
    // s2 = sum 1/(k+2)^3, s3 = sum log(k+2)/(k+2)^3, s4 = sum 1/(k+2)^2.
    let s2 = series_sum(
        |k| ((k + 2) as f64).powi(-3),
        |k| 0.5 / ((k.max(1) + 1) as f64).powi(2),
        1e-10,
    );
    let s3 = series_sum(
        |k| ((k + 2) as f64).ln() / ((k + 2) as f64).powi(3),
        |k| {
            let m = (k.max(1) + 1) as f64;
            (2.0 * m.ln() + 1.0) / (4.0 * m * m)
        },
        1e-10,
    );
    // Closed form: sum_{m >= 2} 1/m^2 = pi^2/6 - 1.
    let s4 = std::f64::consts::PI.powi(2) / 6.0 - 1.0;
    ((std::f64::consts::E / 2.0).ln() + d as f64 * m.ln()) * s2 + (d as f64 + 2.0) * s3
        + std::f64::consts::LN_2 * s4
}
