//! Penalized pyramid selection.
//!
//! With additive penalty weights `v2[pos] = (c1 * sigma2 + c2 * R) / n_bar`,
//! minimizing the penalized least-squares contrast over the collection is the
//! same as maximizing `crit(m) = sum_{pos in m} (beta^2 - v2)` (the contrast
//! of the projection estimator is `-sum beta^2`). Because `crit` is additive
//! and the sparse sets are size-constrained per slab, the within-cut optimum
//! keeps the top-scoring indices of each slab; a scan over cut levels then
//! finds the global optimum. An exhaustive selector over the whole collection
//! validates this on small schedules.

use crate::frameworks::CoefficientTable;
use crate::hyperbolic::{Domain, IndexSet, WaveletIndex};
use crate::numeric::KahanSum;
use crate::pyramid::{enumerate_models, PyramidModel, SparsitySchedule};
use crate::uniwavelet::UnivariateBasis;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::ser::{SerializeSeq, SerializeStruct};
use serde::{Serialize, Serializer};

/// Penalty configuration: `pen(m) = sum (c1 * sigma2 + c2 * r_bar) / n_bar`.
/// The default constants are the simulation-calibrated `c1 = 1.5, c2 = 0.5`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PenaltyConfig {
    pub c1: f64,
    pub c2: f64,
    pub r_bar: f64,
    pub n_bar: f64,
}

impl PenaltyConfig {
    pub fn new(r_bar: f64, n_bar: f64) -> Self {
        Self {
            c1: 1.5,
            c2: 0.5,
            r_bar,
            n_bar,
        }
    }

    pub fn with_constants(mut self, c1: f64, c2: f64) -> Self {
        self.c1 = c1;
        self.c2 = c2;
        self
    }
}

/// Per-index penalty weight `v2 = (c1 * sigma2 + c2 * r_bar) / n_bar`.
#[inline]
pub fn penalty_weight(sigma2: f64, config: &PenaltyConfig) -> f64 {
    (config.c1 * sigma2 + config.c2 * config.r_bar) / config.n_bar
}

/// Per-position selection scores `beta^2 - v2`.
pub fn scores(table: &CoefficientTable, config: &PenaltyConfig) -> Vec<f64> {
    table
        .beta()
        .iter()
        .zip(table.sigma2())
        .map(|(&b, &s)| b * b - penalty_weight(s, config))
        .collect()
}

/// Penalized contrast of a model: `-sum beta^2 + pen(m)`. Its argmin over
/// the collection coincides with the argmax of [`model_crit`].
pub fn penalized_contrast(
    table: &CoefficientTable,
    config: &PenaltyConfig,
    positions: &[usize],
) -> f64 {
    let mut acc = KahanSum::new();
    for &pos in positions {
        let b = table.beta()[pos];
        acc.add(-b * b + penalty_weight(table.sigma2()[pos], config));
    }
    acc.value()
}

/// `crit(m) = sum over the model's positions of (beta^2 - v2)`.
pub fn model_crit(score: &[f64], positions: &[usize]) -> f64 {
    let mut acc = KahanSum::new();
    for &pos in positions {
        acc.add(score[pos]);
    }
    acc.value()
}

fn check_table_covers(table: &CoefficientTable, schedule: &SparsitySchedule) -> Result<()> {
    let set = table.index_set();
    if set.dim() != schedule.dim() || set.j0() != schedule.j0() || set.l_max() < schedule.l_max() {
        return Err(Error::CoverageMismatch(format!(
            "table covers (d={}, j0={}, L={}), schedule needs (d={}, j0={}, L={})",
            set.dim(),
            set.j0(),
            set.l_max(),
            schedule.dim(),
            schedule.j0(),
            schedule.l_max()
        )));
    }
    Ok(())
}

/// Per-slab sorted scores shared by all cut levels.
struct SortedSlabs {
    /// For each global level `ell - d*j0`: positions sorted by
    /// (score descending, position ascending).
    order: Vec<Vec<usize>>,
    /// Compensated prefix sums of the sorted scores (entry `i` = sum of the
    /// first `i` scores).
    prefix: Vec<Vec<f64>>,
    /// Cumulative full-slab sums for global levels `< ell` (mandatory part).
    mandatory_below: Vec<f64>,
}

fn sort_slabs(score: &[f64], set: &IndexSet, schedule: &SparsitySchedule) -> SortedSlabs {
    let base = schedule.dim() as u32 * schedule.j0();
    let l_max = schedule.l_max();
    let mut order = Vec::new();
    let mut prefix = Vec::new();
    let mut mandatory_below = vec![0.0];
    let mut mandatory = KahanSum::new();
    for ell in base..=l_max {
        let slab = set.slab_range(ell).expect("slab in range");
        let mut idx: Vec<usize> = slab.clone().collect();
        idx.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
        let mut pref = Vec::with_capacity(idx.len() + 1);
        let mut acc = KahanSum::new();
        pref.push(0.0);
        for &pos in &idx {
            acc.add(score[pos]);
            pref.push(acc.value());
        }
        order.push(idx);
        for pos in slab {
            mandatory.add(score[pos]);
        }
        mandatory_below.push(mandatory.value());
        prefix.push(pref);
    }
    SortedSlabs {
        order,
        prefix,
        mandatory_below,
    }
}

fn crit_at_cut(slabs: &SortedSlabs, schedule: &SparsitySchedule, ell1: u32) -> Result<f64> {
    let base = schedule.dim() as u32 * schedule.j0();
    let mut acc = KahanSum::new();
    acc.add(slabs.mandatory_below[(ell1 - base) as usize]);
    if ell1 <= schedule.l_max() {
        for k in 0..=(schedule.l_max() - ell1) {
            let n = schedule.budget(ell1, k)?;
            let slab_idx = (ell1 + k - base) as usize;
            acc.add(slabs.prefix[slab_idx][n]);
        }
    }
    Ok(acc.value())
}

fn model_at_cut(slabs: &SortedSlabs, schedule: &SparsitySchedule, ell1: u32) -> Result<PyramidModel> {
    let base = schedule.dim() as u32 * schedule.j0();
    let mut sparse_levels = Vec::new();
    if ell1 <= schedule.l_max() {
        for k in 0..=(schedule.l_max() - ell1) {
            let n = schedule.budget(ell1, k)?;
            let slab_idx = (ell1 + k - base) as usize;
            let mut kept: Vec<usize> = slabs.order[slab_idx][..n].to_vec();
            kept.sort_unstable();
            sparse_levels.push(kept);
        }
    }
    Ok(PyramidModel { ell1, sparse_levels })
}

/// Best model with cut level `ell1`: keeps, at each slab `ell1 + k`, the
/// `N(ell1, k)` indices with the largest scores (ties to the canonically
/// smaller index). Returns the model and its criterion value.
pub fn select_within(
    ell1: u32,
    table: &CoefficientTable,
    schedule: &SparsitySchedule,
    config: &PenaltyConfig,
) -> Result<(PyramidModel, f64)> {
    check_table_covers(table, schedule)?;
    if ell1 < schedule.ell1_min() || ell1 > schedule.ell1_max() {
        return Err(Error::IndexOutOfRange(format!(
            "ell1 = {ell1} outside {}..={}",
            schedule.ell1_min(),
            schedule.ell1_max()
        )));
    }
    let score = scores(table, config);
    let slabs = sort_slabs(&score, table.index_set(), schedule);
    Ok((
        model_at_cut(&slabs, schedule, ell1)?,
        crit_at_cut(&slabs, schedule, ell1)?,
    ))
}

/// Output of the two-step selection: the chosen cut level and model, the
/// criterion trace over all cut levels, and the retained coefficients.
#[derive(Clone, Debug)]
pub struct EstimateResult {
    pub ell_hat: u32,
    pub crit_trace: Vec<(u32, f64)>,
    pub model: PyramidModel,
    /// Retained `(index, beta)` pairs in canonical order.
    pub coefficients: Vec<(WaveletIndex, f64)>,
}

impl EstimateResult {
    pub fn crit(&self) -> f64 {
        self.crit_trace
            .iter()
            .find(|(l, _)| *l == self.ell_hat)
            .map(|(_, c)| *c)
            .expect("trace covers the selected cut")
    }

    /// JSON layout: `{ell_hat, crit_trace, model, coefficients}` with each
    /// coefficient as `[levels, translations, beta]`.
    pub fn to_json_value(&self, set: &IndexSet) -> serde_json::Value {
        serde_json::json!({
            "ell_hat": self.ell_hat,
            "crit_trace": self.crit_trace,
            "model": self.model.to_json_value(set),
            "coefficients": self
                .coefficients
                .iter()
                .map(|(idx, beta)| {
                    serde_json::json!([idx.levels.0, idx.translations, beta])
                })
                .collect::<Vec<_>>(),
        })
    }
}

impl Serialize for EstimateResult {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        struct Coefs<'a>(&'a [(WaveletIndex, f64)]);
        impl Serialize for Coefs<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut seq = s.serialize_seq(Some(self.0.len()))?;
                for (idx, beta) in self.0 {
                    seq.serialize_element(&(&idx.levels.0, &idx.translations, beta))?;
                }
                seq.end()
            }
        }
        let mut s = serializer.serialize_struct("EstimateResult", 4)?;
        s.serialize_field("ell_hat", &self.ell_hat)?;
        s.serialize_field("crit_trace", &self.crit_trace)?;
        s.serialize_field("model", &self.model)?;
        s.serialize_field("coefficients", &Coefs(&self.coefficients))?;
        s.end()
    }
}

/// Two-step selection: scan every cut level, keep the criterion argmax (ties
/// to the smaller cut level, i.e. the smaller model).
///
/// Slabs are scored and sorted once, shared across cut levels; the per-cut
/// work is then a prefix-sum lookup, so the total cost is dominated by one
/// sort of each slab.
pub fn select_pyramid(
    table: &CoefficientTable,
    schedule: &SparsitySchedule,
    config: &PenaltyConfig,
) -> Result<EstimateResult> {
    check_table_covers(table, schedule)?;
    let score = scores(table, config);
    let set = table.index_set();
    let slabs = sort_slabs(&score, set, schedule);
    let cuts: Vec<u32> = (schedule.ell1_min()..=schedule.ell1_max()).collect();
    let crit_trace: Vec<(u32, f64)> = cuts
        .par_iter()
        .map(|&ell1| Ok((ell1, crit_at_cut(&slabs, schedule, ell1)?)))
        .collect::<Result<_>>()?;
    let mut best = crit_trace[0];
    for &(ell1, crit) in &crit_trace[1..] {
        if crit > best.1 {
            best = (ell1, crit);
        }
    }
    let model = model_at_cut(&slabs, schedule, best.0)?;
    let coefficients = model
        .positions(set)
        .into_iter()
        .map(|pos| (set.index_at(pos), table.beta()[pos]))
        .collect();
    Ok(EstimateResult {
        ell_hat: best.0,
        crit_trace,
        model,
        coefficients,
    })
}

/// Exhaustive criterion maximization over the whole collection. Validation
/// oracle for [`select_pyramid`]; refuses collections larger than `cap`.
pub fn exhaustive_select(
    table: &CoefficientTable,
    schedule: &SparsitySchedule,
    config: &PenaltyConfig,
    cap: u128,
) -> Result<(PyramidModel, f64)> {
    check_table_covers(table, schedule)?;
    let score = scores(table, config);
    let set = table.index_set();
    let mut best: Option<(PyramidModel, f64)> = None;
    for model in enumerate_models(schedule, set, cap)? {
        let crit = model_crit(&score, &model.positions(set));
        match &best {
            Some((_, c)) if crit <= *c => {}
            _ => best = Some((model, crit)),
        }
    }
    best.ok_or_else(|| Error::Config("empty model collection".into()))
}

/// Evaluable estimator `sum beta * Psi*` restricted to a model's retained
/// coefficients. For Haar it is piecewise constant on the hyperbolic mesh.
#[derive(Clone, Debug)]
pub struct WaveletEstimator<B: UnivariateBasis + Clone> {
    basis: B,
    domain: Domain,
    coefficients: Vec<(WaveletIndex, f64)>,
}

/// Wire a selection result into an evaluable function on the domain.
pub fn assemble_estimator<B: UnivariateBasis + Clone>(
    result: &EstimateResult,
    basis: &B,
    domain: &Domain,
) -> WaveletEstimator<B> {
    WaveletEstimator {
        basis: basis.clone(),
        domain: domain.clone(),
        coefficients: result.coefficients.clone(),
    }
}

impl<B: UnivariateBasis + Clone> WaveletEstimator<B> {
    pub fn from_coefficients(
        basis: &B,
        domain: &Domain,
        coefficients: Vec<(WaveletIndex, f64)>,
    ) -> Self {
        Self {
            basis: basis.clone(),
            domain: domain.clone(),
            coefficients,
        }
    }

    pub fn coefficients(&self) -> &[(WaveletIndex, f64)] {
        &self.coefficients
    }

    /// Point evaluation; errors outside the domain.
    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        let mut unit = Vec::with_capacity(point.len());
        self.domain.to_unit(point, &mut unit)?;
        let scale = self.domain.volume().powf(-0.5);
        let mut acc = KahanSum::new();
        for (idx, beta) in &self.coefficients {
            let mut v = scale * *beta;
            for (axis, (&level, &t)) in idx.levels.0.iter().zip(&idx.translations).enumerate() {
                let mut value = 0.0;
                self.basis.visit_active(level, unit[axis], |tt, vv| {
                    if tt == t {
                        value = vv;
                    }
                });
                v *= value;
                if v == 0.0 {
                    break;
                }
            }
            acc.add(v);
        }
        Ok(acc.value())
    }

    /// Values at the midpoints of the dyadic tensor grid with `2^g` cells per
    /// axis, row-major with the last axis fastest. For Haar with `g` at least
    /// the deepest per-axis level these are the exact cell values.
    pub fn grid_values(&self, g: u32) -> Vec<f64> {
        let d = self.domain.dim();
        let cells = 1usize << g;
        let total = cells.pow(d as u32);
        let mut out = vec![0.0; total];
        let scale = self.domain.volume().powf(-0.5);
        // Accumulate each coefficient over the grid cells where its factor
        // per axis is constant; per-axis values are sampled at midpoints, so
        // this equals midpoint evaluation even when g is coarse.
        let mut axis_values: Vec<Vec<f64>> = vec![vec![0.0; cells]; d];
        for (idx, beta) in &self.coefficients {
            for axis in 0..d {
                let level = idx.levels.0[axis];
                let t = idx.translations[axis];
                let values = &mut axis_values[axis];
                for (c, slot) in values.iter_mut().enumerate() {
                    let x = (c as f64 + 0.5) / cells as f64;
                    let mut v = 0.0;
                    self.basis.visit_active(level, x, |tt, vv| {
                        if tt == t {
                            v = vv;
                        }
                    });
                    *slot = v;
                }
            }
            for (cell, slot) in out.iter_mut().enumerate() {
                let mut rest = cell;
                let mut v = scale * *beta;
                for axis in (0..d).rev() {
                    v *= axis_values[axis][rest % cells];
                    rest /= cells;
                }
                *slot += v;
            }
        }
        out
    }
}

/// Squared sequence-norm distance between two tables over their common
/// index set: `sum (beta_a - beta_b)^2`. For Haar this is the squared L2
/// distance of the represented functions within the span.
pub fn psi_norm_sq_distance(a: &CoefficientTable, b: &CoefficientTable) -> Result<f64> {
    a.check_same_coverage(b)?;
    let mut acc = KahanSum::new();
    for (x, y) in a.beta().iter().zip(b.beta()) {
        let diff = x - y;
        acc.add(diff * diff);
    }
    Ok(acc.value())
}

/// Best-approximation oracle: given exact coefficients, keep at each sparse
/// slab the budgeted number of largest-magnitude entries. Returns the model
/// and the squared tail `sum of discarded coefficients^2` within the covered
/// index set.
pub fn oracle_approximation(
    true_table: &CoefficientTable,
    ell1: u32,
    schedule: &SparsitySchedule,
) -> Result<(PyramidModel, f64)> {
    check_table_covers(true_table, schedule)?;
    if ell1 < schedule.ell1_min() || ell1 > schedule.ell1_max() {
        return Err(Error::IndexOutOfRange(format!(
            "ell1 = {ell1} outside {}..={}",
            schedule.ell1_min(),
            schedule.ell1_max()
        )));
    }
    let set = true_table.index_set();
    let beta = true_table.beta();
    let base = schedule.dim() as u32 * schedule.j0();
    let mut sparse_levels = Vec::new();
    let mut error = KahanSum::new();
    if ell1 <= schedule.l_max() {
        for k in 0..=(schedule.l_max() - ell1) {
            let n = schedule.budget(ell1, k)?;
            let slab = set.slab_range(ell1 + k)?;
            let mut idx: Vec<usize> = slab.collect();
            idx.sort_by(|&a, &b| beta[b].abs().total_cmp(&beta[a].abs()).then(a.cmp(&b)));
            let mut kept: Vec<usize> = idx[..n].to_vec();
            kept.sort_unstable();
            for &pos in &idx[n..] {
                error.add(beta[pos] * beta[pos]);
            }
            sparse_levels.push(kept);
        }
    }
    // Slabs below the cut are kept in full; everything in the covered set
    // beyond l_max does not exist by construction.
    let _ = base;
    Ok((
        PyramidModel { ell1, sparse_levels },
        error.value(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frameworks::CoefficientTable;
    use crate::hyperbolic::{tensor_eval, IndexSet};
    use crate::pyramid::full_index_set;
    use crate::uniwavelet::Haar;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn schedule_240() -> SparsitySchedule {
        let budgets = BTreeMap::from([((1, 0), 1usize), ((1, 1), 2), ((1, 2), 1)]);
        SparsitySchedule::custom(&Haar::new(0), 2, 3, budgets).unwrap()
    }

    /// Schedule with ~1e4 models (10445 to be exact, checked in a test).
    fn schedule_10k() -> SparsitySchedule {
        let budgets = BTreeMap::from([
            ((1, 0), 1usize),
            ((1, 1), 2),
            ((1, 2), 1),
            ((1, 3), 1),
            ((2, 0), 2),
            ((2, 1), 1),
            ((2, 2), 1),
            ((3, 0), 1),
            ((3, 1), 1),
            ((4, 0), 1),
        ]);
        SparsitySchedule::custom(&Haar::new(0), 2, 4, budgets).unwrap()
    }

    fn random_table(set: &Arc<IndexSet>, rng: &mut ChaCha8Rng) -> CoefficientTable {
        let beta: Vec<f64> = (0..set.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let sigma2: Vec<f64> = (0..set.len()).map(|_| rng.random::<f64>()).collect();
        CoefficientTable::from_parts(set.clone(), beta, sigma2)
    }

    #[test]
    fn penalty_weight_examples() {
        let cfg = PenaltyConfig::new(1.0, 100.0);
        assert_abs_diff_eq!(penalty_weight(2.0, &cfg), 0.035, epsilon = 1e-15);
        assert_abs_diff_eq!(penalty_weight(0.0, &cfg), 0.5 / 100.0, epsilon = 1e-15);
        let cfg2 = PenaltyConfig::new(1.0, 200.0);
        assert_abs_diff_eq!(
            penalty_weight(2.0, &cfg2),
            penalty_weight(2.0, &cfg) / 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn select_within_keeps_top_scores() {
        let basis = Haar::new(0);
        let budgets = BTreeMap::from([((1, 0), 1usize)]);
        let sched = SparsitySchedule::custom(&basis, 2, 1, budgets).unwrap();
        let set = Arc::new(full_index_set(&basis, &sched).unwrap());
        // Slab 1 holds two indices; give them scores 0.5 and 0.2 by choosing
        // beta with sigma2 = 0 and r_bar small.
        let mut beta = vec![0.0; set.len()];
        let slab = set.slab_range(1).unwrap();
        beta[slab.start] = 0.5f64.sqrt();
        beta[slab.start + 1] = 0.2f64.sqrt();
        let table = CoefficientTable::from_parts(set.clone(), beta, vec![0.0; set.len()]);
        let cfg = PenaltyConfig::new(1.0, 1e9).with_constants(0.0, 1e-9);
        let (model, crit) = select_within(1, &table, &sched, &cfg).unwrap();
        assert_eq!(model.sparse_levels[0], vec![slab.start]);
        assert!(crit > 0.49 && crit < 0.51);
    }

    #[test]
    fn all_zero_budgets_keep_mandatory_only() {
        let basis = Haar::new(0);
        let sched = SparsitySchedule::paper(&basis, 2, 4).unwrap();
        let set = Arc::new(full_index_set(&basis, &sched).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = random_table(&set, &mut rng);
        let cfg = PenaltyConfig::new(1.0, 50.0);
        let score = scores(&table, &cfg);
        for ell1 in 1..=5u32 {
            let (model, crit) = select_within(ell1, &table, &sched, &cfg).unwrap();
            let mandatory: Vec<usize> = set.below_level(ell1).collect();
            assert_eq!(model.positions(&set), mandatory);
            assert_abs_diff_eq!(crit, model_crit(&score, &mandatory), epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_signal_selects_smallest_cut() {
        let basis = Haar::new(0);
        let sched = SparsitySchedule::paper(&basis, 2, 4).unwrap();
        let set = Arc::new(full_index_set(&basis, &sched).unwrap());
        let table =
            CoefficientTable::from_parts(set.clone(), vec![0.0; set.len()], vec![1.0; set.len()]);
        let cfg = PenaltyConfig::new(1.0, 100.0);
        let result = select_pyramid(&table, &sched, &cfg).unwrap();
        assert_eq!(result.ell_hat, 1);
        // Criterion trace is strictly decreasing in the cut level: every
        // added slab costs penalty mass.
        for w in result.crit_trace.windows(2) {
            assert!(w[0].1 > w[1].1);
        }
    }

    #[test]
    fn single_large_coefficient_drives_cut_choice() {
        let basis = Haar::new(0);
        let sched = SparsitySchedule::paper(&basis, 2, 4).unwrap();
        let set = Arc::new(full_index_set(&basis, &sched).unwrap());
        let cfg = PenaltyConfig::new(1.0, 100.0);
        let v2 = penalty_weight(0.0, &cfg); // uniform weight, sigma2 = 0
        let star = set.slab_range(2).unwrap().start; // a level-2 index
        // Closed form: crit(3) - crit(2) = beta^2 - slab(2) * v2. The cut
        // moves to 3 exactly when beta^2 exceeds the added penalty mass.
        let slab2 = 5.0;
        for (beta_sq, expect_ell) in [(slab2 * v2 * 1.5, 3u32), (slab2 * v2 * 0.5, 1u32)] {
            let mut beta = vec![0.0; set.len()];
            beta[star] = beta_sq.sqrt();
            let table =
                CoefficientTable::from_parts(set.clone(), beta, vec![0.0; set.len()]);
            let result = select_pyramid(&table, &sched, &cfg).unwrap();
            assert_eq!(result.ell_hat, expect_ell, "beta_sq = {beta_sq}");
        }
    }

    #[test]
    fn greedy_matches_exhaustive_on_240_schedule() {
        let basis = Haar::new(0);
        let sched = schedule_240();
        let set = Arc::new(full_index_set(&basis, &sched).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let table = random_table(&set, &mut rng);
            let cfg = PenaltyConfig::new(1.0, 40.0);
            let greedy = select_pyramid(&table, &sched, &cfg).unwrap();
            let (ex_model, ex_crit) =
                exhaustive_select(&table, &sched, &cfg, 1_000_000).unwrap();
            assert_abs_diff_eq!(greedy.crit(), ex_crit, epsilon = 1e-12);
            assert_eq!(greedy.model, ex_model);
        }
    }

    #[test]
    fn exhaustive_matches_penalized_form() {
        let basis = Haar::new(0);
        let sched = schedule_240();
        let set = Arc::new(full_index_set(&basis, &sched).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let table = random_table(&set, &mut rng);
        let cfg = PenaltyConfig::new(1.0, 40.0);
        // Argmin of the penalized contrast equals argmax of crit.
        let mut best_pen: Option<(PyramidModel, f64)> = None;
        for model in enumerate_models(&sched, &set, 1_000_000).unwrap() {
            let pen = penalized_contrast(&table, &cfg, &model.positions(&set));
            match &best_pen {
                Some((_, c)) if pen >= *c => {}
                _ => best_pen = Some((model, pen)),
            }
        }
        let (pen_model, _) = best_pen.unwrap();
        let (crit_model, _) = exhaustive_select(&table, &sched, &cfg, 1_000_000).unwrap();
        assert_eq!(pen_model, crit_model);
    }

    #[test]
    fn ten_k_schedule_size() {
        let sched = schedule_10k();
        assert_eq!(sched.total_model_count().unwrap(), 10445);
    }

    #[test]
    fn selection_deterministic_across_thread_counts() {
        let basis = Haar::new(0);
        let sched = schedule_10k();
        let set = Arc::new(full_index_set(&basis, &sched).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let table = random_table(&set, &mut rng);
        let cfg = PenaltyConfig::new(1.0, 40.0);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| select_pyramid(&table, &sched, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.ell_hat, b.ell_hat);
        assert_eq!(a.model, b.model);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn score_shift_invariance_per_slab() {
        // Adding a constant to every score of one slab must not change which
        // indices that slab keeps.
        let basis = Haar::new(0);
        let sched = schedule_240();
        let set = Arc::new(full_index_set(&basis, &sched).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let table = random_table(&set, &mut rng);
        let cfg = PenaltyConfig::new(1.0, 40.0);
        let (model, _) = select_within(1, &table, &sched, &cfg).unwrap();
        //

        // Shift: raise every beta^2 in slab 2 by a constant via sigma2 = 0
        // and recomputed beta so that beta^2 grows by exactly 0.37.
        let mut beta2 = table.beta().to_vec();
        for pos in set.slab_range(2).unwrap() {
            let s = beta2[pos] * beta2[pos] + 0.37;
            beta2[pos] = s.sqrt() * beta2[pos].signum();
        }
        let table2 = CoefficientTable::from_parts(set.clone(), beta2, table.sigma2().to_vec());
        let (model2, _) = select_within(1, &table2, &sched, &cfg).unwrap();
        assert_eq!(model.sparse_levels[1], model2.sparse_levels[1]);
    }

    #[test]
    fn estimator_assembly_and_integral() {
        let basis = Haar::new(0);
        let unit = Domain::unit(2);
        // Single all-scaling coefficient c: constant estimator c.
        let est = WaveletEstimator::from_coefficients(
            &basis,
            &unit,
            vec![(WaveletIndex::new(vec![0, 0], vec![0, 0]), 2.5)],
        );
        assert_eq!(est.eval(&[0.3, 0.9]).unwrap(), 2.5);
        assert!(est.eval(&[1.3, 0.9]).is_err());
        let grid = est.grid_values(3);
        assert_eq!(grid.len(), 64);
        assert!(grid.iter().all(|&v| (v - 2.5).abs() < 1e-12));

        // Mixed coefficients: cell sums integrate to the scaling coefficient
        // times sqrt(vol) (wavelet terms integrate to zero).
        let set = IndexSet::new(&basis, 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coefs: Vec<(WaveletIndex, f64)> = (0..set.len())
            .map(|p| (set.index_at(p), rng.random::<f64>() - 0.5))
            .collect();
        let scaling_beta = coefs[0].1;
        let est = WaveletEstimator::from_coefficients(&basis, &unit, coefs);
        let g = 4u32;
        let cell_area = 1.0 / 4f64.powi(g as i32);
        let integral: f64 = est.grid_values(g).iter().map(|v| v * cell_area).sum();
        assert_abs_diff_eq!(integral, scaling_beta, epsilon = 1e-10);

        // Grid values match pointwise evaluation at midpoints.
        let grid = est.grid_values(3);
        for cx in 0..8usize {
            for cy in 0..8usize {
                let p = [(cx as f64 + 0.5) / 8.0, (cy as f64 + 0.5) / 8.0];
                assert_abs_diff_eq!(grid[cx * 8 + cy], est.eval(&p).unwrap(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn estimator_reproduces_step_function() {
        // Coefficients built from exact inner products reproduce a dyadic
        // step function exactly at cell midpoints.
        let basis = Haar::new(0);
        let unit = Domain::unit(1);
        let step = |x: f64| if x < 0.5 { 2.0 } else { 0.5 };
        let set = IndexSet::new(&basis, 1, 1).unwrap();
        let mut coefs = Vec::new();
        for pos in 0..set.len() {
            let idx = set.index_at(pos);
            // Exact integration on the two half cells.
            let left = tensor_eval(&basis, &idx, &unit, &[0.25], false).unwrap();
            let right = tensor_eval(&basis, &idx, &unit, &[0.75], false).unwrap();
            coefs.push((idx, 0.5 * (left * 2.0 + right * 0.5)));
        }
        let est = WaveletEstimator::from_coefficients(&basis, &unit, coefs);
        assert_abs_diff_eq!(est.eval(&[0.25]).unwrap(), step(0.25), epsilon = 1e-12);
        assert_abs_diff_eq!(est.eval(&[0.75]).unwrap(), step(0.75), epsilon = 1e-12);
    }

    #[test]
    fn psi_distance_examples() {
        let basis = Haar::new(0);
        let set = Arc::new(IndexSet::new(&basis, 2, 2).unwrap());
        let zeros = vec![0.0; set.len()];
        let a = CoefficientTable::from_parts(set.clone(), zeros.clone(), zeros.clone());
        assert_eq!(psi_norm_sq_distance(&a, &a).unwrap(), 0.0);
        let mut beta = zeros.clone();
        beta[3] += 0.25;
        let b = CoefficientTable::from_parts(set.clone(), beta, zeros.clone());
        assert_abs_diff_eq!(psi_norm_sq_distance(&a, &b).unwrap(), 0.0625, epsilon = 1e-15);
        let other = Arc::new(IndexSet::new(&basis, 2, 3).unwrap());
        let c = CoefficientTable::from_parts(
            other.clone(),
            vec![0.0; other.len()],
            vec![0.0; other.len()],
        );
        assert!(matches!(
            psi_norm_sq_distance(&a, &c),
            Err(Error::CoverageMismatch(_))
        ));
    }

    #[test]
    fn psi_distance_equals_grid_quadrature() {
        let basis = Haar::new(0);
        let set = Arc::new(IndexSet::new(&basis, 2, 3).unwrap());
        let unit = Domain::unit(2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..set.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let b: Vec<f64> = (0..set.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let ta = CoefficientTable::from_parts(set.clone(), a.clone(), vec![0.0; set.len()]);
        let tb = CoefficientTable::from_parts(set.clone(), b.clone(), vec![0.0; set.len()]);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let quad =
            crate::hyperbolic::synthesis_l2_norm_sq(&basis, &set, &unit, &diff, 4).unwrap();
        assert_abs_diff_eq!(psi_norm_sq_distance(&ta, &tb).unwrap(), quad, epsilon = 1e-10);
    }

    #[test]
    fn oracle_zero_above_cut() {
        let basis = Haar::new(0);
        let sched = schedule_240();
        let set = Arc::new(full_index_set(&basis, &sched).unwrap());
        let mut beta = vec![0.0; set.len()];
        for pos in set.below_level(2) {
            beta[pos] = 1.0;
        }
        let table = CoefficientTable::from_parts(set.clone(), beta, vec![0.0; set.len()]);
        let (_, err) = oracle_approximation(&table, 2, &sched).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn oracle_matches_exhaustive_projection() {
        let basis = Haar::new(0);
        let sched = schedule_240();
        let set = Arc::new(full_index_set(&basis, &sched).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let total_energy = |beta: &[f64]| -> f64 { beta.iter().map(|b| b * b).sum() };
        for _ in 0..10 {
            let table = random_table(&set, &mut rng);
            for ell1 in 1..=4u32 {
                let (model, err) = oracle_approximation(&table, ell1, &sched).unwrap();
                model.validate(&sched, &set).unwrap();
                // Exhaustive projection error over all models with this cut.
                let mut best = f64::INFINITY;
                for m in enumerate_models(&sched, &set, 1_000_000).unwrap() {
                    if m.ell1 != ell1 {
                        continue;
                    }
                    let kept: f64 = m
                        .positions(&set)
                        .iter()
                        .map(|&p| table.beta()[p] * table.beta()[p])
                        .sum();
                    best = best.min(total_energy(table.beta()) - kept);
                }
                assert_abs_diff_eq!(err, best, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn oracle_error_nonincreasing_paper_mode() {
        // Paper-mode budgets at one slab grow as the cut level rises, so the
        // kept set at any slab only widens: the tail shrinks.
        let basis = Haar::new(0);
        let sched = SparsitySchedule::paper(&basis, 2, 6).unwrap();
        let set = Arc::new(full_index_set(&basis, &sched).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let table = random_table(&set, &mut rng);
            let mut prev = f64::INFINITY;
            for ell1 in sched.ell1_min()..=sched.ell1_max() {
                let (_, err) = oracle_approximation(&table, ell1, &sched).unwrap();
                assert!(err <= prev + 1e-12, "ell1={ell1}: {err} > {prev}");
                prev = err;
            }
        }
    }
}
