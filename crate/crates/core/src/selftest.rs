//! Fast invariant checks runnable from the CLI: biorthogonality,
//! combinatorics, greedy-equals-exhaustive selection and the variance
//! identity, each in well under a second.

use crate::frameworks::{empirical_coefficients, ingest, CoefficientTable, IngestSpec, Points};
use crate::hyperbolic::{enumerate_level_vectors, resolution_slab_size, tensor_eval, Domain};
use crate::numeric::binomial;
use crate::pyramid::{full_index_set, SparsitySchedule};
use crate::selection::{exhaustive_select, select_pyramid, PenaltyConfig};
use crate::uniwavelet::{gram, Haar};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, run: impl FnOnce() -> Result<(), String>) -> CheckOutcome {
    match run() {
        Ok(()) => CheckOutcome {
            name,
            passed: true,
            detail: "ok".into(),
        },
        Err(detail) => CheckOutcome {
            name,
            passed: false,
            detail,
        },
    }
}

/// Run the fast subset of the invariant suites.
pub fn run_selftest() -> Vec<CheckOutcome> {
    let basis = Haar::new(0);
    let mut out = Vec::new();

    out.push(check("biorthogonality", || {
        for (la, lb) in [(1u32, 1u32), (2, 2), (3, 3), (1, 2), (0, 2)] {
            let g = gram(&basis, la, lb).map_err(|e| e.to_string())?;
            for (i, row) in g.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let want = if la == lb && i == j { 1.0 } else { 0.0 };
                    if (v - want).abs() > 1e-12 {
                        return Err(format!("gram({la},{lb})[{i}][{j}] = {v}"));
                    }
                }
            }
        }
        Ok(())
    }));

    out.push(check("level-vector combinatorics", || {
        for d in [2usize, 3, 4] {
            for ell in 0..=10u32 {
                let got = enumerate_level_vectors(d, 0, ell)
                    .map_err(|e| e.to_string())?
                    .len();
                let want = binomial(ell as usize + d - 1, d - 1) as usize;
                if got != want {
                    return Err(format!("d={d} ell={ell}: {got} != {want}"));
                }
            }
        }
        for (ell, want) in [(4u32, 28usize), (8, 704)] {
            let got = resolution_slab_size(&basis, 2, ell).map_err(|e| e.to_string())?;
            if got != want {
                return Err(format!("slab({ell}) = {got}, want {want}"));
            }
        }
        Ok(())
    }));

    out.push(check("sparsity budgets", || {
        let sched = SparsitySchedule::paper(&basis, 2, 9).map_err(|e| e.to_string())?;
        for ((ell1, k), want) in [((8u32, 0u32), 22usize), ((8, 1), 4), ((4, 0), 0)] {
            let got = sched.budget(ell1, k).map_err(|e| e.to_string())?;
            if got != want {
                return Err(format!("N({ell1},{k}) = {got}, want {want}"));
            }
        }
        Ok(())
    }));

    out.push(check("greedy equals exhaustive", || {
        let budgets = BTreeMap::from([((1u32, 0u32), 1usize), ((1, 1), 2), ((1, 2), 1)]);
        let sched =
            SparsitySchedule::custom(&basis, 2, 3, budgets).map_err(|e| e.to_string())?;
        let set = Arc::new(full_index_set(&basis, &sched).map_err(|e| e.to_string())?);
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for trial in 0..5 {
            let beta: Vec<f64> = (0..set.len()).map(|_| rng.random::<f64>() - 0.5).collect();
            let sigma2: Vec<f64> = (0..set.len()).map(|_| rng.random::<f64>()).collect();
            let table = CoefficientTable::from_parts(set.clone(), beta, sigma2);
            let cfg = PenaltyConfig::new(1.0, 40.0);
            let greedy = select_pyramid(&table, &sched, &cfg).map_err(|e| e.to_string())?;
            let (ex_model, ex_crit) =
                exhaustive_select(&table, &sched, &cfg, 1_000_000).map_err(|e| e.to_string())?;
            if (greedy.crit() - ex_crit).abs() > 1e-12 || greedy.model != ex_model {
                return Err(format!("trial {trial}: greedy != exhaustive"));
            }
        }
        Ok(())
    }));

    out.push(check("variance identity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let n = 60usize;
        let pts: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
        let data = ingest(
            IngestSpec::Density,
            Points::new(2, pts).map_err(|e| e.to_string())?,
            Some(Domain::unit(2)),
        )
        .map_err(|e| e.to_string())?;
        let table = empirical_coefficients(&data, &basis, 2).map_err(|e| e.to_string())?;
        let set = table.index_set().clone();
        let unit = Domain::unit(2);
        for pos in 0..set.len() {
            let idx = set.index_at(pos);
            let values: Vec<f64> = data
                .points
                .rows()
                .map(|r| tensor_eval(&basis, &idx, &unit, r, false).unwrap())
                .collect();
            let mut double = 0.0;
            for i in 0..n {
                for j in 0..i {
                    double += (values[i] - values[j]).powi(2);
                }
            }
            double /= n as f64 * (n as f64 - 1.0);
            if (table.sigma2()[pos] - double).abs() > 1e-10 {
                return Err(format!("index {pos}: O(n) route differs from double sum"));
            }
        }
        Ok(())
    }));

    out
}
