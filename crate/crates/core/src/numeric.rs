//! Small numerical utilities: compensated summation, binomial coefficients,
//! series tails and adaptive Gauss–Legendre quadrature.

/// Kahan compensated accumulator.
///
/// Selection criteria subtract near-equal large sums, and coefficient
/// accumulation merges many per-chunk partials; both go through this type so
/// results stay reproducible to ~1e-15 relative regardless of chunking.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Compensated sum of a slice, in slice order.
pub fn kahan_sum(values: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        let num = (n - i) as u128;
        acc = match acc.checked_mul(num) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Sum of `f(k)` for `k = 0, 1, 2, ...` where `f` decays at least like
/// `k^-2`, truncated once both the term and the caller-supplied tail bound
/// drop below `tol`. `tail_bound(k)` must dominate the full remainder from
/// `k` on.
pub fn series_sum(f: impl Fn(usize) -> f64, tail_bound: impl Fn(usize) -> f64, tol: f64) -> f64 {
    let mut acc = KahanSum::new();
    let mut k = 0usize;
    loop {
        acc.add(f(k));
        k += 1;
        if tail_bound(k) < tol {
            break;
        }
        assert!(k < 100_000_000, "series did not converge to tol {tol}");
    }
    acc.value() + tail_bound(k) * 0.5
}

// Gauss–Legendre nodes are generated on demand by Newton iteration on the
// Legendre polynomial; this keeps the tables exact to machine precision
// without hardcoded constants.
fn legendre_value_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-like initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_value_deriv(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_value_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * d * d);
        out.push((x, w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn fixed_quad(f: &impl Fn(f64) -> f64, a: f64, b: f64, rule: &[(f64, f64)]) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = KahanSum::new();
    for &(x, w) in rule {
        acc.add(w * f(mid + half * x));
    }
    half * acc.value()
}

/// Adaptive 1-d Gauss–Legendre quadrature to absolute tolerance `tol`.
///
/// Each interval is integrated with 7- and 15-point rules; disagreement
/// triggers bisection. The recursion depth cap (60) is far beyond anything a
/// bounded integrand on a unit-scale interval can need.
pub fn adaptive_quad(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let rule7 = gauss_legendre(7);
    let rule15 = gauss_legendre(15);
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        tol: f64,
        r7: &[(f64, f64)],
        r15: &[(f64, f64)],
        depth: usize,
    ) -> f64 {
        let coarse = fixed_quad(f, a, b, r7);
        let fine = fixed_quad(f, a, b, r15);
        if (fine - coarse).abs() <= tol || depth >= 60 {
            return fine;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, tol / 2.0, r7, r15, depth + 1)
            + recurse(f, m, b, tol / 2.0, r7, r15, depth + 1)
    }
    recurse(&f, a, b, tol, &rule7, &rule15, 0)
}

fn fixed_quad_2d(f: &impl Fn(f64, f64) -> f64, cell: [f64; 4], rule: &[(f64, f64)]) -> f64 {
    let [a, b, c, d] = cell;
    let hx = 0.5 * (b - a);
    let mx = 0.5 * (a + b);
    let hy = 0.5 * (d - c);
    let my = 0.5 * (c + d);
    let mut acc = KahanSum::new();
    for &(x, wx) in rule {
        for &(y, wy) in rule {
            acc.add(wx * wy * f(mx + hx * x, my + hy * y));
        }
    }
    hx * hy * acc.value()
}

/// Adaptive 2-d tensor Gauss–Legendre quadrature over the rectangle
/// `[a,b] x [c,d]` to absolute tolerance `tol`. Disagreeing cells are split
/// into quadrants.
pub fn adaptive_quad_2d(f: &impl Fn(f64, f64) -> f64, cell: [f64; 4], tol: f64) -> f64 {
    let rule7 = gauss_legendre(7);
    let rule15 = gauss_legendre(15);
    fn recurse(
        f: &impl Fn(f64, f64) -> f64,
        cell: [f64; 4],
        tol: f64,
        r7: &[(f64, f64)],
        r15: &[(f64, f64)],
        depth: usize,
    ) -> f64 {
        let coarse = fixed_quad_2d(f, cell, r7);
        let fine = fixed_quad_2d(f, cell, r15);
        if (fine - coarse).abs() <= tol || depth >= 40 {
            return fine;
        }
        let [a, b, c, d] = cell;
        let mx = 0.5 * (a + b);
        let my = 0.5 * (c + d);
        let t = tol / 4.0;
        recurse(f, [a, mx, c, my], t, r7, r15, depth + 1)
            + recurse(f, [mx, b, c, my], t, r7, r15, depth + 1)
            + recurse(f, [a, mx, my, d], t, r7, r15, depth + 1)
            + recurse(f, [mx, b, my, d], t, r7, r15, depth + 1)
    }
    recurse(&f, cell, tol, &rule7, &rule15, 0)
}
