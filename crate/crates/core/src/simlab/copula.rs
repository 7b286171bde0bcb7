//! Closed forms and samplers for the two shipped Archimedean copula
//! families. The mixture scenario only fixes (family, parameter); the
//! density, distribution function and sampling routes below are the standard
//! ones for these families.
//!
//! Clayton(theta), theta > 0:
//!   C(u,v) = (u^-t + v^-t - 1)^(-1/t)
//!   c(u,v) = (1+t) (uv)^(-1-t) (u^-t + v^-t - 1)^(-2-1/t)
//!   sampling (any d): gamma frailty W ~ Gamma(1/t), U_j = (1 + E_j/W)^(-1/t).
//!
//! Frank(theta), theta != 0:
//!   C(u,v) = -(1/t) log(1 + (e^(-tu)-1)(e^(-tv)-1)/(e^(-t)-1))
//!   c(u,v) = t (1-e^(-t)) e^(-t(u+v)) / [(1-e^(-t)) - (1-e^(-tu))(1-e^(-tv))]^2
//!   sampling (d=2): conditional inversion of dC/du.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum Copula2 {
    Frank { theta: f64 },
    Clayton { theta: f64 },
}

impl Copula2 {
    pub fn density(&self, u: f64, v: f64) -> f64 {
        match *self {
            Copula2::Clayton { theta: t } => {
                if u <= 0.0 || v <= 0.0 {
                    return 0.0;
                }
                let core = u.powf(-t) + v.powf(-t) - 1.0;
                (1.0 + t) * (u * v).powf(-1.0 - t) * core.powf(-2.0 - 1.0 / t)
            }
            Copula2::Frank { theta: t } => {
                let d = (-t).exp() - 1.0;
                let gu = (-t * u).exp() - 1.0;
                let gv = (-t * v).exp() - 1.0;
                let denom = d + gu * gv;
                -t * d * (-t * (u + v)).exp() / (denom * denom)
            }
        }
    }

    /// Distribution function; the rectangle-mass oracle in tests.
    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        match *self {
            Copula2::Clayton { theta: t } => {
                if u <= 0.0 || v <= 0.0 {
                    return 0.0;
                }
                (u.powf(-t) + v.powf(-t) - 1.0).powf(-1.0 / t)
            }
            Copula2::Frank { theta: t } => {
                let d = (-t).exp() - 1.0;
                let gu = (-t * u).exp() - 1.0;
                let gv = (-t * v).exp() - 1.0;
                -(1.0 + gu * gv / d).ln() / t
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        match *self {
            Copula2::Clayton { theta: t } => {
                let gamma = Gamma::new(1.0 / t, 1.0).expect("valid frailty shape");
                let w: f64 = gamma.sample(rng);
                let mut out = [0.0; 2];
                for slot in &mut out {
                    let e: f64 = Exp1.sample(rng);
                    *slot = (1.0 + e / w).powf(-1.0 / t);
                }
                out
            }
            Copula2::Frank { theta: t } => {
                let u: f64 = rng.random();
                let p: f64 = rng.random();
                // Invert the conditional p = dC/du at fixed u.
                let a = (-t * u).exp();
                let d = (-t).exp() - 1.0;
                let b = p * d / (a * (1.0 - p) + p);
                let v = -(1.0 + b).ln() / t;
                [u, v.clamp(0.0, 1.0)]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::adaptive_quad_2d;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn density_integrates_to_cdf_rectangles() {
        // Quadrature of the density over rectangles matches the closed-form
        // distribution function (two independent routes).
        for cop in [Copula2::Frank { theta: 4.0 }, Copula2::Clayton { theta: 2.0 }] {
            for (u1, u2, v1, v2) in [
                (0.25, 0.75, 0.5, 1.0),
                (0.5, 1.0, 0.0, 0.5),
                (0.125, 0.25, 0.125, 0.375),
            ] {
                let quad = adaptive_quad_2d(&|u, v| cop.density(u, v), [u1, u2, v1, v2], 1e-10);
                let exact =
                    cop.cdf(u2, v2) - cop.cdf(u1, v2) - cop.cdf(u2, v1) + cop.cdf(u1, v1);
                assert_abs_diff_eq!(quad, exact, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn frank_conditional_inversion_roundtrip() {
        // dC/du evaluated at the sampled v must return the uniform draw; here
        // checked through finite differences of the cdf.
        let cop = Copula2::Frank { theta: 4.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let [u, v] = cop.sample(&mut rng);
            assert!((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v));
            let h = 1e-6;
            let cond = (cop.cdf((u + h).min(1.0), v) - cop.cdf((u - h).max(0.0), v)) / (2.0 * h);
            assert!((0.0..=1.0 + 1e-6).contains(&cond));
        }
    }

    #[test]
    fn clayton_kendall_tau() {
        // tau = theta/(theta+2) = 0.5 for theta = 2 (Archimedean identity).
        let cop = Copula2::Clayton { theta: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000usize;
        let pts: Vec<[f64; 2]> = (0..n).map(|_| cop.sample(&mut rng)).collect();
        let mut concordant = 0i64;
        let mut discordant = 0i64;
        for i in 0..n {
            for j in 0..i {
                let s = (pts[i][0] - pts[j][0]) * (pts[i][1] - pts[j][1]);
                if s > 0.0 {
                    concordant += 1;
                } else if s < 0.0 {
                    discordant += 1;
                }
            }
        }
        let tau = (concordant - discordant) as f64 / (n * (n - 1) / 2) as f64;
        assert_abs_diff_eq!(tau, 0.5, epsilon = 0.02);
    }

    #[test]
    fn frank_marginals_uniform() {
        // Kolmogorov-Smirnov at the 1% level: D < 1.63 / sqrt(n).
        let cop = Copula2::Frank { theta: 4.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 10_000usize;
        let pts: Vec<[f64; 2]> = (0..n).map(|_| cop.sample(&mut rng)).collect();
        for axis in 0..2 {
            let mut xs: Vec<f64> = pts.iter().map(|p| p[axis]).collect();
            xs.sort_by(f64::total_cmp);
            let mut d_stat = 0.0f64;
            for (i, x) in xs.iter().enumerate() {
                let emp_hi = (i + 1) as f64 / n as f64;
                let emp_lo = i as f64 / n as f64;
                d_stat = d_stat.max((emp_hi - x).abs()).max((x - emp_lo).abs());
            }
            assert!(d_stat < 1.63 / (n as f64).sqrt(), "axis {axis}: D = {d_stat}");
        }
    }
}
