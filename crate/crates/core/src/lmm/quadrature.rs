//! Gauss–Hermite evaluation of the defining random-effect integrals.
//!
//! Used as an independent check on the analytic evaluators: each cluster's
//! integral over its random intercept is computed numerically from the
//! product of normal densities, centred on the numerically located mode of
//! the integrand.

use super::{DesignedCluster, DesignedSupercluster, ThreeLevelParams, TwoLevelParams};
use crate::error::{Error, Result};

/// Node count of the primary rule; results are checked against a finer one.
pub const QUADRATURE_NODES: usize = 64;
const REFINED_NODES: usize = 96;
const REFINEMENT_TOLERANCE: f64 = 1e-8;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Nodes and weights of the `n`-point rule for weight function `exp(-x²)`,
/// nodes in decreasing order.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, ln_w) = gauss_hermite_log(n);
    (x, ln_w.into_iter().map(f64::exp).collect())
}

/// Nodes and log-weights, via Newton iteration on the orthonormal Hermite
/// recurrence.
fn gauss_hermite_log(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut ln_w = vec![0.0; n];
    let nf = n as f64;
    let mut z: f64 = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let (mut p1, mut p2) = (PIM4, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let step = p1 / pp;
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        ln_w[i] = std::f64::consts::LN_2 - 2.0 * pp.abs().ln();
        ln_w[n - 1 - i] = ln_w[i];
    }
    (x, ln_w)
}

struct Rule {
    x: Vec<f64>,
    /// ln(w) + x², so that ∫f = Σ exp(ln_w + x² + ln f(x)).
    shifted_ln_w: Vec<f64>,
}

impl Rule {
    fn new(n: usize) -> Self {
        let (x, ln_w) = gauss_hermite_log(n);
        let shifted_ln_w = x.iter().zip(&ln_w).map(|(x, l)| l + x * x).collect();
        Self { x, shifted_ln_w }
    }

    /// log ∫ exp(g(t)) dt for a unimodal log-integrand.
    fn log_integral(&self, g: &dyn Fn(f64) -> f64) -> f64 {
        let (mu, sigma) = locate_mode(g);
        let s = std::f64::consts::SQRT_2 * sigma;
        let terms: Vec<f64> = self
            .x
            .iter()
            .zip(&self.shifted_ln_w)
            .map(|(x, lw)| lw + g(mu + s * x))
            .collect();
        log_sum_exp(&terms) + s.ln()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mode and curvature scale of a concave log-integrand by finite-difference
/// Newton steps.
fn locate_mode(g: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let mut t = 0.0;
    let mut h = 1e-2;
    let mut curvature = 1.0;
    for _ in 0..200 {
        let (gm, g0, gp) = (g(t - h), g(t), g(t + h));
        let d1 = (gp - gm) / (2.0 * h);
        let d2 = (gp - 2.0 * g0 + gm) / (h * h);
        if !(d2 < 0.0) {
            t += d1.signum() * h.max(1.0);
            h *= 2.0;
            continue;
        }
        curvature = -d2;
        let scale = curvature.sqrt().recip();
        let step = -d1 / d2;
        let step = step.clamp(-20.0 * scale.max(h), 20.0 * scale.max(h));
        t += step;
        h = 1e-3 * scale;
        if step.abs() <= 1e-9 * scale {
            break;
        }
    }
    let (gm, g0, gp) = (g(t - h), g(t), g(t + h));
    let d2 = (gp - 2.0 * g0 + gm) / (h * h);
    if d2 < 0.0 {
        curvature = -d2;
    }
    (t, curvature.sqrt().recip())
}

fn ln_normal(x: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - x * x / (2.0 * var)
}

/// Residuals `y - Xβ` and level-1 weights of a cluster.
fn residuals(c: &DesignedCluster, beta: &[f64], weighted: bool) -> Vec<(f64, f64)> {
    (0..c.len())
        .map(|i| {
            let fit: f64 = (0..beta.len()).map(|q| c.x()[(i, q)] * beta[q]).sum();
            (c.y()[i] - fit, if weighted { c.w()[i] } else { 1.0 })
        })
        .collect()
}

/// log ∫ Π f(rᵢ - shift - α)^{wᵢ} g(α) dα.
fn cluster_log_integral(rule: &Rule, res: &[(f64, f64)], shift: f64, se: f64, su: f64) -> f64 {
    let kernel = |alpha: f64| -> f64 { res.iter().map(|&(r, w)| w * ln_normal(r - shift - alpha, se)).sum() };
    if su == 0.0 {
        return kernel(0.0);
    }
    rule.log_integral(&|alpha| kernel(alpha) + ln_normal(alpha, su))
}

fn two_level_with(rule: &Rule, data: &[DesignedCluster], p: &TwoLevelParams, weighted: bool) -> f64 {
    data.iter()
        .map(|c| {
            let wc = if weighted { c.w_cluster() } else { 1.0 };
            wc * cluster_log_integral(rule, &residuals(c, &p.beta, weighted), 0.0, p.sigma2_e, p.sigma2_u)
        })
        .sum()
}

fn three_level_with(rule: &Rule, data: &[DesignedSupercluster], p: &ThreeLevelParams, weighted: bool) -> f64 {
    data.iter()
        .map(|s| {
            let parts: Vec<(f64, Vec<(f64, f64)>)> = s
                .clusters()
                .iter()
                .map(|c| {
                    let wc = if weighted { c.w_cluster() } else { 1.0 };
                    (wc, residuals(c, &p.beta, weighted))
                })
                .collect();
            let kernel = |tau: f64| -> f64 {
                parts
                    .iter()
                    .map(|(wc, res)| wc * cluster_log_integral(rule, res, tau, p.sigma2_e, p.sigma2_u))
                    .sum()
            };
            let inner = if p.sigma2_tau == 0.0 {
                kernel(0.0)
            } else {
                rule.log_integral(&|tau| kernel(tau) + ln_normal(tau, p.sigma2_tau))
            };
            let ws = if weighted { s.w_super() } else { 1.0 };
            ws * inner
        })
        .sum()
}

fn refined(coarse: f64, fine: f64) -> Result<f64> {
    let difference = (coarse - fine).abs();
    if difference > REFINEMENT_TOLERANCE || !fine.is_finite() {
        return Err(Error::Quadrature { difference });
    }
    Ok(fine)
}

/// Two-level log-likelihood by adaptive Gauss–Hermite quadrature.
///
/// Fails with [`Error::Quadrature`] when the 64- and 96-node rules
/// disagree by more than 1e-8.
pub fn loglik_quadrature_oracle(data: &[DesignedCluster], params: &TwoLevelParams, weighted: bool) -> Result<f64> {
    params.validate()?;
    let coarse = two_level_with(&Rule::new(QUADRATURE_NODES), data, params, weighted);
    let fine = two_level_with(&Rule::new(REFINED_NODES), data, params, weighted);
    refined(coarse, fine)
}

/// Three-level log-likelihood by nested adaptive Gauss–Hermite quadrature.
pub fn loglik_quadrature_three_level(
    data: &[DesignedSupercluster],
    params: &ThreeLevelParams,
    weighted: bool,
) -> Result<f64> {
    params.validate()?;
    let coarse = three_level_with(&Rule::new(QUADRATURE_NODES), data, params, weighted);
    let fine = three_level_with(&Rule::new(REFINED_NODES), data, params, weighted);
    refined(coarse, fine)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_moments() {
        let (x, w) = gauss_hermite(64);
        let pi_sqrt = std::f64::consts::PI.sqrt();
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m0 - pi_sqrt).abs() < 1e-13);
        assert!((m2 - pi_sqrt / 2.0).abs() < 1e-13);
        assert!((m4 - 0.75 * pi_sqrt).abs() < 1e-12);
        assert!(x.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn gaussian_integral_off_centre() {
        let rule = Rule::new(64);
        let v = rule.log_integral(&|t| -(t - 7.5) * (t - 7.5) / (2.0 * 0.01));
        let exact = 0.5 * (2.0 * std::f64::consts::PI * 0.01).ln();
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn singleton_closed_form() {
        let c = DesignedCluster::intercept_only(vec![1.3]).unwrap();
        let p = TwoLevelParams {
            beta: vec![0.2],
            sigma2_e: 0.6,
            sigma2_u: 0.9,
        };
        let q = loglik_quadrature_oracle(&[c], &p, false).unwrap();
        assert!((q - ln_normal(1.1, 1.5)).abs() < 1e-12);
    }
}
