use nalgebra::{DMatrix, DVector};

use super::{fit_prepared_two_level, sandwich, ConvergenceReport, FitOptions, FitResult, FittedParams, ModelKind};
use crate::error::{Error, Result};
use crate::hierarchy::WeightScaling;
use crate::lmm::stats::{Need, Prepared};
use crate::lmm::{DesignedCluster, TwoLevelParams};

/// Precision-weighted mean of cluster means, Σ ωⱼ Bⱼ/Dⱼ / Σ ωⱼ Aⱼ/Dⱼ with
/// `Aⱼ = Σw`, `Bⱼ = Σw y` and `Dⱼ = σ²ₑ + Aⱼσ²ᵤ`, and its robust variance.
fn intercept_estimate(data: &[DesignedCluster], weighted: bool, se: f64, su: f64) -> Result<(f64, f64, f64)> {
    let parts: Vec<(f64, f64, f64)> = data
        .iter()
        .map(|c| {
            let w = |i: usize| if weighted { c.w()[i] } else { 1.0 };
            let a: f64 = (0..c.len()).map(w).sum();
            let b: f64 = (0..c.len()).map(|i| w(i) * c.y()[i]).sum();
            let omega = if weighted { c.w_cluster() } else { 1.0 };
            (omega, a, b)
        })
        .collect();
    let info: f64 = parts.iter().map(|&(om, a, _)| om * a / (se + a * su)).sum();
    let num: f64 = parts.iter().map(|&(om, a, b)| om * b / (se + a * su)).sum();
    let beta = num / info;
    let scores: Vec<DVector<f64>> = parts
        .iter()
        .map(|&(om, a, b)| DVector::from_element(1, om * (b - a * beta) / (se + a * su)))
        .collect();
    let robust = sandwich::sandwich(&DMatrix::from_element(1, 1, info), &scores)?[(0, 0)];
    Ok((beta, info, robust))
}

/// Intercept-only fit through the closed-form fixed-effect estimator.
///
/// With `fixed_variances = Some((σ²ₑ, σ²ᵤ))` the intercept is the
/// precision-weighted mean of the cluster means at those variances; with
/// `None` the variances are estimated jointly and the intercept is the same
/// formula at the estimated variances.
pub fn fit_intercept_closed_form(
    data: &[DesignedCluster],
    weighted: bool,
    fixed_variances: Option<(f64, f64)>,
) -> Result<FitResult> {
    if data.iter().any(|c| c.n_fixed() != 1 || c.x().iter().any(|&v| v != 1.0)) {
        return Err(Error::Model(
            "the closed-form estimator needs an intercept-only design".into(),
        ));
    }
    let prep = Prepared::from_clusters(data, weighted)?;
    let names = vec!["intercept".to_string()];
    match fixed_variances {
        None => {
            let mut fit = fit_prepared_two_level(&prep, weighted, WeightScaling::Raw, names, &FitOptions::default())?;
            let [se, su, _] = fit.params.variances();
            let (beta, _, robust) = intercept_estimate(data, weighted, se, su)?;
            if let FittedParams::Two(p) = &mut fit.params {
                p.beta[0] = beta;
            }
            fit.cov_sandwich[(0, 0)] = robust;
            Ok(fit)
        }
        Some((se, su)) => {
            TwoLevelParams {
                beta: vec![0.0],
                sigma2_e: se,
                sigma2_u: su,
            }
            .validate()?;
            let (beta, info, robust) = intercept_estimate(data, weighted, se, su)?;
            let eval = prep.evaluate(&[beta], [se, su, 0.0], Need::default())?;
            let mut cov_model = DMatrix::zeros(3, 3);
            cov_model[(0, 0)] = 1.0 / info;
            Ok(FitResult {
                kind: ModelKind::TwoLevel,
                weighted,
                scaling: WeightScaling::Raw,
                fixed_names: names,
                params: FittedParams::Two(TwoLevelParams {
                    beta: vec![beta],
                    sigma2_e: se,
                    sigma2_u: su,
                }),
                variance_names: vec!["sigma2_e", "sigma2_u"],
                cov_model,
                cov_sandwich: DMatrix::from_element(1, 1, robust),
                loglik: eval.loglik,
                n_obs: prep.n_obs(),
                n_groups: prep.n_groups(),
                convergence: ConvergenceReport {
                    iterations: 0,
                    final_score_norm: eval.grad_beta.amax(),
                    converged: true,
                    boundary_hit: Vec::new(),
                },
            })
        }
    }
}
