use nalgebra::DVector;

use super::stats::{Need, Prepared};
use super::{DesignedCluster, DesignedSupercluster, ThreeLevelParams, TwoLevelParams};
use crate::error::{Error, Result};

fn check_beta(beta: &[f64], p: usize) -> Result<()> {
    if beta.len() != p {
        return Err(Error::Argument(format!(
            "expected {p} fixed effects, got {}",
            beta.len()
        )));
    }
    Ok(())
}

/// Exact marginal log-likelihood of the two-level random-intercept model.
///
/// With `weighted`, every unit's density is raised to its level-1 weight
/// and every cluster's integrated likelihood to its cluster weight; without
/// it all weights are treated as 1. Normalising constants are kept.
pub fn loglik_two_level(data: &[DesignedCluster], params: &TwoLevelParams, weighted: bool) -> Result<f64> {
    params.validate()?;
    let prep = Prepared::from_clusters(data, weighted)?;
    check_beta(&params.beta, prep.n_fixed())?;
    let var = [params.sigma2_e, params.sigma2_u, 0.0];
    Ok(prep.evaluate(&params.beta, var, Need::default())?.loglik)
}

/// Closed-form gradient of [`loglik_two_level`], ordered `(β, σ²ₑ, σ²ᵤ)`.
pub fn score_two_level(data: &[DesignedCluster], params: &TwoLevelParams, weighted: bool) -> Result<Vec<f64>> {
    params.validate()?;
    let prep = Prepared::from_clusters(data, weighted)?;
    check_beta(&params.beta, prep.n_fixed())?;
    let var = [params.sigma2_e, params.sigma2_u, 0.0];
    let e = prep.evaluate(&params.beta, var, Need::default())?;
    Ok(join(&e.grad_beta, &e.grad_var[..2]))
}

/// Exact marginal log-likelihood of the three-level random-intercept model.
///
/// Both random intercepts are integrated analytically: the level-2
/// integral leaves a Gaussian kernel in τ per cluster, the kernels are
/// raised to the cluster weights and multiplied, and the product is
/// integrated against the level-3 density and raised to the supercluster
/// weight.
pub fn loglik_three_level(data: &[DesignedSupercluster], params: &ThreeLevelParams, weighted: bool) -> Result<f64> {
    params.validate()?;
    let prep = Prepared::from_superclusters(data, weighted)?;
    check_beta(&params.beta, prep.n_fixed())?;
    let var = [params.sigma2_e, params.sigma2_u, params.sigma2_tau];
    Ok(prep.evaluate(&params.beta, var, Need::default())?.loglik)
}

/// Closed-form gradient of [`loglik_three_level`], ordered
/// `(β, σ²ₑ, σ²ᵤ, σ²_τ)`.
pub fn score_three_level(data: &[DesignedSupercluster], params: &ThreeLevelParams, weighted: bool) -> Result<Vec<f64>> {
    params.validate()?;
    let prep = Prepared::from_superclusters(data, weighted)?;
    check_beta(&params.beta, prep.n_fixed())?;
    let var = [params.sigma2_e, params.sigma2_u, params.sigma2_tau];
    let e = prep.evaluate(&params.beta, var, Need::default())?;
    Ok(join(&e.grad_beta, &e.grad_var))
}

fn join(beta: &DVector<f64>, var: &[f64]) -> Vec<f64> {
    beta.iter().chain(var).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn cluster(y: &[f64], w: &[f64], wc: f64) -> DesignedCluster {
        let n = y.len();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 * 0.3 - 0.2 });
        DesignedCluster::new(y.to_vec(), x, w.to_vec(), wc).unwrap()
    }

    #[test]
    fn singleton_is_normal_density() {
        let c = DesignedCluster::intercept_only(vec![0.0]).unwrap();
        let p = TwoLevelParams {
            beta: vec![0.0],
            sigma2_e: 1.0,
            sigma2_u: 1.0,
        };
        let l = loglik_two_level(&[c], &p, false).unwrap();
        assert!((l + 0.5 * (4.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn zero_random_effect_is_independent_errors() {
        let c = DesignedCluster::intercept_only(vec![0.5, -1.0, 2.0]).unwrap();
        let p = TwoLevelParams {
            beta: vec![0.25],
            sigma2_e: 1.5,
            sigma2_u: 0.0,
        };
        let l = loglik_two_level(std::slice::from_ref(&c), &p, false).unwrap();
        let direct: f64 = c
            .y()
            .iter()
            .map(|y| -0.5 * (2.0 * PI * 1.5).ln() - (y - 0.25f64).powi(2) / 3.0)
            .sum();
        assert!((l - direct).abs() < 1e-12);
    }

    #[test]
    fn unit_weights_match_unweighted() {
        let data = vec![cluster(&[1.0, 2.0, 0.5], &[1.0; 3], 1.0), cluster(&[3.0], &[1.0], 1.0)];
        let p = TwoLevelParams {
            beta: vec![0.3, -0.1],
            sigma2_e: 0.7,
            sigma2_u: 1.3,
        };
        let a = loglik_two_level(&data, &p, true).unwrap();
        let b = loglik_two_level(&data, &p, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            score_two_level(&data, &p, true).unwrap(),
            score_two_level(&data, &p, false).unwrap()
        );
    }

    #[test]
    fn degenerate_third_level_collapses() {
        let clusters = vec![
            cluster(&[1.0, 2.0], &[1.5, 0.5], 2.0),
            cluster(&[0.0, 1.0, -1.0], &[1.0, 2.0, 3.0], 0.5),
        ];
        let supers: Vec<_> = clusters
            .iter()
            .map(|c| {
                let inner = c.clone().with_w_cluster(1.0).unwrap();
                DesignedSupercluster::new(vec![inner], c.w_cluster()).unwrap()
            })
            .collect();
        let p2 = TwoLevelParams {
            beta: vec![0.1, 0.2],
            sigma2_e: 0.9,
            sigma2_u: 0.4,
        };
        let l2 = loglik_two_level(&clusters, &p2, true).unwrap();
        let l3 = loglik_three_level(&supers, &p2.with_tau(0.0), true).unwrap();
        assert!((l2 - l3).abs() <= 1e-10 * l2.abs());
    }

    #[test]
    fn rejects_bad_params() {
        let data = vec![cluster(&[1.0], &[1.0], 1.0)];
        let p = TwoLevelParams {
            beta: vec![0.0, 0.0],
            sigma2_e: 0.0,
            sigma2_u: 1.0,
        };
        assert!(loglik_two_level(&data, &p, false).is_err());
        let p = TwoLevelParams {
            beta: vec![0.0],
            sigma2_e: 1.0,
            sigma2_u: 1.0,
        };
        assert!(loglik_two_level(&data, &p, false).is_err());
    }
}
