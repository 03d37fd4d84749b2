use nalgebra::{DMatrix, DVector};

use super::FitResult;
use crate::error::{Error, Result};
use crate::lmm::stats::{Evaluation, Need, Prepared};
use crate::lmm::{DesignedCluster, DesignedSupercluster};

/// Data a fit was computed from, grouped at its top level.
#[derive(Debug, Clone, Copy)]
pub enum FitData<'a> {
    TwoLevel(&'a [DesignedCluster]),
    ThreeLevel(&'a [DesignedSupercluster]),
}

/// `I⁻¹ V I⁻¹` for β, clustering the score at the top level of `data`.
///
/// `I` is the negative β-Hessian and `V` the empirical covariance of the
/// group score contributions with the `m/(m-1)` correction.
pub fn sandwich_variance(data: FitData, fit: &FitResult, weighted: bool) -> Result<DMatrix<f64>> {
    let prep = match data {
        FitData::TwoLevel(d) => Prepared::from_clusters(d, weighted)?,
        FitData::ThreeLevel(d) => Prepared::from_superclusters(d, weighted)?,
    };
    let eval = prep.evaluate(
        fit.beta(),
        fit.params.variances(),
        Need {
            hessian: true,
            group_scores: true,
        },
    )?;
    from_evaluation(&eval)
}

pub(crate) fn from_evaluation(eval: &Evaluation) -> Result<DMatrix<f64>> {
    let scores = eval.group_scores.as_ref().expect("group scores requested");
    let info = -eval.hess_beta.clone().expect("hessian requested");
    sandwich(&info, scores)
}

pub(crate) fn sandwich(info: &DMatrix<f64>, scores: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let m = scores.len();
    if m < 2 {
        return Err(Error::VarianceUndefined(format!(
            "a cluster-robust variance needs at least 2 groups, got {m}"
        )));
    }
    let p = info.nrows();
    let mean = scores.iter().fold(DVector::zeros(p), |acc, s| acc + s) / m as f64;
    let mut v = DMatrix::zeros(p, p);
    for s in scores {
        let d = s - &mean;
        v += &d * d.transpose();
    }
    v *= m as f64 / (m as f64 - 1.0);
    let inv = info
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Model("fixed-effect information is not positive definite".into()))?
        .inverse();
    let out = &inv * v * &inv;
    Ok((&out + out.transpose()) * 0.5)
}
