//! Marginal (pseudo-)log-likelihoods of Gaussian random-intercept models.
//!
//! The random intercepts are integrated out analytically. For a cluster with
//! level-1 weights `w` and residuals `r = y - Xβ` the rank-one structure of
//! the covariance reduces everything to the weighted sums `A = Σw`,
//! `B = Σw r` and `C = Σw r²`, so a cluster costs O(n p).

mod covariance;
mod loglik;
mod quadrature;
pub(crate) mod stats;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use covariance::{marginal_covariance, BlockCovariance, CovarianceBlock, SourceKind};
pub use loglik::{loglik_three_level, loglik_two_level, score_three_level, score_two_level};
pub use quadrature::{gauss_hermite, loglik_quadrature_oracle, loglik_quadrature_three_level, QUADRATURE_NODES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelParams {
    pub beta: Vec<f64>,
    pub sigma2_e: f64,
    pub sigma2_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelParams {
    pub beta: Vec<f64>,
    pub sigma2_e: f64,
    pub sigma2_u: f64,
    pub sigma2_tau: f64,
}

fn check_variances(beta: &[f64], sigma2_e: f64, rest: &[(&str, f64)]) -> Result<()> {
    if let Some(b) = beta.iter().find(|b| !b.is_finite()) {
        return Err(Error::Argument(format!("non-finite fixed effect {b}")));
    }
    if !(sigma2_e.is_finite() && sigma2_e > 0.0) {
        return Err(Error::Argument(format!("sigma2_e must be positive, got {sigma2_e}")));
    }
    for &(name, v) in rest {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Argument(format!("{name} must be non-negative, got {v}")));
        }
    }
    Ok(())
}

impl TwoLevelParams {
    pub fn validate(&self) -> Result<()> {
        check_variances(&self.beta, self.sigma2_e, &[("sigma2_u", self.sigma2_u)])
    }

    /// The same model with an extra level whose variance is zero.
    pub fn with_tau(&self, sigma2_tau: f64) -> ThreeLevelParams {
        ThreeLevelParams {
            beta: self.beta.clone(),
            sigma2_e: self.sigma2_e,
            sigma2_u: self.sigma2_u,
            sigma2_tau,
        }
    }
}

impl ThreeLevelParams {
    pub fn validate(&self) -> Result<()> {
        check_variances(
            &self.beta,
            self.sigma2_e,
            &[("sigma2_u", self.sigma2_u), ("sigma2_tau", self.sigma2_tau)],
        )
    }

    /// σ² = σ²ₑ + σ²ᵤ + σ²_τ.
    pub fn total_variance(&self) -> f64 {
        self.sigma2_e + self.sigma2_u + self.sigma2_tau
    }

    /// σ²_c = σ²ᵤ + σ²_τ.
    pub fn sigma2_c(&self) -> f64 {
        self.sigma2_u + self.sigma2_tau
    }
}

/// Responses, fixed-effect design and weights of one level-2 cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignedCluster {
    y: Vec<f64>,
    x: DMatrix<f64>,
    w: Vec<f64>,
    w_cluster: f64,
}

impl DesignedCluster {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, w: Vec<f64>, w_cluster: f64) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Structural("a designed cluster needs at least one unit".into()));
        }
        if x.nrows() != y.len() || w.len() != y.len() {
            return Err(Error::Structural(format!(
                "designed cluster has {} responses, {} design rows and {} weights",
                y.len(),
                x.nrows(),
                w.len()
            )));
        }
        if w.iter().chain([&w_cluster]).any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Data("designed cluster has a non-positive weight".into()));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("designed cluster has a non-finite value".into()));
        }
        Ok(Self { y, x, w, w_cluster })
    }

    /// Intercept-only cluster with unit level-1 weights.
    pub fn intercept_only(y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(y, DMatrix::from_element(n, 1, 1.0), vec![1.0; n], 1.0)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn w_cluster(&self) -> f64 {
        self.w_cluster
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_fixed(&self) -> usize {
        self.x.ncols()
    }

    pub fn with_w_cluster(mut self, w_cluster: f64) -> Result<Self> {
        if !(w_cluster.is_finite() && w_cluster > 0.0) {
            return Err(Error::Data(format!("cluster weight must be positive, got {w_cluster}")));
        }
        self.w_cluster = w_cluster;
        Ok(self)
    }
}

/// The clusters of one level-3 unit and its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignedSupercluster {
    clusters: Vec<DesignedCluster>,
    w_super: f64,
}

impl DesignedSupercluster {
    pub fn new(clusters: Vec<DesignedCluster>, w_super: f64) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::Structural("a supercluster needs at least one cluster".into()));
        }
        let p = clusters[0].n_fixed();
        if clusters.iter().any(|c| c.n_fixed() != p) {
            return Err(Error::Structural(
                "clusters disagree on the number of fixed effects".into(),
            ));
        }
        if !(w_super.is_finite() && w_super > 0.0) {
            return Err(Error::Data(format!(
                "supercluster weight must be positive, got {w_super}"
            )));
        }
        Ok(Self { clusters, w_super })
    }

    pub fn clusters(&self) -> &[DesignedCluster] {
        &self.clusters
    }

    pub fn w_super(&self) -> f64 {
        self.w_super
    }
}
