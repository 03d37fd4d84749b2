//! Pseudo-maximum-likelihood fitting with model-based and sandwich
//! covariances.

mod closed_form;
mod design;
mod optimize;
mod report;
mod sandwich;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hierarchy::{rescale_weights, HierarchicalDataset, WeightScaling};
use crate::lmm::stats::Prepared;
use crate::lmm::{DesignedCluster, DesignedSupercluster, ThreeLevelParams, TwoLevelParams};
use optimize::{maximize, observed_information_cov, Component};

pub use closed_form::fit_intercept_closed_form;
pub use design::{design_three_level, design_two_level, ModelSpec};
pub use optimize::FitOptions;
pub use sandwich::{sandwich_variance, FitData};

/// Variance components in the order used throughout.
pub const VARIANCE_NAMES: [&str; 3] = ["sigma2_e", "sigma2_u", "sigma2_tau"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Fixed effects only: independent errors.
    Linear,
    TwoLevel,
    ThreeLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedParams {
    Two(TwoLevelParams),
    Three(ThreeLevelParams),
}

impl FittedParams {
    pub fn beta(&self) -> &[f64] {
        match self {
            FittedParams::Two(p) => &p.beta,
            FittedParams::Three(p) => &p.beta,
        }
    }

    /// (σ²ₑ, σ²ᵤ, σ²_τ), with components outside the model at 0.
    pub fn variances(&self) -> [f64; 3] {
        match self {
            FittedParams::Two(p) => [p.sigma2_e, p.sigma2_u, 0.0],
            FittedParams::Three(p) => [p.sigma2_e, p.sigma2_u, p.sigma2_tau],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub final_score_norm: f64,
    pub converged: bool,
    /// Variance components held at zero.
    pub boundary_hit: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub kind: ModelKind,
    pub weighted: bool,
    pub scaling: WeightScaling,
    pub fixed_names: Vec<String>,
    pub params: FittedParams,
    /// Names of the variance components in the model, in covariance order.
    pub variance_names: Vec<&'static str>,
    /// Inverse observed information over β followed by the model's variance
    /// components; rows of components on the boundary are zero.
    pub cov_model: DMatrix<f64>,
    /// Cluster-robust covariance of β.
    pub cov_sandwich: DMatrix<f64>,
    pub loglik: f64,
    pub n_obs: usize,
    pub n_groups: usize,
    pub convergence: ConvergenceReport,
}

fn sqrt_diag(m: &DMatrix<f64>, range: std::ops::Range<usize>) -> Vec<f64> {
    range.map(|i| m[(i, i)].max(0.0).sqrt()).collect()
}

impl FitResult {
    pub fn beta(&self) -> &[f64] {
        self.params.beta()
    }

    pub fn se_model(&self) -> Vec<f64> {
        sqrt_diag(&self.cov_model, 0..self.beta().len())
    }

    pub fn se_robust(&self) -> Vec<f64> {
        sqrt_diag(&self.cov_sandwich, 0..self.beta().len())
    }

    /// Wald statistics from the robust standard errors.
    pub fn z(&self) -> Vec<f64> {
        self.beta().iter().zip(self.se_robust()).map(|(b, s)| b / s).collect()
    }

    /// Two-sided standard normal p-values of [`FitResult::z`].
    pub fn p_values(&self) -> Vec<f64> {
        self.z().into_iter().map(report::two_sided_p).collect()
    }

    /// Estimate of a variance component by name.
    pub fn variance(&self, name: &str) -> Option<f64> {
        let k = VARIANCE_NAMES.iter().position(|n| *n == name)?;
        self.variance_names.contains(&name).then(|| self.params.variances()[k])
    }

    /// Model-based standard error of a variance component; `None` when the
    /// component is not in the model or sits on the boundary.
    pub fn variance_se(&self, name: &str) -> Option<f64> {
        let pos = self.variance_names.iter().position(|n| *n == name)?;
        if self.convergence.boundary_hit.iter().any(|b| b == name) {
            return None;
        }
        let i = self.beta().len() + pos;
        Some(self.cov_model[(i, i)].max(0.0).sqrt())
    }

    pub fn to_json(&self) -> serde_json::Value {
        report::to_json(self)
    }
}

struct Assembled<'a> {
    kind: ModelKind,
    weighted: bool,
    scaling: WeightScaling,
    fixed_names: Vec<String>,
    prep: &'a Prepared,
    components: [Component; 3],
    boundary_names: Vec<String>,
}

fn starting_point(prep: &Prepared, components: &[Component; 3]) -> Result<(DVector<f64>, [f64; 3])> {
    let (beta, total) = prep.least_squares()?;
    let total = if total > 0.0 { total } else { 1.0 };
    let floor = 1e-4 * total;
    let raw = prep.moment_starts(beta.as_slice());
    let mut start = [0.0; 3];
    let n_free = components.iter().filter(|c| matches!(c, Component::Free)).count() as f64;
    for c in 0..3 {
        if let Component::Free = components[c] {
            let guess = if raw[c].is_finite() && raw[c] > 0.0 {
                raw[c]
            } else if c == 0 {
                total / n_free
            } else {
                0.0
            };
            start[c] = guess.max(floor);
        }
    }
    Ok((beta, start))
}

fn run(a: Assembled, opts: &FitOptions) -> Result<FitResult> {
    let (beta0, start) = starting_point(a.prep, &a.components)?;
    let sol = maximize(a.prep, a.components, start, beta0, opts)?;

    let model_comps: Vec<usize> = match a.kind {
        ModelKind::Linear => vec![0],
        ModelKind::TwoLevel => vec![0, 1],
        ModelKind::ThreeLevel => vec![0, 1, 2],
    };
    let estimated: Vec<usize> = model_comps
        .iter()
        .copied()
        .filter(|&c| matches!(a.components[c], Component::Free) && !sol.at_boundary[c])
        .collect();
    let hess_beta = sol.eval.hess_beta.clone().expect("requested");
    let cov_est = observed_information_cov(a.prep, &sol.beta, sol.var, &estimated, &hess_beta)?;
    let p = sol.beta.len();
    let dim = p + model_comps.len();
    let mut cov_model = DMatrix::zeros(dim, dim);
    let slot = |i: usize| -> usize {
        if i < p {
            i
        } else {
            p + model_comps.iter().position(|&c| c == estimated[i - p]).expect("subset")
        }
    };
    for i in 0..p + estimated.len() {
        for j in 0..p + estimated.len() {
            cov_model[(slot(i), slot(j))] = cov_est[(i, j)];
        }
    }

    let cov_sandwich = sandwich::from_evaluation(&sol.eval)?;
    let mut boundary_hit = a.boundary_names;
    for c in 1..3 {
        if sol.at_boundary[c] {
            boundary_hit.push(VARIANCE_NAMES[c].to_string());
        }
    }
    let beta = sol.beta.as_slice().to_vec();
    let params = match a.kind {
        ModelKind::ThreeLevel => FittedParams::Three(ThreeLevelParams {
            beta,
            sigma2_e: sol.var[0],
            sigma2_u: sol.var[1],
            sigma2_tau: sol.var[2],
        }),
        _ => FittedParams::Two(TwoLevelParams {
            beta,
            sigma2_e: sol.var[0],
            sigma2_u: sol.var[1],
        }),
    };
    Ok(FitResult {
        kind: a.kind,
        weighted: a.weighted,
        scaling: a.scaling,
        fixed_names: a.fixed_names,
        params,
        variance_names: model_comps.iter().map(|&c| VARIANCE_NAMES[c]).collect(),
        cov_model,
        cov_sandwich,
        loglik: sol.eval.loglik,
        n_obs: a.prep.n_obs(),
        n_groups: a.prep.n_groups(),
        convergence: ConvergenceReport {
            iterations: sol.iterations,
            final_score_norm: sol.score_norm,
            converged: sol.converged,
            boundary_hit,
        },
    })
}

fn default_names(p: usize) -> Vec<String> {
    std::iter::once("intercept".to_string())
        .chain((1..p).map(|i| format!("b{i}")))
        .collect()
}

/// Fits the two-level random-intercept model to designed clusters.
pub fn fit_designed_two_level(data: &[DesignedCluster], weighted: bool, opts: &FitOptions) -> Result<FitResult> {
    let prep = Prepared::from_clusters(data, weighted)?;
    fit_prepared_two_level(&prep, weighted, WeightScaling::Raw, default_names(prep.n_fixed()), opts)
}

fn fit_prepared_two_level(
    prep: &Prepared,
    weighted: bool,
    scaling: WeightScaling,
    fixed_names: Vec<String>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if prep.all_clusters_singleton() {
        return Err(Error::Identifiability(
            "every cluster has one unit, so only sigma2_e + sigma2_u is identified".into(),
        ));
    }
    run(
        Assembled {
            kind: ModelKind::TwoLevel,
            weighted,
            scaling,
            fixed_names,
            prep,
            components: [Component::Free, Component::Free, Component::Fixed(0.0)],
            boundary_names: Vec::new(),
        },
        opts,
    )
}

/// Fits the fixed-effects-only model with cluster-robust standard errors.
pub fn fit_designed_linear(data: &[DesignedCluster], weighted: bool, opts: &FitOptions) -> Result<FitResult> {
    let prep = Prepared::from_clusters(data, weighted)?;
    fit_prepared_linear(&prep, weighted, WeightScaling::Raw, default_names(prep.n_fixed()), opts)
}

fn fit_prepared_linear(
    prep: &Prepared,
    weighted: bool,
    scaling: WeightScaling,
    fixed_names: Vec<String>,
    opts: &FitOptions,
) -> Result<FitResult> {
    run(
        Assembled {
            kind: ModelKind::Linear,
            weighted,
            scaling,
            fixed_names,
            prep,
            components: [Component::Free, Component::Fixed(0.0), Component::Fixed(0.0)],
            boundary_names: Vec::new(),
        },
        opts,
    )
}

/// Fits the three-level random-intercept model to designed superclusters.
pub fn fit_designed_three_level(data: &[DesignedSupercluster], weighted: bool, opts: &FitOptions) -> Result<FitResult> {
    let prep = Prepared::from_superclusters(data, weighted)?;
    fit_prepared_three_level(&prep, weighted, WeightScaling::Raw, default_names(prep.n_fixed()), opts)
}

fn fit_prepared_three_level(
    prep: &Prepared,
    weighted: bool,
    scaling: WeightScaling,
    fixed_names: Vec<String>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if prep.all_clusters_singleton() {
        return Err(Error::Identifiability(
            "every level-2 cluster has one unit, so sigma2_e and sigma2_u are not separately identified".into(),
        ));
    }
    // with one cluster per supercluster σ²_τ and σ²ᵤ lie on a ridge
    let (tau, boundary_names) = if prep.all_groups_single_cluster() {
        (Component::Fixed(0.0), vec![VARIANCE_NAMES[2].to_string()])
    } else {
        (Component::Free, Vec::new())
    };
    run(
        Assembled {
            kind: ModelKind::ThreeLevel,
            weighted,
            scaling,
            fixed_names,
            prep,
            components: [Component::Free, Component::Free, tau],
            boundary_names,
        },
        opts,
    )
}

fn scaled(data: &HierarchicalDataset, weighted: bool, scaling: WeightScaling) -> Result<Option<HierarchicalDataset>> {
    if weighted && scaling == WeightScaling::ClusterSize {
        rescale_weights(data, scaling).map(Some)
    } else {
        Ok(None)
    }
}

/// Two-level fit of a dataset of any depth; see [`design_two_level`] for how
/// units are grouped.
pub fn fit_two_level(
    data: &HierarchicalDataset,
    model: &ModelSpec,
    weighted: bool,
    scaling: WeightScaling,
) -> Result<FitResult> {
    let rescaled = scaled(data, weighted, scaling)?;
    let designed = design_two_level(rescaled.as_ref().unwrap_or(data), model)?;
    let prep = Prepared::from_clusters(&designed, weighted)?;
    fit_prepared_two_level(
        &prep,
        weighted,
        scaling,
        model.coefficient_names(),
        &FitOptions::default(),
    )
}

/// Linear model without random effects, grouped as in [`fit_two_level`]
/// for the robust covariance.
pub fn fit_linear(
    data: &HierarchicalDataset,
    model: &ModelSpec,
    weighted: bool,
    scaling: WeightScaling,
) -> Result<FitResult> {
    let rescaled = scaled(data, weighted, scaling)?;
    let designed = design_two_level(rescaled.as_ref().unwrap_or(data), model)?;
    let prep = Prepared::from_clusters(&designed, weighted)?;
    fit_prepared_linear(
        &prep,
        weighted,
        scaling,
        model.coefficient_names(),
        &FitOptions::default(),
    )
}

pub fn fit_three_level(
    data: &HierarchicalDataset,
    model: &ModelSpec,
    weighted: bool,
    scaling: WeightScaling,
) -> Result<FitResult> {
    let rescaled = scaled(data, weighted, scaling)?;
    let designed = design_three_level(rescaled.as_ref().unwrap_or(data), model)?;
    let prep = Prepared::from_superclusters(&designed, weighted)?;
    fit_prepared_three_level(
        &prep,
        weighted,
        scaling,
        model.coefficient_names(),
        &FitOptions::default(),
    )
}
