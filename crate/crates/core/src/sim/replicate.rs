use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::population::{generate_population, true_sigma_u_model4, PopulationModel, PopulationSpec};
use super::sampling::{draw_cluster_sample, draw_singleton_sample, DesignDiagnostics};
use crate::error::{Error, Result};
use crate::estimator::{fit_linear, fit_two_level, FitResult, ModelSpec};
use crate::hierarchy::{combine_datasets, HierarchicalDataset, WeightScaling};

const Z95: f64 = 1.959_963_984_540_054;

/// The three Monte Carlo experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    /// Model3 population, correctly specified random-intercept fit.
    Sim1,
    /// Model4 population, random-intercept fit on x_j only.
    Sim2Model1,
    /// Model4 population, ordinary linear fit on x_j.
    Sim2Model2,
}

impl Table {
    pub fn as_str(self) -> &'static str {
        match self {
            Table::Sim1 => "sim1",
            Table::Sim2Model1 => "sim2_model1",
            Table::Sim2Model2 => "sim2_model2",
        }
    }

    pub fn population_model(self) -> PopulationModel {
        match self {
            Table::Sim1 => PopulationModel::Model3,
            _ => PopulationModel::Model4,
        }
    }

    pub fn population_spec(self, clusters: usize, seed: u64) -> PopulationSpec {
        match self.population_model() {
            PopulationModel::Model3 => PopulationSpec::model3(clusters, seed),
            PopulationModel::Model4 => PopulationSpec::model4(clusters, seed),
        }
    }

    pub fn model_spec(self) -> ModelSpec {
        match self {
            Table::Sim1 => ModelSpec::new(["x1", "z1"]),
            _ => ModelSpec::new(["z1"]),
        }
    }

    /// Reported parameters, in row order.
    pub fn parameters(self) -> Vec<&'static str> {
        match self {
            Table::Sim1 => vec!["beta0", "beta1", "beta2", "sigma2_e", "sigma2_u"],
            Table::Sim2Model1 => vec!["beta0", "beta1", "sigma2_e", "sigma2_u"],
            Table::Sim2Model2 => vec!["beta0", "beta1"],
        }
    }

    /// True values in the order of [`Table::parameters`].
    pub fn truth(self) -> Vec<f64> {
        let spec = self.population_spec(1, 0);
        let b = &spec.coefficients;
        match self {
            Table::Sim1 => vec![b[0], b[1], b[2], 1.0, spec.sigma_u * spec.sigma_u],
            Table::Sim2Model1 => vec![b[0], b[1], 1.0, true_sigma_u_model4(b, spec.sigma_u)],
            Table::Sim2Model2 => vec![b[0], b[1]],
        }
    }

    fn fit(self, data: &HierarchicalDataset, weighted: bool, scaling: WeightScaling) -> Result<FitResult> {
        match self {
            Table::Sim2Model2 => fit_linear(data, &self.model_spec(), weighted, scaling),
            _ => fit_two_level(data, &self.model_spec(), weighted, scaling),
        }
    }
}

impl std::str::FromStr for Table {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim1" => Ok(Table::Sim1),
            "sim2_model1" => Ok(Table::Sim2Model1),
            "sim2_model2" => Ok(Table::Sim2Model2),
            other => Err(Error::Argument(format!(
                "unknown table `{other}` (expected sim1, sim2_model1 or sim2_model2)"
            ))),
        }
    }
}

/// One (m, n, singleton %) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub m: usize,
    pub n: usize,
    pub singleton_pct: f64,
    /// Singleton source-population size; defaults to four times the
    /// singleton count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
}

impl Scenario {
    pub fn new(m: usize, n: usize, singleton_pct: f64) -> Self {
        Self {
            m,
            n,
            singleton_pct,
            n2: None,
        }
    }

    pub fn label(&self) -> String {
        format!("m={} n={} singletons={}%", self.m, self.n, self.singleton_pct)
    }

    pub fn design(&self) -> Result<SampleDesign> {
        if !(self.singleton_pct.is_finite() && (0.0..100.0).contains(&self.singleton_pct)) {
            return Err(Error::Argument(format!(
                "singleton percentage must lie in [0, 100), got {}",
                self.singleton_pct
            )));
        }
        let m2 = (self.m as f64 * self.singleton_pct / 100.0).round() as usize;
        let design = SampleDesign {
            m1: self.m.saturating_sub(m2),
            n: self.n,
            m2,
            n2: self.n2.unwrap_or(4 * m2),
        };
        design.validate()?;
        Ok(design)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleDesign {
    pub m1: usize,
    pub n: usize,
    pub m2: usize,
    pub n2: usize,
}

impl SampleDesign {
    pub fn validate(&self) -> Result<()> {
        if self.m1 < 1 {
            return Err(Error::Argument("a design needs at least one sampled cluster".into()));
        }
        if self.n < 1 {
            return Err(Error::Argument("the per-cluster target size must be at least 1".into()));
        }
        if self.n2 < self.m2 {
            return Err(Error::Argument(format!(
                "singleton population of {} cannot supply {} singletons",
                self.n2, self.m2
            )));
        }
        Ok(())
    }

    pub fn singleton_fraction(&self) -> f64 {
        self.m2 as f64 / (self.m1 + self.m2) as f64
    }
}

/// Settings shared by every replication of a run.
///
/// Fits use the design weights as drawn unless `scaling` says otherwise:
/// under the informative Poisson stage, cluster-size scaling moves the
/// weighted σ²ₑ mean about 0.03 above its raw-weight value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    /// Population cluster count M.
    pub population_clusters: usize,
    pub scaling: WeightScaling,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            population_clusters: 1000,
            scaling: WeightScaling::Raw,
        }
    }
}

/// Estimates of one fit in [`Table::parameters`] order, and whether each
/// 95% interval covered the truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitOutcome {
    pub estimates: Vec<f64>,
    pub covered: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub index: usize,
    /// `None` when the fit failed or did not converge.
    pub weighted: Option<FitOutcome>,
    pub unweighted: Option<FitOutcome>,
    pub n_observations: usize,
    pub n_clusters: usize,
    pub singleton_clusters: usize,
    pub diagnostics: DesignDiagnostics,
}

fn outcome(table: Table, fit: &FitResult) -> Option<FitOutcome> {
    if !fit.convergence.converged {
        return None;
    }
    let truth = table.truth();
    let beta = fit.beta();
    let se = fit.se_robust();
    let mut estimates = Vec::with_capacity(truth.len());
    let mut covered = Vec::with_capacity(truth.len());
    for (k, name) in table.parameters().into_iter().enumerate() {
        let (est, se) = match name.strip_prefix("beta") {
            Some(i) => {
                let i: usize = i.parse().expect("parameter names are fixed");
                (beta[i], Some(se[i]))
            }
            None => (fit.variance(name)?, fit.variance_se(name)),
        };
        estimates.push(est);
        covered.push(se.is_some_and(|s| s.is_finite() && (est - truth[k]).abs() <= Z95 * s));
    }
    Some(FitOutcome { estimates, covered })
}

/// Generates the population and both samples for replication `index`,
/// combines them and fits the table's model weighted and unweighted.
///
/// All randomness comes from stream `index` of a generator keyed by
/// `master_seed`, so replications can run in any order.
pub fn run_replication(
    table: Table,
    scenario: &Scenario,
    settings: &RunSettings,
    master_seed: u64,
    index: usize,
) -> Result<ReplicationResult> {
    let (data, diagnostics) = replication_sample(table, scenario, settings, master_seed, index)?;
    let fit = |weighted| {
        table
            .fit(&data, weighted, settings.scaling)
            .ok()
            .and_then(|f| outcome(table, &f))
    };
    Ok(ReplicationResult {
        index,
        weighted: fit(true),
        unweighted: fit(false),
        n_observations: data.n_observations(),
        n_clusters: data.n_superclusters(),
        singleton_clusters: data.superclusters().filter(|s| s.is_pseudo).count(),
        diagnostics,
    })
}

/// The combined depth-3 sample of replication `index`, before rescaling.
pub fn replication_sample(
    table: Table,
    scenario: &Scenario,
    settings: &RunSettings,
    master_seed: u64,
    index: usize,
) -> Result<(HierarchicalDataset, DesignDiagnostics)> {
    let design = scenario.design()?;
    if design.m1 > settings.population_clusters {
        return Err(Error::Argument(format!(
            "cannot sample {} clusters from a population of {}",
            design.m1, settings.population_clusters
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    let spec = table.population_spec(settings.population_clusters, rng.random());
    let population = generate_population(&spec)?;
    let (clustered, diagnostics) = draw_cluster_sample(&population, design.m1, design.n, &mut rng)?;
    let singles = draw_singleton_sample(&spec, design.m2, design.n2, &mut rng)?;
    Ok((combine_datasets(&[clustered, singles])?, diagnostics))
}
