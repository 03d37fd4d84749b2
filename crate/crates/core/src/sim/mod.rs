//! Finite populations under the two data-generating models, informative
//! two-stage sampling and the Monte Carlo harness behind the simulation
//! tables.

mod config;
mod population;
mod replicate;
mod report;
mod sampling;

pub use config::{parse_config, MonteCarloConfig};
pub use population::{
    cluster_size, generate_population, true_sigma_u_model4, Population, PopulationCluster, PopulationModel,
    PopulationSpec, PopulationUnit,
};
pub use replicate::{
    replication_sample, run_replication, FitOutcome, ReplicationResult, RunSettings, SampleDesign, Scenario, Table,
};
pub use report::{aggregate, run_table, ParameterRow, ScenarioReport, SimulationReport, Summary};
pub use sampling::{
    covariate_names, draw_cluster_sample, draw_singleton_sample, poisson_inclusion_probabilities, poisson_select_units,
    pps_inclusion_probabilities, pps_select_clusters, pps_systematic, DesignDiagnostics, PoissonSample, PpsSample,
};
