use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::population::{draw_independent_unit, Population, PopulationModel, PopulationSpec};
use crate::error::{Error, Result};
use crate::hierarchy::{
    single_level_dataset, two_level_dataset, ClusterRecord, CovariateNames, Depth, HierarchicalDataset,
    IndependentUnit, ObservationRecord,
};

/// Redraws of an empty Poisson sample before giving up.
const MAX_REDRAWS: usize = 100_000;

/// Inclusion probabilities p_j = m·N_j/ΣN.
///
/// Units whose probability would exceed one are taken with certainty and the
/// remaining draws are spread over the rest in proportion to size, so the
/// probabilities always sum to `m`. Returns the probabilities and the number
/// of capped units.
pub fn pps_inclusion_probabilities(sizes: &[f64], m: usize) -> Result<(Vec<f64>, usize)> {
    if m == 0 || m > sizes.len() {
        return Err(Error::Argument(format!("cannot draw {m} of {} clusters", sizes.len())));
    }
    if let Some(s) = sizes.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::Argument(format!("size measures must be positive, got {s}")));
    }
    let mut certain = vec![false; sizes.len()];
    loop {
        let n_certain = certain.iter().filter(|c| **c).count();
        let rest: f64 = sizes.iter().zip(&certain).filter(|(_, c)| !**c).map(|(s, _)| s).sum();
        let left = (m - n_certain) as f64;
        let p: Vec<f64> = sizes
            .iter()
            .zip(&certain)
            .map(|(s, c)| if *c { 1.0 } else { left * s / rest })
            .collect();
        let mut changed = false;
        for (c, pj) in certain.iter_mut().zip(&p) {
            if !*c && *pj >= 1.0 {
                *c = true;
                changed = true;
            }
        }
        if !changed {
            return Ok((p, n_certain));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PpsSample {
    /// Selected positions, ascending.
    pub indices: Vec<usize>,
    /// Inclusion probability of each selected unit.
    pub probabilities: Vec<f64>,
    pub capped: usize,
}

impl PpsSample {
    pub fn weights(&self) -> Vec<f64> {
        self.probabilities.iter().map(|p| 1.0 / p).collect()
    }
}

/// Systematic PPS without replacement on a randomly permuted list.
pub fn pps_systematic<R: Rng>(sizes: &[f64], m: usize, rng: &mut R) -> Result<PpsSample> {
    let (p, capped) = pps_inclusion_probabilities(sizes, m)?;
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(rng);
    let start: f64 = rng.random();
    let mut indices = Vec::with_capacity(m);
    let mut cum = 0.0;
    let mut next = start;
    for (pos, &j) in order.iter().enumerate() {
        cum += p[j];
        // The last unit absorbs rounding in the cumulative total.
        let last = pos + 1 == order.len();
        while indices.len() < m && (next < cum || last) {
            indices.push(j);
            next += 1.0;
        }
    }
    indices.sort_unstable();
    indices.dedup();
    if indices.len() != m {
        return Err(Error::Data(format!(
            "systematic PPS drew {} distinct clusters instead of {m}",
            indices.len()
        )));
    }
    let probabilities = indices.iter().map(|&j| p[j]).collect();
    Ok(PpsSample {
        indices,
        probabilities,
        capped,
    })
}

pub fn pps_select_clusters<R: Rng>(population: &Population, m1: usize, rng: &mut R) -> Result<PpsSample> {
    pps_systematic(&population.sizes(), m1, rng)
}

/// p_{i|j} = n·l_i/Σl with l = 0.25 for negative residuals and 0.75
/// otherwise, capped at one. Returns the probabilities and the capped count.
pub fn poisson_inclusion_probabilities(residuals: &[f64], n: usize) -> (Vec<f64>, usize) {
    let size = |e: f64| if e < 0.0 { 0.25 } else { 0.75 };
    let total: f64 = residuals.iter().map(|&e| size(e)).sum();
    let mut capped = 0;
    let p = residuals
        .iter()
        .map(|&e| {
            let p = n as f64 * size(e) / total;
            if p > 1.0 {
                capped += 1;
                1.0
            } else {
                p
            }
        })
        .collect();
    (p, capped)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoissonSample {
    pub indices: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub capped: usize,
    /// Empty draws rejected before this one.
    pub redraws: usize,
}

impl PoissonSample {
    pub fn weights(&self) -> Vec<f64> {
        self.probabilities.iter().map(|p| 1.0 / p).collect()
    }
}

/// Independent Bernoulli selection, redrawn while empty.
pub fn poisson_select_units<R: Rng>(residuals: &[f64], n: usize, rng: &mut R) -> Result<PoissonSample> {
    if residuals.is_empty() || n == 0 {
        return Err(Error::Argument(
            "Poisson sampling needs units and a positive target size".into(),
        ));
    }
    let (p, capped) = poisson_inclusion_probabilities(residuals, n);
    for redraws in 0..MAX_REDRAWS {
        let indices: Vec<usize> = p
            .iter()
            .enumerate()
            .filter(|(_, &pi)| rng.random::<f64>() < pi)
            .map(|(i, _)| i)
            .collect();
        if !indices.is_empty() {
            let probabilities = indices.iter().map(|&i| p[i]).collect();
            return Ok(PoissonSample {
                indices,
                probabilities,
                capped,
                redraws,
            });
        }
    }
    Err(Error::Data(format!(
        "Poisson sample still empty after {MAX_REDRAWS} draws"
    )))
}

/// Covariate layout of simulated datasets: Model3 has unit covariate
/// `x1` and cluster covariate `z1 = z_j`; Model4 has cluster covariates
/// `z1 = x_j` and `z2 = z_j`.
pub fn covariate_names(model: PopulationModel) -> CovariateNames {
    match model {
        PopulationModel::Model3 => CovariateNames::numbered(1, 1, 0),
        PopulationModel::Model4 => CovariateNames::numbered(0, 2, 0),
    }
}

fn covariates(model: PopulationModel, z: f64, x_cluster: f64, x_unit: f64) -> (Vec<f64>, Vec<f64>) {
    match model {
        PopulationModel::Model3 => (vec![x_unit], vec![z]),
        PopulationModel::Model4 => (Vec::new(), vec![x_cluster, z]),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DesignDiagnostics {
    pub pps_capped: usize,
    pub poisson_capped: usize,
    pub poisson_redraws: usize,
}

/// Two-stage informative sample: PPS clusters, then Poisson units within
/// each selected cluster. Returns a depth-2 dataset with w_j = 1/p_j and
/// w_{i|j} = 1/p_{i|j}.
pub fn draw_cluster_sample<R: Rng>(
    population: &Population,
    m1: usize,
    n: usize,
    rng: &mut R,
) -> Result<(HierarchicalDataset, DesignDiagnostics)> {
    let model = population.spec().model;
    let pps = pps_select_clusters(population, m1, rng)?;
    let mut diag = DesignDiagnostics {
        pps_capped: pps.capped,
        ..Default::default()
    };
    let mut obs = Vec::new();
    let mut clusters = Vec::with_capacity(m1);
    for (&j, &pj) in pps.indices.iter().zip(&pps.probabilities) {
        let c = population.clusters()[j];
        let units = population.units(j);
        let residuals: Vec<f64> = units.iter().map(|u| u.e).collect();
        let draw = poisson_select_units(&residuals, n, rng)?;
        diag.poisson_capped += draw.capped;
        diag.poisson_redraws += draw.redraws;
        let cluster_id = format!("c{j}");
        let (_, x_cluster) = covariates(model, c.z, c.x, 0.0);
        clusters.push(ClusterRecord {
            cluster_id: cluster_id.clone(),
            supercluster_id: String::new(),
            x_cluster,
            w_cluster: 1.0 / pj,
            is_pseudo: false,
        });
        for (&i, &pi) in draw.indices.iter().zip(&draw.probabilities) {
            let u = units[i];
            let (x_unit, _) = covariates(model, c.z, c.x, u.x);
            obs.push(ObservationRecord {
                unit_id: format!("c{j}u{i}"),
                cluster_id: cluster_id.clone(),
                supercluster_id: String::new(),
                y: u.y,
                x_unit,
                w_unit: 1.0 / pi,
            });
        }
    }
    Ok((two_level_dataset(covariate_names(model), obs, clusters)?, diag))
}

/// SRS of `m2` units from a fresh population of `n2` independent units
/// generated under `spec`; each unit is its own pseudo cluster with weight
/// N2/m2.
pub fn draw_singleton_sample<R: Rng>(
    spec: &PopulationSpec,
    m2: usize,
    n2: usize,
    rng: &mut R,
) -> Result<HierarchicalDataset> {
    spec.validate()?;
    if m2 > n2 {
        return Err(Error::Argument(format!("cannot draw {m2} singletons from {n2} units")));
    }
    if m2 == 0 {
        return Ok(HierarchicalDataset::empty(Depth::One, covariate_names(spec.model)));
    }
    let population: Vec<_> = (0..n2).map(|_| draw_independent_unit(spec, rng)).collect();
    let mut chosen = index::sample(rng, n2, m2).into_vec();
    chosen.sort_unstable();
    let w = n2 as f64 / m2 as f64;
    let units = chosen
        .into_iter()
        .map(|k| {
            let (c, u) = population[k];
            let (x_unit, x_cluster) = covariates(spec.model, c.z, c.x, u.x);
            IndependentUnit {
                unit_id: format!("s{k}"),
                y: u.y,
                x_unit,
                x_cluster,
                x_super: Vec::new(),
                w_unit: 1.0,
                w_cluster: w,
                w_super: 1.0,
            }
        })
        .collect();
    single_level_dataset(covariate_names(spec.model), units)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pps_hand_values() {
        let (p, capped) = pps_inclusion_probabilities(&[100.0, 200.0, 300.0, 400.0], 2).unwrap();
        assert_eq!(capped, 0);
        for (a, b) in p.iter().zip([0.2, 0.4, 0.6, 0.8]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn pps_caps_large_units() {
        let (p, capped) = pps_inclusion_probabilities(&[1.0, 1.0, 1.0, 10.0], 2).unwrap();
        assert_eq!(capped, 1);
        assert_eq!(p[3], 1.0);
        assert!((p.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = pps_systematic(&[1.0, 1.0, 1.0, 10.0], 2, &mut rng).unwrap();
            assert!(s.indices.contains(&3));
        }
    }

    #[test]
    fn poisson_hand_values() {
        let (p, capped) = poisson_inclusion_probabilities(&[-1.0, -0.5, 0.3, 2.0], 2);
        assert_eq!(capped, 0);
        assert_eq!(p, vec![0.25, 0.25, 0.75, 0.75]);
        let (p, _) = poisson_inclusion_probabilities(&[1.0; 5], 2);
        assert!(p.iter().all(|&x| (x - 0.4).abs() < 1e-15));
    }

    #[test]
    fn singleton_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = PopulationSpec::model3(1, 0);
        let d = draw_singleton_sample(&spec, 25, 100, &mut rng).unwrap();
        assert_eq!(d.n_observations(), 25);
        assert!(d.clusters().all(|c| c.w_cluster == 4.0 && c.is_pseudo));
        let census = draw_singleton_sample(&spec, 10, 10, &mut rng).unwrap();
        assert!(census.clusters().all(|c| c.w_cluster == 1.0));
        assert!(draw_singleton_sample(&spec, 0, 0, &mut rng).unwrap().is_empty());
    }
}
