use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generative model of the finite population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopulationModel {
    /// y = β₀ + β₁xᵢⱼ + β₂zⱼ + uⱼ + eᵢⱼ.
    Model3,
    /// y = β₀ + β₁xⱼ + β₂zⱼ + β₃xⱼzⱼ + uⱼ + eᵢⱼ.
    Model4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub model: PopulationModel,
    pub coefficients: Vec<f64>,
    /// Standard deviation of the cluster effect uⱼ.
    pub sigma_u: f64,
    /// Number of clusters M.
    pub clusters: usize,
    pub seed: u64,
}

impl PopulationSpec {
    /// β = (1, 1, 1), uⱼ ~ N(0, 1).
    pub fn model3(clusters: usize, seed: u64) -> Self {
        Self {
            model: PopulationModel::Model3,
            coefficients: vec![1.0, 1.0, 1.0],
            sigma_u: 1.0,
            clusters,
            seed,
        }
    }

    /// β = (1, 1, 1, -1), uⱼ ~ N(0, 0.5²).
    pub fn model4(clusters: usize, seed: u64) -> Self {
        Self {
            model: PopulationModel::Model4,
            coefficients: vec![1.0, 1.0, 1.0, -1.0],
            sigma_u: 0.5,
            clusters,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.model {
            PopulationModel::Model3 => 3,
            PopulationModel::Model4 => 4,
        };
        if self.coefficients.len() != expected {
            return Err(Error::Argument(format!(
                "{:?} needs {expected} coefficients, got {}",
                self.model,
                self.coefficients.len()
            )));
        }
        if self.clusters < 1 {
            return Err(Error::Argument("a population needs at least one cluster".into()));
        }
        if !(self.sigma_u.is_finite() && self.sigma_u >= 0.0) {
            return Err(Error::Argument(format!(
                "sigma_u must be non-negative, got {}",
                self.sigma_u
            )));
        }
        Ok(())
    }

    /// Draws the cluster-level quantities (zⱼ, xⱼ, uⱼ) in that order.
    fn draw_cluster<R: Rng>(&self, rng: &mut R) -> (f64, f64, f64) {
        let z: f64 = rng.sample(StandardNormal);
        let x = match self.model {
            PopulationModel::Model3 => 0.0,
            PopulationModel::Model4 => rng.sample::<f64, _>(Exp1) + 1.0,
        };
        let u = self.sigma_u * rng.sample::<f64, _>(StandardNormal);
        (z, x, u)
    }

    /// Draws the unit-level quantities (xᵢⱼ, eᵢⱼ) in that order.
    fn draw_unit<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        let x = match self.model {
            PopulationModel::Model3 => rng.sample::<f64, _>(Exp1) + 1.0,
            PopulationModel::Model4 => 0.0,
        };
        (x, rng.sample(StandardNormal))
    }

    fn outcome(&self, c: &PopulationCluster, x_unit: f64, e: f64) -> f64 {
        let b = &self.coefficients;
        match self.model {
            PopulationModel::Model3 => b[0] + b[1] * x_unit + b[2] * c.z + c.u + e,
            PopulationModel::Model4 => b[0] + b[1] * c.x + b[2] * c.z + b[3] * c.x * c.z + c.u + e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationCluster {
    pub z: f64,
    /// Cluster covariate xⱼ of Model4; 0 under Model3.
    pub x: f64,
    pub u: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationUnit {
    /// Unit covariate xᵢⱼ of Model3; 0 under Model4.
    pub x: f64,
    pub e: f64,
    pub y: f64,
}

/// A finite population; units are regenerated on demand from a per-cluster
/// random stream, so only sampled clusters are ever materialised.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    spec: PopulationSpec,
    clusters: Vec<PopulationCluster>,
}

/// N = round(500 · logistic(2.5 + z)), clamped to [100, 500].
pub fn cluster_size(z: f64) -> usize {
    let raw = 500.0 / (1.0 + (-(2.5 + z)).exp());
    raw.round().clamp(100.0, 500.0) as usize
}

pub fn generate_population(spec: &PopulationSpec) -> Result<Population> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clusters = (0..spec.clusters)
        .map(|_| {
            let (z, x, u) = spec.draw_cluster(&mut rng);
            PopulationCluster {
                z,
                x,
                u,
                size: cluster_size(z),
            }
        })
        .collect();
    Ok(Population {
        spec: spec.clone(),
        clusters,
    })
}

impl Population {
    pub fn spec(&self) -> &PopulationSpec {
        &self.spec
    }

    pub fn clusters(&self) -> &[PopulationCluster] {
        &self.clusters
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.size as f64).collect()
    }

    /// All units of cluster `j`; identical on every call.
    pub fn units(&self, j: usize) -> Vec<PopulationUnit> {
        let c = &self.clusters[j];
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(j as u64 + 1);
        (0..c.size)
            .map(|_| {
                let (x, e) = self.spec.draw_unit(&mut rng);
                PopulationUnit {
                    x,
                    e,
                    y: self.spec.outcome(c, x, e),
                }
            })
            .collect()
    }
}

/// One member of a population of independent units: its own cluster
/// quantities plus a single unit.
pub(crate) fn draw_independent_unit<R: Rng>(spec: &PopulationSpec, rng: &mut R) -> (PopulationCluster, PopulationUnit) {
    let (z, x, u) = spec.draw_cluster(rng);
    let c = PopulationCluster { z, x, u, size: 1 };
    let (xu, e) = spec.draw_unit(rng);
    let unit = PopulationUnit {
        x: xu,
        e,
        y: spec.outcome(&c, xu, e),
    };
    (c, unit)
}

/// Var(β₂z + β₃xz + u) for x ~ Exp(1) + 1 and z ~ N(0, 1) independent:
/// β₂² + β₃²E(x²) + Var(u) + 2β₂β₃E(x), with E(x) = 2 and E(x²) = 5.
/// This is the between-cluster variance a random-intercept fit on x alone targets.
pub fn true_sigma_u_model4(coefficients: &[f64], sigma_u: f64) -> f64 {
    const EX: f64 = 2.0;
    const EX2: f64 = 5.0;
    let (b2, b3) = (coefficients[2], coefficients[3]);
    b2 * b2 + b3 * b3 * EX2 + sigma_u * sigma_u + 2.0 * b2 * b3 * EX
}
