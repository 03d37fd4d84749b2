//! Multi-level survey datasets.
//!
//! Every dataset is stored with all three levels populated. A source with a
//! native depth below three carries *implicit* placeholder records for its
//! missing upper levels so the same code paths apply everywhere:
//!
//! * depth 2 (units within clusters): each cluster sits alone inside an
//!   implicit supercluster with the same identifier;
//! * depth 1 (independent units): each unit sits alone inside an implicit
//!   cluster and supercluster, both named after the unit.
//!
//! Implicit and synthetic records carry `is_pseudo = true`.

mod combine;
mod csv_io;
mod rescale;
mod summary;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};

pub use combine::combine_datasets;
pub use csv_io::{read_csv, read_csv_from, write_csv, write_csv_to};
pub use rescale::rescale_weights;
pub use summary::{summarize, DatasetSummary, WeightRange};

/// Prefix carried by every synthetic identifier.
pub const PSEUDO_PREFIX: &str = "pseudo:";

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub unit_id: String,
    pub cluster_id: String,
    pub supercluster_id: String,
    pub y: f64,
    /// Level-1 covariates.
    pub x_unit: Vec<f64>,
    /// Conditional weight of the unit given its cluster.
    pub w_unit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    pub cluster_id: String,
    pub supercluster_id: String,
    /// Level-2 covariates.
    pub x_cluster: Vec<f64>,
    /// Conditional weight of the cluster given its supercluster.
    pub w_cluster: f64,
    pub is_pseudo: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperclusterRecord {
    pub supercluster_id: String,
    /// Level-3 covariates.
    pub x_super: Vec<f64>,
    pub w_super: f64,
    pub is_pseudo: bool,
}

/// Native hierarchical depth of a source before pseudo-clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Depth {
    One = 1,
    Two = 2,
    Three = 3,
}

impl Depth {
    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Depth {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            1 => Ok(Depth::One),
            2 => Ok(Depth::Two),
            3 => Ok(Depth::Three),
            other => Err(Error::Argument(format!("depth must be 1, 2 or 3, got {other}"))),
        }
    }
}

/// How conditional weights are scaled before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WeightScaling {
    /// Weights used exactly as supplied.
    #[serde(rename = "raw")]
    Raw,
    /// Lower-level weights scaled to sum to the realised size of their parent.
    #[default]
    #[serde(rename = "cluster-size")]
    ClusterSize,
}

impl WeightScaling {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightScaling::Raw => "raw",
            WeightScaling::ClusterSize => "cluster-size",
        }
    }
}

impl std::str::FromStr for WeightScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(WeightScaling::Raw),
            "cluster-size" => Ok(WeightScaling::ClusterSize),
            other => Err(Error::Argument(format!(
                "unknown weight scaling `{other}` (expected `raw` or `cluster-size`)"
            ))),
        }
    }
}

/// Column names of the covariates at each level (`x*`, `z*`, `v*`).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CovariateNames {
    pub unit: Vec<String>,
    pub cluster: Vec<String>,
    pub supercluster: Vec<String>,
}

impl CovariateNames {
    /// Names `x1..xp`, `z1..zq`, `v1..vr`.
    pub fn numbered(p: usize, q: usize, r: usize) -> Self {
        let seq = |prefix: &str, k: usize| (1..=k).map(|i| format!("{prefix}{i}")).collect();
        Self {
            unit: seq("x", p),
            cluster: seq("z", q),
            supercluster: seq("v", r),
        }
    }
}

/// Observations with their cluster and supercluster records.
///
/// Construct through [`HierarchicalDataset::new`], which checks referential
/// integrity, positivity of weights and covariate dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalDataset {
    depth: Depth,
    names: CovariateNames,
    observations: Vec<ObservationRecord>,
    clusters: IndexMap<String, ClusterRecord>,
    superclusters: IndexMap<String, SuperclusterRecord>,
    members: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

fn check_weight(level: &str, id: &str, w: f64) -> Result<()> {
    if w.is_finite() && w > 0.0 {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "{level} `{id}` has non-positive or non-finite weight {w}"
        )))
    }
}

fn check_finite(level: &str, id: &str, what: &str, values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::Data(format!("{level} `{id}` has non-finite {what} {v}"))),
        None => Ok(()),
    }
}

impl HierarchicalDataset {
    pub fn new(
        depth: Depth,
        names: CovariateNames,
        observations: Vec<ObservationRecord>,
        clusters: Vec<ClusterRecord>,
        superclusters: Vec<SuperclusterRecord>,
    ) -> Result<Self> {
        let mut super_map = IndexMap::with_capacity(superclusters.len());
        for s in superclusters {
            if s.supercluster_id.is_empty() {
                return Err(Error::Structural("empty supercluster id".into()));
            }
            check_weight("supercluster", &s.supercluster_id, s.w_super)?;
            check_finite("supercluster", &s.supercluster_id, "covariate", &s.x_super)?;
            if s.x_super.len() != names.supercluster.len() {
                return Err(Error::Structural(format!(
                    "supercluster `{}` has {} covariates, expected {}",
                    s.supercluster_id,
                    s.x_super.len(),
                    names.supercluster.len()
                )));
            }
            let id = s.supercluster_id.clone();
            if super_map.insert(id.clone(), s).is_some() {
                return Err(Error::Structural(format!("duplicate supercluster id `{id}`")));
            }
        }

        let mut cluster_map = IndexMap::with_capacity(clusters.len());
        let mut children = vec![Vec::new(); super_map.len()];
        for c in clusters {
            if c.cluster_id.is_empty() {
                return Err(Error::Structural("empty cluster id".into()));
            }
            check_weight("cluster", &c.cluster_id, c.w_cluster)?;
            check_finite("cluster", &c.cluster_id, "covariate", &c.x_cluster)?;
            if c.x_cluster.len() != names.cluster.len() {
                return Err(Error::Structural(format!(
                    "cluster `{}` has {} covariates, expected {}",
                    c.cluster_id,
                    c.x_cluster.len(),
                    names.cluster.len()
                )));
            }
            let parent = super_map.get_index_of(&c.supercluster_id).ok_or_else(|| {
                Error::Structural(format!(
                    "cluster `{}` references unknown supercluster `{}`",
                    c.cluster_id, c.supercluster_id
                ))
            })?;
            let id = c.cluster_id.clone();
            let (index, previous) = cluster_map.insert_full(id.clone(), c);
            if previous.is_some() {
                return Err(Error::Structural(format!("duplicate cluster id `{id}`")));
            }
            children[parent].push(index);
        }

        let mut members = vec![Vec::new(); cluster_map.len()];
        let mut seen = HashSet::with_capacity(observations.len());
        for (i, o) in observations.iter().enumerate() {
            if o.unit_id.is_empty() {
                return Err(Error::Structural(format!("observation {i} has an empty unit id")));
            }
            if !seen.insert(o.unit_id.as_str()) {
                return Err(Error::Structural(format!("duplicate unit id `{}`", o.unit_id)));
            }
            check_weight("unit", &o.unit_id, o.w_unit)?;
            check_finite("unit", &o.unit_id, "outcome", &[o.y])?;
            check_finite("unit", &o.unit_id, "covariate", &o.x_unit)?;
            if o.x_unit.len() != names.unit.len() {
                return Err(Error::Structural(format!(
                    "unit `{}` has {} covariates, expected {}",
                    o.unit_id,
                    o.x_unit.len(),
                    names.unit.len()
                )));
            }
            let (index, _, cluster) = cluster_map.get_full(&o.cluster_id).ok_or_else(|| {
                Error::Structural(format!(
                    "unit `{}` references unknown cluster `{}`",
                    o.unit_id, o.cluster_id
                ))
            })?;
            if cluster.supercluster_id != o.supercluster_id {
                return Err(Error::Structural(format!(
                    "unit `{}` names supercluster `{}` but its cluster `{}` belongs to `{}`",
                    o.unit_id, o.supercluster_id, o.cluster_id, cluster.supercluster_id
                )));
            }
            members[index].push(i);
        }

        for (c, m) in cluster_map.values().zip(&members) {
            if m.is_empty() {
                return Err(Error::Structural(format!("cluster `{}` has no units", c.cluster_id)));
            }
            if c.is_pseudo && m.len() != 1 {
                return Err(Error::Structural(format!(
                    "pseudo cluster `{}` holds {} units",
                    c.cluster_id,
                    m.len()
                )));
            }
        }
        for (s, ch) in super_map.values().zip(&children) {
            if ch.is_empty() {
                return Err(Error::Structural(format!(
                    "supercluster `{}` has no clusters",
                    s.supercluster_id
                )));
            }
            if s.is_pseudo && ch.len() != 1 {
                return Err(Error::Structural(format!(
                    "pseudo supercluster `{}` holds {} clusters",
                    s.supercluster_id,
                    ch.len()
                )));
            }
        }
        if depth < Depth::Three && super_map.values().any(|s| !s.is_pseudo) {
            return Err(Error::Structural(format!(
                "a depth-{} dataset cannot hold real superclusters",
                depth.as_u8()
            )));
        }
        if depth < Depth::Two && cluster_map.values().any(|c| !c.is_pseudo) {
            return Err(Error::Structural("a depth-1 dataset cannot hold real clusters".into()));
        }

        Ok(Self {
            depth,
            names,
            observations,
            clusters: cluster_map,
            superclusters: super_map,
            members,
            children,
        })
    }

    /// A dataset with no observations.
    pub fn empty(depth: Depth, names: CovariateNames) -> Self {
        Self {
            depth,
            names,
            observations: Vec::new(),
            clusters: IndexMap::new(),
            superclusters: IndexMap::new(),
            members: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn depth(&self) -> Depth {
        self.depth
    }

    pub fn names(&self) -> &CovariateNames {
        &self.names
    }

    pub fn observations(&self) -> &[ObservationRecord] {
        &self.observations
    }

    pub fn clusters(&self) -> impl ExactSizeIterator<Item = &ClusterRecord> {
        self.clusters.values()
    }

    pub fn superclusters(&self) -> impl ExactSizeIterator<Item = &SuperclusterRecord> {
        self.superclusters.values()
    }

    pub fn cluster(&self, id: &str) -> Option<&ClusterRecord> {
        self.clusters.get(id)
    }

    pub fn supercluster(&self, id: &str) -> Option<&SuperclusterRecord> {
        self.superclusters.get(id)
    }

    pub fn cluster_at(&self, index: usize) -> &ClusterRecord {
        &self.clusters[index]
    }

    pub fn supercluster_at(&self, index: usize) -> &SuperclusterRecord {
        &self.superclusters[index]
    }

    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_superclusters(&self) -> usize {
        self.superclusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Observation indices of the cluster at `cluster_index`.
    pub fn cluster_members(&self, cluster_index: usize) -> &[usize] {
        &self.members[cluster_index]
    }

    /// Cluster indices of the supercluster at `super_index`.
    pub fn supercluster_children(&self, super_index: usize) -> &[usize] {
        &self.children[super_index]
    }

    pub fn cluster_index(&self, id: &str) -> Option<usize> {
        self.clusters.get_index_of(id)
    }

    pub fn supercluster_index(&self, id: &str) -> Option<usize> {
        self.superclusters.get_index_of(id)
    }

    /// Decomposes the dataset into its record lists.
    pub fn into_parts(
        self,
    ) -> (
        Depth,
        CovariateNames,
        Vec<ObservationRecord>,
        Vec<ClusterRecord>,
        Vec<SuperclusterRecord>,
    ) {
        (
            self.depth,
            self.names,
            self.observations,
            self.clusters.into_values().collect(),
            self.superclusters.into_values().collect(),
        )
    }

    /// Replaces the three weight levels, keeping the structure.
    pub(crate) fn with_weights(&self, unit: Vec<f64>, cluster: Vec<f64>, supercluster: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        for (o, w) in out.observations.iter_mut().zip(unit) {
            check_weight("unit", &o.unit_id, w)?;
            o.w_unit = w;
        }
        for (c, w) in out.clusters.values_mut().zip(cluster) {
            check_weight("cluster", &c.cluster_id, w)?;
            c.w_cluster = w;
        }
        for (s, w) in out.superclusters.values_mut().zip(supercluster) {
            check_weight("supercluster", &s.supercluster_id, w)?;
            s.w_super = w;
        }
        Ok(out)
    }
}

/// Builds a depth-2 dataset from units and clusters, attaching one implicit
/// supercluster per cluster.
pub fn two_level_dataset(
    names: CovariateNames,
    observations: Vec<ObservationRecord>,
    clusters: Vec<ClusterRecord>,
) -> Result<HierarchicalDataset> {
    if !names.supercluster.is_empty() {
        return Err(Error::Structural(
            "level-3 covariates need an explicit supercluster level".into(),
        ));
    }
    let mut observations = observations;
    let mut clusters = clusters;
    for c in &mut clusters {
        c.supercluster_id = c.cluster_id.clone();
    }
    for o in &mut observations {
        o.supercluster_id = o.cluster_id.clone();
    }
    let supers = clusters
        .iter()
        .map(|c| SuperclusterRecord {
            supercluster_id: c.cluster_id.clone(),
            x_super: Vec::new(),
            w_super: 1.0,
            is_pseudo: true,
        })
        .collect();
    HierarchicalDataset::new(Depth::Two, names, observations, clusters, supers)
}

/// One independent unit of a depth-1 source, with the weights and
/// covariates of its (implicit) upper levels.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentUnit {
    pub unit_id: String,
    pub y: f64,
    pub x_unit: Vec<f64>,
    pub x_cluster: Vec<f64>,
    pub x_super: Vec<f64>,
    pub w_unit: f64,
    pub w_cluster: f64,
    pub w_super: f64,
}

/// Builds a depth-1 dataset in which every unit forms its own implicit
/// cluster and supercluster.
pub fn single_level_dataset(names: CovariateNames, units: Vec<IndependentUnit>) -> Result<HierarchicalDataset> {
    let mut obs = Vec::with_capacity(units.len());
    let mut clusters = Vec::with_capacity(units.len());
    let mut supers = Vec::with_capacity(units.len());
    for u in units {
        supers.push(SuperclusterRecord {
            supercluster_id: u.unit_id.clone(),
            x_super: u.x_super,
            w_super: u.w_super,
            is_pseudo: true,
        });
        clusters.push(ClusterRecord {
            cluster_id: u.unit_id.clone(),
            supercluster_id: u.unit_id.clone(),
            x_cluster: u.x_cluster,
            w_cluster: u.w_cluster,
            is_pseudo: true,
        });
        obs.push(ObservationRecord {
            cluster_id: u.unit_id.clone(),
            supercluster_id: u.unit_id.clone(),
            unit_id: u.unit_id,
            y: u.y,
            x_unit: u.x_unit,
            w_unit: u.w_unit,
        });
    }
    HierarchicalDataset::new(Depth::One, names, obs, clusters, supers)
}
