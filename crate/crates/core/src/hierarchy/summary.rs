use serde::Serialize;

use super::HierarchicalDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightRange {
    pub min: f64,
    pub max: f64,
}

impl WeightRange {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        values.fold(None, |acc, v| match acc {
            None => Some(Self { min: v, max: v }),
            Some(r) => Some(Self {
                min: r.min.min(v),
                max: r.max.max(v),
            }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub depth: u8,
    pub observations: usize,
    pub clusters: usize,
    pub superclusters: usize,
    /// Share of clusters holding exactly one unit.
    pub singleton_cluster_fraction: f64,
    /// Share of top-level sampling groups (real superclusters, otherwise
    /// clusters) that hold exactly one unit.
    pub singleton_group_fraction: f64,
    pub pseudo_clusters: usize,
    pub pseudo_superclusters: usize,
    pub pseudo_cluster_fraction: f64,
    pub pseudo_supercluster_fraction: f64,
    pub w_unit: Option<WeightRange>,
    pub w_cluster: Option<WeightRange>,
    pub w_super: Option<WeightRange>,
}

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

pub fn summarize(data: &HierarchicalDataset) -> DatasetSummary {
    let clusters = data.n_clusters();
    let supers = data.n_superclusters();
    let singleton_clusters = (0..clusters).filter(|&j| data.cluster_members(j).len() == 1).count();
    let pseudo_clusters = data.clusters().filter(|c| c.is_pseudo).count();
    let pseudo_supers = data.superclusters().filter(|s| s.is_pseudo).count();

    // a pseudo supercluster is not a sampling stage, so its single cluster
    // is the top-level group
    let group_sizes = (0..supers).map(|k| {
        data.supercluster_children(k)
            .iter()
            .map(|&j| data.cluster_members(j).len())
            .sum::<usize>()
    });
    let singleton_groups = group_sizes.filter(|&n| n == 1).count();

    DatasetSummary {
        depth: data.depth().as_u8(),
        observations: data.n_observations(),
        clusters,
        superclusters: supers,
        singleton_cluster_fraction: fraction(singleton_clusters, clusters),
        singleton_group_fraction: fraction(singleton_groups, supers),
        pseudo_clusters,
        pseudo_superclusters: pseudo_supers,
        pseudo_cluster_fraction: fraction(pseudo_clusters, clusters),
        pseudo_supercluster_fraction: fraction(pseudo_supers, supers),
        w_unit: WeightRange::of(data.observations().iter().map(|o| o.w_unit)),
        w_cluster: WeightRange::of(data.clusters().map(|c| c.w_cluster)),
        w_super: WeightRange::of(data.superclusters().map(|s| s.w_super)),
    }
}
