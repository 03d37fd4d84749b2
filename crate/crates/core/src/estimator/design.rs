use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hierarchy::HierarchicalDataset;
use crate::lmm::{DesignedCluster, DesignedSupercluster};

/// Fixed-effect columns of a model; an intercept is always included first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModelSpec {
    pub fixed: Vec<String>,
}

impl ModelSpec {
    pub fn new<S: Into<String>>(fixed: impl IntoIterator<Item = S>) -> Self {
        Self {
            fixed: fixed.into_iter().map(Into::into).collect(),
        }
    }

    /// "intercept" followed by the covariate names.
    pub fn coefficient_names(&self) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain(self.fixed.iter().cloned())
            .collect()
    }
}

#[derive(Clone, Copy)]
enum Column {
    Unit(usize),
    Cluster(usize),
    Super(usize),
}

fn resolve(data: &HierarchicalDataset, model: &ModelSpec) -> Result<Vec<Column>> {
    let names = data.names();
    model
        .fixed
        .iter()
        .map(|f| {
            let find = |list: &[String]| list.iter().position(|n| n == f);
            find(&names.unit)
                .map(Column::Unit)
                .or_else(|| find(&names.cluster).map(Column::Cluster))
                .or_else(|| find(&names.supercluster).map(Column::Super))
                .ok_or_else(|| Error::Model(format!("unknown fixed-effect column `{f}`")))
        })
        .collect()
}

struct Rows<'a> {
    data: &'a HierarchicalDataset,
    columns: Vec<Column>,
}

impl Rows<'_> {
    /// Design rows, responses and the given unit weights of `members`.
    fn cluster(&self, members: &[(usize, f64)], w_cluster: f64) -> Result<DesignedCluster> {
        let p = self.columns.len() + 1;
        let obs = self.data.observations();
        let x = DMatrix::from_fn(members.len(), p, |r, q| {
            if q == 0 {
                return 1.0;
            }
            let o = &obs[members[r].0];
            match self.columns[q - 1] {
                Column::Unit(i) => o.x_unit[i],
                Column::Cluster(i) => self.data.cluster(&o.cluster_id).expect("valid").x_cluster[i],
                Column::Super(i) => self.data.supercluster(&o.supercluster_id).expect("valid").x_super[i],
            }
        });
        let y = members.iter().map(|&(i, _)| obs[i].y).collect();
        let w = members.iter().map(|&(_, w)| w).collect();
        DesignedCluster::new(y, x, w, w_cluster)
    }
}

fn check_nonempty(data: &HierarchicalDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Structural("dataset has no observations".into()));
    }
    Ok(())
}

/// Clusters for a two-level model.
///
/// Each unit is grouped by its lowest real level: a real cluster is a
/// group; units in pseudo clusters under a real supercluster share that
/// supercluster as their group; a unit in a pseudo cluster under a pseudo
/// supercluster is a group on its own. The group weight is the product of
/// the weights above the group, the unit weight the product of the weights
/// from the unit up to the group.
pub fn design_two_level(data: &HierarchicalDataset, model: &ModelSpec) -> Result<Vec<DesignedCluster>> {
    check_nonempty(data)?;
    let rows = Rows {
        data,
        columns: resolve(data, model)?,
    };
    let obs = data.observations();
    let mut out = Vec::new();
    for k in 0..data.n_superclusters() {
        let sc = data.supercluster_at(k);
        let mut pooled = Vec::new();
        for &j in data.supercluster_children(k) {
            let c = data.cluster_at(j);
            let members = data.cluster_members(j);
            if c.is_pseudo && !sc.is_pseudo {
                pooled.extend(members.iter().map(|&i| (i, c.w_cluster * obs[i].w_unit)));
            } else {
                let m: Vec<_> = members.iter().map(|&i| (i, obs[i].w_unit)).collect();
                out.push(rows.cluster(&m, sc.w_super * c.w_cluster)?);
            }
        }
        if !pooled.is_empty() {
            out.push(rows.cluster(&pooled, sc.w_super)?);
        }
    }
    Ok(out)
}

/// Superclusters for a three-level model, keeping every weight at its level.
pub fn design_three_level(data: &HierarchicalDataset, model: &ModelSpec) -> Result<Vec<DesignedSupercluster>> {
    check_nonempty(data)?;
    let rows = Rows {
        data,
        columns: resolve(data, model)?,
    };
    let obs = data.observations();
    (0..data.n_superclusters())
        .map(|k| {
            let clusters = data
                .supercluster_children(k)
                .iter()
                .map(|&j| {
                    let m: Vec<_> = data.cluster_members(j).iter().map(|&i| (i, obs[i].w_unit)).collect();
                    rows.cluster(&m, data.cluster_at(j).w_cluster)
                })
                .collect::<Result<Vec<_>>>()?;
            DesignedSupercluster::new(clusters, data.supercluster_at(k).w_super)
        })
        .collect()
}
