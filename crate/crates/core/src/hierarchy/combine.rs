use std::collections::HashMap;

use super::{ClusterRecord, Depth, HierarchicalDataset, ObservationRecord, SuperclusterRecord, PSEUDO_PREFIX};
use crate::error::{Error, Result};

struct Builder {
    observations: Vec<ObservationRecord>,
    clusters: Vec<ClusterRecord>,
    superclusters: Vec<SuperclusterRecord>,
}

impl Builder {
    fn super_record(&mut self, id: String, from: &SuperclusterRecord, w_super: f64, is_pseudo: bool) {
        self.superclusters.push(SuperclusterRecord {
            supercluster_id: id,
            x_super: from.x_super.clone(),
            w_super,
            is_pseudo,
        });
    }

    fn cluster_record(&mut self, id: String, parent: &str, x: &[f64], w_cluster: f64, is_pseudo: bool) {
        self.clusters.push(ClusterRecord {
            cluster_id: id,
            supercluster_id: parent.to_string(),
            x_cluster: x.to_vec(),
            w_cluster,
            is_pseudo,
        });
    }

    fn unit(&mut self, o: &ObservationRecord, cluster: &str, parent: &str, w_unit: f64) {
        self.observations.push(ObservationRecord {
            unit_id: o.unit_id.clone(),
            cluster_id: cluster.to_string(),
            supercluster_id: parent.to_string(),
            y: o.y,
            x_unit: o.x_unit.clone(),
            w_unit,
        });
    }
}

/// Merges sources of any depth into one depth-3 dataset.
///
/// Real identifiers are namespaced as `<source>:<id>`; synthetic ones are
/// `pseudo:<source>:<counter>`. Unit identifiers are kept verbatim and must
/// be unique across sources.
///
/// * Depth-3 sources are copied unchanged apart from namespacing.
/// * In a depth-2 source every cluster becomes a real supercluster (weight
///   and covariates carried over) and every unit gets its own pseudo
///   cluster. The unit's weight moves onto that pseudo cluster.
/// * In a depth-1 source every unit gets a pseudo cluster and a pseudo
///   supercluster. The pseudo cluster carries the product of the unit's
///   cluster and unit weights.
///
/// Moving unit weights onto single-unit pseudo clusters keeps the design
/// information intact under cluster-size rescaling, which resets every
/// weight inside a one-unit cluster to 1.
pub fn combine_datasets(sources: &[HierarchicalDataset]) -> Result<HierarchicalDataset> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Argument("combine needs at least one source".into()))?;
    let names = first.names().clone();
    for (s, d) in sources.iter().enumerate() {
        if d.names() != &names {
            return Err(Error::Structural(format!(
                "source {s} has covariates {:?}/{:?}/{:?}, expected {:?}/{:?}/{:?}",
                d.names().unit,
                d.names().cluster,
                d.names().supercluster,
                names.unit,
                names.cluster,
                names.supercluster
            )));
        }
    }

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (s, d) in sources.iter().enumerate() {
        for o in d.observations() {
            if let Some(prev) = seen.insert(o.unit_id.as_str(), s) {
                return Err(Error::Structural(format!(
                    "duplicate unit id `{}` in sources {prev} and {s}",
                    o.unit_id
                )));
            }
        }
    }

    let total = sources.iter().map(|d| d.n_observations()).sum();
    let mut b = Builder {
        observations: Vec::with_capacity(total),
        clusters: Vec::new(),
        superclusters: Vec::new(),
    };
    for (s, d) in sources.iter().enumerate() {
        match d.depth() {
            Depth::Three => add_three_level(&mut b, s, d),
            Depth::Two => add_two_level(&mut b, s, d),
            Depth::One => add_single_level(&mut b, s, d),
        }
    }
    HierarchicalDataset::new(Depth::Three, names, b.observations, b.clusters, b.superclusters)
}

fn real_id(source: usize, id: &str) -> String {
    format!("{source}:{id}")
}

fn pseudo_id(source: usize, counter: &mut usize) -> String {
    let id = format!("{PSEUDO_PREFIX}{source}:{counter}");
    *counter += 1;
    id
}

fn add_three_level(b: &mut Builder, s: usize, d: &HierarchicalDataset) {
    let rename = |id: &str, pseudo: bool| {
        if pseudo && id.starts_with(PSEUDO_PREFIX) {
            format!("{PSEUDO_PREFIX}{s}:{}", &id[PSEUDO_PREFIX.len()..])
        } else {
            real_id(s, id)
        }
    };
    for sc in d.superclusters() {
        let id = rename(&sc.supercluster_id, sc.is_pseudo);
        b.super_record(id, sc, sc.w_super, sc.is_pseudo);
    }
    let mut cluster_names = HashMap::with_capacity(d.n_clusters());
    for c in d.clusters() {
        let parent = d.supercluster(&c.supercluster_id).expect("validated");
        let id = rename(&c.cluster_id, c.is_pseudo);
        let parent_id = rename(&parent.supercluster_id, parent.is_pseudo);
        b.cluster_record(id.clone(), &parent_id, &c.x_cluster, c.w_cluster, c.is_pseudo);
        cluster_names.insert(c.cluster_id.as_str(), (id, parent_id));
    }
    for o in d.observations() {
        let (cluster, parent) = &cluster_names[o.cluster_id.as_str()];
        b.unit(o, cluster, parent, o.w_unit);
    }
}

fn add_two_level(b: &mut Builder, s: usize, d: &HierarchicalDataset) {
    let mut counter = 0;
    for (ci, c) in d.clusters().enumerate() {
        let implicit = d.supercluster(&c.supercluster_id).expect("validated");
        let super_id = real_id(s, &c.cluster_id);
        b.super_record(super_id.clone(), implicit, c.w_cluster * implicit.w_super, false);
        for &oi in d.cluster_members(ci) {
            let o = &d.observations()[oi];
            let cid = pseudo_id(s, &mut counter);
            b.cluster_record(cid.clone(), &super_id, &c.x_cluster, o.w_unit, true);
            b.unit(o, &cid, &super_id, 1.0);
        }
    }
}

fn add_single_level(b: &mut Builder, s: usize, d: &HierarchicalDataset) {
    let mut counter = 0;
    for (ci, c) in d.clusters().enumerate() {
        let implicit = d.supercluster(&c.supercluster_id).expect("validated");
        for &oi in d.cluster_members(ci) {
            let o = &d.observations()[oi];
            let sid = pseudo_id(s, &mut counter);
            let cid = pseudo_id(s, &mut counter);
            b.super_record(sid.clone(), implicit, implicit.w_super, true);
            b.cluster_record(cid.clone(), &sid, &c.x_cluster, c.w_cluster * o.w_unit, true);
            b.unit(o, &cid, &sid, 1.0);
        }
    }
}
