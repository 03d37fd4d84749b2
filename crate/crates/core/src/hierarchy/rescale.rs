use super::{HierarchicalDataset, WeightScaling};
use crate::error::Result;

/// Scales `weights` in place to sum to their count unless they already do.
///
/// Leaving already-scaled groups untouched makes a second pass an exact
/// identity instead of a rounding-level perturbation.
fn scale_group(weights: &mut [f64]) {
    let n = weights.len() as f64;
    let sum: f64 = weights.iter().sum();
    if (sum - n).abs() <= 1e-13 * n {
        return;
    }
    let factor = n / sum;
    for w in weights {
        *w *= factor;
    }
}

/// Rescales conditional weights (Pfeffermann's second method).
///
/// With [`WeightScaling::ClusterSize`], unit weights are scaled to sum to the
/// realised size of each real cluster, and cluster weights to the realised
/// number of clusters in each real supercluster. Weights whose parent is
/// a pseudo record are left as they are: such a parent has a single child,
/// so the child's weight is effectively the design weight of the level
/// above. Supercluster weights are never changed.
pub fn rescale_weights(data: &HierarchicalDataset, mode: WeightScaling) -> Result<HierarchicalDataset> {
    if mode == WeightScaling::Raw {
        return Ok(data.clone());
    }
    let mut unit: Vec<f64> = data.observations().iter().map(|o| o.w_unit).collect();
    let mut cluster: Vec<f64> = data.clusters().map(|c| c.w_cluster).collect();
    let supers: Vec<f64> = data.superclusters().map(|s| s.w_super).collect();

    let mut buf = Vec::new();
    for (ci, c) in data.clusters().enumerate() {
        if c.is_pseudo {
            continue;
        }
        let members = data.cluster_members(ci);
        buf.clear();
        buf.extend(members.iter().map(|&i| unit[i]));
        scale_group(&mut buf);
        for (&i, &w) in members.iter().zip(&buf) {
            unit[i] = w;
        }
    }
    for (si, s) in data.superclusters().enumerate() {
        if s.is_pseudo {
            continue;
        }
        let children = data.supercluster_children(si);
        buf.clear();
        buf.extend(children.iter().map(|&j| cluster[j]));
        scale_group(&mut buf);
        for (&j, &w) in children.iter().zip(&buf) {
            cluster[j] = w;
        }
    }
    data.with_weights(unit, cluster, supers)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::*;
    use super::*;

    #[test]
    fn hand_example() {
        let mut w = [2.0, 2.0, 4.0];
        scale_group(&mut w);
        assert_eq!(w, [0.75, 0.75, 1.5]);
        let mut w = [7.0];
        scale_group(&mut w);
        assert_eq!(w, [1.0]);
    }

    #[test]
    fn sums_match_sizes_and_idempotent() {
        let d = three_level("a", &[&[3, 1, 4], &[2, 2]]);
        let r = rescale_weights(&d, WeightScaling::ClusterSize).unwrap();
        for ci in 0..r.n_clusters() {
            let m = r.cluster_members(ci);
            let s: f64 = m.iter().map(|&i| r.observations()[i].w_unit).sum();
            assert!((s - m.len() as f64).abs() <= 1e-10 * m.len() as f64);
        }
        for si in 0..r.n_superclusters() {
            let ch = r.supercluster_children(si);
            let s: f64 = ch.iter().map(|&j| r.cluster_at(j).w_cluster).sum();
            assert!((s - ch.len() as f64).abs() <= 1e-10 * ch.len() as f64);
            assert_eq!(r.supercluster_at(si).w_super, d.supercluster_at(si).w_super);
        }
        let again = rescale_weights(&r, WeightScaling::ClusterSize).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn raw_is_identity_and_pseudo_parents_skipped() {
        let d = one_level("s", 3, 4.0);
        assert_eq!(rescale_weights(&d, WeightScaling::Raw).unwrap(), d);
        let r = rescale_weights(&d, WeightScaling::ClusterSize).unwrap();
        assert!(r.clusters().all(|c| c.w_cluster == 4.0));

        let d = two_level("b", &[3, 2]);
        let r = rescale_weights(&d, WeightScaling::ClusterSize).unwrap();
        assert!(r.clusters().all(|c| c.w_cluster == 3.0));
    }
}
