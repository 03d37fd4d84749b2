use nalgebra::DMatrix;
use serde::Serialize;

use super::ThreeLevelParams;
use crate::hierarchy::HierarchicalDataset;

/// Native depth of the source a block of units came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SourceKind {
    /// Real clusters within real superclusters.
    #[serde(rename = "V1")]
    DepthThree,
    /// A real cluster whose units sit in one-unit pseudo clusters, or a
    /// native two-level cluster.
    #[serde(rename = "V2")]
    DepthTwo,
    /// Independent units.
    #[serde(rename = "V3")]
    DepthOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBlock {
    pub source: SourceKind,
    pub unit_ids: Vec<String>,
    pub matrix: DMatrix<f64>,
}

/// Block-diagonal Var(y); units in different blocks are uncorrelated.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCovariance {
    pub blocks: Vec<CovarianceBlock>,
}

impl BlockCovariance {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.unit_ids.len()).sum()
    }

    /// Dense matrix with rows ordered block by block.
    pub fn to_dense(&self) -> (Vec<String>, DMatrix<f64>) {
        let n = self.dim();
        let mut ids = Vec::with_capacity(n);
        let mut out = DMatrix::zeros(n, n);
        let mut at = 0;
        for b in &self.blocks {
            let k = b.unit_ids.len();
            out.view_mut((at, at), (k, k)).copy_from(&b.matrix);
            ids.extend(b.unit_ids.iter().cloned());
            at += k;
        }
        (ids, out)
    }
}

/// Covariance of the responses of a (combined) dataset.
///
/// The source of each unit is read off the pseudo flags:
///
/// * units of depth-1 origin share one diagonal block `σ² I`;
/// * units of depth-2 origin form one compound-symmetric block per original
///   cluster, `σ²ₑ I + σ²_c J` with `σ²_c = σ²ᵤ + σ²_τ`;
/// * units of depth-3 origin form one block per supercluster with the
///   nested structure `σ²ₑ I + σ²ᵤ (J within clusters) + σ²_τ J`.
///
/// Every diagonal entry equals `σ²ₑ + σ²ᵤ + σ²_τ`.
pub fn marginal_covariance(data: &HierarchicalDataset, params: &ThreeLevelParams) -> BlockCovariance {
    let (se, su, st) = (params.sigma2_e, params.sigma2_u, params.sigma2_tau);
    let total = params.total_variance();
    let mut blocks = Vec::new();
    let mut independent = Vec::new();
    let ids_of = |members: &[usize]| -> Vec<String> {
        members
            .iter()
            .map(|&i| data.observations()[i].unit_id.clone())
            .collect()
    };

    for k in 0..data.n_superclusters() {
        let sc = data.supercluster_at(k);
        let children = data.supercluster_children(k);
        if sc.is_pseudo {
            for &j in children {
                let members = data.cluster_members(j);
                if data.cluster_at(j).is_pseudo {
                    independent.extend(ids_of(members));
                } else {
                    let n = members.len();
                    let matrix = DMatrix::from_fn(n, n, |a, b| {
                        if a == b {
                            se + params.sigma2_c()
                        } else {
                            params.sigma2_c()
                        }
                    });
                    blocks.push(CovarianceBlock {
                        source: SourceKind::DepthTwo,
                        unit_ids: ids_of(members),
                        matrix,
                    });
                }
            }
        } else if children.iter().all(|&j| data.cluster_at(j).is_pseudo) {
            let members: Vec<usize> = children
                .iter()
                .flat_map(|&j| data.cluster_members(j).iter().copied())
                .collect();
            let n = members.len();
            let matrix = DMatrix::from_fn(n, n, |a, b| {
                if a == b {
                    se + params.sigma2_c()
                } else {
                    params.sigma2_c()
                }
            });
            blocks.push(CovarianceBlock {
                source: SourceKind::DepthTwo,
                unit_ids: ids_of(&members),
                matrix,
            });
        } else {
            let mut members = Vec::new();
            let mut cluster_of = Vec::new();
            for &j in children {
                for &i in data.cluster_members(j) {
                    members.push(i);
                    cluster_of.push(j);
                }
            }
            let n = members.len();
            let matrix = DMatrix::from_fn(n, n, |a, b| {
                let shared = if cluster_of[a] == cluster_of[b] { su } else { 0.0 };
                let diag = if a == b { se } else { 0.0 };
                diag + shared + st
            });
            blocks.push(CovarianceBlock {
                source: SourceKind::DepthThree,
                unit_ids: ids_of(&members),
                matrix,
            });
        }
    }
    if !independent.is_empty() {
        let n = independent.len();
        blocks.push(CovarianceBlock {
            source: SourceKind::DepthOne,
            unit_ids: independent,
            matrix: DMatrix::identity(n, n) * total,
        });
    }
    BlockCovariance { blocks }
}
