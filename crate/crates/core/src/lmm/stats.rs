//! Flattened model data and the per-group likelihood kernel shared by the
//! public evaluators and the estimator.

use nalgebra::{DMatrix, DVector};

use super::{DesignedCluster, DesignedSupercluster};
use crate::error::{Error, Result};
use crate::par;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Groups smaller than this are evaluated sequentially.
const PARALLEL_MIN_GROUPS: usize = 256;

#[derive(Debug, Clone)]
pub(crate) struct ClusterInfo {
    start: usize,
    len: usize,
    /// ω: the cluster's weight inside its group.
    weight: f64,
    /// A = Σw.
    a: f64,
    /// Σw x.
    sx: Vec<f64>,
    /// Σw x x'.
    m: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct GroupInfo {
    /// Ω: weight of the whole group.
    weight: f64,
    first: usize,
    count: usize,
}

/// Model data laid out for repeated likelihood evaluation.
///
/// A group is the top-level independent unit: a supercluster for the
/// three-level model, a single cluster for the two-level model.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    p: usize,
    y: Vec<f64>,
    /// Row-major n × p design.
    x: Vec<f64>,
    w: Vec<f64>,
    clusters: Vec<ClusterInfo>,
    groups: Vec<GroupInfo>,
}

/// What an evaluation should produce besides value and gradient.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Need {
    pub hessian: bool,
    pub group_scores: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub grad_beta: DVector<f64>,
    /// Derivatives with respect to (σ²ₑ, σ²ᵤ, σ²_τ).
    pub grad_var: [f64; 3],
    /// ∂²ℓ/∂β∂β', which does not depend on β.
    pub hess_beta: Option<DMatrix<f64>>,
    /// Each group's contribution to the β-score.
    pub group_scores: Option<Vec<DVector<f64>>>,
}

struct GroupEval {
    loglik: f64,
    grad_beta: Vec<f64>,
    grad_var: [f64; 3],
    hess_beta: Option<DMatrix<f64>>,
}

impl Prepared {
    fn push_cluster(&mut self, c: &DesignedCluster, weight: f64, weighted: bool) {
        let p = self.p;
        let start = self.y.len();
        let mut a = 0.0;
        let mut sx = vec![0.0; p];
        let mut m = DMatrix::zeros(p, p);
        for i in 0..c.len() {
            let w = if weighted { c.w()[i] } else { 1.0 };
            self.y.push(c.y()[i]);
            self.w.push(w);
            a += w;
            for q in 0..p {
                let xq = c.x()[(i, q)];
                self.x.push(xq);
                sx[q] += w * xq;
                for r in 0..=q {
                    m[(q, r)] += w * xq * c.x()[(i, r)];
                }
            }
        }
        for q in 0..p {
            for r in 0..q {
                m[(r, q)] = m[(q, r)];
            }
        }
        self.clusters.push(ClusterInfo {
            start,
            len: c.len(),
            weight,
            a,
            sx,
            m,
        });
    }

    fn empty(p: usize) -> Self {
        Self {
            p,
            y: Vec::new(),
            x: Vec::new(),
            w: Vec::new(),
            clusters: Vec::new(),
            groups: Vec::new(),
        }
    }

    /// One group per cluster, weighted by the cluster weight.
    pub fn from_clusters(data: &[DesignedCluster], weighted: bool) -> Result<Self> {
        let p = data
            .first()
            .map(DesignedCluster::n_fixed)
            .ok_or_else(|| Error::Structural("no clusters to evaluate".into()))?;
        let mut out = Self::empty(p);
        for (j, c) in data.iter().enumerate() {
            if c.n_fixed() != p {
                return Err(Error::Structural(format!(
                    "cluster {j} has {} fixed effects, expected {p}",
                    c.n_fixed()
                )));
            }
            out.groups.push(GroupInfo {
                weight: if weighted { c.w_cluster() } else { 1.0 },
                first: out.clusters.len(),
                count: 1,
            });
            out.push_cluster(c, 1.0, weighted);
        }
        Ok(out)
    }

    pub fn from_superclusters(data: &[DesignedSupercluster], weighted: bool) -> Result<Self> {
        let p = data
            .first()
            .map(|s| s.clusters()[0].n_fixed())
            .ok_or_else(|| Error::Structural("no superclusters to evaluate".into()))?;
        let mut out = Self::empty(p);
        for (k, s) in data.iter().enumerate() {
            if s.clusters()[0].n_fixed() != p {
                return Err(Error::Structural(format!(
                    "supercluster {k} has {} fixed effects, expected {p}",
                    s.clusters()[0].n_fixed()
                )));
            }
            out.groups.push(GroupInfo {
                weight: if weighted { s.w_super() } else { 1.0 },
                first: out.clusters.len(),
                count: s.clusters().len(),
            });
            for c in s.clusters() {
                let w = if weighted { c.w_cluster() } else { 1.0 };
                out.push_cluster(c, w, weighted);
            }
        }
        Ok(out)
    }

    pub fn n_fixed(&self) -> usize {
        self.p
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn all_clusters_singleton(&self) -> bool {
        self.clusters.iter().all(|c| c.len == 1)
    }

    pub fn all_groups_single_cluster(&self) -> bool {
        self.groups.iter().all(|g| g.count == 1)
    }

    fn total_weight(&self, g: &GroupInfo, c: &ClusterInfo) -> f64 {
        g.weight * c.weight
    }

    /// Weighted least squares over all units with the full product weights;
    /// also returns the weighted mean squared residual.
    pub fn least_squares(&self) -> Result<(DVector<f64>, f64)> {
        let p = self.p;
        let mut xtx = DMatrix::zeros(p, p);
        let mut xty = DVector::zeros(p);
        for g in &self.groups {
            for c in &self.clusters[g.first..g.first + g.count] {
                let tw = self.total_weight(g, c);
                xtx += &c.m * tw;
                for i in c.start..c.start + c.len {
                    let wy = tw * self.w[i] * self.y[i];
                    for q in 0..p {
                        xty[q] += wy * self.x[i * p + q];
                    }
                }
            }
        }
        let beta = solve_spd(&xtx)
            .map(|inv| inv * &xty)
            .ok_or_else(|| Error::Model("fixed-effect design is rank deficient".into()))?;
        let mut rss = 0.0;
        let mut wsum = 0.0;
        for g in &self.groups {
            for c in &self.clusters[g.first..g.first + g.count] {
                let tw = self.total_weight(g, c);
                for i in c.start..c.start + c.len {
                    let r = self.y[i] - self.fitted(i, beta.as_slice());
                    rss += tw * self.w[i] * r * r;
                    wsum += tw * self.w[i];
                }
            }
        }
        Ok((beta, rss / wsum))
    }

    fn fitted(&self, i: usize, beta: &[f64]) -> f64 {
        let row = &self.x[i * self.p..(i + 1) * self.p];
        row.iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    /// Moment-type starting values `[σ²ₑ, σ²ᵤ, σ²_τ]` at `beta`, not yet
    /// floored: pooled within-cluster residual variance, spread of cluster
    /// mean residuals within groups and spread of group mean residuals,
    /// each corrected for the variance of the lower levels.
    pub fn moment_starts(&self, beta: &[f64]) -> [f64; 3] {
        let mut within = (0.0, 0.0);
        let mut spread_c = (0.0, 0.0);
        let mut inv_n = (0.0, 0.0);
        let mut spread_g = (0.0, 0.0);
        let mut inv_m = 0.0;
        let mut inv_ng = 0.0;
        let mut means = Vec::new();
        for g in &self.groups {
            means.clear();
            let (mut g_sum, mut g_w, mut g_n) = (0.0, 0.0, 0usize);
            for c in &self.clusters[g.first..g.first + g.count] {
                let tw = self.total_weight(g, c);
                let (mut b, mut cc) = (0.0, 0.0);
                for i in c.start..c.start + c.len {
                    let r = self.y[i] - self.fitted(i, beta);
                    b += self.w[i] * r;
                    cc += self.w[i] * r * r;
                }
                let mean = b / c.a;
                if c.len > 1 {
                    within.0 += tw * (cc - b * mean);
                    within.1 += tw * c.a * (c.len - 1) as f64 / c.len as f64;
                }
                means.push((c.weight, c.len, mean));
                g_sum += c.weight * mean;
                g_w += c.weight;
                g_n += c.len;
            }
            let g_mean = g_sum / g_w;
            if g.count > 1 {
                for &(w, n, mean) in &means {
                    spread_c.0 += g.weight * w * (mean - g_mean).powi(2);
                    spread_c.1 += g.weight * w;
                    inv_n.0 += g.weight * w / n as f64;
                    inv_n.1 += g.weight * w;
                }
            }
            spread_g.0 += g.weight * g_mean * g_mean;
            spread_g.1 += g.weight;
            inv_m += g.weight / g.count as f64;
            inv_ng += g.weight / g_n as f64;
        }
        let ratio = |(a, b): (f64, f64)| if b > 0.0 { a / b } else { 0.0 };
        let e = ratio(within);
        let between_groups = ratio(spread_g);
        let inv_m = inv_m / spread_g.1;
        let inv_ng = inv_ng / spread_g.1;
        if spread_c.1 > 0.0 {
            let u = ratio(spread_c) - e * ratio(inv_n);
            let t = between_groups - u * inv_m - e * inv_ng;
            [e, u, t]
        } else {
            [e, between_groups - e * inv_ng, 0.0]
        }
    }

    pub fn evaluate(&self, beta: &[f64], var: [f64; 3], need: Need) -> Result<Evaluation> {
        let evals = par::map_if_large(&self.groups, PARALLEL_MIN_GROUPS, |g| {
            self.eval_group(g, beta, var, need.hessian)
        });
        let p = self.p;
        let mut out = Evaluation {
            loglik: 0.0,
            grad_beta: DVector::zeros(p),
            grad_var: [0.0; 3],
            hess_beta: need.hessian.then(|| DMatrix::zeros(p, p)),
            group_scores: need.group_scores.then(|| Vec::with_capacity(self.groups.len())),
        };
        for e in evals {
            let e = e?;
            out.loglik += e.loglik;
            for q in 0..p {
                out.grad_beta[q] += e.grad_beta[q];
            }
            for (acc, v) in out.grad_var.iter_mut().zip(e.grad_var) {
                *acc += v;
            }
            if let (Some(h), Some(eh)) = (out.hess_beta.as_mut(), e.hess_beta.as_ref()) {
                *h += eh;
            }
            if let Some(s) = out.group_scores.as_mut() {
                s.push(DVector::from_vec(e.grad_beta));
            }
        }
        Ok(out)
    }

    fn eval_group(&self, g: &GroupInfo, beta: &[f64], var: [f64; 3], hessian: bool) -> Result<GroupEval> {
        let p = self.p;
        let [se, su, st] = var;
        let ln_se = (LN_2PI + se.ln()) * 0.5;

        let mut k = 0.0;
        let mut dk_beta = vec![0.0; p];
        let (mut dk_e, mut dk_u) = (0.0, 0.0);
        let (mut alpha, mut bt) = (0.0, 0.0);
        let mut cvec = vec![0.0; p];
        let (mut dalpha_e, mut dalpha_u, mut dbt_e, mut dbt_u) = (0.0, 0.0, 0.0, 0.0);
        let mut hsum = hessian.then(|| DMatrix::zeros(p, p));
        let mut gvec = vec![0.0; p];

        for (ci, c) in self.clusters[g.first..g.first + g.count].iter().enumerate() {
            let om = c.weight;
            let (mut b, mut cc) = (0.0, 0.0);
            gvec.fill(0.0);
            for i in c.start..c.start + c.len {
                let row = &self.x[i * p..(i + 1) * p];
                let r = self.y[i] - row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
                let wr = self.w[i] * r;
                b += wr;
                cc += wr * r;
                for (gq, xq) in gvec.iter_mut().zip(row) {
                    *gq += wr * xq;
                }
            }
            let a = c.a;
            let d = se + a * su;
            let l0 = -a * ln_se - 0.5 * (a * su / se).ln_1p() - cc / (2.0 * se) + su * b * b / (2.0 * se * d);
            if !l0.is_finite() {
                return Err(Error::Numeric {
                    cluster: g.first + ci,
                    message: format!("non-finite log-likelihood contribution {l0}"),
                });
            }
            let shrink = su * b / (se * d);
            for q in 0..p {
                dk_beta[q] += om * (gvec[q] / se - shrink * c.sx[q]);
                cvec[q] += om * c.sx[q] / d;
            }
            let de = -a / (2.0 * se) - 1.0 / (2.0 * d) + 1.0 / (2.0 * se) + cc / (2.0 * se * se)
                - su * b * b * (d + se) / (2.0 * se * se * d * d);
            let du = -a / (2.0 * d) + b * b / (2.0 * d * d);
            k += om * l0;
            dk_e += om * de;
            dk_u += om * du;
            alpha += om * a / d;
            bt += om * b / d;
            let d2 = d * d;
            dalpha_e -= om * a / d2;
            dalpha_u -= om * a * a / d2;
            dbt_e -= om * b / d2;
            dbt_u -= om * a * b / d2;
            if let Some(h) = hsum.as_mut() {
                let s = su / (se * d);
                for q in 0..p {
                    for r in 0..p {
                        h[(q, r)] += om * (s * c.sx[q] * c.sx[r] - c.m[(q, r)] / se);
                    }
                }
            }
        }

        let omega = g.weight;
        let e = 1.0 + st * alpha;
        let loglik = omega * (k - 0.5 * (st * alpha).ln_1p() + st * bt * bt / (2.0 * e));
        let coef_alpha = -(st / (2.0 * e) + st * st * bt * bt / (2.0 * e * e));
        let coef_bt = st * bt / e;
        let grad_beta = (0..p).map(|q| omega * (dk_beta[q] - coef_bt * cvec[q])).collect();
        let grad_var = [
            omega * (dk_e + coef_alpha * dalpha_e + coef_bt * dbt_e),
            omega * (dk_u + coef_alpha * dalpha_u + coef_bt * dbt_u),
            omega * (-alpha / (2.0 * e) + bt * bt / (2.0 * e * e)),
        ];
        let hess_beta = hsum.map(|mut h| {
            let s = st / e;
            for q in 0..p {
                for r in 0..p {
                    h[(q, r)] = omega * (h[(q, r)] + s * cvec[q] * cvec[r]);
                }
            }
            h
        });
        if !loglik.is_finite() || grad_var.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                cluster: g.first,
                message: "non-finite group contribution".into(),
            });
        }
        Ok(GroupEval {
            loglik,
            grad_beta,
            grad_var,
            hess_beta,
        })
    }
}

/// Inverse of a symmetric positive definite matrix, `None` when singular.
pub(crate) fn solve_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let scale = m.diagonal().amax();
    if !(scale > 0.0) {
        return None;
    }
    let chol = m.clone().cholesky()?;
    let inv = chol.inverse();
    // guard against numerically singular designs that still factorize
    let l = chol.l();
    let diag = l.diagonal();
    let ratio = diag.amin() / diag.amax();
    (ratio > 1e-7).then_some(inv)
}
