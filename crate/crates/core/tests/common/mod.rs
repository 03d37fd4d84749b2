#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pseudoclust::hierarchy::{
    single_level_dataset, two_level_dataset, ClusterRecord, CovariateNames, Depth, HierarchicalDataset,
    IndependentUnit, ObservationRecord, SuperclusterRecord,
};
use pseudoclust::lmm::{DesignedCluster, DesignedSupercluster, ThreeLevelParams, TwoLevelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Nelder–Mead maximization with restarts until the best point stops moving.
pub fn nelder_mead_max(f: &dyn Fn(&[f64]) -> f64, start: &[f64], step: f64) -> Vec<f64> {
    let mut best = start.to_vec();
    let mut best_val = f(&best);
    for _ in 0..30 {
        let x = simplex_run(f, &best, step);
        let v = f(&x);
        let moved = x.iter().zip(&best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if v >= best_val {
            best = x;
            best_val = v;
        }
        if moved < 1e-10 {
            break;
        }
    }
    best
}

fn simplex_run(f: &dyn Fn(&[f64]) -> f64, start: &[f64], step: f64) -> Vec<f64> {
    let n = start.len();
    let mut pts: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| -f(p)).collect();
    for _ in 0..20000 {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let spread = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread < 1e-11 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (pts[n][j] - centroid[j])).collect() };
        let r = along(-1.0);
        let fr = -f(&r);
        if fr < vals[0] {
            let e = along(-2.0);
            let fe = -f(&e);
            if fe < fr {
                pts[n] = e;
                vals[n] = fe;
            } else {
                pts[n] = r;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = r;
            vals[n] = fr;
        } else {
            let c = if fr < vals[n] { along(-0.5) } else { along(0.5) };
            let fc = -f(&c);
            if fc < vals[n].min(fr) {
                pts[n] = c;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    pts[i] = (0..n).map(|j| pts[0][j] + 0.5 * (pts[i][j] - pts[0][j])).collect();
                    vals[i] = -f(&pts[i]);
                }
            }
        }
    }
    pts[0].clone()
}

/// Clusters drawn from a random-intercept model with one covariate.
pub fn simulate_clusters(
    seed: u64,
    m: usize,
    n: std::ops::RangeInclusive<usize>,
    su: f64,
    weighted: bool,
) -> Vec<DesignedCluster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    (0..m)
        .map(|_| {
            let size = rng.random_range(n.clone());
            let u = su.sqrt() * std.sample(&mut rng);
            let x = DMatrix::from_fn(size, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..2.0) });
            let y = (0..size)
                .map(|i| 1.0 + 0.5 * x[(i, 1)] + u + std.sample(&mut rng))
                .collect();
            let w = (0..size)
                .map(|_| if weighted { rng.random_range(0.5..3.0) } else { 1.0 })
                .collect();
            let wc = if weighted { rng.random_range(1.0..4.0) } else { 1.0 };
            DesignedCluster::new(y, x, w, wc).unwrap()
        })
        .collect()
}

pub fn simulate_superclusters(
    seed: u64,
    l: usize,
    m: std::ops::RangeInclusive<usize>,
    n: std::ops::RangeInclusive<usize>,
    weighted: bool,
) -> Vec<DesignedSupercluster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    (0..l)
        .map(|_| {
            let tau = 0.8 * std.sample(&mut rng);
            let mk = rng.random_range(m.clone());
            let clusters = (0..mk)
                .map(|_| {
                    let size = rng.random_range(n.clone());
                    let u = 0.7 * std.sample(&mut rng);
                    let x = DMatrix::from_fn(size, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..2.0) });
                    let y = (0..size)
                        .map(|i| 0.5 - x[(i, 1)] + tau + u + std.sample(&mut rng))
                        .collect();
                    let w = (0..size)
                        .map(|_| if weighted { rng.random_range(0.5..3.0) } else { 1.0 })
                        .collect();
                    DesignedCluster::new(y, x, w, if weighted { rng.random_range(0.5..2.0) } else { 1.0 }).unwrap()
                })
                .collect();
            DesignedSupercluster::new(clusters, if weighted { rng.random_range(1.0..3.0) } else { 1.0 }).unwrap()
        })
        .collect()
}

/// Profile log-likelihood of β under a dense nested covariance, by GLS.
pub fn dense_profile(data: &[DesignedSupercluster], se: f64, su: f64, st: f64) -> (f64, DVector<f64>) {
    let p = data[0].clusters()[0].n_fixed();
    let mut blocks = Vec::new();
    let mut xtvx = DMatrix::zeros(p, p);
    let mut xtvy = DVector::zeros(p);
    for s in data {
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        let mut owner = Vec::new();
        for (j, c) in s.clusters().iter().enumerate() {
            for i in 0..c.len() {
                rows.push(c.x().row(i).into_owned());
                ys.push(c.y()[i]);
                owner.push(j);
            }
        }
        let n = ys.len();
        let v = DMatrix::from_fn(n, n, |a, b| {
            (if a == b { se } else { 0.0 }) + (if owner[a] == owner[b] { su } else { 0.0 }) + st
        });
        let x = DMatrix::from_rows(&rows);
        let y = DVector::from_vec(ys);
        let chol = v.cholesky().unwrap();
        xtvx += x.transpose() * chol.solve(&x);
        xtvy += x.transpose() * chol.solve(&y);
        blocks.push((x, y, chol));
    }
    let beta = xtvx.cholesky().unwrap().solve(&xtvy);
    let mut ll = 0.0;
    for (x, y, chol) in &blocks {
        let r = y - x * &beta;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        ll += -0.5 * (r.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + r.dot(&chol.solve(&r)));
    }
    (ll, beta)
}

fn random_cluster(rng: &mut ChaCha8Rng, p: usize, max_n: usize) -> DesignedCluster {
    let n = rng.random_range(1..=max_n);
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.5..1.5) });
    let y = (0..n).map(|_| rng.random_range(-2.0..3.0)).collect();
    let w = (0..n).map(|_| rng.random_range(0.3..4.0)).collect();
    DesignedCluster::new(y, x, w, rng.random_range(0.5..5.0)).unwrap()
}

pub fn random_two_level(rng: &mut ChaCha8Rng) -> (Vec<DesignedCluster>, TwoLevelParams) {
    let p = rng.random_range(1..=3);
    let data = (0..3).map(|_| random_cluster(rng, p, 4)).collect();
    let params = TwoLevelParams {
        beta: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
        sigma2_e: rng.random_range(0.2..2.0),
        sigma2_u: rng.random_range(0.05..2.0),
    };
    (data, params)
}

pub fn random_three_level(rng: &mut ChaCha8Rng) -> (Vec<DesignedSupercluster>, ThreeLevelParams) {
    let p = rng.random_range(1..=2);
    let data = (0..2)
        .map(|_| {
            let m = rng.random_range(1..=2);
            let clusters = (0..m).map(|_| random_cluster(rng, p, 3)).collect();
            DesignedSupercluster::new(clusters, rng.random_range(0.5..3.0)).unwrap()
        })
        .collect();
    let params = ThreeLevelParams {
        beta: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
        sigma2_e: rng.random_range(0.2..2.0),
        sigma2_u: rng.random_range(0.05..2.0),
        sigma2_tau: rng.random_range(0.05..2.0),
    };
    (data, params)
}

/// Unweighted Gaussian log-density from the dense nested covariance.
pub fn dense_three_level(data: &[DesignedSupercluster], p: &ThreeLevelParams) -> f64 {
    let mut total = 0.0;
    for s in data {
        let mut r = Vec::new();
        let mut owner = Vec::new();
        for (j, c) in s.clusters().iter().enumerate() {
            let fit = c.x() * DVector::from_column_slice(&p.beta);
            for i in 0..c.len() {
                r.push(c.y()[i] - fit[i]);
                owner.push(j);
            }
        }
        let n = r.len();
        let v = DMatrix::from_fn(n, n, |a, b| {
            (if a == b { p.sigma2_e } else { 0.0 })
                + (if owner[a] == owner[b] { p.sigma2_u } else { 0.0 })
                + p.sigma2_tau
        });
        let chol = v.cholesky().unwrap();
        let r = DVector::from_vec(r);
        let quad = r.dot(&chol.solve(&r));
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        total += -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
    }
    total
}

/// Largest central-difference discrepancy from `analytic`, relative to
/// max(|fd|, 1), over all components of `theta`.
pub fn fd_max_rel_error(f: &dyn Fn(&[f64]) -> f64, theta: &[f64], analytic: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..theta.len() {
        let h = 1e-5 * theta[k].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[k] += h;
        dn[k] -= h;
        let fd = (f(&up) - f(&dn)) / (2.0 * h);
        worst = worst.max((fd - analytic[k]).abs() / fd.abs().max(1.0));
    }
    worst
}

pub fn names() -> CovariateNames {
    CovariateNames::numbered(1, 1, 0)
}

pub fn depth3(tag: &str, shape: &[Vec<usize>], rng: &mut ChaCha8Rng) -> HierarchicalDataset {
    let (mut obs, mut clusters, mut supers) = (Vec::new(), Vec::new(), Vec::new());
    for (k, sizes) in shape.iter().enumerate() {
        let sid = format!("{tag}s{k}");
        supers.push(SuperclusterRecord {
            supercluster_id: sid.clone(),
            x_super: vec![],
            w_super: rng.random_range(1.0..5.0),
            is_pseudo: false,
        });
        for (j, &n) in sizes.iter().enumerate() {
            let cid = format!("{sid}c{j}");
            let z = rng.random_range(-1.0..1.0);
            clusters.push(ClusterRecord {
                cluster_id: cid.clone(),
                supercluster_id: sid.clone(),
                x_cluster: vec![z],
                w_cluster: rng.random_range(1.0..5.0),
                is_pseudo: false,
            });
            for i in 0..n {
                let x = rng.random_range(0.0..2.0);
                obs.push(ObservationRecord {
                    unit_id: format!("{cid}u{i}"),
                    cluster_id: cid.clone(),
                    supercluster_id: sid.clone(),
                    y: 1.0 + x + z + rng.random_range(-1.5..1.5) + k as f64 * 0.3 + j as f64 * 0.2,
                    x_unit: vec![x],
                    w_unit: rng.random_range(1.0..5.0),
                });
            }
        }
    }
    HierarchicalDataset::new(Depth::Three, names(), obs, clusters, supers).unwrap()
}

pub fn depth2(tag: &str, sizes: &[usize], rng: &mut ChaCha8Rng) -> HierarchicalDataset {
    let (mut obs, mut clusters) = (Vec::new(), Vec::new());
    for (j, &n) in sizes.iter().enumerate() {
        let cid = format!("{tag}c{j}");
        let z = rng.random_range(-1.0..1.0);
        clusters.push(ClusterRecord {
            cluster_id: cid.clone(),
            supercluster_id: String::new(),
            x_cluster: vec![z],
            w_cluster: rng.random_range(1.0..5.0),
            is_pseudo: false,
        });
        for i in 0..n {
            let x = rng.random_range(0.0..2.0);
            obs.push(ObservationRecord {
                unit_id: format!("{cid}u{i}"),
                cluster_id: cid.clone(),
                supercluster_id: String::new(),
                y: 1.0 + x + z + rng.random_range(-1.5..1.5) + j as f64 * 0.25,
                x_unit: vec![x],
                w_unit: rng.random_range(1.0..5.0),
            });
        }
    }
    two_level_dataset(names(), obs, clusters).unwrap()
}

pub fn depth1(tag: &str, n: usize, rng: &mut ChaCha8Rng) -> HierarchicalDataset {
    let units = (0..n)
        .map(|i| {
            let x = rng.random_range(0.0..2.0);
            let z = rng.random_range(-1.0..1.0);
            IndependentUnit {
                unit_id: format!("{tag}u{i}"),
                y: 1.0 + x + z + rng.random_range(-2.0..2.0),
                x_unit: vec![x],
                x_cluster: vec![z],
                x_super: vec![],
                w_unit: rng.random_range(1.0..3.0),
                w_cluster: rng.random_range(1.0..5.0),
                w_super: 1.0,
            }
        })
        .collect();
    single_level_dataset(names(), units).unwrap()
}

pub fn sources(seed: u64, shape: &[Vec<usize>], sizes: &[usize], singles: usize) -> Vec<HierarchicalDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        depth3("a", shape, &mut rng),
        depth2("b", sizes, &mut rng),
        depth1("c", singles, &mut rng),
    ]
}
