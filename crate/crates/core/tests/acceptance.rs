//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::time::Instant;

use common::*;
use pseudoclust::estimator::*;
use pseudoclust::hierarchy::*;
use pseudoclust::lmm::*;
use pseudoclust::sim::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const B: usize = 200;
const SEED: u64 = 42;

struct Check {
    ok: bool,
    notes: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Self {
            ok: true,
            notes: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, note: String) {
        self.ok &= ok;
        self.notes.push(format!("{}{note}", if ok { "" } else { "!" }));
    }

    /// |value - target| <= tol.
    fn within(&mut self, label: &str, value: f64, target: f64, tol: f64) {
        self.record(
            (value - target).abs() <= tol,
            format!("{label}={value:.4} (want {target}±{tol})"),
        );
    }
}

fn report(n: usize, title: &str, check: &Check, started: Instant) -> bool {
    println!(
        "criterion {n} [{}] {title}: {} ({:.1}s)",
        if check.ok { "PASS" } else { "FAIL" },
        check.notes.join(", "),
        started.elapsed().as_secs_f64()
    );
    check.ok
}

fn row<'a>(r: &'a SimulationReport, name: &str) -> &'a ParameterRow {
    r.scenarios[0]
        .rows
        .iter()
        .find(|row| row.parameter == name)
        .expect("parameter in table")
}

fn table(t: Table) -> SimulationReport {
    let config = MonteCarloConfig::new(t, B, SEED, vec![Scenario::new(100, 30, 0.0)]);
    run_table(&config, t).expect("simulation runs")
}

fn criterion_1(sim1: &SimulationReport) -> Check {
    let mut c = Check::new();
    for (name, target, tol) in [
        ("beta0", 1.019, 0.03),
        ("beta1", 1.003, 0.01),
        ("beta2", 1.003, 0.03),
        ("sigma2_e", 0.967, 0.01),
        ("sigma2_u", 1.010, 0.04),
    ] {
        c.within(&format!("w.{name}"), row(sim1, name).weighted.mean, target, tol);
    }
    c.within("u.beta0", row(sim1, "beta0").unweighted.mean, 1.401, 0.03);
    c.within("u.sigma2_e", row(sim1, "sigma2_e").unweighted.mean, 0.844, 0.01);
    c.record(
        sim1.scenarios[0].nonconverged_weighted == 0,
        format!("nonconverged={}", sim1.scenarios[0].rows[0].nonconverged),
    );
    c
}

fn criterion_2(sim2: &SimulationReport) -> Check {
    let mut c = Check::new();
    c.within("w.beta1", row(sim2, "beta1").weighted.mean, 1.000, 0.08);
    c.within("u.beta1", row(sim2, "beta1").unweighted.mean, 0.913, 0.08);
    c.within("w.sigma2_u", row(sim2, "sigma2_u").weighted.mean, 2.065, 0.17);
    c.record(
        row(sim2, "sigma2_u").truth == 2.25,
        format!("truth={}", row(sim2, "sigma2_u").truth),
    );
    c
}

fn criterion_3(lin: &SimulationReport) -> Check {
    let mut c = Check::new();
    let (w, u) = (row(lin, "beta1").weighted.mean, row(lin, "beta1").unweighted.mean);
    c.record(w < 1.0, format!("w.beta1={w:.4}<1"));
    c.record(u < 1.0, format!("u.beta1={u:.4}<1"));
    c.within("w.beta1", w, 0.918, 0.08);
    c
}

fn criterion_4(sim1: &SimulationReport) -> Check {
    let mut c = Check::new();
    for r in &sim1.scenarios[0].rows {
        let cov = r.weighted.coverage;
        let is_variance = r.parameter.starts_with("sigma2");
        let ok = cov.is_finite() && (0.0..=1.0).contains(&cov) && (!is_variance || cov < 0.97);
        c.record(ok, format!("{}={cov:.3}", r.parameter));
    }
    c
}

fn criterion_5() -> Check {
    let mut c = Check::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst2, mut worst3) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (data, params) = random_two_level(&mut rng);
        for weighted in [false, true] {
            let a = loglik_two_level(&data, &params, weighted).unwrap();
            let q = loglik_quadrature_oracle(&data, &params, weighted).unwrap();
            worst2 = worst2.max((a - q).abs());
        }
        let (data, params) = random_three_level(&mut rng);
        for weighted in [false, true] {
            let a = loglik_three_level(&data, &params, weighted).unwrap();
            let q = loglik_quadrature_three_level(&data, &params, weighted).unwrap();
            worst3 = worst3.max((a - q).abs());
        }
    }
    c.record(worst2 <= 1e-8, format!("2-level max|Δ|={worst2:.1e}≤1e-8"));
    c.record(worst3 <= 1e-6, format!("3-level max|Δ|={worst3:.1e}≤1e-6"));
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (data, params) = random_two_level(&mut rng);
        let p = params.beta.len();
        let theta: Vec<f64> = params
            .beta
            .iter()
            .copied()
            .chain([params.sigma2_e, params.sigma2_u])
            .collect();
        let f = |t: &[f64]| {
            let pr = TwoLevelParams {
                beta: t[..p].to_vec(),
                sigma2_e: t[p],
                sigma2_u: t[p + 1],
            };
            loglik_two_level(&data, &pr, true).unwrap()
        };
        worst = worst.max(fd_max_rel_error(
            &f,
            &theta,
            &score_two_level(&data, &params, true).unwrap(),
        ));
        let (data, params) = random_three_level(&mut rng);
        let p = params.beta.len();
        let theta: Vec<f64> = params
            .beta
            .iter()
            .copied()
            .chain([params.sigma2_e, params.sigma2_u, params.sigma2_tau])
            .collect();
        let f = |t: &[f64]| {
            let pr = ThreeLevelParams {
                beta: t[..p].to_vec(),
                sigma2_e: t[p],
                sigma2_u: t[p + 1],
                sigma2_tau: t[p + 2],
            };
            loglik_three_level(&data, &pr, true).unwrap()
        };
        worst = worst.max(fd_max_rel_error(
            &f,
            &theta,
            &score_three_level(&data, &params, true).unwrap(),
        ));
    }
    c.record(worst <= 1e-4, format!("score vs FD max rel={worst:.1e}≤1e-4"));
    c
}

fn criterion_6() -> Check {
    let mut c = Check::new();
    let ys = [0.3, 1.9, -0.4, 2.2, 5.0, 1.1, 0.8];
    let data: Vec<_> = ys
        .iter()
        .map(|y| DesignedCluster::intercept_only(vec![*y]).unwrap())
        .collect();
    let fit = fit_intercept_closed_form(&data, false, Some((1.0, 1.0))).unwrap();
    let m = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / m;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (m * (m - 1.0));
    let (db, dv) = ((fit.beta()[0] - mean).abs(), (fit.cov_sandwich[(0, 0)] - var).abs());
    c.record(
        db < 1e-12 && dv < 1e-12,
        format!("singleton mean/var |Δ|={db:.0e}/{dv:.0e}"),
    );

    let opts = FitOptions::default();
    let ones = simulate_clusters(11, 40, 2..=8, 1.0, false);
    let a = fit_designed_two_level(&ones, true, &opts).unwrap();
    let b = fit_designed_two_level(&ones, false, &opts).unwrap();
    let diff = a
        .beta()
        .iter()
        .zip(b.beta())
        .map(|(x, y)| (x - y).abs())
        .chain(
            a.params
                .variances()
                .iter()
                .zip(b.params.variances())
                .map(|(x, y)| (x - y).abs()),
        )
        .fold(0.0, f64::max);
    c.record(diff <= 1e-8, format!("unit weights max|Δ|={diff:.0e}≤1e-8"));

    let clusters = simulate_clusters(17, 30, 2..=6, 0.8, true);
    let supers: Vec<_> = clusters
        .iter()
        .map(|cl| DesignedSupercluster::new(vec![cl.clone().with_w_cluster(1.0).unwrap()], cl.w_cluster()).unwrap())
        .collect();
    let two = fit_designed_two_level(&clusters, true, &opts).unwrap();
    let three = fit_designed_three_level(&supers, true, &opts).unwrap();
    let (v2, v3) = (two.params.variances(), three.params.variances());
    let diff = two
        .beta()
        .iter()
        .zip(three.beta())
        .map(|(x, y)| (x - y).abs())
        .chain([(v2[0] - v3[0]).abs(), (v2[1] - v3[1]).abs(), v3[2]])
        .fold(0.0, f64::max);
    c.record(diff <= 1e-6, format!("degenerate level 3 max|Δ|={diff:.0e}≤1e-6"));
    c
}

/// Largest relative gap between a real parent's child-weight sum and its
/// child count, plus whether a second pass changes anything.
fn rescale_gap(data: &HierarchicalDataset) -> (f64, bool) {
    let once = rescale_weights(data, WeightScaling::ClusterSize).unwrap();
    let mut worst = 0.0f64;
    for (ci, cl) in once.clusters().enumerate() {
        let members = once.cluster_members(ci);
        let sum: f64 = members.iter().map(|&i| once.observations()[i].w_unit).sum();
        if !cl.is_pseudo {
            worst = worst.max((sum - members.len() as f64).abs() / members.len() as f64);
        }
    }
    for (si, s) in once.superclusters().enumerate() {
        let children = once.supercluster_children(si);
        let sum: f64 = children.iter().map(|&j| once.cluster_at(j).w_cluster).sum();
        if !s.is_pseudo {
            worst = worst.max((sum - children.len() as f64).abs() / children.len() as f64);
        }
    }
    let idempotent = rescale_weights(&once, WeightScaling::ClusterSize).unwrap() == once;
    (worst, idempotent)
}

fn criterion_7() -> Check {
    let mut c = Check::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let native = depth3("n", &[vec![3, 1, 4], vec![2, 2], vec![5], vec![1, 1, 6, 2]], &mut rng);
    let combined = combine_datasets(&sources(78, &[vec![2, 3], vec![4]], &[3, 1, 2], 3)).unwrap();
    let (sample, _) = replication_sample(
        Table::Sim1,
        &Scenario::new(100, 30, 25.0),
        &RunSettings::default(),
        SEED,
        0,
    )
    .unwrap();
    for (label, data) in [("depth-3", &native), ("combined", &combined), ("simulated", &sample)] {
        let (gap, idem) = rescale_gap(data);
        c.record(gap <= 1e-10, format!("{label} rel gap={gap:.0e}"));
        c.record(idem, format!("{label} idempotent={idem}"));
    }
    c
}

fn criterion_8() -> Check {
    let mut c = Check::new();
    let draws = 100_000;
    let se_ok = |hits: usize, p: f64| {
        let f = hits as f64 / draws as f64;
        (f - p).abs() <= 3.0 * (p * (1.0 - p) / draws as f64).sqrt() + 1e-12
    };

    let population = generate_population(&PopulationSpec::model3(10, 5)).unwrap();
    let (p, _) = pps_inclusion_probabilities(&population.sizes(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut hits = vec![0usize; p.len()];
    for _ in 0..draws {
        for j in pps_select_clusters(&population, 4, &mut rng).unwrap().indices {
            hits[j] += 1;
        }
    }
    let bad = hits.iter().zip(&p).filter(|(h, p)| !se_ok(**h, **p)).count();
    c.record(
        bad == 0,
        format!("PPS {}/{} clusters within 3 SE", p.len() - bad, p.len()),
    );

    let residuals: Vec<f64> = population.units(0).iter().take(10).map(|u| u.e).collect();
    let (p, _) = poisson_inclusion_probabilities(&residuals, 4);
    let mut hits = vec![0usize; p.len()];
    for _ in 0..draws {
        for i in poisson_select_units(&residuals, 4, &mut rng).unwrap().indices {
            hits[i] += 1;
        }
    }
    let bad = hits.iter().zip(&p).filter(|(h, p)| !se_ok(**h, **p)).count();
    c.record(
        bad == 0,
        format!("Poisson {}/{} units within 3 SE", p.len() - bad, p.len()),
    );

    let reps = 400;
    let (mut raw, mut weighted) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
    for r in 0..reps {
        let population = generate_population(&PopulationSpec::model3(200, 1000 + r as u64)).unwrap();
        let pps = pps_select_clusters(&population, 20, &mut rng).unwrap();
        let (mut s, mut k, mut sw, mut w) = (0.0, 0.0, 0.0, 0.0);
        for (&j, wj) in pps.indices.iter().zip(pps.weights()) {
            let e: Vec<f64> = population.units(j).iter().map(|u| u.e).collect();
            let draw = poisson_select_units(&e, 30, &mut rng).unwrap();
            for (&i, wi) in draw.indices.iter().zip(draw.weights()) {
                s += e[i];
                k += 1.0;
                sw += wj * wi * e[i];
                w += wj * wi;
            }
        }
        raw.push(s / k);
        weighted.push(sw / w);
    }
    let mean_se = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        (m, sd / (v.len() as f64).sqrt())
    };
    let (mr, ser) = mean_se(&raw);
    let (mw, sew) = mean_se(&weighted);
    c.record(mr > 3.0 * ser, format!("unweighted e mean={mr:.4} (se {ser:.4})>3se"));
    c.record(
        mw.abs() <= 3.0 * sew,
        format!("weighted e mean={mw:.4} (se {sew:.4}) within 3se"),
    );
    c
}

fn main() {
    let mut all = true;
    let t = Instant::now();
    let sim1 = table(Table::Sim1);
    all &= report(1, "sim1 means, (100,30) 0%, B=200", &criterion_1(&sim1), t);
    let t = Instant::now();
    all &= report(
        2,
        "sim2_model1 means, random-intercept fit on x_j",
        &criterion_2(&table(Table::Sim2Model1)),
        t,
    );
    let t = Instant::now();
    all &= report(
        3,
        "sim2_model2 means, linear fit on x_j",
        &criterion_3(&table(Table::Sim2Model2)),
        t,
    );
    let t = Instant::now();
    all &= report(4, "weighted 95% coverage in simulation 1", &criterion_4(&sim1), t);
    let t = Instant::now();
    all &= report(5, "likelihood and score oracles", &criterion_5(), t);
    let t = Instant::now();
    all &= report(6, "degeneration identities", &criterion_6(), t);
    let t = Instant::now();
    all &= report(7, "cluster-size rescaling sums and idempotence", &criterion_7(), t);
    let t = Instant::now();
    all &= report(8, "sampling design frequencies and informativeness", &criterion_8(), t);
    if !all {
        std::process::exit(1);
    }
}
