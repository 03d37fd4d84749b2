use std::io::Write;

use serde::Serialize;

use super::config::MonteCarloConfig;
use super::replicate::{run_replication, FitOutcome, ReplicationResult, Scenario, Table};
use super::sampling::DesignDiagnostics;
use crate::error::Result;
use crate::par;

/// Monte Carlo mean, SD and coverage of one parameter under one weighting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// `None` with fewer than two usable replications.
    pub sd: Option<f64>,
    pub coverage: f64,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterRow {
    pub parameter: String,
    pub truth: f64,
    pub unweighted: Summary,
    pub weighted: Summary,
    /// Replications whose weighted or unweighted fit failed, summed.
    pub nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub rows: Vec<ParameterRow>,
    pub replications: usize,
    pub nonconverged_weighted: usize,
    pub nonconverged_unweighted: usize,
    /// Mean combined sample size over replications.
    pub mean_observations: f64,
    pub singleton_fraction: f64,
    pub diagnostics: DesignDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub table: Table,
    pub b: usize,
    pub master_seed: u64,
    pub scenarios: Vec<ScenarioReport>,
}

fn summarize(fits: &[&FitOutcome], k: usize) -> Summary {
    let used = fits.len();
    if used == 0 {
        return Summary {
            mean: f64::NAN,
            sd: None,
            coverage: f64::NAN,
            used,
        };
    }
    let values: Vec<f64> = fits.iter().map(|f| f.estimates[k]).collect();
    let mean = values.iter().sum::<f64>() / used as f64;
    let sd = (used > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (used - 1) as f64).sqrt());
    let coverage = fits.iter().filter(|f| f.covered[k]).count() as f64 / used as f64;
    Summary {
        mean,
        sd,
        coverage,
        used,
    }
}

/// Aggregates replications, in index order, into one scenario report.
pub fn aggregate(table: Table, scenario: &Scenario, results: &[ReplicationResult]) -> ScenarioReport {
    let weighted: Vec<&FitOutcome> = results.iter().filter_map(|r| r.weighted.as_ref()).collect();
    let unweighted: Vec<&FitOutcome> = results.iter().filter_map(|r| r.unweighted.as_ref()).collect();
    let nonconverged_weighted = results.len() - weighted.len();
    let nonconverged_unweighted = results.len() - unweighted.len();
    let rows = table
        .parameters()
        .into_iter()
        .zip(table.truth())
        .enumerate()
        .map(|(k, (name, truth))| ParameterRow {
            parameter: name.to_string(),
            truth,
            unweighted: summarize(&unweighted, k),
            weighted: summarize(&weighted, k),
            nonconverged: nonconverged_weighted + nonconverged_unweighted,
        })
        .collect();
    let mut diagnostics = DesignDiagnostics::default();
    for r in results {
        diagnostics.pps_capped += r.diagnostics.pps_capped;
        diagnostics.poisson_capped += r.diagnostics.poisson_capped;
        diagnostics.poisson_redraws += r.diagnostics.poisson_redraws;
    }
    let n = results.len().max(1) as f64;
    ScenarioReport {
        scenario: scenario.clone(),
        rows,
        replications: results.len(),
        nonconverged_weighted,
        nonconverged_unweighted,
        mean_observations: results.iter().map(|r| r.n_observations as f64).sum::<f64>() / n,
        singleton_fraction: results
            .iter()
            .map(|r| r.singleton_clusters as f64 / r.n_clusters as f64)
            .sum::<f64>()
            / n,
        diagnostics,
    }
}

/// Runs every scenario of `config` for `table`.
///
/// Replications run through [`par::map_range`]; each owns its random
/// stream and results are aggregated in index order, so the report does not
/// depend on the thread count.
pub fn run_table(config: &MonteCarloConfig, table: Table) -> Result<SimulationReport> {
    config.validate()?;
    let mut scenarios = Vec::with_capacity(config.scenarios.len());
    for scenario in &config.scenarios {
        let results: Vec<ReplicationResult> = par::map_range(config.b, |r| {
            run_replication(table, scenario, &config.settings, config.master_seed, r)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        scenarios.push(aggregate(table, scenario, &results));
    }
    Ok(SimulationReport {
        table,
        b: config.b,
        master_seed: config.master_seed,
        scenarios,
    })
}

fn number(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".to_string()
    }
}

fn optional(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), number)
}

fn cell(s: &Summary) -> String {
    if !s.mean.is_finite() {
        return "NA".to_string();
    }
    match s.sd {
        Some(sd) => format!("{:.3} ({:.3})", s.mean, sd),
        None => format!("{:.3} (NA)", s.mean),
    }
}

impl SimulationReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record([
            "scenario",
            "parameter",
            "truth",
            "est_mean_unweighted",
            "est_sd_unweighted",
            "est_mean_weighted",
            "est_sd_weighted",
            "coverage_weighted",
            "coverage_unweighted",
            "nonconverged",
        ])?;
        for s in &self.scenarios {
            let label = s.scenario.label();
            for row in &s.rows {
                w.write_record([
                    label.clone(),
                    row.parameter.clone(),
                    number(row.truth),
                    number(row.unweighted.mean),
                    optional(row.unweighted.sd),
                    number(row.weighted.mean),
                    optional(row.weighted.sd),
                    number(row.weighted.coverage),
                    number(row.unweighted.coverage),
                    row.nonconverged.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
    }

    /// Markdown tables: one block of rows per
    /// (m, n), one column pair per singleton percentage, cells
    /// "mean (SD)". A coverage table follows.
    pub fn to_markdown(&self) -> String {
        let mut pcts: Vec<f64> = Vec::new();
        let mut cells: Vec<(usize, usize)> = Vec::new();
        for s in &self.scenarios {
            if !pcts.contains(&s.scenario.singleton_pct) {
                pcts.push(s.scenario.singleton_pct);
            }
            if !cells.contains(&(s.scenario.m, s.scenario.n)) {
                cells.push((s.scenario.m, s.scenario.n));
            }
        }
        let find = |mn: (usize, usize), pct: f64| {
            self.scenarios
                .iter()
                .find(|s| (s.scenario.m, s.scenario.n) == mn && s.scenario.singleton_pct == pct)
        };
        let header = |out: &mut String, title: &str| {
            out.push_str(&format!("### {title}\n\n| (m, n) | Parameter | True value |"));
            for p in &pcts {
                out.push_str(&format!(" {p}% Non-weighted | {p}% Weighted |"));
            }
            out.push_str("\n|---|---|---|");
            out.push_str(&"---|---|".repeat(pcts.len()));
            out.push('\n');
        };
        let body = |out: &mut String, f: &dyn Fn(&Summary) -> String| {
            for &mn in &cells {
                for (k, name) in self.table.parameters().into_iter().enumerate() {
                    let first = k == 0;
                    let truth = self.table.truth()[k];
                    let label = if first {
                        format!("({}, {})", mn.0, mn.1)
                    } else {
                        String::new()
                    };
                    out.push_str(&format!("| {label} | {name} | {truth:.3} |"));
                    for &p in &pcts {
                        match find(mn, p) {
                            Some(s) => {
                                let row = &s.rows[k];
                                out.push_str(&format!(" {} | {} |", f(&row.unweighted), f(&row.weighted)));
                            }
                            None => out.push_str(" | |"),
                        }
                    }
                    out.push('\n');
                }
            }
        };
        let mut out = String::new();
        header(
            &mut out,
            &format!("{}: estimates (SD), B = {}", self.table.as_str(), self.b),
        );
        body(&mut out, &cell);
        out.push('\n');
        header(&mut out, "Empirical 95% coverage");
        body(&mut out, &|s: &Summary| {
            if s.coverage.is_finite() {
                format!("{:.3}", s.coverage)
            } else {
                "NA".into()
            }
        });
        out.push('\n');
        for s in &self.scenarios {
            out.push_str(&format!(
                "- {}: {} replications, nonconverged weighted {} / unweighted {}, mean n = {:.1}, \
                 capped PPS {} / Poisson {}, empty-cluster redraws {}\n",
                s.scenario.label(),
                s.replications,
                s.nonconverged_weighted,
                s.nonconverged_unweighted,
                s.mean_observations,
                s.diagnostics.pps_capped,
                s.diagnostics.poisson_capped,
                s.diagnostics.poisson_redraws,
            ));
        }
        out
    }
}
