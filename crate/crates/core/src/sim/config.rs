use serde_json::{Map, Value};

use super::replicate::{RunSettings, Scenario, Table};
use crate::error::{Error, Result};
use crate::hierarchy::WeightScaling;

/// A Monte Carlo run: which table, how many replications, which cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub table: Table,
    pub b: usize,
    pub master_seed: u64,
    pub scenarios: Vec<Scenario>,
    pub settings: RunSettings,
}

impl MonteCarloConfig {
    pub fn new(table: Table, b: usize, master_seed: u64, scenarios: Vec<Scenario>) -> Self {
        Self {
            table,
            b,
            master_seed,
            scenarios,
            settings: RunSettings::default(),
        }
    }

    /// Checks every invariant, naming the offending field by JSON pointer.
    pub fn validate(&self) -> Result<()> {
        if self.b < 1 {
            return Err(config_error("/B", "must be at least 1"));
        }
        if self.scenarios.is_empty() {
            return Err(config_error("/scenarios", "must list at least one scenario"));
        }
        if self.settings.population_clusters < 1 {
            return Err(config_error("/population_clusters", "must be at least 1"));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            let at = |field: &str| format!("/scenarios/{i}/{field}");
            if s.m < 1 {
                return Err(config_error(&at("m"), "must be at least 1"));
            }
            if s.n < 1 {
                return Err(config_error(&at("n"), "must be at least 1"));
            }
            if !(s.singleton_pct.is_finite() && (0.0..100.0).contains(&s.singleton_pct)) {
                return Err(config_error(&at("singleton_pct"), "must lie in [0, 100)"));
            }
            let design = s.design().map_err(|e| config_error(&at("m"), &e.to_string()))?;
            if s.n2.is_some_and(|n2| n2 < design.m2) {
                return Err(config_error(&at("N2"), "must be at least the singleton count"));
            }
            if design.m1 > self.settings.population_clusters {
                return Err(config_error(&at("m"), "exceeds the population cluster count"));
            }
        }
        Ok(())
    }
}

fn config_error(pointer: &str, message: &str) -> Error {
    Error::Config {
        pointer: pointer.to_string(),
        message: message.to_string(),
    }
}

fn object<'a>(v: &'a Value, at: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| config_error(at, "expected an object"))
}

fn reject_unknown(obj: &Map<String, Value>, at: &str, known: &[&str]) -> Result<()> {
    match obj.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(config_error(&format!("{at}/{k}"), "unknown field")),
        None => Ok(()),
    }
}

fn count(obj: &Map<String, Value>, key: &str, at: &str) -> Result<Option<u64>> {
    let at = format!("{at}/{key}");
    match obj.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| config_error(&at, "expected a non-negative integer")),
    }
}

fn required<T>(v: Option<T>, at: &str) -> Result<T> {
    v.ok_or_else(|| config_error(at, "missing required field"))
}

fn usize_at(v: u64, at: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| config_error(at, "value too large"))
}

/// Parses a JSON configuration such as
/// `{"table": "sim1", "B": 200, "master_seed": 42, "scenarios": [{"m": 100, "n": 30, "singleton_pct": 0}]}`.
///
/// Optional fields: `population_clusters` (default 1000), `scaling`
/// (`raw`, the default, or `cluster-size`), and per scenario `N2`.
pub fn parse_config(text: &str) -> Result<MonteCarloConfig> {
    let root: Value = serde_json::from_str(text).map_err(|e| config_error("", &format!("invalid JSON: {e}")))?;
    let obj = object(&root, "")?;
    reject_unknown(
        obj,
        "",
        &[
            "table",
            "B",
            "master_seed",
            "scenarios",
            "population_clusters",
            "scaling",
        ],
    )?;

    let table = match obj.get("table") {
        None => return Err(config_error("/table", "missing required field")),
        Some(Value::String(s)) => s.parse::<Table>().map_err(|e| config_error("/table", &e.to_string()))?,
        Some(_) => return Err(config_error("/table", "expected a string")),
    };
    let b = usize_at(required(count(obj, "B", "")?, "/B")?, "/B")?;
    let master_seed = required(count(obj, "master_seed", "")?, "/master_seed")?;
    let mut settings = RunSettings::default();
    if let Some(m) = count(obj, "population_clusters", "")? {
        settings.population_clusters = usize_at(m, "/population_clusters")?;
    }
    if let Some(v) = obj.get("scaling") {
        settings.scaling = v
            .as_str()
            .ok_or_else(|| config_error("/scaling", "expected a string"))?
            .parse::<WeightScaling>()
            .map_err(|e| config_error("/scaling", &e.to_string()))?;
    }

    let list = obj
        .get("scenarios")
        .ok_or_else(|| config_error("/scenarios", "missing required field"))?
        .as_array()
        .ok_or_else(|| config_error("/scenarios", "expected an array"))?;
    let mut scenarios = Vec::with_capacity(list.len());
    for (i, item) in list.iter().enumerate() {
        let at = format!("/scenarios/{i}");
        let s = object(item, &at)?;
        reject_unknown(s, &at, &["m", "n", "singleton_pct", "N2"])?;
        let field = |k: &str| format!("{at}/{k}");
        let m = usize_at(required(count(s, "m", &at)?, &field("m"))?, &field("m"))?;
        let n = usize_at(required(count(s, "n", &at)?, &field("n"))?, &field("n"))?;
        let pct = match s.get("singleton_pct") {
            None => return Err(config_error(&field("singleton_pct"), "missing required field")),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| config_error(&field("singleton_pct"), "expected a number"))?,
        };
        let n2 = count(s, "N2", &at)?.map(|v| usize_at(v, &field("N2"))).transpose()?;
        scenarios.push(Scenario {
            m,
            n,
            singleton_pct: pct,
            n2,
        });
    }

    let config = MonteCarloConfig {
        table,
        b,
        master_seed,
        scenarios,
        settings,
    };
    config.validate()?;
    Ok(config)
}
