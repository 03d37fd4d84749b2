use serde_json::{json, Map, Value};
use statrs::function::erf::erfc;

use super::FitResult;

/// P(|Z| ≥ |z|) for a standard normal Z.
pub(crate) fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// JSON numbers cannot be NaN or infinite; those become `null`.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub(crate) fn to_json(fit: &FitResult) -> Value {
    let se_model = fit.se_model();
    let se_robust = fit.se_robust();
    let z = fit.z();
    let p = fit.p_values();
    let fixed: Vec<Value> = fit
        .fixed_names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            json!({
                "name": name,
                "coef": num(fit.beta()[i]),
                "se_model": num(se_model[i]),
                "se_robust": num(se_robust[i]),
                "z": num(z[i]),
                "p": num(p[i]),
            })
        })
        .collect();
    let mut variances = Map::new();
    for &name in &fit.variance_names {
        variances.insert(
            name.to_string(),
            json!({
                "estimate": num(fit.variance(name).unwrap_or(f64::NAN)),
                "se": fit.variance_se(name).map(num).unwrap_or(Value::Null),
            }),
        );
    }
    let mut doc = json!({
        "model": fit.kind,
        "weighted": fit.weighted,
        "scaling": fit.scaling.as_str(),
        "n_obs": fit.n_obs,
        "n_groups": fit.n_groups,
        "fixed_effects": fixed,
        "variance_components": Value::Object(variances.clone()),
        "loglik": num(fit.loglik),
        "convergence": {
            "iterations": fit.convergence.iterations,
            "converged": fit.convergence.converged,
            "final_score_norm": num(fit.convergence.final_score_norm),
            "boundary_hit": fit.convergence.boundary_hit,
        },
    });
    // flat copies of the variance estimates for quick lookup
    for (name, v) in variances {
        doc[name] = v["estimate"].clone();
    }
    doc
}
