//! Profile-likelihood Newton iterations on log-variances.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::lmm::stats::{Evaluation, Need, Prepared};

/// Stopping rule and iteration cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Largest absolute score component accepted at the solution.
    pub score_tolerance: f64,
    /// Largest relative parameter change accepted in the final step.
    pub param_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            score_tolerance: 1e-6,
            param_tolerance: 1e-8,
        }
    }
}

/// Role of each variance component (σ²ₑ, σ²ᵤ, σ²_τ) in a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Component {
    Free,
    /// Not part of the model, or pinned by the data layout.
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub beta: DVector<f64>,
    pub var: [f64; 3],
    /// Free components that ended on the zero boundary.
    pub at_boundary: [bool; 3],
    pub iterations: usize,
    pub score_norm: f64,
    pub converged: bool,
    /// Evaluation at the solution, with Hessian and group scores.
    pub eval: Evaluation,
}

const LOG_STEP_LIMIT: f64 = 3.0;
const FD_LOG_STEP: f64 = 1e-4;
const MAX_RELEASES: usize = 10;

struct State<'a> {
    prep: &'a Prepared,
    beta: DVector<f64>,
}

impl State<'_> {
    /// β̂(σ²) by one Newton step from the current β, exact because the
    /// log-likelihood is quadratic in β; returns the evaluation at β̂.
    fn profile(&mut self, var: [f64; 3]) -> Result<Evaluation> {
        let e = self.prep.evaluate(
            self.beta.as_slice(),
            var,
            Need {
                hessian: true,
                group_scores: false,
            },
        )?;
        let info = -e.hess_beta.clone().expect("requested");
        let chol = info
            .cholesky()
            .ok_or_else(|| Error::Model("fixed-effect information is not positive definite".into()))?;
        let beta = &self.beta + chol.solve(&e.grad_beta);
        let out = self.prep.evaluate(beta.as_slice(), var, Need::default())?;
        self.beta = beta;
        Ok(out)
    }
}

fn score_norm(e: &Evaluation, active: &[bool; 3], boundary: &[bool; 3]) -> f64 {
    let mut norm = e.grad_beta.amax();
    for c in 0..3 {
        if active[c] {
            norm = norm.max(e.grad_var[c].abs());
        } else if boundary[c] {
            norm = norm.max(e.grad_var[c].max(0.0));
        }
    }
    norm
}

/// Maximizes the (pseudo-)log-likelihood over the free variance components
/// with β profiled out.
///
/// Iterates Newton steps in η = ln σ² using a finite-difference Hessian of
/// the analytic profile gradient, with Levenberg damping and backtracking.
/// A component that shrinks towards zero is moved to the boundary when the
/// score there points outwards, and released if it later points inwards.
pub(crate) fn maximize(
    prep: &Prepared,
    components: [Component; 3],
    start: [f64; 3],
    beta_start: DVector<f64>,
    opts: &FitOptions,
) -> Result<Solution> {
    let mut var = [0.0; 3];
    let mut free = [false; 3];
    for c in 0..3 {
        match components[c] {
            Component::Free => {
                free[c] = true;
                var[c] = start[c];
            }
            Component::Fixed(v) => var[c] = v,
        }
    }
    let scale: f64 = start.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let zero_threshold = 1e-9 * scale;
    let release_value = 1e-4 * scale;

    let mut state = State { prep, beta: beta_start };
    let mut boundary = [false; 3];
    let mut releases = [0usize; 3];
    let mut eval = state.profile(var)?;
    let mut last_change = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        iterations += 1;

        // release boundary components whose score points inwards
        let mut released = false;
        for c in 1..3 {
            if boundary[c] && eval.grad_var[c] > opts.score_tolerance && releases[c] < MAX_RELEASES {
                boundary[c] = false;
                releases[c] += 1;
                var[c] = release_value;
                released = true;
            }
        }
        if released {
            eval = state.profile(var)?;
            last_change = f64::INFINITY;
        }

        let active: [bool; 3] = std::array::from_fn(|c| free[c] && !boundary[c]);
        let norm = score_norm(&eval, &active, &boundary);
        if norm <= opts.score_tolerance && last_change <= opts.param_tolerance {
            converged = true;
            break;
        }
        let idx: Vec<usize> = (0..3).filter(|&c| active[c]).collect();
        if idx.is_empty() {
            converged = norm <= opts.score_tolerance;
            break;
        }

        let step = newton_direction(&mut state, &var, &idx, &eval)?;

        // backtracking line search on the profile log-likelihood
        let base = eval.loglik;
        let beta_before = state.beta.clone();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = var;
            for (k, &c) in idx.iter().enumerate() {
                trial[c] = var[c] * (t * step[k]).exp();
            }
            state.beta = beta_before.clone();
            match state.profile(trial) {
                Ok(e) if e.loglik >= base - 1e-12 * base.abs().max(1.0) => {
                    accepted = Some((trial, e));
                    break;
                }
                Ok(_) | Err(Error::Numeric { .. }) => t *= 0.5,
                Err(other) => return Err(other),
            }
        }
        let Some((trial, e)) = accepted else {
            // no ascent left at working precision
            state.beta = beta_before;
            converged = norm <= opts.score_tolerance;
            break;
        };

        let mut change: f64 = 0.0;
        for &c in &idx {
            change = change.max((trial[c] - var[c]).abs() / var[c].max(trial[c]));
        }
        for q in 0..state.beta.len() {
            let b0 = beta_before[q];
            change = change.max((state.beta[q] - b0).abs() / b0.abs().max(1.0));
        }
        var = trial;
        eval = e;
        last_change = change;

        // components collapsing to zero: move to the boundary if the score
        // there points outwards
        for c in 1..3 {
            if active[c] && var[c] < zero_threshold {
                let mut at_zero = var;
                at_zero[c] = 0.0;
                let keep = state.beta.clone();
                let e0 = state.profile(at_zero)?;
                if e0.grad_var[c] <= 0.0 {
                    boundary[c] = true;
                    var = at_zero;
                    eval = e0;
                    last_change = 0.0;
                } else {
                    state.beta = keep;
                    eval = state.profile(var)?;
                }
            }
        }
    }

    let active: [bool; 3] = std::array::from_fn(|c| free[c] && !boundary[c]);
    let final_eval = prep.evaluate(
        state.beta.as_slice(),
        var,
        Need {
            hessian: true,
            group_scores: true,
        },
    )?;
    let norm = score_norm(&final_eval, &active, &boundary);
    Ok(Solution {
        beta: state.beta,
        var,
        at_boundary: boundary,
        iterations,
        score_norm: norm,
        converged: converged && norm <= opts.score_tolerance,
        eval: final_eval,
    })
}

/// Damped Newton step in log-variance space for the components in `idx`.
fn newton_direction(state: &mut State, var: &[f64; 3], idx: &[usize], eval: &Evaluation) -> Result<Vec<f64>> {
    let k = idx.len();
    let grad: DVector<f64> = DVector::from_iterator(k, idx.iter().map(|&c| var[c] * eval.grad_var[c]));
    let beta_keep = state.beta.clone();
    let mut hess = DMatrix::zeros(k, k);
    for (col, &c) in idx.iter().enumerate() {
        let mut cols = [DVector::zeros(k), DVector::zeros(k)];
        for (slot, sign) in [(0, 1.0), (1, -1.0)] {
            let mut v = *var;
            v[c] = var[c] * (sign * FD_LOG_STEP).exp();
            state.beta = beta_keep.clone();
            let e = state.profile(v)?;
            cols[slot] = DVector::from_iterator(k, idx.iter().map(|&d| v[d] * e.grad_var[d]));
        }
        hess.set_column(col, &((&cols[0] - &cols[1]) / (2.0 * FD_LOG_STEP)));
    }
    state.beta = beta_keep;
    let neg = -(&hess + hess.transpose()) * 0.5;

    let mut lambda = 0.0;
    let floor = neg.diagonal().amax().abs().max(1e-12);
    let step = loop {
        let damped = &neg + DMatrix::identity(k, k) * lambda;
        if let Some(chol) = damped.cholesky() {
            break chol.solve(&grad);
        }
        lambda = if lambda == 0.0 { 1e-6 * floor } else { lambda * 10.0 };
        if lambda > 1e12 * floor {
            // fall back to steepest ascent
            break grad.clone() / floor;
        }
    };
    Ok(step.iter().map(|s| s.clamp(-LOG_STEP_LIMIT, LOG_STEP_LIMIT)).collect())
}

/// Observed-information covariance of (β, free variance components).
///
/// The β block of the Hessian is analytic; rows involving variance
/// components are central differences of the analytic score. The inverse
/// is taken through a symmetric eigen-decomposition, dropping directions
/// with non-positive curvature, so the result is always positive
/// semidefinite.
pub(crate) fn observed_information_cov(
    prep: &Prepared,
    beta: &DVector<f64>,
    var: [f64; 3],
    idx: &[usize],
    hess_beta: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = beta.len();
    let k = idx.len();
    let mut h = DMatrix::zeros(p + k, p + k);
    h.view_mut((0, 0), (p, p)).copy_from(hess_beta);
    for (col, &c) in idx.iter().enumerate() {
        let step = 1e-5 * var[c];
        let mut up = var;
        let mut dn = var;
        up[c] += step;
        dn[c] -= step;
        let eu = prep.evaluate(beta.as_slice(), up, Need::default())?;
        let ed = prep.evaluate(beta.as_slice(), dn, Need::default())?;
        for q in 0..p {
            let d = (eu.grad_beta[q] - ed.grad_beta[q]) / (2.0 * step);
            h[(q, p + col)] = d;
            h[(p + col, q)] = d;
        }
        for (row, &d) in idx.iter().enumerate() {
            h[(p + row, p + col)] = (eu.grad_var[d] - ed.grad_var[d]) / (2.0 * step);
        }
    }
    let info = -(&h + h.transpose()) * 0.5;
    Ok(psd_inverse(info))
}

/// Inverse on the positive eigen-directions of a symmetric matrix.
pub(crate) fn psd_inverse(m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.amax();
    let mut out = DMatrix::zeros(n, n);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 1e-12 * top {
            let v = eig.eigenvectors.column(i);
            out += v * v.transpose() / l;
        }
    }
    (&out + out.transpose()) * 0.5
}
