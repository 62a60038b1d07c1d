use serde::{Deserialize, Serialize};

use super::ops::{dot, sigmoid, softplus};
use crate::error::{Error, Result};

/// `P(Y = 1 | x) = σ(β₀ + βᵀx)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub beta0: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop once the gradient norm of the mean log-likelihood drops below
    /// this value.
    pub tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            learning_rate: 0.5,
            max_iterations: 20_000,
            tolerance: 1e-8,
        }
    }
}

pub fn logistic_predict(params: &LogisticParams, x: &[f64]) -> f64 {
    sigmoid(params.beta0 + dot(&params.beta, x))
}

/// Mean log-likelihood and its gradient `(∂/∂β₀, ∂/∂β)`.
pub fn logistic_log_likelihood<X: AsRef<[f64]>>(
    params: &LogisticParams,
    x: &[X],
    y: &[u8],
) -> (f64, f64, Vec<f64>) {
    let n = x.len() as f64;
    let mut ll = 0.0;
    let mut g0 = 0.0;
    let mut g = vec![0.0; params.beta.len()];
    for (xi, &yi) in x.iter().zip(y) {
        let xi = xi.as_ref();
        let z = params.beta0 + dot(&params.beta, xi);
        ll += yi as f64 * z - softplus(z);
        let resid = yi as f64 - sigmoid(z);
        g0 += resid;
        for (gj, xj) in g.iter_mut().zip(xi) {
            *gj += resid * xj;
        }
    }
    g.iter_mut().for_each(|v| *v /= n);
    (ll / n, g0 / n, g)
}

/// Maximum-likelihood fit by gradient ascent on the mean log-likelihood.
pub fn logistic_fit<X: AsRef<[f64]>>(x: &[X], y: &[u8], cfg: &LogisticConfig) -> Result<LogisticParams> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Data(format!(
            "logistic fit needs matching non-empty inputs, got {} rows and {} labels",
            x.len(),
            y.len()
        )));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::Data("labels must be 0 or 1".into()));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::Data("logistic fit needs both classes in the training data".into()));
    }
    let d = x[0].as_ref().len();
    if x.iter().any(|r| r.as_ref().len() != d) {
        return Err(Error::Data("feature rows differ in length".into()));
    }

    let mut p = LogisticParams {
        beta0: 0.0,
        beta: vec![0.0; d],
    };
    for _ in 0..cfg.max_iterations {
        let (_, g0, g) = logistic_log_likelihood(&p, x, y);
        let norm = (g0 * g0 + g.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if norm < cfg.tolerance {
            break;
        }
        p.beta0 += cfg.learning_rate * g0;
        for (b, gj) in p.beta.iter_mut().zip(&g) {
            *b += cfg.learning_rate * gj;
        }
    }
    if !p.beta0.is_finite() || p.beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numerical("logistic fit diverged".into()));
    }
    Ok(p)
}
