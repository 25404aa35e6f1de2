//! Loss terms and the reparameterized sampler.

use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(a.len(), b.len(), what.to_string()));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument(format!("{what}: empty input")));
    }
    Ok(())
}

/// Mean of squared differences.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target, "mse")?;
    Ok(sum_squared(pred, target) / pred.len() as f64)
}

/// `||pred - target||^2`.
pub fn sum_squared(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum()
}

/// `KL(N(mean, diag(sigma^2)) || N(0, I))` in closed form.
pub fn kl_standard_normal(mean: &[f64], sigma: &[f64]) -> Result<f64> {
    check_pair(mean, sigma, "kl")?;
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("kl: sigma must be positive".into()));
    }
    Ok(0.5
        * mean
            .iter()
            .zip(sigma)
            .map(|(&m, &s)| {
                let var = s * s;
                var + m * m - 1.0 - var.ln()
            })
            .sum::<f64>())
}

/// Same quantity from a log-variance head, `sigma^2 = exp(logvar)`.
pub(crate) fn kl_from_logvar(mean: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// `z = mean + sigma ⊙ eps`.
pub fn reparameterize(mean: &[f64], sigma: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mean.len() != sigma.len() || mean.len() != eps.len() {
        return Err(Error::dim(mean.len(), sigma.len().max(eps.len()), "reparameterize"));
    }
    Ok(mean
        .iter()
        .zip(sigma)
        .zip(eps)
        .map(|((&m, &s), &e)| m + s * e)
        .collect())
}

/// Gradients of `z` w.r.t. `(mean, sigma)` given `dz`: `(dz, dz ⊙ eps)`.
pub fn reparameterize_backward(dz: &[f64], eps: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (dz.to_vec(), dz.iter().zip(eps).map(|(g, e)| g * e).collect())
}
