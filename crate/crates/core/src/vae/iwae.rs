use ndarray::{Array2, Axis};
use rand::Rng;

use super::VaeModel;
use crate::error::{Error, Result};
use crate::nn_core::Tensor2;

const CHUNK: usize = 250;

#[derive(Debug, Clone, PartialEq)]
pub struct IwaeEstimate {
    pub per_example: Vec<f64>,
    pub mean: f64,
}

/// Importance-sampled `log p(x)` with `k` posterior draws per row:
/// `logsumexp_j[log p(x|z_j) + log p(z_j) - log q(z_j|x)] - log k`.
pub fn iwae_log_likelihood<R: Rng + ?Sized>(
    model: &VaeModel,
    x: &Tensor2,
    k: usize,
    rng: &mut R,
) -> Result<IwaeEstimate> {
    if k < 1 {
        return Err(Error::Config("importance samples K must be >= 1".into()));
    }
    let posterior = model.encode(x)?;
    let log_prior = model.spec.log_uniform_density();
    let ambient = model.spec.ambient_dim();
    let mut per_example = Vec::with_capacity(x.nrows());
    for (row, target) in x.axis_iter(Axis(0)).enumerate() {
        let q = posterior.product_vmf(&model.spec, row)?;
        // streaming logsumexp
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut remaining = k;
        while remaining > 0 {
            let c = remaining.min(CHUNK);
            remaining -= c;
            let mut z = Array2::zeros((c, ambient));
            let mut log_q = Vec::with_capacity(c);
            for mut z_row in z.rows_mut() {
                let (sample, _) = q.sample(rng)?;
                log_q.push(q.log_prob(&sample)?);
                z_row.assign(&ndarray::ArrayView1::from(&sample.coords));
            }
            let targets = target
                .broadcast((c, target.len()))
                .expect("row broadcast")
                .to_owned();
            let log_lik = model.log_likelihood(&z, &targets)?;
            for (ll, lq) in log_lik.iter().zip(&log_q) {
                let lw = ll + log_prior - lq;
                if lw > max {
                    sum = sum * (max - lw).exp() + 1.0;
                    max = lw;
                } else {
                    sum += (lw - max).exp();
                }
            }
        }
        let est = max + sum.ln() - (k as f64).ln();
        if !est.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite importance estimate for row {row}"
            )));
        }
        per_example.push(est);
    }
    let mean = per_example.iter().sum::<f64>() / per_example.len().max(1) as f64;
    Ok(IwaeEstimate { per_example, mean })
}
