//! Product-space VAE with one vMF posterior per shell and a uniform prior.
//!
//! The encoder is a single MLP whose last layer holds, for every shell, the
//! unnormalized direction followed by one raw concentration per shell:
//! `[d_1 | d_2 | … | d_n | r_1 … r_n]`. Directions are normalized and
//! `κ_i = min(max(softplus(r_i), KAPPA_FLOOR), κ_max)`. The decoder maps the
//! concatenated latent to Bernoulli logits.
//!
//! Gradients through the sampler are pathwise: the accepted Beta draw and the
//! tangent direction are held fixed.

mod diagnose;
mod iwae;
mod train;

use ndarray::{s, Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn_core::{
    bernoulli_nll_logits, sigmoid, softplus, Checkpoint, LayerBlob, Mlp, MlpTrace, Param, Tensor2,
};
use crate::product_space::{CompositionSpec, ProductVmf};
use crate::sphere_geom::{householder_apply_in_place, householder_axis_norm2, DEGENERATE_NORM};
use crate::vmf::{kl_grad_kappa, kl_to_uniform, sample_tangent, VmfDistribution, WoodConstants};

pub use diagnose::{
    diagnose_shells, ShellDiagnosis, ShellReport, ShellStatus, DEFAULT_IGNORE_THRESHOLD,
};
pub use iwae::{iwae_log_likelihood, IwaeEstimate};
pub use train::{
    aggregate_mean, evaluate, final_evaluation, train, train_seed, warmup_factor, EarlyStopping,
    EpochMetrics, EvalMetrics, MetricsSplit, SeedRun, StopDecision, TrainConfig, TrainReport,
    METRICS_HEADER,
};

/// Lower bound on κ; gradients pass through it unchanged.
pub const KAPPA_FLOOR: f64 = 1e-8;
pub const DEFAULT_KAPPA_MAX: f64 = 5000.0;
pub const DEFAULT_HIDDEN: [usize; 2] = [512, 256];

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub spec: CompositionSpec,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub kappa_max: f64,
    pub image_height: usize,
    pub image_width: usize,
}

/// Per-row posterior parameters for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPosterior {
    /// `B × a`, unit per shell block
    pub mu: Tensor2,
    /// `B × n`
    pub kappa: Tensor2,
    raw_norm: Tensor2,
    dkappa_draw: Tensor2,
}

impl BatchPosterior {
    pub fn rows(&self) -> usize {
        self.mu.nrows()
    }

    pub fn product_vmf(&self, spec: &CompositionSpec, row: usize) -> Result<ProductVmf> {
        let shells = spec
            .shell_ranges()
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let mu = crate::sphere_geom::UnitVector::from_unit(
                    self.mu.slice(s![row, r]).to_vec(),
                    1e-9,
                )?;
                VmfDistribution::new(mu, self.kappa[[row, i]])
            })
            .collect::<Result<Vec<_>>>()?;
        ProductVmf::new(spec.clone(), shells)
    }
}

/// Sampler noise for a batch: the accepted Beta draw per row and shell, and
/// the tangent direction (`k_i` coordinates per shell, shells side by side).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNoise {
    pub eps: Tensor2,
    pub tangents: Tensor2,
    /// Proposals spent per shell, summed over rows.
    pub proposals: Vec<usize>,
}

/// A reparameterized latent batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub z: Tensor2,
    /// Pre-rotation samples `(w, sqrt(1-w²) v)`.
    pre_rotation: Tensor2,
    w: Tensor2,
    dw_dkappa: Tensor2,
}

/// Sums over the rows of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub rows: usize,
    /// Mean of `RE + Σ_i weight_i · KL_i` over rows.
    pub loss: f64,
    pub re_sum: f64,
    pub kl_sum: f64,
    pub shell_kl_sum: Vec<f64>,
    pub shell_kappa_sum: Vec<f64>,
    pub proposals: Vec<usize>,
}

/// Where the sampler noise for a batch comes from.
pub enum NoiseInput<'a, R: Rng + ?Sized> {
    Fresh(&'a mut R),
    Frozen(&'a LatentNoise),
}

/// Everything the backward pass needs.
pub struct BatchCache {
    enc_trace: MlpTrace,
    dec_trace: MlpTrace,
    posterior: BatchPosterior,
    latent: Latent,
    noise: LatentNoise,
    dlogits: Tensor2,
    kl_weights: Vec<f64>,
}

impl BatchCache {
    pub fn noise(&self) -> &LatentNoise {
        &self.noise
    }

    pub fn posterior(&self) -> &BatchPosterior {
        &self.posterior
    }
}

impl VaeModel {
    /// `hidden` lists encoder widths; the decoder mirrors them.
    pub fn new<R: Rng + ?Sized>(
        spec: CompositionSpec,
        image_height: usize,
        image_width: usize,
        hidden: &[usize],
        kappa_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(kappa_max > KAPPA_FLOOR) || !kappa_max.is_finite() {
            return Err(Error::Config(format!(
                "kappa_max must exceed {KAPPA_FLOOR}, got {kappa_max}"
            )));
        }
        let input = image_height * image_width;
        if input == 0 {
            return Err(Error::Config("images must have at least one pixel".into()));
        }
        if hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        let ambient = spec.ambient_dim();
        let mut enc = vec![input];
        enc.extend_from_slice(hidden);
        enc.push(ambient + spec.shell_count());
        let mut dec = vec![ambient];
        dec.extend(hidden.iter().rev());
        dec.push(input);
        let encoder = Mlp::new("enc", &enc, rng);
        let decoder = Mlp::new("dec", &dec, rng);
        Ok(Self {
            spec,
            encoder,
            decoder,
            kappa_max,
            image_height,
            image_width,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.image_height * self.image_width
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.encoder.layers[..self.encoder.layers.len() - 1]
            .iter()
            .map(|l| l.outputs())
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec: self.spec.to_string(),
            image_height: self.image_height,
            image_width: self.image_width,
            kappa_max: self.kappa_max,
            layers: self
                .encoder
                .layers
                .iter()
                .chain(&self.decoder.layers)
                .map(LayerBlob::from_layer)
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let spec = CompositionSpec::parse(&ckpt.spec)
            .map_err(|e| Error::Checkpoint(format!("stored composition `{}`: {e}", ckpt.spec)))?;
        let mut encoder = Mlp { layers: Vec::new() };
        let mut decoder = Mlp { layers: Vec::new() };
        for blob in &ckpt.layers {
            let layer = blob.to_layer()?;
            let (net, index) = match blob.name.split_once('.') {
                Some(("enc", i)) => (&mut encoder, i),
                Some(("dec", i)) => (&mut decoder, i),
                _ => {
                    return Err(Error::Checkpoint(format!(
                        "unexpected layer `{}`",
                        blob.name
                    )))
                }
            };
            if index.parse::<usize>().ok() != Some(net.layers.len()) {
                return Err(Error::Checkpoint(format!(
                    "layer `{}` out of order",
                    blob.name
                )));
            }
            net.layers.push(layer);
        }
        let input = ckpt.image_height * ckpt.image_width;
        let chained = |net: &Mlp| {
            net.layers
                .windows(2)
                .all(|w| w[0].outputs() == w[1].inputs())
        };
        if encoder.layers.is_empty()
            || decoder.layers.is_empty()
            || !chained(&encoder)
            || !chained(&decoder)
            || encoder.input_dim() != input
            || decoder.output_dim() != input
            || encoder.output_dim() != spec.ambient_dim() + spec.shell_count()
            || decoder.input_dim() != spec.ambient_dim()
        {
            return Err(Error::Checkpoint(format!(
                "layer shapes do not fit composition {spec} on {}x{} images",
                ckpt.image_height, ckpt.image_width
            )));
        }
        Ok(Self {
            spec,
            encoder,
            decoder,
            kappa_max: ckpt.kappa_max,
            image_height: ckpt.image_height,
            image_width: ckpt.image_width,
        })
    }

    pub fn round_to_f32(&mut self) {
        for l in self
            .encoder
            .layers
            .iter_mut()
            .chain(&mut self.decoder.layers)
        {
            l.round_to_f32();
        }
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.decoder.zero_grad();
    }

    /// Encoder then decoder parameters, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<Param<'_>> {
        self.encoder
            .layers
            .iter_mut()
            .chain(&mut self.decoder.layers)
            .flat_map(|l| l.params_mut())
            .collect()
    }

    fn check_input(&self, x: &Tensor2) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                context: "vae input",
                left: x.shape().to_vec(),
                right: vec![self.input_dim()],
            });
        }
        Ok(())
    }

    fn posterior_from_head(&self, head: &Tensor2) -> Result<BatchPosterior> {
        let rows = head.nrows();
        let n = self.spec.shell_count();
        let ambient = self.spec.ambient_dim();
        let mut mu = Array2::zeros((rows, ambient));
        let mut kappa = Array2::zeros((rows, n));
        let mut raw_norm = Array2::zeros((rows, n));
        let mut dkappa_draw = Array2::zeros((rows, n));
        for (i, range) in self.spec.shell_ranges().into_iter().enumerate() {
            for row in 0..rows {
                let d = head.slice(s![row, range.clone()]);
                let norm = d.dot(&d).sqrt();
                if !(norm > DEGENERATE_NORM) {
                    return Err(Error::DegeneratePosterior { row, shell: i });
                }
                mu.slice_mut(s![row, range.clone()]).assign(&(&d / norm));
                raw_norm[[row, i]] = norm;
                let r = head[[row, ambient + i]];
                let sp = softplus(r);
                let (k, dk) = if sp >= self.kappa_max {
                    (self.kappa_max, 0.0)
                } else {
                    (sp.max(KAPPA_FLOOR), sigmoid(r))
                };
                kappa[[row, i]] = k;
                dkappa_draw[[row, i]] = dk;
            }
        }
        Ok(BatchPosterior {
            mu,
            kappa,
            raw_norm,
            dkappa_draw,
        })
    }

    pub fn encode(&self, x: &Tensor2) -> Result<BatchPosterior> {
        self.check_input(x)?;
        self.posterior_from_head(&self.encoder.predict(x)?)
    }

    /// Bernoulli logits for latent rows.
    pub fn decode_logits(&self, z: &Tensor2) -> Result<Tensor2> {
        self.decoder.predict(z)
    }

    /// `log p(x | z)` per row.
    pub fn log_likelihood(&self, z: &Tensor2, x: &Tensor2) -> Result<Vec<f64>> {
        let logits = self.decode_logits(z)?;
        Ok(bernoulli_nll_logits(&logits, x)?
            .0
            .iter()
            .map(|l| -l)
            .collect())
    }

    pub fn sample_noise<R: Rng + ?Sized>(
        &self,
        posterior: &BatchPosterior,
        rng: &mut R,
    ) -> Result<LatentNoise> {
        let rows = posterior.rows();
        let n = self.spec.shell_count();
        let mut eps = Array2::zeros((rows, n));
        let mut tangents = Array2::zeros((rows, self.spec.dof()));
        let mut proposals = vec![0; n];
        let ambient: Vec<usize> = self.spec.shell_ambient_dims().collect();
        for row in 0..rows {
            let mut offset = 0;
            for (i, &m) in ambient.iter().enumerate() {
                let wood = WoodConstants::new(m, posterior.kappa[[row, i]])?;
                let (_, e, p) = wood.sample_accepted(rng);
                eps[[row, i]] = e;
                proposals[i] += p;
                let t = sample_tangent(rng, m);
                tangents
                    .slice_mut(s![row, offset..offset + m - 1])
                    .assign(&ArrayView1::from(&t));
                offset += m - 1;
            }
        }
        Ok(LatentNoise {
            eps,
            tangents,
            proposals,
        })
    }

    pub fn reparameterize(
        &self,
        posterior: &BatchPosterior,
        noise: &LatentNoise,
    ) -> Result<Latent> {
        let rows = posterior.rows();
        let n = self.spec.shell_count();
        if noise.eps.shape() != [rows, n] || noise.tangents.shape() != [rows, self.spec.dof()] {
            return Err(Error::Shape {
                context: "latent noise",
                left: noise.eps.shape().to_vec(),
                right: vec![rows, n],
            });
        }
        let ambient = self.spec.ambient_dim();
        let mut z = Array2::zeros((rows, ambient));
        let mut pre_rotation = Array2::zeros((rows, ambient));
        let mut w = Array2::zeros((rows, n));
        let mut dw_dkappa = Array2::zeros((rows, n));
        let ranges = self.spec.shell_ranges();
        for row in 0..rows {
            let mut offset = 0;
            for (i, range) in ranges.iter().enumerate() {
                let m = range.len();
                let wood = WoodConstants::new(m, posterior.kappa[[row, i]])?;
                let e = noise.eps[[row, i]];
                let wi = wood.w_from_eps(e);
                w[[row, i]] = wi;
                dw_dkappa[[row, i]] = wood.dw_dkappa(e);
                let sine = (1.0 - wi * wi).max(0.0).sqrt();
                let mut x = Vec::with_capacity(m);
                x.push(wi);
                x.extend(
                    noise
                        .tangents
                        .slice(s![row, offset..offset + m - 1])
                        .iter()
                        .map(|v| sine * v),
                );
                offset += m - 1;
                pre_rotation
                    .slice_mut(s![row, range.clone()])
                    .assign(&ArrayView1::from(&x));
                let mu = posterior.mu.slice(s![row, range.clone()]);
                householder_apply_in_place(mu.as_slice().expect("row-major"), &mut x)?;
                z.slice_mut(s![row, range.clone()])
                    .assign(&ArrayView1::from(&x));
            }
        }
        Ok(Latent {
            z,
            pre_rotation,
            w,
            dw_dkappa,
        })
    }

    /// Forward pass for one batch. `kl_weights[i]` multiplies shell `i`'s KL
    /// in the loss; the reported sums are unweighted.
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        x: &Tensor2,
        kl_weights: &[f64],
        noise: NoiseInput<'_, R>,
    ) -> Result<(BatchOutcome, BatchCache)> {
        self.check_input(x)?;
        let n = self.spec.shell_count();
        if kl_weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: kl_weights.len(),
            });
        }
        let (head, enc_trace) = self.encoder.forward(x)?;
        let posterior = self.posterior_from_head(&head)?;
        let noise = match noise {
            NoiseInput::Fresh(rng) => self.sample_noise(&posterior, rng)?,
            NoiseInput::Frozen(frozen) => frozen.clone(),
        };
        let latent = self.reparameterize(&posterior, &noise)?;
        let (logits, dec_trace) = self.decoder.forward(&latent.z)?;
        let (re, dlogits) = bernoulli_nll_logits(&logits, x)?;
        let rows = x.nrows();
        let ambient: Vec<usize> = self.spec.shell_ambient_dims().collect();
        let mut shell_kl_sum = vec![0.0; n];
        let mut shell_kappa_sum = vec![0.0; n];
        let mut weighted_kl = 0.0;
        for row in 0..rows {
            for (i, &m) in ambient.iter().enumerate() {
                let k = posterior.kappa[[row, i]];
                let kl = kl_to_uniform(m, k)?;
                shell_kl_sum[i] += kl;
                shell_kappa_sum[i] += k;
                weighted_kl += kl_weights[i] * kl;
            }
        }
        let re_sum = re.sum();
        let kl_sum = shell_kl_sum.iter().sum();
        let loss = (re_sum + weighted_kl) / rows.max(1) as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss {loss}")));
        }
        let outcome = BatchOutcome {
            rows,
            loss,
            re_sum,
            kl_sum,
            shell_kl_sum,
            shell_kappa_sum,
            proposals: noise.proposals.clone(),
        };
        let cache = BatchCache {
            enc_trace,
            dec_trace,
            posterior,
            latent,
            noise,
            dlogits,
            kl_weights: kl_weights.to_vec(),
        };
        Ok((outcome, cache))
    }

    /// Accumulates gradients of the mean batch loss into every layer.
    pub fn backward_batch(&mut self, cache: &BatchCache) -> Result<()> {
        let rows = cache.dlogits.nrows();
        let scale = 1.0 / rows.max(1) as f64;
        let dlogits = &cache.dlogits * scale;
        let dz = self.decoder.backward(&cache.dec_trace, &dlogits)?;
        let ambient = self.spec.ambient_dim();
        let mut dhead = Array2::zeros((rows, ambient + self.spec.shell_count()));
        let post = &cache.posterior;
        let lat = &cache.latent;
        let mut offsets = Vec::new();
        let mut acc = 0;
        for m in self.spec.shell_ambient_dims() {
            offsets.push(acc);
            acc += m - 1;
        }
        for (i, range) in self.spec.shell_ranges().into_iter().enumerate() {
            let m = range.len();
            for row in 0..rows {
                let g = dz.slice(s![row, range.clone()]);
                let mu = post.mu.slice(s![row, range.clone()]);
                let xp = lat.pre_rotation.slice(s![row, range.clone()]);
                // z = x' - 2 r (rᵀx') / ‖r‖², r = e₁ - μ
                let (dxp, dmu) = match householder_axis_norm2(mu.as_slice().expect("row-major")) {
                    None => (g.to_vec(), vec![0.0; m]),
                    Some(n2) => {
                        let r: Vec<f64> = (0..m).map(|j| f64::from(j == 0) - mu[j]).collect();
                        let c: f64 = r.iter().zip(xp.iter()).map(|(a, b)| a * b).sum();
                        let gu: f64 = r.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                        let dxp: Vec<f64> = (0..m).map(|j| g[j] - 2.0 * gu / n2 * r[j]).collect();
                        let dmu: Vec<f64> = (0..m)
                            .map(|j| {
                                2.0 * (c / n2 * g[j] + gu / n2 * xp[j]
                                    - 2.0 * gu * c / (n2 * n2) * r[j])
                            })
                            .collect();
                        (dxp, dmu)
                    }
                };
                let w = lat.w[[row, i]];
                let sine = (1.0 - w * w).max(0.0).sqrt();
                let mut dw = dxp[0];
                if sine > 0.0 {
                    let v = cache
                        .noise
                        .tangents
                        .slice(s![row, offsets[i]..offsets[i] + m - 1]);
                    dw -= w / sine
                        * dxp[1..]
                            .iter()
                            .zip(v.iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                }
                let k = post.kappa[[row, i]];
                let dkappa = dw * lat.dw_dkappa[[row, i]]
                    + scale * cache.kl_weights[i] * kl_grad_kappa(m, k)?;
                dhead[[row, ambient + i]] = dkappa * post.dkappa_draw[[row, i]];
                // μ = d / ‖d‖
                let proj: f64 = mu.iter().zip(&dmu).map(|(a, b)| a * b).sum();
                let inv = 1.0 / post.raw_norm[[row, i]];
                for (j, col) in range.clone().enumerate() {
                    dhead[[row, col]] = (dmu[j] - mu[j] * proj) * inv;
                }
            }
        }
        if let Some(bad) = dhead.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite encoder-head gradient at index {bad}"
            )));
        }
        self.encoder.backward(&cache.enc_trace, &dhead)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
