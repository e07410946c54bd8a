use std::fmt::Write as _;

use ndarray::Axis;

use super::{iwae_log_likelihood, NoiseInput, VaeModel, DEFAULT_HIDDEN, DEFAULT_KAPPA_MAX};
use crate::data_io::{batches, BinaryImageDataset};
use crate::error::{Error, Result};
use crate::nn_core::{adam_step, AdamConfig, OptimizerState};
use crate::product_space::CompositionSpec;
use crate::rng;

pub const METRICS_HEADER: &str = "epoch,split,elbo,re,kl,ll,shell_kls,shell_kappas,shell_accept";
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub composition: CompositionSpec,
    pub beta: f64,
    /// Replaces `beta` shell by shell when present.
    pub beta_per_shell: Option<Vec<f64>>,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub lookahead: usize,
    pub seeds: Vec<u64>,
    /// `0` skips the importance-sampled estimate.
    pub iwae_samples: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub kappa_max: f64,
    pub val_fraction: f64,
}

impl TrainConfig {
    pub fn new(composition: CompositionSpec) -> Self {
        Self {
            composition,
            beta: 1.0,
            beta_per_shell: None,
            warmup_epochs: 100,
            max_epochs: 300,
            lookahead: 50,
            seeds: vec![1, 2, 3],
            iwae_samples: 500,
            batch_size: 100,
            learning_rate: 1e-3,
            hidden: DEFAULT_HIDDEN.to_vec(),
            kappa_max: DEFAULT_KAPPA_MAX,
            val_fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return fail(format!("beta must be > 0, got {}", self.beta));
        }
        if let Some(b) = &self.beta_per_shell {
            if b.len() != self.composition.shell_count() {
                return fail(format!(
                    "{} per-shell betas for {} shells",
                    b.len(),
                    self.composition.shell_count()
                ));
            }
            if b.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return fail("per-shell betas must be finite and >= 0".into());
            }
        }
        if self.warmup_epochs > self.max_epochs {
            return fail(format!(
                "warmup ({}) exceeds max epochs ({})",
                self.warmup_epochs, self.max_epochs
            ));
        }
        if self.max_epochs == 0 {
            return fail("at least one epoch is required".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return fail(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            ));
        }
        Ok(())
    }

    /// Per-shell KL weights at `epoch`.
    pub fn kl_weights(&self, epoch: usize) -> Vec<f64> {
        let f = warmup_factor(epoch, self.warmup_epochs);
        match &self.beta_per_shell {
            Some(b) => b.iter().map(|v| v * f).collect(),
            None => vec![self.beta * f; self.composition.shell_count()],
        }
    }
}

/// `min(1, epoch / warmup)`; `1` when there is no warm-up.
pub fn warmup_factor(epoch: usize, warmup: usize) -> f64 {
    if warmup == 0 || epoch >= warmup {
        1.0
    } else {
        epoch as f64 / warmup as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsSplit {
    Train,
    Val,
    Best,
}

impl MetricsSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricsSplit::Train => "train",
            MetricsSplit::Val => "val",
            MetricsSplit::Best => "best",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Self::Train),
            "val" => Some(Self::Val),
            "best" => Some(Self::Best),
            _ => None,
        }
    }
}

/// Per-datum means over a dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    /// `-(re + kl)`
    pub elbo: f64,
    pub re: f64,
    pub kl: f64,
    pub shell_kls: Vec<f64>,
    pub shell_kappas: Vec<f64>,
    pub shell_accept: Vec<f64>,
}

impl EvalMetrics {
    fn from_sums(
        rows: usize,
        re: f64,
        shell_kl: &[f64],
        shell_kappa: &[f64],
        proposals: &[usize],
    ) -> Self {
        let n = rows.max(1) as f64;
        let shell_kls: Vec<f64> = shell_kl.iter().map(|v| v / n).collect();
        let kl = shell_kls.iter().sum::<f64>();
        let re = re / n;
        Self {
            elbo: -(re + kl),
            re,
            kl,
            shell_kls,
            shell_kappas: shell_kappa.iter().map(|v| v / n).collect(),
            shell_accept: proposals
                .iter()
                .map(|&p| if p == 0 { 1.0 } else { rows as f64 / p as f64 })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: MetricsSplit,
    pub metrics: EvalMetrics,
    pub ll: Option<f64>,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join("|")
        };
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.split.as_str(),
            m.elbo,
            m.re,
            m.kl,
            self.ll.map_or("nan".to_string(), |v| v.to_string()),
            join(&m.shell_kls),
            join(&m.shell_kappas),
            join(&m.shell_accept)
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let bad = |what: &str| Error::Data(format!("malformed metrics row ({what}): `{line}`"));
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("number"));
        let list = |s: &str| -> Result<Vec<f64>> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split('|').map(num).collect()
        };
        let ll = num(fields[5])?;
        Ok(Self {
            epoch: fields[0].parse().map_err(|_| bad("epoch"))?,
            split: MetricsSplit::parse(fields[1]).ok_or_else(|| bad("split"))?,
            metrics: EvalMetrics {
                elbo: num(fields[2])?,
                re: num(fields[3])?,
                kl: num(fields[4])?,
                shell_kls: list(fields[6])?,
                shell_kappas: list(fields[7])?,
                shell_accept: list(fields[8])?,
            },
            ll: (!ll.is_nan()).then_some(ll),
        })
    }
}

/// Tracks the best validation score; stops once `lookahead` further epochs
/// have passed without improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub lookahead: usize,
    pub best: f64,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(lookahead: usize) -> Self {
        Self {
            lookahead,
            best: f64::NEG_INFINITY,
            best_epoch: None,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        if score > self.best || self.best_epoch.is_none() {
            self.best = score;
            self.best_epoch = Some(epoch);
            return StopDecision::Improved;
        }
        match self.best_epoch {
            Some(b) if epoch - b > self.lookahead => StopDecision::Stop,
            _ => StopDecision::Continue,
        }
    }
}

/// Single-sample ELBO over `data`, evaluated in fixed-order chunks.
pub fn evaluate<R: rand::Rng + ?Sized>(
    model: &VaeModel,
    data: &BinaryImageDataset,
    rng: &mut R,
) -> Result<EvalMetrics> {
    let n = model.spec.shell_count();
    let zeros = vec![0.0; n];
    let mut re = 0.0;
    let mut shell_kl = vec![0.0; n];
    let mut shell_kappa = vec![0.0; n];
    let mut proposals = vec![0; n];
    for chunk in data.images.axis_chunks_iter(Axis(0), EVAL_BATCH) {
        let (out, _) =
            model.forward_batch(&chunk.to_owned(), &zeros, NoiseInput::Fresh(&mut *rng))?;
        re += out.re_sum;
        for i in 0..n {
            shell_kl[i] += out.shell_kl_sum[i];
            shell_kappa[i] += out.shell_kappa_sum[i];
            proposals[i] += out.proposals[i];
        }
    }
    Ok(EvalMetrics::from_sums(
        data.len(),
        re,
        &shell_kl,
        &shell_kappa,
        &proposals,
    ))
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Best-validation model, parameters rounded to `f32`.
    pub model: VaeModel,
    pub final_metrics: EvalMetrics,
    pub final_ll: Option<f64>,
}

impl SeedRun {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for row in &self.history {
            writeln!(out, "{}", row.csv_row()).expect("writing to a String");
        }
        out
    }
}

/// Trains one seed on a seeded 90/10 (by default) split of `data`.
pub fn train_seed(config: &TrainConfig, data: &BinaryImageDataset, seed: u64) -> Result<SeedRun> {
    config.validate()?;
    let (train_set, val_set) = data.train_val_split(seed, config.val_fraction);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(format!(
            "{} images are too few to split",
            data.len()
        )));
    }
    let mut model = VaeModel::new(
        config.composition.clone(),
        data.height,
        data.width,
        &config.hidden,
        config.kappa_max,
        &mut rng::stream(seed, "init", 0),
    )?;
    let mut opt = OptimizerState::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let n = config.composition.shell_count();
    let mut history = Vec::new();
    let mut stopper = EarlyStopping::new(config.lookahead);
    let mut best_model = model.clone();
    let mut epochs_run = 0;
    for epoch in 0..config.max_epochs {
        let weights = config.kl_weights(epoch);
        let mut noise_rng = rng::stream(seed, "train", epoch as u64);
        let mut re = 0.0;
        let mut shell_kl = vec![0.0; n];
        let mut shell_kappa = vec![0.0; n];
        let mut proposals = vec![0; n];
        for (b, rows) in batches(train_set.len(), config.batch_size, seed, epoch as u64)
            .iter()
            .enumerate()
        {
            let x = train_set.images.select(Axis(0), rows);
            let context = |e: Error| match e {
                Error::Divergence(msg) => {
                    Error::Divergence(format!("seed {seed} epoch {epoch} batch {b}: {msg}"))
                }
                other => other,
            };
            let (out, cache) = model
                .forward_batch(&x, &weights, NoiseInput::Fresh(&mut noise_rng))
                .map_err(context)?;
            model.zero_grad();
            model.backward_batch(&cache).map_err(context)?;
            adam_step(&mut model.params_mut(), &mut opt).map_err(context)?;
            re += out.re_sum;
            for i in 0..n {
                shell_kl[i] += out.shell_kl_sum[i];
                shell_kappa[i] += out.shell_kappa_sum[i];
                proposals[i] += out.proposals[i];
            }
        }
        history.push(EpochMetrics {
            epoch,
            split: MetricsSplit::Train,
            metrics: EvalMetrics::from_sums(
                train_set.len(),
                re,
                &shell_kl,
                &shell_kappa,
                &proposals,
            ),
            ll: None,
        });
        let val = evaluate(
            &model,
            &val_set,
            &mut rng::stream(seed, "val", epoch as u64),
        )?;
        let score = val.elbo;
        history.push(EpochMetrics {
            epoch,
            split: MetricsSplit::Val,
            metrics: val,
            ll: None,
        });
        epochs_run = epoch + 1;
        match stopper.observe(epoch, score) {
            StopDecision::Improved => best_model = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let best_epoch = stopper.best_epoch.unwrap_or(0);
    let mut model = best_model;
    model.round_to_f32();
    let (final_metrics, final_ll) = final_evaluation(&model, &val_set, seed, config.iwae_samples)?;
    history.push(EpochMetrics {
        epoch: best_epoch,
        split: MetricsSplit::Best,
        metrics: final_metrics.clone(),
        ll: final_ll,
    });
    Ok(SeedRun {
        seed,
        history,
        best_epoch,
        epochs_run,
        model,
        final_metrics,
        final_ll,
    })
}

/// Metrics reported for a finished model; shared with checkpoint evaluation
/// so both agree exactly.
pub fn final_evaluation(
    model: &VaeModel,
    val_set: &BinaryImageDataset,
    seed: u64,
    iwae_samples: usize,
) -> Result<(EvalMetrics, Option<f64>)> {
    let metrics = evaluate(model, val_set, &mut rng::stream(seed, "final", 0))?;
    let ll = if iwae_samples > 0 {
        Some(
            iwae_log_likelihood(
                model,
                &val_set.images,
                iwae_samples,
                &mut rng::stream(seed, "iwae", 0),
            )?
            .mean,
        )
    } else {
        None
    };
    Ok((metrics, ll))
}

#[derive(Debug)]
pub struct TrainReport {
    pub runs: Vec<SeedRun>,
    /// Seeds whose run aborted, with the error that stopped them.
    pub failures: Vec<(u64, Error)>,
    /// Means over the successful runs.
    pub mean: EvalMetrics,
    pub mean_ll: Option<f64>,
}

/// Arithmetic mean over seeds.
pub fn aggregate_mean(runs: &[SeedRun]) -> (EvalMetrics, Option<f64>) {
    let k = runs.len().max(1) as f64;
    let mean = |f: &dyn Fn(&SeedRun) -> f64| runs.iter().map(f).sum::<f64>() / k;
    let mean_vec = |f: &dyn Fn(&SeedRun) -> &Vec<f64>| -> Vec<f64> {
        let len = runs.first().map_or(0, |r| f(r).len());
        (0..len)
            .map(|i| runs.iter().map(|r| f(r)[i]).sum::<f64>() / k)
            .collect()
    };
    let metrics = EvalMetrics {
        elbo: mean(&|r| r.final_metrics.elbo),
        re: mean(&|r| r.final_metrics.re),
        kl: mean(&|r| r.final_metrics.kl),
        shell_kls: mean_vec(&|r| &r.final_metrics.shell_kls),
        shell_kappas: mean_vec(&|r| &r.final_metrics.shell_kappas),
        shell_accept: mean_vec(&|r| &r.final_metrics.shell_accept),
    };
    let ll = runs
        .iter()
        .map(|r| r.final_ll)
        .collect::<Option<Vec<f64>>>()
        .filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / k);
    (metrics, ll)
}

/// Trains every seed in `config.seeds`, using up to `workers` threads. Runs
/// share nothing and results come back in seed order. A failing seed does
/// not stop the others.
pub fn train(
    config: &TrainConfig,
    data: &BinaryImageDataset,
    workers: usize,
) -> Result<TrainReport> {
    config.validate()?;
    let workers = workers.clamp(1, config.seeds.len());
    let mut results: Vec<Option<Result<SeedRun>>> = (0..config.seeds.len()).map(|_| None).collect();
    for (chunk_seeds, chunk_out) in config
        .seeds
        .chunks(workers)
        .zip(results.chunks_mut(workers))
    {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk_seeds
                .iter()
                .map(|&seed| scope.spawn(move || train_seed(config, data, seed)))
                .collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot =
                    Some(h.join().unwrap_or_else(|_| {
                        Err(Error::Divergence("training thread panicked".into()))
                    }));
            }
        });
    }
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (&seed, r) in config.seeds.iter().zip(results) {
        match r.expect("every seed ran") {
            Ok(run) => runs.push(run),
            Err(e @ (Error::Config(_) | Error::Data(_))) => return Err(e),
            Err(e) => failures.push((seed, e)),
        }
    }
    let (mean, mean_ll) = aggregate_mean(&runs);
    Ok(TrainReport {
        runs,
        failures,
        mean,
        mean_ll,
    })
}
