//! The `sphereprod` command line.
//!
//! Exit codes: `0` success, `1` configuration errors, `2` data errors,
//! `3` divergence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::data_io::{
    binarize_static, load_raw_u8, synthetic_blobs, BinaryImageDataset, DEFAULT_BINARIZATION_SEED,
};
use crate::error::{Error, Result};
use crate::nn_core::{sigmoid, Checkpoint};
use crate::product_space::{CompositionSpec, ProductVmf};
use crate::rng;
use crate::sphere_geom::{normalize, slerp, UnitVector};
use crate::vae::{
    diagnose_shells, train, EpochMetrics, MetricsSplit, TrainConfig, VaeModel, DEFAULT_HIDDEN,
    DEFAULT_IGNORE_THRESHOLD, DEFAULT_KAPPA_MAX, METRICS_HEADER,
};
use crate::vmf::kl_to_uniform;

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

/// Environment variable capping the number of seed workers.
pub const THREADS_ENV: &str = "SPHEREPROD_THREADS";

const SYNTHETIC_DEFAULT_N: usize = 2000;
const SYNTHETIC_DEFAULT_SIDE: usize = 14;

#[derive(Debug, Parser)]
#[command(
    name = "sphereprod",
    version,
    about = "Hyperspherical product-space VAEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model per seed and report table-style results
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation split of a dataset
    Eval(EvalArgs),
    /// Tabulate KL(vMF || uniform) over a (m, kappa) grid
    KlSurface(KlSurfaceArgs),
    /// Decode a great-circle sweep of one shell into a PGM strip
    Interpolate(InterpolateArgs),
    /// Flag ignored shells from a metrics file
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// IDX file, `<name>.u8` raw matrix, or `synthetic[:N[:HxW]]`
    #[arg(long)]
    data: String,
    /// Seed of the one-time Bernoulli binarization (and of synthetic data)
    #[arg(long, default_value_t = DEFAULT_BINARIZATION_SEED)]
    binarize_seed: u64,
    /// Keep only the first N images
    #[arg(long)]
    subset: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    composition: String,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Comma-separated KL weights, one per shell
    #[arg(long, value_delimiter = ',')]
    beta_per_shell: Option<Vec<f64>>,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    /// Defaults to min(100, epochs)
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, default_value_t = 50)]
    lookahead: usize,
    /// Number of seeds; seeds run from --seed-base upwards
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    #[arg(long, default_value_t = 1)]
    seed_base: u64,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Comma-separated encoder widths; the decoder mirrors them
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HIDDEN.to_vec())]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_KAPPA_MAX)]
    kappa_max: f64,
    /// Importance samples for the final LL; 0 skips it
    #[arg(long, default_value_t = 500)]
    iwae_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 500)]
    iwae_k: usize,
    /// Seed of the training run; selects the validation split
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Expected composition; must match the checkpoint
    #[arg(long)]
    composition: Option<String>,
}

#[derive(Debug, Args)]
struct KlSurfaceArgs {
    /// Ambient dimensions `a:b[:step]`, inclusive
    #[arg(long)]
    m_range: String,
    /// Concentrations `lo:hi`
    #[arg(long)]
    kappa_range: String,
    /// Grid points along kappa, both ends included
    #[arg(long, default_value_t = 51)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InterpolateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    shell: usize,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// `sample:SEED` (prior draw) or `data:INDEX` (posterior means)
    #[arg(long, default_value = "sample:0")]
    anchor: String,
    /// Needed for `data:` anchors
    #[arg(long)]
    data: Option<String>,
    #[arg(long, default_value_t = DEFAULT_BINARIZATION_SEED)]
    binarize_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    metrics: PathBuf,
    /// Defaults to the composition in the run's manifest.txt
    #[arg(long)]
    composition: Option<String>,
    #[arg(long, default_value_t = DEFAULT_IGNORE_THRESHOLD)]
    threshold: f64,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence(_) | Error::DegeneratePosterior { .. } => EXIT_DIVERGENCE,
        Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::DimensionOverflow { .. }
        | Error::Data(_)
        | Error::InvalidTarget { .. }
        | Error::Checkpoint(_)
        | Error::Io { .. } => EXIT_DATA,
        _ => EXIT_CONFIG,
    }
}

/// Runs the CLI with explicit output streams; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a, out, err),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::KlSurface(a) => cmd_kl_surface(&a, out),
        Command::Interpolate(a) => cmd_interpolate(&a, out),
        Command::Diagnose(a) => cmd_diagnose(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads and binarizes a dataset; returns it with a stable identifier.
fn load_dataset(
    spec: &str,
    binarize_seed: u64,
    subset: Option<usize>,
) -> Result<(BinaryImageDataset, String)> {
    let (data, id) = if let Some(rest) = spec.strip_prefix("synthetic") {
        let mut n = SYNTHETIC_DEFAULT_N;
        let (mut h, mut w) = (SYNTHETIC_DEFAULT_SIDE, SYNTHETIC_DEFAULT_SIDE);
        let bad = || {
            Error::Config(format!(
                "bad synthetic data spec `{spec}`; expected synthetic[:N[:HxW]]"
            ))
        };
        let mut parts = rest.split(':');
        if parts.next() != Some("") {
            return Err(bad());
        }
        if let Some(p) = parts.next() {
            n = p.parse().map_err(|_| bad())?;
        }
        if let Some(p) = parts.next() {
            let (a, b) = p.split_once('x').ok_or_else(bad)?;
            h = a.parse().map_err(|_| bad())?;
            w = b.parse().map_err(|_| bad())?;
        }
        if parts.next().is_some() || n == 0 || h == 0 || w == 0 {
            return Err(bad());
        }
        (
            synthetic_blobs(n, h, w, binarize_seed),
            format!("synthetic:{n}:{h}x{w}:seed={binarize_seed}"),
        )
    } else {
        let path = Path::new(spec);
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let digest = hex(&Sha256::digest(&bytes));
        let images = if path.extension().is_some_and(|e| e == "u8") {
            load_raw_u8(path)?
        } else {
            crate::data_io::parse_idx(&bytes)?
        };
        (
            binarize_static(&images, binarize_seed)?,
            format!(
                "file:{}:sha256={digest}:binarize_seed={binarize_seed}",
                path.display()
            ),
        )
    };
    if data.is_empty() {
        return Err(Error::Data("dataset holds no images".into()));
    }
    match subset {
        Some(0) => Err(Error::Config("--subset must be >= 1".into())),
        Some(k) => Ok((data.truncate(k), format!("{id}:subset={k}"))),
        None => Ok((data, id)),
    }
}

fn worker_count() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .map_or(available, |cap| cap.min(available.max(1)))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("nan".into(), |x| format!("{x:.4}"))
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let spec = CompositionSpec::parse(&a.composition)?;
    if a.seeds == 0 {
        return Err(Error::Config("--seeds must be >= 1".into()));
    }
    let config = TrainConfig {
        composition: spec.clone(),
        beta: a.beta,
        beta_per_shell: a.beta_per_shell.clone(),
        warmup_epochs: a.warmup.unwrap_or(a.epochs.min(100)),
        max_epochs: a.epochs,
        lookahead: a.lookahead,
        seeds: (0..a.seeds as u64).map(|i| a.seed_base + i).collect(),
        iwae_samples: a.iwae_k,
        batch_size: a.batch,
        learning_rate: a.lr,
        hidden: a.hidden.clone(),
        kappa_max: a.kappa_max,
        val_fraction: 0.1,
    };
    config.validate()?;
    let (data, data_id) = load_dataset(&a.data.data, a.data.binarize_seed, a.data.subset)?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let manifest = manifest_text(&config, &data_id, &a.out);
    write_file(&a.out.join("manifest.txt"), manifest.as_bytes())?;

    let report = train(&config, &data, worker_count())?;
    let mut summary = String::from("run,a,kappa_count,composition,ll,elbo,re,kl\n");
    writeln!(
        out,
        "{:<8} {:>5} {:>3}  {:<16} {:>10} {:>10} {:>10} {:>10}",
        "run", "a", "k", "composition", "LL", "ELBO", "RE", "KL"
    )
    .map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    let mut table_row =
        |label: String, ll: Option<f64>, m: &crate::vae::EvalMetrics| -> Result<()> {
            let ll_text = ll.map_or("nan".into(), |v| v.to_string());
            writeln!(
                summary,
                "{label},{},{},{},{ll_text},{},{},{}",
                spec.ambient_dim(),
                spec.shell_count(),
                spec,
                m.elbo,
                m.re,
                m.kl
            )
            .expect("writing to a String");
            writeln!(
                out,
                "{:<8} {:>5} {:>3}  {:<16} {:>10} {:>10.4} {:>10.4} {:>10.4}",
                label,
                spec.ambient_dim(),
                spec.shell_count(),
                spec.to_string(),
                fmt_opt(ll),
                m.elbo,
                m.re,
                m.kl
            )
            .map_err(|e| Error::io(Path::new("<stdout>"), e))
        };
    for run in &report.runs {
        let dir = a.out.join(format!("seed{}", run.seed));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_file(&dir.join("metrics.csv"), run.metrics_csv().as_bytes())?;
        run.model.to_checkpoint().write(&dir.join("model.ckpt"))?;
        table_row(
            format!("seed{}", run.seed),
            run.final_ll,
            &run.final_metrics,
        )?;
    }
    if !report.runs.is_empty() {
        table_row("mean".into(), report.mean_ll, &report.mean)?;
    }
    for (seed, e) in &report.failures {
        writeln!(summary, "seed{seed},diverged,,,,,,").expect("writing to a String");
        let _ = writeln!(err, "error: seed {seed}: {e}");
    }
    write_file(&a.out.join("summary.csv"), summary.as_bytes())?;
    Ok(report.failures.first().map_or(0, |(_, e)| exit_code(e)))
}

fn manifest_text(config: &TrainConfig, data_id: &str, out: &Path) -> String {
    let join = |v: &[String]| v.join(",");
    let mut body = String::new();
    let mut kv = |k: &str, v: String| writeln!(body, "{k}={v}").expect("writing to a String");
    kv("tool", format!("sphereprod {}", env!("CARGO_PKG_VERSION")));
    kv("code_hash", env!("SPHEREPROD_SOURCE_HASH").into());
    kv("composition", config.composition.to_string());
    kv("ambient_dim", config.composition.ambient_dim().to_string());
    kv("dof", config.composition.dof().to_string());
    kv("data", data_id.into());
    kv(
        "seeds",
        join(&config.seeds.iter().map(u64::to_string).collect::<Vec<_>>()),
    );
    kv("beta", config.beta.to_string());
    kv(
        "beta_per_shell",
        config.beta_per_shell.as_ref().map_or("none".into(), |b| {
            join(&b.iter().map(f64::to_string).collect::<Vec<_>>())
        }),
    );
    kv("epochs", config.max_epochs.to_string());
    kv("warmup", config.warmup_epochs.to_string());
    kv("lookahead", config.lookahead.to_string());
    kv("batch", config.batch_size.to_string());
    kv("lr", config.learning_rate.to_string());
    kv(
        "hidden",
        join(
            &config
                .hidden
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>(),
        ),
    );
    kv("kappa_max", config.kappa_max.to_string());
    kv("iwae_k", config.iwae_samples.to_string());
    kv("val_fraction", config.val_fraction.to_string());
    kv(
        "split",
        "seeded per run; validation rows chosen by the run seed".into(),
    );
    kv(
        "checkpoint",
        "best validation ELBO, parameters stored as f32".into(),
    );
    kv("output_dir", out.display().to_string());
    let hash = hex(&Sha256::digest(body.as_bytes()));
    body.push_str(&format!("config_hash={hash}\n"));
    body
}

fn load_model(path: &Path) -> Result<VaeModel> {
    VaeModel::from_checkpoint(&Checkpoint::read(path)?)
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let model = load_model(&a.checkpoint)?;
    if let Some(text) = &a.composition {
        let wanted = CompositionSpec::parse(text)?;
        if wanted != model.spec {
            return Err(Error::Config(format!(
                "checkpoint composition {} does not match --composition {wanted}",
                model.spec
            )));
        }
    }
    let (data, _) = load_dataset(&a.data.data, a.data.binarize_seed, a.data.subset)?;
    if data.dim() != model.input_dim() {
        return Err(Error::Config(format!(
            "checkpoint expects {}x{} images ({} pixels, composition {}) but the data has {}x{}",
            model.image_height,
            model.image_width,
            model.input_dim(),
            model.spec,
            data.height,
            data.width
        )));
    }
    let (_, val) = data.train_val_split(a.seed, 0.1);
    let (m, ll) = crate::vae::final_evaluation(&model, &val, a.seed, a.iwae_k)?;
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join("|")
    };
    writeln!(
        out,
        "composition={}\nimages={}\niwae_k={}\nll={}\nelbo={}\nre={}\nkl={}\nshell_kls={}\nshell_kappas={}",
        model.spec,
        val.len(),
        a.iwae_k,
        ll.map_or("nan".into(), |v| v.to_string()),
        m.elbo,
        m.re,
        m.kl,
        join(&m.shell_kls),
        join(&m.shell_kappas)
    )
    .map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    Ok(0)
}

fn parse_range<T: std::str::FromStr>(text: &str, flag: &str) -> Result<Vec<T>> {
    text.split(':')
        .map(|p| p.trim().parse::<T>())
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|_| Error::Config(format!("{flag}: cannot parse `{text}`")))
}

/// `m,kappa,kl` rows for every grid point, `m`-major.
pub fn kl_surface_csv(ms: &[usize], kappas: &[f64]) -> Result<String> {
    let mut csv = String::from("m,kappa,kl\n");
    for &m in ms {
        for &k in kappas {
            writeln!(csv, "{m},{k},{}", kl_to_uniform(m, k)?).expect("writing to a String");
        }
    }
    Ok(csv)
}

fn cmd_kl_surface(a: &KlSurfaceArgs, out: &mut dyn Write) -> Result<i32> {
    let m_parts: Vec<usize> = parse_range(&a.m_range, "--m-range")?;
    let (lo, hi, step) = match m_parts[..] {
        [lo, hi] => (lo, hi, 1),
        [lo, hi, step] => (lo, hi, step),
        _ => return Err(Error::Config("--m-range expects a:b or a:b:step".into())),
    };
    if lo < 2 || hi < lo || step == 0 {
        return Err(Error::Config(format!(
            "--m-range {}: need 2 <= a <= b and step >= 1",
            a.m_range
        )));
    }
    let k_parts: Vec<f64> = parse_range(&a.kappa_range, "--kappa-range")?;
    let [k_lo, k_hi] = k_parts[..] else {
        return Err(Error::Config("--kappa-range expects lo:hi".into()));
    };
    if !(k_lo >= 0.0) || !(k_hi >= k_lo) || !k_hi.is_finite() {
        return Err(Error::Config(format!(
            "--kappa-range {}: need 0 <= lo <= hi",
            a.kappa_range
        )));
    }
    if a.steps == 0 {
        return Err(Error::Config("--steps must be >= 1".into()));
    }
    let ms: Vec<usize> = (lo..=hi).step_by(step).collect();
    let kappas: Vec<f64> = (0..a.steps)
        .map(|i| {
            if a.steps == 1 {
                k_lo
            } else {
                k_lo + (k_hi - k_lo) * i as f64 / (a.steps - 1) as f64
            }
        })
        .collect();
    let csv = kl_surface_csv(&ms, &kappas)?;
    write_file(&a.out, csv.as_bytes())?;
    writeln!(
        out,
        "wrote {} rows to {}",
        ms.len() * kappas.len(),
        a.out.display()
    )
    .map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    Ok(0)
}

/// Points along a great circle through `mu`: a full turn for circles, half
/// a turn (`μ → t → -μ`) for higher spheres. `steps = 1` yields `mu`.
pub fn great_circle_sweep(mu: &UnitVector, steps: usize) -> Result<Vec<UnitVector>> {
    let m = mu.dim();
    let c = mu.as_slice();
    if steps <= 1 {
        return Ok(vec![mu.clone()]);
    }
    if m == 2 {
        let t = [-c[1], c[0]];
        return (0..steps)
            .map(|j| {
                let th = 2.0 * std::f64::consts::PI * j as f64 / steps as f64;
                normalize(&[
                    th.cos() * c[0] + th.sin() * t[0],
                    th.cos() * c[1] + th.sin() * t[1],
                ])
            })
            .collect();
    }
    // tangent from the axis least aligned with μ
    let axis = (0..m)
        .min_by(|&i, &j| c[i].abs().total_cmp(&c[j].abs()))
        .expect("m >= 2");
    let raw: Vec<f64> = (0..m)
        .map(|i| f64::from(i == axis) - c[axis] * c[i])
        .collect();
    let t = normalize(&raw)?;
    (0..steps)
        .map(|j| slerp(mu, &t, 2.0 * j as f64 / (steps - 1) as f64))
        .collect()
}

/// Binary PGM (P5) with `frames` laid side by side; pixel values in `[0, 1]`.
pub fn pgm_strip(frames: &[Vec<f64>], height: usize, width: usize) -> Vec<u8> {
    let mut bytes = format!("P5\n{} {}\n255\n", frames.len() * width, height).into_bytes();
    for y in 0..height {
        for f in frames {
            bytes.extend(
                f[y * width..(y + 1) * width]
                    .iter()
                    .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
            );
        }
    }
    bytes
}

fn cmd_interpolate(a: &InterpolateArgs, out: &mut dyn Write) -> Result<i32> {
    let model = load_model(&a.checkpoint)?;
    let n = model.spec.shell_count();
    if a.shell >= n {
        return Err(Error::Config(format!(
            "--shell {} out of range; {} has {n} shells",
            a.shell, model.spec
        )));
    }
    if a.steps == 0 {
        return Err(Error::Config("--steps must be >= 1".into()));
    }
    let bad_anchor = || {
        Error::Config(format!(
            "--anchor `{}`: expected sample:SEED or data:INDEX",
            a.anchor
        ))
    };
    let (kind, value) = a.anchor.split_once(':').ok_or_else(bad_anchor)?;
    let base: Vec<f64> = match kind {
        "sample" => {
            let seed: u64 = value.parse().map_err(|_| bad_anchor())?;
            let prior = ProductVmf::uniform(model.spec.clone())?;
            prior.sample(&mut rng::stream(seed, "anchor", 0))?.0.coords
        }
        "data" => {
            let index: usize = value.parse().map_err(|_| bad_anchor())?;
            let source = a
                .data
                .as_deref()
                .ok_or_else(|| Error::Config("data anchors need --data".into()))?;
            let (data, _) = load_dataset(source, a.binarize_seed, None)?;
            if data.dim() != model.input_dim() {
                return Err(Error::Config(format!(
                    "checkpoint expects {} pixels, data has {}",
                    model.input_dim(),
                    data.dim()
                )));
            }
            if index >= data.len() {
                return Err(Error::Config(format!(
                    "--anchor data:{index} beyond {} images",
                    data.len()
                )));
            }
            let x = data.images.select(ndarray::Axis(0), &[index]);
            model.encode(&x)?.mu.row(0).to_vec()
        }
        _ => return Err(bad_anchor()),
    };
    let range = model.spec.shell_ranges()[a.shell].clone();
    let mu = normalize(&base[range.clone()])?;
    let sweep = great_circle_sweep(&mu, a.steps)?;
    let mut z = ndarray::Array2::zeros((sweep.len(), base.len()));
    for (mut row, point) in z.rows_mut().into_iter().zip(&sweep) {
        row.assign(&ndarray::ArrayView1::from(&base));
        row.slice_mut(ndarray::s![range.clone()])
            .assign(&ndarray::ArrayView1::from(point.as_slice()));
    }
    let logits = model.decode_logits(&z)?;
    let frames: Vec<Vec<f64>> = logits
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&l| sigmoid(l)).collect())
        .collect();
    write_file(
        &a.out,
        &pgm_strip(&frames, model.image_height, model.image_width),
    )?;
    let variation: f64 = frames
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(p, q)| (p - q).abs())
                .sum::<f64>()
                / w[0].len() as f64
        })
        .sum();
    writeln!(
        out,
        "shell={} sphere=S^{} steps={} l1_variation={variation}\nwrote {}",
        a.shell,
        model.spec.dims()[a.shell],
        sweep.len(),
        a.out.display()
    )
    .map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    Ok(0)
}

/// The composition recorded in `manifest.txt` next to `metrics` or one level up.
fn manifest_composition(metrics: &Path) -> Result<CompositionSpec> {
    let dir = metrics.parent().unwrap_or(Path::new("."));
    for candidate in [
        dir.join("manifest.txt"),
        dir.join("..").join("manifest.txt"),
    ] {
        if let Ok(text) = std::fs::read_to_string(&candidate) {
            if let Some(v) = text.lines().find_map(|l| l.strip_prefix("composition=")) {
                return CompositionSpec::parse(v);
            }
        }
    }
    Err(Error::Config(format!(
        "no --composition given and no manifest.txt found near {}",
        metrics.display()
    )))
}

/// Parses a metrics history; returns the rows in file order.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(METRICS_HEADER) {
        return Err(Error::Data(format!(
            "metrics header must be `{METRICS_HEADER}`"
        )));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(EpochMetrics::parse_csv_row)
        .collect()
}

fn cmd_diagnose(a: &DiagnoseArgs, out: &mut dyn Write) -> Result<i32> {
    let text = std::fs::read_to_string(&a.metrics).map_err(|e| Error::io(&a.metrics, e))?;
    let rows = parse_metrics_csv(&text)?;
    let row = rows
        .iter()
        .rev()
        .find(|r| r.split == MetricsSplit::Best)
        .or_else(|| rows.iter().rev().find(|r| r.split == MetricsSplit::Val))
        .ok_or_else(|| Error::Data("metrics file has no val or best rows".into()))?;
    let spec = match &a.composition {
        Some(t) => CompositionSpec::parse(t)?,
        None => manifest_composition(&a.metrics)?,
    };
    if row.metrics.shell_kls.len() != spec.shell_count() {
        return Err(Error::Data(format!(
            "metrics list {} shells but {spec} has {}",
            row.metrics.shell_kls.len(),
            spec.shell_count()
        )));
    }
    let report = diagnose_shells(
        &spec,
        &row.metrics.shell_kls,
        Some(&row.metrics.shell_kappas),
        a.threshold,
    );
    let mut text = format!(
        "composition={spec} source={}@epoch{} threshold={}\n{:<6} {:<6} {:>12} {:>12}  status\n",
        row.split.as_str(),
        row.epoch,
        a.threshold,
        "shell",
        "sphere",
        "kl",
        "mean_kappa"
    );
    for s in &report.shells {
        writeln!(
            text,
            "{:<6} {:<6} {:>12.6} {:>12}  {}",
            s.shell,
            format!("S^{}", s.dof),
            s.kl,
            s.mean_kappa.map_or("nan".into(), |k| format!("{k:.4}")),
            s.status.as_str()
        )
        .expect("writing to a String");
    }
    writeln!(
        text,
        "effective_dof={} total_dof={} ignored={}",
        report.effective_dof,
        report.total_dof,
        report.ignored_count()
    )
    .expect("writing to a String");
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    Ok(0)
}
