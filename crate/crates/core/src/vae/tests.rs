use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data_io::synthetic_blobs;

fn toy_model(spec: &str, h: usize, w: usize, hidden: &[usize], seed: u64) -> VaeModel {
    VaeModel::new(
        CompositionSpec::parse(spec).unwrap(),
        h,
        w,
        hidden,
        DEFAULT_KAPPA_MAX,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

fn toy_batch() -> Tensor2 {
    array![
        [1.0, 0.0, 1.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 1.0, 1.0],
        [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
    ]
}

#[test]
fn encode_shapes_and_units() {
    let model = toy_model("s2x1x4", 2, 3, &[5], 1);
    let x = toy_batch();
    let post = model.encode(&x).unwrap();
    assert_eq!(post.mu.shape(), &[4, 3 + 2 + 5]);
    assert_eq!(post.kappa.shape(), &[4, 3]);
    for row in 0..4 {
        for r in model.spec.shell_ranges() {
            let block = post.mu.slice(s![row, r]);
            assert!((block.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
        }
    }
    assert!(post.kappa.iter().all(|&k| k > 0.0));
    let twin = array![
        [1.0, 0.0, 1.0, 1.0, 0.0, 0.0],
        [1.0, 0.0, 1.0, 1.0, 0.0, 0.0]
    ];
    let p = model.encode(&twin).unwrap();
    assert_eq!(p.mu.row(0), p.mu.row(1));
    assert_eq!(p.kappa.row(0), p.kappa.row(1));
}

#[test]
fn degenerate_direction_is_reported() {
    let mut model = toy_model("s2x1", 2, 3, &[4], 2);
    let last = model.encoder.layers.last_mut().unwrap();
    // shell 1 occupies columns 3..5
    last.weights.slice_mut(s![.., 3..5]).fill(0.0);
    last.biases.slice_mut(s![3..5]).fill(0.0);
    assert!(matches!(
        model.encode(&toy_batch()),
        Err(Error::DegeneratePosterior { row: 0, shell: 1 })
    ));
}

#[test]
fn kappa_head_saturates_at_max() {
    let mut model = toy_model("s3", 2, 3, &[4], 3);
    model.kappa_max = 50.0;
    let last = model.encoder.layers.last_mut().unwrap();
    last.biases[4] = 1e4;
    let post = model.encode(&toy_batch()).unwrap();
    assert!(post.kappa.iter().all(|&k| k == 50.0));
}

#[test]
fn warmup_schedule() {
    assert_eq!(warmup_factor(0, 100), 0.0);
    assert_eq!(warmup_factor(50, 100), 0.5);
    assert_eq!(warmup_factor(100, 100), 1.0);
    assert_eq!(warmup_factor(250, 100), 1.0);
    assert_eq!(warmup_factor(0, 0), 1.0);
    let mut cfg = TrainConfig::new(CompositionSpec::parse("s1x2").unwrap());
    cfg.beta = 2.0;
    assert_eq!(cfg.kl_weights(25), vec![0.5, 0.5]);
    cfg.beta_per_shell = Some(vec![1.0, 4.0]);
    assert_eq!(cfg.kl_weights(50), vec![0.5, 2.0]);
}

#[test]
fn epoch_zero_loss_is_reconstruction_only() {
    let model = toy_model("s2x1", 2, 3, &[4], 4);
    let x = toy_batch();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = TrainConfig::new(model.spec.clone());
    let (out, _) = model
        .forward_batch(&x, &cfg.kl_weights(0), NoiseInput::Fresh(&mut rng))
        .unwrap();
    assert!(out.kl_sum > 0.0);
    assert_eq!(out.loss, out.re_sum / 4.0);
}

#[test]
fn elbo_identity() {
    let model = toy_model("s2x1", 2, 3, &[4], 5);
    let data = crate::data_io::BinaryImageDataset::new(toy_batch(), 2, 3).unwrap();
    let m = evaluate(&model, &data, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!((m.elbo + m.re + m.kl).abs() < 1e-6);
    assert!((m.kl - m.shell_kls.iter().sum::<f64>()).abs() < 1e-12);
}

fn frozen_loss(model: &VaeModel, x: &Tensor2, weights: &[f64], noise: &LatentNoise) -> f64 {
    model
        .forward_batch::<ChaCha8Rng>(x, weights, NoiseInput::Frozen(noise))
        .unwrap()
        .0
        .loss
}

#[test]
fn frozen_noise_gradient_check() {
    for spec in ["s2x1", "s4", "s1*3"] {
        let model = toy_model(spec, 2, 3, &[5], 6);
        let x = toy_batch();
        let weights = vec![0.7; model.spec.shell_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (_, cache) = model
            .forward_batch(&x, &weights, NoiseInput::Fresh(&mut rng))
            .unwrap();
        let mut graded = model.clone();
        graded.zero_grad();
        graded.backward_batch(&cache).unwrap();
        let noise = cache.noise().clone();
        let h = 1e-6;
        let last = model.encoder.layers.len() - 1;
        let head_width = model.encoder.output_dim();
        for col in 0..head_width {
            let mut p = model.clone();
            p.encoder.layers[last].biases[col] += h;
            let mut m = model.clone();
            m.encoder.layers[last].biases[col] -= h;
            let fd = (frozen_loss(&p, &x, &weights, &noise)
                - frozen_loss(&m, &x, &weights, &noise))
                / (2.0 * h);
            let an = graded.encoder.layers[last].grad_biases[col];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
            assert!(
                rel < 1e-3,
                "{spec} head column {col}: fd {fd} vs analytic {an}"
            );
        }
        for (i, j) in [(0, 0), (3, 2), (5, 4)] {
            let mut p = model.clone();
            p.encoder.layers[0].weights[[i, j]] += h;
            let mut m = model.clone();
            m.encoder.layers[0].weights[[i, j]] -= h;
            let fd = (frozen_loss(&p, &x, &weights, &noise)
                - frozen_loss(&m, &x, &weights, &noise))
                / (2.0 * h);
            let an = graded.encoder.layers[0].grad_weights[[i, j]];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
            assert!(
                rel < 1e-3,
                "{spec} first layer ({i},{j}): fd {fd} vs analytic {an}"
            );
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let mut model = toy_model("s10x9*3", 2, 3, &[7, 6], 7);
    model.round_to_f32();
    let bytes = model.to_checkpoint().to_bytes();
    let back = VaeModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.hidden_widths(), vec![7, 6]);
}

#[test]
fn checkpoint_shape_mismatch_is_rejected() {
    let mut ckpt = toy_model("s4", 2, 3, &[4], 8).to_checkpoint();
    ckpt.spec = "s3".into();
    assert!(VaeModel::from_checkpoint(&ckpt).is_err());
}

#[test]
fn early_stopping_lookahead_one() {
    let mut stop = EarlyStopping::new(1);
    assert_eq!(stop.observe(0, -20.0), StopDecision::Improved);
    assert_eq!(stop.observe(1, -10.0), StopDecision::Improved);
    assert_eq!(stop.observe(2, -11.0), StopDecision::Continue);
    assert_eq!(stop.observe(3, -12.0), StopDecision::Stop);
    assert_eq!(stop.best_epoch, Some(1));
}

#[test]
fn metrics_row_round_trip() {
    let row = EpochMetrics {
        epoch: 3,
        split: MetricsSplit::Val,
        metrics: EvalMetrics {
            elbo: -12.5,
            re: 10.0,
            kl: 2.5,
            shell_kls: vec![2.0, 0.5],
            shell_kappas: vec![30.0, 1.25],
            shell_accept: vec![0.99, 1.0],
        },
        ll: None,
    };
    let line = row.csv_row();
    assert_eq!(line, "3,val,-12.5,10,2.5,nan,2|0.5,30|1.25,0.99|1");
    assert_eq!(EpochMetrics::parse_csv_row(&line).unwrap(), row);
    assert!(EpochMetrics::parse_csv_row("3,val,x").is_err());
}

#[test]
fn diagnose_examples() {
    let spec = CompositionSpec::parse("s1x2").unwrap();
    let r = diagnose_shells(&spec, &[0.05, 5.0], None, DEFAULT_IGNORE_THRESHOLD);
    assert_eq!(
        r.statuses(),
        vec![ShellStatus::Ignored, ShellStatus::Active]
    );
    assert_eq!(r.effective_dof, 2);

    let spec = CompositionSpec::parse("s10x9*3").unwrap();
    let kls: Vec<f64> = [100.0, 0.0, 0.0, 0.0]
        .iter()
        .zip(spec.shell_ambient_dims())
        .map(|(&k, m)| kl_to_uniform(m, k).unwrap())
        .collect();
    let r = diagnose_shells(&spec, &kls, None, DEFAULT_IGNORE_THRESHOLD);
    assert_eq!(
        r.statuses(),
        vec![
            ShellStatus::Active,
            ShellStatus::Ignored,
            ShellStatus::Ignored,
            ShellStatus::Ignored
        ]
    );
    assert_eq!((r.effective_dof, r.total_dof), (10, 37));
    let r = diagnose_shells(&spec, &[0.0; 4], None, DEFAULT_IGNORE_THRESHOLD);
    assert_eq!((r.ignored_count(), r.effective_dof), (4, 0));
}

#[test]
fn iwae_rejects_zero_k() {
    let model = toy_model("s1", 2, 3, &[3], 9);
    assert!(
        iwae_log_likelihood(&model, &toy_batch(), 0, &mut ChaCha8Rng::seed_from_u64(0)).is_err()
    );
}

#[test]
fn iwae_k1_matches_elbo_in_expectation() {
    let model = toy_model("s1x2", 2, 3, &[4], 10);
    let x = toy_batch().slice(s![0..1, ..]).to_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reps = 4000;
    let ll: Vec<f64> = (0..reps)
        .map(|_| iwae_log_likelihood(&model, &x, 1, &mut rng).unwrap().mean)
        .collect();
    let zeros = vec![0.0; 2];
    let elbo: Vec<f64> = (0..reps)
        .map(|_| {
            let (o, _) = model
                .forward_batch(&x, &zeros, NoiseInput::Fresh(&mut rng))
                .unwrap();
            -(o.re_sum + o.kl_sum)
        })
        .collect();
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var / v.len() as f64)
    };
    let (m1, v1) = stats(&ll);
    let (m2, v2) = stats(&elbo);
    assert!((m1 - m2).abs() < 4.0 * (v1 + v2).sqrt(), "{m1} vs {m2}");
}

#[test]
fn smoke_training_improves_and_is_deterministic() {
    let data = synthetic_blobs(300, 8, 8, 11);
    let mut cfg = TrainConfig::new(CompositionSpec::parse("s4").unwrap());
    cfg.hidden = vec![32];
    cfg.max_epochs = 30;
    cfg.warmup_epochs = 10;
    cfg.lookahead = 30;
    cfg.batch_size = 32;
    cfg.iwae_samples = 0;
    let run = train_seed(&cfg, &data, 1).unwrap();
    let train_rows: Vec<&EpochMetrics> = run
        .history
        .iter()
        .filter(|m| m.split == MetricsSplit::Train)
        .collect();
    assert_eq!(train_rows.len(), 30);
    assert!(train_rows[29].metrics.elbo > train_rows[0].metrics.elbo);
    assert!(run.history.iter().all(|m| m.metrics.elbo.is_finite()));

    cfg.max_epochs = 3;
    cfg.warmup_epochs = 2;
    let a = train_seed(&cfg, &data, 5).unwrap();
    let b = train_seed(&cfg, &data, 5).unwrap();
    assert_eq!(a.metrics_csv(), b.metrics_csv());
    assert_eq!(a.model, b.model);
}

#[test]
fn best_model_is_restored() {
    let data = synthetic_blobs(120, 6, 6, 12);
    let mut cfg = TrainConfig::new(CompositionSpec::parse("s2").unwrap());
    cfg.hidden = vec![8];
    cfg.max_epochs = 6;
    cfg.warmup_epochs = 0;
    cfg.lookahead = 1;
    cfg.iwae_samples = 0;
    cfg.learning_rate = 0.05;
    let run = train_seed(&cfg, &data, 2).unwrap();
    let vals: Vec<f64> = run
        .history
        .iter()
        .filter(|m| m.split == MetricsSplit::Val)
        .map(|m| m.metrics.elbo)
        .collect();
    let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(vals[run.best_epoch], best);
    let last = run.history.last().unwrap();
    assert_eq!(
        (last.split, last.epoch),
        (MetricsSplit::Best, run.best_epoch)
    );
}

#[test]
fn config_validation() {
    let spec = CompositionSpec::parse("s1x2").unwrap();
    let mut cfg = TrainConfig::new(spec);
    assert!(cfg.validate().is_ok());
    cfg.beta_per_shell = Some(vec![1.0]);
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    cfg.beta_per_shell = None;
    cfg.warmup_epochs = 400;
    assert!(cfg.validate().is_err());
}
