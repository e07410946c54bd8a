use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sphereprod::special_math::log_unit_sphere_area;
use sphereprod::sphere_geom::{householder_apply, normalize, slerp, UnitVector};
use sphereprod::vae::{diagnose_shells, iwae_log_likelihood, VaeModel, DEFAULT_IGNORE_THRESHOLD};
use sphereprod::vmf::{entropy, kl_grad_kappa, kl_to_uniform};
use sphereprod::{CompositionSpec, ProductVmf, VmfDistribution};

fn unit(m: usize) -> impl Strategy<Value = UnitVector> {
    prop::collection::vec(-1.0f64..1.0, m)
        .prop_filter("not near zero", |v| {
            v.iter().map(|x| x * x).sum::<f64>() > 1e-4
        })
        .prop_map(|v| normalize(&v).unwrap())
}

fn unit_any() -> impl Strategy<Value = UnitVector> {
    prop_oneof![unit(2), unit(4), unit(10), unit(41)]
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn householder_maps_pole_to_mu(mu in unit_any()) {
        let mut e1 = vec![0.0; mu.dim()];
        e1[0] = 1.0;
        let got = householder_apply(&mu, &e1).unwrap();
        prop_assert!(max_abs_diff(&got, mu.as_slice()) <= 1e-12);
    }

    #[test]
    fn householder_is_an_involution(
        (mu, x) in unit_any().prop_flat_map(|mu| {
            let m = mu.dim();
            (Just(mu), prop::collection::vec(-3.0f64..3.0, m))
        })
    ) {
        let once = householder_apply(&mu, &x).unwrap();
        let twice = householder_apply(&mu, &once).unwrap();
        prop_assert!(max_abs_diff(&twice, &x) <= 1e-12);
    }
}

proptest! {
    #[test]
    fn slerp_has_constant_angular_speed(
        (a, b) in (2usize..12).prop_flat_map(|m| (unit(m), unit(m))),
        t in 0.0f64..1.0,
    ) {
        let theta = a.angle_to(&b);
        prop_assume!(theta < std::f64::consts::PI - 1e-3);
        let p = slerp(&a, &b, t).unwrap();
        prop_assert!((p.angle_to(&a) - t * theta).abs() <= 1e-9);
    }

    #[test]
    fn kl_increasing_and_identity(m in 2usize..120, k1 in 0.0f64..500.0, dk in 1e-3f64..50.0) {
        let k2 = k1 + dk;
        let (a, b) = (kl_to_uniform(m, k1).unwrap(), kl_to_uniform(m, k2).unwrap());
        prop_assert!(a >= 0.0 && b > a);
        prop_assert!(kl_grad_kappa(m, k2).unwrap() > 0.0);
        let area = log_unit_sphere_area(m).unwrap();
        prop_assert!((entropy(m, k2).unwrap() + b - area).abs() <= 1e-12 * area.abs().max(b).max(1.0));
    }

    #[test]
    fn diagnosis_is_a_pure_function(kls in prop::collection::vec(0.0f64..3.0, 1..6)) {
        let spec = CompositionSpec::new(vec![2; kls.len()]).unwrap();
        let a = diagnose_shells(&spec, &kls, None, DEFAULT_IGNORE_THRESHOLD);
        let b = diagnose_shells(&spec, &kls, None, DEFAULT_IGNORE_THRESHOLD);
        prop_assert_eq!(&a, &b);
        let ignored = kls.iter().filter(|&&k| k < DEFAULT_IGNORE_THRESHOLD).count();
        prop_assert_eq!(a.ignored_count(), ignored);
    }
}

#[test]
fn density_normalizes_on_circle_and_sphere() {
    let n = 200_000;
    for kappa in [0.0, 0.5, 1.0, 10.0, 100.0] {
        let circle = VmfDistribution::new(UnitVector::north_pole(2).unwrap(), kappa).unwrap();
        let sphere = VmfDistribution::new(UnitVector::north_pole(3).unwrap(), kappa).unwrap();
        let (mut c, mut s) = (0.0, 0.0);
        for i in 0..n {
            let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            c += circle.log_prob(&[t.cos(), t.sin()]).unwrap().exp();
            // polar angle midpoint rule; the azimuth integrates to 2π
            let th = std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
            s += sphere.log_prob(&[th.cos(), th.sin(), 0.0]).unwrap().exp() * th.sin();
        }
        let c = c * 2.0 * std::f64::consts::PI / n as f64;
        let s = s * 2.0 * std::f64::consts::PI * std::f64::consts::PI / n as f64;
        assert!((c - 1.0).abs() <= 1e-6, "S^1 kappa={kappa}: {c}");
        assert!((s - 1.0).abs() <= 1e-6, "S^2 kappa={kappa}: {s}");
    }
}

#[test]
fn shells_are_sampled_independently() {
    let spec = CompositionSpec::parse("s2x1").unwrap();
    let mu0 = normalize(&[0.3, -0.2, 0.9]).unwrap();
    let mu1 = normalize(&[-0.5, 0.8]).unwrap();
    let q = ProductVmf::new(
        spec,
        vec![
            VmfDistribution::new(mu0, 2.0).unwrap(),
            VmfDistribution::new(mu1, 1.0).unwrap(),
        ],
    )
    .unwrap();
    let n = 50_000;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| q.sample(&mut rng).unwrap().0.coords)
        .collect();
    let mean: Vec<f64> = (0..5)
        .map(|j| draws.iter().map(|d| d[j]).sum::<f64>() / n as f64)
        .collect();
    for i in 0..3 {
        for j in 3..5 {
            let prods: Vec<f64> = draws
                .iter()
                .map(|d| (d[i] - mean[i]) * (d[j] - mean[j]))
                .collect();
            let cov = prods.iter().sum::<f64>() / n as f64;
            let sd = (prods.iter().map(|p| (p - cov).powi(2)).sum::<f64>() / n as f64).sqrt();
            let band = 3.5 * sd / (n as f64).sqrt();
            assert!(cov.abs() <= band, "cov({i},{j}) = {cov} band {band}");
        }
    }
}

#[test]
fn iwae_mean_nondecreasing_in_k() {
    let spec = CompositionSpec::parse("s2x1").unwrap();
    let model = VaeModel::new(spec, 3, 3, &[8], 100.0, &mut ChaCha8Rng::seed_from_u64(40)).unwrap();
    let x = ndarray::Array2::from_shape_fn((20, 9), |(r, c)| f64::from((r + c) % 3 == 0));
    let ks = [1usize, 5, 50, 500];
    let mut stats = Vec::new();
    for &k in &ks {
        let reps: Vec<f64> = (0..10)
            .map(|r| {
                let mut rng = sphereprod::rng::stream(41, "iwae-k", (k * 100 + r) as u64);
                iwae_log_likelihood(&model, &x, k, &mut rng).unwrap().mean
            })
            .collect();
        let mean = reps.iter().sum::<f64>() / 10.0;
        let var = reps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
        stats.push((mean, (var / 10.0).sqrt()));
    }
    for (w, k) in stats.windows(2).zip(ks.windows(2)) {
        let band = 3.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        assert!(w[1].0 >= w[0].0 - band, "K {} -> {}: {:?}", k[0], k[1], w);
    }
}
