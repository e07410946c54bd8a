use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sphereprod"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {text}"))
        .parse()
        .unwrap()
}

fn idx_bytes(n: u32, h: u32, w: u32) -> Vec<u8> {
    let mut b = vec![0, 0, 0x08, 0x03];
    for d in [n, h, w] {
        b.extend_from_slice(&d.to_be_bytes());
    }
    b.extend((0..n * h * w).map(|i| ((i * 37) % 256) as u8));
    b
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();

    let bad_comp = run(&[
        "train",
        "--data",
        "synthetic:50:4x4",
        "--composition",
        "s3x",
        "--out",
        out,
    ]);
    assert_eq!(bad_comp.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_comp.stderr).contains("error"));

    let missing = dir.path().join("missing.idx");
    let o = run(&[
        "train",
        "--data",
        missing.to_str().unwrap(),
        "--composition",
        "s3",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(2));

    let bad_magic = dir.path().join("bad.idx");
    let mut bytes = idx_bytes(4, 2, 2);
    bytes[2] = 0x09;
    std::fs::write(&bad_magic, &bytes).unwrap();
    let o = run(&[
        "train",
        "--data",
        bad_magic.to_str().unwrap(),
        "--composition",
        "s3",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));

    let truncated = dir.path().join("short.idx");
    std::fs::write(&truncated, &idx_bytes(4, 2, 2)[..20]).unwrap();
    let o = run(&[
        "train",
        "--data",
        truncated.to_str().unwrap(),
        "--composition",
        "s3",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&[
        "kl-surface",
        "--m-range",
        "5:2",
        "--kappa-range",
        "0:1",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn idx_training_leaves_input_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tiny.idx");
    std::fs::write(&data, idx_bytes(40, 3, 3)).unwrap();
    let before = std::fs::read(&data).unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--composition",
        "s1*2",
        "--epochs",
        "2",
        "--seeds",
        "1",
        "--hidden",
        "4",
        "--batch",
        "10",
        "--iwae-k",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&data).unwrap(), before);
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("sha256="));
}

#[test]
fn train_then_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let data = "synthetic:300:6x6";
    let o = run(&[
        "train",
        "--data",
        data,
        "--composition",
        "s2x1*2",
        "--epochs",
        "6",
        "--seeds",
        "2",
        "--hidden",
        "16",
        "--batch",
        "30",
        "--iwae-k",
        "30",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.lines().any(|l| l.starts_with("mean")));

    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("run,a,kappa_count,composition,ll,elbo,re,kl\n"));
    for seed in [1, 2] {
        let row: Vec<String> = summary
            .lines()
            .find(|l| l.starts_with(&format!("seed{seed},")))
            .unwrap()
            .split(',')
            .map(str::to_owned)
            .collect();
        assert_eq!(&row[1..4], ["7", "3", "s2x1*2"]);
        let (ll, elbo, re, kl): (f64, f64, f64, f64) = (
            row[4].parse().unwrap(),
            row[5].parse().unwrap(),
            row[6].parse().unwrap(),
            row[7].parse().unwrap(),
        );
        assert!((elbo + re + kl).abs() < 1e-6);

        let ckpt = out.join(format!("seed{seed}/model.ckpt"));
        let seed_text = seed.to_string();
        let e = run(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            data,
            "--seed",
            &seed_text,
            "--iwae-k",
            "30",
            "--composition",
            "s2x1*2",
        ]);
        assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
        let text = stdout(&e);
        assert!((field(&text, "elbo") - elbo).abs() <= 1e-4);
        assert!((field(&text, "ll") - ll).abs() <= 1e-4);

        let d = run(&[
            "diagnose",
            "--metrics",
            out.join(format!("seed{seed}/metrics.csv"))
                .to_str()
                .unwrap(),
        ]);
        assert!(d.status.success());
        assert_eq!(stdout(&d).lines().filter(|l| l.contains("S^")).count(), 3);
    }

    let wrong = run(&[
        "eval",
        "--checkpoint",
        out.join("seed1/model.ckpt").to_str().unwrap(),
        "--data",
        data,
        "--composition",
        "s5",
    ]);
    assert_eq!(wrong.status.code(), Some(1));
    let wrong_size = run(&[
        "eval",
        "--checkpoint",
        out.join("seed1/model.ckpt").to_str().unwrap(),
        "--data",
        "synthetic:50:5x5",
    ]);
    assert_eq!(wrong_size.status.code(), Some(1));

    let pgm = dir.path().join("sweep.pgm");
    let i = run(&[
        "interpolate",
        "--checkpoint",
        out.join("seed1/model.ckpt").to_str().unwrap(),
        "--shell",
        "1",
        "--steps",
        "5",
        "--anchor",
        "data:3",
        "--data",
        data,
        "--out",
        pgm.to_str().unwrap(),
    ]);
    assert!(i.status.success(), "{}", String::from_utf8_lossy(&i.stderr));
    let bytes = std::fs::read(&pgm).unwrap();
    let header = b"P5\n30 6\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 30 * 6);
}

#[test]
fn kl_surface_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let o = run(&[
        "kl-surface",
        "--m-range",
        "2:4",
        "--kappa-range",
        "0:10",
        "--steps",
        "3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(Path::new(&path)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "m,kappa,kl");
    assert_eq!(lines.len(), 1 + 3 * 3);
    assert!(lines[1].starts_with("2,0,0"));
}
