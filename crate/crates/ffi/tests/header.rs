use std::path::{Path, PathBuf};
use std::process::Command;

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("sphereprod.h")
}

#[test]
fn header_declares_every_entry_point() {
    let text = std::fs::read_to_string(header()).unwrap();
    let src = include_str!("../src/lib.rs");
    let exported: Vec<&str> = src
        .lines()
        .filter_map(|l| l.strip_prefix("pub unsafe extern \"C\" fn "))
        .map(|l| l.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 20);
    for name in exported {
        assert!(
            text.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    for ty in ["SpRng", "SpComposition", "SpProductVmf", "SpModel"] {
        assert!(
            text.contains(&format!("typedef struct {ty} {ty};")),
            "{ty} not opaque"
        );
    }
    assert!(text.contains("SP_STATUS_OK = 0"));
}

const SMOKE: &str = r#"
#include <math.h>
#include <stdio.h>
#include "sphereprod.h"

int main(void) {
    double kl = 0.0;
    if (sp_vmf_kl_to_uniform(3, 1.0, &kl) != SP_STATUS_OK) return 1;
    if (fabs(kl - 0.15160) > 1e-4) return 2;
    if (sp_vmf_kl_to_uniform(3, -1.0, &kl) != SP_STATUS_DOMAIN) return 3;
    char msg[256];
    size_t needed = 0;
    if (sp_last_error_message(msg, sizeof msg, &needed) != SP_STATUS_OK || needed < 2) return 4;

    SpComposition *spec = NULL;
    if (sp_composition_parse("s1*3", &spec) != SP_STATUS_OK) return 5;
    size_t ambient = 0;
    sp_composition_info(spec, NULL, &ambient, NULL);
    if (ambient != 6) return 6;
    double mus[6] = {1, 0, 0, 1, 1, 0};
    double kappas[3] = {1, 2, 3};
    SpProductVmf *q = NULL;
    if (sp_product_vmf_new(spec, mus, 6, kappas, 3, &q) != SP_STATUS_OK) return 7;
    SpRng *rng = NULL;
    sp_rng_new(5, &rng);
    double z[6];
    if (sp_product_vmf_sample(q, rng, z, 6) != SP_STATUS_OK) return 8;
    printf("ok %.6f\n", kl);
    sp_rng_free(rng);
    sp_product_vmf_free(q);
    sp_composition_free(spec);
    return 0;
}
"#;

#[test]
fn c_program_links_against_staticlib() {
    // target/<profile>/deps/<test> -> target/<profile>
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libsphereprod_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let exe = dir.path().join("smoke");
    std::fs::write(&src, SMOKE).unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler not available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "smoke exited with {:?}",
        out.status.code()
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("ok 0.15159"), "stdout: {stdout:?}");
}
