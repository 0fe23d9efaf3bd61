use std::path::Path;
use std::process::Command;

use rwlab_cli::manifest::{CheckKind, CheckResult, Manifest};
use rwlab_cli::{run, Cli, Command as Sub};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rwlab"))
}

fn cli(command: Sub, config: Option<&Path>, out: &Path) -> Cli {
    Cli { config: config.map(Into::into), seed: None, threads: None, out: Some(out.into()), command }
}

#[test]
fn bad_probability_is_rejected_with_its_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[entropy.model]\nname = \"percolation\"\nd = 2\nL = 16\np = 1.2\n").unwrap();
    let out = bin().args(["entropy", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("entropy.model.p"), "{err}");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn verify_default_passes_every_inequality() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("verify").arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let m = Manifest::read(&dir.path().join("manifest.json")).unwrap();
    assert!(m.pass);
    assert!(m.results.len() >= 10);
    assert!(m.results.iter().all(|r| r.hard && r.kind == CheckKind::Exact && r.pass));
    for name in ["lemma_xy", "tv_delta", "mean_inequality", "reverse_poincare", "gradient_lemma", "lemma_b"] {
        assert!(m.results.iter().any(|r| r.name == name), "{name} missing");
    }
    assert!(dir.path().join("timing.json").exists());
}

#[test]
fn same_config_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 11\n[entropy]\nn_max = 32\nreplicas = 3\n[sdb]\nn_max = 32\n").unwrap();
    for sub in [Sub::Entropy, Sub::Sdb, Sub::Generate] {
        let a = dir.path().join(format!("{}-a", sub.name()));
        let b = dir.path().join(format!("{}-b", sub.name()));
        run(&cli(sub.clone(), Some(&cfg), &a)).unwrap();
        let mut other = cli(sub.clone(), Some(&cfg), &b);
        other.threads = Some(3);
        run(&other).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names.iter().filter(|n| *n != "timing.json") {
            let x = std::fs::read(a.join(name)).unwrap();
            let y = std::fs::read(b.join(name)).unwrap();
            assert!(x == y, "{name:?} differs for {}", sub.name());
        }
    }
}

#[test]
fn seed_flag_changes_random_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = cli(Sub::Generate, None, &dir.path().join("a"));
    a.seed = Some(1);
    let mut b = cli(Sub::Generate, None, &dir.path().join("b"));
    b.seed = Some(2);
    run(&a).unwrap();
    run(&b).unwrap();
    let read = |d: &str| std::fs::read_to_string(dir.path().join(d).join("environments.csv")).unwrap();
    assert_ne!(read("a"), read("b"));
    let m = Manifest::read(&dir.path().join("b/manifest.json")).unwrap();
    assert_eq!(m.seed, 2);
}

#[test]
fn tolerance_overrides_are_logged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[tolerances]\nentropy = 1e-9\n[entropy]\nn_max = 16\nwindow_from = 4\n").unwrap();
    run(&cli(Sub::Entropy, Some(&cfg), &dir.path().join("o"))).unwrap();
    let m = Manifest::read(&dir.path().join("o/manifest.json")).unwrap();
    assert_eq!(m.tolerance_overrides.get("entropy"), Some(&1e-9));
    assert_eq!(m.tolerance_overrides.len(), 1);
}

#[test]
fn report_on_empty_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("report").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("manifest.json"));
}

#[test]
fn report_on_passing_run_has_no_flags() {
    let dir = tempfile::tempdir().unwrap();
    let status = run(&cli(Sub::Cover, None, &dir.path().join("cover"))).unwrap();
    assert!(status.pass);
    let r = rwlab_cli::report::report(dir.path()).unwrap();
    assert_eq!((r.manifests, r.flags, r.failures), (1, 0, 0));
    assert!(r.table.contains("cover_complete"));
}

#[test]
fn out_of_band_exponent_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let results = vec![
        CheckResult::banded("gradient_exponent", CheckKind::Fit, -2.4, [-3.3, -2.7], 20, "hand made"),
        CheckResult::banded("diagonal_slope", CheckKind::Fit, -1.0, [-1.15, -0.85], 20, "hand made"),
    ];
    let m = Manifest::new("heatkernel", "0".into(), 1, vec![], results);
    std::fs::create_dir(dir.path().join("hk")).unwrap();
    std::fs::write(dir.path().join("hk/manifest.json"), m.to_json()).unwrap();
    let r = rwlab_cli::report::report(dir.path()).unwrap();
    assert_eq!(r.flags, 1);
    let flagged: Vec<&str> = r.table.lines().filter(|l| l.ends_with("FLAG")).collect();
    assert_eq!(flagged.len(), 1);
    assert!(flagged[0].contains("gradient_exponent"));
    let out = bin().arg("report").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
