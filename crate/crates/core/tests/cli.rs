use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
experiment_id = "tiny"
output_dir = "unused"
seeds = [1, 2]
test_size = 20
ref_tol = 1e-9
ref_max_iter = 100000

[problem]
n = 6
m = 10
rho = 0.5
sigma = 1.0
lambda = 0.05
dict_kind = "gaussian"

[baselines]
ista = 3
fista = 3
linear_warm_start = true

[baselines.linear]
batch_size = 10
steps = 20
eval_every = 5

[[models]]
kind = "lista"
depths = [1, 2]

[models.train]
batch_size = 10
steps = 20
eval_every = 5

[[models]]
kind = "facnet"
depths = [2]

[models.train]
batch_size = 10
steps = 20
eval_every = 5
retraction = true
"#;

fn sparse_accel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-accel"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn setup() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let config = config.to_str().unwrap().to_owned();
    (dir, config)
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

#[test]
fn experiment_writes_all_artifacts_and_is_reproducible() {
    let (dir, config) = setup();
    let a = path(dir.path(), "a");
    let b = path(dir.path(), "b");
    ok(&sparse_accel(&["experiment", "--config", &config, "--out", &a]));
    ok(&sparse_accel(&["experiment", "--config", &config, "--out", &b]));
    let results_a = std::fs::read_to_string(Path::new(&a).join("results.csv")).unwrap();
    let results_b = std::fs::read_to_string(Path::new(&b).join("results.csv")).unwrap();
    assert_eq!(results_a, results_b);
    // Per seed: ista 0..=3, fista 0..=3, ista_linear 0..=3, lista 1 and 2, facnet 2.
    assert_eq!(results_a.lines().count(), 1 + 2 * (4 + 4 + 4 + 3));
    for rel in [
        "config.resolved.toml",
        "dictionaries/seed1.txt",
        "plots/tiny.svg",
        "traces/lista_k2_seed2.csv",
        "checkpoints/facnet_k2_seed1.ckpt",
    ] {
        assert!(Path::new(&a).join(rel).exists(), "missing {rel}");
    }

    let plots = path(dir.path(), "replot");
    ok(&sparse_accel(&[
        "plot",
        "--results",
        &path(Path::new(&a), "results.csv"),
        "--out",
        &plots,
    ]));
    assert_eq!(
        std::fs::read(Path::new(&plots).join("tiny.svg")).unwrap(),
        std::fs::read(Path::new(&a).join("plots/tiny.svg")).unwrap()
    );

    let ckpt = path(Path::new(&a), "checkpoints/facnet_k2_seed1.ckpt");
    let diag = sparse_accel(&[
        "diagnose",
        "--config",
        &config,
        "--seed",
        "1",
        "--checkpoint",
        &ckpt,
        "--out",
        &a,
    ]);
    ok(&diag);
    let csv = std::fs::read_to_string(Path::new(&a).join("diagnose.csv")).unwrap();
    assert!(csv.starts_with("layer,residual_norm"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn generate_solve_and_train_subcommands() {
    let (dir, config) = setup();
    let out = path(dir.path(), "out");
    ok(&sparse_accel(&[
        "generate", "--config", &config, "--out", &out, "--seed", "2",
    ]));
    let signals = std::fs::read_to_string(Path::new(&out).join("signals_seed2.csv")).unwrap();
    assert_eq!(signals.lines().count(), 21);
    assert!(Path::new(&out).join("dictionary_seed2.txt").exists());

    ok(&sparse_accel(&[
        "solve", "--config", &config, "--out", &out, "--seed", "2",
    ]));
    let refs = std::fs::read_to_string(Path::new(&out).join("references.csv")).unwrap();
    assert_eq!(refs.lines().count(), 21);

    let train = sparse_accel(&[
        "train", "--config", &config, "--out", &out, "--seed", "2", "--model", "lista", "--depth", "2", "--steps", "5",
    ]);
    ok(&train);
    assert!(String::from_utf8_lossy(&train.stdout).contains("lista_k2_seed2"));
    assert!(Path::new(&out).join("lista_k2_seed2.ckpt").exists());
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let (dir, config) = setup();
    let out = path(dir.path(), "out");
    let unknown = sparse_accel(&["experiment", "--preset", "nope", "--out", &out]);
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("unknown preset"));

    let missing = sparse_accel(&["plot", "--results", &path(dir.path(), "absent.csv")]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let model = sparse_accel(&[
        "train", "--config", &config, "--out", &out, "--model", "resnet", "--depth", "1",
    ]);
    assert!(!model.status.success());

    let both = sparse_accel(&["experiment", "--config", &config, "--preset", "gaussian-desk"]);
    assert!(!both.status.success());
}
