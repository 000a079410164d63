use std::path::Path;
use std::process::Command;

use permissible::config::RunConfig;
use permissible::pipeline::{self, Overrides, Pipeline, Stage, StageOutcome};
use permissible::pruning::PermissibleStrategySet;
use permissible::Error;

const SMALL_GP: &str = r#"
[system]
kind = "linear"
a = [[0.5, 0.0], [0.0, 0.5]]
b = [[1.0], [1.0]]
control_box = { lower = [0.0], upper = [0.5] }

[noise]
std = [0.01, 0.01]

[problem]
safe_set = { lower = [0.0, 0.0], upper = [1.0, 1.0] }
initial_set = { lower = [0.4, 0.4], upper = [0.5, 0.5] }
state_cell_width = [0.25, 0.25]
control_cells = [4]
horizon = 20
p = 0.9

[data]
size = 120

[gp]
lengthscales = [2.0, 2.0, 2.0]
noise_variance = 1e-4

[error]
delta = 1e-10
rkhs_bounds = [1.0, 1.0]

[validation]
trials = 50

[run]
seed = 7
"#;

/// Every control pushes the state out of a small safe set.
const HOPELESS: &str = r#"
[system]
kind = "linear"
a = [[0.5, 0.0], [0.0, 0.5]]
b = [[1.0], [1.0]]
control_box = { lower = [0.4], upper = [0.5] }
known = true

[noise]
std = [0.01, 0.01]

[problem]
safe_set = { lower = [0.0, 0.0], upper = [0.2, 0.2] }
initial_set = { lower = [0.0, 0.0], upper = [0.1, 0.1] }
state_cell_width = [0.1, 0.1]
control_cells = [2]
horizon = 10
p = 0.9
"#;

fn pipeline_in(dir: &Path, text: &str, overrides: Overrides) -> Pipeline {
    let overrides = Overrides {
        out: Some(dir.to_path_buf()),
        ..overrides
    };
    Pipeline::new(RunConfig::parse(text).unwrap(), &overrides).unwrap()
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != pipeline::SUMMARY)
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn staged_execution_equals_run_byte_for_byte() {
    let whole = tempfile::tempdir().unwrap();
    let staged = tempfile::tempdir().unwrap();
    assert_eq!(
        pipeline_in(whole.path(), SMALL_GP, Overrides::default()).run().unwrap(),
        StageOutcome::Done
    );
    let p = pipeline_in(staged.path(), SMALL_GP, Overrides::default());
    for stage in Stage::ALL {
        assert_eq!(p.stage(stage).unwrap(), StageOutcome::Done, "{stage}");
    }
    let a = artifacts(whole.path());
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    for expected in [
        pipeline::DATASET,
        pipeline::GP_FIT,
        pipeline::BOUNDS,
        pipeline::CERTIFICATE,
        pipeline::PERMISSIBLE_SET,
        pipeline::VALIDATION,
        pipeline::TRAJECTORIES,
        pipeline::ADVERSARIAL,
    ] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
    assert_eq!(a, artifacts(staged.path()));
    assert!(whole.path().join(pipeline::SUMMARY).exists());
}

#[test]
fn identical_seed_gives_identical_artifacts() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    pipeline_in(first.path(), SMALL_GP, Overrides::default()).run().unwrap();
    pipeline_in(second.path(), SMALL_GP, Overrides::default())
        .run()
        .unwrap();
    assert_eq!(artifacts(first.path()), artifacts(second.path()));

    let other = tempfile::tempdir().unwrap();
    let reseeded = Overrides {
        seed: Some(8),
        ..Overrides::default()
    };
    pipeline_in(other.path(), SMALL_GP, reseeded)
        .stage(Stage::GenData)
        .unwrap();
    assert_ne!(
        std::fs::read(first.path().join(pipeline::DATASET)).unwrap(),
        std::fs::read(other.path().join(pipeline::DATASET)).unwrap()
    );
}

#[test]
fn bounds_without_fit_reports_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline_in(dir.path(), SMALL_GP, Overrides::default());
    p.stage(Stage::GenData).unwrap();
    match p.stage(Stage::Bounds).unwrap_err() {
        Error::MissingArtifact { path, stage } => {
            assert_eq!(path.file_name().unwrap(), pipeline::GP_FIT);
            assert_eq!(stage, "fit-gp");
        }
        other => panic!("unexpected error {other}"),
    }
    match p.stage(Stage::Prune).unwrap_err() {
        Error::MissingArtifact { path, .. } => assert_eq!(path.file_name().unwrap(), pipeline::BOUNDS),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn p_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = Overrides {
        p: Some(0.5),
        ..Overrides::default()
    };
    let p = pipeline_in(dir.path(), SMALL_GP, overrides);
    for stage in [Stage::GenData, Stage::FitGp, Stage::Bounds, Stage::Prune] {
        p.stage(stage).unwrap();
    }
    let text = std::fs::read_to_string(dir.path().join(pipeline::PERMISSIBLE_SET)).unwrap();
    let set = PermissibleStrategySet::from_json(&text).unwrap();
    assert_eq!(set.p, 0.5);
    assert!(set.certificate.safety_lower_bound >= 0.5);
}

#[test]
fn infeasible_problem_writes_the_removal_log() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = pipeline_in(dir.path(), HOPELESS, Overrides::default()).run().unwrap();
    let StageOutcome::Infeasible { removals, .. } = outcome else {
        panic!("expected infeasibility, got {outcome:?}");
    };
    let report: pipeline::InfeasibleReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(pipeline::INFEASIBLE)).unwrap()).unwrap();
    assert_eq!(report.removal_log.len(), removals);
    assert!(!dir.path().join(pipeline::PERMISSIBLE_SET).exists());
}

#[test]
fn dataset_only_config_skips_validation() {
    let source = tempfile::tempdir().unwrap();
    let src = pipeline_in(source.path(), SMALL_GP, Overrides::default());
    src.stage(Stage::GenData).unwrap();
    let data = source.path().join(pipeline::DATASET);
    let text = SMALL_GP
        .replace("kind = \"linear\"", "kind = \"dataset\"")
        .replace("a = [[0.5, 0.0], [0.0, 0.5]]\n", "")
        .replace("b = [[1.0], [1.0]]\n", "")
        .replace("size = 120", &format!("path = {:?}", data.to_str().unwrap()));
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline_in(dir.path(), &text, Overrides::default());
    assert_eq!(p.run().unwrap(), StageOutcome::Done);
    assert!(matches!(p.stage(Stage::Validate).unwrap(), StageOutcome::Skipped(_)));
    assert!(dir.path().join(pipeline::PERMISSIBLE_SET).exists());
    assert!(!dir.path().join(pipeline::VALIDATION).exists());
    assert!(p.summary().unwrap().validation.is_none());
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_permissible"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        path.to_str().unwrap().to_string()
    };
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let bad = write("bad.toml", &SMALL_GP.replace("p = 0.9", "p = 1.5"));
    let res = cli(&["run", "--config", &bad, "--out", out]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("p must lie in (0,1)"));

    let hopeless = write("hopeless.toml", HOPELESS);
    assert_eq!(
        cli(&["run", "--config", &hopeless, "--out", out]).status.code(),
        Some(2)
    );

    let good = write("good.toml", SMALL_GP);
    let fresh = dir.path().join("fresh");
    let fresh = fresh.to_str().unwrap();
    let res = cli(&["bounds", "--config", &good, "--out", fresh]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("gp_fit.json"));

    let res = cli(&["run", "--config", &good, "--out", out, "--threads", "1"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).contains("retained fraction"));
    let res = cli(&["run", "--config", &good, "--out", out, "--stage", "validate"]);
    assert_eq!(res.status.code(), Some(0));
    let res = cli(&["prune", "--config", &good, "--out", out, "--stage", "bounds"]);
    assert_eq!(res.status.code(), Some(1));
}
