use dklab::runner::{run_into, ExperimentConfig};
use dklab::Error;

const CONFIG: &str = r#"
[model]
N = 8
beta = 1.5
alpha = 0.3
T = 0.01
dt = 1e-3
mode = "common_noise"
save_stride = 2

[run]
replicas = 6
master_seed = 77

[[tests]]
kind = "non_collision"

[[tests]]
kind = "window_mass"
"#;

#[test]
fn repeated_runs_give_identical_bytes() {
    let cfg = ExperimentConfig::from_toml(CONFIG).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (run_into(&cfg, a.path()).unwrap(), run_into(&cfg, b.path()).unwrap());
    for f in ["trajectories.tsv", "diagnostics.tsv", "collisions.tsv", "reports.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(ra.manifest.config_hash, rb.manifest.config_hash);
    assert_eq!(ra.manifest.replica_seeds, rb.manifest.replica_seeds);
}

#[test]
fn more_replicas_leave_existing_ones_untouched() {
    let small = ExperimentConfig::from_toml(CONFIG).unwrap();
    let big = ExperimentConfig::from_toml(&CONFIG.replace("replicas = 6", "replicas = 9")).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_into(&small, a.path()).unwrap();
    run_into(&big, b.path()).unwrap();
    let rows = |d: &std::path::Path| std::fs::read_to_string(d.join("trajectories.tsv")).unwrap();
    let (ta, tb) = (rows(a.path()), rows(b.path()));
    assert!(tb.starts_with(&ta));
    assert!(tb.len() > ta.len());
}

#[test]
fn config_errors_name_line_or_field() {
    let bad = CONFIG.replace("beta = 1.5", "beta = \"steep\"");
    match ExperimentConfig::from_toml(&bad) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
    let zero = ExperimentConfig::from_toml(&CONFIG.replace("replicas = 6", "replicas = 0")).unwrap();
    assert!(matches!(zero.validate(), Err(Error::Config { .. })));
    let typo = CONFIG.replace("kind = \"window_mass\"", "kind = \"window_mass\"\nwidht_factor = 0.5");
    assert!(matches!(ExperimentConfig::from_toml(&typo), Err(Error::Parse { .. })));
}

#[test]
fn manifest_records_schema() {
    let cfg = ExperimentConfig::from_toml(CONFIG).unwrap();
    let d = tempfile::tempdir().unwrap();
    let out = run_into(&cfg, d.path()).unwrap();
    assert_eq!(out.manifest.schema.trajectories.len(), 2 + 8);
    assert_eq!(out.manifest.replica_seeds.len(), 6);
    let header = std::fs::read_to_string(d.path().join("diagnostics.tsv")).unwrap();
    assert_eq!(header.lines().nth(1).unwrap().split('\t').collect::<Vec<_>>(), out.manifest.schema.diagnostics);
}
