//! Config-driven experiment runs: simulate the ensemble, run the checks, write artifacts.

use std::path::Path;
use std::time::Instant;

use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::noise::{replica_seed, GAUSSIAN_SAMPLER};

pub mod config;
pub mod output;
pub mod suite;

pub use config::{DiffusionChoice, ExperimentConfig, RunSection, TestSpec};
pub use output::{RunManifest, TestSummary};
pub use suite::TestOutcome;

/// Result of [`run`]. `fatal` is set when every replica aborted; artifacts are written regardless.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub reports: Vec<TestOutcome>,
    pub fatal: Option<String>,
}

impl RunOutcome {
    pub fn all_pass(&self) -> bool {
        self.fatal.is_none() && self.manifest.all_pass
    }
}

/// Runs `config` and writes its artifacts into `config.run.output_dir`.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    run_into(config, &config.run.output_dir)
}

pub fn run_into(config: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    let params = config.effective_params();
    // a config with only path-free checks simulates nothing
    let simulate = config.tests.is_empty() || config.tests.iter().any(TestSpec::needs_ensemble);
    let replicas = if simulate { config.run.replicas } else { 0 };
    let ensemble = if simulate { Some(PathEnsemble::run(&params, replicas)?) } else { None };
    let collisions = ensemble.as_ref().map_or(0, PathEnsemble::collisions);
    let fatal = (simulate && collisions == replicas).then(|| format!("all {replicas} replicas aborted by collision"));

    let mut reports = Vec::with_capacity(config.tests.len());
    for spec in &config.tests {
        reports.push(suite::run_test(spec, &params, config.run.master_seed, ensemble.as_ref())?);
    }

    output::write_artifacts(dir, ensemble.as_ref(), params.n, config.run.skip_trajectories, &reports)?;
    let manifest = RunManifest {
        schema_version: output::SCHEMA_VERSION,
        config_hash: config.hash(),
        build_id: output::build_id(),
        gaussian_sampler: GAUSSIAN_SAMPLER.to_string(),
        master_seed: config.run.master_seed,
        replica_seeds: (0..replicas as u64).map(|r| replica_seed(config.run.master_seed, r)).collect(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        in_noncollision_regime: params.in_noncollision_regime(),
        replicas,
        collisions,
        schema: output::Schema::for_n(params.n),
        tests: reports
            .iter()
            .map(|r| TestSummary { name: r.name.clone(), kind: r.kind.clone(), pass: r.pass, summary: r.summary.clone() })
            .collect(),
        all_pass: reports.iter().all(|r| r.pass),
    };
    output::write_json(&dir.join(output::MANIFEST_FILE), &manifest)?;
    Ok(RunOutcome { manifest, reports, fatal })
}

/// Re-reads a finished run directory.
pub fn load_run(dir: &Path) -> Result<(RunManifest, Vec<TestOutcome>)> {
    if !dir.join(output::MANIFEST_FILE).is_file() {
        return Err(Error::Misuse(format!("{} holds no run manifest", dir.display())));
    }
    Ok((RunManifest::load(dir)?, output::load_reports(dir)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::{ModelParams, NoiseMode};

    fn tiny(dir: &Path) -> ExperimentConfig {
        let mut model = ModelParams::new(4, 1.5, 0.3, 0.0, 1e-3);
        model.mode = NoiseMode::CommonNoise;
        ExperimentConfig {
            model,
            run: RunSection { replicas: 1, master_seed: 5, output_dir: dir.to_path_buf(), skip_trajectories: false },
            tests: vec![],
        }
    }

    #[test]
    fn zero_horizon_writes_initial_state_only() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&tiny(dir.path())).unwrap();
        assert!(out.all_pass());
        assert_eq!(out.manifest.replica_seeds.len(), 1);
        let traj = std::fs::read_to_string(dir.path().join(output::TRAJECTORIES_FILE)).unwrap();
        assert_eq!(traj.lines().count(), 3);
        let (m, r) = load_run(dir.path()).unwrap();
        assert_eq!(m, out.manifest);
        assert!(r.is_empty());
    }

    #[test]
    fn path_free_checks_skip_simulation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.model.t_end = 1.0;
        cfg.run.replicas = 1000;
        cfg.tests.push(TestSpec::from_toml("kind = \"eigenfunction\"\nk_max = 1\nk_trunc = 16\ndensities = 2").unwrap());
        let out = run(&cfg).unwrap();
        assert_eq!(out.manifest.replicas, 0);
        assert!(out.all_pass(), "{:?}", out.reports);
    }

    #[test]
    fn empty_dir_is_not_a_run() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_run(dir.path()).is_err());
    }
}
