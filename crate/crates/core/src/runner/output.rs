//! Artifact files of a run: columnar trajectories, diagnostics, collisions, reports and manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::PathEnsemble;
use crate::error::Result;
use crate::particles::{CollisionEvent, Trajectory};

use super::suite::TestOutcome;

pub const SCHEMA_VERSION: u32 = 1;
pub const TRAJECTORIES_FILE: &str = "trajectories.tsv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.tsv";
pub const COLLISIONS_FILE: &str = "collisions.tsv";
pub const REPORTS_FILE: &str = "reports.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const DIAGNOSTICS_COLUMNS: [&str; 7] =
    ["replica_id", "t", "lyapunov", "radial", "min_chord_gap", "max_abs_drift", "substeps_used"];
pub const COLLISIONS_COLUMNS: [&str; 4] = ["replica_id", "t", "i", "gap"];

pub fn build_id() -> String {
    format!("{} {} ({})", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"), std::env::consts::ARCH)
}

/// Column names of each artifact file, recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub trajectories: Vec<String>,
    pub diagnostics: Vec<String>,
    pub collisions: Vec<String>,
    pub reports: Vec<String>,
}

impl Schema {
    pub fn for_n(n: usize) -> Self {
        let mut traj = vec!["replica_id".to_string(), "t".to_string()];
        traj.extend((1..=n).map(|i| format!("x_{i}")));
        let own = |c: &[&str]| c.iter().map(|s| s.to_string()).collect();
        Schema {
            trajectories: traj,
            diagnostics: own(&DIAGNOSTICS_COLUMNS),
            collisions: own(&COLLISIONS_COLUMNS),
            reports: own(&["name", "kind", "pass", "summary", "details"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub name: String,
    pub kind: String,
    pub pass: bool,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub build_id: String,
    pub gaussian_sampler: String,
    pub master_seed: u64,
    pub replica_seeds: Vec<u64>,
    pub wall_clock_seconds: f64,
    pub in_noncollision_regime: bool,
    pub replicas: usize,
    pub collisions: usize,
    pub schema: Schema,
    pub tests: Vec<TestSummary>,
    pub all_pass: bool,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn tsv_row(w: &mut impl Write, cells: impl IntoIterator<Item = String>) -> std::io::Result<()> {
    let line: Vec<String> = cells.into_iter().collect();
    writeln!(w, "{}", line.join("\t"))
}

fn header(w: &mut impl Write, what: &str, columns: &[String]) -> std::io::Result<()> {
    writeln!(w, "# dklab {what} schema_version={SCHEMA_VERSION}")?;
    tsv_row(w, columns.iter().cloned())
}

pub fn write_trajectories(path: &Path, schema: &Schema, replicas: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    header(&mut w, "trajectories", &schema.trajectories)?;
    for r in replicas {
        for (t, x) in r.times.iter().zip(&r.states) {
            tsv_row(&mut w, [r.replica_id.to_string(), t.to_string()].into_iter().chain(x.iter().map(|v| v.to_string())))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics(path: &Path, schema: &Schema, replicas: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    header(&mut w, "diagnostics", &schema.diagnostics)?;
    for r in replicas {
        for (t, d) in r.times.iter().zip(&r.diagnostics) {
            tsv_row(
                &mut w,
                [
                    r.replica_id.to_string(),
                    t.to_string(),
                    d.lyapunov.to_string(),
                    d.radial.to_string(),
                    d.min_chord_gap.to_string(),
                    d.max_abs_drift.to_string(),
                    d.substeps_used.to_string(),
                ],
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_collisions(path: &Path, schema: &Schema, replicas: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    header(&mut w, "collisions", &schema.collisions)?;
    for r in replicas {
        if let Some(CollisionEvent { t, i, gap }) = &r.collision {
            tsv_row(&mut w, [r.replica_id.to_string(), t.to_string(), i.to_string(), gap.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes every artifact except the manifest.
pub fn write_artifacts(dir: &Path, ensemble: Option<&PathEnsemble>, n: usize, skip_trajectories: bool, reports: &[TestOutcome]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let schema = Schema::for_n(n);
    let empty = Vec::new();
    let replicas = ensemble.map(|e| &e.replicas).unwrap_or(&empty);
    if !skip_trajectories {
        write_trajectories(&dir.join(TRAJECTORIES_FILE), &schema, replicas)?;
    }
    write_diagnostics(&dir.join(DIAGNOSTICS_FILE), &schema, replicas)?;
    write_collisions(&dir.join(COLLISIONS_FILE), &schema, replicas)?;
    write_json(&dir.join(REPORTS_FILE), &reports)?;
    Ok(())
}

/// Reads the reports of a finished run.
pub fn load_reports(dir: &Path) -> Result<Vec<TestOutcome>> {
    let text = std::fs::read_to_string(dir.join(REPORTS_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::{simulate_replica, ModelParams};

    #[test]
    fn trajectory_rows_match_schema() {
        let mut p = ModelParams::new(4, 1.5, 0.3, 2e-3, 1e-3);
        p.mode = crate::particles::NoiseMode::CommonNoise;
        let t = simulate_replica(&p, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let schema = Schema::for_n(4);
        let path = dir.path().join("t.tsv");
        write_trajectories(&path, &schema, std::slice::from_ref(&t)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# dklab trajectories"));
        assert_eq!(lines[1], "replica_id\tt\tx_1\tx_2\tx_3\tx_4");
        assert_eq!(lines.len(), 2 + t.times.len());
        let row: Vec<f64> = lines[2].split('\t').map(|c| c.parse().unwrap()).collect();
        assert_eq!(row[2..], t.states[0][..]);
    }
}
