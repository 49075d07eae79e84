//! Experiment configuration: a TOML document with `[model]`, `[run]` and `[[tests]]`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::particles::ModelParams;
use crate::testfn::TestFn;
use crate::torus::spectral_constants;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Skip writing per-step trajectory rows (reports and manifest are still written).
    #[serde(default)]
    pub skip_trajectories: bool,
}

fn default_replicas() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("dklab-out")
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            replicas: default_replicas(),
            master_seed: 0,
            output_dir: default_output_dir(),
            skip_trajectories: false,
        }
    }
}

/// Compensator coefficient: `"k2_n"`, `"k2_inf"` or an explicit number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiffusionChoice {
    Named(String),
    Value(f64),
}

impl Default for DiffusionChoice {
    fn default() -> Self {
        DiffusionChoice::Named("k2_n".into())
    }
}

impl DiffusionChoice {
    pub fn resolve(&self, params: &ModelParams) -> Result<f64> {
        let c = spectral_constants(params.beta, params.n)?;
        match self {
            DiffusionChoice::Value(v) => Ok(*v),
            DiffusionChoice::Named(s) if s == "k2_n" => Ok(c.k2_n),
            DiffusionChoice::Named(s) if s == "k2_inf" => Ok(c.k2_inf),
            DiffusionChoice::Named(s) => Err(Error::config("diffusion_coeff", format!("unknown choice `{s}`"))),
        }
    }
}

fn d_points() -> usize {
    8
}
fn d_one() -> f64 {
    1.0
}
fn d_k64() -> usize {
    64
}
fn d_cov_replicas() -> usize {
    20_000
}
fn d_five() -> f64 {
    5.0
}
fn d_trials() -> usize {
    50
}
fn d_densities() -> usize {
    10
}
fn d_max_n() -> usize {
    128
}
fn d_k_max() -> i32 {
    8
}
fn d_k512() -> usize {
    512
}
fn d_eigen_densities() -> usize {
    6
}
fn d_slack_1e6() -> f64 {
    1e-6
}
fn d_r() -> f64 {
    1e6
}
fn d_three() -> f64 {
    3.0
}
fn d_e1() -> TestFn {
    TestFn::Basis(1)
}
fn d_strides() -> Vec<usize> {
    vec![10, 5]
}
fn d_tol5pct() -> f64 {
    0.05
}
fn d_reduction() -> f64 {
    1.5
}
fn d_z() -> f64 {
    3.5
}
fn d_sizes() -> Vec<usize> {
    vec![16, 32, 64, 128]
}
fn d_patterns() -> usize {
    100
}
fn d_slope_tol() -> f64 {
    0.15
}
fn d_half() -> f64 {
    0.5
}
fn d_eight() -> f64 {
    8.0
}
fn d_frac99() -> f64 {
    0.99
}
fn d_orders() -> Vec<u32> {
    vec![1, 2]
}
fn d_lags() -> Vec<usize> {
    vec![1, 2, 4, 8]
}
fn d_four() -> f64 {
    4.0
}

/// One requested check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestSpec {
    /// Ensemble covariance of the Q-Wiener field on an equispaced grid.
    NoiseCovariance {
        #[serde(default = "d_points")]
        points: usize,
        #[serde(default = "d_one")]
        t: f64,
        #[serde(default = "d_k64")]
        k_trunc: usize,
        #[serde(default = "d_cov_replicas")]
        replicas: usize,
        #[serde(default = "d_five")]
        tolerance_se: f64,
    },
    /// Double-integral against spectral form of the quadratic form.
    QformEquivalence {
        #[serde(default = "d_trials")]
        trials: usize,
        #[serde(default = "d_densities")]
        densities: usize,
        #[serde(default = "d_max_n")]
        max_n: usize,
        #[serde(default)]
        betas: Option<Vec<f64>>,
        #[serde(default)]
        k_trunc: Option<usize>,
    },
    Eigenfunction {
        #[serde(default = "d_k_max")]
        k_max: i32,
        #[serde(default = "d_k512")]
        k_trunc: usize,
        #[serde(default = "d_eigen_densities")]
        densities: usize,
        #[serde(default = "d_slack_1e6")]
        slack: f64,
    },
    NonCollision {
        #[serde(default = "d_r")]
        r: f64,
    },
    Lyapunov {
        #[serde(default = "d_three")]
        tolerance_se: f64,
    },
    Qv {
        #[serde(default = "d_e1")]
        test_function: TestFn,
        #[serde(default = "d_strides")]
        strides: Vec<usize>,
        #[serde(default = "d_tol5pct")]
        tolerance: f64,
        #[serde(default = "d_reduction")]
        reduction: f64,
    },
    Martingale {
        #[serde(default = "d_e1")]
        test_function: TestFn,
        #[serde(default = "d_z")]
        threshold: f64,
        #[serde(default)]
        diffusion_coeff: DiffusionChoice,
    },
    Generator {
        #[serde(default = "d_e1")]
        test_function: TestFn,
        #[serde(default = "d_z")]
        threshold: f64,
        #[serde(default)]
        diffusion_coeff: DiffusionChoice,
    },
    DriftScan {
        #[serde(default = "d_e1")]
        test_function: TestFn,
        #[serde(default = "d_sizes")]
        sizes: Vec<usize>,
        #[serde(default = "d_patterns")]
        patterns: usize,
        #[serde(default = "d_slope_tol")]
        slope_tolerance: f64,
    },
    WindowMass {
        /// Window width as a multiple of `1/N`.
        #[serde(default = "d_half")]
        width_factor: f64,
        /// Mass ceiling as a multiple of `1/N`.
        #[serde(default = "d_eight")]
        mass_factor: f64,
        #[serde(default = "d_frac99")]
        min_fraction: f64,
    },
    Moments {
        #[serde(default = "d_e1")]
        test_function: TestFn,
        #[serde(default = "d_orders")]
        orders: Vec<u32>,
        #[serde(default = "d_lags")]
        lags: Vec<usize>,
        #[serde(default = "d_four")]
        max_ratio: f64,
    },
}

impl TestSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TestSpec::NoiseCovariance { .. } => "noise_covariance",
            TestSpec::QformEquivalence { .. } => "qform_equivalence",
            TestSpec::Eigenfunction { .. } => "eigenfunction",
            TestSpec::NonCollision { .. } => "non_collision",
            TestSpec::Lyapunov { .. } => "lyapunov",
            TestSpec::Qv { .. } => "qv",
            TestSpec::Martingale { .. } => "martingale",
            TestSpec::Generator { .. } => "generator",
            TestSpec::DriftScan { .. } => "drift_scan",
            TestSpec::WindowMass { .. } => "window_mass",
            TestSpec::Moments { .. } => "moments",
        }
    }

    /// Whether the check consumes the simulated ensemble.
    pub fn needs_ensemble(&self) -> bool {
        matches!(
            self,
            TestSpec::NonCollision { .. }
                | TestSpec::Lyapunov { .. }
                | TestSpec::Qv { .. }
                | TestSpec::Martingale { .. }
                | TestSpec::Generator { .. }
                | TestSpec::WindowMass { .. }
                | TestSpec::Moments { .. }
        )
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| parse_error(text, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub tests: Vec<TestSpec>,
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    Error::Parse { line, message: e.message().to_string() }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.run.replicas == 0 {
            return Err(Error::config("run.replicas", "need at least one replica"));
        }
        for t in &self.tests {
            if let TestSpec::Qv { strides, .. } = t {
                if strides.len() < 2 || strides.contains(&0) {
                    return Err(Error::config("tests.strides", "need two positive save spacings"));
                }
            }
        }
        Ok(())
    }

    /// Parameters actually simulated: the run's master seed drives the replicas.
    pub fn effective_params(&self) -> ModelParams {
        let mut p = self.model.clone();
        p.seed = self.run.master_seed;
        p
    }

    /// Canonical text: the config re-serialized as JSON with fixed field order.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
