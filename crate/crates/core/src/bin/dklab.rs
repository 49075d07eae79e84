use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dklab::particles::{ModelParams, NoiseMode};
use dklab::runner::{self, DiffusionChoice, ExperimentConfig, RunOutcome, TestSpec};
use dklab::testfn::TestFn;
use dklab::Error;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "dklab", version, about = "Dean–Kawasaki particle simulator and martingale verification lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// frozen_frame, common_noise or pure_frozen_flow.
    #[arg(long)]
    mode: Option<NoiseMode>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    save_stride: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the ensemble and write trajectories and diagnostics.
    Simulate(Common),
    /// Martingale null test of M_t(φ) plus the conditional-increment buckets.
    TestMartingale {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "e1")]
        phi: TestFn,
        #[arg(long, default_value_t = 3.5)]
        threshold: f64,
        /// `k2_n`, `k2_inf` or a number.
        #[arg(long, default_value = "k2_n")]
        diffusion: String,
        /// Also run the generator test with g(v) = v².
        #[arg(long)]
        generator: bool,
    },
    /// Realized against integrated quadratic variation at two save spacings.
    TestQv {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "e1")]
        phi: TestFn,
        #[arg(long, value_delimiter = ',', default_value = "10,5")]
        strides: Vec<usize>,
    },
    /// Direct against spectral Q-form on random measures.
    TestQform {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 10)]
        densities: usize,
    },
    /// Noise covariance and the eigenfunction identity.
    TestKernel {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20000)]
        samples: usize,
    },
    /// Collision frequency and the Lyapunov supermartingale check.
    TestLyapunov {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e6)]
        r: f64,
    },
    /// Drift-term bound and its N-scaling over random smooth configurations.
    ScanDrift {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "e1")]
        phi: TestFn,
        #[arg(long, default_value_t = 100)]
        patterns: usize,
    },
    /// Maximal mass of short windows along the paths.
    WindowMass(Common),
    /// Summarize a finished run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run a full experiment config.
    Run(Common),
}

fn load_config(c: &Common) -> dklab::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig {
            model: ModelParams::new(64, 1.5, 0.3, 0.01, 1e-4),
            run: Default::default(),
            tests: vec![],
        },
    };
    let m = &mut cfg.model;
    if let Some(v) = c.n {
        m.n = v;
    }
    if let Some(v) = c.beta {
        m.beta = v;
    }
    if let Some(v) = c.alpha {
        m.alpha = v;
    }
    if let Some(v) = c.dt {
        m.dt = v;
    }
    if let Some(v) = c.t_end {
        m.t_end = v;
    }
    if let Some(v) = c.mode {
        m.mode = v;
    }
    if let Some(v) = c.save_stride {
        m.save_stride = v;
    }
    if let Some(v) = c.replicas {
        cfg.run.replicas = v;
    }
    if let Some(v) = c.seed {
        cfg.run.master_seed = v;
    }
    if let Some(v) = &c.out {
        cfg.run.output_dir = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn diffusion_choice(s: &str) -> dklab::Result<DiffusionChoice> {
    match s {
        "k2_n" | "k2_inf" => Ok(DiffusionChoice::Named(s.to_string())),
        _ => s
            .parse()
            .map(DiffusionChoice::Value)
            .map_err(|_| Error::config("diffusion", format!("expected k2_n, k2_inf or a number, got `{s}`"))),
    }
}

/// Replaces the config's checks when the subcommand names its own.
fn with_tests(mut cfg: ExperimentConfig, tests: Vec<TestSpec>) -> ExperimentConfig {
    cfg.tests = tests;
    cfg
}

fn spec(toml_text: &str) -> TestSpec {
    TestSpec::from_toml(toml_text).expect("built-in test spec")
}

fn build(command: Command) -> dklab::Result<ExperimentConfig> {
    let cfg = match command {
        Command::Simulate(c) => with_tests(load_config(&c)?, vec![]),
        Command::Run(c) => {
            if c.config.is_none() {
                return Err(Error::config("--config", "run needs a config file"));
            }
            load_config(&c)?
        }
        Command::TestMartingale { common, phi, threshold, diffusion, generator } => {
            let d = diffusion_choice(&diffusion)?;
            let mut tests = vec![TestSpec::Martingale { test_function: phi.clone(), threshold, diffusion_coeff: d.clone() }];
            if generator {
                tests.push(TestSpec::Generator { test_function: phi, threshold, diffusion_coeff: d });
            }
            with_tests(load_config(&common)?, tests)
        }
        Command::TestQv { common, phi, strides } => {
            let mut t = spec("kind = \"qv\"");
            if let TestSpec::Qv { test_function, strides: s, .. } = &mut t {
                *test_function = phi;
                *s = strides;
            }
            with_tests(load_config(&common)?, vec![t])
        }
        Command::TestQform { common, trials, densities } => {
            let mut t = spec("kind = \"qform_equivalence\"");
            if let TestSpec::QformEquivalence { trials: tr, densities: d, .. } = &mut t {
                *tr = trials;
                *d = densities;
            }
            with_tests(load_config(&common)?, vec![t])
        }
        Command::TestKernel { common, samples } => {
            let mut t = spec("kind = \"noise_covariance\"");
            if let TestSpec::NoiseCovariance { replicas, .. } = &mut t {
                *replicas = samples;
            }
            with_tests(load_config(&common)?, vec![t, spec("kind = \"eigenfunction\"")])
        }
        Command::TestLyapunov { common, r } => {
            with_tests(load_config(&common)?, vec![TestSpec::NonCollision { r }, spec("kind = \"lyapunov\"")])
        }
        Command::ScanDrift { common, phi, patterns } => {
            let mut t = spec("kind = \"drift_scan\"");
            if let TestSpec::DriftScan { test_function, patterns: p, .. } = &mut t {
                *test_function = phi;
                *p = patterns;
            }
            with_tests(load_config(&common)?, vec![t])
        }
        Command::WindowMass(c) => with_tests(load_config(&c)?, vec![spec("kind = \"window_mass\"")]),
        Command::Report { .. } => unreachable!("handled before building a config"),
    };
    Ok(cfg)
}

fn print_outcome(out: &RunOutcome, dir: &std::path::Path) {
    for r in &out.reports {
        println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.summary);
    }
    if out.manifest.collisions > 0 {
        println!("{} of {} replicas aborted by collision", out.manifest.collisions, out.manifest.replicas);
    }
    println!("artifacts in {}", dir.display());
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Parse { .. } | Error::Domain(_) | Error::Misuse(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn report(dir: &std::path::Path) -> ExitCode {
    match runner::load_run(dir) {
        Ok((manifest, reports)) => {
            println!("config {} ({} replicas, {} collisions)", manifest.config_hash, manifest.replicas, manifest.collisions);
            for r in &reports {
                println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.summary);
            }
            ExitCode::from(if manifest.all_pass { 0 } else { EXIT_FAIL })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("DKLAB_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: DKLAB_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    if let Command::Report { input } = &cli.command {
        return report(input);
    }
    let cfg = match build(cli.command) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_for(&e));
        }
    };
    match runner::run(&cfg) {
        Ok(out) => {
            print_outcome(&out, &cfg.run.output_dir);
            if let Some(msg) = &out.fatal {
                eprintln!("error: {msg}");
                return ExitCode::from(EXIT_RUNTIME);
            }
            ExitCode::from(if out.all_pass() { 0 } else { EXIT_FAIL })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
