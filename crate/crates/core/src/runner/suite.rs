//! The checks behind `[[tests]]` entries, CLI subcommands and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::martingale::{
    drift_term_bound, drift_term_magnitude, eigenfunction_check, generator_test, increment_moment_scan,
    martingale_statistic, q_form_direct, q_form_spectral, qv_convergence, QFormSpec, ScalarPoly,
};
use crate::measure::{DensityMeasure, EmpiricalMeasure};
use crate::noise::field_covariance;
use crate::particles::{collision_probability_bound, ModelParams, ParticleState};
use crate::testfn::{Bump, TestFn, TestFunction, TrigPoly};
use crate::torus::{kernel_qbar, spectral_constants, ModeIndex};

use super::config::{DiffusionChoice, TestSpec};

/// Fewest surviving replicas for a per-time ensemble statistic.
pub const MIN_ALIVE: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub name: String,
    pub kind: String,
    pub pass: bool,
    pub summary: String,
    pub details: serde_json::Value,
}

impl TestOutcome {
    fn new(name: impl Into<String>, kind: &str, pass: bool, summary: String, details: serde_json::Value) -> Self {
        TestOutcome { name: name.into(), kind: kind.to_string(), pass, summary, details }
    }
}

fn sub_seed(master: u64, tag: u64) -> u64 {
    crate::noise::replica_seed(master, tag ^ 0xD1B5_4A32_D192_ED03)
}

pub fn noise_covariance(beta: f64, master_seed: u64, points: usize, t: f64, k_trunc: usize, replicas: usize, tolerance_se: f64) -> Result<TestOutcome> {
    let grid: Vec<f64> = (0..points).map(|j| j as f64 / points as f64).collect();
    let est = field_covariance(master_seed, replicas, beta, k_trunc, t, &grid)?;
    let mut worst: f64 = 0.0;
    let mut pass = true;
    let mut tail = 0.0;
    for i in 0..points {
        for j in 0..points {
            let q = kernel_qbar(beta, grid[i] - grid[j], k_trunc)?;
            tail = t * q.tail_bound;
            let k = i * points + j;
            let dev = (est.cov[k] - t * q.value).abs();
            let allowed = tolerance_se * est.se[k] + t * q.tail_bound;
            pass &= dev <= allowed;
            worst = worst.max(dev / allowed);
        }
    }
    Ok(TestOutcome::new(
        "noise covariance",
        "noise_covariance",
        pass,
        format!("max |cov - tQ| / (5 SE + tail) = {worst:.3} over {points}x{points} entries, {replicas} replicas"),
        json!({ "beta": beta, "t": t, "k_trunc": k_trunc, "tail": tail, "estimate": est, "worst_ratio": worst }),
    ))
}

fn random_test_function(rng: &mut ChaCha8Rng) -> Box<dyn TestFunction> {
    if rng.random_bool(0.5) {
        let terms = (1..=4u32)
            .map(|k| (k, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        Box::new(TrigPoly { c0: rng.random_range(-1.0..1.0), terms })
    } else {
        Box::new(Bump { center: rng.random(), kappa: rng.random_range(0.5..4.0) })
    }
}

fn random_density(rng: &mut ChaCha8Rng, allow_zero: bool) -> Result<DensityMeasure> {
    let pieces = rng.random_range(2..=8);
    let mut inner: Vec<f64> = (0..pieces - 1).map(|_| rng.random_range(0.02..0.98)).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    let mut bp = vec![0.0];
    bp.extend(inner);
    bp.push(1.0);
    let raw: Vec<f64> = (0..bp.len() - 1)
        .map(|p| if allow_zero && p % 3 == 1 { 0.0 } else { rng.random_range(0.1..3.0) })
        .collect();
    DensityMeasure::normalized(bp, raw)
}

/// Smooth positive profile `1 + Σ_{j≤3} a_j cos(2πjx) + b_j sin(2πjx)` on `pieces` cells.
pub fn smooth_density(rng: &mut ChaCha8Rng, pieces: usize) -> Result<DensityMeasure> {
    let coeffs: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)))
        .collect();
    DensityMeasure::from_profile(pieces, |x| {
        1.0 + coeffs
            .iter()
            .enumerate()
            .map(|(j, (a, b))| {
                let w = 2.0 * std::f64::consts::PI * (j + 1) as f64;
                a * (w * x).cos() + b * (w * x).sin()
            })
            .sum::<f64>()
    })
}

pub fn qform_equivalence(master_seed: u64, trials: usize, densities: usize, max_n: usize, betas: &[f64], k_trunc: Option<usize>) -> Result<TestOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(master_seed, 2));
    let mut worst: f64 = 0.0;
    let mut pass = true;
    let mut negative = 0;
    let mut checked = 0;
    let mut per_beta = Vec::new();
    for &beta in betas {
        let mut beta_worst: f64 = 0.0;
        let mut check = |a: crate::torus::Bounded, b: crate::torus::Bounded| {
            let allowed = a.tail_bound + b.tail_bound + 1e-10;
            let dev = (a.value - b.value).abs();
            if a.value < -a.tail_bound {
                negative += 1;
            }
            checked += 1;
            beta_worst = beta_worst.max(dev / allowed);
            dev <= allowed && a.value >= -a.tail_bound
        };
        for _ in 0..trials {
            let n = rng.random_range(1..=max_n);
            let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let m = EmpiricalMeasure::from_positions(&x)?;
            let phi = random_test_function(&mut rng);
            let spec = QFormSpec { beta, k_trunc: k_trunc.unwrap_or(QFormSpec::default_truncation(n)), diffusion_coeff: 0.0 };
            pass &= check(q_form_direct(&m, phi.as_ref(), &spec)?, q_form_spectral(&m, phi.as_ref(), &spec)?);
        }
        for i in 0..densities {
            let d = random_density(&mut rng, i % 4 == 3)?;
            let phi = random_test_function(&mut rng);
            let spec = QFormSpec { beta, k_trunc: k_trunc.unwrap_or(64), diffusion_coeff: 0.0 };
            pass &= check(q_form_direct(&d, phi.as_ref(), &spec)?, q_form_spectral(&d, phi.as_ref(), &spec)?);
        }
        per_beta.push(json!({ "beta": beta, "worst_ratio": beta_worst }));
        worst = worst.max(beta_worst);
    }
    Ok(TestOutcome::new(
        "q-form equivalence",
        "qform_equivalence",
        pass,
        format!("{checked} comparisons, max |direct - spectral| / (tails + 1e-10) = {worst:.3e}, {negative} below -tail"),
        json!({ "per_beta": per_beta, "trials": trials, "densities": densities, "max_n": max_n }),
    ))
}

pub fn eigenfunction(master_seed: u64, beta: f64, k_max: i32, k_trunc: usize, densities: usize, slack: f64) -> Result<TestOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(master_seed, 3));
    let spec = QFormSpec { beta, k_trunc, diffusion_coeff: 0.0 };
    let mut ds = vec![DensityMeasure::uniform()];
    for _ in 1..densities {
        ds.push(smooth_density(&mut rng, 32)?);
    }
    let mut worst: f64 = 0.0;
    let mut pass = true;
    let mut tail = 0.0;
    for d in &ds {
        for k in -k_max..=k_max {
            let r = eigenfunction_check(d, ModeIndex(k), &spec)?;
            tail = r.tail_bound;
            pass &= r.value <= r.tail_bound + slack;
            worst = worst.max(r.value);
        }
    }
    Ok(TestOutcome::new(
        "eigenfunction identity",
        "eigenfunction",
        pass,
        format!("max residual {worst:.3e} (allowed {:.3e}) over {} densities, |k| <= {k_max}, K = {k_trunc}", tail + slack, ds.len()),
        json!({ "beta": beta, "max_residual": worst, "tail_bound": tail, "slack": slack }),
    ))
}

pub fn non_collision(ensemble: &PathEnsemble, r: f64) -> Result<TestOutcome> {
    let p = &ensemble.params;
    let collisions = ensemble.collisions();
    let f0 = ensemble.replicas.first().map(|t| t.diagnostics[0].lyapunov).unwrap_or(0.0);
    let bound = collision_probability_bound(p, r, f0)?;
    // an aborted replica certainly came closer than 1/R
    let hits = ensemble
        .replicas
        .iter()
        .filter(|t| t.aborted() || t.min_gap_overall < 1.0 / r)
        .count();
    let freq = hits as f64 / ensemble.len() as f64;
    let pass = collisions == 0 && freq <= bound;
    let first = ensemble.replicas.iter().filter_map(|t| t.collision.as_ref()).map(|c| c.t).fold(f64::INFINITY, f64::min);
    Ok(TestOutcome::new(
        "non-collision",
        "non_collision",
        pass,
        format!(
            "{collisions}/{} replicas aborted by collision (earliest t = {}), P(min gap < 1/R) = {freq:.3} vs bound {bound:.3}",
            ensemble.len(),
            if first.is_finite() { format!("{first:.1e}") } else { "-".into() }
        ),
        json!({ "collisions": collisions, "replicas": ensemble.len(), "r": r, "frequency": freq, "bound": bound, "f0": f0,
                "collision_events": ensemble.replicas.iter().filter_map(|t| t.collision.clone()).collect::<Vec<_>>() }),
    ))
}

pub fn lyapunov_supermartingale(ensemble: &PathEnsemble, tolerance_se: f64) -> Result<TestOutcome> {
    let p = &ensemble.params;
    let k2 = spectral_constants(p.beta, p.n)?.k2_inf;
    let mut points = Vec::new();
    let mut pass = ensemble.save_times.len() > 1;
    let mut worst = f64::NEG_INFINITY;
    let mut insufficient = 0;
    for (j, &t) in ensemble.save_times.iter().enumerate().skip(1) {
        let vals: Vec<f64> = ensemble
            .alive_at(j)
            .map(|r| r.diagnostics[j].lyapunov - r.diagnostics[0].lyapunov - k2 * t)
            .collect();
        if vals.len() < MIN_ALIVE {
            insufficient += 1;
            pass = false;
            points.push(json!({ "t": t, "n_alive": vals.len() }));
            continue;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        let ratio = if se > 0.0 { mean / se } else if mean <= 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
        worst = worst.max(ratio);
        pass &= mean <= tolerance_se * se;
        points.push(json!({ "t": t, "n_alive": vals.len(), "mean": mean, "se": se }));
    }
    Ok(TestOutcome::new(
        "Lyapunov supermartingale",
        "lyapunov",
        pass,
        if insufficient > 0 {
            format!("{insufficient} of {} save times have fewer than {MIN_ALIVE} surviving replicas", ensemble.save_times.len() - 1)
        } else {
            format!("max mean/SE of F(X_t) - F(X_0) - K2 t = {worst:.2} (limit {tolerance_se})")
        },
        json!({ "k2_inf": k2, "points": points, "insufficient_times": insufficient }),
    ))
}

fn insufficient_outcome(name: &str, kind: &str, msg: String) -> TestOutcome {
    TestOutcome::new(name, kind, false, format!("insufficient data: {msg}"), json!({ "insufficient": msg }))
}

pub fn qv(ensemble: &PathEnsemble, phi: &TestFn, strides: &[usize], tolerance: f64, reduction: f64) -> Result<TestOutcome> {
    let f = phi.build();
    let k2 = spectral_constants(ensemble.params.beta, ensemble.params.n)?.k2_n;
    let spec = QFormSpec { beta: ensemble.params.beta, k_trunc: ensemble.params.n, diffusion_coeff: k2 };
    let r = qv_convergence(ensemble, f.as_ref(), &spec, strides, tolerance, reduction)?;
    let summary = if r.replicas_used < MIN_ALIVE {
        format!("only {}/{} replicas completed the horizon", r.replicas_used, r.replicas)
    } else {
        format!(
            "rel. error {:.4} at dt_save = {:.1e}, {:.4} at {:.1e}; reduction {:.2} (need <= {tolerance}, >= {reduction})",
            r.rel_error[0], r.save_dt[0], r.rel_error[1], r.save_dt[1], r.reduction
        )
    };
    Ok(TestOutcome::new(format!("exact QV ({phi})"), "qv", r.pass, summary, serde_json::to_value(&r)?))
}

fn martingale_summary(r: &crate::martingale::MartingaleReport) -> String {
    if r.insufficient_times > 0 {
        let alive = r.points.last().map(|p| p.n_alive).unwrap_or(0);
        format!(
            "{} of {} save times have fewer than {MIN_ALIVE} surviving replicas ({} aborted, {alive} alive at the end)",
            r.insufficient_times,
            r.points.len(),
            r.aborted
        )
    } else {
        format!("max |z| = {:.2}, max bucket |z| = {:.2} (limit {})", r.max_abs_z, r.max_abs_bucket_z, r.threshold)
    }
}

pub fn martingale(ensemble: &PathEnsemble, phi: &TestFn, diffusion: &DiffusionChoice, threshold: f64) -> Result<TestOutcome> {
    let name = format!("martingale ({phi})");
    let spec = QFormSpec {
        beta: ensemble.params.beta,
        k_trunc: QFormSpec::default_truncation(ensemble.params.n),
        diffusion_coeff: diffusion.resolve(&ensemble.params)?,
    };
    match martingale_statistic(ensemble, phi.build().as_ref(), &spec, threshold) {
        Ok(r) => Ok(TestOutcome::new(name, "martingale", r.pass, martingale_summary(&r), serde_json::to_value(&r)?)),
        Err(Error::InsufficientData(m)) => Ok(insufficient_outcome(&name, "martingale", m)),
        Err(e) => Err(e),
    }
}

pub fn generator(ensemble: &PathEnsemble, phi: &TestFn, diffusion: &DiffusionChoice, threshold: f64) -> Result<TestOutcome> {
    let name = format!("generator g(v)=v^2 ({phi})");
    let spec = QFormSpec {
        beta: ensemble.params.beta,
        k_trunc: ensemble.params.n,
        diffusion_coeff: diffusion.resolve(&ensemble.params)?,
    };
    match generator_test(ensemble, &ScalarPoly::square(), phi.build().as_ref(), &spec, threshold) {
        Ok(r) => Ok(TestOutcome::new(name, "generator", r.pass, martingale_summary(&r), serde_json::to_value(&r)?)),
        Err(Error::InsufficientData(m)) => Ok(insufficient_outcome(&name, "generator", m)),
        Err(e) => Err(e),
    }
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn drift_scan(master_seed: u64, alpha: f64, phi: &TestFn, sizes: &[usize], patterns: usize, slope_tolerance: f64) -> Result<TestOutcome> {
    let f = phi.build();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(master_seed, 9));
    let shapes = (0..patterns).map(|_| smooth_density(&mut rng, 256)).collect::<Result<Vec<_>>>()?;
    let mut bound_ok = true;
    let mut maxima = Vec::new();
    let mut worst_bound_ratio: f64 = 0.0;
    for &n in sizes {
        let params = ModelParams::new(n, 2.0, alpha, 1.0, 1.0);
        let bound = drift_term_bound(f.as_ref(), &params, n);
        let mut max_abs: f64 = 0.0;
        for d in &shapes {
            let x = (1..=n).map(|i| d.quantile(i as f64 / n as f64)).collect::<Result<Vec<_>>>()?;
            let v = drift_term_magnitude(&ParticleState::new(0.0, x), f.as_ref(), &params).abs();
            bound_ok &= v <= bound;
            worst_bound_ratio = worst_bound_ratio.max(v / bound);
            max_abs = max_abs.max(v);
        }
        maxima.push(max_abs);
    }
    let lx: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = maxima.iter().map(|v| v.ln()).collect();
    let slope = ls_slope(&lx, &ly);
    let slope_ok = (slope + alpha).abs() <= slope_tolerance;
    Ok(TestOutcome::new(
        "drift term bound and scaling",
        "drift_scan",
        bound_ok && slope_ok,
        format!("max |I|/bound = {worst_bound_ratio:.3}; log-log slope {slope:.3} (target {:.2} +/- {slope_tolerance})", -alpha),
        json!({ "sizes": sizes, "max_abs": maxima, "slope": slope, "alpha": alpha, "worst_bound_ratio": worst_bound_ratio }),
    ))
}

pub fn window_mass(ensemble: &PathEnsemble, width_factor: f64, mass_factor: f64, min_fraction: f64) -> Result<TestOutcome> {
    let n = ensemble.params.n as f64;
    let full = ensemble.save_times.len();
    let mut good = 0;
    let mut worst: f64 = 0.0;
    for r in &ensemble.replicas {
        let mut ok = r.times.len() == full;
        for j in 0..r.times.len() {
            let m = PathEnsemble::measure(r, j)?.max_window_mass(width_factor / n)?;
            worst = worst.max(m * n);
            ok &= m <= mass_factor / n;
        }
        good += usize::from(ok);
    }
    let frac = good as f64 / ensemble.len() as f64;
    Ok(TestOutcome::new(
        "window mass",
        "window_mass",
        frac >= min_fraction,
        format!(
            "{good}/{} replicas keep window mass <= {mass_factor}/N at every save time (need {:.0}%); worst N*mass = {worst}",
            ensemble.len(),
            100.0 * min_fraction
        ),
        json!({ "fraction": frac, "worst_scaled_mass": worst, "aborted": ensemble.collisions() }),
    ))
}

pub fn moments(ensemble: &PathEnsemble, phi: &TestFn, orders: &[u32], lags: &[usize], max_ratio: f64) -> Result<TestOutcome> {
    let f = phi.build();
    let scans = orders
        .iter()
        .map(|&m| increment_moment_scan(ensemble, f.as_ref(), m, lags, max_ratio))
        .collect::<Result<Vec<_>>>()?;
    let pass = scans.iter().all(|s| s.pass);
    let summary = scans
        .iter()
        .map(|s| format!("m={}: ratio {:.2} from {} replicas", s.m, s.ratio, s.replicas_used))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(TestOutcome::new(
        format!("increment moments ({phi})"),
        "moments",
        pass,
        format!("{summary} (limit {max_ratio}, need {} replicas)", crate::martingale::stats::MIN_MOMENT_REPLICAS),
        serde_json::to_value(&scans)?,
    ))
}

/// Runs one configured check; tests that need paths receive the shared ensemble.
pub fn run_test(spec: &TestSpec, params: &ModelParams, master_seed: u64, ensemble: Option<&PathEnsemble>) -> Result<TestOutcome> {
    let need = || ensemble.ok_or_else(|| Error::Misuse(format!("{} needs a simulated ensemble", spec.kind())));
    match spec {
        TestSpec::NoiseCovariance { points, t, k_trunc, replicas, tolerance_se } => {
            noise_covariance(params.beta, master_seed, *points, *t, *k_trunc, *replicas, *tolerance_se)
        }
        TestSpec::QformEquivalence { trials, densities, max_n, betas, k_trunc } => {
            let betas = betas.clone().unwrap_or_else(|| vec![params.beta]);
            qform_equivalence(master_seed, *trials, *densities, *max_n, &betas, *k_trunc)
        }
        TestSpec::Eigenfunction { k_max, k_trunc, densities, slack } => {
            eigenfunction(master_seed, params.beta, *k_max, *k_trunc, *densities, *slack)
        }
        TestSpec::NonCollision { r } => non_collision(need()?, *r),
        TestSpec::Lyapunov { tolerance_se } => lyapunov_supermartingale(need()?, *tolerance_se),
        TestSpec::Qv { test_function, strides, tolerance, reduction } => qv(need()?, test_function, strides, *tolerance, *reduction),
        TestSpec::Martingale { test_function, threshold, diffusion_coeff } => martingale(need()?, test_function, diffusion_coeff, *threshold),
        TestSpec::Generator { test_function, threshold, diffusion_coeff } => generator(need()?, test_function, diffusion_coeff, *threshold),
        TestSpec::DriftScan { test_function, sizes, patterns, slope_tolerance } => {
            drift_scan(master_seed, params.alpha, test_function, sizes, *patterns, *slope_tolerance)
        }
        TestSpec::WindowMass { width_factor, mass_factor, min_fraction } => window_mass(need()?, *width_factor, *mass_factor, *min_fraction),
        TestSpec::Moments { test_function, orders, lags, max_ratio } => moments(need()?, test_function, orders, lags, *max_ratio),
    }
}
