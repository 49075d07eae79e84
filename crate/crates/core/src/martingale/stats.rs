//! Ensemble statistics for the martingale problem.

use serde::{Deserialize, Serialize};

use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::particles::{initial_state, Diffusion, ParticleState, Trajectory};
use crate::testfn::TestFunction;

use super::dynamics::exact_qv_rate_with;
use super::qform::q_form_direct;
use super::QFormSpec;

pub const MIN_MARTINGALE_REPLICAS: usize = 50;
pub const MIN_MOMENT_REPLICAS: usize = 200;
/// Conditional buckets smaller than this are skipped.
pub const MIN_BUCKET: usize = 10;

/// `M_t(φ) = ⟨L_t, φ⟩ - ⟨L_0, φ⟩ - D ∫_0^t ⟨L_s, φ''⟩ ds` along one saved path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSample {
    pub replica_id: u64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `⟨L_s, φ''⟩` at each save time.
    pub integrand: Vec<f64>,
}

fn pairing(x: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    x.iter().map(|&v| f(v)).sum::<f64>() / x.len() as f64
}

/// Builds `M_t(φ)` on the saved times of `traj`, subsampled every `stride` saves.
pub fn martingale_sample(traj: &Trajectory, phi: &dyn TestFunction, diffusion_coeff: f64, stride: usize) -> MartingaleSample {
    let idx: Vec<usize> = (0..traj.times.len()).step_by(stride.max(1)).collect();
    let times: Vec<f64> = idx.iter().map(|&i| traj.times[i]).collect();
    let level: Vec<f64> = idx.iter().map(|&i| pairing(&traj.states[i], |x| phi.value(x))).collect();
    let integrand: Vec<f64> = idx.iter().map(|&i| pairing(&traj.states[i], |x| phi.d2(x))).collect();
    let mut values = Vec::with_capacity(idx.len());
    let mut comp = 0.0;
    for j in 0..idx.len() {
        if j > 0 {
            comp += 0.5 * (times[j] - times[j - 1]) * (integrand[j] + integrand[j - 1]);
        }
        values.push(level[j] - level[0] - diffusion_coeff * comp);
    }
    MartingaleSample { replica_id: traj.replica_id, times, values, integrand }
}

/// Cumulative sum of squared increments.
pub fn realized_qv(sample: &MartingaleSample) -> Vec<f64> {
    let mut out = Vec::with_capacity(sample.values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in sample.values.windows(2) {
        acc += (w[1] - w[0]).powi(2);
        out.push(acc);
    }
    out
}

/// Per-time summary of an ensemble mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub t: f64,
    pub n_alive: usize,
    pub mean: f64,
    pub se: f64,
    /// `None` when too few replicas survive to this time.
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketPoint {
    pub s: f64,
    pub t: f64,
    pub positive: bool,
    pub count: usize,
    pub mean: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub name: String,
    pub test_function: String,
    pub diffusion_coeff: f64,
    pub threshold: f64,
    pub replicas: usize,
    pub aborted: usize,
    pub points: Vec<TimePoint>,
    pub buckets: Vec<BucketPoint>,
    pub max_abs_z: f64,
    pub max_abs_bucket_z: f64,
    pub insufficient_times: usize,
    pub pass: bool,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn z_score(mean: f64, se: f64) -> f64 {
    if se > 0.0 {
        mean / se
    } else if mean.abs() <= 1e-14 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Tests `E[M_t] = 0` per save time and `E[M_t - M_s | sign M_s] = 0` on consecutive pairs.
pub fn evaluate_martingale(
    name: &str,
    test_function: String,
    diffusion_coeff: f64,
    grid: &[f64],
    samples: &[MartingaleSample],
    replicas: usize,
    threshold: f64,
) -> Result<MartingaleReport> {
    if replicas < MIN_MARTINGALE_REPLICAS {
        return Err(Error::InsufficientData(format!(
            "{name}: {replicas} replicas, need at least {MIN_MARTINGALE_REPLICAS}"
        )));
    }
    let aborted = samples.iter().filter(|s| s.values.len() < grid.len()).count() + (replicas - samples.len());

    let mut points = Vec::with_capacity(grid.len());
    let mut insufficient = 0;
    let mut max_abs_z: f64 = 0.0;
    for (j, &t) in grid.iter().enumerate() {
        let vals: Vec<f64> = samples.iter().filter(|s| s.values.len() > j).map(|s| s.values[j]).collect();
        let n_alive = vals.len();
        if n_alive < MIN_MARTINGALE_REPLICAS {
            insufficient += 1;
            points.push(TimePoint { t, n_alive, mean: f64::NAN, se: f64::NAN, z: None });
            continue;
        }
        let (mean, se) = mean_se(&vals);
        let z = z_score(mean, se);
        max_abs_z = max_abs_z.max(z.abs());
        points.push(TimePoint { t, n_alive, mean, se, z: Some(z) });
    }

    let mut buckets = Vec::new();
    let mut max_abs_bucket_z: f64 = 0.0;
    for j in 1..grid.len().saturating_sub(1) {
        for positive in [true, false] {
            let incs: Vec<f64> = samples
                .iter()
                .filter(|s| s.values.len() > j + 1 && (s.values[j] >= 0.0) == positive)
                .map(|s| s.values[j + 1] - s.values[j])
                .collect();
            if incs.len() < MIN_BUCKET {
                continue;
            }
            let (mean, se) = mean_se(&incs);
            let z = z_score(mean, se);
            max_abs_bucket_z = max_abs_bucket_z.max(z.abs());
            buckets.push(BucketPoint { s: grid[j], t: grid[j + 1], positive, count: incs.len(), mean, se, z });
        }
    }
    // the grid needs at least one informative time beyond t = 0
    if grid.len() < 2 {
        insufficient += 1;
    }
    let pass = insufficient == 0 && max_abs_z <= threshold && max_abs_bucket_z <= threshold;
    Ok(MartingaleReport {
        name: name.to_string(),
        test_function,
        diffusion_coeff,
        threshold,
        replicas,
        aborted,
        points,
        buckets,
        max_abs_z,
        max_abs_bucket_z,
        insufficient_times: insufficient,
        pass,
    })
}

pub fn martingale_statistic(
    ensemble: &PathEnsemble,
    phi: &dyn TestFunction,
    spec: &QFormSpec,
    threshold: f64,
) -> Result<MartingaleReport> {
    let samples: Vec<MartingaleSample> = ensemble
        .replicas
        .iter()
        .map(|r| martingale_sample(r, phi, spec.diffusion_coeff, 1))
        .collect();
    evaluate_martingale("martingale", phi.name(), spec.diffusion_coeff, &ensemble.save_times, &samples, ensemble.len(), threshold)
}

/// Scalar polynomial `g(v) = Σ c_j v^j` with exact derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarPoly {
    pub coeffs: Vec<f64>,
}

impl ScalarPoly {
    pub fn square() -> Self {
        ScalarPoly { coeffs: vec![0.0, 0.0, 1.0] }
    }

    pub fn eval(&self, v: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * v + c)
    }

    pub fn derivative(&self) -> ScalarPoly {
        ScalarPoly {
            coeffs: self.coeffs.iter().enumerate().skip(1).map(|(j, c)| j as f64 * c).collect(),
        }
    }
}

/// `M^G_t = g(⟨L_t,φ⟩) - g(⟨L_0,φ⟩) - ∫ [D g'⟨L,φ''⟩ + ½ g'' Q^N_L(φ)] ds`,
/// with `Q^N` truncated at `K = N`.
pub fn generator_test(
    ensemble: &PathEnsemble,
    g: &ScalarPoly,
    phi: &dyn TestFunction,
    spec: &QFormSpec,
    threshold: f64,
) -> Result<MartingaleReport> {
    let g1 = g.derivative();
    let g2 = g1.derivative();
    let qspec = QFormSpec { k_trunc: ensemble.params.n, ..*spec };
    let samples = ensemble
        .replicas
        .iter()
        .map(|r| {
            let mut gen = Vec::with_capacity(r.times.len());
            let mut level = Vec::with_capacity(r.times.len());
            for (t, x) in r.times.iter().zip(&r.states) {
                let p = pairing(x, |v| phi.value(v));
                let lap = pairing(x, |v| phi.d2(v));
                let m = EmpiricalMeasure::from_state(&ParticleState::new(*t, x.clone()))?;
                let q = q_form_direct(&m, phi, &qspec)?.value;
                gen.push(spec.diffusion_coeff * g1.eval(p) * lap + 0.5 * g2.eval(p) * q);
                level.push(g.eval(p));
            }
            let mut values = Vec::with_capacity(gen.len());
            let mut comp = 0.0;
            for j in 0..gen.len() {
                if j > 0 {
                    comp += 0.5 * (r.times[j] - r.times[j - 1]) * (gen[j] + gen[j - 1]);
                }
                values.push(level[j] - level[0] - comp);
            }
            Ok(MartingaleSample { replica_id: r.replica_id, times: r.times.clone(), values, integrand: gen })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_martingale("generator", phi.name(), spec.diffusion_coeff, &ensemble.save_times, &samples, ensemble.len(), threshold)
}

/// Realized against integrated quadratic variation at several save spacings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvReport {
    pub test_function: String,
    pub strides: Vec<usize>,
    pub save_dt: Vec<f64>,
    /// `mean_r |RQV_r(T) - IQV_r(T)| / mean_r IQV_r(T)` per stride.
    pub rel_error: Vec<f64>,
    /// `|mean RQV - mean IQV| / mean IQV` per stride.
    pub rel_bias: Vec<f64>,
    pub mean_integrated: f64,
    pub replicas_used: usize,
    pub replicas: usize,
    pub tolerance: f64,
    pub required_reduction: f64,
    pub reduction: f64,
    pub pass: bool,
}

/// Needs every replica saved on the base grid; `strides` run coarse to fine
/// and the check compares the first two.
pub fn qv_convergence(
    ensemble: &PathEnsemble,
    phi: &dyn TestFunction,
    spec: &QFormSpec,
    strides: &[usize],
    tolerance: f64,
    required_reduction: f64,
) -> Result<QvReport> {
    if strides.len() < 2 {
        return Err(Error::config("strides", "need at least two save spacings"));
    }
    let diffusion = Diffusion::new(&ensemble.params, &initial_state(&ensemble.params)?)?;
    let full = ensemble.save_times.len();
    let complete: Vec<&Trajectory> = ensemble.replicas.iter().filter(|r| r.times.len() == full).collect();
    let base_dt = ensemble.save_times.get(1).copied().unwrap_or(0.0);
    let mut rel_error = Vec::new();
    let mut rel_bias = Vec::new();
    let mut integrated = Vec::with_capacity(complete.len());
    for r in &complete {
        let rates: Vec<f64> = r
            .times
            .iter()
            .zip(&r.states)
            .map(|(t, x)| exact_qv_rate_with(&ParticleState::new(*t, x.clone()), phi, &diffusion))
            .collect();
        let iqv: f64 = (1..rates.len())
            .map(|j| 0.5 * (r.times[j] - r.times[j - 1]) * (rates[j] + rates[j - 1]))
            .sum();
        integrated.push(iqv);
    }
    let mean_iqv = integrated.iter().sum::<f64>() / integrated.len().max(1) as f64;
    for &s in strides {
        let (mut abs_err, mut rqv_sum) = (0.0, 0.0);
        for (r, iqv) in complete.iter().zip(&integrated) {
            let sample = martingale_sample(r, phi, spec.diffusion_coeff, s);
            let rqv = *realized_qv(&sample).last().unwrap();
            abs_err += (rqv - iqv).abs();
            rqv_sum += rqv;
        }
        let n = complete.len().max(1) as f64;
        rel_error.push(abs_err / n / mean_iqv);
        rel_bias.push((rqv_sum / n - mean_iqv).abs() / mean_iqv);
    }
    let enough = complete.len() >= MIN_MARTINGALE_REPLICAS;
    let reduction = rel_error[0] / rel_error[1];
    let pass = enough && rel_error[0] <= tolerance && reduction >= required_reduction;
    Ok(QvReport {
        test_function: phi.name(),
        strides: strides.to_vec(),
        save_dt: strides.iter().map(|&s| s as f64 * base_dt).collect(),
        rel_error,
        rel_bias,
        mean_integrated: mean_iqv,
        replicas_used: complete.len(),
        replicas: ensemble.len(),
        tolerance,
        required_reduction,
        reduction,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentScan {
    pub m: u32,
    pub lags: Vec<f64>,
    /// `Ê|Δ|^{2m} / lag^m`.
    pub scaled_moments: Vec<f64>,
    pub samples: Vec<usize>,
    pub replicas_used: usize,
    pub ratio: f64,
    pub max_ratio: f64,
    pub pass: bool,
}

/// Moments of `⟨L_{t+h}, φ⟩ - ⟨L_t, φ⟩` at lags `h = save_dt · lag_saves`.
pub fn increment_moment_scan(
    ensemble: &PathEnsemble,
    phi: &dyn TestFunction,
    m: u32,
    lag_saves: &[usize],
    max_ratio: f64,
) -> Result<MomentScan> {
    if !(1..=2).contains(&m) {
        return Err(Error::domain(format!("moment order m = {m} not in {{1, 2}}")));
    }
    let save_dt = ensemble.save_times.get(1).copied().unwrap_or(0.0);
    let paths: Vec<Vec<f64>> = ensemble
        .replicas
        .iter()
        .map(|r| r.states.iter().map(|x| pairing(x, |v| phi.value(v))).collect())
        .collect();
    let longest = lag_saves.iter().copied().max().unwrap_or(1);
    let replicas_used = paths.iter().filter(|p| p.len() > longest).count();
    let mut scaled = Vec::new();
    let mut samples = Vec::new();
    let mut lags = Vec::new();
    for &l in lag_saves {
        let (mut acc, mut count) = (0.0, 0usize);
        for p in &paths {
            for j in 0..p.len().saturating_sub(l) {
                acc += (p[j + l] - p[j]).abs().powi(2 * m as i32);
                count += 1;
            }
        }
        let h = l as f64 * save_dt;
        lags.push(h);
        samples.push(count);
        scaled.push(if count > 0 { acc / count as f64 / h.powi(m as i32) } else { f64::NAN });
    }
    let hi = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = if lo > 0.0 { hi / lo } else if hi == 0.0 { 1.0 } else { f64::INFINITY };
    let pass = replicas_used >= MIN_MOMENT_REPLICAS && ratio.is_finite() && ratio <= max_ratio;
    Ok(MomentScan { m, lags, scaled_moments: scaled, samples, replicas_used, ratio, max_ratio, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::{ModelParams, NoiseMode};
    use crate::testfn::TrigPoly;
    use crate::torus::{spectral_constants, ModeIndex};

    fn traj(times: Vec<f64>, states: Vec<Vec<f64>>) -> Trajectory {
        Trajectory {
            replica_id: 0,
            seed: 0,
            diagnostics: Vec::new(),
            collision: None,
            min_gap_overall: 0.0,
            refined_steps: 0,
            times,
            states,
        }
    }

    #[test]
    fn sample_starts_at_zero_and_vanishes_for_constants() {
        let t = traj(vec![0.0, 0.1, 0.2], vec![vec![0.2, 0.6], vec![0.25, 0.7], vec![0.1, 0.5]]);
        let s = martingale_sample(&t, &TrigPoly::basis(ModeIndex(1)), 1.3, 1);
        assert_eq!(s.values[0], 0.0);
        let c = martingale_sample(&t, &TrigPoly::constant(4.0), 1.3, 1);
        assert!(c.values.iter().all(|v| *v == 0.0));
        assert!(realized_qv(&c).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn realized_qv_of_brownian_single_particle() {
        // one particle driven only by mode 0: x_t is a Brownian motion and φ(x) = x locally
        let n = 4000;
        let steps = 100;
        let dt = 0.01;
        let mut total = 0.0;
        for r in 0..n {
            let mut stream = crate::noise::NoiseStream::new(8, r, 0);
            let mut x = 0.5;
            let mut states = vec![vec![x]];
            let mut times = vec![0.0];
            for s in 1..=steps {
                x += stream.sample_increments(dt).unwrap().dw[0];
                states.push(vec![x]);
                times.push(s as f64 * dt);
            }
            let sample = MartingaleSample {
                replica_id: r,
                values: states.iter().map(|v| v[0] - 0.5).collect(),
                integrand: vec![0.0; times.len()],
                times,
            };
            total += realized_qv(&sample).last().unwrap();
        }
        let mean = total / n as f64;
        // Var of Σ ΔW² is 2 T dt
        let se = (2.0 * dt / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 4.0 * se);
    }

    #[test]
    fn scalar_poly_derivatives() {
        let g = ScalarPoly::square();
        assert_eq!(g.eval(3.0), 9.0);
        assert_eq!(g.derivative().eval(3.0), 6.0);
        assert_eq!(g.derivative().derivative().eval(3.0), 2.0);
        assert_eq!(g.derivative().derivative().derivative().eval(3.0), 0.0);
    }

    #[test]
    fn too_few_replicas() {
        let mut p = ModelParams::new(8, 2.0, 0.3, 0.01, 1e-3);
        p.mode = NoiseMode::CommonNoise;
        let e = PathEnsemble::run(&p, 10).unwrap();
        let spec = QFormSpec { beta: 2.0, k_trunc: 64, diffusion_coeff: 1.0 };
        let r = martingale_statistic(&e, &TrigPoly::basis(ModeIndex(1)), &spec, 3.5);
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn common_noise_martingale_is_centred() {
        let mut p = ModelParams::new(16, 2.0, 0.3, 0.04, 1e-3);
        p.mode = NoiseMode::CommonNoise;
        p.save_stride = 5;
        let e = PathEnsemble::run(&p, 120).unwrap();
        let k2 = spectral_constants(2.0, 16).unwrap().k2_n;
        let spec = QFormSpec { beta: 2.0, k_trunc: 64, diffusion_coeff: k2 };
        let r = martingale_statistic(&e, &TrigPoly::basis(ModeIndex(1)), &spec, 3.5).unwrap();
        assert_eq!(r.points[0].z, Some(0.0));
        assert!(r.pass, "max z {} bucket {}", r.max_abs_z, r.max_abs_bucket_z);
        let c = martingale_statistic(&e, &TrigPoly::constant(1.0), &spec, 3.5).unwrap();
        assert_eq!(c.max_abs_z, 0.0);
    }

    #[test]
    fn frozen_frame_generator_is_centred() {
        // short horizon with wide gaps so the frozen frame stays collision-free
        let mut p = ModelParams::new(4, 4.0, 0.3, 2e-3, 1e-4);
        p.save_stride = 2;
        let e = PathEnsemble::run(&p, 200).unwrap();
        assert!(e.collisions() < 20, "collisions {}", e.collisions());
        let k2 = spectral_constants(4.0, 4).unwrap().k2_n;
        let spec = QFormSpec { beta: 4.0, k_trunc: 64, diffusion_coeff: k2 };
        let phi = TrigPoly::basis(ModeIndex(1));
        let g = generator_test(&e, &ScalarPoly::square(), &phi, &spec, 3.5).unwrap();
        assert!(g.pass, "generator max z {} bucket {}", g.max_abs_z, g.max_abs_bucket_z);
        let lin = generator_test(&e, &ScalarPoly { coeffs: vec![0.0, 1.0] }, &phi, &spec, 3.5).unwrap();
        let direct = martingale_statistic(&e, &phi, &spec, 3.5).unwrap();
        for (a, b) in lin.points.iter().zip(&direct.points) {
            assert!((a.mean - b.mean).abs() < 1e-12);
        }
    }

    #[test]
    fn moment_scan_of_constant_is_zero() {
        let mut p = ModelParams::new(8, 2.0, 0.3, 0.02, 1e-3);
        p.mode = NoiseMode::CommonNoise;
        let e = PathEnsemble::run(&p, 4).unwrap();
        let s = increment_moment_scan(&e, &TrigPoly::constant(1.0), 1, &[1, 2, 4, 8], 4.0).unwrap();
        assert!(s.scaled_moments.iter().all(|v| *v == 0.0));
        assert!(increment_moment_scan(&e, &TrigPoly::constant(1.0), 3, &[1], 4.0).is_err());
    }
}
