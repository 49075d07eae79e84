//! Seeded mode Brownian motions and the colored fields built from them.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{fourier_basis, noise_coeff, ModeIndex};

/// Recorded in run metadata so draws can be reproduced elsewhere.
pub const GAUSSIAN_SAMPLER: &str = "rand_distr 0.5 StandardNormal (ziggurat) on ChaCha12, stream 0 increments, stream 1 bridge";

/// SplitMix64 finalizer applied to `master ^ golden·(replica+1)`.
///
/// Each replica's seed depends only on its own id, so growing the ensemble never
/// changes an existing replica.
pub fn replica_seed(master_seed: u64, replica_id: u64) -> u64 {
    let mut z = master_seed ^ replica_id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One time step of mode increments, indexed `k = -M..=M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeIncrement {
    pub dt: f64,
    pub dw: Vec<f64>,
}

impl ModeIncrement {
    pub fn zeros(num_modes: usize, dt: f64) -> Self {
        ModeIncrement { dt, dw: vec![0.0; 2 * num_modes + 1] }
    }

    pub fn num_modes(&self) -> usize {
        (self.dw.len() - 1) / 2
    }

    pub fn get(&self, k: ModeIndex) -> f64 {
        self.dw[(k.get() + self.num_modes() as i32) as usize]
    }
}

/// The per-replica source of mode increments.
///
/// Stream 0 feeds the increments; stream 1 feeds Brownian-bridge refinement,
/// so a rejected step never shifts the increment sequence.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    pub seed: u64,
    pub replica_id: u64,
    pub num_modes: usize,
    pub steps: u64,
    increments: ChaCha12Rng,
    bridge: ChaCha12Rng,
}

impl NoiseStream {
    pub fn new(master_seed: u64, replica_id: u64, num_modes: usize) -> Self {
        let seed = replica_seed(master_seed, replica_id);
        let mut increments = ChaCha12Rng::seed_from_u64(seed);
        increments.set_stream(0);
        let mut bridge = ChaCha12Rng::seed_from_u64(seed);
        bridge.set_stream(1);
        NoiseStream { seed, replica_id, num_modes, steps: 0, increments, bridge }
    }

    pub fn sample_increments(&mut self, dt: f64) -> Result<ModeIncrement> {
        let mut inc = ModeIncrement::zeros(self.num_modes, dt);
        self.fill_increments(dt, &mut inc.dw)?;
        Ok(inc)
    }

    /// Fills `out` (length `2M+1`) with independent `N(0, dt)` draws.
    pub fn fill_increments(&mut self, dt: f64, out: &mut [f64]) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::domain(format!("increment step must be positive, got {dt}")));
        }
        debug_assert_eq!(out.len(), 2 * self.num_modes + 1);
        let sd = dt.sqrt();
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.increments);
            *v = sd * z;
        }
        self.steps += 1;
        Ok(())
    }

    /// Standard normals for bridge refinement.
    pub fn fill_bridge_normals(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut self.bridge);
        }
    }
}

/// `Σ_{|k|≤M} a_k e_k(x) W^k` for cumulative mode values `w`.
pub fn qwiener_field(w: &[f64], beta: f64, x: f64) -> f64 {
    let m = ((w.len() - 1) / 2) as i32;
    (-m..=m)
        .zip(w)
        .map(|(k, wk)| noise_coeff(ModeIndex(k), beta) * fourier_basis(ModeIndex(k), x) * wk)
        .sum()
}

/// `Σ a_k e_k(F_μ(x)) W^k`.
pub fn mu_noise_field(w: &[f64], beta: f64, f_mu: impl Fn(f64) -> f64, x: f64) -> f64 {
    qwiener_field(w, beta, f_mu(x))
}

/// Empirical covariance of a field sampled at fixed points, with standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub points: Vec<f64>,
    pub samples: usize,
    /// Row-major `p × p`.
    pub cov: Vec<f64>,
    pub se: Vec<f64>,
}

/// Samples `ξ^β(t, ·)` at `points` once per replica, drawing `W_t^k ~ N(0, t)` directly.
///
/// The mean is known to be zero, so the covariance estimator uses raw products.
pub fn field_covariance(
    master_seed: u64,
    replicas: usize,
    beta: f64,
    num_modes: usize,
    t: f64,
    points: &[f64],
) -> Result<CovarianceEstimate> {
    let p = points.len();
    let modes: Vec<ModeIndex> = ModeIndex::window(num_modes).collect();
    let basis: Vec<Vec<f64>> = points
        .iter()
        .map(|&x| modes.iter().map(|&k| noise_coeff(k, beta) * fourier_basis(k, x)).collect())
        .collect();
    let mut sum = vec![0.0; p * p];
    let mut sum_sq = vec![0.0; p * p];
    let mut vals = vec![0.0; p];
    let mut w = vec![0.0; modes.len()];
    for r in 0..replicas {
        let mut stream = NoiseStream::new(master_seed, r as u64, num_modes);
        stream.fill_increments(t, &mut w)?;
        for (v, row) in vals.iter_mut().zip(&basis) {
            *v = row.iter().zip(&w).map(|(b, wk)| b * wk).sum();
        }
        for i in 0..p {
            for j in 0..p {
                let prod = vals[i] * vals[j];
                sum[i * p + j] += prod;
                sum_sq[i * p + j] += prod * prod;
            }
        }
    }
    let n = replicas as f64;
    let cov: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se = sum_sq
        .iter()
        .zip(&cov)
        .map(|(sq, c)| ((sq / n - c * c).max(0.0) / (n - 1.0)).sqrt())
        .collect();
    Ok(CovarianceEstimate { points: points.to_vec(), samples: replicas, cov, se })
}
