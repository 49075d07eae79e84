//! The interacting particle system on the covering line of the torus.
//!
//! Particles evolve by
//!
//! ```text
//! dx_i = (1/(2N^{α+1})) Σ_{j≠i} cot(π(x_i - x_j)) dt + Σ_{|k|≤M} a_k e_k(y_i) dW^k
//! ```
//!
//! where `y_i` is the particle's frozen reference point (`frozen_frame`), its
//! current position (`common_noise`), and the drift is dropped in `pure_frozen_flow`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::measure::DensityMeasure;
use crate::noise::{replica_seed, ModeIncrement, NoiseStream};
use crate::torus::{chord, fourier_basis, noise_coeff, spectral_constants, ModeIndex, LOG_2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    FrozenFrame,
    CommonNoise,
    PureFrozenFlow,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "frozen_frame" => Ok(NoiseMode::FrozenFrame),
            "common_noise" => Ok(NoiseMode::CommonNoise),
            "pure_frozen_flow" => Ok(NoiseMode::PureFrozenFlow),
            _ => Err(Error::config("mode", format!("unknown noise mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialCondition {
    #[default]
    UniformGrid,
    Density { breakpoints: Vec<f64>, values: Vec<f64> },
}

impl InitialCondition {
    pub fn density(&self) -> Result<Option<DensityMeasure>> {
        match self {
            InitialCondition::UniformGrid => Ok(None),
            InitialCondition::Density { breakpoints, values } => {
                DensityMeasure::new(breakpoints.clone(), values.clone()).map(Some)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    #[serde(rename = "N")]
    pub n: usize,
    pub beta: f64,
    pub alpha: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "default_mode")]
    pub mode: NoiseMode,
    #[serde(default = "default_r_trunc")]
    pub r_trunc: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitialCondition,
    #[serde(default = "default_save_stride")]
    pub save_stride: usize,
    /// Mode window `k ∈ [-M, M]`; defaults to `N`.
    #[serde(default)]
    pub num_modes: Option<usize>,
    #[serde(default = "default_gap_floor")]
    pub gap_floor: f64,
    #[serde(default = "default_max_depth")]
    pub max_substep_depth: u32,
}

fn default_mode() -> NoiseMode {
    NoiseMode::FrozenFrame
}
fn default_r_trunc() -> f64 {
    1e6
}
fn default_save_stride() -> usize {
    1
}
fn default_gap_floor() -> f64 {
    1e-9
}
fn default_max_depth() -> u32 {
    24
}

impl ModelParams {
    pub fn new(n: usize, beta: f64, alpha: f64, t_end: f64, dt: f64) -> Self {
        ModelParams {
            n,
            beta,
            alpha,
            t_end,
            dt,
            mode: default_mode(),
            r_trunc: default_r_trunc(),
            seed: 0,
            init: InitialCondition::UniformGrid,
            save_stride: default_save_stride(),
            num_modes: None,
            gap_floor: default_gap_floor(),
            max_substep_depth: default_max_depth(),
        }
    }

    pub fn modes(&self) -> usize {
        self.num_modes.unwrap_or(self.n)
    }

    /// `0 < α < min(2β - 2, 1)`.
    pub fn in_noncollision_regime(&self) -> bool {
        self.alpha > 0.0 && self.alpha < (2.0 * self.beta - 2.0).min(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config("N", "need at least 2 particles"));
        }
        if !(self.beta > 1.0) {
            return Err(Error::config("beta", "beta must exceed 1"));
        }
        if !self.alpha.is_finite() {
            return Err(Error::config("alpha", "alpha must be finite"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", "dt must be positive"));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::config("T", "T must be nonnegative"));
        }
        if self.t_end > 0.0 && self.dt > self.t_end {
            return Err(Error::config("dt", "dt must not exceed T"));
        }
        if !(self.r_trunc > 2.0) {
            return Err(Error::config("r_trunc", "truncation level must exceed 2"));
        }
        if self.save_stride == 0 {
            return Err(Error::config("save_stride", "save stride must be at least 1"));
        }
        if !(self.gap_floor > 0.0) {
            return Err(Error::config("gap_floor", "gap floor must be positive"));
        }
        self.init.density().map_err(|e| Error::config("init", e.to_string()))?;
        self.n_steps()?;
        Ok(())
    }

    /// Number of base steps; `T` must be an integer multiple of `dt`.
    pub fn n_steps(&self) -> Result<usize> {
        if self.t_end == 0.0 {
            return Ok(0);
        }
        let r = self.t_end / self.dt;
        let steps = r.round();
        if (r - steps).abs() > 1e-9 * r.max(1.0) {
            return Err(Error::config("T", format!("T = {} is not a multiple of dt = {}", self.t_end, self.dt)));
        }
        Ok(steps as usize)
    }
}

/// Lifted positions with clock; admissible states are strictly ordered with `x_N - x_1 < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub t: f64,
    pub x: Vec<f64>,
}

impl ParticleState {
    pub fn new(t: f64, x: Vec<f64>) -> Self {
        ParticleState { t, x }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn is_admissible(&self) -> bool {
        self.x.windows(2).all(|w| w[0] < w[1])
            && match (self.x.first(), self.x.last()) {
                (Some(a), Some(b)) => b - a < 1.0,
                _ => false,
            }
    }
}

/// Aborted step: the guard could not keep the configuration admissible.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("collision at t = {t}: particles {i} and its right neighbour reached chord gap {gap:e}")]
pub struct CollisionEvent {
    pub t: f64,
    pub i: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub lyapunov: f64,
    pub radial: f64,
    pub min_chord_gap: f64,
    pub max_abs_drift: f64,
    pub substeps_used: u64,
}

pub fn initial_state(params: &ModelParams) -> Result<ParticleState> {
    let n = params.n;
    let x = match params.init.density()? {
        None => (1..=n).map(|i| i as f64 / n as f64).collect(),
        Some(d) => (1..=n)
            .map(|i| d.quantile(i as f64 / n as f64))
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(ParticleState::new(0.0, x))
}

/// Reference points `F_{μ0}(x_i(0))` at which the frozen frame evaluates the basis.
pub fn frame_points(params: &ModelParams, initial: &ParticleState) -> Result<Vec<f64>> {
    Ok(match params.init.density()? {
        None => (1..=params.n).map(|i| i as f64 / params.n as f64).collect(),
        Some(d) => initial.x.iter().map(|&x| d.cdf(x)).collect(),
    })
}

/// `σ_{i,k} = a_k e_k(F_{μ0}(x_i(0)))`, row-major `N × (2M+1)`.
pub fn diffusion_matrix(params: &ModelParams, initial: &ParticleState) -> Result<Vec<f64>> {
    if params.mode == NoiseMode::CommonNoise {
        return Err(Error::Misuse(
            "common_noise coefficients depend on the current state; there is no fixed matrix".into(),
        ));
    }
    let m = params.modes() as i32;
    let frame = frame_points(params, initial)?;
    let mut out = Vec::with_capacity(frame.len() * (2 * m as usize + 1));
    for &y in &frame {
        for k in -m..=m {
            out.push(noise_coeff(ModeIndex(k), params.beta) * fourier_basis(ModeIndex(k), y));
        }
    }
    Ok(out)
}

/// `b_i = (1/(2N^{α+1})) Σ_{j≠i} cot(π(x_i - x_j))`.
pub fn drift(state: &ParticleState, params: &ModelParams) -> Result<Vec<f64>> {
    let mut out = vec![0.0; state.n()];
    drift_into(&state.x, params.alpha, &mut out)?;
    Ok(out)
}

/// Pairwise drift. Each `b_i` accumulates its terms in ascending `j`.
pub fn drift_into(x: &[f64], alpha: f64, out: &mut [f64]) -> Result<()> {
    let n = x.len();
    out.iter_mut().for_each(|b| *b = 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = x[i] - x[j];
            let (s, c) = (PI * d).sin_cos();
            if s == 0.0 || d == d.round() {
                return Err(Error::Singular { i, j });
            }
            let cot = c / s;
            out[i] += cot;
            out[j] -= cot;
        }
    }
    let scale = 0.5 / (n as f64).powf(alpha + 1.0);
    out.iter_mut().for_each(|b| *b *= scale);
    Ok(())
}

/// `cot(πx)` away from the integers; within `1/R` of an integer, the odd quintic
/// matching value, slope and curvature at the band edge.
pub fn truncated_cot(x: f64, r: f64) -> f64 {
    let u = x - x.round();
    let delta = 1.0 / r;
    if u.abs() >= delta {
        return 1.0 / (PI * u).tan();
    }
    let (s, c) = (PI * delta).sin_cos();
    let v = c / s;
    let d = -PI / (s * s);
    let dd = 2.0 * PI * PI * v / (s * s);
    // p(u) = A u + B u³ + C u⁵ with P = Aδ, Q = Bδ³, R = Cδ⁵
    let rr = (dd * delta * delta - 3.0 * d * delta + 3.0 * v) / 8.0;
    let q = (d * delta - v) / 2.0 - 2.0 * rr;
    let p = v - q - rr;
    let s1 = u / delta;
    p * s1 + q * s1.powi(3) + rr * s1.powi(5)
}

pub fn lyapunov(state: &ParticleState) -> f64 {
    let x = &state.x;
    let n = x.len();
    let mut acc = 0.0;
    for l in 0..n {
        for j in (l + 1)..n {
            acc += chord(x[l], x[j]).ln();
        }
    }
    -2.0 * acc / (n * n) as f64
}

pub fn radial(state: &ParticleState) -> f64 {
    state.x.iter().map(|v| v * v).sum::<f64>() / (2.0 * state.n() as f64)
}

/// Minimum chord distance over adjacent pairs, including the wraparound pair.
pub fn min_chord_gap(state: &ParticleState) -> f64 {
    min_gap_index(&state.x).1
}

fn min_gap_index(x: &[f64]) -> (usize, f64) {
    let n = x.len();
    let mut best = (n - 1, chord(x[n - 1], x[0]));
    for i in 0..n - 1 {
        let g = chord(x[i + 1], x[i]);
        if g < best.1 {
            best = (i, g);
        }
    }
    best
}

/// `N²(F0 + K_2^β T + log 2)/(log R + log 2)` clipped to `[0, 1]`.
pub fn collision_probability_bound(params: &ModelParams, r: f64, f0: f64) -> Result<f64> {
    if !(r > 1.0) {
        return Err(Error::domain(format!("collision bound needs R > 1, got {r}")));
    }
    let k2 = spectral_constants(params.beta, params.n)?.k2_inf;
    let n2 = (params.n * params.n) as f64;
    let b = n2 * (f0 + k2 * params.t_end + LOG_2) / (r.ln() + LOG_2);
    Ok(b.clamp(0.0, 1.0))
}

/// State-dependent or frozen noise coefficients.
#[derive(Debug, Clone)]
pub struct Diffusion {
    mode: NoiseMode,
    modes: usize,
    coeff: Vec<f64>,
    frozen: Option<Vec<f64>>,
}

impl Diffusion {
    pub fn new(params: &ModelParams, initial: &ParticleState) -> Result<Self> {
        let m = params.modes();
        let coeff = (0..=m as i32).map(|k| noise_coeff(ModeIndex(k), params.beta)).collect();
        let frozen = match params.mode {
            NoiseMode::CommonNoise => None,
            _ => Some(diffusion_matrix(params, initial)?),
        };
        Ok(Diffusion { mode: params.mode, modes: m, coeff, frozen })
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn width(&self) -> usize {
        2 * self.modes + 1
    }

    /// `out_i = Σ_k σ_{i,k}(x) dW^k`.
    pub fn apply(&self, x: &[f64], dw: &[f64], out: &mut [f64]) {
        let w = self.width();
        match &self.frozen {
            Some(sigma) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &sigma[i * w..(i + 1) * w];
                    *o = row.iter().zip(dw).map(|(s, d)| s * d).sum();
                }
            }
            None => {
                let m = self.modes;
                for (o, &xi) in out.iter_mut().zip(x) {
                    let mut acc = self.coeff[0] * dw[m];
                    for_each_mode(xi, m, |k, s, c| {
                        acc += self.coeff[k] * SQRT_2 * (s * dw[m + k] + c * dw[m - k]);
                    });
                    *o = acc;
                }
            }
        }
    }

    /// Row-major `σ_{i,k}` at the given positions.
    pub fn sigma_at(&self, x: &[f64]) -> Vec<f64> {
        if let Some(sigma) = &self.frozen {
            return sigma.clone();
        }
        let (m, w) = (self.modes, self.width());
        let mut out = vec![0.0; x.len() * w];
        for (i, &xi) in x.iter().enumerate() {
            let row = &mut out[i * w..(i + 1) * w];
            row[m] = self.coeff[0];
            for_each_mode(xi, m, |k, s, c| {
                row[m + k] = self.coeff[k] * SQRT_2 * s;
                row[m - k] = self.coeff[k] * SQRT_2 * c;
            });
        }
        out
    }
}

/// Calls `f(k, sin 2πkx, cos 2πkx)` for `k = 1..=m`, advancing by rotation.
fn for_each_mode(x: f64, m: usize, mut f: impl FnMut(usize, f64, f64)) {
    let x = x - x.floor();
    let (s1, c1) = (2.0 * PI * x).sin_cos();
    let (mut s, mut c) = (s1, c1);
    for k in 1..=m {
        f(k, s, c);
        let ns = s * c1 + c * s1;
        c = c * c1 - s * s1;
        s = ns;
    }
}

/// Euler–Maruyama stepper with the recursive collision guard.
pub struct Stepper {
    diffusion: Diffusion,
    alpha: f64,
    with_drift: bool,
    gap_floor: f64,
    max_depth: u32,
    drift_buf: Vec<f64>,
    noise_buf: Vec<f64>,
    proposal: Vec<f64>,
    last_max_drift: f64,
}

/// Outcome of one guarded base step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub substeps: u64,
    pub min_gap: f64,
    pub max_abs_drift: f64,
}

impl Stepper {
    pub fn new(params: &ModelParams, initial: &ParticleState) -> Result<Self> {
        let n = params.n;
        Ok(Stepper {
            diffusion: Diffusion::new(params, initial)?,
            alpha: params.alpha,
            with_drift: params.mode != NoiseMode::PureFrozenFlow,
            gap_floor: params.gap_floor,
            max_depth: params.max_substep_depth,
            drift_buf: vec![0.0; n],
            noise_buf: vec![0.0; n],
            proposal: vec![0.0; n],
            last_max_drift: 0.0,
        })
    }

    pub fn diffusion(&self) -> &Diffusion {
        &self.diffusion
    }

    /// One base step with diagnostics on the accepted state.
    pub fn step(
        &mut self,
        state: &ParticleState,
        increments: &ModeIncrement,
        bridge: &mut NoiseStream,
    ) -> std::result::Result<(ParticleState, StepDiagnostics), CollisionEvent> {
        let mut next = state.clone();
        let out = self.advance(&mut next, &increments.dw, increments.dt, bridge)?;
        let diag = StepDiagnostics {
            lyapunov: lyapunov(&next),
            radial: radial(&next),
            min_chord_gap: out.min_gap,
            max_abs_drift: out.max_abs_drift,
            substeps_used: out.substeps,
        };
        Ok((next, diag))
    }

    /// Advances `state` in place by `h` using total increments `dw`.
    pub fn advance(
        &mut self,
        state: &mut ParticleState,
        dw: &[f64],
        h: f64,
        bridge: &mut NoiseStream,
    ) -> std::result::Result<StepOutcome, CollisionEvent> {
        let mut out = StepOutcome { substeps: 0, min_gap: f64::INFINITY, max_abs_drift: 0.0 };
        self.refine(state, dw, h, 0, bridge, &mut out)?;
        Ok(out)
    }

    fn refine(
        &mut self,
        state: &mut ParticleState,
        dw: &[f64],
        h: f64,
        depth: u32,
        bridge: &mut NoiseStream,
        out: &mut StepOutcome,
    ) -> std::result::Result<(), CollisionEvent> {
        match self.propose(&state.x, dw, h) {
            Ok(gap) => {
                state.x.copy_from_slice(&self.proposal);
                state.t += h;
                out.substeps += 1;
                out.min_gap = out.min_gap.min(gap);
                out.max_abs_drift = out.max_abs_drift.max(self.last_max_drift);
                Ok(())
            }
            Err((i, gap)) => {
                if depth >= self.max_depth {
                    return Err(CollisionEvent { t: state.t, i, gap });
                }
                let mut z = vec![0.0; dw.len()];
                bridge.fill_bridge_normals(&mut z);
                let sd = (h / 4.0).sqrt();
                let first: Vec<f64> = dw.iter().zip(&z).map(|(d, z)| 0.5 * d + sd * z).collect();
                let second: Vec<f64> = dw.iter().zip(&first).map(|(d, f)| d - f).collect();
                self.refine(state, &first, 0.5 * h, depth + 1, bridge, out)?;
                self.refine(state, &second, 0.5 * h, depth + 1, bridge, out)
            }
        }
    }

    /// Writes the Euler proposal; returns its min chord gap if admissible,
    /// otherwise the offending index and gap.
    fn propose(&mut self, x: &[f64], dw: &[f64], h: f64) -> std::result::Result<f64, (usize, f64)> {
        if self.with_drift {
            if let Err(Error::Singular { i, .. }) = drift_into(x, self.alpha, &mut self.drift_buf) {
                return Err((i, 0.0));
            }
            self.last_max_drift = self.drift_buf.iter().fold(0.0, |m: f64, b| m.max(b.abs()));
        } else {
            self.last_max_drift = 0.0;
        }
        self.diffusion.apply(x, dw, &mut self.noise_buf);
        for (i, (p, &xi)) in self.proposal.iter_mut().zip(x).enumerate() {
            let b = if self.with_drift { self.drift_buf[i] } else { 0.0 };
            *p = xi + b * h + self.noise_buf[i];
        }
        let p = &self.proposal;
        let n = p.len();
        if let Some(i) = (0..n - 1).find(|&i| !(p[i] < p[i + 1])) {
            return Err((i, chord(p[i + 1], p[i])));
        }
        if !(p[n - 1] - p[0] < 1.0) {
            return Err((n - 1, chord(p[n - 1], p[0])));
        }
        let (i, gap) = min_gap_index(p);
        if gap < self.gap_floor {
            return Err((i, gap));
        }
        Ok(gap)
    }
}

/// Saved path of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub replica_id: u64,
    pub seed: u64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// At each save: Lyapunov and radial values of the saved state; gap, drift and
    /// substep figures aggregated over the base steps since the previous save.
    pub diagnostics: Vec<StepDiagnostics>,
    pub collision: Option<CollisionEvent>,
    /// Minimum chord gap over every accepted step of the run.
    pub min_gap_overall: f64,
    /// Base steps that needed refinement.
    pub refined_steps: u64,
}

impl Trajectory {
    pub fn aborted(&self) -> bool {
        self.collision.is_some()
    }

    pub fn state_at(&self, idx: usize) -> ParticleState {
        ParticleState::new(self.times[idx], self.states[idx].clone())
    }
}

/// Simulates one replica. Collisions end the path early and are recorded, not returned as errors.
pub fn simulate_replica(params: &ModelParams, replica_id: u64) -> Result<Trajectory> {
    params.validate()?;
    let steps = params.n_steps()?;
    let mut state = initial_state(params)?;
    let mut stepper = Stepper::new(params, &state)?;
    let mut noise = NoiseStream::new(params.seed, replica_id, params.modes());
    let mut dw = vec![0.0; 2 * params.modes() + 1];

    let g0 = min_chord_gap(&state);
    let mut traj = Trajectory {
        replica_id,
        seed: replica_seed(params.seed, replica_id),
        times: vec![0.0],
        states: vec![state.x.clone()],
        diagnostics: vec![StepDiagnostics {
            lyapunov: lyapunov(&state),
            radial: radial(&state),
            min_chord_gap: g0,
            max_abs_drift: 0.0,
            substeps_used: 0,
        }],
        collision: None,
        min_gap_overall: g0,
        refined_steps: 0,
    };

    let mut window_gap = f64::INFINITY;
    let mut window_drift: f64 = 0.0;
    let mut window_substeps = 0;
    for s in 1..=steps {
        noise.fill_increments(params.dt, &mut dw)?;
        // restart from the grid time so clocks do not drift through accumulated substeps
        let t_prev = (s - 1) as f64 * params.dt;
        state.t = t_prev;
        match stepper.advance(&mut state, &dw, params.dt, &mut noise) {
            Ok(out) => {
                window_gap = window_gap.min(out.min_gap);
                window_drift = window_drift.max(out.max_abs_drift);
                window_substeps += out.substeps;
                traj.min_gap_overall = traj.min_gap_overall.min(out.min_gap);
                if out.substeps > 1 {
                    traj.refined_steps += 1;
                }
            }
            Err(ev) => {
                traj.collision = Some(ev);
                break;
            }
        }
        state.t = s as f64 * params.dt;
        if s % params.save_stride == 0 || s == steps {
            traj.times.push(state.t);
            traj.states.push(state.x.clone());
            traj.diagnostics.push(StepDiagnostics {
                lyapunov: lyapunov(&state),
                radial: radial(&state),
                min_chord_gap: window_gap,
                max_abs_drift: window_drift,
                substeps_used: window_substeps,
            });
            window_gap = f64::INFINITY;
            window_drift = 0.0;
            window_substeps = 0;
        }
    }
    Ok(traj)
}

/// Simulates replica 0 and fails on collision.
pub fn simulate(params: &ModelParams) -> Result<Trajectory> {
    let traj = simulate_replica(params, 0)?;
    match &traj.collision {
        Some(ev) => Err(Error::Collision(ev.clone())),
        None => Ok(traj),
    }
}
