//! Instantaneous Itô quantities of `⟨L_N, φ⟩` along the particle dynamics.

use std::f64::consts::PI;

use crate::error::Result;
use crate::particles::{initial_state, Diffusion, ModelParams, ParticleState};
use crate::testfn::TestFunction;
use crate::torus::shorter_arc;

/// `(1/N²) Σ_k (Σ_i φ'(x_i) σ_{i,k})²` for the model's noise coefficients.
pub fn exact_qv_rate(state: &ParticleState, phi: &dyn TestFunction, params: &ModelParams) -> Result<f64> {
    let diffusion = Diffusion::new(params, &initial_state(params)?)?;
    Ok(exact_qv_rate_with(state, phi, &diffusion))
}

pub fn exact_qv_rate_with(state: &ParticleState, phi: &dyn TestFunction, diffusion: &Diffusion) -> f64 {
    let n = state.n();
    let w = diffusion.width();
    let sigma = diffusion.sigma_at(&state.x);
    let d1: Vec<f64> = state.x.iter().map(|&x| phi.d1(x)).collect();
    let mut acc = 0.0;
    for k in 0..w {
        let c: f64 = (0..n).map(|i| d1[i] * sigma[i * w + k]).sum();
        acc += c * c;
    }
    acc / (n * n) as f64
}

/// Interaction contribution to the drift of `⟨L_N, φ⟩`:
/// `(1/(4N^α)) (1/N²) Σ_{i≠j} (φ'(x_i) - φ'(x_j)) cot(π d_ij)` with `d_ij` on the shorter arc.
pub fn drift_term_magnitude(state: &ParticleState, phi: &dyn TestFunction, params: &ModelParams) -> f64 {
    let n = state.n();
    let d1: Vec<f64> = state.x.iter().map(|&x| phi.d1(x)).collect();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = shorter_arc(state.x[i] - state.x[j]);
            // the (i, j) and (j, i) terms coincide
            acc += 2.0 * (d1[i] - d1[j]) / (PI * d).tan();
        }
    }
    acc / (4.0 * (n as f64).powf(params.alpha) * (n * n) as f64)
}

/// `‖φ''‖_∞ / (4π N^α)`.
pub fn drift_term_bound(phi: &dyn TestFunction, params: &ModelParams, n: usize) -> f64 {
    phi.sup_d2() / (4.0 * PI * (n as f64).powf(params.alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::{drift, NoiseMode};
    use crate::testfn::TrigPoly;
    use crate::torus::{spectral_constants, ModeIndex};
    use rand::{Rng, SeedableRng};

    fn random_state(n: usize, rng: &mut impl Rng) -> ParticleState {
        let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        x.sort_by(f64::total_cmp);
        ParticleState::new(0.0, x)
    }

    #[test]
    fn constant_function_has_zero_rate_and_drift() {
        let p = ModelParams::new(8, 1.5, 0.3, 1.0, 0.1);
        let s = initial_state(&p).unwrap();
        let c = TrigPoly::constant(2.0);
        assert_eq!(exact_qv_rate(&s, &c, &p).unwrap(), 0.0);
        assert_eq!(drift_term_magnitude(&s, &c, &p), 0.0);
    }

    #[test]
    fn uniform_grid_rate_with_aliasing() {
        let phi = TrigPoly::primitive_of_basis(ModeIndex(1)).unwrap();
        for n in [4usize, 8, 16, 64] {
            let p = ModelParams::new(n, 1.5, 0.3, 1.0, 0.1);
            let s = initial_state(&p).unwrap();
            let r = exact_qv_rate(&s, &phi, &p).unwrap();
            // e_1 on the grid also matches mode N-1 inside the window ±N
            let exact = 1.0 + ((n - 1) as f64).powf(-3.0);
            assert!((r - exact).abs() < 1e-12, "N={n}: {r}");
        }
    }

    #[test]
    fn rate_bounded_by_second_moment() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let phi = TrigPoly { c0: 0.0, terms: vec![(1, 0.3, 0.7), (2, -0.2, 0.1)] };
        for mode in [NoiseMode::FrozenFrame, NoiseMode::CommonNoise] {
            let mut p = ModelParams::new(16, 1.5, 0.3, 1.0, 0.1);
            p.mode = mode;
            let k2 = spectral_constants(1.5, 16).unwrap().k2_n;
            for _ in 0..50 {
                let s = random_state(16, &mut rng);
                let bound = 2.0 * k2 * s.x.iter().map(|&x| phi.d1(x).powi(2)).sum::<f64>() / 16.0;
                assert!(exact_qv_rate(&s, &phi, &p).unwrap() <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn drift_term_equals_projected_particle_drift() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let phi = TrigPoly::basis(ModeIndex(-2));
        let p = ModelParams::new(12, 1.5, 0.4, 1.0, 0.1);
        for _ in 0..20 {
            let s = random_state(12, &mut rng);
            let b = drift(&s, &p).unwrap();
            let projected: f64 = s.x.iter().zip(&b).map(|(&x, b)| phi.d1(x) * b).sum::<f64>() / 12.0;
            assert!((projected - drift_term_magnitude(&s, &phi, &p)).abs() < 1e-11 * (1.0 + projected.abs()));
        }
    }

    #[test]
    fn drift_term_respects_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let phi = TrigPoly::basis(ModeIndex(1));
        let p = ModelParams::new(32, 1.5, 0.3, 1.0, 0.1);
        for _ in 0..100 {
            let s = random_state(32, &mut rng);
            assert!(drift_term_magnitude(&s, &phi, &p).abs() <= drift_term_bound(&phi, &p, 32));
        }
    }
}
