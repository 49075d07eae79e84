//! Deterministic primitives on the unit torus `[0, 1)`.
//!
//! The Fourier system used throughout the crate is
//!
//! ```text
//! e_0(x) = 1,   e_k(x) = √2 sin(2πkx) (k ≥ 1),   e_k(x) = √2 cos(2π|k|x) (k ≤ -1)
//! ```
//!
//! and the colored noise puts weight `a_k` on mode `k`, with `a_0 = 1` and
//! `a_k = |k|^-β` otherwise. The resulting covariance kernel is
//! `Q̄(u) = 1 + Σ_{k≥1} 2 k^{-2β} cos(2πku)`.

use std::f64::consts::{LN_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fractional part with the integer convention `[n] = n - 1` for integers,
/// so the result lies in `(0, 1]` and integers map to `1`.
pub fn frac(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("frac of non-finite value {x}")));
    }
    let f = x - x.floor();
    // x - floor(x) can round up to exactly 1 for tiny negative x; both cases land on 1.
    Ok(if f == 0.0 { 1.0 } else { f })
}

/// Index of a Fourier mode; negative indices are the cosine modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex(pub i32);

impl ModeIndex {
    pub fn get(self) -> i32 {
        self.0
    }

    /// All modes `-n..=n` in ascending order.
    pub fn window(n: usize) -> impl Iterator<Item = ModeIndex> {
        let n = n as i32;
        (-n..=n).map(ModeIndex)
    }
}

impl From<i32> for ModeIndex {
    fn from(k: i32) -> Self {
        ModeIndex(k)
    }
}

/// `e_k(x)`, 1-periodic in `x`.
pub fn fourier_basis(k: ModeIndex, x: f64) -> f64 {
    let k = k.0;
    if k == 0 {
        return 1.0;
    }
    // reduce first so lifted coordinates far from [0,1) keep full accuracy
    let x = x - x.floor();
    let arg = 2.0 * PI * f64::from(k.abs()) * x;
    if k > 0 {
        SQRT_2 * arg.sin()
    } else {
        SQRT_2 * arg.cos()
    }
}

/// Derivative `e_k'(x)`.
pub fn fourier_basis_d1(k: ModeIndex, x: f64) -> f64 {
    let k = k.0;
    if k == 0 {
        return 0.0;
    }
    let x = x - x.floor();
    let w = 2.0 * PI * f64::from(k.abs());
    if k > 0 {
        SQRT_2 * w * (w * x).cos()
    } else {
        -SQRT_2 * w * (w * x).sin()
    }
}

/// Noise weight `a_k`: `1` for the constant mode, `|k|^-β` otherwise.
pub fn noise_coeff(k: ModeIndex, beta: f64) -> f64 {
    if k.0 == 0 {
        1.0
    } else {
        f64::from(k.0.abs()).powf(-beta)
    }
}

/// A truncated series value together with a rigorous bound on the omitted tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounded {
    pub value: f64,
    pub tail_bound: f64,
}

impl Bounded {
    pub fn contains(&self, exact: f64, slack: f64) -> bool {
        (self.value - exact).abs() <= self.tail_bound + slack
    }
}

/// Integral-comparison bound on `Σ_{k>K} k^{-s}` for `s > 1`.
pub fn power_tail_bound(s: f64, k_trunc: usize) -> f64 {
    debug_assert!(s > 1.0);
    (k_trunc as f64).powf(1.0 - s) / (s - 1.0)
}

/// Bound on the omitted part of the kernel series, `2 Σ_{k>K} k^{-2β}`.
pub fn kernel_tail_bound(beta: f64, k_trunc: usize) -> f64 {
    2.0 * power_tail_bound(2.0 * beta, k_trunc)
}

/// Covariance kernel `Q̄^β(u) = 1 + Σ_{k=1..K} 2 k^{-2β} cos(2πku)`, truncated at `K`.
pub fn kernel_qbar(beta: f64, u: f64, k_trunc: usize) -> Result<Bounded> {
    if !(beta > 1.0) {
        return Err(Error::domain(format!("kernel needs beta > 1, got {beta}")));
    }
    if k_trunc < 1 {
        return Err(Error::domain("kernel truncation must be at least 1"));
    }
    let mut value = 1.0;
    for k in 1..=k_trunc {
        let kf = k as f64;
        value += 2.0 * kf.powf(-2.0 * beta) * (2.0 * PI * kf * u).cos();
    }
    Ok(Bounded {
        value,
        tail_bound: kernel_tail_bound(beta, k_trunc),
    })
}

/// Precomputed kernel weights for repeated evaluation of the truncated `Q̄`.
///
/// Evaluation advances `cos(2πku)` by complex rotation, so the cost is one
/// `sin_cos` per call instead of one `cos` per mode.
#[derive(Debug, Clone)]
pub struct KernelSeries {
    weights: Vec<f64>,
    beta: f64,
}

impl KernelSeries {
    pub fn new(beta: f64, k_trunc: usize) -> Result<Self> {
        if !(beta > 1.0) {
            return Err(Error::domain(format!("kernel needs beta > 1, got {beta}")));
        }
        if k_trunc < 1 {
            return Err(Error::domain("kernel truncation must be at least 1"));
        }
        let weights = (1..=k_trunc)
            .map(|k| 2.0 * (k as f64).powf(-2.0 * beta))
            .collect();
        Ok(KernelSeries { weights, beta })
    }

    pub fn k_trunc(&self) -> usize {
        self.weights.len()
    }

    pub fn tail_bound(&self) -> f64 {
        kernel_tail_bound(self.beta, self.k_trunc())
    }

    pub fn eval(&self, u: f64) -> f64 {
        let u = u - u.round();
        let (s1, c1) = (2.0 * PI * u).sin_cos();
        let (mut c, mut s) = (c1, s1);
        let mut acc = 1.0;
        for &w in &self.weights {
            acc += w * c;
            let next_c = c * c1 - s * s1;
            s = s * c1 + c * s1;
            c = next_c;
        }
        acc
    }
}

/// Spectral constants of the particle model at mode cut `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConstants {
    pub beta: f64,
    /// `Σ_{j=1..N} 4π² j^{2-2β}`
    pub k1_n: f64,
    /// `1/2 + Σ_{j=1..N} j^{-2β}`
    pub k2_n: f64,
    /// `1/2 + Σ_{j≥1} j^{-2β}`
    pub k2_inf: f64,
    pub mode_cut: usize,
}

/// `Σ_{j>m} j^{-s}` by Euler–Maclaurin; the first omitted correction is below 1e-20 for m ≥ 1000.
fn zeta_tail(s: f64, m: usize) -> f64 {
    let m = m as f64;
    let p = m.powf(-s);
    m.powf(1.0 - s) / (s - 1.0) - 0.5 * p + s / 12.0 * p / m
        - s * (s + 1.0) * (s + 2.0) / 720.0 * p / m.powi(3)
        + s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) / 30240.0 * p / m.powi(5)
}

/// `Σ_{j≥1} j^{-s}` for `s > 1`.
pub fn zeta(s: f64) -> f64 {
    const HEAD: usize = 1000;
    // sum small terms first
    let head: f64 = (1..=HEAD).rev().map(|j| (j as f64).powf(-s)).sum();
    head + zeta_tail(s, HEAD)
}

pub fn spectral_constants(beta: f64, n: usize) -> Result<SpectralConstants> {
    // beta = 1 is accepted so the constant itself can be tabulated; the model needs beta > 1
    if !(beta >= 1.0) || n < 1 {
        return Err(Error::domain(format!(
            "spectral constants need beta >= 1 and N >= 1, got beta={beta}, N={n}"
        )));
    }
    let mut k1_n = 0.0;
    let mut k2_sum = 0.0;
    for j in (1..=n).rev() {
        let jf = j as f64;
        k1_n += 4.0 * PI * PI * jf.powf(2.0 - 2.0 * beta);
        k2_sum += jf.powf(-2.0 * beta);
    }
    Ok(SpectralConstants {
        beta,
        k1_n,
        k2_n: 0.5 + k2_sum,
        k2_inf: 0.5 + zeta(2.0 * beta),
        mode_cut: n,
    })
}

/// Whether power-law eigenvalues `λ_j = j^-decay` have correlated intensity above `threshold`,
/// i.e. whether `Σ j^{threshold-1} λ_j` converges.
pub fn intensity_exceeds(decay_exp: f64, threshold: f64) -> bool {
    threshold < decay_exp
}

/// Chord length `|e^{2πix} - e^{2πiy}| = 2|sin(π(x-y))|`.
pub fn chord(x: f64, y: f64) -> f64 {
    2.0 * (PI * (x - y)).sin().abs()
}

/// Signed difference reduced to the shorter arc, in `(-1/2, 1/2]`.
pub fn shorter_arc(d: f64) -> f64 {
    let r = d - d.round();
    if r == -0.5 {
        0.5
    } else {
        r
    }
}

pub(crate) const LOG_2: f64 = LN_2;

#[cfg(test)]
mod tests {
    use super::*;

    fn trapezoid_inner(k: i32, l: i32, points: usize) -> f64 {
        // periodic trapezoid rule is exact for trig polynomials below the Nyquist limit
        let h = 1.0 / points as f64;
        (0..points)
            .map(|i| {
                let x = i as f64 * h;
                fourier_basis(ModeIndex(k), x) * fourier_basis(ModeIndex(l), x)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn frac_examples() {
        assert_eq!(frac(2.0).unwrap(), 1.0);
        assert_eq!(frac(0.25).unwrap(), 0.25);
        assert!((frac(-0.3).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(frac(0.0).unwrap(), 1.0);
        assert_eq!(frac(-1e-300).unwrap(), 1.0);
        assert!(frac(f64::NAN).is_err());
        assert!(frac(f64::INFINITY).is_err());
    }

    #[test]
    fn basis_examples() {
        assert_eq!(fourier_basis(ModeIndex(0), 0.37), 1.0);
        assert!((fourier_basis(ModeIndex(1), 0.25) - SQRT_2).abs() < 1e-15);
        assert!((fourier_basis(ModeIndex(-2), 0.5) - SQRT_2).abs() < 1e-14);
    }

    #[test]
    fn basis_derivative_matches_finite_difference() {
        let h = 1e-5;
        for k in -5..=5 {
            for &x in &[0.0, 0.13, 0.5, 0.77, 2.31] {
                let k = ModeIndex(k);
                let fd = (fourier_basis(k, x + h) - fourier_basis(k, x - h)) / (2.0 * h);
                assert!((fd - fourier_basis_d1(k, x)).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn orthonormality_on_fine_grid() {
        for k in -64..=64 {
            for l in -64..=64 {
                let v = trapezoid_inner(k, l, 1 << 14);
                let expected = if k == l { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-10, "k={k} l={l} got {v}");
            }
        }
    }

    #[test]
    fn noise_coeff_examples() {
        assert_eq!(noise_coeff(ModeIndex(0), 1.5), 1.0);
        assert_eq!(noise_coeff(ModeIndex(2), 1.0), 0.5);
        assert!((noise_coeff(ModeIndex(-3), 2.0) - 1.0 / 9.0).abs() < 1e-16);
    }

    #[test]
    fn kernel_rejects_beta_at_most_one() {
        assert!(kernel_qbar(1.0, 0.1, 10).is_err());
        assert!(kernel_qbar(0.5, 0.1, 10).is_err());
        assert!(kernel_qbar(1.5, 0.1, 0).is_err());
    }

    #[test]
    fn kernel_alternating_partial_sum() {
        // brute-force oracle: 1 + 2 Σ_{k≤10} (-1)^k k^-4 = -0.893985...
        let oracle: f64 = 1.0
            + 2.0
                * (1..=10)
                    .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } / (k as f64).powi(4))
                    .sum::<f64>();
        assert!((oracle - (-0.893_985_184_7)).abs() < 1e-9);
        let got = kernel_qbar(2.0, 0.5, 10).unwrap();
        assert!((got.value - oracle).abs() < 1e-14);
        assert!((got.tail_bound - 2.0 / (3.0 * 1000.0)).abs() < 1e-15);
    }

    #[test]
    fn kernel_at_zero_is_twice_k2() {
        for &beta in &[1.2, 1.5, 2.0, 4.0] {
            let c = spectral_constants(beta, 1).unwrap();
            let k = kernel_qbar(beta, 0.0, 20_000).unwrap();
            assert!(k.contains(2.0 * c.k2_inf, 1e-12), "beta={beta}");
        }
    }

    #[test]
    fn kernel_series_matches_reference() {
        let s = KernelSeries::new(1.3, 200).unwrap();
        for i in 0..50 {
            let u = -1.3 + 0.071 * i as f64;
            let r = kernel_qbar(1.3, u, 200).unwrap().value;
            assert!((s.eval(u) - r).abs() < 1e-12, "u={u}");
        }
    }

    #[test]
    fn kernel_basis_consistency() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (beta, kt) = (1.5, 40usize);
        for _ in 0..100 {
            let x: f64 = rng.random();
            let y: f64 = rng.random();
            let lhs = kernel_qbar(beta, x - y, kt).unwrap().value;
            let rhs: f64 = ModeIndex::window(kt)
                .map(|k| noise_coeff(k, beta).powi(2) * fourier_basis(k, x) * fourier_basis(k, y))
                .sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_constant_values() {
        assert!((spectral_constants(1.5, 1).unwrap().k2_n - 1.5).abs() < 1e-15);
        let at_one = spectral_constants(1.0, 1).unwrap().k2_inf;
        assert!((at_one - (0.5 + PI * PI / 6.0)).abs() < 1e-12);
        // ζ(8) = π^8 / 9450
        let at_four = spectral_constants(4.0, 3).unwrap().k2_inf;
        assert!((at_four - (0.5 + PI.powi(8) / 9450.0)).abs() < 1e-13);
        let c = spectral_constants(1.5, 2).unwrap();
        assert!((c.k1_n - 4.0 * PI * PI * (1.0 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn spectral_constants_monotone() {
        for &beta in &[1.05, 1.2, 1.5, 2.0, 4.0] {
            let mut prev = 0.0;
            for n in 1..300 {
                let c = spectral_constants(beta, n).unwrap();
                assert!(c.k2_n >= prev);
                assert!(c.k2_n <= c.k2_inf + 1e-15);
                assert!(c.k1_n >= 0.0);
                prev = c.k2_n;
            }
        }
    }

    #[test]
    fn intensity_examples() {
        assert!(intensity_exceeds(4.0, 1.0));
        assert!(!intensity_exceeds(1.2, 1.2));
        assert!(intensity_exceeds(1.2, 1.0));
    }

    #[test]
    fn shorter_arc_range() {
        assert_eq!(shorter_arc(0.5), 0.5);
        assert_eq!(shorter_arc(-0.5), 0.5);
        assert!((shorter_arc(0.75) + 0.25).abs() < 1e-15);
        assert!((shorter_arc(-1.2) + 0.2).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn frac_is_periodic_and_in_range(x in -1.0e6f64..1.0e6) {
                let f = frac(x).unwrap();
                prop_assert!(f > 0.0 && f <= 1.0);
                let g = frac(x + 1.0).unwrap();
                // equal up to the rounding of x + 1
                let d = (f - g).abs();
                prop_assert!(d < 1e-9 || (d - 1.0).abs() < 1e-9);
            }

            #[test]
            fn basis_is_periodic(k in -64i32..=64, x in -3.0f64..3.0) {
                let a = fourier_basis(ModeIndex(k), x);
                let b = fourier_basis(ModeIndex(k), x + 1.0);
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
