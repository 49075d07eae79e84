//! The quadratic form `Q^β_μ(φ, φ)` in its double-integral and spectral forms,
//! and the eigenfunction identity of the pushed-forward kernel.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::measure::{DensityMeasure, EmpiricalMeasure};
use crate::quad::GaussLegendre;
use crate::testfn::TestFunction;
use crate::torus::{fourier_basis, kernel_tail_bound, noise_coeff, Bounded, KernelSeries, ModeIndex};

use super::QFormSpec;

/// Either kind of measure the form is defined on.
#[derive(Debug, Clone, Copy)]
pub enum MeasureRef<'a> {
    Empirical(&'a EmpiricalMeasure),
    Density(&'a DensityMeasure),
}

impl<'a> From<&'a EmpiricalMeasure> for MeasureRef<'a> {
    fn from(m: &'a EmpiricalMeasure) -> Self {
        MeasureRef::Empirical(m)
    }
}

impl<'a> From<&'a DensityMeasure> for MeasureRef<'a> {
    fn from(d: &'a DensityMeasure) -> Self {
        MeasureRef::Density(d)
    }
}

/// Effective bandwidth assumed for `φ'` when sizing quadrature rules.
const PHI_BANDWIDTH: f64 = 16.0;

fn tail(phi: &dyn TestFunction, spec: &QFormSpec) -> f64 {
    phi.sup_d1().powi(2) * kernel_tail_bound(spec.beta, spec.k_trunc)
}

fn rule_size(k_trunc: usize, du: f64, dx: f64) -> usize {
    (1.5 * PI * (k_trunc as f64 * du + PHI_BANDWIDTH * dx)).ceil() as usize + 30
}

/// `∫∫ φ'(x)φ'(y) Q̄(F(x) - F(y)) μ(dx)μ(dy)` with the truncated kernel.
pub fn q_form_direct<'a>(
    m: impl Into<MeasureRef<'a>>,
    phi: &dyn TestFunction,
    spec: &QFormSpec,
) -> Result<Bounded> {
    spec.validate()?;
    let kernel = KernelSeries::new(spec.beta, spec.k_trunc)?;
    let value = match m.into() {
        MeasureRef::Empirical(m) => direct_empirical(m, phi, &kernel),
        MeasureRef::Density(d) => direct_density(d, phi, &kernel, spec.k_trunc),
    };
    Ok(Bounded { value, tail_bound: tail(phi, spec) })
}

fn direct_empirical(m: &EmpiricalMeasure, phi: &dyn TestFunction, kernel: &KernelSeries) -> f64 {
    let n = m.len();
    let atoms = m.atoms();
    let d1: Vec<f64> = atoms.iter().map(|&a| phi.d1(a)).collect();
    let f: Vec<f64> = atoms
        .iter()
        .map(|&a| m.cdf(a).expect("atoms lie in (0, 1]"))
        .collect();
    let q0 = kernel.eval(0.0);
    let mut acc = d1.iter().map(|v| v * v).sum::<f64>() * q0;
    for i in 0..n {
        if d1[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in (i + 1)..n {
            row += d1[j] * kernel.eval(f[i] - f[j]);
        }
        acc += 2.0 * d1[i] * row;
    }
    acc / (n * n) as f64
}

/// Gauss–Legendre nodes in `x` with weights `ρ dx`, and the cdf at each node.
fn density_nodes(d: &DensityMeasure, k_trunc: usize) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for p in 0..d.pieces() {
        let (x0, x1, rho, c0) = d.piece(p);
        if rho == 0.0 {
            continue;
        }
        let g = GaussLegendre::new(rule_size(k_trunc, rho * (x1 - x0), x1 - x0));
        for (x, w) in g.on(x0, x1) {
            out.push((x, w * rho, c0 + rho * (x - x0)));
        }
    }
    out
}

fn direct_density(d: &DensityMeasure, phi: &dyn TestFunction, kernel: &KernelSeries, k_trunc: usize) -> f64 {
    let nodes = density_nodes(d, k_trunc);
    let g: Vec<f64> = nodes.iter().map(|&(x, w, _)| w * phi.d1(x)).collect();
    let mut acc = 0.0;
    for (i, &(_, _, fi)) in nodes.iter().enumerate() {
        let row: f64 = nodes
            .iter()
            .zip(&g)
            .map(|(&(_, _, fj), gj)| gj * kernel.eval(fi - fj))
            .sum();
        acc += g[i] * row;
    }
    acc
}

/// `Σ_{|k|≤K} a_k² c_k²` with `c_k = ∫ φ'(G(u)) e_k(u) du`.
///
/// For an empirical measure the pushforward is the discrete one: `u` runs over
/// `{i/N}` with weight `1/N`, which is the exact image of `L_N` under its cdf.
pub fn q_form_spectral<'a>(
    m: impl Into<MeasureRef<'a>>,
    phi: &dyn TestFunction,
    spec: &QFormSpec,
) -> Result<Bounded> {
    spec.validate()?;
    let coeffs = pushforward_coefficients(m.into(), phi, spec.k_trunc)?;
    let value = ModeIndex::window(spec.k_trunc)
        .zip(&coeffs)
        .map(|(k, c)| noise_coeff(k, spec.beta).powi(2) * c * c)
        .sum();
    Ok(Bounded { value, tail_bound: tail(phi, spec) })
}

/// `c_k` for `k = -K..=K`.
pub fn pushforward_coefficients(m: MeasureRef<'_>, phi: &dyn TestFunction, k_trunc: usize) -> Result<Vec<f64>> {
    let modes: Vec<ModeIndex> = ModeIndex::window(k_trunc).collect();
    let mut c = vec![0.0; modes.len()];
    match m {
        MeasureRef::Empirical(m) => {
            let n = m.len();
            for i in 1..=n {
                let u = i as f64 / n as f64;
                let v = phi.d1(m.quantile(u)?) / n as f64;
                for (ck, &k) in c.iter_mut().zip(&modes) {
                    *ck += v * fourier_basis(k, u);
                }
            }
        }
        MeasureRef::Density(d) => {
            for p in 0..d.pieces() {
                let (x0, x1, rho, c0) = d.piece(p);
                if rho == 0.0 {
                    continue;
                }
                let (u0, u1) = (c0, c0 + rho * (x1 - x0));
                let g = GaussLegendre::new(rule_size(k_trunc, u1 - u0, x1 - x0));
                for (u, w) in g.on(u0, u1) {
                    let v = w * phi.d1(x0 + (u - u0) / rho);
                    for (ck, &k) in c.iter_mut().zip(&modes) {
                        *ck += v * fourier_basis(k, u);
                    }
                }
            }
        }
    }
    Ok(c)
}

/// `∫_{y0}^{y1} cos(c + s y) dy`, stable as `s → 0`.
fn int_cos(c: f64, s: f64, y0: f64, y1: f64) -> f64 {
    let len = y1 - y0;
    let mid = 0.5 * (y0 + y1);
    len * (c + s * mid).cos() * sinc(0.5 * s * len)
}

/// `∫_{y0}^{y1} sin(c + s y) dy`.
fn int_sin(c: f64, s: f64, y0: f64, y1: f64) -> f64 {
    let len = y1 - y0;
    let mid = 0.5 * (y0 + y1);
    len * (c + s * mid).sin() * sinc(0.5 * s * len)
}

fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 - z * z / 6.0
    } else {
        z.sin() / z
    }
}

/// Largest deviation over a 64-point grid of
/// `|∫ Q̄_K(F(x) - F(y)) e_k(F(y)) ρ(y) dy - a_k² e_k(F(x))|`,
/// integrating each density piece in closed form.
pub fn eigenfunction_check(d: &DensityMeasure, k: ModeIndex, spec: &QFormSpec) -> Result<Bounded> {
    spec.validate()?;
    if !d.is_strictly_positive() {
        return Err(Error::domain("eigenfunction identity needs a strictly positive density"));
    }
    if k.get().unsigned_abs() as usize > spec.k_trunc {
        return Err(Error::domain(format!("mode {} beyond truncation {}", k.get(), spec.k_trunc)));
    }
    let kk = f64::from(k.get().unsigned_abs());
    let target = noise_coeff(k, spec.beta).powi(2);
    let weights: Vec<f64> = (0..=spec.k_trunc)
        .map(|m| if m == 0 { 1.0 } else { 2.0 * (m as f64).powf(-2.0 * spec.beta) })
        .collect();
    let mut worst: f64 = 0.0;
    for j in 0..64 {
        let x = (j as f64 + 0.5) / 64.0;
        let v = d.cdf(x);
        let mut total = 0.0;
        for p in 0..d.pieces() {
            let (y0, y1, rho, c0) = d.piece(p);
            // F(y) = a + ρ y on this piece
            let a = c0 - rho * y0;
            for (m, &wm) in weights.iter().enumerate() {
                let tm = 2.0 * PI * m as f64;
                let tk = 2.0 * PI * kk;
                // cos(tm (v - F)) e_k(F), each product split into single harmonics of y
                let piece = match k.get().signum() {
                    0 => int_cos(tm * (v - a), -tm * rho, y0, y1),
                    1 => {
                        0.5 * SQRT_2
                            * (int_sin(tm * v + (tk - tm) * a, (tk - tm) * rho, y0, y1)
                                + int_sin(-tm * v + (tk + tm) * a, (tk + tm) * rho, y0, y1))
                    }
                    _ => {
                        0.5 * SQRT_2
                            * (int_cos(tm * v - (tm + tk) * a, -(tm + tk) * rho, y0, y1)
                                + int_cos(tm * v + (tk - tm) * a, (tk - tm) * rho, y0, y1))
                    }
                };
                total += wm * rho * piece;
            }
        }
        worst = worst.max((total - target * fourier_basis(k, v)).abs());
    }
    Ok(Bounded { value: worst, tail_bound: SQRT_2 * kernel_tail_bound(spec.beta, spec.k_trunc) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfn::{Bump, TrigPoly};
    use crate::torus::{kernel_qbar, spectral_constants};
    use rand::{Rng, SeedableRng};

    fn spec(beta: f64, k: usize) -> QFormSpec {
        QFormSpec { beta, k_trunc: k, diffusion_coeff: 1.0 }
    }

    #[test]
    fn constant_function_gives_zero() {
        let m = EmpiricalMeasure::from_positions(&[0.1, 0.4, 0.8]).unwrap();
        let c = TrigPoly::constant(3.0);
        assert_eq!(q_form_direct(&m, &c, &spec(1.5, 16)).unwrap().value, 0.0);
        assert_eq!(q_form_spectral(&m, &c, &spec(1.5, 16)).unwrap().value, 0.0);
    }

    #[test]
    fn uniform_density_with_basis_derivative() {
        let phi = TrigPoly::primitive_of_basis(ModeIndex(1)).unwrap();
        let d = DensityMeasure::uniform();
        for f in [q_form_direct, q_form_spectral] {
            let q = f(MeasureRef::Density(&d), &phi, &spec(1.5, 32)).unwrap();
            assert!((q.value - 1.0).abs() < 1e-10, "{}", q.value);
        }
    }

    #[test]
    fn single_atom_sees_kernel_diagonal() {
        let phi = Bump::default();
        let m = EmpiricalMeasure::from_positions(&[0.41]).unwrap();
        let s = spec(2.0, 4000);
        let q = q_form_direct(&m, &phi, &s).unwrap();
        let k2 = spectral_constants(2.0, 1).unwrap().k2_inf;
        let exact = phi.d1(0.41).powi(2) * 2.0 * k2;
        assert!(q.contains(exact, 1e-12));
    }

    #[test]
    fn direct_matches_naive_kernel() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..20).map(|_| rng.random()).collect();
        let m = EmpiricalMeasure::from_positions(&x).unwrap();
        let phi = TrigPoly { c0: 0.0, terms: vec![(1, 0.5, 0.2), (3, 0.0, 0.1)] };
        let n = m.len() as f64;
        let mut naive = 0.0;
        for &a in m.atoms() {
            for &b in m.atoms() {
                let u = m.cdf(a).unwrap() - m.cdf(b).unwrap();
                naive += phi.d1(a) * phi.d1(b) * kernel_qbar(1.2, u, 40).unwrap().value;
            }
        }
        naive /= n * n;
        let q = q_form_direct(&m, &phi, &spec(1.2, 40)).unwrap();
        assert!((q.value - naive).abs() < 1e-12);
    }

    #[test]
    fn spectral_and_direct_agree_on_smooth_density() {
        let d = DensityMeasure::from_profile(6, |x| 1.0 + 0.5 * (2.0 * PI * x).sin()).unwrap();
        let phi = Bump { center: 0.6, kappa: 2.0 };
        let s = spec(1.5, 48);
        let a = q_form_direct(&d, &phi, &s).unwrap();
        let b = q_form_spectral(&d, &phi, &s).unwrap();
        assert!((a.value - b.value).abs() < 1e-10, "{} vs {}", a.value, b.value);
        assert!(a.value > 0.0);
    }

    #[test]
    fn eigen_examples() {
        let s = spec(1.5, 64);
        let u = DensityMeasure::uniform();
        let r = eigenfunction_check(&u, ModeIndex(1), &s).unwrap();
        assert!(r.value <= r.tail_bound + 1e-8);
        let d = DensityMeasure::from_profile(5, |x| 2.0 + x).unwrap();
        assert!(eigenfunction_check(&d, ModeIndex(0), &s).unwrap().value <= 1e-10);
        let half = DensityMeasure::new(vec![0.0, 0.5, 1.0], vec![2.0, 0.0]).unwrap();
        assert!(eigenfunction_check(&half, ModeIndex(1), &s).is_err());
        assert!(eigenfunction_check(&u, ModeIndex(65), &s).is_err());
    }

    #[test]
    fn closed_form_integrals_match_quadrature() {
        let g = GaussLegendre::new(60);
        for &(c, s) in &[(0.3, 0.0), (1.1, 7.5), (-2.0, 40.0), (0.0, 1e-9)] {
            let a = int_cos(c, s, 0.1, 0.7);
            let b = g.integrate(0.1, 0.7, |y| (c + s * y).cos());
            assert!((a - b).abs() < 1e-13);
            let a = int_sin(c, s, 0.1, 0.7);
            let b = g.integrate(0.1, 0.7, |y| (c + s * y).sin());
            assert!((a - b).abs() < 1e-13);
        }
    }
}
