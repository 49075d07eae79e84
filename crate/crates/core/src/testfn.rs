//! Periodic C² test functions with closed-form derivatives.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::torus::ModeIndex;

/// A 1-periodic C² function with exact first and second derivatives.
pub trait TestFunction: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
    /// Upper bound on `sup |φ'|`.
    fn sup_d1(&self) -> f64;
    /// Upper bound on `sup |φ''|`.
    fn sup_d2(&self) -> f64;
    fn name(&self) -> String;
}

/// `c0 + Σ [a cos(2πkx) + b sin(2πkx)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigPoly {
    pub c0: f64,
    /// `(k, a, b)` with `k ≥ 1`.
    pub terms: Vec<(u32, f64, f64)>,
}

impl TrigPoly {
    pub fn constant(c: f64) -> Self {
        TrigPoly { c0: c, terms: Vec::new() }
    }

    /// The basis function `e_k` itself.
    pub fn basis(k: ModeIndex) -> Self {
        let k = k.get();
        match k {
            0 => Self::constant(1.0),
            k if k > 0 => TrigPoly { c0: 0.0, terms: vec![(k as u32, 0.0, SQRT_2)] },
            k => TrigPoly { c0: 0.0, terms: vec![(k.unsigned_abs(), SQRT_2, 0.0)] },
        }
    }

    /// The mean-zero primitive of `e_k`, so that `φ' = e_k`. Undefined for `k = 0`.
    pub fn primitive_of_basis(k: ModeIndex) -> Option<Self> {
        let k = k.get();
        let w = 2.0 * PI * f64::from(k.unsigned_abs());
        match k {
            0 => None,
            k if k > 0 => Some(TrigPoly { c0: 0.0, terms: vec![(k as u32, -SQRT_2 / w, 0.0)] }),
            k => Some(TrigPoly { c0: 0.0, terms: vec![(k.unsigned_abs(), 0.0, SQRT_2 / w)] }),
        }
    }

    fn sup_deriv(&self, p: i32) -> f64 {
        self.terms
            .iter()
            .map(|&(k, a, b)| (2.0 * PI * f64::from(k)).powi(p) * a.hypot(b))
            .sum()
    }

    fn eval_deriv(&self, x: f64, p: u8) -> f64 {
        let x = x - x.floor();
        let mut acc = if p == 0 { self.c0 } else { 0.0 };
        for &(k, a, b) in &self.terms {
            let w = 2.0 * PI * f64::from(k);
            let (s, c) = (w * x).sin_cos();
            acc += match p {
                0 => a * c + b * s,
                1 => w * (b * c - a * s),
                _ => -w * w * (a * c + b * s),
            };
        }
        acc
    }
}

impl TestFunction for TrigPoly {
    fn value(&self, x: f64) -> f64 {
        self.eval_deriv(x, 0)
    }
    fn d1(&self, x: f64) -> f64 {
        self.eval_deriv(x, 1)
    }
    fn d2(&self, x: f64) -> f64 {
        self.eval_deriv(x, 2)
    }
    fn sup_d1(&self) -> f64 {
        self.sup_deriv(1)
    }
    fn sup_d2(&self) -> f64 {
        self.sup_deriv(2)
    }
    fn name(&self) -> String {
        format!("trig({} terms)", self.terms.len())
    }
}

/// Periodic bump `exp(κ(cos(2π(x - c)) - 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: f64,
    pub kappa: f64,
}

impl Default for Bump {
    fn default() -> Self {
        Bump { center: 0.3, kappa: 4.0 }
    }
}

impl TestFunction for Bump {
    fn value(&self, x: f64) -> f64 {
        let th = 2.0 * PI * (x - self.center);
        (self.kappa * (th.cos() - 1.0)).exp()
    }

    fn d1(&self, x: f64) -> f64 {
        let th = 2.0 * PI * (x - self.center);
        -2.0 * PI * self.kappa * th.sin() * self.value(x)
    }

    fn d2(&self, x: f64) -> f64 {
        let th = 2.0 * PI * (x - self.center);
        let (s, c) = th.sin_cos();
        let k = self.kappa;
        4.0 * PI * PI * (k * k * s * s - k * c) * self.value(x)
    }

    fn sup_d1(&self) -> f64 {
        let k = self.kappa;
        if k == 0.0 {
            return 0.0;
        }
        // stationary point of sinθ·exp(κ cosθ)
        let c = (-1.0 + (1.0 + 4.0 * k * k).sqrt()) / (2.0 * k);
        let s = (1.0 - c * c).max(0.0).sqrt();
        2.0 * PI * k.abs() * s * (k * (c - 1.0)).exp()
    }

    fn sup_d2(&self) -> f64 {
        let k = self.kappa.abs();
        4.0 * PI * PI * (k + k * k)
    }

    fn name(&self) -> String {
        format!("bump({},{})", self.center, self.kappa)
    }
}

/// Serializable choice of test function, parsed from strings such as
/// `e1`, `e-2`, `de1` (primitive of `e_1`), `bump`, `bump(0.3,4)` or `const`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TestFn {
    Basis(i32),
    PrimitiveOfBasis(i32),
    Bump(Bump),
    Constant(f64),
}

impl TestFn {
    pub fn build(&self) -> Box<dyn TestFunction> {
        match *self {
            TestFn::Basis(k) => Box::new(TrigPoly::basis(ModeIndex(k))),
            TestFn::PrimitiveOfBasis(k) => Box::new(
                TrigPoly::primitive_of_basis(ModeIndex(k)).expect("validated at parse time"),
            ),
            TestFn::Bump(b) => Box::new(b),
            TestFn::Constant(c) => Box::new(TrigPoly::constant(c)),
        }
    }
}

impl fmt::Display for TestFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFn::Basis(k) => write!(f, "e{k}"),
            TestFn::PrimitiveOfBasis(k) => write!(f, "de{k}"),
            TestFn::Bump(b) => write!(f, "bump({},{})", b.center, b.kappa),
            TestFn::Constant(c) => write!(f, "const({c})"),
        }
    }
}

impl FromStr for TestFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::config("test_function", format!("unrecognized test function `{s}`"));
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("de") {
            let k: i32 = rest.parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(bad());
            }
            return Ok(TestFn::PrimitiveOfBasis(k));
        }
        if let Some(rest) = s.strip_prefix('e') {
            return rest.parse().map(TestFn::Basis).map_err(|_| bad());
        }
        if s == "bump" {
            return Ok(TestFn::Bump(Bump::default()));
        }
        if s == "const" {
            return Ok(TestFn::Constant(1.0));
        }
        let args = |name: &str| {
            s.strip_prefix(name)
                .and_then(|r| r.strip_prefix('('))
                .and_then(|r| r.strip_suffix(')'))
                .map(|r| r.split(',').map(|a| a.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>())
        };
        if let Some(parsed) = args("bump") {
            return match parsed.map_err(|_| bad())?.as_slice() {
                [center, kappa] => Ok(TestFn::Bump(Bump { center: *center, kappa: *kappa })),
                _ => Err(bad()),
            };
        }
        if let Some(parsed) = args("const") {
            return match parsed.map_err(|_| bad())?.as_slice() {
                [c] => Ok(TestFn::Constant(*c)),
                _ => Err(bad()),
            };
        }
        Err(bad())
    }
}

impl TryFrom<String> for TestFn {
    type Error = Error;
    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<TestFn> for String {
    fn from(t: TestFn) -> String {
        t.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::{fourier_basis, fourier_basis_d1};

    fn check_derivatives(f: &dyn TestFunction) {
        let h = 1e-4;
        for i in 0..200 {
            let x = -1.0 + 0.0173 * i as f64;
            let fd1 = (f.value(x + h) - f.value(x - h)) / (2.0 * h);
            let fd2 = (f.d1(x + h) - f.d1(x - h)) / (2.0 * h);
            let scale = 1.0 + f.sup_d2();
            assert!((fd1 - f.d1(x)).abs() < 1e-6 * scale, "{} d1 at {x}", f.name());
            assert!((fd2 - f.d2(x)).abs() < 1e-6 * (scale + f.sup_d2() * 40.0), "{} d2 at {x}", f.name());
            assert!((f.value(x + 1.0) - f.value(x)).abs() < 1e-12);
            assert!((f.d1(x + 1.0) - f.d1(x)).abs() < 1e-9);
            assert!((f.d2(x + 1.0) - f.d2(x)).abs() < 1e-9);
            assert!(f.d1(x).abs() <= f.sup_d1() + 1e-12);
            assert!(f.d2(x).abs() <= f.sup_d2() + 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        check_derivatives(&TrigPoly::basis(ModeIndex(1)));
        check_derivatives(&TrigPoly::basis(ModeIndex(-2)));
        check_derivatives(&TrigPoly::primitive_of_basis(ModeIndex(3)).unwrap());
        check_derivatives(&TrigPoly { c0: 0.5, terms: vec![(1, 0.3, -0.2), (4, 0.01, 0.05)] });
        check_derivatives(&Bump::default());
        check_derivatives(&Bump { center: 0.9, kappa: 0.5 });
    }

    #[test]
    fn basis_agrees_with_torus() {
        for k in -4..=4 {
            let f = TrigPoly::basis(ModeIndex(k));
            for i in 0..30 {
                let x = 0.033 * i as f64;
                assert!((f.value(x) - fourier_basis(ModeIndex(k), x)).abs() < 1e-14);
                assert!((f.d1(x) - fourier_basis_d1(ModeIndex(k), x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn primitive_has_basis_derivative() {
        for k in [-3, -1, 1, 2] {
            let f = TrigPoly::primitive_of_basis(ModeIndex(k)).unwrap();
            for i in 0..30 {
                let x = 0.031 * i as f64;
                assert!((f.d1(x) - fourier_basis(ModeIndex(k), x)).abs() < 1e-13);
            }
        }
        assert!(TrigPoly::primitive_of_basis(ModeIndex(0)).is_none());
    }

    #[test]
    fn bump_sup_d1_is_attained() {
        let b = Bump { center: 0.1, kappa: 3.0 };
        let dense = (0..200_000)
            .map(|i| b.d1(i as f64 / 200_000.0).abs())
            .fold(0.0, f64::max);
        assert!((dense - b.sup_d1()).abs() < 1e-6 * b.sup_d1());
    }

    #[test]
    fn parse_round_trip() {
        for s in ["e1", "e-2", "de1", "bump(0.25,3)", "const(2)"] {
            let t: TestFn = s.parse().unwrap();
            let back: TestFn = t.to_string().parse().unwrap();
            assert_eq!(t, back);
        }
        assert_eq!("bump".parse::<TestFn>().unwrap(), TestFn::Bump(Bump::default()));
        assert!("de0".parse::<TestFn>().is_err());
        assert!("x3".parse::<TestFn>().is_err());
        assert!("bump(1)".parse::<TestFn>().is_err());
    }
}
