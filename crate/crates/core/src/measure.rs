//! Empirical measures of particle configurations and piecewise-constant densities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particles::ParticleState;
use crate::testfn::TestFunction;
use crate::torus::frac;

/// `N` equal-weight atoms in `(0, 1]`, sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    atoms: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn from_state(state: &ParticleState) -> Result<Self> {
        Self::from_positions(&state.x)
    }

    /// Reduces arbitrary real positions with `frac` and sorts them.
    pub fn from_positions(x: &[f64]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::domain("empirical measure needs at least one atom"));
        }
        let mut atoms = x.iter().map(|&v| frac(v)).collect::<Result<Vec<_>>>()?;
        atoms.sort_by(f64::total_cmp);
        Ok(EmpiricalMeasure { atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.atoms.len() as f64
    }

    /// Fraction of atoms `≤ x`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::domain(format!("cdf argument {x} outside [0, 1]")));
        }
        Ok(self.count_le(x) as f64 / self.len() as f64)
    }

    fn count_le(&self, x: f64) -> usize {
        self.atoms.partition_point(|&a| a <= x)
    }

    /// Smallest atom `a` with `cdf(a) ≥ u`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u <= 1.0) {
            return Err(Error::domain(format!("quantile level {u} outside (0, 1]")));
        }
        let n = self.len();
        // smallest c with c/n ≥ u, compared in the same arithmetic as cdf
        let nf = n as f64;
        let mut c = ((u * nf).ceil() as usize).clamp(1, n);
        while c > 1 && (c - 1) as f64 / nf >= u {
            c -= 1;
        }
        while c < n && (c as f64 / nf) < u {
            c += 1;
        }
        let mut i = c - 1;
        // ties: step back to the first atom sharing the value (its cdf already counts them all)
        while i > 0 && self.atoms[i - 1] == self.atoms[i] {
            i -= 1;
        }
        Ok(self.atoms[i])
    }

    pub fn integrate(&self, phi: &dyn TestFunction) -> f64 {
        self.integrate_fn(|x| phi.value(x))
    }

    pub fn integrate_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|&a| f(a)).sum::<f64>() / self.len() as f64
    }

    /// Largest mass of an open circular window of the given width.
    pub fn max_window_mass(&self, width: f64) -> Result<f64> {
        if !(width > 0.0 && width < 1.0) {
            return Err(Error::domain(format!("window width {width} outside (0, 1)")));
        }
        let n = self.len();
        // Any maximal open window can be slid so its left end sits just below an atom;
        // it then holds atoms a_i..a_j (cyclically) with a_j - a_i < width.
        let lifted = |j: usize| {
            if j < n {
                self.atoms[j]
            } else {
                self.atoms[j - n] + 1.0
            }
        };
        let mut best = 0;
        let mut j = 0;
        for i in 0..n {
            if j < i {
                j = i;
            }
            while j + 1 < i + n && lifted(j + 1) - self.atoms[i] < width {
                j += 1;
            }
            best = best.max(j - i + 1);
        }
        Ok(best as f64 / n as f64)
    }

    /// Circular Wasserstein-1 distance between measures with the same atom count,
    /// minimized over the `N` cyclic matchings of sorted atoms.
    pub fn wasserstein1(&self, other: &EmpiricalMeasure) -> Result<f64> {
        let n = self.len();
        if other.len() != n {
            return Err(Error::domain(format!(
                "wasserstein1 needs equal atom counts, got {n} and {}",
                other.len()
            )));
        }
        let circ = |d: f64| {
            let r = (d - d.round()).abs();
            r.min(1.0 - r)
        };
        let best = (0..n)
            .map(|s| {
                (0..n)
                    .map(|i| circ(self.atoms[i] - other.atoms[(i + s) % n]))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        Ok(best / n as f64)
    }
}

/// Piecewise-constant probability density on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityMeasure {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    #[serde(skip)]
    cum: Vec<f64>,
}

impl DensityMeasure {
    /// `breakpoints` run from 0 to 1 strictly increasing; `values[p]` is the density on piece `p`.
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::domain("density needs one more breakpoint than values"));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return Err(Error::domain("density breakpoints must start at 0 and end at 1"));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("density breakpoints must be strictly increasing"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::domain("density values must be finite and nonnegative"));
        }
        let mut cum = Vec::with_capacity(breakpoints.len());
        cum.push(0.0);
        for (p, v) in values.iter().enumerate() {
            let last = *cum.last().unwrap();
            cum.push(last + v * (breakpoints[p + 1] - breakpoints[p]));
        }
        let total = *cum.last().unwrap();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("density integrates to {total}, not 1")));
        }
        Ok(DensityMeasure { breakpoints, values, cum })
    }

    pub fn uniform() -> Self {
        Self::new(vec![0.0, 1.0], vec![1.0]).expect("uniform density is valid")
    }

    /// Normalizes raw nonnegative weights over the given breakpoints.
    pub fn normalized(breakpoints: Vec<f64>, raw: Vec<f64>) -> Result<Self> {
        let mass: f64 = raw
            .iter()
            .zip(breakpoints.windows(2))
            .map(|(v, w)| v * (w[1] - w[0]))
            .sum();
        if !(mass > 0.0) {
            return Err(Error::domain("density has no mass"));
        }
        let values = raw.iter().map(|v| v / mass).collect();
        let mut d = Self::new(breakpoints, values)?;
        // absorb rounding so the final cdf value is exactly 1
        *d.cum.last_mut().unwrap() = 1.0;
        Ok(d)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pieces(&self) -> usize {
        self.values.len()
    }

    /// `(left, right, density, cdf at left)` for each piece.
    pub fn piece(&self, p: usize) -> (f64, f64, f64, f64) {
        (self.breakpoints[p], self.breakpoints[p + 1], self.values[p], self.cum[p])
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let p = self.locate(x);
        self.values[p]
    }

    fn locate(&self, x: f64) -> usize {
        let p = self.breakpoints.partition_point(|&b| b <= x);
        p.clamp(1, self.pieces()) - 1
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let p = self.locate(x);
        (self.cum[p] + self.values[p] * (x - self.breakpoints[p])).min(1.0)
    }

    /// Inverse of the piecewise-linear cdf; the smallest `x` with `cdf(x) = u`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::domain(format!("quantile level {u} outside [0, 1]")));
        }
        if u == 0.0 {
            let first = self.values.iter().position(|&v| v > 0.0).unwrap_or(0);
            return Ok(self.breakpoints[first]);
        }
        // first piece whose cumulative mass reaches u
        let p = self.cum[1..].partition_point(|&c| c < u).min(self.pieces() - 1);
        let mut p = p;
        while self.values[p] == 0.0 && p + 1 < self.pieces() {
            p += 1;
        }
        let x = self.breakpoints[p] + (u - self.cum[p]) / self.values[p];
        Ok(x.clamp(self.breakpoints[p], self.breakpoints[p + 1]))
    }

    /// Smooth positive density `c·(1 + Σ amplitude terms)` sampled on `pieces` cells.
    pub fn from_profile(pieces: usize, profile: impl Fn(f64) -> f64) -> Result<Self> {
        let breakpoints: Vec<f64> = (0..=pieces).map(|p| p as f64 / pieces as f64).collect();
        let raw: Vec<f64> = (0..pieces)
            .map(|p| profile((p as f64 + 0.5) / pieces as f64))
            .collect();
        Self::normalized(breakpoints, raw)
    }
}

pub fn quantile_of_density(d: &DensityMeasure, u: f64) -> Result<f64> {
    d.quantile(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfn::{TrigPoly, TestFunction};
    use crate::torus::ModeIndex;
    use proptest::prelude::*;

    fn uniform(n: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::from_positions(&(1..=n).map(|i| i as f64 / n as f64).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn uniform_grid_atoms() {
        let m = uniform(4);
        assert_eq!(m.atoms(), &[0.25, 0.5, 0.75, 1.0]);
        assert!((m.weight() * m.len() as f64 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lifted_positions_reduce() {
        let m = EmpiricalMeasure::from_positions(&[0.5, 0.9, 1.2]).unwrap();
        assert!((m.atoms()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn cdf_examples() {
        let m = uniform(4);
        assert_eq!(m.cdf(0.0).unwrap(), 0.0);
        assert_eq!(m.cdf(1.0).unwrap(), 1.0);
        assert_eq!(m.cdf(0.5).unwrap(), 0.5);
        assert!(m.cdf(1.1).is_err());
        assert!(m.cdf(-0.1).is_err());
    }

    #[test]
    fn quantile_examples() {
        let m = uniform(4);
        assert_eq!(m.quantile(0.5).unwrap(), 0.5);
        assert_eq!(m.quantile(1.0).unwrap(), 1.0);
        assert_eq!(m.quantile(0.3).unwrap(), 0.5);
        assert!(m.quantile(0.0).is_err());
        let tied = EmpiricalMeasure::from_positions(&[0.3, 0.3, 0.7]).unwrap();
        assert_eq!(tied.quantile(0.6).unwrap(), 0.3);
        assert_eq!(tied.quantile(0.3).unwrap(), 0.3);
    }

    #[test]
    fn integrate_examples() {
        let one = TrigPoly::constant(1.0);
        assert!((uniform(7).integrate(&one) - 1.0).abs() < 1e-15);
        let e1 = TrigPoly::basis(ModeIndex(1));
        for n in 3..20 {
            assert!(uniform(n).integrate(&e1).abs() < 1e-14);
        }
        let single = EmpiricalMeasure::from_positions(&[0.3]).unwrap();
        assert!((single.integrate(&e1) - e1.value(0.3)).abs() < 1e-15);
    }

    #[test]
    fn window_mass_examples() {
        let n = 16;
        assert_eq!(uniform(n).max_window_mass(1.0 / (2.0 * n as f64)).unwrap(), 1.0 / n as f64);
        let same = EmpiricalMeasure::from_positions(&[0.4; 8]).unwrap();
        assert_eq!(same.max_window_mass(0.01).unwrap(), 1.0);
        let clusters: Vec<f64> = (0..8)
            .map(|i| if i < 4 { 0.2 + 0.001 * i as f64 } else { 0.7 + 0.001 * i as f64 })
            .collect();
        let m = EmpiricalMeasure::from_positions(&clusters).unwrap();
        assert_eq!(m.max_window_mass(0.05).unwrap(), 0.5);
        // wraparound cluster straddling 0
        let wrap = EmpiricalMeasure::from_positions(&[0.99, 0.995, 1.0, 0.004, 0.5]).unwrap();
        assert_eq!(wrap.max_window_mass(0.02).unwrap(), 0.8);
        // open window: atoms exactly `width` apart do not fit together
        let edge = EmpiricalMeasure::from_positions(&[0.25, 0.5]).unwrap();
        assert_eq!(edge.max_window_mass(0.25).unwrap(), 0.5);
    }

    #[test]
    fn wasserstein_examples() {
        let m = uniform(5);
        assert_eq!(m.wasserstein1(&m).unwrap(), 0.0);
        let a = EmpiricalMeasure::from_positions(&[0.25]).unwrap();
        let b = EmpiricalMeasure::from_positions(&[0.75]).unwrap();
        assert!((a.wasserstein1(&b).unwrap() - 0.5).abs() < 1e-15);
        let x: Vec<f64> = [0.1, 0.35, 0.6, 0.95].to_vec();
        // a translation costs exactly δ when Nδ ≤ 1/2 and δ is below the atom spacing
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        let d = EmpiricalMeasure::from_positions(&x)
            .unwrap()
            .wasserstein1(&EmpiricalMeasure::from_positions(&shifted).unwrap())
            .unwrap();
        assert!((d - 0.1).abs() < 1e-12);
        assert!(a.wasserstein1(&m).is_err());
    }

    #[test]
    fn density_quantile_examples() {
        let u = DensityMeasure::uniform();
        for i in 0..=10 {
            let v = i as f64 / 10.0;
            assert!((u.quantile(v).unwrap() - v).abs() < 1e-15);
        }
        let half = DensityMeasure::new(vec![0.0, 0.5, 1.0], vec![2.0, 0.0]).unwrap();
        assert!((half.quantile(0.5).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(half.quantile(1.0).unwrap(), 0.5);
        assert!(!half.is_strictly_positive());
    }

    #[test]
    fn density_rejects_bad_mass() {
        assert!(DensityMeasure::new(vec![0.0, 1.0], vec![0.9]).is_err());
        assert!(DensityMeasure::new(vec![0.0, 0.5, 1.0], vec![1.0]).is_err());
        assert!(DensityMeasure::new(vec![0.0, 0.5, 1.0], vec![3.0, -1.0]).is_err());
    }

    fn arb_measure() -> impl Strategy<Value = EmpiricalMeasure> {
        prop::collection::vec(0.0f64..1.0, 1..64)
            .prop_map(|v| EmpiricalMeasure::from_positions(&v).unwrap())
    }

    proptest! {
        #[test]
        fn cdf_quantile_galois(m in arb_measure(), u in 1e-9f64..=1.0) {
            let g = m.quantile(u).unwrap();
            prop_assert!(m.cdf(g).unwrap() >= u - 1e-12);
            for &a in m.atoms() {
                prop_assert_eq!(m.quantile(m.cdf(a).unwrap()).unwrap(), a);
            }
        }

        #[test]
        fn cdf_steps_by_one_over_n(m in arb_measure()) {
            let n = m.len() as f64;
            let mut prev = 0.0;
            for &a in m.atoms() {
                let c = m.cdf(a).unwrap();
                prop_assert!(c >= prev);
                prev = c;
            }
            prop_assert_eq!(m.cdf(1.0).unwrap(), 1.0);
            prop_assert!((m.cdf(m.atoms()[0]).unwrap() * n).round() >= 1.0);
        }

        #[test]
        fn pushforward_identity(m in arb_measure()) {
            let f = |x: f64| (2.0 * std::f64::consts::PI * x).sin() + x * x;
            let n = m.len();
            let direct = m.integrate_fn(f);
            let pushed: f64 = (1..=n).map(|i| f(m.quantile(i as f64 / n as f64).unwrap())).sum::<f64>() / n as f64;
            prop_assert!((direct - pushed).abs() < 1e-12);
        }

        #[test]
        fn window_mass_monotone(m in arb_measure(), w1 in 0.001f64..0.5, w2 in 0.001f64..0.5) {
            let (lo, hi) = if w1 < w2 { (w1, w2) } else { (w2, w1) };
            prop_assert!(m.max_window_mass(lo).unwrap() <= m.max_window_mass(hi).unwrap());
        }

        #[test]
        fn density_cdf_inverts(raw in prop::collection::vec(0.05f64..3.0, 1..10), u in 0.0f64..=1.0) {
            let pieces = raw.len();
            let bp: Vec<f64> = (0..=pieces).map(|p| p as f64 / pieces as f64).collect();
            let d = DensityMeasure::normalized(bp, raw).unwrap();
            let x = d.quantile(u).unwrap();
            prop_assert!((d.cdf(x) - u).abs() < 1e-12);
        }
    }
}
