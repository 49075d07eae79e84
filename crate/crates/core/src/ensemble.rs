//! Seeded replica ensembles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::particles::{simulate_replica, ModelParams, ParticleState, Trajectory};

/// Replicas of one model on a common save grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub params: ModelParams,
    pub save_times: Vec<f64>,
    pub replicas: Vec<Trajectory>,
}

impl PathEnsemble {
    /// Runs replicas `0..count` in parallel; the result is ordered by replica id
    /// and does not depend on scheduling.
    pub fn run(params: &ModelParams, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::config("replicas", "need at least one replica"));
        }
        params.validate()?;
        let replicas = (0..count as u64)
            .into_par_iter()
            .map(|r| simulate_replica(params, r))
            .collect::<Result<Vec<_>>>()?;
        let save_times = save_grid(params)?;
        Ok(PathEnsemble { params: params.clone(), save_times, replicas })
    }

    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    pub fn collisions(&self) -> usize {
        self.replicas.iter().filter(|r| r.aborted()).count()
    }

    /// Replicas that reached save index `idx`.
    pub fn alive_at(&self, idx: usize) -> impl Iterator<Item = &Trajectory> {
        self.replicas.iter().filter(move |r| r.states.len() > idx)
    }

    pub fn n_alive(&self, idx: usize) -> usize {
        self.alive_at(idx).count()
    }

    pub fn measure(traj: &Trajectory, idx: usize) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::from_state(&ParticleState::new(traj.times[idx], traj.states[idx].clone()))
    }
}

/// Save times implied by `save_stride`, always ending at `T`.
pub fn save_grid(params: &ModelParams) -> Result<Vec<f64>> {
    let steps = params.n_steps()?;
    let mut times = vec![0.0];
    for s in 1..=steps {
        if s % params.save_stride == 0 || s == steps {
            times.push(s as f64 * params.dt);
        }
    }
    Ok(times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::NoiseMode;

    #[test]
    fn ensemble_order_is_stable() {
        let mut p = ModelParams::new(8, 2.0, 0.3, 0.01, 1e-3);
        p.mode = NoiseMode::CommonNoise;
        p.save_stride = 2;
        let a = PathEnsemble::run(&p, 6).unwrap();
        assert_eq!(a.save_times.len(), 6);
        for (i, r) in a.replicas.iter().enumerate() {
            assert_eq!(r.replica_id, i as u64);
            assert_eq!(*r, simulate_replica(&p, i as u64).unwrap());
        }
        // growing the ensemble leaves existing replicas untouched
        let b = PathEnsemble::run(&p, 9).unwrap();
        assert_eq!(a.replicas[..], b.replicas[..6]);
    }

    #[test]
    fn save_grid_ends_at_horizon() {
        let mut p = ModelParams::new(4, 2.0, 0.3, 0.01, 1e-3);
        p.save_stride = 3;
        let g = save_grid(&p).unwrap();
        assert_eq!(g.len(), 5);
        assert!((g[4] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn empty_ensemble_rejected() {
        let p = ModelParams::new(4, 2.0, 0.3, 0.01, 1e-3);
        assert!(PathEnsemble::run(&p, 0).is_err());
    }
}
