//! Exact single-particle simulation and trajectory-based estimators.

mod dwell;
mod estimate;
mod merged;

pub use dwell::{extract_dwell_samples, DwellSamples};
pub use estimate::{estimate_from_ensemble, EnsembleEstimate, StateEstimate};
pub use merged::{
    fit_merged_dwell_survival, merged_dwell_law, merged_dwell_survival, merged_total_time_survival,
    recover_probs_from_merged_law, sample_merged_excursions, MergedDwellFit, MergedDwellLaw,
    MergedExcursion,
};

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::initial::InitialCondition;
use crate::model::ModelParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("trajectory has no completed dwell (horizon before the first jump)")]
    NoCompletedDwells,
    #[error("no trajectories supplied")]
    EmptyEnsemble,
    #[error("observed {distinct} distinct slopes; states cannot be read off velocities")]
    IndistinguishableStates { distinct: usize },
    #[error("state {state} has no completed dwell in the ensemble")]
    MissingState { state: usize },
    #[error("malformed trajectory: {0}")]
    Malformed(String),
    #[error("merged-dwell analysis needs v2 = v3 != v1")]
    WrongDegeneracy,
    #[error("circular network (A = B = 0): only lambda2 + lambda3 is identifiable")]
    CircularNetwork,
    #[error("no probability triple in [0,1]^3 reproduces the merged-dwell coefficients")]
    NoSolutionInBox,
    #[error("coefficient C is inconsistent with A, B, D (residual {residual:e})")]
    InconsistentC { residual: f64 },
    #[error("merged-dwell fit needs at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("merged-dwell fit failed to converge from any starting point")]
    FitDiverged,
}

/// One row of a trajectory: the state entered at time `t` at position `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpEvent {
    pub t: f64,
    pub x: f64,
    /// 0-based state index.
    pub state: usize,
}

/// Piecewise-linear path, stored as the initial point plus every jump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    events: Vec<JumpEvent>,
    horizon: f64,
    final_x: f64,
}

impl Trajectory {
    /// Builds a trajectory from events, checking ordering and state changes.
    pub fn new(
        events: Vec<JumpEvent>,
        horizon: f64,
        final_x: f64,
    ) -> Result<Self, TrajectoryError> {
        let malformed = |m: &str| Err(TrajectoryError::Malformed(m.to_string()));
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(TrajectoryError::InvalidHorizon(horizon));
        }
        let Some(first) = events.first() else {
            return malformed("no events");
        };
        if first.t != 0.0 {
            return malformed("first event must be at t = 0");
        }
        for w in events.windows(2) {
            if !(w[1].t > w[0].t) {
                return malformed("event times must be strictly increasing");
            }
            if w[1].state == w[0].state {
                return malformed("consecutive events must change state");
            }
        }
        if events.iter().any(|e| e.state >= 3) {
            return malformed("state index out of range");
        }
        if events.last().is_some_and(|e| e.t >= horizon) {
            return malformed("events must precede the horizon");
        }
        Ok(Trajectory {
            events,
            horizon,
            final_x,
        })
    }

    pub fn events(&self) -> &[JumpEvent] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn final_position(&self) -> f64 {
        self.final_x
    }

    pub fn jumps(&self) -> usize {
        self.events.len() - 1
    }

    fn segment_at(&self, t: f64) -> &JumpEvent {
        let k = self.events.partition_point(|e| e.t <= t);
        &self.events[k.saturating_sub(1)]
    }

    pub fn state_at(&self, t: f64) -> usize {
        self.segment_at(t).state
    }

    /// Position at time `t ∈ [0, horizon]` given the state velocities.
    pub fn position_at(&self, t: f64, velocities: &[f64; 3]) -> f64 {
        if t >= self.horizon {
            return self.final_x;
        }
        let e = self.segment_at(t);
        e.x + velocities[e.state] * (t - e.t)
    }
}

/// Independent, reproducible stream for ensemble member `index`.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

fn draw_state<R: Rng + ?Sized>(rng: &mut R, weights: &[f64; 3]) -> usize {
    let u: f64 = rng.random();
    if u < weights[0] {
        0
    } else if u < weights[0] + weights[1] {
        1
    } else if weights[2] > 0.0 {
        2
    } else if weights[1] > 0.0 {
        1
    } else {
        0
    }
}

pub(crate) fn next_state<R: Rng + ?Sized>(rng: &mut R, jump: &[[f64; 3]; 3], from: usize) -> usize {
    let (first, second) = match from {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    if rng.random::<f64>() < jump[from][first] {
        first
    } else {
        second
    }
}

pub fn simulate_with_rng<R: Rng + ?Sized>(
    theta: &ModelParams,
    ic: &InitialCondition,
    horizon: f64,
    rng: &mut R,
) -> Result<Trajectory, TrajectoryError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(TrajectoryError::InvalidHorizon(horizon));
    }
    let v = theta.velocities();
    let jump = theta.jump_probabilities();
    let dwell = theta
        .rates()
        .map(|l| Exp::new(l).expect("rates validated positive"));

    let mut state = draw_state(rng, &ic.weights);
    let mut t = 0.0;
    let mut x = ic.profile.sample(rng);
    let mut events = vec![JumpEvent { t, x, state }];
    loop {
        let tau = dwell[state].sample(rng);
        let t_next = t + tau;
        if t_next >= horizon {
            let final_x = x + v[state] * (horizon - t);
            return Ok(Trajectory {
                events,
                horizon,
                final_x,
            });
        }
        if t_next <= t {
            // Dwell below the resolution of t; no representable jump.
            continue;
        }
        // Integrate with the stored times so positions reconstruct exactly.
        x += v[state] * (t_next - t);
        t = t_next;
        state = next_state(rng, &jump, state);
        events.push(JumpEvent { t, x, state });
    }
}

pub fn simulate_trajectory(
    theta: &ModelParams,
    ic: &InitialCondition,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory, TrajectoryError> {
    simulate_with_rng(theta, ic, horizon, &mut trajectory_rng(seed, 0))
}

/// `m` trajectories; member `i` uses stream `i` of `master_seed`, so the
/// result does not depend on thread scheduling.
pub fn simulate_ensemble(
    theta: &ModelParams,
    ic: &InitialCondition,
    horizon: f64,
    m: usize,
    master_seed: u64,
) -> Result<Vec<Trajectory>, TrajectoryError> {
    (0..m as u64)
        .into_par_iter()
        .map(|i| simulate_with_rng(theta, ic, horizon, &mut trajectory_rng(master_seed, i)))
        .collect()
}

/// Writes `traj_id,t,x,state` rows (states 1-based).
pub fn write_trajectories_csv<W: Write>(out: &mut W, trajs: &[Trajectory]) -> std::io::Result<()> {
    writeln!(out, "traj_id,t,x,state")?;
    for (id, traj) in trajs.iter().enumerate() {
        for e in &traj.events {
            writeln!(out, "{},{:e},{:e},{}", id, e.t, e.x, e.state + 1)?;
        }
    }
    Ok(())
}
