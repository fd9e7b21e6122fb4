//! Parameter estimation from observed positions only. States are not read
//! from the trajectory; they are reconstructed by grouping segment slopes.

use serde::Serialize;

use super::{Trajectory, TrajectoryError};

/// Relative tolerance when grouping reconstructed slopes into velocities.
const SLOPE_GROUP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Estimates for states labelled 1, 2, 3 by descending velocity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleEstimate {
    pub velocities: [StateEstimate; 3],
    pub rates: [StateEstimate; 3],
    pub p12: StateEstimate,
    pub p21: StateEstimate,
    pub p31: StateEstimate,
    pub initial_weights: [StateEstimate; 3],
    pub completed_dwells: [usize; 3],
    pub trajectories: usize,
}

impl EnsembleEstimate {
    pub fn probs(&self) -> [f64; 3] {
        [self.p12.value, self.p21.value, self.p31.value]
    }
}

struct Segment {
    slope: f64,
    duration: f64,
    completed: bool,
    first: bool,
}

fn segments(traj: &Trajectory) -> impl Iterator<Item = Segment> + '_ {
    let events = traj.events();
    let n = events.len();
    (0..n).map(move |k| {
        let (t1, x1, completed) = if k + 1 < n {
            (events[k + 1].t, events[k + 1].x, true)
        } else {
            (traj.horizon(), traj.final_position(), false)
        };
        let duration = t1 - events[k].t;
        Segment {
            slope: (x1 - events[k].x) / duration,
            duration,
            completed,
            first: k == 0,
        }
    })
}

/// Groups sorted slopes; returns group representatives (means) in descending order.
fn slope_groups(mut slopes: Vec<f64>) -> Vec<(f64, f64)> {
    slopes.sort_by(|a, b| b.total_cmp(a));
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for s in slopes {
        match groups.last_mut() {
            Some(g) if (g[g.len() - 1] - s).abs() <= SLOPE_GROUP_TOL * s.abs().max(1.0) => {
                g.push(s)
            }
            _ => groups.push(vec![s]),
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let n = g.len() as f64;
            let mean = g.iter().sum::<f64>() / n;
            let var = g.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (mean, (var / n).sqrt())
        })
        .collect()
}

fn label(slope: f64, centres: &[(f64, f64)]) -> usize {
    centres
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 .0 - slope).abs().total_cmp(&(b.1 .0 - slope).abs()))
        .map(|(i, _)| i)
        .expect("three centres")
}

fn proportion(hits: u64, n: u64) -> StateEstimate {
    let p = hits as f64 / n as f64;
    StateEstimate {
        value: p,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
    }
}

/// Maximum-likelihood estimates of (v, λ, p, a) from an ensemble.
///
/// λ̂_s is the number of completed dwells over the total time spent in s
/// (censored final segments contribute time but no event).
pub fn estimate_from_ensemble(trajs: &[Trajectory]) -> Result<EnsembleEstimate, TrajectoryError> {
    if trajs.is_empty() {
        return Err(TrajectoryError::EmptyEnsemble);
    }
    let slopes: Vec<f64> = trajs
        .iter()
        .flat_map(|t| segments(t).map(|s| s.slope))
        .collect();
    let centres = slope_groups(slopes);
    if centres.len() != 3 {
        return Err(TrajectoryError::IndistinguishableStates {
            distinct: centres.len(),
        });
    }

    let mut time = [0.0f64; 3];
    let mut completed = [0usize; 3];
    let mut switches = [[0u64; 3]; 3];
    let mut first_state = [0u64; 3];
    for traj in trajs {
        let mut prev: Option<usize> = None;
        for seg in segments(traj) {
            let s = label(seg.slope, &centres);
            if let Some(p) = prev {
                switches[p][s] += 1;
            }
            if seg.first {
                first_state[s] += 1;
            }
            time[s] += seg.duration;
            if seg.completed {
                completed[s] += 1;
            }
            prev = Some(s);
        }
    }
    if let Some(state) = (0..3).find(|&s| completed[s] == 0) {
        return Err(TrajectoryError::MissingState { state: state + 1 });
    }

    let rates = std::array::from_fn(|s| {
        let k = completed[s] as f64;
        let value = k / time[s];
        StateEstimate {
            value,
            std_error: value / k.sqrt(),
        }
    });
    let out_of = |s: usize| switches[s].iter().sum::<u64>();
    let m = trajs.len() as u64;
    Ok(EnsembleEstimate {
        velocities: std::array::from_fn(|s| StateEstimate {
            value: centres[s].0,
            std_error: centres[s].1,
        }),
        rates,
        p12: proportion(switches[0][1], out_of(0)),
        p21: proportion(switches[1][0], out_of(1)),
        p31: proportion(switches[2][0], out_of(2)),
        initial_weights: std::array::from_fn(|s| proportion(first_state[s], m)),
        completed_dwells: completed,
        trajectories: trajs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::InitialCondition;
    use crate::model::{stationary_distribution, theta_a, ModelParams};
    use crate::trajectory::{simulate_ensemble, JumpEvent};

    #[test]
    fn recovers_theta_a() {
        let theta = theta_a();
        let w = stationary_distribution(&theta).unwrap().weights();
        let ic = InitialCondition::standard(w).unwrap();
        let trajs = simulate_ensemble(&theta, &ic, 200.0, 400, 5).unwrap();
        let est = estimate_from_ensemble(&trajs).unwrap();

        let truth = theta.permuted(theta.descending_velocity_order());
        for s in 0..3 {
            assert!((est.velocities[s].value - truth.velocities()[s]).abs() < 1e-9);
            let r = est.rates[s];
            assert!(
                (r.value - truth.rates()[s]).abs() < 4.0 * r.std_error,
                "rate {s}: {r:?}"
            );
        }
        for (e, p) in [est.p12, est.p21, est.p31].iter().zip(truth.probs()) {
            assert!((e.value - p).abs() < 4.0 * e.std_error, "{e:?} vs {p}");
        }
    }

    #[test]
    fn equal_velocities_are_rejected() {
        let theta = ModelParams::new([1.0, 1.0, -1.0], [1.0, 1.0, 1.0], [0.5, 0.5, 0.5]).unwrap();
        let ic = InitialCondition::standard([1.0 / 3.0; 3]).unwrap();
        let trajs = simulate_ensemble(&theta, &ic, 50.0, 20, 1).unwrap();
        assert_eq!(
            estimate_from_ensemble(&trajs),
            Err(TrajectoryError::IndistinguishableStates { distinct: 2 })
        );
        assert_eq!(
            estimate_from_ensemble(&[]),
            Err(TrajectoryError::EmptyEnsemble)
        );
    }

    #[test]
    fn missing_state_is_reported() {
        let e = |t, x, state| JumpEvent { t, x, state };
        // Slopes 1, -1, then a censored segment of slope 0 (the middle label).
        let traj = Trajectory::new(
            vec![e(0.0, 0.0, 0), e(1.0, 1.0, 1), e(2.0, 0.0, 2)],
            3.0,
            0.0,
        )
        .unwrap();
        assert_eq!(
            estimate_from_ensemble(&[traj]),
            Err(TrajectoryError::MissingState { state: 2 })
        );
    }
}
