use serde::Serialize;

use super::{Trajectory, TrajectoryError};

/// Completed dwell times per state and the observed switch counts.
/// The final, censored segment of a trajectory is not included.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DwellSamples {
    pub dwells: [Vec<f64>; 3],
    /// `switches[s][u]` counts observed jumps s → u.
    pub switches: [[u64; 3]; 3],
}

impl DwellSamples {
    pub fn merge(&mut self, other: &DwellSamples) {
        for s in 0..3 {
            self.dwells[s].extend_from_slice(&other.dwells[s]);
            for u in 0..3 {
                self.switches[s][u] += other.switches[s][u];
            }
        }
    }

    pub fn total(&self) -> usize {
        self.dwells.iter().map(Vec::len).sum()
    }
}

pub fn extract_dwell_samples(traj: &Trajectory) -> Result<DwellSamples, TrajectoryError> {
    let events = traj.events();
    if events.len() < 2 {
        return Err(TrajectoryError::NoCompletedDwells);
    }
    let mut out = DwellSamples::default();
    for w in events.windows(2) {
        out.dwells[w[0].state].push(w[1].t - w[0].t);
        out.switches[w[0].state][w[1].state] += 1;
    }
    Ok(out)
}
