use rayon::prelude::*;

use super::{linf_difference, solve_spectral, DensityError, DensityField, DensitySource, Grid};
use crate::initial::InitialCondition;
use crate::model::{build_transition_matrix, ModelParams};

/// Courant number used when a time step is derived from dx.
const REFINEMENT_COURANT: f64 = 0.9;
const REFERENCE_MODES: usize = 512;

fn snapshot_steps(times: &[f64], grid: &Grid) -> Result<Vec<usize>, DensityError> {
    let slack = 0.5 * grid.dt;
    times
        .iter()
        .map(|&t| {
            if !(t >= 0.0 && t <= grid.t_final + slack) {
                return Err(DensityError::InvalidTimes(format!(
                    "{t} outside [0, {}]",
                    grid.t_final
                )));
            }
            Ok((t / grid.dt).round() as usize)
        })
        .collect()
}

/// First-order upwind advection with explicit Euler reaction coupling.
///
/// Each snapshot is taken at the step nearest the requested time; the
/// represented time is recorded in [`DensityField::times`].
pub fn solve_upwind(
    theta: &ModelParams,
    ic: &InitialCondition,
    grid: &Grid,
    times: &[f64],
) -> Result<DensityField, DensityError> {
    if (grid.half_width - ic.half_width).abs() > 1e-12 * ic.half_width {
        return Err(DensityError::GridMismatch(format!(
            "grid half-width {} but initial condition half-width {}",
            grid.half_width, ic.half_width
        )));
    }
    let v = theta.velocities();
    let courant = grid.courant(&v);
    if courant > 1.0 + 1e-12 {
        return Err(DensityError::CflViolation { courant });
    }
    let requested: Vec<f64> = if times.is_empty() {
        vec![grid.t_final]
    } else {
        times.to_vec()
    };
    let steps = snapshot_steps(&requested, grid)?;
    let last = steps.iter().copied().max().unwrap_or(0);

    let x = grid.nodes();
    let m = x.len();
    let qt = build_transition_matrix(theta).matrix().transpose();
    let f: Vec<f64> = x.iter().map(|&xj| ic.profile_periodic(xj)).collect();
    let mut n: [Vec<f64>; 3] =
        std::array::from_fn(|s| f.iter().map(|fj| ic.weights[s] * fj).collect());
    let mut next = n.clone();
    let c = v.map(|vs| vs * grid.dt / grid.dx);

    let mut snaps: Vec<Option<[Vec<f64>; 3]>> = vec![None; steps.len()];
    let mut record = |step: usize, n: &[Vec<f64>; 3]| -> Result<(), DensityError> {
        if n.iter().any(|ns| ns.iter().any(|v| !v.is_finite())) {
            return Err(DensityError::NonFiniteDensity {
                time: step as f64 * grid.dt,
            });
        }
        for (slot, &k) in snaps.iter_mut().zip(&steps) {
            if k == step {
                *slot = Some(n.clone());
            }
        }
        Ok(())
    };
    record(0, &n)?;
    for step in 1..=last {
        next.par_iter_mut().enumerate().for_each(|(s, out)| {
            let cs = c[s];
            let ns = &n[s];
            let q = [
                qt[(s, 0)] * grid.dt,
                qt[(s, 1)] * grid.dt,
                qt[(s, 2)] * grid.dt,
            ];
            for j in 0..m {
                let flux = if cs >= 0.0 {
                    let left = if j == 0 { ns[m - 1] } else { ns[j - 1] };
                    cs * (ns[j] - left)
                } else {
                    let right = if j + 1 == m { ns[0] } else { ns[j + 1] };
                    cs * (right - ns[j])
                };
                out[j] = ns[j] - flux + q[0] * n[0][j] + q[1] * n[1][j] + q[2] * n[2][j];
            }
        });
        std::mem::swap(&mut n, &mut next);
        if step == last || steps.contains(&step) {
            record(step, &n)?;
        }
    }
    let states = snaps
        .into_iter()
        .map(|s| s.expect("every snapshot step visited"))
        .collect();
    Ok(DensityField::from_states(
        x,
        steps.iter().map(|&k| k as f64 * grid.dt).collect(),
        requested,
        states,
        DensitySource::Upwind {
            dx: grid.dx,
            dt: grid.dt,
        },
        None,
    ))
}

/// dt = 0.9 dx / max|v|, further limited so that dt · max λ ≤ 0.9.
pub fn refinement_time_step(theta: &ModelParams, dx: f64) -> f64 {
    let vmax = theta
        .velocities()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let lmax = theta.rates().iter().fold(0.0f64, |m, &l| m.max(l));
    let advective = if vmax > 0.0 {
        REFINEMENT_COURANT * dx / vmax
    } else {
        f64::INFINITY
    };
    advective.min(REFINEMENT_COURANT / lmax)
}

/// For each dx: L∞ distance at `t_final` between the upwind solution and
/// the spectral reference evaluated at the same nodes and step time.
pub fn grid_refinement_error_bound(
    theta: &ModelParams,
    ic: &InitialCondition,
    dx_list: &[f64],
    t_final: f64,
) -> Result<Vec<(f64, f64)>, DensityError> {
    if dx_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(DensityError::InvalidGrid(
            "dx list must be strictly descending".into(),
        ));
    }
    dx_list
        .iter()
        .map(|&dx| {
            let grid = Grid::new(ic.half_width, dx, refinement_time_step(theta, dx), t_final)?;
            let up = solve_upwind(theta, ic, &grid, &[t_final])?;
            let reference =
                solve_spectral(theta, ic, REFERENCE_MODES, &up.times)?.resample(&up.x)?;
            let d = linf_difference(&up, &reference)?;
            Ok((dx, d[0].1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{stationary_distribution, theta_a};

    fn stationary_ic(theta: &ModelParams) -> InitialCondition {
        InitialCondition::standard(stationary_distribution(theta).unwrap().weights()).unwrap()
    }

    #[test]
    fn zero_velocities_keep_total_fixed() {
        let theta = ModelParams::new([0.0; 3], [1.0, 0.5, 0.3], [0.2, 0.3, 0.7]).unwrap();
        let ic = InitialCondition::standard([1.0, 0.0, 0.0]).unwrap();
        let grid = Grid::new(40.0, 0.1, 0.01, 2.0).unwrap();
        let field = solve_upwind(&theta, &ic, &grid, &[0.0, 1.0, 2.0]).unwrap();
        for k in 0..3 {
            for (j, &x) in field.x.iter().enumerate() {
                assert!((field.total[k][j] - ic.profile.eval(x)).abs() < 1e-15);
            }
        }
        // Reactions moved mass out of state 1.
        assert!(field.states[2][1].iter().any(|&v| v > 1e-3));
    }

    #[test]
    fn mass_and_positivity() {
        let theta = theta_a();
        let ic = stationary_ic(&theta);
        let grid = Grid::new(40.0, 0.04, 0.0018, 0.5).unwrap();
        let field = solve_upwind(&theta, &ic, &grid, &[0.0, 0.25, 0.5]).unwrap();
        let m0 = field.mass(0);
        for k in 0..3 {
            assert!(((field.mass(k) - m0) / m0).abs() < 1e-12);
            assert!(field.states[k]
                .iter()
                .all(|ns| ns.iter().all(|&v| v >= 0.0)));
        }
        assert!((field.times[2] - 0.5).abs() <= 0.5 * grid.dt);
    }

    #[test]
    fn rejects_cfl_violation_and_bad_times() {
        let theta = theta_a();
        let ic = stationary_ic(&theta);
        let grid = Grid::new(40.0, 0.01, 0.001, 0.5).unwrap();
        assert!(matches!(
            solve_upwind(&theta, &ic, &grid, &[0.5]),
            Err(DensityError::CflViolation { .. })
        ));
        let grid = Grid::new(40.0, 0.1, 0.001, 0.5).unwrap();
        assert!(matches!(
            solve_upwind(&theta, &ic, &grid, &[0.9]),
            Err(DensityError::InvalidTimes(_))
        ));
        let grid = Grid::new(20.0, 0.1, 0.001, 0.5).unwrap();
        assert!(matches!(
            solve_upwind(&theta, &ic, &grid, &[0.1]),
            Err(DensityError::GridMismatch(_))
        ));
    }

    #[test]
    fn blow_up_is_reported() {
        // Reaction step far beyond stability: dt · λ = 500.
        let theta = ModelParams::new([0.0; 3], [1000.0, 500.0, 300.0], [0.2, 0.3, 0.7]).unwrap();
        let ic = InitialCondition::standard([1.0, 0.0, 0.0]).unwrap();
        let grid = Grid::new(40.0, 0.1, 0.5, 1000.0).unwrap();
        assert!(matches!(
            solve_upwind(&theta, &ic, &grid, &[1000.0]),
            Err(DensityError::NonFiniteDensity { .. })
        ));
    }

    #[test]
    fn refinement_step_matches_reference_grid() {
        assert!((refinement_time_step(&theta_a(), 0.01) - 0.00045).abs() < 1e-15);
        let bounds =
            grid_refinement_error_bound(&theta_a(), &stationary_ic(&theta_a()), &[0.08, 0.04], 0.5)
                .unwrap();
        assert!(bounds[1].1 < bounds[0].1);
        assert!(matches!(
            grid_refinement_error_bound(&theta_a(), &stationary_ic(&theta_a()), &[0.03], 0.5),
            Err(DensityError::GridMismatch(_))
        ));
    }
}
