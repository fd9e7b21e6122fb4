//! Densities n_s(x, t) of the reaction–advection system
//! ∂t n + V ∂x n = Qᵀ n on the periodic domain [−L, L).

mod residual;
mod spectral;
mod upwind;

pub use residual::{io_equation_residual, IO_TERMS};
pub use spectral::{solve_spectral, solve_spectral_advection_only, SpectralModes};
pub use upwind::{grid_refinement_error_bound, refinement_time_step, solve_upwind};

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("CFL condition violated: courant number {courant} > 1")]
    CflViolation { courant: f64 },
    #[error("density became non-finite at t = {time}")]
    NonFiniteDensity { time: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid snapshot times: {0}")]
    InvalidTimes(String),
    #[error("mode count must be a power of two >= 256, got {0}")]
    InvalidModes(usize),
    #[error("profile not resolved: spectral tail is {ratio:e} of the peak")]
    ProfileNotResolved { ratio: f64 },
    #[error("operation needs a field produced by the spectral solver")]
    RequiresSpectralField,
}

/// Uniform periodic grid with an explicit time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub half_width: f64,
    pub dx: f64,
    pub dt: f64,
    pub t_final: f64,
}

impl Grid {
    pub fn new(half_width: f64, dx: f64, dt: f64, t_final: f64) -> Result<Self, DensityError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(half_width) && positive(dx) && positive(dt)) {
            return Err(DensityError::InvalidGrid(format!(
                "L = {half_width}, dx = {dx}, dt = {dt} must all be positive"
            )));
        }
        if !(t_final >= 0.0 && t_final.is_finite()) {
            return Err(DensityError::InvalidGrid(format!("final time {t_final}")));
        }
        let cells = 2.0 * half_width / dx;
        if (cells - cells.round()).abs() > 1e-9 * cells || cells.round() < 3.0 {
            return Err(DensityError::GridMismatch(format!(
                "2L/dx = {cells} is not an integer number of cells"
            )));
        }
        Ok(Grid {
            half_width,
            dx,
            dt,
            t_final,
        })
    }

    pub fn cells(&self) -> usize {
        (2.0 * self.half_width / self.dx).round() as usize
    }

    pub fn nodes(&self) -> Vec<f64> {
        periodic_nodes(self.half_width, self.cells())
    }

    /// dt · max|v| / dx.
    pub fn courant(&self, velocities: &[f64; 3]) -> f64 {
        let vmax = velocities.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.dt * vmax / self.dx
    }
}

pub(crate) fn periodic_nodes(half_width: f64, n: usize) -> Vec<f64> {
    let h = 2.0 * half_width / n as f64;
    (0..n).map(|j| -half_width + j as f64 * h).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "solver", rename_all = "lowercase")]
pub enum DensitySource {
    Upwind { dx: f64, dt: f64 },
    Spectral { n_modes: usize },
}

/// Snapshots of n1, n2, n3 and N on a periodic grid.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub x: Vec<f64>,
    /// Times actually represented by each snapshot.
    pub times: Vec<f64>,
    pub requested_times: Vec<f64>,
    /// `states[k][s][j]` is n_s(x_j, times[k]).
    pub states: Vec<[Vec<f64>; 3]>,
    pub total: Vec<Vec<f64>>,
    pub source: DensitySource,
    pub(crate) spectral: Option<SpectralModes>,
}

impl DensityField {
    pub(crate) fn from_states(
        x: Vec<f64>,
        times: Vec<f64>,
        requested_times: Vec<f64>,
        states: Vec<[Vec<f64>; 3]>,
        source: DensitySource,
        spectral: Option<SpectralModes>,
    ) -> Self {
        let total = states
            .iter()
            .map(|n| (0..x.len()).map(|j| n[0][j] + n[1][j] + n[2][j]).collect())
            .collect();
        DensityField {
            x,
            times,
            requested_times,
            states,
            total,
            source,
            spectral,
        }
    }

    pub fn dx(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    /// ∫ N dx at snapshot `k` (rectangle rule, exact for periodic trigonometric data).
    pub fn mass(&self, k: usize) -> f64 {
        let h = -2.0 * self.x[0] / self.x.len() as f64;
        h * self.total[k].iter().sum::<f64>()
    }

    pub fn spectral_modes(&self) -> Option<&SpectralModes> {
        self.spectral.as_ref()
    }

    /// Re-evaluates a spectral field on other nodes by direct Fourier
    /// summation; t = 0 snapshots are the initial condition evaluated exactly.
    pub fn resample(&self, x: &[f64]) -> Result<DensityField, DensityError> {
        let modes = self
            .spectral
            .as_ref()
            .ok_or(DensityError::RequiresSpectralField)?;
        let states = (0..self.times.len())
            .map(|k| {
                if self.times[k] == 0.0 {
                    let ic = &modes.initial;
                    let f: Vec<f64> = x.iter().map(|&xj| ic.profile_periodic(xj)).collect();
                    ic.weights.map(|a| f.iter().map(|v| a * v).collect())
                } else {
                    modes.evaluate(k, x)
                }
            })
            .collect();
        Ok(DensityField::from_states(
            x.to_vec(),
            self.times.clone(),
            self.requested_times.clone(),
            states,
            self.source,
            self.spectral.clone(),
        ))
    }
}

/// Per-snapshot max |N₁ − N₂|.
pub fn linf_difference(
    field1: &DensityField,
    field2: &DensityField,
) -> Result<Vec<(f64, f64)>, DensityError> {
    if field1.x.len() != field2.x.len() {
        return Err(DensityError::GridMismatch(format!(
            "{} vs {} nodes",
            field1.x.len(),
            field2.x.len()
        )));
    }
    let scale = field1.x[0].abs().max(1.0);
    if field1
        .x
        .iter()
        .zip(&field2.x)
        .any(|(a, b)| (a - b).abs() > 1e-9 * scale)
    {
        return Err(DensityError::GridMismatch("node positions differ".into()));
    }
    if field1.times.len() != field2.times.len()
        || field1
            .times
            .iter()
            .zip(&field2.times)
            .any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(DensityError::GridMismatch("snapshot times differ".into()));
    }
    Ok(field1
        .times
        .iter()
        .zip(field1.total.iter().zip(&field2.total))
        .map(|(&t, (n1, n2))| {
            let d = n1
                .iter()
                .zip(n2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            (t, d)
        })
        .collect())
}

pub fn write_density_csv<W: Write>(out: &mut W, field: &DensityField) -> std::io::Result<()> {
    writeln!(out, "t,x,n1,n2,n3,N")?;
    for (k, &t) in field.times.iter().enumerate() {
        let n = &field.states[k];
        for (j, &x) in field.x.iter().enumerate() {
            writeln!(
                out,
                "{t},{x},{},{},{},{}",
                n[0][j], n[1][j], n[2][j], field.total[k][j]
            )?;
        }
    }
    Ok(())
}

pub fn write_linf_csv<W: Write>(out: &mut W, rows: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(out, "t,linf")?;
    for (t, d) in rows {
        writeln!(out, "{t},{d}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::InitialCondition;
    use crate::model::theta_a;

    #[test]
    fn grid_validation() {
        assert!(Grid::new(40.0, 0.01, 0.00045, 0.5).is_ok());
        assert_eq!(Grid::new(40.0, 0.01, 0.00045, 0.5).unwrap().cells(), 8000);
        assert!(matches!(
            Grid::new(40.0, 0.03, 0.001, 0.5),
            Err(DensityError::GridMismatch(_))
        ));
        assert!(matches!(
            Grid::new(40.0, -0.1, 0.001, 0.5),
            Err(DensityError::InvalidGrid(_))
        ));
        let g = Grid::new(40.0, 0.01, 0.00045, 0.5).unwrap();
        assert!((g.courant(&[20.0, -15.0, 0.0]) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn self_difference_is_zero_and_mismatch_detected() {
        let ic = InitialCondition::standard([0.2, 0.3, 0.5]).unwrap();
        let f = solve_spectral(&theta_a(), &ic, 256, &[0.0, 0.1]).unwrap();
        assert!(linf_difference(&f, &f)
            .unwrap()
            .iter()
            .all(|&(_, d)| d == 0.0));
        let g = solve_spectral(&theta_a(), &ic, 512, &[0.0, 0.1]).unwrap();
        assert!(matches!(
            linf_difference(&f, &g),
            Err(DensityError::GridMismatch(_))
        ));
        let h = solve_spectral(&theta_a(), &ic, 256, &[0.0, 0.2]).unwrap();
        assert!(matches!(
            linf_difference(&f, &h),
            Err(DensityError::GridMismatch(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let ic = InitialCondition::standard([0.2, 0.3, 0.5]).unwrap();
        let f = solve_spectral(&theta_a(), &ic, 256, &[0.0, 0.1]).unwrap();
        let mut buf = Vec::new();
        write_density_csv(&mut buf, &f).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,n1,n2,n3,N\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 256);
    }
}
