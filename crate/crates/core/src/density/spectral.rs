use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use super::{periodic_nodes, DensityError, DensityField, DensitySource};
use crate::expm::expm;
use crate::initial::InitialCondition;
use crate::model::{build_transition_matrix, ModelParams};

const MIN_MODES: usize = 256;
const TAIL_TOL: f64 = 1e-12;

/// Fourier amplitudes of every snapshot, kept so that derivatives and
/// off-grid values can be evaluated exactly.
#[derive(Debug, Clone)]
pub struct SpectralModes {
    pub(crate) half_width: f64,
    /// Qᵀ of the propagated system (zero in the advection-only diagnostic).
    pub(crate) qt: Matrix3<f64>,
    pub(crate) velocities: [f64; 3],
    /// Angular wavenumber of FFT bin m.
    pub(crate) wavenumbers: Vec<f64>,
    /// `amplitudes[k][m]` holds the three state amplitudes of bin m at snapshot k.
    pub(crate) amplitudes: Vec<Vec<Vector3<Complex64>>>,
    /// The separable initial field, evaluated exactly for t = 0 snapshots.
    pub(crate) initial: InitialCondition,
}

impl SpectralModes {
    pub fn n_modes(&self) -> usize {
        self.wavenumbers.len()
    }

    /// Mode generator Qᵀ − ik diag(v).
    pub(crate) fn generator(&self, k: f64) -> nalgebra::Matrix3<Complex64> {
        let mut m = self.qt.map(|q| Complex64::new(q, 0.0));
        for s in 0..3 {
            m[(s, s)] -= Complex64::new(0.0, k * self.velocities[s]);
        }
        m
    }

    /// n_s at arbitrary positions for snapshot `k`, by direct summation.
    pub fn evaluate(&self, k: usize, x: &[f64]) -> [Vec<f64>; 3] {
        let n = self.n_modes() as f64;
        let amps = &self.amplitudes[k];
        let values: Vec<[f64; 3]> = x
            .par_iter()
            .map(|&xj| {
                let mut acc = [0.0; 3];
                for (a, &kw) in amps.iter().zip(&self.wavenumbers) {
                    let phase = Complex64::from_polar(1.0, kw * (xj + self.half_width));
                    for s in 0..3 {
                        acc[s] += (a[s] * phase).re;
                    }
                }
                acc.map(|v| v / n)
            })
            .collect();
        std::array::from_fn(|s| values.iter().map(|v| v[s]).collect())
    }
}

fn wavenumbers(n: usize, half_width: f64) -> Vec<f64> {
    (0..n)
        .map(|m| {
            let signed = if m <= n / 2 {
                m as f64
            } else {
                m as f64 - n as f64
            };
            2.0 * PI * signed / (2.0 * half_width)
        })
        .collect()
}

fn propagate(
    qt: Matrix3<f64>,
    velocities: [f64; 3],
    ic: &InitialCondition,
    n_modes: usize,
    times: &[f64],
) -> Result<DensityField, DensityError> {
    if n_modes < MIN_MODES || !n_modes.is_power_of_two() {
        return Err(DensityError::InvalidModes(n_modes));
    }
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(DensityError::InvalidTimes(format!(
            "{t} is not a valid time"
        )));
    }
    let x = periodic_nodes(ic.half_width, n_modes);
    let f0: Vec<f64> = x.iter().map(|&xj| ic.profile_periodic(xj)).collect();

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n_modes);
    let inverse = planner.plan_fft_inverse(n_modes);
    let mut fhat: Vec<Complex64> = f0.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward.process(&mut fhat);

    let peak = fhat.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let nyq = n_modes / 2;
    let tail = fhat[nyq]
        .norm()
        .max(fhat[nyq - 1].norm())
        .max(fhat[nyq + 1].norm());
    if peak > 0.0 && tail > TAIL_TOL * peak {
        return Err(DensityError::ProfileNotResolved { ratio: tail / peak });
    }
    // The Nyquist bin has no symmetric partner; drop it.
    fhat[nyq] = Complex64::new(0.0, 0.0);

    let modes_template = SpectralModes {
        half_width: ic.half_width,
        qt,
        velocities,
        wavenumbers: wavenumbers(n_modes, ic.half_width),
        amplitudes: Vec::new(),
        initial: ic.clone(),
    };
    let a = ic.weights;
    let mut amplitudes = Vec::with_capacity(times.len());
    let mut states = Vec::with_capacity(times.len());
    for &t in times {
        let amps: Vec<Vector3<Complex64>> = modes_template
            .wavenumbers
            .par_iter()
            .zip(fhat.par_iter())
            .map(|(&k, &fm)| {
                let start = Vector3::new(fm * a[0], fm * a[1], fm * a[2]);
                if t == 0.0 {
                    start
                } else {
                    expm(&(modes_template.generator(k) * Complex64::new(t, 0.0))) * start
                }
            })
            .collect();
        let snapshot: [Vec<f64>; 3] = if t == 0.0 {
            // The propagator is the identity; return the sampled initial field.
            std::array::from_fn(|s| f0.iter().map(|v| a[s] * v).collect())
        } else {
            std::array::from_fn(|s| {
                let mut buf: Vec<Complex64> = amps.iter().map(|v| v[s]).collect();
                inverse.process(&mut buf);
                buf.iter().map(|z| z.re / n_modes as f64).collect()
            })
        };
        if snapshot.iter().any(|ns| ns.iter().any(|v| !v.is_finite())) {
            return Err(DensityError::NonFiniteDensity { time: t });
        }
        amplitudes.push(amps);
        states.push(snapshot);
    }
    let modes = SpectralModes {
        amplitudes,
        ..modes_template
    };
    Ok(DensityField::from_states(
        x,
        times.to_vec(),
        times.to_vec(),
        states,
        DensitySource::Spectral { n_modes },
        Some(modes),
    ))
}

/// Exact-in-time Fourier solution: each mode evolves by
/// exp(t (Qᵀ − ik diag(v))).
pub fn solve_spectral(
    theta: &ModelParams,
    ic: &InitialCondition,
    n_modes: usize,
    times: &[f64],
) -> Result<DensityField, DensityError> {
    let qt = build_transition_matrix(theta).matrix().transpose();
    propagate(qt, theta.velocities(), ic, n_modes, times)
}

/// Diagnostic: the same solver with Q = 0 (pure advection).
pub fn solve_spectral_advection_only(
    theta: &ModelParams,
    ic: &InitialCondition,
    n_modes: usize,
    times: &[f64],
) -> Result<DensityField, DensityError> {
    propagate(Matrix3::zeros(), theta.velocities(), ic, n_modes, times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::Profile;
    use crate::model::{stationary_distribution, theta_a};

    #[test]
    fn time_zero_reproduces_initial_field() {
        let ic = InitialCondition::standard([0.2, 0.3, 0.5]).unwrap();
        let f = solve_spectral(&theta_a(), &ic, 256, &[0.0]).unwrap();
        for (j, &x) in f.x.iter().enumerate() {
            for s in 0..3 {
                assert_eq!(f.states[0][s][j], ic.weights[s] * ic.profile_periodic(x));
            }
        }
    }

    #[test]
    fn pure_advection_translates_profile() {
        let ic = InitialCondition::standard([1.0, 0.0, 0.0]).unwrap();
        let theta = theta_a();
        let f = solve_spectral_advection_only(&theta, &ic, 256, &[0.3, 1.7]).unwrap();
        for (k, &t) in f.times.iter().enumerate() {
            for (j, &x) in f.x.iter().enumerate() {
                let exact = ic.profile_periodic(x - 20.0 * t);
                assert!((f.total[k][j] - exact).abs() < 1e-12, "t={t} x={x}");
            }
        }
    }

    #[test]
    fn mass_conserved() {
        let theta = theta_a();
        let ic =
            InitialCondition::standard(stationary_distribution(&theta).unwrap().weights()).unwrap();
        let f = solve_spectral(&theta, &ic, 256, &[0.0, 0.5, 5.0]).unwrap();
        for k in 1..3 {
            assert!((f.mass(k) - f.mass(0)).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_matches_grid_values() {
        let ic = InitialCondition::standard([0.2, 0.3, 0.5]).unwrap();
        let f = solve_spectral(&theta_a(), &ic, 256, &[0.4]).unwrap();
        let g = f.resample(&f.x).unwrap();
        for j in 0..f.x.len() {
            assert!((f.total[0][j] - g.total[0][j]).abs() < 1e-14);
        }
    }

    #[test]
    fn argument_checks() {
        let ic = InitialCondition::standard([0.2, 0.3, 0.5]).unwrap();
        assert_eq!(
            solve_spectral(&theta_a(), &ic, 128, &[0.1]).unwrap_err(),
            DensityError::InvalidModes(128)
        );
        assert_eq!(
            solve_spectral(&theta_a(), &ic, 300, &[0.1]).unwrap_err(),
            DensityError::InvalidModes(300)
        );
        let narrow =
            InitialCondition::new([0.2, 0.3, 0.5], Profile::gaussian(0.05).unwrap(), 40.0).unwrap();
        assert!(matches!(
            solve_spectral(&theta_a(), &narrow, 256, &[0.1]),
            Err(DensityError::ProfileNotResolved { .. })
        ));
    }
}
