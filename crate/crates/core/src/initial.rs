//! Separable initial conditions n_s(x, 0) = a_s · f(x).

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::model::{stationary_distribution, ModelError, ModelParams};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const TABULATED_MASS_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitError {
    #[error("initial weight a{index} = {value} is outside [0, 1]")]
    WeightOutOfRange { index: usize, value: f64 },
    #[error("initial weights sum to {0}, expected 1")]
    WeightsNotNormalised(f64),
    #[error("gaussian width must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("domain half-width must be positive, got {0}")]
    NonPositiveHalfWidth(f64),
    #[error("tabulated profile: {0}")]
    BadTable(String),
    #[error("tabulated profile integrates to {0}, expected 1")]
    MassMismatch(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How the initial state weights are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InitialWeights {
    Explicit([f64; 3]),
    /// Resolved per model to its stationary distribution.
    Stationary,
}

impl InitialWeights {
    pub fn resolve(&self, theta: &ModelParams) -> Result<[f64; 3], InitError> {
        match self {
            InitialWeights::Explicit(a) => {
                validate_weights(a)?;
                Ok(*a)
            }
            InitialWeights::Stationary => Ok(stationary_distribution(theta)?.weights()),
        }
    }
}

pub fn validate_weights(a: &[f64; 3]) -> Result<(), InitError> {
    for (i, &w) in a.iter().enumerate() {
        if !(0.0..=1.0).contains(&w) {
            return Err(InitError::WeightOutOfRange {
                index: i + 1,
                value: w,
            });
        }
    }
    let sum: f64 = a.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(InitError::WeightsNotNormalised(sum));
    }
    Ok(())
}

/// Spatial profile f(x) of the initial total density.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Profile {
    /// f(x) = exp(−x²/ς²) / √(πς²)
    Gaussian { sigma: f64 },
    /// Piecewise-linear interpolant of `(x, f)`, zero outside the table.
    Tabulated { x: Vec<f64>, f: Vec<f64> },
}

impl Profile {
    pub fn gaussian(sigma: f64) -> Result<Self, InitError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(InitError::NonPositiveSigma(sigma));
        }
        Ok(Profile::Gaussian { sigma })
    }

    pub fn tabulated(x: Vec<f64>, f: Vec<f64>) -> Result<Self, InitError> {
        if x.len() != f.len() {
            return Err(InitError::BadTable(format!(
                "{} abscissae but {} values",
                x.len(),
                f.len()
            )));
        }
        if x.len() < 3 {
            return Err(InitError::BadTable("need at least three points".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) || x.iter().any(|v| !v.is_finite()) {
            return Err(InitError::BadTable(
                "abscissae must be finite and strictly increasing".into(),
            ));
        }
        if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(InitError::BadTable(
                "values must be finite and non-negative".into(),
            ));
        }
        let profile = Profile::Tabulated { x, f };
        let mass = profile.table_mass();
        if (mass - 1.0).abs() > TABULATED_MASS_TOL {
            return Err(InitError::MassMismatch(mass));
        }
        Ok(profile)
    }

    fn table_mass(&self) -> f64 {
        match self {
            Profile::Gaussian { .. } => 1.0,
            Profile::Tabulated { x, f } => x
                .windows(2)
                .zip(f.windows(2))
                .map(|(xw, fw)| 0.5 * (xw[1] - xw[0]) * (fw[0] + fw[1]))
                .sum(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Profile::Gaussian { sigma } => {
                (-(x * x) / (sigma * sigma)).exp() / (PI * sigma * sigma).sqrt()
            }
            Profile::Tabulated { x: xs, f } => interpolate(xs, f, x),
        }
    }

    /// f(x) − f(0), computed without cancellation for the Gaussian.
    pub fn deviation_from_origin(&self, x: f64) -> f64 {
        match self {
            Profile::Gaussian { sigma } => {
                (-(x * x) / (sigma * sigma)).exp_m1() / (PI * sigma * sigma).sqrt()
            }
            Profile::Tabulated { .. } => self.eval(x) - self.eval(0.0),
        }
    }

    /// f''(0); exact for the Gaussian, a three-point stencil on the table otherwise.
    pub fn second_derivative_at_origin(&self) -> f64 {
        match self {
            Profile::Gaussian { sigma } => -2.0 / (sigma * sigma * (PI * sigma * sigma).sqrt()),
            Profile::Tabulated { x, f } => {
                let i = x
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
                    .clamp(1, x.len() - 2);
                let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
                2.0 * (f[i - 1] / (h0 * (h0 + h1)) - f[i] / (h0 * h1) + f[i + 1] / (h1 * (h0 + h1)))
            }
        }
    }

    /// Fourth derivative at the origin; a five-point stencil for tables.
    pub fn fourth_derivative_at_origin(&self) -> f64 {
        match self {
            Profile::Gaussian { sigma } => 12.0 / (sigma.powi(4) * (PI * sigma * sigma).sqrt()),
            Profile::Tabulated { x, f } => {
                if x.len() < 5 {
                    return 0.0;
                }
                let i = x
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
                    .clamp(2, x.len() - 3);
                let h = (x[i + 2] - x[i - 2]) / 4.0;
                (f[i - 2] - 4.0 * f[i - 1] + 6.0 * f[i] - 4.0 * f[i + 1] + f[i + 2]) / h.powi(4)
            }
        }
    }

    /// Draws a position with density f.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Profile::Gaussian { sigma } => {
                // variance ς²/2
                Normal::new(0.0, sigma / std::f64::consts::SQRT_2)
                    .expect("sigma validated positive")
                    .sample(rng)
            }
            Profile::Tabulated { x, f } => {
                let masses: Vec<f64> = x
                    .windows(2)
                    .zip(f.windows(2))
                    .map(|(xw, fw)| 0.5 * (xw[1] - xw[0]) * (fw[0] + fw[1]))
                    .collect();
                let total: f64 = masses.iter().sum();
                let mut target = rng.random::<f64>() * total;
                let mut cell = masses.len() - 1;
                for (i, m) in masses.iter().enumerate() {
                    if target < *m {
                        cell = i;
                        break;
                    }
                    target -= m;
                }
                // Invert the CDF of the linear density inside the cell.
                let (x0, h) = (x[cell], x[cell + 1] - x[cell]);
                let (f0, f1) = (f[cell], f[cell + 1]);
                let slope = (f1 - f0) / h;
                let target = target.min(masses[cell]);
                let u = if slope.abs() < 1e-14 * (f0 + f1).max(1e-300) / h {
                    target / f0.max(1e-300)
                } else {
                    (-f0 + (f0 * f0 + 2.0 * slope * target).max(0.0).sqrt()) / slope
                };
                x0 + u.clamp(0.0, h)
            }
        }
    }
}

fn interpolate(xs: &[f64], f: &[f64], x: f64) -> f64 {
    if x < xs[0] || x > xs[xs.len() - 1] {
        return 0.0;
    }
    let i = match xs.partition_point(|&v| v <= x) {
        0 => 0,
        k if k >= xs.len() => xs.len() - 2,
        k => k - 1,
    };
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    f[i] * (1.0 - t) + f[i + 1] * t
}

/// Initial condition on the periodic domain [−L, L).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialCondition {
    pub weights: [f64; 3],
    pub profile: Profile,
    pub half_width: f64,
}

impl InitialCondition {
    pub fn new(weights: [f64; 3], profile: Profile, half_width: f64) -> Result<Self, InitError> {
        validate_weights(&weights)?;
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(InitError::NonPositiveHalfWidth(half_width));
        }
        if let Profile::Tabulated { x, .. } = &profile {
            if x[0] < -half_width - 1e-12 || x[x.len() - 1] > half_width + 1e-12 {
                return Err(InitError::BadTable(
                    "table extends beyond the domain".into(),
                ));
            }
        }
        Ok(Self {
            weights,
            profile,
            half_width,
        })
    }

    /// Gaussian ς = 5 on L = 40 with the given weights.
    pub fn standard(weights: [f64; 3]) -> Result<Self, InitError> {
        Self::new(weights, Profile::gaussian(5.0)?, 40.0)
    }

    pub fn with_weights(&self, weights: [f64; 3]) -> Result<Self, InitError> {
        Self::new(weights, self.profile.clone(), self.half_width)
    }

    /// Profile value with the argument wrapped into [−L, L).
    pub fn profile_periodic(&self, x: f64) -> f64 {
        let width = 2.0 * self.half_width;
        let wrapped = (x + self.half_width).rem_euclid(width) - self.half_width;
        self.profile.eval(wrapped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_normalised_and_curvature() {
        let p = Profile::gaussian(5.0).unwrap();
        let h = 1e-3;
        let mass: f64 = (-40_000..40_000).map(|i| p.eval(i as f64 * h) * h).sum();
        assert!((mass - 1.0).abs() < 1e-10);
        let fd = (p.eval(h) - 2.0 * p.eval(0.0) + p.eval(-h)) / (h * h);
        assert!((fd - p.second_derivative_at_origin()).abs() < 1e-8);
        let x = 1e-4;
        assert!(
            (p.deviation_from_origin(x) - (p.eval(x) - p.eval(0.0))).abs() < 1e-15,
            "deviation should agree with the naive difference"
        );
    }

    #[test]
    fn weights_validation() {
        assert!(validate_weights(&[0.2, 0.3, 0.5]).is_ok());
        assert!(matches!(
            validate_weights(&[0.2, 0.3, 0.6]),
            Err(InitError::WeightsNotNormalised(_))
        ));
        assert!(matches!(
            validate_weights(&[-0.1, 0.6, 0.5]),
            Err(InitError::WeightOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn tabulated_profile_checks() {
        // Triangle of unit mass on [-1, 1].
        let t = Profile::tabulated(vec![-1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert!((t.eval(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(t.eval(2.0), 0.0);
        assert!((t.second_derivative_at_origin() + 2.0).abs() < 1e-12);
        assert!(matches!(
            Profile::tabulated(vec![-1.0, 0.0, 1.0], vec![0.0, 2.0, 0.0]),
            Err(InitError::MassMismatch(_))
        ));
        assert!(Profile::tabulated(vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]).is_err());
        assert!(Profile::tabulated(vec![-1.0, 0.0, 1.0], vec![0.0, -1.0, 0.0]).is_err());
    }

    #[test]
    fn tabulated_sampling_matches_density() {
        let t = Profile::tabulated(vec![-1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let inside = (0..n).filter(|_| t.sample(&mut rng).abs() < 0.5).count() as f64 / n as f64;
        // P(|X| < 1/2) = 3/4 for the unit triangle.
        let sd = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((inside - 0.75).abs() < 4.0 * sd, "{inside}");
    }

    #[test]
    fn periodic_wrap() {
        let ic = InitialCondition::standard([1.0, 0.0, 0.0]).unwrap();
        assert!((ic.profile_periodic(79.0) - ic.profile.eval(-1.0)).abs() < 1e-15);
    }
}
