//! Identifiable parameter combinations and parameter recovery.

mod equivalence;
mod taylor;

pub use equivalence::{
    certify_equivalence, find_equivalent_parameters, find_equivalent_parameters_with,
    CertifyOptions, EquivalenceClass, EquivalenceMember, EquivalenceReport, Verdict,
};
pub use taylor::{
    f_matrix_curvature_only_term, f_matrix_determinant, f_matrix_leading_term, taylor_density,
};

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::density::DensityError;
use crate::initial::{validate_weights, InitError};
use crate::model::{
    build_transition_matrix, classify_velocity_degeneracy, stationary_weights_unnormalised,
    ModelParams, VelocityDegeneracy,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentifiabilityError {
    #[error("operation requires {expected} velocities, model has {found:?}")]
    WrongDegeneracy {
        expected: &'static str,
        found: VelocityDegeneracy,
    },
    #[error("cubic for (c1, c2, c3) has non-real roots (discriminant {discriminant:e})")]
    ComplexRoots { discriminant: f64 },
    #[error("rate system is singular: velocities are not pairwise distinct")]
    SingularSystem,
    #[error("equivalence search could not certify completeness: {0}")]
    SolverExhausted(String),
    #[error(transparent)]
    Weights(#[from] InitError),
    #[error(transparent)]
    Density(#[from] DensityError),
}

/// Units of c1..c15 in terms of velocity [v] and rate [λ].
pub const COEFFICIENT_UNITS: [&str; 15] = [
    "v",
    "v^2",
    "v^3",
    "lambda",
    "lambda*v",
    "lambda*v^2",
    "lambda^2",
    "lambda^2*v",
    "v",
    "1",
    "1",
    "1",
    "lambda",
    "lambda",
    "lambda",
];

/// c1..c15 for a model with pairwise distinct velocities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefficientSet {
    /// `c[i]` is c_{i+1}.
    pub c: [f64; 15],
    pub degeneracy: VelocityDegeneracy,
}

impl CoefficientSet {
    /// c1..c8, the input–output equation coefficients.
    pub fn io(&self) -> [f64; 8] {
        std::array::from_fn(|i| self.c[i])
    }

    pub fn max_deviation(&self, other: &CoefficientSet) -> f64 {
        self.c
            .iter()
            .zip(&other.c)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// JSON shape of a coefficient report.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientReport {
    pub c: [f64; 15],
    pub degeneracy: VelocityDegeneracy,
    pub units: [&'static str; 15],
}

impl From<&CoefficientSet> for CoefficientReport {
    fn from(set: &CoefficientSet) -> Self {
        CoefficientReport {
            c: set.c,
            degeneracy: set.degeneracy,
            units: COEFFICIENT_UNITS,
        }
    }
}

/// c1..c8 for any θ; valid as input–output coefficients for every velocity class.
pub fn io_coefficients(theta: &ModelParams) -> [f64; 8] {
    let [v1, v2, v3] = theta.velocities();
    let [l1, l2, l3] = theta.rates();
    let g = stationary_weights_unnormalised(theta);
    [
        v1 + v2 + v3,
        v1 * v2 + v2 * v3 + v1 * v3,
        v1 * v2 * v3,
        l1 + l2 + l3,
        l1 * (v2 + v3) + l2 * (v1 + v3) + l3 * (v1 + v2),
        l1 * v2 * v3 + l2 * v1 * v3 + l3 * v1 * v2,
        g[0] + g[1] + g[2],
        v1 * g[0] + v2 * g[1] + v3 * g[2],
    ]
}

/// c1..c15 without the velocity-class check.
pub(crate) fn coefficient_values(theta: &ModelParams, a: &[f64; 3]) -> [f64; 15] {
    let io = io_coefficients(theta);
    let v = theta.velocities();
    let [l1, l2, l3] = theta.rates();
    let [p12, p21, p31] = theta.probs();
    let c13 = -l1 * a[0] + l2 * p21 * a[1] + l3 * p31 * a[2];
    let c14 = l1 * p12 * a[0] - l2 * a[1] + l3 * (1.0 - p31) * a[2];
    let c15 = l1 * (1.0 - p12) * a[0] + l2 * (1.0 - p21) * a[1] - l3 * a[2];
    let mut c = [0.0; 15];
    c[..8].copy_from_slice(&io);
    c[8] = a[0] * v[0] + a[1] * v[1] + a[2] * v[2];
    c[9] = a[0];
    c[10] = a[1];
    c[11] = a[2];
    c[12] = c13;
    c[13] = c14;
    c[14] = c15;
    c
}

pub fn compute_coefficients(
    theta: &ModelParams,
    a: &[f64; 3],
) -> Result<CoefficientSet, IdentifiabilityError> {
    validate_weights(a)?;
    let degeneracy = classify_velocity_degeneracy(theta, 0.0).expect("zero tolerance is valid");
    if degeneracy != VelocityDegeneracy::AllDistinct {
        return Err(IdentifiabilityError::WrongDegeneracy {
            expected: "pairwise distinct",
            found: degeneracy,
        });
    }
    Ok(CoefficientSet {
        c: coefficient_values(theta, a),
        degeneracy,
    })
}

/// Coefficients for v2 = v3 = v ≠ v1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EqualVelocityCoefficients {
    /// `chat[i]` is ĉ_{i+1}, i = 0..13.
    pub chat: [f64; 13],
    /// k1..k4.
    pub k: [f64; 4],
}

pub fn compute_equal_velocity_coefficients(
    theta: &ModelParams,
    a: &[f64; 3],
) -> Result<EqualVelocityCoefficients, IdentifiabilityError> {
    validate_weights(a)?;
    let degeneracy = classify_velocity_degeneracy(theta, 0.0).expect("zero tolerance is valid");
    if degeneracy != (VelocityDegeneracy::TwoEqual { distinct: 0 }) {
        return Err(IdentifiabilityError::WrongDegeneracy {
            expected: "v2 = v3 != v1",
            found: degeneracy,
        });
    }
    let [v1, v, _] = theta.velocities();
    let [l1, l2, l3] = theta.rates();
    let [p12, p21, p31] = theta.probs();
    let g1 = l2 * l3 * (1.0 - (1.0 - p21) * (1.0 - p31));
    let g23 = l1 * (l3 * (1.0 - (1.0 - p12) * p31) + l2 * (1.0 - p12 * p21));
    let c12 = -l1 * a[0] + l2 * p21 * a[1] + l3 * p31 * a[2];
    Ok(EqualVelocityCoefficients {
        chat: [
            v1 + 2.0 * v,
            2.0 * v1 * v + v * v,
            v1 * v * v,
            l1 + (l2 + l3),
            2.0 * l1 * v + (l2 + l3) * (v1 + v),
            l1 * v * v + (l2 + l3) * v1 * v,
            g1 + g23,
            g1 * v1 + g23 * v,
            a[0] * (v1 - v) + v,
            a[0],
            a[1] + a[2],
            c12,
            -c12,
        ],
        k: [
            l2 + l3,
            l2 * l3 * (p21 + p31 - p21 * p31),
            l2 * p12 * p21 + l3 * p31 * (1.0 - p12),
            a[1] * l2 * p21 + l3 * p31 * (1.0 - a[0] - a[1]),
        ],
    })
}

/// Real roots of z³ − c1 z² + c2 z − c3, sorted descending.
pub fn recover_velocities(c1: f64, c2: f64, c3: f64) -> Result<[f64; 3], IdentifiabilityError> {
    let scale = c1.abs().max(c2.abs().sqrt()).max(c3.abs().cbrt());
    if scale == 0.0 {
        return Ok([0.0; 3]);
    }
    // Work with the monic cubic in y = z / scale, then shift y = w + b/3.
    let (b, c, d) = (
        c1 / scale,
        c2 / (scale * scale),
        c3 / (scale * scale * scale),
    );
    let p = c - b * b / 3.0;
    let q = -2.0 * b * b * b / 27.0 + b * c / 3.0 - d;
    // w³ + p w + q = 0
    let disc = -(4.0 * p * p * p + 27.0 * q * q);
    if disc < -1e-10 {
        return Err(IdentifiabilityError::ComplexRoots {
            discriminant: disc * scale.powi(6),
        });
    }
    let mut w = if p >= -1e-14 {
        // Triple root (p > 0 is excluded by the discriminant test up to rounding).
        [(-q).cbrt(); 3]
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        [0, 1, 2].map(|k| m * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
    };
    let f = |y: f64| ((y - b) * y + c) * y - d;
    let df = |y: f64| (3.0 * y - 2.0 * b) * y + c;
    let mut roots = w.map(|wi| wi + b / 3.0);
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let slope = df(*r);
            if slope.abs() < 1e-6 {
                break;
            }
            let next = *r - f(*r) / slope;
            if f(next).abs() < f(*r).abs() {
                *r = next;
            } else {
                break;
            }
        }
    }
    w = roots.map(|y| y * scale);
    w.sort_by(|x, y| y.total_cmp(x));
    Ok(w)
}

/// Solves c4..c6 for the rates given pairwise distinct velocities.
pub fn recover_rates(
    c4: f64,
    c5: f64,
    c6: f64,
    v: [f64; 3],
) -> Result<[f64; 3], IdentifiabilityError> {
    let [v1, v2, v3] = v;
    let scale = v
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    let det = (v1 - v2) * (v2 - v3) * (v1 - v3);
    if det.abs() <= 1e-12 * scale.powi(3) {
        return Err(IdentifiabilityError::SingularSystem);
    }
    let m = Matrix3::new(
        1.0,
        1.0,
        1.0,
        v2 + v3,
        v1 + v3,
        v1 + v2,
        v2 * v3,
        v1 * v3,
        v1 * v2,
    );
    let sol = m
        .lu()
        .solve(&Vector3::new(c4, c5, c6))
        .ok_or(IdentifiabilityError::SingularSystem)?;
    Ok([sol[0], sol[1], sol[2]])
}

/// Qᵀa, the first-order Taylor correction to the state weights.
pub(crate) fn weight_drift(theta: &ModelParams, a: &[f64; 3]) -> [f64; 3] {
    build_transition_matrix(theta).apply_transpose(a)
}
