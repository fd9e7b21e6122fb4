//! Dwell statistics when states 2 and 3 share a velocity and only the
//! excursions away from state 1 are observable.
//!
//! An excursion enters {2, 3} from state 1, alternates between 2 and 3 and
//! ends on the return to 1. The closed-form law
//!
//! ```text
//! S(t) = (A e^{-λ2 t} + B e^{-λ3 t} + C e^{-(λ2+λ3) t}) / (1 - D e^{-(λ2+λ3) t})
//! ```
//!
//! with A = p12 p21, B = p13 p31, C = p12 p23 p31 + p13 p32 p21, D = p23 p32
//! is the survival function of the shortest sub-dwell within an excursion.
//! The total excursion length is phase-type, see [`merged_total_time_survival`].

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use super::{next_state, trajectory_rng, TrajectoryError};
use crate::expm::expm;
use crate::model::{classify_velocity_degeneracy, ModelParams, VelocityDegeneracy};
use crate::solve::{levenberg_marquardt, quadratic_roots, LmOptions, RealRoots};

const LAW_SUM_TOL: f64 = 1e-9;
const RECOVERY_TOL: f64 = 1e-9;
const MIN_FIT_SAMPLES: usize = 1000;
const FIT_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MergedDwellLaw {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl MergedDwellLaw {
    /// Coefficients (A, B, C, D) of a probability triple (p12, p21, p31).
    pub fn coefficients(p: [f64; 3]) -> [f64; 4] {
        let [p12, p21, p31] = p;
        [
            p12 * p21,
            (1.0 - p12) * p31,
            p12 * (1.0 - p21) * p31 + (1.0 - p12) * (1.0 - p31) * p21,
            (1.0 - p21) * (1.0 - p31),
        ]
    }

    pub fn survival(&self, t: f64) -> f64 {
        let e2 = (-self.lambda2 * t).exp();
        let e3 = (-self.lambda3 * t).exp();
        let e23 = e2 * e3;
        (self.a * e2 + self.b * e3 + self.c * e23) / (1.0 - self.d * e23)
    }

    pub fn is_consistent(&self) -> bool {
        let parts = [self.a, self.b, self.c, self.d];
        parts.iter().all(|&x| (0.0..=1.0).contains(&x))
            && (parts.iter().sum::<f64>() - 1.0).abs() <= LAW_SUM_TOL
            && self.d < 1.0
            && self.lambda2 > 0.0
            && self.lambda3 > 0.0
    }
}

/// The merged-dwell law of θ; requires v2 = v3 ≠ v1 exactly.
pub fn merged_dwell_law(theta: &ModelParams) -> Result<MergedDwellLaw, TrajectoryError> {
    match classify_velocity_degeneracy(theta, 0.0) {
        Ok(VelocityDegeneracy::TwoEqual { distinct: 0 }) => {}
        _ => return Err(TrajectoryError::WrongDegeneracy),
    }
    let [a, b, c, d] = MergedDwellLaw::coefficients(theta.probs());
    let [_, lambda2, lambda3] = theta.rates();
    Ok(MergedDwellLaw {
        a,
        b,
        c,
        d,
        lambda2,
        lambda3,
    })
}

pub fn merged_dwell_survival(law: &MergedDwellLaw, t: f64) -> f64 {
    law.survival(t)
}

/// Exact survival of the total time spent in {2, 3} per excursion:
/// α exp(tT) 1 with α = (p12, p13) and T the sub-generator on {2, 3}.
pub fn merged_total_time_survival(theta: &ModelParams, t: f64) -> f64 {
    let [_, l2, l3] = theta.rates();
    let [p12, p21, p31] = theta.probs();
    let sub = Matrix2::new(-l2, l2 * (1.0 - p21), l3 * (1.0 - p31), -l3);
    let alpha = Vector2::new(p12, 1.0 - p12);
    (alpha.transpose() * expm(&(sub * t)) * Vector2::new(1.0, 1.0))[(0, 0)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MergedExcursion {
    /// Total time between leaving state 1 and returning to it.
    pub total: f64,
    /// Shortest single dwell in state 2 or 3 during the excursion.
    pub shortest: f64,
    pub sub_dwells: usize,
}

/// Simulates `n` independent excursions out of state 1.
pub fn sample_merged_excursions(theta: &ModelParams, n: usize, seed: u64) -> Vec<MergedExcursion> {
    let mut rng = trajectory_rng(seed, 0);
    let jump = theta.jump_probabilities();
    let dwell = theta
        .rates()
        .map(|l| Exp::new(l).expect("rates validated positive"));
    (0..n)
        .map(|_| {
            let mut state = next_state(&mut rng, &jump, 0);
            let mut total = 0.0;
            let mut shortest = f64::INFINITY;
            let mut sub_dwells = 0;
            while state != 0 {
                let tau: f64 = dwell[state].sample(&mut rng);
                total += tau;
                shortest = shortest.min(tau);
                sub_dwells += 1;
                state = next_state(&mut rng, &jump, state);
            }
            MergedExcursion {
                total,
                shortest,
                sub_dwells,
            }
        })
        .collect()
}

fn residuals(p: [f64; 3], target: [f64; 4]) -> f64 {
    MergedDwellLaw::coefficients(p)
        .iter()
        .zip(target)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Newton steps on (A, B, D) = target starting from `p`.
fn polish(mut p: [f64; 3], target: [f64; 4]) -> [f64; 3] {
    for _ in 0..3 {
        let [p12, p21, p31] = p;
        let [a, b, _, d] = MergedDwellLaw::coefficients(p);
        let jac = Matrix3::new(
            p21,
            p12,
            0.0,
            -p31,
            0.0,
            1.0 - p12,
            0.0,
            -(1.0 - p31),
            -(1.0 - p21),
        );
        let rhs = Vector3::new(target[0] - a, target[1] - b, target[3] - d);
        let Some(step) = jac.lu().solve(&rhs) else {
            break;
        };
        let next = [p12 + step[0], p21 + step[1], p31 + step[2]].map(|x| x.clamp(0.0, 1.0));
        if residuals(next, target) < residuals(p, target) {
            p = next;
        } else {
            break;
        }
    }
    p
}

/// Triple for a given p21, choosing the best-conditioned back-substitution.
fn triple_for(p21: f64, target: [f64; 4]) -> Option<[f64; 3]> {
    let [a, b, _, d] = target;
    let mut candidates = Vec::new();
    let p31_from_d = 1.0 - d / (1.0 - p21);
    let p12_from_a = a / p21;
    candidates.push([p12_from_a, p21, p31_from_d]);
    candidates.push([p12_from_a, p21, b / (1.0 - p12_from_a)]);
    candidates.push([1.0 - b / p31_from_d, p21, p31_from_d]);
    candidates
        .into_iter()
        .filter(|p| {
            p.iter()
                .all(|x| x.is_finite() && (-RECOVERY_TOL..=1.0 + RECOVERY_TOL).contains(x))
        })
        .map(|p| p.map(|x| x.clamp(0.0, 1.0)))
        .min_by(|x, y| residuals(*x, target).total_cmp(&residuals(*y, target)))
}

/// All triples (p12, p21, p31) in [0,1]³ reproducing (A, B, C, D).
///
/// Eliminating p12 = A / p21 and p31 = 1 − D / (1 − p21) leaves a quadratic
/// in p21, so there are at most two solutions. Both are returned when both
/// are admissible: such pairs share their stationary distribution, so the
/// merged law alone cannot separate them. C is checked as a consistency
/// residual. Sorted by ascending p21.
pub fn recover_probs_from_merged_law(
    a: f64,
    b: f64,
    c: f64,
    d: f64,
) -> Result<Vec<[f64; 3]>, TrajectoryError> {
    let target = [a, b, c, d];
    if target
        .iter()
        .any(|x| !x.is_finite() || *x < -RECOVERY_TOL || *x > 1.0 + RECOVERY_TOL)
    {
        return Err(TrajectoryError::NoSolutionInBox);
    }
    if a.abs() <= RECOVERY_TOL && b.abs() <= RECOVERY_TOL {
        return Err(TrajectoryError::CircularNetwork);
    }
    let RealRoots::Finite(roots) = quadratic_roots(b - 1.0, 1.0 - d + a - b, -a * (1.0 - d), 1e-14)
    else {
        return Err(TrajectoryError::NoSolutionInBox);
    };

    let mut found: Vec<[f64; 3]> = Vec::new();
    let mut worst_c = 0.0f64;
    for p21 in roots {
        if !(-RECOVERY_TOL..=1.0 + RECOVERY_TOL).contains(&p21) {
            continue;
        }
        let Some(p) = triple_for(p21.clamp(0.0, 1.0), target) else {
            continue;
        };
        let p = polish(p, target);
        let coef = MergedDwellLaw::coefficients(p);
        let abd = [0, 1, 3]
            .iter()
            .map(|&i| (coef[i] - target[i]).abs())
            .fold(0.0, f64::max);
        if abd > RECOVERY_TOL {
            continue;
        }
        let c_res = (coef[2] - c).abs();
        if c_res > RECOVERY_TOL {
            worst_c = worst_c.max(c_res);
            continue;
        }
        if !found
            .iter()
            .any(|q| q.iter().zip(&p).all(|(x, y)| (x - y).abs() <= RECOVERY_TOL))
        {
            found.push(p);
        }
    }
    if found.is_empty() {
        return Err(if worst_c > 0.0 {
            TrajectoryError::InconsistentC { residual: worst_c }
        } else {
            TrajectoryError::NoSolutionInBox
        });
    }
    found.sort_by(|x, y| x[1].total_cmp(&y[1]));
    Ok(found)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MergedDwellFit {
    /// Fitted law, labelled so that λ2 ≤ λ3.
    pub law: MergedDwellLaw,
    /// Root-mean-square gap between fitted and empirical survival.
    pub rms_residual: f64,
    pub samples: usize,
}

fn law_from(x: &[f64]) -> MergedDwellLaw {
    // Softmax over (A, B, D) logits with C's logit fixed at 0.
    let m = x[2].max(x[3]).max(x[4]).max(0.0);
    let e = [
        (x[2] - m).exp(),
        (x[3] - m).exp(),
        (-m).exp(),
        (x[4] - m).exp(),
    ];
    let z: f64 = e.iter().sum();
    MergedDwellLaw {
        a: e[0] / z,
        b: e[1] / z,
        c: e[2] / z,
        d: e[3] / z,
        lambda2: x[0].exp(),
        lambda3: x[1].exp(),
    }
}

/// Least-squares fit of the closed-form law to the empirical survival
/// function of `samples` on a log-spaced time grid. Starts from every pair
/// λ2 ≤ λ3 drawn from {1/4, 1/2, 1, 2, 4} / mean with equal weights.
pub fn fit_merged_dwell_survival(samples: &[f64]) -> Result<MergedDwellFit, TrajectoryError> {
    let mut sorted: Vec<f64> = samples
        .iter()
        .copied()
        .filter(|x| x.is_finite() && *x >= 0.0)
        .collect();
    if sorted.len() < MIN_FIT_SAMPLES {
        return Err(TrajectoryError::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            got: sorted.len(),
        });
    }
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Log-spaced grid between the 0.1% and 99.9% sample quantiles.
    let lo = sorted[n / 1000].max(f64::MIN_POSITIVE);
    let hi = sorted[n - 1 - n / 1000].max(lo * 1.0001);
    let points: Vec<(f64, f64)> = (0..FIT_POINTS)
        .map(|j| {
            let t = lo * (hi / lo).powf(j as f64 / (FIT_POINTS - 1) as f64);
            let above = n - sorted.partition_point(|&x| x <= t);
            (t, above as f64 / n as f64)
        })
        .collect();
    let mean = sorted.iter().sum::<f64>() / n as f64;

    let resid = |x: &[f64]| {
        let law = law_from(x);
        points
            .iter()
            .map(|&(t, s)| law.survival(t) - s)
            .collect::<Vec<_>>()
    };
    let scales = [0.25, 0.5, 1.0, 2.0, 4.0];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (i, &s2) in scales.iter().enumerate() {
        for &s3 in &scales[i..] {
            let x0 = [(s2 / mean).ln(), (s3 / mean).ln(), 0.0, 0.0, 0.0];
            let out = levenberg_marquardt(resid, &x0, &LmOptions::default());
            if out.cost.is_finite()
                && out.x.iter().all(|v| v.is_finite())
                && best.as_ref().is_none_or(|(c, _)| out.cost < *c)
            {
                best = Some((out.cost, out.x));
            }
        }
    }
    let Some((cost, x)) = best else {
        return Err(TrajectoryError::FitDiverged);
    };
    let mut law = law_from(&x);
    if law.lambda2 > law.lambda3 {
        std::mem::swap(&mut law.lambda2, &mut law.lambda3);
        std::mem::swap(&mut law.a, &mut law.b);
    }
    if !law.is_consistent() {
        return Err(TrajectoryError::FitDiverged);
    }
    Ok(MergedDwellFit {
        law,
        rms_residual: (2.0 * cost / points.len() as f64).sqrt(),
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::theta_a;

    fn merged_theta() -> ModelParams {
        ModelParams::new([20.0, -15.0, -15.0], [1.0, 0.5, 0.3], [0.2, 0.3, 0.7]).unwrap()
    }

    #[test]
    fn coefficients_of_reference_triple() {
        let law = merged_dwell_law(&merged_theta()).unwrap();
        for (x, y) in [law.a, law.b, law.c, law.d]
            .iter()
            .zip([0.06, 0.56, 0.17, 0.21])
        {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((law.survival(0.0) - 1.0).abs() < 1e-15);
        assert!(law.is_consistent());
    }

    #[test]
    fn requires_state_one_distinct() {
        assert_eq!(
            merged_dwell_law(&theta_a()),
            Err(TrajectoryError::WrongDegeneracy)
        );
        let theta =
            ModelParams::new([-15.0, -15.0, 20.0], [1.0, 0.5, 0.3], [0.2, 0.3, 0.7]).unwrap();
        assert_eq!(
            merged_dwell_law(&theta),
            Err(TrajectoryError::WrongDegeneracy)
        );
    }

    #[test]
    fn recovery_returns_both_preimages() {
        let sols = recover_probs_from_merged_law(0.06, 0.56, 0.17, 0.21).unwrap();
        assert_eq!(sols.len(), 2);
        for (x, y) in sols[0].iter().zip([0.2, 0.3, 0.7]) {
            assert!((x - y).abs() < 1e-12);
        }
        // The companion root is the rational triple (66/395, 79/220, 158/235).
        for (x, y) in sols[1]
            .iter()
            .zip([66.0 / 395.0, 79.0 / 220.0, 158.0 / 235.0])
        {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn recovery_errors() {
        assert_eq!(
            recover_probs_from_merged_law(0.0, 0.0, 0.7, 0.3),
            Err(TrajectoryError::CircularNetwork)
        );
        assert!(matches!(
            recover_probs_from_merged_law(0.06, 0.56, 0.27, 0.21),
            Err(TrajectoryError::InconsistentC { .. })
        ));
        assert_eq!(
            recover_probs_from_merged_law(0.06, 1.5, 0.17, 0.21),
            Err(TrajectoryError::NoSolutionInBox)
        );
    }

    #[test]
    fn total_time_survival_is_a_survival_function() {
        let theta = merged_theta();
        assert!((merged_total_time_survival(&theta, 0.0) - 1.0).abs() < 1e-15);
        let mut prev = 1.0;
        for i in 1..50 {
            let s = merged_total_time_survival(&theta, i as f64 * 0.5);
            assert!(s < prev && s > 0.0);
            prev = s;
        }
    }

    #[test]
    fn fit_rejects_tiny_samples() {
        assert_eq!(
            fit_merged_dwell_survival(&[]),
            Err(TrajectoryError::InsufficientSamples {
                needed: 1000,
                got: 0
            })
        );
    }
}
