//! Parameter containers for the three-state velocity-jump process.
//!
//! States are indexed `0..3` throughout the library; file formats and
//! human-facing output use `1..=3`.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of internal states.
pub const NUM_STATES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("switching rate of state {state} must be strictly positive, got {value}")]
    NonPositiveRate { state: usize, value: f64 },
    #[error("probability {name} = {value} is outside [0, 1]")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("parameter {name} is not finite")]
    NonFinite { name: &'static str },
    #[error(
        "transition network is reducible: not every state is reachable from every other state"
    )]
    ReducibleChain,
    #[error("stationary kernel is degenerate (normalisation constant {0})")]
    DegenerateKernel(f64),
    #[error("velocity tolerance {tol} gives an inconsistent degeneracy classification")]
    AmbiguousDegeneracy { tol: f64 },
    #[error("tolerance must be non-negative, got {0}")]
    NegativeTolerance(f64),
}

/// Raw parameter set θ, before validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub velocities: [f64; 3],
    pub rates: [f64; 3],
    pub p12: f64,
    pub p21: f64,
    pub p31: f64,
}

/// Validated parameter set θ = {v1, v2, v3, λ1, λ2, λ3, p12, p21, p31}.
///
/// The complementary probabilities are implied: p13 = 1 − p12,
/// p23 = 1 − p21 and p32 = 1 − p31.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    velocities: [f64; 3],
    rates: [f64; 3],
    p12: f64,
    p21: f64,
    p31: f64,
}

/// Checks the constraints on θ and returns the validated parameters.
pub fn validate_params(raw: RawParams) -> Result<ModelParams, ModelError> {
    for (s, v) in raw.velocities.iter().enumerate() {
        if !v.is_finite() {
            return Err(ModelError::NonFinite {
                name: ["v1", "v2", "v3"][s],
            });
        }
    }
    for (s, &rate) in raw.rates.iter().enumerate() {
        if !rate.is_finite() {
            return Err(ModelError::NonFinite {
                name: ["lambda1", "lambda2", "lambda3"][s],
            });
        }
        if rate <= 0.0 {
            return Err(ModelError::NonPositiveRate {
                state: s + 1,
                value: rate,
            });
        }
    }
    for (name, value) in [("p12", raw.p12), ("p21", raw.p21), ("p31", raw.p31)] {
        if !value.is_finite() {
            return Err(ModelError::NonFinite { name });
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(ModelError::ProbabilityOutOfRange { name, value });
        }
    }
    let params = ModelParams {
        velocities: raw.velocities,
        rates: raw.rates,
        p12: raw.p12,
        p21: raw.p21,
        p31: raw.p31,
    };
    if !params.is_irreducible() {
        return Err(ModelError::ReducibleChain);
    }
    Ok(params)
}

impl ModelParams {
    pub fn new(velocities: [f64; 3], rates: [f64; 3], probs: [f64; 3]) -> Result<Self, ModelError> {
        validate_params(RawParams {
            velocities,
            rates,
            p12: probs[0],
            p21: probs[1],
            p31: probs[2],
        })
    }

    pub fn velocities(&self) -> [f64; 3] {
        self.velocities
    }

    pub fn rates(&self) -> [f64; 3] {
        self.rates
    }

    /// The three free probabilities `[p12, p21, p31]`.
    pub fn probs(&self) -> [f64; 3] {
        [self.p12, self.p21, self.p31]
    }

    pub fn raw(&self) -> RawParams {
        RawParams {
            velocities: self.velocities,
            rates: self.rates,
            p12: self.p12,
            p21: self.p21,
            p31: self.p31,
        }
    }

    /// Same velocities and rates, different probability triple.
    pub fn with_probs(&self, probs: [f64; 3]) -> Result<Self, ModelError> {
        Self::new(self.velocities, self.rates, probs)
    }

    /// Full jump-chain matrix `P[s][u]` with zero diagonal.
    pub fn jump_probabilities(&self) -> [[f64; 3]; 3] {
        [
            [0.0, self.p12, 1.0 - self.p12],
            [self.p21, 0.0, 1.0 - self.p21],
            [self.p31, 1.0 - self.p31, 0.0],
        ]
    }

    fn is_irreducible(&self) -> bool {
        let p = self.jump_probabilities();
        let edge = |s: usize, u: usize| s != u && self.rates[s] * p[s][u] > 0.0;
        (0..NUM_STATES).all(|start| {
            let mut seen = [false; NUM_STATES];
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(s) = stack.pop() {
                for u in 0..NUM_STATES {
                    if !seen[u] && edge(s, u) {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
            seen.iter().all(|&b| b)
        })
    }

    /// Relabels the states: new state `i` is old state `perm[i]`.
    ///
    /// Panics if `perm` is not a permutation of `0..3`.
    pub fn permuted(&self, perm: [usize; 3]) -> ModelParams {
        let mut check = perm;
        check.sort_unstable();
        assert_eq!(check, [0, 1, 2], "not a permutation: {perm:?}");
        let p = self.jump_probabilities();
        ModelParams {
            velocities: perm.map(|s| self.velocities[s]),
            rates: perm.map(|s| self.rates[s]),
            p12: p[perm[0]][perm[1]],
            p21: p[perm[1]][perm[0]],
            p31: p[perm[2]][perm[0]],
        }
    }

    /// Permutation that orders states by descending velocity (stable on ties).
    pub fn descending_velocity_order(&self) -> [usize; 3] {
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| self.velocities[b].total_cmp(&self.velocities[a]));
        order
    }
}

/// Generator of the state chain. Entry `(s, u)`, `u != s`, is the rate of
/// switching from `s` to `u`; rows sum to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix(Matrix3<f64>);

impl TransitionMatrix {
    pub fn get(&self, s: usize, u: usize) -> f64 {
        self.0[(s, u)]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [0, 1, 2].map(|s| [m[(s, 0)], m[(s, 1)], m[(s, 2)]])
    }

    /// Qᵀa, the net rate of change of state occupation from weights `a`.
    pub fn apply_transpose(&self, a: &[f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [0, 1, 2].map(|s| (0..3).map(|u| m[(u, s)] * a[u]).sum())
    }
}

pub fn build_transition_matrix(theta: &ModelParams) -> TransitionMatrix {
    let p = theta.jump_probabilities();
    let l = theta.rates;
    let mut q = Matrix3::zeros();
    for s in 0..NUM_STATES {
        for u in 0..NUM_STATES {
            if u != s {
                q[(s, u)] = l[s] * p[s][u];
            }
        }
        // -λs rather than the negated row sum, so the diagonal is exact.
        q[(s, s)] = -l[s];
    }
    TransitionMatrix(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationaryDistribution(pub [f64; 3]);

impl StationaryDistribution {
    pub fn weights(&self) -> [f64; 3] {
        self.0
    }
}

/// Unnormalised stationary weights φs = λu·λz·(1 − p_uz·p_zu).
pub fn stationary_weights_unnormalised(theta: &ModelParams) -> [f64; 3] {
    let [l1, l2, l3] = theta.rates;
    let (p12, p21, p31) = (theta.p12, theta.p21, theta.p31);
    [
        l2 * l3 * (1.0 - (1.0 - p21) * (1.0 - p31)),
        l1 * l3 * (1.0 - (1.0 - p12) * p31),
        l1 * l2 * (1.0 - p12 * p21),
    ]
}

pub fn stationary_distribution(theta: &ModelParams) -> Result<StationaryDistribution, ModelError> {
    let phi = stationary_weights_unnormalised(theta);
    let total: f64 = phi.iter().sum();
    if !(total > 0.0) {
        return Err(ModelError::DegenerateKernel(total));
    }
    Ok(StationaryDistribution(phi.map(|p| p / total)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum VelocityDegeneracy {
    AllDistinct,
    /// Two states share a velocity; `distinct` is the 0-based index of the odd one out.
    TwoEqual {
        distinct: usize,
    },
    AllEqual,
}

/// Classifies velocity coincidences; `tol = 0` means exact equality.
pub fn classify_velocity_degeneracy(
    theta: &ModelParams,
    tol: f64,
) -> Result<VelocityDegeneracy, ModelError> {
    if !(tol >= 0.0) {
        return Err(ModelError::NegativeTolerance(tol));
    }
    let v = theta.velocities;
    let close = |i: usize, j: usize| (v[i] - v[j]).abs() <= tol;
    let pairs = [close(0, 1), close(1, 2), close(0, 2)];
    match pairs.iter().filter(|&&c| c).count() {
        0 => Ok(VelocityDegeneracy::AllDistinct),
        1 => {
            let distinct = if pairs[0] {
                2
            } else if pairs[1] {
                0
            } else {
                1
            };
            Ok(VelocityDegeneracy::TwoEqual { distinct })
        }
        3 => Ok(VelocityDegeneracy::AllEqual),
        _ => Err(ModelError::AmbiguousDegeneracy { tol }),
    }
}

/// θ_A, the reference parameter set used throughout the examples and tests.
pub fn theta_a() -> ModelParams {
    ModelParams::new([20.0, -15.0, 0.0], [1.0, 0.5, 0.3], [0.2, 0.3, 0.7]).expect("valid θ_A")
}
