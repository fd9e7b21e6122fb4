//! Three-state velocity-jump processes: parameters, exact simulation,
//! density solvers and structural identifiability tools.

pub mod config;
pub mod density;
pub mod expm;
pub mod identifiability;
pub mod initial;
pub mod model;
pub mod solve;
pub mod trajectory;

pub use config::{ConfigError, ModelFile};
pub use initial::{InitError, InitialCondition, InitialWeights, Profile};
pub use model::{
    build_transition_matrix, classify_velocity_degeneracy, stationary_distribution, theta_a,
    validate_params, ModelError, ModelParams, RawParams, StationaryDistribution, TransitionMatrix,
    VelocityDegeneracy,
};
