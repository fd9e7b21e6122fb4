use super::weight_drift;
use crate::initial::{InitialCondition, Profile};
use crate::model::ModelParams;

/// First-order characteristics prediction
/// N(ξ, t) ≈ Σ_s (a_s + t (Qᵀa)_s) f(ξ − v_s t).
pub fn taylor_density(theta: &ModelParams, ic: &InitialCondition, xi: f64, t: f64) -> f64 {
    let drift = weight_drift(theta, &ic.weights);
    let v = theta.velocities();
    (0..3)
        .map(|s| (ic.weights[s] + t * drift[s]) * ic.profile_periodic(xi - v[s] * t))
        .sum()
}

/// det F with F_zs = f((v_z − v_s) t).
///
/// Written as F = E + f(0)·11ᵀ, where E_zs = f((v_z − v_s)t) − f(0) is
/// computed without cancellation, so that
/// det F = det E + f(0)·1ᵀ adj(E) 1 keeps full relative precision as t → 0.
pub fn f_matrix_determinant(profile: &Profile, v: [f64; 3], t: f64) -> f64 {
    if v[0] == v[1] || v[1] == v[2] || v[0] == v[2] {
        return 0.0;
    }
    let f0 = profile.eval(0.0);
    let e: [[f64; 3]; 3] = std::array::from_fn(|z| {
        std::array::from_fn(|s| {
            if z == s {
                0.0
            } else {
                profile.deviation_from_origin((v[z] - v[s]) * t)
            }
        })
    });
    let cof = |r: usize, c: usize| {
        let (r0, r1) = ((r + 1) % 3, (r + 2) % 3);
        let (c0, c1) = ((c + 1) % 3, (c + 2) % 3);
        e[r0][c0] * e[r1][c1] - e[r0][c1] * e[r1][c0]
    };
    let det_e: f64 = (0..3).map(|c| e[0][c] * cof(0, c)).sum();
    // The adjugate is the transposed cofactor matrix; its total sum is the same.
    let adj_sum: f64 = (0..3)
        .flat_map(|r| (0..3).map(move |c| (r, c)))
        .map(|(r, c)| cof(r, c))
        .sum();
    det_e + f0 * adj_sum
}

fn squared_velocity_gaps(v: [f64; 3]) -> f64 {
    let prod = (v[0] - v[1]) * (v[1] - v[2]) * (v[2] - v[0]);
    prod * prod
}

/// Small-t asymptote of det F for an even profile:
/// f''(0)·(f''(0)² − f(0)·f''''(0))/4 · Π(v_i − v_j)² · t⁶.
pub fn f_matrix_leading_term(profile: &Profile, v: [f64; 3], t: f64) -> f64 {
    let f0 = profile.eval(0.0);
    let f2 = profile.second_derivative_at_origin();
    let f4 = profile.fourth_derivative_at_origin();
    f2 * (f2 * f2 - f0 * f4) / 4.0 * squared_velocity_gaps(v) * t.powi(6)
}

/// f''(0)³/4 · Π(v_i − v_j)² · t⁶, the leading term without the
/// f(0)·f''''(0) contribution. For a Gaussian f(0)·f''''(0) = 3 f''(0)²,
/// so det F tends to −2 times this value.
pub fn f_matrix_curvature_only_term(profile: &Profile, v: [f64; 3], t: f64) -> f64 {
    let f2 = profile.second_derivative_at_origin();
    f2.powi(3) / 4.0 * squared_velocity_gaps(v) * t.powi(6)
}
