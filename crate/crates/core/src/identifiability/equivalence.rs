//! Parameter sets that share every identifiable combination with a
//! reference model.
//!
//! Velocities, rates and weights are globally identified, so only the
//! probabilities (p12, p21, p31) can differ. They must satisfy
//! c7, c8, c13 and c14 simultaneously. c13 and c14 are linear in p and cut
//! out a line through the reference (a plane when a is a vertex of the
//! simplex, where a combination c8 − v_k c7 supplies the second linear
//! equation). Along that line c7 and c8 are quadratics, which gives every
//! candidate in closed form. A 200³ residual scan of the box followed by
//! local polishing is run as an independent completeness check.

use rayon::prelude::*;
use serde::Serialize;

use super::{coefficient_values, compute_coefficients, IdentifiabilityError};
use crate::density::{io_equation_residual, linf_difference, solve_spectral};
use crate::initial::{InitialCondition, InitialWeights, Profile};
use crate::model::ModelParams;
use crate::solve::{levenberg_marquardt, quadratic_roots, LmOptions, RealRoots};

const COEFF_TOL: f64 = 1e-10;
const DENSITY_EQUIVALENT: f64 = 1e-8;
const DENSITY_DISTINCT: f64 = 1e-4;
const DEDUP_TOL: f64 = 1e-7;
const SCAN_POINTS: usize = 200;
const SCAN_POLISH_LIMIT: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    pub profile: Profile,
    pub half_width: f64,
    pub n_modes: usize,
    pub t_final: f64,
    pub snapshots: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            profile: Profile::Gaussian { sigma: 5.0 },
            half_width: 40.0,
            n_modes: 256,
            t_final: 0.5,
            snapshots: 51,
        }
    }
}

impl CertifyOptions {
    fn times(&self) -> Vec<f64> {
        let n = self.snapshots.max(2);
        (0..n)
            .map(|i| self.t_final * i as f64 / (n - 1) as f64)
            .collect()
    }

    fn initial_condition(
        &self,
        weights: [f64; 3],
    ) -> Result<InitialCondition, IdentifiabilityError> {
        Ok(InitialCondition::new(
            weights,
            self.profile.clone(),
            self.half_width,
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Equivalent,
    Distinct,
    Inconclusive,
}

impl Verdict {
    /// Equivalent when coefficients agree to 1e-10 and densities to 1e-8;
    /// Distinct when densities differ by at least 1e-4.
    pub fn classify(max_coeff_dev: f64, max_density_linf: f64) -> Verdict {
        if max_coeff_dev <= COEFF_TOL && max_density_linf <= DENSITY_EQUIVALENT {
            Verdict::Equivalent
        } else if max_density_linf >= DENSITY_DISTINCT {
            Verdict::Distinct
        } else {
            Verdict::Inconclusive
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    /// |c_i(A) − c_i(B)| for i = 1..15.
    pub coeff_dev: [f64; 15],
    pub max_coeff_dev: f64,
    /// (t, max_x |N_A − N_B|) on the spectral grid.
    pub density_linf_trace: Vec<(f64, f64)>,
    pub max_density_linf: f64,
    pub verdict: Verdict,
}

/// Compares two models by their coefficients and their spectral densities
/// over t ∈ [0, t_final]. `Stationary` weights are resolved per model.
pub fn certify_equivalence(
    theta_a: &ModelParams,
    theta_b: &ModelParams,
    weights: InitialWeights,
    opts: &CertifyOptions,
) -> Result<EquivalenceReport, IdentifiabilityError> {
    let wa = weights.resolve(theta_a)?;
    let wb = weights.resolve(theta_b)?;
    let ca = coefficient_values(theta_a, &wa);
    let cb = coefficient_values(theta_b, &wb);
    let coeff_dev: [f64; 15] = std::array::from_fn(|i| (ca[i] - cb[i]).abs());
    let max_coeff_dev = coeff_dev.iter().copied().fold(0.0, f64::max);

    let times = opts.times();
    let fa = solve_spectral(theta_a, &opts.initial_condition(wa)?, opts.n_modes, &times)?;
    let fb = solve_spectral(theta_b, &opts.initial_condition(wb)?, opts.n_modes, &times)?;
    let trace = linf_difference(&fa, &fb)?;
    let max_density_linf = trace.iter().map(|&(_, d)| d).fold(0.0, f64::max);
    let verdict = Verdict::classify(max_coeff_dev, max_density_linf);
    Ok(EquivalenceReport {
        coeff_dev,
        max_coeff_dev,
        density_linf_trace: trace,
        max_density_linf,
        verdict,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceMember {
    pub theta: ModelParams,
    /// Largest |c_i − c_i(reference)| over c1..c15.
    pub coeff_dev: f64,
    pub density_linf_trace: Vec<(f64, f64)>,
    pub max_density_linf: f64,
    /// Input–output residual of this member's density against the reference c1..c8.
    pub io_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceClass {
    pub reference: ModelParams,
    pub weights: [f64; 3],
    /// The reference first, then the others by ascending (p12, p21, p31).
    pub members: Vec<EquivalenceMember>,
}

/// The four constraint functions, with v, λ, a frozen.
struct Constraints {
    v: [f64; 3],
    l: [f64; 3],
    a: [f64; 3],
    target: [f64; 4],
    scale: [f64; 4],
}

impl Constraints {
    fn new(theta: &ModelParams, a: [f64; 3]) -> Self {
        let v = theta.velocities();
        let l = theta.rates();
        let lmax = l.iter().fold(0.0f64, |m, &x| m.max(x));
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        let mut c = Constraints {
            v,
            l,
            a,
            target: [0.0; 4],
            scale: [lmax * lmax, lmax * lmax * vmax, lmax, lmax],
        };
        c.target = c.values(theta.probs());
        c
    }

    /// (c7, c8, c13, c14) at probabilities p.
    fn values(&self, p: [f64; 3]) -> [f64; 4] {
        let [x, y, z] = p;
        let [l1, l2, l3] = self.l;
        let [a1, a2, a3] = self.a;
        let g = [
            l2 * l3 * (y + z - y * z),
            l1 * l3 * (1.0 - z + x * z),
            l1 * l2 * (1.0 - x * y),
        ];
        [
            g[0] + g[1] + g[2],
            self.v[0] * g[0] + self.v[1] * g[1] + self.v[2] * g[2],
            -l1 * a1 + l2 * y * a2 + l3 * z * a3,
            l1 * x * a1 - l2 * a2 + l3 * (1.0 - z) * a3,
        ]
    }

    fn deviations(&self, p: [f64; 3]) -> [f64; 4] {
        let v = self.values(p);
        std::array::from_fn(|i| v[i] - self.target[i])
    }

    fn scaled(&self, p: [f64; 3]) -> [f64; 4] {
        let d = self.deviations(p);
        std::array::from_fn(|i| d[i] / self.scale[i])
    }

    fn max_dev(&self, p: [f64; 3]) -> f64 {
        self.deviations(p).iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    fn polish(&self, p: [f64; 3]) -> [f64; 3] {
        let opts = LmOptions {
            max_iter: 100,
            lower: Some(vec![0.0; 3]),
            upper: Some(vec![1.0; 3]),
            ..LmOptions::default()
        };
        let out = levenberg_marquardt(
            |q: &[f64]| self.scaled([q[0], q[1], q[2]]).to_vec(),
            &p,
            &opts,
        );
        let q = [out.x[0], out.x[1], out.x[2]];
        if self.max_dev(q) <= self.max_dev(p) {
            q
        } else {
            p
        }
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn in_box(p: [f64; 3], tol: f64) -> bool {
    p.iter().all(|x| (-tol..=1.0 + tol).contains(x))
}

fn push_unique(list: &mut Vec<[f64; 3]>, p: [f64; 3]) -> bool {
    if list
        .iter()
        .any(|q| q.iter().zip(&p).all(|(a, b)| (a - b).abs() <= DEDUP_TOL))
    {
        return false;
    }
    list.push(p);
    true
}

/// Direction of the solution line of the linear constraints through `p_ref`.
fn line_direction(cons: &Constraints, p_ref: [f64; 3]) -> Result<[f64; 3], IdentifiabilityError> {
    let [l1, l2, l3] = cons.l;
    let [a1, a2, a3] = cons.a;
    let r13 = [0.0, l2 * a2, l3 * a3];
    let r14 = [l1 * a1, 0.0, -l3 * a3];
    let d = cross(r13, r14);
    let scale = norm(r13).max(norm(r14));
    if norm(d) > 1e-12 * scale * scale {
        return Ok(d);
    }
    // Vertex weights: a single coordinate is fixed. Eliminate the one
    // bilinear term left on that plane with c8 − v_k c7.
    let row = if norm(r13) >= norm(r14) { r13 } else { r14 };
    let k = (0..3)
        .max_by(|&i, &j| row[i].abs().total_cmp(&row[j].abs()))
        .expect("three components");
    let vk = cons.v[k];
    let e = |p: [f64; 3]| {
        let d = cons.deviations(p);
        d[1] - vk * d[0]
    };
    let e0 = e(p_ref);
    let grad: [f64; 3] = std::array::from_fn(|u| {
        if u == k {
            0.0
        } else {
            let mut q = p_ref;
            q[u] += 1.0;
            e(q) - e0
        }
    });
    let mut axis = [0.0; 3];
    axis[k] = 1.0;
    let d = cross(axis, grad);
    if norm(d) <= 1e-12 * cons.scale[1] {
        return Err(IdentifiabilityError::SolverExhausted(
            "linear reduction degenerates on the fixed-coordinate plane".into(),
        ));
    }
    Ok(d)
}

/// Coefficients (a, b, c) of the quadratic s ↦ f(p_ref + s d).
fn along_line(f: impl Fn([f64; 3]) -> f64, p_ref: [f64; 3], d: [f64; 3]) -> [f64; 3] {
    let at = |s: f64| {
        f([
            p_ref[0] + s * d[0],
            p_ref[1] + s * d[1],
            p_ref[2] + s * d[2],
        ])
    };
    let (fm, f0, fp) = (at(-1.0), at(0.0), at(1.0));
    [0.5 * (fp + fm) - f0, 0.5 * (fp - fm), f0]
}

fn algebraic_candidates(
    cons: &Constraints,
    p_ref: [f64; 3],
) -> Result<Vec<[f64; 3]>, IdentifiabilityError> {
    let d = line_direction(cons, p_ref)?;
    let n = norm(d);
    let d = d.map(|x| x / n);
    let r7 = along_line(|p| cons.deviations(p)[0], p_ref, d);
    let r8 = along_line(|p| cons.deviations(p)[1], p_ref, d);
    let negligible = |q: &[f64; 3], scale: f64| q.iter().all(|c| c.abs() <= 1e-12 * scale);
    let (primary, secondary, secondary_scale) = if !negligible(&r7, cons.scale[0]) {
        (r7, r8, cons.scale[1])
    } else if !negligible(&r8, cons.scale[1]) {
        (r8, r7, cons.scale[0])
    } else {
        return Err(IdentifiabilityError::SolverExhausted(
            "c7 and c8 are constant along the linear solution set (continuum of solutions)".into(),
        ));
    };
    let roots = match quadratic_roots(primary[0], primary[1], primary[2], 1e-13) {
        RealRoots::Finite(r) => r,
        RealRoots::Everywhere => unreachable!("primary quadratic is not negligible"),
    };
    let mut out = Vec::new();
    for s in roots {
        let p = [
            p_ref[0] + s * d[0],
            p_ref[1] + s * d[1],
            p_ref[2] + s * d[2],
        ];
        let r2 = (secondary[0] * s + secondary[1]) * s + secondary[2];
        if in_box(p, 1e-9) && r2.abs() <= 1e-8 * secondary_scale {
            out.push(p.map(|x| x.clamp(0.0, 1.0)));
        }
    }
    Ok(out)
}

/// Solutions found by polishing the local minima of a box scan.
fn scan_candidates(cons: &Constraints) -> Vec<[f64; 3]> {
    let n = SCAN_POINTS;
    let h = 1.0 / (n - 1) as f64;
    let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..n).flat_map(move |j| {
                (0..n).map(move |k| {
                    let r = cons.scaled([i as f64 * h, j as f64 * h, k as f64 * h]);
                    r.iter().map(|x| x * x).sum::<f64>()
                })
            })
        })
        .collect();
    let mut minima: Vec<(f64, [usize; 3])> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let values = &values;
            (0..n).flat_map(move |j| {
                (0..n).filter_map(move |k| {
                    let v = values[idx(i, j, k)];
                    for di in -1i64..=1 {
                        for dj in -1i64..=1 {
                            for dk in -1i64..=1 {
                                let (a, b, c) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                                if (di, dj, dk) == (0, 0, 0)
                                    || a < 0
                                    || b < 0
                                    || c < 0
                                    || a >= n as i64
                                    || b >= n as i64
                                    || c >= n as i64
                                {
                                    continue;
                                }
                                if values[idx(a as usize, b as usize, c as usize)] < v {
                                    return None;
                                }
                            }
                        }
                    }
                    Some((v, [i, j, k]))
                })
            })
        })
        .collect();
    minima.sort_by(|a, b| a.0.total_cmp(&b.0));
    minima.truncate(SCAN_POLISH_LIMIT);
    minima
        .par_iter()
        .map(|(_, [i, j, k])| cons.polish([*i as f64 * h, *j as f64 * h, *k as f64 * h]))
        .filter(|&p| cons.max_dev(p) <= COEFF_TOL)
        .collect()
}

/// All probability triples in [0,1]³ that reproduce c1..c15 of `theta`
/// with weights `a`, each certified against the reference density.
pub fn find_equivalent_parameters(
    theta: &ModelParams,
    a: &[f64; 3],
) -> Result<EquivalenceClass, IdentifiabilityError> {
    find_equivalent_parameters_with(theta, a, &CertifyOptions::default())
}

pub fn find_equivalent_parameters_with(
    theta: &ModelParams,
    a: &[f64; 3],
    opts: &CertifyOptions,
) -> Result<EquivalenceClass, IdentifiabilityError> {
    let reference_set = compute_coefficients(theta, a)?;
    let cons = Constraints::new(theta, *a);
    let p_ref = theta.probs();

    let mut solutions: Vec<[f64; 3]> = vec![p_ref];
    let mut found_reference = false;
    for p in algebraic_candidates(&cons, p_ref)? {
        let p = cons.polish(p);
        if cons.max_dev(p) > COEFF_TOL {
            continue;
        }
        if !push_unique(&mut solutions, p) {
            found_reference |= p
                .iter()
                .zip(&p_ref)
                .all(|(x, y)| (x - y).abs() <= DEDUP_TOL);
        }
    }
    if !found_reference {
        return Err(IdentifiabilityError::SolverExhausted(
            "algebraic reduction did not reproduce the reference parameters".into(),
        ));
    }
    for p in scan_candidates(&cons) {
        if push_unique(&mut solutions.clone(), p) {
            return Err(IdentifiabilityError::SolverExhausted(format!(
                "box scan found a solution {p:?} missed by the algebraic reduction"
            )));
        }
    }

    let times = opts.times();
    let ic = opts.initial_condition(*a)?;
    let reference_field = solve_spectral(theta, &ic, opts.n_modes, &times)?;
    let io = reference_set.io();
    let mut others: Vec<ModelParams> = solutions[1..]
        .iter()
        .filter_map(|&p| theta.with_probs(p).ok())
        .collect();
    others.sort_by(|x, y| {
        x.probs()
            .iter()
            .zip(y.probs())
            .map(|(a, b)| a.total_cmp(&b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let members = std::iter::once(*theta)
        .chain(others)
        .map(|member| {
            let field = solve_spectral(&member, &ic, opts.n_modes, &times)?;
            let trace = linf_difference(&reference_field, &field)?;
            let c = coefficient_values(&member, a);
            Ok(EquivalenceMember {
                theta: member,
                coeff_dev: c
                    .iter()
                    .zip(&reference_set.c)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max),
                max_density_linf: trace.iter().map(|&(_, d)| d).fold(0.0, f64::max),
                density_linf_trace: trace,
                io_residual: io_equation_residual(&field, &io)?,
            })
        })
        .collect::<Result<Vec<_>, IdentifiabilityError>>()?;
    Ok(EquivalenceClass {
        reference: *theta,
        weights: *a,
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{stationary_distribution, theta_a};

    #[test]
    fn constraint_values_match_coefficients() {
        let theta = theta_a();
        let a = [0.2, 0.5, 0.3];
        let cons = Constraints::new(&theta, a);
        let c = coefficient_values(&theta, &a);
        assert_eq!(cons.target.len(), 4);
        for (x, y) in cons.target.iter().zip([c[6], c[7], c[12], c[13]]) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn self_certification_is_exact() {
        let theta = theta_a();
        let report = certify_equivalence(
            &theta,
            &theta,
            InitialWeights::Stationary,
            &CertifyOptions::default(),
        )
        .unwrap();
        assert_eq!(report.verdict, Verdict::Equivalent);
        assert_eq!(report.max_coeff_dev, 0.0);
        assert_eq!(report.max_density_linf, 0.0);
        assert_eq!(report.density_linf_trace.len(), 51);
    }

    #[test]
    fn stationary_weights_give_model_b() {
        let theta = theta_a();
        let w = stationary_distribution(&theta).unwrap().weights();
        let class = find_equivalent_parameters(&theta, &w).unwrap();
        assert_eq!(class.members.len(), 2);
        let b = class.members[1].theta.probs();
        for (x, y) in b.iter().zip([66.0 / 395.0, 79.0 / 220.0, 158.0 / 235.0]) {
            assert!((x - y).abs() < 1e-9, "{b:?}");
        }
    }

    fn assert_pair(a: [f64; 3], expected: [f64; 3]) {
        let theta = theta_a();
        let class = find_equivalent_parameters(&theta, &a).unwrap();
        assert_eq!(
            class.members.len(),
            2,
            "{:?}",
            class
                .members
                .iter()
                .map(|m| m.theta.probs())
                .collect::<Vec<_>>()
        );
        let found = class
            .members
            .iter()
            .map(|m| m.theta.probs())
            .find(|p| (p[0] - 0.2).abs() + (p[1] - 0.3).abs() + (p[2] - 0.7).abs() > 1e-6)
            .unwrap();
        for (x, y) in found.iter().zip(expected) {
            assert!((x - y).abs() < 1e-9, "{found:?}");
        }
        for m in &class.members {
            assert!(m.max_density_linf < 1e-6, "{}", m.max_density_linf);
        }
    }

    #[test]
    fn first_vertex_gives_model_d() {
        assert_pair([1.0, 0.0, 0.0], [1.0 / 5.0, 47.0 / 50.0, 23.0 / 42.0]);
    }

    #[test]
    fn third_vertex_gives_model_e() {
        assert_pair([0.0, 0.0, 1.0], [87.0 / 700.0, 7.0 / 200.0, 7.0 / 10.0]);
    }

    #[test]
    fn uniform_weights_give_singleton() {
        let class = find_equivalent_parameters(&theta_a(), &[1.0 / 3.0; 3]).unwrap();
        assert_eq!(class.members.len(), 1);
        assert_eq!(class.members[0].theta, theta_a());
    }
}
