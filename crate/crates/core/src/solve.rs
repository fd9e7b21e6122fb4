//! Small root-finding and least-squares helpers.

use nalgebra::{DMatrix, DVector};

/// Real roots of a polynomial of degree ≤ 2.
#[derive(Debug, Clone, PartialEq)]
pub enum RealRoots {
    /// Finitely many real roots (possibly none), ascending.
    Finite(Vec<f64>),
    /// Every coefficient vanished to within the tolerance.
    Everywhere,
}

/// Real roots of `a x² + b x + c`; coefficients below `rel_tol` times the
/// largest one are treated as zero.
pub fn quadratic_roots(a: f64, b: f64, c: f64, rel_tol: f64) -> RealRoots {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return RealRoots::Everywhere;
    }
    let small = |x: f64| x.abs() <= rel_tol * scale;
    let mut roots = if !small(a) {
        let disc = b * b - 4.0 * a * c;
        if disc < -rel_tol * (b * b).max((4.0 * a * c).abs()) {
            Vec::new()
        } else {
            let sq = disc.max(0.0).sqrt();
            // Stable pairing: avoid subtracting nearly equal quantities.
            let q = -0.5 * (b + b.signum() * sq);
            if q == 0.0 {
                vec![0.0, 0.0]
            } else {
                vec![q / a, c / q]
            }
        }
    } else if !small(b) {
        vec![-c / b]
    } else if !small(c) {
        Vec::new()
    } else {
        return RealRoots::Everywhere;
    };
    roots.sort_by(f64::total_cmp);
    RealRoots::Finite(roots)
}

/// Bisection-safeguarded secant (Brent-style) root of `f` on `[lo, hi]`,
/// which must bracket a sign change.
pub fn bracketed_root<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let (mut flo, mut fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..200 {
        let secant = hi - fhi * (hi - lo) / (fhi - flo);
        let mid = 0.5 * (lo + hi);
        let x = if secant > lo.min(hi)
            && secant < lo.max(hi)
            && (secant - mid).abs() < 0.5 * (hi - lo).abs()
        {
            secant
        } else {
            mid
        };
        let fx = f(x);
        if fx == 0.0 || (hi - lo).abs() < tol {
            return Some(x);
        }
        if fx.signum() == flo.signum() {
            lo = x;
            flo = fx;
        } else {
            hi = x;
            fhi = fx;
        }
    }
    Some(0.5 * (lo + hi))
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative step size below which iteration stops.
    pub step_tol: f64,
    /// Cost (½‖r‖²) below which iteration stops.
    pub cost_tol: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            step_tol: 1e-14,
            cost_tol: 0.0,
            lower: None,
            upper: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn project(x: &mut [f64], opts: &LmOptions) {
    if let Some(lo) = &opts.lower {
        x.iter_mut().zip(lo).for_each(|(v, l)| *v = v.max(*l));
    }
    if let Some(hi) = &opts.upper {
        x.iter_mut().zip(hi).for_each(|(v, h)| *v = v.min(*h));
    }
}

fn jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: &[f64], m: usize) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = 1e-7 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let rp = f(&xp);
        xp[j] = x[j] - h;
        let rm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Levenberg–Marquardt on `min ½‖f(x)‖²` with optional box projection.
/// The Jacobian is approximated by central differences.
pub fn levenberg_marquardt<F>(f: F, x0: &[f64], opts: &LmOptions) -> LmOutcome
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = x0.to_vec();
    project(&mut x, opts);
    let mut r = f(&x);
    let m = r.len();
    let mut cost = cost_of(&r);
    let mut mu: Option<f64> = None;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        if !cost.is_finite() {
            break;
        }
        if cost <= opts.cost_tol {
            converged = true;
            break;
        }
        let jac = jacobian(&f, &x, m);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * DVector::from_column_slice(&r);
        let diag_max = jtj.diagonal().iter().fold(0.0f64, |a, &b| a.max(b));
        let mut damping = mu.unwrap_or(1e-3 * diag_max.max(1e-300));

        let mut accepted = false;
        while damping < 1e20 * diag_max.max(1.0) {
            let mut lhs = jtj.clone();
            for i in 0..x.len() {
                lhs[(i, i)] += damping * jtj[(i, i)].max(1e-12 * diag_max.max(1e-300));
            }
            let Some(step) = lhs.cholesky().map(|c| c.solve(&(-&grad))) else {
                damping *= 4.0;
                continue;
            };
            let mut candidate: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut candidate, opts);
            let rc = f(&candidate);
            let cc = cost_of(&rc);
            if cc.is_finite() && cc <= cost {
                let moved = x
                    .iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
                    .fold(0.0, f64::max);
                let improved = cc < cost;
                x = candidate;
                r = rc;
                cost = cc;
                damping = (damping / 3.0).max(1e-15 * diag_max.max(1e-300));
                accepted = true;
                if moved <= opts.step_tol || !improved {
                    converged = true;
                }
                break;
            }
            damping *= 4.0;
        }
        mu = Some(damping);
        if !accepted {
            // No descent possible along any damped step: a stationary point.
            converged = grad.norm() <= 1e-10 * (1.0 + cost.sqrt());
            break;
        }
        if converged {
            break;
        }
    }
    LmOutcome {
        x,
        cost,
        iterations,
        converged,
    }
}
