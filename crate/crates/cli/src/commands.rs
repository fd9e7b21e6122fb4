use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use serde::Serialize;
use vjump_core::density::{
    linf_difference, solve_spectral, solve_upwind, write_density_csv, write_linf_csv, DensityField,
    Grid,
};
use vjump_core::identifiability::{
    certify_equivalence, compute_coefficients, compute_equal_velocity_coefficients,
    f_matrix_curvature_only_term, f_matrix_determinant, f_matrix_leading_term,
    find_equivalent_parameters_with, io_coefficients, CertifyOptions, CoefficientReport,
    EqualVelocityCoefficients, IdentifiabilityError, Verdict,
};
use vjump_core::trajectory::{
    estimate_from_ensemble, fit_merged_dwell_survival, merged_dwell_law,
    recover_probs_from_merged_law, sample_merged_excursions, simulate_ensemble,
    write_trajectories_csv, MergedDwellLaw,
};
use vjump_core::{
    classify_velocity_degeneracy, InitialCondition, InitialWeights, ModelFile, ModelParams,
    VelocityDegeneracy,
};

use crate::output::OutDir;
use crate::{Common, GridArgs, Solver};

const CONFIG: u8 = 2;
const ESTIMATION: u8 = 3;
const EXHAUSTED: u8 = 4;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(error: anyhow::Error) -> Self {
        Failure {
            code: CONFIG,
            error,
        }
    }

    fn estimation(error: anyhow::Error) -> Self {
        Failure {
            code: ESTIMATION,
            error,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure::config(error)
    }
}

type Outcome = Result<(), Failure>;

struct Loaded {
    theta: ModelParams,
    ic: InitialCondition,
}

fn load(path: &Path) -> anyhow::Result<Loaded> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read model file {}", path.display()))?;
    let file = ModelFile::from_json_str(&text).with_context(|| format!("in {}", path.display()))?;
    let theta = file.params()?;
    let ic = file.initial_condition()?;
    Ok(Loaded { theta, ic })
}

pub fn simulate(common: &Common, seed: u64, trajectories: usize, horizon: f64) -> Outcome {
    if trajectories == 0 {
        return Err(anyhow!("--trajectories must be at least 1").into());
    }
    let m = load(&common.model)?;
    let trajs = simulate_ensemble(&m.theta, &m.ic, horizon, trajectories, seed)
        .map_err(|e| Failure::config(e.into()))?;
    let estimate = estimate_from_ensemble(&trajs)
        .context("estimating parameters from the ensemble")
        .map_err(Failure::estimation)?;
    let out = OutDir::create(&common.out)?;
    let csv = out.write_with("trajectories.csv", |w| write_trajectories_csv(w, &trajs))?;
    let json = out.write_json("estimate.json", &estimate)?;
    let v = estimate.velocities.map(|e| e.value);
    let l = estimate.rates.map(|e| e.value);
    println!(
        "velocities {v:?}, rates {l:?}, probs {:?}",
        estimate.probs()
    );
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn snapshot_times(grid: &GridArgs, default: &[f64]) -> Vec<f64> {
    grid.snapshots.clone().unwrap_or_else(|| default.to_vec())
}

/// Solves on the `dx` grid. Spectral fields are evaluated at the same nodes.
fn solve(
    theta: &ModelParams,
    ic: &InitialCondition,
    grid: &GridArgs,
    times: &[f64],
) -> anyhow::Result<DensityField> {
    let g = Grid::new(ic.half_width, grid.dx, grid.dt, grid.t_final)?;
    match grid.solver {
        Solver::Upwind => {
            let v = theta.velocities();
            let courant = g.courant(&v);
            if courant > 1.0 {
                bail!(
                    "CFL condition violated: dt = {} dx = {} max|v| = {} gives courant number {courant}",
                    grid.dt,
                    grid.dx,
                    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
                );
            }
            Ok(solve_upwind(theta, ic, &g, times)?)
        }
        Solver::Spectral => {
            if let Some(&t) = times.iter().find(|&&t| !(0.0..=grid.t_final).contains(&t)) {
                bail!("snapshot time {t} outside [0, {}]", grid.t_final);
            }
            let field = solve_spectral(theta, ic, grid.modes, times)?;
            Ok(field.resample(&g.nodes())?)
        }
    }
}

#[derive(Serialize)]
struct DensityMeta<'a> {
    theta: &'a ModelParams,
    initial_condition: &'a InitialCondition,
    source: vjump_core::density::DensitySource,
    half_width: f64,
    dx: f64,
    requested_times: &'a [f64],
    times: &'a [f64],
}

pub fn density(common: &Common, grid: &GridArgs) -> Outcome {
    let m = load(&common.model)?;
    let times = snapshot_times(grid, &[0.0, 0.25, 0.5]);
    let field = solve(&m.theta, &m.ic, grid, &times)?;
    let out = OutDir::create(&common.out)?;
    let csv = out.write_with("density.csv", |w| write_density_csv(w, &field))?;
    let meta = DensityMeta {
        theta: &m.theta,
        initial_condition: &m.ic,
        source: field.source,
        half_width: m.ic.half_width,
        dx: grid.dx,
        requested_times: &field.requested_times,
        times: &field.times,
    };
    let json = out.write_json("density.json", &meta)?;
    for k in 0..field.times.len() {
        println!("t = {}: mass {:.12}", field.times[k], field.mass(k));
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

#[derive(Serialize)]
struct MemberReport {
    theta: ModelParams,
    reference: bool,
    coeff_dev: f64,
    max_density_linf: f64,
    io_residual: f64,
    verdict: Verdict,
}

#[derive(Serialize)]
struct EquivalenceOutput {
    reference: ModelParams,
    weights: [f64; 3],
    members: Vec<MemberReport>,
}

pub fn equivalents(common: &Common, t_final: f64, modes: usize) -> Outcome {
    let m = load(&common.model)?;
    let opts = CertifyOptions {
        profile: m.ic.profile.clone(),
        half_width: m.ic.half_width,
        n_modes: modes,
        t_final,
        ..CertifyOptions::default()
    };
    let class = find_equivalent_parameters_with(&m.theta, &m.ic.weights, &opts).map_err(|e| {
        let code = if matches!(e, IdentifiabilityError::SolverExhausted(_)) {
            EXHAUSTED
        } else {
            CONFIG
        };
        Failure {
            code,
            error: e.into(),
        }
    })?;
    let weights = InitialWeights::Explicit(class.weights);
    let mut members = Vec::new();
    let mut trace = Vec::new();
    for (i, member) in class.members.iter().enumerate() {
        let verdict = if i == 0 {
            Verdict::Equivalent
        } else {
            certify_equivalence(&class.reference, &member.theta, weights, &opts)
                .map_err(anyhow::Error::from)?
                .verdict
        };
        for &(t, d) in &member.density_linf_trace {
            trace.push((i, t, d));
        }
        println!(
            "member {i}: probs {:?} max density gap {:.3e} {verdict:?}",
            member.theta.probs(),
            member.max_density_linf
        );
        members.push(MemberReport {
            theta: member.theta,
            reference: i == 0,
            coeff_dev: member.coeff_dev,
            max_density_linf: member.max_density_linf,
            io_residual: member.io_residual,
            verdict,
        });
    }
    let out = OutDir::create(&common.out)?;
    let report = EquivalenceOutput {
        reference: class.reference,
        weights: class.weights,
        members,
    };
    let json = out.write_json("equivalence.json", &report)?;
    let csv = out.write_with("equivalence_trace.csv", |w| {
        writeln!(w, "member,t,linf")?;
        for (i, t, d) in &trace {
            writeln!(w, "{i},{t},{d}")?;
        }
        Ok(())
    })?;
    println!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}

/// Largest coefficient gap: c1..c15 when both models have distinct
/// velocities, otherwise c1..c8 and the weights.
fn coefficient_gap(a: &Loaded, b: &Loaded) -> f64 {
    let full = compute_coefficients(&a.theta, &a.ic.weights)
        .and_then(|ca| Ok((ca, compute_coefficients(&b.theta, &b.ic.weights)?)));
    match full {
        Ok((ca, cb)) => ca.max_deviation(&cb),
        Err(_) => {
            let (ca, cb) = (io_coefficients(&a.theta), io_coefficients(&b.theta));
            let io = ca.iter().zip(&cb).map(|(x, y)| (x - y).abs());
            let w =
                a.ic.weights
                    .iter()
                    .zip(&b.ic.weights)
                    .map(|(x, y)| (x - y).abs());
            io.chain(w).fold(0.0, f64::max)
        }
    }
}

pub fn compare(common: &Common, other: &Path, grid: &GridArgs) -> Outcome {
    let a = load(&common.model)?;
    let b = load(other)?;
    if a.ic.profile != b.ic.profile || a.ic.half_width != b.ic.half_width {
        return Err(anyhow!("models must share the initial profile and domain").into());
    }
    let default: Vec<f64> = (0..=50).map(|i| grid.t_final * i as f64 / 50.0).collect();
    let times = snapshot_times(grid, &default);
    let fa = solve(&a.theta, &a.ic, grid, &times)?;
    let fb = solve(&b.theta, &b.ic, grid, &times)?;
    let trace = linf_difference(&fa, &fb).map_err(anyhow::Error::from)?;
    let max_linf = trace.iter().map(|&(_, d)| d).fold(0.0, f64::max);
    let verdict = Verdict::classify(coefficient_gap(&a, &b), max_linf);
    let out = OutDir::create(&common.out)?;
    let csv = out.write_with("compare.csv", |w| write_linf_csv(w, &trace))?;
    println!("max linf {max_linf:.3e}");
    println!("verdict: {verdict:?}");
    println!("wrote {}", csv.display());
    Ok(())
}

#[derive(Serialize)]
#[serde(untagged)]
enum CoeffOutput {
    Distinct(CoefficientReport),
    EqualVelocity {
        degeneracy: VelocityDegeneracy,
        #[serde(flatten)]
        coefficients: EqualVelocityCoefficients,
    },
}

pub fn coeffs(common: &Common) -> Outcome {
    let m = load(&common.model)?;
    let a = m.ic.weights;
    let report = match classify_velocity_degeneracy(&m.theta, 0.0).map_err(anyhow::Error::from)? {
        VelocityDegeneracy::AllDistinct => {
            let set = compute_coefficients(&m.theta, &a).map_err(anyhow::Error::from)?;
            CoeffOutput::Distinct(CoefficientReport::from(&set))
        }
        degeneracy => CoeffOutput::EqualVelocity {
            degeneracy,
            coefficients: compute_equal_velocity_coefficients(&m.theta, &a)
                .context("equal-velocity coefficients need v2 = v3 != v1")?,
        },
    };
    let out = OutDir::create(&common.out)?;
    let json = out.write_json("coeffs.json", &report)?;
    println!(
        "{}",
        serde_json::to_string(&report).map_err(anyhow::Error::from)?
    );
    println!("wrote {}", json.display());
    Ok(())
}

pub fn fmatrix(common: &Common, times: &[f64]) -> Outcome {
    let m = load(&common.model)?;
    if times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(anyhow!("times must be positive").into());
    }
    let profile = &m.ic.profile;
    let v = m.theta.velocities();
    let rows: Vec<[f64; 5]> = times
        .iter()
        .map(|&t| {
            let det = f_matrix_determinant(profile, v, t);
            let lead = f_matrix_leading_term(profile, v, t);
            [
                t,
                det,
                lead,
                det / lead,
                det / f_matrix_curvature_only_term(profile, v, t),
            ]
        })
        .collect();
    let out = OutDir::create(&common.out)?;
    let csv = out.write_with("fmatrix.csv", |w| {
        writeln!(w, "t,det,leading,ratio,curvature_only_ratio")?;
        for r in &rows {
            writeln!(w, "{},{},{},{},{}", r[0], r[1], r[2], r[3], r[4])?;
        }
        Ok(())
    })?;
    for r in &rows {
        println!(
            "t = {:e}: det F = {:.6e}, ratio to leading term {:.6}",
            r[0], r[1], r[3]
        );
    }
    println!("wrote {}", csv.display());
    Ok(())
}

#[derive(Serialize)]
struct DwellFitOutput {
    samples: usize,
    fitted: MergedDwellLaw,
    rms_residual: f64,
    model: MergedDwellLaw,
    /// Probability triples consistent with the fitted (A, B, C, D), if any.
    recovered_probs: Result<Vec<[f64; 3]>, String>,
}

pub fn dwell_fit(common: &Common, seed: u64, excursions: usize) -> Outcome {
    let m = load(&common.model)?;
    let model = merged_dwell_law(&m.theta).map_err(anyhow::Error::from)?;
    let samples: Vec<f64> = sample_merged_excursions(&m.theta, excursions, seed)
        .iter()
        .map(|e| e.shortest)
        .collect();
    let fit = fit_merged_dwell_survival(&samples)
        .context("fitting the merged-dwell survival")
        .map_err(Failure::estimation)?;
    let law = fit.law;
    let report = DwellFitOutput {
        samples: fit.samples,
        fitted: law,
        rms_residual: fit.rms_residual,
        model,
        recovered_probs: recover_probs_from_merged_law(law.a, law.b, law.c, law.d)
            .map_err(|e| e.to_string()),
    };
    let out = OutDir::create(&common.out)?;
    let json = out.write_json("dwell_fit.json", &report)?;
    let mut sorted = samples;
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let t_max = sorted.last().copied().unwrap_or(0.0);
    let csv = out.write_with("dwell_fit.csv", |w| {
        writeln!(w, "t,empirical,fitted,model")?;
        for j in 0..=200 {
            let t = t_max * j as f64 / 200.0;
            let above = sorted.len() - sorted.partition_point(|&x| x <= t);
            writeln!(
                w,
                "{t},{},{},{}",
                above as f64 / n,
                law.survival(t),
                model.survival(t)
            )?;
        }
        Ok(())
    })?;
    println!(
        "fitted lambda2 {:.4} lambda3 {:.4} (A, B, C, D) = ({:.4}, {:.4}, {:.4}, {:.4}), rms {:.2e}",
        law.lambda2, law.lambda3, law.a, law.b, law.c, law.d, fit.rms_residual
    );
    println!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}
