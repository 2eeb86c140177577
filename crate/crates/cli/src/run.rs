use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde_json::{json, Value};
use surftension_core::cellproblem::{solve_profile_1d, solve_profile_nd, sweep_phi, CellSolution, PhiPoint};
use surftension_core::fields::{hessian_norm, Grid, GridField};
use surftension_core::potential::check_assumptions_seeded;
use surftension_core::recovery::{build_recovery, limsup_row, probe_liminf, summarize_limsup, RecoveryConfig};
use surftension_core::sharpinterface::{Laminate, SurfactantMeasure};

use crate::artifacts::{write_csv, write_json, Row};
use crate::config::{RunConfig, Task};

pub struct Outcome {
    pub artifacts: Vec<String>,
    /// Convergence and trend flags; fatal under `--strict`.
    pub flags: Vec<String>,
    pub summary: Value,
}

impl Outcome {
    fn new() -> Self {
        Outcome { artifacts: Vec::new(), flags: Vec::new(), summary: Value::Null }
    }
}

pub fn execute(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    pool.install(|| match cfg.task {
        Task::CheckPotential => check_potential(cfg, out),
        Task::Phi1d | Task::Sweep => sweep(cfg, out),
        Task::Phi2d => phi_2d(cfg, out),
        Task::Recovery => recovery(cfg, out),
        Task::LiminfProbe => liminf(cfg, out),
    })
}

fn core_err(e: surftension_core::Error) -> anyhow::Error {
    anyhow!("{e}")
}

fn check_potential(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let (samples, tol) = cfg.check.as_ref().map_or((10_000, 1e-9), |c| (c.samples, c.tol));
    let rep = check_assumptions_seeded(&cfg.potential, samples, tol, cfg.seed).map_err(core_err)?;
    let mut o = Outcome::new();
    write_json(&out.join("assumptions.json"), &rep)?;
    o.artifacts.push("assumptions.json".into());
    for c in rep.checks.iter().filter(|c| !c.passed) {
        o.flags.push(format!("hypothesis {} failed: {}", c.name, c.detail));
    }
    o.summary = json!({ "all_passed": rep.all_passed() });
    Ok(o)
}

const PHI_HEADER: [&str; 7] = ["gamma", "phi", "lambda", "L", "iterations", "grad_norm", "converged"];

fn phi_row(p: &PhiPoint) -> Row {
    Row::default()
        .num(p.gamma)
        .num(p.phi)
        .num(p.lambda)
        .num(p.scale_l)
        .int(p.iterations as u64)
        .num(p.grad_norm)
        .flag(p.converged)
}

/// Every budget is solved on its own (cold start per resolution), so the
/// rows do not depend on `--jobs`.
fn sweep(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let curves: Vec<_> = cfg
        .gammas
        .par_iter()
        .map(|&g| sweep_phi(&cfg.potential, &[g], &cfg.schedule, &cfg.solver))
        .collect::<std::result::Result<_, _>>()
        .map_err(core_err)?;
    let mut o = Outcome::new();
    let mut points = Vec::new();
    for c in &curves {
        o.flags.extend(c.failures.iter().cloned());
        points.extend(c.points.iter().cloned());
    }
    for p in points.iter().filter(|p| !p.converged) {
        o.flags.push(format!("solver did not converge at gamma = {}", p.gamma));
    }
    write_csv(&out.join("phi_curve.csv"), &PHI_HEADER, points.iter().map(phi_row).collect())?;
    o.artifacts.push("phi_curve.csv".into());

    let refine: Vec<Row> = points
        .iter()
        .flat_map(|p| p.refinement.iter().map(move |(n, v)| Row::default().num(p.gamma).int(*n as u64).num(*v)))
        .collect();
    write_csv(&out.join("phi_refinement.csv"), &["gamma", "n", "phi"], refine)?;
    o.artifacts.push("phi_refinement.csv".into());

    if cfg.dump_fields {
        let n = *cfg.schedule.last().expect("validated");
        let sols: Vec<CellSolution> =
            cfg.gammas.par_iter().map(|&g| solve_profile_1d(&cfg.potential, g, n, &cfg.solver)).collect::<std::result::Result<_, _>>().map_err(core_err)?;
        for (j, s) in sols.iter().enumerate() {
            let name = format!("profile_{j}.csv");
            dump_profile(&out.join(&name), &s.profile)?;
            o.artifacts.push(name);
        }
    }
    o.summary = json!({ "points": points.len() });
    Ok(o)
}

fn dump_profile(path: &Path, u: &GridField) -> Result<()> {
    let g = *u.grid();
    let d = g.d();
    let mut header = vec!["x1".to_string(), "xN".to_string()];
    header.extend((0..d).map(|c| format!("u{c}")));
    header.push("hess_norm".into());
    let h = hessian_norm(u);
    let mut rows = Vec::with_capacity(g.nodes());
    for i in 0..g.n_prime() {
        for k in 0..g.n_last() {
            let mut r = Row::default().num(if g.dim() == 2 { g.x_prime(i) } else { 0.0 }).num(g.x_last(k));
            for &v in u.at(i, k) {
                r = r.num(v);
            }
            rows.push(r.num(h.values()[g.node(i, k)]));
        }
    }
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &refs, rows)
}

fn phi_2d(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let gs = cfg.grid.as_ref().expect("validated");
    let grid = Grid::new_2d(cfg.potential.d(), gs.n_prime, gs.n_last, cfg.solver.band).map_err(core_err)?;
    let results: Vec<(CellSolution, CellSolution)> = cfg
        .gammas
        .par_iter()
        .map(|&g| {
            let one = solve_profile_1d(&cfg.potential, g, gs.n_last, &cfg.solver)?;
            let two = solve_profile_nd(&cfg.potential, g, grid, &cfg.solver, Some(&one))?;
            Ok((one, two))
        })
        .collect::<std::result::Result<_, surftension_core::Error>>()
        .map_err(core_err)?;
    let mut o = Outcome::new();
    let mut rows = Vec::new();
    for (g, (one, two)) in cfg.gammas.iter().zip(&results) {
        if !two.diagnostics.converged {
            o.flags.push(format!("2D solver did not converge at gamma = {g}"));
        }
        if two.diagnostics.scale_at_bracket_end {
            o.flags.push(format!("2D scale search ended at the bracket at gamma = {g}"));
        }
        rows.push(
            Row::default()
                .num(*g)
                .num(one.value)
                .num(two.value)
                .num((two.value - one.value).abs() / one.value)
                .num(two.profile.max_prime_variance())
                .num(two.scale_l)
                .int(two.diagnostics.iterations as u64)
                .flag(two.diagnostics.converged),
        );
    }
    write_csv(
        &out.join("phi_2d.csv"),
        &["gamma", "phi_1d", "phi_2d", "rel_diff", "prime_variance", "L", "iterations", "converged"],
        rows,
    )?;
    o.artifacts.push("phi_2d.csv".into());
    if cfg.dump_fields {
        for (j, (_, two)) in results.iter().enumerate() {
            let name = format!("profile_2d_{j}.csv");
            dump_profile(&out.join(&name), &two.profile)?;
            o.artifacts.push(name);
        }
    }
    Ok(o)
}

fn recovery_config(cfg: &RunConfig) -> Result<(RecoveryConfig, Vec<String>)> {
    let r = cfg.recovery.as_ref().expect("validated");
    let a = cfg.potential.a().to_vec();
    let laminate = Laminate::single(a, r.height).map_err(core_err)?;
    let measure = r.measure.clone().unwrap_or_else(|| SurfactantMeasure::uniform(r.gamma));
    let mut densities: Vec<f64> = measure.patches.iter().map(|p| p.density).filter(|d| *d > 0.0).collect();
    densities.dedup();
    if densities.iter().any(|d| (d - densities[0]).abs() > 1e-12) {
        bail!("field `recovery.measure`: all patches must share one density");
    }
    let gamma = densities.first().copied().unwrap_or(0.0);
    let covered: f64 = measure.patches.iter().filter(|p| p.density > 0.0).map(|p| p.area()).sum();
    let mut flags = Vec::new();
    let solve = |g: f64| -> Result<CellSolution> {
        let s = solve_profile_1d(&cfg.potential, g, r.n_cell, &cfg.solver).map_err(core_err)?;
        Ok(s)
    };
    let cell = solve(gamma)?;
    let zero = if gamma > 0.0 && covered < 1.0 - 1e-12 { Some(solve(0.0)?) } else { None };
    for c in std::iter::once(&cell).chain(zero.as_ref()) {
        if !c.diagnostics.converged {
            flags.push(format!("cell solver did not converge at gamma = {}", c.gamma));
        }
    }
    let mut rc = RecoveryConfig::new(cfg.potential.clone(), cell, laminate, measure, r.epsilons.clone());
    rc.cell_zero = zero;
    rc.delta = r.delta;
    rc.tilde_delta = r.tilde_delta;
    rc.n_prime = r.n_prime;
    rc.psi_margin = r.psi_margin;
    rc.min_atom_distance = r.min_atom_distance;
    if let Some(p) = &cfg.probe {
        rc.probe_amplitude = p.amplitude;
    }
    Ok((rc, flags))
}

const RECOVERY_HEADER: [&str; 20] = [
    "epsilon_nominal",
    "epsilon",
    "n_last",
    "n_prime",
    "energy",
    "potential",
    "second_gradient",
    "surfactant",
    "target",
    "ratio",
    "mass",
    "mass_target",
    "mass_error",
    "w1p_error",
    "cutoff_share",
    "weak_0",
    "weak_1",
    "weak_2",
    "weak_3",
    "weak_4",
];

fn recovery(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let (rc, flags) = recovery_config(cfg)?;
    let target = rc.target().map_err(core_err)?;
    let rows = rc.epsilons.par_iter().map(|&e| limsup_row(&rc, e)).collect::<std::result::Result<Vec<_>, _>>().map_err(core_err)?;
    let rep = summarize_limsup(rows, target);
    let mut o = Outcome::new();
    o.flags = flags;
    if !rep.ratios_nonincreasing {
        o.flags.push("energy ratios are not nonincreasing in epsilon".into());
    }
    if target.extrapolated {
        o.flags.push("target used a clamped surface-tension value".into());
    }
    let mut table = Vec::new();
    for r in &rep.rows {
        let mut row = Row::default()
            .num(r.epsilon_nominal)
            .num(r.epsilon)
            .int(r.n_last as u64)
            .int(r.n_prime as u64)
            .num(r.energy.total)
            .num(r.energy.potential)
            .num(r.energy.second_gradient)
            .num(r.energy.surfactant)
            .num(r.target)
            .num(r.ratio)
            .num(r.mass)
            .num(r.mass_target)
            .num(r.mass_error)
            .num(r.w1p_error)
            .num(r.cutoff_share);
        for w in &r.weak_errors {
            row = row.num(*w);
        }
        table.push(row.flag(r.pre_asymptotic));
    }
    let mut header = RECOVERY_HEADER.to_vec();
    header.push("pre_asymptotic");
    write_csv(&out.join("recovery_table.csv"), &header, table)?;
    write_json(&out.join("recovery_report.json"), &rep)?;
    o.artifacts.extend(["recovery_table.csv".into(), "recovery_report.json".into()]);
    if cfg.dump_fields {
        let eps = *rc.epsilons.last().expect("validated");
        let pair = build_recovery(&rc, eps).map_err(core_err)?;
        dump_profile(&out.join("recovery_u.csv"), &pair.u)?;
        let g = *pair.rho.grid();
        let rows = (0..g.nodes()).map(|n| Row::default().num(g.x_prime(n / g.n_last())).num(g.x_last(n % g.n_last())).num(pair.rho.values()[n])).collect();
        write_csv(&out.join("recovery_rho.csv"), &["x1", "xN", "rho"], rows)?;
        o.artifacts.extend(["recovery_u.csv".into(), "recovery_rho.csv".into()]);
    }
    o.summary = json!({
        "final_ratio": rep.final_ratio,
        "ratios_nonincreasing": rep.ratios_nonincreasing,
        "mass_slope": rep.mass_slope,
        "target": rep.target.value,
    });
    Ok(o)
}

fn liminf(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let (rc, flags) = recovery_config(cfg)?;
    let trials = cfg.probe.as_ref().map_or(200, |p| p.trials);
    let rep = probe_liminf(&rc, trials, cfg.seed).map_err(core_err)?;
    let mut o = Outcome::new();
    o.flags = flags;
    if !rep.passed() {
        o.flags.push(format!("{} trials fell below 0.98 of the target", rep.violations.len()));
    }
    let rows = rep
        .energies
        .iter()
        .zip(&rep.amplitudes)
        .enumerate()
        .map(|(j, (e, a))| Row::default().int(j as u64).num(*a).num(*e).num(e / rep.target))
        .collect();
    write_csv(&out.join("liminf_trials.csv"), &["trial", "amplitude", "energy", "ratio"], rows)?;
    let mut brief = rep.clone();
    brief.energies.clear();
    brief.amplitudes.clear();
    write_json(&out.join("liminf_report.json"), &brief)?;
    o.artifacts.extend(["liminf_trials.csv".into(), "liminf_report.json".into()]);
    o.summary = json!({ "min_ratio": rep.min_ratio, "violations": rep.violations.len() });
    Ok(o)
}

pub fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}
