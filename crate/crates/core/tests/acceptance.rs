//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Thresholds are fixed here; the numbers behind each verdict are
//! printed alongside.

use std::f64::consts::SQRT_2;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use surftension_core::cellproblem::{
    check_monotone, k_value, solve_profile_1d, solve_profile_nd, sweep_phi, CellSolution, PhiCurve, SolveOptions,
};
use surftension_core::energy::{check_min_identity, energy_e, energy_f, grad_f};
use surftension_core::fields::{gradient, hessian_norm, DensityField, Grid, GridField};
use surftension_core::potential::PotentialSpec;
use surftension_core::recovery::{probe_liminf, validate_limsup, RecoveryConfig};
use surftension_core::sharpinterface::{limit_energy, Atom, Laminate, SurfactantMeasure};
use surftension_core::waterfill::{objective_min_form, solve_lambda, verify_optimality};

type Verdict = (bool, String);

fn spec() -> PotentialSpec {
    PotentialSpec::prototype(vec![1.0, 0.0], 2.0, 2).expect("prototype")
}

fn gamma_max(spec: &PotentialSpec) -> f64 {
    2.5 * spec.a_norm()
}

fn random_field(grid: Grid, rng: &mut ChaCha8Rng, noise: f64) -> GridField {
    let d = grid.d();
    let coef: Vec<[f64; 5]> = (0..d).map(|_| [0; 5].map(|_| rng.gen_range(-1.0..1.0))).collect();
    let mut u = GridField::from_fn(grid, |x1, xn, o| {
        let tau = std::f64::consts::TAU;
        for (c, k) in coef.iter().enumerate() {
            o[c] = k[0] * xn.abs() + k[1] * (tau * x1).cos() * (3.0 * xn).sin() + k[2] * xn * xn + k[3] * (tau * x1 + 2.0 * xn).sin() * 0.3 + k[4] * 0.1;
        }
    });
    for v in u.values_mut() {
        *v += noise * rng.gen_range(-1.0..1.0);
    }
    u
}

fn c1_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let lambda = -rng.gen_range(0.0..10.0f64) * rng.gen::<f64>();
        let w = rng.gen_range(0.0..10.0f64) * rng.gen::<f64>();
        let (l, r) = check_min_identity(lambda, w).expect("valid pair");
        let scale = l.abs().max(r.abs());
        if scale > 0.0 {
            worst = worst.max((l - r).abs() / scale);
        }
    }
    (worst <= 1e-12, format!("10000 pairs, max relative gap {worst:.2e} (limit 1e-12)"))
}

fn c2_waterfill() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut violations) = (0.0f64, 0usize);
    for inst in 0..100 {
        let n = rng.gen_range(1..=16);
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let ws: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= ws);
        let total: f64 = g.iter().zip(&w).map(|(a, b)| a * b).sum();
        let gamma = rng.gen_range(0.0..1.2) * total;
        let r = solve_lambda(&g, &w, gamma).expect("instance");
        let gmax = g.iter().copied().fold(0.0, f64::max);
        let steps = 1_000_000;
        let mut best = f64::INFINITY;
        for s in 0..=steps {
            let lam = -gmax * s as f64 / steps as f64;
            let m: f64 = g.iter().zip(&w).map(|(gi, wi)| wi * (lam + gi).max(0.0)).sum();
            if m <= gamma + 1e-12 {
                best = best.min(objective_min_form(&g, &w, lam));
            }
        }
        worst = worst.max((best - r.objective).abs());
        let rep = verify_optimality(&g, &w, gamma, &r, 1000, 100 + inst).expect("report");
        violations += rep.violations.len();
    }
    (
        worst <= 1e-5 && violations == 0,
        format!("100 instances, max |brute − solver| {worst:.2e} (limit 1e-5), dominance violations {violations}"),
    )
}

fn c3_bridge() -> Verdict {
    let spec = spec();
    let grid = Grid::new_2d(2, 64, 64, 2).expect("grid");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let u = random_field(grid, &mut rng, 1e-3);
        let hn = hessian_norm(&u);
        let mut hs: Vec<f64> = hn.values().to_vec();
        hs.sort_by(f64::total_cmp);
        let lambda = -hs[rng.gen_range(0..hs.len())];
        let eps = rng.gen_range(0.02..0.5);
        let rho = DensityField::new(grid, hn.values().iter().map(|h| (lambda + h).max(0.0)).collect()).expect("density");
        let e = energy_e(&u, &rho, eps, &spec, None).expect("E").total;
        let f = energy_f(&u, lambda, eps, &spec, None).expect("F").total;
        worst = worst.max((e - f).abs() / f.abs());
    }
    (worst <= 1e-13, format!("50 fields on 64x64, max relative |E − F| {worst:.2e} (limit 1e-13)"))
}

/// Nearest-well and `min{λ², |H|²}` branch indicators per node.
fn branches(u: &GridField, lambda: f64) -> Vec<(bool, bool)> {
    let g = gradient(u, 2).expect("gradient");
    let hn = hessian_norm(u);
    (0..u.grid().nodes())
        .map(|n| {
            let m = g.at_node(n);
            // prototype wells ±a⊗e_N with a = e_1: nearest well is A iff ∂_N u_1 ≥ 0
            (m[1] >= 0.0, hn.values()[n] > lambda.abs())
        })
        .collect()
}

fn c4_gradient() -> Verdict {
    let spec = spec();
    let grid = Grid::new_2d(2, 16, 32, 2).expect("grid");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u = random_field(grid, &mut rng, 1e-2);
    let mut hs: Vec<f64> = hessian_norm(&u).values().to_vec();
    hs.sort_by(f64::total_cmp);
    let lambda = -hs[hs.len() / 2];
    let eps = 0.1;
    let g = grad_f(&u, lambda, eps, &spec).expect("grad");
    let step = 1e-6;
    let (mut good, mut probes, mut ties) = (0usize, 0usize, 0usize);
    let mut worst_ok: f64 = 0.0;
    let d = grid.d();
    while probes < 200 {
        let i = rng.gen_range(0..grid.n_prime());
        let k = rng.gen_range(grid.free_layers());
        let c = rng.gen_range(0..d);
        let dof = grid.node(i, k) * d + c;
        let mut up = u.clone();
        up.values_mut()[dof] += step;
        let mut dn = u.clone();
        dn.values_mut()[dof] -= step;
        if branches(&up, lambda) != branches(&dn, lambda) {
            ties += 1;
            continue;
        }
        let fd = (energy_f(&up, lambda, eps, &spec, None).expect("F").total - energy_f(&dn, lambda, eps, &spec, None).expect("F").total)
            / (2.0 * step);
        let an = g.values()[dof];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
        probes += 1;
        if rel < 1e-5 {
            good += 1;
            worst_ok = worst_ok.max(rel);
        }
    }
    let share = good as f64 / probes as f64;
    (share >= 0.99, format!("{good}/{probes} probes below 1e-5 relative ({ties} branch ties excluded), worst passing {worst_ok:.1e}"))
}

struct Shared {
    k: CellSolution,
    phi0: CellSolution,
    phimax: CellSolution,
    curve: Option<PhiCurve>,
}

fn c5_endpoints(sh: &Shared) -> Verdict {
    let ratio = sh.phi0.value / sh.phimax.value;
    let ok = (ratio / SQRT_2 - 1.0).abs() <= 0.02 && sh.phimax.lambda == 0.0;
    (
        ok,
        format!(
            "n=1024: Phi(0) = {:.8}, Phi(gamma_max = {:.2}) = {:.8} (lambda* = {}), ratio {:.8} vs sqrt2 (2% band)",
            sh.phi0.value,
            sh.phimax.gamma,
            sh.phimax.value,
            sh.phimax.lambda,
            ratio
        ),
    )
}

fn c6_monotone(sh: &mut Shared) -> Verdict {
    let spec = spec();
    let gm = gamma_max(&spec);
    let gammas: Vec<f64> = (0..12).map(|j| gm * j as f64 / 11.0).collect();
    let curve = match sweep_phi(&spec, &gammas, &[256, 1024], &SolveOptions::default()) {
        Ok(c) => c,
        Err(e) => return (false, format!("sweep failed: {e}")),
    };
    let k = sh.k.value;
    let phi0 = curve.points[0].phi;
    let mono = check_monotone(&curve, 1e-3 * phi0);
    let tol = 1e-3 * phi0;
    let outside: Vec<f64> = curve.points.iter().map(|p| p.phi).filter(|&v| v < k - tol || v > SQRT_2 * k + tol).collect();
    let ok = mono.passed && outside.is_empty() && curve.failures.is_empty();
    let line = format!(
        "12 budgets in [0, {gm:.2}]: monotone {} (worst rise {:.2e}), sandwich [{k:.6}, {:.6}] violations {}, values {:.5}..{:.5}",
        mono.passed,
        mono.worst_violation,
        SQRT_2 * k,
        outside.len(),
        curve.points.last().map_or(f64::NAN, |p| p.phi),
        phi0
    );
    sh.curve = Some(curve);
    (ok, line)
}

fn c7_reduction() -> Verdict {
    let spec = spec();
    let opts = SolveOptions::default();
    let grid = Grid::new_2d(2, 128, 128, opts.band).expect("grid");
    let mut parts = Vec::new();
    let mut ok = true;
    for gamma in [0.5, 1.0, 1.5] {
        let one = solve_profile_1d(&spec, gamma, 128, &opts).expect("1d");
        let two = match solve_profile_nd(&spec, gamma, grid, &opts, Some(&one)) {
            Ok(s) => s,
            Err(e) => return (false, format!("2D solve failed at gamma {gamma}: {e}")),
        };
        let rel = (two.value - one.value).abs() / one.value;
        let var = two.profile.max_prime_variance();
        ok &= rel <= 0.05 && var < 1e-4;
        parts.push(format!("g={gamma}: rel {rel:.1e} var {var:.1e}"));
    }
    (ok, format!("128x128 vs 1D (5%, var < 1e-4): {}", parts.join("; ")))
}

fn recovery_cfg(cell: &CellSolution, t: f64, eps: Vec<f64>) -> RecoveryConfig {
    let lam = Laminate::single(vec![1.0, 0.0], t).expect("laminate");
    RecoveryConfig::new(spec(), cell.clone(), lam, SurfactantMeasure::uniform(cell.gamma), eps)
}

fn c8_limsup(cell: &CellSolution) -> Verdict {
    let cfg = recovery_cfg(cell, 0.0, vec![0.01, 0.005, 0.0025]);
    let rep = match validate_limsup(&cfg) {
        Ok(r) => r,
        Err(e) => return (false, format!("recovery failed: {e}")),
    };
    let n_ok = rep.rows.iter().all(|r| r.n_last >= 512);
    let slope = rep.mass_slope.unwrap_or(f64::NAN);
    let pre = rep.rows.iter().filter(|r| r.pre_asymptotic).count();
    let ok = n_ok && (0.9..=1.05).contains(&rep.final_ratio) && rep.ratios_nonincreasing && (0.4..=0.6).contains(&slope) && pre == 0;
    let ratios: Vec<String> = rep.rows.iter().map(|r| format!("{:.10}@n{}", r.ratio, r.n_last)).collect();
    (
        ok,
        format!(
            "ratios {} nonincreasing {}, mass slope {slope:.4} (band [0.4, 0.6]), cutoff share {:.1e}, pre-asymptotic rows {pre}",
            ratios.join(" "),
            rep.ratios_nonincreasing,
            rep.final_cutoff_share
        ),
    )
}

fn c9_liminf(cell: &CellSolution) -> Verdict {
    let cfg = recovery_cfg(cell, 0.0, vec![0.01, 0.005, 0.0025]);
    match probe_liminf(&cfg, 200, 9) {
        Ok(r) => (
            r.passed(),
            format!(
                "200 trials at eps {:.4e}: min E/target {:.6} (floor 0.98), baseline {:.10}, violations {}",
                r.epsilon,
                r.min_ratio,
                r.baseline / r.target,
                r.violations.len()
            ),
        ),
        Err(e) => (false, format!("probe failed: {e}")),
    }
}

fn c10_atoms(cell: &CellSolution, curve: Option<&PhiCurve>) -> Verdict {
    let mut cfg = recovery_cfg(cell, -0.25, vec![0.004, 0.002, 0.001]);
    cfg.n_prime = 16;
    cfg.min_atom_distance = 0.3;
    let before = validate_limsup(&cfg);
    let lam = cfg.laminate.clone();
    let mu0 = cfg.measure.clone();
    cfg.measure.atoms = vec![Atom { location: vec![0.0, 0.2], mass: 0.6 }, Atom { location: vec![0.35, 0.15], mass: 0.4 }];
    let after = validate_limsup(&cfg);
    let (before, after) = match (before, after) {
        (Ok(b), Ok(a)) => (b, a),
        (Err(e), _) | (_, Err(e)) => return (false, format!("recovery failed: {e}")),
    };
    let mut limit_delta = 0.0;
    if let Some(c) = curve {
        let e0 = limit_energy(&lam, &mu0, c).expect("limit").value;
        let e1 = limit_energy(&lam, &cfg.measure, c).expect("limit").value;
        limit_delta = e1 - e0;
    }
    let target_delta = after.target.value - before.target.value;
    let dm: Vec<f64> = before.rows.iter().zip(&after.rows).map(|(b, a)| a.mass - b.mass).collect();
    let ok = limit_delta == 0.0 && target_delta == 0.0 && dm.iter().all(|m| (m - 1.0).abs() <= 1e-3) && curve.is_some();
    (
        ok,
        format!(
            "atoms of mass 1: limit energy change {limit_delta:e}, recovery target change {target_delta:e}, mass increase {:?}",
            dm.iter().map(|m| format!("{m:.12}")).collect::<Vec<_>>()
        ),
    )
}

fn main() -> ExitCode {
    let spec = spec();
    let opts = SolveOptions::default();
    let mut results: Vec<(usize, &str, Verdict, f64)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let t0 = Instant::now();
        let v = f();
        let secs = t0.elapsed().as_secs_f64();
        println!("{} {id:>2} {name}: {} [{secs:.1}s]", if v.0 { "PASS" } else { "FAIL" }, v.1);
        results.push((id, name, v, secs));
    };

    run(1, "identity", &mut c1_identity);
    run(2, "water-fill oracle", &mut c2_waterfill);
    run(3, "energy bridge", &mut c3_bridge);
    run(4, "gradient check", &mut c4_gradient);

    let t0 = Instant::now();
    let mut sh = Shared {
        k: k_value(&spec, 1024, &opts).expect("K"),
        phi0: solve_profile_1d(&spec, 0.0, 1024, &opts).expect("Phi(0)"),
        phimax: solve_profile_1d(&spec, gamma_max(&spec), 1024, &opts).expect("Phi(gamma_max)"),
        curve: None,
    };
    println!("     (endpoint solves {:.1}s, K = {:.10})", t0.elapsed().as_secs_f64(), sh.k.value);
    run(5, "Phi endpoint scaling", &mut || c5_endpoints(&sh));
    run(6, "Phi monotonicity", &mut || c6_monotone(&mut sh));
    run(7, "1D reduction", &mut c7_reduction);

    let cell = solve_profile_1d(&spec, 1.0, 256, &opts).expect("recovery cell");
    run(8, "limsup convergence", &mut || c8_limsup(&cell));
    run(9, "liminf probe", &mut || c9_liminf(&cell));
    run(10, "atom neutrality", &mut || c10_atoms(&cell, sh.curve.as_ref()));

    let failed = results.iter().filter(|r| !r.2 .0).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
