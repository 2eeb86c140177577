use approx::assert_relative_eq;
use proptest::prelude::*;

use surftension_core::cellproblem::{solve_profile_1d, sweep_phi, SolveOptions};
use surftension_core::fields::{apply_boundary_bands, Grid};
use surftension_core::potential::PotentialSpec;
use surftension_core::recovery::{validate_limsup, RecoveryConfig};
use surftension_core::sharpinterface::{eval_laminate, limit_energy, rasterize, Atom, Laminate, Patch, SurfactantMeasure};

fn spec() -> PotentialSpec {
    PotentialSpec::prototype(vec![1.0, 0.0], 2.0, 2).unwrap()
}

#[test]
fn json_round_trips() {
    let s: PotentialSpec = serde_json::from_str(r#"{"kind": "prototype_p", "a": [1.0, 0.0], "p": 2.0, "d": 2, "N": 2}"#).unwrap();
    assert_eq!(s, spec());
    let lam = Laminate::new(vec![0.0, 1.0], vec![1.0, 0.0], vec![-0.2, 0.1], false).unwrap();
    let back: Laminate = serde_json::from_str(&serde_json::to_string(&lam).unwrap()).unwrap();
    assert_eq!(back, lam);
    let mu = SurfactantMeasure {
        patches: vec![Patch { interface: 1, lo: vec![-0.5], hi: vec![0.2], density: 0.7 }],
        atoms: vec![Atom { location: vec![0.1, 0.4], mass: 0.3 }],
    };
    let back: SurfactantMeasure = serde_json::from_str(&serde_json::to_string(&mu).unwrap()).unwrap();
    assert_eq!(back, mu);
    // invariants are enforced on deserialization as well
    assert!(serde_json::from_str::<Laminate>(r#"{"gamma0": [1.0], "a": [1.0], "heights": []}"#).is_err());
}

#[test]
fn curve_feeds_limit_energy() {
    let curve = sweep_phi(&spec(), &[0.0, 0.5, 1.0, 2.5], &[96], &SolveOptions::default()).unwrap();
    let lam = Laminate::single(vec![1.0, 0.0], 0.0).unwrap();
    let phi = |g: f64| curve.interpolate(g).0;
    let e = limit_energy(&lam, &SurfactantMeasure::uniform(1.0), &curve).unwrap();
    assert!(!e.extrapolated);
    assert_relative_eq!(e.value, phi(1.0));
    let empty = limit_energy(&lam, &SurfactantMeasure::default(), &curve).unwrap().value;
    assert_relative_eq!(empty, curve.points[0].phi);
    // more surfactant never raises the limit energy
    assert!(e.value <= empty);
    let beyond = limit_energy(&lam, &SurfactantMeasure::uniform(3.0), &curve).unwrap();
    assert!(beyond.extrapolated);
}

#[test]
fn half_covered_interface_recovers_mixed_target() {
    let s = spec();
    let opts = SolveOptions::default();
    let cell = solve_profile_1d(&s, 1.0, 64, &opts).unwrap();
    let zero = solve_profile_1d(&s, 0.0, 64, &opts).unwrap();
    let lam = Laminate::single(vec![1.0, 0.0], 0.0).unwrap();
    let mu = SurfactantMeasure { patches: vec![Patch { interface: 0, lo: vec![-0.25], hi: vec![0.25], density: 1.0 }], atoms: vec![] };
    let target = 0.5 * (cell.value + zero.value);
    let mut cfg = RecoveryConfig::new(s, cell, lam, mu, vec![0.01, 0.005]);
    cfg.cell_zero = Some(zero);
    cfg.n_prime = 64;
    cfg.delta = 0.05;
    let rep = validate_limsup(&cfg).unwrap();
    assert_relative_eq!(rep.target.value, target, max_relative = 1e-12);
    for r in &rep.rows {
        assert!((r.ratio - 1.0).abs() < 0.05, "{}", r.ratio);
        assert!((r.mass - 0.5).abs() < 0.01, "{} {:?}", r.mass, r.notes);
    }
    assert!(rep.w1p_decreasing);
}

#[test]
fn rasterized_laminate_has_pinned_bands() {
    let g = Grid::new_2d(2, 8, 64, 3).unwrap();
    let lam = Laminate::single(vec![1.0, 0.0], 0.0).unwrap();
    let u = rasterize(&lam, &g).unwrap();
    let again = apply_boundary_bands(&u, &[1.0, 0.0]).unwrap();
    for (x, y) in u.values().iter().zip(again.values()) {
        assert!((x - y).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn laminates_are_continuous(mut hs in proptest::collection::vec(-0.45f64..0.45, 1..5), bottom in any::<bool>()) {
        hs.sort_by(f64::total_cmp);
        hs.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        let lam = Laminate::new(vec![0.0, 0.5], vec![1.0, 0.0], hs.clone(), bottom).unwrap();
        for &t in &hs {
            let l = eval_laminate(&lam, &[0.0, t - 1e-10]).unwrap();
            let r = eval_laminate(&lam, &[0.0, t + 1e-10]).unwrap();
            prop_assert!((l[0] - r[0]).abs() < 1e-9);
            prop_assert_eq!(l[1], 0.5);
            prop_assert!(lam.gradient_sign(t - 1e-6) != lam.gradient_sign(t + 1e-6));
        }
    }
}
