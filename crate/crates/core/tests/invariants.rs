use hypercone::coefficients::{CoefficientFamily, ConeRadii};
use hypercone::matcore::{psd_bounds, vec_norm, Mat};
use hypercone::mollify::{mollifier_bounds_report, mollify};
use hypercone::solver::{solve_lattice, solve_mode_rk4, DataPreset, InitialData, LatticeOptions, LatticeProblem, ModeProblem};
use hypercone::symmetrizer::{presets, Symmetrizer, SymmetrizerTable, BOUNDS_SLACK};
use hypercone::verify::{cone_check, energy_trace, probe_magnitudes, pw_probe, PwSettings, DEFAULT_THRESHOLD};
use num_complex::Complex64 as C;
use proptest::prelude::*;

fn spd(angle: f64, a: f64, b: f64) -> Vec<[f64; 2]> {
    let (s, c) = angle.sin_cos();
    let q = Mat::from_rows(&[&[c, -s], &[s, c]]);
    let m = &(&q * &Mat::diag_real(&[a, b])) * &q.transpose();
    m.as_slice().iter().map(|z| [z.re, z.im]).collect()
}

fn table(knots: &[(f64, f64, f64, f64, f64, f64)]) -> Symmetrizer {
    let k = knots.len();
    let times: Vec<f64> = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
    let values = knots.iter().map(|&(a1, l1, h1, a2, l2, h2)| vec![spd(a1, l1, h1), spd(a2, l2, h2)]).collect();
    SymmetrizerTable { m: 2, lambda: 1.0, big_lambda: 3.0, times, directions: vec![vec![1.0], vec![-1.0]], values }.into_symmetrizer().unwrap()
}

fn knot() -> impl Strategy<Value = (f64, f64, f64, f64, f64, f64)> {
    (0.0..6.3f64, 1.0..3.0f64, 1.0..3.0f64, 0.0..6.3f64, 1.0..3.0f64, 1.0..3.0f64)
}

fn transport(t_final: f64) -> CoefficientFamily {
    CoefficientFamily::constant(vec![Mat::from_rows(&[&[1.0]])], t_final).unwrap()
}

fn wave() -> Mat {
    Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mollifier_bounds_hold_for_sampled_symmetrizers(knots in prop::collection::vec(knot(), 3..8), eps in 0.02..0.3f64, sign in prop::bool::ANY) {
        let s = table(&knots);
        let ms = mollify(&s, eps).unwrap();
        let xi = [if sign { 1.0 } else { -1.0 }];
        let r = mollifier_bounds_report(&ms, &xi).unwrap();
        prop_assert!(r.ratio1 <= 1.0 && r.ratio2 <= 1.0, "{} {}", r.ratio1, r.ratio2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mollified_rotation_stays_within_bounds(omega in 0.0..20.0f64, t in 0.0..1.0f64, eps in 0.005..0.9f64) {
        let s = presets::rotating(omega, 1.0).unwrap();
        let (lo, hi) = psd_bounds(&mollify(&s, eps).unwrap().eval(t, &[1.0]).unwrap()).unwrap();
        prop_assert!(lo >= 1.0 - BOUNDS_SLACK && hi <= 3.0 + BOUNDS_SLACK);
    }

    #[test]
    fn symmetric_modes_are_unitary(a in -1.0..1.0f64, b in -1.0..1.0f64, d in -1.0..1.0f64, xi in -5.0..5.0f64) {
        let m = Mat::from_rows(&[&[a, b], &[b, d]]);
        let c = CoefficientFamily::constant(vec![m], 1.0).unwrap();
        let u0 = vec![C::new(0.6, -0.2), C::new(0.1, 0.7)];
        let tr = solve_mode_rk4(&ModeProblem::real(&c, &[xi], u0.clone(), 256)).unwrap();
        let n0 = vec_norm(&u0);
        for n in tr.norms() {
            prop_assert!((n - n0).abs() <= 1e-8 * n0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn lattice_solve_is_linear(alpha in -2.0..2.0f64, beta in -2.0..2.0f64, p in -1.0..1.0f64, q in -1.0..1.0f64) {
        let c = CoefficientFamily::smooth(vec![wave()], 2.0, 0.5).unwrap();
        let radii = ConeRadii::new(&c, 1.0, 1.0).unwrap();
        let opts = LatticeOptions { output_times: vec![0.5], keep_trajectories: false };
        let run = |pol: Vec<f64>| {
            let lp = LatticeProblem::new(1, 2, 8.0, 128, InitialData::new(DataPreset::Bump, 0.75, vec![0.0], pol));
            solve_lattice(&lp, &c, &radii, 64, &opts).unwrap().snapshots[0].field.clone()
        };
        let u = run(vec![1.0, p]);
        let v = run(vec![q, 1.0]);
        let w = run(vec![alpha + beta * q, alpha * p + beta]);
        let scale = w.iter().chain(&u).chain(&v).fold(0.0f64, |m, x| m.max(x.abs()));
        for ((a, b), c) in u.iter().zip(&v).zip(&w) {
            prop_assert!((alpha * a + beta * b - c).abs() <= 1e-9 * scale);
        }
    }
}

#[test]
fn real_data_gives_real_fields_on_every_preset() {
    let families = [
        CoefficientFamily::constant(vec![wave()], 0.5).unwrap(),
        CoefficientFamily::smooth(vec![Mat::from_rows(&[&[1.0, 1.0], &[0.0, -1.0]])], 3.0, 0.5).unwrap(),
        CoefficientFamily::holder(vec![wave()], 0.25, 0.5, 0.5, 0.5).unwrap(),
        CoefficientFamily::piecewise(vec![0.2], vec![vec![wave()], vec![wave().scale(0.5)]], 0.5).unwrap(),
    ];
    for c in &families {
        let radii = ConeRadii::new(c, 0.5, 4.0).unwrap();
        let lp = LatticeProblem::new(1, 2, 16.0, 256, InitialData::new(DataPreset::Bump, 0.5, vec![0.0], vec![1.0, -0.5]));
        let sol = solve_lattice(&lp, c, &radii, 128, &LatticeOptions { output_times: vec![0.25, 0.5], keep_trajectories: false }).unwrap();
        for s in &sol.snapshots {
            assert!(s.max_imag_residue <= 1e-9 * s.max_abs, "{} vs {}", s.max_imag_residue, s.max_abs);
        }
    }
}

#[test]
fn envelope_is_monotone_without_forcing() {
    let c = CoefficientFamily::smooth(vec![Mat::from_rows(&[&[1.0, 1.0], &[0.0, -1.0]])], 3.0, 1.0).unwrap();
    let s = presets::rotating(2.0, 1.0).unwrap();
    for xi in [1.0, 5.0, 20.0] {
        let zeta = [C::new(xi, 0.0)];
        let tr = solve_mode_rk4(&ModeProblem::real(&c, &[xi], vec![C::new(1.0, 0.0), C::new(0.5, 0.5)], 256)).unwrap();
        let et = energy_trace(&tr, &s, &c, &zeta, None).unwrap();
        assert!(et.envelope.windows(2).all(|w| w[1] >= w[0]));
        assert!(et.pass());
    }
}

#[test]
fn pw_slope_reproduces_data_radius() {
    for (data, r) in [
        (InitialData::new(DataPreset::Bump, 0.5, vec![0.0], vec![1.0]), 0.5),
        (InitialData::new(DataPreset::Ring, 0.75, vec![0.0], vec![1.0]), 0.75),
        (InitialData::new(DataPreset::Hole { width: 0.5 }, 0.5, vec![0.0], vec![1.0]), 1.0),
    ] {
        let lp = LatticeProblem::new(1, 1, 8.0, 512, data);
        let settings = PwSettings::standard(1, 2, 12, r, 0.05);
        let rep = pw_probe(&lp.sample_initial(), &lp, 0.0, &settings, r).unwrap();
        for d in &rep.directions {
            assert!((d.slope - r).abs() <= 0.05 * r, "{:?}: {} vs {r}", lp.data.preset, d.slope);
        }
    }
}

#[test]
fn pw_slope_never_exceeds_measured_radius() {
    let c = transport(1.0);
    let radii = ConeRadii::new(&c, 0.5, 1.0).unwrap();
    let lp = LatticeProblem::new(1, 1, 8.0, 512, InitialData::new(DataPreset::Bump, 0.5, vec![0.0], vec![1.0]));
    let times = vec![0.25, 0.5, 0.75, 1.0];
    let sol = solve_lattice(&lp, &c, &radii, 512, &LatticeOptions { output_times: times, keep_trajectories: false }).unwrap();
    let cone = cone_check(&sol, &radii, DEFAULT_THRESHOLD).unwrap();
    let h = lp.spacing();
    for (snap, row) in sol.snapshots.iter().zip(&cone.rows) {
        let r = radii.forward(snap.t).unwrap();
        let settings = PwSettings { magnitudes: probe_magnitudes(r, 12), ..PwSettings::standard(1, 2, 12, r, 0.05) };
        let rep = pw_probe(&snap.field, &lp, snap.t, &settings, r).unwrap();
        assert!(rep.max_slope <= (row.measured + 2.0 * h) * 1.05, "t = {}: {} vs {}", snap.t, rep.max_slope, row.measured);
    }
}
