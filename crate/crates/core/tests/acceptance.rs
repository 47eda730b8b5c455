//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hypercone::cli::{self, Command, LoadedConfig, RunOptions};
use hypercone::coefficients::{CoefficientFamily, ConeRadii};
use hypercone::matcore::{expm, psd_bounds, vec_norm, Mat};
use hypercone::mollify::{mollifier_bounds_report, mollify};
use hypercone::solver::{
    periodic_distance, solve_lattice, solve_mode_picard, solve_mode_rk4, DataPreset, InitialData, LatticeOptions, LatticeProblem, LatticeSolution, ModeProblem,
};
use hypercone::symbol::sample_grid;
use hypercone::symmetrizer::{adjoint_check, presets, validate, Symmetrizer, BOUNDS_SLACK};
use hypercone::verify::{bound_report_i, cone_check, dod_check, energy_sweep, pw_probe, support_radius, PwSettings, DEFAULT_THRESHOLD};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let v = f();
    let elapsed = start.elapsed();
    match limit {
        Some(l) if elapsed > l => Verdict::new(false, format!("{}; runtime {:.2?} exceeds {:.0?}", v.detail, elapsed, l)),
        _ => Verdict::new(v.pass, format!("{}; runtime {:.2?}", v.detail, elapsed)),
    }
}

fn mat(rows: &[&[f64]]) -> Mat {
    Mat::from_rows(rows)
}

fn skew_b() -> Mat {
    mat(&[&[1.0, 1.0], &[0.0, -1.0]])
}

fn wave_b() -> Mat {
    mat(&[&[0.0, 1.0], &[1.0, 0.0]])
}

fn strict_families() -> Vec<(&'static str, CoefficientFamily)> {
    let sym2 = vec![mat(&[&[1.0, 0.0], &[0.0, -1.0]]), wave_b()];
    vec![
        ("constant", CoefficientFamily::constant(vec![skew_b()], 1.0).unwrap()),
        ("smooth", CoefficientFamily::smooth(vec![skew_b()], 3.0, 1.0).unwrap()),
        ("holder", CoefficientFamily::holder(vec![skew_b()], 0.5, 0.5, 0.5, 1.0).unwrap()),
        ("piecewise", CoefficientFamily::piecewise(vec![0.5], vec![vec![skew_b()], vec![mat(&[&[2.0, 0.5], &[0.0, -1.0]])]], 1.0).unwrap()),
        ("constant-2d", CoefficientFamily::constant(sym2.clone(), 1.0).unwrap()),
        ("smooth-2d", CoefficientFamily::smooth(sym2, 2.0, 1.0).unwrap()),
    ]
}

/// Symmetrizer presets used for the mollification suite.
fn mollify_presets() -> Vec<Symmetrizer> {
    let smooth = CoefficientFamily::smooth(vec![skew_b()], 3.0, 1.0).unwrap();
    vec![
        presets::constant(Mat::diag_real(&[1.0, 3.0]), 1.0).unwrap(),
        presets::linear_scalar(2, 1.0, 0.5, 1.0).unwrap(),
        presets::rotating(3.0, 1.0).unwrap(),
        presets::holder(2, 0.5, 0.5, 1.0).unwrap(),
        presets::jump(0.5, 1.0).unwrap(),
        Symmetrizer::build_strict(&smooth).unwrap(),
    ]
}

fn criterion_1() -> Verdict {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (name, c) in strict_families() {
        let s = Symmetrizer::build_strict(&c).unwrap();
        let samples = if c.n() == 1 { sample_grid(&c, 256, 2, 1) } else { sample_grid(&c, 64, 8, 1) };
        assert_eq!(samples.len(), 512);
        let rep = validate(&s, &c, &samples);
        let adj = adjoint_check(&s, &c, &samples).unwrap();
        let w = rep.checks.iter().chain(&adj.checks).map(|k| k.worst).fold(0.0, f64::max);
        worst = worst.max(w);
        if !(rep.pass && adj.pass && w <= 1e-9) {
            failures.push(name);
        }
    }
    Verdict::new(failures.is_empty(), format!("worst violation {worst:.2e} over 6 presets x 512 samples; failing {failures:?}"))
}

fn matrix_bounds_suite(skew: f64, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut total = 0;
    for s in mollify_presets() {
        for _ in 0..1000 {
            let t = rng.gen_range(0.0..s.t_final());
            let eps = rng.gen_range(0.01..0.5);
            let xi = [if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(0.1..10.0)];
            let mut ms = mollify(&s, eps).unwrap();
            if skew != 0.0 {
                ms = ms.with_skew(skew);
            }
            let (lo, hi) = psd_bounds(&ms.eval(t, &xi).unwrap()).unwrap();
            total += 1;
            if lo < s.lambda() - BOUNDS_SLACK || hi > s.big_lambda() + BOUNDS_SLACK {
                violations += 1;
            }
        }
    }
    (violations, total)
}

fn criterion_2() -> Verdict {
    let (violations, total) = matrix_bounds_suite(0.0, 2);
    let mut worst = (0.0f64, 0.0f64);
    for s in mollify_presets() {
        for eps in [0.2, 0.1, 0.05, 0.02] {
            let ms = mollify(&s, eps).unwrap();
            for xi in [[1.0], [-1.0]] {
                let r = mollifier_bounds_report(&ms, &xi).unwrap();
                worst.0 = worst.0.max(r.ratio1);
                worst.1 = worst.1.max(r.ratio2);
            }
        }
    }
    let pass = violations == 0 && worst.0 <= 1.0 && worst.1 <= 1.0;
    Verdict::new(pass, format!("{violations}/{total} matrix-bound violations; worst ratios {:.3} / {:.3} over 6 presets incl. jump", worst.0, worst.1))
}

fn rel_err(a: &[C], b: &[C]) -> f64 {
    let d: Vec<C> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    vec_norm(&d) / vec_norm(b)
}

fn expm_oracle(a: &Mat, xi: f64, t: f64, u0: &[C]) -> Vec<C> {
    expm(&a.scale(xi).scale_complex(C::new(0.0, -1.0)), t).unwrap().matvec(u0)
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t_final = 1.0;
    let mut worst_expm = (0.0f64, 0.0f64);
    for target in [1.0, 2.5, 5.0, 7.5, 10.0] {
        for _ in 0..4 {
            let m = rng.gen_range(1..=3usize);
            let a = Mat::from_real(m, &(0..m * m).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
            let xi = target / (hypercone::matcore::op_norm(&a) * t_final);
            let c = CoefficientFamily::constant(vec![a.clone()], t_final).unwrap();
            let u0: Vec<C> = (0..m).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let tr = solve_mode_rk4(&ModeProblem::real(&c, &[xi], u0.clone(), 256)).unwrap();
            let e = rel_err(tr.last(), &expm_oracle(&a, xi, t_final, &u0));
            if e > worst_expm.0 {
                worst_expm = (e, target);
            }
        }
    }

    let mut worst_picard = 0.0f64;
    for _ in 0..4 {
        let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let c = CoefficientFamily::smooth(vec![Mat::from_real(2, &b).unwrap()], rng.gen_range(1.0..4.0), 1.0).unwrap();
        let u0 = vec![C::new(1.0, 0.0), C::new(0.0, -0.5)];
        let p = ModeProblem::real(&c, &[1.0], u0, 512);
        let rk = solve_mode_rk4(&p).unwrap();
        let pc = solve_mode_picard(&p, 40).unwrap();
        let e = rk.values.iter().zip(&pc.values).map(|(a, b)| rel_err(b, a)).fold(0.0, f64::max);
        worst_picard = worst_picard.max(e);
    }

    let a = mat(&[&[0.3, 1.0], &[0.2, -0.7]]);
    let c = CoefficientFamily::constant(vec![a.clone()], 1.0).unwrap();
    let u0 = vec![C::new(1.0, 0.0), C::new(0.0, 1.0)];
    let exact = expm_oracle(&a, 8.0, 1.0, &u0);
    let errs: Vec<f64> =
        [32, 64, 128].iter().map(|&n| rel_err(solve_mode_rk4(&ModeProblem::real(&c, &[8.0], u0.clone(), n)).unwrap().last(), &exact)).collect();
    let factor = (errs[0] / errs[1]).min(errs[1] / errs[2]);

    let pass = worst_expm.0 <= 1e-8 && worst_picard <= 1e-6 && factor >= 12.0;
    Verdict::new(
        pass,
        format!("rk4 vs expm worst {:.2e} at |A|T = {}; picard vs rk4 {:.2e}; halving factor {:.2}", worst_expm.0, worst_expm.1, worst_picard, factor),
    )
}

fn energy_run(c: &CoefficientFamily) -> (usize, f64, f64, bool) {
    let s = Symmetrizer::build_strict(c).unwrap();
    let radii = ConeRadii::new(c, 1.0, s.big_lambda()).unwrap();
    let lp = LatticeProblem::new(1, 2, 16.0, 256, InitialData::new(DataPreset::Bump, 1.0, vec![0.0], vec![1.0, 0.5]));
    let sol = solve_lattice(&lp, c, &radii, 256, &LatticeOptions { output_times: vec![c.t_final()], keep_trajectories: true }).unwrap();
    let sweep = energy_sweep(&sol, &s, c).unwrap();
    (sweep.modes_checked, sweep.worst_equivalence, sweep.worst_margin_ratio, sweep.pass)
}

fn criterion_4() -> Verdict {
    let smooth = CoefficientFamily::smooth(vec![skew_b()], 3.0, 1.0).unwrap();
    let holder = CoefficientFamily::holder(vec![skew_b()], 0.5, 0.5, 0.5, 1.0).unwrap();
    let a = energy_run(&smooth);
    let b = energy_run(&holder);
    Verdict::new(
        a.3 && b.3,
        format!(
            "smooth: {} modes, equivalence {:.1e}, min margin/RHS {:.3}; holder: {} modes, equivalence {:.1e}, min margin/RHS {:.3}",
            a.0, a.1, a.2, b.0, b.1, b.2
        ),
    )
}

fn bump(r0: f64, x: f64) -> f64 {
    InitialData::new(DataPreset::Bump, r0, vec![0.0], vec![1.0]).profile(x.abs())
}

fn propagation_run(c: &CoefficientFamily, m: usize) -> (LatticeSolution, ConeRadii) {
    let radii = ConeRadii::new(c, 0.5, 1.0).unwrap();
    let mut pol = vec![0.0; m];
    pol[0] = 1.0;
    let lp = LatticeProblem::new(1, m, 8.0, 512, InitialData::new(DataPreset::Bump, 0.5, vec![0.0], pol));
    let times: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
    let sol = solve_lattice(&lp, c, &radii, 512, &LatticeOptions { output_times: times, keep_trajectories: false }).unwrap();
    (sol, radii)
}

/// Thresholded radius of the exact solution sampled on the same lattice.
fn oracle_radius(lp: &LatticeProblem, t: f64, wave: bool) -> f64 {
    let l = lp.box_size;
    let wrap = |x: f64| x - l * ((x + l / 2.0) / l).floor();
    let mags: Vec<f64> = (0..lp.points())
        .map(|p| {
            let x = lp.point(p)[0];
            if wave {
                let (a, b) = (bump(0.5, wrap(x - t)), bump(0.5, wrap(x + t)));
                (((a + b) / 2.0).powi(2) + ((a - b) / 2.0).powi(2)).sqrt()
            } else {
                bump(0.5, wrap(x - t))
            }
        })
        .collect();
    support_radius(&mags, lp, &[0.0], DEFAULT_THRESHOLD)
}

struct Propagation {
    transport: (LatticeSolution, ConeRadii),
    wave: (LatticeSolution, ConeRadii),
}

fn propagation() -> Propagation {
    let t = CoefficientFamily::constant(vec![mat(&[&[1.0]])], 1.0).unwrap();
    let w = CoefficientFamily::constant(vec![wave_b()], 1.0).unwrap();
    Propagation { transport: propagation_run(&t, 1), wave: propagation_run(&w, 2) }
}

fn cone_verdict(runs: &Propagation, halve: bool) -> Verdict {
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, (sol, radii), wave) in [("transport", &runs.transport, false), ("wave", &runs.wave, true)] {
        let radii = if halve { radii.clone().mutated(0.5) } else { radii.clone() };
        let rep = cone_check(sol, &radii, DEFAULT_THRESHOLD).unwrap();
        let h = rep.h;
        let worst_oracle = rep.rows.iter().map(|r| (r.measured - oracle_radius(&sol.problem, r.t, wave)).abs()).fold(0.0, f64::max);
        let min_margin = rep.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
        pass &= rep.pass && rep.rows.len() == 10 && worst_oracle <= 2.0 * h;
        detail.push(format!("{name}: min margin {min_margin:.4}, |measured - true| <= {worst_oracle:.4} (2h = {:.4})", 2.0 * h));
    }
    Verdict::new(pass, detail.join("; "))
}

fn criterion_6() -> Verdict {
    let mut pass = true;
    let mut detail = Vec::new();
    let families = [
        ("transport", CoefficientFamily::constant(vec![mat(&[&[1.0]])], 0.5).unwrap(), 1),
        ("wave", CoefficientFamily::constant(vec![wave_b()], 0.5).unwrap(), 2),
    ];
    for (name, c, m) in families {
        let mut pol = vec![0.0; m];
        pol[0] = 1.0;
        let lp = LatticeProblem::new(1, m, 8.0, 512, InitialData::new(DataPreset::Hole { width: 1.0 }, 1.0, vec![0.0], pol));
        let outer = ConeRadii::new(&c, 2.0, 1.0).unwrap();
        let sol = solve_lattice(&lp, &c, &outer, 512, &LatticeOptions { output_times: vec![0.1, 0.25, 0.4], keep_trajectories: false }).unwrap();
        let hole = ConeRadii::new(&c, 1.0, 1.0).unwrap();
        let rep = dod_check(&sol, &hole, &[0.0]).unwrap();
        let h = sol.spacing();
        let mut worst = 0.0f64;
        for snap in &sol.snapshots {
            let radius = 1.0 - 2.0 * snap.t - 2.0 * h;
            let mag = snap.magnitude(m);
            for (p, v) in mag.iter().enumerate() {
                if periodic_distance(&lp.point(p), &[0.0], lp.box_size) < radius {
                    worst = worst.max(*v);
                }
            }
        }
        pass &= rep.rows.iter().all(|r| !r.skipped) && worst <= 1e-8 && rep.worst_inside() <= 1e-8;
        detail.push(format!("{name}: max |u| inside {worst:.2e}"));
    }
    Verdict::new(pass, detail.join("; "))
}

fn criterion_7() -> Verdict {
    let sym2 = vec![mat(&[&[1.0, 0.0], &[0.0, -1.0]]), wave_b()];
    let c = CoefficientFamily::constant(sym2, 0.25).unwrap();
    let r0 = 0.5;
    let radii = ConeRadii::new(&c, r0, 1.0).unwrap();
    let lp = LatticeProblem::new(2, 2, 4.0, 256, InitialData::new(DataPreset::Bump, r0, vec![0.0, 0.0], vec![1.0, 0.0]));
    let sol = solve_lattice(&lp, &c, &radii, 64, &LatticeOptions { output_times: vec![0.0, 0.25], keep_trajectories: false }).unwrap();
    let (delta, dirs, levels) = (0.05, 8, 12);

    let initial = PwSettings::standard(2, dirs, levels, r0, delta);
    let start = pw_probe(&sol.snapshots[0].field, &lp, 0.0, &initial, r0).unwrap();
    let slopes: Vec<f64> = start.directions.iter().map(|d| d.slope).collect();
    let lo = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let start_ok = slopes.len() == dirs && start.directions.iter().all(|d| !d.degenerate) && lo >= 0.95 * r0 && hi <= 1.05 * r0;

    let snap = &sol.snapshots[1];
    let r_t = radii.forward(snap.t).unwrap();
    let later = pw_probe(&snap.field, &lp, snap.t, &PwSettings::standard(2, dirs, levels, r_t, delta), r_t).unwrap();
    let late_ok = later.max_slope <= (r_t + delta) * 1.05;
    let measured = support_radius(&snap.magnitude(2), &lp, &[0.0, 0.0], DEFAULT_THRESHOLD);
    let agrees = later.max_slope <= (measured + 2.0 * lp.spacing()) * 1.05;

    Verdict::new(
        start_ok && late_ok && agrees,
        format!(
            "t=0 slopes in [{lo:.4}, {hi:.4}] (target [{:.3}, {:.3}]); t={} max slope {:.4} vs r(t)+delta+5% = {:.4}, measured radius {measured:.4}",
            0.95 * r0,
            1.05 * r0,
            snap.t,
            later.max_slope,
            (r_t + delta) * 1.05
        ),
    )
}

fn criterion_8() -> Verdict {
    let c = CoefficientFamily::smooth(vec![skew_b()], 3.0, 1.0).unwrap();
    let continuous: Vec<Symmetrizer> = mollify_presets().into_iter().filter(|s| s.name() != "jump").collect();
    let mut worst = (0.0f64, 0.0f64);
    let mut increasing = Vec::new();
    let mut conditions = true;
    for s in &continuous {
        let mut seq = Vec::new();
        for zn in [1.0, 4.0, 16.0, 64.0] {
            let r = bound_report_i(s, &c, &[C::new(zn, 0.0)]).unwrap();
            conditions &= r.condition_continuous && r.condition_bounded_alpha;
            worst.0 = worst.0.max(r.ratio1);
            worst.1 = worst.1.max(r.ratio2.unwrap_or(f64::INFINITY));
            seq.push(r.omega_tilde);
        }
        if seq.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12) + 1e-15) {
            let shown: Vec<String> = seq.iter().map(|v| format!("{v:.4}")).collect();
            increasing.push(format!("{} [{}]", s.name(), shown.join(", ")));
        }
    }
    let monotone = increasing.is_empty();
    Verdict::new(
        worst.0 <= 1.0 && worst.1 <= 1.0 && monotone && conditions,
        format!(
            "{} presets; worst I1 ratio {:.3}, I2 ratio {:.3}; omega-tilde increases for: {}",
            continuous.len(),
            worst.0,
            worst.1,
            if monotone { "none".to_string() } else { increasing.join("; ") }
        ),
    )
}

const WAVE_ENERGY: &str = r#"{
  "n": 1, "m": 2,
  "coefficients": {"preset": "smooth", "matrices": [[[0.0, 1.0], [1.0, 0.0]]], "omega": 2.0},
  "symmetrizer": {"source": "build_strict"},
  "data": {"preset": "hole", "r0": 0.5, "width": 0.5},
  "grid": 128, "box": 8.0, "t_final": 0.4, "n_t": 128,
  "output_times": [0.1, 0.2, 0.4],
  "checks": {"cone": true, "dod": true, "pw": true, "energy": true, "mollifier_bounds": true, "mollifier_eps": [0.2, 0.05]},
  "seed": 9
}"#;

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.into_iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())).collect()
}

fn criterion_9() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let bundled = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/transport-1d.json");
    let configs = [LoadedConfig::from_path(&bundled).unwrap(), LoadedConfig::from_bytes(WAVE_ENERGY.as_bytes(), tmp.path().to_path_buf()).unwrap()];
    let mut identical = true;
    let mut files = 0;
    for (i, cfg) in configs.iter().enumerate() {
        let mut trees = Vec::new();
        for threads in [1, 8] {
            let out = tmp.path().join(format!("cfg{i}-t{threads}"));
            let opts = RunOptions { out: Some(out.clone()), seed: None, checks: Vec::new() };
            cli::with_threads(Some(threads), || cli::execute(Command::Run, cfg, &opts)).unwrap().unwrap();
            trees.push(read_tree(&out));
        }
        files += trees[0].len();
        identical &= trees[0] == trees[1];
    }
    Verdict::new(identical, format!("{files} report files per thread count; byte-identical: {identical}"))
}

fn criterion_10(runs: &Propagation) -> Verdict {
    let honest = cone_verdict(runs, false).pass;
    let halved = cone_verdict(runs, true).pass;
    let (honest_violations, _) = matrix_bounds_suite(0.0, 2);
    let (skewed_violations, total) = matrix_bounds_suite(0.01, 2);
    let pass = honest && !halved && honest_violations == 0 && skewed_violations > 0;
    Verdict::new(
        pass,
        format!("halved r(t): criterion 5 {}; 1% skew: {skewed_violations}/{total} matrix-bound violations", if halved { "still passes" } else { "fails" }),
    )
}

fn main() {
    // `cargo test` passes harness flags; a name filter selects nothing here.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return;
    }
    let secs = |s| Some(Duration::from_secs(s));
    let mut results = Vec::new();
    let mut record = |k: usize, v: Verdict| {
        println!("criterion {k:>2}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push(v.pass);
    };
    record(1, timed(secs(1), criterion_1));
    record(2, timed(secs(10), criterion_2));
    record(3, timed(secs(5), criterion_3));
    record(4, timed(secs(60), criterion_4));
    let start = Instant::now();
    let runs = propagation();
    let solve_time = start.elapsed();
    record(
        5,
        timed(Some(Duration::from_secs(30).saturating_sub(solve_time)), || {
            let v = cone_verdict(&runs, false);
            Verdict::new(v.pass, format!("{}; solves {solve_time:.2?}", v.detail))
        }),
    );
    record(6, timed(secs(30), criterion_6));
    record(7, timed(secs(10), criterion_7));
    record(8, timed(secs(20), criterion_8));
    record(9, timed(None, criterion_9));
    record(10, timed(None, || criterion_10(&runs)));
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
