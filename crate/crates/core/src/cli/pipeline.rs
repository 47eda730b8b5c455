use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coefficients::{CoefficientFamily, ConeRadii};
use crate::matcore::{psd_bounds, Mat};
use crate::mollify::{mollifier_bounds_report, mollify, MollifierBoundsReport};
use crate::solver::{solve_lattice, DataPreset, InitialData, LatticeOptions, LatticeProblem, LatticeSolution, SolverError};
use crate::symbol::{classify, default_samples, sphere_directions, Classification, HyperbolicityClass};
use crate::symmetrizer::{adjoint_check, presets, validate, Symmetrizer, SymmetrizerError, BOUNDS_SLACK};
use crate::verify::{self, bound_report_i, cone_check, dod_check, energy_sweep, pw_probe, PwSettings, VerifyError};

use super::config::{LoadedConfig, SymmetrizerSource};
use super::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Energy sweeps store every mode at every node; beyond this many complex
/// values the run is refused.
const TRAJECTORY_BUDGET: usize = 20_000_000;

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub checks: Vec<String>,
}

/// Check verdicts and where the reports went.
#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub checks: BTreeMap<String, bool>,
    pub out_dir: PathBuf,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.checks.values().all(|&p| p)
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    version: &'static str,
    config_sha256: &'a str,
    seed: u64,
    report: &'a T,
}

struct Reports {
    dir: PathBuf,
    sha: String,
    seed: u64,
    files: Vec<String>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

impl Reports {
    fn new(dir: PathBuf, sha: String, seed: u64) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self { dir, sha, seed, files: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(&path).map_err(|e| io_err(&path, e))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, report: &T) -> Result<(), CliError> {
        let w = self.create(name)?;
        let env = Envelope { version: VERSION, config_sha256: &self.sha, seed: self.seed, report };
        serde_json::to_writer_pretty(w, &env).map_err(|e| io_err(&self.dir.join(name), e))
    }

    fn series(&mut self, name: &str, rows: &[[f64; 4]]) -> Result<(), CliError> {
        let w = self.create(name)?;
        verify::write_series_csv(w, rows).map_err(|e| io_err(&self.dir.join(name), e))
    }
}

/// Everything built from the config before the lattice solve.
pub struct Prepared {
    pub family: CoefficientFamily,
    pub classification: Classification,
    pub symmetrizer: Symmetrizer,
    pub radii: ConeRadii,
    pub lattice: LatticeProblem,
    pub seed: u64,
}

fn precondition<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Precondition(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn solver_err(e: SolverError) -> CliError {
    match e {
        SolverError::NoWrap { .. } | SolverError::SupportTooLarge { .. } | SolverError::TooFewSteps(_) | SolverError::Invalid(_) => precondition(e),
        _ => runtime(e),
    }
}

fn symmetrizer_err(e: SymmetrizerError) -> CliError {
    match e {
        SymmetrizerError::NotStrictlyHyperbolic(class) => CliError::Precondition(format!("coefficients are not strictly hyperbolic (classified as {class})")),
        SymmetrizerError::IllConditionedEigenbasis { .. } | SymmetrizerError::PreconditionFailed(_) => precondition(e),
        _ => runtime(e),
    }
}

fn verify_err(e: VerifyError) -> CliError {
    match e {
        VerifyError::EmptyRegion | VerifyError::PreconditionFailed(_) | VerifyError::DynamicRangeExceeded { .. } | VerifyError::ConditionUndetermined => {
            precondition(e)
        }
        _ => runtime(e),
    }
}

pub fn prepare(cfg: &LoadedConfig, opts: &RunOptions) -> Result<Prepared, CliError> {
    let seed = opts.seed.unwrap_or(cfg.config.seed);
    let family = cfg.family()?;
    let classification = classify(&family, &default_samples(&family, seed)).map_err(runtime)?;
    if classification.class < HyperbolicityClass::Hyperbolic {
        return Err(CliError::Precondition(format!("coefficients are not strictly hyperbolic (classified as {})", classification.class.as_str())));
    }
    let symmetrizer = match &cfg.config.symmetrizer {
        SymmetrizerSource::Identity => Symmetrizer::identity(family.m(), family.t_final()),
        SymmetrizerSource::BuildStrict => Symmetrizer::build_strict(&family).map_err(symmetrizer_err)?,
        SymmetrizerSource::File { .. } => cfg.file_symmetrizer().expect("file source")?,
    };
    if symmetrizer.m() != family.m() {
        return Err(CliError::Config(format!("symmetrizer is {}×{}, coefficients need m = {}", symmetrizer.m(), symmetrizer.m(), family.m())));
    }
    let data = cfg.config.initial_data();
    let radii = ConeRadii::new(&family, data.outer_radius(), symmetrizer.big_lambda()).map_err(runtime)?;
    let lattice = LatticeProblem::new(cfg.config.n, cfg.config.m, cfg.config.box_size, cfg.config.grid, data);
    lattice.check(&family, &radii).map_err(solver_err)?;
    Ok(Prepared { family, classification, symmetrizer, radii, lattice, seed })
}

fn solve(cfg: &LoadedConfig, prep: &Prepared, keep_trajectories: bool, with_initial: bool) -> Result<LatticeSolution, CliError> {
    let c = &cfg.config;
    if keep_trajectories {
        let size = prep.lattice.points() * (c.n_t + 1) * c.m;
        if size > TRAJECTORY_BUDGET {
            return Err(CliError::Precondition(format!("energy sweep would store {size} mode values; reduce grid or n_t below {TRAJECTORY_BUDGET}")));
        }
    }
    let mut times = c.output_times.clone();
    if with_initial {
        times.push(0.0);
    }
    solve_lattice(&prep.lattice, &prep.family, &prep.radii, c.n_t, &LatticeOptions { output_times: times, keep_trajectories }).map_err(solver_err)
}

fn write_snapshots(reports: &mut Reports, sol: &LatticeSolution) -> Result<(), CliError> {
    let lp = &sol.problem;
    for (i, snap) in sol.snapshots.iter().enumerate() {
        let name = format!("snapshot_{i:03}.csv");
        let path = reports.dir.join(&name);
        let mut w = csv::Writer::from_writer(reports.create(&name)?);
        let mut header: Vec<String> = (0..lp.n).map(|a| if lp.n == 1 { "x".into() } else { format!("x{a}") }).collect();
        header.extend((0..lp.m).map(|i| format!("u{i}")));
        w.write_record(&header).map_err(|e| io_err(&path, e))?;
        for p in 0..lp.points() {
            let mut row: Vec<String> = lp.point(p).iter().map(|x| format!("{x:e}")).collect();
            row.extend(snap.field[p * lp.m..(p + 1) * lp.m].iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    reports.json("snapshots.json", &sol.snapshots)
}

#[derive(Serialize)]
struct GridInfo {
    n: usize,
    m: usize,
    grid: usize,
    #[serde(rename = "box")]
    box_size: f64,
    spacing: f64,
}

#[derive(Serialize)]
struct Presets<'a> {
    coefficients: &'a str,
    symmetrizer: &'a str,
    data: &'a InitialData,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    command: &'a str,
    config_sha256: &'a str,
    seed: u64,
    grid: GridInfo,
    t_final: f64,
    n_t: usize,
    output_times: Vec<f64>,
    presets: Presets<'a>,
    classification: &'a str,
    lambda: f64,
    #[serde(rename = "Lambda")]
    big_lambda: f64,
    files: &'a [String],
    checks: &'a BTreeMap<String, bool>,
    pass: bool,
}

fn out_dir(cfg: &LoadedConfig, opts: &RunOptions) -> PathBuf {
    opts.out.clone().unwrap_or_else(|| cfg.config.output_dir.clone())
}

fn wants(opts: &RunOptions, name: &str, enabled: bool) -> bool {
    if opts.checks.is_empty() {
        enabled
    } else {
        opts.checks.iter().any(|c| c == name)
    }
}

/// The subcommands that read a config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Simulate,
    VerifySymmetrizer,
    MollifierReport,
    ConeReport,
    PwProbe,
    EnergyReport,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Simulate => "simulate",
            Command::VerifySymmetrizer => "verify-symmetrizer",
            Command::MollifierReport => "mollifier-report",
            Command::ConeReport => "cone-report",
            Command::PwProbe => "pw-probe",
            Command::EnergyReport => "energy-report",
        }
    }
}

/// Runs one subcommand and writes its reports and manifest.
pub fn execute(command: Command, cfg: &LoadedConfig, opts: &RunOptions) -> Result<Outcome, CliError> {
    let prep = prepare(cfg, opts)?;
    let dir = out_dir(cfg, opts);
    let mut reports = Reports::new(dir.clone(), cfg.sha256.clone(), prep.seed)?;
    let toggles = &cfg.config.checks;
    let mut checks = BTreeMap::new();
    reports.json("classification.json", &prep.classification)?;

    let (sym, cone, dod, pw, energy, moll_bounds) = match command {
        Command::Run => (
            wants(opts, "symmetrizer", true),
            wants(opts, "cone", toggles.cone),
            wants(opts, "dod", toggles.dod),
            wants(opts, "pw", toggles.pw),
            wants(opts, "energy", toggles.energy),
            wants(opts, "mollifier_bounds", toggles.mollifier_bounds),
        ),
        Command::Simulate => (false, false, false, false, false, false),
        Command::VerifySymmetrizer => (true, false, false, false, false, false),
        Command::MollifierReport => (false, false, false, false, false, true),
        Command::ConeReport => (false, true, false, false, false, false),
        Command::PwProbe => (false, false, false, true, false, false),
        Command::EnergyReport => (false, false, false, false, true, false),
    };

    if sym {
        let samples = default_samples(&prep.family, prep.seed);
        let report = validate(&prep.symmetrizer, &prep.family, &samples);
        checks.insert("symmetrizer".to_string(), report.pass);
        reports.json("symmetrizer.json", &report)?;
        if command == Command::VerifySymmetrizer {
            match adjoint_check(&prep.symmetrizer, &prep.family, &samples) {
                Ok(adj) => {
                    checks.insert("adjoint".to_string(), adj.pass);
                    reports.json("adjoint.json", &adj)?;
                }
                Err(SymmetrizerError::PreconditionFailed(_)) => {
                    checks.insert("adjoint".to_string(), false);
                }
                Err(e) => return Err(symmetrizer_err(e)),
            }
        }
    }

    if moll_bounds {
        let dirs = sphere_directions(cfg.config.n, if cfg.config.n == 1 { 2 } else { 8 }, prep.seed);
        let mut rows: Vec<MollifierBoundsReport> = Vec::new();
        for &eps in &toggles.mollifier_eps {
            let ms = mollify(&prep.symmetrizer, eps).map_err(runtime)?;
            for nu in &dirs {
                rows.push(mollifier_bounds_report(&ms, nu).map_err(runtime)?);
            }
        }
        checks.insert("mollifier_bounds".to_string(), rows.iter().all(|r| r.ratio1 <= 1.0 && r.ratio2 <= 1.0));
        let name = "mollifier_bounds.csv";
        let path = reports.dir.join(name);
        let mut w = csv::Writer::from_writer(reports.create(name)?);
        w.write_record(["eps", "xi", "lhs1", "rhs1", "ratio1", "lhs2", "rhs2", "ratio2"]).map_err(|e| io_err(&path, e))?;
        for r in &rows {
            let xi = r.xi.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
            let vals = [r.lhs1, r.rhs1, r.ratio1, r.lhs2, r.rhs2, r.ratio2].map(|v| format!("{v:e}"));
            let mut rec = vec![format!("{:e}", r.eps), xi];
            rec.extend(vals);
            w.write_record(&rec).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        reports.json("mollifier_bounds.json", &rows)?;
    }

    let needs_solve = command == Command::Simulate || cone || dod || pw || energy;
    let mut output_times = Vec::new();
    if needs_solve {
        let sol = solve(cfg, &prep, energy, pw)?;
        output_times = sol.snapshots.iter().map(|s| s.t).collect();
        write_snapshots(&mut reports, &sol)?;
        let reality = sol.snapshots.iter().all(|s| s.max_imag_residue <= 1e-9 * s.max_abs.max(f64::MIN_POSITIVE) || s.max_abs == 0.0);
        if command != Command::Simulate {
            checks.insert("reality".to_string(), reality);
        }

        if cone {
            let rep = cone_check(&sol, &prep.radii, toggles.threshold).map_err(verify_err)?;
            checks.insert("cone".to_string(), rep.pass);
            reports.json("cone.json", &rep)?;
            reports.series("cone.csv", &rep.series())?;
        }
        if dod {
            let region = cfg.config.dod_region().ok_or_else(|| CliError::Config("dod check needs a region".into()))?;
            let radii = ConeRadii::new(&prep.family, region.radius, prep.symmetrizer.big_lambda()).map_err(runtime)?;
            let rep = dod_check(&sol, &radii, &region.center).map_err(verify_err)?;
            checks.insert("dod".to_string(), rep.pass);
            reports.json("dod.json", &rep)?;
            reports.series("dod.csv", &rep.series())?;
        }
        if pw {
            let ps = &toggles.pw_settings;
            let offset = prep.lattice.data.x0.iter().map(|x| x * x).sum::<f64>().sqrt();
            let directions = if cfg.config.n == 1 { 2 } else { ps.directions };
            let mut pw_reports = Vec::new();
            for snap in &sol.snapshots {
                let r_ref = prep.radii.forward(snap.t).map_err(runtime)? + offset;
                let settings = PwSettings::standard(cfg.config.n, directions, ps.magnitudes, r_ref, ps.delta);
                pw_reports.push(pw_probe(&snap.field, &sol.problem, snap.t, &settings, r_ref).map_err(verify_err)?);
            }
            checks.insert("pw".to_string(), pw_reports.iter().all(|r| r.pass));
            if let Some(last) = pw_reports.last() {
                let name = "pw.csv";
                let path = reports.dir.join(name);
                let w = reports.create(name)?;
                verify::write_pw_csv(w, last).map_err(|e| io_err(&path, e))?;
            }
            reports.json("pw.json", &pw_reports)?;
        }
        if energy {
            let sweep = energy_sweep(&sol, &prep.symmetrizer, &prep.family).map_err(verify_err)?;
            checks.insert("energy".to_string(), sweep.pass);
            if let Some(worst) = sweep.modes.iter().min_by(|a, b| a.min_margin_ratio.total_cmp(&b.min_margin_ratio)) {
                let trajs = sol.trajectories.as_ref().expect("kept for the sweep");
                let zeta: Vec<Complex64> = worst.xi.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                let m = sol.problem.m;
                let forcing: Option<Vec<Vec<Complex64>>> =
                    sol.forcing_modes.as_ref().map(|fm| fm.iter().map(|node| node[worst.mode * m..(worst.mode + 1) * m].to_vec()).collect());
                let trace = verify::energy_trace(&trajs[worst.mode], &prep.symmetrizer, &prep.family, &zeta, forcing.as_deref()).map_err(verify_err)?;
                reports.series("energy.csv", &trace.series())?;
                reports.json("energy_worst.json", &trace)?;
            }
            reports.json("energy.json", &sweep)?;

            let mut bounds = Vec::new();
            let mut bounds_pass = true;
            for zn in [1.0, 4.0, 16.0, 64.0] {
                let mut zeta = vec![Complex64::new(0.0, 0.0); cfg.config.n];
                zeta[0] = Complex64::new(zn, 0.0);
                match bound_report_i(&prep.symmetrizer, &prep.family, &zeta) {
                    Ok(r) => {
                        bounds_pass &= r.ratio1 <= 1.0 && r.ratio2.is_none_or(|x| x <= 1.0);
                        bounds.push(r);
                    }
                    Err(VerifyError::ConditionUndetermined) => bounds_pass = false,
                    Err(e) => return Err(verify_err(e)),
                }
            }
            checks.insert("bounds".to_string(), bounds_pass);
            reports.json("bounds.json", &bounds)?;
        }
    }

    let files = reports.files.clone();
    let manifest = Manifest {
        version: VERSION,
        command: command.name(),
        config_sha256: &cfg.sha256,
        seed: prep.seed,
        grid: GridInfo { n: cfg.config.n, m: cfg.config.m, grid: cfg.config.grid, box_size: cfg.config.box_size, spacing: prep.lattice.spacing() },
        t_final: cfg.config.t_final,
        n_t: cfg.config.n_t,
        output_times,
        presets: Presets { coefficients: cfg.config.coefficients.name(), symmetrizer: prep.symmetrizer.name(), data: &prep.lattice.data },
        classification: prep.classification.class.as_str(),
        lambda: prep.symmetrizer.lambda(),
        big_lambda: prep.symmetrizer.big_lambda(),
        files: &files,
        checks: &checks,
        pass: checks.values().all(|&p| p),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&path, e))?;
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(Outcome { checks, out_dir: dir })
}

/// Confirms that the harness detects deliberately broken inputs: halved
/// cone radii and a symmetrizer skewed by 1%.
pub fn selftest(opts: &RunOptions) -> Result<Outcome, CliError> {
    let seed = opts.seed.unwrap_or(0);
    let mut checks = BTreeMap::new();

    let family = CoefficientFamily::constant(vec![Mat::from_rows(&[&[1.0]])], 1.0).map_err(runtime)?;
    let radii = ConeRadii::new(&family, 0.5, 1.0).map_err(runtime)?;
    let lp = LatticeProblem::new(1, 1, 8.0, 256, InitialData::new(DataPreset::Bump, 0.5, vec![0.0], vec![1.0]));
    let times: Vec<f64> = (0..=4).map(|i| 0.25 * i as f64).collect();
    let sol = solve_lattice(&lp, &family, &radii, 256, &LatticeOptions { output_times: times, keep_trajectories: false }).map_err(solver_err)?;
    let honest = cone_check(&sol, &radii, verify::DEFAULT_THRESHOLD).map_err(verify_err)?;
    let mutated = cone_check(&sol, &radii.clone().mutated(0.5), verify::DEFAULT_THRESHOLD).map_err(verify_err)?;
    checks.insert("mutation_cone".to_string(), honest.pass && !mutated.pass);

    let s = presets::constant(Mat::diag_real(&[1.0, 3.0]), 1.0).map_err(runtime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut honest_ok, mut caught) = (true, false);
    for _ in 0..100 {
        let t = rng.gen_range(0.0..1.0);
        let eps = rng.gen_range(0.01..1.0);
        let ms = mollify(&s, eps).map_err(runtime)?;
        let within = |m: &Mat| psd_bounds(m).map(|(lo, hi)| lo >= s.lambda() - BOUNDS_SLACK && hi <= s.big_lambda() + BOUNDS_SLACK).unwrap_or(false);
        honest_ok &= within(&ms.eval(t, &[1.0]).map_err(runtime)?);
        caught |= !within(&ms.with_skew(0.01).eval(t, &[1.0]).map_err(runtime)?);
    }
    checks.insert("mutation_skew".to_string(), honest_ok && caught);

    let dir = opts.out.clone().unwrap_or_else(|| PathBuf::from("hypercone-selftest"));
    let mut reports = Reports::new(dir.clone(), String::new(), seed)?;
    reports.json("selftest.json", &checks)?;
    Ok(Outcome { checks, out_dir: dir })
}
