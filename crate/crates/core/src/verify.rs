//! Measurements of the estimate chain: energies and their envelope, the
//! high-frequency integrals, support radii, and the Paley–Wiener probe.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coefficients::{CoefficientError, CoefficientFamily, ConeRadii};
use crate::matcore::{op_norm, vec_dot, vec_norm, Mat};
use crate::mollify::{mollify, omega_s, MollifiedSymmetrizer, MollifyError};
use crate::quad::{composite_rule, cumulative_trapezoid, gl8};
use crate::solver::{periodic_distance, LatticeProblem, LatticeSolution, Trajectory};
use crate::symbol::sphere_directions;
use crate::symmetrizer::{continuity_modulus, Symmetrizer, SymmetrizerError};

type C = Complex64;

pub const EQUIVALENCE_SLACK: f64 = 1e-9;
pub const MARGIN_SLACK: f64 = 1e-8;
pub const DEFAULT_THRESHOLD: f64 = 1e-8;
pub const ABSOLUTE_FLOOR: f64 = 1e-13;
pub const PW_FLOOR: f64 = 1e-8;
pub const PW_CEILING: f64 = 30.0;
pub const PW_FIT_TOL: f64 = 0.05;
/// Samples at or below this fraction of the peak are treated as zero by the
/// probe; otherwise rounding and Nyquist-truncation residue near the box
/// edge swamps `e^{η e·x}`.
pub const PW_NOISE_CUTOFF: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("neither continuity of S nor a uniform bound on α was detected")]
    ConditionUndetermined,
    #[error("checked region is empty: ϱ(t) − 2h ≤ 0 at every requested time")]
    EmptyRegion,
    #[error("exp((r+δ)|η|) overflows at |η| = {eta}")]
    DynamicRangeExceeded { eta: f64 },
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("ξ = Re ζ must be nonzero")]
    ZeroFrequency,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mollify(#[from] MollifyError),
    #[error(transparent)]
    Symmetrizer(#[from] SymmetrizerError),
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
}

fn split(zeta: &[C]) -> (Vec<f64>, f64, f64) {
    let xi: Vec<f64> = zeta.iter().map(|z| z.re).collect();
    let xi_norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let eta_norm = zeta.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
    (xi, xi_norm, eta_norm)
}

fn zeta_norm(zeta: &[C]) -> f64 {
    zeta.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `ε = 1/|ζ|` for `|ζ| ≥ 1`, else 1, capped at `min(1, T/2)`.
pub fn epsilon_for(zeta_norm: f64, t_final: f64) -> f64 {
    let eps = if zeta_norm >= 1.0 { 1.0 / zeta_norm } else { 1.0 };
    eps.min(1.0).min(0.5 * t_final)
}

fn phi_from(s: &Symmetrizer, se: &Mat, dse: &Mat, sv: &Mat, alpha: f64, xi_norm: f64, eta_norm: f64) -> f64 {
    let inv = 2.0 / s.lambda().sqrt();
    inv * op_norm(dse) + inv * op_norm(&(se - sv)) * alpha * xi_norm + 2.0 * s.big_lambda().sqrt() * alpha * eta_norm
}

/// `φ_ε(t, ζ) = (2/√λ)‖∂_t S_ε‖ + (2/√λ)‖S_ε − S‖ α|ξ| + 2√Λ α|η|`.
///
/// For `ξ = 0` only the `|η|` term remains.
pub fn phi_eps(ms: &MollifiedSymmetrizer, c: &CoefficientFamily, t: f64, zeta: &[C]) -> Result<f64, VerifyError> {
    let s = ms.base();
    let (xi, xi_norm, eta_norm) = split(zeta);
    let alpha = c.alpha(t)?;
    if xi_norm == 0.0 {
        return Ok(2.0 * s.big_lambda().sqrt() * alpha * eta_norm);
    }
    let (se, dse) = ms.eval_pair(t, &xi)?;
    let sv = s.eval(t, &xi)?;
    Ok(phi_from(s, &se, &dse, &sv, alpha, xi_norm, eta_norm))
}

/// Energy and envelope of one mode.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyTrace {
    pub zeta: Vec<[f64; 2]>,
    pub eps: f64,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    pub times: Vec<f64>,
    /// `E_ε = S_ε û · û`
    pub energy: Vec<f64>,
    /// `e_ε = √E_ε`
    pub e: Vec<f64>,
    pub phi: Vec<f64>,
    pub int_phi: Vec<f64>,
    pub modulus: Vec<f64>,
    pub envelope: Vec<f64>,
    pub margin: Vec<f64>,
    /// Largest violation of `λ|û|² ≤ E_ε ≤ Λ|û|²`, relative to `Λ|û|²`.
    pub equivalence_violation: f64,
    /// Smallest `margin / envelope`.
    pub min_margin_ratio: f64,
    pub pass_equivalence: bool,
    pub pass_margin: bool,
}

impl EnergyTrace {
    pub fn pass(&self) -> bool {
        self.pass_equivalence && self.pass_margin
    }

    /// `t, measured, bound, margin` rows.
    pub fn series(&self) -> Vec<[f64; 4]> {
        (0..self.times.len()).map(|k| [self.times[k], self.modulus[k], self.envelope[k], self.margin[k]]).collect()
    }
}

/// Energy `E_ε` and the envelope
/// `RHS(t) = (√Λ/√λ) exp(∫_0^t φ_ε) (|û₀| + 2√Λ (1/√λ) ∫_0^t |f̂|)`
/// along a solver trajectory, with `ε` from [`epsilon_for`].
pub fn energy_trace(traj: &Trajectory, s: &Symmetrizer, c: &CoefficientFamily, zeta: &[C], forcing: Option<&[Vec<C>]>) -> Result<EnergyTrace, VerifyError> {
    let (xi, xi_norm, eta_norm) = split(zeta);
    if xi_norm == 0.0 {
        return Err(VerifyError::ZeroFrequency);
    }
    if let Some(f) = forcing {
        if f.len() != traj.times.len() {
            return Err(VerifyError::Invalid("forcing must be sampled on the trajectory grid".into()));
        }
    }
    let eps = epsilon_for(zeta_norm(zeta), s.t_final());
    let ms = mollify(s, eps)?;
    let (lambda, big_lambda) = (s.lambda(), s.big_lambda());
    let times = &traj.times;
    let nodes = times.len();

    let mut energy = Vec::with_capacity(nodes);
    let mut modulus = Vec::with_capacity(nodes);
    let mut phi = Vec::with_capacity(nodes);
    let mut violation: f64 = 0.0;
    for (k, &t) in times.iter().enumerate() {
        let u = &traj.values[k];
        let (se, dse) = ms.eval_pair(t, &xi)?;
        let sv = s.eval(t, &xi)?;
        let e = vec_dot(&se.matvec(u), u).re;
        let mod2 = vec_norm(u).powi(2);
        if mod2 > 0.0 {
            violation = violation.max((lambda * mod2 - e).max(e - big_lambda * mod2) / (big_lambda * mod2));
        }
        energy.push(e);
        modulus.push(mod2.sqrt());
        phi.push(phi_from(s, &se, &dse, &sv, c.alpha(t)?, xi_norm, eta_norm));
    }

    // ∫φ on the node grid, refined when S_ε varies faster than the grid.
    let mut int_phi = vec![0.0; nodes];
    for k in 1..nodes {
        let dt = times[k] - times[k - 1];
        let q = ((2.0 * dt / eps).ceil() as usize).max(1);
        let mut acc = 0.0;
        let mut prev = phi[k - 1];
        for j in 1..=q {
            let next = if j == q { phi[k] } else { phi_eps(&ms, c, times[k - 1] + dt * j as f64 / q as f64, zeta)? };
            acc += 0.5 * (dt / q as f64) * (prev + next);
            prev = next;
        }
        int_phi[k] = int_phi[k - 1] + acc;
    }

    let int_f = match forcing {
        Some(f) => cumulative_trapezoid(times, &f.iter().map(|v| vec_norm(v)).collect::<Vec<_>>()),
        None => vec![0.0; nodes],
    };
    let ratio = (big_lambda / lambda).sqrt();
    let u0 = modulus[0];
    let envelope: Vec<f64> = (0..nodes).map(|k| ratio * int_phi[k].exp() * (u0 + 2.0 * big_lambda.sqrt() / lambda.sqrt() * int_f[k])).collect();
    let margin: Vec<f64> = envelope.iter().zip(&modulus).map(|(r, m)| r - m).collect();
    let min_margin_ratio = margin
        .iter()
        .zip(&envelope)
        .map(|(m, r)| {
            if *r > 0.0 {
                m / r
            } else if *m >= 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min);
    Ok(EnergyTrace {
        zeta: zeta.iter().map(|z| [z.re, z.im]).collect(),
        eps,
        lambda,
        big_lambda,
        times: times.clone(),
        e: energy.iter().map(|e| e.max(0.0).sqrt()).collect(),
        energy,
        phi,
        int_phi,
        modulus,
        envelope,
        margin,
        equivalence_violation: violation,
        min_margin_ratio,
        pass_equivalence: violation <= EQUIVALENCE_SLACK,
        pass_margin: min_margin_ratio >= -MARGIN_SLACK,
    })
}

/// Per-mode outcome inside an [`EnergySweep`].
#[derive(Debug, Clone, Serialize)]
pub struct ModeSummary {
    pub mode: usize,
    pub xi: Vec<f64>,
    pub eps: f64,
    pub equivalence_violation: f64,
    pub min_margin_ratio: f64,
    pub pass: bool,
}

/// Energy traces over all lattice modes with `|ξ| ≥ 1`.
#[derive(Debug, Clone, Serialize)]
pub struct EnergySweep {
    pub modes_checked: usize,
    pub worst_equivalence: f64,
    pub worst_margin_ratio: f64,
    pub pass: bool,
    pub modes: Vec<ModeSummary>,
}

pub fn energy_sweep(sol: &LatticeSolution, s: &Symmetrizer, c: &CoefficientFamily) -> Result<EnergySweep, VerifyError> {
    let trajs = sol.trajectories.as_ref().ok_or_else(|| VerifyError::Invalid("energy sweep needs per-mode trajectories".into()))?;
    let lp = &sol.problem;
    let m = lp.m;
    let selected: Vec<usize> = (0..trajs.len()).filter(|&k| vec_norm_real(&lp.frequency(k)) >= 1.0).collect();
    let results: Vec<Result<ModeSummary, VerifyError>> = selected
        .par_iter()
        .map(|&k| {
            let xi = lp.frequency(k);
            let zeta: Vec<C> = xi.iter().map(|&x| C::new(x, 0.0)).collect();
            let forcing: Option<Vec<Vec<C>>> = sol.forcing_modes.as_ref().map(|fm| fm.iter().map(|node| node[k * m..(k + 1) * m].to_vec()).collect());
            let tr = energy_trace(&trajs[k], s, c, &zeta, forcing.as_deref())?;
            Ok(ModeSummary {
                mode: k,
                xi,
                eps: tr.eps,
                equivalence_violation: tr.equivalence_violation,
                min_margin_ratio: tr.min_margin_ratio,
                pass: tr.pass(),
            })
        })
        .collect();
    let modes: Vec<ModeSummary> = results.into_iter().collect::<Result<_, _>>()?;
    let worst_equivalence = modes.iter().map(|m| m.equivalence_violation).fold(0.0, f64::max);
    let worst_margin_ratio = modes.iter().map(|m| m.min_margin_ratio).fold(f64::INFINITY, f64::min);
    Ok(EnergySweep { modes_checked: modes.len(), worst_equivalence, worst_margin_ratio, pass: modes.iter().all(|m| m.pass), modes })
}

fn vec_norm_real(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// High-frequency integrals `I₁`, `I₂` and their bounds at one `ζ`.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub zeta_norm: f64,
    pub eps: f64,
    /// `(2/√λ) ∫_0^T ‖∂_t S_ε‖ dt`
    pub i1: f64,
    /// `(2|ξ|/√λ) ∫_0^T ‖S_ε − S‖ α dt`
    pub i2: f64,
    pub omega: f64,
    pub omega_tilde: f64,
    pub bound_constant: f64,
    pub c1: f64,
    pub c2: Option<f64>,
    pub sup_alpha: Option<f64>,
    /// `C₁ (ω_S/ε + 1)`; equals `C₁(|ζ| ω_S + 1)` when `ε = 1/|ζ|`.
    pub bound1: f64,
    pub bound2: Option<f64>,
    pub ratio1: f64,
    pub ratio2: Option<f64>,
    pub condition_continuous: bool,
    pub condition_bounded_alpha: bool,
}

/// `I₁`, `I₂`, `ω_S` and `ω̃_S` at `ε = 1/|ζ|`.
///
/// With `C_L` the mollifier constant, `C₁ = 2 C_L max(1, √Λ)/√λ` and
/// `C₂ = C₁ sup α`.
pub fn bound_report_i(s: &Symmetrizer, c: &CoefficientFamily, zeta: &[C]) -> Result<BoundReport, VerifyError> {
    let zn = zeta_norm(zeta);
    if zn < 1.0 {
        return Err(VerifyError::Invalid(format!("|ζ| = {zn} must be at least 1")));
    }
    let (xi, xi_norm, _) = split(zeta);
    if xi_norm == 0.0 {
        return Err(VerifyError::ZeroFrequency);
    }
    let continuous = continuity_modulus(s, c.n())?.continuous;
    let sup_alpha = c.uniform_bound();
    if !continuous && sup_alpha.is_none() {
        return Err(VerifyError::ConditionUndetermined);
    }
    let eps = epsilon_for(zn, s.t_final());
    let ms = mollify(s, eps)?;
    let mut cuts = s.breakpoints().to_vec();
    cuts.extend_from_slice(c.breakpoints());
    let rule = composite_rule(0.0, s.t_final(), &cuts, (eps / 4.0).min(s.t_final() / 16.0), gl8());
    let mut d_int = 0.0;
    let mut s_int = 0.0;
    for (t, w) in rule {
        let (se, dse) = ms.eval_pair(t, &xi)?;
        d_int += w * op_norm(&dse);
        s_int += w * op_norm(&(&se - &s.eval(t, &xi)?)) * c.alpha(t)?;
    }
    let inv = 2.0 / s.lambda().sqrt();
    let i1 = inv * d_int;
    let i2 = inv * xi_norm * s_int;

    let omega = omega_s(s, &xi, eps)?;
    let dirs = sphere_directions(c.n(), 32, 0);
    let per_dir: Vec<Result<f64, MollifyError>> = dirs.par_iter().map(|nu| omega_s(s, nu, eps)).collect();
    let mut omega_tilde = omega;
    for w in per_dir {
        omega_tilde = omega_tilde.max(w?);
    }

    let cl = ms.kernel().bound_constant();
    let c1 = 2.0 * cl * s.big_lambda().sqrt().max(1.0) / s.lambda().sqrt();
    let bound1 = c1 * (omega / eps + 1.0);
    let c2 = sup_alpha.map(|a| c1 * a);
    let bound2 = c2.map(|c2| c2 * (omega / eps + 1.0));
    let ratio = |l: f64, r: f64| if l == 0.0 { 0.0 } else { l / r };
    Ok(BoundReport {
        zeta_norm: zn,
        eps,
        i1,
        i2,
        omega,
        omega_tilde,
        bound_constant: cl,
        c1,
        c2,
        sup_alpha,
        bound1,
        bound2,
        ratio1: ratio(i1, bound1),
        ratio2: bound2.map(|b| ratio(i2, b)),
        condition_continuous: continuous,
        condition_bounded_alpha: sup_alpha.is_some(),
    })
}

/// Largest distance from `x0` among lattice points where
/// `values > θ · max(values)`; zero for fields below the absolute floor.
pub fn support_radius(values: &[f64], lp: &LatticeProblem, x0: &[f64], theta: f64) -> f64 {
    let max = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max < ABSOLUTE_FLOOR {
        return 0.0;
    }
    let cut = theta * max;
    values.iter().enumerate().filter(|(_, v)| v.abs() > cut).map(|(p, _)| periodic_distance(&lp.point(p), x0, lp.box_size)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeRow {
    pub t: f64,
    pub measured: f64,
    pub bound: f64,
    /// `bound + 2h − measured`
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeReport {
    pub h: f64,
    pub threshold: f64,
    pub rows: Vec<ConeRow>,
    pub pass: bool,
}

impl ConeReport {
    pub fn series(&self) -> Vec<[f64; 4]> {
        self.rows.iter().map(|r| [r.t, r.measured, r.bound, r.margin]).collect()
    }
}

/// Measured support radius against `r(t)` with two cells of slack.
pub fn cone_check(sol: &LatticeSolution, radii: &ConeRadii, theta: f64) -> Result<ConeReport, VerifyError> {
    let lp = &sol.problem;
    let h = lp.spacing();
    let mut rows = Vec::with_capacity(sol.snapshots.len());
    for snap in &sol.snapshots {
        let measured = support_radius(&snap.magnitude(lp.m), lp, &lp.data.x0, theta);
        let bound = radii.forward(snap.t)?;
        let margin = bound + 2.0 * h - measured;
        rows.push(ConeRow { t: snap.t, measured, bound, margin, pass: margin >= 0.0 });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(ConeReport { h, threshold: theta, rows, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct DodRow {
    pub t: f64,
    /// `ϱ(t)`
    pub rho: f64,
    /// `ϱ(t) − 2h`; rows with a nonpositive radius are skipped.
    pub radius: f64,
    pub skipped: bool,
    pub max_inside: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DodReport {
    pub h: f64,
    pub initial_max_inside: f64,
    pub rows: Vec<DodRow>,
    pub pass: bool,
}

impl DodReport {
    pub fn series(&self) -> Vec<[f64; 4]> {
        self.rows.iter().filter(|r| !r.skipped).map(|r| [r.t, r.max_inside, r.tolerance, r.tolerance - r.max_inside]).collect()
    }

    /// Largest `max |u|` over the checked balls.
    pub fn worst_inside(&self) -> f64 {
        self.rows.iter().filter(|r| !r.skipped).map(|r| r.max_inside).fold(0.0, f64::max)
    }
}

/// Checks that `u(t)` vanishes on `B(x0, ϱ(t) − 2h)` when the data vanish on
/// `B(x0, r0)`, with `r0 = radii.r0`.
pub fn dod_check(sol: &LatticeSolution, radii: &ConeRadii, x0: &[f64]) -> Result<DodReport, VerifyError> {
    let lp = &sol.problem;
    let h = lp.spacing();
    if x0.len() != lp.n {
        return Err(VerifyError::Invalid("center must have n coordinates".into()));
    }
    let dist: Vec<f64> = (0..lp.points()).map(|p| periodic_distance(&lp.point(p), x0, lp.box_size)).collect();
    let u0 = lp.sample_initial();
    let initial = u0.chunks(lp.m).zip(&dist).filter(|(_, d)| **d < radii.r0).map(|(v, _)| v.iter().fold(0.0f64, |a, x| a.max(x.abs()))).fold(0.0, f64::max);
    if initial > 1e-12 {
        return Err(VerifyError::PreconditionFailed(format!("data reach {initial:e} inside B(x0, r0)")));
    }
    let mut rows = Vec::with_capacity(sol.snapshots.len());
    for snap in &sol.snapshots {
        let rho = radii.backward(snap.t)?;
        let radius = rho - 2.0 * h;
        let mag = snap.magnitude(lp.m);
        let tolerance = (1e-6 * snap.max_abs).max(1e-8);
        if radius <= 0.0 {
            rows.push(DodRow { t: snap.t, rho, radius, skipped: true, max_inside: 0.0, tolerance, pass: true });
            continue;
        }
        let max_inside = mag.iter().zip(&dist).filter(|(_, d)| **d < radius).map(|(v, _)| *v).fold(0.0, f64::max);
        rows.push(DodRow { t: snap.t, rho, radius, skipped: false, max_inside, tolerance, pass: max_inside <= tolerance });
    }
    if rows.iter().all(|r| r.skipped) {
        return Err(VerifyError::EmptyRegion);
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(DodReport { h, initial_max_inside: initial, rows, pass })
}

/// Settings for [`pw_probe`].
#[derive(Debug, Clone, Serialize)]
pub struct PwSettings {
    pub directions: Vec<Vec<f64>>,
    pub magnitudes: Vec<f64>,
    pub xi0: Vec<f64>,
    pub delta: f64,
    /// Relative cutoff below which samples are dropped.
    pub cutoff: f64,
}

impl PwSettings {
    /// `count` directions on the unit sphere and `levels` log-spaced
    /// magnitudes over the decade below `|η| r = 30`.
    pub fn standard(n: usize, count: usize, levels: usize, r: f64, delta: f64) -> Self {
        Self { directions: sphere_directions(n, count, 0), magnitudes: probe_magnitudes(r, levels), xi0: vec![0.0; n], delta, cutoff: PW_NOISE_CUTOFF }
    }
}

/// `levels` magnitudes log-spaced on `[3/r, 30/r]`.
pub fn probe_magnitudes(r: f64, levels: usize) -> Vec<f64> {
    let top = PW_CEILING / r;
    (0..levels).map(|q| top * 10f64.powf(-1.0 + q as f64 / (levels - 1).max(1) as f64)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PwDirection {
    pub direction: Vec<f64>,
    /// `log |û(t, ξ0 + iη_q e)|`, floored.
    pub log_values: Vec<f64>,
    pub slope: f64,
    /// Fitted constant term, an empirical stand-in for `log C_δ`.
    pub intercept: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PwReport {
    pub t: f64,
    pub magnitudes: Vec<f64>,
    pub directions: Vec<PwDirection>,
    pub max_slope: f64,
    pub reference_radius: f64,
    pub delta: f64,
    pub fit_tol: f64,
    /// `(r + δ)(1 + fit_tol)`
    pub bound: f64,
    pub degenerate: bool,
    pub pass: bool,
}

/// Fits the exponential growth rate of the Fourier–Laplace transform
/// `û(ζ) = hⁿ Σ_x u(x) e^{−iζ·x}` along `ζ = ξ0 + iη e`.
///
/// Each direction is fitted with the terms of the large-`η` expansion
/// `a η + b + c ln η + d/η + e/η² + f/η³`, whose linear coefficient is the
/// support function of `supp u` in direction `e`. Field samples at or below
/// `settings.cutoff` of the peak are ignored, and transform values below
/// `PW_FLOOR · max` are excluded from the fit.
pub fn pw_probe(field: &[f64], lp: &LatticeProblem, t: f64, settings: &PwSettings, reference_radius: f64) -> Result<PwReport, VerifyError> {
    let m = lp.m;
    if field.len() != lp.points() * m {
        return Err(VerifyError::Invalid("field does not match the lattice".into()));
    }
    if settings.magnitudes.len() < 7 {
        return Err(VerifyError::Invalid("need at least 7 magnitudes for the fit".into()));
    }
    let eta_max = settings.magnitudes.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    if (reference_radius + settings.delta) * eta_max > 700.0 {
        return Err(VerifyError::DynamicRangeExceeded { eta: eta_max });
    }
    let hn = lp.spacing().powi(lp.n as i32);
    let peak = (0..lp.points()).map(|p| vec_norm_real(&field[p * m..(p + 1) * m])).fold(0.0f64, f64::max);
    let cut = settings.cutoff * peak;
    let points: Vec<(Vec<f64>, &[f64])> =
        (0..lp.points()).filter(|&p| vec_norm_real(&field[p * m..(p + 1) * m]) > cut).map(|p| (lp.point(p), &field[p * m..(p + 1) * m])).collect();

    let raw: Vec<Vec<f64>> = settings
        .directions
        .par_iter()
        .map(|e| {
            settings
                .magnitudes
                .iter()
                .map(|&eta| {
                    let mut acc = vec![C::new(0.0, 0.0); m];
                    for (x, u) in &points {
                        let phase = -x.iter().zip(&settings.xi0).map(|(a, b)| a * b).sum::<f64>();
                        let grow = eta * x.iter().zip(e).map(|(a, b)| a * b).sum::<f64>();
                        let w = C::from_polar(hn * grow.exp(), phase);
                        for i in 0..m {
                            acc[i] += w * u[i];
                        }
                    }
                    vec_norm(&acc)
                })
                .collect()
        })
        .collect();
    let global_max = raw.iter().flatten().fold(0.0f64, |a, v| a.max(*v));
    let floor = PW_FLOOR * global_max;

    let mut directions = Vec::with_capacity(raw.len());
    for (e, vals) in settings.directions.iter().zip(raw) {
        let usable: Vec<(f64, f64)> = settings.magnitudes.iter().zip(&vals).filter(|(_, v)| **v > floor && **v > 0.0).map(|(eta, v)| (*eta, v.ln())).collect();
        let log_values = vals.iter().map(|v| v.max(floor).max(f64::MIN_POSITIVE).ln()).collect();
        let (slope, intercept, degenerate) = if global_max == 0.0 || usable.len() < 7 {
            (0.0, 0.0, true)
        } else {
            let coef = watson_fit(&usable);
            (coef[1], coef[0], false)
        };
        directions.push(PwDirection { direction: e.clone(), log_values, slope, intercept, degenerate });
    }
    let max_slope = directions.iter().map(|d| d.slope).fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let bound = (reference_radius + settings.delta) * (1.0 + PW_FIT_TOL);
    let degenerate = directions.iter().all(|d| d.degenerate);
    Ok(PwReport {
        t,
        magnitudes: settings.magnitudes.clone(),
        directions,
        max_slope,
        reference_radius,
        delta: settings.delta,
        fit_tol: PW_FIT_TOL,
        bound,
        degenerate,
        pass: max_slope <= bound,
    })
}

/// Least-squares coefficients of `[1, η, ln η, 1/η, 1/η², 1/η³]`.
fn watson_fit(data: &[(f64, f64)]) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = data.iter().map(|&(eta, _)| vec![1.0, eta, eta.ln(), 1.0 / eta, eta.powi(-2), eta.powi(-3)]).collect();
    let rhs: Vec<f64> = data.iter().map(|&(_, y)| y).collect();
    lstsq(&rows, &rhs)
}

/// Householder least squares with column equilibration.
fn lstsq(rows: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let n_rows = rows.len();
    let n_cols = rows[0].len();
    let scale: Vec<f64> = (0..n_cols).map(|j| rows.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt().max(f64::MIN_POSITIVE)).collect();
    let mut a: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&scale).map(|(v, s)| v / s).collect()).collect();
    let mut b = rhs.to_vec();
    for j in 0..n_cols {
        let norm = (j..n_rows).map(|i| a[i][j] * a[i][j]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..n_rows).map(|i| a[i][j]).collect();
        v[0] -= alpha;
        let vn = v.iter().map(|x| x * x).sum::<f64>();
        if vn == 0.0 {
            continue;
        }
        for col in j..n_cols {
            let dot: f64 = (j..n_rows).map(|i| v[i - j] * a[i][col]).sum();
            for i in j..n_rows {
                a[i][col] -= 2.0 * dot / vn * v[i - j];
            }
        }
        let dot: f64 = (j..n_rows).map(|i| v[i - j] * b[i]).sum();
        for i in j..n_rows {
            b[i] -= 2.0 * dot / vn * v[i - j];
        }
    }
    let mut x = vec![0.0; n_cols];
    for j in (0..n_cols).rev() {
        let s: f64 = (j + 1..n_cols).map(|k| a[j][k] * x[k]).sum();
        x[j] = if a[j][j] != 0.0 { (b[j] - s) / a[j][j] } else { 0.0 };
    }
    x.iter().zip(&scale).map(|(v, s)| v / s).collect()
}

/// Writes `t, measured, bound, margin` rows as CSV.
pub fn write_series_csv<W: Write>(out: W, rows: &[[f64; 4]]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "measured", "bound", "margin"])?;
    for r in rows {
        w.write_record(r.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the probe values as `direction, eta, log_abs` rows.
pub fn write_pw_csv<W: Write>(out: W, report: &PwReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["direction", "eta", "log_abs"])?;
    for (d, dir) in report.directions.iter().enumerate() {
        for (eta, v) in report.magnitudes.iter().zip(&dir.log_values) {
            w.write_record([d.to_string(), format!("{eta:e}"), format!("{v:e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}
