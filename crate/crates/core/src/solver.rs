//! Fourier-side solvers for `∂_t û + i A(t, ζ) û = f̂`, per mode and on a periodic lattice.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::{CoefficientError, CoefficientFamily, ConeRadii};
use crate::matcore::{vec_norm, Mat};
use crate::quad::cumulative_trapezoid;
use crate::symbol::combine_complex;

pub const MIN_STEPS: usize = 8;
const OVERFLOW_FACTOR: f64 = 1e12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("amplitude blew past the overflow guard at time node {node} (mode {mode:?}); reduce Δt or ‖A‖")]
    StepOverflow { node: usize, mode: Option<usize> },
    #[error("time grid needs at least {MIN_STEPS} steps, got {0}")]
    TooFewSteps(usize),
    #[error("no-wrap condition violated: r(T) = {r_final:.6} must be < L/2 = {half_width:.6}")]
    NoWrap { r_final: f64, half_width: f64 },
    #[error("support radius {r0} must be < L/2 = {half_width}")]
    SupportTooLarge { r0: f64, half_width: f64 },
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
}

type C = Complex64;
const ZERO: C = C { re: 0.0, im: 0.0 };

/// `A_j` at every node and every step midpoint of a uniform grid.
#[derive(Debug, Clone)]
pub struct StageCoefficients {
    t_final: f64,
    n_t: usize,
    node: Vec<Vec<Mat>>,
    mid: Vec<Vec<Mat>>,
}

impl StageCoefficients {
    pub fn new(c: &CoefficientFamily, n_t: usize) -> Result<Self, SolverError> {
        if n_t < MIN_STEPS {
            return Err(SolverError::TooFewSteps(n_t));
        }
        let t_final = c.t_final();
        let dt = t_final / n_t as f64;
        let node = (0..=n_t).map(|k| c.eval(if k == n_t { t_final } else { k as f64 * dt })).collect::<Result<_, _>>()?;
        let mid = (0..n_t).map(|k| c.eval((k as f64 + 0.5) * dt)).collect::<Result<_, _>>()?;
        Ok(Self { t_final, n_t, node, mid })
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_t as f64
    }

    pub fn times(&self) -> Vec<f64> {
        time_nodes(self.t_final, self.n_t)
    }

    fn symbol_node(&self, k: usize, zeta: &[C]) -> Mat {
        combine_complex(&self.node[k], zeta)
    }

    fn symbol_mid(&self, k: usize, zeta: &[C]) -> Mat {
        combine_complex(&self.mid[k], zeta)
    }
}

/// `N_t + 1` uniform nodes on `[0, T]`, the last one exactly `T`.
pub fn time_nodes(t_final: f64, n_t: usize) -> Vec<f64> {
    let dt = t_final / n_t as f64;
    (0..=n_t).map(|k| if k == n_t { t_final } else { k as f64 * dt }).collect()
}

/// One Fourier mode of the Cauchy problem.
#[derive(Debug, Clone)]
pub struct ModeProblem {
    pub family: CoefficientFamily,
    pub zeta: Vec<C>,
    pub u0: Vec<C>,
    /// `f̂(t_k, ζ)` at the time nodes; empty for `f ≡ 0`.
    pub forcing: Vec<Vec<C>>,
    pub n_t: usize,
}

impl ModeProblem {
    /// Real frequency, no forcing.
    pub fn real(family: &CoefficientFamily, xi: &[f64], u0: Vec<C>, n_t: usize) -> Self {
        Self { family: family.clone(), zeta: xi.iter().map(|&x| C::new(x, 0.0)).collect(), u0, forcing: Vec::new(), n_t }
    }

    fn check(&self) -> Result<(), SolverError> {
        if self.n_t < MIN_STEPS {
            return Err(SolverError::TooFewSteps(self.n_t));
        }
        if self.zeta.len() != self.family.n() {
            return Err(SolverError::Invalid(format!("ζ has {} components, expected {}", self.zeta.len(), self.family.n())));
        }
        if self.u0.len() != self.family.m() {
            return Err(SolverError::Invalid(format!("û₀ has {} components, expected {}", self.u0.len(), self.family.m())));
        }
        if !self.forcing.is_empty() && (self.forcing.len() != self.n_t + 1 || self.forcing.iter().any(|f| f.len() != self.family.m())) {
            return Err(SolverError::Invalid("forcing must give an m-vector at each of the N_t + 1 nodes".into()));
        }
        Ok(())
    }
}

/// Node values of a single mode.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<Vec<C>>,
}

impl Trajectory {
    pub fn last(&self) -> &[C] {
        self.values.last().expect("trajectory is never empty")
    }

    pub fn norms(&self) -> Vec<f64> {
        self.values.iter().map(|v| vec_norm(v)).collect()
    }
}

/// `y ← -i M x + f` written into `out`.
fn rhs(a: &Mat, x: &[C], f: Option<&[C]>, out: &mut [C]) {
    a.matvec_into(x, out);
    for (i, o) in out.iter_mut().enumerate() {
        *o = C::new(o.im, -o.re) + f.map_or(ZERO, |f| f[i]);
    }
}

/// Classical RK4 through the whole grid; `keep(k, û(t_k))` sees every node.
fn rk4_core(stages: &StageCoefficients, zeta: &[C], u0: &[C], forcing: &[Vec<C>], mut keep: impl FnMut(usize, &[C])) -> Result<(), usize> {
    let m = u0.len();
    let dt = stages.dt();
    let limit = OVERFLOW_FACTOR * (vec_norm(u0) + 1.0);
    let mut u = u0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![ZERO; m], vec![ZERO; m], vec![ZERO; m], vec![ZERO; m], vec![ZERO; m]);
    let mut f_mid = vec![ZERO; m];
    keep(0, &u);
    let mut a_start = stages.symbol_node(0, zeta);
    for k in 0..stages.n_t {
        let a_mid = stages.symbol_mid(k, zeta);
        let a_end = stages.symbol_node(k + 1, zeta);
        let (f0, f1) = if forcing.is_empty() { (None, None) } else { (Some(forcing[k].as_slice()), Some(forcing[k + 1].as_slice())) };
        if let (Some(f0), Some(f1)) = (f0, f1) {
            for i in 0..m {
                f_mid[i] = 0.5 * (f0[i] + f1[i]);
            }
        }
        let fm = f0.map(|_| f_mid.as_slice());
        rhs(&a_start, &u, f0, &mut k1);
        for i in 0..m {
            tmp[i] = u[i] + 0.5 * dt * k1[i];
        }
        if vec_norm(&tmp) > limit {
            return Err(k);
        }
        rhs(&a_mid, &tmp, fm, &mut k2);
        for i in 0..m {
            tmp[i] = u[i] + 0.5 * dt * k2[i];
        }
        if vec_norm(&tmp) > limit {
            return Err(k);
        }
        rhs(&a_mid, &tmp, fm, &mut k3);
        for i in 0..m {
            tmp[i] = u[i] + dt * k3[i];
        }
        if vec_norm(&tmp) > limit {
            return Err(k);
        }
        rhs(&a_end, &tmp, f1, &mut k4);
        for i in 0..m {
            u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let norm = vec_norm(&u);
        if !(norm <= limit) {
            return Err(k + 1);
        }
        keep(k + 1, &u);
        a_start = a_end;
    }
    Ok(())
}

/// Classical fourth-order Runge–Kutta; forcing is interpolated linearly at stage times.
pub fn solve_mode_rk4(p: &ModeProblem) -> Result<Trajectory, SolverError> {
    p.check()?;
    let stages = StageCoefficients::new(&p.family, p.n_t)?;
    solve_mode_rk4_with(&stages, p)
}

/// [`solve_mode_rk4`] reusing precomputed stage coefficients.
pub fn solve_mode_rk4_with(stages: &StageCoefficients, p: &ModeProblem) -> Result<Trajectory, SolverError> {
    p.check()?;
    if stages.n_t != p.n_t {
        return Err(SolverError::Invalid("stage coefficients built for a different grid".into()));
    }
    let mut values = Vec::with_capacity(p.n_t + 1);
    rk4_core(stages, &p.zeta, &p.u0, &p.forcing, |_, u| values.push(u.to_vec())).map_err(|node| SolverError::StepOverflow { node, mode: None })?;
    Ok(Trajectory { times: stages.times(), values })
}

/// Picard iterates `û⁽ᵏ⁺¹⁾(t) = û₀ + ∫_0^t (f̂ − i A û⁽ᵏ⁾) dτ` with the trapezoid rule on the grid.
pub fn solve_mode_picard(p: &ModeProblem, iters: usize) -> Result<Trajectory, SolverError> {
    p.check()?;
    if iters == 0 {
        return Err(SolverError::Invalid("Picard iteration needs iters ≥ 1".into()));
    }
    let times = time_nodes(p.family.t_final(), p.n_t);
    let m = p.u0.len();
    let symbols: Vec<Mat> = times.iter().map(|&t| Ok(combine_complex(&p.family.eval(t)?, &p.zeta))).collect::<Result<_, SolverError>>()?;
    let mut current = vec![p.u0.clone(); times.len()];
    let mut integrand_re = vec![0.0; times.len()];
    let mut integrand_im = vec![0.0; times.len()];
    let mut g = vec![vec![ZERO; m]; times.len()];
    for _ in 0..iters {
        for (k, a) in symbols.iter().enumerate() {
            rhs(a, &current[k], p.forcing.get(k).map(|f| f.as_slice()), &mut g[k]);
        }
        let mut next = vec![p.u0.clone(); times.len()];
        for i in 0..m {
            for k in 0..times.len() {
                integrand_re[k] = g[k][i].re;
                integrand_im[k] = g[k][i].im;
            }
            let re = cumulative_trapezoid(&times, &integrand_re);
            let im = cumulative_trapezoid(&times, &integrand_im);
            for k in 0..times.len() {
                next[k][i] += C::new(re[k], im[k]);
            }
        }
        current = next;
    }
    Ok(Trajectory { times, values: current })
}

/// Profile shape of the initial data. All profiles are `(1 − s²)^p`-type
/// polynomial bumps of order `p`, compactly supported and `C^{p−1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DataPreset {
    /// Supported in `B(x0, r0)`.
    Bump,
    /// Supported in the shell `r0/2 < |x − x0| < r0`.
    Ring,
    /// Vanishes on `B(x0, r0)`, supported in the shell `r0 < |x − x0| < r0 + width`.
    Hole { width: f64 },
}

pub const PROFILE_ORDER: i32 = 8;

/// Scalar initial profile times a fixed polarization vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialData {
    pub preset: DataPreset,
    pub r0: f64,
    pub x0: Vec<f64>,
    pub polarization: Vec<f64>,
}

impl InitialData {
    pub fn new(preset: DataPreset, r0: f64, x0: Vec<f64>, polarization: Vec<f64>) -> Self {
        Self { preset, r0, x0, polarization }
    }

    fn shell(s: f64, a: f64, b: f64) -> f64 {
        if s <= a || s >= b {
            0.0
        } else {
            (4.0 * (s - a) * (b - s) / ((b - a) * (b - a))).powi(PROFILE_ORDER)
        }
    }

    /// The scalar profile at distance `s` from the center.
    pub fn profile(&self, s: f64) -> f64 {
        match self.preset {
            DataPreset::Bump => {
                if s >= self.r0 {
                    0.0
                } else {
                    let q = s / self.r0;
                    (1.0 - q * q).powi(PROFILE_ORDER)
                }
            }
            DataPreset::Ring => Self::shell(s, 0.5 * self.r0, self.r0),
            DataPreset::Hole { width } => Self::shell(s, self.r0, self.r0 + width),
        }
    }

    /// Radius of the ball outside which the data vanish.
    pub fn outer_radius(&self) -> f64 {
        match self.preset {
            DataPreset::Bump | DataPreset::Ring => self.r0,
            DataPreset::Hole { width } => self.r0 + width,
        }
    }

    /// Radius of the ball on which the data vanish, if any.
    pub fn hole_radius(&self) -> Option<f64> {
        match self.preset {
            DataPreset::Hole { .. } => Some(self.r0),
            DataPreset::Ring => Some(0.5 * self.r0),
            DataPreset::Bump => None,
        }
    }
}

/// Forcing `f(t, x)` returning a real m-vector.
pub type ForcingFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Cauchy problem on the periodic box `[−L/2, L/2)^n` with `N` points per axis.
#[derive(Clone)]
pub struct LatticeProblem {
    pub n: usize,
    pub m: usize,
    pub box_size: f64,
    pub grid: usize,
    pub data: InitialData,
    pub forcing: Option<ForcingFn>,
    /// Radius of the ball containing `supp f(t)`, if there is forcing.
    pub forcing_radius: f64,
}

impl std::fmt::Debug for LatticeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatticeProblem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("box_size", &self.box_size)
            .field("grid", &self.grid)
            .field("data", &self.data)
            .field("forcing", &self.forcing.is_some())
            .finish()
    }
}

impl LatticeProblem {
    pub fn new(n: usize, m: usize, box_size: f64, grid: usize, data: InitialData) -> Self {
        Self { n, m, box_size, grid, data, forcing: None, forcing_radius: 0.0 }
    }

    pub fn with_forcing(mut self, f: ForcingFn, radius: f64) -> Self {
        self.forcing = Some(f);
        self.forcing_radius = radius;
        self
    }

    pub fn spacing(&self) -> f64 {
        self.box_size / self.grid as f64
    }

    pub fn points(&self) -> usize {
        self.grid.pow(self.n as u32)
    }

    /// Declared support radius of the data and forcing around `x0`.
    pub fn support_radius(&self) -> f64 {
        self.data.outer_radius().max(if self.forcing.is_some() { self.forcing_radius } else { 0.0 })
    }

    /// Lattice coordinates of point `index` (last axis fastest).
    pub fn point(&self, index: usize) -> Vec<f64> {
        let h = self.spacing();
        multi_index(index, self.n, self.grid).into_iter().map(|j| -0.5 * self.box_size + j as f64 * h).collect()
    }

    /// `ξ_k = 2πk/L` for mode `index` in FFT order.
    pub fn frequency(&self, index: usize) -> Vec<f64> {
        let scale = 2.0 * std::f64::consts::PI / self.box_size;
        multi_index(index, self.n, self.grid).into_iter().map(|k| scale * signed_index(k, self.grid) as f64).collect()
    }

    fn mirror(&self, index: usize) -> usize {
        let idx = multi_index(index, self.n, self.grid);
        idx.iter().fold(0, |acc, &k| acc * self.grid + (self.grid - k) % self.grid)
    }

    fn is_nyquist(&self, index: usize) -> bool {
        multi_index(index, self.n, self.grid).contains(&(self.grid / 2))
    }

    /// Checks the lattice invariants and the no-wrap condition against `radii`.
    pub fn check(&self, c: &CoefficientFamily, radii: &ConeRadii) -> Result<(), SolverError> {
        if self.n == 0 || self.n > 3 {
            return Err(SolverError::Invalid(format!("dimension n = {} must be 1, 2 or 3", self.n)));
        }
        if self.grid < 4 || !self.grid.is_multiple_of(2) {
            return Err(SolverError::Invalid(format!("grid size N = {} must be even and ≥ 4", self.grid)));
        }
        if !(self.box_size > 0.0 && self.box_size.is_finite()) {
            return Err(SolverError::Invalid("box size L must be positive".into()));
        }
        if c.n() != self.n || c.m() != self.m {
            return Err(SolverError::Invalid(format!("coefficients have (n, m) = ({}, {}), lattice has ({}, {})", c.n(), c.m(), self.n, self.m)));
        }
        if self.data.x0.len() != self.n || self.data.polarization.len() != self.m {
            return Err(SolverError::Invalid("center x0 needs n entries and polarization m entries".into()));
        }
        let half_width = 0.5 * self.box_size;
        let reach = self.support_radius() + self.data.x0.iter().map(|x| x * x).sum::<f64>().sqrt();
        if reach >= half_width {
            return Err(SolverError::SupportTooLarge { r0: reach, half_width });
        }
        let r_final = radii.forward(c.t_final())? - radii.r0 + reach;
        if r_final >= half_width {
            return Err(SolverError::NoWrap { r_final, half_width });
        }
        Ok(())
    }

    /// Initial data sampled on the grid, point-major.
    pub fn sample_initial(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.points() * self.m];
        for p in 0..self.points() {
            let x = self.point(p);
            let g = self.data.profile(periodic_distance(&x, &self.data.x0, self.box_size));
            for (i, w) in self.data.polarization.iter().enumerate() {
                out[p * self.m + i] = g * w;
            }
        }
        out
    }

    fn sample_forcing(&self, f: &ForcingFn, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.points() * self.m];
        for p in 0..self.points() {
            let v = f(t, &self.point(p));
            out[p * self.m..(p + 1) * self.m].copy_from_slice(&v[..self.m]);
        }
        out
    }
}

fn multi_index(mut index: usize, n: usize, grid: usize) -> Vec<usize> {
    let mut idx = vec![0; n];
    for a in (0..n).rev() {
        idx[a] = index % grid;
        index /= grid;
    }
    idx
}

fn signed_index(k: usize, grid: usize) -> i64 {
    if k < grid / 2 {
        k as i64
    } else {
        k as i64 - grid as i64
    }
}

/// Euclidean distance on the torus of side `box_size`.
pub fn periodic_distance(x: &[f64], y: &[f64], box_size: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = (a - b).rem_euclid(box_size);
            let d = d.min(box_size - d);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Forward and inverse `n`-dimensional transforms with the lattice conventions
/// `û_k = hⁿ Σ_x u(x) e^{−iξ_k·x}` and `u(x) = L⁻ⁿ Σ_k û_k e^{iξ_k·x}`.
struct Transform {
    n: usize,
    grid: usize,
    box_size: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Transform {
    fn new(n: usize, grid: usize, box_size: f64) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, grid, box_size, forward: planner.plan_fft_forward(grid), inverse: planner.plan_fft_inverse(grid) }
    }

    fn sign(&self, index: usize) -> f64 {
        let total: usize = multi_index(index, self.n, self.grid).iter().sum();
        if total.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    fn along_axes(&self, data: &mut [C], plan: &Arc<dyn Fft<f64>>) {
        let g = self.grid;
        let mut line = vec![ZERO; g];
        for axis in 0..self.n {
            let stride = g.pow((self.n - 1 - axis) as u32);
            let block = stride * g;
            for start in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for j in 0..g {
                        line[j] = data[base + j * stride];
                    }
                    plan.process(&mut line);
                    for j in 0..g {
                        data[base + j * stride] = line[j];
                    }
                }
            }
        }
    }

    fn forward(&self, values: &[f64]) -> Vec<C> {
        let mut data: Vec<C> = values.iter().map(|&v| C::new(v, 0.0)).collect();
        self.along_axes(&mut data, &self.forward);
        let h = (self.box_size / self.grid as f64).powi(self.n as i32);
        for (k, d) in data.iter_mut().enumerate() {
            *d *= h * self.sign(k);
        }
        data
    }

    fn inverse(&self, modes: &[C]) -> Vec<C> {
        let mut data: Vec<C> = modes.iter().enumerate().map(|(k, &v)| v * self.sign(k)).collect();
        self.along_axes(&mut data, &self.inverse);
        let scale = self.box_size.powi(-(self.n as i32));
        for d in data.iter_mut() {
            *d *= scale;
        }
        data
    }
}

/// Solution at one output time.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub node: usize,
    /// `û(t, ξ_k)`, mode-major.
    #[serde(skip)]
    pub modes: Vec<C>,
    /// `Re u(t, x)`, point-major.
    #[serde(skip)]
    pub field: Vec<f64>,
    pub max_abs: f64,
    pub max_imag_residue: f64,
    /// `max |û(−ξ) − conj û(ξ)| / max |û|`.
    pub hermitian_defect: f64,
}

impl Snapshot {
    /// Component `i` of the physical field.
    pub fn component(&self, m: usize, i: usize) -> Vec<f64> {
        self.field.iter().skip(i).step_by(m).copied().collect()
    }

    /// Pointwise Euclidean norm of the physical field.
    pub fn magnitude(&self, m: usize) -> Vec<f64> {
        self.field.chunks(m).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect()
    }
}

/// Output of [`solve_lattice`].
#[derive(Debug, Clone)]
pub struct LatticeSolution {
    pub problem: LatticeProblem,
    pub t_final: f64,
    pub n_t: usize,
    pub snapshots: Vec<Snapshot>,
    /// Full per-mode trajectories when requested.
    pub trajectories: Option<Vec<Trajectory>>,
    /// Forcing transforms per node, mode-major, when there is forcing.
    pub forcing_modes: Option<Vec<Vec<C>>>,
}

impl LatticeSolution {
    pub fn spacing(&self) -> f64 {
        self.problem.spacing()
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }
}

/// Options for [`solve_lattice`].
#[derive(Debug, Clone, Default)]
pub struct LatticeOptions {
    /// Output times, snapped to the nearest node.
    pub output_times: Vec<f64>,
    pub keep_trajectories: bool,
}

/// Node index nearest to `t`.
pub fn snap_to_node(t: f64, t_final: f64, n_t: usize) -> usize {
    ((t / t_final) * n_t as f64).round().clamp(0.0, n_t as f64) as usize
}

/// Transforms the data, advances every lattice mode with RK4, and synthesizes
/// the physical field at the requested output times.
///
/// The Nyquist modes are set to zero: their mirror image is themselves, so
/// they cannot carry a real solution under a nonsymmetric evolution.
pub fn solve_lattice(lp: &LatticeProblem, c: &CoefficientFamily, radii: &ConeRadii, n_t: usize, opts: &LatticeOptions) -> Result<LatticeSolution, SolverError> {
    lp.check(c, radii)?;
    let stages = StageCoefficients::new(c, n_t)?;
    let times = stages.times();
    let m = lp.m;
    let modes = lp.points();
    let tf = Transform::new(lp.n, lp.grid, lp.box_size);

    let u0 = lp.sample_initial();
    let mut u0_hat = vec![ZERO; modes * m];
    for i in 0..m {
        let comp: Vec<f64> = u0.iter().skip(i).step_by(m).copied().collect();
        for (k, v) in tf.forward(&comp).into_iter().enumerate() {
            u0_hat[k * m + i] = v;
        }
    }

    let forcing_modes = lp.forcing.as_ref().map(|f| {
        times
            .iter()
            .map(|&t| {
                let sample = lp.sample_forcing(f, t);
                let mut hat = vec![ZERO; modes * m];
                for i in 0..m {
                    let comp: Vec<f64> = sample.iter().skip(i).step_by(m).copied().collect();
                    for (k, v) in tf.forward(&comp).into_iter().enumerate() {
                        hat[k * m + i] = v;
                    }
                }
                hat
            })
            .collect::<Vec<_>>()
    });

    let mut out_nodes: Vec<usize> = opts.output_times.iter().map(|&t| snap_to_node(t, c.t_final(), n_t)).collect();
    out_nodes.sort_unstable();
    out_nodes.dedup();
    let mut keep = vec![opts.keep_trajectories; n_t + 1];
    for &k in &out_nodes {
        keep[k] = true;
    }

    let results: Vec<Result<Vec<Vec<C>>, SolverError>> = (0..modes)
        .into_par_iter()
        .map(|k| {
            if lp.is_nyquist(k) {
                return Ok(keep.iter().filter(|&&b| b).map(|_| vec![ZERO; m]).collect());
            }
            let zeta: Vec<C> = lp.frequency(k).into_iter().map(|x| C::new(x, 0.0)).collect();
            let forcing: Vec<Vec<C>> = forcing_modes.as_ref().map_or(Vec::new(), |fm| fm.iter().map(|node| node[k * m..(k + 1) * m].to_vec()).collect());
            let mut kept = Vec::new();
            rk4_core(&stages, &zeta, &u0_hat[k * m..(k + 1) * m], &forcing, |node, u| {
                if keep[node] {
                    kept.push(u.to_vec());
                }
            })
            .map_err(|node| SolverError::StepOverflow { node, mode: Some(k) })?;
            Ok(kept)
        })
        .collect();
    let per_mode: Vec<Vec<Vec<C>>> = results.into_iter().collect::<Result<_, _>>()?;
    let kept_nodes: Vec<usize> = (0..=n_t).filter(|&k| keep[k]).collect();

    let mut snapshots = Vec::with_capacity(out_nodes.len());
    for &node in &out_nodes {
        let slot = kept_nodes.binary_search(&node).expect("output node is kept");
        let mut hat = vec![ZERO; modes * m];
        for k in 0..modes {
            hat[k * m..(k + 1) * m].copy_from_slice(&per_mode[k][slot]);
        }
        let max_hat = hat.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut asym: f64 = 0.0;
        for k in 0..modes {
            if lp.is_nyquist(k) {
                continue;
            }
            let mk = lp.mirror(k);
            for i in 0..m {
                asym = asym.max((hat[mk * m + i] - hat[k * m + i].conj()).norm());
            }
        }
        let mut field = vec![0.0; modes * m];
        let mut max_imag: f64 = 0.0;
        for i in 0..m {
            let comp: Vec<C> = hat.iter().skip(i).step_by(m).copied().collect();
            for (p, v) in tf.inverse(&comp).into_iter().enumerate() {
                field[p * m + i] = v.re;
                max_imag = max_imag.max(v.im.abs());
            }
        }
        let max_abs = field.iter().map(|x| x.abs()).fold(0.0, f64::max);
        snapshots.push(Snapshot {
            t: times[node],
            node,
            modes: hat,
            field,
            max_abs,
            max_imag_residue: max_imag,
            hermitian_defect: if max_hat > 0.0 { asym / max_hat } else { 0.0 },
        });
    }

    let trajectories =
        if opts.keep_trajectories { Some(per_mode.into_iter().map(|values| Trajectory { times: times.clone(), values }).collect()) } else { None };

    Ok(LatticeSolution { problem: lp.clone(), t_final: c.t_final(), n_t, snapshots, trajectories, forcing_modes })
}
