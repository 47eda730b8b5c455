//! Time-dependent coefficient families `t ↦ (A_1(t), …, A_n(t))` on `[0, T]`.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matcore::{op_norm, Mat, MatError};

#[derive(Debug, Error)]
pub enum CoefficientError {
    #[error("time {t} outside [0, {t_final}]")]
    OutOfDomain { t: f64, t_final: f64 },
    #[error("adaptive quadrature hit depth cap on [{a}, {b}]")]
    QuadratureFailure { a: f64, b: f64 },
    #[error("invalid coefficient family: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Mat(#[from] MatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Constant,
    Smooth,
    Piecewise,
    Sampled,
}

type CustomFn = dyn Fn(f64) -> Vec<Mat> + Send + Sync;

#[derive(Clone)]
enum Source {
    Constant(Vec<Mat>),
    Smooth { b: Vec<Mat>, omega: f64 },
    Piecewise { jumps: Vec<f64>, levels: Vec<Vec<Mat>> },
    Holder { b: Vec<Mat>, t0: f64, gamma: f64, offset: f64 },
    Singular { b: Vec<Mat>, t0: f64 },
    Sampled { times: Vec<f64>, mats: Vec<Vec<Mat>> },
    Custom(Arc<CustomFn>),
}

/// A coefficient family with its quadrature metadata.
#[derive(Clone)]
pub struct CoefficientFamily {
    n: usize,
    m: usize,
    t_final: f64,
    kind: Kind,
    preset: &'static str,
    source: Source,
    breakpoints: Vec<f64>,
    scale: f64,
}

impl fmt::Debug for CoefficientFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientFamily")
            .field("preset", &self.preset)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("t_final", &self.t_final)
            .field("kind", &self.kind)
            .field("scale", &self.scale)
            .finish()
    }
}

fn check_mats(b: &[Mat]) -> Result<(usize, usize), CoefficientError> {
    let n = b.len();
    if n == 0 {
        return Err(CoefficientError::Invalid("need at least one space dimension".into()));
    }
    let m = b[0].dim();
    for a in b {
        if a.dim() != m {
            return Err(CoefficientError::Invalid("coefficient matrices differ in size".into()));
        }
        if !a.is_real() {
            return Err(CoefficientError::Invalid("coefficient matrices must be real".into()));
        }
    }
    Ok((n, m))
}

fn check_t_final(t_final: f64) -> Result<(), CoefficientError> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(CoefficientError::Invalid(format!("final time {t_final} must be positive")));
    }
    Ok(())
}

fn sum_norms(b: &[Mat]) -> f64 {
    b.iter().map(op_norm).sum()
}

impl CoefficientFamily {
    fn new(n: usize, m: usize, t_final: f64, kind: Kind, preset: &'static str, source: Source, breakpoints: Vec<f64>) -> Self {
        let mut bp: Vec<f64> = breakpoints.into_iter().filter(|&x| x > 0.0 && x < t_final).collect();
        bp.sort_by(f64::total_cmp);
        bp.dedup();
        Self { n, m, t_final, kind, preset, source, breakpoints: bp, scale: 1.0 }
    }

    /// `A_j(t) = B_j`.
    pub fn constant(b: Vec<Mat>, t_final: f64) -> Result<Self, CoefficientError> {
        let (n, m) = check_mats(&b)?;
        check_t_final(t_final)?;
        Ok(Self::new(n, m, t_final, Kind::Constant, "constant", Source::Constant(b), vec![]))
    }

    /// `A_j(t) = B_j (1 + ½ sin ωt)`.
    pub fn smooth(b: Vec<Mat>, omega: f64, t_final: f64) -> Result<Self, CoefficientError> {
        let (n, m) = check_mats(&b)?;
        check_t_final(t_final)?;
        if !omega.is_finite() || omega == 0.0 {
            return Err(CoefficientError::Invalid("omega must be finite and nonzero".into()));
        }
        Ok(Self::new(n, m, t_final, Kind::Smooth, "smooth", Source::Smooth { b, omega }, vec![]))
    }

    /// Piecewise-constant: `levels[k]` holds on `[jumps[k-1], jumps[k])`.
    pub fn piecewise(jumps: Vec<f64>, levels: Vec<Vec<Mat>>, t_final: f64) -> Result<Self, CoefficientError> {
        check_t_final(t_final)?;
        if levels.len() != jumps.len() + 1 {
            return Err(CoefficientError::Invalid("need one more level than jumps".into()));
        }
        if jumps.windows(2).any(|w| w[0] >= w[1]) || jumps.iter().any(|&x| x <= 0.0 || x >= t_final) {
            return Err(CoefficientError::Invalid("jumps must increase strictly inside (0, T)".into()));
        }
        let (n, m) = check_mats(&levels[0])?;
        for l in &levels {
            if check_mats(l)? != (n, m) {
                return Err(CoefficientError::Invalid("levels differ in shape".into()));
            }
        }
        let bp = jumps.clone();
        Ok(Self::new(n, m, t_final, Kind::Piecewise, "piecewise", Source::Piecewise { jumps, levels }, bp))
    }

    /// `A_j(t) = B_j (offset + |t − t0|^γ)`, γ ∈ (0, 1), offset ≥ 0.
    pub fn holder(b: Vec<Mat>, t0: f64, gamma: f64, offset: f64, t_final: f64) -> Result<Self, CoefficientError> {
        let (n, m) = check_mats(&b)?;
        check_t_final(t_final)?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(CoefficientError::Invalid("gamma must lie in (0, 1)".into()));
        }
        if !(offset >= 0.0) || !(0.0..=t_final).contains(&t0) {
            return Err(CoefficientError::Invalid("need offset ≥ 0 and t0 ∈ [0, T]".into()));
        }
        Ok(Self::new(n, m, t_final, Kind::Piecewise, "holder", Source::Holder { b, t0, gamma, offset }, vec![t0]))
    }

    /// `A_j(t) = B_j |t − t0|^(−1/2) / 10`, set to zero at `t0`.
    pub fn singular(b: Vec<Mat>, t0: f64, t_final: f64) -> Result<Self, CoefficientError> {
        let (n, m) = check_mats(&b)?;
        check_t_final(t_final)?;
        if !(0.0..=t_final).contains(&t0) {
            return Err(CoefficientError::Invalid("t0 must lie in [0, T]".into()));
        }
        Ok(Self::new(n, m, t_final, Kind::Piecewise, "singular", Source::Singular { b, t0 }, vec![t0]))
    }

    /// Piecewise-linear interpolation between sample nodes; `T` is the last node.
    pub fn sampled(times: Vec<f64>, mats: Vec<Vec<Mat>>) -> Result<Self, CoefficientError> {
        if times.len() < 2 || times.len() != mats.len() {
            return Err(CoefficientError::Invalid("need at least two nodes with one matrix list each".into()));
        }
        if times[0] != 0.0 {
            return Err(CoefficientError::Invalid("sample grid must start at t = 0".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CoefficientError::Invalid("sample times must increase strictly".into()));
        }
        let (n, m) = check_mats(&mats[0])?;
        for l in &mats {
            if check_mats(l)? != (n, m) {
                return Err(CoefficientError::Invalid("sample matrices differ in shape".into()));
            }
        }
        let t_final = *times.last().unwrap();
        let bp = times.clone();
        Ok(Self::new(n, m, t_final, Kind::Sampled, "sampled", Source::Sampled { times, mats }, bp))
    }

    /// User-supplied evaluator. `breakpoints` mark where it may be nonsmooth.
    pub fn custom<F>(n: usize, m: usize, t_final: f64, kind: Kind, breakpoints: Vec<f64>, f: F) -> Result<Self, CoefficientError>
    where
        F: Fn(f64) -> Vec<Mat> + Send + Sync + 'static,
    {
        check_t_final(t_final)?;
        let probe = f(0.0);
        if probe.len() != n || check_mats(&probe)? != (n, m) {
            return Err(CoefficientError::Invalid("custom evaluator returned the wrong shape".into()));
        }
        Ok(Self::new(n, m, t_final, kind, "custom", Source::Custom(Arc::new(f)), breakpoints))
    }

    /// Loads a sampled family from CSV with header `t,j,row,col,value`.
    ///
    /// Indices are zero-based. Missing entries are zero. Rows must be sorted by `t`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, CoefficientError> {
        #[derive(Deserialize)]
        struct Row {
            t: f64,
            j: usize,
            row: usize,
            col: usize,
            value: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| CoefficientError::Csv(e.to_string()))?.clone();
        let expected = ["t", "j", "row", "col", "value"];
        if headers.len() != 5 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(CoefficientError::Csv(format!("header must be {}", expected.join(","))));
        }
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<Row>() {
            rows.push(rec.map_err(|e| CoefficientError::Csv(e.to_string()))?);
        }
        if rows.is_empty() {
            return Err(CoefficientError::Csv("no data rows".into()));
        }
        if rows.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(CoefficientError::Csv("rows must be sorted by t".into()));
        }
        if rows.iter().any(|r| !r.t.is_finite() || !r.value.is_finite()) {
            return Err(CoefficientError::Csv("non-finite time or value".into()));
        }
        let n = rows.iter().map(|r| r.j).max().unwrap() + 1;
        let m = rows.iter().map(|r| r.row.max(r.col)).max().unwrap() + 1;
        if m > crate::matcore::MAX_DIM {
            return Err(CoefficientError::Csv(format!("system size {m} too large")));
        }
        let mut times: Vec<f64> = Vec::new();
        let mut mats: Vec<Vec<Mat>> = Vec::new();
        for r in &rows {
            if times.last() != Some(&r.t) {
                times.push(r.t);
                mats.push(vec![Mat::zeros(m); n]);
            }
            let slot = mats.last_mut().unwrap();
            slot[r.j][(r.row, r.col)] = num_complex::Complex64::new(r.value, 0.0);
        }
        Self::sampled(times, mats)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, CoefficientError> {
        let f = std::fs::File::open(path).map_err(|e| CoefficientError::Csv(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(f)
    }

    /// The same family with every `A_j` multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale *= s;
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn preset(&self) -> &'static str {
        self.preset
    }

    /// Interior points where the family may fail to be smooth.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    fn check_t(&self, t: f64) -> Result<f64, CoefficientError> {
        let slack = 1e-12 * (1.0 + self.t_final);
        if !(t >= -slack && t <= self.t_final + slack) {
            return Err(CoefficientError::OutOfDomain { t, t_final: self.t_final });
        }
        Ok(t.clamp(0.0, self.t_final))
    }

    /// `(A_1(t), …, A_n(t))`.
    pub fn eval(&self, t: f64) -> Result<Vec<Mat>, CoefficientError> {
        let t = self.check_t(t)?;
        Ok(self.eval_unchecked(t))
    }

    fn scalar_factor(&self, t: f64) -> Option<f64> {
        match &self.source {
            Source::Constant(_) => Some(1.0),
            Source::Smooth { omega, .. } => Some(1.0 + 0.5 * (omega * t).sin()),
            Source::Holder { t0, gamma, offset, .. } => Some(offset + (t - t0).abs().powf(*gamma)),
            Source::Singular { t0, .. } => {
                let d = (t - t0).abs();
                Some(if d == 0.0 { 0.0 } else { 0.1 / d.sqrt() })
            }
            _ => None,
        }
    }

    fn eval_unchecked(&self, t: f64) -> Vec<Mat> {
        let raw: Vec<Mat> = match &self.source {
            Source::Constant(b) | Source::Smooth { b, .. } | Source::Holder { b, .. } | Source::Singular { b, .. } => {
                let f = self.scalar_factor(t).unwrap();
                b.iter().map(|a| a.scale(f)).collect()
            }
            Source::Piecewise { jumps, levels } => {
                let k = jumps.partition_point(|&x| x <= t);
                levels[k].clone()
            }
            Source::Sampled { times, mats } => {
                let k = times.partition_point(|&x| x <= t).clamp(1, times.len() - 1);
                let (t0, t1) = (times[k - 1], times[k]);
                let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                mats[k - 1]
                    .iter()
                    .zip(&mats[k])
                    .map(|(a, b)| {
                        let mut out = a.scale(1.0 - w);
                        out.axpy(num_complex::Complex64::new(w, 0.0), b);
                        out
                    })
                    .collect()
            }
            Source::Custom(f) => f(t),
        };
        if self.scale == 1.0 {
            raw
        } else {
            raw.iter().map(|a| a.scale(self.scale)).collect()
        }
    }

    /// `α(t) = Σ_j ‖A_j(t)‖`.
    pub fn alpha(&self, t: f64) -> Result<f64, CoefficientError> {
        let t = self.check_t(t)?;
        Ok(self.alpha_unchecked(t))
    }

    fn alpha_unchecked(&self, t: f64) -> f64 {
        self.eval_unchecked(t).iter().map(op_norm).sum()
    }

    /// Closed-form `∫_0^t α` for presets that have one.
    pub fn analytic_alpha_integral(&self, t: f64) -> Option<f64> {
        let s = self.scale.abs();
        let t = t.clamp(0.0, self.t_final);
        let v = match &self.source {
            Source::Constant(b) => sum_norms(b) * t,
            Source::Smooth { b, omega } => sum_norms(b) * (t + (1.0 - (omega * t).cos()) / (2.0 * omega)),
            Source::Piecewise { jumps, levels } => {
                let mut acc = 0.0;
                let mut lo = 0.0;
                for (k, level) in levels.iter().enumerate() {
                    let hi = if k < jumps.len() { jumps[k] } else { f64::INFINITY };
                    let len = (hi.min(t) - lo).max(0.0);
                    acc += sum_norms(level) * len;
                    lo = hi;
                }
                acc
            }
            Source::Holder { b, t0, gamma, offset } => {
                let g1 = gamma + 1.0;
                let prim = |x: f64| {
                    let d = x - t0;
                    d.signum() * d.abs().powf(g1) / g1
                };
                sum_norms(b) * (offset * t + prim(t) - prim(0.0))
            }
            Source::Singular { b, t0 } => {
                let prim = |x: f64| {
                    let d = x - t0;
                    d.signum() * 2.0 * d.abs().sqrt()
                };
                sum_norms(b) * 0.1 * (prim(t) - prim(0.0))
            }
            Source::Sampled { .. } | Source::Custom(_) => return None,
        };
        Some(s * v)
    }

    /// `∫_0^t α(τ) dτ`.
    ///
    /// Adaptive Simpson on each smooth piece after a quintic smoothstep change
    /// of variables, which tames integrable endpoint singularities. For the
    /// sampled kind, the trapezoid rule on the node values.
    pub fn alpha_integral(&self, t: f64) -> Result<f64, CoefficientError> {
        let t = self.check_t(t)?;
        if t == 0.0 {
            return Ok(0.0);
        }
        if let Source::Sampled { times, .. } = &self.source {
            let mut acc = 0.0;
            let mut prev = (0.0, self.alpha_unchecked(0.0));
            for &x in times[1..].iter() {
                let x = x.min(t);
                let cur = (x, self.alpha_unchecked(x));
                acc += 0.5 * (cur.0 - prev.0) * (cur.1 + prev.1);
                prev = cur;
                if x >= t {
                    break;
                }
            }
            return Ok(acc);
        }
        let pieces = self.pieces(t);
        let coarse: f64 = pieces.iter().map(|&(a, b)| composite_simpson(|x| self.alpha_unchecked(x), a, b, 64)).sum();
        let tol = (1e-8 * (1.0 + t)).min(1e-10 * coarse.abs());
        if tol == 0.0 {
            return Ok(coarse);
        }
        let mut acc = 0.0;
        for &(a, b) in &pieces {
            let piece_tol = tol * (b - a) / t;
            acc += adaptive_simpson(|x| self.alpha_unchecked(x), a, b, piece_tol).ok_or(CoefficientError::QuadratureFailure { a, b })?;
        }
        Ok(acc)
    }

    fn pieces(&self, t: f64) -> Vec<(f64, f64)> {
        let mut edges = vec![0.0];
        edges.extend(self.breakpoints.iter().copied().filter(|&x| x < t));
        edges.push(t);
        edges.windows(2).filter(|w| w[1] > w[0]).map(|w| (w[0], w[1])).collect()
    }

    /// Grid estimate of `sup α`, or `None` when it grows under refinement.
    pub fn uniform_bound(&self) -> Option<f64> {
        let sup_on = |k: usize| -> f64 {
            let h = self.t_final / k as f64;
            (0..k).map(|i| self.alpha_unchecked((i as f64 + 0.5) * h)).fold(0.0, f64::max)
        };
        let coarse = sup_on(1024);
        let fine = sup_on(4096);
        if fine.is_finite() && fine <= 1.1 * coarse.max(f64::MIN_POSITIVE) || fine == 0.0 {
            Some(coarse.max(fine))
        } else {
            None
        }
    }

    /// Compares fixed-panel quadratures of α at two resolutions.
    pub fn l1_check(&self) -> L1Check {
        let pieces = self.pieces(self.t_final);
        let q = |k: usize| -> f64 { pieces.iter().map(|&(a, b)| composite_simpson(|x| self.alpha_unchecked(x), a, b, k)).sum() };
        let coarse = q(256);
        let fine = q(512);
        let rel_change = (fine - coarse).abs() / fine.abs().max(f64::MIN_POSITIVE);
        L1Check { coarse, fine, rel_change, pass: fine.is_finite() && (fine == 0.0 || rel_change < 1e-6) }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct L1Check {
    pub coarse: f64,
    pub fine: f64,
    pub rel_change: f64,
    pub pass: bool,
}

fn smoothstep(u: f64) -> (f64, f64) {
    let s = u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
    let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u);
    (s, ds)
}

/// Integrand on [0,1] after τ = a + (b − a)·s(u).
fn substituted<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, u: f64) -> f64 {
    // The smoothstep is symmetric, so measure from the nearer endpoint.
    let (tau, ds) = if u <= 0.5 {
        let (s, ds) = smoothstep(u);
        (a + (b - a) * s, ds)
    } else {
        let (s, ds) = smoothstep(1.0 - u);
        (b - (b - a) * s, ds)
    };
    if ds == 0.0 {
        return 0.0;
    }
    f(tau) * ds * (b - a)
}

fn composite_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let h = 1.0 / (2 * panels) as f64;
    let mut acc = substituted(&f, a, b, 0.0) + substituted(&f, a, b, 1.0);
    for i in 1..2 * panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * substituted(&f, a, b, i as f64 * h);
    }
    acc * h / 3.0
}

const SIMPSON_MAX_DEPTH: u32 = 50;
const SIMPSON_MAX_PANELS: usize = 200_000;

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    estimate: f64,
    err: f64,
    depth: u32,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err).then(other.a.total_cmp(&self.a))
    }
}

fn make_panel<G: Fn(f64) -> f64>(g: &G, a: f64, b: f64, fa: f64, fm: f64, fb: f64, depth: u32) -> (Panel, f64, f64) {
    let m = 0.5 * (a + b);
    let flm = g(0.5 * (a + m));
    let frm = g(0.5 * (m + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    let p = Panel { a, b, fa, fm, fb, estimate: left + right + diff / 15.0, err: diff.abs() / 15.0, depth };
    (p, flm, frm)
}

/// Globally adaptive Simpson on the smoothstep-substituted integrand: the
/// panel with the largest error estimate is split until the summed estimate
/// meets `tol`.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Option<f64> {
    let g = |u: f64| substituted(&f, a, b, u);
    let mut heap = std::collections::BinaryHeap::new();
    let panels = 16;
    let mut nodes: Vec<f64> = (0..=2 * panels).map(|i| g(i as f64 / (2 * panels) as f64)).collect();
    for k in 0..panels {
        let lo = k as f64 / panels as f64;
        let hi = (k + 1) as f64 / panels as f64;
        let (p, _, _) = make_panel(&g, lo, hi, nodes[2 * k], nodes[2 * k + 1], nodes[2 * k + 2], 0);
        heap.push(p);
    }
    nodes.clear();
    let mut count = panels;
    loop {
        let total_err: f64 = heap.iter().map(|p| p.err).sum();
        if !total_err.is_finite() {
            return None;
        }
        if total_err <= tol {
            let mut all: Vec<Panel> = heap.into_vec();
            all.sort_by(|x, y| x.a.total_cmp(&y.a));
            return Some(all.iter().map(|p| p.estimate).sum());
        }
        // Split several of the worst panels per pass to keep the bookkeeping cheap.
        let batch = (heap.len() / 8).max(1);
        for _ in 0..batch {
            let Some(p) = heap.pop() else { break };
            if p.depth >= SIMPSON_MAX_DEPTH || count >= SIMPSON_MAX_PANELS {
                return None;
            }
            let m = 0.5 * (p.a + p.b);
            let (_, flm, frm) = make_panel(&g, p.a, p.b, p.fa, p.fm, p.fb, p.depth);
            let (l, _, _) = make_panel(&g, p.a, m, p.fa, flm, p.fm, p.depth + 1);
            let (r, _, _) = make_panel(&g, m, p.b, p.fm, frm, p.fb, p.depth + 1);
            heap.push(l);
            heap.push(r);
            count += 1;
        }
    }
}

/// Forward and backward cone radii.
#[derive(Clone, Debug)]
pub struct ConeRadii {
    pub r0: f64,
    pub big_lambda: f64,
    family: CoefficientFamily,
    factor: f64,
}

impl ConeRadii {
    pub fn new(family: &CoefficientFamily, r0: f64, big_lambda: f64) -> Result<Self, CoefficientError> {
        if !(r0 > 0.0) || !(big_lambda > 0.0) {
            return Err(CoefficientError::Invalid("need r0 > 0 and Λ > 0".into()));
        }
        Ok(Self { r0, big_lambda, family: family.clone(), factor: 1.0 })
    }

    /// Multiplies the forward radius by `factor`. Only for harness self-tests.
    pub fn mutated(mut self, factor: f64) -> Self {
        self.factor = factor;
        self
    }

    /// `2√Λ ∫_0^t α`.
    pub fn spread(&self, t: f64) -> Result<f64, CoefficientError> {
        Ok(2.0 * self.big_lambda.sqrt() * self.family.alpha_integral(t)?)
    }

    /// `r(t) = r0 + 2√Λ ∫_0^t α`.
    pub fn forward(&self, t: f64) -> Result<f64, CoefficientError> {
        Ok(self.factor * (self.r0 + self.spread(t)?))
    }

    /// `ϱ(t) = r0 − 2√Λ ∫_0^t α`.
    pub fn backward(&self, t: f64) -> Result<f64, CoefficientError> {
        Ok(self.r0 - self.spread(t)?)
    }
}

/// Convenience alias for [`ConeRadii::new`].
pub fn cone_radii(c: &CoefficientFamily, r0: f64, big_lambda: f64) -> Result<ConeRadii, CoefficientError> {
    ConeRadii::new(c, r0, big_lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn swap() -> Mat {
        Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    #[test]
    fn alpha_examples() {
        let z = CoefficientFamily::constant(vec![Mat::zeros(2)], 1.0).unwrap();
        assert_eq!(z.alpha(0.3).unwrap(), 0.0);
        let s = CoefficientFamily::constant(vec![swap()], 1.0).unwrap();
        assert!((s.alpha(0.5).unwrap() - 1.0).abs() < 1e-14);
        let two = CoefficientFamily::constant(vec![Mat::identity(2), Mat::identity(2).scale(2.0)], 1.0).unwrap();
        assert!((two.alpha(0.0).unwrap() - 3.0).abs() < 1e-14);
        assert!(matches!(s.alpha(1.5), Err(CoefficientError::OutOfDomain { .. })));
        assert!(matches!(s.alpha(-0.1), Err(CoefficientError::OutOfDomain { .. })));
    }

    #[test]
    fn alpha_integral_examples() {
        let one = CoefficientFamily::constant(vec![Mat::identity(1)], 2.0).unwrap();
        assert!((one.alpha_integral(2.0).unwrap() - 2.0).abs() < 1e-12);
        let lin = CoefficientFamily::custom(1, 1, 1.0, Kind::Smooth, vec![], |t| vec![Mat::from_real(1, &[t]).unwrap()]).unwrap();
        assert!((lin.alpha_integral(1.0).unwrap() - 0.5).abs() < 2e-8);
    }

    #[test]
    fn singular_preset_matches_graded_oracle() {
        let c = CoefficientFamily::singular(vec![Mat::identity(1)], 0.5, 1.0).unwrap();
        let q = c.alpha_integral(1.0).unwrap();
        // Midpoint rule on a mesh graded toward the singularity, 1e5 cells per side.
        let k = 50_000;
        let mut oracle = 0.0;
        for side in [-1.0f64, 1.0] {
            for i in 0..k {
                let u0 = (i as f64 / k as f64).powi(4);
                let u1 = ((i + 1) as f64 / k as f64).powi(4);
                let um = 0.5 * (u0 + u1);
                let x = 0.5 + side * 0.5 * um;
                oracle += c.alpha(x).unwrap() * 0.5 * (u1 - u0);
            }
        }
        assert!((q - oracle).abs() <= 1e-4 * oracle, "{q} vs {oracle}");
        let exact = c.analytic_alpha_integral(1.0).unwrap();
        assert!((q - exact).abs() <= 1e-7 * exact);
        assert!(c.uniform_bound().is_none());
    }

    #[test]
    fn presets_match_analytic_integrals() {
        let b = vec![swap(), Mat::from_rows(&[&[1.0, 0.5], &[0.5, -1.0]])];
        let fams = vec![
            CoefficientFamily::constant(b.clone(), 1.5).unwrap(),
            CoefficientFamily::smooth(b.clone(), 7.0, 1.0).unwrap(),
            CoefficientFamily::piecewise(vec![0.3, 0.7], vec![b.clone(), vec![swap().scale(2.0), Mat::zeros(2)], b.clone()], 1.0).unwrap(),
            CoefficientFamily::holder(b.clone(), 0.4, 0.3, 0.0, 1.0).unwrap(),
            CoefficientFamily::holder(b.clone(), 0.0, 0.5, 1.0, 2.0).unwrap(),
            CoefficientFamily::singular(b.clone(), 0.5, 1.0).unwrap(),
            CoefficientFamily::singular(b.clone(), 0.0, 1.0).unwrap(),
        ];
        for c in &fams {
            for frac in [0.25, 0.5, 0.9, 1.0] {
                let t = frac * c.t_final();
                let q = c.alpha_integral(t).unwrap();
                let exact = c.analytic_alpha_integral(t).unwrap();
                assert!((q - exact).abs() <= 1e-7 * exact.abs().max(1e-300), "{} t={t}: {q} vs {exact}", c.preset());
            }
            if c.preset() != "singular" {
                assert!(c.l1_check().pass, "{}", c.preset());
                assert!(c.uniform_bound().is_some());
            }
        }
    }

    #[test]
    fn sampled_trapezoid_and_csv() {
        let csv = "t,j,row,col,value\n0,0,0,1,1\n0,0,1,0,1\n1,0,0,1,3\n1,0,1,0,3\n2,0,0,1,1\n2,0,1,0,1\n";
        let c = CoefficientFamily::from_csv_reader(csv.as_bytes()).unwrap();
        assert_eq!(c.kind(), Kind::Sampled);
        assert_eq!((c.n(), c.m(), c.t_final()), (1, 2, 2.0));
        assert!((c.alpha(0.5).unwrap() - 2.0).abs() < 1e-14);
        assert!((c.alpha_integral(2.0).unwrap() - 4.0).abs() < 1e-14);
        assert!((c.alpha_integral(0.5).unwrap() - 0.75).abs() < 1e-14);
        assert!(CoefficientFamily::from_csv_reader("t,j,row,col,value\n1,0,0,0,1\n0,0,0,0,1\n".as_bytes()).is_err());
        assert!(CoefficientFamily::from_csv_reader("t,j,r,c,v\n0,0,0,0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn cone_radii_examples() {
        let one = CoefficientFamily::constant(vec![Mat::identity(1)], 1.0).unwrap();
        let r = cone_radii(&one, 0.5, 1.0).unwrap();
        assert!((r.forward(1.0).unwrap() - 2.5).abs() < 1e-12);
        assert!((r.backward(1.0).unwrap() + 1.5).abs() < 1e-12);
        assert_eq!(r.forward(0.0).unwrap(), 0.5);
        assert_eq!(r.backward(0.0).unwrap(), 0.5);
        let zero = CoefficientFamily::constant(vec![Mat::zeros(1)], 1.0).unwrap();
        let rz = cone_radii(&zero, 0.5, 4.0).unwrap();
        assert_eq!(rz.forward(0.7).unwrap(), 0.5);
        assert!((r.clone().mutated(0.5).forward(1.0).unwrap() - 1.25).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn alpha_scales_linearly(s in 0.05f64..20.0, t in 0.0f64..1.0, which in 0usize..4) {
            let b = vec![Mat::from_rows(&[&[0.3, 1.0], &[0.2, -0.5]])];
            let c = match which {
                0 => CoefficientFamily::smooth(b, 5.0, 1.0).unwrap(),
                1 => CoefficientFamily::holder(b, 0.3, 0.4, 0.1, 1.0).unwrap(),
                2 => CoefficientFamily::singular(b, 0.5, 1.0).unwrap(),
                _ => CoefficientFamily::piecewise(vec![0.5], vec![b.clone(), vec![b[0].scale(3.0)]], 1.0).unwrap(),
            };
            let cs = c.scaled(s);
            let a = c.alpha(t).unwrap();
            prop_assert!((cs.alpha(t).unwrap() - s * a).abs() <= 1e-12 * (s * a).max(1e-300));
            let i = c.alpha_integral(t).unwrap();
            prop_assert!((cs.alpha_integral(t).unwrap() - s * i).abs() <= 1e-12 * (s * i).max(1e-300));
        }

        #[test]
        fn radii_are_consistent(r0 in 0.1f64..2.0, lam in 0.1f64..4.0, t in 0.0f64..1.0) {
            let c = CoefficientFamily::smooth(vec![Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]])], 3.0, 1.0).unwrap();
            let r = cone_radii(&c, r0, lam).unwrap();
            let f = r.forward(t).unwrap();
            let b = r.backward(t).unwrap();
            prop_assert_eq!(f, r0 + 2.0 * lam.sqrt() * c.alpha_integral(t).unwrap());
            prop_assert!((f + b - 2.0 * r0).abs() <= 1e-12 * (1.0 + f.abs()));
            prop_assert!(r.forward((t + 0.05).min(1.0)).unwrap() >= f);
            prop_assert!(r.backward((t + 0.05).min(1.0)).unwrap() <= b);
        }
    }
}
