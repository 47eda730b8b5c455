//! Microlocal symmetrizers `S(t,ξ)`: construction, validation, adjoint check.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::CoefficientFamily;
use crate::matcore::{hermitian_bounds, inverse, op_norm, selfadjoint_defect, Mat, MatError};
use crate::symbol::{classify, default_samples, symbol_at, HyperbolicityClass, SymbolError};

pub const SELFADJOINT_TOL: f64 = 1e-10;
pub const BOUNDS_SLACK: f64 = 1e-9;
pub const HOMOGENEITY_TOL: f64 = 1e-12;
pub const SA_TOL: f64 = 1e-9;
pub const ADJOINT_TOL: f64 = 1e-9;
pub const MAX_EIGENBASIS_COND: f64 = 1e6;

#[derive(Debug, Error)]
pub enum SymmetrizerError {
    #[error("family is {0}, not strictly hyperbolic")]
    NotStrictlyHyperbolic(&'static str),
    #[error("eigenbasis condition {cond:.3e} exceeds 1e6 at t = {t}, ξ = {xi:?}")]
    IllConditionedEigenbasis { t: f64, xi: Vec<f64>, cond: f64 },
    #[error("symmetrizer is singular at t = {t}")]
    SingularSymmetrizer { t: f64 },
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("invalid symmetrizer: {0}")]
    Invalid(String),
    #[error("zero frequency has no symmetrizer")]
    ZeroFrequency,
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Mat(#[from] MatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Identity,
    UserSupplied,
    EigenBuilt,
}

type EvalFn = dyn Fn(f64, &[f64]) -> Result<Mat, SymmetrizerError> + Send + Sync;

/// Evaluator for `S(t, ξ)` with declared bounds `λ Id ≤ S ≤ Λ Id`.
#[derive(Clone)]
pub struct Symmetrizer {
    m: usize,
    t_final: f64,
    lambda: f64,
    big_lambda: f64,
    provenance: Provenance,
    name: String,
    breakpoints: Vec<f64>,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for Symmetrizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Symmetrizer")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("lambda", &self.lambda)
            .field("big_lambda", &self.big_lambda)
            .field("provenance", &self.provenance)
            .finish()
    }
}

fn unit(xi: &[f64]) -> Result<Vec<f64>, SymmetrizerError> {
    let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(SymmetrizerError::ZeroFrequency);
    }
    Ok(xi.iter().map(|x| x / norm).collect())
}

impl Symmetrizer {
    pub fn identity(m: usize, t_final: f64) -> Self {
        let id = Mat::identity(m);
        Self {
            m,
            t_final,
            lambda: 1.0,
            big_lambda: 1.0,
            provenance: Provenance::Identity,
            name: "identity".into(),
            breakpoints: vec![],
            eval: Arc::new(move |_, _| Ok(id.clone())),
        }
    }

    /// User-supplied evaluator with declared bounds. `breakpoints` mark times
    /// where `S` may jump.
    pub fn from_fn<F>(name: &str, m: usize, t_final: f64, lambda: f64, big_lambda: f64, breakpoints: Vec<f64>, f: F) -> Result<Self, SymmetrizerError>
    where
        F: Fn(f64, &[f64]) -> Mat + Send + Sync + 'static,
    {
        if !(lambda > 0.0 && big_lambda >= lambda && big_lambda.is_finite()) {
            return Err(SymmetrizerError::Invalid(format!("need 0 < λ ≤ Λ, got {lambda}, {big_lambda}")));
        }
        Ok(Self {
            m,
            t_final,
            lambda,
            big_lambda,
            provenance: Provenance::UserSupplied,
            name: name.into(),
            breakpoints,
            eval: Arc::new(move |t, xi| Ok(f(t, xi))),
        })
    }

    /// `S(t,ξ) = (R⁻¹)* R⁻¹` from the eigenvectors of `A(t, ξ/|ξ|)`.
    ///
    /// Bounds are the extreme eigenvalues over the default sample grid,
    /// widened by 10%.
    pub fn build_strict(c: &CoefficientFamily) -> Result<Self, SymmetrizerError> {
        let samples = default_samples(c, 0);
        let cl = classify(c, &samples)?;
        if cl.class != HyperbolicityClass::StrictlyHyperbolic {
            return Err(SymmetrizerError::NotStrictlyHyperbolic(cl.class.as_str()));
        }
        let fam = c.clone();
        let eval = move |t: f64, xi: &[f64]| -> Result<Mat, SymmetrizerError> {
            let nu = unit(xi)?;
            let a = symbol_at(&fam, t, &nu)?;
            let r = crate::matcore::eig(&a)?;
            if !(r.cond <= MAX_EIGENBASIS_COND) {
                return Err(SymmetrizerError::IllConditionedEigenbasis { t, xi: xi.to_vec(), cond: r.cond });
            }
            let rinv = inverse(&r.vectors)?;
            Ok((&rinv.adjoint() * &rinv).hermitian_part())
        };
        let bounds: Vec<Result<(f64, f64), SymmetrizerError>> = samples.par_iter().map(|(t, xi)| eval(*t, xi).map(|s| hermitian_bounds(&s))).collect();
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for b in bounds {
            let (l, h) = b?;
            lo = lo.min(l);
            hi = hi.max(h);
        }
        if !(lo > 0.0) {
            return Err(SymmetrizerError::Invalid("eigen-built symmetrizer is not positive".into()));
        }
        Ok(Self {
            m: c.m(),
            t_final: c.t_final(),
            lambda: lo / 1.1,
            big_lambda: hi * 1.1,
            provenance: Provenance::EigenBuilt,
            name: "eigen_built".into(),
            breakpoints: c.breakpoints().to_vec(),
            eval: Arc::new(eval),
        })
    }

    /// Loads a tabulated symmetrizer; see [`SymmetrizerTable`].
    pub fn from_json_path(path: &Path) -> Result<Self, SymmetrizerError> {
        let text = std::fs::read_to_string(path).map_err(|e| SymmetrizerError::Invalid(format!("{}: {e}", path.display())))?;
        let table: SymmetrizerTable = serde_json::from_str(&text).map_err(|e| SymmetrizerError::Invalid(e.to_string()))?;
        table.into_symmetrizer()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn big_lambda(&self) -> f64 {
        self.big_lambda
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Times where `S` may be discontinuous in `t`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Replaces the declared bounds.
    pub fn with_bounds(mut self, lambda: f64, big_lambda: f64) -> Self {
        self.lambda = lambda;
        self.big_lambda = big_lambda;
        self
    }

    /// `S(t, ξ)` for `t ∈ [0, T]`, `ξ ≠ 0`.
    pub fn eval(&self, t: f64, xi: &[f64]) -> Result<Mat, SymmetrizerError> {
        if xi.iter().all(|&x| x == 0.0) {
            return Err(SymmetrizerError::ZeroFrequency);
        }
        (self.eval)(t.clamp(0.0, self.t_final), xi)
    }
}

/// Tabulated symmetrizer: values on a time grid times a direction set,
/// linear in `t`, nearest direction in `ξ/|ξ|`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetrizerTable {
    pub m: usize,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    pub times: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    /// `values[time][direction]` is a row-major list of `[re, im]` pairs.
    pub values: Vec<Vec<Vec<[f64; 2]>>>,
}

impl SymmetrizerTable {
    pub fn into_symmetrizer(self) -> Result<Symmetrizer, SymmetrizerError> {
        let bad = |msg: &str| SymmetrizerError::Invalid(msg.to_string());
        if self.times.len() < 2 || self.times.windows(2).any(|w| !(w[0] < w[1])) || self.times[0] != 0.0 {
            return Err(bad("times must start at 0 and increase strictly"));
        }
        if self.directions.is_empty() || self.values.len() != self.times.len() {
            return Err(bad("values must have one entry per time"));
        }
        let dirs: Vec<Vec<f64>> = self.directions.iter().map(|d| unit(d)).collect::<Result<_, _>>().map_err(|_| bad("zero direction"))?;
        let mut mats: Vec<Vec<Mat>> = Vec::new();
        for row in &self.values {
            if row.len() != dirs.len() {
                return Err(bad("values must have one matrix per direction"));
            }
            let mut r = Vec::new();
            for entries in row {
                let data = entries.iter().map(|p| Complex64::new(p[0], p[1])).collect();
                r.push(Mat::from_complex(self.m, data)?);
            }
            mats.push(r);
        }
        let times = self.times.clone();
        let t_final = *times.last().unwrap();
        let m = self.m;
        Symmetrizer::from_fn("table", m, t_final, self.lambda, self.big_lambda, vec![], move |t, xi| {
            let nu = unit(xi).unwrap_or_else(|_| dirs[0].clone());
            let d = (0..dirs.len())
                .max_by(|&i, &j| {
                    let di: f64 = dirs[i].iter().zip(&nu).map(|(a, b)| a * b).sum();
                    let dj: f64 = dirs[j].iter().zip(&nu).map(|(a, b)| a * b).sum();
                    di.total_cmp(&dj).then(j.cmp(&i))
                })
                .unwrap();
            let k = times.partition_point(|&x| x <= t).clamp(1, times.len() - 1);
            let w = ((t - times[k - 1]) / (times[k] - times[k - 1])).clamp(0.0, 1.0);
            let mut s = mats[k - 1][d].scale(1.0 - w);
            s.axpy(Complex64::new(w, 0.0), &mats[k][d]);
            s
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Sample {
    pub t: f64,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyCheck {
    pub property: &'static str,
    pub pass: bool,
    /// Worst normalized violation; `pass` iff this is ≤ `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub worst_sample: Option<Sample>,
}

impl PropertyCheck {
    fn new(property: &'static str, tolerance: f64) -> Self {
        Self { property, pass: true, worst: 0.0, tolerance, worst_sample: None }
    }

    fn record(&mut self, value: f64, t: f64, xi: &[f64]) {
        let v = if value.is_nan() { f64::INFINITY } else { value };
        if self.worst_sample.is_none() || v > self.worst {
            self.worst = v;
            self.worst_sample = Some(Sample { t, xi: xi.to_vec() });
        }
        self.pass = self.worst <= self.tolerance;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub symmetrizer: String,
    pub samples: usize,
    pub declared_lambda: f64,
    #[serde(rename = "declared_Lambda")]
    pub declared_big_lambda: f64,
    pub measured_lambda_min: f64,
    pub measured_lambda_max: f64,
    pub max_sa_defect: f64,
    pub checks: Vec<PropertyCheck>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn check(&self, property: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.property == property)
    }
}

struct SampleMeasure {
    evaluable: f64,
    selfadjoint: f64,
    bounds: f64,
    homogeneity: f64,
    sa: f64,
    sa_abs: f64,
    lo: f64,
    hi: f64,
}

fn measure(s: &Symmetrizer, c: &CoefficientFamily, t: f64, xi: &[f64]) -> SampleMeasure {
    let fail = SampleMeasure { evaluable: f64::INFINITY, selfadjoint: 0.0, bounds: 0.0, homogeneity: 0.0, sa: 0.0, sa_abs: 0.0, lo: f64::INFINITY, hi: 0.0 };
    let (Ok(sm), Ok(s2), Ok(a)) = (s.eval(t, xi), s.eval(t, &xi.iter().map(|x| 2.0 * x).collect::<Vec<_>>()), symbol_at(c, t, xi)) else {
        return fail;
    };
    let snorm = op_norm(&sm);
    let selfadjoint = selfadjoint_defect(&sm) / snorm.max(f64::MIN_POSITIVE);
    let (lo, hi) = hermitian_bounds(&sm.hermitian_part());
    let scale = s.big_lambda().max(1.0);
    let bounds = ((s.lambda() - lo).max(hi - s.big_lambda()).max(0.0)) / scale;
    let homogeneity = (&s2 - &sm).max_abs() / sm.max_abs().max(1.0);
    let sa = &sm * &a;
    let sa_abs = selfadjoint_defect(&sa);
    let sa_rel = sa_abs / (snorm * op_norm(&a)).max(1.0);
    SampleMeasure { evaluable: 0.0, selfadjoint, bounds, homogeneity, sa: sa_rel, sa_abs, lo, hi }
}

/// Checks self-adjointness, the two-sided bound, degree-0 homogeneity and
/// self-adjointness of `S·A` at every sample.
pub fn validate(s: &Symmetrizer, c: &CoefficientFamily, samples: &[(f64, Vec<f64>)]) -> ValidationReport {
    let measures: Vec<SampleMeasure> = samples.par_iter().map(|(t, xi)| measure(s, c, *t, xi)).collect();
    let mut evaluable = PropertyCheck::new("evaluable", 0.0);
    let mut sadj = PropertyCheck::new("self_adjoint", SELFADJOINT_TOL);
    let mut bounds = PropertyCheck::new("bounds", BOUNDS_SLACK);
    let mut homog = PropertyCheck::new("homogeneity", HOMOGENEITY_TOL);
    let mut sa = PropertyCheck::new("sa_self_adjoint", SA_TOL);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut max_sa: f64 = 0.0;
    for ((t, xi), m) in samples.iter().zip(&measures) {
        evaluable.record(m.evaluable, *t, xi);
        sadj.record(m.selfadjoint, *t, xi);
        bounds.record(m.bounds, *t, xi);
        homog.record(m.homogeneity, *t, xi);
        sa.record(m.sa, *t, xi);
        lo = lo.min(m.lo);
        hi = hi.max(m.hi);
        max_sa = max_sa.max(m.sa_abs);
    }
    let checks = vec![evaluable, sadj, bounds, homog, sa];
    let pass = !samples.is_empty() && checks.iter().all(|c| c.pass);
    ValidationReport {
        symmetrizer: s.name().to_string(),
        samples: samples.len(),
        declared_lambda: s.lambda(),
        declared_big_lambda: s.big_lambda(),
        measured_lambda_min: lo,
        measured_lambda_max: hi,
        max_sa_defect: max_sa,
        checks,
        pass,
    }
}

/// Checks that `S⁻¹ A*` is self-adjoint, the adjoint operator's symmetrizer property.
///
/// Requires `validate` to pass first.
pub fn adjoint_check(s: &Symmetrizer, c: &CoefficientFamily, samples: &[(f64, Vec<f64>)]) -> Result<ValidationReport, SymmetrizerError> {
    let base = validate(s, c, samples);
    if !base.pass {
        let failed: Vec<&str> = base.checks.iter().filter(|c| !c.pass).map(|c| c.property).collect();
        return Err(SymmetrizerError::PreconditionFailed(format!("validate failed: {}", failed.join(", "))));
    }
    let defects: Vec<Result<(f64, f64), SymmetrizerError>> = samples
        .par_iter()
        .map(|(t, xi)| {
            let sm = s.eval(*t, xi)?;
            let sinv = inverse(&sm).map_err(|_| SymmetrizerError::SingularSymmetrizer { t: *t })?;
            let a = symbol_at(c, *t, xi)?;
            let m = &sinv * &a.adjoint();
            let d = selfadjoint_defect(&m);
            Ok((d / op_norm(&a).max(1.0), d))
        })
        .collect();
    let mut check = PropertyCheck::new("adjoint_self_adjoint", ADJOINT_TOL);
    let mut max_abs: f64 = 0.0;
    for ((t, xi), d) in samples.iter().zip(defects) {
        let (rel, abs) = d?;
        check.record(rel, *t, xi);
        max_abs = max_abs.max(abs);
    }
    let pass = check.pass;
    Ok(ValidationReport { max_sa_defect: max_abs, checks: vec![check], pass, ..base })
}

/// Sampled modulus of continuity of `(t, ν) ↦ S` at successive resolutions.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    /// `(time cells, max neighbour difference)` per resolution.
    pub moduli: Vec<(usize, f64)>,
    pub continuous: bool,
}

/// Detects continuity of `S` on `[0,T] × sphere` by checking that the
/// largest difference between neighbouring grid values decays as the grid
/// is refined.
pub fn continuity_modulus(s: &Symmetrizer, n: usize) -> Result<ContinuityReport, SymmetrizerError> {
    let mut moduli = Vec::new();
    for level in 0..4 {
        let k_t = 16usize << level;
        let k_dir = if n == 1 { 2 } else { 8usize << level };
        let dirs = crate::symbol::sphere_directions(n, k_dir, 0);
        let h = s.t_final() / k_t as f64;
        let rows: Vec<Result<f64, SymmetrizerError>> = (0..=k_t)
            .into_par_iter()
            .map(|i| {
                let t = i as f64 * h;
                let mut worst: f64 = 0.0;
                for (d, nu) in dirs.iter().enumerate() {
                    let here = s.eval(t, nu)?;
                    if i < k_t {
                        worst = worst.max(op_norm(&(&s.eval(t + h, nu)? - &here)));
                    }
                    if n >= 2 {
                        let next = &dirs[(d + 1) % dirs.len()];
                        worst = worst.max(op_norm(&(&s.eval(t, next)? - &here)));
                    }
                }
                Ok(worst)
            })
            .collect();
        let mut worst: f64 = 0.0;
        for r in rows {
            worst = worst.max(r?);
        }
        moduli.push((k_t, worst));
    }
    let scale = s.big_lambda().max(1.0);
    let first = moduli[0].1;
    let last = moduli[moduli.len() - 1].1;
    let monotone = moduli.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-9) + 1e-14 * scale);
    let continuous = last <= 1e-12 * scale || (monotone && last <= 0.7 * first);
    Ok(ContinuityReport { moduli, continuous })
}

/// Time-varying, frequency-independent symmetrizers with exact bounds.
pub mod presets {
    use super::*;

    /// `S ≡ S0`.
    pub fn constant(s0: Mat, t_final: f64) -> Result<Symmetrizer, SymmetrizerError> {
        let (lo, hi) = crate::matcore::psd_bounds(&s0)?;
        let m = s0.dim();
        Symmetrizer::from_fn("constant", m, t_final, lo, hi, vec![], move |_, _| s0.clone())
    }

    /// `S(t) = (a + b t) Id`, positive on `[0, T]`.
    pub fn linear_scalar(m: usize, a: f64, b: f64, t_final: f64) -> Result<Symmetrizer, SymmetrizerError> {
        let ends = [a, a + b * t_final];
        let lo = ends[0].min(ends[1]);
        let hi = ends[0].max(ends[1]);
        Symmetrizer::from_fn("linear", m, t_final, lo, hi, vec![], move |t, _| Mat::identity(m).scale(a + b * t))
    }

    /// `S(t) = Q(ωt) diag(1, 3) Q(ωt)ᵀ` with `Q` a plane rotation.
    pub fn rotating(omega: f64, t_final: f64) -> Result<Symmetrizer, SymmetrizerError> {
        Symmetrizer::from_fn("rotating", 2, t_final, 1.0, 3.0, vec![], move |t, _| {
            let (s, c) = (omega * t).sin_cos();
            let q = Mat::from_rows(&[&[c, -s], &[s, c]]);
            &(&q * &Mat::diag_real(&[1.0, 3.0])) * &q.transpose()
        })
    }

    /// `Id` before `t_jump`, `diag(1, 3)` after.
    pub fn jump(t_jump: f64, t_final: f64) -> Result<Symmetrizer, SymmetrizerError> {
        Symmetrizer::from_fn("jump", 2, t_final, 1.0, 3.0, vec![t_jump], move |t, _| if t < t_jump { Mat::identity(2) } else { Mat::diag_real(&[1.0, 3.0]) })
    }

    /// `S(t) = (1 + |t − t0|^γ) Id`.
    pub fn holder(m: usize, t0: f64, gamma: f64, t_final: f64) -> Result<Symmetrizer, SymmetrizerError> {
        let far = t0.max(t_final - t0);
        Symmetrizer::from_fn("holder", m, t_final, 1.0, 1.0 + far.powf(gamma), vec![t0], move |t, _| Mat::identity(m).scale(1.0 + (t - t0).abs().powf(gamma)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol::sample_grid;
    use proptest::prelude::*;

    fn fam(a: Mat) -> CoefficientFamily {
        CoefficientFamily::constant(vec![a], 1.0).unwrap()
    }

    fn upper() -> Mat {
        Mat::from_rows(&[&[1.0, 1.0], &[0.0, -1.0]])
    }

    #[test]
    fn build_strict_symmetric_gives_identity() {
        let c = CoefficientFamily::smooth(vec![Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]])], 3.0, 1.0).unwrap();
        let s = Symmetrizer::build_strict(&c).unwrap();
        for (t, xi) in default_samples(&c, 0) {
            assert!((&s.eval(t, &xi).unwrap() - &Mat::identity(2)).max_abs() < 1e-10);
        }
    }

    #[test]
    fn build_strict_hand_oracle() {
        let c = fam(upper());
        let s = Symmetrizer::build_strict(&c).unwrap();
        let expected = Mat::from_rows(&[&[1.0, 0.5], &[0.5, 1.5]]);
        for xi in [[1.0], [-2.0], [0.3]] {
            let sm = s.eval(0.5, &xi).unwrap();
            assert!((&sm - &expected).max_abs() < 1e-12, "{sm:?}");
            let sa = &sm * &symbol_at(&c, 0.5, &xi).unwrap();
            assert!(selfadjoint_defect(&sa) < 1e-10);
        }
        assert!(s.lambda() > 0.0);
    }

    #[test]
    fn build_strict_scalar() {
        let c = CoefficientFamily::smooth(vec![Mat::from_real(1, &[2.0]).unwrap()], 1.0, 1.0).unwrap();
        let s = Symmetrizer::build_strict(&c).unwrap();
        assert!((s.eval(0.2, &[1.0]).unwrap()[(0, 0)].re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn build_strict_rejects_non_strict() {
        let rot = fam(Mat::from_rows(&[&[0.0, -1.0], &[1.0, 0.0]]));
        assert!(matches!(Symmetrizer::build_strict(&rot), Err(SymmetrizerError::NotStrictlyHyperbolic("not_hyperbolic"))));
    }

    #[test]
    fn validate_examples() {
        let sym = CoefficientFamily::constant(vec![Mat::from_rows(&[&[1.0, 2.0], &[2.0, 0.0]])], 1.0).unwrap();
        let id = Symmetrizer::identity(2, 1.0);
        let samples = default_samples(&sym, 0);
        let r = validate(&id, &sym, &samples);
        assert!(r.pass);
        assert_eq!((r.measured_lambda_min, r.measured_lambda_max), (1.0, 1.0));

        let c = fam(upper());
        let r = validate(&id, &c, &samples);
        assert!(!r.pass);
        assert!(!r.check("sa_self_adjoint").unwrap().pass);
        assert!(r.max_sa_defect > 0.0);

        let built = Symmetrizer::build_strict(&c).unwrap();
        assert!(validate(&built, &c, &samples).pass);
        let adj = adjoint_check(&built, &c, &samples).unwrap();
        assert!(adj.pass);
    }

    #[test]
    fn adjoint_check_precondition() {
        let c = fam(Mat::from_rows(&[&[0.0, 1.0], &[4.0, 0.0]]));
        let s = presets::constant(Mat::diag_real(&[1.0, 4.0]), 1.0).unwrap();
        let samples = default_samples(&c, 0);
        assert!(!validate(&s, &c, &samples).pass);
        assert!(matches!(adjoint_check(&s, &c, &samples), Err(SymmetrizerError::PreconditionFailed(_))));
        // The correct weight makes S·A symmetric.
        let good = presets::constant(Mat::diag_real(&[4.0, 1.0]), 1.0).unwrap();
        assert!(adjoint_check(&good, &c, &samples).unwrap().pass);
    }

    #[test]
    fn inverse_bound_is_one_over_lambda() {
        let c = fam(upper());
        let s = Symmetrizer::build_strict(&c).unwrap();
        for (t, xi) in default_samples(&c, 0) {
            let sinv = inverse(&s.eval(t, &xi).unwrap()).unwrap();
            assert!(op_norm(&sinv) <= 1.0 / s.lambda() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn continuity_detection() {
        let n = 1;
        assert!(continuity_modulus(&presets::rotating(2.0, 1.0).unwrap(), n).unwrap().continuous);
        assert!(continuity_modulus(&presets::holder(2, 0.5, 0.3, 1.0).unwrap(), n).unwrap().continuous);
        assert!(continuity_modulus(&Symmetrizer::identity(2, 1.0), n).unwrap().continuous);
        assert!(!continuity_modulus(&presets::jump(0.37, 1.0).unwrap(), n).unwrap().continuous);
    }

    #[test]
    fn table_roundtrip() {
        let table = SymmetrizerTable {
            m: 1,
            lambda: 1.0,
            big_lambda: 3.0,
            times: vec![0.0, 1.0],
            directions: vec![vec![1.0], vec![-1.0]],
            values: vec![vec![vec![[1.0, 0.0]], vec![[2.0, 0.0]]], vec![vec![[3.0, 0.0]], vec![[2.0, 0.0]]]],
        };
        let s = table.into_symmetrizer().unwrap();
        assert!((s.eval(0.5, &[4.0]).unwrap()[(0, 0)].re - 2.0).abs() < 1e-15);
        assert!((s.eval(0.25, &[-1.0]).unwrap()[(0, 0)].re - 2.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn build_strict_is_order_independent(a in -2.0f64..2.0, b in 0.2f64..2.0, d in -2.0f64..2.0) {
            prop_assume!((a - d).abs() > 0.2);
            let m1 = Mat::from_rows(&[&[a, b], &[0.0, d]]);
            // Same matrix with the basis order reversed.
            let p = Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
            let m2 = &(&p * &m1) * &p;
            let s1 = Symmetrizer::build_strict(&fam(m1)).unwrap();
            let s2 = Symmetrizer::build_strict(&fam(m2)).unwrap();
            let back = &(&p * &s2.eval(0.5, &[1.0]).unwrap()) * &p;
            prop_assert!((&back - &s1.eval(0.5, &[1.0]).unwrap()).max_abs() < 1e-10);
        }

        #[test]
        fn validate_implies_adjoint(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut a = Mat::from_real(2, &raw).unwrap();
            a[(1, 0)] = num_complex::Complex64::new(0.0, 0.0);
            a[(1, 1)] = num_complex::Complex64::new(a[(0, 0)].re - 0.5 - rng.gen_range(0.0..1.0), 0.0);
            let c = CoefficientFamily::constant(vec![a], 1.0).unwrap();
            let s = Symmetrizer::build_strict(&c).unwrap();
            let samples = sample_grid(&c, 4, 2, 0);
            prop_assert!(validate(&s, &c, &samples).pass);
            prop_assert!(adjoint_check(&s, &c, &samples).unwrap().pass);
        }
    }
}
