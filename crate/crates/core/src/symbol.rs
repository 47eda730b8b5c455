//! The symbol `A(t,ξ) = Σ ξ_j A_j(t)`, its complex extension, and hyperbolicity classes.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{CoefficientError, CoefficientFamily};
use crate::matcore::{eig, op_norm, Mat, MatError};

pub const GAP_TOL: f64 = 1e-6;
pub const IMAG_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum SymbolError {
    #[error("frequency has {got} components, family has n = {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    Mat(#[from] MatError),
}

fn check_len(c: &CoefficientFamily, len: usize) -> Result<(), SymbolError> {
    if len != c.n() {
        return Err(SymbolError::Dimension { expected: c.n(), got: len });
    }
    Ok(())
}

/// `Σ_j ξ_j A_j`.
pub fn combine(mats: &[Mat], xi: &[f64]) -> Mat {
    let mut out = Mat::zeros(mats[0].dim());
    for (a, &x) in mats.iter().zip(xi) {
        if x != 0.0 {
            out.axpy(Complex64::new(x, 0.0), a);
        }
    }
    out
}

/// `Σ_j ζ_j A_j`, equal to `A(ξ) + i A(η)` for real `A_j`.
pub fn combine_complex(mats: &[Mat], zeta: &[Complex64]) -> Mat {
    let mut out = Mat::zeros(mats[0].dim());
    for (a, &z) in mats.iter().zip(zeta) {
        if z != Complex64::new(0.0, 0.0) {
            out.axpy(z, a);
        }
    }
    out
}

/// `A(t, ξ)`.
pub fn symbol_at(c: &CoefficientFamily, t: f64, xi: &[f64]) -> Result<Mat, SymbolError> {
    check_len(c, xi.len())?;
    Ok(combine(&c.eval(t)?, xi))
}

/// `A(t, ζ) = A(t, ξ) + i A(t, η)` for `ζ = ξ + iη`.
pub fn symbol_complex(c: &CoefficientFamily, t: f64, zeta: &[Complex64]) -> Result<Mat, SymbolError> {
    check_len(c, zeta.len())?;
    Ok(combine_complex(&c.eval(t)?, zeta))
}

/// Ordered weakest to strongest, so `min` is the meet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperbolicityClass {
    NotHyperbolic,
    NotSemisimple,
    Hyperbolic,
    ConstantMultiplicities,
    StrictlyHyperbolic,
}

impl HyperbolicityClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::NotHyperbolic => "not_hyperbolic",
            Self::NotSemisimple => "not_semisimple",
            Self::Hyperbolic => "hyperbolic",
            Self::ConstantMultiplicities => "constant_multiplicities",
            Self::StrictlyHyperbolic => "strictly_hyperbolic",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub index: usize,
    pub t: f64,
    pub xi: Vec<f64>,
    pub eigenvalues: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub class: HyperbolicityClass,
    pub witness: Option<Witness>,
    pub samples: usize,
    /// Samples skipped because `ξ = 0`.
    pub degenerate: Vec<usize>,
    /// Smallest eigenvalue gap relative to `1 + ‖A‖` over all samples.
    pub min_relative_gap: f64,
    /// Largest `|Im λ|` relative to `1 + ‖A‖`.
    pub max_relative_imag: f64,
}

struct SampleVerdict {
    class: HyperbolicityClass,
    pattern: Vec<usize>,
    eigenvalues: Vec<Complex64>,
    rel_gap: f64,
    rel_imag: f64,
}

fn sample_verdict(a: &Mat) -> Result<SampleVerdict, MatError> {
    let scale = 1.0 + op_norm(a);
    let r = eig(a)?;
    let rel_imag = r.max_imag() / scale;
    let mut re: Vec<f64> = r.eigenvalues.iter().map(|z| z.re).collect();
    re.sort_by(f64::total_cmp);
    let rel_gap = re.windows(2).map(|w| (w[1] - w[0]) / scale).fold(f64::INFINITY, f64::min);
    let mut pattern = Vec::new();
    let mut run = 1;
    for w in re.windows(2) {
        if w[1] - w[0] > GAP_TOL * scale {
            pattern.push(run);
            run = 1;
        } else {
            run += 1;
        }
    }
    pattern.push(run);
    let class = if rel_imag > IMAG_TOL {
        HyperbolicityClass::NotHyperbolic
    } else if !r.diagonalizable {
        HyperbolicityClass::NotSemisimple
    } else if pattern.iter().all(|&k| k == 1) {
        HyperbolicityClass::StrictlyHyperbolic
    } else {
        HyperbolicityClass::ConstantMultiplicities
    };
    Ok(SampleVerdict { class, pattern, eigenvalues: r.eigenvalues, rel_gap, rel_imag })
}

/// Classifies the family over the given `(t, ξ)` samples.
///
/// Each `ξ` is normalized first. Per-sample verdicts are combined with an
/// order-independent meet, and multiplicity patterns are compared across
/// samples for the constant-multiplicities verdict.
pub fn classify(c: &CoefficientFamily, samples: &[(f64, Vec<f64>)]) -> Result<Classification, SymbolError> {
    for (_, xi) in samples {
        check_len(c, xi.len())?;
    }
    let verdicts: Vec<Option<Result<SampleVerdict, SymbolError>>> = samples
        .par_iter()
        .map(|(t, xi)| {
            let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return None;
            }
            let nu: Vec<f64> = xi.iter().map(|x| x / norm).collect();
            Some(symbol_at(c, *t, &nu).and_then(|a| sample_verdict(&a).map_err(SymbolError::from)))
        })
        .collect();

    let mut degenerate = Vec::new();
    let mut ok: Vec<(usize, SampleVerdict)> = Vec::new();
    for (i, v) in verdicts.into_iter().enumerate() {
        match v {
            None => degenerate.push(i),
            Some(r) => ok.push((i, r?)),
        }
    }

    let witness_of = |i: usize, v: &SampleVerdict| Witness {
        index: i,
        t: samples[i].0,
        xi: samples[i].1.clone(),
        eigenvalues: v.eigenvalues.iter().map(|z| [z.re, z.im]).collect(),
    };

    let min_relative_gap = ok.iter().map(|(_, v)| v.rel_gap).fold(f64::INFINITY, f64::min);
    let max_relative_imag = ok.iter().map(|(_, v)| v.rel_imag).fold(0.0, f64::max);

    let Some(weakest) = ok.iter().map(|(_, v)| v.class).min() else {
        return Ok(Classification {
            class: HyperbolicityClass::NotHyperbolic,
            witness: None,
            samples: samples.len(),
            degenerate,
            min_relative_gap,
            max_relative_imag,
        });
    };

    let (class, witness) = if weakest <= HyperbolicityClass::NotSemisimple {
        let (i, v) = ok.iter().find(|(_, v)| v.class == weakest).unwrap();
        (weakest, witness_of(*i, v))
    } else {
        let reference = &ok[0].1.pattern;
        match ok.iter().find(|(_, v)| &v.pattern != reference) {
            Some((i, v)) => (HyperbolicityClass::Hyperbolic, witness_of(*i, v)),
            None => {
                // Witness is the sample closest to a violation: the smallest gap.
                let (i, v) = ok.iter().min_by(|a, b| a.1.rel_gap.total_cmp(&b.1.rel_gap).then(a.0.cmp(&b.0))).unwrap();
                (weakest, witness_of(*i, v))
            }
        }
    };
    Ok(Classification { class, witness: Some(witness), samples: samples.len(), degenerate, min_relative_gap, max_relative_imag })
}

/// `k` unit vectors in ℝⁿ: ±1 for n = 1, equally spaced on the circle for
/// n = 2, a Fibonacci lattice for n = 3, seeded Gaussian draws otherwise.
pub fn sphere_directions(n: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    match n {
        0 => vec![],
        1 => (0..k.min(2)).map(|i| vec![if i == 0 { 1.0 } else { -1.0 }]).collect(),
        2 => (0..k)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / k as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..k)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / k as f64;
                    let r = (1.0 - z * z).sqrt();
                    let th = golden * i as f64;
                    vec![r * th.cos(), r * th.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..k)
                .map(|_| loop {
                    let v: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
                    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if nv > 1e-8 {
                        break v.into_iter().map(|x| x / nv).collect();
                    }
                })
                .collect()
        }
    }
}

/// `n_t` midpoint time quantiles of `[0, T]`.
pub fn time_quantiles(t_final: f64, n_t: usize) -> Vec<f64> {
    (0..n_t).map(|i| t_final * (i as f64 + 0.5) / n_t as f64).collect()
}

/// Tensor grid of 16 time quantiles by 32 sphere directions.
pub fn default_samples(c: &CoefficientFamily, seed: u64) -> Vec<(f64, Vec<f64>)> {
    sample_grid(c, 16, 32, seed)
}

pub fn sample_grid(c: &CoefficientFamily, n_t: usize, n_dir: usize, seed: u64) -> Vec<(f64, Vec<f64>)> {
    let dirs = sphere_directions(c.n(), n_dir, seed);
    let mut out = Vec::with_capacity(n_t * dirs.len());
    for t in time_quantiles(c.t_final(), n_t) {
        for d in &dirs {
            out.push((t, d.clone()));
        }
    }
    out
}

/// Box–Muller standard normal draw.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
