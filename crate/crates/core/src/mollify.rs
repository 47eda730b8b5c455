//! Time mollification of a symmetrizer and the diagnostics that control it.

use std::sync::OnceLock;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::matcore::{op_norm, Mat};
use crate::quad::{composite_rule, gl64, gl8};
use crate::symmetrizer::{Symmetrizer, SymmetrizerError};

#[derive(Debug, Error)]
pub enum MollifyError {
    #[error("ε = {0} outside (0, 1]")]
    BadEpsilon(f64),
    #[error("σ = {sigma} outside (0, {t_final})")]
    BadSigma { sigma: f64, t_final: f64 },
    #[error(transparent)]
    Symmetrizer(#[from] SymmetrizerError),
}

/// `ρ(t) = c·exp(−1/(1 − t²))` on `|t| < 1`, normalized to unit mass.
#[derive(Debug, Clone, Serialize)]
pub struct MollifierKernel {
    pub c: f64,
    pub l1_rho: f64,
    pub l1_drho: f64,
    pub max_rho: f64,
}

impl MollifierKernel {
    fn compute() -> Self {
        let raw = |t: f64| bump(t);
        // Split at 0 so |ρ′| (kinked there) is integrated accurately.
        let rule = composite_rule(-1.0, 1.0, &[0.0], 1.0 / 128.0, gl8());
        let mass: f64 = rule.iter().map(|(x, w)| w * raw(*x)).sum();
        let c = 1.0 / mass;
        let l1_rho: f64 = rule.iter().map(|(x, w)| w * c * raw(*x)).sum();
        let l1_drho: f64 = rule.iter().map(|(x, w)| w * c * dbump(*x).abs()).sum();
        Self { c, l1_rho, l1_drho, max_rho: c * (-1.0f64).exp() }
    }

    /// The shared standard kernel.
    pub fn standard() -> &'static MollifierKernel {
        static K: OnceLock<MollifierKernel> = OnceLock::new();
        K.get_or_init(Self::compute)
    }

    pub fn rho(&self, t: f64) -> f64 {
        self.c * bump(t)
    }

    pub fn drho(&self, t: f64) -> f64 {
        self.c * dbump(t)
    }

    /// `ρ_ε(t) = ρ(t/ε)/ε`.
    pub fn rho_eps(&self, t: f64, eps: f64) -> f64 {
        self.rho(t / eps) / eps
    }

    /// `2·max(‖ρ‖₁, ‖ρ′‖₁)`.
    pub fn bound_constant(&self) -> f64 {
        2.0 * self.l1_rho.max(self.l1_drho)
    }
}

fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

fn dbump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - t * t;
        bump(t) * (-2.0 * t / (q * q))
    }
}

/// `S` extended to all of ℝ by its endpoint values.
pub fn extend(s: &Symmetrizer, t: f64, xi: &[f64]) -> Result<Mat, SymmetrizerError> {
    s.eval(t.clamp(0.0, s.t_final()), xi)
}

/// Convolution weights at one time: nodes `τ_k`, value weights summing to
/// one, derivative weights summing to zero.
struct Stencil {
    tau: Vec<f64>,
    value: Vec<f64>,
    deriv: Vec<f64>,
}

/// `S_ε = ρ_ε * S` together with `∂_t S_ε = ρ_ε′ * S`.
#[derive(Debug, Clone)]
pub struct MollifiedSymmetrizer {
    base: Symmetrizer,
    kernel: &'static MollifierKernel,
    eps: f64,
    skew: f64,
    cuts: Vec<f64>,
}

/// Mollifies `s` at scale `eps ∈ (0, 1]` with the standard kernel.
pub fn mollify(s: &Symmetrizer, eps: f64) -> Result<MollifiedSymmetrizer, MollifyError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(MollifyError::BadEpsilon(eps));
    }
    let mut cuts = vec![0.0, s.t_final()];
    cuts.extend_from_slice(s.breakpoints());
    Ok(MollifiedSymmetrizer { base: s.clone(), kernel: MollifierKernel::standard(), eps, skew: 0.0, cuts })
}

impl MollifiedSymmetrizer {
    pub fn base(&self) -> &Symmetrizer {
        &self.base
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn kernel(&self) -> &MollifierKernel {
        self.kernel
    }

    /// Same symmetrizer at another scale.
    pub fn with_eps(&self, eps: f64) -> Result<Self, MollifyError> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(MollifyError::BadEpsilon(eps));
        }
        Ok(Self { eps, ..self.clone() })
    }

    /// Multiplies `S_ε` by `1 + skew`. Only for harness self-tests.
    pub fn with_skew(mut self, skew: f64) -> Self {
        self.skew = skew;
        self
    }

    fn stencil(&self, t: f64) -> Stencil {
        let eps = self.eps;
        let (x, w) = gl64();
        // Pieces of s ∈ [−1, 1] on which τ = t − εs avoids the cut points.
        let mut edges = vec![-1.0];
        let mut inner: Vec<f64> = self.cuts.iter().map(|c| (t - c) / eps).filter(|s| *s > -1.0 && *s < 1.0).collect();
        inner.sort_by(f64::total_cmp);
        inner.dedup();
        edges.extend(inner);
        edges.push(1.0);
        let mut tau = Vec::with_capacity(64 * (edges.len() - 1));
        let mut value = Vec::with_capacity(tau.capacity());
        let mut deriv = Vec::with_capacity(tau.capacity());
        for e in edges.windows(2) {
            let half = 0.5 * (e[1] - e[0]);
            let mid = 0.5 * (e[1] + e[0]);
            if half <= 0.0 {
                continue;
            }
            for (xk, wk) in x.iter().zip(w) {
                let s = mid + half * xk;
                tau.push(t - eps * s);
                value.push(half * wk * self.kernel.rho(s));
                deriv.push(half * wk * self.kernel.drho(s) / eps);
            }
        }
        let mass: f64 = value.iter().sum();
        for v in value.iter_mut() {
            *v /= mass;
        }
        let drift: f64 = deriv.iter().sum();
        for (d, v) in deriv.iter_mut().zip(&value) {
            *d -= drift * v;
        }
        Stencil { tau, value, deriv }
    }

    /// `S_ε(t, ξ)`.
    pub fn eval(&self, t: f64, xi: &[f64]) -> Result<Mat, SymmetrizerError> {
        Ok(self.eval_pair(t, xi)?.0)
    }

    /// `∂_t S_ε(t, ξ)`.
    pub fn eval_dt(&self, t: f64, xi: &[f64]) -> Result<Mat, SymmetrizerError> {
        Ok(self.eval_pair(t, xi)?.1)
    }

    /// `(S_ε, ∂_t S_ε)` sharing one pass over the quadrature nodes.
    pub fn eval_pair(&self, t: f64, xi: &[f64]) -> Result<(Mat, Mat), SymmetrizerError> {
        let st = self.stencil(t);
        let m = self.base.m();
        let mut s = Mat::zeros(m);
        let mut ds = Mat::zeros(m);
        for k in 0..st.tau.len() {
            let sk = extend(&self.base, st.tau[k], xi)?;
            s.axpy(Complex64::new(st.value[k], 0.0), &sk);
            ds.axpy(Complex64::new(st.deriv[k], 0.0), &sk);
        }
        let mut s = s.hermitian_part();
        if self.skew != 0.0 {
            s = s.scale(1.0 + self.skew);
        }
        Ok((s, ds.hermitian_part()))
    }
}

/// `(1/T) ∫_0^T ‖S(t, ξ)‖ dt`, kept as a diagnostic scalar.
pub fn mean_norm(s: &Symmetrizer, xi: &[f64]) -> Result<f64, SymmetrizerError> {
    let rule = composite_rule(0.0, s.t_final(), s.breakpoints(), s.t_final() / 32.0, gl8());
    let mut acc = 0.0;
    for (x, w) in rule {
        acc += w * op_norm(&s.eval(x, xi)?);
    }
    Ok(acc / s.t_final())
}

const OMEGA_TAU_POINTS: usize = 33;
const OMEGA_T_NODES: usize = 512;

/// Integral modulus `sup_{τ∈[0,σ]} ∫_0^{T−σ} ‖S(t+τ, ξ) − S(t, ξ)‖ dt`.
///
/// The sup is taken over 33 grid values of `τ`, refined by golden-section
/// search around the best grid point; the integral uses the trapezoid rule
/// on 512 nodes.
pub fn omega_s(s: &Symmetrizer, xi: &[f64], sigma: f64) -> Result<f64, MollifyError> {
    let t_final = s.t_final();
    if !(sigma > 0.0 && sigma < t_final) {
        return Err(MollifyError::BadSigma { sigma, t_final });
    }
    let f = OmegaIntegrand::new(s, xi, sigma)?;
    let taus: Vec<f64> = (0..OMEGA_TAU_POINTS).map(|j| sigma * j as f64 / (OMEGA_TAU_POINTS - 1) as f64).collect();
    let mut vals = Vec::with_capacity(taus.len());
    for &tau in &taus {
        vals.push(f.at(tau)?);
    }
    let (jbest, &best) = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).unwrap();
    let mut lo = taus[jbest.saturating_sub(1)];
    let mut hi = taus[(jbest + 1).min(taus.len() - 1)];
    let mut best = best;
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f.at(x1)?;
    let mut f2 = f.at(x2)?;
    for _ in 0..24 {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f.at(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f.at(x2)?;
        }
        best = best.max(f1).max(f2);
    }
    Ok(best)
}

/// Dense-grid version of [`omega_s`] without refinement, for cross-checks.
pub fn omega_s_grid(s: &Symmetrizer, xi: &[f64], sigma: f64, tau_points: usize) -> Result<f64, MollifyError> {
    let f = OmegaIntegrand::new(s, xi, sigma)?;
    let mut best: f64 = 0.0;
    for j in 0..tau_points {
        best = best.max(f.at(sigma * j as f64 / (tau_points - 1) as f64)?);
    }
    Ok(best)
}

struct OmegaIntegrand<'a> {
    s: &'a Symmetrizer,
    xi: &'a [f64],
    nodes: Vec<f64>,
    base: Vec<Mat>,
}

impl<'a> OmegaIntegrand<'a> {
    fn new(s: &'a Symmetrizer, xi: &'a [f64], sigma: f64) -> Result<Self, MollifyError> {
        let t_final = s.t_final();
        if !(sigma > 0.0 && sigma < t_final) {
            return Err(MollifyError::BadSigma { sigma, t_final });
        }
        let len = t_final - sigma;
        let nodes: Vec<f64> = (0..OMEGA_T_NODES).map(|i| len * i as f64 / (OMEGA_T_NODES - 1) as f64).collect();
        let base = nodes.iter().map(|&t| s.eval(t, xi)).collect::<Result<_, _>>()?;
        Ok(Self { s, xi, nodes, base })
    }

    fn at(&self, tau: f64) -> Result<f64, MollifyError> {
        let mut y = Vec::with_capacity(self.nodes.len());
        for (t, b) in self.nodes.iter().zip(&self.base) {
            y.push(op_norm(&(&self.s.eval(t + tau, self.xi)? - b)));
        }
        Ok(crate::quad::trapezoid(&self.nodes, &y))
    }
}

/// Both sides of the mollification error bounds at one `(ξ, ε)`.
#[derive(Debug, Clone, Serialize)]
pub struct MollifierBoundsReport {
    pub eps: f64,
    pub xi: Vec<f64>,
    /// `∫_0^T ‖S_ε − S‖ dt`
    pub lhs1: f64,
    /// `C (ω_S(ξ, ε) + ε√Λ)`
    pub rhs1: f64,
    pub ratio1: f64,
    /// `∫_0^T ‖∂_t S_ε‖ dt`
    pub lhs2: f64,
    /// `(C/ε)(ω_S(ξ, ε) + ε√Λ)`
    pub rhs2: f64,
    pub ratio2: f64,
    pub omega: f64,
    pub constant: f64,
    pub mean_norm: f64,
}

/// `(∫‖S_ε − S‖, ∫‖∂_t S_ε‖)` over `[0, T]` by composite Gauss–Legendre.
pub fn mollification_integrals(ms: &MollifiedSymmetrizer, xi: &[f64]) -> Result<(f64, f64), SymmetrizerError> {
    let s = ms.base();
    let width = (ms.eps() / 4.0).min(s.t_final() / 16.0);
    let rule = composite_rule(0.0, s.t_final(), s.breakpoints(), width, gl8());
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (t, w) in rule {
        let (se, dse) = ms.eval_pair(t, xi)?;
        l1 += w * op_norm(&(&se - &s.eval(t, xi)?));
        l2 += w * op_norm(&dse);
    }
    Ok((l1, l2))
}

pub fn mollifier_bounds_report(ms: &MollifiedSymmetrizer, xi: &[f64]) -> Result<MollifierBoundsReport, MollifyError> {
    let s = ms.base();
    let eps = ms.eps();
    let (lhs1, lhs2) = mollification_integrals(ms, xi)?;
    let omega = if eps < s.t_final() { omega_s(s, xi, eps)? } else { omega_s(s, xi, 0.5 * s.t_final())? };
    let c = ms.kernel().bound_constant();
    let inner = omega + eps * s.big_lambda().sqrt();
    let rhs1 = c * inner;
    let rhs2 = c / eps * inner;
    let ratio = |l: f64, r: f64| if l == 0.0 { 0.0 } else { l / r };
    Ok(MollifierBoundsReport {
        eps,
        xi: xi.to_vec(),
        lhs1,
        rhs1,
        ratio1: ratio(lhs1, rhs1),
        lhs2,
        rhs2,
        ratio2: ratio(lhs2, rhs2),
        omega,
        constant: c,
        mean_norm: mean_norm(s, xi)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::psd_bounds;
    use crate::symmetrizer::presets;
    use rand::{Rng, SeedableRng};

    #[test]
    fn kernel_properties() {
        let k = MollifierKernel::standard();
        assert!((k.l1_rho - 1.0).abs() < 1e-10);
        assert!((k.c - 2.252283621).abs() < 1e-8);
        assert!((k.max_rho - 0.8285688).abs() < 1e-6 && k.max_rho <= 1.0);
        assert!((k.l1_drho - 2.0 * k.rho(0.0)).abs() < 1e-9);
        for t in [0.0, 0.3, 0.99, 1.0, 1.5] {
            assert_eq!(k.rho(t), k.rho(-t));
        }
        assert_eq!(k.rho(1.0), 0.0);
    }

    #[test]
    fn extension_is_constant() {
        let s = presets::linear_scalar(2, 1.0, 0.5, 1.0).unwrap();
        assert_eq!(extend(&s, -1.0, &[1.0]).unwrap(), s.eval(0.0, &[1.0]).unwrap());
        assert_eq!(extend(&s, 0.4, &[1.0]).unwrap(), s.eval(0.4, &[1.0]).unwrap());
        let far = extend(&s, 6.0, &[1.0]).unwrap();
        let (lo, hi) = psd_bounds(&far).unwrap();
        assert!(lo >= s.lambda() && hi <= s.big_lambda());
    }

    #[test]
    fn constant_and_linear_examples() {
        let s0 = presets::constant(Mat::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]), 1.0).unwrap();
        let ms = mollify(&s0, 0.3).unwrap();
        let (se, ds) = ms.eval_pair(0.1, &[1.0]).unwrap();
        assert!((&se - &s0.eval(0.1, &[1.0]).unwrap()).max_abs() < 1e-10);
        assert!(ds.max_abs() < 1e-10);

        let lin = presets::linear_scalar(2, 0.0, 1.0, 1.0);
        // a + bt with a = 0 is not positive; shift it.
        assert!(lin.is_err());
        let lin = presets::linear_scalar(2, 1.0, 1.0, 1.0).unwrap();
        let ms = mollify(&lin, 0.1).unwrap();
        let se = ms.eval(0.5, &[1.0]).unwrap();
        assert!((se[(0, 0)].re - 1.5).abs() < 1e-10 && se[(0, 1)].norm() < 1e-15);
        assert!((ms.eval_dt(0.5, &[1.0]).unwrap()[(0, 0)].re - 1.0).abs() < 1e-8);
        assert!(matches!(mollify(&lin, 0.0), Err(MollifyError::BadEpsilon(_))));
        assert!(matches!(mollify(&lin, 1.5), Err(MollifyError::BadEpsilon(_))));
    }

    #[test]
    fn omega_examples() {
        let s0 = presets::constant(Mat::identity(2), 1.0).unwrap();
        assert_eq!(omega_s(&s0, &[1.0], 0.2).unwrap(), 0.0);
        let lin = presets::linear_scalar(1, 1.0, 1.0, 1.0).unwrap();
        for sigma in [0.05, 0.2, 0.5] {
            let w = omega_s(&lin, &[1.0], sigma).unwrap();
            assert!((w - sigma * (1.0 - sigma)).abs() < 1e-12, "{w}");
        }
        // Monotone in t: the sup sits at τ = σ, matching a dense grid.
        let rot = presets::holder(2, 0.0, 0.5, 1.0).unwrap();
        let w = omega_s(&rot, &[1.0], 0.3).unwrap();
        let dense = omega_s_grid(&rot, &[1.0], 0.3, 1000).unwrap();
        assert!(w >= dense * (1.0 - 1e-12));
        assert!((w - dense).abs() <= 1e-9 * dense);
    }

    #[test]
    fn mollifier_bounds_examples() {
        let s0 = presets::constant(Mat::identity(2), 1.0).unwrap();
        let r = mollifier_bounds_report(&mollify(&s0, 0.1).unwrap(), &[1.0]).unwrap();
        assert!(r.lhs1 < 1e-12 && r.lhs2 < 1e-12);
        assert!(r.ratio1 < 1e-10 && r.ratio2 < 1e-10);

        let lin = presets::linear_scalar(2, 1.0, 1.0, 1.0).unwrap();
        let r = mollifier_bounds_report(&mollify(&lin, 0.1).unwrap(), &[1.0]).unwrap();
        assert!(r.ratio1 <= 1.0 && r.ratio2 <= 1.0);

        let jump = presets::jump(0.43, 1.0).unwrap();
        let mut lhs2 = Vec::new();
        for eps in [0.2, 0.1, 0.05] {
            let r = mollifier_bounds_report(&mollify(&jump, eps).unwrap(), &[1.0]).unwrap();
            assert!(r.ratio1 <= 1.0 && r.ratio2 <= 1.0, "{r:?}");
            lhs2.push(r.lhs2);
        }
        // ∫‖∂_t S_ε‖ stays at the jump size as ε shrinks.
        for v in lhs2 {
            assert!((v - 2.0).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let rot = presets::rotating(3.0, 1.0).unwrap();
        let ms = mollify(&rot, 0.1).unwrap();
        let h = 1e-4;
        for t in [0.05, 0.3, 0.7, 0.95] {
            let d = ms.eval_dt(t, &[1.0]).unwrap();
            let fd = (&ms.eval(t + h, &[1.0]).unwrap() - &ms.eval(t - h, &[1.0]).unwrap()).scale(0.5 / h);
            let tol = (1e-6f64).max(1e-4 * op_norm(&d));
            assert!(op_norm(&(&d - &fd)) <= tol, "t={t}");
        }
    }

    #[test]
    fn bounds_hold_at_random_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let syms = [presets::rotating(4.0, 1.0).unwrap(), presets::jump(0.5, 1.0).unwrap(), presets::holder(2, 0.5, 0.3, 1.0).unwrap()];
        for s in &syms {
            for _ in 0..100 {
                let t = rng.gen_range(0.0..1.0);
                let eps = rng.gen_range(0.01..1.0);
                let se = mollify(s, eps).unwrap().eval(t, &[1.0]).unwrap();
                let (lo, hi) = psd_bounds(&se).unwrap();
                assert!(lo >= s.lambda() - 1e-9 && hi <= s.big_lambda() + 1e-9);
            }
        }
    }

    #[test]
    fn convergence_as_eps_halves() {
        for s in [presets::rotating(3.0, 1.0).unwrap(), presets::holder(2, 0.5, 0.3, 1.0).unwrap()] {
            let mut prev = f64::INFINITY;
            for eps in [0.2, 0.1, 0.05, 0.025] {
                let (l1, _) = mollification_integrals(&mollify(&s, eps).unwrap(), &[1.0]).unwrap();
                assert!(l1 <= prev * 1.05, "{}: {l1} after {prev}", s.name());
                prev = l1;
            }
        }
    }
}
