//! Gauss–Legendre rules and small quadrature helpers.

use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Cached 64-point rule.
pub fn gl64() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(64))
}

/// Cached 8-point rule.
pub fn gl8() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(8))
}

/// Composite Gauss–Legendre nodes and weights on `[a, b]`, split at `cuts`
/// and into panels no wider than `max_width`.
pub fn composite_rule(a: f64, b: f64, cuts: &[f64], max_width: f64, rule: &(Vec<f64>, Vec<f64>)) -> Vec<(f64, f64)> {
    let mut edges = vec![a];
    let mut inner: Vec<f64> = cuts.iter().copied().filter(|&c| c > a && c < b).collect();
    inner.sort_by(f64::total_cmp);
    edges.extend(inner);
    edges.push(b);
    let mut out = Vec::new();
    for w in edges.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let panels = (len / max_width).ceil().max(1.0) as usize;
        let h = len / panels as f64;
        for p in 0..panels {
            let lo = w[0] + p as f64 * h;
            let mid = lo + 0.5 * h;
            for (x, wt) in rule.0.iter().zip(&rule.1) {
                out.push((mid + 0.5 * h * x, 0.5 * h * wt));
            }
        }
    }
    out
}

/// Trapezoid rule on sorted nodes.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

/// Running trapezoid integral, starting at 0.
pub fn cumulative_trapezoid(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..x.len() {
        acc += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
        out.push(acc);
    }
    out
}
