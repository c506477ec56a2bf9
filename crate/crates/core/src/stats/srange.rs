//! Studentized range distribution.
//!
//! ```text
//! P(Q <= q; k, v) = ∫_0^∞ f_v(s) · W_k(q s) ds
//! W_k(w)          = k ∫ φ(z) [Φ(z) - Φ(z - w)]^(k-1) dz
//! ```
//!
//! `f_v` is the density of `sqrt(χ²_v / v)`. Both integrals use composite
//! Gauss–Legendre rules; the outer one is self-normalized (the same nodes also
//! integrate `f_v`), which keeps the result accurate for very large `v`.

use std::sync::OnceLock;

use statrs::function::erf::erfc;

use super::StatsError;

const GL_POINTS: usize = 16;
const INNER_LO: f64 = -8.5;
const INNER_HI: f64 = 8.5;
const INNER_PANELS: usize = 10;
const OUTER_PANELS: usize = 20;
/// Outer range in units of the scale variable's spread.
const OUTER_WIDTH_SIGMAS: f64 = 12.0;
/// Outer nodes below e^-50 of the modal density add nothing at f64 precision.
const NEGLIGIBLE_LOG_DENSITY: f64 = -50.0;

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like starting guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_POINTS))
}

/// Composite rule on [a, b] with `panels` equal panels.
fn composite(a: f64, b: f64, panels: usize) -> impl Iterator<Item = (f64, f64)> {
    let (x, w) = rule();
    let h = (b - a) / panels as f64;
    (0..panels).flat_map(move |p| {
        let mid = a + (p as f64 + 0.5) * h;
        x.iter()
            .zip(w)
            .map(move |(xi, wi)| (mid + 0.5 * h * xi, 0.5 * h * wi))
    })
}

/// Upper normal tail, accurate far into the tail.
fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

struct InnerNode {
    z: f64,
    /// weight · φ(z)
    wphi: f64,
    /// Φ(z) and its complement
    cdf: f64,
    sf: f64,
}

fn inner_nodes() -> &'static [InnerNode] {
    static NODES: OnceLock<Vec<InnerNode>> = OnceLock::new();
    NODES.get_or_init(|| {
        let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        composite(INNER_LO, INNER_HI, INNER_PANELS)
            .map(|(z, w)| InnerNode {
                z,
                wphi: w * inv_sqrt_2pi * (-0.5 * z * z).exp(),
                cdf: upper_tail(-z),
                sf: upper_tail(z),
            })
            .collect()
    })
}

/// P(range of k standard normals <= w).
pub fn normal_range_cdf(w: f64, k: u32) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let m = (k - 1) as i32;
    let mut acc = 0.0;
    for n in inner_nodes() {
        let zw = n.z - w;
        // Φ(z) - Φ(z - w), computed from whichever tail avoids cancellation.
        // Below -9, Φ(z - w) < 1.2e-19 and drops out.
        let band = if zw < -9.0 {
            n.cdf
        } else if n.z > 0.0 {
            upper_tail(zw) - n.sf
        } else {
            n.cdf - upper_tail(-zw)
        };
        if band > 0.0 {
            acc += n.wphi * band.powi(m);
        }
    }
    (k as f64 * acc).clamp(0.0, 1.0)
}

fn check_args(q: f64, k: u32, df: f64) -> Result<(), StatsError> {
    if q.is_nan() || q < 0.0 {
        return Err(StatsError::ArgumentOutOfRange(format!(
            "q = {q} must be >= 0"
        )));
    }
    if k < 2 {
        return Err(StatsError::ArgumentOutOfRange(format!(
            "k = {k} must be >= 2"
        )));
    }
    if df.is_nan() || df < 1.0 {
        return Err(StatsError::ArgumentOutOfRange(format!(
            "df = {df} must be >= 1"
        )));
    }
    Ok(())
}

/// P(Q <= q) for the studentized range with `k` groups and `df` error degrees of freedom.
pub fn studentized_range_cdf(q: f64, k: u32, df: f64) -> Result<f64, StatsError> {
    check_args(q, k, df)?;
    if q == 0.0 {
        return Ok(0.0);
    }
    if q.is_infinite() {
        return Ok(1.0);
    }
    if df.is_infinite() {
        return Ok(normal_range_cdf(q, k));
    }
    let v = df;
    let mode = ((v - 1.0) / v).sqrt();
    let sigma = 1.0 / (2.0 * v).sqrt();
    let lo = (mode - OUTER_WIDTH_SIGMAS * sigma).max(0.0);
    let hi = mode + OUTER_WIDTH_SIGMAS * sigma;
    // Log density relative to its mode; the constant cancels in num / den.
    let log_mode = if mode > 0.0 {
        (v - 1.0) * mode.ln() - v * mode * mode / 2.0
    } else {
        0.0
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, w) in composite(lo, hi, OUTER_PANELS) {
        if s <= 0.0 {
            continue;
        }
        let log_f = (v - 1.0) * s.ln() - v * s * s / 2.0 - log_mode;
        if log_f < NEGLIGIBLE_LOG_DENSITY {
            continue;
        }
        let f = w * log_f.exp();
        den += f;
        num += f * normal_range_cdf(q * s, k);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// Upper tail, `1 - cdf`: the Tukey p-value for an observed `q`.
pub fn studentized_range_sf(q: f64, k: u32, df: f64) -> Result<f64, StatsError> {
    Ok(1.0 - studentized_range_cdf(q, k, df)?)
}
