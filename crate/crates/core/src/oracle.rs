//! Independent verification primitives.
//!
//! Nothing here evaluates a PNN: quadrature, finite differences and the KS
//! statistic only see opaque closures, and the mixture-of-logistics reference
//! is written out in closed form. [`embed_mol_as_pnn`] is the one bridge,
//! producing PNN parameters whose output layer reproduces a given mixture.

use crate::error::{NitsError, Result};
use crate::pnn::{Bounds, PnnParams, PnnSpec};

/// Panel count used for whole-support checks.
pub const DEFAULT_PANELS: usize = 10_000;
const ADAPTIVE_REL_TOL: f64 = 1e-10;
const ADAPTIVE_MAX_PANELS: usize = 1 << 20;
const KS_SERIES_TERMS: usize = 100;

/// Composite Simpson rule on `[a, b]`; an odd `panels` is rounded up.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let n = (panels.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for k in 1..n {
        let v = f(a + k as f64 * h);
        if k % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    h / 3.0 * (f(a) + f(b) + 4.0 * odd + 2.0 * even)
}

/// Simpson with panel doubling until two successive estimates agree to
/// `1e-10` relative (or `2^20` panels).
pub fn simpson_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let mut panels = 64;
    let mut prev = simpson(&f, a, b, panels);
    while panels < ADAPTIVE_MAX_PANELS {
        panels *= 2;
        let next = simpson(&f, a, b, panels);
        if (next - prev).abs() <= ADAPTIVE_REL_TOL * next.abs() {
            return next;
        }
        prev = next;
    }
    prev
}

/// Composite trapezoid over already-sampled, equally spaced values.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

/// Central difference `(f(x+h) - f(x-h)) / 2h`.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Fourth-order five-point stencil
/// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
pub fn five_point_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Relative discrepancy between an analytic and a numerical value; both
/// magnitudes below `floor` are compared on the absolute scale `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov test against `Unif[0, 1]`.
///
/// `samples` need not be sorted. The p-value uses the asymptotic Kolmogorov
/// series with the Stephens small-sample correction.
pub fn ks_statistic(samples: &[f64]) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(NitsError::Usage("KS test needs at least one sample".into()));
    }
    if let Some(v) = samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(NitsError::Usage(format!("KS sample {v} is outside [0, 1]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let above = (i as f64 + 1.0) / n - u;
            let below = u - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=KS_SERIES_TERMS {
        let k = k as f64;
        let sign = if k as usize % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * (-2.0 * k * k * lambda * lambda).exp();
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Reference mixture of logistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MolRef {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl MolRef {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || scales.len() != k {
            return Err(NitsError::InvalidParameter(
                "mixture needs matching, non-empty weight/mean/scale lists".into(),
            ));
        }
        if scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(NitsError::InvalidParameter(
                "scales must be positive".into(),
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(NitsError::InvalidParameter(
                "weights must be positive and sum to 1".into(),
            ));
        }
        Ok(Self {
            weights,
            means,
            scales,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        mol_cdf(self, x)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        mol_pdf(self, x)
    }
}

fn logistic(t: f64) -> f64 {
    // separate from pnn::sigmoid on purpose
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `sum_i alpha_i * sigma((x - mu_i) / s_i)`.
pub fn mol_cdf(r: &MolRef, x: f64) -> f64 {
    r.weights
        .iter()
        .zip(&r.means)
        .zip(&r.scales)
        .map(|((a, m), s)| a * logistic((x - m) / s))
        .sum()
}

/// `sum_i alpha_i * e^t / (s_i (1 + e^t)^2)` with `t = (x - mu_i) / s_i`.
pub fn mol_pdf(r: &MolRef, x: f64) -> f64 {
    r.weights
        .iter()
        .zip(&r.means)
        .zip(&r.scales)
        .map(|((a, m), s)| {
            let t = -((x - m) / s).abs();
            let e = t.exp();
            a * e / (s * (1.0 + e) * (1.0 + e))
        })
        .sum()
}

/// Two-layer PNN (`widths = [1, k, 1]`) whose unnormalized output equals the
/// mixture cdf on the whole real line.
///
/// With one input the first layer's pre-activation for unit `j` is
/// `w_j * x - w_j * b_j` (the bias is scaled by the column mean of the
/// transformed weights, which here is `w_j` itself). Choosing
///
/// * raw weight `ln s_j`, so `w_j = exp(-ln s_j) = 1 / s_j`,
/// * raw bias `mu_j`, so the pre-activation is `(x - mu_j) / s_j`,
/// * raw output weight `ln alpha_j`, so `softmax` returns `alpha_j`,
///
/// gives `F(x) = sum_j alpha_j sigma((x - mu_j) / s_j)`. Normalizing on
/// `[lo, hi]` then differs from the mixture cdf only by the tail mass outside
/// the bounds, which vanishes as the bounds widen.
pub fn embed_mol_as_pnn(r: &MolRef, bounds: Bounds) -> Result<(PnnSpec, PnnParams)> {
    let k = r.components();
    let spec = PnnSpec::new(vec![1, k, 1], bounds)?;
    let mut p = PnnParams::zeros(&spec);
    {
        let (w, b) = p.layer_mut(&spec, 0);
        for j in 0..k {
            w[j] = r.scales[j].ln();
            b[j] = r.means[j];
        }
    }
    {
        let (w, _) = p.layer_mut(&spec, 1);
        for j in 0..k {
            w[j] = r.weights[j].ln();
        }
    }
    Ok((spec, p))
}

/// Largest `|N(x) - F_mol(x)|` over `points` equally spaced grid points.
pub fn sup_gap<N: Fn(f64) -> f64>(cdf: N, r: &MolRef, bounds: Bounds, points: usize) -> f64 {
    let h = bounds.width() / (points - 1) as f64;
    (0..points)
        .map(|i| {
            let x = if i + 1 == points {
                bounds.hi
            } else {
                bounds.lo + i as f64 * h
            };
            (cdf(x) - mol_cdf(r, x)).abs()
        })
        .fold(0.0, f64::max)
}
