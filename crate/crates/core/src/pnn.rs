//! One-dimensional probabilistically normalized network (PNN).
//!
//! A PNN is a small fully-connected network `F(x)` that is strictly increasing
//! in its scalar input. Hidden layers compute
//!
//! ```text
//! a_l = sigmoid(h_A(A_l)^T a_{l-1} + h_b(b_l, A_l))
//! ```
//!
//! and the output layer is a convex combination `F(x) = softmax(A_n)^T a_{n-1}`.
//! Raw parameters are unconstrained reals; positivity comes from the
//! transforms:
//!
//! * `h_A(A) = exp(-A)` (clamped to `[1e-30, 1e30]`),
//! * `h_b(b, A)_j = -mean_i(exp(-A[i, j])) * b_j`, one scalar bias per output
//!   unit scaled like that unit's incoming weights,
//! * `h_s(A) = softmax(A)` on the final column.
//!
//! Because `dF/dx > 0` everywhere, the density on `[lo, hi]` is available in
//! closed form: `pdf(x) = F'(x) / (F(hi) - F(lo))` and
//! `cdf(x) = (F(x) - F(lo)) / (F(hi) - F(lo))`. The partition function is just
//! a difference of two forward passes, no quadrature needed.
//!
//! Weight matrices are stored row-major with shape `in x out`, so entry
//! `(i, j)` connects input unit `i` to output unit `j`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NitsError, Result};

pub const WEIGHT_CLAMP_MIN: f64 = 1e-30;
pub const WEIGHT_CLAMP_MAX: f64 = 1e30;
pub const PARTITION_FLOOR: f64 = 1e-300;

/// Compact support `[lo, hi]` of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(NitsError::InvalidParameter(format!(
                "bounds must be finite, got [{lo}, {hi}]"
            )));
        }
        if lo >= hi {
            return Err(NitsError::InvalidParameter(format!(
                "bounds must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub(crate) fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(NitsError::Domain(format!(
                "x = {x} lies outside [{}, {}]",
                self.lo, self.hi
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnnSpec {
    widths: Vec<usize>,
    bounds: Bounds,
}

impl PnnSpec {
    /// `widths` runs from the input (always 1) to the output (always 1).
    pub fn new(widths: Vec<usize>, bounds: Bounds) -> Result<Self> {
        if widths.len() < 3 {
            return Err(NitsError::InvalidParameter(format!(
                "a PNN needs at least one hidden and one output layer, got widths {widths:?}"
            )));
        }
        if widths[0] != 1 || *widths.last().unwrap() != 1 {
            return Err(NitsError::InvalidParameter(format!(
                "input and output widths must be 1, got {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(NitsError::InvalidParameter(format!(
                "all widths must be >= 1, got {widths:?}"
            )));
        }
        // Re-validate in case the caller built Bounds by hand.
        let bounds = Bounds::new(bounds.lo, bounds.hi)?;
        Ok(Self { widths, bounds })
    }

    /// Two hidden layers of 16 units.
    pub fn with_default_widths(bounds: Bounds) -> Result<Self> {
        Self::new(vec![1, 16, 16, 1], bounds)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn with_bounds(&self, bounds: Bounds) -> Self {
        Self {
            widths: self.widths.clone(),
            bounds,
        }
    }

    /// Number of weight layers, hidden plus output.
    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers()).map(|l| self.layer_len(l)).sum()
    }

    fn layer_len(&self, l: usize) -> usize {
        let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
        if l + 1 == self.n_layers() {
            n_in
        } else {
            n_in * n_out + n_out
        }
    }

    /// Offset of layer `l`'s weights inside the flat parameter vector; its bias
    /// (hidden layers only) follows the weights directly.
    pub fn layer_offset(&self, l: usize) -> usize {
        (0..l).map(|k| self.layer_len(k)).sum()
    }
}

/// Raw, unconstrained PNN parameters stored as one flat vector.
///
/// Layout per layer: weights (`in x out`, row-major), then the bias (`out`)
/// for hidden layers. The output layer has weights only.
#[derive(Debug, Clone, PartialEq)]
pub struct PnnParams {
    widths: Vec<usize>,
    data: Vec<f64>,
}

impl PnnParams {
    pub fn zeros(spec: &PnnSpec) -> Self {
        Self {
            widths: spec.widths.clone(),
            data: vec![0.0; spec.param_count()],
        }
    }

    pub fn from_flat(spec: &PnnSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.param_count() {
            return Err(NitsError::InvalidParameter(format!(
                "expected {} raw parameters for widths {:?}, got {}",
                spec.param_count(),
                spec.widths,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(NitsError::InvalidParameter(format!(
                "raw parameter {i} is not finite ({})",
                data[i]
            )));
        }
        Ok(Self {
            widths: spec.widths.clone(),
            data,
        })
    }

    /// Independent `N(0, scale^2)` raw entries.
    pub fn random<R: Rng + ?Sized>(spec: &PnnSpec, rng: &mut R, scale: f64) -> Self {
        let data = (0..spec.param_count())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect();
        Self {
            widths: spec.widths.clone(),
            data,
        }
    }

    /// A spread-out reference density over `bounds`: first-layer sigmoids
    /// tile the interval, the second hidden layer counts them, and the
    /// softmax head is uniform. Used to initialize weight-model output biases.
    pub fn reference(spec: &PnnSpec) -> Self {
        let mut p = Self::zeros(spec);
        let b = spec.bounds;
        let n_layers = spec.n_layers();
        for l in 0..n_layers - 1 {
            let (n_in, n_out) = (spec.widths[l], spec.widths[l + 1]);
            let (w, bias) = p.layer_mut(spec, l);
            if l == 0 {
                // unit j is a sigmoid centred at the j-th tile of [lo, hi]
                let spacing = b.width() / n_out as f64;
                let slope = 2.0 / spacing;
                w.fill(-slope.ln());
                for (j, bj) in bias.iter_mut().enumerate() {
                    *bj = b.lo + (j as f64 + 0.5) * spacing;
                }
            } else {
                // inputs sum to a value in (0, n_in); centre the units over it
                w.fill(0.0);
                let spacing = n_in as f64 / n_out as f64;
                for (j, bj) in bias.iter_mut().enumerate() {
                    *bj = (j as f64 + 0.5) * spacing;
                }
            }
        }
        p
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Raw weights and bias of layer `l` (bias is empty for the output layer).
    pub fn layer(&self, spec: &PnnSpec, l: usize) -> (&[f64], &[f64]) {
        let off = spec.layer_offset(l);
        let n_w = spec.widths[l] * spec.widths[l + 1];
        let len = spec.layer_len(l);
        let (w, b) = self.data[off..off + len].split_at(n_w);
        (w, b)
    }

    pub fn layer_mut(&mut self, spec: &PnnSpec, l: usize) -> (&mut [f64], &mut [f64]) {
        let off = spec.layer_offset(l);
        let n_w = spec.widths[l] * spec.widths[l + 1];
        let len = spec.layer_len(l);
        self.data[off..off + len].split_at_mut(n_w)
    }

    fn check_shape(&self, spec: &PnnSpec) -> Result<()> {
        if self.widths != spec.widths || self.data.len() != spec.param_count() {
            return Err(NitsError::InvalidParameter(format!(
                "parameters built for widths {:?} used with widths {:?}",
                self.widths, spec.widths
            )));
        }
        Ok(())
    }
}

/// `h_A`: elementwise `exp(-raw)`, clamped to `[1e-30, 1e30]`.
///
/// Returns the transformed values and the number of entries that hit a clamp.
pub fn transform_weights(raw: &[f64]) -> (Vec<f64>, u64) {
    let mut clamps = 0;
    let out = raw
        .iter()
        .map(|&r| {
            let (v, clamped) = positive_weight(r);
            clamps += clamped as u64;
            v
        })
        .collect();
    (out, clamps)
}

#[inline]
pub(crate) fn positive_weight(raw: f64) -> (f64, bool) {
    let v = (-raw).exp();
    if v < WEIGHT_CLAMP_MIN {
        (WEIGHT_CLAMP_MIN, true)
    } else if v > WEIGHT_CLAMP_MAX {
        (WEIGHT_CLAMP_MAX, true)
    } else {
        (v, false)
    }
}

/// `h_b`: per-unit bias `-mean_i(exp(-A[i, j])) * b_j` for a `n_in x n_out`
/// raw weight matrix `raw_a` (row-major).
pub fn transform_bias(raw_b: &[f64], raw_a: &[f64], n_in: usize) -> Result<Vec<f64>> {
    let n_out = raw_b.len();
    if n_in == 0 || raw_a.len() != n_in * n_out {
        return Err(NitsError::InvalidParameter(format!(
            "bias of length {n_out} does not match a {n_in}-row weight matrix with {} entries",
            raw_a.len()
        )));
    }
    let (w, _) = transform_weights(raw_a);
    Ok(effective_bias(raw_b, &w, n_in))
}

fn effective_bias(raw_b: &[f64], w: &[f64], n_in: usize) -> Vec<f64> {
    let n_out = raw_b.len();
    let mut mean = vec![0.0; n_out];
    for row in w.chunks_exact(n_out) {
        for (m, &wij) in mean.iter_mut().zip(row) {
            *m += wij;
        }
    }
    mean.iter()
        .zip(raw_b)
        .map(|(&m, &b)| -(m / n_in as f64) * b)
        .collect()
}

/// `h_s`: max-subtracted softmax.
pub fn transform_final(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = raw.iter().map(|&r| (r - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Transformed (constrained) parameters of one hidden layer.
#[derive(Debug, Clone)]
pub(crate) struct HiddenLayer {
    pub n_in: usize,
    pub n_out: usize,
    /// `h_A(A)`, row-major `n_in x n_out`.
    pub weights: Vec<f64>,
    /// Column means of `weights`, the scale applied to the raw bias.
    pub col_mean: Vec<f64>,
    /// `h_b(b, A)`.
    pub bias: Vec<f64>,
    pub raw_bias: Vec<f64>,
}

/// Per-layer values recorded during one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    /// `a_l`, starting with `a_0 = [x]`.
    pub act: Vec<Vec<f64>>,
    /// `1 - a_l` evaluated as `sigmoid(-z)`; empty for `l = 0`.
    pub act_c: Vec<Vec<f64>>,
    /// `da_l/dx`, starting with `[1]`.
    pub tangent: Vec<Vec<f64>>,
    /// Tangent of the pre-activation, `h_A(A_l)^T da_{l-1}/dx`.
    pub pre_tangent: Vec<Vec<f64>>,
    pub value: f64,
    pub dfdx: f64,
}

/// A PNN with transformed parameters and endpoint values precomputed.
///
/// This is the hot-path object: build it once per parameter vector and call
/// [`Pnn::cdf`] / [`Pnn::log_pdf`] as often as needed.
#[derive(Debug, Clone)]
pub struct Pnn {
    spec: PnnSpec,
    pub(crate) hidden: Vec<HiddenLayer>,
    pub(crate) mix: Vec<f64>,
    f_lo: f64,
    f_hi: f64,
    clamps: u64,
}

impl Pnn {
    pub fn new(spec: &PnnSpec, params: &PnnParams) -> Result<Self> {
        params.check_shape(spec)?;
        Self::from_raw(spec, &params.data)
    }

    /// Builds from a raw parameter slice in the [`PnnParams`] layout.
    pub fn from_raw(spec: &PnnSpec, raw: &[f64]) -> Result<Self> {
        if raw.len() != spec.param_count() {
            return Err(NitsError::InvalidParameter(format!(
                "expected {} raw parameters, got {}",
                spec.param_count(),
                raw.len()
            )));
        }
        if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
            return Err(NitsError::InvalidParameter(format!(
                "raw parameter {i} is not finite ({})",
                raw[i]
            )));
        }
        let layer = |l: usize| {
            let off = spec.layer_offset(l);
            let n_w = spec.widths[l] * spec.widths[l + 1];
            raw[off..off + spec.layer_len(l)].split_at(n_w)
        };
        let n_layers = spec.n_layers();
        let mut clamps = 0;
        let mut hidden = Vec::with_capacity(n_layers - 1);
        for l in 0..n_layers - 1 {
            let (raw_w, raw_b) = layer(l);
            let (n_in, n_out) = (spec.widths[l], spec.widths[l + 1]);
            let (weights, c) = transform_weights(raw_w);
            clamps += c;
            let bias = effective_bias(raw_b, &weights, n_in);
            let mut col_mean = vec![0.0; n_out];
            for row in weights.chunks_exact(n_out) {
                for (m, &w) in col_mean.iter_mut().zip(row) {
                    *m += w / n_in as f64;
                }
            }
            hidden.push(HiddenLayer {
                n_in,
                n_out,
                weights,
                col_mean,
                bias,
                raw_bias: raw_b.to_vec(),
            });
        }
        let (raw_final, _) = layer(n_layers - 1);
        let mix = transform_final(raw_final);
        let mut pnn = Self {
            spec: spec.clone(),
            hidden,
            mix,
            f_lo: 0.0,
            f_hi: 0.0,
            clamps,
        };
        let b = spec.bounds;
        pnn.f_lo = pnn.value(b.lo)?;
        pnn.f_hi = pnn.value(b.hi)?;
        Ok(pnn)
    }

    pub fn spec(&self) -> &PnnSpec {
        &self.spec
    }

    pub fn bounds(&self) -> Bounds {
        self.spec.bounds
    }

    /// Number of transformed weights that hit the exp clamp.
    pub fn clamp_count(&self) -> u64 {
        self.clamps
    }

    /// Softmax mixing weights of the output layer.
    pub fn mixing_weights(&self) -> &[f64] {
        &self.mix
    }

    /// `F(x)` without the tangent; valid for any finite `x`.
    pub fn value(&self, x: f64) -> Result<f64> {
        let mut act = vec![x];
        let mut next = Vec::new();
        for (l, layer) in self.hidden.iter().enumerate() {
            next.clear();
            next.extend_from_slice(&layer.bias);
            for (i, &a) in act.iter().enumerate() {
                let row = &layer.weights[i * layer.n_out..(i + 1) * layer.n_out];
                for (z, &w) in next.iter_mut().zip(row) {
                    *z += w * a;
                }
            }
            for z in next.iter_mut() {
                if !z.is_finite() {
                    return Err(overflow(l + 1, "pre-activation"));
                }
                *z = sigmoid(*z);
            }
            std::mem::swap(&mut act, &mut next);
        }
        Ok(self.mix.iter().zip(&act).map(|(m, a)| m * a).sum())
    }

    /// Forward pass with the input tangent carried alongside.
    pub(crate) fn trace(&self, x: f64) -> Result<Trace> {
        let n = self.hidden.len();
        let mut act = Vec::with_capacity(n + 1);
        let mut act_c = Vec::with_capacity(n + 1);
        let mut tangent = Vec::with_capacity(n + 1);
        let mut pre_tangent = Vec::with_capacity(n + 1);
        act.push(vec![x]);
        act_c.push(Vec::new());
        tangent.push(vec![1.0]);
        pre_tangent.push(Vec::new());
        for (l, layer) in self.hidden.iter().enumerate() {
            let prev_a = &act[l];
            let prev_t = &tangent[l];
            let mut z = layer.bias.clone();
            let mut u = vec![0.0; layer.n_out];
            for i in 0..layer.n_in {
                let row = &layer.weights[i * layer.n_out..(i + 1) * layer.n_out];
                let (ai, ti) = (prev_a[i], prev_t[i]);
                for j in 0..layer.n_out {
                    z[j] += row[j] * ai;
                    u[j] += row[j] * ti;
                }
            }
            if z.iter().chain(&u).any(|v| !v.is_finite()) {
                return Err(overflow(l + 1, "pre-activation"));
            }
            let a: Vec<f64> = z.iter().map(|&zj| sigmoid(zj)).collect();
            let ac: Vec<f64> = z.iter().map(|&zj| sigmoid(-zj)).collect();
            let t: Vec<f64> = (0..layer.n_out).map(|j| a[j] * ac[j] * u[j]).collect();
            act.push(a);
            act_c.push(ac);
            tangent.push(t);
            pre_tangent.push(u);
        }
        let value = self.mix.iter().zip(&act[n]).map(|(m, a)| m * a).sum();
        let dfdx = self.mix.iter().zip(&tangent[n]).map(|(m, t)| m * t).sum();
        Ok(Trace {
            act,
            act_c,
            tangent,
            pre_tangent,
            value,
            dfdx,
        })
    }

    /// `F(x)` and `dF/dx` at any finite `x`.
    pub fn forward(&self, x: f64) -> Result<Forward> {
        if !x.is_finite() {
            return Err(NitsError::Domain(format!("x = {x} is not finite")));
        }
        let t = self.trace(x)?;
        Ok(Forward {
            value: t.value,
            dfdx: t.dfdx,
            activations: t.act,
            derivatives: t.tangent,
        })
    }

    /// `Z = F(hi) - F(lo)`.
    pub fn partition(&self) -> f64 {
        self.f_hi - self.f_lo
    }

    pub fn log_partition(&self) -> f64 {
        self.partition().max(PARTITION_FLOOR).ln()
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.bounds().check(x)?;
        Ok(self.cdf_unchecked(x)?)
    }

    /// cdf without the domain check; `x` is clamped into the bounds.
    pub(crate) fn cdf_unchecked(&self, x: f64) -> Result<f64> {
        let b = self.bounds();
        if x <= b.lo {
            return Ok(0.0);
        }
        if x >= b.hi {
            return Ok(1.0);
        }
        let z = self.partition().max(PARTITION_FLOOR);
        Ok(((self.value(x)? - self.f_lo) / z).clamp(0.0, 1.0))
    }

    pub fn log_pdf(&self, x: f64) -> Result<f64> {
        self.bounds().check(x)?;
        let t = self.trace(x)?;
        self.log_pdf_from_dfdx(t.dfdx)
    }

    pub(crate) fn log_pdf_from_dfdx(&self, dfdx: f64) -> Result<f64> {
        let lp = dfdx.ln() - self.log_partition();
        if !lp.is_finite() {
            return Err(overflow(
                self.spec.n_layers(),
                &format!("log density is not finite (dF/dx = {dfdx:e})"),
            ));
        }
        Ok(lp)
    }

    /// Probability mass of `[a, b]` (clipped to the bounds), computed from
    /// the unnormalized output so adjacent intervals telescope.
    pub fn mass_between(&self, a: f64, b: f64) -> Result<f64> {
        let bounds = self.bounds();
        let f = |x: f64| -> Result<f64> {
            if x <= bounds.lo {
                Ok(self.f_lo)
            } else if x >= bounds.hi {
                Ok(self.f_hi)
            } else {
                self.value(x)
            }
        };
        let z = self.partition().max(PARTITION_FLOOR);
        Ok(((f(b)? - f(a)?) / z).max(0.0))
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        Ok(self.log_pdf(x)?.exp())
    }

    /// Full evaluation at `x` in bounds.
    pub fn evaluate(&self, x: f64) -> Result<PnnEval> {
        self.bounds().check(x)?;
        let t = self.trace(x)?;
        let log_pdf = self.log_pdf_from_dfdx(t.dfdx)?;
        let z = self.partition().max(PARTITION_FLOOR);
        Ok(PnnEval {
            cdf_value: ((t.value - self.f_lo) / z).clamp(0.0, 1.0),
            pdf_value: log_pdf.exp(),
            log_pdf,
            partition: self.partition(),
            activations: t.act,
            derivatives: t.tangent,
        })
    }
}

fn overflow(layer: usize, what: &str) -> NitsError {
    NitsError::NumericalOverflow {
        layer,
        what: what.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub value: f64,
    pub dfdx: f64,
    pub activations: Vec<Vec<f64>>,
    pub derivatives: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PnnEval {
    pub cdf_value: f64,
    pub pdf_value: f64,
    pub log_pdf: f64,
    pub partition: f64,
    /// `a_l` for `l = 0..n_layers-1`, with `a_0 = [x]`.
    pub activations: Vec<Vec<f64>>,
    /// `da_l/dx` matching `activations`.
    pub derivatives: Vec<Vec<f64>>,
}

pub fn forward(spec: &PnnSpec, params: &PnnParams, x: f64) -> Result<Forward> {
    Pnn::new(spec, params)?.forward(x)
}

pub fn evaluate(spec: &PnnSpec, params: &PnnParams, x: f64) -> Result<PnnEval> {
    Pnn::new(spec, params)?.evaluate(x)
}

pub fn cdf(spec: &PnnSpec, params: &PnnParams, x: f64) -> Result<f64> {
    spec.bounds.check(x)?;
    Pnn::new(spec, params)?.cdf(x)
}

pub fn log_pdf(spec: &PnnSpec, params: &PnnParams, x: f64) -> Result<f64> {
    spec.bounds.check(x)?;
    Pnn::new(spec, params)?.log_pdf(x)
}

pub fn partition(spec: &PnnSpec, params: &PnnParams) -> Result<f64> {
    Ok(Pnn::new(spec, params)?.partition())
}
