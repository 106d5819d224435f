//! Gradients of the per-datum loss `-log pdf(x)` with respect to the raw PNN
//! parameters, and their composition with the weight-model Jacobian.
//!
//! The loss is `-ln F'(x) + ln(F(hi) - F(lo))`. `F'(x)` is itself an input
//! derivative, so each forward pass carries (value, d/dx) pairs through the
//! network and the backward pass accumulates adjoints for both components.
//! Three passes are recorded: at `x` (only the tangent matters), and at the
//! two bounds (only the value matters).

use crate::error::{NitsError, Result};
use crate::model::weights::{WeightModel, WeightModelTape};
use crate::pnn::{Pnn, PnnParams, PnnSpec, Trace, WEIGHT_CLAMP_MAX, WEIGHT_CLAMP_MIN};

/// Recorded forward state for one datum plus gradient accumulators.
#[derive(Debug, Clone)]
pub struct GradTape<'a> {
    pnn: &'a Pnn,
    at_x: Trace,
    at_lo: Trace,
    at_hi: Trace,
    loss: f64,
    grad: Vec<f64>,
}

impl<'a> GradTape<'a> {
    pub fn record(pnn: &'a Pnn, x: f64) -> Result<Self> {
        let b = pnn.bounds();
        b.check(x)?;
        let at_x = pnn.trace(x)?;
        let at_lo = pnn.trace(b.lo)?;
        let at_hi = pnn.trace(b.hi)?;
        let loss = -pnn.log_pdf_from_dfdx(at_x.dfdx)?;
        Ok(Self {
            pnn,
            at_x,
            at_lo,
            at_hi,
            loss,
            grad: vec![0.0; pnn.spec().param_count()],
        })
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    /// Runs the reverse pass and returns `d loss / d raw params` in the flat
    /// [`PnnParams`] layout. Accumulators are reset first, so repeated calls
    /// give identical results.
    pub fn backward(&mut self) -> Result<&[f64]> {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let z = self.pnn.partition();
        backprop(
            self.pnn,
            &self.at_x,
            0.0,
            -1.0 / self.at_x.dfdx,
            &mut self.grad,
        );
        backprop(self.pnn, &self.at_hi, 1.0 / z, 0.0, &mut self.grad);
        backprop(self.pnn, &self.at_lo, -1.0 / z, 0.0, &mut self.grad);
        check_finite(self.pnn.spec(), &self.grad)?;
        Ok(&self.grad)
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }
}

/// Loss `-log pdf(x)` and its gradient with respect to the raw parameters.
pub fn loss_and_grad(spec: &PnnSpec, params: &PnnParams, x: f64) -> Result<(f64, PnnParams)> {
    let pnn = Pnn::new(spec, params)?;
    let mut tape = GradTape::record(&pnn, x)?;
    let grad = tape.backward()?.to_vec();
    Ok((tape.loss(), PnnParams::from_flat(spec, grad)?))
}

/// Adds `d loss / d theta` for one datum into `acc` and returns the loss.
pub(crate) fn accumulate_loss_grad(pnn: &Pnn, x: f64, acc: &mut [f64]) -> Result<f64> {
    let b = pnn.bounds();
    b.check(x)?;
    let at_x = pnn.trace(x)?;
    let loss = -pnn.log_pdf_from_dfdx(at_x.dfdx)?;
    let z = pnn.partition();
    backprop(pnn, &at_x, 0.0, -1.0 / at_x.dfdx, acc);
    backprop(pnn, &pnn.trace(b.hi)?, 1.0 / z, 0.0, acc);
    backprop(pnn, &pnn.trace(b.lo)?, -1.0 / z, 0.0, acc);
    Ok(loss)
}

fn check_finite(spec: &PnnSpec, grad: &[f64]) -> Result<()> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        let layer = (0..spec.n_layers())
            .rev()
            .find(|&l| spec.layer_offset(l) <= i)
            .unwrap_or(0);
        return Err(NitsError::NumericalOverflow {
            layer: layer + 1,
            what: format!("gradient entry {i} is not finite"),
        });
    }
    Ok(())
}

/// Reverse pass for one recorded point given the adjoints of `F` and `F'`.
fn backprop(pnn: &Pnn, tr: &Trace, g_value: f64, g_dfdx: f64, acc: &mut [f64]) {
    let spec = pnn.spec();
    let n = pnn.hidden.len();

    // softmax head: d/d raw_k = beta_k (g_k - sum_i beta_i g_i)
    let last_a = &tr.act[n];
    let last_t = &tr.tangent[n];
    let g_beta: Vec<f64> = last_a
        .iter()
        .zip(last_t)
        .map(|(a, t)| g_value * a + g_dfdx * t)
        .collect();
    let dot: f64 = pnn.mix.iter().zip(&g_beta).map(|(b, g)| b * g).sum();
    let off = spec.layer_offset(n);
    for (k, (b, g)) in pnn.mix.iter().zip(&g_beta).enumerate() {
        acc[off + k] += b * (g - dot);
    }

    let mut a_bar: Vec<f64> = pnn.mix.iter().map(|b| b * g_value).collect();
    let mut t_bar: Vec<f64> = pnn.mix.iter().map(|b| b * g_dfdx).collect();

    for l in (0..n).rev() {
        let layer = &pnn.hidden[l];
        let (n_in, n_out) = (layer.n_in, layer.n_out);
        let a = &tr.act[l + 1];
        let ac = &tr.act_c[l + 1];
        let u = &tr.pre_tangent[l + 1];
        let mut z_bar = vec![0.0; n_out];
        let mut u_bar = vec![0.0; n_out];
        for j in 0..n_out {
            let s = a[j] * ac[j];
            // t = s u, s = a (1 - a), a = sigmoid(z)
            u_bar[j] = t_bar[j] * s;
            let s_bar = t_bar[j] * u[j];
            let a_total = a_bar[j] + s_bar * (ac[j] - a[j]);
            z_bar[j] = a_total * s;
        }

        let off = spec.layer_offset(l);
        let prev_a = &tr.act[l];
        let prev_t = &tr.tangent[l];
        // bias enters as -mean_i(W_ij) * b_j
        let m_bar: Vec<f64> = (0..n_out)
            .map(|j| -layer.raw_bias[j] * z_bar[j] / n_in as f64)
            .collect();
        for i in 0..n_in {
            let row = &layer.weights[i * n_out..(i + 1) * n_out];
            let g_row = &mut acc[off + i * n_out..off + (i + 1) * n_out];
            for j in 0..n_out {
                let w = row[j];
                if w == WEIGHT_CLAMP_MIN || w == WEIGHT_CLAMP_MAX {
                    continue;
                }
                let w_bar = z_bar[j] * prev_a[i] + u_bar[j] * prev_t[i] + m_bar[j];
                g_row[j] -= w * w_bar;
            }
        }
        let b_off = off + n_in * n_out;
        for j in 0..n_out {
            acc[b_off + j] -= layer.col_mean[j] * z_bar[j];
        }

        if l > 0 {
            let mut next_a = vec![0.0; n_in];
            let mut next_t = vec![0.0; n_in];
            for i in 0..n_in {
                let row = &layer.weights[i * n_out..(i + 1) * n_out];
                let mut sa = 0.0;
                let mut st = 0.0;
                for j in 0..n_out {
                    sa += row[j] * z_bar[j];
                    st += row[j] * u_bar[j];
                }
                next_a[i] = sa;
                next_t[i] = st;
            }
            a_bar = next_a;
            t_bar = next_t;
        }
    }
}

/// Pushes `d loss / d theta` (all coordinates, concatenated) back through the
/// weight model recorded in `tape`, returning `d loss / d phi`.
pub fn chain_to_phi(
    grad_theta: &[f64],
    tape: &WeightModelTape,
    wm: &WeightModel,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; wm.param_count()];
    wm.backward(tape, grad_theta, &mut out)?;
    if let Some(i) = out.iter().position(|g| !g.is_finite()) {
        return Err(NitsError::NumericalOverflow {
            layer: wm.layer_of(i),
            what: format!("weight-model gradient entry {i} is not finite"),
        });
    }
    Ok(out)
}
