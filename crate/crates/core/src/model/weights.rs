//! Weight model: a causally masked residual MLP mapping a data point to the
//! raw PNN parameters of every coordinate.
//!
//! Degrees follow MADE with the natural ordering. Input `i` (0-based) has
//! degree `i + 1`; hidden unit `k` has degree `k mod (d - 1) + 1`; output
//! slice `c` has degree `c + 1`. Hidden units see inputs of degree `<=` their
//! own, outputs see hidden units of strictly smaller degree. Slice `c`
//! therefore depends on `x[..c]` only, and slice 0 is the output bias alone.
//!
//! Residual blocks are pre-activation: `h + W2 drop(relu(W1 relu(h) + b1)) + b2`.
//! Both block layers use the hidden-to-hidden mask, so the skip path keeps
//! degrees intact.
//!
//! In independent mode the network is a learned constant table: the output
//! bias is the only parameter.

use rand::Rng;

use crate::error::{NitsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Masking {
    Independent,
    Autoregressive,
}

impl Masking {
    pub fn as_str(&self) -> &'static str {
        match self {
            Masking::Independent => "independent",
            Masking::Autoregressive => "autoregressive",
        }
    }
}

impl std::str::FromStr for Masking {
    type Err = NitsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Masking::Independent),
            "autoregressive" => Ok(Masking::Autoregressive),
            other => Err(NitsError::Usage(format!(
                "unknown masking mode '{other}' (expected independent or autoregressive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightModelSpec {
    pub data_dim: usize,
    pub hidden_dim: usize,
    pub residual_blocks: usize,
    pub dropout_rate: f64,
    pub params_per_dim: usize,
    pub masking: Masking,
}

impl WeightModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 {
            return Err(NitsError::InvalidParameter("data_dim must be >= 1".into()));
        }
        if self.params_per_dim == 0 {
            return Err(NitsError::InvalidParameter(
                "params_per_dim must be >= 1".into(),
            ));
        }
        if self.masking == Masking::Autoregressive && self.hidden_dim == 0 {
            return Err(NitsError::InvalidParameter(
                "hidden_dim must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NitsError::InvalidParameter(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.data_dim * self.params_per_dim
    }

    fn has_network(&self) -> bool {
        self.masking == Masking::Autoregressive
    }
}

/// Offsets of one masked dense layer inside the flat parameter vector.
/// Weights are row-major `out x in`.
#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }
}

#[derive(Debug, Clone)]
struct Layout {
    input: Option<Dense>,
    blocks: Vec<(Dense, Dense)>,
    head: Dense,
    total: usize,
}

impl Layout {
    fn new(spec: &WeightModelSpec) -> Self {
        let mut off = 0;
        let mut dense = |n_in: usize, n_out: usize| {
            let d = Dense {
                w: off,
                b: off + n_in * n_out,
                n_in,
                n_out,
            };
            off += d.len();
            d
        };
        if spec.has_network() {
            let h = spec.hidden_dim;
            let input = dense(spec.data_dim, h);
            let blocks = (0..spec.residual_blocks)
                .map(|_| (dense(h, h), dense(h, h)))
                .collect();
            let head = dense(h, spec.output_dim());
            Layout {
                input: Some(input),
                blocks,
                head,
                total: off,
            }
        } else {
            // bias only: weights occupy zero entries
            let head = dense(0, spec.output_dim());
            Layout {
                input: None,
                blocks: Vec::new(),
                head,
                total: off,
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Masks {
    input: Vec<f64>,
    hidden: Vec<f64>,
    head: Vec<f64>,
}

impl Masks {
    fn new(spec: &WeightModelSpec) -> Self {
        let d = spec.data_dim;
        let h = spec.hidden_dim;
        if !spec.has_network() {
            return Masks {
                input: Vec::new(),
                hidden: Vec::new(),
                head: Vec::new(),
            };
        }
        let hidden_deg: Vec<usize> = (0..h)
            .map(|k| if d > 1 { k % (d - 1) + 1 } else { 1 })
            .collect();
        let allow = |ok: bool| if ok { 1.0 } else { 0.0 };
        let mut input = Vec::with_capacity(h * d);
        for &hd in &hidden_deg {
            for i in 0..d {
                input.push(allow(hd >= i + 1));
            }
        }
        let mut hidden = Vec::with_capacity(h * h);
        for &out_deg in &hidden_deg {
            for &in_deg in &hidden_deg {
                hidden.push(allow(out_deg >= in_deg));
            }
        }
        let mut head = Vec::with_capacity(spec.output_dim() * h);
        for o in 0..spec.output_dim() {
            let coord_deg = o / spec.params_per_dim + 1;
            for &hd in &hidden_deg {
                head.push(allow(coord_deg > hd));
            }
        }
        Masks {
            input,
            hidden,
            head,
        }
    }
}

/// Weight-model parameters `phi` (flat) together with their fixed masks.
#[derive(Debug, Clone)]
pub struct WeightModel {
    spec: WeightModelSpec,
    layout: Layout,
    masks: Masks,
    phi: Vec<f64>,
}

/// Values recorded by a forward pass, consumed by [`WeightModel::backward`].
#[derive(Debug, Clone)]
pub struct WeightModelTape {
    param_count: usize,
    x: Vec<f64>,
    /// Residual stream before each block and after the last one.
    stream: Vec<Vec<f64>>,
    /// Inner pre-activations `W1 relu(h) + b1` per block.
    inner: Vec<Vec<f64>>,
    /// Dropout multipliers per block (empty in eval mode).
    drop: Vec<Vec<f64>>,
}

impl WeightModel {
    /// Fan-in scaled uniform hidden weights, near-zero second block layers,
    /// zero head weights and the given output bias.
    pub fn init<R: Rng + ?Sized>(
        spec: WeightModelSpec,
        head_bias: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        if head_bias.len() != spec.output_dim() {
            return Err(NitsError::InvalidParameter(format!(
                "output bias has length {}, expected {}",
                head_bias.len(),
                spec.output_dim()
            )));
        }
        let layout = Layout::new(&spec);
        let masks = Masks::new(&spec);
        let mut phi = vec![0.0; layout.total];
        let fill = |phi: &mut [f64], d: &Dense, mask: &[f64], scale: f64, rng: &mut R| {
            for k in 0..d.n_in * d.n_out {
                let v: f64 = rng.gen_range(-scale..scale);
                phi[d.w + k] = if mask[k] == 0.0 { 0.0 } else { v };
            }
        };
        if let Some(input) = &layout.input {
            let bound = 1.0 / (input.n_in as f64).sqrt();
            fill(&mut phi, input, &masks.input, bound, rng);
            for (first, second) in &layout.blocks {
                let bound = 1.0 / (first.n_in as f64).sqrt();
                fill(&mut phi, first, &masks.hidden, bound, rng);
                fill(&mut phi, second, &masks.hidden, 1e-3, rng);
            }
        }
        phi[layout.head.b..layout.head.b + layout.head.n_out].copy_from_slice(head_bias);
        Ok(Self {
            spec,
            layout,
            masks,
            phi,
        })
    }

    /// Rebuilds a model from stored parameters. Masked-out entries are kept
    /// as given; masks are applied at every forward pass.
    pub fn from_phi(spec: WeightModelSpec, phi: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        if phi.len() != layout.total {
            return Err(NitsError::InvalidParameter(format!(
                "weight model expects {} parameters, got {}",
                layout.total,
                phi.len()
            )));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(NitsError::InvalidParameter(
                "non-finite weight-model parameter".into(),
            ));
        }
        let masks = Masks::new(&spec);
        Ok(Self {
            spec,
            layout,
            masks,
            phi,
        })
    }

    pub fn spec(&self) -> &WeightModelSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// Mutable parameter access. Forward passes always multiply by the
    /// masks, so edits to masked entries have no effect on outputs.
    pub fn phi_mut(&mut self) -> &mut [f64] {
        &mut self.phi
    }

    /// 1-based index of the dense layer that owns flat parameter `i`.
    pub fn layer_of(&self, i: usize) -> usize {
        let mut layers: Vec<Dense> = Vec::new();
        if let Some(input) = self.layout.input {
            layers.push(input);
        }
        for (a, b) in &self.layout.blocks {
            layers.push(*a);
            layers.push(*b);
        }
        layers.push(self.layout.head);
        layers
            .iter()
            .position(|d| i >= d.w && i < d.w + d.len())
            .map(|p| p + 1)
            .unwrap_or(layers.len())
    }

    /// Eval-mode forward pass (dropout off).
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, WeightModelTape)> {
        self.run(x, None::<&mut rand_chacha::ChaCha8Rng>, None)
    }

    /// Training-mode forward pass with dropout drawn from `rng`.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, WeightModelTape)> {
        self.run(x, Some(rng), None)
    }

    /// Eval-mode output slice for coordinate `coord` only.
    pub fn forward_slice(&self, x: &[f64], coord: usize) -> Result<Vec<f64>> {
        let (out, _) = self.run(x, None::<&mut rand_chacha::ChaCha8Rng>, Some(coord))?;
        Ok(out)
    }

    fn run<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        mut rng: Option<&mut R>,
        only: Option<usize>,
    ) -> Result<(Vec<f64>, WeightModelTape)> {
        let d = self.spec.data_dim;
        if x.len() != d {
            return Err(NitsError::InvalidParameter(format!(
                "weight model expects {d} inputs, got {}",
                x.len()
            )));
        }
        let p = self.spec.params_per_dim;
        let rows = match only {
            Some(c) => c * p..(c + 1) * p,
            None => 0..self.spec.output_dim(),
        };
        let head = &self.layout.head;
        let mut tape = WeightModelTape {
            param_count: self.layout.total,
            x: x.to_vec(),
            stream: Vec::new(),
            inner: Vec::new(),
            drop: Vec::new(),
        };

        let Some(input) = &self.layout.input else {
            let out = self.phi[head.b + rows.start..head.b + rows.end].to_vec();
            return Ok((out, tape));
        };

        let mut h = self.dense(input, &self.masks.input, x);
        let rate = self.spec.dropout_rate;
        for (first, second) in &self.layout.blocks {
            let r = relu(&h);
            let inner = self.dense(first, &self.masks.hidden, &r);
            let mut r2 = relu(&inner);
            if let (Some(rng), true) = (rng.as_deref_mut(), rate > 0.0) {
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..r2.len())
                    .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                r2.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                tape.drop.push(mask);
            }
            let delta = self.dense(second, &self.masks.hidden, &r2);
            tape.stream.push(h.clone());
            tape.inner.push(inner);
            for (hv, dv) in h.iter_mut().zip(&delta) {
                *hv += dv;
            }
        }
        let r = relu(&h);
        tape.stream.push(h);

        let mut out = Vec::with_capacity(rows.len());
        for o in rows {
            let w = &self.phi[head.w + o * head.n_in..head.w + (o + 1) * head.n_in];
            let m = &self.masks.head[o * head.n_in..(o + 1) * head.n_in];
            let mut acc = self.phi[head.b + o];
            for k in 0..head.n_in {
                acc += w[k] * m[k] * r[k];
            }
            out.push(acc);
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(NitsError::NumericalOverflow {
                layer: self.layout.blocks.len() * 2 + 2,
                what: format!("weight-model output {i} is not finite"),
            });
        }
        Ok((out, tape))
    }

    fn dense(&self, d: &Dense, mask: &[f64], x: &[f64]) -> Vec<f64> {
        (0..d.n_out)
            .map(|o| {
                let w = &self.phi[d.w + o * d.n_in..d.w + (o + 1) * d.n_in];
                let m = &mask[o * d.n_in..(o + 1) * d.n_in];
                let mut acc = self.phi[d.b + o];
                for k in 0..d.n_in {
                    acc += w[k] * m[k] * x[k];
                }
                acc
            })
            .collect()
    }

    /// Adds `d loss / d phi` into `acc` given `d loss / d output`.
    pub fn backward(
        &self,
        tape: &WeightModelTape,
        grad_out: &[f64],
        acc: &mut [f64],
    ) -> Result<()> {
        if tape.param_count != self.layout.total
            || tape.x.len() != self.spec.data_dim
            || grad_out.len() != self.spec.output_dim()
            || acc.len() != self.layout.total
            || tape.stream.len()
                != if self.layout.input.is_some() {
                    self.layout.blocks.len() + 1
                } else {
                    0
                }
        {
            return Err(NitsError::Usage(
                "weight-model tape or gradient does not match this model".into(),
            ));
        }
        let head = &self.layout.head;
        for (a, g) in acc[head.b..head.b + head.n_out].iter_mut().zip(grad_out) {
            *a += g;
        }
        let Some(input) = &self.layout.input else {
            return Ok(());
        };

        let last = tape.stream.last().unwrap();
        let r = relu(last);
        let mut g_r = vec![0.0; head.n_in];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let base = o * head.n_in;
            let w = &self.phi[head.w + base..head.w + base + head.n_in];
            let m = &self.masks.head[base..base + head.n_in];
            let gw = &mut acc[head.w + base..head.w + base + head.n_in];
            for k in 0..head.n_in {
                gw[k] += g * r[k] * m[k];
                g_r[k] += g * w[k] * m[k];
            }
        }
        let mut g_h: Vec<f64> = g_r
            .iter()
            .zip(last)
            .map(|(g, h)| if *h > 0.0 { *g } else { 0.0 })
            .collect();

        for (b, (first, second)) in self.layout.blocks.iter().enumerate().rev() {
            let h_in = &tape.stream[b];
            let inner = &tape.inner[b];
            let mut r2 = relu(inner);
            let drop = tape.drop.get(b);
            if let Some(mask) = drop {
                r2.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
            }
            let mut g_r2 = self.dense_backward(second, &self.masks.hidden, &r2, &g_h, acc);
            if let Some(mask) = drop {
                g_r2.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
            }
            let g_inner: Vec<f64> = g_r2
                .iter()
                .zip(inner)
                .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
                .collect();
            let r1 = relu(h_in);
            let g_r1 = self.dense_backward(first, &self.masks.hidden, &r1, &g_inner, acc);
            for ((gh, gr), hv) in g_h.iter_mut().zip(&g_r1).zip(h_in) {
                if *hv > 0.0 {
                    *gh += gr;
                }
            }
        }
        self.dense_backward(input, &self.masks.input, &tape.x, &g_h, acc);
        Ok(())
    }

    /// Accumulates parameter gradients of `y = (W * M) x + b` and returns
    /// `d loss / d x`.
    fn dense_backward(
        &self,
        d: &Dense,
        mask: &[f64],
        x: &[f64],
        g_y: &[f64],
        acc: &mut [f64],
    ) -> Vec<f64> {
        let mut g_x = vec![0.0; d.n_in];
        for (o, &g) in g_y.iter().enumerate() {
            acc[d.b + o] += g;
            if g == 0.0 {
                continue;
            }
            let base = o * d.n_in;
            let w = &self.phi[d.w + base..d.w + base + d.n_in];
            let m = &mask[base..base + d.n_in];
            let gw = &mut acc[d.w + base..d.w + base + d.n_in];
            for k in 0..d.n_in {
                gw[k] += g * x[k] * m[k];
                g_x[k] += g * w[k] * m[k];
            }
        }
        g_x
    }
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(d: usize, masking: Masking) -> WeightModelSpec {
        WeightModelSpec {
            data_dim: d,
            hidden_dim: 12,
            residual_blocks: 2,
            dropout_rate: 0.0,
            params_per_dim: 3,
            masking,
        }
    }

    fn random_model(d: usize, masking: Masking, seed: u64) -> WeightModel {
        let s = spec(d, masking);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bias: Vec<f64> = (0..s.output_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let mut wm = WeightModel::init(s, &bias, &mut rng).unwrap();
        // give every weight (head included) a nonzero value
        let phi: Vec<f64> = wm.phi().iter().map(|_| rng.gen_range(-0.5..0.5)).collect();
        wm = WeightModel::from_phi(wm.spec().clone(), phi).unwrap();
        wm
    }

    #[test]
    fn autoregressive_slices_ignore_later_inputs() {
        let d = 4;
        let wm = random_model(d, Masking::Autoregressive, 1);
        let p = wm.spec().params_per_dim;
        let x = vec![0.3, -1.2, 0.8, 2.0];
        let (base, _) = wm.forward(&x).unwrap();
        for j in 0..d {
            let mut y = x.clone();
            y[j] += 1.7;
            let (moved, _) = wm.forward(&y).unwrap();
            for c in 0..=j {
                assert_eq!(
                    base[c * p..(c + 1) * p],
                    moved[c * p..(c + 1) * p],
                    "slice {c} moved with x[{j}]"
                );
            }
            // some later slice must react
            if j + 1 < d {
                assert_ne!(base[(j + 1) * p..], moved[(j + 1) * p..]);
            }
        }
    }

    #[test]
    fn first_slice_is_bias() {
        let wm = random_model(3, Masking::Autoregressive, 2);
        let p = wm.spec().params_per_dim;
        let (a, _) = wm.forward(&[1.0, 2.0, 3.0]).unwrap();
        let (b, _) = wm.forward(&[-5.0, 0.0, 9.0]).unwrap();
        assert_eq!(a[..p], b[..p]);
        let head = wm.layout.head;
        assert_eq!(a[..p], wm.phi()[head.b..head.b + p]);
    }

    #[test]
    fn independent_is_constant() {
        let wm = random_model(3, Masking::Independent, 3);
        let (a, _) = wm.forward(&[1.0, 2.0, 3.0]).unwrap();
        let (b, _) = wm.forward(&[-5.0, 0.0, 9.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(wm.param_count(), 9);
    }

    #[test]
    fn slice_matches_full_output() {
        let wm = random_model(3, Masking::Autoregressive, 4);
        let x = [0.1, 0.2, -0.3];
        let (full, _) = wm.forward(&x).unwrap();
        for c in 0..3 {
            assert_eq!(wm.forward_slice(&x, c).unwrap(), full[c * 3..(c + 1) * 3]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let wm = random_model(3, Masking::Autoregressive, 5);
        let x = [0.4, -0.7, 1.1];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let weights: Vec<f64> = (0..wm.spec().output_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let objective = |m: &WeightModel| -> f64 {
            let (out, _) = m.forward(&x).unwrap();
            out.iter().zip(&weights).map(|(o, w)| o * w).sum()
        };
        let (_, tape) = wm.forward(&x).unwrap();
        let mut grad = vec![0.0; wm.param_count()];
        wm.backward(&tape, &weights, &mut grad).unwrap();
        for k in 0..wm.param_count() {
            let mut up = wm.clone();
            up.phi_mut()[k] += 1e-6;
            let mut dn = wm.clone();
            dn.phi_mut()[k] -= 1e-6;
            let fd = (objective(&up) - objective(&dn)) / 2e-6;
            assert!(
                (fd - grad[k]).abs() < 1e-6 * fd.abs().max(1.0),
                "param {k}: {fd} vs {}",
                grad[k]
            );
        }
    }

    #[test]
    fn masked_entries_never_receive_gradient() {
        let wm = random_model(3, Masking::Autoregressive, 7);
        let (_, tape) = wm.forward(&[0.5, 0.5, 0.5]).unwrap();
        let mut grad = vec![0.0; wm.param_count()];
        wm.backward(&tape, &vec![1.0; wm.spec().output_dim()], &mut grad)
            .unwrap();
        let head = wm.layout.head;
        for (k, m) in wm.masks.head.iter().enumerate() {
            if *m == 0.0 {
                assert_eq!(grad[head.w + k], 0.0);
            }
        }
    }

    #[test]
    fn dropout_changes_train_pass_only() {
        let mut s = spec(3, Masking::Autoregressive);
        s.dropout_rate = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let wm = WeightModel::init(s.clone(), &vec![0.0; s.output_dim()], &mut rng).unwrap();
        let phi: Vec<f64> = wm.phi().iter().map(|_| rng.gen_range(-0.5..0.5)).collect();
        let wm = WeightModel::from_phi(s, phi).unwrap();
        let x = [0.2, 0.4, 0.6];
        assert_eq!(wm.forward(&x).unwrap().0, wm.forward(&x).unwrap().0);
        let (t1, _) = wm
            .forward_train(&x, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let (t2, _) = wm
            .forward_train(&x, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn rejects_mismatched_tape() {
        let a = random_model(3, Masking::Autoregressive, 9);
        let b = random_model(2, Masking::Autoregressive, 9);
        let (_, tape) = b.forward(&[0.0, 0.0]).unwrap();
        let mut grad = vec![0.0; a.param_count()];
        assert!(matches!(
            a.backward(&tape, &vec![0.0; a.spec().output_dim()], &mut grad),
            Err(NitsError::Usage(_))
        ));
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(2, Masking::Autoregressive);
        s.dropout_rate = 1.0;
        assert!(s.validate().is_err());
        s.dropout_rate = 0.1;
        s.data_dim = 0;
        assert!(s.validate().is_err());
        assert!("bogus".parse::<Masking>().is_err());
    }
}
