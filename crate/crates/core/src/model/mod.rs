//! Multi-dimensional NITS: per-coordinate PNN conditionals whose raw
//! parameters come from a causally masked weight model.
//!
//! The joint log-density is `sum_i log pdf_i(x_i | x_<i)`. Internally every
//! coordinate lives in standardized units `u = (x - shift) / scale`; public
//! entry points take and return original units and include the
//! change-of-variables term `-sum ln scale`.

pub mod checkpoint;
pub mod weights;

use rand::Rng;

use crate::data::Standardization;
use crate::error::{NitsError, Result};
use crate::grad::accumulate_loss_grad;
use crate::pnn::{Bounds, Pnn, PnnParams, PnnSpec};
pub use weights::{Masking, WeightModel, WeightModelSpec, WeightModelTape};

const BOUND_SLACK: f64 = 1e-12;

/// Shape of the weight model, minus what follows from the data and the PNN.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightModelConfig {
    pub hidden_dim: usize,
    pub residual_blocks: usize,
    pub dropout_rate: f64,
    pub masking: Masking,
}

impl Default for WeightModelConfig {
    /// The smallest of the tabular configurations: 128 hidden units,
    /// 8 residual blocks, dropout 0.1.
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            residual_blocks: 8,
            dropout_rate: 0.1,
            masking: Masking::Autoregressive,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NitsModel {
    specs: Vec<PnnSpec>,
    wm: WeightModel,
    transform: Standardization,
    seed: u64,
}

impl NitsModel {
    /// Initializes a model. `bounds` are in standardized units; the weight
    /// model head starts at zero with its bias set to the reference PNN of
    /// each coordinate.
    pub fn new(
        widths: &[usize],
        bounds: Vec<Bounds>,
        config: &WeightModelConfig,
        transform: Standardization,
        seed: u64,
    ) -> Result<Self> {
        let d = bounds.len();
        if d == 0 || transform.dims() != d {
            return Err(NitsError::InvalidParameter(format!(
                "{d} bounds do not match a {}-dimensional standardization",
                transform.dims()
            )));
        }
        let specs = bounds
            .iter()
            .map(|&b| PnnSpec::new(widths.to_vec(), b))
            .collect::<Result<Vec<_>>>()?;
        let params_per_dim = specs[0].param_count();
        let wm_spec = WeightModelSpec {
            data_dim: d,
            hidden_dim: config.hidden_dim,
            residual_blocks: config.residual_blocks,
            dropout_rate: config.dropout_rate,
            params_per_dim,
            masking: config.masking,
        };
        let head_bias: Vec<f64> = specs
            .iter()
            .flat_map(|s| PnnParams::reference(s).into_vec())
            .collect();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let wm = WeightModel::init(wm_spec, &head_bias, &mut rng)?;
        Ok(Self {
            specs,
            wm,
            transform,
            seed,
        })
    }

    /// Model sized for `ds` in original units: standardization fitted on the
    /// training split, bounds mapped from the dataset bounds.
    pub fn for_dataset(
        ds: &crate::data::Dataset,
        widths: &[usize],
        config: &WeightModelConfig,
        seed: u64,
    ) -> Result<Self> {
        let (_, transform) = crate::data::standardize(ds)?;
        let bounds = ds
            .bounds()
            .iter()
            .enumerate()
            .map(|(c, &b)| transform.map_bounds(c, b))
            .collect::<Result<Vec<_>>>()?;
        Self::new(widths, bounds, config, transform, seed)
    }

    pub(crate) fn from_parts(
        specs: Vec<PnnSpec>,
        wm: WeightModel,
        transform: Standardization,
        seed: u64,
    ) -> Result<Self> {
        let d = specs.len();
        if d == 0
            || wm.spec().data_dim != d
            || transform.dims() != d
            || wm.spec().params_per_dim != specs[0].param_count()
        {
            return Err(NitsError::InvalidParameter(
                "inconsistent model dimensions".into(),
            ));
        }
        Ok(Self {
            specs,
            wm,
            transform,
            seed,
        })
    }

    pub fn dims(&self) -> usize {
        self.specs.len()
    }

    pub fn widths(&self) -> &[usize] {
        self.specs[0].widths()
    }

    /// PNN spec (standardized bounds) of coordinate `i`.
    pub fn pnn_spec(&self, i: usize) -> &PnnSpec {
        &self.specs[i]
    }

    /// Standardized-unit bounds.
    pub fn bounds(&self) -> Vec<Bounds> {
        self.specs.iter().map(|s| s.bounds()).collect()
    }

    /// Bounds mapped back to original units.
    pub fn data_bounds(&self) -> Vec<Bounds> {
        self.specs
            .iter()
            .enumerate()
            .map(|(c, s)| {
                self.transform
                    .unmap_bounds(c, s.bounds())
                    .expect("positive scale")
            })
            .collect()
    }

    pub fn weight_model(&self) -> &WeightModel {
        &self.wm
    }

    pub fn weight_model_mut(&mut self) -> &mut WeightModel {
        &mut self.wm
    }

    pub fn transform(&self) -> &Standardization {
        &self.transform
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn masking(&self) -> Masking {
        self.wm.spec().masking
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims() {
            return Err(NitsError::InvalidParameter(format!(
                "expected a {}-dimensional point, got {}",
                self.dims(),
                x.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(NitsError::Domain(format!("coordinate {i} is not finite")));
        }
        Ok(())
    }

    /// Maps to standardized units and checks every coordinate is in bounds.
    /// Values within round-off of a bound are snapped onto it.
    pub fn to_model_coords(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut u = self.transform.apply(x);
        for (i, (v, s)) in u.iter_mut().zip(&self.specs).enumerate() {
            let b = s.bounds();
            let slack = BOUND_SLACK * b.width();
            if *v < b.lo && *v >= b.lo - slack {
                *v = b.lo;
            } else if *v > b.hi && *v <= b.hi + slack {
                *v = b.hi;
            }
            if !b.contains(*v) {
                return Err(NitsError::Domain(format!(
                    "coordinate {i} = {} is outside the model bounds {:?}",
                    x[i],
                    self.data_bounds()[i]
                )));
            }
        }
        Ok(u)
    }

    pub fn from_model_coords(&self, u: &[f64]) -> Vec<f64> {
        self.transform.invert(u)
    }

    /// Raw PNN parameters of every coordinate at `x` (original units).
    /// Eval mode: no dropout, deterministic.
    pub fn emit_theta(&self, x: &[f64]) -> Result<Vec<PnnParams>> {
        self.check_len(x)?;
        let u = self.transform.apply(x);
        let (out, _) = self.wm.forward(&u)?;
        self.split_theta(&out)
    }

    fn split_theta(&self, out: &[f64]) -> Result<Vec<PnnParams>> {
        out.chunks(self.wm.spec().params_per_dim)
            .zip(&self.specs)
            .map(|(c, s)| PnnParams::from_flat(s, c.to_vec()))
            .collect()
    }

    /// Conditional PNN of coordinate `i` given standardized `u` (only
    /// `u[..i]` matters).
    pub fn conditional(&self, u: &[f64], i: usize) -> Result<Pnn> {
        let raw = self.wm.forward_slice(u, i)?;
        Pnn::from_raw(&self.specs[i], &raw)
    }

    /// All conditionals at standardized `u`.
    pub fn conditionals(&self, u: &[f64]) -> Result<Vec<Pnn>> {
        let (out, _) = self.wm.forward(u)?;
        out.chunks(self.wm.spec().params_per_dim)
            .zip(&self.specs)
            .map(|(c, s)| Pnn::from_raw(s, c))
            .collect()
    }

    /// Per-coordinate conditional log-densities in original units.
    pub fn coordinate_log_densities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let u = self.to_model_coords(x)?;
        let pnns = self.conditionals(&u)?;
        pnns.iter()
            .zip(&u)
            .zip(&self.transform.scale)
            .map(|((p, &v), s)| Ok(p.log_pdf(v)? - s.ln()))
            .collect()
    }

    /// Joint log-density at `x` in original units.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        Ok(self.coordinate_log_densities(x)?.iter().sum())
    }

    /// Joint log-pmf of a quantized point: each coordinate's level owns the
    /// bin `[v - q/2, v + q/2)`, with the outermost bins extended to the
    /// model bounds.
    pub fn discretized_log_pmf(&self, x: &[f64], grid: &QuantGrid) -> Result<f64> {
        Ok(self.discretized_pmfs(x, grid)?.iter().map(|p| p.ln()).sum())
    }

    /// Per-coordinate conditional bin masses for a quantized point.
    pub fn discretized_pmfs(&self, x: &[f64], grid: &QuantGrid) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut edges = Vec::with_capacity(self.dims());
        for (i, &v) in x.iter().enumerate() {
            let level = grid.level_of(v).ok_or_else(|| {
                NitsError::Domain(format!(
                    "coordinate {i} = {v} is not on the quantization grid"
                ))
            })?;
            edges.push(self.bin_edges(i, level, grid)?);
        }
        let u = self.transform.apply(x);
        let pnns = self.conditionals(&u)?;
        pnns.iter()
            .zip(&edges)
            .map(|(p, &(lo, hi))| p.mass_between(lo, hi))
            .collect()
    }

    /// Standardized-unit edges of `level` for coordinate `i`.
    pub(crate) fn bin_edges(&self, i: usize, level: usize, grid: &QuantGrid) -> Result<(f64, f64)> {
        let b = self.specs[i].bounds();
        let (m, s) = (self.transform.shift[i], self.transform.scale[i]);
        let v = grid.value(level);
        let lo = if level == 0 {
            b.lo
        } else {
            (v - 0.5 * grid.step - m) / s
        };
        let hi = if level + 1 == grid.levels {
            b.hi
        } else {
            (v + 0.5 * grid.step - m) / s
        };
        for e in [lo, hi] {
            if !b.contains(e) {
                return Err(NitsError::Domain(format!(
                    "bin edge of level {level} in coordinate {i} falls outside the model bounds"
                )));
            }
        }
        Ok((lo, hi))
    }

    /// Loss `-sum_i log pdf_i(u_i)` in standardized units, with
    /// `d loss / d phi` added into `acc`. Dropout is applied when `rng` is
    /// given. Returns the loss and the number of clamped PNN weights.
    pub fn accumulate_grad<R: Rng + ?Sized>(
        &self,
        u: &[f64],
        rng: Option<&mut R>,
        acc: &mut [f64],
    ) -> Result<(f64, u64)> {
        let (theta, tape) = match rng {
            Some(r) => self.wm.forward_train(u, r)?,
            None => self.wm.forward(u)?,
        };
        let p = self.wm.spec().params_per_dim;
        let mut g_theta = vec![0.0; theta.len()];
        let mut loss = 0.0;
        let mut clamps = 0;
        for (i, spec) in self.specs.iter().enumerate() {
            let pnn = Pnn::from_raw(spec, &theta[i * p..(i + 1) * p])?;
            clamps += pnn.clamp_count();
            loss += accumulate_loss_grad(&pnn, u[i], &mut g_theta[i * p..(i + 1) * p])?;
        }
        self.wm.backward(&tape, &g_theta, acc)?;
        Ok((loss, clamps))
    }
}

/// Uniform quantization grid shared by every coordinate: levels
/// `origin + k * step` for `k = 0..levels`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantGrid {
    pub origin: f64,
    pub step: f64,
    pub levels: usize,
}

impl QuantGrid {
    pub fn new(origin: f64, step: f64, levels: usize) -> Result<Self> {
        if !(step > 0.0 && step.is_finite() && origin.is_finite()) || levels == 0 {
            return Err(NitsError::InvalidParameter(
                "quantization grid needs a finite origin, positive step and at least one level"
                    .into(),
            ));
        }
        Ok(Self {
            origin,
            step,
            levels,
        })
    }

    pub fn value(&self, level: usize) -> f64 {
        self.origin + level as f64 * self.step
    }

    pub fn level_of(&self, v: f64) -> Option<usize> {
        let k = ((v - self.origin) / self.step).round();
        if !(k >= 0.0 && k < self.levels as f64) {
            return None;
        }
        let k = k as usize;
        ((v - self.value(k)).abs() <= 1e-9 * self.step).then_some(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{simpson, simpson_adaptive};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(masking: Masking) -> WeightModelConfig {
        WeightModelConfig {
            hidden_dim: 16,
            residual_blocks: 1,
            dropout_rate: 0.0,
            masking,
        }
    }

    /// Model with every weight-model parameter randomized so conditionals
    /// genuinely depend on ancestors.
    pub(crate) fn random_model(d: usize, masking: Masking, seed: u64) -> NitsModel {
        let bounds = vec![Bounds::new(-3.0, 3.0).unwrap(); d];
        let m = NitsModel::new(
            &[1, 6, 6, 1],
            bounds,
            &small_config(masking),
            Standardization::identity(d),
            seed,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let wm = m.weight_model();
        let phi: Vec<f64> = wm
            .phi()
            .iter()
            .map(|v| v + rng.gen_range(-0.05..0.05))
            .collect();
        let wm = WeightModel::from_phi(wm.spec().clone(), phi).unwrap();
        NitsModel::from_parts(m.specs.clone(), wm, m.transform.clone(), seed).unwrap()
    }

    #[test]
    fn one_dim_matches_pnn() {
        let m = random_model(1, Masking::Autoregressive, 1);
        let theta = m.emit_theta(&[0.3]).unwrap();
        let direct = crate::pnn::log_pdf(m.pnn_spec(0), &theta[0], 0.3).unwrap();
        assert_eq!(m.log_likelihood(&[0.3]).unwrap(), direct);
    }

    #[test]
    fn independent_factorizes() {
        let m = random_model(2, Masking::Independent, 2);
        let t = m.emit_theta(&[0.0, 0.0]).unwrap();
        let x = [0.7, -1.1];
        let expected = crate::pnn::log_pdf(m.pnn_spec(0), &t[0], x[0]).unwrap()
            + crate::pnn::log_pdf(m.pnn_spec(1), &t[1], x[1]).unwrap();
        assert!((m.log_likelihood(&x).unwrap() - expected).abs() < 1e-14);
        assert_eq!(m.emit_theta(&[2.0, -2.0]).unwrap(), t);
    }

    #[test]
    fn autoregressive_causality() {
        let m = random_model(3, Masking::Autoregressive, 3);
        let x = [0.2, -0.4, 1.0];
        let base = m.emit_theta(&x).unwrap();
        for j in 0..3 {
            let mut y = x;
            y[j] -= 0.9;
            let moved = m.emit_theta(&y).unwrap();
            for i in 0..=j {
                assert_eq!(base[i], moved[i]);
            }
        }
        assert_ne!(base[2], m.emit_theta(&[0.0, -0.4, 1.0]).unwrap()[2]);
    }

    #[test]
    fn factorization_matches_explicit_sum() {
        let m = random_model(3, Masking::Autoregressive, 4);
        let x = [0.5, 1.5, -2.5];
        let theta = m.emit_theta(&x).unwrap();
        let explicit: f64 = (0..3)
            .map(|i| crate::pnn::log_pdf(m.pnn_spec(i), &theta[i], x[i]).unwrap())
            .sum();
        assert!((m.log_likelihood(&x).unwrap() - explicit).abs() < 1e-13);
    }

    #[test]
    fn out_of_bounds_names_coordinate() {
        let m = random_model(2, Masking::Autoregressive, 5);
        let err = m.log_likelihood(&[0.0, 3.5]).unwrap_err().to_string();
        assert!(err.contains("coordinate 1"), "{err}");
    }

    #[test]
    fn joint_integrates_to_one() {
        let m = random_model(2, Masking::Autoregressive, 6);
        let z = simpson(
            |a| simpson(|b| m.log_likelihood(&[a, b]).unwrap().exp(), -3.0, 3.0, 200),
            -3.0,
            3.0,
            200,
        );
        assert!((z - 1.0).abs() < 1e-3, "{z}");
    }

    #[test]
    fn standardization_shifts_log_density() {
        let bounds = vec![Bounds::new(-3.0, 3.0).unwrap()];
        let cfg = small_config(Masking::Autoregressive);
        let plain = NitsModel::new(
            &[1, 4, 1],
            bounds.clone(),
            &cfg,
            Standardization::identity(1),
            7,
        )
        .unwrap();
        let t = Standardization::new(vec![10.0], vec![2.5]).unwrap();
        let scaled = NitsModel::new(&[1, 4, 1], bounds, &cfg, t, 7).unwrap();
        let lp_u = plain.log_likelihood(&[0.4]).unwrap();
        let lp_x = scaled.log_likelihood(&[10.0 + 2.5 * 0.4]).unwrap();
        assert!((lp_x - (lp_u - 2.5f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn pmf_telescopes_and_matches_quadrature() {
        let m = random_model(2, Masking::Autoregressive, 8);
        let grid = QuantGrid::new(-2.55, 0.02, 256).unwrap();
        let ancestor = grid.value(100);
        let mut total = 0.0;
        let u = m.transform().apply(&[ancestor, 0.0]);
        let pnn = m.conditional(&u, 1).unwrap();
        for k in 0..grid.levels {
            let pmfs = m
                .discretized_pmfs(&[ancestor, grid.value(k)], &grid)
                .unwrap();
            assert!(pmfs[1] > 0.0 && pmfs[1] < 1.0);
            total += pmfs[1];
            if k % 37 == 0 {
                let (lo, hi) = m.bin_edges(1, k, &grid).unwrap();
                let q = simpson_adaptive(|t| pnn.pdf(t).unwrap(), lo, hi);
                assert!((q - pmfs[1]).abs() < 1e-8, "level {k}: {q} vs {}", pmfs[1]);
            }
        }
        assert!((total - 1.0).abs() < 1e-10, "{total}");
    }

    #[test]
    fn single_level_grid_has_full_mass() {
        let m = random_model(1, Masking::Autoregressive, 9);
        let grid = QuantGrid::new(0.0, 6.0, 1).unwrap();
        assert_eq!(m.discretized_log_pmf(&[0.0], &grid).unwrap(), 0.0);
    }

    #[test]
    fn off_grid_value_is_rejected() {
        let m = random_model(1, Masking::Autoregressive, 10);
        let grid = QuantGrid::new(0.0, 0.5, 4).unwrap();
        assert!(matches!(
            m.discretized_log_pmf(&[0.25], &grid),
            Err(NitsError::Domain(_))
        ));
        assert!(matches!(
            m.discretized_log_pmf(&[2.0], &grid),
            Err(NitsError::Domain(_))
        ));
    }

    #[test]
    fn accumulate_grad_loss_matches_likelihood() {
        let m = random_model(2, Masking::Autoregressive, 11);
        let x = [0.1, 0.2];
        let mut acc = vec![0.0; m.weight_model().param_count()];
        let (loss, _) = m
            .accumulate_grad(&x, None::<&mut ChaCha8Rng>, &mut acc)
            .unwrap();
        assert!((loss + m.log_likelihood(&x).unwrap()).abs() < 1e-13);
    }
}
