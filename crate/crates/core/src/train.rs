//! Maximum-likelihood training of the weight model with minibatch Adam,
//! global-norm clipping and early stopping on validation NLL.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, Split};
use crate::error::{NitsError, Result};
use crate::model::NitsModel;

const MAX_CONSECUTIVE_BAD_BATCHES: usize = 10;
/// Rows per partial gradient sum. Partials are combined in index order, so
/// results do not depend on the thread count.
const REDUCTION_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 2e-4,
            patience: 5,
            max_epochs: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("eps", self.eps),
            ("clip_norm", self.clip_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NitsError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(NitsError::InvalidParameter(
                "batch_size, patience and max_epochs must be >= 1".into(),
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(NitsError::InvalidParameter(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Eval-mode mean NLL (nats, original units) on the training split.
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Epoch 0 is the untrained model.
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub clamps: u64,
    pub skipped_batches: usize,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// Equality on everything except wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.epochs == other.epochs
            && self.best_epoch == other.best_epoch
            && self.best_val_nll.to_bits() == other.best_val_nll.to_bits()
            && self.clamps == other.clamps
            && self.skipped_batches == other.skipped_batches
    }
}

impl fmt::Display for TrainReport {
    /// One `key=value` record per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.epochs {
            writeln!(
                f,
                "epoch={} train_nll={:?} val_nll={:?}",
                e.epoch, e.train_nll, e.val_nll
            )?;
        }
        writeln!(
            f,
            "best_epoch={} best_val_nll={:?} clamps={} skipped_batches={} wall_clock_secs={:.3}",
            self.best_epoch,
            self.best_val_nll,
            self.clamps,
            self.skipped_batches,
            self.wall_clock_secs
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllReport {
    /// Mean negative log-likelihood per datum, in nats.
    pub nats: f64,
    pub bits_per_dim: f64,
    pub count: usize,
    /// Points outside the model bounds, left out of the mean.
    pub excluded: usize,
}

pub fn nats_to_bits_per_dim(nats: f64, dims: usize) -> f64 {
    nats * std::f64::consts::LOG2_E / dims as f64
}

/// Mean NLL over `rows` (original units). Out-of-bounds rows are counted and
/// skipped; any other failure is returned.
pub fn evaluate_rows(model: &NitsModel, rows: &[&[f64]]) -> Result<NllReport> {
    let results: Vec<Option<f64>> = rows
        .par_iter()
        .map(|x| match model.log_likelihood(x) {
            Ok(lp) => Ok(Some(-lp)),
            Err(NitsError::Domain(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = results.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(NitsError::Domain(
            "no evaluation point lies inside the model bounds".into(),
        ));
    }
    let nats = kept.iter().sum::<f64>() / kept.len() as f64;
    Ok(NllReport {
        nats,
        bits_per_dim: nats_to_bits_per_dim(nats, model.dims()),
        count: kept.len(),
        excluded: rows.len() - kept.len(),
    })
}

pub fn evaluate_nll(model: &NitsModel, ds: &Dataset, split: Split) -> Result<NllReport> {
    evaluate_rows(model, &ds.rows(split))
}

/// Fits the weight model by minimizing mean NLL on the training split and
/// returns the parameters from the best validation epoch.
pub fn fit(model: NitsModel, ds: &Dataset, cfg: &TrainConfig) -> Result<(NitsModel, TrainReport)> {
    cfg.validate()?;
    if ds.dims() != model.dims() {
        return Err(NitsError::InvalidParameter(format!(
            "dataset has {} columns, model has {} dimensions",
            ds.dims(),
            model.dims()
        )));
    }
    let start = Instant::now();

    let mut train_idx = ds.indices(Split::Train);
    let mut val_idx = ds.indices(Split::Val);
    if val_idx.is_empty() {
        // carve 10% off the training split
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(3);
        train_idx.shuffle(&mut rng);
        let n_val = (train_idx.len() / 10).max(1);
        val_idx = train_idx.split_off(train_idx.len() - n_val);
    }
    if train_idx.is_empty() {
        return Err(NitsError::InvalidParameter(
            "training split is empty".into(),
        ));
    }
    let train_u: Vec<Vec<f64>> = train_idx
        .iter()
        .map(|&i| model.to_model_coords(ds.row(i)))
        .collect::<Result<_>>()?;
    let train_rows: Vec<&[f64]> = train_idx.iter().map(|&i| ds.row(i)).collect();
    let val_rows: Vec<&[f64]> = val_idx.iter().map(|&i| ds.row(i)).collect();

    let mut model = model;
    let n_params = model.weight_model().param_count();
    let mut adam = Adam::new(n_params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);

    let mut epochs = Vec::new();
    let initial = EpochStats {
        epoch: 0,
        train_nll: evaluate_rows(&model, &train_rows)?.nats,
        val_nll: evaluate_rows(&model, &val_rows)?.nats,
    };
    let mut best_epoch = 0;
    let mut best_val = initial.val_nll;
    let mut best_phi = model.weight_model().phi().to_vec();
    epochs.push(initial);

    let mut clamps = 0;
    let mut skipped = 0;
    let mut consecutive_bad = 0;
    let mut order: Vec<usize> = (0..train_u.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(epoch as u64);
        order.shuffle(&mut shuffle_rng);

        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let batch_seed = cfg
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(((epoch as u64) << 32) | b as u64);
            match batch_gradient(&model, &train_u, batch, batch_seed, n_params) {
                Ok((mut grad, _loss, c)) => {
                    clamps += c;
                    consecutive_bad = 0;
                    clip_global_norm(&mut grad, cfg.clip_norm);
                    adam.step(model.weight_model_mut().phi_mut(), &grad);
                }
                Err(_) => {
                    skipped += 1;
                    consecutive_bad += 1;
                    if consecutive_bad >= MAX_CONSECUTIVE_BAD_BATCHES {
                        return Err(NitsError::Diverged {
                            consecutive: consecutive_bad,
                            epoch,
                        });
                    }
                }
            }
        }

        let train_nll = evaluate_rows(&model, &train_rows)
            .map(|r| r.nats)
            .unwrap_or(f64::NAN);
        let val_nll = evaluate_rows(&model, &val_rows)
            .map(|r| r.nats)
            .unwrap_or(f64::NAN);
        epochs.push(EpochStats {
            epoch,
            train_nll,
            val_nll,
        });
        if val_nll < best_val {
            best_val = val_nll;
            best_epoch = epoch;
            best_phi.copy_from_slice(model.weight_model().phi());
        }
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    model
        .weight_model_mut()
        .phi_mut()
        .copy_from_slice(&best_phi);
    let report = TrainReport {
        epochs,
        best_epoch,
        best_val_nll: best_val,
        clamps,
        skipped_batches: skipped,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Mean gradient and loss over `batch`. Each row gets its own dropout stream.
fn batch_gradient(
    model: &NitsModel,
    data: &[Vec<f64>],
    batch: &[usize],
    seed: u64,
    n_params: usize,
) -> Result<(Vec<f64>, f64, u64)> {
    let partials: Vec<(Vec<f64>, f64, u64)> = batch
        .par_chunks(REDUCTION_CHUNK)
        .enumerate()
        .map(|(c, rows)| {
            let mut acc = vec![0.0; n_params];
            let mut loss = 0.0;
            let mut clamps = 0;
            for (k, &r) in rows.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((c * REDUCTION_CHUNK + k) as u64);
                let (l, cl) = model.accumulate_grad(&data[r], Some(&mut rng), &mut acc)?;
                loss += l;
                clamps += cl;
            }
            Ok((acc, loss, clamps))
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; n_params];
    let mut loss = 0.0;
    let mut clamps = 0;
    for (g, l, c) in partials {
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        loss += l;
        clamps += c;
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(NitsError::NumericalOverflow {
            layer: 0,
            what: "non-finite batch loss or gradient".into(),
        });
    }
    Ok((grad, loss / n, clamps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Standardization;
    use crate::model::{Masking, WeightModelConfig};
    use crate::pnn::Bounds;

    #[test]
    fn adam_single_step_by_hand() {
        let mut p = vec![1.0, -2.0];
        let g = vec![0.5, -0.1];
        let mut adam = Adam::new(2, 0.1, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &g);
        // after one step m_hat = g and v_hat = g^2, so the update is lr * g / (|g| + eps)
        let expect = [
            1.0 - 0.1 * 0.5 / (0.5 + 1e-8),
            -2.0 + 0.1 * 0.1 / (0.1 + 1e-8),
        ];
        assert!((p[0] - expect[0]).abs() < 1e-15 && (p[1] - expect[1]).abs() < 1e-15);

        // second step by hand
        adam.step(&mut p, &[0.2, 0.3]);
        let m0 = 0.9 * 0.05 + 0.1 * 0.2;
        let v0 = 0.999 * 0.001 * 0.25 + 0.001 * 0.04;
        let upd0 = 0.1 * (m0 / (1.0 - 0.81)) / ((v0 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p[0] - (expect[0] - upd0)).abs() < 1e-14);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut h = vec![0.3, 0.4];
        clip_global_norm(&mut h, 1.0);
        assert_eq!(h, vec![0.3, 0.4]);
    }

    #[test]
    fn bits_per_dim_conversion() {
        assert!((nats_to_bits_per_dim(1.0, 1) - 1.4427).abs() < 1e-4);
        assert!((nats_to_bits_per_dim(2.0, 2) - 1.4427).abs() < 1e-4);
    }

    fn one_dim_model(widths: &[usize]) -> NitsModel {
        let cfg = WeightModelConfig {
            hidden_dim: 8,
            residual_blocks: 1,
            dropout_rate: 0.0,
            masking: Masking::Autoregressive,
        };
        NitsModel::new(
            widths,
            vec![Bounds::new(-2.0, 2.0).unwrap()],
            &cfg,
            Standardization::identity(1),
            0,
        )
        .unwrap()
    }

    #[test]
    fn evaluate_is_hand_summed_mean() {
        let m = one_dim_model(&[1, 4, 1]);
        let pts = [[-1.0], [0.25], [1.5]];
        let rows: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
        let r = evaluate_rows(&m, &rows).unwrap();
        let hand = -(m.log_likelihood(&[-1.0]).unwrap()
            + m.log_likelihood(&[0.25]).unwrap()
            + m.log_likelihood(&[1.5]).unwrap())
            / 3.0;
        assert!((r.nats - hand).abs() < 1e-14);
        assert_eq!((r.count, r.excluded), (3, 0));

        let doubled: Vec<&[f64]> = rows.iter().chain(rows.iter()).copied().collect();
        assert!((evaluate_rows(&m, &doubled).unwrap().nats - r.nats).abs() < 1e-14);

        let with_outlier: Vec<&[f64]> = rows.iter().copied().chain([&[9.0][..]]).collect();
        let r2 = evaluate_rows(&m, &with_outlier).unwrap();
        assert_eq!((r2.count, r2.excluded), (3, 1));
    }

    #[test]
    fn single_datum_overfit_is_monotone() {
        let m = one_dim_model(&[1, 8, 8, 1]);
        let u = vec![vec![0.7]];
        let n = m.weight_model().param_count();
        let mut adam = Adam::new(n, 1e-2, 0.9, 0.999, 1e-8);
        let mut model = m;
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let (grad, loss, _) = batch_gradient(&model, &u, &[0], 0, n).unwrap();
            assert!(loss < last, "loss went up: {loss} >= {last}");
            last = loss;
            adam.step(model.weight_model_mut().phi_mut(), &grad);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.patience = 0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            beta2: 1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
