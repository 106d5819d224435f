//! Inverse-transform sampling by bisection.
//!
//! Each PNN cdf is strictly increasing, so `min{x : cdf(x) >= z}` is a single
//! point and bisection on `[lo, hi]` brackets it in
//! `ceil(log2((hi - lo) / eps))` steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{NitsError, Result};
use crate::model::NitsModel;
use crate::pnn::{Bounds, Pnn, PnnParams, PnnSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionConfig {
    /// Final bracket width, in x units.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl InversionConfig {
    /// `eps = 1e-10 * (hi - lo)`, 64 iterations.
    pub fn for_bounds(bounds: Bounds) -> Self {
        Self {
            tolerance: 1e-10 * bounds.width(),
            max_iters: 64,
        }
    }

    /// Iterations bisection needs to shrink `bounds` below the tolerance.
    pub fn required_iters(&self, bounds: Bounds) -> usize {
        (bounds.width() / self.tolerance).log2().ceil().max(0.0) as usize
    }

    pub fn validate(&self, bounds: Bounds) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(NitsError::InvalidParameter(format!(
                "inversion tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        let need = self.required_iters(bounds);
        if self.max_iters < need {
            return Err(NitsError::InvalidParameter(format!(
                "max_iters = {} cannot reach tolerance {} on width {} (needs {need})",
                self.max_iters,
                self.tolerance,
                bounds.width()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub x: f64,
    pub iters: usize,
}

/// Bisection for `min{x in bounds : cdf(x) >= z}`; returns the midpoint of
/// the final bracket.
pub fn monotonic_inverse<F>(
    cdf: F,
    bounds: Bounds,
    z: f64,
    cfg: &InversionConfig,
) -> Result<Inversion>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(0.0..=1.0).contains(&z) {
        return Err(NitsError::Domain(format!(
            "target probability {z} is outside [0, 1]"
        )));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(NitsError::InvalidParameter(
            "inversion tolerance must be positive".into(),
        ));
    }
    let (mut lo, mut hi) = (bounds.lo, bounds.hi);
    let mut iters = 0;
    while hi - lo > cfg.tolerance {
        if iters == cfg.max_iters {
            return Err(NitsError::Convergence { iters, lo, hi });
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // bracket reached float resolution
            break;
        }
        if cdf(mid)? >= z {
            hi = mid;
        } else {
            lo = mid;
        }
        iters += 1;
    }
    Ok(Inversion {
        x: 0.5 * (lo + hi),
        iters,
    })
}

/// Inverts a prepared PNN at probability `z`.
pub fn invert_pnn(pnn: &Pnn, z: f64, cfg: &InversionConfig) -> Result<Inversion> {
    monotonic_inverse(|x| pnn.cdf_unchecked(x), pnn.bounds(), z, cfg)
}

/// One draw `x = cdf^-1(z)` with `z ~ Unif[0, 1)`.
pub fn sample_1d<R: Rng + ?Sized>(
    spec: &PnnSpec,
    params: &PnnParams,
    rng: &mut R,
    cfg: &InversionConfig,
) -> Result<f64> {
    let pnn = Pnn::new(spec, params)?;
    sample_pnn(&pnn, rng, cfg)
}

pub fn sample_pnn<R: Rng + ?Sized>(pnn: &Pnn, rng: &mut R, cfg: &InversionConfig) -> Result<f64> {
    let z: f64 = rng.gen();
    Ok(invert_pnn(pnn, z, cfg)?.x)
}

/// Ancestral sampling of one row, in original units.
///
/// `start` holds the initial row buffer in standardized units; coordinate
/// `i` is drawn from the conditional computed on the buffer as it stands at
/// step `i`, so only `start[..i]`-overwritten values can influence it.
pub fn sample_row_from<R: Rng + ?Sized>(
    model: &NitsModel,
    start: &[f64],
    rng: &mut R,
    cfg: Option<InversionConfig>,
) -> Result<Vec<f64>> {
    let d = model.dims();
    if start.len() != d {
        return Err(NitsError::InvalidParameter(format!(
            "row buffer has {} entries, model has {d} dimensions",
            start.len()
        )));
    }
    let mut u = start.to_vec();
    for i in 0..d {
        let pnn = model.conditional(&u, i)?;
        let cfg = cfg.unwrap_or_else(|| InversionConfig::for_bounds(pnn.bounds()));
        cfg.validate(pnn.bounds())?;
        u[i] = sample_pnn(&pnn, rng, &cfg)?;
    }
    Ok(model.from_model_coords(&u))
}

pub fn sample_row<R: Rng + ?Sized>(
    model: &NitsModel,
    rng: &mut R,
    cfg: Option<InversionConfig>,
) -> Result<Vec<f64>> {
    sample_row_from(model, &vec![0.0; model.dims()], rng, cfg)
}

/// Per-row generator: ChaCha8 seeded with `seed`, stream `row`.
pub fn row_rng(seed: u64, row: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row);
    rng
}

/// `n` ancestral draws as a row-major `n x d` matrix in original units.
///
/// Every row has its own RNG stream, so the output does not depend on how
/// rows are scheduled across threads.
pub fn sample_ancestral(
    model: &NitsModel,
    n: usize,
    seed: u64,
    cfg: Option<InversionConfig>,
) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|r| sample_row(model, &mut row_rng(seed, r as u64), cfg))
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}
