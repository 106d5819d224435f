//! Datasets: CSV ingestion, deterministic splits, standardization and the
//! synthetic densities used for oracle comparisons.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NitsError, Result};
use crate::pnn::Bounds;

const BOUNDS_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Shuffled split of `0..n`; the test share is whatever remains.
    pub fn shuffled(n: usize, train_frac: f64, val_frac: f64, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        idx.shuffle(&mut rng);
        let n_train = ((n as f64) * train_frac).round() as usize;
        let n_val = (((n as f64) * val_frac).round() as usize).min(n - n_train.min(n));
        let n_train = n_train.min(n);
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        Splits {
            train: idx,
            val,
            test,
        }
    }
}

/// Row-major `n x d` table of finite float64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dims: usize,
    values: Vec<f64>,
    splits: Splits,
    bounds: Vec<Bounds>,
    provenance: String,
}

impl Dataset {
    /// Builds a dataset with the default 80/10/10 split.
    pub fn from_rows(
        values: Vec<f64>,
        dims: usize,
        provenance: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        if dims == 0 || values.is_empty() || values.len() % dims != 0 {
            return Err(NitsError::InvalidParameter(format!(
                "{} values do not form rows of {dims} columns",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(NitsError::InvalidParameter(format!(
                "row {}, column {} is not finite",
                i / dims,
                i % dims
            )));
        }
        let n = values.len() / dims;
        Self::with_splits(
            values,
            dims,
            provenance.into(),
            Splits::shuffled(n, 0.8, 0.1, seed),
        )
    }

    fn with_splits(
        values: Vec<f64>,
        dims: usize,
        provenance: String,
        splits: Splits,
    ) -> Result<Self> {
        let mut ds = Dataset {
            dims,
            values,
            splits,
            bounds: Vec::new(),
            provenance,
        };
        ds.bounds = ds.compute_bounds()?;
        Ok(ds)
    }

    /// Re-splits with explicit fractions; the test share is the remainder.
    pub fn resplit(self, train_frac: f64, val_frac: f64, seed: u64) -> Result<Self> {
        if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0) {
            return Err(NitsError::InvalidParameter(format!(
                "invalid split fractions train={train_frac} val={val_frac}"
            )));
        }
        let splits = Splits::shuffled(self.len(), train_frac, val_frac, seed);
        Self::with_splits(self.values, self.dims, self.provenance, splits)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        match split {
            Split::Train => self.splits.train.clone(),
            Split::Val => self.splits.val.clone(),
            Split::Test => self.splits.test.clone(),
            Split::All => (0..self.len()).collect(),
        }
    }

    pub fn rows(&self, split: Split) -> Vec<&[f64]> {
        self.indices(split)
            .into_iter()
            .map(|i| self.row(i))
            .collect()
    }

    /// Per-column `[min - 0.1 range, max + 0.1 range]` of the training split.
    pub fn bounds(&self) -> &[Bounds] {
        &self.bounds
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    fn compute_bounds(&self) -> Result<Vec<Bounds>> {
        let rows = if self.splits.train.is_empty() {
            (0..self.len()).collect()
        } else {
            self.splits.train.clone()
        };
        (0..self.dims)
            .map(|c| {
                let (lo, hi) =
                    rows.iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                            let v = self.values[r * self.dims + c];
                            (lo.min(v), hi.max(v))
                        });
                let range = hi - lo;
                let margin = if range > 0.0 {
                    BOUNDS_MARGIN * range
                } else {
                    1.0
                };
                Bounds::new(lo - margin, hi + margin)
            })
            .collect()
    }

    fn map_values(&self, mut f: impl FnMut(usize, f64) -> f64) -> Result<Self> {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i % self.dims, v))
            .collect();
        Self::with_splits(
            values,
            self.dims,
            self.provenance.clone(),
            self.splits.clone(),
        )
    }
}

/// Per-column affine map `u = (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(dims: usize) -> Self {
        Self {
            shift: vec![0.0; dims],
            scale: vec![1.0; dims],
        }
    }

    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if shift.len() != scale.len() || scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(NitsError::InvalidParameter(
                "standardization needs one positive finite scale per shift".into(),
            ));
        }
        Ok(Self { shift, scale })
    }

    pub fn dims(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    /// `sum_j ln scale_j`; add to a standardized-unit NLL to get original units.
    pub fn log_scale_sum(&self) -> f64 {
        self.scale.iter().map(|s| s.ln()).sum()
    }

    pub fn map_bounds(&self, col: usize, b: Bounds) -> Result<Bounds> {
        let (m, s) = (self.shift[col], self.scale[col]);
        Bounds::new((b.lo - m) / s, (b.hi - m) / s)
    }

    pub fn unmap_bounds(&self, col: usize, b: Bounds) -> Result<Bounds> {
        let (m, s) = (self.shift[col], self.scale[col]);
        Bounds::new(b.lo * s + m, b.hi * s + m)
    }
}

/// Fits mean / population sd on the training split and applies them to all
/// rows.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, Standardization)> {
    let train = &ds.splits.train;
    if train.is_empty() {
        return Err(NitsError::InvalidParameter(
            "standardize needs a non-empty train split".into(),
        ));
    }
    let n = train.len() as f64;
    let d = ds.dims;
    let mut mean = vec![0.0; d];
    for &r in train {
        for (m, v) in mean.iter_mut().zip(ds.row(r)) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for &r in train {
        for ((s, v), m) in var.iter_mut().zip(ds.row(r)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let mut scale = Vec::with_capacity(d);
    for (c, v) in var.iter().enumerate() {
        let sd = v.sqrt();
        if !(sd > 0.0) {
            return Err(NitsError::InvalidParameter(format!(
                "column {c} has zero variance on the training split; drop it before fitting"
            )));
        }
        scale.push(sd);
    }
    let t = Standardization::new(mean, scale)?;
    let out = ds.map_values(|c, v| (v - t.shift[c]) / t.scale[c])?;
    Ok((out, t))
}

/// Adds `U[0, step)` noise to the listed integer-valued columns.
pub fn dequantize(ds: &Dataset, columns: &[usize], step: f64, seed: u64) -> Result<Dataset> {
    if let Some(c) = columns.iter().find(|&&c| c >= ds.dims) {
        return Err(NitsError::InvalidParameter(format!(
            "column {c} out of range"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let noise: Vec<f64> = (0..ds.values.len())
        .map(|i| {
            if columns.contains(&(i % ds.dims)) {
                rng.gen::<f64>() * step
            } else {
                0.0
            }
        })
        .collect();
    let mut k = 0;
    ds.map_values(|_, v| {
        let out = v + noise[k];
        k += 1;
        out
    })
}

/// Reads a rectangular numeric table.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool, delimiter: u8) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let parse_err = |line: u64, msg: String| NitsError::Parse {
        path: name.clone(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .delimiter(delimiter)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => NitsError::Io(io),
            other => parse_err(0, format!("{other:?}")),
        })?;
    let mut dims = 0;
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if dims == 0 {
            dims = record.len();
        } else if record.len() != dims {
            return Err(parse_err(
                line,
                format!("ragged row: {} fields, expected {dims}", record.len()),
            ));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(
                    line,
                    format!("column {}: cannot parse '{field}' as a number", c + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("column {}: value '{field}' is not finite", c + 1),
                ));
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(parse_err(0, "file contains no data rows".into()));
    }
    Dataset::from_rows(values, dims, name, 0)
}

/// Renders rows as CSV text with round-trip float formatting.
pub fn format_csv(values: &[f64], dims: usize, header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for row in values.chunks(dims) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Writes rows with round-trip float formatting.
pub fn write_csv(
    path: impl AsRef<Path>,
    values: &[f64],
    dims: usize,
    header: Option<&[String]>,
) -> Result<()> {
    std::fs::write(path, format_csv(values, dims, header))?;
    Ok(())
}

/// Exact log-density of a synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Logistic {
        mean: f64,
        scale: f64,
    },
    /// Mixture of isotropic Gaussians sharing one standard deviation.
    GaussianMixture {
        weights: Vec<f64>,
        centers: Vec<Vec<f64>>,
        sd: f64,
    },
}

impl GroundTruth {
    pub fn dims(&self) -> usize {
        match self {
            GroundTruth::Logistic { .. } => 1,
            GroundTruth::GaussianMixture { centers, .. } => centers[0].len(),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            GroundTruth::Logistic { mean, scale } => {
                let t = -((x[0] - mean) / scale).abs();
                t - scale.ln() - 2.0 * t.exp().ln_1p()
            }
            GroundTruth::GaussianMixture {
                weights,
                centers,
                sd,
            } => {
                let d = x.len() as f64;
                let norm = -0.5 * d * (2.0 * PI).ln() - d * sd.ln();
                let terms: Vec<f64> = weights
                    .iter()
                    .zip(centers)
                    .map(|(w, c)| {
                        let sq: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                        w.ln() + norm - 0.5 * sq / (sd * sd)
                    })
                    .collect();
                let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            GroundTruth::Logistic { mean, scale } => {
                // open interval so the logit stays finite
                let u: f64 = loop {
                    let u = rng.gen::<f64>();
                    if u > 0.0 {
                        break u;
                    }
                };
                vec![mean + scale * (u / (1.0 - u)).ln()]
            }
            GroundTruth::GaussianMixture {
                weights,
                centers,
                sd,
            } => {
                let r: f64 = rng.gen();
                let mut acc = 0.0;
                let mut k = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if r < acc {
                        k = i;
                        break;
                    }
                }
                centers[k]
                    .iter()
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(rng);
                        c + sd * z
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Logistic,
    Gmm2,
    TwoMoons,
    Ring,
}

impl std::str::FromStr for SyntheticKind {
    type Err = NitsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(SyntheticKind::Logistic),
            "gmm2" => Ok(SyntheticKind::Gmm2),
            "two-moons-2d" => Ok(SyntheticKind::TwoMoons),
            "ring-2d" => Ok(SyntheticKind::Ring),
            other => Err(NitsError::Usage(format!(
                "unknown synthetic dataset '{other}' (expected logistic, gmm2, two-moons-2d or ring-2d)"
            ))),
        }
    }
}

impl SyntheticKind {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::Logistic => "logistic",
            SyntheticKind::Gmm2 => "gmm2",
            SyntheticKind::TwoMoons => "two-moons-2d",
            SyntheticKind::Ring => "ring-2d",
        }
    }

    pub fn truth(&self) -> GroundTruth {
        match self {
            SyntheticKind::Logistic => GroundTruth::Logistic {
                mean: 0.0,
                scale: 1.0,
            },
            SyntheticKind::Gmm2 => GroundTruth::GaussianMixture {
                weights: vec![0.5, 0.5],
                centers: vec![vec![-2.0], vec![2.0]],
                sd: 0.5,
            },
            SyntheticKind::TwoMoons => {
                let per_moon = MOON_COMPONENTS;
                let mut centers = Vec::with_capacity(2 * per_moon);
                for k in 0..per_moon {
                    let t = PI * k as f64 / (per_moon - 1) as f64;
                    centers.push(vec![t.cos(), t.sin()]);
                    centers.push(vec![1.0 - t.cos(), 0.5 - t.sin()]);
                }
                GroundTruth::GaussianMixture {
                    weights: vec![1.0 / centers.len() as f64; centers.len()],
                    centers,
                    sd: MOON_SD,
                }
            }
            SyntheticKind::Ring => {
                let centers: Vec<Vec<f64>> = (0..RING_COMPONENTS)
                    .map(|k| {
                        let t = 2.0 * PI * k as f64 / RING_COMPONENTS as f64;
                        vec![RING_RADIUS * t.cos(), RING_RADIUS * t.sin()]
                    })
                    .collect();
                GroundTruth::GaussianMixture {
                    weights: vec![1.0 / RING_COMPONENTS as f64; RING_COMPONENTS],
                    centers,
                    sd: RING_SD,
                }
            }
        }
    }
}

const MOON_COMPONENTS: usize = 10;
const MOON_SD: f64 = 0.2;
const RING_COMPONENTS: usize = 16;
const RING_RADIUS: f64 = 2.0;
const RING_SD: f64 = 0.3;

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

/// Draws `n` points from a named synthetic density, split 80/10/10.
pub fn make_synthetic(name: &str, n: usize, seed: u64) -> Result<Synthetic> {
    let kind: SyntheticKind = name.parse()?;
    if n < 2 {
        return Err(NitsError::Usage("synthetic datasets need n >= 2".into()));
    }
    let truth = kind.truth();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * truth.dims());
    for _ in 0..n {
        values.extend(truth.sample(&mut rng));
    }
    let dataset = Dataset::from_rows(
        values,
        truth.dims(),
        format!("synthetic:{}:seed={seed}", kind.name()),
        seed,
    )?;
    Ok(Synthetic { dataset, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_small_file() {
        let f = write_tmp("a,b\n1.5,2\n-3,4e-1\n0,7\n");
        let ds = load_csv(f.path(), true, b',').unwrap();
        assert_eq!(ds.dims(), 2);
        assert_eq!(ds.values(), &[1.5, 2.0, -3.0, 0.4, 0.0, 7.0]);
    }

    #[test]
    fn reports_bad_cell_location() {
        let f = write_tmp("1,2\n3,x\n5,6\n");
        let err = load_csv(f.path(), false, b',').unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("column 2"), "{err}");
    }

    #[test]
    fn reports_ragged_row() {
        let f = write_tmp("1;2\n3;4;5\n");
        let err = load_csv(f.path(), false, b';').unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("ragged"), "{err}");
    }

    #[test]
    fn rejects_empty_file() {
        let f = write_tmp("");
        assert!(load_csv(f.path(), false, b',').is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<f64> = (0..60)
            .map(|_| rng.gen_range(-1e3..1e3) * rng.gen::<f64>().powi(9))
            .collect();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(f.path(), &vals, 3, None).unwrap();
        let ds = load_csv(f.path(), false, b',').unwrap();
        assert_eq!(ds.values(), &vals[..]);
    }

    #[test]
    fn splits_are_disjoint_and_covering() {
        let s = Splits::shuffled(103, 0.8, 0.1, 4);
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert_eq!(s.train.len(), 82);
        assert_eq!(s.val.len(), 10);
        assert_eq!(s, Splits::shuffled(103, 0.8, 0.1, 4));
        assert_ne!(s, Splits::shuffled(103, 0.8, 0.1, 5));
    }

    #[test]
    fn standardize_two_columns() {
        // train split covers every row
        let ds = Dataset::from_rows(vec![1.0, 10.0, 3.0, 30.0], 2, "toy", 0)
            .unwrap()
            .resplit(1.0, 0.0, 0)
            .unwrap();
        let (out, t) = standardize(&ds).unwrap();
        assert_eq!(t.shift, vec![2.0, 20.0]);
        assert_eq!(t.scale, vec![1.0, 10.0]);
        let mut v = out.values().to_vec();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![-1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn standardize_shift_only_moves_means() {
        let syn = make_synthetic("gmm2", 500, 3).unwrap();
        let (a, ta) = standardize(&syn.dataset).unwrap();
        let shifted = syn.dataset.map_values(|_, v| v + 7.5).unwrap();
        let (b, tb) = standardize(&shifted).unwrap();
        assert!((tb.shift[0] - ta.shift[0] - 7.5).abs() < 1e-12);
        assert!((tb.scale[0] - ta.scale[0]).abs() < 1e-12);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_train_has_unit_moments() {
        let syn = make_synthetic("ring-2d", 2000, 5).unwrap();
        let (ds, _) = standardize(&syn.dataset).unwrap();
        let rows = ds.rows(Split::Train);
        let n = rows.len() as f64;
        for c in 0..2 {
            let mean: f64 = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            let var: f64 = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_variance_column_is_rejected() {
        let ds =
            Dataset::from_rows(vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0], 2, "toy", 0).unwrap();
        let err = standardize(&ds).unwrap_err().to_string();
        assert!(err.contains("column 1"), "{err}");
    }

    #[test]
    fn bounds_cover_train_with_margin() {
        let ds = Dataset::from_rows(vec![0.0, 10.0], 1, "toy", 0)
            .unwrap()
            .resplit(1.0, 0.0, 0)
            .unwrap();
        assert_eq!(ds.bounds()[0], Bounds { lo: -1.0, hi: 11.0 });
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = make_synthetic("two-moons-2d", 300, 9).unwrap();
        let b = make_synthetic("two-moons-2d", 300, 9).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert!(make_synthetic("spiral", 10, 0).is_err());
    }

    #[test]
    fn logistic_sample_mean() {
        let n = 20_000;
        let syn = make_synthetic("logistic", n, 17).unwrap();
        let mean = syn.dataset.values().iter().sum::<f64>() / n as f64;
        let sd = PI / 3f64.sqrt();
        assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn ground_truth_densities_integrate() {
        use crate::oracle::simpson;
        for kind in ["logistic", "gmm2"] {
            let t = kind.parse::<SyntheticKind>().unwrap().truth();
            let z = simpson(|x| t.log_density(&[x]).exp(), -40.0, 40.0, 20_000);
            assert!((z - 1.0).abs() < 1e-9, "{kind}: {z}");
        }
        for kind in ["ring-2d", "two-moons-2d"] {
            let t = kind.parse::<SyntheticKind>().unwrap().truth();
            let z = simpson(
                |x| simpson(|y| t.log_density(&[x, y]).exp(), -5.0, 5.0, 400),
                -5.0,
                5.0,
                400,
            );
            assert!((z - 1.0).abs() < 1e-6, "{kind}: {z}");
        }
    }

    #[test]
    fn dequantize_adds_bounded_noise() {
        let ds = Dataset::from_rows(vec![1.0, 0.5, 2.0, 0.5, 3.0, 0.5], 2, "toy", 0).unwrap();
        let out = dequantize(&ds, &[0], 1.0, 3).unwrap();
        for (a, b) in ds.values().iter().zip(out.values()).step_by(2) {
            assert!(*b >= *a && *b < a + 1.0);
        }
        for (a, b) in ds.values().iter().zip(out.values()).skip(1).step_by(2) {
            assert_eq!(a, b);
        }
    }
}
