//! Acceptance checks. Each criterion runs an implementation-independent
//! oracle against the library and reports a measured value with a verdict.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{format_csv, make_synthetic, GroundTruth, Split, Standardization, SyntheticKind};
use crate::error::{NitsError, Result};
use crate::model::{checkpoint, Masking, NitsModel, QuantGrid, WeightModelConfig};
use crate::oracle::{
    embed_mol_as_pnn, five_point_difference, ks_statistic, relative_error, simpson,
    simpson_adaptive, sup_gap, MolRef,
};
use crate::pnn::{self, Bounds, Pnn, PnnParams, PnnSpec};
use crate::sampler::{invert_pnn, row_rng, sample_ancestral, InversionConfig};
use crate::train::{evaluate_rows, fit, TrainConfig};

const SEEDS: u64 = 100;
const SIMPSON_PANELS: usize = 10_000;
const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Everything except training runs and the Lemma-4 sweep.
    Quick,
    Full,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub criterion: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {:>2} {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.criterion,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn outcome(
    criterion: u8,
    name: &'static str,
    start: Instant,
    passed: bool,
    detail: String,
) -> Outcome {
    Outcome {
        criterion,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn failed(criterion: u8, name: &'static str, start: Instant, err: NitsError) -> Outcome {
    outcome(criterion, name, start, false, format!("error: {err}"))
}

fn reference_spec() -> PnnSpec {
    PnnSpec::new(vec![1, 16, 16, 1], Bounds { lo: -3.0, hi: 3.0 }).expect("valid spec")
}

fn random_pnn(spec: &PnnSpec, seed: u64) -> Result<(PnnParams, Pnn)> {
    let params = PnnParams::random(spec, &mut ChaCha8Rng::seed_from_u64(seed), 1.0);
    let pnn = Pnn::new(spec, &params)?;
    Ok((params, pnn))
}

fn dfdx(pnn: &Pnn, x: f64) -> f64 {
    pnn.forward(x).map(|f| f.dfdx).unwrap_or(f64::NAN)
}

/// Partition function from differencing vs Simpson on the derivative.
pub fn integration_trick() -> Outcome {
    const NAME: &str = "integration trick";
    let start = Instant::now();
    let spec = reference_spec();
    let b = spec.bounds();
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let (_, pnn) = match random_pnn(&spec, seed) {
            Ok(p) => p,
            Err(e) => return failed(1, NAME, start, e),
        };
        let z_trick = pnn.partition();
        let z_quad = simpson(|x| dfdx(&pnn, x), b.lo, b.hi, SIMPSON_PANELS);
        worst = worst.max(((z_trick - z_quad) / z_quad).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        1,
        NAME,
        start,
        worst < 1e-6 && secs < 10.0,
        format!("max |Z_trick - Z_simpson| / Z_simpson = {worst:.3e} over {SEEDS} seeds (tol 1e-6, limit 10 s)"),
    )
}

/// Strictly positive derivative at random points.
pub fn monotonicity() -> Outcome {
    const NAME: &str = "monotonicity";
    let start = Instant::now();
    let spec = reference_spec();
    let b = spec.bounds();
    let mut violations = 0usize;
    let mut smallest = f64::INFINITY;
    for seed in 0..SEEDS {
        let (_, pnn) = match random_pnn(&spec, seed) {
            Ok(p) => p,
            Err(e) => return failed(2, NAME, start, e),
        };
        let mut rng = row_rng(seed, 1);
        for _ in 0..1000 {
            let d = dfdx(&pnn, rng.gen_range(b.lo..=b.hi));
            if !(d > 0.0) {
                violations += 1;
            }
            smallest = smallest.min(d);
        }
    }
    outcome(
        2,
        NAME,
        start,
        violations == 0,
        format!(
            "{violations} non-positive dF/dx in {} points, min {smallest:.3e}",
            SEEDS * 1000
        ),
    )
}

/// The pdf integrates to one and the cdf hits 0 and 1 at the bounds.
pub fn normalization() -> Outcome {
    const NAME: &str = "normalization";
    let start = Instant::now();
    let spec = reference_spec();
    let b = spec.bounds();
    let mut mass_err: f64 = 0.0;
    let mut end_err: f64 = 0.0;
    for seed in 0..SEEDS {
        let (_, pnn) = match random_pnn(&spec, seed) {
            Ok(p) => p,
            Err(e) => return failed(3, NAME, start, e),
        };
        let mass = simpson(
            |x| pnn.pdf(x).unwrap_or(f64::NAN),
            b.lo,
            b.hi,
            SIMPSON_PANELS,
        );
        mass_err = mass_err.max((mass - 1.0).abs());
        match (pnn.cdf(b.lo), pnn.cdf(b.hi)) {
            (Ok(lo), Ok(hi)) => end_err = end_err.max(lo.abs()).max((hi - 1.0).abs()),
            (Err(e), _) | (_, Err(e)) => return failed(3, NAME, start, e),
        }
    }
    outcome(
        3,
        NAME,
        start,
        mass_err <= 1e-4 && end_err <= 1e-12,
        format!("max |mass - 1| = {mass_err:.3e} (tol 1e-4), max endpoint cdf error = {end_err:.3e} (tol 1e-12)"),
    )
}

/// Reverse-mode gradients vs central differences, for bare PNNs and end to
/// end through the weight model.
pub fn gradients() -> Outcome {
    const NAME: &str = "gradient correctness";
    let start = Instant::now();
    match gradient_errors() {
        Ok((pnn_err, e2e_err)) => {
            let secs = start.elapsed().as_secs_f64();
            outcome(
                4,
                NAME,
                start,
                pnn_err <= 1e-4 && e2e_err <= 1e-3 && secs < 60.0,
                format!(
                    "PNN max rel err {pnn_err:.3e} (tol 1e-4, 20 seeds, every parameter), \
                     end-to-end max rel err {e2e_err:.3e} (tol 1e-3, 200 coordinates), limit 60 s"
                ),
            )
        }
        Err(e) => failed(4, NAME, start, e),
    }
}

fn gradient_errors() -> Result<(f64, f64)> {
    let spec = reference_spec();
    let b = spec.bounds();
    let mut pnn_err: f64 = 0.0;
    for seed in 0..20 {
        let (params, _) = random_pnn(&spec, 1000 + seed)?;
        let x = row_rng(seed, 2).gen_range(b.lo..b.hi);
        let (_, grad) = crate::grad::loss_and_grad(&spec, &params, x)?;
        for j in 0..params.len() {
            let loss_at = |t: f64| {
                let mut p = params.clone();
                p.as_mut_slice()[j] = t;
                -pnn::log_pdf(&spec, &p, x).unwrap_or(f64::NAN)
            };
            let numeric = five_point_difference(loss_at, params.as_slice()[j], 1e-3);
            pnn_err = pnn_err.max(relative_error(grad.as_slice()[j], numeric, GRAD_FLOOR));
        }
    }

    let config = WeightModelConfig {
        hidden_dim: 16,
        residual_blocks: 2,
        dropout_rate: 0.0,
        masking: Masking::Autoregressive,
    };
    let bounds = vec![Bounds { lo: -3.0, hi: 3.0 }; 2];
    let mut model = NitsModel::new(
        &[1, 8, 8, 1],
        bounds,
        &config,
        Standardization::identity(2),
        11,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let jitter = Normal::new(0.0, 0.1).expect("valid normal");
    for v in model.weight_model_mut().phi_mut() {
        *v += jitter.sample(&mut rng);
    }
    let points: Vec<Vec<f64>> = (0..4)
        .map(|_| vec![rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)])
        .collect();
    let n_phi = model.weight_model().param_count();
    let mut analytic = vec![0.0; n_phi];
    for x in &points {
        model.accumulate_grad::<ChaCha8Rng>(x, None, &mut analytic)?;
    }
    let mut e2e_err: f64 = 0.0;
    for _ in 0..200 {
        let j = rng.gen_range(0..n_phi);
        let base = model.weight_model().phi()[j];
        let mut loss_at = |t: f64| {
            model.weight_model_mut().phi_mut()[j] = t;
            let l: f64 = points
                .iter()
                .map(|x| -model.log_likelihood(x).unwrap_or(f64::NAN))
                .sum();
            model.weight_model_mut().phi_mut()[j] = base;
            l
        };
        let h = 1e-5;
        let numeric = (loss_at(base + h) - loss_at(base - h)) / (2.0 * h);
        e2e_err = e2e_err.max(relative_error(analytic[j], numeric, GRAD_FLOOR));
    }
    Ok((pnn_err, e2e_err))
}

/// Inverse-transform samples pushed through the model cdf are uniform, and
/// bisection stays within its iteration budget.
pub fn sampling() -> Outcome {
    const NAME: &str = "inverse-transform sampling";
    let start = Instant::now();
    match sampling_stats() {
        Ok((p, max_iters, budget)) => outcome(
            5,
            NAME,
            start,
            p > 0.01 && max_iters <= budget,
            format!("KS p = {p:.4} over 10000 samples (need > 0.01), max bisection iters {max_iters} (budget {budget})"),
        ),
        Err(e) => failed(5, NAME, start, e),
    }
}

fn sampling_stats() -> Result<(f64, usize, usize)> {
    const N: usize = 10_000;
    const SEED: u64 = 21;
    let config = WeightModelConfig {
        hidden_dim: 16,
        residual_blocks: 1,
        dropout_rate: 0.0,
        masking: Masking::Autoregressive,
    };
    let bounds = Bounds { lo: -3.0, hi: 3.0 };
    let mut model = NitsModel::new(
        &[1, 16, 16, 1],
        vec![bounds],
        &config,
        Standardization::identity(1),
        20,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let jitter = Normal::new(0.0, 0.5).expect("valid normal");
    for v in model.weight_model_mut().phi_mut() {
        *v += jitter.sample(&mut rng);
    }
    let samples = sample_ancestral(&model, N, SEED, None)?;
    let pnn = model.conditional(&[0.0], 0)?;
    let pushed: Vec<f64> = samples.iter().map(|&x| pnn.cdf(x)).collect::<Result<_>>()?;
    let ks = ks_statistic(&pushed)?;

    let cfg = InversionConfig::for_bounds(bounds);
    let budget = (bounds.width() / cfg.tolerance).log2().ceil() as usize + 2;
    let mut max_iters = 0;
    for r in 0..N {
        let z: f64 = row_rng(SEED, r as u64).gen();
        let inv = invert_pnn(&pnn, z, &cfg)?;
        if inv.x != samples[r] {
            return Err(NitsError::InvalidParameter(format!(
                "row {r}: replayed inversion disagrees with the sampler"
            )));
        }
        max_iters = max_iters.max(inv.iters);
    }
    Ok((ks.p_value, max_iters, budget))
}

/// The embedded mixture-of-logistics PNN converges to the mixture cdf as the
/// support widens.
pub fn lemma4_convergence() -> Outcome {
    const NAME: &str = "mixture-of-logistics limit";
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut all_decreasing = true;
    let mut worst_final: f64 = 0.0;
    for _ in 0..10 {
        let k = rng.gen_range(2..=4);
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        let means = (0..k).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let scales = (0..k).map(|_| rng.gen_range(0.5..=2.0)).collect();
        let reference = match MolRef::new(weights, means, scales) {
            Ok(r) => r,
            Err(e) => return failed(6, NAME, start, e),
        };
        let mut gaps = Vec::new();
        for half in [5.0, 10.0, 20.0, 40.0] {
            let bounds = Bounds {
                lo: -half,
                hi: half,
            };
            let gap = embed_mol_as_pnn(&reference, bounds)
                .and_then(|(spec, p)| Pnn::new(&spec, &p))
                .map(|pnn| sup_gap(|x| pnn.cdf(x).unwrap_or(f64::NAN), &reference, bounds, 4001));
            match gap {
                Ok(g) => gaps.push(g),
                Err(e) => return failed(6, NAME, start, e),
            }
        }
        all_decreasing &= gaps.windows(2).all(|w| w[1] < w[0]);
        worst_final = worst_final.max(gaps[3]);
    }
    outcome(
        6,
        NAME,
        start,
        all_decreasing && worst_final < 1e-3,
        format!(
            "sup gaps strictly decreasing over B = 5, 10, 20, 40: {all_decreasing}; max gap at B = 40: {worst_final:.3e} (tol 1e-3)"
        ),
    )
}

/// A trained model on one synthetic density.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub kind: SyntheticKind,
    pub model: NitsModel,
    pub test_nll: f64,
    pub truth_nll: f64,
    pub tolerance: f64,
    pub excluded: usize,
    pub seconds: f64,
}

impl Recovery {
    pub fn gap(&self) -> f64 {
        self.test_nll - self.truth_nll
    }

    pub fn passed(&self) -> bool {
        self.gap().abs() < self.tolerance && self.seconds < 600.0
    }
}

/// Training setup used for the recovery runs. One-dimensional targets get a
/// small network and a large step; the 2D targets a wider network.
pub fn recovery_setup(kind: SyntheticKind) -> (usize, WeightModelConfig, TrainConfig, f64) {
    let one_d = matches!(kind, SyntheticKind::Logistic | SyntheticKind::Gmm2);
    let config = WeightModelConfig {
        hidden_dim: if one_d { 32 } else { 64 },
        residual_blocks: 2,
        dropout_rate: 0.0,
        masking: Masking::Autoregressive,
    };
    let train = TrainConfig {
        learning_rate: if one_d { 1e-2 } else { 1e-3 },
        max_epochs: if one_d { 300 } else { 100 },
        patience: 10,
        ..TrainConfig::default()
    };
    let (n, tol) = if one_d { (5_000, 0.05) } else { (10_000, 0.10) };
    (n, config, train, tol)
}

/// Trains on a synthetic dataset and compares test NLL with the exact
/// ground-truth average on the same rows.
pub fn density_recovery(kind: SyntheticKind) -> Result<Recovery> {
    let start = Instant::now();
    let (n, config, train, tolerance) = recovery_setup(kind);
    let syn = make_synthetic(kind.name(), n, 1)?;
    let ds = &syn.dataset;
    let model = NitsModel::for_dataset(ds, &[1, 16, 16, 1], &config, 3)?;
    let (model, _) = fit(model, ds, &train)?;
    let test = ds.rows(Split::Test);
    let inside: Vec<&[f64]> = test
        .iter()
        .copied()
        .filter(|r| model.to_model_coords(r).is_ok())
        .collect();
    let report = evaluate_rows(&model, &inside)?;
    let truth_nll = mean_truth_nll(&syn.truth, &inside);
    Ok(Recovery {
        kind,
        model,
        test_nll: report.nats,
        truth_nll,
        tolerance,
        excluded: test.len() - inside.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn mean_truth_nll(truth: &GroundTruth, rows: &[&[f64]]) -> f64 {
    -rows.iter().map(|r| truth.log_density(r)).sum::<f64>() / rows.len() as f64
}

pub const RECOVERY_TARGETS: [SyntheticKind; 4] = [
    SyntheticKind::Logistic,
    SyntheticKind::Gmm2,
    SyntheticKind::TwoMoons,
    SyntheticKind::Ring,
];

pub fn recovery_runs() -> Result<Vec<Recovery>> {
    RECOVERY_TARGETS
        .iter()
        .map(|&k| density_recovery(k))
        .collect()
}

pub fn density_recovery_outcome(runs: &[Recovery], seconds: f64) -> Outcome {
    let detail = runs
        .iter()
        .map(|r| {
            format!(
                "{}: test {:.4} vs truth {:.4}, gap {:+.4} (tol {:.2}, {} excluded, {:.0} s)",
                r.kind.name(),
                r.test_nll,
                r.truth_nll,
                r.gap(),
                r.tolerance,
                r.excluded,
                r.seconds
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Outcome {
        criterion: 7,
        name: "density recovery",
        passed: runs.len() == RECOVERY_TARGETS.len() && runs.iter().all(Recovery::passed),
        detail,
        seconds,
    }
}

/// Nested Simpson integral of a 2D model's density over its box, in
/// standardized coordinates (the affine map leaves the mass unchanged).
pub fn joint_mass(model: &NitsModel, panels: usize) -> Result<f64> {
    if model.dims() != 2 {
        return Err(NitsError::InvalidParameter(
            "joint mass needs a 2D model".into(),
        ));
    }
    let b = model.bounds();
    let first = model.conditional(&[0.0, 0.0], 0)?;
    let err = std::cell::RefCell::new(None);
    let mass = simpson(
        |a| {
            let inner = model.conditional(&[a, 0.0], 1).map(|second| {
                simpson(
                    |t| second.pdf(t).unwrap_or(f64::NAN),
                    b[1].lo,
                    b[1].hi,
                    panels,
                )
            });
            match (first.pdf(a), inner) {
                (Ok(p), Ok(q)) => p * q,
                (Err(e), _) | (_, Err(e)) => {
                    *err.borrow_mut() = Some(e);
                    f64::NAN
                }
            }
        },
        b[0].lo,
        b[0].hi,
        panels,
    );
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(mass),
    }
}

pub fn joint_normalization(runs: &[Recovery]) -> Outcome {
    const NAME: &str = "joint normalization";
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut passed = true;
    let mut seen = 0;
    for r in runs.iter().filter(|r| r.model.dims() == 2) {
        match joint_mass(&r.model, 500) {
            Ok(m) => {
                passed &= (m - 1.0).abs() <= 1e-3;
                parts.push(format!("{}: mass {m:.6}", r.kind.name()));
            }
            Err(e) => return failed(8, NAME, start, e),
        }
        seen += 1;
    }
    outcome(
        8,
        NAME,
        start,
        passed && seen > 0,
        format!("{} (500 x 500 panels, tol 1e-3)", parts.join("; ")),
    )
}

/// Bin masses of each coordinate sum to one and match quadrature of the pdf.
pub fn discretized_likelihood() -> Outcome {
    const NAME: &str = "discretized likelihood";
    let start = Instant::now();
    match pmf_errors() {
        Ok((sum_err, bin_err)) => outcome(
            9,
            NAME,
            start,
            sum_err <= 1e-10 && bin_err <= 1e-8,
            format!(
                "max |sum pmf - 1| = {sum_err:.3e} (tol 1e-10), max |pmf - quadrature| = {bin_err:.3e} (tol 1e-8)"
            ),
        ),
        Err(e) => failed(9, NAME, start, e),
    }
}

fn pmf_errors() -> Result<(f64, f64)> {
    let config = WeightModelConfig {
        hidden_dim: 16,
        residual_blocks: 1,
        dropout_rate: 0.0,
        masking: Masking::Autoregressive,
    };
    let bounds = vec![Bounds { lo: -3.0, hi: 3.0 }; 2];
    let mut model = NitsModel::new(
        &[1, 8, 8, 1],
        bounds,
        &config,
        Standardization::identity(2),
        30,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let jitter = Normal::new(0.0, 0.2).expect("valid normal");
    for v in model.weight_model_mut().phi_mut() {
        *v += jitter.sample(&mut rng);
    }
    let grid = QuantGrid::new(-2.55, 0.02, 256)?;
    let mut sum_err: f64 = 0.0;
    let mut bin_err: f64 = 0.0;
    for context in [40, 128, 200] {
        let anchor = grid.value(context);
        for coord in 0..2 {
            let mut total = 0.0;
            let mut u = vec![anchor, anchor];
            u[coord] = 0.0;
            let pnn = model.conditional(&u, coord)?;
            for level in 0..grid.levels {
                let mut x = vec![anchor, anchor];
                x[coord] = grid.value(level);
                let p = model.discretized_pmfs(&x, &grid)?[coord];
                total += p;
                let (lo, hi) = model.bin_edges(coord, level, &grid)?;
                let q = simpson_adaptive(|t| pnn.pdf(t).unwrap_or(f64::NAN), lo, hi);
                bin_err = bin_err.max((p - q).abs());
            }
            sum_err = sum_err.max((total - 1.0).abs());
        }
    }
    Ok((sum_err, bin_err))
}

/// Two identical training runs give the same checkpoint bytes, and sampling
/// twice (once from the reloaded checkpoint) gives the same CSV bytes.
pub fn determinism() -> Outcome {
    const NAME: &str = "determinism";
    let start = Instant::now();
    match determinism_check() {
        Ok((ckpt_same, samples_same, ckpt_len)) => outcome(
            10,
            NAME,
            start,
            ckpt_same && samples_same,
            format!(
                "checkpoints identical: {ckpt_same} ({ckpt_len} bytes), sample files identical: {samples_same}"
            ),
        ),
        Err(e) => failed(10, NAME, start, e),
    }
}

fn determinism_check() -> Result<(bool, bool, usize)> {
    let config = WeightModelConfig {
        hidden_dim: 16,
        residual_blocks: 1,
        dropout_rate: 0.1,
        masking: Masking::Autoregressive,
    };
    let train = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 3,
        seed: 7,
        ..TrainConfig::default()
    };
    let run = || -> Result<NitsModel> {
        let syn = make_synthetic("two-moons-2d", 1_000, 7)?;
        let model = NitsModel::for_dataset(&syn.dataset, &[1, 8, 8, 1], &config, 7)?;
        Ok(fit(model, &syn.dataset, &train)?.0)
    };
    let a = checkpoint::to_bytes(&run()?);
    let b = checkpoint::to_bytes(&run()?);
    let reloaded = checkpoint::from_bytes(&b)?;
    let first = format_csv(
        &sample_ancestral(&checkpoint::from_bytes(&a)?, 500, 7, None)?,
        2,
        None,
    );
    let second = format_csv(&sample_ancestral(&reloaded, 500, 7, None)?, 2, None);
    Ok((a == b, first == second, a.len()))
}

/// Runs every criterion the mode covers, reporting each as it finishes.
pub fn run(mode: Mode, mut report: impl FnMut(&Outcome)) -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut push = |o: Outcome, out: &mut Vec<Outcome>| {
        report(&o);
        out.push(o);
    };
    push(integration_trick(), &mut out);
    push(monotonicity(), &mut out);
    push(normalization(), &mut out);
    push(gradients(), &mut out);
    push(sampling(), &mut out);
    if mode == Mode::Full {
        push(lemma4_convergence(), &mut out);
        let start = Instant::now();
        match recovery_runs() {
            Ok(runs) => {
                push(
                    density_recovery_outcome(&runs, start.elapsed().as_secs_f64()),
                    &mut out,
                );
                push(joint_normalization(&runs), &mut out);
            }
            Err(e) => {
                push(failed(7, "density recovery", start, e), &mut out);
                push(
                    outcome(
                        8,
                        "joint normalization",
                        Instant::now(),
                        false,
                        "no trained model".into(),
                    ),
                    &mut out,
                );
            }
        }
    }
    push(discretized_likelihood(), &mut out);
    push(determinism(), &mut out);
    out
}
