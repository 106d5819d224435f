use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nits::data::{Splits, Standardization};
use nits::model::checkpoint;
use nits::pnn::{transform_final, transform_weights};
use nits::sampler::{invert_pnn, InversionConfig};
use nits::{Bounds, Masking, NitsModel, Pnn, PnnParams, PnnSpec, WeightModelConfig};

fn pnn(seed: u64, scale: f64, half: f64) -> Pnn {
    let spec = PnnSpec::new(vec![1, 8, 6, 1], Bounds::new(-half, half).unwrap()).unwrap();
    let p = PnnParams::random(&spec, &mut ChaCha8Rng::seed_from_u64(seed), scale);
    Pnn::new(&spec, &p).unwrap()
}

fn small_model(seed: u64) -> NitsModel {
    let config = WeightModelConfig {
        hidden_dim: 8,
        residual_blocks: 1,
        dropout_rate: 0.0,
        masking: Masking::Autoregressive,
    };
    let bounds = vec![Bounds::new(-2.0, 2.0).unwrap(); 3];
    let mut m = NitsModel::new(
        &[1, 4, 4, 1],
        bounds,
        &config,
        Standardization::identity(3),
        seed,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in m.weight_model_mut().phi_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cdf_is_monotone_and_bounded(seed in 0u64..10_000, scale in 0.1f64..2.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let p = pnn(seed, scale, 3.0);
        let (lo, hi) = (3.0 * a.min(b), 3.0 * a.max(b));
        let (ca, cb) = (p.cdf(lo).unwrap(), p.cdf(hi).unwrap());
        prop_assert!(ca <= cb);
        prop_assert!((0.0..=1.0).contains(&ca) && (0.0..=1.0).contains(&cb));
        prop_assert!(p.pdf(lo).unwrap() > 0.0);
    }

    #[test]
    fn cdf_hits_endpoints(seed in 0u64..10_000, half in 0.5f64..20.0) {
        let p = pnn(seed, 1.0, half);
        prop_assert!(p.cdf(-half).unwrap().abs() <= 1e-12);
        prop_assert!((p.cdf(half).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn mass_between_is_additive(seed in 0u64..10_000, t in 0.0f64..1.0) {
        let p = pnn(seed, 1.0, 2.0);
        let m = -2.0 + 4.0 * t;
        let whole = p.mass_between(-2.0, 2.0).unwrap();
        let parts = p.mass_between(-2.0, m).unwrap() + p.mass_between(m, 2.0).unwrap();
        prop_assert!((whole - 1.0).abs() <= 1e-12);
        prop_assert!((parts - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn inversion_round_trips(seed in 0u64..10_000, z in 0.001f64..0.999) {
        let p = pnn(seed, 1.0, 3.0);
        let cfg = InversionConfig::for_bounds(p.bounds());
        let inv = invert_pnn(&p, z, &cfg).unwrap();
        prop_assert!(inv.iters <= cfg.required_iters(p.bounds()) + 2);
        let slack = cfg.tolerance * 1e3;
        let c = p.cdf(inv.x).unwrap();
        prop_assert!((c - z).abs() <= slack, "cdf(x) = {c}, z = {z}");
    }

    #[test]
    fn positive_weights_and_simplex(raw in prop::collection::vec(-100.0f64..100.0, 1..20)) {
        let (w, _) = transform_weights(&raw);
        prop_assert!(w.iter().all(|&v| v > 0.0 && v.is_finite()));
        let s = transform_final(&raw);
        prop_assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn splits_partition_indices(n in 1usize..500, seed in any::<u64>()) {
        let s = Splits::shuffled(n, 0.8, 0.1, seed);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(Splits::shuffled(n, 0.8, 0.1, seed), s);
    }

    #[test]
    fn standardization_round_trips(x in prop::collection::vec(-1e3f64..1e3, 3), shift in -10.0f64..10.0, scale in 0.1f64..10.0) {
        let t = Standardization::new(vec![shift; 3], vec![scale; 3]).unwrap();
        let back = t.invert(&t.apply(&x));
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn conditionals_ignore_later_coordinates(seed in 0u64..1000, x in prop::collection::vec(-1.9f64..1.9, 3), y in prop::collection::vec(-1.9f64..1.9, 3)) {
        let m = small_model(seed);
        let full = m.conditional(&x, 2).unwrap().cdf(0.3).unwrap();
        let mut moved = x.clone();
        moved[0] = y[0];
        prop_assume!((x[0] - y[0]).abs() > 0.1);
        prop_assert_ne!(full, m.conditional(&moved, 2).unwrap().cdf(0.3).unwrap());
        for i in 0..3 {
            let mut z = x.clone();
            z[i..].copy_from_slice(&y[i..]);
            let a = m.conditional(&x, i).unwrap();
            let b = m.conditional(&z, i).unwrap();
            prop_assert_eq!(a.cdf(0.3).unwrap().to_bits(), b.cdf(0.3).unwrap().to_bits());
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in 0u64..1000) {
        let m = small_model(seed);
        let bytes = checkpoint::to_bytes(&m);
        let back = checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(checkpoint::to_bytes(&back), bytes);
        let x = [0.1, -0.4, 1.2];
        prop_assert_eq!(m.log_likelihood(&x).unwrap().to_bits(), back.log_likelihood(&x).unwrap().to_bits());
    }
}
