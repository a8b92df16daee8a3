use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use talsc_core::config::{BiasKind, ExperimentConfig, Mode, SefBackend};
use talsc_core::data::ImageShape;
use talsc_core::metrics::{f1_per_class, macro_f1, ms_ssim, sra, ConfusionMatrix, MsSsimConfig};
use talsc_core::scm::{Sef, SplineSpec};

proptest! {
    #[test]
    fn spline_basis_sums_to_one_inside_domain(
        a in -5.0f64..5.0,
        width in 0.1f64..20.0,
        grid in 1usize..40,
        order in 0usize..5,
        t in 0.0f64..=1.0,
    ) {
        let spec = SplineSpec::new(a, a + width, grid, order).unwrap();
        let x = a + t * width;
        let b = spec.basis(x);
        prop_assert_eq!(b.len(), grid + order);
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(b.iter().all(|&v| v >= -1e-15));
        prop_assert!(b.iter().filter(|&&v| v != 0.0).count() <= order + 1);
    }

    #[test]
    fn significance_stays_in_unit_interval(seed in any::<u64>(), loss in -100.0f64..100.0, kan in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sef = if kan {
            Sef::kan(vec![1, 4, 1], SplineSpec::new(0.0, 10.0, 6, 3).unwrap(), &mut rng).unwrap()
        } else {
            Sef::mlp(&[8], &mut rng).unwrap()
        };
        let v = sef.eval(loss).unwrap();
        prop_assert!((0.0..=1.0).contains(&v), "v = {}", v);
    }

    #[test]
    fn f1_bounded_and_sra_is_trace_ratio(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = ConfusionMatrix::from_predictions(&pred, &truth, 4).unwrap();
        for f in f1_per_class(&m) {
            prop_assert!((0.0..=1.0).contains(&f));
        }
        prop_assert_eq!(sra(&pred, &truth).unwrap(), m.trace() as f64 / m.total() as f64);
    }

    #[test]
    fn macro_f1_ignores_class_relabeling(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = ConfusionMatrix::from_predictions(&pred, &truth, 5).unwrap();
        let pp: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let pt: Vec<usize> = truth.iter().map(|&t| perm[t]).collect();
        let mp = ConfusionMatrix::from_predictions(&pp, &pt, 5).unwrap();
        prop_assert!((macro_f1(&m) - macro_f1(&mp)).abs() < 1e-12);
    }

    #[test]
    fn ms_ssim_symmetric_and_reflexive(
        a in prop::collection::vec(0.0f64..1.0, 256),
        b in prop::collection::vec(0.0f64..1.0, 256),
    ) {
        let shape = ImageShape::new(1, 16, 16);
        let cfg = MsSsimConfig::default();
        let ab = ms_ssim(&a, &b, shape, &cfg).unwrap();
        let ba = ms_ssim(&b, &a, shape, &cfg).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ms_ssim(&a, &a, shape, &cfg).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn config_canonical_form_round_trips(
        seed in 0..=i64::MAX as u64,
        fnr in 0.0f64..0.99,
        snr in -10.0f64..30.0,
        grid in 2usize..64,
        steps in 0usize..5000,
        backend in prop::sample::select(vec![SefBackend::Kan, SefBackend::Mlp, SefBackend::Constant]),
        mode in prop::sample::select(vec![Mode::Talsc, Mode::Baseline, Mode::Both]),
    ) {
        let text = format!(
            "seed = {seed}\nname = \"p\"\nmode = \"{}\"\n[channel]\nkind = \"rayleigh\"\nsnr_db = {snr:?}\n\
             [bias]\nkind = \"flip\"\nfnr = {fnr:?}\n[scm]\ngrid = {grid}\nbackend = \"{}\"\n[train]\nsteps = {steps}\n",
            mode.name(),
            match backend { SefBackend::Kan => "kan", SefBackend::Mlp => "mlp", SefBackend::Constant => "constant" },
        );
        let cfg = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(cfg.bias.kind, BiasKind::Flip);
        let again = ExperimentConfig::parse(&cfg.to_canonical()).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.to_canonical(), cfg.to_canonical());
    }
}
