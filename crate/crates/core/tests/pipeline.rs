//! Cross-module integration: empirical orthonormality of the estimated
//! eigenfunctions, end-to-end fits on simulated data, file round-trips, and
//! property-based invariants.

use proptest::prelude::*;

use spectral_cde::dataset::{self, Dataset, Points, Sample, SplitSpec};
use spectral_cde::density::{normalize, remove_bumps, DensityGrid, ZGrid};
use spectral_cde::estimator::{
    default_epsilon_grid, tune, tune_delta, CdeModel, ConditionalDensity, TuneGrids, TuneOptions,
};
use spectral_cde::evaluation::{self, evaluate};
use spectral_cde::kernel::{gram, kernel_eval, KernelSpec};
use spectral_cde::simgen::Scenario;
use spectral_cde::spectral::{EigMethod, SpectralBasis};
use spectral_cde::zbasis::ZBasis;
use spectral_cde::GramMatrix;

fn split_scenario(sc: &Scenario, n: usize, seed: u64) -> (Dataset, Dataset, Dataset) {
    let raw = sc.generate(n).unwrap();
    let spec = SplitSpec::new(0.7, 0.15, 0.15, seed).unwrap();
    let (train, val, test) = dataset::split(&raw, &spec).unwrap();
    let train = dataset::rescale_response(&train).unwrap();
    let t = train.z_transform();
    (train, val.with_response_transform(t), test.with_response_transform(t))
}

#[test]
fn eigenfunctions_are_empirically_orthonormal_on_manifold() {
    // The estimated basis is orthonormal with respect to the sampling
    // distribution: on a fresh sample the Gram of the extended
    // eigenfunctions is close to the identity.
    let sc = Scenario::manifold(10, 42);
    let train = sc.generate(1000).unwrap();
    let eps = default_epsilon_grid(train.points(), 1)[0];
    let basis = SpectralBasis::fit(
        train.points().clone(),
        &KernelSpec::gaussian(eps),
        5,
        &EigMethod::Dense,
    )
    .unwrap();

    let fresh = Scenario::manifold(10, 4242).generate(2000).unwrap();
    let m = fresh.n() as f64;
    let psi = basis
        .nystrom_eval_batch(fresh.points(), 1..=5)
        .unwrap();
    for j in 0..5 {
        for l in 0..5 {
            let avg: f64 = (0..fresh.n()).map(|k| psi[(k, j)] * psi[(k, l)]).sum::<f64>() / m;
            let expect = if j == l { 1.0 } else { 0.0 };
            assert!(
                (avg - expect).abs() < 0.15,
                "({j}, {l}): {avg} vs {expect}"
            );
        }
    }
}

#[test]
fn tuned_series_beats_uniform_on_one_relevant() {
    let sc = Scenario::one_relevant(3, 7);
    let (train, val, test) = split_scenario(&sc, 600, 1);
    let grids = TuneGrids {
        epsilon: default_epsilon_grid(train.points(), 4),
        i_values: (1..=12).collect(),
        j_values: (1..=12).collect(),
    };
    let (model, report) = tune(&train, &val, &grids, &ZBasis::fourier(), &TuneOptions::default())
        .unwrap();
    assert_eq!(report.coefficient_fits, 4);
    let grid = ZGrid::default_unit();
    let (delta, _) = tune_delta(&model, &val, &[0.0, 0.025, 0.05, 0.1], &grid).unwrap();
    let model = model.with_delta(delta).unwrap();

    let (eval_report, us) = evaluate(&model, &test, &grid, 200, 9).unwrap();
    // The uniform density has loss exactly -1; a tuned fit must do better.
    assert!(
        eval_report.loss < -1.2,
        "tuned loss {} not clearly below uniform",
        eval_report.loss
    );
    assert!(eval_report.loss_se > 0.0);
    assert_eq!(us.len(), test.n());
    assert!(us.iter().all(|&u| (0.0..=1.0).contains(&u)));
}

#[test]
fn model_file_round_trip_preserves_predictions() {
    let sc = Scenario::one_relevant(2, 11);
    let (train, val, _) = split_scenario(&sc, 200, 3);
    let grids = TuneGrids {
        epsilon: default_epsilon_grid(train.points(), 2),
        i_values: vec![2, 4],
        j_values: vec![2, 4],
    };
    let (model, _) = tune(&train, &val, &grids, &ZBasis::fourier(), &TuneOptions::default())
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    {
        let mut f = std::fs::File::create(&path).unwrap();
        model.write_to(&mut f).unwrap();
    }
    let mut f = std::fs::File::open(&path).unwrap();
    let back = CdeModel::read_from(&mut f).unwrap();
    let grid = ZGrid::uniform01(256);
    let x = train.x(0);
    let a = model.predict_density(x, &grid).unwrap();
    let b = back.predict_density(x, &grid).unwrap();
    for (u, v) in a.values().iter().zip(b.values()) {
        assert_eq!(u.to_bits(), v.to_bits());
    }
}

#[test]
fn gram_cache_file_round_trip() {
    let sc = Scenario::manifold(4, 13);
    let ds = sc.generate(60).unwrap();
    let spec = KernelSpec::gaussian(0.3).with_sparsity_threshold(0.05);
    let g = gram(ds.points(), &spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gram.bin");
    {
        let mut f = std::fs::File::create(&path).unwrap();
        g.write_to(&mut f).unwrap();
    }
    let mut f = std::fs::File::open(&path).unwrap();
    let back = GramMatrix::read_from(&mut f).unwrap();
    assert_eq!(back.n(), g.n());
    assert!(back.is_sparse());
    for i in 0..g.n() {
        for j in 0..g.n() {
            assert_eq!(back.value(i, j).to_bits(), g.value(i, j).to_bits());
        }
    }
}

#[test]
fn semi_supervised_basis_improves_or_matches_plain_fit() {
    // Including unlabeled covariates enlarges the Gram matrix; the pipeline
    // must run end to end and produce a bona fide predictive density.
    let sc = Scenario::manifold(6, 17);
    let (train, val, _) = split_scenario(&sc, 300, 5);
    let unlabeled = Scenario::manifold(6, 99).generate(150).unwrap();
    let grids = TuneGrids {
        epsilon: default_epsilon_grid(train.points(), 2),
        i_values: (1..=6).collect(),
        j_values: (1..=8).collect(),
    };
    let options = TuneOptions {
        unlabeled: Some(unlabeled.points().clone()),
        ..TuneOptions::default()
    };
    let (model, _) = tune(&train, &val, &grids, &ZBasis::fourier(), &options).unwrap();
    assert_eq!(model.basis().n(), train.n() + 150);
    let grid = ZGrid::default_unit();
    let d = model.predict_density(val.x(0), &grid).unwrap();
    assert!(d.min_value() >= 0.0);
    assert!((d.integral() - 1.0).abs() <= 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalize_always_emits_bona_fide_density(
        values in prop::collection::vec(-5.0f64..5.0, 16..80),
    ) {
        let grid = ZGrid::uniform01(values.len());
        let raw = DensityGrid::new_raw(grid, values).unwrap();
        let out = normalize(&raw);
        prop_assert!(out.min_value() >= 0.0);
        prop_assert!((out.integral() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn remove_bumps_keeps_densities_bona_fide(
        values in prop::collection::vec(-1.0f64..4.0, 32..96),
        delta in 0.0f64..0.5,
    ) {
        let grid = ZGrid::uniform01(values.len());
        let d = normalize(&DensityGrid::new_raw(grid, values).unwrap());
        let out = remove_bumps(&d, delta).unwrap();
        prop_assert!(out.min_value() >= 0.0);
        prop_assert!((out.integral() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn split_partitions_indices(n in 10usize..200, seed in 0u64..1000) {
        let xs: Vec<Sample> = (0..n)
            .map(|i| Sample { x: vec![i as f64], z: Some(i as f64) })
            .collect();
        let ds = Dataset::from_samples(&xs).unwrap();
        let spec = SplitSpec::new(0.7, 0.15, 0.15, seed).unwrap();
        let (tr, va, te) = dataset::split(&ds, &spec).unwrap();
        prop_assert_eq!(tr.n() + va.n() + te.n(), n);
        let mut seen = vec![false; n];
        for part in [&tr, &va, &te] {
            for i in 0..part.n() {
                let idx = part.x(i)[0] as usize;
                prop_assert!(!seen[idx], "index {} appears twice", idx);
                seen[idx] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn kernel_is_bitwise_symmetric(
        x in prop::collection::vec(-10.0f64..10.0, 3),
        y in prop::collection::vec(-10.0f64..10.0, 3),
        eps in 0.01f64..10.0,
    ) {
        let spec = KernelSpec::gaussian(eps);
        let a = kernel_eval(&spec, &x, &y).unwrap();
        let b = kernel_eval(&spec, &y, &x).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert!(a > 0.0 && a <= 1.0);
    }

    #[test]
    fn response_rescaling_round_trips(
        zs in prop::collection::vec(-100.0f64..100.0, 3..40),
    ) {
        let distinct = zs.iter().any(|&z| z != zs[0]);
        prop_assume!(distinct);
        let samples: Vec<Sample> = zs
            .iter()
            .map(|&z| Sample { x: vec![0.0], z: Some(z) })
            .collect();
        let ds = Dataset::from_samples(&samples).unwrap();
        let rescaled = dataset::rescale_response(&ds).unwrap();
        let t = rescaled.z_transform();
        for (i, &z) in zs.iter().enumerate() {
            let u = rescaled.z(i).unwrap();
            prop_assert!((0.0..=1.0).contains(&u));
            prop_assert!((t.from_unit(u) - z).abs() <= 1e-12 * z.abs().max(1.0));
        }
    }

    #[test]
    fn bootstrap_se_nonnegative_and_seeded(
        contributions in prop::collection::vec(-3.0f64..3.0, 2..30),
        seed in 0u64..500,
    ) {
        let a = evaluation::bootstrap_se(&contributions, 50, seed).unwrap();
        let b = evaluation::bootstrap_se(&contributions, 50, seed).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn estimator_cdf_is_monotone_for_fitted_model() {
    let sc = Scenario::one_relevant(2, 23);
    let (train, val, _) = split_scenario(&sc, 250, 7);
    let grids = TuneGrids {
        epsilon: default_epsilon_grid(train.points(), 2),
        i_values: (1..=8).collect(),
        j_values: (1..=6).collect(),
    };
    let (model, _) = tune(&train, &val, &grids, &ZBasis::fourier(), &TuneOptions::default())
        .unwrap();
    let x = val.x(0);
    let mut prev = -1.0;
    for g in 0..=50 {
        let z = g as f64 / 50.0;
        let c = model.predict_cdf(x, z).unwrap();
        assert!(c >= prev - 1e-12);
        assert!((0.0..=1.0).contains(&c));
        prev = c;
    }
    assert_eq!(model.predict_cdf(x, 1.0).unwrap(), 1.0);
    assert_eq!(model.predict_cdf(x, 0.0).unwrap(), 0.0);
}

#[test]
fn indicator_basis_pipeline_on_binned_labels() {
    // Integer labels plus uniform jitter: the indicator selection rule picks
    // the binned form, which is Lebesgue-orthonormal on the unit scale and
    // plugs into the full pipeline.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
    let n = 400;
    let samples: Vec<Sample> = (0..n)
        .map(|_| {
            let label = rng.gen_range(0..3) as f64;
            let x = vec![label + rng.gen_range(-0.2..0.2), rng.gen_range(-1.0..1.0)];
            let z = label + rng.gen_range(-0.5..0.5);
            Sample { x, z: Some(z) }
        })
        .collect();
    let ds = Dataset::from_samples(&samples).unwrap();
    let spec = SplitSpec::new(0.7, 0.15, 0.15, 2).unwrap();
    let (train, val, test) = dataset::split(&ds, &spec).unwrap();
    let train = dataset::rescale_response(&train).unwrap();
    let t = train.z_transform();
    let val = val.with_response_transform(t);
    let test = test.with_response_transform(t);

    let zb = ZBasis::indicator_for(&train).unwrap();
    assert!(matches!(zb, ZBasis::IndicatorBinned { .. }));
    let p = zb.max_index().unwrap();
    let grids = TuneGrids {
        epsilon: default_epsilon_grid(train.points(), 3),
        i_values: (1..=p).collect(),
        j_values: (1..=8).collect(),
    };
    let (model, _) = tune(&train, &val, &grids, &zb, &TuneOptions::default()).unwrap();
    let grid = ZGrid::default_unit();
    let loss = evaluation::test_loss(&model, &test, &grid).unwrap();
    assert!(loss < -1.0, "indicator fit loss {loss} no better than uniform");
}

#[test]
fn discrete_indicator_is_rejected_by_continuous_pipeline() {
    let samples: Vec<Sample> = (0..30)
        .map(|i| Sample {
            x: vec![i as f64],
            z: Some((i % 3) as f64),
        })
        .collect();
    let ds = Dataset::from_samples(&samples).unwrap();
    let zb = ZBasis::indicator_for(&ds).unwrap();
    assert!(matches!(zb, ZBasis::IndicatorDiscrete { .. }));
    let grids = TuneGrids {
        epsilon: vec![0.5],
        i_values: vec![1],
        j_values: vec![1],
    };
    let err = tune(&ds, &ds, &grids, &zb, &TuneOptions::default()).unwrap_err();
    assert!(matches!(err, spectral_cde::CdeError::UnsupportedBasis(_)));
}
