use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use nystrom_krr::lowrank::{FeatureMap, PivotStop};
use nystrom_krr::regression::{predict, PredictContext};
use nystrom_krr::statistics::{optimal_lambda, default_lambda_grid};
use nystrom_krr::synthetic::{grid_problem, random_design_problem};
use nystrom_krr::{
    gram, krr_exact, krr_lowrank, nystrom, pivoted_ichol, sample_columns, KernelMatrix, KernelSpec, LowRankFactor,
    Points, SpectrumSpec, Spectral,
};

fn psd(entries: &[f64], n: usize, r: usize) -> KernelMatrix {
    let g = DMatrix::from_column_slice(n, r, &entries[..n * r]);
    KernelMatrix::from_dense(&g * g.transpose()).unwrap()
}

fn psd_case() -> impl Strategy<Value = (KernelMatrix, usize, u64, f64)> {
    (2usize..24, 1usize..24).prop_flat_map(|(n, r)| {
        let r = r.min(n);
        (
            prop::collection::vec(-2.0f64..2.0, n * r),
            1..=n,
            any::<u64>(),
            -6.0f64..0.0,
        )
            .prop_map(move |(e, p, seed, ll)| (psd(&e, n, r), p, seed, 10f64.powf(ll)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn factor_smoother_matches_dense_smoother((k, p, seed, lambda) in psd_case()) {
        let n = k.n();
        let f = nystrom(&k, &sample_columns(n, p, seed).unwrap()).unwrap();
        let y = DVector::from_fn(n, |i, _| ((i * 37 % 11) as f64 - 5.0) / 3.0);
        let (_, via_factor) = krr_lowrank(&f, &y, lambda).unwrap();
        let l = KernelMatrix::from_dense(f.approximation()).unwrap();
        let (_, via_dense) = krr_exact(&l, &y, lambda).unwrap();
        let scale = y.norm().max(1.0);
        prop_assert!((&via_factor - &via_dense).norm() <= 1e-7 * scale);
    }

    #[test]
    fn dof_chain_holds((k, _p, _seed, lambda) in psd_case()) {
        let s = Spectral::from_kernel(&k, None).unwrap();
        let slack = 1e-10 * k.n() as f64;
        prop_assert!(s.d_max(lambda) + slack >= s.d_trace(lambda));
        prop_assert!(s.d_trace(lambda) + slack >= s.d_ave(lambda));
    }

    #[test]
    fn low_rank_error_never_beats_bias_floor((k, p, seed, lambda) in psd_case()) {
        // The factor's bias at lambda -> 0 is the squared residual of z
        // outside range(L), which contains at least the residual outside range(K).
        let n = k.n();
        let z = DVector::from_fn(n, |i, _| (i as f64 * 0.7).sin());
        let f = nystrom(&k, &sample_columns(n, p, seed).unwrap()).unwrap();
        let low = Spectral::from_factor(f.phi(), Some(&z)).unwrap();
        let full = Spectral::from_kernel(&k, Some(&z)).unwrap();
        prop_assert!(low.bias(lambda * 1e-6) >= full.bias(lambda * 1e-6) - 1e-9 * (1.0 + z.norm_squared()));
    }
}

#[test]
fn grid_problem_spectra_agree_across_routes() {
    let p = grid_problem(48, SpectrumSpec::polynomial(1, 2.0), 0.1).unwrap();
    let circ = p.spectral().unwrap();
    let dense = p.dense_spectral().unwrap();
    for lambda in [1e-5, 1e-3, 1e-1] {
        let (a, b) = (circ.error(lambda, 0.1), dense.error(lambda, 0.1));
        assert!((a - b).abs() <= 1e-8 * b, "{a} vs {b}");
        assert!((circ.d_max(lambda) - dense.d_max(lambda)).abs() <= 1e-8 * dense.d_max(lambda));
    }
}

#[test]
fn pivoted_features_predict_like_the_factor() {
    let p = random_design_problem(60, SpectrumSpec::polynomial(2, 4.0), 0.0, 3).unwrap();
    let f = pivoted_ichol(&p.k, PivotStop::rank(25)).unwrap();
    let (fit, fitted) = krr_lowrank(&f, &p.z, 1e-4).unwrap();
    let map = FeatureMap::new(&f, &p.points, p.kernel).unwrap();
    let again = predict(&fit, &p.points, PredictContext::Features(&map)).unwrap();
    assert!((&fitted - &again).norm() <= 1e-8 * fitted.norm());
}

#[test]
fn factor_round_trips_through_csv() {
    let points = Points::from_scalars((0..20).map(|i| i as f64 / 20.0).collect());
    let k = gram(&points, &KernelSpec::PeriodicPolynomial { beta: 1 }).unwrap();
    let f = nystrom(&k, &sample_columns(20, 7, 1).unwrap()).unwrap();
    let mut buf = Vec::new();
    f.write_csv(&mut buf).unwrap();
    let back = LowRankFactor::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.phi(), f.phi());
    assert_eq!(back.selection().indices(), f.selection().indices());
}

#[test]
fn optimal_lambda_tracks_noise_level() {
    let quiet = grid_problem(64, SpectrumSpec::polynomial(1, 2.0), 1e-4).unwrap();
    let loud = grid_problem(64, SpectrumSpec::polynomial(1, 2.0), 1e-1).unwrap();
    let grid = default_lambda_grid(quiet.k.trace() / 64.0);
    let a = optimal_lambda(&quiet, &grid).unwrap();
    let b = optimal_lambda(&loud, &grid).unwrap();
    assert!(a.lambda < b.lambda);
    assert!(a.error < b.error);
}
