use nalgebra::DMatrix;
use proptest::prelude::*;
use rfconc_core::dataset::{load_csv, orthogonality_profile, sample_sphere, write_csv, DataMatrix};
use rfconc_core::experiment::{
    emit_csv, fit_slope, parse_csv, run_sweep, Baseline, BaselineKind, DataConfig, EllChoice, ExperimentConfig,
    Metric, TeacherConfig,
};
use rfconc_core::hermite::{expand_activation, ActivationSpec};
use rfconc_core::kernel::{cache, empirical_ck, expected_kernel, RandomFeatureMap, DEFAULT_SERIES_TOL};
use rfconc_core::par::with_threads;

fn config() -> ExperimentConfig {
    ExperimentConfig {
        data: DataConfig::sphere(300, 16),
        activation: ActivationSpec::poly5(),
        teacher: TeacherConfig {
            tau: ActivationSpec::softplus(),
            sigma_eps: 0.3,
        },
        ell: EllChoice::Auto,
        baseline: Baseline::Expected,
        lambda_grid: vec![0.1, 1.0],
        n_grid: vec![128, 256, 512, 1024],
        trials: 2,
        b: 2,
        m: 30,
        root_seed: 11,
        metrics: vec![Metric::Train, Metric::Loocv, Metric::Gcv, Metric::Test],
        k_max: 16,
    }
}

#[test]
fn sphere_data_survives_a_csv_round_trip() {
    let data = sample_sphere(7, 5, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    write_csv(&data, &path).unwrap();
    let back = load_csv(&path, None, 0).unwrap();
    assert!((back.matrix() - data.matrix()).amax() < 1e-9);
}

#[test]
fn cached_kernel_is_bitwise_identical() {
    let data = sample_sphere(30, 12, 4).unwrap();
    let fm = RandomFeatureMap::new(200, 30, 5, ActivationSpec::relu()).unwrap();
    let k = empirical_ck(&fm, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.bin");
    cache::save(&k, &path).unwrap();
    let back = cache::load(&path).unwrap();
    assert_eq!(back.matrix(), k.matrix());
    assert_eq!(back.provenance(), k.provenance());
}

#[test]
fn sweep_csv_round_trip_and_slopes() {
    let r = run_sweep(&config()).unwrap();
    assert_eq!(r.rows.len(), 4 * 2 * 4 * 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    emit_csv(&r, &path).unwrap();
    let mut back = parse_csv(&path).unwrap();
    let mut want = r.rows.clone();
    for row in want.iter_mut() {
        row.stderr = None;
    }
    assert_eq!(back.len(), want.len());
    back.iter_mut().zip(&want).for_each(|(a, b)| assert_eq!(a, b));
    for m in [Metric::Train, Metric::Loocv, Metric::Gcv, Metric::Test] {
        let f = fit_slope(&r.rows, m, 0.1).unwrap();
        assert_eq!(f.points, 4);
        assert!(f.slope.is_finite());
    }
    assert!(r.rows.iter().filter(|x| x.metric == Metric::Test).all(|x| x.stderr.is_some()));
}

#[test]
fn polynomial_baseline_of_full_degree_matches_expected() {
    let mut cfg = config();
    cfg.metrics = vec![Metric::Train, Metric::Loocv, Metric::Gcv];
    let a = run_sweep(&cfg).unwrap();
    cfg.baseline = Baseline::Polynomial;
    cfg.ell = EllChoice::Fixed(5);
    let b = run_sweep(&cfg).unwrap();
    assert_eq!(b.kernel_baseline, BaselineKind::Polynomial(5));
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.rf_value, y.rf_value);
        assert!((x.kernel_value - y.kernel_value).abs() <= 1e-10 * x.kernel_value.abs().max(1.0));
    }
}

#[test]
fn thread_count_does_not_change_kernels() {
    let data = sample_sphere(64, 20, 8).unwrap();
    let fm = RandomFeatureMap::new(3000, 64, 9, ActivationSpec::softplus()).unwrap().with_block_rows(128);
    let one = with_threads(Some(1), || empirical_ck(&fm, &data).unwrap());
    let three = with_threads(Some(3), || empirical_ck(&fm, &data).unwrap());
    assert_eq!(one.matrix(), three.matrix());
}

#[test]
fn expected_kernel_diagonal_is_the_activation_norm() {
    let data = sample_sphere(500, 30, 3).unwrap();
    let hp = expand_activation(&ActivationSpec::poly5(), 8, 1e-10).unwrap();
    let k = expected_kernel(&data, &hp, DEFAULT_SERIES_TOL).unwrap();
    for i in 0..30 {
        assert_eq!(k.matrix()[(i, i)], hp.l2_norm_sq);
    }
}

fn unit_columns(d: usize, n: usize, raw: Vec<f64>) -> Option<DataMatrix> {
    let x = DMatrix::from_vec(d, n, raw);
    if x.column_iter().any(|c| c.norm() < 1e-3) {
        return None;
    }
    DataMatrix::normalized(x).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deltas_obey_the_power_bound_and_ignore_order(
        raw in proptest::collection::vec(-1.0f64..1.0, 6 * 5),
        shift in 0usize..5,
    ) {
        let Some(data) = unit_columns(6, 5, raw) else { return Ok(()) };
        let p = orthogonality_profile(&data, 6);
        for (ell, delta) in p.deltas.iter().enumerate() {
            prop_assert!(*delta <= 5.0 * p.eps_n.powi(ell as i32 + 1) + 1e-12);
            if ell > 0 {
                prop_assert!(*delta <= p.deltas[ell - 1] + 1e-15);
            }
        }
        let idx: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
        let q = orthogonality_profile(&data.select_columns(&idx), 6);
        prop_assert!((q.eps_n - p.eps_n).abs() < 1e-15);
        for (a, b) in p.deltas.iter().zip(&q.deltas) {
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn tail_mass_is_nonincreasing_for_hermite_polynomials(
        coeffs in proptest::collection::vec(-2.0f64..2.0, 1..7),
    ) {
        let act = ActivationSpec::hermite_poly(coeffs.clone()).unwrap();
        let hp = expand_activation(&act, 8, 1e-10).unwrap();
        let sum: f64 = coeffs.iter().map(|c| c * c).sum();
        prop_assert!((hp.l2_norm_sq - sum).abs() <= 1e-10 * sum.max(1.0));
        let mut prev = f64::INFINITY;
        for ell in 0..=8 {
            let t = hp.tail_mass(ell).unwrap();
            prop_assert!(t >= 0.0 && t <= prev + 1e-12);
            prev = t;
        }
    }
}

#[test]
fn poly5_on_square_sphere_data_has_no_admissible_ell() {
    use rfconc_core::dataset::select_ell;
    use rfconc_core::Error;
    let hp = expand_activation(&ActivationSpec::poly5(), 8, 1e-10).unwrap();
    for seed in 0..3 {
        let data = sample_sphere(500, 500, seed).unwrap();
        let mut p = orthogonality_profile(&data, 8);
        let r = select_ell(&mut p, &hp);
        assert!(matches!(r, Err(Error::NoAdmissibleEll { .. })), "seed {seed}: {r:?} deltas {:?}", p.deltas);
        assert!(p.angle_ok && !p.cond13_ok);
    }
}
