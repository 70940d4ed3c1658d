use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapeinst::baselines::{
    fit_baseline, kplsr_fit, median_pairwise_distance, plsr_fit, run_baseline_subject,
    select_sigma, BaselineConfig, BaselineMethod, LandmarkMatrix, Matrix, SIGMA_MULTIPLIERS,
};
use shapeinst::dataset::{generate_synthetic_subject, SynthConfig};
use shapeinst::geometry::{pc_to_pc_error, ErrorMode, PointCloud};

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn row(m: &Matrix, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn training_residual(x: &Matrix, y: &Matrix, components: usize) -> f64 {
    let model = plsr_fit(x, y, components).unwrap();
    (0..x.nrows())
        .map(|i| {
            let pred = model.predict(&row(x, i)).unwrap();
            pred.iter()
                .zip(y.row(i).iter())
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
        })
        .sum()
}

fn mean_radius(cloud: &PointCloud) -> f64 {
    let c = cloud.centroid();
    let pts = cloud.points();
    pts.iter()
        .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt())
        .sum::<f64>()
        / pts.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn plsr_residual_never_grows_with_components(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(9, 6, &mut rng);
        let y = random_matrix(9, 12, &mut rng);
        let residuals: Vec<f64> = (1..=5).map(|k| training_residual(&x, &y, k)).collect();
        for w in residuals.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-10) + 1e-12, "{:?}", residuals);
        }
    }

    #[test]
    fn baselines_keep_vertex_order(seed in any::<u64>(), shift in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_vertices = 5;
        let x = random_matrix(8, 4, &mut rng);
        let map = random_matrix(4, 3 * n_vertices, &mut rng);
        let y = &x * &map;
        let rotated = Matrix::from_fn(8, 3 * n_vertices, |i, j| {
            let v = (j / 3 + shift) % n_vertices;
            y[(i, 3 * v + j % 3)]
        });
        let direct = plsr_fit(&x, &y, 4).unwrap();
        let moved = plsr_fit(&x, &rotated, 4).unwrap();
        for i in 0..8 {
            let a = PointCloud::from_flat(&direct.predict(&row(&x, i)).unwrap()).unwrap();
            let b = PointCloud::from_flat(&moved.predict(&row(&x, i)).unwrap()).unwrap();
            for v in 0..n_vertices {
                let truth = &y.row(i);
                for k in 0..3 {
                    let t = truth[3 * v + k];
                    prop_assert!((a.points()[v][k] - t).abs() <= 1e-8 * (1.0 + t.abs()));
                    let shifted = a.points()[(v + shift) % n_vertices][k];
                    prop_assert!((b.points()[v][k] - shifted).abs() <= 1e-8 * (1.0 + t.abs()));
                }
            }
        }
    }
}

#[test]
fn single_row_data_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_matrix(1, 4, &mut rng);
    let y = random_matrix(1, 6, &mut rng);
    assert!(plsr_fit(&x, &y, 1).is_err());
    assert!(kplsr_fit(&x, &y, 1, 1.0).is_err());
}

#[test]
fn training_row_of_linear_data_is_reproduced() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_matrix(10, 3, &mut rng);
    let y = &x * random_matrix(3, 9, &mut rng);
    let model = plsr_fit(&x, &y, 3).unwrap();
    let pred = model.predict(&row(&x, 4)).unwrap();
    for (p, t) in pred.iter().zip(y.row(4).iter()) {
        assert!((p - t).abs() <= 1e-8 * (1.0 + t.abs()));
    }
}

#[test]
fn held_out_synthetic_frames_land_within_the_cloud_radius() {
    let subject = generate_synthetic_subject(4, &SynthConfig::quick()).unwrap();
    let radius = mean_radius(&subject.samples[0].cloud);
    for method in [BaselineMethod::Plsr, BaselineMethod::Kplsr] {
        let report = run_baseline_subject(&subject, method, &BaselineConfig::default()).unwrap();
        assert_eq!(report.folds.len(), subject.num_frames());
        assert_eq!(report.method, method.name());
        for f in &report.folds {
            assert!(f.pc_to_pc_euclidean.is_finite());
            assert!(f.pc_to_pc_euclidean < radius, "{} frame {}", method.name(), f.test_frame);
            let again = pc_to_pc_error(&f.prediction, &f.truth, ErrorMode::Euclidean);
            assert_eq!(again, f.pc_to_pc_euclidean);
        }
    }
}

#[test]
fn baseline_runs_are_deterministic() {
    let subject = generate_synthetic_subject(5, &SynthConfig::quick()).unwrap();
    for method in [BaselineMethod::Plsr, BaselineMethod::Kplsr] {
        let a = run_baseline_subject(&subject, method, &BaselineConfig::default()).unwrap();
        let b = run_baseline_subject(&subject, method, &BaselineConfig::default()).unwrap();
        for (fa, fb) in a.folds.iter().zip(&b.folds) {
            assert_eq!(fa.pc_to_pc_euclidean.to_bits(), fb.pc_to_pc_euclidean.to_bits());
            assert_eq!(fa.prediction, fb.prediction);
        }
    }
}

#[test]
fn chosen_width_comes_from_the_grid() {
    let subject = generate_synthetic_subject(6, &SynthConfig::default()).unwrap();
    let data = LandmarkMatrix::from_subject(&subject).unwrap();
    let train = data.rows(&(2..=subject.num_frames()).collect::<Vec<_>>());
    let median = median_pairwise_distance(&train.x);
    let sigma = select_sigma(&train, 8).unwrap();
    assert!(SIGMA_MULTIPLIERS.iter().any(|m| m * median == sigma), "{sigma} vs median {median}");
    let fixed = BaselineConfig {
        components: Some(3),
        sigma: Some(sigma),
    };
    let auto = BaselineConfig {
        components: Some(3),
        sigma: None,
    };
    let pinned = fit_baseline(BaselineMethod::Kplsr, &train, &fixed).unwrap();
    let x = row(&data.x, 0);
    assert_eq!(pinned.predict(&x).unwrap().len(), 3 * subject.samples[0].cloud.len());
    assert!(fit_baseline(BaselineMethod::Kplsr, &train, &auto).is_ok());
}

#[test]
fn identical_landmarks_cannot_set_a_width() {
    let x = Matrix::from_element(4, 6, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = LandmarkMatrix {
        x,
        y: random_matrix(4, 9, &mut rng),
    };
    assert!(select_sigma(&data, 2).is_err());
}

#[test]
fn unknown_method_name_is_rejected() {
    assert_eq!("kplsr".parse::<BaselineMethod>().unwrap(), BaselineMethod::Kplsr);
    assert!("pca".parse::<BaselineMethod>().is_err());
}
