use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapeinst::geometry::{
    chamfer_distance, chamfer_loss, correspondence_distance, correspondence_loss, pc_to_pc_error,
    read_ply, squared_distance, write_ply, CorrespondenceNorm, ErrorMode, NearestNeighborIndex,
    Point3, PointCloud,
};
use shapeinst::tensor::{Tape, Tensor};

fn random_cloud(n: usize, rng: &mut impl Rng, scale: f64) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                ]
            })
            .collect(),
    )
    .unwrap()
}

fn brute_nearest(q: &Point3, cloud: &PointCloud) -> f64 {
    let mut best = f64::INFINITY;
    for p in cloud.points() {
        let d = squared_distance(q, p);
        if d < best {
            best = d;
        }
    }
    best
}

fn brute_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    let mut s1 = 0.0;
    for p in a.points() {
        s1 += brute_nearest(p, b);
    }
    let mut s2 = 0.0;
    for p in b.points() {
        s2 += brute_nearest(p, a);
    }
    s1 + s2
}

fn brute_pc_to_pc(a: &PointCloud, b: &PointCloud, euclidean: bool) -> f64 {
    let mut s = 0.0;
    for p in a.points() {
        let d = brute_nearest(p, b);
        s += if euclidean { d.sqrt() } else { d };
    }
    s / a.len() as f64
}

fn chamfer_via_tape(pred: &PointCloud, truth: &PointCloud, normalize: bool) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let flat = Tensor::new(vec![pred.len(), 3], pred.to_flat()).unwrap();
    let v = tape.variable(flat);
    let loss = chamfer_loss(&mut tape, v, truth, normalize).unwrap();
    let value = tape.value(loss).item().unwrap();
    let grad = tape.backward(loss).unwrap().wrt(v).unwrap().to_vec();
    (value, grad)
}

#[test]
fn metrics_match_brute_force_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_cloud(50, &mut rng, 10.0);
    let b = random_cloud(50, &mut rng, 10.0);
    assert_eq!(chamfer_distance(&a, &b), brute_chamfer(&a, &b));
    assert_eq!(chamfer_via_tape(&a, &b, false).0, brute_chamfer(&a, &b));

    let p = random_cloud(100, &mut rng, 10.0);
    let t = random_cloud(80, &mut rng, 10.0);
    assert_eq!(pc_to_pc_error(&p, &t, ErrorMode::Squared), brute_pc_to_pc(&p, &t, false));
    assert_eq!(pc_to_pc_error(&p, &t, ErrorMode::Euclidean), brute_pc_to_pc(&p, &t, true));
}

#[test]
fn identical_clouds_score_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_cloud(30, &mut rng, 5.0);
    assert_eq!(chamfer_distance(&a, &a), 0.0);
    assert_eq!(pc_to_pc_error(&a, &a, ErrorMode::Squared), 0.0);
    assert_eq!(pc_to_pc_error(&a, &a, ErrorMode::Euclidean), 0.0);
    for norm in [CorrespondenceNorm::L1, CorrespondenceNorm::L2] {
        assert_eq!(correspondence_distance(&a, &a, norm).unwrap(), 0.0);
    }
}

#[test]
fn correspondence_matches_index_paired_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_cloud(40, &mut rng, 3.0);
    let b = random_cloud(40, &mut rng, 3.0);
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (p, q) in a.points().iter().zip(b.points()) {
        l1 += (p[0] - q[0]).abs() + (p[1] - q[1]).abs() + (p[2] - q[2]).abs();
        l2 += squared_distance(p, q);
    }
    l1 /= 40.0;
    l2 /= 40.0;
    let got1 = correspondence_distance(&a, &b, CorrespondenceNorm::L1).unwrap();
    let got2 = correspondence_distance(&a, &b, CorrespondenceNorm::L2).unwrap();
    assert!((got1 - l1).abs() <= 1e-12 * l1);
    assert!((got2 - l2).abs() <= 1e-12 * l2);

    let short = random_cloud(39, &mut rng, 3.0);
    assert!(correspondence_distance(&a, &short, CorrespondenceNorm::L1).is_err());
}

#[test]
fn correspondence_loss_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random_cloud(6, &mut rng, 3.0);
    let b = random_cloud(6, &mut rng, 3.0);
    for norm in [CorrespondenceNorm::L1, CorrespondenceNorm::L2] {
        let eval = |flat: &[f64]| {
            let mut tape = Tape::new();
            let v = tape.variable(Tensor::new(vec![6, 3], flat.to_vec()).unwrap());
            let l = correspondence_loss(&mut tape, v, &b, norm).unwrap();
            let value = tape.value(l).item().unwrap();
            (value, tape.backward(l).unwrap().wrt(v).unwrap().to_vec())
        };
        let base = a.to_flat();
        let (_, grad) = eval(&base);
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += 1e-6;
            let mut minus = base.clone();
            minus[i] -= 1e-6;
            let fd = (eval(&plus).0 - eval(&minus).0) / 2e-6;
            assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", grad[i]);
        }
    }
}

#[test]
fn chamfer_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for normalize in [false, true] {
        let pred = random_cloud(12, &mut rng, 4.0);
        let truth = random_cloud(9, &mut rng, 4.0);
        let (_, grad) = chamfer_via_tape(&pred, &truth, normalize);
        let base = pred.to_flat();
        let step = 1e-5;
        for i in 0..base.len() {
            let shifted = |delta: f64| {
                let mut c = base.clone();
                c[i] += delta;
                chamfer_via_tape(&PointCloud::from_flat(&c).unwrap(), &truth, normalize).0
            };
            let fd = (shifted(step) - shifted(-step)) / (2.0 * step);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(err < 1e-4, "coordinate {i}: fd {fd} vs analytic {}", grad[i]);
        }
    }
}

#[test]
fn empty_clouds_are_rejected() {
    assert!(PointCloud::new(Vec::new()).is_err());
    assert!(PointCloud::from_flat(&[]).is_err());
}

#[test]
fn ply_quality_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cloud = random_cloud(25, &mut rng, 100.0);
    let quality: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..3.0)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ply");
    write_ply(&path, &cloud, Some(&quality)).unwrap();
    let back = read_ply(&path).unwrap();
    assert_eq!(back.cloud, cloud);
    assert_eq!(back.quality.unwrap(), quality);
}

fn cloud_strategy(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 1..max)
        .prop_map(|pts| PointCloud::new(pts).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric(a in cloud_strategy(60), b in cloud_strategy(60)) {
        prop_assert_eq!(chamfer_distance(&a, &b), chamfer_distance(&b, &a));
    }

    #[test]
    fn metrics_ignore_point_order(a in cloud_strategy(60), b in cloud_strategy(60), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pa = a.points().to_vec();
        let mut pb = b.points().to_vec();
        pa.shuffle(&mut rng);
        pb.shuffle(&mut rng);
        let (sa, sb) = (PointCloud::new(pa).unwrap(), PointCloud::new(pb).unwrap());
        let tol = |x: f64| 1e-9 * (1.0 + x.abs());
        let c = chamfer_distance(&a, &b);
        prop_assert!((chamfer_distance(&sa, &sb) - c).abs() <= tol(c));
        for mode in [ErrorMode::Squared, ErrorMode::Euclidean] {
            let e = pc_to_pc_error(&a, &b, mode);
            prop_assert!((pc_to_pc_error(&sa, &sb, mode) - e).abs() <= tol(e));
        }
    }

    #[test]
    fn metrics_ignore_shared_translation(
        a in cloud_strategy(40),
        b in cloud_strategy(40),
        shift in prop::array::uniform3(-20.0f64..20.0),
    ) {
        let (ta, tb) = (a.translated(shift), b.translated(shift));
        let c = chamfer_distance(&a, &b);
        prop_assert!((chamfer_distance(&ta, &tb) - c).abs() <= 1e-9 * (1.0 + c));
        let e = pc_to_pc_error(&a, &b, ErrorMode::Euclidean);
        prop_assert!((pc_to_pc_error(&ta, &tb, ErrorMode::Euclidean) - e).abs() <= 1e-9 * (1.0 + e));
    }

    #[test]
    fn chamfer_zero_iff_same_point_set(a in cloud_strategy(30), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = a.points().to_vec();
        let extra = pts[rng.random_range(0..pts.len())];
        pts.push(extra);
        pts.shuffle(&mut rng);
        let same_set = PointCloud::new(pts.clone()).unwrap();
        prop_assert_eq!(chamfer_distance(&a, &same_set), 0.0);
        pts[0][0] += 0.5;
        let moved = PointCloud::new(pts).unwrap();
        prop_assert!(chamfer_distance(&a, &moved) > 0.0);
    }

    #[test]
    fn index_matches_linear_scan(cloud in cloud_strategy(200), q in prop::array::uniform3(-60.0f64..60.0)) {
        let index = NearestNeighborIndex::build(&cloud);
        let (i, d) = index.nearest(&q);
        let mut best = (0, f64::INFINITY);
        for (j, p) in cloud.points().iter().enumerate() {
            let dj = squared_distance(&q, p);
            if dj < best.1 {
                best = (j, dj);
            }
        }
        prop_assert_eq!((i, d), best);
    }

    #[test]
    fn ply_round_trip_is_exact(cloud in cloud_strategy(50)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ply");
        write_ply(&path, &cloud, None).unwrap();
        prop_assert_eq!(read_ply(&path).unwrap().cloud, cloud);
    }
}
