use chansense::geom::Vec3;
use chansense::recon::{
    imu_propagate, propagation_jacobian, run_odometry, simulate_corridor, update_state, CorridorSpec, DriveNoise,
    ImuNoise, ImuSample, KdTree, LidarMatch, Mat15, NavState, OdometryConfig, Plane, ResidualSet, Scan,
    SpatialIndex, UpdateOptions, Vec15, VoxelMap,
};
use nalgebra::Rotation3;

fn corner_room() -> Vec<Vec3> {
    let mut pts = vec![];
    for i in 0..20 {
        for j in 0..20 {
            let (a, b) = (0.2 * i as f64, 0.2 * j as f64);
            pts.push(Vec3::new(0.0, a, b));
            pts.push(Vec3::new(a, 0.0, b));
            pts.push(Vec3::new(a, b, 0.0));
        }
    }
    pts
}

#[test]
fn corner_room_recovers_translation_offset() {
    let truth = NavState::at_rest(Vec3::new(1.5, 1.2, 1.0), 0.0);
    let mut prior = truth.clone();
    prior.position -= Vec3::new(0.2, 0.0, 0.0);
    let mut cov = Mat15::identity() * 1e4;
    for k in 0..3 {
        cov[(k, k)] = 1e2;
    }
    let lidar = corner_room()
        .into_iter()
        .step_by(7)
        .map(|w| {
            let n = if w.x == 0.0 {
                Vec3::x()
            } else if w.y == 0.0 {
                Vec3::y()
            } else {
                Vec3::z()
            };
            LidarMatch {
                point: truth.rotation.inverse() * (w - truth.position),
                plane: Plane { normal: n, offset: 0.0, rms: 0.0 },
                variance: 1e-4,
            }
        })
        .collect();
    let set = ResidualSet { prior: prior.clone(), prior_cov: cov, lidar };
    let out = update_state(&prior, &set, &UpdateOptions::default()).unwrap();
    assert!(out.converged && !out.failed);
    assert!((out.state.position - truth.position).norm() < 1e-6, "{}", out.state.position);
    assert!(out.costs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn cost_never_increases_from_rough_start() {
    let truth = NavState::at_rest(Vec3::new(1.0, 1.0, 1.0), 0.0);
    let mut start = truth.clone();
    start.rotation = Rotation3::from_euler_angles(0.3, -0.2, 0.4);
    start.position += Vec3::new(0.5, -0.4, 0.3);
    let lidar = corner_room()
        .into_iter()
        .step_by(5)
        .map(|w| {
            let n = if w.x == 0.0 {
                Vec3::x()
            } else if w.y == 0.0 {
                Vec3::y()
            } else {
                Vec3::z()
            };
            LidarMatch { point: w - truth.position, plane: Plane { normal: n, offset: 0.0, rms: 0.0 }, variance: 1e-4 }
        })
        .collect();
    let set = ResidualSet { prior: start.clone(), prior_cov: Mat15::identity() * 1e6, lidar };
    let out = update_state(&start, &set, &UpdateOptions { max_iterations: 50, ..Default::default() }).unwrap();
    for w in out.costs.windows(2) {
        assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
    }
    assert!((out.state.position - truth.position).norm() < 1e-3);
}

#[test]
fn propagation_jacobian_matches_finite_differences() {
    let mut x = NavState::at_rest(Vec3::new(0.1, 0.2, 0.3), 0.0);
    x.rotation = Rotation3::from_euler_angles(0.1, 0.3, -0.7);
    x.velocity = Vec3::new(1.0, -0.5, 0.2);
    x.gyro_bias = Vec3::new(0.01, 0.0, -0.02);
    x.accel_bias = Vec3::new(0.05, -0.02, 0.01);
    let imu = ImuSample { gyro: Vec3::new(0.3, -0.2, 0.5), accel: Vec3::new(0.5, 0.2, 9.9), timestamp: 0.0 };
    let dt = 0.005;
    let g = chansense::recon::gravity();
    let (f, _) = propagation_jacobian(&x, &imu, dt, &ImuNoise::default());
    let base = imu_propagate(&x, &imu, dt, &g).unwrap();
    let h = 1e-6;
    for k in 0..15 {
        let mut d = Vec15::zeros();
        d[k] = h;
        let plus = imu_propagate(&x.boxplus(&d), &imu, dt, &g).unwrap().boxminus(&base);
        let minus = imu_propagate(&x.boxplus(&-d), &imu, dt, &g).unwrap().boxminus(&base);
        let fd = (plus - minus) / (2.0 * h);
        let err = (fd - f.column(k)).amax();
        // First-order in dt: the discarded terms are O(dt²).
        assert!(err < 1e-4, "column {k}: {err}\nfd {fd}\nF {}", f.column(k));
    }
}

#[test]
fn half_steps_converge_at_second_order() {
    let x = {
        let mut s = NavState::at_rest(Vec3::zeros(), 0.0);
        s.velocity = Vec3::new(1.0, 0.0, 0.0);
        s
    };
    let imu = ImuSample { gyro: Vec3::new(0.4, 0.1, 0.9), accel: Vec3::new(1.0, 0.5, 10.3), timestamp: 0.0 };
    let g = chansense::recon::gravity();
    let disc = |dt: f64| {
        let full = imu_propagate(&x, &imu, dt, &g).unwrap();
        let half = imu_propagate(&imu_propagate(&x, &imu, dt / 2.0, &g).unwrap(), &imu, dt / 2.0, &g).unwrap();
        full.boxminus(&half).norm()
    };
    let ratio = disc(0.02) / disc(0.01);
    assert!(ratio >= 3.5, "ratio {ratio}");
}

fn corridor(noise: DriveNoise) -> (chansense::recon::SimulatedDrive, f64) {
    let spec = CorridorSpec::default();
    let drive = simulate_corridor(&spec, &noise).unwrap();
    (drive, spec.length)
}

#[test]
fn static_platform_does_not_drift() {
    let spec = CorridorSpec { speed: 1e-9, ..Default::default() };
    let scene_drive = simulate_corridor(&CorridorSpec { length: 1e-9 * 3.0, ..spec.clone() }, &DriveNoise::default()).unwrap();
    let (traj, _) = run_odometry(
        &scene_drive.imu,
        &scene_drive.scans,
        &scene_drive.initial,
        &OdometryConfig::with_noise(&ImuNoise::ideal(), 0.0),
        KdTree::default(),
    )
    .unwrap();
    for (s, t) in traj.states().zip(&scene_drive.truth) {
        let e = (s.position - t.position).norm();
        assert!(e < 1e-6, "drift {e} at {}: {}", s.timestamp, s.boxminus(t));
    }
}

#[test]
fn noiseless_corridor_final_error_below_1mm() {
    let (drive, _) = corridor(DriveNoise::default());
    let cfg = OdometryConfig::with_noise(&ImuNoise::ideal(), 0.0);
    let (traj, map) = run_odometry(&drive.imu, &drive.scans, &drive.initial, &cfg, KdTree::default()).unwrap();
    let last = traj.records.last().unwrap();
    let err = (last.state.position - drive.truth.last().unwrap().position).norm();
    assert!(err < 1e-3, "final error {err}");
    assert_eq!(traj.segment_starts, vec![0]);
    assert!(map.len() > 1000);
    for r in &traj.records {
        for c in &r.costs {
            assert!(c.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}

#[test]
fn noisy_corridor_within_one_percent() {
    let (drive, length) = corridor(DriveNoise { imu: Some(ImuNoise::default()), range_sigma: Some(0.01), seed: 7 });
    let cfg = OdometryConfig::default();
    let (traj, _) = run_odometry(&drive.imu, &drive.scans, &drive.initial, &cfg, VoxelMap::new(0.5)).unwrap();
    let (kd, _) = run_odometry(&drive.imu, &drive.scans, &drive.initial, &cfg, KdTree::default()).unwrap();
    assert_eq!(traj, kd, "index backends must agree exactly");
    let err = (traj.records.last().unwrap().state.position - drive.truth.last().unwrap().position).norm();
    assert!(err < 0.01 * length, "final error {err}");
}

#[test]
fn imu_gap_breaks_segment_and_keeps_state() {
    let spec = CorridorSpec { length: 4.0, ..Default::default() };
    let drive = simulate_corridor(&spec, &DriveNoise::default()).unwrap();
    // Drop IMU samples between 0.8 s and 1.0 s.
    let imu: Vec<ImuSample> =
        drive.imu.iter().filter(|s| !(s.timestamp > 0.8 + 1e-9 && s.timestamp < 1.0 - 1e-9)).copied().collect();
    let (traj, _) = run_odometry(&imu, &drive.scans, &drive.initial, &OdometryConfig::default(), KdTree::default()).unwrap();
    assert_eq!(traj.segment_starts, vec![0, 9]);
    assert_eq!(traj.records.len(), drive.scans.len());
    assert!(traj.states().all(|s| s.is_finite()));
}

#[test]
fn rejects_unordered_streams() {
    let x = NavState::at_rest(Vec3::zeros(), 0.0);
    let imu = vec![
        ImuSample { gyro: Vec3::zeros(), accel: Vec3::zeros(), timestamp: 1.0 },
        ImuSample { gyro: Vec3::zeros(), accel: Vec3::zeros(), timestamp: 0.5 },
    ];
    let scans = vec![Scan { timestamp: 0.0, points: vec![] }];
    assert!(run_odometry(&imu, &scans, &x, &OdometryConfig::default(), KdTree::default()).is_err());
}

mod knn {
    use chansense::recon::{brute_force_knn, KdTree, SpatialIndex, VoxelMap};
    use chansense::Vec3;
    use proptest::prelude::*;

    fn cloud() -> impl Strategy<Value = Vec<Vec3>> {
        // Coarse lattice coordinates so equal distances actually occur.
        prop::collection::vec((-20i32..20, -20i32..20, -5i32..5), 1..300)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Vec3::new(x as f64, y as f64, z as f64) * 0.3).collect())
    }

    proptest! {
        #[test]
        fn indexes_agree_with_brute_force(pts in cloud(), q in (-7.0..7.0f64, -7.0..7.0f64, -2.0..2.0f64), k in 1usize..20, voxel in 0.2..3.0f64) {
            let q = Vec3::new(q.0, q.1, q.2);
            let want = brute_force_knn(&pts, &q, k);
            let mut kd = KdTree::default();
            kd.insert_all(&pts);
            let mut vm = VoxelMap::new(voxel);
            vm.insert_all(&pts);
            prop_assert_eq!(&kd.knn(&q, k), &want);
            prop_assert_eq!(&vm.knn(&q, k), &want);
            prop_assert_eq!(want.len(), k.min(pts.len()));
        }
    }
}
