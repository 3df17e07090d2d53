use std::f64::consts::PI;

use chansense::geom::angles;
use chansense::scene::{Facet, Interaction, Pose, SceneSpec, Trajectory};
use chansense::{Vec3, SPEED_OF_LIGHT};
use nalgebra::Rotation3;
use proptest::prelude::*;

const FC: f64 = 28e9;

#[test]
fn free_space_link_follows_friis() {
    let tx = Pose::at(Vec3::new(0.0, 0.0, 5.0));
    let rx = Pose::at(Vec3::new(30.0, 40.0, 5.0));
    let scene = SceneSpec::free_space(tx, rx, FC);
    let ps = scene.ground_truth_paths(0.0).unwrap();
    assert_eq!(ps.len(), 1);
    let p = ps.los().unwrap();
    let lambda = SPEED_OF_LIGHT / FC;
    assert!((p.delay - 50.0 / SPEED_OF_LIGHT).abs() < 1e-18);
    assert!((p.gain.norm_sqr() / (lambda / (4.0 * PI * 50.0)).powi(2) - 1.0).abs() < 1e-12);
    // Arrival from the transmitter direction.
    let (az, el) = angles(&Vec3::new(-30.0, -40.0, 0.0));
    assert!((p.azimuth - az).abs() < 1e-12 && (p.elevation - el).abs() < 1e-12);
}

#[test]
fn wall_reflection_has_image_length() {
    let tx = Pose::at(Vec3::new(0.0, 2.0, 1.5));
    let rx = Pose::at(Vec3::new(20.0, 3.0, 1.5));
    let mut scene = SceneSpec::free_space(tx.clone(), rx.clone(), FC);
    let wall = Facet::vertical("wall", Vec3::new(-10.0, 8.0, 0.0), Vec3::new(40.0, 8.0, 0.0), 0.0, 10.0, 6.0);
    let image = wall.mirror(&tx.position);
    scene.reflectors.push(wall);
    let ps = scene.ground_truth_paths(0.0).unwrap();
    let r = ps.paths.iter().find(|p| p.interaction == Interaction::Reflection(0)).expect("reflection");
    assert!((r.length() - (image - rx.position).norm()).abs() < 1e-9);
    assert!(r.gain.norm() < ps.los().unwrap().gain.norm());
}

#[test]
fn blocking_wall_removes_line_of_sight() {
    let mut scene = SceneSpec::free_space(Pose::at(Vec3::zeros()), Pose::at(Vec3::new(10.0, 0.0, 0.0)), FC);
    scene.reflectors.push(Facet::vertical("block", Vec3::new(5.0, -1.0, 0.0), Vec3::new(5.0, 1.0, 0.0), -1.0, 1.0, 0.0));
    assert_eq!(scene.ground_truth_paths(0.0).unwrap().los_count(), 0);
}

#[test]
fn linear_trajectory_interpolates_and_rejects_outside() {
    let t = Trajectory::linear(Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0), 0.0, 5.0, Rotation3::identity());
    assert!((t.pose(2.5).unwrap().position - Vec3::new(5.0, 0.0, 0.0)).norm() < 1e-12);
    assert!((t.velocity(1.0).unwrap() - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
    assert!(t.pose(5.5).is_err());
}

fn point() -> impl Strategy<Value = Vec3> {
    (-50.0..50.0f64, -50.0..50.0f64, 0.5..10.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #[test]
    fn links_are_reciprocal(a in point(), b in point(), sigma in 0.0..8.0f64) {
        prop_assume!((a - b).norm() > 1.0);
        let mut scene = SceneSpec::free_space(Pose::at(a), Pose::at(b), FC);
        scene.propagation.shadowing_db = sigma;
        scene.reflectors.push(Facet::vertical("w", Vec3::new(-60.0, 60.0, 0.0), Vec3::new(60.0, 60.0, 0.0), 0.0, 20.0, 3.0));
        let ab = scene.paths_between(&Pose::at(a), &Pose::at(b), &Vec3::zeros(), 0.0);
        let ba = scene.paths_between(&Pose::at(b), &Pose::at(a), &Vec3::zeros(), 0.0);
        prop_assert_eq!(ab.len(), ba.len());
        for (p, q) in ab.paths.iter().zip(&ba.paths) {
            prop_assert!((p.delay - q.delay).abs() < 1e-15);
            prop_assert!((p.gain.norm() / q.gain.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mirror_is_an_involution(p in point(), x0 in -5.0..5.0f64, yaw in 0.0..PI) {
        let (s, c) = yaw.sin_cos();
        let a = Vec3::new(x0, 0.0, 0.0);
        let f = Facet::vertical("f", a, a + Vec3::new(c, s, 0.0) * 3.0, 0.0, 3.0, 0.0);
        let m = f.mirror(&p);
        prop_assert!((f.mirror(&m) - p).norm() < 1e-9);
        prop_assert!((f.signed_distance(&m) + f.signed_distance(&p)).abs() < 1e-9);
    }

    #[test]
    fn gain_falls_with_exponent(d in 2.0..500.0f64, n in 1.5..4.0f64) {
        let mut scene = SceneSpec::free_space(Pose::at(Vec3::zeros()), Pose::at(Vec3::new(d, 0.0, 0.0)), FC);
        scene.propagation.path_loss_exponent = n;
        let g = scene.ground_truth_paths(0.0).unwrap().los().unwrap().gain.norm_sqr();
        let lambda = SPEED_OF_LIGHT / FC;
        let want = (lambda / (4.0 * PI)).powi(2) * d.powf(-n);
        prop_assert!((g / want - 1.0).abs() < 1e-9);
    }
}
