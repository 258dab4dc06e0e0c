use approx::assert_relative_eq;
use insdvl::bench::{smae, srmse};
use insdvl::eskf::{initial_covariance, is_psd, joseph_update, max_asymmetry, measurement_matrix};
use insdvl::pronet::{detrend, read_weights, write_weights, Architecture, Regressor, Variant};
use insdvl::sim::{generate_trajectory, invert_trajectory, TrajectoryKind};
use insdvl::strapdown::{gravity_ned, propagate, ImuSample, NavState, Position};
use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-range..range).prop_map(Vector3::from)
}

fn errors() -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(vec3(5.0), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_ignore_epoch_order(mut e in errors(), seed in any::<u64>()) {
        let (a, b) = (srmse(&e).unwrap(), smae(&e).unwrap());
        let n = e.len();
        e.rotate_left((seed as usize) % n);
        e.reverse();
        assert_relative_eq!(srmse(&e).unwrap(), a, max_relative = 1e-12);
        assert_relative_eq!(smae(&e).unwrap(), b, max_relative = 1e-12);
    }

    #[test]
    fn metrics_are_even_in_each_component(e in errors(), flips in prop::collection::vec(prop::array::uniform3(any::<bool>()), 40)) {
        let flipped: Vec<_> = e
            .iter()
            .zip(&flips)
            .map(|(v, f)| Vector3::from_fn(|i, _| if f[i] { -v[i] } else { v[i] }))
            .collect();
        prop_assert_eq!(srmse(&flipped).unwrap(), srmse(&e).unwrap());
        prop_assert_eq!(smae(&flipped).unwrap(), smae(&e).unwrap());
        prop_assert!(srmse(&e).unwrap() >= 0.0 && smae(&e).unwrap() >= 0.0);
    }

    #[test]
    fn joseph_update_keeps_covariance_psd(
        a in prop::collection::vec(-1.0f64..1.0, 144),
        scale in prop::collection::vec(1e-6f64..10.0, 12),
        r in prop::array::uniform3(1e-6f64..1.0),
        nu in vec3(3.0),
    ) {
        let l = SMatrix::<f64, 12, 12>::from_iterator(a);
        let d = SMatrix::<f64, 12, 12>::from_diagonal(&SMatrix::<f64, 12, 1>::from_iterator(scale));
        let p = d * l * l.transpose() * d + SMatrix::<f64, 12, 12>::identity() * 1e-9;
        let r = Matrix3::from_diagonal(&Vector3::from(r));
        let (_, dx, post) = joseph_update(&p, &measurement_matrix(), &r, &nu).unwrap();
        prop_assert!(is_psd(&post));
        prop_assert!(max_asymmetry(&post) == 0.0);
        prop_assert!(dx.iter().all(|v| v.is_finite()));
        // Measuring never increases the trace.
        prop_assert!(post.trace() <= p.trace() * (1.0 + 1e-9));
    }

    #[test]
    fn detrend_removes_any_affine_component(
        x in prop::collection::vec(-1.0f64..1.0, 200),
        a in -50.0f64..50.0,
        b in -1.0f64..1.0,
    ) {
        let shifted: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + a + b * i as f64).collect();
        let (d0, d1) = (detrend(&x).unwrap(), detrend(&shifted).unwrap());
        for (u, v) in d0.iter().zip(&d1) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_is_a_pure_function(seed in 0u64..1000, x in prop::collection::vec(-0.5f64..0.5, 200)) {
        for variant in [Variant::Baseline, Variant::Detrend] {
            let m = Regressor::new(variant, Architecture::default(), seed).unwrap();
            let a = m.forward(&x).unwrap();
            prop_assert_eq!(a.to_bits(), m.forward(&x).unwrap().to_bits());
            prop_assert!(a.is_finite());
        }
    }

    #[test]
    fn stationary_stream_stays_at_rest(lat in -1.2f64..1.2, yaw in -3.0f64..3.0, steps in 1usize..500) {
        let att = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
        let mut s = NavState::new(Position::new(lat, 0.4, 10.0), Vector3::zeros(), att, 0.0);
        let start = s;
        let reading = ImuSample::new(att.inverse() * -gravity_ned(), Vector3::zeros(), 0.0);
        for k in 0..steps {
            s = propagate(&s, &ImuSample { time: k as f64 * 0.01, ..reading }, 0.01).unwrap();
        }
        prop_assert!(s.velocity_ned.norm() < 1e-12);
        prop_assert!((s.position.latitude - start.position.latitude).abs() < 1e-15);
        prop_assert!(s.attitude.angle_to(&start.attitude) < 1e-12);
    }
}

#[test]
fn saved_weights_reproduce_forward() {
    let m = Regressor::new(Variant::Detrend, Architecture::default(), 3).unwrap();
    let mut buf = Vec::new();
    write_weights(&m, &mut buf).unwrap();
    let back = read_weights(&buf[..]).unwrap();
    let x: Vec<f64> = (0..200).map(|i| (i as f64 * 0.13).sin() * 0.2).collect();
    assert!((m.forward(&x).unwrap() - back.forward(&x).unwrap()).abs() < 1e-9);
}

/// Feeding the inverted readings back through the mechanization recovers the
/// trajectory over a full training-length series.
#[test]
fn inversion_then_propagation_recovers_each_trajectory() {
    for kind in [TrajectoryKind::StraightLine, TrajectoryKind::TurningLine, TrajectoryKind::LawnMower, TrajectoryKind::DiveClimb, TrajectoryKind::EvalMixed] {
        let truth = generate_trajectory(kind, 400.0, 100.0, 5).unwrap();
        let imu = invert_trajectory(&truth).unwrap();
        let mut s = truth[0];
        let mut worst = 0.0f64;
        for k in 0..truth.len() - 1 {
            s = propagate(&s, &imu[k], 0.01).unwrap();
            worst = worst.max((s.velocity_ned - truth[k + 1].velocity_ned).norm());
        }
        assert!(worst < 1e-3, "{kind}: velocity drift {worst}");
        let north = (s.position.latitude - truth.last().unwrap().position.latitude).abs() * 6_378_137.0;
        assert!(north < 1e-3, "{kind}: north drift {north} m");
    }
}

#[test]
fn initial_covariance_is_psd() {
    assert!(is_psd(&initial_covariance()));
}
