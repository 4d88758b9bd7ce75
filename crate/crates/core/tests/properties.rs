use nalgebra::{SymmetricEigen, Vector3};
use proptest::prelude::*;

use tfgsmooth::data::{from_csv, generate, to_csv, MotionProfile, NoiseSpec, TrajectorySpec};
use tfgsmooth::imu::{compound, ImuSample, ProcessNoise, GRAVITY};
use tfgsmooth::so3::exp_so3;
use tfgsmooth::{Parametrization, TfgElement, TfgTangent};

fn vec3(scale: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-scale..scale).prop_map(Vector3::from)
}

fn rotvec(max_angle: f64) -> impl Strategy<Value = Vector3<f64>> {
    (vec3(1.0), 0.0..max_angle).prop_map(|(v, a)| v.try_normalize(1e-6).unwrap_or(Vector3::x()) * a)
}

fn tangent(max_angle: f64, scale: f64) -> impl Strategy<Value = TfgTangent> {
    (rotvec(max_angle), vec3(scale), vec3(scale), vec3(scale), vec3(scale))
        .prop_map(|(rot, vel, pos, acc_bias, gyro_bias)| TfgTangent { rot, vel, pos, acc_bias, gyro_bias })
}

fn element() -> impl Strategy<Value = TfgElement> {
    (rotvec(3.1), vec3(5.0), vec3(20.0), vec3(0.2), vec3(0.05)).prop_map(|(r, vel, pos, acc_bias, gyro_bias)| {
        TfgElement { rot: exp_so3(&r), vel, pos, acc_bias, gyro_bias }
    })
}

fn kind() -> impl Strategy<Value = Parametrization> {
    prop::sample::select(Parametrization::ALL.to_vec())
}

fn close(a: &TfgElement, b: &TfgElement, tol: f64) -> bool {
    (a.rot - b.rot).amax() < tol
        && (a.vel - b.vel).amax() < tol * (1.0 + a.vel.amax())
        && (a.pos - b.pos).amax() < tol * (1.0 + a.pos.amax())
        && (a.acc_bias - b.acc_bias).amax() < tol
        && (a.gyro_bias - b.gyro_bias).amax() < tol
}

proptest! {
    #[test]
    fn composition_is_associative(a in element(), b in element(), c in element()) {
        prop_assert!(close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-9));
    }

    #[test]
    fn inverse_cancels(a in element()) {
        prop_assert!(close(&a.compose(&a.inverse()), &TfgElement::identity(), 1e-9));
        prop_assert!(close(&a.inverse().compose(&a), &TfgElement::identity(), 1e-9));
    }

    #[test]
    fn exp_log_round_trip(xi in tangent(3.0, 2.0)) {
        let back = TfgElement::exp(&xi).log().unwrap();
        prop_assert!((back.to_vector() - xi.to_vector()).amax() < 1e-8);
    }

    #[test]
    fn adjoint_moves_perturbations(a in element(), xi in tangent(1.0, 1.0)) {
        let lhs = a.compose(&TfgElement::exp(&xi)).compose(&a.inverse());
        let rhs = TfgElement::exp(&TfgTangent::from_vector(&(a.adjoint() * xi.to_vector())));
        prop_assert!(close(&lhs, &rhs, 1e-8));
    }

    #[test]
    fn retract_local_round_trip(k in kind(), x in element(), xi in tangent(2.0, 1.0)) {
        let y = k.retract(&x, &xi);
        let back = k.local(&x, &y).unwrap();
        prop_assert!((back.to_vector() - xi.to_vector()).amax() < 1e-8);
        prop_assert!(close(&k.retract(&x, &back), &y, 1e-9));
    }

    #[test]
    fn compound_noise_is_symmetric_psd(
        k in kind(),
        x in element(),
        omega in vec3(1.0),
        accel in vec3(10.0),
        n in 1usize..20,
    ) {
        let samples: Vec<ImuSample> =
            (0..n).map(|i| ImuSample { t: 0.01 * i as f64, omega, accel }).collect();
        let pn = ProcessNoise { sigma_a: 0.1, sigma_w: 0.01, sigma_ba: 1e-3, sigma_bw: 1e-4 };
        let st = compound(k, &x, &samples, 0.01 * n as f64, &GRAVITY, &pn).unwrap();
        prop_assert_eq!(st.noise, st.noise.transpose());
        let min = SymmetricEigen::new(st.noise).eigenvalues.min();
        prop_assert!(min > -1e-12 * st.noise.amax());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn csv_round_trip(seed in any::<u64>(), profile in prop::sample::select(vec![
        MotionProfile::Straight, MotionProfile::Circle, MotionProfile::FigureEight, MotionProfile::PiecewiseTurns,
    ])) {
        let spec = TrajectorySpec { duration: 3.0, profile, ..TrajectorySpec::default() };
        let data = generate(&spec, &NoiseSpec { seed, ..NoiseSpec::default() }).unwrap();
        let back = from_csv(&to_csv(&data)).unwrap();
        prop_assert_eq!(&back.imu, &data.imu);
        prop_assert_eq!(&back.gnss, &data.gnss);
        prop_assert_eq!(back.truth.len(), data.truth.len());
        for (a, b) in back.truth.iter().zip(&data.truth) {
            prop_assert_eq!(a.t, b.t);
            prop_assert!(close(&a.state, &b.state, 1e-14));
        }
    }
}
