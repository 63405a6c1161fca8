use nalgebra::{SymmetricEigen, Vector3};
use proptest::prelude::*;

use emu_core::config::DEMO_ARM;
use emu_core::manipulator_dynamics::{
    inverse_operational_mass, mass_matrix, reflected_mass, DhJoint, JointType, Link,
};
use emu_core::{ArmModel, ReflectedMass};

fn demo_arm() -> ArmModel {
    ArmModel::from_json(DEMO_ARM).unwrap()
}

fn config() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 7)
}

fn direction() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("non-zero", |(x, y, z)| x * x + y * y + z * z > 1e-4)
        .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
}

proptest! {
    #[test]
    fn mass_matrix_is_spd(q in config()) {
        let m = mass_matrix(&demo_arm(), &q).unwrap();
        prop_assert_eq!(&m, &m.transpose());
        prop_assert!(m.clone().cholesky().is_some());
    }

    #[test]
    fn reflected_mass_ignores_direction_sign(q in config(), u in direction()) {
        let arm = demo_arm();
        prop_assert_eq!(reflected_mass(&arm, &q, &u).unwrap(), reflected_mass(&arm, &q, &-u).unwrap());
    }

    #[test]
    fn reflected_mass_ignores_prior_scale(q in config(), u in direction(), s in 0.01f64..100.0) {
        let arm = demo_arm();
        let a = reflected_mass(&arm, &q, &u).unwrap();
        let b = reflected_mass(&arm, &q, &(u * s).normalize()).unwrap();
        match (a, b) {
            (ReflectedMass::Finite(x), ReflectedMass::Finite(y)) => {
                prop_assert!((x - y).abs() <= 1e-9 * x.max(1.0))
            }
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn reflected_mass_within_operational_eigenvalues(q in config(), u in direction()) {
        let arm = demo_arm();
        let lambda_inv = inverse_operational_mass(&arm, &q).unwrap();
        let inv_eig = SymmetricEigen::new(lambda_inv).eigenvalues;
        let (lo, hi) = (inv_eig.min(), inv_eig.max());
        // Near a singular direction the operational mass is unbounded.
        prop_assume!(lo > 1e-6 * hi);
        let ReflectedMass::Finite(m) = reflected_mass(&arm, &q, &u).unwrap() else {
            return Err(TestCaseError::fail("finite operational mass gave infinite m_u"));
        };
        let tol = 1e-9 * m;
        prop_assert!(m >= 1.0 / hi - tol && m <= 1.0 / lo + tol, "{m} outside [{}, {}]", 1.0 / hi, 1.0 / lo);
    }

    #[test]
    fn prismatic_axis_mass_is_exact(mass in 0.01f64..500.0, q in -2.0f64..2.0, sign in prop::bool::ANY) {
        let arm = ArmModel::new(
            vec![DhJoint { kind: JointType::Prismatic, a: 0.0, alpha: 0.0, d: 0.0, theta0: 0.0 }],
            vec![Link { mass, com: [0.0; 3], inertia: [[0.0; 3]; 3] }],
        )
        .unwrap();
        let u = if sign { Vector3::z() } else { -Vector3::z() };
        prop_assert_eq!(reflected_mass(&arm, &[q], &u).unwrap(), ReflectedMass::Finite(mass));
    }
}
