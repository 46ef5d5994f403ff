use std::sync::{Arc, OnceLock};

use nalgebra::DVector;
use proptest::prelude::*;

use spikelab_core::geometry::Domain;
use spikelab_core::groundstate::{solve_ground_state, RadialProfile};
use spikelab_core::scaled_state::ScaledGroundState;

fn profile() -> Arc<RadialProfile> {
    static P: OnceLock<Arc<RadialProfile>> = OnceLock::new();
    P.get_or_init(|| Arc::new(solve_ground_state(3, 2.0, 1e-10).unwrap())).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaled_power_integral_follows_gamma(j in 0.1f64..10.0, v in 0.1f64..10.0) {
        let prof = profile();
        let e3 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let unit = ScaledGroundState::new(prof.clone(), DVector::zeros(3), e3.clone(), 1.0, 1.0).unwrap();
        let s = ScaledGroundState::new(prof, DVector::zeros(3), e3, j, v).unwrap();
        // (p+1)/(p−1) − N/2 = 3/2 for p = 2, N = 3
        let law = v.powf(1.5) * j.powf(1.5) * unit.halfspace_power_integral(3.0).unwrap();
        let got = s.halfspace_power_integral(3.0).unwrap();
        prop_assert!((got - law).abs() <= 1e-12 * law);
    }

    #[test]
    fn projection_lands_on_ellipsoid(x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0) {
        prop_assume!(x * x + y * y + z * z > 0.01);
        let d = Domain::ellipsoid(vec![1.0, 1.5, 2.0], vec![0.0; 3]).unwrap();
        let q = d.project_to_boundary(&[x, y, z]).unwrap();
        let p = &q.point;
        let level = p[0] * p[0] + p[1] * p[1] / 2.25 + p[2] * p[2] / 4.0 - 1.0;
        prop_assert!(level.abs() < 1e-12);
        prop_assert!((q.normal.norm() - 1.0).abs() < 1e-12);
        // outward: the normal points along ∇φ
        let grad = DVector::from_vec(vec![2.0 * p[0], 2.0 * p[1] / 2.25, p[2] / 2.0]);
        prop_assert!((q.normal.dot(&grad) / grad.norm() - 1.0).abs() < 1e-10);
        let curv = &q.curvatures;
        prop_assert!(curv.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(curv.iter().all(|k| *k > 0.0));
    }
}
