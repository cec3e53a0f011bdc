use nalgebra::DVector;
use proptest::prelude::*;

use armshield::controller::hierarchical_scale;

fn limits() -> (DVector<f64>, DVector<f64>) {
    let u_max = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0, 10.0, 10.0, 10.0]);
    (-&u_max, u_max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn hierarchical_output_stays_inside_limits(
        primary in prop::collection::vec(-50.0f64..50.0, 7),
        secondary in prop::collection::vec(-50.0f64..50.0, 7),
        quota in 0.0f64..0.999,
    ) {
        let (u_min, u_max) = limits();
        let p = DVector::from_vec(primary);
        let s = DVector::from_vec(secondary);
        let out = hierarchical_scale(&p, &s, &u_min, &u_max, quota);
        for j in 0..7 {
            let slack = 1e-12 * u_max[j];
            prop_assert!(out[j] <= u_max[j] + slack && out[j] >= u_min[j] - slack, "joint {j}: {}", out[j]);
        }
    }

    #[test]
    fn hierarchical_primary_keeps_its_direction(
        primary in prop::collection::vec(-50.0f64..50.0, 7),
        quota in 0.0f64..0.999,
    ) {
        let (u_min, u_max) = limits();
        let p = DVector::from_vec(primary);
        let out = hierarchical_scale(&p, &DVector::zeros(7), &u_min, &u_max, quota);
        let s1 = out.norm() / p.norm();
        prop_assert!(s1 > 0.0 && s1 <= 1.0 + 1e-15);
        prop_assert!((&out - &p * s1).norm() <= 1e-12 * p.norm());
        for j in 0..7 {
            prop_assert!(out[j].abs() <= (1.0 - quota) * u_max[j] * (1.0 + 1e-12));
        }
    }
}
