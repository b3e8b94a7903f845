use proptest::prelude::*;

use sparse_afem::afem::mark_max_strategy;
use sparse_afem::{Domain, Mesh};

fn domain(lshape: bool) -> Domain {
    if lshape {
        Domain::LShape
    } else {
        Domain::UnitSquare
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_refinement_keeps_the_mesh_sound(
        lshape in any::<bool>(),
        picks in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 1..6), 1..7),
    ) {
        let mut mesh = Mesh::initial(domain(lshape)).unwrap();
        let alpha0 = mesh.min_angle();
        let area = mesh.total_area();
        for round in picks {
            let n = mesh.num_triangles();
            let marked: Vec<usize> = round.iter().map(|r| ((r * n as f64) as usize).min(n - 1)).collect();
            let refined = mesh.refine(&marked).unwrap();
            let linear = |x: [f64; 2]| 2.0 * x[0] - 3.0 * x[1] + 0.5;
            let values: Vec<f64> = mesh.vertices().iter().map(|&x| linear(x)).collect();
            let lifted = refined.prolongate(&values);
            for (v, x) in lifted.iter().zip(refined.mesh.vertices()) {
                prop_assert!((v - linear(*x)).abs() < 1e-12);
            }
            prop_assert!(refined.mesh.num_triangles() > n);
            mesh = refined.mesh;
            prop_assert!(mesh.check_conformity().is_ok());
            prop_assert!(mesh.min_angle() >= 0.5 * alpha0 - 1e-12);
            prop_assert!((mesh.total_area() - area).abs() < 1e-12);
        }
    }

    #[test]
    fn max_marking_selects_above_threshold(
        values in prop::collection::vec(0.0f64..10.0, 1..40),
        fraction in 0.0f64..0.99,
    ) {
        let marked = mark_max_strategy(&values, fraction);
        let max = values.iter().copied().fold(0.0, f64::max);
        for (k, &v) in values.iter().enumerate() {
            prop_assert_eq!(marked.contains(&k), max > 0.0 && v > fraction * max);
        }
        if max > 0.0 {
            prop_assert!(!marked.is_empty());
        }
    }
}
