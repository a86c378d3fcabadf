use normloss_core::gradcheck::{check_regularizers, numeric_gradient, relative_error};
use normloss_core::regularizers::{
    gradient_dominance_ratio, norm_loss_grad, norm_loss_value, oblique_residual, project_oblique, riemannian_grad,
};
use normloss_core::{Rng, Tensor, WeightMatrix};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> WeightMatrix<f64> {
    WeightMatrix::from_rows(Tensor::from_vec(&[rows, cols], data).unwrap()).unwrap()
}

fn matrix_strategy() -> impl Strategy<Value = WeightMatrix<f64>> {
    (1usize..=8, 1usize..=16)
        .prop_flat_map(|(n, p)| prop::collection::vec(-3.0f64..3.0, n * p).prop_map(move |d| matrix(n, p, d)))
}

fn unit_row_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 1..=16)
        .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
}

fn row(v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(&[1, v.len()], v.to_vec()).unwrap()
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let report = check_regularizers(&mut Rng::new(1), 200).unwrap();
    assert!(report.norm_loss_max_rel <= 1e-6, "{report:?}");
    assert!(report.weight_decay_max_rel <= 1e-8, "{report:?}");
}

#[test]
fn norm_loss_gradient_of_3_4_row() {
    let w = matrix(1, 2, vec![3.0, 4.0]);
    let mut x = w.tensor().data().to_vec();
    let numeric = numeric_gradient(&mut x, 1e-6, |x| norm_loss_value(&matrix(1, 2, x.to_vec())));
    assert!((numeric[0] - 4.8).abs() < 1e-8 && (numeric[1] - 6.4).abs() < 1e-8);
    assert!(relative_error(norm_loss_grad(&w).data(), &numeric) < 1e-8);
}

proptest! {
    #[test]
    fn zero_loss_iff_on_manifold(w in matrix_strategy()) {
        let on = project_oblique(&w);
        prop_assume!(on.is_ok());
        let on = on.unwrap();
        prop_assert!(norm_loss_value(&on) <= 1e-12);
        prop_assert!(oblique_residual(&on) <= 1e-12);
        let loss_zero = norm_loss_value(&w) <= 1e-12;
        let residual_zero = oblique_residual(&w) <= 1e-12;
        prop_assert_eq!(loss_zero, residual_zero);
    }

    #[test]
    fn projection_is_idempotent_fixed_point(w in matrix_strategy()) {
        let once = project_oblique(&w);
        prop_assume!(once.is_ok());
        let once = once.unwrap();
        let twice = project_oblique(&once).unwrap();
        prop_assert!(once.tensor().sub(twice.tensor()).unwrap().max_abs() <= 1e-15);
        prop_assert!(norm_loss_grad(&once).max_abs() <= 1e-10);
    }

    #[test]
    fn riemannian_gradient_is_tangent(w in unit_row_strategy(), scale in -5.0f64..5.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let g: Vec<f64> = w.iter().map(|_| scale * rng.normal()).collect();
        let r = riemannian_grad(&row(&w), &row(&g)).unwrap();
        let dot: f64 = r.data().iter().zip(&w).map(|(a, b)| a * b).sum();
        prop_assert!(dot.abs() <= 1e-10);
        let ratio = gradient_dominance_ratio(&row(&w), &row(&g)).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ratio));
    }

    #[test]
    fn row_norms_scale_with_absolute_factor(w in matrix_strategy(), c in -4.0f64..4.0) {
        let base = w.tensor().row_l2_norms().unwrap();
        let scaled = w.tensor().scale(c).row_l2_norms().unwrap();
        for (a, b) in base.data().iter().zip(scaled.data()) {
            prop_assert!((b - c.abs() * a).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn matmul_is_associative_on_integers(
        (m, k, l, n) in (1usize..5, 1usize..5, 1usize..5, 1usize..5),
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let mut int = |r: usize, c: usize| {
            Tensor::from_vec(&[r, c], (0..r * c).map(|_| rng.below(21) as f64 - 10.0).collect()).unwrap()
        };
        let (a, b, c) = (int(m, k), int(k, l), int(l, n));
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn norm_loss_step_moves_norm_toward_one(dir in unit_row_strategy(), log_norm in -1.0f64..1.0) {
        let norm = 10f64.powf(log_norm);
        prop_assume!((norm - 1.0).abs() > 1e-9);
        let w = matrix(1, dir.len(), dir.iter().map(|v| v * norm).collect());
        let g = norm_loss_grad(&w);
        // The gradient is anti-parallel to w for short rows and parallel for
        // long rows, so a descent step always heads for the unit sphere.
        let along: f64 = g.data().iter().zip(w.tensor().data()).map(|(a, b)| a * b).sum();
        let toward = if norm < 1.0 { along < 0.0 } else { along > 0.0 };
        prop_assert!(toward);
        let stepped = w.tensor().sub(&g.scale(1e-3)).unwrap();
        let new_norm = stepped.row_l2_norms().unwrap().data()[0];
        prop_assert!((new_norm - 1.0).abs() < (norm - 1.0).abs());
    }

    #[test]
    fn weight_decay_step_always_shrinks(dir in unit_row_strategy(), log_norm in -1.0f64..1.0, eta in 1e-4f64..0.4) {
        let norm = 10f64.powf(log_norm);
        let w = matrix(1, dir.len(), dir.iter().map(|v| v * norm).collect());
        let stepped = w.tensor().sub(&normloss_core::regularizers::weight_decay_grad(&w).scale(eta)).unwrap();
        prop_assert!(stepped.row_l2_norms().unwrap().data()[0] < norm);
    }
}
