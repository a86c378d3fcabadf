use normloss_core::nn::ParamSlot;
use normloss_core::optim::{norm_dynamics_iterate, sgd_step, weight_decay_dynamics_iterate, OptimizerState};
use normloss_core::regularizers::norm_loss_grad;
use normloss_core::{RegularizerConfig, Tensor, WeightMatrix};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> WeightMatrix<f64> {
    WeightMatrix::from_rows(Tensor::from_vec(&[rows, cols], data).unwrap()).unwrap()
}

fn step(w: &mut WeightMatrix<f64>, g: &Tensor<f64>, reg: RegularizerConfig, opt: &mut OptimizerState<f64>) {
    let mut slots = [ParamSlot::Weight { layer: 0, w, grad: g }];
    sgd_step(&mut slots, &reg, opt).unwrap();
}

fn unit_dir(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

proptest! {
    #[test]
    fn unit_rows_are_invariant(dirs in prop::collection::vec(prop::collection::vec(0.1f64..1.0, 4), 1..5),
                               eta in 1e-3f64..1.0, lambda in 0.0f64..1.0) {
        let data: Vec<f64> = dirs.iter().flat_map(|d| unit_dir(d)).collect();
        let mut w = matrix(dirs.len(), 4, data.clone());
        let g = Tensor::zeros(&[dirs.len(), 4]).unwrap();
        let mut opt = OptimizerState::new(eta, 0.0, false).unwrap();
        step(&mut w, &g, RegularizerConfig::norm_loss(lambda), &mut opt);
        for (a, b) in w.tensor().data().iter().zip(&data) {
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn norm_loss_contracts_and_weight_decay_shrinks(
        dir in prop::collection::vec(-1.0f64..1.0, 1..8).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3)),
        log_norm in -1.0f64..1.0,
        eta in 1e-3f64..0.5,
        lambda in 1e-3f64..0.9,
    ) {
        prop_assume!(2.0 * eta * lambda < 1.0);
        let norm = 10f64.powf(log_norm);
        prop_assume!((norm - 1.0).abs() > 1e-9);
        let d = unit_dir(&dir);
        let data: Vec<f64> = d.iter().map(|v| v * norm).collect();
        let g = Tensor::zeros(&[1, d.len()]).unwrap();

        let mut w = matrix(1, d.len(), data.clone());
        step(&mut w, &g, RegularizerConfig::norm_loss(lambda), &mut OptimizerState::new(eta, 0.0, false).unwrap());
        let nl = w.tensor().row_l2_norms().unwrap().data()[0];
        prop_assert!((nl - 1.0).abs() < (norm - 1.0).abs());

        let mut w = matrix(1, d.len(), data);
        step(&mut w, &g, RegularizerConfig::weight_decay(lambda), &mut OptimizerState::new(eta, 0.0, false).unwrap());
        let wd = w.tensor().row_l2_norms().unwrap().data()[0];
        prop_assert!(wd < norm);
    }

    #[test]
    fn norm_loss_step_equals_descent_on_total_loss(
        data in prop::collection::vec(-3.0f64..3.0, 6),
        target in prop::collection::vec(-1.0f64..1.0, 6),
        eta in 1e-3f64..0.5, lambda in 0.0f64..0.5, mu in 0.0f64..0.95,
    ) {
        let g_target = Tensor::from_vec(&[2, 3], target).unwrap();
        let mut a = matrix(2, 3, data.clone());
        let mut b = matrix(2, 3, data);
        let mut opt_a = OptimizerState::new(eta, mu, false).unwrap();
        let mut opt_b = OptimizerState::new(eta, mu, false).unwrap();
        for _ in 0..3 {
            step(&mut a, &g_target, RegularizerConfig::norm_loss(lambda), &mut opt_a);
            let mut total = g_target.clone();
            total.axpy(lambda, &norm_loss_grad(&b)).unwrap();
            step(&mut b, &total, RegularizerConfig::none(), &mut opt_b);
        }
        for (x, y) in a.tensor().data().iter().zip(b.tensor().data()) {
            prop_assert!((x - y).abs() <= 8.0 * f64::EPSILON * (1.0 + x.abs()));
        }
    }

    #[test]
    fn zero_momentum_is_plain_gradient_descent(
        data in prop::collection::vec(-3.0f64..3.0, 4),
        grad in prop::collection::vec(-3.0f64..3.0, 4),
        eta in 1e-3f64..1.0,
    ) {
        let g = Tensor::from_vec(&[1, 4], grad.clone()).unwrap();
        let mut w = matrix(1, 4, data.clone());
        step(&mut w, &g, RegularizerConfig::none(), &mut OptimizerState::new(eta, 0.0, false).unwrap());
        for ((x, w0), g0) in w.tensor().data().iter().zip(&data).zip(&grad) {
            prop_assert_eq!(*x, w0 - eta * g0);
        }
    }
}

#[test]
fn dynamics_reach_unit_norm_monotonically() {
    // With eta*lambda = 1e-3 the distance to 1 shrinks by exactly
    // (1 - 2e-3) per step while the factor stays positive.
    for norm0 in [0.1, 0.5, 2.0, 5.0, 10.0] {
        let traj = norm_dynamics_iterate(norm0, 0.1, 0.01, 20_000).unwrap();
        let hit = traj.iter().position(|n| (n - 1.0).abs() <= 1e-6).expect("converges");
        assert!(hit <= 20_000);
        let dist: Vec<f64> = traj.iter().map(|n| (n - 1.0).abs()).collect();
        assert!(dist[..=hit].windows(2).all(|w| w[1] < w[0]), "norm0 {norm0}");
        let closed = (norm0 - 1.0).abs() * (1.0f64 - 2e-3).powi(hit as i32);
        assert!((dist[hit] - closed).abs() < 1e-9);

        let wd = weight_decay_dynamics_iterate(norm0, 0.1, 0.01, 1000).unwrap();
        assert!(wd.windows(2).all(|w| w[1] < w[0]));
    }
}

#[test]
fn optimizer_trajectory_matches_scalar_recurrence() {
    let mut w = matrix(1, 2, vec![0.3, 0.4]);
    let g = Tensor::zeros(&[1, 2]).unwrap();
    let mut opt = OptimizerState::new(0.1, 0.0, false).unwrap();
    let traj = norm_dynamics_iterate(0.5, 0.1, 0.01, 500).unwrap();
    for expected in &traj[1..] {
        step(&mut w, &g, RegularizerConfig::norm_loss(0.01), &mut opt);
        let n = w.tensor().row_l2_norms().unwrap().data()[0];
        assert!((n - expected).abs() < 1e-12);
    }
}
