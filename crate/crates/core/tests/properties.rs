use beamform::channel::{
    global_loss, project_power, sinr, weighted_sum_rate, SolverState, SystemConfig,
};
use beamform::autodiff::{adam_step, AdamConfig, Parameter};
use beamform::cmat::{cvec_from_coords, cvec_to_coords, CMat};
use beamform::meta::{lstm_update, MetaLearner};
use beamform::rng::GaussianStream;
use beamform::wmmse::{solve_wmmse, update_w, WmmseConfig};
use ndarray::Array2;
use proptest::prelude::*;

fn instance(seed: u64, n: usize, m: usize, scale: f64) -> (CMat, CMat) {
    let mut rng = GaussianStream::new(seed, 0);
    let h = CMat::random_normal(n, m, &mut rng);
    let v = CMat::random_normal(n, m, &mut rng).scaled(scale);
    (h, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sinr_and_rate_are_nonnegative(seed in any::<u64>(), n in 1usize..5, m in 1usize..5, scale in 1e-3f64..1e3) {
        let (h, v) = instance(seed, n, m, scale);
        let cfg = SystemConfig::from_snr_db(m, n, 10.0).unwrap();
        prop_assert!(sinr(&h, &v, 1.0).unwrap().iter().all(|s| *s >= 0.0));
        prop_assert!(weighted_sum_rate(&h, &v, &cfg).unwrap() >= 0.0);
    }

    #[test]
    fn weights_are_at_least_one(seed in any::<u64>(), n in 1usize..5, m in 1usize..5, scale in 0.0f64..1e3) {
        let (h, v) = instance(seed, n, m, scale);
        prop_assert!(update_w(&h, &v, 1.0).unwrap().iter().all(|w| *w >= 1.0));
    }

    #[test]
    fn projection_is_feasible_idempotent_and_direction_preserving(
        seed in any::<u64>(), n in 1usize..5, m in 1usize..5, scale in 1e-3f64..1e3, power in 1e-2f64..1e4,
    ) {
        let (_, v) = instance(seed, n, m, scale);
        let p = project_power(&v, power);
        prop_assert!(p.power() <= power);
        prop_assert_eq!(project_power(&p, power), p.clone());
        if v.power() <= power {
            prop_assert_eq!(&p, &v);
        } else {
            let c = p.get(0, 0) / v.get(0, 0);
            prop_assert!(c.im.abs() < 1e-12 && c.re > 0.0 && c.re < 1.0);
        }
    }

    #[test]
    fn coordinate_layouts_round_trip(seed in any::<u64>(), n in 1usize..6, m in 1usize..6) {
        let (h, _) = instance(seed, n, m, 1.0);
        let c = h.to_coords();
        prop_assert_eq!(c.len(), 2 * n * m);
        prop_assert_eq!(CMat::from_coords(n, m, c.as_slice().unwrap()).unwrap(), h.clone());
        prop_assert_eq!(CMat::from_split(&h.to_split()).unwrap(), h.clone());
        let row = h.row(0);
        prop_assert_eq!(cvec_from_coords(&cvec_to_coords(&row)).unwrap(), row);
    }

    #[test]
    fn consistent_point_loss_equals_weight_sum_minus_rate(seed in any::<u64>(), n in 1usize..5, m in 1usize..5) {
        let (h, v) = instance(seed, n, m, 1.0);
        let mut rng = GaussianStream::new(seed ^ 1, 0);
        let alpha: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.2, 2.0)).collect();
        let cfg = SystemConfig::with_weights(m, n, 10.0, alpha.clone()).unwrap();
        let state = SolverState::consistent(&h, v.clone(), 1.0).unwrap();
        let f = global_loss(&state, &h, &cfg, 0.0).unwrap();
        let expected = alpha.iter().sum::<f64>() - weighted_sum_rate(&h, &v, &cfg).unwrap();
        prop_assert!((f - expected).abs() < 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn wmmse_never_ends_below_its_start(seed in any::<u64>(), n in 1usize..4, m in 1usize..4, snr in -5.0f64..30.0) {
        let cfg = SystemConfig::from_snr_db(m, n, snr).unwrap();
        let (h, v) = instance(seed, n, m, 1.0);
        let v0 = project_power(&v, cfg.power());
        let (state, traj) = solve_wmmse(&h, &v0, &cfg, &WmmseConfig { max_iters: 30, ..WmmseConfig::default() }).unwrap();
        let start = weighted_sum_rate(&h, &v0, &cfg).unwrap();
        // The bisection may leave up to `bisection_tol` of power unused.
        prop_assert!(traj.last_wsr().unwrap() >= start - 1e-6);
        prop_assert!(state.v.power() <= cfg.power() + 1e-9);
        prop_assert!(traj.power.iter().all(|p| *p <= cfg.power() + 1e-9));
    }

    #[test]
    fn learner_is_permutation_equivariant(seed in any::<u64>(), shift in 1usize..4) {
        let mut rng = GaussianStream::new(seed, 0);
        let mut a = MetaLearner::new(4, 5, 1.0, &mut rng);
        a.head_weight.value.mapv_inplace(|_| 0.3);
        let mut b = a.clone();
        let g: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
        let mut rotated = g.clone();
        rotated.rotate_left(shift);
        let mut da = lstm_update(&mut a, &g).unwrap();
        let db = lstm_update(&mut b, &rotated).unwrap();
        da.rotate_left(shift);
        prop_assert_eq!(da, db);
    }

    #[test]
    fn adam_with_zero_gradient_from_rest_is_a_no_op(vals in proptest::collection::vec(-1e3f64..1e3, 1..12), lr in 1e-6f64..1.0) {
        let n = vals.len();
        let mut p = Parameter::new(Array2::from_shape_vec((1, n), vals).unwrap());
        let before = p.value.clone();
        for _ in 0..5 {
            p.grad = Some(Array2::zeros((1, n)));
            adam_step(&mut p, &AdamConfig::with_lr(lr)).unwrap();
        }
        prop_assert_eq!(p.value, before);
        prop_assert_eq!(p.adam.step, 5);
    }
}
