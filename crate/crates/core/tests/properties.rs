use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use faf_core::allocation::{known_cov_allocation, known_cov_objective};
use faf_core::bounds::{known_cov_excess_bound, variance_lower_bound, variance_upper_bound, BoundConfig};
use faf_core::model::{fa_dominates, trace_frontier, uniform_grid, Group, GroupSpec, PopulationModel, Weight};

fn model_strategy() -> impl Strategy<Value = PopulationModel> {
    (1usize..=5).prop_flat_map(|d| {
        let v = move |lo: f64, hi: f64| prop::collection::vec(lo..hi, d);
        (v(-3.0, 3.0), v(-3.0, 3.0), v(0.1, 4.0), v(0.1, 4.0), v(-1.0, 1.0), 0.0f64..3.0).prop_map(
            move |(br, bb, dr, db, u, noise)| {
                let diag_r = DMatrix::from_diagonal(&DVector::from_vec(dr));
                let u = DVector::from_vec(u);
                // rank-one perturbation keeps the blue covariance non-diagonal
                let sb = DMatrix::from_diagonal(&DVector::from_vec(db)) + &u * u.transpose();
                PopulationModel::new(
                    GroupSpec::new(Group::Red, DVector::from_vec(br), diag_r).unwrap(),
                    GroupSpec::new(Group::Blue, DVector::from_vec(bb), sb).unwrap(),
                    noise,
                )
                .unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn identities_hold(model in model_strategy(), l in 0.0f64..=1.0, scale in 0.1f64..5.0) {
        let lambda = Weight::new(l).unwrap();
        let beta = DVector::from_fn(model.dim(), |i, _| scale * ((i as f64) - 1.5));
        let e = model.excess_risk_identity(lambda, &beta).unwrap();
        prop_assert!((e.lhs - e.rhs).abs() <= 1e-9 * e.lhs.abs().max(1.0));
        let opt = model.optimal_beta(lambda).unwrap();
        prop_assert!(model.stationarity_residual(lambda, &opt).amax() <= 1e-9 * (1.0 + opt.amax()));
    }

    #[test]
    fn frontier_trades_off(model in model_strategy()) {
        let pts = trace_frontier(&model, &uniform_grid(21).unwrap()).unwrap();
        for w in pts.windows(2) {
            let tol = 1e-9 * (1.0 + w[0].risks.risk_r.abs() + w[0].risks.risk_b.abs());
            prop_assert!(w[1].risks.risk_r <= w[0].risks.risk_r + tol);
            prop_assert!(w[1].risks.risk_b >= w[0].risks.risk_b - tol);
        }
        for p in &pts {
            prop_assert!(!fa_dominates(&p.risks, &p.risks));
            for q in &pts {
                prop_assert!(!(fa_dominates(&p.risks, &q.risks) && fa_dominates(&q.risks, &p.risks)));
            }
        }
    }

    #[test]
    fn known_cov_allocation_is_argmin(budget in 4usize..400, l in 0.01f64..0.99, rr in 0.2f64..3.0, rb in 0.2f64..3.0) {
        let lambda = Weight::new(l).unwrap();
        let plan = known_cov_allocation(budget, lambda, rr, rb, 1).unwrap();
        prop_assert_eq!(plan.n_r + plan.n_b, budget);
        let best = (1..budget).map(|n| known_cov_objective(lambda, rr, rb, n, budget - n)).fold(f64::INFINITY, f64::min);
        prop_assert!(plan.objective_value <= best * (1.0 + 1e-12));
    }

    #[test]
    fn known_cov_bound_linear_in_noise(d in 1usize..6, n in 10usize..500, l in 0.0f64..=1.0, s in 0.1f64..5.0) {
        let lambda = Weight::new(l).unwrap();
        let a = known_cov_excess_bound(&BoundConfig::gaussian(d, n, n, lambda, 1.0, 1.5, s, 0.0)).unwrap().value;
        let b = known_cov_excess_bound(&BoundConfig::gaussian(d, n, n, lambda, 1.0, 1.5, 2.0 * s, 0.0)).unwrap().value;
        prop_assert!((b - 2.0 * a).abs() <= 1e-12 * b);
    }

    #[test]
    fn variance_upper_dominates_lower(d in 1usize..6, n in 50usize..5000, l in 0.0f64..=1.0, rr in 0.5f64..2.0, rb in 0.5f64..2.0) {
        let cfg = BoundConfig::gaussian(d, n, n, Weight::new(l).unwrap(), rr, rb, 1.0, 0.5);
        for g in Group::BOTH {
            let up = variance_upper_bound(&cfg, g).unwrap().value;
            let lo = variance_lower_bound(&cfg, g).unwrap().value;
            prop_assert!(up >= lo, "{g}: upper {up} < lower {lo}");
        }
    }
}
