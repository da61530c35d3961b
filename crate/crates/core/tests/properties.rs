use std::sync::Arc;

use amf::adversaries::TraceAdversary;
use amf::amf_core::{softmax, AdversarySet, LossFn, RoundEnvironment, SurrogateState};
use amf::blackwell::{sign_game, ApproachState};
use amf::calibeat::{brier, bucketed_scores, build_multicalibeating_groups, calibration_refinement, joint_refinement, Forecaster};
use amf::game_solver::{max_weighted_objective, solve_zero_sum, MatrixGame, TIE_TOL};
use amf::groups::Group;
use amf::multical::{achieved_value, bucket_scores, grid_distribution, normalized_coefficients, CalibrationConfig, CERTIFICATE_TOL};
use amf::oracle::{exhaustive_swap_regret, exhaustive_swap_regret_per_round};
use amf::subsequence::{
    algorithm5_mixture, algorithm6_mixture, internal_regret, swap_regret, FnFamily, RegretTranscript, SubsequenceInstance,
    SubsequenceRound, FEASIBILITY_TOL,
};
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-1e3..1e3f64, 1..20), scale in -5.0..5.0f64) {
        let p = softmax(&v, scale);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regret_never_exceeds_surrogate_bound(cum in prop::collection::vec(-50.0..50.0f64, 2..12), w in -20.0..20.0f64, eta in 0.001..2.0f64) {
        let s = SurrogateState::from_parts(cum, w, eta, 100, 10).unwrap();
        prop_assert!(s.amf_regret() <= s.surrogate_regret_bound() + 1e-9);
    }

    #[test]
    fn zero_sum_value_is_optimal(
        rows in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 1..5),
        probe in prop::collection::vec(0.0..1.0f64, 4),
    ) {
        let g = MatrixGame::new(rows.clone()).unwrap();
        let cert = solve_zero_sum(&g).unwrap();
        let m = rows.len();
        let total: f64 = probe[..m].iter().sum::<f64>() + 1e-9;
        let x: Vec<f64> = probe[..m].iter().map(|p| (p + 1e-9 / m as f64) / total).collect();
        let (_, other) = g.best_column(&x);
        prop_assert!(cert.value <= other + 1e-9);
    }

    #[test]
    fn vertex_best_response_dominates(
        points in prop::collection::vec(prop::collection::vec(unit(), 2), 1..6),
        mix in 0.0..1.0f64,
    ) {
        let loss: LossFn = Box::new(|a, y, out| {
            out[0] = if a == 0 { y[0] - y[1] } else { y[1] * 0.5 };
            out[1] = if a == 0 { 0.2 } else { -y[0] };
        });
        let env = RoundEnvironment::new(vec![0, 1], AdversarySet::Vertices(points.clone()), 2, 1.0, loss).unwrap();
        let chi = [0.4, 0.6];
        let x = [mix, 1.0 - mix];
        let (_, best) = max_weighted_objective(&env, &chi, &x).unwrap();
        for y in &points {
            let mut v = 0.0;
            for (a, p) in x.iter().enumerate() {
                let l = env.evaluate(a, y).unwrap();
                v += p * (chi[0] * l[0] + chi[1] * l[1]);
            }
            prop_assert!(best >= v - TIE_TOL - 1e-12);
        }
    }

    #[test]
    fn brier_decomposes(pairs in prop::collection::vec((0usize..5, unit()), 1..80)) {
        let f: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 4.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (k, r) = calibration_refinement(&f, &b).unwrap();
        prop_assert!((brier(&f, &b).unwrap() - (k + r)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&k) && (0.0..=1.0).contains(&r));
    }

    #[test]
    fn bucketed_brier_is_a_surrogate(pairs in prop::collection::vec((unit(), unit()), 1..80), n in 1usize..12) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (bn, kn, rn) = bucketed_scores(&a, &b, n).unwrap();
        prop_assert!((bn - kn - rn).abs() < 1e-12);
        prop_assert!(brier(&a, &b).unwrap() <= bn + 1.0 / n as f64 + 1e-12);
    }

    #[test]
    fn joint_refinement_is_finer(rows in prop::collection::vec((unit(), 0usize..4, unit()), 1..80), n in 1usize..8) {
        let a: Vec<f64> = rows.iter().map(|p| p.0).collect();
        let f: Vec<f64> = rows.iter().map(|p| p.1 as f64 / 3.0).collect();
        let b: Vec<f64> = rows.iter().map(|p| p.2).collect();
        let joint = joint_refinement(&a, &f, &b, n).unwrap();
        let (_, _, rn) = bucketed_scores(&a, &b, n).unwrap();
        let rf = calibration_refinement(&f, &b).unwrap().1;
        prop_assert!(joint <= rn + 1e-12 && joint <= rf + 1e-12);
    }

    #[test]
    fn augmented_group_count(sizes in prop::collection::vec(1usize..5, 0..4), g in 1usize..4) {
        let fs: Vec<Forecaster> = sizes
            .iter()
            .map(|&s| Forecaster::new("f", (0..s).map(|i| i as f64 / s as f64).collect(), vec![]).unwrap())
            .collect();
        let groups = vec![Group::All; g];
        prop_assert_eq!(build_multicalibeating_groups(&groups, &fs).len(), g * (1 + sizes.iter().sum::<usize>()));
    }

    #[test]
    fn calibration_learner_certifies(
        sums in prop::collection::vec(-30.0..30.0f64, 12),
        n in 1usize..5,
        r in 1usize..4,
        members in prop::collection::vec(any::<bool>(), 3),
    ) {
        let groups = vec![Group::All; 3];
        let c = CalibrationConfig::new(n, r, groups, 400).unwrap();
        let member_of: Vec<usize> = (0..3).filter(|&g| members[g]).collect();
        let s = |i: usize, g: usize| sums[(g * n + i - 1) % sums.len()];
        let dist = grid_distribution(&bucket_scores(s, &member_of, n, c.eta()), n, r);
        prop_assert!((dist.iter().map(|d| d.1).sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(dist.iter().all(|d| d.1 >= 0.0 && d.0 < c.grid_len()));
        let mut x = vec![0.0; c.grid_len()];
        for (i, p) in dist {
            x[i] += p;
        }
        let k = normalized_coefficients(s, &member_of, 3, n, c.eta());
        let (_, v) = achieved_value(&c, &k, &x);
        prop_assert!(v <= c.value_bound() + CERTIFICATE_TOL);
    }

    #[test]
    fn closed_form_is_feasible(
        vals in prop::collection::vec(unit(), 3),
        weights in prop::collection::vec(-20.0..20.0f64, 12),
        k in 2usize..5,
    ) {
        let v = vals.clone();
        let family = Arc::new(FnFamily::new(3, true, move |f, _, _| if v[f] < 0.2 { 0.0 } else { v[f] }));
        let pairs: Vec<(usize, usize)> = (0..k).flat_map(|j| (0..3).map(move |f| (j, f))).collect();
        let inst = SubsequenceInstance::new(k, family, pairs).unwrap();
        let round = SubsequenceRound::full(1, k);
        let lw = &weights[..inst.dim()];
        let x = algorithm6_mixture(&inst, &round, lw).unwrap();
        prop_assert!(inst.feasibility_lhs(&round, lw, &x).unwrap().iter().all(|v| *v <= FEASIBILITY_TOL));
        let y = algorithm5_mixture(&inst, &round, lw).unwrap();
        prop_assert!(inst.feasibility_lhs(&round, lw, &y).unwrap().iter().all(|v| *v <= FEASIBILITY_TOL));
    }

    #[test]
    fn swap_regret_matches_enumeration(rows in prop::collection::vec((0usize..4, prop::collection::vec(unit(), 4)), 0..60)) {
        let mut tr = RegretTranscript::new(4);
        for (a, r) in &rows {
            tr.push(*a, r.clone());
        }
        let exact = exhaustive_swap_regret(4, &tr.actions, &tr.losses).unwrap();
        prop_assert_eq!(swap_regret(&tr), exact);
        let naive = exhaustive_swap_regret_per_round(4, &tr.actions, &tr.losses).unwrap();
        prop_assert!((naive - exact).abs() < 1e-9);
        let internal = internal_regret(&tr);
        prop_assert!(internal <= exact + 1e-12 && exact <= 4.0 * internal + 1e-12);
    }

    #[test]
    fn approach_state_is_consistent(plays in prop::collection::vec((0usize..8, 0usize..8), 1..50)) {
        let g = sign_game(3, 0.1).unwrap();
        let mut s = ApproachState::new(&g);
        for (a, b) in plays {
            s.record(&g, a, b);
            prop_assert!(s.consistency_gap(&g) <= 1e-9);
        }
    }

    #[test]
    fn trace_replay_is_pure(rows in prop::collection::vec(prop::collection::vec(unit(), 2), 1..10), t in 1usize..10) {
        let tr = TraceAdversary::new(rows.clone());
        let first = tr.row(t).map(|r| r.to_vec()).ok();
        let second = tr.row(t).map(|r| r.to_vec()).ok();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(first, rows.get(t - 1).cloned());
    }
}
