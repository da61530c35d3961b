use amf::adversaries::{GreedyRegret, IidAdversary, Distribution, LabelBestResponse, SurrogateBestResponse};
use amf::amf_core::{play_round, regret_bound, AdversarySet, AmfRng, LossFn, RoundEnvironment, SurrogateState};
use amf::blackwell::{sign_game, ApproachLearner};
use amf::calibeat::{build_multicalibeating_groups, evaluate_calibeating, CellReport, Forecaster};
use amf::game_solver::{solve_zero_sum, weighted_game, LpSolver};
use amf::groups::{Group, RoundContext};
use amf::multical::{calibration_environment, measure_alpha, CalibrationConfig, CalibrationSolver, MulticalLearner};
use amf::oracle::expectation_telescoping_check;
use amf::subsequence::{
    build_external, build_internal, exponential_weights_mixture, internal_regret, play_subsequence_round, swap_regret,
    RegretTranscript, SubsequenceMethod, SubsequenceRound,
};
use rand::{Rng, SeedableRng};

#[test]
fn external_regret_run_stays_under_bound() {
    let (k, t) = (3, 300);
    let inst = build_external(k).unwrap();
    let mut state = SurrogateState::new(k, t, 1.0).unwrap();
    let mut rng = AmfRng::seed_from_u64(11);
    let mut adv = SurrogateBestResponse;
    for s in 1..=t {
        let round = SubsequenceRound::full(s, k);
        play_subsequence_round(&inst, &round, &mut state, SubsequenceMethod::Minimax, &mut adv, &mut rng).unwrap();
        assert!(state.amf_regret() <= state.surrogate_regret_bound() + 1e-9);
    }
    assert!(state.amf_regret() <= regret_bound(k as f64, t, 1.0));
}

#[test]
fn external_mixture_is_exponential_weights() {
    let k = 4;
    let inst = build_external(k).unwrap();
    let mut state = SurrogateState::new(k, 50, 1.0).unwrap();
    let mut rng = AmfRng::seed_from_u64(5);
    let mut cum_r = vec![0.0; k];
    let mut adv = IidAdversary::new(Distribution::Uniform, None, None).unwrap();
    for s in 1..=50 {
        let round = SubsequenceRound::full(s, k);
        let rec = play_subsequence_round(&inst, &round, &mut state, SubsequenceMethod::Minimax, &mut adv, &mut rng).unwrap();
        let ew = exponential_weights_mixture(&cum_r, state.eta());
        for (a, b) in rec.mixture.iter().zip(&ew) {
            assert!((a - b).abs() < 1e-8, "round {s}: {:?} vs {ew:?}", rec.mixture);
        }
        cum_r.iter_mut().zip(&rec.adversary).for_each(|(c, r)| *c += r);
    }
}

#[test]
fn potential_growth_is_bounded_every_round() {
    let k = 3;
    let inst = build_internal(k).unwrap();
    let t = 200;
    let mut state = SurrogateState::new(inst.dim(), t, 1.0).unwrap();
    let mut rng = AmfRng::seed_from_u64(9);
    let mut adv = GreedyRegret;
    for s in 1..=t {
        let round = SubsequenceRound::full(s, k);
        let before = state.clone();
        let rec = play_subsequence_round(&inst, &round, &mut state, SubsequenceMethod::Feasibility, &mut adv, &mut rng).unwrap();
        let per_action: Vec<Vec<f64>> = (0..k).map(|a| inst.losses_for(&round, a, &rec.adversary).unwrap()).collect();
        let check = expectation_telescoping_check(before.cum_loss(), before.eta(), 1.0, &rec.mixture, &per_action, rec.value_bound);
        assert!(check.passed, "round {s}: {check:?}");
    }
}

#[test]
fn swap_and_internal_regret_relation() {
    let k = 3;
    let inst = build_internal(k).unwrap();
    let t = 400;
    let mut state = SurrogateState::new(inst.dim(), t, 1.0).unwrap();
    let mut rng = AmfRng::seed_from_u64(2);
    let mut adv = SurrogateBestResponse;
    let mut tr = RegretTranscript::new(k);
    for s in 1..=t {
        let round = SubsequenceRound::full(s, k);
        let rec = play_subsequence_round(&inst, &round, &mut state, SubsequenceMethod::Feasibility, &mut adv, &mut rng).unwrap();
        tr.push(rec.action, rec.adversary.clone());
    }
    let internal = internal_regret(&tr);
    let swap = swap_regret(&tr);
    assert!(internal <= swap + 1e-12);
    assert!(swap <= k as f64 * internal + 1e-12);
    assert!(internal <= regret_bound(inst.dim() as f64, t, 1.0));
}

#[test]
fn first_blackwell_round_matches_matrix_solver() {
    let game = sign_game(3, 0.1).unwrap();
    let learner = ApproachLearner::new(&game, 100).unwrap();
    let chi = learner.surrogate().coordinate_weights();
    let direct = solve_zero_sum(&weighted_game(learner.environment(), &chi).unwrap()).unwrap();
    let mut state = learner.surrogate().clone();
    let mut rng = AmfRng::seed_from_u64(0);
    let rec = play_round(&mut state, learner.environment(), &mut LpSolver, &mut SurrogateBestResponse, &mut rng).unwrap();
    assert_eq!(rec.mixture, direct.mixture);
    assert!((rec.value_bound - direct.value).abs() < 1e-12);
}

#[test]
fn blackwell_values_stay_nonpositive() {
    let game = sign_game(2, 0.2).unwrap();
    let mut learner = ApproachLearner::new(&game, 20).unwrap();
    let mut rng = AmfRng::seed_from_u64(4);
    for _ in 0..20 {
        let r = learner.step(&mut SurrogateBestResponse, &mut rng).unwrap();
        assert!(r.lp_value <= 1e-8, "{}", r.lp_value);
        assert!(learner.approach().consistency_gap(&game) <= 1e-9);
    }
}

#[test]
fn zero_payoff_game_any_mixture_is_fine() {
    let mut game = sign_game(2, 0.2).unwrap();
    for row in &mut game.payoff {
        for u in row {
            u.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut learner = ApproachLearner::new(&game, 5).unwrap();
    let mut rng = AmfRng::seed_from_u64(4);
    let r = learner.step(&mut SurrogateBestResponse, &mut rng).unwrap();
    assert!(r.lp_value <= 0.0);
}

#[test]
fn calibration_framework_route_matches_standalone_learner() {
    let groups = vec![Group::All, Group::Members { values: vec![1] }];
    let config = CalibrationConfig::new(4, 2, groups.clone(), 60).unwrap();
    let mut learner = MulticalLearner::new(config.clone());
    let mut state = SurrogateState::with_eta(config.dim(), 60, config.eta()).unwrap();
    let mut ctx_rng = AmfRng::seed_from_u64(1);
    let (mut rng_a, mut rng_b) = (AmfRng::seed_from_u64(8), AmfRng::seed_from_u64(8));
    for _ in 0..60 {
        let ctx = RoundContext::new(vec![ctx_rng.random_range(0..3) as f64]);
        let member_of = amf::groups::memberships(&groups, &ctx);
        let pred = learner.predict(&member_of).unwrap();
        let round = learner.step(ctx, &mut LabelBestResponse, &mut rng_a).unwrap();

        let env = calibration_environment(&config, member_of.clone()).unwrap();
        let mut solver = CalibrationSolver { config: &config, member_of };
        let rec = play_round(&mut state, &env, &mut solver, &mut SurrogateBestResponse, &mut rng_b).unwrap();
        for (a, b) in pred.mixture.iter().zip(&rec.mixture) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(rec.value_bound, config.value_bound());
        assert_eq!(config.grid_value(rec.action), round.prediction);
        assert_eq!(rec.adversary[0], round.label);
    }
}

#[test]
fn calibeating_chain_holds_on_realized_run() {
    let t = 600;
    let (n, r) = (4, 2);
    let mut rng = AmfRng::seed_from_u64(3);
    let contexts: Vec<RoundContext> = (0..t).map(|_| RoundContext::new(vec![rng.random::<f64>()])).collect();
    let levels = vec![0.2, 0.5, 0.8];
    let traces: Vec<f64> = contexts.iter().map(|c| levels[(c.features[0] * 3.0).min(2.0) as usize]).collect();
    let f = Forecaster::new("thirds", levels, traces).unwrap();
    let g = vec![Group::All, Group::Box { lo: vec![0.0], hi: vec![0.5] }];
    let augmented = build_multicalibeating_groups(&g, std::slice::from_ref(&f));
    assert_eq!(augmented.len(), 2 * 4);
    let mut learner = MulticalLearner::new(CalibrationConfig::new(n, r, augmented.clone(), t).unwrap());
    let mut adv = IidAdversary::new(Distribution::Feature, None, Some(1)).unwrap();
    for (s, c) in contexts.into_iter().enumerate() {
        let ctx = RoundContext { features: c.features, forecasts: vec![f.forecasts[s]] };
        learner.step(ctx, &mut adv, &mut rng).unwrap();
    }
    let rounds = learner.state().rounds();
    let alpha_all = measure_alpha(rounds, &augmented, n).unwrap();
    assert!(alpha_all >= 0.0);
    let rep = evaluate_calibeating(rounds, std::slice::from_ref(&f), &g, n, r, 0.05).unwrap();
    for cell in &rep.cells {
        let CellReport::Scored(c) = cell else { panic!("group should be nonempty") };
        assert!(c.learner_brier <= c.forecaster_refinement + c.certified_bound + 1e-12, "{c:?}");
    }
}

#[test]
fn environment_with_vertices_and_interval_agree() {
    // Same affine loss over [0, 1] as an interval and as its two endpoints.
    let mk = |set| {
        let loss: LossFn = Box::new(|a, y, out| {
            out[0] = if a == 0 { y[0] - 0.5 } else { 0.3 - y[0] };
            out[1] = -out[0] * 0.5;
        });
        RoundEnvironment::new(vec![0, 1], set, 2, 1.0, loss).unwrap()
    };
    let chi = [0.7, 0.3];
    let a = weighted_game(&mk(AdversarySet::Interval { lo: 0.0, hi: 1.0 }), &chi).unwrap();
    let b = weighted_game(&mk(AdversarySet::Vertices(vec![vec![0.0], vec![1.0]])), &chi).unwrap();
    assert_eq!(a, b);
}

#[test]
fn near_tied_games_do_not_break_the_simplex() {
    // These runs reach weighted games whose entries agree to ~1e-8 within
    // the first 200 rounds.
    let game = sign_game(3, 0.1).unwrap();
    for seed in [0, 3, 4, 6] {
        let mut learner = ApproachLearner::new(&game, 4000).unwrap();
        let mut rng = AmfRng::seed_from_u64(seed);
        for _ in 0..200 {
            let r = learner.step(&mut SurrogateBestResponse, &mut rng).unwrap();
            assert!(r.lp_value <= 1e-8);
        }
    }
}
