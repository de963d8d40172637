use std::time::Instant;

use labrun_core::optimizer::{
    median, run_campaign, select_init, synthetic_dataset, BayesProposer, Dataset, Dl,
    ExperimentRecord, NearestOracle, Objective, OptimizerError, ParamPoint, ParamSpace, Proposer,
    RandomProposer, RecordSource, RemoteProposer, RemoteRequest, Surrogate,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn hidden_optimum() -> ParamPoint {
    ParamPoint {
        pc: 220.0,
        pp: 3,
        dp: 10,
        ds: 25.0,
        dl: Dl::Long,
        kp: 18,
        p3: 10,
    }
}

fn normalized_dist2(a: &ParamPoint, b: &ParamPoint) -> f64 {
    let (u, v) = (ParamSpace.normalize(a), ParamSpace.normalize(b));
    (0..7).map(|i| (u[i] - v[i]).powi(2)).sum()
}

#[test]
fn oracle_equals_exhaustive_scan() {
    let d = synthetic_dataset(500, 21, |p| p.pc / 505.0);
    let oracle = NearestOracle::new(d.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut agree = 0;
    for _ in 0..1000 {
        let q = ParamSpace.sample(&mut rng);
        let mut best = 0;
        for i in 1..d.len() {
            if normalized_dist2(&q, &d.records[i].point)
                < normalized_dist2(&q, &d.records[best].point)
            {
                best = i;
            }
        }
        if oracle.nearest_index(&q) == best
            && oracle.score(&q).unwrap() == d.records[best].pigment_score
        {
            agree += 1;
        }
    }
    assert_eq!(agree, 1000);
}

#[test]
fn equidistant_neighbors_resolve_to_lower_index() {
    let mut mid = ParamSpace.lower();
    mid.pc = 252.5;
    let mut left = mid;
    left.pc = 202.0;
    let mut right = mid;
    right.pc = 303.0;
    let rec = |point, s| ExperimentRecord {
        point,
        pigment_score: s,
        source: RecordSource::Dataset,
    };
    let a = NearestOracle::new(Dataset::new(vec![rec(right, 0.7), rec(left, 0.3)])).unwrap();
    assert_eq!(a.score(&mid).unwrap(), 0.7);
    let b = NearestOracle::new(Dataset::new(vec![rec(left, 0.3), rec(right, 0.7)])).unwrap();
    assert_eq!(b.score(&mid).unwrap(), 0.3);
}

/// Direct GP posterior for one observation, written out by hand.
fn single_point_ei(x0: &[f64; 7], y0: f64, q: &[f64; 7]) -> f64 {
    let (s2, l, noise) = (1e-6, 0.2, 1e-4);
    let d2: f64 = (0..7).map(|i| (x0[i] - q[i]).powi(2)).sum();
    let k = s2 * (-d2 / (2.0 * l * l)).exp();
    let mu = y0;
    let sigma = (s2 - k * k / (s2 + noise)).sqrt();
    let z = (mu - y0) / sigma;
    let cdf = 0.5 * (1.0 + libm::erf(z / 2f64.sqrt()));
    let pdf = (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (mu - y0) * cdf + sigma * pdf
}

#[test]
fn bayes_picks_the_ei_maximizer_among_all_candidates() {
    let p0 = hidden_optimum();
    let history = [ExperimentRecord {
        point: p0,
        pigment_score: 0.42,
        source: RecordSource::Dataset,
    }];
    let mut bayes = BayesProposer::default();
    let cands = bayes.candidates(0, 17);
    assert_eq!(cands.len(), 2048);
    let x0 = ParamSpace.normalize(&p0);
    let direct: Vec<f64> = cands
        .iter()
        .map(|c| single_point_ei(&x0, 0.42, &ParamSpace.normalize(c)))
        .collect();
    let ei = bayes.acquisition(&history, &cands).unwrap();
    for (a, b) in ei.iter().zip(&direct) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    let mut want = 0;
    for i in 0..direct.len() {
        if direct[i] > direct[want] {
            want = i;
        }
    }
    assert_eq!(bayes.propose(&history, 0, 17).unwrap().point, cands[want]);
}

fn surrogate_final_best(
    proposer: &mut dyn Proposer,
    init: Vec<ExperimentRecord>,
    seed: u64,
) -> f64 {
    let s = Surrogate::new(hidden_optimum());
    run_campaign(proposer, &s, 20, init, seed)
        .unwrap()
        .final_best()
        .unwrap()
}

#[test]
fn bayes_median_beats_random_on_surrogate() {
    let start = Instant::now();
    let bo: Vec<f64> = (0..20)
        .map(|s| surrogate_final_best(&mut BayesProposer::default(), vec![], s))
        .collect();
    let rnd: Vec<f64> = (0..20)
        .map(|s| surrogate_final_best(&mut RandomProposer, vec![], s))
        .collect();
    assert!(
        median(&bo) > median(&rnd),
        "{} vs {}",
        median(&bo),
        median(&rnd)
    );
    assert!(start.elapsed().as_secs() < 60);
}

/// Low-scoring init drags the GP mean and variance down; frozen so regressions show.
#[test]
fn low_performer_init_medians_are_frozen() {
    let s = Surrogate::new(hidden_optimum());
    let init = |seed| {
        select_init(
            &synthetic_dataset(4000, 1000 + seed, |p| s.eval(p)),
            10,
            0.6,
            seed,
        )
        .unwrap()
    };
    let bo: Vec<f64> = (0..20)
        .map(|k| surrogate_final_best(&mut BayesProposer::default(), init(k), k))
        .collect();
    let rnd: Vec<f64> = (0..20)
        .map(|k| surrogate_final_best(&mut RandomProposer, init(k), k))
        .collect();
    assert_eq!(
        format!("{:.4} {:.4}", median(&bo), median(&rnd)),
        "0.8075 0.9463"
    );
}

#[test]
fn proposer_errors_keep_partial_history() {
    let s = Surrogate::new(hidden_optimum());
    let mut remote = RemoteProposer::new("flaky", move |req: &RemoteRequest| {
        if req.iteration >= 2 {
            return Err(OptimizerError::RemoteUnavailable(
                "connection refused".into(),
            ));
        }
        Ok(
            json!({"point": {"PC": 700, "PP": 3, "DP": 10, "DS": 25, "DL": "long", "KP": 18, "P3": 10}}),
        )
    });
    let c = run_campaign(&mut remote, &s, 5, vec![], 0).unwrap();
    assert_eq!(c.history.len(), 2);
    assert!(c.error.as_deref().unwrap().contains("connection refused"));
    assert_eq!(c.warnings.len(), 2);
    assert_eq!(c.history[0].point.pc, 505.0);
    assert!(!c.is_complete());
}

#[test]
fn campaigns_are_reproducible() {
    let s = Surrogate::new(hidden_optimum());
    let d = synthetic_dataset(4000, 5, |p| s.eval(p));
    let init = select_init(&d, 10, 0.6, 4).unwrap();
    let run = || run_campaign(&mut BayesProposer::default(), &s, 6, init.clone(), 8).unwrap();
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn best_so_far_is_running_max_and_points_in_bounds(seed in 0u64..10_000, budget in 1usize..12, bayes in any::<bool>()) {
        let d = synthetic_dataset(120, seed, |p| (p.ds - 10.0) / 90.0);
        let oracle = NearestOracle::new(d.clone()).unwrap();
        let mut p: Box<dyn Proposer> = if bayes { Box::new(BayesProposer::default()) } else { Box::new(RandomProposer) };
        let init: Vec<_> = d.records[..3].to_vec();
        let c = run_campaign(p.as_mut(), &oracle, budget, init, seed).unwrap();
        prop_assert_eq!(c.history.len(), budget);
        let mut running = f64::NEG_INFINITY;
        for (r, b) in c.history.iter().zip(&c.best_so_far) {
            prop_assert!(ParamSpace.contains(&r.point));
            prop_assert!((0.0..=1.0).contains(&r.pigment_score));
            running = running.max(r.pigment_score);
            prop_assert_eq!(running, *b);
        }
        prop_assert!(c.best_so_far.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn remote_replies_always_land_in_bounds(vals in prop::array::uniform7(-1e4f64..1e4), long in any::<bool>()) {
        let reply = json!({"point": {
            "PC": vals[0], "PP": vals[1], "DP": vals[2], "DS": vals[3],
            "DL": if long { "long" } else { "short" }, "KP": vals[5], "P3": vals[6],
        }});
        let p = labrun_core::optimizer::parse_remote_reply(&reply).unwrap();
        prop_assert!(ParamSpace.contains(&p.point));
    }
}

#[test]
fn random_queries_hit_dataset_scores_only() {
    let d = synthetic_dataset(50, 8, |p| p.pp as f64 / 6.0);
    let o = NearestOracle::new(d.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let q = ParamSpace.sample(&mut rng);
        let s = o.score(&q).unwrap();
        assert!(d.records.iter().any(|r| r.pigment_score == s));
    }
}
