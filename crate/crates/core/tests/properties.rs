use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use famas::abstraction::{extract_primitives, PrimitiveRun, PrimitiveTriple, RawLog, RulesExtractor};
use famas::clustering::{cluster_suite, refine_trajectories, ExactJudge};
use famas::evaluation::{aggregate_accuracy, judge_attribution, GroundTruth, Verdict};
use famas::model::{build_universe, AgentId, Outcome, Trajectory, TrajectorySuite, Triple};
use famas::simulate::{benchmark_scenario, generate_synthetic_suite};
use famas::spectrum::{
    build_matrices, coverage_ratio, decayed_counts, frequency_proportion, rank_triples, Lambda, ScoringMode,
};

/// Triple ids per trajectory plus a failure flag; the root always fails.
#[derive(Debug, Clone)]
struct Shape {
    agents: Vec<usize>,
    runs: Vec<(bool, Vec<usize>)>,
}

fn shape() -> impl Strategy<Value = Shape> {
    (1usize..=6, 1usize..=3).prop_flat_map(|(n_triples, n_agents)| {
        let agents = prop::collection::vec(0..n_agents, n_triples);
        let run = (any::<bool>(), prop::collection::vec(0..n_triples, 1..12));
        let runs = prop::collection::vec(run, 1..=5);
        (agents, runs).prop_map(|(agents, mut runs)| {
            runs[0].0 = true;
            Shape { agents, runs }
        })
    })
}

fn triple(shape: &Shape, j: usize) -> Triple {
    let a = shape.agents[j];
    Triple::new(AgentId::new(&format!("ag{a}"), a).unwrap(), format!("act{j}"), format!("st{j}"), j).unwrap()
}

fn trajectories(shape: &Shape) -> Vec<Trajectory> {
    shape
        .runs
        .iter()
        .enumerate()
        .map(|(id, (failing, steps))| {
            let outcome = if *failing { Outcome::Failure } else { Outcome::Success };
            Trajectory::from_triples(id, "q", steps.iter().map(|&j| triple(shape, j)), outcome)
        })
        .collect()
}

fn suite(shape: &Shape) -> TrajectorySuite {
    TrajectorySuite::new("prop", trajectories(shape)).unwrap()
}

fn lambda() -> impl Strategy<Value = f64> {
    0.5001f64..0.9999
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn universe_ignores_order(s in shape(), seed in any::<u64>()) {
        let mut ts = trajectories(&s);
        let once = build_universe(&ts).unwrap();
        prop_assert_eq!(&build_universe(&ts).unwrap(), &once);
        let n = ts.len();
        ts.rotate_left((seed as usize) % n);
        ts.reverse();
        prop_assert_eq!(build_universe(&ts).unwrap(), once);
    }

    #[test]
    fn universe_bounded_by_steps(s in shape()) {
        let suite = suite(&s);
        let total: usize = s.runs.iter().map(|r| r.1.len()).sum();
        let distinct: BTreeSet<usize> = s.runs.iter().flat_map(|r| r.1.iter().copied()).collect();
        prop_assert!(suite.universe.len() <= total);
        prop_assert_eq!(suite.universe.len() == total, distinct.len() == total);
    }

    #[test]
    fn decay_is_monotone(s in shape(), l1 in lambda(), l2 in lambda(), pick in any::<prop::sample::Index>()) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let suite = suite(&s);
        let m = build_matrices(&suite).unwrap();
        for t in &suite.universe {
            let a = decayed_counts(&m, t, Lambda::new(lo).unwrap()).unwrap();
            let b = decayed_counts(&m, t, Lambda::new(hi).unwrap()).unwrap();
            prop_assert!(a.n_cf <= b.n_cf && a.n_cs <= b.n_cs);
        }

        // One more occurrence of a covered triple never raises its count.
        let mut more = s.clone();
        let run = pick.index(more.runs.len());
        let j = more.runs[run].1[0];
        more.runs[run].1.push(j);
        let l = Lambda::new(lo).unwrap();
        let (m0, m1) = (build_matrices(&suite).unwrap(), build_matrices(&self::suite(&more)).unwrap());
        let t = triple(&s, j);
        let (a, b) = (decayed_counts(&m0, &t, l).unwrap(), decayed_counts(&m1, &t, l).unwrap());
        prop_assert!(b.n_cf <= a.n_cf && b.n_cs <= a.n_cs);
    }

    #[test]
    fn lambda_one_base_formula_is_plain_kulczynski2(s in shape()) {
        let suite = suite(&s);
        let one = Lambda::new(1.0).unwrap();
        let olambda = rank_triples(&suite, one, ScoringMode::FamasOlambda).unwrap();
        let plain = rank_triples(&suite, one, ScoringMode::FamasK).unwrap();
        let k: BTreeMap<usize, f64> = plain.entries.iter().map(|e| (e.triple.cluster_id, e.composite)).collect();
        for e in &olambda.entries {
            prop_assert_eq!(e.kulczynski2_lambda.to_bits(), k[&e.triple.cluster_id].to_bits());
            prop_assert_eq!(e.alpha, 1.0);
        }
    }

    #[test]
    fn ranking_is_deterministic_and_restricted(s in shape(), l in lambda()) {
        let suite = suite(&s);
        let l = Lambda::new(l).unwrap();
        for mode in ScoringMode::ALL {
            let a = rank_triples(&suite, l, mode).unwrap();
            let b = rank_triples(&suite, l, mode).unwrap();
            prop_assert_eq!(a.to_tsv(), b.to_tsv());
            prop_assert_eq!(&a, &b);
            for e in &a.entries {
                prop_assert!(suite.trajectories[0].frequency(e.triple.cluster_id) >= 1);
            }
        }
    }

    #[test]
    fn coverage_and_frequency_ratios_are_bounded(s in shape()) {
        let suite = suite(&s);
        let m = build_matrices(&suite).unwrap();
        for t in &suite.universe {
            let g = coverage_ratio(&m, t).unwrap();
            let b = frequency_proportion(&m, t).unwrap();
            prop_assert!(g > 0.0 && g <= 1.0);
            prop_assert!(b > 0.0 && b <= 1.0);
        }
    }

    #[test]
    fn tarantula_cannot_separate_all_failing_suites(mut s in shape()) {
        for r in &mut s.runs {
            r.0 = true;
        }
        let r = rank_triples(&suite(&s), Lambda::DEFAULT, ScoringMode::Tarantula).unwrap();
        let first = r.entries[0].composite;
        prop_assert!(r.entries.iter().all(|e| e.composite == first));
        prop_assert_eq!(r.top1_unique(), r.entries.len() == 1);
    }

    #[test]
    fn outcome_codes_round_trip(v in 0u8..=1, bad in 2u8..) {
        prop_assert_eq!(Outcome::decode(v).unwrap().encode(), v);
        prop_assert!(Outcome::decode(bad).is_err());
    }
}

fn log_of(lines: &[(u8, u8, u8)]) -> RawLog {
    RawLog {
        task_id: "t".into(),
        run_id: 0,
        records: lines
            .iter()
            .map(|&(a, x, y)| match a % 5 {
                0 => format!("prose about step {x}"),
                _ => format!("[agent{}] act{} => st{}", a % 3, x % 4, y % 3),
            })
            .collect(),
        outcome: Outcome::Failure,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn extraction_ignores_chunk_boundaries(lines in prop::collection::vec(any::<(u8, u8, u8)>(), 0..40), b1 in 1usize..200, b2 in 1usize..200) {
        let log = log_of(&lines);
        let a = extract_primitives(&log, &RulesExtractor, b1).unwrap();
        prop_assert_eq!(&a, &extract_primitives(&log, &RulesExtractor, b1).unwrap());
        let b = extract_primitives(&log, &RulesExtractor, b2).unwrap();
        prop_assert_eq!(&a.primitives, &b.primitives);
        let steps: Vec<usize> = a.primitives.iter().map(|p| p.source_step).collect();
        prop_assert_eq!(steps, (1..=a.primitives.len()).collect::<Vec<_>>());
    }

    #[test]
    fn exact_clustering_is_equality_grouping(
        runs in prop::collection::vec(prop::collection::vec((0u8..3, 0u8..3, 0u8..3, any::<bool>()), 1..10), 1..5)
    ) {
        let mut primitive_runs = Vec::new();
        for (r, steps) in runs.iter().enumerate() {
            let primitives = steps
                .iter()
                .enumerate()
                .map(|(i, &(a, x, y, loud))| PrimitiveTriple {
                    agent_name: if loud { format!("Agent{a}") } else { format!(" agent{a}") },
                    action_desc: if loud { format!("ACT  {x}") } else { format!("act {x}") },
                    state_desc: format!("st{y}"),
                    source_run: r,
                    source_step: i + 1,
                    source_record: None,
                })
                .collect();
            primitive_runs.push(PrimitiveRun {
                run_id: r,
                outcome: if r == 0 { Outcome::Failure } else { Outcome::Success },
                initial_state: "t".into(),
                primitives,
            });
        }
        let all: Vec<PrimitiveTriple> = primitive_runs.iter().flat_map(|r| r.primitives.clone()).collect();
        let map = cluster_suite(&all, &ExactJudge, 3).unwrap();

        let total: usize = map.clusters.iter().map(|c| c.members.len()).sum();
        prop_assert_eq!(total, all.len());
        let key = |p: &PrimitiveTriple| {
            let n = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
            (n(&p.agent_name), n(&p.action_desc), n(&p.state_desc))
        };
        for a in &all {
            let ca = map.cluster_of(a.source_run, a.source_step).unwrap();
            prop_assert_eq!(&ca.agent.name, &key(a).0);
            for b in &all {
                let cb = map.cluster_of(b.source_run, b.source_step).unwrap();
                prop_assert_eq!(ca.cluster_id == cb.cluster_id, key(a) == key(b));
            }
        }

        let refined = refine_trajectories(&primitive_runs, &map).unwrap();
        for (t, r) in refined.iter().zip(&primitive_runs) {
            prop_assert_eq!(t.len(), r.primitives.len());
            prop_assert_eq!(t.outcome, r.outcome);
        }
    }

    #[test]
    fn synthetic_suites_are_closed_world(seed in any::<u64>(), k in 2usize..12, p in 0.05f64..0.95) {
        let mut scenario = benchmark_scenario(seed);
        scenario.p_error = p;
        let case = generate_synthetic_suite(&scenario, k).unwrap();
        prop_assert_eq!(&generate_synthetic_suite(&scenario, k).unwrap(), &case);
        let err = case.truth.cluster_id;
        prop_assert!(case.suite.trajectories[0].frequency(err) >= 1);
        for t in &case.suite.trajectories {
            prop_assert_eq!(t.outcome == Outcome::Failure, t.frequency(err) > 0);
        }
    }
}

fn verdicts() -> impl Strategy<Value = Vec<Verdict>> {
    prop::collection::vec(
        (any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(a, b, u)| Verdict {
            agent_correct: a || b,
            action_correct: b,
            top1_unique: u || a || b,
        }),
        1..300,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn accuracy_ignores_order_and_round_trips(mut vs in verdicts(), seed in any::<u64>()) {
        let a = aggregate_accuracy(&vs).unwrap();
        let n = vs.len();
        vs.rotate_left((seed as usize) % n);
        vs.reverse();
        prop_assert_eq!(aggregate_accuracy(&vs).unwrap(), a);
        prop_assert_eq!((a.agent_level / 100.0 * a.total as f64).round() as usize, a.agent_correct);
        prop_assert_eq!((a.action_level / 100.0 * a.total as f64).round() as usize, a.action_correct);
    }

    #[test]
    fn verdict_depends_only_on_the_top(seed in any::<u64>(), step in 1usize..6, rotate in any::<usize>()) {
        let case = generate_synthetic_suite(&benchmark_scenario(seed), 6).unwrap();
        let clusters = famas::clustering::ClusterMap::from_suite(&case.suite);
        let mut ranking = rank_triples(&case.suite, Lambda::DEFAULT, ScoringMode::Famas).unwrap();
        let truth = GroundTruth {
            task_id: case.truth.task_id.clone(),
            mistake_agent: case.truth.agent.clone(),
            mistake_step: step.min(ranking.root_steps),
        };
        let v = judge_attribution(&ranking, &clusters, &truth).unwrap();
        prop_assert_eq!(v, judge_attribution(&ranking, &clusters, &truth).unwrap());
        let n = ranking.entries.len();
        if n > 2 {
            ranking.entries[1..].rotate_left(rotate % (n - 1));
        }
        prop_assert_eq!(judge_attribution(&ranking, &clusters, &truth).unwrap(), v);
    }
}
