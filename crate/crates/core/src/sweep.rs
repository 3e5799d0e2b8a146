//! Parameter sweeps over a corpus of labelled suites.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterMap;
use crate::error::{Error, Result};
use crate::evaluation::{aggregate_accuracy, judge_attribution, Accuracy, GroundTruth, Verdict};
use crate::model::TrajectorySuite;
use crate::simulate::{generate_synthetic_suite, SyntheticScenario};
use crate::spectrum::{rank_triples, Lambda, ScoringMode};

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSuite {
    pub suite: TrajectorySuite,
    pub clusters: ClusterMap,
    pub truth: GroundTruth,
}

impl LabelledSuite {
    pub fn new(suite: TrajectorySuite, truth: GroundTruth) -> Self {
        let clusters = ClusterMap::from_suite(&suite);
        Self { suite, clusters, truth }
    }
}

/// One suite per seed, each with `k` replays.
pub fn synthetic_corpus(scenario: &SyntheticScenario, seeds: impl IntoIterator<Item = u64>, k: usize) -> Result<Vec<LabelledSuite>> {
    seeds
        .into_iter()
        .map(|seed| {
            let case = generate_synthetic_suite(&scenario.with_seed(seed), k)?;
            Ok(LabelledSuite::new(case.suite, case.truth.ground_truth()))
        })
        .collect()
}

/// Applies `f` to every item on up to `parallelism` threads, keeping order.
pub fn par_map<T: Sync, R: Send>(items: &[T], parallelism: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if parallelism <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every item is visited"))
        .collect()
}

pub fn evaluate_case(case: &LabelledSuite, lambda: Lambda, mode: ScoringMode) -> Result<Verdict> {
    let ranking = rank_triples(&case.suite, lambda, mode)?;
    judge_attribution(&ranking, &case.clusters, &case.truth)
}

pub fn evaluate_corpus(cases: &[LabelledSuite], lambda: Lambda, mode: ScoringMode, parallelism: usize) -> Result<Accuracy> {
    mode.check_lambda(lambda)?;
    let verdicts = par_map(cases, parallelism, |c| evaluate_case(c, lambda, mode))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    aggregate_accuracy(&verdicts)
}

/// Modes that need λ < 1 fall back to famas-olambda at λ = 1.
pub fn mode_at(mode: ScoringMode, lambda: Lambda) -> ScoringMode {
    if mode.uses_alpha() && lambda.is_one() {
        ScoringMode::FamasOlambda
    } else {
        mode
    }
}

/// The root plus `k` replays drawn without replacement, in original order.
pub fn subsample_replays(suite: &TrajectorySuite, k: usize, rng: &mut ChaCha8Rng) -> Result<TrajectorySuite> {
    let replays = suite.replay_count();
    if k == 0 || k > replays {
        return Err(Error::InvalidParameter(format!("cannot draw {k} of {replays} replays")));
    }
    let mut picked = sample(rng, replays, k).into_vec();
    picked.sort_unstable();
    let mut trajectories = vec![suite.trajectories[0].clone()];
    trajectories.extend(picked.into_iter().map(|i| suite.trajectories[i + 1].clone()));
    TrajectorySuite::new(suite.task_id.clone(), trajectories)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: f64,
    /// Mean over resamples; a plain count when there is one sample.
    pub agent_correct: f64,
    pub action_correct: f64,
    pub total: usize,
}

pub fn lambda_sweep(
    cases: &[LabelledSuite],
    lambdas: &[Lambda],
    mode: ScoringMode,
    parallelism: usize,
) -> Result<Vec<SweepPoint>> {
    lambdas
        .iter()
        .map(|&l| {
            let acc = evaluate_corpus(cases, l, mode_at(mode, l), parallelism)?;
            Ok(SweepPoint {
                parameter: l.value(),
                agent_correct: acc.agent_correct as f64,
                action_correct: acc.action_correct as f64,
                total: acc.total,
            })
        })
        .collect()
}

/// For each `k`, averages correct counts over `resamples` replay subsamples.
/// Resample `r` of case `i` draws with seed `(seed, k, r, i)`, so every
/// point is reproducible on its own.
pub fn k_sweep(
    cases: &[LabelledSuite],
    ks: &[usize],
    resamples: usize,
    seed: u64,
    lambda: Lambda,
    mode: ScoringMode,
    parallelism: usize,
) -> Result<Vec<SweepPoint>> {
    if resamples == 0 {
        return Err(Error::InvalidParameter("resamples must be positive".into()));
    }
    let mode = mode_at(mode, lambda);
    let indexed: Vec<(usize, &LabelledSuite)> = cases.iter().enumerate().collect();
    ks.iter()
        .map(|&k| {
            let (mut agent, mut action, mut total) = (0usize, 0usize, 0usize);
            for r in 0..resamples {
                let verdicts = par_map(&indexed, parallelism, |&(i, case)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, k as u64, r as u64, i as u64));
                    let suite = subsample_replays(&case.suite, k, &mut rng)?;
                    let sub = LabelledSuite::new(suite, case.truth.clone());
                    evaluate_case(&sub, lambda, mode)
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
                let acc = aggregate_accuracy(&verdicts)?;
                agent += acc.agent_correct;
                action += acc.action_correct;
                total = acc.total;
            }
            Ok(SweepPoint {
                parameter: k as f64,
                agent_correct: agent as f64 / resamples as f64,
                action_correct: action as f64 / resamples as f64,
                total,
            })
        })
        .collect()
}

fn mix(seed: u64, k: u64, r: u64, i: u64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [k, r, i] {
        h = (h ^ v).wrapping_mul(0x0100_0000_01b3).rotate_left(29);
    }
    h
}

pub fn sweep_to_tsv(points: &[SweepPoint]) -> String {
    let mut out = String::from("parameter\tagent_correct_count\taction_correct_count\n");
    for p in points {
        let _ = writeln!(out, "{}\t{}\t{}", p.parameter, p.agent_correct, p.action_correct);
    }
    out
}
