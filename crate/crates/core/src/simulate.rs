//! Seeded, closed-world multi-agent simulator.
//!
//! Every run opens with a fixed prologue, then interleaves decoy steps drawn
//! from the agents' repertoires with one decisive step. Error runs take the
//! decisive action into the error state (possibly retrying it several times)
//! and go on to show symptoms; the other runs reach the recovered state once
//! and close normally. A run fails iff it contains the error triple.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abstraction::RawLog;
use crate::error::{Error, Result};
use crate::evaluation::GroundTruth;
use crate::model::{normalize_agent_name, AgentId, Outcome, Trajectory, TrajectorySuite, Triple};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub agent: String,
    pub action: String,
    pub state: String,
}

impl StepSpec {
    pub fn new(agent: &str, action: &str, state: &str) -> Self {
        Self {
            agent: agent.into(),
            action: action.into(),
            state: state.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub action: String,
    /// States this action can reach as a decoy step.
    #[serde(default)]
    pub states: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub repertoire: Vec<ActionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisiveError {
    pub agent: String,
    pub action: String,
    pub error_state: String,
    /// State the same action reaches on runs without the error.
    pub recovered_state: String,
    /// Weight of the recovered step among the ways a run avoids the error.
    #[serde(default = "unit_weight")]
    pub recovered_weight: f64,
    /// Other steps that can stand in for the decisive one on runs without
    /// the error, so the decisive agent may sit such runs out.
    #[serde(default)]
    pub alternatives: Vec<WeightedStep>,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedStep {
    #[serde(flatten)]
    pub step: StepSpec,
    pub weight: f64,
}

impl DecisiveError {
    fn error_step(&self) -> StepSpec {
        StepSpec::new(&self.agent, &self.action, &self.error_state)
    }

    fn recovered_step(&self) -> StepSpec {
        StepSpec::new(&self.agent, &self.action, &self.recovered_state)
    }

    fn sample_recovery(&self, rng: &mut impl Rng) -> StepSpec {
        if self.alternatives.is_empty() {
            return self.recovered_step();
        }
        let weights = std::iter::once(self.recovered_weight).chain(self.alternatives.iter().map(|a| a.weight));
        match WeightedIndex::new(weights).expect("validated weights").sample(rng) {
            0 => self.recovered_step(),
            i => self.alternatives[i - 1].step.clone(),
        }
    }
}

/// A distribution over non-negative counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountProfile {
    Fixed(u32),
    Uniform { min: u32, max: u32 },
    /// `(count, weight)` pairs; weights need not sum to one.
    Categorical(Vec<(u32, f64)>),
}

impl CountProfile {
    fn validate(&self, what: &str) -> Result<()> {
        match self {
            CountProfile::Fixed(_) => Ok(()),
            CountProfile::Uniform { min, max } if min <= max => Ok(()),
            CountProfile::Uniform { .. } => Err(Error::InvalidParameter(format!("{what}: min exceeds max"))),
            CountProfile::Categorical(items) => {
                if items.is_empty() || items.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
                    return Err(Error::InvalidParameter(format!("{what}: weights must be finite and non-negative")));
                }
                if items.iter().all(|(_, w)| *w == 0.0) {
                    return Err(Error::InvalidParameter(format!("{what}: all weights are zero")));
                }
                Ok(())
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        match self {
            CountProfile::Fixed(n) => *n,
            CountProfile::Uniform { min, max } => rng.gen_range(*min..=*max),
            CountProfile::Categorical(items) => {
                let dist = WeightedIndex::new(items.iter().map(|(_, w)| *w)).expect("validated weights");
                items[dist.sample(rng)].0
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            CountProfile::Fixed(n) => f64::from(*n),
            CountProfile::Uniform { min, max } => (f64::from(*min) + f64::from(*max)) / 2.0,
            CountProfile::Categorical(items) => {
                let total: f64 = items.iter().map(|(_, w)| w).sum();
                items.iter().map(|(c, w)| f64::from(*c) * w).sum::<f64>() / total
            }
        }
    }

    fn min(&self) -> u32 {
        match self {
            CountProfile::Fixed(n) => *n,
            CountProfile::Uniform { min, .. } => *min,
            CountProfile::Categorical(items) => items
                .iter()
                .filter(|(_, w)| *w > 0.0)
                .map(|(c, _)| *c)
                .min()
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Symptom {
    #[serde(flatten)]
    pub step: StepSpec,
    /// Chance the symptom shows up on an error run.
    pub probability: f64,
    /// Consecutive repetitions once it shows up.
    #[serde(default = "single")]
    pub repeat_profile: CountProfile,
}

fn single() -> CountProfile {
    CountProfile::Fixed(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub task_id: String,
    pub query: String,
    pub agents: Vec<AgentSpec>,
    /// Steps every run starts with.
    #[serde(default)]
    pub opening: Vec<StepSpec>,
    pub decisive_error: DecisiveError,
    pub p_error: f64,
    /// Consecutive repetitions of the error step on an error run.
    pub retry_profile: CountProfile,
    /// Number of decoy steps per run.
    pub length_profile: CountProfile,
    /// Steps that may follow the decisive error on error runs.
    #[serde(default)]
    pub symptoms: Vec<Symptom>,
    /// Steps every run without the error ends with.
    #[serde(default)]
    pub closing: Vec<StepSpec>,
    pub seed: u64,
}

/// Where the decisive error sits in the synthetic root run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub task_id: String,
    pub agent: String,
    pub action: String,
    pub state: String,
    pub cluster_id: usize,
    /// 1-based steps of the root run holding the error triple.
    pub root_steps: Vec<usize>,
}

impl SyntheticTruth {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            task_id: self.task_id.clone(),
            mistake_agent: self.agent.clone(),
            mistake_step: self.root_steps[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCase {
    pub suite: TrajectorySuite,
    pub truth: SyntheticTruth,
}

impl SyntheticScenario {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.p_error > 0.0 && self.p_error < 1.0) {
            return bad(format!("p_error must lie in (0, 1), got {}", self.p_error));
        }
        self.retry_profile.validate("retry_profile")?;
        self.length_profile.validate("length_profile")?;
        if self.retry_profile.min() == 0 {
            return bad("retry_profile must not allow zero repetitions".into());
        }
        let agents: BTreeMap<String, &AgentSpec> = self
            .agents
            .iter()
            .map(|a| (normalize_agent_name(&a.name), a))
            .collect();
        if agents.len() != self.agents.len() {
            return bad("agent names repeat after normalization".into());
        }
        let d = &self.decisive_error;
        let Some(owner) = agents.get(&normalize_agent_name(&d.agent)) else {
            return bad(format!("decisive agent `{}` is not in the scenario", d.agent));
        };
        if !owner.repertoire.iter().any(|a| a.action == d.action) {
            return bad(format!("`{}` has no action `{}`", d.agent, d.action));
        }
        if d.error_state == d.recovered_state {
            return bad("error_state and recovered_state must differ".into());
        }
        let weights = std::iter::once(d.recovered_weight).chain(d.alternatives.iter().map(|a| a.weight));
        if weights.clone().any(|w| !w.is_finite() || w < 0.0) || weights.sum::<f64>() <= 0.0 {
            return bad("recovery weights must be non-negative with a positive sum".into());
        }
        for s in &self.symptoms {
            if !(0.0..=1.0).contains(&s.probability) {
                return bad(format!("symptom probability {} outside [0, 1]", s.probability));
            }
            s.repeat_profile.validate("symptom repeat_profile")?;
        }
        let fixed = self
            .opening
            .iter()
            .chain(self.symptoms.iter().map(|s| &s.step))
            .chain(d.alternatives.iter().map(|a| &a.step))
            .chain(&self.closing);
        for step in fixed {
            if !agents.contains_key(&normalize_agent_name(&step.agent)) {
                return bad(format!("step agent `{}` is not in the scenario", step.agent));
            }
            if step.action.trim().is_empty() || step.state.trim().is_empty() {
                return bad("scenario steps need an action and a state".into());
            }
        }
        let error = d.error_step();
        let others = self
            .decoys()
            .into_iter()
            .chain(self.opening.iter().cloned())
            .chain(self.closing.iter().cloned())
            .chain(self.symptoms.iter().map(|s| s.step.clone()))
            .chain(d.alternatives.iter().map(|a| a.step.clone()));
        if others.into_iter().any(|s| same_step(&s, &error)) {
            return bad("the error triple may only occur as the decisive step".into());
        }
        Ok(())
    }

    /// Repertoire entries other than the decisive action.
    pub fn decoys(&self) -> Vec<StepSpec> {
        let d = &self.decisive_error;
        let mut out = Vec::new();
        for agent in &self.agents {
            for entry in &agent.repertoire {
                if normalize_agent_name(&agent.name) == normalize_agent_name(&d.agent) && entry.action == d.action {
                    continue;
                }
                for state in &entry.states {
                    out.push(StepSpec::new(&agent.name, &entry.action, state));
                }
            }
        }
        out
    }
}

fn same_step(a: &StepSpec, b: &StepSpec) -> bool {
    normalize_agent_name(&a.agent) == normalize_agent_name(&b.agent) && a.action == b.action && a.state == b.state
}

/// Assigns agent indices and cluster ids in order of first appearance.
#[derive(Default)]
struct Interner {
    agents: BTreeMap<String, AgentId>,
    triples: BTreeMap<(String, String, String), usize>,
}

impl Interner {
    fn triple(&mut self, s: &StepSpec) -> Result<Triple> {
        let name = normalize_agent_name(&s.agent);
        let next = self.agents.len();
        let agent = self
            .agents
            .entry(name.clone())
            .or_insert(AgentId::new(&s.agent, next)?)
            .clone();
        let next = self.triples.len();
        let id = *self
            .triples
            .entry((name, s.action.clone(), s.state.clone()))
            .or_insert(next);
        Triple::new(agent, s.action.clone(), s.state.clone(), id)
    }
}

fn sample_run(scenario: &SyntheticScenario, decoys: &[StepSpec], error: bool, rng: &mut ChaCha8Rng) -> Vec<StepSpec> {
    let mut steps = scenario.opening.clone();
    let count = (scenario.length_profile.sample(rng) as usize).min(decoys.len());
    let chosen: Vec<&StepSpec> = sample(rng, decoys.len(), count).into_iter().map(|i| &decoys[i]).collect();
    let at = rng.gen_range(0..=chosen.len());
    steps.extend(chosen[..at].iter().map(|s| (*s).clone()));
    let d = &scenario.decisive_error;
    if error {
        let r = scenario.retry_profile.sample(rng);
        steps.extend((0..r).map(|_| d.error_step()));
    } else {
        steps.push(d.sample_recovery(rng));
    }
    steps.extend(chosen[at..].iter().map(|s| (*s).clone()));
    if error {
        for symptom in &scenario.symptoms {
            if rng.gen_bool(symptom.probability) {
                let r = symptom.repeat_profile.sample(rng).max(1);
                steps.extend((0..r).map(|_| symptom.step.clone()));
            }
        }
    } else {
        steps.extend(scenario.closing.iter().cloned());
    }
    steps
}

/// Generates a root failing run plus `k` replays.
pub fn generate_synthetic_suite(scenario: &SyntheticScenario, k: usize) -> Result<SyntheticCase> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let decoys = scenario.decoys();
    let mut interner = Interner::default();
    let mut trajectories = Vec::with_capacity(k + 1);
    for run in 0..=k {
        let error = run == 0 || rng.gen_bool(scenario.p_error);
        let steps = sample_run(scenario, &decoys, error, &mut rng);
        let triples = steps.iter().map(|s| interner.triple(s)).collect::<Result<Vec<_>>>()?;
        let outcome = if error { Outcome::Failure } else { Outcome::Success };
        trajectories.push(Trajectory::from_triples(run, scenario.query.clone(), triples, outcome));
    }

    let error = scenario.decisive_error.error_step();
    let root = &trajectories[0];
    let root_steps: Vec<usize> = root
        .steps
        .iter()
        .filter(|s| s.triple.agent.name == normalize_agent_name(&error.agent) && s.triple.action == error.action && s.triple.state == error.state)
        .map(|s| s.index)
        .collect();
    let cluster_id = root.steps[root_steps[0] - 1].triple.cluster_id;
    let truth = SyntheticTruth {
        task_id: scenario.task_id.clone(),
        agent: normalize_agent_name(&error.agent),
        action: error.action,
        state: error.state,
        cluster_id,
        root_steps,
    };
    Ok(SyntheticCase {
        suite: TrajectorySuite::new(scenario.task_id.clone(), trajectories)?,
        truth,
    })
}

/// Renders a suite as raw logs, one `[agent] action => state` record per step.
pub fn render_raw_logs(suite: &TrajectorySuite) -> Vec<RawLog> {
    suite
        .trajectories
        .iter()
        .map(|t| RawLog {
            task_id: suite.task_id.clone(),
            run_id: t.id,
            records: t
                .steps
                .iter()
                .map(|s| format!("[{}] {} => {}", s.triple.agent.name, s.triple.action, s.triple.state))
                .collect(),
            outcome: t.outcome,
        })
        .collect()
}

pub fn parse_scenario(text: &str) -> Result<SyntheticScenario> {
    let scenario: SyntheticScenario = serde_json::from_str(text)?;
    scenario.validate()?;
    Ok(scenario)
}

/// A four-agent research task with eight decoy triples, the scenario family
/// the synthetic experiments use.
///
/// The web surfer only ever searches. Runs without the error mostly get
/// relevant results; some skip the web and pull the data through the coder.
/// After irrelevant results the verifier usually flags an inconsistency.
pub fn benchmark_scenario(seed: u64) -> SyntheticScenario {
    let action = |a: &str, states: &[&str]| ActionSpec {
        action: a.into(),
        states: states.iter().map(|s| s.to_string()).collect(),
    };
    SyntheticScenario {
        task_id: "synthetic-research".into(),
        query: "answer the research question".into(),
        agents: vec![
            AgentSpec {
                name: "Orchestrator".into(),
                repertoire: vec![
                    action("plan", &[]),
                    action("delegate", &["task assigned", "task reassigned"]),
                ],
            },
            AgentSpec {
                name: "WebSurfer".into(),
                repertoire: vec![action("search", &[])],
            },
            AgentSpec {
                name: "Coder".into(),
                repertoire: vec![
                    action("run script", &["script ok", "warning printed"]),
                    action("fetch url", &["page loaded", "timeout error shown"]),
                    action("query api", &[]),
                ],
            },
            AgentSpec {
                name: "Verifier".into(),
                repertoire: vec![
                    action("check", &["looks plausible", "needs more sources"]),
                    action("answer", &[]),
                ],
            },
        ],
        opening: vec![StepSpec::new("Orchestrator", "plan", "plan drafted")],
        decisive_error: DecisiveError {
            agent: "WebSurfer".into(),
            action: "search".into(),
            error_state: "irrelevant results".into(),
            recovered_state: "relevant results".into(),
            recovered_weight: 1.0,
            alternatives: vec![WeightedStep {
                step: StepSpec::new("Coder", "query api", "records fetched"),
                weight: 0.3,
            }],
        },
        p_error: 0.5,
        retry_profile: CountProfile::Categorical(vec![(1, 0.15), (2, 0.7), (3, 0.15)]),
        length_profile: CountProfile::Uniform { min: 2, max: 5 },
        symptoms: vec![Symptom {
            step: StepSpec::new("Verifier", "check", "inconsistent"),
            probability: 0.9,
            repeat_profile: CountProfile::Fixed(1),
        }],
        closing: vec![StepSpec::new("Verifier", "answer", "correct answer")],
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::worked_suite;
    use crate::spectrum::build_matrices;

    #[test]
    fn same_seed_same_suite() {
        let s = benchmark_scenario(7);
        let a = generate_synthetic_suite(&s, 4).unwrap();
        let b = generate_synthetic_suite(&s, 4).unwrap();
        assert_eq!(
            crate::suite_file::suite_to_json(&a.suite),
            crate::suite_file::suite_to_json(&b.suite)
        );
        assert_eq!(a.truth, b.truth);
        let c = generate_synthetic_suite(&s.with_seed(8), 4).unwrap();
        assert_ne!(a.suite, c.suite);
    }

    #[test]
    fn fixed_retry_sets_root_frequency() {
        let mut s = benchmark_scenario(3);
        s.retry_profile = CountProfile::Fixed(2);
        let case = generate_synthetic_suite(&s, 10).unwrap();
        assert_eq!(case.suite.trajectories[0].frequency(case.truth.cluster_id), 2);
        assert_eq!(case.truth.root_steps.len(), 2);
        assert_eq!(case.truth.root_steps[1], case.truth.root_steps[0] + 1);
    }

    #[test]
    fn failure_iff_error_present() {
        for seed in 0..50 {
            let case = generate_synthetic_suite(&benchmark_scenario(seed), 20).unwrap();
            assert_eq!(case.suite.trajectories[0].outcome, Outcome::Failure);
            for t in &case.suite.trajectories {
                assert_eq!(t.outcome.is_failure(), t.frequency(case.truth.cluster_id) > 0);
            }
        }
    }

    /// Two agents, no decoys, the second agent's plan opens every run.
    pub(crate) fn worked_scenario(seed: u64) -> SyntheticScenario {
        SyntheticScenario {
            task_id: "worked-search".into(),
            query: "find the answer".into(),
            agents: vec![
                AgentSpec {
                    name: "A1".into(),
                    repertoire: vec![ActionSpec {
                        action: "search".into(),
                        states: vec![],
                    }],
                },
                AgentSpec {
                    name: "A2".into(),
                    repertoire: vec![ActionSpec {
                        action: "plan".into(),
                        states: vec![],
                    }],
                },
            ],
            opening: vec![StepSpec::new("A2", "plan", "planMade")],
            decisive_error: DecisiveError {
                agent: "A1".into(),
                action: "search".into(),
                error_state: "badResult".into(),
                recovered_state: "goodResult".into(),
                recovered_weight: 1.0,
                alternatives: vec![],
            },
            p_error: 0.5,
            retry_profile: CountProfile::Categorical(vec![(1, 0.5), (2, 0.5)]),
            length_profile: CountProfile::Fixed(0),
            symptoms: vec![],
            closing: vec![],
            seed,
        }
    }

    pub(crate) const WORKED_SEED: u64 = 16;

    #[test]
    fn worked_shape_matches_fixture() {
        let case = generate_synthetic_suite(&worked_scenario(WORKED_SEED), 3).unwrap();
        let got = build_matrices(&case.suite).unwrap();
        let want = build_matrices(&worked_suite()).unwrap();
        assert_eq!(got.freq_triple, want.freq_triple);
        assert_eq!(got.coverage_triple, want.coverage_triple);
        assert_eq!(got.freq_agent, want.freq_agent);
        assert_eq!(got.outcomes, want.outcomes);
        assert_eq!(case.suite, worked_suite());
        assert_eq!(case.truth.root_steps, vec![2, 3]);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut s = benchmark_scenario(0);
        s.p_error = 1.0;
        assert!(s.validate().is_err());
        let mut s = benchmark_scenario(0);
        s.decisive_error.action = "fly".into();
        assert!(s.validate().is_err());
        let mut s = benchmark_scenario(0);
        s.retry_profile = CountProfile::Categorical(vec![(0, 1.0)]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn scenario_file_round_trips() {
        let s = benchmark_scenario(11);
        let text = serde_json::to_string_pretty(&s).unwrap();
        assert_eq!(parse_scenario(&text).unwrap(), s);
    }

    #[test]
    fn rendered_logs_use_rule_lines() {
        let logs = render_raw_logs(&worked_suite());
        assert_eq!(logs[0].records[1], "[a1] search => badResult");
        assert_eq!(logs.len(), 4);
    }
}
