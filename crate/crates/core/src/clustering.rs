//! Two-level clustering of primitive triples: exact grouping by agent, then
//! greedy leader clustering of each agent's action-state descriptions under
//! a pluggable [`SemanticJudge`].

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstraction::{PrimitiveRun, PrimitiveTriple, ServiceError};
use crate::error::{Error, Result};
use crate::llm::{ChatClient, ChatMessage, PromptTemplate};
use crate::model::{normalize_agent_name, AgentId, Trajectory, TrajectorySuite, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Judgement {
    Same,
    Different,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Description<'a> {
    pub action: &'a str,
    pub state: &'a str,
}

impl<'a> Description<'a> {
    pub fn of(p: &'a PrimitiveTriple) -> Self {
        Self {
            action: &p.action_desc,
            state: &p.state_desc,
        }
    }
}

impl std::fmt::Display for Description<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} => {}", self.action, self.state)
    }
}

/// Decides whether two descriptions of the same agent's steps are the same
/// behavior. `judge(x, x)` must be `Same`.
pub trait SemanticJudge: Send + Sync {
    fn name(&self) -> &str;

    fn judge(&self, agent: &AgentId, a: &Description<'_>, b: &Description<'_>) -> Result<Judgement, ServiceError>;

    fn fingerprint(&self) -> Vec<String> {
        Vec::new()
    }
}

impl<T: SemanticJudge + ?Sized> SemanticJudge for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn judge(&self, agent: &AgentId, a: &Description<'_>, b: &Description<'_>) -> Result<Judgement, ServiceError> {
        (**self).judge(agent, a, b)
    }

    fn fingerprint(&self) -> Vec<String> {
        (**self).fingerprint()
    }
}

fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Equality after trimming, whitespace collapsing and case folding.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactJudge;

impl SemanticJudge for ExactJudge {
    fn name(&self) -> &str {
        "exact"
    }

    fn judge(&self, _: &AgentId, a: &Description<'_>, b: &Description<'_>) -> Result<Judgement, ServiceError> {
        let same = normalize_text(a.action) == normalize_text(b.action)
            && normalize_text(a.state) == normalize_text(b.state);
        Ok(if same { Judgement::Same } else { Judgement::Different })
    }
}

/// Reads `SAME` / `DIFFERENT` from the first word of a reply.
pub fn parse_verdict(text: &str) -> Option<Judgement> {
    let word: String = text
        .trim_start()
        .chars()
        .skip_while(|c| !c.is_alphabetic())
        .take_while(|c| c.is_alphabetic())
        .collect();
    match word.to_ascii_uppercase().as_str() {
        "SAME" => Some(Judgement::Same),
        "DIFFERENT" => Some(Judgement::Different),
        _ => None,
    }
}

#[derive(Debug)]
pub struct LlmJudge {
    client: ChatClient,
    template: PromptTemplate,
}

impl LlmJudge {
    pub fn new(client: ChatClient, template: PromptTemplate) -> Self {
        Self { client, template }
    }
}

impl SemanticJudge for LlmJudge {
    fn name(&self) -> &str {
        "llm"
    }

    fn judge(&self, agent: &AgentId, a: &Description<'_>, b: &Description<'_>) -> Result<Judgement, ServiceError> {
        let prompt = self.template.render(&[
            ("agent", &agent.name),
            ("action_a", a.action),
            ("state_a", a.state),
            ("action_b", b.action),
            ("state_b", b.state),
        ]);
        let reply = self.client.complete(&[ChatMessage::user(prompt)])?;
        parse_verdict(&reply).ok_or_else(|| ServiceError(format!("unreadable verdict `{}`", reply.trim())))
    }

    fn fingerprint(&self) -> Vec<String> {
        vec![
            format!("judge template {}", self.template.fingerprint()),
            format!("judge model {}", self.client.settings().model),
        ]
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct CacheFile {
    entries: BTreeMap<String, Judgement>,
}

/// Memoizes an inner judge per unordered description pair.
///
/// The pair is put in canonical order before the inner judge is asked, so
/// the inner judge sees each unordered pair once and in one orientation.
#[derive(Debug)]
pub struct CachingJudge<J> {
    inner: J,
    entries: Mutex<BTreeMap<String, Judgement>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<J: SemanticJudge> CachingJudge<J> {
    pub fn new(inner: J) -> Self {
        Self {
            inner,
            entries: Mutex::new(BTreeMap::new()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    /// Starts from a cache file when it exists.
    pub fn with_file(inner: J, path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::new(inner));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::with_cache_text(inner, &text)
    }

    /// Seeds the cache from the JSON written by [`CachingJudge::save`].
    pub fn with_cache_text(inner: J, text: &str) -> Result<Self> {
        let file: CacheFile = serde_json::from_str(text)?;
        let judge = Self::new(inner);
        *judge.entries.lock().expect("cache lock") = file.entries;
        Ok(judge)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CacheFile {
            entries: self.entries.lock().expect("cache lock").clone(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(agent: &AgentId, a: &Description<'_>, b: &Description<'_>) -> String {
        let mut h = Sha256::new();
        for part in [agent.name.as_str(), a.action, a.state, b.action, b.state] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

impl<J: SemanticJudge> SemanticJudge for CachingJudge<J> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn judge(&self, agent: &AgentId, a: &Description<'_>, b: &Description<'_>) -> Result<Judgement, ServiceError> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let key = Self::key(agent, lo, hi);
        if let Some(v) = self.entries.lock().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(*v);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = self.inner.judge(agent, lo, hi)?;
        self.entries.lock().expect("cache lock").insert(key, v);
        Ok(v)
    }

    fn fingerprint(&self) -> Vec<String> {
        self.inner.fingerprint()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentGroup {
    pub agent: AgentId,
    pub primitives: Vec<PrimitiveTriple>,
}

/// Partitions primitives by normalized agent name. Agent indices follow
/// first appearance in `(source_run, source_step)` order.
pub fn group_by_agent(primitives: &[PrimitiveTriple]) -> Result<Vec<AgentGroup>> {
    let mut ordered: Vec<&PrimitiveTriple> = primitives.iter().collect();
    ordered.sort_by_key(|p| (p.source_run, p.source_step));
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut groups: Vec<AgentGroup> = Vec::new();
    for p in ordered {
        let name = normalize_agent_name(&p.agent_name);
        let slot = match index.get(&name) {
            Some(&i) => i,
            None => {
                let agent = AgentId::new(&p.agent_name, groups.len())?;
                index.insert(name, groups.len());
                groups.push(AgentGroup {
                    agent,
                    primitives: Vec::new(),
                });
                groups.len() - 1
            }
        };
        groups[slot].primitives.push(p.clone());
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub cluster_id: usize,
    pub agent: AgentId,
    pub representative_action: String,
    pub representative_state: String,
    /// `(source_run, source_step)` of every member, ascending.
    pub members: Vec<(usize, usize)>,
}

impl Cluster {
    pub fn triple(&self) -> Result<Triple> {
        Triple::new(
            self.agent.clone(),
            self.representative_action.clone(),
            self.representative_state.clone(),
            self.cluster_id,
        )
    }

    /// Member steps that lie in the given run.
    pub fn steps_in_run(&self, run: usize) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .filter(move |(r, _)| *r == run)
            .map(|(_, s)| *s)
    }
}

/// Greedy leader clustering of one agent group.
///
/// Primitives are visited in `(source_run, source_step)` order and join the
/// first cluster whose leader the judge calls `Same`; otherwise they lead a
/// new cluster. Ids run from `first_id` in creation order.
pub fn cluster_action_states(group: &AgentGroup, judge: &dyn SemanticJudge, first_id: usize) -> Result<Vec<Cluster>> {
    let mut ordered: Vec<&PrimitiveTriple> = group.primitives.iter().collect();
    ordered.sort_by_key(|p| (p.source_run, p.source_step));

    let mut leaders: Vec<&PrimitiveTriple> = Vec::new();
    let mut clusters: Vec<Cluster> = Vec::new();
    let agent = &group.agent;
    let fail = |a: &Description<'_>, b: &Description<'_>, e: ServiceError| Error::Judge {
        agent: agent.name.clone(),
        left: a.to_string(),
        right: b.to_string(),
        reason: e.0,
    };

    for p in ordered {
        if normalize_agent_name(&p.agent_name) != agent.name {
            return Err(Error::InvalidParameter(format!(
                "primitive of `{}` in group of `{}`",
                p.agent_name, agent.name
            )));
        }
        let desc = Description::of(p);
        let mut joined = None;
        for (i, leader) in leaders.iter().enumerate() {
            let lead = Description::of(leader);
            match judge.judge(agent, &lead, &desc).map_err(|e| fail(&lead, &desc, e))? {
                Judgement::Same => {
                    joined = Some(i);
                    break;
                }
                Judgement::Different => {}
            }
        }
        match joined {
            Some(i) => clusters[i].members.push((p.source_run, p.source_step)),
            None => {
                if judge.judge(agent, &desc, &desc).map_err(|e| fail(&desc, &desc, e))? != Judgement::Same {
                    return Err(Error::NonReflexiveJudge {
                        agent: agent.name.clone(),
                        description: desc.to_string(),
                    });
                }
                clusters.push(Cluster {
                    cluster_id: first_id + clusters.len(),
                    agent: agent.clone(),
                    representative_action: p.action_desc.clone(),
                    representative_state: p.state_desc.clone(),
                    members: vec![(p.source_run, p.source_step)],
                });
                leaders.push(p);
            }
        }
    }
    Ok(clusters)
}

/// All clusters of a suite plus a lookup from primitive position to cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMap {
    pub clusters: Vec<Cluster>,
    by_member: BTreeMap<(usize, usize), usize>,
}

impl ClusterMap {
    pub fn new(clusters: Vec<Cluster>) -> Result<Self> {
        let mut by_member = BTreeMap::new();
        for (pos, c) in clusters.iter().enumerate() {
            for &m in &c.members {
                if by_member.insert(m, pos).is_some() {
                    return Err(Error::format(
                        "cluster map",
                        format!("run {} step {} belongs to two clusters", m.0, m.1),
                    ));
                }
            }
        }
        Ok(Self { clusters, by_member })
    }

    /// Reconstructs clusters from a refined suite: each universe triple is a
    /// cluster whose members are the steps where it occurs.
    pub fn from_suite(suite: &TrajectorySuite) -> Self {
        let mut members: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for t in &suite.trajectories {
            for s in &t.steps {
                members.entry(s.triple.cluster_id).or_default().push((t.id, s.index));
            }
        }
        let clusters = suite
            .universe
            .iter()
            .map(|u| {
                let mut m = members.remove(&u.cluster_id).unwrap_or_default();
                m.sort();
                Cluster {
                    cluster_id: u.cluster_id,
                    agent: u.agent.clone(),
                    representative_action: u.action.clone(),
                    representative_state: u.state.clone(),
                    members: m,
                }
            })
            .collect();
        Self::new(clusters).expect("steps of a suite are distinct")
    }

    pub fn cluster_of(&self, run: usize, step: usize) -> Option<&Cluster> {
        self.by_member.get(&(run, step)).map(|&i| &self.clusters[i])
    }

    pub fn get(&self, cluster_id: usize) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.cluster_id == cluster_id)
    }

    pub fn to_document(&self) -> ClusterMapDocument {
        ClusterMapDocument {
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterRecord {
                    cluster_id: c.cluster_id,
                    agent: c.agent.name.clone(),
                    action: c.representative_action.clone(),
                    state: c.representative_state.clone(),
                    members: c.members.iter().map(|&(r, s)| [r, s]).collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_document()).expect("cluster maps serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMapDocument {
    pub clusters: Vec<ClusterRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub cluster_id: usize,
    pub agent: String,
    pub action: String,
    pub state: String,
    pub members: Vec<[usize; 2]>,
}

pub fn parse_cluster_map(text: &str) -> Result<ClusterMap> {
    let doc: ClusterMapDocument = serde_json::from_str(text)?;
    let mut agents: BTreeMap<String, AgentId> = BTreeMap::new();
    let mut ids = std::collections::BTreeSet::new();
    let mut clusters = Vec::with_capacity(doc.clusters.len());
    for rec in doc.clusters {
        if !ids.insert(rec.cluster_id) {
            return Err(Error::format(
                "cluster map",
                format!("cluster id {} repeated", rec.cluster_id),
            ));
        }
        let key = normalize_agent_name(&rec.agent);
        let next = agents.len();
        let agent = match agents.get(&key) {
            Some(a) => a.clone(),
            None => {
                let a = AgentId::new(&rec.agent, next)?;
                agents.insert(key, a.clone());
                a
            }
        };
        let mut members: Vec<(usize, usize)> = rec.members.iter().map(|m| (m[0], m[1])).collect();
        members.sort();
        clusters.push(Cluster {
            cluster_id: rec.cluster_id,
            agent,
            representative_action: rec.action,
            representative_state: rec.state,
            members,
        });
    }
    ClusterMap::new(clusters)
}

/// Clusters every agent group, up to `parallelism` groups at once, and
/// numbers clusters globally in agent order then creation order.
pub fn cluster_suite(primitives: &[PrimitiveTriple], judge: &dyn SemanticJudge, parallelism: usize) -> Result<ClusterMap> {
    let groups = group_by_agent(primitives)?;
    let workers = parallelism.max(1).min(groups.len().max(1));
    let per_group: Vec<Result<Vec<Cluster>>> = if workers == 1 {
        groups.iter().map(|g| cluster_action_states(g, judge, 0)).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<Vec<Cluster>>>>> =
            Mutex::new((0..groups.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= groups.len() {
                        break;
                    }
                    let r = cluster_action_states(&groups[i], judge, 0);
                    slots.lock().expect("worker panicked")[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .expect("worker panicked")
            .into_iter()
            .map(|s| s.expect("every group is visited"))
            .collect()
    };

    let mut clusters = Vec::new();
    for group in per_group {
        for mut c in group? {
            c.cluster_id = clusters.len();
            clusters.push(c);
        }
    }
    ClusterMap::new(clusters)
}

/// Replaces every primitive with its cluster's canonical triple.
pub fn refine_trajectories(runs: &[PrimitiveRun], map: &ClusterMap) -> Result<Vec<Trajectory>> {
    runs.iter()
        .map(|run| {
            let triples = run
                .primitives
                .iter()
                .map(|p| {
                    map.cluster_of(p.source_run, p.source_step)
                        .ok_or(Error::Unclustered {
                            run: p.source_run,
                            step: p.source_step,
                        })?
                        .triple()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Trajectory::from_triples(
                run.run_id,
                run.initial_state.clone(),
                triples,
                run.outcome,
            ))
        })
        .collect()
}

/// Clusters and refines a set of runs into a suite.
pub fn build_suite(
    task_id: &str,
    runs: &[PrimitiveRun],
    judge: &dyn SemanticJudge,
    parallelism: usize,
) -> Result<(TrajectorySuite, ClusterMap)> {
    let all: Vec<PrimitiveTriple> = runs.iter().flat_map(|r| r.primitives.iter().cloned()).collect();
    let map = cluster_suite(&all, judge, parallelism)?;
    let trajectories = refine_trajectories(runs, &map)?;
    Ok((TrajectorySuite::new(task_id, trajectories)?, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::worked_suite;
    use crate::model::Outcome;

    fn prim(agent: &str, action: &str, state: &str, run: usize, step: usize) -> PrimitiveTriple {
        PrimitiveTriple {
            agent_name: agent.into(),
            action_desc: action.into(),
            state_desc: state.into(),
            source_run: run,
            source_step: step,
            source_record: None,
        }
    }

    #[test]
    fn agent_names_unify() {
        let ps = vec![
            prim("WebSurfer", "a", "b", 0, 1),
            prim("websurfer ", "a", "b", 0, 2),
            prim("Coder", "a", "b", 0, 3),
        ];
        let groups = group_by_agent(&ps).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].primitives.len(), 2);
        assert_eq!(groups[1].agent.index, 1);
    }

    #[test]
    fn single_agent_single_group() {
        let ps: Vec<_> = (1..=4).map(|i| prim("a", "x", "y", 0, i)).collect();
        let groups = group_by_agent(&ps).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].primitives.len(), 4);
    }

    fn group(descs: &[(&str, &str)]) -> AgentGroup {
        AgentGroup {
            agent: AgentId::new("a", 0).unwrap(),
            primitives: descs
                .iter()
                .enumerate()
                .map(|(i, (x, y))| prim("a", x, y, 0, i + 1))
                .collect(),
        }
    }

    #[test]
    fn identical_descriptions_merge() {
        let cs = cluster_action_states(&group(&[("x", "1"), ("x", "1"), ("X ", " 1")]), &ExactJudge, 0).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].members.len(), 3);
    }

    #[test]
    fn disjoint_descriptions_stay_apart() {
        let cs = cluster_action_states(&group(&[("x", "1"), ("y", "2")]), &ExactJudge, 5).unwrap();
        assert_eq!(cs.iter().map(|c| c.cluster_id).collect::<Vec<_>>(), vec![5, 6]);
    }

    /// Same(x, x'), Different otherwise.
    struct Synonyms;

    impl SemanticJudge for Synonyms {
        fn name(&self) -> &str {
            "synonyms"
        }
        fn judge(&self, _: &AgentId, a: &Description<'_>, b: &Description<'_>) -> Result<Judgement, ServiceError> {
            let root = |d: &Description<'_>| d.action.trim_end_matches('\'').to_string();
            Ok(if root(a) == root(b) { Judgement::Same } else { Judgement::Different })
        }
    }

    #[test]
    fn greedy_leader_pass() {
        let cs = cluster_action_states(&group(&[("x", "s"), ("y", "s"), ("x'", "s")]), &Synonyms, 0).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].members, vec![(0, 1), (0, 3)]);
        assert_eq!(cs[0].representative_action, "x");
        assert_eq!(cs[1].members, vec![(0, 2)]);
    }

    struct Contrarian;

    impl SemanticJudge for Contrarian {
        fn name(&self) -> &str {
            "contrarian"
        }
        fn judge(&self, _: &AgentId, _: &Description<'_>, _: &Description<'_>) -> Result<Judgement, ServiceError> {
            Ok(Judgement::Different)
        }
    }

    #[test]
    fn non_reflexive_judge_is_detected() {
        let err = cluster_action_states(&group(&[("x", "1")]), &Contrarian, 0).unwrap_err();
        assert!(matches!(err, Error::NonReflexiveJudge { .. }));
    }

    struct Down;

    impl SemanticJudge for Down {
        fn name(&self) -> &str {
            "down"
        }
        fn judge(&self, _: &AgentId, _: &Description<'_>, _: &Description<'_>) -> Result<Judgement, ServiceError> {
            Err(ServiceError("503".into()))
        }
    }

    #[test]
    fn judge_failure_names_the_pair() {
        let err = cluster_action_states(&group(&[("x", "1")]), &Down, 0).unwrap_err();
        match err {
            Error::Judge { left, right, .. } => assert_eq!((left.as_str(), right.as_str()), ("x => 1", "x => 1")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn cache_asks_each_unordered_pair_once() {
        let judge = CachingJudge::new(ExactJudge);
        let agent = AgentId::new("a", 0).unwrap();
        let x = Description { action: "x", state: "1" };
        let y = Description { action: "y", state: "2" };
        judge.judge(&agent, &x, &y).unwrap();
        judge.judge(&agent, &y, &x).unwrap();
        assert_eq!((judge.misses(), judge.hits()), (1, 1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.json");
        judge.save(&path).unwrap();
        let again = CachingJudge::with_file(ExactJudge, &path).unwrap();
        again.judge(&agent, &x, &y).unwrap();
        assert_eq!(again.hits(), 1);
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("SAME"), Some(Judgement::Same));
        assert_eq!(parse_verdict("  **Different**."), Some(Judgement::Different));
        assert_eq!(parse_verdict("maybe"), None);
    }

    #[test]
    fn refinement_substitutes_in_place() {
        let runs = vec![PrimitiveRun {
            run_id: 0,
            outcome: Outcome::Failure,
            initial_state: "q".into(),
            primitives: vec![prim("a", "y", "2", 0, 1), prim("a", "x", "1", 0, 2), prim("b", "x", "1", 0, 3)],
        }];
        let (suite, map) = build_suite("t", &runs, &ExactJudge, 1).unwrap();
        let ids: Vec<usize> = suite.trajectories[0].steps.iter().map(|s| s.triple.cluster_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(map.clusters.len(), 3);
        // cross-agent descriptions never merge
        assert_ne!(map.clusters[1].agent, map.clusters[2].agent);
    }

    #[test]
    fn unclustered_primitive_is_an_error() {
        let runs = vec![PrimitiveRun {
            run_id: 2,
            outcome: Outcome::Failure,
            initial_state: "q".into(),
            primitives: vec![prim("a", "x", "1", 2, 1)],
        }];
        let map = ClusterMap::new(vec![]).unwrap();
        assert!(matches!(
            refine_trajectories(&runs, &map),
            Err(Error::Unclustered { run: 2, step: 1 })
        ));
    }

    #[test]
    fn worked_suite_from_primitives() {
        let expected = worked_suite();
        let runs: Vec<PrimitiveRun> = expected
            .trajectories
            .iter()
            .map(|t| PrimitiveRun {
                run_id: t.id,
                outcome: t.outcome,
                initial_state: t.initial_state.clone(),
                primitives: t
                    .steps
                    .iter()
                    .map(|s| {
                        let agent = s.triple.agent.name.to_uppercase();
                        prim(&agent, &s.triple.action, &s.triple.state, t.id, s.index)
                    })
                    .collect(),
            })
            .collect();
        let (suite, _) = build_suite(&expected.task_id, &runs, &ExactJudge, 2).unwrap();
        assert_eq!(suite, expected);
    }

    #[test]
    fn cluster_map_round_trips() {
        let map = ClusterMap::from_suite(&worked_suite());
        let parsed = parse_cluster_map(&map.to_json()).unwrap();
        assert_eq!(parsed.to_json(), map.to_json());
        assert_eq!(map.get(1).unwrap().steps_in_run(0).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn duplicate_members_are_rejected() {
        let text = r#"{"clusters":[{"cluster_id":0,"agent":"a","action":"x","state":"y","members":[[0,1]]},
            {"cluster_id":1,"agent":"a","action":"z","state":"y","members":[[0,1]]}]}"#;
        assert!(parse_cluster_map(text).is_err());
    }
}
