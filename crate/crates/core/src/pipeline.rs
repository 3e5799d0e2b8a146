//! End-to-end orchestration: acquire runs, abstract, cluster, rank, judge
//! and write every artifact to the output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::abstraction::{
    extract_suite, load_raw_logs, Extractor, ExtractionDiagnostics, LlmExtractor, PrimitiveRun, PrimitivesDocument,
    RawLog, RulesExtractor,
};
use crate::clustering::{build_suite, CachingJudge, ClusterMap, ExactJudge, LlmJudge, SemanticJudge};
use crate::config::{ExtractorKind, InputSpec, JudgeKind, Settings};
use crate::error::{Error, Result};
use crate::evaluation::{judge_attribution, parse_ground_truth, GroundTruth, Verdict};
use crate::llm::{ChatClient, PromptTemplate};
use crate::model::{Outcome, TrajectorySuite};
use crate::replay::{replay_task, DroppedRun, SubprocessRunner, MIN_REPLAYS};
use crate::simulate::{generate_synthetic_suite, parse_scenario, render_raw_logs};
use crate::spectrum::{rank_triples, ExportEntry, Ranking, ScoringMode};
use crate::suite_file::{parse_suite, suite_to_json, SUITE_FORMAT_VERSION};

/// Ranked entries carried in the report itself; the full list is in
/// `ranking.json`.
pub const REPORT_TOP_N: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub task_id: String,
    pub mode: ScoringMode,
    pub lambda: f64,
    pub replays: usize,
    pub failing_runs: usize,
    pub candidates: usize,
    pub top1_unique: bool,
    pub top: Vec<ExportEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    pub fingerprint: Vec<String>,
}

impl AttributionReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("task {}\n", self.task_id));
        out.push_str(&format!(
            "mode {} lambda {} over {} replays ({} failing runs incl. root)\n",
            self.mode, self.lambda, self.replays, self.failing_runs
        ));
        out.push_str(&format!("{} candidate triples\n\n", self.candidates));
        for e in &self.top {
            out.push_str(&format!(
                "{:>3}. [{}] {} => {}  score {:.6}  (alpha {:.4}, k2 {:.4}, beta {:.4}, gamma {:.4})\n",
                e.rank, e.agent, e.action, e.state, e.composite, e.alpha, e.k2_lambda, e.beta, e.gamma
            ));
        }
        if !self.top1_unique {
            out.push_str("\nfirst place is tied; no unique attribution\n");
        }
        if let (Some(t), Some(v)) = (&self.ground_truth, &self.verdict) {
            out.push_str(&format!(
                "\nannotated: {} at step {}\nagent correct: {}\naction correct: {}\n",
                t.mistake_agent, t.mistake_step, v.agent_correct, v.action_correct
            ));
        }
        out
    }
}

/// Everything that happened on the way, written to `diagnostics.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub extraction: Vec<ExtractionDiagnostics>,
    #[serde(default)]
    pub dropped_runs: Vec<DroppedRun>,
    /// Replays left out because abstraction produced no steps.
    #[serde(default)]
    pub empty_runs: Vec<usize>,
    #[serde(default)]
    pub truncated_runs: Vec<usize>,
}

pub fn build_extractor(settings: &Settings) -> Result<Box<dyn Extractor>> {
    Ok(match settings.extractor {
        ExtractorKind::Rules => Box::new(RulesExtractor),
        ExtractorKind::Llm => {
            let template = match &settings.extract_prompt {
                Some(p) => PromptTemplate::load(p)?,
                None => PromptTemplate::builtin_extract(),
            };
            let client = ChatClient::from_env(settings.llm.clone(), settings.retry.clone())?;
            Box::new(LlmExtractor::new(client, template))
        }
    })
}

pub fn build_judge(settings: &Settings) -> Result<CachingJudge<Box<dyn SemanticJudge>>> {
    let inner: Box<dyn SemanticJudge> = match settings.judge {
        JudgeKind::Exact => Box::new(ExactJudge),
        JudgeKind::Llm => {
            let template = match &settings.judge_prompt {
                Some(p) => PromptTemplate::load(p)?,
                None => PromptTemplate::builtin_judge(),
            };
            let client = ChatClient::from_env(settings.llm.clone(), settings.retry.clone())?;
            Box::new(LlmJudge::new(client, template))
        }
    };
    match &settings.judge_cache {
        Some(path) => CachingJudge::with_file(inner, path),
        None => Ok(CachingJudge::new(inner)),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Keeps the root and the first `k` replays.
pub fn keep_replays(mut logs: Vec<RawLog>, k: usize, diag: &mut Diagnostics) -> Vec<RawLog> {
    logs.sort_by_key(|l| l.run_id);
    if logs.len() > k + 1 {
        diag.truncated_runs = logs[k + 1..].iter().map(|l| l.run_id).collect();
        logs.truncate(k + 1);
    }
    logs
}

fn ensure_root(logs: &[RawLog]) -> Result<()> {
    match logs.first() {
        Some(root) if root.run_id == 0 && root.outcome == Outcome::Failure => Ok(()),
        Some(_) => Err(Error::InvalidParameter("run 0 must be present and failing".into())),
        None => Err(Error::InvalidParameter("no runs to analyze".into())),
    }
}

struct Acquired {
    logs: Option<Vec<RawLog>>,
    suite: Option<TrajectorySuite>,
    truth: Option<GroundTruth>,
}

fn acquire(settings: &Settings, input: &InputSpec, diag: &mut Diagnostics) -> Result<Acquired> {
    match input {
        InputSpec::Scenario(path) => {
            let mut scenario = parse_scenario(&read(path)?)?;
            if let Some(seed) = settings.seed {
                scenario.seed = seed;
            }
            let case = generate_synthetic_suite(&scenario, settings.k)?;
            Ok(Acquired {
                logs: Some(render_raw_logs(&case.suite)),
                suite: None,
                truth: Some(case.truth.ground_truth()),
            })
        }
        InputSpec::Suite(path) => {
            let suite = parse_suite(&read(path)?)?;
            let kept = suite.truncated(settings.k)?;
            diag.truncated_runs = suite.trajectories[kept.trajectories.len()..].iter().map(|t| t.id).collect();
            Ok(Acquired {
                logs: None,
                suite: Some(kept),
                truth: None,
            })
        }
        InputSpec::Logs { records, manifest } => {
            let logs = keep_replays(load_raw_logs(records, manifest)?, settings.k, diag);
            ensure_root(&logs)?;
            Ok(Acquired {
                logs: Some(logs),
                suite: None,
                truth: None,
            })
        }
        InputSpec::Replay { records, manifest } => {
            let mut logs = load_raw_logs(records, manifest)?;
            logs.retain(|l| l.run_id == 0);
            ensure_root(&logs)?;
            let command = settings
                .runner_command
                .clone()
                .ok_or_else(|| Error::Runner("no runner command configured".into()))?;
            let runner = SubprocessRunner::new(command);
            let task_id = logs[0].task_id.clone();
            let replays = replay_task(&task_id, settings.k, &runner, settings.seed.unwrap_or(0), settings.parallelism)?;
            diag.dropped_runs = replays.dropped;
            logs.extend(replays.logs);
            Ok(Acquired {
                logs: Some(logs),
                suite: None,
                truth: None,
            })
        }
    }
}

/// Abstracts every log. Replays that yield no steps are left out; an empty
/// root is an error.
pub fn abstract_logs(settings: &Settings, logs: &[RawLog], diag: &mut Diagnostics) -> Result<(PrimitivesDocument, Vec<String>)> {
    let task_id = logs
        .first()
        .map(|l| l.task_id.clone())
        .ok_or_else(|| Error::InvalidParameter("no runs to abstract".into()))?;
    let extractor = build_extractor(settings)?;
    let extractions = extract_suite(logs, extractor.as_ref(), settings.char_budget, settings.parallelism)?;
    let mut runs = Vec::new();
    for (log, extraction) in logs.iter().zip(extractions) {
        diag.extraction.push(extraction.diagnostics.clone());
        if extraction.primitives.is_empty() {
            if log.run_id == 0 {
                return Err(Error::EmptyTrajectory { id: 0 });
            }
            diag.empty_runs.push(log.run_id);
            continue;
        }
        runs.push(PrimitiveRun::from_extraction(log, extraction));
    }
    let mut fingerprint = vec![format!("extractor {}", extractor.name())];
    fingerprint.extend(extractor.fingerprint());
    let doc = PrimitivesDocument {
        version: SUITE_FORMAT_VERSION,
        task_id,
        runs,
    };
    Ok((doc, fingerprint))
}

/// Clusters primitives into a refined suite, saving the judge cache when
/// one is configured.
pub fn cluster_primitives(settings: &Settings, doc: &PrimitivesDocument) -> Result<(TrajectorySuite, ClusterMap, Vec<String>)> {
    let judge = build_judge(settings)?;
    let mut fingerprint = vec![format!("judge {}", judge.name())];
    fingerprint.extend(judge.fingerprint());
    let (suite, clusters) = build_suite(&doc.task_id, &doc.runs, &judge, settings.parallelism)?;
    if let Some(path) = &settings.judge_cache {
        judge.save(path)?;
    }
    tracing::debug!(hits = judge.hits(), misses = judge.misses(), "judge cache");
    Ok((suite, clusters, fingerprint))
}

pub fn primitives_to_json(doc: &PrimitivesDocument) -> String {
    serde_json::to_string_pretty(doc).expect("primitives serialize") + "\n"
}

fn load_truth(path: &Path, task_id: &str) -> Result<GroundTruth> {
    let truths = parse_ground_truth(&read(path)?)?;
    if truths.len() == 1 {
        return Ok(truths.into_iter().next().expect("one entry"));
    }
    truths
        .into_iter()
        .find(|t| t.task_id == task_id)
        .ok_or_else(|| Error::format("ground truth", format!("no entry for task `{task_id}`")))
}

/// What a completed run produced, besides the files on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub report: AttributionReport,
    pub ranking: Ranking,
    pub suite: TrajectorySuite,
    pub diagnostics: Diagnostics,
}

pub fn run_pipeline(settings: &Settings) -> Result<PipelineRun> {
    settings.mode.check_lambda(settings.lambda)?;
    let input = settings
        .input
        .clone()
        .ok_or_else(|| Error::InvalidParameter("no input: give a scenario, suite, logs or root log".into()))?;
    let out = settings.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let mut diag = Diagnostics::default();
    let result = stages(settings, &input, &out, &mut diag);
    if let Err(e) = &result {
        if let Error::Stage { stage, .. } = e {
            diag.failed_stage = Some(stage.to_string());
        }
        diag.error = Some(e.to_string());
    }
    let text = serde_json::to_string_pretty(&diag).expect("diagnostics serialize") + "\n";
    write(&out, "diagnostics.json", &text)?;
    result.map(|(report, ranking, suite)| PipelineRun {
        report,
        ranking,
        suite,
        diagnostics: diag,
    })
}

fn stages(settings: &Settings, input: &InputSpec, out: &Path, diag: &mut Diagnostics) -> Result<(AttributionReport, Ranking, TrajectorySuite)> {
    let acquired = acquire(settings, input, diag).map_err(|e| e.in_stage("acquire"))?;
    let mut fingerprint = vec![format!("famas {}", env!("CARGO_PKG_VERSION"))];

    let (suite, clusters) = match (acquired.suite, acquired.logs) {
        (Some(suite), _) => {
            let clusters = ClusterMap::from_suite(&suite);
            (suite, clusters)
        }
        (None, Some(logs)) => {
            let (doc, fp) = abstract_logs(settings, &logs, diag).map_err(|e| e.in_stage("abstract"))?;
            fingerprint.extend(fp);
            write(out, "primitives.json", &primitives_to_json(&doc))?;
            let (suite, clusters, fp) = cluster_primitives(settings, &doc).map_err(|e| e.in_stage("cluster"))?;
            fingerprint.extend(fp);
            (suite, clusters)
        }
        (None, None) => unreachable!("every input yields logs or a suite"),
    };
    if suite.replay_count() < MIN_REPLAYS {
        return Err(Error::InsufficientReplays {
            usable: suite.replay_count(),
            required: MIN_REPLAYS,
        }
        .in_stage("cluster"));
    }
    write(out, "suite.json", &suite_to_json(&suite))?;
    write(out, "clusters.json", &clusters.to_json())?;

    let ranking = rank_triples(&suite, settings.lambda, settings.mode).map_err(|e| e.in_stage("rank"))?;
    let export = ranking.export();
    write(out, "ranking.json", &(serde_json::to_string_pretty(&export)? + "\n"))?;
    write(out, "ranking.tsv", &ranking.to_tsv())?;

    let truth = match (&acquired.truth, &settings.ground_truth) {
        (_, Some(path)) => Some(load_truth(path, &suite.task_id).map_err(|e| e.in_stage("evaluate"))?),
        (Some(t), None) => Some(t.clone()),
        (None, None) => None,
    };
    let verdict = truth
        .as_ref()
        .map(|t| judge_attribution(&ranking, &clusters, t))
        .transpose()
        .map_err(|e| e.in_stage("evaluate"))?;

    let report = AttributionReport {
        task_id: suite.task_id.clone(),
        mode: settings.mode,
        lambda: settings.lambda.value(),
        replays: suite.replay_count(),
        failing_runs: suite.trajectories.iter().filter(|t| t.outcome.is_failure()).count(),
        candidates: ranking.entries.len(),
        top1_unique: ranking.top1_unique(),
        top: export.entries.into_iter().take(REPORT_TOP_N).collect(),
        ground_truth: truth,
        verdict,
        fingerprint,
    };
    write(out, "report.json", &report.to_json())?;
    write(out, "report.txt", &report.to_text())?;
    Ok((report, ranking, suite))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{FileConfig, Overrides};
    use crate::simulate::benchmark_scenario;

    fn settings(input: InputSpec, out: &Path, extra: Overrides) -> Settings {
        let cli = Overrides {
            input: Some(input),
            out: Some(out.to_path_buf()),
            ..extra
        };
        Settings::resolve(&FileConfig::default(), |_| None, &cli).unwrap()
    }

    #[test]
    fn scenario_run_reports_a_verdict() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = dir.path().join("scenario.json");
        std::fs::write(&scenario, serde_json::to_string(&benchmark_scenario(5)).unwrap()).unwrap();
        let s = settings(InputSpec::Scenario(scenario), &dir.path().join("out"), Overrides::default());
        let run = run_pipeline(&s).unwrap();
        assert!(run.report.verdict.is_some());
        assert_eq!(run.report.replays, 20);
        for f in ["report.json", "report.txt", "ranking.json", "ranking.tsv", "suite.json", "clusters.json", "primitives.json", "diagnostics.json"] {
            assert!(dir.path().join("out").join(f).exists(), "{f}");
        }
    }

    #[test]
    fn suite_input_skips_extraction() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.json");
        std::fs::write(&path, suite_to_json(&crate::fixtures::worked_suite())).unwrap();
        let extra = Overrides {
            mode: Some("kulczynski2".into()),
            ..Default::default()
        };
        let s = settings(InputSpec::Suite(path), &dir.path().join("out"), extra);
        let run = run_pipeline(&s).unwrap();
        assert!(!dir.path().join("out/primitives.json").exists());
        assert_eq!(run.report.top[0].composite, 1.0);
        assert!(run.diagnostics.extraction.is_empty());
    }

    #[test]
    fn stage_errors_leave_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let records = dir.path().join("r.jsonl");
        let manifest = dir.path().join("m.json");
        std::fs::write(&records, "{\"run_id\":0,\"seq\":0,\"content\":\"nothing useful\"}\n").unwrap();
        std::fs::write(&manifest, r#"{"task_id":"t","runs":[{"run_id":0,"outcome":"failure"}]}"#).unwrap();
        let out = dir.path().join("out");
        let s = settings(InputSpec::Logs { records, manifest }, &out, Overrides::default());
        let err = run_pipeline(&s).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "abstract", .. }));
        let diag: Diagnostics = serde_json::from_str(&std::fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
        assert_eq!(diag.failed_stage.as_deref(), Some("abstract"));
    }

    #[test]
    fn missing_input_is_a_parameter_error() {
        let dir = tempfile::tempdir().unwrap();
        let cli = Overrides {
            out: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let s = Settings::resolve(&FileConfig::default(), |_| None, &cli).unwrap();
        assert!(matches!(run_pipeline(&s), Err(Error::InvalidParameter(_))));
    }
}
