//! Layered settings: command-line flags over environment over config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{LlmSettings, RetryPolicy};
use crate::replay::RUNNER_ENV;
use crate::spectrum::{Lambda, ScoringMode};

pub const DEFAULT_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    #[default]
    Rules,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    #[default]
    Exact,
    Llm,
}

macro_rules! string_enum {
    ($ty:ident, $what:literal, $($name:literal => $variant:ident),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::InvalidParameter(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name,)+ })
            }
        }
    };
}

string_enum!(ExtractorKind, "extractor", "rules" => Rules, "llm" => Llm);
string_enum!(JudgeKind, "judge", "exact" => Exact, "llm" => Llm);

/// Where a pipeline run gets its trajectories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    /// Synthetic scenario file.
    Scenario(PathBuf),
    /// Pre-refined suite; no extraction or clustering.
    Suite(PathBuf),
    /// Root and replay logs already collected.
    Logs { records: PathBuf, manifest: PathBuf },
    /// Root log only; replays come from the runner.
    Replay { records: PathBuf, manifest: PathBuf },
}

/// Config file layout. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub extractor: Option<String>,
    pub judge: Option<String>,
    pub out: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub char_budget: Option<usize>,
    pub input: Option<InputSpec>,
    pub ground_truth: Option<PathBuf>,
    #[serde(default)]
    pub llm: LlmFileConfig,
    #[serde(default)]
    pub runner: RunnerFileConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmFileConfig {
    pub base_url: Option<String>,
    pub endpoint_path: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub retries: Option<u32>,
    pub initial_backoff_ms: Option<u64>,
    pub extract_prompt: Option<PathBuf>,
    pub judge_prompt: Option<PathBuf>,
    pub judge_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerFileConfig {
    pub command: Option<String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("config file", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            config.rebase(dir);
        }
        Ok(config)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(out) = &mut self.out {
            fix(out);
        }
        if let Some(gt) = &mut self.ground_truth {
            fix(gt);
        }
        match &mut self.input {
            Some(InputSpec::Scenario(p)) | Some(InputSpec::Suite(p)) => fix(p),
            Some(InputSpec::Logs { records, manifest }) | Some(InputSpec::Replay { records, manifest }) => {
                fix(records);
                fix(manifest);
            }
            None => {}
        }
        for p in [&mut self.llm.extract_prompt, &mut self.llm.judge_prompt, &mut self.llm.judge_cache]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub extractor: Option<String>,
    pub judge: Option<String>,
    pub out: Option<PathBuf>,
    pub input: Option<InputSpec>,
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub k: usize,
    pub lambda: Lambda,
    pub mode: ScoringMode,
    /// Overrides the scenario seed; base seed for replays.
    pub seed: Option<u64>,
    pub extractor: ExtractorKind,
    pub judge: JudgeKind,
    pub out: PathBuf,
    pub parallelism: usize,
    pub char_budget: usize,
    pub input: Option<InputSpec>,
    pub ground_truth: Option<PathBuf>,
    pub llm: LlmSettings,
    pub retry: RetryPolicy,
    pub extract_prompt: Option<PathBuf>,
    pub judge_prompt: Option<PathBuf>,
    pub judge_cache: Option<PathBuf>,
    pub runner_command: Option<String>,
}

fn parse_env<T: FromStr>(name: &str, value: Option<String>) -> Result<Option<T>> {
    value
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{name}=`{v}` does not parse")))
        })
        .transpose()
}

impl Settings {
    /// Merges the three layers and validates the result.
    pub fn resolve(file: &FileConfig, env: impl Fn(&str) -> Option<String>, cli: &Overrides) -> Result<Self> {
        let env_k: Option<usize> = parse_env("FAMAS_K", env("FAMAS_K"))?;
        let env_lambda: Option<f64> = parse_env("FAMAS_LAMBDA", env("FAMAS_LAMBDA"))?;
        let env_seed: Option<u64> = parse_env("FAMAS_SEED", env("FAMAS_SEED"))?;

        let k = cli.k.or(env_k).or(file.k).unwrap_or(DEFAULT_K);
        if k == 0 {
            return Err(Error::InvalidParameter("k must be positive".into()));
        }
        let lambda = Lambda::new(cli.lambda.or(env_lambda).or(file.lambda).unwrap_or(Lambda::DEFAULT.value()))?;
        let mode: ScoringMode = match cli.mode.clone().or_else(|| env("FAMAS_MODE")).or_else(|| file.mode.clone()) {
            Some(m) => m.parse()?,
            None => ScoringMode::Famas,
        };
        mode.check_lambda(lambda)?;
        let extractor = match cli.extractor.clone().or_else(|| env("FAMAS_EXTRACTOR")).or_else(|| file.extractor.clone()) {
            Some(e) => e.parse()?,
            None => ExtractorKind::default(),
        };
        let judge = match cli.judge.clone().or_else(|| env("FAMAS_JUDGE")).or_else(|| file.judge.clone()) {
            Some(j) => j.parse()?,
            None => JudgeKind::default(),
        };
        let out = cli
            .out
            .clone()
            .or_else(|| env("FAMAS_OUT").map(PathBuf::from))
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from("famas-out"));

        let defaults = LlmSettings::default();
        let l = &file.llm;
        let llm = LlmSettings {
            base_url: env("FAMAS_LLM_BASE_URL").or_else(|| l.base_url.clone()).unwrap_or(defaults.base_url),
            endpoint_path: l.endpoint_path.clone().unwrap_or(defaults.endpoint_path),
            model: env("FAMAS_LLM_MODEL").or_else(|| l.model.clone()).unwrap_or(defaults.model),
            timeout_secs: l.timeout_secs.unwrap_or(defaults.timeout_secs),
        };
        let default_retry = RetryPolicy::default();
        let retry = RetryPolicy {
            retries: l.retries.unwrap_or(default_retry.retries),
            initial_backoff: l
                .initial_backoff_ms
                .map(Duration::from_millis)
                .unwrap_or(default_retry.initial_backoff),
        };

        Ok(Self {
            k,
            lambda,
            mode,
            seed: cli.seed.or(env_seed).or(file.seed),
            extractor,
            judge,
            out,
            parallelism: file.parallelism.unwrap_or(4).max(1),
            char_budget: file.char_budget.unwrap_or(crate::abstraction::DEFAULT_CHAR_BUDGET),
            input: cli.input.clone().or_else(|| file.input.clone()),
            ground_truth: cli.ground_truth.clone().or_else(|| file.ground_truth.clone()),
            llm,
            retry,
            extract_prompt: l.extract_prompt.clone(),
            judge_prompt: l.judge_prompt.clone(),
            judge_cache: l.judge_cache.clone(),
            runner_command: env(RUNNER_ENV)
                .filter(|c| !c.trim().is_empty())
                .or_else(|| file.runner.command.clone()),
        })
    }

    pub fn from_process_env(file: &FileConfig, cli: &Overrides) -> Result<Self> {
        Self::resolve(file, |name| std::env::var(name).ok(), cli)
    }
}
