//! Declarative run configuration (TOML) and command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{builtin_scheme, LabelScheme, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::eval::{MatchMode, Task, DEFAULT_BINS, DEFAULT_F1_THRESHOLD};
use crate::prompt::PromptTemplate;
use crate::retrieval::KnnOrder;

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub template: PromptTemplate,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub classification: ClassificationConfig,
    #[serde(default)]
    pub ner: NerConfig,
    #[serde(default)]
    pub qa: QaConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Directory of the file this was loaded from.
    #[serde(skip)]
    pub origin: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    /// Completion fixture for the `fixture` mock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completions: Option<PathBuf>,
    /// Exact-text embedding fixture for the mock backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockKind {
    Echo,
    Fixture,
    /// Answers from the gold annotations of the corpus being run.
    Oracle,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "live" => Ok(BackendKind::Live),
            other => Err(Error::Config(format!("unknown backend {other:?}"))),
        }
    }
}

impl std::str::FromStr for MockKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "echo" => Ok(MockKind::Echo),
            "fixture" => Ok(MockKind::Fixture),
            "oracle" => Ok(MockKind::Oracle),
            other => Err(Error::Config(format!("unknown mock mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub mock: MockKind,
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub completion_model: String,
    pub embedding_model: String,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub requests_per_second: Option<f64>,
    pub embedding_batch: usize,
    pub mock_dim: usize,
    /// NER oracle: leave out every k-th gold span.
    pub drop_every: Option<usize>,
    /// QA oracle: ids answered with a "not mentioned" reply.
    pub not_mentioned: Vec<String>,
    /// Classification oracle: fraction of records given the wrong label.
    pub flip_fraction: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            mock: MockKind::Oracle,
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            completion_model: "davinci".into(),
            embedding_model: "text-embedding-ada-002".into(),
            max_tokens: 256,
            max_in_flight: crate::gateway::DEFAULT_MAX_IN_FLIGHT,
            requests_per_second: None,
            embedding_batch: 64,
            mock_dim: 64,
            drop_every: None,
            not_mentioned: Vec::new(),
            flip_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalStrategy {
    Random,
    Knn,
}

impl std::str::FromStr for RetrievalStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(RetrievalStrategy::Random),
            "knn" => Ok(RetrievalStrategy::Knn),
            other => Err(Error::Config(format!("unknown retrieval strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub strategy: RetrievalStrategy,
    /// Examples per prompt; for classification, examples per label.
    pub shots: usize,
    pub order: KnnOrder,
    /// Prepend the task phrase to few-shot prompts.
    pub task_informed: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            strategy: RetrievalStrategy::Random,
            shots: 3,
            order: KnnOrder::default(),
            task_informed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalOn {
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// `[train, val, test]`.
    pub ratios: [f64; 3],
    pub eval_on: EvalOn,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [0.8, 0.1, 0.1],
            eval_on: EvalOn::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ZeroShot,
    FewShot,
    FineTuned,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-shot" => Ok(Mode::ZeroShot),
            "few-shot" => Ok(Mode::FewShot),
            "fine-tuned" => Ok(Mode::FineTuned),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationConfig {
    pub mode: Mode,
    /// Built-in label scheme name, or `custom` with the two texts below.
    pub scheme: String,
    pub positive_text: Option<String>,
    pub negative_text: Option<String>,
    /// Gold-label strings of the two classes.
    pub positive_label: String,
    pub negative_label: String,
    pub tau: f64,
    pub task_phrase: String,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        ClassificationConfig {
            mode: Mode::ZeroShot,
            scheme: "original".into(),
            positive_text: None,
            negative_text: None,
            positive_label: "battery".into(),
            negative_label: "non-battery".into(),
            tau: DEFAULT_TAU,
            task_phrase: "The task is to classify whether the given text is about battery materials.".into(),
        }
    }
}

impl ClassificationConfig {
    pub fn label_scheme(&self) -> Result<LabelScheme> {
        if self.scheme == "custom" {
            match (&self.positive_text, &self.negative_text) {
                (Some(p), Some(n)) => LabelScheme::custom(p.clone(), n.clone()),
                _ => Err(Error::Config(
                    "custom scheme needs positive_text and negative_text".into(),
                )),
            }
        } else {
            builtin_scheme(&self.scheme)
        }
    }

    pub fn labels(&self) -> [String; 2] {
        [self.positive_label.clone(), self.negative_label.clone()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NerConfig {
    pub mode: Mode,
    /// Categories to extract; empty means every category in the corpus.
    pub categories: Vec<String>,
    pub marker_open: String,
    pub marker_close: String,
}

impl Default for NerConfig {
    fn default() -> Self {
        NerConfig {
            mode: Mode::FewShot,
            categories: Vec::new(),
            marker_open: "@@".into(),
            marker_close: "##".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    pub task_informed: bool,
}

impl Default for QaConfig {
    fn default() -> Self {
        QaConfig { task_informed: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bins: usize,
    pub f1_threshold: f64,
    /// Headline NER mode; both are always written.
    pub match_mode: MatchMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bins: DEFAULT_BINS,
            f1_threshold: DEFAULT_F1_THRESHOLD,
            match_mode: MatchMode::Exact,
        }
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub corpus: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub base_url: Option<String>,
    pub mock: Option<MockKind>,
    pub mode: Option<Mode>,
    pub retrieval: Option<RetrievalStrategy>,
    pub shots: Option<usize>,
    pub task_informed: Option<bool>,
    pub scheme: Option<String>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.origin = Some(base.to_path_buf());
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.paths.corpus);
        rebase(&mut cfg.paths.output_dir);
        if let Some(p) = cfg.paths.completions.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.paths.embeddings.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.corpus {
            self.paths.corpus = p.clone();
        }
        if let Some(p) = &o.output_dir {
            self.paths.output_dir = p.clone();
        }
        if let Some(b) = o.backend {
            self.backend.kind = b;
        }
        if let Some(u) = &o.base_url {
            self.backend.base_url = u.clone();
        }
        if let Some(m) = o.mock {
            self.backend.mock = m;
        }
        if let Some(m) = o.mode {
            match self.task {
                Task::Classification => self.classification.mode = m,
                Task::Ner => self.ner.mode = m,
                Task::Qa => {}
            }
        }
        if let Some(r) = o.retrieval {
            self.retrieval.strategy = r;
        }
        if let Some(k) = o.shots {
            self.retrieval.shots = k;
        }
        if let Some(t) = o.task_informed {
            self.retrieval.task_informed = t;
            self.qa.task_informed = t;
        }
        if let Some(s) = &o.scheme {
            self.classification.scheme = s.clone();
        }
    }

    /// SHA-256 of the effective configuration as canonical JSON. The output
    /// directory is left out and input paths are taken relative to the config
    /// file, so the digest does not depend on where the tree is checked out.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths.output_dir = PathBuf::new();
        if let Some(base) = &self.origin {
            let rel = |p: &mut PathBuf| {
                if let Ok(r) = p.strip_prefix(base) {
                    *p = r.to_path_buf();
                }
            };
            rel(&mut c.paths.corpus);
            if let Some(p) = c.paths.completions.as_mut() {
                rel(p);
            }
            if let Some(p) = c.paths.embeddings.as_mut() {
                rel(p);
            }
        }
        let json = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Everything checkable without touching the backend or reading the corpus.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if !self.paths.corpus.is_file() {
            return cfg(format!("corpus {} does not exist", self.paths.corpus.display()));
        }
        self.template.validate()?;
        crate::corpus::SplitSpec::new(self.seed, self.split.ratios).map_err(|e| Error::Config(e.to_string()))?;
        let b = &self.backend;
        if b.max_tokens == 0 {
            return cfg("backend.max_tokens must be at least 1".into());
        }
        if b.embedding_batch == 0 || b.mock_dim == 0 {
            return cfg("backend.embedding_batch and backend.mock_dim must be positive".into());
        }
        if let Some(r) = b.requests_per_second {
            if !(r.is_finite() && r > 0.0) {
                return cfg(format!("backend.requests_per_second must be positive, got {r}"));
            }
        }
        if !(0.0..=1.0).contains(&b.flip_fraction) {
            return cfg(format!("backend.flip_fraction {} outside [0, 1]", b.flip_fraction));
        }
        if b.drop_every == Some(0) {
            return cfg("backend.drop_every must be at least 1".into());
        }
        match b.kind {
            BackendKind::Live => {
                if std::env::var(&b.api_key_env).map_or(true, |v| v.is_empty()) {
                    return cfg(format!("environment variable {} is not set", b.api_key_env));
                }
            }
            BackendKind::Mock => {
                if b.mock == MockKind::Fixture {
                    match &self.paths.completions {
                        Some(p) if p.is_file() => {}
                        Some(p) => return cfg(format!("completion fixture {} does not exist", p.display())),
                        None => return cfg("the fixture mock needs paths.completions".into()),
                    }
                }
            }
        }
        if let Some(p) = &self.paths.embeddings {
            if !p.is_file() {
                return cfg(format!("embedding fixture {} does not exist", p.display()));
            }
        }
        if self.eval.bins == 0 {
            return cfg("eval.bins must be at least 1".into());
        }

        let few_shot = match self.task {
            Task::Classification => {
                let c = &self.classification;
                c.label_scheme()?;
                if c.positive_label.is_empty() || c.negative_label.is_empty() || c.positive_label == c.negative_label {
                    return cfg("classification labels must be non-empty and distinct".into());
                }
                if !(c.tau.is_finite() && c.tau > 0.0) {
                    return cfg(format!("classification.tau must be positive, got {}", c.tau));
                }
                c.mode == Mode::FewShot
            }
            Task::Ner => {
                if self.ner.mode == Mode::ZeroShot {
                    return cfg("NER supports few-shot and fine-tuned modes".into());
                }
                crate::marker::MarkerScheme::new(self.ner.marker_open.clone(), self.ner.marker_close.clone())
                    .map_err(|e| Error::Config(e.to_string()))?;
                self.ner.mode == Mode::FewShot
            }
            Task::Qa => false,
        };
        if few_shot {
            if self.retrieval.shots == 0 {
                return cfg("few-shot runs need retrieval.shots >= 1".into());
            }
            if self.split.eval_on == EvalOn::All {
                return cfg("few-shot runs draw examples from the train split; use split.eval_on = \"test\"".into());
            }
        }
        Ok(())
    }
}
