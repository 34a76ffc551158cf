//! Run configuration: YAML loading, `${VAR}` interpolation and exhaustive checks.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use agentsim_core::corpus::read_documents;
use agentsim_core::embedding::{EmbeddingProvider, EmbeddingProviderConfig};
use agentsim_core::seeding::{SeedingConfig, Strategy};
use agentsim_core::simulation::backend::{api_key_env_var, CallContext, ChatMessage, ChatRequest};
use agentsim_core::simulation::{BackendSpec, SimulationSettings};
use agentsim_core::validation::api::DEFAULT_PORT;
use agentsim_core::validation::ValidationConfig;
use agentsim_core::{Bm25Params, Corpus, Stopwords};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Env var read for a remote embedding provider's key.
pub const EMBEDDING_KEY_ID: &str = "embedding";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// JSONL corpus, one `{"id", "text", "meta"}` object per line.
    pub corpus: PathBuf,
    /// Candidate queries: plain text lines, or JSONL with a `query` field.
    pub queries: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub rng_seed: u64,
    /// Worker threads for simulation; overrides `simulation.parallelism`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    /// Pins every trace timestamp, for byte-reproducible runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_clock_ms: Option<u64>,
    #[serde(default)]
    pub retrieval: Bm25Params,
    #[serde(default)]
    pub embedding: EmbeddingProviderConfig,
    pub seeding: SeedingConfig,
    #[serde(default)]
    pub simulation: SimulationSettings,
    #[serde(default)]
    pub validation: ValidationConfig,
    pub backends: Backends,
    #[serde(default)]
    pub review: ReviewSettings,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backends {
    pub analyst: BackendSpec,
    pub critics: Vec<BackendSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewSettings {
    #[serde(default = "default_port")]
    pub port: u16,
    /// Built review UI to serve at `/`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
}

fn default_port() -> u16 {
    DEFAULT_PORT
}

impl Default for ReviewSettings {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            ui_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn warning(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{label}: {}: {}", self.field, self.message)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub strategy: Option<Strategy>,
    pub rng_seed: Option<u64>,
    pub parallelism: Option<usize>,
}

/// Replaces `${NAME}` with the value of environment variable `NAME`.
/// Unset variables are returned as errors; `$${` escapes a literal `${`.
pub fn interpolate(text: &str) -> Result<String, Vec<String>> {
    let mut out = String::with_capacity(text.len());
    let mut missing = Vec::new();
    let mut rest = text;
    while let Some(at) = rest.find("${") {
        if rest[..at].ends_with('$') {
            out.push_str(&rest[..at - 1]);
            out.push_str("${");
            rest = &rest[at + 2..];
            continue;
        }
        out.push_str(&rest[..at]);
        let Some(end) = rest[at..].find('}') else {
            out.push_str(&rest[at..]);
            rest = "";
            break;
        };
        let name = &rest[at + 2..at + end];
        match std::env::var(name) {
            Ok(v) => out.push_str(&v),
            Err(_) => missing.push(name.to_string()),
        }
        rest = &rest[at + end + 1..];
    }
    out.push_str(rest);
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(missing)
    }
}

/// Reads the candidate-query file.
pub fn read_queries(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if jsonl {
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
            let q = v
                .get("query")
                .and_then(|q| q.as_str())
                .ok_or_else(|| format!("line {}: missing string field `query`", n + 1))?;
            out.push(q.to_string());
        } else {
            out.push(line.to_string());
        }
    }
    Ok(out)
}

/// Interpolates every string scalar in place, recording unset variables
/// against the field they appear in.
fn interpolate_strings(value: &mut serde_yaml::Value, field: &str, missing: &mut Vec<Diagnostic>) {
    use serde_yaml::Value;
    match value {
        Value::String(s) => match interpolate(s) {
            Ok(v) => *s = v,
            Err(names) => missing.extend(names.into_iter().map(|name| {
                Diagnostic::error(field, format!("environment variable `{name}` is not set"))
            })),
        },
        Value::Sequence(items) => {
            for (i, item) in items.iter_mut().enumerate() {
                interpolate_strings(item, &format!("{field}[{i}]"), missing);
            }
        }
        Value::Mapping(map) => {
            for (k, v) in map.iter_mut() {
                let key = k.as_str().map(str::to_string).unwrap_or_else(|| format!("{k:?}"));
                let path = if field.is_empty() { key } else { format!("{field}.{key}") };
                interpolate_strings(v, &path, missing);
            }
        }
        Value::Tagged(t) => interpolate_strings(&mut t.value, field, missing),
        _ => {}
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// A parsed config plus everything the checks had to load.
pub struct Checked {
    pub config: Option<RunConfig>,
    pub diagnostics: Vec<Diagnostic>,
    pub corpus: Option<Arc<Corpus>>,
    pub queries: Option<Vec<String>>,
}

impl Checked {
    pub fn has_errors(&self) -> bool {
        self.diagnostics.iter().any(Diagnostic::is_error)
    }
}

fn parse(path: &Path, overrides: &Overrides) -> Result<RunConfig, Vec<Diagnostic>> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| vec![Diagnostic::error("config", format!("cannot read {}: {e}", path.display()))])?;
    let mut value: serde_yaml::Value =
        serde_yaml::from_str(&raw).map_err(|e| vec![Diagnostic::error("config", e.to_string())])?;
    let mut missing = Vec::new();
    interpolate_strings(&mut value, "", &mut missing);
    if !missing.is_empty() {
        return Err(missing);
    }
    let nested = value
        .get("simulation")
        .and_then(|s| s.as_mapping())
        .map(|m| {
            ["validation", "rng_seed", "parallelism"]
                .into_iter()
                .filter(|k| m.contains_key(*k))
                .collect::<Vec<_>>()
        })
        .unwrap_or_default();
    if !nested.is_empty() {
        return Err(nested
            .into_iter()
            .map(|k| Diagnostic::error(format!("simulation.{k}"), format!("set `{k}` at the top level of the config")))
            .collect());
    }
    if value.get("seeding").and_then(|s| s.get("rng_seed")).is_some() {
        return Err(vec![Diagnostic::error(
            "seeding.rng_seed",
            "set `rng_seed` at the top level of the config",
        )]);
    }
    let mut config: RunConfig =
        serde_yaml::from_value(value).map_err(|e| vec![Diagnostic::error("config", e.to_string())])?;

    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    config.corpus = resolve(&base, &config.corpus);
    config.queries = resolve(&base, &config.queries);
    config.out = match &overrides.out {
        Some(o) => o.clone(),
        None => resolve(&base, &config.out),
    };
    config.review.ui_dir = config.review.ui_dir.as_ref().map(|d| resolve(&base, d));
    if let Some(s) = overrides.strategy {
        config.seeding.strategy = s;
    }
    if let Some(s) = overrides.rng_seed {
        config.rng_seed = s;
    }
    if overrides.parallelism.is_some() {
        config.parallelism = overrides.parallelism;
    }
    // One seed and one validation block drive every stage.
    config.seeding.rng_seed = config.rng_seed;
    config.simulation.rng_seed = config.rng_seed;
    config.simulation.validation = config.validation.clone();
    if let Some(p) = config.parallelism {
        config.simulation.parallelism = p;
    }
    Ok(config)
}

fn prefixed(prefix: &str, problems: Vec<(String, String)>) -> impl Iterator<Item = Diagnostic> + '_ {
    problems
        .into_iter()
        .map(move |(field, msg)| Diagnostic::error(format!("{prefix}.{field}"), msg))
}

fn backend_checks(config: &RunConfig, diags: &mut Vec<Diagnostic>) {
    let mut labelled = vec![("backends.analyst".to_string(), &config.backends.analyst)];
    for (i, c) in config.backends.critics.iter().enumerate() {
        labelled.push((format!("backends.critics[{i}]"), c));
    }
    if config.backends.critics.is_empty() {
        diags.push(Diagnostic::error("backends.critics", "at least one critic is required"));
    }
    let mut ids = BTreeSet::new();
    for (label, spec) in &labelled {
        diags.extend(prefixed(label, spec.problems()));
        if !spec.id().trim().is_empty() && !ids.insert(spec.id().to_string()) {
            diags.push(Diagnostic::error(format!("{label}.id"), format!("duplicate backend id `{}`", spec.id())));
        }
        if matches!(spec, BackendSpec::RemoteChat { .. }) && std::env::var(api_key_env_var(spec.id())).is_err() {
            diags.push(Diagnostic::warning(
                label.clone(),
                format!("{} is not set; requests will be sent without a key", api_key_env_var(spec.id())),
            ));
        }
    }
}

fn probe_backends(config: &RunConfig, diags: &mut Vec<Diagnostic>) {
    let mut labelled = vec![("backends.analyst".to_string(), &config.backends.analyst)];
    for (i, c) in config.backends.critics.iter().enumerate() {
        labelled.push((format!("backends.critics[{i}]"), c));
    }
    for (label, spec) in labelled {
        if !matches!(spec, BackendSpec::RemoteChat { .. }) || !spec.problems().is_empty() {
            continue;
        }
        let backend = spec.build();
        let messages = [ChatMessage::user("Reply with the single word OK.")];
        let context = CallContext::default();
        let request = ChatRequest {
            messages: &messages,
            temperature: 0.0,
            seed: 0,
            context: &context,
        };
        if let Err(e) = backend.complete(&request) {
            diags.push(Diagnostic::error(label, format!("probe failed: {e}")));
        }
    }
    if matches!(config.embedding, EmbeddingProviderConfig::Remote { .. }) {
        let result = build_provider(&config.embedding)
            .map_err(|e| e.to_string())
            .and_then(|p| p.embed(&["probe".to_string()]).map_err(|e| e.to_string()));
        if let Err(e) = result {
            diags.push(Diagnostic::error("embedding", format!("probe failed: {e}")));
        }
    }
}

/// Builds the configured embedding provider, reading a remote key from the environment.
pub fn build_provider(
    config: &EmbeddingProviderConfig,
) -> Result<Box<dyn EmbeddingProvider>, agentsim_core::embedding::EmbeddingError> {
    config.build(Stopwords::english(), std::env::var(api_key_env_var(EMBEDDING_KEY_ID)).ok())
}

/// Parses `path` and runs every check, collecting all problems.
pub fn check(path: &Path, overrides: &Overrides, probe: bool) -> Checked {
    let config = match parse(path, overrides) {
        Ok(c) => c,
        Err(diagnostics) => {
            return Checked {
                config: None,
                diagnostics,
                corpus: None,
                queries: None,
            }
        }
    };
    let mut diags = Vec::new();
    diags.extend(prefixed("seeding", config.seeding.problems()));
    let mut sim = config.simulation.clone();
    sim.validation = ValidationConfig::default();
    diags.extend(prefixed("simulation", sim.problems()).filter(|d| d.field != "simulation.parallelism"));
    diags.extend(prefixed("validation", config.validation.problems()));
    diags.extend(prefixed("embedding", config.embedding.problems()));
    if config.simulation.parallelism == 0 {
        diags.push(Diagnostic::error("parallelism", "must be >= 1"));
    }
    let params = config.retrieval;
    if !(params.k1 >= 0.0 && params.k1.is_finite()) {
        diags.push(Diagnostic::error("retrieval.k1", format!("must be >= 0, got {}", params.k1)));
    }
    if !(0.0..=1.0).contains(&params.b) {
        diags.push(Diagnostic::error("retrieval.b", format!("must be in [0, 1], got {}", params.b)));
    }
    backend_checks(&config, &mut diags);
    if let Some(dir) = &config.review.ui_dir {
        if !dir.join("index.html").is_file() {
            diags.push(Diagnostic::warning("review.ui_dir", format!("{} has no index.html", dir.display())));
        }
    }

    let mut corpus = None;
    if !config.corpus.is_file() {
        diags.push(Diagnostic::error("corpus", format!("file not found: {}", config.corpus.display())));
    } else {
        match read_documents(&config.corpus)
            .and_then(|docs| Corpus::build(docs, Stopwords::english(), config.retrieval))
        {
            Ok(c) => corpus = Some(Arc::new(c)),
            Err(e) => diags.push(Diagnostic::error("corpus", e.to_string())),
        }
    }
    let mut queries = None;
    if !config.queries.is_file() {
        diags.push(Diagnostic::error("queries", format!("file not found: {}", config.queries.display())));
    } else {
        match read_queries(&config.queries) {
            Ok(q) if q.is_empty() => diags.push(Diagnostic::error("queries", "no candidate queries")),
            Ok(q) => {
                if config.seeding.budget > q.len() {
                    diags.push(Diagnostic::warning(
                        "seeding.budget",
                        format!("budget {} exceeds the {} candidate queries", config.seeding.budget, q.len()),
                    ));
                }
                queries = Some(q);
            }
            Err(e) => diags.push(Diagnostic::error("queries", e)),
        }
    }
    if probe {
        probe_backends(&config, &mut diags);
    }
    Checked {
        config: Some(config),
        diagnostics: diags,
        corpus,
        queries,
    }
}

/// A config that passed every check, with its corpus and queries loaded.
pub struct Prepared {
    pub config: RunConfig,
    pub corpus: Arc<Corpus>,
    pub queries: Vec<String>,
    pub warnings: Vec<Diagnostic>,
}

/// [`check`] without probing; any error diagnostic aborts.
pub fn prepare(path: &Path, overrides: &Overrides) -> Result<Prepared, CliError> {
    let checked = check(path, overrides, false);
    if checked.has_errors() {
        return Err(CliError::InvalidConfig(checked.diagnostics));
    }
    let (Some(config), Some(corpus), Some(queries)) = (checked.config, checked.corpus, checked.queries) else {
        unreachable!("a check without errors loads config, corpus and queries");
    };
    Ok(Prepared {
        config,
        corpus,
        queries,
        warnings: checked.diagnostics,
    })
}

/// Runs every check; returns the warnings, or every diagnostic as
/// `InvalidConfig` when any of them is an error.
pub fn cmd_validate(path: &Path, overrides: &Overrides, probe: bool) -> Result<Vec<Diagnostic>, CliError> {
    let checked = check(path, overrides, probe);
    if checked.has_errors() {
        return Err(CliError::InvalidConfig(checked.diagnostics));
    }
    Ok(checked.diagnostics)
}
