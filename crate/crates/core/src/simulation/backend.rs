//! Model backends: a remote chat-completions client and a deterministic
//! scripted backend for tests and offline runs.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::action::{ActionType, AgentAction};
use super::trace::Role;
use crate::http::{post_json_with_retry, HttpError, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// Structured view of the call, passed alongside the rendered messages.
/// Remote backends ignore it; scripted backends match and template on it.
#[derive(Debug, Clone, Default)]
pub struct CallContext {
    pub trace_id: String,
    pub seed_query: String,
    pub role: Option<Role>,
    pub cycle: usize,
    /// Calls this backend already received in this trace.
    pub call_index: usize,
    pub retry: bool,
    pub last_action: Option<ActionType>,
    pub reretrievals: usize,
    pub top_doc_id: Option<String>,
    pub top_doc_text: Option<String>,
    /// The Analyst's proposal, for Critic calls.
    pub proposal: Option<AgentAction>,
}

#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub messages: &'a [ChatMessage],
    pub temperature: f64,
    pub seed: u64,
    pub context: &'a CallContext,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend `{backend}` unavailable: {message}")]
    Unavailable { backend: String, message: String },
    #[error("backend `{backend}` returned an unusable response: {message}")]
    BadResponse { backend: String, message: String },
    #[error("scripted backend `{backend}`: {message}")]
    Script { backend: String, message: String },
}

pub trait ModelBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleMatch {
    #[serde(default)]
    pub role: Option<Role>,
    #[serde(default)]
    pub cycle: Option<usize>,
    #[serde(default)]
    pub min_cycle: Option<usize>,
    #[serde(default)]
    pub seed_contains: Option<String>,
    #[serde(default)]
    pub last_action: Option<ActionType>,
    #[serde(default)]
    pub min_reretrievals: Option<usize>,
    #[serde(default)]
    pub max_reretrievals: Option<usize>,
}

impl RuleMatch {
    fn matches(&self, ctx: &CallContext) -> bool {
        self.role.is_none_or(|r| ctx.role == Some(r))
            && self.cycle.is_none_or(|c| ctx.cycle == c)
            && self.min_cycle.is_none_or(|c| ctx.cycle >= c)
            && self
                .seed_contains
                .as_deref()
                .is_none_or(|s| ctx.seed_query.to_lowercase().contains(&s.to_lowercase()))
            && self.last_action.is_none_or(|a| ctx.last_action == Some(a))
            && self.min_reretrievals.is_none_or(|n| ctx.reretrievals >= n)
            && self.max_reretrievals.is_none_or(|n| ctx.reretrievals <= n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    #[serde(default)]
    pub when: RuleMatch,
    pub respond: String,
}

/// Deterministic backend: the first matching rule wins, otherwise the
/// `responses` list is indexed by the per-trace call count (the last entry
/// repeats).
///
/// Response templates may use `{seed_query}`, `{cycle}`, `{top_doc}`,
/// `{top_doc_text}`, `{top_doc_words:N}`, `{proposal}` and
/// `{proposal_query}`. A response starting with `!error` fails the call.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedBackend {
    pub id: String,
    pub rules: Vec<ScriptRule>,
    pub responses: Vec<String>,
}

fn json_escape(s: &str) -> String {
    let quoted = serde_json::to_string(s).expect("strings serialize");
    quoted[1..quoted.len() - 1].to_string()
}

fn first_words(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            rules: Vec::new(),
            responses: Vec::new(),
        }
    }

    pub fn with_rule(mut self, when: RuleMatch, respond: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            when,
            respond: respond.into(),
        });
        self
    }

    pub fn with_responses<I, S>(mut self, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.responses = responses.into_iter().map(Into::into).collect();
        self
    }

    fn render(&self, template: &str, ctx: &CallContext) -> String {
        // Values land inside JSON string literals in scripts, so escape them.
        let top_text = ctx.top_doc_text.clone().unwrap_or_default();
        let mut out = template
            .replace("{seed_query}", &json_escape(&ctx.seed_query))
            .replace("{cycle}", &ctx.cycle.to_string())
            .replace("{top_doc}", &json_escape(ctx.top_doc_id.as_deref().unwrap_or("")))
            .replace("{top_doc_text}", &json_escape(&top_text))
            .replace(
                "{proposal}",
                &ctx.proposal.as_ref().map(AgentAction::to_json).unwrap_or_default(),
            )
            .replace(
                "{proposal_query}",
                &json_escape(match &ctx.proposal {
                    Some(AgentAction::Search { query }) => query,
                    _ => "",
                }),
            );
        while let Some(start) = out.find("{top_doc_words:") {
            let Some(len) = out[start..].find('}') else { break };
            let n: usize = out[start + 15..start + len].parse().unwrap_or(0);
            out.replace_range(start..start + len + 1, &json_escape(&first_words(&top_text, n)));
        }
        out
    }
}

impl ModelBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        let ctx = request.context;
        let template = self
            .rules
            .iter()
            .find(|r| r.when.matches(ctx))
            .map(|r| r.respond.as_str())
            .or_else(|| {
                self.responses
                    .get(ctx.call_index.min(self.responses.len().saturating_sub(1)))
                    .map(String::as_str)
            })
            .ok_or_else(|| BackendError::Script {
                backend: self.id.clone(),
                message: "no rule matches and no responses are scripted".into(),
            })?;
        if let Some(msg) = template.strip_prefix("!error") {
            return Err(BackendError::Unavailable {
                backend: self.id.clone(),
                message: msg.trim_start_matches(':').trim().to_string(),
            });
        }
        Ok(self.render(template, ctx))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteChatBackend {
    pub id: String,
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
}

#[derive(Serialize)]
struct ChatCompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

impl ModelBackend for RemoteChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        let body = ChatCompletionRequest {
            model: &self.model_name,
            messages: request.messages,
            temperature: request.temperature,
            seed: request.seed,
        };
        let resp: ChatCompletionResponse =
            post_json_with_retry(&self.endpoint_url, self.api_key.as_deref(), &body, &self.retry)
                .map_err(|e| match e {
                    HttpError::Decode(m) => BackendError::BadResponse {
                        backend: self.id.clone(),
                        message: m,
                    },
                    other => BackendError::Unavailable {
                        backend: self.id.clone(),
                        message: other.to_string(),
                    },
                })?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::BadResponse {
                backend: self.id.clone(),
                message: "no choices[0].message.content".into(),
            })
    }
}

/// Backend as written in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    RemoteChat {
        id: String,
        endpoint_url: String,
        model_name: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
    },
    Scripted {
        id: String,
        #[serde(default)]
        rules: Vec<ScriptRule>,
        #[serde(default)]
        responses: Vec<String>,
    },
}

fn default_timeout_secs() -> f64 {
    60.0
}

/// Env var holding the API key for a backend id: `AGENTSIM_API_KEY_<ID>`,
/// uppercased with non-alphanumerics mapped to `_`.
pub fn api_key_env_var(backend_id: &str) -> String {
    let suffix: String = backend_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("AGENTSIM_API_KEY_{suffix}")
}

impl BackendSpec {
    pub fn id(&self) -> &str {
        match self {
            Self::RemoteChat { id, .. } | Self::Scripted { id, .. } => id,
        }
    }

    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if self.id().trim().is_empty() {
            out.push(("id".into(), "must be non-empty".into()));
        }
        match self {
            Self::RemoteChat {
                endpoint_url,
                model_name,
                timeout_secs,
                ..
            } => {
                if endpoint_url.trim().is_empty() {
                    out.push(("endpoint_url".into(), "required for remote_chat".into()));
                }
                if model_name.trim().is_empty() {
                    out.push(("model_name".into(), "required for remote_chat".into()));
                }
                if !timeout_secs.is_finite() || *timeout_secs <= 0.0 {
                    out.push(("timeout_secs".into(), "must be positive".into()));
                }
            }
            Self::Scripted { rules, responses, .. } => {
                if rules.is_empty() && responses.is_empty() {
                    out.push(("responses".into(), "scripted backend needs rules or responses".into()));
                }
            }
        }
        out
    }

    /// Instantiates the backend; remote keys come from the environment.
    pub fn build(&self) -> Box<dyn ModelBackend> {
        match self {
            Self::RemoteChat {
                id,
                endpoint_url,
                model_name,
                timeout_secs,
            } => Box::new(RemoteChatBackend {
                id: id.clone(),
                endpoint_url: endpoint_url.clone(),
                model_name: model_name.clone(),
                api_key: std::env::var(api_key_env_var(id)).ok(),
                retry: RetryPolicy {
                    timeout: Duration::from_secs_f64(timeout_secs.max(0.001)),
                    ..RetryPolicy::default()
                },
            }),
            Self::Scripted { id, rules, responses } => Box::new(ScriptedBackend {
                id: id.clone(),
                rules: rules.clone(),
                responses: responses.clone(),
            }),
        }
    }
}
