//! The trajectory loop: propose, review, judge, execute, validate.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::action::{ActionType, AgentAction, ParsedResponse};
use super::backend::{BackendError, CallContext, ChatMessage, ChatRequest, ModelBackend};
use super::judge::{judge_step, Candidate, Verdict};
use super::prompt::{analyst_messages, critic_messages, render_context, template_hashes};
use super::trace::{project, Observation, Outcome, Role, StepStatus, Trace, TraceStep, Trajectory};
use crate::corpus::{Corpus, RetrievalResult};
use crate::seeding::SeedRecord;
use crate::tokenize::content_tokens;
use crate::validation::grounding::{needs_reretrieval, uncovered_in_answer_order, verify_grounding};
use crate::validation::{ReviewDraft, ValidationConfig};

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Always reports the same instant.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

/// Serializable part of the simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSettings {
    #[serde(default = "defaults::max_cycles")]
    pub max_cycles: usize,
    #[serde(default = "defaults::retrieval_depth")]
    pub retrieval_depth: usize,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub adaptive_consultation: bool,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    /// Whitespace-word budget for the rendered context.
    #[serde(default = "defaults::context_budget")]
    pub context_budget: usize,
    #[serde(default = "defaults::explorations_per_seed")]
    pub explorations_per_seed: usize,
    #[serde(default = "defaults::parallelism")]
    pub parallelism: usize,
    #[serde(default = "defaults::record_prompts")]
    pub record_prompts: bool,
}

mod defaults {
    pub fn max_cycles() -> usize {
        7
    }
    pub fn retrieval_depth() -> usize {
        10
    }
    pub fn temperature() -> f64 {
        0.7
    }
    pub fn context_budget() -> usize {
        3000
    }
    pub fn explorations_per_seed() -> usize {
        1
    }
    pub fn parallelism() -> usize {
        4
    }
    pub fn record_prompts() -> bool {
        true
    }
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            max_cycles: defaults::max_cycles(),
            retrieval_depth: defaults::retrieval_depth(),
            validation: ValidationConfig::default(),
            adaptive_consultation: false,
            rng_seed: 0,
            temperature: defaults::temperature(),
            context_budget: defaults::context_budget(),
            explorations_per_seed: defaults::explorations_per_seed(),
            parallelism: defaults::parallelism(),
            record_prompts: defaults::record_prompts(),
        }
    }
}

impl SimulationSettings {
    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .validation
            .problems()
            .into_iter()
            .map(|(k, v)| (format!("validation.{k}"), v))
            .collect();
        for (key, value) in [
            ("max_cycles", self.max_cycles),
            ("retrieval_depth", self.retrieval_depth),
            ("context_budget", self.context_budget),
            ("explorations_per_seed", self.explorations_per_seed),
            ("parallelism", self.parallelism),
        ] {
            if value == 0 {
                out.push((key.to_string(), "must be >= 1".into()));
            }
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            out.push(("temperature".into(), format!("must be in [0, 2], got {}", self.temperature)));
        }
        out
    }
}

#[derive(Clone)]
pub struct SimulationConfig {
    pub analyst: Arc<dyn ModelBackend>,
    pub critics: Vec<Arc<dyn ModelBackend>>,
    pub settings: SimulationSettings,
    pub clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for SimulationConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimulationConfig")
            .field("analyst", &self.analyst.id())
            .field("critics", &self.critics.iter().map(|c| c.id()).collect::<Vec<_>>())
            .field("settings", &self.settings)
            .finish()
    }
}

impl SimulationConfig {
    pub fn new(analyst: Arc<dyn ModelBackend>, critics: Vec<Arc<dyn ModelBackend>>, settings: SimulationSettings) -> Self {
        Self {
            analyst,
            critics,
            settings,
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let mut problems: Vec<String> = self.settings.problems().into_iter().map(|(k, v)| format!("{k}: {v}")).collect();
        if self.critics.is_empty() {
            problems.push("critics: at least one critic is required".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SimulationError::InvalidConfig(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("backend `{backend}` produced no usable action after a retry: {message}")]
    UnparseableAction { backend: String, message: String },
}

/// Sampling parameters of one model call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallParams {
    pub temperature: f64,
    pub seed: u64,
}

/// A parsed model reply.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub thought: String,
    pub action: AgentAction,
    pub raw: String,
}

fn check_doc_ids(action: &AgentAction, corpus: &Corpus) -> Result<(), String> {
    match action.referenced_doc_ids().iter().find(|id| !corpus.contains(id)) {
        Some(id) => Err(format!("references unknown doc_id `{id}`")),
        None => Ok(()),
    }
}

fn ask(
    backend: &dyn ModelBackend,
    messages: &[ChatMessage],
    ctx: &CallContext,
    params: CallParams,
    corpus: &Corpus,
    allow_approve: bool,
) -> Result<(ParsedResponse, String), SimulationError> {
    let mut last_problem = String::new();
    for attempt in 0..2 {
        let ctx = CallContext {
            retry: attempt > 0,
            ..ctx.clone()
        };
        let raw = backend.complete(&ChatRequest {
            messages,
            temperature: params.temperature,
            seed: params.seed,
            context: &ctx,
        })?;
        match super::action::parse_response(&raw, allow_approve) {
            Ok(ParsedResponse::Action { thought, action }) => match check_doc_ids(&action, corpus) {
                Ok(()) => return Ok((ParsedResponse::Action { thought, action }, raw)),
                Err(m) => last_problem = m,
            },
            Ok(approve) => return Ok((approve, raw)),
            Err(e) => last_problem = e.to_string(),
        }
        tracing::debug!(backend = backend.id(), attempt, "unparseable response: {last_problem}");
    }
    Err(SimulationError::UnparseableAction {
        backend: backend.id().to_string(),
        message: last_problem,
    })
}

/// Prompts the Analyst and parses its `Thought:`/`Action:` reply, retrying
/// once on an unparseable response.
pub fn analyst_propose(
    backend: &dyn ModelBackend,
    messages: &[ChatMessage],
    ctx: &CallContext,
    params: CallParams,
    corpus: &Corpus,
) -> Result<Reply, SimulationError> {
    match ask(backend, messages, ctx, params, corpus, false)? {
        (ParsedResponse::Action { thought, action }, raw) => Ok(Reply { thought, action, raw }),
        (ParsedResponse::Approve { .. }, _) => unreachable!("approval disabled for analysts"),
    }
}

/// Asks a Critic to approve or revise `proposal`. Approval returns the
/// proposal itself.
pub fn critic_review(
    backend: &dyn ModelBackend,
    proposal: &AgentAction,
    messages: &[ChatMessage],
    ctx: &CallContext,
    params: CallParams,
    corpus: &Corpus,
) -> Result<Reply, SimulationError> {
    let (parsed, raw) = ask(backend, messages, ctx, params, corpus, true)?;
    Ok(match parsed {
        ParsedResponse::Action { thought, action } => Reply { thought, action, raw },
        ParsedResponse::Approve { thought } => Reply {
            thought,
            action: proposal.clone(),
            raw,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Trace,
    pub trajectory: Trajectory,
    /// One draft per flagged step, for the review queue.
    pub review_drafts: Vec<ReviewDraft>,
}

pub fn trace_id_for(seed: &SeedRecord, exploration: usize) -> String {
    format!("{}-x{exploration}", seed.seed_id)
}

fn derive_seed(rng_seed: u64, trace_id: &str) -> u64 {
    let digest = Sha256::digest(format!("{rng_seed}:{trace_id}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

const SYSTEM_MODEL: &str = "system";
const JUDGE_MODEL: &str = "judge";
const EXCERPT_CHARS: usize = 400;

struct Run<'a> {
    corpus: &'a Corpus,
    config: &'a SimulationConfig,
    seed: &'a SeedRecord,
    trace_id: String,
    steps: Vec<TraceStep>,
    drafts: Vec<ReviewDraft>,
    calls_per_backend: HashMap<String, usize>,
    calls: u64,
    base_seed: u64,
    reretrievals: usize,
}

impl<'a> Run<'a> {
    fn push(&mut self, mut step: TraceStep) -> usize {
        step.trace_id = self.trace_id.clone();
        step.step_index = self.steps.len();
        step.timestamp_ms = self.config.clock.now_ms();
        if !self.config.settings.record_prompts {
            step.prompt = None;
        }
        self.steps.push(step);
        self.steps.len() - 1
    }

    fn blank(&self, cycle: usize, role: Role, model_id: &str, action: AgentAction) -> TraceStep {
        TraceStep {
            trace_id: String::new(),
            step_index: 0,
            cycle_index: cycle,
            role,
            model_id: model_id.to_string(),
            thought: String::new(),
            action,
            executed: false,
            observation: None,
            divergence_score: None,
            grounding_confidence: None,
            status: StepStatus::Accepted,
            candidates: Vec::new(),
            prompt: None,
            raw_response: None,
            timestamp_ms: 0,
        }
    }

    fn next_params(&mut self) -> CallParams {
        let seed = self.base_seed.wrapping_add(self.calls);
        self.calls += 1;
        CallParams {
            temperature: self.config.settings.temperature,
            seed,
        }
    }

    fn next_call_index(&mut self, backend_id: &str) -> usize {
        let n = self.calls_per_backend.entry(backend_id.to_string()).or_default();
        *n += 1;
        *n - 1
    }

    fn executed(&self) -> impl DoubleEndedIterator<Item = &TraceStep> {
        self.steps.iter().filter(|s| s.executed)
    }

    fn last_retrieval(&self) -> Option<&RetrievalResult> {
        self.executed().rev().find_map(|s| match &s.observation {
            Some(Observation::Retrieval { result }) if !result.hits.is_empty() => Some(result),
            _ => None,
        })
    }

    fn last_search_query(&self) -> Option<&str> {
        self.executed().rev().find_map(|s| match &s.action {
            AgentAction::Search { query } => Some(query.as_str()),
            _ => None,
        })
    }

    fn call_context(&self, cycle: usize) -> CallContext {
        let top = self.last_retrieval().and_then(|r| r.hits.first());
        CallContext {
            trace_id: self.trace_id.clone(),
            seed_query: self.seed.query.clone(),
            role: None,
            cycle,
            call_index: 0,
            retry: false,
            last_action: self.executed().last().map(|s| s.action.action_type()),
            reretrievals: self.reretrievals,
            top_doc_id: top.map(|h| h.doc_id.clone()),
            top_doc_text: top.and_then(|h| self.corpus.document(&h.doc_id)).map(|d| d.text.clone()),
            proposal: None,
        }
    }

    /// Share of the seed query's content tokens found in documents retrieved so far.
    fn evidence_coverage(&self) -> f64 {
        let stopwords = self.corpus.stopwords();
        let wanted: BTreeSet<String> = content_tokens(&self.seed.query, stopwords).into_iter().collect();
        if wanted.is_empty() {
            return 0.0;
        }
        let mut evidence: HashSet<String> = HashSet::new();
        for s in self.executed() {
            for id in s.retrieved_doc_ids() {
                if let Some(doc) = self.corpus.document(&id) {
                    evidence.extend(content_tokens(&doc.text, stopwords));
                }
            }
        }
        wanted.iter().filter(|t| evidence.contains(*t)).count() as f64 / wanted.len() as f64
    }

    fn retrieve(&self, query: &str) -> Observation {
        let depth = self.config.settings.retrieval_depth;
        let result = self.corpus.retrieve(query, depth).unwrap_or_else(|_| RetrievalResult {
            query: query.to_string(),
            hits: Vec::new(),
            depth,
        });
        Observation::Retrieval { result }
    }

    fn fail(&mut self, cycle: usize, err: &SimulationError) -> String {
        let message = err.to_string();
        let mut step = self.blank(cycle, Role::System, SYSTEM_MODEL, AgentAction::abstain(format!("error: {message}")));
        step.thought = message.clone();
        step.status = StepStatus::Discarded;
        self.push(step);
        message
    }

    fn critic_replies(&mut self, cycle: usize, context: &str, proposal: &AgentAction) -> Vec<(Vec<ChatMessage>, Result<Reply, SimulationError>)> {
        let messages = critic_messages(context, proposal);
        let base = self.call_context(cycle);
        let jobs: Vec<(Arc<dyn ModelBackend>, CallContext, CallParams)> = self
            .config
            .critics
            .clone()
            .into_iter()
            .map(|critic| {
                let ctx = CallContext {
                    role: Some(Role::Critic),
                    call_index: self.next_call_index(critic.id()),
                    proposal: Some(proposal.clone()),
                    ..base.clone()
                };
                let params = self.next_params();
                (critic, ctx, params)
            })
            .collect();
        let corpus = self.corpus;
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(critic, ctx, params)| {
                    let messages = &messages;
                    scope.spawn(move || critic_review(critic.as_ref(), proposal, messages, ctx, *params, corpus))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| (messages.clone(), h.join().expect("critic thread panicked")))
                .collect()
        })
    }

    fn excerpt(&self, cycle_start: usize) -> Vec<String> {
        self.steps[cycle_start..]
            .iter()
            .filter(|s| matches!(s.role, Role::Analyst | Role::Critic) && !s.thought.is_empty())
            .map(|s| {
                let t: String = s.thought.chars().take(EXCERPT_CHARS).collect();
                format!("{} ({}): {t}", s.model_id, if s.role == Role::Analyst { "analyst" } else { "critic" })
            })
            .collect()
    }

    /// Runs one cycle. `Some(outcome)` ends the trajectory.
    fn cycle(&mut self, cycle: usize) -> Result<Option<Outcome>, SimulationError> {
        let settings = &self.config.settings;
        let (max_cycles, theta) = (settings.max_cycles, settings.validation.theta);
        let context = render_context(&self.seed.query, &self.steps, self.corpus, settings.context_budget);
        let cycle_start = self.steps.len();

        let analyst = Arc::clone(&self.config.analyst);
        let messages = analyst_messages(&context, cycle, max_cycles);
        let ctx = CallContext {
            role: Some(Role::Analyst),
            call_index: self.next_call_index(analyst.id()),
            ..self.call_context(cycle)
        };
        let params = self.next_params();
        let reply = analyst_propose(analyst.as_ref(), &messages, &ctx, params, self.corpus)?;

        let skip_critics = self.config.settings.adaptive_consultation
            && self.evidence_coverage() >= self.config.settings.validation.grounding_threshold;
        let mut step = self.blank(cycle, Role::Analyst, analyst.id(), reply.action.clone());
        step.thought = reply.thought.clone();
        step.prompt = Some(messages);
        step.raw_response = Some(reply.raw.clone());
        step.executed = skip_critics;
        let analyst_idx = self.push(step);

        let executed_idx = if skip_critics {
            analyst_idx
        } else {
            let replies = self.critic_replies(cycle, &context, &reply.action);
            let mut candidates = vec![Candidate {
                model_id: analyst.id().to_string(),
                action: reply.action.clone(),
            }];
            for (critic, (messages, result)) in self.config.critics.clone().iter().zip(replies) {
                let r = result?;
                let mut step = self.blank(cycle, Role::Critic, critic.id(), r.action.clone());
                step.thought = r.thought;
                step.prompt = Some(messages);
                step.raw_response = Some(r.raw);
                self.push(step);
                candidates.push(Candidate {
                    model_id: critic.id().to_string(),
                    action: r.action,
                });
            }
            let judgement = judge_step(&candidates, theta);
            let (action, status, distinct) = match judgement.verdict {
                Verdict::Accepted(a) => (a, StepStatus::Accepted, Vec::new()),
                Verdict::Flagged(c) => (reply.action.clone(), StepStatus::Flagged, c),
            };
            let mut step = self.blank(cycle, Role::Judge, JUDGE_MODEL, action);
            step.executed = true;
            step.divergence_score = Some(judgement.divergence_score);
            step.status = status;
            step.candidates = distinct.clone();
            let idx = self.push(step);
            if status == StepStatus::Flagged {
                self.drafts.push(ReviewDraft {
                    trace_id: self.trace_id.clone(),
                    step_index: idx,
                    seed_query: self.seed.query.clone(),
                    context_excerpt: self.excerpt(cycle_start),
                    candidates: distinct,
                    divergence_score: judgement.divergence_score,
                });
            }
            idx
        };

        let action = self.steps[executed_idx].action.clone();
        match action {
            AgentAction::Search { query } => {
                self.steps[executed_idx].observation = Some(self.retrieve(&query));
            }
            AgentAction::Rerank { doc_ids } => {
                self.steps[executed_idx].observation = Some(Observation::Text {
                    text: format!("reordered: {}", doc_ids.join(", ")),
                });
            }
            AgentAction::Summarize { summary, .. } => {
                self.steps[executed_idx].observation = Some(Observation::Text { text: summary });
            }
            AgentAction::Abstain { .. } => return Ok(Some(Outcome::Abstained)),
            AgentAction::Synthesize { ref answer, .. } => {
                let stopwords = self.corpus.stopwords();
                let report = verify_grounding(&action, self.corpus, stopwords).map_err(|e| {
                    SimulationError::UnparseableAction {
                        backend: analyst.id().to_string(),
                        message: e.to_string(),
                    }
                })?;
                let confidence = report.token_coverage;
                let validation = &self.config.settings.validation;
                let threshold = validation.grounding_threshold;
                let max_reretrievals = validation.max_reretrievals;
                self.steps[executed_idx].grounding_confidence = Some(confidence);
                if !needs_reretrieval(confidence, threshold) {
                    return Ok(Some(Outcome::Answered));
                }
                if self.steps[executed_idx].status != StepStatus::Flagged {
                    self.steps[executed_idx].status = StepStatus::AutoReretrieved;
                }
                if self.reretrievals >= max_reretrievals {
                    return Ok(Some(Outcome::Answered));
                }
                self.reretrievals += 1;
                let base = self.last_search_query().unwrap_or(&self.seed.query).to_string();
                let extra: Vec<String> = uncovered_in_answer_order(answer, &report, stopwords)
                    .into_iter()
                    .take(3)
                    .collect();
                let query = if extra.is_empty() { base } else { format!("{base} {}", extra.join(" ")) };
                let observation = self.retrieve(&query);
                let mut step = self.blank(cycle, Role::System, SYSTEM_MODEL, AgentAction::search(query));
                step.thought = format!(
                    "grounding confidence {confidence:.3} is below {threshold}; re-retrieving ({} of {max_reretrievals})",
                    self.reretrievals
                );
                step.executed = true;
                step.status = StepStatus::AutoReretrieved;
                step.observation = Some(observation);
                self.push(step);
            }
        }
        Ok(None)
    }
}

/// Runs one trajectory for `seed`. Backend failures end the trajectory with
/// outcome `discarded`; they are recorded in the trace, not returned.
pub fn run_trajectory(seed: &SeedRecord, exploration: usize, corpus: &Corpus, config: &SimulationConfig) -> Result<RunOutput, SimulationError> {
    config.validate()?;
    let trace_id = trace_id_for(seed, exploration);
    let mut run = Run {
        corpus,
        config,
        seed,
        base_seed: derive_seed(config.settings.rng_seed, &trace_id),
        trace_id,
        steps: Vec::new(),
        drafts: Vec::new(),
        calls_per_backend: HashMap::new(),
        calls: 0,
        reretrievals: 0,
    };
    let max_cycles = config.settings.max_cycles;
    let mut outcome = None;
    let mut failure = None;
    for cycle in 0..max_cycles {
        match run.cycle(cycle) {
            Ok(Some(o)) => {
                outcome = Some(o);
                break;
            }
            Ok(None) => {}
            Err(e) => {
                failure = Some(run.fail(cycle, &e));
                outcome = Some(Outcome::Discarded);
                break;
            }
        }
    }
    let outcome = outcome.unwrap_or_else(|| {
        let mut step = run.blank(
            max_cycles,
            Role::System,
            SYSTEM_MODEL,
            AgentAction::abstain(format!("cycle limit of {max_cycles} reached without an answer")),
        );
        step.executed = true;
        run.push(step);
        Outcome::Abstained
    });
    let drafts = if outcome == Outcome::Discarded { Vec::new() } else { run.drafts };
    let trace = Trace {
        trace_id: run.trace_id,
        seed: seed.clone(),
        exploration,
        analyst_model: config.analyst.id().to_string(),
        critic_models: config.critics.iter().map(|c| c.id().to_string()).collect(),
        prompt_hashes: template_hashes(),
        steps: run.steps,
        outcome,
        failure,
    };
    let trajectory = project(&trace);
    Ok(RunOutput {
        trace,
        trajectory,
        review_drafts: drafts,
    })
}

/// Runs many trajectories with bounded parallelism.
pub struct Simulator<'a> {
    corpus: &'a Corpus,
    config: &'a SimulationConfig,
}

impl<'a> Simulator<'a> {
    pub fn new(corpus: &'a Corpus, config: &'a SimulationConfig) -> Result<Self, SimulationError> {
        config.validate()?;
        Ok(Self { corpus, config })
    }

    /// `(seed, exploration)` pairs for the configured explorations per seed.
    pub fn jobs(&self, seeds: &[SeedRecord]) -> Vec<(SeedRecord, usize)> {
        seeds
            .iter()
            .flat_map(|s| (0..self.config.settings.explorations_per_seed).map(move |x| (s.clone(), x)))
            .collect()
    }

    /// Runs every job, handing each output to `sink` as it completes.
    pub fn run_each<F>(&self, jobs: &[(SeedRecord, usize)], sink: F)
    where
        F: Fn(RunOutput) + Sync,
    {
        let next = AtomicUsize::new(0);
        let workers = self.config.settings.parallelism.min(jobs.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((seed, exploration)) = jobs.get(i) else { break };
                    let out = run_trajectory(seed, *exploration, self.corpus, self.config)
                        .expect("config validated in Simulator::new");
                    sink(out);
                });
            }
        });
    }

    /// Runs every job and returns outputs in job order.
    pub fn run_all(&self, jobs: &[(SeedRecord, usize)]) -> Vec<RunOutput> {
        let slots: Mutex<Vec<Option<RunOutput>>> = Mutex::new(vec![None; jobs.len()]);
        let index: HashMap<String, usize> = jobs
            .iter()
            .enumerate()
            .map(|(i, (s, x))| (trace_id_for(s, *x), i))
            .collect();
        self.run_each(jobs, |out| {
            let i = index[&out.trace.trace_id];
            slots.lock().expect("slots lock")[i] = Some(out);
        });
        slots.into_inner().expect("slots lock").into_iter().flatten().collect()
    }
}

/// Action types of executed steps, in order.
pub fn executed_action_types(trace: &Trace) -> Vec<ActionType> {
    trace
        .steps
        .iter()
        .filter(|s| s.executed && s.status != StepStatus::Discarded)
        .map(|s| s.action.action_type())
        .collect()
}
