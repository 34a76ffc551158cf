//! Analyst–Critic–Judge simulation over a corpus.

pub mod action;
pub mod backend;
pub mod engine;
pub mod judge;
pub mod prompt;
pub mod trace;

pub use action::{parse_response, ActionType, AgentAction, ParseError, ParsedResponse};
pub use backend::{BackendError, BackendSpec, ModelBackend, ScriptedBackend};
pub use engine::{
    analyst_propose, critic_review, run_trajectory, Clock, FixedClock, RunOutput, SimulationConfig,
    SimulationError, SimulationSettings, Simulator, SystemClock,
};
pub use judge::{divergence_score, judge_step, Candidate, Judgement};
pub use trace::{project, Observation, Outcome, Role, StepStatus, ToolCall, Trace, TraceStep, Trajectory};
