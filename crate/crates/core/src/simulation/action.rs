//! Agent actions, their canonical form, and model-response parsing.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    Search,
    Rerank,
    Summarize,
    Synthesize,
    Abstain,
}

impl ActionType {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Search => "search",
            Self::Rerank => "rerank",
            Self::Summarize => "summarize",
            Self::Synthesize => "synthesize",
            Self::Abstain => "abstain",
        }
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentAction {
    Search {
        query: String,
    },
    Rerank {
        doc_ids: Vec<String>,
    },
    Summarize {
        doc_ids: Vec<String>,
        summary: String,
    },
    Synthesize {
        answer: String,
        cited_doc_ids: Vec<String>,
    },
    Abstain {
        reason: String,
    },
}

/// Lowercase and collapse runs of whitespace to single spaces.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl AgentAction {
    pub fn search(query: impl Into<String>) -> Self {
        Self::Search { query: query.into() }
    }

    pub fn synthesize(answer: impl Into<String>, cited: &[&str]) -> Self {
        Self::Synthesize {
            answer: answer.into(),
            cited_doc_ids: cited.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn abstain(reason: impl Into<String>) -> Self {
        Self::Abstain { reason: reason.into() }
    }

    pub fn action_type(&self) -> ActionType {
        match self {
            Self::Search { .. } => ActionType::Search,
            Self::Rerank { .. } => ActionType::Rerank,
            Self::Summarize { .. } => ActionType::Summarize,
            Self::Synthesize { .. } => ActionType::Synthesize,
            Self::Abstain { .. } => ActionType::Abstain,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Synthesize { .. } | Self::Abstain { .. })
    }

    /// Doc ids the action refers to (rerank order, summarized or cited docs).
    pub fn referenced_doc_ids(&self) -> &[String] {
        match self {
            Self::Rerank { doc_ids } | Self::Summarize { doc_ids, .. } => doc_ids,
            Self::Synthesize { cited_doc_ids, .. } => cited_doc_ids,
            Self::Search { .. } | Self::Abstain { .. } => &[],
        }
    }

    /// Structural contract; does not check doc ids against a corpus.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Self::Search { query } if query.trim().is_empty() => Err("search query is empty".into()),
            Self::Rerank { doc_ids } if doc_ids.is_empty() => Err("rerank lists no documents".into()),
            Self::Summarize { doc_ids, .. } if doc_ids.is_empty() => {
                Err("summarize lists no documents".into())
            }
            Self::Synthesize { cited_doc_ids, .. } if cited_doc_ids.is_empty() => {
                Err("synthesize must cite at least one document".into())
            }
            Self::Synthesize { answer, .. } if answer.trim().is_empty() => {
                Err("synthesize answer is empty".into())
            }
            _ => Ok(()),
        }
    }

    /// Equality key for divergence counting: action type plus normalized
    /// payload text (query, answer, summary, reason) or the doc id sequence.
    pub fn canonical_key(&self) -> String {
        let t = self.action_type().as_str();
        match self {
            Self::Search { query } => format!("{t}\x1f{}", normalize_text(query)),
            Self::Rerank { doc_ids } => format!("{t}\x1f{}", doc_ids.join("\x1e")),
            Self::Summarize { doc_ids, summary } => {
                format!("{t}\x1f{}\x1f{}", doc_ids.join("\x1e"), normalize_text(summary))
            }
            Self::Synthesize { answer, .. } => format!("{t}\x1f{}", normalize_text(answer)),
            Self::Abstain { reason } => format!("{t}\x1f{}", normalize_text(reason)),
        }
    }

    pub fn canonical_eq(&self, other: &Self) -> bool {
        self.canonical_key() == other.canonical_key()
    }

    /// Compact one-line JSON, as rendered into prompts.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("actions serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedResponse {
    Action { thought: String, action: AgentAction },
    Approve { thought: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("response has no `Action:` block")]
    MissingAction,
    #[error("malformed action JSON: {0}")]
    BadJson(String),
    #[error("invalid action: {0}")]
    Invalid(String),
}

fn is_approval(line: &str) -> bool {
    let l = line.trim().trim_end_matches('.');
    let l = l
        .strip_prefix("Verdict:")
        .or_else(|| l.strip_prefix("verdict:"))
        .unwrap_or(l)
        .trim();
    l.eq_ignore_ascii_case("approve")
}

/// Parses `Thought: ...` / `Action: {json}` responses. With `allow_approve`,
/// a line reading `APPROVE` (without an action block) is an approval.
pub fn parse_response(text: &str, allow_approve: bool) -> Result<ParsedResponse, ParseError> {
    let action_at = text.find("Action:");
    let thought_end = action_at.unwrap_or(text.len());
    let thought = text[..thought_end]
        .lines()
        .filter(|l| !(allow_approve && is_approval(l)))
        .collect::<Vec<_>>()
        .join("\n");
    let thought = thought
        .trim()
        .strip_prefix("Thought:")
        .unwrap_or(thought.trim())
        .trim()
        .to_string();

    let Some(at) = action_at else {
        if allow_approve && text.lines().any(is_approval) {
            return Ok(ParsedResponse::Approve { thought });
        }
        return Err(ParseError::MissingAction);
    };
    let rest = &text[at + "Action:".len()..];
    let start = rest.find('{').ok_or(ParseError::MissingAction)?;
    let mut stream = serde_json::Deserializer::from_str(&rest[start..]).into_iter::<AgentAction>();
    let action = match stream.next() {
        Some(Ok(a)) => a,
        Some(Err(e)) => return Err(ParseError::BadJson(e.to_string())),
        None => return Err(ParseError::MissingAction),
    };
    action.validate().map_err(ParseError::Invalid)?;
    Ok(ParsedResponse::Action { thought, action })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_thought_and_action() {
        let r = parse_response(
            "Thought: I need sources.\nAction: {\"type\": \"search\", \"query\": \"manhattan project\"}\n",
            false,
        )
        .unwrap();
        assert_eq!(
            r,
            ParsedResponse::Action {
                thought: "I need sources.".into(),
                action: AgentAction::search("manhattan project"),
            }
        );
    }

    #[test]
    fn action_inside_code_fence() {
        let r = parse_response(
            "Thought: done\nAction: ```json\n{\"type\":\"abstain\",\"reason\":\"nothing\"}\n```",
            false,
        )
        .unwrap();
        assert!(matches!(r, ParsedResponse::Action { action: AgentAction::Abstain { .. }, .. }));
    }

    #[test]
    fn missing_action_block() {
        assert_eq!(parse_response("Thought: hmm", false), Err(ParseError::MissingAction));
        assert_eq!(parse_response("APPROVE", false), Err(ParseError::MissingAction));
    }

    #[test]
    fn approval_for_critics() {
        assert_eq!(
            parse_response("APPROVE", true).unwrap(),
            ParsedResponse::Approve { thought: String::new() }
        );
        assert!(matches!(
            parse_response("Thought: looks right\nVerdict: approve.", true).unwrap(),
            ParsedResponse::Approve { .. }
        ));
    }

    #[test]
    fn synthesize_without_citations_is_invalid() {
        let err = parse_response(
            "Action: {\"type\":\"synthesize\",\"answer\":\"x\",\"cited_doc_ids\":[]}",
            false,
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::Invalid(_)));
    }

    #[test]
    fn unknown_action_type_is_bad_json() {
        let err = parse_response("Action: {\"type\":\"click\",\"x\":1}", false).unwrap_err();
        assert!(matches!(err, ParseError::BadJson(_)));
    }

    #[test]
    fn canonical_equality_ignores_case_and_spacing() {
        let a = AgentAction::search("Manhattan   Project ");
        let b = AgentAction::search("manhattan project");
        assert!(a.canonical_eq(&b));
        assert!(!a.canonical_eq(&AgentAction::search("manhattan projects")));
        let s1 = AgentAction::synthesize("Paris", &["d1"]);
        let s2 = AgentAction::synthesize("paris", &["d2"]);
        assert!(s1.canonical_eq(&s2));
        assert!(!s1.canonical_eq(&AgentAction::search("paris")));
    }

    #[test]
    fn rerank_compares_sequence() {
        let a = AgentAction::Rerank { doc_ids: vec!["a".into(), "b".into()] };
        let b = AgentAction::Rerank { doc_ids: vec!["b".into(), "a".into()] };
        assert!(!a.canonical_eq(&b));
    }
}
