//! Versioned prompt templates and context rendering.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::action::AgentAction;
use super::backend::ChatMessage;
use super::trace::{Observation, TraceStep};
use crate::corpus::Corpus;

pub const ANALYST_TEMPLATE: &str = include_str!("../../prompts/analyst_v1.txt");
pub const CRITIC_TEMPLATE: &str = include_str!("../../prompts/critic_v1.txt");
pub const TOOL_NOTES_TEMPLATE: &str = include_str!("../../prompts/rerank_summarize_v1.txt");

const SNIPPET_WORDS: usize = 30;
pub const ELIDED: &str = "[observation elided]";

/// `name -> sha256(text)` for every shipped template.
pub fn template_hashes() -> BTreeMap<String, String> {
    [
        ("analyst_v1", ANALYST_TEMPLATE),
        ("critic_v1", CRITIC_TEMPLATE),
        ("rerank_summarize_v1", TOOL_NOTES_TEMPLATE),
    ]
    .into_iter()
    .map(|(name, text)| (name.to_string(), hex::encode(Sha256::digest(text.as_bytes()))))
    .collect()
}

/// Whitespace-delimited word count, the unit of the context budget.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

fn snippet(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut s = words[..words.len().min(SNIPPET_WORDS)].join(" ");
    if words.len() > SNIPPET_WORDS {
        s.push_str(" ...");
    }
    s
}

pub fn render_observation(obs: &Observation, corpus: &Corpus) -> String {
    match obs {
        Observation::Retrieval { result } if result.hits.is_empty() => "no documents found".into(),
        Observation::Retrieval { result } => result
            .hits
            .iter()
            .map(|h| {
                let text = corpus.document(&h.doc_id).map(|d| snippet(&d.text)).unwrap_or_default();
                format!("[{}] {}", h.doc_id, text)
            })
            .collect::<Vec<_>>()
            .join("\n"),
        Observation::Text { text } => text.clone(),
    }
}

struct Block {
    head: String,
    observation: Option<String>,
}

/// Renders the seed question and executed history, eliding the oldest
/// observations first while the total exceeds `budget` words.
pub fn render_context(seed_query: &str, history: &[TraceStep], corpus: &Corpus, budget: usize) -> String {
    let mut blocks: Vec<Block> = history
        .iter()
        .filter(|s| s.executed)
        .map(|s| Block {
            head: format!(
                "Thought: {}\nAction: {}",
                if s.thought.is_empty() { "-" } else { &s.thought },
                s.action.to_json()
            ),
            observation: s.observation.as_ref().map(|o| render_observation(o, corpus)),
        })
        .collect();
    let assemble = |blocks: &[Block]| {
        let mut out = format!("Question: {seed_query}\n");
        for (i, b) in blocks.iter().enumerate() {
            out.push_str(&format!("\n[step {}]\n{}\n", i + 1, b.head));
            if let Some(o) = &b.observation {
                out.push_str(&format!("Observation:\n{o}\n"));
            }
        }
        out
    };
    let mut text = assemble(&blocks);
    let mut next = 0;
    while count_tokens(&text) > budget && next < blocks.len() {
        if blocks[next].observation.as_deref().is_some_and(|o| o != ELIDED) {
            blocks[next].observation = Some(ELIDED.to_string());
            text = assemble(&blocks);
        }
        next += 1;
    }
    text
}

pub fn analyst_messages(context: &str, cycle: usize, max_cycles: usize) -> Vec<ChatMessage> {
    let system = format!(
        "{}\n{}",
        ANALYST_TEMPLATE
            .replace("{max_cycles}", &max_cycles.to_string())
            .replace("{cycle}", &(cycle + 1).to_string()),
        TOOL_NOTES_TEMPLATE
    );
    vec![ChatMessage::system(system), ChatMessage::user(context)]
}

pub fn critic_messages(context: &str, proposal: &AgentAction) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(CRITIC_TEMPLATE),
        ChatMessage::user(format!("{context}\nProposed action: {}", proposal.to_json())),
    ]
}
