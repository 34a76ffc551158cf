//! A planted-topic corpus plus a scripted-backend config that runs offline.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use agentsim_core::embedding::EmbeddingProviderConfig;
use agentsim_core::jsonl::JsonlWriter;
use agentsim_core::seeding::SeedingConfig;
use agentsim_core::simulation::backend::{RuleMatch, ScriptRule};
use agentsim_core::simulation::{BackendSpec, SimulationSettings};
use agentsim_core::synthetic::{generate, SyntheticCorpus, SyntheticSpec};
use agentsim_core::validation::ValidationConfig;
use agentsim_core::Bm25Params;
use serde::Serialize;

use crate::config::{Backends, ReviewSettings, RunConfig};
use crate::CliError;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const QUERIES_FILE: &str = "queries.txt";
pub const CONFIG_FILE: &str = "config.yaml";

#[derive(Debug, Clone)]
pub struct SyntheticOptions {
    pub spec: SyntheticSpec,
    pub budget: usize,
    pub clusters: usize,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        let spec = SyntheticSpec::default();
        Self {
            budget: 50,
            clusters: spec.topics,
            spec,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SyntheticSummary {
    pub documents: usize,
    pub queries: usize,
    pub topics: usize,
    pub config: PathBuf,
}

impl fmt::Display for SyntheticSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "wrote {} documents and {} queries over {} topics; config at {}",
            self.documents,
            self.queries,
            self.topics,
            self.config.display()
        )
    }
}

#[derive(Serialize)]
struct CorpusLine<'a> {
    id: &'a str,
    text: &'a str,
}

const SEARCH: &str = r#"Thought: I should find documents about the question.
Action: {"type": "search", "query": "{seed_query}"}"#;
const UNSUPPORTED: &str = r#"Thought: I can answer from memory.
Action: {"type": "synthesize", "answer": "Probably something widely reported elsewhere, though nobody here confirmed it.", "cited_doc_ids": ["{top_doc}"]}"#;
const QUOTED: &str = r#"Thought: The top document answers it.
Action: {"type": "synthesize", "answer": "{top_doc_words:12}", "cited_doc_ids": ["{top_doc}"]}"#;

fn rule(when: RuleMatch, respond: impl Into<String>) -> ScriptRule {
    ScriptRule {
        when,
        respond: respond.into(),
    }
}

/// Analyst: search first, then one unsupported answer that triggers automatic
/// re-retrieval, then an answer quoting the top document. Critics approve,
/// except on the first cycle of seeds from even topics, where they propose
/// their own searches.
pub fn scripted_backends(syn: &SyntheticCorpus) -> Backends {
    let analyst = BackendSpec::Scripted {
        id: "analyst".into(),
        rules: vec![
            rule(RuleMatch { cycle: Some(0), ..RuleMatch::default() }, SEARCH),
            rule(RuleMatch { max_reretrievals: Some(0), ..RuleMatch::default() }, UNSUPPORTED),
        ],
        responses: vec![QUOTED.into()],
    };
    let critic = |id: &str, angle: &str| {
        let rules = syn
            .vocabularies
            .iter()
            .step_by(2)
            .map(|vocab| {
                rule(
                    RuleMatch {
                        cycle: Some(0),
                        seed_contains: Some(vocab[0].clone()),
                        ..RuleMatch::default()
                    },
                    format!(
                        "Thought: a narrower query would do better.\nAction: {{\"type\": \"search\", \"query\": \"{{seed_query}} {angle}\"}}"
                    ),
                )
            })
            .collect();
        BackendSpec::Scripted {
            id: id.into(),
            rules,
            responses: vec!["APPROVE".into()],
        }
    };
    Backends {
        analyst,
        critics: vec![critic("critic-a", "origins"), critic("critic-b", "timeline")],
    }
}

pub fn synthetic_config(syn: &SyntheticCorpus, options: &SyntheticOptions) -> RunConfig {
    RunConfig {
        corpus: CORPUS_FILE.into(),
        queries: QUERIES_FILE.into(),
        out: "out".into(),
        rng_seed: options.spec.rng_seed,
        parallelism: Some(4),
        fixed_clock_ms: None,
        retrieval: Bm25Params::default(),
        embedding: EmbeddingProviderConfig::default(),
        seeding: SeedingConfig {
            clusters: options.clusters,
            ..SeedingConfig::with_budget(options.budget)
        },
        simulation: SimulationSettings::default(),
        validation: ValidationConfig::default(),
        backends: scripted_backends(syn),
        review: ReviewSettings::default(),
    }
}

fn drop_nulls(value: &mut serde_yaml::Value) {
    match value {
        serde_yaml::Value::Mapping(map) => {
            map.retain(|_, v| !v.is_null());
            map.iter_mut().for_each(|(_, v)| drop_nulls(v));
        }
        serde_yaml::Value::Sequence(items) => items.iter_mut().for_each(drop_nulls),
        _ => {}
    }
}

fn config_yaml(config: &RunConfig) -> String {
    let mut value = serde_yaml::to_value(config).expect("config serializes");
    // Written once at the top level; see `parse`.
    if let Some(sim) = value.get_mut("simulation").and_then(|s| s.as_mapping_mut()) {
        for k in ["validation", "rng_seed", "parallelism"] {
            sim.remove(k);
        }
    }
    if let Some(seeding) = value.get_mut("seeding").and_then(|s| s.as_mapping_mut()) {
        seeding.remove("rng_seed");
    }
    drop_nulls(&mut value);
    let body = serde_yaml::to_string(&value).expect("yaml serializes");
    format!(
        "# agentsim run config for a synthetic planted-topic corpus.\n\
         # Paths are relative to this file. ${{VAR}} in a value is replaced from the environment.\n\
         {body}"
    )
}

/// Writes `corpus.jsonl`, `queries.txt` and `config.yaml` into `dir`.
pub fn cmd_synthetic(dir: &Path, options: &SyntheticOptions) -> Result<SyntheticSummary, CliError> {
    let syn = generate(&options.spec);
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let corpus_path = dir.join(CORPUS_FILE);
    let io = |e| CliError::io(format!("writing {}", corpus_path.display()), e);
    let mut w = JsonlWriter::create(&corpus_path).map_err(io)?;
    for d in &syn.documents {
        w.write_record(&CorpusLine {
            id: &d.doc_id,
            text: &d.text,
        })
        .map_err(io)?;
    }
    w.finish().map_err(io)?;

    let queries_path = dir.join(QUERIES_FILE);
    let mut f = std::fs::File::create(&queries_path).map_err(|e| CliError::io(format!("writing {}", queries_path.display()), e))?;
    for q in &syn.queries {
        writeln!(f, "{q}").map_err(|e| CliError::io(format!("writing {}", queries_path.display()), e))?;
    }

    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(&config_path, config_yaml(&synthetic_config(&syn, options)))
        .map_err(|e| CliError::io(format!("writing {}", config_path.display()), e))?;
    Ok(SyntheticSummary {
        documents: syn.documents.len(),
        queries: syn.queries.len(),
        topics: options.spec.topics,
        config: config_path,
    })
}
