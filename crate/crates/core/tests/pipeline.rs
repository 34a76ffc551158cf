use std::collections::BTreeMap;
use std::sync::Arc;

use agentsim_core::dataset::{
    export_dataset, read_supervised_dir, read_trace_dir, read_trajectory_dir, DatasetError, SUPERVISED_DIR,
    TRACES_DIR, TRAJECTORIES_DIR,
};
use agentsim_core::seeding::{seed_id_for, SeedRecord};
use agentsim_core::simulation::{
    project, AgentAction, FixedClock, ModelBackend, Outcome, Role, RunOutput, ScriptedBackend, SimulationConfig,
    SimulationSettings, Simulator, StepStatus, Trace,
};
use agentsim_core::simulation::backend::RuleMatch;
use agentsim_core::synthetic::{generate, SyntheticCorpus, SyntheticSpec};
use agentsim_core::validation::{
    agreement_rate, apply_resolution, ReviewDecision, ReviewQueue, ReviewStatus, ValidationConfig, ValidationError,
    Verdict,
};
use agentsim_core::{Bm25Params, Corpus, Stopwords};

const SEARCH: &str = "Thought: look\nAction: {\"type\":\"search\",\"query\":\"{seed_query}\"}";
const ANSWER: &str =
    "Thought: done\nAction: {\"type\":\"synthesize\",\"answer\":\"{top_doc_words:8}\",\"cited_doc_ids\":[\"{top_doc}\"]}";

fn world() -> (SyntheticCorpus, Corpus) {
    let syn = generate(&SyntheticSpec {
        documents: 200,
        topics: 5,
        queries: 20,
        rng_seed: 2,
        ..SyntheticSpec::default()
    });
    let corpus = Corpus::build(syn.documents.clone(), Stopwords::english(), Bm25Params::default()).unwrap();
    (syn, corpus)
}

/// Critics dissent on the first cycle of seeds from even topics, so those
/// traces carry exactly one flagged step.
fn config(syn: &SyntheticCorpus) -> SimulationConfig {
    let analyst = ScriptedBackend::new("analyst").with_responses([SEARCH, ANSWER]);
    let critic = |n: usize, alt: &str| {
        let mut c = ScriptedBackend::new(format!("critic-{n}")).with_responses(["APPROVE"]);
        for (t, vocab) in syn.vocabularies.iter().enumerate().filter(|(t, _)| t % 2 == 0) {
            c = c.with_rule(
                RuleMatch {
                    cycle: Some(0),
                    seed_contains: Some(vocab[0].clone()),
                    ..RuleMatch::default()
                },
                format!("Thought: t{t}\nAction: {{\"type\":\"search\",\"query\":\"{{seed_query}} {alt}\"}}"),
            );
        }
        Arc::new(c) as Arc<dyn ModelBackend>
    };
    SimulationConfig::new(
        Arc::new(analyst),
        vec![critic(0, "origins"), critic(1, "timeline")],
        SimulationSettings {
            validation: ValidationConfig {
                double_annotation_rate: 0.5,
                ..ValidationConfig::default()
            },
            ..SimulationSettings::default()
        },
    )
    .with_clock(Arc::new(FixedClock(1_700_000_000_000)))
}

fn seeds(syn: &SyntheticCorpus) -> Vec<SeedRecord> {
    syn.queries
        .iter()
        .enumerate()
        .map(|(rank, q)| SeedRecord {
            seed_id: seed_id_for(q),
            query: q.clone(),
            cluster_id: syn.query_topics[rank],
            novelty: 1.0,
            retrieved_doc_ids: vec![],
            strategy: "random".into(),
            rank,
        })
        .collect()
}

fn run(syn: &SyntheticCorpus, corpus: &Corpus) -> (SimulationConfig, Vec<RunOutput>) {
    let cfg = config(syn);
    let sim = Simulator::new(corpus, &cfg).unwrap();
    let outs = sim.run_all(&sim.jobs(&seeds(syn)));
    (cfg, outs)
}

#[test]
fn review_then_export_round_trips() {
    let (syn, corpus) = world();
    let (cfg, outs) = run(&syn, &corpus);
    assert_eq!(outs.len(), 20);
    let flagged: Vec<&RunOutput> = outs.iter().filter(|o| !o.review_drafts.is_empty()).collect();
    assert_eq!(flagged.len(), 12, "queries from topics 0, 2, 4");

    let tmp = tempfile::tempdir().unwrap();
    let mut queue = ReviewQueue::open(tmp.path().join("review")).unwrap();
    for o in &outs {
        for d in &o.review_drafts {
            queue.enqueue(d.clone(), &cfg.settings.validation).unwrap();
        }
    }
    assert_eq!(queue.len(), 12);

    let mut traces: BTreeMap<String, Trace> = outs.iter().map(|o| (o.trace.trace_id.clone(), o.trace.clone())).collect();
    let all: Vec<Trace> = traces.values().cloned().collect();
    assert!(matches!(
        export_dataset(&all, &corpus, &tmp.path().join("blocked"), 4),
        Err(DatasetError::PendingReviewItems(_))
    ));

    let ids: Vec<String> = queue.list(Some(ReviewStatus::Pending)).iter().map(|i| i.item_id.clone()).collect();
    for (n, id) in ids.iter().enumerate() {
        let item = queue.get(id).unwrap().clone();
        let decision = |reviewer: &str| match n % 3 {
            0 => ReviewDecision::promote(reviewer, 1),
            1 => ReviewDecision::revise(reviewer, AgentAction::search(format!("{} revised", item.seed_query))),
            _ => ReviewDecision::discard(reviewer),
        };
        queue.decide(id, decision("r1"), Some(item.version)).unwrap();
        if item.double_annotated {
            let stale = queue.decide(id, decision("r2"), Some(0));
            assert!(matches!(stale, Err(ValidationError::StaleItem { .. })));
            queue.decide(id, decision("r2"), Some(1)).unwrap();
        }
        let decided = queue.get(id).unwrap();
        assert_eq!(decided.status, ReviewStatus::Decided);
        assert!(apply_resolution(traces.get_mut(&decided.trace_id).unwrap(), decided).unwrap());
    }
    if queue.items().any(|i| i.double_annotated) {
        assert_eq!(agreement_rate(queue.items()).unwrap(), 1.0);
    }

    let reopened = ReviewQueue::open(tmp.path().join("review")).unwrap();
    assert_eq!(reopened.items().collect::<Vec<_>>(), queue.items().collect::<Vec<_>>());

    let resolved: Vec<Trace> = traces.values().cloned().collect();
    let discarded = resolved.iter().filter(|t| t.outcome == Outcome::Discarded).count();
    assert_eq!(discarded, 4);
    for t in &resolved {
        assert!(t.steps.iter().all(|s| s.status != StepStatus::Flagged));
    }
    let out_dir = tmp.path().join("export");
    let summary = export_dataset(&resolved, &corpus, &out_dir, 4).unwrap();
    assert_eq!(summary.traces, 16);
    assert_eq!(summary.discarded, 4);
    assert_eq!(summary.trajectories, 16);

    let kept: Vec<&Trace> = resolved.iter().filter(|t| t.outcome != Outcome::Discarded).collect();
    let back = read_trace_dir(&out_dir.join(TRACES_DIR)).unwrap();
    assert_eq!(back.len(), kept.len());
    for (a, b) in kept.iter().zip(&back) {
        assert_eq!(*a, b);
    }
    let trajs = read_trajectory_dir(&out_dir.join(TRAJECTORIES_DIR)).unwrap();
    assert_eq!(trajs, kept.iter().map(|t| project(t)).collect::<Vec<_>>());

    let pairs = read_supervised_dir(&out_dir.join(SUPERVISED_DIR)).unwrap();
    assert_eq!(pairs.len(), summary.supervised_pairs);
    assert_eq!(pairs.len(), kept.len());
    for p in &pairs {
        for d in &p.documents {
            assert_eq!(corpus.document(&d.doc_id).unwrap().text, d.text);
        }
    }

    let again = tmp.path().join("again");
    export_dataset(&resolved, &corpus, &again, 4).unwrap();
    for f in &summary.files {
        let rel = f.strip_prefix(&out_dir).unwrap();
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(again.join(rel)).unwrap(), "{}", rel.display());
    }
}

#[test]
fn flagged_step_records_every_candidate() {
    let (syn, corpus) = world();
    let (_, outs) = run(&syn, &corpus);
    for o in outs.iter().filter(|o| !o.review_drafts.is_empty()) {
        let step = o.trace.steps.iter().find(|s| s.status == StepStatus::Flagged).unwrap();
        assert_eq!(step.role, Role::Judge);
        assert_eq!(step.candidates.len(), 3);
        assert!(step.divergence_score.unwrap() > 0.4);
        assert_eq!(o.review_drafts[0].step_index, step.step_index);
    }
}

#[test]
fn queue_replays_across_snapshot() {
    let (syn, corpus) = world();
    let (cfg, outs) = run(&syn, &corpus);
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("q");
    let mut q = ReviewQueue::open(&dir).unwrap();
    let mut ids = Vec::new();
    for o in &outs {
        for d in &o.review_drafts {
            ids.push(q.enqueue(d.clone(), &cfg.settings.validation).unwrap().item_id);
        }
    }
    for (n, id) in ids.iter().take(6).enumerate() {
        q.decide(id, ReviewDecision::promote(&format!("r{n}"), 0), None).unwrap();
    }
    q.write_snapshot().unwrap();
    for id in ids.iter().skip(6) {
        q.decide(id, ReviewDecision::discard("late"), None).unwrap();
    }

    let mut other = ReviewQueue::open(&dir).unwrap();
    assert_eq!(other.stats(), q.stats());
    let pending: Vec<String> = other.list(Some(ReviewStatus::Pending)).iter().map(|i| i.item_id.clone()).collect();
    for id in &pending {
        for reviewer in ["other", "third"] {
            if other.get(id).unwrap().status == ReviewStatus::Pending {
                other.decide(id, ReviewDecision::discard(reviewer), None).unwrap();
            }
        }
    }
    q.refresh().unwrap();
    assert_eq!(q.items().collect::<Vec<_>>(), other.items().collect::<Vec<_>>());
    assert!(q.items().all(|i| i.status == ReviewStatus::Decided));
    let first = q.get(&ids[0]).unwrap();
    assert_eq!(first.resolution.as_ref().unwrap().verdict, Verdict::Promote);
    assert!(matches!(
        q.decide(&ids[0], ReviewDecision::discard("zzz"), None),
        Err(ValidationError::AlreadyDecided { .. })
    ));
}
