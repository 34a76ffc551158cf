//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line with its
//! runtime; the test fails if any criterion fails or overruns its budget.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use agentsim_cli::config::Overrides;
use agentsim_cli::synthetic::{SyntheticOptions, CONFIG_FILE};
use agentsim_cli::{cmd_seed_select, cmd_simulate, cmd_synthetic, cmd_validate, read_manifest, OutputTree, RunStatus};
use agentsim_core::corpus::CorpusError;
use agentsim_core::dataset::{
    export_dataset, read_supervised_dir, read_trace_dir, read_trajectory_dir, SUPERVISED_DIR, TRACES_DIR,
    TRAJECTORIES_DIR,
};
use agentsim_core::metrics::{chi_squared, cohens_d, holm_bonferroni, mann_whitney, seeding_metrics_from_embeddings};
use agentsim_core::seeding::{cluster_queries, novelty, seed_id_for, select_seeds, SeedRecord, SeedingConfig, Strategy};
use agentsim_core::simulation::backend::RuleMatch;
use agentsim_core::simulation::{
    divergence_score, judge_step, project, run_trajectory, AgentAction, Candidate, FixedClock, ModelBackend,
    Observation, Outcome, Role, RunOutput, ScriptedBackend, SimulationConfig, SimulationSettings, Simulator,
    StepStatus, Trace,
};
use agentsim_core::synthetic::{generate, SyntheticCorpus, SyntheticSpec};
use agentsim_core::validation::{summarize_grounding, verify_grounding, ReviewQueue, ValidationConfig};
use agentsim_core::{Bm25Params, Corpus, Document, EmbeddingVector, HashingProvider, Stopwords};
use agentsim_core::EmbeddingProvider;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn criterion(name: &str, budget: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(panic) => Err(panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let elapsed = start.elapsed();
    let result = result.and_then(|()| {
        if elapsed > budget {
            Err(format!("took {elapsed:.2?}, budget {budget:.0?}"))
        } else {
            Ok(())
        }
    });
    let mut out = std::io::stdout().lock();
    match &result {
        Ok(()) => writeln!(out, "PASS {name} ({elapsed:.2?})"),
        Err(why) => writeln!(out, "FAIL {name} ({elapsed:.2?}): {why}"),
    }
    .unwrap();
    result.is_ok()
}

const SEARCH: &str = "Thought: look\nAction: {\"type\":\"search\",\"query\":\"{seed_query}\"}";
const QUOTE: &str =
    "Thought: done\nAction: {\"type\":\"synthesize\",\"answer\":\"{top_doc_words:10}\",\"cited_doc_ids\":[\"{top_doc}\"]}";
const REFUSE: &str = "Thought: thin\nAction: {\"type\":\"abstain\",\"reason\":\"the documents do not say\"}";

fn seed(query: &str, cluster_id: usize, rank: usize) -> SeedRecord {
    SeedRecord {
        seed_id: seed_id_for(query),
        query: query.into(),
        cluster_id,
        novelty: 1.0,
        retrieved_doc_ids: vec![],
        strategy: "random".into(),
        rank,
    }
}

fn synthetic_world(documents: usize, topics: usize, queries: usize, rng_seed: u64) -> (SyntheticCorpus, Corpus) {
    let syn = generate(&SyntheticSpec {
        documents,
        topics,
        queries,
        rng_seed,
        ..SyntheticSpec::default()
    });
    let corpus = Corpus::build(syn.documents.clone(), Stopwords::english(), Bm25Params::default()).unwrap();
    (syn, corpus)
}

fn synthetic_seeds(syn: &SyntheticCorpus) -> Vec<SeedRecord> {
    syn.queries
        .iter()
        .enumerate()
        .map(|(i, q)| seed(q, syn.query_topics[i], i))
        .collect()
}

fn sim_config(analyst: ScriptedBackend, critics: Vec<ScriptedBackend>, settings: SimulationSettings) -> SimulationConfig {
    SimulationConfig::new(
        Arc::new(analyst),
        critics.into_iter().map(|c| Arc::new(c) as Arc<dyn ModelBackend>).collect(),
        settings,
    )
    .with_clock(Arc::new(FixedClock(1_700_000_000_000)))
}

fn approvers() -> Vec<ScriptedBackend> {
    vec![
        ScriptedBackend::new("critic-a").with_responses(["APPROVE"]),
        ScriptedBackend::new("critic-b").with_responses(["APPROVE"]),
    ]
}

fn when_seed(word: &str) -> RuleMatch {
    RuleMatch {
        seed_contains: Some(word.into()),
        ..RuleMatch::default()
    }
}

// Divergence

/// Every assignment of `m` models to `m` action classes. Each class has two
/// surface forms that differ only in case and spacing.
fn divergence_exactness() -> Check {
    let class_action = |class: usize, variant: bool| {
        let text = if variant {
            format!("Topic  {class} History")
        } else {
            format!("topic {class} history")
        };
        match class % 3 {
            0 => AgentAction::search(text),
            1 => AgentAction::abstain(text),
            _ => AgentAction::synthesize(text, &["d1"]),
        }
    };
    let mut checked = 0usize;
    for m in [2usize, 3, 5] {
        let total = m.pow(m as u32);
        for code in 0..total {
            let mut choice = Vec::with_capacity(m);
            let mut c = code;
            for _ in 0..m {
                choice.push(c % m);
                c /= m;
            }
            let mut sizes = vec![0usize; m];
            for &k in &choice {
                sizes[k] += 1;
            }
            let plurality = *sizes.iter().max().unwrap();
            let distinct = sizes.iter().filter(|&&n| n > 0).count();
            let expected = 1.0 - plurality as f64 / m as f64;
            let expect_flag = 10 * (m - plurality) > 4 * m;

            let proposals: Vec<Candidate> = choice
                .iter()
                .enumerate()
                .map(|(i, &k)| Candidate {
                    model_id: format!("m{i}"),
                    action: class_action(k, i % 2 == 1),
                })
                .collect();
            let actions: Vec<&AgentAction> = proposals.iter().map(|c| &c.action).collect();
            let ds = divergence_score(&actions);
            ensure!((ds - expected).abs() <= 1e-12, "m={m} choice={choice:?}: DS {ds} != {expected}");
            let j = judge_step(&proposals, 0.4);
            ensure!((j.divergence_score - expected).abs() <= 1e-12, "judge DS {} != {expected}", j.divergence_score);
            ensure!(
                j.is_flagged() == expect_flag,
                "m={m} choice={choice:?}: flagged={} but DS={expected}",
                j.is_flagged()
            );
            if let agentsim_core::simulation::judge::Verdict::Flagged(cands) = &j.verdict {
                ensure!(cands.len() == distinct, "{} candidates for {distinct} classes", cands.len());
            }
            checked += 1;
        }
    }
    ensure!(checked == 4 + 27 + 3125, "enumerated {checked} assignments");
    Ok(())
}

// Grounding

const WORDS: [&str; 24] = [
    "the", "of", "and", "is", "Nuclear", "fission", "reactor", "uranium", "Chicago", "pile", "1942", "Fermi",
    "critical", "mass", "graphite", "neutron", "it's", "U-235", "test", "Trinity", "desert", "Alamos", "a", "was",
];

fn random_text(rng: &mut ChaCha8Rng, len: usize) -> String {
    let mut out = String::new();
    for i in 0..len {
        if i > 0 {
            out.push_str([" ", ", ", ". ", " -- ", "\n"].choose(rng).unwrap());
        }
        let w = WORDS.choose(rng).unwrap();
        if rng.random_bool(0.2) {
            out.push_str(&w.to_uppercase());
        } else {
            out.push_str(w);
        }
    }
    out
}

/// Lowercased maximal alphanumeric runs that are not stopwords, as a set.
fn oracle_token_set(text: &str, stopwords: &Stopwords) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    let mut cur = String::new();
    for ch in text.chars().chain(std::iter::once(' ')) {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            if !stopwords.contains(&cur) {
                set.insert(cur.clone());
            }
            cur.clear();
        }
    }
    set
}

fn grounding_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let docs: Vec<Document> = (0..20)
        .map(|i| {
            let len = rng.random_range(0..12);
            Document::new(format!("g{i:02}"), random_text(&mut rng, len))
        })
        .filter(|d| !d.text.trim().is_empty())
        .collect();
    let corpus = Corpus::build(docs.clone(), Stopwords::english(), Bm25Params::default()).unwrap();
    let stopwords = corpus.stopwords();

    for pair in 0..50 {
        let len = rng.random_range(0..10);
        let answer = random_text(&mut rng, len);
        let n = rng.random_range(1..4);
        let cited: Vec<&str> = docs
            .choose_multiple(&mut rng, n)
            .map(|d| d.doc_id.as_str())
            .collect();
        let action = AgentAction::synthesize(answer.clone(), &cited);
        let report = verify_grounding(&action, &corpus, stopwords).map_err(|e| e.to_string())?;

        let answer_set = oracle_token_set(&answer, stopwords);
        let mut evidence = BTreeSet::new();
        for id in &cited {
            evidence.extend(oracle_token_set(&corpus.document(id).unwrap().text, stopwords));
        }
        let covered: BTreeSet<String> = answer_set.intersection(&evidence).cloned().collect();
        let uncovered: BTreeSet<String> = answer_set.difference(&evidence).cloned().collect();
        let coverage = if answer_set.is_empty() {
            1.0
        } else {
            covered.len() as f64 / answer_set.len() as f64
        };
        ensure!(report.covered_tokens == covered, "pair {pair}: covered {:?} != {covered:?}", report.covered_tokens);
        ensure!(report.uncovered_tokens == uncovered, "pair {pair}: uncovered differ");
        ensure!(report.token_coverage == coverage, "pair {pair}: coverage {} != {coverage}", report.token_coverage);
        ensure!(report.vacuous == answer_set.is_empty(), "pair {pair}: vacuous flag");
    }

    // Answers quote their top document; seeds of two topics refuse instead.
    let (syn, corpus) = synthetic_world(300, 6, 30, 5);
    let mut analyst = ScriptedBackend::new("analyst");
    for vocab in syn.vocabularies.iter().take(2) {
        analyst = analyst.with_rule(
            RuleMatch {
                min_cycle: Some(1),
                ..when_seed(&vocab[0])
            },
            REFUSE,
        );
    }
    let analyst = analyst.with_responses([SEARCH, QUOTE]);
    let cfg = sim_config(analyst, approvers(), SimulationSettings::default());
    let sim = Simulator::new(&corpus, &cfg).map_err(|e| e.to_string())?;
    let outs = sim.run_all(&sim.jobs(&synthetic_seeds(&syn)));
    let mut reports = Vec::new();
    for o in &outs {
        let last = o.trace.steps.iter().rev().find(|s| s.executed && s.action.is_terminal()).unwrap();
        reports.push(verify_grounding(&last.action, &corpus, corpus.stopwords()).map_err(|e| e.to_string())?);
    }
    let summary = summarize_grounding(&reports, ValidationConfig::default().grounding_threshold);
    let answered = outs.iter().filter(|o| o.trace.outcome == Outcome::Answered).count();
    let abstained = outs.iter().filter(|o| o.trace.outcome == Outcome::Abstained).count();
    ensure!(answered > 0 && abstained > 0, "need both answers and refusals, got {answered}/{abstained}");
    ensure!(summary.refusals == abstained, "refusals {} != {abstained}", summary.refusals);
    ensure!(summary.substantive == answered, "substantive {} != {answered}", summary.substantive);
    ensure!(summary.grounding_rate == Some(1.0), "grounding rate {:?}", summary.grounding_rate);
    Ok(())
}

// Seeding coverage

fn seeding_coverage() -> Check {
    let (syn, corpus) = synthetic_world(2000, 20, 300, 0);
    let provider = HashingProvider::default();
    let mut rows = Vec::new();
    for run in 0..5u64 {
        let mut per = Vec::new();
        for strategy in [Strategy::CorpusAware, Strategy::Random] {
            let cfg = SeedingConfig {
                clusters: 20,
                strategy,
                rng_seed: run,
                ..SeedingConfig::with_budget(50)
            };
            let sel = select_seeds(&syn.queries, &corpus, &cfg, &provider).map_err(|e| e.to_string())?;
            ensure!(sel.seeds.len() == 50, "{strategy} run {run}: {} seeds", sel.seeds.len());
            let queries: Vec<String> = sel.seeds.iter().map(|s| s.query.clone()).collect();
            let embs: Vec<EmbeddingVector> = sel.state.selected.iter().map(|&i| sel.embeddings[i].clone()).collect();
            let m = seeding_metrics_from_embeddings(&queries, &embs, &sel.assignment, &corpus).map_err(|e| e.to_string())?;
            per.push((m.cluster_coverage, m.document_redundancy));
        }
        rows.push((per[0], per[1]));
    }
    for (run, ((ca_cov, _), _)) in rows.iter().enumerate() {
        ensure!(*ca_cov == 1.0, "corpus_aware coverage {ca_cov} on run {run}");
    }
    let random_mean = rows.iter().map(|(_, (c, _))| c).sum::<f64>() / rows.len() as f64;
    ensure!(random_mean < 1.0, "random mean coverage {random_mean}");
    let wins = rows.iter().filter(|((_, ca), (_, rnd))| ca <= rnd).count();
    ensure!(wins >= 4, "corpus_aware redundancy <= random in only {wins}/5 runs: {rows:?}");
    Ok(())
}

// Selection oracle

struct OracleRun {
    order: Vec<String>,
    novelty: Vec<f64>,
}

fn footprint(corpus: &Corpus, query: &str, depth: usize) -> Vec<String> {
    match corpus.retrieve(query, depth) {
        Ok(r) => r.hits.into_iter().map(|h| h.doc_id).collect(),
        Err(CorpusError::EmptyQuery(_)) => Vec::new(),
        Err(e) => panic!("{e}"),
    }
}

fn dot(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

/// Literal transcription of the selection loop.
fn oracle_select(pool: &[String], embeddings: &[EmbeddingVector], labels: &[usize], k: usize, corpus: &Corpus, cfg: &SeedingConfig) -> OracleRun {
    let footprints: Vec<Vec<String>> = pool.iter().map(|q| footprint(corpus, q, cfg.seed_retrieval_depth)).collect();
    let budget = cfg.budget.min(pool.len());
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut selected: Vec<usize> = Vec::new();
    let mut novelties = Vec::new();
    let mut coverage = vec![0usize; k];
    let mut taken = vec![false; pool.len()];
    let mut failed_tau = vec![false; pool.len()];

    while selected.len() < budget {
        // Line: choose the active cluster with the least coverage.
        let mut target = None;
        for c in 0..k {
            let has_candidates = (0..pool.len()).any(|q| labels[q] == c && !taken[q]);
            if !has_candidates {
                continue;
            }
            match target {
                None => target = Some(c),
                Some(t) if coverage[c] < coverage[t] => target = Some(c),
                _ => {}
            }
        }
        let Some(c) = target else { break };
        // Line: candidates of that cluster with their novelty.
        let candidates: Vec<usize> = (0..pool.len()).filter(|&q| labels[q] == c && !taken[q]).collect();
        let nov: BTreeMap<usize, f64> = candidates
            .iter()
            .map(|&q| (q, novelty(footprints[q].iter().map(String::as_str), &seen)))
            .collect();
        // Line: keep those above the threshold.
        let mut filtered = Vec::new();
        for &q in &candidates {
            if failed_tau[q] || nov[&q] <= cfg.tau {
                failed_tau[q] = true;
            } else {
                filtered.push(q);
            }
        }
        // Line: otherwise fall back to the single most novel candidate.
        if filtered.is_empty() {
            let mut best = candidates[0];
            for &q in &candidates[1..] {
                if nov[&q] > nov[&best] || (nov[&q] == nov[&best] && pool[q] < pool[best]) {
                    best = q;
                }
            }
            filtered.push(best);
        }
        // Line: MMR over the filtered set.
        let mut pick: Option<(usize, f64)> = None;
        for &q in &filtered {
            let mut max_sim = 0.0;
            for (n, &s) in selected.iter().enumerate() {
                let sim = dot(&embeddings[q], &embeddings[s]);
                if n == 0 || sim > max_sim {
                    max_sim = sim;
                }
            }
            let score = cfg.lambda * nov[&q] - (1.0 - cfg.lambda) * max_sim;
            pick = match pick {
                None => Some((q, score)),
                Some((b, bs)) if score > bs || (score == bs && pool[q] < pool[b]) => Some((q, score)),
                keep => keep,
            };
        }
        let (q, _) = pick.unwrap();
        novelties.push(nov[&q]);
        selected.push(q);
        taken[q] = true;
        coverage[c] += 1;
        seen.extend(footprints[q].iter().cloned());
    }
    OracleRun {
        order: selected.iter().map(|&q| pool[q].clone()).collect(),
        novelty: novelties,
    }
}

fn selection_oracle() -> Check {
    let provider = HashingProvider::default();
    let mut instances = 0;
    for (n, (topics, queries, tau, lambda, depth)) in [
        (2usize, 12usize, 0.4, 0.7, 10usize),
        (3, 20, 0.0, 0.7, 10),
        (4, 30, 0.4, 0.7, 10),
        (4, 30, 0.6, 0.3, 5),
        (3, 24, 0.9, 1.0, 10),
        (2, 30, 0.2, 0.0, 3),
        (4, 16, 0.5, 0.5, 20),
        (1, 10, 0.4, 0.7, 10),
    ]
    .into_iter()
    .enumerate()
    {
        for rng_seed in 0..3u64 {
            let syn = generate(&SyntheticSpec {
                documents: 40 * topics,
                topics,
                queries,
                query_words: 3,
                rng_seed: 100 + n as u64 * 10 + rng_seed,
                ..SyntheticSpec::default()
            });
            let corpus = Corpus::build(syn.documents.clone(), Stopwords::english(), Bm25Params::default()).unwrap();
            for budget in [1, topics + 1, queries / 2, queries] {
                let cfg = SeedingConfig {
                    clusters: topics.min(4),
                    tau,
                    lambda,
                    budget,
                    strategy: Strategy::CorpusAware,
                    seed_retrieval_depth: depth,
                    rng_seed,
                };
                let sel = select_seeds(&syn.queries, &corpus, &cfg, &provider).map_err(|e| e.to_string())?;
                let embeddings = provider.embed(&sel.queries).map_err(|e| e.to_string())?;
                let clustering = cluster_queries(&embeddings, cfg.clusters, rng_seed);
                ensure!(clustering.labels == sel.assignment.labels, "clustering differs");
                let oracle = oracle_select(&sel.queries, &embeddings, &clustering.labels, clustering.k(), &corpus, &cfg);
                let got: Vec<String> = sel.seeds.iter().map(|s| s.query.clone()).collect();
                ensure!(
                    got == oracle.order,
                    "instance {n}/{rng_seed} budget {budget}: order {got:?} != {:?}",
                    oracle.order
                );
                let nov: Vec<f64> = sel.seeds.iter().map(|s| s.novelty).collect();
                ensure!(nov == oracle.novelty, "instance {n}/{rng_seed} budget {budget}: novelty differs");
                instances += 1;
            }
        }
    }
    ensure!(instances == 96, "ran {instances} instances");
    Ok(())
}

// Simulation

fn trace_bytes(outs: &[RunOutput]) -> Vec<Vec<u8>> {
    outs.iter().map(|o| serde_json::to_vec(&o.trace).unwrap()).collect()
}

fn small_corpus() -> Corpus {
    Corpus::build(
        vec![
            Document::new("d1", "The Manhattan Project produced the first nuclear weapons during World War II."),
            Document::new("d2", "Los Alamos laboratory was directed by J. Robert Oppenheimer."),
            Document::new("d3", "The Trinity test was the first detonation of a nuclear device in 1945."),
        ],
        Stopwords::english(),
        Bm25Params::default(),
    )
    .unwrap()
}

fn reretrieval_steps(answer: &str) -> Result<(usize, f64), String> {
    let synth = format!("Thought: t\nAction: {{\"type\":\"synthesize\",\"answer\":\"{answer}\",\"cited_doc_ids\":[\"d1\"]}}");
    let analyst = ScriptedBackend::new("analyst").with_responses([SEARCH.to_string(), synth]);
    let cfg = sim_config(analyst, approvers(), SimulationSettings::default());
    let out = run_trajectory(&seed("manhattan project", 0, 0), 0, &small_corpus(), &cfg).map_err(|e| e.to_string())?;
    let auto = out
        .trace
        .steps
        .iter()
        .filter(|s| s.role == Role::System && s.status == StepStatus::AutoReretrieved)
        .count();
    let confidence = out
        .trace
        .steps
        .iter()
        .find_map(|s| s.grounding_confidence)
        .ok_or("no grounding confidence recorded")?;
    Ok((auto, confidence))
}

fn simulation_bounds() -> Check {
    let (syn, corpus) = synthetic_world(400, 8, 40, 3);
    // Topic 1 seeds never stop searching; topic 2 seeds draw dissent.
    let analyst = ScriptedBackend::new("analyst")
        .with_rule(when_seed(&syn.vocabularies[1][0]), SEARCH)
        .with_responses([SEARCH, QUOTE]);
    let dissent = |id: &str, angle: &str| {
        ScriptedBackend::new(id)
            .with_rule(
                RuleMatch {
                    cycle: Some(0),
                    ..when_seed(&syn.vocabularies[2][0])
                },
                format!("Thought: t\nAction: {{\"type\":\"search\",\"query\":\"{{seed_query}} {angle}\"}}"),
            )
            .with_responses(["APPROVE"])
    };
    let settings = SimulationSettings {
        rng_seed: 7,
        parallelism: 4,
        ..SimulationSettings::default()
    };
    let cfg = sim_config(analyst, vec![dissent("critic-a", "origins"), dissent("critic-b", "timeline")], settings);
    let seeds = synthetic_seeds(&syn);
    let first = {
        let sim = Simulator::new(&corpus, &cfg).map_err(|e| e.to_string())?;
        sim.run_all(&sim.jobs(&seeds))
    };
    let second = {
        let sim = Simulator::new(&corpus, &cfg).map_err(|e| e.to_string())?;
        sim.run_all(&sim.jobs(&seeds))
    };
    ensure!(trace_bytes(&first) == trace_bytes(&second), "traces differ between identical runs");

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let exportable = |outs: &[RunOutput]| -> Vec<Trace> {
        outs.iter().filter(|o| !o.trace.has_pending_review()).map(|o| o.trace.clone()).collect()
    };
    let a = export_dataset(&exportable(&first), &corpus, &tmp.path().join("a"), 16).map_err(|e| e.to_string())?;
    export_dataset(&exportable(&second), &corpus, &tmp.path().join("b"), 16).map_err(|e| e.to_string())?;
    for f in &a.files {
        let rel = f.strip_prefix(tmp.path().join("a")).unwrap();
        let other = tmp.path().join("b").join(rel);
        ensure!(std::fs::read(f).unwrap() == std::fs::read(&other).unwrap(), "{} differs", rel.display());
    }

    let max = first.iter().map(|o| o.trace.cycles()).max().unwrap_or(0);
    ensure!(max <= 7, "a trace ran {max} analyst cycles");
    ensure!(max == 7, "the never-answering seeds should reach the cap, got {max}");
    ensure!(first.iter().any(|o| !o.review_drafts.is_empty()), "no flagged step in the dissent topic");

    // 1 of 4 content tokens covered; then 3 of 10.
    let (auto, conf) = reretrieval_steps("manhattan zebra quokka axolotl")?;
    ensure!(conf == 0.25, "coverage {conf}, expected 0.25");
    ensure!(auto >= 1, "coverage 0.25 did not re-retrieve");
    let (auto, conf) = reretrieval_steps("manhattan project nuclear alpha bravo charlie delta echo foxtrot golf")?;
    ensure!((conf - 0.3).abs() < 1e-12, "coverage {conf}, expected 0.30");
    ensure!(auto == 0, "coverage 0.30 re-retrieved {auto} times");
    Ok(())
}

// Statistics

fn u_by_pairs(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

fn textbook_d(a: &[f64], b: &[f64]) -> f64 {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let ss = |x: &[f64]| {
        let m = mean(x);
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
    };
    let pooled = ((ss(a) + ss(b)) / (a.len() + b.len() - 2) as f64).sqrt();
    (mean(a) - mean(b)).abs() / pooled
}

fn textbook_holm(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let mut sorted: Vec<(f64, usize)> = p.iter().copied().zip(0..).collect();
    sorted.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
    let mut reject = vec![false; m];
    for (rank, (pv, i)) in sorted.into_iter().enumerate() {
        if pv > alpha / (m - rank) as f64 {
            break;
        }
        reject[i] = true;
    }
    reject
}

fn textbook_chi(table: &[Vec<f64>]) -> (f64, f64) {
    let r = table.len();
    let c = table[0].len();
    let n: f64 = table.iter().flatten().sum();
    let mut chi = 0.0;
    for i in 0..r {
        for j in 0..c {
            let row: f64 = table[i].iter().sum();
            let col: f64 = table.iter().map(|t| t[j]).sum();
            let e = row * col / n;
            chi += (table[i][j] - e).powi(2) / e;
        }
    }
    (chi, (chi / (n * (r.min(c) - 1) as f64)).sqrt())
}

fn statistics_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for sample in 0..20 {
        let n1 = rng.random_range(3..12);
        let n2 = rng.random_range(3..12);
        // Half-integers on a short range force ties.
        let a: Vec<f64> = (0..n1).map(|_| rng.random_range(0..16) as f64 / 2.0).collect();
        let b: Vec<f64> = (0..n2).map(|_| rng.random_range(2..20) as f64 / 2.0).collect();
        let mw = mann_whitney(&a, &b).map_err(|e| e.to_string())?;
        let u1 = u_by_pairs(&a, &b);
        let u2 = u_by_pairs(&b, &a);
        ensure!(mw.u1 == u1, "sample {sample}: U1 {} != {u1}", mw.u1);
        ensure!(mw.u == u1.min(u2), "sample {sample}: U {} != {}", mw.u, u1.min(u2));
        ensure!(u1 + u2 == (n1 * n2) as f64, "sample {sample}: U1 + U2");
        let d = cohens_d(&a, &b).map_err(|e| e.to_string())?;
        let expect = textbook_d(&a, &b);
        ensure!((d - expect).abs() <= 1e-9, "sample {sample}: d {d} != {expect}");

        let m = rng.random_range(1..9);
        let alpha = [0.01, 0.05, 0.1][sample % 3];
        let mut p: Vec<f64> = (0..m).map(|_| rng.random_range(0..40) as f64 / 1000.0).collect();
        // Exact boundary and a tie.
        p[0] = alpha / m as f64;
        if m > 2 {
            p[2] = p[1];
        }
        let got = holm_bonferroni(&p, alpha);
        let want = textbook_holm(&p, alpha);
        ensure!(got == want, "sample {sample}: holm {got:?} != {want:?} for {p:?}");

        let rows = rng.random_range(2..5);
        let cols = rng.random_range(2..6);
        let table: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(1..30) as f64).collect())
            .collect();
        let t = chi_squared(&table).map_err(|e| e.to_string())?;
        let (chi, v) = textbook_chi(&table);
        ensure!((t.statistic - chi).abs() <= 1e-9, "sample {sample}: chi {} != {chi}", t.statistic);
        ensure!((t.cramers_v - v).abs() <= 1e-9, "sample {sample}: V {} != {v}", t.cramers_v);
        ensure!(t.dof == (rows - 1) * (cols - 1), "sample {sample}: dof");
    }
    // Reference p-values from scipy.stats (mannwhitneyu asymptotic, chi2_contingency uncorrected).
    let mw = mann_whitney(&[1.2, 3.4, 2.2, 5.0, 5.0, 0.7, 3.3], &[4.1, 5.0, 6.2, 3.4, 7.7, 8.1]).unwrap();
    ensure!((mw.p - 0.030948989790008933).abs() <= 1e-9, "mann-whitney p {}", mw.p);
    let t = chi_squared(&[vec![12.0, 5.0, 9.0], vec![7.0, 14.0, 3.0]]).unwrap();
    ensure!((t.p - 0.014174882222918836).abs() <= 1e-9, "chi-squared p {}", t.p);
    Ok(())
}

// Dataset round trip

fn format_round_trip() -> Check {
    let (syn, corpus) = synthetic_world(300, 6, 36, 9);
    // Topic 0 seeds hit a backend error on the second call; topic 1 seeds refuse.
    let analyst = ScriptedBackend::new("analyst")
        .with_rule(
            RuleMatch {
                cycle: Some(1),
                ..when_seed(&syn.vocabularies[0][0])
            },
            "!error: quota exhausted",
        )
        .with_rule(
            RuleMatch {
                cycle: Some(1),
                ..when_seed(&syn.vocabularies[1][0])
            },
            REFUSE,
        )
        .with_responses([
            SEARCH,
            "Thought: order\nAction: {\"type\":\"rerank\",\"doc_ids\":[\"{top_doc}\"]}",
            QUOTE,
        ]);
    let cfg = sim_config(analyst, approvers(), SimulationSettings::default());
    let sim = Simulator::new(&corpus, &cfg).map_err(|e| e.to_string())?;
    let traces: Vec<Trace> = sim.run_all(&sim.jobs(&synthetic_seeds(&syn))).into_iter().map(|o| o.trace).collect();
    let discarded: BTreeSet<&str> = traces
        .iter()
        .filter(|t| t.outcome == Outcome::Discarded)
        .map(|t| t.trace_id.as_str())
        .collect();
    ensure!(!discarded.is_empty(), "no discarded traces in the fixture");
    ensure!(traces.iter().any(|t| t.outcome == Outcome::Abstained), "no refusals in the fixture");

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path();
    let summary = export_dataset(&traces, &corpus, out, 7).map_err(|e| e.to_string())?;
    ensure!(summary.discarded == discarded.len(), "summary counts {} discarded", summary.discarded);
    let kept: Vec<&Trace> = traces.iter().filter(|t| t.outcome != Outcome::Discarded).collect();

    let back = read_trace_dir(&out.join(TRACES_DIR)).map_err(|e| e.to_string())?;
    ensure!(back.len() == kept.len(), "{} traces read back, {} written", back.len(), kept.len());
    for (a, b) in kept.iter().zip(&back) {
        ensure!(**a == *b, "trace {} changed in the round trip", a.trace_id);
    }
    let trajectories = read_trajectory_dir(&out.join(TRAJECTORIES_DIR)).map_err(|e| e.to_string())?;
    let expected: Vec<_> = kept.iter().map(|t| project(t)).collect();
    ensure!(trajectories == expected, "trajectories changed in the round trip");
    let pairs = read_supervised_dir(&out.join(SUPERVISED_DIR)).map_err(|e| e.to_string())?;
    ensure!(pairs.len() == summary.supervised_pairs && !pairs.is_empty(), "{} supervised pairs", pairs.len());

    let mut ids: Vec<String> = Vec::new();
    for t in &back {
        ensure!(!discarded.contains(t.trace_id.as_str()), "discarded trace {} exported", t.trace_id);
        for s in &t.steps {
            ids.extend(s.action.referenced_doc_ids().iter().cloned());
            if let Some(Observation::Retrieval { result }) = &s.observation {
                ids.extend(result.hits.iter().map(|h| h.doc_id.clone()));
            }
        }
    }
    for t in &trajectories {
        ensure!(!discarded.contains(t.trace_id.as_str()), "discarded trajectory {} exported", t.trace_id);
        ids.extend(t.tool_calls.iter().flat_map(|c| c.doc_ids.iter().cloned()));
    }
    for p in &pairs {
        ensure!(!discarded.contains(p.source_trace_id.as_str()), "discarded pair {} exported", p.source_trace_id);
        for d in &p.documents {
            let doc = corpus.document(&d.doc_id).ok_or_else(|| format!("{} does not resolve", d.doc_id))?;
            ensure!(doc.text == d.text, "{} text differs from the corpus", d.doc_id);
        }
    }
    ensure!(!ids.is_empty(), "no doc ids exported");
    for id in &ids {
        ensure!(corpus.contains(id), "exported doc id {id} does not resolve");
    }
    Ok(())
}

// End to end

fn end_to_end(dir: &Path) -> Check {
    let options = SyntheticOptions {
        spec: SyntheticSpec {
            documents: 400,
            topics: 8,
            queries: 80,
            rng_seed: 1,
            ..SyntheticSpec::default()
        },
        budget: 16,
        clusters: 8,
    };
    cmd_synthetic(dir, &options).map_err(|e| e.to_string())?;
    let config = dir.join(CONFIG_FILE);
    let overrides = Overrides::default();
    let warnings = cmd_validate(&config, &overrides, false).map_err(|e| e.to_string())?;
    ensure!(warnings.iter().all(|d| !d.is_error()), "validate reported errors");
    let seeds = cmd_seed_select(&config, &overrides).map_err(|e| e.to_string())?;
    ensure!(seeds.seeds == 16, "{} seeds selected", seeds.seeds);

    let first = cmd_simulate(&config, &overrides, None).map_err(|e| e.to_string())?;
    ensure!(first.executed == first.jobs && first.jobs == 16, "executed {} of {} jobs", first.executed, first.jobs);
    ensure!(first.failed.is_empty(), "{} jobs failed", first.failed.len());
    ensure!(first.flagged_items >= 1, "no flagged review items");
    ensure!(first.auto_reretrieved_steps >= 1, "no auto re-retrieved steps");

    let tree = OutputTree::new(dir.join("out"));
    let queue = ReviewQueue::open(tree.review()).map_err(|e| e.to_string())?;
    ensure!(queue.len() == first.flagged_items, "queue holds {} items", queue.len());
    let manifest = read_manifest(&tree.manifest()).map_err(|e| e.to_string())?;
    let seed_records = agentsim_core::seeding::read_seeds(&tree.seeds()).map_err(|e| e.to_string())?;
    for s in &seed_records {
        let id = agentsim_core::simulation::engine::trace_id_for(s, 0);
        let entry = manifest.get(&id).ok_or_else(|| format!("{id} missing from the manifest"))?;
        ensure!(entry.status == RunStatus::Completed, "{id} is {:?}", entry.status);
        ensure!(tree.runs().join(format!("{id}.json")).is_file(), "run file for {id} missing");
    }
    ensure!(manifest.len() == seed_records.len(), "manifest has {} entries", manifest.len());

    let again = cmd_simulate(&config, &overrides, None).map_err(|e| e.to_string())?;
    ensure!(again.executed == 0, "rerun executed {} seeds", again.executed);
    ensure!(again.skipped == 16, "rerun skipped {}", again.skipped);
    Ok(())
}

#[test]
fn primary_acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let secs = Duration::from_secs;
    let results = [
        criterion("divergence formula exactness", secs(1), divergence_exactness),
        criterion("grounding metric exactness", secs(5), grounding_exactness),
        criterion("seeding coverage property", secs(120), seeding_coverage),
        criterion("selection oracle equivalence", secs(10), selection_oracle),
        criterion("simulation determinism and bounds", secs(30), simulation_bounds),
        criterion("statistics correctness", secs(5), statistics_correctness),
        criterion("format round trip", secs(10), format_round_trip),
        criterion("end to end", secs(60), || end_to_end(tmp.path())),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
