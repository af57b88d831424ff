//! The six pipeline commands. Each loads its inputs (failures are
//! configuration errors, exit 2), does its work (failures are evaluation
//! errors, exit 1), and writes deterministic artifacts under
//! `<out>/<run-id>/`, with timestamps confined to `*.meta.json` sidecars.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use hopeval::dataset::{self, ChainRecord};
use hopeval::edits::{self, BuildOutcome, Edit, Instance};
use hopeval::kg::KnowledgeGraph;
use hopeval::lm::http::{DecodingParams, HttpBackend, PromptLibrary};
use hopeval::lm::oracle::{OracleBase, StochasticRecall};
use hopeval::lm::{EvalContext, LmBackend};
use hopeval::mello::{Mello, MelloTrace, Termination, Verdict};
use hopeval::metrics::{evaluate, render_table, EvalOptions, EvalReport};
use hopeval::retrieval::EditMemory;
use hopeval::rng::sub_stream;
use hopeval::sampler::{self, FactChain, SampleStats};
use hopeval::templates;
use serde::Serialize;

use crate::config::{BackendChoice, RunConfig};
use crate::{config_error, eval_error, CliError, CliResult};

/// Map a library error to exit 2: the inputs were bad.
fn setup<T>(r: hopeval::Result<T>) -> CliResult<T> {
    r.map_err(|e| config_error(e.to_string()))
}

/// Map a library error to exit 1: the inputs loaded, the run failed.
fn run_step<T>(r: hopeval::Result<T>) -> CliResult<T> {
    r.map_err(|e| eval_error(e.to_string()))
}

fn io_error(e: std::io::Error) -> CliError {
    eval_error(format!("i/o: {e}"))
}

fn snapshot_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "snapshot".to_string())
}

fn load_graph(cfg: &RunConfig) -> CliResult<KnowledgeGraph> {
    let triples = cfg
        .triples
        .as_deref()
        .ok_or_else(|| config_error("a graph is required (--triples or config)"))?;
    let relations = cfg
        .relations
        .as_deref()
        .ok_or_else(|| config_error("a relation registry is required (--relations or config)"))?;
    setup(KnowledgeGraph::load(
        triples,
        relations,
        &snapshot_name(triples),
    ))
}

fn load_new_graph(cfg: &RunConfig, command: &str) -> CliResult<KnowledgeGraph> {
    let triples = cfg
        .new_triples
        .as_deref()
        .ok_or_else(|| config_error(format!("`{command}` requires --new-triples")))?;
    let relations = cfg
        .relations
        .as_deref()
        .ok_or_else(|| config_error("a relation registry is required (--relations or config)"))?;
    setup(KnowledgeGraph::load(
        triples,
        relations,
        &snapshot_name(triples),
    ))
}

fn build_backend<'g>(cfg: &RunConfig, g: &'g KnowledgeGraph) -> CliResult<Box<dyn LmBackend + 'g>> {
    match cfg.backend {
        BackendChoice::Oracle => Ok(Box::new(OracleBase::new(g))),
        BackendChoice::OracleStochastic => {
            let seed = cfg.require_seed("backend oracle-stochastic")?;
            Ok(Box::new(StochasticRecall::new(
                OracleBase::new(g),
                cfg.recall_prob,
                sub_stream(seed, "backends"),
            )))
        }
        BackendChoice::Http => {
            let endpoint = cfg
                .endpoint
                .clone()
                .ok_or_else(|| config_error("backend http requires --endpoint"))?;
            let prompts = match &cfg.prompts_dir {
                Some(dir) => setup(PromptLibrary::from_dir(dir))?,
                None => PromptLibrary::builtin(),
            };
            let backend = HttpBackend::with_timeout(
                endpoint,
                prompts,
                DecodingParams::default(),
                Duration::from_secs(cfg.timeout_secs),
            )
            .with_retry(cfg.retries.max(1), Duration::from_millis(cfg.backoff_ms));
            Ok(Box::new(backend))
        }
    }
}

/// `<out>/<run-id>/`, created. The default run id is deterministic
/// (command plus seed) so reruns land in the same place.
fn run_dir(cfg: &RunConfig, command: &str) -> CliResult<PathBuf> {
    let id = cfg.run_id.clone().unwrap_or_else(|| match cfg.seed {
        Some(seed) => format!("{command}-{seed:08x}"),
        None => command.to_string(),
    });
    let dir = cfg.out.join(id);
    std::fs::create_dir_all(&dir).map_err(io_error)?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(io_error)
}

fn write_pretty_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| eval_error(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

/// The only place a wall-clock timestamp is ever written.
fn write_sidecar(dir: &Path, artifact: &str, command: &str) -> CliResult<()> {
    #[derive(Serialize)]
    struct Sidecar<'a> {
        command: &'a str,
        tool_version: &'a str,
        created_unix_ms: u128,
    }
    let created_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    write_pretty_json(
        &dir.join(format!("{artifact}.meta.json")),
        &Sidecar {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            created_unix_ms,
        },
    )
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SampleProvenance {
    seed: u64,
    snapshot: String,
    requested_per_hop: usize,
    delivered: BTreeMap<usize, usize>,
    stats: BTreeMap<usize, SampleStats>,
    /// Hop counts that came up short, with the missing amount.
    shortfall: BTreeMap<usize, usize>,
}

pub fn cmd_sample(cfg: &RunConfig) -> CliResult<()> {
    let g = load_graph(cfg)?;
    let seed = cfg.require_seed("sample")?;
    let backend = build_backend(cfg, &g)?;
    let dir = run_dir(cfg, "sample")?;

    let mut provenance = SampleProvenance {
        seed,
        snapshot: g.snapshot().to_string(),
        requested_per_hop: cfg.count,
        delivered: BTreeMap::new(),
        stats: BTreeMap::new(),
        shortfall: BTreeMap::new(),
    };
    let mut records: Vec<ChainRecord> = Vec::new();
    let mut rng = sub_stream(seed, "sampler");
    for &hops in &cfg.hops {
        let budget = cfg.count.saturating_mul(cfg.sample_budget.max(1));
        let (chains, mut stats) = run_step(sampler::sample_unique_chains(
            &g, hops, cfg.count, &mut rng, budget,
        ))?;
        let mut kept = Vec::new();
        for chain in chains {
            if run_step(sampler::filter_recallable(&g, &chain, backend.as_ref()))? {
                kept.push(chain);
            } else {
                stats.accepted -= 1;
                *stats
                    .rejected
                    .entry("unrecallable".to_string())
                    .or_default() += 1;
            }
        }
        if kept.len() < cfg.count {
            eprintln!(
                "warning: {hops}-hop shortfall: requested {}, delivered {}",
                cfg.count,
                kept.len()
            );
            provenance.shortfall.insert(hops, cfg.count - kept.len());
        }
        provenance.delivered.insert(hops, kept.len());
        provenance.stats.insert(hops, stats);
        records.extend(kept.iter().map(ChainRecord::from_chain));
    }

    let chains_path = dir.join("chains.json");
    run_step(dataset::save_chains(&records, &chains_path))?;
    write_pretty_json(&dir.join("sample_report.json"), &provenance)?;
    write_sidecar(&dir, "chains", "sample")?;
    println!(
        "wrote {} chains to {}",
        records.len(),
        chains_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// edit
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EditProvenance {
    seed: u64,
    snapshot: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    new_snapshot: Option<String>,
    mode: &'static str,
    chains: usize,
    built: usize,
    rejected: BTreeMap<String, usize>,
}

pub fn cmd_edit(cfg: &RunConfig, chains_path: &Path, temporal: bool) -> CliResult<()> {
    let g = load_graph(cfg)?;
    let seed = cfg.require_seed("edit")?;
    let records = setup(dataset::load_chains(chains_path))?;
    let chains: Vec<FactChain> = records
        .iter()
        .map(|r| r.to_chain(&g))
        .collect::<hopeval::Result<_>>()
        .map_err(|e| config_error(format!("chain file {}: {e}", chains_path.display())))?;
    let dir = run_dir(cfg, "edit")?;

    let mut provenance = EditProvenance {
        seed,
        snapshot: g.snapshot().to_string(),
        new_snapshot: None,
        mode: if temporal {
            "temporal"
        } else {
            "counterfactual"
        },
        chains: chains.len(),
        built: 0,
        rejected: BTreeMap::new(),
    };

    let instances: Vec<Instance> = if temporal {
        let new_g = load_new_graph(cfg, "edit --temporal")?;
        provenance.new_snapshot = Some(new_g.snapshot().to_string());
        let relations: Vec<String> = g.relations().map(|m| m.id.clone()).collect();
        let diff = run_step(g.diff_snapshots(&new_g, &relations))?;
        let mut built = Vec::new();
        for chain in &chains {
            match run_step(edits::build_temporal_instance(&g, &new_g, chain, &diff))? {
                BuildOutcome::Built(instance) => built.push(instance),
                BuildOutcome::Rejected(failure) => {
                    *provenance
                        .rejected
                        .entry(failure.key().to_string())
                        .or_default() += 1;
                }
            }
        }
        built
    } else {
        let mut rng = sub_stream(seed, "edits");
        let (built, stats) = run_step(edits::build_instances(
            &g,
            &chains,
            &mut rng,
            cfg.chain_retries,
        ))?;
        provenance.rejected = stats.rejected;
        built
    };
    provenance.built = instances.len();
    if instances.len() < chains.len() {
        eprintln!(
            "warning: {} of {} chains produced no instance",
            chains.len() - instances.len(),
            chains.len()
        );
    }

    let instances_path = dir.join("instances.json");
    run_step(dataset::save_instances(&instances, &instances_path))?;
    write_pretty_json(&dir.join("edit_report.json"), &provenance)?;
    write_sidecar(&dir, "instances", "edit")?;
    println!(
        "wrote {} instances to {}",
        instances.len(),
        instances_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn cmd_eval(cfg: &RunConfig, instances_path: &Path) -> CliResult<()> {
    let g = load_graph(cfg)?;
    let instances = setup(dataset::load_instances(instances_path))?;
    let backend = build_backend(cfg, &g)?;
    let editor = cfg.editor.to_editor();
    let dir = run_dir(cfg, "eval")?;

    let mut reports: Vec<EvalReport> = Vec::new();
    for &k in &cfg.k {
        let opts = EvalOptions::new(k)
            .with_modes(&cfg.modes.iter().map(|m| m.to_mode()).collect::<Vec<_>>())
            .with_retrieval(cfg.retrieval.to_mode())
            .with_max_hops(cfg.max_hops)
            .with_jobs(cfg.jobs);
        let report = match evaluate(&g, backend.as_ref(), &instances, editor, &opts) {
            Ok(report) => report,
            Err(e) => {
                // Earlier k's reports are already on disk.
                if !reports.is_empty() {
                    eprintln!(
                        "partial results: {} of {} reports written under {}",
                        reports.len(),
                        cfg.k.len(),
                        dir.display()
                    );
                }
                return Err(eval_error(format!("k={k}: {e}")));
            }
        };
        let path = dir.join(format!("report_k{k}.json"));
        write_text(&path, &run_step(report.to_json())?)?;
        reports.push(report);
    }
    write_sidecar(&dir, "reports", "eval")?;
    print!("{}", render_table(&reports));
    Ok(())
}

// ---------------------------------------------------------------------------
// mello
// ---------------------------------------------------------------------------

fn print_trace(question: &str, trace: &MelloTrace) {
    println!("Question: {question}");
    for step in &trace.steps {
        println!();
        println!("Subquestion: {}", step.subquestion);
        println!("Generated answer: {}", step.tentative_answer);
        if let Some(statement) = &step.retrieved_statement {
            println!("Retrieved fact: {statement}");
        }
        match step.verdict {
            Verdict::Contradicts => println!("Retrieved fact contradicts generated answer."),
            Verdict::Consistent => {
                println!("Retrieved fact does not contradict generated answer.")
            }
            Verdict::NoMemory => println!("No fact retrieved."),
        }
        println!("Intermediate answer: {}", step.intermediate_answer);
    }
    println!();
    println!("Final answer: {}", trace.final_answer);
}

pub fn cmd_mello(cfg: &RunConfig, question: &str, memory_path: &Path) -> CliResult<()> {
    let g = load_graph(cfg)?;
    let text = std::fs::read_to_string(memory_path)
        .map_err(|e| config_error(format!("cannot read memory {}: {e}", memory_path.display())))?;
    let memory_edits: Vec<Edit> = serde_json::from_str(&text).map_err(|e| {
        config_error(format!(
            "memory file schema: expected a JSON list of edits \
             (objects with subject/relation/old/new): {e}"
        ))
    })?;
    let memory = setup(EditMemory::build(&g, &memory_edits))?;
    let backend = build_backend(cfg, &g)?;
    let dir = run_dir(cfg, "mello")?;

    // Recover the decomposition context from the composed question when it
    // parses; free-text backends work without it.
    let ctx =
        templates::parse_composed_question(&g, question)
            .ok()
            .map(|(head_subject, relations)| EvalContext {
                head_subject,
                relations,
            });

    let trace = Mello::new(backend.as_ref(), &memory)
        .with_retrieval(cfg.retrieval.to_mode())
        .with_max_hops(cfg.max_hops)
        .run(question, ctx.as_ref());

    print_trace(question, &trace);
    let trace_path = dir.join("trace.jsonl");
    let mut file = std::fs::File::create(&trace_path).map_err(io_error)?;
    trace.write_jsonl(&mut file).map_err(io_error)?;
    file.flush().map_err(io_error)?;
    write_sidecar(&dir, "trace", "mello")?;

    if trace.terminated == Termination::BackendError {
        return Err(eval_error(
            trace.error.unwrap_or_else(|| "backend error".to_string()),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

pub fn cmd_stats(instances_path: &Path) -> CliResult<()> {
    let instances = setup(dataset::load_instances(instances_path))?;
    print!("{}", dataset::stats(&instances).to_table());
    Ok(())
}

// ---------------------------------------------------------------------------
// diff
// ---------------------------------------------------------------------------

pub fn cmd_diff(cfg: &RunConfig, relation_filter: &[String]) -> CliResult<()> {
    let old = load_graph(cfg)?;
    let new = load_new_graph(cfg, "diff")?;
    let relations: Vec<String> = if relation_filter.is_empty() {
        old.relations().map(|m| m.id.clone()).collect()
    } else {
        relation_filter.to_vec()
    };
    let dir = run_dir(cfg, "diff")?;
    let diff = run_step(old.diff_snapshots(&new, &relations))?;
    let path = dir.join("edits.json");
    write_pretty_json(&path, &diff)?;
    write_sidecar(&dir, "edits", "diff")?;
    println!("wrote {} edits to {}", diff.len(), path.display());
    Ok(())
}
