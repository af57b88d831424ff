//! Scoring: edit-wise recall of individual rewrites, instance-wise recall of
//! whole fact chains, multi-hop accuracy over the question paraphrases, and a
//! batch evaluation harness that applies edits in groups of `k` and
//! micro-averages the results into an [`EvalReport`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::edits::{build_edit_batch, Edit, Instance};
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::lm::oracle::OracleHardEdit;
use crate::lm::{AnswerMode, EvalContext, LmBackend};
use crate::mello::{Mello, RetrievalMode, DEFAULT_MAX_HOPS};
use crate::retrieval::EditMemory;
use crate::templates::{answers_match, render_cloze};

/// Which answer lane a metric scores against: the graph's own facts (`Pre`)
/// or the rewired chain and its edited answer (`Post`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pre,
    Post,
}

/// Editing strategy under evaluation.
///
/// * `None` — no edits are applied; the post lane repeats the pre lane and
///   serves as a sanity baseline.
/// * `HardEdit` — a simulated perfectly-edited model: single-hop recall
///   reflects every edit, multi-hop traversal still follows the unedited
///   graph (the propagation-failure regime).
/// * `Mello` — the memory-guided loop: edits live in an [`EditMemory`] and
///   the base model answers through decomposition and self-checking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Editor {
    None,
    HardEdit,
    Mello,
}

impl Editor {
    pub fn as_str(&self) -> &'static str {
        match self {
            Editor::None => "none",
            Editor::HardEdit => "hard-edit",
            Editor::Mello => "mello",
        }
    }
}

/// Knobs for [`evaluate`]. `k` is the edit batch size; `modes` selects which
/// answer modes the multi-hop lanes run; `jobs` caps worker threads (1 keeps
/// evaluation fully sequential); `retrieval` and `max_hops` configure the
/// memory loop when the editor is [`Editor::Mello`].
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub k: usize,
    pub modes: Vec<AnswerMode>,
    pub jobs: usize,
    pub retrieval: RetrievalMode,
    pub max_hops: usize,
}

impl EvalOptions {
    pub fn new(k: usize) -> Self {
        EvalOptions {
            k,
            modes: vec![AnswerMode::Direct],
            jobs: 1,
            retrieval: RetrievalMode::Cosine,
            max_hops: DEFAULT_MAX_HOPS,
        }
    }

    pub fn with_modes(mut self, modes: &[AnswerMode]) -> Self {
        self.modes = modes.to_vec();
        self
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    pub fn with_retrieval(mut self, retrieval: RetrievalMode) -> Self {
        self.retrieval = retrieval;
        self
    }

    pub fn with_max_hops(mut self, max_hops: usize) -> Self {
        assert!(max_hops >= 1, "max_hops must be at least 1");
        self.max_hops = max_hops;
        self
    }
}

/// A ratio per answer mode; a slot is `None` when that mode was not run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeRatios {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cot: Option<f64>,
}

/// Multi-hop accuracy split by chain length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopBreakdown {
    pub hops: usize,
    pub count: usize,
    pub multihop_pre: ModeRatios,
    pub multihop_post: ModeRatios,
}

/// Micro-averaged scores for one batch size `k`.
///
/// `edit_wise` and `instance_wise_post` are `None` for [`Editor::Mello`]:
/// the loop answers composed questions, so single-hop cloze recall is not
/// defined for it. For [`Editor::None`] the post lane repeats the pre lane
/// against the unedited answers. All ratios are exact hit/total quotients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub editor: Editor,
    pub backend: String,
    pub k: usize,
    pub batch_count: usize,
    pub instance_count: usize,
    /// Edits applied, summed over batch unions.
    pub edit_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edit_wise: Option<f64>,
    pub instance_wise_pre: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance_wise_post: Option<f64>,
    pub multihop_pre: ModeRatios,
    pub multihop_post: ModeRatios,
    pub per_hop: Vec<HopBreakdown>,
    /// Hash of the evaluation inputs (graph snapshot, backend, editor,
    /// batch size, modes, retrieval settings, instance ids). Worker count
    /// is excluded: it must not affect results.
    pub fingerprint: String,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        render_table(std::slice::from_ref(self))
    }
}

fn fmt_ratio(r: Option<f64>) -> String {
    match r {
        Some(v) => format!("{v:.3}"),
        None => "-".to_string(),
    }
}

/// Fixed-width summary table; one pre-edit row and one post-edit row per
/// report. Columns: Edit-wise, Instance-wise, Multi-hop, Multi-hop (CoT).
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>6} {:>10} {:>14} {:>10} {:>16}\n",
        "lane", "k", "Edit-wise", "Instance-wise", "Multi-hop", "Multi-hop (CoT)"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<12} {:>6} {:>10} {:>14} {:>10} {:>16}\n",
            "pre-edit",
            "-",
            "-",
            fmt_ratio(Some(r.instance_wise_pre)),
            fmt_ratio(r.multihop_pre.direct),
            fmt_ratio(r.multihop_pre.cot),
        ));
        out.push_str(&format!(
            "{:<12} {:>6} {:>10} {:>14} {:>10} {:>16}\n",
            r.editor.as_str(),
            r.k,
            fmt_ratio(r.edit_wise),
            fmt_ratio(r.instance_wise_post),
            fmt_ratio(r.multihop_post.direct),
            fmt_ratio(r.multihop_post.cot),
        ));
    }
    out
}

/// Count how many edits the model recalls: for each edit, pose the cloze
/// prompt for (subject, relation) and accept only the edited object's label.
fn edit_hits(model: &dyn LmBackend, g: &KnowledgeGraph, edits: &[Edit]) -> Result<(usize, usize)> {
    let mut hits = 0;
    for e in edits {
        let prompt = render_cloze(g, &e.relation, &e.subject)?;
        let answer = model.answer_cloze(prompt.as_str())?;
        if answers_match(&answer, g.label(&e.new), &[]) {
            hits += 1;
        }
    }
    Ok((hits, edits.len()))
}

/// Fraction of `edits` the model states back correctly, each queried as a
/// single-hop cloze prompt. Errors on an empty slice.
pub fn edit_wise(model: &dyn LmBackend, g: &KnowledgeGraph, edits: &[Edit]) -> Result<f64> {
    if edits.is_empty() {
        return Err(Error::EmptyEdits);
    }
    let (hits, total) = edit_hits(model, g, edits)?;
    Ok(hits as f64 / total as f64)
}

/// True iff the model recalls *every* hop of the instance's chain — the
/// original chain in the pre phase, the rewired chain in the post phase.
/// A hop whose subject the graph cannot even render (it only exists in a
/// newer snapshot) counts as unrecallable rather than an error.
pub fn instance_wise(
    model: &dyn LmBackend,
    g: &KnowledgeGraph,
    inst: &Instance,
    phase: Phase,
) -> Result<bool> {
    let chain = match phase {
        Phase::Pre => &inst.orig_triples,
        Phase::Post => &inst.new_triples,
    };
    for hop in chain {
        let prompt = match render_cloze(g, &hop.relation, &hop.subject) {
            Ok(p) => p,
            Err(Error::MissingLabel(_)) => return Ok(false),
            Err(e) => return Err(e),
        };
        let answer = model.answer_cloze(prompt.as_str())?;
        if !answers_match(&answer, g.label(&hop.object), &[]) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// True iff *any* of the instance's question paraphrases yields the target
/// answer: the unedited answer (plus aliases) in the pre phase, the edited
/// one in the post phase. Each question is asked independently.
pub fn multi_hop(
    model: &dyn LmBackend,
    inst: &Instance,
    phase: Phase,
    mode: AnswerMode,
) -> Result<bool> {
    let (gold, aliases) = match phase {
        Phase::Pre => (&inst.answer, &inst.answer_aliases),
        Phase::Post => (&inst.new_answer, &inst.new_answer_aliases),
    };
    let ctx = EvalContext::for_instance(inst);
    for q in &inst.questions {
        let answer = model.answer_multihop(q, mode, Some(&ctx))?;
        if answers_match(&answer, gold, aliases) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Post-lane view for one batch.
enum Lane<'a> {
    /// No edits: score the base model against the unedited answers again.
    Base,
    /// A per-batch edited model.
    Hard(&'a dyn LmBackend),
    /// The memory loop over the batch's edit union, driven by the base model.
    Memory(&'a EditMemory),
}

#[derive(Clone, Copy, Default)]
struct ModeFlags {
    direct: Option<bool>,
    cot: Option<bool>,
}

impl ModeFlags {
    fn set(&mut self, mode: AnswerMode, value: bool) {
        match mode {
            AnswerMode::Direct => self.direct = Some(value),
            AnswerMode::Cot => self.cot = Some(value),
        }
    }
}

struct InstanceOutcome {
    hops: usize,
    iw_pre: bool,
    iw_post: Option<bool>,
    mh_pre: ModeFlags,
    mh_post: ModeFlags,
}

fn eval_instance(
    g: &KnowledgeGraph,
    base: &dyn LmBackend,
    lane: &Lane<'_>,
    opts: &EvalOptions,
    inst: &Instance,
) -> Result<InstanceOutcome> {
    let iw_pre = instance_wise(base, g, inst, Phase::Pre)?;
    let mut mh_pre = ModeFlags::default();
    for &mode in &opts.modes {
        mh_pre.set(mode, multi_hop(base, inst, Phase::Pre, mode)?);
    }
    let (iw_post, mh_post) = match lane {
        Lane::Base => (Some(iw_pre), mh_pre),
        Lane::Hard(model) => {
            let iw = instance_wise(*model, g, inst, Phase::Post)?;
            let mut mh = ModeFlags::default();
            for &mode in &opts.modes {
                mh.set(mode, multi_hop(*model, inst, Phase::Post, mode)?);
            }
            (Some(iw), mh)
        }
        Lane::Memory(memory) => {
            // The loop has no separate decoding mode; its verdict fills
            // every requested mode slot. Cloze-level recall is undefined
            // for an answering loop, so the instance-wise lane stays empty.
            let ctx = EvalContext::for_instance(inst);
            let hit = inst.questions.iter().any(|q| {
                let trace = Mello::new(base, memory)
                    .with_retrieval(opts.retrieval)
                    .with_max_hops(opts.max_hops)
                    .run(q, Some(&ctx));
                answers_match(
                    &trace.final_answer,
                    &inst.new_answer,
                    &inst.new_answer_aliases,
                )
            });
            let mut mh = ModeFlags::default();
            for &mode in &opts.modes {
                mh.set(mode, hit);
            }
            (None, mh)
        }
    };
    Ok(InstanceOutcome {
        hops: inst.hops,
        iw_pre,
        iw_post,
        mh_pre,
        mh_post,
    })
}

fn eval_batch_instances(
    g: &KnowledgeGraph,
    base: &dyn LmBackend,
    lane: &Lane<'_>,
    opts: &EvalOptions,
    instances: &[Instance],
) -> Result<Vec<InstanceOutcome>> {
    if opts.jobs <= 1 || instances.len() <= 1 {
        return instances
            .iter()
            .map(|i| eval_instance(g, base, lane, opts, i))
            .collect();
    }
    let chunk = instances.len().div_ceil(opts.jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = instances
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|i| eval_instance(g, base, lane, opts, i))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut all = Vec::with_capacity(instances.len());
        for handle in handles {
            all.extend(handle.join().expect("evaluation worker panicked")?);
        }
        Ok(all)
    })
}

#[derive(Default)]
struct ModeHits {
    direct: usize,
    cot: usize,
}

impl ModeHits {
    fn add(&mut self, flags: &ModeFlags) {
        if flags.direct == Some(true) {
            self.direct += 1;
        }
        if flags.cot == Some(true) {
            self.cot += 1;
        }
    }

    fn ratios(&self, total: usize, modes: &[AnswerMode]) -> ModeRatios {
        let ratio = |hits: usize, mode: AnswerMode| {
            if modes.contains(&mode) && total > 0 {
                Some(hits as f64 / total as f64)
            } else {
                None
            }
        };
        ModeRatios {
            direct: ratio(self.direct, AnswerMode::Direct),
            cot: ratio(self.cot, AnswerMode::Cot),
        }
    }
}

#[derive(Default)]
struct Tally {
    n: usize,
    iw_pre: usize,
    iw_post: usize,
    mh_pre: ModeHits,
    mh_post: ModeHits,
}

impl Tally {
    fn add(&mut self, o: &InstanceOutcome) {
        self.n += 1;
        if o.iw_pre {
            self.iw_pre += 1;
        }
        if o.iw_post == Some(true) {
            self.iw_post += 1;
        }
        self.mh_pre.add(&o.mh_pre);
        self.mh_post.add(&o.mh_post);
    }
}

fn fingerprint(
    g: &KnowledgeGraph,
    base: &dyn LmBackend,
    instances: &[Instance],
    editor: Editor,
    opts: &EvalOptions,
) -> String {
    let mut h = Sha256::new();
    h.update(g.snapshot().as_bytes());
    h.update([0x1f]);
    h.update(base.name().as_bytes());
    h.update([0x1f]);
    h.update(editor.as_str().as_bytes());
    h.update([0x1f]);
    h.update(opts.k.to_le_bytes());
    for mode in &opts.modes {
        h.update(match mode {
            AnswerMode::Direct => b"direct".as_slice(),
            AnswerMode::Cot => b"cot".as_slice(),
        });
        h.update([0x1f]);
    }
    h.update(match opts.retrieval {
        RetrievalMode::Cosine => b"cosine".as_slice(),
        RetrievalMode::ExactSubjectRelation => b"exact-subject-relation".as_slice(),
    });
    h.update([0x1f]);
    h.update(opts.max_hops.to_le_bytes());
    for inst in instances {
        h.update(inst.id.as_bytes());
        h.update([0x1f]);
    }
    hex::encode(&h.finalize()[..8])
}

/// Evaluate `editor` over `instances` with edits applied in batches of
/// `opts.k`. Per batch, the post lane sees the union of the batch's edits;
/// all counters are micro-averaged across batches into one report. The base
/// model always serves the pre lane (and drives the memory loop).
pub fn evaluate(
    g: &KnowledgeGraph,
    base: &dyn LmBackend,
    instances: &[Instance],
    editor: Editor,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if instances.is_empty() {
        return Err(Error::EmptyInstances);
    }
    let batches = build_edit_batch(instances, opts.k)?;
    let mut tally = Tally::default();
    let mut per_hop: BTreeMap<usize, Tally> = BTreeMap::new();
    let mut edit_hits_total = 0usize;
    let mut edit_count = 0usize;
    for batch in &batches {
        edit_count += batch.edits.len();
        // Per-batch post-lane artifacts live only for this scope.
        let hard;
        let memory;
        let lane = match editor {
            Editor::None => Lane::Base,
            Editor::HardEdit => {
                hard = OracleHardEdit::new(g, &batch.edits);
                Lane::Hard(&hard)
            }
            Editor::Mello => {
                memory = EditMemory::build(g, &batch.edits)?;
                Lane::Memory(&memory)
            }
        };
        match editor {
            Editor::Mello => {}
            Editor::None => {
                let (hits, _) = edit_hits(base, g, &batch.edits)?;
                edit_hits_total += hits;
            }
            Editor::HardEdit => {
                if let Lane::Hard(model) = &lane {
                    let (hits, _) = edit_hits(*model, g, &batch.edits)?;
                    edit_hits_total += hits;
                }
            }
        }
        for outcome in eval_batch_instances(g, base, &lane, opts, &batch.instances)? {
            tally.add(&outcome);
            per_hop.entry(outcome.hops).or_default().add(&outcome);
        }
    }
    let n = tally.n;
    let edit_wise = if editor == Editor::Mello || edit_count == 0 {
        None
    } else {
        Some(edit_hits_total as f64 / edit_count as f64)
    };
    let instance_wise_post = if editor == Editor::Mello {
        None
    } else {
        Some(tally.iw_post as f64 / n as f64)
    };
    Ok(EvalReport {
        editor,
        backend: base.name().to_string(),
        k: opts.k,
        batch_count: batches.len(),
        instance_count: n,
        edit_count,
        edit_wise,
        instance_wise_pre: tally.iw_pre as f64 / n as f64,
        instance_wise_post,
        multihop_pre: tally.mh_pre.ratios(n, &opts.modes),
        multihop_post: tally.mh_post.ratios(n, &opts.modes),
        per_hop: per_hop
            .iter()
            .map(|(&hops, t)| HopBreakdown {
                hops,
                count: t.n,
                multihop_pre: t.mh_pre.ratios(t.n, &opts.modes),
                multihop_post: t.mh_post.ratios(t.n, &opts.modes),
            })
            .collect(),
        fingerprint: fingerprint(g, base, instances, editor, opts),
    })
}
