//! JSON persistence for benchmark instances and sampled chains, corpus
//! statistics over (hops × edit-count) cells, and a config-driven importer
//! that renames external field layouts onto the canonical schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::edits::Instance;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};
use crate::sampler::FactChain;

pub const SCHEMA_VERSION: &str = "1";

/// Keys every stored instance must carry. Alias lists may be omitted (they
/// default to empty), everything else is mandatory, including the version.
const REQUIRED_FIELDS: [&str; 9] = [
    "edits",
    "questions",
    "answer",
    "new_answer",
    "orig_triples",
    "new_triples",
    "hops",
    "id",
    "schema_version",
];

/// All field names the canonical schema knows about.
const CANONICAL_FIELDS: [&str; 11] = [
    "edits",
    "questions",
    "answer",
    "answer_aliases",
    "new_answer",
    "new_answer_aliases",
    "orig_triples",
    "new_triples",
    "hops",
    "id",
    "schema_version",
];

fn require_fields(value: &Value, index: usize, required: &[&str]) -> Result<()> {
    let map = value.as_object().ok_or_else(|| Error::SchemaViolation {
        field: "object".to_string(),
        index,
    })?;
    for field in required {
        if !map.contains_key(*field) {
            return Err(Error::SchemaViolation {
                field: (*field).to_string(),
                index,
            });
        }
    }
    Ok(())
}

/// Write instances as a pretty-printed JSON array (UTF-8, trailing newline).
pub fn save_instances(instances: &[Instance], path: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(instances)?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

/// Load a JSON instance array, checking every element for the required
/// fields before deserializing. Unknown fields are preserved and will be
/// written back by [`save_instances`].
pub fn load_instances(path: &Path) -> Result<Vec<Instance>> {
    let text = fs::read_to_string(path)?;
    let values: Vec<Value> = serde_json::from_str(&text)?;
    let mut out = Vec::with_capacity(values.len());
    for (index, value) in values.into_iter().enumerate() {
        require_fields(&value, index, &REQUIRED_FIELDS)?;
        out.push(serde_json::from_value(value)?);
    }
    Ok(out)
}

/// Serializable form of a sampled chain, the handoff between the sampling
/// and edit-attachment stages.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub triples: Vec<Triple>,
}

impl ChainRecord {
    pub fn from_chain(chain: &FactChain) -> Self {
        ChainRecord {
            triples: chain.triples().to_vec(),
        }
    }

    /// Re-validate against a graph (connectivity, length, known relations).
    pub fn to_chain(&self, g: &KnowledgeGraph) -> Result<FactChain> {
        FactChain::new(g, self.triples.clone())
    }
}

pub fn save_chains(chains: &[ChainRecord], path: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(chains)?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

pub fn load_chains(path: &Path) -> Result<Vec<ChainRecord>> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// One (hops, edit-count) histogram cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsCell {
    pub hops: usize,
    pub edits: usize,
    pub count: usize,
}

/// Corpus composition: how many instances exist per chain length and per
/// number of attached edits. Cell counts always sum to `total`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub cells: Vec<StatsCell>,
    pub total: usize,
}

impl CorpusStats {
    pub fn count(&self, hops: usize, edits: usize) -> usize {
        self.cells
            .iter()
            .find(|c| c.hops == hops && c.edits == edits)
            .map_or(0, |c| c.count)
    }

    /// Fixed-width grid: one row per hop count, one column per edit count,
    /// with row/column totals.
    pub fn to_table(&self) -> String {
        let hops: BTreeSet<usize> = self.cells.iter().map(|c| c.hops).collect();
        let edit_counts: BTreeSet<usize> = self.cells.iter().map(|c| c.edits).collect();
        let mut out = String::new();
        out.push_str(&format!("{:<6}", "hops"));
        for e in &edit_counts {
            out.push_str(&format!(" {:>8}", format!("{e}-edit")));
        }
        out.push_str(&format!(" {:>8}\n", "total"));
        for h in &hops {
            out.push_str(&format!("{h:<6}"));
            let mut row = 0;
            for e in &edit_counts {
                let c = self.count(*h, *e);
                row += c;
                out.push_str(&format!(" {c:>8}"));
            }
            out.push_str(&format!(" {row:>8}\n"));
        }
        out.push_str(&format!("{:<6}", "total"));
        let mut grand = 0;
        for e in &edit_counts {
            let col: usize = hops.iter().map(|h| self.count(*h, *e)).sum();
            grand += col;
            out.push_str(&format!(" {col:>8}"));
        }
        out.push_str(&format!(" {grand:>8}\n"));
        out
    }
}

/// Exact per-cell counts of a corpus.
pub fn stats(instances: &[Instance]) -> CorpusStats {
    let mut cells: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for inst in instances {
        *cells.entry((inst.hops, inst.edits.len())).or_default() += 1;
    }
    CorpusStats {
        cells: cells
            .into_iter()
            .map(|((hops, edits), count)| StatsCell { hops, edits, count })
            .collect(),
        total: instances.len(),
    }
}

/// Renaming table for external instance files: external field name →
/// canonical field name. Kept as data so new external layouts need a config
/// change, not a release.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FieldMapping {
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
}

impl FieldMapping {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// What an import did: how many instances came through and which fields had
/// no canonical home (they are preserved verbatim, never guessed at).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportReport {
    pub imported: usize,
    pub unmapped_fields: Vec<String>,
}

/// Best-effort import of an externally produced instance file: rename
/// top-level fields per `mapping`, default the schema version when absent,
/// collect leftover field names, then validate like [`load_instances`].
pub fn import_instances(
    path: &Path,
    mapping: &FieldMapping,
) -> Result<(Vec<Instance>, ImportReport)> {
    let text = fs::read_to_string(path)?;
    let values: Vec<Value> = serde_json::from_str(&text)?;
    let canonical: BTreeSet<&str> = CANONICAL_FIELDS.into_iter().collect();
    let mut unmapped: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::with_capacity(values.len());
    for (index, value) in values.into_iter().enumerate() {
        let Value::Object(map) = value else {
            return Err(Error::SchemaViolation {
                field: "object".to_string(),
                index,
            });
        };
        let mut renamed = serde_json::Map::new();
        for (key, v) in map {
            let target = mapping.fields.get(&key).cloned().unwrap_or(key);
            if !canonical.contains(target.as_str()) {
                unmapped.insert(target.clone());
            }
            renamed.insert(target, v);
        }
        renamed
            .entry("schema_version")
            .or_insert_with(|| Value::String(SCHEMA_VERSION.to_string()));
        let value = Value::Object(renamed);
        require_fields(&value, index, &REQUIRED_FIELDS)?;
        out.push(serde_json::from_value(value)?);
    }
    let report = ImportReport {
        imported: out.len(),
        unmapped_fields: unmapped.into_iter().collect(),
    };
    Ok((out, report))
}
