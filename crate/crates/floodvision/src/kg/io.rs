//! KG file format: a UTF-8 JSON document with an entity list and a relation
//! list, validated as a whole so every violation is reported at once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::canon;
use super::{EntityId, KgEntity, KgError, KgRelation, KnowledgeGraph, RelationKind};

/// The wire form of a knowledge graph file.
///
/// Ids inside entities and relations are typed; a file whose ids fail the
/// id grammar is rejected at parse time with the offending string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KgDocument {
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualifier_lexicon: Option<Vec<String>>,
    pub entities: Vec<KgEntity>,
    #[serde(default)]
    pub relations: Vec<KgRelation>,
}

/// One violated invariant, with enough identity to locate it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub subject: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.rule, self.subject, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, rule: &str, subject: impl Into<String>, detail: impl Into<String>) {
        self.violations.push(Violation {
            rule: rule.to_string(),
            subject: subject.into(),
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Checks every graph invariant over a parsed document and reports all
/// violations. Never fails: a report is always produced.
pub fn validate_document(doc: &KgDocument) -> ValidationReport {
    let mut report = ValidationReport::default();

    let lexicon: Vec<String> = doc
        .qualifier_lexicon
        .clone()
        .unwrap_or_else(|| canon::DEFAULT_QUALIFIER_LEXICON.iter().map(|s| s.to_string()).collect());

    // Duplicate ids (the entity list is a flat array, so the same id can
    // appear twice in a file even though the built map cannot hold both).
    let mut seen: BTreeSet<&EntityId> = BTreeSet::new();
    for e in &doc.entities {
        if !seen.insert(&e.id) {
            report.push("duplicate-id", e.id.as_str(), "entity id appears more than once");
        }
    }
    let ids: BTreeSet<&EntityId> = doc.entities.iter().map(|e| &e.id).collect();

    // Heights.
    for e in &doc.entities {
        if e.height_mean_cm <= 0.0 || !e.height_mean_cm.is_finite() {
            report.push(
                "non-positive-height",
                e.id.as_str(),
                format!("height_mean_cm must be > 0, got {}", e.height_mean_cm),
            );
        }
        if e.height_std_cm < 0.0 || !e.height_std_cm.is_finite() {
            report.push(
                "negative-height-std",
                e.id.as_str(),
                format!("height_std_cm must be >= 0, got {}", e.height_std_cm),
            );
        }
        if e.observation_count == 0 {
            report.push("zero-observation-count", e.id.as_str(), "observation_count must be >= 1");
        }
    }

    // Aliases: unique across the whole graph after canonicalization.
    let mut alias_owner: BTreeMap<String, &EntityId> = BTreeMap::new();
    for e in &doc.entities {
        for alias in &e.aliases {
            let canonical = canon::canonicalize_with(alias, &lexicon);
            match alias_owner.get(&canonical) {
                Some(owner) => {
                    report.push(
                        "duplicate-alias",
                        e.id.as_str(),
                        format!(
                            "alias {alias:?} canonicalizes to {canonical:?}, already claimed by {owner}"
                        ),
                    );
                }
                None => {
                    alias_owner.insert(canonical, &e.id);
                }
            }
        }
    }

    // Category references.
    for e in &doc.entities {
        if let Some(cat) = &e.category {
            if !ids.contains(cat) {
                report.push(
                    "dangling-category",
                    e.id.as_str(),
                    format!("category {cat} does not resolve to an entity"),
                );
            }
        }
    }

    // Relations: endpoints exist, no self-loops, per-predicate acyclicity.
    for r in &doc.relations {
        let name = format!("{} {} {}", r.subject, r.predicate, r.object);
        if !ids.contains(&r.subject) {
            report.push("dangling-relation", &name, format!("subject {} not in graph", r.subject));
        }
        if !ids.contains(&r.object) {
            report.push("dangling-relation", &name, format!("object {} not in graph", r.object));
        }
        if r.subject == r.object {
            report.push("self-relation", &name, "subject and object are the same entity");
        }
    }
    for predicate in [RelationKind::SubClassOf, RelationKind::PartOf] {
        for cycle in find_cycles(doc, predicate) {
            report.push(
                "cycle",
                format!("{predicate}"),
                format!("cycle: {}", cycle.join(" -> ")),
            );
        }
    }

    report
}

/// Cycle detection over one predicate's subgraph (iterative DFS, three
/// colors). Returns one witness path per cycle reached from distinct roots.
fn find_cycles(doc: &KgDocument, predicate: RelationKind) -> Vec<Vec<String>> {
    let mut adj: BTreeMap<&EntityId, Vec<&EntityId>> = BTreeMap::new();
    for r in &doc.relations {
        if r.predicate == predicate && r.subject != r.object {
            adj.entry(&r.subject).or_default().push(&r.object);
        }
    }
    // Self-loops are reported separately as self-relation, not as cycles.

    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Gray,
        Black,
    }
    let mut color: BTreeMap<&EntityId, Color> = adj.keys().map(|k| (*k, Color::White)).collect();
    for targets in adj.values() {
        for t in targets {
            color.entry(t).or_insert(Color::White);
        }
    }

    let mut cycles = Vec::new();
    let roots: Vec<&EntityId> = color.keys().copied().collect();
    for root in roots {
        if color[root] != Color::White {
            continue;
        }
        // stack of (node, next child index), plus the gray path for witness
        let mut stack: Vec<(&EntityId, usize)> = vec![(root, 0)];
        color.insert(root, Color::Gray);
        while let Some((node, idx)) = stack.pop() {
            let children = adj.get(node).map(|v| v.as_slice()).unwrap_or(&[]);
            if idx < children.len() {
                stack.push((node, idx + 1));
                let child = children[idx];
                match color[child] {
                    Color::White => {
                        color.insert(child, Color::Gray);
                        stack.push((child, 0));
                    }
                    Color::Gray => {
                        // Back edge: the gray path from `child` to `node` is a cycle.
                        let mut path: Vec<String> = stack
                            .iter()
                            .map(|(n, _)| n.to_string())
                            .skip_while(|n| n.as_str() != child.as_str())
                            .collect();
                        path.push(child.to_string());
                        cycles.push(path);
                    }
                    Color::Black => {}
                }
            } else {
                color.insert(node, Color::Black);
            }
        }
    }
    cycles
}

/// Parses and validates a KG file. Rejection carries either the JSON error
/// or the full list of violated invariants.
pub fn load_kg(bytes: &[u8]) -> Result<KnowledgeGraph, KgError> {
    let doc: KgDocument = serde_json::from_slice(bytes)?;
    KnowledgeGraph::from_document(doc)
}

/// Serializes a graph deterministically (entities sorted by id, relations
/// sorted, lexicon always written). `load_kg(save_kg(g)) == g` and saving
/// twice yields identical bytes.
pub fn save_kg(kg: &KnowledgeGraph) -> Vec<u8> {
    let doc = kg.to_document();
    let mut out = serde_json::to_vec_pretty(&doc).expect("KG document serialization is infallible");
    out.push(b'\n');
    out
}
