//! The urban flood scene knowledge graph: canonical object dimensions keyed
//! by entity id, with `subClassOf` / `partOf` relations for curation and a
//! quarantined `pending` tier for model-proposed heights.

mod canon;
mod io;
mod matching;

pub use canon::{canonicalize, canonicalize_with, normalize, DEFAULT_QUALIFIER_LEXICON};
pub use io::{load_kg, save_kg, validate_document, KgDocument, ValidationReport, Violation};
pub use matching::{MatchResult, MatchTier};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stable key for a graph entity: lowercase ASCII tokens joined by
/// underscores, e.g. `sedan_tire`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityId(String);

impl EntityId {
    pub fn new(s: impl Into<String>) -> Result<Self, KgError> {
        let s = s.into();
        if Self::is_valid(&s) {
            Ok(Self(s))
        } else {
            Err(KgError::InvalidEntityId(s))
        }
    }

    /// `[a-z0-9]+(_[a-z0-9]+)*`
    pub fn is_valid(s: &str) -> bool {
        !s.is_empty()
            && !s.starts_with('_')
            && !s.ends_with('_')
            && !s.contains("__")
            && s.chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
    }

    /// Derives an id from a canonical (space-separated) label.
    pub fn from_canonical_label(label: &str) -> Result<Self, KgError> {
        Self::new(label.replace(' ', "_"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The id rendered with spaces instead of underscores ("suv tire").
    pub fn as_spaced(&self) -> String {
        self.0.replace('_', " ")
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for EntityId {
    type Error = KgError;
    fn try_from(s: String) -> Result<Self, KgError> {
        Self::new(s)
    }
}

impl From<EntityId> for String {
    fn from(id: EntityId) -> String {
        id.0
    }
}

/// Curation status. Pending entries come from model-proposed heights and
/// never shadow canonical ones during matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityStatus {
    Canonical,
    Pending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationKind {
    #[serde(rename = "subClassOf")]
    SubClassOf,
    #[serde(rename = "partOf")]
    PartOf,
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelationKind::SubClassOf => f.write_str("subClassOf"),
            RelationKind::PartOf => f.write_str("partOf"),
        }
    }
}

/// One graph entity with its canonical dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgEntity {
    pub id: EntityId,
    pub label: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub height_mean_cm: f64,
    pub height_std_cm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<EntityId>,
    pub source: String,
    pub status: EntityStatus,
    /// Number of provisional observations folded into `height_mean_cm`
    /// (meaningful for pending entries; 1 for curated ones).
    #[serde(default = "default_observation_count")]
    pub observation_count: u32,
}

fn default_observation_count() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KgRelation {
    pub subject: EntityId,
    pub predicate: RelationKind,
    pub object: EntityId,
}

/// In-memory graph. Construction goes through validation ([`load_kg`] or
/// [`KnowledgeGraph::from_document`]); a held value always satisfies the
/// graph invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    pub version: String,
    qualifier_lexicon: Vec<String>,
    entities: BTreeMap<EntityId, KgEntity>,
    relations: BTreeSet<KgRelation>,
}

pub const PROVISIONAL_SOURCE: &str = "vlm_provisional";

#[derive(Debug, Error)]
pub enum KgError {
    #[error("invalid entity id {0:?}: expected lowercase tokens joined by underscores")]
    InvalidEntityId(String),
    #[error("knowledge graph document is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("knowledge graph failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("cannot add pending entry for {label:?}: canonical entity {entity} already matches")]
    CanonicalMatchExists { label: String, entity: EntityId },
    #[error("cannot add pending entry for {0:?}: provisional height must be > 0, got {1}")]
    NonPositiveProvisionalHeight(String, f64),
    #[error("cannot add pending entry: label {0:?} canonicalizes to an empty string")]
    EmptyCanonicalLabel(String),
}

impl KnowledgeGraph {
    /// Builds a graph from a parsed document, rejecting invalid ones with
    /// the full violation list.
    pub fn from_document(doc: KgDocument) -> Result<Self, KgError> {
        let report = validate_document(&doc);
        if !report.is_empty() {
            return Err(KgError::Invalid(report));
        }
        Ok(Self::from_valid_document(doc))
    }

    pub(crate) fn from_valid_document(doc: KgDocument) -> Self {
        let qualifier_lexicon = doc.qualifier_lexicon.unwrap_or_else(|| {
            DEFAULT_QUALIFIER_LEXICON
                .iter()
                .map(|s| s.to_string())
                .collect()
        });
        let mut entities = BTreeMap::new();
        for e in doc.entities {
            entities.insert(e.id.clone(), e);
        }
        Self {
            version: doc.version,
            qualifier_lexicon,
            entities,
            relations: doc.relations.into_iter().collect(),
        }
    }

    pub fn to_document(&self) -> KgDocument {
        KgDocument {
            version: self.version.clone(),
            qualifier_lexicon: Some(self.qualifier_lexicon.clone()),
            entities: self.entities.values().cloned().collect(),
            relations: self.relations.iter().cloned().collect(),
        }
    }

    /// Re-checks every invariant. Empty report iff [`load_kg`] would accept
    /// the serialized form.
    pub fn validate(&self) -> ValidationReport {
        validate_document(&self.to_document())
    }

    pub fn qualifier_lexicon(&self) -> &[String] {
        &self.qualifier_lexicon
    }

    /// Canonicalizes a label using this graph's qualifier lexicon.
    pub fn canonicalize(&self, raw: &str) -> String {
        canon::canonicalize_with(raw, &self.qualifier_lexicon)
    }

    pub fn entities(&self) -> impl Iterator<Item = &KgEntity> {
        self.entities.values()
    }

    pub fn entity(&self, id: &EntityId) -> Option<&KgEntity> {
        self.entities.get(id)
    }

    pub fn relations(&self) -> impl Iterator<Item = &KgRelation> {
        self.relations.iter()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn canonical_ids(&self) -> Vec<EntityId> {
        self.entities
            .values()
            .filter(|e| e.status == EntityStatus::Canonical)
            .map(|e| e.id.clone())
            .collect()
    }

    /// The stored `(height_mean_cm, height_std_cm)` for an entity. No
    /// inheritance: each entity answers with its own values.
    pub fn lookup_height(&self, id: &EntityId) -> Result<(f64, f64), KgError> {
        self.entities
            .get(id)
            .map(|e| (e.height_mean_cm, e.height_std_cm))
            .ok_or_else(|| KgError::UnknownEntity(id.to_string()))
    }

    /// Records a model-proposed height as a quarantined pending entry,
    /// returning the updated graph (copy-and-swap: `self` is untouched).
    ///
    /// Repeat observations of the same derived id fold into a running
    /// arithmetic mean with the observation count tracked.
    pub fn add_pending(&self, raw_label: &str, provisional_height_cm: f64) -> Result<Self, KgError> {
        if provisional_height_cm <= 0.0 || !provisional_height_cm.is_finite() {
            return Err(KgError::NonPositiveProvisionalHeight(
                raw_label.to_string(),
                provisional_height_cm,
            ));
        }
        let canonical = self.canonicalize(raw_label);
        if canonical.is_empty() {
            return Err(KgError::EmptyCanonicalLabel(raw_label.to_string()));
        }
        if let Some(m) = self.match_entity(raw_label) {
            if self.entities[&m.entity].status == EntityStatus::Canonical {
                return Err(KgError::CanonicalMatchExists {
                    label: raw_label.to_string(),
                    entity: m.entity,
                });
            }
        }
        let id = EntityId::from_canonical_label(&canonical)?;
        let mut next = self.clone();
        match next.entities.get_mut(&id) {
            Some(existing) if existing.status == EntityStatus::Pending => {
                let n = existing.observation_count as f64;
                existing.height_mean_cm =
                    (existing.height_mean_cm * n + provisional_height_cm) / (n + 1.0);
                existing.observation_count += 1;
            }
            Some(_) => {
                // A canonical entity with this exact id would have matched
                // at the exact_id tier; unreachable, but fail closed.
                return Err(KgError::CanonicalMatchExists {
                    label: raw_label.to_string(),
                    entity: id,
                });
            }
            None => {
                next.entities.insert(
                    id.clone(),
                    KgEntity {
                        id,
                        label: canonical,
                        aliases: Vec::new(),
                        height_mean_cm: provisional_height_cm,
                        height_std_cm: 0.0,
                        category: None,
                        source: PROVISIONAL_SOURCE.to_string(),
                        status: EntityStatus::Pending,
                        observation_count: 1,
                    },
                );
            }
        }
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_graph() -> KnowledgeGraph {
        let doc: KgDocument = serde_json::from_str(
            r#"{
              "version": "1",
              "entities": [
                {"id": "suv_tire", "label": "SUV tire", "aliases": ["suv wheel"],
                 "height_mean_cm": 78.0, "height_std_cm": 5.0,
                 "category": "suv", "source": "test", "status": "canonical"},
                {"id": "suv", "label": "SUV", "aliases": [],
                 "height_mean_cm": 170.0, "height_std_cm": 8.0,
                 "source": "test", "status": "canonical"},
                {"id": "adult_knee", "label": "adult knee", "aliases": ["knee"],
                 "height_mean_cm": 50.0, "height_std_cm": 4.0,
                 "source": "test", "status": "canonical"}
              ],
              "relations": [
                {"subject": "suv_tire", "predicate": "partOf", "object": "suv"}
              ]
            }"#,
        )
        .unwrap();
        KnowledgeGraph::from_document(doc).unwrap()
    }

    #[test]
    fn entity_id_validation() {
        assert!(EntityId::new("sedan_tire").is_ok());
        assert!(EntityId::new("a1_b2").is_ok());
        assert!(EntityId::new("").is_err());
        assert!(EntityId::new("Sedan").is_err());
        assert!(EntityId::new("_tire").is_err());
        assert!(EntityId::new("tire_").is_err());
        assert!(EntityId::new("a__b").is_err());
        assert!(EntityId::new("a b").is_err());
    }

    #[test]
    fn lookup_returns_stored_values() {
        let kg = small_graph();
        let id = EntityId::new("suv").unwrap();
        assert_eq!(kg.lookup_height(&id).unwrap(), (170.0, 8.0));
    }

    #[test]
    fn lookup_unknown_is_error() {
        let kg = small_graph();
        let id = EntityId::new("zeppelin").unwrap();
        assert!(matches!(
            kg.lookup_height(&id),
            Err(KgError::UnknownEntity(_))
        ));
    }

    #[test]
    fn lookup_does_not_inherit_from_parents() {
        // suv_tire has its own heights even though it is partOf suv.
        let kg = small_graph();
        let id = EntityId::new("suv_tire").unwrap();
        assert_eq!(kg.lookup_height(&id).unwrap(), (78.0, 5.0));
    }

    #[test]
    fn add_pending_creates_quarantined_entry() {
        let kg = small_graph();
        let next = kg.add_pending("traffic cone", 47.0).unwrap();
        let id = EntityId::new("traffic_cone").unwrap();
        let e = next.entity(&id).unwrap();
        assert_eq!(e.status, EntityStatus::Pending);
        assert_eq!(e.height_mean_cm, 47.0);
        assert_eq!(e.height_std_cm, 0.0);
        assert_eq!(e.observation_count, 1);
        assert_eq!(e.source, PROVISIONAL_SOURCE);
        // copy-and-swap: the original graph is untouched
        assert!(kg.entity(&id).is_none());
    }

    #[test]
    fn add_pending_running_mean() {
        let kg = small_graph();
        let kg = kg.add_pending("traffic cone", 47.0).unwrap();
        let kg = kg.add_pending("Traffic Cone", 53.0).unwrap();
        let id = EntityId::new("traffic_cone").unwrap();
        let e = kg.entity(&id).unwrap();
        assert!((e.height_mean_cm - 50.0).abs() < 1e-12);
        assert_eq!(e.observation_count, 2);
    }

    #[test]
    fn add_pending_rejects_canonical_match() {
        let kg = small_graph();
        let err = kg.add_pending("rear SUV tire", 60.0).unwrap_err();
        assert!(matches!(err, KgError::CanonicalMatchExists { .. }));
    }

    #[test]
    fn add_pending_rejects_bad_height_and_empty_label() {
        let kg = small_graph();
        assert!(matches!(
            kg.add_pending("cone", 0.0),
            Err(KgError::NonPositiveProvisionalHeight(..))
        ));
        assert!(matches!(
            kg.add_pending("rear left", 10.0),
            Err(KgError::EmptyCanonicalLabel(_))
        ));
    }

    #[test]
    fn pending_mean_matches_arithmetic_mean() {
        let kg = small_graph();
        let values = [47.0, 53.0, 41.5, 62.25, 49.9, 50.1, 55.5];
        let mut g = kg;
        for v in values {
            g = g.add_pending("street planter", v).unwrap();
        }
        let id = EntityId::new("street_planter").unwrap();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let got = g.entity(&id).unwrap().height_mean_cm;
        assert!(
            ((got - mean) / mean).abs() < 1e-9,
            "running mean {got} vs arithmetic mean {mean}"
        );
        assert_eq!(g.entity(&id).unwrap().observation_count, values.len() as u32);
    }
}
