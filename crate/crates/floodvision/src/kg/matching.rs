//! Tiered entity matching: detected object names are canonicalized and
//! resolved against the graph, strongest tier first. Pending entries are
//! consulted only when no canonical entity matches at any tier.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::canon;
use super::{EntityId, EntityStatus, KnowledgeGraph};

/// Match strength, strongest first. The derive gives `ExactId < ExactAlias
/// < QualifierStripped < TokenSubset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchTier {
    ExactId,
    ExactAlias,
    QualifierStripped,
    TokenSubset,
}

impl MatchTier {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatchTier::ExactId => "exact_id",
            MatchTier::ExactAlias => "exact_alias",
            MatchTier::QualifierStripped => "qualifier_stripped",
            MatchTier::TokenSubset => "token_subset",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub entity: EntityId,
    pub tier: MatchTier,
    /// The query text, in the form that produced the match (normalized for
    /// the exact tiers, stripped for the later ones).
    pub matched_text: String,
}

impl KnowledgeGraph {
    /// Resolves a raw label to an entity, or `None` when no tier matches.
    ///
    /// Canonical entities are tried through every tier before pending
    /// entries are considered at all.
    pub fn match_entity(&self, raw_label: &str) -> Option<MatchResult> {
        self.match_with_status(raw_label, EntityStatus::Canonical)
            .or_else(|| self.match_with_status(raw_label, EntityStatus::Pending))
    }

    fn match_with_status(&self, raw_label: &str, status: EntityStatus) -> Option<MatchResult> {
        let normalized = canon::normalize(raw_label);
        if normalized.is_empty() {
            return None;
        }

        // Tiers 1-2 on the normalized text, qualifiers intact.
        if let Some(m) = self.exact_tiers(&normalized, status, false) {
            return Some(m);
        }

        // Tier 3: drop qualifier tokens one occurrence at a time, retrying
        // the exact tiers after each removal, so ids or aliases that happen
        // to contain a qualifier word are still reachable.
        let mut tokens: Vec<String> = normalized.split(' ').map(str::to_string).collect();
        let mut stripped = normalized;
        while let Some(pos) = tokens
            .iter()
            .position(|t| self.qualifier_lexicon().iter().any(|q| q == t))
        {
            tokens.remove(pos);
            stripped = tokens.join(" ");
            if stripped.is_empty() {
                return None;
            }
            if let Some(m) = self.exact_tiers(&stripped, status, true) {
                return Some(m);
            }
        }

        // Tier 4: the query's token set is contained in an entity's
        // label/alias token set. Rank by largest token overlap (fewest
        // unmatched entity tokens), then smallest id.
        let query_tokens: BTreeSet<&str> = stripped.split(' ').collect();
        let mut best: Option<(usize, &EntityId)> = None;
        for e in self.entities().filter(|e| e.status == status) {
            let mut entity_tokens: BTreeSet<String> =
                e.id.as_str().split('_').map(str::to_string).collect();
            for text in std::iter::once(&e.label).chain(e.aliases.iter()) {
                for t in self.canonicalize(text).split(' ') {
                    if !t.is_empty() {
                        entity_tokens.insert(t.to_string());
                    }
                }
            }
            if query_tokens.iter().all(|t| entity_tokens.contains(*t)) {
                let candidate = (entity_tokens.len(), &e.id);
                best = Some(match best {
                    None => candidate,
                    // Fewer total entity tokens = larger overlap fraction.
                    Some(b) if candidate < b => candidate,
                    Some(b) => b,
                });
            }
        }
        best.map(|(_, id)| MatchResult {
            entity: id.clone(),
            tier: MatchTier::TokenSubset,
            matched_text: stripped.clone(),
        })
    }

    /// Id and alias lookup for one text form.
    fn exact_tiers(&self, text: &str, status: EntityStatus, after_strip: bool) -> Option<MatchResult> {
        let tier = |base: MatchTier| if after_strip { MatchTier::QualifierStripped } else { base };

        let as_id = text.replace(' ', "_");
        if let Ok(id) = EntityId::new(as_id) {
            if let Some(e) = self.entity(&id) {
                if e.status == status {
                    return Some(MatchResult {
                        entity: id,
                        tier: tier(MatchTier::ExactId),
                        matched_text: text.to_string(),
                    });
                }
            }
        }

        // Alias identity is the canonicalized alias; uniqueness across the
        // graph is a validated invariant, so the first hit is the only one.
        for e in self.entities().filter(|e| e.status == status) {
            for alias in &e.aliases {
                if self.canonicalize(alias) == text {
                    return Some(MatchResult {
                        entity: e.id.clone(),
                        tier: tier(MatchTier::ExactAlias),
                        matched_text: text.to_string(),
                    });
                }
            }
        }
        None
    }
}
