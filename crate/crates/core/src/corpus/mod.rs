//! Canonical document model and corpus operations.
//!
//! Parsers for the two on-disk formats live in [`docred`] and [`pubtator`];
//! markup insertion in [`markup`]; the seeded synthetic corpus generator in
//! [`synthetic`]. Sentences are token lists; the canonical sentence text is
//! the tokens joined by single spaces and all character spans refer to it.

pub mod docred;
pub mod markup;
pub mod pubtator;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("parse error in field `{field}`: {detail}")]
    Parse { field: String, detail: String },
    #[error("validation error: {0}")]
    Validation(String),
}

impl CorpusError {
    pub fn parse(field: &str, detail: impl Into<String>) -> Self {
        CorpusError::Parse {
            field: field.to_string(),
            detail: detail.into(),
        }
    }
}

/// One occurrence of an entity in a sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub entity_id: String,
    pub sentence_index: usize,
    /// `[start, end)` character span in the canonical sentence text.
    pub char_span: (usize, usize),
    pub surface: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub entity_type: String,
    pub mentions: Vec<Mention>,
}

impl Entity {
    /// Entities in a pseudo document may have lost every mention; they stay
    /// in the entity list so triplet identity remains stable.
    pub fn is_mention_less(&self) -> bool {
        self.mentions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub head_id: String,
    pub tail_id: String,
    pub relation: String,
    pub evidence: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub title: String,
    /// Tokenized sentences.
    pub sentences: Vec<Vec<String>>,
    pub entities: Vec<Entity>,
    pub gold_relations: Vec<RelationInstance>,
}

/// Canonical sentence text: tokens joined by single spaces.
pub fn sentence_text(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Character offset of each token inside the canonical sentence text.
pub fn token_char_offsets(tokens: &[String]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut pos = 0;
    for t in tokens {
        let len = t.chars().count();
        out.push((pos, pos + len));
        pos += len + 1;
    }
    out
}

impl Document {
    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.id == id)
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Union of gold evidence over every relation of the pair.
    pub fn pooled_evidence(&self, head_id: &str, tail_id: &str) -> BTreeSet<usize> {
        self.gold_relations
            .iter()
            .filter(|r| r.head_id == head_id && r.tail_id == tail_id)
            .flat_map(|r| r.evidence.iter().copied())
            .collect()
    }

    /// Gold relations of a pair, in document order.
    pub fn pair_relations(&self, head_id: &str, tail_id: &str) -> Vec<&RelationInstance> {
        self.gold_relations
            .iter()
            .filter(|r| r.head_id == head_id && r.tail_id == tail_id)
            .collect()
    }

    /// Check structural invariants. `strict_mentions` additionally requires
    /// every entity to keep at least one mention (parsed documents); pseudo
    /// documents relax it.
    pub fn validate(&self, strict_mentions: bool) -> Result<(), CorpusError> {
        let n_sents = self.sentences.len();
        for e in &self.entities {
            if strict_mentions && e.mentions.is_empty() {
                return Err(CorpusError::Validation(format!(
                    "entity `{}` has no mentions",
                    e.id
                )));
            }
            for m in &e.mentions {
                if m.entity_id != e.id {
                    return Err(CorpusError::Validation(format!(
                        "mention entity id `{}` does not match entity `{}`",
                        m.entity_id, e.id
                    )));
                }
                if m.sentence_index >= n_sents {
                    return Err(CorpusError::Validation(format!(
                        "mention of `{}` points at sentence {} of {}",
                        e.id, m.sentence_index, n_sents
                    )));
                }
                let text = sentence_text(&self.sentences[m.sentence_index]);
                let len = text.chars().count();
                if m.char_span.0 >= m.char_span.1 || m.char_span.1 > len {
                    return Err(CorpusError::Validation(format!(
                        "mention span {:?} of `{}` outside sentence of length {}",
                        m.char_span, e.id, len
                    )));
                }
                let spanned: String = text
                    .chars()
                    .skip(m.char_span.0)
                    .take(m.char_span.1 - m.char_span.0)
                    .collect();
                if spanned != m.surface {
                    return Err(CorpusError::Validation(format!(
                        "mention surface `{}` does not equal spanned text `{}`",
                        m.surface, spanned
                    )));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for r in &self.gold_relations {
            if r.head_id == r.tail_id {
                return Err(CorpusError::Validation(format!(
                    "relation `{}` has identical head and tail `{}`",
                    r.relation, r.head_id
                )));
            }
            for id in [&r.head_id, &r.tail_id] {
                if self.entity_index(id).is_none() {
                    return Err(CorpusError::Validation(format!(
                        "relation references unknown entity `{id}`"
                    )));
                }
            }
            if !seen.insert((r.head_id.clone(), r.tail_id.clone(), r.relation.clone())) {
                return Err(CorpusError::Validation(format!(
                    "duplicate gold relation ({}, {}, {})",
                    r.head_id, r.tail_id, r.relation
                )));
            }
            for &s in &r.evidence {
                if s >= n_sents {
                    return Err(CorpusError::Validation(format!(
                        "evidence sentence {s} out of range for {n_sents}-sentence document"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A set of parsed documents.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        Corpus { documents }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Sorted label inventories over the whole corpus.
    pub fn inventory(&self) -> Inventory {
        let mut relations = BTreeSet::new();
        let mut entity_types = BTreeSet::new();
        for d in &self.documents {
            for r in &d.gold_relations {
                relations.insert(r.relation.clone());
            }
            for e in &d.entities {
                entity_types.insert(e.entity_type.clone());
            }
        }
        Inventory {
            relations: relations.into_iter().collect(),
            entity_types: entity_types.into_iter().collect(),
        }
    }
}

/// Relation and entity-type label inventories, sorted for determinism.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    pub relations: Vec<String>,
    pub entity_types: Vec<String>,
}

impl Inventory {
    pub fn relation_index(&self, label: &str) -> Option<usize> {
        self.relations.binary_search_by(|r| r.as_str().cmp(label)).ok()
    }

    pub fn type_index(&self, label: &str) -> Option<usize> {
        self.entity_types
            .binary_search_by(|t| t.as_str().cmp(label))
            .ok()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn type_count(&self) -> usize {
        self.entity_types.len()
    }
}

/// Restrict a document to `kept_sentences`, renumbering sentence indices.
///
/// Mentions outside the kept set are dropped; entities that lose every
/// mention stay in the entity list (flagged by emptiness) so logit
/// bookkeeping keyed by entity index stays stable. Gold relations are
/// carried over with their evidence sets intersected and remapped.
pub fn build_pseudo_document(
    doc: &Document,
    kept_sentences: &BTreeSet<usize>,
) -> Result<Document, CorpusError> {
    if kept_sentences.is_empty() {
        return Err(CorpusError::Validation(
            "kept sentence set is empty".to_string(),
        ));
    }
    if let Some(&max) = kept_sentences.iter().next_back() {
        if max >= doc.sentences.len() {
            return Err(CorpusError::Validation(format!(
                "kept sentence {} out of range for {}-sentence document",
                max,
                doc.sentences.len()
            )));
        }
    }
    let remap: BTreeMap<usize, usize> = kept_sentences
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new))
        .collect();

    let sentences = kept_sentences
        .iter()
        .map(|&s| doc.sentences[s].clone())
        .collect();
    let entities = doc
        .entities
        .iter()
        .map(|e| Entity {
            id: e.id.clone(),
            entity_type: e.entity_type.clone(),
            mentions: e
                .mentions
                .iter()
                .filter_map(|m| {
                    remap.get(&m.sentence_index).map(|&new| Mention {
                        sentence_index: new,
                        ..m.clone()
                    })
                })
                .collect(),
        })
        .collect();
    let gold_relations = doc
        .gold_relations
        .iter()
        .map(|r| RelationInstance {
            head_id: r.head_id.clone(),
            tail_id: r.tail_id.clone(),
            relation: r.relation.clone(),
            evidence: r
                .evidence
                .iter()
                .filter_map(|s| remap.get(s).copied())
                .collect(),
        })
        .collect();

    Ok(Document {
        title: doc.title.clone(),
        sentences,
        entities,
        gold_relations,
    })
}

/// Per-document label counts for the class-imbalance weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassFrequencies {
    /// Ordered mention pairs (i ≠ j) referring to the same entity.
    pub cr_pos: usize,
    pub cr_neg: usize,
    /// Ordered entity pairs (h ≠ t) × sentences inside the pooled evidence.
    pub per_pos: usize,
    pub per_neg: usize,
}

impl ClassFrequencies {
    /// Weight for a label class: count of the opposite class over this
    /// class's count, clamped to `[1e-2, 1e2]`.
    fn weight(this: usize, opposite: usize) -> f64 {
        if this == 0 {
            return 1.0; // class absent; weight never multiplies a term
        }
        (opposite as f64 / this as f64).clamp(1e-2, 1e2)
    }

    pub fn cr_weight(&self, positive: bool) -> f64 {
        if positive {
            Self::weight(self.cr_pos, self.cr_neg)
        } else {
            Self::weight(self.cr_neg, self.cr_pos)
        }
    }

    pub fn per_weight(&self, positive: bool) -> f64 {
        if positive {
            Self::weight(self.per_pos, self.per_neg)
        } else {
            Self::weight(self.per_neg, self.per_pos)
        }
    }
}

/// Count positive/negative labels for the coreference and pooled-evidence
/// tasks in one document.
pub fn class_frequencies(doc: &Document) -> ClassFrequencies {
    let mut f = ClassFrequencies::default();
    let mention_owner: Vec<usize> = doc
        .entities
        .iter()
        .enumerate()
        .flat_map(|(i, e)| std::iter::repeat(i).take(e.mentions.len()))
        .collect();
    let m = mention_owner.len();
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            if mention_owner[i] == mention_owner[j] {
                f.cr_pos += 1;
            } else {
                f.cr_neg += 1;
            }
        }
    }
    let n_sents = doc.sentences.len();
    for (hi, h) in doc.entities.iter().enumerate() {
        for (ti, t) in doc.entities.iter().enumerate() {
            if hi == ti || h.is_mention_less() || t.is_mention_less() {
                continue;
            }
            let pooled = doc.pooled_evidence(&h.id, &t.id);
            for s in 0..n_sents {
                if pooled.contains(&s) {
                    f.per_pos += 1;
                } else {
                    f.per_neg += 1;
                }
            }
        }
    }
    f
}
