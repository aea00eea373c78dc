//! DocRED-style JSON records.
//!
//! A record carries `title`, `sents` (token lists), `vertexSet` (one mention
//! list per entity with `name`/`type`/`sent_id`/`pos`), and optional `labels`
//! (`h`, `t`, `r`, `evidence`). Entities are identified by their position in
//! `vertexSet`; parsing assigns them stable ids `E0`, `E1`, ….

use super::{
    token_char_offsets, Corpus, CorpusError, Document, Entity, Mention, RelationInstance,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    title: String,
    sents: Vec<Vec<String>>,
    #[serde(rename = "vertexSet")]
    vertex_set: Vec<Vec<RawMention>>,
    #[serde(default)]
    labels: Vec<RawLabel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMention {
    name: String,
    #[serde(rename = "type")]
    mention_type: String,
    sent_id: usize,
    pos: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLabel {
    h: usize,
    t: usize,
    r: String,
    #[serde(default)]
    evidence: Vec<usize>,
}

pub fn entity_id(index: usize) -> String {
    format!("E{index}")
}

/// Parse one DocRED record into the canonical document model.
pub fn parse_docred(record: &Value) -> Result<Document, CorpusError> {
    let raw: RawRecord = serde_json::from_value(record.clone())
        .map_err(|e| CorpusError::parse("record", e.to_string()))?;
    let offsets: Vec<Vec<(usize, usize)>> = raw.sents.iter().map(|s| token_char_offsets(s)).collect();

    let mut entities = Vec::with_capacity(raw.vertex_set.len());
    for (ei, mentions) in raw.vertex_set.iter().enumerate() {
        if mentions.is_empty() {
            return Err(CorpusError::parse(
                "vertexSet",
                format!("entity {ei} has no mentions"),
            ));
        }
        let id = entity_id(ei);
        let mut out = Vec::with_capacity(mentions.len());
        for m in mentions {
            if m.sent_id >= raw.sents.len() {
                return Err(CorpusError::parse(
                    "sent_id",
                    format!("entity {ei} mention points at sentence {}", m.sent_id),
                ));
            }
            let toks = &raw.sents[m.sent_id];
            let (start, end) = (m.pos[0], m.pos[1]);
            if start >= end || end > toks.len() {
                return Err(CorpusError::parse(
                    "pos",
                    format!(
                        "entity {ei} token span [{start}, {end}) outside {}-token sentence {}",
                        toks.len(),
                        m.sent_id
                    ),
                ));
            }
            let char_span = (offsets[m.sent_id][start].0, offsets[m.sent_id][end - 1].1);
            let surface = toks[start..end].join(" ");
            out.push(Mention {
                entity_id: id.clone(),
                sentence_index: m.sent_id,
                char_span,
                surface,
            });
        }
        // Mention-level types can disagree; the first mention's type is the
        // entity type.
        entities.push(Entity {
            id,
            entity_type: mentions[0].mention_type.clone(),
            mentions: out,
        });
    }

    let mut gold_relations = Vec::with_capacity(raw.labels.len());
    for l in &raw.labels {
        for (field, idx) in [("h", l.h), ("t", l.t)] {
            if idx >= entities.len() {
                return Err(CorpusError::parse(
                    field,
                    format!("entity index {idx} out of range for {} entities", entities.len()),
                ));
            }
        }
        gold_relations.push(RelationInstance {
            head_id: entity_id(l.h),
            tail_id: entity_id(l.t),
            relation: l.r.clone(),
            evidence: l.evidence.iter().copied().collect::<BTreeSet<usize>>(),
        });
    }

    let doc = Document {
        title: raw.title,
        sentences: raw.sents,
        entities,
        gold_relations,
    };
    doc.validate(true)?;
    Ok(doc)
}

/// Render a document back into the DocRED record shape.
pub fn to_record(doc: &Document) -> Value {
    let offsets: Vec<Vec<(usize, usize)>> =
        doc.sentences.iter().map(|s| token_char_offsets(s)).collect();
    let token_span = |m: &Mention| -> [usize; 2] {
        let offs = &offsets[m.sentence_index];
        let start = offs
            .iter()
            .position(|&(s, e)| s <= m.char_span.0 && m.char_span.0 < e)
            .expect("mention span aligned to tokens");
        let end = offs
            .iter()
            .rposition(|&(s, e)| s < m.char_span.1 && m.char_span.1 <= e)
            .expect("mention span aligned to tokens");
        [start, end + 1]
    };
    let vertex_set: Vec<Vec<RawMention>> = doc
        .entities
        .iter()
        .map(|e| {
            e.mentions
                .iter()
                .map(|m| RawMention {
                    name: m.surface.clone(),
                    mention_type: e.entity_type.clone(),
                    sent_id: m.sentence_index,
                    pos: token_span(m),
                })
                .collect()
        })
        .collect();
    let labels: Vec<RawLabel> = doc
        .gold_relations
        .iter()
        .map(|r| RawLabel {
            h: doc.entity_index(&r.head_id).expect("validated head"),
            t: doc.entity_index(&r.tail_id).expect("validated tail"),
            r: r.relation.clone(),
            evidence: r.evidence.iter().copied().collect(),
        })
        .collect();
    serde_json::to_value(RawRecord {
        title: doc.title.clone(),
        sents: doc.sentences.clone(),
        vertex_set,
        labels,
    })
    .expect("record serialization cannot fail")
}

/// Parse a JSON array of DocRED records.
pub fn parse_corpus(json: &str) -> Result<Corpus, CorpusError> {
    let records: Vec<Value> =
        serde_json::from_str(json).map_err(|e| CorpusError::parse("corpus", e.to_string()))?;
    let documents = records
        .iter()
        .map(parse_docred)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus::new(documents))
}

pub fn corpus_to_json(corpus: &Corpus) -> String {
    let records: Vec<Value> = corpus.documents.iter().map(to_record).collect();
    serde_json::to_string_pretty(&records).expect("corpus serialization cannot fail")
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CorpusError::parse("file", format!("{}: {e}", path.display())))?;
    parse_corpus(&text)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    std::fs::write(path, corpus_to_json(corpus))
        .map_err(|e| CorpusError::parse("file", format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample_record() -> Value {
        json!({
            "title": "Sample",
            "sents": [["Ada", "founded", "Acme", "."], ["Ada", "led", "it", "."]],
            "vertexSet": [
                [
                    {"name": "Ada", "type": "PER", "sent_id": 0, "pos": [0, 1]},
                    {"name": "Ada", "type": "PER", "sent_id": 1, "pos": [0, 1]}
                ],
                [
                    {"name": "Acme", "type": "ORG", "sent_id": 0, "pos": [2, 3]}
                ]
            ],
            "labels": [
                {"h": 0, "t": 1, "r": "P112", "evidence": [0]}
            ]
        })
    }

    #[test]
    fn parses_structural_round_trip_counts() {
        let doc = parse_docred(&sample_record()).unwrap();
        assert_eq!(doc.sentences.len(), 2);
        assert_eq!(doc.entities.len(), 2);
        assert_eq!(doc.gold_relations.len(), 1);
        assert_eq!(doc.gold_relations[0].evidence, BTreeSet::from([0]));
        assert_eq!(doc.entities[0].mentions[0].surface, "Ada");
        assert_eq!(doc.entities[1].mentions[0].char_span, (12, 16));
    }

    #[test]
    fn parse_serialize_parse_is_a_fixed_point() {
        let doc = parse_docred(&sample_record()).unwrap();
        let doc2 = parse_docred(&to_record(&doc)).unwrap();
        assert_eq!(doc, doc2);
        let doc3 = parse_docred(&to_record(&doc2)).unwrap();
        assert_eq!(doc2, doc3);
    }

    #[test]
    fn out_of_range_evidence_is_a_validation_error() {
        let mut record = sample_record();
        record["labels"][0]["evidence"] = json!([5]);
        let err = parse_docred(&record).unwrap_err();
        assert!(matches!(err, CorpusError::Validation(_)), "got {err}");
    }

    #[test]
    fn missing_field_is_a_parse_error_naming_the_field() {
        let mut record = sample_record();
        record.as_object_mut().unwrap().remove("sents");
        let err = parse_docred(&record).unwrap_err();
        assert!(err.to_string().contains("sents"), "got {err}");
    }

    #[test]
    fn bad_entity_index_is_a_parse_error() {
        let mut record = sample_record();
        record["labels"][0]["t"] = json!(9);
        let err = parse_docred(&record).unwrap_err();
        assert!(err.to_string().contains('t'), "got {err}");
    }

    #[test]
    fn multi_token_mentions_keep_their_span() {
        let record = json!({
            "title": "Long",
            "sents": [["The", "New", "York", "City", "area", "."]],
            "vertexSet": [
                [{"name": "New York City", "type": "LOC", "sent_id": 0, "pos": [1, 4]}]
            ],
            "labels": []
        });
        let doc = parse_docred(&record).unwrap();
        assert_eq!(doc.entities[0].mentions[0].surface, "New York City");
        let doc2 = parse_docred(&to_record(&doc)).unwrap();
        assert_eq!(doc, doc2);
    }
}
