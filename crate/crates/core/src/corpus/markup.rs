//! Marked-up token sequences for the encoder.
//!
//! Every sentence is wrapped in a leading classifier token and a trailing
//! separator token, every mention in a pair of `*` entity markers, and
//! segment indices alternate 0/1 by sentence. Anchors record where each
//! sentence's classifier token and each mention's opening marker landed.

use super::{token_char_offsets, CorpusError, Document};

pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const MARKER_TOKEN: &str = "*";

/// Deterministic word-to-subword mapping.
pub trait Tokenizer {
    fn subtokens(&self, word: &str) -> Vec<String>;
}

/// Keeps words whole; the miniature encoder hashes them directly.
#[derive(Clone, Copy, Debug, Default)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn subtokens(&self, word: &str) -> Vec<String> {
        vec![word.to_string()]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkedDocument {
    pub tokens: Vec<String>,
    /// True for classifier/separator/marker tokens inserted by the markup.
    pub special: Vec<bool>,
    /// 0/1 alternating per sentence.
    pub segment_ids: Vec<usize>,
    pub sentence_of_token: Vec<usize>,
    sentence_anchors: Vec<usize>,
    /// Opening-marker position per `(entity index, mention ordinal)`.
    mention_anchors: Vec<Vec<usize>>,
}

impl MarkedDocument {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_anchors.len()
    }

    pub fn sentence_anchor(&self, sentence: usize) -> Option<usize> {
        self.sentence_anchors.get(sentence).copied()
    }

    pub fn mention_anchor(&self, entity_index: usize, ordinal: usize) -> Option<usize> {
        self.mention_anchors.get(entity_index)?.get(ordinal).copied()
    }

    pub fn mention_anchors(&self, entity_index: usize) -> &[usize] {
        &self.mention_anchors[entity_index]
    }

    /// The token sequence with all inserted special tokens removed.
    pub fn strip_special(&self) -> Vec<String> {
        self.tokens
            .iter()
            .zip(&self.special)
            .filter(|(_, &s)| !s)
            .map(|(t, _)| t.clone())
            .collect()
    }
}

struct MarkerGroup {
    word_start: usize,
    word_end: usize,
    /// `(entity index, mention ordinal)` sharing this marker pair.
    members: Vec<(usize, usize)>,
}

/// Insert classifier/separator tokens, entity markers, and segment indices.
///
/// Nested mentions get markers ordered outer-open, inner-open, inner-close,
/// outer-close; mentions with identical spans share one marker pair.
pub fn insert_markup(doc: &Document, tok: &dyn Tokenizer) -> Result<MarkedDocument, CorpusError> {
    doc.validate(false)?;

    let mut out = MarkedDocument {
        tokens: Vec::new(),
        special: Vec::new(),
        segment_ids: Vec::new(),
        sentence_of_token: Vec::new(),
        sentence_anchors: Vec::with_capacity(doc.sentences.len()),
        mention_anchors: doc
            .entities
            .iter()
            .map(|e| vec![usize::MAX; e.mentions.len()])
            .collect(),
    };

    // Mentions grouped by sentence as (entity, ordinal, word span).
    let mut per_sentence: Vec<Vec<(usize, usize, usize, usize)>> =
        vec![Vec::new(); doc.sentences.len()];
    for (ei, e) in doc.entities.iter().enumerate() {
        for (oi, m) in e.mentions.iter().enumerate() {
            let offsets = token_char_offsets(&doc.sentences[m.sentence_index]);
            let ws = offsets
                .iter()
                .position(|&(s, e)| s < m.char_span.1 && m.char_span.0 < e)
                .ok_or_else(|| {
                    CorpusError::Validation(format!(
                        "mention span {:?} of `{}` covers no tokens",
                        m.char_span, e.id
                    ))
                })?;
            let we = offsets
                .iter()
                .rposition(|&(s, e)| s < m.char_span.1 && m.char_span.0 < e)
                .expect("position found above")
                + 1;
            per_sentence[m.sentence_index].push((ei, oi, ws, we));
        }
    }

    for (si, sentence) in doc.sentences.iter().enumerate() {
        let segment = si % 2;
        let push = |out: &mut MarkedDocument, token: String, special: bool| -> usize {
            out.tokens.push(token);
            out.special.push(special);
            out.segment_ids.push(segment);
            out.sentence_of_token.push(si);
            out.tokens.len() - 1
        };

        // Group mentions with identical spans onto one marker pair.
        let mut groups: Vec<MarkerGroup> = Vec::new();
        for &(ei, oi, ws, we) in &per_sentence[si] {
            match groups
                .iter_mut()
                .find(|g| g.word_start == ws && g.word_end == we)
            {
                Some(g) => g.members.push((ei, oi)),
                None => groups.push(MarkerGroup {
                    word_start: ws,
                    word_end: we,
                    members: vec![(ei, oi)],
                }),
            }
        }

        let anchor = push(&mut out, CLS_TOKEN.to_string(), true);
        out.sentence_anchors.push(anchor);

        for boundary in 0..=sentence.len() {
            // Closing markers first: inner mentions (later start) close first.
            let mut closing: Vec<&MarkerGroup> =
                groups.iter().filter(|g| g.word_end == boundary).collect();
            closing.sort_by(|a, b| b.word_start.cmp(&a.word_start));
            for _ in &closing {
                push(&mut out, MARKER_TOKEN.to_string(), true);
            }
            // Opening markers: outer mentions (later end) open first.
            let mut opening: Vec<&MarkerGroup> =
                groups.iter().filter(|g| g.word_start == boundary).collect();
            opening.sort_by(|a, b| b.word_end.cmp(&a.word_end));
            for g in &opening {
                let pos = push(&mut out, MARKER_TOKEN.to_string(), true);
                for &(ei, oi) in &g.members {
                    out.mention_anchors[ei][oi] = pos;
                }
            }
            if boundary < sentence.len() {
                let subs = tok.subtokens(&sentence[boundary]);
                if subs.is_empty() {
                    return Err(CorpusError::Validation(format!(
                        "tokenizer produced no subtokens for `{}`",
                        sentence[boundary]
                    )));
                }
                for s in subs {
                    push(&mut out, s, false);
                }
            }
        }
        push(&mut out, SEP_TOKEN.to_string(), true);
    }

    debug_assert!(out
        .mention_anchors
        .iter()
        .flatten()
        .all(|&p| p != usize::MAX));
    Ok(out)
}
