//! PubTator text blocks (CDR/GDA style).
//!
//! One block holds pipe-delimited title/abstract lines, tab-delimited mention
//! annotations (`pmid  start  end  text  type  concept`), and tab-delimited
//! relation lines (`pmid  REL  concept1  concept2`). Offsets refer to the
//! concatenation `title + " " + abstract`. These corpora carry no evidence
//! annotations, so parsed relations have empty evidence sets.

use super::{Corpus, CorpusError, Document, Entity, Mention, RelationInstance};
use std::collections::BTreeSet;
use std::path::Path;

/// A parsed document plus non-fatal diagnostics.
#[derive(Debug)]
pub struct ParseOutcome {
    pub document: Document,
    pub warnings: Vec<String>,
}

struct RawAnnotation {
    start: usize,
    end: usize,
    text: String,
    concept_type: String,
    concept_id: String,
}

struct SentencePiece {
    /// Char range of the sentence in the raw full text.
    raw_range: (usize, usize),
    tokens: Vec<String>,
    /// Raw char range of each token.
    token_ranges: Vec<(usize, usize)>,
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Rule-based split: break after a terminator followed by whitespace and an
/// uppercase letter.
fn split_sentences(text: &str, base: usize) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let mut bounds = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if is_terminator(chars[i]) {
            let mut j = i + 1;
            let mut saw_ws = false;
            while j < chars.len() && chars[j].is_whitespace() {
                saw_ws = true;
                j += 1;
            }
            if saw_ws && j < chars.len() && chars[j].is_uppercase() {
                bounds.push((base + start, base + i + 1));
                start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        bounds.push((base + start, base + chars.len()));
    }
    bounds
}

fn is_splittable_punct(c: char) -> bool {
    matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '(' | ')' | '[' | ']' | '"' | '\'')
}

/// Whitespace tokenization with leading/trailing punctuation split off.
fn tokenize(chars: &[char], range: (usize, usize)) -> (Vec<String>, Vec<(usize, usize)>) {
    let mut tokens = Vec::new();
    let mut ranges = Vec::new();
    let mut i = range.0;
    while i < range.1 {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < range.1 && !chars[j].is_whitespace() {
            j += 1;
        }
        // word chunk [i, j); peel punctuation from both ends
        let mut s = i;
        let mut e = j;
        while s < e && is_splittable_punct(chars[s]) {
            tokens.push(chars[s].to_string());
            ranges.push((s, s + 1));
            s += 1;
        }
        let mut tail = Vec::new();
        while e > s && is_splittable_punct(chars[e - 1]) {
            tail.push((chars[e - 1].to_string(), (e - 1, e)));
            e -= 1;
        }
        if s < e {
            tokens.push(chars[s..e].iter().collect());
            ranges.push((s, e));
        }
        for (t, r) in tail.into_iter().rev() {
            tokens.push(t);
            ranges.push(r);
        }
        i = j;
    }
    (tokens, ranges)
}

/// Parse one PubTator block into the canonical document model.
pub fn parse_pubtator(block: &str) -> Result<ParseOutcome, CorpusError> {
    let mut pmid: Option<String> = None;
    let mut title: Option<String> = None;
    let mut abstract_text: Option<String> = None;
    let mut annotations: Vec<RawAnnotation> = Vec::new();
    let mut relation_lines: Vec<(String, String, String)> = Vec::new();
    let mut warnings = Vec::new();

    for line in block.lines() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.split_once('|') {
            let (id, tagged) = rest;
            let (tag, text) = tagged.split_once('|').ok_or_else(|| {
                CorpusError::parse("text_line", format!("expected pmid|tag|text: `{line}`"))
            })?;
            match pmid.get_or_insert_with(|| id.to_string()) {
                p if p != id => {
                    return Err(CorpusError::parse("pmid", format!("mixed ids {p} and {id}")))
                }
                _ => {}
            }
            match tag {
                "t" => title = Some(text.to_string()),
                "a" => abstract_text = Some(text.to_string()),
                other => {
                    return Err(CorpusError::parse(
                        "text_line",
                        format!("unknown tag `{other}`"),
                    ))
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            [id, start, end, text, ctype, concept, ..] if start.parse::<usize>().is_ok() => {
                if pmid.as_deref().is_some_and(|p| p != *id) {
                    return Err(CorpusError::parse("pmid", "mixed ids in annotation lines"));
                }
                let start: usize = start
                    .parse()
                    .map_err(|_| CorpusError::parse("start", format!("not an offset: `{start}`")))?;
                let end: usize = end
                    .parse()
                    .map_err(|_| CorpusError::parse("end", format!("not an offset: `{end}`")))?;
                annotations.push(RawAnnotation {
                    start,
                    end,
                    text: (*text).to_string(),
                    concept_type: (*ctype).to_string(),
                    concept_id: (*concept).to_string(),
                });
            }
            [id, rel, a, b] => {
                if pmid.as_deref().is_some_and(|p| p != *id) {
                    return Err(CorpusError::parse("pmid", "mixed ids in relation lines"));
                }
                relation_lines.push(((*rel).to_string(), (*a).to_string(), (*b).to_string()));
            }
            _ => {
                return Err(CorpusError::parse(
                    "line",
                    format!("unrecognized line shape: `{line}`"),
                ))
            }
        }
    }

    let title = title.ok_or_else(|| CorpusError::parse("title", "missing title line"))?;
    let pmid = pmid.unwrap_or_default();
    let full_text = match &abstract_text {
        Some(a) => format!("{title} {a}"),
        None => title.clone(),
    };
    let chars: Vec<char> = full_text.chars().collect();
    let title_len = title.chars().count();

    // Title is always sentence 0; the abstract is split by rule.
    let mut ranges = vec![(0usize, title_len)];
    if abstract_text.is_some() {
        let abstract_str: String = chars[title_len + 1..].iter().collect();
        ranges.extend(split_sentences(&abstract_str, title_len + 1));
    }
    let pieces: Vec<SentencePiece> = ranges
        .iter()
        .map(|&r| {
            let (tokens, token_ranges) = tokenize(&chars, r);
            SentencePiece {
                raw_range: r,
                tokens,
                token_ranges,
            }
        })
        .collect();
    if pieces.iter().any(|p| p.tokens.is_empty()) {
        return Err(CorpusError::parse("sentence", "empty sentence after split"));
    }

    let sentences: Vec<Vec<String>> = pieces.iter().map(|p| p.tokens.clone()).collect();
    let canon_offsets: Vec<Vec<(usize, usize)>> = sentences
        .iter()
        .map(|s| super::token_char_offsets(s))
        .collect();

    let mut entities: Vec<Entity> = Vec::new();
    for ann in &annotations {
        if ann.concept_id == "-1" {
            warnings.push(format!(
                "dropping unlinked annotation `{}` at [{}, {})",
                ann.text, ann.start, ann.end
            ));
            continue;
        }
        let sent = pieces
            .iter()
            .position(|p| p.raw_range.0 <= ann.start && ann.start < p.raw_range.1)
            .ok_or_else(|| {
                CorpusError::Validation(format!(
                    "annotation offset {} not resolvable to a sentence",
                    ann.start
                ))
            })?;
        let piece = &pieces[sent];
        let mut end = ann.end;
        if end > piece.raw_range.1 {
            warnings.push(format!(
                "annotation `{}` straddles a sentence boundary; clipped to sentence {sent}",
                ann.text
            ));
            end = piece.raw_range.1;
        }
        let covered: Vec<usize> = piece
            .token_ranges
            .iter()
            .enumerate()
            .filter(|(_, &(ts, te))| ts < end && ann.start < te)
            .map(|(i, _)| i)
            .collect();
        let (first, last) = match (covered.first(), covered.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => {
                return Err(CorpusError::Validation(format!(
                    "annotation span [{}, {}) covers no tokens",
                    ann.start, ann.end
                )))
            }
        };
        let char_span = (canon_offsets[sent][first].0, canon_offsets[sent][last].1);
        let surface = sentences[sent][first..=last].join(" ");
        let mention = Mention {
            entity_id: ann.concept_id.clone(),
            sentence_index: sent,
            char_span,
            surface,
        };
        match entities.iter_mut().find(|e| e.id == ann.concept_id) {
            Some(e) => e.mentions.push(mention),
            None => entities.push(Entity {
                id: ann.concept_id.clone(),
                entity_type: ann.concept_type.clone(),
                mentions: vec![mention],
            }),
        }
    }

    let mut gold_relations: Vec<RelationInstance> = Vec::new();
    for (rel, a, b) in &relation_lines {
        for id in [a, b] {
            if !entities.iter().any(|e| &e.id == id) {
                return Err(CorpusError::Validation(format!(
                    "relation references unknown concept `{id}`"
                )));
            }
        }
        let inst = RelationInstance {
            head_id: a.clone(),
            tail_id: b.clone(),
            relation: rel.clone(),
            evidence: BTreeSet::new(),
        };
        if gold_relations.contains(&inst) {
            warnings.push(format!("duplicate relation line ({rel}, {a}, {b}) ignored"));
        } else {
            gold_relations.push(inst);
        }
    }

    let document = Document {
        title: pmid,
        sentences,
        entities,
        gold_relations,
    };
    document.validate(true)?;
    Ok(ParseOutcome {
        document,
        warnings,
    })
}

/// Parse a whole PubTator file: blank-line separated blocks.
pub fn parse_corpus(text: &str) -> Result<(Corpus, Vec<String>), CorpusError> {
    let mut documents = Vec::new();
    let mut warnings = Vec::new();
    for block in text.split("\n\n").map(str::trim).filter(|b| !b.is_empty()) {
        let outcome = parse_pubtator(block)?;
        documents.push(outcome.document);
        warnings.extend(outcome.warnings);
    }
    Ok((Corpus::new(documents), warnings))
}

pub fn load_corpus(path: &Path) -> Result<(Corpus, Vec<String>), CorpusError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CorpusError::parse("file", format!("{}: {e}", path.display())))?;
    parse_corpus(&text)
}
