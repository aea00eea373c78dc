//! Scoring predicted relation triplets and their evidence.

use crate::corpus::Corpus;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};

/// One predicted triplet in the submission shape, with evidence indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub title: String,
    pub h_idx: usize,
    pub t_idx: usize,
    pub r: String,
    #[serde(default)]
    pub evidence: Vec<usize>,
}

/// Micro precision/recall/F1 with match counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ign_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence_f1: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn micro(tp: usize, predicted: usize, gold: usize) -> MetricRecord {
    let precision = if predicted == 0 {
        0.0
    } else {
        tp as f64 / predicted as f64
    };
    let recall = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
    MetricRecord {
        precision,
        recall,
        f1: f1_of(precision, recall),
        ign_f1: None,
        evidence_f1: None,
        true_positives: tp,
        false_positives: predicted - tp,
        false_negatives: gold - tp,
    }
}

type TripletKey = (String, usize, usize, String);

fn prediction_keys(predictions: &[Prediction]) -> HashSet<TripletKey> {
    predictions
        .iter()
        .map(|p| (p.title.clone(), p.h_idx, p.t_idx, p.r.clone()))
        .collect()
}

fn gold_keys(gold: &Corpus) -> HashSet<TripletKey> {
    let mut out = HashSet::new();
    for d in &gold.documents {
        for r in &d.gold_relations {
            let h = d.entity_index(&r.head_id).expect("validated corpus");
            let t = d.entity_index(&r.tail_id).expect("validated corpus");
            out.insert((d.title.clone(), h, t, r.relation.clone()));
        }
    }
    out
}

/// Micro precision/recall/F1 over exact `(document, head, tail, relation)`
/// matches.
pub fn re_scores(predictions: &[Prediction], gold: &Corpus) -> MetricRecord {
    let pred = prediction_keys(predictions);
    let gold = gold_keys(gold);
    let tp = pred.intersection(&gold).count();
    micro(tp, pred.len(), gold.len())
}

/// A relation fact keyed by the surface-name sets of both entities. Fact
/// identity is name-based so leakage is caught across documents.
pub type Fact = (Vec<String>, Vec<String>, String);

/// Facts present in the training annotations.
#[derive(Clone, Debug, Default)]
pub struct TrainFacts {
    facts: HashSet<Fact>,
}

impl TrainFacts {
    pub fn from_corpus(train: &Corpus) -> Self {
        let mut facts = HashSet::new();
        for d in &train.documents {
            for r in &d.gold_relations {
                if let (Some(h), Some(t)) = (d.entity(&r.head_id), d.entity(&r.tail_id)) {
                    facts.insert((name_set(h), name_set(t), r.relation.clone()));
                }
            }
        }
        TrainFacts { facts }
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    fn contains(&self, fact: &Fact) -> bool {
        self.facts.contains(fact)
    }
}

fn name_set(e: &crate::corpus::Entity) -> Vec<String> {
    let names: BTreeSet<String> = e.mentions.iter().map(|m| m.surface.clone()).collect();
    names.into_iter().collect()
}

/// F1 after removing predicted and gold instances whose fact already
/// appears in the training annotations.
pub fn ign_f1(predictions: &[Prediction], gold: &Corpus, train_facts: &TrainFacts) -> f64 {
    let fact_of = |title: &str, h: usize, t: usize, r: &str| -> Option<Fact> {
        let d = gold.documents.iter().find(|d| d.title == title)?;
        let he = d.entities.get(h)?;
        let te = d.entities.get(t)?;
        Some((name_set(he), name_set(te), r.to_string()))
    };
    let keep = |key: &TripletKey| -> bool {
        match fact_of(&key.0, key.1, key.2, &key.3) {
            Some(fact) => !train_facts.contains(&fact),
            None => true,
        }
    };
    let pred: HashSet<TripletKey> = prediction_keys(predictions)
        .into_iter()
        .filter(|k| keep(k))
        .collect();
    let gold: HashSet<TripletKey> = gold_keys(gold).into_iter().filter(|k| keep(k)).collect();
    let tp = pred.intersection(&gold).count();
    micro(tp, pred.len(), gold.len()).f1
}

/// Micro F1 over `(document, head, tail, relation, sentence)` tuples; a
/// predicted tuple counts only when its triplet is gold and the sentence is
/// in that triplet's gold evidence.
pub fn evidence_f1(predictions: &[Prediction], gold: &Corpus) -> f64 {
    type Tuple = (String, usize, usize, String, usize);
    let mut gold_tuples: HashSet<Tuple> = HashSet::new();
    for d in &gold.documents {
        for r in &d.gold_relations {
            let h = d.entity_index(&r.head_id).expect("validated corpus");
            let t = d.entity_index(&r.tail_id).expect("validated corpus");
            for &s in &r.evidence {
                gold_tuples.insert((d.title.clone(), h, t, r.relation.clone(), s));
            }
        }
    }
    let mut pred_tuples: HashSet<Tuple> = HashSet::new();
    for p in predictions {
        for &s in &p.evidence {
            pred_tuples.insert((p.title.clone(), p.h_idx, p.t_idx, p.r.clone(), s));
        }
    }
    let tp = pred_tuples.intersection(&gold_tuples).count();
    micro(tp, pred_tuples.len(), gold_tuples.len()).f1
}

/// A labelled row of a comparison report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportEntry {
    pub label: String,
    pub record: MetricRecord,
}

/// Deterministic multi-row comparison report.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Report {
    pub entries: Vec<ReportEntry>,
}

impl Report {
    pub fn new(entries: Vec<ReportEntry>) -> Self {
        Report { entries }
    }

    /// Fixed column order; `-` for absent optional scores.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24} {:>9} {:>9} {:>9} {:>9} {:>11} {:>6} {:>6} {:>6}\n",
            "model", "precision", "recall", "f1", "ign_f1", "evidence_f1", "tp", "fp", "fn"
        ));
        for e in &self.entries {
            let opt = |v: Option<f64>| match v {
                Some(x) => format!("{x:.4}"),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "{:<24} {:>9.4} {:>9.4} {:>9.4} {:>9} {:>11} {:>6} {:>6} {:>6}\n",
                e.label,
                e.record.precision,
                e.record.recall,
                e.record.f1,
                opt(e.record.ign_f1),
                opt(e.record.evidence_f1),
                e.record.true_positives,
                e.record.false_positives,
                e.record.false_negatives,
            ));
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("model\tprecision\trecall\tf1\tign_f1\tevidence_f1\ttp\tfp\tfn\n");
        for e in &self.entries {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
            out.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\t{}\n",
                e.label,
                e.record.precision,
                e.record.recall,
                e.record.f1,
                opt(e.record.ign_f1),
                opt(e.record.evidence_f1),
                e.record.true_positives,
                e.record.false_positives,
                e.record.false_negatives,
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}
