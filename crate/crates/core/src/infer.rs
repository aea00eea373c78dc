//! Ensemble inference with evidence-based augmentation.
//!
//! The trained pipeline first scores every candidate triplet. A rejection
//! rate chosen on dev data (minimizing risk² + rejection-rate²) defines an
//! uncertain set; each uncertain triplet is re-scored twice — once on a
//! pseudo document built from its predicted evidence sentences and once
//! under an attention mask of per-sentence evidence probabilities — and the
//! three confidences are blended with a per-relation bias fitted on dev.
//! Confident triplets keep their original decision untouched.

use crate::corpus::{build_pseudo_document, Corpus, Document};
use crate::eval::Prediction;
use crate::loss::blend_loss_grad;
use crate::model::{DocPass, Model, ModelError};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("empty dev set: cannot select a rejection rate")]
    EmptyDevSet,
    #[error("dev corpus carries no gold relations; cannot fit θ/τ")]
    MissingDevGold,
}

/// Identity of one candidate triplet inside a corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripletKey {
    pub doc: usize,
    pub head: usize,
    pub tail: usize,
    pub relation: usize,
}

/// Confidences of one triplet under the original pipeline and, once
/// computed, under both augmentations and the blend.
#[derive(Clone, Debug)]
pub struct TripletConfidence {
    pub key: TripletKey,
    /// `L_RE − L_TH` from the original pass.
    pub l_o: f64,
    pub l_d: Option<f64>,
    pub l_m: Option<f64>,
    pub l_b: Option<f64>,
}

/// Original-pipeline confidences for every `(pair, relation)` candidate.
pub fn predict_original(model: &Model, corpus: &Corpus) -> Result<Vec<TripletConfidence>, InferError> {
    let mut out = Vec::new();
    for (di, doc) in corpus.documents.iter().enumerate() {
        let mut pass = model.begin_pass(doc)?;
        for pc in model.confidences(&mut pass)? {
            for (rel, &conf) in pc.confidences.iter().enumerate() {
                out.push(TripletConfidence {
                    key: TripletKey {
                        doc: di,
                        head: pc.head,
                        tail: pc.tail,
                        relation: rel,
                    },
                    l_o: conf,
                    l_d: None,
                    l_m: None,
                    l_b: None,
                });
            }
        }
    }
    Ok(out)
}

/// Gold validity aligned with a confidence slice. Gold relations outside the
/// model inventory never appear among candidates and are ignored.
pub fn gold_validity(
    model: &Model,
    corpus: &Corpus,
    confidences: &[TripletConfidence],
) -> Vec<bool> {
    let mut gold: HashSet<TripletKey> = HashSet::new();
    for (di, doc) in corpus.documents.iter().enumerate() {
        for r in &doc.gold_relations {
            let (Some(h), Some(t)) = (doc.entity_index(&r.head_id), doc.entity_index(&r.tail_id))
            else {
                continue;
            };
            if let Some(rel) = model.inventory.relation_index(&r.relation) {
                gold.insert(TripletKey {
                    doc: di,
                    head: h,
                    tail: t,
                    relation: rel,
                });
            }
        }
    }
    confidences.iter().map(|c| gold.contains(&c.key)).collect()
}

/// Indices sorted by ascending `|L_O|`, ties broken by input order.
fn uncertainty_order(confidences: &[TripletConfidence]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| {
        confidences[a]
            .l_o
            .abs()
            .partial_cmp(&confidences[b].l_o.abs())
            .expect("finite confidences")
            .then(a.cmp(&b))
    });
    order
}

/// Sweep rejection rates on a 0.1% grid and pick the one minimizing
/// `risk² + rejection-rate²`; ties go to the smaller rate.
///
/// Risk is the error rate of the `L_O > 0` decision over the retained
/// (non-rejected) triplets.
pub fn select_rejection_rate(
    confidences: &[TripletConfidence],
    valid: &[bool],
) -> Result<f64, InferError> {
    let n = confidences.len();
    if n == 0 {
        return Err(InferError::EmptyDevSet);
    }
    assert_eq!(n, valid.len());
    let order = uncertainty_order(confidences);
    // prefix_wrong[k]: wrong decisions among the k least-confident triplets
    let mut prefix_wrong = vec![0usize; n + 1];
    for (i, &idx) in order.iter().enumerate() {
        let correct = (confidences[idx].l_o > 0.0) == valid[idx];
        prefix_wrong[i + 1] = prefix_wrong[i] + usize::from(!correct);
    }
    let total_wrong = prefix_wrong[n];

    let objective = |k: usize| -> f64 {
        let retained = n - k;
        let risk = if retained == 0 {
            0.0
        } else {
            (total_wrong - prefix_wrong[k]) as f64 / retained as f64
        };
        let rejection = k as f64 / n as f64;
        risk * risk + rejection * rejection
    };

    // Integer permille grid keeps k(θ) exact.
    let mut best_m = 0usize;
    let mut best_obj = objective(0);
    for m in 1..=1000usize {
        let k = m * n / 1000;
        let obj = objective(k);
        if obj < best_obj {
            best_obj = obj;
            best_m = m;
        }
    }
    Ok(best_m as f64 / 10.0)
}

/// The uncertain subset: indices into the confidence slice.
#[derive(Clone, Debug)]
pub struct UncertainSet {
    pub members: Vec<usize>,
    pub theta_percent: f64,
    pub per_pair_cap: usize,
}

impl UncertainSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Keep the lowest-`|L_O|` θ% of triplets, then at most `per_pair_cap` per
/// entity pair (lowest `|L_O|` first, ties by relation index).
pub fn build_uncertain_set(
    confidences: &[TripletConfidence],
    theta_percent: f64,
    per_pair_cap: usize,
) -> UncertainSet {
    let n = confidences.len();
    // permille arithmetic keeps grid values exact
    let permille = (theta_percent * 10.0).round() as usize;
    let k = permille * n / 1000;
    let order = uncertainty_order(confidences);
    let mut picked: Vec<usize> = order[..k].to_vec();
    // within each pair: lowest |L_O| first, ties by relation index
    picked.sort_by(|&a, &b| {
        let ka = &confidences[a];
        let kb = &confidences[b];
        (ka.key.doc, ka.key.head, ka.key.tail)
            .cmp(&(kb.key.doc, kb.key.head, kb.key.tail))
            .then(
                ka.l_o
                    .abs()
                    .partial_cmp(&kb.l_o.abs())
                    .expect("finite confidences")
                    .then(ka.key.relation.cmp(&kb.key.relation)),
            )
    });
    let mut members = Vec::with_capacity(picked.len());
    let mut pair_counts: HashMap<(usize, usize, usize), usize> = HashMap::new();
    for idx in picked {
        let key = &confidences[idx].key;
        let count = pair_counts.entry((key.doc, key.head, key.tail)).or_insert(0);
        if *count < per_pair_cap {
            *count += 1;
            members.push(idx);
        }
    }
    members.sort_unstable();
    UncertainSet {
        members,
        theta_percent,
        per_pair_cap,
    }
}

/// Per-sentence evidence probabilities for an assumed-valid triplet.
pub fn fer_probabilities(
    model: &Model,
    pass: &mut DocPass,
    key: TripletKey,
) -> Result<Vec<f64>, InferError> {
    Ok(model.fer_probabilities(pass, key.head, key.tail, key.relation)?)
}

/// Counters for the rare fallback paths of the augmentation stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentDiagnostics {
    /// Evidence set empty; fell back to the entities' mention sentences.
    pub empty_kept_fallbacks: usize,
    /// Evidence set kept but extended so both entities stay representable.
    pub extended_kept: usize,
    /// No usable sentences at all; original confidence passed through.
    pub passthroughs: usize,
    /// Pairs whose attention product degenerated to uniform weights.
    pub degenerate_pairs: usize,
}

fn mention_sentences(doc: &Document, entity: usize) -> BTreeSet<usize> {
    doc.entities[entity]
        .mentions
        .iter()
        .map(|m| m.sentence_index)
        .collect()
}

/// Pseudo-document augmentation: keep sentences with evidence probability
/// above `alpha`, rebuild and re-encode the document, and re-score the
/// triplet. Returns `L_D`.
pub fn augment_pseudo_document(
    model: &Model,
    doc: &Document,
    key: TripletKey,
    fer_probs: &[f64],
    alpha: f64,
    l_o: f64,
    diag: &mut AugmentDiagnostics,
) -> Result<f64, InferError> {
    let mut kept: BTreeSet<usize> = fer_probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > alpha)
        .map(|(s, _)| s)
        .collect();
    if kept.is_empty() {
        let mut fallback = mention_sentences(doc, key.head);
        fallback.extend(mention_sentences(doc, key.tail));
        if fallback.is_empty() {
            diag.passthroughs += 1;
            return Ok(l_o);
        }
        diag.empty_kept_fallbacks += 1;
        kept = fallback;
    } else {
        // Both entities must stay representable in the pseudo document.
        let mut extended = false;
        for entity in [key.head, key.tail] {
            let sentences = mention_sentences(doc, entity);
            if sentences.is_disjoint(&kept) {
                kept.extend(sentences);
                extended = true;
            }
        }
        if extended {
            diag.extended_kept += 1;
        }
    }
    let pseudo = build_pseudo_document(doc, &kept)?;
    let mut pass = model.begin_pass(&pseudo)?;
    let scores = model.pair_scores(&mut pass, key.head, key.tail, None)?;
    let l_d = scores.logits.confidence(&pass.graph, key.relation);
    diag.degenerate_pairs += pass.degenerate_pairs;
    Ok(l_d)
}

/// Attention-mask augmentation: scale the pair-context weights by each
/// token's sentence evidence probability (special tokens inherit their
/// sentence's probability) and re-score. Returns `L_M`.
pub fn augment_attention_mask(
    model: &Model,
    pass: &mut DocPass,
    key: TripletKey,
    fer_probs: &[f64],
    diag: &mut AugmentDiagnostics,
) -> Result<f64, InferError> {
    let mask = Tensor::row_vec(
        pass.marked
            .sentence_of_token
            .iter()
            .map(|&s| fer_probs[s])
            .collect(),
    );
    let before = pass.degenerate_pairs;
    let scores = model.pair_scores(pass, key.head, key.tail, Some(&mask))?;
    diag.degenerate_pairs += pass.degenerate_pairs - before;
    Ok(scores.logits.confidence(&pass.graph, key.relation))
}

/// One blending bias per relation type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendParameters {
    pub tau: Vec<f64>,
}

/// Bias magnitude cap; beyond it the decision is saturated anyway.
pub const TAU_CAP: f64 = 20.0;

/// Convergence threshold on |dℓ/dτ|.
pub const TAU_GRAD_TOL: f64 = 1e-8;

/// Fit one bias per relation by minimizing the blending loss over the
/// uncertain dev triplets. The objective is convex in each bias; a monotone
/// bisection on its increasing gradient finds the minimizer. Relations
/// absent from the uncertain set keep a zero bias.
pub fn fit_blend(
    entries: &[(TripletKey, f64, bool)],
    n_relations: usize,
) -> BlendParameters {
    let mut tau = vec![0.0; n_relations];
    for rel in 0..n_relations {
        let sums: Vec<f64> = entries
            .iter()
            .filter(|(k, _, _)| k.relation == rel)
            .map(|&(_, s, _)| s)
            .collect();
        if sums.is_empty() {
            continue;
        }
        let valid: Vec<bool> = entries
            .iter()
            .filter(|(k, _, _)| k.relation == rel)
            .map(|&(_, _, v)| v)
            .collect();
        tau[rel] = minimize_blend(&sums, &valid);
    }
    BlendParameters { tau }
}

fn minimize_blend(sums: &[f64], valid: &[bool]) -> f64 {
    // gradient is strictly increasing in tau
    let g = |tau: f64| blend_loss_grad(sums, valid, tau);
    let (mut lo, mut hi) = (-TAU_CAP, TAU_CAP);
    if g(lo) >= 0.0 {
        return lo;
    }
    if g(hi) <= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm.abs() <= TAU_GRAD_TOL {
            return mid;
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Predictions of one corpus plus the auditable confidence dump.
pub struct SplitPredictions {
    pub predictions: Vec<Prediction>,
    pub confidences: Vec<TripletConfidence>,
    pub uncertain: HashSet<TripletKey>,
    pub diagnostics: AugmentDiagnostics,
}

/// One line of the confidence dump.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub title: String,
    pub h_idx: usize,
    pub t_idx: usize,
    pub r: String,
    pub l_o: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_b: Option<f64>,
    pub in_uncertain: bool,
}

impl SplitPredictions {
    /// Line-delimited JSON records for auditing.
    pub fn dump(&self, model: &Model, corpus: &Corpus) -> String {
        let mut out = String::new();
        for c in &self.confidences {
            let record = ConfidenceRecord {
                title: corpus.documents[c.key.doc].title.clone(),
                h_idx: c.key.head,
                t_idx: c.key.tail,
                r: model.inventory.relations[c.key.relation].clone(),
                l_o: c.l_o,
                l_d: c.l_d,
                l_m: c.l_m,
                l_b: c.l_b,
                in_uncertain: self.uncertain.contains(&c.key),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Final decision rule over a scored corpus: uncertain triplets are
/// predicted iff `L_B > 0`, the rest iff `L_O > 0`; evidence comes from the
/// original pass at threshold `alpha`.
pub fn final_predictions(
    model: &Model,
    corpus: &Corpus,
    confidences: &[TripletConfidence],
    uncertain: &HashSet<TripletKey>,
    fer_cache: &mut HashMap<TripletKey, Vec<f64>>,
    alpha: f64,
) -> Result<Vec<Prediction>, InferError> {
    let mut by_doc: HashMap<usize, Vec<&TripletConfidence>> = HashMap::new();
    for c in confidences {
        by_doc.entry(c.key.doc).or_default().push(c);
    }
    let mut docs: Vec<usize> = by_doc.keys().copied().collect();
    docs.sort_unstable();

    let mut out = Vec::new();
    for di in docs {
        let doc = &corpus.documents[di];
        let mut pass: Option<DocPass> = None;
        for c in &by_doc[&di] {
            let predicted = if uncertain.contains(&c.key) {
                c.l_b.expect("uncertain triplets are blended") > 0.0
            } else {
                c.l_o > 0.0
            };
            if !predicted {
                continue;
            }
            let probs = match fer_cache.get(&c.key) {
                Some(p) => p.clone(),
                None => {
                    if pass.is_none() {
                        pass = Some(model.begin_pass(doc)?);
                    }
                    let p = fer_probabilities(model, pass.as_mut().unwrap(), c.key)?;
                    fer_cache.insert(c.key, p.clone());
                    p
                }
            };
            let evidence: Vec<usize> = probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > alpha)
                .map(|(s, _)| s)
                .collect();
            out.push(Prediction {
                title: doc.title.clone(),
                h_idx: c.key.head,
                t_idx: c.key.tail,
                r: model.inventory.relations[c.key.relation].clone(),
                evidence,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct EnsembleOptions {
    pub alpha: f64,
    pub per_pair_cap: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            alpha: 0.5,
            per_pair_cap: 10,
        }
    }
}

/// Everything Algorithm-style ensemble inference produces for one run.
pub struct EnsembleRun {
    pub theta_percent: f64,
    pub blend: BlendParameters,
    pub dev: SplitPredictions,
    pub target: Option<SplitPredictions>,
}

fn augment_split(
    model: &Model,
    corpus: &Corpus,
    confidences: &mut [TripletConfidence],
    set: &UncertainSet,
    alpha: f64,
) -> Result<(HashMap<TripletKey, Vec<f64>>, AugmentDiagnostics), InferError> {
    let mut fer_cache: HashMap<TripletKey, Vec<f64>> = HashMap::new();
    let mut diag = AugmentDiagnostics::default();
    // group members by document so each original encoding is reused
    let mut by_doc: HashMap<usize, Vec<usize>> = HashMap::new();
    for &idx in &set.members {
        by_doc.entry(confidences[idx].key.doc).or_default().push(idx);
    }
    let mut docs: Vec<usize> = by_doc.keys().copied().collect();
    docs.sort_unstable();
    for di in docs {
        let doc = &corpus.documents[di];
        let mut pass = model.begin_pass(doc)?;
        for &idx in &by_doc[&di] {
            let key = confidences[idx].key;
            let l_o = confidences[idx].l_o;
            let probs = fer_probabilities(model, &mut pass, key)?;
            let l_d =
                augment_pseudo_document(model, doc, key, &probs, alpha, l_o, &mut diag)?;
            let l_m = augment_attention_mask(model, &mut pass, key, &probs, &mut diag)?;
            fer_cache.insert(key, probs);
            confidences[idx].l_d = Some(l_d);
            confidences[idx].l_m = Some(l_m);
        }
        diag.degenerate_pairs += pass.degenerate_pairs;
    }
    Ok((fer_cache, diag))
}

fn blend_members(
    confidences: &mut [TripletConfidence],
    set: &UncertainSet,
    blend: &BlendParameters,
) {
    for &idx in &set.members {
        let c = &mut confidences[idx];
        let sum = c.l_o + c.l_d.expect("augmented") + c.l_m.expect("augmented");
        c.l_b = Some(sum - blend.tau[c.key.relation]);
    }
}

/// Full ensemble inference: θ and τ fitted on the dev corpus, then applied
/// to the dev split itself and, when given, to a target split.
pub fn run_ensemble(
    model: &Model,
    dev: &Corpus,
    target: Option<&Corpus>,
    opts: EnsembleOptions,
) -> Result<EnsembleRun, InferError> {
    if dev.documents.iter().all(|d| d.gold_relations.is_empty()) {
        return Err(InferError::MissingDevGold);
    }
    let mut dev_conf = predict_original(model, dev)?;
    let validity = gold_validity(model, dev, &dev_conf);
    let theta = select_rejection_rate(&dev_conf, &validity)?;
    let dev_set = build_uncertain_set(&dev_conf, theta, opts.per_pair_cap);
    let (mut dev_cache, dev_diag) = augment_split(model, dev, &mut dev_conf, &dev_set, opts.alpha)?;

    let entries: Vec<(TripletKey, f64, bool)> = dev_set
        .members
        .iter()
        .map(|&idx| {
            let c = &dev_conf[idx];
            let sum = c.l_o + c.l_d.expect("augmented") + c.l_m.expect("augmented");
            (c.key, sum, validity[idx])
        })
        .collect();
    let blend = fit_blend(&entries, model.inventory.relation_count());
    blend_members(&mut dev_conf, &dev_set, &blend);

    let dev_uncertain: HashSet<TripletKey> =
        dev_set.members.iter().map(|&i| dev_conf[i].key).collect();
    let dev_predictions = final_predictions(
        model,
        dev,
        &dev_conf,
        &dev_uncertain,
        &mut dev_cache,
        opts.alpha,
    )?;
    let dev_split = SplitPredictions {
        predictions: dev_predictions,
        confidences: dev_conf,
        uncertain: dev_uncertain,
        diagnostics: dev_diag,
    };

    let target_split = match target {
        None => None,
        Some(corpus) => {
            let mut conf = predict_original(model, corpus)?;
            let set = build_uncertain_set(&conf, theta, opts.per_pair_cap);
            let (mut cache, diag) = augment_split(model, corpus, &mut conf, &set, opts.alpha)?;
            blend_members(&mut conf, &set, &blend);
            let uncertain: HashSet<TripletKey> =
                set.members.iter().map(|&i| conf[i].key).collect();
            let predictions =
                final_predictions(model, corpus, &conf, &uncertain, &mut cache, opts.alpha)?;
            Some(SplitPredictions {
                predictions,
                confidences: conf,
                uncertain,
                diagnostics: diag,
            })
        }
    };

    Ok(EnsembleRun {
        theta_percent: theta,
        blend,
        dev: dev_split,
        target: target_split,
    })
}

/// Original-pipeline predictions only (no augmentation, no blending).
pub fn predict_plain(
    model: &Model,
    corpus: &Corpus,
    alpha: f64,
) -> Result<SplitPredictions, InferError> {
    let confidences = predict_original(model, corpus)?;
    let uncertain = HashSet::new();
    let mut cache = HashMap::new();
    let predictions =
        final_predictions(model, corpus, &confidences, &uncertain, &mut cache, alpha)?;
    Ok(SplitPredictions {
        predictions,
        confidences,
        uncertain,
        diagnostics: AugmentDiagnostics::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{generate, SyntheticConfig};
    use crate::loss::blend_loss;
    use crate::model::{Model, ModelConfig};

    fn conf(doc: usize, head: usize, tail: usize, rel: usize, l_o: f64) -> TripletConfidence {
        TripletConfidence {
            key: TripletKey {
                doc,
                head,
                tail,
                relation: rel,
            },
            l_o,
            l_d: None,
            l_m: None,
            l_b: None,
        }
    }

    #[test]
    fn worked_ten_triplet_rejection_example() {
        // 10 triplets; exactly the 2 with lowest |L_O| are wrong.
        let mut confs = Vec::new();
        let mut valid = Vec::new();
        for i in 0..10 {
            let l_o = 0.1 * (i + 1) as f64; // ascending |L_O|, all predicted
            confs.push(conf(0, 0, 1, i, l_o));
            // predicted=true; wrong for the two least confident
            valid.push(i >= 2);
        }
        let theta = select_rejection_rate(&confs, &valid).unwrap();
        assert!((theta - 10.0).abs() < 1e-9, "theta {theta}");
        // the k=1 objective value from the sweep
        let risk: f64 = 1.0 / 9.0;
        let obj: f64 = risk * risk + 0.01;
        assert!((obj - 0.02235).abs() < 1e-4);
    }

    #[test]
    fn all_correct_selects_zero_rejection() {
        let confs: Vec<_> = (0..8).map(|i| conf(0, 0, 1, i, 1.0 + i as f64)).collect();
        let valid = vec![true; 8];
        let theta = select_rejection_rate(&confs, &valid).unwrap();
        assert_eq!(theta, 0.0);
    }

    #[test]
    fn empty_dev_set_errors() {
        assert!(matches!(
            select_rejection_rate(&[], &[]),
            Err(InferError::EmptyDevSet)
        ));
    }

    #[test]
    fn retained_sets_nest_as_theta_grows() {
        let confs: Vec<_> = (0..50)
            .map(|i| conf(0, i / 7, (i / 7) + 1 + i % 7, i % 5, (i as f64 * 0.37).sin()))
            .collect();
        let all: HashSet<usize> = (0..confs.len()).collect();
        let mut previous_retained: Option<HashSet<usize>> = None;
        for theta in [0.0, 10.0, 25.0, 60.0, 100.0] {
            let set = build_uncertain_set(&confs, theta, usize::MAX);
            let rejected: HashSet<usize> = set.members.iter().copied().collect();
            let retained: HashSet<usize> = all.difference(&rejected).copied().collect();
            if let Some(prev) = &previous_retained {
                assert!(retained.is_subset(prev), "theta {theta}");
            }
            previous_retained = Some(retained);
        }
    }

    #[test]
    fn per_pair_cap_keeps_least_confident() {
        let confs = vec![
            conf(0, 0, 1, 0, 0.5),
            conf(0, 0, 1, 1, -0.1),
            conf(0, 0, 1, 2, 0.3),
        ];
        let set = build_uncertain_set(&confs, 100.0, 1);
        assert_eq!(set.members.len(), 1);
        assert_eq!(confs[set.members[0]].key.relation, 1);
    }

    #[test]
    fn cap_ties_break_by_relation_index() {
        let confs = vec![
            conf(0, 0, 1, 2, 0.2),
            conf(0, 0, 1, 0, -0.2),
            conf(0, 0, 1, 1, 0.2),
        ];
        let set = build_uncertain_set(&confs, 100.0, 2);
        let rels: Vec<usize> = set.members.iter().map(|&i| confs[i].key.relation).collect();
        // |L_O| all equal; relations 0 and 1 survive the cap
        assert_eq!(rels, vec![1, 0].into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn fit_blend_caps_a_separable_relation() {
        // one valid triplet: the optimum runs to -infinity, capped
        let entries = vec![(
            TripletKey {
                doc: 0,
                head: 0,
                tail: 1,
                relation: 0,
            },
            1.0,
            true,
        )];
        let blend = fit_blend(&entries, 2);
        assert_eq!(blend.tau[0], -TAU_CAP);
        // untouched relation keeps zero
        assert_eq!(blend.tau[1], 0.0);
    }

    #[test]
    fn fit_blend_balanced_pair_has_symmetric_optimum() {
        let key = |r: usize| TripletKey {
            doc: 0,
            head: 0,
            tail: 1,
            relation: r,
        };
        let entries = vec![(key(0), 1.0, true), (key(0), 1.0, false)];
        let blend = fit_blend(&entries, 1);
        assert!((blend.tau[0] - 1.0).abs() < 1e-7, "tau {}", blend.tau[0]);
        let g = blend_loss_grad(&[1.0, 1.0], &[true, false], blend.tau[0]);
        assert!(g.abs() <= TAU_GRAD_TOL);
    }

    #[test]
    fn fit_blend_reduces_loss_against_zero_bias() {
        let key = |r: usize, i: usize| TripletKey {
            doc: i,
            head: 0,
            tail: 1,
            relation: r,
        };
        let entries: Vec<(TripletKey, f64, bool)> = (0..20)
            .map(|i| {
                let s = ((i * 37) as f64 * 0.17).sin() * 3.0;
                (key(i % 3, i), s, i % 2 == 0)
            })
            .collect();
        let blend = fit_blend(&entries, 3);
        for rel in 0..3 {
            let sums: Vec<f64> = entries
                .iter()
                .filter(|(k, _, _)| k.relation == rel)
                .map(|&(_, s, _)| s)
                .collect();
            let valid: Vec<bool> = entries
                .iter()
                .filter(|(k, _, _)| k.relation == rel)
                .map(|&(_, _, v)| v)
                .collect();
            let fitted = blend_loss(&sums, &valid, blend.tau[rel]);
            let zero = blend_loss(&sums, &valid, 0.0);
            assert!(fitted <= zero + 1e-12);
        }
    }

    #[test]
    fn recovered_prediction_arithmetic() {
        // originally rejected triplet, recovered by the blend
        let l_b: f64 = -0.1 + 0.5 + 0.4 - 0.3;
        assert!(l_b > 0.0);
        assert!((l_b - 0.5).abs() < 1e-12);
    }

    fn trained_fixture() -> (Model, Corpus) {
        let corpus = generate(&SyntheticConfig {
            documents: 4,
            seed: 77,
            ..SyntheticConfig::default()
        });
        let model = Model::new(ModelConfig::miniature(123), corpus.inventory()).unwrap();
        (model, corpus)
    }

    #[test]
    fn empty_uncertain_set_reduces_to_original_decisions() {
        let (model, corpus) = trained_fixture();
        let confidences = predict_original(&model, &corpus).unwrap();
        let uncertain = HashSet::new();
        let mut cache = HashMap::new();
        let finals =
            final_predictions(&model, &corpus, &confidences, &uncertain, &mut cache, 0.5)
                .unwrap();
        let plain = predict_plain(&model, &corpus, 0.5).unwrap();
        assert_eq!(finals, plain.predictions);
        // both agree triplet-by-triplet with the L_O > 0 rule
        let by_rule: usize = confidences.iter().filter(|c| c.l_o > 0.0).count();
        assert_eq!(finals.len(), by_rule);
    }

    #[test]
    fn keeping_every_sentence_reproduces_the_original_confidence_exactly() {
        let (model, corpus) = trained_fixture();
        let doc = &corpus.documents[0];
        let mut pass = model.begin_pass(doc).unwrap();
        let key = TripletKey {
            doc: 0,
            head: 0,
            tail: 1,
            relation: 0,
        };
        let scores = model.pair_scores(&mut pass, 0, 1, None).unwrap();
        let l_o = scores.logits.confidence(&pass.graph, 0);
        // probabilities above alpha everywhere -> pseudo doc == doc
        let probs = vec![1.0; doc.sentences.len()];
        let mut diag = AugmentDiagnostics::default();
        let l_d =
            augment_pseudo_document(&model, doc, key, &probs, 0.5, l_o, &mut diag).unwrap();
        assert_eq!(l_d, l_o, "identity pseudo document must be bit-exact");
        assert_eq!(diag, AugmentDiagnostics::default());
    }

    #[test]
    fn all_ones_mask_matches_original_confidence() {
        let (model, corpus) = trained_fixture();
        let doc = &corpus.documents[0];
        let mut pass = model.begin_pass(doc).unwrap();
        let key = TripletKey {
            doc: 0,
            head: 0,
            tail: 1,
            relation: 0,
        };
        let scores = model.pair_scores(&mut pass, 0, 1, None).unwrap();
        let l_o = scores.logits.confidence(&pass.graph, 0);
        let probs = vec![1.0; doc.sentences.len()];
        let mut diag = AugmentDiagnostics::default();
        let l_m = augment_attention_mask(&model, &mut pass, key, &probs, &mut diag).unwrap();
        assert!((l_m - l_o).abs() <= 1e-6);
    }

    #[test]
    fn pseudo_document_confidence_matches_from_scratch_encoding() {
        let (model, corpus) = trained_fixture();
        let doc = &corpus.documents[0];
        // keep only the sentences mentioning entities 0 and 1
        let mut kept = mention_sentences(doc, 0);
        kept.extend(mention_sentences(doc, 1));
        let key = TripletKey {
            doc: 0,
            head: 0,
            tail: 1,
            relation: 2,
        };
        // drive the augmentation through per-sentence probabilities that
        // select exactly `kept`
        let probs: Vec<f64> = (0..doc.sentences.len())
            .map(|s| if kept.contains(&s) { 0.9 } else { 0.1 })
            .collect();
        let mut diag = AugmentDiagnostics::default();
        let l_d = augment_pseudo_document(&model, doc, key, &probs, 0.5, 0.0, &mut diag).unwrap();
        // independent oracle: build the pseudo document here and run a fresh
        // forward pass
        let pseudo = build_pseudo_document(doc, &kept).unwrap();
        let mut pass = model.begin_pass(&pseudo).unwrap();
        let scores = model.pair_scores(&mut pass, 0, 1, None).unwrap();
        let expect = scores.logits.confidence(&pass.graph, 2);
        assert_eq!(l_d, expect);
    }

    #[test]
    fn ensemble_runs_end_to_end_on_an_untrained_model() {
        let (model, corpus) = trained_fixture();
        let dev = Corpus::new(corpus.documents[..2].to_vec());
        let test = Corpus::new(corpus.documents[2..].to_vec());
        let run = run_ensemble(&model, &dev, Some(&test), EnsembleOptions::default()).unwrap();
        assert!(run.theta_percent >= 0.0 && run.theta_percent <= 100.0);
        let target = run.target.as_ref().unwrap();
        // every uncertain triplet carries all three confidences
        for c in &target.confidences {
            if target.uncertain.contains(&c.key) {
                assert!(c.l_d.is_some() && c.l_m.is_some() && c.l_b.is_some());
            } else {
                assert!(c.l_b.is_none());
            }
        }
        // conservatism: outside U the decision is the original one
        let plain = predict_plain(&model, &test, 0.5).unwrap();
        let plain_set: HashSet<(String, usize, usize, String)> = plain
            .predictions
            .iter()
            .map(|p| (p.title.clone(), p.h_idx, p.t_idx, p.r.clone()))
            .collect();
        for p in &target.predictions {
            let key = target
                .confidences
                .iter()
                .find(|c| {
                    corpus_title(&test, c.key.doc) == p.title
                        && c.key.head == p.h_idx
                        && c.key.tail == p.t_idx
                        && model.inventory.relations[c.key.relation] == p.r
                })
                .map(|c| c.key)
                .unwrap();
            if !target.uncertain.contains(&key) {
                assert!(plain_set.contains(&(p.title.clone(), p.h_idx, p.t_idx, p.r.clone())));
            }
        }
    }

    fn corpus_title(corpus: &Corpus, doc: usize) -> String {
        corpus.documents[doc].title.clone()
    }

    #[test]
    fn missing_dev_gold_is_an_explicit_error() {
        let (model, corpus) = trained_fixture();
        let mut dev = Corpus::new(corpus.documents[..1].to_vec());
        dev.documents[0].gold_relations.clear();
        assert!(matches!(
            run_ensemble(&model, &dev, None, EnsembleOptions::default()),
            Err(InferError::MissingDevGold)
        ));
    }
}
