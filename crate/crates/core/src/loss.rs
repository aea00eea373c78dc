//! Training objectives: focal binary cross-entropy for the imbalanced tasks,
//! multi-class cross-entropy for entity typing, plain binary cross-entropy
//! for fine-grained evidence, the adaptive threshold loss for relation
//! extraction, the weighted multi-task sum, and the blending loss fitted at
//! inference time.

use crate::graph::{Graph, Var};
use crate::heads::RELogits;
use serde::{Deserialize, Serialize};

/// Probabilities are clamped to `[ε, 1−ε]` before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Focusing exponent and per-label class weights for a focal term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub gamma: f64,
    pub pos_weight: f64,
    pub neg_weight: f64,
}

impl FocalConfig {
    pub fn plain() -> Self {
        FocalConfig {
            gamma: 0.0,
            pos_weight: 1.0,
            neg_weight: 1.0,
        }
    }
}

/// One focal binary cross-entropy term:
/// `−w·(1−p)^γ·log p` for a positive label, `−w·p^γ·log(1−p)` otherwise.
pub fn focal_bce(g: &mut Graph, prob: Var, label: bool, cfg: &FocalConfig) -> Var {
    let p = g.clamp(prob, PROB_EPS, 1.0 - PROB_EPS);
    let (focus_base, log_arg, weight) = if label {
        let one_minus = g.affine(p, -1.0, 1.0);
        (one_minus, p, cfg.pos_weight)
    } else {
        let one_minus = g.affine(p, -1.0, 1.0);
        (p, one_minus, cfg.neg_weight)
    };
    let focus = g.pow_const(focus_base, cfg.gamma);
    let logp = g.ln(log_arg);
    let term = g.mul(focus, logp);
    g.affine(term, -weight, 0.0)
}

/// `−log dist[gold]` over a simplex point.
pub fn et_cross_entropy(g: &mut Graph, dist: Var, gold: usize) -> Var {
    let picked = g.gather_cols(dist, &[gold]);
    let clamped = g.clamp(picked, PROB_EPS, 1.0);
    let lp = g.ln(clamped);
    g.affine(lp, -1.0, 0.0)
}

/// Standard binary cross-entropy with clamping.
pub fn fer_bce(g: &mut Graph, prob: Var, label: bool) -> Var {
    let p = g.clamp(prob, PROB_EPS, 1.0 - PROB_EPS);
    let arg = if label { p } else { g.affine(p, -1.0, 1.0) };
    let lp = g.ln(arg);
    g.affine(lp, -1.0, 0.0)
}

/// Positive and negative relation index sets for one entity pair.
#[derive(Clone, Debug, Default)]
pub struct LabelSets {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl LabelSets {
    /// Split `0..n_relations` by the sorted positive set.
    pub fn from_positives(n_relations: usize, positives: &[usize]) -> Self {
        let negatives = (0..n_relations)
            .filter(|r| !positives.contains(r))
            .collect();
        LabelSets {
            positives: positives.to_vec(),
            negatives,
        }
    }
}

/// Adaptive threshold loss: rank positive logits above the threshold class
/// and negative logits below it, with log-sum-exp stabilization.
pub fn atl_loss(g: &mut Graph, logits: &RELogits, labels: &LabelSets) -> Var {
    // Positive part: softmax over P ∪ {TH}, one term per positive relation.
    let pos_part = if labels.positives.is_empty() {
        None
    } else {
        let mut pool: Vec<Var> = labels
            .positives
            .iter()
            .map(|&r| logits.relations[r])
            .collect();
        pool.push(logits.threshold);
        let stacked = g.concat_rows(&pool);
        let z = g.logsumexp_axis0(stacked);
        let z_total = g.affine(z, labels.positives.len() as f64, 0.0);
        let pos_logits: Vec<Var> = labels
            .positives
            .iter()
            .map(|&r| logits.relations[r])
            .collect();
        let pos_sum = g.sum_vars(&pos_logits);
        Some(g.sub(z_total, pos_sum))
    };
    // Negative part: softmax over N ∪ {TH}, one term for the threshold.
    let mut pool: Vec<Var> = labels
        .negatives
        .iter()
        .map(|&r| logits.relations[r])
        .collect();
    pool.push(logits.threshold);
    let stacked = g.concat_rows(&pool);
    let z = g.logsumexp_axis0(stacked);
    let neg_part = g.sub(z, logits.threshold);

    match pos_part {
        Some(p) => g.add(p, neg_part),
        None => neg_part,
    }
}

/// Relative weights of the auxiliary tasks in the multi-task objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub cr: f64,
    pub et: f64,
    pub per: f64,
    pub fer: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        TaskWeights {
            cr: 0.1,
            et: 0.1,
            per: 0.1,
            fer: 0.1,
        }
    }
}

/// Per-document losses by task; absent entries mean the task is toggled off.
#[derive(Clone, Copy, Debug, Default)]
pub struct TaskLosses {
    pub cr: Option<Var>,
    pub et: Option<Var>,
    pub per: Option<Var>,
    pub fer: Option<Var>,
}

/// `ℓ_RE + Σ_task η_task · ℓ_task` for one document.
pub fn total_loss(g: &mut Graph, re: Var, tasks: &TaskLosses, w: &TaskWeights) -> Var {
    let mut parts = vec![re];
    for (loss, eta) in [
        (tasks.cr, w.cr),
        (tasks.et, w.et),
        (tasks.per, w.per),
        (tasks.fer, w.fer),
    ] {
        if let Some(l) = loss {
            parts.push(g.affine(l, eta, 0.0));
        }
    }
    g.sum_vars(&parts)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Blended probability `σ(L_O + L_D + L_M − τ)` for one triplet.
pub fn blend_probability(logit_sum: f64, tau: f64) -> f64 {
    sigmoid(logit_sum - tau)
}

/// Binary cross-entropy of the blended probabilities against validity
/// labels. `logit_sums[i]` is `L_O + L_D + L_M` of triplet `i`. Empty input
/// gives zero loss.
pub fn blend_loss(logit_sums: &[f64], valid: &[bool], tau: f64) -> f64 {
    assert_eq!(logit_sums.len(), valid.len());
    logit_sums
        .iter()
        .zip(valid)
        .map(|(&s, &y)| {
            let p = blend_probability(s, tau).clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

/// Analytic `dℓ/dτ` of [`blend_loss`]: `Σ (y_i − p_i)`, increasing in τ.
pub fn blend_loss_grad(logit_sums: &[f64], valid: &[bool], tau: f64) -> f64 {
    logit_sums
        .iter()
        .zip(valid)
        .map(|(&s, &y)| {
            let p = blend_probability(s, tau);
            (if y { 1.0 } else { 0.0 }) - p
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    fn scalar(g: &mut Graph, v: f64) -> Var {
        g.scalar(v)
    }

    #[test]
    fn focal_gamma_zero_is_plain_bce() {
        let mut g = Graph::new();
        let p = scalar(&mut g, 0.5);
        let cfg = FocalConfig::plain();
        let l = focal_bce(&mut g, p, true, &cfg);
        assert!((g.value(l).item() - 0.693_147_180_559_945_3).abs() < 1e-12);
        // exact equality with -ln(p) for a handful of points
        for pv in [0.1, 0.33, 0.77, 0.99] {
            let p = scalar(&mut g, pv);
            let lp = focal_bce(&mut g, p, true, &cfg);
            assert_eq!(g.value(lp).item(), -pv.ln());
            let ln = focal_bce(&mut g, p, false, &cfg);
            assert_eq!(g.value(ln).item(), -(1.0 - pv).ln());
        }
    }

    #[test]
    fn focal_gamma_two_closed_form() {
        let mut g = Graph::new();
        let p = scalar(&mut g, 0.9);
        let cfg = FocalConfig {
            gamma: 2.0,
            pos_weight: 1.0,
            neg_weight: 1.0,
        };
        let l = focal_bce(&mut g, p, true, &cfg);
        let expect = 0.01 * -(0.9_f64.ln());
        assert!((g.value(l).item() - expect).abs() < 1e-15);
        // printed six-significant-digit form of the same value
        assert!((g.value(l).item() - 0.001_053_61).abs() < 1e-8);
    }

    #[test]
    fn focal_clamps_degenerate_probabilities() {
        let mut g = Graph::new();
        let cfg = FocalConfig::plain();
        for pv in [0.0, 1.0] {
            let p = scalar(&mut g, pv);
            let l = focal_bce(&mut g, p, true, &cfg);
            assert!(g.value(l).item().is_finite());
            assert!(g.value(l).item() >= 0.0);
        }
    }

    #[test]
    fn focal_weights_scale_terms() {
        let mut g = Graph::new();
        let cfg = FocalConfig {
            gamma: 1.0,
            pos_weight: 3.0,
            neg_weight: 0.5,
        };
        let p = scalar(&mut g, 0.6);
        let lp = focal_bce(&mut g, p, true, &cfg);
        assert!((g.value(lp).item() - 3.0 * 0.4 * -(0.6_f64.ln())).abs() < 1e-12);
        let ln = focal_bce(&mut g, p, false, &cfg);
        assert!((g.value(ln).item() - 0.5 * 0.6 * -(0.4_f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn et_cross_entropy_closed_forms() {
        let mut g = Graph::new();
        let uniform = g.constant(Tensor::row_vec(vec![1.0 / 7.0; 7]));
        let l = et_cross_entropy(&mut g, uniform, 3);
        assert!((g.value(l).item() - 7.0_f64.ln()).abs() < 1e-12);
        assert!((g.value(l).item() - 1.945_910).abs() < 1e-6);

        let mut onehot = vec![0.0; 7];
        onehot[2] = 1.0;
        let d = g.constant(Tensor::row_vec(onehot));
        let l = et_cross_entropy(&mut g, d, 2);
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn fer_bce_closed_forms() {
        let mut g = Graph::new();
        let p = scalar(&mut g, 0.5);
        for label in [true, false] {
            let l = fer_bce(&mut g, p, label);
            assert!((g.value(l).item() - 0.693_147_180_559_945_3).abs() < 1e-12);
        }
        let p = scalar(&mut g, 0.9);
        let l = fer_bce(&mut g, p, true);
        assert!((g.value(l).item() - 0.105_360_515_657_826_3).abs() < 1e-12);
    }

    fn atl_fixture(g: &mut Graph, rels: &[f64], th: f64) -> RELogits {
        RELogits {
            relations: rels.iter().map(|&v| g.scalar(v)).collect(),
            threshold: g.scalar(th),
        }
    }

    #[test]
    fn atl_single_positive_closed_form() {
        let mut g = Graph::new();
        let logits = atl_fixture(&mut g, &[2.0], 0.0);
        let labels = LabelSets::from_positives(1, &[0]);
        assert!(labels.negatives.is_empty());
        let l = atl_loss(&mut g, &logits, &labels);
        let expect = (1.0 + (-2.0_f64).exp()).ln();
        assert!((g.value(l).item() - expect).abs() < 1e-12);
        assert!((g.value(l).item() - 0.126_928).abs() < 1e-6);
    }

    #[test]
    fn atl_all_negative_closed_form() {
        let mut g = Graph::new();
        let logits = atl_fixture(&mut g, &[0.0, 0.0], 0.0);
        let labels = LabelSets::from_positives(2, &[]);
        let l = atl_loss(&mut g, &logits, &labels);
        assert!((g.value(l).item() - 3.0_f64.ln()).abs() < 1e-12);
        assert!((g.value(l).item() - 1.098_612).abs() < 1e-6);
    }

    #[test]
    fn atl_is_monotone_in_logits() {
        let base = [0.5, -0.3, 0.2];
        let eval = |rels: &[f64]| {
            let mut g = Graph::new();
            let logits = atl_fixture(&mut g, rels, 0.1);
            let labels = LabelSets::from_positives(3, &[0]);
            let l = atl_loss(&mut g, &logits, &labels);
            g.value(l).item()
        };
        let l0 = eval(&base);
        // raising a positive-relation logit strictly lowers the loss
        let l_pos = eval(&[0.9, -0.3, 0.2]);
        assert!(l_pos < l0);
        // lowering a negative-relation logit strictly lowers the loss
        let l_neg = eval(&[0.5, -0.8, 0.2]);
        assert!(l_neg < l0);
    }

    #[test]
    fn atl_well_defined_with_single_relation_inventory() {
        let mut g = Graph::new();
        let logits = atl_fixture(&mut g, &[0.3], 0.0);
        let labels = LabelSets::from_positives(1, &[]);
        assert_eq!(labels.negatives, vec![0]);
        let l = atl_loss(&mut g, &logits, &labels);
        assert!(g.value(l).item().is_finite());
        assert!(g.value(l).item() >= 0.0);
    }

    #[test]
    fn total_loss_is_linear_and_re_only_at_zero_weights() {
        let mut g = Graph::new();
        let re = scalar(&mut g, 2.0);
        let cr = scalar(&mut g, 1.0);
        let et = scalar(&mut g, 0.5);
        let tasks = TaskLosses {
            cr: Some(cr),
            et: Some(et),
            per: None,
            fer: None,
        };
        let zero = TaskWeights {
            cr: 0.0,
            et: 0.0,
            per: 0.0,
            fer: 0.0,
        };
        let l = total_loss(&mut g, re, &tasks, &zero);
        assert_eq!(g.value(l).item(), 2.0);

        let w = TaskWeights::default();
        let l1 = total_loss(&mut g, re, &tasks, &w);
        assert!((g.value(l1).item() - (2.0 + 0.1 * 1.0 + 0.1 * 0.5)).abs() < 1e-12);

        // doubling every task loss doubles the total
        let re2 = scalar(&mut g, 4.0);
        let cr2 = scalar(&mut g, 2.0);
        let et2 = scalar(&mut g, 1.0);
        let tasks2 = TaskLosses {
            cr: Some(cr2),
            et: Some(et2),
            per: None,
            fer: None,
        };
        let l2 = total_loss(&mut g, re2, &tasks2, &w);
        assert!((g.value(l2).item() - 2.0 * g.value(l1).item()).abs() < 1e-12);
    }

    #[test]
    fn blend_probability_closed_form() {
        let p = blend_probability(1.0 + -0.5 + 0.2, 0.3);
        assert!((p - 0.598_687_660_112_452_1).abs() < 1e-12);
        assert!((p - 0.598_688).abs() < 1e-6);
    }

    #[test]
    fn blend_loss_all_zero_is_ln2_per_triplet() {
        let l = blend_loss(&[0.0, 0.0, 0.0], &[true, false, true], 0.0);
        assert!((l - 3.0 * 0.693_147_180_559_945_3).abs() < 1e-9);
    }

    #[test]
    fn blend_loss_empty_is_zero() {
        assert_eq!(blend_loss(&[], &[], 1.7), 0.0);
    }

    #[test]
    fn blend_gradient_matches_central_difference() {
        let sums = [0.4, -1.0, 2.0, 0.1];
        let valid = [true, false, false, true];
        for tau in [-2.0, 0.0, 0.5, 3.0] {
            let h = 1e-6;
            let fd = (blend_loss(&sums, &valid, tau + h) - blend_loss(&sums, &valid, tau - h))
                / (2.0 * h);
            let an = blend_loss_grad(&sums, &valid, tau);
            assert!((fd - an).abs() < 1e-6, "tau {tau}: {fd} vs {an}");
        }
    }

    #[test]
    fn blend_decision_rule_matches_probability_rule() {
        for s in [-3.0, -0.2, 0.0, 0.4, 2.5] {
            for tau in [-1.0, 0.0, 0.7] {
                let logit_positive = s - tau > 0.0;
                let prob_above_half = blend_probability(s, tau) > 0.5;
                assert_eq!(logit_positive, prob_above_half);
            }
        }
    }
}
