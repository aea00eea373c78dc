//! Task heads: grouped-bilinear scorers for coreference, pooled and
//! fine-grained evidence, and relation extraction, plus the linear softmax
//! entity-typing head.

use crate::graph::{Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::tensor::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("group count {groups} must divide embedding width {h_dim}")]
    GroupMismatch { groups: usize, h_dim: usize },
}

/// A bilinear form restricted to `K` equal diagonal blocks, stored flat as
/// `[1, K·(H/K)²]` in the same order `group_outer` emits.
#[derive(Clone, Debug)]
pub struct GroupBilinearParams {
    pub blocks: ParamId,
    pub bias: ParamId,
    pub groups: usize,
    pub h_dim: usize,
}

impl GroupBilinearParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        h_dim: usize,
        groups: usize,
    ) -> Result<Self, HeadError> {
        if groups == 0 || h_dim % groups != 0 {
            return Err(HeadError::GroupMismatch { groups, h_dim });
        }
        let block = h_dim / groups;
        let scale = 1.0 / (block as f64).sqrt();
        Ok(GroupBilinearParams {
            blocks: store.register(
                format!("{name}.blocks"),
                Tensor::from_fn(1, groups * block * block, |_, _| rng.gen_range(-scale..scale)),
                ParamGroup::Head,
            ),
            bias: store.register(format!("{name}.bias"), Tensor::zeros(1, 1), ParamGroup::Head),
            groups,
            h_dim,
        })
    }
}

/// `Σ_k x_kᵀ W^k y_k + b` for `[1, H]` inputs split into K groups.
pub fn group_bilinear(
    g: &mut Graph,
    store: &ParamStore,
    p: &GroupBilinearParams,
    x: Var,
    y: Var,
) -> Var {
    let outer = g.group_outer(x, y, p.groups);
    group_bilinear_from_outer(g, store, p, outer)
}

/// Same scorer reusing a precomputed `group_outer(x, y)`; the outer product
/// is shared across every relation scored for one pair.
pub fn group_bilinear_from_outer(
    g: &mut Graph,
    store: &ParamStore,
    p: &GroupBilinearParams,
    outer: Var,
) -> Var {
    let w = g.param(store, p.blocks);
    let b = g.param(store, p.bias);
    let dot = g.matmul(outer, w, false, true);
    g.add(dot, b)
}

/// Probability that two mentions refer to the same entity.
pub fn cr_probability(
    g: &mut Graph,
    store: &ParamStore,
    p: &GroupBilinearParams,
    m_i: Var,
    m_j: Var,
) -> Var {
    let logit = group_bilinear(g, store, p, m_i, m_j);
    g.sigmoid(logit)
}

/// Entity-typing head parameters.
#[derive(Clone, Debug)]
pub struct EtParams {
    pub w: ParamId,
    pub b: ParamId,
    pub classes: usize,
}

impl EtParams {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, classes: usize, h_dim: usize) -> Self {
        let scale = 1.0 / (h_dim as f64).sqrt();
        EtParams {
            w: store.register(
                "et.w",
                Tensor::from_fn(classes, h_dim, |_, _| rng.gen_range(-scale..scale)),
                ParamGroup::Head,
            ),
            b: store.register("et.b", Tensor::zeros(1, classes), ParamGroup::Head),
            classes,
        }
    }
}

/// `softmax(W_c tanh(e') + b_c)`: a point on the |C|-simplex.
pub fn et_distribution(g: &mut Graph, store: &ParamStore, p: &EtParams, e_proj: Var) -> Var {
    let squashed = g.tanh(e_proj);
    let w = g.param(store, p.w);
    let b = g.param(store, p.b);
    let logits = g.linear(squashed, w, b);
    g.softmax_rows(logits)
}

/// Probability that a sentence belongs to the pooled evidence of a pair.
pub fn per_probability(
    g: &mut Graph,
    store: &ParamStore,
    p: &GroupBilinearParams,
    context: Var,
    sentence: Var,
) -> Var {
    let logit = group_bilinear(g, store, p, context, sentence);
    g.sigmoid(logit)
}

/// Probability that a sentence belongs to one triplet's evidence set.
pub fn fer_probability(
    g: &mut Graph,
    store: &ParamStore,
    p: &GroupBilinearParams,
    triplet: Var,
    sentence: Var,
) -> Var {
    let logit = group_bilinear(g, store, p, triplet, sentence);
    g.sigmoid(logit)
}

/// Relation-extraction head: one grouped-bilinear parameter set per relation
/// plus one for the learnable threshold class.
#[derive(Clone, Debug)]
pub struct ReParams {
    pub relations: Vec<GroupBilinearParams>,
    pub threshold: GroupBilinearParams,
}

impl ReParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        n_relations: usize,
        h_dim: usize,
        groups: usize,
    ) -> Result<Self, HeadError> {
        let relations = (0..n_relations)
            .map(|r| GroupBilinearParams::init(store, rng, &format!("re.r{r}"), h_dim, groups))
            .collect::<Result<Vec<_>, _>>()?;
        let threshold = GroupBilinearParams::init(store, rng, "re.th", h_dim, groups)?;
        Ok(ReParams {
            relations,
            threshold,
        })
    }
}

/// Per-pair relation logits plus the threshold logit.
pub struct RELogits {
    pub relations: Vec<Var>,
    pub threshold: Var,
}

impl RELogits {
    /// `L_r − L_TH` for one relation, as plain numbers.
    pub fn confidence(&self, g: &Graph, relation: usize) -> f64 {
        g.value(self.relations[relation]).item() - g.value(self.threshold).item()
    }
}

/// Score every relation (and the threshold class) for one pair; the group
/// outer product of the pair representations is computed once and shared.
pub fn re_logits(
    g: &mut Graph,
    store: &ParamStore,
    p: &ReParams,
    e_h_final: Var,
    e_t_final: Var,
) -> RELogits {
    let outer = g.group_outer(e_h_final, e_t_final, p.threshold.groups);
    let relations = p
        .relations
        .iter()
        .map(|rp| group_bilinear_from_outer(g, store, rp, outer))
        .collect();
    let threshold = group_bilinear_from_outer(g, store, &p.threshold, outer);
    RELogits {
        relations,
        threshold,
    }
}
