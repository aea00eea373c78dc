//! Intermediate representations: pooled entities, head/tail projections,
//! pair contexts, triplet embeddings, and final pair representations.

use crate::graph::{Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::tensor::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReprError {
    #[error("cannot pool an empty mention list")]
    EmptyMentionList,
    #[error("degenerate pair: attention product sums to zero")]
    DegeneratePair,
}

/// Logsumexp pooling of mention rows into one entity embedding.
///
/// Inputs are `[1, H]` rows; the result is a `[1, H]` smooth maximum,
/// stabilized by max subtraction inside the op.
pub fn pool_entity(g: &mut Graph, mention_rows: &[Var]) -> Result<Var, ReprError> {
    if mention_rows.is_empty() {
        return Err(ReprError::EmptyMentionList);
    }
    let stacked = g.concat_rows(mention_rows);
    Ok(g.logsumexp_axis0(stacked))
}

/// Same pooling over an already stacked `[k, H]` matrix.
pub fn pool_entity_rows(g: &mut Graph, rows: Var) -> Var {
    g.logsumexp_axis0(rows)
}

/// A dense affine map `x ↦ x Wᵀ + b` with `W: [out, in]`.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub w: ParamId,
    pub b: ParamId,
}

impl Projection {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        out: usize,
        inp: usize,
    ) -> Self {
        let scale = 1.0 / (inp as f64).sqrt();
        Projection {
            w: store.register(
                format!("{name}.w"),
                Tensor::from_fn(out, inp, |_, _| rng.gen_range(-scale..scale)),
                ParamGroup::Head,
            ),
            b: store.register(format!("{name}.b"), Tensor::zeros(1, out), ParamGroup::Head),
        }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, b)
    }
}

/// Separate head and tail projections of one pooled entity embedding.
pub fn project_head_tail(
    g: &mut Graph,
    store: &ParamStore,
    head: &Projection,
    tail: &Projection,
    e: Var,
) -> (Var, Var) {
    (head.apply(g, store, e), tail.apply(g, store, e))
}

/// Attention-weighted context of an entity pair.
pub struct PairContext {
    /// `[1, N_d]` probability vector over tokens.
    pub weights: Var,
    /// `[1, H]` pooled context embedding; exactly `weightsᵀ·H`.
    pub c: Var,
}

fn context_from_product(g: &mut Graph, h: Var, product: Var) -> Result<PairContext, ReprError> {
    let total = g.sum_all(product);
    if g.value(total).item() <= 0.0 {
        return Err(ReprError::DegeneratePair);
    }
    let weights = g.div_scalar(product, total);
    let c = g.matmul(weights, h, false, false);
    Ok(PairContext { weights, c })
}

/// `c = Hᵀ (A_h ⊗ A_t) / Σ(A_h ⊗ A_t)`.
///
/// Fails with [`ReprError::DegeneratePair`] when the elementwise product is
/// identically zero; callers fall back to uniform weights over non-special
/// tokens (see [`uniform_context`]).
pub fn pair_context(g: &mut Graph, h: Var, a_h: Var, a_t: Var) -> Result<PairContext, ReprError> {
    let product = g.mul(a_h, a_t);
    context_from_product(g, h, product)
}

/// Pair context with an extra nonnegative token mask folded into the weights.
pub fn masked_pair_context(
    g: &mut Graph,
    h: Var,
    a_h: Var,
    a_t: Var,
    token_mask: &Tensor,
) -> Result<PairContext, ReprError> {
    let product = g.mul(a_h, a_t);
    let masked = g.mul_const(product, token_mask.clone());
    context_from_product(g, h, masked)
}

/// Fallback for degenerate pairs: uniform weights over the given token
/// positions (non-special tokens).
pub fn uniform_context(g: &mut Graph, h: Var, positions: &[usize]) -> PairContext {
    let n = g.value(h).rows();
    let w = 1.0 / positions.len() as f64;
    let mut t = Tensor::zeros(1, n);
    for &p in positions {
        t.set(0, p, w);
    }
    let weights = g.constant(t);
    let c = g.matmul(weights, h, false, false);
    PairContext { weights, c }
}

/// Parameters of the triplet merge layer `l = tanh(W_l [e_h‖e_t‖c‖r] + b_l)`.
#[derive(Clone, Copy, Debug)]
pub struct TripletParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl TripletParams {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, h_dim: usize) -> Self {
        let scale = 1.0 / (4.0 * h_dim as f64).sqrt();
        TripletParams {
            w: store.register(
                "triplet.w",
                Tensor::from_fn(h_dim, 4 * h_dim, |_, _| rng.gen_range(-scale..scale)),
                ParamGroup::Head,
            ),
            b: store.register("triplet.b", Tensor::zeros(1, h_dim), ParamGroup::Head),
        }
    }
}

/// Merge pooled head/tail embeddings, pair context, and a relation embedding
/// into one bounded triplet embedding.
pub fn triplet_embedding(
    g: &mut Graph,
    store: &ParamStore,
    params: &TripletParams,
    e_h: Var,
    e_t: Var,
    c: Var,
    r_vec: Var,
) -> Var {
    let joined = g.concat_cols(&[e_h, e_t, c, r_vec]);
    let w = g.param(store, params.w);
    let b = g.param(store, params.b);
    let affine = g.linear(joined, w, b);
    g.tanh(affine)
}

/// Final head/tail representations combining type and context information.
pub struct PairRepresentation {
    pub c_head: Var,
    pub c_tail: Var,
    /// `tanh(e'_h + c'_h)`; components strictly inside (−1, 1).
    pub e_h_final: Var,
    pub e_t_final: Var,
}

pub fn pair_representation(
    g: &mut Graph,
    store: &ParamStore,
    ctx_head: &Projection,
    ctx_tail: &Projection,
    e_h_proj: Var,
    e_t_proj: Var,
    c: Var,
) -> PairRepresentation {
    let c_head = ctx_head.apply(g, store, c);
    let c_tail = ctx_tail.apply(g, store, c);
    let h_sum = g.add(e_h_proj, c_head);
    let t_sum = g.add(e_t_proj, c_tail);
    PairRepresentation {
        c_head,
        c_tail,
        e_h_final: g.tanh(h_sum),
        e_t_final: g.tanh(t_sum),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn row(g: &mut Graph, data: Vec<f64>) -> Var {
        g.constant(Tensor::row_vec(data))
    }

    #[test]
    fn pooling_one_mention_is_identity() {
        let mut g = Graph::new();
        let m = row(&mut g, vec![0.3, -1.2, 4.0]);
        let pooled = pool_entity(&mut g, &[m]).unwrap();
        for (a, b) in g.value(pooled).data().iter().zip([0.3, -1.2, 4.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_two_zero_vectors_gives_ln2() {
        let mut g = Graph::new();
        let a = row(&mut g, vec![0.0; 4]);
        let b = row(&mut g, vec![0.0; 4]);
        let pooled = pool_entity(&mut g, &[a, b]).unwrap();
        for &v in g.value(pooled).data() {
            assert!((v - 2.0_f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_dominates_componentwise_max_and_ignores_order() {
        let mut g = Graph::new();
        let a = row(&mut g, vec![1.0, -2.0, 0.5]);
        let b = row(&mut g, vec![-1.0, 3.0, 0.5]);
        let ab = pool_entity(&mut g, &[a, b]).unwrap();
        let ba = pool_entity(&mut g, &[b, a]).unwrap();
        let max = [1.0, 3.0, 0.5];
        for j in 0..3 {
            assert!(g.value(ab).get(0, j) >= max[j]);
            assert!((g.value(ab).get(0, j) - g.value(ba).get(0, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mention_list_errors() {
        let mut g = Graph::new();
        assert!(matches!(
            pool_entity(&mut g, &[]),
            Err(ReprError::EmptyMentionList)
        ));
    }

    #[test]
    fn identity_projection_returns_input() {
        let mut store = ParamStore::new();
        let h = 3;
        let head = Projection {
            w: store.register(
                "id.w",
                Tensor::from_fn(h, h, |r, c| if r == c { 1.0 } else { 0.0 }),
                ParamGroup::Head,
            ),
            b: store.register("id.b", Tensor::zeros(1, h), ParamGroup::Head),
        };
        let bias = Tensor::row_vec(vec![5.0, -1.0, 2.0]);
        let tail = Projection {
            w: store.register("z.w", Tensor::zeros(h, h), ParamGroup::Head),
            b: store.register("z.b", bias.clone(), ParamGroup::Head),
        };
        let mut g = Graph::new();
        let e = row(&mut g, vec![0.1, 0.2, 0.3]);
        let (eh, et) = project_head_tail(&mut g, &store, &head, &tail, e);
        assert_eq!(g.value(eh), g.value(e));
        assert_eq!(g.value(et), &bias);
    }

    #[test]
    fn uniform_attention_context_is_column_mean() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::from_fn(4, 3, |r, c| (r * 3 + c) as f64));
        let u = row(&mut g, vec![0.25; 4]);
        let ctx = pair_context(&mut g, h, u, u).unwrap();
        for j in 0..3 {
            let mean = (0..4).map(|r| (r * 3 + j) as f64).sum::<f64>() / 4.0;
            assert!((g.value(ctx.c).get(0, j) - mean).abs() < 1e-12);
        }
        let wsum: f64 = g.value(ctx.weights).data().iter().sum();
        assert!((wsum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_hot_attention_selects_a_row() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::from_fn(4, 3, |r, c| (10 * r + c) as f64));
        let ah = row(&mut g, vec![0.0, 0.0, 1.0, 0.0]);
        let at = row(&mut g, vec![0.1, 0.2, 0.5, 0.2]);
        let ctx = pair_context(&mut g, h, ah, at).unwrap();
        assert_eq!(g.value(ctx.c).row(0), &[20.0, 21.0, 22.0]);
    }

    #[test]
    fn random_context_matches_brute_force() {
        let mut r = rng();
        let n = 6;
        let hd = 5;
        let hm = Tensor::from_fn(n, hd, |_, _| r.gen_range(-1.0..1.0));
        let av: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        let bv: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        let mut g = Graph::new();
        let h = g.constant(hm.clone());
        let ah = row(&mut g, av.clone());
        let at = row(&mut g, bv.clone());
        let ctx = pair_context(&mut g, h, ah, at).unwrap();
        // brute force
        let prod: Vec<f64> = av.iter().zip(&bv).map(|(&a, &b)| a * b).collect();
        let total: f64 = prod.iter().sum();
        for j in 0..hd {
            let expect: f64 = (0..n).map(|i| prod[i] / total * hm.get(i, j)).sum();
            assert!((g.value(ctx.c).get(0, j) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn all_ones_mask_matches_plain_context() {
        let mut r = rng();
        let n = 6;
        let hm = Tensor::from_fn(n, 4, |_, _| r.gen_range(-1.0..1.0));
        let av: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..1.0)).collect();
        let bv: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..1.0)).collect();
        let mut g = Graph::new();
        let h = g.constant(hm);
        let ah = row(&mut g, av);
        let at = row(&mut g, bv);
        let plain = pair_context(&mut g, h, ah, at).unwrap();
        let masked =
            masked_pair_context(&mut g, h, ah, at, &Tensor::from_fn(1, n, |_, _| 1.0)).unwrap();
        assert!(g.value(plain.c).max_abs_diff(g.value(masked.c)) < 1e-6);
    }

    #[test]
    fn mask_restricts_support() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::from_fn(5, 3, |r, c| (r + c) as f64));
        let ah = row(&mut g, vec![0.2; 5]);
        let at = row(&mut g, vec![0.2; 5]);
        let mask = Tensor::row_vec(vec![0.0, 0.0, 1.0, 1.0, 0.0]);
        let ctx = masked_pair_context(&mut g, h, ah, at, &mask).unwrap();
        let w = g.value(ctx.weights);
        assert_eq!(w.get(0, 0), 0.0);
        assert_eq!(w.get(0, 4), 0.0);
        assert!((w.get(0, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_product_is_degenerate_and_fallback_is_uniform() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::from_fn(4, 2, |r, c| (r * 2 + c) as f64));
        let ah = row(&mut g, vec![1.0, 0.0, 0.0, 0.0]);
        let at = row(&mut g, vec![0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            pair_context(&mut g, h, ah, at),
            Err(ReprError::DegeneratePair)
        ));
        let fb = uniform_context(&mut g, h, &[1, 2]);
        let w = g.value(fb.weights);
        assert_eq!(w.row(0), &[0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn zero_triplet_params_give_zero_vector() {
        let mut store = ParamStore::new();
        let h = 4;
        let params = TripletParams {
            w: store.register("t.w", Tensor::zeros(h, 4 * h), ParamGroup::Head),
            b: store.register("t.b", Tensor::zeros(1, h), ParamGroup::Head),
        };
        let mut g = Graph::new();
        let v = row(&mut g, vec![1.0; 4]);
        let l = triplet_embedding(&mut g, &store, &params, v, v, v, v);
        assert!(g.value(l).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn triplet_embedding_matches_concat_affine_oracle() {
        let mut r = rng();
        let h = 8;
        let mut store = ParamStore::new();
        let params = TripletParams::init(&mut store, &mut r, h);
        let mut g = Graph::new();
        let parts: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..h).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let vars: Vec<Var> = parts.iter().map(|p| row(&mut g, p.clone())).collect();
        let l = triplet_embedding(&mut g, &store, &params, vars[0], vars[1], vars[2], vars[3]);
        // oracle: dense concat, then affine, then tanh
        let joined: Vec<f64> = parts.concat();
        let w = store.tensor(params.w);
        for i in 0..h {
            let mut acc = 0.0;
            for (j, &x) in joined.iter().enumerate() {
                acc += w.get(i, j) * x;
            }
            let expect = acc.tanh();
            let got = g.value(l).get(0, i);
            assert!((got - expect).abs() < 1e-12);
            assert!(got > -1.0 && got < 1.0);
        }
    }

    #[test]
    fn pair_representation_composes_context_then_tanh() {
        let mut r = rng();
        let h = 4;
        let mut store = ParamStore::new();
        let ch = Projection::init(&mut store, &mut r, "ctx_h", h, h);
        let ct = Projection::init(&mut store, &mut r, "ctx_t", h, h);
        let mut g = Graph::new();
        let eh: Vec<f64> = (0..h).map(|_| r.gen_range(-1.0..1.0)).collect();
        let et: Vec<f64> = (0..h).map(|_| r.gen_range(-1.0..1.0)).collect();
        let cv: Vec<f64> = (0..h).map(|_| r.gen_range(-1.0..1.0)).collect();
        let ehv = row(&mut g, eh.clone());
        let etv = row(&mut g, et.clone());
        let cvv = row(&mut g, cv.clone());
        let rep = pair_representation(&mut g, &store, &ch, &ct, ehv, etv, cvv);
        let wch = store.tensor(ch.w);
        for i in 0..h {
            let mut c_h = 0.0;
            for j in 0..h {
                c_h += wch.get(i, j) * cv[j];
            }
            let expect = (eh[i] + c_h).tanh();
            let got = g.value(rep.e_h_final).get(0, i);
            assert!((got - expect).abs() < 1e-12);
            assert!(got > -1.0 && got < 1.0);
        }
        // c = 0 with zero context bias leaves tanh(e')
        let zero = row(&mut g, vec![0.0; h]);
        let rep0 = pair_representation(&mut g, &store, &ch, &ct, ehv, etv, zero);
        for i in 0..h {
            assert!((g.value(rep0.e_h_final).get(0, i) - eh[i].tanh()).abs() < 1e-12);
        }
        let _ = (rep.c_tail, rep.e_t_final, et);
    }
}
