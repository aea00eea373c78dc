//! Document encoding: token embeddings `H` and cross-token attention `A`.
//!
//! Two backends share one transformer forward pass: a deterministic
//! miniature encoder initialized from a named seed (every downstream
//! property is testable without downloads) and a pretrained adapter that
//! loads full-size weights from the toolkit's container format. Documents
//! longer than the window are encoded in overlapping windows; per-token
//! embeddings are averaged across covering windows, out-of-window attention
//! is zero, and every attention row is renormalized to sum one.

use crate::container::{self, ContainerError};
use crate::corpus::markup::{MarkedDocument, Tokenizer, CLS_TOKEN, MARKER_TOKEN, SEP_TOKEN};
use crate::graph::{Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::tensor::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("encoder config error: {0}")]
    Config(String),
    #[error("entity {0} has no mentions in this document")]
    MentionLess(usize),
    #[error("anchor lookup failed for entity {entity} mention {ordinal}")]
    AnchorMissing { entity: usize, ordinal: usize },
    #[error("sentence {0} has no anchor")]
    SentenceMissing(usize),
    #[error("container error: {0}")]
    Container(#[from] ContainerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    Miniature,
    Pretrained,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Gelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub backend: BackendKind,
    pub h_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    /// Max tokens per encoder pass.
    pub window: usize,
    /// Tokens shared between consecutive windows.
    pub overlap: usize,
    pub activation: Activation,
    pub seed: u64,
    /// Lowercase words before subword splitting (uncased checkpoints).
    #[serde(default)]
    pub lowercase: bool,
}

impl EncoderConfig {
    /// Deterministic test-scale encoder: 2 layers, 2 heads, width 32.
    pub fn miniature(seed: u64) -> Self {
        EncoderConfig {
            backend: BackendKind::Miniature,
            h_dim: 32,
            layers: 2,
            heads: 2,
            ffn_dim: 64,
            vocab_size: 4096,
            window: 512,
            overlap: 128,
            activation: Activation::Tanh,
            seed,
            lowercase: false,
        }
    }

    /// Dimension presets for published checkpoint families. Weights still
    /// have to be provided as a container file.
    pub fn pretrained_preset(name: &str) -> Option<Self> {
        let (h_dim, layers, heads) = match name {
            n if n.contains("large") => (1024, 24, 16),
            n if n.contains("bert") || n.contains("base") => (768, 12, 12),
            _ => return None,
        };
        Some(EncoderConfig {
            backend: BackendKind::Pretrained,
            h_dim,
            layers,
            heads,
            ffn_dim: 4 * h_dim,
            vocab_size: 30_522,
            window: 512,
            overlap: 128,
            activation: Activation::Gelu,
            seed: 0,
            lowercase: !name.contains("cased") || name.contains("uncased"),
        })
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.overlap == 0 || self.overlap >= self.window {
            return Err(EncoderError::Config(format!(
                "overlap must satisfy 0 < overlap < window (got {} / {})",
                self.overlap, self.window
            )));
        }
        if self.heads == 0 || self.h_dim % self.heads != 0 {
            return Err(EncoderError::Config(format!(
                "head count {} must divide embedding width {}",
                self.heads, self.h_dim
            )));
        }
        if self.layers == 0 || self.vocab_size <= N_SPECIAL {
            return Err(EncoderError::Config(
                "need at least one layer and a non-trivial vocabulary".to_string(),
            ));
        }
        Ok(())
    }
}

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const MARKER_ID: usize = 3;
const N_SPECIAL: usize = 4;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Token-to-id mapping: stable hashing for the miniature backend, an explicit
/// table for loaded checkpoints.
#[derive(Clone, Debug)]
pub enum TokenVocab {
    Hashed { size: usize },
    Table { map: HashMap<String, usize>, unk: usize },
}

impl TokenVocab {
    pub fn id_of(&self, token: &str) -> usize {
        match token {
            CLS_TOKEN => return CLS_ID,
            SEP_TOKEN => return SEP_ID,
            MARKER_TOKEN => return MARKER_ID,
            _ => {}
        }
        match self {
            TokenVocab::Hashed { size } => {
                N_SPECIAL + (fnv1a(token.as_bytes()) as usize) % (size - N_SPECIAL)
            }
            TokenVocab::Table { map, unk } => map.get(token).copied().unwrap_or(*unk),
        }
    }
}

struct LayerParams {
    q: Vec<(ParamId, ParamId)>,
    k: Vec<(ParamId, ParamId)>,
    v: Vec<(ParamId, ParamId)>,
    attn_out: (ParamId, ParamId),
    ln1: (ParamId, ParamId),
    ffn_in: (ParamId, ParamId),
    ffn_out: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
}

/// Parameter handles for the transformer encoder.
pub struct TransformerParams {
    pub tok_emb: ParamId,
    seg_emb: ParamId,
    emb_ln: (ParamId, ParamId),
    layers: Vec<LayerParams>,
}

const LN_EPS: f64 = 1e-5;

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

fn init_linear(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    out: usize,
    inp: usize,
) -> (ParamId, ParamId) {
    let w = store.register(
        format!("{name}.w"),
        uniform(rng, out, inp, 1.0 / (inp as f64).sqrt()),
        ParamGroup::Encoder,
    );
    let b = store.register(format!("{name}.b"), Tensor::zeros(1, out), ParamGroup::Encoder);
    (w, b)
}

/// Identity-biased projection slice for attention heads: row `i` picks
/// coordinate `offset + i`, plus a little noise. Through the sinusoidal
/// position encodings this makes self/neighbor scores dominate at
/// initialization, so local attention patterns are reachable without a
/// pretraining corpus; each head slices a different frequency band and
/// starts with a different locality scale.
fn init_head_slice(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    out: usize,
    inp: usize,
    offset: usize,
) -> (ParamId, ParamId) {
    let noise = 0.05;
    let w = store.register(
        format!("{name}.w"),
        Tensor::from_fn(out, inp, |r, c| {
            let eye = if c == offset + r { 1.0 } else { 0.0 };
            eye + rng.gen_range(-noise..noise)
        }),
        ParamGroup::Encoder,
    );
    let b = store.register(format!("{name}.b"), Tensor::zeros(1, out), ParamGroup::Encoder);
    (w, b)
}

fn init_identity_linear(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    dim: usize,
) -> (ParamId, ParamId) {
    let noise = 0.05;
    let w = store.register(
        format!("{name}.w"),
        Tensor::from_fn(dim, dim, |r, c| {
            let eye = if r == c { 1.0 } else { 0.0 };
            eye + rng.gen_range(-noise..noise)
        }),
        ParamGroup::Encoder,
    );
    let b = store.register(format!("{name}.b"), Tensor::zeros(1, dim), ParamGroup::Encoder);
    (w, b)
}

fn init_ln(store: &mut ParamStore, name: &str, h: usize) -> (ParamId, ParamId) {
    (
        store.register(
            format!("{name}.gain"),
            Tensor::from_fn(1, h, |_, _| 1.0),
            ParamGroup::Encoder,
        ),
        store.register(format!("{name}.bias"), Tensor::zeros(1, h), ParamGroup::Encoder),
    )
}

impl TransformerParams {
    /// Register freshly initialized encoder parameters.
    pub fn init(store: &mut ParamStore, cfg: &EncoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let h = cfg.h_dim;
        let dh = h / cfg.heads;
        let wscale = 1.0 / (h as f64).sqrt();
        let g = ParamGroup::Encoder;

        let tok_emb = store.register("enc.tok_emb", uniform(&mut rng, cfg.vocab_size, h, wscale), g);
        let seg_emb = store.register("enc.seg_emb", uniform(&mut rng, 2, h, wscale), g);
        let emb_ln = init_ln(store, "enc.emb_ln", h);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let heads_of = |store: &mut ParamStore, rng: &mut ChaCha8Rng, role: &str| {
                (0..cfg.heads)
                    .map(|hd| {
                        init_head_slice(
                            store,
                            rng,
                            &format!("enc.l{l}.{role}{hd}"),
                            dh,
                            h,
                            hd * dh,
                        )
                    })
                    .collect::<Vec<_>>()
            };
            let q = heads_of(store, &mut rng, "q");
            let k = heads_of(store, &mut rng, "k");
            let v = heads_of(store, &mut rng, "v");
            layers.push(LayerParams {
                q,
                k,
                v,
                attn_out: init_identity_linear(store, &mut rng, &format!("enc.l{l}.attn_out"), h),
                ln1: init_ln(store, &format!("enc.l{l}.ln1"), h),
                ffn_in: init_linear(store, &mut rng, &format!("enc.l{l}.ffn_in"), cfg.ffn_dim, h),
                ffn_out: init_linear(store, &mut rng, &format!("enc.l{l}.ffn_out"), h, cfg.ffn_dim),
                ln2: init_ln(store, &format!("enc.l{l}.ln2"), h),
            });
        }
        TransformerParams {
            tok_emb,
            seg_emb,
            emb_ln,
            layers,
        }
    }
}

/// Fixed sinusoidal position encodings; their relative-shift structure lets
/// attention learn neighborhood patterns without a pretraining corpus.
pub fn sinusoidal_positions(len: usize, h_dim: usize, scale: f64) -> Tensor {
    Tensor::from_fn(len, h_dim, |pos, i| {
        let pair = (i / 2) as f64;
        let rate = 1.0 / 10_000_f64.powf(2.0 * pair / h_dim as f64);
        let angle = pos as f64 * rate;
        scale * if i % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}

const POSITION_SCALE: f64 = 0.25;

/// Fixed additive attention bias giving alternating heads a neighborhood
/// prior (relative-position style): content scores can override it, but
/// local structure is reachable from step one.
fn local_attention_bias(len: usize, strength: f64, width: i64) -> Tensor {
    Tensor::from_fn(len, len, |i, j| {
        let d = (i as i64 - j as i64).abs();
        if d <= width {
            strength
        } else {
            0.0
        }
    })
}

const LOCAL_BIAS_STRENGTH: f64 = 3.0;
const LOCAL_BIAS_WIDTH: i64 = 3;

/// Token embeddings, cross-token attention, and the markup they refer to.
pub struct EncoderOutput<'a> {
    /// `[N_d, H]` token embeddings.
    pub h: Var,
    /// `[N_d, N_d]` row-stochastic attention, averaged over last-layer heads.
    pub a: Var,
    pub marked: &'a MarkedDocument,
}

pub struct Encoder {
    pub cfg: EncoderConfig,
    pub params: TransformerParams,
    pub vocab: TokenVocab,
}

impl Encoder {
    pub fn new_miniature(store: &mut ParamStore, cfg: EncoderConfig) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let params = TransformerParams::init(store, &cfg);
        let vocab = TokenVocab::Hashed {
            size: cfg.vocab_size,
        };
        Ok(Encoder { cfg, params, vocab })
    }

    /// One window: plain transformer forward over `ids`/`segs`. Public as a
    /// low-level primitive so windowed encoding can be cross-checked against
    /// independently recomputed windows.
    pub fn encode_window(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ids: &[usize],
        segs: &[usize],
    ) -> (Var, Var) {
        let cfg = &self.cfg;
        let tok = g.param(store, self.params.tok_emb);
        let seg = g.param(store, self.params.seg_emb);
        let te = g.gather_rows(tok, ids);
        let pe = g.constant(sinusoidal_positions(ids.len(), cfg.h_dim, POSITION_SCALE));
        let se = g.gather_rows(seg, segs);
        let mut x = g.sum_vars(&[te, pe, se]);
        let gain = g.param(store, self.params.emb_ln.0);
        let bias = g.param(store, self.params.emb_ln.1);
        x = g.layer_norm_rows(x, gain, bias, LN_EPS);

        let dh = cfg.h_dim / cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attention = None;
        for layer in &self.params.layers {
            let mut head_ctx = Vec::with_capacity(cfg.heads);
            let mut head_probs = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let (qw, qb) = layer.q[hd];
                let (kw, kb) = layer.k[hd];
                let (vw, vb) = layer.v[hd];
                let (qw, qb) = (g.param(store, qw), g.param(store, qb));
                let (kw, kb) = (g.param(store, kw), g.param(store, kb));
                let (vw, vb) = (g.param(store, vw), g.param(store, vb));
                let q = g.linear(x, qw, qb);
                let k = g.linear(x, kw, kb);
                let v = g.linear(x, vw, vb);
                let scores = g.matmul(q, k, false, true);
                let mut scores = g.affine(scores, scale, 0.0);
                if hd % 2 == 0 {
                    // even heads carry the locality prior; odd heads stay global
                    let bias = g.constant(local_attention_bias(
                        ids.len(),
                        LOCAL_BIAS_STRENGTH,
                        LOCAL_BIAS_WIDTH,
                    ));
                    scores = g.add(scores, bias);
                }
                let probs = g.softmax_rows(scores);
                head_probs.push(probs);
                head_ctx.push(g.matmul(probs, v, false, false));
            }
            let ctx = g.concat_cols(&head_ctx);
            let (ow, ob) = layer.attn_out;
            let (ow, ob) = (g.param(store, ow), g.param(store, ob));
            let attn = g.linear(ctx, ow, ob);
            let res = g.add(x, attn);
            let (g1, b1) = layer.ln1;
            let (g1, b1) = (g.param(store, g1), g.param(store, b1));
            x = g.layer_norm_rows(res, g1, b1, LN_EPS);

            let (fw, fb) = layer.ffn_in;
            let (fw, fb) = (g.param(store, fw), g.param(store, fb));
            let hidden = g.linear(x, fw, fb);
            let hidden = match cfg.activation {
                Activation::Tanh => g.tanh(hidden),
                Activation::Gelu => g.gelu(hidden),
            };
            let (ow2, ob2) = layer.ffn_out;
            let (ow2, ob2) = (g.param(store, ow2), g.param(store, ob2));
            let ffn = g.linear(hidden, ow2, ob2);
            let res = g.add(x, ffn);
            let (g2, b2) = layer.ln2;
            let (g2, b2) = (g.param(store, g2), g.param(store, b2));
            x = g.layer_norm_rows(res, g2, b2, LN_EPS);

            // Average of the attention heads; only the last layer's survives.
            let summed = g.sum_vars(&head_probs);
            attention = Some(g.affine(summed, 1.0 / cfg.heads as f64, 0.0));
        }
        (x, attention.expect("at least one layer"))
    }

    fn window_starts(&self, n: usize) -> Vec<usize> {
        let stride = self.cfg.window - self.cfg.overlap;
        let mut starts = vec![0];
        while starts.last().unwrap() + self.cfg.window < n {
            starts.push(starts.last().unwrap() + stride);
        }
        starts
    }

    /// Encode a marked document, windowing if it exceeds the encoder limit.
    pub fn encode<'a>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        marked: &'a MarkedDocument,
    ) -> Result<EncoderOutput<'a>, EncoderError> {
        let n = marked.len();
        if n == 0 {
            return Err(EncoderError::Config("empty document".to_string()));
        }
        let ids: Vec<usize> = marked.tokens.iter().map(|t| self.vocab.id_of(t)).collect();
        let segs = &marked.segment_ids;

        if n <= self.cfg.window {
            let (h, a) = self.encode_window(g, store, &ids, segs);
            return Ok(EncoderOutput { h, a, marked });
        }

        let starts = self.window_starts(n);
        let mut row_count = vec![0usize; n];
        let mut pair_count = vec![0usize; n * n];
        let mut h_parts = Vec::with_capacity(starts.len());
        let mut a_parts = Vec::with_capacity(starts.len());
        for &s in &starts {
            let e = (s + self.cfg.window).min(n);
            let span: Vec<usize> = (s..e).collect();
            let (hw, aw) = self.encode_window(g, store, &ids[s..e], &segs[s..e]);
            h_parts.push(g.scatter_rows(hw, &span, n));
            a_parts.push(g.scatter_block(aw, &span, n));
            for i in s..e {
                row_count[i] += 1;
                for j in s..e {
                    pair_count[i * n + j] += 1;
                }
            }
        }
        let h_sum = g.sum_vars(&h_parts);
        let h_weights = Tensor::from_fn(n, self.cfg.h_dim, |r, _| 1.0 / row_count[r] as f64);
        let h = g.mul_const(h_sum, h_weights);

        let a_sum = g.sum_vars(&a_parts);
        let a_weights = Tensor::from_fn(n, n, |r, c| {
            let k = pair_count[r * n + c];
            if k == 0 {
                0.0
            } else {
                1.0 / k as f64
            }
        });
        let a_avg = g.mul_const(a_sum, a_weights);
        let ones = g.constant(Tensor::from_fn(n, 1, |_, _| 1.0));
        let rowsum = g.matmul(a_avg, ones, false, false);
        let a = g.div_col_broadcast(a_avg, rowsum);
        Ok(EncoderOutput { h, a, marked })
    }
}

/// Embedding of the opening marker before a mention.
pub fn mention_embedding(
    g: &mut Graph,
    out: &EncoderOutput,
    entity_index: usize,
    ordinal: usize,
) -> Result<Var, EncoderError> {
    let anchor = out
        .marked
        .mention_anchor(entity_index, ordinal)
        .ok_or(EncoderError::AnchorMissing {
            entity: entity_index,
            ordinal,
        })?;
    Ok(g.gather_rows(out.h, &[anchor]))
}

/// Embedding of the classifier token before a sentence.
pub fn sentence_embedding(
    g: &mut Graph,
    out: &EncoderOutput,
    sentence: usize,
) -> Result<Var, EncoderError> {
    let anchor = out
        .marked
        .sentence_anchor(sentence)
        .ok_or(EncoderError::SentenceMissing(sentence))?;
    Ok(g.gather_rows(out.h, &[anchor]))
}

/// Mean of an entity's mention-level attention rows, a `[1, N_d]` vector.
pub fn entity_attention(
    g: &mut Graph,
    out: &EncoderOutput,
    entity_index: usize,
) -> Result<Var, EncoderError> {
    let anchors = out.marked.mention_anchors(entity_index);
    if anchors.is_empty() {
        return Err(EncoderError::MentionLess(entity_index));
    }
    let rows = g.gather_rows(out.a, anchors);
    Ok(g.mean_axis0(rows))
}

/// A pretrained transformer loaded from the toolkit's container format.
pub struct PretrainedAdapter;

impl PretrainedAdapter {
    /// Resolve a model name to a container path under the cache directory
    /// (`DOCREL_CACHE` or `~/.cache/docrel`).
    pub fn resolve(name: &str) -> std::path::PathBuf {
        if name.ends_with(".drlc") {
            return std::path::PathBuf::from(name);
        }
        let cache = std::env::var("DOCREL_CACHE")
            .map(std::path::PathBuf::from)
            .unwrap_or_else(|_| {
                std::env::var("HOME")
                    .map(|h| Path::new(&h).join(".cache").join("docrel"))
                    .unwrap_or_else(|_| std::path::PathBuf::from("."))
            });
        cache.join(format!("{name}.drlc"))
    }

    /// Load encoder weights and a word-piece vocabulary from a container.
    pub fn load(store: &mut ParamStore, path: &Path) -> Result<Encoder, EncoderError> {
        let c = container::read(path)?;
        let cfg: EncoderConfig = serde_json::from_value(c.meta["encoder"].clone())
            .map_err(|e| EncoderError::Config(format!("container encoder config: {e}")))?;
        cfg.validate()?;
        let words: Vec<String> = serde_json::from_value(c.meta["vocab"].clone())
            .map_err(|e| EncoderError::Config(format!("container vocab: {e}")))?;
        let map: HashMap<String, usize> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let unk = map
            .get("[UNK]")
            .copied()
            .ok_or_else(|| EncoderError::Config("vocab lacks [UNK]".to_string()))?;

        // Register every container tensor under its stored name.
        let mut by_name: HashMap<String, ParamId> = HashMap::new();
        for (name, tensor) in c.tensors {
            let id = store.register(name.clone(), tensor, ParamGroup::Encoder);
            by_name.insert(name, id);
        }
        let get = |n: &str| -> Result<ParamId, EncoderError> {
            by_name
                .get(n)
                .copied()
                .ok_or_else(|| EncoderError::Config(format!("container missing tensor `{n}`")))
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let head_ids = |role: &str| -> Result<Vec<(ParamId, ParamId)>, EncoderError> {
                (0..cfg.heads)
                    .map(|hd| Ok((get(&format!("enc.l{l}.{role}{hd}.w"))?, get(&format!("enc.l{l}.{role}{hd}.b"))?)))
                    .collect()
            };
            layers.push(LayerParams {
                q: head_ids("q")?,
                k: head_ids("k")?,
                v: head_ids("v")?,
                attn_out: (get(&format!("enc.l{l}.attn_out.w"))?, get(&format!("enc.l{l}.attn_out.b"))?),
                ln1: (get(&format!("enc.l{l}.ln1.gain"))?, get(&format!("enc.l{l}.ln1.bias"))?),
                ffn_in: (get(&format!("enc.l{l}.ffn_in.w"))?, get(&format!("enc.l{l}.ffn_in.b"))?),
                ffn_out: (get(&format!("enc.l{l}.ffn_out.w"))?, get(&format!("enc.l{l}.ffn_out.b"))?),
                ln2: (get(&format!("enc.l{l}.ln2.gain"))?, get(&format!("enc.l{l}.ln2.bias"))?),
            });
        }
        let params = TransformerParams {
            tok_emb: get("enc.tok_emb")?,
            seg_emb: get("enc.seg_emb")?,
            emb_ln: (get("enc.emb_ln.gain")?, get("enc.emb_ln.bias")?),
            layers,
        };
        Ok(Encoder {
            cfg,
            params,
            vocab: TokenVocab::Table { map, unk },
        })
    }
}

/// Greedy longest-match word-piece splitter for the pretrained adapter.
pub struct WordPieceTokenizer {
    vocab: HashMap<String, usize>,
    lowercase: bool,
}

impl WordPieceTokenizer {
    pub fn new(words: &[String], lowercase: bool) -> Self {
        WordPieceTokenizer {
            vocab: words
                .iter()
                .enumerate()
                .map(|(i, w)| (w.clone(), i))
                .collect(),
            lowercase,
        }
    }
}

impl Tokenizer for WordPieceTokenizer {
    fn subtokens(&self, word: &str) -> Vec<String> {
        let word = if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        };
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let piece: String = chars[start..end].iter().collect();
                let candidate = if start == 0 { piece } else { format!("##{piece}") };
                if self.vocab.contains_key(&candidate) {
                    found = Some((candidate, end));
                    break;
                }
                end -= 1;
            }
            match found {
                Some((piece, e)) => {
                    out.push(piece);
                    start = e;
                }
                None => return vec!["[UNK]".to_string()],
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::markup::{insert_markup, WordTokenizer};
    use crate::corpus::tests::two_sentence_doc;

    fn encode_once(seed: u64) -> (Tensor, Tensor) {
        let doc = two_sentence_doc();
        let marked = insert_markup(&doc, &WordTokenizer).unwrap();
        let mut store = ParamStore::new();
        let enc = Encoder::new_miniature(&mut store, EncoderConfig::miniature(seed)).unwrap();
        let mut g = Graph::new();
        let out = enc.encode(&mut g, &store, &marked).unwrap();
        (g.value(out.h).clone(), g.value(out.a).clone())
    }

    #[test]
    fn same_seed_same_input_is_bit_identical() {
        let (h1, a1) = encode_once(11);
        let (h2, a2) = encode_once(11);
        assert_eq!(h1, h2);
        assert_eq!(a1, a2);
        let (h3, _) = encode_once(12);
        assert_ne!(h1, h3);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let (_, a) = encode_once(5);
        for r in 0..a.rows() {
            let s: f64 = a.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-5, "row {r} sums to {s}");
            assert!(a.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn pretrained_presets_pin_dimensions() {
        assert_eq!(
            EncoderConfig::pretrained_preset("bert-base-cased").unwrap().h_dim,
            768
        );
        assert_eq!(
            EncoderConfig::pretrained_preset("roberta-large").unwrap().h_dim,
            1024
        );
        assert!(EncoderConfig::pretrained_preset("mystery-model").is_none());
    }

    #[test]
    fn misconfigured_overlap_is_rejected() {
        let mut cfg = EncoderConfig::miniature(1);
        cfg.overlap = cfg.window;
        assert!(cfg.validate().is_err());
        cfg.overlap = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn anchors_resolve_to_embedding_rows() {
        let doc = two_sentence_doc();
        let marked = insert_markup(&doc, &WordTokenizer).unwrap();
        let mut store = ParamStore::new();
        let enc = Encoder::new_miniature(&mut store, EncoderConfig::miniature(3)).unwrap();
        let mut g = Graph::new();
        let out = enc.encode(&mut g, &store, &marked).unwrap();

        let m = mention_embedding(&mut g, &out, 0, 0).unwrap();
        let anchor = marked.mention_anchor(0, 0).unwrap();
        let expect: Vec<f64> = g.value(out.h).row(anchor).to_vec();
        assert_eq!(g.value(m).row(0), expect.as_slice());

        let s = sentence_embedding(&mut g, &out, 1).unwrap();
        let anchor = marked.sentence_anchor(1).unwrap();
        let expect: Vec<f64> = g.value(out.h).row(anchor).to_vec();
        assert_eq!(g.value(s).row(0), expect.as_slice());
    }

    #[test]
    fn entity_attention_is_mean_of_anchor_rows() {
        let doc = two_sentence_doc();
        let marked = insert_markup(&doc, &WordTokenizer).unwrap();
        let mut store = ParamStore::new();
        let enc = Encoder::new_miniature(&mut store, EncoderConfig::miniature(3)).unwrap();
        let mut g = Graph::new();
        let out = enc.encode(&mut g, &store, &marked).unwrap();
        let att = entity_attention(&mut g, &out, 0).unwrap();
        let att1 = entity_attention(&mut g, &out, 1).unwrap();
        let anchors = marked.mention_anchors(0);
        assert_eq!(anchors.len(), 2);
        let a = g.value(out.a);
        for j in 0..a.cols() {
            let brute = (a.get(anchors[0], j) + a.get(anchors[1], j)) / 2.0;
            assert!((g.value(att).get(0, j) - brute).abs() < 1e-12);
        }
        // single-mention entity: exactly that mention's row
        let anchor = marked.mention_anchors(1)[0];
        assert_eq!(g.value(att1).row(0), a.row(anchor));
    }

    #[test]
    fn sentence_anchors_strictly_increase() {
        let doc = two_sentence_doc();
        let marked = insert_markup(&doc, &WordTokenizer).unwrap();
        let mut prev = None;
        for s in 0..marked.sentence_count() {
            let a = marked.sentence_anchor(s).unwrap();
            if let Some(p) = prev {
                assert!(a > p);
            }
            prev = Some(a);
        }
    }

    #[test]
    fn wordpiece_greedy_longest_match() {
        let vocab: Vec<String> = ["[UNK]", "un", "##aff", "##able", "aff"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let tok = WordPieceTokenizer::new(&vocab, true);
        assert_eq!(tok.subtokens("unaffable"), vec!["un", "##aff", "##able"]);
        assert_eq!(tok.subtokens("zzz"), vec!["[UNK]"]);
    }
}

#[cfg(test)]
mod windowing_tests {
    use super::*;
    use crate::corpus::markup::{insert_markup, WordTokenizer};
    use crate::corpus::Document;

    fn long_doc(n_tokens: usize) -> Document {
        Document {
            title: "long".into(),
            sentences: vec![(0..n_tokens).map(|i| format!("tok{i}")).collect()],
            entities: vec![],
            gold_relations: vec![],
        }
    }

    #[test]
    fn two_windows_cover_long_documents() {
        let mut cfg = EncoderConfig::miniature(3);
        cfg.window = 512;
        cfg.overlap = 128;
        let mut store = ParamStore::new();
        let enc = Encoder::new_miniature(&mut store, cfg).unwrap();
        // 700 tokens incl. markup: starts at 0 and 384
        assert_eq!(enc.window_starts(700), vec![0, 384]);
        assert_eq!(enc.window_starts(512), vec![0]);
        assert_eq!(enc.window_starts(513), vec![0, 384]);
    }

    #[test]
    fn overlapped_tokens_average_their_window_embeddings() {
        let mut cfg = EncoderConfig::miniature(8);
        cfg.window = 36;
        cfg.overlap = 12;
        let mut store = ParamStore::new();
        let enc = Encoder::new_miniature(&mut store, cfg.clone()).unwrap();
        let doc = long_doc(58); // 60 with [CLS]/[SEP]
        let marked = insert_markup(&doc, &WordTokenizer).unwrap();
        assert_eq!(marked.len(), 60);
        assert_eq!(enc.window_starts(60), vec![0, 24]);

        let mut g = Graph::new();
        let out = enc.encode(&mut g, &store, &marked).unwrap();
        let ids: Vec<usize> = marked.tokens.iter().map(|t| enc.vocab.id_of(t)).collect();

        // oracle: recompute both windows independently and average overlaps
        let mut g2 = Graph::new();
        let (h0, _) = enc.encode_window(&mut g2, &store, &ids[0..36], &marked.segment_ids[0..36]);
        let (h1, _) = enc.encode_window(&mut g2, &store, &ids[24..60], &marked.segment_ids[24..60]);
        let full = g.value(out.h);
        let w0 = g2.value(h0);
        let w1 = g2.value(h1);
        for t in 0..60 {
            for c in 0..cfg.h_dim {
                let expect = if t < 24 {
                    w0.get(t, c)
                } else if t < 36 {
                    (w0.get(t, c) + w1.get(t - 24, c)) / 2.0
                } else {
                    w1.get(t - 24, c)
                };
                let got = full.get(t, c);
                assert!(
                    (got - expect).abs() < 1e-12,
                    "token {t} col {c}: {got} vs {expect}"
                );
            }
        }
    }
}
