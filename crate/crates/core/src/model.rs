//! The full pipeline: shared encoder, five task heads, and the per-document
//! forward pass that produces losses, relation confidences, and evidence
//! probabilities.

use crate::corpus::markup::{insert_markup, MarkedDocument, Tokenizer, WordTokenizer};
use crate::corpus::{class_frequencies, CorpusError, Document, Inventory};
use crate::encoder::{Encoder, EncoderConfig, EncoderError};
use crate::graph::{Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::heads::{
    cr_probability, et_distribution, fer_probability, per_probability, re_logits, EtParams,
    GroupBilinearParams, HeadError, RELogits, ReParams,
};
use crate::loss::{
    atl_loss, et_cross_entropy, fer_bce, focal_bce, total_loss, FocalConfig, LabelSets,
    TaskLosses, TaskWeights,
};
use crate::repr::{
    pair_context, pair_representation, masked_pair_context, pool_entity_rows, triplet_embedding,
    uniform_context, PairContext, Projection, ReprError, TripletParams,
};
use crate::tensor::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error("relation label `{0}` is not in the model inventory")]
    UnknownRelation(String),
    #[error("entity type `{0}` is not in the model inventory")]
    UnknownType(String),
    #[error("entity {0} has no mentions in this document")]
    MentionLess(usize),
    #[error("task `{0}` is not enabled in this model")]
    TaskDisabled(&'static str),
}

/// Which auxiliary tasks are supervised; relation extraction is always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskToggles {
    pub cr: bool,
    pub et: bool,
    pub per: bool,
    pub fer: bool,
}

impl TaskToggles {
    pub fn all() -> Self {
        TaskToggles {
            cr: true,
            et: true,
            per: true,
            fer: true,
        }
    }

    pub fn none() -> Self {
        TaskToggles {
            cr: false,
            et: false,
            per: false,
            fer: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Group count of every grouped bilinear layer.
    pub groups: usize,
    pub toggles: TaskToggles,
    pub gamma_cr: f64,
    pub gamma_per: f64,
    pub task_weights: TaskWeights,
    /// Seed for head/projection initialization (the encoder has its own).
    pub head_seed: u64,
}

impl ModelConfig {
    /// Test-scale defaults: miniature encoder, 4 bilinear groups.
    pub fn miniature(seed: u64) -> Self {
        ModelConfig {
            encoder: EncoderConfig::miniature(seed),
            groups: 4,
            toggles: TaskToggles::all(),
            gamma_cr: 2.0,
            gamma_per: 2.0,
            task_weights: TaskWeights::default(),
            head_seed: seed.wrapping_add(1),
        }
    }
}

/// Fine-grained evidence machinery: triplet merge layer, relation
/// embeddings, and the scoring head.
pub struct FerParams {
    pub head: GroupBilinearParams,
    pub triplet: TripletParams,
    /// `[R, H]` relation embedding matrix.
    pub relation_emb: ParamId,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub inventory: Inventory,
    pub store: ParamStore,
    pub encoder: Encoder,
    tokenizer: Box<dyn Tokenizer + Send + Sync>,
    pub proj_head: Projection,
    pub proj_tail: Projection,
    pub ctx_head: Projection,
    pub ctx_tail: Projection,
    pub re: ReParams,
    pub et: Option<EtParams>,
    pub cr: Option<GroupBilinearParams>,
    pub per: Option<GroupBilinearParams>,
    pub fer: Option<FerParams>,
}

impl Model {
    /// Build a freshly initialized model over the given label inventory.
    pub fn new(cfg: ModelConfig, inventory: Inventory) -> Result<Model, ModelError> {
        cfg.encoder.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::new_miniature(&mut store, cfg.encoder.clone())?;
        Self::assemble(cfg, inventory, store, encoder)
    }

    /// Build a model around an already loaded encoder (pretrained adapter);
    /// `store` must be the one the encoder's parameters were registered in.
    pub fn with_encoder(
        mut cfg: ModelConfig,
        inventory: Inventory,
        store: ParamStore,
        encoder: Encoder,
    ) -> Result<Model, ModelError> {
        cfg.encoder = encoder.cfg.clone();
        Self::assemble(cfg, inventory, store, encoder)
    }

    fn assemble(
        cfg: ModelConfig,
        inventory: Inventory,
        mut store: ParamStore,
        encoder: Encoder,
    ) -> Result<Model, ModelError> {
        let h = cfg.encoder.h_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.head_seed);
        let proj_head = Projection::init(&mut store, &mut rng, "proj_head", h, h);
        let proj_tail = Projection::init(&mut store, &mut rng, "proj_tail", h, h);
        let ctx_head = Projection::init(&mut store, &mut rng, "ctx_head", h, h);
        let ctx_tail = Projection::init(&mut store, &mut rng, "ctx_tail", h, h);
        let re = ReParams::init(
            &mut store,
            &mut rng,
            inventory.relation_count(),
            h,
            cfg.groups,
        )?;
        let et = cfg
            .toggles
            .et
            .then(|| EtParams::init(&mut store, &mut rng, inventory.type_count(), h));
        let cr = if cfg.toggles.cr {
            Some(GroupBilinearParams::init(&mut store, &mut rng, "cr", h, cfg.groups)?)
        } else {
            None
        };
        let per = if cfg.toggles.per {
            Some(GroupBilinearParams::init(&mut store, &mut rng, "per", h, cfg.groups)?)
        } else {
            None
        };
        let fer = if cfg.toggles.fer {
            let head = GroupBilinearParams::init(&mut store, &mut rng, "fer", h, cfg.groups)?;
            let triplet = TripletParams::init(&mut store, &mut rng, h);
            let scale = 1.0 / (h as f64).sqrt();
            let relation_emb = store.register(
                "fer.relation_emb",
                Tensor::from_fn(inventory.relation_count(), h, |_, _| {
                    rng.gen_range(-scale..scale)
                }),
                ParamGroup::Head,
            );
            Some(FerParams {
                head,
                triplet,
                relation_emb,
            })
        } else {
            None
        };
        Ok(Model {
            cfg,
            inventory,
            store,
            encoder,
            tokenizer: Box::new(WordTokenizer),
            proj_head,
            proj_tail,
            ctx_head,
            ctx_tail,
            re,
            et,
            cr,
            per,
            fer,
        })
    }

    pub fn mark(&self, doc: &Document) -> Result<MarkedDocument, ModelError> {
        Ok(insert_markup(doc, self.tokenizer.as_ref())?)
    }

    /// Switch to an explicit vocabulary table with word-piece splitting
    /// (used when restoring pretrained-adapter checkpoints).
    pub fn install_vocabulary(&mut self, words: &[String]) {
        let map: std::collections::HashMap<String, usize> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let unk = map.get("[UNK]").copied().unwrap_or(0);
        self.tokenizer = Box::new(crate::encoder::WordPieceTokenizer::new(
            words,
            self.cfg.encoder.lowercase,
        ));
        self.encoder.vocab = crate::encoder::TokenVocab::Table { map, unk };
    }

    pub fn relation_index(&self, label: &str) -> Result<usize, ModelError> {
        self.inventory
            .relation_index(label)
            .ok_or_else(|| ModelError::UnknownRelation(label.to_string()))
    }

    /// Encode a document and pool every entity; the returned pass carries
    /// the graph all further scoring extends.
    pub fn begin_pass<'d>(&self, doc: &'d Document) -> Result<DocPass<'d>, ModelError> {
        let marked = self.mark(doc)?;
        let mut graph = Graph::new();
        let (h, a) = {
            let out = self.encoder.encode(&mut graph, &self.store, &marked)?;
            (out.h, out.a)
        };
        let mut entities = Vec::with_capacity(doc.entities.len());
        for (ei, e) in doc.entities.iter().enumerate() {
            if e.mentions.is_empty() {
                entities.push(None);
                continue;
            }
            let anchors = marked.mention_anchors(ei);
            let rows = graph.gather_rows(h, anchors);
            let pooled = pool_entity_rows(&mut graph, rows);
            let head_proj = self.proj_head.apply(&mut graph, &self.store, pooled);
            let tail_proj = self.proj_tail.apply(&mut graph, &self.store, pooled);
            let att_rows = graph.gather_rows(a, anchors);
            let attention = graph.mean_axis0(att_rows);
            entities.push(Some(EntityState {
                pooled,
                head_proj,
                tail_proj,
                attention,
            }));
        }
        let non_special = marked
            .special
            .iter()
            .enumerate()
            .filter(|(_, &s)| !s)
            .map(|(i, _)| i)
            .collect();
        let sentence_vars = vec![None; doc.sentences.len()];
        Ok(DocPass {
            graph,
            doc,
            marked,
            h,
            a,
            entities,
            sentence_vars,
            non_special,
            degenerate_pairs: 0,
        })
    }

    fn entity_state<'p>(
        entities: &'p [Option<EntityState>],
        index: usize,
    ) -> Result<&'p EntityState, ModelError> {
        entities[index]
            .as_ref()
            .ok_or(ModelError::MentionLess(index))
    }

    /// Sentence classifier-token embedding, cached per pass.
    pub fn sentence_var(&self, pass: &mut DocPass, sentence: usize) -> Var {
        if let Some(v) = pass.sentence_vars[sentence] {
            return v;
        }
        let anchor = pass
            .marked
            .sentence_anchor(sentence)
            .expect("validated sentence index");
        let v = pass.graph.gather_rows(pass.h, &[anchor]);
        pass.sentence_vars[sentence] = Some(v);
        v
    }

    /// Pair context with the degenerate-product fallback (uniform weights
    /// over non-special tokens, counted in the pass diagnostics).
    pub fn context_for_pair(
        &self,
        pass: &mut DocPass,
        head: usize,
        tail: usize,
        token_mask: Option<&Tensor>,
    ) -> Result<PairContext, ModelError> {
        let a_h = Self::entity_state(&pass.entities, head)?.attention;
        let a_t = Self::entity_state(&pass.entities, tail)?.attention;
        let built = match token_mask {
            None => pair_context(&mut pass.graph, pass.h, a_h, a_t),
            Some(mask) => masked_pair_context(&mut pass.graph, pass.h, a_h, a_t, mask),
        };
        match built {
            Ok(ctx) => Ok(ctx),
            Err(ReprError::DegeneratePair) => {
                pass.degenerate_pairs += 1;
                Ok(uniform_context(&mut pass.graph, pass.h, &pass.non_special))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Relation logits for one ordered pair, optionally under a token mask.
    pub fn pair_scores(
        &self,
        pass: &mut DocPass,
        head: usize,
        tail: usize,
        token_mask: Option<&Tensor>,
    ) -> Result<PairScores, ModelError> {
        let context = self.context_for_pair(pass, head, tail, token_mask)?;
        let hs = Self::entity_state(&pass.entities, head)?;
        let ts = Self::entity_state(&pass.entities, tail)?;
        let (h_proj, t_proj, h_pooled, t_pooled) =
            (hs.head_proj, ts.tail_proj, hs.pooled, ts.pooled);
        let rep = pair_representation(
            &mut pass.graph,
            &self.store,
            &self.ctx_head,
            &self.ctx_tail,
            h_proj,
            t_proj,
            context.c,
        );
        let logits = re_logits(
            &mut pass.graph,
            &self.store,
            &self.re,
            rep.e_h_final,
            rep.e_t_final,
        );
        Ok(PairScores {
            head,
            tail,
            pooled_head: h_pooled,
            pooled_tail: t_pooled,
            context,
            logits,
        })
    }

    /// Evidence probabilities for one assumed-valid triplet, one per
    /// sentence, computed from the pair's (possibly masked) context.
    pub fn fer_sentence_vars(
        &self,
        pass: &mut DocPass,
        scores: &PairScores,
        relation: usize,
    ) -> Result<Vec<Var>, ModelError> {
        let fer = self.fer.as_ref().ok_or(ModelError::TaskDisabled("FER"))?;
        let emb = pass.graph.param(&self.store, fer.relation_emb);
        let r_vec = pass.graph.gather_rows(emb, &[relation]);
        let l = triplet_embedding(
            &mut pass.graph,
            &self.store,
            &fer.triplet,
            scores.pooled_head,
            scores.pooled_tail,
            scores.context.c,
            r_vec,
        );
        let mut probs = Vec::with_capacity(pass.doc.sentences.len());
        for s in 0..pass.doc.sentences.len() {
            let sv = self.sentence_var(pass, s);
            probs.push(fer_probability(&mut pass.graph, &self.store, &fer.head, l, sv));
        }
        Ok(probs)
    }

    /// Evidence probabilities as plain numbers.
    pub fn fer_probabilities(
        &self,
        pass: &mut DocPass,
        head: usize,
        tail: usize,
        relation: usize,
    ) -> Result<Vec<f64>, ModelError> {
        let scores = self.pair_scores(pass, head, tail, None)?;
        let vars = self.fer_sentence_vars(pass, &scores, relation)?;
        Ok(vars.iter().map(|&v| pass.graph.value(v).item()).collect())
    }

    /// Ordered entity pairs with both members representable.
    pub fn valid_pairs(&self, pass: &DocPass) -> Vec<(usize, usize)> {
        let n = pass.doc.entities.len();
        let mut out = Vec::new();
        for h in 0..n {
            for t in 0..n {
                if h != t && pass.entities[h].is_some() && pass.entities[t].is_some() {
                    out.push((h, t));
                }
            }
        }
        out
    }

    /// `L_O = L_r − L_TH` for every relation of every valid pair.
    pub fn confidences(&self, pass: &mut DocPass) -> Result<Vec<PairConfidence>, ModelError> {
        let mut out = Vec::new();
        for (h, t) in self.valid_pairs(pass) {
            let scores = self.pair_scores(pass, h, t, None)?;
            let th = pass.graph.value(scores.logits.threshold).item();
            let confidences = scores
                .logits
                .relations
                .iter()
                .map(|&v| pass.graph.value(v).item() - th)
                .collect();
            out.push(PairConfidence {
                head: h,
                tail: t,
                confidences,
            });
        }
        Ok(out)
    }

    /// All supervised losses of one document.
    pub fn document_loss(&self, pass: &mut DocPass) -> Result<LossBreakdown, ModelError> {
        let doc = pass.doc;
        let freqs = class_frequencies(doc);
        let pairs = self.valid_pairs(pass);

        // Relation extraction, pooled and fine-grained evidence share the
        // pair loop.
        let mut re_terms = Vec::new();
        let mut per_terms = Vec::new();
        let mut fer_terms = Vec::new();
        let per_cfg = FocalConfig {
            gamma: self.cfg.gamma_per,
            pos_weight: freqs.per_weight(true),
            neg_weight: freqs.per_weight(false),
        };
        for &(h, t) in &pairs {
            let scores = self.pair_scores(pass, h, t, None)?;
            let gold = doc.pair_relations(&doc.entities[h].id, &doc.entities[t].id);
            let mut positives = Vec::with_capacity(gold.len());
            for r in &gold {
                positives.push(self.relation_index(&r.relation)?);
            }
            positives.sort_unstable();
            let labels = LabelSets::from_positives(self.inventory.relation_count(), &positives);
            re_terms.push(atl_loss(&mut pass.graph, &scores.logits, &labels));

            if self.per.is_some() {
                let pooled = doc.pooled_evidence(&doc.entities[h].id, &doc.entities[t].id);
                let per_head = self.per.as_ref().unwrap();
                for s in 0..doc.sentences.len() {
                    let sv = self.sentence_var(pass, s);
                    let prob =
                        per_probability(&mut pass.graph, &self.store, per_head, scores.context.c, sv);
                    per_terms.push(focal_bce(
                        &mut pass.graph,
                        prob,
                        pooled.contains(&s),
                        &per_cfg,
                    ));
                }
            }
            if self.fer.is_some() {
                for rel in &gold {
                    let ridx = self.relation_index(&rel.relation)?;
                    let probs = self.fer_sentence_vars(pass, &scores, ridx)?;
                    for (s, &prob) in probs.iter().enumerate() {
                        fer_terms.push(fer_bce(
                            &mut pass.graph,
                            prob,
                            rel.evidence.contains(&s),
                        ));
                    }
                }
            }
        }
        let re = sum_or_zero(&mut pass.graph, &re_terms);

        // Coreference over ordered mention pairs.
        let cr = if let Some(cr_head) = &self.cr {
            let cr_cfg = FocalConfig {
                gamma: self.cfg.gamma_cr,
                pos_weight: freqs.cr_weight(true),
                neg_weight: freqs.cr_weight(false),
            };
            let mut mention_vars = Vec::new();
            let mut owner = Vec::new();
            for (ei, e) in doc.entities.iter().enumerate() {
                for oi in 0..e.mentions.len() {
                    let anchor = pass.marked.mention_anchor(ei, oi).expect("anchored");
                    mention_vars.push(pass.graph.gather_rows(pass.h, &[anchor]));
                    owner.push(ei);
                }
            }
            let mut terms = Vec::new();
            for i in 0..mention_vars.len() {
                for j in 0..mention_vars.len() {
                    if i == j {
                        continue;
                    }
                    let prob = cr_probability(
                        &mut pass.graph,
                        &self.store,
                        cr_head,
                        mention_vars[i],
                        mention_vars[j],
                    );
                    terms.push(focal_bce(
                        &mut pass.graph,
                        prob,
                        owner[i] == owner[j],
                        &cr_cfg,
                    ));
                }
            }
            Some(sum_or_zero(&mut pass.graph, &terms))
        } else {
            None
        };

        // Entity typing over both projections of every entity.
        let et = if let Some(et_head) = &self.et {
            let mut terms = Vec::new();
            for (ei, e) in doc.entities.iter().enumerate() {
                let Some(state) = &pass.entities[ei] else {
                    continue;
                };
                let gold = self
                    .inventory
                    .type_index(&e.entity_type)
                    .ok_or_else(|| ModelError::UnknownType(e.entity_type.clone()))?;
                for proj in [state.head_proj, state.tail_proj] {
                    let dist = et_distribution(&mut pass.graph, &self.store, et_head, proj);
                    terms.push(et_cross_entropy(&mut pass.graph, dist, gold));
                }
            }
            Some(sum_or_zero(&mut pass.graph, &terms))
        } else {
            None
        };

        let per = self
            .per
            .as_ref()
            .map(|_| sum_or_zero(&mut pass.graph, &per_terms));
        let fer = self
            .fer
            .as_ref()
            .map(|_| sum_or_zero(&mut pass.graph, &fer_terms));

        let tasks = TaskLosses { cr, et, per, fer };
        let total = total_loss(&mut pass.graph, re, &tasks, &self.cfg.task_weights);
        Ok(LossBreakdown {
            total,
            re,
            cr,
            et,
            per,
            fer,
        })
    }
}

fn sum_or_zero(g: &mut Graph, terms: &[Var]) -> Var {
    if terms.is_empty() {
        g.scalar(0.0)
    } else {
        g.sum_vars(terms)
    }
}

/// Pooled embedding, head/tail projections, and attention of one entity.
pub struct EntityState {
    pub pooled: Var,
    pub head_proj: Var,
    pub tail_proj: Var,
    pub attention: Var,
}

/// Per-document forward state; extends its graph as scores are requested.
pub struct DocPass<'d> {
    pub graph: Graph,
    pub doc: &'d Document,
    pub marked: MarkedDocument,
    pub h: Var,
    pub a: Var,
    pub entities: Vec<Option<EntityState>>,
    sentence_vars: Vec<Option<Var>>,
    pub non_special: Vec<usize>,
    /// Pairs that fell back to uniform context weights.
    pub degenerate_pairs: usize,
}

/// Context, pooled entity embeddings, and relation logits of one pair.
pub struct PairScores {
    pub head: usize,
    pub tail: usize,
    pub pooled_head: Var,
    pub pooled_tail: Var,
    pub context: PairContext,
    pub logits: RELogits,
}

/// `L_O` per relation (logit minus threshold logit) for one ordered pair.
#[derive(Clone, Debug)]
pub struct PairConfidence {
    pub head: usize,
    pub tail: usize,
    pub confidences: Vec<f64>,
}

/// Scalar losses of one document, as graph nodes.
pub struct LossBreakdown {
    pub total: Var,
    pub re: Var,
    pub cr: Option<Var>,
    pub et: Option<Var>,
    pub per: Option<Var>,
    pub fer: Option<Var>,
}

impl LossBreakdown {
    pub fn values(&self, g: &Graph) -> LossValues {
        let v = |o: Option<Var>| o.map(|x| g.value(x).item());
        LossValues {
            total: g.value(self.total).item(),
            re: g.value(self.re).item(),
            cr: v(self.cr),
            et: v(self.et),
            per: v(self.per),
            fer: v(self.fer),
        }
    }
}

/// Plain-number view of a [`LossBreakdown`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub re: f64,
    pub cr: Option<f64>,
    pub et: Option<f64>,
    pub per: Option<f64>,
    pub fer: Option<f64>,
}
