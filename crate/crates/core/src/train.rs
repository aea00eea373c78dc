//! Optimization of the full pipeline: batching, warmup/decay scheduling,
//! gradient clipping, per-epoch dev evaluation, early stopping, and
//! checkpointing.

use crate::container::{self, Container, ContainerError};
use crate::corpus::{Corpus, Inventory};
use crate::encoder::BackendKind;
use crate::eval::{self, MetricRecord, Prediction};
use crate::graph::{GradBuffer, ParamGroup, ParamStore};
use crate::loss::TaskWeights;
use crate::model::{LossValues, Model, ModelConfig, ModelError};
use crate::tensor::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}; documents: {titles:?}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        titles: Vec<String>,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint does not match the model layout: {0}")]
    CheckpointMismatch(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_documents: usize,
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub warmup_ratio: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub task_weights: TaskWeights,
    pub gamma_cr: f64,
    pub gamma_per: f64,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    pub weight_decay: f64,
    /// Evidence threshold used for dev-time evidence extraction.
    pub fer_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_documents: 4,
            encoder_lr: 5e-5,
            head_lr: 1e-4,
            warmup_ratio: 0.06,
            clip_norm: 1.0,
            seed: 7,
            task_weights: TaskWeights::default(),
            gamma_cr: 2.0,
            gamma_per: 2.0,
            patience: 3,
            weight_decay: 0.0,
            fer_alpha: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_documents == 0 {
            return Err(TrainError::Config(
                "epochs and batch_documents must be positive".into(),
            ));
        }
        if self.encoder_lr <= 0.0 || self.head_lr <= 0.0 || self.clip_norm <= 0.0 {
            return Err(TrainError::Config("rates and clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(TrainError::Config("warmup_ratio must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Linear warmup to the base rate, then linear decay to zero.
#[derive(Clone, Copy, Debug)]
pub struct Schedule {
    total_steps: usize,
    warmup_steps: usize,
}

impl Schedule {
    pub fn linear(total_steps: usize, warmup_ratio: f64) -> Self {
        Schedule {
            total_steps: total_steps.max(1),
            warmup_steps: ((total_steps as f64) * warmup_ratio).floor() as usize,
        }
    }

    /// Multiplier for 0-based step `t`.
    pub fn factor(&self, t: usize) -> f64 {
        if self.warmup_steps > 0 && t < self.warmup_steps {
            (t + 1) as f64 / self.warmup_steps as f64
        } else if self.total_steps > self.warmup_steps {
            let remaining = self.total_steps - t.min(self.total_steps);
            remaining as f64 / (self.total_steps - self.warmup_steps) as f64
        } else {
            1.0
        }
    }
}

/// Adaptive-moment optimizer with decoupled weight decay and two learning
///-rate groups (encoder vs heads).
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: usize,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
        }
    }

    /// One update over every parameter with an accumulated gradient.
    /// Parameters without a gradient move only by weight decay.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &GradBuffer,
        encoder_lr: f64,
        head_lr: f64,
    ) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let lr = match store.group(id) {
                ParamGroup::Encoder => encoder_lr,
                ParamGroup::Head => head_lr,
            };
            if let Some(g) = grads.get(id) {
                let idx = id_index(id);
                let shape = g.shape();
                let m = self.m[idx].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
                let v = self.v[idx].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
                let w = store.tensor_mut(id);
                for ((wv, gv), (mv, vv)) in w
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                {
                    *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                    *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                    let mhat = *mv / bc1;
                    let vhat = *vv / bc2;
                    *wv -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *wv);
                }
            } else if self.weight_decay != 0.0 {
                let w = store.tensor_mut(id);
                for wv in w.data_mut() {
                    *wv -= lr * self.weight_decay * *wv;
                }
            }
        }
    }
}

fn id_index(id: crate::graph::ParamId) -> usize {
    // ParamStore ids are dense indices.
    id.0
}

/// Aggregated dev losses (sums over documents).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossAggregate {
    pub total: f64,
    pub re: f64,
    pub cr: Option<f64>,
    pub et: Option<f64>,
    pub per: Option<f64>,
    pub fer: Option<f64>,
}

impl LossAggregate {
    fn add(&mut self, v: &LossValues) {
        self.total += v.total;
        self.re += v.re;
        for (slot, val) in [
            (&mut self.cr, v.cr),
            (&mut self.et, v.et),
            (&mut self.per, v.per),
            (&mut self.fer, v.fer),
        ] {
            if let Some(x) = val {
                *slot = Some(slot.unwrap_or(0.0) + x);
            }
        }
    }
}

/// Dev-set snapshot: relation metrics, evidence score, per-task losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    pub metrics: MetricRecord,
    pub losses: LossAggregate,
}

/// Decision-rule predictions (`L_O > 0`) with evidence from the
/// fine-grained head when available.
pub fn predict_corpus(
    model: &Model,
    corpus: &Corpus,
    fer_alpha: f64,
) -> Result<Vec<Prediction>, ModelError> {
    let mut out = Vec::new();
    for doc in &corpus.documents {
        let mut pass = model.begin_pass(doc)?;
        for pc in model.confidences(&mut pass)? {
            for (rel, &conf) in pc.confidences.iter().enumerate() {
                if conf > 0.0 {
                    let evidence = if model.fer.is_some() {
                        let probs = model.fer_probabilities(&mut pass, pc.head, pc.tail, rel)?;
                        probs
                            .iter()
                            .enumerate()
                            .filter(|(_, &p)| p > fer_alpha)
                            .map(|(s, _)| s)
                            .collect()
                    } else {
                        Vec::new()
                    };
                    out.push(Prediction {
                        title: doc.title.clone(),
                        h_idx: pc.head,
                        t_idx: pc.tail,
                        r: model.inventory.relations[rel].clone(),
                        evidence,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Losses and decision-rule metrics of a frozen model on a dev corpus.
pub fn evaluate_dev(
    model: &Model,
    dev: &Corpus,
    fer_alpha: f64,
) -> Result<DevMetrics, ModelError> {
    let mut losses = LossAggregate::default();
    for doc in &dev.documents {
        let mut pass = model.begin_pass(doc)?;
        let breakdown = model.document_loss(&mut pass)?;
        losses.add(&breakdown.values(&pass.graph));
    }
    let predictions = predict_corpus(model, dev, fer_alpha)?;
    let mut metrics = eval::re_scores(&predictions, dev);
    let has_gold_evidence = dev
        .documents
        .iter()
        .any(|d| d.gold_relations.iter().any(|r| !r.evidence.is_empty()));
    if has_gold_evidence && model.fer.is_some() {
        metrics.evidence_f1 = Some(eval::evidence_f1(&predictions, dev));
    }
    Ok(DevMetrics { metrics, losses })
}

/// One line of the run log: a dev evaluation after an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epoch: usize,
    pub optimizer_steps: usize,
    pub train_loss: f64,
    pub dev: DevMetrics,
}

/// Trained parameters with everything needed to rebuild the model.
pub struct Checkpoint {
    pub model_cfg: ModelConfig,
    pub inventory: Inventory,
    pub store: ParamStore,
    /// Vocabulary table for loaded (non-hashed) encoders.
    pub vocab_words: Option<Vec<String>>,
    pub epoch: usize,
    pub history: Vec<RunRecord>,
}

impl Checkpoint {
    pub fn of(model: &Model, epoch: usize, history: Vec<RunRecord>) -> Self {
        let vocab_words = match &model.encoder.vocab {
            crate::encoder::TokenVocab::Hashed { .. } => None,
            crate::encoder::TokenVocab::Table { map, .. } => {
                let mut words = vec![String::new(); map.len()];
                for (w, &i) in map {
                    words[i] = w.clone();
                }
                Some(words)
            }
        };
        Checkpoint {
            model_cfg: model.cfg.clone(),
            inventory: model.inventory.clone(),
            store: model.store.clone(),
            vocab_words,
            epoch,
            history,
        }
    }

    /// Rebuild a model with these parameters. The layout is regenerated from
    /// the config and then overwritten tensor-by-tensor, so forward passes
    /// reproduce the checkpointed model exactly.
    pub fn into_model(self) -> Result<Model, TrainError> {
        if self.model_cfg.encoder.backend == BackendKind::Pretrained && self.vocab_words.is_none() {
            return Err(TrainError::CheckpointMismatch(
                "pretrained checkpoint lacks a vocabulary table".into(),
            ));
        }
        let mut model = Model::new(self.model_cfg, self.inventory)?;
        if model.store.len() != self.store.len() {
            return Err(TrainError::CheckpointMismatch(format!(
                "expected {} tensors, checkpoint has {}",
                model.store.len(),
                self.store.len()
            )));
        }
        for (id, loaded) in model.store.ids().collect::<Vec<_>>().into_iter().zip(0..) {
            let lid = crate::graph::ParamId(loaded);
            if model.store.name(id) != self.store.name(lid) {
                return Err(TrainError::CheckpointMismatch(format!(
                    "tensor {} is `{}` in the layout but `{}` in the checkpoint",
                    loaded,
                    model.store.name(id),
                    self.store.name(lid)
                )));
            }
            if model.store.tensor(id).shape() != self.store.tensor(lid).shape() {
                return Err(TrainError::CheckpointMismatch(format!(
                    "tensor `{}` shape mismatch",
                    model.store.name(id)
                )));
            }
            *model.store.tensor_mut(id) = self.store.tensor(lid).clone();
        }
        if let Some(words) = self.vocab_words {
            model.install_vocabulary(&words);
        }
        Ok(model)
    }
}

/// Write a checkpoint to the self-describing container format.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), TrainError> {
    let meta = json!({
        "kind": "checkpoint",
        "model_config": serde_json::to_value(&ckpt.model_cfg).expect("config serializes"),
        "inventory": serde_json::to_value(&ckpt.inventory).expect("inventory serializes"),
        "vocab_words": ckpt.vocab_words,
        "epoch": ckpt.epoch,
        "history": serde_json::to_value(&ckpt.history).expect("history serializes"),
    });
    let tensors = ckpt
        .store
        .ids()
        .map(|id| (ckpt.store.name(id).to_string(), ckpt.store.tensor(id).clone()))
        .collect();
    container::write(path, &Container { meta, tensors })?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let c = container::read(path)?;
    let bad = |field: &str, e: serde_json::Error| {
        TrainError::CheckpointMismatch(format!("metadata field `{field}`: {e}"))
    };
    if c.meta["kind"] != "checkpoint" {
        return Err(TrainError::CheckpointMismatch(
            "container is not a checkpoint".into(),
        ));
    }
    let model_cfg: ModelConfig =
        serde_json::from_value(c.meta["model_config"].clone()).map_err(|e| bad("model_config", e))?;
    let inventory: Inventory =
        serde_json::from_value(c.meta["inventory"].clone()).map_err(|e| bad("inventory", e))?;
    let vocab_words: Option<Vec<String>> =
        serde_json::from_value(c.meta["vocab_words"].clone()).map_err(|e| bad("vocab_words", e))?;
    let epoch: usize = serde_json::from_value(c.meta["epoch"].clone()).map_err(|e| bad("epoch", e))?;
    let history: Vec<RunRecord> =
        serde_json::from_value(c.meta["history"].clone()).map_err(|e| bad("history", e))?;
    let mut store = ParamStore::new();
    for (name, tensor) in c.tensors {
        // Group assignment is restored from the name prefix; only the
        // learning-rate split depends on it.
        let group = if name.starts_with("enc.") {
            ParamGroup::Encoder
        } else {
            ParamGroup::Head
        };
        store.register(name, tensor, group);
    }
    Ok(Checkpoint {
        model_cfg,
        inventory,
        store,
        vocab_words,
        epoch,
        history,
    })
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<RunRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

/// Train the pipeline on `train_corpus`, evaluating on `dev_corpus` once per
/// epoch; returns the best-dev-F1 checkpoint. Builds a fresh miniature-
/// backend model over the training inventory.
pub fn train(
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
) -> Result<TrainOutcome, TrainError> {
    let model = Model::new(model_cfg, train_corpus.inventory())?;
    train_model(model, cfg, train_corpus, dev_corpus)
}

/// Same loop over an already constructed model (e.g. one wrapping loaded
/// pretrained encoder weights).
pub fn train_model(
    mut model: Model,
    cfg: &TrainConfig,
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    // The loss-shape hyperparameters live in the training contract.
    model.cfg.gamma_cr = cfg.gamma_cr;
    model.cfg.gamma_per = cfg.gamma_per;
    model.cfg.task_weights = cfg.task_weights;

    let n_docs = train_corpus.len();
    let steps_per_epoch = n_docs.div_ceil(cfg.batch_documents);
    let schedule = Schedule::linear(cfg.epochs * steps_per_epoch, cfg.warmup_ratio);
    let mut opt = AdamW::new(&model.store, cfg.weight_decay);
    let mut grads = GradBuffer::new(&model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut log: Vec<RunRecord> = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut stale_evals = 0;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n_docs).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_documents).enumerate() {
            grads.clear();
            let mut batch_titles = Vec::with_capacity(batch.len());
            let mut finite = true;
            for &di in batch {
                let doc = &train_corpus.documents[di];
                batch_titles.push(doc.title.clone());
                let mut pass = model.begin_pass(doc)?;
                let losses = model.document_loss(&mut pass)?;
                let value = pass.graph.value(losses.total).item();
                if !value.is_finite() {
                    finite = false;
                    break;
                }
                epoch_loss += value;
                let back = pass.graph.backward(losses.total);
                pass.graph.accumulate_param_grads(&back, &mut grads);
            }
            if !finite || !grads.all_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    titles: batch_titles,
                });
            }
            let norm = grads.global_norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            let factor = schedule.factor(step);
            opt.step(
                &mut model.store,
                &grads,
                cfg.encoder_lr * factor,
                cfg.head_lr * factor,
            );
            step += 1;
        }

        let dev = evaluate_dev(&model, dev_corpus, cfg.fer_alpha)?;
        let record = RunRecord {
            epoch,
            optimizer_steps: step,
            train_loss: epoch_loss,
            dev: dev.clone(),
        };
        log.push(record);
        let f1 = dev.metrics.f1;
        let improved = best.as_ref().map_or(true, |(b, _, _)| f1 > *b);
        if improved {
            best = Some((f1, epoch, Checkpoint::of(&model, epoch, log.clone())));
            stale_evals = 0;
        } else {
            stale_evals += 1;
            if stale_evals >= cfg.patience {
                break;
            }
        }
    }

    let (best_dev_f1, best_epoch, mut checkpoint) =
        best.expect("at least one epoch evaluates");
    checkpoint.history = log.clone();
    Ok(TrainOutcome {
        checkpoint,
        log,
        best_epoch,
        best_dev_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{generate, SyntheticConfig};
    use crate::graph::Graph;

    fn small_corpora() -> (Corpus, Corpus) {
        let train = generate(&SyntheticConfig {
            documents: 6,
            seed: 21,
            ..SyntheticConfig::default()
        });
        let dev = generate(&SyntheticConfig {
            documents: 3,
            seed: 22,
            ..SyntheticConfig::default()
        });
        (train, dev)
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_documents: 3,
            encoder_lr: 1e-3,
            head_lr: 1e-3,
            warmup_ratio: 0.0,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_warms_up_then_decays_to_zero() {
        let s = Schedule::linear(100, 0.1);
        assert!((s.factor(0) - 0.1).abs() < 1e-12);
        assert!((s.factor(9) - 1.0).abs() < 1e-12);
        assert!((s.factor(10) - 1.0).abs() < 1e-12);
        assert!(s.factor(11) < 1.0);
        assert!((s.factor(99) - (1.0 / 90.0)).abs() < 1e-12);
        // monotone decay after warmup
        for t in 10..99 {
            assert!(s.factor(t) > s.factor(t + 1));
        }
    }

    #[test]
    fn adamw_moves_against_the_gradient_and_only_there() {
        let mut store = ParamStore::new();
        let a = store.register("a", Tensor::row_vec(vec![1.0, -2.0, 0.5]), ParamGroup::Head);
        let b = store.register("b", Tensor::row_vec(vec![3.0]), ParamGroup::Head);
        let mut grads = GradBuffer::new(&store);
        grads.accumulate(a, &Tensor::row_vec(vec![0.5, -0.1, 0.0]));
        let before_a = store.tensor(a).clone();
        let before_b = store.tensor(b).clone();
        let mut opt = AdamW::new(&store, 0.0);
        opt.step(&mut store, &grads, 1e-2, 1e-2);
        let after_a = store.tensor(a);
        // positive gradient -> parameter decreases; negative -> increases
        assert!(after_a.get(0, 0) < before_a.get(0, 0));
        assert!(after_a.get(0, 1) > before_a.get(0, 1));
        // zero gradient coordinate and untouched tensors stay put
        assert_eq!(after_a.get(0, 2), before_a.get(0, 2));
        assert_eq!(store.tensor(b), &before_b);
    }

    #[test]
    fn loss_decreases_on_a_fixed_batch() {
        let (train_corpus, _) = small_corpora();
        let docs: Vec<_> = train_corpus.documents[..3].to_vec();
        let corpus = Corpus::new(docs);
        let mut model =
            Model::new(crate::model::ModelConfig::miniature(31), corpus.inventory()).unwrap();
        let mut opt = AdamW::new(&model.store, 0.0);
        let mut grads = GradBuffer::new(&model.store);
        let mut losses = Vec::new();
        for _ in 0..11 {
            grads.clear();
            let mut total = 0.0;
            for doc in &corpus.documents {
                let mut pass = model.begin_pass(doc).unwrap();
                let breakdown = model.document_loss(&mut pass).unwrap();
                total += pass.graph.value(breakdown.total).item();
                let back = pass.graph.backward(breakdown.total);
                pass.graph.accumulate_param_grads(&back, &mut grads);
            }
            losses.push(total);
            let norm = grads.global_norm();
            if norm > 1.0 {
                grads.scale(1.0 / norm);
            }
            opt.step(&mut model.store, &grads, 1e-3, 1e-3);
        }
        assert!(
            losses[10] < losses[0],
            "loss did not decrease: {losses:?}"
        );
        let decreasing = losses.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(decreasing >= 8, "only {decreasing} of 10 steps decreased");
    }

    #[test]
    fn same_seed_gives_identical_traces() {
        let (train_corpus, dev_corpus) = small_corpora();
        let cfg = quick_cfg();
        let run1 = train(
            crate::model::ModelConfig::miniature(9),
            &cfg,
            &train_corpus,
            &dev_corpus,
        )
        .unwrap();
        let run2 = train(
            crate::model::ModelConfig::miniature(9),
            &cfg,
            &train_corpus,
            &dev_corpus,
        )
        .unwrap();
        assert_eq!(run1.log, run2.log);
        assert_eq!(run1.best_epoch, run2.best_epoch);
    }

    #[test]
    fn early_stopping_returns_best_observed_f1() {
        let (train_corpus, dev_corpus) = small_corpora();
        let mut cfg = quick_cfg();
        cfg.epochs = 4;
        cfg.patience = 1;
        let out = train(
            crate::model::ModelConfig::miniature(9),
            &cfg,
            &train_corpus,
            &dev_corpus,
        )
        .unwrap();
        let best_logged = out
            .log
            .iter()
            .map(|r| r.dev.metrics.f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(out.best_dev_f1 >= best_logged - 1e-12);
        // run records carry every per-task loss
        let rec = &out.log[0];
        assert!(rec.dev.losses.cr.is_some());
        assert!(rec.dev.losses.et.is_some());
        assert!(rec.dev.losses.per.is_some());
        assert!(rec.dev.losses.fer.is_some());
    }

    fn fingerprint(model: &Model, corpus: &Corpus) -> Vec<u64> {
        let mut out = Vec::new();
        for doc in &corpus.documents {
            let mut pass = model.begin_pass(doc).unwrap();
            for pc in model.confidences(&mut pass).unwrap() {
                out.extend(pc.confidences.iter().map(|c| c.to_bits()));
            }
        }
        out
    }

    #[test]
    fn checkpoint_round_trip_is_forward_exact() {
        let (train_corpus, dev_corpus) = small_corpora();
        let cfg = quick_cfg();
        let out = train(
            crate::model::ModelConfig::miniature(9),
            &cfg,
            &train_corpus,
            &dev_corpus,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.drlc");
        save_checkpoint(&path, &out.checkpoint).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        // config echo: gammas and task weights ride along
        assert_eq!(loaded.model_cfg.gamma_cr, cfg.gamma_cr);
        assert_eq!(loaded.model_cfg.task_weights, cfg.task_weights);
        assert_eq!(loaded.epoch, out.checkpoint.epoch);

        let probe = Corpus::new(dev_corpus.documents[..2].to_vec());
        let model_before = out.checkpoint.into_model().unwrap();
        let model_after = loaded.into_model().unwrap();
        assert_eq!(fingerprint(&model_before, &probe), fingerprint(&model_after, &probe));
    }

    #[test]
    fn corrupted_checkpoint_is_a_checksum_error() {
        let (train_corpus, dev_corpus) = small_corpora();
        let out = train(
            crate::model::ModelConfig::miniature(9),
            &quick_cfg(),
            &train_corpus,
            &dev_corpus,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.drlc");
        save_checkpoint(&path, &out.checkpoint).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(TrainError::Container(ContainerError::ChecksumMismatch)) => {}
            Err(other) => panic!("expected checksum error, got {other:?}"),
            Ok(_) => panic!("corrupted checkpoint loaded successfully"),
        }
    }

    #[test]
    fn graph_is_quiet_without_backward() {
        // evaluation path never needs gradients; a forward-only pass stays
        // usable for repeated scoring
        let (_, dev_corpus) = small_corpora();
        let model = Model::new(
            crate::model::ModelConfig::miniature(3),
            dev_corpus.inventory(),
        )
        .unwrap();
        let metrics = evaluate_dev(&model, &dev_corpus, 0.5).unwrap();
        assert!(metrics.losses.total.is_finite());
        let g = Graph::new();
        assert!(g.is_empty());
    }
}
