//! The four operator commands: train, infer, eval, report.

use crate::config::RunConfig;
use crate::CliError;
use docrel_core::corpus::{docred, pubtator, Corpus};
use docrel_core::encoder::{BackendKind, PretrainedAdapter};
use docrel_core::eval::{self, Prediction, Report, ReportEntry};
use docrel_core::infer::{self, EnsembleOptions};
use docrel_core::model::Model;
use docrel_core::train::{self, load_checkpoint, save_checkpoint, Checkpoint};
use serde_json::json;
use std::path::{Path, PathBuf};

fn load_corpus(cfg: &RunConfig, path: &Path) -> Result<Corpus, CliError> {
    let corpus = match cfg.data.format.as_str() {
        "docred" => docred::load_corpus(path).map_err(|e| CliError::Validation(e.to_string()))?,
        "pubtator" => {
            let (corpus, warnings) =
                pubtator::load_corpus(path).map_err(|e| CliError::Validation(e.to_string()))?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            corpus
        }
        other => {
            return Err(CliError::Validation(format!(
                "unknown corpus format `{other}`"
            )))
        }
    };
    Ok(corpus)
}

fn require_path<'a>(
    path: &'a Option<PathBuf>,
    what: &str,
) -> Result<&'a PathBuf, CliError> {
    path.as_ref()
        .ok_or_else(|| CliError::Usage(format!("config is missing data.{what}")))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn build_model(cfg: &RunConfig, inventory: docrel_core::corpus::Inventory) -> Result<Model, CliError> {
    let model_cfg = cfg.model_config().map_err(CliError::Validation)?;
    match model_cfg.encoder.backend {
        BackendKind::Miniature => {
            Model::new(model_cfg, inventory).map_err(|e| CliError::Runtime(e.to_string()))
        }
        BackendKind::Pretrained => {
            let name = cfg
                .encoder
                .name
                .as_ref()
                .ok_or_else(|| CliError::Usage("pretrained backend needs encoder.name".into()))?;
            let path = PretrainedAdapter::resolve(name);
            let mut store = docrel_core::ParamStore::new();
            let encoder = PretrainedAdapter::load(&mut store, &path).map_err(|e| {
                CliError::Validation(format!(
                    "cannot load pretrained container {}: {e}",
                    path.display()
                ))
            })?;
            Model::with_encoder(model_cfg, inventory, store, encoder)
                .map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let train_path = require_path(&cfg.data.train, "train")?;
    let dev_path = require_path(&cfg.data.dev, "dev")?;
    let train_corpus = load_corpus(cfg, train_path)?;
    let dev_corpus = load_corpus(cfg, dev_path)?;
    if train_corpus.is_empty() {
        return Err(CliError::Validation("training corpus is empty".into()));
    }

    let model_cfg = cfg.model_config().map_err(CliError::Validation)?;
    let train_cfg = cfg.train_config();
    train_cfg
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;

    // The pretrained backend runs through the same loop, starting from the
    // loaded encoder weights.
    let outcome = if model_cfg.encoder.backend == BackendKind::Pretrained {
        let model = build_model(cfg, train_corpus.inventory())?;
        train::train_model(model, &train_cfg, &train_corpus, &dev_corpus)
            .map_err(|e| CliError::Runtime(e.to_string()))?
    } else {
        train::train(model_cfg, &train_cfg, &train_corpus, &dev_corpus)
            .map_err(|e| CliError::Runtime(e.to_string()))?
    };

    let out = &cfg.output.dir;
    ensure_dir(out)?;
    save_checkpoint(&out.join("checkpoint.drlc"), &outcome.checkpoint)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut log = String::new();
    log.push_str(&serde_json::to_string(&json!({"config": cfg})).expect("config serializes"));
    log.push('\n');
    for record in &outcome.log {
        log.push_str(&serde_json::to_string(record).expect("record serializes"));
        log.push('\n');
    }
    write_file(&out.join("run_log.jsonl"), &log)?;
    write_file(&out.join("config.resolved.toml"), &cfg.to_toml())?;

    println!(
        "trained {} epochs; best dev F1 {:.4} at epoch {}; checkpoint: {}",
        outcome.log.len(),
        outcome.best_dev_f1,
        outcome.best_epoch,
        out.join("checkpoint.drlc").display()
    );
    Ok(())
}

fn restore_model(path: &Path) -> Result<(Checkpoint, Model), CliError> {
    let ckpt = load_checkpoint(path).map_err(|e| CliError::Validation(e.to_string()))?;
    let ckpt_copy = load_checkpoint(path).map_err(|e| CliError::Validation(e.to_string()))?;
    let model = ckpt
        .into_model()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok((ckpt_copy, model))
}

pub fn cmd_infer(cfg: &RunConfig, checkpoint: &Path, split: &str) -> Result<(), CliError> {
    let (_ckpt, model) = restore_model(checkpoint)?;
    let target_path = match split {
        "dev" => require_path(&cfg.data.dev, "dev")?,
        "test" => require_path(&cfg.data.test, "test")?,
        other => {
            return Err(CliError::Usage(format!(
                "unknown split `{other}` (expected dev or test)"
            )))
        }
    };
    let target_corpus = load_corpus(cfg, target_path)?;
    let out = &cfg.output.dir;
    ensure_dir(out)?;

    let opts = EnsembleOptions {
        alpha: cfg.infer.alpha,
        per_pair_cap: cfg.infer.per_pair_cap,
    };

    let (predictions, dump, meta) = if cfg.infer.no_augment {
        let split_out = infer::predict_plain(&model, &target_corpus, opts.alpha)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let meta = json!({
            "config": cfg,
            "augmented": false,
            "split": split,
        });
        (
            split_out.predictions.clone(),
            split_out.dump(&model, &target_corpus),
            meta,
        )
    } else {
        let dev_path = require_path(&cfg.data.dev, "dev")?;
        let dev_corpus = load_corpus(cfg, dev_path)?;
        if dev_corpus
            .documents
            .iter()
            .all(|d| d.gold_relations.is_empty())
        {
            return Err(CliError::Validation(
                "dev corpus has no gold labels; θ/τ fitting needs them (or pass --no-augment)"
                    .into(),
            ));
        }
        let run = if split == "dev" {
            infer::run_ensemble(&model, &dev_corpus, None, opts)
                .map_err(|e| CliError::Runtime(e.to_string()))?
        } else {
            infer::run_ensemble(&model, &dev_corpus, Some(&target_corpus), opts)
                .map_err(|e| CliError::Runtime(e.to_string()))?
        };
        let split_out = match split {
            "dev" => &run.dev,
            _ => run.target.as_ref().expect("target split requested"),
        };
        let meta = json!({
            "config": cfg,
            "augmented": true,
            "split": split,
            "theta_percent": run.theta_percent,
            "tau": run.blend.tau,
            "uncertain": split_out.uncertain.len(),
            "diagnostics": split_out.diagnostics,
        });
        (
            split_out.predictions.clone(),
            split_out.dump(&model, &target_corpus),
            meta,
        )
    };

    let pred_json =
        serde_json::to_string_pretty(&predictions).expect("predictions serialize");
    // self-check against the submission schema before writing
    let _: Vec<Prediction> = serde_json::from_str(&pred_json)
        .map_err(|e| CliError::Runtime(format!("internal schema violation: {e}")))?;
    write_file(&out.join("predictions.json"), &pred_json)?;
    write_file(&out.join("confidences.jsonl"), &dump)?;
    write_file(
        &out.join("infer_meta.json"),
        &serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )?;
    println!(
        "{} predictions written to {}",
        predictions.len(),
        out.join("predictions.json").display()
    );
    Ok(())
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("prediction schema violation: {e}")))
}

pub fn cmd_eval(
    cfg: &RunConfig,
    predictions: &Path,
    gold: &Path,
    train_facts: Option<&Path>,
    label: &str,
    write_out: bool,
) -> Result<(), CliError> {
    let preds = load_predictions(predictions)?;
    let gold_corpus = load_corpus(cfg, gold)?;
    let mut record = eval::re_scores(&preds, &gold_corpus);
    let has_evidence = gold_corpus
        .documents
        .iter()
        .any(|d| d.gold_relations.iter().any(|r| !r.evidence.is_empty()));
    if has_evidence {
        record.evidence_f1 = Some(eval::evidence_f1(&preds, &gold_corpus));
    }
    if let Some(train_path) = train_facts {
        let train_corpus = load_corpus(cfg, train_path)?;
        let facts = eval::TrainFacts::from_corpus(&train_corpus);
        record.ign_f1 = Some(eval::ign_f1(&preds, &gold_corpus, &facts));
    }
    let report = Report::new(vec![ReportEntry {
        label: label.to_string(),
        record,
    }]);
    print!("{}", report.to_text());
    if write_out {
        let out = &cfg.output.dir;
        ensure_dir(out)?;
        write_file(&out.join("report.txt"), &report.to_text())?;
        write_file(&out.join("report.tsv"), &report.to_tsv())?;
        write_file(&out.join("report.json"), &report.to_json())?;
    }
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig, inputs: &[PathBuf], write_out: bool) -> Result<(), CliError> {
    let mut entries = Vec::new();
    for path in inputs {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        let report: Report = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("report schema violation: {e}")))?;
        entries.extend(report.entries);
    }
    let merged = Report::new(entries);
    print!("{}", merged.to_text());
    if write_out {
        let out = &cfg.output.dir;
        ensure_dir(out)?;
        write_file(&out.join("report.txt"), &merged.to_text())?;
        write_file(&out.join("report.tsv"), &merged.to_tsv())?;
        write_file(&out.join("report.json"), &merged.to_json())?;
    }
    Ok(())
}
