// scratch experiment for the synthetic end-to-end target
use docrel_core::corpus::synthetic::{generate, SyntheticConfig};
use docrel_core::model::{ModelConfig, TaskToggles};
use docrel_core::train::{evaluate_dev, train, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let docs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let batch: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let small: bool = args.get(4).map(|s| s == "small").unwrap_or(false);

    let gen_cfg = |seed: u64| {
        if small {
            SyntheticConfig {
                documents: if seed == 7 { docs } else { 20 },
                seed,
                name_pool_size: 10,
                min_entities: 4,
                max_entities: 5,
                min_relations: 2,
                max_relations: 3,
                distractors: 1,
                fillers: 0,
                extra_mention_prob: 0.4,
                ..Default::default()
            }
        } else {
            SyntheticConfig {
                documents: if seed == 7 { docs } else { 20 },
                seed,
                ..Default::default()
            }
        }
    };
    let train_corpus = generate(&gen_cfg(7));
    let dev_corpus = generate(&gen_cfg(8));
    let sents: usize = train_corpus.documents.iter().map(|d| d.sentences.len()).sum();
    println!(
        "train {} docs, {:.1} sentences/doc, {} relations",
        train_corpus.len(),
        sents as f64 / train_corpus.len() as f64,
        train_corpus.documents.iter().map(|d| d.gold_relations.len()).sum::<usize>()
    );

    for (label, toggles) in [("all", TaskToggles::all()), ("re-only", TaskToggles::none())] {
        let mut mc = ModelConfig::miniature(11);
        mc.toggles = toggles;
        let tc = TrainConfig {
            epochs: 50,
            batch_documents: batch,
            encoder_lr: lr,
            head_lr: lr,
            warmup_ratio: 0.06,
            clip_norm: 1.0,
            seed: 11,
            patience: 50,
            weight_decay: 0.01,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let out = train(mc, &tc, &train_corpus, &dev_corpus).unwrap();
        let model = out.checkpoint.into_model().unwrap();
        let on_train = evaluate_dev(&model, &train_corpus, 0.5).unwrap();
        println!(
            "{label}: best dev F1 {:.4} at ep {}; train F1 {:.4}; {:.0}s",
            out.best_dev_f1, out.best_epoch, on_train.metrics.f1, t.elapsed().as_secs_f64()
        );
        for r in out.log.iter().step_by(10) {
            let d = &r.dev;
            println!(
                "  ep {:2}: loss {:8.1} | dev P {:.3} R {:.3} F1 {:.3} ev {:?} | re {:.1} cr {:?} et {:?} per {:?} fer {:?}",
                r.epoch, r.train_loss, d.metrics.precision, d.metrics.recall, d.metrics.f1,
                d.metrics.evidence_f1.map(|x| (x * 100.0).round() / 100.0),
                d.losses.re,
                d.losses.cr.map(|x| x.round()),
                d.losses.et.map(|x| x.round()),
                d.losses.per.map(|x| x.round()),
                d.losses.fer.map(|x| x.round()),
            );
        }
    }
}
