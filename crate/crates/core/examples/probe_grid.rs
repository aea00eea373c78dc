// grid probe: seeds x configs, one line each
use docrel_core::corpus::synthetic::{generate, SyntheticConfig};
use docrel_core::model::{ModelConfig, TaskToggles};
use docrel_core::train::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let batch: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let enc_lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let head_lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let clip: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let extra: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.4);
    let maxrel: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(3);
    let dist: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(2);
    let minrel: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(2);
    let seeds: Vec<u64> = args
        .get(9)
        .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![11, 12, 13]);

    let gen_cfg = |seed: u64, docs: usize| SyntheticConfig {
        documents: docs,
        seed,
        name_pool_size: 10,
        min_entities: 4,
        max_entities: 5,
        min_relations: minrel,
        max_relations: maxrel,
        distractors: dist,
        fillers: 0,
        extra_mention_prob: extra,
        ..Default::default()
    };
    let train_corpus = generate(&gen_cfg(7, 60));
    let dev_corpus = generate(&gen_cfg(8, 20));

    for &seed in &seeds {
        let mut line = format!("seed {seed}:");
        for (label, toggles) in [("all", TaskToggles::all()), ("re", TaskToggles::none())] {
            let mut mc = ModelConfig::miniature(seed);
            mc.toggles = toggles;
            let tc = TrainConfig {
                epochs: 50,
                batch_documents: batch,
                encoder_lr: enc_lr,
                head_lr,
                warmup_ratio: 0.06,
                clip_norm: clip,
                seed,
                patience: 50,
                weight_decay: 0.01,
                ..TrainConfig::default()
            };
            let out = train(mc, &tc, &train_corpus, &dev_corpus).unwrap();
            let best = out
                .log
                .iter()
                .max_by(|a, b| a.dev.metrics.f1.partial_cmp(&b.dev.metrics.f1).unwrap())
                .unwrap();
            line.push_str(&format!(
                "  {label} F1 {:.3} ev {:.3} @ep{}",
                best.dev.metrics.f1,
                best.dev.metrics.evidence_f1.unwrap_or(f64::NAN),
                best.epoch
            ));
        }
        println!("{line}");
    }
}
