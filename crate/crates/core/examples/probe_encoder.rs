// encoder sanity probe: representation collapse + minimal ET learnability
use docrel_core::corpus::synthetic::{generate, SyntheticConfig};
use docrel_core::graph::{GradBuffer, Graph};
use docrel_core::model::{Model, ModelConfig, TaskToggles};
use docrel_core::train::AdamW;

fn h_stats(model: &Model, corpus: &docrel_core::corpus::Corpus) -> (f64, f64) {
    // mean pairwise cosine similarity of token rows + attention self-mass
    let doc = &corpus.documents[0];
    let pass = model.begin_pass(doc).unwrap();
    let h = pass.graph.value(pass.h);
    let n = h.rows();
    let mut cos_sum = 0.0;
    let mut pairs = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let (mut dot, mut ni, mut nj) = (0.0, 0.0, 0.0);
            for c in 0..h.cols() {
                dot += h.get(i, c) * h.get(j, c);
                ni += h.get(i, c) * h.get(i, c);
                nj += h.get(j, c) * h.get(j, c);
            }
            cos_sum += dot / (ni.sqrt() * nj.sqrt());
            pairs += 1;
        }
    }
    let a = pass.graph.value(pass.a);
    let self_mass: f64 = (0..n).map(|i| a.get(i, i)).sum::<f64>() / n as f64;
    (cos_sum / pairs as f64, self_mass)
}

fn main() {
    let cfg = SyntheticConfig {
        documents: 60,
        seed: 7,
        name_pool_size: 10,
        min_entities: 3,
        max_entities: 5,
        min_relations: 2,
        max_relations: 3,
        distractors: 1,
        fillers: 0,
        extra_mention_prob: 0.4,
        ..Default::default()
    };
    let train_corpus = generate(&cfg);
    let dev_corpus = generate(&SyntheticConfig { documents: 20, seed: 8, ..cfg.clone() });

    // ET-only training (RE head present but observe ET)
    let mut mc = ModelConfig::miniature(11);
    mc.toggles = TaskToggles { cr: false, et: true, per: false, fer: false };
    mc.task_weights.et = 1.0; // let ET dominate for the probe
    let mut model = Model::new(mc, train_corpus.inventory()).unwrap();
    let (cos0, self0) = h_stats(&model, &train_corpus);
    println!("init: mean-cos {cos0:.3} self-attn {self0:.3}");

    let mut opt = AdamW::new(&model.store, 0.0);
    let mut grads = GradBuffer::new(&model.store);
    let lr = 1e-3;
    for step in 0..3000 {
        let doc = &train_corpus.documents[step % train_corpus.len()];
        let mut pass = model.begin_pass(doc).unwrap();
        let losses = model.document_loss(&mut pass).unwrap();
        grads.clear();
        let back = pass.graph.backward(losses.total);
        pass.graph.accumulate_param_grads(&back, &mut grads);
        let norm = grads.global_norm();
        if norm > 1.0 {
            grads.scale(1.0 / norm);
        }
        opt.step(&mut model.store, &grads, lr, lr);
        if step % 500 == 0 || step == 2999 {
            // dev ET loss per term
            let mut et_sum = 0.0;
            let mut terms = 0usize;
            for d in &dev_corpus.documents {
                let mut p = model.begin_pass(d).unwrap();
                let l = model.document_loss(&mut p).unwrap();
                let v = l.values(&p.graph);
                et_sum += v.et.unwrap();
                terms += d.entities.len() * 2;
            }
            let (cos, smass) = h_stats(&model, &train_corpus);
            println!(
                "step {step:4}: dev ET/term {:.3} (uniform {:.3}) | mean-cos {cos:.3} self-attn {smass:.3}",
                et_sum / terms as f64,
                (model.inventory.type_count() as f64).ln()
            );
        }
    }
    let _ = Graph::new();
}
