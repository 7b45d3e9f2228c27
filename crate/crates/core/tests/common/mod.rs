#![allow(dead_code)]

use htds::model::{model_backward, model_forward, ModelConfig, ModelParams};
use htds::selection::{assign_meta_indices, MetaIndices};
use htds::tokenizer::{Chunk, CLS_ID, PAD_ID};
use htds::training::bce_loss;
use rand::Rng;

/// Random well-formed selected chunks: 1..=n_c chunks, random real lengths,
/// documents contiguous and increasing, meta indices filled in.
pub fn random_chunks(cfg: &ModelConfig, rng: &mut impl Rng) -> Vec<Chunk> {
    let n = rng.gen_range(1..=cfg.n_c);
    let mut doc = 0;
    let mut chunks = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.gen_bool(0.5) {
            doc += 1;
        }
        let real_len = rng.gen_range(1..=cfg.t_c);
        let mut token_ids = vec![PAD_ID; cfg.t_c];
        token_ids[0] = CLS_ID;
        for t in token_ids.iter_mut().take(real_len).skip(1) {
            *t = rng.gen_range(3..cfg.vocab_size as u32);
        }
        chunks.push(Chunk { token_ids, real_len, doc_index: doc, category_id: 0, meta: MetaIndices::default() });
    }
    let n_docs = doc + 1;
    let cats: Vec<usize> = (0..n_docs).map(|_| rng.gen_range(0..cfg.n_categories)).collect();
    for c in &mut chunks {
        c.category_id = cats[c.doc_index];
    }
    assign_meta_indices(&mut chunks);
    chunks
}

pub fn random_gold(n_labels: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n_labels).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect()
}

pub fn loss(params: &ModelParams, cfg: &ModelConfig, chunks: &[Chunk], gold: &[f64]) -> f64 {
    let trace = model_forward(params, cfg, chunks).unwrap();
    bce_loss(&trace.probs, gold).unwrap()
}

/// Gradient agreement for one tensor.
#[derive(Debug)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

/// Relative error between analytic `a` and numeric `n`, with an absolute
/// floor so entries that are both ~0 compare as equal.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central finite differences over every element of every tensor.
pub fn finite_difference_check(params: &ModelParams, cfg: &ModelConfig, chunks: &[Chunk], gold: &[f64], h: f64) -> Vec<TensorCheck> {
    let trace = model_forward(params, cfg, chunks).unwrap();
    let mut grads = params.zeros_like();
    model_backward(params, cfg, &trace, gold, 1.0, &mut grads).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, m)| (n, m.data.clone())).collect();

    let mut work = params.clone();
    let mut out = Vec::new();
    for (k, (name, g)) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        let mut biggest: f64 = 0.0;
        for (j, &a) in g.iter().enumerate() {
            let orig = work.tensors()[k].1.data[j];
            work.tensors_mut()[k].1.data[j] = orig + h;
            let up = loss(&work, cfg, chunks, gold);
            work.tensors_mut()[k].1.data[j] = orig - h;
            let down = loss(&work, cfg, chunks, gold);
            work.tensors_mut()[k].1.data[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(a, numeric));
            biggest = biggest.max(a.abs());
        }
        out.push(TensorCheck { name: name.clone(), max_rel_err: worst, max_abs_grad: biggest });
    }
    out
}
