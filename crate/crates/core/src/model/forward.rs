use super::config::{MetaFlags, ModelConfig};
use super::layers::{block_forward, masked_softmax, BlockCache};
use super::mat::Mat;
use super::params::ModelParams;
use crate::error::{HtdsError, Result};
use crate::selection::MetaIndices;
use crate::tokenizer::Chunk;

/// Everything the forward pass produced, plus what backward needs.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Rows fed to label attention: `n_sel * t_c` token rows, or `n_sel`
    /// CLS rows when `cls_only`.
    pub h: Mat,
    pub mask: Vec<bool>,
    /// `rows(h) x n_labels`; every column is a distribution over valid rows.
    pub attention: Mat,
    /// `hidden x n_labels`; column `l` represents label `l`.
    pub label_repr: Mat,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub(crate) chunks: Vec<Chunk>,
    pub(crate) encoder_caches: Vec<Vec<BlockCache>>,
    pub(crate) second_caches: Vec<BlockCache>,
}

impl ForwardTrace {
    pub fn n_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn second_caches(&self) -> &[BlockCache] {
        &self.second_caches
    }
}

pub(crate) fn validate_chunks(cfg: &ModelConfig, chunks: &[Chunk]) -> Result<()> {
    if chunks.is_empty() {
        return Err(HtdsError::Data("no chunks to encode".into()));
    }
    if chunks.len() > cfg.n_c {
        return Err(HtdsError::Shape(format!("{} chunks exceed the budget of {}", chunks.len(), cfg.n_c)));
    }
    for (i, c) in chunks.iter().enumerate() {
        if c.token_ids.len() != cfg.t_c {
            return Err(HtdsError::Shape(format!("chunk {i} has {} tokens, expected {}", c.token_ids.len(), cfg.t_c)));
        }
        if c.real_len == 0 || c.real_len > cfg.t_c {
            return Err(HtdsError::Shape(format!("chunk {i} has real length {}", c.real_len)));
        }
        if let Some(&bad) = c.token_ids.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(HtdsError::Shape(format!("chunk {i} token id {bad} outside vocabulary of {}", cfg.vocab_size)));
        }
    }
    Ok(())
}

pub(crate) fn chunk_valid(chunk: &Chunk) -> Vec<bool> {
    (0..chunk.token_ids.len()).map(|t| chunk.is_valid(t)).collect()
}

fn encode_chunk(params: &ModelParams, cfg: &ModelConfig, chunk: &Chunk) -> (Mat, Vec<BlockCache>) {
    let mut x = Mat::zeros(cfg.t_c, cfg.hidden);
    for (t, &id) in chunk.token_ids.iter().enumerate() {
        let tok = params.tok_emb.row(id as usize);
        let pos = params.pos_emb.row(t);
        for ((o, a), b) in x.row_mut(t).iter_mut().zip(tok).zip(pos) {
            *o = a + b;
        }
    }
    let valid = chunk_valid(chunk);
    let mut caches = Vec::with_capacity(params.encoder.len());
    for layer in &params.encoder {
        let (y, cache) = block_forward(layer, &x, &valid, cfg.enc_heads);
        caches.push(cache);
        x = y;
    }
    (x, caches)
}

/// Encodes each chunk independently; returns one `t_c x hidden` matrix per chunk.
pub fn chunk_encoder_forward(params: &ModelParams, cfg: &ModelConfig, chunks: &[Chunk]) -> Result<Vec<Mat>> {
    validate_chunks(cfg, chunks)?;
    Ok(chunks.iter().map(|c| encode_chunk(params, cfg, c).0).collect())
}

fn table_row<'a>(table: &'a Mat, idx: usize, name: &str) -> Result<&'a [f64]> {
    if idx >= table.rows {
        return Err(HtdsError::Shape(format!("{name} index {idx} outside table of {} rows", table.rows)));
    }
    Ok(table.row(idx))
}

/// Sum of the enabled metadata embeddings for one chunk.
pub fn meta_vector(params: &ModelParams, flags: MetaFlags, meta: &MetaIndices) -> Result<Vec<f64>> {
    let mut v = vec![0.0; params.pe.cols];
    let families = [
        (flags.pe, &params.pe, meta.pe, "pe"),
        (flags.rev_pe, &params.rev_pe, meta.rev_pe, "rev_pe"),
        (flags.te, &params.te, meta.te, "te"),
        (flags.rev_te, &params.rev_te, meta.rev_te, "rev_te"),
        (flags.ce, &params.ce, meta.ce, "ce"),
    ];
    for (on, table, idx, name) in families {
        if on {
            let row = table_row(table, idx, name)?;
            v.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
    }
    Ok(v)
}

/// Adds each chunk's metadata embedding sum to every one of its token vectors.
pub fn apply_meta_embeddings(encodings: &[Mat], chunks: &[Chunk], params: &ModelParams, flags: MetaFlags) -> Result<Vec<Mat>> {
    if encodings.len() != chunks.len() {
        return Err(HtdsError::Shape(format!("{} encodings for {} chunks", encodings.len(), chunks.len())));
    }
    encodings
        .iter()
        .zip(chunks)
        .map(|(enc, c)| {
            let m = meta_vector(params, flags, &c.meta)?;
            let mut out = enc.clone();
            for r in 0..out.rows {
                out.row_mut(r).iter_mut().zip(&m).for_each(|(a, b)| *a += b);
            }
            Ok(out)
        })
        .collect()
}

fn cross_chunk_with_caches(params: &ModelParams, cfg: &ModelConfig, input: &Mat, valid: &[bool]) -> (Mat, Vec<BlockCache>) {
    let mut x = input.clone();
    let mut caches = Vec::with_capacity(params.second.len());
    for layer in &params.second {
        let (y, cache) = block_forward(layer, &x, valid, cfg.second_heads);
        caches.push(cache);
        x = y;
    }
    (x, caches)
}

/// Cross-chunk transformer over the concatenated rows; identity when the
/// stack is empty.
pub fn cross_chunk_forward(params: &ModelParams, cfg: &ModelConfig, input: &Mat, valid: &[bool]) -> Mat {
    cross_chunk_with_caches(params, cfg, input, valid).0
}

/// Stacks chunk matrices into the cross-chunk input and its row mask.
pub fn flatten_chunks(encodings: &[Mat], chunks: &[Chunk], cls_only: bool) -> (Mat, Vec<bool>) {
    let hidden = encodings.first().map_or(0, |m| m.cols);
    if cls_only {
        let mut out = Mat::zeros(encodings.len(), hidden);
        for (i, e) in encodings.iter().enumerate() {
            out.row_mut(i).copy_from_slice(e.row(0));
        }
        (out, vec![true; encodings.len()])
    } else {
        let rows: usize = encodings.iter().map(|e| e.rows).sum();
        let mut data = Vec::with_capacity(rows * hidden);
        let mut mask = Vec::with_capacity(rows);
        for (e, c) in encodings.iter().zip(chunks) {
            data.extend_from_slice(&e.data);
            mask.extend((0..e.rows).map(|t| c.is_valid(t)));
        }
        (Mat::from_vec(rows, hidden, data), mask)
    }
}

/// `A = softmax(H alpha^T)` over valid rows, per label column, and `V = H^T A`.
pub fn label_attention(h: &Mat, valid: &[bool], alpha: &Mat) -> Result<(Mat, Mat)> {
    if !valid.iter().any(|&v| v) {
        return Err(HtdsError::Data("label attention: every position is masked".into()));
    }
    if h.cols != alpha.cols || h.rows != valid.len() {
        return Err(HtdsError::Shape("label attention operands disagree".into()));
    }
    let n = h.rows;
    let n_labels = alpha.rows;
    let scores = h.matmul_nt(alpha);
    let mut a = Mat::zeros(n, n_labels);
    let mut col = vec![0.0; n];
    let mut out = vec![0.0; n];
    for l in 0..n_labels {
        for i in 0..n {
            col[i] = scores.get(i, l);
        }
        masked_softmax(&col, valid, &mut out);
        for i in 0..n {
            a.set(i, l, out[i]);
        }
    }
    let mut v = Mat::zeros(h.cols, n_labels);
    for i in 0..n {
        if !valid[i] {
            continue;
        }
        let hi = h.row(i);
        let ai = a.row(i);
        for (k, &hk) in hi.iter().enumerate() {
            let vrow = v.row_mut(k);
            for (o, &w) in vrow.iter_mut().zip(ai) {
                *o += hk * w;
            }
        }
    }
    Ok((a, v))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `p_l = sigmoid(W_l . v_l)`; returns `(logits, probabilities)`.
pub fn classify(label_repr: &Mat, weights: &Mat) -> Result<(Vec<f64>, Vec<f64>)> {
    if weights.rows != label_repr.cols || weights.cols != label_repr.rows {
        return Err(HtdsError::Shape(format!(
            "classifier {:?} does not match label representations {:?}",
            weights.shape(),
            label_repr.shape()
        )));
    }
    let logits: Vec<f64> = (0..weights.rows)
        .map(|l| (0..weights.cols).map(|k| weights.get(l, k) * label_repr.get(k, l)).sum())
        .collect();
    let probs = logits.iter().map(|&z| sigmoid(z)).collect();
    Ok((logits, probs))
}

/// Full pipeline for one stay's selected, meta-indexed chunks.
pub fn model_forward(params: &ModelParams, cfg: &ModelConfig, chunks: &[Chunk]) -> Result<ForwardTrace> {
    validate_chunks(cfg, chunks)?;
    let mut encodings = Vec::with_capacity(chunks.len());
    let mut encoder_caches = Vec::with_capacity(chunks.len());
    for c in chunks {
        let (e, caches) = encode_chunk(params, cfg, c);
        encodings.push(e);
        encoder_caches.push(caches);
    }
    let with_meta = apply_meta_embeddings(&encodings, chunks, params, cfg.meta)?;
    let (h_in, mask) = flatten_chunks(&with_meta, chunks, cfg.cls_only);
    let (h, second_caches) = cross_chunk_with_caches(params, cfg, &h_in, &mask);
    let (attention, label_repr) = label_attention(&h, &mask, &params.label_emb)?;
    let (logits, probs) = classify(&label_repr, &params.classifier)?;
    Ok(ForwardTrace { h, mask, attention, label_repr, logits, probs, chunks: chunks.to_vec(), encoder_caches, second_caches })
}

/// Probabilities only.
pub fn predict(params: &ModelParams, cfg: &ModelConfig, chunks: &[Chunk]) -> Result<Vec<f64>> {
    Ok(model_forward(params, cfg, chunks)?.probs)
}
