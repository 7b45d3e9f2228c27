use super::config::ModelConfig;
use super::forward::{chunk_valid, ForwardTrace};
use super::layers::block_backward;
use super::mat::Mat;
use super::params::ModelParams;
use crate::error::{HtdsError, Result};

/// Gradient of the mean binary cross-entropy with respect to the logits,
/// multiplied by `scale`: `scale * (p_l - y_l) / n_labels`.
pub fn logit_gradient(probs: &[f64], gold: &[f64], scale: f64) -> Vec<f64> {
    let n = probs.len() as f64;
    probs.iter().zip(gold).map(|(p, y)| scale * (p - y) / n).collect()
}

/// Accumulates `scale * dLoss/dParams` for one stay into `grads`, where the
/// loss is the mean binary cross-entropy over labels.
pub fn model_backward(params: &ModelParams, cfg: &ModelConfig, trace: &ForwardTrace, gold: &[f64], scale: f64, grads: &mut ModelParams) -> Result<()> {
    let n_labels = trace.probs.len();
    if gold.len() != n_labels {
        return Err(HtdsError::Shape(format!("{} gold labels for {n_labels} outputs", gold.len())));
    }
    let hidden = cfg.hidden;
    let dlogit = logit_gradient(&trace.probs, gold, scale);

    // classifier: logit_l = W_l . v_l
    let mut dv = Mat::zeros(hidden, n_labels);
    for (l, &g) in dlogit.iter().enumerate() {
        for k in 0..hidden {
            dv.set(k, l, g * params.classifier.get(l, k));
            grads.classifier.data[l * hidden + k] += g * trace.label_repr.get(k, l);
        }
    }

    // V = H^T A and the column softmax A = softmax(H alpha^T)
    let h = &trace.h;
    let a = &trace.attention;
    let n = h.rows;
    let mut dh = a.matmul_nt(&dv);
    let mut da = h.matmul(&dv);
    for l in 0..n_labels {
        let s: f64 = (0..n).filter(|&i| trace.mask[i]).map(|i| a.get(i, l) * da.get(i, l)).sum();
        for i in 0..n {
            let ds = if trace.mask[i] { a.get(i, l) * (da.get(i, l) - s) } else { 0.0 };
            da.set(i, l, ds);
        }
    }
    let ds = da;
    dh.add_assign(&ds.matmul(&params.label_emb));
    grads.label_emb.add_assign(&ds.matmul_tn(h));

    // cross-chunk stack
    let mut dx = dh;
    for (i, layer) in params.second.iter().enumerate().rev() {
        dx = block_backward(layer, &trace.second_caches[i], &trace.mask, cfg.second_heads, &dx, &mut grads.second[i]);
    }

    // back to per-chunk matrices, through the metadata sums
    for (ci, chunk) in trace.chunks.iter().enumerate() {
        let mut dchunk = Mat::zeros(cfg.t_c, hidden);
        if cfg.cls_only {
            dchunk.row_mut(0).copy_from_slice(dx.row(ci));
        } else {
            dchunk.data.copy_from_slice(&dx.data[ci * cfg.t_c * hidden..(ci + 1) * cfg.t_c * hidden]);
        }

        let mut dmeta = vec![0.0; hidden];
        for r in 0..dchunk.rows {
            dmeta.iter_mut().zip(dchunk.row(r)).for_each(|(a, b)| *a += b);
        }
        let m = chunk.meta;
        let flags = cfg.meta;
        for (on, table, idx) in [
            (flags.pe, &mut grads.pe, m.pe),
            (flags.rev_pe, &mut grads.rev_pe, m.rev_pe),
            (flags.te, &mut grads.te, m.te),
            (flags.rev_te, &mut grads.rev_te, m.rev_te),
            (flags.ce, &mut grads.ce, m.ce),
        ] {
            if on {
                table.row_mut(idx).iter_mut().zip(&dmeta).for_each(|(a, b)| *a += b);
            }
        }

        let valid = chunk_valid(chunk);
        let mut d = dchunk;
        for (li, layer) in params.encoder.iter().enumerate().rev() {
            d = block_backward(layer, &trace.encoder_caches[ci][li], &valid, cfg.enc_heads, &d, &mut grads.encoder[li]);
        }
        for (t, &id) in chunk.token_ids.iter().enumerate() {
            let src = d.row(t);
            grads.tok_emb.row_mut(id as usize).iter_mut().zip(src).for_each(|(a, b)| *a += b);
            grads.pos_emb.row_mut(t).iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }

    if let Some(name) = grads.first_non_finite() {
        return Err(HtdsError::Numeric(format!("non-finite gradient in tensor {name}")));
    }
    Ok(())
}
