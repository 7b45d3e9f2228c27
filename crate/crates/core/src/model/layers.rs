//! Forward and backward passes of the transformer building blocks.
//!
//! Every forward function returns the activations its backward counterpart
//! needs. Attention takes a key mask: masked keys get exactly zero weight and
//! are never read.

use super::mat::{dot, Mat};
use super::params::EncoderLayer;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn linear(x: &Mat, w: &Mat, b: &Mat) -> Mat {
    let mut y = x.matmul(w);
    for r in 0..y.rows {
        y.row_mut(r).iter_mut().zip(&b.data).for_each(|(v, bb)| *v += bb);
    }
    y
}

/// Accumulates `dW`, `db` and returns `dx`.
fn linear_backward(x: &Mat, w: &Mat, dy: &Mat, dw: &mut Mat, db: &mut Mat) -> Mat {
    dw.add_assign(&x.matmul_tn(dy));
    for r in 0..dy.rows {
        db.data.iter_mut().zip(dy.row(r)).for_each(|(a, b)| *a += b);
    }
    dy.matmul_nt(w)
}

#[derive(Clone, Debug)]
pub struct LnCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Mat, g: &Mat, b: &Mat) -> (Mat, LnCache) {
    let n = x.cols as f64;
    let mut xhat = Mat::zeros(x.rows, x.cols);
    let mut y = Mat::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for c in 0..x.cols {
            let h = (row[c] - mean) * is;
            xhat.set(r, c, h);
            y.set(r, c, h * g.data[c] + b.data[c]);
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(cache: &LnCache, g: &Mat, dy: &Mat, dg: &mut Mat, db: &mut Mat) -> Mat {
    let n = dy.cols as f64;
    let mut dx = Mat::zeros(dy.rows, dy.cols);
    let mut dxhat = vec![0.0; dy.cols];
    for r in 0..dy.rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for c in 0..dy.cols {
            dxhat[c] = dyr[c] * g.data[c];
            dg.data[c] += dyr[c] * xh[c];
            db.data[c] += dyr[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dot(&dxhat, xh) / n;
        let is = cache.inv_std[r];
        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = is * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Softmax over the entries of `scores` whose `valid` flag is set; invalid
/// entries are left at exactly zero. Shifted by the maximum for stability.
pub fn masked_softmax(scores: &[f64], valid: &[bool], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (s, &v) in scores.iter().zip(valid) {
        if v && *s > max {
            max = *s;
        }
    }
    let mut sum = 0.0;
    for ((o, s), &v) in out.iter_mut().zip(scores).zip(valid) {
        if v {
            *o = (s - max).exp();
            sum += *o;
        } else {
            *o = 0.0;
        }
    }
    for (o, &v) in out.iter_mut().zip(valid) {
        if v {
            *o /= sum;
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    q: Mat,
    k: Mat,
    v: Mat,
    /// `heads` blocks of `n x n` row-stochastic weights.
    probs: Vec<f64>,
    concat: Mat,
}

fn attention(l: &EncoderLayer, a: &Mat, valid: &[bool], heads: usize) -> (Mat, AttentionCache) {
    let n = a.rows;
    let h = a.cols;
    let d = h / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let q = linear(a, &l.wq, &l.bq);
    let k = linear(a, &l.wk, &l.bk);
    let v = linear(a, &l.wv, &l.bv);
    let mut probs = vec![0.0; heads * n * n];
    let mut concat = Mat::zeros(n, h);
    let mut scores = vec![0.0; n];
    for hd in 0..heads {
        let off = hd * d;
        for i in 0..n {
            let qi = &q.row(i)[off..off + d];
            for j in 0..n {
                scores[j] = if valid[j] { scale * dot(qi, &k.row(j)[off..off + d]) } else { 0.0 };
            }
            let p = &mut probs[(hd * n + i) * n..(hd * n + i + 1) * n];
            masked_softmax(&scores, valid, p);
            let out = &mut concat.row_mut(i)[off..off + d];
            for j in 0..n {
                if !valid[j] {
                    continue;
                }
                let pj = p[j];
                for (o, vv) in out.iter_mut().zip(&v.row(j)[off..off + d]) {
                    *o += pj * vv;
                }
            }
        }
    }
    let y = linear(&concat, &l.wo, &l.bo);
    (y, AttentionCache { q, k, v, probs, concat })
}

fn attention_backward(l: &EncoderLayer, a: &Mat, cache: &AttentionCache, valid: &[bool], heads: usize, dy: &Mat, g: &mut EncoderLayer) -> Mat {
    let n = dy.rows;
    let h = dy.cols;
    let d = h / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let dconcat = linear_backward(&cache.concat, &l.wo, dy, &mut g.wo, &mut g.bo);
    let mut dq = Mat::zeros(n, h);
    let mut dk = Mat::zeros(n, h);
    let mut dv = Mat::zeros(n, h);
    let mut dp = vec![0.0; n];
    for hd in 0..heads {
        let off = hd * d;
        for i in 0..n {
            let p = &cache.probs[(hd * n + i) * n..(hd * n + i + 1) * n];
            let doi = &dconcat.row(i)[off..off + d];
            let mut rowdot = 0.0;
            for j in 0..n {
                if !valid[j] {
                    dp[j] = 0.0;
                    continue;
                }
                dp[j] = dot(doi, &cache.v.row(j)[off..off + d]);
                rowdot += p[j] * dp[j];
                let pj = p[j];
                for (o, x) in dv.row_mut(j)[off..off + d].iter_mut().zip(doi) {
                    *o += pj * x;
                }
            }
            for j in 0..n {
                if !valid[j] {
                    continue;
                }
                let ds = p[j] * (dp[j] - rowdot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in off..off + d {
                    dq.data[i * h + c] += ds * cache.k.data[j * h + c];
                    dk.data[j * h + c] += ds * cache.q.data[i * h + c];
                }
            }
        }
    }
    let mut da = linear_backward(a, &l.wq, &dq, &mut g.wq, &mut g.bq);
    da.add_assign(&linear_backward(a, &l.wk, &dk, &mut g.wk, &mut g.bk));
    da.add_assign(&linear_backward(a, &l.wv, &dv, &mut g.wv, &mut g.bv));
    da
}

/// Activations of one encoder block.
#[derive(Clone, Debug)]
pub struct BlockCache {
    ln1: LnCache,
    a: Mat,
    attn: AttentionCache,
    ln2: LnCache,
    b: Mat,
    pre: Mat,
    act: Mat,
}

impl BlockCache {
    /// Row-stochastic attention weights of head `hd`, row `i`.
    pub fn attention_row(&self, hd: usize, i: usize) -> &[f64] {
        let n = self.a.rows;
        &self.attn.probs[(hd * n + i) * n..(hd * n + i + 1) * n]
    }
}

/// `y = x + Attn(LN1(x)); out = y + FFN(LN2(y))`
pub fn block_forward(l: &EncoderLayer, x: &Mat, valid: &[bool], heads: usize) -> (Mat, BlockCache) {
    let (a, ln1) = layer_norm(x, &l.ln1_g, &l.ln1_b);
    let (m, attn) = attention(l, &a, valid, heads);
    let mut x1 = x.clone();
    x1.add_assign(&m);
    let (b, ln2) = layer_norm(&x1, &l.ln2_g, &l.ln2_b);
    let pre = linear(&b, &l.w1, &l.b1);
    let act = Mat::from_vec(pre.rows, pre.cols, pre.data.iter().map(|&v| gelu(v)).collect());
    let f = linear(&act, &l.w2, &l.b2);
    let mut out = x1;
    out.add_assign(&f);
    (out, BlockCache { ln1, a, attn, ln2, b, pre, act })
}

/// Accumulates parameter gradients into `g` and returns `dx`.
pub fn block_backward(l: &EncoderLayer, cache: &BlockCache, valid: &[bool], heads: usize, dy: &Mat, g: &mut EncoderLayer) -> Mat {
    let dact = linear_backward(&cache.act, &l.w2, dy, &mut g.w2, &mut g.b2);
    let dpre = Mat::from_vec(dact.rows, dact.cols, dact.data.iter().zip(&cache.pre.data).map(|(d, &x)| d * gelu_grad(x)).collect());
    let db = linear_backward(&cache.b, &l.w1, &dpre, &mut g.w1, &mut g.b1);
    let mut dx1 = layer_norm_backward(&cache.ln2, &l.ln2_g, &db, &mut g.ln2_g, &mut g.ln2_b);
    dx1.add_assign(dy);
    let da = attention_backward(l, &cache.a, &cache.attn, valid, heads, &dx1, g);
    let mut dx = layer_norm_backward(&cache.ln1, &l.ln1_g, &da, &mut g.ln1_g, &mut g.ln1_b);
    dx.add_assign(&dx1);
    dx
}
