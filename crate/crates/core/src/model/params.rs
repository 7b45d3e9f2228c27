use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::config::ModelConfig;
use super::mat::Mat;
use crate::error::{HtdsError, Result};

/// Standard deviation of the metadata embedding initialisation.
pub const META_INIT_SD: f64 = 0.1;

/// One pre-norm transformer encoder block.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub ln1_g: Mat,
    pub ln1_b: Mat,
    pub wq: Mat,
    pub bq: Mat,
    pub wk: Mat,
    pub bk: Mat,
    pub wv: Mat,
    pub bv: Mat,
    pub wo: Mat,
    pub bo: Mat,
    pub ln2_g: Mat,
    pub ln2_b: Mat,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

impl EncoderLayer {
    fn zeros(hidden: usize, ffn: usize) -> Self {
        let sq = || Mat::zeros(hidden, hidden);
        let row = |n| Mat::zeros(1, n);
        EncoderLayer {
            ln1_g: row(hidden),
            ln1_b: row(hidden),
            wq: sq(),
            bq: row(hidden),
            wk: sq(),
            bk: row(hidden),
            wv: sq(),
            bv: row(hidden),
            wo: sq(),
            bo: row(hidden),
            ln2_g: row(hidden),
            ln2_b: row(hidden),
            w1: Mat::zeros(hidden, ffn),
            b1: row(ffn),
            w2: Mat::zeros(ffn, hidden),
            b2: row(hidden),
        }
    }

    fn init(hidden: usize, ffn: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut l = EncoderLayer::zeros(hidden, ffn);
        l.ln1_g.fill(1.0);
        l.ln2_g.fill(1.0);
        for w in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.w1, &mut l.w2] {
            fill_fan_in(w, rng);
        }
        l
    }

    fn tensors(&self) -> [(&'static str, &Mat); 16] {
        [
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut Mat); 16] {
        [
            ("ln1_g", &mut self.ln1_g),
            ("ln1_b", &mut self.ln1_b),
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln2_g", &mut self.ln2_g),
            ("ln2_b", &mut self.ln2_b),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

/// Every learnable tensor. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub tok_emb: Mat,
    pub pos_emb: Mat,
    pub pe: Mat,
    pub rev_pe: Mat,
    pub te: Mat,
    pub rev_te: Mat,
    pub ce: Mat,
    pub encoder: Vec<EncoderLayer>,
    pub second: Vec<EncoderLayer>,
    /// Label embeddings, `n_labels x hidden`.
    pub label_emb: Mat,
    /// Per-label classifier rows, `n_labels x hidden`.
    pub classifier: Mat,
}

fn fill_fan_in(m: &mut Mat, rng: &mut ChaCha8Rng) {
    let bound = 1.0 / (m.rows as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    m.data.iter_mut().for_each(|x| *x = dist.sample(rng));
}

fn fill_uniform(m: &mut Mat, fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    m.data.iter_mut().for_each(|x| *x = dist.sample(rng));
}

fn fill_normal(m: &mut Mat, sd: f64, rng: &mut ChaCha8Rng) {
    let dist = Normal::new(0.0, sd).expect("positive sd");
    m.data.iter_mut().for_each(|x| *x = dist.sample(rng));
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden;
        ModelParams {
            tok_emb: Mat::zeros(cfg.vocab_size, h),
            pos_emb: Mat::zeros(cfg.t_c, h),
            pe: Mat::zeros(cfg.n_c, h),
            rev_pe: Mat::zeros(cfg.n_c, h),
            te: Mat::zeros(cfg.n_c, h),
            rev_te: Mat::zeros(cfg.n_c, h),
            ce: Mat::zeros(cfg.n_categories, h),
            encoder: (0..cfg.enc_layers).map(|_| EncoderLayer::zeros(h, cfg.ffn_width())).collect(),
            second: (0..cfg.second_layers).map(|_| EncoderLayer::zeros(h, cfg.ffn_width())).collect(),
            label_emb: Mat::zeros(cfg.n_labels, h),
            classifier: Mat::zeros(cfg.n_labels, h),
        }
    }

    /// Metadata tables ~ N(0, 0.1); weight matrices uniform in
    /// `±1/sqrt(fan_in)`; biases zero; normalisation gains one.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = cfg.hidden;
        let mut p = ModelParams::zeros(cfg);
        fill_uniform(&mut p.tok_emb, h, &mut rng);
        fill_uniform(&mut p.pos_emb, h, &mut rng);
        for t in [&mut p.pe, &mut p.rev_pe, &mut p.te, &mut p.rev_te, &mut p.ce] {
            fill_normal(t, META_INIT_SD, &mut rng);
        }
        p.encoder = (0..cfg.enc_layers).map(|_| EncoderLayer::init(h, cfg.ffn_width(), &mut rng)).collect();
        p.second = (0..cfg.second_layers).map(|_| EncoderLayer::init(h, cfg.ffn_width(), &mut rng)).collect();
        fill_uniform(&mut p.label_emb, h, &mut rng);
        fill_uniform(&mut p.classifier, h, &mut rng);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, m| m.fill(0.0));
        z
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("pos_emb".into(), &self.pos_emb),
            ("pe".into(), &self.pe),
            ("rev_pe".into(), &self.rev_pe),
            ("te".into(), &self.te),
            ("rev_te".into(), &self.rev_te),
            ("ce".into(), &self.ce),
        ];
        for (stack, layers) in [("encoder", &self.encoder), ("second", &self.second)] {
            for (i, l) in layers.iter().enumerate() {
                out.extend(l.tensors().into_iter().map(|(n, m)| (format!("{stack}.{i}.{n}"), m)));
            }
        }
        out.push(("label_emb".into(), &self.label_emb));
        out.push(("classifier".into(), &self.classifier));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out: Vec<(String, &mut Mat)> = vec![
            ("tok_emb".into(), &mut self.tok_emb),
            ("pos_emb".into(), &mut self.pos_emb),
            ("pe".into(), &mut self.pe),
            ("rev_pe".into(), &mut self.rev_pe),
            ("te".into(), &mut self.te),
            ("rev_te".into(), &mut self.rev_te),
            ("ce".into(), &mut self.ce),
        ];
        for (stack, layers) in [("encoder", &mut self.encoder), ("second", &mut self.second)] {
            for (i, l) in layers.iter_mut().enumerate() {
                out.extend(l.tensors_mut().into_iter().map(|(n, m)| (format!("{stack}.{i}.{n}"), m)));
            }
        }
        out.push(("label_emb".into(), &mut self.label_emb));
        out.push(("classifier".into(), &mut self.classifier));
        out
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Mat)) {
        for (name, m) in self.tensors_mut() {
            f(&name, m);
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.visit_mut(|_, m| m.scale(s));
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors().into_iter().find(|(_, m)| !m.is_finite()).map(|(n, _)| n)
    }

    /// Checks every tensor shape against `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = ModelParams::zeros(cfg);
        let mine = self.tensors();
        let theirs = expected.tensors();
        if mine.len() != theirs.len() {
            return Err(HtdsError::Shape(format!("expected {} tensors, found {}", theirs.len(), mine.len())));
        }
        for ((n, a), (_, b)) in mine.iter().zip(theirs.iter()) {
            if a.shape() != b.shape() {
                return Err(HtdsError::Shape(format!("{n}: expected {:?}, found {:?}", b.shape(), a.shape())));
            }
        }
        Ok(())
    }
}
