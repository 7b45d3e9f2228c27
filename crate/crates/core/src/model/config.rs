use serde::{Deserialize, Serialize};

use crate::error::{HtdsError, Result};

/// Which metadata embedding families are added to token encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaFlags {
    pub pe: bool,
    pub rev_pe: bool,
    pub te: bool,
    pub rev_te: bool,
    pub ce: bool,
}

impl MetaFlags {
    pub const ALL: MetaFlags = MetaFlags { pe: true, rev_pe: true, te: true, rev_te: true, ce: true };
    pub const NONE: MetaFlags = MetaFlags { pe: false, rev_pe: false, te: false, rev_te: false, ce: false };
}

impl Default for MetaFlags {
    fn default() -> Self {
        MetaFlags::ALL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Tokens per chunk, CLS included.
    pub t_c: usize,
    /// Maximum chunks per stay.
    pub n_c: usize,
    pub hidden: usize,
    pub vocab_size: usize,
    pub n_labels: usize,
    /// Rows of the category table, fallback included.
    pub n_categories: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    /// Layers of the cross-chunk transformer; 0 disables it.
    pub second_layers: usize,
    pub second_heads: usize,
    pub ffn_mult: usize,
    /// Keep only each chunk's CLS vector after the chunk encoder.
    pub cls_only: bool,
    pub meta: MetaFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t_c: 512,
            n_c: 32,
            hidden: 64,
            vocab_size: 30_000,
            n_labels: 50,
            n_categories: 16,
            enc_layers: 1,
            enc_heads: 8,
            second_layers: 1,
            second_heads: 8,
            ffn_mult: 4,
            cls_only: false,
            meta: MetaFlags::ALL,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HtdsError::Config(m));
        for (name, v) in [("t_c", self.t_c), ("n_c", self.n_c), ("hidden", self.hidden), ("n_labels", self.n_labels), ("ffn_mult", self.ffn_mult)] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.t_c < 2 {
            return bad("t_c must be >= 2".into());
        }
        if self.vocab_size < 4 || self.n_categories == 0 {
            return bad("vocab_size must be >= 4 and n_categories >= 1".into());
        }
        if self.enc_heads == 0 || self.second_heads == 0 || !self.hidden.is_multiple_of(self.enc_heads) || !self.hidden.is_multiple_of(self.second_heads) {
            return bad(format!(
                "hidden {} must be divisible by enc_heads {} and second_heads {}",
                self.hidden, self.enc_heads, self.second_heads
            ));
        }
        Ok(())
    }

    pub fn ffn_width(&self) -> usize {
        self.hidden * self.ffn_mult
    }
}
