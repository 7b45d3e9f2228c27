//! Flat `key = value` run configuration.
//!
//! Every model and training hyperparameter, plus the selection strategy and
//! notes mode, lives in one file. `#` starts a comment. Unknown or repeated
//! keys are errors. `vocab_size`, `n_labels` and `n_categories` are upper
//! bounds; the resolved values come from the training data.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{HtdsError, Result};
use crate::model::{MetaFlags, ModelConfig};
use crate::pipeline::NotesMode;
use crate::selection::SelectionStrategy;
use crate::training::{ThresholdGrid, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub strategy: SelectionStrategy,
    pub notes: NotesMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { model: ModelConfig::default(), train: TrainConfig::default(), strategy: SelectionStrategy::Diversity, notes: NotesMode::All }
    }
}

pub const KEYS: [&str; 35] = [
    "t_c",
    "n_c",
    "hidden",
    "vocab_size",
    "n_labels",
    "n_categories",
    "enc_layers",
    "enc_heads",
    "second_layers",
    "second_heads",
    "ffn_mult",
    "cls_only",
    "meta_pe",
    "meta_rev_pe",
    "meta_te",
    "meta_rev_te",
    "meta_ce",
    "peak_lr",
    "epochs_max",
    "patience",
    "effective_batch",
    "micro_batch",
    "phase_fracs",
    "lr_div_start",
    "lr_div_final",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "seed",
    "threshold_lo",
    "threshold_hi",
    "threshold_step",
    "strategy",
    "notes",
];

fn parse_value<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse {value:?}"))
}

fn parse_fracs(value: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated fractions, got {value:?}"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse_value(p)?;
    }
    Ok(out)
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "t_c" => m.t_c = parse_value(value)?,
            "n_c" => m.n_c = parse_value(value)?,
            "hidden" => m.hidden = parse_value(value)?,
            "vocab_size" => m.vocab_size = parse_value(value)?,
            "n_labels" => m.n_labels = parse_value(value)?,
            "n_categories" => m.n_categories = parse_value(value)?,
            "enc_layers" => m.enc_layers = parse_value(value)?,
            "enc_heads" => m.enc_heads = parse_value(value)?,
            "second_layers" => m.second_layers = parse_value(value)?,
            "second_heads" => m.second_heads = parse_value(value)?,
            "ffn_mult" => m.ffn_mult = parse_value(value)?,
            "cls_only" => m.cls_only = parse_value(value)?,
            "meta_pe" => m.meta.pe = parse_value(value)?,
            "meta_rev_pe" => m.meta.rev_pe = parse_value(value)?,
            "meta_te" => m.meta.te = parse_value(value)?,
            "meta_rev_te" => m.meta.rev_te = parse_value(value)?,
            "meta_ce" => m.meta.ce = parse_value(value)?,
            "peak_lr" => t.peak_lr = parse_value(value)?,
            "epochs_max" => t.epochs_max = parse_value(value)?,
            "patience" => t.patience = parse_value(value)?,
            "effective_batch" => t.effective_batch = parse_value(value)?,
            "micro_batch" => t.micro_batch = parse_value(value)?,
            "phase_fracs" => t.phase_fracs = parse_fracs(value)?,
            "lr_div_start" => t.lr_div_start = parse_value(value)?,
            "lr_div_final" => t.lr_div_final = parse_value(value)?,
            "weight_decay" => t.weight_decay = parse_value(value)?,
            "beta1" => t.beta1 = parse_value(value)?,
            "beta2" => t.beta2 = parse_value(value)?,
            "adam_eps" => t.adam_eps = parse_value(value)?,
            "seed" => t.seed = parse_value(value)?,
            "threshold_lo" => t.threshold_grid.lo = parse_value(value)?,
            "threshold_hi" => t.threshold_grid.hi = parse_value(value)?,
            "threshold_step" => t.threshold_grid.step = parse_value(value)?,
            "strategy" => self.strategy = value.parse().map_err(|e: HtdsError| e.to_string())?,
            "notes" => self.notes = value.parse().map_err(|e: HtdsError| e.to_string())?,
            other => unreachable!("key {other:?} missing from the parser"),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. `source` names the input in
    /// error messages.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HtdsError::parse(source, line_no, format!("expected key = value, got {line:?}")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(HtdsError::parse(source, line_no, format!("unknown key {key:?}")));
            }
            if !seen.insert(key.to_string()) {
                return Err(HtdsError::parse(source, line_no, format!("duplicate key {key:?}")));
            }
            cfg.set(key, value).map_err(|msg| HtdsError::parse(source, line_no, format!("{key}: {msg}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HtdsError::io(path, e))?;
        RunConfig::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Every key, one per line, in a form `parse` reads back unchanged.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let MetaFlags { pe, rev_pe, te, rev_te, ce } = m.meta;
        let ThresholdGrid { lo, hi, step } = t.threshold_grid;
        let [f0, f1, f2] = t.phase_fracs;
        let values: [String; 35] = [
            m.t_c.to_string(),
            m.n_c.to_string(),
            m.hidden.to_string(),
            m.vocab_size.to_string(),
            m.n_labels.to_string(),
            m.n_categories.to_string(),
            m.enc_layers.to_string(),
            m.enc_heads.to_string(),
            m.second_layers.to_string(),
            m.second_heads.to_string(),
            m.ffn_mult.to_string(),
            m.cls_only.to_string(),
            pe.to_string(),
            rev_pe.to_string(),
            te.to_string(),
            rev_te.to_string(),
            ce.to_string(),
            t.peak_lr.to_string(),
            t.epochs_max.to_string(),
            t.patience.to_string(),
            t.effective_batch.to_string(),
            t.micro_batch.to_string(),
            format!("{f0},{f1},{f2}"),
            t.lr_div_start.to_string(),
            t.lr_div_final.to_string(),
            t.weight_decay.to_string(),
            t.beta1.to_string(),
            t.beta2.to_string(),
            t.adam_eps.to_string(),
            t.seed.to_string(),
            lo.to_string(),
            hi.to_string(),
            step.to_string(),
            self.strategy.to_string(),
            self.notes.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
