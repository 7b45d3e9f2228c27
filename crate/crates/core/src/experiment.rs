//! End-to-end runs over an ingested corpus: preprocessing fitted on the
//! training split, training with dev-based model selection, and evaluation.

use crate::config::RunConfig;
use crate::corpus::{Corpus, SplitName};
use crate::error::{HtdsError, Result};
use crate::metrics::MetricsReport;
use crate::model::{Checkpoint, CheckpointHeader, ModelConfig, FORMAT_VERSION};
use crate::pipeline::{predict_all, PreparedStay, Preprocessor};
use crate::tokenizer::{build_vocab, CategoryTable, Vocabulary};
use crate::training::{fit, optimize_threshold, FitResult};

/// Vocabulary and category table from the training split; resolves the
/// data-dependent model dimensions against the configured upper bounds.
pub fn build_preprocessor(corpus: &Corpus, run: &RunConfig) -> Result<(Preprocessor, ModelConfig)> {
    let train = corpus.stays_in(SplitName::Train);
    if train.is_empty() {
        return Err(HtdsError::Data("training split is empty".into()));
    }
    let vocab = build_vocab(train.iter().copied(), run.model.vocab_size)?;
    let categories = CategoryTable::new(train.iter().flat_map(|s| s.notes.iter().map(|n| n.category.clone())).collect());
    if corpus.labels.len() > run.model.n_labels {
        return Err(HtdsError::Config(format!("corpus has {} labels but n_labels is {}", corpus.labels.len(), run.model.n_labels)));
    }
    if categories.len() > run.model.n_categories {
        return Err(HtdsError::Config(format!(
            "training split needs {} category rows but n_categories is {}",
            categories.len(),
            run.model.n_categories
        )));
    }
    let model = ModelConfig { vocab_size: vocab.len(), n_labels: corpus.labels.len(), n_categories: categories.len(), ..run.model.clone() };
    model.validate()?;
    let pre = Preprocessor {
        vocab,
        categories,
        t_c: model.t_c,
        n_c: model.n_c,
        n_labels: model.n_labels,
        strategy: run.strategy.clone(),
        notes_mode: run.notes,
    };
    Ok((pre, model))
}

pub fn prepare_split(corpus: &Corpus, pre: &Preprocessor, split: SplitName) -> Result<Vec<PreparedStay>> {
    pre.prepare_all(&corpus.stays_in(split))
}

/// Rebuilds the preprocessing a checkpoint was trained with.
pub fn preprocessor_for(checkpoint: &Checkpoint, vocab: Vocabulary) -> Result<Preprocessor> {
    let h = &checkpoint.header;
    if vocab.len() != h.config.vocab_size {
        return Err(HtdsError::Config(format!("vocabulary has {} entries, checkpoint expects {}", vocab.len(), h.config.vocab_size)));
    }
    let categories = CategoryTable::new(h.categories.clone());
    if categories.len() != h.config.n_categories {
        return Err(HtdsError::Checkpoint("category table disagrees with the stored config".into()));
    }
    Ok(Preprocessor {
        vocab,
        categories,
        t_c: h.config.t_c,
        n_c: h.config.n_c,
        n_labels: h.config.n_labels,
        strategy: h.strategy.parse()?,
        notes_mode: h.notes_mode.parse()?,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub vocab: Vocabulary,
    pub fit: FitResult,
}

/// Trains on the train split, selects the epoch and threshold on dev.
pub fn train_run(corpus: &Corpus, run: &RunConfig, threads: usize) -> Result<TrainOutcome> {
    run.validate()?;
    let (pre, model) = build_preprocessor(corpus, run)?;
    let train = prepare_split(corpus, &pre, SplitName::Train)?;
    let dev = prepare_split(corpus, &pre, SplitName::Dev)?;
    let result = fit(&train, &dev, &model, &run.train, threads)?;
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        config: model,
        seed: run.train.seed,
        threshold: result.threshold,
        labels: corpus.labels.codes().to_vec(),
        categories: pre.categories.names().to_vec(),
        notes_mode: run.notes.to_string(),
        strategy: run.strategy.to_string(),
    };
    let checkpoint = Checkpoint { header, params: result.params.clone() };
    Ok(TrainOutcome { checkpoint, vocab: pre.vocab, fit: result })
}

/// Scores `split` at the stored threshold, or at a threshold re-tuned on the
/// dev split. Re-tuning is refused when `split` is test.
pub fn evaluate(checkpoint: &Checkpoint, vocab: &Vocabulary, corpus: &Corpus, split: SplitName, retune: bool, threads: usize) -> Result<MetricsReport> {
    if retune && split == SplitName::Test {
        return Err(HtdsError::Config("threshold re-tuning is only allowed on the dev split".into()));
    }
    if corpus.labels.codes() != checkpoint.header.labels.as_slice() {
        return Err(HtdsError::Config("corpus label space differs from the checkpoint's".into()));
    }
    let pre = preprocessor_for(checkpoint, vocab.clone())?;
    let stays = prepare_split(corpus, &pre, split)?;
    if stays.is_empty() {
        return Err(HtdsError::Data(format!("split {split} is empty")));
    }
    let cfg = &checkpoint.header.config;
    let probs = predict_all(&checkpoint.params, cfg, &stays, threads)?;
    let gold: Vec<Vec<bool>> = stays.iter().map(PreparedStay::gold_bool).collect();
    let threshold = if !retune {
        checkpoint.header.threshold
    } else if split == SplitName::Dev {
        optimize_threshold(&probs, &gold, &Default::default())?
    } else {
        let dev = prepare_split(corpus, &pre, SplitName::Dev)?;
        let dev_probs = predict_all(&checkpoint.params, cfg, &dev, threads)?;
        let dev_gold: Vec<Vec<bool>> = dev.iter().map(PreparedStay::gold_bool).collect();
        optimize_threshold(&dev_probs, &dev_gold, &Default::default())?
    };
    MetricsReport::compute(&probs, &gold, threshold)
}
