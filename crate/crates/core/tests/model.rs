mod common;

use common::{finite_difference_check, random_chunks, random_gold};
use htds::model::{
    apply_meta_embeddings, chunk_encoder_forward, cross_chunk_forward, flatten_chunks, label_attention, meta_vector, model_forward, sigmoid,
    tiny_config, Checkpoint, CheckpointHeader, Mat, MetaFlags, ModelParams,
};
use htds::selection::MetaIndices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn gradients_match_finite_differences() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = ModelParams::init(&cfg, 3).unwrap();
    let chunks = random_chunks(&cfg, &mut rng);
    let gold = random_gold(cfg.n_labels, &mut rng);
    for c in finite_difference_check(&params, &cfg, &chunks, &gold, 1e-5) {
        assert!(c.max_rel_err < 1e-4, "{}: {:e}", c.name, c.max_rel_err);
    }
}

#[test]
fn gradients_match_in_ablated_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for cfg in [
        htds::model::ModelConfig { cls_only: true, ..tiny_config() },
        htds::model::ModelConfig { second_layers: 0, meta: MetaFlags { ce: false, te: false, ..MetaFlags::ALL }, ..tiny_config() },
    ] {
        let params = ModelParams::init(&cfg, 4).unwrap();
        let chunks = random_chunks(&cfg, &mut rng);
        let gold = random_gold(cfg.n_labels, &mut rng);
        for c in finite_difference_check(&params, &cfg, &chunks, &gold, 1e-5) {
            assert!(c.max_rel_err < 1e-4, "{}: {:e}", c.name, c.max_rel_err);
        }
    }
}

#[test]
fn sigmoid_of_log_three_is_three_quarters() {
    assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
    assert_eq!(sigmoid(0.0), 0.5);
    assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
}

#[test]
fn meta_embedding_sum_is_added() {
    let cfg = htds::model::ModelConfig { hidden: 2, enc_heads: 1, second_heads: 1, ..tiny_config() };
    let mut p = ModelParams::zeros(&cfg);
    p.pe.row_mut(0).copy_from_slice(&[1.0, 1.0]);
    p.ce.row_mut(1).copy_from_slice(&[0.5, -0.5]);
    let flags = MetaFlags { pe: true, ce: true, ..MetaFlags::NONE };
    let meta = MetaIndices { pe: 0, ce: 1, ..Default::default() };
    assert_eq!(meta_vector(&p, flags, &meta).unwrap(), vec![1.5, 0.5]);
}

#[test]
fn label_attention_uniform_for_equal_scores() {
    let h = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[5.0, 5.0]]);
    let alpha = Mat::zeros(1, 2);
    let (a, v) = label_attention(&h, &[true, true, false], &alpha).unwrap();
    assert_eq!(a.get(0, 0), 0.5);
    assert_eq!(a.get(2, 0), 0.0);
    assert_eq!(v.data, vec![0.5, 0.5]);
    assert!(label_attention(&h, &[false; 3], &alpha).is_err());
}

#[test]
fn ablation_identities() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = ModelParams::init(&cfg, 1).unwrap();
    let chunks = random_chunks(&cfg, &mut rng);
    let enc = chunk_encoder_forward(&params, &cfg, &chunks).unwrap();
    assert_eq!(apply_meta_embeddings(&enc, &chunks, &params, MetaFlags::NONE).unwrap(), enc);

    let (flat, mask) = flatten_chunks(&enc, &chunks, false);
    assert_eq!(flat.rows, chunks.len() * cfg.t_c);
    let no_second = htds::model::ModelConfig { second_layers: 0, ..cfg.clone() };
    let p0 = ModelParams::init(&no_second, 1).unwrap();
    assert_eq!(cross_chunk_forward(&p0, &no_second, &flat, &mask), flat);

    let (cls, _) = flatten_chunks(&enc, &chunks, true);
    assert_eq!(cls.rows, chunks.len());
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 9).unwrap();
    let header = CheckpointHeader {
        format_version: htds::model::FORMAT_VERSION,
        config: cfg.clone(),
        seed: 9,
        threshold: 0.37,
        labels: (0..cfg.n_labels).map(|i| format!("C{i}")).collect(),
        categories: vec!["a".into(), "b".into()],
        notes_mode: "all".into(),
        strategy: "diversity".into(),
    };
    let mut ck = Checkpoint { header, params };
    htds::model::round_to_f32(&mut ck.params);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    ck.save(&path).unwrap();
    let back = Checkpoint::load_expecting(&path, &cfg).unwrap();
    assert_eq!(back.params, ck.params);
    assert_eq!(back.header, ck.header);
    let other = htds::model::ModelConfig { hidden: 4, ..cfg };
    assert!(Checkpoint::load_expecting(&path, &other).is_err());
}

#[test]
fn forward_is_deterministic_and_finite() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = ModelParams::init(&cfg, 2).unwrap();
    for _ in 0..50 {
        let chunks = random_chunks(&cfg, &mut rng);
        let a = model_forward(&params, &cfg, &chunks).unwrap();
        let b = model_forward(&params, &cfg, &chunks).unwrap();
        assert_eq!(a.probs, b.probs);
        assert!(a.probs.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
    }
}
