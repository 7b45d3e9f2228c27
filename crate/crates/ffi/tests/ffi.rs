use std::ffi::{CStr, CString};
use std::fs;
use std::path::Path;
use std::ptr;

use htds::cli::{load_run, main_with_args};
use htds::corpus::{parse_stay_notes, NOTES_FILE};
use htds::experiment::preprocessor_for;
use htds::model::predict;
use htds_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(htds_last_error()) }.to_string_lossy().into_owned()
}

/// Generates a small corpus and trains a two-epoch run in `dir`.
fn trained_run(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("data");
    let run = dir.join("run");
    assert_eq!(main_with_args(["htds", "gen-data", "--out", data.to_str().unwrap(), "--n-stays", "24", "--seed", "5"]), 0);
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, "t_c = 16\nn_c = 6\nhidden = 8\nenc_heads = 2\nsecond_heads = 2\nffn_mult = 2\nvocab_size = 300\nepochs_max = 2\npeak_lr = 0.01\neffective_batch = 8\n").unwrap();
    let code = main_with_args(["htds", "train", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(code, 0);
    (data, run)
}

/// Notes-file lines of the first stay in the corpus.
fn first_stay_lines(data: &Path) -> String {
    let text = fs::read_to_string(data.join(NOTES_FILE)).unwrap();
    let first_id = serde_stay_id(text.lines().next().unwrap());
    text.lines().filter(|l| serde_stay_id(l) == first_id).map(|l| format!("{l}\n")).collect()
}

fn serde_stay_id(line: &str) -> String {
    let key = "\"stay_id\":\"";
    let start = line.find(key).unwrap() + key.len();
    line[start..].split('"').next().unwrap().to_string()
}

#[test]
fn model_round_trip_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained_run(dir.path());
    let run_c = CString::new(run.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { htds_model_open(run_c.as_ptr(), &mut model) }, HtdsStatus::Ok);
    assert!(!model.is_null());

    let n = unsafe { htds_model_num_labels(model) };
    assert_eq!(n, 10);
    let mut label = ptr::null();
    assert_eq!(unsafe { htds_model_label(model, 0, &mut label) }, HtdsStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(label) }.to_str().unwrap(), "C000");
    assert_eq!(unsafe { htds_model_label(model, n, &mut label) }, HtdsStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
    let t = unsafe { htds_model_threshold(model) };
    assert!((0.05..=0.95).contains(&t));

    let lines = first_stay_lines(&data);
    let notes = CString::new(lines.clone()).unwrap();
    let mut probs = vec![0.0; n];
    assert_eq!(unsafe { htds_model_predict(model, notes.as_ptr(), probs.as_mut_ptr(), n) }, HtdsStatus::Ok);
    assert_eq!(last_error(), "");

    let (ckpt, vocab) = load_run(&run).unwrap();
    let pre = preprocessor_for(&ckpt, vocab).unwrap();
    let prepared = pre.prepare(&parse_stay_notes(&lines, "x").unwrap()).unwrap();
    let want = predict(&ckpt.params, &ckpt.header.config, &prepared.chunks).unwrap();
    assert_eq!(probs, want);

    assert_eq!(unsafe { htds_model_predict(model, notes.as_ptr(), probs.as_mut_ptr(), n - 1) }, HtdsStatus::InvalidArgument);
    let bad = CString::new("{not json").unwrap();
    assert_eq!(unsafe { htds_model_predict(model, bad.as_ptr(), probs.as_mut_ptr(), n) }, HtdsStatus::Parse);
    unsafe { htds_model_free(model) };
}

#[test]
fn open_reports_missing_run() {
    let path = CString::new("/nonexistent/htds-run").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { htds_model_open(path.as_ptr(), &mut model) }, HtdsStatus::Io);
    assert!(model.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { htds_model_open(ptr::null(), &mut model) }, HtdsStatus::NullPointer);
    unsafe { htds_model_free(ptr::null_mut()) };
    assert_eq!(unsafe { htds_model_num_labels(ptr::null()) }, 0);
}

#[test]
fn onecycle_anchors() {
    let mut lr = 0.0;
    assert_eq!(unsafe { htds_onecycle_lr(1000, 5e-5, 0, &mut lr) }, HtdsStatus::Ok);
    assert!((lr - 2e-6).abs() < 1e-18);
    assert_eq!(unsafe { htds_onecycle_lr(1000, 5e-5, 150, &mut lr) }, HtdsStatus::Ok);
    assert!((lr - 2.6e-5).abs() < 1e-17);
    assert_eq!(unsafe { htds_onecycle_lr(1000, 5e-5, 1001, &mut lr) }, HtdsStatus::Config);
    assert_eq!(unsafe { htds_onecycle_lr(1000, 5e-5, 0, ptr::null_mut()) }, HtdsStatus::NullPointer);
}

#[test]
fn metrics_over_flat_arrays() {
    let probs = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.1, 0.2, 0.9, 0.8, 0.7, 0.6, 0.5];
    let gold = [1u8, 0, 1, 0, 1, 1, 1, 0, 0, 1, 1, 0, 0, 0];
    let mut m = HtdsMetrics::default();
    assert_eq!(unsafe { htds_metrics(probs.as_ptr(), gold.as_ptr(), 2, 7, 0.5, &mut m) }, HtdsStatus::Ok);
    assert_eq!(m.p_at_5, (0.6 + 0.4) / 2.0);
    assert!(m.micro_f1 > 0.0 && m.micro_auc > 0.0);
    assert_eq!(unsafe { htds_metrics(probs.as_ptr(), gold.as_ptr(), 0, 7, 0.5, &mut m) }, HtdsStatus::InvalidArgument);
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(htds_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("htds.h");
    let text = fs::read_to_string(&header).unwrap();
    for sym in ["htds_model_open", "htds_model_predict", "htds_metrics", "htds_onecycle_lr", "typedef struct HtdsModel HtdsModel"] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let Ok(status) = std::process::Command::new("cc").args(["-fsyntax-only", "-x", "c", "-std=c99"]).arg(&header).status() else {
        eprintln!("no C compiler; skipped syntax check");
        return;
    };
    assert!(status.success());
}

#[test]
fn c_program_links_against_static_library() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe().unwrap().parent().and_then(Path::parent).map(Path::to_path_buf).unwrap();
    let lib = profile_dir.join("libhtds_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipped", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("lr_table");
    let Ok(status) = std::process::Command::new("cc")
        .arg(manifest.join("examples").join("lr_table.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(status.success());
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("step   0 lr 2.000000e-06"), "{text}");
    assert!(text.contains("step 100 lr 5.000000e-08"), "{text}");
    assert!(text.contains("p_at_5 0.6000"), "{text}");
}
