use std::fs;
use std::path::Path;

use cnn_mixture::commands::{
    cmd_ensemble, cmd_eval, cmd_gen_data, cmd_train, load_checkpoint_dir, EvalTarget, COMPARISON_FILE, CURVE_FILE,
    WEIGHTS_FILE,
};
use cnn_mixture::config::RunConfig;
use cnn_mixture::data::disk::SplitName;
use cnn_mixture::ensemble::Method;
use cnn_mixture::report::strip_stamp;
use cnn_mixture::train::TOP_K;

fn tiny(root: &Path, epochs: usize) -> RunConfig {
    let mut c = RunConfig::from_toml(
        "seed = 3\n[data]\ntotal_count = 300\ninput_side = 16\ncanvas_size_range = [24, 40]\n[train]\nbatch_size = 32\n",
        None,
    )
    .unwrap();
    c.train.epochs = epochs;
    c.paths.data_dir = root.join("data");
    c.paths.ckpt_dir = root.join("ckpt");
    c.paths.report_dir = root.join("reports");
    c
}

#[test]
fn full_pipeline_on_a_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), 5);

    let first = cmd_gen_data(&cfg).unwrap();
    assert_eq!(first.counts.iter().sum::<usize>(), 300);
    assert_eq!(first.positives, 150);
    let again = cmd_gen_data(&cfg).unwrap();
    assert_eq!(first.manifest_hash, again.manifest_hash);

    let trained = cmd_train(&cfg).unwrap();
    let curve = fs::read_to_string(cfg.paths.report_dir.join(CURVE_FILE)).unwrap();
    assert!(curve.starts_with(&format!("# seed=3 config_hash={}\n", cfg.hash())));
    let body = strip_stamp(&curve);
    assert!(body.starts_with("epoch,train_loss,train_acc,val_acc\n"));
    assert_eq!(body.lines().count(), 1 + 5);

    let files = fs::read_dir(&cfg.paths.ckpt_dir).unwrap().count();
    assert_eq!(files, trained.outcome.improvements.min(TOP_K));
    for p in &trained.checkpoint_paths {
        let name = p.file_name().unwrap().to_string_lossy();
        assert!(name.starts_with("ckpt_epoch") && name.contains("_acc") && name.ends_with(".cnmx"));
    }
    let loaded = load_checkpoint_dir(&cfg.paths.ckpt_dir).unwrap();
    assert!(loaded.windows(2).all(|w| w[0].1.val_accuracy < w[1].1.val_accuracy));

    let ens = cmd_ensemble(&cfg).unwrap();
    let table = strip_stamp(&fs::read_to_string(cfg.paths.report_dir.join(COMPARISON_FILE)).unwrap());
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "method,validation,testing");
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r.split(',').count() == 3));
    assert!(ens.comparison.mixture_sse <= ens.comparison.average_sse);

    let best = trained.checkpoint_paths.last().unwrap().clone();
    let a = cmd_eval(&cfg, &EvalTarget::Checkpoint(best.clone()), SplitName::Test).unwrap();
    let b = cmd_eval(&cfg, &EvalTarget::Checkpoint(best.clone()), SplitName::Test).unwrap();
    assert_eq!(a.evaluation, b.evaluation);
    assert!(!a.in_sample);
    let on_train = cmd_eval(&cfg, &EvalTarget::Checkpoint(best), SplitName::Train).unwrap();
    assert!(on_train.to_string().contains("in-sample"));

    let weights = cfg.paths.report_dir.join(WEIGHTS_FILE);
    let mix = cmd_eval(
        &cfg,
        &EvalTarget::Mixture {
            weights: weights.clone(),
        },
        SplitName::Test,
    )
    .unwrap();
    assert_eq!(mix.evaluation, ens.comparison.row(Method::Mixture).testing);
    let mix_val = cmd_eval(&cfg, &EvalTarget::Mixture { weights }, SplitName::Validation).unwrap();
    assert!(mix_val.in_sample);
}

#[test]
fn single_checkpoint_baselines_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), 1);
    cmd_gen_data(&cfg).unwrap();
    let trained = cmd_train(&cfg).unwrap();
    assert_eq!(trained.checkpoint_paths.len(), 1);
    let c = cmd_ensemble(&cfg).unwrap().comparison;
    assert_eq!(c.weights.weights.len(), 1);
    assert_eq!(c.row(Method::AverageSum).validation, c.row(Method::Single).validation);
    assert_eq!(c.row(Method::AverageSum).testing, c.row(Method::Single).testing);
}

#[test]
fn ensemble_without_checkpoints_is_actionable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), 1);
    let err = cmd_ensemble(&cfg).unwrap_err();
    assert!(err.to_string().contains("cnnmix train"), "{err}");
}

#[test]
fn retraining_replaces_old_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), 3);
    cmd_gen_data(&cfg).unwrap();
    cmd_train(&cfg).unwrap();
    fs::write(cfg.paths.ckpt_dir.join("stale.cnmx"), b"junk").unwrap();
    cfg.train.epochs = 1;
    let t = cmd_train(&cfg).unwrap();
    assert_eq!(
        fs::read_dir(&cfg.paths.ckpt_dir).unwrap().count(),
        t.checkpoint_paths.len()
    );
}
