//! The pipeline stages behind each `cnnmix` subcommand. Every function
//! validates its configuration before touching the filesystem.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::disk::{self, SplitName, StoredMeans};
use crate::data::{channel_means, generate_synthetic, load_prepared, preprocess_all, split_dataset, PreparedSplits};
use crate::ensemble::{
    build_prediction_matrix, compare_models, evaluate, mixture_predict, Comparison, EnsembleWeights, Evaluation,
};
use crate::error::{Error, Result};
use crate::gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
use crate::model::build_network;
use crate::report;
use crate::rng::SessionRng;
use crate::tape::GradientFault;
use crate::tensor::Tensor;
use crate::train::{load_checkpoint, predict_dataset, save_checkpoint, train, Checkpoint, TrainOutcome};

pub const CURVE_FILE: &str = "training_curve.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const WEIGHTS_FILE: &str = "weights.txt";
pub const SUMMARY_FILE: &str = "ensemble_summary.txt";
pub const RUN_INFO_FILE: &str = "run_info.txt";
pub const CHECKPOINT_EXT: &str = "cnmx";

/// Input side of the reduced network used by the gradient check.
pub const GRADCHECK_SIDE: usize = 16;

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::file(path, e))
}

#[derive(Clone, Debug)]
pub struct GenDataSummary {
    pub root: PathBuf,
    pub counts: [usize; 3],
    pub positives: usize,
    pub channel_means: [f64; 3],
    /// SHA-256 of `manifest.csv`.
    pub manifest_hash: String,
}

impl fmt::Display for GenDataSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [tr, va, te] = self.counts;
        writeln!(f, "wrote {} images to {}", tr + va + te, self.root.display())?;
        writeln!(
            f,
            "  positives {} negatives {}",
            self.positives,
            tr + va + te - self.positives
        )?;
        writeln!(f, "  train {tr} validation {va} test {te}")?;
        writeln!(f, "  channel means {:?}", self.channel_means)?;
        write!(f, "  manifest sha256 {}", self.manifest_hash)
    }
}

/// Generates, splits and writes the synthetic dataset.
pub fn cmd_gen_data(config: &RunConfig) -> Result<GenDataSummary> {
    config.validate()?;
    let samples = generate_synthetic(&config.synth_config())?;
    let positives = samples.iter().filter(|s| s.label == 1).count();
    let split = split_dataset(samples, config.data.split, config.seed)?;
    let side = config.data.input_side;
    let means = channel_means(&preprocess_all(split.training.clone(), side)?);
    let root = &config.paths.data_dir;
    disk::write_dataset(
        root,
        &split,
        &StoredMeans {
            input_side: side,
            means,
        },
    )?;
    let manifest = fs::read(root.join(disk::MANIFEST_FILE)).map_err(|e| Error::file(root, e))?;
    Ok(GenDataSummary {
        root: root.clone(),
        counts: [split.training.len(), split.validation.len(), split.testing.len()],
        positives,
        channel_means: means,
        manifest_hash: hex::encode(Sha256::digest(&manifest)),
    })
}

pub fn load_data(config: &RunConfig) -> Result<PreparedSplits> {
    load_prepared(&config.paths.data_dir, config.data.input_side)
}

pub fn checkpoint_file_name(cp: &Checkpoint) -> String {
    format!("ckpt_epoch{:03}_acc{:.4}.{CHECKPOINT_EXT}", cp.epoch, cp.val_accuracy)
}

fn checkpoint_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == CHECKPOINT_EXT))
        .collect();
    files.sort();
    Ok(files)
}

/// Every checkpoint in `dir`, ascending by validation accuracy then epoch,
/// keyed by file name.
pub fn load_checkpoint_dir(dir: &Path) -> Result<Vec<(String, Checkpoint)>> {
    let mut out = Vec::new();
    for path in checkpoint_files(dir)? {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push((name, load_checkpoint(&path)?));
    }
    if out.is_empty() {
        return Err(Error::file(
            dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no checkpoint files found; run `cnnmix train` first",
            ),
        ));
    }
    out.sort_by(|a, b| {
        a.1.val_accuracy
            .total_cmp(&b.1.val_accuracy)
            .then(a.1.epoch.cmp(&b.1.epoch))
    });
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub outcome: TrainOutcome,
    pub checkpoint_paths: Vec<PathBuf>,
    pub curve_path: PathBuf,
    pub elapsed: Duration,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let best = self.outcome.best();
        writeln!(
            f,
            "trained {} epochs in {:.1}s; {} improvements",
            self.outcome.curve.records.len(),
            self.elapsed.as_secs_f64(),
            self.outcome.improvements
        )?;
        writeln!(
            f,
            "best validation accuracy {:.4} at epoch {}",
            best.val_accuracy, best.epoch
        )?;
        for p in &self.checkpoint_paths {
            writeln!(f, "  {}", p.display())?;
        }
        write!(f, "curve: {}", self.curve_path.display())
    }
}

fn write_run_info(config: &RunConfig) -> Result<()> {
    let dir = &config.paths.report_dir;
    create_dir(dir)?;
    let body = format!(
        "# cnnmix {}\n# profile={}\n{}",
        env!("CARGO_PKG_VERSION"),
        config.profile,
        config.to_toml()
    );
    report::write_stamped(&dir.join(RUN_INFO_FILE), config, &body)
}

/// Trains one session and writes at most eight checkpoints plus the curve.
pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary> {
    config.validate()?;
    let data = load_data(config)?;
    let ckpt_dir = &config.paths.ckpt_dir;
    create_dir(ckpt_dir)?;
    create_dir(&config.paths.report_dir)?;
    for old in checkpoint_files(ckpt_dir)? {
        fs::remove_file(&old).map_err(|e| Error::file(&old, e))?;
    }
    write_run_info(config)?;

    let started = Instant::now();
    let outcome = train(
        &config.network_spec(),
        &data.training,
        &data.validation,
        &config.train_config(),
        &config.objective(),
    )?;
    let elapsed = started.elapsed();

    let mut checkpoint_paths = Vec::with_capacity(outcome.top8.len());
    for cp in &outcome.top8 {
        let path = ckpt_dir.join(checkpoint_file_name(cp));
        save_checkpoint(cp, &path)?;
        checkpoint_paths.push(path);
    }
    let curve_path = config.paths.report_dir.join(CURVE_FILE);
    report::write_stamped(&curve_path, config, &outcome.curve.to_csv())?;
    Ok(TrainSummary {
        outcome,
        checkpoint_paths,
        curve_path,
        elapsed,
    })
}

#[derive(Clone, Debug)]
pub struct EnsembleSummary {
    pub comparison: Comparison,
    pub report_dir: PathBuf,
    pub text: String,
}

impl fmt::Display for EnsembleSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.text)?;
        write!(f, "reports written to {}", self.report_dir.display())
    }
}

/// Fits mixture weights on the validation split and compares all three
/// methods on validation and test.
pub fn cmd_ensemble(config: &RunConfig) -> Result<EnsembleSummary> {
    config.validate()?;
    let checkpoints = load_checkpoint_dir(&config.paths.ckpt_dir)?;
    let data = load_data(config)?;
    let models: Vec<(String, &_)> = checkpoints.iter().map(|(n, c)| (n.clone(), &c.model)).collect();
    let val = build_prediction_matrix(&models, &data.validation)?;
    let test = build_prediction_matrix(&models, &data.testing)?;
    let comparison = compare_models(&val, &test, &config.ensemble)?;

    let dir = &config.paths.report_dir;
    create_dir(dir)?;
    report::write_stamped(&dir.join(WEIGHTS_FILE), config, &comparison.weights.render())?;
    report::write_stamped(&dir.join(COMPARISON_FILE), config, &comparison.to_csv())?;
    report::write_stamped(&dir.join("validation_predictions.csv"), config, &val.to_csv())?;
    report::write_stamped(&dir.join("test_predictions.csv"), config, &test.to_csv())?;
    let text = report::ensemble_summary(&comparison, config);
    report::write_stamped(&dir.join(SUMMARY_FILE), config, &text)?;
    Ok(EnsembleSummary {
        comparison,
        report_dir: dir.clone(),
        text,
    })
}

/// Gradient check of the configured layer stack on a `3 x 16 x 16` input,
/// in double precision. `fault` deliberately corrupts one backward rule.
pub fn cmd_gradcheck(config: &RunConfig, fault: Option<GradientFault>) -> Result<GradCheckReport> {
    config.validate()?;
    let mut spec = config.network_spec();
    spec.input_size = [3, GRADCHECK_SIDE, GRADCHECK_SIDE];
    spec.validate()?;
    let mut rng = SessionRng::new(config.seed);
    let model = build_network::<f64>(&spec, &mut rng.split())?;
    let mut input_rng = rng.split();
    let input = Tensor::from_fn(vec![2, 3, GRADCHECK_SIDE, GRADCHECK_SIDE], |_| {
        input_rng.range(-2.0, 2.0)
    });
    let check = GradCheckConfig {
        seed: config.seed,
        fault,
        ..GradCheckConfig::default()
    };
    gradient_check(&model, &input, &[1.0, 0.0], &check)
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvalTarget {
    Checkpoint(PathBuf),
    Mixture { weights: PathBuf },
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub target: String,
    pub split: SplitName,
    /// True when the split was used to fit what is being evaluated.
    pub in_sample: bool,
    pub evaluation: Evaluation,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} on {}{}: {}",
            self.target,
            self.split,
            if self.in_sample { " (in-sample)" } else { "" },
            self.evaluation
        )
    }
}

/// Scores a checkpoint or a fitted mixture on one split without writing
/// anything.
pub fn cmd_eval(config: &RunConfig, target: &EvalTarget, split: SplitName) -> Result<EvalReport> {
    config.validate()?;
    match target {
        EvalTarget::Checkpoint(path) => {
            let cp = load_checkpoint(path)?;
            let data = load_data(config)?;
            let ds = data.get(split);
            let probs = predict_dataset(&cp.model, ds)?;
            let preds: Vec<u8> = probs
                .iter()
                .map(|&p| u8::from(p as f64 >= config.train.threshold))
                .collect();
            Ok(EvalReport {
                target: path.display().to_string(),
                split,
                in_sample: split == SplitName::Train,
                evaluation: evaluate(&preds, ds.labels())?,
            })
        }
        EvalTarget::Mixture { weights } => {
            let text = fs::read_to_string(weights).map_err(|e| {
                Error::file(
                    weights,
                    std::io::Error::new(e.kind(), format!("{e}; run `cnnmix ensemble` to fit mixture weights")),
                )
            })?;
            let w = EnsembleWeights::parse(&text)?;
            let mut loaded = Vec::with_capacity(w.model_ids.len());
            for id in &w.model_ids {
                loaded.push((id.clone(), load_checkpoint(&config.paths.ckpt_dir.join(id))?));
            }
            let data = load_data(config)?;
            let models: Vec<(String, &_)> = loaded.iter().map(|(n, c)| (n.clone(), &c.model)).collect();
            let pm = build_prediction_matrix(&models, data.get(split))?;
            let preds = mixture_predict(&pm, &w)?;
            Ok(EvalReport {
                target: format!("mixture {}", weights.display()),
                split,
                in_sample: split == SplitName::Train || split.as_str() == w.fitted_on,
                evaluation: evaluate(&preds, pm.labels())?,
            })
        }
    }
}
