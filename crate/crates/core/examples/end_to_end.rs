//! The whole pipeline on a reduced configuration: generate data, train one
//! session, fit the mixture and print the comparison.
//!
//!     cargo run --release --example end_to_end -- /tmp/cnnmix-demo

use std::path::PathBuf;

use cnn_mixture::commands::{cmd_ensemble, cmd_eval, cmd_gen_data, cmd_train, EvalTarget, WEIGHTS_FILE};
use cnn_mixture::config::RunConfig;
use cnn_mixture::data::disk::SplitName;

fn main() -> cnn_mixture::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cnnmix-demo"));
    let mut config = RunConfig::from_toml(
        r#"
        seed = 1
        [data]
        total_count = 1200
        input_side = 32
        canvas_size_range = [48, 96]
        [train]
        epochs = 12
        batch_size = 64
        "#,
        None,
    )?;
    config.paths.data_dir = root.join("data");
    config.paths.ckpt_dir = root.join("checkpoints");
    config.paths.report_dir = root.join("reports");

    println!("{}\n", cmd_gen_data(&config)?);
    println!("{}\n", cmd_train(&config)?);
    println!("{}\n", cmd_ensemble(&config)?);

    let weights = config.paths.report_dir.join(WEIGHTS_FILE);
    println!(
        "{}",
        cmd_eval(&config, &EvalTarget::Mixture { weights }, SplitName::Test)?
    );
    Ok(())
}
