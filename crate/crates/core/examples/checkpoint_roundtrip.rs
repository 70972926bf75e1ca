//! Save a model to a `.cnmx` file, reload it and confirm identical output.

use cnn_mixture::model::{build_network, NetworkSpec};
use cnn_mixture::rng::SessionRng;
use cnn_mixture::tensor::Tensor;
use cnn_mixture::train::{load_checkpoint, save_checkpoint, Checkpoint};

fn main() -> cnn_mixture::Result<()> {
    let spec = NetworkSpec::with_input_side(64);
    let model = build_network::<f32>(&spec, &mut SessionRng::new(5))?;
    println!(
        "{} parameters in {} tensors",
        model.count_parameters(),
        model.names().len()
    );

    let cp = Checkpoint {
        model,
        epoch: 12,
        val_accuracy: 0.9417,
    };
    let dir = std::env::temp_dir().join("cnnmix-roundtrip");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("ckpt_epoch012_acc0.9417.cnmx");
    save_checkpoint(&cp, &path)?;
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());

    let back = load_checkpoint(&path)?;
    let mut rng = SessionRng::new(6);
    let batch = Tensor::from_fn(vec![4, 3, 64, 64], |_| rng.range(-0.5, 0.5) as f32);
    let a = cp.model.predict(batch.clone())?;
    let b = back.model.predict(batch)?;
    println!("before {:?}", a.data());
    println!("after  {:?}", b.data());
    println!("identical: {}", a == b && back.epoch == cp.epoch);

    std::fs::write(&path, b"PNG?")?;
    match load_checkpoint(&path) {
        Err(e) => println!("corrupted file: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
