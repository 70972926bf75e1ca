//! Show the two built-in profiles and how a TOML file layers over them.

use cnn_mixture::config::{Overrides, Profile, RunConfig};

fn main() -> cnn_mixture::Result<()> {
    for profile in [Profile::Desk, Profile::Full] {
        let c = RunConfig::profile(profile);
        let spec = c.network_spec();
        println!(
            "{profile}: input {:?}, flatten {}, epochs {}, batch {}, hash {}",
            spec.input_size,
            spec.flatten_len()?,
            c.train.epochs,
            c.train.batch_size,
            c.hash()
        );
    }

    let mut c = RunConfig::from_toml(
        "[train]\nepochs = 5\n[ensemble]\nthreshold = 0.0\n",
        Some(Profile::Desk),
    )?;
    c.apply(&Overrides {
        seed: Some(42),
        ..Overrides::default()
    });
    c.validate()?;
    println!("\nlayered config:\n{}", c.to_toml());

    let err = RunConfig::from_toml("[data]\npositive_fraction = 1.0\n", None)?
        .validate()
        .unwrap_err();
    println!("validation error: {err}");
    Ok(())
}
