//! Finite-difference check of every backward rule in the network, plus a
//! deliberately broken convolution gradient to show the check catching it.

use cnn_mixture::commands::cmd_gradcheck;
use cnn_mixture::config::RunConfig;
use cnn_mixture::report::gradcheck_text;
use cnn_mixture::tape::GradientFault;

fn main() -> cnn_mixture::Result<()> {
    let config = RunConfig::default();

    let healthy = cmd_gradcheck(&config, None)?;
    print!("{}", gradcheck_text(&healthy));

    println!("\nwith the conv kernel gradient scaled by 1.01:");
    let broken = cmd_gradcheck(&config, Some(GradientFault::ScaleConvKernelGrad(1.01)))?;
    print!("{}", gradcheck_text(&broken));
    assert!(healthy.passed() && !broken.passed());
    Ok(())
}
