//! Fit least-squares mixture weights on a simulated prediction matrix and
//! compare against uniform averaging and the best single column.

use cnn_mixture::ensemble::{compare_models, ols_fit, sse, EnsembleWeights, OlsOptions, PredictionMatrix};
use cnn_mixture::report::comparison_table;
use cnn_mixture::rng::SessionRng;

/// Eight "models" of increasing skill scoring `n` samples.
fn simulate(rng: &mut SessionRng, n: usize) -> PredictionMatrix {
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.5)).collect();
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| {
            let shared = rng.range(-1.0, 1.0);
            (0..8)
                .map(|j| {
                    let skill = 0.2 + 0.15 * j as f64;
                    let logit = skill * (2.0 * y as f64 - 1.0) + 1.5 * shared + rng.range(-2.0, 2.0);
                    1.0 / (1.0 + (-logit).exp())
                })
                .collect()
        })
        .collect();
    PredictionMatrix::from_rows(&rows, labels).expect("well-formed")
}

fn main() -> cnn_mixture::Result<()> {
    let mut rng = SessionRng::new(3);
    let validation = simulate(&mut rng, 2000);
    let testing = simulate(&mut rng, 2000);

    let w = ols_fit(&validation, &OlsOptions::default(), "validation")?;
    let weights: Vec<String> = w.weights.iter().map(|v| format!("{v:.3}")).collect();
    println!("weights  [{}]", weights.join(", "));
    println!(
        "SSE      mixture {:.3} vs uniform {:.3}",
        sse(&validation, &w)?,
        sse(&validation, &EnsembleWeights::uniform(validation.model_ids().to_vec()))?
    );

    let c = compare_models(&validation, &testing, &OlsOptions::default())?;
    print!("\n{}", comparison_table(&c));
    if let Some(r) = c.weight_accuracy_correlation {
        println!("correlation between weight and column accuracy: {r:.3}");
    }

    // two identical columns make the normal equations singular
    let dup: Vec<Vec<f64>> = (0..validation.rows()).map(|i| vec![validation.row(i)[7]; 2]).collect();
    let dup = PredictionMatrix::from_rows(&dup, validation.labels().to_vec())?;
    let fit = ols_fit(&dup, &OlsOptions::default(), "validation")?;
    println!(
        "\nduplicate columns: ridge {:e} applied, weights {:.4?}",
        fit.diagnostics.ridge, fit.weights
    );
    Ok(())
}
