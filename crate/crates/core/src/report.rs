//! Plain-text and CSV renderings shared by the commands.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::ensemble::Comparison;
use crate::error::{Error, Result};
use crate::gradcheck::GradCheckReport;

/// Full-scale accuracies `(method, validation, testing)` measured on a large
/// private dataset. Printed for context, never asserted.
pub const REFERENCE_ACCURACY: [(&str, f64, f64); 3] = [
    ("CNN-Mixture", 0.9688, 0.9690),
    ("Average Sum", 0.9644, 0.9650),
    ("Single CNN", 0.9643, 0.9634),
];

/// Level around which full-scale validation accuracy settles.
pub const REFERENCE_VALIDATION_PLATEAU: f64 = 0.96;

/// `# seed=<seed> config_hash=<hash>`, the first line of every report.
pub fn stamp(config: &RunConfig) -> String {
    format!("# seed={} config_hash={}\n", config.seed, config.hash())
}

pub fn write_stamped(path: &Path, config: &RunConfig, body: &str) -> Result<()> {
    let mut text = stamp(config);
    text.push_str(body);
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

/// Drops leading `#` lines so stamped CSVs can be fed to a CSV reader.
pub fn strip_stamp(text: &str) -> String {
    text.lines()
        .skip_while(|l| l.starts_with('#'))
        .flat_map(|l| [l, "\n"])
        .collect()
}

pub fn comparison_table(c: &Comparison) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>10} {:>10}", "method", "validation", "testing");
    for r in &c.rows {
        let _ = writeln!(
            out,
            "{:<12} {:>9.2}% {:>9.2}%",
            r.method.label(),
            100.0 * r.validation.accuracy,
            100.0 * r.testing.accuracy
        );
    }
    out
}

pub fn ensemble_summary(c: &Comparison, config: &RunConfig) -> String {
    let mut out = comparison_table(c);
    let w = &c.weights;
    let _ = writeln!(out);
    let _ = writeln!(out, "models: {}", w.model_ids.join(", "));
    let weights: Vec<String> = w.weights.iter().map(|v| format!("{v:.4}")).collect();
    let _ = writeln!(out, "weights: [{}]", weights.join(", "));
    let _ = writeln!(out, "threshold: {}", w.threshold);
    let _ = writeln!(out, "single-model baseline: {}", w.model_ids[c.best_column]);
    let _ = writeln!(
        out,
        "validation SSE: mixture {:.6} <= average {:.6}: {}",
        c.mixture_sse,
        c.average_sse,
        c.mixture_sse <= c.average_sse
    );
    let _ = writeln!(
        out,
        "condition estimate {:.3e}, ridge {:e}{}",
        w.diagnostics.condition_estimate,
        w.diagnostics.ridge,
        if w.diagnostics.ridge_applied() {
            " (ridge fallback used)"
        } else {
            ""
        }
    );
    match c.weight_accuracy_correlation {
        Some(r) => {
            let _ = writeln!(out, "weight/accuracy correlation: {r:.4}");
        }
        None => {
            let _ = writeln!(out, "weight/accuracy correlation: undefined");
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "reference (full-scale, {} profile not comparable):",
        config.profile
    );
    for (m, v, t) in REFERENCE_ACCURACY {
        let _ = writeln!(out, "  {m:<12} {:>9.2}% {:>9.2}%", 100.0 * v, 100.0 * t);
    }
    out
}

pub fn gradcheck_text(r: &GradCheckReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>8} {:>14} {:>14}",
        "block", "checked", "max_rel_err", "max_abs_err"
    );
    for b in &r.blocks {
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>14.3e} {:>14.3e}",
            b.name, b.checked, b.max_rel_error, b.max_abs_error
        );
    }
    let _ = writeln!(
        out,
        "max relative error {:.3e} (tolerance {:e}): {}",
        r.max_rel_error(),
        r.tol,
        if r.passed() { "PASS" } else { "FAIL" }
    );
    out
}
