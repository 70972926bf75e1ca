use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::rng::SessionRng;

/// Repeats every row `times` times; the normal equations only scale.
fn replicated(rows: &[Vec<f64>], labels: &[u8], times: usize) -> PredictionMatrix {
    let mut r = Vec::new();
    let mut y = Vec::new();
    for _ in 0..times {
        r.extend_from_slice(rows);
        y.extend_from_slice(labels);
    }
    PredictionMatrix::from_rows(&r, y).unwrap()
}

fn pinv_oracle(pm: &PredictionMatrix) -> Vec<f64> {
    let f = DMatrix::from_row_slice(pm.rows(), pm.cols(), pm.values());
    let y = DVector::from_iterator(pm.rows(), pm.labels().iter().map(|&v| v as f64));
    let pinv = f.pseudo_inverse(1e-14).unwrap();
    (pinv * y).iter().copied().collect()
}

fn random_matrix(rng: &mut SessionRng, n: usize, k: usize) -> PredictionMatrix {
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.5)).collect();
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| {
            (0..k)
                .map(|_| (0.35 * y as f64 + 0.3 + 0.35 * rng.uniform()).clamp(1e-3, 1.0 - 1e-3))
                .collect()
        })
        .collect();
    PredictionMatrix::from_rows(&rows, labels).unwrap()
}

#[test]
fn hand_solved_example_matches_grid_search() {
    let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
    let labels = [1, 0, 1];
    let pm = replicated(&rows, &labels, 10);
    let w = ols_fit(&pm, &OlsOptions::default(), "toy").unwrap();
    assert!(
        (w.weights[0] - 1.0).abs() < 1e-12 && w.weights[1].abs() < 1e-12,
        "{:?}",
        w.weights
    );
    assert!(!w.diagnostics.ridge_applied());

    // Independent check: exhaustive search over [-2, 2]^2 at step 1e-3.
    let sse_at = |a: f64, b: f64| -> f64 {
        rows.iter()
            .zip(labels)
            .map(|(r, y)| (y as f64 - a * r[0] - b * r[1]).powi(2))
            .sum()
    };
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=4000 {
        let a = -2.0 + i as f64 * 1e-3;
        for j in 0..=4000 {
            let b = -2.0 + j as f64 * 1e-3;
            let s = sse_at(a, b);
            if s < best.0 {
                best = (s, a, b);
            }
        }
    }
    assert!((best.1 - w.weights[0]).abs() < 1e-3 && (best.2 - w.weights[1]).abs() < 1e-3);
}

#[test]
fn perfect_single_regressor() {
    let labels: Vec<u8> = (0..20).map(|i| (i % 3 == 0) as u8).collect();
    let rows: Vec<Vec<f64>> = labels.iter().map(|&y| vec![y as f64]).collect();
    let pm = PredictionMatrix::from_rows(&rows, labels).unwrap();
    let w = ols_fit(&pm, &OlsOptions::default(), "v").unwrap();
    assert!((w.weights[0] - 1.0).abs() < 1e-15);
    assert!(w.diagnostics.rss < 1e-24);
}

#[test]
fn identical_columns_take_ridge_path() {
    let mut rng = SessionRng::new(5);
    let base = random_matrix(&mut rng, 100, 1);
    let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![base.row(i)[0]; 2]).collect();
    let pm = PredictionMatrix::from_rows(&rows, base.labels().to_vec()).unwrap();
    let w = ols_fit(&pm, &OlsOptions::default(), "v").unwrap();
    assert!(w.diagnostics.ridge_applied());
    assert!(w.weights.iter().all(|v| v.is_finite()));
    let single = ols_fit(&base, &OlsOptions::default(), "v").unwrap();
    assert!((w.weights[0] + w.weights[1] - single.weights[0]).abs() < 1e-4);
}

#[test]
fn too_few_rows_and_nan_rejected() {
    let pm = PredictionMatrix::from_rows(&vec![vec![0.5, 0.5]; 19], vec![0; 19]).unwrap();
    assert!(ols_fit(&pm, &OlsOptions::default(), "v").is_err());
    let bad = PredictionMatrix::from_rows(&[vec![f64::NAN]], vec![1]);
    assert!(bad.is_err());
}

#[test]
fn solver_matches_pseudo_inverse_and_is_orthogonal() {
    let mut rng = SessionRng::new(42);
    for trial in 0..50 {
        let k = 1 + trial % 8;
        let pm = random_matrix(&mut rng, 200, k);
        let w = ols_fit(&pm, &OlsOptions::default(), "v").unwrap();
        assert!(!w.diagnostics.ridge_applied());
        let oracle = pinv_oracle(&pm);
        let num: f64 = w
            .weights
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = oracle.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(num / den < 1e-8, "trial {trial}: rel err {}", num / den);
        let resid: Vec<f64> = (0..pm.rows())
            .map(|i| pm.labels()[i] as f64 - w.score(pm.row(i)))
            .collect();
        for j in 0..k {
            let dot: f64 = pm.column(j).iter().zip(&resid).map(|(f, r)| f * r).sum();
            assert!(dot.abs() < 1e-6 * pm.rows() as f64);
        }
    }
}

#[test]
fn intercept_column_is_optional() {
    let mut rng = SessionRng::new(8);
    let pm = random_matrix(&mut rng, 300, 3);
    let plain = ols_fit(&pm, &OlsOptions::default(), "v").unwrap();
    let with = ols_fit(
        &pm,
        &OlsOptions {
            intercept: true,
            ..OlsOptions::default()
        },
        "v",
    )
    .unwrap();
    assert!(plain.intercept.is_none());
    assert!(with.intercept.is_some());
    assert!(with.diagnostics.rss <= plain.diagnostics.rss + 1e-12);
}

#[test]
fn decision_rules() {
    let one = |f: f64| PredictionMatrix::from_rows(&[vec![f]], vec![1]).unwrap();
    let mut w = EnsembleWeights::uniform(vec!["a".into()]);
    assert_eq!(mixture_predict(&one(0.7), &w).unwrap(), vec![1]);
    assert_eq!(mixture_predict(&one(0.3), &w).unwrap(), vec![0]);
    assert_eq!(mixture_predict(&one(0.5), &w).unwrap(), vec![0]);
    w.threshold = 0.0;
    assert_eq!(mixture_predict(&one(0.3), &w).unwrap(), vec![1]);

    let eight = PredictionMatrix::from_rows(&[vec![0.9; 8]], vec![1]).unwrap();
    let u = EnsembleWeights::uniform(eight.model_ids().to_vec());
    assert_eq!(mixture_predict(&eight, &u).unwrap(), vec![1]);
    assert!(mixture_predict(&one(0.9), &u).is_err());

    let tie = PredictionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.4, 0.2]], vec![1, 0]).unwrap();
    assert_eq!(average_sum_predict(&tie), vec![1, 0]);
}

#[test]
fn evaluation_counts() {
    let e = evaluate(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap();
    assert_eq!(e.accuracy, 1.0);
    let e = evaluate(&[0, 1, 0, 1], &[1, 0, 1, 0]).unwrap();
    assert_eq!(e.accuracy, 0.0);
    assert_eq!(
        e.confusion,
        Confusion {
            tp: 0,
            tn: 0,
            fp: 2,
            fn_: 2
        }
    );
    assert!(evaluate(&[1], &[1, 0]).is_err());
}

#[test]
fn csv_round_trip_keeps_nine_digits() {
    let mut rng = SessionRng::new(1);
    let pm = random_matrix(&mut rng, 12, 3);
    let text = pm.to_csv();
    assert!(text.starts_with("sample_id,label,model_1,model_2,model_3\n"));
    let back = PredictionMatrix::from_csv(&text).unwrap();
    for (a, b) in pm.values().iter().zip(back.values()) {
        assert!((a - b).abs() <= 1e-8 * a.abs());
    }
    assert_eq!(back.labels(), pm.labels());
}

#[test]
fn weights_document_round_trip() {
    let mut rng = SessionRng::new(2);
    let pm = random_matrix(&mut rng, 100, 4);
    let w = ols_fit(&pm, &OlsOptions::default(), "validation").unwrap();
    assert_eq!(EnsembleWeights::parse(&w.render()).unwrap(), w);
}

#[test]
fn comparison_has_three_methods_and_sse_ordering() {
    let mut rng = SessionRng::new(3);
    let v = random_matrix(&mut rng, 200, 5);
    let t = random_matrix(&mut rng, 150, 5);
    let c = compare_models(&v, &t, &OlsOptions::default()).unwrap();
    assert_eq!(c.rows.len(), 3);
    assert_eq!(c.to_csv().lines().count(), 4);
    assert!(c.mixture_sse <= c.average_sse);
}

#[test]
fn single_column_baselines_coincide() {
    let mut rng = SessionRng::new(4);
    let v = random_matrix(&mut rng, 60, 1);
    let t = random_matrix(&mut rng, 60, 1);
    let c = compare_models(&v, &t, &OlsOptions::default()).unwrap();
    assert_eq!(
        c.row(Method::AverageSum),
        &ComparisonRow {
            method: Method::AverageSum,
            ..c.row(Method::Single).clone()
        }
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fitted_weights_beat_perturbations(seed in any::<u64>(), k in 1usize..=8) {
        let mut rng = SessionRng::new(seed);
        let pm = random_matrix(&mut rng, 120, k);
        let w = ols_fit(&pm, &OlsOptions::default(), "v").unwrap();
        let base = sse(&pm, &w).unwrap();
        let uniform = sse(&pm, &EnsembleWeights::uniform(pm.model_ids().to_vec())).unwrap();
        prop_assert!(base <= uniform * (1.0 + 1e-12));
        for _ in 0..50 {
            let mut p = w.clone();
            let dir: Vec<f64> = (0..k).map(|_| rng.range(-1.0, 1.0)).collect();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
            let r = 0.1 * rng.uniform();
            for (x, d) in p.weights.iter_mut().zip(&dir) {
                *x += r * d / norm;
            }
            prop_assert!(sse(&pm, &p).unwrap() >= base * (1.0 - 1e-12));
        }
    }
}
