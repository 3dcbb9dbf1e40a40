//! Classification and regression metrics and haversine error summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, GeoPoint};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn safe_div(n: f64, d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        n / d
    }
}

/// Per-class precision, recall and F1 averaged with weights proportional to
/// each class's support in `truth`. Undefined ratios count as 0.
pub fn weighted_prf1<T: Ord + Clone>(truth: &[T], pred: &[T]) -> Result<Prf1> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(Error::Empty("label sequence"));
    }
    // (true positives, predicted count, support)
    let mut counts: BTreeMap<&T, (usize, usize, usize)> = BTreeMap::new();
    for (t, p) in truth.iter().zip(pred) {
        counts.entry(t).or_default().2 += 1;
        counts.entry(p).or_default().1 += 1;
        if t == p {
            counts.entry(t).or_default().0 += 1;
        }
    }
    let n = truth.len() as f64;
    let mut out = Prf1 {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for &(tp, predicted, support) in counts.values() {
        let p = safe_div(tp as f64, predicted as f64);
        let r = safe_div(tp as f64, support as f64);
        let f = safe_div(2.0 * p * r, p + r);
        let w = support as f64 / n;
        out.precision += w * p;
        out.recall += w * r;
        out.f1 += w * f;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub mae: f64,
    pub mse: f64,
    pub r2: f64,
}

/// Coefficient of determination of one variable. A constant truth gives 1
/// for a perfect prediction and 0 otherwise.
pub fn r2_score(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch(truth.len(), pred.len()));
    }
    let m = stats::mean(truth).ok_or(Error::Empty("regression target"))?;
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    let ss_tot: f64 = truth.iter().map(|t| (t - m).powi(2)).sum();
    Ok(if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    })
}

/// MAE and MSE over all elements; R² per coordinate column, then averaged.
pub fn regression_metrics(truth: &[[f64; 2]], pred: &[[f64; 2]]) -> Result<Regression> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(Error::Empty("regression target"));
    }
    let n = (truth.len() * 2) as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (t, p) in truth.iter().zip(pred) {
        for k in 0..2 {
            let e = t[k] - p[k];
            abs += e.abs();
            sq += e * e;
        }
    }
    let col = |rows: &[[f64; 2]], k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
    let r2 =
        (r2_score(&col(truth, 0), &col(pred, 0))? + r2_score(&col(truth, 1), &col(pred, 1))?) / 2.0;
    Ok(Regression {
        mae: abs / n,
        mse: sq / n,
        r2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub r2: f64,
    pub mae: f64,
    pub mse: f64,
    pub mean_km: f64,
    pub p25_km: f64,
    pub p50_km: f64,
    pub p75_km: f64,
    /// Population standard deviation.
    pub std_km: f64,
    pub errors_km: Vec<f64>,
}

/// Distribution of great-circle distances between paired coordinates. The
/// regression fields are computed on the `(lat, lon)` degrees themselves;
/// see [`error_report`] for normalized ones.
pub fn haversine_error_report(truth: &[GeoPoint], pred: &[GeoPoint]) -> Result<ErrorReport> {
    let pairs = |pts: &[GeoPoint]| pts.iter().map(|p| [p.lat, p.lon]).collect::<Vec<_>>();
    error_report(truth, pred, &pairs(truth), &pairs(pred))
}

/// Haversine error distribution of `truth`/`pred` plus regression metrics on
/// the (typically normalized) coordinate pairs.
pub fn error_report(
    truth: &[GeoPoint],
    pred: &[GeoPoint],
    truth_scaled: &[[f64; 2]],
    pred_scaled: &[[f64; 2]],
) -> Result<ErrorReport> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(Error::Empty("coordinate set"));
    }
    let reg = regression_metrics(truth_scaled, pred_scaled)?;
    let errors: Vec<f64> = truth
        .iter()
        .zip(pred)
        .map(|(&a, &b)| haversine_km(a, b))
        .collect();
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p| stats::quantile_sorted(&sorted, p).expect("non-empty");
    Ok(ErrorReport {
        r2: reg.r2,
        mae: reg.mae,
        mse: reg.mse,
        mean_km: stats::mean(&errors).expect("non-empty"),
        p25_km: q(0.25),
        p50_km: q(0.5),
        p75_km: q(0.75),
        std_km: stats::std_dev(&errors, 0).expect("non-empty"),
        errors_km: errors,
    })
}

impl ErrorReport {
    /// Markdown table with one row per labelled report.
    pub fn markdown_table(rows: &[(String, &ErrorReport)]) -> String {
        let mut s = String::from(
            "| Model | R² Score | MAE | MSE | Mean Err. (km) | 25th Pct. | 50th Pct. | 75th Pct. | Std. Dev. |\n\
             |---|---|---|---|---|---|---|---|---|\n",
        );
        for (label, r) in rows {
            s.push_str(&format!(
                "| {label} | {:.2}% | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
                r.r2 * 100.0,
                r.mae,
                r.mse,
                r.mean_km,
                r.p25_km,
                r.p50_km,
                r.p75_km,
                r.std_km
            ));
        }
        s
    }
}
