use serde::{Deserialize, Serialize};

use crate::RunError;

/// One evaluated checkpoint: median localization IoU and answer accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub median_iou: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    /// Points sorted by median IoU.
    pub points: Vec<RunPoint>,
    /// Spearman rank correlation; 0 when either side has no spread.
    pub rank_correlation: f64,
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

pub fn correlate_runs(runs: &[RunPoint]) -> Result<Trend, RunError> {
    if runs.len() < 2 {
        return Err(RunError::TooFewRuns(runs.len()));
    }
    let mut points = runs.to_vec();
    points.sort_by(|a, b| a.median_iou.total_cmp(&b.median_iou).then(a.accuracy.total_cmp(&b.accuracy)));
    let xs: Vec<f64> = points.iter().map(|p| p.median_iou).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.accuracy).collect();
    Ok(Trend { rank_correlation: pearson(&ranks(&xs), &ranks(&ys)), points })
}
