//! Evaluation metrics on plain arrays: MAE, RMSE, Pearson correlation and
//! concordance correlation, per label and aggregated. Undefined
//! correlations (constant columns) are flagged, never silently zeroed.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub mae: f64,
    pub rmse: f64,
    /// None when undefined (constant column).
    pub pcc: Option<f64>,
    pub ccc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_label: Vec<LabelMetrics>,
    pub mean_mae: f64,
    pub mean_rmse: f64,
    /// Mean over labels with a defined value.
    pub mean_pcc: Option<f64>,
    pub mean_ccc: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("metrics need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("prediction/target shape mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample Pearson correlation; None when either input is constant.
pub fn pcc(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean_of(x), mean_of(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Concordance correlation with population moments; None when undefined.
pub fn ccc_plain(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (mean_of(x), mean_of(y));
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov /= n;
    vx /= n;
    vy /= n;
    let denom = vx + vy + (mx - my) * (mx - my);
    if denom == 0.0 {
        return None;
    }
    Some(2.0 * cov / denom)
}

/// Per-label MAE/RMSE/PCC/CCC over video-level prediction pairs.
pub fn metrics_report(
    predictions: &[Vec<f64>],
    targets: &[Vec<f64>],
    label_names: &[String],
) -> Result<MetricsReport, MetricsError> {
    let n = predictions.len();
    if n != targets.len() {
        return Err(MetricsError::ShapeMismatch(n, targets.len()));
    }
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let c = label_names.len();
    let mut per_label = Vec::with_capacity(c);
    for j in 0..c {
        let p: Vec<f64> = predictions.iter().map(|r| r[j]).collect();
        let t: Vec<f64> = targets.iter().map(|r| r[j]).collect();
        let mae = p.iter().zip(t.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
        let rmse = (p
            .iter()
            .zip(t.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        per_label.push(LabelMetrics {
            label: label_names[j].clone(),
            mae,
            rmse,
            pcc: pcc(&p, &t),
            ccc: ccc_plain(&p, &t),
        });
    }
    let mean_over = |f: &dyn Fn(&LabelMetrics) -> Option<f64>| {
        let vals: Vec<f64> = per_label.iter().filter_map(f).collect();
        if vals.len() == c {
            Some(mean_of(&vals))
        } else {
            None
        }
    };
    Ok(MetricsReport {
        mean_mae: mean_of(&per_label.iter().map(|l| l.mae).collect::<Vec<_>>()),
        mean_rmse: mean_of(&per_label.iter().map(|l| l.rmse).collect::<Vec<_>>()),
        mean_pcc: mean_over(&|l| l.pcc),
        mean_ccc: mean_over(&|l| l.ccc),
        per_label,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "undefined".to_string(),
    }
}

impl MetricsReport {
    /// CSV table: label, MAE, RMSE, PCC, CCC plus a mean row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,MAE,RMSE,PCC,CCC\n");
        for l in &self.per_label {
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{}\n",
                l.label,
                l.mae,
                l.rmse,
                fmt_opt(l.pcc),
                fmt_opt(l.ccc)
            ));
        }
        out.push_str(&format!(
            "mean,{:.6},{:.6},{},{}\n",
            self.mean_mae,
            self.mean_rmse,
            fmt_opt(self.mean_pcc),
            fmt_opt(self.mean_ccc)
        ));
        out
    }

    /// Flat key-value text rendering.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for l in &self.per_label {
            out.push_str(&format!("{}.mae = {:.6}\n", l.label, l.mae));
            out.push_str(&format!("{}.rmse = {:.6}\n", l.label, l.rmse));
            out.push_str(&format!("{}.pcc = {}\n", l.label, fmt_opt(l.pcc)));
            out.push_str(&format!("{}.ccc = {}\n", l.label, fmt_opt(l.ccc)));
        }
        out.push_str(&format!("mean.mae = {:.6}\n", self.mean_mae));
        out.push_str(&format!("mean.rmse = {:.6}\n", self.mean_rmse));
        out.push_str(&format!("mean.pcc = {}\n", fmt_opt(self.mean_pcc)));
        out.push_str(&format!("mean.ccc = {}\n", fmt_opt(self.mean_ccc)));
        out
    }
}
