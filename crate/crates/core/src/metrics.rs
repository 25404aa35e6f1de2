//! Regression accuracy metrics and the VAE-vs-DNN comparison table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truth values with magnitude at or below this are left out of MRE.
pub const MRE_ZERO_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when either series is constant.
    pub pcc: Option<f64>,
    /// Percent. `None` when every truth value was excluded.
    pub mre: Option<f64>,
    pub mre_excluded: usize,
    /// Set when more than 1% of samples were excluded from MRE.
    pub mre_warning: bool,
}

pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<MetricReport> {
    if pred.len() != truth.len() {
        return Err(Error::dim(truth.len(), pred.len(), "metric inputs"));
    }
    let n = truth.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("metrics need at least 2 samples, got {n}")));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric input".into()));
    }
    let nf = n as f64;
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / nf;
    let rmse = (pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / nf).sqrt();

    let mut rel = 0.0;
    let mut used = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if t.abs() > MRE_ZERO_THRESHOLD {
            rel += (p - t).abs() / t.abs();
            used += 1;
        }
    }
    let excluded = n - used;
    let mre = (used > 0).then(|| rel / used as f64 * 100.0);
    let mre_warning = excluded * 100 > n;
    if mre_warning {
        log::warn!("{excluded} of {n} samples excluded from MRE (truth near zero)");
    }

    Ok(MetricReport {
        count: n,
        mae,
        // guards the power-mean inequality against last-bit rounding
        rmse: rmse.max(mae),
        pcc: pearson(pred, truth),
        mre,
        mre_excluded: excluded,
        mre_warning,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// One KPI of one technology, VAE against the direct DNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub technology: String,
    pub kpi: String,
    pub vae: MetricReport,
    pub dnn: MetricReport,
}

impl ComparisonRow {
    /// Positive when the VAE has the larger MAE.
    pub fn mae_delta(&self) -> f64 {
        self.vae.mae - self.dnn.mae
    }

    pub fn rmse_delta(&self) -> f64 {
        self.vae.rmse - self.dnn.rmse
    }

    pub fn better(&self) -> &'static str {
        match self.mae_delta() {
            d if d < 0.0 => "vae",
            d if d > 0.0 => "dnn",
            _ => "tie",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.16e}"))
}

impl ComparisonTable {
    /// Pairs reports per technology and KPI; both lists must line up.
    pub fn build(
        technology: &str,
        kpi_names: &[&str],
        vae: &[MetricReport],
        dnn: &[MetricReport],
    ) -> Result<Self> {
        if vae.len() != kpi_names.len() || dnn.len() != kpi_names.len() {
            return Err(Error::dim(kpi_names.len(), vae.len().min(dnn.len()), "comparison reports"));
        }
        Ok(ComparisonTable {
            rows: kpi_names
                .iter()
                .zip(vae.iter().zip(dnn))
                .map(|(k, (v, d))| ComparisonRow {
                    technology: technology.to_string(),
                    kpi: k.to_string(),
                    vae: v.clone(),
                    dnn: d.clone(),
                })
                .collect(),
        })
    }

    pub fn extend(&mut self, other: ComparisonTable) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(
            "technology,kpi,vae_mae,dnn_mae,vae_rmse,dnn_rmse,vae_pcc,dnn_pcc,vae_mre,dnn_mre,mae_delta,better\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{},{:.16e},{}\n",
                r.technology,
                r.kpi,
                r.vae.mae,
                r.dnn.mae,
                r.vae.rmse,
                r.dnn.rmse,
                opt(r.vae.pcc),
                opt(r.dnn.pcc),
                opt(r.vae.mre),
                opt(r.dnn.mre),
                r.mae_delta(),
                r.better()
            ));
        }
        out
    }

    /// Fixed-width text with a bar per row whose side shows the better model.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<6} {:<14} {:>12} {:>12} {:>8} {:>8} {:>8} {:>8}  better\n",
            "tech", "kpi", "vae MAE", "dnn MAE", "vae PCC", "dnn PCC", "vae MRE", "dnn MRE"
        );
        let f = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<6} {:<14} {:>12.4} {:>12.4} {:>8} {:>8} {:>8} {:>8}  {}\n",
                r.technology,
                r.kpi,
                r.vae.mae,
                r.dnn.mae,
                f(r.vae.pcc, 4),
                f(r.dnn.pcc, 4),
                f(r.vae.mre, 3),
                f(r.dnn.mre, 3),
                r.better()
            ));
        }
        out
    }
}
