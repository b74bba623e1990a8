//! Pose metrics and the percentile summary table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

fn check_shapes(pred: &[Vec3], truth: &[Vec3]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "pose has {} atoms, reference has {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Root mean squared per-atom deviation, no alignment.
pub fn lrmsd(pred: &[Vec3], truth: &[Vec3]) -> Result<f64> {
    check_shapes(pred, truth)?;
    let s: f64 = pred.iter().zip(truth).map(|(p, q)| geom::dist2(*p, *q)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

/// Distance between unweighted centroids.
pub fn centroid_distance(pred: &[Vec3], truth: &[Vec3]) -> Result<f64> {
    check_shapes(pred, truth)?;
    Ok(geom::dist(geom::centroid(pred), geom::centroid(truth)))
}

/// Percentile `q ∈ [0,1]` of sorted values by linear interpolation between
/// closest ranks (position `q (n-1)`).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub mean: f64,
    pub frac_below_2: f64,
    pub frac_below_5: f64,
}

pub fn percentile_report(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::Empty("percentile report of an empty list".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Validation("NaN in metric values".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let below = |t: f64| s.iter().filter(|&&v| v < t).count() as f64 / n;
    Ok(Aggregate {
        p25: percentile_sorted(&s, 0.25),
        p50: percentile_sorted(&s, 0.50),
        p75: percentile_sorted(&s, 0.75),
        mean: s.iter().sum::<f64>() / n,
        frac_below_2: below(2.0),
        frac_below_5: below(5.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMetrics {
    pub id: String,
    pub lrmsd: f64,
    pub cd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_complex: Vec<ComplexMetrics>,
    pub lrmsd: Aggregate,
    pub cd: Aggregate,
}

impl MetricReport {
    pub fn from_poses<'a>(items: impl IntoIterator<Item = (&'a str, &'a [Vec3], &'a [Vec3])>) -> Result<Self> {
        let per_complex = items
            .into_iter()
            .map(|(id, pred, truth)| {
                Ok(ComplexMetrics {
                    id: id.to_string(),
                    lrmsd: lrmsd(pred, truth)?,
                    cd: centroid_distance(pred, truth)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let l: Vec<f64> = per_complex.iter().map(|m| m.lrmsd).collect();
        let c: Vec<f64> = per_complex.iter().map(|m| m.cd).collect();
        Ok(Self {
            lrmsd: percentile_report(&l)?,
            cd: percentile_report(&c)?,
            per_complex,
        })
    }

    pub const TSV_HEADER: [&'static str; 13] = [
        "method",
        "lrmsd_p25",
        "lrmsd_p50",
        "lrmsd_p75",
        "lrmsd_mean",
        "lrmsd_pct_below_2A",
        "lrmsd_pct_below_5A",
        "cd_p25",
        "cd_p50",
        "cd_p75",
        "cd_mean",
        "cd_pct_below_2A",
        "cd_pct_below_5A",
    ];

    /// Header plus one row: LRMSD then CD, each as 25/50/75 percentiles,
    /// mean, and percentage below 2 Å and 5 Å.
    pub fn to_tsv(&self, method: &str) -> String {
        let mut row = vec![method.to_string()];
        for a in [&self.lrmsd, &self.cd] {
            for v in [a.p25, a.p50, a.p75, a.mean, 100.0 * a.frac_below_2, 100.0 * a.frac_below_5] {
                row.push(format_f64(v));
            }
        }
        format!("{}\n{}\n", Self::TSV_HEADER.join("\t"), row.join("\t"))
    }
}

/// 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}
