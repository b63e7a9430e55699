//! Force tracking error and the composite deformation error over taxel frames.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxelPoint {
    /// Position on the contact face, mm.
    pub y: f64,
    pub z: f64,
    /// Normal force, N.
    pub force: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaxelFrame {
    pub t: f64,
    pub points: Vec<TaxelPoint>,
}

impl TaxelFrame {
    pub fn resultant(&self) -> f64 {
        self.points.iter().map(|p| p.force).sum()
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.y, p.z)).collect()
    }
}

/// `|Σ forces − target|`.
pub fn force_tracking_error(frame: &TaxelFrame, target_resultant: f64) -> Result<f64> {
    if !(target_resultant >= 0.0) {
        return Err(Error::invalid("target_resultant", format!("must be non-negative, got {target_resultant}")));
    }
    Ok((frame.resultant() - target_resultant).abs())
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull in counter-clockwise order (monotone chain). Collinear points
/// on the hull boundary are dropped.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Shoelace area of the convex hull; zero for fewer than 3 points or a
/// collinear set.
pub fn convex_hull_area(points: &[(f64, f64)]) -> f64 {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return 0.0;
    }
    let twice: f64 = hull
        .iter()
        .zip(hull.iter().cycle().skip(1))
        .map(|(a, b)| a.0 * b.1 - b.0 * a.1)
        .sum();
    0.5 * twice.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdeWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for CdeWeights {
    fn default() -> Self {
        CdeWeights { alpha: 0.4, beta: 0.6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdeBreakdown {
    /// Root-mean-square point displacement, mm.
    pub eps_dist: f64,
    /// Absolute contact-area difference, mm².
    pub eps_area: f64,
    pub total: f64,
}

/// `α·ε_dist + β·ε_area`, with `ε_dist` the RMS Euclidean distance between
/// index-matched points of any dimension. Note the sum mixes mm and mm².
pub fn composite_deformation_error<const D: usize>(
    reference: &[[f64; D]],
    actual: &[[f64; D]],
    target_area: f64,
    actual_area: f64,
    weights: &CdeWeights,
) -> Result<CdeBreakdown> {
    if reference.len() != actual.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} actual points", reference.len()),
            actual: actual.len().to_string(),
        });
    }
    let eps_dist = if reference.is_empty() {
        0.0
    } else {
        let sq: f64 = reference
            .iter()
            .zip(actual)
            .map(|(r, a)| r.iter().zip(a).map(|(u, v)| (u - v).powi(2)).sum::<f64>())
            .sum();
        (sq / reference.len() as f64).sqrt()
    };
    let eps_area = (target_area - actual_area).abs();
    Ok(CdeBreakdown {
        eps_dist,
        eps_area,
        total: weights.alpha * eps_dist + weights.beta * eps_area,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t: f64,
    pub fte: f64,
    pub eps_dist: f64,
    pub eps_area: f64,
    pub eps_total: f64,
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "fte", "eps_dist", "eps_area", "eps_total"])?;
    for r in rows {
        w.write_record(&[
            r.t.to_string(),
            r.fte.to_string(),
            r.eps_dist.to_string(),
            r.eps_area.to_string(),
            r.eps_total.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
