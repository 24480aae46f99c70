//! Depth estimation metrics: absolute relative error and the δ < 1.25
//! inlier fraction, with optional least-squares affine pre-alignment.
//!
//! Metrics run in float64 regardless of the model dtype.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DELTA_THRESHOLD: f64 = 1.25;
const ALIGN_CLAMP_MIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub delta_125: f64,
    pub aligned: bool,
}

/// Depth is read from channel 0 of both grids. Ground truth must be strictly
/// positive (a zero would blow up the relative error).
///
/// With `align`, the prediction is first mapped through the least-squares
/// scale/shift minimizing Σ(s·pred + b − gt)² over all pixels, then clamped
/// positive — the standard protocol for affine-invariant depth predictors.
pub fn depth_metrics(pred: &Grid, gt: &Grid, align: bool) -> Result<DepthMetrics> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch {
            op: "depth_metrics",
            lhs: pred.tensor().shape().to_vec(),
            rhs: gt.tensor().shape().to_vec(),
        });
    }
    let (t, h, w) = gt.extent();
    let n = t * h * w;
    let mut p = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for f in 0..t {
        for y in 0..h {
            for x in 0..w {
                let gv = gt.get(f, y, x, 0);
                if gv <= 0.0 {
                    return Err(Error::invalid(
                        "depth_metrics",
                        format!("ground truth contains non-positive depth {gv} at ({f},{y},{x})"),
                    ));
                }
                g.push(gv);
                p.push(pred.get(f, y, x, 0));
            }
        }
    }

    if align {
        let nf = n as f64;
        let mean_p = p.iter().sum::<f64>() / nf;
        let mean_g = g.iter().sum::<f64>() / nf;
        let mut cov = 0.0;
        let mut var = 0.0;
        for (&pv, &gv) in p.iter().zip(&g) {
            cov += (pv - mean_p) * (gv - mean_g);
            var += (pv - mean_p) * (pv - mean_p);
        }
        let s = if var > 1e-12 { cov / var } else { 1.0 };
        let b = mean_g - s * mean_p;
        for pv in p.iter_mut() {
            *pv = (s * *pv + b).max(ALIGN_CLAMP_MIN);
        }
    }

    let mut abs_rel = 0.0;
    let mut inliers = 0usize;
    for (&pv, &gv) in p.iter().zip(&g) {
        abs_rel += (pv - gv).abs() / gv;
        let ratio = (pv / gv).max(gv / pv.max(ALIGN_CLAMP_MIN));
        if ratio < DELTA_THRESHOLD {
            inliers += 1;
        }
    }
    Ok(DepthMetrics {
        abs_rel: abs_rel / n as f64,
        delta_125: inliers as f64 / n as f64,
        aligned: align,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: Vec<f64>) -> Grid {
        let n = values.len();
        let mut data = Vec::with_capacity(n * 3);
        for v in values {
            data.extend_from_slice(&[v, v, v]);
        }
        Grid::from_tensor(crate::numerics::Tensor::from_f64(&[1, 1, n, 3], data).unwrap()).unwrap()
    }

    #[test]
    fn identity_prediction_is_exact() {
        let g = grid(vec![0.3, 0.5, 0.9, 1.0]);
        for align in [false, true] {
            let m = depth_metrics(&g, &g, align).unwrap();
            assert_eq!(m.abs_rel, 0.0);
            assert_eq!(m.delta_125, 1.0);
        }
    }

    #[test]
    fn thirty_percent_scale_error() {
        let gt = grid(vec![0.4, 0.5, 0.8, 1.0]);
        let pred = grid(vec![0.4 * 1.3, 0.5 * 1.3, 0.8 * 1.3, 1.3]);
        let m = depth_metrics(&pred, &gt, false).unwrap();
        assert!((m.abs_rel - 0.3).abs() < 1e-6, "abs_rel {}", m.abs_rel);
        assert_eq!(m.delta_125, 0.0, "ratio 1.3 >= 1.25 everywhere");
        // Affine alignment absorbs a pure scale.
        let m = depth_metrics(&pred, &gt, true).unwrap();
        assert!(m.abs_rel < 1e-9, "abs_rel {}", m.abs_rel);
        assert_eq!(m.delta_125, 1.0);
    }

    #[test]
    fn alignment_is_idempotent() {
        let gt = grid(vec![0.45, 0.6, 0.75, 0.9, 1.0, 1.0]);
        let pred = grid(vec![0.5, 0.55, 0.8, 0.85, 0.95, 1.05]);
        let once = depth_metrics(&pred, &gt, true).unwrap();
        // Build the aligned prediction explicitly and re-align it.
        let n = 6;
        let p: Vec<f64> = (0..n).map(|i| pred.get(0, 0, i, 0)).collect();
        let g: Vec<f64> = (0..n).map(|i| gt.get(0, 0, i, 0)).collect();
        let mp = p.iter().sum::<f64>() / n as f64;
        let mg = g.iter().sum::<f64>() / n as f64;
        let cov: f64 = p.iter().zip(&g).map(|(a, b)| (a - mp) * (b - mg)).sum();
        let var: f64 = p.iter().map(|a| (a - mp) * (a - mp)).sum();
        let (s, b) = (cov / var, mg - cov / var * mp);
        let aligned = grid(p.iter().map(|&v| s * v + b).collect());
        let twice = depth_metrics(&aligned, &gt, true).unwrap();
        assert!((once.abs_rel - twice.abs_rel).abs() < 1e-9);
        assert!((once.delta_125 - twice.delta_125).abs() < 1e-9);
    }

    #[test]
    fn zero_ground_truth_rejected() {
        let gt = grid(vec![0.5, 0.0]);
        let pred = grid(vec![0.5, 0.5]);
        assert!(depth_metrics(&pred, &gt, false).is_err());
    }
}
