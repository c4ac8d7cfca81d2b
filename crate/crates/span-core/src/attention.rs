//! Spatial attention points: softmax-expectation extraction of 2D
//! coordinates from feature maps, and the inverse rendering of points into
//! Gaussian heatmaps used as multiplicative gates by the decoder.
//!
//! Coordinate convention: x rightward, y downward, both in [−1, 1].
//! Pixel (row r, col c) of an H×W map sits at
//! y = 2r/(H−1) − 1, x = 2c/(W−1) − 1.

use crate::error::{Result, SpanError};
use crate::tensor::{Tape, Tensor};

/// K extracted points, flat layout [K, 2] = (x, y) per row, all in [−1, 1].
#[derive(Clone, Debug)]
pub struct AttentionPoints {
    pub tensor: Tensor,
}

impl AttentionPoints {
    pub fn from_tensor(tensor: Tensor) -> Result<AttentionPoints> {
        let shape = tensor.shape();
        if shape.len() != 2 || shape[1] != 2 {
            return Err(SpanError::Contract(format!(
                "attention points must be [K, 2], got {shape:?}"
            )));
        }
        let ok = tensor.with_data(|d| d.iter().all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-9));
        if !ok {
            return Err(SpanError::Contract(
                "attention point coordinates must lie in [-1, 1]".into(),
            ));
        }
        Ok(AttentionPoints { tensor })
    }

    pub fn len(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (x, y) pairs.
    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.tensor
            .with_data(|d| d.chunks(2).map(|p| (p[0], p[1])).collect())
    }
}

/// Normalized x of column c in a width-W map.
pub fn col_to_x(c: f64, w: usize) -> f64 {
    2.0 * c / (w as f64 - 1.0) - 1.0
}

/// Normalized y of row r in a height-H map.
pub fn row_to_y(r: f64, h: usize) -> f64 {
    2.0 * r / (h as f64 - 1.0) - 1.0
}

/// Pixel (row, col) → normalized (x, y). H, W ≥ 2.
pub fn pixel_to_norm(row: f64, col: f64, h: usize, w: usize) -> (f64, f64) {
    (col_to_x(col, w), row_to_y(row, h))
}

/// Normalized (x, y) → fractional pixel (row, col). Exact inverse of
/// [`pixel_to_norm`]; round-trips to 1e-12.
pub fn norm_to_pixel(x: f64, y: f64, h: usize, w: usize) -> (f64, f64) {
    let col = (x + 1.0) * (w as f64 - 1.0) / 2.0;
    let row = (y + 1.0) * (h as f64 - 1.0) / 2.0;
    (row, col)
}

/// Spatial soft-argmax: per channel, softmax(β·map) over all pixels followed
/// by the expectation of the coordinate grid. Input [K, H, W] → points
/// [K, 2]. Differentiable; expectations cannot leave the [−1,1]² hull.
pub fn softargmax2d(tape: &Tape, feature_map: &Tensor, beta: f64) -> Result<AttentionPoints> {
    let shape = feature_map.shape();
    if shape.len() != 3 || shape[1] < 2 || shape[2] < 2 {
        return Err(SpanError::Contract(format!(
            "softargmax2d expects [K, H≥2, W≥2], got {shape:?}"
        )));
    }
    if !(beta > 0.0) {
        return Err(SpanError::Parameter(format!(
            "softargmax2d temperature must be positive, got {beta}"
        )));
    }
    let (k, h, w) = (shape[0], shape[1], shape[2]);
    let finite = feature_map.with_data(|d| d.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(SpanError::Numeric(
            "softargmax2d on non-finite feature values".into(),
        ));
    }

    let hw = h * w;
    // per-channel softmax probabilities, kept for the backward rule
    let mut probs = vec![0.0; k * hw];
    let mut points = vec![0.0; k * 2];
    feature_map.with_data(|d| {
        for ch in 0..k {
            let src = &d[ch * hw..(ch + 1) * hw];
            let p = &mut probs[ch * hw..(ch + 1) * hw];
            let m = src.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut z = 0.0;
            for (pi, &v) in p.iter_mut().zip(src) {
                let e = (beta * (v - m)).exp();
                *pi = e;
                z += e;
            }
            let (mut ex, mut ey) = (0.0, 0.0);
            for r in 0..h {
                let y = row_to_y(r as f64, h);
                for c in 0..w {
                    let pi = p[r * w + c] / z;
                    p[r * w + c] = pi;
                    ex += pi * col_to_x(c as f64, w);
                    ey += pi * y;
                }
            }
            points[ch * 2] = ex;
            points[ch * 2 + 1] = ey;
        }
    });
    let out = Tensor::from_vec(points, &[k, 2])?;

    if tape.is_recording() && feature_map.requires_grad() {
        let (fm, oc) = (feature_map.clone(), out.clone());
        tape.record(&out, move || {
            let Some(g) = oc.grad() else { return };
            let pts = oc.to_vec();
            let mut dmap = vec![0.0; k * hw];
            for ch in 0..k {
                let p = &probs[ch * hw..(ch + 1) * hw];
                let (gx, gy) = (g[ch * 2], g[ch * 2 + 1]);
                let (ex, ey) = (pts[ch * 2], pts[ch * 2 + 1]);
                let dst = &mut dmap[ch * hw..(ch + 1) * hw];
                for r in 0..h {
                    let y = row_to_y(r as f64, h);
                    for c in 0..w {
                        let x = col_to_x(c as f64, w);
                        dst[r * w + c] =
                            beta * p[r * w + c] * ((x - ex) * gx + (y - ey) * gy);
                    }
                }
            }
            fm.accumulate_grad(&dmap);
        });
    }
    AttentionPoints::from_tensor(out)
}

/// Render points into peak-normalized Gaussian bumps:
/// G_k(r, c) = exp(−((x(c)−x_k)² + (y(r)−y_k)²) / (2σ²)).
/// Input points [K, 2] → maps [K, H, W]. Differentiable w.r.t. the points.
pub fn make_heatmap(tape: &Tape, points: &Tensor, h: usize, w: usize, sigma: f64) -> Result<Tensor> {
    if !(sigma > 0.0) {
        return Err(SpanError::Parameter(format!(
            "heatmap sigma must be positive, got {sigma}"
        )));
    }
    let shape = points.shape();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(SpanError::Contract(format!(
            "make_heatmap expects points [K, 2], got {shape:?}"
        )));
    }
    if h < 2 || w < 2 {
        return Err(SpanError::Contract(format!(
            "make_heatmap expects H, W ≥ 2, got {h}×{w}"
        )));
    }
    let k = shape[0];
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let mut maps = vec![0.0; k * h * w];
    points.with_data(|pd| {
        for ch in 0..k {
            let (px, py) = (pd[ch * 2], pd[ch * 2 + 1]);
            let dst = &mut maps[ch * h * w..(ch + 1) * h * w];
            for r in 0..h {
                let dy = row_to_y(r as f64, h) - py;
                for c in 0..w {
                    let dx = col_to_x(c as f64, w) - px;
                    dst[r * w + c] = (-(dx * dx + dy * dy) * inv2s2).exp();
                }
            }
        }
    });
    let out = Tensor::from_vec(maps, &[k, h, w])?;

    if tape.is_recording() && points.requires_grad() {
        let (pc, oc) = (points.clone(), out.clone());
        tape.record(&out, move || {
            let Some(g) = oc.grad() else { return };
            let maps = oc.to_vec();
            let mut dp = vec![0.0; k * 2];
            pc.with_data(|pd| {
                for ch in 0..k {
                    let (px, py) = (pd[ch * 2], pd[ch * 2 + 1]);
                    let base = ch * h * w;
                    let (mut ax, mut ay) = (0.0, 0.0);
                    for r in 0..h {
                        let dy = row_to_y(r as f64, h) - py;
                        for c in 0..w {
                            let dx = col_to_x(c as f64, w) - px;
                            let gv = g[base + r * w + c] * maps[base + r * w + c];
                            // ∂G/∂px = G·(x−px)/σ², likewise for py
                            ax += gv * dx;
                            ay += gv * dy;
                        }
                    }
                    dp[ch * 2] = ax * 2.0 * inv2s2;
                    dp[ch * 2 + 1] = ay * 2.0 * inv2s2;
                }
            });
            pc.accumulate_grad(&dp);
        });
    }
    Ok(out)
}

/// Gate feature maps with per-channel heatmaps (elementwise product).
pub fn apply_attention_weighting(
    tape: &Tape,
    features: &Tensor,
    heatmaps: &Tensor,
) -> Result<Tensor> {
    if features.shape() != heatmaps.shape() {
        return Err(SpanError::ShapeMismatch {
            op: "apply_attention_weighting",
            lhs: features.shape(),
            rhs: heatmaps.shape(),
        });
    }
    tape.mul(features, heatmaps)
}
