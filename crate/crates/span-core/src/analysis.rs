//! Post-hoc analyses: PCA of LSTM hidden traces, attention-point overlay
//! rendering, success-rate tables, and the attention-to-block tracking
//! metric.

use std::collections::BTreeMap;

use crate::attention::norm_to_pixel;
use crate::error::{Result, SpanError};
use crate::sim::BlockPos;
use crate::tensor::Tensor;

// ── PCA ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Top-k eigenvectors, one per row, orthonormal.
    pub components: Vec<Vec<f64>>,
    /// All eigenvalues, descending, non-negative.
    pub eigenvalues: Vec<f64>,
    /// Input rows projected onto the components, N×k.
    pub projected: Vec<Vec<f64>>,
    /// Sum of the top-k eigenvalues over the total.
    pub explained_ratio: f64,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major D×D).
/// Returns (eigenvalues, eigenvectors as columns of V).
fn jacobi_eigen(mut a: Vec<f64>, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    if d == 1 {
        return (vec![a[0]], v);
    }
    let scale: f64 = a.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    let tol = 1e-14 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d - 1 {
            for q in p + 1..d {
                off += a[p * d + q].abs();
            }
        }
        if off < tol {
            break;
        }
        for p in 0..d - 1 {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() < tol * 1e-3 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta.abs() > 1e12 {
                    0.5 / theta
                } else {
                    let s = theta.signum();
                    s / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[p * d + p] = app - t * apq;
                a[q * d + q] = aqq + t * apq;
                a[p * d + q] = 0.0;
                a[q * d + p] = 0.0;
                for i in 0..d {
                    if i != p && i != q {
                        let aip = a[i * d + p];
                        let aiq = a[i * d + q];
                        a[i * d + p] = aip - s * (aiq + tau * aip);
                        a[i * d + q] = aiq + s * (aip - tau * aiq);
                        a[p * d + i] = a[i * d + p];
                        a[q * d + i] = a[i * d + q];
                    }
                }
                for i in 0..d {
                    let vip = v[i * d + p];
                    let viq = v[i * d + q];
                    v[i * d + p] = vip - s * (viq + tau * vip);
                    v[i * d + q] = viq + s * (vip - tau * viq);
                }
            }
        }
    }
    let eig = (0..d).map(|i| a[i * d + i]).collect();
    (eig, v)
}

/// Principal component analysis: center, covariance, Jacobi eigenpairs,
/// project onto the top-k axes.
pub fn pca(rows: &[Vec<f64>], k: usize) -> Result<PcaResult> {
    let n = rows.len();
    if n < 2 {
        return Err(SpanError::Parameter(format!(
            "pca needs at least 2 rows, got {n}"
        )));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(SpanError::Parameter("pca rows must share a nonzero width".into()));
    }
    if k == 0 || k > d {
        return Err(SpanError::Parameter(format!(
            "pca component count {k} outside 1..={d}"
        )));
    }

    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    // sample covariance
    let mut cov = vec![0.0; d * d];
    for row in rows {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= denom;
            cov[j * d + i] = cov[i * d + j];
        }
    }

    let (eig, v) = jacobi_eigen(cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig[i].max(0.0)).collect();

    let mut components = Vec::with_capacity(k);
    for &col in order.iter().take(k) {
        let mut vecy: Vec<f64> = (0..d).map(|r| v[r * d + col]).collect();
        // deterministic sign: largest-magnitude entry positive
        let pivot = vecy
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if vecy[pivot] < 0.0 {
            for x in vecy.iter_mut() {
                *x = -*x;
            }
        }
        components.push(vecy);
    }

    let projected = rows
        .iter()
        .map(|row| {
            components
                .iter()
                .map(|comp| {
                    comp.iter()
                        .zip(row.iter().zip(&mean))
                        .map(|(c, (x, m))| c * (x - m))
                        .sum()
                })
                .collect()
        })
        .collect();

    let total: f64 = eigenvalues.iter().sum();
    let top: f64 = eigenvalues.iter().take(k).sum();
    let explained_ratio = if total > 0.0 { top / total } else { 0.0 };

    Ok(PcaResult {
        mean,
        components,
        eigenvalues,
        projected,
        explained_ratio,
    })
}

// ── attention overlays ──────────────────────────────────────────────────

const OVERLAY_RED: [u8; 3] = [230, 30, 30];
const OVERLAY_BLUE: [u8; 3] = [30, 60, 230];

fn put_px(rgb: &mut [u8], h: usize, w: usize, r: i64, c: i64, color: [u8; 3]) {
    if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
        return;
    }
    let idx = (r as usize * w + c as usize) * 3;
    rgb[idx..idx + 3].copy_from_slice(&color);
}

/// Draw encoder points as filled red circles (radius 2 px) and decoder
/// points as blue × glyphs (arm 3 px) over a frame. Returns interleaved
/// RGB; the input frame is untouched. Glyph centers use the floor of the
/// fractional pixel position; out-of-frame parts clip silently.
pub fn render_attention_overlay(
    frame: &Tensor,
    enc_points: &[(f64, f64)],
    dec_points: &[(f64, f64)],
) -> Result<Vec<u8>> {
    let shape = frame.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(SpanError::Contract(format!(
            "overlay frame must be [3, H, W], got {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let mut rgb = frame.with_data(|d| crate::dataset::to_rgb8(d, h, w));

    for &(x, y) in enc_points {
        let (fr, fc) = norm_to_pixel(x, y, h, w);
        let (r0, c0) = (fr.floor() as i64, fc.floor() as i64);
        for dr in -2i64..=2 {
            for dc in -2i64..=2 {
                if dr * dr + dc * dc <= 4 {
                    put_px(&mut rgb, h, w, r0 + dr, c0 + dc, OVERLAY_RED);
                }
            }
        }
    }
    for &(x, y) in dec_points {
        let (fr, fc) = norm_to_pixel(x, y, h, w);
        let (r0, c0) = (fr.floor() as i64, fc.floor() as i64);
        for a in -3i64..=3 {
            put_px(&mut rgb, h, w, r0 + a, c0 + a, OVERLAY_BLUE);
            put_px(&mut rgb, h, w, r0 + a, c0 - a, OVERLAY_BLUE);
        }
    }
    Ok(rgb)
}

// ── success tables ──────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct SuccessSummary {
    pub model: String,
    pub situation: String,
    /// Successes per position label.
    pub counts: BTreeMap<char, usize>,
    pub trials: usize,
}

fn format_pct(count: usize, trials: usize) -> String {
    let pct = 100.0 * count as f64 / trials as f64;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}%", pct.round() as i64)
    } else {
        format!("{pct:.1}%")
    }
}

/// One CSV row per (model, situation), columns A–E as percentages.
pub fn success_table(summaries: &[SuccessSummary]) -> Result<String> {
    let mut out = String::from("model,situation,A,B,C,D,E\n");
    for s in summaries {
        if s.trials == 0 {
            return Err(SpanError::Contract("summary with zero trials".into()));
        }
        let mut row = format!("{},{}", s.model, s.situation);
        for pos in BlockPos::ALL {
            let count = s.counts.get(&pos.label()).ok_or_else(|| {
                SpanError::Contract(format!(
                    "summary {}/{} is missing position {}",
                    s.model,
                    s.situation,
                    pos.label()
                ))
            })?;
            if *count > s.trials {
                return Err(SpanError::Contract(format!(
                    "count {count} exceeds trials {}",
                    s.trials
                )));
            }
            row.push(',');
            row.push_str(&format_pct(*count, s.trials));
        }
        row.push('\n');
        out.push_str(&row);
    }
    Ok(out)
}

/// Parse a table produced by [`success_table`] back into counts; round-trip
/// check support.
pub fn parse_success_table(csv: &str, trials: usize) -> Result<Vec<SuccessSummary>> {
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or("");
    if header != "model,situation,A,B,C,D,E" {
        return Err(SpanError::data("success table", "unexpected header"));
    }
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(SpanError::data("success table", format!("bad row {line:?}")));
        }
        let mut counts = BTreeMap::new();
        for (i, pos) in BlockPos::ALL.iter().enumerate() {
            let cell = parts[2 + i].trim_end_matches('%');
            let pct: f64 = cell
                .parse()
                .map_err(|_| SpanError::data("success table", format!("bad cell {cell:?}")))?;
            counts.insert(pos.label(), (pct * trials as f64 / 100.0).round() as usize);
        }
        out.push(SuccessSummary {
            model: parts[0].to_string(),
            situation: parts[1].to_string(),
            counts,
            trials,
        });
    }
    Ok(out)
}

// ── attention tracking ──────────────────────────────────────────────────

/// Mean over frames of the pixel distance from the ground-truth block
/// centroid to the nearest attention point. Points come in normalized
/// coordinates; centroids in fractional pixels of an `hw`-sized frame.
pub fn attention_tracking_metric(
    block_px: &[(f64, f64)],
    points_per_frame: &[Vec<(f64, f64)>],
    hw: usize,
) -> Result<f64> {
    if block_px.is_empty() || block_px.len() != points_per_frame.len() {
        return Err(SpanError::Contract(format!(
            "tracking metric needs aligned non-empty traces, got {} centroids and {} point sets",
            block_px.len(),
            points_per_frame.len()
        )));
    }
    let mut sum = 0.0;
    for ((br, bc), points) in block_px.iter().zip(points_per_frame) {
        if points.is_empty() {
            return Err(SpanError::Contract("empty attention point set".into()));
        }
        let best = points
            .iter()
            .map(|&(x, y)| {
                let (r, c) = norm_to_pixel(x, y, hw, hw);
                ((r - br).powi(2) + (c - bc).powi(2)).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        sum += best;
    }
    Ok(sum / block_px.len() as f64)
}
