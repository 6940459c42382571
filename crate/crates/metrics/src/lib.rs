//! Saliency evaluation measures, computed in `f64`.
//!
//! Predictions are maps in `[0, 1]`, ground truths are binary masks of the
//! same shape. Thresholded measures binarize the prediction adaptively at
//! `min(2 * mean(pred), 1)`.

use serde::{Deserialize, Serialize};
use usersod_core::{BinaryMask, SaliencyMap};

/// Weight of precision against recall in the F-measure.
pub const BETA_SQ: f64 = 0.3;
/// Balance between object- and region-aware structure similarity.
pub const S_ALPHA: f64 = 0.5;
/// Guard against division by zero (machine epsilon of `f64`).
const EPS: f64 = f64::EPSILON;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: prediction {pred:?} vs ground truth {gt:?}")]
    ShapeMismatch {
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("undefined recall: ground truth has no foreground")]
    UndefinedRecall,
    #[error("no samples to evaluate")]
    Empty,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// A prediction and ground truth flattened row-major into `f64` and `bool`.
struct Pair {
    h: usize,
    w: usize,
    pred: Vec<f64>,
    gt: Vec<bool>,
}

impl Pair {
    fn new(pred: &SaliencyMap, gt: &BinaryMask) -> Result<Self> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(MetricsError::ShapeMismatch {
                pred: (pred.height(), pred.width()),
                gt: (gt.height(), gt.width()),
            });
        }
        Ok(Pair {
            h: gt.height(),
            w: gt.width(),
            pred: pred.data().iter().map(|&v| v as f64).collect(),
            gt: gt.data().iter().map(|&v| v != 0).collect(),
        })
    }

    fn n(&self) -> usize {
        self.pred.len()
    }

    fn binarized(&self) -> Vec<bool> {
        let t = adaptive_threshold(&self.pred);
        self.pred.iter().map(|&p| is_foreground(p, t)).collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn adaptive_threshold(pred: &[f64]) -> f64 {
    (2.0 * mean(pred)).min(1.0)
}

/// A zero threshold must not turn an all-zero map into all foreground.
fn is_foreground(p: f64, threshold: f64) -> bool {
    p >= threshold && p > 0.0
}

pub fn mae(pred: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    let pair = Pair::new(pred, gt)?;
    let total: f64 = pair
        .pred
        .iter()
        .zip(&pair.gt)
        .map(|(&p, &g)| (p - g as u8 as f64).abs())
        .sum();
    Ok(total / pair.n() as f64)
}

pub fn f_measure(pred: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    let pair = Pair::new(pred, gt)?;
    let positives = pair.gt.iter().filter(|&&g| g).count();
    if positives == 0 {
        return Err(MetricsError::UndefinedRecall);
    }
    let bin = pair.binarized();
    let predicted = bin.iter().filter(|&&b| b).count();
    let tp = bin.iter().zip(&pair.gt).filter(|(&b, &g)| b && g).count();
    let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
    let recall = tp as f64 / positives as f64;
    let denom = BETA_SQ * precision + recall;
    Ok(if denom == 0.0 {
        0.0
    } else {
        (1.0 + BETA_SQ) * precision * recall / denom
    })
}

pub fn s_measure(pred: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    let pair = Pair::new(pred, gt)?;
    let fg_ratio = pair.gt.iter().filter(|&&g| g).count() as f64 / pair.n() as f64;
    let pred_mean = mean(&pair.pred);
    let score = if fg_ratio == 0.0 {
        1.0 - pred_mean
    } else if fg_ratio == 1.0 {
        pred_mean
    } else {
        S_ALPHA * object_score(&pair, fg_ratio) + (1.0 - S_ALPHA) * region_score(&pair)
    };
    Ok(score.max(0.0))
}

fn object_similarity(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let x = mean(values);
    let sigma = if values.len() > 1 {
        (values.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn object_score(pair: &Pair, fg_ratio: f64) -> f64 {
    let fg: Vec<f64> = pair.pred.iter().zip(&pair.gt).filter(|(_, &g)| g).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pair.pred.iter().zip(&pair.gt).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p).collect();
    fg_ratio * object_similarity(&fg) + (1.0 - fg_ratio) * object_similarity(&bg)
}

/// Split point one past the rounded foreground centroid (half-to-even rounding).
fn centroid(pair: &Pair) -> (usize, usize) {
    let (mut sx, mut sy, mut count) = (0.0, 0.0, 0usize);
    for y in 0..pair.h {
        for x in 0..pair.w {
            if pair.gt[y * pair.w + x] {
                sx += x as f64;
                sy += y as f64;
                count += 1;
            }
        }
    }
    let (cx, cy) = if count == 0 {
        ((pair.w as f64 / 2.0).round_ties_even(), (pair.h as f64 / 2.0).round_ties_even())
    } else {
        ((sx / count as f64).round_ties_even(), (sy / count as f64).round_ties_even())
    };
    (cx as usize + 1, cy as usize + 1)
}

fn block_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let (x, y) = (mean(pred), mean(gt));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        sxx += (p - x) * (p - x);
        syy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let d = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let (sxx, syy, sxy) = (sxx / d, syy / d, sxy / d);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_score(pair: &Pair) -> f64 {
    let (cx, cy) = centroid(pair);
    let (cx, cy) = (cx.min(pair.w), cy.min(pair.h));
    let area = pair.n() as f64;
    let blocks = [
        (0..cy, 0..cx),
        (0..cy, cx..pair.w),
        (cy..pair.h, 0..cx),
        (cy..pair.h, cx..pair.w),
    ];
    blocks
        .into_iter()
        .map(|(rows, cols)| {
            let mut p = Vec::new();
            let mut g = Vec::new();
            for y in rows {
                for x in cols.clone() {
                    p.push(pair.pred[y * pair.w + x]);
                    g.push(pair.gt[y * pair.w + x] as u8 as f64);
                }
            }
            p.len() as f64 / area * block_ssim(&p, &g)
        })
        .sum()
}

pub fn e_measure(pred: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    let pair = Pair::new(pred, gt)?;
    let bin = pair.binarized();
    let n = pair.n();
    let count = |pb: bool, gb: bool| bin.iter().zip(&pair.gt).filter(|(&b, &g)| b == pb && g == gb).count();
    let (tt, tf, ft, ff) = (count(true, true), count(true, false), count(false, true), count(false, false));
    let gt_fg = tt + ft;
    let sum = if gt_fg == 0 {
        ff as f64
    } else if gt_fg == n {
        tt as f64
    } else {
        let pred_mean = (tt + tf) as f64 / n as f64;
        let gt_mean = gt_fg as f64 / n as f64;
        let (p_fg, p_bg) = (1.0 - pred_mean, -pred_mean);
        let (g_fg, g_bg) = (1.0 - gt_mean, -gt_mean);
        [(p_fg, g_fg, tt), (p_fg, g_bg, tf), (p_bg, g_fg, ft), (p_bg, g_bg, ff)]
            .into_iter()
            .map(|(a, b, k)| {
                let align = 2.0 * a * b / (a * a + b * b + EPS);
                (align + 1.0).powi(2) / 4.0 * k as f64
            })
            .sum()
    };
    Ok(sum / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub mae: f64,
    /// `None` when the ground truth has no foreground.
    pub f_measure: Option<f64>,
    pub s_measure: f64,
    pub e_measure: f64,
}

pub fn evaluate_pair(pred: &SaliencyMap, gt: &BinaryMask) -> Result<SampleMetrics> {
    Ok(SampleMetrics {
        mae: mae(pred, gt)?,
        f_measure: match f_measure(pred, gt) {
            Ok(v) => Some(v),
            Err(MetricsError::UndefinedRecall) => None,
            Err(e) => return Err(e),
        },
        s_measure: s_measure(pred, gt)?,
        e_measure: e_measure(pred, gt)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    /// Averaged over samples with a defined F-measure only.
    pub f_measure: f64,
    pub s_measure: f64,
    pub e_measure: f64,
    pub count: usize,
    /// Samples whose F-measure was undefined (all-zero ground truth).
    pub f_measure_skipped: usize,
}

/// Averages per-sample metrics in insertion order.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    samples: Vec<SampleMetrics>,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred: &SaliencyMap, gt: &BinaryMask) -> Result<SampleMetrics> {
        let m = evaluate_pair(pred, gt)?;
        self.samples.push(m);
        Ok(m)
    }

    pub fn push(&mut self, m: SampleMetrics) {
        self.samples.push(m);
    }

    pub fn samples(&self) -> &[SampleMetrics] {
        &self.samples
    }

    pub fn report(&self) -> Result<MetricsReport> {
        if self.samples.is_empty() {
            return Err(MetricsError::Empty);
        }
        let n = self.samples.len() as f64;
        let fms: Vec<f64> = self.samples.iter().filter_map(|s| s.f_measure).collect();
        Ok(MetricsReport {
            mae: self.samples.iter().map(|s| s.mae).sum::<f64>() / n,
            f_measure: if fms.is_empty() { 0.0 } else { mean(&fms) },
            s_measure: self.samples.iter().map(|s| s.s_measure).sum::<f64>() / n,
            e_measure: self.samples.iter().map(|s| s.e_measure).sum::<f64>() / n,
            count: self.samples.len(),
            f_measure_skipped: self.samples.len() - fms.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[f32]) -> SaliencyMap {
        SaliencyMap::new(h, w, v.to_vec()).unwrap()
    }

    fn mask(h: usize, w: usize, v: &[u8]) -> BinaryMask {
        BinaryMask::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn mae_small_example() {
        let m = mae(&map(2, 2, &[0.5, 0.5, 0.0, 0.0]), &mask(2, 2, &[1, 0, 0, 0])).unwrap();
        assert!((m - 0.25).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let err = mae(&map(2, 2, &[0.0; 4]), &mask(1, 4, &[0; 4])).unwrap_err();
        assert!(matches!(err, MetricsError::ShapeMismatch { .. }));
    }

    #[test]
    fn all_zero_gt_has_undefined_recall() {
        let err = f_measure(&map(2, 2, &[0.3; 4]), &mask(2, 2, &[0; 4])).unwrap_err();
        assert_eq!(err, MetricsError::UndefinedRecall);
    }

    #[test]
    fn all_zero_prediction_has_no_foreground() {
        let gt = mask(2, 2, &[1, 0, 0, 0]);
        assert_eq!(f_measure(&map(2, 2, &[0.0; 4]), &gt).unwrap(), 0.0);
    }
}
