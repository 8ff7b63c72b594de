use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LabelMap, BACKGROUND};
use crate::nn::{Float, Tensor};

/// Weight of the attention losses relative to the prediction loss.
pub const ALPHA: f64 = 1.0;

/// A scalar loss with its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub loss: f64,
    pub grad: Tensor<T>,
}

/// Per-pixel weights that balance character and background pixels: each
/// character pixel weighs `N_neg / (N - N_neg)`, background pixels weigh 1.
/// Maps without background or without characters are unweighted.
pub fn pixel_weights(labels: &LabelMap) -> Vec<f64> {
    let (num, den) = foreground_weight(labels);
    let w_fg = num as f64 / den as f64;
    labels
        .data
        .iter()
        .map(|&y| if y == BACKGROUND { 1.0 } else { w_fg })
        .collect()
}

/// Character-pixel weight as an exact fraction `(numerator, denominator)`.
pub fn foreground_weight(labels: &LabelMap) -> (usize, usize) {
    let fg = labels.foreground_count();
    let neg = labels.data.len() - fg;
    if fg == 0 || neg == 0 {
        (1, 1)
    } else {
        (neg, fg)
    }
}

fn check_logits<T: Float>(
    logits: &Tensor<T>,
    labels: &LabelMap,
    what: &str,
) -> Result<(usize, usize, usize)> {
    let (c, h, w) = logits.chw()?;
    if (labels.height, labels.width) != (h, w) {
        return Err(Error::invalid(format!(
            "{what} labels are {}x{} but logits are {h}x{w}",
            labels.height, labels.width
        )));
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite(format!("{what} logits")));
    }
    Ok((c, h, w))
}

/// Weighted softmax cross-entropy over `[C, h, w]` logits and an `h x w`
/// label map, scaled by `4 / (H W)` where `H = 2h`, `W = 2w` is the input
/// size.
pub fn prediction_loss<T: Float>(
    logits: &Tensor<T>,
    labels: &LabelMap,
    weights: &[f64],
) -> Result<LossGrad<T>> {
    let (c, h, w) = check_logits(logits, labels, "prediction")?;
    if weights.len() != h * w {
        return Err(Error::invalid(format!(
            "{} weights for a {h}x{w} map",
            weights.len()
        )));
    }
    if let Some(&bad) = labels.data.iter().find(|&&y| y as usize >= c) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let norm = 4.0 / ((2 * h) * (2 * w)) as f64;
    softmax_ce(logits, c, h * w, norm, |p| {
        (labels.data[p] as usize, weights[p])
    })
}

/// Two-class cross-entropy of one attention head: `[2, h_s, w_s]` logits
/// against a map where every nonzero label is a character pixel. Scaled by
/// `4 / (h_s w_s)`.
pub fn attention_loss<T: Float>(logits: &Tensor<T>, labels: &LabelMap) -> Result<LossGrad<T>> {
    let (c, h, w) = check_logits(logits, labels, "attention")?;
    if c != 2 {
        return Err(Error::invalid(format!(
            "attention logits need 2 channels, got {c}"
        )));
    }
    let norm = 4.0 / (h * w) as f64;
    softmax_ce(logits, 2, h * w, norm, |p| {
        ((labels.data[p] != BACKGROUND) as usize, 1.0)
    })
}

fn softmax_ce<T: Float>(
    logits: &Tensor<T>,
    c: usize,
    n: usize,
    norm: f64,
    target: impl Fn(usize) -> (usize, f64),
) -> Result<LossGrad<T>> {
    let x = logits.data();
    let mut grad = vec![T::ZERO; c * n];
    let mut total = 0.0;
    let mut probs = vec![0.0f64; c];
    for p in 0..n {
        let (y, wt) = target(p);
        let max = (0..c)
            .map(|k| x[k * n + p].to_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (k, pk) in probs.iter_mut().enumerate() {
            *pk = (x[k * n + p].to_f64() - max).exp();
            sum += *pk;
        }
        total += wt * (sum.ln() + max - x[y * n + p].to_f64());
        for (k, pk) in probs.iter().enumerate() {
            let d = pk / sum - if k == y { 1.0 } else { 0.0 };
            grad[k * n + p] = T::from_f64(norm * wt * d);
        }
    }
    Ok(LossGrad {
        loss: norm * total,
        grad: Tensor::from_vec(logits.shape(), grad)?,
    })
}

/// Loss terms of one image (or the mean over a batch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    #[serde(rename = "L_p")]
    pub l_p: f64,
    /// One term per attention stage, in stage order.
    #[serde(rename = "L_a")]
    pub l_a: Vec<f64>,
    #[serde(rename = "L_total")]
    pub total: f64,
}

impl LossReport {
    pub fn new(l_p: f64, l_a: Vec<f64>) -> Self {
        let total = l_p + ALPHA * l_a.iter().sum::<f64>();
        LossReport { l_p, l_a, total }
    }

    /// Component-wise mean.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let stages = reports.first().map_or(0, |r| r.l_a.len());
        let l_p = reports.iter().map(|r| r.l_p).sum::<f64>() / n;
        let l_a = (0..stages)
            .map(|s| reports.iter().map(|r| r.l_a[s]).sum::<f64>() / n)
            .collect();
        LossReport::new(l_p, l_a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, data: Vec<u8>) -> LabelMap {
        LabelMap {
            height: h,
            width: w,
            data,
        }
    }

    #[test]
    fn weights_balance_classes() {
        let mut data = vec![0u8; 64];
        data[..16].fill(5);
        let wts = pixel_weights(&map(8, 8, data));
        assert_eq!(wts[0], 3.0);
        assert_eq!(wts[63], 1.0);
        assert_eq!(wts[..16].iter().sum::<f64>(), 48.0);
        assert!(pixel_weights(&map(2, 2, vec![0; 4]))
            .iter()
            .all(|&w| w == 1.0));
        assert!(pixel_weights(&map(2, 2, vec![3; 4]))
            .iter()
            .all(|&w| w == 1.0));
        let half = pixel_weights(&map(2, 2, vec![0, 0, 1, 2]));
        assert_eq!(half, vec![1.0; 4]);
    }

    #[test]
    fn uniform_logits_closed_form() {
        let labels = map(2, 3, vec![0, 1, 2, 0, 0, 37]);
        let wts = pixel_weights(&labels);
        let logits = Tensor::<f64>::zeros(&[38, 2, 3]);
        let l = prediction_loss(&logits, &labels, &wts).unwrap();
        let expected = 4.0 / (4.0 * 6.0) * wts.iter().sum::<f64>() * 38f64.ln();
        assert!((l.loss - expected).abs() < 1e-12);

        let a = attention_loss(&Tensor::<f64>::zeros(&[2, 2, 3]), &labels).unwrap();
        assert!((a.loss - 4.0 / 6.0 * 6.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_give_zero_loss() {
        let labels = map(1, 2, vec![0, 4]);
        let mut logits = Tensor::<f64>::full(&[38, 1, 2], -50.0);
        logits.data_mut()[0] = 50.0;
        logits.data_mut()[4 * 2 + 1] = 50.0;
        let l = prediction_loss(&logits, &labels, &pixel_weights(&labels)).unwrap();
        assert!(l.loss < 1e-30);
    }

    #[test]
    fn rejects_bad_inputs() {
        let labels = map(1, 2, vec![0, 1]);
        let mut logits = Tensor::<f32>::zeros(&[38, 1, 2]);
        assert!(prediction_loss(&logits, &map(2, 2, vec![0; 4]), &[1.0; 4]).is_err());
        assert!(prediction_loss(&logits, &labels, &[1.0]).is_err());
        logits.data_mut()[3] = f32::NAN;
        assert!(matches!(
            prediction_loss(&logits, &labels, &[1.0; 2]),
            Err(Error::NonFinite(_))
        ));
        assert!(attention_loss(&Tensor::<f32>::zeros(&[3, 1, 2]), &labels).is_err());
    }

    #[test]
    fn report_is_additive() {
        let r = LossReport::new(0.5, vec![0.25, 0.125, 0.0625, 0.03125]);
        assert_eq!(r.total, 0.5 + 0.25 + 0.125 + 0.0625 + 0.03125);
        let m = LossReport::mean(&[r.clone(), LossReport::new(1.5, vec![0.75, 0.0, 0.0, 0.0])]);
        assert_eq!(m.l_p, 1.0);
        assert_eq!(m.l_a[0], 0.5);
    }
}
