//! Segmentation-head cross-entropy and the distillation cosine loss.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Mean cross-entropy of `logits = features . mu^T` over rows whose label is
/// not -1. Returns the loss and its gradients with respect to `features` and
/// `mu`.
pub fn head_ce_loss(
    features: ArrayView2<'_, f64>,
    mu: ArrayView2<'_, f64>,
    labels: &[i32],
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let k = mu.nrows();
    if features.ncols() != mu.ncols() || labels.len() != features.nrows() {
        return Err(Error::Shape(format!(
            "features {:?}, head {:?}, {} labels",
            features.dim(),
            mu.dim(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l < -1 || l >= k as i32) {
        return Err(Error::Data(format!("label {bad} outside [-1, {k})")));
    }
    let n_valid = labels.iter().filter(|&&l| l >= 0).count();
    if n_valid == 0 {
        return Err(Error::EmptyBatch("every label is ignored".into()));
    }
    let mut g = features.dot(&mu.t());
    let mut loss = 0.0;
    for (mut row, &l) in g.outer_iter_mut().zip(labels) {
        if l < 0 {
            row.fill(0.0);
            continue;
        }
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        loss += max + sum.ln() - row[l as usize];
        row.mapv_inplace(|v| (v - max).exp() / sum);
        row[l as usize] -= 1.0;
    }
    let inv = 1.0 / n_valid as f64;
    g *= inv;
    let grad_features = g.dot(&mu);
    let grad_mu = g.t().dot(&features);
    Ok((loss * inv, grad_features, grad_mu))
}

/// Mean over rows of `1 - cos(feature, target)` and its gradient with respect
/// to `features`.
pub fn distill_warmup_loss(features: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    if features.dim() != targets.dim() {
        return Err(Error::Shape(format!("features {:?} vs targets {:?}", features.dim(), targets.dim())));
    }
    let n = features.nrows();
    if n == 0 {
        return Err(Error::EmptyBatch("no rows to distill".into()));
    }
    let mut grad = Array2::zeros(features.dim());
    let mut loss = 0.0;
    for (r, ((f, t), mut g)) in features.outer_iter().zip(targets.outer_iter()).zip(grad.outer_iter_mut()).enumerate() {
        let tn = t.dot(&t).sqrt();
        if !(tn > 0.0) {
            return Err(Error::Data(format!("distillation target row {r} has zero norm")));
        }
        let fnorm = f.dot(&f).sqrt();
        if !(fnorm > 0.0) {
            return Err(Error::Normalization { row: r });
        }
        let cos = f.dot(&t) / (fnorm * tn);
        loss += 1.0 - cos;
        // d cos / d f = t / (|f||t|) - cos f / |f|^2
        g.assign(&(&f * (cos / (fnorm * fnorm)) - &t / (fnorm * tn)));
    }
    let inv = 1.0 / n as f64;
    grad *= inv;
    Ok((loss * inv, grad))
}
