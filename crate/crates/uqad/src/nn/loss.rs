use ndarray::Array2;

use crate::{Error, Result};

/// Row-wise softmax with max-subtraction for numerical stability.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean softmax cross-entropy against (possibly soft) target rows.
///
/// Returns the scalar loss and its gradient w.r.t. the logits,
/// `(softmax - target) / batch`. Target rows must sum to 1 within 1e-9.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != targets.dim() {
        return Err(Error::Dimension(format!(
            "logits {:?} vs targets {:?}",
            logits.dim(),
            targets.dim()
        )));
    }
    for (i, row) in targets.rows().into_iter().enumerate() {
        let s: f64 = row.sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "target row {i} sums to {s}, expected 1"
            )));
        }
        if row.iter().any(|&v| v < 0.0) {
            return Err(Error::Contract(format!("target row {i} has negative entry")));
        }
    }
    let batch = logits.nrows() as f64;
    let probs = softmax(logits);
    let mut loss = 0.0;
    for (prow, trow) in probs.rows().into_iter().zip(targets.rows()) {
        for (&p, &t) in prow.iter().zip(trow.iter()) {
            if t > 0.0 {
                loss -= t * p.max(1e-300).ln();
            }
        }
    }
    loss /= batch;
    let dlogits = (&probs - targets) / batch;
    Ok((loss, dlogits))
}
