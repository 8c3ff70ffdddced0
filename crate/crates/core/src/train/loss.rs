use super::TrainError;
use crate::scalar::Scalar;

/// Clamp applied to predictions before taking logs.
pub const BCE_EPS: f64 = 1e-12;

fn clamp_pred<T: Scalar>(p: T) -> T {
    p.max(T::lit(BCE_EPS)).min(T::one() - T::lit(BCE_EPS))
}

/// Per-example binary cross-entropy on a clamped prediction.
pub fn bce_term<T: Scalar>(pred: T, label: bool) -> T {
    let p = clamp_pred(pred);
    if label {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// Summed binary cross-entropy over a batch.
pub fn bce_loss<T: Scalar>(preds: &[T], labels: &[bool]) -> Result<T, TrainError> {
    if preds.len() != labels.len() {
        return Err(TrainError::LengthMismatch {
            scores: preds.len(),
            labels: labels.len(),
        });
    }
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce_term(p, y))
        .sum())
}

/// Mean binary cross-entropy; 0 for an empty batch.
pub fn bce_mean<T: Scalar>(preds: &[T], labels: &[bool]) -> Result<T, TrainError> {
    let sum = bce_loss(preds, labels)?;
    if preds.is_empty() {
        return Ok(T::zero());
    }
    Ok(sum / T::from_count(preds.len()))
}

/// Derivative of `bce_term(sigmoid(logit), label)` with respect to the logit,
/// given the network's (output-clamped) score. Zero where either clamp is
/// active.
pub fn bce_dlogit<T: Scalar>(score: T, label: bool) -> T {
    let lo = T::lit(BCE_EPS).max(T::epsilon());
    let hi = T::one() - lo;
    if score <= lo || score >= hi {
        return T::zero();
    }
    let y = if label { T::one() } else { T::zero() };
    score - y
}
