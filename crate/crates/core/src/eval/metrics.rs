use crate::error::{Error, Result};

/// Per-class recall for the classes in `label_space`, in that order.
pub fn per_class_accuracy(preds: &[usize], labels: &[usize], label_space: &[usize]) -> Result<Vec<f64>> {
    if preds.len() != labels.len() {
        return Err(Error::Parameter(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let k = label_space.iter().chain(labels).copied().max().map_or(0, |m| m + 1);
    let mut correct = vec![0usize; k];
    let mut total = vec![0usize; k];
    for (&p, &y) in preds.iter().zip(labels) {
        total[y] += 1;
        if p == y {
            correct[y] += 1;
        }
    }
    label_space
        .iter()
        .map(|&c| {
            if total[c] == 0 {
                Err(Error::Protocol(format!("class {c} has no test samples")))
            } else {
                Ok(correct[c] as f64 / total[c] as f64)
            }
        })
        .collect()
}

/// Unweighted mean over classes of per-class recall.
pub fn mean_class_accuracy(preds: &[usize], labels: &[usize], label_space: &[usize]) -> Result<f64> {
    if label_space.is_empty() {
        return Err(Error::Protocol("empty label space".into()));
    }
    let acc = per_class_accuracy(preds, labels, label_space)?;
    Ok(acc.iter().sum::<f64>() / acc.len() as f64)
}

/// `2·b·n / (b + n)`, zero when either side is zero.
pub fn harmonic_mean(base: f64, new: f64) -> f64 {
    if base <= 0.0 || new <= 0.0 {
        0.0
    } else {
        2.0 * base * new / (base + new)
    }
}
