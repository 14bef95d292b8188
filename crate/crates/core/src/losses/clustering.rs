use ndarray::Array2;

use crate::error::{Error, Result};
use crate::sinkhorn::{softmax_rows, AssignmentMatrix, LogitsBatch};

/// `−(1/B) Σ_i Σ_k q_ik log p_ik` with `p = softmax(logits/τ)`.
///
/// Returns the loss and its gradient with respect to the raw logits,
/// `(p − q) / (B τ)`. The targets `q` are constants.
pub fn clustering_ce(q_teacher: &AssignmentMatrix, student: &LogitsBatch) -> Result<(f64, Array2<f64>)> {
    if q_teacher.values().dim() != student.values().dim() {
        return Err(Error::ShapeMismatch(format!(
            "targets {:?} vs logits {:?}",
            q_teacher.values().dim(),
            student.values().dim()
        )));
    }
    let b = student.nrows();
    if b == 0 {
        return Ok((0.0, Array2::zeros(student.values().raw_dim())));
    }
    let tau = student.temperature();
    let p = softmax_rows(student)?;
    let q = q_teacher.values();
    let mut loss = 0.0;
    for (i, row) in student.values().rows().into_iter().enumerate() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / tau));
        let lse = max + row.iter().map(|&v| (v / tau - max).exp()).sum::<f64>().ln();
        for (k, &z) in row.iter().enumerate() {
            let qk = q[[i, k]];
            if qk > 0.0 {
                loss -= qk * (z / tau - lse);
            }
        }
    }
    let grad = (p.values() - q) / (b as f64 * tau);
    Ok((loss / b as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn one_hot_against_uniform_is_ln_k() {
        let mut q = Array2::zeros((1, 10));
        q[[0, 3]] = 1.0;
        let q = AssignmentMatrix::new(q).unwrap();
        let (loss, _) = clustering_ce(&q, &LogitsBatch::new(Array2::zeros((1, 10)), 0.1).unwrap()).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn minimum_at_matching_distribution() {
        let logits = LogitsBatch::new(ndarray::array![[0.2, -0.1, 0.5], [1.0, 0.0, -1.0]], 0.1).unwrap();
        let q = softmax_rows(&logits).unwrap();
        let (loss, grad) = clustering_ce(&q, &logits).unwrap();
        let entropy: f64 = -q.values().iter().map(|p| p * p.ln()).sum::<f64>() / 2.0;
        assert!((loss - entropy).abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch() {
        let q = AssignmentMatrix::new(Array2::from_elem((2, 2), 0.5)).unwrap();
        let l = LogitsBatch::new(Array2::zeros((2, 3)), 1.0).unwrap();
        assert!(matches!(clustering_ce(&q, &l), Err(Error::ShapeMismatch(_))));
    }
}
