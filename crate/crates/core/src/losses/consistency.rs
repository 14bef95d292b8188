use ndarray::Array2;

use super::{CorrespondenceSet, EmbeddingBatch, RegularizerOutput};
use crate::error::{Error, Result};

/// `(1/|P|) Σ_(i,j)∈P ‖teacher_j − student_i‖²`, gradient on the student side.
pub fn consistency_loss(teacher: &EmbeddingBatch, student: &EmbeddingBatch, pairs: &CorrespondenceSet) -> Result<RegularizerOutput> {
    if teacher.dim() != student.dim() {
        return Err(Error::ShapeMismatch(format!(
            "teacher dim {} vs student dim {}",
            teacher.dim(),
            student.dim()
        )));
    }
    pairs.check_bounds(student.len(), teacher.len())?;
    let mut grad = Array2::zeros(student.values().raw_dim());
    if pairs.is_empty() {
        return Ok(RegularizerOutput { value: 0.0, grad, empty: true });
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for &(i, j) in pairs.pairs() {
        let diff = &student.values().row(i) - &teacher.values().row(j);
        total += diff.dot(&diff);
        grad.row_mut(i).scaled_add(2.0 * scale, &diff);
    }
    Ok(RegularizerOutput { value: total * scale, grad, empty: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use ndarray::array;

    #[test]
    fn single_pair_expansion() {
        let t = EmbeddingBatch::new(array![[1.0, 1.0, 1.0]], vec![Vec3::zeros()]).unwrap();
        let s = EmbeddingBatch::new(array![[3.0, 1.0, 1.0]], vec![Vec3::zeros()]).unwrap();
        let out = consistency_loss(&t, &s, &CorrespondenceSet::new(vec![(0, 0)]).unwrap()).unwrap();
        assert_eq!(out.value, 4.0);
        assert_eq!(out.grad, array![[4.0, 0.0, 0.0]]);
    }

    #[test]
    fn identity_correspondence_of_equal_batches() {
        let v = array![[0.1, 0.2], [0.3, -0.4]];
        let e = EmbeddingBatch::new(v, vec![Vec3::zeros(); 2]).unwrap();
        let out = consistency_loss(&e, &e, &CorrespondenceSet::new(vec![(0, 0), (1, 1)]).unwrap()).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn empty_pairs_flagged() {
        let e = EmbeddingBatch::new(array![[0.1, 0.2]], vec![Vec3::zeros()]).unwrap();
        let out = consistency_loss(&e, &e, &CorrespondenceSet::default()).unwrap();
        assert!(out.empty);
    }
}
