use super::ModelParams;
use crate::error::{Error, Result};

/// EMA teacher: mirrored parameters and the momentum last applied.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherState {
    pub params: ModelParams,
    pub momentum: f64,
}

impl TeacherState {
    pub fn from_student(student: &ModelParams, momentum: f64) -> Self {
        Self { params: student.clone(), momentum }
    }
}

/// `teacher ← m · teacher + (1 − m) · student` for every tensor, then the
/// prototype columns are re-normalized.
pub fn ema_update(teacher: &TeacherState, student: &ModelParams, m: f64) -> Result<TeacherState> {
    let params = ema_blend(&teacher.params, student, m)?;
    if m == 1.0 {
        return Ok(TeacherState { params, momentum: m });
    }
    let mut out = TeacherState { params, momentum: m };
    out.params.head.normalize_columns()?;
    Ok(out)
}

/// The blend before prototype normalization.
pub(crate) fn ema_blend(teacher: &ModelParams, student: &ModelParams, m: f64) -> Result<ModelParams> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidInput(format!("EMA momentum {m} outside [0, 1]")));
    }
    if !teacher.same_shape(student) {
        return Err(Error::ShapeMismatch("teacher and student shapes differ".into()));
    }
    let mut out = teacher.clone();
    for (t, s) in out.tensors_mut().into_iter().zip(student.tensors()) {
        for (a, b) in t.iter_mut().zip(s) {
            *a = m * *a + (1.0 - m) * b;
        }
    }
    Ok(out)
}
