//! Student softmax distributions and teacher Sinkhorn-Knopp assignments over
//! prototypes.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{invalid, Error, Result};

/// `B × K` prototype logits with the temperature they are divided by.
///
/// Entries may be `-inf` (a prototype excluded for that point) but never NaN
/// or `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsBatch {
    values: Array2<f64>,
    temperature: f64,
}

impl LogitsBatch {
    pub fn new(values: Array2<f64>, temperature: f64) -> Result<Self> {
        if values.ncols() < 2 {
            return Err(invalid(format!("need at least 2 prototypes, got {}", values.ncols())));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(invalid(format!("temperature must be positive, got {temperature}")));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite("logits contain NaN or +inf".into()));
        }
        Ok(Self { values, temperature })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Logits of the selected rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> LogitsBatch {
        LogitsBatch { values: self.values.select(Axis(0), rows), temperature: self.temperature }
    }
}

/// Non-negative `B × K` matrix whose rows sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    values: Array2<f64>,
}

impl AssignmentMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("assignment entries must be finite and non-negative"));
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(invalid(format!("assignment row {i} sums to {s}")));
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> AssignmentMatrix {
        AssignmentMatrix { values: self.values.select(Axis(0), rows) }
    }

    /// Stacks assignment matrices with equal column counts.
    pub fn concat(parts: &[&AssignmentMatrix]) -> Result<AssignmentMatrix> {
        let views: Vec<_> = parts.iter().map(|p| p.values.view()).collect();
        let values = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::ShapeMismatch(format!("concatenating assignments: {e}")))?;
        Ok(AssignmentMatrix { values })
    }
}

/// `exp(x/τ − max)` for one row; errors when every entry is `-inf`.
fn stabilized_exp(row: ArrayView1<f64>, temperature: f64, index: usize) -> Result<Array1<f64>> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
    if max == f64::NEG_INFINITY {
        return Err(invalid(format!("row {index} has no finite logit")));
    }
    Ok(row.mapv(|v| (v / temperature - max).exp()))
}

fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let s: f64 = row.sum();
        row /= s;
    }
}

/// Row-wise `softmax(values / τ)`, stabilized by the row maximum.
pub fn softmax_rows(logits: &LogitsBatch) -> Result<AssignmentMatrix> {
    let mut m = Array2::zeros(logits.values.raw_dim());
    for (i, row) in logits.values.rows().into_iter().enumerate() {
        m.row_mut(i).assign(&stabilized_exp(row, logits.temperature, i)?);
    }
    normalize_rows(&mut m);
    Ok(AssignmentMatrix { values: m })
}

/// Column sums recorded after every column-scaling step.
#[derive(Debug, Clone, Default)]
pub struct SinkhornTrace {
    pub column_sums: Vec<Array1<f64>>,
}

/// Sinkhorn-Knopp with uniform prototype marginals.
///
/// Starting from `exp(values/τ − rowmax)`, each iteration rescales columns to
/// sum `B/K` and then rows to sum 1, so the result is an exact per-point
/// distribution. A single row has no column constraint to balance against
/// and reduces to the softmax.
pub fn sinkhorn_normalize(logits: &LogitsBatch, iterations: usize) -> Result<AssignmentMatrix> {
    sinkhorn_traced(logits, iterations).map(|(a, _)| a)
}

pub fn sinkhorn_traced(logits: &LogitsBatch, iterations: usize) -> Result<(AssignmentMatrix, SinkhornTrace)> {
    if iterations == 0 {
        return Err(invalid("Sinkhorn needs at least one iteration"));
    }
    let (b, k) = logits.values.dim();
    if b == 0 {
        return Err(invalid("Sinkhorn on an empty batch"));
    }
    let mut m = Array2::zeros((b, k));
    for (i, row) in logits.values.rows().into_iter().enumerate() {
        m.row_mut(i).assign(&stabilized_exp(row, logits.temperature, i)?);
    }
    let mut trace = SinkhornTrace::default();
    if b > 1 {
        let target = b as f64 / k as f64;
        for _ in 0..iterations {
            for mut col in m.columns_mut() {
                let s: f64 = col.sum();
                // an all-excluded prototype cannot receive mass
                if s > 0.0 {
                    col *= target / s;
                }
            }
            trace.column_sums.push(m.sum_axis(Axis(0)));
            normalize_rows(&mut m);
        }
    } else {
        normalize_rows(&mut m);
    }
    Ok((AssignmentMatrix { values: m }, trace))
}
