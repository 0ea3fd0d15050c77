//! Per-dimension min-max rescaling into [0, 1], fitted on a row subset.
//!
//! Conventions: constant dimensions map to 0, out-of-range inputs clamp.
//! Both keep every real feature inside the sigmoid output space of the
//! feature generator.

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxScaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

/// Fits per-dimension bounds over the given rows; every row must have `dim`
/// values. Errors on an empty subset.
pub fn fit_minmax<'a, I>(rows: I, dim: usize) -> Result<MinMaxScaler>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut mins = vec![f64::INFINITY; dim];
    let mut maxs = vec![f64::NEG_INFINITY; dim];
    let mut count = 0usize;
    for row in rows {
        assert_eq!(row.len(), dim, "fit_minmax: row with {} values, expected {dim}", row.len());
        for j in 0..dim {
            mins[j] = mins[j].min(row[j]);
            maxs[j] = maxs[j].max(row[j]);
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Validation("fit_minmax: empty fitting subset".into()));
    }
    Ok(MinMaxScaler { mins, maxs })
}

impl MinMaxScaler {
    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    /// Rescales one vector into [0, 1]; clamps values outside the fitted range.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "apply_minmax: input has {} values, scaler fitted on {}",
                x.len(),
                self.dim()
            )));
        }
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// Same as [`MinMaxScaler::apply`] into a preallocated buffer; panics on
    /// shape mismatch (hot path).
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim(), "apply_minmax: dimension mismatch");
        for j in 0..x.len() {
            let range = self.maxs[j] - self.mins[j];
            out[j] = if range > 0.0 {
                ((x[j] - self.mins[j]) / range).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
}
