use serde::{Deserialize, Serialize};

use super::PreprocessError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub min: f64,
    pub max: f64,
}

/// Column-wise min/max learned from a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MinMaxBounds {
    pub bounds: Vec<Bound>,
}

impl MinMaxBounds {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, PreprocessError> {
        let first = rows.first().ok_or(PreprocessError::EmptyDataset)?.as_ref();
        let mut bounds: Vec<Bound> = first.iter().map(|&v| Bound { min: v, max: v }).collect();
        for row in rows {
            let row = row.as_ref();
            if row.len() != bounds.len() {
                return Err(PreprocessError::Arity {
                    expected: bounds.len(),
                    got: row.len(),
                });
            }
            for (b, &v) in bounds.iter_mut().zip(row) {
                b.min = b.min.min(v);
                b.max = b.max.max(v);
            }
        }
        Ok(MinMaxBounds { bounds })
    }

    pub fn width(&self) -> usize {
        self.bounds.len()
    }

    /// Maps each value onto `[0, 1]`. Values outside the fitted range are
    /// clipped and constant columns map to 0.
    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>, PreprocessError> {
        if row.len() != self.bounds.len() {
            return Err(PreprocessError::Arity {
                expected: self.bounds.len(),
                got: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(&self.bounds)
            .map(|(&x, b)| scale(x, b))
            .collect())
    }

    /// Bounds restricted to the given column indices, in that order.
    pub fn select(&self, columns: &[usize]) -> MinMaxBounds {
        MinMaxBounds {
            bounds: columns.iter().map(|&c| self.bounds[c]).collect(),
        }
    }
}

/// Relative span below which a column counts as constant. Features that
/// are constant in exact arithmetic can pick up rounding noise of a few ulps,
/// which plain min-max scaling would stretch to the full unit interval.
pub const CONSTANT_SPAN_TOLERANCE: f64 = 1e-9;

impl Bound {
    pub fn is_constant(&self) -> bool {
        let scale = self.min.abs().max(self.max.abs()).max(1.0);
        self.max - self.min <= CONSTANT_SPAN_TOLERANCE * scale
    }
}

fn scale(x: f64, b: &Bound) -> f64 {
    if b.is_constant() {
        return 0.0;
    }
    let span = b.max - b.min;
    ((x - b.min) / span).clamp(0.0, 1.0)
}

pub fn fit_minmax<R: AsRef<[f64]>>(rows: &[R]) -> Result<MinMaxBounds, PreprocessError> {
    MinMaxBounds::fit(rows)
}

pub fn apply_minmax(row: &[f64], bounds: &MinMaxBounds) -> Result<Vec<f64>, PreprocessError> {
    bounds.apply(row)
}
