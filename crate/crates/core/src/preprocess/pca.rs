use serde::{Deserialize, Serialize};

use super::eigen::symmetric_eigen;
use super::PreprocessError;

/// Principal-component projection fitted on normalized telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Unit-norm principal axes, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Sample-covariance eigenvalues of the kept axes.
    pub eigenvalues: Vec<f64>,
    #[serde(rename = "evr")]
    pub explained_variance_ratio: Vec<f64>,
}

/// Fits a PCA by eigendecomposition of the sample covariance (divisor
/// `n - 1`). Each component is oriented so its largest-magnitude loading is
/// positive.
pub fn fit_pca<R: AsRef<[f64]>>(rows: &[R], n_components: usize) -> Result<PcaModel, PreprocessError> {
    let n = rows.len();
    if n < 3 || n <= n_components {
        return Err(PreprocessError::TooFewRows {
            rows: n,
            needed: (n_components + 1).max(3),
        });
    }
    let d = rows[0].as_ref().len();
    if n_components == 0 || n_components > d {
        return Err(PreprocessError::Arity {
            expected: d,
            got: n_components,
        });
    }

    let mut mean = vec![0.0; d];
    for row in rows {
        let row = row.as_ref();
        if row.len() != d {
            return Err(PreprocessError::Arity {
                expected: d,
                got: row.len(),
            });
        }
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut cov = vec![vec![0.0; d]; d];
    for row in rows {
        let c: Vec<f64> = row.as_ref().iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i][j] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }

    let eig = symmetric_eigen(&cov);
    // Tiny negative eigenvalues are rounding noise on a PSD matrix.
    let values: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();

    let mut components = Vec::with_capacity(n_components);
    let mut eigenvalues = Vec::with_capacity(n_components);
    let mut ratios = Vec::with_capacity(n_components);
    for i in 0..n_components {
        let mut axis = eig.vectors[i].clone();
        orient(&mut axis);
        components.push(axis);
        eigenvalues.push(values[i]);
        ratios.push(if total > 0.0 { values[i] / total } else { 0.0 });
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        explained_variance_ratio: ratios,
    })
}

fn orient(axis: &mut [f64]) {
    let mut best = 0;
    for (i, v) in axis.iter().enumerate() {
        if v.abs() > axis[best].abs() {
            best = i;
        }
    }
    if axis[best] < 0.0 {
        for v in axis.iter_mut() {
            *v = -*v;
        }
    }
}

impl PcaModel {
    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, row: &[f64]) -> Result<Vec<f64>, PreprocessError> {
        if row.len() != self.mean.len() {
            return Err(PreprocessError::Arity {
                expected: self.mean.len(),
                got: row.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|axis| {
                axis.iter()
                    .zip(row.iter().zip(&self.mean))
                    .map(|(a, (x, m))| a * (x - m))
                    .sum()
            })
            .collect())
    }
}

pub fn project(row: &[f64], model: &PcaModel) -> Result<Vec<f64>, PreprocessError> {
    model.project(row)
}
