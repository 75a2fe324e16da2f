use super::PreprocessError;

/// Default collinearity cut-off for the correlation filter.
pub const CORRELATION_THRESHOLD: f64 = 0.9;

/// Pairwise Pearson correlation of the columns of `rows`. A column with zero
/// variance has correlation 0 with every other column.
pub fn pearson_matrix<R: AsRef<[f64]>>(rows: &[R]) -> Result<Vec<Vec<f64>>, PreprocessError> {
    let first = rows.first().ok_or(PreprocessError::EmptyDataset)?;
    let d = first.as_ref().len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for row in rows {
        let row = row.as_ref();
        if row.len() != d {
            return Err(PreprocessError::Arity {
                expected: d,
                got: row.len(),
            });
        }
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cross = vec![vec![0.0; d]; d];
    for row in rows {
        let c: Vec<f64> = row.as_ref().iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            for j in i..d {
                cross[i][j] += c[i] * c[j];
            }
        }
    }
    let mut r = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let denom = (cross[i][i] * cross[j][j]).sqrt();
            let v = if i == j {
                1.0
            } else if denom > 0.0 {
                (cross[i][j] / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            r[i][j] = v;
            r[j][i] = v;
        }
    }
    Ok(r)
}

/// Column indices surviving the collinearity filter. Columns are scanned in
/// order; a column is dropped when its absolute correlation with any
/// already-kept column exceeds `threshold`.
pub fn fit_correlation_filter<R: AsRef<[f64]>>(
    rows: &[R],
    threshold: f64,
) -> Result<Vec<usize>, PreprocessError> {
    let r = pearson_matrix(rows)?;
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..r.len() {
        if kept.iter().all(|&i| r[i][j].abs() <= threshold) {
            kept.push(j);
        }
    }
    Ok(kept)
}
