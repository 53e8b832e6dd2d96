//! Small dense row-major matrices.
//!
//! Agent counts are small (tens, not thousands), so everything here is a
//! plain `Vec<f64>` with explicit loops. No BLAS, no sparsity.

/// Dense `rows x cols` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut m = Matrix::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_assign_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scale(&self, k: f64) -> Matrix {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= k;
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[i] += self.get(i, j);
            }
        }
        out
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j] += self.get(i, j);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Entrywise maximum of two same-shape matrices.
    pub fn entrywise_max(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        let mut out = self.clone();
        for (a, &b) in out.data.iter_mut().zip(other.data.iter()) {
            *a = a.max(b);
        }
        out
    }
}

/// Log-determinant of a symmetric positive-definite matrix via Cholesky.
///
/// `m` is read as the full symmetric matrix; only the lower triangle is
/// touched. Returns `None` when a pivot is non-positive (matrix not PD).
pub fn cholesky_logdet(m: &Matrix) -> Option<f64> {
    let n = m.rows();
    assert_eq!(n, m.cols());
    let mut l = vec![0.0f64; n * n];
    let mut logdet = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                let d = s.sqrt();
                l[i * n + i] = d;
                logdet += d.ln();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(2.0 * logdet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn row_and_col_sums() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(m.row_sums(), vec![3.0, 7.0]);
        assert_eq!(m.col_sums(), vec![4.0, 6.0]);
    }

    #[test]
    fn cholesky_logdet_diagonal() {
        let m = Matrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 9.0]]);
        let ld = cholesky_logdet(&m).unwrap();
        assert_relative_eq!(ld, (36.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn cholesky_logdet_correlated() {
        // det [[1, r], [r, 1]] = 1 - r^2
        let r = 0.9;
        let m = Matrix::from_rows(&[vec![1.0, r], vec![r, 1.0]]);
        let ld = cholesky_logdet(&m).unwrap();
        assert_relative_eq!(ld, (1.0 - r * r).ln(), epsilon = 1e-12);
    }

    #[test]
    fn cholesky_rejects_non_pd() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(cholesky_logdet(&m).is_none());
    }
}
