use crate::error::{Error, Result};

/// Row-major `n x p` observation matrix. The row-major buffer is exactly the
/// vectorization `x[i * p + j] = X[i][j]` used by the difference operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument(format!(
                "data matrix must be non-empty, got {n} x {p}"
            )));
        }
        if values.len() != n * p {
            return Err(Error::DimensionMismatch {
                context: "DataMatrix::new",
                expected: n * p,
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at row {}, column {}",
                pos / p,
                pos % p
            )));
        }
        Ok(Self { n, p, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::InvalidArgument(format!(
                "row {i} has {} columns, expected {p}",
                r.len()
            )));
        }
        Self::new(n, p, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    /// The vectorization `x`.
    pub fn as_vec(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn column_means(&self) -> Vec<f64> {
        column_means(&self.values, self.n, self.p)
    }
}

pub(crate) fn column_means(x: &[f64], n: usize, p: usize) -> Vec<f64> {
    let mut mean = vec![0.0; p];
    for row in x.chunks_exact(p) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    mean
}

/// Scale used for relative tolerances: largest absolute deviation of `x` from
/// its column means, floored so that constant data still yields a positive scale.
pub fn data_scale(x: &[f64], n: usize, p: usize) -> f64 {
    let mean = column_means(x, n, p);
    let dev = x
        .chunks_exact(p)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| (v - m).abs()))
        .fold(0.0_f64, f64::max);
    let mag = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    dev.max(1e-12 * mag).max(f64::MIN_POSITIVE)
}
