use serde::{Deserialize, Serialize};

/// Row-major dense matrix of `f64`. Vectors are stored as `n x 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn zeros_like(&self) -> Self {
        Matrix::zeros(self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self * x`
    pub fn mul_vec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += self^T * y`
    pub fn mul_t_vec_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yr, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yr != 0.0 {
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += yr * w;
                }
            }
        }
    }

    /// `self += a * b^T`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (&ar, row) in a.iter().zip(self.data.chunks_exact_mut(b.len())) {
            if ar != 0.0 {
                for (w, &bc) in row.iter_mut().zip(b) {
                    *w += ar * bc;
                }
            }
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable; summation order is fixed
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for (j, s) in acc.iter_mut().enumerate() {
            *s += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_naive() {
        let m = Matrix::from_fn(3, 5, |r, c| (r * 5 + c) as f64 * 0.5 - 3.0);
        let x = [1.0, -2.0, 0.5, 3.0, 0.25];
        let mut y = vec![0.0; 3];
        m.mul_vec_acc(&x, &mut y);
        for r in 0..3 {
            let naive: f64 = (0..5).map(|c| m.data[r * 5 + c] * x[c]).sum();
            assert!((y[r] - naive).abs() < 1e-12);
        }
        let v = [1.0, 2.0, -1.0];
        let mut t = vec![0.0; 5];
        m.mul_t_vec_acc(&v, &mut t);
        for c in 0..5 {
            let naive: f64 = (0..3).map(|r| m.data[r * 5 + c] * v[r]).sum();
            assert!((t[c] - naive).abs() < 1e-12);
        }
        let mut o = Matrix::zeros(3, 5);
        o.add_outer(&v, &x);
        assert_eq!(o.data[5 + 1], 2.0 * -2.0);
    }
}
