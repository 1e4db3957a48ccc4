//! Small dense and coordinate-list matrices; enough for the bundled problems.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out = A x`.
    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = dot(self.row(i), x);
        }
    }
}

/// Coordinate-list sparse matrix; duplicate entries are summed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CooMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: Vec::new() }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.rows && j < self.cols, "entry ({i}, {j}) out of bounds");
        self.entries.push((i, j, v));
    }

    /// `out = A x`.
    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(i, j, v) in &self.entries {
            out[i] += v * x[j];
        }
    }

    /// `out += A^T v`.
    pub fn mul_t_add(&self, v: &[f64], out: &mut [f64]) {
        for &(i, j, a) in &self.entries {
            out[j] += a * v[i];
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            entries: self.entries.iter().map(|&(i, j, v)| (j, i, v)).collect(),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for &(i, j, v) in &self.entries {
            d.data[i * self.cols + j] += v;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coo_products_agree_with_dense() {
        let mut a = CooMatrix::new(2, 3);
        a.push(0, 0, 1.0);
        a.push(0, 2, 2.0);
        a.push(1, 1, -1.0);
        a.push(1, 1, 4.0);
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 2];
        a.mul(&x, &mut y);
        assert_eq!(y, [7.0, 6.0]);
        let mut yd = [0.0; 2];
        a.to_dense().mul(&x, &mut yd);
        assert_eq!(y, yd);
        let mut z = [0.0; 3];
        a.mul_t_add(&[1.0, 1.0], &mut z);
        assert_eq!(z, [1.0, 3.0, 2.0]);
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn norms() {
        assert_eq!(norm2(&[3.0, 4.0]), 5.0);
        assert_eq!(norm_inf(&[3.0, -4.0]), 4.0);
    }
}
