//! Dense row-major matrices and the three product kernels the training
//! loops need. Layouts are chosen so every inner loop runs over contiguous
//! memory; nothing here allocates inside an iteration.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix. For a layer mapping `rows` inputs to `cols`
/// outputs, entry (i, o) sits at `data[i * cols + o]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn shape_matches(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// Dot product with four accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Forward product: `y[b][o] = sum_i x[b][i] * w[i][o] + bias[o]`.
/// `x` is batch-major `batch × w.rows`; `y` is overwritten, `batch × w.cols`.
pub fn affine_forward(x: &[f64], w: &Matrix, bias: &[f64], y: &mut [f64], batch: usize) {
    debug_assert_eq!(x.len(), batch * w.rows);
    debug_assert_eq!(y.len(), batch * w.cols);
    debug_assert_eq!(bias.len(), w.cols);
    for b in 0..batch {
        let yr = &mut y[b * w.cols..(b + 1) * w.cols];
        yr.copy_from_slice(bias);
        let xr = &x[b * w.rows..(b + 1) * w.rows];
        for i in 0..w.rows {
            let xi = xr[i];
            let wr = w.row(i);
            for o in 0..w.cols {
                yr[o] += xi * wr[o];
            }
        }
    }
}

/// Input gradient: `dx[b][i] = dot(dy[b], w.row(i))`.
pub fn grad_input(dy: &[f64], w: &Matrix, dx: &mut [f64], batch: usize) {
    debug_assert_eq!(dy.len(), batch * w.cols);
    debug_assert_eq!(dx.len(), batch * w.rows);
    for b in 0..batch {
        let dyr = &dy[b * w.cols..(b + 1) * w.cols];
        let dxr = &mut dx[b * w.rows..(b + 1) * w.rows];
        for i in 0..w.rows {
            dxr[i] = dot(dyr, w.row(i));
        }
    }
}

/// Weight and bias gradients, accumulated:
/// `dw[i][o] += x[b][i] * dy[b][o]`, `db[o] += dy[b][o]`.
pub fn grad_weights(x: &[f64], dy: &[f64], dw: &mut Matrix, db: &mut [f64], batch: usize) {
    debug_assert_eq!(x.len(), batch * dw.rows);
    debug_assert_eq!(dy.len(), batch * dw.cols);
    debug_assert_eq!(db.len(), dw.cols);
    let cols = dw.cols;
    for b in 0..batch {
        let xr = &x[b * dw.rows..(b + 1) * dw.rows];
        let dyr = &dy[b * cols..(b + 1) * cols];
        for o in 0..cols {
            db[o] += dyr[o];
        }
        for i in 0..dw.rows {
            let xi = xr[i];
            let dwr = dw.row_mut(i);
            for o in 0..cols {
                dwr[o] += xi * dyr[o];
            }
        }
    }
}
