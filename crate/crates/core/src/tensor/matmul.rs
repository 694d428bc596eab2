//! Batched matrix product.

use super::{numel, Result, Tensor, TensorError};

/// Strided view of a matrix inside a flat buffer.
#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> Mat<'a> {
    fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Mat {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    fn t(self) -> Self {
        Mat {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `out += a · b` with `out` row-major and contiguous.
fn gemm_acc(a: Mat, b: Mat, out: &mut [f64]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    debug_assert_eq!(k, b.rows);
    debug_assert_eq!(out.len(), m * n);
    if m * k * n <= 4096 {
        for i in 0..m {
            for p in 0..k {
                let av = a.data[i * a.rs + p * a.cs];
                if av == 0.0 {
                    continue;
                }
                let row = &mut out[i * n..(i + 1) * n];
                for (j, o) in row.iter_mut().enumerate() {
                    *o += av * b.data[p * b.rs + j * b.cs];
                }
            }
        }
        return;
    }
    // SAFETY: the strided views stay inside their slices (checked by the
    // shape logic of the callers) and `out` holds m*n contiguous elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy)]
enum Batching {
    /// `b` is a single matrix shared by every leading index of `a`.
    SharedRhs,
    /// `a` is a single matrix shared by every leading index of `b`.
    SharedLhs,
    /// identical leading extents
    Paired,
}

impl Tensor {
    /// Matrix product over the last two axes, batched over leading axes.
    ///
    /// Leading axes must either match exactly or one operand must be a plain
    /// matrix, which is then reused for every batch entry.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        };
        if self.rank() < 2 || other.rank() < 2 {
            return Err(mismatch());
        }
        let (ra, rb) = (self.rank(), other.rank());
        let (m, k) = (self.shape()[ra - 2], self.shape()[ra - 1]);
        let (k2, n) = (other.shape()[rb - 2], other.shape()[rb - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let batch_a = &self.shape()[..ra - 2];
        let batch_b = &other.shape()[..rb - 2];
        let (mode, batch) = if batch_b.is_empty() {
            (Batching::SharedRhs, batch_a.to_vec())
        } else if batch_a.is_empty() {
            (Batching::SharedLhs, batch_b.to_vec())
        } else if batch_a == batch_b {
            (Batching::Paired, batch_a.to_vec())
        } else {
            return Err(mismatch());
        };
        let nb = numel(&batch);
        let mut shape = batch.clone();
        shape.extend([m, n]);

        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; nb * m * n];
        match mode {
            Batching::SharedRhs => gemm_acc(Mat::row_major(a, nb * m, k), Mat::row_major(b, k, n), &mut out),
            Batching::SharedLhs | Batching::Paired => {
                for i in 0..nb {
                    let am = match mode {
                        Batching::SharedLhs => &a[..m * k],
                        _ => &a[i * m * k..(i + 1) * m * k],
                    };
                    gemm_acc(
                        Mat::row_major(am, m, k),
                        Mat::row_major(&b[i * k * n..(i + 1) * k * n], k, n),
                        &mut out[i * m * n..(i + 1) * m * n],
                    );
                }
            }
        }

        let (ta, tb) = (self.clone(), other.clone());
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(
            "matmul",
            shape,
            out,
            vec![self.clone(), other.clone()],
            move |g| {
                let a = ta.data();
                let b = tb.data();
                let mut ga = need_a.then(|| vec![0.0; a.len()]);
                let mut gb = need_b.then(|| vec![0.0; b.len()]);
                match mode {
                    Batching::SharedRhs => {
                        let gm = Mat::row_major(g, nb * m, n);
                        if let Some(ga) = ga.as_mut() {
                            gemm_acc(gm, Mat::row_major(b, k, n).t(), ga);
                        }
                        if let Some(gb) = gb.as_mut() {
                            gemm_acc(Mat::row_major(a, nb * m, k).t(), gm, gb);
                        }
                    }
                    Batching::SharedLhs | Batching::Paired => {
                        let shared = matches!(mode, Batching::SharedLhs);
                        for i in 0..nb {
                            let a_range = if shared { 0..m * k } else { i * m * k..(i + 1) * m * k };
                            let b_range = i * k * n..(i + 1) * k * n;
                            let gm = Mat::row_major(&g[i * m * n..(i + 1) * m * n], m, n);
                            if let Some(ga) = ga.as_mut() {
                                gemm_acc(
                                    gm,
                                    Mat::row_major(&b[b_range.clone()], k, n).t(),
                                    &mut ga[a_range.clone()],
                                );
                            }
                            if let Some(gb) = gb.as_mut() {
                                gemm_acc(Mat::row_major(&a[a_range], m, k).t(), gm, &mut gb[b_range]);
                            }
                        }
                    }
                }
                vec![ga, gb]
            },
        ))
    }
}
