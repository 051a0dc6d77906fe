//! Numeric kernels shared by the tape ops.

/// Strided matrix view: element `(i, j)` lives at `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> Mat<'a> {
    /// Row-major `rows x cols`.
    pub fn rm(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols);
        Self { data, rows, cols, rs: cols as isize, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        ((self.rows - 1) as isize * self.rs + (self.cols - 1) as isize * self.cs) as usize
    }
}

/// `c = a * b + beta * c`, with `c` row-major `a.rows x b.cols`.
pub(crate) fn gemm(a: Mat, b: Mat, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.max_offset() < a.data.len() && b.max_offset() < b.data.len());
    // SAFETY: the bounds of all three operands were checked above and the
    // output does not alias the inputs (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 1D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub t_in: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeom {
    pub fn t_out(&self) -> Option<usize> {
        let span = self.dilation * (self.k - 1) + 1;
        let padded = self.t_in + self.pad_left + self.pad_right;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    fn src(&self, to: usize, k: usize) -> Option<usize> {
        let p = (to * self.stride + k * self.dilation) as isize - self.pad_left as isize;
        (p >= 0 && (p as usize) < self.t_in).then_some(p as usize)
    }

    /// `cols[(ci * k + kk) * t_out + to] = x[ci, to * stride + kk * dilation - pad_left]`.
    pub fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let t_out = self.t_out().expect("valid geometry");
        for ci in 0..self.c_in {
            let xs = &x[ci * self.t_in..(ci + 1) * self.t_in];
            for kk in 0..self.k {
                let row = &mut cols[(ci * self.k + kk) * t_out..(ci * self.k + kk + 1) * t_out];
                for (to, slot) in row.iter_mut().enumerate() {
                    *slot = self.src(to, kk).map_or(0.0, |p| xs[p]);
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters-adds `cols` into `dx`.
    pub fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let t_out = self.t_out().expect("valid geometry");
        for ci in 0..self.c_in {
            let xs = &mut dx[ci * self.t_in..(ci + 1) * self.t_in];
            for kk in 0..self.k {
                let row = &cols[(ci * self.k + kk) * t_out..(ci * self.k + kk + 1) * t_out];
                for (to, v) in row.iter().enumerate() {
                    if let Some(p) = self.src(to, kk) {
                        xs[p] += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
