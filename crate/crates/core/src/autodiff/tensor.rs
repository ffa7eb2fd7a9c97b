use super::AutodiffError;

/// Dense row-major `f64` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_shape_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::ShapeMismatch {
                context: "tensor construction",
                expected: shape,
                found: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// A rank-0 tensor.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, AutodiffError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(AutodiffError::ShapeMismatch {
                context: "reshape",
                expected: shape.to_vec(),
                found: self.shape,
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Borrowed strided view of a matrix.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatView<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    pub fn transposed_if(self, flag: bool) -> Self {
        if flag {
            self.t()
        } else {
            self
        }
    }
}

/// `out = beta * out + a · b`, with `out` row-major `a.rows × b.cols`.
pub(crate) fn gemm(a: MatView<'_>, b: MatView<'_>, out: &mut [f64], beta: f64) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let max_a = (m - 1) * a.row_stride + (k - 1) * a.col_stride;
    let max_b = (k - 1) * b.row_stride + (n - 1) * b.col_stride;
    assert!(
        max_a < a.data.len() && max_b < b.data.len(),
        "gemm view out of bounds"
    );
    // SAFETY: every address touched is bounded by the asserts above, and
    // `out` is an exclusive slice of exactly m*n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_loop_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect();
        // a is 2x3, b is 4x3 used transposed -> 2x4
        let mut out = vec![0.0; 8];
        gemm(
            MatView::row_major(&a, 2, 3),
            MatView::row_major(&b, 4, 3).t(),
            &mut out,
            0.0,
        );
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[j * 3 + k]).sum();
                assert!((out[i * 4 + j] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn construction_checks_element_count() {
        assert!(Tensor::from_shape_vec(vec![2, 2], vec![1.0; 3]).is_err());
        assert_eq!(Tensor::scalar(3.0).item(), 3.0);
    }
}
