//! Thin safe wrapper over `matrixmultiply::dgemm` for strided row-major views.

/// A strided 2-D view into a slice: element (i, j) lives at
/// `offset + i * row_stride + j * col_stride`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl View {
    pub fn row_major(offset: usize, cols: usize) -> Self {
        View { offset, row_stride: cols, col_stride: 1 }
    }

    /// The transpose of a row-major `rows x cols` block, seen as `cols x rows`.
    pub fn transposed(offset: usize, cols: usize) -> Self {
        View { offset, row_stride: 1, col_stride: cols }
    }

    fn last_index(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return self.offset;
        }
        self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// `c[m x n] (+)= a[m x k] . b[k x n]`; `c` is row-major at `c_off`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    av: View,
    b: &[f64],
    bv: View,
    c: &mut [f64],
    c_off: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(av.last_index(m, k) < a.len().max(1) || k == 0);
    assert!(bv.last_index(k, n) < b.len().max(1) || k == 0);
    assert!(c_off + m * n <= c.len());
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every element dgemm will touch.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(av.offset),
            av.row_stride as isize,
            av.col_stride as isize,
            b.as_ptr().add(bv.offset),
            bv.row_stride as isize,
            bv.col_stride as isize,
            beta,
            c.as_mut_ptr().add(c_off),
            n as isize,
            1,
        );
    }
}
