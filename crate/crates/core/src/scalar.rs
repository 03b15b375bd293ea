//! Floating point scalar abstraction shared by the tensor engine, the
//! transformer and the optimizers.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable by the tensor engine: `f32` or `f64`.
///
/// Besides the usual arithmetic bounds, each scalar provides a dense
/// matrix product kernel so the hot loop can dispatch to a tuned GEMM.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    /// Width in bytes of the little-endian encoding.
    const BYTES: usize;

    /// `c = a * b + (accumulate ? c : 0)` for row/column strided operands.
    ///
    /// `a` is `m x k` with strides `sa`, `b` is `k x n` with strides `sb`,
    /// `c` is a contiguous row-major `m x n` block.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        sa: (isize, isize),
        b: &[Self],
        sb: (isize, isize),
        c: &mut [Self],
        accumulate: bool,
    );

    /// Converts from `f64`, panicking only on values the type cannot hold
    /// (never for finite inputs).
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 is representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

fn check_gemm_bounds<T>(m: usize, k: usize, n: usize, a: &[T], sa: (isize, isize), b: &[T], sb: (isize, isize), c: &[T]) {
    let extent = |rows: usize, cols: usize, s: (isize, isize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * s.0 as usize + (cols - 1) * s.1 as usize + 1
        }
    };
    assert!(extent(m, k, sa) <= a.len(), "gemm: lhs out of bounds");
    assert!(extent(k, n, sb) <= b.len(), "gemm: rhs out of bounds");
    assert!(m * n <= c.len(), "gemm: output out of bounds");
    assert!(sa.0 >= 0 && sa.1 >= 0 && sb.0 >= 0 && sb.1 >= 0);
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        sa: (isize, isize),
        b: &[f64],
        sb: (isize, isize),
        c: &mut [f64],
        accumulate: bool,
    ) {
        check_gemm_bounds(m, k, n, a, sa, b, sb, c);
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: extents were checked against the slice lengths above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa.0,
                sa.1,
                b.as_ptr(),
                sb.0,
                sb.1,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(buf)
    }
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        sa: (isize, isize),
        b: &[f32],
        sb: (isize, isize),
        c: &mut [f32],
        accumulate: bool,
    ) {
        check_gemm_bounds(m, k, n, a, sa, b, sb, c);
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: extents were checked against the slice lengths above.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa.0,
                sa.1,
                b.as_ptr(),
                sb.0,
                sb.1,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 4];
        buf.copy_from_slice(&bytes[..4]);
        f32::from_le_bytes(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gemm_generic<S: Scalar>() {
        // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
        let a: Vec<S> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| S::of(v)).collect();
        let b: Vec<S> = [5.0, 6.0, 7.0, 8.0].iter().map(|&v| S::of(v)).collect();
        let mut c = vec![S::zero(); 4];
        S::gemm(2, 2, 2, &a, (2, 1), &b, (2, 1), &mut c, false);
        let want: Vec<S> = [19.0, 22.0, 43.0, 50.0].iter().map(|&v| S::of(v)).collect();
        assert_eq!(c, want);
        // transposed rhs: a * b^T = [[17,23],[39,53]]
        S::gemm(2, 2, 2, &a, (2, 1), &b, (1, 2), &mut c, false);
        let want: Vec<S> = [17.0, 23.0, 39.0, 53.0].iter().map(|&v| S::of(v)).collect();
        assert_eq!(c, want);
    }

    #[test]
    fn gemm_both_widths() {
        gemm_generic::<f32>();
        gemm_generic::<f64>();
    }

    #[test]
    fn le_round_trip() {
        let mut buf = Vec::new();
        (-1.25f64).write_le(&mut buf);
        0.5f32.write_le(&mut buf);
        assert_eq!(f64::read_le(&buf[..8]), -1.25);
        assert_eq!(f32::read_le(&buf[8..]), 0.5);
    }
}
