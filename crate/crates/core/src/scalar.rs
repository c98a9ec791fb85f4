//! Element types for tensors and model parameters.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type used by every tensor, layer and model.
///
/// Implemented for `f32` (training default) and `f64` (gradient checks and
/// reference computations). Matrix products dispatch to the packed kernels in
/// `matrixmultiply`, which are deterministic for a fixed input.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Short dtype tag written into checkpoints.
    const DTYPE: &'static str;

    /// `c ← alpha · op(a) · op(b) + beta · c` with row-major storage.
    ///
    /// `op(a)` is `m × k`; when `trans_a` is set, `a` is stored as `k × m`.
    /// `op(b)` is `k × n`; when `trans_b` is set, `b` is stored as `n × k`.
    /// `c` is `m × n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );

    /// Converts an `f64` literal; every finite `f64` is representable (possibly rounded).
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal converts to scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn strides(trans: bool, rows: usize, cols: usize) -> (isize, isize) {
    // (row stride, column stride) of the logical rows × cols operand
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $tag:literal, $kernel:path) => {
        impl Scalar for $t {
            const DTYPE: &'static str = $tag;

            fn gemm(
                trans_a: bool,
                trans_b: bool,
                m: usize,
                n: usize,
                k: usize,
                alpha: Self,
                a: &[Self],
                b: &[Self],
                beta: Self,
                c: &mut [Self],
            ) {
                assert_eq!(a.len(), m * k, "gemm: lhs has wrong length");
                assert_eq!(b.len(), k * n, "gemm: rhs has wrong length");
                assert_eq!(c.len(), m * n, "gemm: output has wrong length");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(trans_a, m, k);
                let (rsb, csb) = strides(trans_b, k, n);
                // SAFETY: the length checks above guarantee every strided access
                // stays within the three slices, and `c` does not alias `a` or `b`.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);
