use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the engine.
///
/// Training runs in `f32`; gradient checking runs the same graphs in `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// `c = op(a) · op(b) + beta·c` with `op(a)` of shape `m×k` and `op(b)`
    /// of shape `k×n`, all row-major. `trans_a` means `a` is stored `k×m`,
    /// `trans_b` means `b` is stored `n×k`. `beta` is 0 or 1.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }
}

fn strides(m: usize, k: usize, n: usize, trans_a: bool, trans_b: bool) -> [isize; 4] {
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    [rsa as isize, csa as isize, rsb as isize, csb as isize]
}

fn check_lens(m: usize, k: usize, n: usize, a: usize, b: usize, c: usize) {
    assert!(
        a >= m * k && b >= k * n && c >= m * n,
        "gemm operand too short"
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                check_lens(m, k, n, a.len(), b.len(), c.len());
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        c[..m * n].iter_mut().for_each(|v| *v = 0.0);
                    }
                    return;
                }
                let [rsa, csa, rsb, csb] = strides(m, k, n, trans_a, trans_b);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: lengths were checked above and the strides describe
                // row-major matrices lying inside those slices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
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

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
