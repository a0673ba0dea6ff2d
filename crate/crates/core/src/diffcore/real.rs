use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use std::sync::Arc;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rustfft::{Fft, FftPlanner};

/// Scalar type of a tensor. Training runs in `f32`; gradient checks use `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + rustfft::FftNum
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Row-major `C = A·B + beta·C` with explicit (row, col) strides for A and B.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
    );

    /// Cached FFT plan of length `n` for the calling thread.
    fn fft_plan(n: usize, inverse: bool) -> Arc<dyn Fft<Self>>;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite float")
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn fft_plan(n: usize, inverse: bool) -> Arc<dyn Fft<$t>> {
                thread_local! {
                    static PLANNER: std::cell::RefCell<FftPlanner<$t>> =
                        std::cell::RefCell::new(FftPlanner::new());
                }
                PLANNER.with(|p| {
                    let mut p = p.borrow_mut();
                    if inverse {
                        p.plan_fft_inverse(n)
                    } else {
                        p.plan_fft_forward(n)
                    }
                })
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[$t],
                (rsa, csa): (usize, usize),
                b: &[$t],
                (rsb, csb): (usize, usize),
                beta: $t,
                c: &mut [$t],
            ) {
                if m == 0 || k == 0 || n == 0 {
                    return;
                }
                assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
                assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
                assert!(c.len() >= m * n);
                // SAFETY: the asserts above bound every index reached through the strides.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
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

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);
