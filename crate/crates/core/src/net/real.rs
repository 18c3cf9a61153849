use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating-point element type of the network. `f32` is used for training
/// and inference; `f64` backs the finite-difference gradient checks.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C <- alpha * A * B + beta * C` for row-major contiguous matrices,
    /// with `A` given by explicit strides so transposes are free.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let a_extent = (m as isize - 1) * rsa + (k as isize - 1).max(0) * csa;
                let b_extent = (k as isize - 1).max(0) * rsb + (n as isize - 1) * csb;
                assert!(k == 0 || (a_extent as usize) < a.len(), "gemm: A too short");
                assert!(k == 0 || (b_extent as usize) < b.len(), "gemm: B too short");
                assert!(c.len() >= m * n, "gemm: C too short");
                // SAFETY: extents of A, B and C were checked against the slices above.
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

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut c = vec![1.0; m * n];
        f64::gemm(m, k, n, &a, k as isize, 1, &b, n as isize, 1, 1.0, &mut c);
        for i in 0..m {
            for j in 0..n {
                let naive: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum::<f64>() + 1.0;
                assert!((c[i * n + j] - naive).abs() < 1e-12);
            }
        }
        // transposed A: use a as (k x m)
        let mut ct = vec![0.0; m * n];
        let at: Vec<f64> = (0..k * m).map(|i| i as f64).collect();
        f64::gemm(m, k, n, &at, 1, m as isize, &b, n as isize, 1, 0.0, &mut ct);
        for i in 0..m {
            for j in 0..n {
                let naive: f64 = (0..k).map(|p| at[p * m + i] * b[p * n + j]).sum();
                assert!((ct[i * n + j] - naive).abs() < 1e-12);
            }
        }
    }
}
