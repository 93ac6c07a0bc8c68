//! Integer GEMM on 8- or 16-bit operands with 32-bit accumulators.
//!
//! Every output element is a plain integer dot product, so any blocking or
//! parallel split yields identical bits. The only failure mode is accumulator
//! overflow, which [`gemm_acc`] rules out statically before touching data;
//! the kernels then use wrapping arithmetic so they stay vectorizable in
//! builds with overflow checks.

use num_traits::PrimInt;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::residue::Modulus;
use crate::simd::multiversion;

/// 32-bit accumulator matrix.
pub type AccMatrix = Matrix<i32>;

/// Operand element type of [`IntMatrix`].
pub trait GemmScalar: PrimInt + Into<i32> + Default + Send + Sync + 'static {
    const BITS: u32;

    /// Narrows a value known to fit; checked in debug builds.
    fn narrow(v: i32) -> Self;
}

impl GemmScalar for i8 {
    const BITS: u32 = 8;

    #[inline]
    fn narrow(v: i32) -> Self {
        debug_assert!(i8::try_from(v).is_ok(), "{v} does not fit in i8");
        v as i8
    }
}

impl GemmScalar for i16 {
    const BITS: u32 = 16;

    #[inline]
    fn narrow(v: i32) -> Self {
        debug_assert!(i16::try_from(v).is_ok(), "{v} does not fit in i16");
        v as i16
    }
}

/// Dense row-major matrix of narrow signed integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: GemmScalar> IntMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} elements for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(IntMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntMatrix {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    /// Narrows `i32` values, failing if any does not fit `T`.
    pub fn from_i32(rows: usize, cols: usize, data: &[i32]) -> Result<Self> {
        let narrowed = data
            .iter()
            .map(|&v| {
                T::from(v).ok_or_else(|| {
                    Error::ShapeMismatch(format!("{v} does not fit in {} bits", T::BITS))
                })
            })
            .collect::<Result<Vec<T>>>()?;
        Self::new(rows, cols, narrowed)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn element_bits(&self) -> u32 {
        T::BITS
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn max_abs(&self) -> i64 {
        max_abs_narrow(&self.data)
    }
}

multiversion!(fn max_abs_narrow<T: GemmScalar>(v: &[T]) -> i64 => max_abs_kernel);

#[inline(always)]
fn max_abs_kernel<T: GemmScalar>(v: &[T]) -> i64 {
    v.iter()
        .map(|&x| Into::<i32>::into(x).unsigned_abs())
        .max()
        .unwrap_or(0) as i64
}

/// Output rows computed together by one micro-kernel call.
const MR: usize = 4;
/// Output columns held in registers by one micro-kernel call.
const NR: usize = 32;
/// Depth slice kept hot in cache.
const KC: usize = 256;
/// Output rows per parallel task.
const ROWS_PER_TASK: usize = 32;

/// `acc += a * b`, exactly, in 32-bit integers.
pub fn gemm_acc<T: GemmScalar>(
    a: &IntMatrix<T>,
    b: &IntMatrix<T>,
    acc: &mut AccMatrix,
) -> Result<()> {
    if a.cols != b.rows || acc.rows() != a.rows || acc.cols() != b.cols {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} times {}x{} into {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols,
            acc.rows(),
            acc.cols()
        )));
    }
    let start = acc
        .as_slice()
        .iter()
        .map(|v| (*v as i64).abs())
        .max()
        .unwrap_or(0);
    let bound = start as i128 + a.cols as i128 * a.max_abs() as i128 * b.max_abs() as i128;
    if bound > i32::MAX as i128 {
        return Err(Error::OverflowRisk { bound });
    }

    let n = b.cols;
    let depth = a.cols;
    acc.as_mut_slice()
        .par_chunks_mut(n * ROWS_PER_TASK)
        .enumerate()
        .for_each(|(task, out)| {
            let a_rows = &a.data[task * ROWS_PER_TASK * depth..][..out.len() / n * depth];
            block_dispatch(a_rows, &b.data, depth, n, out);
        });
    Ok(())
}

multiversion!(fn block_dispatch<T: GemmScalar>(a_rows: &[T], b: &[T], depth: usize, n: usize, out: &mut [i32]) => block);

/// `out += a_rows * b` for a run of consecutive rows.
#[inline(always)]
fn block<T: GemmScalar>(a_rows: &[T], b: &[T], depth: usize, n: usize, out: &mut [i32]) {
    let rows = out.len() / n;
    for k0 in (0..depth).step_by(KC) {
        let k1 = (k0 + KC).min(depth);
        let panel = &b[k0 * n..k1 * n];
        let mut r = 0;
        while r + MR <= rows {
            strip::<T, MR>(
                &a_rows[r * depth..],
                depth,
                k0..k1,
                panel,
                n,
                &mut out[r * n..(r + MR) * n],
            );
            r += MR;
        }
        while r < rows {
            strip::<T, 1>(
                &a_rows[r * depth..],
                depth,
                k0..k1,
                panel,
                n,
                &mut out[r * n..(r + 1) * n],
            );
            r += 1;
        }
    }
}

/// `out += a * panel` for `R` rows, where `panel` holds the `ks` rows of `b`.
///
/// Full `NR`-wide column groups accumulate in a local array the compiler keeps
/// in vector registers across the whole depth slice.
#[inline(always)]
fn strip<T: GemmScalar, const R: usize>(
    a: &[T],
    depth: usize,
    ks: std::ops::Range<usize>,
    panel: &[T],
    n: usize,
    out: &mut [i32],
) {
    let a_rows: [&[T]; R] = std::array::from_fn(|i| &a[i * depth + ks.start..i * depth + ks.end]);
    let kc = ks.len();
    let mut j0 = 0;
    while j0 + NR <= n {
        let mut acc = [[0i32; NR]; R];
        for k in 0..kc {
            let bk: &[T; NR] = panel[k * n + j0..k * n + j0 + NR]
                .try_into()
                .expect("NR columns");
            let bw: [i32; NR] = std::array::from_fn(|j| bk[j].into());
            for (acc_row, a_row) in acc.iter_mut().zip(&a_rows) {
                let av: i32 = a_row[k].into();
                for (s, x) in acc_row.iter_mut().zip(&bw) {
                    *s = s.wrapping_add(av.wrapping_mul(*x));
                }
            }
        }
        for (i, acc_row) in acc.iter().enumerate() {
            for (o, s) in out[i * n + j0..i * n + j0 + NR].iter_mut().zip(acc_row) {
                *o = o.wrapping_add(*s);
            }
        }
        j0 += NR;
    }
    if j0 < n {
        for (i, a_row) in a_rows.iter().enumerate() {
            let out_row = &mut out[i * n + j0..(i + 1) * n];
            for (k, &av) in a_row.iter().enumerate() {
                let av: i32 = av.into();
                if av == 0 {
                    continue;
                }
                for (o, &x) in out_row.iter_mut().zip(&panel[k * n + j0..(k + 1) * n]) {
                    *o = o.wrapping_add(av.wrapping_mul(x.into()));
                }
            }
        }
    }
}

multiversion!(fn reduce_chunk(chunk: &mut [i32], m: Modulus) => reduce_kernel);

#[inline(always)]
fn reduce_kernel(chunk: &mut [i32], m: Modulus) {
    m.reduce_slice(chunk);
}

/// Entrywise balanced reduction of an accumulator.
pub fn reduce_mod_inplace(acc: &mut AccMatrix, m: Modulus) {
    acc.as_mut_slice()
        .par_chunks_mut(4096)
        .for_each(|chunk| reduce_chunk(chunk, m));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive<T: GemmScalar>(a: &IntMatrix<T>, b: &IntMatrix<T>) -> Vec<i64> {
        let mut out = vec![0i64; a.rows() * b.cols()];
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                for k in 0..a.cols() {
                    let x: i32 = a.get(i, k).into();
                    let y: i32 = b.get(k, j).into();
                    out[i * b.cols() + j] += x as i64 * y as i64;
                }
            }
        }
        out
    }

    fn random<T: GemmScalar>(
        rng: &mut ChaCha8Rng,
        rows: usize,
        cols: usize,
        max: i32,
    ) -> IntMatrix<T> {
        let data: Vec<i32> = (0..rows * cols)
            .map(|_| rng.gen_range(-max..=max))
            .collect();
        IntMatrix::from_i32(rows, cols, &data).unwrap()
    }

    #[test]
    fn identity_and_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: IntMatrix<i8> = random(&mut rng, 5, 7, 127);
        let mut eye = vec![0i8; 25];
        for i in 0..5 {
            eye[i * 6] = 1;
        }
        let eye = IntMatrix::new(5, 5, eye).unwrap();
        let mut acc = AccMatrix::zeros(5, 7);
        gemm_acc(&eye, &x, &mut acc).unwrap();
        let expect: Vec<i32> = x.as_slice().iter().map(|&v| v as i32).collect();
        assert_eq!(acc.as_slice(), &expect[..]);

        let a = IntMatrix::new(1, 1, vec![3i8]).unwrap();
        let b = IntMatrix::new(1, 1, vec![-4i8]).unwrap();
        let mut acc = AccMatrix::zeros(1, 1);
        gemm_acc(&a, &b, &mut acc).unwrap();
        assert_eq!(acc.as_slice(), &[-12]);
    }

    #[test]
    fn accumulates_into_existing() {
        let a = IntMatrix::new(1, 2, vec![1i16, 2]).unwrap();
        let b = IntMatrix::new(2, 1, vec![3i16, 4]).unwrap();
        let mut acc = AccMatrix::from_vec(1, 1, vec![100]).unwrap();
        gemm_acc(&a, &b, &mut acc).unwrap();
        assert_eq!(acc.as_slice(), &[111]);
    }

    #[test]
    fn random_17x9x23_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a: IntMatrix<i8> = random(&mut rng, 17, 9, 128);
        let b: IntMatrix<i8> = random(&mut rng, 9, 23, 128);
        let mut acc = AccMatrix::zeros(17, 23);
        gemm_acc(&a, &b, &mut acc).unwrap();
        let got: Vec<i64> = acc.as_slice().iter().map(|&v| v as i64).collect();
        assert_eq!(got, naive(&a, &b));
    }

    #[test]
    fn shape_and_overflow_errors() {
        let a = IntMatrix::<i16>::zeros(2, 3);
        let b = IntMatrix::<i16>::zeros(2, 3);
        let mut acc = AccMatrix::zeros(2, 3);
        assert!(matches!(
            gemm_acc(&a, &b, &mut acc),
            Err(Error::ShapeMismatch(_))
        ));

        let big = IntMatrix::new(1, 3, vec![i16::MAX; 3]).unwrap();
        let col = IntMatrix::new(3, 1, vec![i16::MAX; 3]).unwrap();
        let mut acc = AccMatrix::zeros(1, 1);
        assert!(matches!(
            gemm_acc(&big, &col, &mut acc),
            Err(Error::OverflowRisk { .. })
        ));

        assert!(IntMatrix::<i8>::from_i32(1, 1, &[200]).is_err());
        assert!(IntMatrix::<i8>::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn reduce_examples() {
        let m = Modulus::new(253).unwrap();
        let mut acc = AccMatrix::from_vec(1, 3, vec![14400, 0, -14400]).unwrap();
        reduce_mod_inplace(&mut acc, m);
        assert_eq!(acc.as_slice(), &[-21, 0, 21]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<i32> = (0..1000).map(|_| rng.gen()).collect();
        let mut acc = AccMatrix::from_vec(10, 100, data.clone()).unwrap();
        reduce_mod_inplace(&mut acc, m);
        for (r, x) in acc.as_slice().iter().zip(&data) {
            assert_eq!(*r, m.reduce(*x as i64));
            assert_eq!((*r as i64 - *x as i64).rem_euclid(253), 0);
        }
    }
}
