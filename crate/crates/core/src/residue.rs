//! Balanced modular integers and residue number systems.
//!
//! Residues are kept in the symmetric range `[-(m-1)/2, (m-1)/2]`, which is why
//! every modulus must be odd. Reconstruction uses mixed-radix conversion with
//! balanced digits: for odd moduli the balanced mixed-radix expansion is a
//! bijection onto `[-(D-1)/2, (D-1)/2]`, where `D` is the product of the moduli.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::simd::multiversion;

/// An odd modulus `3 <= m < 2^15`; residues and the modulus itself fit in `i16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Modulus(i32);

impl Modulus {
    pub const MAX: i32 = i16::MAX as i32;

    pub fn new(m: i64) -> Result<Self> {
        if m < 3 || m > Self::MAX as i64 || m % 2 == 0 {
            return Err(Error::InvalidModulus(m));
        }
        Ok(Modulus(m as i32))
    }

    #[inline]
    pub fn get(self) -> i32 {
        self.0
    }

    /// Largest residue magnitude, `(m-1)/2`.
    #[inline]
    pub fn half(self) -> i32 {
        (self.0 - 1) / 2
    }

    /// Whether balanced residues fit in a signed byte (`m <= 255`).
    #[inline]
    pub fn is_byte_sized(self) -> bool {
        self.half() <= i8::MAX as i32
    }

    /// Symmetric reduction of a machine integer.
    #[inline]
    pub fn reduce(self, x: i64) -> i32 {
        let m = self.0 as i64;
        let mut r = x % m;
        let h = self.half() as i64;
        if r > h {
            r -= m;
        } else if r < -h {
            r += m;
        }
        r as i32
    }

    /// Symmetric reduction of a 32-bit accumulator, branch-free.
    ///
    /// Because `m` is odd, `x / m` is never closer than `1/(2m)` to a
    /// half-integer, while the floating-point quotient is off by less than
    /// `2^-21`; rounding it to nearest therefore yields the exact balanced
    /// quotient and the remainder lands in `[-(m-1)/2, (m-1)/2]` directly.
    #[inline(always)]
    pub fn reduce_i32(self, x: i32) -> i32 {
        let q = (x as f64 * (1.0 / self.0 as f64)).round_ties_even();
        // SAFETY: |q| <= 2^31 / 3 + 1, finite and within i32.
        let q = unsafe { q.to_int_unchecked::<i32>() };
        // exact modulo 2^32, and the true remainder is small
        x.wrapping_sub(q.wrapping_mul(self.0))
    }

    /// [`Modulus::reduce_i32`] over a slice, in place.
    #[inline(always)]
    pub fn reduce_slice(self, xs: &mut [i32]) {
        xs.iter_mut().for_each(|v| *v = self.reduce_i32(*v));
    }

    pub fn reduce_big(self, x: &BigInt) -> i32 {
        let r = (x % BigInt::from(self.0))
            .to_i64()
            .expect("remainder is smaller than the modulus");
        self.reduce(r)
    }

    /// Inverse of `x` by the extended Euclidean algorithm; works for composite moduli.
    pub fn inverse(self, x: i64) -> Result<i32> {
        let m = self.0 as i64;
        let a = x.rem_euclid(m);
        let e = a.extended_gcd(&m);
        if e.gcd != 1 {
            return Err(Error::NotCoprime {
                value: BigInt::from(x),
                modulus: m,
                factor: e.gcd.abs(),
            });
        }
        Ok(self.reduce(e.x))
    }

    /// Maximum number of `lhs_max * rhs_max` products that can be summed into
    /// an `i32` accumulator that starts from a value of magnitude `start_max`.
    pub fn accumulation_limit(lhs_max: i64, rhs_max: i64, start_max: i64) -> usize {
        let product = (lhs_max * rhs_max).max(1);
        let room = (i32::MAX as i64 - start_max).max(0);
        (room / product) as usize
    }
}

impl std::fmt::Display for Modulus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A balanced residue together with its modulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Residue {
    value: i32,
    modulus: Modulus,
}

impl Residue {
    #[inline]
    pub fn new(value: i64, modulus: Modulus) -> Self {
        Self::from_reduced(modulus.reduce(value), modulus)
    }

    #[inline]
    fn from_reduced(value: i32, modulus: Modulus) -> Self {
        debug_assert!(
            value.abs() <= modulus.half(),
            "{value} out of range for {modulus}"
        );
        Residue { value, modulus }
    }

    #[inline]
    pub fn value(self) -> i32 {
        self.value
    }

    #[inline]
    pub fn modulus(self) -> Modulus {
        self.modulus
    }

    /// Representative in `[0, m)`.
    pub fn canonical(self) -> i32 {
        self.value.rem_euclid(self.modulus.get())
    }

    fn combine(self, other: Residue, f: impl Fn(i64, i64) -> i64) -> Result<Residue> {
        if self.modulus != other.modulus {
            return Err(Error::SystemMismatch);
        }
        Ok(Residue::new(
            f(self.value as i64, other.value as i64),
            self.modulus,
        ))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Residue) -> Result<Residue> {
        self.combine(other, |a, b| a + b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Residue) -> Result<Residue> {
        self.combine(other, |a, b| a - b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Residue) -> Result<Residue> {
        self.combine(other, |a, b| a * b)
    }
}

/// Reduces an arbitrary-precision integer into the balanced range of `m`.
pub fn mod_reduce(x: &BigInt, m: Modulus) -> Residue {
    Residue::from_reduced(m.reduce_big(x), m)
}

/// Multiplicative inverse of `x` modulo `m`.
pub fn mod_inverse(x: &BigInt, m: Modulus) -> Result<Residue> {
    let r = x.mod_floor(&BigInt::from(m.get())).to_i64().unwrap();
    match m.inverse(r) {
        Ok(v) => Ok(Residue::from_reduced(v, m)),
        Err(Error::NotCoprime {
            modulus, factor, ..
        }) => Err(Error::NotCoprime {
            value: x.clone(),
            modulus,
            factor,
        }),
        Err(e) => Err(e),
    }
}

/// An integer in residue form: one balanced residue per modulus.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RnsVector(Vec<Residue>);

impl RnsVector {
    pub fn residues(&self) -> &[Residue] {
        &self.0
    }

    pub fn values(&self) -> Vec<i32> {
        self.0.iter().map(|r| r.value()).collect()
    }

    pub fn canonical(&self) -> Vec<i32> {
        self.0.iter().map(|r| r.canonical()).collect()
    }

    fn zip_with(
        &self,
        other: &RnsVector,
        f: impl Fn(Residue, Residue) -> Result<Residue>,
    ) -> Result<RnsVector> {
        if self.0.len() != other.0.len() {
            return Err(Error::SystemMismatch);
        }
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| f(a, b))
            .collect::<Result<Vec<_>>>()
            .map(RnsVector)
    }

    pub fn add(&self, other: &RnsVector) -> Result<RnsVector> {
        self.zip_with(other, Residue::add)
    }

    pub fn sub(&self, other: &RnsVector) -> Result<RnsVector> {
        self.zip_with(other, Residue::sub)
    }

    pub fn mul(&self, other: &RnsVector) -> Result<RnsVector> {
        self.zip_with(other, Residue::mul)
    }
}

/// A pairwise-coprime set of odd moduli with precomputed MRC inverses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnsSystem {
    moduli: Vec<Modulus>,
    dynamic_range: BigInt,
    signed_bound: BigInt,
    // mrc_inverse[k][j] = m_j^{-1} mod m_k, for j < k
    mrc_inverse: Vec<Vec<i32>>,
}

impl RnsSystem {
    pub fn new(moduli: &[i64]) -> Result<Self> {
        if moduli.is_empty() {
            return Err(Error::InvalidSize(
                "an RNS needs at least one modulus".into(),
            ));
        }
        let moduli = moduli
            .iter()
            .map(|&m| Modulus::new(m))
            .collect::<Result<Vec<_>>>()?;
        for (i, a) in moduli.iter().enumerate() {
            for b in &moduli[i + 1..] {
                if a.get().gcd(&b.get()) != 1 {
                    return Err(Error::ModuliNotCoprime(a.get() as i64, b.get() as i64));
                }
            }
        }
        let dynamic_range = moduli
            .iter()
            .fold(BigInt::one(), |acc, m| acc * BigInt::from(m.get()));
        let signed_bound: BigInt = (&dynamic_range - 1) / 2;
        let mrc_inverse = moduli
            .iter()
            .enumerate()
            .map(|(k, mk)| {
                moduli[..k]
                    .iter()
                    .map(|mj| mk.inverse(mj.get() as i64).expect("pairwise coprime"))
                    .collect()
            })
            .collect();
        Ok(RnsSystem {
            moduli,
            dynamic_range,
            signed_bound,
            mrc_inverse,
        })
    }

    pub fn moduli(&self) -> &[Modulus] {
        &self.moduli
    }

    pub fn len(&self) -> usize {
        self.moduli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moduli.is_empty()
    }

    /// Product of all moduli.
    pub fn dynamic_range(&self) -> &BigInt {
        &self.dynamic_range
    }

    /// `(D-1)/2`, the largest representable magnitude.
    pub fn signed_bound(&self) -> &BigInt {
        &self.signed_bound
    }

    pub fn to_rns(&self, x: &BigInt) -> Result<RnsVector> {
        if x.abs() > self.signed_bound {
            return Err(Error::OutOfRange {
                value: x.clone(),
                bound: self.signed_bound.clone(),
            });
        }
        Ok(RnsVector(
            self.moduli.iter().map(|&m| mod_reduce(x, m)).collect(),
        ))
    }

    /// Packs already-reduced residues, one per modulus.
    pub fn vector(&self, residues: &[i64]) -> Result<RnsVector> {
        if residues.len() != self.moduli.len() {
            return Err(Error::SystemMismatch);
        }
        Ok(RnsVector(
            residues
                .iter()
                .zip(&self.moduli)
                .map(|(&r, &m)| Residue::new(r, m))
                .collect(),
        ))
    }

    fn check(&self, v: &RnsVector) -> Result<()> {
        if v.0.len() != self.moduli.len()
            || v.0.iter().zip(&self.moduli).any(|(r, m)| r.modulus() != *m)
        {
            return Err(Error::SystemMismatch);
        }
        Ok(())
    }

    pub fn add(&self, a: &RnsVector, b: &RnsVector) -> Result<RnsVector> {
        self.check(a)?;
        self.check(b)?;
        a.add(b)
    }

    pub fn sub(&self, a: &RnsVector, b: &RnsVector) -> Result<RnsVector> {
        self.check(a)?;
        self.check(b)?;
        a.sub(b)
    }

    pub fn mul(&self, a: &RnsVector, b: &RnsVector) -> Result<RnsVector> {
        self.check(a)?;
        self.check(b)?;
        a.mul(b)
    }

    /// Mixed-radix digits of the residues `r`, balanced or in `[0, m_k)`.
    fn mrc_digits(&self, r: &[i32], balanced: bool, digits: &mut [i32]) {
        debug_assert_eq!(r.len(), self.moduli.len());
        for (k, &mk) in self.moduli.iter().enumerate() {
            let mut t = r[k] as i64;
            for (&d, &inv) in digits[..k].iter().zip(&self.mrc_inverse[k]) {
                t = mk.reduce((t - d as i64) * inv as i64) as i64;
            }
            let mut t = mk.reduce(t);
            if !balanced && t < 0 {
                t += mk.get();
            }
            digits[k] = t;
        }
    }

    fn mrc_combine(&self, r: &[i32], balanced: bool) -> BigInt {
        let mut digits = vec![0i32; self.moduli.len()];
        self.mrc_digits(r, balanced, &mut digits);
        let mut x = BigInt::zero();
        let mut radix = BigInt::one();
        for (d, m) in digits.iter().zip(&self.moduli) {
            x += &radix * BigInt::from(*d);
            radix *= BigInt::from(m.get());
        }
        x
    }

    /// Mixed Radix Conversion into the symmetric range `[-(D-1)/2, (D-1)/2]`.
    pub fn mrc_reconstruct(&self, v: &RnsVector) -> Result<BigInt> {
        self.check(v)?;
        let x = self.mrc_combine(&v.values(), true);
        debug_assert!(x.abs() <= self.signed_bound);
        Ok(x)
    }

    /// Mixed Radix Conversion into `[0, D)`.
    pub fn mrc_reconstruct_unsigned(&self, v: &RnsVector) -> Result<BigInt> {
        self.check(v)?;
        Ok(self.mrc_combine(&v.values(), false))
    }

    /// Balanced MRC on raw residues with fixed-width arithmetic.
    ///
    /// Intended for the convolution hot path; the dynamic range must fit `i128`.
    #[inline]
    pub fn reconstruct_i128(&self, r: &[i32]) -> i128 {
        debug_assert!(self.dynamic_range.bits() < 127);
        let mut digits = [0i32; 16];
        let n = self.moduli.len();
        if n > digits.len() {
            return self.mrc_combine(r, true).to_i128().unwrap();
        }
        self.mrc_digits(r, true, &mut digits[..n]);
        let mut x: i128 = 0;
        for k in (0..n).rev() {
            x = x * self.moduli[k].get() as i128 + digits[k] as i128;
        }
        x
    }

    /// Balanced MRC of many values at once, with `residues[k]` holding the
    /// balanced residues modulo the `k`-th modulus.
    ///
    /// The result is exact for every value whose balanced reconstruction fits
    /// in `i32`; the final weighting wraps modulo `2^32`.
    pub fn reconstruct_into_i32(&self, residues: &[&[i32]], out: &mut [i32]) {
        assert_eq!(
            residues.len(),
            self.moduli.len(),
            "one residue slice per modulus"
        );
        assert!(
            residues.iter().all(|r| r.len() == out.len()),
            "residue slices must match the output"
        );
        const CHUNK: usize = 256;
        let n = self.moduli.len();
        let mut digits = vec![0i32; n * CHUNK];
        for start in (0..out.len()).step_by(CHUNK) {
            let len = CHUNK.min(out.len() - start);
            let res: Vec<&[i32]> = residues.iter().map(|r| &r[start..start + len]).collect();
            mrc_chunk(
                &self.moduli,
                &self.mrc_inverse,
                &res,
                &mut digits[..n * len],
                &mut out[start..start + len],
            );
        }
    }
}

multiversion!(fn mrc_chunk(moduli: &[Modulus], inverse: &[Vec<i32>], res: &[&[i32]], digits: &mut [i32], out: &mut [i32]) => mrc_chunk_kernel);

#[inline(always)]
fn mrc_chunk_kernel(
    moduli: &[Modulus],
    inverse: &[Vec<i32>],
    res: &[&[i32]],
    digits: &mut [i32],
    out: &mut [i32],
) {
    let len = out.len();
    for (k, &mk) in moduli.iter().enumerate() {
        let (done, rest) = digits.split_at_mut(k * len);
        let dk = &mut rest[..len];
        dk.copy_from_slice(res[k]);
        // |t - d_j| < 2^15 and |inverse| < 2^14, so the product fits i32
        for (j, dj) in done.chunks_exact(len).enumerate() {
            let inv = inverse[k][j];
            for (t, &d) in dk.iter_mut().zip(dj) {
                *t = mk.reduce_i32(t.wrapping_sub(d).wrapping_mul(inv));
            }
        }
    }
    out.fill(0);
    for (dk, mk) in digits.chunks_exact(len).zip(moduli).rev() {
        let m = mk.get();
        for (o, &d) in out.iter_mut().zip(dk) {
            *o = o.wrapping_mul(m).wrapping_add(d);
        }
    }
}
