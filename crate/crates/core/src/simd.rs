//! Runtime selection of the widest vector instruction set.
//!
//! Hot loops are written as plain scalar Rust in `#[inline(always)]` kernels.
//! [`multiversion!`] wraps such a kernel in copies compiled with AVX2 or
//! AVX-512 enabled and picks one at runtime, so the auto-vectorizer can use
//! wide registers without raising the crate's baseline target.

#[cfg(target_arch = "x86_64")]
#[inline]
pub(crate) fn has_avx512() -> bool {
    std::is_x86_feature_detected!("avx512f")
        && std::is_x86_feature_detected!("avx512bw")
        && std::is_x86_feature_detected!("fma")
}

#[cfg(target_arch = "x86_64")]
#[inline]
pub(crate) fn has_avx2() -> bool {
    std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
}

/// `multiversion!(vis fn name<T: Bound>(args) -> Ret => kernel)` defines `name`,
/// which forwards to the `#[inline(always)]` function `kernel`.
macro_rules! multiversion {
    ($vis:vis fn $name:ident $(<$T:ident: $B:path>)? ($($a:ident: $t:ty),* $(,)?) $(-> $R:ty)? => $inner:ident) => {
        $vis fn $name $(<$T: $B>)? ($($a: $t),*) $(-> $R)? {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f,avx512bw,avx2,fma")]
                unsafe fn wide $(<$T: $B>)? ($($a: $t),*) $(-> $R)? {
                    $inner $(::<$T>)? ($($a),*)
                }
                #[target_feature(enable = "avx2,fma")]
                unsafe fn mid $(<$T: $B>)? ($($a: $t),*) $(-> $R)? {
                    $inner $(::<$T>)? ($($a),*)
                }
                if $crate::simd::has_avx512() {
                    // SAFETY: the enabled features were detected at runtime.
                    return unsafe { wide $(::<$T>)? ($($a),*) };
                }
                if $crate::simd::has_avx2() {
                    // SAFETY: as above.
                    return unsafe { mid $(::<$T>)? ($($a),*) };
                }
            }
            $inner $(::<$T>)? ($($a),*)
        }
    };
}

pub(crate) use multiversion;

multiversion!(pub(crate) fn max_abs_i32(v: &[i32]) -> i64 => max_abs_i32_kernel);

#[inline(always)]
fn max_abs_i32_kernel(v: &[i32]) -> i64 {
    v.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0) as i64
}
