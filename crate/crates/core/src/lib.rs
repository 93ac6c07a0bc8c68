//! Exact integer Winograd convolution over residue number systems.
//!
//! Winograd transforms for large tiles (`F(10x10, 3x3)` and up) have
//! denominators and coefficients far beyond 8-bit range. Reducing every
//! transform matrix modulo a few small pairwise-coprime moduli keeps each
//! residue channel within 8 (or 16) bits; mixed-radix conversion then
//! recovers the exact integer convolution.
//!
//! * [`residue`]: balanced modular arithmetic, RNS encode, MRC decode.
//! * [`transforms`]: Vandermonde-derived `A^T`, `G`, `B^T` in exact rationals
//!   and their per-modulus reductions.
//! * [`kernel`]: single-tile convolution per modulus and across an RNS.
//! * [`gemm`]: 8/16-bit integer GEMM with 32-bit accumulation.
//! * [`layer`]: full convolution layers, the im2col baseline and the
//!   operation-count model.
//! * [`tensor_io`]: the `QTNS` tensor file format.

pub mod error;
pub mod gemm;
pub mod kernel;
pub mod layer;
pub mod matrix;
pub mod residue;
mod simd;
pub mod tensor_io;
pub mod transforms;

use num_rational::BigRational;

pub use error::{Error, Result};
pub use gemm::{AccMatrix, GemmScalar, IntMatrix};
pub use kernel::WinogradRns;
pub use layer::{
    conv_layer, direct_conv, direct_conv_i16, winograd_layer_conv, ConvOutput, LayerSpec,
    QuantizedTensor, RangePolicy,
};
pub use matrix::Matrix;
pub use residue::{mod_inverse, mod_reduce, Modulus, Residue, RnsSystem, RnsVector};
pub use transforms::{
    arithmetic_reduction, default_points, derive_transforms, vandermonde, vandermonde_inverse,
    ExactTransformSet, InterpolationPoints, ModularTransformSet, Point,
};

/// Exact transform matrices.
pub type RationalMatrix = Matrix<BigRational>;
/// Balanced residues of one modulus, or integer tiles.
pub type Tile = Matrix<i32>;
/// GEMM operand holding residues of moduli up to 255.
pub type ByteMatrix = IntMatrix<i8>;
/// GEMM operand holding residues of moduli up to 32767.
pub type ShortMatrix = IntMatrix<i16>;
