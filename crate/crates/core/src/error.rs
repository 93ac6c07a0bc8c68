use num_bigint::BigInt;
use thiserror::Error;

/// Errors raised by the residue, transform, kernel, GEMM and layer routines.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid modulus {0}: must be odd, at least 3 and below 32768")]
    InvalidModulus(i64),

    #[error("{value} has no inverse modulo {modulus} (common factor {factor})")]
    NotCoprime {
        value: BigInt,
        modulus: i64,
        factor: i64,
    },

    #[error("moduli {0} and {1} are not coprime")]
    ModuliNotCoprime(i64, i64),

    #[error("{value} is outside the signed range +/-{bound}")]
    OutOfRange { value: BigInt, bound: BigInt },

    #[error("residue vectors belong to different systems")]
    SystemMismatch,

    #[error("invalid interpolation points: {0}")]
    InvalidPoints(String),

    #[error("invalid transform size: {0}")]
    InvalidSize(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("accumulation bound {bound} exceeds the 32-bit accumulator")]
    OverflowRisk { bound: i128 },

    #[error("worst-case output magnitude {required} exceeds the dynamic range +/-{available}")]
    DynamicRangeExceeded { required: BigInt, available: BigInt },

    #[error("stride {0} is not supported by the Winograd path")]
    UnsupportedStride(usize),

    #[error("tensor format: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
