//! Convolution layers: the im2col baseline and the tiled RNS Winograd path.
//!
//! The Winograd path follows the amortized layout: filter transforms are
//! computed once per layer, every input patch is transformed once and shared
//! by all `K` filters, the channel reduction for each of the `N^2` transform
//! positions is one GEMM of shape `(batch * tiles) x C x K`, and the backward
//! transform runs after that reduction. Each modulus is an independent pass;
//! mixed-radix conversion combines them at the very end.

use std::time::{Duration, Instant};

use num_bigint::BigInt;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gemm::{gemm_acc, reduce_mod_inplace, AccMatrix, GemmScalar, IntMatrix};
use crate::kernel::{mod_matmul_into, WinogradRns, INT8_MAX_ABS};
use crate::residue::{Modulus, RnsSystem};
use crate::simd::multiversion;
use crate::transforms::{ModularTransformSet, MAX_TILE};
use crate::Tile;

/// Dense int8 tensor, innermost dimension last.
///
/// Activations are `(batch, height, width, channels)`; weights are
/// `(R, R, C, K)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedTensor {
    dims: [usize; 4],
    data: Vec<i8>,
}

impl QuantizedTensor {
    pub fn new(dims: [usize; 4], data: Vec<i8>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} elements for dims {dims:?}",
                data.len()
            )));
        }
        Ok(QuantizedTensor { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        QuantizedTensor {
            dims,
            data: vec![0; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> i8) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for a in 0..dims[0] {
            for b in 0..dims[1] {
                for c in 0..dims[2] {
                    for d in 0..dims[3] {
                        data.push(f([a, b, c, d]));
                    }
                }
            }
        }
        QuantizedTensor { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.data
    }

    #[inline]
    pub fn offset(&self, idx: [usize; 4]) -> usize {
        ((idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]) * self.dims[3] + idx[3]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> i8 {
        self.data[self.offset(idx)]
    }
}

/// Geometry of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
    pub r: usize,
    pub batch: usize,
    pub stride: usize,
    pub padding: usize,
    pub tile_m: usize,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.h,
            self.w,
            self.c,
            self.k,
            self.r,
            self.batch,
            self.stride,
            self.tile_m,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidSize(format!("zero dimension in {self:?}")));
        }
        if self.h + 2 * self.padding < self.r || self.w + 2 * self.padding < self.r {
            return Err(Error::InvalidSize(format!(
                "{}x{} input with padding {} is smaller than the {}x{} filter",
                self.h, self.w, self.padding, self.r, self.r
            )));
        }
        Ok(())
    }

    fn validate_winograd(&self) -> Result<()> {
        self.validate()?;
        if self.stride != 1 {
            return Err(Error::UnsupportedStride(self.stride));
        }
        if self.tile_m + self.r - 1 > MAX_TILE {
            return Err(Error::InvalidSize(format!(
                "tile {} with filter {} exceeds N = {MAX_TILE}",
                self.tile_m, self.r
            )));
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.padding - self.r) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.padding - self.r) / self.stride + 1
    }

    pub fn input_dims(&self) -> [usize; 4] {
        [self.batch, self.h, self.w, self.c]
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.r, self.r, self.c, self.k]
    }

    pub fn output_dims(&self) -> [usize; 4] {
        [self.batch, self.out_h(), self.out_w(), self.k]
    }

    fn check_operands(&self, weights: &QuantizedTensor, input: &QuantizedTensor) -> Result<()> {
        if weights.dims() != self.weight_dims() {
            return Err(Error::ShapeMismatch(format!(
                "weights {:?}, layer expects {:?}",
                weights.dims(),
                self.weight_dims()
            )));
        }
        if input.dims() != self.input_dims() {
            return Err(Error::ShapeMismatch(format!(
                "input {:?}, layer expects {:?}",
                input.dims(),
                self.input_dims()
            )));
        }
        Ok(())
    }
}

/// 32-bit convolution result, `(batch, out_h, out_w, K)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvOutput {
    dims: [usize; 4],
    data: Vec<i32>,
}

impl ConvOutput {
    pub fn new(dims: [usize; 4], data: Vec<i32>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} elements for dims {dims:?}",
                data.len()
            )));
        }
        Ok(ConvOutput { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> i32 {
        self.data
            [((idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]) * self.dims[3] + idx[3]]
    }

    pub fn max_abs(&self) -> i64 {
        self.data
            .iter()
            .map(|v| (*v as i64).abs())
            .max()
            .unwrap_or(0)
    }

    /// Coordinates of the first element that differs from `other`.
    pub fn first_mismatch(&self, other: &ConvOutput) -> Option<[usize; 4]> {
        if self.dims != other.dims {
            return Some([0; 4]);
        }
        let i = self
            .data
            .iter()
            .zip(&other.data)
            .position(|(a, b)| a != b)?;
        let [_, h, w, k] = self.dims;
        Some([i / (h * w * k), i / (w * k) % h, i / k % w, i % k])
    }
}

/// Exact convolution by im2col lowering and an int8 GEMM; supports any stride.
pub fn direct_conv(
    spec: &LayerSpec,
    weights: &QuantizedTensor,
    input: &QuantizedTensor,
) -> Result<ConvOutput> {
    direct_conv_as::<i8>(spec, weights, input)
}

/// [`direct_conv`] with operands widened to 16 bits, the baseline for 16-bit moduli.
pub fn direct_conv_i16(
    spec: &LayerSpec,
    weights: &QuantizedTensor,
    input: &QuantizedTensor,
) -> Result<ConvOutput> {
    direct_conv_as::<i16>(spec, weights, input)
}

fn direct_conv_as<S: GemmScalar>(
    spec: &LayerSpec,
    weights: &QuantizedTensor,
    input: &QuantizedTensor,
) -> Result<ConvOutput> {
    spec.validate()?;
    spec.check_operands(weights, input)?;
    let (ho, wo) = (spec.out_h(), spec.out_w());
    let depth = spec.r * spec.r * spec.c;
    let rows = spec.batch * ho * wo;

    let mut cols = vec![S::default(); rows * depth];
    cols.par_chunks_mut(depth)
        .enumerate()
        .for_each(|(row, dst)| {
            let (b, y, x) = (row / (ho * wo), row / wo % ho, row % wo);
            for a in 0..spec.r {
                let iy = (y * spec.stride + a) as isize - spec.padding as isize;
                if iy < 0 || iy >= spec.h as isize {
                    continue;
                }
                for bb in 0..spec.r {
                    let ix = (x * spec.stride + bb) as isize - spec.padding as isize;
                    if ix < 0 || ix >= spec.w as isize {
                        continue;
                    }
                    let src = input.offset([b, iy as usize, ix as usize, 0]);
                    let off = (a * spec.r + bb) * spec.c;
                    for (d, s) in dst[off..off + spec.c]
                        .iter_mut()
                        .zip(&input.data[src..src + spec.c])
                    {
                        *d = S::narrow(*s as i32);
                    }
                }
            }
        });
    let lhs = IntMatrix::new(rows, depth, cols)?;
    // (R, R, C, K) row-major is already the (R*R*C) x K right operand
    let rhs = IntMatrix::new(
        depth,
        spec.k,
        weights.data.iter().map(|&v| S::narrow(v as i32)).collect(),
    )?;
    let mut acc = AccMatrix::zeros(rows, spec.k);
    gemm_acc(&lhs, &rhs, &mut acc)?;
    ConvOutput::new(spec.output_dims(), acc.into_vec())
}

/// Overlapping `N x N` input patches at stride `M` covering the padded plane.
///
/// Tile `t` produces output rows `ty*M .. ty*M + M` and columns
/// `tx*M .. tx*M + M` (cropped to the output), from padded input starting at
/// the same coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_m: usize,
    pub n: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub tiles_h: usize,
    pub tiles_w: usize,
    pub padding: usize,
}

impl TileGrid {
    pub fn new(spec: &LayerSpec) -> Self {
        let (out_h, out_w) = (spec.out_h(), spec.out_w());
        TileGrid {
            tile_m: spec.tile_m,
            n: spec.tile_m + spec.r - 1,
            out_h,
            out_w,
            tiles_h: out_h.div_ceil(spec.tile_m),
            tiles_w: out_w.div_ceil(spec.tile_m),
            padding: spec.padding,
        }
    }

    pub fn num_tiles(&self) -> usize {
        self.tiles_h * self.tiles_w
    }

    /// Top-left output coordinate of tile `t`.
    pub fn origin(&self, t: usize) -> (usize, usize) {
        (
            t / self.tiles_w * self.tile_m,
            t % self.tiles_w * self.tile_m,
        )
    }

    /// Output rows and columns actually covered by tile `t` after cropping.
    pub fn extent(&self, t: usize) -> (usize, usize) {
        let (y, x) = self.origin(t);
        (
            self.tile_m.min(self.out_h - y),
            self.tile_m.min(self.out_w - x),
        )
    }

    /// Writes patch `t` of image `b` as `N x N x C` (channels innermost), zero-filled outside the input.
    pub fn extract(&self, input: &QuantizedTensor, b: usize, t: usize, out: &mut [i32]) {
        let [_, h, w, c] = input.dims();
        debug_assert_eq!(out.len(), self.n * self.n * c);
        let (y0, x0) = self.origin(t);
        for a in 0..self.n {
            let iy = (y0 + a) as isize - self.padding as isize;
            let row = &mut out[a * self.n * c..(a + 1) * self.n * c];
            if iy < 0 || iy >= h as isize {
                row.fill(0);
                continue;
            }
            for bb in 0..self.n {
                let ix = (x0 + bb) as isize - self.padding as isize;
                let dst = &mut row[bb * c..(bb + 1) * c];
                if ix < 0 || ix >= w as isize {
                    dst.fill(0);
                } else {
                    let src = input.offset([b, iy as usize, ix as usize, 0]);
                    for (d, s) in dst.iter_mut().zip(&input.data[src..src + c]) {
                        *d = *s as i32;
                    }
                }
            }
        }
    }
}

/// One `N x N` single-channel input patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub batch: usize,
    pub channel: usize,
    pub tile: usize,
    pub data: Tile,
}

/// Splits every image and channel of `input` into zero-padded `N x N` patches.
pub fn tile_decompose(spec: &LayerSpec, input: &QuantizedTensor) -> Result<(TileGrid, Vec<Patch>)> {
    spec.validate_winograd()?;
    if input.dims() != spec.input_dims() {
        return Err(Error::ShapeMismatch(format!(
            "input {:?}, layer expects {:?}",
            input.dims(),
            spec.input_dims()
        )));
    }
    let grid = TileGrid::new(spec);
    let (n, c) = (grid.n, spec.c);
    let mut buf = vec![0i32; n * n * c];
    let mut patches = Vec::with_capacity(spec.batch * grid.num_tiles() * c);
    for b in 0..spec.batch {
        for t in 0..grid.num_tiles() {
            grid.extract(input, b, t, &mut buf);
            for ch in 0..c {
                patches.push(Patch {
                    batch: b,
                    channel: ch,
                    tile: t,
                    data: Tile::from_fn(n, n, |i, j| buf[(i * n + j) * c + ch]),
                });
            }
        }
    }
    Ok((grid, patches))
}

/// `L * X * L^T` applied to a stack of `inner x inner x width` values, reduced mod m.
///
/// `x` is laid out `[a][b][w]`; the result is `[i][j][w]` with `L` of shape
/// `rows x inner`.
fn transform_stack(
    l: &Tile,
    x: &[i32],
    width: usize,
    m: Modulus,
    scratch: &mut Vec<i32>,
    out: &mut [i32],
) {
    let (rows, inner) = (l.rows(), l.cols());
    scratch.resize(rows * inner * width, 0);
    // [i][b][w] = sum_a L[i][a] x[a][b][w]
    mod_matmul_into(l.as_slice(), x, rows, inner, inner * width, m, scratch);
    // [i][j][w] = sum_b L[j][b] tmp[i][b][w]
    for i in 0..rows {
        mod_matmul_into(
            l.as_slice(),
            &scratch[i * inner * width..(i + 1) * inner * width],
            rows,
            inner,
            width,
            m,
            &mut out[i * rows * width..(i + 1) * rows * width],
        );
    }
}

/// Filter transforms of one modulus: for each of the `N^2` positions a `C x K`
/// matrix, split into channel chunks that fit the 32-bit accumulator.
#[derive(Debug, Clone)]
pub struct TransformedFilters<S> {
    pub modulus: Modulus,
    pub chunks: Vec<(usize, usize)>,
    /// `positions[pos][chunk]`
    pub positions: Vec<Vec<IntMatrix<S>>>,
}

fn channel_chunks(c: usize, m: Modulus) -> Vec<(usize, usize)> {
    let h = m.half() as i64;
    let limit = Modulus::accumulation_limit(h, h, h).max(1);
    (0..c)
        .step_by(limit)
        .map(|c0| (c0, (c0 + limit).min(c)))
        .collect()
}

multiversion!(fn filter_block(w: &[i8], width: usize, g: &[i32], i: usize, r: usize, m: Modulus, tmp: &mut [i32]) => filter_block_kernel);

/// `tmp[b][col] = sum_a G[i][a] w[a][b][col] (mod m)` for one block of filters.
#[inline(always)]
fn filter_block_kernel(
    w: &[i8],
    width: usize,
    g: &[i32],
    i: usize,
    r: usize,
    m: Modulus,
    tmp: &mut [i32],
) {
    let len = tmp.len() / r;
    for (b, t) in tmp.chunks_exact_mut(len).enumerate() {
        t.fill(0);
        // |sum| <= R * 2^14 * 2^7
        for a in 0..r {
            let coef = g[i * r + a];
            let src = &w[(a * r + b) * width..][..len];
            t.iter_mut()
                .zip(src)
                .for_each(|(t, &x)| *t = t.wrapping_add(coef.wrapping_mul(x as i32)));
        }
        m.reduce_slice(t);
    }
}

multiversion!(fn narrow_into<S: GemmScalar>(vals: &[i32], dst: &mut [S]) => narrow_kernel);

#[inline(always)]
fn narrow_kernel<S: GemmScalar>(vals: &[i32], dst: &mut [S]) {
    dst.iter_mut()
        .zip(vals)
        .for_each(|(d, &v)| *d = S::narrow(v));
}

/// Applies `G_m (.) G_m^T` to every `R x R` filter of `weights` (`[R][R][C][K]`).
///
/// Works one transform row `i` at a time over blocks of filters, narrowing
/// each block straight into the `C x K` matrices of positions `(i, 0..N)`.
pub fn precompute_filter_transforms<S: GemmScalar>(
    weights: &QuantizedTensor,
    mt: &ModularTransformSet,
) -> TransformedFilters<S> {
    const BLOCK: usize = 2048;
    let [r, _, c, k] = weights.dims();
    let n = mt.n();
    let m = mt.modulus;
    let width = c * k;
    let g = mt.g.as_slice();
    let per_row: Vec<Vec<Vec<S>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rows: Vec<Vec<S>> = (0..n).map(|_| vec![S::default(); width]).collect();
            let mut tmp = vec![0i32; r * BLOCK];
            let mut full = vec![0i32; n * BLOCK];
            for c0 in (0..width).step_by(BLOCK) {
                let len = BLOCK.min(width - c0);
                filter_block(&weights.data[c0..], width, g, i, r, m, &mut tmp[..r * len]);
                let out = &mut full[..n * len];
                mod_matmul_into(g, &tmp[..r * len], n, r, len, m, out);
                for (row, vals) in rows.iter_mut().zip(out.chunks_exact(len)) {
                    narrow_into(vals, &mut row[c0..c0 + len]);
                }
            }
            rows
        })
        .collect();
    let chunks = channel_chunks(c, m);
    let positions = per_row
        .into_iter()
        .flatten()
        .map(|pos| {
            if chunks.len() == 1 {
                return vec![IntMatrix::new(c, k, pos).expect("position shape")];
            }
            chunks
                .iter()
                .map(|&(c0, c1)| {
                    IntMatrix::new(c1 - c0, k, pos[c0 * k..c1 * k].to_vec()).expect("chunk shape")
                })
                .collect()
        })
        .collect();
    TransformedFilters {
        modulus: m,
        chunks,
        positions,
    }
}

/// Worst-case output magnitude against the dynamic range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeReport {
    /// `R^2 * C * 128^2`.
    pub static_bound: BigInt,
    pub declared_bound: Option<i64>,
    pub fits: bool,
}

pub fn range_check(spec: &LayerSpec, sys: &RnsSystem, declared_bound: Option<i64>) -> RangeReport {
    let static_bound = BigInt::from(spec.r * spec.r * spec.c) * INT8_MAX_ABS * INT8_MAX_ABS;
    let effective = declared_bound
        .map(BigInt::from)
        .unwrap_or_else(|| static_bound.clone());
    RangeReport {
        fits: &effective <= sys.signed_bound(),
        static_bound,
        declared_bound,
    }
}

/// `R^2 * C * max|w| * max|x|`: a sound output bound for these particular tensors.
pub fn data_bound(spec: &LayerSpec, weights: &QuantizedTensor, input: &QuantizedTensor) -> i64 {
    let max_abs = |t: &QuantizedTensor| t.data.iter().map(|v| (*v as i64).abs()).max().unwrap_or(0);
    (spec.r * spec.r * spec.c) as i64 * max_abs(weights) * max_abs(input)
}

/// How a layer proves its outputs fit the dynamic range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RangePolicy {
    /// Require the worst case `R^2 * C * 128^2` to fit.
    #[default]
    Static,
    /// Trust a measured activation bound instead. Results are only exact if
    /// every true output magnitude is within it.
    DeclaredUnchecked(i64),
}

impl RangePolicy {
    fn declared(self) -> Option<i64> {
        match self {
            RangePolicy::Static => None,
            RangePolicy::DeclaredUnchecked(b) => Some(b),
        }
    }
}

/// Wall-clock breakdown of one Winograd layer evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LayerProfile {
    pub filter_transform: Duration,
    pub input_transform: Duration,
    pub gemm: Duration,
    pub backward_transform: Duration,
    pub mrc: Duration,
    pub total: Duration,
}

/// Per-modulus pass; returns the output tiles as `[patch][i][j][k]` residues.
fn modulus_pass<S: GemmScalar>(
    spec: &LayerSpec,
    grid: &TileGrid,
    weights: &QuantizedTensor,
    input: &QuantizedTensor,
    mt: &ModularTransformSet,
    profile: &mut LayerProfile,
) -> Result<Vec<i32>> {
    let m = mt.modulus;
    let (n, c, k, tm) = (grid.n, spec.c, spec.k, grid.tile_m);
    let positions = n * n;
    let tiles = grid.num_tiles();
    let patches = spec.batch * tiles;

    let t0 = Instant::now();
    let filters = precompute_filter_transforms::<S>(weights, mt);
    let t1 = Instant::now();

    // forward input transforms, patch-major: [p][pos][c]
    let mut transformed = vec![0i32; patches * positions * c];
    transformed
        .par_chunks_mut(positions * c)
        .enumerate()
        .for_each_init(
            || (vec![0i32; positions * c], Vec::new()),
            |(patch, scratch), (p, out)| {
                grid.extract(input, p / tiles, p % tiles, patch);
                transform_stack(&mt.bt, patch, c, m, scratch, out);
            },
        );
    // regroup into one (patches x chunk) operand per position
    let inputs: Vec<Vec<IntMatrix<S>>> = (0..positions)
        .into_par_iter()
        .map(|pos| {
            filters
                .chunks
                .iter()
                .map(|&(c0, c1)| {
                    let width = c1 - c0;
                    let mut data = Vec::with_capacity(patches * width);
                    for p in 0..patches {
                        let base = (p * positions + pos) * c;
                        data.extend(
                            transformed[base + c0..base + c1]
                                .iter()
                                .map(|&v| S::narrow(v)),
                        );
                    }
                    IntMatrix::new(patches, width, data).expect("operand shape")
                })
                .collect()
        })
        .collect();
    drop(transformed);
    let t2 = Instant::now();

    // channel reduction: one GEMM per transform position
    let products = inputs
        .par_iter()
        .zip(&filters.positions)
        .map(|(lhs_chunks, rhs_chunks)| {
            let mut acc = AccMatrix::zeros(patches, k);
            for (i, (lhs, rhs)) in lhs_chunks.iter().zip(rhs_chunks).enumerate() {
                if i > 0 {
                    reduce_mod_inplace(&mut acc, m);
                }
                gemm_acc(lhs, rhs, &mut acc)?;
            }
            reduce_mod_inplace(&mut acc, m);
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    drop(inputs);
    let t3 = Instant::now();

    // backward transform per patch, across all K outputs at once
    let mut tiles_out = vec![0i32; patches * tm * tm * k];
    tiles_out
        .par_chunks_mut(tm * tm * k)
        .enumerate()
        .for_each_init(
            || (vec![0i32; positions * k], Vec::new()),
            |(gathered, scratch), (p, out)| {
                for (pos, prod) in products.iter().enumerate() {
                    gathered[pos * k..(pos + 1) * k].copy_from_slice(prod.row(p));
                }
                transform_stack(&mt.at, gathered, k, m, scratch, out);
            },
        );
    let t4 = Instant::now();

    profile.filter_transform += t1 - t0;
    profile.input_transform += t2 - t1;
    profile.gemm += t3 - t2;
    profile.backward_transform += t4 - t3;
    Ok(tiles_out)
}

/// Bit-exact RNS Winograd convolution of a stride-1 layer.
pub fn winograd_layer_conv(
    spec: &LayerSpec,
    weights: &QuantizedTensor,
    input: &QuantizedTensor,
    sys: &RnsSystem,
    policy: RangePolicy,
) -> Result<ConvOutput> {
    winograd_layer_conv_profiled(spec, weights, input, sys, policy).map(|(out, _)| out)
}

pub fn winograd_layer_conv_profiled(
    spec: &LayerSpec,
    weights: &QuantizedTensor,
    input: &QuantizedTensor,
    sys: &RnsSystem,
    policy: RangePolicy,
) -> Result<(ConvOutput, LayerProfile)> {
    spec.validate_winograd()?;
    spec.check_operands(weights, input)?;
    let range = range_check(spec, sys, policy.declared());
    if !range.fits {
        return Err(Error::DynamicRangeExceeded {
            required: range
                .declared_bound
                .map(BigInt::from)
                .unwrap_or(range.static_bound),
            available: sys.signed_bound().clone(),
        });
    }
    let plan = WinogradRns::new(spec.tile_m, spec.r, sys.clone())?;
    winograd_layer_conv_with(spec, weights, input, &plan)
}

/// Same as [`winograd_layer_conv_profiled`] with prebuilt transforms and no range check.
pub fn winograd_layer_conv_with(
    spec: &LayerSpec,
    weights: &QuantizedTensor,
    input: &QuantizedTensor,
    plan: &WinogradRns,
) -> Result<(ConvOutput, LayerProfile)> {
    spec.validate_winograd()?;
    spec.check_operands(weights, input)?;
    if plan.m() != spec.tile_m || plan.r() != spec.r {
        return Err(Error::ShapeMismatch(format!(
            "F({0}x{0},{1}x{1}) transforms for a layer with tile {2} and filter {3}",
            plan.m(),
            plan.r(),
            spec.tile_m,
            spec.r
        )));
    }
    let start = Instant::now();
    let mut profile = LayerProfile::default();
    let grid = TileGrid::new(spec);
    let sys = plan.system();

    let per_modulus = plan
        .modular()
        .iter()
        .map(|mt| {
            if mt.modulus.is_byte_sized() {
                modulus_pass::<i8>(spec, &grid, weights, input, mt, &mut profile)
            } else {
                modulus_pass::<i16>(spec, &grid, weights, input, mt, &mut profile)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let t0 = Instant::now();
    let (tm, k) = (grid.tile_m, spec.k);
    let [batch, ho, wo, _] = spec.output_dims();
    let tiles = grid.num_tiles();
    // reconstruct tile by tile, then scatter the tiles into output rows
    let mut combined = vec![0i32; per_modulus[0].len()];
    let span = tm * tm * k;
    combined
        .par_chunks_mut(span)
        .enumerate()
        .for_each(|(p, out)| {
            let residues: Vec<&[i32]> = per_modulus
                .iter()
                .map(|v| &v[p * span..(p + 1) * span])
                .collect();
            sys.reconstruct_into_i32(&residues, out);
        });
    let mut data = vec![0i32; batch * ho * wo * k];
    // each output row (b, y) is written by exactly one tile row
    data.par_chunks_mut(wo * k)
        .enumerate()
        .for_each(|(row, out_row)| {
            let (b, y) = (row / ho, row % ho);
            let (ty, i) = (y / tm, y % tm);
            for (tx, dst) in out_row.chunks_mut(tm * k).enumerate() {
                let p = b * tiles + ty * grid.tiles_w + tx;
                let base = (p * tm + i) * tm * k;
                dst.copy_from_slice(&combined[base..base + dst.len()]);
            }
        });
    profile.mrc = t0.elapsed();
    profile.total = start.elapsed();
    Ok((ConvOutput::new(spec.output_dims(), data)?, profile))
}

/// Winograd for stride 1, the im2col baseline otherwise.
pub fn conv_layer(
    spec: &LayerSpec,
    weights: &QuantizedTensor,
    input: &QuantizedTensor,
    sys: &RnsSystem,
    policy: RangePolicy,
) -> Result<ConvOutput> {
    match winograd_layer_conv(spec, weights, input, sys, policy) {
        Err(Error::UnsupportedStride(_)) => direct_conv(spec, weights, input),
        other => other,
    }
}

/// Multiplication counts of the direct and Winograd-domain methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperationCount {
    pub direct_mults: u128,
    pub winograd_mults: u128,
    pub reduction_ratio: f64,
}

/// Element-wise multiplies only: transforms and MRC are treated as amortized.
pub fn count_operations(
    spec: &LayerSpec,
    n_moduli: usize,
    tile_m: usize,
) -> Result<OperationCount> {
    let spec = LayerSpec { tile_m, ..*spec };
    spec.validate_winograd()?;
    let grid = TileGrid::new(&spec);
    let (b, c, k, r) = (
        spec.batch as u128,
        spec.c as u128,
        spec.k as u128,
        spec.r as u128,
    );
    let direct_mults = (grid.out_h * grid.out_w) as u128 * k * c * r * r * b;
    let winograd_mults =
        grid.num_tiles() as u128 * b * (grid.n * grid.n) as u128 * c * k * n_moduli as u128;
    Ok(OperationCount {
        direct_mults,
        winograd_mults,
        reduction_ratio: direct_mults as f64 / winograd_mults as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(
        h: usize,
        w: usize,
        c: usize,
        k: usize,
        r: usize,
        padding: usize,
        tile_m: usize,
    ) -> LayerSpec {
        LayerSpec {
            h,
            w,
            c,
            k,
            r,
            batch: 1,
            stride: 1,
            padding,
            tile_m,
        }
    }

    #[test]
    fn single_product() {
        let s = spec(1, 1, 1, 1, 1, 0, 1);
        let w = QuantizedTensor::new([1, 1, 1, 1], vec![-7]).unwrap();
        let x = QuantizedTensor::new([1, 1, 1, 1], vec![-128]).unwrap();
        assert_eq!(direct_conv(&s, &w, &x).unwrap().as_slice(), &[896]);
    }

    #[test]
    fn delta_filter_reproduces_input() {
        let s = spec(5, 6, 2, 2, 3, 1, 2);
        let x = QuantizedTensor::from_fn(s.input_dims(), |[_, y, xx, c]| {
            (y * 7 + xx * 3 + c) as i8 - 20
        });
        let w = QuantizedTensor::from_fn(s.weight_dims(), |[a, b, c, k]| {
            (a == 1 && b == 1 && c == k) as i8
        });
        let out = direct_conv(&s, &w, &x).unwrap();
        assert_eq!(out.dims(), [1, 5, 6, 2]);
        for y in 0..5 {
            for xx in 0..6 {
                for c in 0..2 {
                    assert_eq!(out.get([0, y, xx, c]), x.get([0, y, xx, c]) as i32);
                }
            }
        }
    }

    #[test]
    fn geometry_examples() {
        let g = TileGrid::new(&spec(14, 14, 1, 1, 3, 1, 14));
        assert_eq!((g.num_tiles(), g.n), (1, 16));
        let g = TileGrid::new(&spec(4, 4, 1, 1, 3, 0, 2));
        assert_eq!((g.num_tiles(), g.n, g.out_h), (1, 4, 2));
        let g = TileGrid::new(&spec(224, 224, 1, 1, 3, 1, 14));
        assert_eq!(g.num_tiles(), 256);
        let g = TileGrid::new(&spec(15, 9, 1, 1, 3, 0, 4));
        assert_eq!((g.tiles_h, g.tiles_w), (4, 2));
        assert_eq!(g.extent(7), (1, 3));
    }

    #[test]
    fn decompose_patches() {
        let s = spec(5, 5, 2, 1, 3, 1, 2);
        let x = QuantizedTensor::from_fn(s.input_dims(), |[_, y, xx, c]| {
            (10 * y + xx) as i8 * if c == 0 { 1 } else { -1 }
        });
        let (grid, patches) = tile_decompose(&s, &x).unwrap();
        assert_eq!(grid.num_tiles(), 9);
        assert_eq!(patches.len(), 18);
        let p = &patches[0];
        assert_eq!((p.batch, p.channel, p.tile), (0, 0, 0));
        // first row and column come from padding
        assert!((0..4).all(|i| p.data[(0, i)] == 0 && p.data[(i, 0)] == 0));
        assert_eq!(p.data[(1, 1)], 0);
        assert_eq!(p.data[(2, 3)], 12);
        assert_eq!(patches[1].data[(2, 3)], -12);
    }

    #[test]
    fn range_examples() {
        let sys = RnsSystem::new(&[253, 251, 247]).unwrap();
        let r = range_check(&spec(8, 8, 16, 1, 3, 1, 2), &sys, None);
        assert!(r.fits);
        assert_eq!(r.static_bound, BigInt::from(9 * 16 * 128 * 128));
        let big = spec(8, 8, 512, 1, 5, 2, 4);
        assert!(!range_check(&big, &sys, None).fits);
        assert!(range_check(&big, &sys, Some(300_000)).fits);
        assert!(!range_check(&big, &sys, Some(8_000_000)).fits);
    }

    #[test]
    fn stride_two_falls_back() {
        let s = LayerSpec {
            stride: 2,
            ..spec(9, 9, 3, 2, 3, 1, 4)
        };
        let x = QuantizedTensor::from_fn(s.input_dims(), |[_, y, xx, c]| (y * 9 + xx + c) as i8);
        let w = QuantizedTensor::from_fn(s.weight_dims(), |[a, b, c, k]| (a + b + c + k) as i8 - 3);
        let sys = RnsSystem::new(&[253, 251, 247]).unwrap();
        assert_eq!(
            winograd_layer_conv(&s, &w, &x, &sys, RangePolicy::Static),
            Err(Error::UnsupportedStride(2))
        );
        let out = conv_layer(&s, &w, &x, &sys, RangePolicy::Static).unwrap();
        assert_eq!(out.dims(), [1, 5, 5, 2]);
        assert_eq!(out, direct_conv(&s, &w, &x).unwrap());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let s = spec(11, 13, 3, 4, 3, 1, 4);
        let x =
            QuantizedTensor::from_fn(s.input_dims(), |[_, y, xx, c]| (y * 13 + xx * 5 + c) as i8);
        let w = QuantizedTensor::zeros(s.weight_dims());
        let sys = RnsSystem::new(&[253, 251, 247]).unwrap();
        let out = winograd_layer_conv(&s, &w, &x, &sys, RangePolicy::Static).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0));
    }

    #[test]
    fn small_layer_matches_direct() {
        let s = LayerSpec {
            batch: 2,
            ..spec(9, 7, 3, 2, 3, 1, 4)
        };
        let x = QuantizedTensor::from_fn(s.input_dims(), |[b, y, xx, c]| {
            ((b * 31 + y * 17 + xx * 5 + c * 3) % 256) as u8 as i8
        });
        let w = QuantizedTensor::from_fn(s.weight_dims(), |[a, bb, c, k]| {
            ((a * 19 + bb * 7 + c * 11 + k * 29) % 256) as u8 as i8
        });
        for moduli in [&[253i64, 251, 247][..], &[4001, 4331]] {
            let sys = RnsSystem::new(moduli).unwrap();
            let out = winograd_layer_conv(&s, &w, &x, &sys, RangePolicy::Static).unwrap();
            assert_eq!(out, direct_conv(&s, &w, &x).unwrap());
        }
    }

    #[test]
    fn shape_errors() {
        let s = spec(4, 4, 1, 1, 3, 0, 2);
        let x = QuantizedTensor::zeros([1, 4, 4, 2]);
        let w = QuantizedTensor::zeros(s.weight_dims());
        assert!(matches!(
            direct_conv(&s, &w, &x),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(QuantizedTensor::new([1, 2, 2, 1], vec![0; 3]).is_err());
        let too_big = spec(40, 40, 1, 1, 5, 0, 17);
        assert!(matches!(
            too_big.validate_winograd(),
            Err(Error::InvalidSize(_))
        ));
    }

    #[test]
    fn operation_count_examples() {
        let exact = spec(24, 24, 8, 8, 5, 0, 12);
        assert_eq!((exact.out_h(), exact.out_w()), (20, 20));
        let fit = spec(28, 28, 8, 8, 5, 0, 12);
        let ops = count_operations(&fit, 2, 12).unwrap();
        assert!((ops.reduction_ratio - 7.03).abs() < 0.005);
        let ops = count_operations(&spec(10, 10, 4, 4, 3, 0, 4), 3, 4).unwrap();
        assert!((ops.reduction_ratio - 4.0 / 3.0).abs() < 1e-12);
    }
}
