//! Single-tile Winograd convolution, per modulus and across an RNS.
//!
//! Each modular matrix product accumulates whole dot products in `i32` and
//! reduces once at the end. Only when the operands are wide enough for the
//! sum to approach `i32::MAX` (large 16-bit moduli) is the dot product split
//! into chunks with an intermediate reduction.

use num_bigint::BigInt;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::residue::{Modulus, RnsSystem};
use crate::simd::multiversion;
use crate::transforms::{
    default_points, derive_transforms, ExactTransformSet, InterpolationPoints, ModularTransformSet,
};
use crate::Tile;

/// Largest magnitude of an int8 element.
pub const INT8_MAX_ABS: i64 = 128;

use crate::simd::max_abs_i32 as max_abs;

/// `lhs (rows x inner) * rhs (inner x cols) mod m`, balanced.
///
/// Accumulates straight into `out`, row by row, so the inner loop runs along
/// the contiguous columns of `rhs`.
pub(crate) fn mod_matmul_into(
    lhs: &[i32],
    rhs: &[i32],
    rows: usize,
    inner: usize,
    cols: usize,
    m: Modulus,
    out: &mut [i32],
) {
    debug_assert_eq!(lhs.len(), rows * inner);
    debug_assert_eq!(rhs.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * cols);
    let limit = Modulus::accumulation_limit(max_abs(lhs), max_abs(rhs), m.half() as i64);
    assert!(limit > 0, "operands too wide for 32-bit accumulation");
    mod_matmul_rows(lhs, rhs, inner, cols, limit, m, out);
}

multiversion!(fn mod_matmul_rows(lhs: &[i32], rhs: &[i32], inner: usize, cols: usize, limit: usize, m: Modulus, out: &mut [i32]) => mod_matmul_kernel);

#[inline(always)]
fn mod_matmul_kernel(
    lhs: &[i32],
    rhs: &[i32],
    inner: usize,
    cols: usize,
    limit: usize,
    m: Modulus,
    out: &mut [i32],
) {
    const MR: usize = 4;
    let rows = out.len() / cols;
    let mut r = 0;
    while r + MR <= rows {
        mod_strip::<MR>(
            &lhs[r * inner..],
            rhs,
            inner,
            cols,
            limit,
            m,
            &mut out[r * cols..(r + MR) * cols],
        );
        r += MR;
    }
    while r < rows {
        mod_strip::<1>(
            &lhs[r * inner..],
            rhs,
            inner,
            cols,
            limit,
            m,
            &mut out[r * cols..(r + 1) * cols],
        );
        r += 1;
    }
}

/// `R` rows of a modular product; `NR`-wide column groups accumulate in registers.
#[inline(always)]
fn mod_strip<const R: usize>(
    lhs: &[i32],
    rhs: &[i32],
    inner: usize,
    cols: usize,
    limit: usize,
    m: Modulus,
    out: &mut [i32],
) {
    const NR: usize = 32;
    let a: [&[i32]; R] = std::array::from_fn(|i| &lhs[i * inner..(i + 1) * inner]);
    let mut j0 = 0;
    while j0 + NR <= cols {
        let mut acc = [[0i32; NR]; R];
        for k in 0..inner {
            if k > 0 && k % limit == 0 {
                acc.iter_mut().for_each(|row| m.reduce_slice(row));
            }
            let b: &[i32; NR] = rhs[k * cols + j0..k * cols + j0 + NR]
                .try_into()
                .expect("NR columns");
            for (acc_row, a_row) in acc.iter_mut().zip(&a) {
                let av = a_row[k];
                for (s, x) in acc_row.iter_mut().zip(b) {
                    *s = s.wrapping_add(av.wrapping_mul(*x));
                }
            }
        }
        for (i, acc_row) in acc.iter_mut().enumerate() {
            m.reduce_slice(acc_row);
            out[i * cols + j0..i * cols + j0 + NR].copy_from_slice(acc_row);
        }
        j0 += NR;
    }
    if j0 < cols {
        for (i, a_row) in a.iter().enumerate() {
            let out_row = &mut out[i * cols + j0..(i + 1) * cols];
            out_row.fill(0);
            for (k, &av) in a_row.iter().enumerate() {
                if k > 0 && k % limit == 0 {
                    m.reduce_slice(out_row);
                }
                if av == 0 {
                    continue;
                }
                for (o, &x) in out_row.iter_mut().zip(&rhs[k * cols + j0..(k + 1) * cols]) {
                    *o = o.wrapping_add(av.wrapping_mul(x));
                }
            }
            m.reduce_slice(out_row);
        }
    }
}

fn mod_matmul(lhs: &Tile, rhs: &Tile, m: Modulus) -> Tile {
    assert_eq!(lhs.cols(), rhs.rows());
    let mut out = Tile::zeros(lhs.rows(), rhs.cols());
    mod_matmul_into(
        lhs.as_slice(),
        rhs.as_slice(),
        lhs.rows(),
        lhs.cols(),
        rhs.cols(),
        m,
        out.as_mut_slice(),
    );
    out
}

fn sandwich(l: &Tile, x: &Tile, r: &Tile, m: Modulus) -> Tile {
    mod_matmul(&mod_matmul(l, x, m), r, m)
}

fn check_shape(t: &Tile, n: usize, what: &str) {
    assert!(
        t.rows() == n && t.cols() == n,
        "{what} tile must be {n}x{n}, got {}x{}",
        t.rows(),
        t.cols()
    );
}

/// `G_m g G_m^T (mod m)` for an `R x R` filter.
pub fn filter_transform_mod(g: &Tile, mt: &ModularTransformSet) -> Tile {
    check_shape(g, mt.r(), "filter");
    sandwich(&mt.g, g, &mt.gt, mt.modulus)
}

/// `B_m^T d B_m (mod m)` for an `N x N` input patch.
pub fn input_transform_mod(d: &Tile, mt: &ModularTransformSet) -> Tile {
    check_shape(d, mt.n(), "input");
    sandwich(&mt.bt, d, &mt.b, mt.modulus)
}

/// `A_m^T t A_m (mod m)` back to an `M x M` output tile.
pub fn backward_transform_mod(t: &Tile, mt: &ModularTransformSet) -> Tile {
    check_shape(t, mt.n(), "transformed");
    sandwich(&mt.at, t, &mt.a, mt.modulus)
}

/// One output tile modulo one modulus: the valid correlation of `g` over `d`, reduced.
pub fn tile_conv_mod(g: &Tile, d: &Tile, mt: &ModularTransformSet) -> Tile {
    let u = filter_transform_mod(g, mt);
    let v = input_transform_mod(d, mt);
    let m = mt.modulus;
    let prod = Tile::from_fn(mt.n(), mt.n(), |i, j| {
        m.reduce(u[(i, j)] as i64 * v[(i, j)] as i64)
    });
    backward_transform_mod(&prod, mt)
}

/// Valid-mode 2-D correlation (no filter flip).
pub fn direct_correlate(g: &Tile, d: &Tile) -> Matrix<i64> {
    let r = g.rows();
    let out_rows = d.rows() + 1 - r;
    let out_cols = d.cols() + 1 - g.cols();
    Matrix::from_fn(out_rows, out_cols, |i, j| {
        let mut s = 0i64;
        for a in 0..r {
            for b in 0..g.cols() {
                s += g[(a, b)] as i64 * d[(i + a, j + b)] as i64;
            }
        }
        s
    })
}

/// Transform set for one `F(M x M, R x R)` reduced modulo every modulus of an RNS.
#[derive(Debug, Clone)]
pub struct WinogradRns {
    exact: ExactTransformSet,
    system: RnsSystem,
    modular: Vec<ModularTransformSet>,
}

impl WinogradRns {
    /// Uses [`default_points`].
    pub fn new(m: usize, r: usize, system: RnsSystem) -> Result<Self> {
        let n = m + r - 1;
        if n > crate::transforms::MAX_TILE {
            return Err(Error::InvalidSize(format!(
                "N = {n} exceeds {}",
                crate::transforms::MAX_TILE
            )));
        }
        Self::with_points(m, r, &default_points(n)?, system)
    }

    pub fn with_points(
        m: usize,
        r: usize,
        pts: &InterpolationPoints,
        system: RnsSystem,
    ) -> Result<Self> {
        let exact = derive_transforms(m, r, pts)?;
        let modular = system
            .moduli()
            .iter()
            .map(|&q| exact.reduce_mod(q))
            .collect::<Result<Vec<_>>>()?;
        Ok(WinogradRns {
            exact,
            system,
            modular,
        })
    }

    pub fn exact(&self) -> &ExactTransformSet {
        &self.exact
    }

    pub fn system(&self) -> &RnsSystem {
        &self.system
    }

    pub fn modular(&self) -> &[ModularTransformSet] {
        &self.modular
    }

    pub fn m(&self) -> usize {
        self.exact.m
    }

    pub fn r(&self) -> usize {
        self.exact.r
    }

    pub fn n(&self) -> usize {
        self.exact.n()
    }

    /// Exact `M x M` correlation of int8 `g` over int8 `d`, via every residue channel and MRC.
    pub fn tile_conv(&self, g: &Tile, d: &Tile) -> Result<Matrix<i64>> {
        rns_tile_conv(g, d, &self.system, &self.modular)
    }
}

/// [`WinogradRns::tile_conv`] with explicitly supplied transform sets.
pub fn rns_tile_conv(
    g: &Tile,
    d: &Tile,
    sys: &RnsSystem,
    mts: &[ModularTransformSet],
) -> Result<Matrix<i64>> {
    if mts.len() != sys.len() || mts.iter().zip(sys.moduli()).any(|(mt, m)| mt.modulus != *m) {
        return Err(Error::SystemMismatch);
    }
    let r = g.rows() as i64;
    let required = BigInt::from(r * r * INT8_MAX_ABS * INT8_MAX_ABS);
    if &required > sys.signed_bound() {
        return Err(Error::DynamicRangeExceeded {
            required,
            available: sys.signed_bound().clone(),
        });
    }
    debug_assert!(g
        .as_slice()
        .iter()
        .chain(d.as_slice())
        .all(|v| i8::try_from(*v).is_ok()));
    let per_modulus: Vec<Tile> = mts.iter().map(|mt| tile_conv_mod(g, d, mt)).collect();
    let m = per_modulus[0].rows();
    let mut residues = vec![0i32; mts.len()];
    Ok(Matrix::from_fn(m, m, |i, j| {
        for (slot, t) in residues.iter_mut().zip(&per_modulus) {
            *slot = t[(i, j)];
        }
        sys.reconstruct_i128(&residues) as i64
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RationalMatrix;
    use num_rational::BigRational;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn modular(m: usize, r: usize, q: i64) -> ModularTransformSet {
        derive_transforms(m, r, &default_points(m + r - 1).unwrap())
            .unwrap()
            .reduce_mod(Modulus::new(q).unwrap())
            .unwrap()
    }

    fn random_tile(rng: &mut ChaCha8Rng, n: usize) -> Tile {
        Tile::from_fn(n, n, |_, _| rng.gen_range(-128..=127))
    }

    fn to_rational(t: &Tile) -> RationalMatrix {
        t.map(|v| BigRational::from_integer((*v).into()))
    }

    #[test]
    fn zeros_stay_zero() {
        let mt = modular(4, 3, 251);
        let z3 = Tile::zeros(3, 3);
        let z6 = Tile::zeros(6, 6);
        assert_eq!(filter_transform_mod(&z3, &mt), z6);
        assert_eq!(input_transform_mod(&z6, &mt), z6);
        assert_eq!(backward_transform_mod(&z6, &mt), Tile::zeros(4, 4));
        let sys = RnsSystem::new(&[253, 251, 247]).unwrap();
        let w = WinogradRns::new(10, 3, sys).unwrap();
        assert_eq!(
            w.tile_conv(&z3, &Tile::zeros(12, 12)).unwrap(),
            Matrix::zeros(10, 10)
        );
    }

    #[test]
    fn filter_impulse_is_outer_product_of_first_column() {
        let mt = modular(2, 3, 253);
        let mut g = Tile::zeros(3, 3);
        g[(0, 0)] = 1;
        let u = filter_transform_mod(&g, &mt);
        let m = mt.modulus;
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(
                    u[(i, j)],
                    m.reduce(mt.g[(i, 0)] as i64 * mt.g[(j, 0)] as i64)
                );
            }
        }
    }

    #[test]
    fn input_impulse_selects_bt_columns() {
        let mt = modular(4, 3, 241);
        let mut d = Tile::zeros(6, 6);
        d[(2, 3)] = 1;
        let v = input_transform_mod(&d, &mt);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(
                    v[(i, j)],
                    mt.modulus
                        .reduce(mt.bt[(i, 2)] as i64 * mt.bt[(j, 3)] as i64)
                );
            }
        }
    }

    #[test]
    fn backward_impulse() {
        let mt = modular(4, 3, 241);
        let mut t = Tile::zeros(6, 6);
        t[(5, 1)] = 1;
        let y = backward_transform_mod(&t, &mt);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(
                    y[(i, j)],
                    mt.modulus
                        .reduce(mt.at[(i, 5)] as i64 * mt.at[(j, 1)] as i64)
                );
            }
        }
    }

    #[test]
    fn centre_delta_filter_shifts_window() {
        let mt = modular(4, 3, 251);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_tile(&mut rng, 6);
        let mut g = Tile::zeros(3, 3);
        g[(1, 1)] = 1;
        let y = tile_conv_mod(&g, &d, &mt);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(y[(i, j)], mt.modulus.reduce(d[(i + 1, j + 1)] as i64));
            }
        }
    }

    #[test]
    fn transforms_match_exact_rationals() {
        let exact = derive_transforms(10, 3, &default_points(12).unwrap()).unwrap();
        let m = Modulus::new(253).unwrap();
        let mt = exact.reduce_mod(m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let g = random_tile(&mut rng, 3);
            let d = random_tile(&mut rng, 12);
            let gq = to_rational(&g);
            let dq = to_rational(&d);
            let u = exact
                .g
                .matmul(&gq)
                .unwrap()
                .matmul(&exact.g.transpose())
                .unwrap();
            let v = exact
                .bt
                .matmul(&dq)
                .unwrap()
                .matmul(&exact.bt.transpose())
                .unwrap();
            let reduce =
                |x: &RationalMatrix| x.map(|e| crate::transforms::reduce_rational(e, m).unwrap());
            assert_eq!(filter_transform_mod(&g, &mt), reduce(&u));
            assert_eq!(input_transform_mod(&d, &mt), reduce(&v));
            let t = random_tile(&mut rng, 12).map(|v| m.reduce(*v as i64));
            let back = exact
                .at
                .matmul(&to_rational(&t))
                .unwrap()
                .matmul(&exact.at.transpose())
                .unwrap();
            assert_eq!(backward_transform_mod(&t, &mt), reduce(&back));
        }
    }

    #[test]
    fn ternary_f2x2_against_direct() {
        // The full {-1,0,1} product space is 3^9 * 3^16 pairs. Cover every
        // ternary filter against a spread of inputs, every 61st ternary input
        // against a rotating filter, and every basis pair (which spans the
        // whole space by bilinearity).
        let mt = modular(2, 3, 253);
        let m = mt.modulus;
        let ternary = |code: u64, n: usize| {
            Tile::from_fn(n, n, |i, j| {
                ((code / 3u64.pow((i * n + j) as u32)) % 3) as i32 - 1
            })
        };
        let check = |g: &Tile, d: &Tile| {
            let want = direct_correlate(g, d).map(|v| m.reduce(*v));
            assert_eq!(tile_conv_mod(g, d, &mt), want, "g={g:?} d={d:?}");
        };
        let inputs: Vec<Tile> = (0..3u64.pow(16))
            .step_by(1_000_003)
            .map(|c| ternary(c, 4))
            .collect();
        for gc in 0..3u64.pow(9) {
            let g = ternary(gc, 3);
            for d in &inputs {
                check(&g, d);
            }
        }
        for (i, dc) in (0..3u64.pow(16)).step_by(61).enumerate() {
            check(&ternary(i as u64 % 3u64.pow(9), 3), &ternary(dc, 4));
        }
        for a in 0..9 {
            for b in 0..16 {
                let g = Tile::from_fn(3, 3, |i, j| (i * 3 + j == a) as i32);
                let d = Tile::from_fn(4, 4, |i, j| (i * 4 + j == b) as i32);
                check(&g, &d);
            }
        }
    }

    #[test]
    fn f14_random_mod_251() {
        let mt = modular(14, 3, 251);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let g = random_tile(&mut rng, 3);
            let d = random_tile(&mut rng, 16);
            let want = direct_correlate(&g, &d).map(|v| mt.modulus.reduce(*v));
            assert_eq!(tile_conv_mod(&g, &d, &mt), want);
        }
    }

    #[test]
    fn rns_tile_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for moduli in [&[253i64, 251, 247][..], &[4001, 4331]] {
            let w = WinogradRns::new(10, 3, RnsSystem::new(moduli).unwrap()).unwrap();
            for _ in 0..20 {
                let g = random_tile(&mut rng, 3);
                let d = random_tile(&mut rng, 12);
                assert_eq!(w.tile_conv(&g, &d).unwrap(), direct_correlate(&g, &d));
                assert_eq!(
                    rns_tile_conv(&g, &d, w.system(), w.modular()).unwrap(),
                    direct_correlate(&g, &d)
                );
            }
        }
    }

    #[test]
    fn rns_tile_range_and_mismatch() {
        let w = WinogradRns::new(2, 3, RnsSystem::new(&[7, 9]).unwrap());
        // 7 divides no F(2x2,3x3) denominator, so construction succeeds...
        let w = w.unwrap();
        // ...but 9 * 128^2 exceeds the +/-31 dynamic range
        let err = w
            .tile_conv(&Tile::zeros(3, 3), &Tile::zeros(4, 4))
            .unwrap_err();
        assert!(matches!(err, Error::DynamicRangeExceeded { .. }));

        let sys = RnsSystem::new(&[253, 251, 247]).unwrap();
        let w = WinogradRns::new(2, 3, sys.clone()).unwrap();
        let err = rns_tile_conv(
            &Tile::zeros(3, 3),
            &Tile::zeros(4, 4),
            &sys,
            &w.modular()[..2],
        );
        assert_eq!(err.unwrap_err(), Error::SystemMismatch);
    }

    #[test]
    fn chunked_accumulation_matches_wide() {
        // a modulus near the top of the 16-bit range forces chunked reduction
        let m = Modulus::new(32749).unwrap();
        let h = m.half();
        let inner = 40;
        let lhs: Vec<i32> = (0..inner)
            .map(|k| if k % 2 == 0 { h } else { -h + k as i32 })
            .collect();
        let rhs: Vec<i32> = (0..inner).map(|k| h - k as i32).collect();
        assert!(Modulus::accumulation_limit(h as i64, h as i64, h as i64) < inner);
        let mut out = [0i32];
        mod_matmul_into(&lhs, &rhs, 1, inner, 1, m, &mut out);
        let wide: i64 = lhs
            .iter()
            .zip(&rhs)
            .map(|(a, b)| *a as i64 * *b as i64)
            .sum();
        assert_eq!(out[0], m.reduce(wide));
    }
}
