//! Exact construction of Winograd transform matrices.
//!
//! For `F(M x M, R x R)` with `N = M + R - 1` interpolation points the output
//! tile is `y = A^T [(G g G^T) ⊙ (B^T d B)] A`. All three matrices come from
//! Vandermonde matrices over the points, `B^T` from the closed-form inverse.
//! The Lagrange denominators of `V^{-1}` are moved out of `B^T` into the rows
//! of `G`, so that `B^T` is integral for integer points:
//!
//! * `B^T[j] = sign(d_j) * coeffs(prod_{m != j} (x - S_m))`
//! * `G[j]   = (1, S_j, .., S_j^{R-1}) / |d_j|`
//! * `A^T[i][j] = S_j^i`
//!
//! where `d_j = prod_{m != j} (S_j - S_m)`. The point at infinity evaluates a
//! polynomial to its leading coefficient, so its row in every evaluation
//! matrix is the last standard basis vector and its denominator is 1.

use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::residue::Modulus;
use crate::RationalMatrix;

/// Largest supported transform size `N = M + R - 1`.
pub const MAX_TILE: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Point {
    Finite(BigRational),
    Infinity,
}

impl Point {
    pub fn int(v: i64) -> Point {
        Point::Finite(BigRational::from_integer(v.into()))
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Point::Finite(v) => write!(f, "{v}"),
            Point::Infinity => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Point {
    type Err = Error;

    fn from_str(s: &str) -> Result<Point> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s == "∞" {
            return Ok(Point::Infinity);
        }
        s.parse::<BigRational>()
            .map(Point::Finite)
            .map_err(|_| Error::InvalidPoints(format!("cannot parse point {s:?}")))
    }
}

/// Distinct interpolation points; infinity may only be the last one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterpolationPoints(Vec<Point>);

impl InterpolationPoints {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidPoints("need at least two points".into()));
        }
        if let Some(pos) = points.iter().position(|p| *p == Point::Infinity) {
            if pos != points.len() - 1 {
                return Err(Error::InvalidPoints(
                    "infinity must be the last point".into(),
                ));
            }
        }
        for (i, p) in points.iter().enumerate() {
            if points[i + 1..].contains(p) {
                return Err(Error::InvalidPoints(format!("point {p} is repeated")));
            }
        }
        Ok(InterpolationPoints(points))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.0
    }

    fn finite(&self) -> impl Iterator<Item = &BigRational> {
        self.0.iter().filter_map(|p| match p {
            Point::Finite(v) => Some(v),
            Point::Infinity => None,
        })
    }
}

/// `0, 1, -1, 2, -2, ...` truncated to `n - 1` entries, then infinity.
pub fn default_points(n: usize) -> Result<InterpolationPoints> {
    if n < 2 {
        return Err(Error::InvalidPoints("need at least two points".into()));
    }
    let mut points: Vec<Point> = (0..n - 1)
        .map(|i| {
            let k = (i as i64 + 1) / 2;
            Point::int(if i % 2 == 1 { k } else { -k })
        })
        .collect();
    points.push(Point::Infinity);
    InterpolationPoints::new(points)
}

/// Rows `(1, s, .., s^{width-1})` per point; infinity maps to `e_{width-1}`.
fn evaluation_matrix(pts: &InterpolationPoints, width: usize) -> RationalMatrix {
    Matrix::from_fn(pts.len(), width, |i, k| match &pts.0[i] {
        Point::Finite(s) => num_traits::pow(s.clone(), k),
        Point::Infinity => {
            if k + 1 == width {
                BigRational::one()
            } else {
                BigRational::zero()
            }
        }
    })
}

pub fn vandermonde(pts: &InterpolationPoints) -> RationalMatrix {
    evaluation_matrix(pts, pts.len())
}

/// Coefficients (ascending, length `n`) of `prod (x - s)` over `roots`: the
/// signed elementary symmetric polynomials `(-1)^{t-i} e_{t-i}(roots)`.
fn monic_from_roots<'a>(
    roots: impl Iterator<Item = &'a BigRational>,
    n: usize,
) -> Vec<BigRational> {
    let mut c = vec![BigRational::zero(); n];
    c[0] = BigRational::one();
    let mut degree = 0;
    for s in roots {
        degree += 1;
        for i in (0..=degree.min(n - 1)).rev() {
            let lower = if i > 0 {
                c[i - 1].clone()
            } else {
                BigRational::zero()
            };
            c[i] = lower - s * &c[i];
        }
    }
    c
}

/// Numerator coefficients and denominator `d_j` of every column of `V^{-1}`.
fn lagrange_basis(pts: &InterpolationPoints) -> Vec<(Vec<BigRational>, BigRational)> {
    let n = pts.len();
    pts.0
        .iter()
        .enumerate()
        .map(|(j, pj)| match pj {
            Point::Finite(sj) => {
                let others = || {
                    pts.0.iter().enumerate().filter_map(move |(m, p)| match p {
                        Point::Finite(s) if m != j => Some(s),
                        _ => None,
                    })
                };
                let numer = monic_from_roots(others(), n);
                let denom = others().fold(BigRational::one(), |acc, s| acc * (sj - s));
                (numer, denom)
            }
            Point::Infinity => (monic_from_roots(pts.finite(), n), BigRational::one()),
        })
        .collect()
}

/// Closed-form inverse of [`vandermonde`]:
/// `V^{-1}[i][j] = (-1)^{t-i} e_{t-i}(S \ S_j) / prod_{m != j} (S_j - S_m)`.
pub fn vandermonde_inverse(pts: &InterpolationPoints) -> RationalMatrix {
    let basis = lagrange_basis(pts);
    let n = pts.len();
    Matrix::from_fn(n, n, |i, j| &basis[j].0[i] / &basis[j].1)
}

/// `A^T`, `G`, `B^T` for `F(M x M, R x R)` in exact rationals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactTransformSet {
    pub m: usize,
    pub r: usize,
    pub points: InterpolationPoints,
    pub at: RationalMatrix,
    pub g: RationalMatrix,
    pub bt: RationalMatrix,
    /// Common factor with `G = alpha * G'`.
    pub alpha: BigRational,
    pub g_prime: Matrix<BigInt>,
}

pub fn derive_transforms(
    m: usize,
    r: usize,
    pts: &InterpolationPoints,
) -> Result<ExactTransformSet> {
    if m == 0 || r == 0 {
        return Err(Error::InvalidSize("M and R must be positive".into()));
    }
    let n = m + r - 1;
    if pts.len() != n {
        return Err(Error::InvalidSize(format!(
            "F({m}x{m},{r}x{r}) needs {n} points, got {}",
            pts.len()
        )));
    }
    let basis = lagrange_basis(pts);
    let bt = Matrix::from_fn(n, n, |j, i| {
        let (numer, denom) = &basis[j];
        if denom.is_negative() {
            -&numer[i]
        } else {
            numer[i].clone()
        }
    });
    let filter_eval = evaluation_matrix(pts, r);
    let g = Matrix::from_fn(n, r, |j, k| &filter_eval[(j, k)] / basis[j].1.abs());
    let at = evaluation_matrix(pts, m).transpose();

    let nonzero = || g.as_slice().iter().filter(|v| !v.is_zero());
    let lcm = nonzero().fold(BigInt::one(), |acc, v| acc.lcm(v.denom()));
    let gcd = nonzero().fold(BigInt::zero(), |acc, v| acc.gcd(v.numer()));
    let alpha = if gcd.is_zero() {
        BigRational::one()
    } else {
        BigRational::new(gcd, lcm)
    };
    let g_prime = g.map(|v| {
        let q = v / &alpha;
        debug_assert!(q.is_integer());
        q.to_integer()
    });
    Ok(ExactTransformSet {
        m,
        r,
        points: pts.clone(),
        at,
        g,
        bt,
        alpha,
        g_prime,
    })
}

/// Per-modulus transforms with balanced entries, plus the transposes the
/// kernels multiply by on the right.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModularTransformSet {
    pub modulus: Modulus,
    pub at: Matrix<i32>,
    pub g: Matrix<i32>,
    pub bt: Matrix<i32>,
    pub a: Matrix<i32>,
    pub gt: Matrix<i32>,
    pub b: Matrix<i32>,
}

impl ModularTransformSet {
    pub fn m(&self) -> usize {
        self.at.rows()
    }

    pub fn r(&self) -> usize {
        self.g.cols()
    }

    pub fn n(&self) -> usize {
        self.bt.rows()
    }
}

/// `p/q -> p * q^{-1} (mod m)`, balanced.
pub fn reduce_rational(v: &BigRational, m: Modulus) -> Result<i32> {
    let q = v
        .denom()
        .mod_floor(&BigInt::from(m.get()))
        .to_i64()
        .unwrap();
    let inv = m.inverse(q).map_err(|e| match e {
        Error::NotCoprime {
            modulus, factor, ..
        } => Error::NotCoprime {
            value: v.denom().clone(),
            modulus,
            factor,
        },
        e => e,
    })?;
    Ok(m.reduce(m.reduce_big(v.numer()) as i64 * inv as i64))
}

impl ExactTransformSet {
    pub fn n(&self) -> usize {
        self.m + self.r - 1
    }

    /// Every distinct denominator of `A^T`, `G` and `B^T`, ascending.
    pub fn denominators(&self) -> Vec<BigInt> {
        let mut dens: Vec<BigInt> = [&self.at, &self.g, &self.bt]
            .iter()
            .flat_map(|mat| mat.as_slice().iter().map(|v| v.denom().clone()))
            .filter(|d| !d.is_one())
            .collect();
        dens.sort();
        dens.dedup();
        dens
    }

    /// First common factor between `m` and a transform denominator, if any.
    pub fn shared_factor(&self, m: i64) -> Option<i64> {
        let m = BigInt::from(m);
        self.denominators().iter().find_map(|d| {
            let g = d.gcd(&m);
            (!g.is_one()).then(|| g.to_i64().unwrap())
        })
    }

    pub fn check_modulus_compatibility(&self, m: Modulus) -> bool {
        self.shared_factor(m.get() as i64).is_none()
    }

    pub fn reduce_mod(&self, m: Modulus) -> Result<ModularTransformSet> {
        let reduce = |mat: &RationalMatrix| mat.try_map(|v| reduce_rational(v, m));
        let at = reduce(&self.at)?;
        let g = reduce(&self.g)?;
        let bt = reduce(&self.bt)?;
        Ok(ModularTransformSet {
            modulus: m,
            a: at.transpose(),
            gt: g.transpose(),
            b: bt.transpose(),
            at,
            g,
            bt,
        })
    }

    /// `A^T [(G g G^T) ⊙ (B^T d B)] A` in exact rationals.
    pub fn correlate_exact(
        &self,
        g: &RationalMatrix,
        d: &RationalMatrix,
    ) -> Result<RationalMatrix> {
        let u = self.g.matmul(g)?.matmul(&self.g.transpose())?;
        let v = self.bt.matmul(d)?.matmul(&self.bt.transpose())?;
        self.at
            .matmul(&u.hadamard(&v)?)?
            .matmul(&self.at.transpose())
    }

    pub fn data_width(&self, input_bits: u32) -> Result<DataWidthReport> {
        if !(2..=32).contains(&input_bits) {
            return Err(Error::InvalidSize(format!("input width {input_bits}")));
        }
        let n = self.n() as f64;
        let sum_sq = |it: &mut dyn Iterator<Item = BigRational>| {
            it.fold(BigRational::zero(), |acc, v| acc + &v * &v)
                .to_f64()
                .unwrap()
        };
        let filter_magnification = sum_sq(
            &mut self
                .g_prime
                .as_slice()
                .iter()
                .map(|v| BigRational::from_integer(v.clone())),
        ) / n;
        let input_magnification = sum_sq(&mut self.bt.as_slice().iter().cloned()) / n;
        let max_row_l1 = self
            .g_prime
            .row_iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<BigInt>())
            .max()
            .unwrap_or_default();
        let peak = &max_row_l1 * &max_row_l1 * ((BigInt::one() << (input_bits - 1)) - 1);
        Ok(DataWidthReport {
            filter_magnification,
            input_magnification,
            max_row_l1,
            required_bits: 1 + ceil_log2(&peak),
        })
    }
}

fn ceil_log2(v: &BigInt) -> u64 {
    if *v <= BigInt::one() {
        0
    } else {
        (v - 1u32).bits()
    }
}

/// Transform-domain growth for the scaled-integer (non-RNS) Winograd variant.
#[derive(Debug, Clone, PartialEq)]
pub struct DataWidthReport {
    /// `trace(G' G'^T) / N`.
    pub filter_magnification: f64,
    /// `trace(B^T B) / N`.
    pub input_magnification: f64,
    /// Largest row L1-norm of `G'`.
    pub max_row_l1: BigInt,
    /// Sign bit plus `ceil(log2(L^2 * (2^(b-1) - 1)))`.
    pub required_bits: u64,
}

/// `M^2 R^2 / ((M + R - 1)^2 n)`: multiplies saved per Winograd-domain multiply.
pub fn arithmetic_reduction(m: usize, r: usize, n_moduli: usize) -> BigRational {
    let n = (m + r - 1) as i64;
    let num = (m * m * r * r) as i64;
    BigRational::new(num.into(), (n * n * n_moduli as i64).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(v: i64) -> BigRational {
        BigRational::from_integer(v.into())
    }

    fn ints(mat: &RationalMatrix) -> Vec<Vec<i64>> {
        mat.row_iter()
            .map(|r| r.iter().map(|v| v.to_integer().to_i64().unwrap()).collect())
            .collect()
    }

    #[test]
    fn default_point_schedule() {
        let s = |n| {
            default_points(n)
                .unwrap()
                .points()
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        assert_eq!(s(2), "0,inf");
        assert_eq!(s(4), "0,1,-1,inf");
        assert_eq!(s(12), "0,1,-1,2,-2,3,-3,4,-4,5,-5,inf");
        assert_eq!(s(11), "0,1,-1,2,-2,3,-3,4,-4,5,inf");
        assert!(default_points(1).is_err());
    }

    #[test]
    fn invalid_points() {
        assert!(InterpolationPoints::new(vec![Point::Infinity, Point::int(0)]).is_err());
        assert!(InterpolationPoints::new(vec![Point::int(1), Point::int(1)]).is_err());
        assert!(
            InterpolationPoints::new(vec![Point::int(1), Point::Infinity, Point::Infinity])
                .is_err()
        );
        assert!("x".parse::<Point>().is_err());
        assert_eq!("inf".parse::<Point>().unwrap(), Point::Infinity);
        assert_eq!(
            "-3/4".parse::<Point>().unwrap(),
            Point::Finite(BigRational::new((-3).into(), 4.into()))
        );
    }

    #[test]
    fn vandermonde_rows() {
        let v = vandermonde(&default_points(4).unwrap());
        assert_eq!(
            ints(&v),
            vec![
                vec![1, 0, 0, 0],
                vec![1, 1, 1, 1],
                vec![1, -1, 1, -1],
                vec![0, 0, 0, 1]
            ]
        );
        let v = vandermonde(&default_points(12).unwrap());
        let pow5: Vec<i64> = (0..12).map(|k| 5i64.pow(k)).collect();
        assert_eq!(ints(&v)[9], pow5);
        assert_eq!(ints(&v)[1], vec![1; 12]);
    }

    #[test]
    fn bt_first_rows() {
        let t = derive_transforms(4, 3, &default_points(6).unwrap()).unwrap();
        assert_eq!(ints(&t.bt)[0], vec![4, 0, -5, 0, 1, 0]);
        let t = derive_transforms(10, 3, &default_points(12).unwrap()).unwrap();
        assert_eq!(
            ints(&t.bt)[0],
            vec![14400, 0, -21076, 0, 7645, 0, -1023, 0, 55, 0, -1, 0]
        );
    }

    #[test]
    fn f2x2_matrices() {
        let t = derive_transforms(2, 3, &default_points(4).unwrap()).unwrap();
        assert_eq!(ints(&t.at), vec![vec![1, 1, 1, 0], vec![0, 1, -1, 1]]);
        assert_eq!(
            ints(&t.bt),
            vec![
                vec![1, 0, -1, 0],
                vec![0, 1, 1, 0],
                vec![0, -1, 1, 0],
                vec![0, -1, 0, 1]
            ]
        );
        assert_eq!(t.alpha, BigRational::new(1.into(), 2.into()));
        let gp: Vec<Vec<i64>> = t
            .g_prime
            .row_iter()
            .map(|r| r.iter().map(|v| v.to_i64().unwrap()).collect())
            .collect();
        assert_eq!(
            gp,
            vec![vec![2, 0, 0], vec![1, 1, 1], vec![1, -1, 1], vec![0, 0, 2]]
        );
        assert_eq!(t.g[(1, 1)], BigRational::new(1.into(), 2.into()));
        assert_eq!(t.g[(2, 1)], BigRational::new((-1).into(), 2.into()));
    }

    #[test]
    fn f4x4_alpha() {
        let t = derive_transforms(4, 3, &default_points(6).unwrap()).unwrap();
        assert_eq!(t.alpha, BigRational::new(1.into(), 24.into()));
        let last: Vec<i64> = t
            .g_prime
            .row(5)
            .iter()
            .map(|v| v.to_i64().unwrap())
            .collect();
        assert_eq!(last, vec![0, 0, 24]);
        assert_eq!(t.g[(3, 1)], BigRational::new(1.into(), 12.into()));
    }

    #[test]
    fn f10x10_alpha_and_denominators() {
        let t = derive_transforms(10, 3, &default_points(12).unwrap()).unwrap();
        assert_eq!(t.alpha, BigRational::new(1.into(), 3_628_800.into()));
        assert_eq!(3_628_800, 2i64.pow(8) * 3i64.pow(4) * 5i64.pow(2) * 7);
        let g0: Vec<i64> = t
            .g_prime
            .as_slice()
            .iter()
            .step_by(3)
            .map(|v| v.to_i64().unwrap())
            .collect();
        assert_eq!(g0, vec![252, 210, 210, 120, 120, 45, 45, 10, 10, 1, 1, 0]);
        let dens: Vec<i64> = t
            .denominators()
            .iter()
            .map(|d| d.to_i64().unwrap())
            .collect();
        for d in [14400, 17280, 30240, 80640, 362880, 3628800] {
            assert!(dens.contains(&d), "missing denominator {d}");
        }
    }

    #[test]
    fn modulus_compatibility() {
        let t = derive_transforms(10, 3, &default_points(12).unwrap()).unwrap();
        let m = |v| Modulus::new(v).unwrap();
        assert!(t.check_modulus_compatibility(m(253)));
        assert!(t.check_modulus_compatibility(m(4001)));
        assert!(t.check_modulus_compatibility(m(4331)));
        assert!(!t.check_modulus_compatibility(m(5)));
        // gcd with the first denominator sharing a factor with 10
        assert_eq!(t.shared_factor(10), Some(10));
        assert!(matches!(t.reduce_mod(m(7)), Err(Error::NotCoprime { .. })));
        // 253 = 11 * 23 stops working once 11 shows up as a point difference
        let t14 = derive_transforms(12, 3, &default_points(14).unwrap()).unwrap();
        assert!(!t14.check_modulus_compatibility(m(253)));
    }

    #[test]
    fn modular_reduction_examples() {
        let t = derive_transforms(10, 3, &default_points(12).unwrap()).unwrap();
        let g253 = t.reduce_mod(Modulus::new(253).unwrap()).unwrap();
        let col0: Vec<i32> = (0..12).map(|i| g253.g[(i, 0)]).collect();
        assert_eq!(
            col0,
            vec![12, 10, 10, 78, 78, -34, -34, -120, -120, -12, -12, 0]
        );
        let g4001 = t.reduce_mod(Modulus::new(4001).unwrap()).unwrap();
        assert_eq!(g4001.g[(0, 0)], 222);

        let t2 = derive_transforms(2, 3, &default_points(4).unwrap()).unwrap();
        let m2 = t2.reduce_mod(Modulus::new(253).unwrap()).unwrap();
        // 1/2 is 127 in [0, 253), stored balanced as -126
        assert_eq!(m2.g[(1, 0)], -126);
        assert_eq!(m2.g[(1, 0)].rem_euclid(253), 127);
    }

    #[test]
    fn rational_points_supported() {
        let pts = InterpolationPoints::new(vec![
            Point::int(0),
            Point::int(1),
            Point::int(-1),
            Point::Finite(BigRational::new(1.into(), 2.into())),
            Point::Infinity,
        ])
        .unwrap();
        let v = vandermonde(&pts);
        assert_eq!(
            v.matmul(&vandermonde_inverse(&pts)).unwrap(),
            Matrix::identity(5)
        );
        let t = derive_transforms(3, 3, &pts).unwrap();
        let g = Matrix::from_fn(3, 3, |i, j| q((i * 3 + j) as i64 - 4));
        let d = Matrix::from_fn(5, 5, |i, j| q((i * 7 + j * 3) as i64 % 11 - 5));
        let y = t.correlate_exact(&g, &d).unwrap();
        let direct = Matrix::from_fn(3, 3, |i, j| {
            let mut s = q(0);
            for a in 0..3 {
                for b in 0..3 {
                    s += &g[(a, b)] * &d[(i + a, j + b)];
                }
            }
            s
        });
        assert_eq!(y, direct);
    }

    #[test]
    fn data_width_examples() {
        let t = derive_transforms(2, 3, &default_points(4).unwrap()).unwrap();
        let r = t.data_width(8).unwrap();
        assert_eq!((r.filter_magnification, r.input_magnification), (3.5, 2.0));
        assert_eq!(r.required_bits, 12);
        let t = derive_transforms(4, 3, &default_points(6).unwrap()).unwrap();
        let r = t.data_width(8).unwrap();
        assert_eq!(r.filter_magnification, 125.0);
        assert!((r.input_magnification - 28.7).abs() / 28.7 < 0.01);
        assert_eq!(r.required_bits, 18);
        assert!(t.data_width(1).is_err());
    }

    #[test]
    fn reduction_formula() {
        let f = |m, r, n| arithmetic_reduction(m, r, n).to_f64().unwrap();
        assert!((f(12, 5, 2) - 7.03).abs() < 0.005);
        assert!((f(14, 3, 3) - 2.30).abs() < 0.005);
        assert_eq!(f(2, 3, 3), 0.75);
        assert_eq!(arithmetic_reduction(4, 3, 1), q(4));
    }

    #[test]
    fn ceil_log2_edges() {
        assert_eq!(ceil_log2(&BigInt::from(1)), 0);
        assert_eq!(ceil_log2(&BigInt::from(2)), 1);
        assert_eq!(ceil_log2(&BigInt::from(1143)), 11);
        assert_eq!(ceil_log2(&BigInt::from(1024)), 10);
    }
}
