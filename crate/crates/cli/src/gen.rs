//! `gen-transforms`: exact and per-modulus transform matrices.
//!
//! JSON output (`--format json`):
//!
//! ```json
//! {
//!   "M": 2, "R": 3, "N": 4,
//!   "points": ["0", "1", "-1", "inf"],
//!   "exact": { "AT": [["1", "1", "1", "0"], ...], "G": [["1", "0", "0"], ["1/2", "1/2", "1/2"], ...],
//!              "BT": [...], "alpha": "1/2", "G_prime": [["2", "0", "0"], ...] },
//!   "moduli": [ { "modulus": 253, "AT": [[1, 1, 1, 0], ...], "G": [...], "BT": [...] } ]
//! }
//! ```
//!
//! Exact entries are strings (`p` or `p/q`); modular entries are balanced
//! residues in `[-(m-1)/2, (m-1)/2]`.

use std::io::Write;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rns_winograd::{
    default_points, derive_transforms, ExactTransformSet, InterpolationPoints, Matrix,
    ModularTransformSet, Modulus, Point,
};
use serde::Serialize;

use crate::table::matrix_text;
use crate::{CliError, Format, GenArgs};

#[derive(Debug, Serialize)]
pub struct ExactDump {
    #[serde(rename = "AT")]
    pub at: Vec<Vec<String>>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<String>>,
    #[serde(rename = "BT")]
    pub bt: Vec<Vec<String>>,
    pub alpha: String,
    #[serde(rename = "G_prime")]
    pub g_prime: Vec<Vec<String>>,
}

#[derive(Debug, Serialize)]
pub struct ModularDump {
    pub modulus: i32,
    #[serde(rename = "AT")]
    pub at: Vec<Vec<i32>>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<i32>>,
    #[serde(rename = "BT")]
    pub bt: Vec<Vec<i32>>,
}

#[derive(Debug, Serialize)]
pub struct TransformDump {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub points: Vec<String>,
    pub exact: ExactDump,
    pub moduli: Vec<ModularDump>,
}

fn strings<T: ToString>(m: &Matrix<T>) -> Vec<Vec<String>> {
    m.row_iter()
        .map(|r| r.iter().map(ToString::to_string).collect())
        .collect()
}

fn smallest_prime_factor(n: &BigInt) -> BigInt {
    let mut p = BigInt::from(2);
    while &p * &p <= *n {
        if n.is_multiple_of(&p) {
            return p;
        }
        p += 1;
    }
    n.clone()
}

/// Rejects a modulus sharing a prime with any transform denominator.
pub fn check_compatible(ts: &ExactTransformSet, m: i64) -> Result<(), CliError> {
    let mb = BigInt::from(m);
    // the largest denominator is the most informative to report
    if let Some((d, g)) = ts
        .denominators()
        .into_iter()
        .rev()
        .map(|d| {
            let g = d.gcd(&mb);
            (d, g)
        })
        .find(|(_, g)| !g.is_one())
    {
        return Err(CliError::Usage(format!(
            "modulus {m} shares factor {} with {d}",
            smallest_prime_factor(&g)
        )));
    }
    Ok(())
}

pub fn parse_points(raw: Option<&[String]>, n: usize) -> Result<InterpolationPoints, CliError> {
    let usage = |e: rns_winograd::Error| CliError::Usage(e.to_string());
    match raw {
        None => default_points(n).map_err(usage),
        Some(list) => {
            let pts = list
                .iter()
                .map(|s| s.parse::<Point>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(usage)?;
            if pts.len() != n {
                return Err(CliError::Usage(format!(
                    "{} points given, N = {n} needed",
                    pts.len()
                )));
            }
            InterpolationPoints::new(pts).map_err(usage)
        }
    }
}

/// Derives the exact set and its reductions, checking every modulus first.
pub fn build(args: &GenArgs) -> Result<TransformDump, CliError> {
    if args.m == 0 || args.r == 0 {
        return Err(CliError::Usage("M and R must be positive".into()));
    }
    let n = args.m + args.r - 1;
    let pts = parse_points(args.points.as_deref(), n)?;
    let ts = derive_transforms(args.m, args.r, &pts).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut moduli = Vec::new();
    for &q in &args.moduli {
        check_compatible(&ts, q)?;
        let m = Modulus::new(q).map_err(|e| CliError::Usage(e.to_string()))?;
        let mt = ts
            .reduce_mod(m)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        moduli.push(modular_dump(&mt));
    }
    Ok(TransformDump {
        m: args.m,
        r: args.r,
        n,
        points: pts.points().iter().map(ToString::to_string).collect(),
        exact: ExactDump {
            at: strings(&ts.at),
            g: strings(&ts.g),
            bt: strings(&ts.bt),
            alpha: ts.alpha.to_string(),
            g_prime: strings(&ts.g_prime),
        },
        moduli,
    })
}

fn modular_dump(mt: &ModularTransformSet) -> ModularDump {
    ModularDump {
        modulus: mt.modulus.get(),
        at: mt.at.to_nested(),
        g: mt.g.to_nested(),
        bt: mt.bt.to_nested(),
    }
}

pub fn render_text(d: &TransformDump) -> String {
    let mut s = format!("F({0}x{0}, {1}x{1}), N = {2}\n", d.m, d.r, d.n);
    s += &format!("points: {}\n", d.points.join(" "));
    s += &format!("alpha = {}\n", d.exact.alpha);
    for (name, mat) in [
        ("A^T", &d.exact.at),
        ("G", &d.exact.g),
        ("B^T", &d.exact.bt),
        ("G'", &d.exact.g_prime),
    ] {
        s += &format!("\n{name} =\n{}", matrix_text(mat));
    }
    for md in &d.moduli {
        for (name, mat) in [("A^T", &md.at), ("G", &md.g), ("B^T", &md.bt)] {
            s += &format!("\n{name} mod {} =\n{}", md.modulus, matrix_text(mat));
        }
    }
    s
}

pub fn run(args: &GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let dump = build(args)?;
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&dump).expect("serializable") + "\n",
        Format::Text => render_text(&dump),
    };
    match &args.output {
        Some(path) => std::fs::write(path, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Parses a `p` or `p/q` entry written by [`build`].
pub fn parse_exact(s: &str) -> Option<BigRational> {
    s.parse().ok()
}

/// Integer value of an exact entry, if it is one and fits `i64`.
pub fn exact_as_i64(s: &str) -> Option<i64> {
    let v = parse_exact(s)?;
    v.is_integer().then(|| v.to_integer().to_i64())?
}
