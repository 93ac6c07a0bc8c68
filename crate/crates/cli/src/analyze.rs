//! `analyze`: arithmetic-reduction and data-width tables.

use std::io::Write;

use num_rational::BigRational;
use num_traits::ToPrimitive;
use rns_winograd::{arithmetic_reduction, default_points, derive_transforms};

use crate::table::Table;
use crate::CliError;

/// `(M, R)` pairs of the RNS reduction table.
pub const REDUCTION_PAIRS: [(usize, usize); 14] = [
    (2, 3),
    (4, 3),
    (6, 3),
    (8, 3),
    (8, 5),
    (9, 3),
    (9, 5),
    (10, 3),
    (10, 5),
    (11, 3),
    (11, 5),
    (12, 3),
    (12, 5),
    (14, 3),
];

/// `(M, R)` pairs of the scaled-integer data-width table.
pub const WIDTH_PAIRS: [(usize, usize); 7] =
    [(2, 3), (4, 3), (6, 3), (8, 3), (8, 5), (10, 3), (10, 5)];

/// Rounds half up to two decimals, exactly.
pub fn two_decimals(v: &BigRational) -> String {
    let hundredths =
        (v * BigRational::from_integer(100.into()) + BigRational::new(1.into(), 2.into())).floor();
    let n = hundredths.to_integer();
    format!("{}.{:02}", &n / 100, &n % 100)
}

fn cell(v: &BigRational) -> String {
    let s = two_decimals(v);
    if v.to_f64().unwrap_or(0.0) < 1.0 {
        s + "*"
    } else {
        s
    }
}

fn algo(m: usize, r: usize) -> String {
    format!("F({m}x{m},{r}x{r})")
}

pub fn reduction_table() -> Table {
    let mut t = Table::new(["algorithm", "N", "2 moduli", "3 moduli"]);
    for (m, r) in REDUCTION_PAIRS {
        t.push(vec![
            algo(m, r),
            (m + r - 1).to_string(),
            cell(&arithmetic_reduction(m, r, 2)),
            cell(&arithmetic_reduction(m, r, 3)),
        ]);
    }
    t
}

pub fn data_width_table(input_bits: u32) -> Result<Table, CliError> {
    let mut t = Table::new([
        "algorithm",
        "filter_mag",
        "input_mag",
        "max_row_l1",
        "required_bits",
        "reduction",
    ]);
    for (m, r) in WIDTH_PAIRS {
        let pts = default_points(m + r - 1).map_err(|e| CliError::Usage(e.to_string()))?;
        let ts = derive_transforms(m, r, &pts).map_err(|e| CliError::Usage(e.to_string()))?;
        let dw = ts
            .data_width(input_bits)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        t.push(vec![
            algo(m, r),
            format!("{:.2}", dw.filter_magnification),
            format!("{:.2}", dw.input_magnification),
            dw.max_row_l1.to_string(),
            dw.required_bits.to_string(),
            two_decimals(&arithmetic_reduction(m, r, 1)),
        ]);
    }
    Ok(t)
}

pub fn run(out: &mut dyn Write) -> Result<(), CliError> {
    writeln!(
        out,
        "Arithmetic reduction over an n-modulus RNS, M^2 R^2 / (N^2 n)"
    )?;
    out.write_all(reduction_table().render().as_bytes())?;
    writeln!(out, "* slower than the direct method\n")?;
    writeln!(
        out,
        "Transform data width for scaled-integer Winograd, 8-bit inputs, default points"
    )?;
    out.write_all(data_width_table(8)?.render().as_bytes())?;
    writeln!(
        out,
        "required_bits = 1 + ceil(log2(max_row_l1^2 * 127)); reduction = M^2 R^2 / N^2"
    )?;
    Ok(())
}
