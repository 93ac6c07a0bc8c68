//! `bench`: direct versus Winograd timings over a layer list.
//!
//! Wall-clock columns are informational. The Winograd time excludes the
//! filter transform, which depends only on the weights and is computed once
//! per model; it is listed separately.

use std::io::Write;
use std::time::{Duration, Instant};

use rns_winograd::layer::{count_operations, direct_conv_i16};
use rns_winograd::{direct_conv, ConvOutput, Modulus};

use crate::config::{Config, VGG16};
use crate::table::Table;
use crate::verify::{cases, tensors, winograd_or_direct, Case, Outcome, PlanCache};
use crate::{BenchArgs, CliError};

pub const COLUMNS: [&str; 13] = [
    "layer",
    "shape",
    "algorithm",
    "baseline",
    "direct_ms",
    "winograd_ms",
    "filter_ms",
    "speedup",
    "op_reduction",
    "fwd_pct",
    "bwd_pct",
    "mrc_pct",
    "exact",
];

fn ms(d: Duration) -> String {
    format!("{:.2}", d.as_secs_f64() * 1e3)
}

fn pct(part: Duration, whole: Duration) -> String {
    if whole.is_zero() {
        "-".into()
    } else {
        format!("{:.1}", 100.0 * part.as_secs_f64() / whole.as_secs_f64())
    }
}

fn shape(c: &Case) -> String {
    let s = &c.spec;
    format!("{}x{}x{}*{}x{}x{}x{}", s.h, s.w, s.c, s.r, s.r, s.c, s.k)
}

struct Timed {
    direct: Duration,
    winograd: Duration,
    filter: Duration,
    forward: Duration,
    backward: Duration,
    mrc: Duration,
}

/// Per-layer result; `None` timings when the layer did not run.
struct Row {
    cells: Vec<String>,
    timed: Option<Timed>,
    ok: bool,
}

fn bench_case(case: &Case, cfg: &Config, index: usize, plans: &mut PlanCache) -> Row {
    let (w, x) = tensors(cfg.seed, index, &case.spec, &cfg.data);
    let wide = case
        .rns
        .iter()
        .any(|&q| Modulus::new(q).map(|m| !m.is_byte_sized()).unwrap_or(false));
    let baseline = |w: &_, x: &_| {
        if wide {
            direct_conv_i16(&case.spec, w, x)
        } else {
            direct_conv(&case.spec, w, x)
        }
    };
    let uses_winograd = !case.fallback && case.spec.stride == 1;

    let mut direct_best = Duration::MAX;
    let mut reference: Option<ConvOutput> = None;
    let mut best: Option<Timed> = None;
    let mut outcome = Outcome::Pass;
    for _ in 0..cfg.iterations {
        let t = Instant::now();
        let want = match baseline(&w, &x) {
            Ok(o) => o,
            Err(e) => {
                outcome = Outcome::Error(e.to_string());
                break;
            }
        };
        direct_best = direct_best.min(t.elapsed());
        reference.get_or_insert(want);

        let t = Instant::now();
        let (got, profile) = match winograd_or_direct(case, &w, &x, cfg.range, plans) {
            Ok(r) => r,
            Err(o) => {
                outcome = o;
                break;
            }
        };
        let elapsed = t.elapsed();
        let filter = profile.map(|p| p.filter_transform).unwrap_or_default();
        let timed = Timed {
            direct: direct_best,
            winograd: elapsed.saturating_sub(filter),
            filter,
            forward: profile.map(|p| p.input_transform).unwrap_or_default(),
            backward: profile.map(|p| p.backward_transform).unwrap_or_default(),
            mrc: profile.map(|p| p.mrc).unwrap_or_default(),
        };
        if reference.as_ref() != Some(&got) && outcome == Outcome::Pass {
            outcome = Outcome::Mismatch {
                at: reference
                    .as_ref()
                    .and_then(|r| r.first_mismatch(&got))
                    .unwrap_or_default(),
                got: 0,
                want: 0,
            };
        }
        if best.as_ref().is_none_or(|b| timed.winograd < b.winograd) {
            best = Some(timed);
        }
    }
    if let Some(b) = best.as_mut() {
        b.direct = direct_best;
    }

    let algorithm = if uses_winograd {
        format!("F({0}x{0},{1}x{1})", case.spec.tile_m, case.spec.r)
    } else {
        "direct".into()
    };
    let reduction = if uses_winograd {
        count_operations(&case.spec, case.rns.len(), case.spec.tile_m)
            .map(|c| format!("{:.2}", c.reduction_ratio))
            .unwrap_or_else(|_| "-".into())
    } else {
        "1.00".into()
    };
    let exact = match &outcome {
        Outcome::Pass => "yes".to_string(),
        Outcome::Mismatch { .. } => "NO".into(),
        Outcome::Range(_) => "range".into(),
        Outcome::Error(_) => "error".into(),
    };
    let dash = || "-".to_string();
    let cells = match (&best, &outcome) {
        (Some(t), Outcome::Pass | Outcome::Mismatch { .. }) => vec![
            ms(t.direct),
            ms(t.winograd),
            ms(t.filter),
            format!(
                "{:.2}",
                t.direct.as_secs_f64() / t.winograd.as_secs_f64().max(1e-9)
            ),
            reduction,
            pct(t.forward, t.winograd),
            pct(t.backward, t.winograd),
            pct(t.mrc, t.winograd),
        ],
        _ => vec![
            dash(),
            dash(),
            dash(),
            dash(),
            reduction,
            dash(),
            dash(),
            dash(),
        ],
    };
    let mut row = vec![
        case.name.clone(),
        shape(case),
        algorithm,
        if wide { "int16" } else { "int8" }.into(),
    ];
    row.extend(cells);
    row.push(exact);
    Row {
        cells: row,
        ok: outcome == Outcome::Pass,
        timed: best.filter(|_| outcome == Outcome::Pass),
    }
}

/// Runs every layer of `cfg`; the table has one row per layer plus a total row.
pub fn bench(cfg: &Config, progress: &mut dyn Write) -> Result<(Table, bool), CliError> {
    let mut table = Table::new(COLUMNS);
    let mut plans = PlanCache::default();
    let mut all_ok = true;
    let mut totals: Vec<Timed> = Vec::new();
    let list = cases(cfg);
    for (i, case) in list.iter().enumerate() {
        let row = bench_case(case, cfg, i, &mut plans);
        writeln!(progress, "# {} done", case.name)?;
        all_ok &= row.ok;
        totals.extend(row.timed);
        table.push(row.cells);
    }
    if !totals.is_empty() {
        let sum = |f: fn(&Timed) -> Duration| totals.iter().map(f).sum::<Duration>();
        let (d, w) = (sum(|t| t.direct), sum(|t| t.winograd));
        table.push(vec![
            "total".into(),
            "-".into(),
            "-".into(),
            "-".into(),
            ms(d),
            ms(w),
            ms(sum(|t| t.filter)),
            format!("{:.2}", d.as_secs_f64() / w.as_secs_f64().max(1e-9)),
            "-".into(),
            pct(sum(|t| t.forward), w),
            pct(sum(|t| t.backward), w),
            pct(sum(|t| t.mrc), w),
            if all_ok { "yes" } else { "NO" }.into(),
        ]);
    }
    Ok((table, all_ok))
}

pub fn run(args: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::parse(VGG16)?,
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    if let Some(m) = &args.moduli {
        cfg.rns = m.clone();
    }
    if let Some(t) = args.tile {
        cfg.tile_m = t;
    }
    cfg.validate()?;
    let (table, ok) = bench(&cfg, &mut std::io::sink())?;
    out.write_all(table.render().as_bytes())?;
    if let Some(path) = &args.csv {
        std::fs::write(path, table.to_csv())?;
    }
    if !ok {
        return Err(CliError::Failure("some layers were not bit-exact".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_layer_list_is_header_only() {
        let cfg = Config::parse("{}").unwrap();
        let (t, ok) = bench(&cfg, &mut std::io::sink()).unwrap();
        assert!(ok);
        assert!(t.rows.is_empty());
        assert_eq!(t.render().lines().count(), 2);
    }

    #[test]
    fn small_layers_are_exact() {
        let cfg = Config::parse(
            r#"{"tile_M": 4, "rns": [4001, 4331], "layers": [
                {"name": "a", "H": 9, "W": 9, "C": 3, "K": 2, "R": 3, "padding": 1},
                {"name": "b", "H": 9, "W": 9, "C": 3, "K": 2, "R": 3, "stride": 2}]}"#,
        )
        .unwrap();
        let (t, ok) = bench(&cfg, &mut std::io::sink()).unwrap();
        assert!(ok);
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0][2], "F(4x4,3x3)");
        assert_eq!(t.rows[0][3], "int16");
        assert_eq!(t.rows[1][2], "direct");
        assert_eq!(t.rows[2][0], "total");
    }
}
