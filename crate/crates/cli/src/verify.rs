//! `verify`: Winograd layers against the im2col oracle, bit for bit.
//!
//! Tensors are drawn from ChaCha8 (`rand_chacha`), seeded with the config
//! seed and one stream per case, so a seed fully determines the report.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rns_winograd::layer::{data_bound, range_check, winograd_layer_conv_with, LayerProfile};
use rns_winograd::tensor_io::{read_quantized, write_output};
use rns_winograd::{
    direct_conv, ConvOutput, LayerSpec, QuantizedTensor, RangePolicy, RnsSystem, WinogradRns,
};

use crate::config::{Config, DataRanges, RandomSuite, RangeMode, VERIFY_DEFAULT};
use crate::{CliError, VerifyArgs};

/// One layer to check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Case {
    pub name: String,
    pub spec: LayerSpec,
    pub rns: Vec<i64>,
    /// Skip the Winograd path, as for layers the config marks as fallback.
    pub fallback: bool,
}

impl Case {
    pub fn describe(&self) -> String {
        let s = &self.spec;
        let algo = if self.fallback || s.stride != 1 {
            "direct".to_string()
        } else {
            format!("F({0}x{0},{1}x{1})", s.tile_m, s.r)
        };
        let rns: Vec<String> = self.rns.iter().map(ToString::to_string).collect();
        format!(
            "{algo} B{} {}x{}x{} -> {} pad {} stride {} RNS({})",
            s.batch,
            s.h,
            s.w,
            s.c,
            s.k,
            s.padding,
            s.stride,
            rns.join(",")
        )
    }
}

/// Whether every modulus of `rns` is usable for `F(M, R)` with default points.
fn compatible(m: usize, r: usize, rns: &[i64]) -> bool {
    let Ok(pts) = rns_winograd::default_points(m + r - 1) else {
        return false;
    };
    let Ok(ts) = rns_winograd::derive_transforms(m, r, &pts) else {
        return false;
    };
    rns.iter()
        .all(|&q| crate::gen::check_compatible(&ts, q).is_ok())
}

fn random_cases(suite: &RandomSuite, index: usize, rng: &mut ChaCha8Rng) -> Vec<Case> {
    let pairs: Vec<(usize, usize)> = suite
        .tiles
        .iter()
        .flat_map(|&m| suite.filters.iter().map(move |&r| (m, r)))
        .filter(|&(m, r)| {
            m + r - 1 <= rns_winograd::transforms::MAX_TILE && compatible(m, r, &suite.rns)
        })
        .collect();
    if pairs.is_empty() {
        return Vec::new();
    }
    let pick = |rng: &mut ChaCha8Rng, list: &[usize]| list[rng.gen_range(0..list.len())];
    (0..suite.count)
        .map(|i| {
            let (tile_m, r) = pairs[rng.gen_range(0..pairs.len())];
            let padding = if rng.gen() { (r - 1) / 2 } else { 0 };
            let lo = suite.size[0].max(r.saturating_sub(2 * padding));
            let spec = LayerSpec {
                h: rng.gen_range(lo..=suite.size[1].max(lo)),
                w: rng.gen_range(lo..=suite.size[1].max(lo)),
                c: pick(rng, &suite.channels),
                k: pick(rng, &suite.outputs),
                r,
                batch: 1,
                stride: 1,
                padding,
                tile_m,
            };
            Case {
                name: format!("random{index}-{i:03}"),
                spec,
                rns: suite.rns.clone(),
                fallback: false,
            }
        })
        .collect()
}

/// Explicit layers first, then each random suite.
pub fn cases(cfg: &Config) -> Vec<Case> {
    let mut out: Vec<Case> = cfg
        .layers
        .iter()
        .map(|l| Case {
            name: l.name.clone(),
            spec: l.spec(cfg.tile_m),
            rns: cfg.rns.clone(),
            fallback: l.fallback,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for (i, suite) in cfg.random.iter().enumerate() {
        out.extend(random_cases(suite, i, &mut rng));
    }
    out
}

fn uniform(rng: &mut ChaCha8Rng, dims: [usize; 4], [lo, hi]: [i8; 2]) -> QuantizedTensor {
    QuantizedTensor::from_fn(dims, |_| rng.gen_range(lo..=hi))
}

/// Deterministic `(weights, input)` for case number `index`.
pub fn tensors(
    seed: u64,
    index: usize,
    spec: &LayerSpec,
    data: &DataRanges,
) -> (QuantizedTensor, QuantizedTensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let w = uniform(&mut rng, spec.weight_dims(), data.weights);
    let x = uniform(&mut rng, spec.input_dims(), data.input);
    (w, x)
}

pub fn policy(
    mode: RangeMode,
    spec: &LayerSpec,
    w: &QuantizedTensor,
    x: &QuantizedTensor,
) -> RangePolicy {
    match mode {
        RangeMode::Static => RangePolicy::Static,
        RangeMode::Data => RangePolicy::DeclaredUnchecked(data_bound(spec, w, x)),
        RangeMode::Declared { declared } => RangePolicy::DeclaredUnchecked(declared),
    }
}

fn declared(p: RangePolicy) -> Option<i64> {
    match p {
        RangePolicy::Static => None,
        RangePolicy::DeclaredUnchecked(b) => Some(b),
    }
}

/// Transform sets shared between cases with the same `(M, R, RNS)`.
#[derive(Default)]
pub struct PlanCache(HashMap<(usize, usize, Vec<i64>), WinogradRns>);

impl PlanCache {
    pub fn get(&mut self, spec: &LayerSpec, rns: &[i64]) -> Result<&WinogradRns, String> {
        let key = (spec.tile_m, spec.r, rns.to_vec());
        if !self.0.contains_key(&key) {
            let sys = RnsSystem::new(rns).map_err(|e| e.to_string())?;
            let plan = WinogradRns::new(spec.tile_m, spec.r, sys).map_err(|e| e.to_string())?;
            self.0.insert(key.clone(), plan);
        }
        Ok(&self.0[&key])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Mismatch { at: [usize; 4], got: i32, want: i32 },
    Range(String),
    Error(String),
}

/// Runs the Winograd path (or the baseline for fallback and strided layers).
pub fn winograd_or_direct(
    case: &Case,
    w: &QuantizedTensor,
    x: &QuantizedTensor,
    mode: RangeMode,
    plans: &mut PlanCache,
) -> Result<(ConvOutput, Option<LayerProfile>), Outcome> {
    if case.fallback || case.spec.stride != 1 {
        return direct_conv(&case.spec, w, x)
            .map(|o| (o, None))
            .map_err(|e| Outcome::Error(e.to_string()));
    }
    let sys = RnsSystem::new(&case.rns).map_err(|e| Outcome::Error(e.to_string()))?;
    let p = policy(mode, &case.spec, w, x);
    let report = range_check(&case.spec, &sys, declared(p));
    if !report.fits {
        let need = report
            .declared_bound
            .map(Into::into)
            .unwrap_or(report.static_bound);
        return Err(Outcome::Range(format!(
            "dynamic range exceeded: outputs up to {need}, RNS bound {}",
            sys.signed_bound()
        )));
    }
    let plan = plans.get(&case.spec, &case.rns).map_err(Outcome::Error)?;
    winograd_layer_conv_with(&case.spec, w, x, plan)
        .map(|(o, prof)| (o, Some(prof)))
        .map_err(|e| Outcome::Error(e.to_string()))
}

pub fn check(
    case: &Case,
    w: &QuantizedTensor,
    x: &QuantizedTensor,
    mode: RangeMode,
    plans: &mut PlanCache,
) -> Outcome {
    let got = match winograd_or_direct(case, w, x, mode, plans) {
        Ok((o, _)) => o,
        Err(outcome) => return outcome,
    };
    let want = match direct_conv(&case.spec, w, x) {
        Ok(o) => o,
        Err(e) => return Outcome::Error(e.to_string()),
    };
    compare(&got, &want)
}

fn compare(got: &ConvOutput, want: &ConvOutput) -> Outcome {
    match got.first_mismatch(want) {
        None => Outcome::Pass,
        Some(at) if got.dims() == want.dims() => Outcome::Mismatch {
            at,
            got: got.get(at),
            want: want.get(at),
        },
        Some(at) => Outcome::Mismatch {
            at,
            got: 0,
            want: 0,
        },
    }
}

fn report_line(name_width: usize, case: &Case, outcome: &Outcome) -> String {
    let head = format!("{:<name_width$}  {}", case.name, case.describe());
    match outcome {
        Outcome::Pass => format!("PASS   {head}"),
        Outcome::Mismatch { at, got, want } => format!(
            "FAIL   {head}: mismatch at (b={}, y={}, x={}, k={}): winograd {got}, direct {want}",
            at[0], at[1], at[2], at[3]
        ),
        Outcome::Range(msg) => format!("RANGE  {head}: {msg}"),
        Outcome::Error(msg) => format!("ERROR  {head}: {msg}"),
    }
}

fn apply_overrides(cfg: &mut Config, args: &VerifyArgs) -> Result<(), CliError> {
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = &args.moduli {
        cfg.rns = m.clone();
    }
    if let Some(t) = args.tile {
        cfg.tile_m = t;
    }
    if let Some(n) = args.iterations {
        cfg.random.iter_mut().for_each(|s| s.count = n);
    }
    cfg.validate()
}

fn run_tensor_files(args: &VerifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let open = |p: &std::path::Path| -> Result<QuantizedTensor, CliError> {
        let f = File::open(p)
            .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", p.display())))?;
        read_quantized(&mut BufReader::new(f))
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
    };
    let x = open(args.input.as_deref().expect("clap requires input"))?;
    let w = open(args.weights.as_deref().expect("clap requires weights"))?;
    let [b, h, wd, c] = x.dims();
    let [r, r2, wc, k] = w.dims();
    if r != r2 || wc != c {
        return Err(CliError::Usage(format!(
            "weights {:?} do not fit input {:?}",
            w.dims(),
            x.dims()
        )));
    }
    let spec = LayerSpec {
        h,
        w: wd,
        c,
        k,
        r,
        batch: b,
        stride: 1,
        padding: args.padding.unwrap_or((r - 1) / 2),
        tile_m: args.tile.unwrap_or(4),
    };
    spec.validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let case = Case {
        name: "tensor".into(),
        spec,
        rns: args.moduli.clone().unwrap_or_else(|| vec![251, 241, 239]),
        fallback: false,
    };
    let mut plans = PlanCache::default();
    let result = winograd_or_direct(&case, &w, &x, RangeMode::Data, &mut plans);
    let outcome = match &result {
        Ok((got, _)) => compare(
            got,
            &direct_conv(&spec, &w, &x).map_err(|e| CliError::Usage(e.to_string()))?,
        ),
        Err(o) => o.clone(),
    };
    writeln!(out, "{}", report_line(6, &case, &outcome))?;
    if outcome != Outcome::Pass {
        return Err(CliError::Failure("verification failed".into()));
    }
    if let (Some(path), Ok((got, _))) = (&args.output, &result) {
        let f = File::create(path)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", path.display())))?;
        let mut wr = BufWriter::new(f);
        write_output(&mut wr, got).map_err(|e| CliError::Usage(e.to_string()))?;
        wr.flush()?;
    }
    Ok(())
}

pub fn run(args: &VerifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.input.is_some() {
        return run_tensor_files(args, out);
    }
    let mut cfg = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::parse(VERIFY_DEFAULT)?,
    };
    apply_overrides(&mut cfg, args)?;
    let all = cases(&cfg);
    let width = all.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut plans = PlanCache::default();
    let (mut passed, mut failed) = (0usize, 0usize);
    for (i, case) in all.iter().enumerate() {
        let (w, x) = tensors(cfg.seed, i, &case.spec, &cfg.data);
        let outcome = check(case, &w, &x, cfg.range, &mut plans);
        writeln!(out, "{}", report_line(width, case, &outcome))?;
        if outcome == Outcome::Pass {
            passed += 1;
        } else {
            failed += 1;
        }
    }
    writeln!(out, "summary: {passed} passed, {failed} failed")?;
    if failed > 0 {
        return Err(CliError::Failure(format!(
            "{failed} of {} cases failed",
            passed + failed
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_cases_are_compatible() {
        let cfg = Config::parse(VERIFY_DEFAULT).unwrap();
        let all = cases(&cfg);
        assert!(all.len() >= 200);
        for c in all.iter().filter(|c| c.rns == [253, 251, 247]) {
            assert!(c.spec.tile_m + c.spec.r - 1 <= 12, "{c:?}");
        }
        assert_eq!(cases(&cfg), all);
    }

    #[test]
    fn compatibility_limits() {
        assert!(compatible(10, 3, &[253, 251, 247]));
        assert!(!compatible(12, 3, &[253, 251, 247]));
        assert!(compatible(14, 5, &[4001, 4331]));
    }

    #[test]
    fn tensors_are_reproducible() {
        let spec = LayerSpec {
            h: 4,
            w: 4,
            c: 2,
            k: 2,
            r: 3,
            batch: 1,
            stride: 1,
            padding: 0,
            tile_m: 2,
        };
        let d = DataRanges::default();
        assert_eq!(tensors(1, 3, &spec, &d), tensors(1, 3, &spec, &d));
        assert_ne!(tensors(1, 3, &spec, &d), tensors(1, 4, &spec, &d));
    }
}
