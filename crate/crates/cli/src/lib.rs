//! The `rnsw` command-line tool.
//!
//! Every command writes to caller-supplied streams so the whole tool can be
//! driven in-process; `main` only wires up stdio and the exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod analyze;
pub mod bench;
pub mod config;
pub mod gen;
pub mod table;
pub mod verify;

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for malformed arguments, configs or inputs.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for a verification mismatch or a dynamic-range failure.
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("i/o error: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "rnsw",
    version,
    about = "Exact integer Winograd convolution over residue number systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive A^T, G, B^T exactly and reduced modulo each modulus.
    GenTransforms(GenArgs),
    /// Check Winograd layers against the direct convolution, bit for bit.
    Verify(VerifyArgs),
    /// Time the direct and Winograd paths over a layer list.
    Bench(BenchArgs),
    /// Print arithmetic-reduction and data-width tables.
    Analyze,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output tile size M.
    #[arg(long)]
    pub m: usize,
    /// Filter size R.
    #[arg(long)]
    pub r: usize,
    /// Interpolation points, e.g. `0,1,-1,1/2,inf`; defaults to 0, 1, -1, 2, -2, ..., inf.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub points: Option<Vec<String>>,
    /// Moduli to reduce the transforms by.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub moduli: Vec<i64>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// JSON suite config; the built-in default suite otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random configurations per suite.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub moduli: Option<Vec<i64>>,
    #[arg(long)]
    pub tile: Option<usize>,
    /// QTNS activation tensor `(B, H, W, C)`; verifies this one layer instead of a suite.
    #[arg(long, requires = "weights")]
    pub input: Option<PathBuf>,
    /// QTNS weight tensor `(R, R, C, K)`.
    #[arg(long, requires = "input")]
    pub weights: Option<PathBuf>,
    /// Where to write the verified QTNS output tensor.
    #[arg(long, requires = "input")]
    pub output: Option<PathBuf>,
    /// Zero padding for tensor-file mode; defaults to `(R - 1) / 2`.
    #[arg(long)]
    pub padding: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON layer config; the built-in VGG16 list otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Timed repetitions per layer; the fastest is reported.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub moduli: Option<Vec<i64>>,
    #[arg(long)]
    pub tile: Option<usize>,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Caps the global thread pool at `RNSW_THREADS` when set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("RNSW_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "RNSW_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    // a pool may already exist when driven in-process; keep it
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::GenTransforms(a) => gen::run(&a, out),
        Command::Verify(a) => verify::run(&a, out),
        Command::Bench(a) => bench::run(&a, out),
        Command::Analyze => analyze::run(out),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
