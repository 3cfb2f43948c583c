use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aopsic::harness::{
    load_scenario, read_residuals_csv, render_csv, render_psd_csv, render_residuals_csv, run_scenario, table_command,
    welch_psd, ConfigError, HarnessError, ScenarioResult,
};
use aopsic::moments::{estimate_moments, exponential_moments, MomentKind, MomentVector};
use aopsic::numerics::RngState;
use aopsic::orthopoly::{build_basis, build_extended_basis};
use aopsic::signals::{generate, Distribution, DistributionSpec};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "aop-sic", version, about = "Orthonormal polynomial bases and adaptive self-interference cancellers")]
struct Cli {
    /// Suppress progress and summary output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an orthonormal basis from a distribution or a moment list.
    Basis(BasisArgs),
    /// Moments and orthonormal polynomials of 4/16/64/256QAM.
    Table {
        #[arg(long, default_value_t = 7)]
        order: usize,
        /// Emit the plain-text table instead of JSON.
        #[arg(long)]
        human: bool,
    },
    /// Run a scenario file and write the MSE and residual CSVs.
    Simulate(SimulateArgs),
    /// Welch PSD of one residual column of a residuals CSV.
    Psd(PsdArgs),
}

#[derive(Args)]
struct BasisArgs {
    /// Distribution as JSON, e.g. '{"kind":"qam","order":16}'.
    #[arg(long, conflicts_with = "moments", required_unless_present = "moments")]
    distribution: Option<String>,
    /// Comma-separated even moments μ₂,μ₄,… (or μ₁,μ₂,… with --extended).
    #[arg(long, value_delimiter = ',')]
    moments: Option<Vec<f64>>,
    /// Odd order P (or degree with --extended).
    #[arg(long, default_value_t = 7)]
    order: usize,
    /// Build the full-degree family over all moments instead of the odd-only one.
    #[arg(long)]
    extended: bool,
    /// Samples used when the distribution has no closed-form moments.
    #[arg(long, default_value_t = 1 << 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Run only this seed instead of the scenario's list.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PsdArgs {
    /// Residuals CSV written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    /// Canceller label; defaults to the first one in the file.
    #[arg(long)]
    column: Option<String>,
    #[arg(long, default_value_t = 256)]
    segment: usize,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Diverged(String),
    Other(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Basis(args) => basis(args),
        Command::Table { order, human } => table_command(order)
            .map(|t| emit(&if human { t.to_human() } else { t.to_json() + "\n" }))
            .map_err(|e| Failure::Config(e.to_string())),
        Command::Simulate(args) => simulate(args, cli.quiet),
        Command::Psd(args) => psd(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn basis(args: BasisArgs) -> Result<(), Failure> {
    let kind = if args.extended { MomentKind::AllOrders } else { MomentKind::EvenOnly };
    let count = if args.extended { 2 * args.order } else { args.order };
    let mu = match (&args.distribution, args.moments) {
        (_, Some(values)) => MomentVector::new(kind, values).map_err(|e| Failure::Config(e.to_string()))?,
        (Some(text), None) => {
            let spec: DistributionSpec =
                serde_json::from_str(text).map_err(|e| Failure::Config(format!("--distribution: {e}")))?;
            spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let closed = match (&spec.kind, kind) {
                (Distribution::Exponential { rate }, MomentKind::AllOrders) if !spec.unit_power => {
                    Some(exponential_moments(*rate, count, kind))
                }
                _ => spec.closed_form_moments(count).filter(|m| m.kind() == kind),
            };
            match closed {
                Some(mu) => mu,
                None => {
                    let x = generate(&spec, args.samples.max(1), &mut RngState::new(args.seed, 0));
                    estimate_moments(&x, count, kind).map_err(|e| Failure::Config(e.to_string()))?
                }
            }
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let basis = if args.extended { build_extended_basis(&mu, args.order) } else { build_basis(&mu, args.order) }
        .map_err(|e| Failure::Config(e.to_string()))?;
    emit(&(basis.to_json() + "\n"));
    Ok(())
}

fn simulate(args: SimulateArgs, quiet: bool) -> Result<(), Failure> {
    let mut cfg = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seeds(vec![seed]);
    }
    let started = std::time::Instant::now();
    let result = run_scenario(&cfg)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Failure::Other(format!("{}: {e}", args.out.display())))?;
    let stem = file_stem(&cfg.name);
    let mse_path = args.out.join(format!("{stem}_mse.csv"));
    let res_path = args.out.join(format!("{stem}_residuals.csv"));
    write(&mse_path, render_csv(&result)?)?;
    write(&res_path, render_residuals_csv(&result)?)?;
    if !quiet {
        summarize(&result, started.elapsed());
        eprintln!("wrote {} and {}", mse_path.display(), res_path.display());
    }
    let dead: Vec<&str> = (0..result.labels.len())
        .filter(|&i| result.diverged_seeds(i).len() == result.seeds.len())
        .map(|i| result.labels[i].as_str())
        .collect();
    if dead.is_empty() {
        Ok(())
    } else {
        Err(Failure::Diverged(format!("diverged on every seed: {}", dead.join(", "))))
    }
}

fn summarize(result: &ScenarioResult, elapsed: std::time::Duration) {
    eprintln!(
        "{}: {} seeds x {} samples in {:.2?} (noise floor {:.1} dB)",
        result.name,
        result.seeds.len(),
        result.len(),
        elapsed,
        result.noise_floor_db
    );
    for (i, label) in result.labels.iter().enumerate() {
        let diverged = result.diverged_seeds(i).len();
        match result.mean_mse_db(i) {
            Some(mse) => eprintln!("  {label:<12} final MSE {:7.2} dB  diverged {diverged}", mse[mse.len() - 1]),
            None => eprintln!("  {label:<12} diverged on every seed"),
        }
    }
}

fn psd(args: PsdArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.input.display())))?;
    let (_, x) = read_residuals_csv(&text, args.column.as_deref())
        .map_err(|e| Failure::Config(format!("{}: {e}", args.input.display())))?;
    let points = welch_psd(&x, args.segment, args.overlap).map_err(|e| Failure::Config(e.to_string()))?;
    let csv = render_psd_csv(&points);
    match args.out {
        Some(path) => write(&path, csv),
        None => {
            emit(&csv);
            Ok(())
        }
    }
}

/// Writes to stdout, treating a closed pipe (`| head`) as success.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: stdout: {e}");
        }
    }
}

fn write(path: &std::path::Path, text: String) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}
