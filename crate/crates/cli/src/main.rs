//! Command-line front end: CSV condition data in, machine-readable
//! estimation results out.

mod emit;
mod error;
mod ingest;

use std::fs;
use std::path::{Path, PathBuf};

use backshift::pipeline::{
    check_identifiability, diagnose, estimate, intervention_variances, threshold_edges, Baseline,
    EstimateConfig,
};
use backshift::scatter::{build_scatter_set, MultiEnvDataset, ScatterMode};
use backshift::simulator::{
    generate_network, reference_network, simulate, InterventionSpec, NetworkSpec,
};
use backshift::stability::{stability_select, StabilityConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "backshift",
    version,
    about = "Connectivity estimation from multi-environment equilibrium data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the connectivity matrix from CSV condition data.
    Estimate(EstimateArgs),
    /// Draw equilibrium observations from a known network.
    Simulate(SimulateArgs),
    /// Subsampled re-estimation keeping the edges selected in most runs.
    Stability(StabilityArgs),
    /// Per-environment residual check locating model violations.
    Diagnose(DiagnoseArgs),
    /// Separation check on the estimated intervention variances.
    Identifiability(IdentifiabilityArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Column-centered covariances.
    Cov,
    /// Uncentered second moments; also exploits mean shifts.
    Gram,
}

impl From<Mode> for ScatterMode {
    fn from(mode: Mode) -> Self {
        match mode {
            Mode::Cov => ScatterMode::Covariance,
            Mode::Gram => ScatterMode::Gram,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Json,
    Dot,
    Csv,
}

#[derive(Args)]
struct InputArgs {
    /// CSV input: header row, an `env` column, numeric variable columns.
    #[arg(long)]
    input: PathBuf,
    /// Per-environment summary statistic.
    #[arg(long, value_enum, default_value_t = Mode::Cov)]
    mode: Mode,
    /// Treat the input as one time series without an `env` column and
    /// use blocks of this many rows as environments.
    #[arg(long)]
    window_len: Option<usize>,
    /// Offset between window starts; defaults to the window length.
    #[arg(long, requires = "window_len")]
    window_stride: Option<usize>,
}

impl InputArgs {
    fn load(&self) -> Result<MultiEnvDataset> {
        match self.window_len {
            Some(len) => {
                ingest::ingest_series_csv(&self.input, len, self.window_stride.unwrap_or(len))
            }
            None => ingest::ingest_csv(&self.input),
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Directory for result files; created if missing.
    #[arg(long)]
    output_dir: PathBuf,
    /// Result file format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Keep edges with coefficient magnitude strictly above this value.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Variance anchoring: `min` or an environment label.
    #[arg(long, default_value = "min")]
    baseline: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// Directory for data.csv and truth.json; created if missing.
    #[arg(long)]
    output_dir: PathBuf,
    /// Number of observed variables; 10 selects the built-in benchmark
    /// graph, other values draw a random feasible graph.
    #[arg(long, default_value_t = 10)]
    variables: usize,
    /// Number of environments.
    #[arg(long, default_value_t = 10)]
    envs: usize,
    /// Observations per environment.
    #[arg(long, default_value_t = 1000)]
    n_per_env: usize,
    /// Mean intervention strength; zero disables the shifts.
    #[arg(long, default_value_t = 1.0)]
    strength: f64,
    /// Replace independent noise with a shared confounder.
    #[arg(long)]
    hidden: bool,
    /// RNG seed.
    #[arg(long, env = "BACKSHIFT_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Number of subsample runs.
    #[arg(long, default_value_t = 100)]
    subsamples: usize,
    /// Bound on the expected number of falsely selected edges.
    #[arg(long, default_value_t = 2.0)]
    ev: f64,
    /// Selection-frequency threshold in (0.5, 1].
    #[arg(long, default_value_t = 0.75)]
    pi_thr: f64,
    /// RNG seed for the subsample draws.
    #[arg(long, env = "BACKSHIFT_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct IdentifiabilityArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Directory for identifiability.json; created if missing.
    #[arg(long)]
    output_dir: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate(a) => run_estimate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Stability(a) => run_stability(a),
        Command::Diagnose(a) => run_diagnose(a),
        Command::Identifiability(a) => run_identifiability(a),
    }
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_baseline(label: &str) -> Baseline {
    if label == "min" {
        Baseline::MinZero
    } else {
        Baseline::Environment(label.to_string())
    }
}

fn estimate_config(mode: Mode) -> EstimateConfig {
    EstimateConfig {
        mode: mode.into(),
        ..EstimateConfig::default()
    }
}

fn run_estimate(a: EstimateArgs) -> Result<()> {
    let ds = a.input.load()?;
    let config = estimate_config(a.input.mode);
    let est = estimate(&ds, &config)?;
    let edges = threshold_edges(&est.b_hat, a.threshold)?;
    let scatter = build_scatter_set(&ds, config.mode)?;
    let (profile, diagnostics) = if est.empty {
        (None, None)
    } else {
        let baseline = parse_baseline(&a.baseline);
        (
            Some(intervention_variances(&est, &scatter, &baseline)?),
            Some(diagnose(&est, &scatter)?),
        )
    };
    for w in &est.warnings {
        eprintln!("warning: {w}");
    }
    let out = &a.output.output_dir;
    match a.output.format {
        Format::Json => {
            let bundle = emit::EstimateBundle {
                est: &est,
                edges: &edges,
                threshold: a.threshold,
                profile: profile.as_ref(),
                diagnostics: diagnostics.as_ref(),
                variables: &ds.variable_names,
                environments: &ds.env_labels(),
            };
            write_file(out, "estimate.json", &emit::to_pretty_bytes(&emit::estimate_json(&bundle)))
        }
        Format::Dot => write_file(
            out,
            "graph.dot",
            emit::graph_dot(&edges, &ds.variable_names).as_bytes(),
        ),
        Format::Csv => write_file(
            out,
            "intervention_variances.csv",
            emit::variances_csv(profile.as_ref(), &ds.variable_names).as_bytes(),
        ),
    }
}

fn dataset_csv(ds: &MultiEnvDataset) -> String {
    let p = ds.p();
    let mut rows = 0usize;
    for env in &ds.environments {
        rows += env.data.nrows();
    }
    let mut out = String::with_capacity(24 * rows * (p + 1));
    out.push_str("env");
    for name in &ds.variable_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for env in &ds.environments {
        for i in 0..env.data.nrows() {
            out.push_str(&env.label);
            for k in 0..p {
                out.push_str(&format!(",{}", env.data[(i, k)]));
            }
            out.push('\n');
        }
    }
    out
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let model = if a.variables == 10 {
        reference_network(a.hidden, a.seed)
    } else {
        generate_network(
            a.variables,
            &NetworkSpec::Random {
                n_edges: a.variables,
                weight_lo: 0.3,
                weight_hi: 0.8,
            },
            a.hidden,
            a.seed,
        )?
    };
    let spec = InterventionSpec::all_targets(a.strength);
    let ds = simulate(&model, &spec, &vec![a.n_per_env; a.envs], a.seed)?;
    let out = &a.output_dir;
    write_file(out, "data.csv", dataset_csv(&ds).as_bytes())?;
    write_file(
        out,
        "truth.json",
        &emit::to_pretty_bytes(&emit::truth_json(&model, a.strength, &ds.env_labels())),
    )
}

fn run_stability(a: StabilityArgs) -> Result<()> {
    let ds = a.input.load()?;
    let config = StabilityConfig {
        ev_bound: a.ev,
        pi_thr: a.pi_thr,
        n_subsamples: a.subsamples,
        seed: a.seed,
        ..StabilityConfig::default()
    };
    let res = stability_select(&ds, &config, &estimate_config(a.input.mode))?;
    let out = &a.output.output_dir;
    match a.output.format {
        Format::Json => write_file(
            out,
            "stability.json",
            &emit::to_pretty_bytes(&emit::stability_json(
                &res,
                &ds.variable_names,
                a.pi_thr,
                a.ev,
            )),
        ),
        Format::Dot => write_file(
            out,
            "selected.dot",
            emit::stability_dot(&res, &ds.variable_names).as_bytes(),
        ),
        Format::Csv => write_file(
            out,
            "frequencies.csv",
            emit::frequencies_csv(&res, &ds.variable_names).as_bytes(),
        ),
    }
}

fn run_diagnose(a: DiagnoseArgs) -> Result<()> {
    if a.output.format == Format::Dot {
        return Err(CliError::Parse {
            line: 0,
            detail: "diagnostics have no dot rendering; use json or csv".into(),
        });
    }
    let ds = a.input.load()?;
    let config = estimate_config(a.input.mode);
    let est = estimate(&ds, &config)?;
    let scatter = build_scatter_set(&ds, config.mode)?;
    let report = diagnose(&est, &scatter)?;
    let out = &a.output.output_dir;
    match a.output.format {
        Format::Json => write_file(
            out,
            "diagnostics.json",
            &emit::to_pretty_bytes(&emit::diagnostics_json(&report, &ds.variable_names)),
        ),
        _ => write_file(out, "diagnostics.csv", emit::diagnostics_csv(&report).as_bytes()),
    }
}

fn run_identifiability(a: IdentifiabilityArgs) -> Result<()> {
    let ds = a.input.load()?;
    let config = estimate_config(a.input.mode);
    let est = estimate(&ds, &config)?;
    let scatter = build_scatter_set(&ds, config.mode)?;
    let profile = intervention_variances(&est, &scatter, &Baseline::MinZero)?;
    let report = check_identifiability(&profile.delta_variances)?;
    write_file(
        &a.output_dir,
        "identifiability.json",
        &emit::to_pretty_bytes(&emit::identifiability_json(&report, &profile)),
    )
}
