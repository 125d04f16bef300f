//! `entropykit`: entropy-based activity features from in-home location
//! events.
//!
//! Subcommands: `features` (the full weekly pipeline), `fit` (transition
//! matrix to JSON), `inspect` (summarize a matrix or model checkpoint),
//! `simulate` (synthetic corpus plus analytic oracle report), and
//! `validate` (the built-in acceptance battery).
//!
//! Every flag with an `ENTROPYKIT_`-prefixed variable can also be set from
//! the environment; explicit flags win. Exit codes: 0 success (possibly
//! with per-household diagnostics on stderr), 1 fatal error, 2 usage
//! error.

use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDateTime;
use chrono_tz::Tz;
use clap::{Args, Parser, Subcommand, ValueEnum};

use entropykit::events::{
    parse_events, ActivityEvent, Diagnostic, InputFormat, LocationAlphabet, ParseOptions,
};
use entropykit::markov::{
    analytic_ep_rate, entropy_rate, fit_transition_matrix, simulate_trajectory,
    stationary_distribution, TransitionMatrix,
};
use entropykit::neep::{load_checkpoint, TrainConfig};
use entropykit::pipeline::{
    emit_feature_table, metadata_line, parse_label_rows, run_features, DayPeriodFilter,
    PipelineOptions, TableFormat,
};
use entropykit::validate::run_battery;
use entropykit::{Error, Result};

#[derive(Parser)]
#[command(
    name = "entropykit",
    version,
    about = "Entropy-based activity features from in-home location events",
    after_help = "Environment: flags marked [env: ENTROPYKIT_*] fall back to that variable.\n\
                  Exit codes: 0 success, 1 fatal error, 2 usage error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the weekly feature table from event streams
    Features(FeaturesArgs),
    /// Fit a transition matrix from event streams and write it as JSON
    Fit(FitArgs),
    /// Summarize a matrix JSON or model checkpoint file
    Inspect(InspectArgs),
    /// Simulate an event corpus from a matrix spec, with an oracle report
    Simulate(SimulateArgs),
    /// Run the built-in acceptance battery
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    #[default]
    Csv,
    Jsonl,
}

impl From<FormatArg> for InputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => InputFormat::Csv,
            FormatArg::Jsonl => InputFormat::Jsonl,
        }
    }
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Jsonl => TableFormat::Jsonl,
        }
    }
}

impl FormatArg {
    fn name(self) -> &'static str {
        match self {
            FormatArg::Csv => "csv",
            FormatArg::Jsonl => "jsonl",
        }
    }
}

/// Ingestion flags shared by `features` and `fit`.
#[derive(Args)]
struct InputArgs {
    /// Input event file; repeat the flag for several files
    #[arg(long = "input", required = true)]
    input: Vec<PathBuf>,
    /// Input format
    #[arg(long, value_enum, default_value_t, env = "ENTROPYKIT_FORMAT")]
    format: FormatArg,
    /// IANA time zone for naive timestamps
    #[arg(long, default_value = "UTC", env = "ENTROPYKIT_TZ")]
    tz: Tz,
    /// Comma-separated location alphabet (default: the five standard rooms)
    #[arg(long, value_delimiter = ',', env = "ENTROPYKIT_ALPHABET")]
    alphabet: Option<Vec<String>>,
    /// Drop consecutive repeats of the same location
    #[arg(long, env = "ENTROPYKIT_COLLAPSE_REPEATS")]
    collapse_repeats: bool,
    /// Add-alpha smoothing for transition probabilities
    #[arg(long, default_value_t = 0.0, env = "ENTROPYKIT_SMOOTHING_ALPHA")]
    smoothing_alpha: f64,
}

impl InputArgs {
    fn alphabet(&self) -> Result<LocationAlphabet> {
        match &self.alphabet {
            Some(symbols) => LocationAlphabet::new(symbols.clone()),
            None => Ok(LocationAlphabet::default_rooms()),
        }
    }

    /// Parse every input file, then restore the global (household, time)
    /// order across files.
    fn events(&self, alphabet: &LocationAlphabet) -> Result<(Vec<ActivityEvent>, Vec<Diagnostic>)> {
        let opts = ParseOptions {
            format: self.format.into(),
            tz: self.tz,
            ..ParseOptions::default()
        };
        let mut events = Vec::new();
        let mut diagnostics = Vec::new();
        for path in &self.input {
            let file = open(path)?;
            let (mut ev, mut diags) = parse_events(io::BufReader::new(file), &opts, alphabet)?;
            events.append(&mut ev);
            diagnostics.append(&mut diags);
        }
        if self.input.len() > 1 {
            events.sort_by(|a, b| {
                (&a.household_id, a.instant).cmp(&(&b.household_id, b.instant))
            });
        }
        Ok((events, diagnostics))
    }

    fn config_json(&self, alphabet: &LocationAlphabet) -> serde_json::Value {
        serde_json::json!({
            "inputs": self.input.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "format": self.format.name(),
            "tz": self.tz.name(),
            "alphabet": alphabet.symbols(),
            "collapse_repeats": self.collapse_repeats,
            "smoothing_alpha": self.smoothing_alpha,
        })
    }
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Observed weeks consumed by the per-household baseline
    #[arg(long, default_value_t = 16, env = "ENTROPYKIT_BASELINE_WEEKS")]
    baseline_weeks: usize,
    /// Seed for model initialization, holdout split, and batch order
    #[arg(long, default_value_t = 0, env = "ENTROPYKIT_SEED")]
    seed: u64,
    /// Training epochs per entropy-production model
    #[arg(long, default_value_t = 200, env = "ENTROPYKIT_EPOCHS")]
    epochs: usize,
    /// Band breakpoints from each household's empirical quartiles
    #[arg(long, env = "ENTROPYKIT_QUARTILE_MODE")]
    quartile_mode: bool,
    /// Entropy rate from the stationary marginal instead of each day's
    #[arg(long)]
    stationary_marginal: bool,
    /// Refit the transition matrix per week on a trailing window
    #[arg(long)]
    refit_t: bool,
    /// Retrain the entropy-production model per week on a trailing window
    #[arg(long)]
    retrain_neep: bool,
    /// Label CSV (household_id,week_start,label) to join onto rows
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output table format
    #[arg(long, value_enum, default_value_t, env = "ENTROPYKIT_OUTPUT_FORMAT")]
    output_format: FormatArg,
    /// Output path (stdout when omitted)
    #[arg(long, env = "ENTROPYKIT_OUT")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
enum PeriodArg {
    /// Both day periods
    #[default]
    All,
    /// Daytime windows only, [06:00, 18:00)
    Day,
    /// Night windows only
    Night,
}

impl PeriodArg {
    fn name(self) -> &'static str {
        match self {
            PeriodArg::All => "all",
            PeriodArg::Day => "day",
            PeriodArg::Night => "night",
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Restrict fitting to one day period
    #[arg(long, value_enum, default_value_t)]
    period: PeriodArg,
    /// Output path for the matrix JSON (stdout when omitted)
    #[arg(long, env = "ENTROPYKIT_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Matrix JSON or model checkpoint to summarize
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Transition-matrix spec (JSON, as written by `fit`; `counts` optional)
    #[arg(long)]
    matrix: PathBuf,
    /// Number of events to simulate
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 0, env = "ENTROPYKIT_SEED")]
    seed: u64,
    /// Household id written on every synthetic event
    #[arg(long, default_value = "sim")]
    household: String,
    /// Seconds between consecutive synthetic events
    #[arg(long, default_value_t = 60)]
    spacing_seconds: u32,
    /// Civil timestamp of the first event
    #[arg(long, default_value = "2021-03-01T00:00:00")]
    start: NaiveDateTime,
    /// Output path for the synthetic events CSV
    #[arg(long, env = "ENTROPYKIT_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Diagnostics go to stderr as JSONL, one object per line.
fn emit_diagnostics(diagnostics: &[Diagnostic]) {
    let mut err = io::stderr().lock();
    for d in diagnostics {
        let line = serde_json::to_string(d).expect("diagnostic serializes");
        let _ = writeln!(err, "{line}");
    }
}

fn cmd_features(args: FeaturesArgs) -> Result<ExitCode> {
    let alphabet = args.input.alphabet()?;
    let (events, mut diagnostics) = args.input.events(&alphabet)?;
    let labels = match &args.labels {
        Some(path) => parse_label_rows(open(path)?)?,
        None => Vec::new(),
    };
    let opts = PipelineOptions {
        baseline_weeks: args.baseline_weeks,
        train: TrainConfig {
            epochs: args.epochs,
            seed: args.seed,
            ..TrainConfig::default()
        },
        smoothing_alpha: args.input.smoothing_alpha,
        collapse_repeats: args.input.collapse_repeats,
        quartile_mode: args.quartile_mode,
        stationary_marginal: args.stationary_marginal,
        refit_t: args.refit_t,
        retrain_neep: args.retrain_neep,
    };
    let output = run_features(&events, &alphabet, &labels, &opts)?;
    diagnostics.extend(output.diagnostics);
    emit_diagnostics(&diagnostics);

    let mut config = args.input.config_json(&alphabet);
    let extra = serde_json::json!({
        "baseline_weeks": args.baseline_weeks,
        "train": serde_json::to_value(&opts.train).expect("config serializes"),
        "quartile_mode": args.quartile_mode,
        "stationary_marginal": args.stationary_marginal,
        "refit_t": args.refit_t,
        "retrain_neep": args.retrain_neep,
        "labels": args.labels.as_ref().map(|p| p.display().to_string()),
        "output_format": args.output_format.name(),
    });
    config
        .as_object_mut()
        .expect("config is an object")
        .extend(extra.as_object().expect("extra is an object").clone());

    let mut text = metadata_line("features", &config, args.seed);
    text.push_str(&emit_feature_table(&output.rows, args.output_format.into()));
    write_output(args.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit(args: FitArgs) -> Result<ExitCode> {
    let alphabet = args.input.alphabet()?;
    let (events, diagnostics) = args.input.events(&alphabet)?;
    emit_diagnostics(&diagnostics);
    let trajectories = entropykit::pipeline::period_trajectories(
        &events,
        args.input.collapse_repeats,
        match args.period {
            PeriodArg::All => DayPeriodFilter::All,
            PeriodArg::Day => DayPeriodFilter::Daytime,
            PeriodArg::Night => DayPeriodFilter::Night,
        },
    );
    let matrix = fit_transition_matrix(&trajectories, &alphabet, args.input.smoothing_alpha)?;
    write_output(args.out.as_deref(), &matrix.to_json())?;
    let summary = serde_json::json!({
        "command": "fit",
        "config": args.input.config_json(&alphabet),
        "period": args.period.name(),
        "runs": trajectories.len(),
        "transitions": matrix.total_transitions(),
    });
    let _ = writeln!(io::stderr(), "{summary}");
    Ok(ExitCode::SUCCESS)
}

fn matrix_report(matrix: &TransitionMatrix) -> serde_json::Value {
    let n = matrix.n();
    let counts: Vec<Vec<u64>> = (0..n)
        .map(|i| (0..n).map(|j| matrix.count(i, j)).collect())
        .collect();
    let probs: Vec<&[f64]> = (0..n).map(|i| matrix.probs_row(i)).collect();
    let (stationary, rate) = match stationary_distribution(matrix) {
        Ok(s) => {
            let rate = entropy_rate(matrix, &s.pi).ok();
            (Some(s), rate)
        }
        Err(_) => (None, None),
    };
    let (ep, ep_note) = match analytic_ep_rate(matrix) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    serde_json::json!({
        "kind": "transition_matrix",
        "alphabet": matrix.alphabet().symbols(),
        "n_states": n,
        "total_transitions": matrix.total_transitions(),
        "uniform_rows": matrix.uniform_rows(),
        "counts": counts,
        "probs": probs,
        "stationary": stationary.as_ref().map(|s| s.pi.probs().to_vec()),
        "stationary_unique": stationary.as_ref().map(|s| s.unique),
        "stationary_oscillatory": stationary.as_ref().map(|s| s.oscillatory),
        "entropy_rate_stationary": rate,
        "analytic_ep_rate": ep,
        "ep_note": ep_note,
    })
}

fn cmd_inspect(args: InspectArgs) -> Result<ExitCode> {
    let text = read_to_string(&args.input)?;
    let report = match TransitionMatrix::from_json(&text) {
        Ok(matrix) => matrix_report(&matrix),
        Err(matrix_err) => match load_checkpoint(&text) {
            Ok((model, alphabet, config)) => serde_json::json!({
                "kind": "neep_checkpoint",
                "alphabet": alphabet.symbols(),
                "n_states": model.n_states(),
                "embedding_width": model.embedding_width(),
                "hidden": model.hidden(),
                "param_count": model.params().len(),
                "config": serde_json::to_value(&config).expect("config serializes"),
            }),
            Err(model_err) => {
                return Err(Error::Schema(format!(
                    "{}: not a transition matrix ({matrix_err}) nor a checkpoint ({model_err})",
                    args.input.display()
                )));
            }
        },
    };
    let mut out = serde_json::to_string_pretty(&report).expect("report serializes");
    out.push('\n');
    write_output(None, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let matrix = TransitionMatrix::from_json(&read_to_string(&args.matrix)?)?;
    let stationary = stationary_distribution(&matrix)?;
    let trajectory = simulate_trajectory(&matrix, &stationary.pi, args.steps, args.seed)?;
    let symbols = matrix.alphabet().symbols();

    let config = serde_json::json!({
        "matrix": args.matrix.display().to_string(),
        "steps": args.steps,
        "household": args.household,
        "spacing_seconds": args.spacing_seconds,
        "start": args.start.format("%Y-%m-%dT%H:%M:%S").to_string(),
    });
    let mut text = metadata_line("simulate", &config, args.seed);
    text.push_str("household_id,timestamp,location\n");
    for (i, &state) in trajectory.states().iter().enumerate() {
        let t = args.start + chrono::Duration::seconds(i64::from(args.spacing_seconds) * i as i64);
        text.push_str(&format!(
            "{},{},{}\n",
            args.household,
            t.format("%Y-%m-%dT%H:%M:%S"),
            symbols[state]
        ));
    }
    write_output(Some(&args.out), &text)?;

    let rate = entropy_rate(&matrix, &stationary.pi)?;
    let (ep, ep_note) = match analytic_ep_rate(&matrix) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = serde_json::json!({
        "command": "simulate",
        "out": args.out.display().to_string(),
        "config": config,
        "seed": args.seed,
        "alphabet": symbols,
        "stationary": stationary.pi.probs(),
        "stationary_unique": stationary.unique,
        "stationary_oscillatory": stationary.oscillatory,
        "entropy_rate_stationary": rate,
        "analytic_ep_rate": ep,
        "ep_note": ep_note,
    });
    let mut out = serde_json::to_string_pretty(&report).expect("report serializes");
    out.push('\n');
    write_output(None, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(_args: ValidateArgs) -> Result<ExitCode> {
    let mut all_passed = true;
    let mut stdout = io::stdout().lock();
    for outcome in run_battery() {
        all_passed &= outcome.passed;
        let verdict = if outcome.passed { "ok  " } else { "FAIL" };
        let _ = writeln!(stdout, "{verdict} {} ({})", outcome.name, outcome.details);
    }
    if all_passed {
        let _ = writeln!(stdout, "all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Features(args) => cmd_features(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Inspect(args) => cmd_inspect(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            ExitCode::from(1)
        }
    }
}
