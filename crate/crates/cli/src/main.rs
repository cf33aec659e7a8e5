//! `aoitol`: batch entry points for the tolerance optimisation pipeline.
//!
//! Exit codes: 0 success, 1 I/O failure while writing, 2 unreadable or
//! malformed input, 3 invalid parameters or unmet preconditions, 4 a holdout
//! defect escaped during validation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use aoitol_core::ingest::{ingest, to_canonical_string, ColumnMapping, IngestOutcome, PartDataset, PartKey};
use aoitol_core::optimizer::{optimize_all, proposals_to_jsonl, SafetyMargin};
use aoitol_core::quantile::Percentile;
use aoitol_core::simulate::{
    aggregate_report, default_grid, generate_synthetic, parse_percentile_list, render_table, sweep, SweepOutcome,
    SyntheticSpec,
};
use aoitol_core::validation::{
    run_validation_protocol, validation_report_csv, ProtocolConfig, SplitPolicy, ValidationError,
};
use aoitol_service::Store;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "aoitol", version, about = "Data-driven AOI tolerance optimisation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and group an inspection CSV, reporting rejects and quarantine.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Directory receiving `canonical.csv` and `rejects.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Propose a tolerance per part and print the summary table.
    Optimize {
        #[command(flatten)]
        opt: OptimizeArgs,
        /// Destination for the proposals as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the holdout protocol; exits 0 only when every holdout defect is flagged.
    Validate {
        #[command(flatten)]
        opt: OptimizeArgs,
        #[arg(long, default_value_t = 0.7)]
        ratio: f64,
        #[arg(long = "top-k", default_value_t = 5)]
        top_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SplitKind::Chronological)]
        split: SplitKind,
    },
    /// Evaluate a list of percentiles without changing anything.
    Sweep {
        #[arg(long)]
        input: PathBuf,
        /// `a,b,c` or `start:stop:step`; defaults to 50..95 by 5 plus 99.
        #[arg(long)]
        percentiles: Option<String>,
        #[arg(long, default_value = "1%")]
        margin: String,
        /// Destination for the sweep as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-part before/after table as JSON.
    Report {
        #[command(flatten)]
        opt: OptimizeArgs,
    },
    /// Write a seeded synthetic dataset in the canonical CSV format.
    Generate {
        /// JSON synthetic spec; omitted fields take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Event log path; in-memory when omitted.
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 80.0)]
    percentile: f64,
    /// Relative with a `%` suffix (`1%`), otherwise absolute (`0.25`).
    #[arg(long, default_value = "1%")]
    margin: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitKind {
    Chronological,
    Shuffled,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
    fn param(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn parse_margin(raw: &str) -> CliResult<SafetyMargin> {
    let raw = raw.trim();
    let margin = match raw.strip_suffix('%') {
        Some(pct) => pct.trim().parse::<f64>().map(|v| SafetyMargin::Relative(v / 100.0)),
        None => raw.parse::<f64>().map(SafetyMargin::Absolute),
    }
    .map_err(|_| Failure::param(format!("invalid margin `{raw}`")))?;
    margin.validate().map_err(|e| Failure::param(e.to_string()))?;
    Ok(margin)
}

fn parse_percentile(p: f64) -> CliResult<Percentile> {
    Percentile::new(p).map_err(|e| Failure::param(e.to_string()))
}

fn load(input: &Path) -> CliResult<IngestOutcome> {
    let file = fs::File::open(input).map_err(|e| Failure::input(format!("cannot open {}: {e}", input.display())))?;
    let outcome =
        ingest(file, &ColumnMapping::default()).map_err(|e| Failure::input(format!("{}: {e}", input.display())))?;
    if !outcome.log.is_empty() {
        eprintln!(
            "{}: {} rows read, {} rejected, {} quarantined",
            input.display(),
            outcome.rows_read,
            outcome.rejected,
            outcome.quarantined
        );
    }
    Ok(outcome)
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents).map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("outputs serialise") + "\n"
}

fn cmd_ingest(input: &Path, out: Option<&Path>) -> CliResult {
    let outcome = load(input)?;
    println!("rows_read {}", outcome.rows_read);
    println!("accepted {}", outcome.accepted());
    println!("rejected {}", outcome.rejected);
    println!("quarantined {}", outcome.quarantined);
    println!("parts {}", outcome.datasets.len());
    for (reason, count) in outcome.log.by_reason() {
        println!("reason {reason:?} {count}");
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))?;
        write_file(
            &dir.join("canonical.csv"),
            &to_canonical_string(outcome.datasets.values()),
        )?;
        let rejects: String = outcome
            .log
            .entries
            .iter()
            .map(|r| serde_json::to_string(r).expect("rejects serialise") + "\n")
            .collect();
        write_file(&dir.join("rejects.jsonl"), &rejects)?;
    }
    Ok(())
}

fn optimise(
    datasets: &BTreeMap<PartKey, PartDataset>,
    opt: &OptimizeArgs,
) -> CliResult<aoitol_core::optimizer::BatchOutcome> {
    let p = parse_percentile(opt.percentile)?;
    let margin = parse_margin(&opt.margin)?;
    let batch = optimize_all(datasets, p, margin);
    for (key, err) in &batch.errors {
        eprintln!("{key}: {err}");
    }
    for prop in batch.proposals.iter().filter(|p| p.exceeds_current) {
        eprintln!(
            "warning: {} final tolerance {} exceeds current {} to keep a defect flagged",
            prop.key, prop.final_tolerance, prop.current_tolerance
        );
    }
    Ok(batch)
}

fn cmd_optimize(opt: &OptimizeArgs, out: Option<&Path>) -> CliResult {
    let p = parse_percentile(opt.percentile)?;
    parse_margin(&opt.margin)?;
    let outcome = load(&opt.input)?;
    let batch = optimise(&outcome.datasets, opt)?;
    if let Some(path) = out {
        write_file(path, &proposals_to_jsonl(&batch.proposals))?;
    }
    println!("percentile {}", p.value());
    print!("{}", render_table(&aggregate_report(&batch.proposals)));
    if batch.errors.is_empty() {
        Ok(())
    } else {
        Err(Failure::param(format!(
            "{} part(s) could not be optimised",
            batch.errors.len()
        )))
    }
}

fn cmd_report(opt: &OptimizeArgs) -> CliResult {
    parse_percentile(opt.percentile)?;
    parse_margin(&opt.margin)?;
    let outcome = load(&opt.input)?;
    let batch = optimise(&outcome.datasets, opt)?;
    print!("{}", to_json(&aggregate_report(&batch.proposals)));
    Ok(())
}

fn cmd_validate(opt: &OptimizeArgs, ratio: f64, top_k: usize, seed: u64, split: SplitKind) -> CliResult {
    let mut config = ProtocolConfig::new(parse_percentile(opt.percentile)?);
    config.margin = parse_margin(&opt.margin)?;
    config.train_ratio = ratio;
    config.top_k = top_k;
    config.policy = match split {
        SplitKind::Chronological => SplitPolicy::Chronological { fallback_seed: seed },
        SplitKind::Shuffled => SplitPolicy::Shuffled { seed },
    };
    let outcome = load(&opt.input)?;
    let report = run_validation_protocol(&outcome.datasets, &config).map_err(|e| match e {
        ValidationError::EmptySample => Failure::input(e.to_string()),
        _ => Failure::param(e.to_string()),
    })?;
    print!("{}", validation_report_csv(&report));
    for err in &report.errors {
        eprintln!("{}: {}", err.key, err.error);
    }
    if report.overall.fn_ > 0 {
        Err(Failure {
            code: 4,
            message: format!("{} holdout defect(s) escaped", report.overall.fn_),
        })
    } else if !report.errors.is_empty() {
        Err(Failure::param(format!(
            "{} part(s) could not be validated",
            report.errors.len()
        )))
    } else {
        Ok(())
    }
}

fn render_sweep(outcome: &SweepOutcome) -> String {
    let mut out = format!(
        "{:>6} {:>10} {:>10} {:>10} {:>8} {:>8} {:>6} {:>8}\n",
        "p", "fc_before", "fc_after", "reduction", "defects", "flagged", "guard", "exceeds"
    );
    for pt in &outcome.points {
        out += &format!(
            "{:>6} {:>10} {:>10} {:>9.2}% {:>8} {:>8} {:>6} {:>8}\n",
            pt.p,
            pt.total_false_calls_before,
            pt.total_false_calls_after,
            pt.reduction_fraction * 100.0,
            pt.defects_total,
            pt.defects_flagged,
            pt.guard_activations,
            pt.parts_exceeding_current
        );
    }
    out
}

fn cmd_sweep(input: &Path, percentiles: Option<&str>, margin: &str, out: Option<&Path>) -> CliResult {
    let ps = match percentiles {
        Some(raw) => parse_percentile_list(raw).map_err(|e| Failure::param(e.to_string()))?,
        None => default_grid(),
    };
    let margin = parse_margin(margin)?;
    let outcome = load(input)?;
    let result = sweep(&outcome.datasets, &ps, margin).map_err(|e| Failure::param(e.to_string()))?;
    if let Some(path) = out {
        write_file(path, &to_json(&result))?;
    }
    print!("{}", render_sweep(&result));
    for note in &result.annotations {
        eprintln!("{note:?}");
    }
    Ok(())
}

fn cmd_generate(spec: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> CliResult {
    let mut spec: SyntheticSpec = match spec {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let data = generate_synthetic(&spec).map_err(|e| Failure::param(e.to_string()))?;
    let csv = to_canonical_string(data.values());
    match out {
        Some(path) => write_file(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_serve(port: u16, store: Option<&Path>) -> CliResult {
    let store = match store {
        Some(path) => Store::open(path).map_err(|e| Failure::input(e.to_string()))?,
        None => Store::in_memory(),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .map_err(|e| Failure::io(format!("cannot bind port {port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Failure::io(e.to_string()))?;
        println!("listening on http://{addr}");
        println!("port {}", addr.port());
        aoitol_service::serve(listener, Arc::new(store))
            .await
            .map_err(|e| Failure::io(e.to_string()))
    })
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Ingest { input, out } => cmd_ingest(&input, out.as_deref()),
        Command::Optimize { opt, out } => cmd_optimize(&opt, out.as_deref()),
        Command::Validate {
            opt,
            ratio,
            top_k,
            seed,
            split,
        } => cmd_validate(&opt, ratio, top_k, seed, split),
        Command::Sweep {
            input,
            percentiles,
            margin,
            out,
        } => cmd_sweep(&input, percentiles.as_deref(), &margin, out.as_deref()),
        Command::Report { opt } => cmd_report(&opt),
        Command::Generate { spec, seed, out } => cmd_generate(spec.as_deref(), seed, out.as_deref()),
        Command::Serve { port, store } => cmd_serve(port, store.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(3),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
