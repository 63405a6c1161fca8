//! `emu`: command-line front end for the Expectable Motion Unit toolkit.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use emu_core::config::{ConfigBundle, SharedConfig, CONFIG_ENV};
use emu_core::risk_model::{
    self, build_risk_matrix, fit_expectation_curve, threshold_crossings, CrossingSet,
    MatrixOptions, RiskMatrix, DEFAULT_D_MAX, DEFAULT_Q_R,
};
use emu_core::service::{self, Server, SessionOptions};
use emu_core::simulator::{self, ApproachScenario, TraceFormat};
use emu_core::trial_data::{
    cue_counts_by_trial_index, first_trial_outlier, parse_trials, AnnotationPair, KappaReport,
    MergePolicy,
};

#[derive(Debug, Parser)]
#[command(name = "emu", version, about = "Expectable Motion Unit toolkit")]
struct Cli {
    /// Configuration bundle (safety curves, expectation curves, arm model).
    /// Falls back to the built-in demo bundle.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    /// IMO threshold. Selects the expectation curve for govern/simulate/serve
    /// and the crossing level for fit-curve (default 0.15).
    #[arg(long = "q-r", global = true)]
    q_r: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a trials CSV and summarise it.
    Ingest {
        /// Trials CSV, `-` for stdin.
        trials: PathBuf,
    },
    /// Build the velocity/distance risk matrix from a trials CSV.
    Riskmatrix {
        trials: PathBuf,
        /// Keep the first (unexpected) approach of every participant.
        #[arg(long)]
        include_first_trial: bool,
        #[arg(long, default_value_t = 0.05)]
        distance_bin: f64,
        #[arg(long, default_value_t = 0.05)]
        velocity_bin: f64,
        /// Coder merge policy: either, both, or coder:<id>.
        #[arg(long, default_value = "either")]
        merge: MergePolicy,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fit an expectation curve from a risk matrix or a crossings document.
    FitCurve {
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_D_MAX)]
        d_max: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Cohen's kappa between two coders.
    Kappa {
        /// `key,coder_a,coder_b` CSV of 0/1 labels.
        #[arg(required_unless_present = "trials", conflicts_with = "trials")]
        pairs: Option<PathBuf>,
        /// Derive IMO labels from a trials CSV instead.
        #[arg(long, requires_all = ["coder_a", "coder_b"])]
        trials: Option<PathBuf>,
        #[arg(long)]
        coder_a: Option<String>,
        #[arg(long)]
        coder_b: Option<String>,
        /// Emit the machine-readable report.
        #[arg(long)]
        json: bool,
    },
    /// Simulate an approach and write the trace.
    Simulate {
        /// Scenario document; the built-in default scenario if omitted.
        scenario: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Write `d_h,v_cmd` pairs instead of the full trace.
        #[arg(long)]
        emit_plot_data: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Answer telemetry lines from stdin with limit lines on stdout.
    Govern {
        /// Include processing latency in replies.
        #[arg(long)]
        latency: bool,
    },
    /// Serve the telemetry protocol over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7070")]
        bind: String,
        /// Omit processing latency from replies.
        #[arg(long)]
        no_latency: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf)?;
        Ok(buf)
    } else {
        fs::read(path).with_context(|| format!("cannot read {}", path.display()))
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn json_line<T: serde::Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn load_bundle(cli: &Cli) -> Result<ConfigBundle> {
    let bundle = ConfigBundle::resolve(cli.config.as_deref())?;
    Ok(match cli.q_r {
        Some(q) => bundle.with_default_q_r(q)?,
        None => bundle,
    })
}

fn check_q_r(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        bail!("--q-r must lie in (0, 1), got {q}");
    }
    Ok(q)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest { trials } => {
            let records = parse_trials(read_input(trials)?.as_slice())?;
            let participants: BTreeSet<_> =
                records.iter().map(|r| r.participant.as_str()).collect();
            let coders: BTreeSet<_> = records.iter().map(|r| r.coder.as_str()).collect();
            let imo = records.iter().filter(|r| r.is_imo()).count();
            let counts = cue_counts_by_trial_index(&records);
            let mut out = String::new();
            out += &format!("records:      {}\n", records.len());
            out += &format!("participants: {}\n", participants.len());
            out += &format!(
                "coders:       {}\n",
                coders.into_iter().collect::<Vec<_>>().join(",")
            );
            out += &format!("imo:          {imo}\n");
            out += "cues by trial index:\n";
            for (idx, n) in &counts {
                out += &format!("  {idx:>3}  {n}\n");
            }
            out += &format!("first_trial_outlier: {}\n", first_trial_outlier(&counts));
            write_output(None, out.as_bytes())
        }
        Command::Riskmatrix {
            trials,
            include_first_trial,
            distance_bin,
            velocity_bin,
            merge,
            output,
        } => {
            let records = parse_trials(read_input(trials)?.as_slice())?;
            let options = MatrixOptions {
                exclude_first_trial: !include_first_trial,
                distance_bin_width: *distance_bin,
                velocity_bin_width: *velocity_bin,
                merge_policy: merge.clone(),
            };
            let matrix = build_risk_matrix(&records, &options)?;
            write_output(output.as_deref(), &json_line(&matrix)?)
        }
        Command::FitCurve {
            input,
            d_max,
            output,
        } => {
            let bytes = read_input(input)?;
            let value: serde_json::Value =
                serde_json::from_slice(&bytes).context("input is not a JSON document")?;
            let (crossings, q_r) = if value.get("crossings").is_some() {
                let set: CrossingSet = serde_json::from_value(value)?;
                let q_r = check_q_r(cli.q_r.or(set.q_r).unwrap_or(DEFAULT_Q_R))?;
                (set.crossings, q_r)
            } else {
                let matrix: RiskMatrix = serde_json::from_value(value)?;
                let q_r = check_q_r(cli.q_r.unwrap_or(DEFAULT_Q_R))?;
                (threshold_crossings(&matrix, q_r)?, q_r)
            };
            let curve = fit_expectation_curve(&crossings, q_r, *d_max)?;
            eprintln!(
                "fitted {} crossings, max residual {:.3e}",
                crossings.len(),
                risk_model::max_residual(&curve, &crossings)
            );
            write_output(output.as_deref(), &json_line(&curve)?)
        }
        Command::Kappa {
            pairs,
            trials,
            coder_a,
            coder_b,
            json,
        } => {
            let pairs = match (pairs, trials) {
                (Some(p), _) => AnnotationPair::parse_csv(read_input(p)?.as_slice())?,
                (None, Some(t)) => {
                    let records = parse_trials(read_input(t)?.as_slice())?;
                    AnnotationPair::from_trials(
                        &records,
                        coder_a.as_deref().unwrap_or_default(),
                        coder_b.as_deref().unwrap_or_default(),
                    )?
                }
                (None, None) => bail!("either a pairs file or --trials is required"),
            };
            let report = KappaReport::new(&pairs)?;
            if *json {
                write_output(None, &json_line(&report)?)
            } else {
                write_output(None, report.to_text().as_bytes())
            }
        }
        Command::Simulate {
            scenario,
            format,
            emit_plot_data,
            output,
        } => {
            let bundle = load_bundle(&cli)?;
            let scenario = match scenario {
                Some(p) => ApproachScenario::from_json(std::str::from_utf8(&read_input(p)?)?)?,
                None => ApproachScenario::default_scenario(),
            };
            let trace = simulator::run_approach(&scenario, &bundle)?;
            let bytes = if *emit_plot_data {
                simulator::export_plot_data(&trace)
            } else {
                let format = match format {
                    Format::Csv => TraceFormat::Csv,
                    Format::Json => TraceFormat::Document,
                };
                simulator::export_trace(&trace, format)
            };
            write_output(output.as_deref(), &bytes)
        }
        Command::Govern { latency } => {
            let bundle = load_bundle(&cli)?;
            let shared = SharedConfig::new(bundle, cli.config.clone());
            let stdin = io::stdin();
            let stdout = io::stdout();
            service::govern(
                BufReader::new(stdin.lock()),
                stdout.lock(),
                &shared,
                SessionOptions {
                    report_latency: *latency,
                },
            )?;
            Ok(())
        }
        Command::Serve { bind, no_latency } => {
            let bundle = load_bundle(&cli)?;
            let shared = Arc::new(SharedConfig::new(bundle, cli.config.clone()));
            let server = Server::bind(
                bind.as_str(),
                SessionOptions {
                    report_latency: !no_latency,
                },
            )
            .with_context(|| format!("cannot bind {bind}"))?;
            eprintln!("listening on {}", server.local_addr()?);
            server.run(shared)?;
            Ok(())
        }
    }
}

/// A closed downstream pipe (`emu simulate | head`) is not a failure.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<io::Error>()
            .is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
