//! The `agency` command line.
//!
//! [`run`] parses arguments, executes one subcommand and returns the process
//! exit code, writing normal output to `out` and diagnostics to `err`, so the
//! whole surface can be driven in-process from tests.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use crate::batch::{
    grade_with_oracle, run_canon, BatchError, CanonBackend, CanonManifest, CanonOptions,
};
use crate::problem::{
    read_file, render_transcript, write_file, GradingTemplate, ProblemStatement, Transcript,
    Verdict,
};
use crate::runtime::remote::API_KEY_ENV;
use crate::runtime::{
    Agency, AgencyError, AgencyOptions, BackendConfig, BackendKind, ModelBackend, ReasoningEffort,
    RemoteBackend, SimulatedBackend,
};
use crate::sim::{
    monte_carlo_posterior, verify_condorcet, CompareMode, ProblemProfile, SimError, SimReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_INCONCLUSIVE: i32 = 4;

/// Default output directory for `batch` when `--out` is not given.
pub const DEFAULT_BATCH_OUT: &str = "agency-out";

#[derive(Debug, Parser)]
#[command(
    name = "agency",
    version,
    about = "N independent solve agents plus one compare agent"
)]
pub struct Cli {
    /// TOML file whose keys mirror the backend configuration fields.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    Remote,
    Sim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EffortArg {
    Low,
    Medium,
    High,
}

impl From<EffortArg> for ReasoningEffort {
    fn from(e: EffortArg) -> Self {
        match e {
            EffortArg::Low => ReasoningEffort::Low,
            EffortArg::Medium => ReasoningEffort::Medium,
            EffortArg::High => ReasoningEffort::High,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CompareModeArg {
    Prevalent,
    Recognition,
}

impl From<CompareModeArg> for CompareMode {
    fn from(m: CompareModeArg) -> Self {
        match m {
            CompareModeArg::Prevalent => CompareMode::Prevalent,
            CompareModeArg::Recognition => CompareMode::Recognition,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one problem with N solve agents and one compare agent.
    Solve {
        #[arg(long, value_name = "PATH")]
        problem: PathBuf,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, value_name = "ID")]
        model: Option<String>,
        #[arg(long, value_enum)]
        effort: Option<EffortArg>,
        #[arg(long, value_enum)]
        backend: Option<BackendChoice>,
        /// Problem profile driving the simulated backend.
        #[arg(long, value_name = "PATH")]
        profile: Option<PathBuf>,
        /// Write the transcript here; without it the rendered transcript goes to stdout.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        allow_partial: bool,
        /// Log request and response bodies (credentials redacted) under `<out>/wire/`.
        #[arg(long)]
        debug_wire: bool,
        #[arg(long, value_enum, default_value = "prevalent")]
        compare_mode: CompareModeArg,
    },
    /// Solve every problem in a canon manifest and report p_hat and varpi.
    Batch {
        #[arg(long, value_name = "PATH")]
        canon: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum)]
        backend: Option<BackendChoice>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1, value_name = "K")]
        canon_parallel: usize,
        /// Overrides the seeds of all simulated profiles.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "prevalent")]
        compare_mode: CompareModeArg,
    },
    /// Monte Carlo checks of the consensus statistics.
    Simulate {
        #[command(subcommand)]
        check: SimulateCommand,
    },
    /// Grade a simulated transcript with the class oracle.
    Grade {
        #[arg(long, value_name = "PATH")]
        transcript: PathBuf,
        #[arg(long, value_name = "PATH")]
        profile: PathBuf,
        #[arg(long, value_name = "PATH")]
        template: PathBuf,
    },
    /// Print a transcript as Markdown.
    Render {
        #[arg(long, value_name = "PATH")]
        transcript: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Posterior that class 1 is correct given m1 of n votes, by rejection sampling.
    Posterior {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m1: usize,
        #[arg(long)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Probability that n solves produce a predominant correct class.
    Condorcet {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// A failed command: message plus exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn validation(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.to_string(),
        }
    }

    fn backend(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_BACKEND,
            message: message.to_string(),
        }
    }
}

impl From<AgencyError> for Failure {
    fn from(e: AgencyError) -> Self {
        if e.is_validation() {
            Failure::validation(e)
        } else {
            Failure::backend(e)
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Inconclusive { .. } => Failure {
                code: EXIT_INCONCLUSIVE,
                message: e.to_string(),
            },
            other => Failure::validation(other),
        }
    }
}

impl From<BatchError> for Failure {
    fn from(e: BatchError) -> Self {
        match e {
            BatchError::Agency(a) => a.into(),
            other => Failure::validation(other),
        }
    }
}

impl From<crate::problem::ProblemError> for Failure {
    fn from(e: crate::problem::ProblemError) -> Self {
        Failure::validation(e)
    }
}

type CmdResult = Result<(), Failure>;

/// Runs the CLI and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> CmdResult {
    let file_config = match &cli.config {
        Some(path) => Some(
            BackendConfig::from_toml(&read_file(path)?)
                .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?,
        ),
        None => None,
    };
    match cli.command {
        Command::Solve {
            problem,
            n,
            model,
            effort,
            backend,
            profile,
            out: out_dir,
            allow_partial,
            debug_wire,
            compare_mode,
        } => {
            let config = resolve_config(file_config, backend, model, effort);
            let stmt = ProblemStatement::load(&problem)?;
            let wire_dir = debug_wire.then(|| {
                out_dir
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("."))
                    .join("wire")
            });
            let model_backend: Arc<dyn ModelBackend> = match config.kind {
                BackendKind::Simulated => {
                    let path = profile.ok_or_else(|| Failure {
                        code: EXIT_USAGE,
                        message: "--backend sim requires --profile".into(),
                    })?;
                    let profile = ProblemProfile::load(&path)?;
                    Arc::new(SimulatedBackend::new(profile).with_compare_mode(compare_mode.into()))
                }
                BackendKind::Remote => remote_backend(&config, wire_dir)?,
            };
            let options = AgencyOptions {
                allow_partial,
                out_dir: out_dir.clone(),
                ..AgencyOptions::default()
            };
            let agency = Agency::new(model_backend, config)?.with_options(options);
            let transcript = runtime()?.block_on(agency.run(&stmt, n))?;
            match out_dir {
                Some(dir) => {
                    let _ = writeln!(
                        out,
                        "wrote {} and {}",
                        dir.join(transcript.json_file_name()).display(),
                        dir.join(transcript.markdown_file_name()).display()
                    );
                    if let Some(labels) = transcript.class_labels() {
                        if let Ok(tally) = crate::consensus::make_tally(&labels) {
                            let _ = writeln!(out, "tally: {tally}");
                        }
                    }
                }
                None => {
                    let _ = write!(out, "{}", render_transcript(&transcript));
                }
            }
            Ok(())
        }
        Command::Batch {
            canon,
            n,
            backend,
            out: out_dir,
            canon_parallel,
            seed,
            compare_mode,
        } => {
            let config = resolve_config(file_config, backend, None, None);
            let manifest = CanonManifest::load(&canon)?;
            let out_dir = out_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_BATCH_OUT));
            let canon_backend = match config.kind {
                BackendKind::Simulated => CanonBackend::Simulated {
                    compare_mode: compare_mode.into(),
                    seed,
                },
                BackendKind::Remote => CanonBackend::Shared(remote_backend(&config, None)?),
            };
            let options = CanonOptions {
                config,
                agency: AgencyOptions {
                    out_dir: Some(out_dir.clone()),
                    ..AgencyOptions::default()
                },
                canon_parallel,
            };
            let report = runtime()?.block_on(run_canon(&manifest, n, &canon_backend, &options))?;
            let report_path = out_dir.join(report.file_name());
            write_file(&report_path, &report.to_json())?;
            let _ = writeln!(out, "{report}");
            let _ = writeln!(out, "report: {}", report_path.display());
            if report.any_failed() {
                let failed = report
                    .per_problem
                    .iter()
                    .filter(|r| r.error.is_some())
                    .count();
                return Err(Failure::backend(format!("{failed} canon entries failed")));
            }
            Ok(())
        }
        Command::Simulate { check } => {
            let report = match check {
                SimulateCommand::Posterior {
                    p,
                    n,
                    m1,
                    trials,
                    seed,
                } => monte_carlo_posterior(p, n, m1, trials, seed)?,
                SimulateCommand::Condorcet { p, n, trials, seed } => {
                    let profile = ProblemProfile::two_class("condorcet", p, seed)?;
                    verify_condorcet(&profile, n, trials, seed, None)?
                }
            };
            report_simulation(&report, out)
        }
        Command::Grade {
            transcript,
            profile,
            template,
        } => {
            let transcript = Transcript::load(&transcript)?;
            let profile = ProblemProfile::load(&profile)?;
            let template = GradingTemplate::load(&template)?;
            let grades = grade_with_oracle(&transcript, &profile, &template)?;
            let mut correct = 0;
            for (r, g) in transcript.realizations.iter().zip(&grades) {
                if g.verdict == Verdict::Correct {
                    correct += 1;
                }
                let _ = writeln!(
                    out,
                    "realization {:>3}  class={:<16} grade={:>3}  {}",
                    r.index,
                    r.class_label.as_deref().unwrap_or("-"),
                    g.value,
                    g.verdict
                );
            }
            let _ = writeln!(
                out,
                "p_hat = {:.4} ({correct} of {} correct)",
                correct as f64 / grades.len() as f64,
                grades.len()
            );
            Ok(())
        }
        Command::Render { transcript } => {
            let transcript = Transcript::load(&transcript)?;
            let _ = write!(out, "{}", render_transcript(&transcript));
            Ok(())
        }
    }
}

fn resolve_config(
    file: Option<BackendConfig>,
    backend: Option<BackendChoice>,
    model: Option<String>,
    effort: Option<EffortArg>,
) -> BackendConfig {
    let kind = match backend {
        Some(BackendChoice::Sim) => Some(BackendKind::Simulated),
        Some(BackendChoice::Remote) => Some(BackendKind::Remote),
        None => None,
    };
    let mut config = match (file, kind) {
        (Some(mut c), Some(k)) => {
            c.kind = k;
            c
        }
        (Some(c), None) => c,
        (None, Some(BackendKind::Simulated)) => BackendConfig::simulated(),
        (None, _) => BackendConfig::default(),
    };
    if let Some(m) = model {
        config.model_id = m;
    }
    if let Some(e) = effort {
        config.reasoning_effort = e.into();
    }
    config
}

fn remote_backend(
    config: &BackendConfig,
    wire_dir: Option<PathBuf>,
) -> Result<Arc<dyn ModelBackend>, Failure> {
    if std::env::var_os(API_KEY_ENV).is_none_or(|k| k.is_empty()) {
        return Err(Failure::backend(format!(
            "{API_KEY_ENV} is not set; the remote backend needs it"
        )));
    }
    let backend = RemoteBackend::from_env(config).map_err(Failure::backend)?;
    Ok(Arc::new(match wire_dir {
        Some(dir) => backend.with_wire_log(dir),
        None => backend,
    }))
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::backend(format!("cannot start async runtime: {e}")))
}

fn report_simulation(report: &SimReport, out: &mut dyn Write) -> CmdResult {
    let _ = writeln!(out, "{report}");
    if report.pass {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_INCONCLUSIVE,
            message: "empirical value is outside the tolerance".into(),
        })
    }
}
