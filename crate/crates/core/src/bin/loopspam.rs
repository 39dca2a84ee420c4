use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use loopspam::counts::TrialSet;
use loopspam::polarimetry::EveMode;
use loopspam::scenario::{self, AnalysisOptions, RunReport, ScenarioConfig, SettingsFile};
use loopspam::tomography::{self, QstReport, TomographyInput};
use loopspam::{Error, Result};

const DEFAULT_OUTPUT_DIR: &str = "loopspam-out";

#[derive(Parser)]
#[command(name = "loopspam", version, about = "Loop SPAM consistency test for two-qubit polarization experiments")]
struct Cli {
    /// Output directory [default: the config's `outputs`, else ./loopspam-out]
    #[arg(long, global = true, env = "LOOPSPAM_OUTPUT_DIR", value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate counts for a scenario and analyze them
    Simulate(SimulateArgs),
    /// Analyze a counts CSV file
    Analyze(AnalyzeArgs),
    /// Write the Δ statistics of a report as flat CSV grids
    Plotdata {
        /// A report.json written by `simulate` or `analyze`
        report: PathBuf,
    },
    /// Reconstruct the two-qubit state from a counts CSV file
    Qst(CountsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config (JSON)
    config: PathBuf,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trials
    #[arg(long)]
    trials: Option<usize>,
    /// Coincidences per trial
    #[arg(long)]
    counts: Option<u64>,
    /// Eavesdropper mode: off, paper-table or max-correlation
    #[arg(long)]
    eve: Option<EveMode>,
    /// Detection threshold on |mean|/std
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct CountsArgs {
    /// Counts CSV (trial,i,j,n_ab,n_abp,n_apb,n_apbp)
    counts: PathBuf,
    /// JSON file with `alice_settings` and `bob_settings` (a scenario config works)
    #[arg(long)]
    settings: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: CountsArgs,
    /// Detection threshold on |mean|/std
    #[arg(long, default_value_t = loopspam::consistency::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Largest condition number accepted for the inverted corners
    #[arg(long, default_value_t = loopspam::consistency::DEFAULT_CONDITION_CAP)]
    condition_cap: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}

fn non_empty<'a>(flag: &str, path: &'a Path) -> Result<&'a Path> {
    if path.as_os_str().is_empty() {
        Err(Error::config(flag, "path must not be empty"))
    } else {
        Ok(path)
    }
}

fn output_dir(out: Option<&Path>, configured: Option<&Path>) -> Result<PathBuf> {
    match out.or(configured) {
        Some(p) => Ok(non_empty("--out", p)?.to_path_buf()),
        None => Ok(PathBuf::from(DEFAULT_OUTPUT_DIR)),
    }
}

fn run(cli: Cli) -> Result<u8> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::Simulate(args) => simulate(args, out),
        Command::Analyze(args) => analyze(args, out),
        Command::Plotdata { report } => plotdata(&report, out),
        Command::Qst(args) => qst(args, out),
    }
}

fn load_counts(args: &CountsArgs) -> Result<TrialSet> {
    let settings = SettingsFile::load(non_empty("--settings", &args.settings)?)?;
    TrialSet::read_csv_file(non_empty("counts", &args.counts)?, settings.alice_settings, settings.bob_settings)
}

fn simulate(args: SimulateArgs, out: Option<&Path>) -> Result<u8> {
    let mut config = ScenarioConfig::load(non_empty("config", &args.config)?)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(trials) = args.trials {
        config.n_trials = trials;
    }
    if let Some(counts) = args.counts {
        config.n_total = counts;
    }
    if let Some(mode) = args.eve {
        config.eve.mode = mode;
        if mode == EveMode::Off {
            config.eve.remap.clear();
        }
    }
    if let Some(threshold) = args.threshold {
        config.threshold = threshold;
    }
    config.validate()?;
    let dir = output_dir(out, config.outputs.as_deref())?;

    let sim = scenario::simulate(&config)?;
    let mut written = scenario::write_counts(&dir, &sim.trials)?;
    written.extend(scenario::write_report(&dir, &sim.report)?);

    if let Some(name) = &config.name {
        println!("scenario: {name}");
    }
    println!(
        "trials: {} x {} coincidences, master seed {}",
        config.n_trials, config.n_total, config.master_seed
    );
    print_summary(&sim.report);
    print_written(&written);
    Ok(sim.report.exit_code() as u8)
}

fn analyze(args: AnalyzeArgs, out: Option<&Path>) -> Result<u8> {
    let trials = load_counts(&args.input)?;
    let options = AnalysisOptions {
        threshold: args.threshold,
        condition_cap: args.condition_cap,
    };
    let report = scenario::analyze(&trials, &options)?;
    let written = scenario::write_report(&output_dir(out, None)?, &report)?;
    println!("trials: {}", report.n_trials);
    print_summary(&report);
    print_written(&written);
    Ok(report.exit_code() as u8)
}

fn plotdata(report_path: &Path, out: Option<&Path>) -> Result<u8> {
    let report = RunReport::load(non_empty("report", report_path)?)?;
    let stats = &report
        .loop_analysis
        .as_ref()
        .ok_or_else(|| Error::config("loop_analysis", "the report has no loop test statistics"))?
        .stats;
    let dir = match out {
        Some(p) => non_empty("--out", p)?.to_path_buf(),
        None => report_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    print_written(&scenario::write_plot_data(&dir, stats)?);
    Ok(0)
}

fn qst(args: CountsArgs, out: Option<&Path>) -> Result<u8> {
    let trials = load_counts(&args)?;
    let report = tomography::qst_report(&TomographyInput::from_trial_set(&trials)?)?;
    let written = scenario::write_qst(&output_dir(out, None)?, &report)?;
    print_qst(&report);
    print_written(&[written]);
    Ok(0)
}

fn print_summary(report: &RunReport) {
    if let Some(chsh) = &report.chsh {
        match chsh.std {
            Some(std) => println!("CHSH S: {:.4} +/- {:.4}", chsh.mean, std),
            None => println!("CHSH S: {:.4}", chsh.mean),
        }
    }
    match (&report.loop_analysis, &report.loop_skipped) {
        (Some(l), _) => {
            let v = &l.verdict;
            let outcome = if v.detected() { "CORRELATED ERRORS DETECTED" } else { "consistent" };
            println!(
                "loop test: {outcome} (worst |mean|/std {:.3} at ({}, {}), threshold {})",
                v.worst_ratio, v.worst.0, v.worst.1, v.threshold
            );
        }
        (None, Some(reason)) => println!("loop test: skipped ({reason})"),
        (None, None) => {}
    }
    match (&report.qst, &report.qst_skipped) {
        (Some(q), _) => print_qst(q),
        (None, Some(reason)) => println!("QST: skipped ({reason})"),
        (None, None) => {}
    }
}

fn print_qst(q: &QstReport) {
    println!(
        "QST: M = {:.4}, S_max = {:.4}, negativity = {:.4}, purity = {:.4}",
        q.horodecki_m, q.s_max, q.negativity, q.purity
    );
    let fit = &q.werner_fit;
    println!(
        "Werner fit: p_s = {:.4}, p_w = {:.4}, fidelity = {:.6}{}",
        fit.p_s,
        fit.p_w,
        fit.fidelity,
        if fit.p_s_degenerate { " (p_s undetermined)" } else { "" }
    );
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}
