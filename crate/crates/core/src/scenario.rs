//! Scenario configs and the end-to-end pipeline: simulate counts, run the
//! loop test, extract CHSH, reconstruct the state, and write reports.
//!
//! Simulation is a separate stage: [`simulate`] draws a [`TrialSet`] and then
//! calls [`analyze`] on it, exactly as the `analyze` subcommand does on a
//! counts file.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consistency::{
    self, build_expectation_matrix, LoopReport, PartialDeterminantStats, DEFAULT_CONDITION_CAP, DEFAULT_THRESHOLD,
};
use crate::counts::{run_trials, TrialSet};
use crate::polarimetry::{EveMode, EvePolicy, RemapEntry, WaveplateSetting};
use crate::states::{self, DensityOperator, StateParams};
use crate::tomography::{self, QstReport, TomographyInput};
use crate::{Error, Result};

pub const DEFAULT_N_TOTAL: u64 = 100_000;
pub const DEFAULT_N_TRIALS: usize = 10;

/// Either the model parameters or an explicit density matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Params(StateParams),
    Matrix { density_matrix: Box<DensityOperator> },
}

impl StateSpec {
    pub fn density_operator(&self) -> Result<DensityOperator> {
        match self {
            StateSpec::Params(p) => states::werner_like(*p),
            StateSpec::Matrix { density_matrix } => {
                density_matrix.ensure_psd()?;
                Ok(density_matrix.as_ref().clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EveSpec {
    #[serde(default)]
    pub mode: EveMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub remap: Vec<RemapEntry>,
}

fn default_n_total() -> u64 {
    DEFAULT_N_TOTAL
}

fn default_n_trials() -> usize {
    DEFAULT_N_TRIALS
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_condition_cap() -> f64 {
    DEFAULT_CONDITION_CAP
}

/// One experiment, as read from a `.cfg` (JSON) file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Free text; the bundled files use it to spell out the exact angles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub state: StateSpec,
    pub alice_settings: Vec<WaveplateSetting>,
    pub bob_settings: Vec<WaveplateSetting>,
    #[serde(default)]
    pub eve: EveSpec,
    #[serde(default = "default_n_total")]
    pub n_total: u64,
    #[serde(default = "default_n_trials")]
    pub n_trials: usize,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_condition_cap")]
    pub condition_cap: f64,
}

/// Both parties' declared settings; any scenario config also parses as one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsFile {
    pub alice_settings: Vec<WaveplateSetting>,
    pub bob_settings: Vec<WaveplateSetting>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl SettingsFile {
    pub fn load(path: &Path) -> Result<Self> {
        let settings: SettingsFile = serde_json::from_str(&read_text(path)?)?;
        check_settings("alice_settings", &settings.alice_settings)?;
        check_settings("bob_settings", &settings.bob_settings)?;
        Ok(settings)
    }
}

fn check_settings(field: &str, settings: &[WaveplateSetting]) -> Result<()> {
    if ![2, 4, 6].contains(&settings.len()) {
        return Err(Error::config(field, format!("expected 2, 4 or 6 settings, got {}", settings.len())));
    }
    if let Some(k) = settings.iter().position(|s| !s.is_finite()) {
        return Err(Error::config(format!("{field}[{k}]"), "angles must be finite"));
    }
    Ok(())
}

/// Loop analysis needs a square grid of four or six settings per side.
fn supports_loop(n_alice: usize, n_bob: usize) -> bool {
    n_alice == n_bob && (n_alice == 4 || n_alice == 6)
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ScenarioConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.state {
            StateSpec::Params(p) => {
                if let Err(Error::InvalidProbability { name, value }) = p.validate() {
                    return Err(Error::config(format!("state.{name}"), format!("{value} is outside [0, 1]")));
                }
            }
            StateSpec::Matrix { density_matrix } => {
                density_matrix
                    .ensure_psd()
                    .map_err(|e| Error::config("state.density_matrix", e.to_string()))?;
            }
        }
        check_settings("alice_settings", &self.alice_settings)?;
        check_settings("bob_settings", &self.bob_settings)?;
        if self.n_total == 0 {
            return Err(Error::config("n_total", "must be at least 1"));
        }
        let min_trials = if supports_loop(self.alice_settings.len(), self.bob_settings.len()) { 2 } else { 1 };
        if self.n_trials < min_trials {
            return Err(Error::config("n_trials", format!("must be at least {min_trials}")));
        }
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(Error::config("threshold", "must be a nonnegative number"));
        }
        if self.condition_cap.is_nan() || self.condition_cap < 1.0 {
            return Err(Error::config("condition_cap", "must be at least 1"));
        }
        self.eve_policy().map_err(|e| Error::config("eve", e.to_string()))?;
        Ok(())
    }

    pub fn eve_policy(&self) -> Result<EvePolicy> {
        EvePolicy::new(self.eve.mode, &self.alice_settings, &self.bob_settings, &self.eve.remap)
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            threshold: self.threshold,
            condition_cap: self.condition_cap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub threshold: f64,
    pub condition_cap: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            condition_cap: DEFAULT_CONDITION_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSeed {
    pub trial: usize,
    pub seed: u64,
}

/// CHSH value of the leading 2×2 settings block, per trial and aggregated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshSummary {
    pub per_trial: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over trials; absent for a single trial.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub trial_seeds: Vec<TrialSeed>,
    pub n_trials: usize,
    /// Estimated expectation matrix of every trial, Alice index first.
    pub expectation_matrices: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_analysis: Option<LoopReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_skipped: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chsh: Option<ChshSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qst: Option<QstReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qst_skipped: Option<String>,
}

impl RunReport {
    pub fn detected(&self) -> bool {
        self.loop_analysis.as_ref().is_some_and(|l| l.verdict.detected())
    }

    /// 0 when no correlated errors were found (or the test could not run), 2
    /// when they were.
    pub fn exit_code(&self) -> i32 {
        if self.detected() {
            2
        } else {
            0
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_text(path)?)?)
    }
}

fn mean_and_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() >= 2).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

/// The analysis stage, shared by simulated and imported counts.
pub fn analyze(trials: &TrialSet, options: &AnalysisOptions) -> Result<RunReport> {
    trials.validate()?;
    if trials.trials.is_empty() {
        return Err(Error::TooFewTrials { found: 0, required: 1 });
    }
    let (n_a, n_b) = (trials.n_alice(), trials.n_bob());

    let matrices = trials
        .trials
        .iter()
        .map(|t| build_expectation_matrix(t, n_a, n_b))
        .collect::<Result<Vec<_>>>()?;

    let (loop_analysis, loop_skipped) = if supports_loop(n_a, n_b) {
        let stats = consistency::delta_statistics(trials, options.condition_cap)?;
        (Some(LoopReport::new(stats, options.threshold)), None)
    } else {
        (None, Some(format!("loop test needs 4 or 6 settings per side, got {n_a}x{n_b}")))
    };

    let chsh = (n_a >= 2 && n_b >= 2).then(|| {
        let per_trial: Vec<f64> = matrices
            .iter()
            .filter_map(|e| tomography::chsh_from_matrix(e.values()))
            .collect();
        let (mean, std) = mean_and_std(&per_trial);
        ChshSummary { per_trial, mean, std }
    });

    let (qst, qst_skipped) = match TomographyInput::from_trial_set(trials).and_then(|input| tomography::qst_report(&input)) {
        Ok(report) => (Some(report), None),
        Err(e @ Error::RankDeficient { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };

    Ok(RunReport {
        config: None,
        master_seed: trials.master_seed,
        trial_seeds: trials
            .trials
            .iter()
            .filter_map(|t| t.seed.map(|seed| TrialSeed { trial: t.index, seed }))
            .collect(),
        n_trials: trials.trials.len(),
        expectation_matrices: matrices.iter().map(|e| e.to_rows()).collect(),
        loop_analysis,
        loop_skipped,
        chsh,
        qst,
        qst_skipped,
    })
}

/// The simulation stage alone.
pub fn simulate_counts(config: &ScenarioConfig) -> Result<TrialSet> {
    config.validate()?;
    let rho = config.state.density_operator()?;
    run_trials(
        &rho,
        &config.alice_settings,
        &config.bob_settings,
        &config.eve_policy()?,
        config.n_total,
        config.n_trials,
        config.master_seed,
    )
}

pub struct Simulation {
    pub trials: TrialSet,
    pub report: RunReport,
}

/// Simulation followed by [`analyze`]; the report echoes the config.
pub fn simulate(config: &ScenarioConfig) -> Result<Simulation> {
    let trials = simulate_counts(config)?;
    let mut report = analyze(&trials, &config.analysis_options())?;
    report.config = Some(config.clone());
    Ok(Simulation { trials, report })
}

/// Noise-free CHSH value of the leading 2×2 block under the scenario's
/// eavesdropper policy.
pub fn exact_chsh(config: &ScenarioConfig) -> Result<f64> {
    let rho = config.state.density_operator()?;
    let e = consistency::ExpectationMatrix::exact(&rho, &config.alice_settings, &config.bob_settings, &config.eve_policy()?)?;
    tomography::chsh_from_matrix(e.values()).ok_or(Error::config("alice_settings", "CHSH needs two settings per side"))
}

pub const COUNTS_CSV: &str = "counts.csv";
pub const COUNTS_JSON: &str = "counts.json";
pub const REPORT_JSON: &str = "report.json";
pub const DELTA_STATS_CSV: &str = "delta_stats.csv";
pub const QST_JSON: &str = "qst.json";
pub const PLOT_FILES: [&str; 3] = ["delta_mean.csv", "delta_std.csv", "delta_ratio.csv"];

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the counts (CSV and JSON) to `dir`.
pub fn write_counts(dir: &Path, trials: &TrialSet) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let csv_path = dir.join(COUNTS_CSV);
    trials.write_csv(create(&csv_path)?)?;
    let json_path = dir.join(COUNTS_JSON);
    write_json(&json_path, trials)?;
    Ok(vec![csv_path, json_path])
}

/// Writes the report JSON and, when the loop test ran, its statistics table.
pub fn write_report(dir: &Path, report: &RunReport) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let report_path = dir.join(REPORT_JSON);
    write_json(&report_path, report)?;
    let mut written = vec![report_path];
    if let Some(loop_report) = &report.loop_analysis {
        let path = dir.join(DELTA_STATS_CSV);
        consistency::write_stats_csv(&loop_report.stats, create(&path)?)?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_qst(dir: &Path, report: &QstReport) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(QST_JSON);
    write_json(&path, report)?;
    Ok(path)
}

fn write_grid(path: &Path, grid: &[[f64; 3]; 3]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["row", "col", "value"])?;
    for (r, row) in grid.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            w.write_record([r.to_string(), c.to_string(), v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the mean, std and ratio grids of `Δ − I` as three flat CSV files.
pub fn write_plot_data(dir: &Path, stats: &PartialDeterminantStats) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    [&stats.mean, &stats.std, &stats.ratio]
        .into_iter()
        .zip(PLOT_FILES)
        .map(|(grid, name)| {
            let path = dir.join(name);
            write_grid(&path, grid)?;
            Ok(path)
        })
        .collect()
}
