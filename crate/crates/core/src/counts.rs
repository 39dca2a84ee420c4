//! Coincidence counts: Monte Carlo generation, the probability and
//! expectation estimators, and repeated-trial bookkeeping.
//!
//! Each setting pair gets a fixed number of coincidences split over the four
//! cells `(A,B), (A,B′), (A′,B), (A′,B′)` by a multinomial draw from the
//! Born-rule probabilities.
//!
//! # Seeds
//!
//! Trial `t` (0-based) of a run with master seed `m` uses
//! `splitmix64(m + (t + 1) · 0x9E3779B97F4A7C15)` (wrapping arithmetic), which
//! is the `(t+1)`-th output of a SplitMix64 stream started at `m`. That value
//! seeds a ChaCha8 generator via `SeedableRng::seed_from_u64`. Within a trial,
//! setting pairs are drawn in row-major order (Alice index outer).

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::polarimetry::{self, EvePolicy, JointProbabilities, WaveplateSetting};
use crate::states::DensityOperator;
use crate::{Error, Result};

/// Coincidence counts for one setting pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoincidenceRecord {
    pub n_ab: u64,
    pub n_abp: u64,
    pub n_apb: u64,
    pub n_apbp: u64,
}

impl CoincidenceRecord {
    pub fn new(n_ab: u64, n_abp: u64, n_apb: u64, n_apbp: u64) -> Self {
        Self { n_ab, n_abp, n_apb, n_apbp }
    }

    pub fn total(&self) -> u64 {
        self.n_ab + self.n_abp + self.n_apb + self.n_apbp
    }

    fn nonzero_total(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::ZeroCoincidences),
            n => Ok(n as f64),
        }
    }

    /// Estimated probabilities of all four cells.
    pub fn probabilities(&self) -> Result<JointProbabilities> {
        let total = self.nonzero_total()?;
        Ok(JointProbabilities {
            ab: self.n_ab as f64 / total,
            abp: self.n_abp as f64 / total,
            apb: self.n_apb as f64 / total,
            apbp: self.n_apbp as f64 / total,
        })
    }

    /// Signed combination over the total; the numerator is formed in integer
    /// arithmetic.
    fn signed_ratio(&self, plus: [u64; 2], minus: [u64; 2]) -> Result<f64> {
        let total = self.nonzero_total()?;
        let numerator = (plus[0] + plus[1]) as i128 - (minus[0] + minus[1]) as i128;
        Ok(numerator as f64 / total)
    }

    /// `⟨Â ⊗ 1̂⟩` estimated from this record.
    pub fn alice_marginal(&self) -> Result<f64> {
        self.signed_ratio([self.n_ab, self.n_abp], [self.n_apb, self.n_apbp])
    }

    /// `⟨1̂ ⊗ B̂⟩` estimated from this record.
    pub fn bob_marginal(&self) -> Result<f64> {
        self.signed_ratio([self.n_ab, self.n_apb], [self.n_abp, self.n_apbp])
    }

    fn add(&mut self, other: &CoincidenceRecord) {
        self.n_ab += other.n_ab;
        self.n_abp += other.n_abp;
        self.n_apb += other.n_apb;
        self.n_apbp += other.n_apbp;
    }
}

/// `N_AB / N_total`.
pub fn estimate_probability(rec: &CoincidenceRecord) -> Result<f64> {
    Ok(rec.probabilities()?.ab)
}

/// `(N_AB − N_AB′ − N_A′B + N_A′B′) / N_total`.
pub fn estimate_expectation(rec: &CoincidenceRecord) -> Result<f64> {
    rec.signed_ratio([rec.n_ab, rec.n_apbp], [rec.n_abp, rec.n_apb])
}

/// Multinomial draw of `n` items over four cells via conditional binomials.
///
/// Probabilities are clamped at zero and renormalized, so round-off from the
/// Born rule never produces an invalid distribution.
pub fn multinomial4<R: Rng + ?Sized>(n: u64, probs: [f64; 4], rng: &mut R) -> [u64; 4] {
    let p = probs.map(|x| if x.is_finite() { x.max(0.0) } else { 0.0 });
    let mut remaining_mass: f64 = p.iter().sum();
    let mut remaining = n;
    let mut out = [0u64; 4];
    for k in 0..3 {
        if remaining == 0 || remaining_mass <= 0.0 {
            break;
        }
        let conditional = (p[k] / remaining_mass).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, conditional)
            .expect("conditional probability is clamped to [0, 1]")
            .sample(rng);
        out[k] = draw;
        remaining -= draw;
        remaining_mass -= p[k];
    }
    out[3] = remaining;
    out
}

/// One multinomial sample of `n_total` coincidences for settings `a`, `b`.
pub fn simulate_pair<R: Rng + ?Sized>(
    rho: &DensityOperator,
    a: WaveplateSetting,
    b: WaveplateSetting,
    n_total: u64,
    rng: &mut R,
) -> CoincidenceRecord {
    sample_record(&polarimetry::joint_probabilities(rho, a, b), n_total, rng)
}

fn sample_record<R: Rng + ?Sized>(p: &JointProbabilities, n_total: u64, rng: &mut R) -> CoincidenceRecord {
    let [n_ab, n_abp, n_apb, n_apbp] = multinomial4(n_total, p.as_array(), rng);
    CoincidenceRecord { n_ab, n_abp, n_apb, n_apbp }
}

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` under `master_seed`; see the module docs.
pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
    splitmix64(master_seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(trial as u64 + 1)))
}

pub fn trial_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Record for one `(i, j)` cell of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub i: usize,
    pub j: usize,
    #[serde(flatten)]
    pub counts: CoincidenceRecord,
}

/// All setting pairs measured in one pass. Records are kept sorted by `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    records: Vec<CellRecord>,
}

impl Trial {
    pub fn new(index: usize, seed: Option<u64>, mut records: Vec<CellRecord>) -> Self {
        records.sort_by_key(|r| (r.i, r.j));
        Self { index, seed, records }
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&CoincidenceRecord> {
        self.records
            .binary_search_by_key(&(i, j), |r| (r.i, r.j))
            .ok()
            .map(|k| &self.records[k].counts)
    }

    /// Looks up `(i, j)`, naming the cell in the error when absent.
    pub fn record(&self, i: usize, j: usize) -> Result<&CoincidenceRecord> {
        self.get(i, j).ok_or(Error::MissingCell {
            trial: Some(self.index),
            i,
            j,
        })
    }

    pub fn records(&self) -> &[CellRecord] {
        &self.records
    }
}

/// Repeated trials over a fixed grid of setting pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    pub alice_settings: Vec<WaveplateSetting>,
    pub bob_settings: Vec<WaveplateSetting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub trials: Vec<Trial>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    trial: usize,
    i: usize,
    j: usize,
    n_ab: u64,
    n_abp: u64,
    n_apb: u64,
    n_apbp: u64,
}

const CSV_HEADER: [&str; 7] = ["trial", "i", "j", "n_ab", "n_abp", "n_apb", "n_apbp"];

impl TrialSet {
    pub fn n_alice(&self) -> usize {
        self.alice_settings.len()
    }

    pub fn n_bob(&self) -> usize {
        self.bob_settings.len()
    }

    pub fn n_records(&self) -> usize {
        self.trials.iter().map(|t| t.records.len()).sum()
    }

    /// Every trial must cover the full `n_alice × n_bob` grid and nothing else.
    pub fn validate(&self) -> Result<()> {
        for trial in &self.trials {
            for i in 0..self.n_alice() {
                for j in 0..self.n_bob() {
                    trial.record(i, j)?;
                }
            }
            if let Some(extra) = trial.records.iter().find(|r| r.i >= self.n_alice() || r.j >= self.n_bob()) {
                let (side, index, declared) = if extra.i >= self.n_alice() {
                    (crate::Side::Alice, extra.i, self.n_alice())
                } else {
                    (crate::Side::Bob, extra.j, self.n_bob())
                };
                return Err(Error::UnknownSettingIndex { side, index, declared });
            }
        }
        Ok(())
    }

    /// Sums counts over all trials, cell by cell.
    pub fn aggregate(&self) -> Result<Trial> {
        let mut records = Vec::with_capacity(self.n_alice() * self.n_bob());
        for i in 0..self.n_alice() {
            for j in 0..self.n_bob() {
                let mut counts = CoincidenceRecord::default();
                for trial in &self.trials {
                    counts.add(trial.record(i, j)?);
                }
                records.push(CellRecord { i, j, counts });
            }
        }
        Ok(Trial::new(0, None, records))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for trial in &self.trials {
            for r in &trial.records {
                w.serialize(CsvRow {
                    trial: trial.index,
                    i: r.i,
                    j: r.j,
                    n_ab: r.counts.n_ab,
                    n_abp: r.counts.n_abp,
                    n_apb: r.counts.n_apb,
                    n_apbp: r.counts.n_apbp,
                })?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv writer emits UTF-8"))
    }

    /// Parses the counts CSV. `source` only labels error messages.
    pub fn read_csv<R: Read>(
        reader: R,
        source: &Path,
        alice_settings: Vec<WaveplateSetting>,
        bob_settings: Vec<WaveplateSetting>,
    ) -> Result<Self> {
        let schema_err = |line: u64, message: String| Error::CountsFile {
            path: source.to_path_buf(),
            line,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| schema_err(1, e.to_string()))?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(schema_err(
                1,
                format!("header must be `{}`, found `{}`", CSV_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
            ));
        }

        let (n_alice, n_bob) = (alice_settings.len(), bob_settings.len());
        let mut by_trial: std::collections::BTreeMap<usize, Vec<CellRecord>> = Default::default();
        let mut seen = std::collections::BTreeSet::new();
        let mut raw = csv::StringRecord::new();
        loop {
            match rdr.read_record(&mut raw) {
                Ok(true) => {}
                Ok(false) => break,
                Err(e) => {
                    let line = e.position().map(|p| p.line()).unwrap_or(0);
                    return Err(schema_err(line, e.to_string()));
                }
            }
            let line = raw.position().map(|p| p.line()).unwrap_or(0);
            let row: CsvRow = raw.deserialize(Some(&header)).map_err(|e| schema_err(line, e.to_string()))?;
            if row.i >= n_alice || row.j >= n_bob {
                return Err(schema_err(
                    line,
                    format!("cell (i={}, j={}) outside the declared {n_alice}x{n_bob} settings grid", row.i, row.j),
                ));
            }
            if !seen.insert((row.trial, row.i, row.j)) {
                return Err(schema_err(line, format!("duplicate row for (trial={}, i={}, j={})", row.trial, row.i, row.j)));
            }
            by_trial.entry(row.trial).or_default().push(CellRecord {
                i: row.i,
                j: row.j,
                counts: CoincidenceRecord::new(row.n_ab, row.n_abp, row.n_apb, row.n_apbp),
            });
        }
        if by_trial.is_empty() {
            return Err(schema_err(1, "no data rows".into()));
        }

        let set = TrialSet {
            alice_settings,
            bob_settings,
            master_seed: None,
            trials: by_trial.into_iter().map(|(index, recs)| Trial::new(index, None, recs)).collect(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn read_csv_file(path: &Path, alice: Vec<WaveplateSetting>, bob: Vec<WaveplateSetting>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file), path, alice, bob)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: TrialSet = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }
}

/// Born-rule probabilities for every declared pair, with Bob's setting passed
/// through the eavesdropper's policy.
pub fn probability_grid(
    rho: &DensityOperator,
    alice_settings: &[WaveplateSetting],
    bob_settings: &[WaveplateSetting],
    eve: &EvePolicy,
) -> Result<Vec<Vec<JointProbabilities>>> {
    alice_settings
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            bob_settings
                .iter()
                .enumerate()
                .map(|(j, &b)| Ok(polarimetry::joint_probabilities(rho, a, eve.apply(i, j, b)?)))
                .collect()
        })
        .collect()
}

/// Simulates `n_trials` passes over the full settings grid.
///
/// Trials run in parallel; each owns its RNG, so the output does not depend on
/// scheduling.
pub fn run_trials(
    rho: &DensityOperator,
    alice_settings: &[WaveplateSetting],
    bob_settings: &[WaveplateSetting],
    eve: &EvePolicy,
    n_total: u64,
    n_trials: usize,
    master_seed: u64,
) -> Result<TrialSet> {
    if alice_settings.is_empty() || bob_settings.is_empty() {
        return Err(Error::config("settings", "both setting lists must be nonempty"));
    }
    if n_total == 0 {
        return Err(Error::config("n_total", "must be at least 1"));
    }
    if n_trials == 0 {
        return Err(Error::TooFewTrials { found: 0, required: 1 });
    }
    let grid = probability_grid(rho, alice_settings, bob_settings, eve)?;

    let trials = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(master_seed, t);
            let mut rng = trial_rng(seed);
            let mut records = Vec::with_capacity(alice_settings.len() * bob_settings.len());
            for (i, row) in grid.iter().enumerate() {
                for (j, p) in row.iter().enumerate() {
                    records.push(CellRecord {
                        i,
                        j,
                        counts: sample_record(p, n_total, &mut rng),
                    });
                }
            }
            Trial::new(t, Some(seed), records)
        })
        .collect();

    Ok(TrialSet {
        alice_settings: alice_settings.to_vec(),
        bob_settings: bob_settings.to_vec(),
        master_seed: Some(master_seed),
        trials,
    })
}
