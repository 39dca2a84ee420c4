//! Loop consistency test on the matrix of joint expectation values.
//!
//! Rows of `Ē` index Alice's settings, columns Bob's. With six settings per
//! side the 6×6 matrix splits into 3×3 corners
//!
//! ```text
//!     Ē = | A  B |
//!         | C  D |
//! ```
//!
//! and the partial determinant `Δ(Ē) = A⁻¹ B D⁻¹ C` equals the identity
//! whenever every expectation factorizes as `aᵢᵗ T bⱼ` with one fixed `aᵢ` per
//! Alice setting and one fixed `bⱼ` per Bob setting. Four settings per side
//! suffice: rows and columns 5 and 6 repeat rows and columns 2 and 3.

use std::io::Write;

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::counts::{estimate_expectation, Trial, TrialSet};
use crate::linalg::{self, condition_number, invert3};
use crate::polarimetry::{self, EvePolicy, WaveplateSetting};
use crate::states::DensityOperator;
use crate::{Error, Result};

pub const DEFAULT_CONDITION_CAP: f64 = 1e8;
pub const DEFAULT_THRESHOLD: f64 = 3.0;

/// Source index of each row/column in the 6×6 embedding of a 4×4 matrix.
pub const OVERLAP_SOURCE: [usize; 6] = [0, 1, 2, 3, 1, 2];

/// Joint expectation values, with the setting each row and column came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationMatrix {
    values: DMatrix<f64>,
    row_source: Vec<usize>,
    col_source: Vec<usize>,
}

impl ExpectationMatrix {
    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        let row_source = (0..values.nrows()).collect();
        let col_source = (0..values.ncols()).collect();
        Self {
            values,
            row_source,
            col_source,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if n_rows == 0 || n_cols == 0 || rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Shape {
                expected: "rectangular, nonempty",
                rows: n_rows,
                cols: n_cols,
            });
        }
        Ok(Self::from_matrix(DMatrix::from_fn(n_rows, n_cols, |r, c| rows[r][c])))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Which original Alice setting each row holds.
    pub fn row_source(&self) -> &[usize] {
        &self.row_source
    }

    /// Which original Bob setting each column holds.
    pub fn col_source(&self) -> &[usize] {
        &self.col_source
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// Expectation values computed from Born-rule probabilities, with Bob's
    /// settings passed through `eve`.
    pub fn exact(
        rho: &DensityOperator,
        alice: &[WaveplateSetting],
        bob: &[WaveplateSetting],
        eve: &EvePolicy,
    ) -> Result<Self> {
        let mut values = DMatrix::zeros(alice.len(), bob.len());
        for (i, &a) in alice.iter().enumerate() {
            for (j, &b) in bob.iter().enumerate() {
                let b = eve.apply(i, j, b)?;
                values[(i, j)] = polarimetry::joint_probabilities(rho, a, b).expectation();
            }
        }
        Ok(Self::from_matrix(values))
    }
}

/// `Ē[i][j]` estimated from each record of one trial.
pub fn build_expectation_matrix(trial: &Trial, n_alice: usize, n_bob: usize) -> Result<ExpectationMatrix> {
    let mut values = DMatrix::zeros(n_alice, n_bob);
    for i in 0..n_alice {
        for j in 0..n_bob {
            values[(i, j)] = estimate_expectation(trial.record(i, j)?)?;
        }
    }
    Ok(ExpectationMatrix::from_matrix(values))
}

/// Embeds a 4×4 matrix into 6×6 by repeating rows and columns 2 and 3
/// (1-based) as rows and columns 5 and 6.
pub fn embed_overlapping(e4: &ExpectationMatrix) -> Result<ExpectationMatrix> {
    let (rows, cols) = e4.shape();
    if (rows, cols) != (4, 4) {
        return Err(Error::Shape {
            expected: "4x4",
            rows,
            cols,
        });
    }
    let values = DMatrix::from_fn(6, 6, |r, c| e4.values[(OVERLAP_SOURCE[r], OVERLAP_SOURCE[c])]);
    Ok(ExpectationMatrix {
        values,
        row_source: OVERLAP_SOURCE.iter().map(|&k| e4.row_source[k]).collect(),
        col_source: OVERLAP_SOURCE.iter().map(|&k| e4.col_source[k]).collect(),
    })
}

/// The 6×6 matrix the loop test runs on: 4×4 input is embedded, 6×6 input is
/// used as is.
pub fn loop_matrix(e: &ExpectationMatrix) -> Result<ExpectationMatrix> {
    match e.shape() {
        (4, 4) => embed_overlapping(e),
        (6, 6) => Ok(e.clone()),
        (rows, cols) => Err(Error::Shape {
            expected: "4x4 or 6x6",
            rows,
            cols,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub a: Matrix3<f64>,
    pub b: Matrix3<f64>,
    pub c: Matrix3<f64>,
    pub d: Matrix3<f64>,
}

pub fn corners(e6: &ExpectationMatrix) -> Result<Corners> {
    let (rows, cols) = e6.shape();
    if (rows, cols) != (6, 6) {
        return Err(Error::Shape {
            expected: "6x6",
            rows,
            cols,
        });
    }
    let block = |r0: usize, c0: usize| Matrix3::from_fn(|r, c| e6.values[(r0 + r, c0 + c)]);
    Ok(Corners {
        a: block(0, 0),
        b: block(0, 3),
        c: block(3, 0),
        d: block(3, 3),
    })
}

fn checked_inverse(m: &Matrix3<f64>, corner: char, cap: f64) -> Result<Matrix3<f64>> {
    let condition = condition_number(m);
    match invert3(m) {
        Some(inv) if condition <= cap => Ok(inv),
        _ => Err(Error::IllConditioned { corner, condition, cap }),
    }
}

/// `A⁻¹ B D⁻¹ C` of a 6×6 expectation matrix. Corners `A` and `D` must have
/// a 1-norm condition number no larger than `condition_cap`.
pub fn partial_determinant(e6: &ExpectationMatrix, condition_cap: f64) -> Result<Matrix3<f64>> {
    let k = corners(e6)?;
    let a_inv = checked_inverse(&k.a, 'A', condition_cap)?;
    let d_inv = checked_inverse(&k.d, 'D', condition_cap)?;
    Ok(a_inv * k.b * d_inv * k.c)
}

/// `Δ(Ē) − I` for one trial.
pub fn trial_deviation(trial: &Trial, n_alice: usize, n_bob: usize, condition_cap: f64) -> Result<Matrix3<f64>> {
    let e = build_expectation_matrix(trial, n_alice, n_bob)?;
    Ok(partial_determinant(&loop_matrix(&e)?, condition_cap)? - Matrix3::identity())
}

/// Elementwise statistics of `Δ(Ē) − I` over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialDeterminantStats {
    pub mean: [[f64; 3]; 3],
    /// Sample (n − 1) standard deviation.
    pub std: [[f64; 3]; 3],
    /// `|mean| / std`.
    pub ratio: [[f64; 3]; 3],
    pub n_trials: usize,
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (lo, hi) = xs.split_at(xs.len() / 2);
    pairwise_sum(lo) + pairwise_sum(hi)
}

/// Statistics over per-trial deviations `Δ − I`, in trial order.
pub fn statistics_from_deviations(deviations: &[Matrix3<f64>]) -> Result<PartialDeterminantStats> {
    let n = deviations.len();
    if n < 2 {
        return Err(Error::TooFewTrials { found: n, required: 2 });
    }
    let mut mean = [[0.0; 3]; 3];
    let mut std = [[0.0; 3]; 3];
    let mut ratio = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let xs: Vec<f64> = deviations.iter().map(|d| d[(r, c)]).collect();
            let m = pairwise_sum(&xs) / n as f64;
            let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
            let s = (pairwise_sum(&sq) / (n - 1) as f64).sqrt();
            if s.is_nan() || s <= 0.0 {
                return Err(Error::DegenerateStatistics { row: r, col: c });
            }
            mean[r][c] = m;
            std[r][c] = s;
            ratio[r][c] = m.abs() / s;
        }
    }
    Ok(PartialDeterminantStats {
        mean,
        std,
        ratio,
        n_trials: n,
    })
}

/// Runs the loop test on every trial and aggregates `Δ(Ē) − I`.
pub fn delta_statistics(trials: &TrialSet, condition_cap: f64) -> Result<PartialDeterminantStats> {
    let deviations = trials
        .trials
        .iter()
        .map(|t| {
            trial_deviation(t, trials.n_alice(), trials.n_bob(), condition_cap).map_err(|e| Error::InTrial {
                trial: t.index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    statistics_from_deviations(&deviations)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Consistent,
    CorrelatedErrorsDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub threshold: f64,
    /// `(row, col)` of the largest ratio, 0-based.
    pub worst: (usize, usize),
    pub worst_ratio: f64,
}

impl Verdict {
    pub fn detected(&self) -> bool {
        self.outcome == Outcome::CorrelatedErrorsDetected
    }
}

/// Correlated errors are reported iff some `|mean|/std` exceeds `threshold`.
pub fn verdict(stats: &PartialDeterminantStats, threshold: f64) -> Verdict {
    let mut worst = (0, 0);
    for r in 0..3 {
        for c in 0..3 {
            if stats.ratio[r][c] > stats.ratio[worst.0][worst.1] {
                worst = (r, c);
            }
        }
    }
    let worst_ratio = stats.ratio[worst.0][worst.1];
    let outcome = if worst_ratio > threshold {
        Outcome::CorrelatedErrorsDetected
    } else {
        Outcome::Consistent
    };
    Verdict {
        outcome,
        threshold,
        worst,
        worst_ratio,
    }
}

/// Statistics plus verdict, as written to reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    #[serde(flatten)]
    pub stats: PartialDeterminantStats,
    pub verdict: Verdict,
}

impl LoopReport {
    pub fn new(stats: PartialDeterminantStats, threshold: f64) -> Self {
        let verdict = verdict(&stats, threshold);
        Self { stats, verdict }
    }
}

/// Flat `row,col,mean,std,ratio` table (0-based indices).
pub fn write_stats_csv<W: Write>(stats: &PartialDeterminantStats, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["row", "col", "mean", "std", "ratio"])?;
    for r in 0..3 {
        for c in 0..3 {
            w.write_record([
                r.to_string(),
                c.to_string(),
                stats.mean[r][c].to_string(),
                stats.std[r][c].to_string(),
                stats.ratio[r][c].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn deviation_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    linalg::matrix3_to_rows(m)
}
