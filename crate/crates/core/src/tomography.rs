//! State reconstruction from the same coincidence data used by the loop test,
//! plus the CHSH and Werner-model summaries built on top of it.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::{estimate_expectation, Trial, TrialSet};
use crate::linalg::{self, c};
use crate::polarimetry::{self, measurement_operator, WaveplateSetting};
use crate::states::{self, DensityOperator, StateParams};
use crate::{Error, Result, Side};

/// Relative singular-value cutoff for the setting rank check.
const RANK_TOL: f64 = 1e-8;

/// Correlations and single-party marginals for every setting pair, together
/// with the nominal Bloch vectors of the settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TomographyInput {
    pub alice_bloch: Vec<Vector3<f64>>,
    pub bob_bloch: Vec<Vector3<f64>>,
    /// `E_ij`.
    pub correlations: DMatrix<f64>,
    /// `⟨Âᵢ ⊗ 1̂⟩` estimated from pair `(i, j)`.
    pub alice_marginals: DMatrix<f64>,
    /// `⟨1̂ ⊗ B̂ⱼ⟩` estimated from pair `(i, j)`.
    pub bob_marginals: DMatrix<f64>,
}

fn bloch_vectors(settings: &[WaveplateSetting]) -> Vec<Vector3<f64>> {
    settings.iter().map(|&s| measurement_operator(s).bloch()).collect()
}

impl TomographyInput {
    pub fn from_trial(trial: &Trial, alice: &[WaveplateSetting], bob: &[WaveplateSetting]) -> Result<Self> {
        let (n_a, n_b) = (alice.len(), bob.len());
        let mut correlations = DMatrix::zeros(n_a, n_b);
        let mut alice_marginals = DMatrix::zeros(n_a, n_b);
        let mut bob_marginals = DMatrix::zeros(n_a, n_b);
        for i in 0..n_a {
            for j in 0..n_b {
                let rec = trial.record(i, j)?;
                correlations[(i, j)] = estimate_expectation(rec)?;
                alice_marginals[(i, j)] = rec.alice_marginal()?;
                bob_marginals[(i, j)] = rec.bob_marginal()?;
            }
        }
        Ok(Self {
            alice_bloch: bloch_vectors(alice),
            bob_bloch: bloch_vectors(bob),
            correlations,
            alice_marginals,
            bob_marginals,
        })
    }

    /// Pools the counts of all trials before estimating.
    pub fn from_trial_set(set: &TrialSet) -> Result<Self> {
        Self::from_trial(&set.aggregate()?, &set.alice_settings, &set.bob_settings)
    }

    /// Noise-free input computed from a known state.
    pub fn exact(rho: &DensityOperator, alice: &[WaveplateSetting], bob: &[WaveplateSetting]) -> Self {
        let (ra, rb) = rho.local_bloch_vectors();
        let alice_bloch = bloch_vectors(alice);
        let bob_bloch = bloch_vectors(bob);
        let (n_a, n_b) = (alice.len(), bob.len());
        Self {
            correlations: DMatrix::from_fn(n_a, n_b, |i, j| polarimetry::joint_expectation(rho, alice[i], bob[j])),
            alice_marginals: DMatrix::from_fn(n_a, n_b, |i, _| alice_bloch[i].dot(&ra)),
            bob_marginals: DMatrix::from_fn(n_a, n_b, |_, j| bob_bloch[j].dot(&rb)),
            alice_bloch,
            bob_bloch,
        }
    }
}

fn bloch_rank(vectors: &[Vector3<f64>]) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let m = DMatrix::from_fn(vectors.len(), 3, |r, k| vectors[r][k]);
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

/// Linear-inversion estimate of the state.
///
/// Solves, in the least-squares sense, for the 15 Pauli coefficients of
/// `ρ = ¼ Σ r_μν σ_μ ⊗ σ_ν` from every correlation and marginal. The result is
/// Hermitian with unit trace but may have negative eigenvalues.
pub fn qst_linear(input: &TomographyInput) -> Result<DensityOperator> {
    for (side, vectors) in [(Side::Alice, &input.alice_bloch), (Side::Bob, &input.bob_bloch)] {
        let rank = bloch_rank(vectors);
        if rank < 3 {
            return Err(Error::RankDeficient { side, rank });
        }
    }
    let (n_a, n_b) = (input.alice_bloch.len(), input.bob_bloch.len());
    let shape = |m: &DMatrix<f64>| m.shape() == (n_a, n_b);
    if !shape(&input.correlations) || !shape(&input.alice_marginals) || !shape(&input.bob_marginals) {
        let (rows, cols) = input.correlations.shape();
        return Err(Error::Shape {
            expected: "n_alice x n_bob",
            rows,
            cols,
        });
    }

    // unknowns: [rA (3) | rB (3) | T row-major (9)]
    let n_eq = 3 * n_a * n_b;
    let mut design = DMatrix::zeros(n_eq, 15);
    let mut rhs = DVector::zeros(n_eq);
    let mut row = 0;
    for i in 0..n_a {
        let a = &input.alice_bloch[i];
        for j in 0..n_b {
            let b = &input.bob_bloch[j];
            for k in 0..3 {
                design[(row, k)] = a[k];
                design[(row + 1, 3 + k)] = b[k];
                for l in 0..3 {
                    design[(row + 2, 6 + 3 * k + l)] = a[k] * b[l];
                }
            }
            rhs[row] = input.alice_marginals[(i, j)];
            rhs[row + 1] = input.bob_marginals[(i, j)];
            rhs[row + 2] = input.correlations[(i, j)];
            row += 3;
        }
    }
    let solution = design
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .expect("SVD was computed with both factors");
    let ra = Vector3::new(solution[0], solution[1], solution[2]);
    let rb = Vector3::new(solution[3], solution[4], solution[5]);
    let t = Matrix3::from_fn(|k, l| solution[6 + 3 * k + l]);
    Ok(DensityOperator::from_pauli_coefficients(&ra, &rb, &t))
}

/// Euclidean projection of `values` onto the probability simplex.
fn project_to_simplex(values: &[f64; 4]) -> [f64; 4] {
    let mut sorted = *values;
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if v - candidate > 0.0 {
            shift = candidate;
        }
    }
    values.map(|v| (v - shift).max(0.0))
}

/// Closest positive semidefinite, unit-trace matrix in Frobenius norm.
///
/// Keeps the eigenvectors and projects the eigenvalues onto the simplex.
pub fn project_physical(rho: &DensityOperator) -> DensityOperator {
    let (values, vectors) = linalg::hermitian_eigen(rho.matrix());
    let projected = project_to_simplex(&[values[0], values[1], values[2], values[3]]);
    let diag = nalgebra::Vector4::from_fn(|k, _| c(projected[k], 0.0));
    let m = vectors * linalg::CMatrix4::from_diagonal(&diag) * vectors.adjoint();
    let m = (m + m.adjoint()) * c(0.5, 0.0);
    // trace is 1 up to round-off; renormalize so validation never trips
    let m = m * c(1.0 / m.trace().re, 0.0);
    DensityOperator::from_matrix(m).expect("projection yields a Hermitian unit-trace matrix")
}

/// Best Werner-model parameters for a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WernerFit {
    pub p_s: f64,
    pub p_w: f64,
    pub fidelity: f64,
    /// Set when `p_w` is zero: the model no longer depends on `p_s` and the
    /// reported `p_s` carries no information.
    pub p_s_degenerate: bool,
}

const FIT_GRID: usize = 101;
const FIT_ITERATIONS: usize = 500;
const DEGENERATE_P_W: f64 = 1e-6;

/// Fits `(p_s, p_w)` by maximizing the fidelity with the Werner-like model.
///
/// A 101×101 grid over the unit square picks the start (ties go to the smaller
/// `p_s`, then the smaller `p_w`), then a box-clamped Nelder-Mead refines it
/// with a fixed iteration budget.
pub fn fit_werner(rho: &DensityOperator) -> Result<WernerFit> {
    rho.ensure_psd()?;
    let sqrt_rho = linalg::psd_sqrt(rho.matrix());
    let objective = |p_s: f64, p_w: f64| {
        let params = StateParams {
            p_s: p_s.clamp(0.0, 1.0),
            p_w: p_w.clamp(0.0, 1.0),
        };
        let model = states::werner_like(params).expect("clamped parameters are valid");
        states::fidelity_with_sqrt(&sqrt_rho, &model)
    };

    let step = 1.0 / (FIT_GRID - 1) as f64;
    let row_best: Vec<(f64, usize)> = (0..FIT_GRID)
        .into_par_iter()
        .map(|a| {
            let mut best = (f64::NEG_INFINITY, 0);
            for b in 0..FIT_GRID {
                let f = objective(a as f64 * step, b as f64 * step);
                if f > best.0 {
                    best = (f, b);
                }
            }
            best
        })
        .collect();
    let mut start = (f64::NEG_INFINITY, 0, 0);
    for (a, &(f, b)) in row_best.iter().enumerate() {
        if f > start.0 {
            start = (f, a, b);
        }
    }

    let x0 = [start.1 as f64 * step, start.2 as f64 * step];
    let ([p_s, p_w], fidelity) = nelder_mead_max(|x| objective(x[0], x[1]), x0, step, FIT_ITERATIONS);
    let (p_s, p_w) = (p_s.clamp(0.0, 1.0), p_w.clamp(0.0, 1.0));
    Ok(WernerFit {
        p_s,
        p_w,
        fidelity,
        p_s_degenerate: p_w < DEGENERATE_P_W,
    })
}

/// Maximizes `f` over the unit square. Points are clamped into the box before
/// evaluation, so the search never leaves it.
fn nelder_mead_max(f: impl Fn([f64; 2]) -> f64, x0: [f64; 2], scale: f64, iterations: usize) -> ([f64; 2], f64) {
    let clamp = |x: [f64; 2]| x.map(|v| v.clamp(0.0, 1.0));
    let away = |v: f64| if v + scale <= 1.0 { v + scale } else { v - scale };
    let mut simplex: Vec<([f64; 2], f64)> = [x0, [away(x0[0]), x0[1]], [x0[0], away(x0[1])]]
        .into_iter()
        .map(|x| {
            let x = clamp(x);
            (x, f(x))
        })
        .collect();

    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| clamp([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    for _ in 0..iterations {
        // best first
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let spread = simplex[0].1 - simplex[2].1;
        let size = (0..2)
            .map(|k| (simplex[0].0[k] - simplex[2].0[k]).abs().max((simplex[0].0[k] - simplex[1].0[k]).abs()))
            .fold(0.0, f64::max);
        if spread <= 1e-16 && size <= 1e-12 {
            break;
        }
        let centroid = [(simplex[0].0[0] + simplex[1].0[0]) / 2.0, (simplex[0].0[1] + simplex[1].0[1]) / 2.0];
        let worst = simplex[2];

        let reflected = lerp(centroid, worst.0, -1.0);
        let fr = f(reflected);
        if fr > simplex[0].1 {
            let expanded = lerp(centroid, worst.0, -2.0);
            let fe = f(expanded);
            simplex[2] = if fe > fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr > simplex[1].1 {
            simplex[2] = (reflected, fr);
        } else {
            let contracted = if fr > worst.1 {
                lerp(centroid, reflected, 0.5)
            } else {
                lerp(centroid, worst.0, 0.5)
            };
            let fc = f(contracted);
            if fc > worst.1.max(fr) {
                simplex[2] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let x = lerp(best, v.0, 0.5);
                    *v = (x, f(x));
                }
            }
        }
    }
    simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
    simplex[0]
}

/// `E₁₁ + E₁₂ + E₂₁ − E₂₂`.
pub fn chsh_s(e11: f64, e12: f64, e21: f64, e22: f64) -> f64 {
    e11 + e12 + e21 - e22
}

/// CHSH value from the leading 2×2 block of an expectation matrix.
pub fn chsh_from_matrix(e: &DMatrix<f64>) -> Option<f64> {
    (e.nrows() >= 2 && e.ncols() >= 2).then(|| chsh_s(e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]))
}

/// Largest achievable CHSH value, `2√M`.
pub fn s_max_from_m(m: f64) -> f64 {
    2.0 * m.max(0.0).sqrt()
}

/// Everything reported about a reconstructed state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QstReport {
    pub raw: DensityOperator,
    pub raw_min_eigenvalue: f64,
    pub projected: DensityOperator,
    pub purity: f64,
    pub negativity: f64,
    pub horodecki_m: f64,
    pub s_max: f64,
    pub werner_fit: WernerFit,
}

/// Linear inversion, projection, and the summary quantities of the
/// projected state.
pub fn qst_report(input: &TomographyInput) -> Result<QstReport> {
    let raw = qst_linear(input)?;
    let projected = project_physical(&raw);
    let m = states::horodecki_m(&projected);
    Ok(QstReport {
        raw_min_eigenvalue: raw.min_eigenvalue(),
        purity: states::purity(&projected),
        negativity: states::negativity(&projected),
        horodecki_m: m,
        s_max: s_max_from_m(m),
        werner_fit: fit_werner(&projected)?,
        raw,
        projected,
    })
}
