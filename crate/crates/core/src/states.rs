//! Two-qubit polarization states and the quantities used to characterize them.
//!
//! Basis order is `|HH⟩, |HV⟩, |VH⟩, |VV⟩`, with Alice's qubit as the major
//! index. Pauli components are indexed `(x, y, z)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::{self, c, CMatrix4};
use crate::{Error, Result};

/// Tolerance for the Hermitian and unit-trace checks.
pub const STRUCTURE_TOL: f64 = 1e-12;
/// Smallest eigenvalue still accepted as positive semidefinite.
pub const PSD_TOL: f64 = -1e-10;

/// A 4×4 Hermitian, unit-trace matrix.
///
/// Constructors in this module always produce positive semidefinite states.
/// Matrices coming from linear-inversion tomography can have small negative
/// eigenvalues; they are still representable here and [`DensityOperator::is_psd`]
/// reports it.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: CMatrix4,
}

impl DensityOperator {
    /// Validates Hermiticity and unit trace. Positivity is not required.
    pub fn from_matrix(matrix: CMatrix4) -> Result<Self> {
        let deviation = linalg::max_abs_diff4(&matrix, &matrix.adjoint());
        if deviation.is_nan() || deviation > STRUCTURE_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        let trace = matrix.trace().re;
        if trace.is_nan() || (trace - 1.0).abs() > STRUCTURE_TOL {
            return Err(Error::TraceNotOne { trace });
        }
        // symmetrize away the sub-tolerance asymmetry
        let matrix = (matrix + matrix.adjoint()) * c(0.5, 0.0);
        Ok(Self { matrix })
    }

    /// Like [`from_matrix`](Self::from_matrix) but also rejects states whose
    /// minimum eigenvalue is below [`PSD_TOL`].
    pub fn from_matrix_physical(matrix: CMatrix4) -> Result<Self> {
        let rho = Self::from_matrix(matrix)?;
        rho.ensure_psd()?;
        Ok(rho)
    }

    /// `ρ = ¼ (1 ⊗ 1 + Σ aᵢ σᵢ ⊗ 1 + Σ bⱼ 1 ⊗ σⱼ + Σ Tᵢⱼ σᵢ ⊗ σⱼ)`.
    ///
    /// Hermitian with unit trace for any real inputs.
    pub fn from_pauli_coefficients(alice: &Vector3<f64>, bob: &Vector3<f64>, t: &Matrix3<f64>) -> Self {
        let id = linalg::identity2();
        let mut m = linalg::kron(&id, &id);
        for i in 0..3 {
            let si = linalg::pauli(i);
            m += linalg::kron(&si, &id) * c(alice[i], 0.0);
            m += linalg::kron(&id, &si) * c(bob[i], 0.0);
            for j in 0..3 {
                m += linalg::kron(&si, &linalg::pauli(j)) * c(t[(i, j)], 0.0);
            }
        }
        let m = m * c(0.25, 0.0);
        Self {
            matrix: (m + m.adjoint()) * c(0.5, 0.0),
        }
    }

    pub fn maximally_mixed() -> Self {
        Self {
            matrix: CMatrix4::identity() * c(0.25, 0.0),
        }
    }

    pub fn matrix(&self) -> &CMatrix4 {
        &self.matrix
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let v = linalg::hermitian_eigenvalues(&self.matrix);
        [v[0], v[1], v[2], v[3]]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue() >= PSD_TOL
    }

    pub(crate) fn ensure_psd(&self) -> Result<()> {
        let min_eigenvalue = self.min_eigenvalue();
        if min_eigenvalue < PSD_TOL {
            return Err(Error::NotPositive { min_eigenvalue });
        }
        Ok(())
    }

    /// Applies `U ρ U†`. The caller is responsible for `U` being unitary.
    pub fn conjugated(&self, u: &CMatrix4) -> Self {
        let m = u * self.matrix * u.adjoint();
        Self {
            matrix: (m + m.adjoint()) * c(0.5, 0.0),
        }
    }

    /// Local Bloch vectors `(⟨σᵢ ⊗ 1⟩, ⟨1 ⊗ σᵢ⟩)`.
    pub fn local_bloch_vectors(&self) -> (Vector3<f64>, Vector3<f64>) {
        let id = linalg::identity2();
        let alice = Vector3::from_fn(|i, _| self.expectation(&linalg::kron(&linalg::pauli(i), &id)));
        let bob = Vector3::from_fn(|i, _| self.expectation(&linalg::kron(&id, &linalg::pauli(i))));
        (alice, bob)
    }

    /// `Re Tr(ρ O)` for a Hermitian observable `O`.
    pub fn expectation(&self, observable: &CMatrix4) -> f64 {
        (self.matrix * observable).trace().re
    }
}

impl Serialize for DensityOperator {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: [[[f64; 2]; 4]; 4] = [0, 1, 2, 3].map(|r| {
            [0, 1, 2, 3].map(|col| {
                let z = self.matrix[(r, col)];
                [z.re, z.im]
            })
        });
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DensityOperator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[[f64; 2]; 4]; 4]>::deserialize(deserializer)?;
        let m = CMatrix4::from_fn(|r, col| c(rows[r][col][0], rows[r][col][1]));
        DensityOperator::from_matrix(m).map_err(serde::de::Error::custom)
    }
}

/// Mixing probabilities of the source model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    /// Probability of the coherent Bell component in the source state.
    pub p_s: f64,
    /// Probability of the source state relative to white noise.
    pub p_w: f64,
}

impl StateParams {
    pub fn new(p_s: f64, p_w: f64) -> Result<Self> {
        let params = Self { p_s, p_w };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("p_s", self.p_s)?;
        check_probability("p_w", self.p_w)
    }
}

fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidProbability { name, value })
    }
}

/// Two-qubit correlation matrix `Tᵢⱼ = Tr[ρ (σᵢ ⊗ σⱼ)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationMatrix(pub Matrix3<f64>);

impl CorrelationMatrix {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// `aᵗ T b`.
    pub fn bilinear(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        (a.transpose() * self.0 * b)[(0, 0)]
    }
}

/// Projector onto `(|HH⟩ + |VV⟩)/√2`.
pub fn bell_phi_plus() -> DensityOperator {
    let mut m = CMatrix4::zeros();
    for &(r, col) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
        m[(r, col)] = c(0.5, 0.0);
    }
    DensityOperator { matrix: m }
}

/// Bell state with probability `p_s`, equal `|HH⟩`/`|VV⟩` mixture otherwise.
pub fn source_state(p_s: f64) -> Result<DensityOperator> {
    check_probability("p_s", p_s)?;
    let mut m = CMatrix4::zeros();
    m[(0, 0)] = c(0.5, 0.0);
    m[(3, 3)] = c(0.5, 0.0);
    m[(0, 3)] = c(p_s / 2.0, 0.0);
    m[(3, 0)] = c(p_s / 2.0, 0.0);
    Ok(DensityOperator { matrix: m })
}

/// `p_w ρ_s(p_s) + (1 − p_w) 1/4`.
pub fn werner_like(params: StateParams) -> Result<DensityOperator> {
    params.validate()?;
    let source = source_state(params.p_s)?;
    let noise = CMatrix4::identity() * c((1.0 - params.p_w) / 4.0, 0.0);
    Ok(DensityOperator {
        matrix: source.matrix * c(params.p_w, 0.0) + noise,
    })
}

/// `Tr(ρ²)`.
pub fn purity(rho: &DensityOperator) -> f64 {
    (rho.matrix * rho.matrix).trace().re
}

pub fn correlation_matrix(rho: &DensityOperator) -> CorrelationMatrix {
    CorrelationMatrix(Matrix3::from_fn(|i, j| {
        rho.expectation(&linalg::kron(&linalg::pauli(i), &linalg::pauli(j)))
    }))
}

/// Sum of the two largest eigenvalues of `TᵗT`. The maximal CHSH value over
/// all measurement settings is `2√M`.
pub fn horodecki_m(rho: &DensityOperator) -> f64 {
    let t = correlation_matrix(rho).0;
    let u = t.transpose() * t;
    let eig = linalg::symmetric3_eigenvalues_desc(&u);
    eig[0] + eig[1]
}

/// Closed form of [`horodecki_m`] on [`werner_like`] states: `p_w² + p_s² p_w²`.
pub fn m_werner(params: StateParams) -> f64 {
    params.p_w.powi(2) * (1.0 + params.p_s.powi(2))
}

/// Partial transpose on Bob's (second) qubit.
pub fn partial_transpose(rho: &DensityOperator) -> CMatrix4 {
    CMatrix4::from_fn(|r, col| {
        let (a, b) = (r / 2, r % 2);
        let (a2, b2) = (col / 2, col % 2);
        rho.matrix[(2 * a + b2, 2 * a2 + b)]
    })
}

/// `2 Σ max(0, −λ)` over the eigenvalues of the partial transpose.
pub fn negativity(rho: &DensityOperator) -> f64 {
    let eig = linalg::hermitian_eigenvalues(&partial_transpose(rho));
    2.0 * eig.iter().map(|&l| (-l).max(0.0)).sum::<f64>()
}

/// Entanglement bound implied by a CHSH value: `S/√2 − 1`. Can be negative,
/// in which case it carries no information.
pub fn negativity_lower_bound(s: f64) -> f64 {
    s / std::f64::consts::SQRT_2 - 1.0
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`.
pub fn fidelity(rho: &DensityOperator, sigma: &DensityOperator) -> Result<f64> {
    rho.ensure_psd()?;
    sigma.ensure_psd()?;
    Ok(fidelity_with_sqrt(&linalg::psd_sqrt(&rho.matrix), sigma))
}

/// Fidelity against a fixed reference whose square root is precomputed.
pub(crate) fn fidelity_with_sqrt(sqrt_rho: &CMatrix4, sigma: &DensityOperator) -> f64 {
    let inner = sqrt_rho * sigma.matrix * sqrt_rho;
    let inner = (inner + inner.adjoint()) * c(0.5, 0.0);
    let eig = linalg::hermitian_eigenvalues(&inner);
    let root_trace: f64 = eig.iter().map(|&l| l.max(0.0).sqrt()).sum();
    (root_trace * root_trace).clamp(0.0, 1.0)
}
