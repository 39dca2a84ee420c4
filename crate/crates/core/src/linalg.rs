//! Fixed-size linear algebra used throughout the crate.
//!
//! Everything here is small (2×2, 3×3, 4×4) and deterministic. Hermitian
//! eigensolves go through nalgebra's `SymmetricEigen` (Householder
//! tridiagonalization plus implicit QR), and results are sorted so that
//! callers never depend on the solver's internal ordering.

use nalgebra::{Matrix2, Matrix3, Matrix4, SymmetricEigen, Vector3, Vector4};
use num_complex::Complex64;

pub type CMatrix2 = Matrix2<Complex64>;
pub type CMatrix4 = Matrix4<Complex64>;

pub(crate) const fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity2() -> CMatrix2 {
    CMatrix2::identity()
}

/// Pauli matrix by index: 0 → σx, 1 → σy, 2 → σz.
pub fn pauli(k: usize) -> CMatrix2 {
    let (o, l, i) = (c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0));
    match k {
        0 => CMatrix2::new(o, l, l, o),
        1 => CMatrix2::new(o, -i, i, o),
        2 => CMatrix2::new(l, o, o, -l),
        _ => panic!("Pauli index {k} out of range"),
    }
}

/// `a ⊗ b` with the first factor as the major index.
pub fn kron(a: &CMatrix2, b: &CMatrix2) -> CMatrix4 {
    CMatrix4::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

/// Traceless Hermitian observable `v·σ`.
pub fn bloch_operator(v: &Vector3<f64>) -> CMatrix2 {
    pauli(0) * c(v.x, 0.0) + pauli(1) * c(v.y, 0.0) + pauli(2) * c(v.z, 0.0)
}

/// Real Bloch components `Tr(M σ_k) / 2` of a 2×2 operator.
pub fn bloch_components(m: &CMatrix2) -> Vector3<f64> {
    Vector3::from_fn(|k, _| (m * pauli(k)).trace().re / 2.0)
}

pub fn max_abs_diff4(a: &CMatrix4, b: &CMatrix4) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Eigenvalues in ascending order and matching eigenvectors (as columns) of a
/// Hermitian 4×4 matrix. Only the lower triangle is read.
pub fn hermitian_eigen(m: &CMatrix4) -> (Vector4<f64>, CMatrix4) {
    let eig = SymmetricEigen::new(*m);
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vector4::from_fn(|k, _| eig.eigenvalues[order[k]]);
    let vectors = CMatrix4::from_fn(|r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &CMatrix4) -> Vector4<f64> {
    hermitian_eigen(m).0
}

/// Rebuilds `V diag(f(λ)) V†` from an eigendecomposition.
pub fn hermitian_map(values: &Vector4<f64>, vectors: &CMatrix4, f: impl Fn(f64) -> f64) -> CMatrix4 {
    let diag = CMatrix4::from_diagonal(&values.map(|v| c(f(v), 0.0)));
    vectors * diag * vectors.adjoint()
}

/// Principal square root of a positive semidefinite matrix; eigenvalues below
/// zero (round-off) are clamped.
pub fn psd_sqrt(m: &CMatrix4) -> CMatrix4 {
    let (values, vectors) = hermitian_eigen(m);
    hermitian_map(&values, &vectors, |v| v.max(0.0).sqrt())
}

/// Eigenvalues of a real symmetric 3×3 matrix, largest first.
pub fn symmetric3_eigenvalues_desc(m: &Matrix3<f64>) -> [f64; 3] {
    let eig = SymmetricEigen::new(*m);
    let mut v = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn norm1(m: &Matrix3<f64>) -> f64 {
    (0..3)
        .map(|col| m.column(col).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse of a 3×3 matrix via the adjugate. Falls back to LU with partial
/// pivoting when the determinant is tiny relative to the matrix scale.
/// Returns `None` for exactly singular or non-finite input.
pub fn invert3(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    if m.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)];
    // adjugate = transpose of the cofactor matrix
    let adj = Matrix3::new(
        cof(1, 2, 1, 2),
        -cof(0, 2, 1, 2),
        cof(0, 1, 1, 2),
        -cof(1, 2, 0, 2),
        cof(0, 2, 0, 2),
        -cof(0, 1, 0, 2),
        cof(1, 2, 0, 1),
        -cof(0, 2, 0, 1),
        cof(0, 1, 0, 1),
    );
    let det = m[(0, 0)] * adj[(0, 0)] + m[(0, 1)] * adj[(1, 0)] + m[(0, 2)] * adj[(2, 0)];
    let scale = norm1(m);
    if det == 0.0 || scale == 0.0 {
        return None;
    }
    if det.abs() > 1e-8 * scale.powi(3) {
        return Some(adj / det);
    }
    m.lu().try_inverse()
}

/// 1-norm condition number `‖M‖₁‖M⁻¹‖₁`; infinite when `M` is singular.
pub fn condition_number(m: &Matrix3<f64>) -> f64 {
    match invert3(m) {
        Some(inv) => norm1(m) * norm1(&inv),
        None => f64::INFINITY,
    }
}

pub fn matrix3_to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|r| [0, 1, 2].map(|col| m[(r, col)]))
}

pub fn rows_to_matrix3(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, col| rows[r][col])
}
