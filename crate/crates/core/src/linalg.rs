//! Small dense-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::scalar::{cr, modulus, Real, C};

/// Dense complex square matrix on a truncated Fock or joint space.
pub type Operator<T> = DMatrix<C<T>>;

pub fn identity<T: Real>(dim: usize) -> Operator<T> {
    DMatrix::identity(dim, dim)
}

pub fn zeros<T: Real>(dim: usize) -> Operator<T> {
    DMatrix::zeros(dim, dim)
}

/// `AB - BA`
pub fn commutator<T: Real>(a: &Operator<T>, b: &Operator<T>) -> Operator<T> {
    a * b - b * a
}

/// `AB + BA`
pub fn anticommutator<T: Real>(a: &Operator<T>, b: &Operator<T>) -> Operator<T> {
    a * b + b * a
}

/// Largest entry modulus.
pub fn max_abs<T: Real>(m: &Operator<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc.max(modulus(*z)))
}

/// `max |M - M†|` over all entries.
pub fn hermiticity_defect<T: Real>(m: &Operator<T>) -> T {
    let n = m.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in i..n {
            worst = worst.max(modulus(m[(i, j)] - m[(j, i)].conj()));
        }
    }
    worst
}

/// Eigenvalues of the Hermitian part of `m`, ascending.
pub fn hermitian_eigenvalues<T: Real>(m: &Operator<T>) -> Vec<T> {
    let herm = (m + m.adjoint()) * cr(T::lit(0.5));
    let mut values: Vec<T> = herm.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    values
}

pub fn min_eigenvalue<T: Real>(m: &Operator<T>) -> T {
    hermitian_eigenvalues(m)
        .first()
        .copied()
        .unwrap_or_else(T::zero)
}

/// Copies the leading `dim x dim` block.
pub fn truncate<T: Real>(m: &Operator<T>, dim: usize) -> Operator<T> {
    m.view((0, 0), (dim, dim)).into_owned()
}

/// Zero-pads a square matrix to `dim x dim`.
pub fn embed<T: Real>(m: &Operator<T>, dim: usize) -> Operator<T> {
    assert!(dim >= m.nrows());
    let mut out = zeros(dim);
    out.view_mut((0, 0), (m.nrows(), m.ncols())).copy_from(m);
    out
}

/// `|u⟩⟨v|`
pub fn outer<T: Real>(u: &DVector<C<T>>, v: &DVector<C<T>>) -> Operator<T> {
    u * v.adjoint()
}

/// `Tr[AB]` without forming the product.
pub fn trace_product<T: Real>(a: &Operator<T>, b: &Operator<T>) -> C<T> {
    let n = a.nrows();
    let mut acc = C::new(T::zero(), T::zero());
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}
