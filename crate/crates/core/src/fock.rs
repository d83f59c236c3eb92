//! Operators and states on a truncated Fock space.
//!
//! Basis vectors are photon-number states `|0⟩ … |D-1⟩`. Everything is dense:
//! at the dimensions used here (D up to a few tens) sparse storage buys nothing.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Operator};
use crate::scalar::{cr, modulus, Real, C};

/// Levels appended before exponentiating the displacement generator.
pub const DEFAULT_PAD: usize = 20;

/// Largest dimension for which `k!` stays finite in `f64`.
pub const MAX_DIM: usize = 170;

/// Truncated Fock space with levels `0..dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FockSpace {
    dim: usize,
}

impl FockSpace {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::param("dim", format!("need at least 2 levels, got {dim}")));
        }
        if dim > MAX_DIM {
            return Err(Error::param("dim", format!("at most {MAX_DIM} levels, got {dim}")));
        }
        Ok(Self { dim })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same space with `extra` more levels.
    pub fn padded(&self, extra: usize) -> Self {
        Self {
            dim: self.dim + extra,
        }
    }
}

/// Normalized pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T: Real> {
    amplitudes: DVector<C<T>>,
}

impl<T: Real> StateVector<T> {
    /// Normalizes `amplitudes`; fails on a zero or non-finite vector.
    pub fn normalized(amplitudes: DVector<C<T>>) -> Result<Self> {
        let norm = amplitudes.norm();
        if !norm.is_finite() || norm <= T::zero() {
            return Err(Error::param("amplitudes", "vector cannot be normalized"));
        }
        Ok(Self {
            amplitudes: amplitudes.unscale(norm),
        })
    }

    /// Number state `|k⟩`.
    pub fn fock(space: FockSpace, k: usize) -> Result<Self> {
        if k >= space.dim() {
            return Err(Error::param(
                "k",
                format!("level {k} outside a space of dimension {}", space.dim()),
            ));
        }
        let mut v = DVector::zeros(space.dim());
        v[k] = cr(T::one());
        Ok(Self { amplitudes: v })
    }

    pub fn vacuum(space: FockSpace) -> Self {
        Self::fock(space, 0).expect("level 0 always exists")
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &DVector<C<T>> {
        &self.amplitudes
    }

    /// `|⟨self|other⟩|²`
    pub fn fidelity(&self, other: &StateVector<T>) -> T {
        self.amplitudes.dotc(&other.amplitudes).norm_sqr()
    }

    pub fn to_density(&self) -> DensityMatrix<T> {
        DensityMatrix {
            matrix: linalg::outer(&self.amplitudes, &self.amplitudes),
        }
    }
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix<T: Real> {
    matrix: Operator<T>,
}

impl<T: Real> DensityMatrix<T> {
    /// Validates trace, Hermiticity and positivity within `1e-9` (or a few
    /// hundred ulps for low-precision scalars).
    pub fn new(matrix: Operator<T>) -> Result<Self> {
        let tol = T::lit(1e-9).max(T::default_epsilon() * T::lit(256.0));
        Self::with_tolerance(matrix, tol)
    }

    pub fn with_tolerance(matrix: Operator<T>, tol: T) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::param("rho", "density matrix must be square and non-empty"));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::param("rho", "non-finite entry"));
        }
        let rho = Self { matrix };
        let trace_err = (rho.trace() - T::one()).abs();
        if trace_err > tol {
            return Err(Error::param("rho", format!("trace deviates from 1 by {trace_err:?}")));
        }
        let herm = rho.hermiticity_defect();
        if herm > tol {
            return Err(Error::param("rho", format!("not Hermitian (defect {herm:?})")));
        }
        let min_eig = rho.min_eigenvalue();
        if min_eig < -tol {
            return Err(Error::param("rho", format!("negative eigenvalue {min_eig:?}")));
        }
        Ok(rho)
    }

    /// Wraps a matrix without checking invariants. Integrators use this for
    /// intermediate states they validate themselves.
    pub fn from_matrix_unchecked(matrix: Operator<T>) -> Self {
        Self { matrix }
    }

    pub fn fock(space: FockSpace, k: usize) -> Result<Self> {
        Ok(StateVector::fock(space, k)?.to_density())
    }

    pub fn vacuum(space: FockSpace) -> Self {
        StateVector::vacuum(space).to_density()
    }

    /// `Σ_k p_k |k⟩⟨k|`, normalized.
    pub fn diagonal(probabilities: &[T]) -> Result<Self> {
        if probabilities.iter().any(|p| *p < T::zero()) {
            return Err(Error::param("probabilities", "negative entry"));
        }
        let total = probabilities.iter().fold(T::zero(), |a, p| a + *p);
        if total <= T::zero() {
            return Err(Error::param("probabilities", "zero total weight"));
        }
        let n = probabilities.len();
        let diag = DVector::from_iterator(n, probabilities.iter().map(|p| cr(*p / total)));
        Ok(Self {
            matrix: DMatrix::from_diagonal(&diag),
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Operator<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Operator<T> {
        self.matrix
    }

    pub fn trace(&self) -> T {
        self.matrix.diagonal().iter().fold(T::zero(), |a, z| a + z.re)
    }

    pub fn purity(&self) -> T {
        linalg::trace_product(&self.matrix, &self.matrix).re
    }

    pub fn hermiticity_defect(&self) -> T {
        linalg::hermiticity_defect(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> T {
        linalg::min_eigenvalue(&self.matrix)
    }

    /// `Tr[ρ O]`
    pub fn expect(&self, op: &Operator<T>) -> C<T> {
        linalg::trace_product(&self.matrix, op)
    }

    /// `Re ρ_kk` for every level, raw (no clipping).
    pub fn populations(&self) -> Vec<T> {
        self.matrix.diagonal().iter().map(|z| z.re).collect()
    }
}

/// Ladder operator `a` with `⟨k-1|a|k⟩ = √k`.
pub fn annihilation<T: Real>(space: FockSpace) -> Operator<T> {
    let mut a = linalg::zeros(space.dim());
    for k in 1..space.dim() {
        a[(k - 1, k)] = cr(T::from_usize_lossy(k).sqrt());
    }
    a
}

pub fn creation<T: Real>(space: FockSpace) -> Operator<T> {
    annihilation::<T>(space).adjoint()
}

/// `a†a`, diagonal.
pub fn number<T: Real>(space: FockSpace) -> Operator<T> {
    let diag = DVector::from_iterator(space.dim(), (0..space.dim()).map(|k| cr(T::from_usize_lossy(k))));
    DMatrix::from_diagonal(&diag)
}

/// Annihilation operator with the transitions into and out of level `blocked`
/// removed: the `|N-1⟩⟨N|` and `|N⟩⟨N+1|` elements are zero, so
/// `span{|0⟩..|N-1⟩}` is invariant under both `a_N` and `a_N†`.
pub fn blocked_annihilation<T: Real>(space: FockSpace, blocked: usize) -> Result<Operator<T>> {
    if blocked < 1 || blocked >= space.dim() {
        return Err(Error::param(
            "N",
            format!("blocked level must lie in 1..={}, got {blocked}", space.dim() - 1),
        ));
    }
    let mut a = annihilation(space);
    a[(blocked - 1, blocked)] = cr(T::zero());
    if blocked + 1 < space.dim() {
        a[(blocked, blocked + 1)] = cr(T::zero());
    }
    Ok(a)
}

/// Photon parity `exp(iπ a†a) = diag((-1)^k)`.
pub fn parity_operator<T: Real>(space: FockSpace) -> Operator<T> {
    let diag = DVector::from_iterator(
        space.dim(),
        (0..space.dim()).map(|k| if k % 2 == 0 { cr(T::one()) } else { cr(-T::one()) }),
    );
    DMatrix::from_diagonal(&diag)
}

/// Displacement operator `exp(α a† − α* a)` with [`DEFAULT_PAD`] levels of
/// headroom. See [`displacement_padded`].
pub fn displacement<T: Real>(space: FockSpace, alpha: C<T>) -> Operator<T> {
    displacement_padded(space, alpha, DEFAULT_PAD)
}

/// Exponentiates the displacement generator on `dim + pad` levels and keeps
/// the leading `dim x dim` block. Accuracy near the top `pad` levels of the
/// result still depends on `|α|`; keep `|α| ≪ √dim`.
pub fn displacement_padded<T: Real>(space: FockSpace, alpha: C<T>, pad: usize) -> Operator<T> {
    let big = space.padded(pad);
    let a = annihilation::<T>(big);
    let generator = a.adjoint() * alpha - &a * alpha.conj();
    linalg::truncate(&generator.exp(), space.dim())
}

/// Exact matrix elements `⟨m|D(α)|n⟩` of the untruncated displacement
/// operator, from the associated-Laguerre closed form. Independent of
/// [`displacement`] and free of truncation error.
pub fn displacement_elements<T: Real>(space: FockSpace, alpha: C<T>) -> Operator<T> {
    let dim = space.dim();
    let x = alpha.norm_sqr();
    let envelope = (-x / T::lit(2.0)).exp();
    let mut out = linalg::zeros(dim);
    for k in 0..dim {
        // L_n^{(k)}(x) for n = 0..dim-k, by the forward three-term recurrence.
        let kk = T::from_usize_lossy(k);
        let mut lag = Vec::with_capacity(dim - k);
        lag.push(T::one());
        if dim - k > 1 {
            lag.push(T::one() + kk - x);
        }
        for n in 1..(dim - k).saturating_sub(1) {
            let nn = T::from_usize_lossy(n);
            let next = ((T::lit(2.0) * nn + T::one() + kk - x) * lag[n] - (nn + kk) * lag[n - 1])
                / (nn + T::one());
            lag.push(next);
        }
        for (n, l) in lag.iter().enumerate() {
            let m = n + k;
            // Π_{j=n+1}^{m} α/√j  ==  √(n!/m!) α^k
            let mut lower = cr(envelope * *l);
            let mut upper = lower;
            for j in (n + 1)..=m {
                let s = T::from_usize_lossy(j).sqrt();
                lower *= alpha.unscale(s);
                upper *= -alpha.conj().unscale(s);
            }
            out[(m, n)] = lower;
            if k > 0 {
                out[(n, m)] = upper;
            }
        }
    }
    out
}

/// Coherent state `|α⟩` with amplitudes `e^{-|α|²/2} α^k / √k!`, renormalized
/// on the truncated space.
pub fn coherent_state<T: Real>(space: FockSpace, alpha: C<T>) -> Result<StateVector<T>> {
    let r = modulus(alpha);
    if r * r + T::lit(5.0) * r >= T::from_usize_lossy(space.dim()) {
        return Err(Error::param(
            "alpha",
            format!(
                "|alpha|^2 + 5|alpha| must stay below dim = {} (|alpha| = {:?})",
                space.dim(),
                r
            ),
        ));
    }
    let mut amps = DVector::zeros(space.dim());
    let mut current = cr((-r * r / T::lit(2.0)).exp());
    amps[0] = current;
    for k in 1..space.dim() {
        current *= alpha.unscale(T::from_usize_lossy(k).sqrt());
        amps[k] = current;
    }
    StateVector::normalized(amps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn space(d: usize) -> FockSpace {
        FockSpace::new(d).unwrap()
    }

    /// exp(G) by Taylor series with scaling and squaring; test oracle only.
    fn expm_taylor(g: &Operator<f64>) -> Operator<f64> {
        let norm: f64 = g.iter().map(|z| z.norm()).sum::<f64>().max(1e-300);
        let squarings = (norm.log2().ceil().max(0.0) as u32) + 4;
        let scaled = g / C::new(2f64.powi(squarings as i32), 0.0);
        let n = g.nrows();
        let mut term = linalg::identity::<f64>(n);
        let mut sum = term.clone();
        for k in 1..40 {
            term = &term * &scaled / C::new(k as f64, 0.0);
            sum += &term;
        }
        for _ in 0..squarings {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn dimension_bounds() {
        assert!(FockSpace::new(1).is_err());
        assert!(FockSpace::new(2).is_ok());
        assert!(FockSpace::new(MAX_DIM + 1).is_err());
    }

    #[test]
    fn annihilation_elements_d3() {
        let a = annihilation::<f64>(space(3));
        assert_eq!(a[(0, 1)], C::new(1.0, 0.0));
        assert_eq!(a[(1, 2)], C::new(2f64.sqrt(), 0.0));
        let nonzero = a.iter().filter(|z| z.norm() > 0.0).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn annihilation_kills_vacuum() {
        let s = space(6);
        let v = annihilation::<f64>(s) * StateVector::vacuum(s).amplitudes();
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn number_diagonal_from_ladder() {
        let s = space(9);
        let a = annihilation::<f64>(s);
        let n = a.adjoint() * &a;
        for k in 0..9 {
            assert_abs_diff_eq!(n[(k, k)].re, k as f64, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(linalg::max_abs(&(n - number::<f64>(s))), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn blocked_d8_n3() {
        let s = space(8);
        let a = annihilation::<f64>(s);
        let an = blocked_annihilation::<f64>(s, 3).unwrap();
        assert_eq!(an[(2, 3)].norm(), 0.0);
        assert_eq!(an[(3, 4)].norm(), 0.0);
        for k in 1..8 {
            if k != 3 && k != 4 {
                assert_eq!(an[(k - 1, k)], a[(k - 1, k)]);
                assert_abs_diff_eq!(an[(k - 1, k)].re, (k as f64).sqrt(), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn blocked_d2_n1_is_zero() {
        let an = blocked_annihilation::<f64>(space(2), 1).unwrap();
        assert_eq!(linalg::max_abs(&an), 0.0);
    }

    #[test]
    fn blocked_at_top_level() {
        // N = D-1: only the |N-1⟩⟨N| element exists to remove.
        let an = blocked_annihilation::<f64>(space(5), 4).unwrap();
        assert_eq!(an[(3, 4)].norm(), 0.0);
        assert_abs_diff_eq!(an[(2, 3)].re, 3f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn blocked_out_of_range() {
        assert!(blocked_annihilation::<f64>(space(5), 0).is_err());
        assert!(blocked_annihilation::<f64>(space(5), 5).is_err());
    }

    #[test]
    fn parity_d4() {
        let p = parity_operator::<f64>(space(4));
        let diag: Vec<f64> = p.diagonal().iter().map(|z| z.re).collect();
        assert_eq!(diag, vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(&p * &p, linalg::identity::<f64>(4));
    }

    #[test]
    fn parity_of_coherent_state() {
        let s = space(40);
        let alpha = C::new(1.1, -0.7);
        let psi = coherent_state(s, alpha).unwrap();
        let value = psi.to_density().expect(&parity_operator(s)).re;
        // Σ (-1)^k e^{-|α|²} |α|^{2k}/k!
        let x: f64 = alpha.norm_sqr();
        let mut term = (-x).exp();
        let mut direct = term;
        for k in 1..80 {
            term *= -x / k as f64;
            direct += term;
        }
        assert_abs_diff_eq!(direct, (-2.0 * x).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(value, direct, epsilon = 1e-9);
    }

    #[test]
    fn displacement_zero_is_identity() {
        let d = displacement::<f64>(space(10), C::new(0.0, 0.0));
        assert_abs_diff_eq!(linalg::max_abs(&(d - linalg::identity(10))), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn displacement_vacuum_overlap() {
        let s = space(30);
        for &(re, im) in &[(0.3, 0.0), (1.0, 1.0), (-1.5, 0.8), (0.0, 2.0), (1.2, -1.6)] {
            let alpha = C::new(re, im);
            let d = displacement_padded::<f64>(s, alpha, 20);
            let oracle = linalg::truncate(&expm_taylor(&{
                let a = annihilation::<f64>(s.padded(40));
                a.adjoint() * alpha - &a * alpha.conj()
            }), 30);
            let expected = (-alpha.norm_sqr()).exp();
            assert_abs_diff_eq!(d[(0, 0)].norm_sqr(), expected, epsilon = 1e-8);
            assert_abs_diff_eq!(oracle[(0, 0)].norm_sqr(), expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn displacement_matches_series_and_closed_form() {
        let s = space(30);
        let alpha = C::new(1.3, -0.9);
        let d = displacement_padded::<f64>(s, alpha, 20);
        let a = annihilation::<f64>(s.padded(40));
        let oracle = linalg::truncate(&expm_taylor(&(a.adjoint() * alpha - &a * alpha.conj())), 30);
        let exact = displacement_elements::<f64>(s, alpha);
        assert_abs_diff_eq!(linalg::max_abs(&(&d - &oracle)), 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(linalg::max_abs(&(&exact - &oracle)), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn displacement_inverse_on_central_block() {
        // Truncating to 30 levels leaks weight out of |k⟩ for k near 10 once
        // |α| approaches 2, so the 1e-8 block shrinks with |α|.
        let s = space(30);
        let pad = 20;
        for &(alpha, keep) in &[(C::new(0.8, 0.6), 10), (C::new(1.4, 1.0), 7), (C::new(1.6, 1.2), 5)] {
            let prod = displacement_padded::<f64>(s, alpha, pad) * displacement_padded::<f64>(s, -alpha, pad);
            let block = linalg::truncate(&prod, keep);
            assert_abs_diff_eq!(linalg::max_abs(&(block - linalg::identity(keep))), 0.0, epsilon = 1e-8);
        }
        // Exact elements show the same edge loss: it is truncation, not the exponential.
        let exact = displacement_elements::<f64>(s, C::new(1.6, 1.2));
        let leak = linalg::max_abs(&(linalg::truncate(&(exact.adjoint() * &exact), 10) - linalg::identity(10)));
        assert!(leak > 1e-6);
    }

    #[test]
    fn coherent_vacuum_and_mean() {
        let s = space(30);
        let zero = coherent_state::<f64>(s, C::new(0.0, 0.0)).unwrap();
        assert_eq!(zero.fidelity(&StateVector::vacuum(s)), 1.0);

        let alpha = C::new(1.2, 0.9);
        let psi = coherent_state(s, alpha).unwrap();
        let mean = psi.to_density().expect(&number(s)).re;
        assert_abs_diff_eq!(mean, alpha.norm_sqr(), epsilon = 1e-6);
    }

    #[test]
    fn coherent_matches_displaced_vacuum() {
        let s = space(30);
        let alpha = C::new(-0.8, 1.5);
        let displaced = displacement::<f64>(s, alpha) * StateVector::vacuum(s).amplitudes();
        let displaced = StateVector::normalized(displaced).unwrap();
        let psi = coherent_state(s, alpha).unwrap();
        assert!(psi.fidelity(&displaced) > 1.0 - 1e-6);
    }

    #[test]
    fn coherent_precondition() {
        assert!(coherent_state::<f64>(space(10), C::new(2.0, 0.0)).is_err());
    }

    #[test]
    fn density_validation() {
        let s = space(3);
        assert!(DensityMatrix::<f64>::new(linalg::identity(3)).is_err());
        let mut m = DensityMatrix::<f64>::vacuum(s).into_matrix();
        m[(0, 1)] = C::new(0.1, 0.0);
        assert!(DensityMatrix::new(m).is_err());
        let mixed = DensityMatrix::<f64>::diagonal(&[0.5, 0.25, 0.25]).unwrap();
        assert_abs_diff_eq!(mixed.purity(), 0.375, epsilon = 1e-15);
    }

    #[test]
    fn single_precision_ladder() {
        let s = space(6);
        let a = annihilation::<f32>(s);
        let comm = linalg::commutator(&a, &a.adjoint());
        assert!((comm[(2, 2)].re - 1.0).abs() < 1e-5);
        let psi = coherent_state::<f32>(space(20), C::new(0.5, 0.5)).unwrap();
        assert!((psi.amplitudes().norm() - 1.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn ladder_commutator_is_identity_but_last(d in 2usize..30) {
            let s = space(d);
            let a = annihilation::<f64>(s);
            let comm = linalg::commutator(&a, &a.adjoint());
            let mut expected = linalg::identity::<f64>(d);
            expected[(d - 1, d - 1)] = C::new(1.0 - d as f64, 0.0);
            prop_assert!(linalg::max_abs(&(comm - expected)) < 1e-12);
        }

        #[test]
        fn blocked_span_is_invariant(d in 3usize..25, frac in 0.0f64..1.0) {
            let s = space(d);
            let n = 1 + ((d - 2) as f64 * frac) as usize;
            let an = blocked_annihilation::<f64>(s, n).unwrap();
            let a = annihilation::<f64>(s);
            for i in 0..d {
                for j in 0..d {
                    let crosses = (i < n) != (j < n);
                    if crosses {
                        prop_assert_eq!(an[(i, j)].norm(), 0.0);
                    }
                    if i < n && j < n {
                        prop_assert_eq!(an[(i, j)], a[(i, j)]);
                    }
                }
            }
        }

        #[test]
        fn parity_anticommutes_with_ladder(d in 2usize..30) {
            let s = space(d);
            let p = parity_operator::<f64>(s);
            let a = annihilation::<f64>(s);
            prop_assert_eq!(linalg::max_abs(&linalg::anticommutator(&p, &a)), 0.0);
        }

        #[test]
        fn displacement_unitary_on_central_block(r in 0.0f64..2.0, phase in 0.0f64..6.3) {
            let s = space(30);
            let d = displacement::<f64>(s, C::from_polar(r, phase));
            let keep = if r <= 1.0 { 30 - DEFAULT_PAD } else { 5 };
            let prod = linalg::truncate(&(d.adjoint() * &d), keep);
            prop_assert!(linalg::max_abs(&(prod - linalg::identity(keep))) < 1e-8);
        }
    }
}
