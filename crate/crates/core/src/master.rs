//! Lindblad master equation and the fixed-step RK4 propagator shared by the
//! effective cavity model and the joint qubit-cavity model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::DensityMatrix;
use crate::linalg::{self, Operator};
use crate::scalar::{ci, cr, Real};

/// Jump operator with its rate (µs⁻¹).
#[derive(Debug, Clone)]
pub struct Collapse<T: Real> {
    pub rate: T,
    pub op: Operator<T>,
}

impl<T: Real> Collapse<T> {
    pub fn new(rate: T, op: Operator<T>) -> Self {
        Self { rate, op }
    }
}

/// `-i[H,ρ] + Σ_j γ_j (L_j ρ L_j† − ½{L_j†L_j, ρ})`, written out term by term.
pub fn lindblad_rhs<T: Real>(
    rho: &Operator<T>,
    hamiltonian: &Operator<T>,
    collapse: &[Collapse<T>],
) -> Result<Operator<T>> {
    let n = rho.nrows();
    if !rho.is_square() || hamiltonian.shape() != (n, n) {
        return Err(Error::param("H", "Hamiltonian and state shapes differ"));
    }
    if let Some(bad) = collapse.iter().find(|c| c.op.shape() != (n, n)) {
        return Err(Error::param(
            "collapse",
            format!("operator of shape {:?} on a {n}-dimensional state", bad.op.shape()),
        ));
    }
    let mut out = linalg::commutator(hamiltonian, rho) * ci(-T::one());
    let half = cr(T::lit(0.5));
    for c in collapse {
        let l_dag = c.op.adjoint();
        let l_dag_l = &l_dag * &c.op;
        let term = &c.op * rho * &l_dag - linalg::anticommutator(&l_dag_l, rho) * half;
        out += term * cr(c.rate);
    }
    Ok(out)
}

/// Precomputed generator for Hermitian states:
/// `dρ/dt = K + K† + Σ γ LρL†` with `K = -i H_eff ρ`, `H_eff = H − (i/2) Σ γ L†L`.
/// Equal to [`lindblad_rhs`] whenever `ρ = ρ†`, and exactly Hermitian by construction.
#[derive(Debug, Clone)]
pub struct Liouvillian<T: Real> {
    h_eff: Operator<T>,
    jumps: Vec<(T, Operator<T>, Operator<T>)>,
}

impl<T: Real> Liouvillian<T> {
    pub fn new(hamiltonian: &Operator<T>, collapse: &[Collapse<T>]) -> Result<Self> {
        let n = hamiltonian.nrows();
        if !hamiltonian.is_square() {
            return Err(Error::param("H", "Hamiltonian must be square"));
        }
        let mut h_eff = hamiltonian.clone();
        let mut jumps = Vec::new();
        for c in collapse {
            if c.op.shape() != (n, n) {
                return Err(Error::param("collapse", "operator shape differs from H"));
            }
            if c.rate < T::zero() {
                return Err(Error::param("collapse", "negative rate"));
            }
            if c.rate == T::zero() {
                continue;
            }
            let l_dag = c.op.adjoint();
            h_eff -= (&l_dag * &c.op) * ci(c.rate * T::lit(0.5));
            jumps.push((c.rate, c.op.clone(), l_dag));
        }
        Ok(Self { h_eff, jumps })
    }

    pub fn dim(&self) -> usize {
        self.h_eff.nrows()
    }

    pub fn apply(&self, rho: &Operator<T>) -> Operator<T> {
        let k = (&self.h_eff * rho) * ci(-T::one());
        let mut out = k.adjoint() + k;
        for (rate, l, l_dag) in &self.jumps {
            out += (l * rho * l_dag) * cr(*rate);
        }
        out
    }

    /// One classical RK4 step of size `h`.
    pub fn rk4_step(&self, rho: &Operator<T>, h: T) -> Operator<T> {
        let half = cr(h * T::lit(0.5));
        let hc = cr(h);
        let k1 = self.apply(rho);
        let k2 = self.apply(&(rho + &k1 * half));
        let k3 = self.apply(&(rho + &k2 * half));
        let k4 = self.apply(&(rho + &k3 * hc));
        let sixth = cr(h / T::lit(6.0));
        rho + (k1 + (k2 + k3) * cr(T::lit(2.0)) + k4) * sixth
    }
}

/// Step size and the density-matrix checks applied at every output time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorSettings {
    /// Largest RK4 step, µs.
    pub step: f64,
    pub trace_tol: f64,
    pub hermiticity_tol: f64,
    /// Most negative eigenvalue tolerated in a stored state.
    pub eigen_tol: f64,
    /// Keep every n-th state in the trajectory (observables are always kept).
    /// Zero keeps no states at all.
    pub store_every: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            step: 1e-3,
            trace_tol: 1e-8,
            hermiticity_tol: 1e-8,
            eigen_tol: 1e-7,
            store_every: 1,
        }
    }
}

impl IntegratorSettings {
    /// Defaults loosened to what the scalar type can actually resolve.
    pub fn for_scalar<T: Real>() -> Self {
        let floor = T::default_epsilon().to_f64_lossy() * 1e4;
        let d = Self::default();
        Self {
            trace_tol: d.trace_tol.max(floor),
            hermiticity_tol: d.hermiticity_tol.max(floor),
            eigen_tol: d.eigen_tol.max(floor),
            ..d
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::param("step", format!("must be positive, got {}", self.step)));
        }
        Ok(())
    }
}

/// Time-ordered output of an integration.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    pub times: Vec<T>,
    /// `(index into times, state)` for the stored subset.
    pub states: Vec<(usize, DensityMatrix<T>)>,
    /// One observable vector per output time.
    pub observables: Vec<Vec<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Observable component `k` as a time series.
    pub fn series(&self, k: usize) -> Vec<T> {
        self.observables.iter().map(|o| o[k]).collect()
    }

    pub fn final_state(&self) -> Option<&DensityMatrix<T>> {
        self.states.last().map(|(_, s)| s)
    }
}

/// Uniform output grid `0, dt, 2dt, …, t_max`.
pub fn uniform_times<T: Real>(t_max: f64, dt: f64) -> Result<Vec<T>> {
    if !(dt > 0.0) || !(t_max >= 0.0) {
        return Err(Error::param("times", "need dt > 0 and t_max >= 0"));
    }
    let n = (t_max / dt).round() as usize;
    Ok((0..=n).map(|i| T::lit(i as f64 * dt)).collect())
}

fn check_state<T: Real>(rho: &Operator<T>, t: T, settings: &IntegratorSettings) -> Result<()> {
    let fail = |reason: String| Error::Integration {
        time: t.to_f64_lossy(),
        reason,
    };
    let trace = rho.diagonal().iter().fold(T::zero(), |a, z| a + z.re).to_f64_lossy();
    if !trace.is_finite() || (trace - 1.0).abs() > settings.trace_tol {
        return Err(fail(format!("trace drifted to {trace}")));
    }
    let herm = linalg::hermiticity_defect(rho).to_f64_lossy();
    if herm > settings.hermiticity_tol {
        return Err(fail(format!("Hermiticity defect {herm}")));
    }
    let min_eig = linalg::min_eigenvalue(rho).to_f64_lossy();
    if min_eig < -settings.eigen_tol {
        return Err(fail(format!("eigenvalue {min_eig} below tolerance")));
    }
    Ok(())
}

/// Integrates `dρ/dt = L(ρ)` from `times[0] = 0`, landing exactly on every
/// output time with equal substeps no longer than `settings.step`. Each output
/// state is checked against the tolerances in `settings` and passed to
/// `observe`.
pub fn propagate<T: Real, F>(
    rho0: &DensityMatrix<T>,
    liouvillian: &Liouvillian<T>,
    times: &[T],
    settings: &IntegratorSettings,
    mut observe: F,
) -> Result<Trajectory<T>>
where
    F: FnMut(&Operator<T>) -> Vec<T>,
{
    settings.validate()?;
    if rho0.dim() != liouvillian.dim() {
        return Err(Error::param(
            "rho0",
            format!("state dimension {} but generator dimension {}", rho0.dim(), liouvillian.dim()),
        ));
    }
    match times.first() {
        None => return Err(Error::param("times", "empty time grid")),
        Some(t0) if *t0 != T::zero() => return Err(Error::param("times", "grid must start at 0")),
        _ => {}
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("times", "grid must be strictly increasing"));
    }

    let mut rho = rho0.matrix().clone();
    let mut traj = Trajectory {
        times: times.to_vec(),
        states: Vec::new(),
        observables: Vec::with_capacity(times.len()),
    };
    let step = T::lit(settings.step);
    for (i, &t) in times.iter().enumerate() {
        if i > 0 {
            let span = t - times[i - 1];
            let n = (span / step - T::lit(1e-9)).ceil().max(T::one());
            let h = span / n;
            let n = n.to_usize().unwrap_or(1);
            for _ in 0..n {
                rho = liouvillian.rk4_step(&rho, h);
            }
        }
        check_state(&rho, t, settings)?;
        traj.observables.push(observe(&rho));
        if settings.store_every > 0 && (i % settings.store_every == 0 || i + 1 == times.len()) {
            traj.states.push((i, DensityMatrix::from_matrix_unchecked(rho.clone())));
        }
    }
    Ok(traj)
}
