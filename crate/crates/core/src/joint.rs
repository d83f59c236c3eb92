//! Qubit ⊗ cavity model in the dispersive regime.
//!
//! Basis ordering is qubit-major: index `q · dim_c + k` for `|q⟩ ⊗ |k⟩` with
//! `q = 0` (g) or `1` (e). Operators are built as `qubit.kronecker(cavity)`.
//! Frames: the cavity rotates at the drive frequency, the qubit at the
//! blocking-tone frequency `f_q − Nχ`; both drives are in the rotating-wave
//! approximation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, EffectiveParams, LossOperator};
use crate::error::{Error, Result};
use crate::fock::{self, DensityMatrix, FockSpace};
use crate::linalg::{self, Operator};
use crate::master::{self, Collapse, IntegratorSettings, Liouvillian, Trajectory};
use crate::scalar::{ci, cr, two_pi, Real, C};

/// Dispersive shift, MHz.
pub const DEFAULT_CHI: f64 = 4.63;
/// Blocking-tone Rabi frequency, MHz.
pub const DEFAULT_OMEGA_R: f64 = 6.24;
/// Qubit relaxation `(11.5 µs)⁻¹`.
pub const DEFAULT_GAMMA_1: f64 = 1.0 / 11.5;
/// Qubit decoherence `(8.9 µs)⁻¹`.
pub const DEFAULT_GAMMA_2: f64 = 1.0 / 8.9;
/// Rabi frequency of the photon-number selective probe, MHz.
pub const DEFAULT_SELECTIVE_RABI: f64 = 0.5;
/// Residual thermal excitation of the qubit.
pub const DEFAULT_THERMAL: f64 = 0.22;
/// Upper bound on blockade-induced qubit excitation.
pub const DEFAULT_PARASITIC: f64 = 0.18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    /// Dispersive shift χ, MHz.
    pub chi: f64,
    /// Blocking-tone Rabi frequency Ω_R, MHz.
    pub omega_r: f64,
    /// Cavity displacement rate, µs⁻¹.
    pub epsilon_d: f64,
    /// `f_c − f_d`, MHz.
    pub detuning_c: f64,
    #[serde(rename = "N")]
    pub blocked: usize,
    pub gamma_c: f64,
    pub gamma_1: f64,
    pub gamma_2: f64,
    pub dim_c: usize,
}

impl JointParams {
    pub fn operating_point(n: usize) -> Self {
        let eff = EffectiveParams::operating_point(n);
        Self {
            chi: DEFAULT_CHI,
            omega_r: DEFAULT_OMEGA_R,
            epsilon_d: eff.epsilon_d,
            detuning_c: eff.detuning,
            blocked: n,
            gamma_c: eff.gamma_c,
            gamma_1: DEFAULT_GAMMA_1,
            gamma_2: DEFAULT_GAMMA_2,
            dim_c: eff.dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("chi", self.chi),
            ("omega_r", self.omega_r),
            ("epsilon_d", self.epsilon_d),
            ("detuning_c", self.detuning_c),
            ("gamma_c", self.gamma_c),
            ("gamma_1", self.gamma_1),
            ("gamma_2", self.gamma_2),
        ] {
            if !v.is_finite() {
                return Err(Error::param(field, "must be finite"));
            }
        }
        if self.chi <= 0.0 {
            return Err(Error::param("chi", "must be positive"));
        }
        for (field, v) in [
            ("omega_r", self.omega_r),
            ("epsilon_d", self.epsilon_d),
            ("gamma_c", self.gamma_c),
            ("gamma_1", self.gamma_1),
        ] {
            if v < 0.0 {
                return Err(Error::param(field, "must be non-negative"));
            }
        }
        if self.gamma_2 < self.gamma_1 / 2.0 {
            return Err(Error::param("gamma_2", "must be at least gamma_1 / 2"));
        }
        FockSpace::new(self.dim_c)?;
        if self.blocked < 1 || self.blocked + 3 > self.dim_c {
            return Err(Error::param(
                "N",
                format!("need 1 <= N and N + 3 <= dim_c = {}", self.dim_c),
            ));
        }
        Ok(())
    }

    /// Pure dephasing rate `γ_2 − γ_1/2`.
    pub fn gamma_phi(&self) -> f64 {
        self.gamma_2 - self.gamma_1 / 2.0
    }

    pub fn cavity_space(&self) -> Result<FockSpace> {
        FockSpace::new(self.dim_c)
    }

    /// Effective single-mode model with the same drive, detuning and loss
    /// (blockade at N, no Kerr term).
    pub fn effective_counterpart(&self) -> EffectiveParams {
        EffectiveParams {
            epsilon_d: self.epsilon_d,
            detuning: self.detuning_c,
            lambda: 0.0,
            gamma_c: self.gamma_c,
            blocked: Some(self.blocked),
            dim: self.dim_c,
            loss: LossOperator::Blocked,
        }
    }
}

/// Qubit operators in the `(g, e)` basis.
pub mod qubit {
    use super::*;

    pub fn sigma_x<T: Real>() -> Operator<T> {
        DMatrix::from_row_slice(2, 2, &[cr(T::zero()), cr(T::one()), cr(T::one()), cr(T::zero())])
    }

    /// `σ− = |g⟩⟨e|`
    pub fn sigma_minus<T: Real>() -> Operator<T> {
        let mut m = linalg::zeros(2);
        m[(0, 1)] = cr(T::one());
        m
    }

    /// `|e⟩⟨e|`
    pub fn excited_projector<T: Real>() -> Operator<T> {
        let mut m = linalg::zeros(2);
        m[(1, 1)] = cr(T::one());
        m
    }

    pub fn ground_projector<T: Real>() -> Operator<T> {
        let mut m = linalg::zeros(2);
        m[(0, 0)] = cr(T::one());
        m
    }

    /// Real rotation `[[cos θ/2, −sin θ/2], [sin θ/2, cos θ/2]]`; at θ = π/2
    /// it takes `|g⟩` to `(|g⟩ + |e⟩)/√2`.
    pub fn rotation_y<T: Real>(theta: T) -> Operator<T> {
        let (s, c) = (theta / T::lit(2.0)).sin_cos();
        DMatrix::from_row_slice(2, 2, &[cr(c), cr(-s), cr(s), cr(c)])
    }
}

/// `Q ⊗ I_c`
pub fn on_qubit<T: Real>(op: &Operator<T>, dim_c: usize) -> Operator<T> {
    op.kronecker(&linalg::identity::<T>(dim_c))
}

/// `I_q ⊗ A`
pub fn on_cavity<T: Real>(op: &Operator<T>) -> Operator<T> {
    linalg::identity::<T>(2).kronecker(op)
}

/// `ρ_q ⊗ ρ_c`
pub fn product_state<T: Real>(qubit: &DensityMatrix<T>, cavity: &DensityMatrix<T>) -> Result<DensityMatrix<T>> {
    if qubit.dim() != 2 {
        return Err(Error::param("qubit", "qubit state must be 2x2"));
    }
    Ok(DensityMatrix::from_matrix_unchecked(qubit.matrix().kronecker(cavity.matrix())))
}

/// `|g⟩⟨g| ⊗ ρ_c`
pub fn with_ground_qubit<T: Real>(cavity: &DensityMatrix<T>) -> DensityMatrix<T> {
    DensityMatrix::from_matrix_unchecked(qubit::ground_projector::<T>().kronecker(cavity.matrix()))
}

/// Rotating-frame Hamiltonian (rad/µs):
/// `2πδ_c n + 2πχ |e⟩⟨e|(N − n) + 2π(Ω_R/2) σ_x + iε(a† − a)`.
pub fn joint_hamiltonian<T: Real>(params: &JointParams) -> Result<Operator<T>> {
    params.validate()?;
    let space = params.cavity_space()?;
    let dc = params.dim_c;
    let a = fock::annihilation::<T>(space);
    let n_op = fock::number::<T>(space);
    let tau = two_pi::<T>();
    let blocked = linalg::identity::<T>(dc) * cr(T::from_usize_lossy(params.blocked));

    let detuning = on_cavity(&n_op) * cr(tau * T::lit(params.detuning_c));
    let dispersive =
        qubit::excited_projector::<T>().kronecker(&(blocked - &n_op)) * cr(tau * T::lit(params.chi));
    let tone = on_qubit(&qubit::sigma_x::<T>(), dc) * cr(tau * T::lit(params.omega_r / 2.0));
    let drive = on_cavity(&(a.adjoint() - &a)) * ci(T::lit(params.epsilon_d));
    Ok(detuning + dispersive + tone + drive)
}

/// `(γ_c, I⊗a)`, `(γ_1, σ−⊗I)`, `(2γ_φ, |e⟩⟨e|⊗I)`.
pub fn joint_collapse<T: Real>(params: &JointParams) -> Result<Vec<Collapse<T>>> {
    let space = params.cavity_space()?;
    let dc = params.dim_c;
    Ok(vec![
        Collapse::new(T::lit(params.gamma_c), on_cavity(&fock::annihilation::<T>(space))),
        Collapse::new(T::lit(params.gamma_1), on_qubit(&qubit::sigma_minus::<T>(), dc)),
        Collapse::new(
            T::lit(2.0 * params.gamma_phi()),
            on_qubit(&qubit::excited_projector::<T>(), dc),
        ),
    ])
}

fn joint_observables<T: Real>(rho: &Operator<T>, dim_c: usize) -> Vec<T> {
    let mut out: Vec<T> = (0..dim_c)
        .map(|k| (rho[(k, k)].re + rho[(dim_c + k, dim_c + k)].re).max(T::zero()))
        .collect();
    let excited = (0..dim_c).fold(T::zero(), |acc, k| acc + rho[(dim_c + k, dim_c + k)].re);
    out.push(excited);
    out
}

/// Lindblad evolution of the joint state. Observables per time are the
/// cavity probabilities `P_0..P_{dim_c-1}` followed by the qubit excited
/// population.
pub fn joint_evolve<T: Real>(
    rho0: &DensityMatrix<T>,
    params: &JointParams,
    times: &[T],
    settings: &IntegratorSettings,
) -> Result<Trajectory<T>> {
    params.validate()?;
    if rho0.dim() != 2 * params.dim_c {
        return Err(Error::param(
            "rho0",
            format!("joint state must be {0}x{0}", 2 * params.dim_c),
        ));
    }
    let l = Liouvillian::new(&joint_hamiltonian::<T>(params)?, &joint_collapse::<T>(params)?)?;
    let dc = params.dim_c;
    master::propagate(rho0, &l, times, settings, |rho| joint_observables(rho, dc))
}

/// Partial trace over the qubit.
pub fn reduce_to_cavity<T: Real>(rho: &DensityMatrix<T>) -> Result<DensityMatrix<T>> {
    if rho.dim() % 2 != 0 {
        return Err(Error::param("rho", "joint state must have even dimension"));
    }
    let dc = rho.dim() / 2;
    let m = rho.matrix();
    let reduced = m.view((0, 0), (dc, dc)) + m.view((dc, dc), (dc, dc));
    Ok(DensityMatrix::from_matrix_unchecked(reduced))
}

/// Partial trace over the cavity.
pub fn reduce_to_qubit<T: Real>(rho: &DensityMatrix<T>) -> Result<DensityMatrix<T>> {
    if rho.dim() % 2 != 0 {
        return Err(Error::param("rho", "joint state must have even dimension"));
    }
    let dc = rho.dim() / 2;
    let m = rho.matrix();
    let mut q = linalg::zeros::<T>(2);
    for a in 0..2 {
        for b in 0..2 {
            q[(a, b)] = (0..dc).fold(C::new(T::zero(), T::zero()), |acc, k| acc + m[(a * dc + k, b * dc + k)]);
        }
    }
    Ok(DensityMatrix::from_matrix_unchecked(q))
}

/// Settings of the photon-number selective π pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectivePulse {
    /// Probe Rabi frequency, MHz; must stay well below χ.
    pub rabi: f64,
    /// Include the qubit and cavity loss of `params` during the pulse.
    pub dissipative: bool,
}

impl Default for SelectivePulse {
    fn default() -> Self {
        Self {
            rabi: DEFAULT_SELECTIVE_RABI,
            dissipative: false,
        }
    }
}

/// Applies a constant-amplitude π pulse resonant with the qubit transition
/// for `k` photons (duration `1/(2Ω_sel)`, qubit detuned by `χ(k − n)` for
/// `n` photons) and returns the final qubit excitation probability. With the
/// qubit initially in `|g⟩` this is `P_k` up to off-resonant leakage.
pub fn selective_pi_readout<T: Real>(
    rho: &DensityMatrix<T>,
    k: usize,
    params: &JointParams,
    pulse: &SelectivePulse,
) -> Result<T> {
    params.validate()?;
    let dc = params.dim_c;
    if k >= dc {
        return Err(Error::param("k", format!("level {k} outside cavity dimension {dc}")));
    }
    if rho.dim() != 2 * dc {
        return Err(Error::param("rho", format!("joint state must be {0}x{0}", 2 * dc)));
    }
    if !(pulse.rabi > 0.0 && pulse.rabi.is_finite()) {
        return Err(Error::param("rabi", "must be positive"));
    }
    let initial_excited = reduce_to_qubit(rho)?.matrix()[(1, 1)].re.to_f64_lossy();
    if initial_excited > 1e-3 {
        log::warn!("selective readout on a qubit with excited population {initial_excited:.3}; result is not P_k");
    }

    let space = params.cavity_space()?;
    let tau = two_pi::<T>();
    let shift = linalg::identity::<T>(dc) * cr(T::from_usize_lossy(k)) - fock::number::<T>(space);
    let h = qubit::excited_projector::<T>().kronecker(&shift) * cr(tau * T::lit(params.chi))
        + on_qubit(&qubit::sigma_x::<T>(), dc) * cr(tau * T::lit(pulse.rabi / 2.0));
    let collapse = if pulse.dissipative {
        joint_collapse::<T>(params)?
    } else {
        Vec::new()
    };
    let l = Liouvillian::new(&h, &collapse)?;
    let duration = T::lit(1.0 / (2.0 * pulse.rabi));
    let settings = IntegratorSettings {
        store_every: 0,
        ..IntegratorSettings::for_scalar::<T>()
    };
    let traj = master::propagate(rho, &l, &[T::zero(), duration], &settings, |r| {
        vec![joint_observables(r, dc)[dc]]
    })?;
    Ok(traj.observables[1][0])
}

/// Outcome of [`readout_correction`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedProbability {
    pub value: f64,
    /// `1 − p_bg < 0.1`: the mixture is nearly all background.
    pub ill_conditioned: bool,
}

/// Combined background weight `p_t + p_p − p_t·p_p`.
pub fn background_weight(p_thermal: f64, p_parasitic: f64) -> f64 {
    p_thermal + p_parasitic - p_thermal * p_parasitic
}

fn check_fraction(field: &'static str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::param(field, format!("must lie in [0, 1], got {v}")));
    }
    Ok(())
}

/// Forward model: `raw = (1 − p_bg) P̃ + p_bg q_bg`.
pub fn readout_mix(true_p: f64, p_thermal: f64, p_parasitic: f64, q_bg: f64) -> Result<f64> {
    check_fraction("probability", true_p)?;
    check_fraction("p_thermal", p_thermal)?;
    check_fraction("p_parasitic", p_parasitic)?;
    check_fraction("q_bg", q_bg)?;
    let p_bg = background_weight(p_thermal, p_parasitic);
    Ok((1.0 - p_bg) * true_p + p_bg * q_bg)
}

/// Inverts [`readout_mix`] and clips to `[0, 1]`.
pub fn readout_correction(
    raw: f64,
    p_thermal: f64,
    p_parasitic: f64,
    q_bg: f64,
) -> Result<CorrectedProbability> {
    check_fraction("raw", raw)?;
    check_fraction("p_thermal", p_thermal)?;
    check_fraction("p_parasitic", p_parasitic)?;
    check_fraction("q_bg", q_bg)?;
    let p_bg = background_weight(p_thermal, p_parasitic);
    if p_bg >= 1.0 {
        return Err(Error::param("p_bg", "background weight reaches 1; nothing to invert"));
    }
    let value = ((raw - p_bg * q_bg) / (1.0 - p_bg)).clamp(0.0, 1.0);
    Ok(CorrectedProbability {
        value,
        ill_conditioned: 1.0 - p_bg < 0.1,
    })
}

/// Joint model against its effective counterpart on a common time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointComparison {
    /// `max_{t,k} |P_k^joint − P_k^eff|`
    pub max_discrepancy: f64,
    /// `max_t P_N` in the joint model.
    pub max_leakage: f64,
    pub max_qubit_excitation: f64,
}

/// Runs both models from `|g⟩ ⊗ |0⟩` (effective: `|0⟩`) and compares them.
pub fn compare_with_effective(
    params: &JointParams,
    times: &[f64],
    settings: &IntegratorSettings,
) -> Result<JointComparison> {
    let space = params.cavity_space()?;
    let vacuum = DensityMatrix::<f64>::vacuum(space);
    let settings = IntegratorSettings {
        store_every: 0,
        ..*settings
    };
    let joint = joint_evolve(&with_ground_qubit(&vacuum), params, times, &settings)?;
    let eff = dynamics::evolve(&vacuum, &params.effective_counterpart(), times, &settings)?;
    let dc = params.dim_c;
    let mut cmp = JointComparison {
        max_discrepancy: 0.0,
        max_leakage: 0.0,
        max_qubit_excitation: 0.0,
    };
    for (j, e) in joint.observables.iter().zip(&eff.observables) {
        for k in 0..dc {
            cmp.max_discrepancy = cmp.max_discrepancy.max((j[k] - e[k]).abs());
        }
        cmp.max_leakage = cmp.max_leakage.max(j[params.blocked]);
        cmp.max_qubit_excitation = cmp.max_qubit_excitation.max(j[dc]);
    }
    Ok(cmp)
}
