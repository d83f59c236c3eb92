//! Driven, damped cavity with a blocked photon level.
//!
//! Units: times in µs, rates in µs⁻¹, frequencies in MHz. Hamiltonians are
//! returned in angular units (rad/µs), so MHz inputs pick up a factor 2π while
//! the displacement rate `epsilon_d` enters as is. With the blockade, detuning
//! and Kerr term off, the vacuum is displaced to `α = epsilon_d · t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, DensityMatrix, FockSpace};
use crate::linalg::Operator;
use crate::master::{self, Collapse, IntegratorSettings, Liouvillian, Trajectory};
use crate::scalar::{cr, two_pi, Real};

/// Cavity exit rate `(1.3 µs)⁻¹`.
pub const DEFAULT_GAMMA_C: f64 = 1.0 / 1.3;
/// Kerr coefficient `λ = −70 kHz`.
pub const DEFAULT_LAMBDA: f64 = -0.07;
/// Displacement rate inside the fitted 2.83–3.05 µs⁻¹ band.
pub const DEFAULT_EPSILON_D: f64 = 3.0;

/// Which operator carries the cavity loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossOperator {
    /// `a_N`: keeps the levels below the blockade exactly closed.
    #[default]
    Blocked,
    /// Plain `a`, for sensitivity studies.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveParams {
    /// Displacement rate, µs⁻¹.
    pub epsilon_d: f64,
    /// `f_c − f_d`, MHz.
    pub detuning: f64,
    /// Kerr coefficient, MHz. Signed; enters as `−2πλ (a†)² a²`.
    pub lambda: f64,
    /// Cavity exit rate, µs⁻¹.
    pub gamma_c: f64,
    /// Blocked level, `None` for a free cavity.
    #[serde(rename = "N")]
    pub blocked: Option<usize>,
    pub dim: usize,
    #[serde(default)]
    pub loss: LossOperator,
}

impl EffectiveParams {
    /// Fitted operating point for blockade at `n`: detuning −0.4 MHz at N = 2
    /// and −0.1 MHz above.
    pub fn operating_point(n: usize) -> Self {
        Self {
            epsilon_d: DEFAULT_EPSILON_D,
            detuning: if n == 2 { -0.4 } else { -0.1 },
            lambda: DEFAULT_LAMBDA,
            gamma_c: DEFAULT_GAMMA_C,
            blocked: Some(n),
            dim: default_dim(n),
            loss: LossOperator::Blocked,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("epsilon_d", self.epsilon_d),
            ("detuning", self.detuning),
            ("lambda", self.lambda),
            ("gamma_c", self.gamma_c),
        ] {
            if !v.is_finite() {
                return Err(Error::param(field, "must be finite"));
            }
        }
        if self.epsilon_d < 0.0 {
            return Err(Error::param("epsilon_d", "must be non-negative"));
        }
        if self.gamma_c < 0.0 {
            return Err(Error::param("gamma_c", "must be non-negative"));
        }
        FockSpace::new(self.dim)?;
        if let Some(n) = self.blocked {
            if n < 1 || n >= self.dim {
                return Err(Error::param("N", format!("must lie in 1..={}", self.dim - 1)));
            }
            if self.dim < n + 3 {
                return Err(Error::param(
                    "dim",
                    format!("need at least N + 3 = {} levels for headroom, got {}", n + 3, self.dim),
                ));
            }
        }
        Ok(())
    }

    pub fn space(&self) -> Result<FockSpace> {
        FockSpace::new(self.dim)
    }

    /// The cavity ladder operator in use: `a_N` with the blockade, `a` without.
    pub fn ladder<T: Real>(&self) -> Result<Operator<T>> {
        let space = self.space()?;
        match self.blocked {
            Some(n) => fock::blocked_annihilation(space, n),
            None => Ok(fock::annihilation(space)),
        }
    }
}

/// `max(N + 10, 12)` levels.
pub fn default_dim(n: usize) -> usize {
    (n + 10).max(12)
}

/// `H = iε(a_N† − a_N) + 2πδ a_N†a_N − 2πλ (a_N†)² a_N²` in rad/µs.
pub fn build_hamiltonian<T: Real>(params: &EffectiveParams) -> Result<Operator<T>> {
    params.validate()?;
    let a = params.ladder::<T>()?;
    let a_dag = a.adjoint();
    let drive = (&a_dag - &a) * crate::scalar::ci(T::lit(params.epsilon_d));
    let number = &a_dag * &a;
    let kerr = &a_dag * &a_dag * &a * &a;
    let tau = two_pi::<T>();
    Ok(drive + number * cr(tau * T::lit(params.detuning)) - kerr * cr(tau * T::lit(params.lambda)))
}

pub fn collapse_operators<T: Real>(params: &EffectiveParams) -> Result<Vec<Collapse<T>>> {
    let op = match params.loss {
        LossOperator::Blocked => params.ladder::<T>()?,
        LossOperator::Plain => fock::annihilation(params.space()?),
    };
    Ok(vec![Collapse::new(T::lit(params.gamma_c), op)])
}

/// Integrates the master equation on `times` (which must start at 0). The
/// observables of the returned trajectory are the photon-number probabilities.
pub fn evolve<T: Real>(
    rho0: &DensityMatrix<T>,
    params: &EffectiveParams,
    times: &[T],
    settings: &IntegratorSettings,
) -> Result<Trajectory<T>> {
    params.validate()?;
    if rho0.dim() != params.dim {
        return Err(Error::param(
            "rho0",
            format!("state has dimension {} but params.dim = {}", rho0.dim(), params.dim),
        ));
    }
    let h = build_hamiltonian::<T>(params)?;
    let l = Liouvillian::new(&h, &collapse_operators(params)?)?;
    master::propagate(rho0, &l, times, settings, populations_clipped)
}

/// `P_k = Re ρ_kk`, negative round-off clipped to zero.
pub fn photon_probabilities<T: Real>(rho: &DensityMatrix<T>) -> Vec<T> {
    populations_clipped(rho.matrix())
}

fn populations_clipped<T: Real>(rho: &Operator<T>) -> Vec<T> {
    rho.diagonal().iter().map(|z| z.re.max(T::zero())).collect()
}

/// Timing of the first `P_0` oscillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillationMetrics {
    /// First revival of `P_0`, µs.
    pub period: f64,
    /// Deepest `P_0` minimum before the revival, µs.
    pub half_period: f64,
    /// Length of the flat stretch of `P_0` around the half period, µs.
    pub plateau_width: f64,
}

/// Thresholds used by [`oscillation_metrics`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOptions {
    /// A local maximum counts as a revival only if it rises this far above the
    /// lowest value seen before it.
    pub prominence: f64,
    /// `|dP_0/dt|` below this (µs⁻¹) counts as plateau.
    pub flat_slope: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            prominence: 0.05,
            flat_slope: 0.05,
        }
    }
}

pub fn oscillation_metrics<T: Real>(traj: &Trajectory<T>) -> Result<OscillationMetrics> {
    let times: Vec<f64> = traj.times.iter().map(|t| t.to_f64_lossy()).collect();
    let p0: Vec<f64> = traj.observables.iter().map(|o| o[0].to_f64_lossy()).collect();
    oscillation_metrics_from_series(&times, &p0, MetricOptions::default())
}

/// Vertex of the parabola through three equally spaced samples around `i`.
fn parabolic_vertex(times: &[f64], values: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= values.len() {
        return times[i];
    }
    let (y0, y1, y2) = (values[i - 1], values[i], values[i + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    if denom.abs() < 1e-300 {
        return times[i];
    }
    let offset = 0.5 * (y0 - y2) / denom;
    let h = 0.5 * (times[i + 1] - times[i - 1]);
    times[i] + offset.clamp(-1.0, 1.0) * h
}

pub fn oscillation_metrics_from_series(
    times: &[f64],
    p0: &[f64],
    options: MetricOptions,
) -> Result<OscillationMetrics> {
    if times.len() != p0.len() || times.len() < 3 {
        return Err(Error::Analysis("need at least three aligned samples".into()));
    }
    let mut running_min = p0[0];
    let mut revival = None;
    for i in 1..p0.len() - 1 {
        running_min = running_min.min(p0[i]);
        let is_peak = p0[i] >= p0[i - 1] && p0[i] > p0[i + 1];
        if is_peak && p0[i] - running_min >= options.prominence {
            revival = Some(i);
            break;
        }
    }
    let revival = revival.ok_or_else(|| {
        Error::Analysis("no revival of P_0 inside the trajectory; extend the time span".into())
    })?;
    let trough = (0..revival)
        .min_by(|&a, &b| p0[a].partial_cmp(&p0[b]).unwrap_or(std::cmp::Ordering::Equal))
        .expect("revival index is at least 1");

    let slope = |i: usize| -> f64 {
        let (lo, hi) = (i.saturating_sub(1), (i + 1).min(p0.len() - 1));
        (p0[hi] - p0[lo]) / (times[hi] - times[lo])
    };
    let flat = |i: usize| slope(i).abs() < options.flat_slope;
    let plateau_width = if flat(trough) {
        let mut lo = trough;
        while lo > 0 && flat(lo - 1) {
            lo -= 1;
        }
        let mut hi = trough;
        while hi + 1 < p0.len() && flat(hi + 1) {
            hi += 1;
        }
        times[hi] - times[lo]
    } else {
        0.0
    };

    Ok(OscillationMetrics {
        period: parabolic_vertex(times, p0, revival),
        half_period: parabolic_vertex(times, p0, trough),
        plateau_width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::scalar::C;
    use approx::assert_abs_diff_eq;

    fn free(eps: f64, gamma: f64, dim: usize) -> EffectiveParams {
        EffectiveParams {
            epsilon_d: eps,
            detuning: 0.0,
            lambda: 0.0,
            gamma_c: gamma,
            blocked: None,
            dim,
            loss: LossOperator::Blocked,
        }
    }

    #[test]
    fn zero_hamiltonian() {
        let mut p = EffectiveParams::operating_point(3);
        p.epsilon_d = 0.0;
        p.detuning = 0.0;
        p.lambda = 0.0;
        let h = build_hamiltonian::<f64>(&p).unwrap();
        assert_eq!(linalg::max_abs(&h), 0.0);
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        for n in 2..=5 {
            let h = build_hamiltonian::<f64>(&EffectiveParams::operating_point(n)).unwrap();
            assert_eq!(linalg::hermiticity_defect(&h), 0.0);
        }
    }

    #[test]
    fn kerr_sign_follows_hamiltonian_convention() {
        // −2πλ k(k−1) on the diagonal: λ < 0 pushes upper levels up.
        let mut p = free(0.0, 0.0, 12);
        p.lambda = -0.07;
        let h = build_hamiltonian::<f64>(&p).unwrap();
        assert_abs_diff_eq!(h[(3, 3)].re, 2.0 * std::f64::consts::PI * 0.07 * 6.0, epsilon = 1e-12);
    }

    #[test]
    fn parameter_validation() {
        let mut p = EffectiveParams::operating_point(3);
        p.epsilon_d = -1.0;
        assert!(matches!(p.validate(), Err(Error::Parameter { field: "epsilon_d", .. })));
        let mut p = EffectiveParams::operating_point(3);
        p.dim = 5;
        assert!(matches!(p.validate(), Err(Error::Parameter { field: "dim", .. })));
        let mut p = EffectiveParams::operating_point(3);
        p.blocked = Some(0);
        assert!(matches!(p.validate(), Err(Error::Parameter { field: "N", .. })));
        let mut p = EffectiveParams::operating_point(3);
        p.gamma_c = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn operating_point_values() {
        let p2 = EffectiveParams::operating_point(2);
        assert_eq!(p2.detuning, -0.4);
        assert_eq!(p2.dim, 12);
        let p5 = EffectiveParams::operating_point(5);
        assert_eq!(p5.detuning, -0.1);
        assert_eq!(p5.dim, 15);
        assert!((2.83..=3.05).contains(&p5.epsilon_d));
        assert_eq!(p5.lambda, -0.07);
    }

    #[test]
    fn undriven_vacuum_is_stationary() {
        let mut p = EffectiveParams::operating_point(3);
        p.epsilon_d = 0.0;
        let s = p.space().unwrap();
        let times = master::uniform_times::<f64>(1.0, 0.1).unwrap();
        let traj = evolve(&DensityMatrix::vacuum(s), &p, &times, &IntegratorSettings::default()).unwrap();
        for probs in &traj.observables {
            assert_abs_diff_eq!(probs[0], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn free_drive_displaces_vacuum() {
        let p = free(3.0, 0.0, 40);
        let s = p.space().unwrap();
        let times = master::uniform_times::<f64>(0.8, 0.1).unwrap();
        let traj = evolve(&DensityMatrix::vacuum(s), &p, &times, &IntegratorSettings::default()).unwrap();
        for (i, state) in &traj.states {
            let alpha = C::new(3.0 * traj.times[*i], 0.0);
            let target = fock::coherent_state(s, alpha).unwrap().to_density();
            let fid = linalg::trace_product(state.matrix(), target.matrix()).re;
            assert!(fid > 1.0 - 1e-6, "t = {}: fidelity {fid}", traj.times[*i]);
        }
    }

    #[test]
    fn coherent_decay() {
        let p = free(0.0, DEFAULT_GAMMA_C, 30);
        let s = p.space().unwrap();
        let alpha = C::new(1.5, 0.5);
        let rho0 = fock::coherent_state(s, alpha).unwrap().to_density();
        let times = master::uniform_times::<f64>(2.0, 0.25).unwrap();
        let traj = evolve(&rho0, &p, &times, &IntegratorSettings::default()).unwrap();
        let n0 = rho0.expect(&fock::number(s)).re;
        for (t, probs) in traj.times.iter().zip(&traj.observables) {
            let mean: f64 = probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
            assert_abs_diff_eq!(mean, n0 * (-DEFAULT_GAMMA_C * t).exp(), epsilon = 1e-5);
        }
    }

    #[test]
    fn photon_probabilities_of_coherent_state() {
        let s = FockSpace::new(30).unwrap();
        let alpha = C::new(0.9, -1.1);
        let probs = photon_probabilities(&fock::coherent_state(s, alpha).unwrap().to_density());
        let x: f64 = alpha.norm_sqr();
        let mut poisson = (-x).exp();
        for (k, p) in probs.iter().enumerate() {
            if k > 0 {
                poisson *= x / k as f64;
            }
            assert_abs_diff_eq!(*p, poisson, epsilon = 1e-6);
        }
        let vac = photon_probabilities(&DensityMatrix::<f64>::vacuum(s));
        assert_eq!(vac[0], 1.0);
        assert!(vac[1..].iter().all(|p| *p == 0.0));
    }

    #[test]
    fn blockade_confines_population() {
        let p = EffectiveParams::operating_point(3);
        let times = master::uniform_times::<f64>(1.5, 0.01).unwrap();
        let traj = evolve(&DensityMatrix::vacuum(p.space().unwrap()), &p, &times, &IntegratorSettings::default()).unwrap();
        for probs in &traj.observables {
            assert!(probs[3..].iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn synthetic_cosine_metrics() {
        let dt = 1e-3;
        let times: Vec<f64> = (0..=2000).map(|i| i as f64 * dt).collect();
        let p0: Vec<f64> = times.iter().map(|t| (3.0 * t).cos().powi(2)).collect();
        let m = oscillation_metrics_from_series(&times, &p0, MetricOptions::default()).unwrap();
        let pi = std::f64::consts::PI;
        assert_abs_diff_eq!(m.period, pi / 3.0, epsilon = dt);
        assert_abs_diff_eq!(m.half_period, pi / 6.0, epsilon = dt);
    }

    #[test]
    fn metrics_without_revival() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.01).collect();
        let p0: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
        assert!(matches!(
            oscillation_metrics_from_series(&times, &p0, MetricOptions::default()),
            Err(Error::Analysis(_))
        ));
    }

    #[test]
    fn n2_period_window() {
        let p = EffectiveParams::operating_point(2);
        let times = master::uniform_times::<f64>(2.0, 0.005).unwrap();
        let traj = evolve(&DensityMatrix::vacuum(p.space().unwrap()), &p, &times, &IntegratorSettings::default()).unwrap();
        let m = oscillation_metrics(&traj).unwrap();
        assert!((0.9..=1.2).contains(&m.period), "period {}", m.period);
        assert!((m.half_period - 0.51).abs() < 0.08, "half period {}", m.half_period);
    }
}
