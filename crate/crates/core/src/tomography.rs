//! Wigner function as displaced parity, the Ramsey parity-mapping protocol,
//! and fringe analysis of two-lobe (cat-like) states.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, DensityMatrix, FockSpace};
use crate::joint::{self, qubit};
use crate::linalg::{self, Operator};
use crate::master::{self, Collapse, IntegratorSettings, Liouvillian};
use crate::scalar::{cr, two_pi, Real, C};

/// Scaling of the reported Wigner values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Displaced parity; the vacuum peaks at 1.
    #[default]
    Parity,
    /// Quasi-probability density: parity values times `2/π`.
    Normalized,
}

impl Convention {
    fn scale<T: Real>(self) -> T {
        match self {
            Convention::Parity => T::one(),
            Convention::Normalized => T::lit(2.0) / T::PI(),
        }
    }
}

/// Axis sampling `min, min + step, …, max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Axis {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        let axis = Self { min, max, step };
        axis.validate()?;
        Ok(axis)
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.min.is_finite() || !self.max.is_finite() || self.max < self.min {
            return Err(Error::param(
                "grid",
                format!("need min <= max and step > 0, got {}:{}:{}", self.min, self.max, self.step),
            ));
        }
        Ok(())
    }

    /// Parses `min:max:step`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::param("grid", format!("expected min:max:step, got `{spec}`")));
        }
        let mut vals = [0.0; 3];
        for (v, p) in vals.iter_mut().zip(&parts) {
            *v = p
                .trim()
                .parse()
                .map_err(|_| Error::param("grid", format!("`{p}` is not a number")))?;
        }
        Self::new(vals[0], vals[1], vals[2])
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.min + i as f64 * self.step).collect()
    }
}

/// Sample points in the complex `α` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub re: Axis,
    pub im: Axis,
}

impl GridSpec {
    pub fn square(axis: Axis) -> Self {
        Self { re: axis, im: axis }
    }
}

impl Default for GridSpec {
    /// `[−3, 3]²` at step 0.05.
    fn default() -> Self {
        Self::square(Axis {
            min: -3.0,
            max: 3.0,
            step: 0.05,
        })
    }
}

/// Wigner values on a rectangular grid; `values[i][j]` sits at
/// `α = re_grid[j] + i·im_grid[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerMap {
    pub re_grid: Vec<f64>,
    pub im_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub convention: Convention,
}

impl WignerMap {
    pub fn min(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max |W_self − W_other|`; grids must match.
    pub fn max_abs_diff(&self, other: &WignerMap) -> Result<f64> {
        if self.re_grid != other.re_grid || self.im_grid != other.im_grid {
            return Err(Error::param("map", "grids differ"));
        }
        Ok(self
            .values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
    }

    /// `Σ W ΔRe ΔIm`
    pub fn integral(&self) -> f64 {
        let step = |g: &[f64]| if g.len() > 1 { g[1] - g[0] } else { 0.0 };
        let area = step(&self.re_grid) * step(&self.im_grid);
        self.values.iter().flatten().sum::<f64>() * area
    }

    /// Bilinear interpolation; `None` outside the grid.
    pub fn sample(&self, re: f64, im: f64) -> Option<f64> {
        let locate = |g: &[f64], x: f64| -> Option<(usize, f64)> {
            let (first, last) = (*g.first()?, *g.last()?);
            if x < first || x > last || g.len() < 2 {
                return None;
            }
            let step = (last - first) / (g.len() - 1) as f64;
            let pos = ((x - first) / step).min((g.len() - 1) as f64);
            let i = (pos.floor() as usize).min(g.len() - 2);
            Some((i, pos - i as f64))
        };
        let (j, fx) = locate(&self.re_grid, re)?;
        let (i, fy) = locate(&self.im_grid, im)?;
        let v = &self.values;
        Some(
            v[i][j] * (1.0 - fx) * (1.0 - fy)
                + v[i][j + 1] * fx * (1.0 - fy)
                + v[i + 1][j] * (1.0 - fx) * fy
                + v[i + 1][j + 1] * fx * fy,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: WignerMap = serde_json::from_str(text)?;
        if map.values.len() != map.im_grid.len() || map.values.iter().any(|row| row.len() != map.re_grid.len()) {
            return Err(Error::param("values", "shape does not match the grids"));
        }
        Ok(map)
    }

    /// `re,im,w` rows, one per node, values at 12 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["re", "im", "w"])?;
        for (i, im) in self.im_grid.iter().enumerate() {
            for (j, re) in self.re_grid.iter().enumerate() {
                w.write_record([crate::io::sig12(*re), crate::io::sig12(*im), crate::io::sig12(self.values[i][j])])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `Tr[ρ D(2α) 𝒫]`, which equals `Tr[D(−α) ρ D(α) 𝒫]`. Uses the closed-form
/// displacement elements, so no truncation enters beyond that of `ρ` itself.
pub fn displaced_parity<T: Real>(rho: &DensityMatrix<T>, alpha: C<T>) -> C<T> {
    let dim = rho.dim();
    let space = FockSpace::new(dim.max(2)).expect("density matrices have at least two levels");
    let d = fock::displacement_elements(space, alpha * cr(T::lit(2.0)));
    let m = rho.matrix();
    let mut acc = C::new(T::zero(), T::zero());
    for n in 0..dim {
        let mut col = C::new(T::zero(), T::zero());
        for k in 0..dim {
            col += m[(n, k)] * d[(k, n)];
        }
        if n % 2 == 0 {
            acc += col;
        } else {
            acc -= col;
        }
    }
    acc
}

/// Parity-convention Wigner value at `α`.
pub fn wigner_point<T: Real>(rho: &DensityMatrix<T>, alpha: C<T>) -> T {
    displaced_parity(rho, alpha).re
}

pub fn wigner_point_with<T: Real>(rho: &DensityMatrix<T>, alpha: C<T>, convention: Convention) -> T {
    wigner_point(rho, alpha) * convention.scale::<T>()
}

/// Evaluates every grid node in parallel; the result does not depend on the
/// evaluation order.
pub fn wigner_map(rho: &DensityMatrix<f64>, grid: &GridSpec, convention: Convention) -> Result<WignerMap> {
    grid.re.validate()?;
    grid.im.validate()?;
    let re_grid = grid.re.points();
    let im_grid = grid.im.points();
    let values = im_grid
        .par_iter()
        .map(|&im| {
            re_grid
                .iter()
                .map(|&re| wigner_point_with(rho, C::new(re, im), convention))
                .collect()
        })
        .collect();
    Ok(WignerMap {
        re_grid,
        im_grid,
        values,
        convention,
    })
}

/// Result of one Ramsey parity sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamseyOutcome {
    pub p_excited: f64,
    /// `2 p_excited − 1`
    pub parity: f64,
}

/// `τ = 1/(2χ)`, µs, for `χ` in MHz.
pub fn parity_wait(chi: f64) -> f64 {
    1.0 / (2.0 * chi)
}

fn conjugate<T: Real>(u: &Operator<T>, rho: &Operator<T>) -> Operator<T> {
    u * rho * u.adjoint()
}

fn check_ramsey_args(rho: &DensityMatrix<f64>, chi: f64, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::param("tau", format!("must be positive, got {tau}")));
    }
    if !(chi > 0.0 && chi.is_finite()) {
        return Err(Error::param("chi", "must be positive"));
    }
    if rho.dim() % 2 != 0 {
        return Err(Error::param("rho", "joint state must have even dimension"));
    }
    Ok(rho.dim() / 2)
}

fn excited_population(rho: &Operator<f64>, dc: usize) -> f64 {
    (0..dc).map(|k| rho[(dc + k, dc + k)].re).sum()
}

/// Conditional phase `exp(i 2πχτ n ⊗ |e⟩⟨e|)`, diagonal.
fn conditional_phase(dc: usize, chi: f64, tau: f64) -> Operator<f64> {
    let mut u = linalg::identity::<f64>(2 * dc);
    for k in 0..dc {
        u[(dc + k, dc + k)] = C::from_polar(1.0, 2.0 * std::f64::consts::PI * chi * tau * k as f64);
    }
    u
}

/// π/2 pulse, conditional phase for `τ`, π/2 pulse. At `τ = 1/(2χ)` even
/// photon numbers end in `|e⟩` and odd ones in `|g⟩`, so
/// `parity = Re Tr[ρ_c e^{iπn}]` for an ideal qubit starting in `|g⟩`.
pub fn ramsey_parity(rho: &DensityMatrix<f64>, chi: f64, tau: f64) -> Result<RamseyOutcome> {
    let dc = check_ramsey_args(rho, chi, tau)?;
    let half_pi = joint::on_qubit(&qubit::rotation_y::<f64>(std::f64::consts::FRAC_PI_2), dc);
    let mut state = conjugate(&half_pi, rho.matrix());
    state = conjugate(&conditional_phase(dc, chi, tau), &state);
    state = conjugate(&half_pi, &state);
    let p = excited_population(&state, dc);
    Ok(RamseyOutcome {
        p_excited: p,
        parity: 2.0 * p - 1.0,
    })
}

/// As [`ramsey_parity`] but with qubit relaxation `γ_1` and decoherence `γ_2`
/// (µs⁻¹) acting during the free evolution. Pulses stay instantaneous.
pub fn ramsey_parity_with_decoherence(
    rho: &DensityMatrix<f64>,
    chi: f64,
    tau: f64,
    gamma_1: f64,
    gamma_2: f64,
) -> Result<RamseyOutcome> {
    let dc = check_ramsey_args(rho, chi, tau)?;
    if gamma_1 < 0.0 || gamma_2 < gamma_1 / 2.0 {
        return Err(Error::param("gamma_2", "need gamma_1 >= 0 and gamma_2 >= gamma_1 / 2"));
    }
    let space = FockSpace::new(dc)?;
    let half_pi = joint::on_qubit(&qubit::rotation_y::<f64>(std::f64::consts::FRAC_PI_2), dc);
    // exp(−iHτ) = exp(i 2πχτ n|e⟩⟨e|)
    let h = qubit::excited_projector::<f64>().kronecker(&fock::number::<f64>(space))
        * cr(-two_pi::<f64>() * chi);
    let collapse = [
        Collapse::new(gamma_1, joint::on_qubit(&qubit::sigma_minus::<f64>(), dc)),
        Collapse::new(
            2.0 * (gamma_2 - gamma_1 / 2.0),
            joint::on_qubit(&qubit::excited_projector::<f64>(), dc),
        ),
    ];
    let l = Liouvillian::new(&h, &collapse)?;
    let start = DensityMatrix::from_matrix_unchecked(conjugate(&half_pi, rho.matrix()));
    let settings = IntegratorSettings {
        step: tau / 200.0,
        store_every: 1,
        ..IntegratorSettings::default()
    };
    let traj = master::propagate(&start, &l, &[0.0, tau], &settings, |_| Vec::new())?;
    let free = traj.final_state().expect("final state is stored").matrix();
    let end = conjugate(&half_pi, free);
    let p = excited_population(&end, dc);
    Ok(RamseyOutcome {
        p_excited: p,
        parity: 2.0 * p - 1.0,
    })
}

/// Cavity levels needed so that displacing a state supported on `dim` levels
/// by `α` loses no appreciable weight.
pub fn padded_dim(dim: usize, alpha: f64) -> usize {
    let reach = ((dim.saturating_sub(1)) as f64).sqrt() + alpha.abs();
    (reach * reach + 8.0 * reach + 10.0).ceil() as usize
}

/// The measured Wigner value: displace the cavity by `−α`, attach a qubit in
/// `|g⟩`, run [`ramsey_parity`], report the parity estimate.
pub fn displaced_ramsey_wigner(rho_cavity: &DensityMatrix<f64>, alpha: C<f64>, chi: f64, tau: f64) -> Result<f64> {
    let big = padded_dim(rho_cavity.dim(), alpha.norm()).max(rho_cavity.dim());
    let space = FockSpace::new(big)?;
    let d = fock::displacement(space, -alpha);
    let displaced = conjugate(&d, &linalg::embed(rho_cavity.matrix(), big));
    let joint_state = joint::with_ground_qubit(&DensityMatrix::from_matrix_unchecked(displaced));
    Ok(ramsey_parity(&joint_state, chi, tau)?.parity)
}

/// Thresholds for [`fringe_count`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeOptions {
    /// Local maxima above this count as lobes.
    pub lobe_threshold: f64,
    /// Values below this count as a negative fringe.
    pub fringe_threshold: f64,
}

impl Default for FringeOptions {
    fn default() -> Self {
        Self {
            lobe_threshold: 0.1,
            fringe_threshold: -0.01,
        }
    }
}

/// Local maxima of the map above `threshold`, as `(re, im, value)`.
pub fn lobes(map: &WignerMap, threshold: f64) -> Vec<(f64, f64, f64)> {
    let v = &map.values;
    let (rows, cols) = (map.im_grid.len(), map.re_grid.len());
    let mut peaks: Vec<(f64, f64, f64)> = Vec::new();
    for i in 1..rows.saturating_sub(1) {
        for j in 1..cols.saturating_sub(1) {
            let x = v[i][j];
            if x <= threshold {
                continue;
            }
            let is_peak = (i - 1..=i + 1).all(|a| (j - 1..=j + 1).all(|b| v[a][b] <= x));
            if !is_peak {
                continue;
            }
            let (re, im) = (map.re_grid[j], map.im_grid[i]);
            // Flat-topped peaks produce adjacent duplicates.
            let step = (map.re_grid[1] - map.re_grid[0]).max(map.im_grid[1] - map.im_grid[0]);
            if peaks
                .iter()
                .any(|(r, m, _)| (r - re).abs() <= 1.5 * step && (m - im).abs() <= 1.5 * step)
            {
                continue;
            }
            peaks.push((re, im, x));
        }
    }
    peaks
}

/// Number of negative fringes between the two outermost lobes.
///
/// Takes the pair of lobes (local maxima above `lobe_threshold`) that lie
/// farthest apart, samples the map along the perpendicular bisector of the
/// segment joining them, and counts maximal runs below `fringe_threshold`.
pub fn fringe_count(map: &WignerMap, options: FringeOptions) -> Result<usize> {
    let peaks = lobes(map, options.lobe_threshold);
    if peaks.len() < 2 {
        return Err(Error::Analysis(format!(
            "need two lobes above {}, found {}",
            options.lobe_threshold,
            peaks.len()
        )));
    }
    let mut best = (0, 1);
    let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for a in 0..peaks.len() {
        for b in a + 1..peaks.len() {
            let dist = (peaks[a].0 - peaks[b].0).hypot(peaks[a].1 - peaks[b].1);
            let key = (dist, peaks[a].2 + peaks[b].2);
            if key > best_key {
                best_key = key;
                best = (a, b);
            }
        }
    }
    let (p, q) = (peaks[best.0], peaks[best.1]);
    let (mx, my) = ((p.0 + q.0) / 2.0, (p.1 + q.1) / 2.0);
    let len = (q.0 - p.0).hypot(q.1 - p.1);
    let (ux, uy) = (-(q.1 - p.1) / len, (q.0 - p.0) / len);

    let step = (map.re_grid[1] - map.re_grid[0]).min(map.im_grid[1] - map.im_grid[0]) / 2.0;
    let span = (map.re_grid[map.re_grid.len() - 1] - map.re_grid[0])
        .hypot(map.im_grid[map.im_grid.len() - 1] - map.im_grid[0]);
    let n = (span / step).ceil() as i64;
    let mut runs = 0;
    let mut inside_run = false;
    for s in -n..=n {
        let t = s as f64 * step;
        match map.sample(mx + t * ux, my + t * uy) {
            Some(w) if w < options.fringe_threshold => {
                if !inside_run {
                    runs += 1;
                }
                inside_run = true;
            }
            _ => inside_run = false,
        }
    }
    Ok(runs)
}

/// Even cat `(|β⟩ + |−β⟩)/norm` built from coherent states.
pub fn even_cat(space: FockSpace, beta: C<f64>) -> Result<DensityMatrix<f64>> {
    let plus = fock::coherent_state(space, beta)?;
    let minus = fock::coherent_state(space, -beta)?;
    let sum = plus.amplitudes() + minus.amplitudes();
    Ok(fock::StateVector::normalized(sum)?.to_density())
}
