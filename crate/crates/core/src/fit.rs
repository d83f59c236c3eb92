//! Least-squares recovery of drive, detuning and Kerr coefficient from
//! photon-number traces, with a bounded Nelder–Mead simplex.

use std::collections::BTreeMap;
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, EffectiveParams};
use crate::error::{Error, Result};
use crate::fock::DensityMatrix;
use crate::master::{self, IntegratorSettings};

/// One measured probability `P_k(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t_us: f64,
    pub k: usize,
    pub p: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitParameter {
    EpsilonD,
    Detuning,
    Lambda,
}

impl FitParameter {
    pub fn name(self) -> &'static str {
        match self {
            FitParameter::EpsilonD => "epsilon_d",
            FitParameter::Detuning => "detuning",
            FitParameter::Lambda => "lambda",
        }
    }

    pub fn get(self, p: &EffectiveParams) -> f64 {
        match self {
            FitParameter::EpsilonD => p.epsilon_d,
            FitParameter::Detuning => p.detuning,
            FitParameter::Lambda => p.lambda,
        }
    }

    pub fn set(self, p: &mut EffectiveParams, v: f64) {
        match self {
            FitParameter::EpsilonD => p.epsilon_d = v,
            FitParameter::Detuning => p.detuning = v,
            FitParameter::Lambda => p.lambda = v,
        }
    }
}

/// A free parameter and its box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeParameter {
    pub param: FitParameter,
    pub lower: f64,
    pub upper: f64,
}

impl FreeParameter {
    pub fn new(param: FitParameter, lower: f64, upper: f64) -> Self {
        Self { param, lower, upper }
    }

    fn width(&self) -> f64 {
        self.upper - self.lower
    }

    fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Simplex controls. Distances are in scaled units, i.e. fractions of each
/// bound width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMead {
    pub max_iterations: usize,
    pub diameter_tol: f64,
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            diameter_tol: 1e-4,
            initial_step: 0.02,
        }
    }
}

fn default_output_step() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProblem {
    pub observations: Vec<Observation>,
    /// Values of every model parameter; the free ones are overwritten by the
    /// optimizer.
    pub base: EffectiveParams,
    pub free: Vec<FreeParameter>,
    #[serde(default)]
    pub settings: IntegratorSettings,
    /// Spacing of the simulated output grid the model is interpolated on, µs.
    #[serde(default = "default_output_step")]
    pub output_step: f64,
    #[serde(default)]
    pub optimizer: NelderMead,
}

impl FitProblem {
    pub fn new(observations: Vec<Observation>, base: EffectiveParams, free: Vec<FreeParameter>) -> Self {
        Self {
            observations,
            base,
            free,
            settings: IntegratorSettings::default(),
            output_step: default_output_step(),
            optimizer: NelderMead::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.settings.validate()?;
        if self.free.is_empty() {
            return Err(Error::param("free", "at least one free parameter is required"));
        }
        for (i, f) in self.free.iter().enumerate() {
            if !(f.lower.is_finite() && f.upper.is_finite() && f.lower < f.upper) {
                return Err(Error::param("free", format!("{}: bounds must be finite with lower < upper", f.param.name())));
            }
            if self.free[..i].iter().any(|g| g.param == f.param) {
                return Err(Error::param("free", format!("{} listed twice", f.param.name())));
            }
            if f.param == FitParameter::EpsilonD && f.lower < 0.0 {
                return Err(Error::param("free", "epsilon_d lower bound must be non-negative"));
            }
        }
        if self.observations.is_empty() {
            return Err(Error::param("observations", "no observations"));
        }
        if !(self.output_step > 0.0 && self.output_step.is_finite()) {
            return Err(Error::param("output_step", "must be positive"));
        }
        for (i, o) in self.observations.iter().enumerate() {
            if !(o.t_us >= 0.0 && o.t_us.is_finite()) {
                return Err(Error::param("observations", format!("#{i}: time must be finite and non-negative")));
            }
            if o.k >= self.base.dim {
                return Err(Error::param("observations", format!("#{i}: level {} outside dim {}", o.k, self.base.dim)));
            }
            if !o.p.is_finite() || !(o.weight >= 0.0 && o.weight.is_finite()) {
                return Err(Error::param("observations", format!("#{i}: p must be finite and weight non-negative")));
            }
        }
        Ok(())
    }

    /// Current free values in `self.base`.
    pub fn initial_guess(&self) -> Vec<f64> {
        self.free.iter().map(|f| f.param.get(&self.base)).collect()
    }

    /// Model parameters with `theta` substituted for the free ones.
    pub fn params_at(&self, theta: &[f64]) -> EffectiveParams {
        let mut p = self.base.clone();
        for (f, v) in self.free.iter().zip(theta) {
            f.param.set(&mut p, *v);
        }
        p
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.free.len() {
            return Err(Error::param("theta", format!("expected {} values, got {}", self.free.len(), theta.len())));
        }
        for (f, v) in self.free.iter().zip(theta) {
            if !f.contains(*v) {
                return Err(Error::param(
                    f.param.name(),
                    format!("{v} outside bounds [{}, {}]", f.lower, f.upper),
                ));
            }
        }
        Ok(())
    }

    fn output_grid(&self) -> Vec<f64> {
        let t_max = self.observations.iter().map(|o| o.t_us).fold(0.0, f64::max);
        let n = (t_max / self.output_step - 1e-9).ceil().max(1.0) as usize;
        (0..=n).map(|i| i as f64 * self.output_step).collect()
    }
}

/// Simulated `P_k` at the observation points, linearly interpolated on the
/// uniform output grid.
pub fn model_probabilities(problem: &FitProblem, theta: &[f64]) -> Result<Vec<f64>> {
    problem.check_theta(theta)?;
    let params = problem.params_at(theta);
    let grid = problem.output_grid();
    let settings = IntegratorSettings {
        store_every: 0,
        ..problem.settings
    };
    let rho0 = DensityMatrix::<f64>::vacuum(params.space()?);
    let traj = dynamics::evolve(&rho0, &params, &grid, &settings)?;
    let step = problem.output_step;
    Ok(problem
        .observations
        .iter()
        .map(|o| {
            let pos = o.t_us / step;
            let i = (pos.floor() as usize).min(grid.len() - 2);
            let frac = pos - i as f64;
            let (a, b) = (traj.observables[i][o.k], traj.observables[i + 1][o.k]);
            if frac == 0.0 {
                a
            } else {
                a + (b - a) * frac
            }
        })
        .collect())
}

/// `weight · (model − observed)` per observation.
pub fn residuals(problem: &FitProblem, theta: &[f64]) -> Result<Vec<f64>> {
    let model = model_probabilities(problem, theta)?;
    Ok(problem
        .observations
        .iter()
        .zip(model)
        .map(|(o, m)| o.weight * (m - o.p))
        .collect())
}

pub fn residual_ss(problem: &FitProblem, theta: &[f64]) -> Result<f64> {
    Ok(residuals(problem, theta)?.iter().map(|r| r * r).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub values: BTreeMap<FitParameter, f64>,
    pub params: EffectiveParams,
    pub residual_ss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best residual sum of squares after each iteration.
    pub history: Vec<f64>,
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Scaler<'a> {
    free: &'a [FreeParameter],
}

impl Scaler<'_> {
    fn to_unit(&self, theta: &[f64]) -> Vec<f64> {
        self.free.iter().zip(theta).map(|(f, v)| (v - f.lower) / f.width()).collect()
    }

    fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.free
            .iter()
            .zip(u)
            .map(|(f, x)| (f.lower + x.clamp(0.0, 1.0) * f.width()).clamp(f.lower, f.upper))
            .collect()
    }
}

fn project(u: &mut [f64]) {
    for x in u {
        *x = x.clamp(0.0, 1.0);
    }
}

fn diameter(simplex: &[(Vec<f64>, f64)]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, (a, _)) in simplex.iter().enumerate() {
        for (b, _) in &simplex[i + 1..] {
            let dist = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            d = d.max(dist);
        }
    }
    d
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// Minimizes the weighted residual sum of squares starting from `guess`.
///
/// Parameters are rescaled to the unit box; trial points leaving it are
/// projected back. Stops when the simplex diameter falls below
/// `optimizer.diameter_tol` or after `optimizer.max_iterations`.
pub fn fit_parameters(problem: &FitProblem, guess: &[f64]) -> Result<FitResult> {
    problem.validate()?;
    problem.check_theta(guess)?;
    let opts = problem.optimizer;
    let scaler = Scaler { free: &problem.free };
    let evals = std::sync::atomic::AtomicUsize::new(0);
    let cost = |u: &[f64]| -> Result<f64> {
        evals.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        residual_ss(problem, &scaler.from_unit(u))
    };
    let cost_many = |pts: Vec<Vec<f64>>| -> Result<Vec<(Vec<f64>, f64)>> {
        pts.into_par_iter()
            .map(|u| cost(&u).map(|f| (u, f)))
            .collect()
    };

    let n = problem.free.len();
    let x0 = scaler.to_unit(guess);
    let mut starts = vec![x0.clone()];
    for i in 0..n {
        let mut v = x0.clone();
        // step away from the nearer wall
        v[i] += if v[i] + opts.initial_step <= 1.0 { opts.initial_step } else { -opts.initial_step };
        starts.push(v);
    }
    let mut simplex = cost_many(starts)?;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if diameter(&simplex) < opts.diameter_tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;

        let worst = simplex[n].clone();
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
            .collect();
        let point = |t: f64| {
            let mut p = lerp(&centroid, &worst.0, -t);
            project(&mut p);
            p
        };

        let reflected = point(1.0);
        let fr = cost(&reflected)?;
        if fr < simplex[0].1 {
            let expanded = point(2.0);
            let fe = cost(&expanded)?;
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < worst.1 {
                let p = point(0.5);
                let f = cost(&p)?;
                (p, f)
            } else {
                let p = point(-0.5);
                let f = cost(&p)?;
                (p, f)
            };
            if fc < fr.min(worst.1) {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                let shrunk: Vec<Vec<f64>> = simplex[1..].iter().map(|(v, _)| lerp(&best, v, 0.5)).collect();
                let evaluated = cost_many(shrunk)?;
                for (slot, e) in simplex[1..].iter_mut().zip(evaluated) {
                    *slot = e;
                }
            }
        }
        let best = simplex.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        history.push(best);
    }

    let (best_u, best_f) = simplex[0].clone();
    let theta = scaler.from_unit(&best_u);
    let values = problem.free.iter().zip(&theta).map(|(f, v)| (f.param, *v)).collect();
    if !converged {
        log::warn!("fit stopped after {iterations} iterations without reaching the diameter tolerance");
    }
    Ok(FitResult {
        values,
        params: problem.params_at(&theta),
        residual_ss: best_f,
        iterations,
        evaluations: evals.into_inner(),
        converged,
        history,
    })
}

/// Noise-free observations of `P_k` for each `k` in `levels` at each time,
/// weight 1, simulated on the grid `0, output_step, …`.
pub fn synthetic_observations(
    params: &EffectiveParams,
    times: &[f64],
    levels: &[usize],
    settings: &IntegratorSettings,
    output_step: f64,
) -> Result<Vec<Observation>> {
    let placeholder: Vec<Observation> = times
        .iter()
        .flat_map(|&t| levels.iter().map(move |&k| Observation { t_us: t, k, p: 0.0, weight: 1.0 }))
        .collect();
    let mut problem = FitProblem::new(
        placeholder,
        params.clone(),
        vec![FreeParameter::new(FitParameter::EpsilonD, 0.0, params.epsilon_d.max(1.0) * 2.0)],
    );
    problem.settings = *settings;
    problem.output_step = output_step;
    problem.validate()?;
    let model = model_probabilities(&problem, &problem.initial_guess())?;
    let mut obs = problem.observations;
    for (o, m) in obs.iter_mut().zip(model) {
        o.p = m;
    }
    Ok(obs)
}

/// Reads `t_us,k,p,weight` rows. A missing `weight` column means weight 1.
pub fn read_observations<R: Read>(input: R) -> Result<Vec<Observation>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ti), Some(ki), Some(pi)) = (col("t_us"), col("k"), col("p")) else {
        return Err(Error::Input {
            context: "observations".into(),
            line: 1,
            reason: "header must name t_us, k, p and optionally weight".into(),
        });
    };
    let wi = col("weight");
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, what: &str| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::Input {
                context: "observations".into(),
                line,
                reason: format!("missing {what}"),
            })
        };
        let bad = |what: &str, raw: &str| Error::Input {
            context: "observations".into(),
            line,
            reason: format!("{what}: cannot parse `{raw}`"),
        };
        let raw_t = field(ti, "t_us")?;
        let raw_k = field(ki, "k")?;
        let raw_p = field(pi, "p")?;
        let t_us: f64 = raw_t.parse().map_err(|_| bad("t_us", raw_t))?;
        let k: usize = raw_k.parse().map_err(|_| bad("k", raw_k))?;
        let p: f64 = raw_p.parse().map_err(|_| bad("p", raw_p))?;
        let weight: f64 = match wi {
            Some(i) => {
                let raw = field(i, "weight")?;
                raw.parse().map_err(|_| bad("weight", raw))?
            }
            None => 1.0,
        };
        if !(t_us >= 0.0 && t_us.is_finite() && p.is_finite() && weight >= 0.0 && weight.is_finite()) {
            return Err(Error::Input {
                context: "observations".into(),
                line,
                reason: "need t_us >= 0, finite p and weight >= 0".into(),
            });
        }
        out.push(Observation { t_us, k, p, weight });
    }
    if out.is_empty() {
        return Err(Error::Input {
            context: "observations".into(),
            line: 1,
            reason: "no data rows".into(),
        });
    }
    Ok(out)
}

/// Uniform times `0, dt, …` up to `t_max` inclusive.
pub fn observation_times(t_max: f64, dt: f64) -> Result<Vec<f64>> {
    master::uniform_times::<f64>(t_max, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quick_problem(truth: &EffectiveParams) -> FitProblem {
        let settings = IntegratorSettings::default().with_step(2e-3);
        let times = observation_times(1.2, 0.05).unwrap();
        let obs = synthetic_observations(truth, &times, &[0, 1, 2, 3], &settings, 0.01).unwrap();
        let mut problem = FitProblem::new(
            obs,
            truth.clone(),
            vec![
                FreeParameter::new(FitParameter::EpsilonD, 2.0, 4.0),
                FreeParameter::new(FitParameter::Detuning, -0.5, 0.3),
                FreeParameter::new(FitParameter::Lambda, -0.3, 0.1),
            ],
        );
        problem.settings = settings;
        problem
    }

    #[test]
    fn self_consistent_residuals_vanish() {
        let truth = EffectiveParams::operating_point(3);
        let p = quick_problem(&truth);
        let r = residuals(&p, &p.initial_guess()).unwrap();
        assert_eq!(r.len(), 25 * 4);
        assert!(r.iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn vacuum_observation_fits_any_theta() {
        let base = EffectiveParams::operating_point(3);
        let mut p = quick_problem(&base);
        p.observations = vec![Observation { t_us: 0.0, k: 0, p: 1.0, weight: 1.0 }];
        for theta in [[2.0, -0.5, -0.3], [3.7, 0.2, 0.05], [2.5, 0.0, 0.0]] {
            assert_abs_diff_eq!(residuals(&p, &theta).unwrap()[0], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn off_grid_times_interpolate() {
        let truth = EffectiveParams::operating_point(2);
        let mut p = quick_problem(&truth);
        p.observations = vec![Observation { t_us: 0.005, k: 0, p: 0.0, weight: 1.0 }];
        let m = model_probabilities(&p, &p.initial_guess()).unwrap()[0];
        let settings = p.settings;
        let grid = [0.0, 0.01];
        let traj = dynamics::evolve(&DensityMatrix::vacuum(truth.space().unwrap()), &truth, &grid, &settings).unwrap();
        assert_abs_diff_eq!(m, 0.5 * (traj.observables[0][0] + traj.observables[1][0]), epsilon = 1e-15);
    }

    #[test]
    fn epsilon_perturbation_is_identifiable() {
        let truth = EffectiveParams::operating_point(3);
        let p = quick_problem(&truth);
        let base = residual_ss(&p, &p.initial_guess()).unwrap();
        let mut theta = p.initial_guess();
        theta[0] *= 1.01;
        assert!(residual_ss(&p, &theta).unwrap() > base + 1e-6);
    }

    #[test]
    fn bounds_and_shape_checked() {
        let truth = EffectiveParams::operating_point(3);
        let p = quick_problem(&truth);
        assert!(residuals(&p, &[5.0, 0.0, 0.0]).is_err());
        assert!(residuals(&p, &[3.0, 0.0]).is_err());
        assert!(fit_parameters(&p, &[1.0, 0.0, 0.0]).is_err());
        let mut q = p.clone();
        q.free.clear();
        assert!(q.validate().is_err());
        let mut q = p.clone();
        q.free[1].upper = f64::INFINITY;
        assert!(q.validate().is_err());
    }

    #[test]
    fn fixed_point_stays_put() {
        let truth = EffectiveParams::operating_point(3);
        let p = quick_problem(&truth);
        let start = p.initial_guess();
        let before = residual_ss(&p, &start).unwrap();
        let fit = fit_parameters(&p, &start).unwrap();
        assert!(fit.converged);
        assert!(fit.iterations <= 50, "{}", fit.iterations);
        assert!((fit.residual_ss - before).abs() < 1e-10);
        for w in fit.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn csv_ingest() {
        let text = "t_us,k,p,weight\n0.0,0,1.0,1\n# comment\n0.5, 1 ,0.25,2.0\n";
        let obs = read_observations(text.as_bytes()).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[1], Observation { t_us: 0.5, k: 1, p: 0.25, weight: 2.0 });

        let no_weight = read_observations("t_us,k,p\n0.1,2,0.3\n".as_bytes()).unwrap();
        assert_eq!(no_weight[0].weight, 1.0);

        let err = read_observations("t_us,k,p,weight\n0.0,0,1.0,1\n0.1,x,0.2,1\n".as_bytes()).unwrap_err();
        match err {
            Error::Input { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
        assert!(read_observations("t_us,k,p,weight\n".as_bytes()).is_err());
        assert!(read_observations("a,b\n1,2\n".as_bytes()).is_err());
        assert!(read_observations("t_us,k,p\n-1,0,0.5\n".as_bytes()).is_err());
    }

    #[test]
    fn result_json_has_stable_keys() {
        let mut values = BTreeMap::new();
        values.insert(FitParameter::Lambda, -0.07);
        values.insert(FitParameter::EpsilonD, 3.0);
        let r = FitResult {
            values,
            params: EffectiveParams::operating_point(3),
            residual_ss: 0.0,
            iterations: 1,
            evaluations: 4,
            converged: true,
            history: vec![0.0],
        };
        let json = r.to_json().unwrap();
        assert!(json.find("epsilon_d").unwrap() < json.find("\"lambda\"").unwrap());
        let back: FitResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
