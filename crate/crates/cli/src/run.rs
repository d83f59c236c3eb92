//! The five subcommands.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use zeno::dynamics::{self, EffectiveParams};
use zeno::fit::{self, FitProblem, Observation};
use zeno::joint;
use zeno::master::{self, IntegratorSettings};
use zeno::tomography::{self, FringeOptions};
use zeno::DensityMatrix;

use crate::config::{Format, Mode, Resolved};
use crate::output::{self, Table};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] zeno::Error),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Set when the run completed but a configured check did not hold.
    pub failure: Option<String>,
}

pub fn run(cfg: &Resolved) -> Result<Outcome, RunError> {
    match cfg.mode {
        Mode::Simulate => simulate(cfg),
        Mode::Wigner => wigner(cfg),
        Mode::ValidateJoint => validate_joint(cfg),
        Mode::Fit => run_fit(cfg),
        Mode::Scan => scan(cfg),
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Simulate => "simulate",
        Mode::Wigner => "wigner",
        Mode::ValidateJoint => "validate-joint",
        Mode::Fit => "fit",
        Mode::Scan => "scan",
    }
}

/// Integration grid: the requested times with `t = 0` prepended if needed.
/// Returns the grid and the offset of the first requested time in it.
fn with_origin(times: &[f64]) -> (Vec<f64>, usize) {
    if times[0] == 0.0 {
        (times.to_vec(), 0)
    } else {
        let mut grid = vec![0.0];
        grid.extend_from_slice(times);
        (grid, 1)
    }
}

fn emit(cfg: &Resolved, stem: &str, extra: &[(&str, Value)], table: Table, json_data: Value) -> Result<PathBuf, RunError> {
    let echo = cfg.echo();
    let name = format!("{stem}.{}", cfg.format.extension());
    let text = match cfg.format {
        Format::Csv => {
            let mut comments = vec![("mode", mode_name(cfg.mode).to_string()), ("config", output::compact(&echo))];
            for (k, v) in extra {
                comments.push((k, output::compact(v)));
            }
            output::csv_text(&comments, &table)
        }
        Format::Json => {
            let mut doc = serde_json::Map::new();
            doc.insert("mode".into(), json!(mode_name(cfg.mode)));
            doc.insert("config".into(), echo);
            for (k, v) in extra {
                doc.insert((*k).into(), v.clone());
            }
            doc.insert("data".into(), json_data);
            output::json_text(&Value::Object(doc))
        }
    };
    Ok(output::write(&cfg.out_dir, &name, &text)?)
}

fn table_json(table: &Table) -> Value {
    json!({ "columns": table.header, "rows": table.rows })
}

fn simulate(cfg: &Resolved) -> Result<Outcome, RunError> {
    let p = &cfg.effective;
    let (grid, skip) = with_origin(&cfg.times);
    let settings = IntegratorSettings {
        store_every: 0,
        ..cfg.integrator
    };
    let traj = dynamics::evolve(&DensityMatrix::vacuum(p.space()?), p, &grid, &settings)?;
    let mut header = vec!["t_us".to_string()];
    header.extend((0..p.dim).map(|k| format!("P_{k}")));
    let rows = grid
        .iter()
        .zip(&traj.observables)
        .skip(skip)
        .map(|(t, probs)| std::iter::once(*t).chain(probs.iter().copied()).collect())
        .collect();
    let table = Table { header, rows };
    let data = table_json(&table);
    let path = emit(cfg, "simulate", &[], table, data)?;
    Ok(Outcome {
        files: vec![path],
        failure: None,
    })
}

fn wigner(cfg: &Resolved) -> Result<Outcome, RunError> {
    let p = &cfg.effective;
    let (grid, skip) = with_origin(&cfg.times);
    let settings = IntegratorSettings {
        store_every: 1,
        ..cfg.integrator
    };
    let traj = dynamics::evolve(&DensityMatrix::vacuum(p.space()?), p, &grid, &settings)?;
    let barrier = p.blocked.map(|n| (n as f64).sqrt());
    let mut files = Vec::new();
    for (i, (idx, rho)) in traj.states.iter().filter(|(idx, _)| *idx >= skip).enumerate() {
        let t = grid[*idx];
        let map = tomography::wigner_map(rho, &cfg.wigner.grid, cfg.wigner.convention)?;
        let fringes = tomography::fringe_count(&map, FringeOptions::default()).ok();
        let extra = [
            ("t_us", json!(t)),
            ("barrier_radius", json!(barrier)),
            ("min_w", json!(map.min())),
            ("max_w", json!(map.max())),
            ("fringe_count", json!(fringes)),
        ];
        let mut rows = Vec::with_capacity(map.re_grid.len() * map.im_grid.len());
        for (a, im) in map.im_grid.iter().enumerate() {
            for (b, re) in map.re_grid.iter().enumerate() {
                rows.push(vec![*re, *im, map.values[a][b]]);
            }
        }
        let table = Table {
            header: vec!["re".into(), "im".into(), "w".into()],
            rows,
        };
        let data = serde_json::to_value(&map).expect("maps serialize");
        files.push(emit(cfg, &format!("wigner_{i:03}"), &extra, table, data)?);
    }
    Ok(Outcome { files, failure: None })
}

fn validate_joint(cfg: &Resolved) -> Result<Outcome, RunError> {
    let (grid, _) = with_origin(&cfg.times);
    let cmp = joint::compare_with_effective(&cfg.joint, &grid, &cfg.integrator)?;
    let threshold = cfg.validate.leakage_threshold;
    let passed = cmp.max_leakage <= threshold;
    let report = json!({
        "max_discrepancy": cmp.max_discrepancy,
        "max_leakage": cmp.max_leakage,
        "max_qubit_excitation": cmp.max_qubit_excitation,
        "leakage_threshold": threshold,
        "passed": passed,
    });
    let table = Table {
        header: vec![
            "max_discrepancy".into(),
            "max_leakage".into(),
            "max_qubit_excitation".into(),
            "leakage_threshold".into(),
            "passed".into(),
        ],
        rows: vec![vec![
            cmp.max_discrepancy,
            cmp.max_leakage,
            cmp.max_qubit_excitation,
            threshold,
            if passed { 1.0 } else { 0.0 },
        ]],
    };
    let path = emit(cfg, "validate_joint", &[], table, report)?;
    let failure = (!passed).then(|| {
        format!(
            "P_{} reaches {:.4}, above the leakage threshold {threshold}",
            cfg.joint.blocked, cmp.max_leakage
        )
    });
    Ok(Outcome {
        files: vec![path],
        failure,
    })
}

/// One oscillation period of `P_0`, or 2 µs if none is found within 4 µs.
fn period_of(p: &EffectiveParams, settings: &IntegratorSettings) -> Result<f64, RunError> {
    let times = master::uniform_times::<f64>(4.0, 0.01)?;
    let settings = IntegratorSettings {
        store_every: 0,
        ..*settings
    };
    let traj = dynamics::evolve(&DensityMatrix::vacuum(p.space()?), p, &times, &settings)?;
    Ok(dynamics::oscillation_metrics(&traj).map(|m| m.period).unwrap_or(2.0))
}

fn observations_csv(obs: &[Observation]) -> String {
    let mut s = String::from("t_us,k,p,weight\n");
    for o in obs {
        s.push_str(&format!("{},{},{},{}\n", o.t_us, o.k, o.p, o.weight));
    }
    s
}

fn run_fit(cfg: &Resolved) -> Result<Outcome, RunError> {
    let fc = &cfg.fit;
    let guess = fc.guess.clone().expect("resolution fills the guess");
    let (observations, raw, source) = match &fc.observations {
        Some(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| RunError::Input(format!("observations file {}: {e}", path.display())))?;
            let obs = fit::read_observations(bytes.as_slice()).map_err(|e| match e {
                zeno::Error::Input { line, reason, .. } => {
                    RunError::Input(format!("observations file {} line {line}: {reason}", path.display()))
                }
                other => RunError::Input(format!("observations file {}: {other}", path.display())),
            })?;
            (obs, bytes, json!(path.display().to_string()))
        }
        None => {
            let p = &cfg.effective;
            let n = p.blocked.unwrap_or(cfg.blocked);
            let window = match fc.window_us {
                Some(w) => w,
                None => period_of(p, &cfg.integrator)?,
            };
            let times = master::uniform_times::<f64>(window, fc.sample_dt)?;
            let levels: Vec<usize> = (0..=n.min(p.dim - 1)).collect();
            let mut obs = fit::synthetic_observations(p, &times, &levels, &cfg.integrator, fc.output_step)?;
            if let Some(seed) = cfg.seed {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let noise = Normal::new(0.0, fc.noise_sigma).map_err(|e| RunError::Input(format!("fit.noise_sigma: {e}")))?;
                for o in &mut obs {
                    o.p += noise.sample(&mut rng);
                }
            }
            let text = observations_csv(&obs);
            (obs, text.into_bytes(), json!("synthetic"))
        }
    };
    let digest: String = Sha256::digest(&raw).iter().map(|b| format!("{b:02x}")).collect();

    let mut problem = FitProblem::new(observations, cfg.effective.clone(), fc.free.clone());
    problem.settings = cfg.integrator;
    problem.output_step = fc.output_step;
    problem.optimizer = fc.optimizer;
    problem.validate().map_err(|e| RunError::Input(e.to_string()))?;
    let result = fit::fit_parameters(&problem, &guess)?;

    let doc = json!({
        "mode": "fit",
        "config": cfg.echo(),
        "observations": {
            "source": source,
            "count": problem.observations.len(),
            "sha256": digest,
        },
        "result": serde_json::to_value(&result).expect("fit results serialize"),
    });
    let path = output::write(&cfg.out_dir, "fit_result.json", &output::json_text(&doc))?;
    let failure = (!result.converged).then(|| format!("no convergence after {} iterations", result.iterations));
    Ok(Outcome {
        files: vec![path],
        failure,
    })
}

fn scan(cfg: &Resolved) -> Result<Outcome, RunError> {
    let sc = &cfg.scan;
    let times = master::uniform_times::<f64>(sc.t_max, sc.dt)?;
    let settings = IntegratorSettings {
        store_every: 0,
        ..cfg.integrator
    };
    let mut rows = Vec::new();
    for &n in &sc.n_values {
        // the configured parameters, with the blockade and detuning moved to n
        let defaults = EffectiveParams::operating_point(n);
        let p = EffectiveParams {
            blocked: Some(n),
            detuning: defaults.detuning,
            dim: cfg.effective.dim.max(defaults.dim),
            ..cfg.effective.clone()
        };
        let traj = dynamics::evolve(&DensityMatrix::vacuum(p.space()?), &p, &times, &settings)?;
        let m = dynamics::oscillation_metrics(&traj)?;
        let leak = traj
            .observables
            .iter()
            .map(|probs| probs[n..].iter().sum::<f64>())
            .fold(0.0, f64::max);
        rows.push(vec![n as f64, m.period, m.half_period, m.plateau_width, leak]);
    }
    let table = Table {
        header: vec![
            "N".into(),
            "period_us".into(),
            "half_period_us".into(),
            "plateau_us".into(),
            "max_blocked_population".into(),
        ],
        rows,
    };
    let data = table_json(&table);
    let path = emit(cfg, "scan", &[], table, data)?;
    Ok(Outcome {
        files: vec![path],
        failure: None,
    })
}
