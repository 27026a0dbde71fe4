//! Experiment runner for the benchmark plants: configuration, trajectory CSV
//! export and domain-of-attraction maps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use iscd_mpc::controller::ControllerError;
use iscd_mpc::plants::{Benchmark, BenchmarkKind, EmagModelForm, GainTiming, Plant};
use iscd_mpc::qp::HorizonWeights;
use iscd_mpc::simulator::{
    doa_sweep, planar_grid, run_closed_loop, ClosedLoopRecord, DoaResult, Tolerances, DOA_STEPS,
    DOA_THRESHOLD, DOA_WINDOW_START,
};
use iscd_mpc::{ModelError, SaturationSpec};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("malformed trajectory CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("run aborted at step {step}: {reason}")]
    Aborted { step: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 2 for an aborted run, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Aborted { .. } => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// A benchmark with optional overrides of its reference settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkKind,
    pub horizon: Option<usize>,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
    /// Diagonals of the stage, terminal and control weights.
    pub q: Option<Vec<f64>>,
    pub q_terminal: Option<Vec<f64>>,
    pub r: Option<Vec<f64>>,
    /// Saturation levels as `lower,upper` per input channel. For the
    /// electromagnet they bound the coil current.
    pub levels: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub steps: Option<usize>,
    pub model_form: Option<EmagModelForm>,
    pub gain_timing: Option<GainTiming>,
}

impl ExperimentConfig {
    pub fn new(benchmark: BenchmarkKind) -> Self {
        Self {
            benchmark,
            horizon: None,
            max_iterations: None,
            tolerance: None,
            q: None,
            q_terminal: None,
            r: None,
            levels: None,
            x0: None,
            steps: None,
            model_form: None,
            gain_timing: None,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment and lists are comma
    /// separated. A `benchmark` key is required unless `default` is given.
    pub fn parse(text: &str, default: Option<BenchmarkKind>) -> Result<Self, CliError> {
        let mut pairs = Vec::new();
        let mut benchmark = default;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "benchmark" {
                let kind = value
                    .parse()
                    .map_err(|e: iscd_mpc::plants::UnknownBenchmark| CliError::Config {
                        line: i + 1,
                        reason: e.to_string(),
                    })?;
                if default.is_some_and(|d| d != kind) {
                    return Err(CliError::Config {
                        line: i + 1,
                        reason: format!(
                            "file is for `{kind}`, command line asks for `{}`",
                            default.unwrap()
                        ),
                    });
                }
                benchmark = Some(kind);
            } else {
                pairs.push((i + 1, key.to_string(), value.to_string()));
            }
        }
        let mut cfg = Self::new(benchmark.ok_or_else(|| usage("config has no `benchmark` key"))?);
        for (line, key, value) in pairs {
            cfg.set(&key, &value)
                .map_err(|reason| CliError::Config { line, reason })?;
        }
        Ok(cfg)
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "l" | "horizon" => self.horizon = Some(parse_scalar(value)?),
            "rho" | "max_iterations" => self.max_iterations = Some(parse_scalar(value)?),
            "eps" | "tolerance" => self.tolerance = Some(parse_scalar(value)?),
            "q" => self.q = Some(parse_list(value)?),
            "q_terminal" => self.q_terminal = Some(parse_list(value)?),
            "r" => self.r = Some(parse_list(value)?),
            "levels" => self.levels = Some(parse_list(value)?),
            "x0" => self.x0 = Some(parse_list(value)?),
            "steps" => self.steps = Some(parse_scalar(value)?),
            "model_form" => {
                self.model_form = Some(match value {
                    "exact" => EmagModelForm::Exact,
                    "approximate" => EmagModelForm::Approximate,
                    _ => {
                        return Err(format!(
                            "model_form must be `exact` or `approximate`, got `{value}`"
                        ))
                    }
                })
            }
            "gain_timing" => {
                self.gain_timing = Some(match value {
                    "lagged" => GainTiming::Lagged,
                    "newest" => GainTiming::Newest,
                    _ => {
                        return Err(format!(
                            "gain_timing must be `lagged` or `newest`, got `{value}`"
                        ))
                    }
                })
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Benchmark with every override applied and checked against its
    /// dimensions.
    pub fn resolve(&self) -> Result<Benchmark, CliError> {
        let mut b = self.benchmark.benchmark();
        let mut plant = *b.plant();
        if let Some(levels) = &self.levels {
            set_levels(&mut plant, levels)?;
        }
        match (self.model_form, &mut plant) {
            (None, _) => {}
            (Some(form), Plant::Emag(p)) => p.form = form,
            (Some(_), _) => return Err(usage("model_form only applies to emag")),
        }
        match (self.gain_timing, &mut plant) {
            (None, _) => {}
            (Some(t), Plant::TripleIntegrator(p)) => p.gain_timing = t,
            (Some(_), _) => return Err(usage("gain_timing only applies to triple_integrator")),
        }
        b = b.with_plant(plant)?;

        let (n, m) = (b.model_state_dim(), b.input_dim());
        let mut config = b.config().clone();
        if let Some(l) = self.horizon {
            config.horizon = l;
        }
        if let Some(rho) = self.max_iterations {
            config.max_iterations = rho;
        }
        if let Some(eps) = self.tolerance {
            config.tolerance = eps;
        }
        if self.q.is_some() || self.q_terminal.is_some() || self.r.is_some() {
            let old = &config.weights;
            let q = diagonal_or(&self.q, old.q(), n, "q")?;
            let q_terminal = match (&self.q_terminal, &self.q) {
                (Some(_), _) => diagonal_or(&self.q_terminal, old.q_terminal(), n, "q_terminal")?,
                (None, Some(_)) => q.clone(),
                (None, None) => old.q_terminal().clone(),
            };
            let r = diagonal_or(&self.r, old.r(), m, "r")?;
            config.weights =
                HorizonWeights::new(q, q_terminal, r).map_err(|e| usage(e.to_string()))?;
        }
        config.validate()?;
        b = b.with_config(config)?;

        if let Some(x0) = &self.x0 {
            if x0.len() != b.state_dim() {
                return Err(usage(format!(
                    "x0 has {} entries, {} expects {}",
                    x0.len(),
                    b.name(),
                    b.state_dim()
                )));
            }
            b = b.with_x0(DVector::from_column_slice(x0))?;
        }
        if let Some(steps) = self.steps {
            b = b.with_steps(steps);
        }
        Ok(b)
    }
}

fn parse_scalar<T: FromStr>(value: &str) -> Result<T, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse `{value}`"))
}

fn parse_list(value: &str) -> Result<Vec<f64>, String> {
    value.split(',').map(parse_scalar).collect()
}

fn diagonal_or(
    given: &Option<Vec<f64>>,
    current: &DMatrix<f64>,
    dim: usize,
    name: &str,
) -> Result<DMatrix<f64>, CliError> {
    match given {
        None => Ok(current.clone()),
        Some(d) if d.len() == dim => Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d))),
        Some(d) => Err(usage(format!(
            "{name} has {} entries, expected {dim}",
            d.len()
        ))),
    }
}

fn set_levels(plant: &mut Plant, levels: &[f64]) -> Result<(), CliError> {
    let expected = 2 * plant.input_dim();
    if levels.len() != expected {
        return Err(usage(format!(
            "levels has {} entries, expected {expected}",
            levels.len()
        )));
    }
    let spec = |i: usize| SaturationSpec::new(levels[2 * i], levels[2 * i + 1]);
    match plant {
        Plant::Kapitza(p) => p.sat = spec(0)?,
        Plant::Nonholonomic(p) => p.sat = [spec(0)?, spec(1)?],
        Plant::Emag(p) => p.current_sat = spec(0)?,
        Plant::TripleIntegrator(p) => p.sat = spec(0)?,
    }
    Ok(())
}

/// One CSV row of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub sigma_u: Vec<f64>,
    pub rho: usize,
    /// Empty on the last row, which has no next control.
    pub qp_status: String,
}

pub fn trajectory_rows(rec: &ClosedLoopRecord) -> Vec<TrajectoryRow> {
    (0..rec.len())
        .map(|k| TrajectoryRow {
            k,
            t: rec.times[k],
            x: rec.states[k].iter().copied().collect(),
            u: rec.controls[k].iter().copied().collect(),
            sigma_u: rec.saturated[k].iter().copied().collect(),
            rho: rec.rho[k],
            qp_status: rec.statuses[k].map_or(String::new(), |s| s.as_str().to_string()),
        })
        .collect()
}

pub fn trajectory_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["k".to_string(), "t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=m).map(|i| format!("u{i}")));
    h.extend((1..=m).map(|i| format!("sigma_u{i}")));
    h.push("rho_k".into());
    h.push("qp_status".into());
    h
}

/// CSV text with floats in shortest round-trip form.
pub fn write_trajectory(rows: &[TrajectoryRow], n: usize, m: usize) -> String {
    let mut out = trajectory_header(n, m).join(",");
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{}", r.k, r.t);
        for v in r.x.iter().chain(&r.u).chain(&r.sigma_u) {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{}", r.rho, r.qp_status);
    }
    out
}

pub fn read_trajectory(text: &str) -> Result<Vec<TrajectoryRow>, CliError> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or(CliError::Csv {
            line: 1,
            reason: "empty file".into(),
        })?
        .split(',')
        .collect();
    let n = header.iter().filter(|h| h.starts_with('x')).count();
    let m = header.iter().filter(|h| h.starts_with('u')).count();
    if header != trajectory_header(n, m) {
        return Err(CliError::Csv {
            line: 1,
            reason: format!("unexpected header `{}`", header.join(",")),
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |reason: String| CliError::Csv {
                line: i + 2,
                reason,
            };
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(bad(format!(
                    "{} fields, expected {}",
                    cells.len(),
                    header.len()
                )));
            }
            let float = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("bad number `{s}`")))
            };
            let floats = |from: usize, len: usize| -> Result<Vec<f64>, CliError> {
                cells[from..from + len].iter().map(|s| float(s)).collect()
            };
            Ok(TrajectoryRow {
                k: cells[0]
                    .parse()
                    .map_err(|_| bad(format!("bad step `{}`", cells[0])))?,
                t: float(cells[1])?,
                x: floats(2, n)?,
                u: floats(2 + n, m)?,
                sigma_u: floats(2 + n + m, m)?,
                rho: cells[2 + n + 2 * m]
                    .parse()
                    .map_err(|_| bad(format!("bad rho `{}`", cells[2 + n + 2 * m])))?,
                qp_status: cells[3 + n + 2 * m].to_string(),
            })
        })
        .collect()
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: PathBuf,
    pub metadata: PathBuf,
    pub record: ClosedLoopRecord,
}

pub fn trajectory_path(out_dir: &Path, b: &Benchmark) -> PathBuf {
    out_dir.join(format!("{}.csv", b.name()))
}

pub fn metadata_path(out_dir: &Path, b: &Benchmark) -> PathBuf {
    out_dir.join(format!("{}_metadata.txt", b.name()))
}

/// `key = value` lines in the config format.
pub fn format_metadata(entries: &[(String, String)]) -> String {
    entries
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

pub fn parse_metadata(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn integrator_entries() -> Vec<(String, String)> {
    let tol = Tolerances::default();
    vec![
        ("integrator".into(), "dormand_prince_5_4".into()),
        ("integrator_rtol".into(), tol.rtol.to_string()),
        ("integrator_atol".into(), tol.atol.to_string()),
    ]
}

/// Simulates the configured benchmark and writes its trajectory CSV and
/// metadata into `out_dir`. Both files are written even when the run aborts,
/// in which case the result is [`CliError::Aborted`].
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput, CliError> {
    let b = cfg.resolve()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let rec = run_closed_loop(&b, b.config(), b.x0(), b.steps());

    let trajectory = trajectory_path(out_dir, &b);
    let csv = write_trajectory(&trajectory_rows(&rec), b.state_dim(), b.input_dim());
    fs::write(&trajectory, csv).map_err(io_err(&trajectory))?;

    let mut entries = b.entries();
    entries.extend(integrator_entries());
    let sigma = if matches!(b.plant(), Plant::Emag(_)) {
        "coil_current"
    } else {
        "saturated_control"
    };
    entries.push(("sigma_u".into(), sigma.into()));
    entries.push(("rows".into(), rec.len().to_string()));
    entries.push((
        "aborted".into(),
        rec.aborted
            .as_ref()
            .map_or("false".into(), |a| format!("step {}: {}", a.step, a.reason)),
    ));
    let metadata = metadata_path(out_dir, &b);
    fs::write(&metadata, format_metadata(&entries)).map_err(io_err(&metadata))?;

    if let Some(a) = &rec.aborted {
        return Err(CliError::Aborted {
            step: a.step,
            reason: a.reason.clone(),
        });
    }
    Ok(RunOutput {
        trajectory,
        metadata,
        record: rec,
    })
}

/// Axis values `min, min + step, ..., max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub min: f64,
    pub step: f64,
    pub max: f64,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.max - self.min) / self.step).round() as usize + 1;
        (0..count)
            .map(|i| self.min + i as f64 * self.step)
            .collect()
    }
}

impl FromStr for GridSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || usage(format!("grid must be `min:step:max`, got `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let (min, step, max) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0 && min <= max && min.is_finite() && max.is_finite()) {
            return Err(bad());
        }
        Ok(Self { min, step, max })
    }
}

/// Sweeps the `(x1, x2)` grid with the remaining states at zero for every
/// horizon, writing `doa_l{l}.csv` per horizon and `doa_summary.csv`.
pub fn run_doa(
    cfg: &ExperimentConfig,
    horizons: &[usize],
    grid: &GridSpec,
    out_dir: &Path,
) -> Result<DoaResult, CliError> {
    if horizons.is_empty() || horizons.iter().any(|&l| l < 2) {
        return Err(usage("horizons must be a nonempty list of values >= 2"));
    }
    let b = cfg.resolve()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let points = planar_grid(&grid.values(), b.state_dim());
    let result = doa_sweep(&b, &points, horizons, DOA_STEPS);

    let mut summary = String::from("l,converged,total\n");
    for &l in horizons {
        let mut csv = String::from("x1_0,x2_0,converged,criterion_value\n");
        for p in result.for_horizon(l) {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                p.x0[0], p.x0[1], p.converged, p.criterion
            );
        }
        let path = out_dir.join(format!("doa_l{l}.csv"));
        fs::write(&path, csv).map_err(io_err(&path))?;
        let _ = writeln!(
            summary,
            "{l},{},{}",
            result.converged_count(l),
            points.len()
        );
    }
    let path = out_dir.join("doa_summary.csv");
    fs::write(&path, summary).map_err(io_err(&path))?;

    let mut entries = b.entries();
    entries.retain(|(k, _)| k != "x0" && k != "steps" && k != "horizon");
    entries.extend(integrator_entries());
    let list = |v: &[usize]| {
        v.iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    entries.push(("horizons".into(), list(horizons)));
    entries.push((
        "grid".into(),
        format!("{}:{}:{}", grid.min, grid.step, grid.max),
    ));
    entries.push(("steps".into(), DOA_STEPS.to_string()));
    entries.push((
        "criterion_window".into(),
        format!("{DOA_WINDOW_START}..={DOA_STEPS}"),
    ));
    entries.push(("criterion_threshold".into(), DOA_THRESHOLD.to_string()));
    let path = out_dir.join("doa_metadata.txt");
    fs::write(&path, format_metadata(&entries)).map_err(io_err(&path))?;
    Ok(result)
}
