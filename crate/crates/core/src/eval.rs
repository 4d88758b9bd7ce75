//! Monte Carlo alignment experiments: one run per (method, window size, seed), the yaw
//! 3σ consistency metric and report files.
//!
//! Each run initializes position from the truth, roll, pitch, velocity and biases at
//! zero and yaw from the configured distribution, then feeds every GNSS epoch of the
//! evaluation horizon through a sliding-window smoother. After each epoch the newest
//! state's yaw error `yaw(R̂ᵀR)` is compared against three times the standard
//! deviation of the body-z attitude coordinate, which is the first-order yaw of the
//! error rotation for every retraction used here.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::{self, Dataset, GnssFix, MotionProfile, NoiseSpec, TrajectorySpec};
use crate::error::{Error, Result};
use crate::linalg::{Mat15, Vec15};
use crate::param::Parametrization;
use crate::smoother::{Dynamics, SolverConfig, Window};
use crate::so3::{from_euler_zyx, yaw_of};
use crate::tfg::TfgElement;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(TrajectorySpec),
    /// Dataset CSV; fixes are synthesized from the truth when the file has none.
    Csv(PathBuf),
    /// KITTI raw OXTS directory.
    Kitti(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Initialization {
    /// Yaw uniform on (−180°, 180°].
    UniformYaw,
    /// Yaw = true yaw + N(0, σ_R⁰).
    GaussianYaw,
    /// Whole initial state from the truth.
    Truth,
}

impl FromStr for Initialization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::UniformYaw),
            "gaussian" => Ok(Self::GaussianYaw),
            "truth" => Ok(Self::Truth),
            other => Err(Error::Input(format!("unknown initialization `{other}`"))),
        }
    }
}

impl Initialization {
    fn name(self) -> &'static str {
        match self {
            Self::UniformYaw => "uniform",
            Self::GaussianYaw => "gaussian",
            Self::Truth => "truth",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Row label in the report.
    pub sequence: String,
    pub source: DataSource,
    pub methods: Vec<Parametrization>,
    pub windows: Vec<usize>,
    pub runs: usize,
    /// Run `r` uses seed `seed + r` for its data noise and its initial yaw.
    pub seed: u64,
    /// Estimator noise model; also the data noise scaled by `data_noise_scale`.
    pub noise: NoiseSpec,
    pub data_noise_scale: f64,
    pub initialization: Initialization,
    /// Seconds of data after the first fix that are evaluated.
    pub horizon: f64,
    pub gravity: Vector3<f64>,
    /// Rate of fixes synthesized for recorded data without GNSS.
    pub gnss_rate: f64,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sequence: "synthetic".into(),
            source: DataSource::Synthetic(TrajectorySpec::default()),
            methods: Parametrization::ALL.to_vec(),
            windows: vec![5, 10, 15],
            runs: 50,
            seed: 0,
            noise: NoiseSpec::default(),
            data_noise_scale: 1.0,
            initialization: Initialization::UniformYaw,
            horizon: 60.0,
            gravity: crate::imu::GRAVITY,
            gnss_rate: 1.0,
            solver: SolverConfig::default(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Input(format!("invalid value `{}` for `{key}`", value.trim())))
}

pub fn parse_vec3(key: &str, value: &str) -> Result<Vector3<f64>> {
    let parts: Vec<f64> = value.split(',').map(|p| parse_num(key, p)).collect::<Result<_>>()?;
    if parts.len() != 3 {
        return Err(Error::Input(format!("`{key}` needs three comma-separated numbers")));
    }
    Ok(Vector3::new(parts[0], parts[1], parts[2]))
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse_num(key, p))
        .collect()
}

pub fn parse_methods(value: &str) -> Result<Vec<Parametrization>> {
    value
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn fmt_vec3(v: &Vector3<f64>) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

impl ExperimentConfig {
    fn trajectory_mut(&mut self) -> Result<&mut TrajectorySpec> {
        match &mut self.source {
            DataSource::Synthetic(spec) => Ok(spec),
            _ => Err(Error::Input("trajectory keys need `source = synthetic`".into())),
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let n = &mut self.noise;
        match key.trim() {
            "sequence" => self.sequence = v.to_string(),
            "source" => {
                self.source = match v {
                    "synthetic" => DataSource::Synthetic(TrajectorySpec::default()),
                    other => {
                        let (kind, path) = other.split_once(':').ok_or_else(|| {
                            Error::Input("source must be `synthetic`, `csv:<path>` or `kitti:<dir>`".into())
                        })?;
                        match kind {
                            "csv" => DataSource::Csv(PathBuf::from(path.trim())),
                            "kitti" => DataSource::Kitti(PathBuf::from(path.trim())),
                            _ => return Err(Error::Input(format!("unknown source kind `{kind}`"))),
                        }
                    }
                }
            }
            "profile" => self.trajectory_mut()?.profile = v.parse::<MotionProfile>()?,
            "duration" => self.trajectory_mut()?.duration = parse_num("duration", v)?,
            "imu_rate" => self.trajectory_mut()?.imu_rate = parse_num("imu_rate", v)?,
            "speed" => self.trajectory_mut()?.speed = parse_num("speed", v)?,
            "acc_bias" => self.trajectory_mut()?.acc_bias = parse_vec3("acc_bias", v)?,
            "gyro_bias" => self.trajectory_mut()?.gyro_bias = parse_vec3("gyro_bias", v)?,
            "gnss_rate" => {
                self.gnss_rate = parse_num("gnss_rate", v)?;
                if let DataSource::Synthetic(spec) = &mut self.source {
                    spec.gnss_rate = self.gnss_rate;
                }
            }
            "methods" => self.methods = parse_methods(v)?,
            "windows" => self.windows = parse_list("windows", v)?,
            "runs" => self.runs = parse_num("runs", v)?,
            "seed" => self.seed = parse_num("seed", v)?,
            "sigma_y" => n.sigma_y = parse_num(key, v)?,
            "sigma_a" => n.process.sigma_a = parse_num(key, v)?,
            "sigma_w" => n.process.sigma_w = parse_num(key, v)?,
            "sigma_ba" => n.process.sigma_ba = parse_num(key, v)?,
            "sigma_bw" => n.process.sigma_bw = parse_num(key, v)?,
            "sigma_p0" => n.initial.pos = parse_num(key, v)?,
            "sigma_v0" => n.initial.vel = parse_num(key, v)?,
            "sigma_r0_deg" => n.initial.rot = parse_num::<f64>(key, v)?.to_radians(),
            "sigma_ba0" => n.initial.acc_bias = parse_num(key, v)?,
            "sigma_bw0" => n.initial.gyro_bias = parse_num(key, v)?,
            "data_noise_scale" => self.data_noise_scale = parse_num(key, v)?,
            "init" => self.initialization = v.parse()?,
            "horizon" => self.horizon = parse_num(key, v)?,
            "gravity" => {
                self.gravity = parse_vec3(key, v)?;
                if let DataSource::Synthetic(spec) = &mut self.source {
                    spec.gravity = self.gravity;
                }
            }
            "max_iterations" => self.solver.max_iterations = parse_num(key, v)?,
            "cost_tolerance" => self.solver.cost_tolerance = parse_num(key, v)?,
            "step_tolerance" => self.solver.step_tolerance = parse_num(key, v)?,
            "lm_lambda" => self.solver.lm_initial_lambda = parse_num(key, v)?,
            other => return Err(Error::Input(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses the `key = value` format; `#` starts a comment. Later keys override
    /// earlier ones, and `source` must precede trajectory keys.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: "expected `key = value`".into(),
            })?;
            cfg.set(key, value).map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Canonical `key = value` rendering; `parse(to_kv())` reproduces the config.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("sequence", self.sequence.clone());
        match &self.source {
            DataSource::Synthetic(spec) => {
                kv("source", "synthetic".into());
                kv("profile", spec.profile.name().into());
                kv("duration", spec.duration.to_string());
                kv("imu_rate", spec.imu_rate.to_string());
                kv("speed", spec.speed.to_string());
                kv("acc_bias", fmt_vec3(&spec.acc_bias));
                kv("gyro_bias", fmt_vec3(&spec.gyro_bias));
            }
            DataSource::Csv(p) => kv("source", format!("csv:{}", p.display())),
            DataSource::Kitti(p) => kv("source", format!("kitti:{}", p.display())),
        }
        let n = &self.noise;
        kv("gnss_rate", self.gnss_rate.to_string());
        kv("methods", join(&self.methods));
        kv("windows", join(&self.windows));
        kv("runs", self.runs.to_string());
        kv("seed", self.seed.to_string());
        kv("sigma_y", n.sigma_y.to_string());
        kv("sigma_a", n.process.sigma_a.to_string());
        kv("sigma_w", n.process.sigma_w.to_string());
        kv("sigma_ba", n.process.sigma_ba.to_string());
        kv("sigma_bw", n.process.sigma_bw.to_string());
        kv("sigma_p0", n.initial.pos.to_string());
        kv("sigma_v0", n.initial.vel.to_string());
        kv("sigma_r0_deg", n.initial.rot.to_degrees().to_string());
        kv("sigma_ba0", n.initial.acc_bias.to_string());
        kv("sigma_bw0", n.initial.gyro_bias.to_string());
        kv("data_noise_scale", self.data_noise_scale.to_string());
        kv("init", self.initialization.name().into());
        kv("horizon", self.horizon.to_string());
        kv("gravity", fmt_vec3(&self.gravity));
        kv("max_iterations", self.solver.max_iterations.to_string());
        kv("cost_tolerance", self.solver.cost_tolerance.to_string());
        kv("step_tolerance", self.solver.step_tolerance.to_string());
        kv("lm_lambda", self.solver.lm_initial_lambda.to_string());
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs < 1 {
            return Err(Error::Input("runs must be at least 1".into()));
        }
        if self.methods.is_empty() || self.windows.is_empty() {
            return Err(Error::Input("need at least one method and one window size".into()));
        }
        if self.windows.iter().any(|&w| w < 2) {
            return Err(Error::Input("window sizes must be at least 2".into()));
        }
        if !(self.horizon > 0.0) || !(self.gnss_rate > 0.0) || !(self.data_noise_scale >= 0.0) {
            return Err(Error::Input("horizon and GNSS rate must be positive, noise scale nonnegative".into()));
        }
        if let DataSource::Synthetic(spec) = &self.source {
            spec.decimation()?;
        }
        self.noise.validate()?;
        self.solver.validate()
    }

    /// Initial covariance from the configured initial sigmas.
    pub fn initial_covariance(&self) -> Mat15 {
        let i = &self.noise.initial;
        let sig = [i.rot, i.vel, i.pos, i.acc_bias, i.gyro_bias];
        Mat15::from_diagonal(&Vec15::from_fn(|k, _| sig[k / 3] * sig[k / 3]))
    }
}

/// Loaded data shared by all runs of an experiment; per-run noise is applied by
/// [`Experiment::dataset`].
#[derive(Clone, Debug)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    recorded: Option<Dataset>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let recorded = match &cfg.source {
            DataSource::Synthetic(_) => None,
            DataSource::Csv(p) => Some(data::load_csv(p)?),
            DataSource::Kitti(p) => Some(data::convert_kitti_oxts(p)?),
        };
        if let Some(d) = &recorded {
            d.validate()?;
            if d.truth.is_empty() {
                return Err(Error::Input("recorded dataset has no truth records".into()));
            }
        }
        Ok(Self { cfg, recorded })
    }

    /// Dataset of run seed `seed`.
    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        match (&self.cfg.source, &self.recorded) {
            (DataSource::Synthetic(spec), _) => {
                let noise = NoiseSpec { seed, ..self.cfg.noise.scaled(self.cfg.data_noise_scale) };
                data::generate(spec, &noise)
            }
            (_, Some(recorded)) => {
                let mut d = recorded.clone();
                if d.gnss.is_empty() {
                    let sigma = self.cfg.noise.sigma_y * self.cfg.data_noise_scale;
                    d.gnss = data::synthesize_gnss(&d, self.cfg.gnss_rate, sigma, seed)?;
                }
                Ok(d)
            }
            _ => unreachable!("recorded sources are loaded in Experiment::new"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub method: Parametrization,
    pub window: usize,
    pub seed: u64,
    pub t: Vec<f64>,
    pub yaw_error_deg: Vec<f64>,
    pub yaw_bound_deg: Vec<f64>,
    pub pos_error: Vec<f64>,
    pub consistent: bool,
    /// Error that stopped the run early; such runs count as inconsistent.
    pub failure: Option<String>,
    /// Accepted LM iterations that increased the cost, summed over all solves.
    pub lm_violations: usize,
    pub solves: usize,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    fn finish(&mut self) {
        self.consistent = self.failure.is_none()
            && self
                .yaw_error_deg
                .iter()
                .zip(&self.yaw_bound_deg)
                .all(|(e, b)| e.abs() <= *b);
    }
}

/// Yaw (deg) of `R̂ᵀR` and its 3σ bound from a covariance in the window's chart.
pub fn yaw_error_and_bound(estimate: &Matrix3<f64>, truth: &Matrix3<f64>, cov: &Mat15) -> (f64, f64) {
    let err = yaw_of(&(estimate.transpose() * truth)).to_degrees();
    let bound = 3.0 * cov[(2, 2)].max(0.0).sqrt().to_degrees();
    (err, bound)
}

/// Initial estimate per the configured protocol.
pub fn initial_state(init: Initialization, truth: &TfgElement, sigma_rot: f64, seed: u64) -> TfgElement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let true_yaw = yaw_of(&truth.rot);
    let yaw = match init {
        Initialization::Truth => return *truth,
        Initialization::UniformYaw => {
            // (−π, π]
            std::f64::consts::PI - rng.random_range(0.0..std::f64::consts::TAU)
        }
        Initialization::GaussianYaw => {
            true_yaw + Normal::new(0.0, sigma_rot).expect("sigma validated").sample(&mut rng)
        }
    };
    TfgElement { rot: from_euler_zyx(0.0, 0.0, yaw), pos: truth.pos, ..TfgElement::identity() }
}


/// Runs the smoother over a dataset from a given initial estimate.
pub fn run_smoother(
    cfg: &ExperimentConfig,
    data: &Dataset,
    method: Parametrization,
    window: usize,
    x0: TfgElement,
    seed: u64,
) -> RunRecord {
    let mut rec = RunRecord {
        method,
        window,
        seed,
        t: Vec::new(),
        yaw_error_deg: Vec::new(),
        yaw_bound_deg: Vec::new(),
        pos_error: Vec::new(),
        consistent: false,
        failure: None,
        lm_violations: 0,
        solves: 0,
    };
    if let Err(e) = smooth_into(cfg, data, method, window, x0, &mut rec) {
        rec.failure = Some(e.to_string());
    }
    rec.finish();
    rec
}

fn smooth_into(
    cfg: &ExperimentConfig,
    data: &Dataset,
    method: Parametrization,
    window: usize,
    x0: TfgElement,
    rec: &mut RunRecord,
) -> Result<()> {
    let first = data.gnss.first().ok_or_else(|| Error::Input("dataset has no GNSS fixes".into()))?;
    let fixes: Vec<&GnssFix> = data.gnss.iter().take_while(|f| f.t <= first.t + cfg.horizon + 1e-9).collect();
    let solver = SolverConfig { window_size: window, ..cfg.solver };
    // the estimator always uses the configured σ_y, whatever noise the data carries
    let fix_cov = Matrix3::identity() * cfg.noise.sigma_y.powi(2);

    let mut w = Window::new(method, first.t, x0, cfg.initial_covariance())?;
    w.add_position(0, first.y, fix_cov)?;
    let record = |w: &Window, report: crate::smoother::SolveReport, rec: &mut RunRecord| -> Result<()> {
        rec.solves += 1;
        rec.lm_violations += report.monotonicity_violations();
        let newest = w.newest();
        let truth = data
            .truth_at(newest.t)
            .ok_or_else(|| Error::Input(format!("no truth at t={}", newest.t)))?;
        let cov = w.covariance_at(w.len() - 1)?;
        let (err, bound) = yaw_error_and_bound(&newest.estimate.rot, &truth.state.rot, &cov);
        rec.t.push(newest.t);
        rec.yaw_error_deg.push(err);
        rec.yaw_bound_deg.push(bound);
        rec.pos_error.push((newest.estimate.pos - truth.state.pos).norm());
        Ok(())
    };
    let report = w.solve(&solver)?;
    record(&w, report, rec)?;

    for pair in fixes.windows(2) {
        let (prev, fix) = (pair[0], pair[1]);
        let samples = data.imu_between(prev.t, fix.t);
        if samples.is_empty() || samples[0].t > prev.t + 1e-9 {
            return Err(Error::Input(format!("no IMU sample at the start of [{}, {})", prev.t, fix.t)));
        }
        let dynamics = Dynamics::Imu {
            samples: samples.to_vec(),
            t_end: fix.t,
            gravity: cfg.gravity,
            noise: cfg.noise.process,
        };
        let report = w.advance(fix.t, dynamics, Some((fix.y, fix_cov)), &solver)?;
        record(&w, report, rec)?;
    }
    Ok(())
}

impl Experiment {
    /// One Monte Carlo run.
    pub fn run_cell(&self, method: Parametrization, window: usize, seed: u64) -> RunRecord {
        let data = match self.dataset(seed) {
            Ok(d) => d,
            Err(e) => {
                let mut rec = run_smoother(&self.cfg, &Dataset::default(), method, window, TfgElement::identity(), seed);
                rec.failure = Some(e.to_string());
                return rec;
            }
        };
        let Some(first) = data.gnss.first().and_then(|f| data.truth_at(f.t)) else {
            return run_smoother(&self.cfg, &Dataset::default(), method, window, TfgElement::identity(), seed);
        };
        let x0 = initial_state(self.cfg.initialization, &first.state, self.cfg.noise.initial.rot, seed);
        run_smoother(&self.cfg, &data, method, window, x0, seed)
    }

    /// Every (method, window, run) cell on a pool of `workers` threads. Results do not
    /// depend on the number of workers.
    pub fn run_all(&self, workers: usize) -> Result<Vec<CellResult>> {
        let tasks: Vec<(Parametrization, usize, u64)> = self
            .cfg
            .windows
            .iter()
            .flat_map(|&w| {
                self.cfg
                    .methods
                    .iter()
                    .flat_map(move |&m| (0..self.cfg.runs as u64).map(move |r| (m, w, r)))
            })
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
        let records: Vec<RunRecord> = pool.install(|| {
            tasks
                .par_iter()
                .map(|&(m, w, r)| self.run_cell(m, w, self.cfg.seed + r))
                .collect()
        });
        let mut cells: Vec<CellResult> = Vec::new();
        for rec in records {
            match cells.iter_mut().find(|c| c.method == rec.method && c.window == rec.window) {
                Some(c) => c.records.push(rec),
                None => cells.push(CellResult {
                    sequence: self.cfg.sequence.clone(),
                    method: rec.method,
                    window: rec.window,
                    records: vec![rec],
                }),
            }
        }
        Ok(cells)
    }
}

/// Fraction of consistent records; failed runs count as inconsistent.
pub fn consistency_ratio(records: &[RunRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Input("no records".into()));
    }
    Ok(ratio_of(records.iter().map(|r| r.consistent)))
}

fn ratio_of(flags: impl Iterator<Item = bool>) -> f64 {
    let (mut good, mut all) = (0usize, 0usize);
    for f in flags {
        all += 1;
        good += usize::from(f);
    }
    good as f64 / all as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub sequence: String,
    pub method: Parametrization,
    pub window: usize,
    pub records: Vec<RunRecord>,
}

impl CellResult {
    pub fn ratio(&self) -> f64 {
        consistency_ratio(&self.records).unwrap_or(0.0)
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.failed()).count()
    }
}

/// Rows `(sequence, window)` in first-seen order, columns in [`Parametrization::ALL`]
/// order; `-` marks a method that was not run.
fn table_rows(cells: &[CellResult]) -> Vec<(String, usize, [Option<f64>; 3])> {
    let mut rows: Vec<(String, usize, [Option<f64>; 3])> = Vec::new();
    for c in cells {
        let col = Parametrization::ALL.iter().position(|&m| m == c.method).expect("known method");
        let idx = match rows.iter().position(|(s, w, _)| *s == c.sequence && *w == c.window) {
            Some(i) => i,
            None => {
                rows.push((c.sequence.clone(), c.window, [None; 3]));
                rows.len() - 1
            }
        };
        rows[idx].2[col] = Some(c.ratio());
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    rows
}

fn cell_text(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |r| format!("{r:.2}"))
}

pub fn table_markdown(cells: &[CellResult]) -> String {
    let mut out = String::from("| seq. | window | tfg | se23 | linear |\n|---|---|---|---|---|\n");
    for (seq, window, vals) in table_rows(cells) {
        let _ = writeln!(
            out,
            "| {seq} | {window} | {} | {} | {} |",
            cell_text(vals[0]),
            cell_text(vals[1]),
            cell_text(vals[2])
        );
    }
    out
}

pub fn table_csv(cells: &[CellResult]) -> String {
    let mut out = String::from("sequence,window,tfg,se23,linear\n");
    for (seq, window, vals) in table_rows(cells) {
        let _ = writeln!(out, "{seq},{window},{},{},{}", cell_text(vals[0]), cell_text(vals[1]), cell_text(vals[2]));
    }
    out
}

pub fn trace_csv(rec: &RunRecord) -> String {
    let mut out = String::from("t,yaw_error_deg,yaw_3sigma_deg,pos_error_m\n");
    for k in 0..rec.t.len() {
        let _ = writeln!(
            out,
            "{},{:.9},{:.9},{:.9}",
            rec.t[k], rec.yaw_error_deg[k], rec.yaw_bound_deg[k], rec.pos_error[k]
        );
    }
    out
}

pub fn trace_file_name(seq: &str, rec: &RunRecord) -> String {
    format!("{seq}_{}_w{}_seed{}.csv", rec.method, rec.window, rec.seed)
}

/// Writes `table.md`, `table.csv`, `runs.csv` (one line per run) and one trace per run
/// under `traces/`. Existing files with the same names are overwritten.
pub fn emit_report(cells: &[CellResult], out: &Path) -> Result<()> {
    if cells.is_empty() {
        return Err(Error::Input("no completed cells to report".into()));
    }
    let traces = out.join("traces");
    fs::create_dir_all(&traces)?;
    fs::write(out.join("table.md"), table_markdown(cells))?;
    fs::write(out.join("table.csv"), table_csv(cells))?;
    let mut runs = String::from("sequence,method,window,seed,consistent,failed,max_abs_yaw_error_deg,final_yaw_error_deg,final_pos_error_m,lm_violations\n");
    for c in cells {
        for r in &c.records {
            let max_err = r.yaw_error_deg.iter().fold(0.0f64, |m, e| m.max(e.abs()));
            let _ = writeln!(
                runs,
                "{},{},{},{},{},{},{:.6},{:.6},{:.6},{}",
                c.sequence,
                r.method,
                r.window,
                r.seed,
                r.consistent,
                r.failed(),
                max_err,
                r.yaw_error_deg.last().copied().unwrap_or(f64::NAN),
                r.pos_error.last().copied().unwrap_or(f64::NAN),
                r.lm_violations
            );
            fs::write(traces.join(trace_file_name(&c.sequence, r)), trace_csv(r))?;
        }
    }
    fs::write(out.join("runs.csv"), runs)?;
    Ok(())
}
