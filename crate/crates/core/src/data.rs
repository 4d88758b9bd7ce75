//! Synthetic trajectories, the dataset CSV format and KITTI OXTS conversion.
//!
//! Synthetic truth is produced with the same discrete propagation the estimator uses:
//! for each IMU step the gyro reading is chosen so the attitude reaches the next
//! heading and the accelerometer reading is the exact inverse of the velocity update,
//! `a = Rᵀ((v⁺ − v)/dt − g) + bᵃ`. Noise is added afterwards.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imu::{ImuSample, ProcessNoise, Propagator};
use crate::so3::from_euler_zyx;
use crate::tfg::TfgElement;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionProfile {
    Straight,
    /// Constant yaw rate.
    Circle,
    /// Alternating full loops, left then right.
    FigureEight,
    /// Straight legs separated by 90° turns, alternating direction.
    PiecewiseTurns,
}

impl MotionProfile {
    pub fn name(self) -> &'static str {
        match self {
            Self::Straight => "straight",
            Self::Circle => "circle",
            Self::FigureEight => "figure-eight",
            Self::PiecewiseTurns => "piecewise-turns",
        }
    }

    /// Yaw rate (rad/s) at time `t`.
    fn yaw_rate(self, t: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            Self::Straight => 0.0,
            Self::Circle => 0.1,
            Self::FigureEight => {
                // each half period integrates to one full turn
                let period = 40.0;
                2.0 * PI * PI / period * (2.0 * PI * t / period).sin()
            }
            Self::PiecewiseTurns => {
                let (leg, turn) = (10.0, 5.0);
                let phase = t % (leg + turn);
                if phase < leg {
                    0.0
                } else {
                    let k = (t / (leg + turn)).floor() as i64;
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sign * PI / 2.0 / turn
                }
            }
        }
    }
}

impl FromStr for MotionProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "straight" => Ok(Self::Straight),
            "circle" => Ok(Self::Circle),
            "figure-eight" | "figure8" => Ok(Self::FigureEight),
            "piecewise-turns" | "turns" => Ok(Self::PiecewiseTurns),
            other => Err(Error::Input(format!("unknown motion profile `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub duration: f64,
    pub imu_rate: f64,
    pub gnss_rate: f64,
    pub profile: MotionProfile,
    pub speed: f64,
    pub acc_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub gravity: Vector3<f64>,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            duration: 60.0,
            imu_rate: 100.0,
            gnss_rate: 1.0,
            profile: MotionProfile::PiecewiseTurns,
            speed: 10.0,
            acc_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            gravity: crate::imu::GRAVITY,
        }
    }
}

impl TrajectorySpec {
    /// IMU steps per GNSS epoch.
    pub fn decimation(&self) -> Result<usize> {
        if !(self.imu_rate > 0.0 && self.gnss_rate > 0.0 && self.duration > 0.0) {
            return Err(Error::Input("rates and duration must be positive".into()));
        }
        let ratio = self.imu_rate / self.gnss_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::Input("imu_rate must be a multiple of gnss_rate".into()));
        }
        Ok(ratio.round() as usize)
    }
}

/// Initial standard deviations of the estimator (rotation in radians).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialSigmas {
    pub pos: f64,
    pub vel: f64,
    pub rot: f64,
    pub acc_bias: f64,
    pub gyro_bias: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma_y: f64,
    pub process: ProcessNoise,
    pub initial: InitialSigmas,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_y: 1.0,
            process: ProcessNoise { sigma_a: 0.05, sigma_w: 0.01, sigma_ba: 0.002, sigma_bw: 3e-5 },
            initial: InitialSigmas {
                pos: 1.0,
                vel: 10.0,
                rot: 100f64.to_radians(),
                acc_bias: 0.06,
                gyro_bias: 0.07,
            },
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        let i = &self.initial;
        let all = [self.sigma_y, i.pos, i.vel, i.rot, i.acc_bias, i.gyro_bias];
        if all.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Input("noise sigmas must be nonnegative".into()));
        }
        Ok(())
    }

    /// Copy with all measurement and process noise multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let p = &self.process;
        Self {
            sigma_y: self.sigma_y * k,
            process: ProcessNoise {
                sigma_a: p.sigma_a * k,
                sigma_w: p.sigma_w * k,
                sigma_ba: p.sigma_ba * k,
                sigma_bw: p.sigma_bw * k,
            },
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GnssFix {
    pub t: f64,
    pub y: Vector3<f64>,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthRecord {
    pub t: f64,
    pub state: TfgElement,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub imu: Vec<ImuSample>,
    pub gnss: Vec<GnssFix>,
    pub truth: Vec<TruthRecord>,
}

impl Dataset {
    /// IMU samples with `t0 <= t < t1`.
    pub fn imu_between(&self, t0: f64, t1: f64) -> &[ImuSample] {
        let start = self.imu.partition_point(|s| s.t < t0);
        let end = self.imu.partition_point(|s| s.t < t1);
        &self.imu[start..end]
    }

    /// Truth record with timestamp exactly `t`, if any.
    pub fn truth_at(&self, t: f64) -> Option<&TruthRecord> {
        let k = self.truth.partition_point(|r| r.t < t);
        self.truth.get(k).filter(|r| r.t == t)
    }

    pub fn validate(&self) -> Result<()> {
        check_sorted(self.imu.iter().map(|s| s.t), "IMU")?;
        check_sorted(self.gnss.iter().map(|g| g.t), "GNSS")?;
        check_sorted(self.truth.iter().map(|r| r.t), "truth")?;
        for g in &self.gnss {
            if self.truth_at(g.t).is_none() {
                return Err(Error::Input(format!("GNSS fix at t={} has no truth record", g.t)));
            }
        }
        Ok(())
    }
}

fn check_sorted(times: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut last = f64::NEG_INFINITY;
    for (k, t) in times.enumerate() {
        if !(t > last) {
            return Err(Error::Input(format!("{what} record {k} at t={t} is not after t={last}")));
        }
        last = t;
    }
    Ok(())
}

fn gaussian(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated nonnegative")
}

fn gaussian3(rng: &mut ChaCha8Rng, dist: &Normal<f64>) -> Vector3<f64> {
    Vector3::new(dist.sample(rng), dist.sample(rng), dist.sample(rng))
}

pub fn generate(spec: &TrajectorySpec, noise: &NoiseSpec) -> Result<Dataset> {
    let decimation = spec.decimation()?;
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let (gyro_noise, accel_noise) = (gaussian(noise.process.sigma_w), gaussian(noise.process.sigma_a));
    let gnss_noise = gaussian(noise.sigma_y);

    let dt = 1.0 / spec.imu_rate;
    let steps = (spec.duration * spec.imu_rate).round() as usize;
    let time = |k: usize| k as f64 / spec.imu_rate;
    let heading = |psi: f64| Vector3::new(psi.cos(), psi.sin(), 0.0);

    let mut psi = 0.0;
    let mut x = TfgElement {
        rot: from_euler_zyx(0.0, 0.0, psi),
        vel: spec.speed * heading(psi),
        pos: Vector3::zeros(),
        acc_bias: spec.acc_bias,
        gyro_bias: spec.gyro_bias,
    };
    let mut prop = Propagator::new();
    let mut data = Dataset::default();
    data.truth.push(TruthRecord { t: 0.0, state: x });

    for k in 0..steps {
        let t = time(k);
        // midpoint rate keeps the heading second-order accurate for smooth profiles
        let rate = spec.profile.yaw_rate(t + 0.5 * dt);
        let next_psi = psi + rate * dt;
        let next_vel = spec.speed * heading(next_psi);
        let omega = Vector3::new(0.0, 0.0, rate) + x.gyro_bias;
        let accel = x.rot.transpose() * ((next_vel - x.vel) / dt - spec.gravity) + x.acc_bias;
        let exact = ImuSample { t, omega, accel };
        x = prop.step(&x, &exact, dt, &spec.gravity);
        data.imu.push(ImuSample {
            t,
            omega: omega + gaussian3(&mut rng, &gyro_noise),
            accel: accel + gaussian3(&mut rng, &accel_noise),
        });
        psi = next_psi;
        data.truth.push(TruthRecord { t: time(k + 1), state: x });
    }

    for k in (0..=steps).step_by(decimation) {
        let truth = &data.truth[k];
        let y = truth.state.pos + gaussian3(&mut rng, &gnss_noise);
        data.gnss.push(GnssFix { t: truth.t, y, sigma: noise.sigma_y });
    }
    Ok(data)
}

/// Position fixes drawn from the truth at roughly `rate` Hz: the first truth record at
/// or after each multiple of the period.
pub fn synthesize_gnss(data: &Dataset, rate: f64, sigma: f64, seed: u64) -> Result<Vec<GnssFix>> {
    if !(rate > 0.0) || !(sigma >= 0.0) {
        return Err(Error::Input("GNSS rate must be positive and sigma nonnegative".into()));
    }
    let Some(first) = data.truth.first() else { return Ok(Vec::new()) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = gaussian(sigma);
    let mut out: Vec<GnssFix> = Vec::new();
    let mut next = first.t;
    for r in &data.truth {
        if r.t + 1e-9 >= next {
            out.push(GnssFix { t: r.t, y: r.state.pos + gaussian3(&mut rng, &dist), sigma });
            while next <= r.t + 1e-9 {
                next += 1.0 / rate;
            }
        }
    }
    Ok(out)
}

fn quaternion_of(rot: &Matrix3<f64>) -> UnitQuaternion<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*rot));
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

fn fmt_float(out: &mut String, v: f64) {
    // 17 significant digits round-trip every f64
    let _ = write!(out, ",{v:.16e}");
}

pub const CSV_HEADER: &str = "\
# tfgsmooth dataset
# IMU,t,wx,wy,wz,ax,ay,az
# GNSS,t,px,py,pz,sigma
# TRUTH,t,px,py,pz,qw,qx,qy,qz,vx,vy,vz
# BIAS,t,bax,bay,baz,bwx,bwy,bwz   (biases of the TRUTH record at the same t)
# type,t,a,b,c,d,e,f,g,h,i,j
";

pub fn to_csv(data: &Dataset) -> String {
    let mut out = String::from(CSV_HEADER);
    for r in &data.truth {
        let x = &r.state;
        let q = quaternion_of(&x.rot);
        out.push_str("TRUTH");
        for v in [r.t, x.pos.x, x.pos.y, x.pos.z, q.w, q.i, q.j, q.k, x.vel.x, x.vel.y, x.vel.z] {
            fmt_float(&mut out, v);
        }
        out.push_str("\nBIAS");
        for v in [r.t, x.acc_bias.x, x.acc_bias.y, x.acc_bias.z, x.gyro_bias.x, x.gyro_bias.y, x.gyro_bias.z] {
            fmt_float(&mut out, v);
        }
        out.push('\n');
    }
    for s in &data.imu {
        out.push_str("IMU");
        for v in [s.t, s.omega.x, s.omega.y, s.omega.z, s.accel.x, s.accel.y, s.accel.z] {
            fmt_float(&mut out, v);
        }
        out.push('\n');
    }
    for g in &data.gnss {
        out.push_str("GNSS");
        for v in [g.t, g.y.x, g.y.y, g.y.z, g.sigma] {
            fmt_float(&mut out, v);
        }
        out.push('\n');
    }
    out
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, to_csv(data))?;
    Ok(())
}

fn parse_fields(line: usize, fields: &[&str], expected: usize) -> Result<Vec<f64>> {
    if fields.len() != expected {
        return Err(Error::Parse {
            line,
            message: format!("expected {expected} numeric fields, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid number `{}`", f.trim()),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse { line, message: format!("non-finite value `{}`", f.trim()) })
            }
        })
        .collect()
}

fn check_after(line: usize, what: &str, last: Option<f64>, t: f64) -> Result<()> {
    match last {
        Some(prev) if !(t > prev) => Err(Error::Input(format!(
            "line {line}: {what} time {t} is not after previous {what} time {prev}"
        ))),
        _ => Ok(()),
    }
}

pub fn from_csv(text: &str) -> Result<Dataset> {
    let mut data = Dataset::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let mut parts = content.split(',');
        let kind = parts.next().unwrap_or_default().trim();
        let fields: Vec<&str> = parts.collect();
        match kind {
            "IMU" => {
                let v = parse_fields(line, &fields, 7)?;
                check_after(line, "IMU", data.imu.last().map(|s| s.t), v[0])?;
                data.imu.push(ImuSample {
                    t: v[0],
                    omega: Vector3::new(v[1], v[2], v[3]),
                    accel: Vector3::new(v[4], v[5], v[6]),
                });
            }
            "GNSS" => {
                let v = parse_fields(line, &fields, 5)?;
                check_after(line, "GNSS", data.gnss.last().map(|g| g.t), v[0])?;
                if v[4] < 0.0 {
                    return Err(Error::Parse { line, message: "negative sigma".into() });
                }
                data.gnss.push(GnssFix { t: v[0], y: Vector3::new(v[1], v[2], v[3]), sigma: v[4] });
            }
            "TRUTH" => {
                let v = parse_fields(line, &fields, 11)?;
                check_after(line, "TRUTH", data.truth.last().map(|r| r.t), v[0])?;
                let q = Quaternion::new(v[4], v[5], v[6], v[7]);
                if q.norm() < 0.5 {
                    return Err(Error::Parse { line, message: "degenerate quaternion".into() });
                }
                let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
                data.truth.push(TruthRecord {
                    t: v[0],
                    state: TfgElement {
                        rot,
                        vel: Vector3::new(v[8], v[9], v[10]),
                        pos: Vector3::new(v[1], v[2], v[3]),
                        ..TfgElement::identity()
                    },
                });
            }
            "BIAS" => {
                let v = parse_fields(line, &fields, 7)?;
                let Some(last) = data.truth.last_mut().filter(|r| r.t == v[0]) else {
                    return Err(Error::Parse { line, message: "BIAS row does not follow its TRUTH row".into() });
                };
                last.state.acc_bias = Vector3::new(v[1], v[2], v[3]);
                last.state.gyro_bias = Vector3::new(v[4], v[5], v[6]);
            }
            other => {
                return Err(Error::Parse { line, message: format!("unknown record type `{other}`") });
            }
        }
    }
    Ok(data)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    from_csv(&fs::read_to_string(path)?)
}

/// OXTS record layout (KITTI raw, 30 fields per frame). Only the fields used here are
/// named: position in degrees and metres, attitude in radians (ZYX, yaw 0 = east),
/// velocities in m/s, body accelerations in m/s² and body rates in rad/s.
pub mod oxts {
    pub const FIELDS: usize = 30;
    pub const LAT: usize = 0;
    pub const LON: usize = 1;
    pub const ALT: usize = 2;
    pub const ROLL: usize = 3;
    pub const PITCH: usize = 4;
    pub const YAW: usize = 5;
    pub const VN: usize = 6;
    pub const VE: usize = 7;
    pub const VU: usize = 10;
    /// Body x forward, y left, z up.
    pub const AX: usize = 11;
    pub const AY: usize = 12;
    pub const AZ: usize = 13;
    pub const WX: usize = 17;
    pub const WY: usize = 18;
    pub const WZ: usize = 19;
}

const WGS84_A: f64 = 6_378_137.0;
const WGS84_E2: f64 = 6.694_379_990_14e-3;

fn ecef(lat_deg: f64, lon_deg: f64, alt: f64) -> Vector3<f64> {
    let (lat, lon) = (lat_deg.to_radians(), lon_deg.to_radians());
    let n = WGS84_A / (1.0 - WGS84_E2 * lat.sin().powi(2)).sqrt();
    Vector3::new(
        (n + alt) * lat.cos() * lon.cos(),
        (n + alt) * lat.cos() * lon.sin(),
        (n * (1.0 - WGS84_E2) + alt) * lat.sin(),
    )
}

/// East-north-up coordinates of a geodetic point in the tangent plane at `origin`.
pub fn geodetic_to_enu(origin: (f64, f64, f64), point: (f64, f64, f64)) -> Vector3<f64> {
    let (lat0, lon0) = (origin.0.to_radians(), origin.1.to_radians());
    let d = ecef(point.0, point.1, point.2) - ecef(origin.0, origin.1, origin.2);
    let (sl, cl) = lat0.sin_cos();
    let (so, co) = lon0.sin_cos();
    let to_enu = Matrix3::new(
        -so, co, 0.0, //
        -sl * co, -sl * so, cl, //
        cl * co, cl * so, sl,
    );
    to_enu * d
}

fn parse_timestamp(line: usize, s: &str) -> Result<chrono::NaiveDateTime> {
    chrono::NaiveDateTime::parse_from_str(s.trim(), "%Y-%m-%d %H:%M:%S%.f").map_err(|e| Error::Parse {
        line,
        message: format!("bad timestamp `{}`: {e}", s.trim()),
    })
}

fn oxts_paths(dir: &Path) -> (PathBuf, PathBuf) {
    let base = if dir.join("oxts").is_dir() { dir.join("oxts") } else { dir.to_path_buf() };
    (base.join("data"), base.join("timestamps.txt"))
}

/// Reads a KITTI raw OXTS directory (`data/*.txt` plus `timestamps.txt`, optionally
/// below an `oxts/` subdirectory). Positions are expressed in the east-north-up plane
/// of the first fix; no GNSS records are produced, see [`synthesize_gnss`].
pub fn convert_kitti_oxts(dir: &Path) -> Result<Dataset> {
    let (data_dir, stamps_path) = oxts_paths(dir);
    let stamps_text = fs::read_to_string(&stamps_path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", stamps_path.display())))?;
    let stamps: Vec<_> = stamps_text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_timestamp(i + 1, l))
        .collect::<Result<_>>()?;

    let mut files: Vec<PathBuf> = fs::read_dir(&data_dir)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", data_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    if files.len() != stamps.len() {
        return Err(Error::Input(format!(
            "{} OXTS records but {} timestamps",
            files.len(),
            stamps.len()
        )));
    }

    let mut data = Dataset::default();
    let mut origin = None;
    for (path, stamp) in files.iter().zip(&stamps) {
        let text = fs::read_to_string(path)?;
        let f: Vec<f64> = text
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        if f.len() < oxts::FIELDS {
            return Err(Error::Input(format!(
                "{}: expected {} fields, found {}",
                path.display(),
                oxts::FIELDS,
                f.len()
            )));
        }
        let t = (*stamp - stamps[0]).num_nanoseconds().unwrap_or(i64::MAX) as f64 * 1e-9;
        let geo = (f[oxts::LAT], f[oxts::LON], f[oxts::ALT]);
        let origin = *origin.get_or_insert(geo);
        let rot = from_euler_zyx(f[oxts::ROLL], f[oxts::PITCH], f[oxts::YAW]);
        let state = TfgElement {
            rot,
            vel: Vector3::new(f[oxts::VE], f[oxts::VN], f[oxts::VU]),
            pos: if geo == origin { Vector3::zeros() } else { geodetic_to_enu(origin, geo) },
            ..TfgElement::identity()
        };
        data.truth.push(TruthRecord { t, state });
        data.imu.push(ImuSample {
            t,
            omega: Vector3::new(f[oxts::WX], f[oxts::WY], f[oxts::WZ]),
            accel: Vector3::new(f[oxts::AX], f[oxts::AY], f[oxts::AZ]),
        });
    }
    data.validate()?;
    Ok(data)
}
