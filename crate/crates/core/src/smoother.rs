//! Fixed-lag MAP smoother over a sliding window of states.
//!
//! The window holds one prior on its oldest state, one dynamics factor between each
//! pair of consecutive states and any number of position fixes. Each iteration
//! linearizes the cost around the current estimates,
//!
//! ```text
//! ‖p₀ + ξ₀‖²_P̃₀ + Σ ‖ûᵢ − Fᵢξᵢ + ξᵢ₊₁‖²_Qᵢ + Σ ‖n̂ₖ − Hₖξ‖²_Nₖ
//! ```
//!
//! solves the damped normal equations densely and applies the correction with the
//! window's retraction.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::imu::{check_samples, compound, integrate, ImuSample, ProcessNoise};
use crate::linalg::{is_positive_definite, symmetrize, Mat15, Vec15};
use crate::param::Parametrization;
use crate::tfg::{TfgElement, TfgTangent};

type Mat3x15 = SMatrix<f64, 3, 15>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateNode {
    pub t: f64,
    pub estimate: TfgElement,
}

/// Gaussian prior on the oldest state: `local(anchor, x) ~ N(mean, cov)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prior {
    pub anchor: TfgElement,
    pub mean: Vec15,
    pub cov: Mat15,
}

impl Prior {
    pub fn new(anchor: TfgElement, cov: Mat15) -> Self {
        Self { anchor, mean: Vec15::zeros(), cov }
    }

    /// Residual `local(anchor, x) − mean` and the chart coordinates it was built from.
    fn residual(&self, kind: Parametrization, x: &TfgElement) -> Result<(Vec15, TfgTangent)> {
        let u = kind.local(&self.anchor, x)?;
        Ok((u.to_vector() - self.mean, u))
    }
}

/// Motion model between two consecutive states.
#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    /// IMU samples held piecewise constant until `t_end`.
    Imu { samples: Vec<ImuSample>, t_end: f64, gravity: Vector3<f64>, noise: ProcessNoise },
    /// `x⁺ = x` with additive noise in the window's chart (`F = I`).
    RandomWalk { noise: Mat15 },
}

impl Dynamics {
    pub fn predict(&self, x: &TfgElement) -> TfgElement {
        match self {
            Self::Imu { samples, t_end, gravity, .. } => integrate(x, samples, *t_end, gravity),
            Self::RandomWalk { .. } => *x,
        }
    }

    /// Predicted state, Jacobian and noise in the chart of `kind`.
    pub fn transition(&self, kind: Parametrization, x: &TfgElement) -> Result<crate::imu::StepTransition> {
        match self {
            Self::Imu { samples, t_end, gravity, noise } => compound(kind, x, samples, *t_end, gravity, noise),
            Self::RandomWalk { noise } => Ok(crate::imu::StepTransition {
                jacobian: Mat15::identity(),
                noise: *noise,
                predicted: *x,
            }),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Imu { samples, t_end, noise, .. } => {
                noise.validate()?;
                check_samples(samples, *t_end)
            }
            Self::RandomWalk { noise } => {
                if !is_positive_definite(noise) {
                    return Err(Error::Numerical("random-walk noise is not positive definite".into()));
                }
                Ok(())
            }
        }
    }
}

/// Position fix `y = p + n`, `n ~ N(0, cov)`, on state `index`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionFactor {
    pub index: usize,
    pub y: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub cost_tolerance: f64,
    pub step_tolerance: f64,
    /// Zero selects plain Gauss-Newton.
    pub lm_initial_lambda: f64,
    pub window_size: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            cost_tolerance: 1e-8,
            step_tolerance: 1e-10,
            lm_initial_lambda: 1e-4,
            window_size: 5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cost_tolerance > 0.0 && self.step_tolerance > 0.0) {
            return Err(Error::Input("solver tolerances must be positive".into()));
        }
        if !(self.lm_initial_lambda >= 0.0) || !self.lm_initial_lambda.is_finite() {
            return Err(Error::Input("initial damping must be nonnegative".into()));
        }
        if self.window_size < 1 || self.max_iterations < 1 {
            return Err(Error::Input("window size and iteration limit must be at least 1".into()));
        }
        Ok(())
    }
}

/// Damping stops growing here; no descent step exists at working precision.
const MAX_LAMBDA: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    CostTolerance,
    StepTolerance,
    MaxIterations,
    /// Damping saturated without finding a decreasing step.
    Stalled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda: f64,
    pub cost_before: f64,
    /// Cost at the trial point; infinite when the trial left a chart's domain.
    pub cost_after: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Termination,
    pub trace: Vec<IterationRecord>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::CostTolerance | Termination::StepTolerance)
    }

    /// Accepted iterations whose cost went up; always empty for a correct solver.
    pub fn monotonicity_violations(&self) -> usize {
        self.trace.iter().filter(|r| r.accepted && r.cost_after > r.cost_before).count()
    }
}

/// One block row of the linearized problem: `residual + Σ J_s ξ_s` weighted by `weight⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearTerm {
    pub blocks: Vec<(usize, DMatrix<f64>)>,
    pub residual: DVector<f64>,
    pub weight: DMatrix<f64>,
}

impl LinearTerm {
    fn whitened(&self) -> Result<(Vec<(usize, DMatrix<f64>)>, DVector<f64>)> {
        let chol = Cholesky::new(self.weight.clone())
            .ok_or_else(|| Error::Numerical("factor covariance is not positive definite".into()))?;
        let l = chol.l();
        let solve = |m: &DMatrix<f64>| {
            l.solve_lower_triangular(m)
                .ok_or_else(|| Error::Numerical("singular whitening factor".into()))
        };
        let blocks = self
            .blocks
            .iter()
            .map(|(s, j)| Ok((*s, solve(j)?)))
            .collect::<Result<Vec<_>>>()?;
        let r = l
            .solve_lower_triangular(&self.residual)
            .ok_or_else(|| Error::Numerical("singular whitening factor".into()))?;
        Ok((blocks, r))
    }
}

/// Gauss-Newton normal equations `H ξ = −g` and the cost `Σ ‖r‖²_W`.
#[derive(Clone, Debug)]
struct Normal {
    h: DMatrix<f64>,
    g: DVector<f64>,
    cost: f64,
}

fn assemble(terms: &[LinearTerm], states: &[usize]) -> Result<Normal> {
    let n = 15 * states.len();
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    let mut cost = 0.0;
    for term in terms {
        let (blocks, r) = term.whitened()?;
        cost += r.norm_squared();
        for (a, ja) in &blocks {
            let Some(ia) = states.iter().position(|s| s == a) else { continue };
            g.rows_mut(15 * ia, 15).gemv_tr(1.0, ja, &r, 1.0);
            for (b, jb) in &blocks {
                let Some(ib) = states.iter().position(|s| s == b) else { continue };
                h.view_mut((15 * ia, 15 * ib), (15, 15)).gemm_tr(1.0, ja, jb, 1.0);
            }
        }
    }
    Ok(Normal { h, g, cost })
}

fn to_dmatrix<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

fn position_jacobian(x: &TfgElement) -> Mat3x15 {
    let mut h = Mat3x15::zeros();
    h.fixed_view_mut::<3, 3>(0, 6).copy_from(&(-x.rot));
    h
}

fn weighted_norm(r: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(cov.clone())
        .ok_or_else(|| Error::Numerical("factor covariance is not positive definite".into()))?;
    Ok(r.dot(&chol.solve(r)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    kind: Parametrization,
    states: Vec<StateNode>,
    prior: Prior,
    dynamics: Vec<Dynamics>,
    positions: Vec<PositionFactor>,
}

impl Window {
    /// Single-state window whose prior is anchored at the initial estimate.
    pub fn new(kind: Parametrization, t: f64, estimate: TfgElement, prior_cov: Mat15) -> Result<Self> {
        if !is_positive_definite(&prior_cov) {
            return Err(Error::Numerical("prior covariance is not positive definite".into()));
        }
        Ok(Self {
            kind,
            states: vec![StateNode { t, estimate }],
            prior: Prior::new(estimate, symmetrize(&prior_cov)),
            dynamics: Vec::new(),
            positions: Vec::new(),
        })
    }

    pub fn kind(&self) -> Parametrization {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[StateNode] {
        &self.states
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn dynamics(&self) -> &[Dynamics] {
        &self.dynamics
    }

    pub fn positions(&self) -> &[PositionFactor] {
        &self.positions
    }

    pub fn newest(&self) -> &StateNode {
        self.states.last().expect("window is never empty")
    }

    pub fn set_estimate(&mut self, index: usize, estimate: TfgElement) {
        self.states[index].estimate = estimate;
    }

    /// Appends a state at `t`, initialized by propagating the newest estimate.
    pub fn push_state(&mut self, t: f64, dynamics: Dynamics) -> Result<()> {
        let last = self.newest();
        if !(t > last.t) {
            return Err(Error::Input(format!("state time {t} not after {}", last.t)));
        }
        dynamics.validate()?;
        let estimate = dynamics.predict(&last.estimate);
        self.states.push(StateNode { t, estimate });
        self.dynamics.push(dynamics);
        Ok(())
    }

    pub fn add_position(&mut self, index: usize, y: Vector3<f64>, cov: Matrix3<f64>) -> Result<()> {
        if index >= self.states.len() {
            return Err(Error::Input(format!("position fix on missing state {index}")));
        }
        if !is_positive_definite(&cov) {
            return Err(Error::Numerical("position covariance is not positive definite".into()));
        }
        self.positions.push(PositionFactor { index, y, cov: symmetrize(&cov) });
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.states.is_empty() || self.dynamics.len() + 1 != self.states.len() {
            return Err(Error::Input("window needs one dynamics factor per consecutive pair".into()));
        }
        if !is_positive_definite(&self.prior.cov) {
            return Err(Error::Numerical("prior covariance is not positive definite".into()));
        }
        for d in &self.dynamics {
            d.validate()?;
        }
        for f in &self.positions {
            if f.index >= self.states.len() || !is_positive_definite(&f.cov) {
                return Err(Error::Input("invalid position factor".into()));
            }
        }
        Ok(())
    }

    fn estimates(&self) -> Vec<TfgElement> {
        self.states.iter().map(|s| s.estimate).collect()
    }

    /// Linearized problem at the current estimates.
    pub fn linearize(&self) -> Result<Vec<LinearTerm>> {
        self.terms(&self.estimates(), None)
    }

    fn process_noises(&self) -> Result<Vec<Mat15>> {
        self.dynamics
            .iter()
            .zip(&self.states)
            .map(|(d, s)| Ok(d.transition(self.kind, &s.estimate)?.noise))
            .collect()
    }

    /// Linearized terms at `xs`. With `frozen`, dynamics noises come from it instead of
    /// being recompounded.
    fn terms(&self, xs: &[TfgElement], frozen: Option<&[Mat15]>) -> Result<Vec<LinearTerm>> {
        let kind = self.kind;
        let mut terms = Vec::with_capacity(1 + self.dynamics.len() + self.positions.len());

        let (r, u) = self.prior.residual(kind, &xs[0])?;
        let j = kind.local_jacobian(&u)?;
        let j_inv = j
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular prior chart Jacobian".into()))?;
        terms.push(LinearTerm {
            blocks: vec![(0, DMatrix::identity(15, 15))],
            residual: DVector::from_column_slice((j_inv * r).as_slice()),
            weight: to_dmatrix(&kind.prior_weight(&u, &self.prior.cov)?),
        });

        for (i, d) in self.dynamics.iter().enumerate() {
            let tr = d.transition(kind, &xs[i])?;
            let u = kind.local(&tr.predicted, &xs[i + 1])?;
            let noise = frozen.map_or(tr.noise, |q| q[i]);
            terms.push(LinearTerm {
                blocks: vec![(i, to_dmatrix(&-tr.jacobian)), (i + 1, DMatrix::identity(15, 15))],
                residual: DVector::from_column_slice(u.to_vector().as_slice()),
                weight: to_dmatrix(&noise),
            });
        }

        for f in &self.positions {
            let x = &xs[f.index];
            terms.push(LinearTerm {
                blocks: vec![(f.index, to_dmatrix(&position_jacobian(x)))],
                residual: DVector::from_column_slice((f.y - x.pos).as_slice()),
                weight: to_dmatrix(&f.cov),
            });
        }
        Ok(terms)
    }

    /// Nonlinear cost at `xs` with dynamics noises `q`.
    fn cost(&self, xs: &[TfgElement], q: &[Mat15]) -> Result<f64> {
        let kind = self.kind;
        let (r, _) = self.prior.residual(kind, &xs[0])?;
        let mut cost = weighted_norm(
            &DVector::from_column_slice(r.as_slice()),
            &to_dmatrix(&self.prior.cov),
        )?;
        for (i, d) in self.dynamics.iter().enumerate() {
            let u = kind.local(&d.predict(&xs[i]), &xs[i + 1])?;
            cost += weighted_norm(&DVector::from_column_slice(u.to_vector().as_slice()), &to_dmatrix(&q[i]))?;
        }
        for f in &self.positions {
            let r = f.y - xs[f.index].pos;
            cost += weighted_norm(&DVector::from_column_slice(r.as_slice()), &to_dmatrix(&f.cov))?;
        }
        Ok(cost)
    }

    fn all_indices(&self) -> Vec<usize> {
        (0..self.states.len()).collect()
    }

    fn retract_all(&self, xs: &[TfgElement], step: &DVector<f64>) -> Vec<TfgElement> {
        xs.iter()
            .enumerate()
            .map(|(i, x)| {
                let xi = Vec15::from_column_slice(step.rows(15 * i, 15).as_slice());
                self.kind.retract(x, &TfgTangent::from_vector(&xi))
            })
            .collect()
    }

    /// Levenberg-Marquardt (or Gauss-Newton when the initial damping is zero) on the
    /// window. Dynamics noises are compounded once at the initial estimates and held
    /// fixed, so every trace entry compares costs of the same function.
    pub fn solve(&mut self, cfg: &SolverConfig) -> Result<SolveReport> {
        cfg.validate()?;
        let gauss_newton = cfg.lm_initial_lambda == 0.0;
        let q = self.process_noises()?;
        let indices = self.all_indices();
        let mut xs = self.estimates();
        let mut normal = assemble(&self.terms(&xs, Some(&q))?, &indices)?;
        let initial_cost = normal.cost;
        let mut lambda = cfg.lm_initial_lambda;
        let mut trace = Vec::new();
        let mut termination = Termination::MaxIterations;

        for iteration in 0..cfg.max_iterations {
            let mut damped = normal.h.clone();
            for k in 0..damped.nrows() {
                damped[(k, k)] += lambda * normal.h[(k, k)];
            }
            let Some(chol) = Cholesky::new(damped) else {
                if gauss_newton || lambda >= MAX_LAMBDA {
                    return Err(Error::SolverFailure { iteration });
                }
                lambda = (lambda * 10.0).max(1e-8);
                continue;
            };
            let step = -chol.solve(&normal.g);
            let step_norm = step.norm();
            if step_norm < cfg.step_tolerance {
                termination = Termination::StepTolerance;
                break;
            }

            let trial = self.retract_all(&xs, &step);
            let trial_cost = self.cost(&trial, &q).ok().filter(|c| c.is_finite());
            let accepted = match trial_cost {
                Some(c) => gauss_newton || c < normal.cost,
                None => false,
            };
            let cost_before = normal.cost;
            trace.push(IterationRecord {
                iteration,
                lambda,
                cost_before,
                cost_after: trial_cost.unwrap_or(f64::INFINITY),
                step_norm,
                accepted,
            });

            if accepted {
                xs = trial;
                normal = assemble(&self.terms(&xs, Some(&q))?, &indices)?;
                lambda /= 10.0;
                let change = (cost_before - normal.cost).abs() / cost_before.max(f64::MIN_POSITIVE);
                if change < cfg.cost_tolerance {
                    termination = Termination::CostTolerance;
                    break;
                }
            } else if gauss_newton {
                return Err(Error::SolverFailure { iteration });
            } else {
                lambda = (lambda * 10.0).max(1e-8);
                if lambda > MAX_LAMBDA {
                    termination = Termination::Stalled;
                    break;
                }
            }
        }

        for (s, x) in self.states.iter_mut().zip(&xs) {
            s.estimate = *x;
        }
        Ok(SolveReport {
            iterations: trace.len(),
            initial_cost,
            final_cost: normal.cost,
            termination,
            trace,
        })
    }

    /// Gauss-Newton information matrix of the whole window at the current estimates.
    fn information(&self) -> Result<DMatrix<f64>> {
        Ok(assemble(&self.linearize()?, &self.all_indices())?.h)
    }

    /// Marginal covariance of state `index`, in the chart of the window's kind.
    pub fn covariance_at(&self, index: usize) -> Result<Mat15> {
        if index >= self.states.len() {
            return Err(Error::Input(format!("no state {index} in window")));
        }
        let cov = Cholesky::new(self.information()?)
            .ok_or_else(|| Error::Numerical("window information matrix is singular".into()))?
            .inverse();
        let block = Mat15::from_fn(|r, c| cov[(15 * index + r, 15 * index + c)]);
        Ok(symmetrize(&block))
    }

    /// Eliminates the oldest state by a Schur complement of the problem linearized at
    /// the current estimates; the result becomes a dense prior on the next state.
    pub fn marginalize_oldest(&mut self) -> Result<()> {
        if self.states.len() < 2 {
            return Err(Error::Input("cannot marginalize the only state".into()));
        }
        let touching: Vec<LinearTerm> = self
            .linearize()?
            .into_iter()
            .filter(|t| t.blocks.iter().any(|(s, _)| *s == 0))
            .collect();
        let normal = assemble(&touching, &[0, 1])?;
        let h = &normal.h;
        let h00 = h.view((0, 0), (15, 15)).into_owned();
        let h01 = h.view((0, 15), (15, 15)).into_owned();
        let h11 = h.view((15, 15), (15, 15)).into_owned();
        let chol00 = Cholesky::new(h00)
            .ok_or_else(|| Error::Numerical("oldest state's information block is singular".into()))?;
        let info = h11 - h01.transpose() * chol00.solve(&h01);
        let grad = normal.g.rows(15, 15) - h01.transpose() * chol00.solve(&normal.g.rows(0, 15).into_owned());
        let info = 0.5 * (&info + info.transpose());
        let chol = Cholesky::new(info)
            .ok_or_else(|| Error::Numerical("marginal information is singular".into()))?;
        let cov = chol.inverse();
        let mean = -&cov * grad;

        self.prior = Prior {
            anchor: self.states[1].estimate,
            mean: Vec15::from_column_slice(mean.as_slice()),
            cov: symmetrize(&Mat15::from_column_slice(cov.as_slice())),
        };
        self.states.remove(0);
        self.dynamics.remove(0);
        self.positions.retain(|f| f.index != 0);
        for f in &mut self.positions {
            f.index -= 1;
        }
        Ok(())
    }

    /// One epoch: appends a state, attaches an optional fix, keeps the window within
    /// `cfg.window_size` and solves.
    pub fn advance(
        &mut self,
        t: f64,
        dynamics: Dynamics,
        fix: Option<(Vector3<f64>, Matrix3<f64>)>,
        cfg: &SolverConfig,
    ) -> Result<SolveReport> {
        self.push_state(t, dynamics)?;
        if let Some((y, cov)) = fix {
            self.add_position(self.states.len() - 1, y, cov)?;
        }
        while self.states.len() > cfg.window_size {
            self.marginalize_oldest()?;
        }
        self.solve(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::GRAVITY;
    use crate::so3::{exp_so3, from_euler_zyx, yaw_of};
    use crate::tfg::testing::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as Gauss};

    fn nominal_noise() -> ProcessNoise {
        ProcessNoise { sigma_a: 0.05, sigma_w: 0.01, sigma_ba: 0.002, sigma_bw: 3e-5 }
    }

    fn prior_cov() -> Mat15 {
        let sig = [100f64.to_radians(), 10.0, 1.0, 0.06, 0.07];
        Mat15::from_diagonal(&Vec15::from_fn(|k, _| sig[k / 3] * sig[k / 3]))
    }

    /// Truth states one second apart and the IMU samples between them, driven by a
    /// constant yaw rate and a small forward push.
    fn turning_truth(epochs: usize, yaw_rate: f64) -> (Vec<TfgElement>, Vec<Vec<ImuSample>>) {
        let dt = 0.01;
        let mut x = TfgElement { vel: Vector3::new(5.0, 0.0, 0.0), ..TfgElement::identity() };
        let mut states = vec![x];
        let mut segments = Vec::new();
        for e in 0..epochs - 1 {
            let mut samples = Vec::new();
            for k in 0..100 {
                let u = ImuSample {
                    t: e as f64 + k as f64 * dt,
                    omega: Vector3::new(0.0, 0.0, yaw_rate),
                    accel: x.rot.transpose() * -GRAVITY + Vector3::new(0.3, 0.0, 0.0),
                };
                x = crate::imu::propagate(&x, &u, dt, &GRAVITY);
                samples.push(u);
            }
            states.push(x);
            segments.push(samples);
        }
        (states, segments)
    }

    fn imu_dynamics(samples: &[ImuSample], t_end: f64) -> Dynamics {
        Dynamics::Imu { samples: samples.to_vec(), t_end, gravity: GRAVITY, noise: nominal_noise() }
    }

    fn run_window(kind: Parametrization, init_yaw_error: f64, window: usize) -> (Window, Vec<SolveReport>, Vec<TfgElement>) {
        let (truth, segments) = turning_truth(12, 0.2);
        let x0 = TfgElement { rot: exp_so3(&Vector3::new(0.0, 0.0, init_yaw_error)), ..truth[0] };
        let mut w = Window::new(kind, 0.0, x0, prior_cov()).unwrap();
        w.add_position(0, truth[0].pos, Matrix3::identity()).unwrap();
        let cfg = SolverConfig { window_size: window, ..SolverConfig::default() };
        let mut reports = vec![w.solve(&cfg).unwrap()];
        for (e, seg) in segments.iter().enumerate() {
            let t = (e + 1) as f64;
            let fix = Some((truth[e + 1].pos, Matrix3::identity()));
            reports.push(w.advance(t, imu_dynamics(seg, t), fix, &cfg).unwrap());
            assert!(w.len() <= window);
            w.check_invariants().unwrap();
        }
        (w, reports, truth)
    }

    #[test]
    fn consistent_window_has_zero_residuals() {
        let (truth, segments) = turning_truth(4, 0.3);
        for kind in Parametrization::ALL {
            let mut w = Window::new(kind, 0.0, truth[0], prior_cov()).unwrap();
            for (e, seg) in segments.iter().enumerate() {
                w.push_state((e + 1) as f64, imu_dynamics(seg, (e + 1) as f64)).unwrap();
                w.set_estimate(e + 1, truth[e + 1]);
            }
            for (i, x) in truth.iter().enumerate() {
                w.add_position(i, x.pos, Matrix3::identity()).unwrap();
            }
            for term in w.linearize().unwrap() {
                assert!(term.residual.amax() < 1e-12, "{kind}");
            }
            let report = w.solve(&SolverConfig::default()).unwrap();
            assert!(report.iterations <= 1 && report.converged());
            assert!(max_diff(&w.states()[3].estimate, &truth[3]) < 1e-12);
        }
    }

    #[test]
    fn position_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..50 {
            let x = random_element(&mut rng);
            let y = random_vec3(&mut rng, 10.0);
            for kind in Parametrization::ALL {
                let h = position_jacobian(&x);
                let mut fd = Mat3x15::zeros();
                let eps = 1e-6;
                for k in 0..15 {
                    let mut d = Vec15::zeros();
                    d[k] = eps;
                    let plus = y - kind.retract(&x, &TfgTangent::from_vector(&d)).pos;
                    let minus = y - kind.retract(&x, &TfgTangent::from_vector(&-d)).pos;
                    fd.set_column(k, &((plus - minus) / (2.0 * eps)));
                }
                assert!((fd - h).norm() / h.norm() < 1e-5, "{kind}");
            }
        }
    }

    #[test]
    fn prior_only_window_jumps_to_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for kind in Parametrization::ALL {
            let anchor = random_element(&mut rng);
            let start = kind.retract(&anchor, &random_tangent(&mut rng, 1.0, 1.0));
            let mut w = Window::new(kind, 0.0, anchor, prior_cov()).unwrap();
            w.set_estimate(0, start);
            let p0 = kind.local(&anchor, &start).unwrap();
            let mut gn = w.clone();
            let cfg = SolverConfig { lm_initial_lambda: 0.0, max_iterations: 1, ..SolverConfig::default() };
            gn.solve(&cfg).unwrap();
            // one exact Gauss-Newton step lands on the anchor: ξ₀ = −J⁻¹p₀ (= −p₀ for the group charts)
            assert!(max_diff(&gn.states()[0].estimate, &anchor) < 1e-9, "{kind}");
            if kind == Parametrization::Tfg {
                let xi = TfgTangent::from_vector(&-p0.to_vector());
                assert!(max_diff(&kind.retract(&start, &xi), &anchor) < 1e-9);
            }
            let cov = gn.covariance_at(0).unwrap();
            assert!((cov - prior_cov()).amax() < 1e-9 * prior_cov().amax());
        }
    }

    #[test]
    fn covariance_of_prior_only_window_is_prior_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let anchor = random_element(&mut rng);
        for kind in Parametrization::ALL {
            let mut w = Window::new(kind, 0.0, anchor, prior_cov()).unwrap();
            let off = kind.retract(&anchor, &random_tangent(&mut rng, 0.5, 0.5));
            w.set_estimate(0, off);
            let u = kind.local(&anchor, &off).unwrap();
            let expected = kind.prior_weight(&u, &prior_cov()).unwrap();
            let cov = w.covariance_at(0).unwrap();
            assert!((cov - expected).amax() < 1e-9 * expected.amax(), "{kind}");
            assert!(is_positive_definite(&cov) && cov == cov.transpose());
        }
    }

    /// Identity rotations, random-walk dynamics and position fixes: a linear-Gaussian
    /// model in the LINEAR chart. The oracle conditions the joint Gaussian directly.
    struct LinearChain {
        n: usize,
        x0: Vec15,
        p0: Mat15,
        q: Mat15,
        fixes: Vec<(usize, Vector3<f64>)>,
        r: Matrix3<f64>,
    }

    impl LinearChain {
        fn random(n: usize, seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x0 = Vec15::from_fn(|_, _| Gauss::new(0.0, 1.0).unwrap().sample(&mut rng));
            x0.fixed_rows_mut::<3>(0).fill(0.0);
            let a = Mat15::from_fn(|_, _| Gauss::new(0.0, 0.3).unwrap().sample(&mut rng));
            let p0 = a * a.transpose() + Mat15::identity();
            let b = Mat15::from_fn(|_, _| Gauss::new(0.0, 0.1).unwrap().sample(&mut rng));
            let mut q = b * b.transpose() + 0.05 * Mat15::identity();
            // rotation decoupled so that rotations stay exactly at identity
            for i in 0..3 {
                for j in 3..15 {
                    q[(i, j)] = 0.0;
                    q[(j, i)] = 0.0;
                }
            }
            let mut p0 = p0;
            for i in 0..3 {
                for j in 3..15 {
                    p0[(i, j)] = 0.0;
                    p0[(j, i)] = 0.0;
                }
            }
            let fixes = (0..n)
                .filter(|k| k % 3 != 1)
                .map(|k| (k, Vector3::new(k as f64, -0.5 * k as f64, 1.0) + random_vec3(&mut rng, 1.0)))
                .collect();
            Self { n, x0, p0, q, fixes, r: Matrix3::new(0.5, 0.1, 0.0, 0.1, 0.4, 0.0, 0.0, 0.0, 0.3) }
        }

        fn element(v: &Vec15) -> TfgElement {
            let t = TfgTangent::from_vector(v);
            TfgElement { rot: Matrix3::identity(), vel: t.vel, pos: t.pos, acc_bias: t.acc_bias, gyro_bias: t.gyro_bias }
        }

        /// Posterior mean and covariance of the full chain given fixes up to `upto`.
        fn oracle(&self, upto: usize) -> (DVector<f64>, DMatrix<f64>) {
            let m = upto + 1;
            let n = 15 * m;
            let mut mean = DVector::zeros(n);
            let mut cov = DMatrix::zeros(n, n);
            for i in 0..m {
                mean.rows_mut(15 * i, 15).copy_from(&self.x0);
                for j in 0..m {
                    let k = i.min(j);
                    let block = self.p0 + self.q * k as f64;
                    cov.view_mut((15 * i, 15 * j), (15, 15)).copy_from(&block);
                }
            }
            let fixes: Vec<_> = self.fixes.iter().filter(|(k, _)| *k <= upto).collect();
            let mut h = DMatrix::zeros(3 * fixes.len(), n);
            let mut y = DVector::zeros(3 * fixes.len());
            let mut r = DMatrix::zeros(3 * fixes.len(), 3 * fixes.len());
            for (row, (k, yk)) in fixes.iter().enumerate() {
                for a in 0..3 {
                    h[(3 * row + a, 15 * k + 6 + a)] = 1.0;
                    y[3 * row + a] = yk[a];
                }
                r.view_mut((3 * row, 3 * row), (3, 3)).copy_from(&self.r);
            }
            let s = &h * &cov * h.transpose() + r;
            let gain = &cov * h.transpose() * s.try_inverse().unwrap();
            let post_mean = &mean + &gain * (y - &h * &mean);
            let post_cov = &cov - &gain * &h * &cov;
            (post_mean, post_cov)
        }
    }

    #[test]
    fn sliding_window_matches_batch_oracle() {
        let chain = LinearChain::random(10, 43);
        let cfg = SolverConfig { window_size: 4, lm_initial_lambda: 0.0, ..SolverConfig::default() };
        let mut w = Window::new(Parametrization::Linear, 0.0, LinearChain::element(&chain.x0), chain.p0).unwrap();
        let add_fix = |w: &mut Window, k: usize| {
            if let Some((_, y)) = chain.fixes.iter().find(|(i, _)| *i == k) {
                let idx = w.len() - 1;
                w.add_position(idx, *y, chain.r).unwrap();
            }
        };
        add_fix(&mut w, 0);
        w.solve(&cfg).unwrap();
        for k in 1..chain.n {
            w.push_state(k as f64, Dynamics::RandomWalk { noise: chain.q }).unwrap();
            add_fix(&mut w, k);
            while w.len() > cfg.window_size {
                w.marginalize_oldest().unwrap();
            }
            w.solve(&cfg).unwrap();

            let (mean, cov) = chain.oracle(k);
            let first = k + 1 - w.len();
            for (i, s) in w.states().iter().enumerate() {
                let g = first + i;
                let expected = mean.rows(15 * g, 15);
                let got = TfgTangent {
                    rot: crate::so3::log_so3(&s.estimate.rot).unwrap(),
                    vel: s.estimate.vel,
                    pos: s.estimate.pos,
                    acc_bias: s.estimate.acc_bias,
                    gyro_bias: s.estimate.gyro_bias,
                }
                .to_vector();
                assert!((got - expected).amax() < 1e-9, "epoch {k} state {g}");
                let c = w.covariance_at(i).unwrap();
                let expected_cov = cov.view((15 * g, 15 * g), (15, 15));
                assert!((c - expected_cov).amax() < 1e-9, "epoch {k} state {g}");
            }
        }
    }

    #[test]
    fn marginalizing_pair_keeps_joint_marginal() {
        let chain = LinearChain::random(2, 44);
        let mut w = Window::new(Parametrization::Linear, 0.0, LinearChain::element(&chain.x0), chain.p0).unwrap();
        w.add_position(0, chain.fixes[0].1, chain.r).unwrap();
        w.push_state(1.0, Dynamics::RandomWalk { noise: chain.q }).unwrap();
        let cfg = SolverConfig { lm_initial_lambda: 0.0, ..SolverConfig::default() };
        w.solve(&cfg).unwrap();
        let joint = w.covariance_at(1).unwrap();
        let before = w.states()[1].estimate;
        w.marginalize_oldest().unwrap();
        w.check_invariants().unwrap();
        assert_eq!(w.len(), 1);
        assert!((w.covariance_at(0).unwrap() - joint).amax() < 1e-10);
        // already optimal, so the marginal prior is centered on the estimate
        assert!(w.prior().mean.amax() < 1e-10);
        w.solve(&cfg).unwrap();
        assert!(max_diff(&w.states()[0].estimate, &before) < 1e-10);
    }

    #[test]
    fn noiseless_window_recovers_truth() {
        for kind in Parametrization::ALL {
            let (w, reports, truth) = run_window(kind, 0.0, 5);
            assert!(reports.iter().all(|r| r.monotonicity_violations() == 0));
            let offset = truth.len() - w.len();
            for f in w.positions() {
                assert!((f.y - w.states()[f.index].estimate.pos).norm() < 1e-8, "{kind}");
            }
            for (i, s) in w.states().iter().enumerate() {
                assert!((s.estimate.pos - truth[offset + i].pos).norm() < 1e-8, "{kind}");
            }
        }
    }

    #[test]
    fn lm_trace_is_monotone_from_large_yaw_error() {
        for kind in Parametrization::ALL {
            let (w, reports, truth) = run_window(kind, 90f64.to_radians(), 5);
            for r in &reports {
                assert_eq!(r.monotonicity_violations(), 0, "{kind}");
                let accepted: Vec<f64> = r.trace.iter().filter(|t| t.accepted).map(|t| t.cost_after).collect();
                assert!(accepted.windows(2).all(|p| p[1] <= p[0]), "{kind}");
                assert!(r.final_cost <= r.initial_cost);
            }
            let yaw_err = yaw_of(&(w.newest().estimate.rot.transpose() * truth.last().unwrap().rot));
            assert!(yaw_err.is_finite());
        }
    }

    #[test]
    fn tfg_dynamics_residuals_invariant_under_yaw_translation() {
        let (truth, segments) = turning_truth(4, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let mut w = Window::new(Parametrization::Tfg, 0.0, truth[0], prior_cov()).unwrap();
        for (e, seg) in segments.iter().enumerate() {
            w.push_state((e + 1) as f64, imu_dynamics(seg, (e + 1) as f64)).unwrap();
        }
        // perturb the estimates so that residuals are nonzero
        for i in 0..w.len() {
            let x = w.states()[i].estimate;
            let mut xi = random_tangent(&mut rng, 0.3, 0.5);
            xi.gyro_bias = Vector3::zeros();
            w.set_estimate(i, x.compose(&TfgElement::exp(&xi)));
        }
        let g = TfgElement {
            rot: from_euler_zyx(0.0, 0.0, 1.3),
            pos: Vector3::new(3.0, -2.0, 7.0),
            ..TfgElement::identity()
        };
        let mut moved = w.clone();
        for i in 0..w.len() {
            moved.set_estimate(i, g.compose(&w.states()[i].estimate));
        }
        let (a, b) = (w.linearize().unwrap(), moved.linearize().unwrap());
        for (ta, tb) in a.iter().zip(&b).skip(1).take(w.dynamics().len()) {
            assert!((&ta.residual - &tb.residual).amax() < 1e-10);
        }
    }

    #[test]
    fn marginalizing_single_state_fails() {
        let mut w = Window::new(Parametrization::Tfg, 0.0, TfgElement::identity(), prior_cov()).unwrap();
        assert!(w.marginalize_oldest().is_err());
        assert!(w.push_state(0.0, Dynamics::RandomWalk { noise: Mat15::identity() }).is_err());
    }

    #[test]
    fn singular_problem_reports_iteration() {
        let mut w = Window::new(Parametrization::Tfg, 0.0, TfgElement::identity(), prior_cov()).unwrap();
        w.prior.cov = Mat15::zeros();
        assert!(w.solve(&SolverConfig::default()).is_err());
    }
}
