//! Fixed-step classical RK4 integration with trajectory logging.

use nalgebra::DVector;

use super::{accelerations, energies};
use crate::error::{Error, Result};
use crate::model::RobotModel;

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: DVector<f64>,
    pub q_dot: DVector<f64>,
    pub t: f64,
}

impl State {
    pub fn new(q: DVector<f64>, q_dot: DVector<f64>) -> Self {
        Self { q, q_dot, t: 0.0 }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self::new(q, DVector::zeros(n))
    }

    fn is_finite(&self) -> bool {
        self.q.iter().chain(self.q_dot.iter()).all(|x| x.is_finite())
    }

    fn advanced(&self, dq: &DVector<f64>, dv: &DVector<f64>, h: f64) -> State {
        State {
            q: &self.q + dq * h,
            q_dot: &self.q_dot + dv * h,
            t: self.t + h,
        }
    }
}

/// Source of actuator torques. Evaluated at every RK4 stage; `end_step` is
/// called once per accepted step for controllers that carry internal state.
pub trait Controller {
    fn torque(&mut self, state: &State) -> Result<DVector<f64>>;

    fn end_step(&mut self, _state: &State, _dt: f64) {}
}

impl<F> Controller for F
where
    F: FnMut(&State) -> DVector<f64>,
{
    fn torque(&mut self, state: &State) -> Result<DVector<f64>> {
        Ok(self(state))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub q: DVector<f64>,
    pub q_dot: DVector<f64>,
    pub tau: DVector<f64>,
    pub kinetic: f64,
    pub elastic: f64,
    pub gravitational: f64,
    /// Lyapunov value, `NaN` when no Lyapunov function was attached.
    pub lyapunov: f64,
}

impl LogRow {
    pub fn total_energy(&self) -> f64 {
        self.kinetic + self.elastic + self.gravitational
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    /// Largest per-step increase of the logged Lyapunov value.
    pub fn max_lyapunov_increase(&self) -> Option<f64> {
        if self.rows.iter().any(|r| r.lyapunov.is_nan()) {
            return None;
        }
        Some(
            self.rows
                .windows(2)
                .map(|w| w[1].lyapunov - w[0].lyapunov)
                .fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

type ExternalForce<'a> = Box<dyn Fn(&State) -> DVector<f64> + 'a>;
type LyapunovFn<'a> = Box<dyn Fn(&State) -> f64 + 'a>;

/// Simulation setup: model, step size, optional clamped coordinates,
/// external generalized forces and a Lyapunov function to log.
pub struct Simulation<'a> {
    model: &'a RobotModel,
    dt: f64,
    clamped: Vec<usize>,
    external: Option<ExternalForce<'a>>,
    lyapunov: Option<LyapunovFn<'a>>,
    log_every: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(model: &'a RobotModel, dt: f64) -> Self {
        Self {
            model,
            dt,
            clamped: Vec::new(),
            external: None,
            lyapunov: None,
            log_every: 1,
        }
    }

    /// Holds the given coordinates fixed at their initial values.
    pub fn clamp(mut self, idx: Vec<usize>) -> Self {
        self.clamped = idx;
        self
    }

    pub fn with_external(mut self, f: impl Fn(&State) -> DVector<f64> + 'a) -> Self {
        self.external = Some(Box::new(f));
        self
    }

    pub fn with_lyapunov(mut self, f: impl Fn(&State) -> f64 + 'a) -> Self {
        self.lyapunov = Some(Box::new(f));
        self
    }

    /// Logs every `k`-th step (plus the initial state).
    pub fn log_every(mut self, k: usize) -> Self {
        self.log_every = k.max(1);
        self
    }

    fn derivative(&self, state: &State, controller: &mut dyn Controller) -> Result<(DVector<f64>, DVector<f64>)> {
        let tau = controller.torque(state)?;
        let mut input = &self.model.actuation * tau;
        if let Some(f) = &self.external {
            input += f(state);
        }
        if !state.is_finite() || input.iter().any(|x| !x.is_finite()) {
            // Propagate to the end of the step, where it is reported as divergence.
            let nan = DVector::from_element(state.q.len(), f64::NAN);
            return Ok((nan.clone(), nan));
        }
        let acc = accelerations(self.model, &state.q, &state.q_dot, &input, &self.clamped)?;
        let mut vel = state.q_dot.clone();
        for &i in &self.clamped {
            vel[i] = 0.0;
        }
        Ok((vel, acc))
    }

    fn row(&self, state: &State, controller: &mut dyn Controller) -> Result<LogRow> {
        let tau = controller.torque(state)?;
        let e = energies(self.model, &state.q, &state.q_dot)?;
        Ok(LogRow {
            t: state.t,
            q: state.q.clone(),
            q_dot: state.q_dot.clone(),
            tau,
            kinetic: e.kinetic,
            elastic: e.elastic,
            gravitational: e.gravitational,
            lyapunov: self.lyapunov.as_ref().map_or(f64::NAN, |f| f(state)),
        })
    }

    /// One classical RK4 step.
    pub fn advance(&self, state: &State, controller: &mut dyn Controller) -> Result<State> {
        let h = self.dt;
        let (k1q, k1v) = self.derivative(state, controller)?;
        let s2 = state.advanced(&k1q, &k1v, 0.5 * h);
        let (k2q, k2v) = self.derivative(&s2, controller)?;
        let s3 = state.advanced(&k2q, &k2v, 0.5 * h);
        let (k3q, k3v) = self.derivative(&s3, controller)?;
        let s4 = state.advanced(&k3q, &k3v, h);
        let (k4q, k4v) = self.derivative(&s4, controller)?;
        let dq = (k1q + 2.0 * k2q + 2.0 * k3q + k4q) / 6.0;
        let dv = (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0;
        let mut next = state.advanced(&dq, &dv, h);
        for &i in &self.clamped {
            next.q_dot[i] = 0.0;
        }
        Ok(next)
    }

    pub fn run(&self, initial: &State, controller: &mut dyn Controller, n_steps: usize) -> Result<TrajectoryLog> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {}", self.dt)));
        }
        self.model.check_q(&initial.q)?;
        self.model.check_q(&initial.q_dot)?;
        let mut state = initial.clone();
        for &i in &self.clamped {
            state.q_dot[i] = 0.0;
        }
        let mut log = TrajectoryLog::default();
        log.rows.reserve(n_steps / self.log_every + 1);
        log.rows.push(self.row(&state, controller)?);
        for step in 1..=n_steps {
            let next = self.advance(&state, controller)?;
            if !next.is_finite() {
                return Err(Error::Divergence { step, time: next.t });
            }
            // Keep t an exact multiple of dt.
            state = State { t: step as f64 * self.dt + initial.t, ..next };
            controller.end_step(&state, self.dt);
            if step % self.log_every == 0 || step == n_steps {
                log.rows.push(self.row(&state, controller)?);
            }
        }
        Ok(log)
    }
}

/// Integrates `n_steps` RK4 steps of size `dt`, re-evaluating the torque at
/// every stage.
pub fn step<F>(model: &RobotModel, state: &State, mut tau_provider: F, dt: f64, n_steps: usize) -> Result<TrajectoryLog>
where
    F: FnMut(&State) -> DVector<f64>,
{
    Simulation::new(model, dt).run(state, &mut tau_provider, n_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{CouplingFamily, CouplingSpec};
    use crate::model::{presets, Chain, LinkGeometry};
    use std::f64::consts::PI;

    fn zero_tau(m: usize) -> impl FnMut(&State) -> DVector<f64> {
        move |_| DVector::zeros(m)
    }

    fn double_pendulum(damping: f64) -> RobotModel {
        RobotModel::new(vec![Chain::new([0.0, 0.0], vec![LinkGeometry::uniform_rod(1.0, 0.1); 2])])
            .with_uniform_stiffness(0.3)
            .with_uniform_damping(damping)
            .with_coupling(CouplingSpec::coordinates(CouplingFamily::Linear, 0.5, 0, 1))
    }

    #[test]
    fn undamped_energy_is_conserved() {
        let model = double_pendulum(0.0);
        let s0 = State::new(DVector::from_vec(vec![0.6, -0.4]), DVector::from_vec(vec![0.0, 1.0]));
        let log = step(&model, &s0, zero_tau(2), 1e-3, 10_000).unwrap();
        let e0 = log.rows[0].total_energy();
        let drift = log.rows.iter().map(|r| (r.total_energy() - e0).abs()).fold(0.0, f64::max);
        assert!(drift / e0.abs() < 1e-6, "relative drift {}", drift / e0.abs());
    }

    #[test]
    fn damped_energy_never_increases() {
        let model = double_pendulum(0.2);
        let s0 = State::new(DVector::from_vec(vec![1.0, -0.4]), DVector::from_vec(vec![0.5, 1.0]));
        let log = step(&model, &s0, zero_tau(2), 1e-3, 5_000).unwrap();
        for w in log.rows.windows(2) {
            assert!(w[1].total_energy() <= w[0].total_energy() + 1e-12);
        }
    }

    #[test]
    fn free_coasting_without_forces() {
        let model = RobotModel::new(vec![Chain::new([0.0, 0.0], vec![LinkGeometry::uniform_rod(1.0, 0.1); 2])])
            .with_gravity([0.0, 0.0]);
        let s0 = State::new(DVector::from_vec(vec![0.0, 0.5]), DVector::from_vec(vec![1.0, -0.5]));
        let log = step(&model, &s0, zero_tau(2), 1e-3, 2_000).unwrap();
        let e0 = log.rows[0].kinetic;
        assert!((log.last().unwrap().kinetic - e0).abs() < 1e-9);
        assert_eq!(log.rows[0].elastic, 0.0);
    }

    #[test]
    fn row_count_and_time_grid() {
        let model = presets::finger();
        let log = step(&model, &State::at_rest(DVector::zeros(3)), zero_tau(2), 0.01, 100).unwrap();
        assert_eq!(log.len(), 101);
        assert_eq!(log.last().unwrap().t, 1.0);
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        let model = double_pendulum(0.1);
        let s0 = State::new(DVector::from_vec(vec![0.8, -0.3]), DVector::zeros(2));
        let t_end = 1.0;
        let run = |dt: f64| {
            let n = (t_end / dt).round() as usize;
            step(&model, &s0, zero_tau(2), dt, n).unwrap().last().unwrap().q.clone()
        };
        let reference = run(1e-4);
        let e1 = (run(0.02) - &reference).norm();
        let e2 = (run(0.01) - &reference).norm();
        let ratio = e1 / e2;
        assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
    }

    #[test]
    fn pendulum_small_oscillation_period() {
        let k_d = 0.2;
        let model = RobotModel::new(vec![Chain::new([0.0, 0.0], vec![LinkGeometry::uniform_rod(1.0, 0.1)])])
            .with_stiffness(vec![k_d])
            .with_gravity([9.81, 0.0]); // hanging along +x, small-angle stable about q = 0
        let s0 = State::new(DVector::from_vec(vec![0.01]), DVector::zeros(1));
        let log = step(&model, &s0, zero_tau(1), 1e-3, 10_000).unwrap();
        // Upward zero crossings of q.
        let crossings: Vec<f64> = log
            .rows
            .windows(2)
            .filter(|w| w[0].q[0] < 0.0 && w[1].q[0] >= 0.0)
            .map(|w| {
                let (a, b) = (w[0].q[0], w[1].q[0]);
                w[0].t + (w[1].t - w[0].t) * (-a) / (b - a)
            })
            .collect();
        let period = (crossings.last().unwrap() - crossings[0]) / (crossings.len() - 1) as f64;
        let omega = ((0.1 * 9.81 * 0.5 + k_d) / (0.1 / 3.0)).sqrt();
        let expected = 2.0 * PI / omega;
        assert!((period - expected).abs() / expected < 0.01, "{period} vs {expected}");
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let model = presets::finger();
        let mut boom = |s: &State| {
            if s.t > 0.047 {
                DVector::from_element(2, f64::NAN)
            } else {
                DVector::zeros(2)
            }
        };
        let err = step(&model, &State::at_rest(DVector::zeros(3)), &mut boom, 0.01, 20).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 5, .. }), "{err}");
    }

    #[test]
    fn clamped_coordinates_stay_fixed() {
        let model = presets::finger();
        let s0 = State::new(DVector::from_vec(vec![0.2, -0.3, 0.9]), DVector::from_vec(vec![1.0, 1.0, 0.0]));
        let log = Simulation::new(&model, 1e-3)
            .clamp(vec![0, 1])
            .run(&s0, &mut zero_tau(2), 500)
            .unwrap();
        let last = log.last().unwrap();
        assert_eq!(last.q[0], 0.2);
        assert_eq!(last.q[1], -0.3);
        assert_eq!(last.q_dot[0], 0.0);
        assert!(last.q[2] != 0.9);
    }

    #[test]
    fn nonpositive_dt_rejected() {
        let model = presets::finger();
        assert!(step(&model, &State::at_rest(DVector::zeros(3)), zero_tau(2), 0.0, 10).is_err());
    }
}
