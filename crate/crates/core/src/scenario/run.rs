//! Scenario execution and summary metrics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::{BuiltController, BuiltScenario, ScenarioConfig, ScenarioKind, Sinusoid};
use crate::control::{
    certify_gains_with, equilibrium_solve, estimate_tip_force, lyapunov_closed_loop, lyapunov_zero_dynamics, regulate,
    Compensation, ForcePid, GainCertificate, RegulatorConfig,
};
use crate::dynamics::{Controller, Simulation, State, TrajectoryLog};
use crate::error::Result;
use crate::identification::{generate_synthetic_dataset, rank_families, read_dataset, FitResult, Protocol};
use crate::model::{select, RobotModel};

/// Per-step tolerance on Lyapunov increases.
pub const LYAPUNOV_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    /// Final `|q_a − q̄_a|` per actuated coordinate (rad).
    pub steady_state_error: Vec<f64>,
    /// First time after which the tracked error stays within 2% of its
    /// initial value; `None` when it never settles.
    pub settling_time_2pct: Option<f64>,
    /// Largest `|τ|` over the run (N·m).
    pub max_torque: f64,
    /// Whether the logged Lyapunov value never rose by more than
    /// [`LYAPUNOV_TOLERANCE`] per step; `None` when none was logged.
    pub lyapunov_monotone: Option<bool>,
    pub lyapunov_max_increase: Option<f64>,
    /// Final wall force against the target, percent.
    pub force_error_pct: Option<f64>,
    /// Final tip-force estimate against the wall force, percent.
    pub force_estimate_error_pct: Option<f64>,
    /// Final `‖q_u − q_u*‖∞` against the passive equilibrium (rad).
    pub passive_equilibrium_error: Option<f64>,
}

/// Result of one scenario. Simulated kinds fill `log`; `identify` and
/// `certify` fill `fits` or `certificate` instead.
#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub log: TrajectoryLog,
    pub metrics: MetricsSummary,
    pub fits: Option<Vec<FitResult>>,
    pub certificate: Option<GainCertificate>,
}

/// Regulator whose reference may follow a sinusoid. With feedforward
/// compensation the passive reference is re-solved, warm-started from the
/// previous solution.
struct TrackingRegulator<'a> {
    model: &'a RobotModel,
    config: RegulatorConfig,
    base: DVector<f64>,
    reference: Option<Sinusoid>,
}

impl TrackingRegulator<'_> {
    fn reference_at(&self, t: f64) -> DVector<f64> {
        match &self.reference {
            Some(r) => &self.base + r.offset(t),
            None => self.base.clone(),
        }
    }
}

impl Controller for TrackingRegulator<'_> {
    fn torque(&mut self, state: &State) -> Result<DVector<f64>> {
        if self.reference.is_some() {
            self.config.q_bar_a = self.reference_at(state.t);
            if self.config.compensation == Compensation::Feedforward {
                self.config.q_bar_u = equilibrium_solve(self.model, &self.config.q_bar_a, &self.config.q_bar_u)?;
            }
        }
        regulate(&self.config, self.model, state)
    }
}

/// Earliest logged time after which `err` stays within 2% of `err[0]`.
fn settling_time(times: &[f64], err: &[f64]) -> Option<f64> {
    let band = 0.02 * err.first().copied().unwrap_or(0.0);
    let band = if band > 0.0 { band } else { 1e-12 };
    let mut settled_from = None;
    for (t, e) in times.iter().zip(err) {
        if *e <= band {
            settled_from.get_or_insert(*t);
        } else {
            settled_from = None;
        }
    }
    settled_from
}

fn base_metrics(log: &TrajectoryLog) -> MetricsSummary {
    let max_torque = log.rows.iter().flat_map(|r| r.tau.iter()).fold(0.0f64, |m, t| m.max(t.abs()));
    let inc = log.max_lyapunov_increase().filter(|v| v.is_finite());
    MetricsSummary {
        steady_state_error: Vec::new(),
        settling_time_2pct: None,
        max_torque,
        lyapunov_monotone: inc.map(|v| v <= LYAPUNOV_TOLERANCE),
        lyapunov_max_increase: inc,
        force_error_pct: None,
        force_estimate_error_pct: None,
        passive_equilibrium_error: None,
    }
}

fn simulate(built: &BuiltScenario, config: &ScenarioConfig) -> Result<ScenarioReport> {
    let model = &built.model;
    let pulses = config.disturbances.clone();
    let wall = built.wall.clone();
    let n = model.dof();
    let external = move |s: &State| {
        let mut f = DVector::zeros(n);
        for p in &pulses {
            if p.active(s.t) {
                f[p.coordinate] += p.amplitude;
            }
        }
        if let Some(w) = &wall {
            f += w.generalized_force(model, s);
        }
        f
    };
    let mut sim = Simulation::new(model, config.dt).log_every(config.log_every).with_external(external);
    let a = model.actuated.clone();
    let u = model.unactuated();
    match &built.controller {
        BuiltController::Regulator { config: rc, reference, gamma_1 } => {
            if let Some(g1) = *gamma_1 {
                let rc2 = rc.clone();
                sim = sim.with_lyapunov(move |s| lyapunov_closed_loop(model, &rc2, g1, s).unwrap_or(f64::NAN));
            }
            let mut ctl = TrackingRegulator {
                model,
                config: rc.clone(),
                base: rc.q_bar_a.clone(),
                reference: reference.clone(),
            };
            let log = sim.run(&built.initial, &mut ctl, built.n_steps)?;
            let times: Vec<f64> = log.rows.iter().map(|r| r.t).collect();
            let err: Vec<f64> = log
                .rows
                .iter()
                .map(|r| (select(&r.q, &a) - ctl.reference_at(r.t)).amax())
                .collect();
            let mut metrics = base_metrics(&log);
            if let Some(last) = log.last() {
                metrics.steady_state_error = (select(&last.q, &a) - ctl.reference_at(last.t)).abs().as_slice().to_vec();
            }
            metrics.settling_time_2pct = settling_time(&times, &err);
            Ok(ScenarioReport { log, metrics, fits: None, certificate: None })
        }
        BuiltController::ForcePid(fc) => {
            let mut ctl = ForcePid::new(model, fc.clone())?;
            let log = sim.run(&built.initial, &mut ctl, built.n_steps)?;
            let mut metrics = base_metrics(&log);
            if let Some(last) = log.last() {
                let q_bar_a = select(&DVector::from_column_slice(&fc.q_bar), &a);
                metrics.steady_state_error = (select(&last.q, &a) - q_bar_a).abs().as_slice().to_vec();
            }
            if let Some(w) = &built.wall {
                let forces: Vec<f64> = log
                    .rows
                    .iter()
                    .map(|r| w.normal_force(model, &State::new(r.q.clone(), r.q_dot.clone())))
                    .collect();
                let err: Vec<f64> = forces.iter().map(|f| (f - fc.f_d).abs()).collect();
                let times: Vec<f64> = log.rows.iter().map(|r| r.t).collect();
                metrics.settling_time_2pct = settling_time(&times, &err);
                if let (Some(last), Some(&f_wall)) = (log.last(), forces.last()) {
                    if fc.f_d != 0.0 {
                        metrics.force_error_pct = Some(100.0 * (f_wall - fc.f_d).abs() / fc.f_d.abs());
                    }
                    if f_wall > 0.0 {
                        let f_hat = estimate_tip_force(model, &last.q)?;
                        metrics.force_estimate_error_pct = Some(100.0 * (f_hat - f_wall).abs() / f_wall);
                    }
                }
            }
            Ok(ScenarioReport { log, metrics, fits: None, certificate: None })
        }
        BuiltController::Clamped => {
            let q_bar_a = select(&built.initial.q, &a);
            let qa = q_bar_a.clone();
            sim = sim
                .clamp(a.clone())
                .with_lyapunov(move |s| lyapunov_zero_dynamics(model, &qa, s).unwrap_or(f64::NAN));
            let m = model.n_actuated();
            let mut ctl = move |_: &State| DVector::zeros(m);
            let log = sim.run(&built.initial, &mut ctl, built.n_steps)?;
            let mut metrics = base_metrics(&log);
            metrics.steady_state_error = vec![0.0; m];
            let q_u_star = equilibrium_solve(model, &q_bar_a, &select(&built.initial.q, &u))?;
            let err: Vec<f64> = log.rows.iter().map(|r| (select(&r.q, &u) - &q_u_star).amax()).collect();
            let times: Vec<f64> = log.rows.iter().map(|r| r.t).collect();
            metrics.settling_time_2pct = settling_time(&times, &err);
            metrics.passive_equilibrium_error = err.last().copied();
            Ok(ScenarioReport { log, metrics, fits: None, certificate: None })
        }
    }
}

fn empty_report(log: TrajectoryLog) -> ScenarioReport {
    ScenarioReport {
        metrics: base_metrics(&log),
        log,
        fits: None,
        certificate: None,
    }
}

/// Runs a validated scenario. Deterministic for a given config.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport> {
    let built = config.build()?;
    match config.kind {
        ScenarioKind::Regulate | ScenarioKind::Disturb | ScenarioKind::ZeroDynamics | ScenarioKind::ForceControl => {
            simulate(&built, config)
        }
        ScenarioKind::Identify => {
            let id = config.identification.as_ref().expect("validated");
            let data = match &id.dataset {
                Some(path) => read_dataset(path)?,
                None => generate_synthetic_dataset(
                    &built.model,
                    id.family,
                    id.k_true,
                    &Protocol::grid90(id.span, id.noise),
                    config.seed,
                )?,
            };
            let fits = rank_families(&built.model, &data)?;
            Ok(ScenarioReport { fits: Some(fits), ..empty_report(TrajectoryLog::default()) })
        }
        ScenarioKind::Certify => {
            let BuiltController::Regulator { config: rc, .. } = &built.controller else {
                unreachable!("validated")
            };
            let region = config.certification_region(built.model.dof());
            let cert = certify_gains_with(&built.model, rc, &region, config.grid_level())?;
            Ok(ScenarioReport { certificate: Some(cert), ..empty_report(TrajectoryLog::default()) })
        }
    }
}
