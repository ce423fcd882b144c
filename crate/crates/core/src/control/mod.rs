//! Set-point regulation of the actuated coordinates with elastic-coupling
//! compensation, the equilibrium of the passive coordinates, the gain
//! certificate, Lyapunov diagnostics and sensorless tip-force control.
//!
//! The regulator is
//! `τ = G_a(q) − K_D q̇_a + F_K,a(q̄_a, q̄_u) + K_P (q̄_a − q_a)`,
//! which for linear coupling is `G_a − K_D q̇_a + K_au q̄_u + K_aa q̄_a + K_P e_a`.

mod certificate;
mod force;
mod lyapunov;

pub use certificate::{certify_gains, certify_gains_with, GainCertificate, DEFAULT_GRID_LEVEL};
pub use force::{estimate_tip_force, force_pid, force_setpoint, ForcePid, ForcePidConfig, Wall};
pub use lyapunov::{lyapunov_closed_loop, lyapunov_closed_loop_corrected, lyapunov_zero_dynamics};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coupling::{assemble_total_elastic, elastic_energy_force};
use crate::dynamics::{gravity_terms, Controller, State};
use crate::error::{invalid, Error, Result};
use crate::kinematics::Pose;
use crate::model::{assemble, block, select, RobotModel};

/// Residual tolerance of [`equilibrium_solve`].
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-10;
pub const EQUILIBRIUM_MAX_ITERATIONS: usize = 100;

/// How the elastic pull of the passive coordinates is cancelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compensation {
    /// Coupling evaluated at the configured `q̄_u`.
    Feedforward,
    /// Coupling evaluated at the measured `q_u(t)`.
    Feedback,
    /// Only each actuated joint's own spring is compensated.
    None,
}

impl Compensation {
    pub const ALL: [Compensation; 3] = [Compensation::Feedforward, Compensation::Feedback, Compensation::None];

    pub fn name(self) -> &'static str {
        match self {
            Compensation::Feedforward => "feedforward",
            Compensation::Feedback => "feedback",
            Compensation::None => "none",
        }
    }
}

impl fmt::Display for Compensation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Compensation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Compensation::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| invalid(format!("unknown compensation `{s}` (expected feedforward, feedback or none)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorConfig {
    pub k_p: DMatrix<f64>,
    pub k_d: DMatrix<f64>,
    pub compensation: Compensation,
    pub q_bar_a: DVector<f64>,
    pub q_bar_u: DVector<f64>,
}

fn require_spd(name: &str, m: &DMatrix<f64>, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(invalid(format!("{name} must be {dim}x{dim}, got {}x{}", m.nrows(), m.ncols())));
    }
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(invalid(format!("{name} must be symmetric")));
    }
    let lo = m.clone().symmetric_eigenvalues().min();
    if !(lo > 0.0) {
        return Err(invalid(format!("{name} must be positive definite (min eigenvalue {lo})")));
    }
    Ok(())
}

impl RegulatorConfig {
    /// Regulator with `q̄_u` set to the equilibrium of the passive coordinates
    /// at `q̄_a`.
    pub fn new(
        model: &RobotModel,
        k_p: DMatrix<f64>,
        k_d: DMatrix<f64>,
        compensation: Compensation,
        q_bar_a: DVector<f64>,
    ) -> Result<Self> {
        let guess = DVector::zeros(model.dof() - model.n_actuated());
        let q_bar_u = equilibrium_solve(model, &q_bar_a, &guess)?;
        let cfg = Self { k_p, k_d, compensation, q_bar_a, q_bar_u };
        cfg.validate(model)?;
        Ok(cfg)
    }

    /// Diagonal gains `k_p I` and `k_d I`.
    pub fn diagonal(model: &RobotModel, k_p: f64, k_d: f64, compensation: Compensation, q_bar_a: DVector<f64>) -> Result<Self> {
        let m = model.n_actuated();
        Self::new(
            model,
            DMatrix::identity(m, m) * k_p,
            DMatrix::identity(m, m) * k_d,
            compensation,
            q_bar_a,
        )
    }

    pub fn with_q_bar_u(mut self, q_bar_u: DVector<f64>) -> Self {
        self.q_bar_u = q_bar_u;
        self
    }

    pub fn with_k_p(mut self, k_p: DMatrix<f64>) -> Self {
        self.k_p = k_p;
        self
    }

    /// Full reference configuration `(q̄_a, q̄_u)`.
    pub fn q_bar(&self, model: &RobotModel) -> DVector<f64> {
        assemble(&model.actuated, &self.q_bar_a, &model.unactuated(), &self.q_bar_u)
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        let m = model.n_actuated();
        require_spd("K_P", &self.k_p, m)?;
        require_spd("K_D", &self.k_d, m)?;
        if self.q_bar_a.len() != m {
            return Err(invalid(format!("q_bar_a must have {m} entries, got {}", self.q_bar_a.len())));
        }
        if self.q_bar_u.len() != model.dof() - m {
            return Err(invalid(format!(
                "q_bar_u must have {} entries, got {}",
                model.dof() - m,
                self.q_bar_u.len()
            )));
        }
        Ok(())
    }
}

fn elastic_force(model: &RobotModel, q: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(elastic_energy_force(model, q, &Pose::new(model, q))?.1)
}

/// Regulator torque for the current state.
pub fn regulate(config: &RegulatorConfig, model: &RobotModel, state: &State) -> Result<DVector<f64>> {
    model.check_q(&state.q)?;
    model.check_q(&state.q_dot)?;
    let a = &model.actuated;
    let q_a = select(&state.q, a);
    let qd_a = select(&state.q_dot, a);
    let (_, g) = gravity_terms(model, &Pose::new(model, &state.q));
    let compensation = match config.compensation {
        Compensation::Feedforward => select(&elastic_force(model, &config.q_bar(model))?, a),
        Compensation::Feedback => {
            let q = assemble(a, &config.q_bar_a, &model.unactuated(), &select(&state.q, &model.unactuated()));
            select(&elastic_force(model, &q)?, a)
        }
        Compensation::None => DVector::from_fn(a.len(), |k, _| model.joint_stiffness[a[k]] * config.q_bar_a[k]),
    };
    Ok(select(&g, a) - &config.k_d * qd_a + compensation + &config.k_p * (&config.q_bar_a - q_a))
}

/// [`regulate`] as a simulation controller.
#[derive(Debug, Clone)]
pub struct Regulator<'a> {
    pub model: &'a RobotModel,
    pub config: RegulatorConfig,
}

impl<'a> Regulator<'a> {
    pub fn new(model: &'a RobotModel, config: RegulatorConfig) -> Self {
        Self { model, config }
    }
}

impl Controller for Regulator<'_> {
    fn torque(&mut self, state: &State) -> Result<DVector<f64>> {
        regulate(&self.config, self.model, state)
    }
}

/// Residual `F_K,u(q̄_a, q_u) + G_u(q̄_a, q_u)` of the passive equilibrium and
/// its Jacobian with respect to `q_u`.
fn passive_residual(model: &RobotModel, q: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let u = model.unactuated();
    let el = assemble_total_elastic(model, q)?;
    let pose = Pose::new(model, q);
    let (_, g) = gravity_terms(model, &pose);
    let dg = crate::dynamics::gravity_jacobian_at(model, &pose);
    Ok((&el.force_u + select(&g, &u), &el.k_uu + block(&dg, &u, &u)))
}

/// Passive coordinates at rest with the actuated ones held at `q̄_a`: solves
/// `F_K,u(q̄_a, q_u) + G_u(q̄_a, q_u) = 0` (for linear coupling
/// `K_ua q̄_a + K_uu q_u + G_u = 0`) by damped Newton iteration.
pub fn equilibrium_solve(model: &RobotModel, q_bar_a: &DVector<f64>, initial_guess: &DVector<f64>) -> Result<DVector<f64>> {
    model.validate()?;
    let a = model.actuated.clone();
    let u = model.unactuated();
    if q_bar_a.len() != a.len() {
        return Err(invalid(format!("q_bar_a must have {} entries, got {}", a.len(), q_bar_a.len())));
    }
    if initial_guess.len() != u.len() {
        return Err(invalid(format!(
            "initial guess must have {} entries, got {}",
            u.len(),
            initial_guess.len()
        )));
    }
    if u.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let full = |q_u: &DVector<f64>| assemble(&a, q_bar_a, &u, q_u);
    let mut q_u = initial_guess.clone();
    let (mut r, mut jac) = passive_residual(model, &full(&q_u))?;
    let mut norm = r.norm();
    for _ in 0..EQUILIBRIUM_MAX_ITERATIONS {
        if norm < EQUILIBRIUM_TOLERANCE {
            return check_regular(jac, q_u);
        }
        let step = jac
            .clone()
            .lu()
            .solve(&r)
            .filter(|s| s.iter().all(|x| x.is_finite()))
            .ok_or_else(|| Error::Singular(format!("K_uu + dG_u/dq_u is singular at q_u = {:?}", q_u.as_slice())))?;
        let mut alpha = 1.0;
        loop {
            let trial = &q_u - &step * alpha;
            let (rt, jt) = passive_residual(model, &full(&trial))?;
            let nt = rt.norm();
            if nt < norm || alpha < 1e-6 {
                q_u = trial;
                r = rt;
                jac = jt;
                norm = nt;
                break;
            }
            alpha *= 0.5;
        }
    }
    if norm < EQUILIBRIUM_TOLERANCE {
        return check_regular(jac, q_u);
    }
    Err(Error::NoConvergence {
        iterations: EQUILIBRIUM_MAX_ITERATIONS,
        residual: norm,
    })
}

fn check_regular(jac: DMatrix<f64>, q_u: DVector<f64>) -> Result<DVector<f64>> {
    let sv = jac.singular_values();
    if sv.min() <= 1e-12 * sv.max().max(1.0) {
        return Err(Error::Singular(format!(
            "K_uu + dG_u/dq_u is singular at the solution q_u = {:?}",
            q_u.as_slice()
        )));
    }
    Ok(q_u)
}
