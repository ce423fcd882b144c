//! Tip-force estimation from the elastic coupling and a PID loop on the
//! estimate, plus the compliant wall used as contact environment.

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::coupling::{assemble_total_elastic, elastic_energy_force};
use crate::dynamics::{gravity_terms, Controller, State};
use crate::error::{invalid, Error, Result};
use crate::kinematics::Pose;
use crate::model::{RobotModel, SegmentRef};

fn single_passive(model: &RobotModel) -> Result<usize> {
    let u = model.unactuated();
    if u.len() != 1 {
        return Err(invalid(format!(
            "tip-force estimation needs exactly one passive coordinate, model has {}",
            u.len()
        )));
    }
    Ok(u[0])
}

/// Tip of the chain that carries the passive coordinate.
fn passive_tip(model: &RobotModel, u: usize) -> Result<SegmentRef> {
    let seg = model.segment_of(u)?;
    Ok(SegmentRef::new(seg.chain, model.chains[seg.chain].links.len() - 1))
}

/// Scalar tip force `F̂ = F_K,u / r`, where `F_K,u` is the elastic torque on
/// the passive joint and `r` the distance from that joint to its chain tip.
pub fn estimate_tip_force(model: &RobotModel, q: &DVector<f64>) -> Result<f64> {
    model.check_q(q)?;
    let u = single_passive(model)?;
    let pose = Pose::new(model, q);
    let arm = (pose.point(passive_tip(model, u)?, 1.0) - pose.joint_origin(model.segment_of(u)?)).norm();
    if arm < 1e-12 {
        return Err(Error::DegenerateGeometry(format!(
            "passive joint {u} coincides with its chain tip (moment arm {arm:e})"
        )));
    }
    let (_, force) = elastic_energy_force(model, q, &pose)?;
    Ok(force[u] / arm)
}

/// Configuration with the passive joint at `q_u` and the actuated joint
/// placed so that [`estimate_tip_force`] returns `f_d`.
pub fn force_setpoint(model: &RobotModel, q_u: f64, f_d: f64) -> Result<DVector<f64>> {
    let u = single_passive(model)?;
    if model.n_actuated() != 1 {
        return Err(invalid("force set-point needs exactly one actuated coordinate"));
    }
    let a = model.actuated[0];
    let mut q = DVector::zeros(model.dof());
    q[u] = q_u;
    for _ in 0..50 {
        let f = estimate_tip_force(model, &q)?;
        let r = f - f_d;
        if r.abs() < 1e-12 * (1.0 + f_d.abs()) {
            return Ok(q);
        }
        // dF̂/dq_a = K_ua / r with the arm independent of q_a here.
        let eps = 1e-6;
        let mut qp = q.clone();
        qp[a] += eps;
        let slope = (estimate_tip_force(model, &qp)? - f) / eps;
        let k_ua = assemble_total_elastic(model, &q)?.stiffness[(u, a)];
        if slope.abs() < 1e-12 || k_ua == 0.0 {
            return Err(Error::Singular("tip force does not depend on the actuated joint".into()));
        }
        q[a] -= r / slope;
    }
    Err(Error::NoConvergence {
        iterations: 50,
        residual: (estimate_tip_force(model, &q)? - f_d).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcePidConfig {
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
    /// Desired tip force (N).
    pub f_d: f64,
    /// Bound on `|∫ e_f dt|` (N·s).
    pub integral_clamp: f64,
    /// Configuration at which the feedforward elastic torque is evaluated.
    pub q_bar: Vec<f64>,
    pub gravity_compensation: bool,
}

impl ForcePidConfig {
    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        for (name, g) in [("k_p", self.k_p), ("k_i", self.k_i), ("k_d", self.k_d)] {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(invalid(format!("force gain {name} must be >= 0, got {g}")));
            }
        }
        if !(self.integral_clamp > 0.0) {
            return Err(invalid(format!("integral_clamp must be > 0, got {}", self.integral_clamp)));
        }
        if model.n_actuated() != 1 {
            return Err(invalid("force control needs exactly one actuated coordinate"));
        }
        if self.q_bar.len() != model.dof() {
            return Err(invalid(format!("q_bar must have {} entries", model.dof())));
        }
        single_passive(model)?;
        Ok(())
    }
}

/// `τ = K_P e_f − K_D q̇_a + K_I ∫e_f + F_K,a(q̄) + G_a(q)` with
/// `e_f = F̂(q) − F_d`. Returns the torque and the integral advanced by `dt`
/// and clamped to `±integral_clamp`.
pub fn force_pid(
    config: &ForcePidConfig,
    model: &RobotModel,
    state: &State,
    integral: f64,
    dt: f64,
) -> Result<(DVector<f64>, f64)> {
    model.check_q(&state.q)?;
    model.check_q(&state.q_dot)?;
    let a = model.actuated[0];
    let e_f = estimate_tip_force(model, &state.q)? - config.f_d;
    let q_bar = DVector::from_column_slice(&config.q_bar);
    let (_, f_bar) = elastic_energy_force(model, &q_bar, &Pose::new(model, &q_bar))?;
    let mut tau = config.k_p * e_f - config.k_d * state.q_dot[a] + config.k_i * integral + f_bar[a];
    if config.gravity_compensation {
        tau += gravity_terms(model, &Pose::new(model, &state.q)).1[a];
    }
    let next = (integral + e_f * dt).clamp(-config.integral_clamp, config.integral_clamp);
    Ok((DVector::from_element(1, tau), next))
}

/// [`force_pid`] as a simulation controller; the integral advances once per
/// accepted step.
#[derive(Debug, Clone)]
pub struct ForcePid<'a> {
    pub model: &'a RobotModel,
    pub config: ForcePidConfig,
    pub integral: f64,
}

impl<'a> ForcePid<'a> {
    pub fn new(model: &'a RobotModel, config: ForcePidConfig) -> Result<Self> {
        config.validate(model)?;
        Ok(Self { model, config, integral: 0.0 })
    }
}

impl Controller for ForcePid<'_> {
    fn torque(&mut self, state: &State) -> Result<DVector<f64>> {
        Ok(force_pid(&self.config, self.model, state, self.integral, 0.0)?.0)
    }

    fn end_step(&mut self, state: &State, dt: f64) {
        if let Ok((_, next)) = force_pid(&self.config, self.model, state, self.integral, dt) {
            self.integral = next;
        }
    }
}

/// Unilateral spring-damper half-plane touched by the tip of one link.
/// `normal` points from the wall into free space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub point: [f64; 2],
    pub normal: [f64; 2],
    pub stiffness: f64,
    pub damping: f64,
    pub contact: SegmentRef,
}

impl Wall {
    pub const DEFAULT_STIFFNESS: f64 = 1e3;
    pub const DEFAULT_DAMPING: f64 = 10.0;

    /// Horizontal floor at height `y` below the tip of `contact`.
    pub fn floor(y: f64, contact: SegmentRef) -> Self {
        Self {
            point: [0.0, y],
            normal: [0.0, 1.0],
            stiffness: Self::DEFAULT_STIFFNESS,
            damping: Self::DEFAULT_DAMPING,
            contact,
        }
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        model.link(self.contact)?;
        let n = Vector2::from(self.normal).norm();
        if !((n - 1.0).abs() < 1e-9) {
            return Err(invalid(format!("wall normal must be a unit vector, norm {n}")));
        }
        if !(self.stiffness >= 0.0 && self.damping >= 0.0) {
            return Err(invalid("wall stiffness and damping must be >= 0"));
        }
        Ok(())
    }

    fn unit_normal(&self) -> Vector2<f64> {
        Vector2::from(self.normal)
    }

    /// Penetration depth (positive inside the wall).
    pub fn penetration(&self, model: &RobotModel, q: &DVector<f64>) -> f64 {
        let p = Pose::new(model, q).point(self.contact, 1.0);
        -(p - Vector2::from(self.point)).dot(&self.unit_normal())
    }

    /// Magnitude of the normal contact force, never pulling.
    pub fn normal_force(&self, model: &RobotModel, state: &State) -> f64 {
        let pose = Pose::new(model, &state.q);
        let p = pose.point(self.contact, 1.0);
        let n = self.unit_normal();
        let depth = -(p - Vector2::from(self.point)).dot(&n);
        if depth <= 0.0 {
            return 0.0;
        }
        let jac = pose.jacobian(self.contact, 1.0);
        let v = &jac * &state.q_dot;
        let rate = -(v[0] * n.x + v[1] * n.y);
        (self.stiffness * depth + self.damping * rate).max(0.0)
    }

    /// Generalized force `Jᵀ F n` of the contact.
    pub fn generalized_force(&self, model: &RobotModel, state: &State) -> DVector<f64> {
        let f = self.normal_force(model, state);
        if f == 0.0 {
            return DVector::zeros(model.dof());
        }
        let jac = Pose::new(model, &state.q).jacobian(self.contact, 1.0);
        let n = self.unit_normal();
        jac.transpose() * DVector::from_vec(vec![f * n.x, f * n.y])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::CouplingFamily;
    use crate::dynamics::Simulation;
    use crate::model::presets;
    use approx::assert_abs_diff_eq;

    fn pair(k: f64) -> RobotModel {
        presets::parallel_pair(CouplingFamily::Linear, k, 1.5, 0.1)
            .with_uniform_damping(0.1)
            .with_gravity([0.0, 0.0])
    }

    #[test]
    fn relaxed_coupling_reads_zero() {
        let model = pair(10.0);
        assert_eq!(estimate_tip_force(&model, &DVector::from_vec(vec![0.3, 0.3])).unwrap(), 0.0);
    }

    #[test]
    fn linear_coupling_moment_balance() {
        let model = pair(10.0);
        // δ = q_u − q_a = 0.2 → F̂ = k δ / l
        let f = estimate_tip_force(&model, &DVector::from_vec(vec![0.1, 0.3])).unwrap();
        assert_abs_diff_eq!(f, 10.0 * 0.2 / 1.5, epsilon = 1e-12);
    }

    #[test]
    fn needs_single_passive_coordinate() {
        let model = presets::finger().with_actuated(vec![0]);
        assert!(estimate_tip_force(&model, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn folded_chain_has_no_moment_arm() {
        let mut model = presets::finger().with_actuated(vec![0, 2]);
        model.chains[0].links[2].length = 1.0;
        // Passive joint 1: links 1 and 2 folded back onto joint 1.
        let q = DVector::from_vec(vec![0.0, 0.0, std::f64::consts::PI]);
        assert!(matches!(
            estimate_tip_force(&model, &q),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn pure_feedforward_at_zero_error() {
        let model = pair(10.0);
        let q_bar = force_setpoint(&model, -0.05, 2.7).unwrap();
        assert_abs_diff_eq!(estimate_tip_force(&model, &q_bar).unwrap(), 2.7, epsilon = 1e-9);
        let cfg = ForcePidConfig {
            k_p: 3.0,
            k_i: 5.0,
            k_d: 0.2,
            f_d: 2.7,
            integral_clamp: 1.0,
            q_bar: q_bar.as_slice().to_vec(),
            gravity_compensation: false,
        };
        let state = State::at_rest(q_bar.clone());
        let (tau, integral) = force_pid(&cfg, &model, &state, 0.0, 1e-3).unwrap();
        let el = assemble_total_elastic(&model, &q_bar).unwrap();
        assert_abs_diff_eq!(tau[0], el.force_a[0], epsilon = 1e-9);
        assert_abs_diff_eq!(integral, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn integral_is_clamped() {
        let model = pair(10.0);
        let cfg = ForcePidConfig {
            k_p: 0.0,
            k_i: 1.0,
            k_d: 0.0,
            f_d: 100.0,
            integral_clamp: 0.5,
            q_bar: vec![0.0, 0.0],
            gravity_compensation: false,
        };
        let (_, i) = force_pid(&cfg, &model, &State::at_rest(DVector::zeros(2)), 0.0, 1.0).unwrap();
        assert_eq!(i, -0.5);
    }

    #[test]
    fn config_validation() {
        let model = pair(10.0);
        let mut cfg = ForcePidConfig {
            k_p: 1.0,
            k_i: 1.0,
            k_d: 1.0,
            f_d: 1.0,
            integral_clamp: 1.0,
            q_bar: vec![0.0, 0.0],
            gravity_compensation: false,
        };
        assert!(cfg.validate(&model).is_ok());
        cfg.k_i = -1.0;
        assert!(cfg.validate(&model).is_err());
        cfg.k_i = 1.0;
        cfg.integral_clamp = 0.0;
        assert!(cfg.validate(&model).is_err());
    }

    #[test]
    fn wall_pushes_only_in_penetration() {
        let model = pair(10.0);
        let wall = Wall::floor(-0.1, SegmentRef::new(1, 0));
        let free = State::at_rest(DVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(wall.normal_force(&model, &free), 0.0);
        // Tip at y = 1.5 sin(−0.1) ≈ −0.1497: 4.97 cm deep.
        let pressed = State::at_rest(DVector::from_vec(vec![0.0, -0.1]));
        let depth = wall.penetration(&model, &pressed.q);
        assert_abs_diff_eq!(depth, 1.5 * 0.1f64.sin() - 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(wall.normal_force(&model, &pressed), 1e3 * depth, epsilon = 1e-9);
        let gf = wall.generalized_force(&model, &pressed);
        assert_eq!(gf[0], 0.0);
        assert_abs_diff_eq!(gf[1], 1.5 * 0.1f64.cos() * 1e3 * depth, epsilon = 1e-9);
    }

    #[test]
    fn no_wall_zero_target_relaxes() {
        let model = pair(10.0);
        let cfg = ForcePidConfig {
            k_p: 0.5,
            k_i: 0.5,
            k_d: 0.1,
            f_d: 0.0,
            integral_clamp: 1.0,
            q_bar: vec![0.0, 0.0],
            gravity_compensation: false,
        };
        let mut ctl = ForcePid::new(&model, cfg).unwrap();
        let s0 = State::new(DVector::from_vec(vec![0.4, -0.2]), DVector::zeros(2));
        let log = Simulation::new(&model, 1e-3).log_every(100).run(&s0, &mut ctl, 30_000).unwrap();
        let f = estimate_tip_force(&model, &log.last().unwrap().q).unwrap();
        assert!(f.abs() < 1e-3, "{f}");
    }
}
