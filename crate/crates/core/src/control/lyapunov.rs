//! Lyapunov functions of the clamped passive dynamics and of the regulated
//! closed loop, evaluated pointwise for monitoring along simulations.

use nalgebra::DVector;

use super::RegulatorConfig;
use crate::coupling::{assemble_total_elastic, elastic_energy_force};
use crate::dynamics::{gravity_terms, mass_with_derivatives, State};
use crate::error::{invalid, Result};
use crate::kinematics::Pose;
use crate::model::{block, select, RobotModel};

/// `V = ½ q̇_uᵀ M_uu q̇_u + U_K(q) + U_G(q)` with the actuated coordinates held
/// at `q̄_a`. `U_K` is the full elastic energy, so `V̇ = −q̇_uᵀ D_uu q̇_u`.
pub fn lyapunov_zero_dynamics(model: &RobotModel, q_bar_a: &DVector<f64>, state: &State) -> Result<f64> {
    model.check_q(&state.q)?;
    model.check_q(&state.q_dot)?;
    let a = &model.actuated;
    if q_bar_a.len() != a.len() {
        return Err(invalid(format!("q_bar_a must have {} entries", a.len())));
    }
    let q_a = select(&state.q, a);
    let tol = 1e-9 * (1.0 + q_bar_a.amax());
    if (&q_a - q_bar_a).amax() > tol {
        return Err(invalid("actuated coordinates of the state differ from q_bar_a"));
    }
    let u = model.unactuated();
    let pose = Pose::new(model, &state.q);
    let (m, _) = mass_with_derivatives(model, &pose, false);
    let qd_u = select(&state.q_dot, &u);
    let kinetic = 0.5 * qd_u.dot(&(block(&m, &u, &u) * &qd_u));
    let (elastic, _) = elastic_energy_force(model, &state.q, &pose)?;
    let (gravitational, _) = gravity_terms(model, &pose);
    Ok(kinetic + elastic + gravitational)
}

/// Closed-loop function
///
/// `V = γ₁(½q̇ᵀMq̇ + ½q̃ᵀK̂q̃ − eᵀG_a/(1+2eᵀe) − eᵀK_au q̄_u/(1+2eᵀe) + U_G)
///      + 2eᵀ(M_aa q̇_a + M_au q̇_u)/(1+2eᵀe)`
///
/// with `e = q_a − q̄_a`, `q̃ = q − (q̄_a, q̄_u)` and `K̂ = K + diag(K_P, 0)`,
/// `K` being the elastic stiffness at the reference.
pub fn lyapunov_closed_loop(model: &RobotModel, config: &RegulatorConfig, gamma_1: f64, state: &State) -> Result<f64> {
    model.check_q(&state.q)?;
    model.check_q(&state.q_dot)?;
    config.validate(model)?;
    let a = &model.actuated;
    let q_bar = config.q_bar(model);
    let el = assemble_total_elastic(model, &q_bar)?;
    let mut k_hat = el.stiffness.clone();
    for (r, &i) in a.iter().enumerate() {
        for (c, &j) in a.iter().enumerate() {
            k_hat[(i, j)] += config.k_p[(r, c)];
        }
    }
    let pose = Pose::new(model, &state.q);
    let (m, _) = mass_with_derivatives(model, &pose, false);
    let (u_g, g) = gravity_terms(model, &pose);
    let q_tilde = &state.q - &q_bar;
    let e = select(&state.q, a) - &config.q_bar_a;
    let denom = 1.0 + 2.0 * e.dot(&e);
    let qd = &state.q_dot;
    let inner = 0.5 * qd.dot(&(&m * qd)) + 0.5 * q_tilde.dot(&(&k_hat * &q_tilde))
        - e.dot(&select(&g, a)) / denom
        - e.dot(&(&el.k_au * &config.q_bar_u)) / denom
        + u_g;
    let m_a_qd = select(&(&m * qd), a);
    Ok(gamma_1 * inner + 2.0 * e.dot(&m_a_qd) / denom)
}

/// [`lyapunov_closed_loop`] with its two terms that are linear in the
/// velocity along trajectories replaced: the `−eᵀK_au q̄_u/(1+2eᵀe)` term is
/// dropped and `γ₁ (q_u − q̄_u)ᵀ(K_ua q̄_a + K_uu q̄_u)` is added. Along the
/// regulated dynamics this version has no first-order velocity terms left in
/// its derivative, so it is the one expected to decrease monotonically.
pub fn lyapunov_closed_loop_corrected(
    model: &RobotModel,
    config: &RegulatorConfig,
    gamma_1: f64,
    state: &State,
) -> Result<f64> {
    let v = lyapunov_closed_loop(model, config, gamma_1, state)?;
    let a = &model.actuated;
    let u = model.unactuated();
    let el = assemble_total_elastic(model, &config.q_bar(model))?;
    let e = select(&state.q, a) - &config.q_bar_a;
    let denom = 1.0 + 2.0 * e.dot(&e);
    let pull = &el.k_ua * &config.q_bar_a + &el.k_uu * &config.q_bar_u;
    let shift = select(&state.q, &u) - &config.q_bar_u;
    Ok(v + gamma_1 * (e.dot(&(&el.k_au * &config.q_bar_u)) / denom + shift.dot(&pull)))
}
