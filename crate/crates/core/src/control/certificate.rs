//! Sufficient gain conditions for convergence of the regulated system with
//! linear coupling.
//!
//! With `D̂ = D + diag(K_D, 0)` and sampled system bounds,
//! `γ₁ > (γ_C + 4√2 λ_max(M)) / (√2 λ_min(D̂))` and
//! `λ_min(K_P + K_aa) > (2γ₁α_GK + σ_max(D̂_a))² / (2 Q₁₁)` make the
//! 2×2 matrix `Q` positive definite.

use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::RegulatorConfig;
use crate::coupling::{assemble_total_elastic, CouplingFamily};
use crate::dynamics::{estimate_bounds, Region, SystemBounds};
use crate::error::{Error, Result};
use crate::model::{block, RobotModel};

/// Grid refinement used by [`certify_gains`]: 9 samples per axis.
pub const DEFAULT_GRID_LEVEL: u32 = 3;

/// Factor applied to the lower bound on `γ₁`.
pub const GAMMA1_MARGIN: f64 = 1.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct GainCertificate {
    pub bounds: SystemBounds,
    pub alpha_G: f64,
    pub alpha_UG: f64,
    pub alpha_dG: f64,
    /// `2α_G + α_∂G + 2‖K_au‖‖q̄_u‖`.
    pub alpha_GK: f64,
    pub gamma_1: f64,
    /// Lower bound of the Lyapunov function.
    pub gamma_2: f64,
    pub lambda_min_Dhat: f64,
    pub sigma_max_Dhat_a: f64,
    pub lambda_min_K_aa: f64,
    pub Q11: f64,
    pub Q12: f64,
    pub Q22: f64,
    pub det_Q: f64,
    /// Required `λ_min(K_P + K_aa)`.
    pub kp_lower_bound: f64,
    /// Attained `λ_min(K_P + K_aa)`.
    pub lambda_min_KP_Kaa: f64,
    pub verdict: bool,
    /// Which condition failed, when `verdict` is false.
    pub failure: Option<String>,
}

impl GainCertificate {
    /// Smallest scalar `k` (times `1 + margin`) for which `K_P = k I` passes,
    /// with everything else unchanged.
    pub fn suggested_kp(&self, margin: f64) -> f64 {
        let needed = (self.kp_lower_bound - self.lambda_min_K_aa).max(0.0);
        needed * (1.0 + margin) + f64::EPSILON
    }
}

fn symmetric_min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// [`certify_gains_with`] at [`DEFAULT_GRID_LEVEL`].
pub fn certify_gains(model: &RobotModel, config: &RegulatorConfig, region: &Region) -> Result<GainCertificate> {
    certify_gains_with(model, config, region, DEFAULT_GRID_LEVEL)
}

pub fn certify_gains_with(
    model: &RobotModel,
    config: &RegulatorConfig,
    region: &Region,
    grid_level: u32,
) -> Result<GainCertificate> {
    if let Some(c) = model.couplings.iter().find(|c| c.family != CouplingFamily::Linear) {
        return Err(Error::UnsupportedFamily(format!(
            "gain certificate requires linear coupling, model has `{}`",
            c.family
        )));
    }
    config.validate(model)?;
    model.require_damping()?;
    let bounds = estimate_bounds(model, region, grid_level)?;
    let a = &model.actuated;
    let n = model.dof();

    let el = assemble_total_elastic(model, &config.q_bar(model))?;
    let mut d_hat = model.damping_matrix();
    for (r, &i) in a.iter().enumerate() {
        for (c, &j) in a.iter().enumerate() {
            d_hat[(i, j)] += config.k_d[(r, c)];
        }
    }
    let lambda_min_dhat = symmetric_min_eig(&d_hat);
    let all: Vec<usize> = (0..n).collect();
    let sigma_max_dhat_a = block(&d_hat, a, &all).singular_values().max();

    let alpha_g = bounds.gamma_G;
    let alpha_ug = bounds.gamma_UG;
    let alpha_dg = bounds.gamma_dG;
    let k_au_norm = if el.k_au.is_empty() { 0.0 } else { el.k_au.singular_values().max() };
    let alpha_gk = 2.0 * alpha_g + alpha_dg + 2.0 * k_au_norm * config.q_bar_u.norm();

    let gamma_c = bounds.gamma_C;
    let lmax_m = bounds.lambda_max_M;
    let gamma_1 = GAMMA1_MARGIN * (gamma_c + 4.0 * SQRT_2 * lmax_m) / (SQRT_2 * lambda_min_dhat);
    let q11 = gamma_1 * lambda_min_dhat - gamma_c / SQRT_2 - 4.0 * lmax_m;
    let q12 = -(gamma_1 * alpha_gk + sigma_max_dhat_a);
    let lambda_kp_kaa = symmetric_min_eig(&(&config.k_p + &el.k_aa));
    let q22 = 2.0 * lambda_kp_kaa;
    let det_q = q11 * q22 - q12 * q12;
    let kp_lower_bound = (2.0 * gamma_1 * alpha_gk + sigma_max_dhat_a).powi(2) / (2.0 * q11);
    let gamma_2 = -2.0 * lmax_m * lmax_m / (gamma_1 * bounds.lambda_min_M) - gamma_1 * (alpha_g + alpha_ug);

    let failure = if !(q11 > 0.0) {
        Some(format!("Q11 = {q11:.6e} is not positive"))
    } else if !(lambda_kp_kaa > kp_lower_bound) {
        Some(format!(
            "lambda_min(K_P + K_aa) = {lambda_kp_kaa:.6e} does not exceed the required {kp_lower_bound:.6e}"
        ))
    } else if !(det_q > 0.0) {
        Some(format!("det Q = {det_q:.6e} is not positive"))
    } else {
        None
    };

    Ok(GainCertificate {
        bounds,
        alpha_G: alpha_g,
        alpha_UG: alpha_ug,
        alpha_dG: alpha_dg,
        alpha_GK: alpha_gk,
        gamma_1,
        gamma_2,
        lambda_min_Dhat: lambda_min_dhat,
        sigma_max_Dhat_a: sigma_max_dhat_a,
        lambda_min_K_aa: symmetric_min_eig(&el.k_aa),
        Q11: q11,
        Q12: q12,
        Q22: q22,
        det_Q: det_q,
        kp_lower_bound,
        lambda_min_KP_Kaa: lambda_kp_kaa,
        verdict: failure.is_none(),
        failure,
    })
}
