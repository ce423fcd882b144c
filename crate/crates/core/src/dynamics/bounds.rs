//! Sampled bounds on inertia, Coriolis and gravity terms over a box of
//! configurations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{christoffel, gravity_jacobian_at, gravity_terms, mass_with_derivatives};
use crate::error::{invalid, Result};
use crate::kinematics::Pose;
use crate::model::RobotModel;

/// Safety factor applied to sampled maxima (and, inverted, to `λ_min(M)`).
pub const INFLATION: f64 = 1.1;

/// Axis-aligned box in configuration space. Axes with `lower == upper` are
/// sampled at a single value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let r = Self { lower, upper };
        r.validate()?;
        Ok(r)
    }

    /// The same interval `[lo, hi]` on each of `n` axes.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    /// Box of half-width `radius` centred at `center`.
    pub fn around(center: &DVector<f64>, radius: f64) -> Result<Self> {
        Self::new(
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, q: &DVector<f64>) -> bool {
        q.len() == self.dim() && q.iter().enumerate().all(|(i, &x)| self.lower[i] <= x && x <= self.upper[i])
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(invalid(format!(
                "region bounds must be non-empty and of equal length (got {} and {})",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(invalid(format!("region axis {i} is empty or non-finite: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Per-axis sample values at refinement `level`: `2^level + 1` evenly
    /// spaced points, so each level contains every point of the previous one.
    fn axis_samples(&self, level: u32) -> Vec<Vec<f64>> {
        let k = 1usize << level;
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| {
                if lo == hi {
                    vec![lo]
                } else {
                    (0..=k).map(|j| lo + (hi - lo) * j as f64 / k as f64).collect()
                }
            })
            .collect()
    }
}

/// Bounds of the system properties over a sampled region. Maxima are
/// inflated and `lambda_min_M` deflated by [`INFLATION`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct SystemBounds {
    /// `‖C(q, q̇)‖ ≤ γ_C ‖q̇‖`.
    pub gamma_C: f64,
    pub lambda_min_M: f64,
    pub lambda_max_M: f64,
    pub gamma_UG: f64,
    pub gamma_G: f64,
    pub gamma_dG: f64,
    pub sample_grid: String,
}

/// Raw sampled extremes before inflation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RawBounds {
    pub gamma_c: f64,
    pub lambda_min_m: f64,
    pub lambda_max_m: f64,
    pub gamma_ug: f64,
    pub gamma_g: f64,
    pub gamma_dg: f64,
    pub samples: usize,
}

fn spectral_norm_symmetric(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().amax()
}

/// `max_{‖e‖=1} ‖C(q, e)‖_F`, an upper bound on the spectral-norm
/// coefficient: `‖C(q, e)‖_F² = eᵀ P e` with `P_kl = Σ_ij Γ_k(i,j) Γ_l(i,j)`.
fn coriolis_coefficient(gamma: &[DMatrix<f64>]) -> f64 {
    let n = gamma.len();
    let p = DMatrix::from_fn(n, n, |k, l| gamma[k].dot(&gamma[l]));
    p.symmetric_eigenvalues().max().max(0.0).sqrt()
}

pub(crate) fn sample_bounds(model: &RobotModel, region: &Region, level: u32) -> Result<RawBounds> {
    model.validate()?;
    region.validate()?;
    if region.dim() != model.dof() {
        return Err(invalid(format!(
            "region has {} axes, model has {} coordinates",
            region.dim(),
            model.dof()
        )));
    }
    let axes = region.axis_samples(level);
    let total: usize = axes.iter().map(Vec::len).product();
    let mut raw = RawBounds {
        gamma_c: 0.0,
        lambda_min_m: f64::INFINITY,
        lambda_max_m: 0.0,
        gamma_ug: 0.0,
        gamma_g: 0.0,
        gamma_dg: 0.0,
        samples: total,
    };
    let n = model.dof();
    let mut idx = vec![0usize; n];
    let mut q = DVector::zeros(n);
    for _ in 0..total {
        for i in 0..n {
            q[i] = axes[i][idx[i]];
        }
        let pose = Pose::new(model, &q);
        let (m, dm) = mass_with_derivatives(model, &pose, true);
        let eig = m.symmetric_eigenvalues();
        raw.lambda_min_m = raw.lambda_min_m.min(eig.min());
        raw.lambda_max_m = raw.lambda_max_m.max(eig.max());
        raw.gamma_c = raw.gamma_c.max(coriolis_coefficient(&christoffel(&dm)));
        let (u, g) = gravity_terms(model, &pose);
        raw.gamma_ug = raw.gamma_ug.max(u.abs());
        raw.gamma_g = raw.gamma_g.max(g.norm());
        raw.gamma_dg = raw.gamma_dg.max(spectral_norm_symmetric(&gravity_jacobian_at(model, &pose)));
        // Odometer increment over the grid.
        for i in 0..n {
            idx[i] += 1;
            if idx[i] < axes[i].len() {
                break;
            }
            idx[i] = 0;
        }
    }
    Ok(raw)
}

/// Samples the region on a grid with `2^grid_level + 1` points per non-degenerate
/// axis and returns inflated bounds. Raising `grid_level` only adds samples.
pub fn estimate_bounds(model: &RobotModel, region: &Region, grid_level: u32) -> Result<SystemBounds> {
    let raw = sample_bounds(model, region, grid_level)?;
    Ok(SystemBounds {
        gamma_C: INFLATION * raw.gamma_c,
        lambda_min_M: raw.lambda_min_m / INFLATION,
        lambda_max_M: INFLATION * raw.lambda_max_m,
        gamma_UG: INFLATION * raw.gamma_ug,
        gamma_G: INFLATION * raw.gamma_g,
        gamma_dG: INFLATION * raw.gamma_dg,
        sample_grid: format!(
            "{}-D box, {} points per axis, {} samples",
            region.dim(),
            (1usize << grid_level) + 1,
            raw.samples
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::coriolis_matrix;
    use crate::model::{presets, Chain, LinkGeometry};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pendulum() -> RobotModel {
        RobotModel::new(vec![Chain::new([0.0, 0.0], vec![LinkGeometry::uniform_rod(1.0, 0.1)])])
    }

    #[test]
    fn gravity_free_bounds_vanish() {
        let model = presets::finger().with_gravity([0.0, 0.0]);
        let b = estimate_bounds(&model, &Region::cube(3, -1.0, 1.0).unwrap(), 2).unwrap();
        assert_eq!(b.gamma_UG, 0.0);
        assert_eq!(b.gamma_G, 0.0);
        assert_eq!(b.gamma_dG, 0.0);
        assert!(b.lambda_min_M > 0.0);
        assert!(b.gamma_C > 0.0);
    }

    #[test]
    fn pendulum_gravity_bound() {
        let b = estimate_bounds(&pendulum(), &Region::cube(1, -PI, PI).unwrap(), 3).unwrap();
        assert!(b.gamma_G >= 0.4905);
        assert!((b.gamma_G - 1.1 * 0.4905).abs() < 1e-12);
        assert!((b.lambda_max_M - 1.1 * 0.1 / 3.0).abs() < 1e-12);
        assert!((b.lambda_min_M - 0.1 / 3.0 / 1.1).abs() < 1e-12);
        assert_eq!(b.gamma_C, 0.0);
    }

    #[test]
    fn degenerate_axes_sample_once() {
        let r = Region::new(vec![0.0, -1.0, 0.5], vec![0.0, 1.0, 0.5]).unwrap();
        let raw = sample_bounds(&presets::finger(), &r, 2).unwrap();
        assert_eq!(raw.samples, 5);
    }

    #[test]
    fn region_errors() {
        assert!(Region::new(vec![], vec![]).is_err());
        assert!(Region::new(vec![1.0], vec![0.0]).is_err());
        assert!(Region::new(vec![0.0], vec![0.0, 1.0]).is_err());
        let r = Region::cube(2, -1.0, 1.0).unwrap();
        assert!(estimate_bounds(&presets::finger(), &r, 1).is_err());
    }

    #[test]
    fn coriolis_bound_covers_samples() {
        let model = presets::finger();
        let b = estimate_bounds(&model, &Region::cube(3, -PI, PI).unwrap(), 2).unwrap();
        let q = DVector::from_vec(vec![0.0, PI / 2.0, -PI]);
        for e in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.6, 0.0, 0.8]] {
            let e = DVector::from_row_slice(&e);
            let c = coriolis_matrix(&model, &q, &e).unwrap();
            assert!(c.norm() <= b.gamma_C);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn refinement_never_lowers_maxima(level in 0u32..3, lo in -2.0..0.0f64, width in 0.1..3.0f64) {
            let model = presets::finger();
            let r = Region::cube(3, lo, lo + width).unwrap();
            let a = sample_bounds(&model, &r, level).unwrap();
            let b = sample_bounds(&model, &r, level + 1).unwrap();
            prop_assert!(b.gamma_c >= a.gamma_c);
            prop_assert!(b.lambda_max_m >= a.lambda_max_m);
            prop_assert!(b.lambda_min_m <= a.lambda_min_m);
            prop_assert!(b.gamma_ug >= a.gamma_ug);
            prop_assert!(b.gamma_g >= a.gamma_g);
            prop_assert!(b.gamma_dg >= a.gamma_dg);
        }
    }
}
