//! Equations of motion `M(q) q̈ + C(q, q̇) q̇ + G(q) + F_K(q) + D q̇ = A τ`.
//!
//! Links are treated as rigid bodies with their COM on the centerline, so
//! `M = Σ m Jᵥᵀ Jᵥ + I_com J_ωᵀ J_ω`. The Coriolis matrix is built from the
//! Christoffel symbols of `M`, which makes `Ṁ − 2C` skew-symmetric.

mod bounds;
mod integrator;

pub use bounds::{estimate_bounds, Region, SystemBounds};
pub use integrator::{step, Controller, LogRow, Simulation, State, TrajectoryLog};

use nalgebra::{DMatrix, DVector};

use crate::coupling::elastic_energy_force;
use crate::error::{Error, Result};
use crate::kinematics::Pose;
use crate::model::{select, RobotModel, SegmentRef};

/// Condition-number ceiling for the mass matrix.
pub const MAX_MASS_CONDITION: f64 = 1e12;

fn links(model: &RobotModel) -> impl Iterator<Item = (SegmentRef, &crate::model::LinkGeometry)> {
    model
        .chains
        .iter()
        .enumerate()
        .flat_map(|(c, ch)| ch.links.iter().enumerate().map(move |(i, l)| (SegmentRef::new(c, i), l)))
}

fn com_fraction(l: &crate::model::LinkGeometry) -> f64 {
    l.com_offset / l.length
}

/// Mass matrix and, optionally, its partial derivatives `∂M/∂q_k`.
pub(crate) fn mass_with_derivatives(
    model: &RobotModel,
    pose: &Pose,
    derivatives: bool,
) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let n = model.dof();
    let mut m = DMatrix::zeros(n, n);
    let mut dm = if derivatives { vec![DMatrix::zeros(n, n); n] } else { Vec::new() };
    for (seg, link) in links(model) {
        let s = com_fraction(link);
        let j = pose.jacobian(seg, s);
        let off = model.chain_offset(seg.chain);
        m += link.mass * (j.transpose() * &j);
        for a in 0..=seg.link {
            for b in 0..=seg.link {
                m[(off + a, off + b)] += link.inertia_about_com;
            }
        }
        if derivatives {
            let p = pose.point(seg, s);
            for r in 0..=seg.link {
                // H = ∂J/∂q_r, column a = −(p − o_max(a, r)) for a on the path.
                let mut h = DMatrix::zeros(2, n);
                for a in 0..=seg.link {
                    let o = pose.joint_origin(SegmentRef::new(seg.chain, a.max(r)));
                    let v = o - p;
                    h[(0, off + a)] = v.x;
                    h[(1, off + a)] = v.y;
                }
                let t = j.transpose() * &h;
                dm[off + r] += link.mass * (&t + t.transpose());
            }
        }
    }
    (m, dm)
}

pub fn mass_matrix(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.check_q(q)?;
    let pose = Pose::new(model, q);
    let (m, _) = mass_with_derivatives(model, &pose, false);
    debug_assert!(m.clone().symmetric_eigenvalues().min() > 0.0, "mass matrix lost positive definiteness");
    Ok(m)
}

/// `∂M/∂q_k` for every coordinate `k`.
pub fn mass_matrix_derivatives(model: &RobotModel, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
    model.check_q(q)?;
    let pose = Pose::new(model, q);
    Ok(mass_with_derivatives(model, &pose, true).1)
}

/// Christoffel symbols `Γ[k][(i, j)] = ½(∂_k M_ij + ∂_j M_ik − ∂_i M_jk)`, so
/// that `C_ij = Σ_k Γ[k][(i, j)] q̇_k`.
pub(crate) fn christoffel(dm: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let n = dm.len();
    (0..n)
        .map(|k| DMatrix::from_fn(n, n, |i, j| 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)])))
        .collect()
}

fn coriolis_from(dm: &[DMatrix<f64>], q_dot: &DVector<f64>) -> DMatrix<f64> {
    let n = q_dot.len();
    let gamma = christoffel(dm);
    let mut c = DMatrix::zeros(n, n);
    for (k, g) in gamma.iter().enumerate() {
        c += g * q_dot[k];
    }
    c
}

/// Coriolis/centrifugal matrix `C(q, q̇)` from the Christoffel symbols of `M`.
pub fn coriolis_matrix(model: &RobotModel, q: &DVector<f64>, q_dot: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.check_q(q)?;
    model.check_q(q_dot)?;
    let dm = mass_matrix_derivatives(model, q)?;
    Ok(coriolis_from(&dm, q_dot))
}

/// `C(q, q̇) q̇ = Ṁ q̇ − ½ [q̇ᵀ ∂_i M q̇]_i`, without forming `C`.
fn coriolis_vector(dm: &[DMatrix<f64>], q_dot: &DVector<f64>) -> DVector<f64> {
    let n = q_dot.len();
    let mut m_dot = DMatrix::zeros(n, n);
    for (k, d) in dm.iter().enumerate() {
        m_dot += d * q_dot[k];
    }
    let mut h = &m_dot * q_dot;
    for i in 0..n {
        h[i] -= 0.5 * q_dot.dot(&(&dm[i] * q_dot));
    }
    h
}

pub(crate) fn gravity_terms(model: &RobotModel, pose: &Pose) -> (f64, DVector<f64>) {
    let n = model.dof();
    let mut u = 0.0;
    let mut g = DVector::zeros(n);
    for (seg, link) in links(model) {
        let s = com_fraction(link);
        let p = pose.point(seg, s);
        u -= link.mass * model.gravity.dot(&p);
        let j = pose.jacobian(seg, s);
        g -= link.mass * (j.transpose() * DVector::from_column_slice(model.gravity.as_slice()));
    }
    (u, g)
}

/// Gravitational potential `U_G = −Σ mᵢ gᵀ p_com,i` (zero at the base height).
pub fn gravity_potential(model: &RobotModel, q: &DVector<f64>) -> Result<f64> {
    model.check_q(q)?;
    Ok(gravity_terms(model, &Pose::new(model, q)).0)
}

/// `G = ∂U_G/∂q`.
pub fn gravity_vector(model: &RobotModel, q: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_q(q)?;
    Ok(gravity_terms(model, &Pose::new(model, q)).1)
}

/// `∂G/∂q`, the Hessian of the gravitational potential.
pub fn gravity_jacobian(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.check_q(q)?;
    let pose = Pose::new(model, q);
    Ok(gravity_jacobian_at(model, &pose))
}

pub(crate) fn gravity_jacobian_at(model: &RobotModel, pose: &Pose) -> DMatrix<f64> {
    let n = model.dof();
    let mut dg = DMatrix::zeros(n, n);
    for (seg, link) in links(model) {
        dg -= link.mass * pose.hessian_contract(seg, com_fraction(link), model.gravity);
    }
    dg
}

/// Kinetic, elastic and gravitational energy of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    pub kinetic: f64,
    pub elastic: f64,
    pub gravitational: f64,
}

impl Energies {
    pub fn total(&self) -> f64 {
        self.kinetic + self.elastic + self.gravitational
    }
}

pub fn energies(model: &RobotModel, q: &DVector<f64>, q_dot: &DVector<f64>) -> Result<Energies> {
    model.check_q(q)?;
    model.check_q(q_dot)?;
    let pose = Pose::new(model, q);
    let (m, _) = mass_with_derivatives(model, &pose, false);
    let (elastic, _) = elastic_energy_force(model, q, &pose)?;
    let (gravitational, _) = gravity_terms(model, &pose);
    Ok(Energies {
        kinetic: 0.5 * q_dot.dot(&(&m * q_dot)),
        elastic,
        gravitational,
    })
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let eig = m.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_MASS_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let chol = m.clone().cholesky().ok_or(Error::IllConditioned { condition })?;
    Ok(chol.solve(rhs))
}

/// Accelerations under a generalized input `Aτ + f_ext`. Coordinates in
/// `clamped` are held fixed (`q̈ = 0`) and the remaining block is solved with
/// the clamped velocities assumed zero.
pub(crate) fn accelerations(
    model: &RobotModel,
    q: &DVector<f64>,
    q_dot: &DVector<f64>,
    generalized_input: &DVector<f64>,
    clamped: &[usize],
) -> Result<DVector<f64>> {
    let pose = Pose::new(model, q);
    let (m, dm) = mass_with_derivatives(model, &pose, true);
    let h = coriolis_vector(&dm, q_dot);
    let (_, g) = gravity_terms(model, &pose);
    let (_, fk) = elastic_energy_force(model, q, &pose)?;
    let damping = DVector::from_fn(q.len(), |i, _| model.joint_damping[i] * q_dot[i]);
    let rhs = generalized_input - h - g - fk - damping;
    if clamped.is_empty() {
        return solve_spd(&m, &rhs);
    }
    let free: Vec<usize> = (0..q.len()).filter(|i| !clamped.contains(i)).collect();
    let m_ff = crate::model::block(&m, &free, &free);
    let acc_free = solve_spd(&m_ff, &select(&rhs, &free))?;
    let mut acc = DVector::zeros(q.len());
    for (k, &i) in free.iter().enumerate() {
        acc[i] = acc_free[k];
    }
    Ok(acc)
}

/// `q̈ = M⁻¹(Aτ − C q̇ − G − F_K − D q̇)`.
pub fn forward_dynamics(model: &RobotModel, state: &State, tau: &DVector<f64>) -> Result<DVector<f64>> {
    forward_dynamics_with(model, state, tau, None)
}

/// As [`forward_dynamics`] with an additional external generalized force.
pub fn forward_dynamics_with(
    model: &RobotModel,
    state: &State,
    tau: &DVector<f64>,
    external: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    model.check_q(&state.q)?;
    model.check_q(&state.q_dot)?;
    if tau.len() != model.n_actuated() {
        return Err(Error::InvalidArgument(format!(
            "torque has {} entries, model has {} actuators",
            tau.len(),
            model.n_actuated()
        )));
    }
    let mut input = &model.actuation * tau;
    if let Some(f) = external {
        input += f;
    }
    accelerations(model, &state.q, &state.q_dot, &input, &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{CouplingFamily, CouplingSpec};
    use crate::model::{presets, Chain, LinkGeometry};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pendulum() -> RobotModel {
        RobotModel::new(vec![Chain::new([0.0, 0.0], vec![LinkGeometry::uniform_rod(1.0, 0.1)])])
    }

    /// Independent serial-chain inertia: explicit COM positions differentiated
    /// term by term, with the rotational part from absolute link rates.
    fn textbook_serial_mass(lengths: &[f64], masses: &[f64], q: &[f64]) -> DMatrix<f64> {
        let n = lengths.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut jv = DMatrix::<f64>::zeros(2, n);
            for k in 0..=i {
                // d p_com,i / d q_k = Σ_{j=k..i} ℓ_j (−sin θ_j, cos θ_j)
                for j in k..=i {
                    let th: f64 = q[..=j].iter().sum();
                    let lj = if j == i { lengths[j] / 2.0 } else { lengths[j] };
                    jv[(0, k)] += -lj * th.sin();
                    jv[(1, k)] += lj * th.cos();
                }
            }
            let inertia = masses[i] * lengths[i] * lengths[i] / 12.0;
            let jw = DMatrix::from_fn(1, n, |_, k| if k <= i { 1.0 } else { 0.0 });
            m += masses[i] * jv.transpose() * &jv + inertia * jw.transpose() * jw;
        }
        m
    }

    #[test]
    fn uniform_rod_inertia() {
        let m = mass_matrix(&pendulum(), &DVector::from_vec(vec![0.3])).unwrap();
        assert_abs_diff_eq!(m[(0, 0)], 0.1 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn finger_mass_matches_textbook() {
        let model = presets::finger();
        for q in [vec![0.0, 0.0, 0.0], vec![0.4, -1.2, 2.0]] {
            let m = mass_matrix(&model, &DVector::from_vec(q.clone())).unwrap();
            let oracle = textbook_serial_mass(&[1.0; 3], &[0.1; 3], &q);
            assert!((m - oracle).amax() < 1e-10);
        }
    }

    #[test]
    fn pendulum_has_no_coriolis() {
        let c = coriolis_matrix(&pendulum(), &DVector::from_vec(vec![0.7]), &DVector::from_vec(vec![3.0])).unwrap();
        assert_eq!(c[(0, 0)], 0.0);
    }

    #[test]
    fn coriolis_vanishes_at_rest() {
        let model = presets::finger();
        let c = coriolis_matrix(&model, &DVector::from_vec(vec![0.1, 0.5, -0.3]), &DVector::zeros(3)).unwrap();
        assert_eq!(c.amax(), 0.0);
    }

    #[test]
    fn pendulum_gravity() {
        let p = pendulum();
        assert_abs_diff_eq!(gravity_vector(&p, &DVector::from_vec(vec![0.0])).unwrap()[0], 0.4905, epsilon = 1e-12);
        assert_abs_diff_eq!(gravity_vector(&p, &DVector::from_vec(vec![PI / 2.0])).unwrap()[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn equilibrium_has_zero_acceleration() {
        // Fully actuated finger holding q with τ = G + F_K.
        let model = presets::finger().with_actuated(vec![0, 1, 2]);
        let q = DVector::from_vec(vec![0.3, -0.2, 0.5]);
        let tau = gravity_vector(&model, &q).unwrap()
            + crate::coupling::assemble_total_elastic(&model, &q).unwrap().force;
        let state = State::new(q, DVector::zeros(3));
        let acc = forward_dynamics(&model, &state, &tau).unwrap();
        assert!(acc.amax() < 1e-12);
    }

    #[test]
    fn torque_dimension_checked() {
        let model = presets::finger();
        let state = State::new(DVector::zeros(3), DVector::zeros(3));
        assert!(forward_dynamics(&model, &state, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn massless_geometry_is_ill_conditioned() {
        let mut link = LinkGeometry::uniform_rod(1.0, 1.0);
        link.com_offset = 0.0;
        link.inertia_about_com = 0.0;
        let model = RobotModel::new(vec![Chain::new([0.0, 0.0], vec![link])]);
        let state = State::new(DVector::zeros(1), DVector::zeros(1));
        assert!(matches!(
            forward_dynamics(&model, &state, &DVector::zeros(1)),
            Err(Error::IllConditioned { .. })
        ));
    }

    fn five_point_derivative(f: impl Fn(f64) -> DMatrix<f64>, h: f64) -> DMatrix<f64> {
        (f(-2.0 * h) - f(2.0 * h) + 8.0 * (f(h) - f(-h))) / (12.0 * h)
    }

    fn coupled_model() -> RobotModel {
        let mut m = presets::finger();
        m.chains.push(Chain::new([0.2, 0.1], vec![LinkGeometry::uniform_rod(0.8, 0.3); 2]));
        m.joint_stiffness.extend([0.5, 0.5]);
        m.joint_damping.extend([0.1, 0.1]);
        m.with_coupling(CouplingSpec::coordinates(CouplingFamily::Distance, 1.0, 2, 4))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mass_matrix_symmetric_positive_definite(qs in prop::collection::vec(-PI..PI, 5)) {
            let m = mass_matrix(&coupled_model(), &DVector::from_vec(qs)).unwrap();
            prop_assert!((&m - m.transpose()).amax() == 0.0);
            prop_assert!(m.symmetric_eigenvalues().min() > 0.0);
        }

        #[test]
        fn mass_derivatives_match_finite_difference(qs in prop::collection::vec(-PI..PI, 5), k in 0usize..5) {
            let model = coupled_model();
            let q = DVector::from_vec(qs);
            let dm = mass_matrix_derivatives(&model, &q).unwrap();
            let fd = five_point_derivative(|h| {
                let mut qq = q.clone();
                qq[k] += h;
                mass_matrix(&model, &qq).unwrap()
            }, 1e-3);
            prop_assert!((&dm[k] - fd).amax() < 1e-9);
        }

        #[test]
        fn skew_symmetry(
            qs in prop::collection::vec(-PI..PI, 5),
            vs in prop::collection::vec(-2.0..2.0f64, 5),
            xs in prop::collection::vec(-1.0..1.0f64, 5),
        ) {
            let model = coupled_model();
            let q = DVector::from_vec(qs);
            let v = DVector::from_vec(vs);
            let x = DVector::from_vec(xs);
            let m_dot = five_point_derivative(|h| mass_matrix(&model, &(&q + &v * h)).unwrap(), 1e-3);
            let c = coriolis_matrix(&model, &q, &v).unwrap();
            let s = x.dot(&((m_dot - 2.0 * c) * &x));
            prop_assert!(s.abs() < 1e-10, "xᵀ(Ṁ − 2C)x = {s}");
        }

        #[test]
        fn gravity_is_potential_gradient(qs in prop::collection::vec(-PI..PI, 5)) {
            let model = coupled_model();
            let q = DVector::from_vec(qs);
            let g = gravity_vector(&model, &q).unwrap();
            for k in 0..5 {
                let h = 1e-6;
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[k] += h;
                qm[k] -= h;
                let fd = (gravity_potential(&model, &qp).unwrap() - gravity_potential(&model, &qm).unwrap()) / (2.0 * h);
                prop_assert!((g[k] - fd).abs() < 1e-6);
            }
            let dg = gravity_jacobian(&model, &q).unwrap();
            prop_assert!((&dg - dg.transpose()).amax() < 1e-12);
        }

        #[test]
        fn partitioned_dynamics_reassemble(
            qs in prop::collection::vec(-PI..PI, 3),
            vs in prop::collection::vec(-2.0..2.0f64, 3),
            ts in prop::collection::vec(-1.0..1.0f64, 2),
        ) {
            // Solve the a/u block system explicitly and compare with the
            // unpartitioned solve.
            let model = presets::finger();
            let q = DVector::from_vec(qs);
            let v = DVector::from_vec(vs);
            let tau = DVector::from_vec(ts);
            let acc = forward_dynamics(&model, &State::new(q.clone(), v.clone()), &tau).unwrap();
            let m = mass_matrix(&model, &q).unwrap();
            let c = coriolis_matrix(&model, &q, &v).unwrap();
            let g = gravity_vector(&model, &q).unwrap();
            let el = crate::coupling::assemble_total_elastic(&model, &q).unwrap();
            let d = model.damping_matrix();
            let a = &model.actuated;
            let u = model.unactuated();
            use crate::model::{block, select};
            let rhs_a = &tau - block(&c, a, &(0..3).collect::<Vec<_>>()) * &v - select(&g, a) - &el.force_a - block(&d, a, a) * select(&v, a);
            let rhs_u = -block(&c, &u, &(0..3).collect::<Vec<_>>()) * &v - select(&g, &u) - &el.force_u - block(&d, &u, &u) * select(&v, &u);
            // Schur complement on the unactuated block.
            let maa = block(&m, a, a);
            let mau = block(&m, a, &u);
            let mua = block(&m, &u, a);
            let muu = block(&m, &u, &u);
            let muu_inv = muu.try_inverse().unwrap();
            let schur = &maa - &mau * &muu_inv * &mua;
            let acc_a = schur.lu().solve(&(&rhs_a - &mau * &muu_inv * &rhs_u)).unwrap();
            let acc_u = &muu_inv * (&rhs_u - &mua * &acc_a);
            let full = crate::model::assemble(a, &acc_a, &u, &acc_u);
            prop_assert!((full - acc).amax() < 1e-10);
        }
    }
}
