//! Elastic coupling energy models with their generalized forces and
//! stiffness (Hessian) matrices.
//!
//! Four families are provided:
//!
//! * `Linear`: `U = ½ k (q_i − q_j)²`.
//! * `Distance`: `U = k ∫₀¹ ‖p_a(s) − p_b(s)‖² ds`.
//! * `Rejection`: `U = k ∫₀¹ ‖r_a‖² + ‖r_b‖² ds`, with `r_a` the rejection of
//!   `p_a` from `p_b` and vice versa.
//! * `NeoHookean`: `U = k (λ² + λ⁻² − 2)` with the principal stretch of simple
//!   shear `λ = (γ + √(γ² + 4)) / 2` and shear amount `γ = q_i − q_j`.
//!
//! Units of `k`: N·m/rad for `Linear`, N·m for `NeoHookean` (energy per unit
//! squared shear) and N/m for the two integral families, whose integrands have
//! units of m².
//!
//! Forces follow the sign of `F_K` in `M q̈ + C q̇ + G + F_K + D q̇ = A τ`, i.e.
//! `F_K = ∂U/∂q`. Gradients of the integral families are differentiated under
//! the integral using the point Jacobians.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Pose;
use crate::model::{RobotModel, SegmentRef};
use crate::quadrature::GaussLegendre;

pub const DEFAULT_QUADRATURE_POINTS: usize = 20;

/// Below this distance from the origin a rejection is undefined.
pub const REJECTION_MIN_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingFamily {
    Linear,
    Distance,
    Rejection,
    NeoHookean,
}

impl CouplingFamily {
    pub const ALL: [CouplingFamily; 4] = [
        CouplingFamily::Linear,
        CouplingFamily::Distance,
        CouplingFamily::Rejection,
        CouplingFamily::NeoHookean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CouplingFamily::Linear => "linear",
            CouplingFamily::Distance => "distance",
            CouplingFamily::Rejection => "rejection",
            CouplingFamily::NeoHookean => "neo_hookean",
        }
    }

    /// Families defined by integrals along the coupled segments.
    pub fn is_integral(self) -> bool {
        matches!(self, CouplingFamily::Distance | CouplingFamily::Rejection)
    }
}

impl std::fmt::Display for CouplingFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CouplingFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "linear" => Ok(Self::Linear),
            "distance" => Ok(Self::Distance),
            "rejection" => Ok(Self::Rejection),
            "neo_hookean" | "neohookean" => Ok(Self::NeoHookean),
            other => Err(Error::InvalidArgument(format!("unknown coupling family `{other}`"))),
        }
    }
}

/// The two members of a coupling: either two generalized coordinates or two
/// segments. Every coordinate is the proximal joint of exactly one segment, so
/// either form can drive every family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoupledPair {
    Coordinates(usize, usize),
    Segments(SegmentRef, SegmentRef),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec {
    pub family: CouplingFamily,
    pub k: f64,
    pub pair: CoupledPair,
    /// Gauss–Legendre points for the integral families.
    pub quadrature_points: usize,
}

impl CouplingSpec {
    pub fn coordinates(family: CouplingFamily, k: f64, i: usize, j: usize) -> Self {
        Self {
            family,
            k,
            pair: CoupledPair::Coordinates(i, j),
            quadrature_points: DEFAULT_QUADRATURE_POINTS,
        }
    }

    pub fn segments(family: CouplingFamily, k: f64, a: SegmentRef, b: SegmentRef) -> Self {
        Self {
            family,
            k,
            pair: CoupledPair::Segments(a, b),
            quadrature_points: DEFAULT_QUADRATURE_POINTS,
        }
    }

    pub fn with_quadrature_points(mut self, n: usize) -> Self {
        self.quadrature_points = n;
        self
    }

    /// Same members and quadrature, another family and stiffness.
    pub fn with_family(&self, family: CouplingFamily, k: f64) -> Self {
        Self { family, k, ..self.clone() }
    }

    pub fn coordinate_pair(&self, model: &RobotModel) -> Result<(usize, usize)> {
        match self.pair {
            CoupledPair::Coordinates(i, j) => {
                let n = model.dof();
                if i >= n || j >= n {
                    return Err(Error::InvalidModel(format!(
                        "coupling coordinates ({i}, {j}) out of range for {n} DOF"
                    )));
                }
                Ok((i, j))
            }
            CoupledPair::Segments(a, b) => Ok((model.joint_index(a)?, model.joint_index(b)?)),
        }
    }

    pub fn segment_pair(&self, model: &RobotModel) -> Result<(SegmentRef, SegmentRef)> {
        match self.pair {
            CoupledPair::Coordinates(i, j) => Ok((model.segment_of(i)?, model.segment_of(j)?)),
            CoupledPair::Segments(a, b) => {
                model.check_segment(a)?;
                model.check_segment(b)?;
                Ok((a, b))
            }
        }
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidModel(format!("coupling stiffness k must be >= 0, got {}", self.k)));
        }
        let (i, j) = self.coordinate_pair(model)?;
        if i == j {
            return Err(Error::InvalidModel(format!("coupling members must be distinct, got ({i}, {j})")));
        }
        if self.family.is_integral() && self.quadrature_points == 0 {
            return Err(Error::InvalidModel("quadrature_points must be positive".into()));
        }
        Ok(())
    }
}

/// Energy, generalized force and stiffness of one or more couplings.
#[derive(Debug, Clone)]
pub struct ElasticEval {
    pub energy: f64,
    pub force: DVector<f64>,
    pub stiffness: Option<DMatrix<f64>>,
}

impl ElasticEval {
    fn zeros(n: usize, with_stiffness: bool) -> Self {
        Self {
            energy: 0.0,
            force: DVector::zeros(n),
            stiffness: with_stiffness.then(|| DMatrix::zeros(n, n)),
        }
    }
}

/// `(U, dU/dδ, d²U/dδ²)` of the coordinate-difference families at unit `k`.
fn difference_terms(family: CouplingFamily, delta: f64) -> (f64, f64, f64) {
    match family {
        CouplingFamily::Linear => (0.5 * delta * delta, delta, 1.0),
        CouplingFamily::NeoHookean => {
            let root = (delta * delta + 4.0).sqrt();
            let lambda = 0.5 * (delta + root);
            let l2 = lambda * lambda;
            let energy = l2 + 1.0 / l2 - 2.0;
            let du_dl = 2.0 * (lambda - 1.0 / (l2 * lambda));
            let d2u_dl2 = 2.0 * (1.0 + 3.0 / (l2 * l2));
            let dl = lambda / root;
            let d2l = 2.0 / (root * root * root);
            (energy, du_dl * dl, d2u_dl2 * dl * dl + du_dl * d2l)
        }
        _ => unreachable!("integral family has no difference form"),
    }
}

fn eval_difference(spec: &CouplingSpec, model: &RobotModel, q: &DVector<f64>, out: &mut ElasticEval) -> Result<()> {
    let (i, j) = spec.coordinate_pair(model)?;
    let (u, du, d2u) = difference_terms(spec.family, q[i] - q[j]);
    out.energy += spec.k * u;
    out.force[i] += spec.k * du;
    out.force[j] -= spec.k * du;
    if let Some(kmat) = out.stiffness.as_mut() {
        let h = spec.k * d2u;
        kmat[(i, i)] += h;
        kmat[(j, j)] += h;
        kmat[(i, j)] -= h;
        kmat[(j, i)] -= h;
    }
    Ok(())
}

#[inline]
fn m2(a: Vector2<f64>, b: Vector2<f64>) -> Matrix2<f64> {
    a * b.transpose()
}

/// Rejection integrand `f = c² (1/‖a‖² + 1/‖b‖²)` with `c = a × b`, its
/// gradient with respect to `(a, b)` and its 4×4 Hessian in 2×2 blocks.
#[allow(clippy::type_complexity)]
fn rejection_integrand(
    a: Vector2<f64>,
    b: Vector2<f64>,
) -> (f64, Vector2<f64>, Vector2<f64>, Matrix2<f64>, Matrix2<f64>, Matrix2<f64>) {
    let c = a.x * b.y - a.y * b.x;
    let aa = a.norm_squared();
    let bb = b.norm_squared();
    let s = 1.0 / aa + 1.0 / bb;
    let c_a = Vector2::new(b.y, -b.x);
    let c_b = Vector2::new(-a.y, a.x);
    let s_a = -2.0 * a / (aa * aa);
    let s_b = -2.0 * b / (bb * bb);
    let f = c * c * s;
    let g_a = 2.0 * c * s * c_a + c * c * s_a;
    let g_b = 2.0 * c * s * c_b + c * c * s_b;
    let eye = Matrix2::identity();
    let s_aa = -2.0 * eye / (aa * aa) + 8.0 * m2(a, a) / (aa * aa * aa);
    let s_bb = -2.0 * eye / (bb * bb) + 8.0 * m2(b, b) / (bb * bb * bb);
    // ∂c_a/∂b
    let dca_db = Matrix2::new(0.0, 1.0, -1.0, 0.0);
    let f_aa = 2.0 * s * m2(c_a, c_a) + 2.0 * c * (m2(c_a, s_a) + m2(s_a, c_a)) + c * c * s_aa;
    let f_bb = 2.0 * s * m2(c_b, c_b) + 2.0 * c * (m2(c_b, s_b) + m2(s_b, c_b)) + c * c * s_bb;
    let f_ab = 2.0 * s * m2(c_a, c_b) + 2.0 * c * s * dca_db + 2.0 * c * (m2(c_a, s_b) + m2(s_a, c_b));
    (f, g_a, g_b, f_aa, f_ab, f_bb)
}

fn eval_integral(
    spec: &CouplingSpec,
    model: &RobotModel,
    pose: &Pose,
    out: &mut ElasticEval,
) -> Result<()> {
    let (sa, sb) = spec.segment_pair(model)?;
    let rule = GaussLegendre::new(spec.quadrature_points);
    for (s, w) in rule.iter() {
        let pa = pose.point(sa, s);
        let pb = pose.point(sb, s);
        let ja = pose.jacobian(sa, s);
        let jb = pose.jacobian(sb, s);
        let wk = w * spec.k;
        match spec.family {
            CouplingFamily::Distance => {
                let d = pa - pb;
                let jd = &ja - &jb;
                out.energy += wk * d.norm_squared();
                out.force += 2.0 * wk * jd.transpose() * DVector::from_column_slice(d.as_slice());
                if let Some(kmat) = out.stiffness.as_mut() {
                    *kmat += 2.0 * wk * (jd.transpose() * &jd);
                    *kmat += 2.0 * wk * (pose.hessian_contract(sa, s, d) - pose.hessian_contract(sb, s, d));
                }
            }
            CouplingFamily::Rejection => {
                if pa.norm() < REJECTION_MIN_NORM || pb.norm() < REJECTION_MIN_NORM {
                    return Err(Error::DegenerateGeometry(format!(
                        "rejection undefined: sample point at s = {s:.6} lies at the origin"
                    )));
                }
                let (f, g_a, g_b, f_aa, f_ab, f_bb) = rejection_integrand(pa, pb);
                out.energy += wk * f;
                let ga = DVector::from_column_slice(g_a.as_slice());
                let gb = DVector::from_column_slice(g_b.as_slice());
                out.force += wk * (ja.transpose() * ga + jb.transpose() * gb);
                if let Some(kmat) = out.stiffness.as_mut() {
                    let to_d = |m: Matrix2<f64>| DMatrix::from_column_slice(2, 2, m.as_slice());
                    let (haa, hab, hbb) = (to_d(f_aa), to_d(f_ab), to_d(f_bb));
                    let cross = ja.transpose() * &hab * &jb;
                    *kmat += wk * (ja.transpose() * &haa * &ja + &cross + cross.transpose() + jb.transpose() * &hbb * &jb);
                    *kmat += wk * (pose.hessian_contract(sa, s, g_a) + pose.hessian_contract(sb, s, g_b));
                }
            }
            _ => unreachable!(),
        }
    }
    Ok(())
}

fn accumulate(
    spec: &CouplingSpec,
    model: &RobotModel,
    q: &DVector<f64>,
    pose: &Pose,
    out: &mut ElasticEval,
) -> Result<()> {
    if spec.family.is_integral() {
        eval_integral(spec, model, pose, out)
    } else {
        eval_difference(spec, model, q, out)
    }
}

/// Energy, force and (optionally) stiffness of a single coupling.
pub fn evaluate_coupling(
    spec: &CouplingSpec,
    model: &RobotModel,
    q: &DVector<f64>,
    with_stiffness: bool,
) -> Result<ElasticEval> {
    model.check_q(q)?;
    spec.validate(model)?;
    let pose = Pose::new(model, q);
    let mut out = ElasticEval::zeros(q.len(), with_stiffness);
    accumulate(spec, model, q, &pose, &mut out)?;
    Ok(out)
}

pub fn coupling_energy(spec: &CouplingSpec, model: &RobotModel, q: &DVector<f64>) -> Result<f64> {
    Ok(evaluate_coupling(spec, model, q, false)?.energy)
}

/// `F_K = ∂U/∂q` of one coupling.
pub fn coupling_force(spec: &CouplingSpec, model: &RobotModel, q: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(evaluate_coupling(spec, model, q, false)?.force)
}

/// `∂F_K/∂q` of one coupling (symmetric).
pub fn coupling_stiffness(spec: &CouplingSpec, model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(evaluate_coupling(spec, model, q, true)?.stiffness.expect("requested"))
}

/// Total elastic terms of a model, split by the actuated/unactuated partition.
#[derive(Debug, Clone)]
pub struct ElasticTerms {
    pub energy: f64,
    pub force: DVector<f64>,
    pub stiffness: DMatrix<f64>,
    pub force_a: DVector<f64>,
    pub force_u: DVector<f64>,
    pub k_aa: DMatrix<f64>,
    pub k_au: DMatrix<f64>,
    pub k_ua: DMatrix<f64>,
    pub k_uu: DMatrix<f64>,
}

/// Decoupled joint springs plus every coupling, without the stiffness matrix.
/// Used on the integration hot path.
pub(crate) fn elastic_energy_force(model: &RobotModel, q: &DVector<f64>, pose: &Pose) -> Result<(f64, DVector<f64>)> {
    let mut out = ElasticEval::zeros(q.len(), false);
    for (i, &k) in model.joint_stiffness.iter().enumerate() {
        out.energy += 0.5 * k * q[i] * q[i];
        out.force[i] += k * q[i];
    }
    for c in &model.couplings {
        accumulate(c, model, q, pose, &mut out)?;
    }
    Ok((out.energy, out.force))
}

/// Sums the decoupled joint springs and all couplings and partitions the
/// result into actuated (`a`) and unactuated (`u`) blocks.
pub fn assemble_total_elastic(model: &RobotModel, q: &DVector<f64>) -> Result<ElasticTerms> {
    model.check_q(q)?;
    let n = q.len();
    let pose = Pose::new(model, q);
    let mut out = ElasticEval::zeros(n, true);
    for (i, &k) in model.joint_stiffness.iter().enumerate() {
        out.energy += 0.5 * k * q[i] * q[i];
        out.force[i] += k * q[i];
        out.stiffness.as_mut().expect("allocated")[(i, i)] += k;
    }
    for c in &model.couplings {
        c.validate(model)?;
        accumulate(c, model, q, &pose, &mut out)?;
    }
    let stiffness = out.stiffness.expect("allocated");
    let a = &model.actuated;
    let u = model.unactuated();
    use crate::model::{block, select};
    Ok(ElasticTerms {
        energy: out.energy,
        force_a: select(&out.force, a),
        force_u: select(&out.force, &u),
        k_aa: block(&stiffness, a, a),
        k_au: block(&stiffness, a, &u),
        k_ua: block(&stiffness, &u, a),
        k_uu: block(&stiffness, &u, &u),
        force: out.force,
        stiffness,
    })
}

/// True when every coupling of the model is from the `Linear` family, so the
/// elastic force is exactly `K q`.
pub fn is_linear(model: &RobotModel) -> bool {
    model.couplings.iter().all(|c| c.family == CouplingFamily::Linear)
}
