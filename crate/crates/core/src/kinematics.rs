//! Planar forward kinematics and point Jacobians for serial revolute chains.
//!
//! A point at arc-length fraction `s` of link `i` sits at
//! `p = o_i + s·l_i·(cos θ_i, sin θ_i)` where `θ_i` is the sum of the joint
//! angles from the chain root to joint `i`. The Jacobian column of any joint
//! `k` on the path is the 90° rotation of `p − o_k`; the second derivative
//! with respect to joints `k` and `r` is `−(p − o_max(k,r))`.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::{invalid, Result};
use crate::model::{RobotModel, SegmentRef};

#[inline]
fn perp(v: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-v.y, v.x)
}

/// Joint origins and absolute link angles of every chain at one configuration.
#[derive(Debug, Clone)]
pub struct Pose {
    /// Per chain, per link: (proximal joint origin, absolute angle).
    frames: Vec<Vec<(Vector2<f64>, f64)>>,
    offsets: Vec<usize>,
    lengths: Vec<Vec<f64>>,
    n: usize,
}

impl Pose {
    /// Caller guarantees `q.len() == model.dof()`.
    pub fn new(model: &RobotModel, q: &DVector<f64>) -> Self {
        let mut frames = Vec::with_capacity(model.chains.len());
        let mut offsets = Vec::with_capacity(model.chains.len());
        let mut lengths = Vec::with_capacity(model.chains.len());
        let mut idx = 0;
        for chain in &model.chains {
            offsets.push(idx);
            let mut origin = Vector2::new(chain.base[0], chain.base[1]);
            let mut theta = 0.0;
            let mut f = Vec::with_capacity(chain.links.len());
            for link in &chain.links {
                theta += q[idx];
                f.push((origin, theta));
                origin += link.length * Vector2::new(theta.cos(), theta.sin());
                idx += 1;
            }
            frames.push(f);
            lengths.push(chain.links.iter().map(|l| l.length).collect());
        }
        Self { frames, offsets, lengths, n: idx }
    }

    /// Absolute angle of a link.
    pub fn angle(&self, seg: SegmentRef) -> f64 {
        self.frames[seg.chain][seg.link].1
    }

    pub fn joint_origin(&self, seg: SegmentRef) -> Vector2<f64> {
        self.frames[seg.chain][seg.link].0
    }

    pub fn point(&self, seg: SegmentRef, s: f64) -> Vector2<f64> {
        let (o, th) = self.frames[seg.chain][seg.link];
        o + s * self.lengths[seg.chain][seg.link] * Vector2::new(th.cos(), th.sin())
    }

    /// `2 × n` Jacobian of [`point`](Self::point).
    pub fn jacobian(&self, seg: SegmentRef, s: f64) -> DMatrix<f64> {
        let p = self.point(seg, s);
        let mut j = DMatrix::zeros(2, self.n);
        let off = self.offsets[seg.chain];
        for k in 0..=seg.link {
            let col = perp(p - self.frames[seg.chain][k].0);
            j[(0, off + k)] = col.x;
            j[(1, off + k)] = col.y;
        }
        j
    }

    /// `Σ_c w_c ∂²p_c/∂q∂q` for a fixed weight vector `w`.
    pub fn hessian_contract(&self, seg: SegmentRef, s: f64, w: Vector2<f64>) -> DMatrix<f64> {
        let p = self.point(seg, s);
        let off = self.offsets[seg.chain];
        let mut h = DMatrix::zeros(self.n, self.n);
        for k in 0..=seg.link {
            for r in 0..=seg.link {
                let o = self.frames[seg.chain][k.max(r)].0;
                h[(off + k, off + r)] = -w.dot(&(p - o));
            }
        }
        h
    }
}

fn check_args(model: &RobotModel, q: &DVector<f64>, seg: SegmentRef, s: f64) -> Result<()> {
    model.check_q(q)?;
    model.check_segment(seg)?;
    if !(0.0..=1.0).contains(&s) {
        return Err(invalid(format!("arc-length fraction s must be in [0, 1], got {s}")));
    }
    Ok(())
}

/// World-frame position of the point at fraction `s` along a link centerline.
pub fn forward_point(model: &RobotModel, q: &DVector<f64>, seg: SegmentRef, s: f64) -> Result<Vector2<f64>> {
    check_args(model, q, seg, s)?;
    Ok(Pose::new(model, q).point(seg, s))
}

/// `J` with `ṗ = J q̇`; columns of joints off the path to the point are zero.
pub fn point_jacobian(model: &RobotModel, q: &DVector<f64>, seg: SegmentRef, s: f64) -> Result<DMatrix<f64>> {
    check_args(model, q, seg, s)?;
    Ok(Pose::new(model, q).jacobian(seg, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, Chain, LinkGeometry};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn serial(n: usize) -> RobotModel {
        RobotModel::new(vec![Chain::new([0.0, 0.0], vec![LinkGeometry::uniform_rod(1.0, 0.1); n])])
    }

    #[test]
    fn straight_chain_tip() {
        let m = serial(2);
        let p = forward_point(&m, &DVector::from_vec(vec![0.0, 0.0]), SegmentRef::new(0, 1), 1.0).unwrap();
        assert_abs_diff_eq!(p, Vector2::new(2.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn quarter_turn() {
        let m = serial(1);
        let p = forward_point(&m, &DVector::from_vec(vec![PI / 2.0]), SegmentRef::new(0, 0), 1.0).unwrap();
        assert_abs_diff_eq!(p, Vector2::new(0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn half_link_at_45_degrees() {
        let m = serial(1);
        let p = forward_point(&m, &DVector::from_vec(vec![PI / 4.0]), SegmentRef::new(0, 0), 0.5).unwrap();
        let expected = 0.5 * (PI / 4.0).cos();
        assert_abs_diff_eq!(p.x, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, 0.5 * (PI / 4.0).sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(p.x, 0.35355, epsilon = 1e-5);
    }

    #[test]
    fn single_link_jacobian() {
        let m = serial(1);
        let j = point_jacobian(&m, &DVector::from_vec(vec![0.0]), SegmentRef::new(0, 0), 1.0).unwrap();
        assert_abs_diff_eq!(j[(0, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j[(1, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn distal_joint_column_is_zero() {
        let m = serial(2);
        let j = point_jacobian(&m, &DVector::zeros(2), SegmentRef::new(0, 0), 0.5).unwrap();
        assert_eq!(j[(0, 1)], 0.0);
        assert_eq!(j[(1, 1)], 0.0);
    }

    #[test]
    fn argument_errors() {
        let m = serial(2);
        let q = DVector::zeros(2);
        assert!(forward_point(&m, &q, SegmentRef::new(0, 2), 0.5).is_err());
        assert!(forward_point(&m, &q, SegmentRef::new(1, 0), 0.5).is_err());
        assert!(forward_point(&m, &q, SegmentRef::new(0, 0), 1.5).is_err());
        assert!(point_jacobian(&m, &q, SegmentRef::new(0, 0), -0.1).is_err());
        assert!(forward_point(&m, &DVector::zeros(3), SegmentRef::new(0, 0), 0.5).is_err());
    }

    fn fd_jacobian(m: &RobotModel, q: &DVector<f64>, seg: SegmentRef, s: f64, h: f64) -> DMatrix<f64> {
        let n = q.len();
        let mut j = DMatrix::zeros(2, n);
        for k in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let d = (Pose::new(m, &qp).point(seg, s) - Pose::new(m, &qm).point(seg, s)) / (2.0 * h);
            j[(0, k)] = d.x;
            j[(1, k)] = d.y;
        }
        j
    }

    fn mixed_model() -> RobotModel {
        let mut m = presets::finger();
        m.chains.push(Chain::new([0.3, -0.2], vec![LinkGeometry::uniform_rod(0.7, 0.2); 2]));
        m.joint_stiffness.extend([0.0, 0.0]);
        m.joint_damping.extend([0.0, 0.0]);
        m
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn jacobian_matches_finite_difference(
            qs in prop::collection::vec(-PI..PI, 5),
            s in 0.0..=1.0f64,
            link in 0usize..5,
        ) {
            let m = mixed_model();
            let q = DVector::from_vec(qs);
            let seg = m.segment_of(link).unwrap();
            let j = point_jacobian(&m, &q, seg, s).unwrap();
            let fd = fd_jacobian(&m, &q, seg, s, 1e-6);
            prop_assert!((j - fd).amax() < 1e-6);
        }

        #[test]
        fn chain_is_continuous(qs in prop::collection::vec(-PI..PI, 3)) {
            let m = serial(3);
            let q = DVector::from_vec(qs);
            for i in 0..2 {
                let a = forward_point(&m, &q, SegmentRef::new(0, i), 1.0).unwrap();
                let b = forward_point(&m, &q, SegmentRef::new(0, i + 1), 0.0).unwrap();
                prop_assert!((a - b).norm() < 1e-12);
            }
        }

        #[test]
        fn periodic_in_every_joint(qs in prop::collection::vec(-PI..PI, 3), k in 0usize..3, s in 0.0..=1.0f64) {
            let m = serial(3);
            let q = DVector::from_vec(qs);
            let mut q2 = q.clone();
            q2[k] += 2.0 * PI;
            let a = forward_point(&m, &q, SegmentRef::new(0, 2), s).unwrap();
            let b = forward_point(&m, &q2, SegmentRef::new(0, 2), s).unwrap();
            prop_assert!((a - b).norm() < 1e-12);
        }

        #[test]
        fn hessian_contract_matches_finite_difference(
            qs in prop::collection::vec(-PI..PI, 3),
            s in 0.0..=1.0f64,
            wx in -1.0..1.0f64,
            wy in -1.0..1.0f64,
        ) {
            let m = serial(3);
            let q = DVector::from_vec(qs);
            let w = Vector2::new(wx, wy);
            let seg = SegmentRef::new(0, 2);
            let h = Pose::new(&m, &q).hessian_contract(seg, s, w);
            let step = 1e-6;
            for r in 0..3 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[r] += step;
                qm[r] -= step;
                let dj = (Pose::new(&m, &qp).jacobian(seg, s) - Pose::new(&m, &qm).jacobian(seg, s)) / (2.0 * step);
                for k in 0..3 {
                    let fd = w.x * dj[(0, k)] + w.y * dj[(1, k)];
                    prop_assert!((h[(k, r)] - fd).abs() < 1e-6);
                }
            }
        }
    }
}
