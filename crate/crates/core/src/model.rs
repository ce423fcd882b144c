//! Robot description: link geometry, chains, springs, dampers and actuation.
//!
//! Generalized coordinates are the joint angles of every chain, concatenated
//! in chain order. Each joint angle is measured relative to its parent link;
//! the first joint of a chain is measured from the +x axis.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::coupling::CouplingSpec;
use crate::error::{Error, Result};

/// Planar rigid link. The centre of mass lies on the link centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub length: f64,
    pub mass: f64,
    /// Distance of the centre of mass from the proximal joint.
    pub com_offset: f64,
    pub inertia_about_com: f64,
}

impl LinkGeometry {
    /// Uniform thin rod: COM at mid-length, `I = m l² / 12`.
    pub fn uniform_rod(length: f64, mass: f64) -> Self {
        Self {
            length,
            mass,
            com_offset: 0.5 * length,
            inertia_about_com: mass * length * length / 12.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::InvalidModel(format!("length must be > 0, got {}", self.length)));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidModel(format!("mass must be > 0, got {}", self.mass)));
        }
        if !(self.inertia_about_com >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "inertia_about_com must be >= 0, got {}",
                self.inertia_about_com
            )));
        }
        if !(0.0..=self.length).contains(&self.com_offset) {
            return Err(Error::InvalidModel(format!(
                "com_offset must lie in [0, length], got {}",
                self.com_offset
            )));
        }
        Ok(())
    }
}

/// A serial chain of revolute joints rooted at a fixed base point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub base: [f64; 2],
    pub links: Vec<LinkGeometry>,
}

impl Chain {
    pub fn new(base: [f64; 2], links: Vec<LinkGeometry>) -> Self {
        Self { base, links }
    }
}

/// Reference to one link (segment) of one chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentRef {
    pub chain: usize,
    pub link: usize,
}

impl SegmentRef {
    pub fn new(chain: usize, link: usize) -> Self {
        Self { chain, link }
    }
}

#[derive(Debug, Clone)]
pub struct RobotModel {
    pub chains: Vec<Chain>,
    /// Decoupled per-joint spring stiffness `k_d` (rest angle zero).
    pub joint_stiffness: Vec<f64>,
    /// Per-joint viscous damping, assembled into a constant diagonal `D`.
    pub joint_damping: Vec<f64>,
    pub couplings: Vec<CouplingSpec>,
    /// Indices of the actuated coordinates `q_a`, in the order of `τ`.
    pub actuated: Vec<usize>,
    /// `n × m` map from actuator torques to generalized forces.
    pub actuation: DMatrix<f64>,
    pub gravity: Vector2<f64>,
}

impl RobotModel {
    /// A fully actuated, spring-free, undamped model under standard gravity.
    pub fn new(chains: Vec<Chain>) -> Self {
        let n: usize = chains.iter().map(|c| c.links.len()).sum();
        Self {
            chains,
            joint_stiffness: vec![0.0; n],
            joint_damping: vec![0.0; n],
            couplings: Vec::new(),
            actuated: (0..n).collect(),
            actuation: DMatrix::identity(n, n),
            gravity: Vector2::new(0.0, -9.81),
        }
    }

    pub fn with_stiffness(mut self, k: Vec<f64>) -> Self {
        self.joint_stiffness = k;
        self
    }

    pub fn with_uniform_stiffness(mut self, k: f64) -> Self {
        self.joint_stiffness = vec![k; self.dof()];
        self
    }

    pub fn with_damping(mut self, d: Vec<f64>) -> Self {
        self.joint_damping = d;
        self
    }

    pub fn with_uniform_damping(mut self, d: f64) -> Self {
        self.joint_damping = vec![d; self.dof()];
        self
    }

    pub fn with_coupling(mut self, c: CouplingSpec) -> Self {
        self.couplings.push(c);
        self
    }

    /// Sets the actuated index set and resets `A` to identity columns on it.
    pub fn with_actuated(mut self, actuated: Vec<usize>) -> Self {
        let n = self.dof();
        let mut a = DMatrix::zeros(n, actuated.len());
        for (col, &i) in actuated.iter().enumerate() {
            if i < n {
                a[(i, col)] = 1.0;
            }
        }
        self.actuated = actuated;
        self.actuation = a;
        self
    }

    pub fn with_gravity(mut self, g: [f64; 2]) -> Self {
        self.gravity = Vector2::new(g[0], g[1]);
        self
    }

    /// Number of generalized coordinates `n`.
    pub fn dof(&self) -> usize {
        self.chains.iter().map(|c| c.links.len()).sum()
    }

    /// Number of actuators `m`.
    pub fn n_actuated(&self) -> usize {
        self.actuated.len()
    }

    /// Unactuated coordinate indices in increasing order.
    pub fn unactuated(&self) -> Vec<usize> {
        (0..self.dof()).filter(|i| !self.actuated.contains(i)).collect()
    }

    /// Index of the first coordinate belonging to `chain`.
    pub fn chain_offset(&self, chain: usize) -> usize {
        self.chains[..chain].iter().map(|c| c.links.len()).sum()
    }

    /// Generalized coordinate of the joint at the proximal end of a segment.
    pub fn joint_index(&self, seg: SegmentRef) -> Result<usize> {
        self.check_segment(seg)?;
        Ok(self.chain_offset(seg.chain) + seg.link)
    }

    /// Inverse of [`joint_index`](Self::joint_index).
    pub fn segment_of(&self, coordinate: usize) -> Result<SegmentRef> {
        let mut offset = 0;
        for (c, chain) in self.chains.iter().enumerate() {
            if coordinate < offset + chain.links.len() {
                return Ok(SegmentRef::new(c, coordinate - offset));
            }
            offset += chain.links.len();
        }
        Err(Error::InvalidArgument(format!(
            "coordinate {coordinate} out of range for {} DOF model",
            self.dof()
        )))
    }

    pub fn link(&self, seg: SegmentRef) -> Result<&LinkGeometry> {
        self.check_segment(seg)?;
        Ok(&self.chains[seg.chain].links[seg.link])
    }

    pub(crate) fn check_segment(&self, seg: SegmentRef) -> Result<()> {
        let chain = self.chains.get(seg.chain).ok_or_else(|| {
            Error::InvalidArgument(format!("chain index {} out of range", seg.chain))
        })?;
        if seg.link >= chain.links.len() {
            return Err(Error::InvalidArgument(format!(
                "link index {} out of range for chain {} with {} links",
                seg.link,
                seg.chain,
                chain.links.len()
            )));
        }
        Ok(())
    }

    /// Constant damping matrix `D`.
    pub fn damping_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.joint_damping))
    }

    /// Structural checks. Zero damping is accepted here (free-motion tests);
    /// controllers that need `D ≻ 0` call [`require_damping`](Self::require_damping).
    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        if n == 0 {
            return Err(Error::InvalidModel("model has no joints".into()));
        }
        for chain in &self.chains {
            if chain.links.is_empty() {
                return Err(Error::InvalidModel("chain with no links".into()));
            }
            for link in &chain.links {
                link.validate()?;
            }
        }
        if self.joint_stiffness.len() != n || self.joint_damping.len() != n {
            return Err(Error::InvalidModel(format!(
                "joint_stiffness/joint_damping must have {n} entries"
            )));
        }
        if self.joint_stiffness.iter().any(|k| !(*k >= 0.0)) {
            return Err(Error::InvalidModel("joint_stiffness must be >= 0".into()));
        }
        if self.joint_damping.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::InvalidModel("joint_damping must be >= 0".into()));
        }
        let m = self.actuated.len();
        if m == 0 || m > n {
            return Err(Error::InvalidModel(format!(
                "actuated set must have 1..={n} entries, got {m}"
            )));
        }
        let mut seen = vec![false; n];
        for &i in &self.actuated {
            if i >= n || seen[i] {
                return Err(Error::InvalidModel(format!("bad actuated index {i}")));
            }
            seen[i] = true;
        }
        if self.actuation.nrows() != n || self.actuation.ncols() != m {
            return Err(Error::InvalidModel(format!(
                "actuation map must be {n}x{m}, got {}x{}",
                self.actuation.nrows(),
                self.actuation.ncols()
            )));
        }
        let rank = self.actuation.clone().svd(false, false).rank(1e-10);
        if rank < m {
            return Err(Error::InvalidModel(format!(
                "actuation map must have full column rank {m}, got rank {rank}"
            )));
        }
        for c in &self.couplings {
            c.validate(self)?;
        }
        Ok(())
    }

    pub fn require_damping(&self) -> Result<()> {
        if self.joint_damping.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidModel(
                "damping must be positive definite (every joint_damping > 0)".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::InvalidArgument(format!(
                "configuration has {} entries, model has {} DOF",
                q.len(),
                self.dof()
            )));
        }
        Ok(())
    }
}

/// Gathers `v[idx]` into a new vector.
pub fn select(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Extracts the `rows × cols` block of `m`.
pub fn block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

/// Scatters the actuated and unactuated parts back into a full vector.
pub fn assemble(a_idx: &[usize], a: &DVector<f64>, u_idx: &[usize], u: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a_idx.len() + u_idx.len());
    for (k, &i) in a_idx.iter().enumerate() {
        out[i] = a[k];
    }
    for (k, &i) in u_idx.iter().enumerate() {
        out[i] = u[k];
    }
    out
}

/// Reference robots used by the bundled scenarios and the test suites.
pub mod presets {
    use super::*;
    use crate::coupling::{CouplingFamily, CouplingSpec};

    /// Three-link serial finger: joints 0 and 1 actuated, joint 2 passive,
    /// `l = 1 m`, `m = 0.1 kg`, `k_d = 1.5`, `k_c = 2` between joints 1 and 2,
    /// `d = 0.5`, `g = 9.81`.
    pub fn finger() -> RobotModel {
        let links = vec![LinkGeometry::uniform_rod(1.0, 0.1); 3];
        RobotModel::new(vec![Chain::new([0.0, 0.0], links)])
            .with_uniform_stiffness(1.5)
            .with_uniform_damping(0.5)
            .with_coupling(CouplingSpec::coordinates(CouplingFamily::Linear, 2.0, 1, 2))
            .with_actuated(vec![0, 1])
            .with_gravity([0.0, -9.81])
    }

    /// Two single-link chains sharing a base at the origin, joined by one
    /// coupling. Coordinate 0 is actuated, coordinate 1 is passive.
    pub fn parallel_pair(family: CouplingFamily, k: f64, length: f64, mass: f64) -> RobotModel {
        let link = LinkGeometry::uniform_rod(length, mass);
        RobotModel::new(vec![
            Chain::new([0.0, 0.0], vec![link.clone()]),
            Chain::new([0.0, 0.0], vec![link]),
        ])
        .with_coupling(CouplingSpec::segments(
            family,
            k,
            SegmentRef::new(0, 0),
            SegmentRef::new(1, 0),
        ))
        .with_actuated(vec![0])
    }

    /// Serial flipper of `segments` coupled links driven at the root only.
    /// Neighbouring joints share a linear coupling.
    pub fn flipper(segments: usize) -> RobotModel {
        let links = vec![LinkGeometry::uniform_rod(0.5, 0.05); segments];
        let mut model = RobotModel::new(vec![Chain::new([0.0, 0.0], links)])
            .with_uniform_stiffness(1.0)
            .with_uniform_damping(0.2)
            .with_actuated(vec![0])
            .with_gravity([0.0, -9.81]);
        for j in 0..segments.saturating_sub(1) {
            model = model.with_coupling(CouplingSpec::coordinates(CouplingFamily::Linear, 1.5, j, j + 1));
        }
        model
    }
}
