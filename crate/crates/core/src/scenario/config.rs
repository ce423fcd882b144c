//! Declarative scenario description (JSON) and its validation.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::locate::{line_of, FieldPath};
use crate::control::{force_setpoint, Compensation, ForcePidConfig, RegulatorConfig, Wall};
use crate::coupling::{CouplingFamily, CouplingSpec};
use crate::dynamics::{Region, State};
use crate::error::{Error, Result};
use crate::identification::Noise;
use crate::model::{Chain, LinkGeometry, RobotModel, SegmentRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Regulate,
    ZeroDynamics,
    Disturb,
    ForceControl,
    Identify,
    Certify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub length: f64,
    pub mass: f64,
    /// Defaults to mid-length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub com_offset: Option<f64>,
    /// Defaults to the uniform-rod value `m l² / 12`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia_about_com: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    #[serde(default)]
    pub base: [f64; 2],
    pub links: Vec<LinkConfig>,
}

/// One coupling; exactly one of `coordinates` and `segments` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub family: CouplingFamily,
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<[usize; 2]>,
    /// `[[chain, link], [chain, link]]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<[[usize; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature_points: Option<usize>,
}

fn default_gravity() -> [f64; 2] {
    [0.0, -9.81]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub chains: Vec<ChainConfig>,
    pub joint_stiffness: Vec<f64>,
    pub joint_damping: Vec<f64>,
    #[serde(default)]
    pub couplings: Vec<CouplingConfig>,
    /// 0-based coordinate indices.
    pub actuated: Vec<usize>,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 2],
}

/// A gain given as a scalar (times identity), a diagonal or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gain {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl Gain {
    pub fn to_matrix(&self, m: usize) -> std::result::Result<DMatrix<f64>, String> {
        match self {
            Gain::Scalar(k) => Ok(DMatrix::identity(m, m) * *k),
            Gain::Diagonal(d) if d.len() == m => Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d))),
            Gain::Diagonal(d) => Err(format!("expected {m} diagonal entries, got {}", d.len())),
            Gain::Matrix(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(format!("expected a {m}x{m} matrix"));
                }
                Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
            }
        }
    }
}

/// Time-varying reference `q̄_a(t) = q̄_a + A sin(2π f t + φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: Vec<f64>,
    /// Hz.
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Sinusoid {
    pub fn offset(&self, t: f64) -> DVector<f64> {
        let s = (2.0 * PI * self.frequency * t + self.phase).sin();
        DVector::from_iterator(self.amplitude.len(), self.amplitude.iter().map(|a| a * s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulatorSection {
    pub k_p: Gain,
    pub k_d: Gain,
    pub compensation: Compensation,
    pub q_bar_a: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Sinusoid>,
    /// When set, the closed-loop Lyapunov function with this `γ₁` is logged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcePidSection {
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
    pub f_d: f64,
    pub integral_clamp: f64,
    /// Passive angle at which the feedforward set-point is computed.
    #[serde(default)]
    pub passive_setpoint: f64,
    #[serde(default)]
    pub gravity_compensation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControllerConfig {
    Regulator(RegulatorSection),
    ForcePid(ForcePidSection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_dot: Option<Vec<f64>>,
}

/// Torque pulse of `amplitude` on `coordinate` over `[start, start + duration)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub coordinate: usize,
    pub start: f64,
    pub duration: f64,
    pub amplitude: f64,
}

impl Pulse {
    pub fn active(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactConfig {
    /// Link whose distal tip touches the wall, `[chain, link]`.
    pub link: [usize; 2],
    pub point: [f64; 2],
    #[serde(default = "up")]
    pub normal: [f64; 2],
    #[serde(default = "wall_stiffness")]
    pub stiffness: f64,
    #[serde(default = "wall_damping")]
    pub damping: f64,
}

fn up() -> [f64; 2] {
    [0.0, 1.0]
}

fn wall_stiffness() -> f64 {
    Wall::DEFAULT_STIFFNESS
}

fn wall_damping() -> f64 {
    Wall::DEFAULT_DAMPING
}

impl ContactConfig {
    pub fn wall(&self) -> Wall {
        let n = (self.normal[0].hypot(self.normal[1])).max(f64::MIN_POSITIVE);
        Wall {
            point: self.point,
            normal: [self.normal[0] / n, self.normal[1] / n],
            stiffness: self.stiffness,
            damping: self.damping,
            contact: SegmentRef::new(self.link[0], self.link[1]),
        }
    }
}

fn default_span() -> f64 {
    0.8
}

fn default_noise() -> Noise {
    Noise::RangeFraction(0.05)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationConfig {
    /// Measured dataset (CSV); when absent a synthetic one is generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// Family and stiffness of the synthetic ground truth.
    pub family: CouplingFamily,
    pub k_true: f64,
    /// Half-width of the angle grid (rad).
    #[serde(default = "default_span")]
    pub span: f64,
    #[serde(default = "default_noise")]
    pub noise: Noise,
}

fn default_grid_level() -> u32 {
    crate::control::DEFAULT_GRID_LEVEL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationConfig {
    /// Defaults to `[-π, π]ⁿ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    #[serde(default = "default_grid_level")]
    pub grid_level: u32,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub robot: RobotConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerConfig>,
    pub duration: f64,
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<InitialState>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disturbances: Vec<Pulse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact: Option<ContactConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identification: Option<IdentificationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certification: Option<CertificationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub log_every: usize,
}

/// A validation failure before it is tied to a source line.
#[derive(Debug)]
pub(crate) struct Issue {
    pub path: FieldPath,
    pub message: String,
}

fn issue(path: FieldPath, message: impl Into<String>) -> Issue {
    Issue { path, message: message.into() }
}

type Check = std::result::Result<(), Issue>;

fn require(ok: bool, path: FieldPath, message: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(issue(path, message()))
    }
}

fn finite_all(xs: &[f64], path: &FieldPath) -> Check {
    for (i, x) in xs.iter().enumerate() {
        require(x.is_finite(), path.index(i), || format!("must be finite, got {x}"))?;
    }
    Ok(())
}

impl RobotConfig {
    pub fn dof(&self) -> usize {
        self.chains.iter().map(|c| c.links.len()).sum()
    }

    pub fn from_model(model: &RobotModel) -> Self {
        use crate::coupling::CoupledPair;
        Self {
            chains: model
                .chains
                .iter()
                .map(|c| ChainConfig {
                    base: c.base,
                    links: c
                        .links
                        .iter()
                        .map(|l| LinkConfig {
                            length: l.length,
                            mass: l.mass,
                            com_offset: Some(l.com_offset),
                            inertia_about_com: Some(l.inertia_about_com),
                        })
                        .collect(),
                })
                .collect(),
            joint_stiffness: model.joint_stiffness.clone(),
            joint_damping: model.joint_damping.clone(),
            couplings: model
                .couplings
                .iter()
                .map(|c| {
                    let (coordinates, segments) = match c.pair {
                        CoupledPair::Coordinates(i, j) => (Some([i, j]), None),
                        CoupledPair::Segments(a, b) => (None, Some([[a.chain, a.link], [b.chain, b.link]])),
                    };
                    CouplingConfig {
                        family: c.family,
                        k: c.k,
                        coordinates,
                        segments,
                        quadrature_points: Some(c.quadrature_points),
                    }
                })
                .collect(),
            actuated: model.actuated.clone(),
            gravity: [model.gravity.x, model.gravity.y],
        }
    }

    fn check(&self, p: &FieldPath) -> Check {
        let chains = p.key("chains");
        require(!self.chains.is_empty(), chains.clone(), || "at least one chain is required".into())?;
        for (c, chain) in self.chains.iter().enumerate() {
            let cp = chains.index(c);
            finite_all(&chain.base, &cp.key("base"))?;
            require(!chain.links.is_empty(), cp.key("links"), || "chain has no links".into())?;
            for (l, link) in chain.links.iter().enumerate() {
                let lp = cp.key("links").index(l);
                require(link.length > 0.0 && link.length.is_finite(), lp.key("length"), || {
                    format!("length must be > 0, got {}", link.length)
                })?;
                require(link.mass > 0.0 && link.mass.is_finite(), lp.key("mass"), || {
                    format!("mass must be > 0, got {}", link.mass)
                })?;
                if let Some(o) = link.com_offset {
                    require((0.0..=link.length).contains(&o), lp.key("com_offset"), || {
                        format!("com_offset must lie in [0, length], got {o}")
                    })?;
                }
                if let Some(i) = link.inertia_about_com {
                    require(i >= 0.0 && i.is_finite(), lp.key("inertia_about_com"), || {
                        format!("inertia_about_com must be >= 0, got {i}")
                    })?;
                }
            }
        }
        let n = self.dof();
        for (name, v) in [("joint_stiffness", &self.joint_stiffness), ("joint_damping", &self.joint_damping)] {
            require(v.len() == n, p.key(name), || format!("{name} must have {n} entries, got {}", v.len()))?;
            for (i, x) in v.iter().enumerate() {
                require(*x >= 0.0 && x.is_finite(), p.key(name).index(i), || format!("{name} must be >= 0, got {x}"))?;
            }
        }
        let act = p.key("actuated");
        require(!self.actuated.is_empty() && self.actuated.len() <= n, act.clone(), || {
            format!("actuated must list 1..={n} coordinates")
        })?;
        let mut seen = vec![false; n];
        for (k, &i) in self.actuated.iter().enumerate() {
            require(i < n && !seen[i], act.index(k), || format!("actuated index {i} is out of range or repeated"))?;
            seen[i] = true;
        }
        for (k, c) in self.couplings.iter().enumerate() {
            let cp = p.key("couplings").index(k);
            require(c.k >= 0.0 && c.k.is_finite(), cp.key("k"), || format!("k must be >= 0, got {}", c.k))?;
            require(c.coordinates.is_some() != c.segments.is_some(), cp.clone(), || {
                "give exactly one of `coordinates` and `segments`".into()
            })?;
            if let Some(q) = c.quadrature_points {
                require(q >= 1, cp.key("quadrature_points"), || "quadrature_points must be >= 1".into())?;
            }
        }
        finite_all(&self.gravity, &p.key("gravity"))?;
        let model = self.build_unchecked();
        for (k, c) in model.couplings.iter().enumerate() {
            c.validate(&model).map_err(|e| issue(p.key("couplings").index(k), e.to_string()))?;
        }
        model.validate().map_err(|e| issue(p.clone(), e.to_string()))
    }

    fn build_unchecked(&self) -> RobotModel {
        let chains = self
            .chains
            .iter()
            .map(|c| {
                Chain::new(
                    c.base,
                    c.links
                        .iter()
                        .map(|l| {
                            let rod = LinkGeometry::uniform_rod(l.length, l.mass);
                            LinkGeometry {
                                com_offset: l.com_offset.unwrap_or(rod.com_offset),
                                inertia_about_com: l.inertia_about_com.unwrap_or(rod.inertia_about_com),
                                ..rod
                            }
                        })
                        .collect(),
                )
            })
            .collect();
        let mut model = RobotModel::new(chains)
            .with_stiffness(self.joint_stiffness.clone())
            .with_damping(self.joint_damping.clone())
            .with_actuated(self.actuated.clone())
            .with_gravity(self.gravity);
        for c in &self.couplings {
            let mut spec = match (c.coordinates, c.segments) {
                (Some([i, j]), _) => CouplingSpec::coordinates(c.family, c.k, i, j),
                (None, Some([a, b])) => {
                    CouplingSpec::segments(c.family, c.k, SegmentRef::new(a[0], a[1]), SegmentRef::new(b[0], b[1]))
                }
                (None, None) => continue,
            };
            if let Some(qp) = c.quadrature_points {
                spec.quadrature_points = qp;
            }
            model = model.with_coupling(spec);
        }
        model
    }

    /// Validated robot model.
    pub fn build(&self) -> Result<RobotModel> {
        self.check(&FieldPath::root().key("robot")).map_err(|i| to_error(i, None))?;
        Ok(self.build_unchecked())
    }
}

fn to_error(issue: Issue, text: Option<&str>) -> Error {
    Error::Config {
        field: issue.path.to_string(),
        line: text.and_then(|t| line_of(t, &issue.path)),
        message: issue.message,
    }
}

/// Built controller of a scenario.
#[derive(Debug, Clone)]
pub enum BuiltController {
    Regulator {
        config: RegulatorConfig,
        reference: Option<Sinusoid>,
        gamma_1: Option<f64>,
    },
    ForcePid(ForcePidConfig),
    /// Actuated coordinates clamped, no torque.
    Clamped,
}

impl RegulatorSection {
    fn build(&self, model: &RobotModel, p: &FieldPath) -> std::result::Result<RegulatorConfig, Issue> {
        let m = model.n_actuated();
        let k_p = self.k_p.to_matrix(m).map_err(|e| issue(p.key("k_p"), e))?;
        let k_d = self.k_d.to_matrix(m).map_err(|e| issue(p.key("k_d"), e))?;
        require(self.q_bar_a.len() == m, p.key("q_bar_a"), || {
            format!("q_bar_a must have {m} entries, got {}", self.q_bar_a.len())
        })?;
        finite_all(&self.q_bar_a, &p.key("q_bar_a"))?;
        if let Some(r) = &self.reference {
            let rp = p.key("reference");
            require(r.amplitude.len() == m, rp.key("amplitude"), || format!("amplitude must have {m} entries"))?;
            finite_all(&r.amplitude, &rp.key("amplitude"))?;
            require(r.frequency >= 0.0 && r.frequency.is_finite(), rp.key("frequency"), || {
                "frequency must be >= 0".into()
            })?;
            require(self.gamma_1.is_none(), p.key("gamma_1"), || {
                "gamma_1 applies to a fixed reference only".into()
            })?;
        }
        if let Some(g) = self.gamma_1 {
            require(g > 0.0 && g.is_finite(), p.key("gamma_1"), || format!("gamma_1 must be > 0, got {g}"))?;
        }
        let cfg = RegulatorConfig::new(model, k_p, k_d, self.compensation, DVector::from_column_slice(&self.q_bar_a))
            .map_err(|e| {
                let field = match e.to_string() {
                    s if s.contains("K_P") => "k_p",
                    s if s.contains("K_D") => "k_d",
                    _ => "q_bar_a",
                };
                issue(p.key(field), e.to_string())
            })?;
        Ok(cfg)
    }
}

impl ForcePidSection {
    fn build(&self, model: &RobotModel, p: &FieldPath) -> std::result::Result<ForcePidConfig, Issue> {
        for (name, g) in [("k_p", self.k_p), ("k_i", self.k_i), ("k_d", self.k_d)] {
            require(g >= 0.0 && g.is_finite(), p.key(name), || format!("{name} must be >= 0, got {g}"))?;
        }
        require(self.integral_clamp > 0.0, p.key("integral_clamp"), || {
            format!("integral_clamp must be > 0, got {}", self.integral_clamp)
        })?;
        require(self.f_d.is_finite(), p.key("f_d"), || "f_d must be finite".into())?;
        let q_bar = force_setpoint(model, self.passive_setpoint, self.f_d).map_err(|e| issue(p.clone(), e.to_string()))?;
        let cfg = ForcePidConfig {
            k_p: self.k_p,
            k_i: self.k_i,
            k_d: self.k_d,
            f_d: self.f_d,
            integral_clamp: self.integral_clamp,
            q_bar: q_bar.as_slice().to_vec(),
            gravity_compensation: self.gravity_compensation,
        };
        cfg.validate(model).map_err(|e| issue(p.clone(), e.to_string()))?;
        Ok(cfg)
    }
}

/// Everything a run needs, derived from a validated config.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub model: RobotModel,
    pub controller: BuiltController,
    pub initial: State,
    pub wall: Option<Wall>,
    pub n_steps: usize,
}

impl ScenarioConfig {
    /// Number of integration steps, `duration / dt` rounded.
    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    fn check(&self) -> std::result::Result<BuiltScenario, Issue> {
        let root = FieldPath::root();
        require(self.duration > 0.0 && self.duration.is_finite(), root.key("duration"), || {
            format!("duration must be > 0, got {}", self.duration)
        })?;
        require(self.dt > 0.0 && self.dt.is_finite(), root.key("dt"), || format!("dt must be > 0, got {}", self.dt))?;
        require(self.dt <= self.duration, root.key("dt"), || "dt must not exceed duration".into())?;
        require(self.log_every >= 1, root.key("log_every"), || "log_every must be >= 1".into())?;
        self.robot.check(&root.key("robot"))?;
        let model = self.robot.build_unchecked();
        let n = model.dof();

        let cp = root.key("controller");
        let controller = match (self.kind, &self.controller) {
            (ScenarioKind::ZeroDynamics, _) => BuiltController::Clamped,
            (ScenarioKind::Identify, _) => BuiltController::Clamped,
            (ScenarioKind::ForceControl, Some(ControllerConfig::ForcePid(f))) => {
                BuiltController::ForcePid(f.build(&model, &cp)?)
            }
            (ScenarioKind::ForceControl, _) => return Err(issue(cp, "force_control needs a `force_pid` controller")),
            (_, Some(ControllerConfig::Regulator(r))) => BuiltController::Regulator {
                config: r.build(&model, &cp)?,
                reference: r.reference.clone(),
                gamma_1: r.gamma_1,
            },
            (kind, _) => return Err(issue(cp, format!("{kind:?} scenarios need a `regulator` controller"))),
        };

        let ip = root.key("initial_state");
        let initial = match &self.initial_state {
            Some(s) => {
                require(s.q.len() == n, ip.key("q"), || format!("q must have {n} entries, got {}", s.q.len()))?;
                finite_all(&s.q, &ip.key("q"))?;
                let q_dot = s.q_dot.clone().unwrap_or_else(|| vec![0.0; n]);
                require(q_dot.len() == n, ip.key("q_dot"), || format!("q_dot must have {n} entries, got {}", q_dot.len()))?;
                finite_all(&q_dot, &ip.key("q_dot"))?;
                State::new(DVector::from_vec(s.q.clone()), DVector::from_vec(q_dot))
            }
            None => match (&controller, self.kind) {
                (BuiltController::Regulator { config, .. }, ScenarioKind::Disturb) => State::at_rest(config.q_bar(&model)),
                _ => State::at_rest(DVector::zeros(n)),
            },
        };

        for (k, d) in self.disturbances.iter().enumerate() {
            let dp = root.key("disturbances").index(k);
            require(d.coordinate < n, dp.key("coordinate"), || format!("coordinate must be < {n}"))?;
            require(d.start >= 0.0 && d.start.is_finite(), dp.key("start"), || "start must be >= 0".into())?;
            require(d.duration >= 0.0, dp.key("duration"), || "duration must be >= 0".into())?;
            require(d.amplitude.is_finite(), dp.key("amplitude"), || "amplitude must be finite".into())?;
        }

        let wall = match &self.contact {
            Some(c) => {
                let wp = root.key("contact");
                require(c.normal[0].hypot(c.normal[1]) > 0.0, wp.key("normal"), || "normal must be non-zero".into())?;
                finite_all(&c.point, &wp.key("point"))?;
                require(c.stiffness >= 0.0, wp.key("stiffness"), || "stiffness must be >= 0".into())?;
                require(c.damping >= 0.0, wp.key("damping"), || "damping must be >= 0".into())?;
                let w = c.wall();
                w.validate(&model).map_err(|e| issue(wp.key("link"), e.to_string()))?;
                Some(w)
            }
            None => None,
        };

        match self.kind {
            ScenarioKind::Identify => {
                let p = root.key("identification");
                let Some(id) = &self.identification else {
                    return Err(issue(p, "identify scenarios need an `identification` section"));
                };
                require(!model.couplings.is_empty(), root.key("robot").key("couplings"), || {
                    "identification needs at least one coupling".into()
                })?;
                require(id.k_true.is_finite(), p.key("k_true"), || "k_true must be finite".into())?;
                require(id.span > 0.0 && id.span <= PI, p.key("span"), || format!("span must lie in (0, pi], got {}", id.span))?;
                let (Noise::Absolute(s) | Noise::RangeFraction(s)) = id.noise;
                require(s >= 0.0 && s.is_finite(), p.key("noise"), || format!("noise level must be >= 0, got {s}"))?;
            }
            ScenarioKind::Certify => {
                let p = root.key("certification");
                if let Some(c) = &self.certification {
                    require(c.grid_level <= 8, p.key("grid_level"), || "grid_level must be <= 8".into())?;
                    if let Some(r) = &c.region {
                        r.validate().map_err(|e| issue(p.key("region"), e.to_string()))?;
                        require(r.dim() == n, p.key("region"), || format!("region must have dimension {n}"))?;
                    }
                }
                model.require_damping().map_err(|e| issue(root.key("robot").key("joint_damping"), e.to_string()))?;
            }
            _ => {}
        }

        Ok(BuiltScenario {
            model,
            controller,
            initial,
            wall,
            n_steps: self.n_steps(),
        })
    }

    /// Checks every invariant and derives the runnable pieces.
    pub fn build(&self) -> Result<BuiltScenario> {
        self.check().map_err(|i| to_error(i, None))
    }

    /// [`Self::build`] with error lines resolved against the source text.
    pub fn build_with_source(&self, text: &str) -> Result<BuiltScenario> {
        self.check().map_err(|i| to_error(i, Some(text)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn certification_region(&self, n: usize) -> Region {
        self.certification
            .as_ref()
            .and_then(|c| c.region.clone())
            .unwrap_or_else(|| Region::cube(n, -PI, PI).expect("valid cube"))
    }

    pub fn grid_level(&self) -> u32 {
        self.certification.as_ref().map_or(default_grid_level(), |c| c.grid_level)
    }
}

/// Parses and fully validates a config from JSON text.
pub fn parse_config_str(text: &str) -> Result<ScenarioConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        Error::Config {
            field: if field == "." { "<root>".into() } else { field },
            line: Some(inner.line()),
            message: inner.to_string(),
        }
    })?;
    cfg.build_with_source(text)?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}
