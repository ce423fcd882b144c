//! Single-parameter least-squares identification of the coupling stiffness.
//!
//! Every coupling family is linear in `k`, so the torque on the observed
//! coordinate is `τ = k φ(q)` with `φ` the unit-stiffness coupling torque.
//! The fit is OLS through the origin, `k̂ = Σφτ / Σφ²`.

use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::coupling::{coupling_force, evaluate_coupling, CouplingFamily, CouplingSpec};
use crate::error::{invalid, Error, Result};
use crate::model::RobotModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdSample {
    pub q: Vec<f64>,
    pub tau_measured: f64,
    pub held_mask: Vec<bool>,
}

impl IdSample {
    pub fn validate(&self) -> Result<()> {
        if self.q.len() != self.held_mask.len() {
            return Err(invalid(format!(
                "sample has {} angles but {} held flags",
                self.q.len(),
                self.held_mask.len()
            )));
        }
        if !self.tau_measured.is_finite() {
            return Err(invalid("sample torque is not finite"));
        }
        for (i, &x) in self.q.iter().enumerate() {
            if !(x.is_finite() && x.abs() <= std::f64::consts::PI) {
                return Err(invalid(format!("sample angle q_{} = {x} is outside [-pi, pi]", i + 1)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: CouplingFamily,
    pub k_hat: f64,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    pub n_samples: usize,
}

impl FitResult {
    /// A negative stiffness is reported rather than rejected.
    pub fn is_negative(&self) -> bool {
        self.k_hat < 0.0
    }

    pub fn csv_header() -> &'static str {
        "family,k_hat,r_squared,n_samples"
    }

    pub fn csv_row(&self) -> String {
        format!("{},{:.17e},{:.17e},{}", self.family, self.k_hat, self.r_squared, self.n_samples)
    }
}

/// The coupling whose stiffness is identified: the model's first coupling.
fn identified_coupling(model: &RobotModel) -> Result<&CouplingSpec> {
    model
        .couplings
        .first()
        .ok_or_else(|| Error::InvalidModel("identification needs a model with at least one coupling".into()))
}

/// Coordinate whose torque is measured: the first member of the identified
/// coupling.
pub fn observed_coordinate(model: &RobotModel) -> Result<usize> {
    Ok(identified_coupling(model)?.coordinate_pair(model)?.0)
}

/// Unit-stiffness coupling torque `φ(q)` of `family` on the observed
/// coordinate, using the geometry of the model's first coupling.
pub fn regressor(family: CouplingFamily, model: &RobotModel, q: &DVector<f64>) -> Result<f64> {
    let spec = identified_coupling(model)?.with_family(family, 1.0);
    let obs = spec.coordinate_pair(model)?.0;
    Ok(coupling_force(&spec, model, q)?[obs])
}

/// OLS through the origin with mean-centred `R²`.
pub fn fit_stiffness(family: CouplingFamily, model: &RobotModel, dataset: &[IdSample]) -> Result<FitResult> {
    if dataset.len() < 2 {
        return Err(Error::DegenerateDataset(format!("need at least 2 samples, got {}", dataset.len())));
    }
    let mut phi = Vec::with_capacity(dataset.len());
    let mut tau = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.iter().enumerate() {
        s.validate().map_err(|e| Error::DegenerateDataset(format!("sample {i}: {e}")))?;
        let q = DVector::from_column_slice(&s.q);
        phi.push(regressor(family, model, &q)?);
        tau.push(s.tau_measured);
    }
    let spp: f64 = phi.iter().map(|p| p * p).sum();
    if !(spp > 0.0) {
        return Err(Error::DegenerateDataset(format!("regressor of `{family}` is zero on every sample")));
    }
    let spt: f64 = phi.iter().zip(&tau).map(|(p, t)| p * t).sum();
    let k_hat = spt / spp;
    let residuals: Vec<f64> = phi.iter().zip(&tau).map(|(p, t)| t - k_hat * p).collect();
    let mean = tau.iter().sum::<f64>() / tau.len() as f64;
    let ss_tot: f64 = tau.iter().map(|t| (t - mean).powi(2)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::DegenerateDataset("measured torques have zero variance".into()));
    }
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    Ok(FitResult {
        family,
        k_hat,
        r_squared: 1.0 - ss_res / ss_tot,
        residuals,
        n_samples: dataset.len(),
    })
}

/// Fits every family and sorts by decreasing `R²`.
pub fn rank_families(model: &RobotModel, dataset: &[IdSample]) -> Result<Vec<FitResult>> {
    let mut fits = CouplingFamily::ALL
        .iter()
        .map(|&f| fit_stiffness(f, model, dataset))
        .collect::<Result<Vec<_>>>()?;
    fits.sort_by(|a, b| b.r_squared.total_cmp(&a.r_squared));
    Ok(fits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Noise {
    /// Standard deviation in N·m.
    Absolute(f64),
    /// Standard deviation as a fraction of the noiseless torque range.
    RangeFraction(f64),
}

/// Measurement grid: the observed coordinate is set to each of
/// `observed_angles`; the partner coordinate is held at each of
/// `held_angles` and, if `include_free`, also released to its rest position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub observed_angles: Vec<f64>,
    pub held_angles: Vec<f64>,
    pub include_free: bool,
    pub noise: Noise,
}

impl Protocol {
    /// 9 observed angles × (9 held + 1 free) = 90 samples over ±`span`.
    pub fn grid90(span: f64, noise: Noise) -> Self {
        let pts: Vec<f64> = (0..9).map(|i| -span + 2.0 * span * i as f64 / 8.0).collect();
        Self {
            observed_angles: pts.clone(),
            held_angles: pts,
            include_free: true,
            noise,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.observed_angles.len() * (self.held_angles.len() + usize::from(self.include_free))
    }

    pub fn validate(&self) -> Result<()> {
        let sigma = match self.noise {
            Noise::Absolute(s) | Noise::RangeFraction(s) => s,
        };
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("noise level must be >= 0, got {sigma}")));
        }
        if self.n_samples() == 0 {
            return Err(invalid("protocol produces no samples"));
        }
        Ok(())
    }
}

/// Rest angle of the free partner `j` with the observed coordinate `i` held:
/// the coupling torque on `j` balances its own joint spring. The root lies
/// between the spring rest (0) and the coupling rest (`q_i`), so Newton steps
/// are kept inside that bracket and fall back to bisection.
fn free_partner_angle(spec: &CouplingSpec, model: &RobotModel, q: &DVector<f64>, i: usize, j: usize) -> Result<f64> {
    let k_d = model.joint_stiffness[j];
    let mut q = q.clone();
    let residual = |q: &DVector<f64>| -> Result<(f64, f64)> {
        let ev = evaluate_coupling(spec, model, q, true)?;
        Ok((ev.force[j] + k_d * q[j], ev.stiffness.expect("requested")[(j, j)] + k_d))
    };
    let (mut lo, mut hi) = (0.0f64.min(q[i]), 0.0f64.max(q[i]));
    q[j] = lo;
    let (r_lo, _) = residual(&q)?;
    let increasing = r_lo <= 0.0;
    q[j] = 0.5 * (lo + hi);
    let mut r = f64::INFINITY;
    for _ in 0..200 {
        let (res, slope) = residual(&q)?;
        r = res;
        if r.abs() < 1e-13 || hi - lo < 1e-15 {
            return Ok(q[j]);
        }
        if (r < 0.0) == increasing {
            lo = q[j];
        } else {
            hi = q[j];
        }
        let newton = q[j] - r / slope;
        q[j] = if slope.abs() > 1e-14 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::NoConvergence { iterations: 200, residual: r.abs() })
}

/// Synthetic dataset: torques `k_true φ(q)` on the observed coordinate plus
/// Gaussian noise drawn from a ChaCha8 stream seeded by `seed`.
pub fn generate_synthetic_dataset(
    model: &RobotModel,
    family: CouplingFamily,
    k_true: f64,
    protocol: &Protocol,
    seed: u64,
) -> Result<Vec<IdSample>> {
    protocol.validate()?;
    let spec = identified_coupling(model)?.with_family(family, k_true);
    let (i, j) = spec.coordinate_pair(model)?;
    let n = model.dof();
    let mut samples = Vec::with_capacity(protocol.n_samples());
    for &qi in &protocol.observed_angles {
        let mut q = DVector::zeros(n);
        q[i] = qi;
        let mut configs: Vec<(DVector<f64>, bool)> = protocol
            .held_angles
            .iter()
            .map(|&qj| {
                let mut c = q.clone();
                c[j] = qj;
                (c, true)
            })
            .collect();
        if protocol.include_free {
            let mut c = q.clone();
            c[j] = free_partner_angle(&spec, model, &q, i, j)?;
            configs.push((c, false));
        }
        for (c, held) in configs {
            let tau = coupling_force(&spec, model, &c)?[i];
            let mut mask = vec![false; n];
            mask[i] = true;
            mask[j] = held;
            samples.push(IdSample {
                q: c.as_slice().to_vec(),
                tau_measured: tau,
                held_mask: mask,
            });
        }
    }
    let sigma = match protocol.noise {
        Noise::Absolute(s) => s,
        Noise::RangeFraction(f) => {
            let (lo, hi) = samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.tau_measured), hi.max(s.tau_measured)));
            f * (hi - lo)
        }
    };
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
        for s in &mut samples {
            s.tau_measured += normal.sample(&mut rng);
        }
    }
    Ok(samples)
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes samples with header `q_1..q_n,tau,held_1..held_n`.
pub fn write_dataset(path: impl AsRef<Path>, samples: &[IdSample]) -> Result<()> {
    let path = path.as_ref();
    let n = samples.first().map_or(0, |s| s.q.len());
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = (1..=n).map(|i| format!("q_{i}")).collect();
    header.push("tau".into());
    header.extend((1..=n).map(|i| format!("held_{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for s in samples {
        let mut row: Vec<String> = s.q.iter().map(|x| format!("{x:.17e}")).collect();
        row.push(format!("{:.17e}", s.tau_measured));
        row.extend(s.held_mask.iter().map(|&h| u8::from(h).to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<IdSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = header.len();
    if cols < 3 || cols % 2 == 0 {
        return Err(Error::DegenerateDataset(format!(
            "{}: header must be q_1..q_n,tau,held_1..held_n, got {cols} columns",
            path.display()
        )));
    }
    let n = (cols - 1) / 2;
    let expected: Vec<String> = (1..=n)
        .map(|i| format!("q_{i}"))
        .chain(std::iter::once("tau".to_string()))
        .chain((1..=n).map(|i| format!("held_{i}")))
        .collect();
    if header.iter().zip(&expected).any(|(a, b)| a.trim() != b) {
        return Err(Error::DegenerateDataset(format!(
            "{}: header must be {}",
            path.display(),
            expected.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |col: usize, v: &str| {
            Error::DegenerateDataset(format!(
                "{}: row {} column {}: cannot parse `{v}`",
                path.display(),
                line + 2,
                col + 1
            ))
        };
        let mut q = Vec::with_capacity(n);
        for c in 0..n {
            q.push(f64::from_str(rec[c].trim()).map_err(|_| bad(c, &rec[c]))?);
        }
        let tau = f64::from_str(rec[n].trim()).map_err(|_| bad(n, &rec[n]))?;
        let mut held = Vec::with_capacity(n);
        for c in n + 1..cols {
            held.push(match rec[c].trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(bad(c, other)),
            });
        }
        let s = IdSample {
            q,
            tau_measured: tau,
            held_mask: held,
        };
        s.validate()
            .map_err(|e| Error::DegenerateDataset(format!("{}: row {}: {e}", path.display(), line + 2)))?;
        out.push(s);
    }
    Ok(out)
}
