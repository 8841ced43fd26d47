//! Truth trajectories, synthetic PMU measurements and the dataset CSV.
//!
//! The network fault is emulated as a disturbance of the terminal phasor
//! (piecewise hold/step/ramp segments on `Ut` and `φ`); the machine is
//! integrated with mechanical torque and field EMF held at their
//! equilibrium values.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cubature::{FilterBelief, Frame};
use crate::error::{Error, Result};
use crate::machine::{
    electrical_power, solve_equilibrium, transition, ExogenousInput, GeneratorState, MachineParams,
    MeasurementVector, OperatingPoint, DEFAULT_STEP,
};
use crate::noise::{corrupt_series, BadDataSchedule, Channel, NoiseProfile, NoiseStream, PRNG_ALGORITHM};
use crate::numerics::SymMatrix;

pub const CSV_HEADER: [&str; 14] = [
    "t", "delta_true", "omega_true", "edp_true", "eqp_true", "Tm", "Ef", "Ut_true", "phi_true", "Ut_meas",
    "phi_meas", "delta_z", "omega_z", "Pe_z",
];

const PROVENANCE_TAG: &str = "# provenance ";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Operating-point value.
    Hold,
    Step { value: f64 },
    Ramp { from: f64, to: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub shape: Shape,
}

/// Terminal-phasor disturbance; an empty list holds the operating-point value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    #[serde(default)]
    pub u_t: Vec<Segment>,
    #[serde(default)]
    pub phi: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BadDataPlan {
    #[serde(default)]
    pub delta: BadDataSchedule,
    #[serde(default)]
    pub omega: BadDataSchedule,
}

/// Initial filter belief relative to the true starting state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterInit {
    pub p0_diag: [f64; 4],
    #[serde(default)]
    pub offset: [f64; 4],
}

impl Default for FilterInit {
    fn default() -> Self {
        FilterInit { p0_diag: [1e-4, 1e-6, 1e-4, 1e-4], offset: [0.0; 4] }
    }
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub params_ref: String,
    pub noise_profile_ref: String,
    pub duration: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    pub operating_point: OperatingPoint,
    #[serde(default)]
    pub disturbance: Disturbance,
    #[serde(default)]
    pub bad_data: BadDataPlan,
    #[serde(default)]
    pub filter_init: FilterInit,
}

fn validate_segments(segs: &[Segment], duration: f64, what: &str) -> Result<()> {
    if segs.is_empty() {
        return Ok(());
    }
    let tol = 1e-9;
    if segs[0].start.abs() > tol {
        return Err(Error::Config(format!("{what} segments must start at 0")));
    }
    for w in segs.windows(2) {
        if (w[1].start - w[0].end).abs() > tol {
            return Err(Error::Config(format!("{what} segments must be contiguous and non-overlapping")));
        }
    }
    for s in segs {
        if !(s.end > s.start) {
            return Err(Error::Config(format!("{what} segment [{}, {}] is empty", s.start, s.end)));
        }
    }
    if segs.last().unwrap().end + tol < duration {
        return Err(Error::Config(format!("{what} segments must cover the whole duration")));
    }
    Ok(())
}

fn segment_value(segs: &[Segment], nominal: f64, k: usize, step: f64) -> f64 {
    let idx = |t: f64| (t / step).round() as usize;
    for (i, s) in segs.iter().enumerate() {
        let (a, b) = (idx(s.start), idx(s.end));
        if (a..b).contains(&k) || (i == segs.len() - 1 && k >= a) {
            return match s.shape {
                Shape::Hold => nominal,
                Shape::Step { value } => value,
                Shape::Ramp { from, to } => {
                    let frac = if b > a { (k - a) as f64 / (b - a) as f64 } else { 0.0 };
                    from + (to - from) * frac.min(1.0)
                }
            };
        }
    }
    nominal
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.step > 0.0) {
            return Err(Error::Config("duration and step must be positive".into()));
        }
        validate_segments(&self.disturbance.u_t, self.duration, "u_t")?;
        validate_segments(&self.disturbance.phi, self.duration, "phi")?;
        self.bad_data.delta.validate()?;
        self.bad_data.omega.validate()?;
        if self.filter_init.p0_diag.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("filter_init.p0_diag entries must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn sample_count(&self) -> usize {
        (self.duration / self.step).round() as usize + 1
    }

    /// Terminal phasor `(Ut, φ)` at sample `k`.
    pub fn terminal_at(&self, k: usize) -> (f64, f64) {
        let op = &self.operating_point;
        (
            segment_value(&self.disturbance.u_t, op.u_t, k, self.step),
            segment_value(&self.disturbance.phi, op.phi, k, self.step),
        )
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario: Scenario,
    pub params: MachineParams,
    #[serde(default)]
    pub profile: Option<NoiseProfile>,
    pub prng: String,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub step: f64,
    pub times: Vec<f64>,
    pub truth: Vec<GeneratorState>,
    /// True exogenous inputs.
    pub inputs: Vec<ExogenousInput>,
    /// Inputs as seen by the filter (measured `Ut`, `φ`); empty until synthesized.
    pub measured_inputs: Vec<ExogenousInput>,
    /// Empty until synthesized.
    pub measurements: Vec<MeasurementVector>,
    pub meta: Option<Provenance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn has_measurements(&self) -> bool {
        !self.measurements.is_empty()
    }

    /// Filter frames built from the measured inputs and measurements.
    pub fn frames(&self) -> Result<Vec<Frame<ExogenousInput>>> {
        if !self.has_measurements() {
            return Err(Error::Config("dataset has no measurements".into()));
        }
        Ok(self
            .measured_inputs
            .iter()
            .zip(&self.measurements)
            .map(|(u, z)| Frame { input: *u, measurement: z.to_vector() })
            .collect())
    }

    /// Initial filter belief: true first state plus the configured offset.
    pub fn initial_belief(&self, init: &FilterInit) -> FilterBelief {
        let x0 = self.truth[0].to_array();
        let mean: Vec<f64> = x0.iter().zip(&init.offset).map(|(a, b)| a + b).collect();
        FilterBelief::new(DVector::from_vec(mean), SymMatrix::from_diagonal(&init.p0_diag))
    }

    pub fn series(&self, f: impl Fn(&GeneratorState) -> f64) -> Vec<f64> {
        self.truth.iter().map(f).collect()
    }
}

/// Integrates the machine from equilibrium through the scenario's disturbance.
pub fn generate_truth(sc: &Scenario, params: &MachineParams) -> Result<Dataset> {
    sc.validate()?;
    let eq = solve_equilibrium(&sc.operating_point, params)?;
    let n = sc.sample_count();
    let mut times = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n);
    let mut x = eq.state;
    for k in 0..n {
        let (u_t, phi) = sc.terminal_at(k);
        let u = eq.input(u_t, phi);
        if k > 0 {
            x = transition(&x, &inputs[k - 1], params, sc.step)?;
        }
        times.push(k as f64 * sc.step);
        truth.push(x);
        inputs.push(u);
    }
    Ok(Dataset {
        step: sc.step,
        times,
        truth,
        inputs,
        measured_inputs: Vec::new(),
        measurements: Vec::new(),
        meta: Some(Provenance {
            scenario: sc.clone(),
            params: *params,
            profile: None,
            prng: PRNG_ALGORITHM.to_string(),
            generator: concat!("rckf-core ", env!("CARGO_PKG_VERSION")).to_string(),
        }),
    })
}

fn merged(a: &BadDataSchedule, b: &BadDataSchedule) -> BadDataSchedule {
    BadDataSchedule { events: a.events.iter().chain(&b.events).copied().collect() }
}

/// Fills in noisy measurements.
///
/// δᶻ and ωᶻ are truth plus family noise plus bad data; `Ut` and `φ` get
/// PMU noise (`Ut` relative to its true value); Pe is then computed from the
/// true rotor quantities and the noisy terminal phasor.
pub fn synthesize_measurements(ds: &Dataset, profile: &NoiseProfile) -> Result<Dataset> {
    profile.validate()?;
    let meta = ds.meta.as_ref().ok_or_else(|| Error::Config("dataset lacks provenance".into()))?;
    let params = meta.params;
    let plan = &meta.scenario.bad_data;
    let n = ds.len();

    let delta_true = ds.series(|x| x.delta);
    let omega_true = ds.series(|x| x.omega);
    let phi_true: Vec<f64> = ds.inputs.iter().map(|u| u.phi).collect();

    let run = |ch: Channel, clean: &[f64], extra: &BadDataSchedule| {
        let c = profile.channel(ch);
        let mut stream: NoiseStream = profile.stream(ch);
        corrupt_series(clean, ds.step, &c.noise, &merged(&c.bad_data, extra), &mut stream)
    };
    let none = BadDataSchedule::default();
    let delta_z = run(Channel::Delta, &delta_true, &plan.delta)?;
    let omega_z = run(Channel::Omega, &omega_true, &plan.omega)?;
    let ut_rel = run(Channel::Ut, &vec![0.0; n], &none)?;
    let phi_meas = run(Channel::Phi, &phi_true, &none)?;

    let mut out = ds.clone();
    out.measured_inputs = ds
        .inputs
        .iter()
        .enumerate()
        .map(|(k, u)| ExogenousInput { u_t: u.u_t * (1.0 + ut_rel[k]), phi: phi_meas[k], ..*u })
        .collect();
    out.measurements = (0..n)
        .map(|k| MeasurementVector {
            delta_z: delta_z[k],
            omega_z: omega_z[k],
            p_e_z: electrical_power(&ds.truth[k], &out.measured_inputs[k], &params),
        })
        .collect();
    if let Some(m) = out.meta.as_mut() {
        m.profile = Some(profile.clone());
    }
    Ok(out)
}

fn fmt_num(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

/// Renders the dataset CSV (17 significant digits, bit-exact on reload).
pub fn dataset_to_csv(ds: &Dataset) -> Result<String> {
    if !ds.has_measurements() {
        return Err(Error::Config("cannot write a dataset without measurements".into()));
    }
    let mut out = String::new();
    if let Some(meta) = &ds.meta {
        out.push_str(PROVENANCE_TAG);
        out.push_str(&serde_json::to_string(meta)?);
        out.push('\n');
    }
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    for k in 0..ds.len() {
        let x = &ds.truth[k];
        let u = &ds.inputs[k];
        let um = &ds.measured_inputs[k];
        let z = &ds.measurements[k];
        let row = [
            ds.times[k], x.delta, x.omega, x.e_dp, x.e_qp, u.t_m, u.e_f, u.u_t, u.phi, um.u_t, um.phi, z.delta_z,
            z.omega_z, z.p_e_z,
        ];
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            fmt_num(&mut out, *v);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = dataset_to_csv(ds)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

/// Parses the dataset CSV. Leading `#` lines are comments; a provenance
/// comment is decoded when present.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut meta = None;
    let mut lines = text.lines().enumerate().peekable();
    while let Some((_, line)) = lines.peek() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(json) = line.strip_prefix(PROVENANCE_TAG) {
                meta = Some(serde_json::from_str::<Provenance>(json)?);
            } else {
                let _ = rest;
            }
            lines.next();
        } else {
            break;
        }
    }
    let (_, header) = lines.next().ok_or_else(|| Error::Schema(CSV_HEADER[0].to_string()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let mut index = [0usize; 14];
    for (slot, name) in index.iter_mut().zip(CSV_HEADER) {
        *slot = cols.iter().position(|c| *c == name).ok_or_else(|| Error::Schema(name.to_string()))?;
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: lineno + 1,
                column: fields.len().min(cols.len()) + 1,
                message: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let mut row = Vec::with_capacity(14);
        for &c in &index {
            let v: f64 = fields[c].trim().parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                column: c + 1,
                message: format!("`{}` is not a number", fields[c]),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 2, column: 1, message: "no data rows".into() });
    }

    let step = match (&meta, rows.len()) {
        (Some(Provenance { scenario, .. }), _) => scenario.step,
        (None, n) if n > 1 => rows[1][0] - rows[0][0],
        _ => DEFAULT_STEP,
    };
    let mut ds = Dataset {
        step,
        times: Vec::with_capacity(rows.len()),
        truth: Vec::with_capacity(rows.len()),
        inputs: Vec::with_capacity(rows.len()),
        measured_inputs: Vec::with_capacity(rows.len()),
        measurements: Vec::with_capacity(rows.len()),
        meta,
    };
    for r in rows {
        ds.times.push(r[0]);
        ds.truth.push(GeneratorState { delta: r[1], omega: r[2], e_dp: r[3], e_qp: r[4] });
        ds.inputs.push(ExogenousInput { t_m: r[5], e_f: r[6], u_t: r[7], phi: r[8] });
        ds.measured_inputs.push(ExogenousInput { t_m: r[5], e_f: r[6], u_t: r[9], phi: r[10] });
        ds.measurements.push(MeasurementVector { delta_z: r[11], omega_z: r[12], p_e_z: r[13] });
    }
    Ok(ds)
}
