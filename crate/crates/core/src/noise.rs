//! Seeded measurement-noise generation and bad-data injection.
//!
//! Every channel draws from its own ChaCha20 stream (RFC 7539 constants),
//! keyed by the profile's master seed with the channel index as the stream
//! id. Channels therefore never share randomness and can be generated in
//! any order.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the generator behind [`NoiseStream`], recorded in dataset provenance.
pub const PRNG_ALGORITHM: &str = "ChaCha20 (rand_chacha), stream id = channel index";

/// A seekable, independently keyed random stream.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha20Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseStream { rng }
    }

    /// Uniform on the open interval (0, 1), 53-bit resolution.
    pub fn open01(&mut self) -> f64 {
        let bits = self.rng.random::<u64>() >> 11;
        (bits as f64 + 0.5) / (1u64 << 53) as f64
    }

    /// Uniform on the open interval (−1, 1).
    pub fn open_pm1(&mut self) -> f64 {
        2.0 * self.open01() - 1.0
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

pub fn gaussian_sample(loc: f64, scale: f64, stream: &mut NoiseStream) -> f64 {
    loc + scale * stream.standard_normal()
}

/// `m − s·sgn(U)·ln(1 − |U|)` for `U ∈ (−1, 1)`.
pub fn laplace_transform(m: f64, s: f64, u: f64) -> f64 {
    m - s * u.signum() * (1.0 - u.abs()).ln()
}

pub fn laplace_sample(m: f64, s: f64, stream: &mut NoiseStream) -> f64 {
    let u = stream.open_pm1();
    if u == 0.0 {
        return m;
    }
    laplace_transform(m, s, u)
}

/// `a + b·tan(π(U₂ − 0.5))` for `U₂ ∈ (0, 1)`.
pub fn cauchy_transform(a: f64, b: f64, u2: f64) -> f64 {
    a + b * (std::f64::consts::PI * (u2 - 0.5)).tan()
}

pub fn cauchy_sample(a: f64, b: f64, stream: &mut NoiseStream) -> f64 {
    cauchy_transform(a, b, stream.open01())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    GaussianBiased,
    Laplace,
    Cauchy,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 4] =
        [NoiseFamily::Gaussian, NoiseFamily::GaussianBiased, NoiseFamily::Laplace, NoiseFamily::Cauchy];

    pub fn name(&self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::GaussianBiased => "gaussian_biased",
            NoiseFamily::Laplace => "laplace",
            NoiseFamily::Cauchy => "cauchy",
        }
    }
}

/// Units in which a [`NoiseSpec`] is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Deg,
    Rad,
    /// Percent of 1 pu (or of the channel value for relative channels).
    Percent,
    Pu,
}

impl Units {
    /// Factor converting one unit into the channel's internal unit (rad or pu).
    pub fn to_internal(&self) -> f64 {
        match self {
            Units::Deg => std::f64::consts::PI / 180.0,
            Units::Rad | Units::Pu => 1.0,
            Units::Percent => 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    /// μ, m or a depending on the family.
    pub loc: f64,
    /// σ, s or b depending on the family. Zero gives a noiseless channel.
    pub scale: f64,
    pub units: Units,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite() && self.loc.is_finite()) {
            return Err(Error::InvalidParameter(format!("bad noise spec {self:?}")));
        }
        Ok(())
    }

    /// One draw in the spec's own units.
    pub fn sample(&self, stream: &mut NoiseStream) -> f64 {
        match self.family {
            NoiseFamily::Gaussian | NoiseFamily::GaussianBiased => gaussian_sample(self.loc, self.scale, stream),
            NoiseFamily::Laplace => laplace_sample(self.loc, self.scale, stream),
            NoiseFamily::Cauchy => cauchy_sample(self.loc, self.scale, stream),
        }
    }

    /// One draw converted to internal units.
    pub fn sample_internal(&self, stream: &mut NoiseStream) -> f64 {
        self.sample(stream) * self.units.to_internal()
    }

    /// Nominal dispersion in internal units; bad-data magnitudes are multiples of it.
    pub fn nominal_sigma(&self) -> f64 {
        self.scale * self.units.to_internal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BadDataMode {
    /// Deviation added on top of the noisy sample.
    #[default]
    Add,
    /// Sample replaced by truth plus the deviation.
    Replace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BadDataEvent {
    pub start_time: f64,
    pub count: usize,
    /// Multiple of the channel's nominal dispersion.
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    #[serde(default)]
    pub mode: BadDataMode,
}

pub const DEFAULT_BAD_DATA_MAGNITUDE: f64 = 20.0;

fn default_magnitude() -> f64 {
    DEFAULT_BAD_DATA_MAGNITUDE
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BadDataSchedule {
    pub events: Vec<BadDataEvent>,
}

impl BadDataSchedule {
    pub fn validate(&self) -> Result<()> {
        for e in &self.events {
            if !(e.start_time >= 0.0) || e.count == 0 || !e.magnitude.is_finite() {
                return Err(Error::InvalidParameter(format!("bad-data event {e:?}")));
            }
        }
        Ok(())
    }

    /// Sample indices touched by the schedule on a grid of `len` samples at `step`.
    pub fn indices(&self, len: usize, step: f64) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for e in &self.events {
            let start = (e.start_time / step).round() as usize;
            if start >= len {
                return Err(Error::ScheduleOutOfRange { start_time: e.start_time, len, step });
            }
            out.extend(start..(start + e.count).min(len));
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

/// Adds family noise to every sample of `clean` and applies the bad-data schedule.
pub fn corrupt_series(
    clean: &[f64],
    step: f64,
    spec: &NoiseSpec,
    schedule: &BadDataSchedule,
    stream: &mut NoiseStream,
) -> Result<Vec<f64>> {
    spec.validate()?;
    schedule.validate()?;
    let mut out: Vec<f64> = clean.iter().map(|x| x + spec.sample_internal(stream)).collect();
    let sigma = spec.nominal_sigma();
    for e in &schedule.events {
        let start = (e.start_time / step).round() as usize;
        if start >= clean.len() {
            return Err(Error::ScheduleOutOfRange { start_time: e.start_time, len: clean.len(), step });
        }
        for i in start..(start + e.count).min(clean.len()) {
            let dev = e.magnitude * sigma;
            out[i] = match e.mode {
                BadDataMode::Add => out[i] + dev,
                BadDataMode::Replace => clean[i] + dev,
            };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelNoise {
    pub noise: NoiseSpec,
    #[serde(default)]
    pub bad_data: BadDataSchedule,
}

impl ChannelNoise {
    pub fn clean(spec: NoiseSpec) -> Self {
        ChannelNoise { noise: spec, bad_data: BadDataSchedule::default() }
    }
}

/// Measurement channels, with the stream id each one draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Delta = 0,
    Omega = 1,
    Ut = 2,
    Phi = 3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseProfile {
    pub name: String,
    pub seed: u64,
    /// Rotor-angle channel.
    pub delta: ChannelNoise,
    /// Rotor-speed channel.
    pub omega: ChannelNoise,
    /// Terminal voltage magnitude; relative to the true magnitude.
    pub u_t: ChannelNoise,
    /// Terminal voltage phase.
    pub phi: ChannelNoise,
}

impl NoiseProfile {
    pub fn channel(&self, ch: Channel) -> &ChannelNoise {
        match ch {
            Channel::Delta => &self.delta,
            Channel::Omega => &self.omega,
            Channel::Ut => &self.u_t,
            Channel::Phi => &self.phi,
        }
    }

    pub fn channel_mut(&mut self, ch: Channel) -> &mut ChannelNoise {
        match ch {
            Channel::Delta => &mut self.delta,
            Channel::Omega => &mut self.omega,
            Channel::Ut => &mut self.u_t,
            Channel::Phi => &mut self.phi,
        }
    }

    pub fn stream(&self, ch: Channel) -> NoiseStream {
        NoiseStream::new(self.seed, ch as u64)
    }

    pub fn validate(&self) -> Result<()> {
        for ch in [Channel::Delta, Channel::Omega, Channel::Ut, Channel::Phi] {
            let c = self.channel(ch);
            c.noise.validate()?;
            c.bad_data.validate()?;
        }
        Ok(())
    }

    /// Standard profile for one noise family: δ in degrees (σ 2, bias 20
    /// for the biased families), ω in percent (σ 0.1, bias 1), and Gaussian
    /// PMU terminal errors of 0.1 % and 0.1°.
    pub fn family(family: NoiseFamily, seed: u64) -> Self {
        let (delta_loc, omega_loc) = match family {
            NoiseFamily::Gaussian => (0.0, 0.0),
            _ => (20.0, 1.0),
        };
        NoiseProfile {
            name: family.name().to_string(),
            seed,
            delta: ChannelNoise::clean(NoiseSpec { family, loc: delta_loc, scale: 2.0, units: Units::Deg }),
            omega: ChannelNoise::clean(NoiseSpec { family, loc: omega_loc, scale: 0.1, units: Units::Percent }),
            u_t: ChannelNoise::clean(NoiseSpec {
                family: NoiseFamily::Gaussian,
                loc: 0.0,
                scale: 0.1,
                units: Units::Percent,
            }),
            phi: ChannelNoise::clean(NoiseSpec {
                family: NoiseFamily::Gaussian,
                loc: 0.0,
                scale: 0.1,
                units: Units::Deg,
            }),
        }
    }

    /// All channels noiseless.
    pub fn noiseless(seed: u64) -> Self {
        let zero = |units| ChannelNoise::clean(NoiseSpec { family: NoiseFamily::Gaussian, loc: 0.0, scale: 0.0, units });
        NoiseProfile {
            name: "noiseless".into(),
            seed,
            delta: zero(Units::Deg),
            omega: zero(Units::Percent),
            u_t: zero(Units::Percent),
            phi: zero(Units::Deg),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: NoiseProfile = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
