//! Third-degree spherical-radial cubature Kalman filter.
//!
//! The filter is generic over a [`StateSpaceModel`]. The robust variant does
//! not fork the recursion: it substitutes a corrected measurement covariance
//! at the innovation-covariance step through [`update`]'s `r_override`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, spd_solve, symmetrize, SymMatrix};
use crate::robust::{self, HuberConfig};

/// Discrete-time model with additive process and measurement noise.
///
/// Implementations must be deterministic and reentrant.
pub trait StateSpaceModel {
    type Input;

    fn state_dim(&self) -> usize;
    fn measurement_dim(&self) -> usize;
    fn transition(&self, x: &DVector<f64>, u: &Self::Input) -> Result<DVector<f64>>;
    fn measure(&self, x: &DVector<f64>, u: &Self::Input) -> DVector<f64>;
    fn process_noise(&self, x: &DVector<f64>, u: &Self::Input) -> Result<SymMatrix>;
    fn measurement_noise(&self, x: &DVector<f64>, u: &Self::Input) -> SymMatrix;
}

/// Per-update record.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub predicted_measurement: DVector<f64>,
    pub innovation: DVector<f64>,
    /// Innovation covariance used for the gain.
    pub innovation_cov: SymMatrix,
    pub gain: DMatrix<f64>,
    /// Standardized residuals against the unmodified innovation covariance.
    pub standardized: DVector<f64>,
    /// Per-channel Huber weights; all 1.0 for the plain filter.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBelief {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
    pub step_index: usize,
    pub diagnostics: Option<Diagnostics>,
}

impl FilterBelief {
    pub fn new(mean: DVector<f64>, cov: SymMatrix) -> Self {
        FilterBelief { mean, cov, step_index: 0, diagnostics: None }
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// Unit cubature points `±√n·e_i` (positive half first) and their common weight `1/(2n)`.
pub fn cubature_points(n: usize) -> (Vec<DVector<f64>>, f64) {
    assert!(n >= 1, "cubature rule needs n >= 1");
    let r = (n as f64).sqrt();
    let mut pts = Vec::with_capacity(2 * n);
    for sign in [1.0, -1.0] {
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = sign * r;
            pts.push(e);
        }
    }
    (pts, 1.0 / (2 * n) as f64)
}

fn spread(mean: &DVector<f64>, cov: &SymMatrix) -> Result<Vec<DVector<f64>>> {
    let s = cholesky(cov)?;
    let (unit, _) = cubature_points(mean.len());
    Ok(unit.iter().map(|xi| &s * xi + mean).collect())
}

fn weighted_mean(points: &[DVector<f64>], w: f64) -> DVector<f64> {
    let mut acc = DVector::zeros(points[0].len());
    for p in points {
        acc += p;
    }
    acc * w
}

fn cross_moment(
    a: &[DVector<f64>],
    a_mean: &DVector<f64>,
    b: &[DVector<f64>],
    b_mean: &DVector<f64>,
    w: f64,
) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(a_mean.len(), b_mean.len());
    for (ai, bi) in a.iter().zip(b) {
        let da = ai - a_mean;
        let db = bi - b_mean;
        acc += &da * db.transpose();
    }
    acc * w
}

/// Time update: propagate the cubature points through the transition and
/// add the process noise evaluated at the prior mean.
pub fn predict<M: StateSpaceModel>(
    belief: &FilterBelief,
    u: &M::Input,
    model: &M,
) -> Result<FilterBelief> {
    let n = belief.mean.len();
    let points = spread(&belief.mean, &belief.cov)?;
    let w = 1.0 / (2 * n) as f64;
    let propagated = points
        .iter()
        .map(|x| model.transition(x, u))
        .collect::<Result<Vec<_>>>()?;
    let mean = weighted_mean(&propagated, w);
    let q = model.process_noise(&belief.mean, u)?;
    let cov = cross_moment(&propagated, &mean, &propagated, &mean, w) + q.as_matrix();
    Ok(FilterBelief {
        mean,
        cov: symmetrize(&cov),
        step_index: belief.step_index,
        diagnostics: None,
    })
}

/// Cubature moments of the predicted measurement, before measurement noise.
#[derive(Debug, Clone)]
pub struct InnovationMoments {
    pub z_hat: DVector<f64>,
    /// Spread of the measurement points (innovation covariance without R).
    pub pzz_spread: DMatrix<f64>,
    pub pxz: DMatrix<f64>,
}

pub fn innovation_moments<M: StateSpaceModel>(
    predicted: &FilterBelief,
    u: &M::Input,
    model: &M,
) -> Result<InnovationMoments> {
    let n = predicted.mean.len();
    let points = spread(&predicted.mean, &predicted.cov)?;
    let w = 1.0 / (2 * n) as f64;
    let zs: Vec<DVector<f64>> = points.iter().map(|x| model.measure(x, u)).collect();
    let z_hat = weighted_mean(&zs, w);
    let pzz_spread = cross_moment(&zs, &z_hat, &zs, &z_hat, w);
    let pxz = cross_moment(&points, &predicted.mean, &zs, &z_hat, w);
    Ok(InnovationMoments { z_hat, pzz_spread, pxz })
}

/// Innovation covariance `spread + R`, symmetrized.
pub fn innovation_cov(moments: &InnovationMoments, r: &SymMatrix) -> SymMatrix {
    symmetrize(&(&moments.pzz_spread + r.as_matrix()))
}

/// Finishes a measurement update given the moments and the measurement covariance to use.
pub(crate) fn correct(
    predicted: &FilterBelief,
    moments: InnovationMoments,
    z: &DVector<f64>,
    r: &SymMatrix,
    standardized: DVector<f64>,
    weights: Vec<f64>,
) -> Result<FilterBelief> {
    let pzz = innovation_cov(&moments, r);
    let gain = spd_solve(&pzz, &moments.pxz.transpose())?.transpose();
    let innovation = z - &moments.z_hat;
    let mean = &predicted.mean + &gain * &innovation;
    let cov = symmetrize(&(predicted.cov.as_matrix() - &gain * pzz.as_matrix() * gain.transpose()));
    Ok(FilterBelief {
        mean,
        cov,
        step_index: predicted.step_index,
        diagnostics: Some(Diagnostics {
            predicted_measurement: moments.z_hat,
            innovation,
            innovation_cov: pzz,
            gain,
            standardized,
            weights,
        }),
    })
}

/// Measurement update. `r_override` replaces the model's R at the
/// innovation-covariance step.
pub fn update<M: StateSpaceModel>(
    predicted: &FilterBelief,
    u: &M::Input,
    z: &DVector<f64>,
    model: &M,
    r_override: Option<&SymMatrix>,
) -> Result<FilterBelief> {
    let moments = innovation_moments(predicted, u, model)?;
    let r = match r_override {
        Some(r) => r.clone(),
        None => model.measurement_noise(&predicted.mean, u),
    };
    let pzz = innovation_cov(&moments, &r);
    let innovation = z - &moments.z_hat;
    let standardized = robust::standardized_residuals(&innovation, &pzz)
        .unwrap_or_else(|_| DVector::from_element(innovation.len(), f64::NAN));
    let m = innovation.len();
    correct(predicted, moments, z, &r, standardized, vec![1.0; m])
}

/// One filter frame: the exogenous input in force and the measurement at the frame time.
#[derive(Debug, Clone)]
pub struct Frame<I> {
    pub input: I,
    pub measurement: DVector<f64>,
}

/// Runs predict/update over `frames`.
///
/// The prediction into frame `k` uses the input of frame `k - 1` (held over
/// the step); the first frame predicts with its own input. With
/// `robustify = Some(cfg)` every update goes through [`robust::robust_update`].
pub fn run_filter<M: StateSpaceModel>(
    model: &M,
    initial: &FilterBelief,
    frames: &[Frame<M::Input>],
    robustify: Option<&HuberConfig>,
) -> Result<Vec<FilterBelief>> {
    run_filter_timed(model, initial, frames, robustify).map(|(out, _)| out)
}

/// [`run_filter`] that also returns the wall time spent in each predict +
/// update.
pub fn run_filter_timed<M: StateSpaceModel>(
    model: &M,
    initial: &FilterBelief,
    frames: &[Frame<M::Input>],
    robustify: Option<&HuberConfig>,
) -> Result<(Vec<FilterBelief>, Vec<Duration>)> {
    if frames.is_empty() {
        return Err(Error::LengthMismatch("run_filter needs at least one frame".into()));
    }
    let mut out = Vec::with_capacity(frames.len());
    let mut times = Vec::with_capacity(frames.len());
    let mut belief = initial.clone();
    for (k, frame) in frames.iter().enumerate() {
        let held = if k == 0 { &frame.input } else { &frames[k - 1].input };
        let start = Instant::now();
        let next = step(model, &belief, held, frame, robustify);
        times.push(start.elapsed());
        belief = next.map_err(|e| Error::Step { step: k, source: Box::new(e) })?;
        belief.step_index = k;
        out.push(belief.clone());
    }
    Ok((out, times))
}

/// Single predict + update.
pub fn step<M: StateSpaceModel>(
    model: &M,
    belief: &FilterBelief,
    held_input: &M::Input,
    frame: &Frame<M::Input>,
    robustify: Option<&HuberConfig>,
) -> Result<FilterBelief> {
    let predicted = predict(belief, held_input, model)?;
    match robustify {
        Some(cfg) => robust::robust_update(&predicted, &frame.input, &frame.measurement, model, cfg),
        None => update(&predicted, &frame.input, &frame.measurement, model, None),
    }
}
