//! Huber M-estimation equivalent weights for the measurement update.
//!
//! Residuals are standardized against the innovation covariance computed
//! with the nominal R. Channels whose standardized residual exceeds `c`
//! get their R entry inflated by `|r'|/c`, which is the inverse of the
//! Huber equivalent weight. The correction is single pass.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cubature::{correct, innovation_cov, innovation_moments, FilterBelief, StateSpaceModel};
use crate::error::{Error, Result};
use crate::numerics::{spd_solve, SymMatrix};

pub const DEFAULT_HUBER_C: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuberConfig {
    pub c: f64,
}

impl Default for HuberConfig {
    fn default() -> Self {
        HuberConfig { c: DEFAULT_HUBER_C }
    }
}

impl HuberConfig {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("Huber constant must be positive, got {c}")));
        }
        Ok(HuberConfig { c })
    }

    /// Scalar Huber weight `min(1, c/|r'|)`.
    pub fn weight(&self, standardized: f64) -> f64 {
        let a = standardized.abs();
        if a <= self.c {
            1.0
        } else {
            self.c / a
        }
    }
}

/// `r'_i = r_i / √(Pzz)_ii`.
pub fn standardized_residuals(innovation: &DVector<f64>, pzz: &SymMatrix) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(innovation.len());
    for i in 0..innovation.len() {
        let var = pzz.get(i, i);
        if !(var > 0.0) {
            return Err(Error::DegenerateVariance { channel: i, value: var });
        }
        out[i] = innovation[i] / var.sqrt();
    }
    Ok(out)
}

/// Equivalent weight matrix `P̄` for covariance `r`.
///
/// Diagonal: `1/σii` inside the threshold, `c/(σii·|r'i|)` outside.
/// Off-diagonal entries scale the precision `(R⁻¹)ij` by 1 when both
/// channels are inside and by `c/max(|r'i|, |r'j|)` otherwise, which keeps
/// `P̄` positive definite.
pub fn huber_weights(standardized: &DVector<f64>, cfg: &HuberConfig, r: &SymMatrix) -> Result<SymMatrix> {
    let m = standardized.len();
    let precision = if r.is_diagonal() {
        DMatrix::from_diagonal(&DVector::from_iterator(m, r.diagonal().iter().map(|s| 1.0 / s)))
    } else {
        spd_solve(r, &DMatrix::identity(m, m))?
    };
    let mut p = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let base = precision[(i, j)];
            if base == 0.0 {
                continue;
            }
            let worst = standardized[i].abs().max(standardized[j].abs());
            p[(i, j)] = if worst <= cfg.c { base } else { base * cfg.c / worst };
        }
    }
    Ok(SymMatrix::from_row_slice(m, p.as_slice()))
}

/// Corrected measurement covariance `R̄ = P̄⁻¹`.
///
/// `pzz_pre` is the innovation covariance computed with the unmodified `r`.
/// For diagonal `r` this is `R̄ii = Rii·max(1, |r'i|/c)`, returning the
/// original entries untouched for channels inside the threshold.
pub fn robust_r(
    innovation: &DVector<f64>,
    pzz_pre: &SymMatrix,
    r: &SymMatrix,
    cfg: &HuberConfig,
) -> Result<SymMatrix> {
    let standardized = standardized_residuals(innovation, pzz_pre)?;
    robust_r_from_standardized(&standardized, r, cfg)
}

fn robust_r_from_standardized(standardized: &DVector<f64>, r: &SymMatrix, cfg: &HuberConfig) -> Result<SymMatrix> {
    let m = standardized.len();
    if r.is_diagonal() {
        let mut diag = r.diagonal();
        for (i, d) in diag.iter_mut().enumerate() {
            if *d <= 0.0 {
                return Err(Error::DegenerateVariance { channel: i, value: *d });
            }
            let a = standardized[i].abs();
            if a > cfg.c {
                *d *= a / cfg.c;
            }
        }
        return Ok(SymMatrix::from_diagonal(&diag));
    }
    let weights = huber_weights(standardized, cfg, r)?;
    let inv = spd_solve(&weights, &DMatrix::identity(m, m))?;
    Ok(SymMatrix::from_row_slice(m, inv.transpose().as_slice()))
}

/// Measurement update with the Huber-corrected R substituted into the
/// innovation covariance. Reduces to [`crate::cubature::update`] bit-for-bit
/// when every standardized residual is within `c`.
pub fn robust_update<M: StateSpaceModel>(
    predicted: &FilterBelief,
    u: &M::Input,
    z: &DVector<f64>,
    model: &M,
    cfg: &HuberConfig,
) -> Result<FilterBelief> {
    let moments = innovation_moments(predicted, u, model)?;
    let r = model.measurement_noise(&predicted.mean, u);
    let pzz_pre = innovation_cov(&moments, &r);
    let innovation = z - &moments.z_hat;
    let standardized = standardized_residuals(&innovation, &pzz_pre)?;
    let r_bar = robust_r_from_standardized(&standardized, &r, cfg)?;
    let weights = standardized.iter().map(|s| cfg.weight(*s)).collect();
    correct(predicted, moments, z, &r_bar, standardized, weights)
}
