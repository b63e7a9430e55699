//! Admittance filter shaping the reference deformation from force error,
//! its transfer function, and the passivity test on the loop.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::material::ViscoParams;

/// Filter gains `λ₂·δ̇ = a₁·f_e + a₂·ḟ_e − λ₁·δ`, with `f_e = f − f_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlGains {
    pub lambda1: f64,
    pub lambda2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl ControlGains {
    pub fn new(lambda1: f64, lambda2: f64, params: &ViscoParams) -> Self {
        ControlGains {
            lambda1,
            lambda2,
            a1: params.a1,
            a2: params.a2,
        }
    }

    /// Requires `λ₁ > 0` and `0 < λ₂ < 1`.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0) || !self.lambda1.is_finite() {
            return Err(Error::invalid("lambda1", format!("must be positive, got {}", self.lambda1)));
        }
        if !(self.lambda2 > 0.0 && self.lambda2 < 1.0) {
            return Err(Error::invalid("lambda2", format!("must lie in (0, 1), got {}", self.lambda2)));
        }
        if !self.a1.is_finite() || !self.a2.is_finite() {
            return Err(Error::invalid("a1/a2", "must be finite"));
        }
        Ok(())
    }
}

/// One explicit step of the admittance filter at every grid point.
pub fn admittance_update(
    delta_ref: &ScalarField,
    f_e: &ScalarField,
    f_e_dot: &ScalarField,
    gains: &ControlGains,
    dt: f64,
) -> Result<ScalarField> {
    if gains.lambda2 == 0.0 {
        return Err(Error::invalid("lambda2", "zero makes the filter degenerate"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    let drive = f_e.zip_map(f_e_dot, |f, fd| gains.a1 * f + gains.a2 * fd)?;
    delta_ref.zip_map(&drive, |d, u| d + dt * (u - gains.lambda1 * d) / gains.lambda2)
}

/// `G(jω) = (a₁ + a₂·jω)/(λ₁ + λ₂·jω)`.
pub fn transfer_function_eval(gains: &ControlGains, omega: f64) -> Result<Complex64> {
    let den = Complex64::new(gains.lambda1, gains.lambda2 * omega);
    if den.norm() == 0.0 {
        return Err(Error::ImaginaryAxisPole { omega });
    }
    Ok(Complex64::new(gains.a1, gains.a2 * omega) / den)
}

/// Closed form of `Re G(jω)`.
pub fn real_part_closed_form(gains: &ControlGains, omega: f64) -> f64 {
    let w2 = omega * omega;
    (gains.a1 * gains.lambda1 + gains.a2 * gains.lambda2 * w2)
        / (gains.lambda1.powi(2) + gains.lambda2.powi(2) * w2)
}

/// Frequencies for the passivity sweep: 61 points log-spaced over `[1e-3, 1e3]` rad/s.
pub fn passivity_frequencies() -> Vec<f64> {
    (0..61).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 60.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassivityVerdict {
    pub passive: bool,
    /// Minimum sampled `Re G(jω)`; `-inf` when a sample hits a pole.
    pub margin: f64,
    pub worst_omega: f64,
}

/// Passes iff `λ₁ > 0`, `λ₂ > 0`, `a₁λ₁ > 0` and `a₂λ₂ > 0`.
pub fn passivity_check(gains: &ControlGains) -> PassivityVerdict {
    let passive = gains.lambda1 > 0.0
        && gains.lambda2 > 0.0
        && gains.a1 * gains.lambda1 > 0.0
        && gains.a2 * gains.lambda2 > 0.0;
    let mut margin = f64::INFINITY;
    let mut worst_omega = f64::NAN;
    for w in passivity_frequencies() {
        let re = match transfer_function_eval(gains, w) {
            Ok(g) => g.re,
            Err(_) => f64::NEG_INFINITY,
        };
        if re < margin || worst_omega.is_nan() {
            margin = re;
            worst_omega = w;
        }
    }
    PassivityVerdict {
        passive,
        margin,
        worst_omega,
    }
}

/// Coefficients of the closed-loop error PDE `ė = ε*·Δe + λ*·e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPdeCoeffs {
    pub eps_star: f64,
    pub lambda_star: f64,
    pub c: f64,
}

pub fn error_pde_coeffs(params: &ViscoParams, gains: &ControlGains) -> Result<ErrorPdeCoeffs> {
    if !(gains.lambda2 < 1.0) {
        return Err(Error::invalid("lambda2", format!("must be below 1, got {}", gains.lambda2)));
    }
    let s = 1.0 - gains.lambda2;
    let eps_star = params.eps / s;
    let lambda_star = (params.lambda + gains.lambda1) / s;
    Ok(ErrorPdeCoeffs {
        eps_star,
        lambda_star,
        c: lambda_star / eps_star,
    })
}

/// Backward-difference rate estimate with an optional first-order low-pass.
#[derive(Debug, Clone)]
pub struct RateEstimator {
    /// Low-pass cutoff in Hz; `None` disables smoothing.
    pub cutoff_hz: Option<f64>,
    prev: Option<ScalarField>,
    rate: Option<ScalarField>,
}

impl RateEstimator {
    pub const DEFAULT_CUTOFF_HZ: f64 = 50.0;

    pub fn new(cutoff_hz: Option<f64>) -> Self {
        RateEstimator {
            cutoff_hz,
            prev: None,
            rate: None,
        }
    }

    /// Feeds a new sample and returns the rate estimate. The first sample
    /// yields a zero rate.
    pub fn update(&mut self, sample: &ScalarField, dt: f64) -> Result<ScalarField> {
        if !(dt > 0.0) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        let raw = match &self.prev {
            Some(p) => sample.zip_map(p, |a, b| (a - b) / dt)?,
            None => ScalarField::zeros(*sample.spec()),
        };
        let rate = match (&self.rate, self.cutoff_hz) {
            (Some(r), Some(fc)) => {
                let tau = 1.0 / (2.0 * std::f64::consts::PI * fc);
                let a = dt / (tau + dt);
                r.zip_map(&raw, |old, new| old + a * (new - old))?
            }
            _ => raw,
        };
        self.prev = Some(sample.clone());
        self.rate = Some(rate.clone());
        Ok(rate)
    }
}
