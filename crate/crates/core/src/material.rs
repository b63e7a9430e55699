//! One-dimensional viscoelastic force laws and the coefficient maps feeding
//! the 3D deformation PDE.
//!
//! Units are mm, N and s throughout: stiffness in N/mm, damping in N·s/mm,
//! diffusion in mm²/s.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kelvin–Voigt element: spring and damper in parallel.
pub fn kelvin_voigt_force(stiffness: f64, damping: f64, phi: f64, phi_dot: f64) -> f64 {
    stiffness * phi + damping * phi_dot
}

/// One explicit Euler step of the Maxwell relaxation `alpha·ḟ = b·φ̇ − f`.
///
/// `alpha` is treated as an independent relaxation time.
pub fn maxwell_step(damping: f64, alpha: f64, force: f64, phi_dot: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha", format!("must be positive, got {alpha}")));
    }
    Ok(force + dt * (damping * phi_dot - force) / alpha)
}

/// Burgers element coefficients: the two springs, the dashpot and the
/// lumped `(k, beta, gamma)` of `f = k·φ + beta·φ̇ − gamma·ḟ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurgersCoeffs {
    pub k1: f64,
    pub k2: f64,
    pub b: f64,
    pub k: f64,
    pub beta: f64,
    pub gamma: f64,
}

pub fn burgers_coeffs(k1: f64, k2: f64, b: f64) -> Result<BurgersCoeffs> {
    for (name, v) in [("k1", k1), ("k2", k2), ("b", b)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(name, format!("must be positive and finite, got {v}")));
        }
    }
    let sum = k1 + k2;
    Ok(BurgersCoeffs {
        k1,
        k2,
        b,
        k: k1 * k2 / sum,
        beta: b * k2 / sum,
        gamma: b / sum,
    })
}

impl BurgersCoeffs {
    pub fn pde_params(&self, eps: f64) -> Result<ViscoParams> {
        pde_params(self.k, self.beta, self.gamma, eps)
    }
}

/// Coefficients `θ = (ε, a₁, a₂, λ)` of
/// `φ̇ = ε·Δφ + a₁·f + a₂·ḟ + λ·φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViscoParams {
    pub eps: f64,
    pub a1: f64,
    pub a2: f64,
    pub lambda: f64,
}

/// Maps lumped Burgers coefficients to PDE parameters:
/// `a₁ = 1/β`, `a₂ = γ/β`, `λ = −k/β`.
pub fn pde_params(k: f64, beta: f64, gamma: f64, eps: f64) -> Result<ViscoParams> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::invalid("beta", format!("must be nonzero and finite, got {beta}")));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
    }
    Ok(ViscoParams {
        eps,
        a1: 1.0 / beta,
        a2: gamma / beta,
        lambda: -k / beta,
    })
}

impl ViscoParams {
    /// Parameter vector in regressor order `[ε, a₁, a₂, λ]`.
    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.eps, self.a1, self.a2, self.lambda)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        ViscoParams {
            eps: v[0],
            a1: v[1],
            a2: v[2],
            lambda: v[3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::invalid("eps", format!("must be positive, got {}", self.eps)));
        }
        for (name, v) in [("a1", self.a1), ("a2", self.a2), ("lambda", self.lambda)] {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        Ok(())
    }
}
