//! Separation-of-variables solutions of `u̇ = ε*·Δu + λ*·u` on the box with
//! zero Dirichlet data.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::admittance::ErrorPdeCoeffs;
use crate::field::{GridSpec, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenMode {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub coefficient: f64,
}

impl EigenMode {
    pub fn new(n: usize, m: usize, p: usize, coefficient: f64) -> Self {
        EigenMode { n, m, p, coefficient }
    }

    /// Laplacian eigenvalue; on a line grid only the depth index counts.
    pub fn mu(&self, spec: &GridSpec) -> f64 {
        let mut mu = (self.n as f64 * PI / spec.delta).powi(2);
        if spec.transverse {
            mu += (self.m as f64 * PI / spec.ly).powi(2) + (self.p as f64 * PI / spec.lz).powi(2);
        }
        mu
    }

    pub fn rate(&self, spec: &GridSpec, coeffs: &ErrorPdeCoeffs) -> f64 {
        coeffs.lambda_star - coeffs.eps_star * self.mu(spec)
    }

    pub fn shape(&self, spec: &GridSpec, x: f64, y: f64, z: f64) -> f64 {
        let sx = (self.n as f64 * PI * x / spec.delta).sin();
        if !spec.transverse {
            return sx;
        }
        sx * (self.m as f64 * PI * y / spec.ly).sin() * (self.p as f64 * PI * z / spec.lz).sin()
    }
}

/// `Σ C·e^{(λ* − ε*μ)t}·sin·sin·sin` sampled on the grid.
pub fn box_series_solution(modes: &[EigenMode], coeffs: &ErrorPdeCoeffs, spec: &GridSpec, t: f64) -> ScalarField {
    let weights: Vec<f64> = modes
        .iter()
        .map(|m| m.coefficient * (m.rate(spec, coeffs) * t).exp())
        .collect();
    ScalarField::from_fn(*spec, |x, y, z| {
        modes
            .iter()
            .zip(&weights)
            .map(|(m, w)| w * m.shape(spec, x, y, z))
            .sum()
    })
}

/// Sine-series coefficients `C = (8/V)·⟨field, mode⟩` by grid quadrature, for
/// indices up to `max_modes` per axis (capped at the grid resolution).
pub fn project_initial(field: &ScalarField, max_modes: usize) -> Vec<EigenMode> {
    let spec = *field.spec();
    let w = spec.cell_volume();
    let (norm, my, mz) = if spec.transverse {
        (8.0 / (spec.delta * spec.ly * spec.lz), max_modes.min(spec.ny), max_modes.min(spec.nz))
    } else {
        (2.0 / spec.delta, 1, 1)
    };
    let sines = |count: usize, nodes: usize, h: f64, extent: f64| -> Vec<Vec<f64>> {
        (1..=count)
            .map(|k| (0..nodes).map(|i| (k as f64 * PI * (i + 1) as f64 * h / extent).sin()).collect())
            .collect()
    };
    let sx = sines(max_modes.min(spec.nx), spec.nx, spec.hx(), spec.delta);
    let sy = sines(my, spec.ny, spec.hy(), spec.ly);
    let sz = sines(mz, spec.nz, spec.hz(), spec.lz);
    let mut modes = Vec::new();
    for (n, bx) in sx.iter().enumerate() {
        for (m, by) in sy.iter().enumerate() {
            for (p, bz) in sz.iter().enumerate() {
                let mut acc = 0.0;
                for (ix, gx) in bx.iter().enumerate() {
                    for (iy, gy) in by.iter().enumerate() {
                        let byz = if spec.transverse { gx * gy } else { *gx };
                        for (iz, gz) in bz.iter().enumerate() {
                            let b = if spec.transverse { byz * gz } else { byz };
                            acc += field.get(ix, iy, iz) * b;
                        }
                    }
                }
                modes.push(EigenMode::new(n + 1, m + 1, p + 1, norm * acc * w));
            }
        }
    }
    modes
}

/// Exponent of the least-damped mode, `λ* − ε*·μ₁₁₁`.
pub fn slowest_rate(coeffs: &ErrorPdeCoeffs, spec: &GridSpec) -> f64 {
    EigenMode::new(1, 1, 1, 1.0).rate(spec, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn coeffs(eps_star: f64, lambda_star: f64) -> ErrorPdeCoeffs {
        ErrorPdeCoeffs { eps_star, lambda_star, c: lambda_star / eps_star }
    }

    fn unit(n: usize) -> GridSpec {
        GridSpec::new(n, n, n, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn rates() {
        let spec = unit(5);
        assert_relative_eq!(EigenMode::new(1, 1, 1, 1.0).rate(&spec, &coeffs(1.0, 5.0)), 5.0 - 3.0 * PI * PI);
        assert_relative_eq!(slowest_rate(&coeffs(1.0, 0.0), &spec), -3.0 * PI * PI);
        assert_relative_eq!(slowest_rate(&coeffs(1.0, 3.0 * PI * PI), &spec), 0.0, epsilon = 1e-12);
        let r0 = slowest_rate(&coeffs(2.0, 1.0), &spec);
        assert_relative_eq!(slowest_rate(&coeffs(2.0, 2.0), &spec) - r0, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn synthesis_at_zero_and_invariant_mode() {
        let spec = GridSpec::new(7, 5, 6, 1.0, 0.8, 1.2).unwrap();
        let modes = vec![EigenMode::new(1, 1, 1, 1.0), EigenMode::new(2, 1, 3, -0.4)];
        let u0 = box_series_solution(&modes, &coeffs(1.0, 0.0), &spec, 0.0);
        let direct = ScalarField::from_fn(spec, |x, y, z| modes.iter().map(|m| m.coefficient * m.shape(&spec, x, y, z)).sum());
        assert_eq!(u0, direct);

        let mode = EigenMode::new(2, 1, 1, 1.5);
        let c = coeffs(0.7, 0.7 * mode.mu(&spec));
        let later = box_series_solution(&[mode], &c, &spec, 3.0);
        let now = box_series_solution(&[mode], &c, &spec, 0.0);
        for (a, b) in later.values().iter().zip(now.values()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let spec = GridSpec::new(9, 7, 8, 1.0, 0.6, 1.4).unwrap();
        let f = box_series_solution(&[EigenMode::new(1, 1, 1, 1.0)], &coeffs(1.0, 0.0), &spec, 0.0);
        for m in project_initial(&f, 4) {
            if (m.n, m.m, m.p) == (1, 1, 1) {
                assert_relative_eq!(m.coefficient, 1.0, epsilon = 1e-10);
            } else {
                assert!(m.coefficient.abs() < 1e-10);
            }
        }
        assert!(project_initial(&ScalarField::zeros(spec), 3).iter().all(|m| m.coefficient == 0.0));

        let modes = vec![EigenMode::new(1, 2, 1, 0.3), EigenMode::new(3, 1, 2, -1.2), EigenMode::new(2, 3, 3, 0.05)];
        let u = box_series_solution(&modes, &coeffs(1.0, 0.0), &spec, 0.0);
        let back = project_initial(&u, 3);
        for m in &modes {
            let got = back.iter().find(|b| (b.n, b.m, b.p) == (m.n, m.m, m.p)).unwrap();
            assert_relative_eq!(got.coefficient, m.coefficient, epsilon = 1e-8);
        }
    }

    #[test]
    fn line_projection() {
        let spec = GridSpec::line(15, 2.0).unwrap();
        let f = ScalarField::from_fn(spec, |x, _, _| 0.5 * (3.0 * PI * x / 2.0).sin());
        let modes = project_initial(&f, 5);
        assert_eq!(modes.len(), 5);
        assert_relative_eq!(modes[2].coefficient, 0.5, epsilon = 1e-12);
        assert!(modes[0].coefficient.abs() < 1e-12);
    }

    #[test]
    fn energy_decays_when_stable() {
        let spec = unit(7);
        let modes = vec![EigenMode::new(1, 1, 1, 1.0), EigenMode::new(2, 2, 1, 0.5)];
        let c = coeffs(1.0, 10.0);
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let e = box_series_solution(&modes, &c, &spec, 0.01 * k as f64).norms().l2;
            assert!(e < last);
            last = e;
        }
    }
}
