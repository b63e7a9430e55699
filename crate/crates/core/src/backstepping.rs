//! Boundary control of `ė = ε*·Δe + λ*·e` through the Volterra kernel
//! `k(x, ξ) = −c·ξ·I₁(z)/z`, `z = √(c(x² − ξ²))`, `c = λ*/ε*`.
//!
//! The kernel acts on each `(y, z)` column along the depth axis. The control
//! sets the Dirichlet datum on `x = delta` so that the transformed state
//! `w = e − ∫₀ˣ k(x, ξ)e(ξ)dξ` vanishes there.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::admittance::ErrorPdeCoeffs;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::plant::check_cfl;

pub const DEFAULT_SERIES_MAX: f64 = 30.0;

fn bessel_series(x: f64, sign: f64) -> f64 {
    let q = 0.25 * x * x * sign;
    let mut term = 0.5 * x;
    let mut sum = term;
    for m in 1..500 {
        term *= q / (m as f64 * (m + 1) as f64);
        sum += term;
        if term.abs() <= 1e-16 * sum.abs() {
            break;
        }
    }
    sum
}

/// Modified Bessel function `I₁` by its power series, for `|x| ≤ max_abs`.
pub fn bessel_i1_bounded(x: f64, max_abs: f64) -> Result<f64> {
    if !(x.abs() <= max_abs) {
        return Err(Error::OutOfRange { value: x, min: -max_abs, max: max_abs });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(bessel_series(x, 1.0))
}

pub fn bessel_i1(x: f64) -> Result<f64> {
    bessel_i1_bounded(x, DEFAULT_SERIES_MAX)
}

/// Bessel function `J₁` by its alternating power series, for `|x| ≤ 30`.
pub fn bessel_j1(x: f64) -> Result<f64> {
    if !(x.abs() <= DEFAULT_SERIES_MAX) {
        return Err(Error::OutOfRange { value: x, min: -DEFAULT_SERIES_MAX, max: DEFAULT_SERIES_MAX });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(bessel_series(x, -1.0))
}

/// `I₁(√u)/√u` for `u ≥ 0` and its continuation `J₁(√−u)/√−u` for `u < 0`,
/// summed as one series in `u`.
fn i1_ratio(u: f64) -> Result<f64> {
    let limit = DEFAULT_SERIES_MAX * DEFAULT_SERIES_MAX;
    if !(u.abs() <= limit) {
        return Err(Error::OutOfRange { value: u.abs().sqrt(), min: 0.0, max: DEFAULT_SERIES_MAX });
    }
    let q = 0.25 * u;
    let mut term = 0.5;
    let mut sum = term;
    for m in 1..500 {
        term *= q / (m as f64 * (m + 1) as f64);
        sum += term;
        if term.abs() <= 1e-16 * sum.abs() {
            break;
        }
    }
    Ok(sum)
}

/// Kernel value for `0 ≤ ξ ≤ x`. Any sign of `c` is accepted.
pub fn kernel_value(x: f64, xi: f64, c: f64) -> Result<f64> {
    if xi < 0.0 || xi > x * (1.0 + 1e-12) {
        return Err(Error::invalid("xi", format!("need 0 <= xi <= x, got xi {xi}, x {x}")));
    }
    if c == 0.0 || xi == 0.0 {
        return Ok(0.0);
    }
    let u = c * (x * x - xi * xi).max(0.0);
    Ok(-c * xi * i1_ratio(u)?)
}

/// Kernel samples on the depth nodes `x_i = i·h`, `i = 0..=nx+1`, lower triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub c: f64,
    pub delta: f64,
    pub nx: usize,
    samples: Vec<f64>,
}

impl KernelTable {
    pub fn new(c: f64, delta: f64, nx: usize) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::invalid("delta", format!("must be positive, got {delta}")));
        }
        let nodes = nx + 2;
        let h = delta / (nx + 1) as f64;
        let mut samples = Vec::with_capacity(nodes * (nodes + 1) / 2);
        for i in 0..nodes {
            for j in 0..=i {
                samples.push(kernel_value(i as f64 * h, j as f64 * h, c)?);
            }
        }
        Ok(KernelTable { c, delta, nx, samples })
    }

    pub fn h(&self) -> f64 {
        self.delta / (self.nx + 1) as f64
    }

    /// `k(x_i, ξ_j)` for `j ≤ i`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i && i <= self.nx + 1);
        self.samples[i * (i + 1) / 2 + j]
    }

    /// `k(delta, ξ_j)` for `j = 0..=nx+1`.
    pub fn boundary_row(&self) -> &[f64] {
        let i = self.nx + 1;
        &self.samples[i * (i + 1) / 2..]
    }

    fn check_grid(&self, field: &ScalarField) -> Result<()> {
        let s = field.spec();
        if s.nx != self.nx || (s.delta - self.delta).abs() > 1e-12 * self.delta {
            return Err(Error::GridMismatch(format!(
                "kernel built for nx = {}, delta = {}; field has nx = {}, delta = {}",
                self.nx, self.delta, s.nx, s.delta
            )));
        }
        Ok(())
    }

    /// Samples of `k(delta, ξ)` as CSV with columns `xi, k`.
    pub fn write_boundary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["xi", "k"])?;
        let h = self.h();
        for (j, k) in self.boundary_row().iter().enumerate() {
            w.write_record(&[(j as f64 * h).to_string(), k.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// `U(y, z) = ∫₀^δ k(δ, ξ)·e(ξ, y, z)dξ` by the trapezoid rule over the depth
/// nodes, using the stored face value at `ξ = δ`.
pub fn boundary_control(phi_e: &ScalarField, kernel: &KernelTable) -> Result<Vec<f64>> {
    kernel.check_grid(phi_e)?;
    let s = phi_e.spec();
    let row = kernel.boundary_row();
    let h = kernel.h();
    let mut out = vec![0.0; s.face_len()];
    for iy in 0..s.ny {
        for iz in 0..s.nz {
            let interior: f64 = (0..s.nx).map(|ix| row[ix + 1] * phi_e.get(ix, iy, iz)).sum();
            out[s.face_index(iy, iz)] = h * (interior + 0.5 * row[s.nx + 1] * phi_e.face_value(iy, iz));
        }
    }
    Ok(out)
}

/// Face data making `w(δ) = 0` under the trapezoid rule for the current
/// interior values: `U = h·Σ k(δ, ξ_j)e_j / (1 − (h/2)·k(δ, δ))`.
pub fn consistent_boundary(phi_e: &ScalarField, kernel: &KernelTable) -> Result<Vec<f64>> {
    let mut interior_only = phi_e.clone();
    interior_only.clear_actuated_face();
    let partial = boundary_control(&interior_only, kernel)?;
    let h = kernel.h();
    let denom = 1.0 - 0.5 * h * kernel.boundary_row()[kernel.nx + 1];
    if denom.abs() < 1e-12 {
        return Err(Error::invalid("c", "boundary closure is singular for this kernel and grid"));
    }
    Ok(partial.into_iter().map(|v| v / denom).collect())
}

/// `w(x_i) = e(x_i) − ∫₀^{x_i} k(x_i, ξ)e(ξ)dξ` per column, including the face node.
pub fn volterra_transform(phi_e: &ScalarField, kernel: &KernelTable) -> Result<ScalarField> {
    kernel.check_grid(phi_e)?;
    let s = *phi_e.spec();
    let h = kernel.h();
    let mut w = ScalarField::zeros(s);
    let mut face = vec![0.0; s.face_len()];
    let mut column = vec![0.0; s.nx + 2];
    for iy in 0..s.ny {
        for iz in 0..s.nz {
            for ix in 0..s.nx {
                column[ix + 1] = phi_e.get(ix, iy, iz);
            }
            column[s.nx + 1] = phi_e.face_value(iy, iz);
            for i in 1..=s.nx + 1 {
                let mut integral = 0.5 * kernel.get(i, i) * column[i];
                for (j, v) in column.iter().enumerate().take(i).skip(1) {
                    integral += kernel.get(i, j) * v;
                }
                let value = column[i] - h * integral;
                if i == s.nx + 1 {
                    face[s.face_index(iy, iz)] = value;
                } else {
                    w.set(i - 1, iy, iz, value);
                }
            }
        }
    }
    w.set_actuated_face(&face)?;
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelResidual {
    /// Largest `|k_xx − k_ξξ − c·k|` over the interior of the triangle,
    /// divided by `max |c·k|`.
    pub interior: f64,
    /// Largest `|k(x, 0)|`.
    pub boundary: f64,
    /// Largest `|k(x, x) + c·x/2|`.
    pub diagonal: f64,
}

/// Central-difference check of `k_xx − k_ξξ = c·k` on `[0, delta]` with `n`
/// intervals per axis.
pub fn kernel_pde_residual(c: f64, delta: f64, n: usize) -> Result<KernelResidual> {
    if n < 32 {
        return Err(Error::invalid("n", format!("need at least 32 intervals, got {n}")));
    }
    let h = delta / n as f64;
    let k = |i: usize, j: usize| kernel_value(i as f64 * h, j as f64 * h, c);
    let mut worst = 0.0_f64;
    let mut scale = 0.0_f64;
    let mut boundary = 0.0_f64;
    let mut diagonal = 0.0_f64;
    for i in 0..=n {
        let x = i as f64 * h;
        boundary = boundary.max(k(i, 0)?.abs());
        diagonal = diagonal.max((k(i, i)? + 0.5 * c * x).abs());
        if i == 0 || i == n {
            continue;
        }
        for j in 1..i {
            let centre = k(i, j)?;
            let k_xx = (k(i + 1, j)? - 2.0 * centre + k(i - 1, j)?) / (h * h);
            let k_yy = (k(i, j + 1)? - 2.0 * centre + k(i, j - 1)?) / (h * h);
            worst = worst.max((k_xx - k_yy - c * centre).abs());
            scale = scale.max((c * centre).abs());
        }
    }
    Ok(KernelResidual {
        interior: if scale > 0.0 { worst / scale } else { worst },
        boundary,
        diagonal,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorState {
    pub t: f64,
    pub e: ScalarField,
}

/// One explicit step of the error PDE. With a kernel, the face datum is the
/// consistent boundary value of the field before and after the step; without
/// one, the face is held at zero.
pub fn closed_loop_step(
    state: &ErrorState,
    kernel: Option<&KernelTable>,
    coeffs: &ErrorPdeCoeffs,
    dt: f64,
) -> Result<ErrorState> {
    let spec = *state.e.spec();
    check_cfl(&spec, coeffs.eps_star, dt)?;
    let mut e = state.e.clone();
    match kernel {
        Some(k) => e.set_actuated_face(&consistent_boundary(&e, k)?)?,
        None => e.clear_actuated_face(),
    }
    let mut next = e.clone();
    {
        let vals = next.values_mut();
        for ix in 0..spec.nx {
            for iy in 0..spec.ny {
                for iz in 0..spec.nz {
                    let i = spec.index(ix, iy, iz);
                    vals[i] += dt * (coeffs.eps_star * e.laplacian_at(ix, iy, iz) + coeffs.lambda_star * e.values()[i]);
                }
            }
        }
    }
    if let Some(k) = kernel {
        next.set_actuated_face(&consistent_boundary(&next, k)?)?;
    }
    Ok(ErrorState { t: state.t + dt, e: next })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn bessel_examples() {
        assert_eq!(bessel_i1(0.0).unwrap(), 0.0);
        assert_relative_eq!(bessel_i1(2.0).unwrap(), 1.590_636_854_637_329, max_relative = 1e-12);
        assert_relative_eq!(bessel_i1(-2.0).unwrap(), -bessel_i1(2.0).unwrap());
        assert_relative_eq!(bessel_j1(1.0).unwrap(), 0.440_050_585_744_933_5, max_relative = 1e-12);
        assert!(bessel_i1(31.0).is_err());
        assert!(bessel_i1_bounded(31.0, 40.0).is_ok());
    }

    #[test]
    fn kernel_examples() {
        for c in [-3.0, 0.0, 1.0, 7.0] {
            assert_eq!(kernel_value(0.8, 0.0, c).unwrap(), 0.0);
        }
        assert_relative_eq!(kernel_value(1.0, 1.0, 1.0).unwrap(), -0.5, epsilon = 1e-15);
        let z = 0.75f64.sqrt();
        let oracle = -0.5 * bessel_i1(z).unwrap() / z;
        assert_relative_eq!(kernel_value(1.0, 0.5, 1.0).unwrap(), oracle, max_relative = 1e-13);
        assert!((kernel_value(1.0, 0.5, 1.0).unwrap() + 0.2742).abs() < 5e-5);
        assert!(kernel_value(1.0, 1.5, 1.0).is_err());
        assert!(kernel_value(1.0, -0.1, 1.0).is_err());
    }

    #[test]
    fn negative_c_uses_oscillatory_continuation() {
        let (x, xi, c): (f64, f64, f64) = (1.0, 0.3, -4.0);
        let z = (-c * (x * x - xi * xi)).sqrt();
        let expected = -c * xi * bessel_j1(z).unwrap() / z;
        assert_relative_eq!(kernel_value(x, xi, c).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn kernel_residual_examples() {
        let zero = kernel_pde_residual(0.0, 1.0, 64).unwrap();
        assert_eq!(zero.interior, 0.0);
        let r = kernel_pde_residual(1.0, 1.0, 256).unwrap();
        assert!(r.interior < 1e-3 && r.boundary == 0.0 && r.diagonal < 1e-14);
        let coarse = kernel_pde_residual(20.0, 1.0, 32).unwrap().interior;
        let fine = kernel_pde_residual(20.0, 1.0, 64).unwrap().interior;
        let ratio = coarse / fine;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn diagonal_continuity_is_first_order() {
        let (x, c) = (0.5, 2.0);
        let gap = |h: f64| (kernel_value(x, x - h, c).unwrap() + c * x / 2.0).abs();
        let ratio = gap(1e-3) / gap(5e-4);
        assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn table_matches_closed_form() {
        let t = KernelTable::new(2.0, 1.5, 9).unwrap();
        let h = t.h();
        for i in 0..=10 {
            for j in 0..=i {
                assert_eq!(t.get(i, j), kernel_value(i as f64 * h, j as f64 * h, 2.0).unwrap());
            }
            assert_relative_eq!(t.get(i, i), -2.0 * i as f64 * h / 2.0, epsilon = 1e-14);
        }
        assert_eq!(t.boundary_row().len(), 11);
    }

    #[test]
    fn control_examples() {
        let spec = GridSpec::new(15, 3, 3, 1.0, 1.0, 1.0).unwrap();
        let kernel = KernelTable::new(1.0, 1.0, 15).unwrap();
        let zero = ScalarField::zeros(spec);
        assert!(boundary_control(&zero, &kernel).unwrap().iter().all(|v| *v == 0.0));

        let ones = ScalarField::from_fn(spec, |_, _, _| 1.0).with_actuated_face(&[1.0; 9]).unwrap();
        let flat = KernelTable::new(0.0, 1.0, 15).unwrap();
        assert!(boundary_control(&ones, &flat).unwrap().iter().all(|v| *v == 0.0));

        // Refined trapezoid oracle for ∫₀¹ k(1, ξ)dξ.
        let n = 160;
        let oracle: f64 = (0..=n)
            .map(|j| {
                let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                w * kernel_value(1.0, j as f64 / n as f64, 1.0).unwrap()
            })
            .sum::<f64>()
            / n as f64;
        for u in boundary_control(&ones, &kernel).unwrap() {
            assert!(((u - oracle) / oracle).abs() < 0.01);
        }

        let other = GridSpec::new(7, 3, 3, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(boundary_control(&ScalarField::zeros(other), &kernel), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn volterra_examples() {
        let spec = GridSpec::new(11, 2, 2, 1.0, 1.0, 1.0).unwrap();
        let f = ScalarField::from_fn(spec, |x, y, z| x * (1.0 - x) + y - z);
        let flat = KernelTable::new(0.0, 1.0, 11).unwrap();
        assert_eq!(volterra_transform(&f, &flat).unwrap().values(), f.values());
        let k = KernelTable::new(3.0, 1.0, 11).unwrap();
        let w = volterra_transform(&ScalarField::zeros(spec), &k).unwrap();
        assert!(w.values().iter().all(|v| *v == 0.0));

        let mut controlled = f.clone();
        controlled.set_actuated_face(&consistent_boundary(&f, &k).unwrap()).unwrap();
        let w = volterra_transform(&controlled, &k).unwrap();
        for v in w.face() {
            assert!(v.abs() < 1e-12 * f.max_abs().max(1.0));
        }
    }

    #[test]
    fn zero_error_stays_zero() {
        let spec = GridSpec::line(15, 1.0).unwrap();
        let coeffs = ErrorPdeCoeffs { eps_star: 1.0, lambda_star: 12.0, c: 12.0 };
        let k = KernelTable::new(12.0, 1.0, 15).unwrap();
        let s = ErrorState { t: 0.0, e: ScalarField::zeros(spec) };
        let next = closed_loop_step(&s, Some(&k), &coeffs, 0.5 * spec.cfl_bound(1.0)).unwrap();
        assert!(next.e.values().iter().all(|v| *v == 0.0));
        assert!(closed_loop_step(&s, Some(&k), &coeffs, 2.0 * spec.cfl_bound(1.0)).is_err());
    }

    proptest! {
        #[test]
        fn control_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, c in -5.0..20.0f64) {
            let spec = GridSpec::new(9, 2, 3, 1.0, 1.0, 1.0).unwrap();
            let k = KernelTable::new(c, 1.0, 9).unwrap();
            let u = ScalarField::from_fn(spec, |x, y, z| (3.0 * x).sin() + y * z);
            let v = ScalarField::from_fn(spec, |x, y, _| x * x - y);
            let mut combo = u.scaled(a);
            combo.axpy(b, &v).unwrap();
            let lhs = boundary_control(&combo, &k).unwrap();
            let ru = boundary_control(&u, &k).unwrap();
            let rv = boundary_control(&v, &k).unwrap();
            for i in 0..lhs.len() {
                let rhs = a * ru[i] + b * rv[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }
}
