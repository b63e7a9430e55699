//! Scalar fields on the box-shaped manipulation domain.
//!
//! The domain is `[0, delta] × [0, ly] × [0, lz]` with `x` the depth axis.
//! Fields store values at interior grid points only. Every face is a
//! homogeneous Dirichlet face except the actuated face `x = delta`, whose
//! values are stored alongside the interior data.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid over the domain. Spacings are `extent / (n + 1)`.
///
/// A grid built with [`GridSpec::line`] drops the transverse terms of the
/// Laplacian, which reduces every operator to the 1D problem along `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub delta: f64,
    pub ly: f64,
    pub lz: f64,
    pub transverse: bool,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, nz: usize, delta: f64, ly: f64, lz: f64) -> Result<Self> {
        let spec = GridSpec {
            nx,
            ny,
            nz,
            delta,
            ly,
            lz,
            transverse: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// One-dimensional reduction with `nx` interior points on `[0, delta]`.
    pub fn line(nx: usize, delta: f64) -> Result<Self> {
        let spec = GridSpec {
            nx,
            ny: 1,
            nz: 1,
            delta,
            ly: 1.0,
            lz: 1.0,
            transverse: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("nx", self.nx), ("ny", self.ny), ("nz", self.nz)] {
            if n == 0 {
                return Err(Error::invalid(name, "grid needs at least one interior point"));
            }
        }
        for (name, v) in [("delta", self.delta), ("ly", self.ly), ("lz", self.lz)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("extent must be positive, got {v}")));
            }
        }
        if !self.transverse && (self.ny != 1 || self.nz != 1) {
            return Err(Error::invalid("transverse", "a line grid must have ny = nz = 1"));
        }
        Ok(())
    }

    pub fn hx(&self) -> f64 {
        self.delta / (self.nx + 1) as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / (self.ny + 1) as f64
    }

    pub fn hz(&self) -> f64 {
        self.lz / (self.nz + 1) as f64
    }

    pub fn x(&self, ix: usize) -> f64 {
        (ix + 1) as f64 * self.hx()
    }

    pub fn y(&self, iy: usize) -> f64 {
        (iy + 1) as f64 * self.hy()
    }

    pub fn z(&self, iz: usize) -> f64 {
        (iz + 1) as f64 * self.hz()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn face_len(&self) -> usize {
        self.ny * self.nz
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.ny + iy) * self.nz + iz
    }

    #[inline]
    pub fn face_index(&self, iy: usize, iz: usize) -> usize {
        iy * self.nz + iz
    }

    /// Quadrature weight of one interior point: `hx·hy·hz`, or `hx` on a line grid.
    pub fn cell_volume(&self) -> f64 {
        if self.transverse {
            self.hx() * self.hy() * self.hz()
        } else {
            self.hx()
        }
    }

    /// Cross-section area element `hy·hz` (1 on a line grid).
    pub fn face_cell_area(&self) -> f64 {
        if self.transverse {
            self.hy() * self.hz()
        } else {
            1.0
        }
    }

    /// `Σ 1/h²` over the active axes.
    pub fn inv_h2_sum(&self) -> f64 {
        let mut s = 1.0 / self.hx().powi(2);
        if self.transverse {
            s += 1.0 / self.hy().powi(2) + 1.0 / self.hz().powi(2);
        }
        s
    }

    /// Largest stable explicit step for diffusion coefficient `eps`.
    pub fn cfl_bound(&self, eps: f64) -> f64 {
        1.0 / (2.0 * eps * self.inv_h2_sum())
    }

    pub fn refined(&self) -> Self {
        let refine = |n: usize| 2 * (n + 1) - 1;
        GridSpec {
            nx: refine(self.nx),
            ny: if self.transverse { refine(self.ny) } else { 1 },
            nz: if self.transverse { refine(self.nz) } else { 1 },
            ..*self
        }
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Volume-weighted L2 norm and max-norm of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldNorms {
    pub l2: f64,
    pub linf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    spec: GridSpec,
    values: Vec<f64>,
    face: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(spec: GridSpec) -> Self {
        ScalarField {
            spec,
            values: vec![0.0; spec.len()],
            face: vec![0.0; spec.face_len()],
        }
    }

    /// Samples `f(x, y, z)` at every interior point; the actuated face is zero.
    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut field = Self::zeros(spec);
        for ix in 0..spec.nx {
            for iy in 0..spec.ny {
                for iz in 0..spec.nz {
                    field.values[spec.index(ix, iy, iz)] = f(spec.x(ix), spec.y(iy), spec.z(iz));
                }
            }
        }
        field
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} interior values", spec.len()),
                actual: values.len().to_string(),
            });
        }
        Ok(ScalarField {
            spec,
            values,
            face: vec![0.0; spec.face_len()],
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn face(&self) -> &[f64] {
        &self.face
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.spec.index(ix, iy, iz)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, v: f64) {
        let i = self.spec.index(ix, iy, iz);
        self.values[i] = v;
    }

    pub fn face_value(&self, iy: usize, iz: usize) -> f64 {
        self.face[self.spec.face_index(iy, iz)]
    }

    /// Replaces the Dirichlet data on the actuated face `x = delta`.
    /// `face_values` is laid out row-major over `(iy, iz)`.
    pub fn set_actuated_face(&mut self, face_values: &[f64]) -> Result<()> {
        if face_values.len() != self.spec.face_len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} face values", self.spec.ny, self.spec.nz),
                actual: face_values.len().to_string(),
            });
        }
        self.face.copy_from_slice(face_values);
        Ok(())
    }

    pub fn with_actuated_face(mut self, face_values: &[f64]) -> Result<Self> {
        self.set_actuated_face(face_values)?;
        Ok(self)
    }

    pub fn clear_actuated_face(&mut self) {
        self.face.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Value at a neighbour index, falling back to Dirichlet data outside the
    /// interior.
    #[inline]
    fn neighbour(&self, ix: isize, iy: isize, iz: isize) -> f64 {
        let s = &self.spec;
        if iy < 0 || iz < 0 || iy >= s.ny as isize || iz >= s.nz as isize || ix < 0 {
            return 0.0;
        }
        if ix >= s.nx as isize {
            return self.face[s.face_index(iy as usize, iz as usize)];
        }
        self.values[s.index(ix as usize, iy as usize, iz as usize)]
    }

    /// Seven-point Laplacian at one interior point.
    #[inline]
    pub fn laplacian_at(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        let s = &self.spec;
        let (i, j, k) = (ix as isize, iy as isize, iz as isize);
        let c = self.values[s.index(ix, iy, iz)];
        let mut lap = (self.neighbour(i - 1, j, k) - 2.0 * c + self.neighbour(i + 1, j, k)) / s.hx().powi(2);
        if s.transverse {
            lap += (self.neighbour(i, j - 1, k) - 2.0 * c + self.neighbour(i, j + 1, k)) / s.hy().powi(2);
            lap += (self.neighbour(i, j, k - 1) - 2.0 * c + self.neighbour(i, j, k + 1)) / s.hz().powi(2);
        }
        lap
    }

    /// Discrete Laplacian; boundary values come from the Dirichlet data.
    /// The result carries zero face data.
    pub fn laplacian(&self) -> ScalarField {
        let s = self.spec;
        let mut out = ScalarField::zeros(s);
        for ix in 0..s.nx {
            for iy in 0..s.ny {
                for iz in 0..s.nz {
                    out.values[s.index(ix, iy, iz)] = self.laplacian_at(ix, iy, iz);
                }
            }
        }
        out
    }

    /// Laplacian with arbitrary Dirichlet data `g(x, y, z)` on every face,
    /// ignoring the stored actuated-face values.
    pub fn laplacian_with_boundary(&self, g: impl Fn(f64, f64, f64) -> f64) -> ScalarField {
        let s = self.spec;
        let coord = |i: isize, h: f64| (i + 1) as f64 * h;
        let fetch = |ix: isize, iy: isize, iz: isize| -> f64 {
            let inside = ix >= 0
                && iy >= 0
                && iz >= 0
                && ix < s.nx as isize
                && iy < s.ny as isize
                && iz < s.nz as isize;
            if inside {
                self.values[s.index(ix as usize, iy as usize, iz as usize)]
            } else {
                g(coord(ix, s.hx()), coord(iy, s.hy()), coord(iz, s.hz()))
            }
        };
        let mut out = ScalarField::zeros(s);
        for ix in 0..s.nx {
            for iy in 0..s.ny {
                for iz in 0..s.nz {
                    let (i, j, k) = (ix as isize, iy as isize, iz as isize);
                    let c = self.values[s.index(ix, iy, iz)];
                    let mut lap = (fetch(i - 1, j, k) - 2.0 * c + fetch(i + 1, j, k)) / s.hx().powi(2);
                    if s.transverse {
                        lap += (fetch(i, j - 1, k) - 2.0 * c + fetch(i, j + 1, k)) / s.hy().powi(2);
                        lap += (fetch(i, j, k - 1) - 2.0 * c + fetch(i, j, k + 1)) / s.hz().powi(2);
                    }
                    out.values[s.index(ix, iy, iz)] = lap;
                }
            }
        }
        out
    }

    pub fn norms(&self) -> FieldNorms {
        let w = self.spec.cell_volume();
        let sum_sq: f64 = self.values.iter().map(|v| v * v).sum();
        let linf = self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        FieldNorms {
            l2: (sum_sq * w).sqrt(),
            linf,
        }
    }

    /// Volume-weighted inner product over interior points.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.spec, other.spec);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.spec.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.norms().linf
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(&self.face).all(|v| v.is_finite())
    }

    /// `a·self`, face data included.
    pub fn scaled(&self, a: f64) -> ScalarField {
        self.map(|v| a * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            spec: self.spec,
            values: self.values.iter().map(|&v| f(v)).collect(),
            face: self.face.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid, face data included.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.spec.ensure_same(&other.spec)?;
        Ok(ScalarField {
            spec: self.spec,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
            face: self.face.iter().zip(&other.face).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        self.zip_map(other, |a, b| a - b)
    }

    /// `self += a·other`, face data included.
    pub fn axpy(&mut self, a: f64, other: &ScalarField) -> Result<()> {
        self.spec.ensure_same(&other.spec)?;
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += a * o;
        }
        for (v, o) in self.face.iter_mut().zip(&other.face) {
            *v += a * o;
        }
        Ok(())
    }

    /// Bilinear interpolation across the `(y, z)` plane of layer `ix`, with the
    /// zero Dirichlet data on the lateral faces.
    pub fn layer_value_at(&self, ix: usize, y: f64, z: f64) -> f64 {
        let s = &self.spec;
        if !s.transverse {
            return self.get(ix, 0, 0);
        }
        if !(0.0..=s.ly).contains(&y) || !(0.0..=s.lz).contains(&z) {
            return 0.0;
        }
        // Node j (0..=ny+1) sits at j·hy; nodes 0 and ny+1 are boundary zeros.
        let fy = y / s.hy();
        let fz = z / s.hz();
        let jy = (fy.floor() as usize).min(s.ny);
        let jz = (fz.floor() as usize).min(s.nz);
        let ty = fy - jy as f64;
        let tz = fz - jz as f64;
        let node = |j: usize, k: usize| -> f64 {
            if j == 0 || k == 0 || j > s.ny || k > s.nz {
                0.0
            } else {
                self.get(ix, j - 1, k - 1)
            }
        };
        node(jy, jz) * (1.0 - ty) * (1.0 - tz)
            + node(jy + 1, jz) * ty * (1.0 - tz)
            + node(jy, jz + 1) * (1.0 - ty) * tz
            + node(jy + 1, jz + 1) * ty * tz
    }

    /// Snapshot export with columns `ix, iy, iz, x, y, z, value`. Rows with
    /// `ix = nx` carry the actuated-face data at `x = delta`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let s = &self.spec;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["ix", "iy", "iz", "x", "y", "z", "value"])?;
        for ix in 0..=s.nx {
            let x = if ix == s.nx { s.delta } else { s.x(ix) };
            for iy in 0..s.ny {
                for iz in 0..s.nz {
                    let v = if ix == s.nx { self.face_value(iy, iz) } else { self.get(ix, iy, iz) };
                    w.write_record(&[
                        ix.to_string(),
                        iy.to_string(),
                        iz.to_string(),
                        x.to_string(),
                        s.y(iy).to_string(),
                        s.z(iz).to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// SVG heatmap of one slice, diverging colour map symmetric about zero.
    pub fn svg_slice(&self, slice: Slice) -> String {
        let s = &self.spec;
        let (cols, rows, sample): (usize, usize, Sampler<'_>) = match slice {
            Slice::Yz { ix } => (s.nz, s.ny, Box::new(move |c, r| self.get(ix.min(s.nx - 1), r, c))),
            Slice::Xy { iz } => (s.nx, s.ny, Box::new(move |c, r| self.get(c, r, iz.min(s.nz - 1)))),
        };
        let cell = 12usize;
        let mut peak = 0.0_f64;
        for r in 0..rows {
            for c in 0..cols {
                peak = peak.max(sample(c, r).abs());
            }
        }
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
            cols * cell,
            rows * cell,
            cols * cell,
            rows * cell
        );
        for r in 0..rows {
            for c in 0..cols {
                let t = if peak > 0.0 { sample(c, r) / peak } else { 0.0 };
                let _ = writeln!(
                    svg,
                    r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="{}"/>"#,
                    c * cell,
                    (rows - 1 - r) * cell,
                    diverging_colour(t)
                );
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

type Sampler<'a> = Box<dyn Fn(usize, usize) -> f64 + 'a>;

/// Slice selector for [`ScalarField::svg_slice`].
#[derive(Debug, Clone, Copy)]
pub enum Slice {
    /// Cross-section at depth index `ix`.
    Yz { ix: usize },
    /// Depth profile at transverse index `iz`.
    Xy { iz: usize },
}

fn diverging_colour(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}
