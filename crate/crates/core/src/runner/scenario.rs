//! Scenario files: one TOML document per experiment. Unknown keys are errors.

use std::path::Path;

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::admittance::ControlGains;
use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::material::{burgers_coeffs, ViscoParams};
use crate::oracle::EigenMode;
use crate::plant::{ForceComponent, ForceProgram};

/// Depth `delta` along x; the contact face is `ly × lz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub delta: f64,
    pub ly: f64,
    pub lz: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { nx: 17, ny: 9, nz: 9, delta: 1.0, ly: 8.0, lz: 8.0 }
    }
}

/// Material given either as a Burgers element plus diffusion, or directly
/// as PDE coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaterialConfig {
    Burgers(BurgersMaterial),
    Direct(DirectMaterial),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurgersMaterial {
    pub k1: f64,
    pub k2: f64,
    pub b: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectMaterial {
    pub eps: f64,
    pub a1: f64,
    pub a2: f64,
    pub lambda: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        MaterialConfig::Burgers(BurgersMaterial { k1: 2.0, k2: 2.0, b: 1.0, eps: 1.0 })
    }
}

impl MaterialConfig {
    pub fn params(&self) -> Result<ViscoParams> {
        let p = match self {
            MaterialConfig::Burgers(m) => burgers_coeffs(m.k1, m.k2, m.b)
                .and_then(|c| c.pde_params(m.eps))
                .map_err(|e| Error::config("material", e.to_string()))?,
            MaterialConfig::Direct(m) => ViscoParams { eps: m.eps, a1: m.a1, a2: m.a2, lambda: m.lambda },
        };
        p.validate().map_err(|e| Error::config("material", e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    /// Simulated time, s.
    pub duration: f64,
    /// Fraction of the explicit stability bound used as the step.
    pub cfl_factor: f64,
    /// Steps between logged rows.
    pub decimation: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { duration: 1.0, cfl_factor: 0.9, decimation: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    /// Length of the recorded history, s.
    pub duration: f64,
    /// Force applied while recording the history.
    pub components: Vec<ForceComponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentificationConfig {
    pub probes: Vec<[usize; 3]>,
    /// Diagonal of the adaptation gain.
    pub gain: [f64; 4],
    pub l_prime: f64,
    pub theta0: [f64; 4],
    pub replay_capacity: usize,
    pub replay: Option<ReplayConfig>,
    pub noise_sigma: f64,
    pub pe_tau: f64,
    pub pe_block: f64,
    pub pe_threshold: f64,
    /// Relative parameter error threshold; defaults to 0.01, or 0.05 with noise.
    pub error_threshold: Option<f64>,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        let mut probes = Vec::new();
        for ix in [4, 12] {
            for iy in [2, 6] {
                for iz in [2, 6] {
                    probes.push([ix, iy, iz]);
                }
            }
        }
        IdentificationConfig {
            probes,
            gain: [10.0, 10.0, 10.0, 3000.0],
            l_prime: 1.0,
            theta0: [0.0; 4],
            replay_capacity: 16,
            replay: None,
            noise_sigma: 0.0,
            pe_tau: 2.0,
            pe_block: 0.1,
            pe_threshold: 1e-4,
            error_threshold: None,
        }
    }
}

impl IdentificationConfig {
    pub fn effective_error_threshold(&self) -> f64 {
        self.error_threshold
            .unwrap_or(if self.noise_sigma > 0.0 { 0.05 } else { 0.01 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Target resultant force, N.
    pub target_force: f64,
    /// Contact patch on the actuated face, `[min, max]` in y and z, mm.
    pub patch_y: [f64; 2],
    pub patch_z: [f64; 2],
    /// Inner-loop boundary control on or off.
    pub boundary_control: bool,
    /// Taxel spacing on the contact face, mm.
    pub taxel_pitch: f64,
    /// Taxels count as active above this fraction of the peak reference deformation.
    pub active_fraction: f64,
    /// Relative force tracking error threshold.
    pub fte_threshold: f64,
    /// Times at which force tracking is reported, s.
    pub report_times: Vec<f64>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            lambda1: 14.0,
            lambda2: 0.5,
            target_force: 1.0,
            patch_y: [2.0, 6.0],
            patch_z: [2.0, 6.0],
            boundary_control: true,
            taxel_pitch: 2.0,
            active_fraction: 0.05,
            fte_threshold: 0.05,
            report_times: vec![5.0, 9.0, 13.0, 17.0],
        }
    }
}

impl ControlConfig {
    /// The load patch must lie on the contact face.
    pub fn check_patch(&self, spec: &GridSpec) -> Result<()> {
        for (name, r, extent) in [("control.patch_y", self.patch_y, spec.ly), ("control.patch_z", self.patch_z, spec.lz)] {
            if !(0.0 <= r[0] && r[0] < r[1] && r[1] <= extent) {
                return Err(Error::config(name, format!("must be an increasing range inside [0, {extent}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Initial condition as `[n, m, p, coefficient]` rows.
    pub modes: Vec<[f64; 4]>,
    pub tolerance: f64,
    /// Also run on the grid with halved spacing and report the error ratio.
    pub refine: bool,
    pub min_refinement_ratio: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            modes: vec![[1.0, 1.0, 1.0, 1.0], [2.0, 1.0, 1.0, 0.5], [1.0, 2.0, 3.0, 0.25]],
            tolerance: 1e-2,
            refine: false,
            min_refinement_ratio: 3.0,
        }
    }
}

impl OracleConfig {
    pub fn eigen_modes(&self) -> Result<Vec<EigenMode>> {
        self.modes
            .iter()
            .map(|row| {
                let idx = |v: f64, name: &str| -> Result<usize> {
                    if v >= 1.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::config(format!("oracle.modes.{name}"), format!("must be a positive integer, got {v}")))
                    }
                };
                Ok(EigenMode::new(idx(row[0], "n")?, idx(row[1], "m")?, idx(row[2], "p")?, row[3]))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub force: ForceProgram,
    #[serde(default)]
    pub identification: IdentificationConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::from_toml(&text)?, text))
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let g = &self.grid;
        GridSpec::new(g.nx, g.ny, g.nz, g.delta, g.ly, g.lz).map_err(|e| Error::config("grid", e.to_string()))
    }

    pub fn params(&self) -> Result<ViscoParams> {
        self.material.params()
    }

    pub fn gains(&self) -> Result<ControlGains> {
        let p = self.params()?;
        Ok(ControlGains::new(self.control.lambda1, self.control.lambda2, &p))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        let spec = self.grid_spec()?;
        self.params()?;
        let t = &self.time;
        if !(t.duration > 0.0) || !t.duration.is_finite() {
            return Err(Error::config("time.duration", format!("must be positive, got {}", t.duration)));
        }
        if !(t.cfl_factor > 0.0 && t.cfl_factor <= 1.0) {
            return Err(Error::config("time.cfl_factor", format!("must lie in (0, 1], got {}", t.cfl_factor)));
        }
        if t.decimation == 0 {
            return Err(Error::config("time.decimation", "must be at least 1"));
        }
        for (i, c) in self.force.components.iter().enumerate() {
            for (axis, r) in [("x", c.region.x), ("y", c.region.y), ("z", c.region.z)] {
                if !(r[0] <= r[1]) {
                    return Err(Error::config(format!("force.components[{i}].region.{axis}"), "min exceeds max"));
                }
            }
        }

        let id = &self.identification;
        for (i, p) in id.probes.iter().enumerate() {
            if p[0] >= spec.nx || p[1] >= spec.ny || p[2] >= spec.nz {
                return Err(Error::config(format!("identification.probes[{i}]"), format!("{p:?} lies outside the grid")));
            }
        }
        if id.gain.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::config("identification.gain", "every entry must be positive"));
        }
        if !(id.l_prime > 0.0) {
            return Err(Error::config("identification.l_prime", "must be positive"));
        }
        if !(id.noise_sigma >= 0.0) {
            return Err(Error::config("identification.noise_sigma", "must be non-negative"));
        }
        if !(id.pe_block > 0.0 && id.pe_block <= id.pe_tau) {
            return Err(Error::config("identification.pe_block", "need 0 < pe_block <= pe_tau"));
        }
        if let Some(r) = &id.replay {
            if !(r.duration > 0.0) {
                return Err(Error::config("identification.replay.duration", "must be positive"));
            }
        }

        let c = &self.control;
        if !(c.target_force >= 0.0) {
            return Err(Error::config("control.target_force", "must be non-negative"));
        }
        if !(c.taxel_pitch > 0.0) {
            return Err(Error::config("control.taxel_pitch", "must be positive"));
        }
        if !(c.active_fraction > 0.0 && c.active_fraction < 1.0) {
            return Err(Error::config("control.active_fraction", "must lie in (0, 1)"));
        }
        for (name, r) in [("control.patch_y", c.patch_y), ("control.patch_z", c.patch_z)] {
            if !(0.0 <= r[0] && r[0] < r[1]) {
                return Err(Error::config(name, "must be an increasing, non-negative range"));
            }
        }
        self.oracle.eigen_modes()?;
        Ok(())
    }

    /// Identification settings resolved into estimator inputs.
    pub fn gain_vector(&self) -> Vector4<f64> {
        Vector4::from(self.identification.gain)
    }
}
