//! Outer admittance loop plus inner boundary control on the error field
//! `e = φ − φ_d`, where `φ_d` is the plant's steady response to the target
//! force `f_d`.
//!
//! Each step: the boundary datum is computed from `e`; `e` advances under
//! the closed-loop error PDE; the force error `f_e` is the material reaction
//! that realises that motion in the plant; the admittance filter, driven by
//! `(f_e, ḟ_e)`, returns the updated reference, which is checked against the
//! error step and becomes the next `e`.

use std::io::Write;

use crate::admittance::{
    admittance_update, error_pde_coeffs, passivity_check, ControlGains, ErrorPdeCoeffs, PassivityVerdict,
};
use crate::backstepping::{consistent_boundary, KernelTable};
use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField, Slice};
use crate::material::ViscoParams;
use crate::metrics::{
    composite_deformation_error, convex_hull_area, force_tracking_error, write_metrics_csv, CdeWeights, MetricsRow,
    TaxelFrame, TaxelPoint,
};
use crate::plant::{check_cfl, steady_state, step_count, ForceProgram, ForceComponent, Region, Waveform};

use super::scenario::{ControlConfig, Scenario};
use super::{csv_artifact, log_slope, Artifact, Check, RunOutput, RunReport};

/// Square taxel array over the contact face.
#[derive(Debug, Clone, PartialEq)]
pub struct TaxelLayout {
    pub centres: Vec<(f64, f64)>,
    pub cell_area: f64,
}

impl TaxelLayout {
    /// Taxel centres at `pitch/2 + k·pitch` that fit inside the face.
    pub fn new(spec: &GridSpec, pitch: f64) -> Self {
        let axis = |extent: f64| -> Vec<f64> {
            let mut v = Vec::new();
            let mut c = 0.5 * pitch;
            while c < extent - 1e-12 {
                v.push(c);
                c += pitch;
            }
            v
        };
        let ys = axis(spec.ly);
        let zs = axis(spec.lz);
        let mut centres = Vec::with_capacity(ys.len() * zs.len());
        for &y in &ys {
            for &z in &zs {
                centres.push((y, z));
            }
        }
        TaxelLayout { centres, cell_area: pitch * pitch }
    }

    /// Layer values at the taxel centres, from the contact layer of `field`.
    pub fn sample(&self, field: &ScalarField) -> Vec<f64> {
        let ix = field.spec().nx - 1;
        self.centres.iter().map(|&(y, z)| field.layer_value_at(ix, y, z)).collect()
    }

    pub fn frame(&self, t: f64, force_density: &ScalarField) -> TaxelFrame {
        TaxelFrame {
            t,
            points: self
                .centres
                .iter()
                .zip(self.sample(force_density))
                .map(|(&(y, z), p)| TaxelPoint { y, z, force: p * self.cell_area })
                .collect(),
        }
    }
}

pub struct DualLoopSim {
    pub spec: GridSpec,
    pub params: ViscoParams,
    pub gains: ControlGains,
    pub coeffs: ErrorPdeCoeffs,
    pub kernel: Option<KernelTable>,
    pub f_d: ScalarField,
    pub phi_d: ScalarField,
    pub e: ScalarField,
    pub f_e: ScalarField,
    pub t: f64,
    pub dt: f64,
    /// Largest gap between the admittance output and the error step,
    /// relative to the initial error.
    pub admittance_residual: f64,
    residual_scale: f64,
}

impl DualLoopSim {
    pub fn new(spec: GridSpec, params: ViscoParams, ctrl: &ControlConfig, cfl_factor: f64) -> Result<Self> {
        ctrl.check_patch(&spec)?;
        let gains = ControlGains::new(ctrl.lambda1, ctrl.lambda2, &params);
        gains.validate()?;
        if params.a1 == 0.0 && params.a2 == 0.0 {
            return Err(Error::invalid("material", "a1 and a2 cannot both be zero in a force loop"));
        }
        let coeffs = error_pde_coeffs(&params, &gains)?;
        let kernel = if ctrl.boundary_control {
            Some(KernelTable::new(coeffs.c, spec.delta, spec.nx)?)
        } else {
            None
        };
        let area = (ctrl.patch_y[1] - ctrl.patch_y[0]) * (ctrl.patch_z[1] - ctrl.patch_z[0]);
        // Target pressure on the contact layer only.
        let layer_x = spec.x(spec.nx - 1);
        let target = ForceProgram::new(vec![ForceComponent {
            region: Region { x: [layer_x, layer_x], y: ctrl.patch_y, z: ctrl.patch_z },
            waveform: Waveform::Constant { amplitude: ctrl.target_force / area },
        }]);
        let f_d = target.evaluate(&spec, 0.0).f;
        let phi_d = steady_state(&f_d, &params, 1e-13)?;
        let dt = cfl_factor * spec.cfl_bound(coeffs.eps_star.max(params.eps));
        let residual_scale = if phi_d.max_abs() > 0.0 { phi_d.max_abs() } else { 1.0 };
        Ok(DualLoopSim {
            spec,
            params,
            gains,
            coeffs,
            kernel,
            e: phi_d.scaled(-1.0),
            f_e: f_d.scaled(-1.0),
            f_d,
            phi_d,
            t: 0.0,
            dt,
            admittance_residual: 0.0,
            residual_scale,
        })
    }

    pub fn from_scenario(s: &Scenario) -> Result<Self> {
        Self::new(s.grid_spec()?, s.params()?, &s.control, s.time.cfl_factor)
    }

    pub fn phi(&self) -> ScalarField {
        self.phi_d.add(&self.e).expect("same grid")
    }

    pub fn force(&self) -> ScalarField {
        self.f_d.add(&self.f_e).expect("same grid")
    }

    fn impose_boundary(&self, e: &mut ScalarField) -> Result<()> {
        match &self.kernel {
            Some(k) => e.set_actuated_face(&consistent_boundary(e, k)?),
            None => {
                e.clear_actuated_face();
                Ok(())
            }
        }
    }

    pub fn step(&mut self) -> Result<()> {
        check_cfl(&self.spec, self.coeffs.eps_star, self.dt)?;
        let dt = self.dt;
        let p = self.params;
        let c = self.coeffs;
        let mut e = self.e.clone();
        self.impose_boundary(&mut e)?;
        let lap = e.laplacian();

        let mut e_next = e.clone();
        for ((v, l), old) in e_next.values_mut().iter_mut().zip(lap.values()).zip(e.values()) {
            *v = old + dt * (c.eps_star * l + c.lambda_star * old);
        }
        self.impose_boundary(&mut e_next)?;

        // Force the plant needs: a1·f_e + a2·ḟ_e = ė − ε·Δe − λ·e.
        let drive = ScalarField::from_values(
            self.spec,
            e.values()
                .iter()
                .zip(e_next.values())
                .zip(lap.values())
                .map(|((old, new), l)| (new - old) / dt - p.eps * l - p.lambda * old)
                .collect(),
        )?;
        let (f_e, f_e_dot, f_e_next) = if p.a2 != 0.0 {
            let f_e_dot = drive.zip_map(&self.f_e, |g, f| (g - p.a1 * f) / p.a2)?;
            let mut next = self.f_e.clone();
            next.axpy(dt, &f_e_dot)?;
            (self.f_e.clone(), f_e_dot, next)
        } else {
            let f_e = drive.scaled(1.0 / p.a1);
            (f_e.clone(), ScalarField::zeros(self.spec), f_e)
        };

        let mut reference = admittance_update(&e, &f_e, &f_e_dot, &self.gains, dt)?;
        let scale = self.residual_scale;
        let mismatch = reference
            .values()
            .iter()
            .zip(e_next.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / scale;
        self.admittance_residual = self.admittance_residual.max(mismatch);
        self.impose_boundary(&mut reference)?;

        self.e = reference;
        self.f_e = f_e_next;
        self.t += dt;
        Ok(())
    }
}

struct DualLoopRow {
    t: f64,
    l2: f64,
    linf: f64,
    resultant: f64,
    residual: f64,
}

fn write_dual_csv<W: Write>(rows: &[DualLoopRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "l2_phi_e", "linf_phi_e", "resultant_force", "admittance_residual"])?;
    for r in rows {
        w.write_record(&[
            r.t.to_string(),
            r.l2.to_string(),
            r.linf.to_string(),
            r.resultant.to_string(),
            r.residual.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Force tracking and deformation metrics at the current state.
fn evaluate(sim: &DualLoopSim, taxels: &TaxelLayout, ctrl: &ControlConfig) -> Result<(f64, MetricsRow)> {
    let frame = taxels.frame(sim.t, &sim.force());
    let fte = force_tracking_error(&frame, ctrl.target_force)?;
    let resultant = frame.resultant();

    let depth_ref = taxels.sample(&sim.phi_d);
    let depth_act = taxels.sample(&sim.phi());
    let peak = depth_ref.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let threshold = ctrl.active_fraction * peak;
    let mut ref_pts = Vec::new();
    let mut act_pts = Vec::new();
    let mut ref_active = Vec::new();
    let mut act_active = Vec::new();
    for (i, &(y, z)) in taxels.centres.iter().enumerate() {
        if peak > 0.0 && depth_ref[i].abs() >= threshold {
            ref_pts.push([y, z, depth_ref[i]]);
            act_pts.push([y, z, depth_act[i]]);
            ref_active.push((y, z));
        }
        if peak > 0.0 && depth_act[i].abs() >= threshold {
            act_active.push((y, z));
        }
    }
    let cde = composite_deformation_error(
        &ref_pts,
        &act_pts,
        convex_hull_area(&ref_active),
        convex_hull_area(&act_active),
        &CdeWeights::default(),
    )?;
    Ok((
        resultant,
        MetricsRow { t: sim.t, fte, eps_dist: cde.eps_dist, eps_area: cde.eps_area, eps_total: cde.total },
    ))
}

/// Runs the dual loop. Gains failing the passivity test are refused unless
/// `force` is set.
pub fn run_dual_loop(scenario: &Scenario, force: bool, svg: bool) -> Result<RunOutput> {
    let ctrl = &scenario.control;
    let gains = scenario.gains()?;
    let verdict: PassivityVerdict = passivity_check(&gains);
    if !verdict.passive && !force {
        return Err(Error::NotPassive(format!(
            "gains {gains:?} give margin {:e} at omega {:e}",
            verdict.margin, verdict.worst_omega
        )));
    }
    let mut sim = DualLoopSim::from_scenario(scenario)?;
    let taxels = TaxelLayout::new(&sim.spec, ctrl.taxel_pitch);
    let n = step_count(scenario.time.duration, sim.dt);
    let dec = scenario.time.decimation;

    let mut dual_rows = Vec::new();
    let mut metric_rows = Vec::new();
    let mut norms = Vec::new();
    let mut log = |sim: &DualLoopSim| -> Result<()> {
        let (resultant, row) = evaluate(sim, &taxels, ctrl)?;
        let en = sim.e.norms();
        norms.push((sim.t, en.l2));
        dual_rows.push(DualLoopRow { t: sim.t, l2: en.l2, linf: en.linf, resultant, residual: sim.admittance_residual });
        metric_rows.push(row);
        Ok(())
    };
    log(&sim)?;
    let mut report_times: Vec<f64> = ctrl.report_times.iter().copied().filter(|t| *t <= scenario.time.duration + 1e-9).collect();
    report_times.sort_by(f64::total_cmp);
    let mut fte_at = Vec::new();
    let mut next_report = 0;
    for k in 1..=n {
        sim.step()?;
        if k % dec == 0 || k == n {
            log(&sim)?;
        }
        while next_report < report_times.len() && sim.t >= report_times[next_report] - 0.5 * sim.dt {
            let (_, row) = evaluate(&sim, &taxels, ctrl)?;
            fte_at.push((report_times[next_report], row.fte));
            next_report += 1;
        }
    }

    let target = ctrl.target_force;
    let rel = |fte: f64| if target > 0.0 { fte / target } else { fte };
    let mut report = RunReport::new(&scenario.name, "dual-loop");
    report.set("passivity_margin", verdict.margin);
    report.set("eps_star", sim.coeffs.eps_star);
    report.set("lambda_star", sim.coeffs.lambda_star);
    report.set("c", sim.coeffs.c);
    report.set("dt", sim.dt);
    report.set("admittance_residual_max", sim.admittance_residual);
    for (t, fte) in &fte_at {
        report.set(&format!("fte_rel_at_{t}"), rel(*fte));
    }
    let last = *metric_rows.last().expect("at least the initial row");
    report.set("fte_final", last.fte);
    report.set("fte_rel_final", rel(last.fte));
    report.set("eps_total_final", last.eps_total);
    let e0 = norms.first().map(|v| v.1).unwrap_or(0.0);
    let e_end = norms.last().map(|v| v.1).unwrap_or(0.0);
    report.set("l2_phi_e_initial", e0);
    report.set("l2_phi_e_final", e_end);
    let slope = log_slope(&norms, 0.5 * scenario.time.duration);
    report.set("phi_e_log_slope", slope);
    if !verdict.passive {
        report.flag("passivity override");
    }
    if !sim.e.is_finite() || e_end > e0 && e0 > 0.0 || slope > 0.0 {
        report.flag("unstable");
    }
    let settled = fte_at.last().map(|v| v.1).unwrap_or(last.fte);
    report.checks.push(Check::below("fte_rel", rel(settled), ctrl.fte_threshold));
    report.checks.push(Check::at_least("stable", if report.has_flag("unstable") { 0.0 } else { 1.0 }, 1.0));

    let mut artifacts = vec![
        csv_artifact("dual_loop.csv", |w| write_dual_csv(&dual_rows, w))?,
        csv_artifact("metrics.csv", |w| write_metrics_csv(&metric_rows, w))?,
    ];
    if svg {
        artifacts.push(Artifact {
            file_name: "phi_contact_layer.svg".into(),
            bytes: sim.phi().svg_slice(Slice::Yz { ix: sim.spec.nx - 1 }).into_bytes(),
        });
    }
    Ok(RunOutput { report, artifacts })
}
