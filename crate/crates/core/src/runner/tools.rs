use crate::admittance::{error_pde_coeffs, passivity_check, passivity_frequencies, transfer_function_eval};
use crate::backstepping::{kernel_pde_residual, KernelTable};
use crate::error::{Error, Result};

use super::scenario::Scenario;
use super::{csv_artifact, Check, RunOutput, RunReport};

const RESIDUAL_INTERVALS: usize = 256;

/// Boundary row of the gain kernel for the scenario's error PDE, plus a
/// finite-difference residual check.
pub fn run_kernel(scenario: &Scenario) -> Result<RunOutput> {
    let spec = scenario.grid_spec()?;
    let gains = scenario.gains()?;
    gains.validate()?;
    let coeffs = error_pde_coeffs(&scenario.params()?, &gains)?;
    let table = KernelTable::new(coeffs.c, spec.delta, spec.nx)?;
    let res = kernel_pde_residual(coeffs.c, spec.delta, RESIDUAL_INTERVALS)?;

    let mut report = RunReport::new(&scenario.name, "kernel");
    report.set("c", coeffs.c);
    report.set("interior_residual", res.interior);
    report.set("boundary_residual", res.boundary);
    report.set("diagonal_residual", res.diagonal);
    report.checks.push(Check::below("interior_residual", res.interior, 1e-3));
    report.checks.push(Check::below("diagonal_residual", res.diagonal, 1e-10));
    report.checks.push(Check::below("boundary_residual", res.boundary, f64::MIN_POSITIVE));
    let artifacts = vec![csv_artifact("kernel.csv", |w| table.write_boundary_csv(w))?];
    Ok(RunOutput { report, artifacts })
}

/// Samples `G(jω)` on the test grid and reports the passivity verdict.
pub fn run_passivity(scenario: &Scenario) -> Result<RunOutput> {
    let gains = scenario.gains()?;
    let verdict = passivity_check(&gains);
    let mut rows = Vec::new();
    for w in passivity_frequencies() {
        let g = transfer_function_eval(&gains, w)?;
        rows.push([w, g.re, g.im]);
    }
    let mut report = RunReport::new(&scenario.name, "passivity");
    report.set("margin", verdict.margin);
    report.set("worst_omega", verdict.worst_omega);
    report.checks.push(Check::at_least("passive", if verdict.passive { 1.0 } else { 0.0 }, 1.0));
    let artifacts = vec![csv_artifact("passivity.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["omega", "re", "im"])?;
        for r in &rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    })?];
    Ok(RunOutput { report, artifacts })
}
