use std::io::Write;

use crate::admittance::ErrorPdeCoeffs;
use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField, Slice};
use crate::material::ViscoParams;
use crate::oracle::{box_series_solution, slowest_rate, EigenMode};
use crate::plant::{self, step_count, ForceInput, PlantState};

use super::scenario::Scenario;
use super::{csv_artifact, log_slope, Artifact, Check, RunOutput, RunReport};

struct OracleRow {
    t: f64,
    l2_numeric: f64,
    l2_oracle: f64,
    rel_error: f64,
}

struct OracleRun {
    rows: Vec<OracleRow>,
    max_rel_error: f64,
    dt: f64,
    last: ScalarField,
}

fn relative_l2(num: &ScalarField, exact: &ScalarField) -> Result<f64> {
    let diff = num.sub(exact)?.norms().l2;
    let scale = exact.norms().l2;
    Ok(if scale > 0.0 {
        diff / scale
    } else {
        diff
    })
}

fn run_on(
    spec: GridSpec,
    params: &ViscoParams,
    modes: &[EigenMode],
    duration: f64,
    cfl_factor: f64,
    decimation: usize,
) -> Result<OracleRun> {
    let coeffs = ErrorPdeCoeffs { eps_star: params.eps, lambda_star: params.lambda, c: params.lambda / params.eps };
    let dt = cfl_factor * spec.cfl_bound(params.eps);
    let mut state = PlantState::with_phi(box_series_solution(modes, &coeffs, &spec, 0.0));
    let input = ForceInput::zeros(spec);
    let n = step_count(duration, dt);
    let mut rows = Vec::new();
    let mut max_rel_error = 0.0_f64;
    let mut record = |state: &PlantState| -> Result<()> {
        let exact = box_series_solution(modes, &coeffs, &spec, state.t);
        let rel_error = relative_l2(&state.phi, &exact)?;
        max_rel_error = max_rel_error.max(rel_error);
        rows.push(OracleRow { t: state.t, l2_numeric: state.phi.norms().l2, l2_oracle: exact.norms().l2, rel_error });
        Ok(())
    };
    record(&state)?;
    for k in 1..=n {
        state = plant::step(&state, &input, params, dt)?;
        if k % decimation == 0 || k == n {
            record(&state)?;
        }
    }
    Ok(OracleRun { rows, max_rel_error, dt, last: state.phi })
}

fn write_oracle_csv<W: Write>(rows: &[OracleRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "l2_numeric", "l2_oracle", "rel_error"])?;
    for r in rows {
        w.write_record(&[
            r.t.to_string(),
            r.l2_numeric.to_string(),
            r.l2_oracle.to_string(),
            r.rel_error.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Unforced plant against the separation-of-variables series. The material
/// must have `a1 = a2 = 0`.
pub fn run_oracle_check(scenario: &Scenario, svg: bool) -> Result<RunOutput> {
    let params = scenario.params()?;
    if params.a1 != 0.0 || params.a2 != 0.0 {
        return Err(Error::config("material", "oracle check needs a1 = a2 = 0"));
    }
    let spec = scenario.grid_spec()?;
    let modes = scenario.oracle.eigen_modes()?;
    let t = &scenario.time;
    let coarse = run_on(spec, &params, &modes, t.duration, t.cfl_factor, t.decimation)?;

    let mut report = RunReport::new(&scenario.name, "oracle-check");
    report.set("max_rel_error", coarse.max_rel_error);
    report.set("dt", coarse.dt);
    report.checks.push(Check::below("max_rel_error", coarse.max_rel_error, scenario.oracle.tolerance));

    let samples: Vec<(f64, f64)> = coarse.rows.iter().map(|r| (r.t, r.l2_numeric)).collect();
    let slope = log_slope(&samples, 0.0);
    let coeffs = ErrorPdeCoeffs { eps_star: params.eps, lambda_star: params.lambda, c: params.lambda / params.eps };
    let expected = slowest_rate(&coeffs, &spec);
    report.set("log_slope", slope);
    report.set("slowest_rate", expected);
    if let [m] = modes.as_slice() {
        if (m.n, m.m, m.p) == (1, 1, 1) && m.coefficient != 0.0 {
            let rel = ((slope - expected) / expected).abs();
            report.set("log_slope_rel_error", rel);
            report.checks.push(Check::below("log_slope_rel_error", rel, 0.02));
        }
    }

    if scenario.oracle.refine {
        let fine = run_on(spec.refined(), &params, &modes, t.duration, t.cfl_factor, t.decimation)?;
        let ratio = if fine.max_rel_error > 0.0 {
            coarse.max_rel_error / fine.max_rel_error
        } else {
            f64::INFINITY
        };
        report.set("max_rel_error_refined", fine.max_rel_error);
        report.set("refinement_ratio", ratio);
        if coarse.max_rel_error > 0.0 {
            report.checks.push(Check::at_least("refinement_ratio", ratio, scenario.oracle.min_refinement_ratio));
        }
    }

    let mut artifacts = vec![csv_artifact("oracle.csv", |w| write_oracle_csv(&coarse.rows, w))?];
    if svg {
        artifacts.push(Artifact {
            file_name: "phi_final.svg".into(),
            bytes: coarse.last.svg_slice(Slice::Xy { iz: spec.nz / 2 }).into_bytes(),
        });
    }
    Ok(RunOutput { report, artifacts })
}
