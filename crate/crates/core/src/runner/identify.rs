use nalgebra::Vector4;

use crate::error::Result;
use crate::field::{GridSpec, Slice};
use crate::identification::{
    estimator_step, measure, pe_metric, replay_extend, write_ident_csv, EstimatorState, IdentRow, Measurement,
    MeasurementNoise, PeWindow, Track,
};
use crate::material::ViscoParams;
use crate::plant::{self, step_count, ForceProgram, PlantState, Trajectory, TrajectoryRecord};

use super::scenario::{IdentificationConfig, Scenario};
use super::{csv_artifact, Artifact, Check, RunOutput, RunReport};

/// True plant, measurement path and estimator advanced in lockstep.
pub struct IdentificationSim {
    pub spec: GridSpec,
    pub params: ViscoParams,
    pub program: ForceProgram,
    pub plant: PlantState,
    pub estimator: EstimatorState,
    pub probes: Vec<(usize, usize, usize)>,
    pub dt: f64,
    noise: MeasurementNoise,
}

impl IdentificationSim {
    pub fn new(
        spec: GridSpec,
        params: ViscoParams,
        program: ForceProgram,
        cfg: &IdentificationConfig,
        cfl_factor: f64,
        seed: u64,
    ) -> Result<Self> {
        let probes: Vec<_> = cfg.probes.iter().map(|p| (p[0], p[1], p[2])).collect();
        let plant = PlantState::at_rest(spec);
        let estimator = EstimatorState::new(
            Vector4::from(cfg.theta0),
            &probes,
            &plant.phi,
            Vector4::from(cfg.gain),
            cfg.l_prime,
            cfg.replay_capacity,
            PeWindow::new(cfg.pe_tau, cfg.pe_block)?,
        )?;
        Ok(IdentificationSim {
            spec,
            params,
            program,
            plant,
            estimator,
            probes,
            dt: cfl_factor * spec.cfl_bound(params.eps),
            noise: MeasurementNoise::new(cfg.noise_sigma, seed)?,
        })
    }

    pub fn from_scenario(s: &Scenario, seed: u64) -> Result<Self> {
        Self::new(s.grid_spec()?, s.params()?, s.force.clone(), &s.identification, s.time.cfl_factor, seed)
    }

    pub fn t(&self) -> f64 {
        self.plant.t
    }

    /// Advances plant and estimator by one step. Returns the measurements
    /// used and the observer error before the update.
    pub fn step(&mut self) -> Result<(Vec<Measurement>, f64)> {
        let input = self.program.evaluate(&self.spec, self.plant.t);
        let measured = self.noise.corrupt(&self.plant.phi);
        let meas = measure(&measured, &input, &self.probes);
        let err = self.estimator.observer_error_sup(&meas);
        estimator_step(&mut self.estimator, &meas, self.dt)?;
        self.plant = plant::step(&self.plant, &input, &self.params, self.dt)?;
        Ok((meas, err))
    }

    pub fn relative_error(&self) -> f64 {
        let truth = self.params.as_vector();
        (self.estimator.theta_hat - truth).norm() / truth.norm()
    }
}

/// Records one `(Ψ, φ)` track per probe from the plant started at rest and
/// driven by `program` for `duration`.
pub fn record_tracks(
    spec: GridSpec,
    params: &ViscoParams,
    program: &ForceProgram,
    probes: &[(usize, usize, usize)],
    duration: f64,
    dt: f64,
) -> Result<Vec<Track>> {
    let mut state = PlantState::at_rest(spec);
    let mut tracks: Vec<Track> = vec![Vec::new(); probes.len()];
    for _ in 0..step_count(duration, dt) {
        let input = program.evaluate(&spec, state.t);
        for (track, m) in tracks.iter_mut().zip(measure(&state.phi, &input, probes)) {
            track.push(m);
        }
        state = plant::step(&state, &input, params, dt)?;
    }
    Ok(tracks)
}

pub fn run_identify(scenario: &Scenario, seed: u64, svg: bool) -> Result<RunOutput> {
    let cfg = &scenario.identification;
    let mut sim = IdentificationSim::from_scenario(scenario, seed)?;
    if let Some(replay) = &cfg.replay {
        let history = ForceProgram::new(replay.components.clone());
        let tracks = record_tracks(sim.spec, &sim.params, &history, &sim.probes, replay.duration, sim.dt)?;
        replay_extend(&mut sim.estimator, tracks)?;
    }

    let n = step_count(scenario.time.duration, sim.dt);
    let dec = scenario.time.decimation;
    let mut rows = Vec::new();
    let mut traj = Trajectory::default();
    let mut pe_worst = f64::INFINITY;
    let mut last_err = 0.0;
    for k in 1..=n {
        let logged = k % dec == 0 || k == n;
        let input_f = logged.then(|| sim.program.evaluate(&sim.spec, sim.t()).f);
        let (_, err) = sim.step()?;
        last_err = err;
        let pe = pe_metric(&sim.estimator.pe).unwrap_or(0.0);
        if sim.t() >= cfg.pe_tau * (1.0 - 1e-9) {
            pe_worst = pe_worst.min(pe);
        }
        if let Some(f) = input_f {
            rows.push(IdentRow { t: sim.t(), theta_hat: sim.estimator.theta_hat, pe_min_eig: pe, obs_err_sup: err });
            traj.records.push(TrajectoryRecord { t: sim.t(), phi: sim.plant.phi.clone(), f });
        }
    }
    if !pe_worst.is_finite() {
        // Run shorter than one window: fall back to the partial window.
        pe_worst = pe_metric(&sim.estimator.pe).unwrap_or(0.0);
    }

    let th = sim.estimator.theta_hat;
    let rel = sim.relative_error();
    let mut report = RunReport::new(&scenario.name, "identify");
    for (i, key) in ["eps_hat", "a1_hat", "a2_hat", "lambda_hat"].iter().enumerate() {
        report.set(key, th[i]);
    }
    report.set("relative_error", rel);
    report.set("pe_min_eig_final", pe_metric(&sim.estimator.pe).unwrap_or(0.0));
    report.set("pe_min_eig_worst", pe_worst);
    report.set("obs_err_sup_final", last_err);
    report.set("dt", sim.dt);
    report.set("steps", n as f64);
    report.set("replayed_tracks", sim.estimator.replay.len() as f64);
    if pe_worst < cfg.pe_threshold {
        report.flag("PE not satisfied");
    }
    report.checks.push(Check::below("relative_error", rel, cfg.effective_error_threshold()));
    report.checks.push(Check::at_least("pe_min_eig", pe_worst, cfg.pe_threshold));

    let mut artifacts = vec![
        csv_artifact("identification.csv", |w| write_ident_csv(&rows, w))?,
        csv_artifact("trajectory.csv", |w| traj.write_csv(w))?,
    ];
    if svg {
        let mid = sim.spec.nz / 2;
        artifacts.push(Artifact {
            file_name: "phi_final.svg".into(),
            bytes: sim.plant.phi.svg_slice(Slice::Xy { iz: mid }).into_bytes(),
        });
    }
    Ok(RunOutput { report, artifacts })
}
