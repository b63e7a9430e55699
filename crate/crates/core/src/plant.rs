//! Explicit time stepping of `φ̇ = ε·Δφ + a₁·f + a₂·ḟ + λ·φ`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};
use crate::material::ViscoParams;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub t: f64,
    /// Deformation. Its actuated-face data is the plant's boundary value at `x = delta`.
    pub phi: ScalarField,
    /// Force applied during the previous step, kept for backward differencing.
    pub f_prev: ScalarField,
}

impl PlantState {
    pub fn at_rest(spec: GridSpec) -> Self {
        PlantState {
            t: 0.0,
            phi: ScalarField::zeros(spec),
            f_prev: ScalarField::zeros(spec),
        }
    }

    pub fn with_phi(phi: ScalarField) -> Self {
        let spec = *phi.spec();
        PlantState {
            t: 0.0,
            phi,
            f_prev: ScalarField::zeros(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceInput {
    pub f: ScalarField,
    pub f_dot: ScalarField,
}

impl ForceInput {
    pub fn zeros(spec: GridSpec) -> Self {
        ForceInput {
            f: ScalarField::zeros(spec),
            f_dot: ScalarField::zeros(spec),
        }
    }

    /// Builds the input from a sampled force with `ḟ ≈ (f − f_prev)/dt`.
    pub fn from_samples(f: ScalarField, f_prev: &ScalarField, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        let f_dot = f.zip_map(f_prev, |a, b| (a - b) / dt)?;
        Ok(ForceInput { f, f_dot })
    }
}

/// Checks `dt` against the explicit stability bound of the grid.
pub fn check_cfl(spec: &GridSpec, eps: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    let bound = spec.cfl_bound(eps);
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, bound });
    }
    Ok(())
}

/// Rate `ε·Δφ + a₁·f + a₂·ḟ + λ·φ` at interior points.
pub fn rhs(phi: &ScalarField, input: &ForceInput, params: &ViscoParams) -> ScalarField {
    let spec = *phi.spec();
    let f = input.f.values();
    let fd = input.f_dot.values();
    let mut out = ScalarField::zeros(spec);
    let vals = out.values_mut();
    for ix in 0..spec.nx {
        for iy in 0..spec.ny {
            for iz in 0..spec.nz {
                let i = spec.index(ix, iy, iz);
                vals[i] = params.eps * phi.laplacian_at(ix, iy, iz)
                    + params.a1 * f[i]
                    + params.a2 * fd[i]
                    + params.lambda * phi.values()[i];
            }
        }
    }
    out
}

/// One explicit Euler step. Boundary data on `phi` is carried over unchanged.
pub fn step(state: &PlantState, input: &ForceInput, params: &ViscoParams, dt: f64) -> Result<PlantState> {
    params.validate()?;
    let spec = *state.phi.spec();
    spec.ensure_same(input.f.spec())?;
    spec.ensure_same(input.f_dot.spec())?;
    check_cfl(&spec, params.eps, dt)?;
    let rate = rhs(&state.phi, input, params);
    let mut phi = state.phi.clone();
    for (v, r) in phi.values_mut().iter_mut().zip(rate.values()) {
        *v += dt * r;
    }
    Ok(PlantState {
        t: state.t + dt,
        phi,
        f_prev: input.f.clone(),
    })
}

/// Steady state of the plant under a constant force `f` with zero Dirichlet
/// data: solves `ε·Δφ + λ·φ = −a₁·f` by conjugate gradients. Requires the
/// operator `−ε·Δ − λ` to be positive definite on the grid.
pub fn steady_state(f: &ScalarField, params: &ViscoParams, tol: f64) -> Result<ScalarField> {
    params.validate()?;
    let spec = *f.spec();
    let apply = |u: &ScalarField| -> ScalarField {
        let lap = u.laplacian();
        lap.zip_map(u, |l, v| -params.eps * l - params.lambda * v)
            .expect("same grid")
    };
    let dot = |a: &ScalarField, b: &ScalarField| -> f64 { a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum() };
    let mut b = f.scaled(params.a1);
    b.clear_actuated_face();
    let b_norm = dot(&b, &b).sqrt();
    let mut x = ScalarField::zeros(spec);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..10 * spec.len() + 100 {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::invalid("lambda", "steady operator is not positive definite on this grid"));
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p)?;
        r.axpy(-alpha, &ap)?;
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol * b_norm {
            return Ok(x);
        }
        p = r.zip_map(&p, |ri, pi| ri + (rr_new / rr) * pi)?;
        rr = rr_new;
    }
    Err(Error::invalid("tol", "conjugate gradients did not converge"))
}

/// Axis-aligned box in domain coordinates, closed on all sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl Region {
    pub fn whole(spec: &GridSpec) -> Self {
        Region {
            x: [0.0, spec.delta],
            y: [0.0, spec.ly],
            z: [0.0, spec.lz],
        }
    }

    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let within = |v: f64, r: [f64; 2]| v >= r[0] - 1e-12 && v <= r[1] + 1e-12;
        within(x, self.x) && within(y, self.y) && within(z, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineTerm {
    pub amplitude: f64,
    pub omega: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Scalar time profiles with analytic derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Waveform {
    Constant { amplitude: f64 },
    /// Jump to `amplitude` at `t_on`; the derivative is taken as zero.
    Step { amplitude: f64, t_on: f64 },
    /// Linear rise from 0 at `t_start` to `amplitude` at `t_end`, then held.
    Ramp { amplitude: f64, t_start: f64, t_end: f64 },
    MultiSine {
        #[serde(default)]
        offset: f64,
        terms: Vec<SineTerm>,
    },
}

impl Waveform {
    pub fn value(&self, t: f64) -> (f64, f64) {
        match self {
            Waveform::Constant { amplitude } => (*amplitude, 0.0),
            Waveform::Step { amplitude, t_on } => {
                if t >= *t_on {
                    (*amplitude, 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Waveform::Ramp { amplitude, t_start, t_end } => {
                if t <= *t_start {
                    (0.0, 0.0)
                } else if t >= *t_end {
                    (*amplitude, 0.0)
                } else {
                    let span = t_end - t_start;
                    (amplitude * (t - t_start) / span, amplitude / span)
                }
            }
            Waveform::MultiSine { offset, terms } => terms.iter().fold((*offset, 0.0), |(f, fd), s| {
                let arg = s.omega * t + s.phase;
                (f + s.amplitude * arg.sin(), fd + s.amplitude * s.omega * arg.cos())
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceComponent {
    pub region: Region,
    pub waveform: Waveform,
}

/// Time-indexed source of force inputs.
pub trait ForceSchedule {
    fn input(&mut self, spec: &GridSpec, t: f64, dt: f64) -> Result<ForceInput>;
}

/// Sum of patch-supported waveforms; `ḟ` is analytic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceProgram {
    pub components: Vec<ForceComponent>,
}

impl ForceProgram {
    pub fn new(components: Vec<ForceComponent>) -> Self {
        ForceProgram { components }
    }

    pub fn evaluate(&self, spec: &GridSpec, t: f64) -> ForceInput {
        let mut input = ForceInput::zeros(*spec);
        for c in &self.components {
            let (a, ad) = c.waveform.value(t);
            if a == 0.0 && ad == 0.0 {
                continue;
            }
            for ix in 0..spec.nx {
                for iy in 0..spec.ny {
                    for iz in 0..spec.nz {
                        let inside = if spec.transverse {
                            c.region.contains(spec.x(ix), spec.y(iy), spec.z(iz))
                        } else {
                            c.region.x[0] - 1e-12 <= spec.x(ix) && spec.x(ix) <= c.region.x[1] + 1e-12
                        };
                        if inside {
                            let i = spec.index(ix, iy, iz);
                            input.f.values_mut()[i] += a;
                            input.f_dot.values_mut()[i] += ad;
                        }
                    }
                }
            }
        }
        input
    }
}

impl ForceSchedule for ForceProgram {
    fn input(&mut self, spec: &GridSpec, t: f64, _dt: f64) -> Result<ForceInput> {
        Ok(self.evaluate(spec, t))
    }
}

/// Force known only through samples; `ḟ` by backward difference against the
/// previous sample (zero on the first call).
pub struct SampledForce<F> {
    sampler: F,
    prev: Option<ScalarField>,
}

impl<F: FnMut(f64) -> ScalarField> SampledForce<F> {
    pub fn new(sampler: F) -> Self {
        SampledForce { sampler, prev: None }
    }
}

impl<F: FnMut(f64) -> ScalarField> ForceSchedule for SampledForce<F> {
    fn input(&mut self, spec: &GridSpec, t: f64, dt: f64) -> Result<ForceInput> {
        let f = (self.sampler)(t);
        spec.ensure_same(f.spec())?;
        let prev = self.prev.take().unwrap_or_else(|| f.clone());
        let input = ForceInput::from_samples(f, &prev, dt)?;
        self.prev = Some(input.f.clone());
        Ok(input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub phi: ScalarField,
    pub f: ScalarField,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
}

/// Net force over the contact layer (the interior layer next to `x = delta`).
pub fn resultant_force(f: &ScalarField) -> f64 {
    let s = f.spec();
    let ix = s.nx - 1;
    let mut sum = 0.0;
    for iy in 0..s.ny {
        for iz in 0..s.nz {
            sum += f.get(ix, iy, iz);
        }
    }
    sum * s.face_cell_area()
}

impl Trajectory {
    pub fn final_record(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    /// Summary log with columns `t, l2_phi, linf_phi, resultant_force`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "l2_phi", "linf_phi", "resultant_force"])?;
        for r in &self.records {
            let n = r.phi.norms();
            w.write_record(&[
                r.t.to_string(),
                n.l2.to_string(),
                n.linf.to_string(),
                resultant_force(&r.f).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Number of fixed steps of size `dt` needed to cover `span`.
pub fn step_count(span: f64, dt: f64) -> usize {
    ((span / dt) - 1e-9).ceil().max(0.0) as usize
}

/// Steps from `initial` until `t_end`, recording every `decimation`-th state.
pub fn run(
    initial: &PlantState,
    schedule: &mut dyn ForceSchedule,
    params: &ViscoParams,
    dt: f64,
    t_end: f64,
    decimation: usize,
) -> Result<(PlantState, Trajectory)> {
    if !(t_end > initial.t) {
        return Err(Error::invalid("t_end", format!("must exceed the initial time {}", initial.t)));
    }
    if decimation == 0 {
        return Err(Error::invalid("decimation", "must be at least 1"));
    }
    let spec = *initial.phi.spec();
    let n = step_count(t_end - initial.t, dt);
    let mut state = initial.clone();
    let mut traj = Trajectory::default();
    for k in 1..=n {
        let input = schedule.input(&spec, state.t, dt)?;
        state = step(&state, &input, params, dt)?;
        if k % decimation == 0 || k == n {
            traj.records.push(TrajectoryRecord {
                t: state.t,
                phi: state.phi.clone(),
                f: input.f,
            });
        }
    }
    Ok((state, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn heat() -> ViscoParams {
        ViscoParams { eps: 1.0, a1: 0.0, a2: 0.0, lambda: 0.0 }
    }

    #[test]
    fn zero_stays_zero() {
        let spec = GridSpec::new(5, 4, 3, 1.0, 1.0, 1.0).unwrap();
        let s = PlantState::at_rest(spec);
        let dt = 0.5 * spec.cfl_bound(1.0);
        let next = step(&s, &ForceInput::zeros(spec), &heat(), dt).unwrap();
        assert!(next.phi.values().iter().all(|v| *v == 0.0));
        assert_relative_eq!(next.t, dt);
    }

    #[test]
    fn cfl_violation_reports_bound() {
        let spec = GridSpec::new(5, 5, 5, 1.0, 1.0, 1.0).unwrap();
        let s = PlantState::at_rest(spec);
        let bound = spec.cfl_bound(1.0);
        match step(&s, &ForceInput::zeros(spec), &heat(), 1.1 * bound) {
            Err(Error::Cfl { bound: b, .. }) => assert_relative_eq!(b, bound),
            other => panic!("expected CFL error, got {other:?}"),
        }
    }

    #[test]
    fn single_step_run() {
        let spec = GridSpec::line(9, 1.0).unwrap();
        let s = PlantState::with_phi(ScalarField::from_fn(spec, |x, _, _| (PI * x).sin()));
        let dt = 0.5 * spec.cfl_bound(1.0);
        let (end, traj) = run(&s, &mut ForceProgram::default(), &heat(), dt, dt, 1).unwrap();
        assert_eq!(traj.records.len(), 1);
        assert_relative_eq!(end.t, dt);
    }

    #[test]
    fn steady_state_zeroes_the_rate() {
        let spec = GridSpec::new(9, 5, 5, 1.0, 2.0, 2.0).unwrap();
        let params = ViscoParams { eps: 1.0, a1: 2.0, a2: 0.5, lambda: -2.0 };
        let f = ScalarField::from_fn(spec, |x, y, _| if x > 0.6 && y < 1.2 { 1.5 } else { 0.0 });
        let phi = steady_state(&f, &params, 1e-13).unwrap();
        let input = ForceInput { f: f.clone(), f_dot: ScalarField::zeros(spec) };
        let rate = rhs(&phi, &input, &params);
        assert!(rate.max_abs() < 1e-10 * f.scaled(params.a1).max_abs());
        let unstable = ViscoParams { lambda: 200.0, ..params };
        assert!(steady_state(&f, &unstable, 1e-12).is_err());
    }

    #[test]
    fn waveforms_have_consistent_derivatives() {
        let w = Waveform::MultiSine {
            offset: 0.5,
            terms: vec![SineTerm { amplitude: 1.0, omega: 3.0, phase: 0.2 }, SineTerm { amplitude: 0.3, omega: 11.0, phase: 0.0 }],
        };
        let h = 1e-6;
        for t in [0.0, 0.7, 2.3] {
            let (_, d) = w.value(t);
            let fd = (w.value(t + h).0 - w.value(t - h).0) / (2.0 * h);
            assert_relative_eq!(d, fd, epsilon = 1e-6);
        }
        let r = Waveform::Ramp { amplitude: 2.0, t_start: 1.0, t_end: 3.0 };
        assert_eq!(r.value(0.5), (0.0, 0.0));
        assert_eq!(r.value(2.0), (1.0, 1.0));
        assert_eq!(r.value(4.0), (2.0, 0.0));
    }

    #[test]
    fn sampled_force_uses_backward_difference() {
        let spec = GridSpec::line(3, 1.0).unwrap();
        let mut sched = SampledForce::new(|t| ScalarField::from_fn(spec, |_, _, _| 2.0 * t));
        let first = sched.input(&spec, 0.0, 0.1).unwrap();
        assert!(first.f_dot.values().iter().all(|v| *v == 0.0));
        let second = sched.input(&spec, 0.1, 0.1).unwrap();
        for v in second.f_dot.values() {
            assert_relative_eq!(*v, 2.0, epsilon = 1e-12);
        }
    }
}
