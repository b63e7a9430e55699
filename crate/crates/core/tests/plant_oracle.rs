use std::f64::consts::PI;

use proptest::prelude::*;

use visco_core::admittance::ErrorPdeCoeffs;
use visco_core::material::pde_params;
use visco_core::oracle::{box_series_solution, project_initial, EigenMode};
use visco_core::plant::{self, steady_state, step_count, ForceInput, PlantState};
use visco_core::runner::log_slope;
use visco_core::{GridSpec, ScalarField, ViscoParams};

fn reaction_diffusion(eps: f64, lambda: f64) -> ViscoParams {
    ViscoParams { eps, a1: 0.0, a2: 0.0, lambda }
}

fn decay_samples(spec: GridSpec, params: &ViscoParams, t_end: f64) -> Vec<(f64, f64)> {
    let mut state = PlantState::with_phi(ScalarField::from_fn(spec, |x, _, _| (PI * x).sin()));
    let input = ForceInput::zeros(spec);
    let dt = 0.5 * spec.cfl_bound(params.eps);
    let mut samples = vec![(0.0, state.phi.norms().l2)];
    for _ in 0..step_count(t_end, dt) {
        state = plant::step(&state, &input, params, dt).unwrap();
        samples.push((state.t, state.phi.norms().l2));
    }
    samples
}

#[test]
fn line_heat_decay_matches_fundamental_rate() {
    let spec = GridSpec::line(63, 1.0).unwrap();
    let s = decay_samples(spec, &reaction_diffusion(1.0, 0.0), 0.3);
    let window: Vec<_> = s.into_iter().filter(|p| p.0 <= 0.3).collect();
    let slope = log_slope(&window, 0.05);
    assert!(((slope + PI * PI) / (PI * PI)).abs() < 0.02, "{slope}");
}

#[test]
fn strong_reaction_grows() {
    let spec = GridSpec::line(31, 1.0).unwrap();
    let s = decay_samples(spec, &reaction_diffusion(1.0, 15.0), 0.3);
    assert!(log_slope(&s, 0.05) > 0.0);
}

#[test]
fn plant_tracks_series_for_projected_initial_state() {
    let spec = GridSpec::new(15, 11, 11, 1.0, 1.5, 1.5).unwrap();
    let modes = vec![EigenMode::new(1, 1, 1, 1.0), EigenMode::new(3, 2, 1, -0.4)];
    let coeffs = ErrorPdeCoeffs { eps_star: 0.5, lambda_star: 1.0, c: 2.0 };
    let phi0 = box_series_solution(&modes, &coeffs, &spec, 0.0);
    let recovered = project_initial(&phi0, 4);
    let main = recovered.iter().find(|m| (m.n, m.m, m.p) == (1, 1, 1)).unwrap();
    assert!((main.coefficient - 1.0).abs() < 1e-10);

    let params = reaction_diffusion(0.5, 1.0);
    let dt = 0.25 * spec.cfl_bound(params.eps);
    let mut state = PlantState::with_phi(phi0);
    let input = ForceInput::zeros(spec);
    for _ in 0..step_count(0.2, dt) {
        state = plant::step(&state, &input, &params, dt).unwrap();
    }
    let exact = box_series_solution(&modes, &coeffs, &spec, state.t);
    let rel = state.phi.sub(&exact).unwrap().norms().l2 / exact.norms().l2;
    assert!(rel < 2e-2, "{rel}");
}

#[test]
fn steady_state_is_a_fixed_point() {
    let spec = GridSpec::new(9, 7, 7, 1.0, 2.0, 2.0).unwrap();
    let params = pde_params(1.0, 0.5, 0.25, 1.0).unwrap();
    let f = ScalarField::from_fn(spec, |x, y, _| if x > 0.5 && y < 1.0 { 1.0 } else { 0.0 });
    let phi = steady_state(&f, &params, 1e-12).unwrap();
    let input = ForceInput { f: f.clone(), f_dot: ScalarField::zeros(spec) };
    let next = plant::step(&PlantState::with_phi(phi.clone()), &input, &params, 1e-3).unwrap();
    assert!(next.phi.sub(&phi).unwrap().max_abs() < 1e-9 * phi.max_abs().max(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn series_mode_decays_at_its_rate(n in 1usize..4, m in 1usize..4, p in 1usize..4, eps in 0.1f64..2.0, lam in -3.0f64..3.0) {
        let spec = GridSpec::new(7, 7, 7, 1.0, 1.0, 1.0).unwrap();
        let coeffs = ErrorPdeCoeffs { eps_star: eps, lambda_star: lam, c: lam / eps };
        let mode = EigenMode::new(n, m, p, 1.0);
        let u0 = box_series_solution(&[mode], &coeffs, &spec, 0.0);
        let u1 = box_series_solution(&[mode], &coeffs, &spec, 0.1);
        let ratio = u1.dot(&u0) / u0.dot(&u0);
        prop_assert!((ratio.ln() / 0.1 - mode.rate(&spec, &coeffs)).abs() < 1e-9);
    }

    #[test]
    fn plant_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let spec = GridSpec::new(5, 4, 4, 1.0, 1.0, 1.0).unwrap();
        let params = pde_params(1.0, 0.5, 0.25, 1.0).unwrap();
        let dt = 0.5 * spec.cfl_bound(params.eps);
        let u = ScalarField::from_fn(spec, |x, y, z| x * y * z);
        let v = ScalarField::from_fn(spec, |x, _, z| (PI * x).sin() * z);
        let step = |phi: ScalarField| plant::step(&PlantState::with_phi(phi), &ForceInput::zeros(spec), &params, dt).unwrap().phi;
        let mut combo = u.scaled(a);
        combo.axpy(b, &v).unwrap();
        let mut expected = step(u).scaled(a);
        expected.axpy(b, &step(v)).unwrap();
        prop_assert!(step(combo).sub(&expected).unwrap().max_abs() < 1e-12);
    }
}
