//! Adaptive observer and parameter estimator for `θ = (ε, a₁, a₂, λ)`.
//!
//! Every channel is a scalar copy of the plant at one point:
//! `φ̇ = Ψᵀθ` with `Ψ = [Δφ, f, ḟ, φ]`. The filtered regressor obeys
//! `ψ̇ = −L'ψ + Ψ`, and the estimate moves along `θ̂̇ = K·Σ ψ·(φ − φ̂)`.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::plant::ForceInput;

/// One regressor sample: the raw regressor `Ψ` and the measured `φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub psi_raw: Vector4<f64>,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    /// Probe index `(ix, iy, iz)`; `None` for replayed channels.
    pub location: Option<(usize, usize, usize)>,
    pub psi: Vector4<f64>,
    pub phi_hat: f64,
    pub psi_raw: Vector4<f64>,
}

impl Channel {
    pub fn new(location: Option<(usize, usize, usize)>, phi0: f64) -> Self {
        Channel {
            location,
            psi: Vector4::zeros(),
            phi_hat: phi0,
            psi_raw: Vector4::zeros(),
        }
    }
}

/// `ψ ← ψ + dt·(−L'ψ + Ψ)`.
pub fn regressor_step(channel: &mut Channel, l_prime: f64, dt: f64) {
    channel.psi += dt * (channel.psi_raw - l_prime * channel.psi);
}

/// Single-channel observer step with `L = L' + ψᵀKψ`, `K` diagonal.
pub fn observer_step(
    channel: &mut Channel,
    theta_hat: &Vector4<f64>,
    gain: &Vector4<f64>,
    l_prime: f64,
    phi_measured: f64,
    dt: f64,
) {
    let l = l_prime + channel.psi.dot(&gain.component_mul(&channel.psi));
    channel.phi_hat += dt * (channel.psi_raw.dot(theta_hat) + l * (phi_measured - channel.phi_hat));
}

/// Recorded `(Ψ, φ)` samples of one channel at a fixed step.
pub type Track = Vec<Measurement>;

#[derive(Debug, Clone)]
struct VirtualChannel {
    channel: Channel,
    track: usize,
    cursor: usize,
}

/// Fixed-capacity store of recorded tracks. Replayed tracks loop; on each
/// wrap the channel restarts from `ψ = 0`, `φ̂ = φ`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    tracks: VecDeque<Track>,
    channels: Vec<VirtualChannel>,
    evicted: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            tracks: VecDeque::new(),
            channels: Vec::new(),
            evicted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn evicted(&self) -> usize {
        self.evicted
    }

    fn push(&mut self, track: Track) {
        if self.capacity == 0 || track.is_empty() {
            return;
        }
        if self.tracks.len() == self.capacity {
            self.tracks.pop_front();
            self.channels.remove(0);
            for vc in &mut self.channels {
                vc.track -= 1;
            }
            self.evicted += 1;
            log::warn!("replay buffer full, evicted the oldest track");
        }
        let phi0 = track[0].phi;
        self.tracks.push_back(track);
        self.channels.push(VirtualChannel {
            channel: Channel::new(None, phi0),
            track: self.tracks.len() - 1,
            cursor: 0,
        });
    }
}

/// Sliding-window Gram matrix `∫ψψᵀdt` summed over channels, kept as blocks.
#[derive(Debug, Clone)]
pub struct PeWindow {
    pub tau: f64,
    pub block: f64,
    blocks: VecDeque<Matrix4<f64>>,
    current: Matrix4<f64>,
    current_time: f64,
}

impl PeWindow {
    pub fn new(tau: f64, block: f64) -> Result<Self> {
        if !(tau > 0.0) || !(block > 0.0) || block > tau {
            return Err(Error::invalid("tau", format!("need 0 < block <= tau, got block {block}, tau {tau}")));
        }
        Ok(PeWindow {
            tau,
            block,
            blocks: VecDeque::new(),
            current: Matrix4::zeros(),
            current_time: 0.0,
        })
    }

    fn max_blocks(&self) -> usize {
        ((self.tau / self.block).round() as usize).max(1)
    }

    pub fn accumulate<'a>(&mut self, psis: impl IntoIterator<Item = &'a Vector4<f64>>, dt: f64) {
        for p in psis {
            self.current += dt * p * p.transpose();
        }
        self.current_time += dt;
        if self.current_time >= self.block * (1.0 - 1e-9) {
            self.blocks.push_back(self.current);
            while self.blocks.len() > self.max_blocks() {
                self.blocks.pop_front();
            }
            self.current = Matrix4::zeros();
            self.current_time = 0.0;
        }
    }

    /// Gram matrix over the completed blocks, or the partial block when none
    /// has completed yet.
    pub fn gram(&self) -> Result<Matrix4<f64>> {
        if !self.blocks.is_empty() {
            Ok(self.blocks.iter().sum())
        } else if self.current_time > 0.0 {
            Ok(self.current)
        } else {
            Err(Error::EmptyWindow)
        }
    }
}

/// Smallest eigenvalue of the window's Gram matrix.
pub fn pe_metric(window: &PeWindow) -> Result<f64> {
    Ok(min_eigenvalue(&window.gram()?))
}

pub fn min_eigenvalue(m: &Matrix4<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    SymmetricEigen::new(sym).eigenvalues.min()
}

#[derive(Debug, Clone)]
pub struct EstimatorState {
    pub theta_hat: Vector4<f64>,
    pub channels: Vec<Channel>,
    /// Diagonal of the adaptation gain `K`.
    pub gain: Vector4<f64>,
    pub l_prime: f64,
    pub replay: ReplayBuffer,
    pub pe: PeWindow,
}

impl EstimatorState {
    pub fn new(
        theta0: Vector4<f64>,
        probes: &[(usize, usize, usize)],
        phi0: &ScalarField,
        gain: Vector4<f64>,
        l_prime: f64,
        replay_capacity: usize,
        pe: PeWindow,
    ) -> Result<Self> {
        if gain.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::invalid("gain", "every entry of K must be positive"));
        }
        if !(l_prime > 0.0) {
            return Err(Error::invalid("l_prime", format!("must be positive, got {l_prime}")));
        }
        let s = phi0.spec();
        for &(ix, iy, iz) in probes {
            if ix >= s.nx || iy >= s.ny || iz >= s.nz {
                return Err(Error::invalid("probes", format!("({ix}, {iy}, {iz}) outside the grid")));
            }
        }
        Ok(EstimatorState {
            theta_hat: theta0,
            channels: probes
                .iter()
                .map(|&p| Channel::new(Some(p), phi0.get(p.0, p.1, p.2)))
                .collect(),
            gain,
            l_prime,
            replay: ReplayBuffer::new(replay_capacity),
            pe,
        })
    }

    /// Largest `|φ − φ̂|` across live channels, given their current measurements.
    pub fn observer_error_sup(&self, measurements: &[Measurement]) -> f64 {
        self.channels
            .iter()
            .zip(measurements)
            .map(|(c, m)| (m.phi - c.phi_hat).abs())
            .fold(0.0, f64::max)
    }

    pub fn virtual_channels(&self) -> impl Iterator<Item = &Channel> {
        self.replay.channels.iter().map(|v| &v.channel)
    }
}

/// Appends recorded tracks as replayed channels, evicting the oldest when
/// the buffer is full.
pub fn replay_extend(state: &mut EstimatorState, tracks: Vec<Track>) -> Result<()> {
    for t in &tracks {
        if t.iter().any(|m| !m.phi.is_finite() || m.psi_raw.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("tracks", "recorded samples must be finite"));
        }
    }
    for t in tracks {
        state.replay.push(t);
    }
    Ok(())
}

/// One estimator step over live channels (`measurements`, in channel order)
/// and every replayed channel.
///
/// All right-hand sides use the state at the start of the step. The output
/// injection of channel `i` is `L'·(φᵢ − φ̂ᵢ) + ψᵢᵀ·θ̂̇`, which is the coupled
/// form of `L = L' + ψᵀKψ` when several channels share one estimate.
pub fn estimator_step(state: &mut EstimatorState, measurements: &[Measurement], dt: f64) -> Result<()> {
    if measurements.len() != state.channels.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} channel measurements", state.channels.len()),
            actual: measurements.len().to_string(),
        });
    }
    if state.channels.is_empty() && state.replay.channels.is_empty() {
        return Err(Error::invalid("channels", "estimator needs at least one channel"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }

    let replay = &mut state.replay;
    let mut virtual_meas = Vec::with_capacity(replay.channels.len());
    for vc in &mut replay.channels {
        let track = &replay.tracks[vc.track];
        if vc.cursor >= track.len() {
            vc.cursor = 0;
            vc.channel.psi = Vector4::zeros();
            vc.channel.phi_hat = track[0].phi;
        }
        virtual_meas.push(track[vc.cursor]);
        vc.cursor += 1;
    }

    let mut live: Vec<(&mut Channel, Measurement)> = state.channels.iter_mut().zip(measurements.iter().copied()).collect();
    let mut replayed: Vec<(&mut Channel, Measurement)> = replay
        .channels
        .iter_mut()
        .map(|v| &mut v.channel)
        .zip(virtual_meas)
        .collect();

    let mut sum = Vector4::zeros();
    for (c, m) in live.iter_mut().chain(replayed.iter_mut()) {
        c.psi_raw = m.psi_raw;
        sum += c.psi * (m.phi - c.phi_hat);
    }
    let theta_rate = state.gain.component_mul(&sum);

    let theta = state.theta_hat;
    let l_prime = state.l_prime;
    for (c, m) in live.iter_mut().chain(replayed.iter_mut()) {
        let err = m.phi - c.phi_hat;
        c.phi_hat += dt * (c.psi_raw.dot(&theta) + l_prime * err + c.psi.dot(&theta_rate));
        regressor_step(c, l_prime, dt);
    }
    state.theta_hat += dt * theta_rate;

    let psis: Vec<Vector4<f64>> = live.iter().chain(replayed.iter()).map(|(c, _)| c.psi).collect();
    state.pe.accumulate(psis.iter(), dt);
    Ok(())
}

/// Additive Gaussian noise on measured fields, seeded for reproducibility.
#[derive(Debug, Clone)]
pub struct MeasurementNoise {
    sigma: f64,
    rng: ChaCha8Rng,
}

impl MeasurementNoise {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("noise_sigma", format!("must be non-negative, got {sigma}")));
        }
        Ok(MeasurementNoise {
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn corrupt(&mut self, field: &ScalarField) -> ScalarField {
        if self.sigma == 0.0 {
            return field.clone();
        }
        let normal = Normal::new(0.0, self.sigma).expect("sigma checked at construction");
        let mut out = field.clone();
        for v in out.values_mut() {
            *v += normal.sample(&mut self.rng);
        }
        out
    }
}

/// Regressor samples at the probes, with `Δφ` from the grid stencil of the
/// (possibly noisy) measured field.
pub fn measure(phi: &ScalarField, input: &ForceInput, probes: &[(usize, usize, usize)]) -> Vec<Measurement> {
    probes
        .iter()
        .map(|&(ix, iy, iz)| {
            let p = phi.get(ix, iy, iz);
            Measurement {
                psi_raw: Vector4::new(phi.laplacian_at(ix, iy, iz), input.f.get(ix, iy, iz), input.f_dot.get(ix, iy, iz), p),
                phi: p,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentRow {
    pub t: f64,
    pub theta_hat: Vector4<f64>,
    pub pe_min_eig: f64,
    pub obs_err_sup: f64,
}

pub fn write_ident_csv<W: Write>(rows: &[IdentRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "eps_hat", "a1_hat", "a2_hat", "lambda_hat", "pe_min_eig", "obs_err_sup"])?;
    for r in rows {
        w.write_record(&[
            r.t.to_string(),
            r.theta_hat[0].to_string(),
            r.theta_hat[1].to_string(),
            r.theta_hat[2].to_string(),
            r.theta_hat[3].to_string(),
            r.pe_min_eig.to_string(),
            r.obs_err_sup.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn channel_with(psi_raw: Vector4<f64>) -> Channel {
        let mut c = Channel::new(None, 0.0);
        c.psi_raw = psi_raw;
        c
    }

    #[test]
    fn regressor_fixed_point_and_time_constant() {
        let mut c = channel_with(Vector4::zeros());
        regressor_step(&mut c, 2.0, 0.01);
        assert_eq!(c.psi, Vector4::zeros());

        let mut c = channel_with(Vector4::new(2.0, 0.0, 0.0, 0.0));
        let dt = 1e-4;
        let mut t95 = None;
        for k in 1..=150_000 {
            regressor_step(&mut c, 2.0, dt);
            if t95.is_none() && c.psi[0] >= 0.95 {
                t95 = Some(k as f64 * dt);
            }
        }
        assert_relative_eq!(c.psi, Vector4::new(1.0, 0.0, 0.0, 0.0), epsilon = 1e-9);
        // 95% after ln(20)/L' ≈ 3/L'.
        assert_relative_eq!(t95.unwrap(), 20f64.ln() / 2.0, max_relative = 1e-3);
    }

    #[test]
    fn observer_feedback_decay() {
        let mut c = channel_with(Vector4::zeros());
        c.phi_hat = 1.0;
        observer_step(&mut c, &Vector4::new(3.0, -1.0, 2.0, 5.0), &Vector4::repeat(1.0), 2.0, 0.0, 0.1);
        assert_relative_eq!(c.phi_hat, 0.8, epsilon = 1e-15);
    }

    fn single_channel_state() -> EstimatorState {
        let spec = crate::field::GridSpec::line(3, 1.0).unwrap();
        EstimatorState::new(
            Vector4::zeros(),
            &[(1, 0, 0)],
            &ScalarField::zeros(spec),
            Vector4::repeat(1.0),
            1.0,
            4,
            PeWindow::new(2.0, 0.1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn estimator_update_examples() {
        let mut s = single_channel_state();
        s.channels[0].psi = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let before = s.theta_hat;
        estimator_step(&mut s, &[Measurement { psi_raw: Vector4::zeros(), phi: 0.0 }], 0.1).unwrap();
        assert_eq!(s.theta_hat, before);

        let mut s = single_channel_state();
        s.channels[0].psi = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let dt = 1e-3;
        estimator_step(&mut s, &[Measurement { psi_raw: Vector4::zeros(), phi: 0.5 }], dt).unwrap();
        assert_relative_eq!(s.theta_hat / dt, Vector4::new(0.5, 0.0, 0.0, 0.0), epsilon = 1e-12);

        assert!(estimator_step(&mut s, &[], dt).is_err());
    }

    #[test]
    fn pe_examples() {
        let tau = 2.0;
        let dt = 0.01;
        let mut w = PeWindow::new(tau, 0.1).unwrap();
        assert!(matches!(pe_metric(&w), Err(Error::EmptyWindow)));
        let e1 = Vector4::new(1.0, 0.0, 0.0, 0.0);
        for _ in 0..200 {
            w.accumulate([&e1], dt);
        }
        assert!(pe_metric(&w).unwrap().abs() < 1e-12);

        let mut w = PeWindow::new(tau, 0.1).unwrap();
        let mut w2 = PeWindow::new(tau, 0.1).unwrap();
        for k in 0..200 {
            let e = Vector4::ith(k / 50, 1.0);
            w.accumulate([&e], dt);
            w2.accumulate([&(2.0 * e)], dt);
        }
        let m = pe_metric(&w).unwrap();
        assert_relative_eq!(m, tau / 4.0, epsilon = 1e-9);
        assert_relative_eq!(pe_metric(&w2).unwrap(), 4.0 * m, epsilon = 1e-9);
    }

    #[test]
    fn window_slides() {
        let mut w = PeWindow::new(1.0, 0.1).unwrap();
        let e1 = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let e2 = Vector4::new(0.0, 1.0, 0.0, 0.0);
        for _ in 0..100 {
            w.accumulate([&e1], 0.01);
        }
        for _ in 0..100 {
            w.accumulate([&e2], 0.01);
        }
        let g = w.gram().unwrap();
        assert!(g[(0, 0)].abs() < 1e-12);
        assert_relative_eq!(g[(1, 1)], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn replay_capacity_evicts_oldest() {
        let mut s = single_channel_state();
        let track = |v: f64| vec![Measurement { psi_raw: Vector4::repeat(v), phi: v }; 3];
        replay_extend(&mut s, vec![track(1.0), track(2.0), track(3.0), track(4.0), track(5.0)]).unwrap();
        assert_eq!(s.replay.len(), 4);
        assert_eq!(s.replay.evicted(), 1);
        assert_eq!(s.virtual_channels().next().unwrap().phi_hat, 2.0);
        let before = s.clone();
        replay_extend(&mut s, vec![]).unwrap();
        assert_eq!(s.replay.len(), before.replay.len());
        assert_eq!(s.theta_hat, before.theta_hat);
    }

    #[test]
    fn noise_is_seeded() {
        let spec = crate::field::GridSpec::new(3, 3, 3, 1.0, 1.0, 1.0).unwrap();
        let f = ScalarField::zeros(spec);
        let a = MeasurementNoise::new(0.1, 7).unwrap().corrupt(&f);
        let b = MeasurementNoise::new(0.1, 7).unwrap().corrupt(&f);
        let c = MeasurementNoise::new(0.1, 8).unwrap().corrupt(&f);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(MeasurementNoise::new(0.0, 1).unwrap().corrupt(&f), f);
    }

    proptest! {
        #[test]
        fn gram_is_psd(vals in proptest::collection::vec(-5.0..5.0f64, 4..40)) {
            let mut w = PeWindow::new(1.0, 0.5).unwrap();
            for chunk in vals.chunks(4) {
                if chunk.len() == 4 {
                    let v = Vector4::from_column_slice(chunk);
                    w.accumulate([&v], 0.01);
                }
            }
            let g = w.gram().unwrap();
            prop_assert!((g - g.transpose()).norm() < 1e-12);
            prop_assert!(min_eigenvalue(&g) > -1e-10 * (1.0 + g.norm()));
        }

        #[test]
        fn estimate_stays_finite(seed in 0u64..50) {
            let mut s = single_channel_state();
            let mut phi = 0.0f64;
            for k in 0..2000 {
                let t = k as f64 * 1e-3;
                let raw = Vector4::new((t * 3.0 + seed as f64).sin(), (t * 7.0).cos(), 0.3, phi);
                estimator_step(&mut s, &[Measurement { psi_raw: raw, phi }], 1e-3).unwrap();
                phi += 1e-3 * raw.dot(&Vector4::new(1.0, 2.0, 0.5, -2.0));
            }
            prop_assert!(s.theta_hat.iter().all(|v| v.is_finite()));
        }
    }
}
