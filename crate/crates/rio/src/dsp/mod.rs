//! FMCW radar signal processing.
//!
//! Chirp model: `x(t) = exp(j(π S t² + 2π f_c t + θ))` with slope
//! `S = B / T_c`. Mixing a delayed echo with the transmit chirp yields a beat
//! tone at `f_r = S·t_r` for a round-trip delay `t_r`, so range, Doppler, and
//! angle all reduce to frequency estimation:
//!
//! - range `d = f_r c₀ / (2S)`, resolution `Δ_r = c₀ / (2B)`, maximum range
//!   `r_max = N_s c₀ / (4B)`;
//! - velocity from the chirp-to-chirp phase step, `v = λ Δφ / (4π T_c)`,
//!   resolution `Δ_v = λ / (2 N_c T_c)`;
//! - direction from the antenna-to-antenna phase step,
//!   `Δφ = 2π (d/λ) sin θ` (no small-angle approximation), resolution
//!   `Δθ = λ / (N_a d cos θ)`.

pub mod cfar;
pub mod cube;
pub mod io;
pub mod pipeline;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

pub use cfar::CfarConfig;
pub use cube::{synthesize_cube, PointTarget, RadarCube};
pub use pipeline::{cube_to_pointcloud, Detection, DspOptions, WindowFn};

/// Nominal speed of light [m/s]; the round value keeps the resolution
/// formulas exact and is used consistently by synthesis and processing.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("sample length mismatch: tx has {tx}, rx has {rx}")]
    LengthMismatch { tx: usize, rx: usize },
    #[error("angle argument {0} lies outside [-1, 1]")]
    AngleOutOfRange(f64),
    #[error("invalid chirp configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed cube file: {0}")]
    MalformedCube(String),
    #[error("non-finite sample at flat index {0}")]
    NonFiniteSample(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Waveform and array geometry of one radar frame.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ChirpConfig {
    /// Carrier frequency f_c [Hz].
    pub center_freq: f64,
    /// Sweep bandwidth B [Hz].
    pub bandwidth: f64,
    /// Chirp duration T_c [s].
    pub chirp_duration: f64,
    /// ADC sample rate f_s [Hz].
    pub sample_rate: f64,
    /// Fast-time samples per chirp N_s.
    pub n_samples: u32,
    /// Chirps per frame N_c.
    pub n_chirps: u32,
    /// Element spacing d [m] of the (virtual) array.
    pub antenna_spacing: f64,
    /// Virtual antenna offsets (horizontal, vertical) in units of d.
    pub antennas: Vec<(f64, f64)>,
}

impl ChirpConfig {
    /// Chirp slope S = B / T_c [Hz/s].
    pub fn slope(&self) -> f64 {
        self.bandwidth / self.chirp_duration
    }

    /// Carrier wavelength λ = c₀ / f_c [m].
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.center_freq
    }

    pub fn n_antennas(&self) -> usize {
        self.antennas.len()
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let fail = |msg: &str| Err(DspError::InvalidConfig(msg.to_string()));
        if !(self.center_freq > 0.0) {
            return fail("center_freq must be positive");
        }
        if !(self.bandwidth > 0.0) {
            return fail("bandwidth must be positive");
        }
        if !(self.chirp_duration > 0.0) {
            return fail("chirp_duration must be positive");
        }
        if !(self.sample_rate > 0.0) {
            return fail("sample_rate must be positive");
        }
        if self.n_samples < 2 {
            return fail("need at least two samples per chirp");
        }
        if self.n_chirps < 1 {
            return fail("need at least one chirp");
        }
        if self.n_samples as f64 > self.sample_rate * self.chirp_duration + 1e-9 {
            return fail("n_samples do not fit into the chirp at sample_rate");
        }
        if self.antennas.is_empty() {
            return fail("antenna list is empty");
        }
        if !(self.antenna_spacing > 0.0) {
            return fail("antenna_spacing must be positive");
        }
        Ok(())
    }
}

/// Range, velocity, and boresight angular resolution of a configuration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Resolutions {
    /// Δ_r = c₀ / (2B) [m].
    pub range: f64,
    /// Δ_v = λ / (2 N_c T_c) [m/s].
    pub velocity: f64,
    /// Δθ at boresight = λ / (N_a d) [rad].
    pub angular_boresight: f64,
    /// r_max = N_s c₀ / (4B) [m].
    pub max_range: f64,
}

pub fn resolutions(cfg: &ChirpConfig) -> Resolutions {
    Resolutions {
        range: SPEED_OF_LIGHT / (2.0 * cfg.bandwidth),
        velocity: cfg.wavelength() / (2.0 * cfg.n_chirps as f64 * cfg.chirp_duration),
        angular_boresight: angular_resolution(cfg, 0.0),
        max_range: cfg.n_samples as f64 * SPEED_OF_LIGHT / (4.0 * cfg.bandwidth),
    }
}

/// Angular resolution at incidence `theta`: Δθ = λ / (N_a d cos θ) [rad].
pub fn angular_resolution(cfg: &ChirpConfig, theta: f64) -> f64 {
    cfg.wavelength() / (cfg.n_antennas() as f64 * cfg.antenna_spacing * theta.cos())
}

/// Samples the complex transmit chirp at the given times with an initial
/// phase offset.
pub fn gen_chirp(cfg: &ChirpConfig, times: &[f64], phase0: f64) -> Vec<Complex<f64>> {
    let s = cfg.slope();
    times
        .iter()
        .map(|&t| {
            let phase = std::f64::consts::PI * s * t * t
                + 2.0 * std::f64::consts::PI * cfg.center_freq * t
                + phase0;
            Complex::from_polar(1.0, phase)
        })
        .collect()
}

/// Mixes the received signal with the transmit chirp: `rx · conj(tx)`,
/// leaving the beat tone.
pub fn mix(tx: &[Complex<f64>], rx: &[Complex<f64>]) -> Result<Vec<Complex<f64>>, DspError> {
    if tx.len() != rx.len() {
        return Err(DspError::LengthMismatch {
            tx: tx.len(),
            rx: rx.len(),
        });
    }
    Ok(tx.iter().zip(rx).map(|(a, b)| b * a.conj()).collect())
}

/// Range from a beat frequency: `d = f_r c₀ / (2S)`.
pub fn range_from_beat(beat_freq: f64, slope: f64) -> f64 {
    beat_freq * SPEED_OF_LIGHT / (2.0 * slope)
}

/// Radial velocity from the chirp-to-chirp phase step:
/// `v = λ Δφ / (4π T_c)`.
pub fn doppler_velocity(delta_phi: f64, wavelength: f64, chirp_duration: f64) -> f64 {
    wavelength * delta_phi / (4.0 * std::f64::consts::PI * chirp_duration)
}

/// Incidence angle from the antenna-to-antenna phase step:
/// `θ = asin(Δφ λ / (2π d))`. Errors when the argument leaves [-1, 1].
pub fn angle_from_phase(delta_phi: f64, wavelength: f64, spacing: f64) -> Result<f64, DspError> {
    let arg = delta_phi * wavelength / (2.0 * std::f64::consts::PI * spacing);
    if !(-1.0..=1.0).contains(&arg) {
        return Err(DspError::AngleOutOfRange(arg));
    }
    Ok(arg.asin())
}

#[cfg(test)]
pub(crate) fn test_config() -> ChirpConfig {
    ChirpConfig {
        center_freq: 77.0e9,
        bandwidth: 1.0e9,
        chirp_duration: 40.0e-6,
        sample_rate: 256.0 / 40.0e-6,
        n_samples: 256,
        n_chirps: 64,
        antenna_spacing: 0.5 * SPEED_OF_LIGHT / 77.0e9,
        antennas: (0..8).map(|h| (h as f64, 0.0)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn resolution_formulas() {
        let mut cfg = test_config();
        cfg.bandwidth = 4.0e9;
        cfg.n_samples = 200;
        cfg.sample_rate = 200.0 / cfg.chirp_duration;
        let r = resolutions(&cfg);
        assert_relative_eq!(r.range, 0.0375, epsilon = 1e-12);
        assert_relative_eq!(r.max_range, 3.75, epsilon = 1e-12);
    }

    #[test]
    fn beat_frequency_to_range() {
        // Round-trip delay 1e-8 s (1.5 m) with slope 1e14 Hz/s puts the beat
        // at exactly 1 MHz.
        let slope = 1.0e14;
        let t_r = 1.0e-8;
        let beat = slope * t_r;
        assert_relative_eq!(beat, 1.0e6, epsilon = 1e-3);
        assert_relative_eq!(range_from_beat(beat, slope), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn doppler_phase_to_velocity() {
        let lambda = 3.896e-3;
        let v = doppler_velocity(std::f64::consts::FRAC_PI_2, lambda, 40.0e-6);
        assert!((v - 12.17).abs() < 0.01, "v = {v}");
    }

    #[test]
    fn angle_phase_inversion() {
        let lambda = 3.896e-3;
        let d = lambda / 2.0;
        let theta = angle_from_phase(std::f64::consts::FRAC_PI_2, lambda, d).unwrap();
        assert_relative_eq!(theta, 30.0f64.to_radians(), epsilon = 1e-12);
        // Outside the field of view the inversion must refuse.
        assert!(angle_from_phase(2.5 * std::f64::consts::PI, lambda, d).is_err());
    }

    #[test]
    fn chirp_instantaneous_frequency() {
        // Central-difference phase of the chirp at t = T_c/2 must equal
        // f_c + S·T_c/2 (exact for a quadratic phase). The step is small
        // enough that the phase advance stays below π, so arg() does not
        // wrap.
        let cfg = test_config();
        let t0 = cfg.chirp_duration / 2.0;
        let dt = 2.0e-12;
        let x = gen_chirp(&cfg, &[t0 - dt, t0 + dt], 0.3);
        let dphi = (x[1] * x[0].conj()).arg();
        let f_inst = dphi / (2.0 * std::f64::consts::PI * 2.0 * dt);
        let expected = cfg.center_freq + cfg.slope() * t0;
        assert_relative_eq!(f_inst, expected, max_relative = 1e-7);
    }

    #[test]
    fn mix_produces_beat_at_slope_times_delay() {
        // Delayed chirp mixed with the original: dominant tone at S·t_r.
        let cfg = test_config();
        let t_r = 2.0 * 3.0 / SPEED_OF_LIGHT; // 3 m target
        let times: Vec<f64> = (0..cfg.n_samples)
            .map(|n| n as f64 / cfg.sample_rate)
            .collect();
        let delayed: Vec<f64> = times.iter().map(|t| t - t_r).collect();
        let tx = gen_chirp(&cfg, &times, 0.0);
        let rx = gen_chirp(&cfg, &delayed, 0.0);
        let beat = mix(&tx, &rx).unwrap();
        // The beat tone sits at −S·t_r; estimate via successive phase steps.
        let mut step_sum = 0.0;
        for k in 1..beat.len() {
            step_sum += (beat[k] * beat[k - 1].conj()).arg();
        }
        let f_beat = step_sum / (beat.len() - 1) as f64 * cfg.sample_rate
            / (2.0 * std::f64::consts::PI);
        assert_relative_eq!(f_beat.abs(), cfg.slope() * t_r, max_relative = 1e-9);
        // Length mismatch is rejected.
        assert!(mix(&tx[..10], &rx).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_setups() {
        let good = test_config();
        assert!(good.validate().is_ok());
        let mut bad = good.clone();
        bad.bandwidth = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.n_samples = 1;
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.antennas.clear();
        assert!(bad.validate().is_err());
        let mut bad = good;
        bad.sample_rate = 1.0e3; // samples no longer fit in the chirp
        assert!(bad.validate().is_err());
    }
}
