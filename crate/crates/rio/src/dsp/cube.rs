//! The raw data cube and point-scatterer synthesis.

use num_complex::{Complex, Complex64};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ChirpConfig, DspError, SPEED_OF_LIGHT};

/// One frame of mixed (beat) samples, indexed `[antenna][chirp][sample]`
/// with the antenna index outermost. Samples are stored as complex32, the
/// native ADC precision and the on-disk format.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarCube {
    pub config: ChirpConfig,
    /// Frame timestamp [s].
    pub timestamp: f64,
    data: Vec<Complex<f32>>,
}

impl RadarCube {
    pub fn zeroed(config: ChirpConfig, timestamp: f64) -> Result<Self, DspError> {
        config.validate()?;
        let len = config.n_antennas() * config.n_chirps as usize * config.n_samples as usize;
        Ok(RadarCube {
            config,
            timestamp,
            data: vec![Complex::new(0.0, 0.0); len],
        })
    }

    pub fn from_data(
        config: ChirpConfig,
        timestamp: f64,
        data: Vec<Complex<f32>>,
    ) -> Result<Self, DspError> {
        config.validate()?;
        let expect = config.n_antennas() * config.n_chirps as usize * config.n_samples as usize;
        if data.len() != expect {
            return Err(DspError::MalformedCube(format!(
                "expected {expect} samples, got {}",
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(DspError::NonFiniteSample(idx));
        }
        Ok(RadarCube {
            config,
            timestamp,
            data,
        })
    }

    #[inline]
    fn index(&self, antenna: usize, chirp: usize, sample: usize) -> usize {
        (antenna * self.config.n_chirps as usize + chirp) * self.config.n_samples as usize + sample
    }

    #[inline]
    pub fn at(&self, antenna: usize, chirp: usize, sample: usize) -> Complex<f32> {
        self.data[self.index(antenna, chirp, sample)]
    }

    #[inline]
    pub fn at_mut(&mut self, antenna: usize, chirp: usize, sample: usize) -> &mut Complex<f32> {
        let i = self.index(antenna, chirp, sample);
        &mut self.data[i]
    }

    pub fn samples(&self) -> &[Complex<f32>] {
        &self.data
    }
}

/// An ideal point scatterer for cube synthesis.
#[derive(Clone, Copy, Debug)]
pub struct PointTarget {
    /// Range at frame start [m].
    pub range: f64,
    /// Radial velocity [m/s], positive receding.
    pub radial_velocity: f64,
    /// Azimuth [rad], positive left.
    pub azimuth: f64,
    /// Elevation [rad], positive up.
    pub elevation: f64,
    /// Complex amplitude magnitude.
    pub amplitude: f64,
}

/// Synthesizes the mixed-signal cube for a set of point targets plus complex
/// white noise of standard deviation `noise_sigma` (total power σ²).
///
/// Each target is a delayed, Doppler-shifted, per-antenna phase-shifted copy
/// of the chirp; after mixing with the transmit chirp the sample phase is
/// `−2π S t_r t − 2π f_c t_r + π S t_r²` with the round-trip delay `t_r`
/// advancing chirp to chirp, plus the array phase for the arrival direction.
pub fn synthesize_cube(
    config: &ChirpConfig,
    timestamp: f64,
    targets: &[PointTarget],
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Result<RadarCube, DspError> {
    config.validate()?;
    let mut cube = RadarCube::zeroed(config.clone(), timestamp)?;
    let slope = config.slope();
    let lambda = config.wavelength();
    let fc = config.center_freq;
    let d_over_lambda = config.antenna_spacing / lambda;
    let n_c = config.n_chirps as usize;
    let n_s = config.n_samples as usize;

    for target in targets {
        let array_dir = target.azimuth.sin() * target.elevation.cos();
        let elev_dir = target.elevation.sin();
        for (a, &(h, v)) in config.antennas.iter().enumerate() {
            let phi_ant = -2.0
                * std::f64::consts::PI
                * d_over_lambda
                * (h * array_dir + v * elev_dir);
            for c in 0..n_c {
                let r = target.range + target.radial_velocity * (c as f64 * config.chirp_duration);
                let t_r = 2.0 * r / SPEED_OF_LIGHT;
                let phi_const = -2.0 * std::f64::consts::PI * fc * t_r
                    + std::f64::consts::PI * slope * t_r * t_r
                    + phi_ant;
                for s in 0..n_s {
                    let t = s as f64 / config.sample_rate;
                    let phase = -2.0 * std::f64::consts::PI * slope * t_r * t + phi_const;
                    let val = Complex64::from_polar(target.amplitude, phase);
                    let cell = cube.at_mut(a, c, s);
                    *cell += Complex::new(val.re as f32, val.im as f32);
                }
            }
        }
    }

    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma / 2.0f64.sqrt()).unwrap();
        for cell in &mut cube.data {
            *cell += Complex::new(
                normal.sample(rng) as f32,
                normal.sample(rng) as f32,
            );
        }
    }
    Ok(cube)
}
