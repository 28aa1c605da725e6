//! Range sensor calibration and simple-moving-average smoothing.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::LinModel;

pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SensorError {
    #[error("raw reading must be finite and non-negative, got {0}")]
    InvalidReading(f64),
}

/// Maps a raw reading to centimeters through the fitted line.
pub fn calibrate_reading(model: &LinModel, raw: f64) -> Result<f64, SensorError> {
    if !raw.is_finite() || raw < 0.0 {
        return Err(SensorError::InvalidReading(raw));
    }
    Ok(model.eval(raw))
}

/// Mean of the last `window` readings.
///
/// Before the window has filled, the mean of the readings seen so far is
/// returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmaFilter {
    window: usize,
    buffer: VecDeque<f64>,
}

impl Default for SmaFilter {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl SmaFilter {
    /// # Panics
    /// If `window` is zero.
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "SMA window must be positive");
        Self { window, buffer: VecDeque::with_capacity(window) }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn buffer(&self) -> impl Iterator<Item = f64> + '_ {
        self.buffer.iter().copied()
    }

    pub fn push(&mut self, value: f64) -> f64 {
        if self.buffer.len() == self.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(value);
        self.value().expect("just pushed")
    }

    /// Current output, `None` before the first sample.
    pub fn value(&self) -> Option<f64> {
        if self.buffer.is_empty() {
            return None;
        }
        // Summed fresh each time so no rounding error accumulates.
        Some(self.buffer.iter().sum::<f64>() / self.buffer.len() as f64)
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
    }
}

/// Noise applied to simulated range readings, in centimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub gaussian_sigma_cm: f64,
    pub spike_probability: f64,
    pub spike_magnitude_cm: f64,
}

impl Default for NoiseModel {
    /// Synthetic defaults: 1 cm Gaussian jitter plus occasional +50 cm echoes.
    fn default() -> Self {
        Self { gaussian_sigma_cm: 1.0, spike_probability: 0.05, spike_magnitude_cm: 50.0 }
    }
}

impl NoiseModel {
    pub fn off() -> Self {
        Self { gaussian_sigma_cm: 0.0, spike_probability: 0.0, spike_magnitude_cm: 0.0 }
    }

    pub fn is_off(&self) -> bool {
        self.gaussian_sigma_cm == 0.0 && (self.spike_probability == 0.0 || self.spike_magnitude_cm == 0.0)
    }

    /// Draws one additive error in centimeters.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut e = 0.0;
        if self.gaussian_sigma_cm > 0.0 {
            let normal = Normal::new(0.0, self.gaussian_sigma_cm).expect("sigma is positive");
            e += normal.sample(rng);
        }
        if self.spike_probability > 0.0 && rng.random_bool(self.spike_probability.clamp(0.0, 1.0)) {
            e += self.spike_magnitude_cm;
        }
        e
    }
}

/// A synthetic slowly-receding-target recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSeries {
    /// Noise-free distances, cm.
    pub truth: Vec<f64>,
    /// Gaussian component of the error at each sample.
    pub jitter: Vec<f64>,
    /// Spike component of the error at each sample (0 or the spike size).
    pub spikes: Vec<f64>,
}

impl SyntheticSeries {
    /// Observed calibrated readings: truth plus both noise components.
    pub fn observed(&self) -> Vec<f64> {
        self.truth
            .iter()
            .zip(&self.jitter)
            .zip(&self.spikes)
            .map(|((t, j), s)| t + j + s)
            .collect()
    }
}

/// Generates an increasing-distance series with Gaussian jitter and isolated
/// spikes. Spikes are never closer than `min_spike_gap` samples apart.
pub fn synthetic_series(
    len: usize,
    start_cm: f64,
    slope_cm_per_sample: f64,
    noise: &NoiseModel,
    min_spike_gap: usize,
    seed: u64,
) -> SyntheticSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = NoiseModel { spike_probability: 0.0, ..*noise };
    let mut since_spike = min_spike_gap;
    let mut out = SyntheticSeries {
        truth: Vec::with_capacity(len),
        jitter: Vec::with_capacity(len),
        spikes: Vec::with_capacity(len),
    };
    for i in 0..len {
        out.truth.push(start_cm + slope_cm_per_sample * i as f64);
        out.jitter.push(gaussian.sample(&mut rng));
        let spike = since_spike >= min_spike_gap
            && noise.spike_probability > 0.0
            && rng.random_bool(noise.spike_probability.clamp(0.0, 1.0));
        if spike {
            since_spike = 0;
            out.spikes.push(noise.spike_magnitude_cm);
        } else {
            since_spike += 1;
            out.spikes.push(0.0);
        }
    }
    out
}
