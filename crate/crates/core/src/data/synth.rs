use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::numerics::{Rng, Tensor};

use super::{DataError, TimeSeriesDataset};

/// Parameters of the synthetic benchmark generator.
///
/// Every channel is a weighted sum of sinusoids at the shared `frequencies`
/// (cycles per step), each with its own phase, scaled by the channel
/// amplitude and perturbed with Gaussian noise. Because all channels share
/// the frequencies, normal points lie close to a low-dimensional curve and
/// anomalies show up as departures from the cross-channel pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub channels: usize,
    pub len: usize,
    pub frequencies: Vec<f64>,
    /// Per-channel amplitude; drawn from `[0.5, 2]` when empty.
    pub amplitudes: Vec<f64>,
    pub noise_std: f64,
    /// Fraction of points labeled anomalous, in `[0, 1)`.
    pub anomaly_rate: f64,
    /// Probability that an injected event is a single-point spike rather
    /// than a segment.
    pub point_fraction: f64,
    pub segment_len: (usize, usize),
    pub seed: u64,
    /// Seed for the per-channel signal shape (amplitudes, weights, phases,
    /// offsets). When unset the shape is drawn from `seed`. Two specs with
    /// the same family and different seeds share a normal pattern but have
    /// independent noise and anomalies.
    pub family: Option<u64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            channels: 5,
            len: 20_000,
            frequencies: vec![1.0 / 50.0, 1.0 / 25.0],
            amplitudes: Vec::new(),
            noise_std: 0.05,
            anomaly_rate: 0.05,
            point_fraction: 0.5,
            segment_len: (10, 50),
            seed: 0,
            family: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: &str| Err(DataError::Synth(msg.to_owned()));
        if self.channels == 0 || self.len == 0 {
            return bad("channels and len must be positive");
        }
        if self.frequencies.is_empty() {
            return bad("at least one frequency is required");
        }
        if !self.amplitudes.is_empty() && self.amplitudes.len() != self.channels {
            return bad("amplitudes must have one entry per channel");
        }
        if !(0.0..1.0).contains(&self.anomaly_rate) {
            return bad("anomaly_rate must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.point_fraction) {
            return bad("point_fraction must lie in [0, 1]");
        }
        if self.segment_len.0 < 2 || self.segment_len.0 > self.segment_len.1 {
            return bad("segment_len must satisfy 2 <= min <= max");
        }
        if self.noise_std < 0.0 {
            return bad("noise_std must be non-negative");
        }
        Ok(())
    }
}

/// What was injected where; useful for inspection and tests.
#[derive(Clone, Debug, PartialEq)]
pub enum AnomalyEvent {
    Spike { at: usize, channels: Vec<usize> },
    LevelShift { start: usize, len: usize, channels: Vec<usize> },
    FrequencyShift { start: usize, len: usize, channels: Vec<usize> },
}

/// Generates a labeled series. Labels mark exactly the perturbed points and
/// their count is `round(anomaly_rate * len)` whenever there is room to
/// place the events.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<TimeSeriesDataset, DataError> {
    generate_with_events(spec).map(|(ds, _)| ds)
}

pub fn generate_with_events(spec: &SynthSpec) -> Result<(TimeSeriesDataset, Vec<AnomalyEvent>), DataError> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let mut family_rng = spec.family.map(Rng::new);
    let (d, n, k) = (spec.channels, spec.len, spec.frequencies.len());

    let shape_rng = family_rng.as_mut().unwrap_or(&mut rng);
    let amps: Vec<f64> = if spec.amplitudes.is_empty() {
        (0..d).map(|_| shape_rng.uniform_range(0.5, 2.0)).collect()
    } else {
        spec.amplitudes.clone()
    };
    let weights: Vec<f64> = (0..d * k).map(|_| shape_rng.uniform_range(0.5, 1.0)).collect();
    let phases: Vec<f64> = (0..d * k).map(|_| shape_rng.uniform_range(0.0, TAU)).collect();
    let offsets: Vec<f64> = (0..d).map(|_| shape_rng.uniform_range(-1.0, 1.0)).collect();

    let clean = |t: f64, c: usize, freq_scale: f64| -> f64 {
        let mut v = offsets[c];
        for (j, f) in spec.frequencies.iter().enumerate() {
            v += amps[c] * weights[c * k + j] * (TAU * f * freq_scale * t + phases[c * k + j]).sin();
        }
        v
    };

    let mut values = vec![0.0; n * d];
    for t in 0..n {
        for c in 0..d {
            values[t * d + c] = clean(t as f64, c, 1.0) + spec.noise_std * rng.gaussian();
        }
    }

    // Channel scale of the normal signal, used to size perturbations.
    let scale: Vec<f64> = (0..d)
        .map(|c| {
            let col: Vec<f64> = (0..n).map(|t| values[t * d + c]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-6)
        })
        .collect();

    let target = (spec.anomaly_rate * n as f64).round() as usize;
    let mut labels = vec![0u8; n];
    let mut labeled = 0;
    let mut events = Vec::new();
    let mut failures = 0;

    while labeled < target && failures < 10_000 {
        let remaining = target - labeled;
        let is_point = remaining == 1 || rng.bernoulli(spec.point_fraction);
        let len = if is_point {
            1
        } else {
            let (lo, hi) = spec.segment_len;
            (lo + rng.below((hi - lo + 1) as u64) as usize).min(remaining).max(2)
        };
        if len > n {
            break;
        }
        let start = rng.below((n - len + 1) as u64) as usize;
        // Keep one normal point on either side so events stay separate.
        let lo = start.saturating_sub(1);
        let hi = (start + len + 1).min(n);
        if labels[lo..hi].contains(&1) {
            failures += 1;
            continue;
        }
        let chans = pick_channels(&mut rng, d);
        if is_point {
            for &c in &chans {
                let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                values[start * d + c] += sign * rng.uniform_range(5.0, 8.0) * scale[c];
            }
            events.push(AnomalyEvent::Spike {
                at: start,
                channels: chans,
            });
        } else if rng.bernoulli(0.5) {
            for &c in &chans {
                let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                let shift = sign * rng.uniform_range(3.0, 5.0) * scale[c];
                for t in start..start + len {
                    values[t * d + c] += shift;
                }
            }
            events.push(AnomalyEvent::LevelShift {
                start,
                len,
                channels: chans,
            });
        } else {
            let factor = rng.uniform_range(2.5, 4.0);
            for &c in &chans {
                for t in start..start + len {
                    let normal = clean(t as f64, c, 1.0);
                    values[t * d + c] += clean(t as f64, c, factor) - normal;
                }
            }
            events.push(AnomalyEvent::FrequencyShift {
                start,
                len,
                channels: chans,
            });
        }
        labels[start..start + len].iter_mut().for_each(|l| *l = 1);
        labeled += len;
    }

    let tensor = Tensor::matrix(n, d, values).expect("generated shape");
    let names = (0..d).map(|c| format!("ch{c}")).collect();
    let ds = TimeSeriesDataset::new(tensor, Some(labels))?.with_channel_names(names);
    Ok((ds, events))
}

/// A random non-empty subset of channels, at most half of them (rounded up)
/// so the untouched channels still carry the normal pattern.
fn pick_channels(rng: &mut Rng, d: usize) -> Vec<usize> {
    let max = d.div_ceil(2).max(1);
    let count = 1 + rng.below(max as u64) as usize;
    let mut all: Vec<usize> = (0..d).collect();
    rng.shuffle(&mut all);
    let mut chosen = all[..count].to_vec();
    chosen.sort_unstable();
    chosen
}
