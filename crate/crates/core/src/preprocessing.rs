//! Causal band-pass filter bank, frequency-stacked trials, cue-latency
//! trimming and sliding-window epoching.
//!
//! The band-pass filters are digital Butterworth designs obtained from the
//! analog prototype by the low-pass to band-pass transformation and the
//! bilinear transform with pre-warped band edges, realised as a cascade of
//! second-order sections. Filtering is always forward-only so the offline
//! and online paths see identical signals.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::Trial;

/// Converts seconds to a whole number of samples, rounding down.
pub fn seconds_to_samples(seconds: f64, sample_rate: f64) -> usize {
    // guards against 0.7 * 10 = 6.999… style representation error
    (seconds * sample_rate + 1e-9).floor().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub center_freq: f64,
    pub half_bandwidth: f64,
    /// Overall filter order; the analog prototype has `order / 2` poles.
    pub order: usize,
    pub sample_rate: f64,
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate / 2.0;
        if !(self.sample_rate > 0.0) {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if !(self.half_bandwidth > 0.0) {
            return Err(Error::Validation("half bandwidth must be positive".into()));
        }
        if !(self.center_freq - self.half_bandwidth > 0.0) {
            return Err(Error::Validation(format!(
                "passband [{}, {}] Hz must start above 0",
                self.center_freq - self.half_bandwidth,
                self.center_freq + self.half_bandwidth
            )));
        }
        if !(self.center_freq + self.half_bandwidth < nyquist) {
            return Err(Error::Validation(format!(
                "passband upper edge {} Hz must stay below Nyquist ({nyquist} Hz)",
                self.center_freq + self.half_bandwidth
            )));
        }
        if self.order < 2 || self.order % 2 != 0 {
            return Err(Error::Validation(format!(
                "band-pass order must be even and at least 2, got {}",
                self.order
            )));
        }
        Ok(())
    }
}

/// A second-order section `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z_inv * self.a[0] + z2 * self.a[1];
        num / den
    }

    /// Transposed direct form II update.
    #[inline]
    fn step(&self, state: &mut [f64; 2], x: f64) -> f64 {
        let y = self.b[0] * x + state[0];
        state[0] = self.b[1] * x - self.a[0] * y + state[1];
        state[1] = self.b[2] * x - self.a[1] * y;
        y
    }
}

/// Designed Butterworth band-pass filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandpassFilter {
    pub spec: FilterSpec,
    pub sections: Vec<Biquad>,
}

/// Recurrence state of one filtered signal.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState(Vec<[f64; 2]>);

pub fn design_bandpass(spec: &FilterSpec) -> Result<BandpassFilter> {
    spec.validate()?;
    let n = spec.order / 2;
    let fs = spec.sample_rate;
    let fs2 = 2.0 * fs;
    let warp = |f: f64| fs2 * (std::f64::consts::PI * f / fs).tan();
    let w_lo = warp(spec.center_freq - spec.half_bandwidth);
    let w_hi = warp(spec.center_freq + spec.half_bandwidth);
    let bw = w_hi - w_lo;
    let w0 = (w_lo * w_hi).sqrt();

    let mut complex_poles = Vec::with_capacity(n);
    let mut real_poles = Vec::new();
    for k in 0..n {
        let theta = std::f64::consts::PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let proto = Complex64::from_polar(1.0, theta);
        let half = proto * (bw / 2.0);
        let root = (half * half - w0 * w0).sqrt();
        for s in [half + root, half - root] {
            let z = (fs2 + s) / (fs2 - s);
            if z.norm() >= 1.0 {
                return Err(Error::FilterDesign(format!(
                    "pole {z} lies outside the unit circle"
                )));
            }
            if z.im > 1e-12 {
                complex_poles.push(z);
            } else if z.im.abs() <= 1e-12 {
                real_poles.push(z.re);
            }
        }
    }
    real_poles.sort_by(f64::total_cmp);
    if real_poles.len() % 2 != 0 || complex_poles.len() + real_poles.len() / 2 != n {
        return Err(Error::FilterDesign("could not pair filter poles".into()));
    }

    let mut denominators: Vec<[f64; 2]> = complex_poles
        .iter()
        .map(|z| [-2.0 * z.re, z.norm_sqr()])
        .collect();
    for pair in real_poles.chunks(2) {
        denominators.push([-(pair[0] + pair[1]), pair[0] * pair[1]]);
    }

    // every section carries one zero at z = 1 and one at z = −1, and is
    // scaled to unit gain at the centre of the band
    let center = 2.0 * (w0 / fs2).atan();
    let z_inv = Complex64::from_polar(1.0, -center);
    let sections = denominators
        .into_iter()
        .map(|a| {
            let raw = Biquad { b: [1.0, 0.0, -1.0], a };
            let g = 1.0 / raw.response(z_inv).norm();
            Biquad {
                b: [g, 0.0, -g],
                a,
            }
        })
        .collect();
    Ok(BandpassFilter {
        spec: *spec,
        sections,
    })
}

impl BandpassFilter {
    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex64 {
        let omega = 2.0 * std::f64::consts::PI * freq / self.spec.sample_rate;
        let z_inv = Complex64::from_polar(1.0, -omega);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude_db(&self, freq: f64) -> f64 {
        20.0 * self.response(freq).norm().log10()
    }

    pub fn new_state(&self) -> FilterState {
        FilterState(vec![[0.0; 2]; self.sections.len()])
    }

    #[inline]
    pub fn process_sample(&self, state: &mut FilterState, x: f64) -> f64 {
        self.sections
            .iter()
            .zip(state.0.iter_mut())
            .fold(x, |v, (s, st)| s.step(st, v))
    }

    /// Filters a whole signal from a zero initial state.
    pub fn filter(&self, signal: &[f64]) -> Vec<f64> {
        let mut state = self.new_state();
        signal
            .iter()
            .map(|&x| self.process_sample(&mut state, x))
            .collect()
    }
}

/// Pass-band shape shared by every filter of a bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandParams {
    pub half_bandwidth: f64,
    pub order: usize,
}

impl Default for BandParams {
    fn default() -> Self {
        Self {
            half_bandwidth: 1.0,
            order: 8,
        }
    }
}

/// One band-pass filter per stimulus frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    stim_freqs: Vec<f64>,
    filters: Vec<BandpassFilter>,
}

impl FilterBank {
    pub fn new(stim_freqs: &[f64], band: &BandParams, sample_rate: f64) -> Result<Self> {
        if stim_freqs.is_empty() {
            return Err(Error::Validation("at least one stimulus frequency is required".into()));
        }
        let filters = stim_freqs
            .iter()
            .map(|&center_freq| {
                design_bandpass(&FilterSpec {
                    center_freq,
                    half_bandwidth: band.half_bandwidth,
                    order: band.order,
                    sample_rate,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FilterBank {
            stim_freqs: stim_freqs.to_vec(),
            filters,
        })
    }

    pub fn stim_freqs(&self) -> &[f64] {
        &self.stim_freqs
    }

    pub fn filters(&self) -> &[BandpassFilter] {
        &self.filters
    }

    pub fn sample_rate(&self) -> f64 {
        self.filters[0].spec.sample_rate
    }

    /// Stacks one filtered copy of the trial per stimulus frequency.
    pub fn extend(&self, trial: &Trial) -> Result<ExtendedTrial> {
        if (trial.sample_rate() - self.sample_rate()).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "trial sampled at {} Hz, filter bank designed for {} Hz",
                trial.sample_rate(),
                self.sample_rate()
            )));
        }
        let c = trial.channels();
        let n = trial.samples();
        let mut values = DMatrix::zeros(self.filters.len() * c, n);
        for (f, filter) in self.filters.iter().enumerate() {
            for ch in 0..c {
                let filtered = filter.filter(&trial.row(ch));
                for (k, v) in filtered.into_iter().enumerate() {
                    values[(f * c + ch, k)] = v;
                }
            }
        }
        Ok(ExtendedTrial {
            stim_freqs: self.stim_freqs.clone(),
            base_channels: c,
            trial: Trial::new(values, trial.sample_rate())?,
        })
    }

    /// A streaming filter for `channels` input channels with persistent state.
    pub fn stream(&self, channels: usize) -> StreamingFilterBank {
        let states = self
            .filters
            .iter()
            .flat_map(|f| (0..channels).map(move |_| f.new_state()))
            .collect();
        StreamingFilterBank {
            bank: self.clone(),
            channels,
            states,
        }
    }
}

/// A continuously running filter bank; state persists across calls.
#[derive(Debug, Clone)]
pub struct StreamingFilterBank {
    bank: FilterBank,
    channels: usize,
    states: Vec<FilterState>,
}

impl StreamingFilterBank {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn output_channels(&self) -> usize {
        self.channels * self.bank.filters.len()
    }

    /// Filters one multichannel sample into `out` (length F·C, block order).
    pub fn process_frame(&mut self, frame: &[f64], out: &mut [f64]) -> Result<()> {
        if frame.len() != self.channels {
            return Err(Error::DimensionMismatch {
                expected: self.channels,
                found: frame.len(),
            });
        }
        let c = self.channels;
        for (f, filter) in self.bank.filters.iter().enumerate() {
            for (ch, &x) in frame.iter().enumerate() {
                out[f * c + ch] = filter.process_sample(&mut self.states[f * c + ch], x);
            }
        }
        Ok(())
    }
}

/// A trial stacked over frequency bands: row block `f` holds the base trial
/// filtered around `stim_freqs[f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedTrial {
    pub stim_freqs: Vec<f64>,
    pub base_channels: usize,
    pub trial: Trial,
}

impl ExtendedTrial {
    /// Rows of frequency block `f`.
    pub fn block(&self, f: usize) -> Result<Trial> {
        if f >= self.stim_freqs.len() {
            return Err(Error::Validation(format!("no frequency block {f}")));
        }
        let c = self.base_channels;
        Trial::new(
            self.trial.values().rows(f * c, c).into_owned(),
            self.trial.sample_rate(),
        )
    }
}

/// Filters `trial` around each of `stim_freqs` and stacks the results.
pub fn extend_trial(trial: &Trial, stim_freqs: &[f64], band: &BandParams) -> Result<ExtendedTrial> {
    FilterBank::new(stim_freqs, band, trial.sample_rate())?.extend(trial)
}

/// Drops the first `floor(latency · fs)` samples.
pub fn trim_latency(trial: &Trial, latency_seconds: f64) -> Result<Trial> {
    if !(latency_seconds >= 0.0) || !latency_seconds.is_finite() {
        return Err(Error::Validation(format!(
            "latency must be a non-negative number of seconds, got {latency_seconds}"
        )));
    }
    let skip = seconds_to_samples(latency_seconds, trial.sample_rate());
    if skip == 0 {
        return Ok(trial.clone());
    }
    if skip >= trial.samples() {
        return Err(Error::Validation(format!(
            "latency of {latency_seconds} s removes all {} samples",
            trial.samples()
        )));
    }
    trial.slice(skip, trial.samples())
}

/// Sliding-window geometry: windows of `window_seconds`, one every
/// `step_seconds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub window_seconds: f64,
    pub step_seconds: f64,
}

impl EpochPlan {
    pub fn new(window_seconds: f64, step_seconds: f64) -> Result<Self> {
        let plan = EpochPlan {
            window_seconds,
            step_seconds,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_seconds > 0.0 && self.window_seconds > self.step_seconds) {
            return Err(Error::Validation(format!(
                "epoch plan needs window > step > 0, got window {} s, step {} s",
                self.window_seconds, self.step_seconds
            )));
        }
        Ok(())
    }

    /// `(window, step)` in samples; both must be at least one sample.
    pub fn sample_counts(&self, sample_rate: f64) -> Result<(usize, usize)> {
        self.validate()?;
        let w = seconds_to_samples(self.window_seconds, sample_rate);
        let d = seconds_to_samples(self.step_seconds, sample_rate);
        if d == 0 || w <= d {
            return Err(Error::Validation(format!(
                "epoch plan collapses at {sample_rate} Hz (window {w}, step {d} samples)"
            )));
        }
        Ok((w, d))
    }

    /// Sample ranges `[end − w, end)` for every epoch end `w, w + δ, … ≤ len`.
    pub fn bounds(&self, len: usize, sample_rate: f64) -> Result<Vec<(usize, usize)>> {
        let (w, d) = self.sample_counts(sample_rate)?;
        Ok((w..=len).step_by(d).map(|end| (end - w, end)).collect())
    }
}

/// Cuts a recording into overlapping epochs. Recordings shorter than one
/// window yield no epochs.
pub fn epoch_stream(recording: &Trial, plan: &EpochPlan) -> Result<Vec<Trial>> {
    plan.bounds(recording.samples(), recording.sample_rate())?
        .into_iter()
        .map(|(start, end)| recording.slice(start, end))
        .collect()
}
