//! Synthetic SSVEP-like recordings and the `EEGSET v1` dataset format.
//!
//! Each stimulus trial carries a sinusoid at its class frequency (plus
//! optional harmonics) projected through a fixed spatial pattern, on top of
//! pink background noise mixed across channels by a random orthogonal
//! matrix. Rest trials carry noise only. With a non-zero carry-over, the
//! head of every trial still oscillates at the previous trial's frequency.
//!
//! Class labels are 1-based: label `f` (1 ≤ f ≤ F) is the stimulus at
//! `stim_freqs[f − 1]`, label `F + 1` is the rest class.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocessing::seconds_to_samples;
use crate::trial::Trial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub channels: usize,
    pub sample_rate: f64,
    pub stim_freqs: Vec<f64>,
    pub trial_seconds: f64,
    pub trials_per_class: usize,
    /// Power of the SSVEP fundamental relative to the broadband noise power,
    /// averaged over channels.
    pub snr_db: f64,
    pub harmonics: usize,
    pub transition_carryover_seconds: f64,
    /// Fixes the subject: noise mixing and SSVEP spatial pattern.
    pub seed: u64,
    /// Selects an independent recording session of the same subject.
    #[serde(default)]
    pub session: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            sample_rate: 256.0,
            stim_freqs: vec![13.0, 17.0, 21.0],
            trial_seconds: 6.0,
            trials_per_class: 8,
            snr_db: -5.0,
            harmonics: 1,
            transition_carryover_seconds: 0.0,
            seed: 0,
            session: 0,
        }
    }
}

impl GenConfig {
    pub fn classes(&self) -> usize {
        self.stim_freqs.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Validation("channels must be positive".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if self.stim_freqs.is_empty() {
            return Err(Error::Validation("at least one stimulus frequency".into()));
        }
        for &f in &self.stim_freqs {
            if !(f > 0.0 && f < self.sample_rate / 2.0) {
                return Err(Error::Validation(format!(
                    "stimulus frequency {f} Hz outside (0, Nyquist)"
                )));
            }
        }
        if !(self.trial_seconds > 0.0) || seconds_to_samples(self.trial_seconds, self.sample_rate) < 2 {
            return Err(Error::Validation("trials must span at least two samples".into()));
        }
        if self.trials_per_class == 0 {
            return Err(Error::Validation("trials_per_class must be positive".into()));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Validation("snr_db must be finite".into()));
        }
        if !(self.transition_carryover_seconds >= 0.0)
            || self.transition_carryover_seconds > self.trial_seconds
        {
            return Err(Error::Validation(
                "carry-over must lie between 0 and the trial length".into(),
            ));
        }
        Ok(())
    }
}

/// Recording-level metadata shared by every trial of a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub channels: usize,
    pub sample_rate: f64,
    pub stim_freqs: Vec<f64>,
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GenConfig>,
}

/// Labelled trials in recording order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
    pub labels: Vec<usize>,
    pub meta: DatasetMeta,
}

impl TrialSet {
    pub fn new(trials: Vec<Trial>, labels: Vec<usize>, meta: DatasetMeta) -> Result<Self> {
        let set = TrialSet {
            trials,
            labels,
            meta,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials.len() != self.labels.len() {
            return Err(Error::Validation(format!(
                "{} trials but {} labels",
                self.trials.len(),
                self.labels.len()
            )));
        }
        if self.meta.classes < 2 {
            return Err(Error::Validation("a dataset needs at least two classes".into()));
        }
        for (i, (t, &l)) in self.trials.iter().zip(&self.labels).enumerate() {
            if l == 0 || l > self.meta.classes {
                return Err(Error::Validation(format!(
                    "trial {i} has label {l}, outside 1..={}",
                    self.meta.classes
                )));
            }
            if t.channels() != self.meta.channels {
                return Err(Error::DimensionMismatch {
                    expected: self.meta.channels,
                    found: t.channels(),
                });
            }
            if t.sample_rate() != self.meta.sample_rate {
                return Err(Error::Validation(format!(
                    "trial {i} sampled at {} Hz, dataset at {} Hz",
                    t.sample_rate(),
                    self.meta.sample_rate
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.meta.classes
    }

    /// Indices of the trials labelled `class`.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        (1..=self.classes())
            .map(|k| self.labels.iter().filter(|&&l| l == k).count())
            .collect()
    }

    /// The trials at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> TrialSet {
        TrialSet {
            trials: indices.iter().map(|&i| self.trials[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            meta: self.meta.clone(),
        }
    }

    /// All trials back to back, with the sample offset of each trial.
    pub fn concatenate(&self) -> Result<(Trial, Vec<usize>)> {
        let total: usize = self.trials.iter().map(Trial::samples).sum();
        let mut values = DMatrix::zeros(self.meta.channels, total);
        let mut onsets = Vec::with_capacity(self.len());
        let mut at = 0;
        for t in &self.trials {
            onsets.push(at);
            values.columns_mut(at, t.samples()).copy_from(t.values());
            at += t.samples();
        }
        Ok((Trial::new(values, self.meta.sample_rate)?, onsets))
    }
}

/// Pink (1/f) noise by Paul Kellet's refined filter applied to white noise.
struct PinkNoise {
    b: [f64; 7],
}

impl PinkNoise {
    fn new() -> Self {
        PinkNoise { b: [0.0; 7] }
    }

    fn next(&mut self, white: f64) -> f64 {
        let b = &mut self.b;
        b[0] = 0.99886 * b[0] + white * 0.0555179;
        b[1] = 0.99332 * b[1] + white * 0.0750759;
        b[2] = 0.96900 * b[2] + white * 0.1538520;
        b[3] = 0.86650 * b[3] + white * 0.3104856;
        b[4] = 0.55000 * b[4] + white * 0.5329522;
        b[5] = -0.7616 * b[5] - white * 0.0168980;
        let out = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + white * 0.5362;
        b[6] = white * 0.115926;
        out
    }
}

fn pink_source(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    const BURN_IN: usize = 1024;
    let mut pink = PinkNoise::new();
    for _ in 0..BURN_IN {
        pink.next(rng.sample(StandardNormal));
    }
    let mut out: Vec<f64> = (0..n).map(|_| pink.next(rng.sample(StandardNormal))).collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    for v in &mut out {
        *v = (*v - mean) * scale;
    }
    out
}

fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix column signs so the factorization is unique
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Fixed per-dataset structure: noise mixing and the SSVEP spatial pattern.
struct Montage {
    noise_mixing: DMatrix<f64>,
    pattern: DVector<f64>,
}

impl Montage {
    fn new(rng: &mut ChaCha8Rng, channels: usize) -> Self {
        let q = random_orthogonal(rng, channels);
        // unequal source variances, log-spaced over [0.25, 4], normalised to
        // unit average channel power
        let mut var: Vec<f64> = (0..channels)
            .map(|i| {
                let t = if channels > 1 { i as f64 / (channels - 1) as f64 } else { 0.5 };
                4f64.powf(2.0 * t - 1.0)
            })
            .collect();
        let mean_var = var.iter().sum::<f64>() / channels as f64;
        for v in &mut var {
            *v /= mean_var;
        }
        let scales = DVector::from_iterator(channels, var.iter().map(|v| v.sqrt()));
        let noise_mixing = q * DMatrix::from_diagonal(&scales);

        let raw = DVector::from_fn(channels, |_, _| 0.5 + rng.random::<f64>());
        let pattern = &raw * ((channels as f64).sqrt() / raw.norm());
        Montage {
            noise_mixing,
            pattern,
        }
    }
}

/// Writes an SSVEP response at `freq` into `out` for samples `[from, to)`.
fn add_ssvep(
    out: &mut DMatrix<f64>,
    pattern: &DVector<f64>,
    freq: f64,
    amplitude: f64,
    harmonics: usize,
    phases: &[f64],
    fs: f64,
    range: (usize, usize),
) {
    let tau = 2.0 * std::f64::consts::PI;
    for k in range.0..range.1 {
        let t = k as f64 / fs;
        let mut s = 0.0;
        for h in 0..=harmonics {
            let m = (h + 1) as f64;
            if freq * m >= fs / 2.0 {
                break;
            }
            s += (tau * freq * m * t + phases[h]).sin() / m;
        }
        let s = s * amplitude;
        for c in 0..out.nrows() {
            out[(c, k)] += pattern[c] * s;
        }
    }
}

/// Generates a labelled synthetic session.
pub fn generate(config: &GenConfig) -> Result<TrialSet> {
    config.validate()?;
    let mut montage_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let montage = Montage::new(&mut montage_rng, config.channels);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.session.wrapping_add(1));
    let k = config.classes();
    let fs = config.sample_rate;
    let n = seconds_to_samples(config.trial_seconds, fs);
    let carry = seconds_to_samples(config.transition_carryover_seconds, fs).min(n);
    let amplitude = (2.0 * 10f64.powf(config.snr_db / 10.0)).sqrt();

    let mut labels: Vec<usize> = (1..=k)
        .flat_map(|l| std::iter::repeat_n(l, config.trials_per_class))
        .collect();
    labels.shuffle(&mut rng);

    let freq_of = |label: usize| -> Option<f64> { config.stim_freqs.get(label - 1).copied() };
    let mut trials = Vec::with_capacity(labels.len());
    let mut previous: Option<(f64, f64, Vec<f64>)> = None;
    for &label in &labels {
        let sources = DMatrix::from_fn(config.channels, n, |_, _| 0.0);
        let mut sources = sources;
        for c in 0..config.channels {
            let src = pink_source(&mut rng, n);
            sources.row_mut(c).copy_from_slice(&src);
        }
        let mut values = &montage.noise_mixing * sources;

        let gain = amplitude * (0.8 + 0.4 * rng.random::<f64>());
        let phases: Vec<f64> = (0..=config.harmonics)
            .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
            .collect();
        if let Some((prev_freq, prev_gain, prev_phases)) = &previous {
            if carry > 0 {
                add_ssvep(
                    &mut values,
                    &montage.pattern,
                    *prev_freq,
                    *prev_gain,
                    config.harmonics,
                    prev_phases,
                    fs,
                    (0, carry),
                );
            }
        }
        previous = None;
        if let Some(freq) = freq_of(label) {
            add_ssvep(
                &mut values,
                &montage.pattern,
                freq,
                gain,
                config.harmonics,
                &phases,
                fs,
                (carry, n),
            );
            previous = Some((freq, gain, phases));
        }
        trials.push(Trial::new(values, fs)?);
    }

    TrialSet::new(
        trials,
        labels,
        DatasetMeta {
            channels: config.channels,
            sample_rate: fs,
            stim_freqs: config.stim_freqs.clone(),
            classes: k,
            generator: Some(config.clone()),
        },
    )
}

pub const EEGSET_FORMAT: &str = "EEGSET";
pub const EEGSET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.csv";

/// On-disk manifest of an `EEGSET v1` directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub channels: usize,
    pub sample_rate: f64,
    pub stim_freqs: Vec<f64>,
    pub classes: usize,
    pub labels: Vec<usize>,
    pub samples: Vec<usize>,
    pub payloads: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GenConfig>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Writes `set` as an `EEGSET v1` directory (created if needed).
pub fn save(set: &TrialSet, dir: &Path) -> Result<()> {
    set.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let payloads: Vec<String> = (0..set.len()).map(|i| format!("trial_{i:04}.f64")).collect();
    for (trial, name) in set.trials.iter().zip(&payloads) {
        let bytes: Vec<u8> = trial
            .to_row_major()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        write_file(&dir.join(name), &bytes)?;
    }
    let manifest = Manifest {
        format: EEGSET_FORMAT.into(),
        version: EEGSET_VERSION,
        channels: set.meta.channels,
        sample_rate: set.meta.sample_rate,
        stim_freqs: set.meta.stim_freqs.clone(),
        classes: set.meta.classes,
        labels: set.labels.clone(),
        samples: set.trials.iter().map(Trial::samples).collect(),
        payloads,
        generator: set.meta.generator.clone(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Validation(format!("cannot serialize manifest: {e}")))?;
    json.push('\n');
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    write_file(&dir.join(LABELS_FILE), labels_csv(set).as_bytes())
}

/// `trial,label` rows for external tooling.
pub fn labels_csv(set: &TrialSet) -> String {
    let mut out = String::from("trial,label\n");
    for (i, l) in set.labels.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedManifest {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads an `EEGSET v1` directory.
pub fn load(dir: &Path) -> Result<TrialSet> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| malformed(&manifest_path, e.to_string()))?;
    if let Some(v) = value.get("version").and_then(serde_json::Value::as_u64) {
        if v != u64::from(EEGSET_VERSION) {
            return Err(Error::UnsupportedVersion {
                found: v as u32,
                expected: EEGSET_VERSION,
            });
        }
    }
    let manifest: Manifest =
        serde_json::from_value(value).map_err(|e| malformed(&manifest_path, e.to_string()))?;
    if manifest.format != EEGSET_FORMAT {
        return Err(malformed(&manifest_path, format!("unknown format '{}'", manifest.format)));
    }
    let count = manifest.labels.len();
    if manifest.samples.len() != count || manifest.payloads.len() != count {
        return Err(malformed(
            &manifest_path,
            "labels, samples and payloads must have equal lengths",
        ));
    }

    let mut trials = Vec::with_capacity(count);
    for (name, &samples) in manifest.payloads.iter().zip(&manifest.samples) {
        let path: PathBuf = dir.join(name);
        if !path.is_file() {
            return Err(Error::MissingPayload(path));
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = manifest.channels * samples;
        if bytes.len() % 8 != 0 || bytes.len() / 8 != expected {
            return Err(Error::ShapeMismatch {
                path,
                expected,
                found: bytes.len() / 8,
            });
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        trials.push(Trial::from_row_major(
            manifest.channels,
            samples,
            &data,
            manifest.sample_rate,
        )?);
    }
    TrialSet::new(
        trials,
        manifest.labels,
        DatasetMeta {
            channels: manifest.channels,
            sample_rate: manifest.sample_rate,
            stim_freqs: manifest.stim_freqs,
            classes: manifest.classes,
            generator: manifest.generator,
        },
    )
    .map_err(|e| malformed(&manifest_path, e.to_string()))
}
