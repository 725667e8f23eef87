//! Minimum distance to Riemannian mean classification.
//!
//! Training turns every labelled trial into one covariance of its
//! frequency-stacked extension and averages each class on the manifold.
//! Classification picks the class center closest in affine-invariant
//! distance; ties go to the lowest class index.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorSpec;
use crate::manifold::{distance, karcher_mean, MeanConfig, SpdMatrix};
use crate::preprocessing::{seconds_to_samples, trim_latency, BandParams, FilterBank};
use crate::synthgen::TrialSet;
use crate::trial::Trial;

/// How raw trials become covariances. Stored with the model so that
/// classification reproduces training exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub channels: usize,
    pub sample_rate: f64,
    pub stim_freqs: Vec<f64>,
    pub band: BandParams,
    /// Seconds discarded at the start of every trial.
    pub latency_seconds: f64,
    /// Seconds kept after the latency trim; the whole remainder when absent.
    #[serde(default)]
    pub duration_seconds: Option<f64>,
    pub estimator: EstimatorSpec,
}

impl Preprocessing {
    pub fn validate(&self) -> Result<()> {
        if !(self.latency_seconds >= 0.0) {
            return Err(Error::Validation("latency must be non-negative".into()));
        }
        if let Some(d) = self.duration_seconds {
            if !(d.is_finite() && seconds_to_samples(d, self.sample_rate) >= 2) {
                return Err(Error::Validation(format!(
                    "duration of {d} s leaves fewer than two samples"
                )));
            }
        }
        self.filter_bank().map(|_| ())
    }

    pub fn filter_bank(&self) -> Result<FilterBank> {
        FilterBank::new(&self.stim_freqs, &self.band, self.sample_rate)
    }

    /// Dimension of the covariances: stimulus count times channels.
    pub fn dim(&self) -> usize {
        self.stim_freqs.len() * self.channels
    }

    fn check_trial(&self, trial: &Trial) -> Result<()> {
        if trial.channels() != self.channels {
            return Err(Error::DimensionMismatch {
                expected: self.channels,
                found: trial.channels(),
            });
        }
        if trial.sample_rate() != self.sample_rate {
            return Err(Error::Validation(format!(
                "trial sampled at {} Hz, model expects {} Hz",
                trial.sample_rate(),
                self.sample_rate
            )));
        }
        Ok(())
    }

    /// Covariance of one raw trial: trim, filter and stack, estimate.
    pub fn covariance(&self, trial: &Trial) -> Result<SpdMatrix> {
        self.covariance_with(&self.filter_bank()?, trial)
    }

    fn covariance_with(&self, bank: &FilterBank, trial: &Trial) -> Result<SpdMatrix> {
        self.check_trial(trial)?;
        let mut trimmed = trim_latency(trial, self.latency_seconds)?;
        if let Some(d) = self.duration_seconds {
            let n = seconds_to_samples(d, self.sample_rate);
            if n > trimmed.samples() {
                return Err(Error::Validation(format!(
                    "trial has {} samples after the latency trim, {d} s needs {n}",
                    trimmed.samples()
                )));
            }
            trimmed = trimmed.slice(0, n)?;
        }
        let extended = bank.extend(&trimmed)?;
        self.estimator.estimate_spd(&extended.trial)
    }

    /// Covariances of many trials, computed in parallel, in input order.
    pub fn covariances(&self, trials: &[Trial]) -> Result<Vec<SpdMatrix>> {
        let bank = self.filter_bank()?;
        trials
            .par_iter()
            .map(|t| self.covariance_with(&bank, t))
            .collect()
    }

    /// Preprocessing matching a dataset's recording parameters.
    pub fn for_dataset(
        set: &TrialSet,
        band: BandParams,
        latency_seconds: f64,
        estimator: EstimatorSpec,
    ) -> Self {
        Preprocessing {
            channels: set.meta.channels,
            sample_rate: set.meta.sample_rate,
            stim_freqs: set.meta.stim_freqs.clone(),
            band,
            latency_seconds,
            duration_seconds: None,
            estimator,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    /// 1-based class label.
    pub label: usize,
    /// Distance to every class center, by class.
    pub distances: Vec<f64>,
}

/// Trained class centers with the preprocessing that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    centers: Vec<SpdMatrix>,
    preprocessing: Preprocessing,
}

/// Per-class Riemannian means of labelled covariances (labels 1-based).
pub fn class_centers(
    covs: &[SpdMatrix],
    labels: &[usize],
    classes: usize,
    mean: &MeanConfig,
) -> Result<Vec<SpdMatrix>> {
    if covs.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} covariances but {} labels",
            covs.len(),
            labels.len()
        )));
    }
    if classes < 2 {
        return Err(Error::Validation("at least two classes are required".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > classes) {
        return Err(Error::Validation(format!(
            "label {bad} outside 1..={classes}"
        )));
    }
    let groups: Vec<Vec<SpdMatrix>> = (1..=classes)
        .map(|k| {
            covs.iter()
                .zip(labels)
                .filter(|&(_, &l)| l == k)
                .map(|(c, _)| c.clone())
                .collect()
        })
        .collect();
    if let Some(k) = groups.iter().position(Vec::is_empty) {
        return Err(Error::Validation(format!("class {} has no trials", k + 1)));
    }
    groups
        .par_iter()
        .enumerate()
        .map(|(k, g)| {
            karcher_mean(g, mean).map_err(|e| Error::Class {
                class: k + 1,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Nearest center under the Riemannian distance; ties go to the lowest index.
pub fn nearest_center(centers: &[SpdMatrix], cov: &SpdMatrix) -> Result<Classification> {
    let distances = centers
        .iter()
        .map(|c| distance(cov, c))
        .collect::<Result<Vec<f64>>>()?;
    let label = argmin(&distances) + 1;
    Ok(Classification { label, distances })
}

/// Index of the smallest value, first one on ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

impl ClassModel {
    pub fn new(centers: Vec<SpdMatrix>, preprocessing: Preprocessing) -> Result<Self> {
        preprocessing.validate()?;
        if centers.len() < 2 {
            return Err(Error::Validation("a model needs at least two classes".into()));
        }
        let dim = preprocessing.dim();
        if let Some(c) = centers.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.dim(),
            });
        }
        Ok(ClassModel {
            centers,
            preprocessing,
        })
    }

    /// Fits centers from precomputed covariances.
    pub fn fit(
        covs: &[SpdMatrix],
        labels: &[usize],
        classes: usize,
        preprocessing: Preprocessing,
        mean: &MeanConfig,
    ) -> Result<Self> {
        let centers = class_centers(covs, labels, classes, mean)?;
        ClassModel::new(centers, preprocessing)
    }

    /// Estimates one covariance per trial and averages each class.
    pub fn train(set: &TrialSet, preprocessing: Preprocessing, mean: &MeanConfig) -> Result<Self> {
        set.validate()?;
        let counts = set.class_counts();
        if let Some(k) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Validation(format!("class {} has no trials", k + 1)));
        }
        preprocessing.validate()?;
        let covs = preprocessing.covariances(&set.trials)?;
        ClassModel::fit(&covs, &set.labels, set.classes(), preprocessing, mean)
    }

    pub fn centers(&self) -> &[SpdMatrix] {
        &self.centers
    }

    pub fn classes(&self) -> usize {
        self.centers.len()
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }

    pub fn classify_covariance(&self, cov: &SpdMatrix) -> Result<Classification> {
        nearest_center(&self.centers, cov)
    }

    pub fn classify(&self, trial: &Trial) -> Result<Classification> {
        self.classify_covariance(&self.preprocessing.covariance(trial)?)
    }

    /// Classifies every trial in parallel, in input order.
    pub fn classify_all(&self, trials: &[Trial]) -> Result<Vec<Classification>> {
        let covs = self.preprocessing.covariances(trials)?;
        covs.iter().map(|c| self.classify_covariance(c)).collect()
    }

    /// Checks that a dataset was recorded like the training data.
    pub fn check_compatible(&self, set: &TrialSet) -> Result<()> {
        let p = &self.preprocessing;
        if set.meta.channels != p.channels
            || set.meta.sample_rate != p.sample_rate
            || set.meta.stim_freqs != p.stim_freqs
        {
            return Err(Error::Validation(format!(
                "dataset ({} ch, {} Hz, {:?} Hz) does not match the model ({} ch, {} Hz, {:?} Hz)",
                set.meta.channels,
                set.meta.sample_rate,
                set.meta.stim_freqs,
                p.channels,
                p.sample_rate,
                p.stim_freqs
            )));
        }
        if set.classes() != self.classes() {
            return Err(Error::Validation(format!(
                "dataset has {} classes, model {}",
                set.classes(),
                self.classes()
            )));
        }
        Ok(())
    }
}

/// Reference point for the potato filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotatoReference {
    /// Riemannian mean of all matrices, held fixed.
    #[default]
    GlobalMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotatoConfig {
    pub z_threshold: f64,
    pub reference: PotatoReference,
    pub mean: MeanConfig,
}

impl Default for PotatoConfig {
    fn default() -> Self {
        PotatoConfig {
            z_threshold: 2.5,
            reference: PotatoReference::GlobalMean,
            mean: MeanConfig::default(),
        }
    }
}

impl PotatoConfig {
    pub fn with_threshold(z_threshold: f64) -> Self {
        PotatoConfig {
            z_threshold,
            ..Self::default()
        }
    }
}

/// Standard deviation below which all distances count as equal.
pub const POTATO_DEGENERATE_SPREAD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotatoResult {
    pub kept: Vec<usize>,
    pub rejected: Vec<usize>,
    /// Distance spread was below [`POTATO_DEGENERATE_SPREAD`]; everything kept.
    pub degenerate: bool,
    pub distances: Vec<f64>,
    pub z_scores: Vec<f64>,
}

impl PotatoResult {
    /// Rejections per class for 1-based `labels`.
    pub fn rejections_per_class(&self, labels: &[usize], classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &i in &self.rejected {
            if let Some(&l) = labels.get(i) {
                if (1..=classes).contains(&l) {
                    counts[l - 1] += 1;
                }
            }
        }
        counts
    }
}

/// Riemannian potato: drops matrices whose distance to the global mean has a
/// z-score above the threshold.
pub fn potato_filter(covs: &[SpdMatrix], config: &PotatoConfig) -> Result<PotatoResult> {
    if !(config.z_threshold > 0.0) {
        return Err(Error::Validation("potato z threshold must be positive".into()));
    }
    if covs.len() < 2 {
        return Err(Error::Validation("potato filter needs at least two matrices".into()));
    }
    let reference = match config.reference {
        PotatoReference::GlobalMean => karcher_mean(covs, &config.mean)?,
    };
    let distances = covs
        .par_iter()
        .map(|c| distance(c, &reference))
        .collect::<Result<Vec<f64>>>()?;
    let n = distances.len() as f64;
    let mu = distances.iter().sum::<f64>() / n;
    let sigma = (distances.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n).sqrt();
    let all: Vec<usize> = (0..covs.len()).collect();
    if sigma < POTATO_DEGENERATE_SPREAD {
        return Ok(PotatoResult {
            kept: all,
            rejected: Vec::new(),
            degenerate: true,
            z_scores: vec![0.0; distances.len()],
            distances,
        });
    }
    let z_scores: Vec<f64> = distances.iter().map(|d| (d - mu) / sigma).collect();
    let (kept, rejected) = all.into_iter().partition(|&i| z_scores[i] <= config.z_threshold);
    Ok(PotatoResult {
        kept,
        rejected,
        degenerate: false,
        distances,
        z_scores,
    })
}

pub const MODEL_MAGIC: &[u8; 8] = b"MDRMODL\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    classes: usize,
    dim: usize,
    preprocessing: Preprocessing,
}

/// Binary model file: magic, little-endian `u64` header length, JSON
/// header, then `classes · dim · dim` little-endian `f64` center entries in
/// row-major order.
pub fn encode_model(model: &ClassModel) -> Result<Vec<u8>> {
    let header = ModelHeader {
        version: MODEL_VERSION,
        classes: model.classes(),
        dim: model.preprocessing.dim(),
        preprocessing: model.preprocessing.clone(),
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::Validation(format!("cannot serialize model header: {e}")))?;
    let d = header.dim;
    let mut out = Vec::with_capacity(16 + json.len() + header.classes * d * d * 8);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for c in &model.centers {
        let m = c.as_matrix();
        for i in 0..d {
            for j in 0..d {
                out.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<ClassModel> {
    let malformed = |reason: &str| Error::MalformedManifest {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if bytes.len() < 16 || &bytes[..8] != MODEL_MAGIC {
        return Err(malformed("not a model file"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| malformed("truncated header"))?;
    let value: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| malformed(&e.to_string()))?;
    if let Some(v) = value.get("version").and_then(serde_json::Value::as_u64) {
        if v != u64::from(MODEL_VERSION) {
            return Err(Error::UnsupportedVersion {
                found: v as u32,
                expected: MODEL_VERSION,
            });
        }
    }
    let header: ModelHeader =
        serde_json::from_value(value).map_err(|e| malformed(&e.to_string()))?;
    if header.dim != header.preprocessing.dim() {
        return Err(malformed("header dimension disagrees with preprocessing"));
    }
    let d = header.dim;
    let payload = &bytes[16 + len..];
    let expected = header.classes * d * d;
    if payload.len() != expected * 8 {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            expected,
            found: payload.len() / 8,
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let centers = values
        .chunks_exact(d * d)
        .map(|c| SpdMatrix::new(DMatrix::from_row_slice(d, d, c)))
        .collect::<Result<Vec<_>>>()?;
    ClassModel::new(centers, header.preprocessing)
}

pub fn save_model(model: &ClassModel, path: &Path) -> Result<()> {
    let bytes = encode_model(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ClassModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{ShrinkageSpec, ShrinkageTarget};
    use crate::manifold::testutil::{random_matrix, random_spd};
    use crate::manifold::{exp_map, SymMatrix};
    use crate::synthgen::{generate, GenConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn preprocessing_for(set: &TrialSet, latency: f64) -> Preprocessing {
        Preprocessing::for_dataset(
            set,
            BandParams::default(),
            latency,
            EstimatorSpec::Shrinkage(ShrinkageSpec::auto(ShrinkageTarget::Schafer)),
        )
    }

    fn session(snr_db: f64, session: u64, trial_seconds: f64) -> TrialSet {
        generate(&GenConfig {
            snr_db,
            session,
            trial_seconds,
            seed: 21,
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn one_trial_per_class_centers_are_the_trials() {
        let full = session(0.0, 0, 2.0);
        let idx: Vec<usize> = (1..=4).map(|k| full.class_indices(k)[0]).collect();
        let set = full.subset(&idx);
        let pre = preprocessing_for(&set, 0.0);
        let model = ClassModel::train(&set, pre.clone(), &MeanConfig::default()).unwrap();
        for (i, t) in set.trials.iter().enumerate() {
            let cov = pre.covariance(t).unwrap();
            assert_eq!(model.centers()[set.labels[i] - 1], cov);
            let c = model.classify(t).unwrap();
            assert_eq!(c.label, set.labels[i]);
            assert_eq!(c.distances[set.labels[i] - 1], 0.0);
        }
    }

    #[test]
    fn duplicated_training_lists_give_identical_centers() {
        let set = session(0.0, 0, 2.0);
        let pre = preprocessing_for(&set, 0.0);
        let a = ClassModel::train(&set, pre.clone(), &MeanConfig::default()).unwrap();
        let twice: Vec<usize> = (0..set.len()).chain(0..set.len()).collect();
        let b = ClassModel::train(&set.subset(&twice), pre, &MeanConfig::default()).unwrap();
        for (x, y) in a.centers().iter().zip(b.centers()) {
            assert!((x.as_matrix() - y.as_matrix()).abs().max() < 1e-10);
        }
    }

    #[test]
    fn high_snr_centers_are_well_separated() {
        let set = session(40.0, 0, 6.0);
        let pre = preprocessing_for(&set, 0.0);
        let covs = pre.covariances(&set.trials).unwrap();
        let model =
            ClassModel::fit(&covs, &set.labels, 4, pre, &MeanConfig::default()).unwrap();
        let mut spread: f64 = 0.0;
        for (c, &l) in covs.iter().zip(&set.labels) {
            spread = spread.max(distance(c, &model.centers()[l - 1]).unwrap());
        }
        let mut between = f64::INFINITY;
        for i in 0..4 {
            for j in i + 1..4 {
                between = between.min(distance(&model.centers()[i], &model.centers()[j]).unwrap());
            }
        }
        assert!(between / spread > 3.0, "between {between}, spread {spread}");
    }

    #[test]
    fn high_snr_held_out_session_is_classified_perfectly() {
        let train = session(40.0, 0, 6.0);
        let test = session(40.0, 1, 6.0);
        let model =
            ClassModel::train(&train, preprocessing_for(&train, 0.0), &MeanConfig::default())
                .unwrap();
        let out = model.classify_all(&test.trials).unwrap();
        let correct = out.iter().zip(&test.labels).filter(|(c, &l)| c.label == l).count();
        assert_eq!(correct, test.len());
    }

    #[test]
    fn missing_class_is_a_validation_error() {
        let set = session(0.0, 0, 2.0);
        let keep: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] != 2).collect();
        let err = ClassModel::train(&set.subset(&keep), preprocessing_for(&set, 0.0), &MeanConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn karcher_failure_reports_the_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let covs: Vec<SpdMatrix> = (0..6).map(|_| random_spd(&mut rng, 3)).collect();
        let labels = [1, 1, 1, 2, 2, 2];
        let strict = MeanConfig {
            tolerance: 1e-300,
            max_iterations: 1,
        };
        let err = class_centers(&covs, &labels, 2, &strict).unwrap_err();
        assert!(matches!(err, Error::Class { class: 1, .. }), "{err}");
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        assert_eq!(argmin(&[1.0, 0.5, 0.5]), 1);
        let p = SpdMatrix::from_diagonal(&[2.0, 1.0]).unwrap();
        let q = SpdMatrix::from_diagonal(&[0.5, 1.0]).unwrap();
        let c = nearest_center(&[p, q], &SpdMatrix::identity(2)).unwrap();
        assert_eq!(c.distances[0], c.distances[1]);
        assert_eq!(c.label, 1);
    }

    #[test]
    fn label_is_stable_under_monotone_transforms_and_congruence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let centers: Vec<SpdMatrix> = (0..4).map(|_| random_spd(&mut rng, 5)).collect();
        let w = random_matrix(&mut rng, 5, 5) + DMatrix::identity(5, 5) * 2.0;
        let moved: Vec<SpdMatrix> = centers.iter().map(|c| c.congruence(&w).unwrap()).collect();
        for _ in 0..20 {
            let x = random_spd(&mut rng, 5);
            let a = nearest_center(&centers, &x).unwrap();
            let squashed: Vec<f64> = a.distances.iter().map(|d| (3.0 * d).exp()).collect();
            assert_eq!(argmin(&squashed) + 1, a.label);
            let b = nearest_center(&moved, &x.congruence(&w).unwrap()).unwrap();
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn centers_follow_congruence_of_training_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let covs: Vec<SpdMatrix> = (0..8).map(|_| random_spd(&mut rng, 4)).collect();
        let labels = [1, 2, 1, 2, 1, 2, 1, 2];
        let w = random_matrix(&mut rng, 4, 4) + DMatrix::identity(4, 4) * 2.0;
        let moved: Vec<SpdMatrix> = covs.iter().map(|c| c.congruence(&w).unwrap()).collect();
        let a = class_centers(&covs, &labels, 2, &MeanConfig::default()).unwrap();
        let b = class_centers(&moved, &labels, 2, &MeanConfig::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let expect = x.congruence(&w).unwrap();
            let err = (expect.as_matrix() - y.as_matrix()).norm() / expect.as_matrix().norm();
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn preprocessing_mismatch_is_rejected() {
        let set = session(0.0, 0, 2.0);
        let model =
            ClassModel::train(&set, preprocessing_for(&set, 0.0), &MeanConfig::default()).unwrap();
        let narrow = Trial::new(DMatrix::zeros(4, 512), 256.0).unwrap();
        assert!(model.classify(&narrow).is_err());
        let slow = Trial::new(set.trials[0].values().clone(), 128.0).unwrap();
        assert!(model.classify(&slow).is_err());
    }

    fn cluster_with_outlier(rng: &mut ChaCha8Rng) -> Vec<SpdMatrix> {
        let base = random_spd(rng, 4);
        let mut out: Vec<SpdMatrix> = (0..20)
            .map(|_| {
                let mut s = random_matrix(rng, 4, 4);
                s = (&s + s.transpose()) * 0.5;
                let s = SymMatrix::new(&s * (0.1 / s.norm())).unwrap();
                exp_map(&base, &s).unwrap()
            })
            .collect();
        let mut s = random_matrix(rng, 4, 4);
        s = (&s + s.transpose()) * 0.5;
        let s = SymMatrix::new(&s * (1.0 / s.norm())).unwrap();
        out.push(exp_map(&base, &s).unwrap());
        out
    }

    #[test]
    fn potato_rejects_a_constructed_outlier_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let covs = cluster_with_outlier(&mut rng);
        let r = potato_filter(&covs, &PotatoConfig::default()).unwrap();
        assert_eq!(r.rejected, vec![20]);
        assert_eq!(r.kept.len(), 20);
        assert!(!r.degenerate);
        let labels: Vec<usize> = (0..21).map(|i| 1 + i % 2).collect();
        assert_eq!(r.rejections_per_class(&labels, 2), vec![1, 0]);
    }

    #[test]
    fn potato_keeps_everything_when_degenerate_or_permissive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_spd(&mut rng, 3);
        let r = potato_filter(&vec![p; 6], &PotatoConfig::default()).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.kept, (0..6).collect::<Vec<_>>());

        let covs = cluster_with_outlier(&mut rng);
        let r = potato_filter(&covs, &PotatoConfig::with_threshold(1e6)).unwrap();
        assert!(r.rejected.is_empty());
        let mut last = usize::MAX;
        for z in [0.1, 0.5, 1.0, 2.0, 3.0] {
            let n = potato_filter(&covs, &PotatoConfig::with_threshold(z)).unwrap().rejected.len();
            assert!(n <= last);
            last = n;
        }
        assert!(potato_filter(&covs[..1], &PotatoConfig::default()).is_err());
        assert!(potato_filter(&covs, &PotatoConfig::with_threshold(0.0)).is_err());
    }

    #[test]
    fn model_file_round_trip_is_bit_exact() {
        let set = session(0.0, 0, 2.0);
        let model =
            ClassModel::train(&set, preprocessing_for(&set, 0.5), &MeanConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);

        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(decode_model(&bytes, &path), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(decode_model(b"garbage!garbage!", &path), Err(Error::MalformedManifest { .. })));
    }

    #[test]
    fn duration_crops_after_latency() {
        let set = generate(&GenConfig::default()).unwrap();
        let mut pre = preprocessing_for(&set, 1.0);
        pre.duration_seconds = Some(0.5);
        let t = &set.trials[0];
        let manual = t.slice(256, 384).unwrap();
        let mut plain = pre.clone();
        plain.latency_seconds = 0.0;
        plain.duration_seconds = None;
        assert_eq!(pre.covariance(t).unwrap(), plain.covariance(&manual).unwrap());
        pre.duration_seconds = Some(5.5);
        assert!(pre.covariance(t).is_err());
        pre.duration_seconds = Some(0.001);
        assert!(pre.validate().is_err());
    }
}
