//! Asynchronous online classification with occurrence gating and the
//! curve-direction criterion.
//!
//! The live recording is filtered causally, sample by sample, and cut into
//! overlapping epochs by absolute sample index. Each epoch is classified
//! against the class centers; the last `depth` labels and normalized
//! distance vectors are kept in rings. A decision is emitted when the most
//! frequent recent label occurs more often than `theta` and, with the curve
//! criterion enabled, the normalized distance to that class has decreased
//! over the rings. Rings are cleared after every decision.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdrm::{ClassModel, Classification};
use crate::preprocessing::{EpochPlan, StreamingFilterBank};
use crate::synthgen::TrialSet;
use crate::trial::Trial;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub window_seconds: f64,
    pub step_seconds: f64,
    pub depth: usize,
    pub theta: f64,
    /// Require the candidate's normalized distance to be decreasing.
    pub curve_criterion: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            window_seconds: 3.6,
            step_seconds: 0.2,
            depth: 5,
            theta: 0.7,
            curve_criterion: true,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan().validate()?;
        if self.depth == 0 {
            return Err(Error::Validation("depth must be at least 1".into()));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Validation(format!(
                "theta must lie in (0, 1], got {}",
                self.theta
            )));
        }
        Ok(())
    }

    pub fn plan(&self) -> EpochPlan {
        EpochPlan {
            window_seconds: self.window_seconds,
            step_seconds: self.step_seconds,
        }
    }

    /// Samples needed before the first decision can be taken:
    /// `w_s + (depth − 1)·δ_s`.
    pub fn min_decision_samples(&self, sample_rate: f64) -> Result<usize> {
        let (w, d) = self.plan().sample_counts(sample_rate)?;
        Ok(w + (self.depth - 1) * d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub label: usize,
    pub epoch_index: usize,
    /// Absolute sample count at the end of the deciding epoch.
    pub sample_end: usize,
    /// `sample_end` in seconds from stream start.
    pub elapsed_seconds: f64,
    pub occurrence: f64,
    pub curve_sum: f64,
}

/// One classified epoch, for trajectory logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub index: usize,
    pub sample_end: usize,
    pub label: usize,
    pub normalized_distances: Vec<f64>,
    /// Candidate, occurrence and curve sum once the rings are full.
    pub gate: Option<(usize, f64, f64)>,
    pub decided: bool,
}

/// Distances divided by their sum; uniform when they are all zero.
pub fn normalize_distances(distances: &[f64]) -> Vec<f64> {
    let sum: f64 = distances.iter().sum();
    if sum > 0.0 {
        distances.iter().map(|d| d / sum).collect()
    } else {
        vec![1.0 / distances.len() as f64; distances.len()]
    }
}

/// Occurrence frequency of each class in `labels` (1-based) and the most
/// frequent class, lowest index on ties.
pub fn occurrence(labels: &[usize], classes: usize) -> (Vec<f64>, usize) {
    let mut rho = vec![0.0; classes];
    for &l in labels {
        if (1..=classes).contains(&l) {
            rho[l - 1] += 1.0;
        }
    }
    let n = labels.len().max(1) as f64;
    for r in &mut rho {
        *r /= n;
    }
    let mut best = 0;
    for (k, r) in rho.iter().enumerate() {
        if *r > rho[best] {
            best = k;
        }
    }
    (rho, best + 1)
}

/// Sum of successive differences of the candidate's normalized distance
/// over the ring, and whether it is strictly negative.
pub fn curve_criterion(deltas: &[Vec<f64>], candidate: usize) -> (f64, bool) {
    let k = candidate - 1;
    let sum: f64 = deltas.windows(2).map(|w| w[1][k] - w[0][k]).sum();
    (sum, sum < 0.0)
}

/// Streaming classifier state for one live recording.
#[derive(Debug, Clone)]
pub struct OnlineClassifier {
    model: ClassModel,
    config: OnlineConfig,
    bank: StreamingFilterBank,
    window: usize,
    step: usize,
    rows: usize,
    // ring of the last `window` filtered samples, one row block per sample
    buffer: Vec<f64>,
    head: usize,
    samples_seen: usize,
    next_epoch_end: usize,
    epochs: usize,
    labels: VecDeque<usize>,
    deltas: VecDeque<Vec<f64>>,
    scratch: Vec<f64>,
    log: Vec<EpochRecord>,
}

impl OnlineClassifier {
    pub fn new(model: ClassModel, config: OnlineConfig) -> Result<Self> {
        config.validate()?;
        let pre = model.preprocessing();
        let (window, step) = config.plan().sample_counts(pre.sample_rate)?;
        let bank = pre.filter_bank()?.stream(pre.channels);
        let rows = bank.output_channels();
        Ok(OnlineClassifier {
            window,
            step,
            rows,
            buffer: vec![0.0; window * rows],
            head: 0,
            samples_seen: 0,
            next_epoch_end: window,
            epochs: 0,
            labels: VecDeque::with_capacity(config.depth),
            deltas: VecDeque::with_capacity(config.depth),
            scratch: vec![0.0; rows],
            log: Vec::new(),
            bank,
            model,
            config,
        })
    }

    pub fn config(&self) -> &OnlineConfig {
        &self.config
    }

    pub fn model(&self) -> &ClassModel {
        &self.model
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// Epochs classified so far.
    pub fn log(&self) -> &[EpochRecord] {
        &self.log
    }

    /// Appends one multichannel sample.
    pub fn push_sample(&mut self, sample: &[f64]) -> Result<Option<Decision>> {
        let mut out = std::mem::take(&mut self.scratch);
        let status = self.bank.process_frame(sample, &mut out);
        if let Err(e) = status {
            self.scratch = out;
            return Err(e);
        }
        let at = self.head * self.rows;
        self.buffer[at..at + self.rows].copy_from_slice(&out);
        self.scratch = out;
        self.head = (self.head + 1) % self.window;
        self.samples_seen += 1;
        if self.samples_seen == self.next_epoch_end {
            self.next_epoch_end += self.step;
            return self.close_epoch();
        }
        Ok(None)
    }

    /// Appends a block of samples; returns the decisions it triggered.
    pub fn push_samples(&mut self, frame: &Trial) -> Result<Vec<Decision>> {
        let pre = self.model.preprocessing();
        if frame.channels() != pre.channels {
            return Err(Error::DimensionMismatch {
                expected: pre.channels,
                found: frame.channels(),
            });
        }
        if frame.sample_rate() != pre.sample_rate {
            return Err(Error::Validation(format!(
                "frame sampled at {} Hz, model expects {} Hz",
                frame.sample_rate(),
                pre.sample_rate
            )));
        }
        let mut decisions = Vec::new();
        let mut sample = vec![0.0; frame.channels()];
        for n in 0..frame.samples() {
            for (c, v) in sample.iter_mut().enumerate() {
                *v = frame.values()[(c, n)];
            }
            if let Some(d) = self.push_sample(&sample)? {
                decisions.push(d);
            }
        }
        Ok(decisions)
    }

    fn epoch(&self) -> Result<Trial> {
        // oldest sample sits at `head` once the ring is full
        let values = DMatrix::from_fn(self.rows, self.window, |r, j| {
            self.buffer[((self.head + j) % self.window) * self.rows + r]
        });
        Trial::new(values, self.model.preprocessing().sample_rate)
    }

    fn close_epoch(&mut self) -> Result<Option<Decision>> {
        let epoch = self.epoch()?;
        let cov = self.model.preprocessing().estimator.estimate_spd(&epoch)?;
        let Classification { label, distances } = self.model.classify_covariance(&cov)?;
        let normalized = normalize_distances(&distances);
        let index = self.epochs;
        self.epochs += 1;

        let depth = self.config.depth;
        if self.labels.len() == depth {
            self.labels.pop_front();
            self.deltas.pop_front();
        }
        self.labels.push_back(label);
        self.deltas.push_back(normalized.clone());

        let mut record = EpochRecord {
            index,
            sample_end: self.samples_seen,
            label,
            normalized_distances: normalized,
            gate: None,
            decided: false,
        };
        let mut decision = None;
        if self.labels.len() == depth {
            let labels: Vec<usize> = self.labels.iter().copied().collect();
            let (rho, candidate) = occurrence(&labels, self.model.classes());
            let deltas: Vec<Vec<f64>> = self.deltas.iter().cloned().collect();
            let (curve_sum, curve_ok) = curve_criterion(&deltas, candidate);
            let occ = rho[candidate - 1];
            record.gate = Some((candidate, occ, curve_sum));
            if occ > self.config.theta && (curve_ok || !self.config.curve_criterion) {
                record.decided = true;
                decision = Some(Decision {
                    label: candidate,
                    epoch_index: index,
                    sample_end: self.samples_seen,
                    elapsed_seconds: self.samples_seen as f64
                        / self.model.preprocessing().sample_rate,
                    occurrence: occ,
                    curve_sum,
                });
                self.labels.clear();
                self.deltas.clear();
            }
        }
        self.log.push(record);
        Ok(decision)
    }
}

/// `index,sample_end,label,candidate,rho,delta,decided` rows; gate columns
/// are empty until the rings fill.
pub fn epoch_log_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("index,sample_end,label,candidate,rho,delta,decided\n");
    for r in records {
        let _ = write!(out, "{},{},{},", r.index, r.sample_end, r.label);
        match r.gate {
            Some((c, rho, delta)) => {
                let _ = write!(out, "{c},{rho},{delta},");
            }
            None => out.push_str(",,,"),
        }
        out.push_str(if r.decided { "1\n" } else { "0\n" });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub truth: usize,
    /// First decision credited to the trial: label and delay from trial
    /// onset, at least one epoch step.
    pub decision: Option<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvaluation {
    pub trials: Vec<TrialOutcome>,
    pub decisions: Vec<Decision>,
    pub epochs: Vec<EpochRecord>,
}

impl StreamEvaluation {
    pub fn decided(&self) -> usize {
        self.trials.iter().filter(|t| t.decision.is_some()).count()
    }

    pub fn held_back(&self) -> usize {
        self.trials.len() - self.decided()
    }

    /// Percentage of decided trials whose first decision is correct.
    pub fn accuracy(&self) -> Option<f64> {
        let decided = self.decided();
        if decided == 0 {
            return None;
        }
        let correct = self
            .trials
            .iter()
            .filter(|t| matches!(t.decision, Some((l, _)) if l == t.truth))
            .count();
        Some(100.0 * correct as f64 / decided as f64)
    }

    /// Mean delay from trial onset over decided trials.
    pub fn mean_delay(&self) -> Option<f64> {
        let delays: Vec<f64> = self
            .trials
            .iter()
            .filter_map(|t| t.decision.map(|(_, d)| d))
            .collect();
        if delays.is_empty() {
            None
        } else {
            Some(delays.iter().sum::<f64>() / delays.len() as f64)
        }
    }
}

/// Replays the trials back to back as one recording and attributes each
/// trial the first decision whose epoch ends inside it, with trial windows
/// shifted one epoch step late: an epoch ending less than one step after an
/// onset holds almost only the previous trial and is credited to it.
pub fn evaluate_stream(
    set: &TrialSet,
    model: &ClassModel,
    config: &OnlineConfig,
) -> Result<StreamEvaluation> {
    model.check_compatible(set)?;
    let mut clf = OnlineClassifier::new(model.clone(), *config)?;
    let (recording, onsets) = set.concatenate()?;
    let decisions = clf.push_samples(&recording)?;
    let fs = set.meta.sample_rate;
    let (_, step) = config.plan().sample_counts(fs)?;
    let trials = set
        .trials
        .iter()
        .zip(&onsets)
        .zip(&set.labels)
        .map(|((t, &onset), &truth)| {
            let (start, end) = (onset + step, onset + t.samples() + step);
            let decision = decisions
                .iter()
                .find(|d| d.sample_end >= start && d.sample_end < end)
                .map(|d| (d.label, (d.sample_end - onset) as f64 / fs));
            TrialOutcome { truth, decision }
        })
        .collect();
    Ok(StreamEvaluation {
        trials,
        decisions,
        epochs: clf.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{EstimatorSpec, ShrinkageSpec, ShrinkageTarget};
    use crate::manifold::MeanConfig;
    use crate::mdrm::Preprocessing;
    use crate::preprocessing::BandParams;
    use crate::synthgen::{generate, GenConfig};

    #[test]
    fn occurrence_examples() {
        let (rho, c) = occurrence(&[1, 1, 1, 1, 1], 4);
        assert_eq!((rho[0], c), (1.0, 1));
        let (rho, c) = occurrence(&[1, 1, 2, 1, 3], 4);
        assert_eq!(c, 1);
        assert!((rho[0] - 0.6).abs() < 1e-15 && !(rho[0] > 0.7));
        let (rho, c) = occurrence(&[2, 2, 2, 2, 1], 4);
        assert_eq!(c, 2);
        assert!(rho[1] > 0.7);
        assert_eq!(occurrence(&[3, 2], 4).1, 2);
    }

    #[test]
    fn curve_criterion_examples() {
        let falling: Vec<Vec<f64>> = (0..5).map(|j| vec![0.5 - 0.05 * j as f64, 0.5]).collect();
        let (s, ok) = curve_criterion(&falling, 1);
        assert!(s < 0.0 && ok);
        let flat = vec![vec![0.3, 0.7]; 5];
        assert_eq!(curve_criterion(&flat, 1), (0.0, false));
        assert_eq!(curve_criterion(&flat[..1], 1), (0.0, false));
    }

    #[test]
    fn normalized_distances_sum_to_one() {
        let n = normalize_distances(&[1.0, 2.0, 5.0]);
        assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(normalize_distances(&[0.0, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn config_validation_and_minimum_samples() {
        let c = OnlineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.min_decision_samples(256.0).unwrap(), 921 + 4 * 51);
        for bad in [
            OnlineConfig { depth: 0, ..c },
            OnlineConfig { theta: 0.0, ..c },
            OnlineConfig { theta: 1.5, ..c },
            OnlineConfig { step_seconds: 4.0, ..c },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn model_for(set: &TrialSet) -> ClassModel {
        let pre = Preprocessing::for_dataset(
            set,
            BandParams::default(),
            0.0,
            EstimatorSpec::Shrinkage(ShrinkageSpec::auto(ShrinkageTarget::Schafer)),
        );
        ClassModel::train(set, pre, &MeanConfig::default()).unwrap()
    }

    fn one_class_stream(set: &TrialSet, class: usize) -> TrialSet {
        set.subset(&set.class_indices(class))
    }

    #[test]
    fn frame_segmentation_does_not_change_decisions() {
        let set = generate(&GenConfig {
            snr_db: 0.0,
            trials_per_class: 2,
            seed: 2,
            ..GenConfig::default()
        })
        .unwrap();
        let model = model_for(&set);
        let (rec, _) = set.concatenate().unwrap();
        let rec = rec.slice(0, 2400).unwrap();
        let mut whole = OnlineClassifier::new(model.clone(), OnlineConfig::default()).unwrap();
        let a = whole.push_samples(&rec).unwrap();
        let mut pieces = OnlineClassifier::new(model, OnlineConfig::default()).unwrap();
        let mut b = Vec::new();
        let mut at = 0;
        for len in [1, 7, 300, 1, 64].iter().cycle() {
            if at >= rec.samples() {
                break;
            }
            let end = (at + len).min(rec.samples());
            b.extend(pieces.push_samples(&rec.slice(at, end).unwrap()).unwrap());
            at = end;
        }
        assert_eq!(a, b);
        assert_eq!(whole.log(), pieces.log());
    }

    #[test]
    fn high_snr_single_class_stream_decides_every_trial_correctly() {
        let set = generate(&GenConfig {
            snr_db: 40.0,
            seed: 3,
            ..GenConfig::default()
        })
        .unwrap();
        let model = model_for(&set);
        let stream = one_class_stream(&set, 2);
        let occurrence_only = OnlineConfig {
            curve_criterion: false,
            ..OnlineConfig::default()
        };
        let eval = evaluate_stream(&stream, &model, &occurrence_only).unwrap();
        assert_eq!(eval.held_back(), 0);
        assert_eq!(eval.accuracy(), Some(100.0));
        assert_eq!(eval.decisions[0].label, 2);
        // a steady stream has no trend, so the curve gate only filters
        let eval = evaluate_stream(&stream, &model, &OnlineConfig::default()).unwrap();
        assert!(eval.decided() > 0);
        assert_eq!(eval.accuracy(), Some(100.0));
    }

    #[test]
    fn no_decision_before_the_rings_fill() {
        let set = generate(&GenConfig {
            snr_db: 40.0,
            seed: 4,
            ..GenConfig::default()
        })
        .unwrap();
        let model = model_for(&set);
        let cfg = OnlineConfig {
            curve_criterion: false,
            ..OnlineConfig::default()
        };
        let min = cfg.min_decision_samples(256.0).unwrap();
        let stream = one_class_stream(&set, 1);
        let (rec, _) = stream.concatenate().unwrap();
        let mut clf = OnlineClassifier::new(model, cfg).unwrap();
        assert!(clf.push_samples(&rec.slice(0, min - 1).unwrap()).unwrap().is_empty());
        let d = clf.push_samples(&rec.slice(min - 1, min).unwrap()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].sample_end, min);
        assert_eq!(d[0].epoch_index, 4);
    }

    #[test]
    fn gate_soundness_and_telescoping_on_the_log() {
        let set = generate(&GenConfig {
            snr_db: -5.0,
            transition_carryover_seconds: 1.5,
            seed: 5,
            ..GenConfig::default()
        })
        .unwrap();
        let model = model_for(&set);
        let cfg = OnlineConfig::default();
        let eval = evaluate_stream(&set, &model, &cfg).unwrap();
        assert!(!eval.decisions.is_empty());
        for d in &eval.decisions {
            assert!(d.occurrence > cfg.theta && d.curve_sum < 0.0);
        }
        for r in &eval.epochs {
            assert!((r.normalized_distances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let csv = epoch_log_csv(&eval.epochs);
        assert_eq!(csv.lines().count(), eval.epochs.len() + 1);
    }

    #[test]
    fn raising_theta_never_adds_decisions() {
        let set = generate(&GenConfig {
            snr_db: -5.0,
            trials_per_class: 3,
            seed: 6,
            ..GenConfig::default()
        })
        .unwrap();
        let model = model_for(&set);
        let mut last = usize::MAX;
        for theta in [0.3, 0.5, 0.7, 0.9, 1.0] {
            let cfg = OnlineConfig {
                theta,
                curve_criterion: false,
                ..OnlineConfig::default()
            };
            let n = evaluate_stream(&set, &model, &cfg).unwrap().decisions.len();
            assert!(n <= last, "theta {theta}: {n} > {last}");
            last = n;
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let set = generate(&GenConfig {
            trials_per_class: 1,
            seed: 7,
            ..GenConfig::default()
        })
        .unwrap();
        let mut clf = OnlineClassifier::new(model_for(&set), OnlineConfig::default()).unwrap();
        let bad = Trial::new(DMatrix::zeros(3, 10), 256.0).unwrap();
        assert!(clf.push_samples(&bad).is_err());
        assert!(clf.push_sample(&[0.0; 3]).is_err());
    }
}
