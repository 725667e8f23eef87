//! Evaluation: accuracy, information transfer rate, integrated
//! discrimination improvement, the bootstrap estimator benchmark and the
//! tangent-space embedding used for scatter plots.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorKind, Result};
use crate::estimators::EstimatorSpec;
use crate::manifold::{condition_ratio, karcher_mean, log_map, MeanConfig, SpdMatrix};
use crate::mdrm::{class_centers, nearest_center};
use crate::online::normalize_distances;
use crate::preprocessing::{seconds_to_samples, BandParams, FilterBank};
use crate::synthgen::TrialSet;

/// Percentage of matching labels.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Validation("accuracy of an empty set".into()));
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(100.0 * correct as f64 / truth.len() as f64)
}

/// Wolpaw bits per selection for accuracy fraction `a` over `classes`
/// targets, floored at zero. `0·log 0` terms are taken as zero.
pub fn bits_per_selection(a: f64, classes: usize) -> f64 {
    let k = classes as f64;
    let a = a.clamp(0.0, 1.0);
    let mut bits = k.log2();
    if a > 0.0 {
        bits += a * a.log2();
    }
    if a < 1.0 {
        bits += (1.0 - a) * ((1.0 - a) / (k - 1.0)).log2();
    }
    bits.max(0.0)
}

/// Information transfer rate in bits per minute.
pub fn itr(a: f64, classes: usize, selections_per_minute: f64) -> f64 {
    bits_per_selection(a, classes) * selections_per_minute
}

/// Probability-like class scores from distances: `(1 − δ̂_k)/(K − 1)` with
/// `δ̂` the distances normalized to unit sum. Scores sum to one.
pub fn discrimination_scores(distances: &[f64]) -> Vec<f64> {
    let k = distances.len() as f64;
    normalize_distances(distances)
        .iter()
        .map(|d| (1.0 - d) / (k - 1.0))
        .collect()
}

fn discrimination_slope(scores: &[Vec<f64>], truth: &[usize]) -> Result<f64> {
    let (mut ev, mut nev) = (0.0, 0.0);
    let (mut n_ev, mut n_nev) = (0usize, 0usize);
    for (row, &t) in scores.iter().zip(truth) {
        if t == 0 || t > row.len() {
            return Err(Error::Validation(format!(
                "label {t} outside 1..={}",
                row.len()
            )));
        }
        for (k, &s) in row.iter().enumerate() {
            if k + 1 == t {
                ev += s;
                n_ev += 1;
            } else {
                nev += s;
                n_nev += 1;
            }
        }
    }
    if n_ev == 0 || n_nev == 0 {
        return Err(Error::Validation(
            "IDI needs both correct-class and other-class scores".into(),
        ));
    }
    Ok(ev / n_ev as f64 - nev / n_nev as f64)
}

/// Integrated discrimination improvement of `new` over `baseline` scores
/// (one row of per-class scores per trial).
pub fn idi(new: &[Vec<f64>], baseline: &[Vec<f64>], truth: &[usize]) -> Result<f64> {
    if new.len() != truth.len() || baseline.len() != truth.len() {
        return Err(Error::Validation("score and label counts differ".into()));
    }
    Ok(discrimination_slope(new, truth)? - discrimination_slope(baseline, truth)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub replications: usize,
    pub trial_lengths_seconds: Vec<f64>,
    pub estimators: Vec<EstimatorSpec>,
    pub seed: u64,
    pub band: BandParams,
    /// Offset of every crop from trial onset.
    pub latency_seconds: f64,
    pub mean: MeanConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            replications: 1000,
            trial_lengths_seconds: (1..=10).map(|i| 0.5 * i as f64).collect(),
            estimators: EstimatorSpec::NAMES
                .iter()
                .map(|n| n.parse().expect("known estimator"))
                .collect(),
            seed: 0,
            band: BandParams::default(),
            latency_seconds: 0.0,
            mean: MeanConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self, set: &TrialSet) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Validation("replications must be positive".into()));
        }
        if self.trial_lengths_seconds.is_empty() || self.estimators.is_empty() {
            return Err(Error::Validation("need at least one length and estimator".into()));
        }
        if !(self.latency_seconds >= 0.0) {
            return Err(Error::Validation("latency must be non-negative".into()));
        }
        let fs = set.meta.sample_rate;
        let shortest = set.trials.iter().map(|t| t.samples()).min().unwrap_or(0);
        let offset = seconds_to_samples(self.latency_seconds, fs);
        for &t in &self.trial_lengths_seconds {
            let n = seconds_to_samples(t, fs);
            if !(t > 0.0) || n < 2 {
                return Err(Error::Validation(format!("trial length {t} s is too short")));
            }
            if offset + n > shortest {
                return Err(Error::Validation(format!(
                    "trial length {t} s after {} s latency exceeds the shortest trial ({} samples)",
                    self.latency_seconds, shortest
                )));
            }
        }
        for (k, &n) in set.class_counts().iter().enumerate() {
            if n < 2 {
                return Err(Error::Validation(format!(
                    "class {} has {n} trial(s); a train/test split needs at least 2",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub estimator: String,
    pub length_seconds: f64,
    pub samples: usize,
    /// Statistics over successful replications; absent when none succeeded.
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub itr_mean: Option<f64>,
    pub itr_std: Option<f64>,
    /// Mean largest-to-smallest eigenvalue ratio of the covariances used.
    pub condition_mean: Option<f64>,
    /// Mean IDI against the sample covariance baseline.
    pub idi_mean: Option<f64>,
    /// Mean shrinkage intensity, for shrinkage estimators.
    pub kappa_mean: Option<f64>,
    /// Trials whose covariance estimate did not converge at this length.
    pub estimation_failures: usize,
    /// Replications skipped because an estimate or a class mean did not
    /// converge.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub classes: usize,
    pub rows: Vec<BenchRow>,
}

/// One bootstrap replication: training and test trial indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Resample {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified resampling: each class is split in half at random, then each
/// half is resampled with replacement to its own size.
pub fn resamples(labels: &[usize], classes: usize, replications: usize, seed: u64) -> Vec<Resample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class: Vec<Vec<usize>> = (1..=classes)
        .map(|k| (0..labels.len()).filter(|&i| labels[i] == k).collect())
        .collect();
    (0..replications)
        .map(|_| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for members in &by_class {
                let mut shuffled = members.clone();
                shuffled.shuffle(&mut rng);
                let (a, b) = shuffled.split_at(shuffled.len() / 2);
                for _ in 0..a.len() {
                    train.push(a[rng.random_range(0..a.len())]);
                }
                for _ in 0..b.len() {
                    test.push(b[rng.random_range(0..b.len())]);
                }
            }
            Resample { train, test }
        })
        .collect()
}

/// Per-trial estimates for one estimator and length; `None` where the
/// estimator did not converge.
struct Cell {
    covs: Vec<Option<SpdMatrix>>,
    conditions: Vec<f64>,
    kappas: Vec<Option<f64>>,
}

impl Cell {
    fn failures(&self) -> usize {
        self.covs.iter().filter(|c| c.is_none()).count()
    }
}

struct Outcome {
    accuracy: f64,
    condition: f64,
    scores: Vec<Vec<f64>>,
    kappa: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn std_dev(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    if v.len() < 2 {
        return Some(0.0);
    }
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

fn is_non_convergence(e: &Error) -> bool {
    e.kind() == ErrorKind::NonConvergence
}

/// Scores one replication; `None` when a needed estimate or class mean did
/// not converge.
fn run_cell(
    cell: &Cell,
    labels: &[usize],
    classes: usize,
    split: &Resample,
    mean_cfg: &MeanConfig,
) -> Result<Option<Outcome>> {
    let used = || split.train.iter().chain(&split.test);
    if used().any(|&i| cell.covs[i].is_none()) {
        return Ok(None);
    }
    let cov = |i: usize| cell.covs[i].as_ref().expect("checked above");
    let train: Vec<SpdMatrix> = split.train.iter().map(|&i| cov(i).clone()).collect();
    let train_labels: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let centers = match class_centers(&train, &train_labels, classes, mean_cfg) {
        Ok(c) => c,
        Err(e) if is_non_convergence(&e) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut correct = 0;
    let mut scores = Vec::with_capacity(split.test.len());
    for &i in &split.test {
        let c = nearest_center(&centers, cov(i))?;
        if c.label == labels[i] {
            correct += 1;
        }
        scores.push(discrimination_scores(&c.distances));
    }
    let conditions: Vec<f64> = used().map(|&i| cell.conditions[i]).collect();
    let kappas: Vec<f64> = used().filter_map(|&i| cell.kappas[i]).collect();
    Ok(Some(Outcome {
        accuracy: 100.0 * correct as f64 / split.test.len() as f64,
        condition: mean(&conditions).unwrap_or(f64::NAN),
        scores,
        kappa: mean(&kappas),
    }))
}

/// Bootstrap comparison of covariance estimators over trial lengths.
///
/// Trials are filtered once, cropped to each length from the latency
/// offset, and every estimator's covariances are computed once per crop.
/// Each replication fits class centers on its resampled training half and
/// scores its test half; the sample covariance always runs as the IDI
/// baseline. Resamples are drawn up front from the seed, so the report does
/// not depend on scheduling. Non-convergence skips the affected
/// replications and is counted in the row; other errors abort.
pub fn run_benchmark(set: &TrialSet, config: &BenchConfig) -> Result<BenchReport> {
    set.validate()?;
    config.validate(set)?;
    let fs = set.meta.sample_rate;
    let classes = set.classes();
    let bank = FilterBank::new(&set.meta.stim_freqs, &config.band, fs)?;
    let extended = set
        .trials
        .par_iter()
        .map(|t| bank.extend(t).map(|e| e.trial))
        .collect::<Result<Vec<_>>>()?;
    let offset = seconds_to_samples(config.latency_seconds, fs);

    let mut estimators = config.estimators.clone();
    let baseline = estimators
        .iter()
        .position(|e| *e == EstimatorSpec::Scm)
        .unwrap_or_else(|| {
            estimators.push(EstimatorSpec::Scm);
            estimators.len() - 1
        });
    let lengths: Vec<(f64, usize)> = config
        .trial_lengths_seconds
        .iter()
        .map(|&t| (t, seconds_to_samples(t, fs)))
        .collect();

    let jobs: Vec<(usize, usize)> = (0..estimators.len())
        .flat_map(|e| (0..lengths.len()).map(move |l| (e, l)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(e, l)| {
            let n = lengths[l].1;
            let mut cell = Cell {
                covs: Vec::with_capacity(extended.len()),
                conditions: Vec::with_capacity(extended.len()),
                kappas: Vec::with_capacity(extended.len()),
            };
            for t in &extended {
                let crop = t.slice(offset, offset + n)?;
                match estimators[e].estimate(&crop) {
                    Ok(est) => {
                        cell.kappas.push(est.kappa);
                        let spd = est.into_spd()?;
                        cell.conditions.push(condition_ratio(&spd));
                        cell.covs.push(Some(spd));
                    }
                    Err(err) if is_non_convergence(&err) => {
                        cell.kappas.push(None);
                        cell.conditions.push(f64::NAN);
                        cell.covs.push(None);
                    }
                    Err(err) => return Err(err),
                }
            }
            Ok(cell)
        })
        .collect::<Result<Vec<Cell>>>()?;
    let cell = |e: usize, l: usize| &cells[e * lengths.len() + l];

    let splits = resamples(&set.labels, classes, config.replications, config.seed);
    let mut rows = Vec::new();
    for (e, spec) in config.estimators.iter().enumerate() {
        for (l, &(seconds, samples)) in lengths.iter().enumerate() {
            let outcomes: Vec<(Option<Outcome>, Option<Outcome>)> = splits
                .par_iter()
                .map(|split| {
                    let new = run_cell(cell(e, l), &set.labels, classes, split, &config.mean)?;
                    let base =
                        run_cell(cell(baseline, l), &set.labels, classes, split, &config.mean)?;
                    Ok((new, base))
                })
                .collect::<Result<Vec<_>>>()?;
            let failures = outcomes.iter().filter(|(n, _)| n.is_none()).count();
            let ok: Vec<&Outcome> = outcomes.iter().filter_map(|(n, _)| n.as_ref()).collect();
            let accs: Vec<f64> = ok.iter().map(|n| n.accuracy).collect();
            let itrs: Vec<f64> = accs
                .iter()
                .map(|a| itr(a / 100.0, classes, 60.0 / seconds))
                .collect();
            let conds: Vec<f64> = ok.iter().map(|n| n.condition).collect();
            // IDI needs the baseline too; replications where it failed are skipped.
            let mut idis = Vec::with_capacity(ok.len());
            for ((n, b), split) in outcomes.iter().zip(&splits) {
                if let (Some(n), Some(b)) = (n, b) {
                    let truth: Vec<usize> = split.test.iter().map(|&i| set.labels[i]).collect();
                    idis.push(idi(&n.scores, &b.scores, &truth)?);
                }
            }
            let kappas: Vec<f64> = ok.iter().filter_map(|n| n.kappa).collect();
            rows.push(BenchRow {
                estimator: spec.name().to_string(),
                length_seconds: seconds,
                samples,
                accuracy_mean: mean(&accs),
                accuracy_std: std_dev(&accs),
                itr_mean: mean(&itrs),
                itr_std: std_dev(&itrs),
                condition_mean: mean(&conds),
                idi_mean: mean(&idis),
                kappa_mean: mean(&kappas),
                estimation_failures: cell(e, l).failures(),
                failures,
            });
        }
    }
    Ok(BenchReport {
        config: config.clone(),
        classes,
        rows,
    })
}

fn cell_text(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per estimator and trial length; statistics are empty when no
/// replication succeeded.
pub fn bench_csv(report: &BenchReport) -> String {
    let mut out = String::from(
        "estimator,length_s,samples,acc_mean,acc_std,itr_mean,itr_std,condition_mean,idi_mean,kappa_mean,estimation_failures,failures\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.estimator,
            r.length_seconds,
            r.samples,
            cell_text(r.accuracy_mean),
            cell_text(r.accuracy_std),
            cell_text(r.itr_mean),
            cell_text(r.itr_std),
            cell_text(r.condition_mean),
            cell_text(r.idi_mean),
            cell_text(r.kappa_mean),
            r.estimation_failures,
            r.failures
        );
    }
    out
}

/// Upper triangle of a symmetric matrix with off-diagonal entries scaled by
/// √2, so that the Euclidean norm equals the Frobenius norm.
pub fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        out.push(m[(i, i)]);
        for j in i + 1..d {
            out.push(std::f64::consts::SQRT_2 * m[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// Two-dimensional principal-component view of covariances in the tangent
/// space at their Riemannian mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub base: SpdMatrix,
    pub mean: DVector<f64>,
    pub axes: [DVector<f64>; 2],
    pub explained_variance: [f64; 2],
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
}

impl Embedding {
    /// Coordinates of another matrix (e.g. a class center) in this view.
    pub fn project(&self, p: &SpdMatrix) -> Result<[f64; 2]> {
        let v = vectorize(log_map(&self.base, p)?.as_matrix()) - &self.mean;
        Ok([v.dot(&self.axes[0]), v.dot(&self.axes[1])])
    }
}

pub fn tangent_embed(covs: &[SpdMatrix], labels: &[usize], mean_cfg: &MeanConfig) -> Result<Embedding> {
    if covs.len() < 3 {
        return Err(Error::Validation("embedding needs at least three matrices".into()));
    }
    if labels.len() != covs.len() {
        return Err(Error::Validation("one label per matrix is required".into()));
    }
    let base = karcher_mean(covs, mean_cfg)?;
    let vectors = covs
        .par_iter()
        .map(|c| log_map(&base, c).map(|s| vectorize(s.as_matrix())))
        .collect::<Result<Vec<_>>>()?;
    let dim = vectors[0].len();
    let n = vectors.len();
    let mut mean = DVector::zeros(dim);
    for v in &vectors {
        mean += v;
    }
    mean /= n as f64;
    let centered = DMatrix::from_fn(n, dim, |i, j| vectors[i][j] - mean[j]);
    // principal axes from the small n × n Gram matrix
    let gram = &centered * centered.transpose();
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = [DVector::zeros(dim), DVector::zeros(dim)];
    let mut explained = [0.0; 2];
    for (slot, &idx) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[idx];
        explained[slot] = lambda.max(0.0) / (n - 1) as f64;
        if lambda <= 1e-12 * eig.eigenvalues[order[0]].max(f64::MIN_POSITIVE) || lambda <= 0.0 {
            continue;
        }
        let mut axis = centered.transpose() * eig.eigenvectors.column(idx);
        axis /= axis.norm();
        // sign convention: largest-magnitude entry positive
        let pivot = axis.iamax();
        if axis[pivot] < 0.0 {
            axis.neg_mut();
        }
        axes[slot] = axis;
    }
    let points = (0..n)
        .map(|i| {
            let row = centered.row(i).transpose();
            [row.dot(&axes[0]), row.dot(&axes[1])]
        })
        .collect();
    Ok(Embedding {
        base,
        mean,
        axes,
        explained_variance: explained,
        points,
        labels: labels.to_vec(),
    })
}

/// `kind,index,label,x,y` rows: one per point, indexed by `trial_ids`,
/// then one per class center.
pub fn embedding_csv(embedding: &Embedding, trial_ids: &[usize], centers: &[[f64; 2]]) -> String {
    let mut out = String::from("kind,index,label,x,y\n");
    for ((p, l), i) in embedding.points.iter().zip(&embedding.labels).zip(trial_ids) {
        let _ = writeln!(out, "trial,{i},{l},{},{}", p[0], p[1]);
    }
    for (k, c) in centers.iter().enumerate() {
        let _ = writeln!(out, "center,{k},{},{},{}", k + 1, c[0], c[1]);
    }
    out
}
