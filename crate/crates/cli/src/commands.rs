//! Subcommand implementations. Every command writes its primary outputs
//! and a `run.json` manifest into the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use riemann_ssvep::estimators::{EstimatorSpec, FixedPointConfig};
use riemann_ssvep::manifold::{MeanConfig, SpdMatrix};
use riemann_ssvep::mdrm::{
    load_model, potato_filter, save_model, ClassModel, PotatoConfig, PotatoResult, Preprocessing,
};
use riemann_ssvep::metrics::{
    accuracy, bench_csv, embedding_csv, run_benchmark, tangent_embed, BenchConfig, Embedding,
};
use riemann_ssvep::online::{epoch_log_csv, evaluate_stream, OnlineConfig, StreamEvaluation};
use riemann_ssvep::synthgen::{self, GenConfig, TrialSet};
use riemann_ssvep::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::output::{self, cell, RunManifest};
use crate::{BenchArgs, Cli, Command, CovArgs, EmbedArgs, EvalArgs, GenArgs, PotatoArgs, TrainArgs};

pub const MODEL_FILE: &str = "model.mdrm";

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Validation(format!("cannot start thread pool: {e}")))?;
    }
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| Error::Validation("--out is required".into()))?;
    let out = output::prepare(out, cli.force)?;
    let manifest = match &cli.command {
        Command::Gen(a) => gen(a, cli.seed, &out)?,
        Command::Train(a) => train(a, cli.seed, &out)?,
        Command::Eval(a) => eval(a, cli.seed, &out)?,
        Command::Bench(a) => bench(a, cli.seed, &out)?,
        Command::Embed(a) => embed(a, cli.seed, &out)?,
        Command::Potato(a) => potato(a, cli.seed, &out)?,
    };
    manifest.write(&out)
}

fn path_value(p: &Path) -> serde_json::Value {
    json!(p.display().to_string())
}

fn preprocessing(set: &TrialSet, cov: &CovArgs) -> Result<Preprocessing> {
    let mut pre =
        Preprocessing::for_dataset(set, cov.band.band(), cov.latency, cov.estimator.clone());
    pre.duration_seconds = cov.duration;
    pre.validate()?;
    Ok(pre)
}

fn gen(a: &GenArgs, seed: u64, out: &Path) -> Result<RunManifest> {
    let config = GenConfig {
        channels: a.channels,
        sample_rate: a.sample_rate,
        stim_freqs: a.stim_freqs.clone(),
        trial_seconds: a.trial_seconds,
        trials_per_class: a.trials_per_class,
        snr_db: a.snr_db,
        harmonics: a.harmonics,
        transition_carryover_seconds: a.carryover,
        seed,
        session: a.session,
    };
    let set = synthgen::generate(&config)?;
    synthgen::save(&set, out)?;
    let mut m = RunManifest::new("gen", seed, json!({}), output::to_value(&config)?);
    m.artifacts = vec![synthgen::MANIFEST_FILE.into(), synthgen::LABELS_FILE.into()];
    m.artifacts
        .extend((0..set.len()).map(|i| format!("trial_{i:04}.f64")));
    Ok(m)
}

#[derive(Serialize)]
struct PotatoSummary {
    z_threshold: f64,
    degenerate: bool,
    kept: usize,
    rejected: Vec<usize>,
    rejections_per_class: Vec<usize>,
}

fn potato_summary(result: &PotatoResult, labels: &[usize], classes: usize, z: f64) -> PotatoSummary {
    PotatoSummary {
        z_threshold: z,
        degenerate: result.degenerate,
        kept: result.kept.len(),
        rejected: result.rejected.clone(),
        rejections_per_class: result.rejections_per_class(labels, classes),
    }
}

/// `index,label,distance,z,kept` per matrix.
fn potato_csv(result: &PotatoResult, labels: &[usize]) -> String {
    let mut s = String::from("index,label,distance,z,kept\n");
    for (i, (d, z)) in result.distances.iter().zip(&result.z_scores).enumerate() {
        let kept = !result.rejected.contains(&i);
        let _ = writeln!(s, "{i},{},{d},{z},{}", labels[i], u8::from(kept));
    }
    s
}

fn potato_config(z: f64, mean: MeanConfig) -> PotatoConfig {
    PotatoConfig {
        z_threshold: z,
        mean,
        ..PotatoConfig::default()
    }
}

#[derive(Serialize)]
struct TrainReport {
    classes: usize,
    trials_per_class: Vec<usize>,
    /// Trials that entered the class means, per class.
    used_per_class: Vec<usize>,
    /// Resubstitution accuracy on all training trials, percent.
    training_accuracy: f64,
    potato: Option<PotatoSummary>,
}

fn train(a: &TrainArgs, seed: u64, out: &Path) -> Result<RunManifest> {
    let set = synthgen::load(&a.data)?;
    let pre = preprocessing(&set, &a.cov)?;
    let mean = a.mean.mean();
    mean.validate()?;
    let classes = set.classes();
    let counts = set.class_counts();
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Validation(format!(
            "class {} has no trials in {}",
            k + 1,
            a.data.display()
        )));
    }
    let covs = pre.covariances(&set.trials)?;
    let mut artifacts = vec![MODEL_FILE.to_string(), "train.json".to_string()];
    let (used, potato) = match a.potato_z {
        Some(z) => {
            let result = potato_filter(&covs, &potato_config(z, mean))?;
            output::write_text(&out.join("potato.csv"), &potato_csv(&result, &set.labels))?;
            artifacts.push("potato.csv".into());
            let summary = potato_summary(&result, &set.labels, classes, z);
            (result.kept, Some(summary))
        }
        None => ((0..set.len()).collect(), None),
    };
    let used_covs: Vec<SpdMatrix> = used.iter().map(|&i| covs[i].clone()).collect();
    let used_labels: Vec<usize> = used.iter().map(|&i| set.labels[i]).collect();
    let model = ClassModel::fit(&used_covs, &used_labels, classes, pre, &mean)?;
    save_model(&model, &out.join(MODEL_FILE))?;

    let predicted: Vec<usize> = covs
        .iter()
        .map(|c| model.classify_covariance(c).map(|r| r.label))
        .collect::<Result<_>>()?;
    let report = TrainReport {
        classes,
        trials_per_class: counts,
        used_per_class: (1..=classes)
            .map(|k| used_labels.iter().filter(|&&l| l == k).count())
            .collect(),
        training_accuracy: accuracy(&predicted, &set.labels)?,
        potato,
    };
    output::write_json(&out.join("train.json"), &report)?;
    let config = json!({
        "preprocessing": model.preprocessing(),
        "mean": mean,
        "potato_z": a.potato_z,
    });
    let mut m = RunManifest::new("train", seed, json!({ "data": path_value(&a.data) }), config);
    m.artifacts = artifacts;
    Ok(m)
}

#[derive(Serialize)]
struct MethodSummary {
    method: &'static str,
    accuracy: Option<f64>,
    mean_delay_s: Option<f64>,
    decided: usize,
    held_back: usize,
}

#[derive(Serialize)]
struct TrialRow {
    trial: usize,
    label: usize,
    offline: usize,
    offline_opt: usize,
    online: Option<(usize, f64)>,
    online_curve: Option<(usize, f64)>,
}

#[derive(Serialize)]
struct EvalReport {
    summary: Vec<MethodSummary>,
    trials: Vec<TrialRow>,
}

fn offline_summary(method: &'static str, predicted: &[usize], truth: &[usize]) -> Result<MethodSummary> {
    Ok(MethodSummary {
        method,
        accuracy: Some(accuracy(predicted, truth)?),
        mean_delay_s: None,
        decided: truth.len(),
        held_back: 0,
    })
}

fn online_summary(method: &'static str, e: &StreamEvaluation) -> MethodSummary {
    MethodSummary {
        method,
        accuracy: e.accuracy(),
        mean_delay_s: e.mean_delay(),
        decided: e.decided(),
        held_back: e.held_back(),
    }
}

fn score(predicted: usize, truth: usize) -> f64 {
    if predicted == truth {
        100.0
    } else {
        0.0
    }
}

/// Per-trial accuracy (100 or 0, empty when held back) and delay for each
/// method, followed by a `mean` row holding the column means.
fn eval_csv(report: &EvalReport) -> String {
    let mut s = String::from(
        "trial,label,offline_acc,offline_opt_acc,online_acc,online_delay_s,online_curve_acc,online_curve_delay_s\n",
    );
    for r in &report.trials {
        let online = |d: Option<(usize, f64)>| {
            (
                cell(d.map(|(l, _)| score(l, r.label))),
                cell(d.map(|(_, t)| t)),
            )
        };
        let (oa, od) = online(r.online);
        let (ca, cd) = online(r.online_curve);
        let _ = writeln!(
            s,
            "{},{},{},{},{oa},{od},{ca},{cd}",
            r.trial,
            r.label,
            score(r.offline, r.label),
            score(r.offline_opt, r.label)
        );
    }
    let get = |m: &str| report.summary.iter().find(|x| x.method == m).expect("method");
    let _ = writeln!(
        s,
        "mean,,{},{},{},{},{},{}",
        cell(get("offline").accuracy),
        cell(get("offline_opt").accuracy),
        cell(get("online").accuracy),
        cell(get("online").mean_delay_s),
        cell(get("online_curve").accuracy),
        cell(get("online_curve").mean_delay_s)
    );
    s
}

fn summary_csv(report: &EvalReport) -> String {
    let mut s = String::from("method,accuracy,mean_delay_s,decided,held_back\n");
    for m in &report.summary {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            m.method,
            cell(m.accuracy),
            cell(m.mean_delay_s),
            m.decided,
            m.held_back
        );
    }
    s
}

fn eval(a: &EvalArgs, seed: u64, out: &Path) -> Result<RunManifest> {
    let model = load_model(&a.model)?;
    let set = synthgen::load(&a.data)?;
    model.check_compatible(&set)?;
    let mean = a.mean.mean();
    mean.validate()?;

    let offline: Vec<usize> = model
        .classify_all(&set.trials)?
        .into_iter()
        .map(|c| c.label)
        .collect();

    let train_set = match &a.train {
        Some(dir) => synthgen::load(dir)?,
        None => set.clone(),
    };
    model.check_compatible(&train_set)?;
    let mut opt_pre = model.preprocessing().clone();
    opt_pre.latency_seconds = a.opt_latency;
    let opt_model = ClassModel::train(&train_set, opt_pre, &mean)?;
    let offline_opt: Vec<usize> = opt_model
        .classify_all(&set.trials)?
        .into_iter()
        .map(|c| c.label)
        .collect();

    let online_cfg = OnlineConfig {
        window_seconds: a.window,
        step_seconds: a.step,
        depth: a.depth,
        theta: a.theta,
        curve_criterion: false,
    };
    let curve_cfg = OnlineConfig {
        curve_criterion: true,
        ..online_cfg
    };
    let online = evaluate_stream(&set, &model, &online_cfg)?;
    let curve = evaluate_stream(&set, &model, &curve_cfg)?;

    let report = EvalReport {
        summary: vec![
            offline_summary("offline", &offline, &set.labels)?,
            offline_summary("offline_opt", &offline_opt, &set.labels)?,
            online_summary("online", &online),
            online_summary("online_curve", &curve),
        ],
        trials: (0..set.len())
            .map(|i| TrialRow {
                trial: i,
                label: set.labels[i],
                offline: offline[i],
                offline_opt: offline_opt[i],
                online: online.trials[i].decision,
                online_curve: curve.trials[i].decision,
            })
            .collect(),
    };
    output::write_text(&out.join("eval.csv"), &eval_csv(&report))?;
    output::write_text(&out.join("summary.csv"), &summary_csv(&report))?;
    output::write_json(&out.join("eval.json"), &report)?;
    output::write_text(&out.join("online_epochs.csv"), &epoch_log_csv(&online.epochs))?;
    output::write_text(&out.join("online_curve_epochs.csv"), &epoch_log_csv(&curve.epochs))?;

    let inputs = json!({
        "model": path_value(&a.model),
        "data": path_value(&a.data),
        "train": a.train.as_deref().map(path_value),
    });
    let config = json!({
        "opt_latency": a.opt_latency,
        "online": online_cfg,
        "mean": mean,
    });
    let mut m = RunManifest::new("eval", seed, inputs, config);
    m.artifacts = [
        "eval.csv",
        "summary.csv",
        "eval.json",
        "online_epochs.csv",
        "online_curve_epochs.csv",
    ]
    .map(String::from)
    .to_vec();
    Ok(m)
}

fn bench(a: &BenchArgs, seed: u64, out: &Path) -> Result<RunManifest> {
    let set = match &a.data {
        Some(dir) => synthgen::load(dir)?,
        None => synthgen::generate(&GenConfig {
            seed,
            ..GenConfig::default()
        })?,
    };
    let config = BenchConfig {
        replications: a.replications,
        trial_lengths_seconds: a.lengths.clone(),
        estimators: a
            .estimators
            .iter()
            .map(|e| match e {
                EstimatorSpec::FixedPoint(_) => EstimatorSpec::FixedPoint(FixedPointConfig {
                    tolerance: a.fixed_point_tolerance,
                    max_iterations: a.fixed_point_iterations,
                }),
                other => other.clone(),
            })
            .collect(),
        seed,
        band: a.band.band(),
        latency_seconds: a.latency,
        mean: a.mean.mean(),
    };
    config.mean.validate()?;
    let report = run_benchmark(&set, &config)?;
    output::write_text(&out.join("bench.csv"), &bench_csv(&report))?;
    output::write_json(&out.join("bench.json"), &report)?;
    let inputs = json!({ "data": a.data.as_deref().map(path_value) });
    let mut m = RunManifest::new("bench", seed, inputs, output::to_value(&config)?);
    m.artifacts = vec!["bench.csv".into(), "bench.json".into()];
    Ok(m)
}

#[derive(Serialize)]
struct EmbeddingSummary {
    points: usize,
    explained_variance: [f64; 2],
    /// Mean point of each class in the plane.
    class_centroids: Vec<[f64; 2]>,
    /// Mean distance of a class's points to its centroid.
    class_spread: Vec<f64>,
    /// Model centers projected into the plane.
    centers: Vec<[f64; 2]>,
}

fn summarize(e: &Embedding, classes: usize, centers: Vec<[f64; 2]>) -> EmbeddingSummary {
    let mut centroids = vec![[0.0; 2]; classes];
    let mut spread = vec![0.0; classes];
    for k in 1..=classes {
        let pts: Vec<&[f64; 2]> = e
            .points
            .iter()
            .zip(&e.labels)
            .filter(|(_, &l)| l == k)
            .map(|(p, _)| p)
            .collect();
        if pts.is_empty() {
            continue;
        }
        let n = pts.len() as f64;
        let c = [
            pts.iter().map(|p| p[0]).sum::<f64>() / n,
            pts.iter().map(|p| p[1]).sum::<f64>() / n,
        ];
        spread[k - 1] = pts.iter().map(|p| (p[0] - c[0]).hypot(p[1] - c[1])).sum::<f64>() / n;
        centroids[k - 1] = c;
    }
    EmbeddingSummary {
        points: e.points.len(),
        explained_variance: e.explained_variance,
        class_centroids: centroids,
        class_spread: spread,
        centers,
    }
}

fn embed_one(
    covs: &[SpdMatrix],
    ids: &[usize],
    labels: &[usize],
    classes: usize,
    model: Option<&ClassModel>,
    mean: &MeanConfig,
) -> Result<(String, EmbeddingSummary)> {
    let e = tangent_embed(covs, labels, mean)?;
    let centers = match model {
        Some(m) => m
            .centers()
            .iter()
            .map(|c| e.project(c))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let csv = embedding_csv(&e, ids, &centers);
    Ok((csv, summarize(&e, classes, centers)))
}

fn embed(a: &EmbedArgs, seed: u64, out: &Path) -> Result<RunManifest> {
    let set = synthgen::load(&a.data)?;
    let model = a.model.as_deref().map(load_model).transpose()?;
    let pre = match &model {
        Some(m) => {
            m.check_compatible(&set)?;
            m.preprocessing().clone()
        }
        None => preprocessing(&set, &a.cov)?,
    };
    let mean = a.mean.mean();
    mean.validate()?;
    let covs = pre.covariances(&set.trials)?;
    let classes = set.classes();
    let ids: Vec<usize> = (0..set.len()).collect();
    let (csv, summary) = embed_one(&covs, &ids, &set.labels, classes, model.as_ref(), &mean)?;

    let mut artifacts = Vec::new();
    let report = match a.potato_z {
        None => {
            output::write_text(&out.join("embedding.csv"), &csv)?;
            artifacts.push("embedding.csv".to_string());
            json!({ "embedding": summary })
        }
        Some(z) => {
            output::write_text(&out.join("embedding_before.csv"), &csv)?;
            let result = potato_filter(&covs, &potato_config(z, mean))?;
            let kept_covs: Vec<SpdMatrix> = result.kept.iter().map(|&i| covs[i].clone()).collect();
            let kept_labels: Vec<usize> = result.kept.iter().map(|&i| set.labels[i]).collect();
            let (after_csv, after) =
                embed_one(&kept_covs, &result.kept, &kept_labels, classes, model.as_ref(), &mean)?;
            output::write_text(&out.join("embedding_after.csv"), &after_csv)?;
            output::write_text(&out.join("potato.csv"), &potato_csv(&result, &set.labels))?;
            artifacts.extend(["embedding_before.csv", "embedding_after.csv", "potato.csv"].map(String::from));
            json!({
                "before": summary,
                "after": after,
                "potato": potato_summary(&result, &set.labels, classes, z),
            })
        }
    };
    output::write_json(&out.join("embedding.json"), &report)?;
    artifacts.push("embedding.json".into());
    let inputs = json!({
        "data": path_value(&a.data),
        "model": a.model.as_deref().map(path_value),
    });
    let config = json!({ "preprocessing": pre, "mean": mean, "potato_z": a.potato_z });
    let mut m = RunManifest::new("embed", seed, inputs, config);
    m.artifacts = artifacts;
    Ok(m)
}

fn potato(a: &PotatoArgs, seed: u64, out: &Path) -> Result<RunManifest> {
    let set = synthgen::load(&a.data)?;
    let pre = preprocessing(&set, &a.cov)?;
    let mean = a.mean.mean();
    mean.validate()?;
    let covs = pre.covariances(&set.trials)?;
    let result = potato_filter(&covs, &potato_config(a.z, mean))?;
    output::write_text(&out.join("potato.csv"), &potato_csv(&result, &set.labels))?;
    output::write_json(
        &out.join("potato.json"),
        &potato_summary(&result, &set.labels, set.classes(), a.z),
    )?;
    let kept_dir: PathBuf = out.join("kept");
    synthgen::save(&set.subset(&result.kept), &kept_dir)?;
    let inputs = json!({ "data": path_value(&a.data) });
    let config = json!({ "preprocessing": pre, "mean": mean, "z": a.z });
    let mut m = RunManifest::new("potato", seed, inputs, config);
    m.artifacts = vec!["potato.csv".into(), "potato.json".into(), "kept/".into()];
    Ok(m)
}
