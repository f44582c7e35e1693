//! Pipeline stages behind the subcommands.
//!
//! Every stage reads its inputs from the configured output directory (or
//! the raw data path), writes its artifacts there, and records their
//! checksums in the manifest. Stages are pure functions of config plus
//! inputs: rerunning one with the same config rewrites byte-identical
//! files.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write as _};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use drivecal::calib::{
    default_params, fixed_calibration, label_windows, read_fixed_params_csv, read_labels_csv,
    write_fixed_params_csv, write_labels_csv, FixedParams, LabelDataset, Split,
};
use drivecal::carfollow::{simulate_follower, ModelKind, ParamSchedule, SimInput};
use drivecal::evalharness::{
    evaluate_clusters, evaluate_pair, read_pair_reports_csv, rmse, train_pooled_model,
    write_cluster_folds_csv, write_cluster_summary_csv, write_improvement_distribution_csv,
    write_pair_reports_csv, write_score_histogram_csv, EvalReport,
};
use drivecal::grunet::{load_model, predict_schedule, save_model};
use drivecal::stylescore::{
    cluster_by_percentile, entropy_weights, normalize_matrix, read_scores_csv, style_scores,
    write_scores_csv, write_weights_sidecar, Cluster, EvaluationMatrix, ScoreRow,
};
use drivecal::synth::{planted_pair, sinusoid_krauss_schedule, synth_style_corpus, SinusoidSpec};
use drivecal::trajdata::{
    compute_features, extract_pairs, parse_ngsim_path, read_trajectories_csv,
    write_trajectories_csv, Trajectory, VehiclePair,
};

use crate::config::RunConfig;
use crate::manifest;

pub const TRAJECTORIES: &str = "trajectories.csv";
pub const PAIRS: &str = "pairs.csv";
pub const SCORES: &str = "scores.csv";
pub const SCORE_WEIGHTS: &str = "score_weights.csv";
pub const LABELS: &str = "labels.csv";
pub const FIXED_PARAMS: &str = "fixed_params.csv";
pub const MODEL: &str = "model.txt";
pub const SIMULATED: &str = "simulated.csv";
pub const REPORTS: &str = "reports.csv";
pub const NOTES: &str = "notes.txt";
pub const CLUSTER_FOLDS: &str = "cluster_folds.csv";
pub const CLUSTER_SUMMARY: &str = "cluster_summary.csv";
pub const SCORE_HIST: &str = "score_hist.csv";
pub const IMPROVEMENTS: &str = "improvements.csv";

/// Shared stage state: the validated config, its hash, and the output
/// directory (created eagerly).
pub struct Stage<'a> {
    pub config: &'a RunConfig,
    pub out: PathBuf,
    pub config_hash: String,
}

impl<'a> Stage<'a> {
    pub fn new(config: &'a RunConfig) -> Result<Self> {
        let out = config.output_dir.clone();
        fs::create_dir_all(&out)
            .with_context(|| format!("cannot create output directory {}", out.display()))?;
        Ok(Self { config, out, config_hash: config.config_hash()? })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Path of an upstream artifact; a missing file names the subcommand
    /// that produces it.
    fn require(&self, name: &str, produced_by: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if !path.exists() {
            bail!(
                "missing {} in {}; run the `{produced_by}` subcommand first",
                name,
                self.out.display()
            );
        }
        Ok(path)
    }

    fn record(&self, names: &[&str]) -> Result<()> {
        manifest::record(&self.out, &self.config_hash, self.config.seed, names)?;
        Ok(())
    }

    fn open(&self, name: &str, produced_by: &str) -> Result<BufReader<File>> {
        let path = self.require(name, produced_by)?;
        Ok(BufReader::new(
            File::open(&path).with_context(|| format!("cannot open {}", path.display()))?,
        ))
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        Ok(BufWriter::new(
            File::create(&path).with_context(|| format!("cannot write {}", path.display()))?,
        ))
    }

    fn read_store(&self) -> Result<Vec<Trajectory>> {
        let path = self.path(TRAJECTORIES);
        if !path.exists() {
            bail!(
                "missing {TRAJECTORIES} in {}; run the `ingest` or `synth` subcommand first",
                self.out.display()
            );
        }
        let file =
            File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
        read_trajectories_csv(BufReader::new(file)).context("corrupt trajectory store")
    }

    /// Extracted pairs, restricted to `[selection] pairs` when that list is
    /// non-empty. Every requested pair must exist.
    fn selected_pairs(&self, trajectories: &[Trajectory]) -> Result<Vec<VehiclePair>> {
        let all = extract_pairs(trajectories, self.config.data.min_overlap_frames)?;
        if self.config.selection.pairs.is_empty() {
            if all.is_empty() {
                bail!(
                    "no leader/follower pairs with at least {} overlapping frames; \
                     lower data.min_overlap_frames or check the corpus",
                    self.config.data.min_overlap_frames
                );
            }
            return Ok(all);
        }
        let mut picked = Vec::with_capacity(self.config.selection.pairs.len());
        for &[leader, follower] in &self.config.selection.pairs {
            let found = all
                .iter()
                .find(|p| p.pair_id() == (leader, follower))
                .cloned()
                .with_context(|| {
                    format!(
                        "selection.pairs: pair ({leader}, {follower}) not found among the \
                         {} extracted pairs (see `pairs`)",
                        all.len()
                    )
                })?;
            picked.push(found);
        }
        Ok(picked)
    }

    fn labels(&self) -> Result<LabelDataset> {
        let reader = self.open(LABELS, "label")?;
        read_labels_csv(reader).context("corrupt label file")
    }
}

/// Parse the raw trajectory CSV into the canonical store.
pub fn ingest(stage: &Stage) -> Result<()> {
    let raw = stage
        .config
        .data
        .raw_csv
        .as_ref()
        .context("data.raw_csv: set the raw trajectory CSV path before running `ingest`")?;
    let trajectories =
        parse_ngsim_path(raw, &stage.config.column_map(), stage.config.unit_mode()?)?;
    let samples: usize = trajectories.iter().map(|t| t.len()).sum();
    write_trajectories_csv(stage.create(TRAJECTORIES)?, &trajectories)?;
    stage.record(&[TRAJECTORIES])?;
    println!(
        "ingest: {} vehicles, {} samples -> {}",
        trajectories.len(),
        samples,
        stage.path(TRAJECTORIES).display()
    );
    Ok(())
}

/// List leader/follower pairs with enough overlap.
pub fn pairs(stage: &Stage) -> Result<()> {
    let trajectories = stage.read_store()?;
    let pairs = extract_pairs(&trajectories, stage.config.data.min_overlap_frames)?;
    let mut w = stage.create(PAIRS)?;
    writeln!(w, "leader_id,follower_id,start_frame,overlap_frames")?;
    for p in &pairs {
        let (leader, follower) = p.pair_id();
        writeln!(w, "{leader},{follower},{},{}", p.start_frame(), p.overlap_len())?;
    }
    w.flush()?;
    stage.record(&[PAIRS])?;
    println!(
        "pairs: {} pairs with >= {} overlapping frames -> {}",
        pairs.len(),
        stage.config.data.min_overlap_frames,
        stage.path(PAIRS).display()
    );
    Ok(())
}

/// Entropy-weighted driving-style scores and percentile clusters.
pub fn score(stage: &Stage) -> Result<()> {
    let trajectories = stage.read_store()?;
    let pairs = extract_pairs(&trajectories, stage.config.data.min_overlap_frames)?;
    if pairs.is_empty() {
        bail!(
            "no pairs to score; lower data.min_overlap_frames or check the corpus"
        );
    }
    let features = pairs.iter().map(compute_features).collect::<Result<Vec<_>, _>>()?;
    let ids: Vec<u64> = pairs.iter().map(|p| p.pair_id().1).collect();
    let matrix =
        EvaluationMatrix::from_features(ids.clone(), &features, stage.config.headway_orientation()?)?;
    let norm = normalize_matrix(&matrix)?;
    let weights = entropy_weights(&norm)?;
    let mut scores = style_scores(&norm, &weights, &ids)?;
    let [p_lo, p_hi] = stage.config.scoring.percentiles;
    let cuts = cluster_by_percentile(&mut scores, (p_lo, p_hi))?;

    let rows: Vec<ScoreRow> = pairs
        .iter()
        .zip(&features)
        .zip(&scores)
        .map(|((p, f), s)| ScoreRow {
            pair_id: p.pair_id(),
            features: *f,
            score: s.score,
            cluster: s.cluster.expect("clustered above"),
        })
        .collect();
    write_scores_csv(stage.create(SCORES)?, &rows)?;
    write_weights_sidecar(stage.create(SCORE_WEIGHTS)?, &weights, &cuts)?;
    stage.record(&[SCORES, SCORE_WEIGHTS])?;

    let count =
        |c: Cluster| rows.iter().filter(|r| r.cluster == c).count();
    println!(
        "score: {} followers -> {} conservative / {} normal / {} aggressive \
         (cuts {:.3}/{:.3}) -> {}",
        rows.len(),
        count(Cluster::Conservative),
        count(Cluster::Normal),
        count(Cluster::Aggressive),
        cuts.low,
        cuts.high,
        stage.path(SCORES).display()
    );
    Ok(())
}

/// Per-window parameter labels via Bayesian optimization.
pub fn label(stage: &Stage) -> Result<()> {
    let trajectories = stage.read_store()?;
    let pairs = stage.selected_pairs(&trajectories)?;
    let kind = stage.config.model_kind()?;
    let dataset = label_windows(&pairs, kind, &stage.config.calib_config())?;
    write_labels_csv(stage.create(LABELS)?, &dataset)?;
    stage.record(&[LABELS])?;
    let train = dataset.windows.iter().filter(|w| w.split == Split::Train).count();
    println!(
        "label: {} pairs, {} windows ({} train / {} test) -> {}",
        pairs.len(),
        dataset.windows.len(),
        train,
        dataset.windows.len() - train,
        stage.path(LABELS).display()
    );
    Ok(())
}

/// One constant parameter vector per pair, fit to its training span.
pub fn calibrate_fixed(stage: &Stage) -> Result<()> {
    let trajectories = stage.read_store()?;
    let pairs = stage.selected_pairs(&trajectories)?;
    let kind = stage.config.model_kind()?;
    let calib = stage.config.calib_config();
    let rows: Vec<FixedParams> = pairs
        .par_iter()
        .map(|p| {
            Ok(FixedParams { pair_id: p.pair_id(), params: fixed_calibration(p, kind, &calib)? })
        })
        .collect::<Result<Vec<_>>>()?;
    write_fixed_params_csv(stage.create(FIXED_PARAMS)?, kind, &rows)?;
    stage.record(&[FIXED_PARAMS])?;
    println!(
        "calibrate-fixed: {} pairs -> {}",
        rows.len(),
        stage.path(FIXED_PARAMS).display()
    );
    Ok(())
}

/// Train the pooled window-to-parameters predictor on the training-split
/// labels of the selected pairs.
pub fn train(stage: &Stage) -> Result<()> {
    let trajectories = stage.read_store()?;
    let pairs = stage.selected_pairs(&trajectories)?;
    let kind = stage.config.model_kind()?;
    let labels = stage.labels()?;
    let model = train_pooled_model(&pairs, kind, &stage.config.eval_config(), &labels)?;
    save_model(stage.create(MODEL)?, &model)?;
    stage.record(&[MODEL])?;
    println!(
        "train: pooled predictor over {} pairs ({} weights) -> {}",
        pairs.len(),
        model.weight_count(),
        stage.path(MODEL).display()
    );
    Ok(())
}

/// Replay one pair under the chosen calibration and export the simulated
/// trajectory next to the replayed leader.
pub fn simulate(stage: &Stage) -> Result<()> {
    let cfg = stage.config;
    let [leader_id, follower_id] = cfg
        .simulate
        .pair
        .context("simulate.pair: set [simulate] pair = [leader_id, follower_id]")?;
    let trajectories = stage.read_store()?;
    let all = extract_pairs(&trajectories, cfg.data.min_overlap_frames)?;
    let pair = all
        .iter()
        .find(|p| p.pair_id() == (leader_id, follower_id))
        .with_context(|| {
            format!(
                "simulate.pair: pair ({leader_id}, {follower_id}) not found among the \
                 {} extracted pairs (see `pairs`)",
                all.len()
            )
        })?;

    let kind = cfg.model_kind()?;
    let ctx = cfg.sim_context();
    let window_len = cfg.windows.window_len;
    let span = (pair.overlap_len() / window_len) * window_len;
    if span == 0 {
        bail!(
            "simulate: overlap of {} frames is shorter than one {}-frame window",
            pair.overlap_len(),
            window_len
        );
    }

    let defaults = default_params(kind);
    let schedule = match cfg.simulate.calibration.as_str() {
        "default" => ParamSchedule::constant(defaults.clone()),
        "fixed" => {
            let rows = read_fixed_params_csv(stage.open(FIXED_PARAMS, "calibrate-fixed")?, kind)?;
            let row = rows
                .iter()
                .find(|r| r.pair_id == (leader_id, follower_id))
                .with_context(|| {
                    format!(
                        "no fixed calibration for pair ({leader_id}, {follower_id}) in \
                         {FIXED_PARAMS}; rerun `calibrate-fixed` with this pair selected"
                    )
                })?;
            ParamSchedule::constant(row.params.clone())
        }
        "adaptive" => {
            let model = load_model(stage.open(MODEL, "train")?)?;
            predict_schedule(&model, pair, window_len, cfg.windows.stride, &defaults)?
        }
        other => bail!("simulate.calibration: unknown calibration {other:?}"),
    };

    let l0 = (pair.start_frame() - pair.leader.start_frame()) as usize;
    let f0 = (pair.start_frame() - pair.follower.start_frame()) as usize;
    let leader_x: Vec<f64> =
        pair.leader.samples[l0..l0 + span].iter().map(|s| s.position).collect();
    let leader_v: Vec<f64> =
        pair.leader.samples[l0..l0 + span].iter().map(|s| s.velocity).collect();
    let input = SimInput {
        start_frame: pair.start_frame(),
        leader_x: &leader_x,
        leader_v: &leader_v,
        leader_len: pair.leader.vehicle_length(),
        init_x: pair.follower.samples[f0].position,
        init_v: pair.follower.samples[f0].velocity,
    };
    let sim = simulate_follower(kind, &schedule, &input, &ctx)?;

    let leader_clip = Trajectory {
        vehicle_id: pair.leader.vehicle_id,
        samples: pair.leader.samples[l0..l0 + span].to_vec(),
    };
    let follower_sim = sim_to_trajectory(
        pair.follower.vehicle_id,
        pair.leader.vehicle_id,
        pair.follower.vehicle_length(),
        pair.start_frame(),
        &sim.x,
        &sim.v,
        ctx.dt,
    );
    write_trajectories_csv(stage.create(SIMULATED)?, &[leader_clip, follower_sim])?;
    stage.record(&[SIMULATED])?;

    let recorded_v: Vec<f64> =
        pair.follower.samples[f0..f0 + span].iter().map(|s| s.velocity).collect();
    let speed_rmse = rmse(&sim.v[1..], &recorded_v[1..])?;
    println!(
        "simulate: pair ({leader_id}, {follower_id}) {} calibration, speed rmse {:.3} m/s \
         over {} frames, {} collision frames -> {}",
        cfg.simulate.calibration,
        speed_rmse,
        span,
        sim.collision_count(),
        stage.path(SIMULATED).display()
    );
    Ok(())
}

/// A simulated trace as a canonical trajectory; accelerations are forward
/// differences with the last value repeated, matching the synthetic
/// corpora.
fn sim_to_trajectory(
    vehicle_id: u64,
    leader_id: u64,
    length: f64,
    start_frame: i64,
    xs: &[f64],
    vs: &[f64],
    dt: f64,
) -> Trajectory {
    let accel = |i: usize| {
        if vs.len() < 2 {
            0.0
        } else {
            let j = i.min(vs.len() - 2);
            (vs[j + 1] - vs[j]) / dt
        }
    };
    Trajectory {
        vehicle_id,
        samples: xs
            .iter()
            .zip(vs)
            .enumerate()
            .map(|(i, (&x, &v))| drivecal::trajdata::TrajectorySample {
                vehicle_id,
                frame: start_frame + i as i64,
                position: x,
                velocity: v,
                acceleration: accel(i),
                leader_id: Some(leader_id),
                vehicle_length: length,
            })
            .collect(),
    }
}

const DEVIATION_NOTE: &str = "\
calibration notes
=================

Comparability of absolute RMSE values
-------------------------------------
The follower's braking rule uses the dimensionally consistent safe-speed
form

    v_safe = -b*tau + sqrt(b^2*tau^2 + v_l^2 + 2*b*g),  tau = t_r + t_i/2

where b is the maximum deceleration, v_l the leader speed, and g the
bumper-to-bumper gap. Absolute RMSE values depend on this reading of the
braking term, so they are comparable only between implementations that
share it. The improvement ratio

    improvement = (rmse_fixed - rmse_adaptive) / rmse_fixed

is computed entirely within one convention and is the number to compare
across implementations.
";

/// Compare default, fixed, and adaptive calibration on every selected
/// pair's held-out test segment.
pub fn evaluate(stage: &Stage) -> Result<()> {
    let trajectories = stage.read_store()?;
    let pairs = stage.selected_pairs(&trajectories)?;
    let kind = stage.config.model_kind()?;
    let labels = stage.labels()?;
    let cfg = stage.config.eval_config();
    let reports: Vec<EvalReport> = pairs
        .par_iter()
        .map(|p| evaluate_pair(p, kind, &cfg, &labels))
        .collect::<Result<Vec<_>, _>>()?;
    write_pair_reports_csv(stage.create(REPORTS)?, &reports)?;
    let mut notes = stage.create(NOTES)?;
    notes.write_all(DEVIATION_NOTE.as_bytes())?;
    notes.flush()?;
    stage.record(&[REPORTS, NOTES])?;

    let improvements: Vec<f64> = reports.iter().filter_map(|r| r.improvement).collect();
    let mean = if improvements.is_empty() {
        "n/a".to_string()
    } else {
        format!("{:.1}%", 100.0 * improvements.iter().sum::<f64>() / improvements.len() as f64)
    };
    println!(
        "evaluate: {} pairs -> {} (mean improvement {mean}); notes in {}",
        reports.len(),
        stage.path(REPORTS).display(),
        stage.path(NOTES).display()
    );
    Ok(())
}

/// Aggregate scores and evaluations into plot-ready tables, and run the
/// per-cluster fold protocol when the corpus supports it.
pub fn report(stage: &Stage) -> Result<()> {
    let scores = read_scores_csv(stage.open(SCORES, "score")?)?;
    let reports = read_pair_reports_csv(stage.open(REPORTS, "evaluate")?)?;
    let cfg = stage.config;

    let score_values: Vec<f64> = scores.iter().map(|r| r.score).collect();
    write_score_histogram_csv(
        stage.create(SCORE_HIST)?,
        &score_values,
        cfg.scoring.histogram_bins,
    )?;

    // Improvement distribution, grouped by the follower's style cluster.
    let cluster_of = |follower: u64| -> Result<Cluster> {
        scores
            .iter()
            .find(|s| s.pair_id.1 == follower)
            .map(|s| s.cluster)
            .with_context(|| {
                format!(
                    "follower {follower} has an evaluation report but no style score; \
                     run `score` on the same corpus"
                )
            })
    };
    let mut dist_rows: Vec<(String, u64, f64)> = Vec::new();
    for r in &reports {
        if let Some(impr) = r.improvement {
            dist_rows.push((cluster_of(r.pair_id.1)?.as_str().to_string(), r.pair_id.1, impr));
        }
    }
    write_improvement_distribution_csv(stage.create(IMPROVEMENTS)?, &dist_rows)?;

    // The fold protocol retrains one predictor per cluster and fold, so it
    // only runs when its inputs are on disk and every populated cluster
    // can fill the folds.
    let assignments: Vec<(u64, Cluster)> =
        scores.iter().map(|s| (s.pair_id.1, s.cluster)).collect();
    let members = |c: Cluster| assignments.iter().filter(|(_, a)| *a == c).count();
    let too_small: Vec<String> = Cluster::ALL
        .iter()
        .filter(|&&c| {
            let m = members(c);
            m > 0 && m < cfg.evaluate.folds
        })
        .map(|c| format!("{} ({} members)", c.as_str(), members(*c)))
        .collect();

    let feasible = stage.path(LABELS).exists() && stage.path(TRAJECTORIES).exists();
    let cluster_reports = if !feasible {
        println!(
            "report: skipping the {}-fold cluster protocol (needs {} and {} from \
             `label` and `ingest`/`synth`)",
            cfg.evaluate.folds, LABELS, TRAJECTORIES
        );
        Vec::new()
    } else if !too_small.is_empty() {
        println!(
            "report: skipping the {}-fold cluster protocol; too few members in: {}",
            cfg.evaluate.folds,
            too_small.join(", ")
        );
        Vec::new()
    } else {
        println!(
            "report: running the {}-fold cluster protocol over {} scored vehicles \
             (one predictor per cluster and fold)",
            cfg.evaluate.folds,
            assignments.len()
        );
        let trajectories = stage.read_store()?;
        let all_pairs = extract_pairs(&trajectories, cfg.data.min_overlap_frames)?;
        let labels = stage.labels()?;
        evaluate_clusters(
            &all_pairs,
            &assignments,
            cfg.model_kind()?,
            &stage.config.eval_config(),
            &labels,
            cfg.evaluate.folds,
            cfg.evaluate.trim,
        )
        .context(
            "cluster protocol failed; it needs labels for every scored pair \
             (run `label` without a [selection] restriction)",
        )?
    };
    write_cluster_folds_csv(stage.create(CLUSTER_FOLDS)?, &cluster_reports)?;
    write_cluster_summary_csv(stage.create(CLUSTER_SUMMARY)?, &cluster_reports)?;

    stage.record(&[SCORE_HIST, IMPROVEMENTS, CLUSTER_FOLDS, CLUSTER_SUMMARY])?;
    println!(
        "report: {} improvement rows, {} histogram bins -> {}, {}, {}, {}",
        dist_rows.len(),
        cfg.scoring.histogram_bins,
        stage.path(SCORE_HIST).display(),
        stage.path(IMPROVEMENTS).display(),
        stage.path(CLUSTER_FOLDS).display(),
        stage.path(CLUSTER_SUMMARY).display()
    );
    Ok(())
}

/// Generate a synthetic corpus with planted parameters.
pub fn synth(stage: &Stage) -> Result<()> {
    let cfg = stage.config;
    let kind = cfg.model_kind()?;
    let ctx = cfg.sim_context();
    let pairs: Vec<VehiclePair> = match cfg.synth.corpus.as_str() {
        "style" => synth_style_corpus(cfg.synth.pairs, cfg.synth.frames, &ctx, cfg.seed)?,
        "constant" => {
            let params = cfg.synth.params.clone().unwrap_or_else(|| default_params(kind));
            let schedule = ParamSchedule::constant(params);
            vec![planted_pair(kind, &schedule, cfg.synth.frames, (1, 2), &ctx, cfg.seed)?]
        }
        "sinusoid" => {
            if kind != ModelKind::Krauss {
                bail!(
                    "synth.corpus: the sinusoid corpus plants a drifting reaction time \
                     for the krauss model; set model = \"krauss\""
                );
            }
            let spec = SinusoidSpec {
                center: cfg.synth.center,
                amplitude: cfg.synth.amplitude,
                period_windows: cfg.synth.period_windows,
            };
            let window_len = cfg.windows.window_len;
            let n_windows = cfg.synth.frames.div_ceil(window_len);
            let schedule = sinusoid_krauss_schedule(&spec, n_windows, window_len, 0)?;
            vec![planted_pair(kind, &schedule, cfg.synth.frames, (1, 2), &ctx, cfg.seed)?]
        }
        other => bail!("synth.corpus: unknown corpus {other:?}"),
    };

    let mut vehicles: Vec<Trajectory> = Vec::with_capacity(2 * pairs.len());
    for p in &pairs {
        vehicles.push(p.leader.clone());
        vehicles.push(p.follower.clone());
    }
    vehicles.sort_by_key(|t| t.vehicle_id);
    write_trajectories_csv(stage.create(TRAJECTORIES)?, &vehicles)?;
    stage.record(&[TRAJECTORIES])?;
    println!(
        "synth: {} corpus, {} pairs x {} frames -> {}",
        cfg.synth.corpus,
        pairs.len(),
        cfg.synth.frames,
        stage.path(TRAJECTORIES).display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulated_trajectory_uses_forward_difference_accelerations() {
        let t = sim_to_trajectory(2, 1, 4.5, 10, &[0.0, 1.0, 2.1], &[10.0, 10.5, 10.1], 0.1);
        assert_eq!(t.samples.len(), 3);
        assert_eq!(t.samples[0].frame, 10);
        assert!((t.samples[0].acceleration - 5.0).abs() < 1e-12);
        assert!((t.samples[1].acceleration + 4.0).abs() < 1e-12);
        // Last value repeats the previous difference.
        assert!((t.samples[2].acceleration + 4.0).abs() < 1e-12);
        assert_eq!(t.samples[2].leader_id, Some(1));
    }
}
