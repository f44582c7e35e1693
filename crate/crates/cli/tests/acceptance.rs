//! Acceptance suite: one test per release criterion, each printing a single
//! PASS/FAIL line (run with `--nocapture` to see the lines for passing
//! tests). Tolerances and budgets are pinned as constants next to the
//! criterion they gate.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drivecal::calib::{label_windows, BoBudget, CalibConfig};
use drivecal::carfollow::{
    krauss_safe_speed, simulate_follower, FollowState, KraussParams, ModelKind, ParamSchedule,
    SimContext, SimInput,
};
use drivecal::evalharness::{evaluate_pair, read_pair_reports_csv, rmse_improvement, EvalConfig};
use drivecal::grunet::{gradient_check, GruArch, GruModel};
use drivecal::stylescore::{
    cluster_by_percentile, entropy_weights, normalize_matrix, style_scores, Cluster,
    EvaluationMatrix, Orientation,
};
use drivecal::synth::{
    planted_pair, sinusoid_krauss_schedule, synth_leader, synth_style_corpus, SinusoidSpec,
};
use drivecal::trajdata::compute_features;

/// Print the one-line verdict for a criterion, then fail the test if it did
/// not hold.
fn check(criterion: &str, ok: bool, detail: String) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("acceptance {criterion}: {verdict} — {detail}");
    assert!(ok, "acceptance {criterion}: FAIL — {detail}");
}

// ---------------------------------------------------------------------------
// 1. Entropy-weight properties on random evaluation matrices.

const WEIGHT_TOL: f64 = 1e-9;
const WEIGHTS_TIME_LIMIT: Duration = Duration::from_secs(5);

#[test]
fn criterion_1_entropy_weight_properties() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_260_819);
    let mut worst_sum = 0.0f64;
    let mut worst_range = 0.0f64;
    let mut worst_constant = 0.0f64;
    let mut worst_affine = 0.0f64;

    for _ in 0..1000 {
        let m = rng.gen_range(3..=100);
        let n = 6;
        let constant_col = rng.gen_range(0..n);
        let constant_val = rng.gen_range(-5.0..5.0);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..n)
                    .map(|j| {
                        if j == constant_col {
                            constant_val
                        } else {
                            rng.gen_range(-10.0..10.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let orientation: Vec<Orientation> = (0..n)
            .map(|_| if rng.gen_bool(0.5) { Orientation::Benefit } else { Orientation::Cost })
            .collect();
        let ids: Vec<u64> = (0..m as u64).collect();

        let matrix =
            EvaluationMatrix::new(ids.clone(), rows.clone(), orientation.clone()).unwrap();
        let norm = normalize_matrix(&matrix).unwrap();
        let weights = entropy_weights(&norm).unwrap();

        worst_sum = worst_sum.max((weights.w.iter().sum::<f64>() - 1.0).abs());
        for &w in &weights.w {
            worst_range = worst_range.max((-w).max(w - 1.0).max(0.0));
        }
        worst_constant = worst_constant.max(weights.w[constant_col].abs());

        // Positive affine rescaling of every column must leave scores
        // untouched: min-max normalization cancels scale and shift.
        let scores = style_scores(&norm, &weights, &ids).unwrap();
        let scales: Vec<(f64, f64)> =
            (0..n).map(|_| (rng.gen_range(0.1..10.0), rng.gen_range(-5.0..5.0))).collect();
        let rescaled: Vec<Vec<f64>> = rows
            .iter()
            .map(|row| row.iter().zip(&scales).map(|(x, (a, b))| a * x + b).collect())
            .collect();
        let matrix2 = EvaluationMatrix::new(ids.clone(), rescaled, orientation).unwrap();
        let norm2 = normalize_matrix(&matrix2).unwrap();
        let weights2 = entropy_weights(&norm2).unwrap();
        let scores2 = style_scores(&norm2, &weights2, &ids).unwrap();
        for (s1, s2) in scores.iter().zip(&scores2) {
            worst_affine = worst_affine.max((s1.score - s2.score).abs());
        }
    }

    let elapsed = start.elapsed();
    check(
        "criterion 1 (entropy-weight properties)",
        worst_sum <= WEIGHT_TOL
            && worst_range <= WEIGHT_TOL
            && worst_constant <= WEIGHT_TOL
            && worst_affine <= WEIGHT_TOL
            && elapsed < WEIGHTS_TIME_LIMIT,
        format!(
            "1000 matrices: |Σw−1| ≤ {worst_sum:.2e}, range excess ≤ {worst_range:.2e}, \
             constant-column weight ≤ {worst_constant:.2e}, affine score drift ≤ \
             {worst_affine:.2e}, in {:.2} s",
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Percentile clustering proportions on a 94-vehicle corpus.

const CORPUS_PAIRS: usize = 94;
const EXPECTED_SPLIT: (usize, usize, usize) = (24, 46, 24);

#[test]
fn criterion_2_percentile_split_proportions() {
    let ctx = SimContext::default();
    let pairs = synth_style_corpus(CORPUS_PAIRS, 300, &ctx, 424_242).unwrap();
    let features = pairs.iter().map(compute_features).collect::<Result<Vec<_>, _>>().unwrap();
    let ids: Vec<u64> = pairs.iter().map(|p| p.pair_id().1).collect();
    let matrix = EvaluationMatrix::from_features(ids.clone(), &features, Orientation::Cost).unwrap();
    let norm = normalize_matrix(&matrix).unwrap();
    let weights = entropy_weights(&norm).unwrap();
    let mut scores = style_scores(&norm, &weights, &ids).unwrap();
    cluster_by_percentile(&mut scores, (25.0, 75.0)).unwrap();

    let count = |c: Cluster| scores.iter().filter(|s| s.cluster == Some(c)).count();
    let split = (count(Cluster::Conservative), count(Cluster::Normal), count(Cluster::Aggressive));
    check(
        "criterion 2 (25/75 percentile split)",
        split == EXPECTED_SPLIT,
        format!(
            "{CORPUS_PAIRS} scored vehicles split {}/{}/{} (want {}/{}/{})",
            split.0, split.1, split.2, EXPECTED_SPLIT.0, EXPECTED_SPLIT.1, EXPECTED_SPLIT.2
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Collision-freedom behind random bounded-deceleration leaders.

const COLLISION_TRIALS: u64 = 100;
const COLLISION_FRAMES: usize = 600; // 60 s at 0.1 s per frame
const COLLISION_TIME_LIMIT: Duration = Duration::from_secs(10);

#[test]
fn criterion_3_collision_freedom() {
    let start = Instant::now();
    let ctx = SimContext::default();
    let mut min_gap = f64::INFINITY;

    for trial in 0..COLLISION_TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(drivecal::seed_mix(&[31_907, trial]));
        let (leader_x, leader_v) = synth_leader(COLLISION_FRAMES, &ctx, trial).unwrap();
        let params =
            KraussParams { t_r: rng.gen_range(0.1..3.0), t_i: rng.gen_range(0.01..1.0) };
        let leader_len = rng.gen_range(4.0..5.5);
        let gap0 = rng.gen_range(0.5..40.0);
        let init = FollowState {
            x: leader_x[0] - leader_len - gap0,
            v: 0.0,
            x_l: leader_x[0],
            v_l: leader_v[0],
            l_lead: leader_len,
        };
        // Consistent start: at or below the safe speed for the initial gap.
        let init_v = leader_v[0].min(krauss_safe_speed(&init, &params, &ctx));
        let input = SimInput {
            start_frame: 0,
            leader_x: &leader_x,
            leader_v: &leader_v,
            leader_len,
            init_x: init.x,
            init_v,
        };
        let schedule = ParamSchedule::constant(params.to_vec());
        let sim = simulate_follower(ModelKind::Krauss, &schedule, &input, &ctx).unwrap();
        assert_eq!(sim.collision_count(), 0, "trial {trial} flagged a collision");
        for i in 0..COLLISION_FRAMES {
            min_gap = min_gap.min(leader_x[i] - sim.x[i] - leader_len);
        }
    }

    let elapsed = start.elapsed();
    check(
        "criterion 3 (collision-freedom)",
        min_gap > 0.0 && elapsed < COLLISION_TIME_LIMIT,
        format!(
            "{COLLISION_TRIALS} random leaders x {COLLISION_FRAMES} frames: smallest gap \
             {min_gap:.3} m, in {:.2} s",
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Planted-parameter recovery by per-window Bayesian optimization.

const PLANTED: KraussParams = KraussParams { t_r: 1.9, t_i: 0.33 };
const RECOVERY_RMSE: f64 = 0.05; // m/s per window
const RECOVERY_FRACTION: f64 = 0.9;
const RECOVERY_TIME_LIMIT: Duration = Duration::from_secs(300);

#[test]
fn criterion_4_planted_parameter_recovery() {
    let start = Instant::now();
    let ctx = SimContext::default();
    let schedule = ParamSchedule::constant(PLANTED.to_vec());
    let pair = planted_pair(ModelKind::Krauss, &schedule, 601, (1, 2), &ctx, 4).unwrap();

    let cfg = CalibConfig::new(1_234);
    let budget = cfg.budget.n_init + cfg.budget.n_iter;
    assert_eq!(budget, 33, "default search budget changed");
    assert_eq!((cfg.window_len, cfg.stride), (5, 5), "default windowing changed");

    // Single-threaded, as the runtime bound demands.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let labels =
        pool.install(|| label_windows(&[pair.clone()], ModelKind::Krauss, &cfg)).unwrap();

    let total = labels.windows.len();
    let recovered =
        labels.windows.iter().filter(|w| !w.collision && w.loss < RECOVERY_RMSE).count();
    let fraction = recovered as f64 / total as f64;
    let elapsed = start.elapsed();
    check(
        "criterion 4 (planted-parameter recovery)",
        total == 120 && fraction >= RECOVERY_FRACTION && elapsed < RECOVERY_TIME_LIMIT,
        format!(
            "budget-{budget} search fit {recovered}/{total} windows below {RECOVERY_RMSE} m/s \
             ({:.0}%), single-threaded in {:.1} s",
            100.0 * fraction,
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Analytic gradients match central finite differences.

const GRADIENT_TOL: f64 = 1e-4;
const GRADIENT_MODELS: u64 = 20;

#[test]
fn criterion_5_gradient_check() {
    let mut worst = 0.0f64;
    for seed in 0..GRADIENT_MODELS {
        let mut rng = ChaCha8Rng::seed_from_u64(drivecal::seed_mix(&[5_005, seed]));
        let arch = GruArch {
            input_dim: rng.gen_range(1..=3),
            hidden_dim: rng.gen_range(1..=4),
            output_dim: rng.gen_range(1..=2),
        };
        let bounds = vec![(0.0, 1.0); arch.output_dim];
        let model = GruModel::new(arch, bounds, seed).unwrap();
        let frames = rng.gen_range(2..=5);
        let inputs: Vec<Vec<f64>> = (0..frames)
            .map(|_| (0..arch.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let target: Vec<f64> =
            (0..arch.output_dim).map(|_| rng.gen_range(0.05..0.95)).collect();
        worst = worst.max(gradient_check(&model, &inputs, &target).unwrap());
    }
    check(
        "criterion 5 (gradient check)",
        worst < GRADIENT_TOL,
        format!(
            "max relative error {worst:.2e} over {GRADIENT_MODELS} random models \
             (limit {GRADIENT_TOL:.0e})"
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. Adaptive beats fixed calibration when the true parameters drift.

#[test]
fn criterion_6_adaptive_beats_fixed_on_drifting_parameters() {
    let ctx = SimContext::default();
    let spec = SinusoidSpec::default();
    let window_len = 8;
    let n_windows = 24;
    let schedule = sinusoid_krauss_schedule(&spec, n_windows, window_len, 0).unwrap();
    let frames = n_windows * window_len + 1;
    let pair = planted_pair(ModelKind::Krauss, &schedule, frames, (1, 2), &ctx, 33).unwrap();

    let mut cfg = EvalConfig::new(7);
    cfg.calib.window_len = window_len;
    cfg.calib.stride = window_len;
    cfg.calib.budget = BoBudget::default();
    cfg.train.epochs = 300;
    cfg.train.val_split = 0.0;
    cfg.hidden_dim = 8;

    let labels = label_windows(&[pair.clone()], ModelKind::Krauss, &cfg.calib).unwrap();
    let report = evaluate_pair(&pair, ModelKind::Krauss, &cfg, &labels).unwrap();
    let improvement = report.improvement.unwrap();
    check(
        "criterion 6 (adaptive beats fixed under drift)",
        improvement > 0.0,
        format!(
            "rmse default {:.3}, fixed {:.3}, adaptive {:.3} m/s -> improvement {:.1}%",
            report.rmse_default,
            report.rmse_fixed,
            report.rmse_proposed,
            100.0 * improvement
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. The improvement ratio reproduces a known reference computation.

const REFERENCE_FIXED: f64 = 1.033;
const REFERENCE_PROPOSED: f64 = 0.666;
const REFERENCE_IMPROVEMENT: f64 = 0.355;
const REFERENCE_TOL: f64 = 0.001; // 0.1 percentage points

#[test]
fn criterion_7_improvement_ratio_arithmetic() {
    let improvement = rmse_improvement(REFERENCE_FIXED, REFERENCE_PROPOSED).unwrap();
    check(
        "criterion 7 (improvement ratio arithmetic)",
        (improvement - REFERENCE_IMPROVEMENT).abs() <= REFERENCE_TOL,
        format!(
            "({REFERENCE_FIXED} − {REFERENCE_PROPOSED}) / {REFERENCE_FIXED} = {:.4} \
             (want {REFERENCE_IMPROVEMENT} ± {REFERENCE_TOL})",
            improvement
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Conditional: the real-data pipeline on a recorded I-80 pair.

const NGSIM_ENV: &str = "NGSIM_I80_CSV";

#[test]
fn criterion_8_recorded_pair_when_data_available() {
    let Ok(raw_csv) = std::env::var(NGSIM_ENV) else {
        println!(
            "acceptance criterion 8 (recorded I-80 pair): SKIP — set {NGSIM_ENV} to a raw \
             trajectory CSV to run"
        );
        return;
    };

    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = format!(
        "seed = 1\noutput_dir = \"out\"\nmodel = \"krauss\"\n\n[data]\nraw_csv = {}\n\
         units = \"feet\"\n\n[selection]\npairs = [[1, 11]]\n",
        toml::Value::String(raw_csv.clone())
    );
    fs::write(dir.join("cfg.toml"), config).unwrap();
    for sub in ["ingest", "label", "evaluate"] {
        run_binary(dir, &["--config", "cfg.toml", sub]);
    }

    let reports =
        read_pair_reports_csv(fs::File::open(dir.join("out/reports.csv")).unwrap()).unwrap();
    assert_eq!(reports.len(), 1, "expected exactly the selected pair");
    let report = &reports[0];
    let notes = fs::read_to_string(dir.join("out/notes.txt")).unwrap();
    let improvement = report.improvement;
    check(
        "criterion 8 (recorded I-80 pair)",
        report.pair_id == (1, 11)
            && improvement.is_some_and(|i| i > 0.0)
            && !notes.is_empty(),
        format!(
            "pair (1, 11) from {raw_csv}: rmse default {:.3}, fixed {:.3}, adaptive {:.3} m/s \
             -> improvement {:.1}%; convention note emitted ({} bytes)",
            report.rmse_default,
            report.rmse_fixed,
            report.rmse_proposed,
            100.0 * improvement.unwrap_or(f64::NAN),
            notes.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. Determinism: identical configs produce identical artifacts.

const DETERMINISM_CONFIG: &str = r#"
seed = 7
output_dir = "out"
model = "krauss"

[data]
min_overlap_frames = 100

[windows]
window_len = 8
stride = 8

[bo]
n_init = 4
n_iter = 6

[gru]
epochs = 60
hidden_dim = 8
val_split = 0.0

[synth]
corpus = "sinusoid"
frames = 193
"#;

#[test]
fn criterion_9_identical_configs_reproduce_artifacts() {
    let run_all = |dir: &Path| {
        fs::write(dir.join("cfg.toml"), DETERMINISM_CONFIG).unwrap();
        for sub in ["synth", "label", "train", "evaluate"] {
            run_binary(dir, &["--config", "cfg.toml", sub]);
        }
    };
    let tmp_a = tempfile::tempdir().unwrap();
    let tmp_b = tempfile::tempdir().unwrap();
    run_all(tmp_a.path());
    run_all(tmp_b.path());

    let artifacts =
        ["trajectories.csv", "labels.csv", "model.txt", "reports.csv", "manifest.toml"];
    let mut differing = Vec::new();
    for name in artifacts {
        let a = fs::read(tmp_a.path().join("out").join(name)).unwrap();
        let b = fs::read(tmp_b.path().join("out").join(name)).unwrap();
        if a != b {
            differing.push(name);
        }
    }
    check(
        "criterion 9 (determinism)",
        differing.is_empty(),
        format!(
            "label/train/evaluate reruns compared over {:?}: {}",
            artifacts,
            if differing.is_empty() {
                "byte-identical".to_string()
            } else {
                format!("differ in {differing:?}")
            }
        ),
    );
}

fn run_binary(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_drivecal"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("the drivecal binary should spawn");
    assert!(
        out.status.success(),
        "`drivecal {}` failed\nstdout:\n{}\nstderr:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}
