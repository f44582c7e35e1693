//! Per-window parameter labeling and whole-trajectory fixed calibration.
//!
//! Labeling runs one Bayesian optimization per window: the follower model is
//! simulated over the window from the real initial state, and the loss is
//! the velocity RMSE against the recorded follower plus a collision penalty.
//! The resulting (features, best parameters) pairs are the supervision for
//! the GRU predictor.
//!
//! Scored frames exclude a simulation's first frame: it is pinned to the
//! real state and carries no information about the parameters.
//!
//! Fixed calibration runs the same optimization once per pair over the
//! training prefix of its overlap, yielding the non-adaptive baseline.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::bayesopt::{bo_minimize, BoConfig, NON_FINITE_PENALTY};
use crate::carfollow::{simulate_follower, ModelKind, ParamSchedule, SimContext, SimInput};
use crate::trajdata::{slice_windows, TrajectorySample, VehiclePair, Window};
use crate::{seed_mix, Error, Result};

/// Velocity-RMSE surcharge per colliding frame, m/s.
pub const COLLISION_PENALTY: f64 = 10.0;

/// Offsets of the bracket seeds around the pair-level fit, as fractions of
/// each parameter's bound range. Two scales: the tight pair reads the local
/// slope for final polishing, the wide pair covers a window whose behavior
/// has drifted well away from the pair's typical fit.
const BRACKET_FRACTIONS: [f64; 2] = [0.02, 0.08];

/// Optimizer budget and kernel settings shared by every labeling run; the
/// per-run bounds, seed, and seed points are filled in per window.
#[derive(Debug, Clone, PartialEq)]
pub struct BoBudget {
    pub n_init: usize,
    pub n_iter: usize,
    pub noise_floor: f64,
    pub lengthscale: Option<f64>,
    pub variance: Option<f64>,
}

impl Default for BoBudget {
    fn default() -> Self {
        Self { n_init: 8, n_iter: 25, noise_floor: 1e-6, lengthscale: None, variance: None }
    }
}

impl BoBudget {
    pub fn to_bo_config(
        &self,
        bounds: Vec<(f64, f64)>,
        seed: u64,
        seed_points: Vec<Vec<f64>>,
    ) -> BoConfig {
        BoConfig {
            bounds,
            n_init: self.n_init,
            n_iter: self.n_iter,
            seed,
            noise_floor: self.noise_floor,
            lengthscale: self.lengthscale,
            variance: self.variance,
            seed_points,
        }
    }
}

/// Settings for labeling and fixed calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibConfig {
    pub ctx: SimContext,
    /// Frames per window.
    pub window_len: usize,
    /// Frames between window starts; equal to `window_len` for tiling.
    pub stride: usize,
    /// Fraction of windows (and of overlap frames) used for training.
    pub train_fraction: f64,
    pub budget: BoBudget,
    pub seed: u64,
    /// Optional parameter-box override; `None` uses the model's documented
    /// bounds. See [`CalibConfig::param_bounds`].
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl CalibConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            ctx: SimContext::default(),
            window_len: 5,
            stride: 5,
            train_fraction: 0.8,
            budget: BoBudget::default(),
            seed,
            bounds: None,
        }
    }

    /// The search box for `kind`: the configured override when present
    /// (validated against the model's parameter count), otherwise the
    /// model's documented bounds.
    pub fn param_bounds(&self, kind: ModelKind) -> Result<Vec<(f64, f64)>> {
        match &self.bounds {
            None => Ok(kind.bounds()),
            Some(b) => {
                if b.len() != kind.param_count() {
                    return Err(Error::Config(format!(
                        "{} bounds configured for the {} model's {} parameters",
                        b.len(),
                        kind.as_str(),
                        kind.param_count()
                    )));
                }
                for (i, &(lo, hi)) in b.iter().enumerate() {
                    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                        return Err(Error::Config(format!(
                            "bound for parameter {} must satisfy low < high, got [{lo}, {hi}]",
                            kind.param_names()[i]
                        )));
                    }
                }
                Ok(b.clone())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ctx.validate()?;
        if self.window_len < 2 {
            return Err(Error::Config(format!(
                "window_len must be at least 2 so a window has a scored frame, got {}",
                self.window_len
            )));
        }
        if self.stride < 1 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must be in (0, 1], got {}",
                self.train_fraction
            )));
        }
        if self.budget.n_init < 2 {
            return Err(Error::Config(format!(
                "n_init must be at least 2, got {}",
                self.budget.n_init
            )));
        }
        Ok(())
    }
}

/// Number of leading windows that form the training split: the count is
/// rounded (half away from zero), so 167 windows at 0.8 give 134.
pub fn train_window_count(n_windows: usize, train_fraction: f64) -> usize {
    ((n_windows as f64 * train_fraction).round() as usize).min(n_windows)
}

/// Number of leading overlap frames forming the fixed-calibration training
/// segment; at least 2 so the segment has a scored frame.
pub fn train_frame_count(overlap: usize, train_fraction: f64) -> usize {
    ((overlap as f64 * train_fraction).round() as usize).clamp(2.min(overlap), overlap)
}

/// Simulation-based loss over one leader/follower segment.
///
/// Holds the leader replay and the real follower velocities; each
/// [`WindowObjective::loss`] call simulates the model from the real initial
/// state and scores frames `1..len` (the initial frame is pinned).
#[derive(Debug, Clone)]
pub struct WindowObjective {
    kind: ModelKind,
    ctx: SimContext,
    start_frame: i64,
    leader_x: Vec<f64>,
    leader_v: Vec<f64>,
    leader_len: f64,
    real_v: Vec<f64>,
    init_x: f64,
    init_v: f64,
}

/// RMSE and collision count of one simulated parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowEval {
    /// Velocity RMSE over the scored frames, m/s.
    pub rmse: f64,
    /// Scored frames where the simulated gap went negative.
    pub collision_frames: usize,
}

impl WindowEval {
    pub fn loss(&self) -> f64 {
        self.rmse + COLLISION_PENALTY * self.collision_frames as f64
    }
}

impl WindowObjective {
    /// Builds the objective from aligned leader/follower sample slices.
    pub fn from_samples(
        kind: ModelKind,
        ctx: &SimContext,
        leader: &[TrajectorySample],
        follower: &[TrajectorySample],
        leader_len: f64,
    ) -> Result<Self> {
        if leader.len() != follower.len() {
            return Err(Error::Data(format!(
                "leader/follower segment length mismatch: {} vs {}",
                leader.len(),
                follower.len()
            )));
        }
        if follower.len() < 2 {
            return Err(Error::Data(format!(
                "segment needs at least 2 frames to score, got {}",
                follower.len()
            )));
        }
        Ok(Self {
            kind,
            ctx: *ctx,
            start_frame: follower[0].frame,
            leader_x: leader.iter().map(|s| s.position).collect(),
            leader_v: leader.iter().map(|s| s.velocity).collect(),
            leader_len,
            real_v: follower.iter().map(|s| s.velocity).collect(),
            init_x: follower[0].position,
            init_v: follower[0].velocity,
        })
    }

    pub fn from_window(window: &Window<'_>, kind: ModelKind, ctx: &SimContext) -> Result<Self> {
        Self::from_samples(kind, ctx, window.leader, window.follower, window.leader_len)
    }

    /// Simulates `params` and scores them against the recorded follower.
    pub fn evaluate(&self, params: &[f64]) -> Result<WindowEval> {
        self.evaluate_schedule(&ParamSchedule::constant(params.to_vec()))
    }

    /// Simulates a parameter schedule over the segment and scores it; the
    /// schedule must cover every segment frame except the last.
    pub fn evaluate_schedule(&self, schedule: &ParamSchedule) -> Result<WindowEval> {
        let input = SimInput {
            start_frame: self.start_frame,
            leader_x: &self.leader_x,
            leader_v: &self.leader_v,
            leader_len: self.leader_len,
            init_x: self.init_x,
            init_v: self.init_v,
        };
        let sim = simulate_follower(self.kind, schedule, &input, &self.ctx)?;
        let mut sq_sum = 0.0;
        let mut collision_frames = 0;
        for i in 1..sim.v.len() {
            let d = sim.v[i] - self.real_v[i];
            sq_sum += d * d;
            if sim.collision[i] {
                collision_frames += 1;
            }
        }
        let rmse = (sq_sum / (sim.v.len() - 1) as f64).sqrt();
        Ok(WindowEval { rmse, collision_frames })
    }

    /// Loss for the optimizer; simulation failures and non-finite results
    /// come back as [`NON_FINITE_PENALTY`] rather than errors.
    pub fn loss(&self, params: &[f64]) -> f64 {
        match self.evaluate(params) {
            Ok(eval) => {
                let loss = eval.loss();
                if loss.is_finite() {
                    loss
                } else {
                    NON_FINITE_PENALTY
                }
            }
            Err(_) => NON_FINITE_PENALTY,
        }
    }

    pub fn len(&self) -> usize {
        self.real_v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.real_v.is_empty()
    }
}

/// Builds the per-window loss function used by labeling.
pub fn window_objective(
    window: &Window<'_>,
    kind: ModelKind,
    ctx: &SimContext,
) -> Result<WindowObjective> {
    WindowObjective::from_window(window, kind, ctx)
}

/// Chronological split marker of a labeled window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split marker {other:?}"))),
        }
    }
}

/// One window with its optimized parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub pair_id: (u64, u64),
    pub window_index: usize,
    pub start_frame: i64,
    pub params: Vec<f64>,
    /// Best loss found: velocity RMSE plus collision penalty.
    pub loss: f64,
    /// Whether the best parameters still produce a collision in the window.
    pub collision: bool,
    pub split: Split,
}

/// All labeled windows of a corpus, grouped by pair in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDataset {
    pub model_kind: ModelKind,
    pub windows: Vec<LabeledWindow>,
}

impl LabelDataset {
    /// Labeled windows of one pair, in window order.
    pub fn pair_windows(&self, pair_id: (u64, u64)) -> Vec<&LabeledWindow> {
        self.windows.iter().filter(|w| w.pair_id == pair_id).collect()
    }
}

/// Labels every window of every pair with its locally optimal parameters.
///
/// Each window gets an independent optimizer run seeded by
/// `seed_mix(&[seed, leader_id, follower_id, window_index])`, with the
/// model's default parameters as a seed point, so the labeled loss never
/// exceeds the default-parameter loss. Windows are processed in parallel;
/// results are deterministic regardless of thread count.
pub fn label_windows(
    pairs: &[VehiclePair],
    kind: ModelKind,
    cfg: &CalibConfig,
) -> Result<LabelDataset> {
    cfg.validate()?;
    let mut windows = Vec::new();
    for pair in pairs {
        let pair_windows = slice_windows(pair, cfg.window_len, cfg.stride)?;
        let n_train = train_window_count(pair_windows.len(), cfg.train_fraction);
        // Pair-level fit, used to seed every window's search. A driver
        // mostly hovers around one typical behavior, so starting each
        // window at the pair's best constant parameters turns the window
        // search into a local refinement — and rescues windows whose
        // objectives are too flat or too narrow for a cold search to read.
        let pair_fit =
            if pair_windows.len() >= 2 { Some(pair_seed(pair, kind, cfg)?) } else { None };
        let labeled: Vec<LabeledWindow> = pair_windows
            .par_iter()
            .map(|w| label_one_window(w, kind, cfg, n_train, pair_fit.as_deref()))
            .collect::<Result<Vec<_>>>()?;
        windows.extend(labeled);
    }
    Ok(LabelDataset { model_kind: kind, windows })
}

/// Deterministic seed points for a calibration search: the model's default
/// parameters first, then a coarse `sweep`-point pass along the bound-box
/// diagonal (any remaining initial budget stays quasi-random). A surrogate
/// fitted on the sweep has seen the objective's large-scale shape along
/// every parameter at once, so the acquisition cannot write off a whole
/// region after a couple of unlucky early draws — which is exactly what
/// happens on plateau-and-valley velocity objectives otherwise.
fn initial_design(kind: ModelKind, bounds: &[(f64, f64)], sweep: usize) -> Vec<Vec<f64>> {
    let mut points = vec![kind.default_params()];
    for j in 1..=sweep {
        let t = j as f64 / (sweep + 1) as f64;
        points.push(bounds.iter().map(|&(lo, hi)| lo + t * (hi - lo)).collect());
    }
    points
}

fn label_one_window(
    window: &Window<'_>,
    kind: ModelKind,
    cfg: &CalibConfig,
    n_train: usize,
    pair_fit: Option<&[f64]>,
) -> Result<LabeledWindow> {
    let objective = WindowObjective::from_window(window, kind, &cfg.ctx)?;
    let seed = seed_mix(&[cfg.seed, window.pair_id.0, window.pair_id.1, window.index as u64]);
    let bounds = cfg.param_bounds(kind)?;
    let design = match pair_fit {
        None => initial_design(kind, &bounds, cfg.budget.n_init / 2),
        Some(fit) => {
            // The fit plus brackets around it, then a diagonal sweep sized
            // to the leftover budget. An isolated low sample tells the
            // surrogate nothing about which way is downhill, so the
            // acquisition would never propose near it; the brackets give
            // it a slope to descend at two scales.
            let cluster: Vec<Vec<f64>> = std::iter::once(0.0)
                .chain(BRACKET_FRACTIONS.iter().flat_map(|&b| [-b, b]))
                .map(|step| {
                    fit.iter()
                        .zip(&bounds)
                        .map(|(&v, &(lo, hi))| (v + step * (hi - lo)).clamp(lo, hi))
                        .collect()
                })
                .collect();
            let sweep = cfg.budget.n_init.saturating_sub(1 + cluster.len());
            let mut design = initial_design(kind, &bounds, sweep);
            design.splice(1..1, cluster);
            design
        }
    };
    let bo_cfg = cfg.budget.to_bo_config(bounds, seed, design);
    let result = bo_minimize(|p| objective.loss(p), &bo_cfg)?;
    let collision = objective
        .evaluate(&result.best_point)
        .map(|e| e.collision_frames > 0)
        .unwrap_or(true);
    Ok(LabeledWindow {
        pair_id: window.pair_id,
        window_index: window.index,
        start_frame: window.start_frame,
        params: result.best_point,
        loss: result.best_value,
        collision,
        split: if window.index < n_train { Split::Train } else { Split::Test },
    })
}

/// Pair-level seed for every window search of one pair: the fixed
/// calibration, polished by a deterministic shrinking coordinate descent on
/// the same training-prefix objective. The surrogate search lands within a
/// couple of percent of each parameter's range; the descent buys the final
/// digits for a few dozen extra simulations per pair, and a window seeded
/// this close to the driver's typical behavior rarely needs more than local
/// refinement.
fn pair_seed(pair: &VehiclePair, kind: ModelKind, cfg: &CalibConfig) -> Result<Vec<f64>> {
    let fit = fixed_calibration(pair, kind, cfg)?;
    let seg = train_frame_count(pair.overlap_len(), cfg.train_fraction);
    let objective = WindowObjective::from_samples(
        kind,
        &cfg.ctx,
        &pair.leader.samples[..seg],
        &pair.follower.samples[..seg],
        pair.leader.vehicle_length(),
    )?;
    let bounds = cfg.param_bounds(kind)?;
    Ok(descend(|p| objective.loss(p), fit, &bounds))
}

/// Coordinate descent with halving steps, for polishing an already
/// near-optimal point. Deterministic and derivative-free; each round tries
/// one step up and down per coordinate and keeps any improvement.
fn descend(mut f: impl FnMut(&[f64]) -> f64, start: Vec<f64>, bounds: &[(f64, f64)]) -> Vec<f64> {
    let mut best_val = f(&start);
    let mut best = start;
    let mut steps: Vec<f64> = bounds.iter().map(|&(lo, hi)| 0.05 * (hi - lo)).collect();
    for _ in 0..12 {
        for (d, &(lo, hi)) in bounds.iter().enumerate() {
            for dir in [-1.0, 1.0] {
                let mut cand = best.clone();
                cand[d] = (cand[d] + dir * steps[d]).clamp(lo, hi);
                let v = f(&cand);
                if v < best_val {
                    best = cand;
                    best_val = v;
                }
            }
        }
        for s in &mut steps {
            *s *= 0.5;
        }
    }
    best
}

/// Calibrates one constant parameter vector against the training prefix of
/// a pair's overlap (the first `train_fraction` of its frames, rounded).
///
/// The pair must be long enough for at least 2 windows, so a fixed and an
/// adaptive calibration are always comparable on the same data.
pub fn fixed_calibration(
    pair: &VehiclePair,
    kind: ModelKind,
    cfg: &CalibConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n_windows = slice_windows(pair, cfg.window_len, cfg.stride)?.len();
    if n_windows < 2 {
        return Err(Error::Data(format!(
            "pair ({}, {}): need at least 2 windows for fixed calibration, got {n_windows}",
            pair.leader.vehicle_id, pair.follower.vehicle_id
        )));
    }
    let seg = train_frame_count(pair.overlap_len(), cfg.train_fraction);
    let objective = WindowObjective::from_samples(
        kind,
        &cfg.ctx,
        &pair.leader.samples[..seg],
        &pair.follower.samples[..seg],
        pair.leader.vehicle_length(),
    )?;
    let seed = seed_mix(&[cfg.seed, pair.leader.vehicle_id, pair.follower.vehicle_id, u64::MAX]);
    let bounds = cfg.param_bounds(kind)?;
    let design = initial_design(kind, &bounds, cfg.budget.n_init / 2);
    let bo_cfg = cfg.budget.to_bo_config(bounds, seed, design);
    let result = bo_minimize(|p| objective.loss(p), &bo_cfg)?;
    Ok(result.best_point)
}

/// Default model parameters, the baseline of every comparison.
pub fn default_params(kind: ModelKind) -> Vec<f64> {
    kind.default_params()
}

/// Writes a label dataset as CSV. Parameter columns carry the model's
/// parameter names, which also identify the model kind on read.
pub fn write_labels_csv<W: Write>(writer: W, dataset: &LabelDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "leader_id".to_string(),
        "follower_id".to_string(),
        "window_index".to_string(),
        "start_frame".to_string(),
    ];
    header.extend(dataset.model_kind.param_names().iter().map(|s| s.to_string()));
    header.extend(["loss".to_string(), "collision".to_string(), "split".to_string()]);
    w.write_record(&header).map_err(Error::Csv)?;
    for lw in &dataset.windows {
        let mut rec = vec![
            lw.pair_id.0.to_string(),
            lw.pair_id.1.to_string(),
            lw.window_index.to_string(),
            lw.start_frame.to_string(),
        ];
        rec.extend(lw.params.iter().map(|p| p.to_string()));
        rec.push(lw.loss.to_string());
        rec.push(lw.collision.to_string());
        rec.push(lw.split.as_str().to_string());
        w.write_record(&rec).map_err(Error::Csv)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a label dataset written by [`write_labels_csv`], inferring the
/// model kind from the parameter column names.
pub fn read_labels_csv<R: Read>(reader: R) -> Result<LabelDataset> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(Error::Csv)?.clone();
    let cols: Vec<&str> = headers.iter().collect();

    let kind = [ModelKind::Krauss, ModelKind::Wiedemann]
        .into_iter()
        .find(|k| {
            let names = k.param_names();
            cols.len() == names.len() + 7
                && cols[4..4 + names.len()] == *names
        })
        .ok_or_else(|| Error::Data(format!("unrecognized label CSV header: {cols:?}")))?;
    let n_params = kind.param_count();
    let expected_prefix = ["leader_id", "follower_id", "window_index", "start_frame"];
    if cols[..4] != expected_prefix {
        return Err(Error::Data(format!("unrecognized label CSV header: {cols:?}")));
    }

    let mut windows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(Error::Csv)?;
        let line = i + 2;
        let field = |idx: usize, name: &str| -> Result<&str> {
            record
                .get(idx)
                .ok_or_else(|| Error::Data(format!("line {line}: missing {name}")))
        };
        let parse_f64 = |idx: usize, name: &str| -> Result<f64> {
            field(idx, name)?
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: cannot parse {name}")))
        };
        let mut params = Vec::with_capacity(n_params);
        for (j, name) in kind.param_names().iter().enumerate() {
            params.push(parse_f64(4 + j, name)?);
        }
        let collision = match field(4 + n_params + 1, "collision")? {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::Data(format!("line {line}: bad collision flag {other:?}")))
            }
        };
        windows.push(LabeledWindow {
            pair_id: (
                field(0, "leader_id")?
                    .parse()
                    .map_err(|_| Error::Data(format!("line {line}: cannot parse leader_id")))?,
                field(1, "follower_id")?
                    .parse()
                    .map_err(|_| Error::Data(format!("line {line}: cannot parse follower_id")))?,
            ),
            window_index: field(2, "window_index")?
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: cannot parse window_index")))?,
            start_frame: field(3, "start_frame")?
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: cannot parse start_frame")))?,
            params,
            loss: parse_f64(4 + n_params, "loss")?,
            collision,
            split: Split::parse(field(4 + n_params + 2, "split")?)?,
        });
    }
    Ok(LabelDataset { model_kind: kind, windows })
}

/// One pair's fixed calibration: the single parameter vector fit to its
/// training span.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedParams {
    pub pair_id: (u64, u64),
    pub params: Vec<f64>,
}

/// Writes fixed calibrations, one row per pair, parameter columns named
/// after the model's parameters.
pub fn write_fixed_params_csv<W: Write>(
    writer: W,
    kind: ModelKind,
    rows: &[FixedParams],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["leader_id".to_string(), "follower_id".to_string()];
    header.extend(kind.param_names().iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(Error::Csv)?;
    for row in rows {
        if row.params.len() != kind.param_count() {
            return Err(Error::Data(format!(
                "pair {:?}: {} parameters for the {} model's {}",
                row.pair_id,
                row.params.len(),
                kind.as_str(),
                kind.param_count()
            )));
        }
        let mut rec = vec![row.pair_id.0.to_string(), row.pair_id.1.to_string()];
        rec.extend(row.params.iter().map(|p| p.to_string()));
        w.write_record(&rec).map_err(Error::Csv)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads fixed calibrations written by [`write_fixed_params_csv`],
/// checking the header against `kind`'s parameter names.
pub fn read_fixed_params_csv<R: Read>(reader: R, kind: ModelKind) -> Result<Vec<FixedParams>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(Error::Csv)?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let names = kind.param_names();
    if cols.len() != names.len() + 2
        || cols[..2] != ["leader_id", "follower_id"]
        || cols[2..] != *names
    {
        return Err(Error::Data(format!(
            "fixed-parameter CSV header {cols:?} does not match the {} model",
            kind.as_str()
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(Error::Csv)?;
        let line = i + 2;
        let id = |idx: usize, name: &str| -> Result<u64> {
            record
                .get(idx)
                .ok_or_else(|| Error::Data(format!("line {line}: missing {name}")))?
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: cannot parse {name}")))
        };
        let mut params = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            params.push(
                record
                    .get(2 + j)
                    .ok_or_else(|| Error::Data(format!("line {line}: missing {name}")))?
                    .parse()
                    .map_err(|_| Error::Data(format!("line {line}: cannot parse {name}")))?,
            );
        }
        rows.push(FixedParams { pair_id: (id(0, "leader_id")?, id(1, "follower_id")?), params });
    }
    Ok(rows)
}
