//! The declarative run configuration.
//!
//! One TOML file holds every knob of the pipeline; subcommands read the
//! sections they need. `--set section.key=value` overrides individual
//! entries before validation, and the SHA-256 of the resolved config is
//! recorded in the output manifest so artifacts are traceable to the exact
//! settings that produced them.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use drivecal::calib::{BoBudget, CalibConfig};
use drivecal::carfollow::{ModelKind, SimContext};
use drivecal::evalharness::EvalConfig;
use drivecal::grunet::TrainConfig;
use drivecal::stylescore::Orientation;
use drivecal::trajdata::{ColumnMap, UnitMode};

use crate::manifest::sha256_hex;

/// Everything a run needs, in one declarative file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every stage derives its own seeds from it.
    pub seed: u64,
    /// Directory that receives every artifact and the manifest.
    pub output_dir: PathBuf,
    /// Car-following model: "krauss" or "wiedemann".
    pub model: String,
    /// Optional parameter box override, one `[low, high]` per model
    /// parameter; omitted entries mean the model's documented bounds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
    pub data: DataSection,
    pub context: ContextSection,
    pub windows: WindowsSection,
    pub scoring: ScoringSection,
    pub bo: BoSection,
    pub gru: GruSection,
    pub evaluate: EvaluateSection,
    pub selection: SelectionSection,
    pub simulate: SimulateSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            output_dir: PathBuf::from("out"),
            model: "krauss".into(),
            bounds: None,
            data: DataSection::default(),
            context: ContextSection::default(),
            windows: WindowsSection::default(),
            scoring: ScoringSection::default(),
            bo: BoSection::default(),
            gru: GruSection::default(),
            evaluate: EvaluateSection::default(),
            selection: SelectionSection::default(),
            simulate: SimulateSection::default(),
            synth: SynthSection::default(),
        }
    }
}

/// Raw input data: where it lives and how to read it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Raw trajectory CSV consumed by `ingest`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_csv: Option<PathBuf>,
    /// Units of the raw file: "feet" or "meters".
    pub units: String,
    /// Minimum leader/follower overlap, frames, for a usable pair.
    pub min_overlap_frames: usize,
    pub columns: ColumnsSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            raw_csv: None,
            units: "feet".into(),
            min_overlap_frames: 700,
            columns: ColumnsSection::default(),
        }
    }
}

/// Raw CSV header names for each logical column.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnsSection {
    pub vehicle_id: String,
    pub frame: String,
    pub position: String,
    pub velocity: String,
    pub acceleration: String,
    pub leader_id: String,
    pub vehicle_length: String,
}

impl Default for ColumnsSection {
    fn default() -> Self {
        let m = ColumnMap::default();
        Self {
            vehicle_id: m.vehicle_id,
            frame: m.frame,
            position: m.position,
            velocity: m.velocity,
            acceleration: m.acceleration,
            leader_id: m.leader_id,
            vehicle_length: m.vehicle_length,
        }
    }
}

/// Simulation environment shared by every model run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextSection {
    /// Frame duration, seconds.
    pub dt: f64,
    /// Road speed limit, m/s.
    pub v_max: f64,
    /// Maximum acceleration, m/s^2.
    pub a_max: f64,
    /// Maximum deceleration magnitude, m/s^2.
    pub b_max: f64,
}

impl Default for ContextSection {
    fn default() -> Self {
        let c = SimContext::default();
        Self { dt: c.dt, v_max: c.v_max, a_max: c.a_max, b_max: c.b_max }
    }
}

/// Time-window slicing of each pair's overlap.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowsSection {
    /// Frames per window.
    pub window_len: usize,
    /// Frames between window starts; keep equal to `window_len` for the
    /// tiling windows the adaptive replay needs.
    pub stride: usize,
    /// Leading fraction of windows (and frames) used for training.
    pub train_fraction: f64,
}

impl Default for WindowsSection {
    fn default() -> Self {
        let c = CalibConfig::new(0);
        Self { window_len: c.window_len, stride: c.stride, train_fraction: c.train_fraction }
    }
}

/// Driving-style scoring knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    /// Whether large headways score toward aggressive ("benefit") or
    /// conservative ("cost").
    pub headway_orientation: String,
    /// Percentile cuts separating the three clusters.
    pub percentiles: [f64; 2],
    /// Bin count of the score histogram written by `report`.
    pub histogram_bins: usize,
}

impl Default for ScoringSection {
    fn default() -> Self {
        Self { headway_orientation: "cost".into(), percentiles: [25.0, 75.0], histogram_bins: 20 }
    }
}

/// Per-window Bayesian-optimization budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoSection {
    /// Space-filling evaluations before the surrogate takes over.
    pub n_init: usize,
    /// Surrogate-guided evaluations after the initial design.
    pub n_iter: usize,
    /// Smallest observation-noise variance the surrogate will assume.
    pub noise_floor: f64,
    /// Fixed kernel lengthscale; omitted means the built-in heuristic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lengthscale: Option<f64>,
    /// Fixed kernel variance; omitted means the built-in heuristic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
}

impl Default for BoSection {
    fn default() -> Self {
        let b = BoBudget::default();
        Self {
            n_init: b.n_init,
            n_iter: b.n_iter,
            noise_floor: b.noise_floor,
            lengthscale: b.lengthscale,
            variance: b.variance,
        }
    }
}

/// Parameter-predictor network and training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GruSection {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_split: f64,
    pub learning_rate: f64,
    pub gradient_clip: f64,
}

impl Default for GruSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden_dim: 32,
            epochs: t.epochs,
            batch_size: t.batch_size,
            val_split: t.val_split,
            learning_rate: t.learning_rate,
            gradient_clip: t.gradient_clip,
        }
    }
}

/// Cluster-level evaluation protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Cross-validation folds per cluster.
    pub folds: usize,
    /// Fraction trimmed from each end of the improvement distribution.
    pub trim: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { folds: 5, trim: 0.10 }
    }
}

/// Restricts labeling, calibration, training, and evaluation to chosen
/// pairs. Empty means every extracted pair.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    /// `[leader_id, follower_id]` entries.
    pub pairs: Vec<[u64; 2]>,
}

/// What the `simulate` subcommand replays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// `[leader_id, follower_id]` to replay.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<[u64; 2]>,
    /// "default", "fixed", or "adaptive".
    pub calibration: String,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { pair: None, calibration: "adaptive".into() }
    }
}

/// Synthetic-corpus generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// "style" (many planted drivers), "constant" (one pair, one fixed
    /// parameter vector), or "sinusoid" (one pair whose reaction time
    /// drifts across windows).
    pub corpus: String,
    /// Pair count of the "style" corpus.
    pub pairs: usize,
    /// Frames per generated vehicle.
    pub frames: usize,
    /// Planted parameter vector of the "constant" corpus; omitted means
    /// the model defaults.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<f64>>,
    /// Mean reaction time of the "sinusoid" corpus, seconds.
    pub center: f64,
    /// Peak reaction-time deviation of the "sinusoid" corpus, seconds.
    pub amplitude: f64,
    /// Reaction-time wave period, in windows.
    pub period_windows: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            corpus: "style".into(),
            pairs: 94,
            frames: 900,
            params: None,
            center: 1.5,
            amplitude: 0.7,
            period_windows: 12.0,
        }
    }
}

impl RunConfig {
    pub fn model_kind(&self) -> Result<ModelKind> {
        ModelKind::parse(&self.model)
            .map_err(|_| anyhow!("model: unknown model {:?}, expected \"krauss\" or \"wiedemann\"", self.model))
    }

    pub fn unit_mode(&self) -> Result<UnitMode> {
        UnitMode::parse(&self.data.units).map_err(|e| anyhow!("data.units: {e}"))
    }

    pub fn headway_orientation(&self) -> Result<Orientation> {
        match self.scoring.headway_orientation.as_str() {
            "benefit" => Ok(Orientation::Benefit),
            "cost" => Ok(Orientation::Cost),
            other => bail!(
                "scoring.headway_orientation: unknown orientation {other:?}, \
                 expected \"benefit\" or \"cost\""
            ),
        }
    }

    pub fn column_map(&self) -> ColumnMap {
        let c = &self.data.columns;
        ColumnMap {
            vehicle_id: c.vehicle_id.clone(),
            frame: c.frame.clone(),
            position: c.position.clone(),
            velocity: c.velocity.clone(),
            acceleration: c.acceleration.clone(),
            leader_id: c.leader_id.clone(),
            vehicle_length: c.vehicle_length.clone(),
        }
    }

    pub fn sim_context(&self) -> SimContext {
        SimContext {
            dt: self.context.dt,
            v_max: self.context.v_max,
            a_max: self.context.a_max,
            b_max: self.context.b_max,
        }
    }

    pub fn calib_config(&self) -> CalibConfig {
        CalibConfig {
            ctx: self.sim_context(),
            window_len: self.windows.window_len,
            stride: self.windows.stride,
            train_fraction: self.windows.train_fraction,
            budget: BoBudget {
                n_init: self.bo.n_init,
                n_iter: self.bo.n_iter,
                noise_floor: self.bo.noise_floor,
                lengthscale: self.bo.lengthscale,
                variance: self.bo.variance,
            },
            seed: self.seed,
            bounds: self.bounds.as_ref().map(|b| b.iter().map(|&[lo, hi]| (lo, hi)).collect()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.gru.epochs,
            batch_size: self.gru.batch_size,
            val_split: self.gru.val_split,
            learning_rate: self.gru.learning_rate,
            gradient_clip: self.gru.gradient_clip,
            seed: self.seed,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            calib: self.calib_config(),
            train: self.train_config(),
            hidden_dim: self.gru.hidden_dim,
        }
    }

    /// Field-level validation of every section, independent of which
    /// subcommand runs.
    pub fn validate(&self) -> Result<()> {
        let kind = self.model_kind()?;
        self.unit_mode()?;
        self.headway_orientation()?;

        if let Some(raw) = &self.data.raw_csv {
            if !raw.exists() {
                bail!("data.raw_csv: file {} does not exist", raw.display());
            }
        }
        if self.data.min_overlap_frames < 2 {
            bail!(
                "data.min_overlap_frames: need at least 2 frames of overlap, got {}",
                self.data.min_overlap_frames
            );
        }

        self.calib_config().validate().map_err(|e| anyhow!("[context]/[windows]/[bo]: {e}"))?;
        self.calib_config().param_bounds(kind).map_err(|e| anyhow!("bounds: {e}"))?;
        self.train_config().validate().map_err(|e| anyhow!("[gru]: {e}"))?;
        if self.gru.hidden_dim < 1 {
            bail!("gru.hidden_dim: must be at least 1, got {}", self.gru.hidden_dim);
        }

        let [p_lo, p_hi] = self.scoring.percentiles;
        if !(0.0 < p_lo && p_lo < p_hi && p_hi < 100.0) {
            bail!(
                "scoring.percentiles: must satisfy 0 < low < high < 100, got [{p_lo}, {p_hi}]"
            );
        }
        if self.scoring.histogram_bins < 1 {
            bail!("scoring.histogram_bins: need at least 1 bin");
        }

        if self.evaluate.folds < 2 {
            bail!("evaluate.folds: need at least 2 folds, got {}", self.evaluate.folds);
        }
        if !(0.0..0.5).contains(&self.evaluate.trim) {
            bail!("evaluate.trim: must be in [0, 0.5), got {}", self.evaluate.trim);
        }

        for &[leader, follower] in &self.selection.pairs {
            if leader == follower {
                bail!("selection.pairs: leader and follower share id {leader}");
            }
        }
        if let Some([leader, follower]) = self.simulate.pair {
            if leader == follower {
                bail!("simulate.pair: leader and follower share id {leader}");
            }
        }
        match self.simulate.calibration.as_str() {
            "default" | "fixed" | "adaptive" => {}
            other => bail!(
                "simulate.calibration: unknown calibration {other:?}, \
                 expected \"default\", \"fixed\", or \"adaptive\""
            ),
        }

        match self.synth.corpus.as_str() {
            "style" | "constant" | "sinusoid" => {}
            other => bail!(
                "synth.corpus: unknown corpus {other:?}, \
                 expected \"style\", \"constant\", or \"sinusoid\""
            ),
        }
        if self.synth.pairs < 1 {
            bail!("synth.pairs: need at least one pair");
        }
        if self.synth.frames < 2 {
            bail!("synth.frames: need at least 2 frames, got {}", self.synth.frames);
        }
        if let Some(params) = &self.synth.params {
            if params.len() != kind.param_count() {
                bail!(
                    "synth.params: {} values for the {} model's {} parameters",
                    params.len(),
                    kind.as_str(),
                    kind.param_count()
                );
            }
        }
        if !(self.synth.center.is_finite()
            && self.synth.amplitude.is_finite()
            && self.synth.period_windows > 0.0)
        {
            bail!("synth: center/amplitude must be finite and period_windows positive");
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration (file plus overrides plus
    /// defaults), the identity recorded in the manifest.
    pub fn config_hash(&self) -> Result<String> {
        let text = toml::to_string(self).context("serialize resolved config")?;
        Ok(sha256_hex(text.as_bytes()))
    }
}

/// Reads the config file, applies `--set key=value` overrides, and
/// validates the result.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    parse_config(&text, overrides)
        .with_context(|| format!("invalid config {}", path.display()))
}

/// The pure part of [`load_config`]: parse, override, deserialize, validate.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut value: toml::Value = text.parse().context("not valid TOML")?;
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    let config: RunConfig = value.try_into().map_err(|e| anyhow!("{e}"))?;
    config.validate()?;
    Ok(config)
}

/// Applies one `section.key=value` override to the parsed TOML tree.
/// The value is parsed as TOML itself (so `true`, `3.5`, `[1, 2]`, and
/// `"text"` all work); bare words fall back to strings.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .with_context(|| format!("override {spec:?} must look like section.key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("override {spec:?} has an empty key");
    }
    let parsed = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(table) => table["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };

    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .with_context(|| format!("override {key:?}: {part:?} is not a table"))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .with_context(|| format!("override {key:?}: parent of the last key is not a table"))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_to_defaults() {
        let cfg = parse_config("", &[]).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.model, "krauss");
        assert_eq!(cfg.windows.window_len, 5);
        assert_eq!(cfg.data.columns.vehicle_id, "Vehicle_ID");
        assert_eq!(cfg.scoring.percentiles, [25.0, 75.0]);
        cfg.model_kind().unwrap();
    }

    #[test]
    fn unknown_keys_are_field_level_errors() {
        let err = parse_config("windwos = { window_len = 5 }", &[]).unwrap_err();
        assert!(err.to_string().contains("windwos"), "got: {err}");

        let err = parse_config("[windows]\nwindow_lenn = 5", &[]).unwrap_err();
        assert!(format!("{err:#}").contains("window_lenn"), "got: {err:#}");
    }

    #[test]
    fn overrides_reach_nested_sections_and_are_typed() {
        let overrides = vec![
            "windows.window_len=10".to_string(),
            "seed=7".to_string(),
            "model=krauss".to_string(),
            "selection.pairs=[[1, 2]]".to_string(),
        ];
        let cfg = parse_config("", &overrides).unwrap();
        assert_eq!(cfg.windows.window_len, 10);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.selection.pairs, vec![[1, 2]]);
    }

    #[test]
    fn override_without_equals_is_rejected() {
        let err = parse_config("", &["windows.window_len".to_string()]).unwrap_err();
        assert!(err.to_string().contains("section.key=value"), "got: {err}");
    }

    #[test]
    fn validation_names_the_offending_field() {
        let err = parse_config("[windows]\ntrain_fraction = 1.5", &[]).unwrap_err();
        assert!(format!("{err:#}").contains("train_fraction"), "got: {err:#}");

        let err = parse_config("[scoring]\npercentiles = [75.0, 25.0]", &[]).unwrap_err();
        assert!(err.to_string().contains("scoring.percentiles"), "got: {err}");

        let err = parse_config("model = \"idm\"", &[]).unwrap_err();
        assert!(err.to_string().contains("model"), "got: {err}");

        let err = parse_config("[simulate]\ncalibration = \"tuned\"", &[]).unwrap_err();
        assert!(err.to_string().contains("simulate.calibration"), "got: {err}");
    }

    #[test]
    fn bounds_override_is_checked_against_the_model() {
        let cfg = parse_config("bounds = [[0.5, 2.0], [0.05, 0.5]]", &[]).unwrap();
        let kind = cfg.model_kind().unwrap();
        assert_eq!(
            cfg.calib_config().param_bounds(kind).unwrap(),
            vec![(0.5, 2.0), (0.05, 0.5)]
        );

        let err = parse_config("bounds = [[0.5, 2.0]]", &[]).unwrap_err();
        assert!(err.to_string().contains("bounds"), "got: {err}");
    }

    #[test]
    fn config_hash_is_stable_and_override_sensitive() {
        let a = parse_config("", &[]).unwrap().config_hash().unwrap();
        let b = parse_config("", &[]).unwrap().config_hash().unwrap();
        assert_eq!(a, b);
        let c = parse_config("", &["seed=7".to_string()]).unwrap().config_hash().unwrap();
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }
}
