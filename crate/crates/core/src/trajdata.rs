//! Trajectory ingestion, leader/follower pairing, features, and windows.
//!
//! The input format is the NGSIM vehicle-trajectory CSV layout: one row per
//! vehicle per frame at 10 Hz, with a `Preceding` column naming the leader.
//! Column names and units (feet or meters) are configurable; everything
//! downstream works in meters, m/s, and frame numbers.
//!
//! A [`VehiclePair`] is a leader/follower episode: a maximal span of frames
//! over which the follower's leader id is constant and the leader is present.
//! Pairs are sliced into fixed-length [`Window`]s, the unit of adaptive
//! calibration.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// Frame period of the 10 Hz trajectory data, seconds.
pub const FRAME_DT: f64 = 0.1;

/// Follower speeds below this floor are clamped when dividing by speed
/// (time-headway features), m/s.
pub const VELOCITY_FLOOR: f64 = 0.1;

/// One vehicle at one frame. Units are meters and seconds throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub vehicle_id: u64,
    pub frame: i64,
    /// Front-bumper position along the roadway, m.
    pub position: f64,
    /// Instantaneous speed, m/s. Never negative.
    pub velocity: f64,
    /// Instantaneous acceleration, m/s^2.
    pub acceleration: f64,
    /// Leader vehicle id, if any.
    pub leader_id: Option<u64>,
    /// Vehicle length, m. Positive.
    pub vehicle_length: f64,
}

/// A single vehicle's contiguous trajectory, frames ascending with step 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub vehicle_id: u64,
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn start_frame(&self) -> i64 {
        self.samples.first().map_or(0, |s| s.frame)
    }

    /// Last frame, inclusive.
    pub fn end_frame(&self) -> i64 {
        self.samples.last().map_or(-1, |s| s.frame)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample at an absolute frame number, if covered.
    pub fn sample_at(&self, frame: i64) -> Option<&TrajectorySample> {
        let idx = frame.checked_sub(self.start_frame())?;
        if idx < 0 {
            return None;
        }
        self.samples.get(idx as usize)
    }

    /// Copy of the sub-trajectory covering `[lo, hi]` (inclusive frames).
    pub fn clip(&self, lo: i64, hi: i64) -> Option<Trajectory> {
        if lo > hi || lo < self.start_frame() || hi > self.end_frame() {
            return None;
        }
        let off = (lo - self.start_frame()) as usize;
        let len = (hi - lo + 1) as usize;
        Some(Trajectory {
            vehicle_id: self.vehicle_id,
            samples: self.samples[off..off + len].to_vec(),
        })
    }

    /// Vehicle length taken from the first sample (constant per vehicle).
    pub fn vehicle_length(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.vehicle_length)
    }
}

/// Maps logical fields onto CSV header names. Defaults to the NGSIM layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMap {
    pub vehicle_id: String,
    pub frame: String,
    pub position: String,
    pub velocity: String,
    pub acceleration: String,
    pub leader_id: String,
    pub vehicle_length: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            vehicle_id: "Vehicle_ID".into(),
            frame: "Frame_ID".into(),
            position: "Local_Y".into(),
            velocity: "v_Vel".into(),
            acceleration: "v_Acc".into(),
            leader_id: "Preceding".into(),
            vehicle_length: "v_Length".into(),
        }
    }
}

/// Units of the raw file. NGSIM ships in feet; converted corpora in meters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitMode {
    Feet,
    Meters,
}

impl UnitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "feet" => Ok(UnitMode::Feet),
            "meters" => Ok(UnitMode::Meters),
            other => Err(Error::Config(format!(
                "unknown unit mode {other:?}, expected \"feet\" or \"meters\""
            ))),
        }
    }
}

pub const FEET_TO_METERS: f64 = 0.3048;

fn resolve_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    if let Some(i) = headers.iter().position(|h| h == name) {
        return Ok(i);
    }
    // Header capitalization drifts between NGSIM releases; accept a unique
    // case-insensitive match before giving up.
    let lower = name.to_ascii_lowercase();
    let mut hits = headers.iter().enumerate().filter(|(_, h)| h.to_ascii_lowercase() == lower);
    match (hits.next(), hits.next()) {
        (Some((i, _)), None) => Ok(i),
        _ => Err(Error::Config(format!("column {name:?} not found in CSV header"))),
    }
}

struct RawRow {
    vehicle_id: u64,
    frame: i64,
    position: f64,
    velocity: f64,
    acceleration: f64,
    leader_id: Option<u64>,
    vehicle_length: f64,
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<T> {
    let raw = record
        .get(idx)
        .ok_or_else(|| Error::Data(format!("line {line}: missing field {name}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::Data(format!("line {line}: cannot parse {name} from {raw:?}")))
}

/// Parses a raw trajectory CSV into per-vehicle trajectories.
///
/// Rows are grouped by vehicle id and sorted by frame. Rows with a
/// non-positive vehicle length are dropped. A leader id of `0` (or an empty
/// field) means no leader. With [`UnitMode::Feet`], position, velocity,
/// acceleration, and length are converted to metric.
///
/// Per vehicle, frames must be distinct and contiguous (step 1) and
/// velocities non-negative; violations are data errors naming the vehicle
/// and frame.
pub fn parse_ngsim<R: Read>(reader: R, columns: &ColumnMap, units: UnitMode) -> Result<Vec<Trajectory>> {
    let mut csv_reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv_reader.headers().map_err(Error::Csv)?.clone();

    let col_vehicle = resolve_column(&headers, &columns.vehicle_id)?;
    let col_frame = resolve_column(&headers, &columns.frame)?;
    let col_position = resolve_column(&headers, &columns.position)?;
    let col_velocity = resolve_column(&headers, &columns.velocity)?;
    let col_acceleration = resolve_column(&headers, &columns.acceleration)?;
    let col_leader = resolve_column(&headers, &columns.leader_id)?;
    let col_length = resolve_column(&headers, &columns.vehicle_length)?;

    let scale = match units {
        UnitMode::Feet => FEET_TO_METERS,
        UnitMode::Meters => 1.0,
    };

    let mut rows: Vec<RawRow> = Vec::new();
    for (i, record) in csv_reader.records().enumerate() {
        let record = record.map_err(Error::Csv)?;
        let line = i as u64 + 2; // header is line 1
        let leader_raw = record.get(col_leader).unwrap_or("").trim();
        let leader_id = if leader_raw.is_empty() {
            None
        } else {
            let id: u64 = leader_raw
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: cannot parse leader id from {leader_raw:?}")))?;
            (id != 0).then_some(id)
        };
        let row = RawRow {
            vehicle_id: parse_field(&record, col_vehicle, "vehicle id", line)?,
            frame: parse_field(&record, col_frame, "frame", line)?,
            position: parse_field::<f64>(&record, col_position, "position", line)? * scale,
            velocity: parse_field::<f64>(&record, col_velocity, "velocity", line)? * scale,
            acceleration: parse_field::<f64>(&record, col_acceleration, "acceleration", line)? * scale,
            leader_id,
            vehicle_length: parse_field::<f64>(&record, col_length, "vehicle length", line)? * scale,
        };
        if row.vehicle_length <= 0.0 {
            continue;
        }
        rows.push(row);
    }
    assemble_trajectories(rows)
}

/// Convenience wrapper for [`parse_ngsim`] on a file path.
pub fn parse_ngsim_path(path: &Path, columns: &ColumnMap, units: UnitMode) -> Result<Vec<Trajectory>> {
    let file = std::fs::File::open(path)?;
    parse_ngsim(std::io::BufReader::new(file), columns, units)
}

fn assemble_trajectories(rows: Vec<RawRow>) -> Result<Vec<Trajectory>> {
    let mut by_vehicle: BTreeMap<u64, Vec<TrajectorySample>> = BTreeMap::new();
    for row in rows {
        if !row.position.is_finite() || !row.velocity.is_finite() || !row.acceleration.is_finite() {
            return Err(Error::Data(format!(
                "vehicle {} frame {}: non-finite sample",
                row.vehicle_id, row.frame
            )));
        }
        if row.velocity < 0.0 {
            return Err(Error::Data(format!(
                "vehicle {} frame {}: negative velocity {}",
                row.vehicle_id, row.frame, row.velocity
            )));
        }
        by_vehicle.entry(row.vehicle_id).or_default().push(TrajectorySample {
            vehicle_id: row.vehicle_id,
            frame: row.frame,
            position: row.position,
            velocity: row.velocity,
            acceleration: row.acceleration,
            leader_id: row.leader_id,
            vehicle_length: row.vehicle_length,
        });
    }

    let mut out = Vec::with_capacity(by_vehicle.len());
    for (vehicle_id, mut samples) in by_vehicle {
        samples.sort_by_key(|s| s.frame);
        for pair in samples.windows(2) {
            let step = pair[1].frame - pair[0].frame;
            if step == 0 {
                return Err(Error::Data(format!(
                    "vehicle {vehicle_id}: duplicate frame {}",
                    pair[0].frame
                )));
            }
            if step != 1 {
                return Err(Error::Data(format!(
                    "vehicle {vehicle_id}: frame gap of {step} after frame {}",
                    pair[0].frame
                )));
            }
        }
        out.push(Trajectory { vehicle_id, samples });
    }
    Ok(out)
}

const STORE_HEADER: [&str; 7] = [
    "vehicle_id",
    "frame",
    "position_m",
    "velocity_mps",
    "acceleration_mps2",
    "leader_id",
    "vehicle_length_m",
];

/// Writes trajectories in the canonical metric CSV layout.
///
/// Floats are printed with Rust's shortest round-trip formatting, so a
/// write/read cycle reproduces every value bit-exactly.
pub fn write_trajectories_csv<W: Write>(writer: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(STORE_HEADER).map_err(Error::Csv)?;
    for traj in trajectories {
        for s in &traj.samples {
            w.write_record(&[
                s.vehicle_id.to_string(),
                s.frame.to_string(),
                s.position.to_string(),
                s.velocity.to_string(),
                s.acceleration.to_string(),
                s.leader_id.map_or(String::new(), |id| id.to_string()),
                s.vehicle_length.to_string(),
            ])
            .map_err(Error::Csv)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads trajectories from the canonical layout written by
/// [`write_trajectories_csv`].
pub fn read_trajectories_csv<R: Read>(reader: R) -> Result<Vec<Trajectory>> {
    let columns = ColumnMap {
        vehicle_id: "vehicle_id".into(),
        frame: "frame".into(),
        position: "position_m".into(),
        velocity: "velocity_mps".into(),
        acceleration: "acceleration_mps2".into(),
        leader_id: "leader_id".into(),
        vehicle_length: "vehicle_length_m".into(),
    };
    parse_ngsim(reader, &columns, UnitMode::Meters)
}

/// A leader/follower episode. Both trajectories are clipped to the same
/// frame span, and the leader is ahead of the follower on every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VehiclePair {
    pub leader: Trajectory,
    pub follower: Trajectory,
}

impl VehiclePair {
    /// `(leader_id, follower_id)`.
    pub fn pair_id(&self) -> (u64, u64) {
        (self.leader.vehicle_id, self.follower.vehicle_id)
    }

    pub fn start_frame(&self) -> i64 {
        self.follower.start_frame()
    }

    pub fn overlap_len(&self) -> usize {
        self.follower.len()
    }
}

/// Extracts every leader/follower episode of at least `min_frames` frames.
///
/// For each follower, maximal contiguous spans with a constant leader id are
/// intersected with that leader's coverage; spans still at least
/// `min_frames` long become pairs, clipped to the span. Episodes where the
/// leader is ever behind the follower are discarded. Output is sorted by
/// `(leader_id, follower_id, start_frame)`.
pub fn extract_pairs(trajectories: &[Trajectory], min_frames: usize) -> Result<Vec<VehiclePair>> {
    if min_frames < 2 {
        return Err(Error::Config(format!("min_frames must be at least 2, got {min_frames}")));
    }
    let by_id: BTreeMap<u64, &Trajectory> =
        trajectories.iter().map(|t| (t.vehicle_id, t)).collect();

    let mut pairs = Vec::new();
    for follower in trajectories {
        let mut i = 0;
        while i < follower.samples.len() {
            let Some(leader_id) = follower.samples[i].leader_id else {
                i += 1;
                continue;
            };
            let mut j = i;
            while j + 1 < follower.samples.len()
                && follower.samples[j + 1].leader_id == Some(leader_id)
            {
                j += 1;
            }
            let span = (follower.samples[i].frame, follower.samples[j].frame);
            if let Some(leader) = by_id.get(&leader_id) {
                let lo = span.0.max(leader.start_frame());
                let hi = span.1.min(leader.end_frame());
                if hi >= lo && (hi - lo + 1) as usize >= min_frames {
                    let leader_clip = leader.clip(lo, hi).expect("span within leader coverage");
                    let follower_clip = follower.clip(lo, hi).expect("span within follower coverage");
                    let ahead = leader_clip
                        .samples
                        .iter()
                        .zip(&follower_clip.samples)
                        .all(|(l, f)| l.position >= f.position);
                    if ahead {
                        pairs.push(VehiclePair { leader: leader_clip, follower: follower_clip });
                    }
                }
            }
            i = j + 1;
        }
    }
    pairs.sort_by_key(|p| (p.leader.vehicle_id, p.follower.vehicle_id, p.start_frame()));
    Ok(pairs)
}

/// Six summary features of a pair, the rows of the style-scoring matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    /// Mean follower speed, m/s.
    pub vel_mean: f64,
    /// Population variance of follower speed, (m/s)^2.
    pub vel_var: f64,
    /// Mean follower acceleration, m/s^2.
    pub acc_mean: f64,
    /// Population variance of follower acceleration, (m/s^2)^2.
    pub acc_var: f64,
    /// Mean front-to-front space headway, m.
    pub h_s: f64,
    /// Mean time headway, s: spacing over speed, speed floored at
    /// [`VELOCITY_FLOOR`] so stopped traffic stays finite.
    pub h_t: f64,
}

pub const FEATURE_NAMES: [&str; 6] = ["vel_mean", "vel_var", "acc_mean", "acc_var", "h_s", "h_t"];

impl FeatureVector {
    pub fn to_array(&self) -> [f64; 6] {
        [self.vel_mean, self.vel_var, self.acc_mean, self.acc_var, self.h_s, self.h_t]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { vel_mean: a[0], vel_var: a[1], acc_mean: a[2], acc_var: a[3], h_s: a[4], h_t: a[5] }
    }
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

fn population_variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Computes the six-feature summary of a pair over its whole overlap.
pub fn compute_features(pair: &VehiclePair) -> Result<FeatureVector> {
    let n = pair.overlap_len();
    if n < 2 {
        return Err(Error::Data(format!(
            "pair ({}, {}): need at least 2 overlap frames, got {n}",
            pair.leader.vehicle_id, pair.follower.vehicle_id
        )));
    }
    let vels: Vec<f64> = pair.follower.samples.iter().map(|s| s.velocity).collect();
    let accs: Vec<f64> = pair.follower.samples.iter().map(|s| s.acceleration).collect();
    let spacings: Vec<f64> = pair
        .leader
        .samples
        .iter()
        .zip(&pair.follower.samples)
        .map(|(l, f)| l.position - f.position)
        .collect();
    let h_t = mean(
        spacings.iter().zip(&vels).map(|(s, v)| s / v.max(VELOCITY_FLOOR)),
        n,
    );
    Ok(FeatureVector {
        vel_mean: mean(vels.iter().copied(), n),
        vel_var: population_variance(&vels),
        acc_mean: mean(accs.iter().copied(), n),
        acc_var: population_variance(&accs),
        h_s: mean(spacings.iter().copied(), n),
        h_t,
    })
}

/// A fixed-length view into a pair: the unit of adaptive calibration.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub pair_id: (u64, u64),
    /// Index of this window within its pair.
    pub index: usize,
    pub start_frame: i64,
    pub leader: &'a [TrajectorySample],
    pub follower: &'a [TrajectorySample],
    pub leader_len: f64,
}

impl Window<'_> {
    pub fn len(&self) -> usize {
        self.follower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.follower.is_empty()
    }
}

/// Slices a pair into windows of `window_len` frames every `stride` frames.
///
/// Yields `(overlap - window_len) / stride + 1` windows; trailing frames
/// that do not fill a window are dropped.
pub fn slice_windows(pair: &VehiclePair, window_len: usize, stride: usize) -> Result<Vec<Window<'_>>> {
    if window_len < 1 || stride < 1 {
        return Err(Error::Config(format!(
            "window_len and stride must be at least 1, got {window_len} and {stride}"
        )));
    }
    let overlap = pair.overlap_len();
    if window_len > overlap {
        return Err(Error::Data(format!(
            "pair ({}, {}): window_len {window_len} exceeds overlap {overlap}",
            pair.leader.vehicle_id, pair.follower.vehicle_id
        )));
    }
    let count = (overlap - window_len) / stride + 1;
    let leader_len = pair.leader.vehicle_length();
    let mut windows = Vec::with_capacity(count);
    for index in 0..count {
        let off = index * stride;
        windows.push(Window {
            pair_id: pair.pair_id(),
            index,
            start_frame: pair.follower.samples[off].frame,
            leader: &pair.leader.samples[off..off + window_len],
            follower: &pair.follower.samples[off..off + window_len],
            leader_len,
        });
    }
    Ok(windows)
}

/// Per-frame input features of a window, one row per frame:
/// `[v_leader, v_follower, gap, dv]` where `gap` is bumper-to-bumper and
/// `dv = v_follower - v_leader` is the closing speed.
pub fn window_frame_features(window: &Window<'_>) -> Vec<[f64; 4]> {
    window
        .leader
        .iter()
        .zip(window.follower)
        .map(|(l, f)| {
            let gap = l.position - f.position - window.leader_len;
            [l.velocity, f.velocity, gap, f.velocity - l.velocity]
        })
        .collect()
}
