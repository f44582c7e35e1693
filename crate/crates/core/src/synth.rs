//! Seeded synthetic trajectory generators.
//!
//! These build leader/follower pairs whose follower is an exact model
//! response to a randomized leader, so the generating parameters are known
//! ("planted") and recovery can be tested end to end: single pairs with a
//! constant or per-window parameter schedule, and a corpus of pairs spanning
//! a spectrum of styles for scoring and clustering runs.
//!
//! All randomness is drawn from seeded streams, so every generator is a pure
//! function of its arguments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::carfollow::{
    simulate_follower, KraussParams, ModelKind, ParamSchedule, ScheduleSegment, SimContext,
    SimInput,
};
use crate::trajdata::{Trajectory, TrajectorySample, VehiclePair};
use crate::{seed_mix, Error, Result};

/// Leaders never drop below this speed, keeping time headways finite.
pub const LEADER_MIN_SPEED: f64 = 2.0;
/// Leaders cruise below the road limit so followers can close gaps.
pub const LEADER_SPEED_FRACTION: f64 = 0.8;

const LEADER_TAG: u64 = 0x1ead;
const PAIR_TAG: u64 = 0x9a12;
const CORPUS_TAG: u64 = 0xc093;

/// Generates a leader trajectory with piecewise-constant acceleration.
///
/// Accelerations are drawn from `[-b_max, a_max]`, so the leader never
/// brakes harder than a follower can; speeds are clamped to
/// `[LEADER_MIN_SPEED, LEADER_SPEED_FRACTION * v_max]`. Positions advance
/// with the pre-update speed, matching the follower integrator.
pub fn synth_leader(frames: usize, ctx: &SimContext, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    ctx.validate()?;
    if frames < 2 {
        return Err(Error::Config(format!("need at least 2 frames, got {frames}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_mix(&[seed, LEADER_TAG]));
    let v_hi = LEADER_SPEED_FRACTION * ctx.v_max;
    let mut v = rng.gen_range(LEADER_MIN_SPEED.max(5.0).min(v_hi)..v_hi);
    let mut x = 100.0;
    let mut xs = Vec::with_capacity(frames);
    let mut vs = Vec::with_capacity(frames);
    let mut seg_left = 0usize;
    let mut accel = 0.0;
    for _ in 0..frames {
        xs.push(x);
        vs.push(v);
        if seg_left == 0 {
            seg_left = rng.gen_range(30..=80);
            accel = rng.gen_range(-ctx.b_max..ctx.a_max);
        }
        seg_left -= 1;
        x += v * ctx.dt;
        v = (v + accel * ctx.dt).clamp(LEADER_MIN_SPEED, v_hi);
    }
    Ok((xs, vs))
}

fn forward_diff_accel(v: &[f64], dt: f64) -> Vec<f64> {
    let n = v.len();
    let mut a: Vec<f64> = (0..n - 1).map(|i| (v[i + 1] - v[i]) / dt).collect();
    a.push(*a.last().expect("n >= 2"));
    a
}

fn to_trajectory(
    id: u64,
    leader_id: Option<u64>,
    length: f64,
    xs: &[f64],
    vs: &[f64],
    dt: f64,
) -> Trajectory {
    let accel = forward_diff_accel(vs, dt);
    Trajectory {
        vehicle_id: id,
        samples: xs
            .iter()
            .zip(vs)
            .zip(&accel)
            .enumerate()
            .map(|(i, ((&x, &v), &a))| TrajectorySample {
                vehicle_id: id,
                frame: i as i64,
                position: x,
                velocity: v,
                acceleration: a,
                leader_id,
                vehicle_length: length,
            })
            .collect(),
    }
}

/// Builds a pair whose follower is the exact model response to a seeded
/// leader under `schedule`. The schedule must cover frames
/// `0..frames - 1`. The follower starts at the leader's speed behind a
/// comfortable gap.
pub fn planted_pair(
    kind: ModelKind,
    schedule: &ParamSchedule,
    frames: usize,
    ids: (u64, u64),
    ctx: &SimContext,
    seed: u64,
) -> Result<VehiclePair> {
    let (leader_id, follower_id) = ids;
    if leader_id == follower_id {
        return Err(Error::Config(format!("leader and follower share id {leader_id}")));
    }
    let (leader_x, leader_v) = synth_leader(frames, ctx, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_mix(&[seed, PAIR_TAG]));
    let leader_len = rng.gen_range(4.0..5.5);
    let follower_len = rng.gen_range(4.0..5.5);
    let v0 = leader_v[0];
    let gap0 = (1.6 * v0).max(8.0);
    let input = SimInput {
        start_frame: 0,
        leader_x: &leader_x,
        leader_v: &leader_v,
        leader_len,
        init_x: leader_x[0] - leader_len - gap0,
        init_v: v0,
    };
    let sim = simulate_follower(kind, schedule, &input, ctx)?;
    Ok(VehiclePair {
        leader: to_trajectory(leader_id, None, leader_len, &leader_x, &leader_v, ctx.dt),
        follower: to_trajectory(
            follower_id,
            Some(leader_id),
            follower_len,
            &sim.x,
            &sim.v,
            ctx.dt,
        ),
    })
}

/// Shape of a per-window reaction-time wave.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidSpec {
    /// Mean reaction time, seconds.
    pub center: f64,
    /// Peak deviation from the center, seconds.
    pub amplitude: f64,
    /// Wave period in windows.
    pub period_windows: f64,
}

impl Default for SinusoidSpec {
    fn default() -> Self {
        Self { center: 1.5, amplitude: 0.7, period_windows: 12.0 }
    }
}

/// Builds a tiling schedule whose reaction time varies sinusoidally across
/// windows while the other parameter stays at its default:
/// `t_r(j) = center + amplitude * sin(2 pi j / period)`, clamped to bounds.
pub fn sinusoid_krauss_schedule(
    spec: &SinusoidSpec,
    n_windows: usize,
    window_len: usize,
    start_frame: i64,
) -> Result<ParamSchedule> {
    if n_windows < 1 || window_len < 1 {
        return Err(Error::Config(
            "sinusoid schedule needs at least one window of at least one frame".into(),
        ));
    }
    if !(spec.period_windows > 0.0) || !spec.center.is_finite() || !spec.amplitude.is_finite() {
        return Err(Error::Config(format!("bad sinusoid spec {spec:?}")));
    }
    let (t_r_lo, t_r_hi) = ModelKind::Krauss.bounds()[0];
    let segments = (0..n_windows)
        .map(|j| {
            let phase = 2.0 * std::f64::consts::PI * j as f64 / spec.period_windows;
            let t_r = (spec.center + spec.amplitude * phase.sin()).clamp(t_r_lo, t_r_hi);
            let start = start_frame + (j * window_len) as i64;
            ScheduleSegment {
                start_frame: start,
                end_frame: start + window_len as i64,
                params: vec![t_r, KraussParams::DEFAULT.t_i],
            }
        })
        .collect();
    ParamSchedule::from_segments(segments)
}

/// True reaction times of a sinusoid schedule, one per window; handy as the
/// reference signal when checking that a predictor tracks the wave.
pub fn sinusoid_reaction_times(spec: &SinusoidSpec, n_windows: usize) -> Vec<f64> {
    let (t_r_lo, t_r_hi) = ModelKind::Krauss.bounds()[0];
    (0..n_windows)
        .map(|j| {
            let phase = 2.0 * std::f64::consts::PI * j as f64 / spec.period_windows;
            (spec.center + spec.amplitude * phase.sin()).clamp(t_r_lo, t_r_hi)
        })
        .collect()
}

/// Generates a corpus of pairs spanning a spectrum of styles: reaction
/// times sweep the bound box from twitchy to sluggish while each pair gets
/// its own leader profile. Vehicle ids are `2k+1` (leader) and `2k+2`
/// (follower) for pair `k`.
pub fn synth_style_corpus(
    n_pairs: usize,
    frames: usize,
    ctx: &SimContext,
    seed: u64,
) -> Result<Vec<VehiclePair>> {
    if n_pairs < 1 {
        return Err(Error::Config("corpus needs at least one pair".into()));
    }
    let bounds = ModelKind::Krauss.bounds();
    let mut pairs = Vec::with_capacity(n_pairs);
    for k in 0..n_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_mix(&[seed, CORPUS_TAG, k as u64]));
        // Sweep the style spectrum with jitter so scores spread out instead
        // of clumping.
        let fraction = if n_pairs == 1 { 0.5 } else { k as f64 / (n_pairs - 1) as f64 };
        let (t_r_lo, t_r_hi) = bounds[0];
        let span = t_r_hi - t_r_lo;
        let t_r = (t_r_lo + 0.1 * span + 0.8 * span * fraction + rng.gen_range(-0.05..0.05))
            .clamp(t_r_lo, t_r_hi);
        let t_i = rng.gen_range(0.05..0.4);
        let schedule = ParamSchedule::constant(vec![t_r, t_i]);
        let ids = (2 * k as u64 + 1, 2 * k as u64 + 2);
        pairs.push(planted_pair(
            ModelKind::Krauss,
            &schedule,
            frames,
            ids,
            ctx,
            seed_mix(&[seed, CORPUS_TAG, k as u64, 1]),
        )?);
    }
    Ok(pairs)
}
