//! Car-following models and the forward-Euler follower simulator.
//!
//! Two models are provided. The Krauss model picks the follower's next speed
//! directly as the minimum of acceleration-, speed-, and safety-limited
//! candidates. The Wiedemann model is psycho-physical: perceptual thresholds
//! carve the (spacing, closing-speed) plane into regimes, each of which
//! prescribes an acceleration.
//!
//! Both are driven by [`simulate_follower`], which replays a recorded leader
//! and integrates the follower with the pre-update-speed Euler rule: position
//! advances with the current speed, then the speed is replaced.

use crate::{Error, Result};

/// Shared simulation context: step size and physical limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimContext {
    /// Integration step in seconds.
    pub dt: f64,
    /// Speed cap in m/s.
    pub v_max: f64,
    /// Maximum acceleration in m/s^2.
    pub a_max: f64,
    /// Maximum (comfortable emergency) deceleration in m/s^2, positive.
    pub b_max: f64,
}

impl Default for SimContext {
    fn default() -> Self {
        Self { dt: 0.1, v_max: 30.0, a_max: 2.6, b_max: 4.5 }
    }
}

impl SimContext {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dt", self.dt),
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("b_max", self.b_max),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be finite and positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Krauss model parameters: reaction time and a speed-adaptation time, both
/// in seconds. The effective headway time is `t_r + t_i / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KraussParams {
    pub t_r: f64,
    pub t_i: f64,
}

impl KraussParams {
    pub const BOUNDS: [(f64, f64); 2] = [(0.1, 3.0), (0.01, 1.0)];
    pub const DEFAULT: KraussParams = KraussParams { t_r: 1.5, t_i: 0.15 };
    pub const NAMES: [&'static str; 2] = ["t_r", "t_i"];

    pub fn tau(&self) -> f64 {
        self.t_r + self.t_i / 2.0
    }

    pub fn from_slice(params: &[f64]) -> Result<Self> {
        if params.len() != 2 {
            return Err(Error::Param(format!("Krauss expects 2 parameters, got {}", params.len())));
        }
        Ok(Self { t_r: params[0], t_i: params[1] })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.t_r, self.t_i]
    }
}

/// Wiedemann model parameters, the ten-knob `CC0..CC9` convention.
///
/// | idx | meaning                                   | unit   |
/// |-----|-------------------------------------------|--------|
/// | CC0 | standstill distance added to leader length | m      |
/// | CC1 | headway-time term, scales sqrt(min speed)  | s      |
/// | CC2 | following-band width per 10 m of desired gap | m    |
/// | CC3 | approach perception horizon (negative)     | s      |
/// | CC4 | opening-speed floor, negative              | m/s    |
/// | CC5 | closing-speed floor, positive              | m/s    |
/// | CC6 | distance sensitivity of speed perception   | 1/m^2  |
/// | CC7 | oscillation acceleration inside the band   | m/s^2  |
/// | CC8 | acceleration from standstill               | m/s^2  |
/// | CC9 | acceleration at 80 km/h                    | m/s^2  |
#[derive(Debug, Clone, PartialEq)]
pub struct WiedemannParams {
    pub cc: [f64; 10],
}

impl WiedemannParams {
    pub const BOUNDS: [(f64, f64); 10] = [
        (0.5, 5.0),
        (0.3, 3.0),
        (0.5, 10.0),
        (-20.0, -2.0),
        (-2.0, -0.05),
        (0.05, 2.0),
        (1e-4, 1e-2),
        (0.05, 1.0),
        (0.5, 4.0),
        (0.3, 3.0),
    ];
    pub const DEFAULT: WiedemannParams =
        WiedemannParams { cc: [1.5, 1.3, 4.0, -12.0, -0.25, 0.35, 6e-4, 0.25, 2.0, 1.5] };
    pub const NAMES: [&'static str; 10] =
        ["cc0", "cc1", "cc2", "cc3", "cc4", "cc5", "cc6", "cc7", "cc8", "cc9"];

    pub fn from_slice(params: &[f64]) -> Result<Self> {
        if params.len() != 10 {
            return Err(Error::Param(format!(
                "Wiedemann expects 10 parameters, got {}",
                params.len()
            )));
        }
        let mut cc = [0.0; 10];
        cc.copy_from_slice(params);
        Ok(Self { cc })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.cc.to_vec()
    }

    /// Threshold-formula tuners derived from the CC set.
    ///
    /// `sdx_mult` maps CC2 (band width in meters) onto a multiple of the
    /// desired gap using a 10 m reference distance, and `cx` converts CC6
    /// (a curvature in 1/m^2) into the divisor of the perception parabola so
    /// that `sdv = CC6 * (s - ax)^2` holds exactly.
    pub fn tuners(&self) -> Result<ThresholdTuners> {
        if self.cc[6] <= 0.0 {
            return Err(Error::Param(format!("cc6 must be positive, got {}", self.cc[6])));
        }
        Ok(ThresholdTuners {
            ax_add: self.cc[0],
            bx_add: self.cc[1],
            sdx_mult: 1.0 + self.cc[2] / 10.0,
            cx: 1.0 / self.cc[6].sqrt(),
            opdv_add: self.cc[4].abs() / self.cc[5].max(1e-9),
        })
    }
}

/// The five tuners of the Wiedemann threshold formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdTuners {
    /// Added to the leader length for the standstill distance `ax`.
    pub ax_add: f64,
    /// Scales `sqrt(min(v, v_l))` in the desired gap `abx`.
    pub bx_add: f64,
    /// `sdx = sdx_mult * abx`.
    pub sdx_mult: f64,
    /// Divisor of the speed-difference perception parabola.
    pub cx: f64,
    /// `opdv = -opdv_add * sdv`.
    pub opdv_add: f64,
}

/// Instantaneous leader/follower state, positions of the vehicle fronts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowState {
    /// Follower front position, m.
    pub x: f64,
    /// Follower speed, m/s.
    pub v: f64,
    /// Leader front position, m.
    pub x_l: f64,
    /// Leader speed, m/s.
    pub v_l: f64,
    /// Leader vehicle length, m.
    pub l_lead: f64,
}

impl FollowState {
    /// Bumper-to-bumper gap: leader rear minus follower front.
    pub fn gap(&self) -> f64 {
        self.x_l - self.x - self.l_lead
    }

    /// Front-to-front spacing.
    pub fn spacing(&self) -> f64 {
        self.x_l - self.x
    }
}

/// Wiedemann perceptual thresholds evaluated at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Desired standstill spacing (front-to-front), m.
    pub ax: f64,
    /// Desired minimum following spacing, m.
    pub abx: f64,
    /// Maximum following spacing, m.
    pub sdx: f64,
    /// Perceptible closing-speed threshold at this spacing, m/s.
    pub sdv: f64,
    /// Perceptible opening-speed threshold (negative), m/s.
    pub opdv: f64,
}

/// Wiedemann regime chosen for a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    FreeDriving,
    Closing,
    Following,
    Emergency,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::FreeDriving => "free",
            Regime::Closing => "closing",
            Regime::Following => "following",
            Regime::Emergency => "emergency",
        }
    }
}

/// Which follower model drives a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Krauss,
    Wiedemann,
}

impl ModelKind {
    pub fn param_count(&self) -> usize {
        match self {
            ModelKind::Krauss => 2,
            ModelKind::Wiedemann => 10,
        }
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match self {
            ModelKind::Krauss => KraussParams::BOUNDS.to_vec(),
            ModelKind::Wiedemann => WiedemannParams::BOUNDS.to_vec(),
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            ModelKind::Krauss => &KraussParams::NAMES,
            ModelKind::Wiedemann => &WiedemannParams::NAMES,
        }
    }

    pub fn default_params(&self) -> Vec<f64> {
        match self {
            ModelKind::Krauss => KraussParams::DEFAULT.to_vec(),
            ModelKind::Wiedemann => WiedemannParams::DEFAULT.to_vec(),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Krauss => "krauss",
            ModelKind::Wiedemann => "wiedemann",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "krauss" => Ok(ModelKind::Krauss),
            "wiedemann" => Ok(ModelKind::Wiedemann),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?}, expected \"krauss\" or \"wiedemann\""
            ))),
        }
    }
}

/// Largest speed the follower can hold and still stop behind the leader,
/// assuming both brake at `b_max` and the follower reacts after
/// `tau = t_r + t_i / 2` seconds:
///
/// `v_safe = -b*tau + sqrt(b^2 tau^2 + v_l^2 + 2 b g)`
///
/// A negative gap means the vehicles already overlap; the model then demands
/// a full stop and the simulator flags the frame as a collision.
pub fn krauss_safe_speed(state: &FollowState, params: &KraussParams, ctx: &SimContext) -> f64 {
    let g = state.gap();
    if g < 0.0 {
        return 0.0;
    }
    let tau = params.tau();
    let b = ctx.b_max;
    let v_safe = -b * tau + (b * b * tau * tau + state.v_l * state.v_l + 2.0 * b * g).sqrt();
    v_safe.max(0.0)
}

/// Next-step speed under the Krauss rule: accelerate by at most `a_max*dt`,
/// never exceed `v_max` or the safe speed, never go below zero.
pub fn krauss_desired_speed(state: &FollowState, params: &KraussParams, ctx: &SimContext) -> f64 {
    let v_safe = krauss_safe_speed(state, params, ctx);
    let v_acc = state.v + ctx.a_max * ctx.dt;
    ctx.v_max.min(v_acc).min(v_safe).max(0.0)
}

/// One forward-Euler step with the pre-update speed: position advances with
/// the current speed, then the speed is replaced (clamped at zero).
pub fn euler_step(x: f64, v: f64, v_next: f64, dt: f64) -> (f64, f64) {
    (x + v * dt, v_next.max(0.0))
}

/// Evaluates the Wiedemann thresholds at a state.
pub fn wiedemann_thresholds(state: &FollowState, tuners: &ThresholdTuners) -> Result<Thresholds> {
    if tuners.cx == 0.0 || !tuners.cx.is_finite() {
        return Err(Error::Param(format!("cx must be finite and nonzero, got {}", tuners.cx)));
    }
    let ax = state.l_lead + tuners.ax_add;
    let v_slow = state.v.min(state.v_l).max(0.0);
    let abx = ax + tuners.bx_add * v_slow.sqrt();
    let sdx = tuners.sdx_mult * abx;
    let s = state.spacing();
    let sdv = ((s - ax) / tuners.cx).powi(2);
    let opdv = -tuners.opdv_add * sdv;
    Ok(Thresholds { ax, abx, sdx, sdv, opdv })
}

/// One Wiedemann decision: classify the state into a regime and return the
/// prescribed acceleration, clamped into `[-b_max, a_max]`.
///
/// Regime logic, checked in order:
/// * spacing below `abx` is an emergency: brake at `b_max`;
/// * a perceptible approach (closing speed above the sdv/CC5 floor, or the
///   spacing margin smaller than `|CC3|` seconds of closing) decelerates just
///   enough to null the closing speed at `abx`;
/// * spacing beyond `sdx`, or opening faster than the opdv/CC4 ceiling, is
///   free driving with a speed-dependent acceleration interpolated from CC8
///   (standstill) to CC9 (80 km/h);
/// * otherwise the follower holds the band, dithering by `±CC7`.
pub fn wiedemann_step(
    state: &FollowState,
    params: &WiedemannParams,
    ctx: &SimContext,
) -> Result<(f64, Regime)> {
    let tuners = params.tuners()?;
    let th = wiedemann_thresholds(state, &tuners)?;
    let s = state.spacing();
    let dv = state.v - state.v_l;

    let sdv_floor = th.sdv.max(params.cc[5]);
    let opdv_ceil = th.opdv.min(params.cc[4]);

    let (accel, regime) = if s < th.abx {
        (-ctx.b_max, Regime::Emergency)
    } else if dv > sdv_floor || (dv > 0.0 && s - th.abx < -params.cc[3] * dv) {
        // Deceleration that nulls the closing speed right at abx.
        let margin = (s - th.abx).max(0.1);
        let a = -dv * dv / (2.0 * margin);
        (a.clamp(-ctx.b_max, 0.0), Regime::Closing)
    } else if s > th.sdx || dv < opdv_ceil {
        (wiedemann_free_accel(state.v, params, ctx), Regime::FreeDriving)
    } else {
        let a = if s >= 0.5 * (th.abx + th.sdx) { params.cc[7] } else { -params.cc[7] };
        (a, Regime::Following)
    };
    Ok((accel.clamp(-ctx.b_max, ctx.a_max), regime))
}

/// Free-driving acceleration: linear in speed from CC8 at standstill to CC9
/// at 80 km/h, and never enough to overshoot `v_max` within one step.
fn wiedemann_free_accel(v: f64, params: &WiedemannParams, ctx: &SimContext) -> f64 {
    const V80: f64 = 80.0 / 3.6;
    let frac = (v / V80).clamp(0.0, 1.0);
    let a = params.cc[8] + (params.cc[9] - params.cc[8]) * frac;
    a.min((ctx.v_max - v) / ctx.dt).max(0.0)
}

/// Follower speed for the next frame under either model.
///
/// Krauss picks the speed directly; Wiedemann integrates its acceleration
/// over one step. Both results are clamped into `[0, v_max]`.
pub fn follower_speed_update(
    kind: ModelKind,
    params: &[f64],
    state: &FollowState,
    ctx: &SimContext,
) -> Result<f64> {
    match kind {
        ModelKind::Krauss => {
            let p = KraussParams::from_slice(params)?;
            Ok(krauss_desired_speed(state, &p, ctx))
        }
        ModelKind::Wiedemann => {
            let p = WiedemannParams::from_slice(params)?;
            let (a, _) = wiedemann_step(state, &p, ctx)?;
            Ok((state.v + a * ctx.dt).clamp(0.0, ctx.v_max))
        }
    }
}

/// Piecewise-constant parameter schedule over frame numbers.
///
/// Segments are half-open `[start, end)` frame ranges, kept sorted and
/// non-overlapping by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSchedule {
    segments: Vec<ScheduleSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSegment {
    pub start_frame: i64,
    /// Exclusive.
    pub end_frame: i64,
    pub params: Vec<f64>,
}

impl ParamSchedule {
    /// A schedule holding one parameter vector over all frames.
    pub fn constant(params: Vec<f64>) -> Self {
        Self {
            segments: vec![ScheduleSegment {
                start_frame: i64::MIN,
                end_frame: i64::MAX,
                params,
            }],
        }
    }

    /// Builds a schedule from explicit segments.
    ///
    /// Segments must be non-empty, sorted by start frame, and non-overlapping;
    /// gaps between segments are allowed and surface as an error only when a
    /// simulation actually asks for a frame inside one.
    pub fn from_segments(segments: Vec<ScheduleSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("schedule needs at least one segment".into()));
        }
        for seg in &segments {
            if seg.start_frame >= seg.end_frame {
                return Err(Error::Config(format!(
                    "empty schedule segment [{}, {})",
                    seg.start_frame, seg.end_frame
                )));
            }
        }
        for pair in segments.windows(2) {
            if pair[1].start_frame < pair[0].end_frame {
                return Err(Error::Config(format!(
                    "schedule segments overlap at frame {}",
                    pair[1].start_frame
                )));
            }
        }
        Ok(Self { segments })
    }

    /// Parameters governing `frame`, or `None` inside a gap.
    pub fn params_at(&self, frame: i64) -> Option<&[f64]> {
        let idx = self
            .segments
            .partition_point(|seg| seg.start_frame <= frame)
            .checked_sub(1)?;
        let seg = &self.segments[idx];
        (frame < seg.end_frame).then_some(seg.params.as_slice())
    }

    pub fn segments(&self) -> &[ScheduleSegment] {
        &self.segments
    }
}

/// Leader replay plus the follower's initial condition.
#[derive(Debug, Clone, Copy)]
pub struct SimInput<'a> {
    /// Frame number of the first sample.
    pub start_frame: i64,
    /// Leader front positions, one per frame.
    pub leader_x: &'a [f64],
    /// Leader speeds, one per frame.
    pub leader_v: &'a [f64],
    /// Leader vehicle length, m.
    pub leader_len: f64,
    /// Follower front position at the first frame.
    pub init_x: f64,
    /// Follower speed at the first frame.
    pub init_v: f64,
}

/// Simulated follower trace. `x[0]`/`v[0]` echo the initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub start_frame: i64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// True where the bumper-to-bumper gap went negative.
    pub collision: Vec<bool>,
}

impl SimResult {
    pub fn collision_count(&self) -> usize {
        self.collision.iter().filter(|&&c| c).count()
    }
}

/// Replays the leader and integrates the follower frame by frame.
///
/// At frame `i` the follower state is recorded, then the model (with the
/// schedule's parameters for that frame) picks the next speed and the Euler
/// rule advances to frame `i+1`.
pub fn simulate_follower(
    kind: ModelKind,
    schedule: &ParamSchedule,
    input: &SimInput,
    ctx: &SimContext,
) -> Result<SimResult> {
    ctx.validate()?;
    let n = input.leader_x.len();
    if n == 0 {
        return Err(Error::Data("empty leader trace".into()));
    }
    if input.leader_v.len() != n {
        return Err(Error::Data(format!(
            "leader position/speed length mismatch: {} vs {}",
            n,
            input.leader_v.len()
        )));
    }

    let mut x = input.init_x;
    let mut v = input.init_v.max(0.0);
    let mut xs = Vec::with_capacity(n);
    let mut vs = Vec::with_capacity(n);
    let mut collisions = Vec::with_capacity(n);

    for i in 0..n {
        xs.push(x);
        vs.push(v);
        collisions.push(input.leader_x[i] - x - input.leader_len < 0.0);
        if i + 1 < n {
            let frame = input.start_frame + i as i64;
            let params = schedule
                .params_at(frame)
                .ok_or_else(|| Error::Data(format!("schedule has no parameters for frame {frame}")))?;
            let state = FollowState {
                x,
                v,
                x_l: input.leader_x[i],
                v_l: input.leader_v[i],
                l_lead: input.leader_len,
            };
            let v_next = follower_speed_update(kind, params, &state, ctx)?;
            (x, v) = euler_step(x, v, v_next, ctx.dt);
        }
    }

    Ok(SimResult { start_frame: input.start_frame, x: xs, v: vs, collision: collisions })
}
