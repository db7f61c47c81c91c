//! Footstep plans, the continuous gait clock, root-frame target transforms,
//! and step scoring / window advancement.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GaitError {
    #[error("cycle length must be positive, got {0}")]
    BadCycleLength(i64),
    #[error("phase must lie in [0,1), got {0}")]
    BadPhase(f64),
    #[error("unknown gait mode `{0}`")]
    UnknownMode(String),
    #[error("curved mode requires curve parameters")]
    MissingCurveParams,
    #[error("invalid plan parameters: {0}")]
    BadPlanParams(String),
    #[error("step window exhausted: plan complete")]
    PlanComplete,
    #[error("empty foot trace")]
    EmptyTrace,
    #[error("invalid scoring parameters: {0}")]
    BadScoreParams(String),
    #[error("malformed plan file: {0}")]
    BadPlanFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One oriented step: world-frame position plus the desired torso yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootstepTarget {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Torso yaw at this step, normalized to (-pi, pi].
    pub heading: f64,
}

impl FootstepTarget {
    pub fn new(x: f64, y: f64, z: f64, heading: f64) -> Self {
        FootstepTarget {
            x,
            y,
            z,
            heading: normalize_angle(heading),
        }
    }

    pub fn origin() -> Self {
        FootstepTarget::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Normalizes an angle to (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaitMode {
    Forward,
    Backward,
    Lateral,
    Curved,
    Standing,
}

impl fmt::Display for GaitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GaitMode::Forward => "forward",
            GaitMode::Backward => "backward",
            GaitMode::Lateral => "lateral",
            GaitMode::Curved => "curved",
            GaitMode::Standing => "standing",
        };
        f.write_str(s)
    }
}

impl FromStr for GaitMode {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self, GaitError> {
        match s {
            "forward" => Ok(GaitMode::Forward),
            "backward" => Ok(GaitMode::Backward),
            "lateral" => Ok(GaitMode::Lateral),
            "curved" => Ok(GaitMode::Curved),
            "standing" => Ok(GaitMode::Standing),
            other => Err(GaitError::UnknownMode(other.to_string())),
        }
    }
}

/// Ordered sequence of oriented step targets plus the gait-mode tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootstepPlan {
    pub steps: Vec<FootstepTarget>,
    pub mode: GaitMode,
}

impl FootstepPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Goal pose for the parametric-arc generator used by curved plans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub goal_x: f64,
    pub goal_y: f64,
    pub goal_heading: f64,
}

/// Continuous gait clock. `phase` is stored pre-normalized to [0,1); the
/// cycle length only sets the per-step increment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitClock {
    pub phase: f64,
    pub cycle_length: usize,
    pub single_support_steps: usize,
}

impl GaitClock {
    pub fn new(phase: f64, cycle_length: usize, single_support_steps: usize) -> Result<Self, GaitError> {
        if cycle_length == 0 {
            return Err(GaitError::BadCycleLength(0));
        }
        if !(0.0..1.0).contains(&phase) {
            return Err(GaitError::BadPhase(phase));
        }
        Ok(GaitClock {
            phase,
            cycle_length,
            single_support_steps,
        })
    }

    pub fn features(&self) -> [f64; 2] {
        let angle = 2.0 * PI * self.phase;
        [angle.sin(), angle.cos()]
    }
}

/// Sine/cosine encoding of the gait phase. `cycle_length` must be positive;
/// the phase is already normalized by it.
pub fn clock_features(phase: f64, cycle_length: i64) -> Result<[f64; 2], GaitError> {
    if cycle_length <= 0 {
        return Err(GaitError::BadCycleLength(cycle_length));
    }
    if !(0.0..1.0).contains(&phase) {
        return Err(GaitError::BadPhase(phase));
    }
    let angle = 2.0 * PI * phase;
    Ok([angle.sin(), angle.cos()])
}

/// Advances the clock by one policy step: phase <- (phase + 1/L) mod 1.
pub fn advance_clock(clock: GaitClock) -> GaitClock {
    let mut phase = clock.phase + 1.0 / clock.cycle_length as f64;
    if phase >= 1.0 {
        phase -= 1.0;
    }
    // guard against accumulated rounding pushing us to exactly 1.0
    if phase >= 1.0 {
        phase = 0.0;
    }
    GaitClock { phase, ..clock }
}

/// Generates a footstep plan for the requested gait mode.
///
/// Straight modes alternate lateral offsets of half the foot spread; curved
/// plans sample a cubic arc from the origin toward the goal pose with
/// headings tangent to the arc.
pub fn make_plan(
    mode: GaitMode,
    n_steps: usize,
    step_length: f64,
    foot_spread: f64,
    curve_params: Option<CurveParams>,
) -> Result<FootstepPlan, GaitError> {
    if n_steps == 0 {
        return Err(GaitError::BadPlanParams("n_steps must be >= 1".into()));
    }
    if step_length < 0.0 || foot_spread < 0.0 {
        return Err(GaitError::BadPlanParams(
            "step_length and foot_spread must be >= 0".into(),
        ));
    }
    let half = foot_spread / 2.0;
    let steps = match mode {
        GaitMode::Forward => (1..=n_steps)
            .map(|i| {
                let side = if i % 2 == 1 { half } else { -half };
                FootstepTarget::new(i as f64 * step_length, side, 0.0, 0.0)
            })
            .collect(),
        GaitMode::Backward => (1..=n_steps)
            .map(|i| {
                let side = if i % 2 == 1 { half } else { -half };
                FootstepTarget::new(-(i as f64) * step_length, side, 0.0, 0.0)
            })
            .collect(),
        GaitMode::Lateral => (1..=n_steps)
            .map(|i| FootstepTarget::new(0.0, i as f64 * step_length, 0.0, 0.0))
            .collect(),
        GaitMode::Standing => vec![FootstepTarget::origin(); n_steps],
        GaitMode::Curved => {
            let cp = curve_params.ok_or(GaitError::MissingCurveParams)?;
            curved_steps(n_steps, step_length, half, cp)
        }
    };
    Ok(FootstepPlan { steps, mode })
}

/// Cubic Hermite arc from the origin (heading 0) to the goal pose, sampled
/// at `step_length` spacing along arc length with alternating lateral
/// offsets perpendicular to the local tangent.
fn curved_steps(n_steps: usize, step_length: f64, half_spread: f64, cp: CurveParams) -> Vec<FootstepTarget> {
    let chord = (cp.goal_x * cp.goal_x + cp.goal_y * cp.goal_y).sqrt().max(1e-6);
    let m0 = [chord, 0.0];
    let m1 = [chord * cp.goal_heading.cos(), chord * cp.goal_heading.sin()];
    let p1 = [cp.goal_x, cp.goal_y];
    let point = |t: f64| -> ([f64; 2], [f64; 2]) {
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let pos = [
            h10 * m0[0] + h01 * p1[0] + h11 * m1[0],
            h00 * 0.0 + h10 * m0[1] + h01 * p1[1] + h11 * m1[1],
        ];
        let d00 = 6.0 * t2 - 6.0 * t;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = -6.0 * t2 + 6.0 * t;
        let d11 = 3.0 * t2 - 2.0 * t;
        let tan = [
            d10 * m0[0] + d01 * p1[0] + d11 * m1[0],
            d00 * 0.0 + d10 * m0[1] + d01 * p1[1] + d11 * m1[1],
        ];
        (pos, tan)
    };
    // dense arc-length table
    const SAMPLES: usize = 2000;
    let mut arc = vec![0.0; SAMPLES + 1];
    let mut prev = point(0.0).0;
    for i in 1..=SAMPLES {
        let t = i as f64 / SAMPLES as f64;
        let p = point(t).0;
        arc[i] = arc[i - 1] + ((p[0] - prev[0]).powi(2) + (p[1] - prev[1]).powi(2)).sqrt();
        prev = p;
    }
    let total = arc[SAMPLES];
    let mut steps = Vec::with_capacity(n_steps);
    for i in 1..=n_steps {
        let target_s = (i as f64 * step_length).min(total);
        let idx = arc.partition_point(|s| *s < target_s).min(SAMPLES);
        let t = idx as f64 / SAMPLES as f64;
        let (pos, tan) = point(t);
        let heading = tan[1].atan2(tan[0]);
        let side = if i % 2 == 1 { half_spread } else { -half_spread };
        // lateral offset perpendicular to the tangent
        let (nx, ny) = (-heading.sin(), heading.cos());
        steps.push(FootstepTarget::new(
            pos[0] + side * nx,
            pos[1] + side * ny,
            0.0,
            heading,
        ));
    }
    steps
}

/// Root pose used to express targets in the robot's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl RootPose {
    pub fn identity() -> Self {
        RootPose {
            x: 0.0,
            y: 0.0,
            z: 0.0,
            yaw: 0.0,
        }
    }
}

/// Two-target observation window over a plan. Advances by exactly one step
/// after a successful score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepWindow {
    pub index: usize,
}

impl StepWindow {
    pub fn start() -> Self {
        StepWindow { index: 0 }
    }

    pub fn advance(&mut self) {
        self.index += 1;
    }
}

/// Transforms a single target into the root frame: translation by the root
/// position, rotation by the root yaw, heading made relative.
pub fn to_root_frame(target: &FootstepTarget, root: &RootPose) -> FootstepTarget {
    let dx = target.x - root.x;
    let dy = target.y - root.y;
    let (s, c) = root.yaw.sin_cos();
    FootstepTarget::new(
        c * dx + s * dy,
        -s * dx + c * dy,
        target.z - root.z,
        target.heading - root.yaw,
    )
}

/// Inverse of [`to_root_frame`].
pub fn to_world_frame(target: &FootstepTarget, root: &RootPose) -> FootstepTarget {
    let (s, c) = root.yaw.sin_cos();
    FootstepTarget::new(
        root.x + c * target.x - s * target.y,
        root.y + s * target.x + c * target.y,
        root.z + target.z,
        target.heading + root.yaw,
    )
}

/// Returns the window's two targets expressed in the root frame, or signals
/// plan completion when fewer than two targets remain.
pub fn window_targets(
    plan: &FootstepPlan,
    window: &StepWindow,
    root: &RootPose,
) -> Result<(FootstepTarget, FootstepTarget), GaitError> {
    if window.index + 1 >= plan.len() {
        return Err(GaitError::PlanComplete);
    }
    Ok((
        to_root_frame(&plan.steps[window.index], root),
        to_root_frame(&plan.steps[window.index + 1], root),
    ))
}

/// A step is scored when either foot stays within `radius` of the target for
/// at least `min_steps` consecutive policy steps.
pub fn score_step(
    left_trace: &[[f64; 3]],
    right_trace: &[[f64; 3]],
    target: &FootstepTarget,
    radius: f64,
    min_steps: usize,
) -> Result<bool, GaitError> {
    if left_trace.is_empty() || right_trace.is_empty() {
        return Err(GaitError::EmptyTrace);
    }
    if radius <= 0.0 {
        return Err(GaitError::BadScoreParams("radius must be > 0".into()));
    }
    if min_steps == 0 {
        return Err(GaitError::BadScoreParams("min_steps must be >= 1".into()));
    }
    let tp = target.position();
    let within = |p: &[f64; 3]| {
        let d2 = (p[0] - tp[0]).powi(2) + (p[1] - tp[1]).powi(2) + (p[2] - tp[2]).powi(2);
        d2 <= radius * radius
    };
    for trace in [left_trace, right_trace] {
        let mut run = 0usize;
        for p in trace {
            if within(p) {
                run += 1;
                if run >= min_steps {
                    return Ok(true);
                }
            } else {
                run = 0;
            }
        }
    }
    Ok(false)
}

/// Writes a plan in the one-step-per-line ASCII format:
/// `#` header with mode and parameters, then `x y z heading` per step.
pub fn write_plan<W: Write>(w: &mut W, plan: &FootstepPlan, params: &str) -> Result<(), GaitError> {
    writeln!(w, "# mode={} {}", plan.mode, params)?;
    for s in &plan.steps {
        writeln!(w, "{} {} {} {}", s.x, s.y, s.z, s.heading)?;
    }
    Ok(())
}

/// Reads a plan from the ASCII format produced by [`write_plan`].
pub fn read_plan<R: BufRead>(r: R) -> Result<FootstepPlan, GaitError> {
    let mut mode = None;
    let mut steps = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            for tok in rest.split_whitespace() {
                if let Some(m) = tok.strip_prefix("mode=") {
                    mode = Some(m.parse::<GaitMode>()?);
                }
            }
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| GaitError::BadPlanFile(format!("bad number: {e}")))?;
        if vals.len() != 4 {
            return Err(GaitError::BadPlanFile(format!(
                "expected 4 fields per step, got {}",
                vals.len()
            )));
        }
        steps.push(FootstepTarget::new(vals[0], vals[1], vals[2], vals[3]));
    }
    let mode = mode.ok_or_else(|| GaitError::BadPlanFile("missing mode header".into()))?;
    if steps.is_empty() {
        return Err(GaitError::BadPlanFile("plan has no steps".into()));
    }
    Ok(FootstepPlan { steps, mode })
}
