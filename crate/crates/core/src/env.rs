//! Planar biped environment: a sagittal-plane seven-link walker (torso,
//! thighs, shanks, feet) with six actuated joints, penalty ground contact,
//! a 1000 Hz PD inner loop under a 40 Hz policy, footstep-plan guidance,
//! and per-episode domain randomization.
//!
//! Observations are padded to the configured width (default 39) so the
//! planar reduction presents the same interface as a full 3D robot: the
//! roll, lateral, and yaw entries are identically zero.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{FrameState, Link, PlanarModel};
use crate::gait::{
    advance_clock, make_plan, to_root_frame, CurveParams, FootstepPlan, FootstepTarget, GaitClock,
    GaitMode, RootPose, StepWindow,
};
use crate::ppo::{EnvTransition, Environment, PpoError};
use crate::reward::{total_reward, RewardBreakdown, RewardMode, RewardWeights, RobotSnapshot};

pub const NUM_JOINTS: usize = 6;
const BASE_DOF: usize = 3;
const GRAVITY: f64 = 9.81;

/// Link geometry (meters) and masses (kilograms); totals 62 kg.
const TORSO_MASS: f64 = 32.0;
const THIGH_MASS: f64 = 8.0;
const SHANK_MASS: f64 = 5.0;
const FOOT_MASS: f64 = 2.0;
const TORSO_LEN: f64 = 0.6;
const THIGH_LEN: f64 = 0.4;
const SHANK_LEN: f64 = 0.4;
const FOOT_LEN: f64 = 0.2;
const ANKLE_HEIGHT: f64 = 0.05;
const HEEL_X: f64 = -0.05;
const TOE_X: f64 = 0.15;

/// Straight-leg root (hip) height above the ground.
pub const STRAIGHT_HEIGHT: f64 = THIGH_LEN + SHANK_LEN + ANKLE_HEIGHT;

/// PD gains and torque limits of the inner loop.
#[derive(Debug, Clone)]
pub struct PdController {
    pub kp: [f64; NUM_JOINTS],
    pub kd: [f64; NUM_JOINTS],
    pub torque_limit: [f64; NUM_JOINTS],
}

impl Default for PdController {
    fn default() -> Self {
        PdController {
            kp: [120.0, 120.0, 60.0, 120.0, 120.0, 60.0],
            kd: [6.0, 6.0, 3.0, 6.0, 6.0, 3.0],
            torque_limit: [150.0, 150.0, 80.0, 150.0, 150.0, 80.0],
        }
    }
}

/// Scalar PD law with symmetric torque clamping.
pub fn pd_torque(target: f64, q: f64, qdot: f64, kp: f64, kd: f64, limit: f64) -> f64 {
    (kp * (target - q) - kd * qdot).clamp(-limit, limit)
}

/// Per-episode randomization ranges; all multiplicative scales are uniform
/// in [1 - x, 1 + x].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainRandomization {
    pub mass_range: f64,
    pub gain_range: f64,
    pub obs_noise_std: f64,
    pub init_noise_std: f64,
    pub target_jitter: f64,
}

impl Default for DomainRandomization {
    fn default() -> Self {
        DomainRandomization {
            mass_range: 0.1,
            gain_range: 0.1,
            obs_noise_std: 0.01,
            init_noise_std: 0.02,
            target_jitter: 0.02,
        }
    }
}

impl DomainRandomization {
    pub fn none() -> Self {
        DomainRandomization {
            mass_range: 0.0,
            gain_range: 0.0,
            obs_noise_std: 0.0,
            init_noise_std: 0.0,
            target_jitter: 0.0,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> XiSample {
        let u = |rng: &mut ChaCha8Rng, r: f64| {
            if r > 0.0 {
                rng.gen_range(1.0 - r..=1.0 + r)
            } else {
                1.0
            }
        };
        XiSample {
            mass_scale: u(rng, self.mass_range),
            kp_scale: u(rng, self.gain_range),
            kd_scale: u(rng, self.gain_range),
            obs_noise_std: self.obs_noise_std,
            init_noise_std: self.init_noise_std,
            target_shift: if self.target_jitter > 0.0 {
                rng.gen_range(-self.target_jitter..=self.target_jitter)
            } else {
                0.0
            },
        }
    }
}

/// One drawn randomization, applied for the length of an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiSample {
    pub mass_scale: f64,
    pub kp_scale: f64,
    pub kd_scale: f64,
    pub obs_noise_std: f64,
    pub init_noise_std: f64,
    pub target_shift: f64,
}

impl XiSample {
    pub fn nominal() -> Self {
        XiSample {
            mass_scale: 1.0,
            kp_scale: 1.0,
            kd_scale: 1.0,
            obs_noise_std: 0.0,
            init_noise_std: 0.0,
            target_shift: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub plan_mode: GaitMode,
    pub plan_steps: usize,
    pub step_length: f64,
    pub foot_spread: f64,
    pub curve: Option<CurveParams>,
    pub horizon: usize,
    pub cycle_length: usize,
    pub single_support_steps: usize,
    pub substeps: usize,
    pub substep_dt: f64,
    pub score_radius: f64,
    pub fall_height_ratio: f64,
    pub reward_weights: RewardWeights,
    pub reward_mode: RewardMode,
    pub randomization: DomainRandomization,
    /// Padded observation width presented to the policy.
    pub obs_dim: usize,
    /// Disables gravity for free-body integration tests.
    pub zero_gravity: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            plan_mode: GaitMode::Standing,
            plan_steps: 12,
            step_length: 0.25,
            foot_spread: 0.12,
            curve: None,
            horizon: 400,
            cycle_length: 40,
            single_support_steps: 10,
            substeps: 25,
            substep_dt: 1e-3,
            score_radius: 0.2,
            fall_height_ratio: 0.35,
            reward_weights: RewardWeights::default(),
            reward_mode: RewardMode::default(),
            randomization: DomainRandomization::default(),
            obs_dim: 39,
            zero_gravity: false,
        }
    }
}

/// Support pattern at the current clock phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportPhase {
    DoubleSupport,
    SwingLeft,
    SwingRight,
}

/// Everything `step` produces beyond the RL transition, for logging and
/// metrics.
#[derive(Debug, Clone)]
pub struct StepInfo {
    /// Substep-mean applied torque per joint.
    pub mean_torque: [f64; NUM_JOINTS],
    /// Substep-mean total actuator power sum_i |tau_i w_i| (watts).
    pub avg_power: f64,
    /// Actuator energy spent this policy step (joules).
    pub energy: f64,
    /// World-frame ground reaction per foot, [fx, fz].
    pub foot_force: [[f64; 2]; 2],
    pub breakdown: RewardBreakdown,
    pub fall: bool,
    pub scored: bool,
    pub window_index: usize,
    pub phase: f64,
    pub support: SupportPhase,
    pub root_height: f64,
    /// Present when `record_substeps` is enabled: per-substep total power.
    pub substep_powers: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FullStep {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// Builds the seven-link planar walker. Link order: torso, left thigh,
/// left shank, left foot, right thigh, right shank, right foot.
pub fn build_model(mass_scale: f64, gravity: f64) -> PlanarModel {
    let leg = |parent_thigh: usize| {
        vec![
            Link {
                parent: 0,
                joint_offset: [0.0, 0.0],
                mass: THIGH_MASS * mass_scale,
                com: [0.0, -THIGH_LEN / 2.0],
                inertia: THIGH_MASS * mass_scale * THIGH_LEN * THIGH_LEN / 12.0,
            },
            Link {
                parent: parent_thigh,
                joint_offset: [0.0, -THIGH_LEN],
                mass: SHANK_MASS * mass_scale,
                com: [0.0, -SHANK_LEN / 2.0],
                inertia: SHANK_MASS * mass_scale * SHANK_LEN * SHANK_LEN / 12.0,
            },
            Link {
                parent: parent_thigh + 1,
                joint_offset: [0.0, -SHANK_LEN],
                mass: FOOT_MASS * mass_scale,
                com: [(HEEL_X + TOE_X) / 2.0, -ANKLE_HEIGHT / 2.0],
                inertia: FOOT_MASS * mass_scale * FOOT_LEN * FOOT_LEN / 12.0,
            },
        ]
    };
    let mut links = vec![Link {
        parent: 0,
        joint_offset: [0.0, 0.0],
        mass: TORSO_MASS * mass_scale,
        com: [0.0, TORSO_LEN / 2.0],
        inertia: TORSO_MASS * mass_scale * TORSO_LEN * TORSO_LEN / 12.0,
    }];
    links.extend(leg(1));
    links.extend(leg(4));
    PlanarModel {
        links,
        floating: true,
        gravity,
    }
}

/// Half-sitting joint angles (hip, knee, ankle per leg): knees flexed so
/// the root sits at 95% of the straight-leg height, feet flat.
pub fn half_sitting_pose() -> ([f64; NUM_JOINTS], f64) {
    let height = 0.95 * STRAIGHT_HEIGHT;
    let drop = height - ANKLE_HEIGHT;
    let a = (drop / (THIGH_LEN + SHANK_LEN)).acos();
    ([a, -2.0 * a, a, a, -2.0 * a, a], height)
}

const JOINT_LO: [f64; NUM_JOINTS] = [-1.6, -2.4, -1.2, -1.6, -2.4, -1.2];
const JOINT_HI: [f64; NUM_JOINTS] = [1.6, 0.05, 1.2, 1.6, 0.05, 1.2];

/// Contact penalty parameters.
const CONTACT_KN: f64 = 3.0e4;
const CONTACT_DN: f64 = 1.0e3;
const CONTACT_KT: f64 = 2.0e3;
const FRICTION_MU: f64 = 0.8;

/// (link index, local point) of the four ground-contact points.
const CONTACT_POINTS: [(usize, [f64; 2]); 4] = [
    (3, [HEEL_X, -ANKLE_HEIGHT]),
    (3, [TOE_X, -ANKLE_HEIGHT]),
    (6, [HEEL_X, -ANKLE_HEIGHT]),
    (6, [TOE_X, -ANKLE_HEIGHT]),
];

/// Sole-center local point used for step scoring and reward.
const SOLE_CENTER: [f64; 2] = [(HEEL_X + TOE_X) / 2.0, -ANKLE_HEIGHT];

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub struct BipedEnv {
    pub cfg: EnvConfig,
    /// Nominal (unjittered) plan; the active episode uses a jittered copy.
    pub plan: FootstepPlan,
    active_plan: FootstepPlan,
    model: PlanarModel,
    gains: PdController,
    base_gains: PdController,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub clock: GaitClock,
    pub window: StepWindow,
    pub elapsed: usize,
    pub substep_count: u64,
    xi: XiSample,
    half_sit: [f64; NUM_JOINTS],
    pub nominal_height: f64,
    /// Consecutive policy steps with a foot inside the scoring radius.
    score_runs: [usize; 2],
    plan_exhausted: bool,
    /// When set, `StepInfo::substep_powers` is populated.
    pub record_substeps: bool,
    pub last_info: Option<StepInfo>,
}

impl BipedEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self, PpoError> {
        let plan = make_plan(
            cfg.plan_mode,
            cfg.plan_steps,
            cfg.step_length,
            cfg.foot_spread,
            cfg.curve,
        )
        .map_err(|e| PpoError::Environment(e.to_string()))?;
        let (half_sit, nominal_height) = half_sitting_pose();
        let gravity = if cfg.zero_gravity { 0.0 } else { GRAVITY };
        let clock = GaitClock::new(0.0, cfg.cycle_length, cfg.single_support_steps)
            .map_err(|e| PpoError::Environment(e.to_string()))?;
        Ok(BipedEnv {
            model: build_model(1.0, gravity),
            gains: PdController::default(),
            base_gains: PdController::default(),
            q: vec![0.0; BASE_DOF + NUM_JOINTS],
            qd: vec![0.0; BASE_DOF + NUM_JOINTS],
            clock,
            window: StepWindow::start(),
            elapsed: 0,
            substep_count: 0,
            xi: XiSample::nominal(),
            half_sit,
            nominal_height,
            score_runs: [0, 0],
            plan_exhausted: false,
            record_substeps: false,
            last_info: None,
            active_plan: plan.clone(),
            plan,
            cfg,
        })
    }

    pub fn xi(&self) -> XiSample {
        self.xi
    }

    pub fn total_mass(&self) -> f64 {
        self.model.total_mass()
    }

    fn frames(&self) -> Vec<FrameState> {
        self.model
            .kinematics(&self.q, &self.qd)
            .expect("state dimensions are fixed")
    }

    /// Current support pattern from the clock phase. Standing plans are
    /// permanent double support.
    pub fn support_phase(&self) -> SupportPhase {
        if self.plan.mode == GaitMode::Standing {
            return SupportPhase::DoubleSupport;
        }
        let l = self.clock.cycle_length as f64;
        let ss = self.clock.single_support_steps as f64;
        let ds = (l - 2.0 * ss) / 2.0;
        // phases are multiples of 1/L; round so accumulated float error
        // cannot shift region boundaries
        let t = (self.clock.phase * l).round();
        if t < ds {
            SupportPhase::DoubleSupport
        } else if t < ds + ss {
            SupportPhase::SwingRight
        } else if t < 2.0 * ds + ss {
            SupportPhase::DoubleSupport
        } else {
            SupportPhase::SwingLeft
        }
    }

    /// Window index clamped so two targets always remain visible; the last
    /// pair is held once the plan runs out.
    fn effective_index(&self) -> usize {
        self.window.index.min(self.active_plan.len().saturating_sub(2))
    }

    fn window_pair_world(&self) -> (FootstepTarget, FootstepTarget) {
        let i = self.effective_index();
        (self.active_plan.steps[i], self.active_plan.steps[i + 1])
    }

    fn root_pose(&self) -> RootPose {
        RootPose {
            x: self.q[0],
            y: 0.0,
            z: 0.0,
            yaw: 0.0,
        }
    }

    fn sole_position(&self, frames: &[FrameState], foot_link: usize) -> [f64; 3] {
        let p = self.model.point_position(frames, foot_link, SOLE_CENTER);
        [p[0], 0.0, p[1]]
    }

    /// World-frame sole-center positions, [left, right], each [x, z].
    pub fn foot_positions(&self) -> [[f64; 2]; 2] {
        let frames = self.frames();
        [
            self.model.point_position(&frames, 3, SOLE_CENTER),
            self.model.point_position(&frames, 6, SOLE_CENTER),
        ]
    }

    fn sole_velocity(&self, frames: &[FrameState], foot_link: usize) -> [f64; 3] {
        let v = self.model.point_velocity(frames, foot_link, SOLE_CENTER);
        [v[0], 0.0, v[1]]
    }

    /// Raw (pre-normalization) padded observation. Layout: 12 joint
    /// positions, 12 joint velocities, roll/pitch, 3-axis root angular
    /// velocity, two root-frame targets (x, y, z, heading), clock pair.
    /// Planar pads (the second leg's 6 slots, roll, x/z angular rates,
    /// lateral components) are identically zero.
    pub fn observe(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.cfg.obs_dim);
        let sigma = self.xi.obs_noise_std;
        let noisy = |v: f64, rng: &mut ChaCha8Rng| {
            if sigma > 0.0 {
                v + sigma * gauss(rng)
            } else {
                v
            }
        };
        for j in 0..NUM_JOINTS {
            obs.push(noisy(self.q[BASE_DOF + j], rng));
        }
        obs.extend(std::iter::repeat(0.0).take(6));
        for j in 0..NUM_JOINTS {
            obs.push(noisy(self.qd[BASE_DOF + j], rng));
        }
        obs.extend(std::iter::repeat(0.0).take(6));
        obs.push(0.0); // roll
        obs.push(noisy(self.q[2], rng)); // pitch
        obs.push(0.0); // roll rate
        obs.push(noisy(self.qd[2], rng)); // pitch rate
        obs.push(0.0); // yaw rate
        let root = self.root_pose();
        let (t1w, t2w) = self.window_pair_world();
        for t in [to_root_frame(&t1w, &root), to_root_frame(&t2w, &root)] {
            obs.push(t.x);
            obs.push(t.y);
            obs.push(t.z);
            obs.push(t.heading);
        }
        obs.extend(self.clock.features());
        while obs.len() < self.cfg.obs_dim {
            obs.push(0.0);
        }
        obs.truncate(self.cfg.obs_dim);
        obs
    }

    /// Contact forces at the four penalty points for the current state;
    /// returns per-foot world-frame totals and fills `tau_ext`.
    fn contact_forces(&self, frames: &[FrameState], tau_ext: &mut [f64]) -> [[f64; 2]; 2] {
        let mut per_foot = [[0.0; 2]; 2];
        for (ci, (link, local)) in CONTACT_POINTS.iter().enumerate() {
            let p = self.model.point_position(frames, *link, *local);
            let pen = -p[1];
            if pen <= 0.0 {
                continue;
            }
            let v = self.model.point_velocity(frames, *link, *local);
            let fn_ = (CONTACT_KN * pen - CONTACT_DN * v[1]).max(0.0);
            let ft = (-CONTACT_KT * v[0]).clamp(-FRICTION_MU * fn_, FRICTION_MU * fn_);
            let force = [ft, fn_];
            self.model.apply_point_force(frames, *link, *local, force, tau_ext);
            let foot = ci / 2;
            per_foot[foot][0] += force[0];
            per_foot[foot][1] += force[1];
        }
        per_foot
    }

    /// One 1 ms inner-loop substep under held joint targets. Returns the
    /// applied torques, the instantaneous total actuator power, and the
    /// per-foot contact forces.
    fn substep(&mut self, targets: &[f64; NUM_JOINTS]) -> ([f64; NUM_JOINTS], f64, [[f64; 2]; 2]) {
        let frames = self.frames();
        let mut tau = vec![0.0; BASE_DOF + NUM_JOINTS];
        let mut applied = [0.0; NUM_JOINTS];
        let mut power = 0.0;
        for j in 0..NUM_JOINTS {
            let t = pd_torque(
                targets[j],
                self.q[BASE_DOF + j],
                self.qd[BASE_DOF + j],
                self.gains.kp[j],
                self.gains.kd[j],
                self.gains.torque_limit[j],
            );
            applied[j] = t;
            tau[BASE_DOF + j] = t;
            power += (t * self.qd[BASE_DOF + j]).abs();
        }
        let foot_forces = self.contact_forces(&frames, &mut tau);
        let qdd = self
            .model
            .forward_dynamics(&self.q, &self.qd, &tau)
            .unwrap_or_else(|_| vec![f64::NAN; self.q.len()]);
        let dt = self.cfg.substep_dt;
        for i in 0..self.q.len() {
            self.qd[i] += dt * qdd[i];
            self.q[i] += dt * self.qd[i];
        }
        self.substep_count += 1;
        (applied, power, foot_forces)
    }

    fn left_shank_segment(&self, frames: &[FrameState]) -> ([f64; 2], [f64; 2]) {
        (
            frames[2].origin,
            self.model.point_position(frames, 2, [0.0, -SHANK_LEN]),
        )
    }

    fn right_shank_segment(&self, frames: &[FrameState]) -> ([f64; 2], [f64; 2]) {
        (
            frames[5].origin,
            self.model.point_position(frames, 5, [0.0, -SHANK_LEN]),
        )
    }

    fn shanks_cross(&self, frames: &[FrameState]) -> bool {
        let (a1, a2) = self.left_shank_segment(frames);
        let (b1, b2) = self.right_shank_segment(frames);
        segments_intersect(a1, a2, b1, b2)
    }

    fn lowest_contact_z(&self, frames: &[FrameState]) -> f64 {
        CONTACT_POINTS
            .iter()
            .map(|(link, local)| self.model.point_position(frames, *link, *local)[1])
            .fold(f64::INFINITY, f64::min)
    }

    fn assemble_snapshot(&self, frames: &[FrameState], foot_forces: &[[f64; 2]; 2]) -> RobotSnapshot {
        let support = self.support_phase();
        let weight = (self.model.total_mass() * GRAVITY).max(1e-9);
        let mut foot_force = Vec::new();
        let push = |out: &mut Vec<f64>, f: &[f64; 2]| {
            out.push(f[0] / weight);
            out.push(f[1] / weight);
        };
        match support {
            SupportPhase::DoubleSupport => {
                push(&mut foot_force, &foot_forces[0]);
                push(&mut foot_force, &foot_forces[1]);
            }
            SupportPhase::SwingLeft => push(&mut foot_force, &foot_forces[1]),
            SupportPhase::SwingRight => push(&mut foot_force, &foot_forces[0]),
        }
        let left = self.sole_position(frames, 3);
        let right = self.sole_position(frames, 6);
        let (t1w, _) = self.window_pair_world();
        let tp = t1w.position();
        let dist2 = |p: &[f64; 3]| {
            (p[0] - tp[0]).powi(2) + (p[1] - tp[1]).powi(2) + (p[2] - tp[2]).powi(2)
        };
        let (swing_pos, swing_vel) = match support {
            SupportPhase::SwingLeft => (left, self.sole_velocity(frames, 3)),
            SupportPhase::SwingRight => (right, self.sole_velocity(frames, 6)),
            SupportPhase::DoubleSupport => {
                let p = if dist2(&left) <= dist2(&right) { left } else { right };
                (p, [0.0; 3])
            }
        };
        let pitch = self.q[2];
        let head = self.model.point_position(frames, 0, [0.0, TORSO_LEN]);
        RobotSnapshot {
            foot_force,
            swing_foot_velocity: swing_vel,
            swing_foot_position: swing_pos,
            next_target: t1w,
            root_quat: [(pitch / 2.0).cos(), 0.0, (pitch / 2.0).sin(), 0.0],
            reference_quat: [1.0, 0.0, 0.0, 0.0],
            root_height: self.q[1],
            nominal_height: self.nominal_height,
            head_xy: [head[0], 0.0],
            root_xy: [self.q[0], 0.0],
        }
    }

    /// Updates scoring state with the current foot positions; returns true
    /// when the active target was just scored and the window advanced.
    fn update_scoring(&mut self, frames: &[FrameState]) -> bool {
        if self.plan.mode == GaitMode::Standing {
            return false;
        }
        let (t1w, _) = self.window_pair_world();
        let tp = t1w.position();
        let r2 = self.cfg.score_radius * self.cfg.score_radius;
        let feet = [self.sole_position(frames, 3), self.sole_position(frames, 6)];
        for (i, p) in feet.iter().enumerate() {
            let d2 = (p[0] - tp[0]).powi(2) + (p[1] - tp[1]).powi(2) + (p[2] - tp[2]).powi(2);
            if d2 <= r2 {
                self.score_runs[i] += 1;
            } else {
                self.score_runs[i] = 0;
            }
        }
        let min_steps = self.clock.single_support_steps;
        if self.score_runs.iter().any(|r| *r >= min_steps) {
            if self.window.index + 2 >= self.active_plan.len() {
                self.plan_exhausted = true;
            } else {
                self.window.advance();
            }
            self.score_runs = [0, 0];
            return true;
        }
        false
    }

    /// Full reset: fresh randomization draw, half-sitting posture with
    /// initialization noise, clock phase in {0, 0.5}, window at the start.
    pub fn reset_full(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.xi = self.cfg.randomization.sample(rng);
        let gravity = if self.cfg.zero_gravity { 0.0 } else { GRAVITY };
        self.model = build_model(self.xi.mass_scale, gravity);
        self.gains = self.base_gains.clone();
        for j in 0..NUM_JOINTS {
            self.gains.kp[j] *= self.xi.kp_scale;
            self.gains.kd[j] *= self.xi.kd_scale;
        }
        self.active_plan = self.plan.clone();
        if self.xi.target_shift != 0.0 && self.plan.mode != GaitMode::Standing {
            for t in self.active_plan.steps.iter_mut() {
                t.x += self.xi.target_shift;
            }
        }

        self.q = vec![0.0; BASE_DOF + NUM_JOINTS];
        self.qd = vec![0.0; BASE_DOF + NUM_JOINTS];
        self.q[1] = self.nominal_height;
        for j in 0..NUM_JOINTS {
            let noise = if self.xi.init_noise_std > 0.0 {
                self.xi.init_noise_std * gauss(rng)
            } else {
                0.0
            };
            self.q[BASE_DOF + j] = (self.half_sit[j] + noise).clamp(JOINT_LO[j], JOINT_HI[j]);
        }
        // settle the base height so the lowest contact point touches the
        // ground exactly
        let frames = self.frames();
        let low = self.lowest_contact_z(&frames);
        self.q[1] -= low;

        let phase = if rng.gen_bool(0.5) { 0.0 } else { 0.5 };
        self.clock = GaitClock::new(
            phase,
            self.cfg.cycle_length,
            self.cfg.single_support_steps,
        )
        .expect("validated at construction");
        self.window = StepWindow::start();
        self.elapsed = 0;
        self.substep_count = 0;
        self.score_runs = [0, 0];
        self.plan_exhausted = false;
        self.last_info = None;
        self.observe(rng)
    }

    /// One 40 Hz policy step: clamp targets, run the inner loop, advance the
    /// clock, score, evaluate reward, and check termination.
    pub fn step_full(&mut self, action: &[f64], rng: &mut ChaCha8Rng) -> Result<FullStep, PpoError> {
        if action.len() != NUM_JOINTS {
            return Err(PpoError::Environment(format!(
                "expected {NUM_JOINTS} joint targets, got {}",
                action.len()
            )));
        }
        let mut targets = [0.0; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let a = if action[j].is_finite() { action[j] } else { 0.0 };
            targets[j] = a.clamp(JOINT_LO[j], JOINT_HI[j]);
        }

        let mut torque_sum = [0.0; NUM_JOINTS];
        let mut power_sum = 0.0;
        let mut powers = Vec::new();
        let mut last_forces = [[0.0; 2]; 2];
        for _ in 0..self.cfg.substeps {
            let (tau, power, forces) = self.substep(&targets);
            for j in 0..NUM_JOINTS {
                torque_sum[j] += tau[j].abs();
            }
            power_sum += power;
            if self.record_substeps {
                powers.push(power);
            }
            last_forces = forces;
        }
        let n = self.cfg.substeps as f64;
        let avg_power = power_sum / n;
        let energy = power_sum * self.cfg.substep_dt;
        let mut mean_torque = [0.0; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            mean_torque[j] = torque_sum[j] / n;
        }

        self.elapsed += 1;
        self.clock = advance_clock(self.clock);

        let diverged = self.q.iter().chain(self.qd.iter()).any(|v| !v.is_finite());
        if diverged {
            let info = StepInfo {
                mean_torque,
                avg_power: 0.0,
                energy: 0.0,
                foot_force: last_forces,
                breakdown: RewardBreakdown::default(),
                fall: true,
                scored: false,
                window_index: self.window.index,
                phase: self.clock.phase,
                support: SupportPhase::DoubleSupport,
                root_height: f64::NAN,
                substep_powers: powers,
            };
            self.last_info = Some(info.clone());
            return Ok(FullStep {
                obs: vec![0.0; self.cfg.obs_dim],
                reward: 0.0,
                terminal: true,
                truncated: false,
                info,
            });
        }

        let frames = self.frames();
        let scored = self.update_scoring(&frames);
        let snapshot = self.assemble_snapshot(&frames, &last_forces);
        let breakdown = total_reward(&snapshot, &self.cfg.reward_weights, self.cfg.reward_mode)
            .map_err(|e| PpoError::Environment(e.to_string()))?;

        let height_above_support = self.q[1] - self.lowest_contact_z(&frames).min(0.0);
        let fall = height_above_support < self.cfg.fall_height_ratio * self.nominal_height
            || self.shanks_cross(&frames);
        let terminal = fall;
        let truncated = !terminal && (self.elapsed >= self.cfg.horizon || self.plan_exhausted);

        let info = StepInfo {
            mean_torque,
            avg_power,
            energy,
            foot_force: last_forces,
            breakdown,
            fall,
            scored,
            window_index: self.window.index,
            phase: self.clock.phase,
            support: self.support_phase(),
            root_height: self.q[1],
            substep_powers: powers,
        };
        self.last_info = Some(info.clone());
        Ok(FullStep {
            obs: self.observe(rng),
            reward: breakdown.total,
            terminal,
            truncated,
            info,
        })
    }
}

impl Environment for BipedEnv {
    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim
    }

    fn action_dim(&self) -> usize {
        NUM_JOINTS
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, PpoError> {
        Ok(self.reset_full(rng))
    }

    fn step(&mut self, action: &[f64], rng: &mut ChaCha8Rng) -> Result<EnvTransition, PpoError> {
        let full = self.step_full(action, rng)?;
        Ok(EnvTransition {
            obs: full.obs,
            reward: full.reward,
            terminal: full.terminal,
            truncated: full.truncated,
        })
    }
}

/// Proper 2D segment intersection test. The tolerance keeps coincident
/// segments (legs moving in lockstep) from registering as a crossing
/// through rounding jitter.
fn segments_intersect(a1: [f64; 2], a2: [f64; 2], b1: [f64; 2], b2: [f64; 2]) -> bool {
    const EPS: f64 = 1e-9;
    let d = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    };
    let d1 = d(b1, b2, a1);
    let d2 = d(b1, b2, a2);
    let d3 = d(a1, a2, b1);
    let d4 = d(a1, a2, b2);
    d1.min(d2) < -EPS && d1.max(d2) > EPS && d3.min(d4) < -EPS && d3.max(d4) > EPS
}
