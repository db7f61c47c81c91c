//! Six-term weighted locomotion reward with per-term decomposition.
//!
//! The contact terms default to bounded exponential forms
//! `exp(-c * ||.||^2)` so every weighted term stays in `[0, alpha]` and the
//! total in `[0, 0.9]`; the literal quadratic penalties remain available
//! behind [`RewardMode::Raw`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::FootstepTarget;
use crate::linalg::norm_sq;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("non-finite input in field `{0}`")]
    NonFinite(&'static str),
    #[error("quaternion `{0}` is not unit norm (|q| = {1})")]
    NonUnitQuaternion(&'static str, f64),
    #[error("negative reward weight `{0}`")]
    NegativeWeight(&'static str),
}

/// Per-term coefficients of the weighted reward sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub force: f64,
    pub vel: f64,
    pub step: f64,
    pub orient: f64,
    pub height: f64,
    pub upper: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            force: 0.15,
            vel: 0.15,
            step: 0.45,
            orient: 0.05,
            height: 0.05,
            upper: 0.05,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        for (name, w) in [
            ("force", self.force),
            ("vel", self.vel),
            ("step", self.step),
            ("orient", self.orient),
            ("height", self.height),
            ("upper", self.upper),
        ] {
            if !w.is_finite() {
                return Err(RewardError::NonFinite("weights"));
            }
            if w < 0.0 {
                return Err(RewardError::NegativeWeight(name));
            }
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.force + self.vel + self.step + self.orient + self.height + self.upper
    }
}

/// Contact-term shape: bounded exponentials (default) or the literal
/// quadratic penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RewardMode {
    Bounded { c_force: f64, c_vel: f64 },
    Raw,
}

impl Default for RewardMode {
    fn default() -> Self {
        RewardMode::Bounded {
            c_force: 1.0,
            c_vel: 1.0,
        }
    }
}

/// Everything the reward needs about one policy step. Forces are already
/// normalized by body weight; quaternions are unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotSnapshot {
    /// Normalized ground-reaction components of the contributing feet.
    pub foot_force: Vec<f64>,
    pub swing_foot_velocity: [f64; 3],
    pub swing_foot_position: [f64; 3],
    pub next_target: FootstepTarget,
    pub root_quat: [f64; 4],
    pub reference_quat: [f64; 4],
    pub root_height: f64,
    pub nominal_height: f64,
    pub head_xy: [f64; 2],
    pub root_xy: [f64; 2],
}

impl RobotSnapshot {
    /// An all-errors-zero snapshot; every term evaluates to its maximum.
    pub fn ideal() -> Self {
        RobotSnapshot {
            foot_force: vec![0.0; 3],
            swing_foot_velocity: [0.0; 3],
            swing_foot_position: [0.0; 3],
            next_target: FootstepTarget::origin(),
            root_quat: [1.0, 0.0, 0.0, 0.0],
            reference_quat: [1.0, 0.0, 0.0, 0.0],
            root_height: 0.8,
            nominal_height: 0.8,
            head_xy: [0.0, 0.0],
            root_xy: [0.0, 0.0],
        }
    }

    fn validate(&self) -> Result<(), RewardError> {
        if self.foot_force.iter().any(|v| !v.is_finite()) {
            return Err(RewardError::NonFinite("foot_force"));
        }
        if self.swing_foot_velocity.iter().any(|v| !v.is_finite()) {
            return Err(RewardError::NonFinite("swing_foot_velocity"));
        }
        if self.swing_foot_position.iter().any(|v| !v.is_finite()) {
            return Err(RewardError::NonFinite("swing_foot_position"));
        }
        if ![self.root_height, self.nominal_height].iter().all(|v| v.is_finite()) {
            return Err(RewardError::NonFinite("root_height"));
        }
        if self.head_xy.iter().chain(&self.root_xy).any(|v| !v.is_finite()) {
            return Err(RewardError::NonFinite("head_xy/root_xy"));
        }
        for (name, q) in [("root_quat", &self.root_quat), ("reference_quat", &self.reference_quat)] {
            let n = norm_sq(q).sqrt();
            if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
                return Err(RewardError::NonUnitQuaternion(name, n));
            }
        }
        Ok(())
    }
}

/// Unweighted and weighted values of all six terms plus the total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub force: f64,
    pub vel: f64,
    pub step: f64,
    pub orient: f64,
    pub height: f64,
    pub upper: f64,
    pub weighted_force: f64,
    pub weighted_vel: f64,
    pub weighted_step: f64,
    pub weighted_orient: f64,
    pub weighted_height: f64,
    pub weighted_upper: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn terms(&self) -> [f64; 6] {
        [self.force, self.vel, self.step, self.orient, self.height, self.upper]
    }

    pub fn weighted(&self) -> [f64; 6] {
        [
            self.weighted_force,
            self.weighted_vel,
            self.weighted_step,
            self.weighted_orient,
            self.weighted_height,
            self.weighted_upper,
        ]
    }
}

/// Contact-stability and swing-smoothness terms.
pub fn contact_terms(snapshot: &RobotSnapshot, mode: RewardMode) -> Result<(f64, f64), RewardError> {
    snapshot.validate()?;
    let f2 = norm_sq(&snapshot.foot_force);
    let v2 = norm_sq(&snapshot.swing_foot_velocity);
    Ok(match mode {
        RewardMode::Bounded { c_force, c_vel } => ((-c_force * f2).exp(), (-c_vel * v2).exp()),
        RewardMode::Raw => (-f2, -v2),
    })
}

/// Foot-placement term: `exp(-||p - T1||^2)` over the positional part of T1.
pub fn placement_term(snapshot: &RobotSnapshot) -> Result<f64, RewardError> {
    snapshot.validate()?;
    let t = snapshot.next_target.position();
    let p = &snapshot.swing_foot_position;
    let d2 = (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2);
    Ok((-d2).exp())
}

/// Orientation, height, and upper-body posture terms.
pub fn posture_terms(snapshot: &RobotSnapshot) -> Result<(f64, f64, f64), RewardError> {
    snapshot.validate()?;
    let qdot: f64 = snapshot
        .root_quat
        .iter()
        .zip(&snapshot.reference_quat)
        .map(|(a, b)| a * b)
        .sum();
    let orient = (-10.0 * (1.0 - qdot * qdot)).exp();
    let dh = snapshot.root_height - snapshot.nominal_height;
    let height = (-40.0 * dh * dh).exp();
    let dx = snapshot.head_xy[0] - snapshot.root_xy[0];
    let dy = snapshot.head_xy[1] - snapshot.root_xy[1];
    let upper = (-10.0 * (dx * dx + dy * dy)).exp();
    Ok((orient, height, upper))
}

/// Weighted six-term total with full decomposition.
pub fn total_reward(
    snapshot: &RobotSnapshot,
    weights: &RewardWeights,
    mode: RewardMode,
) -> Result<RewardBreakdown, RewardError> {
    weights.validate()?;
    let (force, vel) = contact_terms(snapshot, mode)?;
    let step = placement_term(snapshot)?;
    let (orient, height, upper) = posture_terms(snapshot)?;
    let weighted = [
        weights.force * force,
        weights.vel * vel,
        weights.step * step,
        weights.orient * orient,
        weights.height * height,
        weights.upper * upper,
    ];
    Ok(RewardBreakdown {
        force,
        vel,
        step,
        orient,
        height,
        upper,
        weighted_force: weighted[0],
        weighted_vel: weighted[1],
        weighted_step: weighted[2],
        weighted_orient: weighted[3],
        weighted_height: weighted[4],
        weighted_upper: weighted[5],
        total: weighted.iter().sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_snapshot(rng: &mut ChaCha8Rng) -> RobotSnapshot {
        let mut q = [0.0; 4];
        loop {
            for v in q.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let n = norm_sq(&q).sqrt();
            if n > 1e-3 {
                for v in q.iter_mut() {
                    *v /= n;
                }
                break;
            }
        }
        RobotSnapshot {
            foot_force: (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            swing_foot_velocity: [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
            swing_foot_position: [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..1.0)],
            next_target: FootstepTarget::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.0, 0.0),
            root_quat: q,
            reference_quat: [1.0, 0.0, 0.0, 0.0],
            root_height: rng.gen_range(0.0..1.5),
            nominal_height: 0.8,
            head_xy: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            root_xy: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        }
    }

    #[test]
    fn contact_terms_at_zero() {
        let snap = RobotSnapshot::ideal();
        let (f, v) = contact_terms(&snap, RewardMode::default()).unwrap();
        assert_eq!((f, v), (1.0, 1.0));
        let (f, v) = contact_terms(&snap, RewardMode::Raw).unwrap();
        assert!(f == 0.0 && v == 0.0);
    }

    #[test]
    fn contact_force_unit_norm_gives_inverse_e() {
        let mut snap = RobotSnapshot::ideal();
        snap.foot_force = vec![1.0, 0.0, 0.0];
        let (f, _) = contact_terms(&snap, RewardMode::Bounded { c_force: 1.0, c_vel: 1.0 }).unwrap();
        assert!((f - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn contact_rejects_non_finite() {
        let mut snap = RobotSnapshot::ideal();
        snap.foot_force = vec![f64::NAN];
        assert!(contact_terms(&snap, RewardMode::default()).is_err());
    }

    #[test]
    fn placement_at_target_and_at_unit_distance() {
        let mut snap = RobotSnapshot::ideal();
        assert_eq!(placement_term(&snap).unwrap(), 1.0);
        snap.swing_foot_position = [1.0, 0.0, 0.0];
        assert!((placement_term(&snap).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn placement_monotone_decrease() {
        let mut snap = RobotSnapshot::ideal();
        let mut prev = placement_term(&snap).unwrap();
        for d in [0.5, 1.0, 2.0, 5.0, 20.0] {
            snap.swing_foot_position = [d, 0.0, 0.0];
            let v = placement_term(&snap).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-100);
    }

    #[test]
    fn posture_all_errors_zero() {
        let snap = RobotSnapshot::ideal();
        assert_eq!(posture_terms(&snap).unwrap(), (1.0, 1.0, 1.0));
    }

    #[test]
    fn quaternion_double_cover() {
        let mut snap = RobotSnapshot::ideal();
        snap.root_quat = [-1.0, 0.0, 0.0, 0.0];
        let (orient, _, _) = posture_terms(&snap).unwrap();
        assert_eq!(orient, 1.0);
    }

    #[test]
    fn height_error_scalar_case() {
        let mut snap = RobotSnapshot::ideal();
        snap.root_height = snap.nominal_height + 0.1;
        let (_, height, _) = posture_terms(&snap).unwrap();
        assert!((height - (-0.4f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn posture_rejects_non_unit_quaternion() {
        let mut snap = RobotSnapshot::ideal();
        snap.root_quat = [2.0, 0.0, 0.0, 0.0];
        assert!(matches!(
            posture_terms(&snap),
            Err(RewardError::NonUnitQuaternion(_, _))
        ));
    }

    #[test]
    fn ideal_total_is_weight_sum() {
        let b = total_reward(&RobotSnapshot::ideal(), &RewardWeights::default(), RewardMode::default()).unwrap();
        assert!((b.total - 0.9).abs() < 1e-12);
    }

    #[test]
    fn weighted_sum_arithmetic() {
        // terms (1,1,0.5,1,1,1) with default weights -> 0.675
        let mut snap = RobotSnapshot::ideal();
        // ||p - T1||^2 = ln 2 makes the step term exactly 0.5
        snap.swing_foot_position = [(2.0f64).ln().sqrt(), 0.0, 0.0];
        let b = total_reward(&snap, &RewardWeights::default(), RewardMode::default()).unwrap();
        assert!((b.step - 0.5).abs() < 1e-12);
        assert!((b.total - 0.675).abs() < 1e-12);
    }

    #[test]
    fn bounded_terms_stay_in_weight_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let weights = RewardWeights::default();
        for _ in 0..100_000 {
            let snap = random_snapshot(&mut rng);
            let b = total_reward(&snap, &weights, RewardMode::default()).unwrap();
            let alphas = [weights.force, weights.vel, weights.step, weights.orient, weights.height, weights.upper];
            for (w, a) in b.weighted().iter().zip(alphas) {
                assert!(*w >= 0.0 && *w <= a + 1e-15, "weighted term {w} outside [0, {a}]");
            }
            assert!(b.total >= 0.0 && b.total <= 0.9 + 1e-12);
        }
    }

    #[test]
    fn raw_and_bounded_share_argmax() {
        // parameterized family: scale an error direction; both modes peak at zero error
        let mut best_bounded = (f64::NEG_INFINITY, -1.0);
        let mut best_raw = (f64::NEG_INFINITY, -1.0);
        for i in 0..41 {
            let e = -1.0 + i as f64 * 0.05;
            let mut snap = RobotSnapshot::ideal();
            snap.foot_force = vec![e, 0.0, 0.0];
            snap.swing_foot_velocity = [0.0, e, 0.0];
            snap.swing_foot_position = [e, 0.0, 0.0];
            let wb = total_reward(&snap, &RewardWeights::default(), RewardMode::default()).unwrap();
            let wr = total_reward(&snap, &RewardWeights::default(), RewardMode::Raw).unwrap();
            if wb.total > best_bounded.0 {
                best_bounded = (wb.total, e);
            }
            if wr.total > best_raw.0 {
                best_raw = (wr.total, e);
            }
        }
        assert_eq!(best_bounded.1, 0.0);
        assert_eq!(best_raw.1, 0.0);
    }

    proptest! {
        #[test]
        fn decomposition_consistency(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let snap = random_snapshot(&mut rng);
            let w = RewardWeights::default();
            let b = total_reward(&snap, &w, RewardMode::default()).unwrap();
            let dotp: f64 = b
                .terms()
                .iter()
                .zip([w.force, w.vel, w.step, w.orient, w.height, w.upper])
                .map(|(t, a)| t * a)
                .sum();
            prop_assert!((b.total - dotp).abs() < 1e-12);
        }

        #[test]
        fn orient_sign_invariance(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let snap = random_snapshot(&mut rng);
            let mut flipped = snap.clone();
            for v in flipped.root_quat.iter_mut() {
                *v = -*v;
            }
            let a = posture_terms(&snap).unwrap().0;
            let b = posture_terms(&flipped).unwrap().0;
            prop_assert_eq!(a, b);
        }

        #[test]
        fn height_monotone(d1 in 0.0f64..1.0, extra in 1e-6f64..1.0) {
            let mut snap = RobotSnapshot::ideal();
            snap.root_height = snap.nominal_height + d1;
            let a = posture_terms(&snap).unwrap().1;
            snap.root_height = snap.nominal_height + d1 + extra;
            let b = posture_terms(&snap).unwrap().1;
            prop_assert!(b < a);
        }
    }
}
