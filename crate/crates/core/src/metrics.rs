//! Post-hoc evaluation metrics: torque statistics, energy and power
//! economy, and learning-curve statistics, all computed from trajectory
//! logs and per-seed training curves.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

use crate::reward::RewardBreakdown;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty log")]
    EmptyLog,
    #[error("log spans zero duration")]
    ZeroDuration,
    #[error("records disagree on joint count")]
    RaggedRecords,
    #[error("curves have mismatched sample axes")]
    MismatchedAxes,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad record: {0}")]
    BadRecord(#[from] serde_json::Error),
}

/// One policy step of a trajectory log (JSONL, one record per line).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryRecord {
    /// Seconds since episode start.
    pub time: f64,
    pub joint_pos: Vec<f64>,
    pub joint_vel: Vec<f64>,
    /// Applied torque per joint (substep mean), N·m.
    pub torque: Vec<f64>,
    /// Ground reaction per foot, flattened [lx, lz, rx, rz], newtons.
    pub foot_force: Vec<f64>,
    pub reward: RewardBreakdown,
    pub phase: f64,
    pub window_index: usize,
    pub root_x: f64,
    pub root_z: f64,
    /// World sole-center positions, flattened [lx, lz, rx, rz], meters.
    #[serde(default)]
    pub foot_pos: Vec<f64>,
}

pub fn write_jsonl<W: Write>(w: &mut W, records: &[TrajectoryRecord]) -> Result<(), MetricsError> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TrajectoryRecord>, MetricsError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointTorqueStats {
    pub mean_abs: f64,
    pub std: f64,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TorqueStats {
    pub per_joint: Vec<JointTorqueStats>,
    /// Averages of the per-joint statistics.
    pub total_mean_abs: f64,
    pub total_std: f64,
    pub total_peak: f64,
}

/// Per-joint mean absolute torque, population standard deviation of |τ|,
/// and peak |τ|.
pub fn torque_stats(records: &[TrajectoryRecord]) -> Result<TorqueStats, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let joints = records[0].torque.len();
    if records.iter().any(|r| r.torque.len() != joints) {
        return Err(MetricsError::RaggedRecords);
    }
    let n = records.len() as f64;
    let mut per_joint = Vec::with_capacity(joints);
    for j in 0..joints {
        let abs: Vec<f64> = records.iter().map(|r| r.torque[j].abs()).collect();
        let mean = abs.iter().sum::<f64>() / n;
        let var = abs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let peak = abs.iter().cloned().fold(0.0, f64::max);
        per_joint.push(JointTorqueStats {
            mean_abs: mean,
            std: var.sqrt(),
            peak,
        });
    }
    let k = joints as f64;
    Ok(TorqueStats {
        total_mean_abs: per_joint.iter().map(|s| s.mean_abs).sum::<f64>() / k,
        total_std: per_joint.iter().map(|s| s.std).sum::<f64>() / k,
        total_peak: per_joint.iter().map(|s| s.peak).fold(0.0, f64::max),
        per_joint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub average_power: f64,
    pub energy: f64,
    /// Horizontal root displacement, meters.
    pub distance: f64,
    /// Absent when the trajectory covers no distance (standing).
    pub joules_per_meter: Option<f64>,
    pub watts_per_kg: f64,
}

/// Instantaneous mechanical power, sum of |τ_i ω_i| (no regeneration
/// credit).
pub fn instant_power(torque: &[f64], omega: &[f64]) -> f64 {
    torque.iter().zip(omega).map(|(t, w)| (t * w).abs()).sum()
}

/// Trapezoidal energy integral and time-averaged power over the log;
/// distance is horizontal root displacement between the first and last
/// records.
pub fn energy_report(records: &[TrajectoryRecord], mass: f64) -> Result<EnergyReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let duration = records.last().unwrap().time - records[0].time;
    if records.len() < 2 || duration <= 0.0 {
        return Err(MetricsError::ZeroDuration);
    }
    let powers: Vec<f64> = records
        .iter()
        .map(|r| instant_power(&r.torque, &r.joint_vel))
        .collect();
    let mut energy = 0.0;
    for i in 1..records.len() {
        let dt = records[i].time - records[i - 1].time;
        energy += 0.5 * (powers[i] + powers[i - 1]) * dt;
    }
    let average_power = energy / duration;
    let distance = (records.last().unwrap().root_x - records[0].root_x).abs();
    let joules_per_meter = if distance > 1e-6 {
        Some(energy / distance)
    } else {
        None
    };
    Ok(EnergyReport {
        average_power,
        energy,
        distance,
        joules_per_meter,
        watts_per_kg: average_power / mass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningCurveStats {
    /// For each requested threshold, samples at the first crossing of the
    /// cross-seed mean curve, or None if never reached.
    pub samples_to_threshold: Vec<Option<usize>>,
    /// Mean over iterations of the cross-seed standard deviation.
    pub seed_deviation: f64,
    /// Variance of the mean curve over its final 10% of points.
    pub late_variance: f64,
    pub peak: f64,
    /// Mean of the mean curve over its final 10% of points.
    pub final_performance: f64,
}

/// Statistics over aligned per-seed learning curves. `samples[i]` is the
/// cumulative sample count at point i, shared by every seed; `curves[s][i]`
/// is seed s's metric value there.
pub fn curve_stats(
    samples: &[usize],
    curves: &[Vec<f64>],
    thresholds: &[f64],
) -> Result<LearningCurveStats, MetricsError> {
    if curves.is_empty() || samples.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    if curves.iter().any(|c| c.len() != samples.len()) {
        return Err(MetricsError::MismatchedAxes);
    }
    let n = samples.len();
    let seeds = curves.len() as f64;
    let mean_curve: Vec<f64> = (0..n)
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / seeds)
        .collect();
    let samples_to_threshold = thresholds
        .iter()
        .map(|th| {
            mean_curve
                .iter()
                .position(|v| v >= th)
                .map(|i| samples[i])
        })
        .collect();
    let seed_deviation = (0..n)
        .map(|i| {
            let m = mean_curve[i];
            (curves.iter().map(|c| (c[i] - m).powi(2)).sum::<f64>() / seeds).sqrt()
        })
        .sum::<f64>()
        / n as f64;
    let tail = n.div_ceil(10);
    let tail_slice = &mean_curve[n - tail..];
    let tail_mean = tail_slice.iter().sum::<f64>() / tail as f64;
    let late_variance =
        tail_slice.iter().map(|v| (v - tail_mean).powi(2)).sum::<f64>() / tail as f64;
    let peak = mean_curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(LearningCurveStats {
        samples_to_threshold,
        seed_deviation,
        late_variance,
        peak,
        final_performance: tail_mean,
    })
}
