//! Planar rigid-body tree dynamics in the sagittal (x, z) plane.
//!
//! A model is a tree of links connected by revolute joints about the y axis.
//! The root link is either welded to the world or floats with three degrees
//! of freedom (x, z, pitch); every other link adds one joint angle. Inverse
//! dynamics uses a recursive Newton-Euler sweep, the mass matrix comes from
//! inverse dynamics on unit acceleration vectors, and forward dynamics
//! solves the resulting symmetric positive definite system.

use crate::linalg::{solve_spd, Mat};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("link {child} lists parent {parent}, which is not an earlier link")]
    BadParent { child: usize, parent: usize },
    #[error("mass matrix is not positive definite")]
    NotPositiveDefinite,
}

/// One rigid link. `joint_offset` locates the joint in the parent link's
/// frame; `com` and `inertia` describe the link about its own frame origin
/// and center of mass respectively.
#[derive(Debug, Clone, Copy)]
pub struct Link {
    pub parent: usize,
    pub joint_offset: [f64; 2],
    pub mass: f64,
    pub com: [f64; 2],
    pub inertia: f64,
}

/// Kinematic tree. Link 0 is the root; links must be ordered so every
/// parent index precedes its children.
#[derive(Debug, Clone)]
pub struct PlanarModel {
    pub links: Vec<Link>,
    pub floating: bool,
    pub gravity: f64,
}

/// World-frame kinematic state of one link after a forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrameState {
    /// Joint/frame origin.
    pub origin: [f64; 2],
    pub angle: f64,
    pub lin_vel: [f64; 2],
    pub ang_vel: f64,
    /// Origin acceleration (includes the gravity offset during sweeps).
    pub lin_acc: [f64; 2],
    pub ang_acc: f64,
}

fn rot(angle: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Planar cross product of scalar angular rate with a vector: w x r.
fn wcross(w: f64, r: [f64; 2]) -> [f64; 2] {
    [-w * r[1], w * r[0]]
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

impl PlanarModel {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        for (i, link) in self.links.iter().enumerate().skip(1) {
            if link.parent >= i {
                return Err(DynamicsError::BadParent {
                    child: i,
                    parent: link.parent,
                });
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        let base = if self.floating { 3 } else { 0 };
        base + self.links.len().saturating_sub(1)
    }

    /// Degree-of-freedom index of link i's joint angle (i >= 1).
    fn joint_dof(&self, link: usize) -> usize {
        let base = if self.floating { 3 } else { 0 };
        base + link - 1
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    fn check_dim(&self, v: &[f64]) -> Result<(), DynamicsError> {
        if v.len() != self.dof() {
            return Err(DynamicsError::DimMismatch {
                expected: self.dof(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Positions, velocities and accelerations of every link frame.
    /// `gravity_shift` adds the fictitious upward base acceleration used by
    /// the Newton-Euler sweep; pass false for plain kinematics.
    fn sweep(
        &self,
        q: &[f64],
        qd: &[f64],
        qdd: &[f64],
        gravity_shift: bool,
    ) -> Vec<FrameState> {
        let n = self.links.len();
        let mut frames = vec![FrameState::default(); n];
        let g_acc = if gravity_shift { self.gravity } else { 0.0 };
        if self.floating {
            frames[0] = FrameState {
                origin: [q[0], q[1]],
                angle: q[2],
                lin_vel: [qd[0], qd[1]],
                ang_vel: qd[2],
                lin_acc: [qdd[0], qdd[1] + g_acc],
                ang_acc: qdd[2],
            };
        } else {
            frames[0] = FrameState {
                lin_acc: [0.0, g_acc],
                ..FrameState::default()
            };
        }
        for i in 1..n {
            let link = self.links[i];
            let p = frames[link.parent];
            let r = rot(p.angle, link.joint_offset);
            let dof = self.joint_dof(i);
            let w = p.ang_vel;
            frames[i] = FrameState {
                origin: [p.origin[0] + r[0], p.origin[1] + r[1]],
                angle: p.angle + q[dof],
                lin_vel: {
                    let wr = wcross(w, r);
                    [p.lin_vel[0] + wr[0], p.lin_vel[1] + wr[1]]
                },
                ang_vel: w + qd[dof],
                lin_acc: {
                    let awr = wcross(p.ang_acc, r);
                    [
                        p.lin_acc[0] + awr[0] - w * w * r[0],
                        p.lin_acc[1] + awr[1] - w * w * r[1],
                    ]
                },
                ang_acc: p.ang_acc + qdd[dof],
            };
        }
        frames
    }

    /// Plain forward kinematics (no gravity offset in accelerations).
    pub fn kinematics(&self, q: &[f64], qd: &[f64]) -> Result<Vec<FrameState>, DynamicsError> {
        self.check_dim(q)?;
        self.check_dim(qd)?;
        let zero = vec![0.0; self.dof()];
        Ok(self.sweep(q, qd, &zero, false))
    }

    /// World position of a point given in link i's frame.
    pub fn point_position(&self, frames: &[FrameState], link: usize, local: [f64; 2]) -> [f64; 2] {
        let f = frames[link];
        let r = rot(f.angle, local);
        [f.origin[0] + r[0], f.origin[1] + r[1]]
    }

    /// World velocity of a point given in link i's frame.
    pub fn point_velocity(&self, frames: &[FrameState], link: usize, local: [f64; 2]) -> [f64; 2] {
        let f = frames[link];
        let r = rot(f.angle, local);
        let wr = wcross(f.ang_vel, r);
        [f.lin_vel[0] + wr[0], f.lin_vel[1] + wr[1]]
    }

    /// Accumulates J^T f into `out` for a world-frame force applied at a
    /// point on link `link`.
    pub fn apply_point_force(
        &self,
        frames: &[FrameState],
        link: usize,
        local: [f64; 2],
        force: [f64; 2],
        out: &mut [f64],
    ) {
        let p = self.point_position(frames, link, local);
        if self.floating {
            out[0] += force[0];
            out[1] += force[1];
            let arm = [p[0] - frames[0].origin[0], p[1] - frames[0].origin[1]];
            out[2] += cross2(arm, force);
        }
        // walk up the chain: each revolute ancestor joint feels the moment
        // of the force about its axis
        let mut i = link;
        while i != 0 {
            let joint = frames[i].origin;
            let arm = [p[0] - joint[0], p[1] - joint[1]];
            out[self.joint_dof(i)] += cross2(arm, force);
            i = self.links[i].parent;
        }
    }

    /// Newton-Euler inverse dynamics: generalized forces realizing `qdd`
    /// from state (q, qd) under the model's gravity (scaled by
    /// `gravity_on`).
    pub fn inverse_dynamics(
        &self,
        q: &[f64],
        qd: &[f64],
        qdd: &[f64],
        gravity_on: bool,
    ) -> Result<Vec<f64>, DynamicsError> {
        self.check_dim(q)?;
        self.check_dim(qd)?;
        self.check_dim(qdd)?;
        let n = self.links.len();
        let frames = self.sweep(q, qd, qdd, gravity_on);

        // per-link net force at COM and moment about COM
        let mut force = vec![[0.0f64; 2]; n];
        let mut moment = vec![0.0f64; n];
        for i in 0..n {
            let link = self.links[i];
            let f = frames[i];
            let c = rot(f.angle, link.com);
            let awc = wcross(f.ang_acc, c);
            let acc_com = [
                f.lin_acc[0] + awc[0] - f.ang_vel * f.ang_vel * c[0],
                f.lin_acc[1] + awc[1] - f.ang_vel * f.ang_vel * c[1],
            ];
            force[i] = [link.mass * acc_com[0], link.mass * acc_com[1]];
            moment[i] = link.inertia * f.ang_acc;
        }

        // inward pass: f_acc is total force transmitted through link i's
        // joint, n_acc the moment about that joint
        let mut f_acc = force.clone();
        let mut n_acc: Vec<f64> = (0..n)
            .map(|i| {
                let c = rot(frames[i].angle, self.links[i].com);
                moment[i] + cross2(c, force[i])
            })
            .collect();
        for i in (1..n).rev() {
            let parent = self.links[i].parent;
            let r = [
                frames[i].origin[0] - frames[parent].origin[0],
                frames[i].origin[1] - frames[parent].origin[1],
            ];
            n_acc[parent] += n_acc[i] + cross2(r, f_acc[i]);
            f_acc[parent][0] += f_acc[i][0];
            f_acc[parent][1] += f_acc[i][1];
        }

        let mut tau = vec![0.0; self.dof()];
        if self.floating {
            tau[0] = f_acc[0][0];
            tau[1] = f_acc[0][1];
            tau[2] = n_acc[0];
        }
        for i in 1..n {
            tau[self.joint_dof(i)] = n_acc[i];
        }
        Ok(tau)
    }

    /// Joint-space mass matrix, column by column from inverse dynamics on
    /// unit accelerations at zero velocity and zero gravity.
    pub fn mass_matrix(&self, q: &[f64]) -> Result<Mat, DynamicsError> {
        self.check_dim(q)?;
        let n = self.dof();
        let zero = vec![0.0; n];
        let mut m = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.inverse_dynamics(q, &zero, &e, false)?;
            e[j] = 0.0;
            for i in 0..n {
                *m.at_mut(i, j) = col[i];
            }
        }
        Ok(m)
    }

    /// Velocity and gravity dependent generalized forces C(q, qd).
    pub fn bias_forces(&self, q: &[f64], qd: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let zero = vec![0.0; self.dof()];
        self.inverse_dynamics(q, qd, &zero, true)
    }

    /// Solves M(q) qdd = tau - C(q, qd) for the accelerations produced by
    /// the total applied generalized force `tau` (actuation plus contacts).
    pub fn forward_dynamics(&self, q: &[f64], qd: &[f64], tau: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        self.check_dim(tau)?;
        let m = self.mass_matrix(q)?;
        let bias = self.bias_forces(q, qd)?;
        let rhs: Vec<f64> = tau.iter().zip(&bias).map(|(t, c)| t - c).collect();
        solve_spd(&m, &rhs).ok_or(DynamicsError::NotPositiveDefinite)
    }

    /// Total mechanical energy (kinetic + gravitational potential).
    pub fn energy(&self, q: &[f64], qd: &[f64]) -> Result<f64, DynamicsError> {
        let frames = self.kinematics(q, qd)?;
        let mut e = 0.0;
        for (i, link) in self.links.iter().enumerate() {
            let f = frames[i];
            let c = rot(f.angle, link.com);
            let v = {
                let wc = wcross(f.ang_vel, c);
                [f.lin_vel[0] + wc[0], f.lin_vel[1] + wc[1]]
            };
            let com_z = f.origin[1] + c[1];
            e += 0.5 * link.mass * (v[0] * v[0] + v[1] * v[1])
                + 0.5 * link.inertia * f.ang_vel * f.ang_vel
                + link.mass * self.gravity * com_z;
        }
        Ok(e)
    }
}
