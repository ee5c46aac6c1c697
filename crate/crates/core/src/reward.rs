//! Locomotion reward terms T1..T18 and the PD target map.
//!
//! Tracking terms are positive; every penalty term is stored with its
//! negative sign, so `total = Σ coefficient_i · term_i` with penalty
//! coefficients pre-multiplied by the curriculum coefficient. Joint-based
//! terms (T6..T12) average over joints and feet-based terms (T14..T17)
//! average over feet, or over left/right foot pairs for T15 and T16.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embodiment::MorphologyClass;
use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;

pub const TERM_COUNT: usize = 18;

pub const TERM_NAMES: [&str; TERM_COUNT] = [
    "xy_velocity_tracking",
    "yaw_velocity_tracking",
    "z_velocity",
    "pitch_roll_velocity",
    "pitch_roll_position",
    "joint_nominal_difference",
    "joint_position_limits",
    "joint_velocity_limits",
    "joint_accelerations",
    "joint_torques",
    "action_rate",
    "action_smoothness",
    "walking_height",
    "air_time",
    "symmetry",
    "feet_y_distance",
    "feet_force",
    "self_collision",
];

/// Indices of the tracking terms; every other term is a penalty.
pub const TRACKING_TERMS: [usize; 2] = [0, 1];

const BASE_COEFFICIENTS: [f64; TERM_COUNT] =
    [2.0, 1.0, 2.0, 0.05, 5.0, 14.4, 120.0, 10.0, 5e-6, 2.4e-4, 0.12, 0.12, 30.0, 0.1, 0.5, 2.0, 8e-3, 1.0];

/// Swing duration rewarded by the air-time term, seconds.
pub const AIR_TIME_TARGET: f64 = 0.5;
/// Width of the tracking kernels.
pub const TRACKING_SIGMA_SQ: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardCoefficients(pub [f64; TERM_COUNT]);

impl RewardCoefficients {
    /// Table coefficients, with the four humanoid overrides.
    pub fn for_class(class: MorphologyClass) -> Self {
        let mut c = BASE_COEFFICIENTS;
        if class == MorphologyClass::Humanoid {
            c[0] = 3.0;
            c[1] = 1.5;
            c[5] = 43.2;
            c[16] = 6e-3;
        }
        RewardCoefficients(c)
    }

    pub fn is_penalty(i: usize) -> bool {
        !TRACKING_TERMS.contains(&i)
    }
}

/// Everything the reward needs from one control step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionRecord {
    pub lin_vel: [f64; 3],
    pub ang_vel: [f64; 3],
    pub roll: f64,
    pub pitch: f64,
    pub height: f64,
    pub nominal_height: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
    pub torque: Vec<f64>,
    pub limits: Vec<(f64, f64)>,
    pub max_velocity: Vec<f64>,
    pub nominal: Vec<f64>,
    pub action: Vec<f64>,
    pub prev_action: Vec<f64>,
    pub prev_prev_action: Vec<f64>,
    pub contact: Vec<bool>,
    /// Foot touched down during this step.
    pub touchdown: Vec<bool>,
    /// Length of the swing that ended at touchdown; current swing length
    /// otherwise.
    pub air_time: Vec<f64>,
    pub foot_force: Vec<f64>,
    pub foot_y: Vec<f64>,
    /// (left, right) foot index pairs.
    pub foot_pairs: Vec<(usize, usize)>,
    /// Target lateral separation per pair.
    pub feet_y_target: Vec<f64>,
    pub self_collision: bool,
    pub command: [f64; 3],
}

impl TransitionRecord {
    fn check(&self) -> Result<()> {
        let j = self.q.len();
        let joint_arrays = [
            self.qd.len(),
            self.qdd.len(),
            self.torque.len(),
            self.limits.len(),
            self.max_velocity.len(),
            self.nominal.len(),
            self.action.len(),
            self.prev_action.len(),
            self.prev_prev_action.len(),
        ];
        let f = self.contact.len();
        let foot_arrays = [self.touchdown.len(), self.air_time.len(), self.foot_force.len(), self.foot_y.len()];
        if joint_arrays.iter().any(|&n| n != j)
            || foot_arrays.iter().any(|&n| n != f)
            || self.feet_y_target.len() != self.foot_pairs.len()
            || self.foot_pairs.iter().any(|&(l, r)| l >= f || r >= f)
        {
            return Err(Error::ShapeMismatch("transition arrays disagree with joint or foot count".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardBreakdown {
    pub terms: [f64; TERM_COUNT],
    /// Coefficients after curriculum scaling.
    pub coefficients: [f64; TERM_COUNT],
    pub total: f64,
    pub curriculum: f64,
}

impl RewardBreakdown {
    pub fn contribution(&self, i: usize) -> f64 {
        self.coefficients[i] * self.terms[i]
    }

    /// Weighted tracking reward, the T1 + T2 part of the total.
    pub fn tracking(&self) -> f64 {
        TRACKING_TERMS.iter().map(|&i| self.contribution(i)).sum()
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// `q_nominal + σ·a`, elementwise.
pub fn pd_target(nominal: &[f64], scale: f64, action: &[f64]) -> Result<Vec<f64>> {
    if nominal.len() != action.len() {
        return Err(Error::ShapeMismatch(format!("{} nominal angles, {} actions", nominal.len(), action.len())));
    }
    Ok(nominal.iter().zip(action).map(|(n, a)| n + scale * a).collect())
}

/// Evaluates every term; penalties are weighted by `k`.
pub fn compute_reward(tr: &TransitionRecord, coeffs: &RewardCoefficients, k: f64) -> Result<RewardBreakdown> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::InvalidCurriculum(k));
    }
    tr.check()?;
    let joints = 0..tr.q.len();
    let mut t = [0.0; TERM_COUNT];
    let dx = tr.lin_vel[0] - tr.command[0];
    let dy = tr.lin_vel[1] - tr.command[1];
    t[0] = (-(dx * dx + dy * dy) / TRACKING_SIGMA_SQ).exp();
    let dyaw = tr.ang_vel[2] - tr.command[2];
    t[1] = (-(dyaw * dyaw) / TRACKING_SIGMA_SQ).exp();
    t[2] = -tr.lin_vel[2].powi(2);
    t[3] = -(tr.ang_vel[0].powi(2) + tr.ang_vel[1].powi(2));
    t[4] = -(tr.roll.powi(2) + tr.pitch.powi(2));
    t[5] = -mean(joints.clone().map(|i| (tr.q[i] - tr.nominal[i]).powi(2)));
    t[6] = -mean(joints.clone().map(|i| {
        let (lo, hi) = tr.limits[i];
        let margin = 0.05 * (hi - lo);
        indicator(tr.q[i] < lo + margin || tr.q[i] > hi - margin)
    }));
    t[7] = -mean(joints.clone().map(|i| indicator(tr.qd[i].abs() > 0.9 * tr.max_velocity[i])));
    t[8] = -mean(joints.clone().map(|i| tr.qdd[i].powi(2)));
    t[9] = -mean(joints.clone().map(|i| tr.torque[i].powi(2)));
    t[10] = -mean(joints.clone().map(|i| (tr.action[i] - tr.prev_action[i]).powi(2)));
    t[11] = -mean(joints.map(|i| (tr.action[i] - 2.0 * tr.prev_action[i] + tr.prev_prev_action[i]).powi(2)));
    t[12] = -(tr.height - tr.nominal_height).powi(2);
    let feet = 0..tr.contact.len();
    t[13] = -mean(feet.clone().map(|f| indicator(tr.touchdown[f]) * (tr.air_time[f] - AIR_TIME_TARGET)));
    t[14] = -mean(tr.foot_pairs.iter().map(|&(l, r)| indicator(!tr.contact[l]) * indicator(!tr.contact[r])));
    t[15] = -mean(
        tr.foot_pairs
            .iter()
            .zip(&tr.feet_y_target)
            .map(|(&(l, r), target)| ((tr.foot_y[l] - tr.foot_y[r]).abs() - target).powi(2)),
    );
    t[16] = -mean(feet.map(|f| tr.foot_force[f].powi(2)));
    t[17] = -indicator(tr.self_collision);

    let mut c = coeffs.0;
    for (i, ci) in c.iter_mut().enumerate() {
        if RewardCoefficients::is_penalty(i) {
            *ci *= k;
        }
    }
    let total = t.iter().zip(&c).map(|(a, b)| a * b).sum();
    Ok(RewardBreakdown { terms: t, coefficients: c, total, curriculum: k })
}

/// Writes `step,T1..T18,total` rows.
pub fn write_trace(w: &mut impl Write, rows: &[RewardBreakdown]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["step".to_string()];
    header.extend((1..=TERM_COUNT).map(|i| format!("T{i}")));
    header.push("total".into());
    out.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for (step, r) in rows.iter().enumerate() {
        let mut rec = vec![step.to_string()];
        rec.extend(r.terms.iter().map(|&v| fmt_f64(v)));
        rec.push(fmt_f64(r.total));
        out.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn standing(joints: usize) -> TransitionRecord {
        TransitionRecord {
            height: 0.3,
            nominal_height: 0.3,
            q: vec![0.5; joints],
            qd: vec![0.0; joints],
            qdd: vec![0.0; joints],
            torque: vec![0.0; joints],
            limits: vec![(-1.0, 1.0); joints],
            max_velocity: vec![10.0; joints],
            nominal: vec![0.5; joints],
            action: vec![0.0; joints],
            prev_action: vec![0.0; joints],
            prev_prev_action: vec![0.0; joints],
            contact: vec![true; 2],
            touchdown: vec![false; 2],
            air_time: vec![0.0; 2],
            foot_force: vec![0.0; 2],
            foot_y: vec![0.1, -0.1],
            foot_pairs: vec![(0, 1)],
            feet_y_target: vec![0.2],
            ..Default::default()
        }
    }

    #[test]
    fn pd_target_examples() {
        assert_eq!(pd_target(&[0.8, -1.5], 0.3, &[0.0, 0.0]).unwrap(), vec![0.8, -1.5]);
        assert!((pd_target(&[0.8], 0.3, &[1.0]).unwrap()[0] - 1.1).abs() < 1e-15);
        let h = crate::embodiment::ClassControlConstants::for_class(MorphologyClass::Humanoid);
        assert_eq!(pd_target(&[0.0], h.action_scale, &[1.0]).unwrap(), vec![0.75]);
        assert!(pd_target(&[0.0], 0.3, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn perfect_tracking_quadruped() {
        let c = RewardCoefficients::for_class(MorphologyClass::Quadruped);
        let r = compute_reward(&standing(12), &c, 1.0).unwrap();
        assert_eq!(r.contribution(0), 2.0);
        assert!((r.total - 3.0).abs() < 1e-12);
    }

    #[test]
    fn tracking_error_half_meter() {
        let c = RewardCoefficients::for_class(MorphologyClass::Quadruped);
        let mut tr = standing(3);
        tr.lin_vel = [0.3, 0.4, 0.0];
        let r = compute_reward(&tr, &c, 1.0).unwrap();
        assert!((r.terms[0] - (-1.0f64).exp()).abs() < 1e-12);
        assert!((r.contribution(0) - 0.735758882342885).abs() < 1e-12);
    }

    #[test]
    fn zero_curriculum_keeps_only_tracking() {
        let c = RewardCoefficients::for_class(MorphologyClass::Hexapod);
        let mut tr = standing(3);
        tr.lin_vel = [0.1, 0.0, 0.5];
        tr.torque = vec![10.0; 3];
        tr.self_collision = true;
        let r = compute_reward(&tr, &c, 0.0).unwrap();
        assert_eq!(r.total, r.tracking());
        assert!(compute_reward(&tr, &c, 1.0).unwrap().total < r.total);
        assert!(matches!(compute_reward(&tr, &c, 1.5), Err(Error::InvalidCurriculum(_))));
    }

    #[test]
    fn humanoid_overrides() {
        let h = RewardCoefficients::for_class(MorphologyClass::Humanoid).0;
        let q = RewardCoefficients::for_class(MorphologyClass::Quadruped).0;
        assert_eq!((h[0], h[1], h[5], h[16]), (3.0, 1.5, 43.2, 6e-3));
        assert_eq!((q[0], q[1], q[5], q[16]), (2.0, 1.0, 14.4, 8e-3));
        for i in [2, 3, 4, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 17] {
            assert_eq!(h[i], q[i]);
        }
    }

    #[test]
    fn doubling_joints_keeps_joint_terms() {
        let c = RewardCoefficients::for_class(MorphologyClass::Quadruped);
        let mut a = standing(3);
        a.q = vec![0.1, 0.95, -0.3];
        a.torque = vec![1.0, 2.0, 3.0];
        let mut b = a.clone();
        for v in [&mut b.q, &mut b.torque] {
            let dup = v.clone();
            v.extend(dup);
        }
        for v in [&mut b.qd, &mut b.qdd, &mut b.nominal, &mut b.action, &mut b.prev_action, &mut b.prev_prev_action] {
            let dup = v.clone();
            v.extend(dup);
        }
        b.max_velocity.extend(a.max_velocity.clone());
        b.limits.extend(a.limits.clone());
        let ra = compute_reward(&a, &c, 1.0).unwrap();
        let rb = compute_reward(&b, &c, 1.0).unwrap();
        for i in 5..12 {
            assert!((ra.terms[i] - rb.terms[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn trace_has_header_and_rows() {
        let c = RewardCoefficients::for_class(MorphologyClass::Quadruped);
        let r = compute_reward(&standing(2), &c, 0.5).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &[r.clone(), r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("step,T1,T2"));
        assert!(lines[0].ends_with("T18,total"));
    }
}
