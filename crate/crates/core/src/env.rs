//! Deterministic surrogate locomotion environment.
//!
//! Joints follow second-order PD dynamics integrated with semi-implicit
//! Euler at 200 Hz (4 substeps per 50 Hz control tick). The trunk uses a
//! reduced model instead of rigid-body contact:
//!
//! * a foot is in contact while it hangs no more than a small band above
//!   its nominal-pose height, measured in the levelled trunk frame;
//! * stance feet hold the trunk at the height where their mean extension
//!   is zero (stiff critically damped spring) and drag the trunk's planar
//!   and yaw velocity toward the negative of their own mean sweep;
//! * roll and pitch are restored toward level while the trunk's origin
//!   projects inside the stance-feet support box and tip over (inverted
//!   pendulum) when it falls outside;
//! * with no stance foot the trunk is ballistic under the sampled gravity.
//!
//! Joint gravity loads, foot slip, restitution and terrain are not
//! modelled. The standing pose is an exact equilibrium: zero actions from
//! the nominal configuration keep every state variable unchanged.

use std::io::{Read, Write};

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embodiment::{
    descriptor_of, ClassControlConstants, Embodiment, EmbodimentDescriptor, Kinematics, MorphologyClass, Shape,
};
use crate::error::{Error, Result};
use crate::randomization::{
    update_curriculum, CurriculumState, EpisodeOutcome, PhysicalParams, RandomizationRanges, Randomizer,
};
use crate::reward::{compute_reward, pd_target, RewardBreakdown, RewardCoefficients, TransitionRecord};
use crate::urma::{general_observation, ObservationBundle};

pub const CONTROL_DT: f64 = 0.02;
pub const SUBSTEPS: usize = 4;
pub const HORIZON: usize = 1000;
/// Steps of each episode used for expert demonstrations.
pub const COLLECTION_STEPS: usize = 600;
pub const FALL_ANGLE: f64 = 1.0;
pub const FALL_HEIGHT_FRACTION: f64 = 0.4;
/// Gains used by the joint-limit layer while a joint is out of bounds.
pub const LIMIT_LAYER_GAINS: (f64, f64) = (60.0, 1.0);

/// Reflected rotor inertia added to every joint, kg·m².
const ARMATURE: f64 = 0.02;
/// Contact band as a fraction of the nominal height.
const CONTACT_BAND: f64 = 0.05;
const HEIGHT_OMEGA: f64 = 20.0;
const LEVEL_OMEGA: f64 = 8.0;
const TRACTION_RATE: f64 = 20.0;
const MIN_SUPPORT: f64 = 0.01;

/// Projects a commanded target into restricted bounds and raises the gains
/// while the measured angle is outside them.
pub fn joint_limit_layer(target: f64, q: f64, bounds: (f64, f64), base: (f64, f64)) -> (f64, (f64, f64)) {
    let t = target.clamp(bounds.0, bounds.1);
    let gains = if q < bounds.0 || q > bounds.1 { LIMIT_LAYER_GAINS } else { base };
    (t, gains)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CommandMode {
    /// Uniform in the given (min, max) per axis, redrawn every `every` steps.
    Random { ranges: [(f64, f64); 3], every: usize },
    /// Piecewise-constant: command i applies from step `start_i` onwards.
    Schedule(Vec<(usize, [f64; 3])>),
}

impl CommandMode {
    pub fn training() -> Self {
        CommandMode::Random { ranges: [(-1.0, 1.0), (-0.5, 0.5), (-1.0, 1.0)], every: 500 }
    }

    pub fn fixed(c: [f64; 3]) -> Self {
        CommandMode::Schedule(vec![(0, c)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub horizon: usize,
    pub ranges: RandomizationRanges,
    pub commands: CommandMode,
    /// Optional restricted joint bounds for the joint-limit layer.
    pub restricted_limits: Option<Vec<(f64, f64)>>,
    /// Replaces the class PD gains and action scale.
    pub control: Option<ClassControlConstants>,
    /// Whether the environment updates its own curriculum at episode end.
    pub curriculum: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            horizon: HORIZON,
            ranges: RandomizationRanges::reference(),
            commands: CommandMode::training(),
            restricted_limits: None,
            control: None,
            curriculum: true,
        }
    }
}

/// Static per-embodiment quantities.
#[derive(Debug, Clone)]
pub struct Model {
    pub class: MorphologyClass,
    pub joints: usize,
    pub nominal: Vec<f64>,
    pub limits: Vec<(f64, f64)>,
    pub max_torque: Vec<f64>,
    pub max_velocity: Vec<f64>,
    pub inertia: Vec<f64>,
    pub control: ClassControlConstants,
    pub descriptor: EmbodimentDescriptor,
    pub coefficients: RewardCoefficients,
    pub mass: f64,
    pub nominal_height: f64,
    kin: Kinematics,
    feet: Vec<usize>,
    foot_nominal: Vec<Vector3<f64>>,
    foot_half: Vec<(f64, f64)>,
    foot_radius: Vec<f64>,
    pub foot_pairs: Vec<(usize, usize)>,
    pub feet_y_target: Vec<f64>,
}

fn foot_extent(shape: &Shape) -> ((f64, f64), f64) {
    match *shape {
        Shape::Sphere { radius } => ((radius, radius), radius),
        Shape::Cylinder { length, radius } => ((radius, radius), 0.5 * length.min(2.0 * radius)),
        Shape::Box { length, width, height } => ((0.5 * length, 0.5 * width), 0.5 * length.min(width).min(height)),
    }
}

impl Model {
    pub fn new(e: &Embodiment, control: Option<ClassControlConstants>) -> Result<Self> {
        let control = control.unwrap_or_else(|| ClassControlConstants::for_class(e.class));
        let descriptor = descriptor_of(e, &control)?;
        let kin = Kinematics::new(e)?;
        let nominal = e.nominal_angles();
        let poses = kin.link_poses(&nominal);
        let actuated: Vec<usize> = e.actuated_joints();
        let frames = kin.joint_frames(&poses, e);
        let mut inertia = Vec::with_capacity(actuated.len());
        for &ji in &actuated {
            let child = e.link_index(&e.joints[ji].child_link).expect("validated");
            let (p, a) = frames[ji];
            let p = Vector3::from(p);
            let a = Vector3::from(a);
            let mut i = ARMATURE;
            for l in kin.subtree(child) {
                let c = kin.geometry_center(&poses, l).coords - p;
                let perp = c - a * a.dot(&c);
                i += kin.mass(l) * perp.norm_squared();
            }
            inertia.push(i);
        }
        let feet = e.feet();
        let foot_nominal: Vec<Vector3<f64>> = feet.iter().map(|&f| kin.geometry_bottom(&poses, f).coords).collect();
        let (foot_half, foot_radius): (Vec<_>, Vec<_>) = feet.iter().map(|&f| foot_extent(&e.links[f].shape)).unzip();
        // left feet (y > 0) paired with right feet in x order
        let mut left: Vec<usize> = (0..feet.len()).filter(|&i| foot_nominal[i].y > 1e-9).collect();
        let mut right: Vec<usize> = (0..feet.len()).filter(|&i| foot_nominal[i].y < -1e-9).collect();
        left.sort_by(|&a, &b| foot_nominal[b].x.total_cmp(&foot_nominal[a].x));
        right.sort_by(|&a, &b| foot_nominal[b].x.total_cmp(&foot_nominal[a].x));
        let foot_pairs: Vec<(usize, usize)> = left.into_iter().zip(right).collect();
        let feet_y_target = foot_pairs.iter().map(|&(l, r)| (foot_nominal[l].y - foot_nominal[r].y).abs()).collect();
        let joints: Vec<_> = actuated.iter().map(|&i| &e.joints[i]).collect();
        Ok(Model {
            class: e.class,
            joints: actuated.len(),
            nominal,
            limits: joints.iter().map(|j| j.limits).collect(),
            max_torque: joints.iter().map(|j| j.max_torque).collect(),
            max_velocity: joints.iter().map(|j| j.max_velocity).collect(),
            inertia,
            control,
            descriptor,
            coefficients: RewardCoefficients::for_class(e.class),
            mass: e.total_mass,
            nominal_height: e.nominal_height,
            kin,
            feet,
            foot_nominal,
            foot_half,
            foot_radius,
            foot_pairs,
            feet_y_target,
        })
    }

    pub fn feet(&self) -> usize {
        self.feet.len()
    }

    fn foot_points(&self, q: &[f64]) -> Vec<Vector3<f64>> {
        let poses = self.kin.link_poses(q);
        self.feet.iter().map(|&f| self.kin.geometry_bottom(&poses, f).coords).collect()
    }

    /// Width of the expert actor observation.
    pub fn expert_obs_len(&self) -> usize {
        3 * self.joints + 9
    }

    /// Width of the privileged critic observation.
    pub fn critic_obs_len(&self) -> usize {
        self.expert_obs_len() + 4 + 2 * self.feet()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub position: [f64; 2],
    pub yaw: f64,
    pub height: f64,
    pub roll: f64,
    pub pitch: f64,
    /// Planar velocity in the heading frame plus vertical velocity.
    pub lin_vel: [f64; 3],
    /// Roll, pitch and yaw rates.
    pub ang_vel: [f64; 3],
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub contact: Vec<bool>,
    pub air_time: Vec<f64>,
    pub step: usize,
    pub command: [f64; 3],
    pub physical: PhysicalParams,
    pub prev_action: Vec<f64>,
    pub prev_prev_action: Vec<f64>,
    pub applied_target: Vec<f64>,
    tracking_error_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: ObservationBundle,
    pub expert_obs: Vec<f64>,
    pub critic_obs: Vec<f64>,
    pub transition: TransitionRecord,
    pub reward: RewardBreakdown,
    pub done: bool,
    pub fell: bool,
    /// Set on the final step of an episode.
    pub outcome: Option<EpisodeOutcome>,
}

/// One environment instance with its own rng and curriculum.
#[derive(Debug, Clone)]
pub struct SurrogateEnv {
    pub model: std::sync::Arc<Model>,
    pub cfg: EnvConfig,
    pub curriculum: CurriculumState,
    pub state: EnvState,
    randomizer: Randomizer,
    rng: ChaCha8Rng,
    noisy_ang_vel: [f64; 3],
    noisy_gravity: [f64; 3],
    dropout: Vec<bool>,
    last_az: f64,
    obs: ObservationBundle,
}

fn rp_rotation(roll: f64, pitch: f64) -> Rotation3<f64> {
    Rotation3::from_euler_angles(roll, pitch, 0.0)
}

impl SurrogateEnv {
    pub fn new(e: &Embodiment, cfg: EnvConfig, seed: u64) -> Result<Self> {
        let model = std::sync::Arc::new(Model::new(e, cfg.control)?);
        Self::with_model(model, cfg, seed)
    }

    pub fn with_model(model: std::sync::Arc<Model>, cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.ranges.check()?;
        if let Some(r) = &cfg.restricted_limits {
            if r.len() != model.joints {
                return Err(Error::ShapeMismatch(format!("{} restricted bounds for {} joints", r.len(), model.joints)));
            }
        }
        let randomizer = Randomizer::new(&cfg.ranges, 0.0, model.joints)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (physical, _) = randomizer.episode_start(&mut rng);
        let j = model.joints;
        let f = model.feet();
        let state = EnvState {
            position: [0.0; 2],
            yaw: 0.0,
            height: model.nominal_height,
            roll: 0.0,
            pitch: 0.0,
            lin_vel: [0.0; 3],
            ang_vel: [0.0; 3],
            q: model.nominal.clone(),
            qd: vec![0.0; j],
            contact: vec![true; f],
            air_time: vec![0.0; f],
            step: 0,
            command: [0.0; 3],
            physical,
            prev_action: vec![0.0; j],
            prev_prev_action: vec![0.0; j],
            applied_target: model.nominal.clone(),
            tracking_error_sum: 0.0,
        };
        let obs = ObservationBundle { general: [0.0; 20], per_joint: vec![[0.0; 3]; j] };
        let mut env = SurrogateEnv {
            model,
            cfg,
            curriculum: CurriculumState::default(),
            state,
            randomizer,
            rng,
            noisy_ang_vel: [0.0; 3],
            noisy_gravity: [0.0, 0.0, -1.0],
            dropout: vec![false; j],
            last_az: 0.0,
            obs,
        };
        env.reset();
        Ok(env)
    }

    /// Starts a new episode at the current curriculum coefficient.
    pub fn reset(&mut self) -> ObservationBundle {
        let m = self.model.clone();
        let k = self.curriculum.k();
        self.randomizer = Randomizer::new(&self.cfg.ranges, k, m.joints).expect("k in [0, 1]");
        let (physical, start) = self.randomizer.episode_start(&mut self.rng);
        let s = &mut self.state;
        s.physical = physical;
        s.q = (0..m.joints)
            .map(|i| {
                let (lo, hi) = m.limits[i];
                (m.nominal[i] + start.joint_position_factor[i] * 0.5 * (hi - lo)).clamp(lo, hi)
            })
            .collect();
        s.qd = (0..m.joints).map(|i| start.joint_velocity_factor[i] * m.max_velocity[i]).collect();
        s.position = [0.0; 2];
        s.yaw = 0.0;
        s.height = m.nominal_height;
        s.roll = start.orientation[0];
        s.pitch = start.orientation[1];
        s.lin_vel = start.linear_velocity;
        s.ang_vel = start.angular_velocity;
        s.step = 0;
        s.prev_action = vec![0.0; m.joints];
        s.prev_prev_action = vec![0.0; m.joints];
        s.applied_target = m.nominal.clone();
        s.tracking_error_sum = 0.0;
        s.air_time = vec![0.0; m.feet()];
        self.last_az = 0.0;
        let pts = m.foot_points(&self.state.q);
        self.state.contact = self.contacts(&pts);
        self.state.command = self.command_at(0);
        let draw = self.randomizer.step(&mut self.state.physical.clone(), &mut self.rng);
        self.observe(&draw);
        self.obs.clone()
    }

    pub fn observation(&self) -> &ObservationBundle {
        &self.obs
    }

    fn command_at(&mut self, step: usize) -> [f64; 3] {
        match &self.cfg.commands {
            CommandMode::Random { ranges, every } => {
                if step % (*every).max(1) == 0 {
                    let r = *ranges;
                    r.map(|(lo, hi)| if lo < hi { self.rng.random_range(lo..hi) } else { lo })
                } else {
                    self.state.command
                }
            }
            CommandMode::Schedule(s) => s.iter().rev().find(|(t, _)| *t <= step).map_or([0.0; 3], |(_, c)| *c),
        }
    }

    fn contacts(&self, pts: &[Vector3<f64>]) -> Vec<bool> {
        let m = &self.model;
        let r = rp_rotation(self.state.roll, self.state.pitch);
        let band = CONTACT_BAND * m.nominal_height;
        pts.iter()
            .zip(&m.foot_nominal)
            .map(|(p, n)| self.state.height - m.nominal_height + (r * p).z - n.z < band)
            .collect()
    }

    fn gravity_vector(&self) -> [f64; 3] {
        let g = Rotation3::from_euler_angles(self.state.roll, self.state.pitch, 0.0).inverse() * Vector3::new(0.0, 0.0, -1.0);
        [g.x, g.y, g.z]
    }

    fn observe(&mut self, draw: &crate::randomization::StepDraw) {
        let m = &self.model;
        let s = &self.state;
        let g = self.gravity_vector();
        self.noisy_gravity = [0, 1, 2].map(|i| g[i] + draw.gravity_noise[i]);
        self.noisy_ang_vel = [0, 1, 2].map(|i| s.ang_vel[i] + draw.angular_velocity_noise[i]);
        self.dropout.clone_from(&draw.dropout);
        let per_joint = (0..m.joints)
            .map(|i| {
                if draw.dropout[i] {
                    [0.0; 3]
                } else {
                    [
                        s.q[i] + s.physical.joint_position_offset[i] + draw.joint_position_noise[i],
                        s.qd[i] + draw.joint_velocity_noise[i],
                        s.prev_action[i],
                    ]
                }
            })
            .collect();
        let general = general_observation(s.lin_vel, self.noisy_gravity, s.command, &m.descriptor.general);
        self.obs = ObservationBundle { general, per_joint };
    }

    /// Actor input of the per-embodiment expert.
    pub fn expert_observation(&self) -> Vec<f64> {
        let m = &self.model;
        let mut o = Vec::with_capacity(m.expert_obs_len());
        for (i, r) in self.obs.per_joint.iter().enumerate() {
            o.push(if self.dropout[i] { 0.0 } else { r[0] - m.nominal[i] });
            o.push(0.1 * r[1]);
            o.push(r[2]);
        }
        o.extend_from_slice(&self.noisy_ang_vel);
        o.extend_from_slice(&self.noisy_gravity);
        o.extend_from_slice(&self.state.command);
        o
    }

    /// Actor input plus trunk linear velocity, height, contacts and air times.
    pub fn critic_observation(&self) -> Vec<f64> {
        let s = &self.state;
        let mut o = self.expert_observation();
        o.extend_from_slice(&s.lin_vel);
        o.push(s.height - self.model.nominal_height);
        o.extend(s.contact.iter().map(|&c| if c { 1.0 } else { 0.0 }));
        o.extend_from_slice(&s.air_time);
        o
    }

    /// Advances one control tick with the raw policy action.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let m = self.model.clone();
        if action.len() != m.joints {
            return Err(Error::ShapeMismatch(format!("{} actions for {} joints", action.len(), m.joints)));
        }
        let k = self.curriculum.k();
        let mut physical = self.state.physical.clone();
        let draw = self.randomizer.step(&mut physical, &mut self.rng);
        self.state.physical = physical;
        let target = if draw.action_delayed {
            self.state.applied_target.clone()
        } else {
            pd_target(&m.nominal, m.control.action_scale, action)?
        };
        self.state.applied_target = target.clone();
        if let Some(p) = draw.push {
            for i in 0..3 {
                self.state.lin_vel[i] += p[i];
            }
        }

        let qd_before = self.state.qd.clone();
        let torque = self.integrate(&target);
        let s = &mut self.state;
        if s.q.iter().chain(&s.qd).chain(&[s.height, s.roll, s.pitch]).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState);
        }

        // contacts and air times at tick resolution
        let pts = m.foot_points(&self.state.q);
        let contact = self.contacts(&pts);
        let s = &mut self.state;
        let mut touchdown = vec![false; m.feet()];
        let mut air = vec![0.0; m.feet()];
        for f in 0..m.feet() {
            if contact[f] {
                touchdown[f] = !s.contact[f];
                air[f] = s.air_time[f];
                s.air_time[f] = 0.0;
            } else {
                s.air_time[f] += CONTROL_DT;
                air[f] = s.air_time[f];
            }
        }
        s.contact = contact;
        let n_stance = s.contact.iter().filter(|&&c| c).count();
        let g = s.physical.gravity;
        let static_share = m.mass * g / m.feet().max(1) as f64;
        let az = self.last_az;
        let foot_force = s
            .contact
            .iter()
            .map(|&c| if c { (m.mass * (g + az) / n_stance as f64 - static_share).max(0.0) } else { 0.0 })
            .collect();
        let r = rp_rotation(s.roll, s.pitch);
        let foot_y: Vec<f64> = pts.iter().map(|p| (r * p).y).collect();
        let self_collision = (0..m.feet()).any(|a| {
            (a + 1..m.feet()).any(|b| {
                let d = (pts[a] - pts[b]).xy().norm();
                d < m.foot_radius[a] + m.foot_radius[b]
            })
        });

        s.step += 1;
        let qdd = s.qd.iter().zip(&qd_before).map(|(a, b)| (a - b) / CONTROL_DT).collect();
        let transition = TransitionRecord {
            lin_vel: s.lin_vel,
            ang_vel: s.ang_vel,
            roll: s.roll,
            pitch: s.pitch,
            height: s.height,
            nominal_height: m.nominal_height,
            q: s.q.clone(),
            qd: s.qd.clone(),
            qdd,
            torque,
            limits: m.limits.clone(),
            max_velocity: m.max_velocity.clone(),
            nominal: m.nominal.clone(),
            action: action.to_vec(),
            prev_action: s.prev_action.clone(),
            prev_prev_action: s.prev_prev_action.clone(),
            contact: s.contact.clone(),
            touchdown,
            air_time: air,
            foot_force,
            foot_y,
            foot_pairs: m.foot_pairs.clone(),
            feet_y_target: m.feet_y_target.clone(),
            self_collision,
            command: s.command,
        };
        let reward = compute_reward(&transition, &m.coefficients, k)?;
        let dx = s.lin_vel[0] - s.command[0];
        let dy = s.lin_vel[1] - s.command[1];
        s.tracking_error_sum += (dx * dx + dy * dy).sqrt();
        s.prev_prev_action = std::mem::replace(&mut s.prev_action, action.to_vec());
        let fell = s.roll.abs() > FALL_ANGLE
            || s.pitch.abs() > FALL_ANGLE
            || s.height < FALL_HEIGHT_FRACTION * m.nominal_height;
        let done = fell || s.step >= self.cfg.horizon;
        let outcome = done.then(|| EpisodeOutcome {
            fell,
            mean_xy_tracking_error: s.tracking_error_sum / s.step as f64,
        });
        if let Some(o) = outcome {
            if self.cfg.curriculum {
                self.curriculum = update_curriculum(self.curriculum, o);
            }
        } else {
            let step = self.state.step;
            self.state.command = self.command_at(step);
        }
        self.observe(&draw);
        Ok(StepResult {
            obs: self.obs.clone(),
            expert_obs: self.expert_observation(),
            critic_obs: self.critic_observation(),
            transition,
            reward,
            done,
            fell,
            outcome,
        })
    }

    /// Runs the substeps toward `target`; returns the last applied torques.
    fn integrate(&mut self, target: &[f64]) -> Vec<f64> {
        let m = self.model.clone();
        let dt = CONTROL_DT / SUBSTEPS as f64;
        let mut torque = vec![0.0; m.joints];
        let mut prev_pts = m.foot_points(&self.state.q);
        for _ in 0..SUBSTEPS {
            let s = &mut self.state;
            let p = &s.physical;
            let base = (m.control.kp * p.p_gain_factor, m.control.kd * p.d_gain_factor);
            for i in 0..m.joints {
                let (t, (kp, kd)) = match &self.cfg.restricted_limits {
                    Some(r) => joint_limit_layer(target[i], s.q[i], r[i], base),
                    None => (target[i], base),
                };
                let tau = (p.motor_strength * (kp * (t - s.q[i]) - kd * s.qd[i])).clamp(-m.max_torque[i], m.max_torque[i]);
                torque[i] = tau;
                let friction = p.joint_friction[i] * s.qd[i].signum() * (s.qd[i] != 0.0) as u8 as f64;
                let inertia = m.inertia[i] + p.joint_armature[i];
                let (lo, hi) = m.limits[i];
                s.qd[i] = (s.qd[i] + dt * (tau - friction) / inertia).clamp(-m.max_velocity[i], m.max_velocity[i]);
                s.q[i] += dt * s.qd[i];
                if s.q[i] < lo || s.q[i] > hi {
                    s.q[i] = s.q[i].clamp(lo, hi);
                    s.qd[i] = 0.0;
                }
            }

            let pts = m.foot_points(&s.q);
            let stance: Vec<usize> = {
                let c = self.contacts(&pts);
                (0..c.len()).filter(|&f| c[f]).collect()
            };
            let s = &mut self.state;
            let g = s.physical.gravity;
            let r = rp_rotation(s.roll, s.pitch);
            let (az, roll_dd, pitch_dd);
            if stance.is_empty() {
                az = -g;
                roll_dd = 0.0;
                pitch_dd = 0.0;
            } else {
                let n = stance.len() as f64;
                let lev: Vec<Vector3<f64>> = stance.iter().map(|&f| r * pts[f]).collect();
                let drop: f64 = stance.iter().zip(&lev).map(|(&f, p)| p.z - m.foot_nominal[f].z).sum::<f64>() / n;
                let h_target = m.nominal_height - drop;
                az = HEIGHT_OMEGA * HEIGHT_OMEGA * (h_target - s.height) - 2.0 * HEIGHT_OMEGA * s.lin_vel[2];

                let mut v_target = [0.0; 2];
                let mut w_target = 0.0;
                for (&f, p) in stance.iter().zip(&lev) {
                    let v = (r * (pts[f] - prev_pts[f])) / dt;
                    v_target[0] -= v.x / n;
                    v_target[1] -= v.y / n;
                    let rr = p.x * p.x + p.y * p.y;
                    if rr > 1e-6 {
                        w_target -= (p.x * v.y - p.y * v.x) / rr / n;
                    }
                }
                let load = m.mass / (m.mass + s.physical.added_mass).max(0.5 * m.mass);
                let rate = TRACTION_RATE * s.physical.static_friction.min(1.0) * load;
                let a = 1.0 - (-rate * dt).exp();
                s.lin_vel[0] += a * (v_target[0] - s.lin_vel[0]);
                s.lin_vel[1] += a * (v_target[1] - s.lin_vel[1]);
                s.ang_vel[2] += a * (w_target - s.ang_vel[2]);

                let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
                for (&f, p) in stance.iter().zip(&lev) {
                    let (hx, hy) = m.foot_half[f];
                    x0 = x0.min(p.x - hx.max(MIN_SUPPORT));
                    x1 = x1.max(p.x + hx.max(MIN_SUPPORT));
                    y0 = y0.min(p.y - hy.max(MIN_SUPPORT));
                    y1 = y1.max(p.y + hy.max(MIN_SUPPORT));
                }
                let dx = -(0.0f64).clamp(x0, x1);
                let dy = -(0.0f64).clamp(y0, y1);
                let tip = g / s.height.max(1e-3);
                pitch_dd = if dx == 0.0 {
                    -LEVEL_OMEGA * LEVEL_OMEGA * s.pitch - 2.0 * LEVEL_OMEGA * s.ang_vel[1]
                } else {
                    tip * dx
                };
                roll_dd = if dy == 0.0 {
                    -LEVEL_OMEGA * LEVEL_OMEGA * s.roll - 2.0 * LEVEL_OMEGA * s.ang_vel[0]
                } else {
                    -tip * dy
                };
            }
            s.lin_vel[2] += dt * az;
            s.height += dt * s.lin_vel[2];
            s.ang_vel[0] += dt * roll_dd;
            s.ang_vel[1] += dt * pitch_dd;
            s.roll += dt * s.ang_vel[0];
            s.pitch += dt * s.ang_vel[1];
            s.yaw += dt * s.ang_vel[2];
            let (sy, cy) = s.yaw.sin_cos();
            s.position[0] += dt * (cy * s.lin_vel[0] - sy * s.lin_vel[1]);
            s.position[1] += dt * (sy * s.lin_vel[0] + cy * s.lin_vel[1]);
            self.last_az = az;
            prev_pts = pts;
        }
        torque
    }
}

/// Trajectory dump container.
///
/// ```text
/// magic "XEMBTRAJ", version u32, then u32 counts J (joints), F (feet),
/// P (foot pairs), N (records); each record is f32 LE in this order:
///   lin_vel[3] ang_vel[3] roll pitch height nominal_height command[3]
///   self_collision
///   per joint: q qd qdd torque lo hi max_velocity nominal action
///              prev_action prev_prev_action
///   per foot:  contact touchdown air_time foot_force foot_y
///   per pair:  left right feet_y_target
/// ```
pub const TRAJECTORY_MAGIC: &[u8; 8] = b"XEMBTRAJ";

pub fn write_trajectory(w: &mut impl Write, records: &[TransitionRecord]) -> Result<()> {
    let first = records.first();
    let j = first.map_or(0, |r| r.q.len());
    let f = first.map_or(0, |r| r.contact.len());
    let p = first.map_or(0, |r| r.foot_pairs.len());
    w.write_all(TRAJECTORY_MAGIC)?;
    for v in [1u32, j as u32, f as u32, p as u32, records.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let b = |x: bool| if x { 1.0 } else { 0.0 };
    let mut buf: Vec<f64> = Vec::new();
    for r in records {
        if r.q.len() != j || r.contact.len() != f || r.foot_pairs.len() != p {
            return Err(Error::ShapeMismatch("records of one trajectory must share dimensions".into()));
        }
        buf.clear();
        buf.extend_from_slice(&r.lin_vel);
        buf.extend_from_slice(&r.ang_vel);
        buf.extend_from_slice(&[r.roll, r.pitch, r.height, r.nominal_height]);
        buf.extend_from_slice(&r.command);
        buf.push(b(r.self_collision));
        for i in 0..j {
            buf.extend_from_slice(&[
                r.q[i],
                r.qd[i],
                r.qdd[i],
                r.torque[i],
                r.limits[i].0,
                r.limits[i].1,
                r.max_velocity[i],
                r.nominal[i],
                r.action[i],
                r.prev_action[i],
                r.prev_prev_action[i],
            ]);
        }
        for i in 0..f {
            buf.extend_from_slice(&[b(r.contact[i]), b(r.touchdown[i]), r.air_time[i], r.foot_force[i], r.foot_y[i]]);
        }
        for (i, &(a, c)) in r.foot_pairs.iter().enumerate() {
            buf.extend_from_slice(&[a as f64, c as f64, r.feet_y_target[i]]);
        }
        let bytes: Vec<u8> = buf.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_trajectory(r: &mut impl Read) -> Result<Vec<TransitionRecord>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TRAJECTORY_MAGIC {
        return Err(Error::Format("not a trajectory file".into()));
    }
    let mut head = [0u32; 5];
    for h in &mut head {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *h = u32::from_le_bytes(b);
    }
    let [version, j, f, p, n] = head.map(|v| v as usize);
    if version != 1 {
        return Err(Error::Format(format!("unsupported trajectory version {version}")));
    }
    let width = 14 + 11 * j + 5 * f + 3 * p;
    let mut bytes = vec![0u8; width * 4];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut bytes)?;
        let v: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let jt = |i: usize, k: usize| v[14 + 11 * i + k];
        let ft = |i: usize, k: usize| v[14 + 11 * j + 5 * i + k];
        let pt = |i: usize, k: usize| v[14 + 11 * j + 5 * f + 3 * i + k];
        out.push(TransitionRecord {
            lin_vel: [v[0], v[1], v[2]],
            ang_vel: [v[3], v[4], v[5]],
            roll: v[6],
            pitch: v[7],
            height: v[8],
            nominal_height: v[9],
            command: [v[10], v[11], v[12]],
            self_collision: v[13] != 0.0,
            q: (0..j).map(|i| jt(i, 0)).collect(),
            qd: (0..j).map(|i| jt(i, 1)).collect(),
            qdd: (0..j).map(|i| jt(i, 2)).collect(),
            torque: (0..j).map(|i| jt(i, 3)).collect(),
            limits: (0..j).map(|i| (jt(i, 4), jt(i, 5))).collect(),
            max_velocity: (0..j).map(|i| jt(i, 6)).collect(),
            nominal: (0..j).map(|i| jt(i, 7)).collect(),
            action: (0..j).map(|i| jt(i, 8)).collect(),
            prev_action: (0..j).map(|i| jt(i, 9)).collect(),
            prev_prev_action: (0..j).map(|i| jt(i, 10)).collect(),
            contact: (0..f).map(|i| ft(i, 0) != 0.0).collect(),
            touchdown: (0..f).map(|i| ft(i, 1) != 0.0).collect(),
            air_time: (0..f).map(|i| ft(i, 2)).collect(),
            foot_force: (0..f).map(|i| ft(i, 3)).collect(),
            foot_y: (0..f).map(|i| ft(i, 4)).collect(),
            foot_pairs: (0..p).map(|i| (pt(i, 0) as usize, pt(i, 1) as usize)).collect(),
            feet_y_target: (0..p).map(|i| pt(i, 2)).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procgen::{build_embodiment, BaseUnitTable, VariationSpec};

    fn reference(class: MorphologyClass) -> Embodiment {
        build_embodiment(class, &VariationSpec::reference(class), &BaseUnitTable::reference(class)).unwrap()
    }

    fn still() -> EnvConfig {
        EnvConfig { commands: CommandMode::fixed([0.0; 3]), curriculum: false, ..Default::default() }
    }

    #[test]
    fn limit_layer_examples() {
        assert_eq!(joint_limit_layer(0.1, 0.0, (-0.5, 0.5), (20.0, 0.5)), (0.1, (20.0, 0.5)));
        assert_eq!(joint_limit_layer(0.9, 0.0, (-0.5, 0.5), (20.0, 0.5)).0, 0.5);
        assert_eq!(joint_limit_layer(0.0, -0.6, (-0.5, 0.5), (20.0, 0.5)).1, (60.0, 1.0));
    }

    #[test]
    fn zero_actions_stand_for_the_horizon() {
        for class in MorphologyClass::ALL {
            let e = reference(class);
            let mut env = SurrogateEnv::new(&e, still(), 1).unwrap();
            let start = env.state.clone();
            let zeros = vec![0.0; env.model.joints];
            let mut steps = 0;
            loop {
                let r = env.step(&zeros).unwrap();
                steps += 1;
                assert!(!r.fell, "{class:?} fell at {steps}");
                if r.done {
                    break;
                }
            }
            assert_eq!(steps, HORIZON);
            assert_eq!(env.state.q, start.q);
            assert_eq!(env.state.height, start.height);
            assert!(env.state.contact.iter().all(|&c| c));
        }
    }

    #[test]
    fn standing_reward_is_tracking_only() {
        let e = reference(MorphologyClass::Quadruped);
        let mut env = SurrogateEnv::new(&e, still(), 1).unwrap();
        env.curriculum = CurriculumState::with_coefficient(1.0);
        let r = env.step(&[0.0; 12]).unwrap();
        assert_eq!(r.reward.total, 3.0);
    }

    #[test]
    fn torque_is_clipped() {
        let e = reference(MorphologyClass::Quadruped);
        let mut env = SurrogateEnv::new(&e, still(), 1).unwrap();
        let knee = e.actuated_joints().iter().position(|&j| e.joints[j].is_knee()).unwrap();
        let mut a = vec![0.0; 12];
        a[knee] = 100.0;
        let r = env.step(&a).unwrap();
        assert_eq!(r.transition.torque[knee], 45.43);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let e = reference(MorphologyClass::Hexapod);
        let run = || {
            let mut env = SurrogateEnv::new(&e, EnvConfig::default(), 9).unwrap();
            env.curriculum = CurriculumState::with_coefficient(1.0);
            env.reset();
            let mut out = Vec::new();
            for t in 0..200 {
                let a: Vec<f64> = (0..env.model.joints).map(|i| ((t * 7 + i) as f64 * 0.37).sin()).collect();
                let r = env.step(&a).unwrap();
                out.push(r.transition);
                if r.done {
                    env.reset();
                }
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn trajectory_round_trip() {
        let e = reference(MorphologyClass::Humanoid);
        let mut env = SurrogateEnv::new(&e, EnvConfig::default(), 2).unwrap();
        let recs: Vec<TransitionRecord> =
            (0..5).map(|t| env.step(&vec![0.1 * t as f64; env.model.joints]).unwrap().transition).collect();
        let mut bytes = Vec::new();
        write_trajectory(&mut bytes, &recs).unwrap();
        let back = read_trajectory(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(b.q, a.q.iter().map(|&v| v as f32 as f64).collect::<Vec<_>>());
            assert_eq!(b.contact, a.contact);
            assert_eq!(b.foot_pairs, a.foot_pairs);
        }
    }
}
