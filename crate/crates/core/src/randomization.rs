//! Domain randomization and the performance-based curriculum.
//!
//! Config keys are the table row names verbatim, e.g.
//! `"Min & max motor strength" = [0.5, 1.5]`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-step probability of resampling each physical parameter.
pub const RESAMPLE_PROBABILITY: f64 = 0.002;
/// Curriculum increment per episode.
pub const CURRICULUM_STEP: f64 = 0.01;
/// Episodes with mean xy tracking error below this count as successes.
pub const TRACKING_ERROR_THRESHOLD: f64 = 0.4;
/// Standard gravity; the gravity row is read as an offset whose midpoint
/// maps to this value.
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationRanges {
    #[serde(rename = "Max action delay")]
    pub max_action_delay: f64,
    #[serde(rename = "Chance for action delay")]
    pub action_delay_chance: f64,
    #[serde(rename = "Min & max motor strength")]
    pub motor_strength: (f64, f64),
    #[serde(rename = "Min & max P gain factor")]
    pub p_gain_factor: (f64, f64),
    #[serde(rename = "Min & max D gain factor")]
    pub d_gain_factor: (f64, f64),
    #[serde(rename = "Min & max joint position offset")]
    pub joint_position_offset: (f64, f64),
    #[serde(rename = "Min & max starting orientation factor")]
    pub starting_orientation_factor: (f64, f64),
    #[serde(rename = "Min & max starting joint position factor")]
    pub starting_joint_position_factor: (f64, f64),
    #[serde(rename = "Min & max starting joint velocity factor")]
    pub starting_joint_velocity_factor: (f64, f64),
    #[serde(rename = "Min & max starting linear velocity")]
    pub starting_linear_velocity: (f64, f64),
    #[serde(rename = "Min & max starting angular velocity")]
    pub starting_angular_velocity: (f64, f64),
    #[serde(rename = "Joint position noise")]
    pub joint_position_noise: f64,
    #[serde(rename = "Joint velocity noise")]
    pub joint_velocity_noise: f64,
    #[serde(rename = "Angular velocity noise")]
    pub angular_velocity_noise: f64,
    #[serde(rename = "Gravity velocity noise")]
    pub gravity_noise: f64,
    #[serde(rename = "Joint observation dropout chance")]
    pub dropout_chance: f64,
    #[serde(rename = "Min & max static friction")]
    pub static_friction: (f64, f64),
    #[serde(rename = "Min & max dynamic friction")]
    pub dynamic_friction: (f64, f64),
    #[serde(rename = "Min & max restitution")]
    pub restitution: (f64, f64),
    #[serde(rename = "Min & max added mass")]
    pub added_mass: (f64, f64),
    #[serde(rename = "Min & max gravity")]
    pub gravity: (f64, f64),
    #[serde(rename = "Min & max joint friction")]
    pub joint_friction: (f64, f64),
    #[serde(rename = "Min & max joint armature")]
    pub joint_armature: (f64, f64),
    #[serde(rename = "Min & max pushes in x")]
    pub push_x: (f64, f64),
    #[serde(rename = "Min & max pushes in y")]
    pub push_y: (f64, f64),
    #[serde(rename = "Min & max pushes in z")]
    pub push_z: (f64, f64),
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self::reference()
    }
}

impl RandomizationRanges {
    /// Final ranges, reached at curriculum coefficient 1.
    pub fn reference() -> Self {
        RandomizationRanges {
            max_action_delay: 1.0,
            action_delay_chance: 0.05,
            motor_strength: (0.5, 1.5),
            p_gain_factor: (0.5, 1.5),
            d_gain_factor: (0.5, 1.5),
            joint_position_offset: (-0.05, 0.05),
            starting_orientation_factor: (-0.0625, 0.0625),
            starting_joint_position_factor: (-0.5, 0.5),
            starting_joint_velocity_factor: (-0.5, 0.5),
            starting_linear_velocity: (-0.5, 0.5),
            starting_angular_velocity: (-0.5, 0.5),
            joint_position_noise: 0.01,
            joint_velocity_noise: 1.5,
            angular_velocity_noise: 0.2,
            gravity_noise: 0.05,
            dropout_chance: 0.05,
            static_friction: (0.05, 2.0),
            dynamic_friction: (0.05, 1.5),
            restitution: (0.0, 1.0),
            added_mass: (-2.0, 2.0),
            gravity: (-8.81, 10.81),
            joint_friction: (0.0, 0.01),
            joint_armature: (0.0, 0.01),
            push_x: (-1.0, 1.0),
            push_y: (-1.0, 1.0),
            push_z: (-1.0, 1.0),
        }
    }

    fn pairs_mut(&mut self) -> [&mut (f64, f64); 19] {
        [
            &mut self.motor_strength,
            &mut self.p_gain_factor,
            &mut self.d_gain_factor,
            &mut self.joint_position_offset,
            &mut self.starting_orientation_factor,
            &mut self.starting_joint_position_factor,
            &mut self.starting_joint_velocity_factor,
            &mut self.starting_linear_velocity,
            &mut self.starting_angular_velocity,
            &mut self.static_friction,
            &mut self.dynamic_friction,
            &mut self.restitution,
            &mut self.added_mass,
            &mut self.gravity,
            &mut self.joint_friction,
            &mut self.joint_armature,
            &mut self.push_x,
            &mut self.push_y,
            &mut self.push_z,
        ]
    }

    fn scalars_mut(&mut self) -> [&mut f64; 6] {
        [
            &mut self.action_delay_chance,
            &mut self.joint_position_noise,
            &mut self.joint_velocity_noise,
            &mut self.angular_velocity_noise,
            &mut self.gravity_noise,
            &mut self.dropout_chance,
        ]
    }

    pub fn check(&self) -> Result<()> {
        let mut c = self.clone();
        if c.pairs_mut().iter().any(|p| !(p.0 <= p.1) || !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::Config("every range needs finite min <= max".into()));
        }
        if [self.action_delay_chance, self.dropout_chance].iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if c.scalars_mut().iter().any(|v| !(**v >= 0.0)) || self.max_action_delay < 0.0 {
            return Err(Error::Config("noise magnitudes must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let r: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        r.check()?;
        Ok(r)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("ranges serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Ranges at curriculum coefficient `k`: pairs shrink linearly toward
/// their midpoint, noise magnitudes and chances scale by `k`. The maximum
/// action delay is a step count and is not scaled.
pub fn scaled_ranges(base: &RandomizationRanges, k: f64) -> Result<RandomizationRanges> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::InvalidCurriculum(k));
    }
    if k == 1.0 {
        return Ok(base.clone());
    }
    let mut r = base.clone();
    for p in r.pairs_mut() {
        let m = 0.5 * (p.0 + p.1);
        *p = (m + k * (p.0 - m), m + k * (p.1 - m));
    }
    for v in r.scalars_mut() {
        *v *= k;
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CurriculumState {
    /// Coefficient in hundredths, so 100 increments reach 1 exactly.
    pub level: u32,
    pub successes: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub fell: bool,
    pub mean_xy_tracking_error: f64,
}

impl CurriculumState {
    pub const MAX_LEVEL: u32 = 100;

    pub fn with_coefficient(k: f64) -> Self {
        let level = (k.clamp(0.0, 1.0) / CURRICULUM_STEP).round() as u32;
        CurriculumState { level, ..Default::default() }
    }

    pub fn k(&self) -> f64 {
        self.level as f64 / Self::MAX_LEVEL as f64
    }
}

/// +0.01 after a successful episode, -0.01 otherwise, clamped to [0, 1].
pub fn update_curriculum(s: CurriculumState, ep: EpisodeOutcome) -> CurriculumState {
    let mut out = s;
    if !ep.fell && ep.mean_xy_tracking_error < TRACKING_ERROR_THRESHOLD {
        out.level = (s.level + 1).min(CurriculumState::MAX_LEVEL);
        out.successes += 1;
    } else {
        out.level = s.level.saturating_sub(1);
        out.failures += 1;
    }
    out
}

/// Physical parameters resampled during an episode.
pub const PHYSICAL_PARAMETERS: [&str; 12] = [
    "motor_strength",
    "p_gain_factor",
    "d_gain_factor",
    "joint_position_offset",
    "static_friction",
    "dynamic_friction",
    "restitution",
    "added_mass",
    "gravity",
    "joint_friction",
    "joint_armature",
    "push",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalParams {
    pub motor_strength: f64,
    pub p_gain_factor: f64,
    pub d_gain_factor: f64,
    pub joint_position_offset: Vec<f64>,
    pub static_friction: f64,
    pub dynamic_friction: f64,
    pub restitution: f64,
    pub added_mass: f64,
    /// Effective gravity magnitude, m/s².
    pub gravity: f64,
    pub joint_friction: Vec<f64>,
    pub joint_armature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartDraw {
    /// Roll and pitch, rad.
    pub orientation: [f64; 2],
    pub joint_position_factor: Vec<f64>,
    pub joint_velocity_factor: Vec<f64>,
    pub linear_velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDraw {
    pub joint_position_noise: Vec<f64>,
    pub joint_velocity_noise: Vec<f64>,
    pub angular_velocity_noise: [f64; 3],
    pub gravity_noise: [f64; 3],
    pub dropout: Vec<bool>,
    pub action_delayed: bool,
    /// Which entries of `PHYSICAL_PARAMETERS` were resampled this step.
    pub resampled: [bool; 12],
    pub push: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    EpisodeStart,
    PerStep,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RandomizationDraw {
    EpisodeStart { physical: PhysicalParams, start: StartDraw },
    PerStep(StepDraw),
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn symmetric(rng: &mut impl Rng, v: f64) -> f64 {
    uniform(rng, (-v, v))
}

fn gravity_from(row: (f64, f64), sample: f64) -> f64 {
    STANDARD_GRAVITY + sample - 0.5 * (row.0 + row.1)
}

/// Samples already-scaled ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct Randomizer {
    pub ranges: RandomizationRanges,
    pub joints: usize,
}

impl Randomizer {
    pub fn new(base: &RandomizationRanges, k: f64, joints: usize) -> Result<Self> {
        Ok(Randomizer { ranges: scaled_ranges(base, k)?, joints })
    }

    fn draw_physical(&self, rng: &mut impl Rng, i: usize, p: &mut PhysicalParams) {
        let r = &self.ranges;
        match i {
            0 => p.motor_strength = uniform(rng, r.motor_strength),
            1 => p.p_gain_factor = uniform(rng, r.p_gain_factor),
            2 => p.d_gain_factor = uniform(rng, r.d_gain_factor),
            3 => p.joint_position_offset = (0..self.joints).map(|_| uniform(rng, r.joint_position_offset)).collect(),
            4 => p.static_friction = uniform(rng, r.static_friction),
            5 => p.dynamic_friction = uniform(rng, r.dynamic_friction),
            6 => p.restitution = uniform(rng, r.restitution),
            7 => p.added_mass = uniform(rng, r.added_mass),
            8 => p.gravity = gravity_from(r.gravity, uniform(rng, r.gravity)),
            9 => p.joint_friction = (0..self.joints).map(|_| uniform(rng, r.joint_friction)).collect(),
            10 => p.joint_armature = (0..self.joints).map(|_| uniform(rng, r.joint_armature)).collect(),
            _ => unreachable!("push is not a stored parameter"),
        }
    }

    fn push(&self, rng: &mut impl Rng) -> [f64; 3] {
        let r = &self.ranges;
        [uniform(rng, r.push_x), uniform(rng, r.push_y), uniform(rng, r.push_z)]
    }

    pub fn episode_start(&self, rng: &mut impl Rng) -> (PhysicalParams, StartDraw) {
        let mut p = PhysicalParams {
            motor_strength: 1.0,
            p_gain_factor: 1.0,
            d_gain_factor: 1.0,
            joint_position_offset: vec![0.0; self.joints],
            static_friction: 1.0,
            dynamic_friction: 1.0,
            restitution: 0.0,
            added_mass: 0.0,
            gravity: STANDARD_GRAVITY,
            joint_friction: vec![0.0; self.joints],
            joint_armature: vec![0.0; self.joints],
        };
        for i in 0..PHYSICAL_PARAMETERS.len() - 1 {
            self.draw_physical(rng, i, &mut p);
        }
        let r = &self.ranges;
        let o = r.starting_orientation_factor;
        let start = StartDraw {
            orientation: [uniform(rng, o) * std::f64::consts::PI, uniform(rng, o) * std::f64::consts::PI],
            joint_position_factor: (0..self.joints).map(|_| uniform(rng, r.starting_joint_position_factor)).collect(),
            joint_velocity_factor: (0..self.joints).map(|_| uniform(rng, r.starting_joint_velocity_factor)).collect(),
            linear_velocity: [0; 3].map(|_| uniform(rng, r.starting_linear_velocity)),
            angular_velocity: [0; 3].map(|_| uniform(rng, r.starting_angular_velocity)),
        };
        (p, start)
    }

    /// Observation noise, dropout and delay, plus independent resampling of
    /// every physical parameter with probability 0.002.
    pub fn step(&self, p: &mut PhysicalParams, rng: &mut impl Rng) -> StepDraw {
        let r = &self.ranges;
        let joint_position_noise = (0..self.joints).map(|_| symmetric(rng, r.joint_position_noise)).collect();
        let joint_velocity_noise = (0..self.joints).map(|_| symmetric(rng, r.joint_velocity_noise)).collect();
        let angular_velocity_noise = [0; 3].map(|_| symmetric(rng, r.angular_velocity_noise));
        let gravity_noise = [0; 3].map(|_| symmetric(rng, r.gravity_noise));
        let dropout = (0..self.joints).map(|_| rng.random_bool(r.dropout_chance)).collect();
        let action_delayed = r.max_action_delay >= 1.0 && rng.random_bool(r.action_delay_chance);
        let mut resampled = [false; 12];
        let mut push = None;
        for (i, flag) in resampled.iter_mut().enumerate() {
            if rng.random_bool(RESAMPLE_PROBABILITY) {
                *flag = true;
                if i == PHYSICAL_PARAMETERS.len() - 1 {
                    push = Some(self.push(rng));
                } else {
                    self.draw_physical(rng, i, p);
                }
            }
        }
        StepDraw {
            joint_position_noise,
            joint_velocity_noise,
            angular_velocity_noise,
            gravity_noise,
            dropout,
            action_delayed,
            resampled,
            push,
        }
    }
}

/// One-call sampler. `current` receives in-place resampling in the
/// per-step phase and is replaced at episode start.
pub fn sample_randomization(
    ranges: &RandomizationRanges,
    k: f64,
    joints: usize,
    rng: &mut impl Rng,
    phase: Phase,
    current: &mut Option<PhysicalParams>,
) -> Result<RandomizationDraw> {
    let r = Randomizer::new(ranges, k, joints)?;
    Ok(match (phase, current.as_mut()) {
        (Phase::PerStep, Some(p)) => RandomizationDraw::PerStep(r.step(p, rng)),
        _ => {
            let (physical, start) = r.episode_start(rng);
            *current = Some(physical.clone());
            RandomizationDraw::EpisodeStart { physical, start }
        }
    })
}
