//! Cross-embodiment locomotion toolkit: procedural legged-robot generation,
//! URDF I/O, a joint-attention policy network, PPO experts in a surrogate
//! environment, behavior-cloning distillation, and the scaling harness.

pub mod checkpoint;
pub mod distill;
pub mod embodiment;
pub mod env;
pub mod error;
pub mod harness;
pub mod latent;
pub mod nn;
pub mod numfmt;
pub mod ppo;
pub mod procgen;
pub mod randomization;
pub mod reward;
pub mod urdf;
pub mod urma;

pub use embodiment::{
    descriptor_of, nominal_configuration, validate, ClassControlConstants, Embodiment,
    EmbodimentDescriptor, GeneralDescriptor, JointDescriptor, JointKind, JointSpec, LinkSpec,
    MorphologyClass, Shape,
};
pub use error::{Error, Result};
pub use procgen::{build_embodiment, generate_dataset, split_dataset, VariationSpec};
pub use urma::{init_params, LatentState, ObservationBundle, PolicyParams, Urma, UrmaConfig};
pub use distill::{collect_demonstrations, train_bc, DistillConfig, SliceBuffer, TrajectorySlice};
pub use env::{EnvConfig, SurrogateEnv};
pub use harness::{evaluate_policy, make_subsets, ood_eval, run_scaling_study, EvalResult, ScalingConfig};
pub use latent::{action_latents, extract_latent, joint_latents, LatentRow, Pca};
pub use ppo::{gae, ppo_update, train_expert, ExpertPolicy, PpoConfig, RolloutBuffer};
pub use randomization::{scaled_ranges, update_curriculum, CurriculumState, RandomizationRanges};
pub use reward::{compute_reward, RewardCoefficients, TransitionRecord};
