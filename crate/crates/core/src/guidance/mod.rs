//! Keyboard guidance: key-to-camera mapping, pose integration, key-trace
//! replay, and the token and mask arithmetic used by the guidance branch.

mod keys;
mod mask;
mod pose;
mod replay;

pub use keys::{map_keys, CameraCommand, KeyState, MoveCommand, MoveKey, ViewCommand, ViewKey};
pub use mask::{
    dynamic_mask, guidance_token_shape, keyframe_recon_frames, sliding_window, SaliencyField, TokenShape,
};
pub use pose::{integrate_pose, Pose, SpeedConfig};
pub use replay::{parse_key_trace, pose_csv, replay, KeyEvent, ReplayConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GuidanceError {
    #[error("time step must be non-negative, got {0}")]
    InvalidTimestep(f64),
    #[error("frame {t} is outside 1..={total}")]
    InvalidFrame { t: u32, total: u32 },
    #[error("token shape dimensions must be positive: {0:?}")]
    InvalidShape([u32; 4]),
    #[error("saliency frames must share one grid shape")]
    InconsistentGrid,
    #[error("{field} must be {requirement}")]
    InvalidSpeed { field: &'static str, requirement: &'static str },
    #[error("key trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
}
