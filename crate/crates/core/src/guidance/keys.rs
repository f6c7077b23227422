use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MoveKey {
    W,
    A,
    S,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViewKey {
    Up,
    Down,
    Left,
    Right,
}

impl MoveKey {
    pub const ALL: [MoveKey; 4] = [MoveKey::W, MoveKey::A, MoveKey::S, MoveKey::D];
}

impl ViewKey {
    pub const ALL: [ViewKey; 4] = [ViewKey::Up, ViewKey::Down, ViewKey::Left, ViewKey::Right];
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyState {
    pub movement: BTreeSet<MoveKey>,
    pub view: BTreeSet<ViewKey>,
}

impl KeyState {
    pub fn new(movement: &[MoveKey], view: &[ViewKey]) -> Self {
        Self {
            movement: movement.iter().copied().collect(),
            view: view.iter().copied().collect(),
        }
    }

    /// All 256 combinations of pressed keys.
    pub fn all() -> Vec<KeyState> {
        let mut out = Vec::with_capacity(256);
        for m in 0u8..16 {
            for v in 0u8..16 {
                out.push(KeyState {
                    movement: (0..4).filter(|b| m >> b & 1 == 1).map(|b| MoveKey::ALL[b]).collect(),
                    view: (0..4).filter(|b| v >> b & 1 == 1).map(|b| ViewKey::ALL[b]).collect(),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MoveCommand {
    Forward,
    Left,
    Backward,
    Right,
    ForwardLeft,
    ForwardRight,
    BackwardRight,
    BackwardLeft,
    Still,
}

impl MoveCommand {
    /// Unit (forward, left) components.
    pub fn axes(self) -> (i8, i8) {
        match self {
            MoveCommand::Forward => (1, 0),
            MoveCommand::Left => (0, 1),
            MoveCommand::Backward => (-1, 0),
            MoveCommand::Right => (0, -1),
            MoveCommand::ForwardLeft => (1, 1),
            MoveCommand::ForwardRight => (1, -1),
            MoveCommand::BackwardRight => (-1, -1),
            MoveCommand::BackwardLeft => (-1, 1),
            MoveCommand::Still => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViewCommand {
    TurnRight,
    TurnLeft,
    TiltUp,
    TiltDown,
    TiltUpTurnRight,
    TiltDownTurnRight,
    TiltDownTurnLeft,
    /// Not in the published arrow table; included so every key
    /// combination has an outcome.
    TiltUpTurnLeft,
    Still,
}

impl ViewCommand {
    /// (tilt, turn) signs: tilt up is +1, turn left is +1.
    pub fn axes(self) -> (i8, i8) {
        match self {
            ViewCommand::TurnRight => (0, -1),
            ViewCommand::TurnLeft => (0, 1),
            ViewCommand::TiltUp => (1, 0),
            ViewCommand::TiltDown => (-1, 0),
            ViewCommand::TiltUpTurnRight => (1, -1),
            ViewCommand::TiltDownTurnRight => (-1, -1),
            ViewCommand::TiltDownTurnLeft => (-1, 1),
            ViewCommand::TiltUpTurnLeft => (1, 1),
            ViewCommand::Still => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CameraCommand {
    pub move_cmd: MoveCommand,
    pub view: ViewCommand,
    /// No key pressed at all; the integrator applies the slow forward drift.
    pub standby: bool,
}

impl CameraCommand {
    pub const STANDBY: CameraCommand = CameraCommand {
        move_cmd: MoveCommand::Still,
        view: ViewCommand::Still,
        standby: true,
    };
}

fn axis(pos: bool, neg: bool) -> i8 {
    i8::from(pos) - i8::from(neg)
}

/// Maps pressed keys to a camera command. Opposing keys on one axis cancel.
pub fn map_keys(keys: &KeyState) -> CameraCommand {
    if keys.movement.is_empty() && keys.view.is_empty() {
        return CameraCommand::STANDBY;
    }
    let m = |k| keys.movement.contains(&k);
    let v = |k| keys.view.contains(&k);
    let move_cmd = match (axis(m(MoveKey::W), m(MoveKey::S)), axis(m(MoveKey::A), m(MoveKey::D))) {
        (1, 0) => MoveCommand::Forward,
        (0, 1) => MoveCommand::Left,
        (-1, 0) => MoveCommand::Backward,
        (0, -1) => MoveCommand::Right,
        (1, 1) => MoveCommand::ForwardLeft,
        (1, -1) => MoveCommand::ForwardRight,
        (-1, -1) => MoveCommand::BackwardRight,
        (-1, 1) => MoveCommand::BackwardLeft,
        _ => MoveCommand::Still,
    };
    let view = match (axis(v(ViewKey::Up), v(ViewKey::Down)), axis(v(ViewKey::Left), v(ViewKey::Right))) {
        (0, -1) => ViewCommand::TurnRight,
        (0, 1) => ViewCommand::TurnLeft,
        (1, 0) => ViewCommand::TiltUp,
        (-1, 0) => ViewCommand::TiltDown,
        (1, -1) => ViewCommand::TiltUpTurnRight,
        (-1, -1) => ViewCommand::TiltDownTurnRight,
        (-1, 1) => ViewCommand::TiltDownTurnLeft,
        (1, 1) => ViewCommand::TiltUpTurnLeft,
        _ => ViewCommand::Still,
    };
    CameraCommand {
        move_cmd,
        view,
        standby: false,
    }
}
