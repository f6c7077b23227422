//! Key-trace replay.
//!
//! A trace has one event per line: `<t_ms> <movement> <view>`, where each key
//! field is keys joined by `+`, or `-` for none, e.g. `500 W+A UP+RIGHT`.
//! Blank lines and lines starting with `#` are skipped. An event holds until
//! the next one.

use serde::{Deserialize, Serialize};

use super::keys::{map_keys, CameraCommand, KeyState, MoveKey, ViewKey};
use super::pose::{integrate_pose, Pose, SpeedConfig};
use super::GuidanceError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyEvent {
    pub t_ms: u64,
    pub keys: KeyState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    /// Pose sampling period.
    pub tick_ms: u64,
    /// Time simulated after the last event.
    pub tail_ms: u64,
    pub speeds: SpeedConfig,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            tick_ms: 100,
            tail_ms: 1000,
            speeds: SpeedConfig::default(),
        }
    }
}

fn parse_keys<K>(field: &str, parse: impl Fn(&str) -> Option<K>) -> Result<Vec<K>, String> {
    if field == "-" {
        return Ok(Vec::new());
    }
    field
        .split('+')
        .map(|k| parse(&k.to_ascii_uppercase()).ok_or_else(|| format!("unknown key {k:?}")))
        .collect()
}

fn move_key(k: &str) -> Option<MoveKey> {
    match k {
        "W" => Some(MoveKey::W),
        "A" => Some(MoveKey::A),
        "S" => Some(MoveKey::S),
        "D" => Some(MoveKey::D),
        _ => None,
    }
}

fn view_key(k: &str) -> Option<ViewKey> {
    match k {
        "UP" => Some(ViewKey::Up),
        "DOWN" => Some(ViewKey::Down),
        "LEFT" => Some(ViewKey::Left),
        "RIGHT" => Some(ViewKey::Right),
        _ => None,
    }
}

pub fn parse_key_trace(text: &str) -> Result<Vec<KeyEvent>, GuidanceError> {
    let mut events: Vec<KeyEvent> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let err = |reason: String| GuidanceError::Parse { line, reason };
        let fields: Vec<&str> = body.split_whitespace().collect();
        let [t, mv, view] = fields[..] else {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        };
        let t_ms: u64 = t.parse().map_err(|_| err(format!("invalid time {t:?}")))?;
        if events.last().is_some_and(|e| e.t_ms > t_ms) {
            return Err(err("event times must not decrease".into()));
        }
        let keys = KeyState::new(&parse_keys(mv, move_key).map_err(err)?, &parse_keys(view, view_key).map_err(err)?);
        events.push(KeyEvent { t_ms, keys });
    }
    Ok(events)
}

/// Poses sampled every `tick_ms` from 0 through the last event plus the
/// tail. Before the first event the camera is on standby. Integration is
/// split at event times so samples do not depend on tick alignment.
pub fn replay(events: &[KeyEvent], config: &ReplayConfig) -> Result<Vec<(u64, Pose)>, GuidanceError> {
    config.speeds.validate()?;
    if config.tick_ms == 0 {
        return Err(GuidanceError::InvalidTimestep(0.0));
    }
    let end = events.last().map_or(0, |e| e.t_ms) + config.tail_ms;
    let command_at = |t: u64| -> CameraCommand {
        events
            .iter()
            .rev()
            .find(|e| e.t_ms <= t)
            .map_or(CameraCommand::STANDBY, |e| map_keys(&e.keys))
    };

    let mut breaks: Vec<u64> = (0..=end).step_by(config.tick_ms as usize).collect();
    breaks.extend(events.iter().map(|e| e.t_ms).filter(|&t| t <= end));
    breaks.sort_unstable();
    breaks.dedup();

    let mut pose = Pose::default();
    let mut out = vec![(0, pose)];
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        pose = integrate_pose(&pose, &command_at(a), (b - a) as f64 / 1000.0, &config.speeds)?;
        if b % config.tick_ms == 0 {
            out.push((b, pose));
        }
    }
    Ok(out)
}

/// CSV with header `t_ms,x,y,z,yaw,pitch`, values to nine decimals.
pub fn pose_csv(samples: &[(u64, Pose)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t_ms", "x", "y", "z", "yaw", "pitch"]).expect("in-memory write");
    for (t, p) in samples {
        let f = |v: f64| format!("{v:.9}");
        w.write_record([
            t.to_string(),
            f(p.position[0]),
            f(p.position[1]),
            f(p.position[2]),
            f(p.yaw),
            f(p.pitch),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}
