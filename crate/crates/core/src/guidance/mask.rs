use serde::{Deserialize, Serialize};

use super::GuidanceError;
use crate::mmpl::AnchorSet;

/// Token tensor shape `(batch, frames, spatial, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenShape {
    pub b: u32,
    pub f: u32,
    pub s: u32,
    pub d: u32,
}

impl TokenShape {
    pub fn new(b: u32, f: u32, s: u32, d: u32) -> Result<Self, GuidanceError> {
        if b == 0 || f == 0 || s == 0 || d == 0 {
            return Err(GuidanceError::InvalidShape([b, f, s, d]));
        }
        Ok(Self { b, f, s, d })
    }

    pub fn token_count(&self) -> u64 {
        u64::from(self.b) * u64::from(self.f) * u64::from(self.s)
    }
}

/// Guidance frames are concatenated with the video frames along time.
pub fn guidance_token_shape(input: TokenShape) -> TokenShape {
    TokenShape {
        f: input.f * 2,
        ..input
    }
}

/// Neighbours of frame `t` within radius `n`, clipped to `1..=total`.
pub fn sliding_window(t: u32, n: u32, total: u32) -> Result<Vec<u32>, GuidanceError> {
    if t == 0 || t > total {
        return Err(GuidanceError::InvalidFrame { t, total });
    }
    let lo = t.saturating_sub(n).max(1);
    let hi = t.saturating_add(n).min(total);
    Ok((lo..=hi).filter(|&i| i != t).collect())
}

/// Per-frame 2-D saliency grids with threshold and window radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyField {
    pub values: Vec<Vec<Vec<f64>>>,
    pub alpha: f64,
    pub window_radius: u32,
}

impl SaliencyField {
    pub fn new(values: Vec<Vec<Vec<f64>>>, alpha: f64, window_radius: u32) -> Result<Self, GuidanceError> {
        let shape = |frame: &Vec<Vec<f64>>| (frame.len(), frame.iter().map(Vec::len).collect::<Vec<_>>());
        if let Some(first) = values.first() {
            let reference = shape(first);
            let rows_equal = reference.1.windows(2).all(|w| w[0] == w[1]);
            if !rows_equal || values.iter().any(|f| shape(f) != reference) {
                return Err(GuidanceError::InconsistentGrid);
            }
        }
        Ok(Self {
            values,
            alpha,
            window_radius,
        })
    }

    pub fn frames(&self) -> u32 {
        self.values.len() as u32
    }
}

/// Cells of frame `t` (1-based) whose saliency strictly exceeds the threshold.
pub fn dynamic_mask(field: &SaliencyField, t: u32) -> Result<Vec<Vec<bool>>, GuidanceError> {
    let total = field.frames();
    if t == 0 || t > total {
        return Err(GuidanceError::InvalidFrame { t, total });
    }
    Ok(field.values[t as usize - 1]
        .iter()
        .map(|row| row.iter().map(|&v| v > field.alpha).collect())
        .collect())
}

/// Reconstruction reads the anchor frames only.
pub fn keyframe_recon_frames(anchors: &AnchorSet) -> Vec<u32> {
    anchors.as_array().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling() {
        let out = guidance_token_shape(TokenShape::new(1, 5, 100, 64).unwrap());
        assert_eq!(out, TokenShape::new(1, 10, 100, 64).unwrap());
        let out = guidance_token_shape(TokenShape::new(2, 3, 4, 8).unwrap());
        assert_eq!((out.f, out.token_count()), (6, 48));
        assert!(TokenShape::new(1, 0, 4, 8).is_err());
    }

    #[test]
    fn windows() {
        assert_eq!(sliding_window(5, 2, 10).unwrap(), vec![3, 4, 6, 7]);
        assert_eq!(sliding_window(1, 2, 10).unwrap(), vec![2, 3]);
        assert!(sliding_window(5, 0, 10).unwrap().is_empty());
        assert!(sliding_window(11, 2, 10).is_err());
    }

    #[test]
    fn masks() {
        let f = SaliencyField::new(vec![vec![vec![0.1, 0.9], vec![0.5, 0.2]]], 0.4, 1).unwrap();
        assert_eq!(dynamic_mask(&f, 1).unwrap(), vec![vec![false, true], vec![true, false]]);
        let top = SaliencyField { alpha: 0.9, ..f.clone() };
        assert!(dynamic_mask(&top, 1).unwrap().iter().flatten().all(|&c| !c));
        let low = SaliencyField { alpha: 0.0, ..f };
        assert!(dynamic_mask(&low, 1).unwrap().iter().flatten().all(|&c| c));
        assert!(SaliencyField::new(vec![vec![vec![0.0; 2]], vec![vec![0.0; 3]]], 0.5, 1).is_err());
    }

    #[test]
    fn recon_uses_anchors() {
        let a = AnchorSet::new(2, 6, 10, 10).unwrap();
        assert_eq!(keyframe_recon_frames(&a), vec![2, 6, 10]);
    }
}
