//! JSON trajectory documents.
//!
//! ```json
//! {
//!   "prompt": "A fox sitting in a forest clearing.",
//!   "fg_phrase": "fox",
//!   "mode": "dense",
//!   "canvas": { "w": 256, "h": 256, "frames": 16 },
//!   "boxes": [ { "frame": 0, "x0": 10, "y0": 20, "x1": 90, "y1": 100 } ]
//! }
//! ```
//!
//! Frames without a box are omitted. In `keyframes` mode the listed boxes
//! are interpolated to every frame.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{interpolate_trajectory, BBox, BBoxTrajectory, Canvas};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryMode {
    #[default]
    Dense,
    Keyframes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasSpec {
    pub w: u32,
    pub h: u32,
    pub frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameBox {
    pub frame: usize,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub prompt: String,
    pub fg_phrase: String,
    #[serde(default)]
    pub mode: TrajectoryMode,
    pub canvas: CanvasSpec,
    pub boxes: Vec<FrameBox>,
}

impl TrajectoryFile {
    pub fn from_trajectory(prompt: &str, fg_phrase: &str, traj: &BBoxTrajectory) -> Self {
        let c = traj.canvas();
        let boxes = traj
            .boxes()
            .iter()
            .enumerate()
            .filter_map(|(frame, b)| {
                b.map(|b| FrameBox { frame, x0: b.x0, y0: b.y0, x1: b.x1, y1: b.y1 })
            })
            .collect();
        TrajectoryFile {
            prompt: prompt.to_owned(),
            fg_phrase: fg_phrase.to_owned(),
            mode: TrajectoryMode::Dense,
            canvas: CanvasSpec { w: c.width, h: c.height, frames: c.num_frames },
            boxes,
        }
    }

    pub fn canvas(&self) -> Result<Canvas> {
        Canvas::new(self.canvas.w, self.canvas.h, self.canvas.frames)
    }

    /// Resolve the document into a per-frame trajectory.
    pub fn to_trajectory(&self) -> Result<BBoxTrajectory> {
        let canvas = self.canvas()?;
        let mut keyed = BTreeMap::new();
        for fb in &self.boxes {
            if fb.frame >= canvas.num_frames {
                return Err(Error::Validation(format!(
                    "box for frame {} but canvas has {} frames",
                    fb.frame, canvas.num_frames
                )));
            }
            let b = BBox::new(fb.x0, fb.y0, fb.x1, fb.y1)?;
            if keyed.insert(fb.frame, b).is_some() {
                return Err(Error::Validation(format!("frame {} listed twice", fb.frame)));
            }
        }
        match self.mode {
            TrajectoryMode::Dense => {
                let boxes = (0..canvas.num_frames).map(|f| keyed.get(&f).copied()).collect();
                BBoxTrajectory::new(canvas, boxes)
            }
            TrajectoryMode::Keyframes => interpolate_trajectory(&keyed, canvas),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("trajectory serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYFRAMES: &str = r#"{
        "prompt": "A jet plane flying high in the sky.",
        "fg_phrase": "jet plane",
        "mode": "keyframes",
        "canvas": {"w": 64, "h": 64, "frames": 3},
        "boxes": [
            {"frame": 0, "x0": 0, "y0": 0, "x1": 10, "y1": 10},
            {"frame": 2, "x0": 20, "y0": 0, "x1": 30, "y1": 10}
        ]
    }"#;

    #[test]
    fn keyframes_are_interpolated() {
        let t = TrajectoryFile::from_json(KEYFRAMES).unwrap().to_trajectory().unwrap();
        assert_eq!(t.get(1), Some(BBox::new(10, 0, 20, 10).unwrap()));
    }

    #[test]
    fn dense_keeps_gaps() {
        let mut doc = TrajectoryFile::from_json(KEYFRAMES).unwrap();
        doc.mode = TrajectoryMode::Dense;
        let t = doc.to_trajectory().unwrap();
        assert_eq!(t.get(1), None);
        assert_eq!(t.present_frames(), 2);
    }

    #[test]
    fn mode_defaults_to_dense() {
        let doc = TrajectoryFile::from_json(
            r#"{"prompt":"p","fg_phrase":"p","canvas":{"w":8,"h":8,"frames":1},"boxes":[]}"#,
        )
        .unwrap();
        assert_eq!(doc.mode, TrajectoryMode::Dense);
    }

    #[test]
    fn round_trip_through_text() {
        let t = TrajectoryFile::from_json(KEYFRAMES).unwrap().to_trajectory().unwrap();
        let doc = TrajectoryFile::from_trajectory("p", "q", &t);
        let back = TrajectoryFile::from_json(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_trajectory().unwrap(), t);
    }

    #[test]
    fn duplicate_and_out_of_range_frames_rejected() {
        let mut doc = TrajectoryFile::from_json(KEYFRAMES).unwrap();
        doc.boxes[1].frame = 0;
        assert!(matches!(doc.to_trajectory(), Err(Error::Validation(_))));
        doc.boxes[1].frame = 3;
        assert!(matches!(doc.to_trajectory(), Err(Error::Validation(_))));
    }
}
