//! Shared fixtures for the benchmarks.

use peekaboo_core::geometry::{rasterize, BBox, BBoxTrajectory, Canvas, FrameMaskSet, LatentGrid};
use peekaboo_core::maskgen::TokenLabels;
use peekaboo_core::pipeline::PromptSpec;

/// A box sweeping left to right across a square canvas.
pub fn sweeping_box(side: u32, frames: usize) -> BBoxTrajectory {
    let canvas = Canvas::new(side, side, frames).unwrap();
    let w = side / 3;
    let step = (side - w) / frames.max(1) as u32;
    let boxes = (0..frames as u32).map(|f| Some(BBox::new(f * step, side / 3, f * step + w, 2 * side / 3).unwrap())).collect();
    BBoxTrajectory::new(canvas, boxes).unwrap()
}

pub fn frame_masks(grid_side: u32, frames: usize) -> FrameMaskSet {
    let grid = LatentGrid::new(grid_side, grid_side).unwrap();
    rasterize(&sweeping_box(8 * grid_side, frames), &grid).unwrap()
}

pub fn labels(l_text: usize) -> TokenLabels {
    TokenLabels::new((0..l_text).map(|i| i % 4 == 1).collect()).unwrap()
}

pub fn prompt() -> PromptSpec {
    PromptSpec::from_text("A red car driving down a coastal road.", "red car", 8, 1).unwrap()
}
