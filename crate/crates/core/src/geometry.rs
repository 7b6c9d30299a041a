//! Canvas and latent coordinates, pixel boxes, and rasterization of box
//! trajectories into per-frame foreground masks at latent resolution.
//!
//! Boxes are half-open (`x0 <= x < x1`) in integer pixel coordinates so that
//! areas and intersections stay exact. A latent cell is foreground when its
//! center lies strictly inside the frame's box; all comparisons are done in
//! scaled integer arithmetic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Smallest admissible canvas side in pixels.
pub const MIN_CANVAS_SIDE: u32 = 8;

/// Pixel extent and length of a video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
    pub num_frames: usize,
}

impl Canvas {
    pub fn new(width: u32, height: u32, num_frames: usize) -> Result<Self> {
        let canvas = Canvas { width, height, num_frames };
        canvas.validate()?;
        Ok(canvas)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_CANVAS_SIDE || self.height < MIN_CANVAS_SIDE {
            return Err(invalid(format!(
                "canvas {}x{} is smaller than {MIN_CANVAS_SIDE}x{MIN_CANVAS_SIDE}",
                self.width, self.height
            )));
        }
        if self.num_frames == 0 {
            return Err(invalid("canvas must have at least one frame"));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn full_box(&self) -> BBox {
        BBox { x0: 0, y0: 0, x1: self.width, y1: self.height }
    }
}

/// Half-open axis-aligned pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(invalid(format!("degenerate box ({x0},{y0},{x1},{y1})")));
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    /// Twice the center, exact.
    pub fn center2(&self) -> (u64, u64) {
        (self.x0 as u64 + self.x1 as u64, self.y0 as u64 + self.y1 as u64)
    }

    pub fn center(&self) -> (f64, f64) {
        let (cx2, cy2) = self.center2();
        (cx2 as f64 / 2.0, cy2 as f64 / 2.0)
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        (x0 < x1 && y0 < y1).then_some(BBox { x0, y0, x1, y1 })
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn fits(&self, canvas: &Canvas) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= canvas.width && self.y1 <= canvas.height
    }

    pub fn scaled(&self, k: u32) -> BBox {
        BBox { x0: self.x0 * k, y0: self.y0 * k, x1: self.x1 * k, y1: self.y1 * k }
    }
}

/// One optional box per frame. `None` means the object is absent that frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBoxTrajectory {
    canvas: Canvas,
    boxes: Vec<Option<BBox>>,
}

impl BBoxTrajectory {
    pub fn new(canvas: Canvas, boxes: Vec<Option<BBox>>) -> Result<Self> {
        canvas.validate()?;
        if boxes.len() != canvas.num_frames {
            return Err(invalid(format!(
                "trajectory has {} boxes for {} frames",
                boxes.len(),
                canvas.num_frames
            )));
        }
        for (frame, b) in boxes.iter().enumerate() {
            if let Some(b) = b {
                if !b.fits(&canvas) {
                    return Err(invalid(format!("box {b:?} at frame {frame} leaves the canvas")));
                }
            }
        }
        Ok(BBoxTrajectory { canvas, boxes })
    }

    /// The same box on every frame.
    pub fn constant(canvas: Canvas, bbox: BBox) -> Result<Self> {
        Self::new(canvas, vec![Some(bbox); canvas.num_frames])
    }

    pub fn canvas(&self) -> Canvas {
        self.canvas
    }

    pub fn boxes(&self) -> &[Option<BBox>] {
        &self.boxes
    }

    pub fn get(&self, frame: usize) -> Option<BBox> {
        self.boxes.get(frame).copied().flatten()
    }

    pub fn num_frames(&self) -> usize {
        self.boxes.len()
    }

    pub fn present_frames(&self) -> usize {
        self.boxes.iter().filter(|b| b.is_some()).count()
    }
}

/// Latent resolution. Flattening is row-major: `index = y * width + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentGrid {
    pub width: u32,
    pub height: u32,
}

impl LatentGrid {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("latent grid dimensions must be positive"));
        }
        Ok(LatentGrid { width, height })
    }

    pub fn l_latents(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn check_canvas(&self, canvas: &Canvas) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid("latent grid dimensions must be positive"));
        }
        if self.width > canvas.width || self.height > canvas.height {
            return Err(invalid(format!(
                "latent grid {}x{} is larger than canvas {}x{}",
                self.width, self.height, canvas.width, canvas.height
            )));
        }
        Ok(())
    }

    /// Pixel rectangle covered by cell `(x, y)` as real coordinates.
    pub fn cell_rect(&self, canvas: &Canvas, x: u32, y: u32) -> (f64, f64, f64, f64) {
        let pw = canvas.width as f64 / self.width as f64;
        let ph = canvas.height as f64 / self.height as f64;
        (x as f64 * pw, y as f64 * ph, (x + 1) as f64 * pw, (y + 1) as f64 * ph)
    }
}

/// Per-frame binary foreground masks at latent resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMaskSet {
    grid: LatentGrid,
    frames: Vec<Vec<bool>>,
}

impl FrameMaskSet {
    pub fn new(grid: LatentGrid, frames: Vec<Vec<bool>>) -> Result<Self> {
        let l = grid.l_latents();
        if frames.is_empty() {
            return Err(invalid("mask set needs at least one frame"));
        }
        if let Some((f, m)) = frames.iter().enumerate().find(|(_, m)| m.len() != l) {
            return Err(invalid(format!("frame {f} mask has {} cells, grid has {l}", m.len())));
        }
        Ok(FrameMaskSet { grid, frames })
    }

    pub fn grid(&self) -> LatentGrid {
        self.grid
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn l_latents(&self) -> usize {
        self.grid.l_latents()
    }

    pub fn frames(&self) -> &[Vec<bool>] {
        &self.frames
    }

    pub fn frame(&self, f: usize) -> &[bool] {
        &self.frames[f]
    }

    /// Foreground indicator of latent pixel `i` across all frames.
    pub fn pixel_series(&self, i: usize) -> Vec<bool> {
        self.frames.iter().map(|m| m[i]).collect()
    }

    pub fn fg_count(&self, f: usize) -> usize {
        self.frames[f].iter().filter(|&&b| b).count()
    }
}

/// Cells along one axis whose centers lie strictly inside `[lo, hi)`.
///
/// Cell `c` has center `(2c + 1) * extent / (2 * cells)`; scaling by
/// `2 * cells` keeps the test in integers.
fn axis_cells(lo: u32, hi: u32, extent: u32, cells: u32) -> impl Iterator<Item = u32> {
    let (lo, hi, extent, n) = (lo as u64, hi as u64, extent as u64, cells as u64);
    (0..cells).filter(move |&c| {
        let center = (2 * c as u64 + 1) * extent;
        2 * n * lo < center && center < 2 * n * hi
    })
}

/// Cell index along one axis whose center is nearest the box center.
/// Ties go to the lower index.
fn nearest_axis_cell(lo: u32, hi: u32, extent: u32, cells: u32) -> u32 {
    let target = (lo as i128 + hi as i128) * cells as i128;
    (0..cells)
        .min_by_key(|&c| ((2 * c as i128 + 1) * extent as i128 - target).abs())
        .unwrap_or(0)
}

/// Rasterize one box onto the grid.
pub fn rasterize_box(bbox: &BBox, canvas: &Canvas, grid: &LatentGrid) -> Vec<bool> {
    let mut mask = vec![false; grid.l_latents()];
    let xs: Vec<u32> = axis_cells(bbox.x0, bbox.x1, canvas.width, grid.width).collect();
    let mut any = false;
    for y in axis_cells(bbox.y0, bbox.y1, canvas.height, grid.height) {
        for &x in &xs {
            mask[grid.index(x, y)] = true;
            any = true;
        }
    }
    if !any {
        // Sub-cell box: squared distance is separable, so the nearest cell is
        // the per-axis nearest pair.
        let x = nearest_axis_cell(bbox.x0, bbox.x1, canvas.width, grid.width);
        let y = nearest_axis_cell(bbox.y0, bbox.y1, canvas.height, grid.height);
        mask[grid.index(x, y)] = true;
    }
    mask
}

/// Rasterize a trajectory into per-frame latent foreground masks.
pub fn rasterize(traj: &BBoxTrajectory, grid: &LatentGrid) -> Result<FrameMaskSet> {
    let canvas = traj.canvas();
    grid.check_canvas(&canvas)?;
    let frames = traj
        .boxes()
        .iter()
        .map(|b| match b {
            Some(b) => rasterize_box(b, &canvas, grid),
            None => vec![false; grid.l_latents()],
        })
        .collect();
    FrameMaskSet::new(*grid, frames)
}

/// Round-half-up of `num / den` for non-negative integers.
fn round_div(num: u64, den: u64) -> u32 {
    ((2 * num + den) / (2 * den)) as u32
}

fn lerp_coord(a: u32, b: u32, t_num: u64, t_den: u64) -> u32 {
    round_div(a as u64 * (t_den - t_num) + b as u64 * t_num, t_den)
}

/// Fill a sparse set of key boxes into a dense trajectory.
///
/// Each coordinate is interpolated linearly between the surrounding keys and
/// rounded half-up to the pixel grid. Frames before the first key or after
/// the last key hold the nearest key.
pub fn interpolate_trajectory(keys: &BTreeMap<usize, BBox>, canvas: Canvas) -> Result<BBoxTrajectory> {
    canvas.validate()?;
    let (&last, _) = keys.last_key_value().ok_or_else(|| invalid("no key boxes given"))?;
    if last >= canvas.num_frames {
        return Err(invalid(format!("key frame {last} outside {} frames", canvas.num_frames)));
    }

    let mut boxes = Vec::with_capacity(canvas.num_frames);
    for frame in 0..canvas.num_frames {
        let before = keys.range(..=frame).next_back();
        let after = keys.range(frame..).next();
        let b = match (before, after) {
            (Some((&k0, b0)), Some((&k1, b1))) if k0 != k1 => {
                let t_num = (frame - k0) as u64;
                let t_den = (k1 - k0) as u64;
                BBox {
                    x0: lerp_coord(b0.x0, b1.x0, t_num, t_den),
                    y0: lerp_coord(b0.y0, b1.y0, t_num, t_den),
                    x1: lerp_coord(b0.x1, b1.x1, t_num, t_den),
                    y1: lerp_coord(b0.y1, b1.y1, t_num, t_den),
                }
            }
            (Some((_, b)), _) | (None, Some((_, b))) => *b,
            (None, None) => unreachable!("keys is non-empty"),
        };
        boxes.push(Some(b));
    }
    BBoxTrajectory::new(canvas, boxes)
}
