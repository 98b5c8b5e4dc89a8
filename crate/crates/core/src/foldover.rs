//! Per-track foldover height-maps and their X/Y/Z cumulative projections.
//!
//! A foldover is the pixel-wise sum of one object's masked intensities over
//! every frame of its track. Read as a height-map it bounds a solid
//! `{(x, y, z) : 1 <= z <= grid(x, y)}`; the projections count that solid's
//! slices along each axis.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::framestore::{write_pgm16, Frame, VideoSequence};
use crate::segmentation::BinaryMask;
use crate::tracking::Track;
use crate::Point;

#[derive(Debug, Error, PartialEq)]
pub enum FoldoverError {
    #[error("track has no points")]
    EmptyTrack,
    #[error("dimension mismatch: frame {frame:?}, mask {mask:?}")]
    DimensionMismatch {
        frame: (usize, usize),
        mask: (usize, usize),
    },
    #[error("track references frame {0} but only {1} frames/masks are available")]
    FrameOutOfRange(usize, usize),
}

/// Dense row-major grid of non-negative counts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u32>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u32>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut u32 {
        &mut self.data[y * self.width + x]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sum(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    pub fn max_value(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of nonzero cells.
    pub fn support_bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) > 0 {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bbox
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Grid {
        let mut out = Grid::zeros(w, h);
        for y in 0..h {
            let src = (y0 + y) * self.width + x0;
            out.data[y * w..(y + 1) * w].copy_from_slice(&self.data[src..src + w]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Foldover {
    pub track_id: u32,
    pub grid: Grid,
    /// Frame coordinates of grid cell `(0, 0)`.
    pub origin: (i64, i64),
    /// Number of accumulated frames.
    pub gamma: usize,
    pub start: Point,
    pub end: Point,
}

impl Foldover {
    /// Support length along X, i.e. the width of the nonzero bounding box.
    pub fn extent_x(&self) -> usize {
        self.grid.support_bbox().map_or(0, |(x0, _, x1, _)| x1 - x0 + 1)
    }

    pub fn extent_y(&self) -> usize {
        self.grid.support_bbox().map_or(0, |(_, y0, _, y1)| y1 - y0 + 1)
    }

    pub fn extent_z(&self) -> u32 {
        self.grid.max_value()
    }

    pub fn mass(&self) -> u64 {
        self.grid.sum()
    }

    /// Intensity-weighted centroid in frame coordinates.
    pub fn mass_centroid(&self) -> Option<Point> {
        let mut total = 0.0;
        let (mut sx, mut sy) = (0.0, 0.0);
        for y in 0..self.grid.height {
            for x in 0..self.grid.width {
                let v = self.grid.get(x, y) as f64;
                total += v;
                sx += v * x as f64;
                sy += v * y as f64;
            }
        }
        (total > 0.0).then(|| Point::new(self.origin.0 as f64 + sx / total, self.origin.1 as f64 + sy / total))
    }

    fn cropped_to_support(mut self) -> Self {
        if let Some((x0, y0, x1, y1)) = self.grid.support_bbox() {
            if x0 > 0 || y0 > 0 || x1 + 1 < self.grid.width || y1 + 1 < self.grid.height {
                self.grid = self.grid.crop(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
                self.origin = (self.origin.0 + x0 as i64, self.origin.1 + y0 as i64);
            }
        } else {
            self.grid = Grid::zeros(0, 0);
        }
        self
    }
}

/// Keeps mask bits whose pixel lies within `r` of `center`.
pub fn lock_region(mask: &BinaryMask, center: Point, r: f64) -> BinaryMask {
    let mut out = BinaryMask::zeros(mask.width(), mask.height());
    let r2 = r * r;
    for_disk(mask.width(), mask.height(), center, r, |x, y| {
        let d2 = (x as f64 - center.x).powi(2) + (y as f64 - center.y).powi(2);
        if d2 <= r2 && mask.get(x, y) {
            out.set(x, y, true);
        }
    });
    out
}

/// Visits every in-frame pixel of the disk's bounding square.
fn for_disk(width: usize, height: usize, center: Point, r: f64, mut f: impl FnMut(usize, usize)) {
    if width == 0 || height == 0 {
        return;
    }
    let x0 = (center.x - r).ceil().max(0.0);
    let y0 = (center.y - r).ceil().max(0.0);
    let x1 = (center.x + r).floor().min(width as f64 - 1.0);
    let y1 = (center.y + r).floor().min(height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    for y in y0 as usize..=y1 as usize {
        for x in x0 as usize..=x1 as usize {
            f(x, y);
        }
    }
}

/// Original intensities where `lock` is set, zero elsewhere.
pub fn extract_object(frame: &Frame, lock: &BinaryMask) -> Result<Frame, FoldoverError> {
    if frame.dims() != (lock.width(), lock.height()) {
        return Err(FoldoverError::DimensionMismatch {
            frame: frame.dims(),
            mask: (lock.width(), lock.height()),
        });
    }
    let data = frame
        .data()
        .iter()
        .zip(lock.bits())
        .map(|(&p, &b)| if b != 0 { p } else { 0 })
        .collect();
    Ok(Frame::new(frame.width(), frame.height(), data).expect("same dimensions"))
}

/// Sums the locked, extracted object over every point of `track`.
///
/// Equivalent to adding `extract_object(frame_j, lock_region(mask_j, I_j, r))`
/// for each track point, evaluated only inside each disk. The result is
/// cropped to the nonzero support.
pub fn accumulate(track: &Track, video: &VideoSequence, masks: &[BinaryMask], r: f64) -> Result<Foldover, FoldoverError> {
    let first = track.points.first().ok_or(FoldoverError::EmptyTrack)?;
    let last = track.last();
    let (w, h) = (video.width(), video.height());
    let available = video.len().min(masks.len());
    for p in &track.points {
        if p.frame_index >= available {
            return Err(FoldoverError::FrameOutOfRange(p.frame_index, available));
        }
        let m = &masks[p.frame_index];
        if (m.width(), m.height()) != (w, h) {
            return Err(FoldoverError::DimensionMismatch {
                frame: (w, h),
                mask: (m.width(), m.height()),
            });
        }
    }

    // union of clipped disk windows
    let mut bounds: Option<(i64, i64, i64, i64)> = None;
    for p in &track.points {
        let c = p.centroid;
        let x0 = ((c.x - r).ceil() as i64).max(0);
        let y0 = ((c.y - r).ceil() as i64).max(0);
        let x1 = ((c.x + r).floor() as i64).min(w as i64 - 1);
        let y1 = ((c.y + r).floor() as i64).min(h as i64 - 1);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        bounds = Some(match bounds {
            None => (x0, y0, x1, y1),
            Some((a, b, c, d)) => (a.min(x0), b.min(y0), c.max(x1), d.max(y1)),
        });
    }
    let Some((bx0, by0, bx1, by1)) = bounds else {
        return Ok(Foldover {
            track_id: track.id,
            grid: Grid::zeros(0, 0),
            origin: (first.centroid.x.round() as i64, first.centroid.y.round() as i64),
            gamma: track.len(),
            start: first.centroid,
            end: last.centroid,
        });
    };
    let gw = (bx1 - bx0 + 1) as usize;
    let gh = (by1 - by0 + 1) as usize;
    let mut grid = Grid::zeros(gw, gh);
    let r2 = r * r;
    for p in &track.points {
        let frame = &video.frames()[p.frame_index];
        let mask = &masks[p.frame_index];
        let c = p.centroid;
        for_disk(w, h, c, r, |x, y| {
            let d2 = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
            if d2 <= r2 && mask.get(x, y) {
                *grid.get_mut(x - bx0 as usize, y - by0 as usize) += frame.get(x, y) as u32;
            }
        });
    }
    Ok(Foldover {
        track_id: track.id,
        grid,
        origin: (bx0, by0),
        gamma: track.len(),
        start: first.centroid,
        end: last.centroid,
    }
    .cropped_to_support())
}

#[inline]
fn rotate(v: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    Point::new(v.x * c - v.y * s, v.x * s + v.y * c)
}

/// Rotates the foldover so the start-to-end direction points along +X.
///
/// The pivot is the mass centroid; sampling is inverse-mapped nearest
/// neighbor. Displacements shorter than `min_displacement` leave the
/// foldover untouched.
pub fn rotate_to_positive_x(f: &Foldover, min_displacement: f64) -> Foldover {
    let disp = f.end - f.start;
    if disp.norm() < min_displacement {
        return f.clone();
    }
    let angle = disp.y.atan2(disp.x);
    if angle == 0.0 {
        return f.clone();
    }
    let Some(pivot) = f.mass_centroid() else {
        return f.clone();
    };
    let to_dest = |p: Point| pivot + rotate(p - pivot, -angle);

    let (ox, oy) = (f.origin.0 as f64, f.origin.1 as f64);
    let (gw, gh) = (f.grid.width as f64, f.grid.height as f64);
    let corners = [
        Point::new(ox - 0.5, oy - 0.5),
        Point::new(ox + gw - 0.5, oy - 0.5),
        Point::new(ox - 0.5, oy + gh - 0.5),
        Point::new(ox + gw - 0.5, oy + gh - 0.5),
    ]
    .map(to_dest);
    let min_x = corners.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).floor() as i64;
    let min_y = corners.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).floor() as i64;
    let max_x = corners.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).ceil() as i64;
    let max_y = corners.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).ceil() as i64;
    let nw = (max_x - min_x + 1) as usize;
    let nh = (max_y - min_y + 1) as usize;

    let mut grid = Grid::zeros(nw, nh);
    for v in 0..nh {
        for u in 0..nw {
            let q = Point::new((min_x + u as i64) as f64, (min_y + v as i64) as f64);
            let s = pivot + rotate(q - pivot, angle);
            let sx = (s.x - ox).round();
            let sy = (s.y - oy).round();
            if sx >= 0.0 && sy >= 0.0 && sx < gw && sy < gh {
                *grid.get_mut(u, v) = f.grid.get(sx as usize, sy as usize);
            }
        }
    }
    Foldover {
        track_id: f.track_id,
        grid,
        origin: (min_x, min_y),
        gamma: f.gamma,
        start: to_dest(f.start),
        end: to_dest(f.end),
    }
    .cropped_to_support()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        }
    }

    pub fn parse(s: &str) -> Option<Axis> {
        match s.trim() {
            "X" | "x" => Some(Axis::X),
            "Y" | "y" => Some(Axis::Y),
            "Z" | "z" => Some(Axis::Z),
            _ => None,
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cumulative slice image along one axis.
///
/// * `X`: rows are y bands, columns are z bands; each cell counts the x-slabs
///   whose solid reaches into that (y, z) cell.
/// * `Y`: rows are x bands, columns are z bands, slabs run along y.
/// * `Z`: the height-map itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub axis: Axis,
    pub grid: Grid,
    pub step: u32,
    /// Support length of the foldover along `axis` (max height for Z).
    pub extent: u32,
}

/// Slices the height-map solid along `axis` with band width `step`.
pub fn project(f: &Foldover, axis: Axis, step: u32) -> Projection {
    project_grid(&f.grid, axis, step)
}

pub fn project_grid(grid: &Grid, axis: Axis, step: u32) -> Projection {
    let step = step.max(1);
    let extent = match axis {
        Axis::X => grid.support_bbox().map_or(0, |(x0, _, x1, _)| (x1 - x0 + 1) as u32),
        Axis::Y => grid.support_bbox().map_or(0, |(_, y0, _, y1)| (y1 - y0 + 1) as u32),
        Axis::Z => grid.max_value(),
    };
    let out = match axis {
        Axis::Z => grid.clone(),
        Axis::X => slab_projection(grid, step, false),
        Axis::Y => slab_projection(grid, step, true),
    };
    Projection {
        axis,
        grid: out,
        step,
        extent,
    }
}

/// Counts, per (transverse band, z band), how many slabs along the slicing
/// axis contain solid. A slab reaches z band `b` iff its block maximum is at
/// least `b * step + 1`.
fn slab_projection(grid: &Grid, step: u32, along_y: bool) -> Grid {
    let s = step as usize;
    let (slice_len, trans_len) = if along_y {
        (grid.height, grid.width)
    } else {
        (grid.width, grid.height)
    };
    let n_slabs = slice_len.div_ceil(s);
    let n_trans = trans_len.div_ceil(s);
    let n_z = (grid.max_value() as usize).div_ceil(s);
    let mut out = Grid::zeros(n_z, n_trans);
    let mut diff = vec![0i64; n_z + 1];
    for tb in 0..n_trans {
        diff.iter_mut().for_each(|d| *d = 0);
        for slab in 0..n_slabs {
            let mut m = 0u32;
            for a in slab * s..((slab + 1) * s).min(slice_len) {
                for t in tb * s..((tb + 1) * s).min(trans_len) {
                    let v = if along_y { grid.get(t, a) } else { grid.get(a, t) };
                    m = m.max(v);
                }
            }
            let bands = (m as usize).div_ceil(s);
            if bands > 0 {
                diff[0] += 1;
                diff[bands] -= 1;
            }
        }
        let mut run = 0i64;
        for zb in 0..n_z {
            run += diff[zb];
            *out.get_mut(zb, tb) = run as u32;
        }
    }
    out
}

/// Sidecar written next to each foldover PGM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldoverSidecar {
    pub track_id: u32,
    pub gamma: usize,
    pub origin: (i64, i64),
    pub extent_x: usize,
    pub extent_y: usize,
    pub extent_z: u32,
    pub step: StepSizes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSizes {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl Default for StepSizes {
    fn default() -> Self {
        Self { x: 1, y: 1, z: 1 }
    }
}

impl StepSizes {
    pub fn for_axis(&self, axis: Axis) -> u32 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }
}

pub fn sidecar(f: &Foldover, step: StepSizes) -> FoldoverSidecar {
    FoldoverSidecar {
        track_id: f.track_id,
        gamma: f.gamma,
        origin: f.origin,
        extent_x: f.extent_x(),
        extent_y: f.extent_y(),
        extent_z: f.extent_z(),
        step,
    }
}

/// Writes `track_NNNN.pgm`, `track_NNNN_{x,y,z}.pgm` and `track_NNNN.json` into `dir`.
pub fn write_artifacts(dir: &Path, f: &Foldover, projections: &[Projection], step: StepSizes) -> io::Result<()> {
    let stem = format!("track_{:04}", f.track_id);
    write_pgm16(&dir.join(format!("{stem}.pgm")), f.grid.width, f.grid.height, &f.grid.data)?;
    for p in projections {
        let name = format!("{stem}_{}.pgm", p.axis.as_str().to_ascii_lowercase());
        write_pgm16(&dir.join(name), p.grid.width, p.grid.height, &p.grid.data)?;
    }
    let json = serde_json::to_string_pretty(&sidecar(f, step)).map_err(io::Error::other)?;
    fs::write(dir.join(format!("{stem}.json")), json + "\n")
}
