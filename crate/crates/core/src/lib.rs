//! Foldover feature extraction for micro-object video.
//!
//! The pipeline segments grayscale frames, links per-frame barycenters into
//! tracks, sums each object's masked pixels into a foldover height-map,
//! rotates it to the direction of travel and reduces it to X/Y/Z feature
//! vectors plus CASA-style kinematics.
//!
//! ```text
//! framestore -> segmentation -> tracking -> foldover -> features -> classify
//!                                   ^
//!                synth (seeded scenes with ground truth)
//! ```

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

pub mod classify;
pub mod config;
pub mod features;
pub mod foldover;
pub mod framestore;
pub mod pipeline;
pub mod segmentation;
pub mod synth;
pub mod tracking;

pub use config::PipelineConfig;
pub use foldover::{Axis, Foldover, Grid, Projection};
pub use framestore::{Frame, VideoSequence};
pub use tracking::Track;

/// Real-valued position in frame coordinates (x right, y down).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}
