//! Seeded synthetic microscopy scenes with exact ground truth.
//!
//! Objects are isotropic Gaussian blobs moving along simple parametric paths.
//! Frame noise comes from one ChaCha stream per frame, so frames can be
//! rendered in any order (or in parallel) without changing a byte.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::framestore::{Frame, VideoSequence, DEFAULT_FPS};
use crate::tracking::{Track, TrackPoint};
use crate::Point;

/// Frame size of the benchmark scenes.
pub const BENCH_WIDTH: usize = 698;
pub const BENCH_HEIGHT: usize = 528;
pub const BENCH_FRAMES: usize = 25;
pub const BENCH_COLS: usize = 2;
pub const BENCH_ROWS: usize = 9;
pub const BENCH_OBJECTS_PER_SCENE: usize = BENCH_COLS * BENCH_ROWS;
pub const BENCH_SCENES: usize = 10;
/// Global benchmark id = `scene * TRACK_ID_STRIDE + local id`.
pub const TRACK_ID_STRIDE: u32 = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("scene spec violation: {0}")]
    SpecViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Stationary,
    Linear,
    /// Circle of radius `amplitude` through `start`, traversed at `speed`.
    Circular,
    /// Drift along `heading` at `speed` with a transverse sine of `amplitude`/`period`.
    Sinusoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionLabel {
    Poor,
    Good,
    Excellent,
}

impl MotionLabel {
    pub const ALL: [MotionLabel; 3] = [MotionLabel::Poor, MotionLabel::Good, MotionLabel::Excellent];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        crate::classify::CLASS_NAMES[self.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub kind: MotionKind,
    /// Center at the object's first visible frame.
    pub start: Point,
    /// Pixels per frame.
    pub speed: f64,
    pub heading_deg: f64,
    pub amplitude: f64,
    /// Frames per sine cycle.
    pub period: f64,
    /// Blob radius; the Gaussian sigma is half of it.
    pub radius: f64,
    pub peak_intensity: u8,
    pub enter_frame: usize,
    /// Exclusive.
    pub exit_frame: usize,
    pub label: MotionLabel,
}

impl ObjectSpec {
    /// Center `tau` frames after entry.
    pub fn position(&self, tau: f64) -> Point {
        let h = self.heading_deg.to_radians();
        let dir = Point::new(h.cos(), h.sin());
        match self.kind {
            MotionKind::Stationary => self.start,
            MotionKind::Linear => self.start + dir * (self.speed * tau),
            MotionKind::Circular => {
                if self.amplitude <= 0.0 {
                    return self.start;
                }
                let center = self.start - dir * self.amplitude;
                let phase = h + self.speed / self.amplitude * tau;
                center + Point::new(phase.cos(), phase.sin()) * self.amplitude
            }
            MotionKind::Sinusoid => {
                let normal = Point::new(-dir.y, dir.x);
                let lateral = if self.period > 0.0 {
                    self.amplitude * (2.0 * PI * tau / self.period).sin()
                } else {
                    0.0
                };
                self.start + dir * (self.speed * tau) + normal * lateral
            }
        }
    }

    pub fn visible(&self, frame: usize) -> bool {
        frame >= self.enter_frame && frame < self.exit_frame
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
    pub objects: Vec<ObjectSpec>,
    pub noise_sigma: f64,
    pub background: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::SpecViolation(m));
        if self.frames < 2 {
            return bad(format!("{} frames, need at least 2", self.frames));
        }
        if self.width == 0 || self.height == 0 {
            return bad("zero frame size".into());
        }
        if !(self.fps > 0.0) {
            return bad(format!("fps {} must be positive", self.fps));
        }
        if self.noise_sigma < 0.0 {
            return bad("negative noise".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.exit_frame <= o.enter_frame {
                return bad(format!("object {i}: exit_frame must exceed enter_frame"));
            }
            if o.enter_frame >= self.frames {
                return bad(format!("object {i}: enters after the last frame"));
            }
            if (o.peak_intensity as f64) <= self.background + 3.0 * self.noise_sigma {
                return bad(format!("object {i}: peak intensity not above background + 3 sigma"));
            }
            if o.radius <= 0.0 {
                return bad(format!("object {i}: radius must be positive"));
            }
            let p = o.start;
            if p.x < 0.0 || p.y < 0.0 || p.x > (self.width - 1) as f64 || p.y > (self.height - 1) as f64 {
                return bad(format!("object {i}: starts outside the frame"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub video: VideoSequence,
    /// One track per object, id = object index + 1.
    pub ground_truth: Vec<Track>,
    pub labels: BTreeMap<u32, MotionLabel>,
}

/// Noise-free intensity at every pixel before clipping and quantization.
pub fn render_exact(spec: &SceneSpec, frame: usize) -> Vec<f64> {
    let (w, h) = (spec.width, spec.height);
    let mut img = vec![spec.background; w * h];
    for o in spec.objects.iter().filter(|o| o.visible(frame)) {
        let c = o.position((frame - o.enter_frame) as f64);
        let sigma = o.radius / 2.0;
        let amp = o.peak_intensity as f64 - spec.background;
        let reach = 5.0 * sigma;
        let x0 = (c.x - reach).floor().max(0.0) as usize;
        let y0 = (c.y - reach).floor().max(0.0) as usize;
        let x1 = ((c.x + reach).ceil().max(-1.0) as i64).min(w as i64 - 1);
        let y1 = ((c.y + reach).ceil().max(-1.0) as i64).min(h as i64 - 1);
        if x1 < 0 || y1 < 0 {
            continue;
        }
        let inv = 1.0 / (2.0 * sigma * sigma);
        for y in y0..=y1 as usize {
            let dy2 = (y as f64 - c.y).powi(2);
            for x in x0..=x1 as usize {
                let d2 = (x as f64 - c.x).powi(2) + dy2;
                img[y * w + x] += amp * (-d2 * inv).exp();
            }
        }
    }
    img
}

fn render_frame(spec: &SceneSpec, frame: usize) -> Frame {
    let mut img = render_exact(spec, frame);
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(frame as u64);
        let normal = Normal::new(0.0, spec.noise_sigma).expect("finite sigma");
        for v in img.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let data = img.into_iter().map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8).collect();
    Frame::new(spec.width, spec.height, data).expect("frame dimensions")
}

/// Renders the scene and its ground truth. Identical specs give identical bytes.
pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene, SynthError> {
    spec.validate()?;
    let frames: Vec<Frame> = (0..spec.frames).into_par_iter().map(|j| render_frame(spec, j)).collect();
    let video = VideoSequence::new(format!("synth_{}", spec.seed), spec.fps, frames)
        .map_err(|e| SynthError::SpecViolation(e.to_string()))?;
    let mut ground_truth = Vec::with_capacity(spec.objects.len());
    let mut labels = BTreeMap::new();
    for (i, o) in spec.objects.iter().enumerate() {
        let id = i as u32 + 1;
        let points = (o.enter_frame..o.exit_frame.min(spec.frames))
            .map(|j| TrackPoint {
                frame_index: j,
                centroid: o.position((j - o.enter_frame) as f64),
            })
            .collect();
        ground_truth.push(Track::from_points(id, points));
        labels.insert(id, o.label);
    }
    Ok(SyntheticScene {
        video,
        ground_truth,
        labels,
    })
}

/// A single linear mover in a small frame, handy for smoke runs.
pub fn single_object_scene(seed: u64) -> SceneSpec {
    SceneSpec {
        width: 160,
        height: 120,
        frames: 30,
        fps: DEFAULT_FPS,
        objects: vec![ObjectSpec {
            kind: MotionKind::Linear,
            start: Point::new(30.0, 60.0),
            speed: 3.0,
            heading_deg: 10.0,
            amplitude: 0.0,
            period: 0.0,
            radius: 6.0,
            peak_intensity: 200,
            enter_frame: 0,
            exit_frame: 30,
            label: MotionLabel::Good,
        }],
        noise_sigma: 3.0,
        background: 30.0,
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTrack {
    pub scene: usize,
    pub local_id: u32,
    pub global_id: u32,
    pub label: MotionLabel,
}

/// 180 labelled tracks (60 per class) spread over ten scenes, with a seeded
/// 50/50 train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub scenes: Vec<SceneSpec>,
    pub tracks: Vec<BenchmarkTrack>,
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

impl Benchmark {
    pub fn labels(&self) -> BTreeMap<u32, MotionLabel> {
        self.tracks.iter().map(|t| (t.global_id, t.label)).collect()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Speed bands (px/frame), chosen inside the labelled VCL bands
/// poor [0, 1], good [3, 6], excellent [9, 14] with gaps of at least three
/// times the in-class spread.
fn speed_band(label: MotionLabel) -> (f64, f64) {
    match label {
        MotionLabel::Poor => (0.0, 0.7),
        MotionLabel::Good => (4.0, 5.0),
        MotionLabel::Excellent => (10.5, 12.0),
    }
}

/// Axis-aligned cell that confines one benchmark trajectory.
#[derive(Debug, Clone, Copy)]
struct Cell {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
}

impl Cell {
    fn center(&self) -> Point {
        Point::new(self.x0 + self.w / 2.0, self.y0 + self.h / 2.0)
    }
}

const CELL_MARGIN: f64 = 14.0;
/// Shortest lifetime that keeps an excellent mover's VCL inside its band.
const MIN_LIFE: usize = 15;

fn benchmark_object(rng: &mut ChaCha8Rng, label: MotionLabel, cell: Cell, frames: usize) -> ObjectSpec {
    // progressive movers go straight or wobble; the rest barely get anywhere
    let kind = match (label, rng.random_range(0..3)) {
        (MotionLabel::Poor, 0) => MotionKind::Stationary,
        (MotionLabel::Poor, 1) => MotionKind::Linear,
        (MotionLabel::Poor, _) => MotionKind::Circular,
        (_, 0) => MotionKind::Linear,
        (_, _) => MotionKind::Sinusoid,
    };
    let (lo, hi) = speed_band(label);
    let speed = match kind {
        MotionKind::Stationary => 0.0,
        _ => rng.random_range(lo.max(0.2)..hi),
    };
    let (amplitude, period) = match (kind, label) {
        (MotionKind::Circular, MotionLabel::Poor) => (rng.random_range(3.0..6.0), 0.0),
        (MotionKind::Circular, _) => (rng.random_range(12.0..16.0), 0.0),
        (MotionKind::Sinusoid, _) => (rng.random_range(1.5..4.0), rng.random_range(14.0..24.0)),
        _ => (0.0, 0.0),
    };
    let span = cell.w - 2.0 * CELL_MARGIN;
    let straight = matches!(kind, MotionKind::Linear | MotionKind::Sinusoid);
    // longest life whose straight travel still fits the cell
    let max_life = if straight && speed > 0.0 {
        ((span / speed).floor() as usize + 1).min(frames)
    } else {
        frames
    };
    let (enter_frame, exit_frame) = if max_life < frames {
        let life = rng.random_range(MIN_LIFE.min(max_life)..=max_life);
        let enter = rng.random_range(0..=frames - life);
        (enter, enter + life)
    } else {
        let enter = if rng.random_bool(0.25) { rng.random_range(1..=5) } else { 0 };
        let exit = if rng.random_bool(0.25) { frames - rng.random_range(1..=5) } else { frames };
        (enter, exit)
    };
    let travel = speed * (exit_frame - enter_frame - 1) as f64;
    let backwards = rng.random_bool(0.5);
    let tilt: f64 = rng.random_range(-2.0..2.0);
    let heading_deg: f64 = if backwards { 180.0 + tilt } else { tilt };
    let c = cell.center();
    let start = match kind {
        MotionKind::Linear | MotionKind::Sinusoid => {
            let x = cell.x0 + CELL_MARGIN + rng.random_range(0.0..(span - travel).max(1.0));
            Point::new(if backwards { x + travel } else { x }, c.y)
        }
        // on the circle, so that its center is the cell center
        MotionKind::Circular => {
            let h = heading_deg.to_radians();
            c + Point::new(h.cos(), h.sin()) * amplitude
        }
        MotionKind::Stationary => Point::new(c.x + rng.random_range(-span / 2.0..span / 2.0), c.y),
    };
    ObjectSpec {
        kind,
        start,
        speed,
        heading_deg,
        amplitude,
        period,
        radius: rng.random_range(6.5..8.5),
        peak_intensity: rng.random_range(170..=230),
        enter_frame,
        exit_frame,
        label,
    }
}

/// The default labelled benchmark: ten scenes, each a 2x9 grid of cells with
/// one trajectory confined to every cell, six per class.
pub fn default_benchmark(seed: u64) -> Benchmark {
    default_benchmark_with_noise(seed, 4.0)
}

pub fn default_benchmark_with_noise(seed: u64, noise_sigma: f64) -> Benchmark {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let cell_w = BENCH_WIDTH as f64 / BENCH_COLS as f64;
    let cell_h = BENCH_HEIGHT as f64 / BENCH_ROWS as f64;
    let per_class = BENCH_OBJECTS_PER_SCENE / MotionLabel::ALL.len();
    let mut scenes = Vec::with_capacity(BENCH_SCENES);
    let mut tracks = Vec::new();
    for s in 0..BENCH_SCENES {
        let scene_seed = splitmix(seed ^ splitmix(s as u64 + 1));
        let mut labels: Vec<MotionLabel> = MotionLabel::ALL
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l, per_class))
            .collect();
        labels.shuffle(&mut master);
        let objects: Vec<ObjectSpec> = labels
            .iter()
            .enumerate()
            .map(|(k, &label)| {
                // per-object stream split from the master seed
                let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
                rng.set_stream(k as u64 + 1);
                let cell = Cell {
                    x0: (k % BENCH_COLS) as f64 * cell_w,
                    y0: (k / BENCH_COLS) as f64 * cell_h,
                    w: cell_w,
                    h: cell_h,
                };
                benchmark_object(&mut rng, label, cell, BENCH_FRAMES)
            })
            .collect();
        for (i, o) in objects.iter().enumerate() {
            let local_id = i as u32 + 1;
            tracks.push(BenchmarkTrack {
                scene: s,
                local_id,
                global_id: s as u32 * TRACK_ID_STRIDE + local_id,
                label: o.label,
            });
        }
        scenes.push(SceneSpec {
            width: BENCH_WIDTH,
            height: BENCH_HEIGHT,
            frames: BENCH_FRAMES,
            fps: DEFAULT_FPS,
            objects,
            noise_sigma,
            background: 30.0,
            seed: scene_seed,
        });
    }
    let mut ids: Vec<u32> = tracks.iter().map(|t| t.global_id).collect();
    ids.shuffle(&mut master);
    let half = ids.len() / 2;
    let mut train = ids[..half].to_vec();
    let mut test = ids[half..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Benchmark {
        scenes,
        tracks,
        train,
        test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::polyline_length;

    fn one_object(kind: MotionKind, noise: f64) -> SceneSpec {
        let mut spec = single_object_scene(42);
        spec.objects[0].kind = kind;
        spec.noise_sigma = noise;
        spec
    }

    #[test]
    fn stationary_noise_free_frames_identical() {
        let s = generate(&one_object(MotionKind::Stationary, 0.0)).unwrap();
        let f0 = &s.video.frames()[0];
        assert!(s.video.frames().iter().all(|f| f == f0));
        let gt = &s.ground_truth[0];
        assert_eq!(gt.len(), 30);
        assert_eq!(gt.first().centroid, gt.last().centroid);
    }

    #[test]
    fn linear_gt_length() {
        let mut spec = one_object(MotionKind::Linear, 0.0);
        spec.frames = 40;
        spec.width = 200;
        spec.objects[0].exit_frame = 40;
        spec.objects[0].speed = 2.0;
        spec.objects[0].heading_deg = 0.0;
        let s = generate(&spec).unwrap();
        let pts: Vec<Point> = s.ground_truth[0].centroids().collect();
        assert!((polyline_length(&pts) - 78.0).abs() < 1e-9);
    }

    #[test]
    fn seeded_determinism() {
        let a = generate(&single_object_scene(42)).unwrap();
        let b = generate(&single_object_scene(42)).unwrap();
        assert_eq!(crate::framestore::encode_raw(&a.video), crate::framestore::encode_raw(&b.video));
        let c = generate(&single_object_scene(43)).unwrap();
        assert_ne!(a.video.frames()[0], c.video.frames()[0]);
    }

    #[test]
    fn spec_violations() {
        let mut s = single_object_scene(1);
        s.objects[0].peak_intensity = 35;
        assert!(matches!(generate(&s), Err(SynthError::SpecViolation(_))));
        let mut s = single_object_scene(1);
        s.objects[0].exit_frame = 0;
        assert!(generate(&s).is_err());
        let mut s = single_object_scene(1);
        s.frames = 1;
        assert!(generate(&s).is_err());
        let mut s = single_object_scene(1);
        s.objects[0].start = Point::new(-3.0, 4.0);
        assert!(generate(&s).is_err());
    }

    #[test]
    fn render_translation_equivariant() {
        let mut a = one_object(MotionKind::Stationary, 0.0);
        a.objects[0].start = Point::new(40.25, 50.5);
        let mut b = a.clone();
        b.objects[0].start = Point::new(47.25, 53.5);
        let ra = render_exact(&a, 0);
        let rb = render_exact(&b, 0);
        for y in 20..80 {
            for x in 10..100 {
                let va = ra[y * a.width + x];
                let vb = rb[(y + 3) * a.width + x + 7];
                assert!((va - vb).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn circular_starts_at_start() {
        let mut s = one_object(MotionKind::Circular, 0.0);
        s.objects[0].amplitude = 10.0;
        let o = &s.objects[0];
        assert!(o.position(0.0).distance(o.start) < 1e-12);
        let chord = o.position(1.0).distance(o.position(0.0));
        assert!((chord - 2.0 * 10.0 * (0.15f64).sin()).abs() < 1e-9);
    }

    #[test]
    fn benchmark_construction() {
        let b = default_benchmark(7);
        assert_eq!(b.tracks.len(), 180);
        assert_eq!((b.train.len(), b.test.len()), (90, 90));
        for l in MotionLabel::ALL {
            assert_eq!(b.tracks.iter().filter(|t| t.label == l).count(), 60);
        }
        assert_eq!(b, default_benchmark(7));
        for s in &b.scenes {
            s.validate().unwrap();
        }
    }

    #[test]
    fn benchmark_gt_vcl_bands() {
        let b = default_benchmark(11);
        let mut means = [0.0f64; 3];
        for s in &b.scenes {
            for o in &s.objects {
                let pts: Vec<Point> = (o.enter_frame..o.exit_frame)
                    .map(|j| o.position((j - o.enter_frame) as f64))
                    .collect();
                let vcl = polyline_length(&pts) / pts.len() as f64;
                let (lo, hi) = match o.label {
                    MotionLabel::Poor => (0.0, 1.0),
                    MotionLabel::Good => (3.0, 6.0),
                    MotionLabel::Excellent => (9.0, 14.0),
                };
                assert!(vcl >= lo && vcl <= hi, "{:?} {:?} vcl {vcl}", o.label, o.kind);
                means[o.label.index()] += vcl / 60.0;
                // stays inside the frame
                for p in &pts {
                    assert!(p.x > 10.0 && p.x < (s.width - 10) as f64 && p.y > 10.0 && p.y < (s.height - 10) as f64);
                }
            }
        }
        assert!(means[1] - means[0] >= 2.0 && means[2] - means[1] >= 2.0);
    }

    #[test]
    fn benchmark_objects_stay_apart() {
        let b = default_benchmark(3);
        for s in &b.scenes {
            for j in 0..s.frames {
                let live: Vec<Point> = s
                    .objects
                    .iter()
                    .filter(|o| o.visible(j))
                    .map(|o| o.position((j - o.enter_frame) as f64))
                    .collect();
                for (a, p) in live.iter().enumerate() {
                    for q in &live[a + 1..] {
                        assert!(p.distance(*q) > 25.0, "frame {j}: {p:?} {q:?}");
                    }
                }
            }
        }
    }
}
