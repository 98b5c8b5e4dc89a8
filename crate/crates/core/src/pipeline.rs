//! End-to-end composition: frames to tracks to foldovers to features.
//!
//! Per-frame and per-track stages run on the current rayon pool; results are
//! collected in input order so the output never depends on thread count.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::classify::{self, MetricsReport};
use crate::config::{PipelineConfig, Threshold};
use crate::features::{self, FeatureSet, KinematicSummary, WhoGrade};
use crate::foldover::{self, Axis, Foldover, FoldoverError, Grid, Projection};
use crate::framestore::VideoSequence;
use crate::segmentation::{self, BinaryMask, Detection};
use crate::synth::{self, Benchmark, MotionLabel};
use crate::tracking::{self, Track};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Foldover(#[from] FoldoverError),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub thresholds: Vec<u8>,
    pub masks: Vec<BinaryMask>,
    pub detections: Vec<Vec<Detection>>,
}

pub fn segment_video(video: &VideoSequence, cfg: &PipelineConfig) -> Segmentation {
    let per_frame: Vec<(u8, BinaryMask, Vec<Detection>)> = video
        .frames()
        .par_iter()
        .enumerate()
        .map(|(j, frame)| {
            let t = match cfg.threshold {
                Threshold::Otsu => segmentation::otsu_threshold(frame),
                Threshold::Fixed(t) => t,
            };
            let mask = segmentation::binarize(frame, t, cfg.polarity);
            let dets = segmentation::detect(&mask, j, cfg.min_area);
            (t, mask, dets)
        })
        .collect();
    let mut out = Segmentation {
        thresholds: Vec::with_capacity(per_frame.len()),
        masks: Vec::with_capacity(per_frame.len()),
        detections: Vec::with_capacity(per_frame.len()),
    };
    for (t, m, d) in per_frame {
        out.thresholds.push(t);
        out.masks.push(m);
        out.detections.push(d);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackAnalysis {
    pub track_id: u32,
    pub gamma: usize,
    /// Foldover after rotation to +X.
    pub foldover: Foldover,
    pub projections: Vec<Projection>,
    pub kinematics: KinematicSummary,
    pub features: FeatureSet,
    pub vcl_um_per_s: f64,
    pub grade: WhoGrade,
}

/// Projections, kinematics and assembled features of a rotated foldover grid.
pub fn describe_grid(
    track: &Track,
    grid: &Grid,
    cfg: &PipelineConfig,
) -> Result<(Vec<Projection>, KinematicSummary, FeatureSet), PipelineError> {
    let steps = cfg.steps();
    let projections: Vec<Projection> = Axis::ALL
        .iter()
        .map(|&a| foldover::project_grid(grid, a, steps.for_axis(a)))
        .collect();
    let (extent_x, extent_y) = grid
        .support_bbox()
        .map_or((0, 0), |(x0, y0, x1, y1)| (x1 - x0 + 1, y1 - y0 + 1));
    let kin = features::kinematics(track, extent_x as f64, extent_y as f64);
    let desc: Vec<_> = projections
        .iter()
        .map(|p| features::conv_descriptor(p, cfg.e, cfg.passes, cfg.d))
        .collect();
    let set = features::assemble(&kin, &desc[0], &desc[1], &desc[2])?;
    Ok((projections, kin, set))
}

pub fn analyze_track(
    track: &Track,
    video: &VideoSequence,
    masks: &[BinaryMask],
    cfg: &PipelineConfig,
) -> Result<TrackAnalysis, PipelineError> {
    let raw = foldover::accumulate(track, video, masks, cfg.r)?;
    let rotated = foldover::rotate_to_positive_x(&raw, cfg.min_displacement);
    let (projections, kin, set) = describe_grid(track, &rotated.grid, cfg)?;
    let fps = cfg.fps.unwrap_or(video.fps());
    let vcl_um_per_s = features::to_um_per_s(kin.vcl, cfg.um_per_px, fps);
    Ok(TrackAnalysis {
        track_id: track.id,
        gamma: track.len(),
        foldover: rotated,
        projections,
        kinematics: kin,
        features: set,
        vcl_um_per_s,
        grade: features::who_grade(vcl_um_per_s),
    })
}

/// Analyses tracks with at least `cfg.min_track_len` points, in input order.
pub fn analyze_tracks(
    tracks: &[Track],
    video: &VideoSequence,
    masks: &[BinaryMask],
    cfg: &PipelineConfig,
) -> Result<Vec<TrackAnalysis>, PipelineError> {
    tracks
        .par_iter()
        .filter(|t| t.len() >= cfg.min_track_len)
        .map(|t| analyze_track(t, video, masks, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoAnalysis {
    pub segmentation: Segmentation,
    pub tracks: Vec<Track>,
    pub analyses: Vec<TrackAnalysis>,
}

pub fn analyze_video(video: &VideoSequence, cfg: &PipelineConfig) -> Result<VideoAnalysis, PipelineError> {
    cfg.validate()?;
    let segmentation = segment_video(video, cfg);
    let tracks = tracking::build_tracks(&segmentation.detections, cfg.gate, cfg.miss_tolerance);
    let analyses = analyze_tracks(&tracks, video, &segmentation.masks, cfg)?;
    Ok(VideoAnalysis {
        segmentation,
        tracks,
        analyses,
    })
}

/// Shifts every track id by `offset` (used when several videos share one output).
pub fn offset_ids(tracks: &mut [Track], offset: u32) {
    for t in tracks {
        t.id += offset;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackMatch {
    pub recovered_id: u32,
    pub gt_id: u32,
    pub mean_error: f64,
    pub max_error: f64,
    /// GT frames the recovered track does not cover.
    pub missing_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingEvaluation {
    pub matches: Vec<TrackMatch>,
    /// Recovered tracks whose nearest GT object changes along the track.
    pub identity_switches: usize,
    /// Recovered tracks with no GT object present on their frames.
    pub spurious: Vec<u32>,
    pub unmatched_gt: Vec<u32>,
    /// GT objects claimed by more than one recovered track.
    pub fragmented_gt: Vec<u32>,
}

impl TrackingEvaluation {
    /// One recovered track per GT object, covering all of its frames.
    pub fn is_exact(&self) -> bool {
        self.identity_switches == 0
            && self.spurious.is_empty()
            && self.unmatched_gt.is_empty()
            && self.fragmented_gt.is_empty()
            && self.matches.iter().all(|m| m.missing_frames == 0)
    }
}

/// Assigns every recovered point to the nearest GT object visible in that frame.
pub fn evaluate_tracking(recovered: &[Track], ground_truth: &[Track]) -> TrackingEvaluation {
    let gt_at: Vec<BTreeMap<usize, crate::Point>> = ground_truth
        .iter()
        .map(|g| g.points.iter().map(|p| (p.frame_index, p.centroid)).collect())
        .collect();
    let mut matches = Vec::new();
    let mut spurious = Vec::new();
    let mut identity_switches = 0;
    let mut claims: BTreeMap<u32, usize> = BTreeMap::new();
    for r in recovered {
        let mut owner: Option<usize> = None;
        let mut switched = false;
        let mut errs = Vec::with_capacity(r.len());
        for p in &r.points {
            let nearest = gt_at
                .iter()
                .enumerate()
                .filter_map(|(gi, m)| m.get(&p.frame_index).map(|c| (gi, c.distance(p.centroid))))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match (nearest, owner) {
                (Some((gi, _)), Some(o)) if gi != o => switched = true,
                (Some((gi, _)), None) => owner = Some(gi),
                _ => {}
            }
            if let Some(c) = owner.and_then(|o| gt_at[o].get(&p.frame_index)) {
                errs.push(c.distance(p.centroid));
            }
        }
        if switched {
            identity_switches += 1;
        }
        match owner {
            None => spurious.push(r.id),
            Some(o) => {
                let g = &ground_truth[o];
                *claims.entry(g.id).or_default() += 1;
                let covered: BTreeSet<usize> = r.points.iter().map(|p| p.frame_index).collect();
                matches.push(TrackMatch {
                    recovered_id: r.id,
                    gt_id: g.id,
                    mean_error: errs.iter().sum::<f64>() / errs.len().max(1) as f64,
                    max_error: errs.iter().cloned().fold(0.0, f64::max),
                    missing_frames: g.points.iter().filter(|p| !covered.contains(&p.frame_index)).count(),
                });
            }
        }
    }
    let unmatched_gt = ground_truth.iter().map(|g| g.id).filter(|id| !claims.contains_key(id)).collect();
    let fragmented_gt = claims.iter().filter(|(_, &n)| n > 1).map(|(&id, _)| id).collect();
    TrackingEvaluation {
        matches,
        identity_switches,
        spurious,
        unmatched_gt,
        fragmented_gt,
    }
}

/// One benchmark scene after the full pipeline, with ids shifted to the
/// global `scene * TRACK_ID_STRIDE + local` scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRun {
    pub scene: usize,
    pub analysis: VideoAnalysis,
    pub evaluation: TrackingEvaluation,
}

/// Renders and analyses every benchmark scene. Scenes run in order; each one
/// parallelises internally.
pub fn run_benchmark(bench: &Benchmark, cfg: &PipelineConfig) -> Result<Vec<SceneRun>, PipelineError> {
    let mut runs = Vec::with_capacity(bench.scenes.len());
    for (s, spec) in bench.scenes.iter().enumerate() {
        let scene = synth::generate(spec)?;
        let offset = s as u32 * synth::TRACK_ID_STRIDE;
        let mut analysis = analyze_video(&scene.video, cfg)?;
        offset_ids(&mut analysis.tracks, offset);
        for a in &mut analysis.analyses {
            a.track_id += offset;
            a.foldover.track_id += offset;
        }
        let mut gt = scene.ground_truth;
        offset_ids(&mut gt, offset);
        let evaluation = evaluate_tracking(&analysis.tracks, &gt);
        runs.push(SceneRun {
            scene: s,
            analysis,
            evaluation,
        });
    }
    Ok(runs)
}

/// Recovered track id to the GT id it follows.
pub fn recovered_to_gt(runs: &[SceneRun]) -> BTreeMap<u32, u32> {
    runs.iter()
        .flat_map(|r| r.evaluation.matches.iter().map(|m| (m.recovered_id, m.gt_id)))
        .collect()
}

/// Nearest-centroid scores for one axis, training on recovered tracks whose
/// GT id is in `train` and testing on those in `test`.
pub fn evaluate_split(
    analyses: &[&TrackAnalysis],
    to_gt: &BTreeMap<u32, u32>,
    labels: &BTreeMap<u32, MotionLabel>,
    train: &[u32],
    test: &[u32],
    axis: Axis,
) -> Result<MetricsReport, classify::ClassifyError> {
    let train: BTreeSet<u32> = train.iter().copied().collect();
    let test: BTreeSet<u32> = test.iter().copied().collect();
    let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for a in analyses {
        let Some(gt) = to_gt.get(&a.track_id) else { continue };
        let Some(label) = labels.get(gt) else { continue };
        let v = a.features.get(axis).values();
        if train.contains(gt) {
            xtr.push(v);
            ytr.push(label.index());
        } else if test.contains(gt) {
            xte.push(v);
            yte.push(label.index());
        }
    }
    let pred = classify::nearest_centroid(&xtr, &ytr, &xte, classify::NUM_CLASSES)?;
    classify::metrics(&classify::confusion(&pred, &yte)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn single_object_end_to_end() {
        let scene = synth::generate(&synth::single_object_scene(5)).unwrap();
        let cfg = PipelineConfig::default();
        let out = analyze_video(&scene.video, &cfg).unwrap();
        assert_eq!(out.tracks.len(), 1);
        let eval = evaluate_tracking(&out.tracks, &scene.ground_truth);
        assert!(eval.is_exact(), "{eval:?}");
        assert!(eval.matches[0].mean_error < 0.5);
        let a = &out.analyses[0];
        assert_eq!(a.gamma, 30);
        assert!((a.kinematics.vcl - 3.0 * 29.0 / 30.0).abs() < 0.3);
        assert_eq!(a.grade, WhoGrade::A); // ~2.9 px/frame * 30 fps
        assert_eq!(a.features.z.len(), 9 + 256);
        // rotated streak lies along X
        assert!(a.foldover.extent_x() > 3 * a.foldover.extent_y());
    }

    #[test]
    fn evaluation_flags_switches() {
        use crate::tracking::TrackPoint;
        use crate::Point;
        let mk = |id, pts: &[(usize, f64)]| {
            Track::from_points(
                id,
                pts.iter()
                    .map(|&(j, x)| TrackPoint {
                        frame_index: j,
                        centroid: Point::new(x, 0.0),
                    })
                    .collect(),
            )
        };
        let gt = vec![mk(1, &[(0, 0.0), (1, 1.0), (2, 2.0)]), mk(2, &[(0, 50.0), (1, 51.0), (2, 52.0)])];
        let good = vec![mk(7, &[(0, 0.1), (1, 1.1), (2, 2.1)]), mk(8, &[(0, 50.0), (1, 51.0), (2, 52.0)])];
        let e = evaluate_tracking(&good, &gt);
        assert!(e.is_exact());
        assert!((e.matches[0].mean_error - 0.1).abs() < 1e-9);
        let swapped = vec![mk(7, &[(0, 0.0), (1, 51.0), (2, 2.0)])];
        let e = evaluate_tracking(&swapped, &gt);
        assert_eq!(e.identity_switches, 1);
        assert_eq!(e.unmatched_gt, vec![2]);
    }
}
