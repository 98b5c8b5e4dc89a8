//! Frame-to-frame association of detections into tracks.
//!
//! Matching is greedy global nearest neighbor: every (track, detection) pair
//! inside the gate is ranked by distance and accepted when both sides are
//! still free. Unmatched detections open new tracks; a track that goes
//! unmatched for more than `miss_tolerance` consecutive frames is ended.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::segmentation::Detection;
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame_index: usize,
    pub centroid: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackState {
    Active,
    Ended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u32,
    pub points: Vec<TrackPoint>,
    pub state: TrackState,
    /// Consecutive frames without a match.
    #[serde(default)]
    pub misses: usize,
}

impl Track {
    pub fn new(id: u32, first: TrackPoint) -> Self {
        Self {
            id,
            points: vec![first],
            state: TrackState::Active,
            misses: 0,
        }
    }

    /// Builds an ended track from raw points (ground truth, imported CSV).
    pub fn from_points(id: u32, points: Vec<TrackPoint>) -> Self {
        Self {
            id,
            points,
            state: TrackState::Ended,
            misses: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> &TrackPoint {
        self.points.last().expect("track has at least one point")
    }

    pub fn first(&self) -> &TrackPoint {
        &self.points[0]
    }

    pub fn centroids(&self) -> impl Iterator<Item = Point> + '_ {
        self.points.iter().map(|p| p.centroid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub track_id: u32,
    pub detection: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    /// Detection indices that start new tracks.
    pub new_tracks: Vec<usize>,
    /// Tracks that found no detection this step.
    pub missed: Vec<u32>,
    /// Subset of `missed` whose miss count now exceeds the tolerance.
    pub ended_tracks: Vec<u32>,
}

/// One association step between the active tracks and the next frame's detections.
pub fn match_step(
    active_tracks: &[Track],
    detections: &[Detection],
    gate: f64,
    miss_tolerance: usize,
) -> MatchResult {
    let mut candidates: Vec<(f64, u32, usize, usize)> = Vec::new();
    for (ti, track) in active_tracks.iter().enumerate() {
        let last = track.last().centroid;
        for (di, det) in detections.iter().enumerate() {
            let d = last.distance(det.centroid);
            if d <= gate {
                candidates.push((d, track.id, di, ti));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut track_taken = vec![false; active_tracks.len()];
    let mut det_taken = vec![false; detections.len()];
    let mut result = MatchResult::default();
    for (d, id, di, ti) in candidates {
        if track_taken[ti] || det_taken[di] {
            continue;
        }
        track_taken[ti] = true;
        det_taken[di] = true;
        result.pairs.push(MatchPair {
            track_id: id,
            detection: di,
            distance: d,
        });
    }
    result.new_tracks = (0..detections.len()).filter(|&i| !det_taken[i]).collect();
    for (ti, track) in active_tracks.iter().enumerate() {
        if !track_taken[ti] {
            result.missed.push(track.id);
            if track.misses + 1 > miss_tolerance {
                result.ended_tracks.push(track.id);
            }
        }
    }
    result
}

/// Runs [`match_step`] over every frame. Frame `j` of the output corresponds
/// to `detections_per_frame[j]`. Tracks are returned in id order, ids start
/// at 1 and follow creation order (raster order within a frame).
pub fn build_tracks(detections_per_frame: &[Vec<Detection>], gate: f64, miss_tolerance: usize) -> Vec<Track> {
    let mut active: Vec<Track> = Vec::new();
    let mut finished: Vec<Track> = Vec::new();
    let mut next_id = 1u32;
    for (frame_index, detections) in detections_per_frame.iter().enumerate() {
        let step = match_step(&active, detections, gate, miss_tolerance);
        for pair in &step.pairs {
            let track = active.iter_mut().find(|t| t.id == pair.track_id).unwrap();
            track.points.push(TrackPoint {
                frame_index,
                centroid: detections[pair.detection].centroid,
            });
            track.misses = 0;
        }
        for id in &step.missed {
            active.iter_mut().find(|t| t.id == *id).unwrap().misses += 1;
        }
        if !step.ended_tracks.is_empty() {
            let (ended, keep): (Vec<Track>, Vec<Track>) =
                active.into_iter().partition(|t| step.ended_tracks.contains(&t.id));
            active = keep;
            finished.extend(ended.into_iter().map(|mut t| {
                t.state = TrackState::Ended;
                t
            }));
        }
        for &di in &step.new_tracks {
            active.push(Track::new(
                next_id,
                TrackPoint {
                    frame_index,
                    centroid: detections[di].centroid,
                },
            ));
            next_id += 1;
        }
    }
    finished.extend(active);
    finished.sort_by_key(|t| t.id);
    finished
}

pub fn tracks_to_csv(tracks: &[Track]) -> String {
    let mut out = String::from("track_id,frame_index,x,y\n");
    for t in tracks {
        for p in &t.points {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                t.id, p.frame_index, p.centroid.x, p.centroid.y
            ));
        }
    }
    out
}

pub fn write_tracks_csv(path: &Path, tracks: &[Track]) -> io::Result<()> {
    fs::write(path, tracks_to_csv(tracks))
}

/// Parses the track CSV. Rows of one track need not be contiguous; points are
/// sorted by frame index and tracks by id.
pub fn parse_tracks_csv(text: &str) -> io::Result<Vec<Track>> {
    let mut by_id: std::collections::BTreeMap<u32, Vec<TrackPoint>> = Default::default();
    for (n, line) in text.lines().enumerate() {
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || io::Error::new(io::ErrorKind::InvalidData, format!("bad track row {}: {line}", n + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let id: u32 = f[0].parse().map_err(|_| bad())?;
        let frame_index: usize = f[1].parse().map_err(|_| bad())?;
        let x: f64 = f[2].parse().map_err(|_| bad())?;
        let y: f64 = f[3].parse().map_err(|_| bad())?;
        by_id.entry(id).or_default().push(TrackPoint {
            frame_index,
            centroid: Point::new(x, y),
        });
    }
    Ok(by_id
        .into_iter()
        .map(|(id, mut pts)| {
            pts.sort_by_key(|p| p.frame_index);
            Track::from_points(id, pts)
        })
        .collect())
}

pub fn read_tracks_csv(path: &Path) -> io::Result<Vec<Track>> {
    parse_tracks_csv(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame_index: usize, x: f64, y: f64) -> Detection {
        Detection {
            frame_index,
            centroid: Point::new(x, y),
            area: 9,
            component_id: 0,
        }
    }

    fn track_at(id: u32, x: f64, y: f64) -> Track {
        Track::new(
            id,
            TrackPoint {
                frame_index: 0,
                centroid: Point::new(x, y),
            },
        )
    }

    #[test]
    fn three_four_five() {
        let r = match_step(&[track_at(1, 10.0, 10.0)], &[det(1, 13.0, 14.0)], 10.0, 0);
        assert_eq!(r.pairs.len(), 1);
        assert_eq!(r.pairs[0].distance, 5.0);
        assert!(r.new_tracks.is_empty() && r.ended_tracks.is_empty());
    }

    /// Enumerates every partial assignment within the gate and returns the
    /// minimum total distance among those with the maximum number of pairs.
    fn brute_force_cost(tracks: &[Track], dets: &[Detection], gate: f64) -> (usize, f64) {
        fn rec(ti: usize, tracks: &[Track], dets: &[Detection], used: &mut Vec<bool>, gate: f64) -> (usize, f64) {
            if ti == tracks.len() {
                return (0, 0.0);
            }
            let mut best = rec(ti + 1, tracks, dets, used, gate);
            for di in 0..dets.len() {
                let d = tracks[ti].last().centroid.distance(dets[di].centroid);
                if !used[di] && d <= gate {
                    used[di] = true;
                    let (n, c) = rec(ti + 1, tracks, dets, used, gate);
                    used[di] = false;
                    let cand = (n + 1, c + d);
                    if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                        best = cand;
                    }
                }
            }
            best
        }
        rec(0, tracks, dets, &mut vec![false; dets.len()], gate)
    }

    #[test]
    fn greedy_equals_optimal_on_parallel_pair() {
        let tracks = [track_at(1, 0.0, 0.0), track_at(2, 10.0, 0.0)];
        let dets = [det(1, 1.0, 0.0), det(1, 9.0, 0.0)];
        let r = match_step(&tracks, &dets, 5.0, 0);
        assert_eq!(
            r.pairs,
            vec![
                MatchPair { track_id: 1, detection: 0, distance: 1.0 },
                MatchPair { track_id: 2, detection: 1, distance: 1.0 },
            ]
        );
        let (n, cost) = brute_force_cost(&tracks, &dets, 5.0);
        assert_eq!(n, r.pairs.len());
        assert_eq!(cost, r.pairs.iter().map(|p| p.distance).sum::<f64>());
    }

    #[test]
    fn no_detections_all_miss() {
        let tracks = [track_at(1, 0.0, 0.0), track_at(2, 5.0, 5.0)];
        let r = match_step(&tracks, &[], 5.0, 0);
        assert!(r.pairs.is_empty());
        assert_eq!(r.missed, vec![1, 2]);
        assert_eq!(r.ended_tracks, vec![1, 2]);
        let r = match_step(&tracks, &[], 5.0, 1);
        assert_eq!(r.missed, vec![1, 2]);
        assert!(r.ended_tracks.is_empty());
    }

    #[test]
    fn ties_prefer_lower_track_then_detection() {
        let tracks = [track_at(2, 0.0, 0.0), track_at(1, 2.0, 0.0)];
        let dets = [det(1, 1.0, 0.0)];
        let r = match_step(&tracks, &dets, 5.0, 0);
        assert_eq!(r.pairs[0].track_id, 1);
        assert_eq!(r.ended_tracks, vec![2]);

        let dets = [det(1, 0.0, 1.0), det(1, 0.0, -1.0)];
        let r = match_step(&[track_at(1, 0.0, 0.0)], &dets, 5.0, 0);
        assert_eq!(r.pairs[0].detection, 0);
        assert_eq!(r.new_tracks, vec![1]);
    }

    #[test]
    fn single_mover_one_track() {
        let per_frame: Vec<Vec<Detection>> = (0..40).map(|j| vec![det(j, 10.0 + 2.0 * j as f64, 50.0)]).collect();
        let tracks = build_tracks(&per_frame, 10.0, 0);
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 40);
        assert_eq!(tracks[0].id, 1);
    }

    #[test]
    fn exit_and_entry_lifecycle() {
        let per_frame: Vec<Vec<Detection>> = (0..40)
            .map(|j| {
                let mut v = Vec::new();
                if j < 20 {
                    v.push(det(j, 20.0 + j as f64, 10.0));
                }
                v.push(det(j, 20.0 + j as f64, 100.0));
                if j >= 15 {
                    v.push(det(j, 300.0, 200.0));
                }
                v
            })
            .collect();
        let tracks = build_tracks(&per_frame, 10.0, 0);
        assert_eq!(tracks.len(), 3);
        assert_eq!(tracks[0].len(), 20);
        assert_eq!(tracks[0].state, TrackState::Ended);
        assert_eq!(tracks[1].len(), 40);
        assert_eq!(tracks[1].state, TrackState::Active);
        assert_eq!(tracks[2].first().frame_index, 15);
    }

    #[test]
    fn miss_tolerance_bridges_gap() {
        let per_frame: Vec<Vec<Detection>> = (0..10)
            .map(|j| if j == 4 { vec![] } else { vec![det(j, j as f64, 0.0)] })
            .collect();
        assert_eq!(build_tracks(&per_frame, 5.0, 0).len(), 2);
        let bridged = build_tracks(&per_frame, 5.0, 1);
        assert_eq!(bridged.len(), 1);
        assert_eq!(bridged[0].len(), 9);
    }

    #[test]
    fn csv_round_trip() {
        let per_frame: Vec<Vec<Detection>> =
            (0..5).map(|j| vec![det(j, 1.25 * j as f64, 3.5), det(j, 40.0, 7.123456)]).collect();
        let tracks = build_tracks(&per_frame, 5.0, 0);
        let text = tracks_to_csv(&tracks);
        let back = parse_tracks_csv(&text).unwrap();
        assert_eq!(tracks_to_csv(&back), text);
        assert_eq!(back.len(), 2);
        assert!(parse_tracks_csv("h\n1,2,x,4\n").is_err());
    }
}
