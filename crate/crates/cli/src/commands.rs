use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use foldover::classify::{self, MetricsReport, CLASS_NAMES};
use foldover::features::{self, FeatureRow};
use foldover::foldover::{self as fo, Axis, Grid};
use foldover::framestore::{self, FrameStoreError, SequenceFormat, VideoSequence};
use foldover::pipeline::{self, TrackAnalysis, TrackingEvaluation};
use foldover::segmentation::{self, BinaryMask};
use foldover::synth::{self, TRACK_ID_STRIDE};
use foldover::tracking::{self, Track};
use foldover::PipelineConfig;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::{AxisArg, CliError, Command, Preset};

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| {
        if e.kind() == io::ErrorKind::InvalidData {
            CliError::Invalid(format!("{}: {e}", path.display()))
        } else {
            CliError::Io(format!("{}: {e}", path.display()))
        }
    }
}

fn store_err(e: FrameStoreError) -> CliError {
    match e {
        FrameStoreError::Io(e) => CliError::Io(e.to_string()),
        other => CliError::Invalid(other.to_string()),
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(invalid)?;
    write(path, text + "\n")
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn axis_of(a: AxisArg) -> Axis {
    match a {
        AxisArg::X => Axis::X,
        AxisArg::Y => Axis::Y,
        AxisArg::Z => Axis::Z,
    }
}

pub fn run(cmd: &Command, cfg: &PipelineConfig) -> Result<()> {
    match cmd {
        Command::Simulate { preset, seed, noise, out } => simulate(*preset, *seed, *noise, out),
        Command::Segment { input, out } => segment(input, out, cfg),
        Command::Track { detections, frames, out } => track(detections, *frames, out, cfg),
        Command::Foldover { input, masks, tracks, out } => foldover_cmd(input, masks, tracks, out, cfg),
        Command::Features { tracks, foldovers, labels, out } => features_cmd(tracks, foldovers, labels.as_deref(), out, cfg),
        Command::Classify { train, test, labels, axis, out } => classify_cmd(train, test, labels.as_deref(), axis_of(*axis), out),
        Command::Eval { features, labels, seed, json } => eval(features, labels.as_deref(), *seed, json.as_deref()),
        Command::Pipeline { input, out, gt, gt_labels, seed } => {
            pipeline_cmd(input, out, gt.as_deref(), gt_labels.as_deref(), *seed, cfg)
        }
    }
}

fn simulate(preset: Preset, seed: u64, noise: Option<f64>, out: &Path) -> Result<()> {
    mkdir(out)?;
    let specs = match preset {
        Preset::Single => vec![synth::single_object_scene(seed)],
        Preset::Benchmark => synth::default_benchmark(seed).scenes,
    };
    let mut gt = Vec::new();
    let mut labels = BTreeMap::new();
    for (s, mut spec) in specs.into_iter().enumerate() {
        if let Some(n) = noise {
            spec.noise_sigma = n;
        }
        let scene = synth::generate(&spec).map_err(invalid)?;
        let path = out.join(format!("scene_{s:03}.fold"));
        framestore::write_sequence(&scene.video, &path).map_err(io_err(&path))?;
        let offset = s as u32 * TRACK_ID_STRIDE;
        for mut t in scene.ground_truth {
            labels.insert(t.id + offset, scene.labels[&t.id].as_str().to_string());
            t.id += offset;
            gt.push(t);
        }
    }
    write(&out.join("gt.csv"), tracking::tracks_to_csv(&gt))?;
    write(&out.join("labels.csv"), classify::labels_to_csv(&labels))
}

fn load_video(path: &Path) -> Result<VideoSequence> {
    framestore::load_sequence(path, SequenceFormat::detect(path)).map_err(|e| located(path, e))
}

fn located(path: &Path, e: FrameStoreError) -> CliError {
    match store_err(e) {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        CliError::Invalid(m) => CliError::Invalid(format!("{}: {m}", path.display())),
    }
}

fn segment(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let video = load_video(input)?;
    let seg = pipeline::segment_video(&video, cfg);
    let masks = out.join("masks");
    mkdir(&masks)?;
    seg.masks.par_iter().enumerate().try_for_each(|(j, m)| {
        let p = masks.join(format!("mask_{j:04}.pgm"));
        m.write_pgm(&p).map_err(io_err(&p))
    })?;
    let det = out.join("detections.csv");
    segmentation::write_detections_csv(&det, &seg.detections).map_err(io_err(&det))?;
    let mut thr = String::from("frame_index,threshold\n");
    for (j, t) in seg.thresholds.iter().enumerate() {
        thr.push_str(&format!("{j},{t}\n"));
    }
    write(&out.join("thresholds.csv"), thr)
}

fn track(detections: &Path, frames: Option<usize>, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let per_frame = segmentation::read_detections_csv(detections, frames).map_err(io_err(detections))?;
    let tracks = tracking::build_tracks(&per_frame, cfg.gate, cfg.miss_tolerance);
    write(out, tracking::tracks_to_csv(&tracks))
}

fn read_tracks(path: &Path) -> Result<Vec<Track>> {
    tracking::read_tracks_csv(path).map_err(io_err(path))
}

fn load_masks(dir: &Path) -> Result<Vec<BinaryMask>> {
    let seq = framestore::load_sequence(dir, SequenceFormat::ImageDir).map_err(|e| located(dir, e))?;
    Ok(seq
        .frames()
        .iter()
        .map(|f| BinaryMask::from_bits(f.width(), f.height(), f.data().to_vec()).expect("frame-sized mask"))
        .collect())
}

fn foldover_cmd(input: &Path, masks: &Path, tracks: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let video = load_video(input)?;
    let masks = load_masks(masks)?;
    let tracks = read_tracks(tracks)?;
    mkdir(out)?;
    let steps = cfg.steps();
    tracks
        .par_iter()
        .filter(|t| t.len() >= cfg.min_track_len)
        .try_for_each(|t| {
            let raw = fo::accumulate(t, &video, &masks, cfg.r).map_err(invalid)?;
            let rotated = fo::rotate_to_positive_x(&raw, cfg.min_displacement);
            let projections: Vec<_> = Axis::ALL
                .iter()
                .map(|&a| fo::project(&rotated, a, steps.for_axis(a)))
                .collect();
            fo::write_artifacts(out, &rotated, &projections, steps).map_err(io_err(out))
        })
}

fn foldover_path(dir: &Path, id: u32) -> PathBuf {
    dir.join(format!("track_{id:04}.pgm"))
}

fn features_cmd(tracks: &Path, foldovers: &Path, labels: Option<&Path>, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let tracks = read_tracks(tracks)?;
    let labels = labels.map(read_label_file).transpose()?;
    let per_track: Vec<Option<Vec<FeatureRow>>> = tracks
        .par_iter()
        .map(|t| {
            let path = foldover_path(foldovers, t.id);
            if !path.exists() {
                return Ok(None);
            }
            let (w, h, data) = framestore::read_pgm16(&path).map_err(|e| located(&path, e))?;
            let grid = Grid::from_vec(w, h, data);
            let (_, _, set) = pipeline::describe_grid(t, &grid, cfg).map_err(invalid)?;
            let label = labels.as_ref().and_then(|m| m.get(&t.id)).map(String::as_str);
            Ok(Some(features::rows_for(t.id, &set, label)))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<FeatureRow> = per_track.into_iter().flatten().flatten().collect();
    write(out, features::features_to_csv(&rows, labels.is_some()))
}

fn read_label_file(path: &Path) -> Result<BTreeMap<u32, String>> {
    classify::parse_labels_csv(&read_text(path)?).map_err(io_err(path))
}

fn read_rows(path: &Path) -> Result<Vec<FeatureRow>> {
    features::read_features_csv(path).map_err(io_err(path))
}

/// Label indices, from the label file when given, otherwise from the rows.
fn label_indices(rows: &[FeatureRow], file: Option<&BTreeMap<u32, String>>) -> Result<BTreeMap<u32, usize>> {
    let mut out = BTreeMap::new();
    match file {
        Some(m) => {
            for (id, l) in m {
                out.insert(*id, classify::class_index(l).map_err(invalid)?);
            }
        }
        None => {
            for r in rows {
                if let Some(l) = &r.label {
                    out.insert(r.track_id, classify::class_index(l).map_err(invalid)?);
                }
            }
        }
    }
    Ok(out)
}

fn classify_cmd(train: &Path, test: &Path, labels: Option<&Path>, axis: Axis, out: &Path) -> Result<()> {
    let train_rows = read_rows(train)?;
    let test_rows = read_rows(test)?;
    let file = labels.map(read_label_file).transpose()?;
    let idx = label_indices(&train_rows, file.as_ref())?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for r in train_rows.iter().filter(|r| r.axis == axis) {
        if let Some(&l) = idx.get(&r.track_id) {
            x.push(r.values.clone());
            y.push(l);
        }
    }
    let test: Vec<&FeatureRow> = test_rows.iter().filter(|r| r.axis == axis).collect();
    let samples: Vec<Vec<f64>> = test.iter().map(|r| r.values.clone()).collect();
    let pred = classify::nearest_centroid(&x, &y, &samples, classify::NUM_CLASSES).map_err(invalid)?;
    let map: BTreeMap<u32, String> = test
        .iter()
        .zip(pred)
        .map(|(r, p)| (r.track_id, CLASS_NAMES[p].to_string()))
        .collect();
    write(out, classify::labels_to_csv(&map))
}

struct Evaluation {
    reports: Vec<(Axis, MetricsReport)>,
    train: Vec<u32>,
    test: Vec<u32>,
}

fn evaluate(rows: &[FeatureRow], labels: &BTreeMap<u32, usize>, seed: u64) -> Result<Evaluation> {
    let with_rows: BTreeSet<u32> = rows.iter().map(|r| r.track_id).collect();
    let ids: Vec<u32> = labels.keys().copied().filter(|id| with_rows.contains(id)).collect();
    if ids.len() < 2 {
        return Err(CliError::Invalid("need at least two labelled tracks to evaluate".into()));
    }
    let (train, test) = classify::seeded_split(&ids, seed);
    let train_set: BTreeSet<u32> = train.iter().copied().collect();
    let reports = Axis::ALL
        .iter()
        .map(|&a| {
            classify::evaluate_rows(rows, labels, &train_set, a)
                .map(|r| (a, r))
                .map_err(invalid)
        })
        .collect::<Result<_>>()?;
    Ok(Evaluation { reports, train, test })
}

fn eval_table(ev: &Evaluation) -> String {
    let names: Vec<String> = ev.reports.iter().map(|(a, _)| format!("F^{a}")).collect();
    let rows: Vec<(&str, &MetricsReport)> = names.iter().map(String::as_str).zip(ev.reports.iter().map(|(_, r)| r)).collect();
    classify::render_table(&rows)
}

fn eval_json(ev: &Evaluation, seed: u64) -> Value {
    let reports: serde_json::Map<String, Value> = ev
        .reports
        .iter()
        .map(|(a, r)| (format!("F^{a}"), serde_json::to_value(r).expect("serializable report")))
        .collect();
    json!({
        "seed": seed,
        "train": ev.train,
        "test": ev.test,
        "reports": reports,
    })
}

fn eval(features: &Path, labels: Option<&Path>, seed: u64, json_out: Option<&Path>) -> Result<()> {
    let rows = read_rows(features)?;
    let file = labels.map(read_label_file).transpose()?;
    let idx = label_indices(&rows, file.as_ref())?;
    let ev = evaluate(&rows, &idx, seed)?;
    print!("{}", eval_table(&ev));
    if let Some(p) = json_out {
        write_json(p, &eval_json(&ev, seed))?;
    }
    Ok(())
}

/// Sources for one pipeline run: a single video, or every `.fold` file of a directory.
fn pipeline_inputs(input: &Path) -> Result<Vec<VideoSequence>> {
    if input.is_dir() {
        let mut folds: Vec<PathBuf> = fs::read_dir(input)
            .map_err(io_err(input))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "fold"))
            .collect();
        if !folds.is_empty() {
            folds.sort();
            return folds.iter().map(|p| load_video(p)).collect();
        }
    }
    Ok(vec![load_video(input)?])
}

fn kinematics_json(a: &TrackAnalysis) -> Value {
    json!({
        "track_id": a.track_id,
        "gamma": a.gamma,
        "grade": a.grade.as_str(),
        "vcl_um_per_s": a.vcl_um_per_s,
        "kinematics": a.kinematics,
        "extent_x": a.foldover.extent_x(),
        "extent_y": a.foldover.extent_y(),
        "extent_z": a.foldover.extent_z(),
    })
}

fn tracking_json(video: usize, e: &TrackingEvaluation) -> Value {
    let mean = e.matches.iter().map(|m| m.mean_error).sum::<f64>() / e.matches.len().max(1) as f64;
    let worst = e.matches.iter().map(|m| m.mean_error).fold(0.0, f64::max);
    json!({
        "video": video,
        "exact": e.is_exact(),
        "matched": e.matches.len(),
        "identity_switches": e.identity_switches,
        "spurious": e.spurious,
        "unmatched_gt": e.unmatched_gt,
        "fragmented_gt": e.fragmented_gt,
        "mean_centroid_error": mean,
        "worst_track_mean_error": worst,
    })
}

fn pipeline_cmd(
    input: &Path,
    out: &Path,
    gt: Option<&Path>,
    gt_labels: Option<&Path>,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<()> {
    let videos = pipeline_inputs(input)?;
    let gt_tracks = gt.map(read_tracks).transpose()?;
    let gt_label_map = gt_labels.map(read_label_file).transpose()?;
    let fold_dir = out.join("foldovers");
    mkdir(&fold_dir)?;
    write(&out.join("config.txt"), cfg.to_text())?;

    let mut all_tracks = Vec::new();
    let mut analyses = Vec::new();
    let mut video_info = Vec::new();
    let mut tracking_info = Vec::new();
    let mut recovered_labels: BTreeMap<u32, String> = BTreeMap::new();
    for (v, video) in videos.iter().enumerate() {
        let offset = if videos.len() > 1 { v as u32 * TRACK_ID_STRIDE } else { 0 };
        let mut run = pipeline::analyze_video(video, cfg).map_err(invalid)?;
        pipeline::offset_ids(&mut run.tracks, offset);
        for a in &mut run.analyses {
            a.track_id += offset;
            a.foldover.track_id += offset;
        }
        if let Some(gt) = &gt_tracks {
            let lo = v as u32 * TRACK_ID_STRIDE;
            let mine: Vec<Track> = gt
                .iter()
                .filter(|t| videos.len() == 1 || (t.id >= lo && t.id < lo + TRACK_ID_STRIDE))
                .cloned()
                .collect();
            let e = pipeline::evaluate_tracking(&run.tracks, &mine);
            if let Some(labels) = &gt_label_map {
                for m in &e.matches {
                    if let Some(l) = labels.get(&m.gt_id) {
                        recovered_labels.insert(m.recovered_id, l.clone());
                    }
                }
            }
            tracking_info.push(tracking_json(v, &e));
        }
        video_info.push(json!({
            "id": video.id(),
            "frames": video.len(),
            "width": video.width(),
            "height": video.height(),
            "fps": video.fps(),
            "tracks": run.tracks.len(),
            "analysed": run.analyses.len(),
            "id_offset": offset,
        }));
        all_tracks.extend(run.tracks);
        analyses.extend(run.analyses);
    }

    write(&out.join("tracks.csv"), tracking::tracks_to_csv(&all_tracks))?;
    let steps = cfg.steps();
    analyses
        .par_iter()
        .try_for_each(|a| fo::write_artifacts(&fold_dir, &a.foldover, &a.projections, steps).map_err(io_err(&fold_dir)))?;
    let rows: Vec<FeatureRow> = analyses
        .iter()
        .flat_map(|a| features::rows_for(a.track_id, &a.features, None))
        .collect();
    write(&out.join("features.csv"), features::features_to_csv(&rows, false))?;

    let mut report = json!({
        "config_schema": crate::schema_hash(),
        "videos": video_info,
        "tracks": analyses.iter().map(kinematics_json).collect::<Vec<_>>(),
    });
    if gt_tracks.is_some() {
        report["tracking"] = Value::Array(tracking_info);
    }
    if gt_label_map.is_some() {
        let analysed: BTreeSet<u32> = analyses.iter().map(|a| a.track_id).collect();
        recovered_labels.retain(|id, _| analysed.contains(id));
        write(&out.join("labels.csv"), classify::labels_to_csv(&recovered_labels))?;
        let idx = label_indices(&rows, Some(&recovered_labels))?;
        let ev = evaluate(&rows, &idx, seed)?;
        write(&out.join("metrics.txt"), eval_table(&ev))?;
        report["metrics"] = eval_json(&ev, seed);
    }
    write_json(&out.join("report.json"), &report)
}
