//! Kinematics, convolution descriptors and the assembled X/Y/Z feature vectors.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::foldover::{Axis, Projection};
use crate::tracking::Track;
use crate::Point;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("descriptor for axis {found} passed where axis {expected} was expected")]
    AxisMismatch { expected: Axis, found: Axis },
}

/// Per-track motion summary. Distances in pixels, velocities in pixels/frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicSummary {
    pub fps_x: f64,
    pub fps_y: f64,
    /// Curvilinear distance: sum of consecutive centroid steps.
    pub dist_a: f64,
    /// Net displacement from first to last centroid.
    pub disp_b: f64,
    /// Length of the cubic-smoothed path.
    pub avg_path_m: f64,
    pub vcl: f64,
    pub vsl: f64,
    pub vap: f64,
    pub lin: f64,
    pub str_: f64,
    pub wob: f64,
}

impl KinematicSummary {
    /// `[A, B, M, VCL, VSL, VAP, LIN, STR, WOB]`.
    pub fn z_part(&self) -> [f64; 9] {
        [
            self.dist_a,
            self.disp_b,
            self.avg_path_m,
            self.vcl,
            self.vsl,
            self.vap,
            self.lin,
            self.str_,
            self.wob,
        ]
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[1].distance(w[0])).sum()
}

/// Kinematics of a track. `extent_x`/`extent_y` are the rotated foldover's
/// support lengths.
pub fn kinematics(track: &Track, extent_x: f64, extent_y: f64) -> KinematicSummary {
    let gamma = track.len().max(1) as f64;
    let centroids: Vec<Point> = track.centroids().collect();
    let dist_a = polyline_length(&centroids);
    let disp_b = match (centroids.first(), centroids.last()) {
        (Some(&a), Some(&b)) => b.distance(a),
        _ => 0.0,
    };
    let avg_path_m = fit_average_path(track).length;
    let vcl = dist_a / gamma;
    let vsl = disp_b / gamma;
    let vap = avg_path_m / gamma;
    KinematicSummary {
        fps_x: extent_x / gamma,
        fps_y: extent_y / gamma,
        dist_a,
        disp_b,
        avg_path_m,
        vcl,
        vsl,
        vap,
        lin: ratio(vsl, vcl),
        str_: ratio(vsl, vap),
        wob: ratio(vap, vcl),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragePath {
    pub path: Vec<Point>,
    pub length: f64,
}

/// Least-squares cubic `x(t)`, `y(t)` over `t = 0..n-1`, evaluated at the
/// integer frame offsets. Tracks shorter than four points keep their raw
/// centroids.
pub fn fit_average_path(track: &Track) -> AveragePath {
    let raw: Vec<Point> = track.centroids().collect();
    if raw.len() < 4 {
        let length = polyline_length(&raw);
        return AveragePath { path: raw, length };
    }
    let xs: Vec<f64> = raw.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = raw.iter().map(|p| p.y).collect();
    let basis = cubic_basis(raw.len());
    let fx = project_onto(&basis, &xs);
    let fy = project_onto(&basis, &ys);
    let path: Vec<Point> = fx.into_iter().zip(fy).map(|(x, y)| Point::new(x, y)).collect();
    let length = polyline_length(&path);
    AveragePath { path, length }
}

/// Orthonormal basis of the cubic polynomials sampled at `n` points, by
/// twice-iterated Gram-Schmidt on the monomials in `t` scaled to [-1, 1].
fn cubic_basis(n: usize) -> Vec<Vec<f64>> {
    let half = (n - 1) as f64 / 2.0;
    let tau: Vec<f64> = (0..n).map(|t| (t as f64 - half) / half).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(4);
    for k in 0..4 {
        let mut v: Vec<f64> = tau.iter().map(|&t| t.powi(k)).collect();
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= dot * qi);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    basis
}

fn project_onto(basis: &[Vec<f64>], values: &[f64]) -> Vec<f64> {
    // subtracting the mean first keeps large frame coordinates from eating precision
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let mut fitted = vec![mean; values.len()];
    for q in basis {
        let c: f64 = q.iter().zip(&centered).map(|(a, b)| a * b).sum();
        fitted.iter_mut().zip(q).for_each(|(f, qi)| *f += c * qi);
    }
    fitted
}

/// Flattened `d x d` descriptor of one projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorGrid {
    pub axis: Axis,
    pub d: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorParams {
    /// Odd kernel side, at least 3.
    pub kernel: usize,
    pub passes: usize,
    pub side: usize,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            kernel: 3,
            passes: 2,
            side: 16,
        }
    }
}

/// Max-normalizes the projection, applies `passes` rounds of an `e x e` mean
/// filter and area-averages the result down (or up) to `d x d`.
///
/// Outside the grid counts as zero; each output is divided by the number of
/// taps that fall inside the grid, so constant grids are fixed points.
pub fn conv_descriptor(proj: &Projection, e: usize, passes: usize, d: usize) -> DescriptorGrid {
    let (w, h) = (proj.grid.width, proj.grid.height);
    let max = proj.grid.max_value();
    if w == 0 || h == 0 || max == 0 {
        return DescriptorGrid {
            axis: proj.axis,
            d,
            values: vec![0.0; d * d],
        };
    }
    let mut img: Vec<f64> = proj.grid.data.iter().map(|&v| v as f64 / max as f64).collect();
    let radius = e / 2;
    for _ in 0..passes {
        img = box_mean(&img, w, h, radius);
    }
    DescriptorGrid {
        axis: proj.axis,
        d,
        values: area_resample(&img, w, h, d),
    }
}

/// Separable box mean normalized by in-bounds tap count.
pub(crate) fn box_mean(img: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        let mut prefix = vec![0.0; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x];
        }
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            tmp[y * w + x] = (prefix[hi + 1] - prefix[lo]) / (hi - lo + 1) as f64;
        }
    }
    let mut out = vec![0.0; w * h];
    let mut prefix = vec![0.0; h + 1];
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + tmp[y * w + x];
        }
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(h - 1);
            out[y * w + x] = (prefix[hi + 1] - prefix[lo]) / (hi - lo + 1) as f64;
        }
    }
    out
}

/// Overlap weights mapping `n` source cells onto `d` equal output cells.
fn area_weights(n: usize, d: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n as f64 / d as f64;
    (0..d)
        .map(|i| {
            let (a, b) = (i as f64 * scale, (i + 1) as f64 * scale);
            let first = a.floor() as usize;
            let last = (b.ceil() as usize).min(n);
            (first..last)
                .filter_map(|s| {
                    let overlap = (b.min(s as f64 + 1.0) - a.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap / scale))
                })
                .collect()
        })
        .collect()
}

fn area_resample(img: &[f64], w: usize, h: usize, d: usize) -> Vec<f64> {
    let wx = area_weights(w, d);
    let wy = area_weights(h, d);
    let mut cols = vec![0.0; h * d];
    for y in 0..h {
        for (j, taps) in wx.iter().enumerate() {
            cols[y * d + j] = taps.iter().map(|&(s, wt)| wt * img[y * w + s]).sum();
        }
    }
    let mut out = vec![0.0; d * d];
    for (i, taps) in wy.iter().enumerate() {
        for j in 0..d {
            out[i * d + j] = taps.iter().map(|&(s, wt)| wt * cols[s * d + j]).sum();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub axis: Axis,
    pub kinematic_part: Vec<f64>,
    pub descriptor_part: Vec<f64>,
}

impl FeatureVector {
    pub fn values(&self) -> Vec<f64> {
        let mut v = self.kinematic_part.clone();
        v.extend_from_slice(&self.descriptor_part);
        v
    }

    pub fn len(&self) -> usize {
        self.kinematic_part.len() + self.descriptor_part.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub x: FeatureVector,
    pub y: FeatureVector,
    pub z: FeatureVector,
}

impl FeatureSet {
    pub fn get(&self, axis: Axis) -> &FeatureVector {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
            Axis::Z => &self.z,
        }
    }
}

/// `F^X = [fps_x] ++ H^X`, `F^Y = [fps_y] ++ H^Y`,
/// `F^Z = [A, B, M, VCL, VSL, VAP, LIN, STR, WOB] ++ H^Z`.
pub fn assemble(
    kin: &KinematicSummary,
    hx: &DescriptorGrid,
    hy: &DescriptorGrid,
    hz: &DescriptorGrid,
) -> Result<FeatureSet, FeatureError> {
    for (expected, g) in [(Axis::X, hx), (Axis::Y, hy), (Axis::Z, hz)] {
        if g.axis != expected {
            return Err(FeatureError::AxisMismatch {
                expected,
                found: g.axis,
            });
        }
    }
    Ok(FeatureSet {
        x: FeatureVector {
            axis: Axis::X,
            kinematic_part: vec![kin.fps_x],
            descriptor_part: hx.values.clone(),
        },
        y: FeatureVector {
            axis: Axis::Y,
            kinematic_part: vec![kin.fps_y],
            descriptor_part: hy.values.clone(),
        },
        z: FeatureVector {
            axis: Axis::Z,
            kinematic_part: kin.z_part().to_vec(),
            descriptor_part: hz.values.clone(),
        },
    })
}

/// WHO motility grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WhoGrade {
    /// Immotile.
    D,
    /// Non-progressive.
    C,
    /// Slow progressive.
    B,
    /// Rapid progressive.
    A,
}

impl WhoGrade {
    pub fn as_str(self) -> &'static str {
        match self {
            WhoGrade::A => "A",
            WhoGrade::B => "B",
            WhoGrade::C => "C",
            WhoGrade::D => "D",
        }
    }
}

/// Grades a curvilinear velocity in µm/s. Exactly 5 µm/s is graded C.
pub fn who_grade(vcl_um_per_s: f64) -> WhoGrade {
    let v = vcl_um_per_s;
    if v >= 25.0 {
        WhoGrade::A
    } else if v > 5.0 {
        WhoGrade::B
    } else if v > 0.0 {
        WhoGrade::C
    } else {
        WhoGrade::D
    }
}

/// Pixels/frame to µm/s.
pub fn to_um_per_s(px_per_frame: f64, um_per_px: f64, fps: f64) -> f64 {
    px_per_frame * um_per_px * fps
}

/// One line of the feature CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub track_id: u32,
    pub axis: Axis,
    pub label: Option<String>,
    pub values: Vec<f64>,
}

/// Formats `v` with at most 9 significant digits in its shortest exact form.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_nan() { "NaN".into() } else if v.is_infinite() { format!("{v}") } else { "0".into() };
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("float formatting round-trips");
    format!("{rounded}")
}

pub fn rows_for(track_id: u32, set: &FeatureSet, label: Option<&str>) -> Vec<FeatureRow> {
    Axis::ALL
        .iter()
        .map(|&axis| FeatureRow {
            track_id,
            axis,
            label: label.map(str::to_owned),
            values: set.get(axis).values(),
        })
        .collect()
}

/// Header `track_id,axis,len[,label],v1..vN` where N is the longest row.
/// Shorter rows leave trailing value cells empty.
pub fn features_to_csv(rows: &[FeatureRow], with_label: bool) -> String {
    let n = rows.iter().map(|r| r.values.len()).max().unwrap_or(0);
    let mut out = String::from("track_id,axis,len");
    if with_label {
        out.push_str(",label");
    }
    for i in 1..=n {
        out.push_str(&format!(",v{i}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}", r.track_id, r.axis, r.values.len()));
        if with_label {
            out.push(',');
            out.push_str(r.label.as_deref().unwrap_or(""));
        }
        for i in 0..n {
            out.push(',');
            if let Some(v) = r.values.get(i) {
                out.push_str(&format_sig9(*v));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_features_csv(path: &Path, rows: &[FeatureRow], with_label: bool) -> io::Result<()> {
    fs::write(path, features_to_csv(rows, with_label))
}

pub fn parse_features_csv(text: &str) -> io::Result<Vec<FeatureRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "empty feature file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "track_id" || cols[1] != "axis" || cols[2] != "len" {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad feature header"));
    }
    let with_label = cols.get(3) == Some(&"label");
    let first_value = if with_label { 4 } else { 3 };
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || io::Error::new(io::ErrorKind::InvalidData, format!("bad feature row {}", n + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < first_value {
            return Err(bad());
        }
        let len: usize = f[2].parse().map_err(|_| bad())?;
        let values = f[first_value..]
            .iter()
            .take(len)
            .map(|s| s.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != len {
            return Err(bad());
        }
        rows.push(FeatureRow {
            track_id: f[0].parse().map_err(|_| bad())?,
            axis: Axis::parse(f[1]).ok_or_else(bad)?,
            label: with_label.then(|| f[3].to_string()).filter(|s| !s.is_empty()),
            values,
        });
    }
    Ok(rows)
}

pub fn read_features_csv(path: &Path) -> io::Result<Vec<FeatureRow>> {
    parse_features_csv(&fs::read_to_string(path)?)
}
