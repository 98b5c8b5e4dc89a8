//! Threshold segmentation and barycenter detection.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::framestore::{write_pgm, Frame};
use crate::Point;

/// Which side of the threshold counts as foreground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    /// Foreground where `p > T`.
    #[default]
    BrightObject,
    /// Foreground where `p <= T`, for dark objects on a bright field.
    DarkObject,
}

/// Row-major mask with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![1; width * height],
        }
    }

    /// Builds a mask from arbitrary bytes; any nonzero byte becomes 1.
    pub fn from_bits(width: usize, height: usize, bits: Vec<u8>) -> Option<Self> {
        if bits.len() != width * height {
            return None;
        }
        let bits = bits.into_iter().map(|b| (b != 0) as u8).collect();
        Some(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Exports as P5 PGM with values `{0, 255}`.
    pub fn write_pgm(&self, path: &Path) -> io::Result<()> {
        let data: Vec<u8> = self.bits.iter().map(|&b| b * 255).collect();
        write_pgm(path, self.width, self.height, &data)
    }
}

/// One connected component found in a mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: usize,
    pub centroid: Point,
    pub area: usize,
    pub component_id: usize,
}

pub fn histogram(frame: &Frame) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &p in frame.data() {
        hist[p as usize] += 1;
    }
    hist
}

/// Otsu threshold over the 256-bin histogram.
///
/// Class 0 is `p <= T`. Ties between thresholds with equal between-class
/// variance resolve to the lowest `T`. A constant frame returns its value.
pub fn otsu_threshold(frame: &Frame) -> u8 {
    otsu_from_histogram(&histogram(frame))
}

pub fn otsu_from_histogram(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut best_t = None;
    let mut best_var = 0.0f64;
    let mut w0 = 0u64;
    let mut sum0 = 0.0f64;
    for t in 0..256usize {
        w0 += hist[t];
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mu0 = sum0 / w0 as f64;
        let mu1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (mu0 - mu1) * (mu0 - mu1);
        if best_t.is_none() || var > best_var {
            best_var = var;
            best_t = Some(t as u8);
        }
    }
    match best_t {
        Some(t) => t,
        // single populated bin (or empty frame)
        None => hist.iter().position(|&c| c > 0).unwrap_or(0) as u8,
    }
}

pub fn binarize(frame: &Frame, threshold: u8, polarity: Polarity) -> BinaryMask {
    let bits = match polarity {
        Polarity::BrightObject => frame.data().iter().map(|&p| (p > threshold) as u8).collect(),
        Polarity::DarkObject => frame.data().iter().map(|&p| (p <= threshold) as u8).collect(),
    };
    BinaryMask {
        width: frame.width(),
        height: frame.height(),
        bits,
    }
}

/// 8-connected components with at least `min_area` pixels.
///
/// Components are visited in raster order of their first pixel, which is also
/// the order of the returned detections; `component_id` counts kept
/// components from 0.
pub fn detect(mask: &BinaryMask, frame_index: usize, min_area: usize) -> Vec<Detection> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in 0..w * h {
        if mask.bits[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut area, mut sx, mut sy) = (0usize, 0u64, 0u64);
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx % w, idx / w);
            area += 1;
            sx += x as u64;
            sy += y as u64;
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for ny in y0..=y1 {
                for nx in x0..=x1 {
                    let n = ny * w + nx;
                    if mask.bits[n] != 0 && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        if area >= min_area.max(1) {
            out.push(Detection {
                frame_index,
                centroid: Point::new(sx as f64 / area as f64, sy as f64 / area as f64),
                area,
                component_id: out.len(),
            });
        }
    }
    out
}

/// Writes `frame_index,component_id,x,y,area` rows.
pub fn write_detections_csv(path: &Path, detections: &[Vec<Detection>]) -> io::Result<()> {
    let mut out = String::from("frame_index,component_id,x,y,area\n");
    for d in detections.iter().flatten() {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            d.frame_index, d.component_id, d.centroid.x, d.centroid.y, d.area
        ));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())
}

/// Reads detections grouped per frame; `frames` sets the number of groups.
pub fn read_detections_csv(path: &Path, frames: Option<usize>) -> io::Result<Vec<Vec<Detection>>> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize| io::Error::new(io::ErrorKind::InvalidData, format!("bad detection row {line}"));
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(n + 1));
        }
        let parse_u = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(n + 1));
        let parse_f = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(n + 1));
        rows.push(Detection {
            frame_index: parse_u(f[0])?,
            component_id: parse_u(f[1])?,
            centroid: Point::new(parse_f(f[2])?, parse_f(f[3])?),
            area: parse_u(f[4])?,
        });
    }
    let m = frames.unwrap_or_else(|| rows.iter().map(|d| d.frame_index + 1).max().unwrap_or(0));
    let mut grouped = vec![Vec::new(); m];
    for d in rows {
        if d.frame_index >= m {
            return Err(bad(0));
        }
        grouped[d.frame_index].push(d);
    }
    Ok(grouped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_from(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> Frame {
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(f(x, y));
            }
        }
        Frame::new(w, h, data).unwrap()
    }

    /// Direct between-class variance with explicit class means, no running sums.
    fn otsu_oracle(frame: &Frame) -> u8 {
        let px = frame.data();
        let mut best = (f64::NEG_INFINITY, 0u8);
        let mut any = false;
        for t in 0..=255u8 {
            let lo: Vec<f64> = px.iter().filter(|&&p| p <= t).map(|&p| p as f64).collect();
            let hi: Vec<f64> = px.iter().filter(|&&p| p > t).map(|&p| p as f64).collect();
            if lo.is_empty() || hi.is_empty() {
                continue;
            }
            any = true;
            let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
            let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
            let n = px.len() as f64;
            let var = (lo.len() as f64 / n) * (hi.len() as f64 / n) * (m0 - m1).powi(2);
            if var > best.0 * (1.0 + 1e-12) {
                best = (var, t);
            }
        }
        if any {
            best.1
        } else {
            px[0]
        }
    }

    #[test]
    fn otsu_constant_frames() {
        assert_eq!(otsu_threshold(&Frame::filled(5, 5, 0)), 0);
        assert_eq!(otsu_threshold(&Frame::filled(5, 5, 77)), 77);
    }

    #[test]
    fn otsu_bimodal_separates_modes() {
        let f = frame_from(10, 10, |x, _| if x < 5 { 10 } else { 200 });
        let t = otsu_threshold(&f);
        assert!((10..200).contains(&t));
        let m = binarize(&f, t, Polarity::BrightObject);
        for y in 0..10 {
            for x in 0..10 {
                assert_eq!(m.get(x, y), x >= 5);
            }
        }
        assert_eq!(t, otsu_oracle(&f));
    }

    #[test]
    fn otsu_matches_oracle_on_blob_scene() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let blobs: Vec<(f64, f64)> = (0..12)
            .map(|_| (rng.random_range(20.0..680.0), rng.random_range(20.0..510.0)))
            .collect();
        let f = frame_from(698, 528, |x, y| {
            let mut v = 30.0 + rng_noise(x, y);
            for &(bx, by) in &blobs {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                v += 170.0 * (-d2 / 18.0).exp();
            }
            v.clamp(0.0, 255.0).round() as u8
        });
        assert_eq!(otsu_threshold(&f), otsu_oracle(&f));
    }

    fn rng_noise(x: usize, y: usize) -> f64 {
        (((x * 7919 + y * 104729) % 13) as f64) - 6.0
    }

    #[test]
    fn binarize_edges() {
        let f = Frame::filled(4, 4, 90);
        assert_eq!(binarize(&f, 90, Polarity::BrightObject).count_ones(), 0);
        let g = frame_from(4, 4, |x, y| (x * 60 + y) as u8);
        assert_eq!(binarize(&g, 255, Polarity::BrightObject).count_ones(), 0);
        let checker = frame_from(6, 6, |x, y| if (x + y) % 2 == 0 { 255 } else { 0 });
        let m = binarize(&checker, 128, Polarity::BrightObject);
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(m.get(x, y), checker.get(x, y) == 255);
            }
        }
        let d = binarize(&checker, 128, Polarity::DarkObject);
        assert_eq!(d.count_ones(), 18);
        assert!(!d.get(0, 0));
    }

    #[test]
    fn detect_single_block() {
        let mut m = BinaryMask::zeros(12, 8);
        for y in 2..=4 {
            for x in 5..=7 {
                m.set(x, y, true);
            }
        }
        let d = detect(&m, 3, 4);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].centroid, Point::new(6.0, 3.0));
        assert_eq!(d[0].area, 9);
        assert_eq!(d[0].frame_index, 3);
    }

    #[test]
    fn detect_orders_raster_and_filters_area() {
        let mut m = BinaryMask::zeros(10, 10);
        // lower-left block, first pixel at row 5
        for y in 5..8 {
            for x in 0..2 {
                m.set(x, y, true);
            }
        }
        // upper-right block, first pixel at row 1
        for y in 1..3 {
            for x in 6..9 {
                m.set(x, y, true);
            }
        }
        // lone noise pixel
        m.set(4, 0, true);
        let d = detect(&m, 0, 4);
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].centroid, Point::new(7.0, 1.5));
        assert_eq!(d[1].centroid, Point::new(0.5, 6.0));
        assert_eq!((d[0].component_id, d[1].component_id), (0, 1));
        assert_eq!(detect(&m, 0, 1).len(), 3);
    }

    #[test]
    fn detect_is_eight_connected() {
        let mut m = BinaryMask::zeros(4, 4);
        m.set(0, 0, true);
        m.set(1, 1, true);
        m.set(2, 2, true);
        assert_eq!(detect(&m, 0, 1).len(), 1);
        assert!(detect(&BinaryMask::zeros(4, 4), 0, 1).is_empty());
    }

    #[test]
    fn detections_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let dets = vec![
            vec![Detection {
                frame_index: 0,
                centroid: Point::new(1.5, 2.25),
                area: 9,
                component_id: 0,
            }],
            vec![],
        ];
        write_detections_csv(&p, &dets).unwrap();
        assert_eq!(read_detections_csv(&p, Some(2)).unwrap(), dets);
    }
}
