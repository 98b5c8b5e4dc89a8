//! Grayscale frame sequences: loading, validation and the raw planar container.
//!
//! Pixel convention: `x` grows rightward along columns, `y` grows downward
//! along rows. Data is stored row-major, so pixel `(x, y)` lives at
//! `y * width + x`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Frame rate used when the source does not carry one.
pub const DEFAULT_FPS: f64 = 30.0;

/// Magic bytes that open a raw planar sequence file.
pub const RAW_MAGIC: &[u8; 4] = b"FOLD";

const RAW_HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum FrameStoreError {
    #[error("frames disagree on size: expected {expected:?}, found {found:?} in {source_name}")]
    MixedDimensions {
        expected: (usize, usize),
        found: (usize, usize),
        source_name: String,
    },
    #[error("sequence has {0} frame(s), at least 2 are required")]
    EmptySequence(usize),
    #[error("malformed raw header: {0}")]
    MalformedHeader(String),
    #[error("cannot decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("frame data length {len} does not match {width}x{height}")]
    BadFrameLength { width: usize, height: usize, len: usize },
    #[error("frame rate must be positive, got {0}")]
    BadFps(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, FrameStoreError> {
        if data.len() != width * height {
            return Err(FrameStoreError::BadFrameLength {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// An ordered list of equally sized frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    id: String,
    fps: f64,
    frames: Vec<Frame>,
}

impl VideoSequence {
    pub fn new(id: impl Into<String>, fps: f64, frames: Vec<Frame>) -> Result<Self, FrameStoreError> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(FrameStoreError::BadFps(fps));
        }
        if frames.len() < 2 {
            return Err(FrameStoreError::EmptySequence(frames.len()));
        }
        let expected = frames[0].dims();
        for (j, f) in frames.iter().enumerate() {
            if f.dims() != expected {
                return Err(FrameStoreError::MixedDimensions {
                    expected,
                    found: f.dims(),
                    source_name: format!("frame {j}"),
                });
            }
        }
        Ok(Self {
            id: id.into(),
            fps,
            frames,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceFormat {
    /// Directory of `.pgm`/`.ppm`/`.png` frames sorted by file name.
    ImageDir,
    /// Single file in the `FOLD` raw planar layout.
    RawPlanar,
}

impl SequenceFormat {
    /// Directories are image sequences, everything else is raw planar.
    pub fn detect(path: &Path) -> Self {
        if path.is_dir() {
            SequenceFormat::ImageDir
        } else {
            SequenceFormat::RawPlanar
        }
    }
}

pub fn load_sequence(path: &Path, format: SequenceFormat) -> Result<VideoSequence, FrameStoreError> {
    match format {
        SequenceFormat::ImageDir => load_image_dir(path),
        SequenceFormat::RawPlanar => read_raw(path),
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_image_dir(dir: &Path) -> Result<VideoSequence, FrameStoreError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "png"))
                    .unwrap_or(false)
        })
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let mut frames: Vec<Frame> = Vec::with_capacity(files.len());
    for file in &files {
        let frame = read_image(file)?;
        if let Some(first) = frames.first() {
            if first.dims() != frame.dims() {
                return Err(FrameStoreError::MixedDimensions {
                    expected: first.dims(),
                    found: frame.dims(),
                    source_name: file.display().to_string(),
                });
            }
        }
        frames.push(frame);
    }
    VideoSequence::new(stem_of(dir), DEFAULT_FPS, frames)
}

/// Integer luma, `round(0.299 R + 0.587 G + 0.114 B)` with halves rounded up.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Reads a single grayscale or RGB image, reducing color to luma.
pub fn read_image(path: &Path) -> Result<Frame, FrameStoreError> {
    let bytes = fs::read(path)?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let decoded = if ext == "png" {
        decode_png(&bytes)
    } else {
        decode_pnm(&bytes)
    };
    decoded.map_err(|reason| FrameStoreError::Decode {
        path: path.to_path_buf(),
        reason,
    })
}

fn decode_png(bytes: &[u8]) -> Result<Frame, String> {
    let mut decoder = png::Decoder::new(io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| "image too large".to_string())?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format!("unsupported bit depth {:?}", info.bit_depth));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    let stride = info.line_size;
    let channels = info.color_type.samples();
    let mut data = Vec::with_capacity(w * h);
    for row in buf.chunks(stride).take(h) {
        for px in row[..w * channels].chunks(channels) {
            let v = match info.color_type {
                png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => px[0],
                png::ColorType::Rgb | png::ColorType::Rgba => luma(px[0], px[1], px[2]),
                png::ColorType::Indexed => return Err("indexed color not expanded".into()),
            };
            data.push(v);
        }
    }
    Frame::new(w, h, data).map_err(|e| e.to_string())
}

struct PnmHeader {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_offset: usize,
}

fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader, String> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err("missing PNM magic".into());
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&c) = bytes.get(pos) {
                        pos += 1;
                        if c == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PNM header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| "bad PNM header number".to_string())?;
    }
    if !bytes.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err("missing whitespace after PNM header".into());
    }
    Ok(PnmHeader {
        magic,
        width: fields[0],
        height: fields[1],
        maxval: fields[2],
        data_offset: pos + 1,
    })
}

fn decode_pnm(bytes: &[u8]) -> Result<Frame, String> {
    let hdr = parse_pnm_header(bytes)?;
    let channels = match &hdr.magic {
        b"P5" => 1,
        b"P6" => 3,
        m => return Err(format!("unsupported PNM type {}", String::from_utf8_lossy(m))),
    };
    if hdr.maxval == 0 || hdr.maxval > 255 {
        return Err(format!("only 8-bit PNM supported, maxval {}", hdr.maxval));
    }
    let n = hdr.width * hdr.height * channels;
    let payload = bytes
        .get(hdr.data_offset..hdr.data_offset + n)
        .ok_or_else(|| "truncated PNM payload".to_string())?;
    let data = if channels == 1 {
        payload.to_vec()
    } else {
        payload.chunks(3).map(|p| luma(p[0], p[1], p[2])).collect()
    };
    Frame::new(hdr.width, hdr.height, data).map_err(|e| e.to_string())
}

/// Writes an 8-bit binary PGM (P5).
pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> io::Result<()> {
    let mut out = Vec::with_capacity(data.len() + 20);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.extend_from_slice(data);
    fs::write(path, out)
}

/// Writes a 16-bit binary PGM (P5, maxval 65535, big-endian samples).
/// Values above 65535 saturate.
pub fn write_pgm16(path: &Path, width: usize, height: usize, data: &[u32]) -> io::Result<()> {
    let mut out = Vec::with_capacity(data.len() * 2 + 24);
    write!(out, "P5\n{width} {height}\n65535\n")?;
    for &v in data {
        out.extend_from_slice(&(v.min(65535) as u16).to_be_bytes());
    }
    fs::write(path, out)
}

/// Reads a 16-bit PGM written by [`write_pgm16`].
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<u32>), FrameStoreError> {
    let bytes = fs::read(path)?;
    let err = |reason: String| FrameStoreError::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let hdr = parse_pnm_header(&bytes).map_err(err)?;
    if &hdr.magic != b"P5" || hdr.maxval <= 255 {
        return Err(err("expected 16-bit P5".into()));
    }
    let n = hdr.width * hdr.height;
    let payload = bytes
        .get(hdr.data_offset..hdr.data_offset + 2 * n)
        .ok_or_else(|| err("truncated payload".into()))?;
    let data = payload
        .chunks(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
        .collect();
    Ok((hdr.width, hdr.height, data))
}

/// Encodes a sequence in the raw planar layout:
/// `"FOLD" | u32 width | u32 height | u32 frame_count | u32 fps_milli` (little endian)
/// followed by the frames back to back.
pub fn encode_raw(seq: &VideoSequence) -> Vec<u8> {
    let (w, h) = (seq.width(), seq.height());
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + w * h * seq.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    out.extend_from_slice(&((seq.fps() * 1000.0).round() as u32).to_le_bytes());
    for f in seq.frames() {
        out.extend_from_slice(f.data());
    }
    out
}

pub fn write_sequence(seq: &VideoSequence, path: &Path) -> io::Result<()> {
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    file.write_all(&encode_raw(seq))?;
    file.flush()
}

pub fn decode_raw(id: &str, bytes: &[u8]) -> Result<VideoSequence, FrameStoreError> {
    if bytes.len() < RAW_HEADER_LEN {
        return Err(FrameStoreError::MalformedHeader(format!(
            "file is {} bytes, header needs {RAW_HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err(FrameStoreError::MalformedHeader("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, m, fps_milli) = (word(0), word(1), word(2), word(3));
    if w == 0 || h == 0 {
        return Err(FrameStoreError::MalformedHeader(format!("zero dimension {w}x{h}")));
    }
    let frame_len = w
        .checked_mul(h)
        .ok_or_else(|| FrameStoreError::MalformedHeader("dimensions overflow".into()))?;
    let payload = &bytes[RAW_HEADER_LEN..];
    if Some(payload.len()) != frame_len.checked_mul(m) {
        return Err(FrameStoreError::MalformedHeader(format!(
            "payload is {} bytes, header declares {m} frames of {w}x{h}",
            payload.len()
        )));
    }
    if m < 2 {
        return Err(FrameStoreError::EmptySequence(m));
    }
    let fps = if fps_milli == 0 {
        DEFAULT_FPS
    } else {
        fps_milli as f64 / 1000.0
    };
    let frames = payload
        .chunks(frame_len)
        .map(|c| Frame::new(w, h, c.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    VideoSequence::new(id, fps, frames)
}

fn read_raw(path: &Path) -> Result<VideoSequence, FrameStoreError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_raw(&stem_of(path), &bytes)
}
