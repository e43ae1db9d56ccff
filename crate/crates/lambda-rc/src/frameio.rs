//! Frame ingestion and synthesis.
//!
//! Luma-only frames with samples normalized to `[0, 1]`. Y4M (8-bit 4:2:0 or
//! mono) and raw planar Y files can be loaded; deterministic textured frames
//! with controllable spatial complexity can be synthesized for predictor
//! calibration without any real footage.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("y4m parse error at token `{token}`")]
    Parse { token: String },
    #[error("truncated payload in frame {frame}")]
    Truncated { frame: usize },
    #[error("file contains no frames")]
    NoFrames,
    #[error("invalid frame geometry: {0}")]
    Geometry(String),
    #[error("sample {value} at index {index} outside [0, 1]")]
    SampleRange { index: usize, value: f64 },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Single luma plane, row-major, samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    luma: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, luma: Vec<f64>) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::Geometry(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if luma.len() != width * height {
            return Err(FrameError::Geometry(format!(
                "luma length {} does not match {width}x{height}",
                luma.len()
            )));
        }
        if let Some((index, &value)) = luma
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || **s < 0.0 || **s > 1.0)
        {
            return Err(FrameError::SampleRange { index, value });
        }
        Ok(Self { width, height, luma })
    }

    /// Frame filled with a single value.
    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self, FrameError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn luma(&self) -> &[f64] {
        &self.luma
    }

    pub fn sample(&self, x: usize, y: usize) -> f64 {
        self.luma[y * self.width + x]
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Mean squared error against another frame of identical dimensions.
    pub fn mse(&self, other: &Frame) -> Result<f64, FrameError> {
        if self.width != other.width || self.height != other.height {
            return Err(FrameError::Geometry(format!(
                "dimension mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let sum: f64 = self
            .luma
            .iter()
            .zip(&other.luma)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.luma.len() as f64)
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Frame({}x{})", self.width, self.height)
    }
}

/// Reference/current frame pair; both frames share dimensions.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub reference: Frame,
    pub current: Frame,
}

impl FramePair {
    pub fn new(reference: Frame, current: Frame) -> Result<Self, FrameError> {
        if reference.width != current.width || reference.height != current.height {
            return Err(FrameError::Geometry(format!(
                "pair dimension mismatch: {}x{} vs {}x{}",
                reference.width, reference.height, current.width, current.height
            )));
        }
        Ok(Self { reference, current })
    }
}

/// Ordered list of equally sized frames.
#[derive(Debug, Clone)]
pub struct Sequence {
    frames: Vec<Frame>,
    frame_rate: f64,
}

impl Sequence {
    pub fn new(frames: Vec<Frame>, frame_rate: f64) -> Result<Self, FrameError> {
        if frames.is_empty() {
            return Err(FrameError::NoFrames);
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(FrameError::Argument(format!(
                "frame rate must be positive, got {frame_rate}"
            )));
        }
        let (w, h) = (frames[0].width, frames[0].height);
        if frames.iter().any(|f| f.width != w || f.height != h) {
            return Err(FrameError::Geometry(
                "all frames in a sequence must share dimensions".into(),
            ));
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
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
enum Colorspace {
    C420,
    Mono,
}

/// Load the luma plane of every frame of an 8-bit 4:2:0 or mono Y4M file.
///
/// Samples are divided by 255 into `[0, 1]`; chroma planes are skipped.
pub fn load_y4m(path: impl AsRef<Path>) -> Result<Sequence, FrameError> {
    parse_y4m(&fs::read(path)?)
}

pub fn parse_y4m(data: &[u8]) -> Result<Sequence, FrameError> {
    let header_end = data.iter().position(|&b| b == b'\n').ok_or_else(|| FrameError::Parse {
        token: "<missing header newline>".into(),
    })?;
    let header = std::str::from_utf8(&data[..header_end]).map_err(|_| FrameError::Parse {
        token: "<non-ascii header>".into(),
    })?;

    let mut tokens = header.split_ascii_whitespace();
    match tokens.next() {
        Some("YUV4MPEG2") => {}
        other => {
            return Err(FrameError::Parse {
                token: other.unwrap_or("<empty>").into(),
            })
        }
    }

    let mut width = 0usize;
    let mut height = 0usize;
    let mut frame_rate = 30.0;
    let mut colorspace = Colorspace::C420;
    for tok in tokens {
        let bad = || FrameError::Parse { token: tok.into() };
        match tok.as_bytes()[0] {
            b'W' => width = tok[1..].parse().map_err(|_| bad())?,
            b'H' => height = tok[1..].parse().map_err(|_| bad())?,
            b'F' => {
                let (num, den) = tok[1..].split_once(':').ok_or_else(bad)?;
                let num: f64 = num.parse().map_err(|_| bad())?;
                let den: f64 = den.parse().map_err(|_| bad())?;
                if num <= 0.0 || den <= 0.0 {
                    return Err(bad());
                }
                frame_rate = num / den;
            }
            b'C' => {
                colorspace = match &tok[1..] {
                    "420" | "420jpeg" | "420mpeg2" | "420paln" => Colorspace::C420,
                    "mono" => Colorspace::Mono,
                    _ => return Err(bad()),
                }
            }
            // interlacing, aspect and extension tokens carry no sample data
            b'I' | b'A' | b'X' => {}
            _ => return Err(bad()),
        }
    }
    if width == 0 {
        return Err(FrameError::Parse { token: "W".into() });
    }
    if height == 0 {
        return Err(FrameError::Parse { token: "H".into() });
    }

    let y_len = width * height;
    let chroma_len = match colorspace {
        Colorspace::C420 => 2 * (width.div_ceil(2) * height.div_ceil(2)),
        Colorspace::Mono => 0,
    };

    let mut frames = Vec::new();
    let mut pos = header_end + 1;
    while pos < data.len() {
        let index = frames.len();
        if !data[pos..].starts_with(b"FRAME") {
            let tail = String::from_utf8_lossy(&data[pos..data.len().min(pos + 8)]).into_owned();
            return Err(FrameError::Parse { token: tail });
        }
        let marker_end = data[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(FrameError::Truncated { frame: index })?;
        pos += marker_end + 1;
        if pos + y_len > data.len() {
            return Err(FrameError::Truncated { frame: index });
        }
        let luma = data[pos..pos + y_len].iter().map(|&b| f64::from(b) / 255.0).collect();
        frames.push(Frame::new(width, height, luma)?);
        pos += y_len;
        if pos + chroma_len > data.len() {
            return Err(FrameError::Truncated { frame: index });
        }
        pos += chroma_len;
    }
    Sequence::new(frames, frame_rate)
}

/// Write a sequence as Y4M, quantizing samples to 8 bits once.
///
/// Even dimensions produce 4:2:0 with neutral chroma; odd dimensions fall back
/// to mono.
pub fn write_y4m(seq: &Sequence, path: impl AsRef<Path>) -> Result<(), FrameError> {
    let mut file = fs::File::create(path)?;
    file.write_all(&to_y4m_bytes(seq))?;
    Ok(())
}

pub fn to_y4m_bytes(seq: &Sequence) -> Vec<u8> {
    let (w, h) = (seq.width(), seq.height());
    let mono = w % 2 != 0 || h % 2 != 0;
    let (num, den) = rate_to_ratio(seq.frame_rate());
    let mut out = Vec::new();
    let cs = if mono { "mono" } else { "420" };
    out.extend_from_slice(format!("YUV4MPEG2 W{w} H{h} F{num}:{den} Ip A1:1 C{cs}\n").as_bytes());
    let chroma = vec![128u8; (w / 2) * (h / 2)];
    for frame in seq.frames() {
        out.extend_from_slice(b"FRAME\n");
        out.extend(frame.luma().iter().map(|&s| (s * 255.0).round() as u8));
        if !mono {
            out.extend_from_slice(&chroma);
            out.extend_from_slice(&chroma);
        }
    }
    out
}

fn rate_to_ratio(rate: f64) -> (u32, u32) {
    let num = (rate * 1000.0).round() as u32;
    let g = gcd(num.max(1), 1000);
    (num / g, 1000 / g)
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Load a raw 8-bit planar Y-only file with explicit geometry.
pub fn load_raw_y(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    frame_rate: f64,
) -> Result<Sequence, FrameError> {
    if width == 0 || height == 0 {
        return Err(FrameError::Argument(format!(
            "dimensions must be positive, got {width}x{height}"
        )));
    }
    let data = fs::read(path)?;
    let frame_len = width * height;
    if data.is_empty() {
        return Err(FrameError::NoFrames);
    }
    let mut frames = Vec::new();
    for (index, chunk) in data.chunks(frame_len).enumerate() {
        if chunk.len() < frame_len {
            return Err(FrameError::Truncated { frame: index });
        }
        let luma = chunk.iter().map(|&b| f64::from(b) / 255.0).collect();
        frames.push(Frame::new(width, height, luma)?);
    }
    Sequence::new(frames, frame_rate)
}

/// Mean absolute forward-difference gradient over the plane.
pub fn mean_abs_gradient(frame: &Frame) -> f64 {
    let (w, h) = (frame.width, frame.height);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let s = frame.sample(x, y);
            if x + 1 < w {
                sum += (frame.sample(x + 1, y) - s).abs();
                count += 1;
            }
            if y + 1 < h {
                sum += (frame.sample(x, y + 1) - s).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

const LATTICE_CELL: f64 = 8.0;

/// Deterministic textured frame: band-limited lattice noise plus sinusoidal
/// gratings, mid-gray at zero energy.
///
/// The pattern amplitude grows monotonically with `spatial_energy` (mapped
/// through `e / (1 + e)` so samples never leave `[0, 1]`), and `phase`
/// translates the whole texture to model motion between consecutive frames.
pub fn synth_frame(
    width: usize,
    height: usize,
    spatial_energy: f64,
    phase: f64,
    seed: u64,
) -> Result<Frame, FrameError> {
    if width < 16 || height < 16 {
        return Err(FrameError::Argument(format!(
            "synthesized frames need dimensions >= 16, got {width}x{height}"
        )));
    }
    if !(spatial_energy.is_finite() && spatial_energy >= 0.0) {
        return Err(FrameError::Argument(format!(
            "spatial energy must be finite and >= 0, got {spatial_energy}"
        )));
    }
    if !phase.is_finite() {
        return Err(FrameError::Argument("phase must be finite".into()));
    }

    let amplitude = spatial_energy / (1.0 + spatial_energy);
    if amplitude == 0.0 {
        return Frame::constant(width, height, 0.5);
    }

    // Periodic lattice so any phase translation samples the same field.
    let lx = (width as f64 / LATTICE_CELL).ceil() as usize + 1;
    let ly = (height as f64 / LATTICE_CELL).ceil() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lattice: Vec<f64> = (0..lx * ly).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let lattice_at = |ix: i64, iy: i64| -> f64 {
        let ix = ix.rem_euclid(lx as i64) as usize;
        let iy = iy.rem_euclid(ly as i64) as usize;
        lattice[iy * lx + ix]
    };

    let dx = 3.0 * phase;
    let dy = 1.5 * phase;
    let mut luma = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let sx = x as f64 + dx;
            let sy = y as f64 + dy;
            let grating = ((0.19 * sx).sin() + (0.13 * sy).sin() + (0.08 * (sx + sy)).sin()) / 3.0;
            let u = sx / LATTICE_CELL;
            let v = sy / LATTICE_CELL;
            let (i, j) = (u.floor(), v.floor());
            let (fu, fv) = (u - i, v - j);
            let (i, j) = (i as i64, j as i64);
            let n00 = lattice_at(i, j);
            let n10 = lattice_at(i + 1, j);
            let n01 = lattice_at(i, j + 1);
            let n11 = lattice_at(i + 1, j + 1);
            let noise = n00 * (1.0 - fu) * (1.0 - fv)
                + n10 * fu * (1.0 - fv)
                + n01 * (1.0 - fu) * fv
                + n11 * fu * fv;
            let pattern = 0.6 * grating + 0.4 * noise;
            luma.push(0.5 + 0.5 * amplitude * pattern);
        }
    }
    Frame::new(width, height, luma)
}
