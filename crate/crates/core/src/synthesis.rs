//! Decoding generated motions into landmark sequences, transferring motion
//! between identities and exporting landmark heatmaps.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::ExpressionLabel;
use crate::error::{Error, Result};
use crate::geometry::{srvf_decode, srvf_encode, LandmarkSequence, Srvf};
use crate::motiongan::{generate_motion, MotionGan};

/// Largest accepted intensity; larger factors give implausible faces.
pub const INTENSITY_MAX: f64 = 30.0;

/// Scale applied to a unit-norm motion when decoding. Equals the path length
/// of the decoded sequence.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct IntensityFactor(f64);

impl IntensityFactor {
    pub fn new(value: f64) -> Result<Self> {
        Self::with_max(value, INTENSITY_MAX)
    }

    /// `0 <= value <= max`. Zero is allowed and decodes a still sequence.
    pub fn with_max(value: f64, max: f64) -> Result<Self> {
        if !(0.0..=max).contains(&value) {
            return Err(Error::InvalidValue(format!("intensity {value} outside [0, {max}]")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for IntensityFactor {
    fn default() -> Self {
        Self(1.0)
    }
}

/// Decodes `q` from the flattened frame `neutral` (`[x0, y0, x1, y1, ...]`).
pub fn decode_sequence(
    q: &Srvf,
    neutral: &[f64],
    intensity: IntensityFactor,
    id: impl Into<String>,
    label: Option<String>,
) -> Result<LandmarkSequence> {
    if neutral.len() != q.dim() {
        return Err(Error::DimensionMismatch(format!(
            "neutral frame has {} landmarks, motion has {}",
            neutral.len() / 2,
            q.dim() / 2
        )));
    }
    let curve = srvf_decode(q, neutral, intensity.value())?;
    LandmarkSequence::from_curve(id, label, &curve)
}

/// Samples a motion of class `label` from `model` and decodes it from
/// `neutral`. Frame 0 equals `neutral`.
pub fn generate_landmark_sequence(
    model: &MotionGan,
    label: ExpressionLabel,
    neutral: &[f64],
    intensity: IntensityFactor,
    seed: u64,
) -> Result<LandmarkSequence> {
    if neutral.len() != 2 * model.landmarks {
        return Err(Error::DimensionMismatch(format!(
            "neutral frame has {} values, model expects {} landmarks",
            neutral.len(),
            model.landmarks
        )));
    }
    let name = model
        .class_names
        .get(label.index())
        .cloned()
        .ok_or_else(|| Error::DimensionMismatch(format!("label {} of {}", label.index(), model.num_classes())))?;
    let q = generate_motion(model, label, seed)?;
    decode_sequence(&q, neutral, intensity, format!("{name}-seed{seed}"), Some(name))
}

/// Replays the motion of `source` from `target_neutral`. Displacements come
/// from the unit-normalized source scaled by `intensity`; pass the source's
/// path length to keep its amplitude.
pub fn transfer_motion(
    source: &LandmarkSequence,
    target_neutral: &[f64],
    intensity: IntensityFactor,
) -> Result<LandmarkSequence> {
    let q = srvf_encode(&source.to_curve()).map_err(|e| match e {
        Error::DegenerateCurve { .. } => Error::DegenerateCurve {
            context: Some(format!("sequence {}", source.id)),
        },
        other => other,
    })?;
    decode_sequence(
        &q,
        target_neutral,
        intensity,
        format!("{}-transfer", source.id),
        source.label.clone(),
    )
}

/// What to do with landmarks that fall outside the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BoundsPolicy {
    #[default]
    Error,
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    pub height: usize,
    pub width: usize,
    /// Gaussian standard deviation in pixels.
    pub sigma: f64,
    pub bounds: BoundsPolicy,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            sigma: 1.5,
            bounds: BoundsPolicy::Error,
        }
    }
}

/// `T x d x H x W` Gaussian bumps, one channel per landmark. Pixel `(r, c)`
/// has its center at `x = c`, `y = r`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub frames: usize,
    pub landmarks: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl HeatmapStack {
    pub fn channel(&self, frame: usize, landmark: usize) -> &[f32] {
        let hw = self.height * self.width;
        let start = (frame * self.landmarks + landmark) * hw;
        &self.data[start..start + hw]
    }

    /// `(x, y)` of the brightest pixel of a channel; first one on ties.
    pub fn argmax(&self, frame: usize, landmark: usize) -> (usize, usize) {
        let ch = self.channel(frame, landmark);
        let mut best = 0;
        for (i, v) in ch.iter().enumerate() {
            if *v > ch[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }
}

/// Renders every landmark of every frame as `exp(-r^2 / 2 sigma^2)`.
pub fn render_heatmaps(seq: &LandmarkSequence, config: &HeatmapConfig) -> Result<HeatmapStack> {
    let HeatmapConfig {
        height,
        width,
        sigma,
        bounds,
    } = *config;
    if height == 0 || width == 0 {
        return Err(Error::InvalidValue(format!("heatmap size {height}x{width}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidValue(format!("heatmap sigma {sigma}")));
    }
    let (t, d) = (seq.num_frames(), seq.num_landmarks());
    let hw = height * width;
    let mut data = vec![0f32; t * d * hw];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for f in 0..t {
        for j in 0..d {
            let [mut x, mut y] = seq.point(f, j);
            let inside = (0.0..width as f64).contains(&x) && (0.0..height as f64).contains(&y);
            if !inside {
                match bounds {
                    BoundsPolicy::Error => {
                        return Err(Error::OutOfBounds {
                            frame: f,
                            landmark: j,
                            x,
                            y,
                        })
                    }
                    BoundsPolicy::Clamp => {
                        x = x.clamp(0.0, (width - 1) as f64);
                        y = y.clamp(0.0, (height - 1) as f64);
                    }
                }
            }
            let ch = &mut data[(f * d + j) * hw..(f * d + j + 1) * hw];
            for r in 0..height {
                let dy = r as f64 - y;
                for c in 0..width {
                    let dx = c as f64 - x;
                    ch[r * width + c] = (-(dx * dx + dy * dy) * inv).exp() as f32;
                }
            }
        }
    }
    Ok(HeatmapStack {
        frames: t,
        landmarks: d,
        height,
        width,
        data,
    })
}

/// Maps all landmarks of `seq` into a `height x width` canvas with a uniform
/// scale, keeping `margin` pixels free on the limiting side.
pub fn fit_to_canvas(
    seq: &LandmarkSequence,
    height: usize,
    width: usize,
    margin: f64,
) -> Result<LandmarkSequence> {
    let c = seq.coords();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in c.chunks_exact(2) {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let avail = [width as f64 - 1.0 - 2.0 * margin, height as f64 - 1.0 - 2.0 * margin];
    if avail[0] <= 0.0 || avail[1] <= 0.0 {
        return Err(Error::InvalidValue(format!("margin {margin} leaves no room in {height}x{width}")));
    }
    let span = [hi[0] - lo[0], hi[1] - lo[1]];
    let scale = (0..2)
        .filter(|&a| span[a] > 0.0)
        .map(|a| avail[a] / span[a])
        .fold(f64::INFINITY, f64::min);
    let scale = if scale.is_finite() { scale } else { 1.0 };
    let offset = [
        margin + (avail[0] - span[0] * scale) / 2.0,
        margin + (avail[1] - span[1] * scale) / 2.0,
    ];
    let data = c
        .chunks_exact(2)
        .flat_map(|p| [(p[0] - lo[0]) * scale + offset[0], (p[1] - lo[1]) * scale + offset[1]])
        .collect();
    LandmarkSequence::from_flat(seq.id.clone(), seq.label.clone(), seq.num_landmarks(), data)
}

/// NPY (version 1.0) header and little-endian float32 payload, shape
/// `(T, d, H, W)`.
pub fn write_heatmaps_npy(stack: &HeatmapStack, path: &Path) -> Result<()> {
    let dict = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}, {}, {}), }}",
        stack.frames, stack.landmarks, stack.height, stack.width
    );
    // magic + version + u16 length + dict + padding + newline, aligned to 64
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    let header_len = dict.len() + pad + 1;
    let mut out = Vec::with_capacity(10 + header_len + 4 * stack.data.len());
    out.extend_from_slice(b"\x93NUMPY\x01\x00");
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat(b' ').take(pad));
    out.push(b'\n');
    for v in &stack.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One binary PGM per frame holding the per-pixel maximum over landmarks,
/// named `frame_000.pgm`, ... inside `dir`.
pub fn write_heatmap_pgms(stack: &HeatmapStack, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hw = stack.height * stack.width;
    let mut paths = Vec::with_capacity(stack.frames);
    for f in 0..stack.frames {
        let mut img = vec![0f32; hw];
        for j in 0..stack.landmarks {
            for (p, v) in img.iter_mut().zip(stack.channel(f, j)) {
                *p = p.max(*v);
            }
        }
        let path = dir.join(format!("frame_{f:03}.pgm"));
        let mut out = format!("P5\n{} {}\n255\n", stack.width, stack.height).into_bytes();
        out.extend(img.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        let mut file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        file.write_all(&out).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
