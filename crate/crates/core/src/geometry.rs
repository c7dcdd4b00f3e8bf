//! Discrete SRVF representation of landmark trajectories and the Riemannian
//! toolbox of the unit hypersphere they live on.
//!
//! A trajectory of `T` frames with `d` landmarks is a curve sampled at `T`
//! uniform instants of `[0, 1]` in `R^(2d)`. Its SRVF is piecewise constant:
//! one sample per inter-frame interval, so `T - 1` samples of dimension `2d`,
//! with the `L2` inner product weighted by `dt = 1 / (T - 1)`.

use std::f64::consts::PI;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Displacements shorter than this are treated as zero velocity.
pub const EPS_VELOCITY: f64 = 1e-12;
/// Below this angle the log/exp/slerp formulas switch to their first-order limits.
pub const EPS_SMALL: f64 = 1e-7;
/// Points closer than this to the antipode of the reference have no log.
pub const EPS_ANTIPODAL: f64 = 1e-6;
/// Allowed deviation from unit norm for a constructed SRVF.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// `T` frames of `d` two-dimensional landmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSequence {
    pub id: String,
    /// Class name, when known.
    pub label: Option<String>,
    frames: usize,
    landmarks: usize,
    /// Row-major `[frame][landmark][x, y]`.
    coords: Vec<f64>,
}

impl LandmarkSequence {
    pub fn new(
        id: impl Into<String>,
        label: Option<String>,
        frames: Vec<Vec<[f64; 2]>>,
    ) -> Result<Self> {
        let id = id.into();
        if frames.len() < 2 {
            return Err(Error::TooShort {
                frames: frames.len(),
            });
        }
        let landmarks = frames[0].len();
        if landmarks == 0 {
            return Err(Error::Schema(format!("sequence {id}: frames have no landmarks")));
        }
        let mut coords = Vec::with_capacity(frames.len() * landmarks * 2);
        for (t, frame) in frames.iter().enumerate() {
            if frame.len() != landmarks {
                return Err(Error::Schema(format!(
                    "sequence {id}: frame {t} has {} landmarks, frame 0 has {landmarks}",
                    frame.len()
                )));
            }
            for (j, p) in frame.iter().enumerate() {
                if !p[0].is_finite() || !p[1].is_finite() {
                    return Err(Error::InvalidValue(format!(
                        "sequence {id}: non-finite coordinate at frame {t}, landmark {j}"
                    )));
                }
                coords.extend_from_slice(p);
            }
        }
        Ok(Self {
            id,
            label,
            frames: frames.len(),
            landmarks,
            coords,
        })
    }

    /// Builds a sequence from flattened frames of length `2d` each.
    pub fn from_flat(
        id: impl Into<String>,
        label: Option<String>,
        landmarks: usize,
        coords: Vec<f64>,
    ) -> Result<Self> {
        let id = id.into();
        if landmarks == 0 || coords.len() % (2 * landmarks) != 0 {
            return Err(Error::shape(
                format!("multiple of {}", 2 * landmarks),
                coords.len(),
            ));
        }
        let frames = coords.len() / (2 * landmarks);
        if frames < 2 {
            return Err(Error::TooShort { frames });
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "sequence {id}: non-finite coordinate at frame {}, landmark {}",
                i / (2 * landmarks),
                (i % (2 * landmarks)) / 2
            )));
        }
        Ok(Self {
            id,
            label,
            frames,
            landmarks,
            coords,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_landmarks(&self) -> usize {
        self.landmarks
    }

    /// Flattened frame `t`: `[x0, y0, x1, y1, ...]`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let w = 2 * self.landmarks;
        &self.coords[t * w..(t + 1) * w]
    }

    pub fn point(&self, t: usize, j: usize) -> [f64; 2] {
        let f = self.frame(t);
        [f[2 * j], f[2 * j + 1]]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(2 * self.landmarks)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_nested(&self) -> Vec<Vec<[f64; 2]>> {
        self.frames()
            .map(|f| f.chunks_exact(2).map(|p| [p[0], p[1]]).collect())
            .collect()
    }

    pub fn to_curve(&self) -> Curve {
        Curve {
            samples: self.frames,
            dim: 2 * self.landmarks,
            data: self.coords.clone(),
        }
    }

    pub fn from_curve(
        id: impl Into<String>,
        label: Option<String>,
        curve: &Curve,
    ) -> Result<Self> {
        if curve.dim % 2 != 0 {
            return Err(Error::shape("even curve dimension", curve.dim));
        }
        Self::from_flat(id, label, curve.dim / 2, curve.data.clone())
    }
}

/// A trajectory sampled at `samples` uniform instants of `[0, 1]` in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    samples: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Curve {
    pub fn new(samples: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if samples < 2 {
            return Err(Error::TooShort { frames: samples });
        }
        if dim == 0 || data.len() != samples * dim {
            return Err(Error::shape(format!("{samples}x{dim}"), data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite curve sample".into()));
        }
        Ok(Self { samples, dim, data })
    }

    pub fn num_samples(&self) -> usize {
        self.samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Sum of Euclidean lengths of the inter-sample displacements.
    pub fn path_length(&self) -> f64 {
        (0..self.samples - 1)
            .map(|k| {
                let (a, b) = (self.sample(k), self.sample(k + 1));
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (y - x) * (y - x))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum()
    }
}

/// A unit-norm piecewise-constant SRVF: `intervals` samples in `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Srvf {
    intervals: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Srvf {
    /// Wraps samples that are already unit norm (within [`NORM_TOLERANCE`]).
    pub fn from_unit_samples(intervals: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        check_layout(intervals, dim, &data)?;
        let norm = weighted_inner(&data, &data, 1.0 / intervals as f64).sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidValue(format!(
                "SRVF norm {norm} is not 1 within {NORM_TOLERANCE:e}"
            )));
        }
        Ok(Self {
            intervals,
            dim,
            data,
        })
    }

    /// Rescales arbitrary (non-zero) samples onto the unit sphere.
    pub fn normalized(intervals: usize, dim: usize, mut data: Vec<f64>) -> Result<Self> {
        check_layout(intervals, dim, &data)?;
        let norm = weighted_inner(&data, &data, 1.0 / intervals as f64).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidValue(format!("cannot normalize norm {norm}")));
        }
        data.iter_mut().for_each(|v| *v /= norm);
        Ok(Self {
            intervals,
            dim,
            data,
        })
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of frames of the curves this SRVF encodes.
    pub fn num_frames(&self) -> usize {
        self.intervals + 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.intervals as f64
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        weighted_inner(&self.data, &self.data, self.dt()).sqrt()
    }

    pub fn negated(&self) -> Srvf {
        Srvf {
            intervals: self.intervals,
            dim: self.dim,
            data: self.data.iter().map(|v| -v).collect(),
        }
    }

    pub(crate) fn same_shape(&self, other: &Srvf) -> Result<()> {
        if self.intervals != other.intervals || self.dim != other.dim {
            return Err(Error::shape(
                format!("{}x{}", self.intervals, self.dim),
                format!("{}x{}", other.intervals, other.dim),
            ));
        }
        Ok(())
    }
}

fn check_layout(intervals: usize, dim: usize, data: &[f64]) -> Result<()> {
    if intervals == 0 || dim == 0 || data.len() != intervals * dim {
        return Err(Error::shape(format!("{intervals}x{dim}"), data.len()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("non-finite SRVF sample".into()));
    }
    Ok(())
}

/// The reference point `y` of a tangent space `T_y(S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentChart {
    reference: Srvf,
    id: u64,
}

impl TangentChart {
    pub fn new(reference: Srvf) -> Self {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        reference.intervals.hash(&mut h);
        reference.dim.hash(&mut h);
        for v in &reference.data {
            v.to_bits().hash(&mut h);
        }
        Self {
            id: h.finish(),
            reference,
        }
    }

    pub fn reference(&self) -> &Srvf {
        &self.reference
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Projects arbitrary samples onto the tangent space: `v - <v, y> y`.
    pub fn project(&self, data: Vec<f64>) -> Result<TangentVector> {
        let y = &self.reference;
        check_layout(y.intervals, y.dim, &data)?;
        let c = weighted_inner(&data, &y.data, y.dt());
        let data = data.iter().zip(&y.data).map(|(v, r)| v - c * r).collect();
        Ok(TangentVector {
            intervals: y.intervals,
            dim: y.dim,
            data,
            chart: self.id,
        })
    }

    /// Wraps samples already known to lie in the tangent space.
    pub(crate) fn wrap(&self, data: Vec<f64>) -> Result<TangentVector> {
        let y = &self.reference;
        check_layout(y.intervals, y.dim, &data)?;
        Ok(TangentVector {
            intervals: y.intervals,
            dim: y.dim,
            data,
            chart: self.id,
        })
    }

    pub fn zero(&self) -> TangentVector {
        TangentVector {
            intervals: self.reference.intervals,
            dim: self.reference.dim,
            data: vec![0.0; self.reference.data.len()],
            chart: self.id,
        }
    }
}

/// A vector of `T_y(S)`; remembers which chart it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    intervals: usize,
    dim: usize,
    data: Vec<f64>,
    chart: u64,
}

impl TangentVector {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn chart_id(&self) -> u64 {
        self.chart
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.intervals as f64
    }

    /// Norm in the `dt`-weighted metric of the sphere.
    pub fn norm(&self) -> f64 {
        weighted_inner(&self.data, &self.data, self.dt()).sqrt()
    }

    pub fn scaled(&self, s: f64) -> TangentVector {
        TangentVector {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }
}

/// `sum_i a_i b_i * dt` with a fixed left-to-right summation order.
pub fn weighted_inner(a: &[f64], b: &[f64], dt: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * dt
}

/// Encodes a curve as its unit-norm SRVF using forward differences.
pub fn srvf_encode(curve: &Curve) -> Result<Srvf> {
    let intervals = curve.samples - 1;
    let dim = curve.dim;
    let dt = 1.0 / intervals as f64;
    let mut data = Vec::with_capacity(intervals * dim);
    let mut moving = false;
    for k in 0..intervals {
        let (a, b) = (curve.sample(k), curve.sample(k + 1));
        let delta: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
        let len = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len < EPS_VELOCITY {
            data.extend(std::iter::repeat(0.0).take(dim));
        } else {
            moving = true;
            let s = (len * dt).sqrt();
            data.extend(delta.iter().map(|v| v / s));
        }
    }
    if !moving {
        return Err(Error::DegenerateCurve { context: None });
    }
    Srvf::normalized(intervals, dim, data)
}

/// Offsets of every frame from frame 0 when decoding `q` at `intensity`:
/// `intensity * sum_{j<k} |q_j| q_j dt`, row-major `(T, dim)` with a zero
/// first row. Scaling `intensity` scales the result exactly.
pub fn srvf_displacements(q: &Srvf, intensity: f64) -> Result<Vec<f64>> {
    if !intensity.is_finite() {
        return Err(Error::InvalidValue(format!("intensity {intensity}")));
    }
    let dt = q.dt();
    let mut running = vec![0.0; q.dim];
    let mut out = Vec::with_capacity((q.intervals + 1) * q.dim);
    out.extend_from_slice(&running);
    for k in 0..q.intervals {
        let qk = q.sample(k);
        let speed = qk.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (r, v) in running.iter_mut().zip(qk) {
            *r += speed * v * dt;
        }
        out.extend(running.iter().map(|r| intensity * r));
    }
    Ok(out)
}

/// Integrates `intensity * |q| q` from `initial`; frame 0 is `initial` exactly.
///
/// For a unit-norm `q` the decoded path has length `intensity`, so passing the
/// original path length as `intensity` restores the scale removed by encoding.
pub fn srvf_decode(q: &Srvf, initial: &[f64], intensity: f64) -> Result<Curve> {
    if initial.len() != q.dim {
        return Err(Error::DimensionMismatch(format!(
            "initial frame has {} values, SRVF dimension is {}",
            initial.len(),
            q.dim
        )));
    }
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("non-finite decode input".into()));
    }
    let disp = srvf_displacements(q, intensity)?;
    let mut data = Vec::with_capacity(disp.len());
    data.extend_from_slice(initial);
    for row in disp.chunks_exact(q.dim).skip(1) {
        data.extend(initial.iter().zip(row).map(|(a, b)| a + b));
    }
    Curve::new(q.intervals + 1, q.dim, data)
}

/// `dt`-weighted inner product of two SRVF-shaped arrays.
pub fn sphere_inner(q1: &Srvf, q2: &Srvf) -> Result<f64> {
    q1.same_shape(q2)?;
    Ok(weighted_inner(&q1.data, &q2.data, q1.dt()))
}

/// Arc length between two points of the sphere, in `[0, pi]`.
///
/// Equal to `acos(<q1, q2>)`; for nearby points the angle is taken from the
/// chord length instead, where `acos` loses half of the significant digits.
pub fn geodesic_distance(q1: &Srvf, q2: &Srvf) -> Result<f64> {
    let c = sphere_inner(q1, q2)?;
    Ok(angle_from(c, &q1.data, &q2.data, q1.dt()))
}

fn angle_from(inner: f64, a: &[f64], b: &[f64], dt: f64) -> f64 {
    if inner > 0.5 {
        let chord2 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            * dt;
        (2.0 * (0.5 * chord2.sqrt()).min(1.0).asin()).min(PI)
    } else {
        inner.clamp(-1.0, 1.0).acos()
    }
}

pub fn log_map(chart: &TangentChart, q: &Srvf) -> Result<TangentVector> {
    let y = &chart.reference;
    y.same_shape(q)?;
    let c = sphere_inner(q, y)?;
    let theta = angle_from(c, &q.data, &y.data, y.dt());
    if theta >= PI - EPS_ANTIPODAL {
        return Err(Error::AntipodalPoint { distance: theta });
    }
    if theta == 0.0 {
        return Ok(chart.zero());
    }
    let coef = if theta < EPS_SMALL {
        1.0
    } else {
        theta / theta.sin()
    };
    let data = q
        .data
        .iter()
        .zip(&y.data)
        .map(|(qi, yi)| coef * (qi - c * yi))
        .collect();
    Ok(TangentVector {
        intervals: y.intervals,
        dim: y.dim,
        data,
        chart: chart.id,
    })
}

pub fn exp_map(chart: &TangentChart, v: &TangentVector) -> Result<Srvf> {
    let y = &chart.reference;
    if v.data.len() != y.data.len() || v.intervals != y.intervals {
        return Err(Error::shape(y.data.len(), v.data.len()));
    }
    let n = v.norm();
    if n == 0.0 {
        return Ok(y.clone());
    }
    // First-order step below EPS_SMALL; returning `y` there would stall
    // iterative solvers whose tolerance is finer than EPS_SMALL.
    let (c, s) = if n < EPS_SMALL {
        (1.0, 1.0)
    } else {
        (n.cos(), n.sin() / n)
    };
    let data: Vec<f64> = y
        .data
        .iter()
        .zip(&v.data)
        .map(|(yi, vi)| c * yi + s * vi)
        .collect();
    Srvf::normalized(y.intervals, y.dim, data)
}

/// Point at fraction `s` of the minimal geodesic from `q1` to `q2`.
pub fn geodesic_interpolate(q1: &Srvf, q2: &Srvf, s: f64) -> Result<Srvf> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidValue(format!("interpolation parameter {s}")));
    }
    let theta = geodesic_distance(q1, q2)?;
    if theta >= PI - EPS_ANTIPODAL {
        return Err(Error::AntipodalPoint { distance: theta });
    }
    if s == 0.0 {
        return Ok(q1.clone());
    }
    if s == 1.0 {
        return Ok(q2.clone());
    }
    let (w1, w2) = if theta < EPS_SMALL {
        (1.0 - s, s)
    } else {
        let st = theta.sin();
        (((1.0 - s) * theta).sin() / st, (s * theta).sin() / st)
    };
    let data = q1
        .data
        .iter()
        .zip(&q2.data)
        .map(|(a, b)| w1 * a + w2 * b)
        .collect();
    Srvf::normalized(q1.intervals, q1.dim, data)
}
