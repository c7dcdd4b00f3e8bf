//! Pairwise geodesic evaluation of SRVF sets: distance matrices, classical
//! MDS, class separation statistics and SVG/CSV output.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{align, karcher_mean, KarcherConfig};
use crate::dataset::ExpressionLabel;
use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, LandmarkSequence, Srvf};

const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Symmetric `N x N` matrix of geodesic distances with the labels of its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
    pub labels: Vec<ExpressionLabel>,
    /// Whether each pair was registered before measuring.
    pub aligned: bool,
}

impl DistanceMatrix {
    /// Checks symmetry, a zero diagonal and entries in `[0, pi]`.
    pub fn from_values(n: usize, values: Vec<f64>, labels: Vec<ExpressionLabel>) -> Result<Self> {
        if values.len() != n * n || labels.len() != n {
            return Err(Error::shape(format!("{n}x{n} with {n} labels"), format!("{} values, {} labels", values.len(), labels.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::InvalidValue(format!("diagonal entry {i} is {}", values[i * n + i])));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !(0.0..=std::f64::consts::PI + 1e-12).contains(&v) || (v - values[j * n + i]).abs() > 1e-12 {
                    return Err(Error::InvalidValue(format!("entry ({i}, {j}) = {v}")));
                }
            }
        }
        Ok(Self {
            n,
            values,
            labels,
            aligned: false,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// RFC 4180 CSV: a header of row labels, then one row per sample.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = std::iter::once("label".to_string())
            .chain((0..self.n).map(|j| format!("s{j}")))
            .collect();
        w.write_record(&header).expect("in-memory CSV");
        for i in 0..self.n {
            let row: Vec<String> = std::iter::once(self.labels[i].index().to_string())
                .chain((0..self.n).map(|j| format!("{:.17e}", self.get(i, j))))
                .collect();
            w.write_record(&row).expect("in-memory CSV");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
    }
}

/// Distance between two samples; registered when `aligned`.
pub fn pair_distance(a: &Srvf, b: &Srvf, aligned: bool) -> Result<f64> {
    if aligned {
        Ok(align(a, b)?.cost)
    } else {
        geodesic_distance(a, b)
    }
}

/// All pairwise distances. Each unordered pair is measured once, as
/// `d(set[i], set[j])` with `i < j`, and mirrored.
pub fn distance_matrix(set: &[Srvf], labels: &[ExpressionLabel], aligned: bool) -> Result<DistanceMatrix> {
    let n = set.len();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    if labels.len() != n {
        return Err(Error::shape(n, labels.len()));
    }
    for q in &set[1..] {
        if q.intervals() != set[0].intervals() || q.dim() != set[0].dim() {
            return Err(Error::shape(
                format!("{}x{}", set[0].intervals(), set[0].dim()),
                format!("{}x{}", q.intervals(), q.dim()),
            ));
        }
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let upper = pairs
        .par_iter()
        .map(|&(i, j)| pair_distance(&set[i], &set[j], aligned))
        .collect::<Result<Vec<f64>>>()?;
    let mut values = vec![0.0; n * n];
    for (&(i, j), d) in pairs.iter().zip(upper) {
        values[i * n + j] = d;
        values[j * n + i] = d;
    }
    Ok(DistanceMatrix {
        n,
        values,
        labels: labels.to_vec(),
        aligned,
    })
}

/// Eigenvalues and column eigenvectors of a symmetric matrix by cyclic
/// Jacobi rotations, sorted by decreasing eigenvalue.
pub fn symmetric_eigen(n: usize, matrix: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if matrix.len() != n * n {
        return Err(Error::shape(n * n, matrix.len()));
    }
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    (0..n).for_each(|i| v[i * n + i] = 1.0);
    let off = |a: &[f64]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let mut sweeps = 0;
    while off(&a) > JACOBI_TOLERANCE * scale {
        if sweeps == JACOBI_MAX_SWEEPS {
            warn!("jacobi stopped after {sweeps} sweeps, off-diagonal norm {:.3e}", off(&a));
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + col] = v[r * n + src];
        }
    }
    Ok((values, vectors))
}

/// Classical (Torgerson) MDS embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub k: usize,
    /// Row-major `N x k`.
    pub coords: Vec<f64>,
    /// Top `k` eigenvalues of the double-centered matrix.
    pub eigenvalues: Vec<f64>,
    /// Kruskal stress-1 of embedded against input distances.
    pub stress: f64,
    /// Every eigenvalue was non-positive; coordinates are zero.
    pub degenerate: bool,
}

impl Embedding {
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.k..(i + 1) * self.k]
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Top-`k` eigenvectors of `-J D^2 J / 2` scaled by the square roots of
/// their (clamped) eigenvalues. Each axis is signed so that its
/// largest-magnitude coordinate is positive.
pub fn classical_mds(dm: &DistanceMatrix, k: usize) -> Result<Embedding> {
    let n = dm.len();
    if k == 0 || n < k + 1 {
        return Err(Error::InvalidValue(format!("MDS into {k} dimensions needs at least {} points, got {n}", k + 1)));
    }
    let sq: Vec<f64> = dm.values().iter().map(|d| d * d).collect();
    let row_mean: Vec<f64> = (0..n).map(|i| sq[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let total = row_mean.iter().sum::<f64>() / n as f64;
    let b: Vec<f64> = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            -0.5 * (sq[idx] - row_mean[i] - row_mean[j] + total)
        })
        .collect();
    let (values, vectors) = symmetric_eigen(n, &b)?;
    let degenerate = values.iter().all(|v| *v <= 0.0);
    if degenerate {
        warn!("MDS spectrum has no positive eigenvalue; returning zero coordinates");
    }
    let mut coords = vec![0.0; n * k];
    for c in 0..k {
        let s = values[c].max(0.0).sqrt();
        let col: Vec<f64> = (0..n).map(|r| vectors[r * n + c]).collect();
        let lead = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            coords[r * k + c] = sign * s * col[r];
        }
    }
    let mut emb = Embedding {
        k,
        coords,
        eigenvalues: values[..k].to_vec(),
        stress: 0.0,
        degenerate,
    };
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = dm.get(i, j);
            num += (d - emb.distance(i, j)).powi(2);
            den += d * d;
        }
    }
    emb.stress = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    Ok(emb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub samples: usize,
    pub classes: usize,
    /// Mean distance over pairs sharing a class.
    pub intra_class_mean: f64,
    /// Mean distance over pairs from different classes.
    pub inter_class_mean: f64,
    pub silhouette_mean: f64,
    /// Fraction of samples closest to their own class mean.
    pub nearest_class_mean_accuracy: f64,
}

impl SeparationReport {
    /// Two-line RFC 4180 CSV.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(self).expect("in-memory CSV");
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
    }
}

/// Silhouette of each sample. A sample alone in its class has zero
/// intra-class distance.
pub fn silhouettes(dm: &DistanceMatrix) -> Result<Vec<f64>> {
    silhouettes_by(&dm.labels, |i, j| dm.get(i, j))
}

/// Silhouettes measured with Euclidean distances between embedded points.
pub fn embedding_silhouettes(emb: &Embedding, labels: &[ExpressionLabel]) -> Result<Vec<f64>> {
    if emb.len() != labels.len() {
        return Err(Error::shape(emb.len(), labels.len()));
    }
    silhouettes_by(labels, |i, j| emb.distance(i, j))
}

fn silhouettes_by(labels: &[ExpressionLabel], dist: impl Fn(usize, usize) -> f64) -> Result<Vec<f64>> {
    let n = labels.len();
    let classes = labels.first().map_or(0, |l| l.classes());
    let present: std::collections::BTreeSet<usize> = labels.iter().map(|l| l.index()).collect();
    if present.len() < 2 {
        return Err(Error::SingleClass);
    }
    Ok((0..n)
        .map(|i| {
            let mut sum = vec![0.0; classes];
            let mut count = vec![0usize; classes];
            for j in 0..n {
                if j != i {
                    let c = labels[j].index();
                    sum[c] += dist(i, j);
                    count[c] += 1;
                }
            }
            let own = labels[i].index();
            let a = if count[own] == 0 { 0.0 } else { sum[own] / count[own] as f64 };
            let b = (0..classes)
                .filter(|&c| c != own && count[c] > 0)
                .map(|c| sum[c] / count[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect())
}

/// Karcher mean of each class present in `labels`, indexed by class.
pub fn class_means(
    set: &[Srvf],
    labels: &[ExpressionLabel],
    config: &KarcherConfig,
) -> Result<Vec<Option<Srvf>>> {
    if set.len() != labels.len() {
        return Err(Error::shape(set.len(), labels.len()));
    }
    let classes = labels.first().map_or(0, |l| l.classes());
    (0..classes)
        .map(|c| {
            let members: Vec<Srvf> = set
                .iter()
                .zip(labels)
                .filter(|(_, l)| l.index() == c)
                .map(|(q, _)| q.clone())
                .collect();
            if members.is_empty() {
                Ok(None)
            } else {
                karcher_mean(&members, config).map(Some)
            }
        })
        .collect()
}

/// Index of the closest mean, measured like the matrix entries.
pub fn nearest_class_mean(q: &Srvf, means: &[Option<Srvf>], aligned: bool) -> Result<usize> {
    let mut best = None;
    for (c, m) in means.iter().enumerate() {
        if let Some(m) = m {
            let d = pair_distance(m, q, aligned)?;
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((c, d));
            }
        }
    }
    best.map(|(c, _)| c).ok_or(Error::EmptySet)
}

/// Separation statistics of `dm`; `set` holds the samples behind its rows
/// and `means` the per-class centers used for nearest-class-mean accuracy.
pub fn class_separation(
    dm: &DistanceMatrix,
    set: &[Srvf],
    means: &[Option<Srvf>],
) -> Result<SeparationReport> {
    let n = dm.len();
    if set.len() != n {
        return Err(Error::shape(n, set.len()));
    }
    let sil = silhouettes(dm)?;
    let (mut intra, mut ni, mut inter, mut ne) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            if dm.labels[i] == dm.labels[j] {
                intra += dm.get(i, j);
                ni += 1;
            } else {
                inter += dm.get(i, j);
                ne += 1;
            }
        }
    }
    let predictions = set
        .par_iter()
        .map(|q| nearest_class_mean(q, means, dm.aligned))
        .collect::<Result<Vec<usize>>>()?;
    let correct = predictions
        .iter()
        .zip(&dm.labels)
        .filter(|(p, l)| **p == l.index())
        .count();
    let present: std::collections::BTreeSet<usize> = dm.labels.iter().map(|l| l.index()).collect();
    Ok(SeparationReport {
        samples: n,
        classes: present.len(),
        intra_class_mean: if ni > 0 { intra / ni as f64 } else { 0.0 },
        inter_class_mean: inter / ne as f64,
        silhouette_mean: sil.iter().sum::<f64>() / n as f64,
        nearest_class_mean_accuracy: correct as f64 / n as f64,
    })
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Scatter plot of 2-D coordinates, one color per class, with a legend.
pub fn scatter_svg(coords: &[[f64; 2]], labels: &[ExpressionLabel], class_names: &[String]) -> Result<String> {
    if coords.len() != labels.len() {
        return Err(Error::shape(coords.len(), labels.len()));
    }
    let (size, pad, legend_w) = (480.0, 24.0, 140.0);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in coords {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = if span > 0.0 && span.is_finite() { (size - 2.0 * pad) / span } else { 1.0 };
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{size}" viewBox="0 0 {} {size}">"#,
        size + legend_w,
        size + legend_w
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{}" height="{size}" fill="white"/>"#, size + legend_w);
    let _ = writeln!(s, r#"<g id="points">"#);
    for (p, l) in coords.iter().zip(labels) {
        let x = pad + (p[0] - lo[0]) * scale;
        // SVG y grows downwards
        let y = size - pad - (p[1] - lo[1]) * scale;
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.3}" cy="{y:.3}" r="4" fill="{}" fill-opacity="0.8"/>"#,
            PALETTE[l.index() % PALETTE.len()]
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="legend" font-family="sans-serif" font-size="12">"#);
    for (c, name) in class_names.iter().enumerate() {
        let y = pad + 18.0 * c as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            size + 8.0,
            y,
            PALETTE[c % PALETTE.len()],
            size + 24.0,
            y + 9.0,
            escape(name)
        );
    }
    let _ = writeln!(s, "</g>\n</svg>");
    Ok(s)
}

pub fn export_scatter_svg(
    coords: &[[f64; 2]],
    labels: &[ExpressionLabel],
    class_names: &[String],
    path: &Path,
) -> Result<()> {
    write_file(path, &scatter_svg(coords, labels, class_names)?)
}

/// Every frame as a point set in a row of panels captioned with its index.
pub fn landmark_frames_svg(seq: &LandmarkSequence) -> String {
    let (panel, pad) = (160.0, 12.0);
    let t = seq.num_frames();
    let cols = t.min(8);
    let rows = t.div_ceil(cols);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in seq.coords().chunks_exact(2) {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = if span > 0.0 { (panel - 2.0 * pad - 16.0) / span } else { 1.0 };
    let (w, h) = (panel * cols as f64, panel * rows as f64);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    for f in 0..t {
        let (ox, oy) = (panel * (f % cols) as f64, panel * (f / cols) as f64);
        let _ = writeln!(s, r#"<g class="frame" id="frame-{f}">"#);
        for p in seq.frame(f).chunks_exact(2) {
            let x = ox + pad + (p[0] - lo[0]) * scale;
            let y = oy + panel - pad - 16.0 - (p[1] - lo[1]) * scale;
            let _ = writeln!(s, r#"<circle cx="{x:.3}" cy="{y:.3}" r="2" fill="black"/>"#);
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">frame {f}</text>"#,
            ox + pad,
            oy + panel - 4.0
        );
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(s, "</svg>");
    s
}

pub fn export_landmark_frames_svg(seq: &LandmarkSequence, path: &Path) -> Result<()> {
    write_file(path, &landmark_frames_svg(seq))
}
