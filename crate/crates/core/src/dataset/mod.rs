//! Landmark-sequence ingestion and SRVF training-set preparation.

mod io;
mod synth;

use std::collections::BTreeSet;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{align, karcher_mean, KarcherConfig};
use crate::error::{Error, Result};
use crate::geometry::{srvf_encode, LandmarkSequence, Srvf, TangentChart};

pub use io::{
    load_landmark_sequences, load_prepared, parse_landmark_jsonl, save_prepared,
    write_landmark_jsonl, LandmarkFormat, LandmarkSchema, PREPARED_MAGIC,
};
pub use synth::{synth_corpus, MotionFamily, SynthSpec};

/// The six basic expressions, in canonical class order.
pub const EXPRESSION_NAMES: [&str; 6] = ["anger", "disgust", "fear", "happy", "sad", "surprise"];

/// Class index `0..classes` with its one-hot encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExpressionLabel {
    index: usize,
    classes: usize,
}

impl ExpressionLabel {
    pub fn new(index: usize, classes: usize) -> Result<Self> {
        if index >= classes {
            return Err(Error::InvalidValue(format!(
                "label index {index} out of range for {classes} classes"
            )));
        }
        Ok(Self { index, classes })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.classes];
        v[self.index] = 1.0;
        v
    }
}

/// Orders class names: canonical expressions first, then anything else
/// alphabetically.
pub fn canonical_class_order<'a>(names: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let set: BTreeSet<&str> = names.into_iter().collect();
    let mut out: Vec<String> = EXPRESSION_NAMES
        .iter()
        .filter(|n| set.contains(*n))
        .map(|n| n.to_string())
        .collect();
    out.extend(
        set.iter()
            .filter(|n| !EXPRESSION_NAMES.contains(n))
            .map(|n| n.to_string()),
    );
    out
}

/// Resamples to `target` frames by per-landmark linear interpolation at
/// uniform times. First and last frames are copied exactly.
pub fn resample_sequence(seq: &LandmarkSequence, target: usize) -> Result<LandmarkSequence> {
    let frames = seq.num_frames();
    if frames < 2 {
        return Err(Error::TooShort { frames });
    }
    if target < 2 {
        return Err(Error::InvalidValue(format!("cannot resample to {target} frames")));
    }
    if frames == target {
        return Ok(seq.clone());
    }
    let width = 2 * seq.num_landmarks();
    let mut coords = Vec::with_capacity(target * width);
    for k in 0..target {
        if k == 0 {
            coords.extend_from_slice(seq.frame(0));
            continue;
        }
        if k == target - 1 {
            coords.extend_from_slice(seq.frame(frames - 1));
            continue;
        }
        let x = k as f64 * (frames - 1) as f64 / (target - 1) as f64;
        let i = (x.floor() as usize).min(frames - 2);
        let f = x - i as f64;
        let (a, b) = (seq.frame(i), seq.frame(i + 1));
        coords.extend(a.iter().zip(b).map(|(u, v)| u + f * (v - u)));
    }
    LandmarkSequence::from_flat(
        seq.id.clone(),
        seq.label.clone(),
        seq.num_landmarks(),
        coords,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub frames: usize,
    /// Expected classes in label order. `None` uses the labels present, in
    /// canonical order.
    pub classes: Option<Vec<String>>,
    pub class_mean: KarcherConfig,
    pub chart_mean: KarcherConfig,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            frames: 32,
            classes: None,
            class_mean: KarcherConfig::default(),
            chart_mean: KarcherConfig::without_alignment(),
        }
    }
}

/// SRVF training set: every sample registered to its class mean, plus the
/// global Karcher mean that serves as the tangent chart.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub frames: usize,
    pub landmarks: usize,
    pub class_names: Vec<String>,
    pub srvfs: Vec<Srvf>,
    pub labels: Vec<ExpressionLabel>,
    pub chart: TangentChart,
    pub class_means: Vec<Srvf>,
    pub provenance: String,
}

impl PreparedDataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn label_of(&self, name: &str) -> Option<ExpressionLabel> {
        let i = self.class_names.iter().position(|n| n == name)?;
        ExpressionLabel::new(i, self.class_names.len()).ok()
    }

    /// Indices of the samples of class `c`.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i].index() == c)
            .collect()
    }
}

/// Resample, encode, register to class Karcher means and compute the chart.
pub fn prepare(
    sequences: &[LandmarkSequence],
    config: &PrepareConfig,
    provenance: &str,
) -> Result<PreparedDataset> {
    let first = sequences
        .first()
        .ok_or_else(|| Error::MissingClass(config.classes.clone().unwrap_or_default()))?;
    let landmarks = first.num_landmarks();
    let mut names = Vec::with_capacity(sequences.len());
    for s in sequences {
        if s.num_landmarks() != landmarks {
            return Err(Error::Schema(format!(
                "sequence {} has {} landmarks, expected {landmarks}",
                s.id,
                s.num_landmarks()
            )));
        }
        let label = s
            .label
            .as_deref()
            .ok_or_else(|| Error::Schema(format!("sequence {} has no label", s.id)))?;
        names.push(label);
    }
    let class_names = match &config.classes {
        Some(c) => c.clone(),
        None => canonical_class_order(names.iter().copied()),
    };
    if class_names.is_empty() {
        return Err(Error::Config("no classes".into()));
    }
    let missing: Vec<String> = class_names
        .iter()
        .filter(|c| !names.contains(&c.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingClass(missing));
    }
    let labels = names
        .iter()
        .zip(sequences)
        .map(|(n, s)| {
            let i = class_names.iter().position(|c| c == n).ok_or_else(|| {
                Error::Schema(format!("sequence {}: unknown label {n}", s.id))
            })?;
            ExpressionLabel::new(i, class_names.len())
        })
        .collect::<Result<Vec<_>>>()?;

    let encoded: Vec<Srvf> = sequences
        .par_iter()
        .map(|s| {
            let r = resample_sequence(s, config.frames)?;
            srvf_encode(&r.to_curve()).map_err(|e| match e {
                Error::DegenerateCurve { .. } => Error::DegenerateCurve {
                    context: Some(format!("sequence {}", s.id)),
                },
                e => e,
            })
        })
        .collect::<Result<_>>()?;

    let mut class_means = Vec::with_capacity(class_names.len());
    for c in 0..class_names.len() {
        let members: Vec<Srvf> = encoded
            .iter()
            .zip(&labels)
            .filter(|(_, l)| l.index() == c)
            .map(|(q, _)| q.clone())
            .collect();
        class_means.push(karcher_mean(&members, &config.class_mean)?);
    }
    let srvfs: Vec<Srvf> = encoded
        .par_iter()
        .zip(&labels)
        .map(|(q, l)| align(&class_means[l.index()], q).map(|a| a.aligned))
        .collect::<Result<_>>()?;
    let chart = TangentChart::new(karcher_mean(&srvfs, &config.chart_mean)?);
    info!(
        "prepared {} sequences, {} classes, T={}, d={landmarks}",
        srvfs.len(),
        class_names.len(),
        config.frames
    );
    Ok(PreparedDataset {
        frames: config.frames,
        landmarks,
        class_names,
        srvfs,
        labels,
        chart,
        class_means,
        provenance: provenance.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::frechet_variance;
    use crate::geometry::{geodesic_distance, srvf_decode};

    fn seq(id: &str, label: &str, frames: usize, f: impl Fn(f64) -> [f64; 4]) -> LandmarkSequence {
        let coords = (0..frames)
            .flat_map(|k| f(k as f64 / (frames - 1) as f64))
            .collect();
        LandmarkSequence::from_flat(id, Some(label.into()), 2, coords).unwrap()
    }

    #[test]
    fn one_hot() {
        let l = ExpressionLabel::new(3, 6).unwrap();
        assert_eq!(l.one_hot(), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(ExpressionLabel::new(6, 6).is_err());
    }

    #[test]
    fn class_order() {
        assert_eq!(
            canonical_class_order(["zeta", "surprise", "happy", "alpha", "happy"]),
            vec!["happy", "surprise", "alpha", "zeta"]
        );
    }

    #[test]
    fn resample_identity_and_linear() {
        let s = seq("a", "happy", 7, |t| [t, 2.0 * t, 1.0 - t, 0.5]);
        assert_eq!(resample_sequence(&s, 7).unwrap(), s);
        let r = resample_sequence(&s, 20).unwrap();
        assert_eq!(r.num_frames(), 20);
        assert_eq!(r.frame(0), s.frame(0));
        assert_eq!(r.frame(19), s.frame(6));
        for k in 0..20 {
            let t = k as f64 / 19.0;
            let f = r.frame(k);
            assert!((f[0] - t).abs() < 1e-12);
            assert!((f[1] - 2.0 * t).abs() < 1e-12);
            assert!((f[2] - (1.0 - t)).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_sinusoid_within_interpolation_bound() {
        let w = 2.0 * std::f64::consts::PI;
        let s = seq("a", "happy", 50, |t| [(w * t).sin(), 0.0, 0.0, (w * t).cos()]);
        let r = resample_sequence(&s, 32).unwrap();
        // h^2 max|f''| / 8 with h = 1/49 and |f''| <= w^2
        let bound = (1.0 / 49.0f64).powi(2) * w * w / 8.0;
        for k in 0..32 {
            let t = k as f64 / 31.0;
            let f = r.frame(k);
            assert!((f[0] - (w * t).sin()).abs() <= bound + 1e-15);
            assert!((f[3] - (w * t).cos()).abs() <= bound + 1e-15);
        }
    }

    #[test]
    fn prepare_singletons_and_missing_class() {
        let a = seq("a", "happy", 12, |t| [t, t * t, 0.0, t]);
        let b = seq("b", "sad", 12, |t| [(3.0 * t).sin(), 0.0, t, -t]);
        let cfg = PrepareConfig {
            frames: 10,
            ..PrepareConfig::default()
        };
        let p = prepare(&[a.clone(), b.clone()], &cfg, "test").unwrap();
        assert_eq!(p.class_names, vec!["happy", "sad"]);
        let qa = srvf_encode(&resample_sequence(&a, 10).unwrap().to_curve()).unwrap();
        assert!(geodesic_distance(&p.class_means[0], &qa).unwrap() < 1e-9);
        for q in &p.srvfs {
            assert!((q.norm() - 1.0).abs() < 1e-9);
        }
        // chart beats every class mean as a Frechet center
        let v = frechet_variance(p.chart.reference(), &p.srvfs).unwrap();
        for m in &p.class_means {
            assert!(v <= frechet_variance(m, &p.srvfs).unwrap());
        }

        let cfg = PrepareConfig {
            classes: Some(vec!["happy".into(), "sad".into(), "fear".into()]),
            ..cfg
        };
        match prepare(&[a, b], &cfg, "test") {
            Err(Error::MissingClass(m)) => assert_eq!(m, vec!["fear"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prepare_reports_degenerate_sequence() {
        let a = seq("still", "happy", 5, |_| [1.0, 1.0, 2.0, 2.0]);
        match prepare(&[a], &PrepareConfig::default(), "t") {
            Err(Error::DegenerateCurve { context }) => {
                assert!(context.unwrap().contains("still"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn decoded_round_trip_keeps_srvf() {
        let a = seq("a", "happy", 9, |t| [t, (2.0 * t).sin(), 0.3 * t, t * t]);
        let q = srvf_encode(&a.to_curve()).unwrap();
        let back = srvf_decode(&q, a.frame(0), 1.0).unwrap();
        let q2 = srvf_encode(&back).unwrap();
        assert!(geodesic_distance(&q, &q2).unwrap() < 1e-9);
    }
}
