use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::EXPRESSION_NAMES;
use crate::error::{Error, Result};
use crate::geometry::LandmarkSequence;

/// Parametric displacement pattern of one synthetic class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionFamily {
    /// Full-period sinusoid along a per-landmark direction.
    Oscillation,
    /// Smoothstep ramp to a displaced pose.
    Ramp,
    /// Out and back along a per-landmark direction.
    RiseFall,
    /// Each landmark traces a small circle.
    Circle,
    /// Two bumps in quick succession.
    DoubleBump,
    /// Landmarks alternate between opposite ramps.
    Opposed,
}

impl MotionFamily {
    pub const ALL: [MotionFamily; 6] = [
        Self::Oscillation,
        Self::Ramp,
        Self::RiseFall,
        Self::Circle,
        Self::DoubleBump,
        Self::Opposed,
    ];

    /// Displacement of landmark `j` at (warped) time `t`, before amplitude.
    fn displacement(self, j: usize, landmarks: usize, t: f64) -> [f64; 2] {
        let angle = 2.0 * PI * j as f64 / landmarks as f64;
        let dir = [angle.cos(), angle.sin()];
        let along = |s: f64| [dir[0] * s, dir[1] * s];
        match self {
            Self::Oscillation => along((2.0 * PI * t).sin()),
            Self::Ramp => along(t * t * (3.0 - 2.0 * t)),
            Self::RiseFall => along((PI * t).sin()),
            Self::Circle => [
                ((2.0 * PI * t + angle).cos() - angle.cos()) * 0.5,
                ((2.0 * PI * t + angle).sin() - angle.sin()) * 0.5,
            ],
            Self::DoubleBump => along((2.0 * PI * t).sin().powi(2)),
            Self::Opposed => {
                let s = t * t * (3.0 - 2.0 * t);
                let perp = [-dir[1], dir[0]];
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                [sign * perp[0] * s, sign * perp[1] * s]
            }
        }
    }
}

/// Labeled synthetic corpus description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub frames: usize,
    pub landmarks: usize,
    /// Standard deviation of i.i.d. coordinate noise.
    pub noise: f64,
    /// Scale of the class displacement pattern.
    pub motion_scale: f64,
    /// Amplitude multiplier is drawn from `[1 - j, 1 + j]`.
    pub amplitude_jitter: f64,
    /// Time warp `t + w t (1 - t)` with `w` drawn from `[-j, j]`; must be < 1.
    pub warp_jitter: f64,
    /// Half-width of the uniform neutral-pose translation.
    pub translation_jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            per_class: 64,
            frames: 16,
            landmarks: 2,
            noise: 0.01,
            motion_scale: 0.3,
            amplitude_jitter: 0.3,
            warp_jitter: 0.5,
            translation_jitter: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.classes == 0 || self.classes > MotionFamily::ALL.len() {
            return bad("classes must be between 1 and 6");
        }
        if self.per_class == 0 {
            return bad("per_class must be positive");
        }
        if self.frames < 2 {
            return bad("frames must be at least 2");
        }
        if self.landmarks == 0 {
            return bad("landmarks must be positive");
        }
        let finite_nonneg = [
            self.noise,
            self.motion_scale,
            self.amplitude_jitter,
            self.warp_jitter,
            self.translation_jitter,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0);
        if !finite_nonneg {
            return bad("noise, scales and jitters must be finite and non-negative");
        }
        if self.motion_scale == 0.0 {
            return bad("motion_scale must be positive");
        }
        if self.amplitude_jitter >= 1.0 {
            return bad("amplitude_jitter must be below 1");
        }
        if self.warp_jitter >= 1.0 {
            return bad("warp_jitter must be below 1 to keep warps monotone");
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        EXPRESSION_NAMES[..self.classes.min(EXPRESSION_NAMES.len())]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

/// Neutral pose: landmarks evenly spaced on the unit circle.
fn neutral(landmarks: usize) -> Vec<[f64; 2]> {
    (0..landmarks)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / landmarks as f64 + 0.25;
            [a.cos(), a.sin()]
        })
        .collect()
}

/// Class `c` uses `MotionFamily::ALL[c]`. Sequences are ordered class by
/// class and named `<class>-<k>`.
pub fn synth_corpus(spec: &SynthSpec, seed: u64) -> Result<Vec<LandmarkSequence>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = neutral(spec.landmarks);
    let names = spec.class_names();
    let mut out = Vec::with_capacity(spec.classes * spec.per_class);
    for (c, name) in names.iter().enumerate() {
        let family = MotionFamily::ALL[c];
        for k in 0..spec.per_class {
            let amp = spec.motion_scale
                * (1.0 + spec.amplitude_jitter * rng.gen_range(-1.0..=1.0));
            let w = spec.warp_jitter * rng.gen_range(-1.0..=1.0);
            let shift = [
                spec.translation_jitter * rng.gen_range(-1.0..=1.0),
                spec.translation_jitter * rng.gen_range(-1.0..=1.0),
            ];
            let mut coords = Vec::with_capacity(spec.frames * spec.landmarks * 2);
            for f in 0..spec.frames {
                let t = f as f64 / (spec.frames - 1) as f64;
                let tw = t + w * t * (1.0 - t);
                for (j, p) in base.iter().enumerate() {
                    let d = family.displacement(j, spec.landmarks, tw);
                    for a in 0..2 {
                        let mut v = p[a] + shift[a] + amp * d[a];
                        if spec.noise > 0.0 {
                            let z: f64 = rng.sample(StandardNormal);
                            v += spec.noise * z;
                        }
                        coords.push(v);
                    }
                }
            }
            out.push(LandmarkSequence::from_flat(
                format!("{name}-{k:03}"),
                Some(name.clone()),
                spec.landmarks,
                coords,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let spec = SynthSpec {
            per_class: 5,
            ..SynthSpec::default()
        };
        assert_eq!(synth_corpus(&spec, 3).unwrap(), synth_corpus(&spec, 3).unwrap());
        assert_ne!(synth_corpus(&spec, 3).unwrap(), synth_corpus(&spec, 4).unwrap());
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            SynthSpec { classes: 0, ..SynthSpec::default() },
            SynthSpec { classes: 7, ..SynthSpec::default() },
            SynthSpec { frames: 1, ..SynthSpec::default() },
            SynthSpec { noise: -1.0, ..SynthSpec::default() },
            SynthSpec { warp_jitter: 1.0, ..SynthSpec::default() },
        ] {
            assert!(matches!(synth_corpus(&spec, 0), Err(Error::InvalidSpec(_))));
        }
    }

    #[test]
    fn noiseless_ramps_are_scaled_warped_prototypes() {
        let spec = SynthSpec {
            classes: 2,
            per_class: 8,
            frames: 9,
            landmarks: 3,
            noise: 0.0,
            ..SynthSpec::default()
        };
        for s in synth_corpus(&spec, 11).unwrap().iter().skip(8) {
            assert_eq!(s.label.as_deref(), Some("disgust"));
            let mut amp = None;
            for j in 0..3 {
                let angle = 2.0 * PI * j as f64 / 3.0;
                let dir = [angle.cos(), angle.sin()];
                let (a, b) = (s.point(0, j), s.point(8, j));
                let total = [b[0] - a[0], b[1] - a[1]];
                let n = total[0] * dir[0] + total[1] * dir[1];
                assert!((total[0] - n * dir[0]).abs() < 1e-12);
                assert!((total[1] - n * dir[1]).abs() < 1e-12);
                let amp = *amp.get_or_insert(n);
                assert!((n - amp).abs() < 1e-12);
                assert!((0.3 * 0.7 - 1e-12..=0.3 * 1.3 + 1e-12).contains(&n));
                // monotone progress along the ramp
                let mut last = 0.0;
                for f in 1..9 {
                    let p = s.point(f, j);
                    let prog = (p[0] - a[0]) * dir[0] + (p[1] - a[1]) * dir[1];
                    assert!(prog >= last - 1e-12);
                    last = prog;
                }
            }
        }
    }
}
