use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shapes of the generator and critic stacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub z_dim: usize,
    pub generator_widths: Vec<usize>,
    pub critic_widths: Vec<usize>,
    /// The generator's tanh output is multiplied by this.
    pub output_scale: f64,
    pub leaky_slope: f64,
    /// Batch normalization on the critic's hidden layers.
    pub critic_batch_norm: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            z_dim: 128,
            generator_widths: vec![256, 512, 512],
            critic_widths: vec![512, 256, 128],
            output_scale: 0.95 * std::f64::consts::PI,
            leaky_slope: 0.2,
            critic_batch_norm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub n_disc: usize,
    pub lambda: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Update the generator with the adversarial term alone.
    pub algorithm1_strict: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            batch: 128,
            n_disc: 5,
            lambda: 10.0,
            alpha1: 0.8,
            alpha2: 1.0,
            alpha3: 1.0,
            iterations: 1000,
            seed: 0,
            algorithm1_strict: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let positive = [
            ("lr", self.lr),
            ("output_scale", self.net.output_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("lambda", self.lambda),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("leaky_slope", self.net.leaky_slope),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if self.n_disc == 0 {
            return bad("n_disc must be at least 1".into());
        }
        if self.net.z_dim == 0 {
            return bad("z_dim must be positive".into());
        }
        if self.net.generator_widths.contains(&0) || self.net.critic_widths.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.net.critic_batch_norm && self.batch < 2 {
            return bad("critic batch normalization needs batch >= 2".into());
        }
        Ok(())
    }
}
