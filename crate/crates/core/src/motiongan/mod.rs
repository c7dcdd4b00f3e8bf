//! Conditional Wasserstein GAN on the tangent space at the Karcher mean.

mod checkpoint;
mod config;
pub mod losses;
mod nets;

use std::time::Instant;

use log::{debug, info, trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ExpressionLabel, PreparedDataset};
use crate::diffcore::{AdamConfig, AdamState, Graph, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{exp_map, log_map, Srvf, TangentChart, TangentVector};

pub use checkpoint::{load_checkpoint, load_checkpoint_for_chart, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::{NetConfig, TrainConfig};
pub use losses::{
    critic_loss, generator_loss, CriticLossParts, GeneratorLossParts, LossWeights, NetSettings,
    NORM_CAP,
};
pub use nets::{Activation, DenseNet};

use losses::{fake_rows, generator_rows, ChartVars};

/// Generator, critic and their optimizer states, tied to one chart.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionGan {
    pub config: TrainConfig,
    pub class_names: Vec<String>,
    pub frames: usize,
    pub landmarks: usize,
    pub chart: TangentChart,
    pub generator: DenseNet,
    pub critic: DenseNet,
    pub generator_adam: AdamState,
    pub critic_adam: AdamState,
    /// Generator updates applied so far.
    pub iterations_done: usize,
}

impl MotionGan {
    /// Freshly initialized networks. Weights come from `config.seed`.
    pub fn new(config: TrainConfig, class_names: Vec<String>, chart: TangentChart) -> Result<Self> {
        config.validate()?;
        if class_names.is_empty() {
            return Err(Error::Config("no classes".into()));
        }
        let r = chart.reference();
        if r.dim() % 2 != 0 {
            return Err(Error::DimensionMismatch(format!("odd chart dimension {}", r.dim())));
        }
        let d = r.data().len();
        let c = class_names.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = DenseNet::new(config.net.z_dim, c, &config.net.generator_widths, d, &mut rng);
        let critic = DenseNet::new(d, c, &config.net.critic_widths, 1, &mut rng);
        let adam = AdamConfig {
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            ..AdamConfig::default()
        };
        Ok(Self {
            generator_adam: AdamState::new(&generator.params, adam),
            critic_adam: AdamState::new(&critic.params, adam),
            frames: r.num_frames(),
            landmarks: r.dim() / 2,
            config,
            class_names,
            chart,
            generator,
            critic,
            iterations_done: 0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `(T - 1) * 2d`
    pub fn tangent_dim(&self) -> usize {
        self.chart.reference().data().len()
    }

    pub fn settings(&self) -> NetSettings {
        NetSettings {
            output_scale: self.config.net.output_scale,
            leaky_slope: self.config.net.leaky_slope,
            critic_batch_norm: self.config.net.critic_batch_norm,
        }
    }

    pub fn label(&self, name: &str) -> Result<ExpressionLabel> {
        let i = self
            .class_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingClass(vec![name.to_string()]))?;
        ExpressionLabel::new(i, self.num_classes())
    }

    fn check_label(&self, label: ExpressionLabel) -> Result<()> {
        if label.classes() != self.num_classes() {
            return Err(Error::DimensionMismatch(format!(
                "label over {} classes, model has {}",
                label.classes(),
                self.num_classes()
            )));
        }
        Ok(())
    }

    fn one_hot_rows(&self, labels: &[ExpressionLabel]) -> Result<Tensor> {
        let c = self.num_classes();
        let mut data = Vec::with_capacity(labels.len() * c);
        for l in labels {
            self.check_label(*l)?;
            data.extend(l.one_hot());
        }
        Tensor::new(labels.len(), c, data)
    }

    fn noise_rows(&self, z: &[Vec<f64>]) -> Result<Tensor> {
        let k = self.config.net.z_dim;
        if let Some(bad) = z.iter().find(|v| v.len() != k) {
            return Err(Error::shape(k, bad.len()));
        }
        Tensor::new(z.len(), k, z.concat())
    }

    /// Generator outputs for a batch, `B x D`, in the tangent space.
    pub fn generate_tangent_rows(&self, z: &[Vec<f64>], labels: &[ExpressionLabel]) -> Result<Tensor> {
        let (v, _) = self.forward_rows(z, labels, false)?;
        Ok(v)
    }

    /// `(G(z, c), log_y(exp_y(G(z, c))))` for a batch, optionally both.
    fn forward_rows(
        &self,
        z: &[Vec<f64>],
        labels: &[ExpressionLabel],
        with_fake: bool,
    ) -> Result<(Tensor, Option<Tensor>)> {
        if z.len() != labels.len() {
            return Err(Error::shape(z.len(), labels.len()));
        }
        let mut g = Graph::new();
        let cv = ChartVars::bind(&mut g, &self.chart);
        let p = self.generator.bind_constant(&mut g);
        let zv = g.constant(self.noise_rows(z)?);
        let lv = g.constant(self.one_hot_rows(labels)?);
        let v = generator_rows(&mut g, &self.generator, &p, zv, lv, &cv, &self.settings())?;
        let fake = if with_fake {
            let (_, t) = fake_rows(&mut g, v, &cv)?;
            Some(g.value(t).clone())
        } else {
            None
        };
        Ok((g.value(v).clone(), fake))
    }

    /// `G(z, c)` projected to the tangent space at the chart.
    pub fn generator_forward(&self, z: &[f64], label: ExpressionLabel) -> Result<TangentVector> {
        let v = self.generate_tangent_rows(&[z.to_vec()], &[label])?;
        self.chart.wrap(v.into_data())
    }

    /// `log_y(exp_y(G(z, c)))`, evaluated through the differentiable maps.
    pub fn fake_tangent(&self, z: &[f64], label: ExpressionLabel) -> Result<TangentVector> {
        let (_, t) = self.forward_rows(&[z.to_vec()], &[label], true)?;
        self.chart.wrap(t.expect("requested").into_data())
    }

    /// Critic scores for a batch of tangent rows, `B x 1`.
    pub fn critic_scores(&self, x: &Tensor, labels: &[ExpressionLabel]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.critic.bind_constant(&mut g);
        let xv = g.constant(x.clone());
        let lv = g.constant(self.one_hot_rows(labels)?);
        let out = losses::critic_rows(&mut g, &self.critic, &p, xv, lv, &self.settings())?;
        Ok(g.value(out).clone())
    }

    pub fn sample_noise(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.config.net.z_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// `(1 - tau) real + tau fake`; stays in the tangent space of both inputs.
pub fn interpolate_hat(
    real: &TangentVector,
    fake: &TangentVector,
    tau: f64,
) -> Result<Vec<f64>> {
    if real.chart_id() != fake.chart_id() {
        return Err(Error::DimensionMismatch("tangent vectors from different charts".into()));
    }
    if real.data().len() != fake.data().len() {
        return Err(Error::shape(real.data().len(), fake.data().len()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidValue(format!("tau {tau} outside [0, 1]")));
    }
    Ok(real
        .data()
        .iter()
        .zip(fake.data())
        .map(|(r, f)| (1.0 - tau) * r + tau * f)
        .collect())
}

/// One record per generator iteration. Critic figures are averaged over the
/// iteration's critic steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub critic_loss: f64,
    pub wasserstein: f64,
    pub gradient_penalty: f64,
    pub generator_loss: f64,
    pub adversarial: f64,
    pub recon_sphere: f64,
    pub recon_tangent: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<IterationRecord>,
}

impl TrainLog {
    /// Mean `|wasserstein|` over records `range`.
    pub fn mean_abs_wasserstein(&self, range: std::ops::Range<usize>) -> f64 {
        let r = &self.records[range];
        r.iter().map(|x| x.wasserstein.abs()).sum::<f64>() / r.len() as f64
    }

    /// CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).expect("in-memory CSV");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
    }
}

/// Tangent rows of the training set and the per-class member lists.
struct TrainingData {
    tangents: Vec<Vec<f64>>,
    srvfs: Vec<Vec<f64>>,
    labels: Vec<ExpressionLabel>,
    members: Vec<Vec<usize>>,
}

impl TrainingData {
    fn new(data: &PreparedDataset) -> Result<Self> {
        if data.srvfs.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        let tangents = data
            .srvfs
            .iter()
            .map(|q| log_map(&data.chart, q).map(TangentVector::into_data))
            .collect::<Result<Vec<_>>>()?;
        let members: Vec<Vec<usize>> = (0..data.num_classes()).map(|c| data.members(c)).collect();
        if let Some(c) = members.iter().position(Vec::is_empty) {
            return Err(Error::MissingClass(vec![data.class_names[c].clone()]));
        }
        Ok(Self {
            tangents,
            srvfs: data.srvfs.iter().map(|q| q.data().to_vec()).collect(),
            labels: data.labels.clone(),
            members,
        })
    }

    fn rows(&self, source: &[Vec<f64>], idx: &[usize]) -> Tensor {
        let d = source[0].len();
        let data = idx.iter().flat_map(|&i| source[i].iter().copied()).collect();
        Tensor::new(idx.len(), d, data).expect("rows of equal length")
    }
}

/// Scalars of one critic update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStats {
    pub loss: f64,
    pub wasserstein: f64,
    pub penalty: f64,
}

/// Scalars of one generator update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorStats {
    pub loss: f64,
    pub adversarial: f64,
    pub sphere: f64,
    pub tangent: f64,
}

/// One Adam step of the critic on tangent rows `real` and `fake`.
pub fn critic_step(
    model: &mut MotionGan,
    real: &Tensor,
    fake: &Tensor,
    labels: &[ExpressionLabel],
    tau: &[f64],
) -> Result<CriticStats> {
    let cfg = &model.config;
    let mut g = Graph::new();
    let p = model.critic.bind(&mut g);
    let lv = g.constant(model.one_hot_rows(labels)?);
    let parts = critic_loss(
        &mut g,
        &model.critic,
        &p,
        real,
        fake,
        lv,
        tau,
        cfg.lambda,
        &model.settings(),
    )?;
    if !parts.loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: model.iterations_done,
            what: "critic loss".into(),
        });
    }
    let grads = g.grad_values(parts.total, &p)?;
    let lr = cfg.lr;
    model.critic_adam.update(&mut model.critic.params, &grads, lr)?;
    Ok(CriticStats {
        loss: parts.loss,
        wasserstein: parts.wasserstein,
        penalty: parts.penalty,
    })
}

/// One Adam step of the generator. `target` holds the paired ground-truth
/// SRVF rows and `target_tangent` their logarithms at the chart.
pub fn generator_step(
    model: &mut MotionGan,
    z: &[Vec<f64>],
    labels: &[ExpressionLabel],
    target: &Tensor,
    target_tangent: &Tensor,
) -> Result<GeneratorStats> {
    let cfg = &model.config;
    let weights = LossWeights {
        alpha1: cfg.alpha1,
        alpha2: cfg.alpha2,
        alpha3: cfg.alpha3,
        adversarial_only: cfg.algorithm1_strict,
    };
    let settings = model.settings();
    let mut g = Graph::new();
    let cv = ChartVars::bind(&mut g, &model.chart);
    let gp = model.generator.bind(&mut g);
    let cp = model.critic.bind_constant(&mut g);
    let zv = g.constant(model.noise_rows(z)?);
    let lv = g.constant(model.one_hot_rows(labels)?);
    let v = generator_rows(&mut g, &model.generator, &gp, zv, lv, &cv, &settings)?;
    let parts = generator_loss(
        &mut g,
        v,
        &model.critic,
        &cp,
        lv,
        target,
        target_tangent,
        &cv,
        &weights,
        &settings,
    )?;
    if !parts.loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: model.iterations_done,
            what: "generator loss".into(),
        });
    }
    let grads = g.grad_values(parts.total, &gp)?;
    let lr = cfg.lr;
    model
        .generator_adam
        .update(&mut model.generator.params, &grads, lr)?;
    Ok(GeneratorStats {
        loss: parts.loss,
        adversarial: parts.adversarial,
        sphere: parts.sphere,
        tangent: parts.tangent,
    })
}

/// Trains a fresh model. Returns it with its log.
pub fn train(data: &PreparedDataset, config: &TrainConfig) -> Result<(MotionGan, TrainLog)> {
    let mut model = MotionGan::new(config.clone(), data.class_names.clone(), data.chart.clone())?;
    let log = train_model(&mut model, data)?;
    Ok((model, log))
}

/// Runs `model.config.iterations` further generator iterations.
///
/// Per iteration: `n_disc` critic steps on a uniformly drawn real batch and as
/// many fakes with the same labels, then one generator step on labels drawn
/// uniformly over the classes, each fake paired with a uniformly drawn real
/// sample of its class.
pub fn train_model(model: &mut MotionGan, data: &PreparedDataset) -> Result<TrainLog> {
    let cfg = model.config.clone();
    cfg.validate()?;
    if data.chart.reference().data().len() != model.tangent_dim()
        || data.class_names != model.class_names
    {
        return Err(Error::DimensionMismatch(
            "dataset does not match the model's chart or classes".into(),
        ));
    }
    let td = TrainingData::new(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1 + model.iterations_done as u64);
    let classes = model.num_classes();
    let b = cfg.batch;
    let start = Instant::now();
    let mut log = TrainLog::default();
    for it in 0..cfg.iterations {
        let iteration = model.iterations_done;
        let (mut c_loss, mut c_w, mut c_gp) = (0.0, 0.0, 0.0);
        for _ in 0..cfg.n_disc {
            let idx: Vec<usize> = (0..b).map(|_| rng.gen_range(0..td.labels.len())).collect();
            let labels: Vec<ExpressionLabel> = idx.iter().map(|&i| td.labels[i]).collect();
            let z: Vec<Vec<f64>> = (0..b).map(|_| model.sample_noise(&mut rng)).collect();
            let tau: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..1.0)).collect();
            let real = td.rows(&td.tangents, &idx);
            let (_, fake) = model.forward_rows(&z, &labels, true)?;
            let stats = critic_step(model, &real, &fake.expect("requested"), &labels, &tau)?;
            c_loss += stats.loss;
            c_w += stats.wasserstein;
            c_gp += stats.penalty;
        }

        let labels: Vec<ExpressionLabel> = (0..b)
            .map(|_| ExpressionLabel::new(rng.gen_range(0..classes), classes))
            .collect::<Result<_>>()?;
        let pair: Vec<usize> = labels
            .iter()
            .map(|l| {
                let m = &td.members[l.index()];
                m[rng.gen_range(0..m.len())]
            })
            .collect();
        trace!("iteration {iteration}: generator targets {pair:?}");
        let z: Vec<Vec<f64>> = (0..b).map(|_| model.sample_noise(&mut rng)).collect();
        let stats = generator_step(
            model,
            &z,
            &labels,
            &td.rows(&td.srvfs, &pair),
            &td.rows(&td.tangents, &pair),
        )?;
        if !model.generator.is_finite() || !model.critic.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                what: "parameters".into(),
            });
        }
        model.iterations_done += 1;

        let n = cfg.n_disc as f64;
        let rec = IterationRecord {
            iteration,
            critic_loss: c_loss / n,
            wasserstein: c_w / n,
            gradient_penalty: c_gp / n,
            generator_loss: stats.loss,
            adversarial: stats.adversarial,
            recon_sphere: stats.sphere,
            recon_tangent: stats.tangent,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if it % 100 == 0 || it + 1 == cfg.iterations {
            info!(
                "iter {iteration}: critic {:.4} W {:.4} gp {:.4} gen {:.4}",
                rec.critic_loss, rec.wasserstein, rec.gradient_penalty, rec.generator_loss
            );
        } else {
            debug!("iter {iteration}: W {:.4}", rec.wasserstein);
        }
        log.records.push(rec);
    }
    Ok(log)
}

/// `q = exp_y(G(z, c))` with `z` drawn from `seed`.
pub fn generate_motion(model: &MotionGan, label: ExpressionLabel, seed: u64) -> Result<Srvf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = model.sample_noise(&mut rng);
    let v = model.generator_forward(&z, label)?;
    exp_map(&model.chart, &v)
}

/// `count` samples of one class from a single seeded stream.
pub fn generate_many(
    model: &MotionGan,
    label: ExpressionLabel,
    count: usize,
    seed: u64,
) -> Result<Vec<Srvf>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<Vec<f64>> = (0..count).map(|_| model.sample_noise(&mut rng)).collect();
    let v = model.generate_tangent_rows(&z, &vec![label; count])?;
    (0..count)
        .map(|i| exp_map(&model.chart, &model.chart.wrap(v.row_slice(i).to_vec())?))
        .collect()
}
