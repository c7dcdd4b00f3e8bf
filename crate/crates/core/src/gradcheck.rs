//! Finite-difference verification of every differentiable primitive and of
//! both adversarial losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ExpressionLabel;
use crate::diffcore::{max_relative_error, numeric_gradient, Graph, Tensor, Var};
use crate::error::Result;
use crate::geometry::{log_map, Srvf, TangentChart};
use crate::motiongan::losses::{
    clamp_norm, exp_rows, fake_rows, generator_rows, log_rows, project_tangent, row_distances,
    ChartVars, NORM_CAP,
};
use crate::motiongan::{
    critic_loss, generator_loss, LossWeights, MotionGan, NetConfig, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            trials: 3,
            seed: 0,
            step: 1e-6,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckResult {
    pub name: String,
    /// Worst relative error over all trials and elements.
    pub max_relative_error: f64,
    pub elements: usize,
}

#[derive(Debug, Clone, Copy)]
enum Domain {
    /// `[-1, 1]` kept 0.05 away from 0, clear of kinks.
    Signed,
    /// `[0.5, 2]`
    Positive,
    /// `[-0.9, 0.9]`
    Open,
}

fn sample(rng: &mut impl Rng, shape: [usize; 2], domain: Domain) -> Tensor {
    let data = (0..shape[0] * shape[1])
        .map(|_| match domain {
            Domain::Signed => {
                let m = rng.gen_range(0.05..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            }
            Domain::Positive => rng.gen_range(0.5..2.0),
            Domain::Open => rng.gen_range(-0.9..0.9),
        })
        .collect();
    Tensor::new(shape[0], shape[1], data).expect("sized")
}

type Build = fn(&mut Graph, &[Var]) -> Result<Var>;

struct Case {
    name: &'static str,
    inputs: &'static [([usize; 2], Domain)],
    build: Build,
}

use Domain::{Open, Positive, Signed};

const CASES: &[Case] = &[
    Case { name: "matmul", inputs: &[([3, 4], Signed), ([4, 2], Signed)], build: |g, v| g.matmul(v[0], v[1]) },
    Case { name: "transpose", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.transpose(v[0])) },
    Case { name: "add", inputs: &[([3, 4], Signed), ([1, 4], Signed)], build: |g, v| g.add(v[0], v[1]) },
    Case { name: "sub", inputs: &[([3, 4], Signed), ([3, 1], Signed)], build: |g, v| g.sub(v[0], v[1]) },
    Case { name: "mul", inputs: &[([3, 4], Signed), ([3, 4], Signed)], build: |g, v| g.mul(v[0], v[1]) },
    Case { name: "mul_broadcast", inputs: &[([3, 4], Signed), ([3, 1], Signed)], build: |g, v| g.mul(v[0], v[1]) },
    Case { name: "div", inputs: &[([3, 4], Signed), ([3, 4], Positive)], build: |g, v| g.div(v[0], v[1]) },
    Case { name: "div_broadcast", inputs: &[([3, 4], Signed), ([1, 1], Positive)], build: |g, v| g.div(v[0], v[1]) },
    Case { name: "scale", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.scale(v[0], -1.7)) },
    Case { name: "shift", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.shift(v[0], 0.3)) },
    Case { name: "neg", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.neg(v[0])) },
    Case { name: "square", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.square(v[0])) },
    Case { name: "relu", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.relu(v[0])) },
    Case { name: "leaky_relu", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.leaky_relu(v[0], 0.2)) },
    Case { name: "tanh", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.tanh(v[0])) },
    Case { name: "sqrt", inputs: &[([3, 4], Positive)], build: |g, v| Ok(g.sqrt(v[0])) },
    Case { name: "cos", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.cos(v[0])) },
    Case { name: "sin", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.sin(v[0])) },
    Case { name: "acos", inputs: &[([3, 4], Open)], build: |g, v| g.acos(v[0]) },
    Case { name: "clamp", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.clamp(v[0], -0.5, 0.5)) },
    Case { name: "abs", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.abs(v[0])) },
    Case { name: "concat", inputs: &[([3, 2], Signed), ([3, 3], Signed)], build: |g, v| g.concat(&[v[0], v[1]]) },
    Case { name: "slice", inputs: &[([3, 5], Signed)], build: |g, v| g.slice(v[0], 1, 4) },
    Case { name: "sum", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.sum(v[0])) },
    Case { name: "mean", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.mean(v[0])) },
    Case { name: "row_sums", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.row_sums(v[0])) },
    Case { name: "col_sums", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.col_sums(v[0])) },
    Case { name: "broadcast_to", inputs: &[([1, 4], Signed)], build: |g, v| g.broadcast_to(v[0], 3, 4) },
    Case { name: "sum_to", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.sum_to(v[0], 1, 4)) },
    Case { name: "l2_norm", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.l2_norm(v[0])) },
    Case { name: "row_l2_norms", inputs: &[([3, 4], Signed)], build: |g, v| Ok(g.row_l2_norms(v[0])) },
    Case {
        name: "double_backprop",
        inputs: &[([3, 4], Signed), ([4, 1], Signed)],
        build: |g, v| {
            // penalty-style objective: gradient norm of a small net wrt its input
            let h = g.matmul(v[0], v[1])?;
            let h = g.tanh(h);
            let s = g.sum(h);
            let gx = g.grad(s, &[v[0]], true)?;
            let n = g.row_l2_norms(gx[0]);
            let e = g.shift(n, -1.0);
            Ok(g.square(e))
        },
    },
];

/// Scalar objective `sum(y * w)` with fixed random weights `w`.
fn reduce(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    let wv = g.constant(w.clone());
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

fn check(
    name: &str,
    inputs: &[Tensor],
    f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
    cfg: &GradcheckConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let analytic = g.grad_values(out, &vars)?;
    let mut failure = None;
    let mut eval = |x: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = x.iter().map(|t| g.variable(t.clone())).collect();
        match f(&mut g, &vars) {
            Ok(v) => g.value(v).item(),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    };
    let numeric = numeric_gradient(&mut eval, inputs, cfg.step);
    if let Some(e) = failure {
        return Err(e);
    }
    let err = max_relative_error(&analytic, &numeric, cfg.floor);
    log::debug!("gradcheck {name}: {err:.3e}");
    Ok(err)
}

/// Every graph primitive plus the batched sphere maps.
pub fn check_primitives(cfg: &GradcheckConfig) -> Result<Vec<GradcheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for case in CASES {
        let mut worst: f64 = 0.0;
        let mut elements = 0;
        for _ in 0..cfg.trials {
            let inputs: Vec<Tensor> = case.inputs.iter().map(|&(s, d)| sample(&mut rng, s, d)).collect();
            elements = inputs.iter().map(Tensor::len).sum();
            // the weights are sized from a forward pass
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
            let y = (case.build)(&mut g, &vars)?;
            let w = sample(&mut rng, g.shape(y), Signed);
            let build = case.build;
            let f = move |g: &mut Graph, v: &[Var]| {
                let y = build(g, v)?;
                reduce(g, y, &w)
            };
            worst = worst.max(check(case.name, &inputs, &f, cfg)?);
        }
        out.push(GradcheckResult {
            name: case.name.to_string(),
            max_relative_error: worst,
            elements,
        });
    }
    out.extend(check_sphere_maps(cfg, &mut rng)?);
    Ok(out)
}

fn random_srvf(rng: &mut impl Rng, intervals: usize, dim: usize) -> Srvf {
    let data = (0..intervals * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Srvf::normalized(intervals, dim, data).expect("random data is not zero")
}

fn check_sphere_maps(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<Vec<GradcheckResult>> {
    let (n, dim, rows) = (5, 4, 3);
    let mut results: Vec<GradcheckResult> = Vec::new();
    for _ in 0..cfg.trials {
        let chart = TangentChart::new(random_srvf(rng, n, dim));
        let w = sample(rng, [rows, n * dim], Signed);
        // tangent rows with norms around 1
        let v = {
            let mut g = Graph::new();
            let cv = ChartVars::bind(&mut g, &chart);
            let raw = g.constant(sample(rng, [rows, n * dim], Signed));
            let p = project_tangent(&mut g, raw, &cv)?;
            g.value(p).clone()
        };
        let q = Tensor::new(
            rows,
            n * dim,
            (0..rows)
                .flat_map(|_| {
                    // points within a right angle of the chart keep log smooth
                    let p = random_srvf(rng, n, dim);
                    let t = log_map(&chart, &p).expect("not antipodal");
                    let s = 1.2 / t.norm().max(1e-12);
                    crate::geometry::exp_map(&chart, &chart.wrap(t.scaled(s).into_data()).unwrap())
                        .unwrap()
                        .into_data()
                })
                .collect(),
        )?;
        let target = Tensor::new(rows, n * dim, (0..rows).flat_map(|_| random_srvf(rng, n, dim).into_data()).collect())?;
        type MapCase<'a> = (&'static str, Tensor, Box<dyn Fn(&mut Graph, Var, &ChartVars) -> Result<Var> + 'a>);
        let cases: Vec<MapCase> = vec![
            ("project_tangent", v.clone(), Box::new(|g: &mut Graph, x: Var, cv: &ChartVars| project_tangent(g, x, cv))),
            ("clamp_norm", v.map(|x| 3.0 * x), Box::new(|g: &mut Graph, x: Var, cv: &ChartVars| clamp_norm(g, x, cv.dt, 1.0))),
            ("exp_map", v.clone(), Box::new(|g: &mut Graph, x: Var, cv: &ChartVars| exp_rows(g, x, cv))),
            ("log_map", q.clone(), Box::new(|g: &mut Graph, x: Var, cv: &ChartVars| log_rows(g, x, cv))),
            ("log_exp", v.clone(), Box::new(|g: &mut Graph, x: Var, cv: &ChartVars| {
                let c = clamp_norm(g, x, cv.dt, NORM_CAP)?;
                Ok(fake_rows(g, c, cv)?.1)
            })),
            ("sphere_distance", q.clone(), Box::new(|g: &mut Graph, x: Var, cv: &ChartVars| {
                let t = g.constant(target.clone());
                row_distances(g, x, t, cv.dt)
            })),
        ];
        for (name, input, map) in cases {
            let f = |g: &mut Graph, vars: &[Var]| {
                let cv = ChartVars::bind(g, &chart);
                let y = map(g, vars[0], &cv)?;
                let wv = if g.shape(y) == w.shape() {
                    w.clone()
                } else {
                    Tensor::full(g.shape(y)[0], g.shape(y)[1], 0.7)
                };
                reduce(g, y, &wv)
            };
            let err = check(name, &[input.clone()], &f, cfg)?;
            match results.iter_mut().find(|r| r.name == name) {
                Some(r) => r.max_relative_error = r.max_relative_error.max(err),
                None => results.push(GradcheckResult {
                    name: name.to_string(),
                    max_relative_error: err,
                    elements: input.len(),
                }),
            }
        }
    }
    Ok(results)
}

/// Configuration of the tiny networks used by the loss checks: `T = 6`,
/// `d = 2`, widths `[8, 8]`.
pub fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch: 3,
        seed,
        net: NetConfig {
            z_dim: 4,
            generator_widths: vec![8, 8],
            critic_widths: vec![8, 8],
            // keeps generated norms clear of the cap kink
            output_scale: 0.5,
            ..NetConfig::default()
        },
        ..TrainConfig::default()
    }
}

struct LossFixture {
    model: MotionGan,
    z: Tensor,
    labels: Vec<ExpressionLabel>,
    real: Tensor,
    fake: Tensor,
    tau: Vec<f64>,
    target: Tensor,
    target_tangent: Tensor,
}

fn loss_fixture(seed: u64) -> Result<LossFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, dim, b) = (5, 4, 3);
    let chart = TangentChart::new(random_srvf(&mut rng, n, dim));
    let model = MotionGan::new(tiny_config(seed), vec!["a".into(), "b".into()], chart.clone())?;
    let labels: Vec<ExpressionLabel> = (0..b)
        .map(|i| ExpressionLabel::new(i % 2, 2))
        .collect::<Result<_>>()?;
    let z = sample(&mut rng, [b, 4], Signed);
    let tangent_of = |q: &Srvf| log_map(&chart, q).map(|t| t.into_data());
    let mut real = Vec::new();
    let mut fake = Vec::new();
    let mut target = Vec::new();
    let mut target_tangent = Vec::new();
    for _ in 0..b {
        real.extend(tangent_of(&random_srvf(&mut rng, n, dim))?);
        fake.extend(tangent_of(&random_srvf(&mut rng, n, dim))?);
        let q = random_srvf(&mut rng, n, dim);
        target_tangent.extend(tangent_of(&q)?);
        target.extend(q.into_data());
    }
    let d = n * dim;
    Ok(LossFixture {
        model,
        z,
        labels,
        real: Tensor::new(b, d, real)?,
        fake: Tensor::new(b, d, fake)?,
        tau: (0..b).map(|_| rng.gen_range(0.0..1.0)).collect(),
        target: Tensor::new(b, d, target)?,
        target_tangent: Tensor::new(b, d, target_tangent)?,
    })
}

fn one_hot(labels: &[ExpressionLabel]) -> Tensor {
    let c = labels[0].classes();
    Tensor::new(labels.len(), c, labels.iter().flat_map(|l| l.one_hot()).collect()).expect("sized")
}

/// Critic loss with gradient penalty, generator loss (all three terms and
/// the adversarial-only variant) and `|log_y(exp_y(G))|^2`, each with respect
/// to the parameters of the network being trained.
pub fn check_losses(cfg: &GradcheckConfig) -> Result<Vec<GradcheckResult>> {
    let mut results: Vec<GradcheckResult> = Vec::new();
    let mut record = |name: &str, err: f64, elements: usize| {
        match results.iter_mut().find(|r| r.name == name) {
            Some(r) => r.max_relative_error = r.max_relative_error.max(err),
            None => results.push(GradcheckResult {
                name: name.to_string(),
                max_relative_error: err,
                elements,
            }),
        }
    };
    for trial in 0..cfg.trials {
        let fx = loss_fixture(cfg.seed.wrapping_add(trial as u64))?;
        let m = &fx.model;
        let settings = m.settings();
        let labels = one_hot(&fx.labels);

        let critic_f = |g: &mut Graph, p: &[Var]| {
            let lv = g.constant(labels.clone());
            let parts = critic_loss(g, &m.critic, p, &fx.real, &fx.fake, lv, &fx.tau, 10.0, &settings)?;
            Ok(parts.total)
        };
        let err = check("critic_loss", &m.critic.params, &critic_f, cfg)?;
        record("critic_loss", err, m.critic.num_parameters());

        for (name, adversarial_only) in [("generator_loss", false), ("generator_loss_adversarial", true)] {
            let weights = LossWeights {
                alpha1: 0.8,
                alpha2: 1.0,
                alpha3: 1.0,
                adversarial_only,
            };
            let gen_f = |g: &mut Graph, p: &[Var]| {
                let cv = ChartVars::bind(g, &m.chart);
                let cp = m.critic.bind_constant(g);
                let zv = g.constant(fx.z.clone());
                let lv = g.constant(labels.clone());
                let v = generator_rows(g, &m.generator, p, zv, lv, &cv, &settings)?;
                let parts = generator_loss(
                    g, v, &m.critic, &cp, lv, &fx.target, &fx.target_tangent, &cv, &weights, &settings,
                )?;
                Ok(parts.total)
            };
            let err = check(name, &m.generator.params, &gen_f, cfg)?;
            record(name, err, m.generator.num_parameters());
        }

        let norm_f = |g: &mut Graph, p: &[Var]| {
            let cv = ChartVars::bind(g, &m.chart);
            let zv = g.constant(fx.z.clone());
            let lv = g.constant(labels.clone());
            let v = generator_rows(g, &m.generator, p, zv, lv, &cv, &settings)?;
            let (_, t) = fake_rows(g, v, &cv)?;
            let sq = g.square(t);
            let s = g.sum(sq);
            Ok(g.scale(s, cv.dt))
        };
        let err = check("fake_tangent_norm", &m.generator.params, &norm_f, cfg)?;
        record("fake_tangent_norm", err, m.generator.num_parameters());
    }
    Ok(results)
}

/// Primitives followed by the losses.
pub fn check_all(cfg: &GradcheckConfig) -> Result<Vec<GradcheckResult>> {
    let mut out = check_primitives(cfg)?;
    out.extend(check_losses(cfg)?);
    Ok(out)
}
