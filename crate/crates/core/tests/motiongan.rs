use motionsrvf::dataset::{prepare, synth_corpus, ExpressionLabel, PrepareConfig, PreparedDataset, SynthSpec};
use motionsrvf::diffcore::{Graph, Tensor};
use motionsrvf::geometry::{exp_map, log_map, Srvf, TangentChart};
use motionsrvf::gradcheck::tiny_config;
use motionsrvf::motiongan::losses::ChartVars;
use motionsrvf::motiongan::{
    critic_loss, critic_step, generate_motion, generator_loss, interpolate_hat, load_checkpoint,
    load_checkpoint_for_chart, save_checkpoint, train, train_model, DenseNet, LossWeights,
    MotionGan, TrainConfig, TrainLog, NORM_CAP,
};
use motionsrvf::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FRAMES: usize = 6;
const LANDMARKS: usize = 2;
const D: usize = (FRAMES - 1) * 2 * LANDMARKS;

fn tiny_data(seed: u64) -> PreparedDataset {
    let spec = SynthSpec {
        classes: 2,
        per_class: 4,
        frames: FRAMES,
        landmarks: LANDMARKS,
        ..SynthSpec::default()
    };
    let seqs = synth_corpus(&spec, seed).unwrap();
    let config = PrepareConfig {
        frames: FRAMES,
        ..PrepareConfig::default()
    };
    prepare(&seqs, &config, "test").unwrap()
}

fn tiny_train_config(iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        n_disc: 2,
        ..tiny_config(seed)
    }
}

fn model(data: &PreparedDataset, seed: u64) -> MotionGan {
    MotionGan::new(tiny_config(seed), data.class_names.clone(), data.chart.clone()).unwrap()
}

fn weighted_dot(a: &[f64], b: &[f64], dt: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * dt
}

fn label(i: usize) -> ExpressionLabel {
    ExpressionLabel::new(i, 2).unwrap()
}

fn tangent_rows(chart: &TangentChart, qs: &[&Srvf]) -> Tensor {
    let data = qs
        .iter()
        .flat_map(|q| log_map(chart, q).unwrap().into_data())
        .collect();
    Tensor::new(qs.len(), D, data).unwrap()
}

fn strip_times(log: &TrainLog) -> TrainLog {
    let mut log = log.clone();
    log.records.iter_mut().for_each(|r| r.wall_time_s = 0.0);
    log
}

#[test]
fn generator_output_is_tangent_capped_and_deterministic() {
    let data = tiny_data(1);
    let m = model(&data, 3);
    let y = m.chart.reference().data().to_vec();
    let dt = m.chart.reference().dt();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for c in 0..2 {
        let z = m.sample_noise(&mut rng);
        assert_eq!(z.len(), 4);
        let v = m.generator_forward(&z, label(c)).unwrap();
        assert_eq!(v.data().len(), D);
        assert!(weighted_dot(v.data(), &y, dt).abs() <= 1e-8);
        assert!(v.norm() <= NORM_CAP + 1e-12);
        assert_eq!(v, m.generator_forward(&z, label(c)).unwrap());
    }
    let wrong = ExpressionLabel::new(0, 3).unwrap();
    assert!(matches!(
        m.generator_forward(&[0.0; 4], wrong),
        Err(Error::DimensionMismatch(_))
    ));
}

#[test]
fn zero_output_layer_generates_the_chart_point() {
    let data = tiny_data(1);
    let mut m = model(&data, 3);
    let n = m.generator.params.len();
    for p in &mut m.generator.params[n - 2..] {
        p.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let z = vec![0.3, -1.0, 2.0, 0.5];
    assert!(m.generator_forward(&z, label(1)).unwrap().data().iter().all(|x| *x == 0.0));
    assert!(m.fake_tangent(&z, label(1)).unwrap().data().iter().all(|x| x.abs() < 1e-12));
    let q = generate_motion(&m, label(0), 9).unwrap();
    for (a, b) in q.data().iter().zip(m.chart.reference().data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn interpolation_endpoints_and_midpoint() {
    let data = tiny_data(2);
    let chart = &data.chart;
    let real = log_map(chart, &data.srvfs[0]).unwrap();
    let fake = log_map(chart, &data.srvfs[5]).unwrap();
    assert_eq!(interpolate_hat(&real, &fake, 0.0).unwrap(), real.data());
    assert_eq!(interpolate_hat(&real, &fake, 1.0).unwrap(), fake.data());
    let mid = interpolate_hat(&real, &fake, 0.5).unwrap();
    let y = chart.reference().data();
    let dt = chart.reference().dt();
    for (k, m) in mid.iter().enumerate() {
        assert!((m - 0.5 * (real.data()[k] + fake.data()[k])).abs() < 1e-15);
    }
    assert!(weighted_dot(&mid, y, dt).abs() < 1e-10);
    assert!(matches!(
        interpolate_hat(&real, &fake, 1.5),
        Err(Error::InvalidValue(_))
    ));
}

fn batch_fixture(data: &PreparedDataset) -> (Tensor, Tensor, Vec<ExpressionLabel>, Vec<f64>) {
    let real = tangent_rows(&data.chart, &[&data.srvfs[0], &data.srvfs[4], &data.srvfs[1]]);
    let fake = tangent_rows(&data.chart, &[&data.srvfs[2], &data.srvfs[6], &data.srvfs[3]]);
    let labels = vec![data.labels[0], data.labels[4], data.labels[1]];
    (real, fake, labels, vec![0.2, 0.5, 0.9])
}

fn one_hot(labels: &[ExpressionLabel]) -> Tensor {
    Tensor::new(
        labels.len(),
        2,
        labels.iter().flat_map(|l| l.one_hot()).collect(),
    )
    .unwrap()
}

#[test]
fn constant_critic_has_zero_adversarial_term_and_full_penalty() {
    let data = tiny_data(1);
    let mut m = model(&data, 3);
    for p in &mut m.critic.params {
        p.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let last = m.critic.params.len() - 1;
    m.critic.params[last].data_mut()[0] = 0.7;
    let (real, fake, labels, tau) = batch_fixture(&data);
    let mut g = Graph::new();
    let p = m.critic.bind(&mut g);
    let lv = g.constant(one_hot(&labels));
    let parts = critic_loss(&mut g, &m.critic, &p, &real, &fake, lv, &tau, 10.0, &m.settings()).unwrap();
    assert_eq!(parts.wasserstein, 0.0);
    assert!((parts.penalty - 10.0).abs() < 1e-12);
    assert!((parts.loss - 10.0).abs() < 1e-12);
}

#[test]
fn linear_critic_matches_closed_form() {
    let data = tiny_data(1);
    let (real, fake, labels, tau) = batch_fixture(&data);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut critic = DenseNet::new(D, 2, &[], 1, &mut rng);
    // label rows of the weight matrix do not touch the input gradient
    critic.params[0].data_mut()[D..].iter_mut().for_each(|x| *x = 0.0);
    critic.params[1].data_mut()[0] = -0.4;
    let w: Vec<f64> = critic.params[0].data()[..D].to_vec();
    let wnorm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mean_dot = |t: &Tensor| {
        (0..t.rows())
            .map(|r| t.row_slice(r).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
            / t.rows() as f64
    };
    let expected_adv = mean_dot(&fake) - mean_dot(&real);

    let settings = model(&data, 0).settings();
    for lambda in [0.0, 10.0] {
        let mut g = Graph::new();
        let p = critic.bind(&mut g);
        let lv = g.constant(one_hot(&labels));
        let parts = critic_loss(&mut g, &critic, &p, &real, &fake, lv, &tau, lambda, &settings).unwrap();
        let expected_gp = lambda * (wnorm - 1.0).powi(2);
        assert!((parts.wasserstein + expected_adv).abs() < 1e-12);
        assert!((parts.penalty - expected_gp).abs() < 1e-10, "{} vs {expected_gp}", parts.penalty);
        assert!((parts.loss - expected_adv - expected_gp).abs() < 1e-10);
    }
}

struct GenFixture {
    m: MotionGan,
    targets: Vec<Srvf>,
    target_tangents: Vec<Vec<f64>>,
}

fn gen_fixture() -> GenFixture {
    let data = tiny_data(4);
    let m = model(&data, 2);
    let targets = vec![data.srvfs[0].clone(), data.srvfs[5].clone()];
    let target_tangents = targets
        .iter()
        .map(|q| log_map(&data.chart, q).unwrap().into_data())
        .collect();
    GenFixture {
        m,
        targets,
        target_tangents,
    }
}

fn eval_generator_loss(
    fx: &GenFixture,
    v: &[Vec<f64>],
    w: &LossWeights,
) -> motionsrvf::motiongan::GeneratorLossParts {
    let mut g = Graph::new();
    let cv = ChartVars::bind(&mut g, &fx.m.chart);
    let cp = fx.m.critic.bind_constant(&mut g);
    let vv = g.variable(Tensor::new(v.len(), D, v.concat()).unwrap());
    let lv = g.constant(one_hot(&[label(0), label(1)]));
    let target = Tensor::new(2, D, fx.targets.iter().flat_map(|q| q.data().to_vec()).collect()).unwrap();
    let tt = Tensor::new(2, D, fx.target_tangents.concat()).unwrap();
    generator_loss(&mut g, vv, &fx.m.critic, &cp, lv, &target, &tt, &cv, w, &fx.m.settings()).unwrap()
}

const FULL: LossWeights = LossWeights {
    alpha1: 0.8,
    alpha2: 1.0,
    alpha3: 1.0,
    adversarial_only: false,
};

#[test]
fn generator_reconstruction_terms_vanish_on_targets() {
    let fx = gen_fixture();
    let parts = eval_generator_loss(&fx, &fx.target_tangents, &FULL);
    assert!(parts.tangent.abs() < 1e-9, "{}", parts.tangent);
    assert!(parts.sphere.abs() < 1e-6, "{}", parts.sphere);
    let scores = fx
        .m
        .critic_scores(&Tensor::new(2, D, fx.target_tangents.concat()).unwrap(), &[label(0), label(1)])
        .unwrap();
    let adv = -(scores.data()[0] + scores.data()[1]) / 2.0;
    assert!((parts.adversarial - adv).abs() < 1e-9);
}

#[test]
fn generator_loss_on_a_shared_geodesic() {
    let fx = gen_fixture();
    let dt = fx.m.chart.reference().dt();
    // push each target 0.3 further along its own geodesic from y
    let v: Vec<Vec<f64>> = fx
        .target_tangents
        .iter()
        .map(|u| {
            let n = weighted_dot(u, u, dt).sqrt();
            assert!(n + 0.3 < std::f64::consts::PI - 0.1);
            u.iter().map(|x| x * (n + 0.3) / n).collect()
        })
        .collect();
    let expected_l1: f64 = v
        .iter()
        .zip(&fx.target_tangents)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * dt)
        .sum::<f64>()
        / 2.0;
    let parts = eval_generator_loss(&fx, &v, &FULL);
    assert!((parts.sphere - 0.3).abs() < 1e-9, "{}", parts.sphere);
    assert!((parts.tangent - expected_l1).abs() < 1e-9);
    let expected = 0.8 * parts.adversarial + 0.3 + expected_l1;
    assert!((parts.loss - expected).abs() < 1e-9);

    let only_adv = LossWeights {
        alpha2: 0.0,
        alpha3: 0.0,
        ..FULL
    };
    let p = eval_generator_loss(&fx, &v, &only_adv);
    assert!((p.loss - 0.8 * p.adversarial).abs() < 1e-12);
    let strict = LossWeights {
        adversarial_only: true,
        ..FULL
    };
    let p = eval_generator_loss(&fx, &v, &strict);
    assert_eq!(p.loss, p.adversarial);
}

#[test]
fn zero_iterations_leave_the_model_untouched() {
    let data = tiny_data(1);
    let (trained, log) = train(&data, &tiny_train_config(0, 7)).unwrap();
    assert!(log.records.is_empty());
    let fresh = MotionGan::new(tiny_train_config(0, 7), data.class_names.clone(), data.chart.clone()).unwrap();
    assert_eq!(trained, fresh);
}

#[test]
fn training_is_reproducible_and_resumable() {
    let data = tiny_data(1);
    let cfg = tiny_train_config(3, 7);
    let (a, log_a) = train(&data, &cfg).unwrap();
    let (b, log_b) = train(&data, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(strip_times(&log_a), strip_times(&log_b));
    assert_eq!(a.iterations_done, 3);
    assert_eq!(log_a.records.len(), 3);
    assert!(log_a.records.iter().all(|r| r.critic_loss.is_finite() && r.generator_loss.is_finite()));
    assert!(log_a.to_csv().starts_with("iteration,critic_loss,wasserstein"));
    let fresh = model(&data, 7);
    assert_ne!(a.generator, fresh.generator);
    assert_ne!(a.critic, fresh.critic);

    // resuming from a checkpoint continues exactly where an uninterrupted run would
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&a, &path).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap();
    assert_eq!(resumed, a);
    let mut continued = a.clone();
    train_model(&mut continued, &data).unwrap();
    train_model(&mut resumed, &data).unwrap();
    assert_eq!(continued, resumed);
    assert_eq!(continued.iterations_done, 6);

    let other = TrainConfig {
        seed: 8,
        ..cfg
    };
    let (c, _) = train(&data, &other).unwrap();
    assert_ne!(a.generator, c.generator);
}

#[test]
fn checkpoint_failures_are_typed() {
    let data = tiny_data(1);
    let m = model(&data, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&m, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
    assert!(matches!(load_checkpoint(&cut), Err(Error::CorruptFile { .. })));

    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0x40;
    std::fs::write(&cut, &flipped).unwrap();
    assert!(matches!(load_checkpoint(&cut), Err(Error::CorruptFile { .. })));

    let mut newer = bytes.clone();
    newer[4] = b'9';
    std::fs::write(&cut, &newer).unwrap();
    assert!(matches!(load_checkpoint(&cut), Err(Error::VersionMismatch(_))));

    std::fs::write(&cut, b"").unwrap();
    assert!(matches!(load_checkpoint(&cut), Err(Error::CorruptFile { .. })));

    assert_eq!(load_checkpoint_for_chart(&path, &data.chart).unwrap(), m);
    let longer = Srvf::normalized(7, 4, (0..28).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
    assert!(matches!(
        load_checkpoint_for_chart(&path, &TangentChart::new(longer)),
        Err(Error::DimensionMismatch(_))
    ));
}

/// Swaps the two label rows that feed every layer.
fn swap_label_rows(net: &mut DenseNet) {
    let widths: Vec<usize> = std::iter::once(net.input).chain(net.hidden.iter().copied()).collect();
    for (l, &w) in widths.iter().enumerate() {
        let t = &mut net.params[2 * l];
        let cols = t.cols();
        let data = t.data_mut();
        for c in 0..cols {
            data.swap(w * cols + c, (w + 1) * cols + c);
        }
    }
}

#[test]
fn relabelling_classes_is_a_symmetry() {
    let data = tiny_data(1);
    let a = model(&data, 5);
    let mut b = a.clone();
    b.class_names.reverse();
    swap_label_rows(&mut b.generator);
    swap_label_rows(&mut b.critic);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = tangent_rows(&data.chart, &[&data.srvfs[0], &data.srvfs[7]]);
    for c in 0..2 {
        let z = a.sample_noise(&mut rng);
        let va = a.generator_forward(&z, label(c)).unwrap();
        let vb = b.generator_forward(&z, label(1 - c)).unwrap();
        for (p, q) in va.data().iter().zip(vb.data()) {
            assert!((p - q).abs() < 1e-12);
        }
        let sa = a.critic_scores(&x, &[label(c), label(c)]).unwrap();
        let sb = b.critic_scores(&x, &[label(1 - c), label(1 - c)]).unwrap();
        for (p, q) in sa.data().iter().zip(sb.data()) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(b.label(&a.class_names[c]).unwrap().index(), 1 - c);
    }
}

/// Plain forward pass of a label-conditioned dense stack with leaky ReLU.
fn manual_critic(params: &[Tensor], x: &[f64], c: &[f64], slope: f64) -> f64 {
    let mut h = x.to_vec();
    let layers = params.len() / 2;
    for l in 0..layers {
        let inp: Vec<f64> = h.iter().chain(c).copied().collect();
        let (w, b) = (&params[2 * l], &params[2 * l + 1]);
        let mut out: Vec<f64> = b.data().to_vec();
        for (i, xi) in inp.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += xi * w.get(i, j);
            }
        }
        if l + 1 < layers {
            out.iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v *= slope
                }
            });
        }
        h = out;
    }
    h[0]
}

#[test]
fn unpenalized_critic_step_is_a_plain_wasserstein_adam_step() {
    let data = tiny_data(3);
    let mut m = model(&data, 6);
    m.config.lambda = 0.0;
    let (real, fake, labels, tau) = batch_fixture(&data);
    let before = m.critic.params.clone();
    let slope = m.config.net.leaky_slope;
    let hot: Vec<Vec<f64>> = labels.iter().map(|l| l.one_hot()).collect();
    let loss = |params: &[Tensor]| {
        let mean = |t: &Tensor| {
            (0..t.rows())
                .map(|r| manual_critic(params, t.row_slice(r), &hot[r], slope))
                .sum::<f64>()
                / t.rows() as f64
        };
        mean(&fake) - mean(&real)
    };
    let h = 1e-6;
    let mut grads = Vec::new();
    for (k, p) in before.iter().enumerate() {
        let mut gk = vec![0.0; p.len()];
        for (i, gi) in gk.iter_mut().enumerate() {
            let mut plus = before.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = before.clone();
            minus[k].data_mut()[i] -= h;
            *gi = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        grads.push(gk);
    }
    let stats = critic_step(&mut m, &real, &fake, &labels, &tau).unwrap();
    assert!((stats.loss - loss(&before)).abs() < 1e-12);
    assert_eq!(stats.penalty, 0.0);

    let lr = m.config.lr;
    let eps = m.critic_adam.config.eps;
    let (mut strict, mut total) = (0, 0);
    for ((old, new), g) in before.iter().zip(&m.critic.params).zip(&grads) {
        for ((o, n), gi) in old.data().iter().zip(new.data()).zip(g) {
            // after one bias-corrected step m_hat = g and v_hat = g^2
            let expected = -lr * gi / (gi.abs() + eps);
            total += 1;
            if gi.abs() > 1e-5 {
                strict += 1;
                assert!(((n - o) - expected).abs() < 1e-6 * lr, "{} vs {expected}", n - o);
            } else {
                assert!((n - o).abs() <= lr);
            }
        }
    }
    assert!(strict * 10 > total * 9, "{strict} of {total}");
}

#[test]
fn generated_motion_depends_on_the_seed_only() {
    let data = tiny_data(1);
    let m = model(&data, 3);
    let a = generate_motion(&m, label(1), 4).unwrap();
    assert_eq!(a, generate_motion(&m, label(1), 4).unwrap());
    assert_ne!(a, generate_motion(&m, label(1), 5).unwrap());
    assert!((a.norm() - 1.0).abs() < 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = m.sample_noise(&mut rng);
    let v = m.generator_forward(&z, label(1)).unwrap();
    assert_eq!(a, exp_map(&m.chart, &v).unwrap());
}
