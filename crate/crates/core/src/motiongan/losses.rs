//! Batched, differentiable sphere maps and the adversarial losses.
//!
//! Every batch is a `B x D` matrix whose rows are flattened SRVF samples,
//! `D = (T - 1) * 2d`. Inner products carry the `dt` weight of the sphere.

use std::f64::consts::PI;

use crate::diffcore::{Graph, Tensor, Var, SQRT_FLOOR};
use crate::error::{Error, Result};
use crate::geometry::{TangentChart, EPS_ANTIPODAL, EPS_SMALL};

use super::nets::{Activation, DenseNet};

/// Tangent vectors are shortened to this norm before the exponential map.
pub const NORM_CAP: f64 = PI - 1e-3;

/// The chart's reference point bound into a graph.
#[derive(Debug, Clone, Copy)]
pub struct ChartVars {
    /// `1 x D`
    pub y: Var,
    /// `D x 1`
    pub y_col: Var,
    pub dt: f64,
}

impl ChartVars {
    pub fn bind(g: &mut Graph, chart: &TangentChart) -> Self {
        let r = chart.reference();
        let y = Tensor::row(r.data().to_vec());
        let y_col = Tensor::new(r.data().len(), 1, r.data().to_vec()).expect("column of y");
        Self {
            y: g.constant(y),
            y_col: g.constant(y_col),
            dt: r.dt(),
        }
    }
}

/// `dt`-weighted inner product of every row with `y`, `B x 1`.
fn inner_with_y(g: &mut Graph, v: Var, cv: &ChartVars) -> Result<Var> {
    let c = g.matmul(v, cv.y_col)?;
    Ok(g.scale(c, cv.dt))
}

/// `dt`-weighted norm of every row, `B x 1`.
pub fn weighted_row_norms(g: &mut Graph, v: Var, dt: f64) -> Var {
    let sq = g.square(v);
    let s = g.row_sums(sq);
    let s = g.scale(s, dt);
    let s = g.clamp(s, SQRT_FLOOR, f64::INFINITY);
    g.sqrt(s)
}

/// `v - <v, y> y`, row by row.
pub fn project_tangent(g: &mut Graph, v: Var, cv: &ChartVars) -> Result<Var> {
    let c = inner_with_y(g, v, cv)?;
    let along = g.matmul(c, cv.y)?;
    g.sub(v, along)
}

/// Rescales rows whose norm exceeds `cap` down to `cap`.
pub fn clamp_norm(g: &mut Graph, v: Var, dt: f64, cap: f64) -> Result<Var> {
    let n = weighted_row_norms(g, v, dt);
    let nc = g.clamp(n, f64::NEG_INFINITY, cap);
    let ratio = g.div(nc, n)?;
    g.mul(v, ratio)
}

/// `mask ? x : 1` for a constant 0/1 mask.
fn select_or_one(g: &mut Graph, x: Var, mask: Var) -> Result<Var> {
    let kept = g.mul(x, mask)?;
    let inv = g.neg(mask);
    let inv = g.shift(inv, 1.0);
    g.add(kept, inv)
}

/// `x / sin(x)` or `sin(x) / x` with the limit 1 below `EPS_SMALL`.
fn small_angle_ratio(g: &mut Graph, x: Var, sin_over_x: bool) -> Result<Var> {
    let mask = {
        let m = g.value(x).map(|v| if v > EPS_SMALL { 1.0 } else { 0.0 });
        g.constant(m)
    };
    let safe = select_or_one(g, x, mask)?;
    let s = g.sin(safe);
    let r = if sin_over_x { g.div(s, safe)? } else { g.div(safe, s)? };
    select_or_one(g, r, mask)
}

/// Exponential map at `y` of every row: `cos|v| y + sin|v|/|v| v`.
pub fn exp_rows(g: &mut Graph, v: Var, cv: &ChartVars) -> Result<Var> {
    let n = weighted_row_norms(g, v, cv.dt);
    let c = g.cos(n);
    let along = g.matmul(c, cv.y)?;
    let k = small_angle_ratio(g, n, true)?;
    let side = g.mul(v, k)?;
    g.add(along, side)
}

/// Logarithm map at `y` of every row: `theta / sin(theta) (q - cos(theta) y)`.
pub fn log_rows(g: &mut Graph, q: Var, cv: &ChartVars) -> Result<Var> {
    let c = inner_with_y(g, q, cv)?;
    let cc = g.clamp(c, -1.0, 1.0);
    let theta = g.acos(cc)?;
    if let Some(t) = g.value(theta).data().iter().find(|t| **t > PI - EPS_ANTIPODAL) {
        return Err(Error::AntipodalPoint { distance: *t });
    }
    let along = g.matmul(c, cv.y)?;
    let perp = g.sub(q, along)?;
    let k = small_angle_ratio(g, theta, false)?;
    g.mul(perp, k)
}

/// Geodesic distance between matching rows, `B x 1`.
pub fn row_distances(g: &mut Graph, a: Var, b: Var, dt: f64) -> Result<Var> {
    let p = g.mul(a, b)?;
    let s = g.row_sums(p);
    let s = g.scale(s, dt);
    let s = g.clamp(s, -1.0, 1.0);
    g.acos(s)
}

/// Everything the networks need besides their parameters.
#[derive(Debug, Clone, Copy)]
pub struct NetSettings {
    pub output_scale: f64,
    pub leaky_slope: f64,
    pub critic_batch_norm: bool,
}

/// Generator output for a batch: tanh-scaled, projected to `T_y(S)` and
/// norm-capped. `B x D`.
pub fn generator_rows(
    g: &mut Graph,
    gen: &DenseNet,
    params: &[Var],
    z: Var,
    labels: Var,
    cv: &ChartVars,
    s: &NetSettings,
) -> Result<Var> {
    let raw = gen.forward(g, params, z, labels, Activation::Relu, 0.0, false)?;
    let t = g.tanh(raw);
    let t = g.scale(t, s.output_scale);
    let v = project_tangent(g, t, cv)?;
    clamp_norm(g, v, cv.dt, NORM_CAP)
}

/// `log_y(exp_y(v))` and the intermediate sphere points.
pub fn fake_rows(g: &mut Graph, v: Var, cv: &ChartVars) -> Result<(Var, Var)> {
    let q = exp_rows(g, v, cv)?;
    let t = log_rows(g, q, cv)?;
    Ok((q, t))
}

pub fn critic_rows(
    g: &mut Graph,
    critic: &DenseNet,
    params: &[Var],
    x: Var,
    labels: Var,
    s: &NetSettings,
) -> Result<Var> {
    critic.forward(
        g,
        params,
        x,
        labels,
        Activation::LeakyRelu,
        s.leaky_slope,
        s.critic_batch_norm,
    )
}

/// `(1 - tau) real + tau fake`, row by row.
pub fn interpolate_rows(real: &Tensor, fake: &Tensor, tau: &[f64]) -> Result<Tensor> {
    if real.shape() != fake.shape() {
        return Err(Error::shape(format!("{:?}", real.shape()), format!("{:?}", fake.shape())));
    }
    if tau.len() != real.rows() {
        return Err(Error::shape(real.rows(), tau.len()));
    }
    let cols = real.cols();
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(i, (r, f))| {
            let t = tau[i / cols];
            (1.0 - t) * r + t * f
        })
        .collect();
    Tensor::new(real.rows(), cols, data)
}

/// Scalars of one critic evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticLossParts {
    pub total: Var,
    pub loss: f64,
    /// `mean D(real) - mean D(fake)`
    pub wasserstein: f64,
    /// `lambda` times the mean squared gradient-norm excess.
    pub penalty: f64,
}

/// `-mean D(real) + mean D(fake) + lambda mean (|grad D(q_hat)| - 1)^2`,
/// the quantity the critic minimizes. The penalty gradient is taken with
/// respect to a fresh leaf, so it stays differentiable in the parameters.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss(
    g: &mut Graph,
    critic: &DenseNet,
    params: &[Var],
    real: &Tensor,
    fake: &Tensor,
    labels: Var,
    tau: &[f64],
    lambda: f64,
    s: &NetSettings,
) -> Result<CriticLossParts> {
    if real.shape() != fake.shape() {
        return Err(Error::shape(format!("{:?}", real.shape()), format!("{:?}", fake.shape())));
    }
    let r = g.constant(real.clone());
    let f = g.constant(fake.clone());
    let dr = critic_rows(g, critic, params, r, labels, s)?;
    let df = critic_rows(g, critic, params, f, labels, s)?;
    let mr = g.mean(dr);
    let mf = g.mean(df);
    let adv = g.sub(mf, mr)?;
    let wasserstein = -g.value(adv).item();

    let (total, penalty) = if lambda > 0.0 {
        let hat = g.variable(interpolate_rows(real, fake, tau)?);
        let dh = critic_rows(g, critic, params, hat, labels, s)?;
        let sh = g.sum(dh);
        let grads = g.grad(sh, &[hat], true)?;
        let norms = g.row_l2_norms(grads[0]);
        let excess = g.shift(norms, -1.0);
        let sq = g.square(excess);
        let gp = g.mean(sq);
        let gp = g.scale(gp, lambda);
        let penalty = g.value(gp).item();
        (g.add(adv, gp)?, penalty)
    } else {
        (adv, 0.0)
    };
    Ok(CriticLossParts {
        total,
        loss: g.value(total).item(),
        wasserstein,
        penalty,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Adversarial term alone, unweighted.
    pub adversarial_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLossParts {
    pub total: Var,
    pub loss: f64,
    /// `-mean D(log_y(exp_y(G(z, c))), c)`
    pub adversarial: f64,
    /// Mean geodesic distance between `exp_y(G(z, c))` and its target.
    pub sphere: f64,
    /// Mean `dt`-weighted L1 distance between fake and target tangents.
    pub tangent: f64,
}

/// Weighted generator objective for one batch. `target` holds the paired
/// ground-truth SRVFs and `target_tangent` their logarithms at `y`.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss(
    g: &mut Graph,
    v: Var,
    critic: &DenseNet,
    critic_params: &[Var],
    labels: Var,
    target: &Tensor,
    target_tangent: &Tensor,
    cv: &ChartVars,
    w: &LossWeights,
    s: &NetSettings,
) -> Result<GeneratorLossParts> {
    let [b, d] = g.shape(v);
    if target.shape() != [b, d] || target_tangent.shape() != [b, d] {
        return Err(Error::shape(format!("{b}x{d}"), format!("{:?}", target.shape())));
    }
    let (q, t) = fake_rows(g, v, cv)?;
    let dfake = critic_rows(g, critic, critic_params, t, labels, s)?;
    let m = g.mean(dfake);
    let adv = g.neg(m);

    let qt = g.constant(target.clone());
    let dist = row_distances(g, q, qt, cv.dt)?;
    let sphere = g.mean(dist);

    let tt = g.constant(target_tangent.clone());
    let diff = g.sub(t, tt)?;
    let a = g.abs(diff);
    let l1 = g.row_sums(a);
    let l1 = g.scale(l1, cv.dt);
    let tangent = g.mean(l1);

    let total = if w.adversarial_only {
        adv
    } else {
        let a1 = g.scale(adv, w.alpha1);
        let a2 = g.scale(sphere, w.alpha2);
        let a3 = g.scale(tangent, w.alpha3);
        let s12 = g.add(a1, a2)?;
        g.add(s12, a3)?
    };
    Ok(GeneratorLossParts {
        total,
        loss: g.value(total).item(),
        adversarial: g.value(adv).item(),
        sphere: g.value(sphere).item(),
        tangent: g.value(tangent).item(),
    })
}
