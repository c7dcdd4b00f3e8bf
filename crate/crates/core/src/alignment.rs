//! Rate-invariant registration of SRVFs and Karcher means on the sphere.
//!
//! Registration searches monotone piecewise-linear warpings whose vertices lie
//! on the `(T-1) x (T-1)` lattice of interval endpoints. Each lattice segment is
//! scored with the exact `L2` cost between the piecewise-constant `q1` and the
//! warped `sqrt(slope) * q2(gamma(t))`.

use std::cmp::Ordering;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    exp_map, geodesic_distance, log_map, weighted_inner, Srvf, TangentChart,
};

/// Lattice steps `(a, b)`: `a` intervals of `q1` against `b` intervals of `q2`.
///
/// Ordered for tie-breaking, closest to the diagonal first. Non-coprime steps
/// such as `(2, 2)` are omitted; they trace the same warpings as repeated
/// primitive steps at identical cost.
pub const LATTICE_MOVES: [(usize, usize); 7] =
    [(1, 1), (1, 2), (2, 1), (2, 3), (3, 2), (1, 3), (3, 1)];

/// Monotone reparameterization of `[0, 1]`, stored at the `T` grid points
/// `k / (T - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warping {
    values: Vec<f64>,
}

impl Warping {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidValue("warping needs at least 2 knots".into()));
        }
        if values[0] != 0.0 || *values.last().unwrap() != 1.0 {
            return Err(Error::InvalidValue("warping must start at 0 and end at 1".into()));
        }
        if values.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidValue("warping must be non-decreasing".into()));
        }
        Ok(Self { values })
    }

    /// Identity warping for an SRVF with `intervals` samples.
    pub fn identity(intervals: usize) -> Self {
        Self {
            values: (0..=intervals).map(|k| k as f64 / intervals as f64).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity(self.intervals())
    }

    /// Evaluates the piecewise-linear warping at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.intervals();
        let x = (t * n as f64).clamp(0.0, n as f64);
        let k = (x.floor() as usize).min(n - 1);
        let f = x - k as f64;
        self.values[k] + f * (self.values[k + 1] - self.values[k])
    }

    /// `self o inner`, sampled on the same grid.
    pub fn compose(&self, inner: &Warping) -> Result<Warping> {
        if inner.values.len() != self.values.len() {
            return Err(Error::shape(self.values.len(), inner.values.len()));
        }
        let mut values: Vec<f64> = inner.values.iter().map(|&t| self.eval(t)).collect();
        let last = values.len() - 1;
        values[0] = 0.0;
        values[last] = 1.0;
        Warping::new(values)
    }

    /// Numerical inverse, sampled on the same grid.
    pub fn inverse(&self) -> Result<Warping> {
        let n = self.intervals();
        let mut out = Vec::with_capacity(n + 1);
        let mut seg = 0;
        for k in 0..=n {
            let s = k as f64 / n as f64;
            while seg + 1 < n && self.values[seg + 1] < s {
                seg += 1;
            }
            let (g0, g1) = (self.values[seg], self.values[seg + 1]);
            let f = if g1 > g0 { (s - g0) / (g1 - g0) } else { 0.0 };
            out.push(((seg as f64 + f.clamp(0.0, 1.0)) / n as f64).clamp(0.0, 1.0));
        }
        out[0] = 0.0;
        out[n] = 1.0;
        Warping::new(out)
    }
}

/// Karcher mean solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KarcherConfig {
    pub step: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Register every member to the running estimate before taking its log.
    pub align_each_iter: bool,
}

impl Default for KarcherConfig {
    fn default() -> Self {
        Self {
            step: 0.5,
            tol: 1e-8,
            max_iters: 100,
            align_each_iter: true,
        }
    }
}

impl KarcherConfig {
    pub fn without_alignment() -> Self {
        Self {
            align_each_iter: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::Config(format!("karcher step {} not in (0, 1]", self.step)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("karcher tol {} must be positive", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("karcher max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of registering `q2` onto `q1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub warping: Warping,
    pub aligned: Srvf,
    /// Geodesic distance between `q1` and the warped `q2`.
    pub cost: f64,
}

/// Applies `(q o gamma) * sqrt(gamma')` and renormalizes.
///
/// The warped function is averaged over each interval, `gamma` being linear
/// between grid points, so inner products with piecewise-constant targets
/// match the ones registration scores.
pub fn group_action(q: &Srvf, warping: &Warping) -> Result<Srvf> {
    let n = q.intervals();
    if warping.intervals() != n {
        return Err(Error::shape(n + 1, warping.values.len()));
    }
    if warping.is_identity() {
        return Ok(q.clone());
    }
    let dim = q.dim();
    let dt = q.dt();
    let g = &warping.values;
    // Cell k receives the average of sqrt(gamma') q(gamma(t)) over its
    // interval, which is (Q(g[k+1]) - Q(g[k])) / sqrt(dt (g[k+1] - g[k]))
    // with Q the running integral of q.
    let integral = |u: f64, out: &mut [f64]| {
        let x = (u * n as f64).clamp(0.0, n as f64);
        let i = (x.floor() as usize).min(n - 1);
        let f = x - i as f64;
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..i {
            out.iter_mut().zip(q.sample(j)).for_each(|(o, v)| *o += v);
        }
        out.iter_mut()
            .zip(q.sample(i))
            .for_each(|(o, v)| *o = (*o + f * v) * dt);
    };
    let mut lo = vec![0.0; dim];
    let mut hi = vec![0.0; dim];
    let mut out = Vec::with_capacity(n * dim);
    for k in 0..n {
        let width = g[k + 1] - g[k];
        if width <= 0.0 {
            out.extend(std::iter::repeat(0.0).take(dim));
            continue;
        }
        integral(g[k], &mut lo);
        integral(g[k + 1], &mut hi);
        let scale = 1.0 / (dt * width).sqrt();
        out.extend(hi.iter().zip(&lo).map(|(h, l)| (h - l) * scale));
    }
    Srvf::normalized(n, dim, out)
}

/// Exact cost of the lattice segment `from -> to`:
/// `int ||q1(t) - sqrt(m) q2(gamma(t))||^2 dt` with `gamma` linear of slope `m`.
pub fn lattice_segment_cost(
    q1: &Srvf,
    q2: &Srvf,
    from: (usize, usize),
    to: (usize, usize),
) -> f64 {
    let (k, l) = from;
    let (i, j) = to;
    debug_assert!(i > k && j > l);
    let n = q1.intervals() as f64;
    let (a, b) = ((i - k) as f64, (j - l) as f64);
    let root = (b / a).sqrt();
    // Breakpoints in units of 1/n on the q1 axis: integer positions of q1 and
    // the images of q2's interval ends.
    let mut cost = 0.0;
    let mut u0 = k as f64;
    let mut p = k + 1;
    let mut r = l + 1;
    while u0 < i as f64 {
        let next_p = p as f64;
        let next_r = k as f64 + (r - l) as f64 * a / b;
        let u1 = match next_p.partial_cmp(&next_r) {
            Some(Ordering::Less) => next_p,
            _ => next_r,
        };
        let u1 = u1.min(i as f64);
        if u1 > u0 {
            let mid = 0.5 * (u0 + u1);
            let qi = (mid.floor() as usize).min(q1.intervals() - 1);
            let s = l as f64 + (mid - k as f64) * b / a;
            let qj = (s.floor() as usize).min(q2.intervals() - 1);
            let (x, y) = (q1.sample(qi), q2.sample(qj));
            let d2: f64 = x
                .iter()
                .zip(y)
                .map(|(u, w)| (u - root * w) * (u - root * w))
                .sum();
            cost += d2 * (u1 - u0) / n;
        }
        if next_p <= u1 {
            p += 1;
        }
        if next_r <= u1 {
            r += 1;
        }
        u0 = u1;
    }
    cost
}

/// Dynamic-programming search for the lattice warping minimizing
/// `||q1 - sqrt(gamma') q2 o gamma||^2`. Returns the warping and that objective.
pub fn dp_register(q1: &Srvf, q2: &Srvf) -> Result<(Warping, f64)> {
    q1.same_shape(q2)?;
    let n = q1.intervals();
    let w = n + 1;
    let mut cost = vec![f64::INFINITY; w * w];
    let mut back = vec![usize::MAX; w * w];
    cost[0] = 0.0;
    for i in 1..=n {
        for j in 1..=n {
            let mut best = f64::INFINITY;
            let mut best_move = usize::MAX;
            for (m, &(a, b)) in LATTICE_MOVES.iter().enumerate() {
                if a > i || b > j {
                    continue;
                }
                let prev = cost[(i - a) * w + (j - b)];
                if !prev.is_finite() {
                    continue;
                }
                let c = prev + lattice_segment_cost(q1, q2, (i - a, j - b), (i, j));
                if c < best {
                    best = c;
                    best_move = m;
                }
            }
            cost[i * w + j] = best;
            back[i * w + j] = best_move;
        }
    }
    let total = cost[n * w + n];
    if !total.is_finite() {
        return Err(Error::InvalidValue("no admissible warping".into()));
    }
    // Walk back to the origin, then fill every grid point of the q1 axis.
    let mut vertices = vec![(n, n)];
    let (mut i, mut j) = (n, n);
    while (i, j) != (0, 0) {
        let (a, b) = LATTICE_MOVES[back[i * w + j]];
        i -= a;
        j -= b;
        vertices.push((i, j));
    }
    vertices.reverse();
    let mut values = vec![0.0; w];
    for seg in vertices.windows(2) {
        let ((k, l), (i, j)) = (seg[0], seg[1]);
        let (a, b) = ((i - k) as f64, (j - l) as f64);
        for p in k..=i {
            values[p] = (l as f64 + (p - k) as f64 * b / a) / n as f64;
        }
    }
    values[0] = 0.0;
    values[n] = 1.0;
    Ok((Warping::new(values)?, total))
}

/// Smallest distance reduction worth another registration pass.
pub const ALIGN_MIN_GAIN: f64 = 1e-7;

const ALIGN_MAX_PASSES: usize = 32;

/// Registers `q2` onto `q1`.
///
/// Registration is repeated on its own output until a pass improves the
/// distance by less than [`ALIGN_MIN_GAIN`], so aligning an aligned curve is
/// a no-op. The returned warping is the composition of all passes; the cost
/// never exceeds the unregistered distance.
pub fn align(q1: &Srvf, q2: &Srvf) -> Result<Alignment> {
    let mut current = q2.clone();
    let mut cost = geodesic_distance(q1, q2)?;
    let mut total = Warping::identity(q1.intervals());
    for _ in 0..ALIGN_MAX_PASSES {
        let (warping, _) = dp_register(q1, &current)?;
        if warping.is_identity() {
            break;
        }
        let candidate = group_action(&current, &warping)?;
        let next = geodesic_distance(q1, &candidate)?;
        if !(next < cost - ALIGN_MIN_GAIN) {
            break;
        }
        total = total.compose(&warping)?;
        current = candidate;
        cost = next;
    }
    Ok(Alignment {
        warping: total,
        aligned: current,
        cost,
    })
}

/// Registers every member of `set` onto `reference`, preserving order.
pub fn align_set_to_reference(set: &[Srvf], reference: &Srvf) -> Result<Vec<Srvf>> {
    set.par_iter()
        .map(|q| align(reference, q).map(|a| a.aligned))
        .collect()
}

/// Riemannian center of mass by fixed-step gradient descent on the sphere.
///
/// The set is processed in a canonical order, so the result does not depend on
/// the order of the input. With `align_each_iter` the members are registered to
/// the current estimate and the unregistered mean of the registered set
/// becomes the next estimate, until the residual falls below `tol` or a
/// registered set repeats. On a repeat the estimate of lowest Frechet
/// variance within the cycle is returned.
pub fn karcher_mean(set: &[Srvf], config: &KarcherConfig) -> Result<Srvf> {
    config.validate()?;
    let first = set.first().ok_or(Error::EmptySet)?;
    for q in set {
        first.same_shape(q)?;
    }
    let mut order: Vec<Srvf> = set.to_vec();
    order.sort_by(|a, b| compare_samples(a.data(), b.data()));
    if !config.align_each_iter {
        return plain_mean(&order, config);
    }

    let mut mean = settle(plain_mean(&order, config))?;
    let mut best = (f64::INFINITY, mean.clone());
    // registered set, the mean computed from it, its Frechet variance
    let mut history: Vec<(Vec<Srvf>, Srvf, f64)> = Vec::new();
    for round in 0..config.max_iters {
        let registered: Vec<Srvf> = order
            .par_iter()
            .map(|q| align(&mean, q).map(|a| a.aligned))
            .collect::<Result<_>>()?;
        let residual = mean_residual(&mean, &registered)?;
        if residual < best.0 {
            best = (residual, mean.clone());
        }
        if residual < config.tol {
            debug!("registered karcher mean settled after {round} rounds");
            return Ok(mean);
        }
        if let Some(j) = history.iter().position(|h| h.0 == registered) {
            // a member keeps switching between near-tied warps
            let (_, m, var) = history[j..]
                .iter()
                .min_by(|a, b| a.2.total_cmp(&b.2))
                .expect("non-empty cycle");
            debug!("registration cycles with period {}; keeping variance {var:.6e}", history.len() - j);
            return Ok(m.clone());
        }
        let mut canonical = registered.clone();
        canonical.sort_by(|a, b| compare_samples(a.data(), b.data()));
        mean = settle(plain_mean(&canonical, config))?;
        let var = frechet_variance(&mean, &canonical)?;
        history.push((registered, mean.clone(), var));
    }
    Err(Error::NoConvergence {
        best: Box::new(best.1),
        residual: best.0,
        iterations: config.max_iters,
    })
}

/// Accepts the best iterate of an unconverged inner solve.
fn settle(r: Result<Srvf>) -> Result<Srvf> {
    match r {
        Err(Error::NoConvergence { best, residual, .. }) => {
            debug!("inner karcher mean stopped at residual {residual:.3e}");
            Ok(*best)
        }
        other => other,
    }
}

/// Norm of the mean logarithm of `set` at `mean`.
fn mean_residual(mean: &Srvf, set: &[Srvf]) -> Result<f64> {
    let chart = TangentChart::new(mean.clone());
    let mut tangent = vec![0.0; mean.data().len()];
    for q in set {
        let v = log_map(&chart, q)?;
        tangent.iter_mut().zip(v.data()).for_each(|(s, x)| *s += x);
    }
    tangent.iter_mut().for_each(|x| *x /= set.len() as f64);
    Ok(weighted_inner(&tangent, &tangent, mean.dt()).sqrt())
}

/// Descent without registration over a canonically ordered set.
fn plain_mean(order: &[Srvf], config: &KarcherConfig) -> Result<Srvf> {
    let (n, dim) = (order[0].intervals(), order[0].dim());
    let mut sum = vec![0.0; n * dim];
    for q in order {
        sum.iter_mut().zip(q.data()).for_each(|(s, v)| *s += v);
    }
    // Start from the member nearest the extrinsic average, so a set whose
    // mean is one of its members (duplicates, singletons) returns it exactly.
    let mut mean = order
        .iter()
        .map(|q| (weighted_inner(q.data(), &sum, q.dt()), q))
        .fold(None::<(f64, &Srvf)>, |best, (s, q)| match best {
            Some((b, _)) if b >= s => best,
            _ => Some((s, q)),
        })
        .map(|(_, q)| q.clone())
        .expect("non-empty set");
    let count = order.len() as f64;
    let mut best = (f64::INFINITY, mean.clone());
    for iter in 0..=config.max_iters {
        let chart = TangentChart::new(mean.clone());
        let mut tangent = vec![0.0; n * dim];
        for q in order {
            let v = log_map(&chart, q)?;
            tangent.iter_mut().zip(v.data()).for_each(|(s, x)| *s += x);
        }
        tangent.iter_mut().for_each(|x| *x /= count);
        let residual = weighted_inner(&tangent, &tangent, mean.dt()).sqrt();
        if residual < best.0 {
            best = (residual, mean.clone());
        }
        if residual < config.tol {
            debug!("karcher mean converged after {iter} iterations (residual {residual:.3e})");
            return Ok(mean);
        }
        if iter == config.max_iters {
            break;
        }
        let step = chart.project(tangent.iter().map(|x| config.step * x).collect())?;
        mean = exp_map(&chart, &step)?;
    }
    Err(Error::NoConvergence {
        best: Box::new(best.1),
        residual: best.0,
        iterations: config.max_iters,
    })
}

fn compare_samples(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Sum of squared geodesic distances from `center` to every member.
pub fn frechet_variance(center: &Srvf, set: &[Srvf]) -> Result<f64> {
    set.iter()
        .map(|q| geodesic_distance(center, q).map(|d| d * d))
        .sum()
}
