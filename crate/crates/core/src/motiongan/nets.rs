use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};

const BATCH_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
}

/// Dense stack that concatenates the one-hot label to its input and to every
/// hidden layer: `[x, c] -> h1; [h1, c] -> h2; ...; [hk, c] -> out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub input: usize,
    pub labels: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    /// `[W0, b0, W1, b1, ...]`, `W` being `fan_in x fan_out` and `b` a row.
    pub params: Vec<Tensor>,
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new(
        input: usize,
        labels: usize,
        hidden: &[usize],
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut params = Vec::new();
        let mut fan_in = input + labels;
        for &w in hidden.iter().chain(std::iter::once(&output)) {
            let limit = (6.0 / (fan_in + w) as f64).sqrt();
            let data = (0..fan_in * w).map(|_| rng.gen_range(-limit..limit)).collect();
            params.push(Tensor::new(fan_in, w, data).expect("sized above"));
            params.push(Tensor::zeros(1, w));
            fan_in = w + labels;
        }
        Self {
            input,
            labels,
            hidden: hidden.to_vec(),
            output,
            params,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    /// Expected parameter shapes, in storage order.
    pub fn shapes(&self) -> Vec<[usize; 2]> {
        let mut out = Vec::new();
        let mut fan_in = self.input + self.labels;
        for &w in self.hidden.iter().chain(std::iter::once(&self.output)) {
            out.push([fan_in, w]);
            out.push([1, w]);
            fan_in = w + self.labels;
        }
        out
    }

    /// Adds the parameters to `g` as variables.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.variable(p.clone())).collect()
    }

    /// Adds the parameters to `g` as constants.
    pub fn bind_constant(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.clone())).collect()
    }

    /// Pre-activation output of the last layer, `batch x output`.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &[Var],
        x: Var,
        labels: Var,
        activation: Activation,
        slope: f64,
        batch_norm: bool,
    ) -> Result<Var> {
        if params.len() != self.params.len() {
            return Err(Error::shape(self.params.len(), params.len()));
        }
        let layers = params.len() / 2;
        let mut h = x;
        for l in 0..layers {
            let inp = g.concat(&[h, labels])?;
            let z = g.matmul(inp, params[2 * l])?;
            let mut z = g.add(z, params[2 * l + 1])?;
            if l + 1 == layers {
                return Ok(z);
            }
            if batch_norm {
                z = batch_normalize(g, z)?;
            }
            h = match activation {
                Activation::Relu => g.relu(z),
                Activation::LeakyRelu => g.leaky_relu(z, slope),
            };
        }
        unreachable!("a network has at least one layer")
    }
}

/// Column-wise standardization over the batch (no learned affine part).
fn batch_normalize(g: &mut Graph, z: Var) -> Result<Var> {
    let [rows, _] = g.shape(z);
    let inv = 1.0 / rows as f64;
    let sums = g.col_sums(z);
    let mean = g.scale(sums, inv);
    let centered = g.sub(z, mean)?;
    let sq = g.square(centered);
    let var = g.col_sums(sq);
    let var = g.scale(var, inv);
    let var = g.shift(var, BATCH_NORM_EPS);
    let sd = g.sqrt(var);
    g.div(centered, sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_and_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(5, 2, &[8, 4], 3, &mut rng);
        let shapes: Vec<[usize; 2]> = net.params.iter().map(Tensor::shape).collect();
        assert_eq!(shapes, net.shapes());
        assert_eq!(shapes, vec![[7, 8], [1, 8], [10, 4], [1, 4], [6, 3], [1, 3]]);
        let mut g = Graph::new();
        let p = net.bind(&mut g);
        let x = g.constant(Tensor::full(4, 5, 0.3));
        let c = g.constant(Tensor::new(4, 2, vec![1., 0., 0., 1., 1., 0., 0., 1.]).unwrap());
        let out = net
            .forward(&mut g, &p, x, c, Activation::LeakyRelu, 0.2, true)
            .unwrap();
        assert_eq!(g.shape(out), [4, 3]);
        // rows with the same input and label agree
        let v = g.value(out);
        assert_eq!(v.row_slice(0), v.row_slice(2));
    }
}
