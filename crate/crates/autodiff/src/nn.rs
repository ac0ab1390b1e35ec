//! Dense layers and multilayer perceptrons on top of [`Graph`].

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

/// Anything that owns named parameter tensors.
///
/// Visit order must be stable: optimizers and checkpoints rely on it.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn zero_grads(&mut self) {
        self.visit_mut(&mut |_, t| t.clear_grad());
    }

    /// FNV-1a over the raw bits of every parameter, in visit order.
    fn param_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        self.visit(&mut |name, t| {
            for b in name.bytes().chain(t.data().iter().flat_map(|x| x.to_bits().to_le_bytes())) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        });
        h
    }

    /// Copy parameter values from a structurally identical module.
    fn copy_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let mut src = Vec::new();
        other.visit(&mut |_, t| src.push(t.data().to_vec()));
        let mut it = src.into_iter();
        self.visit_mut(&mut |_, t| {
            let d = it.next().expect("identical structure");
            t.data_mut().copy_from_slice(&d);
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Tanh,
    None,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Elu => g.elu(x),
            Activation::Tanh => g.tanh(x),
            Activation::None => x,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "elu" => Ok(Activation::Elu),
            "tanh" => Ok(Activation::Tanh),
            "none" => Ok(Activation::None),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// Fully connected layer `y = x W + b` with `W: (in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero bias.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Linear {
            weight: Tensor::new(vec![fan_in, fan_out], data).expect("consistent"),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    name: String,
    layers: Vec<Linear>,
    hidden: Activation,
    output: Activation,
}

/// An [`Mlp`] whose parameters have been placed in a graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    weights: Vec<Var>,
    biases: Vec<Var>,
    hidden: Activation,
    output: Activation,
    in_dim: usize,
}

impl Mlp {
    /// `sizes = [input, h1, ..., output]`; one linear layer per consecutive pair.
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return shape_err("mlp", format!("need at least two positive layer sizes, got {sizes:?}"));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Ok(Mlp {
            name: name.into(),
            layers,
            hidden,
            output,
        })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    /// Zero the final layer's weights and bias.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        last.bias.data_mut().iter_mut().for_each(|w| *w = 0.0);
    }

    /// Place parameters in `g`; `trainable = false` binds them as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let mut put = |t: &Tensor| if trainable { g.leaf(t) } else { g.constant(t) };
        let (weights, biases) = self
            .layers
            .iter()
            .map(|l| (put(&l.weight), put(&l.bias)))
            .unzip();
        BoundMlp {
            weights,
            biases,
            hidden: self.hidden,
            output: self.output,
            in_dim: self.in_dim(),
        }
    }

    /// Copy gradients of the bound parameters into the tensors' `grad` slots.
    pub fn store_grads(&mut self, bound: &BoundMlp, grads: &Gradients) {
        for (l, (w, b)) in self
            .layers
            .iter_mut()
            .zip(bound.weights.iter().zip(&bound.biases))
        {
            l.weight.set_grad(grads.wrt(*w)).expect("same shape");
            l.bias.set_grad(grads.wrt(*b)).expect("same shape");
        }
    }

    /// Single-graph convenience forward pass with constant parameters.
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let b = self.bind(g, false);
        b.forward(g, x)
    }
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let last_dim = g.shape(x).last().copied().unwrap_or(1);
        if last_dim != self.in_dim {
            return shape_err(
                "mlp",
                format!("input width {last_dim} does not match layer fan-in {}", self.in_dim),
            );
        }
        let n = self.weights.len();
        let mut h = x;
        for i in 0..n {
            let z = g.matmul(h, self.weights[i])?;
            let z = g.add(z, self.biases[i])?;
            let act = if i + 1 == n { self.output } else { self.hidden };
            h = act.apply(g, z);
        }
        Ok(h)
    }
}

impl Parameterized for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            f(&format!("{}.{i}.weight", self.name), &l.weight);
            f(&format!("{}.{i}.bias", self.name), &l.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let name = self.name.clone();
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("{name}.{i}.weight"), &mut l.weight);
            f(&format!("{name}.{i}.bias"), &mut l.bias);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layer_counts_follow_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::new("enc", &[4, 512, 512, 512], Activation::Elu, Activation::Elu, &mut rng).unwrap();
        assert_eq!(m.layers().len(), 3);
        let mut weights = 0;
        let mut biases = 0;
        m.visit(&mut |name, _| {
            if name.ends_with("weight") {
                weights += 1
            } else {
                biases += 1
            }
        });
        assert_eq!((weights, biases), (3, 3));
    }

    #[test]
    fn init_is_bounded_by_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::new(16, 8, &mut rng);
        assert!(l.weight.data().iter().all(|w| w.abs() <= 0.25));
        assert!(l.bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_output_layer_gives_zero_preactivation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Mlp::new("v", &[3, 5, 1], Activation::Elu, Activation::None, &mut rng).unwrap();
        m.zero_output_layer();
        let mut g = Graph::new();
        let x = g.constant(&Tensor::vector(vec![0.0; 3]));
        let y = m.apply(&mut g, x).unwrap();
        assert_eq!(g.value(y), &[0.0]);
    }

    #[test]
    fn batch_apply_matches_single_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mlp::new("f", &[3, 7, 7, 2], Activation::Elu, Activation::Tanh, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let mut g = Graph::new();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let xb = g.constant(&Tensor::matrix(5, 3, flat).unwrap());
        let yb = m.apply(&mut g, xb).unwrap();
        let batch = g.value(yb).to_vec();
        for (i, r) in rows.iter().enumerate() {
            let mut g1 = Graph::new();
            let x = g1.constant(&Tensor::vector(r.clone()));
            let y = m.apply(&mut g1, x).unwrap();
            for (a, b) in g1.value(y).iter().zip(&batch[i * 2..i * 2 + 2]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_width_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Mlp::new("f", &[3, 4], Activation::None, Activation::None, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(&Tensor::vector(vec![0.0; 2]));
        assert!(m.apply(&mut g, x).is_err());
    }

    #[test]
    fn copy_from_makes_hash_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Mlp::new("f", &[3, 4, 1], Activation::Elu, Activation::None, &mut rng).unwrap();
        let mut b = Mlp::new("f", &[3, 4, 1], Activation::Elu, Activation::None, &mut rng).unwrap();
        assert_ne!(a.param_hash(), b.param_hash());
        b.copy_from(&a);
        assert_eq!(a.param_hash(), b.param_hash());
    }
}
