//! Multi-layer perceptrons over flat `f64` buffers.
//!
//! An [`Mlp`] is a chain of dense layers with one activation applied after
//! every hidden layer and a separately chosen activation after the last
//! (usually [`Activation::Identity`] for distribution-parameter heads).
//! The same network can be evaluated directly ([`Mlp::forward`]) or mounted
//! onto a [`Graph`] for differentiation ([`Mlp::mount`]); both paths use the
//! identical accumulation order, so their outputs agree bit for bit.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId, Unary};
use crate::rng::RngStream;

/// SELU scale constant.
pub const SELU_LAMBDA: f64 = 1.0507009873554805;
/// SELU negative-branch constant.
pub const SELU_ALPHA: f64 = 1.6732632423543772;

/// `λ·x` for positive inputs, `λ·α·(eˣ−1)` otherwise.
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

/// `x` for nonnegative inputs, `slope·x` otherwise. `slope` must be in (0,1).
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Elementwise nonlinearity applied after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Selu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => leaky_relu(x, slope),
            Activation::Selu => selu(x),
            Activation::Identity => x,
        }
    }
}

/// One dense layer: row-major `out×in` weights plus an `out` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub out_dim: usize,
    pub in_dim: usize,
}

/// Feed-forward network of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
    final_activation: Activation,
}

impl Mlp {
    /// Builds a network with the given layer sizes (`sizes[0]` is the input
    /// dimension) and zero weights.
    pub fn zeros(sizes: &[usize], activation: Activation, final_activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "mlp needs at least one layer");
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
                out_dim: w[1],
                in_dim: w[0],
            })
            .collect();
        Self { layers, activation, final_activation }
    }

    /// Builds a network with weights and biases uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(
        sizes: &[usize],
        activation: Activation,
        final_activation: Activation,
        rng: &mut RngStream,
    ) -> Self {
        let mut net = Self::zeros(sizes, activation, final_activation);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.uniform_range(-bound, bound);
            }
            for b in &mut layer.bias {
                *b = rng.uniform_range(-bound, bound);
            }
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn final_activation(&self) -> Activation {
        self.final_activation
    }

    fn activation_for(&self, layer_idx: usize) -> Activation {
        if layer_idx + 1 == self.layers.len() {
            self.final_activation
        } else {
            self.activation
        }
    }

    /// Evaluates the network on `input`.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "mlp input has length {}, expected {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut x = input.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let act = self.activation_for(idx);
            let mut y = Vec::with_capacity(layer.out_dim);
            for o in 0..layer.out_dim {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut acc = layer.bias[o];
                for (w, v) in row.iter().zip(&x) {
                    acc += w * v;
                }
                y.push(act.apply(acc));
            }
            x = y;
        }
        Ok(x)
    }

    /// Registers this network's parameters on `graph` as differentiable leaves.
    pub fn mount(&self, graph: &mut Graph) -> MountedMlp {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(idx, layer)| MountedLayer {
                weights: graph.leaf(layer.weights.clone()),
                bias: graph.leaf(layer.bias.clone()),
                activation: self.activation_for(idx),
            })
            .collect();
        MountedMlp { layers }
    }
}

struct MountedLayer {
    weights: NodeId,
    bias: NodeId,
    activation: Activation,
}

/// Graph-side handle to a mounted [`Mlp`].
pub struct MountedMlp {
    layers: Vec<MountedLayer>,
}

impl MountedMlp {
    /// Builds the forward computation on the graph, returning the output node.
    pub fn forward(&self, graph: &mut Graph, input: NodeId) -> NodeId {
        let mut x = input;
        for layer in &self.layers {
            x = graph.affine(layer.weights, layer.bias, x);
            x = match layer.activation {
                Activation::Relu => graph.unary(Unary::Relu, x),
                Activation::LeakyRelu(slope) => graph.unary(Unary::LeakyRelu(slope), x),
                Activation::Selu => graph.unary(Unary::Selu, x),
                Activation::Identity => x,
            };
        }
        x
    }

    /// Node ids of this network's parameter leaves, weights before bias,
    /// in layer order. Matches the order used by parameter flattening.
    pub fn param_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.layers.iter().flat_map(|l| [l.weights, l.bias])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_network_maps_to_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Relu, Activation::Identity);
        let out = net.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(&[3, 3], Activation::Identity, Activation::Identity);
        for i in 0..3 {
            net.layers_mut()[0].weights[i * 3 + i] = 1.0;
        }
        let v = [0.3, -1.2, 7.0];
        assert_eq!(net.forward(&v).unwrap(), v.to_vec());
    }

    #[test]
    fn hand_computed_relu_layer() {
        // W=[[1,2],[3,4]], b=0, input [1,-1]: pre-activation [-1,-1] -> [0,0]
        let mut net = Mlp::zeros(&[2, 2], Activation::Relu, Activation::Relu);
        net.layers_mut()[0].weights = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(net.forward(&[1.0, -1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn input_length_mismatch_is_an_error() {
        let net = Mlp::zeros(&[3, 2], Activation::Relu, Activation::Identity);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn selu_reference_points() {
        assert_eq!(selu(0.0), 0.0);
        assert_relative_eq!(selu(1.0), 1.0507009873554805, epsilon = 1e-12);
        // limit as x -> -inf is -lambda*alpha
        assert_relative_eq!(selu(-60.0), -SELU_LAMBDA * SELU_ALPHA, epsilon = 1e-10);
        assert_relative_eq!(SELU_LAMBDA * SELU_ALPHA, 1.7580993408473766, epsilon = 1e-12);
    }

    #[test]
    fn leaky_relu_reference_points() {
        assert_eq!(leaky_relu(5.0, 0.2), 5.0);
        assert_eq!(leaky_relu(-5.0, 0.2), -1.0);
        assert_eq!(leaky_relu(0.0, 0.2), 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = RngStream::new(9);
        let net = Mlp::init(&[4, 8, 3], Activation::Selu, Activation::Identity, &mut rng);
        let x = [0.1, -0.2, 0.3, 0.7];
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn graph_forward_matches_plain_forward_exactly() {
        let mut rng = RngStream::new(21);
        let net = Mlp::init(
            &[5, 7, 7, 3],
            Activation::LeakyRelu(0.2),
            Activation::Identity,
            &mut rng,
        );
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let plain = net.forward(&x).unwrap();

        let mut g = Graph::new();
        let mounted = net.mount(&mut g);
        let input = g.leaf(x.clone());
        let out = mounted.forward(&mut g, input);
        assert_eq!(g.value(out), plain.as_slice());
    }
}
