use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Class index into the network's output vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label(pub usize);

impl Label {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `y = relu?(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub relu: bool,
}

impl AffineLayer {
    pub fn new(weights: Matrix, biases: Vec<f64>, relu: bool) -> Result<Self> {
        if weights.rows() != biases.len() {
            return Err(Error::DimensionMismatch {
                context: "layer biases",
                expected: weights.rows(),
                found: biases.len(),
            });
        }
        Ok(AffineLayer { weights, biases, relu })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    /// Pre-activation values `W x + b`.
    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weights.mul_vec(x);
        for (zi, bi) in z.iter_mut().zip(&self.biases) {
            *zi += bi;
        }
        z
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.pre_activation(x);
        if self.relu {
            for v in z.iter_mut() {
                *v = v.max(0.0);
            }
        }
        z
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Pre-activation vector of every layer.
    pub pre: Vec<Vec<f64>>,
    /// Post-activation vector of every layer; the last entry is the output.
    pub post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// A fully connected ReLU network: every hidden layer applies ReLU, the output
/// layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<AffineLayer>,
}

impl Network {
    /// Checks layer chaining and the activation pattern.
    pub fn new(layers: Vec<AffineLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        for k in 1..layers.len() {
            if layers[k].input_dim() != layers[k - 1].output_dim() {
                return Err(Error::DimensionMismatch {
                    context: "layer chaining",
                    expected: layers[k - 1].output_dim(),
                    found: layers[k].input_dim(),
                });
            }
        }
        let last = layers.len() - 1;
        for (k, layer) in layers.iter().enumerate() {
            if layer.relu != (k != last) {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} must {}apply ReLU",
                    k + 1,
                    if k == last { "not " } else { "" }
                )));
            }
        }
        Ok(Network { layers })
    }

    /// Convenience constructor from dense row lists; ReLU on all but the last layer.
    pub fn from_dense(layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>) -> Result<Self> {
        let last = layers.len().saturating_sub(1);
        let layers = layers
            .into_iter()
            .enumerate()
            .map(|(k, (w, b))| AffineLayer::new(Matrix::from_rows(&w), b, k != last))
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }

    pub fn identity(dim: usize) -> Self {
        Network {
            layers: vec![AffineLayer {
                weights: Matrix::identity(dim),
                biases: vec![0.0; dim],
                relu: false,
            }],
        }
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Number of neurons behind a ReLU.
    pub fn relu_count(&self) -> usize {
        self.layers.iter().filter(|l| l.relu).map(AffineLayer::output_dim).sum()
    }

    /// Widths `n0 n1 ... nL`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(AffineLayer::output_dim))
            .collect()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                found: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.eval(input))
    }

    /// Forward pass without the dimension check.
    pub(crate) fn eval(&self, input: &[f64]) -> Vec<f64> {
        let mut z = self.layers[0].apply(input);
        for layer in &self.layers[1..] {
            z = layer.apply(&z);
        }
        z
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut cur = input.to_vec();
        for layer in &self.layers {
            let z = layer.pre_activation(&cur);
            let y = if layer.relu {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(y.clone());
            cur = y;
        }
        Ok(ForwardTrace { pre, post })
    }

    /// Arg-max of the outputs; exact ties go to the lowest index.
    pub fn classify(&self, input: &[f64]) -> Result<Label> {
        Ok(argmax(&self.forward(input)?))
    }

    /// `F_l(x) - F_q(x)`; non-negative means `l` beats or ties `q`.
    pub fn margin(&self, input: &[f64], q: Label, l: Label) -> Result<f64> {
        let y = self.forward(input)?;
        self.check_label(q)?;
        self.check_label(l)?;
        Ok(y[l.0] - y[q.0])
    }

    pub fn check_label(&self, label: Label) -> Result<()> {
        if label.0 >= self.output_dim() {
            return Err(Error::InvalidLabel {
                index: label.0,
                classes: self.output_dim(),
            });
        }
        Ok(())
    }

    /// Adds `shift` to every output; arg-max is unchanged.
    pub fn with_output_shift(&self, shift: f64) -> Network {
        let mut net = self.clone();
        let last = net.layers.len() - 1;
        for b in net.layers[last].biases.iter_mut() {
            *b += shift;
        }
        net
    }
}

pub(crate) fn argmax(values: &[f64]) -> Label {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    Label(best)
}

/// Composes two networks so that the result computes `suffix(prefix(x))`.
///
/// The prefix's affine output layer is folded into the suffix's first layer,
/// which keeps the composition a plain alternating affine/ReLU network.
pub fn concatenate(prefix: &Network, suffix: &Network) -> Result<Network> {
    if prefix.output_dim() != suffix.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "concatenate",
            expected: suffix.input_dim(),
            found: prefix.output_dim(),
        });
    }
    let p_layers = prefix.layers();
    let s_layers = suffix.layers();
    let p_out = &p_layers[p_layers.len() - 1];
    let s_in = &s_layers[0];

    let weights = s_in.weights.matmul(&p_out.weights);
    let mut biases = s_in.weights.mul_vec(&p_out.biases);
    for (b, sb) in biases.iter_mut().zip(&s_in.biases) {
        *b += sb;
    }
    let fused = AffineLayer {
        weights,
        biases,
        relu: s_in.relu,
    };

    let mut layers = Vec::with_capacity(p_layers.len() + s_layers.len() - 1);
    layers.extend(p_layers[..p_layers.len() - 1].iter().cloned());
    layers.push(fused);
    layers.extend(s_layers[1..].iter().cloned());
    Network::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relu_neuron() -> Network {
        // y = relu(x - 1) passed through an identity output layer
        Network::from_dense(vec![(vec![vec![1.0]], vec![-1.0]), (vec![vec![1.0]], vec![0.0])]).unwrap()
    }

    #[test]
    fn identity_forward() {
        let net = Network::identity(2);
        assert_eq!(net.forward(&[0.3, -0.2]).unwrap(), vec![0.3, -0.2]);
    }

    #[test]
    fn relu_clamps() {
        assert_eq!(relu_neuron().forward(&[0.4]).unwrap(), vec![0.0]);
        assert_eq!(relu_neuron().forward(&[1.5]).unwrap(), vec![0.5]);
    }

    #[test]
    fn classify_picks_max_and_breaks_ties_low() {
        let net = Network::identity(2);
        assert_eq!(net.classify(&[0.1, 0.9]).unwrap(), Label(1));
        assert_eq!(net.classify(&[0.5, 0.5]).unwrap(), Label(0));
    }

    #[test]
    fn dimension_errors() {
        let net = Network::identity(2);
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(concatenate(&Network::identity(3), &net).is_err());
    }

    #[test]
    fn rejects_bad_activation_pattern() {
        let l = AffineLayer::new(Matrix::identity(1), vec![0.0], true).unwrap();
        assert!(Network::new(vec![l]).is_err());
    }

    #[test]
    fn trace_exposes_hidden_values() {
        let t = relu_neuron().forward_trace(&[0.25]).unwrap();
        assert_eq!(t.pre[0], vec![-0.75]);
        assert_eq!(t.post[0], vec![0.0]);
        assert_eq!(t.output(), &[0.0]);
    }
}
