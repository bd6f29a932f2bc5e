use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use super::AutodiffError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply<R: Real>(self, tape: &mut Tape<R>, x: Var) -> Result<Var, AutodiffError> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softplus => tape.softplus(x),
        }
    }
}

/// Fully connected layer `y = x W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<R> {
    pub weight: Tensor<R>,
    pub bias: Tensor<R>,
}

impl<R: Real> Linear<R> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| R::of(rng.gen_range(-limit..limit))).collect();
        Linear {
            weight: Tensor::new(vec![fan_in, fan_out], data).expect("extent product"),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    /// Registers `[weight, bias]` as leaves.
    pub fn register(&self, tape: &mut Tape<R>) -> LinearVars {
        LinearVars {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, x: Var) -> Result<Var, AutodiffError> {
        let h = tape.matmul(x, self.weight)?;
        tape.add(h, self.bias)
    }
}

/// Plain multi-layer perceptron: rectifier on hidden layers and a task-specific
/// activation on the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<R> {
    pub layers: Vec<Linear<R>>,
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl<R: Real> MlpParams<R> {
    pub fn new(widths: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs an input and an output width");
        let layers = widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        MlpParams {
            layers,
            widths: widths.to_vec(),
            hidden,
            output,
        }
    }

    /// Number of scalars in weights and biases for the given width list.
    pub fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn register(&self, tape: &mut Tape<R>) -> Vec<LinearVars> {
        self.layers.iter().map(|l| l.register(tape)).collect()
    }

    pub fn forward(&self, tape: &mut Tape<R>, vars: &[LinearVars], x: Var) -> Result<Var, AutodiffError> {
        let last = vars.len() - 1;
        let mut h = x;
        for (i, lv) in vars.iter().enumerate() {
            h = lv.forward(tape, h)?;
            h = if i == last { self.output } else { self.hidden }.apply(tape, h)?;
        }
        Ok(h)
    }

    pub fn tensors(&self) -> Vec<&Tensor<R>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<R>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_matches_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let widths = [5, 7, 3];
        let mlp = MlpParams::<f64>::new(&widths, Activation::Relu, Activation::Sigmoid, &mut rng);
        let n: usize = mlp.tensors().iter().map(|t| t.len()).sum();
        assert_eq!(n, MlpParams::<f64>::param_count(&widths));
        assert_eq!(n, 5 * 7 + 7 + 7 * 3 + 3);
        for pair in mlp.layers.windows(2) {
            assert_eq!(pair[0].fan_out(), pair[1].fan_in());
        }
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = Linear::<f64>::init(10, 20, &mut ChaCha8Rng::seed_from_u64(9));
        let b = Linear::<f64>::init(10, 20, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(a.weight.data().iter().all(|w| w.abs() <= limit));
        assert!(a.bias.data().iter().all(|&b| b == 0.0));
    }
}
