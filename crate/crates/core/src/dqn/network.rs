//! Dense ReLU network with hand-written backpropagation and an Adam optimizer.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{DqnError, NUM_ACTIONS};
use crate::seed::rng_from_seed;

/// One affine layer. `weights` is `in_dim x out_dim`, so a batch `x` maps to `x.dot(w) + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Multilayer perceptron from a state vector to one value per action.
///
/// Hidden layers use ReLU; the output layer is linear with exactly
/// [`NUM_ACTIONS`] units.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    fn zeros_like(net: &QNetwork) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }
}

impl QNetwork {
    /// Uniform initialisation in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self, DqnError> {
        let sizes = Self::sizes_for(input_dim, hidden)?;
        let mut rng = rng_from_seed(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weights = Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..=bound));
                let bias = Array1::from_shape_fn(w[1], |_| rng.random_range(-bound..=bound));
                Dense { weights, bias }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Result<Self, DqnError> {
        let sizes = Self::sizes_for(input_dim, hidden)?;
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self { layers })
    }

    /// Assembles a network from explicit layers, checking that shapes chain
    /// and that the output has one unit per action.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, DqnError> {
        let Some(last) = layers.last() else {
            return Err(DqnError::Shape("network needs at least one layer".into()));
        };
        if last.out_dim() != NUM_ACTIONS {
            return Err(DqnError::Shape(format!(
                "output layer has {} units, expected {NUM_ACTIONS}",
                last.out_dim()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(DqnError::Shape(format!("layer {i}: bias length does not match width")));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(DqnError::Shape(format!("layer {i}: input width does not chain")));
            }
        }
        Ok(Self { layers })
    }

    fn sizes_for(input_dim: usize, hidden: &[usize]) -> Result<Vec<usize>, DqnError> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(DqnError::Shape("layer widths must be positive".into()));
        }
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(NUM_ACTIONS);
        Ok(sizes)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// Input width, hidden widths, output width.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(Dense::out_dim));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>, DqnError> {
        self.check_dim(state.len())?;
        let x = ArrayView2::from_shape((1, state.len()), state).expect("row view");
        Ok(self.forward_batch(x).into_raw_vec_and_offset().0)
    }

    /// Rows of `x` are states; the result has one row of action values per state.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            a = a.dot(&layer.weights) + &layer.bias;
            if i < last {
                a.mapv_inplace(relu);
            }
        }
        a
    }

    /// Mean squared TD error `mean_b (Q(s_b, a_b) - y_b)^2`.
    pub fn td_loss(&self, states: ArrayView2<'_, f64>, actions: &[usize], targets: &[f64]) -> f64 {
        let q = self.forward_batch(states);
        let n = actions.len() as f64;
        actions
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(b, (&a, &y))| (q[[b, a]] - y).powi(2))
            .sum::<f64>()
            / n
    }

    /// TD loss and its gradient with respect to every weight and bias.
    pub fn td_loss_and_grad(
        &self,
        states: ArrayView2<'_, f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> (f64, Gradients) {
        let batch = actions.len();
        debug_assert_eq!(states.nrows(), batch);
        debug_assert_eq!(targets.len(), batch);

        // activations[0] is the input; activations[i + 1] is layer i's output
        // (after ReLU for hidden layers).
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(states.to_owned());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&layer.weights) + &layer.bias;
            if i < last {
                z.mapv_inplace(relu);
            }
            activations.push(z);
        }

        let q = &activations[last + 1];
        let mut delta = Array2::<f64>::zeros(q.raw_dim());
        let mut loss = 0.0;
        for (b, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let err = q[[b, a]] - y;
            loss += err * err;
            delta[[b, a]] = 2.0 * err / batch as f64;
        }
        loss /= batch as f64;

        let mut grads = Gradients::zeros_like(self);
        for i in (0..self.layers.len()).rev() {
            grads.weights[i] = activations[i].t().dot(&delta);
            grads.biases[i] = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weights.t());
                // ReLU derivative, read off the post-activation values.
                Zip::from(&mut back)
                    .and(&activations[i])
                    .for_each(|g, &act| {
                        if act <= 0.0 {
                            *g = 0.0;
                        }
                    });
                delta = back;
            }
        }
        (loss, grads)
    }

    fn check_dim(&self, got: usize) -> Result<(), DqnError> {
        let expected = self.input_dim();
        if got != expected {
            return Err(DqnError::Dimension { expected, got });
        }
        Ok(())
    }

    pub(crate) fn ensure_input_dim(&self, got: usize) -> Result<(), DqnError> {
        self.check_dim(got)
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &QNetwork, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut QNetwork, grads: &Gradients) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let lr_t = self.learning_rate * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step));
        for (i, layer) in net.layers.iter_mut().enumerate() {
            Zip::from(&mut layer.weights)
                .and(&mut self.m.weights[i])
                .and(&mut self.v.weights[i])
                .and(&grads.weights[i])
                .for_each(|w, m, v, &g| adam_update(w, m, v, g, b1, b2, eps, lr_t));
            Zip::from(&mut layer.bias)
                .and(&mut self.m.biases[i])
                .and(&mut self.v.biases[i])
                .and(&grads.biases[i])
                .for_each(|w, m, v, &g| adam_update(w, m, v, g, b1, b2, eps, lr_t));
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn adam_update(w: &mut f64, m: &mut f64, v: &mut f64, g: f64, b1: f64, b2: f64, eps: f64, lr_t: f64) {
    *m = b1 * *m + (1.0 - b1) * g;
    *v = b2 * *v + (1.0 - b2) * g * g;
    *w -= lr_t * *m / (v.sqrt() + eps);
}
