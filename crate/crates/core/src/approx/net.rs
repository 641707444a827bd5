//! Feed-forward rectified-linear approximator with manual backpropagation
//! and the adaptive-moment optimizer.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine layer `y = x·W + b`, with `W` of shape `(in, out)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Dense {
    /// Uniform initialization on `±1/√fan_in` for weights and bias.
    fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Dense {
            weights: Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng)),
            bias: Array1::from_shape_simple_fn(fan_out, || dist.sample(rng)),
        }
    }
}

/// Multilayer perceptron with rectified-linear hidden layers and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer parameter gradients, in layer order.
pub type Gradients = Vec<Dense>;

impl Mlp {
    /// `widths` lists every layer size including input and output.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], rng))
            .collect();
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .last()
            .expect("at least one layer")
            .weights
            .ncols()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.weights.nrows()).collect();
        w.push(self.output_dim());
        w
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            all_finite(l.weights.as_slice().expect("standard layout"))
                && all_finite(l.bias.as_slice().expect("standard layout"))
        })
    }

    /// Outputs for a batch of inputs, one row per input.
    pub fn forward(&self, input: ArrayView2<f32>) -> Array2<f32> {
        let mut h = affine(&self.layers[0], input);
        for layer in &self.layers[1..] {
            relu(&mut h);
            h = affine(layer, h.view());
        }
        h
    }

    /// Forward pass keeping every layer input, for [`Mlp::backward`].
    pub fn forward_cached(&self, input: ArrayView2<f32>) -> (Array2<f32>, Vec<Array2<f32>>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = input.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            if k > 0 {
                relu(&mut h);
            }
            let next = affine(layer, h.view());
            inputs.push(h);
            h = next;
        }
        (h, inputs)
    }

    /// Parameter gradients given the loss gradient at the outputs.
    pub fn backward(&self, inputs: &[Array2<f32>], grad_out: Array2<f32>) -> Gradients {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out;
        for k in (0..self.layers.len()).rev() {
            let a = &inputs[k];
            grads.push(Dense {
                weights: a.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if k > 0 {
                let mut back = delta.dot(&self.layers[k].weights.t());
                // Inputs of layer k > 0 are post-activation, so a zero marks a closed unit.
                Zip::from(&mut back).and(a).for_each(|g, &v| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        grads
    }

    /// Copies all parameters from `other`.
    pub fn copy_from(&mut self, other: &Mlp) -> Result<()> {
        if self.widths() != other.widths() {
            return Err(Error::ShapeMismatch(format!(
                "cannot copy {:?} into {:?}",
                other.widths(),
                self.widths()
            )));
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.assign(&src.weights);
            dst.bias.assign(&src.bias);
        }
        Ok(())
    }
}

fn affine(layer: &Dense, input: ArrayView2<f32>) -> Array2<f32> {
    let mut out = input.dot(&layer.weights);
    out += &layer.bias;
    out
}

/// Branch-free scan so the check vectorizes: `v − v` is NaN exactly when `v` is not finite.
fn all_finite(values: &[f32]) -> bool {
    let mut acc = [0.0f32; 16];
    let mut chunks = values.chunks_exact(16);
    for c in &mut chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += v - v;
        }
    }
    let tail: f32 = chunks.remainder().iter().map(|&v| v - v).sum();
    acc.iter().sum::<f32>() + tail == 0.0
}

fn relu(h: &mut Array2<f32>) {
    h.mapv_inplace(|v| v.max(0.0));
}

/// Subnormal moments are set to zero; decaying moments of idle units would
/// otherwise drift into the slow subnormal range.
#[inline]
fn flush(v: f32) -> f32 {
    if v.abs() < f32::MIN_POSITIVE {
        0.0
    } else {
        v
    }
}

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: i32,
    first: Vec<Dense>,
    second: Vec<Dense>,
}

impl Adam {
    /// Moment coefficients (0.9, 0.999) and epsilon 1e-8.
    pub fn new(net: &Mlp, learning_rate: f32) -> Self {
        let zeros: Vec<Dense> = net
            .layers
            .iter()
            .map(|l| Dense {
                weights: Array2::zeros(l.weights.raw_dim()),
                bias: Array1::zeros(l.bias.raw_dim()),
            })
            .collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies one bias-corrected update of `net` along `grads`.
    pub fn update(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.learning_rate;
        let apply = |p: &mut f32, g: f32, m: &mut f32, v: &mut f32| {
            *m = flush(b1 * *m + (1.0 - b1) * g);
            *v = flush(b2 * *v + (1.0 - b2) * g * g);
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.first[k], &mut self.second[k], &grads[k]);
            Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
            Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(net: &Mlp, x: &Array2<f32>, y: &Array2<f32>) -> f64 {
        let out = net.forward(x.view());
        out.iter()
            .zip(y)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / out.nrows() as f64
    }

    #[test]
    fn shapes_and_init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[2, 512, 256, 128, 2], &mut rng).unwrap();
        assert_eq!(net.widths(), vec![2, 512, 256, 128, 2]);
        assert_eq!(
            net.num_parameters(),
            2 * 512 + 512 + 512 * 256 + 256 + 256 * 128 + 128 + 128 * 2 + 2
        );
        let bound = 1.0 / (512f32).sqrt();
        assert!(net.layers[1].weights.iter().all(|w| w.abs() <= bound));
        let out = net.forward(array![[0.1, 0.5], [0.0, 1.0]].view());
        assert_eq!(out.dim(), (2, 2));
        assert!(Mlp::new(&[3], &mut rng).is_err());
    }

    #[test]
    fn cached_forward_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[1, 16, 8, 2], &mut rng).unwrap();
        let x = array![[0.2], [0.7], [-0.4]];
        let (out, inputs) = net.forward_cached(x.view());
        assert_eq!(out, net.forward(x.view()));
        assert_eq!(inputs.len(), 3);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[2, 6, 5, 2], &mut rng).unwrap();
        let x = array![[0.3, -0.2], [0.9, 0.4], [-0.5, 0.1]];
        let y = array![[1.0, 0.0], [0.5, -1.0], [0.0, 0.2]];
        let (out, inputs) = net.forward_cached(x.view());
        let grad_out = (&out - &y) * (2.0 / x.nrows() as f32);
        let grads = net.backward(&inputs, grad_out);
        let h = 1e-3f32;
        for (k, layer) in net.layers.iter().enumerate() {
            for idx in [
                (0, 0),
                (layer.weights.nrows() - 1, layer.weights.ncols() - 1),
            ] {
                let mut plus = net.clone();
                plus.layers[k].weights[idx] += h;
                let mut minus = net.clone();
                minus.layers[k].weights[idx] -= h;
                let fd = (loss(&plus, &x, &y) - loss(&minus, &x, &y)) / (2.0 * h as f64);
                assert!(
                    (fd - grads[k].weights[idx] as f64).abs() < 2e-3,
                    "layer {k} {idx:?}"
                );
            }
            let mut plus = net.clone();
            plus.layers[k].bias[0] += h;
            let mut minus = net.clone();
            minus.layers[k].bias[0] -= h;
            let fd = (loss(&plus, &x, &y) - loss(&minus, &x, &y)) / (2.0 * h as f64);
            assert!((fd - grads[k].bias[0] as f64).abs() < 2e-3);
        }
    }

    #[test]
    fn adam_reduces_a_regression_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[1, 32, 2], &mut rng).unwrap();
        let mut opt = Adam::new(&net, 1e-2);
        let x = array![[0.0], [0.5], [1.0]];
        let y = array![[1.0, -1.0], [0.0, 0.5], [2.0, 0.0]];
        let before = loss(&net, &x, &y);
        for _ in 0..500 {
            let (out, inputs) = net.forward_cached(x.view());
            let g = net.backward(&inputs, (&out - &y) * (2.0 / 3.0));
            opt.update(&mut net, &g);
        }
        assert!(loss(&net, &x, &y) < 0.05 * before);
        assert_eq!(opt.steps_taken(), 500);
        assert!(net.is_finite());
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Mlp::new(&[1, 4, 2], &mut rng).unwrap();
        let before = net.clone();
        let mut opt = Adam::new(&net, 1e-3);
        let x = array![[0.5]];
        let (_, inputs) = net.forward_cached(x.view());
        let g = net.backward(&inputs, Array2::zeros((1, 2)));
        opt.update(&mut net, &g);
        assert_eq!(net, before);
    }

    #[test]
    fn finiteness_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = Mlp::new(&[1, 40, 2], &mut rng).unwrap();
        assert!(net.is_finite());
        net.layers[0].weights[[0, 37]] = f32::INFINITY;
        assert!(!net.is_finite());
        net.layers[0].weights[[0, 37]] = 0.0;
        net.layers[1].bias[1] = f32::NAN;
        assert!(!net.is_finite());
    }

    #[test]
    fn copy_checks_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Mlp::new(&[1, 4, 2], &mut rng).unwrap();
        let mut b = Mlp::new(&[1, 4, 2], &mut rng).unwrap();
        let mut c = Mlp::new(&[1, 5, 2], &mut rng).unwrap();
        b.copy_from(&a).unwrap();
        assert_eq!(a, b);
        assert!(c.copy_from(&a).is_err());
    }
}
