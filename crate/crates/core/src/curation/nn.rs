//! Fully connected ReLU network with an explicit backward pass, plus Adam.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<S> {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Dense<S> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![S::zero(); inputs * outputs],
            bias: vec![S::zero(); outputs],
        }
    }

    fn affine(&self, x: &[S]) -> Vec<S> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }
}

/// ReLU on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<S> {
    pub layers: Vec<Dense<S>>,
}

/// Per-layer inputs and pre-activations recorded by [`Mlp::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace<S> {
    pub inputs: Vec<Vec<S>>,
    pub pre: Vec<Vec<S>>,
}

impl<S> Trace<S> {
    pub fn output(&self) -> &[S] {
        self.pre.last().expect("at least one layer")
    }
}

impl<S: Scalar> Mlp<S> {
    /// He-normal weights (`N(0, 2 / fan_in)`) and zero biases.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let std = (2.0 / w[0] as f64).sqrt();
                let mut d = Dense::zeros(w[0], w[1]);
                for v in &mut d.weights {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = S::of(z * std);
                }
                d
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weights.iter_mut().for_each(|w| *w = S::zero());
        last.bias.iter_mut().for_each(|b| *b = S::zero());
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        let mut a = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            a = layer.affine(&a);
            if i + 1 < self.layers.len() {
                a.iter_mut().for_each(|v| *v = v.max(S::zero()));
            }
        }
        a
    }

    pub fn forward_trace(&self, x: &[S]) -> Trace<S> {
        let mut trace = Trace {
            inputs: vec![],
            pre: vec![],
        };
        let mut a = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&a);
            trace.inputs.push(a);
            a = if i + 1 < self.layers.len() {
                z.iter().map(|v| v.max(S::zero())).collect()
            } else {
                z.clone()
            };
            trace.pre.push(z);
        }
        trace
    }

    /// Adds the gradient of `dout · output` to `grads`.
    pub fn backward(&self, trace: &Trace<S>, dout: &[S], grads: &mut Mlp<S>) {
        let mut delta = dout.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &trace.inputs[i];
            let g = &mut grads.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                if d == S::zero() {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(gw, &x)| *gw += d * x);
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![S::zero(); layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == S::zero() {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                prev.iter_mut().zip(row).for_each(|(p, &w)| *p += d * w);
            }
            // ReLU derivative, taken as 0 at the kink.
            for (p, &z) in prev.iter_mut().zip(&trace.pre[i - 1]) {
                if z <= S::zero() {
                    *p = S::zero();
                }
            }
            delta = prev;
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = &S> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn param_mut(&mut self, index: usize) -> &mut S {
        self.params_mut()
            .nth(index)
            .expect("parameter index in range")
    }

    pub fn scale(&mut self, k: S) {
        self.params_mut().for_each(|p| *p *= k);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    t: i32,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: S, params: usize) -> Self {
        Self {
            lr,
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
            t: 0,
            m: vec![S::zero(); params],
            v: vec![S::zero(); params],
        }
    }

    pub fn step(&mut self, net: &mut Mlp<S>, grads: &Mlp<S>) {
        self.t += 1;
        let c1 = S::one() - self.beta1.powi(self.t);
        let c2 = S::one() - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, &g), m), v) in net
            .params_mut()
            .zip(grads.params())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (S::one() - b1) * g;
            *v = b2 * *v + (S::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_matches_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net: Mlp<f64> = Mlp::new(&[4, 8, 3], &mut rng);
        let x = [0.1, -0.2, 0.3, 0.9];
        assert_eq!(net.forward(&x), net.forward_trace(&x).output());
        assert_eq!(net.param_count(), 4 * 8 + 8 + 8 * 3 + 3);
    }

    #[test]
    fn backward_matches_finite_difference_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net: Mlp<f64> = Mlp::new(&[3, 5, 4, 2], &mut rng);
        let x = [0.7, -0.4, 0.2];
        let w = [0.3, -1.1];
        let f = |n: &Mlp<f64>| {
            n.forward(&x)
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let mut grads = net.zeros_like();
        net.backward(&net.forward_trace(&x), &w, &mut grads);
        let analytic: Vec<f64> = grads.params().copied().collect();
        for (i, &a) in analytic.iter().enumerate() {
            let h = 1e-6;
            let orig = *net.param_mut(i);
            *net.param_mut(i) = orig + h;
            let up = f(&net);
            *net.param_mut(i) = orig - h;
            let down = f(&net);
            *net.param_mut(i) = orig;
            let numeric = (up - down) / (2.0 * h);
            assert!(
                (a - numeric).abs() <= 1e-6 * (1.0 + a.abs()),
                "param {i}: {a} vs {numeric}"
            );
        }
    }

    #[test]
    fn adam_decreases_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net: Mlp<f32> = Mlp::new(&[2, 1], &mut rng);
        let mut opt = Adam::new(0.05f32, net.param_count());
        let x = [1.0f32, 2.0];
        let loss = |n: &Mlp<f32>| (n.forward(&x)[0] - 3.0).powi(2);
        let start = loss(&net);
        for _ in 0..200 {
            let tr = net.forward_trace(&x);
            let d = 2.0 * (tr.output()[0] - 3.0);
            let mut g = net.zeros_like();
            net.backward(&tr, &[d], &mut g);
            opt.step(&mut net, &g);
        }
        assert!(loss(&net) < start * 1e-3);
    }
}
