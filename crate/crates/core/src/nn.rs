//! Small feed-forward networks with analytic gradients.
//!
//! Parameters live in one flat vector, layer by layer: the row-major weight
//! matrix (`fan_out x fan_in`) followed by the bias vector. Gradients use the
//! same layout, which keeps the optimizer a plain elementwise loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::FORMAT_VERSION;
use crate::error::{Error, Result};

/// Default hidden widths shared by every policy, discriminator and reward net.
pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Identity,
    LogSoftmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Layer>,
    params: Vec<f64>,
    head: Head,
}

/// Gradient accumulator shaped like the parameters of one [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    widths: Vec<usize>,
    pub values: Vec<f64>,
}

impl GradBuffer {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            widths: net.widths.clone(),
            values: vec![0.0; net.params.len()],
        }
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }
}

fn layout(widths: &[usize]) -> (Vec<Layer>, usize) {
    let mut layers = Vec::with_capacity(widths.len().saturating_sub(1));
    let mut offset = 0;
    for pair in widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w = offset;
        let b = w + fan_in * fan_out;
        offset = b + fan_out;
        layers.push(Layer {
            fan_in,
            fan_out,
            w,
            b,
        });
    }
    (layers, offset)
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn log_softmax_in_place(xs: &mut [f64]) {
    let lse = log_sum_exp(xs);
    xs.iter_mut().for_each(|x| *x -= lse);
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], head: Head, rng: &mut R) -> Self {
        let mut net = Self::zeros(widths, head);
        for layer in net.layers.clone() {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for p in &mut net.params[layer.w..layer.b] {
                *p = rng.gen_range(-limit..=limit);
            }
        }
        net
    }

    pub fn zeros(widths: &[usize], head: Head) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        assert!(widths.iter().all(|&w| w > 0), "layer widths must be positive");
        let (layers, count) = layout(widths);
        Self {
            widths: widths.to_vec(),
            layers,
            params: vec![0.0; count],
            head,
        }
    }

    /// `[input, hidden..., output]` with the default hidden widths.
    pub fn default_widths(input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend_from_slice(&DEFAULT_HIDDEN);
        w.push(output);
        w
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "network input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    fn affine(&self, layer: &Layer, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &self.params[layer.w..layer.b];
        let b = &self.params[layer.b..layer.b + layer.fan_out];
        for (row, bias) in w.chunks_exact(layer.fan_in).zip(b) {
            let dot: f64 = row.iter().zip(input).map(|(a, x)| a * x).sum();
            out.push(dot + bias);
        }
    }

    /// Hidden activations for every layer, input first; the last entry is the
    /// pre-head output.
    fn trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.fan_out);
            self.affine(layer, &acts[i], &mut z);
            if i < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut out = self.trace(input).pop().unwrap();
        if self.head == Head::LogSoftmax {
            log_softmax_in_place(&mut out);
        }
        Ok(out)
    }

    /// Accumulates into `grads` the gradient of a scalar loss whose gradient
    /// with respect to this network's output is `output_grad`. Returns the
    /// network output for convenience.
    pub fn backward_into(
        &self,
        input: &[f64],
        output_grad: &[f64],
        grads: &mut GradBuffer,
    ) -> Result<Vec<f64>> {
        self.check_input(input)?;
        if output_grad.len() != self.output_dim() {
            return Err(Error::Dimension {
                what: "output gradient",
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        if grads.values.len() != self.params.len() || grads.widths != self.widths {
            return Err(Error::Dimension {
                what: "gradient buffer",
                expected: self.params.len(),
                got: grads.values.len(),
            });
        }
        let mut acts = self.trace(input);
        let mut delta = output_grad.to_vec();
        let mut output = acts.last().unwrap().clone();
        if self.head == Head::LogSoftmax {
            log_softmax_in_place(&mut output);
            let total: f64 = output_grad.iter().sum();
            for (d, lp) in delta.iter_mut().zip(&output) {
                *d -= lp.exp() * total;
            }
        }
        acts.pop();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let h = &acts[i];
            let gw = &mut grads.values[layer.w..layer.b];
            for (row, d) in gw.chunks_exact_mut(layer.fan_in).zip(&delta) {
                for (g, x) in row.iter_mut().zip(h) {
                    *g += d * x;
                }
            }
            for (g, d) in grads.values[layer.b..layer.b + layer.fan_out]
                .iter_mut()
                .zip(&delta)
            {
                *g += d;
            }
            if i > 0 {
                let w = &self.params[layer.w..layer.b];
                let mut prev = vec![0.0; layer.fan_in];
                for (row, d) in w.chunks_exact(layer.fan_in).zip(&delta) {
                    for (p, a) in prev.iter_mut().zip(row) {
                        *p += a * d;
                    }
                }
                for (p, a) in prev.iter_mut().zip(h) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        Ok(output)
    }

    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<GradBuffer> {
        let mut grads = GradBuffer::zeros_like(self);
        self.backward_into(input, output_grad, &mut grads)?;
        Ok(grads)
    }

    pub fn to_record(&self) -> MlpRecord {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            weights.push(self.params[layer.w..layer.b].to_vec());
            biases.push(self.params[layer.b..layer.b + layer.fan_out].to_vec());
        }
        MlpRecord {
            v: FORMAT_VERSION,
            widths: self.widths.clone(),
            weights,
            biases,
        }
    }

    pub fn from_record(record: &MlpRecord, head: Head) -> Result<Self> {
        if record.v != FORMAT_VERSION {
            return Err(Error::InvalidModel(format!(
                "checkpoint version {} unsupported",
                record.v
            )));
        }
        if record.widths.len() < 2 || record.widths.contains(&0) {
            return Err(Error::InvalidModel("checkpoint widths invalid".into()));
        }
        let mut net = Self::zeros(&record.widths, head);
        if record.weights.len() != net.layers.len() || record.biases.len() != net.layers.len() {
            return Err(Error::InvalidModel("checkpoint layer count mismatch".into()));
        }
        for (layer, (w, b)) in net
            .layers
            .clone()
            .iter()
            .zip(record.weights.iter().zip(&record.biases))
        {
            if w.len() != layer.fan_in * layer.fan_out || b.len() != layer.fan_out {
                return Err(Error::InvalidModel("checkpoint layer shape mismatch".into()));
            }
            net.params[layer.w..layer.b].copy_from_slice(w);
            net.params[layer.b..layer.b + layer.fan_out].copy_from_slice(b);
        }
        Ok(net)
    }
}

/// On-disk form of an [`Mlp`]: `{"v":1,"widths":[..],"weights":[[..]],"biases":[[..]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpRecord {
    pub v: u64,
    pub widths: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::SeedStream;
    use rand::Rng;

    /// Central finite differences of `loss(net)` in every listed coordinate.
    fn numeric_grad(net: &Mlp, coords: &[usize], loss: impl Fn(&Mlp) -> f64) -> Vec<f64> {
        let h = 1e-5;
        coords
            .iter()
            .map(|&i| {
                let mut plus = net.clone();
                plus.params[i] += h;
                let mut minus = net.clone();
                minus.params[i] -= h;
                (loss(&plus) - loss(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn check_gradients(widths: &[usize], head: Head, seed: u64) {
        let mut rng = SeedStream::new(seed).rng();
        let net = Mlp::new(widths, head, &mut rng);
        let input: Vec<f64> = (0..widths[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..net.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Scalar loss L = sum_j c_j * out_j, so dL/dout = c.
        let loss = |n: &Mlp| -> f64 {
            n.forward(&input)
                .unwrap()
                .iter()
                .zip(&weights)
                .map(|(o, c)| o * c)
                .sum()
        };
        let grads = net.backward(&input, &weights).unwrap();
        let coords: Vec<usize> = (0..100).map(|_| rng.gen_range(0..net.param_count())).collect();
        let numeric = numeric_grad(&net, &coords, loss);
        for (&i, num) in coords.iter().zip(numeric) {
            let ana = grads.values[i];
            let scale = ana.abs().max(num.abs()).max(1e-6);
            assert!(
                (ana - num).abs() / scale < 1e-4 || (ana - num).abs() < 1e-9,
                "coord {i}: analytic {ana} vs numeric {num} for widths {widths:?}"
            );
        }
    }

    #[test]
    fn gradient_check_all_shapes_in_use() {
        // Policy, discriminator and reward-net shapes used by the algorithms.
        let shapes: &[(&[usize], Head)] = &[
            (&[25, 32, 32, 4], Head::LogSoftmax),
            (&[24, 32, 32, 4], Head::LogSoftmax),
            (&[2, 32, 32, 3], Head::LogSoftmax),
            (&[29, 32, 32, 1], Head::Identity),
            (&[28, 32, 32, 1], Head::Identity),
            (&[5, 32, 32, 1], Head::Identity),
            (&[25, 32, 32, 1], Head::Identity),
            (&[1, 32, 32, 2], Head::LogSoftmax),
            (&[3, 1], Head::Identity),
        ];
        for (i, (w, h)) in shapes.iter().enumerate() {
            check_gradients(w, *h, i as u64);
        }
    }

    #[test]
    fn zero_weights_log_softmax_is_uniform() {
        let net = Mlp::zeros(&[3, 8, 4], Head::LogSoftmax);
        for v in net.forward(&[1.0, -2.0, 0.5]).unwrap() {
            assert!((v - 0.25f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn no_hidden_layer_is_affine() {
        let mut net = Mlp::zeros(&[2, 2], Head::Identity);
        // W = [[1, 2], [3, 4]], b = [0.5, -0.5]
        net.params_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 0.5, -0.5]);
        assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), vec![3.5, 6.5]);
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut rng = SeedStream::new(3).rng();
        let net = Mlp::new(&[5, 32, 32, 6], Head::LogSoftmax, &mut rng);
        let out = net.forward(&[0.3, -0.1, 2.0, 0.0, 1.0]).unwrap();
        let total: f64 = out.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_is_stable_for_large_inputs() {
        let mut net = Mlp::zeros(&[2, 3], Head::LogSoftmax);
        net.params_mut()[..6].copy_from_slice(&[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        let out = net.forward(&[1e3, -1e3]).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn linear_gradient() {
        let mut net = Mlp::zeros(&[1, 1], Head::Identity);
        net.params_mut()[0] = 0.7;
        let g = net.backward(&[3.0], &[1.0]).unwrap();
        assert_eq!(g.values[0], 3.0);
    }

    #[test]
    fn tanh_gradient_closed_form() {
        // f(w) = tanh(w x) realized as a 1-1-1 net whose output layer is fixed to
        // the identity; d f / d w = x (1 - tanh^2(w x)).
        let mut net = Mlp::zeros(&[1, 1, 1], Head::Identity);
        net.params_mut().copy_from_slice(&[0.5, 0.0, 1.0, 0.0]);
        let g = net.backward(&[1.0], &[1.0]).unwrap();
        let expected = 1.0 - 0.5f64.tanh().powi(2);
        assert!((g.values[0] - expected).abs() < 1e-15);
        assert!((net.forward(&[1.0]).unwrap()[0] - 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn dimension_errors() {
        let net = Mlp::zeros(&[3, 2], Head::Identity);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(
            net.backward(&[1.0, 2.0, 3.0], &[1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn parameter_count_formula() {
        let net = Mlp::zeros(&[25, 32, 32, 4], Head::LogSoftmax);
        assert_eq!(net.param_count(), 25 * 32 + 32 + 32 * 32 + 32 + 32 * 4 + 4);
    }

    #[test]
    fn record_round_trip() {
        let mut rng = SeedStream::new(9).rng();
        let net = Mlp::new(&[4, 32, 32, 3], Head::LogSoftmax, &mut rng);
        let text = serde_json::to_string(&net.to_record()).unwrap();
        let rec: MlpRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(Mlp::from_record(&rec, Head::LogSoftmax).unwrap(), net);
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(-20.0) - 2.061153620314381e-9).abs() < 1e-20);
        assert!((softplus(5.0) - 5.006715348489118).abs() < 1e-12);
        for z in [-500.0, -50.0, 0.0, 50.0, 500.0] {
            assert!(softplus(z).is_finite());
            assert!((0.0..=1.0).contains(&sigmoid(z)));
        }
    }
}
