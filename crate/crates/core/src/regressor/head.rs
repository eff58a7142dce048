//! Fully connected regression head with batch normalisation, its gradients,
//! and the Adam optimiser.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, x: &mut Array2<f64>) {
        if self == Activation::Relu {
            x.mapv_inplace(|v| v.max(0.0));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// (inputs, outputs)
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((inputs, outputs), |_| rng.gen_range(-bound..bound)),
            bias: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub moving_mean: Array1<f64>,
    pub moving_var: Array1<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            moving_mean: Array1::zeros(width),
            moving_var: Array1::ones(width),
            momentum: 0.99,
            epsilon: 1e-3,
        }
    }

    fn infer(&self, z: &mut Array2<f64>) {
        let scale = &self.gamma / &self.moving_var.mapv(|v| (v + self.epsilon).sqrt());
        let shift = &self.beta - &(&self.moving_mean * &scale);
        *z *= &scale;
        *z += &shift;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: Option<BatchNorm>,
    pub activation: Activation,
}

/// Dense → batch norm → activation, repeated, then a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
}

struct LayerCache {
    input: Array2<f64>,
    xhat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    /// Activation input (after normalisation).
    pre_act: Array2<f64>,
}

/// Activations kept from a training-mode forward pass.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    last: Array2<f64>,
}

impl Head {
    pub fn new(
        inputs: usize,
        widths: &[usize],
        outputs: usize,
        batch_norm: bool,
        activation: Activation,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = inputs;
        let hidden = widths
            .iter()
            .map(|&w| {
                let layer = HiddenLayer {
                    dense: Dense::glorot(fan_in, w, &mut rng),
                    norm: batch_norm.then(|| BatchNorm::new(w)),
                    activation,
                };
                fan_in = w;
                layer
            })
            .collect();
        Self {
            hidden,
            output: Dense::glorot(fan_in, outputs, &mut rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.output.weight.nrows(), |l| l.dense.weight.nrows())
    }

    pub fn output_dim(&self) -> usize {
        self.output.weight.ncols()
    }

    /// Inference: batch norm uses moving statistics, rows are independent.
    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut a = x.clone();
        for layer in &self.hidden {
            let mut z = layer.dense.forward(&a);
            if let Some(bn) = &layer.norm {
                bn.infer(&mut z);
            }
            layer.activation.apply(&mut z);
            a = z;
        }
        self.output.forward(&a)
    }

    /// Training-mode forward pass; normalises with batch statistics and
    /// updates the moving averages.
    pub fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let n = x.nrows() as f64;
        let mut a = x.clone();
        let mut layers = Vec::with_capacity(self.hidden.len());
        for layer in &mut self.hidden {
            let mut z = layer.dense.forward(&a);
            let (mut xhat, mut inv_std) = (None, None);
            if let Some(bn) = &mut layer.norm {
                let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                let centered = &z - &mean;
                let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
                let inv = var.mapv(|v| 1.0 / (v + bn.epsilon).sqrt());
                let normed = &centered * &inv;
                z = &normed * &bn.gamma + &bn.beta;
                let m = bn.momentum;
                bn.moving_mean = &bn.moving_mean * m + &mean * (1.0 - m);
                bn.moving_var = &bn.moving_var * m + &var * (1.0 - m);
                xhat = Some(normed);
                inv_std = Some(inv);
            }
            let pre_act = z.clone();
            layer.activation.apply(&mut z);
            layers.push(LayerCache { input: a, xhat, inv_std, pre_act });
            a = z;
        }
        let out = self.output.forward(&a);
        (out, ForwardCache { layers, last: a })
    }

    /// Gradients of the loss with respect to every trainable tensor, in
    /// [`Head::trainable_mut`] order, given `d_out` = dLoss/dOutput.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Vec<Array1<f64>> {
        let mut grads: Vec<Array1<f64>> = Vec::new();
        let flat = |a: Array2<f64>| Array1::from_iter(a.into_iter());

        let mut tail = vec![
            flat(cache.last.t().dot(d_out)),
            d_out.sum_axis(Axis(0)),
        ];
        let mut d_a = d_out.dot(&self.output.weight.t());

        for (i, (layer, lc)) in self.hidden.iter().zip(&cache.layers).enumerate().rev() {
            let mut d_z = d_a;
            if layer.activation == Activation::Relu {
                d_z.zip_mut_with(&lc.pre_act, |d, &p| {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let mut layer_grads = Vec::new();
            if let (Some(bn), Some(xhat), Some(inv_std)) = (&layer.norm, &lc.xhat, &lc.inv_std) {
                let n = d_z.nrows() as f64;
                let d_gamma = (&d_z * xhat).sum_axis(Axis(0));
                let d_beta = d_z.sum_axis(Axis(0));
                let d_xhat = &d_z * &bn.gamma;
                let sum_dx = d_xhat.sum_axis(Axis(0));
                let sum_dx_xhat = (&d_xhat * xhat).sum_axis(Axis(0));
                let inner = &d_xhat * n - &sum_dx - &(xhat * &sum_dx_xhat);
                d_z = inner * &(inv_std / n);
                layer_grads.push(d_gamma);
                layer_grads.push(d_beta);
            }
            let d_w = flat(lc.input.t().dot(&d_z));
            let d_b = d_z.sum_axis(Axis(0));
            if i > 0 {
                // the input gradient of the first layer is never needed
                d_a = d_z.dot(&layer.dense.weight.t());
            } else {
                d_a = Array2::zeros((0, 0));
            }
            let mut g = vec![d_w, d_b];
            g.extend(layer_grads);
            grads.splice(0..0, g);
        }
        grads.append(&mut tail);
        grads
    }

    /// Mutable views of the trainable tensors: per hidden layer dense weight,
    /// dense bias, [gamma, beta]; then output weight and bias.
    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.hidden {
            out.push(layer.dense.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.dense.bias.as_slice_mut().expect("standard layout"));
            if let Some(bn) = &mut layer.norm {
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.output.weight.as_slice_mut().expect("standard layout"));
        out.push(self.output.bias.as_slice_mut().expect("standard layout"));
        out
    }

    /// Every tensor (trainable and moving statistics) by name.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (i, layer) in self.hidden.iter().enumerate() {
            let d = &layer.dense;
            out.push((format!("head.dense{i}.weight"), d.weight.shape().to_vec(), d.weight.as_slice().unwrap()));
            out.push((format!("head.dense{i}.bias"), d.bias.shape().to_vec(), d.bias.as_slice().unwrap()));
            if let Some(bn) = &layer.norm {
                for (name, t) in [
                    ("gamma", &bn.gamma),
                    ("beta", &bn.beta),
                    ("moving_mean", &bn.moving_mean),
                    ("moving_var", &bn.moving_var),
                ] {
                    out.push((format!("head.bn{i}.{name}"), t.shape().to_vec(), t.as_slice().unwrap()));
                }
            }
        }
        let o = &self.output;
        out.push(("head.output.weight".into(), o.weight.shape().to_vec(), o.weight.as_slice().unwrap()));
        out.push(("head.output.bias".into(), o.bias.shape().to_vec(), o.bias.as_slice().unwrap()));
        out
    }

    /// Names of the trainable tensors, aligned with [`Head::trainable_mut`].
    pub fn trainable_names(&self) -> Vec<String> {
        self.named_tensors()
            .into_iter()
            .map(|(n, _, _)| n)
            .filter(|n| !n.ends_with("moving_mean") && !n.ends_with("moving_var"))
            .collect()
    }

    fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        match name {
            "head.output.weight" => return self.output.weight.as_slice_mut(),
            "head.output.bias" => return self.output.bias.as_slice_mut(),
            _ => {}
        }
        let (layer, field) = name.strip_prefix("head.")?.split_once('.')?;
        if let Some(i) = layer.strip_prefix("dense") {
            let l = self.hidden.get_mut(i.parse::<usize>().ok()?)?;
            return match field {
                "weight" => l.dense.weight.as_slice_mut(),
                "bias" => l.dense.bias.as_slice_mut(),
                _ => None,
            };
        }
        let i = layer.strip_prefix("bn")?.parse::<usize>().ok()?;
        let bn = self.hidden.get_mut(i)?.norm.as_mut()?;
        match field {
            "gamma" => bn.gamma.as_slice_mut(),
            "beta" => bn.beta.as_slice_mut(),
            "moving_mean" => bn.moving_mean.as_slice_mut(),
            "moving_var" => bn.moving_var.as_slice_mut(),
            _ => None,
        }
    }

    /// Overwrites a tensor by name; used when loading checkpoints.
    pub fn set_tensor(&mut self, name: &str, data: &[f64]) -> bool {
        match self.tensor_mut(name) {
            Some(t) if t.len() == data.len() => {
                t.copy_from_slice(data);
                true
            }
            _ => false,
        }
    }
}

/// Mean absolute error over every element and the matching gradient
/// `sign(pred - target) / len`.
pub fn mae_loss(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let len = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d.abs()).sum::<f64>() / len;
    let grad = diff.mapv(|d| {
        if d > 0.0 {
            1.0 / len
        } else if d < 0.0 {
            -1.0 / len
        } else {
            0.0
        }
    });
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: AdamParams) -> Self {
        Self { params, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, tensors: Vec<&mut [f64]>, grads: &[Array1<f64>]) {
        assert_eq!(tensors.len(), grads.len(), "gradient list does not match parameters");
        if self.m.is_empty() {
            self.m = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamParams { learning_rate, beta1, beta2, epsilon } = self.params;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (k, (t, g)) in tensors.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (p, &gi)) in t.iter_mut().zip(g.iter()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                *p -= learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth_loss(head: &mut Head, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
        // A smooth loss (weighted sum of outputs) keeps finite differences well-behaved.
        let (out, _) = head.clone().forward_train(x);
        (&out * w).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((5, 6), |_| rng.gen_range(-1.0..1.0));
        let w = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        for act in [Activation::Relu, Activation::Linear] {
            let mut head = Head::new(6, &[7, 4], 3, true, act, 2);
            let (_, cache) = head.clone().forward_train(&x);
            let grads = head.backward(&cache, &w);
            let n_tensors = head.trainable_mut().len();
            for k in 0..n_tensors {
                let len = head.trainable_mut()[k].len();
                for i in (0..len).step_by(3) {
                    let h = 1e-6;
                    let orig = head.trainable_mut()[k][i];
                    head.trainable_mut()[k][i] = orig + h;
                    let up = smooth_loss(&mut head, &x, &w);
                    head.trainable_mut()[k][i] = orig - h;
                    let down = smooth_loss(&mut head, &x, &w);
                    head.trainable_mut()[k][i] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let analytic = grads[k][i];
                    assert!(
                        (numeric - analytic).abs() < 1e-5 * (1.0 + numeric.abs()),
                        "{act:?} tensor {k} index {i}: {numeric} vs {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn mae_loss_and_gradient() {
        let p = Array2::from_shape_vec((1, 2), vec![1.0, 2.0]).unwrap();
        let t = Array2::from_shape_vec((1, 2), vec![3.0, 2.0]).unwrap();
        let (l, g) = mae_loss(&p, &t);
        assert_eq!(l, 1.0);
        assert_eq!(g.as_slice().unwrap(), &[-0.5, 0.0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut a = Adam::new(AdamParams { learning_rate: 0.1, beta1: 0.9, beta2: 0.999, epsilon: 1e-12 });
        let mut p = vec![1.0, 1.0];
        a.update(vec![&mut p[..]], &[Array1::from(vec![3.0, -0.5])]);
        assert!((p[0] - 0.9).abs() < 1e-9 && (p[1] - 1.1).abs() < 1e-9);
    }

    #[test]
    fn inference_rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = Head::new(5, &[8, 4], 2, true, Activation::Relu, 1);
        let x = Array2::from_shape_fn((6, 5), |_| rng.gen_range(-1.0..1.0));
        let all = head.predict(&x);
        let one = head.predict(&x.slice(ndarray::s![2..3, ..]).to_owned());
        assert_eq!(all.row(2), one.row(0));
    }

    #[test]
    fn set_tensor_by_name() {
        let mut head = Head::new(3, &[4], 2, true, Activation::Relu, 1);
        assert!(head.set_tensor("head.bn0.moving_var", &[2.0; 4]));
        assert_eq!(head.hidden[0].norm.as_ref().unwrap().moving_var.to_vec(), vec![2.0; 4]);
        assert!(!head.set_tensor("head.bn0.moving_var", &[2.0; 3]));
        assert!(!head.set_tensor("head.bogus", &[]));
        assert_eq!(head.trainable_names().len(), head.trainable_mut().len());
    }
}
