use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Layers applied in order. Activations flow as `[batch, features]` tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sequential {
    layers: Vec<Layer>,
    /// Changes whenever weights may have changed; caches from older versions are rejected.
    #[serde(skip, default = "fresh_version")]
    version: u64,
}

impl PartialEq for Sequential {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations recorded by [`Sequential::forward_train`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    batch: usize,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

/// Per-layer `(weight, bias)` gradients in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Sequential) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }
}

impl Sequential {
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let layers = specs
            .iter()
            .map(|&s| Layer::init(s, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for l in &layers {
            l.check_sizes()?;
        }
        for pair in layers.windows(2) {
            if pair[0].spec.output_len() != pair[1].spec.input_len() {
                return Err(Error::dim(
                    pair[1].spec.input_len(),
                    pair[0].spec.output_len(),
                    format!("layer chain {:?} -> {:?}", pair[0].spec.kind, pair[1].spec.kind),
                ));
            }
        }
        Ok(Sequential {
            layers,
            version: fresh_version(),
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].spec.input_len()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("non-empty").spec.output_len()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Mutable views of every weight and bias array, matching [`Gradients::slices`] order.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.version = fresh_version();
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() < 2 || input.sample_len() != self.input_len() {
            return Err(Error::dim(self.input_len(), input.sample_len(), "network input"));
        }
        Ok(())
    }

    /// Inference without recording activations.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let batch = input.batch();
        let mut x = input.data().to_vec();
        for layer in &self.layers {
            let mut y = layer.affine(&x, batch);
            let act = layer.spec.activation;
            y.iter_mut().for_each(|v| *v = act.apply(*v));
            x = y;
        }
        Tensor::new(vec![batch, self.output_len()], x)
    }

    pub fn forward_train(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(input)?;
        let batch = input.batch();
        let n = self.layers.len();
        let mut cache = ForwardCache {
            version: self.version,
            batch,
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut x = input.data().to_vec();
        for layer in &self.layers {
            let pre = layer.affine(&x, batch);
            let act = layer.spec.activation;
            let y: Vec<f64> = pre.iter().map(|&v| act.apply(v)).collect();
            cache.inputs.push(std::mem::replace(&mut x, y.clone()));
            cache.pre.push(pre);
            cache.outputs.push(y);
        }
        Ok((Tensor::new(vec![batch, self.output_len()], x)?, cache))
    }

    /// Gradients of a scalar loss given `upstream` = dLoss/dOutput.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Tensor) -> Result<(Gradients, Tensor)> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        if upstream.batch() != cache.batch || upstream.sample_len() != self.output_len() {
            return Err(Error::dim(
                cache.batch * self.output_len(),
                upstream.data().len(),
                "upstream gradient",
            ));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut g = upstream.data().to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.spec.activation;
            for ((gv, &x), &y) in g.iter_mut().zip(&cache.pre[idx]).zip(&cache.outputs[idx]) {
                *gv *= act.derivative(x, y);
            }
            let (dw, db) = &mut grads.layers[idx];
            g = layer.affine_backward(&cache.inputs[idx], &g, cache.batch, dw, db);
        }
        let input_grad = Tensor::new(vec![cache.batch, self.input_len()], g)?;
        Ok((grads, input_grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::{Activation, LayerKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_dense() {
        let layer = Layer {
            spec: LayerSpec::dense(3, 3, Activation::Linear),
            weights: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            bias: vec![0.0; 3],
        };
        let net = Sequential::from_layers(vec![layer]).unwrap();
        let x = Tensor::from_vec(vec![0.5, -2.0, 7.0]);
        assert_eq!(net.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn delta_kernel_conv_is_identity() {
        let layer = Layer {
            spec: LayerSpec::conv(1, 1, 6, Activation::Linear),
            weights: vec![0.0, 1.0, 0.0],
            bias: vec![0.0],
        };
        let net = Sequential::from_layers(vec![layer]).unwrap();
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, -4.0, 5.0, 6.5]);
        assert_eq!(net.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn tanh_of_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Sequential::new(&[LayerSpec::dense(4, 4, Activation::Tanh)], &mut rng).unwrap();
        for p in net.params_mut() {
            p.fill(0.0);
        }
        let y = net.forward(&Tensor::from_vec(vec![0.0; 4])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_keeps_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Sequential::new(
            &[
                LayerSpec::conv(1, 5, 52, Activation::Tanh),
                LayerSpec::conv(5, 10, 52, Activation::Tanh),
                LayerSpec::flatten(10, 52),
            ],
            &mut rng,
        )
        .unwrap();
        assert_eq!(net.output_len(), 520);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Sequential::new(&[LayerSpec::dense(4, 2, Activation::Tanh)], &mut rng).unwrap();
        assert!(net.forward(&Tensor::from_vec(vec![0.0; 3])).is_err());
        let bad = Sequential::new(
            &[
                LayerSpec::dense(4, 2, Activation::Tanh),
                LayerSpec::dense(3, 1, Activation::Tanh),
            ],
            &mut rng,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn closed_form_dense_mse_gradient() {
        // L = ||Wx - y||^2 => dL/dW = 2 (Wx - y) x^T
        let layer = Layer {
            spec: LayerSpec::dense(2, 2, Activation::Linear),
            weights: vec![1.0, 2.0, -1.0, 0.5],
            bias: vec![0.0, 0.0],
        };
        let net = Sequential::from_layers(vec![layer]).unwrap();
        let x = [3.0, -1.0];
        let y = [0.5, 2.0];
        let (out, cache) = net.forward_train(&Tensor::from_vec(x.to_vec())).unwrap();
        let r: Vec<f64> = out.data().iter().zip(&y).map(|(o, t)| o - t).collect();
        let up = Tensor::from_vec(r.iter().map(|v| 2.0 * v).collect());
        let (g, _) = net.backward(&cache, &up).unwrap();
        let expected = [2.0 * r[0] * x[0], 2.0 * r[0] * x[1], 2.0 * r[1] * x[0], 2.0 * r[1] * x[1]];
        assert_eq!(g.layers[0].0, expected);
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Sequential::new(
            &[
                LayerSpec::conv(1, 2, 4, Activation::Tanh),
                LayerSpec::flatten(2, 4),
                LayerSpec::dense(8, 3, Activation::Softplus),
            ],
            &mut rng,
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![1.0, -1.0, 0.0, 2.0]]).unwrap();
        let (_, cache) = net.forward_train(&x).unwrap();
        let (g, dx) = net.backward(&cache, &Tensor::zeros(vec![2, 3])).unwrap();
        assert!(g.is_zero());
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Sequential::new(&[LayerSpec::dense(2, 1, Activation::Tanh)], &mut rng).unwrap();
        let (_, cache) = net.forward_train(&Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        net.params_mut()[0][0] += 1.0;
        assert!(matches!(
            net.backward(&cache, &Tensor::from_vec(vec![1.0])),
            Err(Error::StaleCache)
        ));
    }

    #[test]
    fn spec_serde_shape() {
        let s = LayerSpec::conv_transpose(20, 10, 19, Activation::Tanh);
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"kind\":\"conv1d_transpose\""));
        let back: LayerSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(matches!(back.kind, LayerKind::Conv1dTranspose { .. }));
    }
}
