use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Softplus,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
            Activation::Linear => x,
        }
    }

    /// Derivative given pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => sigmoid(x),
            Activation::Linear => 1.0,
        }
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        length: usize,
    },
    Conv1dTranspose {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        length: usize,
    },
    /// Reinterprets `(channels, length)` samples as flat vectors and back; no arithmetic.
    Flatten { channels: usize, length: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { inputs, outputs },
            activation,
        }
    }

    /// Length-preserving convolution, kernel 3, padding 1.
    pub fn conv(in_channels: usize, out_channels: usize, length: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel: 3,
                stride: 1,
                padding: 1,
                length,
            },
            activation,
        }
    }

    pub fn conv_transpose(
        in_channels: usize,
        out_channels: usize,
        length: usize,
        activation: Activation,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::Conv1dTranspose {
                in_channels,
                out_channels,
                kernel: 3,
                stride: 1,
                padding: 1,
                length,
            },
            activation,
        }
    }

    pub fn flatten(channels: usize, length: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Flatten { channels, length },
            activation: Activation::Linear,
        }
    }

    pub fn input_len(&self) -> usize {
        match self.kind {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv1d { in_channels, length, .. }
            | LayerKind::Conv1dTranspose { in_channels, length, .. } => in_channels * length,
            LayerKind::Flatten { channels, length } => channels * length,
        }
    }

    pub fn output_len(&self) -> usize {
        match self.kind {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv1d { out_channels, length, .. }
            | LayerKind::Conv1dTranspose { out_channels, length, .. } => out_channels * length,
            LayerKind::Flatten { channels, length } => channels * length,
        }
    }

    pub fn weight_count(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Dense { inputs, outputs } => (inputs * outputs, outputs),
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | LayerKind::Conv1dTranspose {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * out_channels * kernel, out_channels),
            LayerKind::Flatten { .. } => (0, 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LayerKind::Conv1d {
                kernel,
                stride,
                padding,
                length,
                ..
            }
            | LayerKind::Conv1dTranspose {
                kernel,
                stride,
                padding,
                length,
                ..
            } => {
                if stride != 1 {
                    return Err(Error::InvalidArgument("convolution stride must be 1".into()));
                }
                if kernel == 0 || kernel != 2 * padding + 1 {
                    return Err(Error::InvalidArgument(
                        "convolution must preserve length (kernel = 2*padding + 1)".into(),
                    ));
                }
                if length == 0 {
                    return Err(Error::InvalidArgument("convolution length must be positive".into()));
                }
            }
            LayerKind::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::InvalidArgument("dense layer sizes must be positive".into()));
                }
            }
            LayerKind::Flatten { .. } => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    /// Dense: `[outputs, inputs]`; conv: `[out, in, k]`; transposed conv: `[in, out, k]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (nw, nb) = spec.weight_count();
        let (fan_in, fan_out) = match spec.kind {
            LayerKind::Dense { inputs, outputs } => (inputs, outputs),
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | LayerKind::Conv1dTranspose {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel, out_channels * kernel),
            LayerKind::Flatten { .. } => (1, 1),
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = (0..nw).map(|_| rng.random_range(-limit..limit)).collect();
        Ok(Layer {
            spec,
            weights,
            bias: vec![0.0; nb],
        })
    }

    pub(crate) fn check_sizes(&self) -> Result<()> {
        self.spec.validate()?;
        let (nw, nb) = self.spec.weight_count();
        if self.weights.len() != nw || self.bias.len() != nb {
            return Err(Error::Format(format!(
                "layer {:?}: expected {nw}+{nb} weights, found {}+{}",
                self.spec.kind,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    /// Affine part for a batch (`x`: `[batch, input_len]`, row-major).
    pub(crate) fn affine(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let n_out = self.spec.output_len();
        let mut y = vec![0.0; batch * n_out];
        match self.spec.kind {
            LayerKind::Dense { inputs, outputs } => {
                for row in y.chunks_mut(outputs) {
                    row.copy_from_slice(&self.bias);
                }
                // y[b, o] += sum_i x[b, i] * w[o, i]
                unsafe {
                    matrixmultiply::dgemm(
                        batch,
                        inputs,
                        outputs,
                        1.0,
                        x.as_ptr(),
                        inputs as isize,
                        1,
                        self.weights.as_ptr(),
                        1,
                        inputs as isize,
                        1.0,
                        y.as_mut_ptr(),
                        outputs as isize,
                        1,
                    );
                }
            }
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                padding,
                length,
                ..
            } => {
                let n_in = in_channels * length;
                for b in 0..batch {
                    let xs = &x[b * n_in..(b + 1) * n_in];
                    let ys = &mut y[b * n_out..(b + 1) * n_out];
                    for o in 0..out_channels {
                        let yo = &mut ys[o * length..(o + 1) * length];
                        yo.fill(self.bias[o]);
                        for i in 0..in_channels {
                            let xi = &xs[i * length..(i + 1) * length];
                            let w = &self.weights[(o * in_channels + i) * kernel..][..kernel];
                            for (k, &wk) in w.iter().enumerate() {
                                // y[t] += w[k] * x[t + k - pad]
                                let shift = k as isize - padding as isize;
                                let (t0, t1) = valid_range(shift, length);
                                for t in t0..t1 {
                                    yo[t] += wk * xi[(t as isize + shift) as usize];
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Conv1dTranspose {
                in_channels,
                out_channels,
                kernel,
                padding,
                length,
                ..
            } => {
                let n_in = in_channels * length;
                for b in 0..batch {
                    let xs = &x[b * n_in..(b + 1) * n_in];
                    let ys = &mut y[b * n_out..(b + 1) * n_out];
                    for o in 0..out_channels {
                        ys[o * length..(o + 1) * length].fill(self.bias[o]);
                    }
                    for i in 0..in_channels {
                        let xi = &xs[i * length..(i + 1) * length];
                        for o in 0..out_channels {
                            let yo = &mut ys[o * length..(o + 1) * length];
                            let w = &self.weights[(i * out_channels + o) * kernel..][..kernel];
                            for (k, &wk) in w.iter().enumerate() {
                                // y[s] += w[k] * x[s - k + pad]
                                let shift = padding as isize - k as isize;
                                let (s0, s1) = valid_range(shift, length);
                                for s in s0..s1 {
                                    yo[s] += wk * xi[(s as isize + shift) as usize];
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Flatten { .. } => y.copy_from_slice(x),
        }
        y
    }

    /// Back-propagates `g` (gradient w.r.t. the affine output) and accumulates
    /// weight/bias gradients. Returns the gradient w.r.t. the input.
    pub(crate) fn affine_backward(
        &self,
        x: &[f64],
        g: &[f64],
        batch: usize,
        dw: &mut [f64],
        db: &mut [f64],
    ) -> Vec<f64> {
        let n_in = self.spec.input_len();
        let n_out = self.spec.output_len();
        let mut dx = vec![0.0; batch * n_in];
        match self.spec.kind {
            LayerKind::Dense { inputs, outputs } => {
                for row in g.chunks(outputs) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                unsafe {
                    // dw[o, i] += sum_b g[b, o] * x[b, i]
                    matrixmultiply::dgemm(
                        outputs,
                        batch,
                        inputs,
                        1.0,
                        g.as_ptr(),
                        1,
                        outputs as isize,
                        x.as_ptr(),
                        inputs as isize,
                        1,
                        1.0,
                        dw.as_mut_ptr(),
                        inputs as isize,
                        1,
                    );
                    // dx[b, i] = sum_o g[b, o] * w[o, i]
                    matrixmultiply::dgemm(
                        batch,
                        outputs,
                        inputs,
                        1.0,
                        g.as_ptr(),
                        outputs as isize,
                        1,
                        self.weights.as_ptr(),
                        inputs as isize,
                        1,
                        0.0,
                        dx.as_mut_ptr(),
                        inputs as isize,
                        1,
                    );
                }
            }
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                padding,
                length,
                ..
            } => {
                for b in 0..batch {
                    let xs = &x[b * n_in..(b + 1) * n_in];
                    let gs = &g[b * n_out..(b + 1) * n_out];
                    let dxs = &mut dx[b * n_in..(b + 1) * n_in];
                    for o in 0..out_channels {
                        let go = &gs[o * length..(o + 1) * length];
                        db[o] += go.iter().sum::<f64>();
                        for i in 0..in_channels {
                            let xi = &xs[i * length..(i + 1) * length];
                            let dxi = &mut dxs[i * length..(i + 1) * length];
                            let base = (o * in_channels + i) * kernel;
                            for k in 0..kernel {
                                let wk = self.weights[base + k];
                                let shift = k as isize - padding as isize;
                                let (t0, t1) = valid_range(shift, length);
                                let mut acc = 0.0;
                                for t in t0..t1 {
                                    let src = (t as isize + shift) as usize;
                                    acc += go[t] * xi[src];
                                    dxi[src] += go[t] * wk;
                                }
                                dw[base + k] += acc;
                            }
                        }
                    }
                }
            }
            LayerKind::Conv1dTranspose {
                in_channels,
                out_channels,
                kernel,
                padding,
                length,
                ..
            } => {
                for b in 0..batch {
                    let xs = &x[b * n_in..(b + 1) * n_in];
                    let gs = &g[b * n_out..(b + 1) * n_out];
                    let dxs = &mut dx[b * n_in..(b + 1) * n_in];
                    for o in 0..out_channels {
                        db[o] += gs[o * length..(o + 1) * length].iter().sum::<f64>();
                    }
                    for i in 0..in_channels {
                        let xi = &xs[i * length..(i + 1) * length];
                        let dxi = &mut dxs[i * length..(i + 1) * length];
                        for o in 0..out_channels {
                            let go = &gs[o * length..(o + 1) * length];
                            let base = (i * out_channels + o) * kernel;
                            for k in 0..kernel {
                                let wk = self.weights[base + k];
                                let shift = padding as isize - k as isize;
                                let (s0, s1) = valid_range(shift, length);
                                let mut acc = 0.0;
                                for s in s0..s1 {
                                    let src = (s as isize + shift) as usize;
                                    acc += go[s] * xi[src];
                                    dxi[src] += go[s] * wk;
                                }
                                dw[base + k] += acc;
                            }
                        }
                    }
                }
            }
            LayerKind::Flatten { .. } => dx.copy_from_slice(g),
        }
        dx
    }
}

/// Output positions `t` for which `t + shift` indexes inside `[0, length)`.
#[inline]
fn valid_range(shift: isize, length: usize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (length as isize - shift).clamp(0, length as isize) as usize;
    (lo.min(hi), hi)
}
