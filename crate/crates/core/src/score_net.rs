//! Score network: a `D -> H -> H -> D` MLP with Swish after both hidden
//! layers, trained full-batch by denoising score matching with Adam.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::distr::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine layer: `y = x W + b`, with `W` stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros_like(other: &Layer) -> Layer {
        Layer {
            weight: Array2::zeros(other.weight.raw_dim()),
            bias: Array1::zeros(other.bias.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNetwork {
    layers: Vec<Layer>,
}

/// Gradient of a scalar loss with respect to every [`ScoreNetwork`] parameter,
/// laid out exactly like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrad {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsmConfig {
    pub sigma: f64,
    pub epochs: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for DsmConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            epochs: 200,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl DsmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.epochs < 1 {
            return Err(Error::param("epochs must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::param("adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::param("adam eps must be > 0"));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn swish(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn swish_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s + z * s * (1.0 - s)
}

/// Intermediate values kept for backprop.
struct Activations {
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ScoreNetwork {
    /// Weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
    pub fn new(d: usize, hidden: usize, seed: u64) -> Result<Self> {
        if d == 0 || hidden == 0 {
            return Err(Error::param(format!(
                "network dimensions must be >= 1, got d={d}, hidden={hidden}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [d, hidden, hidden, d];
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Layer {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), || rng.sample(dist)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds a network from explicit layers, checking the `D -> H -> H -> D` shape.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.len() != 3 {
            return Err(Error::param(format!("expected 3 layers, got {}", layers.len())));
        }
        for l in &layers {
            if l.weight.ncols() != l.bias.len() {
                return Err(Error::param("bias length must match layer output width"));
            }
        }
        for w in layers.windows(2) {
            if w[0].weight.ncols() != w[1].weight.nrows() {
                return Err(Error::param("consecutive layer widths do not chain"));
            }
        }
        if layers[0].weight.nrows() != layers[2].weight.ncols() {
            return Err(Error::param("output width must equal input width"));
        }
        let net = Self { layers };
        if !net.is_finite() {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// `[D, H, H, D]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].weight.nrows()];
        dims.extend(self.layers.iter().map(|l| l.weight.ncols()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                context: "score network input",
                expected: (x.nrows(), self.input_dim()),
                found: x.dim(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score network input"));
        }
        Ok(())
    }

    /// Row-wise score estimates.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).output)
    }

    fn activations(&self, x: &Array2<f64>) -> Activations {
        let mut pre = Vec::with_capacity(2);
        let mut post = Vec::with_capacity(2);
        let mut h = x.clone();
        for layer in &self.layers[..2] {
            let z = h.dot(&layer.weight) + &layer.bias;
            h = z.mapv(swish);
            pre.push(z);
            post.push(h.clone());
        }
        let last = &self.layers[2];
        let output = h.dot(&last.weight) + &last.bias;
        Activations { pre, post, output }
    }

    fn backward(&self, x: &Array2<f64>, acts: &Activations, d_out: Array2<f64>) -> NetworkGrad {
        let mut grads = Vec::with_capacity(3);
        let mut delta = d_out;
        for idx in (0..3).rev() {
            let input = if idx == 0 { x } else { &acts.post[idx - 1] };
            let layer = &self.layers[idx];
            let weight = input.t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if idx > 0 {
                let mut back = delta.dot(&layer.weight.t());
                Zip::from(&mut back)
                    .and(&acts.pre[idx - 1])
                    .for_each(|g, &z| *g *= swish_prime(z));
                delta = back;
            }
            grads.push(Layer { weight, bias });
        }
        grads.reverse();
        NetworkGrad { layers: grads }
    }

    /// Writes a JSON checkpoint carrying the layer dims and every tensor.
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ckpt = Checkpoint {
            layer_dims: self.layer_dims(),
            layers: self.layers.clone(),
        };
        let text = serde_json::to_string(&ckpt)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        let net = Self::from_layers(ckpt.layers)?;
        if net.layer_dims() != ckpt.layer_dims {
            return Err(Error::param(format!(
                "checkpoint header {:?} disagrees with tensors {:?}",
                ckpt.layer_dims,
                net.layer_dims()
            )));
        }
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
}

/// DSM loss on `x_clean + noise` against the target `-noise / sigma^2`:
/// `0.5 * mean_i ||s(x_i + e_i) + e_i / sigma^2||^2`, with exact gradients.
pub fn dsm_loss_and_grad(
    net: &ScoreNetwork,
    x_clean: &Array2<f64>,
    noise: &Array2<f64>,
    sigma: f64,
) -> Result<(f64, NetworkGrad)> {
    if x_clean.dim() != noise.dim() {
        return Err(Error::Shape {
            context: "dsm noise",
            expected: x_clean.dim(),
            found: noise.dim(),
        });
    }
    if !(sigma > 0.0) {
        return Err(Error::param(format!("sigma must be > 0, got {sigma}")));
    }
    let noised = x_clean + noise;
    net.check_input(&noised)?;
    let acts = net.activations(&noised);
    let inv_var = 1.0 / (sigma * sigma);
    let n = x_clean.nrows() as f64;
    // residual = s(x + e) - (-e / sigma^2)
    let mut residual = acts.output.clone();
    Zip::from(&mut residual).and(noise).for_each(|r, &e| *r += e * inv_var);
    let loss = 0.5 * residual.iter().map(|r| r * r).sum::<f64>() / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("dsm loss"));
    }
    let d_out = residual / n;
    let grads = net.backward(&noised, &acts, d_out);
    Ok((loss, grads))
}

/// DSM regression target `-noise / sigma^2`.
pub fn dsm_target(noise: &Array2<f64>, sigma: f64) -> Array2<f64> {
    noise.mapv(|e| -e / (sigma * sigma))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl Adam {
    pub fn new(net: &ScoreNetwork, cfg: &DsmConfig) -> Self {
        let zeros: Vec<Layer> = net.layers.iter().map(Layer::zeros_like).collect();
        Self {
            lr: cfg.lr,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, net: &mut ScoreNetwork, grad: &NetworkGrad) {
        self.t += 1;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, m), v), g) in net
            .layers
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(&grad.layers)
        {
            Zip::from(&mut layer.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&g.weight)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

/// Full-batch DSM training: `cfg.epochs` Adam steps, each on fresh
/// `N(0, sigma^2)` noise. Returns the trained network and per-epoch losses.
pub fn train(net: &ScoreNetwork, x: &Array2<f64>, cfg: &DsmConfig) -> Result<(ScoreNetwork, Vec<f64>)> {
    cfg.validate()?;
    net.check_input(x)?;
    let mut net = net.clone();
    let mut adam = Adam::new(&net, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.sigma).map_err(|e| Error::param(e.to_string()))?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let noise = Array2::from_shape_simple_fn(x.raw_dim(), || normal.sample(&mut rng));
        let (loss, grad) = match dsm_loss_and_grad(&net, x, &noise, cfg.sigma) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => return Err(Error::Divergence { epoch, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        adam.step(&mut net, &grad);
        if !net.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        history.push(loss);
    }
    Ok((net, history))
}
