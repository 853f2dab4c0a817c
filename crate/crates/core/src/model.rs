//! Feedforward binary classifiers with exact analytic gradients.
//!
//! The architecture family is a stack of rectified-linear hidden layers
//! followed by a single sigmoid output unit; an empty hidden stack is plain
//! logistic regression. Training-mode forward passes apply inverted dropout
//! to hidden activations; the gradient of the weighted cross-entropy (plus an
//! L2 penalty on weight matrices) is computed analytically under the sampled
//! dropout mask. Parameters carry their own adaptive-moment optimizer state.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::scalar::{sigmoid, Scalar};

/// Probabilities are clamped to `[PROB_CLIP, 1 - PROB_CLIP]` inside the loss.
pub const PROB_CLIP: f64 = 1e-12;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Architecture and regularization of one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Hidden layer widths; empty means logistic regression.
    pub hidden_sizes: Vec<usize>,
    /// Probability of dropping a hidden unit during training.
    pub dropout_p: f64,
    /// L2 penalty coefficient on weight matrices (biases exempt).
    pub weight_decay: f64,
    /// Seed for the initial weight draw.
    pub init_seed: u64,
}

impl ModelSpec {
    /// Logistic regression with no regularization.
    pub fn logistic(init_seed: u64) -> Self {
        ModelSpec {
            hidden_sizes: Vec::new(),
            dropout_p: 0.0,
            weight_decay: 0.0,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        if !(self.dropout_p.is_finite() && (0.0..1.0).contains(&self.dropout_p)) {
            return Err(Error::config(format!(
                "dropout probability {} must lie in [0, 1)",
                self.dropout_p
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config(format!(
                "weight decay {} must be nonnegative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Whether a forward pass samples dropout masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Layer parameters plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    spec: ModelSpec,
    input_dim: usize,
    weights: Vec<Array2<T>>,
    biases: Vec<Array1<T>>,
    moment1_w: Vec<Array2<T>>,
    moment1_b: Vec<Array1<T>>,
    moment2_w: Vec<Array2<T>>,
    moment2_b: Vec<Array1<T>>,
    step: u64,
}

/// Fan-in/fan-out of each layer for a given spec and input width.
fn layer_dims(spec: &ModelSpec, input_dim: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::with_capacity(spec.hidden_sizes.len() + 1);
    let mut fan_in = input_dim;
    for &h in &spec.hidden_sizes {
        dims.push((fan_in, h));
        fan_in = h;
    }
    dims.push((fan_in, 1));
    dims
}

impl<T: Scalar> ModelParams<T> {
    /// Initialize weights from a zero-mean uniform distribution with
    /// half-width √(6/(fan_in+fan_out)); biases and moments start at zero.
    pub fn init(spec: &ModelSpec, input_dim: usize) -> Result<Self> {
        spec.validate()?;
        if input_dim == 0 {
            return Err(Error::config("model input dimension must be positive"));
        }
        let mut rng = stream_rng(spec.init_seed, 0);
        let mut weights = Vec::new();
        for (fan_in, fan_out) in layer_dims(spec, input_dim) {
            let half_width = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let draw: Vec<T> = (0..fan_in * fan_out)
                .map(|_| T::from_f64_lossy(half_width * (2.0 * rng.random::<f64>() - 1.0)))
                .collect();
            weights.push(
                Array2::from_shape_vec((fan_in, fan_out), draw).expect("shape matches draw"),
            );
        }
        Ok(Self::from_weight_stack(spec.clone(), input_dim, weights))
    }

    /// All-zero parameters: a constant-½ predictor. Useful as a degenerate
    /// reference point.
    pub fn zeroed(spec: &ModelSpec, input_dim: usize) -> Result<Self> {
        spec.validate()?;
        if input_dim == 0 {
            return Err(Error::config("model input dimension must be positive"));
        }
        let weights = layer_dims(spec, input_dim)
            .into_iter()
            .map(|(fi, fo)| Array2::zeros((fi, fo)))
            .collect();
        Ok(Self::from_weight_stack(spec.clone(), input_dim, weights))
    }

    /// Build parameters from explicit layer matrices and bias vectors, with
    /// zero optimizer state. Shapes must chain from `input_dim` to 1.
    pub fn from_layers(
        spec: ModelSpec,
        input_dim: usize,
        weights: Vec<Array2<T>>,
        biases: Vec<Array1<T>>,
    ) -> Result<Self> {
        spec.validate()?;
        let dims = layer_dims(&spec, input_dim);
        if weights.len() != dims.len() || biases.len() != dims.len() {
            return Err(Error::config(format!(
                "expected {} layers, got {} weight matrices and {} bias vectors",
                dims.len(),
                weights.len(),
                biases.len()
            )));
        }
        for (l, ((fi, fo), (w, b))) in dims.iter().zip(weights.iter().zip(&biases)).enumerate() {
            if w.dim() != (*fi, *fo) || b.len() != *fo {
                return Err(Error::config(format!(
                    "layer {l}: expected weight {fi}×{fo} and bias length {fo}, got {:?} and {}",
                    w.dim(),
                    b.len()
                )));
            }
        }
        let mut params = Self::from_weight_stack(spec, input_dim, weights);
        params.biases = biases;
        Ok(params)
    }

    fn from_weight_stack(spec: ModelSpec, input_dim: usize, weights: Vec<Array2<T>>) -> Self {
        let biases: Vec<Array1<T>> = weights.iter().map(|w| Array1::zeros(w.ncols())).collect();
        let moment1_w: Vec<Array2<T>> = weights.iter().map(|w| Array2::zeros(w.dim())).collect();
        let moment2_w = moment1_w.clone();
        let moment1_b: Vec<Array1<T>> = biases.iter().map(|b| Array1::zeros(b.len())).collect();
        let moment2_b = moment1_b.clone();
        ModelParams {
            spec,
            input_dim,
            weights,
            biases,
            moment1_w,
            moment1_b,
            moment2_w,
            moment2_b,
            step: 0,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<T>] {
        &self.biases
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Cached intermediate state of one forward pass, sufficient to run the
/// backward pass without recomputation.
pub struct ForwardPass<T> {
    /// Post-activation (and, in train mode, post-dropout) hidden outputs.
    hidden: Vec<Array2<T>>,
    /// Elementwise dh/dz per hidden layer: relu'(z) times the inverted
    /// dropout scale of kept units.
    dfactor: Vec<Array2<T>>,
    /// Output probabilities, one per batch row.
    pub probs: Array1<T>,
}

fn check_finite_layer<T: Scalar>(values: &Array2<T>, layer: usize) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite activation in layer {layer}"
        )));
    }
    Ok(())
}

/// Run the network over a batch, returning probabilities plus the caches
/// needed for [`backward`]. In train mode, hidden activations pass through
/// inverted dropout (`rng` is consumed only when `dropout_p > 0`); eval mode
/// is deterministic and ignores `rng`.
pub fn forward_pass<T: Scalar>(
    params: &ModelParams<T>,
    x: ArrayView2<'_, T>,
    mode: Mode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardPass<T>> {
    if x.ncols() != params.input_dim {
        return Err(Error::config(format!(
            "batch has {} feature columns, model expects {}",
            x.ncols(),
            params.input_dim
        )));
    }
    let p = params.spec.dropout_p;
    let dropout_active = mode == Mode::Train && p > 0.0;
    let mut rng = if dropout_active {
        Some(rng.ok_or_else(|| {
            Error::config("train-mode forward with dropout requires an rng")
        })?)
    } else {
        None
    };
    let keep_scale = T::from_f64_lossy(1.0 / (1.0 - p));

    let num_hidden = params.weights.len() - 1;
    let mut hidden: Vec<Array2<T>> = Vec::with_capacity(num_hidden);
    let mut dfactor: Vec<Array2<T>> = Vec::with_capacity(num_hidden);
    for l in 0..num_hidden {
        let input = if l == 0 {
            x
        } else {
            hidden[l - 1].view()
        };
        let mut z = input.dot(&params.weights[l]);
        z += &params.biases[l];
        check_finite_layer(&z, l)?;
        let mut df = z.mapv(|v| if v > T::zero() { T::one() } else { T::zero() });
        let mut h = z;
        h.mapv_inplace(|v| v.max(T::zero()));
        if dropout_active {
            let rng = rng.as_mut().expect("dropout rng present");
            // Row-major draw order keeps the mask deterministic.
            for (hv, dv) in h.iter_mut().zip(df.iter_mut()) {
                if rng.random::<f64>() < p {
                    *hv = T::zero();
                    *dv = T::zero();
                } else {
                    *hv = *hv * keep_scale;
                    *dv = *dv * keep_scale;
                }
            }
        }
        hidden.push(h);
        dfactor.push(df);
    }

    let last_input = if num_hidden == 0 {
        x
    } else {
        hidden[num_hidden - 1].view()
    };
    let mut z_out = last_input.dot(&params.weights[num_hidden]);
    z_out += &params.biases[num_hidden];
    check_finite_layer(&z_out, num_hidden)?;
    let probs = z_out.column(0).mapv(sigmoid);
    Ok(ForwardPass {
        hidden,
        dfactor,
        probs,
    })
}

/// Forward pass returning only the probabilities.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    x: ArrayView2<'_, T>,
    mode: Mode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Array1<T>> {
    forward_pass(params, x, mode, rng).map(|pass| pass.probs)
}

/// Deterministic eval-mode probabilities.
pub fn infer<T: Scalar>(params: &ModelParams<T>, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
    forward(params, x, Mode::Eval, None)
}

/// Nonnegative per-example weights for one minibatch, not all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PerExampleWeights<T>(Vec<T>);

impl<T: Scalar> PerExampleWeights<T> {
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("per-example weights are empty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::numeric(
                "per-example weights must be finite and nonnegative",
            ));
        }
        if weights.iter().all(|w| *w == T::zero()) {
            return Err(Error::config("per-example weights are all zero"));
        }
        Ok(PerExampleWeights(weights))
    }

    /// Uniform weights `1/B`, the plain-average case.
    pub fn uniform(batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("per-example weights are empty"));
        }
        let w = T::one() / T::from_usize_lossy(batch_size);
        Ok(PerExampleWeights(vec![w; batch_size]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

/// Gradient with the same layer structure as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Scalar> Gradient<T> {
    fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Per-example binary cross-entropy with clipped probabilities.
pub fn per_example_ce<T: Scalar>(probs: &Array1<T>, labels: &[u8]) -> Array1<T> {
    let floor = T::from_f64_lossy(PROB_CLIP);
    Array1::from_iter(probs.iter().zip(labels).map(|(&p, &y)| {
        let p = crate::scalar::clip_probability(p, floor);
        if y == 1 {
            -p.ln()
        } else {
            -(T::one() - p).ln()
        }
    }))
}

/// Weighted cross-entropy loss plus L2 penalty, and its exact gradient, reusing
/// an already-computed forward pass (so the gradient is taken under that
/// pass's dropout mask).
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    pass: &ForwardPass<T>,
    x: ArrayView2<'_, T>,
    labels: &[u8],
    weights: &PerExampleWeights<T>,
) -> Result<(T, Gradient<T>)> {
    let batch = x.nrows();
    if labels.len() != batch || weights.len() != batch || pass.probs.len() != batch {
        return Err(Error::config(format!(
            "batch size mismatch: {} rows, {} labels, {} weights",
            batch,
            labels.len(),
            weights.len()
        )));
    }
    let floor = T::from_f64_lossy(PROB_CLIP);
    let ceiling = T::one() - floor;
    let decay = T::from_f64_lossy(params.spec.weight_decay);

    let ce = per_example_ce(&pass.probs, labels);
    let mut loss = ce
        .iter()
        .zip(weights.as_slice())
        .map(|(&c, &w)| w * c)
        .sum::<T>();
    if decay > T::zero() {
        let half = T::from_f64_lossy(0.5);
        let penalty = params
            .weights
            .iter()
            .map(|w| w.iter().map(|&v| v * v).sum::<T>())
            .sum::<T>();
        loss += decay * half * penalty;
    }

    // Output delta: d loss / d z_out. Zero where the probability was clipped,
    // since the clipped loss is locally constant in z there.
    let delta_out = Array2::from_shape_fn((batch, 1), |(i, _)| {
        let p = pass.probs[i];
        if p <= floor || p >= ceiling {
            T::zero()
        } else {
            let y = T::from_usize_lossy(labels[i] as usize);
            weights.as_slice()[i] * (p - y)
        }
    });

    let num_layers = params.weights.len();
    let mut grad_w: Vec<Array2<T>> = Vec::with_capacity(num_layers);
    let mut grad_b: Vec<Array1<T>> = Vec::with_capacity(num_layers);
    let mut delta = delta_out;
    for l in (0..num_layers).rev() {
        let input = if l == 0 {
            x
        } else {
            pass.hidden[l - 1].view()
        };
        let mut gw = input.t().dot(&delta);
        if decay > T::zero() {
            gw = gw + &(&params.weights[l] * decay);
        }
        let gb = delta.sum_axis(Axis(0));
        grad_w.push(gw);
        grad_b.push(gb);
        if l > 0 {
            delta = delta.dot(&params.weights[l].t()) * &pass.dfactor[l - 1];
        }
    }
    grad_w.reverse();
    grad_b.reverse();
    Ok((
        loss,
        Gradient {
            weights: grad_w,
            biases: grad_b,
        },
    ))
}

/// Weighted loss and exact gradient in one call: forward (sampling dropout in
/// train mode) then backward.
pub fn weighted_loss_grad<T: Scalar>(
    params: &ModelParams<T>,
    x: ArrayView2<'_, T>,
    labels: &[u8],
    weights: &PerExampleWeights<T>,
    mode: Mode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(T, Gradient<T>)> {
    let pass = forward_pass(params, x, mode, rng)?;
    backward(params, &pass, x, labels, weights)
}

impl<T: Scalar> ModelParams<T> {
    /// One adaptive-moment update: first/second moment EMAs with bias
    /// correction, β1=0.9, β2=0.999, ε=1e-8.
    pub fn optimizer_step(&mut self, grad: &Gradient<T>, learning_rate: f64) -> Result<()> {
        if grad.weights.len() != self.weights.len() || grad.biases.len() != self.biases.len() {
            return Err(Error::config("gradient layer count mismatch"));
        }
        for (l, (gw, gb)) in grad.weights.iter().zip(&grad.biases).enumerate() {
            if gw.dim() != self.weights[l].dim() || gb.len() != self.biases[l].len() {
                return Err(Error::config(format!("gradient shape mismatch in layer {l}")));
            }
        }
        if !grad.is_finite() {
            return Err(Error::numeric("non-finite gradient"));
        }
        self.step += 1;
        let t = self.step;
        let b1 = T::from_f64_lossy(ADAM_BETA1);
        let b2 = T::from_f64_lossy(ADAM_BETA2);
        let one = T::one();
        let corr1 = T::from_f64_lossy(1.0 - ADAM_BETA1.powi(t as i32));
        let corr2 = T::from_f64_lossy(1.0 - ADAM_BETA2.powi(t as i32));
        let eps = T::from_f64_lossy(ADAM_EPS);
        let lr = T::from_f64_lossy(learning_rate);

        for l in 0..self.weights.len() {
            let g = &grad.weights[l];
            let m = &mut self.moment1_w[l];
            let v = &mut self.moment2_w[l];
            ndarray::azip!((m in m, v in v, &g in g, w in &mut self.weights[l]) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            });
            let g = &grad.biases[l];
            let m = &mut self.moment1_b[l];
            let v = &mut self.moment2_b[l];
            ndarray::azip!((m in m, v in v, &g in g, b in &mut self.biases[l]) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *b = *b - lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}

/// Versioned on-disk form of [`ModelParams`]: layer shapes, row-major entry
/// arrays, optimizer state.
#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ParamsDoc<T> {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub input_dim: usize,
    pub step: u64,
    pub layers: Vec<LayerDoc<T>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LayerDoc<T> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub moment1_w: Vec<T>,
    pub moment1_b: Vec<T>,
    pub moment2_w: Vec<T>,
    pub moment2_b: Vec<T>,
}

pub const PARAMS_FORMAT_VERSION: u32 = 1;

fn flat<T: Scalar>(a: &Array2<T>) -> Vec<T> {
    a.iter().copied().collect()
}

impl<T: Scalar> ModelParams<T> {
    pub fn to_doc(&self) -> ParamsDoc<T> {
        let layers = (0..self.weights.len())
            .map(|l| LayerDoc {
                fan_in: self.weights[l].nrows(),
                fan_out: self.weights[l].ncols(),
                weight: flat(&self.weights[l]),
                bias: self.biases[l].to_vec(),
                moment1_w: flat(&self.moment1_w[l]),
                moment1_b: self.moment1_b[l].to_vec(),
                moment2_w: flat(&self.moment2_w[l]),
                moment2_b: self.moment2_b[l].to_vec(),
            })
            .collect();
        ParamsDoc {
            format_version: PARAMS_FORMAT_VERSION,
            spec: self.spec.clone(),
            input_dim: self.input_dim,
            step: self.step,
            layers,
        }
    }

    pub fn from_doc(doc: ParamsDoc<T>) -> Result<Self> {
        if doc.format_version != PARAMS_FORMAT_VERSION {
            return Err(Error::data(format!(
                "unsupported parameter document version {}",
                doc.format_version
            )));
        }
        let dims = layer_dims(&doc.spec, doc.input_dim);
        if doc.layers.len() != dims.len() {
            return Err(Error::data(format!(
                "parameter document has {} layers, spec implies {}",
                doc.layers.len(),
                dims.len()
            )));
        }
        let unpack2 = |v: Vec<T>, (fi, fo): (usize, usize), what: &str| -> Result<Array2<T>> {
            Array2::from_shape_vec((fi, fo), v)
                .map_err(|_| Error::data(format!("{what} array does not match its stated shape")))
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut m1w = Vec::new();
        let mut m1b = Vec::new();
        let mut m2w = Vec::new();
        let mut m2b = Vec::new();
        for (layer, (fi, fo)) in doc.layers.into_iter().zip(dims) {
            if (layer.fan_in, layer.fan_out) != (fi, fo) {
                return Err(Error::data(format!(
                    "layer shape {}×{} does not chain with the declared layout (expected {fi}×{fo})",
                    layer.fan_in, layer.fan_out
                )));
            }
            if layer.bias.len() != fo || layer.moment1_b.len() != fo || layer.moment2_b.len() != fo
            {
                return Err(Error::data("bias array does not match its stated shape"));
            }
            weights.push(unpack2(layer.weight, (fi, fo), "weight")?);
            m1w.push(unpack2(layer.moment1_w, (fi, fo), "first-moment")?);
            m2w.push(unpack2(layer.moment2_w, (fi, fo), "second-moment")?);
            biases.push(Array1::from_vec(layer.bias));
            m1b.push(Array1::from_vec(layer.moment1_b));
            m2b.push(Array1::from_vec(layer.moment2_b));
        }
        let params = ModelParams {
            spec: doc.spec,
            input_dim: doc.input_dim,
            weights,
            biases,
            moment1_w: m1w,
            moment1_b: m1b,
            moment2_w: m2w,
            moment2_b: m2b,
            step: doc.step,
        };
        if params.weights.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(Error::data("parameter document contains non-finite weights"));
        }
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("params serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ParamsDoc<T> = serde_json::from_str(s)
            .map_err(|e| Error::data(format!("invalid parameter JSON: {e}")))?;
        Self::from_doc(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn plain_spec(hidden: Vec<usize>, seed: u64) -> ModelSpec {
        ModelSpec {
            hidden_sizes: hidden,
            dropout_p: 0.0,
            weight_decay: 0.0,
            init_seed: seed,
        }
    }

    #[test]
    fn init_shapes_logistic() {
        let p = ModelParams::<f64>::init(&plain_spec(vec![], 0), 3).unwrap();
        assert_eq!(p.num_layers(), 1);
        assert_eq!(p.weights()[0].dim(), (3, 1));
        assert_eq!(p.biases()[0].len(), 1);
    }

    #[test]
    fn init_shapes_three_hidden() {
        let p = ModelParams::<f64>::init(&plain_spec(vec![128, 128, 128], 0), 50).unwrap();
        let dims: Vec<_> = p.weights().iter().map(|w| w.dim()).collect();
        assert_eq!(dims, vec![(50, 128), (128, 128), (128, 128), (128, 1)]);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = ModelParams::<f64>::init(&plain_spec(vec![16], 42), 8).unwrap();
        let b = ModelParams::<f64>::init(&plain_spec(vec![16], 42), 8).unwrap();
        let c = ModelParams::<f64>::init(&plain_spec(vec![16], 43), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let half_width = (6.0f64 / (8.0 + 16.0)).sqrt();
        for &w in a.weights()[0].iter() {
            assert!(w.abs() <= half_width);
        }
        assert!(a.biases().iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn forward_zero_weights_is_half() {
        let p = ModelParams::<f64>::zeroed(&plain_spec(vec![4], 0), 3).unwrap();
        let x = array![[1.0, -2.0, 0.5], [0.0, 0.0, 0.0]];
        let out = infer(&p, x.view()).unwrap();
        assert_eq!(out.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn forward_logistic_orthogonal_input() {
        let p = ModelParams::from_layers(
            plain_spec(vec![], 0),
            2,
            vec![array![[1.0], [0.0]]],
            vec![array![0.0]],
        )
        .unwrap();
        let out = infer(&p, array![[0.0, 5.0]].view()).unwrap();
        assert_eq!(out[0], 0.5);
    }

    #[test]
    fn forward_logistic_scalar_value() {
        let p = ModelParams::from_layers(
            plain_spec(vec![], 0),
            1,
            vec![array![[2.0]]],
            vec![array![-1.0]],
        )
        .unwrap();
        let out = infer(&p, array![[1.0]].view()).unwrap();
        assert_abs_diff_eq!(out[0], 0.7310585786300049, epsilon = 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = ModelParams::<f64>::init(&plain_spec(vec![], 0), 3).unwrap();
        let err = infer(&p, array![[1.0, 2.0]].view()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn eval_forward_ignores_rng_and_train_matches_without_dropout() {
        let spec = plain_spec(vec![6, 5], 3);
        let p = ModelParams::<f64>::init(&spec, 4).unwrap();
        let x = Array2::from_shape_fn((7, 4), |(i, j)| ((i * 4 + j) as f64).sin());
        let e1 = forward(&p, x.view(), Mode::Eval, Some(&mut stream_rng(0, 0))).unwrap();
        let e2 = forward(&p, x.view(), Mode::Eval, Some(&mut stream_rng(99, 5))).unwrap();
        let e3 = infer(&p, x.view()).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1, e3);
        // dropout_p = 0: train mode is the same deterministic map.
        let t = forward(&p, x.view(), Mode::Train, None).unwrap();
        assert_eq!(t, e1);
    }

    #[test]
    fn dropout_is_unbiased_before_the_sigmoid() {
        let spec = ModelSpec {
            hidden_sizes: vec![32],
            dropout_p: 0.5,
            weight_decay: 0.0,
            init_seed: 7,
        };
        let p = ModelParams::<f64>::init(&spec, 5).unwrap();
        let x = Array2::from_shape_fn((1, 5), |(_, j)| 0.3 * (j as f64 + 1.0));
        let eval_logit = crate::scalar::logit(infer(&p, x.view()).unwrap()[0]);
        let mut rng = stream_rng(11, 0);
        let draws = 20_000;
        let mean_logit: f64 = (0..draws)
            .map(|_| {
                let out = forward(&p, x.view(), Mode::Train, Some(&mut rng)).unwrap();
                crate::scalar::logit(out[0])
            })
            .sum::<f64>()
            / draws as f64;
        // Inverted dropout keeps the pre-sigmoid output unbiased.
        assert_abs_diff_eq!(mean_logit, eval_logit, epsilon = 0.05);
    }

    #[test]
    fn dropout_draws_are_seed_deterministic() {
        let spec = ModelSpec {
            hidden_sizes: vec![8, 8],
            dropout_p: 0.3,
            weight_decay: 0.0,
            init_seed: 1,
        };
        let p = ModelParams::<f64>::init(&spec, 3).unwrap();
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64) - (j as f64) / 2.0);
        let a = forward(&p, x.view(), Mode::Train, Some(&mut stream_rng(4, 2))).unwrap();
        let b = forward(&p, x.view(), Mode::Train, Some(&mut stream_rng(4, 2))).unwrap();
        let c = forward(&p, x.view(), Mode::Train, Some(&mut stream_rng(4, 3))).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(forward(&p, x.view(), Mode::Train, None).is_err());
    }

    #[test]
    fn loss_uniform_weights_at_half_is_ln2() {
        let p = ModelParams::<f64>::zeroed(&plain_spec(vec![], 0), 2).unwrap();
        let x = array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [-1.0, 3.0]];
        let y = [1u8, 1, 0, 1];
        let w = PerExampleWeights::uniform(4).unwrap();
        let (loss, _) = weighted_loss_grad(&p, x.view(), &y, &w, Mode::Eval, None).unwrap();
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn loss_concentrated_on_one_example_with_decay() {
        let spec = ModelSpec {
            hidden_sizes: vec![],
            dropout_p: 0.0,
            weight_decay: 0.5,
            init_seed: 0,
        };
        let p = ModelParams::from_layers(spec, 1, vec![array![[0.3]]], vec![array![0.1]]).unwrap();
        let x = array![[1.0], [2.0], [-1.0]];
        let y = [0u8, 1, 1];
        let w = PerExampleWeights::new(vec![0.0, 1.0, 0.0]).unwrap();
        let (loss, _) = weighted_loss_grad(&p, x.view(), &y, &w, Mode::Eval, None).unwrap();
        let ce = -sigmoid(0.3f64 * 2.0 + 0.1).ln();
        let decay = 0.5 * 0.5 * 0.3 * 0.3; // wd · ½‖W‖², biases exempt
        assert_abs_diff_eq!(loss, ce + decay, epsilon = 1e-15);
    }

    #[test]
    fn weights_validation() {
        assert!(PerExampleWeights::new(vec![0.0_f64; 4]).is_err());
        assert!(PerExampleWeights::<f64>::new(vec![]).is_err());
        assert!(PerExampleWeights::new(vec![0.5, -0.1]).is_err());
        assert!(PerExampleWeights::new(vec![0.5, f64::NAN]).is_err());
        assert!(PerExampleWeights::new(vec![0.0, 2.0]).is_ok());
        let u = PerExampleWeights::<f64>::uniform(8).unwrap();
        assert_eq!(u.as_slice(), &[0.125; 8]);
    }

    #[test]
    fn clipped_probability_has_zero_gradient() {
        let p = ModelParams::from_layers(
            plain_spec(vec![], 0),
            1,
            vec![array![[60.0]]],
            vec![array![0.0]],
        )
        .unwrap();
        let x = array![[1.0]];
        let w = PerExampleWeights::uniform(1).unwrap();
        let (loss, grad) = weighted_loss_grad(&p, x.view(), &[0], &w, Mode::Eval, None).unwrap();
        // p = sigmoid(60) clips to 1 - 1e-12; loss = -ln(1e-12), gradient flat.
        assert_abs_diff_eq!(loss, -(1e-12_f64.ln()), epsilon = 1e-3);
        assert_eq!(grad.weights[0][(0, 0)], 0.0);
        assert_eq!(grad.biases[0][0], 0.0);
    }

    #[test]
    fn gradient_matches_closed_form_logistic() {
        let p = ModelParams::<f64>::init(&plain_spec(vec![], 5), 3).unwrap();
        let x = Array2::from_shape_fn((6, 3), |(i, j)| ((i + 2 * j) as f64 * 0.37).cos());
        let y = [1u8, 0, 0, 1, 1, 0];
        let w = PerExampleWeights::uniform(6).unwrap();
        let (_, grad) = weighted_loss_grad(&p, x.view(), &y, &w, Mode::Eval, None).unwrap();
        let probs = infer(&p, x.view()).unwrap();
        let resid = Array1::from_iter(
            probs
                .iter()
                .zip(&y)
                .map(|(&pi, &yi)| (pi - yi as f64) / 6.0),
        );
        let expect_w = x.t().dot(&resid.view().insert_axis(ndarray::Axis(1)));
        let expect_b = resid.sum();
        for i in 0..3 {
            assert_abs_diff_eq!(grad.weights[0][(i, 0)], expect_w[(i, 0)], epsilon = 1e-14);
        }
        assert_abs_diff_eq!(grad.biases[0][0], expect_b, epsilon = 1e-14);
    }

    /// Independent straight-line reference forward used by the gradient check.
    fn reference_forward(p: &ModelParams<f64>, x: &Array2<f64>) -> (Vec<Array2<f64>>, Array1<f64>) {
        let mut pre = Vec::new();
        let mut a = x.clone();
        for l in 0..p.num_layers() {
            let z = a.dot(&p.weights()[l]) + &p.biases()[l];
            pre.push(z.clone());
            if l + 1 < p.num_layers() {
                a = z.mapv(|v| v.max(0.0));
            } else {
                a = z;
            }
        }
        let probs = pre.last().unwrap().column(0).mapv(sigmoid);
        (pre, probs)
    }

    fn fd_loss(
        spec: &ModelSpec,
        input_dim: usize,
        weights: &[Array2<f64>],
        biases: &[Array1<f64>],
        x: &Array2<f64>,
        y: &[u8],
        w: &PerExampleWeights<f64>,
    ) -> f64 {
        let p = ModelParams::from_layers(spec.clone(), input_dim, weights.to_vec(), biases.to_vec())
            .unwrap();
        weighted_loss_grad(&p, x.view(), y, w, Mode::Eval, None).unwrap().0
    }

    /// Central finite differences vs the analytic gradient over random small
    /// networks. Configurations whose hidden pre-activations sit within 1e-3
    /// of the rectifier kink are skipped, as finite differences are invalid
    /// across the kink.
    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = stream_rng(2024, 0);
        let h = 1e-5;
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 100 && attempts < 1000 {
            attempts += 1;
            let m = rng.random_range(1..=6);
            let depth = rng.random_range(0..=2);
            let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=5)).collect();
            let batch = rng.random_range(1..=8);
            let weight_decay = if rng.random::<f64>() < 0.5 { 0.0 } else { 0.1 };
            let spec = ModelSpec {
                hidden_sizes: hidden,
                dropout_p: 0.0,
                weight_decay,
                init_seed: rng.random(),
            };
            let params = ModelParams::<f64>::init(&spec, m).unwrap();
            let x = Array2::from_shape_fn((batch, m), |_| rng.random::<f64>() * 2.0 - 1.0);
            let y: Vec<u8> = (0..batch).map(|_| rng.random_range(0..2u32) as u8).collect();
            let raw: Vec<f64> = (0..batch).map(|_| rng.random::<f64>() + 0.05).collect();
            let w = PerExampleWeights::new(raw).unwrap();

            let (pre, ref_probs) = reference_forward(&params, &x);
            if pre[..pre.len() - 1]
                .iter()
                .any(|z| z.iter().any(|v| v.abs() < 1e-3))
            {
                continue;
            }
            let analytic_probs = infer(&params, x.view()).unwrap();
            for (a, b) in ref_probs.iter().zip(analytic_probs.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }

            let (_, grad) =
                weighted_loss_grad(&params, x.view(), &y, &w, Mode::Eval, None).unwrap();
            let base_w: Vec<Array2<f64>> = params.weights().to_vec();
            let base_b: Vec<Array1<f64>> = params.biases().to_vec();
            let mut max_rel = 0.0f64;
            for l in 0..base_w.len() {
                for idx in 0..base_w[l].len() {
                    let (r, c) = (idx / base_w[l].ncols(), idx % base_w[l].ncols());
                    let mut plus = base_w.clone();
                    plus[l][(r, c)] += h;
                    let mut minus = base_w.clone();
                    minus[l][(r, c)] -= h;
                    let fd = (fd_loss(&spec, m, &plus, &base_b, &x, &y, &w)
                        - fd_loss(&spec, m, &minus, &base_b, &x, &y, &w))
                        / (2.0 * h);
                    let a = grad.weights[l][(r, c)];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
                    max_rel = max_rel.max(rel);
                }
                for j in 0..base_b[l].len() {
                    let mut plus = base_b.clone();
                    plus[l][j] += h;
                    let mut minus = base_b.clone();
                    minus[l][j] -= h;
                    let fd = (fd_loss(&spec, m, &base_w, &plus, &x, &y, &w)
                        - fd_loss(&spec, m, &base_w, &minus, &x, &y, &w))
                        / (2.0 * h);
                    let a = grad.biases[l][j];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
                    max_rel = max_rel.max(rel);
                }
            }
            assert!(
                max_rel < 1e-4,
                "config {checked}: max relative gradient error {max_rel}"
            );
            checked += 1;
        }
        assert_eq!(checked, 100, "only {checked} configurations checked");
    }

    /// Same check under an active dropout mask, replaying the mask by cloning
    /// the generator state before every evaluation.
    #[test]
    fn gradient_is_exact_under_a_fixed_dropout_mask() {
        let spec = ModelSpec {
            hidden_sizes: vec![5, 4],
            dropout_p: 0.4,
            weight_decay: 0.05,
            init_seed: 31,
        };
        let m = 4;
        let batch = 6;
        let params = ModelParams::<f64>::init(&spec, m).unwrap();
        let mut rng = stream_rng(8, 0);
        let x = Array2::from_shape_fn((batch, m), |_| rng.random::<f64>() * 2.0 - 1.0);
        let y: Vec<u8> = (0..batch).map(|_| rng.random_range(0..2u32) as u8).collect();
        let w = PerExampleWeights::uniform(batch).unwrap();
        let mask_rng = stream_rng(55, 1);

        let (_, grad) = weighted_loss_grad(
            &params,
            x.view(),
            &y,
            &w,
            Mode::Train,
            Some(&mut mask_rng.clone()),
        )
        .unwrap();
        let h = 1e-5;
        let eval = |weights: &[Array2<f64>], biases: &[Array1<f64>]| -> f64 {
            let p =
                ModelParams::from_layers(spec.clone(), m, weights.to_vec(), biases.to_vec())
                    .unwrap();
            weighted_loss_grad(&p, x.view(), &y, &w, Mode::Train, Some(&mut mask_rng.clone()))
                .unwrap()
                .0
        };
        let base_w: Vec<Array2<f64>> = params.weights().to_vec();
        let base_b: Vec<Array1<f64>> = params.biases().to_vec();
        let mut max_rel = 0.0f64;
        for l in 0..base_w.len() {
            for idx in 0..base_w[l].len() {
                let (r, c) = (idx / base_w[l].ncols(), idx % base_w[l].ncols());
                let mut plus = base_w.clone();
                plus[l][(r, c)] += h;
                let mut minus = base_w.clone();
                minus[l][(r, c)] -= h;
                let fd = (eval(&plus, &base_b) - eval(&minus, &base_b)) / (2.0 * h);
                let a = grad.weights[l][(r, c)];
                max_rel = max_rel.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-4));
            }
        }
        assert!(max_rel < 1e-3, "max relative gradient error {max_rel}");
    }

    #[test]
    fn optimizer_zero_gradient_is_a_fixed_point() {
        let mut p = ModelParams::<f64>::init(&plain_spec(vec![3], 5), 2).unwrap();
        let before = p.clone();
        let grad = Gradient {
            weights: p.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: p.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
        };
        p.optimizer_step(&grad, 0.1).unwrap();
        assert_eq!(p.weights(), before.weights());
        assert_eq!(p.biases(), before.biases());
        assert_eq!(p.step(), 1);
    }

    #[test]
    fn optimizer_first_step_hand_value() {
        let mut p = ModelParams::<f64>::zeroed(&plain_spec(vec![], 0), 1).unwrap();
        let grad = Gradient {
            weights: vec![array![[1.0]]],
            biases: vec![array![0.0]],
        };
        p.optimizer_step(&grad, 0.1).unwrap();
        // m̂ = v̂ = 1 after bias correction, so θ moves by lr/(1+ε).
        assert_abs_diff_eq!(p.weights()[0][(0, 0)], -0.1, epsilon = 1e-8);
        assert_eq!(p.biases()[0][0], 0.0);
    }

    #[test]
    fn optimizer_matches_reference_recurrence() {
        let mut p = ModelParams::<f64>::init(&plain_spec(vec![2], 2), 9).unwrap();
        let mut rng = stream_rng(12, 0);
        let grads: Vec<Gradient<f64>> = (0..5)
            .map(|_| Gradient {
                weights: p
                    .weights()
                    .iter()
                    .map(|w| Array2::from_shape_fn(w.dim(), |_| rng.random::<f64>() - 0.5))
                    .collect(),
                biases: p
                    .biases()
                    .iter()
                    .map(|b| Array1::from_shape_fn(b.len(), |_| rng.random::<f64>() - 0.5))
                    .collect(),
            })
            .collect();

        // Reference recurrence on flattened parameters.
        let flatten = |p: &ModelParams<f64>| -> Vec<f64> {
            p.weights()
                .iter()
                .flat_map(|w| w.iter().copied())
                .chain(p.biases().iter().flat_map(|b| b.iter().copied()))
                .collect()
        };
        let flatten_grad = |g: &Gradient<f64>| -> Vec<f64> {
            g.weights
                .iter()
                .flat_map(|w| w.iter().copied())
                .chain(g.biases.iter().flat_map(|b| b.iter().copied()))
                .collect()
        };
        let mut theta = flatten(&p);
        let mut m = vec![0.0; theta.len()];
        let mut v = vec![0.0; theta.len()];
        let lr = 0.02;
        for (t, g) in grads.iter().enumerate() {
            let g = flatten_grad(g);
            let t = (t + 1) as i32;
            for i in 0..theta.len() {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                theta[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        for g in &grads {
            p.optimizer_step(g, lr).unwrap();
        }
        let got = flatten(&p);
        for (a, b) in got.iter().zip(&theta) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
        assert_eq!(p.step(), 5);
    }

    #[test]
    fn optimizer_rejects_bad_gradients() {
        let mut p = ModelParams::<f64>::init(&plain_spec(vec![], 0), 2).unwrap();
        let nan = Gradient {
            weights: vec![array![[f64::NAN], [0.0]]],
            biases: vec![array![0.0]],
        };
        assert!(matches!(p.optimizer_step(&nan, 0.1), Err(Error::Numeric(_))));
        let wrong_shape = Gradient {
            weights: vec![array![[1.0]]],
            biases: vec![array![0.0]],
        };
        assert!(matches!(
            p.optimizer_step(&wrong_shape, 0.1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut p = ModelParams::<f64>::init(&plain_spec(vec![7, 3], 77), 5).unwrap();
        let mut rng = stream_rng(1, 1);
        let grad = Gradient {
            weights: p
                .weights()
                .iter()
                .map(|w| Array2::from_shape_fn(w.dim(), |_| rng.random::<f64>() - 0.5))
                .collect(),
            biases: p
                .biases()
                .iter()
                .map(|b| Array1::from_shape_fn(b.len(), |_| rng.random::<f64>() - 0.5))
                .collect(),
        };
        p.optimizer_step(&grad, 0.05).unwrap();
        let back = ModelParams::<f64>::from_json(&p.to_json()).unwrap();
        assert_eq!(p, back);

        let q = ModelParams::<f32>::init(&plain_spec(vec![4], 5), 3).unwrap();
        let back32 = ModelParams::<f32>::from_json(&q.to_json()).unwrap();
        assert_eq!(q, back32);
    }

    #[test]
    fn json_rejects_foreign_versions_and_bad_shapes() {
        let p = ModelParams::<f64>::init(&plain_spec(vec![], 0), 2).unwrap();
        let mut doc = p.to_doc();
        doc.format_version = 9;
        let s = serde_json::to_string(&doc).unwrap();
        assert!(matches!(
            ModelParams::<f64>::from_json(&s),
            Err(Error::Data(_))
        ));
        let mut doc = p.to_doc();
        doc.layers[0].weight.pop();
        let s = serde_json::to_string(&doc).unwrap();
        assert!(matches!(
            ModelParams::<f64>::from_json(&s),
            Err(Error::Data(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn loss_and_grad_invariant_under_batch_permutation(seed in 0u64..500) {
            let mut rng = stream_rng(seed, 3);
            let batch = rng.random_range(2..=10);
            let m = rng.random_range(1..=4);
            let spec = ModelSpec {
                hidden_sizes: vec![rng.random_range(1..=4)],
                dropout_p: 0.0,
                weight_decay: 0.01,
                init_seed: seed,
            };
            let p = ModelParams::<f64>::init(&spec, m).unwrap();
            let x = Array2::from_shape_fn((batch, m), |_| rng.random::<f64>() * 2.0 - 1.0);
            let y: Vec<u8> = (0..batch).map(|_| rng.random_range(0..2u32) as u8).collect();
            let w: Vec<f64> = (0..batch).map(|_| rng.random::<f64>()).collect();

            let mut order: Vec<usize> = (0..batch).collect();
            order.shuffle(&mut rng);
            let xp = Array2::from_shape_fn((batch, m), |(i, j)| x[(order[i], j)]);
            let yp: Vec<u8> = order.iter().map(|&i| y[i]).collect();
            let wp: Vec<f64> = order.iter().map(|&i| w[i]).collect();

            let (l1, g1) = weighted_loss_grad(
                &p, x.view(), &y,
                &PerExampleWeights::new(w).unwrap(), Mode::Eval, None,
            ).unwrap();
            let (l2, g2) = weighted_loss_grad(
                &p, xp.view(), &yp,
                &PerExampleWeights::new(wp).unwrap(), Mode::Eval, None,
            ).unwrap();
            prop_assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
            for (a, b) in g1.weights.iter().zip(&g2.weights) {
                for (x, y) in a.iter().zip(b.iter()) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }
}
