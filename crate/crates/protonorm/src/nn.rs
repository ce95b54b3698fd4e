//! Dense feed-forward network with manual backpropagation.
//!
//! The network splits into a feature extractor ending at the decision
//! layer (whose activations are the prototype space) and a linear
//! classifier head producing logits. Training minimizes softmax
//! cross-entropy plus an optional mean feature-to-prototype Euclidean
//! distance, the prototype pull used by both federation modes.

use rand::distributions::Uniform;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::proto::PrototypeSet;

/// Activation applied to the decision layer's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Layer widths from input to logits: `[D, hidden..., d, K]`.
///
/// Hidden layers are rectified; the decision layer (width `d`, feeding
/// both the classifier and prototype computation) uses
/// `decision_activation`; logits are linear.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    pub decision_activation: Activation,
}

impl NetworkSpec {
    pub fn new(widths: Vec<usize>, decision_activation: Activation) -> Self {
        NetworkSpec {
            widths,
            decision_activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Config(
                "network needs at least input, decision, and logit widths".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("network widths must all be >= 1".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.widths[self.widths.len() - 2]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

impl Default for NetworkSpec {
    /// The desk-scale spiral classifier: five layers, two-dimensional
    /// decision space, six classes, linear decision activation.
    fn default() -> Self {
        NetworkSpec::new(vec![2, 64, 64, 64, 2, 6], Activation::Identity)
    }
}

/// One dense layer; weights are input x output so the batched forward
/// pass multiplies row-contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Mat,
    pub bias: Vec<f64>,
}

/// All layer parameters of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<DenseLayer>,
}

impl Parameters {
    /// Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn init<R: Rng>(spec: &NetworkSpec, rng: &mut R) -> Parameters {
        let mut layers = Vec::with_capacity(spec.num_layers());
        for l in 0..spec.num_layers() {
            let fan_in = spec.widths[l];
            let fan_out = spec.widths[l + 1];
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.sample(dist)).collect();
            layers.push(DenseLayer {
                weights: Mat::from_vec(fan_in, fan_out, data),
                bias: vec![0.0; fan_out],
            });
        }
        Parameters { layers }
    }

    pub fn zeros(spec: &NetworkSpec) -> Parameters {
        let layers = (0..spec.num_layers())
            .map(|l| DenseLayer {
                weights: Mat::zeros(spec.widths[l], spec.widths[l + 1]),
                bias: vec![0.0; spec.widths[l + 1]],
            })
            .collect();
        Parameters { layers }
    }
}

/// A minibatch of rows and class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Mat,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_shapes(params: &Parameters, spec: &NetworkSpec, batch: &Batch) -> Result<()> {
    spec.validate()?;
    if params.layers.len() != spec.num_layers() {
        return Err(Error::Contract(format!(
            "parameters have {} layers, spec has {}",
            params.layers.len(),
            spec.num_layers()
        )));
    }
    for (l, layer) in params.layers.iter().enumerate() {
        if layer.weights.rows() != spec.widths[l]
            || layer.weights.cols() != spec.widths[l + 1]
            || layer.bias.len() != spec.widths[l + 1]
        {
            return Err(Error::Contract(format!("layer {l} shape mismatch")));
        }
    }
    if batch.features.cols() != spec.input_dim() {
        return Err(Error::Contract(format!(
            "batch dim {} != input dim {}",
            batch.features.cols(),
            spec.input_dim()
        )));
    }
    if batch.features.rows() != batch.labels.len() || batch.is_empty() {
        return Err(Error::Contract("batch rows/labels mismatch or empty".into()));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= spec.num_classes()) {
        return Err(Error::Contract(format!(
            "label {bad} out of range for {} classes",
            spec.num_classes()
        )));
    }
    Ok(())
}

fn layer_activation(spec: &NetworkSpec, layer: usize) -> Activation {
    if layer + 2 < spec.widths.len() - 1 {
        Activation::Relu
    } else if layer + 2 == spec.widths.len() - 1 {
        spec.decision_activation
    } else {
        Activation::Identity
    }
}

/// Pre-activations and activations of every layer for one batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `pre[l]` is the affine output of layer `l`.
    pub pre_activations: Vec<Mat>,
    /// `post[l]` is `pre[l]` after that layer's activation.
    pub activations: Vec<Mat>,
}

impl ForwardTrace {
    pub fn features(&self) -> &Mat {
        &self.activations[self.activations.len() - 2]
    }

    pub fn logits(&self) -> &Mat {
        self.activations.last().unwrap()
    }
}

/// Full forward pass keeping every intermediate, for backprop and
/// gradient diagnostics.
pub fn forward_detailed(
    params: &Parameters,
    spec: &NetworkSpec,
    batch: &Batch,
) -> Result<ForwardTrace> {
    check_shapes(params, spec, batch)?;
    let mut pre_activations = Vec::with_capacity(spec.num_layers());
    let mut activations = Vec::with_capacity(spec.num_layers());
    let mut current = batch.features.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = current.matmul(&layer.weights);
        for i in 0..z.rows() {
            for (x, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                *x += b;
            }
        }
        let mut a = z.clone();
        if layer_activation(spec, l) == Activation::Relu {
            for x in a.data_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
        }
        pre_activations.push(z);
        activations.push(a.clone());
        current = a;
    }
    Ok(ForwardTrace {
        pre_activations,
        activations,
    })
}

/// Decision-layer features and classifier logits for a batch.
pub fn forward(params: &Parameters, spec: &NetworkSpec, batch: &Batch) -> Result<(Mat, Mat)> {
    let trace = forward_detailed(params, spec, batch)?;
    Ok((trace.features().clone(), trace.logits().clone()))
}

/// Loss components of one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    /// cross_entropy + lambda * regularizer.
    pub total: f64,
    pub cross_entropy: f64,
    /// Mean feature-to-target distance over the batch (0 without targets).
    pub regularizer: f64,
    /// Batch samples whose label had no target prototype.
    pub missing_target_samples: usize,
}

/// Compute the combined loss and its exact parameter gradients.
///
/// The regularizer is the batch mean of the Euclidean distance between
/// each sample's decision-layer feature and the target prototype of its
/// label; at zero distance the subgradient is taken as zero. Labels
/// without a target contribute nothing and are counted. `lambda = 0`
/// takes the identical code path as `targets = None`.
pub fn loss_and_grads(
    params: &Parameters,
    spec: &NetworkSpec,
    batch: &Batch,
    targets: Option<&PrototypeSet>,
    lambda: f64,
) -> Result<(LossBreakdown, Parameters)> {
    let trace = forward_detailed(params, spec, batch)?;
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let logits = trace.logits();
    let k = spec.num_classes();

    // softmax cross-entropy and its logit gradient
    let mut cross_entropy = 0.0;
    let mut d_logits = Mat::zeros(n, k);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for &z in row {
            sum += (z - max).exp();
        }
        let y = batch.labels[i];
        cross_entropy += sum.ln() + max - row[y];
        let d_row = d_logits.row_mut(i);
        for (j, &z) in row.iter().enumerate() {
            let p = (z - max).exp() / sum;
            d_row[j] = (p - f64::from(u8::from(j == y))) * inv_n;
        }
    }
    cross_entropy *= inv_n;

    // prototype-distance regularizer on the decision-layer features
    let mut regularizer = 0.0;
    let mut missing = 0usize;
    let features = trace.features();
    let mut d_features_reg: Option<Mat> = None;
    if lambda != 0.0 {
        if let Some(targets) = targets {
            let mut d_feat = Mat::zeros(n, spec.feature_dim());
            for i in 0..n {
                match targets.get(batch.labels[i]) {
                    Some(p) => {
                        let f = features.row(i);
                        let dist: f64 = f
                            .iter()
                            .zip(&p.vec)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        regularizer += dist;
                        if dist > 0.0 {
                            let scale = lambda * inv_n / dist;
                            for ((d, &a), &b) in
                                d_feat.row_mut(i).iter_mut().zip(f).zip(&p.vec)
                            {
                                *d = scale * (a - b);
                            }
                        }
                    }
                    None => missing += 1,
                }
            }
            regularizer *= inv_n;
            d_features_reg = Some(d_feat);
        }
    }

    let total = cross_entropy + lambda * regularizer;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss (cross_entropy {cross_entropy}, regularizer {regularizer})"
        )));
    }

    // backward pass
    let num_layers = spec.num_layers();
    let mut grads = Parameters::zeros(spec);
    let mut d_post = d_logits; // gradient w.r.t. activations[l]
    for l in (0..num_layers).rev() {
        // through the activation
        let mut d_pre = d_post;
        if layer_activation(spec, l) == Activation::Relu {
            let pre = &trace.pre_activations[l];
            for (g, &z) in d_pre.data_mut().iter_mut().zip(pre.data()) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let input = if l == 0 {
            &batch.features
        } else {
            &trace.activations[l - 1]
        };
        grads.layers[l].weights = input.transposed_matmul(&d_pre);
        for i in 0..d_pre.rows() {
            for (b, &g) in grads.layers[l].bias.iter_mut().zip(d_pre.row(i)) {
                *b += g;
            }
        }
        if l > 0 {
            let w_t = params.layers[l].weights.transposed();
            let mut d_prev = d_pre.matmul(&w_t);
            // the regularizer acts directly on the decision activations
            if l == num_layers - 1 {
                if let Some(reg) = &d_features_reg {
                    for (d, &r) in d_prev.data_mut().iter_mut().zip(reg.data()) {
                        *d += r;
                    }
                }
            }
            d_post = d_prev;
        } else {
            d_post = d_pre;
        }
    }

    Ok((
        LossBreakdown {
            total,
            cross_entropy,
            regularizer,
            missing_target_samples: missing,
        },
        grads,
    ))
}

/// In-place gradient descent step: `params -= lr * grads`.
pub fn sgd_step(params: &mut Parameters, grads: &Parameters, lr: f64) {
    for (layer, glayer) in params.layers.iter_mut().zip(&grads.layers) {
        for (w, &g) in layer.weights.data_mut().iter_mut().zip(glayer.weights.data()) {
            *w -= lr * g;
        }
        for (b, &g) in layer.bias.iter_mut().zip(&glayer.bias) {
            *b -= lr * g;
        }
    }
}
