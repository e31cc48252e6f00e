//! A small MLP classifier with hand-written backprop, and the gradient-based
//! attribution methods computed against it.
//!
//! All attributions target the pre-softmax logit `F^c` of a class `c`.

use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::resample::Heatmap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    #[default]
    Tanh,
    Softplus,
}

impl HiddenActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => z.tanh(),
            HiddenActivation::Softplus => {
                if z > 30.0 {
                    z
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            HiddenActivation::Softplus => 1.0 / (1.0 + (-z).exp()),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            HiddenActivation::Tanh => 0,
            HiddenActivation::Softplus => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(HiddenActivation::Tanh),
            1 => Some(HiddenActivation::Softplus),
            _ => None,
        }
    }
}

/// `y = W x + b` with `W` of shape `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpClassifier {
    layers: Vec<DenseLayer>,
    activation: HiddenActivation,
    /// Accuracy on the training set, when trained here.
    pub train_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub predicted: usize,
}

struct Trace {
    /// Input of every layer; `inputs[0]` is `x`.
    inputs: Vec<Array1<f64>>,
    /// Pre-activations of every hidden layer.
    pre: Vec<Array1<f64>>,
    logits: Array1<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl MlpClassifier {
    pub fn new(layers: Vec<DenseLayer>, activation: HiddenActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("classifier needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::invalid(format!("layer {i}: bias length mismatch")));
            }
            if i > 0 && layers[i - 1].weights.nrows() != l.weights.ncols() {
                return Err(Error::invalid(format!("layer {i}: input width mismatch")));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self {
            layers,
            activation,
            train_accuracy: None,
        })
    }

    /// Xavier-uniform weights and zero biases for layer widths `dims`.
    pub fn random<R: Rng + ?Sized>(
        dims: &[usize],
        activation: HiddenActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid("classifier dims must be >= 2 positive widths"));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                DenseLayer {
                    weights: Array2::from_shape_fn((w[1], w[0]), |_| {
                        rng.random_range(-limit..limit)
                    }),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self::new(layers, activation)
    }

    /// Single-layer model: `logits = W x + b`.
    pub fn linear(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        Self::new(vec![DenseLayer { weights, bias }], HiddenActivation::Tanh)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn activation(&self) -> HiddenActivation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.weights.nrows()));
        d
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let last = self.layers.len() - 1;
        let mut h = Array1::from(x.to_vec());
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.weights.dot(&h) + &layer.bias;
            inputs.push(h);
            if i == last {
                return Trace {
                    inputs,
                    pre,
                    logits: z,
                };
            }
            h = z.mapv(|v| self.activation.apply(v));
            pre.push(z);
        }
        unreachable!("at least one layer")
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        check_dim(self.input_dim(), x.len())?;
        let logits = self.trace(x).logits.to_vec();
        let probs = softmax(&logits);
        let predicted = argmax(&logits);
        Ok(Forward {
            logits,
            probs,
            predicted,
        })
    }

    pub fn logit(&self, x: &[f64], class: usize) -> Result<f64> {
        self.check_class(class)?;
        Ok(self.forward(x)?.logits[class])
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes() {
            return Err(Error::Index {
                index: class,
                len: self.num_classes(),
            });
        }
        Ok(())
    }

    /// Backpropagates `d loss / d logits` through the network. Returns the
    /// input gradient and, if requested, parameter gradients per layer.
    fn backward(
        &self,
        trace: &Trace,
        dlogits: Array1<f64>,
        want_params: bool,
    ) -> (Array1<f64>, Vec<(Array2<f64>, Array1<f64>)>) {
        let mut delta = dlogits;
        let mut params = Vec::new();
        for i in (0..self.layers.len()).rev() {
            if want_params {
                let col = delta.view().insert_axis(Axis(1));
                let row = trace.inputs[i].view().insert_axis(Axis(0));
                params.push((col.dot(&row), delta.clone()));
            }
            let back = self.layers[i].weights.t().dot(&delta);
            delta = if i > 0 {
                ndarray::Zip::from(&back)
                    .and(&trace.pre[i - 1])
                    .map_collect(|&b, &z| b * self.activation.derivative(z))
            } else {
                back
            };
        }
        params.reverse();
        (delta, params)
    }

    /// `∂F^c / ∂x` by manual backprop.
    pub fn logit_gradient(&self, x: &[f64], class: usize) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        self.check_class(class)?;
        let trace = self.trace(x);
        let mut seed = Array1::zeros(self.num_classes());
        seed[class] = 1.0;
        Ok(self.backward(&trace, seed, false).0.to_vec())
    }
}

/// Synthetic or loaded image classification data.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Heatmap>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Ground-truth discriminative pixels per class (synthetic data only).
    pub planted_masks: Option<Vec<Vec<usize>>>,
}

impl Dataset {
    pub fn new(images: Vec<Heatmap>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Dimension {
                expected: images.len(),
                got: labels.len(),
            });
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {l} >= num_classes {num_classes}")));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|im| !im.same_dims(first)) {
                return Err(Error::invalid("images have different dims"));
            }
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            planted_masks: None,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Ground-truth mask for image `i`, if the dataset has one.
    pub fn planted_mask(&self, i: usize) -> Option<&[usize]> {
        self.planted_masks
            .as_ref()
            .map(|m| m[self.labels[i]].as_slice())
    }
}

/// Parameters of the two-class planted-patch dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedConfig {
    pub n_images: usize,
    pub side: usize,
    pub patch_side: usize,
    /// Added to the background inside the class patch (then clamped to 1).
    pub intensity: f64,
    /// Background pixels are `U[0, background)`.
    pub background: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_images: 200,
            side: 16,
            patch_side: 3,
            intensity: 0.6,
            background: 0.4,
            seed: 0,
        }
    }
}

/// Top-left corner of the class patch: class 0 sits near the top-left
/// quadrant centre, class 1 mirrored toward the bottom-right.
fn patch_origin(class: usize, side: usize, patch: usize) -> usize {
    let near = (side / 4).saturating_sub(patch / 2);
    if class == 0 {
        near
    } else {
        side - near - patch
    }
}

pub fn make_planted_dataset(
    n_images: usize,
    side: usize,
    patch_side: usize,
    seed: u64,
) -> Result<Dataset> {
    make_planted_dataset_with(&PlantedConfig {
        n_images,
        side,
        patch_side,
        seed,
        ..PlantedConfig::default()
    })
}

/// Two classes that differ only by a bright square patch at a class-specific
/// fixed location over uniform background noise. Labels alternate 0, 1, ...
pub fn make_planted_dataset_with(cfg: &PlantedConfig) -> Result<Dataset> {
    if cfg.patch_side == 0 || cfg.patch_side >= cfg.side {
        return Err(Error::invalid(format!(
            "patch side {} must be in 1..{}",
            cfg.patch_side, cfg.side
        )));
    }
    if !(0.0..=1.0).contains(&cfg.background) || !(0.0..=1.0).contains(&cfg.intensity) {
        return Err(Error::invalid("background and intensity must lie in [0, 1]"));
    }
    let side = cfg.side;
    let masks: Vec<Vec<usize>> = (0..2)
        .map(|class| {
            let o = patch_origin(class, side, cfg.patch_side);
            let mut m = Vec::with_capacity(cfg.patch_side * cfg.patch_side);
            for r in o..o + cfg.patch_side {
                for c in o..o + cfg.patch_side {
                    m.push(r * side + c);
                }
            }
            m
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut images = Vec::with_capacity(cfg.n_images);
    let mut labels = Vec::with_capacity(cfg.n_images);
    for i in 0..cfg.n_images {
        let label = i % 2;
        let mut px: Vec<f64> = (0..side * side)
            .map(|_| rng.random::<f64>() * cfg.background)
            .collect();
        for &p in &masks[label] {
            px[p] = (px[p] + cfg.intensity).min(1.0);
        }
        images.push(Heatmap::new(side, side, px)?);
        labels.push(label);
    }
    let mut ds = Dataset::new(images, labels, 2)?;
    ds.planted_masks = Some(masks);
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub activation: HiddenActivation,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: HiddenActivation::Tanh,
            epochs: 20,
            lr: 0.05,
            seed: 0,
        }
    }
}

/// Per-sample SGD on softmax cross-entropy, shuffling every epoch.
pub fn train_classifier(data: &Dataset, cfg: &ClassifierConfig) -> Result<MlpClassifier> {
    let first = data
        .images
        .first()
        .ok_or_else(|| Error::invalid("cannot train on an empty dataset"))?;
    let mut dims = vec![first.len()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(data.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut clf = MlpClassifier::random(&dims, cfg.activation, &mut rng)?;
    if cfg.epochs == 0 {
        return Ok(clf);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for &i in &order {
            let trace = clf.trace(data.images[i].values());
            let probs = softmax(trace.logits.as_slice().unwrap());
            loss -= probs[data.labels[i]].max(1e-300).ln();
            let mut dlogits = Array1::from(probs);
            dlogits[data.labels[i]] -= 1.0;
            let (_, grads) = clf.backward(&trace, dlogits, true);
            for (layer, (gw, gb)) in clf.layers.iter_mut().zip(grads) {
                layer.weights.scaled_add(-cfg.lr, &gw);
                layer.bias.scaled_add(-cfg.lr, &gb);
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("classifier loss diverged at epoch {epoch}")));
        }
        log::debug!("classifier epoch {epoch}: mean loss {:.4}", loss / data.len() as f64);
    }
    clf.train_accuracy = Some(accuracy(&clf, data)?);
    Ok(clf)
}

pub fn accuracy(clf: &MlpClassifier, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (im, &l) in data.images.iter().zip(&data.labels) {
        if clf.forward(im.values())?.predicted == l {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Vanilla gradient `∂F^c/∂x_i`.
pub fn input_gradient(clf: &MlpClassifier, x: &[f64], class: usize) -> Result<Vec<f64>> {
    clf.logit_gradient(x, class)
}

/// Integrated gradients along the straight path from `baseline` (all zeros
/// when `None`) to `x`, using a midpoint Riemann sum with `steps` points.
pub fn integrated_gradients(
    clf: &MlpClassifier,
    x: &[f64],
    class: usize,
    baseline: Option<&[f64]>,
    steps: usize,
) -> Result<Vec<f64>> {
    check_dim(clf.input_dim(), x.len())?;
    if steps == 0 {
        return Err(Error::invalid("integrated gradients needs at least one step"));
    }
    let zeros;
    let base = match baseline {
        Some(b) => {
            check_dim(x.len(), b.len())?;
            b
        }
        None => {
            zeros = vec![0.0; x.len()];
            &zeros
        }
    };
    let diff: Vec<f64> = x.iter().zip(base).map(|(a, b)| a - b).collect();
    let mut total = vec![0.0; x.len()];
    let mut point = vec![0.0; x.len()];
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) / steps as f64;
        for ((p, b), d) in point.iter_mut().zip(base).zip(&diff) {
            *p = b + alpha * d;
        }
        let g = clf.logit_gradient(&point, class)?;
        for (t, gi) in total.iter_mut().zip(g) {
            *t += gi;
        }
    }
    Ok(total
        .iter()
        .zip(&diff)
        .map(|(t, d)| d * t / steps as f64)
        .collect())
}

/// Mean of integrated gradients (zero baseline) over `samples` noisy copies
/// `x + n_j`, `n_j ~ N(0, sigma²)`. With `sigma = None` the noise scale is 10%
/// of the input's value range. A zero noise scale returns plain IG.
pub fn smooth_integrated_gradients(
    clf: &MlpClassifier,
    x: &[f64],
    class: usize,
    samples: usize,
    sigma: Option<f64>,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_dim(clf.input_dim(), x.len())?;
    if samples == 0 {
        return Err(Error::invalid("smooth IG needs at least one sample"));
    }
    let sigma = sigma.unwrap_or_else(|| {
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
        0.1 * (max - min)
    });
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid(format!("noise scale must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return integrated_gradients(clf, x, class, None, steps);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = vec![0.0; x.len()];
    for _ in 0..samples {
        let noisy: Vec<f64> = x.iter().map(|v| v + normal.sample(&mut rng)).collect();
        let ig = integrated_gradients(clf, &noisy, class, None, steps)?;
        for (t, v) in total.iter_mut().zip(ig) {
            *t += v;
        }
    }
    Ok(total.into_iter().map(|t| t / samples as f64).collect())
}

/// `x_i · ∂F^c/∂x_i`.
pub fn input_times_gradient(clf: &MlpClassifier, x: &[f64], class: usize) -> Result<Vec<f64>> {
    let g = clf.logit_gradient(x, class)?;
    Ok(g.iter().zip(x).map(|(g, x)| g * x).collect())
}

/// How raw signed attributions are mapped into `[0,1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `|v|`, then min-max.
    #[default]
    Absolute,
    /// Min-max on the signed values.
    Signed,
}

/// `|raw|` min-max scaled to `[0,1]`; constant maps become all zeros.
pub fn normalize_heatmap(raw: &[f64], height: usize, width: usize) -> Result<Heatmap> {
    normalize_heatmap_with(raw, height, width, Normalization::Absolute)
}

pub fn normalize_heatmap_with(
    raw: &[f64],
    height: usize,
    width: usize,
    mode: Normalization,
) -> Result<Heatmap> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("attribution contains non-finite values".into()));
    }
    let vals: Vec<f64> = match mode {
        Normalization::Absolute => raw.iter().map(|v| v.abs()).collect(),
        Normalization::Signed => raw.to_vec(),
    };
    Heatmap::new(height, width, min_max(&vals))
}

pub(crate) fn min_max(vals: &[f64]) -> Vec<f64> {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 0.0) {
        return vec![0.0; vals.len()];
    }
    vals.iter().map(|v| ((v - min) / range).clamp(0.0, 1.0)).collect()
}

/// Baseline attribution methods available to the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Vg,
    Ig,
    Sg,
    Ixg,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Vg => "vg",
            BaselineMethod::Ig => "ig",
            BaselineMethod::Sg => "sg",
            BaselineMethod::Ixg => "ixg",
        }
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vg" => Ok(BaselineMethod::Vg),
            "ig" => Ok(BaselineMethod::Ig),
            "sg" => Ok(BaselineMethod::Sg),
            "ixg" => Ok(BaselineMethod::Ixg),
            other => Err(Error::invalid(format!("unknown attribution method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineOptions {
    pub ig_steps: usize,
    pub sg_samples: usize,
    /// Absolute noise scale; `None` uses 10% of the input range.
    pub sg_sigma: Option<f64>,
    pub normalization: Normalization,
    pub seed: u64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            ig_steps: 50,
            sg_samples: 25,
            sg_sigma: None,
            normalization: Normalization::Absolute,
            seed: 0,
        }
    }
}

/// Raw (signed) attribution of `method` for class `class`.
pub fn raw_attribution(
    method: BaselineMethod,
    clf: &MlpClassifier,
    x: &[f64],
    class: usize,
    opts: &BaselineOptions,
) -> Result<Vec<f64>> {
    match method {
        BaselineMethod::Vg => input_gradient(clf, x, class),
        BaselineMethod::Ig => integrated_gradients(clf, x, class, None, opts.ig_steps),
        BaselineMethod::Sg => smooth_integrated_gradients(
            clf,
            x,
            class,
            opts.sg_samples,
            opts.sg_sigma,
            opts.ig_steps,
            opts.seed,
        ),
        BaselineMethod::Ixg => input_times_gradient(clf, x, class),
    }
}

/// Normalized baseline heatmap for the classifier's predicted class.
pub fn baseline_heatmap(
    method: BaselineMethod,
    clf: &MlpClassifier,
    image: &Heatmap,
    opts: &BaselineOptions,
) -> Result<Heatmap> {
    let class = clf.forward(image.values())?.predicted;
    let raw = raw_attribution(method, clf, image.values(), class, opts)?;
    normalize_heatmap_with(&raw, image.height(), image.width(), opts.normalization)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn random_clf(seed: u64, dims: &[usize]) -> MlpClassifier {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut clf = MlpClassifier::random(dims, HiddenActivation::Tanh, &mut rng).unwrap();
        for l in &mut clf.layers {
            l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        clf
    }

    #[test]
    fn forward_examples() {
        let zero = MlpClassifier::linear(Array2::zeros((2, 3)), Array1::zeros(2)).unwrap();
        let f = zero.forward(&[0.2, 0.3, 0.4]).unwrap();
        assert_eq!(f.probs, vec![0.5, 0.5]);
        assert_eq!(f.predicted, 0);

        // logits (1, 0) -> p0 = e / (e + 1)
        let lin = MlpClassifier::linear(array![[1.0, 0.0], [0.0, 0.0]], array![0.0, 0.0]).unwrap();
        let f = lin.forward(&[1.0, 0.5]).unwrap();
        let e = 1f64.exp();
        assert_abs_diff_eq!(f.probs[0], e / (e + 1.0), epsilon = 1e-15);

        let clf = random_clf(1, &[5, 4, 3]);
        let p = clf.forward(&[0.1, 0.9, 0.3, 0.3, 0.5]).unwrap().probs;
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(matches!(clf.forward(&[0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn linear_gradients() {
        let w = array![[0.5, -1.0, 2.0], [0.0, 0.0, 0.0]];
        let clf = MlpClassifier::linear(w.clone(), array![0.1, 0.0]).unwrap();
        let x = [0.3, 0.6, 0.9];
        assert_eq!(input_gradient(&clf, &x, 0).unwrap(), w.row(0).to_vec());
        let ig = integrated_gradients(&clf, &x, 0, None, 7).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(ig[i], w[[0, i]] * x[i], epsilon = 1e-15);
        }
        let ixg = input_times_gradient(&clf, &x, 0).unwrap();
        assert_eq!(ixg, vec![0.5 * 0.3, -0.6, 2.0 * 0.9]);
        assert_eq!(input_times_gradient(&clf, &[0.0; 3], 0).unwrap(), vec![0.0; 3]);

        let zero = MlpClassifier::linear(Array2::zeros((2, 3)), Array1::zeros(2)).unwrap();
        assert_eq!(input_gradient(&zero, &x, 1).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn vg_matches_finite_differences() {
        let clf = random_clf(9, &[6, 5, 4, 3]);
        let x = [0.1, 0.4, 0.7, 0.2, 0.9, 0.5];
        for c in 0..3 {
            let g = input_gradient(&clf, &x, c).unwrap();
            for i in 0..6 {
                let h = 1e-5;
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = (clf.logit(&xp, c).unwrap() - clf.logit(&xm, c).unwrap()) / (2.0 * h);
                let rel = (g[i] - fd).abs() / fd.abs().max(1e-8);
                assert!(rel <= 1e-4, "class {c} coord {i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn ig_zero_path_and_completeness() {
        let clf = random_clf(4, &[4, 6, 2]);
        let x = [0.3, 0.8, 0.1, 0.6];
        assert_eq!(
            integrated_gradients(&clf, &x, 0, Some(&x), 10).unwrap(),
            vec![0.0; 4]
        );
        let ig = integrated_gradients(&clf, &x, 1, None, 300).unwrap();
        let lhs: f64 = ig.iter().sum();
        let rhs = clf.logit(&x, 1).unwrap() - clf.logit(&[0.0; 4], 1).unwrap();
        assert!((lhs - rhs).abs() <= 0.01 * rhs.abs() + 1e-8);
    }

    #[test]
    fn smooth_ig_degenerate_and_deterministic() {
        let clf = random_clf(5, &[4, 3, 2]);
        let x = [0.3, 0.8, 0.1, 0.6];
        let ig = integrated_gradients(&clf, &x, 0, None, 20).unwrap();
        assert_eq!(smooth_integrated_gradients(&clf, &x, 0, 5, Some(0.0), 20, 3).unwrap(), ig);
        let a = smooth_integrated_gradients(&clf, &x, 0, 1, Some(0.1), 20, 3).unwrap();
        let b = smooth_integrated_gradients(&clf, &x, 0, 1, Some(0.1), 20, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ig);
    }

    #[test]
    fn smooth_ig_linear_expectation() {
        // For F = w·x, SG_i = w_i (x_i + mean noise_i); the sample mean is
        // within 3 sigma / sqrt(N) of w_i x_i.
        let w = array![[0.5, -1.0, 2.0]];
        let clf = MlpClassifier::linear(w.clone(), array![0.0]).unwrap();
        let x = [0.3, 0.6, 0.9];
        let (n, sigma) = (400, 0.2);
        let sg = smooth_integrated_gradients(&clf, &x, 0, n, Some(sigma), 4, 11).unwrap();
        for i in 0..3 {
            let tol = 3.0 * sigma * w[[0, i]].abs() / (n as f64).sqrt();
            assert!((sg[i] - w[[0, i]] * x[i]).abs() <= tol);
        }
    }

    #[test]
    fn normalization_examples() {
        let h = normalize_heatmap(&[-2.0, 0.0, 2.0], 1, 3).unwrap();
        assert_eq!(h.values(), &[1.0, 0.0, 1.0]);
        let h = normalize_heatmap(&[0.3, 0.3], 1, 2).unwrap();
        assert_eq!(h.values(), &[0.0, 0.0]);
        let h = normalize_heatmap(&[1.0, 2.0, 3.0], 1, 3).unwrap();
        assert_eq!(h.values(), &[0.0, 0.5, 1.0]);
        assert!(matches!(
            normalize_heatmap(&[f64::NAN, 1.0], 1, 2),
            Err(Error::Numerical(_))
        ));
        let s = normalize_heatmap_with(&[-2.0, 0.0, 2.0], 1, 3, Normalization::Signed).unwrap();
        assert_eq!(s.values(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn classifier_training() {
        let data = make_planted_dataset(60, 8, 2, 1).unwrap();
        let cfg = ClassifierConfig {
            epochs: 15,
            ..ClassifierConfig::default()
        };
        let a = train_classifier(&data, &cfg).unwrap();
        assert!(a.train_accuracy.unwrap() >= 0.95);
        let b = train_classifier(&data, &cfg).unwrap();
        assert_eq!(a, b);

        let untrained = train_classifier(&data, &ClassifierConfig { epochs: 0, ..cfg.clone() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fresh = MlpClassifier::random(&[64, 32, 2], HiddenActivation::Tanh, &mut rng).unwrap();
        assert_eq!(untrained, fresh);
    }

    #[test]
    fn planted_dataset_construction() {
        let ds = make_planted_dataset(10, 16, 3, 2).unwrap();
        let masks = ds.planted_masks.as_ref().unwrap();
        assert_eq!(masks[0].len(), 9);
        assert_eq!(masks[1].len(), 9);
        assert!(masks[0].iter().all(|p| !masks[1].contains(p)));
        assert_eq!(ds, make_planted_dataset(10, 16, 3, 2).unwrap());
        assert!(make_planted_dataset(4, 4, 4, 0).is_err());
    }

    #[test]
    fn background_only_is_indistinguishable() {
        let cfg = PlantedConfig {
            n_images: 400,
            intensity: 0.0,
            side: 8,
            patch_side: 2,
            seed: 5,
            ..PlantedConfig::default()
        };
        let train = make_planted_dataset_with(&cfg).unwrap();
        let test = make_planted_dataset_with(&PlantedConfig { seed: 6, ..cfg }).unwrap();
        let clf = train_classifier(&train, &ClassifierConfig::default()).unwrap();
        let acc = accuracy(&clf, &test).unwrap();
        assert!((acc - 0.5).abs() <= 0.1, "held-out accuracy {acc}");
    }
}
