//! Deep submodular functions.
//!
//! A [`DsfNetwork`] is a bias-free feedforward network with non-negative
//! weights and a concave, non-decreasing activation after every layer but the
//! last. Restricted to indicator vectors it is a normalized monotone
//! submodular set function; on `[0,1]^n` the same forward pass is a concave
//! extension of that set function.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::submax::SetFunction;

/// Pre-activations below this value get a zero sqrt derivative.
pub const SQRT_GRAD_EPS: f64 = 1e-12;

/// Rows per block when evaluating candidate batches. Fixed so that results do
/// not depend on the number of worker threads.
const BATCH_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sqrt,
    Log1p,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        // Non-positive inputs only arise from signed zeros; map them to +0.
        if z > 0.0 {
            match self {
                Activation::Sqrt => z.sqrt(),
                Activation::Log1p => z.ln_1p(),
            }
        } else {
            0.0
        }
    }

    /// Derivative used by backprop. The sqrt branch is clamped to 0 near the
    /// origin.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sqrt => {
                if z < SQRT_GRAD_EPS {
                    0.0
                } else {
                    0.5 / z.sqrt()
                }
            }
            Activation::Log1p => 1.0 / (1.0 + z.max(0.0)),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Sqrt => 0,
            Activation::Log1p => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Sqrt),
            1 => Some(Activation::Log1p),
            _ => None,
        }
    }
}

/// Layer widths and activation. `layer_dims[0]` is the number of features and
/// the last entry is always 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DsfArchitecture {
    layer_dims: Vec<usize>,
    activation: Activation,
}

impl DsfArchitecture {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::UnsupportedArchitecture(format!(
                "need at least 2 layer dims, got {}",
                layer_dims.len()
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::UnsupportedArchitecture(
                "layer dims must be positive".into(),
            ));
        }
        if *layer_dims.last().unwrap() != 1 {
            return Err(Error::UnsupportedArchitecture(
                "last layer dim must be 1".into(),
            ));
        }
        Ok(Self {
            layer_dims,
            activation,
        })
    }

    /// `[input_dim, hidden..., 1]` with sqrt activations.
    pub fn with_hidden(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self::new(dims, Activation::Sqrt)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_weight_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }
}

impl Default for DsfArchitecture {
    fn default() -> Self {
        Self {
            layer_dims: vec![784, 512, 256, 32, 1],
            activation: Activation::Sqrt,
        }
    }
}

/// Per-layer weight matrices; layer `i` has shape `(dims[i + 1], dims[i])`.
#[derive(Clone, Debug, PartialEq)]
pub struct DsfNetwork {
    arch: DsfArchitecture,
    weights: Vec<Array2<f64>>,
}

/// Gradient of the network output with respect to every weight, laid out like
/// [`DsfNetwork::weights`].
#[derive(Clone, Debug, PartialEq)]
pub struct WeightGradient {
    pub layers: Vec<Array2<f64>>,
}

impl WeightGradient {
    pub fn zeros_like(net: &DsfNetwork) -> Self {
        Self {
            layers: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &WeightGradient, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.scaled_add(scale, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.layers {
            a.mapv_inplace(|v| v * s);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| l.iter().all(|&v| v == 0.0))
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.iter())
    }
}

/// Clamps every weight to `max(0, w)`. Negative zeros and NaNs become `+0.0`.
pub fn project_nonneg(weights: &mut [Array2<f64>]) {
    for layer in weights {
        layer.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
    }
}

struct ForwardTrace {
    /// Input to each layer; `inputs[0]` is `x`.
    inputs: Vec<Array1<f64>>,
    /// Pre-activations of every non-final layer.
    pre: Vec<Array1<f64>>,
    output: f64,
}

impl DsfNetwork {
    /// Builds a network from explicit weights, validating shapes and the
    /// non-negativity constraint.
    pub fn new(arch: DsfArchitecture, weights: Vec<Array2<f64>>) -> Result<Self> {
        if weights.len() != arch.num_weight_layers() {
            return Err(Error::Dimension {
                expected: arch.num_weight_layers(),
                got: weights.len(),
            });
        }
        for (i, w) in weights.iter().enumerate() {
            let shape = (arch.layer_dims[i + 1], arch.layer_dims[i]);
            if w.dim() != shape {
                return Err(Error::invalid(format!(
                    "layer {i} has shape {:?}, expected {shape:?}",
                    w.dim()
                )));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Domain(format!(
                    "layer {i} has negative or non-finite weights"
                )));
            }
        }
        Ok(Self { arch, weights })
    }

    /// Every weight set to `value` (the trainer starts from all ones).
    pub fn constant(arch: DsfArchitecture, value: f64) -> Self {
        let weights = Self::shapes(&arch)
            .map(|(r, c)| Array2::from_elem((r, c), value.max(0.0)))
            .collect();
        Self { arch, weights }
    }

    /// Weights drawn i.i.d. from `U[0, scale)`.
    pub fn random<R: Rng + ?Sized>(arch: DsfArchitecture, scale: f64, rng: &mut R) -> Self {
        let weights = Self::shapes(&arch)
            .map(|(r, c)| Array2::from_shape_fn((r, c), |_| rng.random::<f64>() * scale))
            .collect();
        Self { arch, weights }
    }

    fn shapes(arch: &DsfArchitecture) -> impl Iterator<Item = (usize, usize)> + '_ {
        arch.layer_dims.windows(2).map(|w| (w[1], w[0]))
    }

    pub fn arch(&self) -> &DsfArchitecture {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    /// Clamps all weights to be non-negative.
    pub fn project_nonneg(&mut self) {
        project_nonneg(&mut self.weights);
    }

    pub fn squared_norm(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .map(|v| v * v)
            .sum()
    }

    fn validate_input(&self, x: &[f64]) -> Result<()> {
        check_dim(self.input_dim(), x.len())?;
        if let Some((i, v)) = x
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Domain(format!("x[{i}] = {v} is outside [0, 1]")));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], keep_trace: bool) -> ForwardTrace {
        let act = self.arch.activation;
        let last = self.weights.len() - 1;
        let mut h = Array1::from(x.to_vec());
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        for (l, w) in self.weights.iter().enumerate() {
            let z = w.dot(&h);
            if keep_trace {
                inputs.push(h);
            }
            if l == last {
                return ForwardTrace {
                    inputs,
                    pre,
                    output: z[0],
                };
            }
            h = z.mapv(|v| act.apply(v));
            if keep_trace {
                pre.push(z);
            }
        }
        unreachable!("architecture has at least one weight layer")
    }

    /// The concave extension `f_ext(x)` for `x` in `[0,1]^n`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.validate_input(x)?;
        Ok(self.forward(x, false).output)
    }

    /// `f(A)`, i.e. [`evaluate`](Self::evaluate) on the indicator of `set`.
    pub fn evaluate_set(&self, set: &[usize]) -> Result<f64> {
        let x = self.indicator(set)?;
        Ok(self.forward(&x, false).output)
    }

    pub fn indicator(&self, set: &[usize]) -> Result<Vec<f64>> {
        let n = self.input_dim();
        let mut x = vec![0.0; n];
        for &i in set {
            if i >= n {
                return Err(Error::Index { index: i, len: n });
            }
            x[i] = 1.0;
        }
        Ok(x)
    }

    /// `f(e | A) = f(A ∪ {e}) - f(A)`.
    pub fn marginal_gain(&self, e: usize, set: &[usize]) -> Result<f64> {
        if set.contains(&e) {
            return Err(Error::invalid(format!("element {e} is already in the set")));
        }
        let mut with = set.to_vec();
        with.push(e);
        Ok(self.evaluate_set(&with)? - self.evaluate_set(set)?)
    }

    /// Analytic gradient of `f_ext(x)` with respect to every weight.
    pub fn weight_gradient(&self, x: &[f64]) -> Result<WeightGradient> {
        Ok(self.value_and_gradient(x)?.1)
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, WeightGradient)> {
        check_dim(self.input_dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite input".into()));
        }
        let act = self.arch.activation;
        let trace = self.forward(x, true);
        let mut layers = vec![Array2::zeros((0, 0)); self.weights.len()];
        // d output / d (pre-activation of layer l), starting from the scalar output.
        let mut delta = Array1::from_elem(1, 1.0);
        for l in (0..self.weights.len()).rev() {
            let input = &trace.inputs[l];
            layers[l] = outer(&delta, input);
            if l > 0 {
                let back = self.weights[l].t().dot(&delta);
                delta = ndarray::Zip::from(&back)
                    .and(&trace.pre[l - 1])
                    .map_collect(|&b, &z| b * act.derivative(z));
            }
        }
        Ok((trace.output, WeightGradient { layers }))
    }

    /// Evaluates every row of `xs` (shape `batch × n`) with one matrix product
    /// per layer.
    pub fn evaluate_batch(&self, xs: ArrayView2<f64>) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), xs.ncols())?;
        if xs.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("batch contains values outside [0, 1]".into()));
        }
        let rows: Vec<usize> = (0..xs.nrows()).collect();
        Ok(rows
            .par_chunks(BATCH_CHUNK)
            .map(|chunk| {
                let block = xs.slice(ndarray::s![chunk[0]..chunk[0] + chunk.len(), ..]);
                let z = block.dot(&self.weights[0].t());
                self.finish_batch(z)
            })
            .collect::<Vec<_>>()
            .concat())
    }

    /// Runs layers `1..` on first-layer pre-activations `z` (one row per input).
    fn finish_batch(&self, mut z: Array2<f64>) -> Vec<f64> {
        let act = self.arch.activation;
        for w in &self.weights[1..] {
            z.mapv_inplace(|v| act.apply(v));
            z = z.dot(&w.t());
        }
        z.index_axis(Axis(1), 0).to_vec()
    }

    /// `f(base ∪ {v})` for each candidate `v`. The first layer is applied
    /// incrementally: the base column sum is shared by every candidate row.
    pub fn extension_values(&self, base: &[usize], candidates: &[usize]) -> Vec<f64> {
        let w1 = &self.weights[0];
        let mut base_pre = Array1::<f64>::zeros(w1.nrows());
        for &a in base {
            base_pre += &w1.column(a);
        }
        let w1t = w1.t().as_standard_layout().into_owned();
        candidates
            .par_chunks(BATCH_CHUNK)
            .map(|chunk| {
                let mut z = Array2::<f64>::zeros((chunk.len(), w1.nrows()));
                for (mut row, &v) in z.outer_iter_mut().zip(chunk) {
                    row.assign(&base_pre);
                    row += &w1t.row(v);
                }
                self.finish_batch(z)
            })
            .collect::<Vec<_>>()
            .concat()
    }

    /// Closed-form Lipschitz estimate for 4-layer sqrt networks:
    /// `prod_i (sum of layer i weights)^(1 / 2^(5-i)) / 7`.
    ///
    /// The sqrt activation has unbounded slope at the origin, so this holds for
    /// inputs away from the all-zero corner rather than on all of `[0,1]^n`.
    pub fn lipschitz_bound(&self) -> Result<f64> {
        if self.arch.num_weight_layers() != 4 || self.arch.activation != Activation::Sqrt {
            return Err(Error::UnsupportedArchitecture(
                "closed-form bound needs exactly 4 weight layers with sqrt activation".into(),
            ));
        }
        let product: f64 = self
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| w.sum().powf(1.0 / f64::from(1u32 << (4 - i))))
            .product();
        Ok(product / 7.0)
    }

    /// `max |f(x) - f(y)| / ||x - y||` over `num_pairs` uniform random pairs in
    /// `[0,1]^n`. Pairs closer than `1e-9` are skipped.
    pub fn empirical_lipschitz(&self, num_pairs: usize, seed: u64) -> Result<f64> {
        if num_pairs == 0 {
            return Err(Error::invalid("num_pairs must be at least 1"));
        }
        let n = self.input_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = 0.0f64;
        let mut remaining = num_pairs;
        while remaining > 0 {
            let b = remaining.min(1024);
            remaining -= b;
            let xs = Array2::from_shape_fn((b, n), |_| rng.random::<f64>());
            let ys = Array2::from_shape_fn((b, n), |_| rng.random::<f64>());
            let fx = self.evaluate_batch(xs.view())?;
            let fy = self.evaluate_batch(ys.view())?;
            for r in 0..b {
                let dist = xs
                    .row(r)
                    .iter()
                    .zip(ys.row(r))
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum::<f64>()
                    .sqrt();
                if dist < 1e-9 {
                    continue;
                }
                best = best.max((fx[r] - fy[r]).abs() / dist);
            }
        }
        Ok(best)
    }
}

impl SetFunction for DsfNetwork {
    fn ground_size(&self) -> usize {
        self.input_dim()
    }

    fn value(&self, set: &[usize]) -> f64 {
        self.evaluate_set(set).expect("set indices within ground set")
    }

    fn extension_values(&self, base: &[usize], candidates: &[usize]) -> Vec<f64> {
        DsfNetwork::extension_values(self, base, candidates)
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let col = a.view().insert_axis(Axis(1));
    let row = b.view().insert_axis(Axis(0));
    col.dot(&row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn tiny() -> DsfNetwork {
        let arch = DsfArchitecture::new(vec![2, 1, 1], Activation::Sqrt).unwrap();
        DsfNetwork::new(arch, vec![array![[1.0, 1.0]], array![[1.0]]]).unwrap()
    }

    fn tiny3() -> DsfNetwork {
        let arch = DsfArchitecture::new(vec![3, 1, 1], Activation::Sqrt).unwrap();
        DsfNetwork::new(arch, vec![array![[1.0, 1.0, 1.0]], array![[1.0]]]).unwrap()
    }

    #[test]
    fn evaluate_hand_computed() {
        let net = tiny();
        assert_abs_diff_eq!(net.evaluate(&[1.0, 1.0]).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(net.evaluate(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(net.evaluate(&[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn evaluate_rejects_bad_inputs() {
        let net = tiny();
        assert!(matches!(net.evaluate(&[1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(net.evaluate(&[1.5, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(net.evaluate(&[-0.1, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(net.evaluate(&[f64::NAN, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn set_evaluation() {
        let net = tiny();
        assert_eq!(net.evaluate_set(&[]).unwrap(), 0.0);
        assert_eq!(net.evaluate_set(&[0]).unwrap(), 1.0);
        assert_abs_diff_eq!(net.evaluate_set(&[0, 1]).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
        assert!(matches!(net.evaluate_set(&[2]), Err(Error::Index { index: 2, len: 2 })));
    }

    #[test]
    fn marginal_gains() {
        let net = tiny();
        assert_abs_diff_eq!(net.marginal_gain(1, &[0]).unwrap(), 2f64.sqrt() - 1.0, epsilon = 1e-15);
        assert_eq!(net.marginal_gain(1, &[]).unwrap(), net.evaluate_set(&[1]).unwrap());
        assert!(matches!(net.marginal_gain(0, &[0]), Err(Error::InvalidArgument(_))));

        // f(A) = sqrt(|A|): gain(2 | {0}) = sqrt2 - 1, gain(2 | {0,1}) = sqrt3 - sqrt2.
        let net = tiny3();
        let small = net.marginal_gain(2, &[0]).unwrap();
        let large = net.marginal_gain(2, &[0, 1]).unwrap();
        assert_abs_diff_eq!(small, 0.414214, epsilon = 1e-6);
        assert_abs_diff_eq!(large, 0.317837, epsilon = 1e-6);
        assert!(small >= large);
    }

    #[test]
    fn gradient_hand_computed() {
        let net = tiny();
        let g = net.weight_gradient(&[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(g.layers[1][[0, 0]], 2f64.sqrt(), epsilon = 1e-15);
        for j in 0..2 {
            assert_abs_diff_eq!(g.layers[0][[0, j]], 1.0 / (2.0 * 2f64.sqrt()), epsilon = 1e-15);
        }
        let g0 = net.weight_gradient(&[0.0, 0.0]).unwrap();
        assert!(g0.is_zero());
    }

    #[test]
    fn projection() {
        let mut w = vec![array![[-1.0, 2.0]]];
        project_nonneg(&mut w);
        assert_eq!(w[0], array![[0.0, 2.0]]);
        let before = w.clone();
        project_nonneg(&mut w);
        assert_eq!(w, before);

        let mut z = vec![array![[-0.0]]];
        project_nonneg(&mut z);
        assert!(z[0][[0, 0]].is_sign_positive());
    }

    #[test]
    fn lipschitz_closed_form() {
        let net = DsfNetwork::constant(DsfArchitecture::default(), 1.0);
        let expected = (401408f64.powf(1.0 / 16.0)
            * 131072f64.powf(1.0 / 8.0)
            * 8192f64.powf(0.25)
            * 32f64.sqrt())
            / 7.0;
        let got = net.lipschitz_bound().unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-9);
        // Independent evaluation of the same product in double precision.
        assert_abs_diff_eq!(got, 75.116_838_700_749_67, epsilon = 1e-9);

        let mut zeroed = net.clone();
        zeroed.weights_mut()[2].fill(0.0);
        assert_eq!(zeroed.lipschitz_bound().unwrap(), 0.0);

        assert!(matches!(tiny().lipschitz_bound(), Err(Error::UnsupportedArchitecture(_))));
    }

    #[test]
    fn empirical_lipschitz_basics() {
        let arch = DsfArchitecture::new(vec![6, 4, 3, 2, 1], Activation::Sqrt).unwrap();
        let zero = DsfNetwork::constant(arch, 0.0);
        assert_eq!(zero.empirical_lipschitz(100, 1).unwrap(), 0.0);
        assert!(zero.empirical_lipschitz(0, 1).is_err());
        let net = tiny();
        assert_eq!(
            net.empirical_lipschitz(500, 7).unwrap(),
            net.empirical_lipschitz(500, 7).unwrap()
        );
    }

    #[test]
    fn architecture_validation() {
        assert!(DsfArchitecture::new(vec![3], Activation::Sqrt).is_err());
        assert!(DsfArchitecture::new(vec![3, 0, 1], Activation::Sqrt).is_err());
        assert!(DsfArchitecture::new(vec![3, 2], Activation::Sqrt).is_err());
        assert_eq!(DsfArchitecture::default().layer_dims(), &[784, 512, 256, 32, 1]);
    }

    #[test]
    fn batched_paths_agree_with_single_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let arch = DsfArchitecture::new(vec![10, 6, 4, 1], Activation::Log1p).unwrap();
        let net = DsfNetwork::random(arch, 1.0, &mut rng);
        let xs = Array2::from_shape_fn((5, 10), |_| rng.random::<f64>());
        let batch = net.evaluate_batch(xs.view()).unwrap();
        for (r, v) in batch.iter().enumerate() {
            let single = net.evaluate(xs.row(r).as_slice().unwrap()).unwrap();
            assert_abs_diff_eq!(*v, single, epsilon = 1e-12);
        }
        let ext = net.extension_values(&[1, 4], &[0, 2, 9]);
        for (v, &c) in ext.iter().zip(&[0, 2, 9]) {
            assert_abs_diff_eq!(*v, net.evaluate_set(&[1, 4, c]).unwrap(), epsilon = 1e-12);
        }
    }
}
