//! Learning a DSF from attribution heatmaps.
//!
//! The objective combines a ridge term, a term rewarding high scores on the
//! real-valued heatmaps relative to the all-ones map, and a hinge term asking
//! every top-t binarization `H` to score at least as high as the greedy
//! maximizer `Ā` of the same cardinality:
//!
//! ```text
//! λ/2 ||w||² + λ1 Σ_i [f(H*) - f(H_i)] + λ2 Σ_{i,j} (δ + f(Ā_{B_ij}) - f(H_ij))⁺
//! ```
//!
//! It is minimized over `w >= 0` by projected subgradient steps with Adagrad
//! scaling. One greedy chain at the largest budget supplies `Ā` for every
//! binarized map in a step.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsf::{Activation, DsfArchitecture, DsfNetwork, WeightGradient};
use crate::error::{Error, Result};
use crate::resample::{binarize_top, threshold_grid, BinaryMap, Heatmap};
use crate::submax::{greedy_maximize, CountingEvaluator, GreedyChain};

const ADAGRAD_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Ridge coefficient.
    pub lambda: f64,
    /// Weight of the real-heatmap term.
    pub lambda1: f64,
    /// Weight of the binarized-map hinge term.
    pub lambda2: f64,
    /// Hinge margin.
    pub delta: f64,
    pub epochs: usize,
    /// Base Adagrad learning rate.
    pub lr: f64,
    /// Adagrad learning-rate decay: the step-`t` rate is `lr / (1 + t * lr_decay)`.
    pub lr_decay: f64,
    /// Added to the gradient as `weight_decay * w`.
    pub weight_decay: f64,
    /// Top-t cardinalities used to binarize each heatmap, ascending.
    pub thresholds: Vec<usize>,
    /// Hidden layer widths; the input width comes from the data.
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    /// Initial weights are `1 + U[0, init_jitter)`, drawn with `seed`.
    pub init_jitter: f64,
    pub seed: u64,
    /// Features that must receive attribution of at least `nonzero_epsilon`.
    pub nonzero_features: Vec<usize>,
    pub nonzero_epsilon: f64,
    /// Features that must receive zero attribution.
    pub zero_features: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            lambda1: 10.0,
            lambda2: 10.0,
            delta: 1e-5,
            epochs: 50,
            lr: 0.01,
            lr_decay: 0.1,
            weight_decay: 1e-6,
            thresholds: threshold_grid(10, 5, 50).expect("static grid"),
            hidden_dims: vec![512, 256, 32],
            activation: Activation::Sqrt,
            init_jitter: 0.0,
            seed: 0,
            nonzero_features: Vec::new(),
            nonzero_epsilon: 1e-3,
            zero_features: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let coefs = [
            ("lambda", self.lambda),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("delta", self.delta),
            ("lr_decay", self.lr_decay),
            ("weight_decay", self.weight_decay),
            ("init_jitter", self.init_jitter),
            ("nonzero_epsilon", self.nonzero_epsilon),
        ];
        for (name, v) in coefs {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if self.thresholds.is_empty() || self.thresholds.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("thresholds must be non-empty and ascending"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::invalid("hidden dims must be positive"));
        }
        if let Some(v) = self
            .zero_features
            .iter()
            .find(|v| self.nonzero_features.contains(v))
        {
            return Err(Error::invalid(format!(
                "feature {v} is required to be both zero and non-zero"
            )));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize) -> Result<DsfArchitecture> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(1);
        DsfArchitecture::new(dims, self.activation)
    }
}

/// Supervision for one DSF: `m` real heatmaps and their binarizations.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    real_maps: Vec<Heatmap>,
    binary_maps: Vec<BinaryMap>,
    h_star: Heatmap,
}

impl TrainingSet {
    pub fn new(real_maps: Vec<Heatmap>, binary_maps: Vec<BinaryMap>) -> Result<Self> {
        let first = real_maps
            .first()
            .ok_or_else(|| Error::invalid("training set needs at least one heatmap"))?;
        let (h, w) = (first.height(), first.width());
        for m in &real_maps {
            if !m.same_dims(first) {
                return Err(Error::Dimension {
                    expected: first.len(),
                    got: m.len(),
                });
            }
        }
        for b in &binary_maps {
            if b.height() != h || b.width() != w {
                return Err(Error::Dimension {
                    expected: first.len(),
                    got: b.len(),
                });
            }
        }
        Ok(Self {
            real_maps,
            binary_maps,
            h_star: Heatmap::ones(h, w),
        })
    }

    /// Binarizes every map at every threshold.
    pub fn from_heatmaps(maps: Vec<Heatmap>, thresholds: &[usize]) -> Result<Self> {
        let mut binary = Vec::with_capacity(maps.len() * thresholds.len());
        for m in &maps {
            for &t in thresholds {
                binary.push(binarize_top(m, t)?);
            }
        }
        Self::new(maps, binary)
    }

    pub fn real_maps(&self) -> &[Heatmap] {
        &self.real_maps
    }

    pub fn binary_maps(&self) -> &[BinaryMap] {
        &self.binary_maps
    }

    pub fn h_star(&self) -> &Heatmap {
        &self.h_star
    }

    pub fn input_dim(&self) -> usize {
        self.h_star.len()
    }

    pub fn height(&self) -> usize {
        self.h_star.height()
    }

    pub fn width(&self) -> usize {
        self.h_star.width()
    }

    /// Largest binarized cardinality; the greedy budget for a training step.
    pub fn max_budget(&self) -> usize {
        self.binary_maps.iter().map(|b| b.budget()).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    /// Objective (including sensitivity penalties) at the start of each epoch.
    pub objectives: Vec<f64>,
    /// Active hinge terms at the start of each epoch.
    pub active_hinges: Vec<usize>,
    /// Objective after the last update.
    pub final_objective: f64,
    pub final_active_hinges: usize,
    /// Greedy maximizations performed by the update steps.
    pub greedy_calls: usize,
    /// Batched DSF evaluations issued by those greedy calls.
    pub evaluator_batches: usize,
    #[serde(skip)]
    pub wall_time: Duration,
}

struct Eq2Eval {
    objective: f64,
    gradient: Option<WeightGradient>,
    active: usize,
}

fn check_input_dim(net: &DsfNetwork, data: &TrainingSet) -> Result<()> {
    crate::error::check_dim(net.input_dim(), data.input_dim())
}

/// `λ/2 ||w||² + Σ_i [f(H*) - f(H_i)] + (1 - f(H*))⁺`.
pub fn objective_eq1(net: &DsfNetwork, data: &TrainingSet, lambda: f64) -> Result<f64> {
    check_input_dim(net, data)?;
    let top = net.evaluate(data.h_star.values())?;
    let mut total = 0.5 * lambda * net.squared_norm();
    for h in &data.real_maps {
        total += top - net.evaluate(h.values())?;
    }
    Ok(total + (1.0 - top).max(0.0))
}

/// The hinge-regularized objective with `Ā` taken from a fresh greedy chain.
pub fn objective_eq2(net: &DsfNetwork, data: &TrainingSet, cfg: &TrainConfig) -> Result<f64> {
    let chain = greedy_maximize(net, data.max_budget())?;
    objective_eq2_with_chain(net, data, cfg, &chain)
}

/// The hinge-regularized objective with `Ā` frozen to prefixes of `chain`.
pub fn objective_eq2_with_chain(
    net: &DsfNetwork,
    data: &TrainingSet,
    cfg: &TrainConfig,
    chain: &GreedyChain,
) -> Result<f64> {
    Ok(eval_eq2(net, data, cfg, chain, false)?.objective)
}

/// A subgradient of the objective, with `Ā` from a fresh greedy chain.
pub fn subgradient_eq2(
    net: &DsfNetwork,
    data: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<WeightGradient> {
    let chain = greedy_maximize(net, data.max_budget())?;
    subgradient_eq2_with_chain(net, data, cfg, &chain)
}

/// `λw + λ1 Σ_i [∇f(H*) - ∇f(H_i)] + λ2 Σ_ij ρ_ij [∇f(Ā_ij) - ∇f(H_ij)]` with
/// `ρ_ij = 1` iff the hinge is active.
pub fn subgradient_eq2_with_chain(
    net: &DsfNetwork,
    data: &TrainingSet,
    cfg: &TrainConfig,
    chain: &GreedyChain,
) -> Result<WeightGradient> {
    Ok(eval_eq2(net, data, cfg, chain, true)?
        .gradient
        .expect("gradient requested"))
}

fn eval_eq2(
    net: &DsfNetwork,
    data: &TrainingSet,
    cfg: &TrainConfig,
    chain: &GreedyChain,
    want_grad: bool,
) -> Result<Eq2Eval> {
    check_input_dim(net, data)?;
    let eval = |x: &[f64]| -> Result<(f64, Option<WeightGradient>)> {
        if want_grad {
            let (v, g) = net.value_and_gradient(x)?;
            Ok((v, Some(g)))
        } else {
            Ok((net.evaluate(x)?, None))
        }
    };
    let mut grad = want_grad.then(|| {
        let mut g = WeightGradient {
            layers: net.weights().to_vec(),
        };
        g.scale(cfg.lambda);
        g
    });
    let mut objective = 0.5 * cfg.lambda * net.squared_norm();

    let (top, top_grad) = eval(data.h_star.values())?;
    let m = data.real_maps.len() as f64;
    objective += cfg.lambda1 * m * top;
    if let (Some(g), Some(tg)) = (grad.as_mut(), &top_grad) {
        g.add_scaled(tg, cfg.lambda1 * m);
    }
    for h in &data.real_maps {
        let (v, hg) = eval(h.values())?;
        objective -= cfg.lambda1 * v;
        if let (Some(g), Some(hg)) = (grad.as_mut(), &hg) {
            g.add_scaled(hg, -cfg.lambda1);
        }
    }

    // f(Ā_b) and its gradient, once per distinct budget.
    let mut greedy_terms: BTreeMap<usize, (f64, Option<WeightGradient>, usize)> = BTreeMap::new();
    for b in data.binary_maps.iter().map(|b| b.budget()) {
        let b = b.min(chain.len());
        if let std::collections::btree_map::Entry::Vacant(e) = greedy_terms.entry(b) {
            let x = net.indicator(chain.prefix(b))?;
            let (v, g) = eval(&x)?;
            e.insert((v, g, 0));
        }
    }
    let mut active = 0;
    for bm in &data.binary_maps {
        let b = bm.budget().min(chain.len());
        let (v, hg) = eval(&bm.to_indicator())?;
        let entry = greedy_terms.get_mut(&b).expect("budget cached");
        let hinge = cfg.delta + entry.0 - v;
        if hinge > 0.0 {
            active += 1;
            objective += cfg.lambda2 * hinge;
            entry.2 += 1;
            if let (Some(g), Some(hg)) = (grad.as_mut(), &hg) {
                g.add_scaled(hg, -cfg.lambda2);
            }
        }
    }
    if let Some(g) = grad.as_mut() {
        for (_, ag, count) in greedy_terms.values() {
            if *count > 0 {
                g.add_scaled(ag.as_ref().expect("gradient computed"), cfg.lambda2 * *count as f64);
            }
        }
    }
    Ok(Eq2Eval {
        objective,
        gradient: grad,
        active,
    })
}

/// Penalties enforcing the sensitivity constraints, each with weight 1:
/// `(ε - (f(1) - f(1 - e_i)))⁺` for every required non-zero feature `i` and
/// `f({v})` for every required zero feature `v`.
pub fn sensitivity_penalties(net: &DsfNetwork, cfg: &TrainConfig) -> Result<(f64, WeightGradient)> {
    let n = net.input_dim();
    if let Some(v) = cfg
        .zero_features
        .iter()
        .find(|v| cfg.nonzero_features.contains(v))
    {
        return Err(Error::invalid(format!(
            "feature {v} is required to be both zero and non-zero"
        )));
    }
    let mut grad = WeightGradient::zeros_like(net);
    let mut penalty = 0.0;
    if !cfg.nonzero_features.is_empty() {
        let ones = vec![1.0; n];
        let (full, full_grad) = net.value_and_gradient(&ones)?;
        for &i in &cfg.nonzero_features {
            if i >= n {
                return Err(Error::Index { index: i, len: n });
            }
            let mut without = ones.clone();
            without[i] = 0.0;
            let (v, g) = net.value_and_gradient(&without)?;
            let slack = cfg.nonzero_epsilon - (full - v);
            if slack > 0.0 {
                penalty += slack;
                grad.add_scaled(&full_grad, -1.0);
                grad.add_scaled(&g, 1.0);
            }
        }
    }
    for &v in &cfg.zero_features {
        if v >= n {
            return Err(Error::Index { index: v, len: n });
        }
        let (val, g) = net.value_and_gradient(&net.indicator(&[v])?)?;
        penalty += val;
        grad.add_scaled(&g, 1.0);
    }
    Ok((penalty, grad))
}

fn initial_network(arch: DsfArchitecture, cfg: &TrainConfig) -> DsfNetwork {
    let mut net = DsfNetwork::constant(arch, 1.0);
    if cfg.init_jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for layer in net.weights_mut() {
            layer.mapv_inplace(|w| w + rng.random::<f64>() * cfg.init_jitter);
        }
    }
    net
}

/// Total training objective at `net`: the hinge objective plus sensitivity
/// penalties, with `Ā` from a fresh greedy chain.
pub fn training_objective(net: &DsfNetwork, data: &TrainingSet, cfg: &TrainConfig) -> Result<f64> {
    let chain = greedy_maximize(net, data.max_budget())?;
    let eval = eval_eq2(net, data, cfg, &chain, false)?;
    Ok(eval.objective + sensitivity_penalties(net, cfg)?.0)
}

/// Projected Adagrad on the hinge objective, starting from all-ones weights.
pub fn train(data: &TrainingSet, cfg: &TrainConfig) -> Result<(DsfNetwork, TrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let arch = cfg.architecture(data.input_dim())?;
    let mut net = initial_network(arch, cfg);
    let budget = data.max_budget();
    let mut accum = WeightGradient::zeros_like(&net);
    let mut report = TrainReport {
        objectives: Vec::with_capacity(cfg.epochs),
        active_hinges: Vec::with_capacity(cfg.epochs),
        final_objective: f64::NAN,
        final_active_hinges: 0,
        greedy_calls: 0,
        evaluator_batches: 0,
        wall_time: Duration::ZERO,
    };

    for epoch in 0..cfg.epochs {
        let chain = {
            let counted = CountingEvaluator::new(&net);
            let chain = greedy_maximize(&counted, budget)?;
            report.greedy_calls += 1;
            report.evaluator_batches += counted.batches();
            chain
        };
        let eval = eval_eq2(&net, data, cfg, &chain, true)?;
        let (penalty, penalty_grad) = sensitivity_penalties(&net, cfg)?;
        let objective = eval.objective + penalty;
        if !objective.is_finite() {
            return Err(Error::Numerical(format!(
                "objective became {objective} at epoch {epoch}"
            )));
        }
        report.objectives.push(objective);
        report.active_hinges.push(eval.active);
        log::debug!("epoch {epoch}: objective {objective:.6}, active hinges {}", eval.active);

        let mut grad = eval.gradient.expect("gradient requested");
        grad.add_scaled(&penalty_grad, 1.0);
        if cfg.weight_decay > 0.0 {
            grad.add_scaled(
                &WeightGradient {
                    layers: net.weights().to_vec(),
                },
                cfg.weight_decay,
            );
        }
        let step_lr = cfg.lr / (1.0 + epoch as f64 * cfg.lr_decay);
        for ((w, g), acc) in net
            .weights_mut()
            .iter_mut()
            .zip(&grad.layers)
            .zip(accum.layers.iter_mut())
        {
            ndarray::Zip::from(w).and(g).and(acc).for_each(|w, &g, a| {
                *a += g * g;
                *w -= step_lr * g / (a.sqrt() + ADAGRAD_EPS);
            });
        }
        net.project_nonneg();
    }

    let chain = greedy_maximize(&net, budget)?;
    let eval = eval_eq2(&net, data, cfg, &chain, false)?;
    report.final_objective = eval.objective + sensitivity_penalties(&net, cfg)?.0;
    report.final_active_hinges = eval.active;
    if !report.final_objective.is_finite() {
        return Err(Error::Numerical("final objective is not finite".into()));
    }
    report.wall_time = start.elapsed();
    Ok((net, report))
}
