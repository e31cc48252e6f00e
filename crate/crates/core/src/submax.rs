//! Cardinality-constrained maximization of monotone submodular set functions.
//!
//! [`greedy_maximize`] returns the whole selection order as a [`GreedyChain`]:
//! since each greedy step only extends the previous solution, the first `b`
//! elements of a budget-`B` chain are the greedy solution for every `b <= B`.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

/// Largest ground set accepted by [`brute_force_maximize`].
pub const BRUTE_FORCE_MAX_N: usize = 20;

/// A normalized set function over `{0, .., ground_size - 1}` with a batched
/// evaluation entry point.
pub trait SetFunction: Sync {
    fn ground_size(&self) -> usize;

    /// `f(set)`. Indices are assumed to be in range.
    fn value(&self, set: &[usize]) -> f64;

    /// `f(base ∪ {v})` for every `v` in `candidates`, evaluated as one batch of
    /// indicator vectors.
    fn extension_values(&self, base: &[usize], candidates: &[usize]) -> Vec<f64>;
}

/// `f(A) = sum of weights[i] for i in A`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModularFunction {
    pub weights: Vec<f64>,
}

impl ModularFunction {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }
}

impl SetFunction for ModularFunction {
    fn ground_size(&self) -> usize {
        self.weights.len()
    }

    fn value(&self, set: &[usize]) -> f64 {
        set.iter().map(|&i| self.weights[i]).sum()
    }

    fn extension_values(&self, base: &[usize], candidates: &[usize]) -> Vec<f64> {
        let b = self.value(base);
        candidates.iter().map(|&v| b + self.weights[v]).collect()
    }
}

/// Wraps a set function and counts batched evaluations.
pub struct CountingEvaluator<'a, F: SetFunction + ?Sized> {
    inner: &'a F,
    batches: AtomicUsize,
}

impl<'a, F: SetFunction + ?Sized> CountingEvaluator<'a, F> {
    pub fn new(inner: &'a F) -> Self {
        Self {
            inner,
            batches: AtomicUsize::new(0),
        }
    }

    pub fn batches(&self) -> usize {
        self.batches.load(Ordering::Relaxed)
    }
}

impl<F: SetFunction + ?Sized> SetFunction for CountingEvaluator<'_, F> {
    fn ground_size(&self) -> usize {
        self.inner.ground_size()
    }

    fn value(&self, set: &[usize]) -> f64 {
        self.inner.value(set)
    }

    fn extension_values(&self, base: &[usize], candidates: &[usize]) -> Vec<f64> {
        self.batches.fetch_add(1, Ordering::Relaxed);
        self.inner.extension_values(base, candidates)
    }
}

/// Greedy selection order with per-step gains.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyChain {
    /// Selected indices in selection order.
    pub elements: Vec<usize>,
    /// `gains[b]` is the marginal gain of `elements[b]`.
    pub gains: Vec<f64>,
    /// `values[b]` is `f` of the first `b` elements; `values[0] = 0`.
    pub values: Vec<f64>,
}

impl GreedyChain {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// The greedy solution for budget `b`. Chains that stopped early return
    /// every selected element.
    pub fn prefix(&self, b: usize) -> &[usize] {
        &self.elements[..b.min(self.elements.len())]
    }

    pub fn value_at(&self, b: usize) -> f64 {
        self.values[b.min(self.elements.len())]
    }
}

/// Greedy maximization of a normalized monotone submodular `f` subject to
/// `|A| <= budget`.
///
/// Each step evaluates all remaining candidates as one batch and picks the
/// largest marginal gain, breaking ties toward the lowest index. Stops early
/// when the best gain is not positive.
pub fn greedy_maximize<F: SetFunction + ?Sized>(f: &F, budget: usize) -> Result<GreedyChain> {
    let n = f.ground_size();
    if budget > n {
        return Err(Error::invalid(format!(
            "budget {budget} exceeds ground set size {n}"
        )));
    }
    let mut chain = GreedyChain {
        elements: Vec::with_capacity(budget),
        gains: Vec::with_capacity(budget),
        values: vec![0.0],
    };
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut current = 0.0;
    for _ in 0..budget {
        let values = f.extension_values(&chain.elements, &remaining);
        let mut best = 0;
        for (i, v) in values.iter().enumerate().skip(1) {
            if *v > values[best] {
                best = i;
            }
        }
        let gain = values[best] - current;
        if gain <= 0.0 {
            break;
        }
        current = values[best];
        chain.elements.push(remaining.remove(best));
        chain.gains.push(gain);
        chain.values.push(current);
    }
    Ok(chain)
}

/// Exact maximizer over all subsets of size at most `budget`, for testing.
/// Ties go to the lexicographically smallest sorted index set.
pub fn brute_force_maximize<F: SetFunction + ?Sized>(
    f: &F,
    budget: usize,
) -> Result<(Vec<usize>, f64)> {
    let n = f.ground_size();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::TooLarge {
            n,
            max: BRUTE_FORCE_MAX_N,
        });
    }
    if budget > n {
        return Err(Error::invalid(format!(
            "budget {budget} exceeds ground set size {n}"
        )));
    }
    let mut best_set: Vec<usize> = Vec::new();
    let mut best = f.value(&[]);
    for mask in 1u32..(1u32 << n) {
        if mask.count_ones() as usize > budget {
            continue;
        }
        let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let v = f.value(&set);
        if v > best || (v == best && set < best_set) {
            best = v;
            best_set = set;
        }
    }
    Ok((best_set, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsf::{Activation, DsfArchitecture, DsfNetwork};
    use ndarray::array;

    #[test]
    fn greedy_on_modular() {
        let f = ModularFunction::new(vec![3.0, 1.0, 2.0]);
        let chain = greedy_maximize(&f, 2).unwrap();
        assert_eq!(chain.elements, vec![0, 2]);
        assert_eq!(chain.gains, vec![3.0, 2.0]);
        assert_eq!(chain.values, vec![0.0, 3.0, 5.0]);

        let empty = greedy_maximize(&f, 0).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.values, vec![0.0]);

        let tie = ModularFunction::new(vec![2.0, 2.0, 1.0]);
        assert_eq!(greedy_maximize(&tie, 2).unwrap().elements, vec![0, 1]);

        assert!(greedy_maximize(&f, 4).is_err());
    }

    #[test]
    fn greedy_stops_on_zero_gain() {
        let f = ModularFunction::new(vec![0.0, 1.0, 0.0]);
        let chain = greedy_maximize(&f, 3).unwrap();
        assert_eq!(chain.elements, vec![1]);
        assert_eq!(chain.prefix(3), &[1]);
        assert_eq!(chain.value_at(3), 1.0);
    }

    #[test]
    fn greedy_batches_once_per_step() {
        let f = ModularFunction::new(vec![1.0; 10]);
        let counted = CountingEvaluator::new(&f);
        greedy_maximize(&counted, 4).unwrap();
        assert_eq!(counted.batches(), 4);
    }

    #[test]
    fn brute_force_examples() {
        let f = ModularFunction::new(vec![3.0, 1.0, 2.0]);
        assert_eq!(brute_force_maximize(&f, 2).unwrap(), (vec![0, 2], 5.0));
        assert_eq!(brute_force_maximize(&f, 3).unwrap(), (vec![0, 1, 2], 6.0));

        let arch = DsfArchitecture::new(vec![3, 1, 1], Activation::Sqrt).unwrap();
        let net = DsfNetwork::new(arch, vec![array![[1.0, 1.0, 1.0]], array![[1.0]]]).unwrap();
        assert_eq!(brute_force_maximize(&net, 1).unwrap(), (vec![0], 1.0));

        let big = ModularFunction::new(vec![1.0; 21]);
        assert!(matches!(brute_force_maximize(&big, 2), Err(Error::TooLarge { .. })));
    }
}
