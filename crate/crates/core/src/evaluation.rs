//! Perturbation curves (AUPC), top-k Jaccard overlap, robustness IoU and
//! attribution-mass specificity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::AttributionMap;
use crate::baselines::MlpClassifier;
use crate::error::{check_dim, Error, Result};
use crate::resample::{rank_descending, top_indices, Heatmap};

/// Default perturbation steps per curve.
pub const DEFAULT_STEPS: usize = 8;
/// Default uniform noise amplitude for robustness.
pub const DEFAULT_NOISE_AMP: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// `size × size` tiles ranked by summed attribution.
    Patch { size: usize, steps: usize },
    /// `per_step` pixels at a time in decreasing attribution.
    TopkPixels { per_step: usize, steps: usize },
}

impl PerturbationMode {
    /// Tiles of side `min(h, w) · 8 / 28` (8 for 28×28 inputs), 8 steps.
    pub fn default_patch(height: usize, width: usize) -> Self {
        PerturbationMode::Patch {
            size: (height.min(width) * 8 / 28).max(1),
            steps: DEFAULT_STEPS,
        }
    }

    /// `n / 28` pixels per step, 8 steps.
    pub fn default_topk(height: usize, width: usize) -> Self {
        PerturbationMode::TopkPixels {
            per_step: (height * width / 28).max(1),
            steps: DEFAULT_STEPS,
        }
    }

    pub fn steps(&self) -> usize {
        match *self {
            PerturbationMode::Patch { steps, .. } | PerturbationMode::TopkPixels { steps, .. } => {
                steps
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationCurve {
    /// Probability of `predicted` after each step; index 0 is unperturbed.
    pub scores: Vec<f64>,
    pub mode: PerturbationMode,
    pub predicted: usize,
    pub aupc: f64,
}

/// Trapezoidal mean of a curve with unit spacing.
pub fn trapezoidal_mean(scores: &[f64]) -> f64 {
    match scores.len() {
        0 => 0.0,
        1 => scores[0],
        n => {
            let area: f64 = scores.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
            area / (n - 1) as f64
        }
    }
}

/// Pixel groups in perturbation order.
fn perturbation_regions(
    attribution: &AttributionMap,
    mode: PerturbationMode,
) -> Result<Vec<Vec<usize>>> {
    let (h, w) = (attribution.height(), attribution.width());
    let scores = attribution.scores();
    match mode {
        PerturbationMode::Patch { size, steps } => {
            if size == 0 || steps == 0 {
                return Err(Error::invalid("patch size and steps must be positive"));
            }
            let (th, tw) = (h.div_ceil(size), w.div_ceil(size));
            if steps > th * tw {
                return Err(Error::invalid(format!(
                    "{steps} steps exceed the {} available patches",
                    th * tw
                )));
            }
            // Tiles past the border are scored on an edge-replicated copy.
            let mut sums = vec![0.0; th * tw];
            let mut pixels = vec![Vec::new(); th * tw];
            for r in 0..th * size {
                for c in 0..tw * size {
                    let tile = (r / size) * tw + c / size;
                    sums[tile] += scores[r.min(h - 1) * w + c.min(w - 1)];
                    if r < h && c < w {
                        pixels[tile].push(r * w + c);
                    }
                }
            }
            Ok(rank_descending(&sums)
                .into_iter()
                .take(steps)
                .map(|t| std::mem::take(&mut pixels[t]))
                .collect())
        }
        PerturbationMode::TopkPixels { per_step, steps } => {
            if per_step == 0 || steps == 0 {
                return Err(Error::invalid("pixels per step and steps must be positive"));
            }
            if per_step * steps > h * w {
                return Err(Error::invalid(format!(
                    "{steps} steps of {per_step} pixels exceed {} pixels",
                    h * w
                )));
            }
            let order = rank_descending(scores);
            Ok(order.chunks(per_step).take(steps).map(<[usize]>::to_vec).collect())
        }
    }
}

/// Cumulatively overwrites the most relevant regions with `perturb_value` and
/// tracks the softmax probability of the class predicted on the clean image.
pub fn aupc(
    clf: &MlpClassifier,
    image: &Heatmap,
    attribution: &AttributionMap,
    mode: PerturbationMode,
    perturb_value: f64,
) -> Result<PerturbationCurve> {
    check_dim(clf.input_dim(), image.len())?;
    if attribution.height() != image.height() || attribution.width() != image.width() {
        return Err(Error::Dimension {
            expected: image.len(),
            got: attribution.len(),
        });
    }
    let regions = perturbation_regions(attribution, mode)?;
    let mut x = image.values().to_vec();
    let clean = clf.forward(&x)?;
    let predicted = clean.predicted;
    let mut scores = Vec::with_capacity(regions.len() + 1);
    scores.push(clean.probs[predicted]);
    for region in regions {
        for p in region {
            x[p] = perturb_value;
        }
        scores.push(clf.forward(&x)?.probs[predicted]);
    }
    Ok(PerturbationCurve {
        aupc: trapezoidal_mean(&scores),
        scores,
        mode,
        predicted,
    })
}

/// Mean AUPC over curves whose prediction matches the label, or over all
/// curves with `include_all`. `None` when nothing qualifies.
pub fn mean_aupc(curves: &[(PerturbationCurve, usize)], include_all: bool) -> Option<f64> {
    let kept: Vec<f64> = curves
        .iter()
        .filter(|(c, label)| include_all || c.predicted == *label)
        .map(|(c, _)| c.aupc)
        .collect();
    if kept.is_empty() {
        None
    } else {
        Some(kept.iter().sum::<f64>() / kept.len() as f64)
    }
}

/// `|A ∩ B| / |A ∪ B|` for two ascending index sets.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Jaccard overlap of the top-`k` score sets (ties to the lowest index).
pub fn jaccard_topk(a: &AttributionMap, b: &AttributionMap, k: usize) -> Result<f64> {
    jaccard_topk_scores(a.scores(), b.scores(), k)
}

pub fn jaccard_topk_scores(a: &[f64], b: &[f64], k: usize) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    if k == 0 || k > a.len() {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", a.len())));
    }
    Ok(jaccard(&top_indices(a, k), &top_indices(b, k)))
}

/// Top-set size used for an `n`-pixel image: 5000 of 224² pixels, rescaled.
pub fn default_robustness_top(n: usize) -> usize {
    ((n as f64 * 5000.0 / 50176.0).round() as usize).clamp(1, n.max(1))
}

/// IoU of the top-`top` sets of `attribute(image)` and of `attribute` on the
/// image plus `U(-amp, amp)` noise, clamped to `[0,1]`.
pub fn robustness_iou<A>(
    attribute: A,
    image: &Heatmap,
    noise_amp: f64,
    top: usize,
    seed: u64,
) -> Result<f64>
where
    A: Fn(&Heatmap) -> Result<AttributionMap>,
{
    if !(noise_amp.is_finite() && noise_amp >= 0.0) {
        return Err(Error::invalid(format!("noise amplitude {noise_amp} must be >= 0")));
    }
    let noisy = if noise_amp == 0.0 {
        image.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = image
            .values()
            .iter()
            .map(|v| (v + rng.random_range(-noise_amp..=noise_amp)).clamp(0.0, 1.0))
            .collect();
        Heatmap::new(image.height(), image.width(), px)?
    };
    let a = attribute(image)?;
    let b = attribute(&noisy)?;
    jaccard_topk(&a, &b, top)
}

/// Share of the total attribution score falling on `mask`; 0 for an
/// all-zero map.
pub fn mass_fraction(map: &AttributionMap, mask: &[usize]) -> Result<f64> {
    let total: f64 = map.scores().iter().sum();
    let mut inside = 0.0;
    for &p in mask {
        inside += *map.scores().get(p).ok_or(Error::Index {
            index: p,
            len: map.len(),
        })?;
    }
    Ok(if total > 0.0 { inside / total } else { 0.0 })
}

/// One line of evaluation output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub image_id: String,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(
        image_id: impl Into<String>,
        method: impl Into<String>,
        metric: impl Into<String>,
        value: f64,
    ) -> Self {
        Self {
            image_id: image_id.into(),
            method: method.into(),
            metric: metric.into(),
            value,
        }
    }
}
