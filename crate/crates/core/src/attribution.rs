//! Marginal-gain attribution under a learned DSF, top-p selection, map
//! aggregation and the end-to-end pipeline.

use serde::{Deserialize, Serialize};

use crate::baselines::{min_max, normalize_heatmap_with, raw_attribution, BaselineMethod, BaselineOptions, MlpClassifier};
use crate::dsf::DsfNetwork;
use crate::error::{check_dim, Error, Result};
use crate::resample::{
    binarize_top, downsample_binary, downsample_real, upsample_values, BinaryMap, Heatmap,
};
use crate::submax::{greedy_maximize, SetFunction};
use crate::trainer::{train, TrainConfig, TrainReport, TrainingSet};

/// Gains at or below this are treated as zero by the attribution loop.
pub const GAIN_EPS: f64 = 1e-12;

/// Side of the grid the DSF is trained on for larger images.
pub const DEFAULT_GRID: usize = 28;

/// Raw non-negative scores plus their min-max normalized copy.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    height: usize,
    width: usize,
    scores: Vec<f64>,
    normalized: Vec<f64>,
}

impl AttributionMap {
    pub fn from_scores(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        check_dim(height * width, scores.len())?;
        if let Some(v) = scores.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!("attribution score {v} is not a finite value >= 0")));
        }
        let normalized = min_max(&scores);
        Ok(Self {
            height,
            width,
            scores,
            normalized,
        })
    }

    pub fn from_heatmap(h: &Heatmap) -> Self {
        Self::from_scores(h.height(), h.width(), h.values().to_vec())
            .expect("heatmap values are valid scores")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn to_heatmap(&self) -> Heatmap {
        Heatmap::new(self.height, self.width, self.normalized.clone())
            .expect("normalized values lie in [0,1]")
    }
}

/// Attributes every feature by its marginal gain in the greedy order.
///
/// At each step all remaining features tied for the best gain receive that
/// gain and leave the candidate pool, while only the lowest-index one joins
/// the selected set. Features never reached keep a score of zero.
pub fn sea_attribute<F: SetFunction + ?Sized>(
    f: &F,
    height: usize,
    width: usize,
) -> Result<AttributionMap> {
    let n = f.ground_size();
    check_dim(n, height * width)?;
    let mut scores = vec![0.0; n];
    let mut selected: Vec<usize> = Vec::new();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut current = f.value(&[]);
    while selected.len() < n && !remaining.is_empty() {
        let values = f.extension_values(&selected, &remaining);
        let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let gain = best - current;
        if !(gain > GAIN_EPS) {
            break;
        }
        let mut chosen = None;
        let mut kept = Vec::with_capacity(remaining.len());
        for (&v, &val) in remaining.iter().zip(&values) {
            if val == best {
                scores[v] = gain;
                chosen.get_or_insert(v);
            } else {
                kept.push(v);
            }
        }
        selected.push(chosen.expect("the maximum is attained"));
        remaining = kept;
        current = best;
    }
    AttributionMap::from_scores(height, width, scores)
}

/// Greedy approximation of `argmax_{|A| <= p} f(A)`, as an ascending set.
pub fn top_p_select<F: SetFunction + ?Sized>(f: &F, p: usize) -> Result<Vec<usize>> {
    let n = f.ground_size();
    if p == 0 || p > n {
        return Err(Error::invalid(format!("p = {p} outside 1..={n}")));
    }
    let mut set = greedy_maximize(f, p)?.elements;
    set.sort_unstable();
    Ok(set)
}

/// Pixel-wise mean of equally sized maps.
pub fn agg_mean(maps: &[Heatmap]) -> Result<Heatmap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("agg_mean needs at least one map"))?;
    let mut acc = vec![0.0; first.len()];
    for m in maps {
        if !m.same_dims(first) {
            return Err(Error::Dimension {
                expected: first.len(),
                got: m.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += v;
        }
    }
    let k = maps.len() as f64;
    let mean = acc.into_iter().map(|a| (a / k).min(1.0)).collect();
    Heatmap::new(first.height(), first.width(), mean)
}

/// Pools the maps of many inputs (e.g. all images of a class) into one
/// training set.
pub fn assemble_global(per_input: &[Vec<Heatmap>], thresholds: &[usize]) -> Result<TrainingSet> {
    let maps: Vec<Heatmap> = per_input.iter().flatten().cloned().collect();
    if maps.is_empty() {
        return Err(Error::invalid("no heatmaps to assemble"));
    }
    TrainingSet::from_heatmaps(maps, thresholds)
}

/// Builds the DSF training set for maps at full resolution. Maps larger than
/// `grid` on either side are averaged down to at most `grid × grid`; their
/// binarizations are taken at full resolution with each count scaled by the
/// area ratio, then reduced with the block-majority rule.
pub fn training_set_on_grid(
    maps: &[Heatmap],
    thresholds: &[usize],
    grid: usize,
) -> Result<TrainingSet> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("no heatmaps to train on"))?;
    let (h, w) = (first.height(), first.width());
    let (gh, gw) = (h.min(grid), w.min(grid));
    if (gh, gw) == (h, w) {
        return TrainingSet::from_heatmaps(maps.to_vec(), thresholds);
    }
    let ratio = (h * w) as f64 / (gh * gw) as f64;
    let mut real = Vec::with_capacity(maps.len());
    let mut binary: Vec<BinaryMap> = Vec::with_capacity(maps.len() * thresholds.len());
    for m in maps {
        real.push(downsample_real(m, gh, gw)?);
        for &t in thresholds {
            if t == 0 || t > gh * gw {
                return Err(Error::invalid(format!("threshold {t} outside 1..={}", gh * gw)));
            }
            let full = ((t as f64 * ratio).round() as usize).clamp(1, h * w);
            binary.push(downsample_binary(&binarize_top(m, full)?, gh, gw)?);
        }
    }
    TrainingSet::new(real, binary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub baseline: BaselineOptions,
    /// Images with a side above this are processed on a `grid × grid` grid.
    pub grid: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            baseline: BaselineOptions::default(),
            grid: DEFAULT_GRID,
        }
    }
}

/// Everything produced by one pipeline run.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub attribution: AttributionMap,
    /// Normalized baseline maps at image resolution, in `methods` order.
    pub baselines: Vec<Heatmap>,
    pub class: usize,
    pub net: DsfNetwork,
    pub report: TrainReport,
}

/// Baseline maps, DSF training and marginal-gain attribution for the
/// classifier's predicted class on one image.
pub fn sea_pipeline(
    clf: &MlpClassifier,
    image: &Heatmap,
    methods: &[BaselineMethod],
    cfg: &PipelineConfig,
) -> Result<AttributionMap> {
    Ok(sea_pipeline_run(clf, image, methods, cfg)?.attribution)
}

pub fn sea_pipeline_run(
    clf: &MlpClassifier,
    image: &Heatmap,
    methods: &[BaselineMethod],
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    check_dim(clf.input_dim(), image.len())?;
    if methods.is_empty() {
        return Err(Error::invalid("pipeline needs at least one attribution method"));
    }
    if cfg.grid == 0 {
        return Err(Error::invalid("grid must be positive"));
    }
    let class = clf.forward(image.values())?.predicted;
    let (h, w) = (image.height(), image.width());
    let baselines = methods
        .iter()
        .map(|&m| {
            let raw = raw_attribution(m, clf, image.values(), class, &cfg.baseline)?;
            normalize_heatmap_with(&raw, h, w, cfg.baseline.normalization)
        })
        .collect::<Result<Vec<_>>>()?;
    let data = training_set_on_grid(&baselines, &cfg.train.thresholds, cfg.grid)?;
    let (net, report) = train(&data, &cfg.train)?;
    let coarse = sea_attribute(&net, data.height(), data.width())?;
    let attribution = if (data.height(), data.width()) == (h, w) {
        coarse
    } else {
        let scores = upsample_values(coarse.scores(), coarse.height, coarse.width, h, w)?;
        AttributionMap::from_scores(h, w, scores)?
    };
    Ok(PipelineRun {
        attribution,
        baselines,
        class,
        net,
        report,
    })
}
