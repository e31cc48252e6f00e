//! Heatmaps, top-t binarization and grid resampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real-valued map on an `height × width` grid, row-major, values in `[0,1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("heatmap dims must be positive"));
        }
        if values.len() != height * width {
            return Err(Error::Dimension {
                expected: height * width,
                got: values.len(),
            });
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Domain(format!("heatmap value {v} at {i} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// The all-ones map, where every monotone score is maximal.
    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1.0).expect("valid dims")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_dims(&self, other: &Heatmap) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Indicator map with exactly `budget` ones.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMap {
    height: usize,
    width: usize,
    mask: Vec<bool>,
    budget: usize,
}

impl BinaryMap {
    pub fn new(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::Dimension {
                expected: height * width,
                got: mask.len(),
            });
        }
        let budget = mask.iter().filter(|&&b| b).count();
        Ok(Self {
            height,
            width,
            mask,
            budget,
        })
    }

    pub fn from_indices(height: usize, width: usize, indices: &[usize]) -> Result<Self> {
        let n = height * width;
        let mut mask = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(Error::Index { index: i, len: n });
            }
            mask[i] = true;
        }
        Self::new(height, width, mask)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Indices of the ones, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn to_indicator(&self) -> Vec<f64> {
        self.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Indices sorted by decreasing score; equal scores keep ascending index order.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Top `t` entries of `scores` as an ascending index list.
pub fn top_indices(scores: &[f64], t: usize) -> Vec<usize> {
    let mut top: Vec<usize> = rank_descending(scores).into_iter().take(t).collect();
    top.sort_unstable();
    top
}

/// Keeps the `t` largest values of `h` (ties to the lowest index).
pub fn binarize_top(h: &Heatmap, t: usize) -> Result<BinaryMap> {
    if t == 0 || t > h.len() {
        return Err(Error::invalid(format!(
            "threshold {t} outside 1..={}",
            h.len()
        )));
    }
    BinaryMap::from_indices(h.height, h.width, &top_indices(&h.values, t))
}

/// `k` counts equally spaced from `lo` to `hi` inclusive, rounded and
/// deduplicated.
pub fn threshold_grid(k: usize, lo: usize, hi: usize) -> Result<Vec<usize>> {
    if k == 0 || lo > hi {
        return Err(Error::invalid(format!("bad threshold grid ({k}, {lo}, {hi})")));
    }
    if k == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) as f64 / (k - 1) as f64;
    let mut out: Vec<usize> = (0..k)
        .map(|i| (lo as f64 + step * i as f64).round() as usize)
        .collect();
    out.dedup();
    Ok(out)
}

/// Sums of `values` over a `gh × gw` grid of equal blocks. The source is
/// padded on the right/bottom by edge replication up to the next multiple of
/// the grid size. Returns `(block sums, block height, block width)`.
pub(crate) fn block_sums(
    values: &[f64],
    height: usize,
    width: usize,
    gh: usize,
    gw: usize,
) -> (Vec<f64>, usize, usize) {
    let bh = height.div_ceil(gh);
    let bw = width.div_ceil(gw);
    let mut sums = vec![0.0; gh * gw];
    for r in 0..gh * bh {
        let sr = r.min(height - 1);
        for c in 0..gw * bw {
            let sc = c.min(width - 1);
            sums[(r / bh) * gw + c / bw] += values[sr * width + sc];
        }
    }
    (sums, bh, bw)
}

fn check_grid(height: usize, width: usize, gh: usize, gw: usize) -> Result<()> {
    if gh == 0 || gw == 0 {
        return Err(Error::invalid("grid dims must be positive"));
    }
    if gh > height || gw > width {
        return Err(Error::invalid(format!(
            "grid {gh}x{gw} is finer than the {height}x{width} source"
        )));
    }
    Ok(())
}

/// Averages each block of a `gh × gw` grid into one output pixel.
pub fn downsample_real(h: &Heatmap, gh: usize, gw: usize) -> Result<Heatmap> {
    check_grid(h.height, h.width, gh, gw)?;
    let (sums, bh, bw) = block_sums(&h.values, h.height, h.width, gh, gw);
    let area = (bh * bw) as f64;
    let mut means: Vec<f64> = sums.iter().map(|s| s / area).collect();
    let max = means.iter().cloned().fold(0.0, f64::max);
    if max > 1.0 {
        means.iter_mut().for_each(|m| *m /= max);
    }
    Heatmap::new(gh, gw, means)
}

/// A block becomes one iff its count of ones is strictly greater than the
/// mean count over all blocks.
pub fn downsample_binary(b: &BinaryMap, gh: usize, gw: usize) -> Result<BinaryMap> {
    check_grid(b.height, b.width, gh, gw)?;
    let (sums, _, _) = block_sums(&b.to_indicator(), b.height, b.width, gh, gw);
    let mean = sums.iter().sum::<f64>() / sums.len() as f64;
    BinaryMap::new(gh, gw, sums.iter().map(|&s| s > mean).collect())
}

/// Nearest-neighbour upsampling with the floor index map
/// `src = dst * src_len / dst_len`.
pub fn upsample_nearest(h: &Heatmap, height: usize, width: usize) -> Result<Heatmap> {
    Ok(Heatmap {
        height,
        width,
        values: upsample_values(&h.values, h.height, h.width, height, width)?,
    })
}

pub(crate) fn upsample_values(
    values: &[f64],
    src_h: usize,
    src_w: usize,
    height: usize,
    width: usize,
) -> Result<Vec<f64>> {
    if height < src_h || width < src_w {
        return Err(Error::invalid(format!(
            "cannot upsample {src_h}x{src_w} to smaller {height}x{width}"
        )));
    }
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        let sr = r * src_h / height;
        for c in 0..width {
            out.push(values[sr * src_w + c * src_w / width]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hm(h: usize, w: usize, v: &[f64]) -> Heatmap {
        Heatmap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn heatmap_validation() {
        assert!(Heatmap::new(1, 2, vec![0.0]).is_err());
        assert!(matches!(Heatmap::new(1, 1, vec![1.5]), Err(Error::Domain(_))));
        assert!(matches!(Heatmap::new(1, 1, vec![f64::NAN]), Err(Error::Domain(_))));
    }

    #[test]
    fn binarize_examples() {
        let h = hm(1, 3, &[0.9, 0.1, 0.5]);
        assert_eq!(binarize_top(&h, 2).unwrap().indices(), vec![0, 2]);
        let all = binarize_top(&h, 3).unwrap();
        assert!(all.mask().iter().all(|&b| b));
        let tie = hm(1, 3, &[0.5, 0.5, 0.1]);
        assert_eq!(binarize_top(&tie, 1).unwrap().indices(), vec![0]);
        assert!(binarize_top(&h, 0).is_err());
        assert!(binarize_top(&h, 4).is_err());
    }

    #[test]
    fn threshold_grid_examples() {
        assert_eq!(
            threshold_grid(10, 5, 50).unwrap(),
            vec![5, 10, 15, 20, 25, 30, 35, 40, 45, 50]
        );
        assert_eq!(threshold_grid(1, 7, 7).unwrap(), vec![7]);
        assert_eq!(threshold_grid(3, 1, 2).unwrap(), vec![1, 2]);
        assert!(threshold_grid(0, 1, 2).is_err());
        assert!(threshold_grid(2, 3, 2).is_err());
    }

    #[test]
    fn downsample_real_examples() {
        let h = Heatmap::filled(4, 4, 0.5).unwrap();
        let d = downsample_real(&h, 2, 2).unwrap();
        assert_eq!(d.values(), &[0.5; 4]);
        let h = hm(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(downsample_real(&h, 1, 1).unwrap().values(), &[0.25]);
        assert!(downsample_real(&h, 0, 1).is_err());

        // 224 -> 28 averages 8x8 blocks.
        let vals: Vec<f64> = (0..224 * 224)
            .map(|i| if (i / 224) < 8 && (i % 224) < 8 { 1.0 } else { 0.0 })
            .collect();
        let big = Heatmap::new(224, 224, vals).unwrap();
        let small = downsample_real(&big, 28, 28).unwrap();
        assert_eq!(small.values()[0], 1.0);
        assert_eq!(small.values().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn downsample_non_divisible_replicates_edges() {
        // 3x3 -> 2x2 pads to 4x4 by copying the last row/column.
        let h = hm(3, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let d = downsample_real(&h, 2, 2).unwrap();
        assert_eq!(d.values(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn downsample_binary_examples() {
        let ones = BinaryMap::new(4, 4, vec![true; 16]).unwrap();
        assert_eq!(downsample_binary(&ones, 2, 2).unwrap().budget(), 0);

        let tl = BinaryMap::from_indices(4, 4, &[0, 1, 4, 5]).unwrap();
        let d = downsample_binary(&tl, 2, 2).unwrap();
        assert_eq!(d.indices(), vec![0]);
        assert_eq!(d.budget(), 1);

        let zeros = BinaryMap::new(4, 4, vec![false; 16]).unwrap();
        assert_eq!(downsample_binary(&zeros, 2, 2).unwrap().budget(), 0);
    }

    #[test]
    fn upsample_examples() {
        let one = hm(1, 1, &[0.7]);
        assert_eq!(upsample_nearest(&one, 3, 3).unwrap().values(), &[0.7; 9]);
        let two = hm(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let up = upsample_nearest(&two, 4, 4).unwrap();
        assert_eq!(
            up.values(),
            &[0.1, 0.1, 0.2, 0.2, 0.1, 0.1, 0.2, 0.2, 0.3, 0.3, 0.4, 0.4, 0.3, 0.3, 0.4, 0.4]
        );
        assert!(upsample_nearest(&two, 1, 4).is_err());
    }

    #[test]
    fn upsample_28_to_224_is_block_replication() {
        let vals: Vec<f64> = (0..784).map(|i| i as f64 / 783.0).collect();
        let small = Heatmap::new(28, 28, vals).unwrap();
        let big = upsample_nearest(&small, 224, 224).unwrap();
        for r in 0..224 {
            for c in 0..224 {
                assert_eq!(big.values()[r * 224 + c], small.values()[(r / 8) * 28 + c / 8]);
            }
        }
    }

    fn heatmap_strategy() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
        (1usize..5, 1usize..5, 1usize..4).prop_flat_map(|(gh, gw, scale)| {
            let n = gh * gw * scale * scale;
            (
                Just(gh),
                Just(gw),
                Just(scale),
                prop::collection::vec(0.0f64..=1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn downsample_preserves_mean((gh, gw, s, vals) in heatmap_strategy()) {
            let h = Heatmap::new(gh * s, gw * s, vals).unwrap();
            let d = downsample_real(&h, gh, gw).unwrap();
            let m1 = h.values().iter().sum::<f64>() / h.len() as f64;
            let m2 = d.values().iter().sum::<f64>() / d.len() as f64;
            prop_assert!((m1 - m2).abs() < 1e-12);
        }

        #[test]
        fn upsample_then_downsample_is_identity((gh, gw, s, vals) in heatmap_strategy()) {
            let small = Heatmap::new(gh, gw, vals[..gh * gw].to_vec()).unwrap();
            let up = upsample_nearest(&small, gh * s, gw * s).unwrap();
            let back = downsample_real(&up, gh, gw).unwrap();
            for (a, b) in back.values().iter().zip(small.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn binarize_budget_is_threshold(vals in prop::collection::vec(0.0f64..=1.0, 1..40), t in 1usize..40) {
            let n = vals.len();
            let h = Heatmap::new(1, n, vals).unwrap();
            let t = t.min(n);
            let b = binarize_top(&h, t).unwrap();
            prop_assert_eq!(b.budget(), t);
            // every selected value dominates every unselected one
            let sel = b.mask();
            let min_in = (0..n).filter(|&i| sel[i]).map(|i| h.values()[i]).fold(f64::INFINITY, f64::min);
            let max_out = (0..n).filter(|&i| !sel[i]).map(|i| h.values()[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_in >= max_out);
        }
    }
}
