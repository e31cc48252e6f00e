use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seann_core::baselines::{
    input_gradient, input_times_gradient, integrated_gradients, make_planted_dataset, normalize_heatmap,
    smooth_integrated_gradients, train_classifier, ClassifierConfig, MlpClassifier,
};
use seann_core::evaluation::{aupc, jaccard, jaccard_topk_scores, mass_fraction, PerturbationMode};
use seann_core::resample::rank_descending;
use seann_core::AttributionMap;

fn trained() -> (MlpClassifier, seann_core::baselines::Dataset) {
    let train = make_planted_dataset(200, 16, 3, 0).unwrap();
    let clf = train_classifier(&train, &ClassifierConfig::default()).unwrap();
    (clf, make_planted_dataset(20, 16, 3, 1).unwrap())
}

#[test]
fn ig_completeness_on_trained_mlp() {
    let (clf, test) = trained();
    let zeros = vec![0.0; 256];
    for image in &test.images {
        let x = image.values();
        let c = clf.forward(x).unwrap().predicted;
        let ig = integrated_gradients(&clf, x, c, None, 300).unwrap();
        let delta = clf.logit(x, c).unwrap() - clf.logit(&zeros, c).unwrap();
        let sum: f64 = ig.iter().sum();
        assert!((sum - delta).abs() <= 0.01 * delta.abs(), "{sum} vs {delta}");
    }
}

#[test]
fn ig_on_linear_model_is_weight_times_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let w = Array2::from_shape_fn((3, 10), |_| rng.random::<f64>() * 2.0 - 1.0);
    let clf = MlpClassifier::linear(w.clone(), Array1::from(vec![0.1, -0.2, 0.3])).unwrap();
    let x: Vec<f64> = (0..10).map(|_| rng.random()).collect();
    for c in 0..3 {
        let ig = integrated_gradients(&clf, &x, c, None, 50).unwrap();
        for i in 0..10 {
            let expected = w[[c, i]] * x[i];
            assert!((ig[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }
}

#[test]
fn zero_noise_smooth_ig_is_ig_bitwise() {
    let (clf, test) = trained();
    let x = test.images[0].values();
    let ig = integrated_gradients(&clf, x, 0, None, 20).unwrap();
    let sg = smooth_integrated_gradients(&clf, x, 0, 10, Some(0.0), 20, 9).unwrap();
    assert_eq!(
        ig.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        sg.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn input_times_gradient_composes() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let clf = MlpClassifier::random(&[6, 4, 2], Default::default(), &mut rng).unwrap();
    let x: Vec<f64> = (0..6).map(|_| rng.random()).collect();
    let g = input_gradient(&clf, &x, 1).unwrap();
    let ixg = input_times_gradient(&clf, &x, 1).unwrap();
    for i in 0..6 {
        assert_eq!(ixg[i], g[i] * x[i]);
    }
}

#[test]
fn planted_mask_beats_its_reverse_under_deletion() {
    let (clf, test) = trained();
    let mode = PerturbationMode::default_topk(16, 16);
    let mut better = 0;
    for i in 0..test.len() {
        let mask = test.planted_mask(i).unwrap();
        let oracle: Vec<f64> = (0..256).map(|p| if mask.contains(&p) { 1.0 } else { 0.0 }).collect();
        let reverse: Vec<f64> = oracle.iter().map(|v| 1.0 - v).collect();
        let o = AttributionMap::from_scores(16, 16, oracle).unwrap();
        let r = AttributionMap::from_scores(16, 16, reverse).unwrap();
        assert_eq!(mass_fraction(&o, mask).unwrap(), 1.0);
        let a = aupc(&clf, &test.images[i], &o, mode, 0.0).unwrap().aupc;
        let b = aupc(&clf, &test.images[i], &r, mode, 0.0).unwrap().aupc;
        if a < b {
            better += 1;
        }
    }
    assert!(better >= test.len() * 9 / 10, "{better} of {}", test.len());
}

#[test]
fn aupc_ignores_positive_affine_rescaling() {
    let (clf, test) = trained();
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    for image in test.images.iter().take(5) {
        let scores: Vec<f64> = (0..256).map(|_| rng.random()).collect();
        let scaled: Vec<f64> = scores.iter().map(|v| 3.0 * v + 0.5).collect();
        let a = AttributionMap::from_scores(16, 16, scores).unwrap();
        let b = AttributionMap::from_scores(16, 16, scaled).unwrap();
        for mode in [PerturbationMode::default_topk(16, 16), PerturbationMode::default_patch(16, 16)] {
            let x = aupc(&clf, image, &a, mode, 0.0).unwrap();
            let y = aupc(&clf, image, &b, mode, 0.0).unwrap();
            assert_eq!(x.aupc, y.aupc);
        }
    }
}

proptest! {
    #[test]
    fn normalization_preserves_magnitude_order(raw in prop::collection::vec(-10.0f64..10.0, 2..50)) {
        let n = raw.len();
        let h = normalize_heatmap(&raw, 1, n).unwrap();
        prop_assert!(h.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let abs: Vec<f64> = raw.iter().map(|v| v.abs()).collect();
        for i in 0..n {
            for j in 0..n {
                if abs[i] < abs[j] {
                    prop_assert!(h.values()[i] <= h.values()[j]);
                }
            }
        }
        let order = rank_descending(h.values());
        prop_assert!(order.windows(2).all(|w| h.values()[w[0]] >= h.values()[w[1]]));
    }

    #[test]
    fn jaccard_is_symmetric_and_bounded(
        a in prop::collection::vec(0.0f64..1.0, 20),
        b in prop::collection::vec(0.0f64..1.0, 20),
        k in 1usize..20,
    ) {
        let x = jaccard_topk_scores(&a, &b, k).unwrap();
        prop_assert_eq!(x, jaccard_topk_scores(&b, &a, k).unwrap());
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(jaccard_topk_scores(&a, &a, k).unwrap(), 1.0);
    }
}

#[test]
fn jaccard_of_sets() {
    assert_eq!(jaccard(&[0, 1, 2], &[1, 2, 3]), 0.5);
    assert_eq!(jaccard(&[], &[]), 1.0);
}
