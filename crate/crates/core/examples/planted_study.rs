//! Compares SEA-NN with its baselines on held-out planted-patch images:
//! AUPC (patch and top-k deletion), attribution mass on the planted patch,
//! robustness IoU and training descent.
//!
//! Usage: `planted_study [key=value ...]` with keys `n`, `split_seed`,
//! `intensity`, `hidden` (comma separated) and `lr`, `lambda`, `lambda1`, `lambda2`,
//! `weight_decay`, `epochs`, `thresholds` (lo,hi of a 10-point grid).

use std::time::Instant;

use seann_core::attribution::{agg_mean, sea_pipeline, sea_pipeline_run, AttributionMap, PipelineConfig};
use seann_core::baselines::{
    baseline_heatmap, make_planted_dataset_with, train_classifier, BaselineMethod, ClassifierConfig,
    PlantedConfig,
};
use seann_core::evaluation::{aupc, default_robustness_top, mass_fraction, robustness_iou, PerturbationMode};
use seann_core::trainer::TrainConfig;

fn main() -> seann_core::Result<()> {
    let mut n_test = 50;
    let mut split_seed = 1;
    let mut intensity = 0.6;
    let mut tc = TrainConfig {
        hidden_dims: vec![64, 16, 4],
        ..TrainConfig::default()
    };
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        let num = || v.parse::<f64>().expect("number");
        match k {
            "intensity" => intensity = num(),
            "n" => n_test = v.parse().unwrap(),
            "split_seed" => split_seed = v.parse().unwrap(),
            "hidden" => tc.hidden_dims = v.split(',').map(|d| d.parse().unwrap()).collect(),
            "lr" => tc.lr = num(),
            "lambda" => tc.lambda = num(),
            "lambda1" => tc.lambda1 = num(),
            "lambda2" => tc.lambda2 = num(),
            "weight_decay" => tc.weight_decay = num(),
            "epochs" => tc.epochs = v.parse().unwrap(),
            "thresholds" => {
                let (lo, hi) = v.split_once(',').expect("lo,hi");
                tc.thresholds =
                    seann_core::resample::threshold_grid(10, lo.parse().unwrap(), hi.parse().unwrap())?;
            }
            _ => panic!("unknown key {k}"),
        }
    }

    let planted = |n_images, seed| {
        make_planted_dataset_with(&PlantedConfig {
            n_images,
            side: 16,
            patch_side: 3,
            intensity,
            seed,
            ..PlantedConfig::default()
        })
    };
    let train = planted(400, 0)?;
    let test = planted(n_test, split_seed)?;
    let clf = train_classifier(&train, &ClassifierConfig::default())?;
    println!("classifier train accuracy {:?}", clf.train_accuracy);

    let methods = [BaselineMethod::Vg, BaselineMethod::Ig, BaselineMethod::Sg];
    let cfg = PipelineConfig {
        train: tc,
        ..PipelineConfig::default()
    };
    let names = ["sea", "vg", "ig", "sg", "agg"];
    let modes = [
        PerturbationMode::default_patch(16, 16),
        PerturbationMode::default_topk(16, 16),
    ];
    let mut aupcs = vec![[0.0; 5]; modes.len()];
    let mut mass = [0.0; 5];
    let mut descent_ok = 0;
    let mut correct = 0;
    let start = Instant::now();
    for (i, image) in test.images.iter().enumerate() {
        let run = sea_pipeline_run(&clf, image, &methods, &cfg)?;
        if run.report.final_objective <= run.report.objectives[0] {
            descent_ok += 1;
        }
        if run.class == test.labels[i] {
            correct += 1;
        }
        let agg = agg_mean(&run.baselines)?;
        let maps = [
            run.attribution.clone(),
            AttributionMap::from_heatmap(&run.baselines[0]),
            AttributionMap::from_heatmap(&run.baselines[1]),
            AttributionMap::from_heatmap(&run.baselines[2]),
            AttributionMap::from_heatmap(&agg),
        ];
        let mask = test.planted_mask(i).unwrap();
        for (k, m) in maps.iter().enumerate() {
            for (mi, mode) in modes.iter().enumerate() {
                aupcs[mi][k] += aupc(&clf, image, m, *mode, 0.0)?.aupc / n_test as f64;
            }
            mass[k] += mass_fraction(m, mask)? / n_test as f64;
        }
    }
    println!("{n_test} images, {correct} correct, {:.1?}", start.elapsed());
    for (mi, mode) in modes.iter().enumerate() {
        println!("aupc {mode:?}");
        for (k, n) in names.iter().enumerate() {
            println!("  {n:4} {:.5}", aupcs[mi][k]);
        }
    }
    println!("mass in patch");
    for (k, n) in names.iter().enumerate() {
        println!("  {n:4} {:.5}", mass[k]);
    }
    println!("descent held on {descent_ok}/{n_test}");

    let n_rob = n_test.min(20);
    let top = default_robustness_top(256);
    let (mut sea_iou, mut sg_iou) = (0.0, 0.0);
    for (i, image) in test.images.iter().take(n_rob).enumerate() {
        let seed = 100 + i as u64;
        sea_iou += robustness_iou(|im| sea_pipeline(&clf, im, &methods, &cfg), image, 0.02, top, seed)?;
        sg_iou += robustness_iou(
            |im| Ok(AttributionMap::from_heatmap(&baseline_heatmap(BaselineMethod::Sg, &clf, im, &cfg.baseline)?)),
            image,
            0.02,
            top,
            seed,
        )?;
    }
    println!(
        "robustness iou (top {top}): sea {:.4} sg {:.4}",
        sea_iou / n_rob as f64,
        sg_iou / n_rob as f64
    );
    println!("total {:.1?}", start.elapsed());
    Ok(())
}
