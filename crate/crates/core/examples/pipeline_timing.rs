//! Times one default pipeline run on a 28×28 planted-patch image.

use std::time::Instant;

use seann_core::attribution::{sea_pipeline_run, PipelineConfig};
use seann_core::baselines::{make_planted_dataset, train_classifier, BaselineMethod, ClassifierConfig};

fn main() -> seann_core::Result<()> {
    let data = make_planted_dataset(200, 28, 5, 0)?;
    let clf = train_classifier(&data, &ClassifierConfig::default())?;
    let methods = [BaselineMethod::Vg, BaselineMethod::Ig, BaselineMethod::Sg];
    let start = Instant::now();
    let run = sea_pipeline_run(&clf, &data.images[0], &methods, &PipelineConfig::default())?;
    println!(
        "pipeline: {:.2?} (training {:.2?}, {} greedy calls, {} batches)",
        start.elapsed(),
        run.report.wall_time,
        run.report.greedy_calls,
        run.report.evaluator_batches
    );
    Ok(())
}
