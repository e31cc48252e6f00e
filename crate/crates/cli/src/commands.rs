use std::io::Write;
use std::path::{Path, PathBuf};

use seann_core::attribution::{
    agg_mean, sea_attribute, sea_pipeline, top_p_select, training_set_on_grid, AttributionMap,
};
use seann_core::baselines::{
    baseline_heatmap, train_classifier, BaselineMethod, ClassifierConfig, HiddenActivation,
    MlpClassifier, PlantedConfig,
};
use seann_core::config::{Palette, RunConfig};
use seann_core::evaluation::{
    aupc, default_robustness_top, jaccard_topk, robustness_iou, MetricRow, PerturbationMode,
};
use seann_core::io;
use seann_core::trainer::{train, TrainReport};
use seann_core::{Error, Heatmap, Result};

use crate::{
    AttributeArgs, AupcArgs, BaselineArgs, Cli, Command, EvalCommand, JaccardArgs,
    MakeDatasetArgs, ModeArg, OutputArgs, PaletteArg, PipelineArgs, RenderArgs, RobustnessArgs,
    SyntheticKind, TopkArgs, TrainClassifierArgs, TrainDsfArgs,
};

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::TrainDsf(a) => train_dsf(a, cli.seed),
        Command::Attribute(a) => attribute(a),
        Command::Pipeline(a) => pipeline(a, cli.seed),
        Command::Baseline(a) => baseline(a, cli.seed),
        Command::Eval(EvalCommand::Aupc(a)) => eval_aupc(a),
        Command::Eval(EvalCommand::Jaccard(a)) => eval_jaccard(a),
        Command::Eval(EvalCommand::Robustness(a)) => eval_robustness(a, cli.seed),
        Command::Topk(a) => topk(a),
        Command::Render(a) => render(a),
        Command::MakeDataset(a) => make_dataset(a, cli.seed),
        Command::TrainClassifier(a) => train_clf(a, cli.seed),
    }
}

/// Config file (or defaults) with every seed replaced by `--seed`.
fn load_config(path: Option<&Path>, seed: u64) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.train.seed = seed;
    cfg.baseline.seed = seed;
    Ok(cfg)
}

fn write_csv(out: Option<&Path>, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    match out {
        Some(p) => io::write_atomic(p, &bytes),
        None => Ok(std::io::stdout().write_all(&bytes)?),
    }
}

fn report_csv(report: &TrainReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["epoch", "objective", "active_hinges"]).map_err(fmt)?;
    for (i, (obj, act)) in report.objectives.iter().zip(&report.active_hinges).enumerate() {
        w.write_record([i.to_string(), obj.to_string(), act.to_string()]).map_err(fmt)?;
    }
    w.write_record([
        "final".to_string(),
        report.final_objective.to_string(),
        report.final_active_hinges.to_string(),
    ])
    .map_err(fmt)?;
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

fn train_dsf(a: &TrainDsfArgs, seed: u64) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let maps = a
        .heatmaps
        .iter()
        .map(|p| io::read_heatmap(p))
        .collect::<Result<Vec<_>>>()?;
    let data = training_set_on_grid(&maps, &cfg.train.thresholds, cfg.grid)?;
    log::info!(
        "training on {} heatmaps and {} binary maps ({} features)",
        data.real_maps().len(),
        data.binary_maps().len(),
        data.input_dim()
    );
    let (net, report) = train(&data, &cfg.train)?;
    log::info!(
        "objective {:.6} -> {:.6} in {:.2?}",
        report.objectives.first().copied().unwrap_or(f64::NAN),
        report.final_objective,
        report.wall_time
    );
    io::write_dsf(&a.out, &net)?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".report.csv");
        PathBuf::from(p)
    });
    io::write_atomic(&report_path, &report_csv(&report)?)
}

fn map_dims(n: usize, height: Option<usize>) -> Result<(usize, usize)> {
    match height {
        Some(h) if h > 0 && n.is_multiple_of(h) => Ok((h, n / h)),
        Some(h) => Err(invalid(format!("height {h} does not divide {n} features"))),
        None => {
            let side = (n as f64).sqrt().round() as usize;
            Ok(if side * side == n { (side, side) } else { (1, n) })
        }
    }
}

fn attribute(a: &AttributeArgs) -> Result<()> {
    let net = io::read_dsf(&a.dsf)?;
    let (h, w) = map_dims(net.input_dim(), a.height)?;
    let map = sea_attribute(&net, h, w)?;
    io::write_heatmap(&a.out, &map.to_heatmap())
}

fn parse_methods(names: &[String]) -> Result<Vec<BaselineMethod>> {
    names.iter().map(|s| s.parse()).collect()
}

fn pipeline(a: &PipelineArgs, seed: u64) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let methods = if a.methods.is_empty() {
        cfg.methods.clone()
    } else {
        parse_methods(&a.methods)?
    };
    let clf = io::read_classifier(&a.classifier)?;
    let image = io::read_heatmap(&a.image)?;
    log::info!("pipeline on {}x{} image", image.height(), image.width());
    let map = sea_pipeline(&clf, &image, &methods, &cfg.pipeline_config())?;
    io::write_heatmap(&a.out, &map.to_heatmap())
}

/// Normalized map of a baseline method name, including `aggmean`.
fn baseline_map(method: &str, clf: &MlpClassifier, image: &Heatmap, cfg: &RunConfig) -> Result<Heatmap> {
    if method.eq_ignore_ascii_case("aggmean") {
        let maps = cfg
            .methods
            .iter()
            .map(|&m| baseline_heatmap(m, clf, image, &cfg.baseline))
            .collect::<Result<Vec<_>>>()?;
        agg_mean(&maps)
    } else {
        baseline_heatmap(method.parse()?, clf, image, &cfg.baseline)
    }
}

fn baseline(a: &BaselineArgs, seed: u64) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let clf = io::read_classifier(&a.classifier)?;
    let image = io::read_heatmap(&a.image)?;
    io::write_heatmap(&a.out, &baseline_map(&a.method, &clf, &image, &cfg)?)
}

fn row(out: &OutputArgs, metric: &str, value: f64) -> MetricRow {
    MetricRow::new(out.image_id.clone(), out.method_name.clone(), metric, value)
}

fn eval_aupc(a: &AupcArgs) -> Result<()> {
    let clf = io::read_classifier(&a.classifier)?;
    let image = io::read_heatmap(&a.image)?;
    let attr = AttributionMap::from_heatmap(&io::read_heatmap(&a.attribution)?);
    let (h, w) = (image.height(), image.width());
    let mode = match a.mode {
        ModeArg::Patch => PerturbationMode::Patch {
            size: a.size.unwrap_or((h.min(w) * 8 / 28).max(1)),
            steps: a.steps,
        },
        ModeArg::Topk => PerturbationMode::TopkPixels {
            per_step: a.per_step.unwrap_or((h * w / 28).max(1)),
            steps: a.steps,
        },
    };
    let curve = aupc(&clf, &image, &attr, mode, a.perturb_value)?;
    write_csv(a.output.out.as_deref(), &[row(&a.output, "aupc", curve.aupc)])
}

fn eval_jaccard(a: &JaccardArgs) -> Result<()> {
    let x = AttributionMap::from_heatmap(&io::read_heatmap(&a.a)?);
    let y = AttributionMap::from_heatmap(&io::read_heatmap(&a.b)?);
    let j = jaccard_topk(&x, &y, a.k)?;
    write_csv(a.output.out.as_deref(), &[row(&a.output, "jaccard", j)])
}

fn eval_robustness(a: &RobustnessArgs, seed: u64) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let clf = io::read_classifier(&a.classifier)?;
    let image = io::read_heatmap(&a.image)?;
    let top = a.top.unwrap_or_else(|| default_robustness_top(image.len()));
    let pipeline_cfg = cfg.pipeline_config();
    let attribute_fn = |im: &Heatmap| -> Result<AttributionMap> {
        if a.method.eq_ignore_ascii_case("sea") {
            sea_pipeline(&clf, im, &cfg.methods, &pipeline_cfg)
        } else {
            Ok(AttributionMap::from_heatmap(&baseline_map(&a.method, &clf, im, &cfg)?))
        }
    };
    let iou = robustness_iou(attribute_fn, &image, a.noise_amp, top, seed)?;
    write_csv(a.output.out.as_deref(), &[row(&a.output, "robustness_iou", iou)])
}

fn topk(a: &TopkArgs) -> Result<()> {
    let net = io::read_dsf(&a.dsf)?;
    let set = top_p_select(&net, a.k)?;
    let line: Vec<String> = set.iter().map(usize::to_string).collect();
    println!("{}", line.join(","));
    Ok(())
}

fn render(a: &RenderArgs) -> Result<()> {
    let h = io::read_heatmap(&a.input)?;
    let base = match &a.overlay {
        Some(p) => Some(io::read_heatmap(p)?),
        None => None,
    };
    let palette = match a.palette {
        PaletteArg::Gray => Palette::Gray,
        PaletteArg::Red => Palette::Red,
    };
    let base = match (base, palette) {
        (None, Palette::Red) => Some(Heatmap::filled(h.height(), h.width(), 0.0)?),
        (b, _) => b,
    };
    io::render_pgm(&h, &a.out, base.as_ref())
}

fn make_dataset(a: &MakeDatasetArgs, seed: u64) -> Result<()> {
    let SyntheticKind::Planted = a.synthetic;
    let cfg = PlantedConfig {
        n_images: a.n_images,
        side: a.side,
        patch_side: a.patch_side,
        intensity: a.intensity,
        background: a.background,
        seed,
    };
    let data = seann_core::baselines::make_planted_dataset_with(&cfg)?;
    io::write_dataset_dir(&a.out, &data)?;
    log::info!("wrote {} images to {}", data.len(), a.out.display());
    Ok(())
}

fn train_clf(a: &TrainClassifierArgs, seed: u64) -> Result<()> {
    let data = match (&a.dataset, &a.idx_images, &a.idx_labels) {
        (Some(dir), _, _) => io::read_dataset_dir(dir)?,
        (None, Some(im), Some(lab)) => io::read_idx_dataset(im, lab)?,
        _ => return Err(invalid("give --dataset or both --idx-images and --idx-labels")),
    };
    let activation = match a.activation.to_ascii_lowercase().as_str() {
        "tanh" => HiddenActivation::Tanh,
        "softplus" => HiddenActivation::Softplus,
        other => return Err(invalid(format!("unknown activation `{other}`"))),
    };
    let cfg = ClassifierConfig {
        hidden: a.hidden.clone(),
        activation,
        epochs: a.epochs,
        lr: a.lr,
        seed,
    };
    let clf = train_classifier(&data, &cfg)?;
    if let Some(acc) = clf.train_accuracy {
        log::info!("train accuracy {acc:.4}");
    }
    io::write_classifier(&a.out, &clf)
}
