use std::path::{Path, PathBuf};

use clap::Args;
use mvskit::dataset;
use mvskit::losses::{self, AleatoricMap, AugmentationSpec, FlowSource, LossReport, LossSummary, OcclusionMode, SourceView};
use mvskit::matcher::{self, Spacing, SweepOptions};
use mvskit::raster::{FlowField, Mask};
use mvskit::rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{self, check, invalid, runtime, CliResult};
use crate::depth::{check_view, depth_rmse, gt_depth, open_dataset, parse_spacing, sweep_field_checks, EnsembleDir, ViewSet};
use crate::Io;

fn parse_occlusion(s: &str) -> Result<OcclusionMode, String> {
    match s {
        "warped" => Ok(OcclusionMode::Warped),
        "literal" => Ok(OcclusionMode::Literal),
        _ => Err(format!("expected `warped` or `literal`, got `{s}`")),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FlowInput {
    /// Flows stored in the dataset's flows/ directory.
    #[default]
    Dataset,
    /// Flows estimated by block matching.
    Block,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossFlags {
    /// Dataset directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Reference view [default: 0].
    #[arg(long)]
    view: Option<usize>,
    /// Depth map to score [default: the dataset's depth].
    #[arg(long, value_name = "FILE")]
    depth: Option<PathBuf>,
    /// Ensemble directory; adds the aleatoric and self-training losses.
    #[arg(long, value_name = "DIR")]
    ensemble: Option<PathBuf>,
    /// Source views, best first [default: all].
    #[arg(long)]
    sources: Option<usize>,
    /// Weight λ of the flow-depth term [default: 0.1].
    #[arg(long)]
    lambda: Option<f64>,
    /// Forward-backward threshold ε in pixels [default: 0.5].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Occlusion check: warped or literal [default: warped].
    #[arg(long, value_parser = parse_occlusion)]
    occlusion: Option<OcclusionMode>,
    /// Where measured flows come from [default: dataset].
    #[arg(long, value_enum)]
    flow: Option<FlowInput>,
    /// Block matcher search radius per level [default: 4].
    #[arg(long)]
    max_disp: Option<usize>,
    /// Block matcher pyramid levels [default: 4].
    #[arg(long)]
    levels: Option<usize>,
    /// Variance floor before taking logs [default: 1e-6].
    #[arg(long)]
    variance_floor: Option<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct LossConfig {
    data: PathBuf,
    view: usize,
    depth: Option<PathBuf>,
    ensemble: Option<PathBuf>,
    sources: Option<usize>,
    lambda: f64,
    epsilon: f64,
    occlusion: OcclusionMode,
    flow: FlowInput,
    max_disp: usize,
    levels: usize,
    variance_floor: f64,
    out: Option<PathBuf>,
}

fn summary(r: &LossReport, lambda: Option<f64>, epsilon: Option<f64>, xi: Option<f64>) -> LossSummary {
    LossSummary {
        lambda,
        epsilon,
        xi,
        ..r.summary()
    }
}

fn to_json(s: Option<LossSummary>) -> CliResult<Value> {
    serde_json::to_value(s).map_err(runtime)
}

pub fn run_loss(flags: &LossFlags, cfg: Option<&Path>, io: &mut Io) -> CliResult<()> {
    let f: LossFlags = config::merge("loss", config::load_section(cfg, "loss")?, flags)?;
    let ds = open_dataset("--data", &f.data)?;
    let c = LossConfig {
        data: ds.root.clone(),
        view: f.view.unwrap_or(0),
        depth: config::optional_input("--depth", &f.depth)?,
        ensemble: config::optional_input("--ensemble", &f.ensemble)?,
        sources: f.sources,
        lambda: f.lambda.unwrap_or(losses::DEFAULT_LAMBDA),
        epsilon: f.epsilon.unwrap_or(losses::DEFAULT_EPSILON),
        occlusion: f.occlusion.unwrap_or_default(),
        flow: f.flow.unwrap_or_default(),
        max_disp: f.max_disp.unwrap_or(4),
        levels: f.levels.unwrap_or(4),
        variance_floor: f.variance_floor.unwrap_or(1e-6),
        out: f.out,
    };
    check_view(&ds, c.view, "loss.view")?;
    check(c.lambda >= 0.0 && c.lambda.is_finite(), "loss.lambda", "must be finite and non-negative")?;
    check(c.epsilon > 0.0 && c.epsilon.is_finite(), "loss.epsilon", "must be positive")?;
    check(c.variance_floor > 0.0, "loss.variance_floor", "must be positive")?;
    check(c.levels >= 1, "loss.levels", "must be at least 1")?;
    check(c.sources != Some(0), "loss.sources", "must be at least 1")?;

    let depth = match &c.depth {
        Some(p) => dataset::read_depth(p).map_err(runtime)?,
        None => gt_depth(&ds, c.view).ok_or_else(|| invalid("missing required --depth (the dataset has no depth for this view)"))?,
    };
    let set = ViewSet::load(&ds, c.view, c.sources)?;
    let sources: Vec<SourceView> = set.sources.iter().map(|(image, camera)| SourceView { image, camera }).collect();
    let pc = losses::photometric_loss(&set.image, &sources, &depth, &set.camera).map_err(runtime)?;

    let mut flows: Vec<(FlowField, FlowField)> = Vec::new();
    for (k, &j) in set.source_ids.iter().enumerate() {
        flows.push(match c.flow {
            FlowInput::Dataset => (ds.flow(c.view, j).map_err(runtime)?, ds.flow(j, c.view).map_err(runtime)?),
            FlowInput::Block => {
                let src = &set.sources[k].0;
                (
                    matcher::block_match_flow(&set.image, src, c.max_disp, c.levels).map_err(runtime)?,
                    matcher::block_match_flow(src, &set.image, c.max_disp, c.levels).map_err(runtime)?,
                )
            }
        });
    }
    let flow_sources: Vec<FlowSource> = set
        .source_ids
        .iter()
        .zip(&flows)
        .map(|(&j, (fwd, bwd))| FlowSource {
            camera: &ds.cameras[j],
            forward: fwd,
            backward: bwd,
        })
        .collect();
    let fc = match losses::flow_depth_loss_for_depth(&depth, &set.camera, &flow_sources, c.epsilon, c.occlusion) {
        Ok(r) => Some(r),
        Err(e) => {
            io.warn(&format!("flow-depth loss unavailable: {e}"));
            None
        }
    };
    let ssp = fc.as_ref().map(|fc| losses::combined_loss(&pc, fc, c.lambda));

    let mut out = Map::new();
    out.insert("pc".into(), to_json(Some(summary(&pc, None, None, None)))?);
    out.insert("fc".into(), to_json(fc.as_ref().map(|r| summary(r, None, Some(c.epsilon), None)))?);
    out.insert("ssp".into(), to_json(ssp.as_ref().map(|r| summary(r, Some(c.lambda), Some(c.epsilon), None)))?);

    if c.ensemble.is_some() {
        let ens = EnsembleDir::load("--ensemble", &c.ensemble)?;
        let (w, h) = (depth.width(), depth.height());
        check(ens.mean.width() == w && ens.mean.height() == h, "loss.ensemble", "size differs from the depth map")?;
        let alea = AleatoricMap::from_variance(w, h, &ens.aleatoric, c.variance_floor);
        let pc_a = losses::aleatoric_photometric_loss(&set.image, &sources, &depth, &set.camera, &alea).map_err(runtime)?;
        out.insert("pc_aleatoric".into(), to_json(Some(summary(&pc_a, None, None, None)))?);
        let ssp_a = fc.as_ref().map(|fc| losses::combined_loss(&pc_a, fc, c.lambda));
        out.insert(
            "ssp_aleatoric".into(),
            to_json(ssp_a.as_ref().map(|r| summary(r, Some(c.lambda), Some(c.epsilon), None)))?,
        );
        let uc = match losses::self_training_loss(&depth, &ens.mean, &ens.certain) {
            Ok(r) => Some(summary(&r, None, None, None)),
            Err(e) => {
                io.warn(&format!("self-training loss unavailable: {e}"));
                None
            }
        };
        out.insert("uc".into(), to_json(uc)?);
    }
    let doc = config::report("loss", &c, json!({ "losses": out }))?;
    config::emit(&doc, c.out.as_deref(), io.stdout)
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelftrainFlags {
    /// Dataset directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Reference view [default: 0].
    #[arg(long)]
    view: Option<usize>,
    /// Ensemble directory with the pseudo-label and certainty mask.
    #[arg(long, value_name = "DIR")]
    ensemble: Option<PathBuf>,
    /// Seed of the photometric augmentation [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Gain range LO,HI within [0.8, 1.2] [default: 0.8,1.2].
    #[arg(long, value_delimiter = ',', num_args = 2)]
    gain: Option<Vec<f64>>,
    /// Bias range LO,HI within [-0.1, 0.1] [default: -0.1,0.1].
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    bias: Option<Vec<f64>>,
    /// Gamma range LO,HI within [0.8, 1.25] [default: 0.8,1.25].
    #[arg(long, value_delimiter = ',', num_args = 2)]
    gamma: Option<Vec<f64>>,
    /// Depth hypotheses [default: 192].
    #[arg(long)]
    hypotheses: Option<usize>,
    /// Hypothesis spacing: depth or inverse_depth [default: depth].
    #[arg(long, value_parser = parse_spacing)]
    spacing: Option<Spacing>,
    /// Soft-argmin temperature [default: 1].
    #[arg(long)]
    temperature: Option<f64>,
    /// Source views, best first [default: all].
    #[arg(long)]
    sources: Option<usize>,
    /// Cost volume memory budget in bytes [default: 1 GiB].
    #[arg(long)]
    memory_budget: Option<usize>,
    /// Also write the augmented-input depth map (PFM).
    #[arg(long, value_name = "FILE")]
    depth_out: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SelftrainConfig {
    data: PathBuf,
    view: usize,
    ensemble: PathBuf,
    seed: u64,
    augmentation: AugmentationSpec,
    hypotheses: usize,
    spacing: Spacing,
    temperature: f64,
    sources: Option<usize>,
    memory_budget: usize,
    depth_out: Option<PathBuf>,
    out: Option<PathBuf>,
}

/// Stream index of the augmentation seed.
const AUGMENT_STREAM: u64 = 0x6175_6720;

fn range(field: &str, v: &Option<Vec<f64>>, default: (f64, f64)) -> CliResult<(f64, f64)> {
    match v.as_deref() {
        None => Ok(default),
        Some([lo, hi]) => Ok((*lo, *hi)),
        Some(_) => Err(invalid(format!("{field}: expected two values LO,HI"))),
    }
}

pub fn run_selftrain(flags: &SelftrainFlags, cfg: Option<&Path>, io: &mut Io) -> CliResult<()> {
    let f: SelftrainFlags = config::merge("selftrain", config::load_section(cfg, "selftrain")?, flags)?;
    let ds = open_dataset("--data", &f.data)?;
    let seed = f.seed.unwrap_or(0);
    let defaults = AugmentationSpec::default();
    let augmentation = AugmentationSpec {
        gain: range("selftrain.gain", &f.gain, defaults.gain)?,
        bias: range("selftrain.bias", &f.bias, defaults.bias)?,
        gamma: range("selftrain.gamma", &f.gamma, defaults.gamma)?,
        seed: rng::derive_seed(seed, AUGMENT_STREAM),
    };
    augmentation.validate().map_err(|e| invalid(format!("selftrain.augmentation: {e}")))?;
    let c = SelftrainConfig {
        data: ds.root.clone(),
        view: f.view.unwrap_or(0),
        ensemble: config::input_path("--ensemble", &f.ensemble)?,
        seed,
        augmentation,
        hypotheses: f.hypotheses.unwrap_or(matcher::DEFAULT_HYPOTHESES),
        spacing: f.spacing.unwrap_or_default(),
        temperature: f.temperature.unwrap_or(matcher::DEFAULT_TEMPERATURE),
        sources: f.sources,
        memory_budget: f.memory_budget.unwrap_or(matcher::DEFAULT_MEMORY_BUDGET),
        depth_out: f.depth_out,
        out: f.out,
    };
    check_view(&ds, c.view, "selftrain.view")?;
    sweep_field_checks("selftrain", c.hypotheses, c.temperature)?;
    check(c.sources != Some(0), "selftrain.sources", "must be at least 1")?;

    let ens = EnsembleDir::load("--ensemble", &Some(c.ensemble.clone()))?;
    let set = ViewSet::load(&ds, c.view, c.sources)?;
    let mut images = vec![set.image.clone()];
    images.extend(set.sources.iter().map(|(i, _)| i.clone()));
    let aug = losses::augment(&images, &c.augmentation);
    let srcs: Vec<_> = aug[1..].iter().zip(&set.sources).map(|(i, (_, cam))| (i, cam)).collect();
    let opts = SweepOptions {
        hypotheses: c.hypotheses,
        spacing: c.spacing,
        memory_budget: c.memory_budget,
    };
    let cv = matcher::build_cost_volume(&aug[0], &srcs, &set.camera, &opts).map_err(runtime)?;
    let (d_aug, _) = matcher::soft_argmin_depth(&cv, c.temperature).map_err(runtime)?;
    let (w, h) = (d_aug.width(), d_aug.height());
    check(ens.mean.width() == w && ens.mean.height() == h, "selftrain.ensemble", "size differs from the images")?;
    if let Some(p) = &c.depth_out {
        dataset::write_raster_pfm(p, &d_aug.to_raster()).map_err(runtime)?;
    }

    let filtered = losses::self_training_loss(&d_aug, &ens.mean, &ens.certain).map_err(runtime)?;
    let unfiltered = losses::self_training_loss(&d_aug, &ens.mean, &Mask::new(w, h, true)).map_err(runtime)?;
    let jitter: Vec<Value> = (0..images.len())
        .map(|i| {
            let j = c.augmentation.draw(i);
            json!({ "gain": j.gain, "bias": j.bias, "gamma": j.gamma })
        })
        .collect();
    let mut results = json!({
        "uc_filtered": summary(&filtered, None, None, None),
        "uc_unfiltered": summary(&unfiltered, None, None, None),
        "certain": ens.certain.count(),
        "jitter": jitter,
    });
    if let Some(gt) = gt_depth(&ds, c.view) {
        results["augmented_rmse"] = depth_rmse(&d_aug, &gt, None).map_or(Value::Null, Value::from);
    }
    let doc = config::report("selftrain", &c, results)?;
    config::emit(&doc, c.out.as_deref(), io.stdout)
}
