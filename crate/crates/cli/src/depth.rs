use std::path::{Path, PathBuf};

use clap::Args;
use mvskit::dataset::{self, Dataset};
use mvskit::matcher::{self, SamplerSpec, Spacing, SweepOptions};
use mvskit::raster::{DepthMap, Mask, Raster};
use mvskit::uncertainty::{self, EnsembleStats};
use mvskit::Camera;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{self, check, invalid, runtime, CliResult};
use crate::Io;

pub(crate) fn parse_spacing(s: &str) -> Result<Spacing, String> {
    match s {
        "depth" => Ok(Spacing::Depth),
        "inverse_depth" | "inverse-depth" => Ok(Spacing::InverseDepth),
        _ => Err(format!("expected `depth` or `inverse_depth`, got `{s}`")),
    }
}

pub(crate) fn open_dataset(flag: &str, p: &Option<PathBuf>) -> CliResult<Dataset> {
    let root = config::input_path(flag, p)?;
    Dataset::open(&root).map_err(|e| invalid(format!("{flag}: {e}")))
}

pub(crate) fn check_view(ds: &Dataset, view: usize, field: &str) -> CliResult<()> {
    check(
        view < ds.num_views(),
        field,
        &format!("view {view} out of range for {} views", ds.num_views()),
    )
}

/// Reference image plus source images and cameras from the view graph.
pub(crate) struct ViewSet {
    pub image: Raster,
    pub camera: Camera,
    pub sources: Vec<(Raster, Camera)>,
    pub source_ids: Vec<usize>,
}

impl ViewSet {
    pub fn load(ds: &Dataset, view: usize, limit: Option<usize>) -> CliResult<Self> {
        let ids = ds.pairs.sources(view, limit.unwrap_or(usize::MAX));
        if ids.is_empty() {
            return Err(runtime(format!("view {view} has no source views in pair.txt")));
        }
        let mut sources = Vec::with_capacity(ids.len());
        for &j in &ids {
            sources.push((ds.image(j).map_err(runtime)?, ds.cameras[j].clone()));
        }
        Ok(Self {
            image: ds.image(view).map_err(runtime)?,
            camera: ds.cameras[view].clone(),
            sources,
            source_ids: ids,
        })
    }

    pub fn refs(&self) -> Vec<(&Raster, &Camera)> {
        self.sources.iter().map(|(i, c)| (i, c)).collect()
    }
}

/// Ground-truth depth of `view` when the dataset has it.
pub(crate) fn gt_depth(ds: &Dataset, view: usize) -> Option<DepthMap> {
    dataset::depth_path(&ds.root, view).exists().then(|| ds.depth(view).ok()).flatten()
}

/// RMSE over pixels valid in both maps.
pub(crate) fn depth_rmse(d: &DepthMap, gt: &DepthMap, mask: Option<&Mask>) -> Option<f64> {
    let (mut se, mut n) = (0.0, 0usize);
    for p in 0..d.values().len() {
        if mask.is_some_and(|m| !m.at(p)) {
            continue;
        }
        if let (Some(a), Some(b)) = (d.at(p), gt.at(p)) {
            se += (a - b) * (a - b);
            n += 1;
        }
    }
    (n > 0).then(|| (se / n as f64).sqrt())
}

pub(crate) fn one_channel(w: usize, h: usize, v: Vec<f64>) -> Raster {
    Raster::from_vec(w, h, 1, v).expect("shape")
}

pub(crate) fn sweep_field_checks(section: &str, hypotheses: usize, temperature: f64) -> CliResult<()> {
    check(hypotheses >= 2, &format!("{section}.hypotheses"), "must be at least 2")?;
    check(
        temperature > 0.0 && temperature.is_finite(),
        &format!("{section}.temperature"),
        "must be positive",
    )
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthFlags {
    /// Dataset directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Output directory for depth/ and variance/ PFMs.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Depth hypotheses [default: 192].
    #[arg(long)]
    hypotheses: Option<usize>,
    /// Hypothesis spacing: depth or inverse_depth [default: depth].
    #[arg(long, value_parser = parse_spacing)]
    spacing: Option<Spacing>,
    /// Soft-argmin temperature [default: 1].
    #[arg(long)]
    temperature: Option<f64>,
    /// Source views per reference, best first [default: all].
    #[arg(long)]
    sources: Option<usize>,
    /// Views to process [default: all].
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<usize>>,
    /// Cost volume memory budget in bytes [default: 1 GiB].
    #[arg(long)]
    memory_budget: Option<usize>,
}

#[derive(Debug, Serialize)]
struct DepthConfig {
    data: PathBuf,
    out: PathBuf,
    hypotheses: usize,
    spacing: Spacing,
    temperature: f64,
    sources: Option<usize>,
    views: Vec<usize>,
    memory_budget: usize,
}

pub fn run_depth(flags: &DepthFlags, cfg: Option<&Path>, io: &mut Io) -> CliResult<()> {
    let f: DepthFlags = config::merge("depth", config::load_section(cfg, "depth")?, flags)?;
    let ds = open_dataset("--data", &f.data)?;
    let c = DepthConfig {
        data: ds.root.clone(),
        out: config::output_path("--out", &f.out)?,
        hypotheses: f.hypotheses.unwrap_or(matcher::DEFAULT_HYPOTHESES),
        spacing: f.spacing.unwrap_or_default(),
        temperature: f.temperature.unwrap_or(matcher::DEFAULT_TEMPERATURE),
        sources: f.sources,
        views: f.views.unwrap_or_else(|| (0..ds.num_views()).collect()),
        memory_budget: f.memory_budget.unwrap_or(matcher::DEFAULT_MEMORY_BUDGET),
    };
    sweep_field_checks("depth", c.hypotheses, c.temperature)?;
    check(c.sources != Some(0), "depth.sources", "must be at least 1")?;
    for &v in &c.views {
        check_view(&ds, v, "depth.views")?;
    }
    let opts = SweepOptions {
        hypotheses: c.hypotheses,
        spacing: c.spacing,
        memory_budget: c.memory_budget,
    };

    let mut per_view = Vec::new();
    for &v in &c.views {
        let set = ViewSet::load(&ds, v, c.sources)?;
        let cv = matcher::build_cost_volume(&set.image, &set.refs(), &set.camera, &opts).map_err(runtime)?;
        let (depth, var) = matcher::soft_argmin_depth(&cv, c.temperature).map_err(runtime)?;
        let (w, h) = (depth.width(), depth.height());
        dataset::write_raster_pfm(&depth_file(&c.out, v), &depth.to_raster()).map_err(runtime)?;
        dataset::write_raster_pfm(&variance_file(&c.out, v), &one_channel(w, h, var)).map_err(runtime)?;
        let rmse = gt_depth(&ds, v).and_then(|gt| depth_rmse(&depth, &gt, None));
        per_view.push(json!({
            "view": v,
            "sources": set.source_ids,
            "valid": depth.mask().count(),
            "degenerate": cv.degenerate().count(),
            "rmse": rmse,
        }));
    }
    let doc = config::report("depth", &c, json!({ "views": per_view }))?;
    config::emit(&doc, Some(&c.out.join("depth.json")), io.stdout)?;
    config::emit(&doc, None, io.stdout)
}

pub(crate) fn depth_file(out: &Path, v: usize) -> PathBuf {
    out.join("depth").join(format!("{v:08}.pfm"))
}

pub(crate) fn variance_file(out: &Path, v: usize) -> PathBuf {
    out.join("variance").join(format!("{v:08}.pfm"))
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleFlags {
    /// Dataset directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Reference view [default: 0].
    #[arg(long)]
    view: Option<usize>,
    /// Output directory for mean, uncertainty, aleatoric and certain PFMs.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Ensemble size T [default: 20].
    #[arg(long)]
    samples: Option<usize>,
    /// Cost dropout probability [default: 0.2].
    #[arg(long)]
    drop_rate: Option<f64>,
    /// Seed of the dropout streams [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Certainty threshold ξ [default: 0.3].
    #[arg(long)]
    xi: Option<f64>,
    /// Divide U by scale² before thresholding [default: none].
    #[arg(long)]
    scale: Option<f64>,
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
    /// Also write every sample to samples/.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    write_samples: Option<bool>,
}

#[derive(Debug, Serialize)]
struct EnsembleConfig {
    data: PathBuf,
    view: usize,
    out: PathBuf,
    samples: usize,
    drop_rate: f64,
    seed: u64,
    xi: f64,
    scale: Option<f64>,
    hypotheses: usize,
    spacing: Spacing,
    temperature: f64,
    sources: Option<usize>,
    memory_budget: usize,
    write_samples: bool,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn run_ensemble(flags: &EnsembleFlags, cfg: Option<&Path>, io: &mut Io) -> CliResult<()> {
    let f: EnsembleFlags = config::merge("ensemble", config::load_section(cfg, "ensemble")?, flags)?;
    let ds = open_dataset("--data", &f.data)?;
    let c = EnsembleConfig {
        data: ds.root.clone(),
        view: f.view.unwrap_or(0),
        out: config::output_path("--out", &f.out)?,
        samples: f.samples.unwrap_or(uncertainty::DEFAULT_SAMPLES),
        drop_rate: f.drop_rate.unwrap_or(0.2),
        seed: f.seed.unwrap_or(0),
        xi: f.xi.unwrap_or(uncertainty::DEFAULT_XI),
        scale: f.scale,
        hypotheses: f.hypotheses.unwrap_or(matcher::DEFAULT_HYPOTHESES),
        spacing: f.spacing.unwrap_or_default(),
        temperature: f.temperature.unwrap_or(matcher::DEFAULT_TEMPERATURE),
        sources: f.sources,
        memory_budget: f.memory_budget.unwrap_or(matcher::DEFAULT_MEMORY_BUDGET),
        write_samples: f.write_samples.unwrap_or(false),
    };
    check_view(&ds, c.view, "ensemble.view")?;
    sweep_field_checks("ensemble", c.hypotheses, c.temperature)?;
    check(c.samples >= 2, "ensemble.samples", "must be at least 2")?;
    check((0.0..1.0).contains(&c.drop_rate), "ensemble.drop_rate", "must lie in [0, 1)")?;
    check(c.xi > 0.0 && c.xi < 1.0, "ensemble.xi", "must lie in (0, 1)")?;
    check(c.scale.is_none_or(|s| s > 0.0 && s.is_finite()), "ensemble.scale", "must be positive")?;
    check(c.sources != Some(0), "ensemble.sources", "must be at least 1")?;

    let set = ViewSet::load(&ds, c.view, c.sources)?;
    let opts = SweepOptions {
        hypotheses: c.hypotheses,
        spacing: c.spacing,
        memory_budget: c.memory_budget,
    };
    let spec = SamplerSpec {
        samples: c.samples,
        drop_rate: c.drop_rate,
        seed: c.seed,
        temperature: c.temperature,
    };
    let stack = matcher::mc_sample(&set.image, &set.refs(), &set.camera, &opts, &spec).map_err(runtime)?;
    let stats = uncertainty::ensemble_stats(&stack).map_err(runtime)?;
    let certain = uncertainty::certainty_mask(&stats.uncertainty, stats.mean.mask(), c.xi, c.scale).map_err(runtime)?;
    write_ensemble(&c.out, &stats, &certain)?;
    if c.write_samples {
        for (t, d) in stack.depths().iter().enumerate() {
            let p = c.out.join("samples").join(format!("{t:08}.pfm"));
            dataset::write_raster_pfm(&p, &d.to_raster()).map_err(runtime)?;
        }
    }

    let valid = stats.mean.mask();
    let u_valid: Vec<f64> = (0..valid.bits().len()).filter(|&p| valid.at(p)).map(|p| stats.uncertainty[p]).collect();
    let mut results = json!({
        "valid": valid.count(),
        "certain": certain.count(),
        "median_uncertainty": median(u_valid),
    });
    if let Some(gt) = gt_depth(&ds, c.view) {
        let (mut u, mut e) = (Vec::new(), Vec::new());
        for p in 0..valid.bits().len() {
            if let (Some(m), Some(g)) = (stats.mean.at(p), gt.at(p)) {
                u.push(stats.uncertainty[p]);
                e.push((m - g).abs());
            }
        }
        results["spearman_uncertainty_error"] = uncertainty::spearman(&u, &e).map_or(Value::Null, Value::from);
        results["mean_rmse"] = depth_rmse(&stats.mean, &gt, None).map_or(Value::Null, Value::from);
        results["certain_rmse"] = depth_rmse(&stats.mean, &gt, Some(&certain)).map_or(Value::Null, Value::from);
    }
    let doc = config::report("ensemble", &c, results)?;
    config::emit(&doc, Some(&c.out.join("ensemble.json")), io.stdout)?;
    config::emit(&doc, None, io.stdout)
}

fn write_ensemble(out: &Path, stats: &EnsembleStats, certain: &Mask) -> CliResult<()> {
    let (w, h) = (stats.mean.width(), stats.mean.height());
    let files = [
        ("mean.pfm", stats.mean.to_raster()),
        ("uncertainty.pfm", one_channel(w, h, stats.uncertainty.clone())),
        ("aleatoric.pfm", one_channel(w, h, stats.aleatoric.clone())),
        ("certain.pfm", certain.to_raster()),
    ];
    for (name, r) in files {
        dataset::write_raster_pfm(&out.join(name), &r).map_err(runtime)?;
    }
    Ok(())
}

/// Mean depth, uncertainty, aleatoric variance and certainty mask written
/// by `ensemble`.
pub(crate) struct EnsembleDir {
    pub mean: DepthMap,
    pub uncertainty: Vec<f64>,
    pub aleatoric: Vec<f64>,
    pub certain: Mask,
}

impl EnsembleDir {
    pub fn load(flag: &str, p: &Option<PathBuf>) -> CliResult<Self> {
        let dir = config::input_path(flag, p)?;
        let read = |name: &str| {
            let path = dir.join(name);
            if !path.exists() {
                return Err(invalid(format!("{flag}: missing {}", path.display())));
            }
            dataset::read_scalar(&path).map_err(runtime)
        };
        let mean = read("mean.pfm")?;
        let mean = DepthMap::from_raster(&mean).expect("one channel");
        let uncertainty = read("uncertainty.pfm")?.into_vec();
        let aleatoric = read("aleatoric.pfm")?.into_vec();
        let c = read("certain.pfm")?;
        let certain = Mask::from_vec(c.width(), c.height(), c.data().iter().map(|&v| v > 0.5).collect()).expect("shape");
        Ok(Self {
            mean,
            uncertainty,
            aleatoric,
            certain,
        })
    }
}
