use std::path::{Path, PathBuf};

use clap::Args;
use mvskit::dataset;
use mvskit::fusion::{self, FusionConfig};
use mvskit::uncertainty;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{self, check, invalid, runtime, sig9, CliResult};
use crate::depth::{check_view, depth_file, depth_rmse, gt_depth, open_dataset, EnsembleDir};
use crate::Io;

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseFlags {
    /// Dataset directory written by `synth`.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Output directory of `depth`.
    #[arg(long, value_name = "DIR")]
    depths: Option<PathBuf>,
    /// Point cloud to write (binary PLY).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Neighbors a pixel must agree with [default: 3].
    #[arg(long)]
    min_views: Option<usize>,
    /// Round-trip pixel tolerance [default: 1].
    #[arg(long)]
    pix_tol: Option<f64>,
    /// Round-trip relative depth tolerance [default: 0.01].
    #[arg(long)]
    depth_tol: Option<f64>,
    /// Voxel size of the merge [default: half the hypothesis spacing].
    #[arg(long)]
    voxel: Option<f64>,
    /// Keep every back-projected point.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    no_voxel: Option<bool>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct FuseConfig {
    data: PathBuf,
    depths: PathBuf,
    out: PathBuf,
    filter: FusionConfig,
    voxel: Option<f64>,
    report: Option<PathBuf>,
}

pub fn run_fuse(flags: &FuseFlags, cfg: Option<&Path>, io: &mut Io) -> CliResult<()> {
    let f: FuseFlags = config::merge("fuse", config::load_section(cfg, "fuse")?, flags)?;
    let ds = open_dataset("--data", &f.data)?;
    let defaults = FusionConfig::default();
    let filter = FusionConfig {
        geo_depth_tol: f.depth_tol.unwrap_or(defaults.geo_depth_tol),
        geo_pix_tol: f.pix_tol.unwrap_or(defaults.geo_pix_tol),
        min_consistent_views: f.min_views.unwrap_or(defaults.min_consistent_views),
    };
    let no_voxel = f.no_voxel.unwrap_or(false);
    check(!(no_voxel && f.voxel.is_some()), "fuse.voxel", "conflicts with no_voxel")?;
    let c = FuseConfig {
        data: ds.root.clone(),
        depths: config::input_path("--depths", &f.depths)?,
        out: config::output_path("--out", &f.out)?,
        filter,
        voxel: if no_voxel { None } else { Some(f.voxel.unwrap_or(0.5 * ds.depth_interval(0))) },
        report: f.report,
    };
    check(c.filter.geo_pix_tol > 0.0, "fuse.pix_tol", "must be positive")?;
    check(c.filter.geo_depth_tol > 0.0, "fuse.depth_tol", "must be positive")?;
    check(c.filter.min_consistent_views >= 1, "fuse.min_views", "must be at least 1")?;
    check(c.voxel.is_none_or(|v| v > 0.0 && v.is_finite()), "fuse.voxel", "must be positive")?;

    let n = ds.num_views();
    let mut depths = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for v in 0..n {
        let p = depth_file(&c.depths, v);
        if !p.exists() {
            return Err(invalid(format!("--depths: missing {}", p.display())));
        }
        depths.push(dataset::read_depth(&p).map_err(runtime)?);
        images.push(ds.image(v).map_err(runtime)?);
    }
    let filtered = fusion::filter_depths(&depths, &ds.cameras, &ds.pairs, &c.filter).map_err(runtime)?;
    for w in &filtered.warnings {
        io.warn(w);
    }
    let cloud = fusion::fuse(&depths, &filtered.masks, &images, &ds.cameras, c.voxel).map_err(runtime)?;
    dataset::write_cloud(&c.out, &cloud).map_err(runtime)?;

    // Depth error over kept pixels, pooled across views.
    let (mut se, mut count) = (0.0, 0usize);
    let mut per_view = Vec::with_capacity(n);
    for (v, (d, m)) in depths.iter().zip(&filtered.masks).enumerate() {
        let gt = gt_depth(&ds, v);
        if let Some(gt) = &gt {
            for p in 0..d.values().len() {
                if let (true, Some(a), Some(b)) = (m.at(p), d.at(p), gt.at(p)) {
                    se += (a - b) * (a - b);
                    count += 1;
                }
            }
        }
        per_view.push(json!({
            "view": v,
            "kept": m.count(),
            "rmse": gt.as_ref().and_then(|gt| depth_rmse(d, gt, Some(m))),
        }));
    }
    let rmse = (count > 0).then(|| (se / count as f64).sqrt());
    let doc = config::report(
        "fuse",
        &c,
        json!({
            "points": cloud.len(),
            "views": per_view,
            "filtered_rmse": rmse,
            "depth_interval": ds.depth_interval(0),
            "warnings": filtered.warnings,
        }),
    )?;
    config::emit(&doc, c.report.as_deref(), io.stdout)
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFlags {
    /// Reconstructed point cloud (PLY).
    #[arg(long, value_name = "FILE")]
    recon: Option<PathBuf>,
    /// Reference point cloud (PLY) [default: gt.ply of --data].
    #[arg(long, value_name = "FILE")]
    gt: Option<PathBuf>,
    /// Dataset directory; supplies the reference cloud and the default threshold.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// F-score distance threshold [default: 3× the hypothesis spacing of --data].
    #[arg(long)]
    threshold: Option<f64>,
    /// Distance cap of accuracy and completeness [default: 20].
    #[arg(long)]
    max_dist: Option<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EvalConfig {
    recon: PathBuf,
    gt: PathBuf,
    threshold: f64,
    max_dist: f64,
    out: Option<PathBuf>,
}

pub fn run_eval(flags: &EvalFlags, cfg: Option<&Path>, io: &mut Io) -> CliResult<()> {
    let f: EvalFlags = config::merge("eval", config::load_section(cfg, "eval")?, flags)?;
    let recon = config::input_path("--recon", &f.recon)?;
    let ds = match &f.data {
        Some(_) => Some(open_dataset("--data", &f.data)?),
        None => None,
    };
    let gt = match (&f.gt, &ds) {
        (Some(_), _) => config::input_path("--gt", &f.gt)?,
        (None, Some(ds)) => ds.root.join("gt.ply"),
        (None, None) => return Err(invalid("missing required --gt (or --data)")),
    };
    let threshold = match (f.threshold, &ds) {
        (Some(t), _) => t,
        (None, Some(ds)) => 3.0 * ds.depth_interval(0),
        (None, None) => return Err(invalid("missing required --threshold (or --data)")),
    };
    let c = EvalConfig {
        recon,
        gt,
        threshold,
        max_dist: f.max_dist.unwrap_or(fusion::DEFAULT_MAX_DIST),
        out: f.out,
    };
    check(c.threshold > 0.0 && c.threshold.is_finite(), "eval.threshold", "must be positive")?;
    check(c.max_dist > 0.0, "eval.max_dist", "must be positive")?;

    let recon = dataset::read_cloud(&c.recon).map_err(|e| invalid(format!("--recon: {e}")))?;
    let gt = dataset::read_cloud(&c.gt).map_err(|e| invalid(format!("--gt: {e}")))?;
    let m = fusion::dtu_metrics(&recon, &gt, c.max_dist).map_err(runtime)?;
    let fs = fusion::f_score(&recon, &gt, c.threshold).map_err(runtime)?;
    let doc = config::report(
        "eval",
        &c,
        json!({
            "accuracy": m.accuracy,
            "completeness": m.completeness,
            "overall": m.overall,
            "precision": fs.precision,
            "recall": fs.recall,
            "f": fs.f,
            "recon_points": recon.len(),
            "gt_points": gt.len(),
        }),
    )?;
    config::emit(&doc, c.out.as_deref(), io.stdout)
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsifyFlags {
    /// Dataset directory with ground-truth depth.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Reference view the ensemble was computed for [default: 0].
    #[arg(long)]
    view: Option<usize>,
    /// Output directory of `ensemble`.
    #[arg(long, value_name = "DIR")]
    ensemble: Option<PathBuf>,
    /// Points on the curve [default: 20].
    #[arg(long)]
    bins: Option<usize>,
    /// CSV file for the curve; without it the CSV goes to stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SparsifyConfig {
    data: PathBuf,
    view: usize,
    ensemble: PathBuf,
    bins: usize,
    out: Option<PathBuf>,
}

fn curve_csv(curve: &[(f64, f64)], oracle: &[(f64, f64)]) -> String {
    let mut s = String::from("density,error,oracle\n");
    for ((d, e), (_, o)) in curve.iter().zip(oracle) {
        s.push_str(&format!("{},{},{}\n", sig9(*d), sig9(*e), sig9(*o)));
    }
    s
}

pub fn run_sparsify(flags: &SparsifyFlags, cfg: Option<&Path>, io: &mut Io) -> CliResult<()> {
    let f: SparsifyFlags = config::merge("sparsify", config::load_section(cfg, "sparsify")?, flags)?;
    let ds = open_dataset("--data", &f.data)?;
    let c = SparsifyConfig {
        data: ds.root.clone(),
        view: f.view.unwrap_or(0),
        ensemble: config::input_path("--ensemble", &f.ensemble)?,
        bins: f.bins.unwrap_or(20),
        out: f.out,
    };
    check_view(&ds, c.view, "sparsify.view")?;
    check(c.bins >= 2, "sparsify.bins", "must be at least 2")?;
    let ens = EnsembleDir::load("--ensemble", &Some(c.ensemble.clone()))?;
    let gt = gt_depth(&ds, c.view).ok_or_else(|| invalid(format!("--data: no depth for view {}", c.view)))?;
    check(
        gt.width() == ens.mean.width() && gt.height() == ens.mean.height(),
        "sparsify.ensemble",
        "size differs from the dataset depth",
    )?;
    let mask = ens.mean.mask().and(gt.mask());
    let error: Vec<f64> = ens.mean.values().iter().zip(gt.values()).map(|(a, b)| (a - b).abs()).collect();
    let confidence: Vec<f64> = ens.uncertainty.iter().map(|u| -u).collect();
    let s = uncertainty::sparsification_curve(&confidence, &error, &mask, c.bins).map_err(runtime)?;
    let csv = curve_csv(&s.curve, &s.oracle);
    match &c.out {
        Some(p) => {
            config::write_file(p, csv.as_bytes())?;
            let doc = config::report(
                "sparsify",
                &c,
                json!({ "ause": s.ause, "pixels": mask.count(), "full_density_error": s.curve.last().map(|p| p.1) }),
            )?;
            config::emit(&doc, None, io.stdout)
        }
        None => io.stdout.write_all(csv.as_bytes()).map_err(runtime),
    }
}
