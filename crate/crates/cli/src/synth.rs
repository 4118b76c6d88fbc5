use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use mvskit::dataset;
use mvskit::synth::{self, Scene, SceneSpec, SynthError};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{self, check, invalid, runtime, CliResult};
use crate::Io;

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFlags {
    /// Built-in scene: acceptance, textureless_strip or occluding_planes.
    #[arg(long)]
    preset: Option<String>,
    /// Scene description file (.json or .toml) instead of a preset.
    #[arg(long, value_name = "FILE")]
    scene: Option<PathBuf>,
    /// Preset width in pixels [default: 128].
    #[arg(long)]
    width: Option<usize>,
    /// Preset height in pixels [default: 128].
    #[arg(long)]
    height: Option<usize>,
    /// Overrides the scene seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the sensor noise level.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Dataset directory to create.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SynthConfig {
    preset: Option<String>,
    scene: Option<PathBuf>,
    out: PathBuf,
    spec: SceneSpec,
}

fn read_spec(p: &Path) -> CliResult<SceneSpec> {
    let text = fs::read_to_string(p).map_err(|e| invalid(format!("--scene: {}: {e}", p.display())))?;
    let parsed = if p.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| invalid(format!("--scene: {}: {e}", p.display())))
}

fn resolve(flags: &SynthFlags, cfg: Option<&Path>) -> CliResult<SynthConfig> {
    let f: SynthFlags = config::merge("synth", config::load_section(cfg, "synth")?, flags)?;
    let out = config::output_path("--out", &f.out)?;
    let mut spec = match (&f.preset, &f.scene) {
        (Some(_), Some(_)) => return Err(invalid("synth.preset: give either --preset or --scene, not both")),
        (None, None) => return Err(invalid("synth.preset: one of --preset or --scene is required")),
        (Some(name), None) => {
            let (w, h) = (f.width.unwrap_or(128), f.height.unwrap_or(128));
            check(w >= 8, "synth.width", "must be at least 8")?;
            check(h >= 8, "synth.height", "must be at least 8")?;
            synth::preset(name, w, h)
                .ok_or_else(|| invalid(format!("synth.preset: unknown preset `{name}` (expected one of {})", synth::PRESETS.join(", "))))?
        }
        (None, Some(_)) => {
            check(f.width.is_none() && f.height.is_none(), "synth.width", "only applies to presets")?;
            read_spec(&config::input_path("--scene", &f.scene)?)?
        }
    };
    if let Some(s) = f.seed {
        spec.seed = s;
    }
    if let Some(n) = f.noise_sigma {
        check(n >= 0.0 && n.is_finite(), "synth.noise_sigma", "must be finite and non-negative")?;
        spec.noise_sigma = n;
    }
    Ok(SynthConfig {
        preset: f.preset,
        scene: f.scene,
        out,
        spec,
    })
}

pub fn run(flags: &SynthFlags, cfg: Option<&Path>, io: &mut Io) -> CliResult<()> {
    let c = resolve(flags, cfg)?;
    let scene = Scene::new(c.spec.clone()).map_err(|e| match e {
        SynthError::NothingVisible(_) => runtime(e),
        other => invalid(format!("synth.spec: {other}")),
    })?;
    let views = scene.render_all().map_err(runtime)?;
    let cloud = scene.gt_cloud(&views, 2.min(scene.num_views()));
    let rendered = synth::Rendered { views, cloud };
    dataset::write_rendered(&c.out, &scene, &rendered).map_err(runtime)?;
    let spec_json = serde_json::to_string_pretty(&c.spec).map_err(runtime)?;
    config::write_file(&c.out.join("scene.json"), spec_json.as_bytes())?;

    let valid: Vec<usize> = rendered.views.iter().map(|v| v.depth.mask().count()).collect();
    let (lo, hi) = (c.spec.depth_range[0], c.spec.depth_range[1]);
    let doc = config::report(
        "synth",
        &c,
        json!({
            "views": rendered.views.len(),
            "valid_depth_pixels": valid,
            "gt_points": rendered.cloud.len(),
            "depth_interval": (hi - lo) / (c.spec.depth_count.max(2) - 1) as f64,
        }),
    )?;
    config::emit(&doc, None, io.stdout)
}
