//! Ray-cast synthetic scenes with exact depth, flow and point clouds.
//!
//! Scenes are built from planes (optionally bounded rectangles) and
//! spheres with procedural textures, lit by one directional light plus an
//! ambient term. Pixels are shaded at their centers with no anti-aliasing,
//! so Lambertian scenes satisfy photometric consistency up to resampling.

use nalgebra::Vector3;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::geometry::{Camera, GeometryError};
use crate::raster::{DepthMap, FlowField, Mask, Raster};
use crate::rng;
use crate::scene_io::DEFAULT_DEPTH_COUNT;

/// Depth slack of the visibility test.
pub const VISIBILITY_SLACK: f64 = 1e-4;
const MIN_HIT: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("camera {0} is inside primitive {1}")]
    CameraInside(usize, usize),
    #[error("camera {0} sees no geometry")]
    NothingVisible(usize),
    #[error("view index {0} out of range")]
    BadView(usize),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    /// 3D checkerboard with cells of edge `size`.
    Checker { size: f64, a: [f64; 3], b: [f64; 3] },
    /// Smooth value noise with lattice spacing `scale`, blended per channel
    /// between `lo` and `hi`.
    Noise {
        scale: f64,
        lo: [f64; 3],
        hi: [f64; 3],
        #[serde(default = "default_octaves")]
        octaves: u32,
    },
    Constant { color: [f64; 3] },
}

fn default_octaves() -> u32 {
    2
}

/// Rectangle bounds of a plane: `|u·(x-p)| <= half_u`, `|v·(x-p)| <= half_v`
/// with `v = normal × u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneExtent {
    pub u_axis: [f64; 3],
    pub half_u: f64,
    pub half_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        #[serde(default)]
        extent: Option<PlaneExtent>,
    },
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub texture: Texture,
    /// Strength of a view-dependent highlight. Zero keeps the surface
    /// Lambertian.
    #[serde(default)]
    pub specular: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Light {
    /// Direction the light travels.
    pub direction: [f64; 3],
    pub ambient: f64,
    pub diffuse: f64,
}

impl Default for Light {
    fn default() -> Self {
        Self {
            direction: [-0.3, 0.4, 1.0],
            ambient: 0.35,
            diffuse: 0.65,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub position: [f64; 3],
    pub target: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    /// Focal length in pixels.
    pub focal: f64,
}

fn default_up() -> [f64; 3] {
    [0.0, -1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub seed: u64,
    pub depth_range: [f64; 2],
    #[serde(default = "default_count")]
    pub depth_count: usize,
    pub primitives: Vec<Primitive>,
    pub views: Vec<ViewSpec>,
    #[serde(default)]
    pub light: Light,
    /// Standard deviation of additive Gaussian sensor noise, drawn
    /// independently per view from the scene seed.
    #[serde(default)]
    pub noise_sigma: f64,
}

fn default_count() -> usize {
    DEFAULT_DEPTH_COUNT
}

/// One rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub camera: Camera,
    pub image: Raster,
    pub depth: DepthMap,
    /// Index of the primitive hit at each pixel.
    pub hits: Vec<Option<usize>>,
}

/// Ground-truth flows between two views.
#[derive(Debug, Clone, PartialEq)]
pub struct GtFlow {
    /// `I_b(p + forward(p)) = I_a(p)`.
    pub forward: FlowField,
    pub backward: FlowField,
    /// Pixels of view a whose surface point is visible in view b.
    pub visible_forward: Mask,
    /// Pixels of view b whose surface point is visible in view a.
    pub visible_backward: Mask,
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    /// Camera-space depth.
    s: f64,
    prim: usize,
}

/// A validated scene ready for ray casting.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
    cameras: Vec<Camera>,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Self, SynthError> {
        if spec.width < 2 || spec.height < 2 {
            return Err(SynthError::Invalid(format!("image size {}x{} below 2x2", spec.width, spec.height)));
        }
        if spec.views.is_empty() {
            return Err(SynthError::Invalid("no views".into()));
        }
        if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
            return Err(SynthError::Invalid(format!("noise_sigma {} must be >= 0", spec.noise_sigma)));
        }
        if spec.depth_count < 2 {
            return Err(SynthError::Invalid(format!("depth_count {} below 2", spec.depth_count)));
        }
        for (i, p) in spec.primitives.iter().enumerate() {
            match &p.shape {
                Shape::Plane { normal, extent, .. } => {
                    if v3(*normal).norm() == 0.0 {
                        return Err(SynthError::Invalid(format!("primitive {i}: zero normal")));
                    }
                    if let Some(e) = extent {
                        let u = v3(e.u_axis);
                        if u.cross(&v3(*normal)).norm() < 1e-9 || e.half_u <= 0.0 || e.half_v <= 0.0 {
                            return Err(SynthError::Invalid(format!("primitive {i}: degenerate extent")));
                        }
                    }
                }
                Shape::Sphere { radius, .. } => {
                    if !(*radius > 0.0) {
                        return Err(SynthError::Invalid(format!("primitive {i}: radius must be positive")));
                    }
                }
            }
            if let Texture::Noise { scale, .. } | Texture::Checker { size: scale, .. } = &p.texture {
                if !(*scale > 0.0) {
                    return Err(SynthError::Invalid(format!("primitive {i}: texture scale must be positive")));
                }
            }
        }
        let (cx, cy) = ((spec.width - 1) as f64 / 2.0, (spec.height - 1) as f64 / 2.0);
        let range = (spec.depth_range[0], spec.depth_range[1]);
        let mut cameras = Vec::with_capacity(spec.views.len());
        for (vi, v) in spec.views.iter().enumerate() {
            for (pi, p) in spec.primitives.iter().enumerate() {
                if let Shape::Sphere { center, radius } = p.shape {
                    if (v3(v.position) - v3(center)).norm() <= radius {
                        return Err(SynthError::CameraInside(vi, pi));
                    }
                }
            }
            cameras.push(Camera::look_at(v.focal, cx, cy, v.position, v.target, v.up, range)?);
        }
        Ok(Self { spec, cameras })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn num_views(&self) -> usize {
        self.cameras.len()
    }

    fn ray(&self, view: usize, x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
        let cam = &self.cameras[view];
        // Direction scaled so that the camera-space z component is 1.
        let d = cam.rotation().transpose() * (cam.k_inv() * Vector3::new(x, y, 1.0));
        (cam.center(), d)
    }

    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.spec.primitives.iter().enumerate() {
            let s = match &p.shape {
                Shape::Plane { point, normal, extent } => {
                    let n = v3(*normal);
                    let denom = n.dot(d);
                    if denom == 0.0 {
                        continue;
                    }
                    let s = n.dot(&(v3(*point) - o)) / denom;
                    if s <= MIN_HIT {
                        continue;
                    }
                    if let Some(e) = extent {
                        let n = n.normalize();
                        let u = v3(e.u_axis);
                        let u = (u - n * n.dot(&u)).normalize();
                        let v = n.cross(&u);
                        let rel = o + d * s - v3(*point);
                        if rel.dot(&u).abs() > e.half_u || rel.dot(&v).abs() > e.half_v {
                            continue;
                        }
                    }
                    s
                }
                Shape::Sphere { center, radius } => {
                    let oc = o - v3(*center);
                    let a = d.dot(d);
                    let b = 2.0 * d.dot(&oc);
                    let c = oc.dot(&oc) - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc < 0.0 {
                        continue;
                    }
                    let sq = disc.sqrt();
                    let s0 = (-b - sq) / (2.0 * a);
                    let s1 = (-b + sq) / (2.0 * a);
                    if s0 > MIN_HIT {
                        s0
                    } else if s1 > MIN_HIT {
                        s1
                    } else {
                        continue;
                    }
                }
            };
            if best.is_none_or(|b| s < b.s) {
                best = Some(Hit { s, prim: i });
            }
        }
        best
    }

    fn normal_at(&self, prim: usize, x: &Vector3<f64>) -> Vector3<f64> {
        match &self.spec.primitives[prim].shape {
            Shape::Plane { normal, .. } => v3(*normal).normalize(),
            Shape::Sphere { center, .. } => (x - v3(*center)).normalize(),
        }
    }

    fn albedo(&self, prim: usize, x: &Vector3<f64>) -> [f64; 3] {
        match &self.spec.primitives[prim].texture {
            Texture::Constant { color } => *color,
            Texture::Checker { size, a, b } => {
                let k = (x / *size).map(f64::floor);
                if (k.x + k.y + k.z).rem_euclid(2.0) == 0.0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Noise { scale, lo, hi, octaves } => {
                let mut out = [0.0; 3];
                for c in 0..3 {
                    let stream = rng::derive_seed(self.spec.seed, (prim * 3 + c) as u64);
                    let t = fractal_noise(&(x / *scale), stream, (*octaves).max(1));
                    out[c] = lo[c] + (hi[c] - lo[c]) * t;
                }
                out
            }
        }
    }

    fn shade(&self, prim: usize, x: &Vector3<f64>, ray_dir: &Vector3<f64>) -> [f64; 3] {
        let mut n = self.normal_at(prim, x);
        if n.dot(ray_dir) > 0.0 {
            n = -n;
        }
        let l = -v3(self.spec.light.direction).normalize();
        let lambert = self.spec.light.ambient + self.spec.light.diffuse * n.dot(&l).max(0.0);
        let spec_k = self.spec.primitives[prim].specular;
        let highlight = if spec_k > 0.0 {
            let view = -ray_dir.normalize();
            let h = (l + view).normalize();
            spec_k * n.dot(&h).max(0.0).powi(24)
        } else {
            0.0
        };
        let a = self.albedo(prim, x);
        a.map(|c| (c * lambert + highlight).clamp(0.0, 1.0))
    }

    /// Renders one view.
    pub fn render_view(&self, view: usize) -> Result<RenderedView, SynthError> {
        if view >= self.num_views() {
            return Err(SynthError::BadView(view));
        }
        let (w, h) = (self.spec.width, self.spec.height);
        let mut image = Raster::new(w, h, 3);
        let mut depth = vec![0.0; w * h];
        let mut hits = vec![None; w * h];
        for y in 0..h {
            for x in 0..w {
                let (o, d) = self.ray(view, x as f64, y as f64);
                if let Some(hit) = self.intersect(&o, &d) {
                    let p = o + d * hit.s;
                    let c = self.shade(hit.prim, &p, &d);
                    for (ch, v) in c.iter().enumerate() {
                        image.set(x, y, ch, *v);
                    }
                    depth[y * w + x] = hit.s;
                    hits[y * w + x] = Some(hit.prim);
                }
            }
        }
        if hits.iter().all(Option::is_none) {
            return Err(SynthError::NothingVisible(view));
        }
        if self.spec.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.spec.noise_sigma).expect("sigma checked");
            let mut r = rng::stream(self.spec.seed ^ 0x5EED_0F_0015E, view as u64);
            for v in image.data_mut() {
                *v = (*v + normal.sample(&mut r)).clamp(0.0, 1.0);
            }
        }
        let mask = Mask::from_vec(w, h, hits.iter().map(Option::is_some).collect()).expect("shape");
        let depth = DepthMap::with_mask(w, h, depth, mask).expect("shape");
        Ok(RenderedView {
            camera: self.cameras[view].clone(),
            image,
            depth,
            hits,
        })
    }

    pub fn render_all(&self) -> Result<Vec<RenderedView>, SynthError> {
        (0..self.num_views()).map(|v| self.render_view(v)).collect()
    }

    /// Projects world point `x` into `view` and reports the continuous pixel
    /// and whether `x` is the nearest surface along that pixel's ray.
    fn visibility(&self, x: &Vector3<f64>, view: usize) -> Option<([f64; 2], bool)> {
        let cam = &self.cameras[view];
        let (q, depth) = cam.project(x)?;
        let (w, h) = (self.spec.width as f64, self.spec.height as f64);
        // Rounding slack so that border pixels map onto themselves.
        let tol = 1e-9;
        let inside = q[0] >= -tol && q[0] <= w - 1.0 + tol && q[1] >= -tol && q[1] <= h - 1.0 + tol;
        if !inside {
            return Some((q, false));
        }
        let (o, d) = self.ray(view, q[0], q[1]);
        let visible = match self.intersect(&o, &d) {
            Some(hit) => hit.s >= depth - VISIBILITY_SLACK,
            None => true,
        };
        Some((q, visible))
    }

    fn one_way(&self, views: &[RenderedView], a: usize, b: usize) -> (FlowField, Mask) {
        let (w, h) = (self.spec.width, self.spec.height);
        let va = &views[a];
        let mut flow = FlowField::zeros(w, h);
        let mut vis = Mask::new(w, h, false);
        for y in 0..h {
            for x in 0..w {
                let Some(d) = va.depth.get(x, y) else { continue };
                let p = va.camera.back_project(x as f64, y as f64, d);
                if let Some((q, visible)) = self.visibility(&p, b) {
                    flow.set(x, y, [q[0] - x as f64, q[1] - y as f64]);
                    vis.set(x, y, visible);
                }
            }
        }
        (flow, vis)
    }

    /// Exact flows between views `a` and `b` of an already rendered scene.
    pub fn gt_flow(&self, views: &[RenderedView], a: usize, b: usize) -> Result<GtFlow, SynthError> {
        for v in [a, b] {
            if v >= self.num_views() || v >= views.len() {
                return Err(SynthError::BadView(v));
            }
        }
        let (forward, visible_forward) = self.one_way(views, a, b);
        let (backward, visible_backward) = self.one_way(views, b, a);
        Ok(GtFlow {
            forward,
            backward,
            visible_forward,
            visible_backward,
        })
    }

    /// Surface points of every view that are visible in at least
    /// `min_views` views (counting the view they come from), colored from
    /// the rendered image.
    pub fn gt_cloud(&self, views: &[RenderedView], min_views: usize) -> PointCloud {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut points = Vec::new();
        let mut colors = Vec::new();
        for (vi, v) in views.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let Some(d) = v.depth.get(x, y) else { continue };
                    let p = v.camera.back_project(x as f64, y as f64, d);
                    let seen = 1 + (0..views.len())
                        .filter(|&o| o != vi)
                        .filter(|&o| self.visibility(&p, o).is_some_and(|(_, vis)| vis))
                        .count();
                    if seen >= min_views {
                        points.push([p.x, p.y, p.z]);
                        let px = v.image.pixel(x, y);
                        colors.push([0, 1, 2].map(|c| crate::scene_io::quantize(px[c])));
                    }
                }
            }
        }
        PointCloud::with_colors(points, colors)
    }
}

/// Everything [`render`] produces.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub views: Vec<RenderedView>,
    /// Surface points seen by at least two views (all points for a single
    /// view scene).
    pub cloud: PointCloud,
}

/// Renders every view and the ground-truth cloud.
pub fn render(spec: &SceneSpec) -> Result<Rendered, SynthError> {
    let scene = Scene::new(spec.clone())?;
    let views = scene.render_all()?;
    let cloud = scene.gt_cloud(&views, 2.min(views.len()));
    Ok(Rendered { views, cloud })
}

/// Renders the two views and their exact flows.
pub fn gt_flow(spec: &SceneSpec, a: usize, b: usize) -> Result<GtFlow, SynthError> {
    let scene = Scene::new(spec.clone())?;
    let n = scene.num_views();
    if a >= n || b >= n {
        return Err(SynthError::BadView(a.max(b)));
    }
    let views = scene.render_all()?;
    scene.gt_flow(&views, a, b)
}

fn lattice(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let mut h = seed;
    for v in [ix, iy, iz] {
        h = rng::derive_seed(h, v as u64);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Trilinear value noise with a quintic fade, in `[0, 1]`.
fn value_noise(p: &Vector3<f64>, seed: u64) -> f64 {
    let f = p.map(f64::floor);
    let (ix, iy, iz) = (f.x as i64, f.y as i64, f.z as i64);
    let (tx, ty, tz) = (fade(p.x - f.x), fade(p.y - f.y), fade(p.z - f.z));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let mut acc = [[0.0; 2]; 2];
    for (dz, row) in acc.iter_mut().enumerate() {
        for (dy, v) in row.iter_mut().enumerate() {
            let a = lattice(ix, iy + dy as i64, iz + dz as i64, seed);
            let b = lattice(ix + 1, iy + dy as i64, iz + dz as i64, seed);
            *v = lerp(a, b, tx);
        }
    }
    lerp(lerp(acc[0][0], acc[0][1], ty), lerp(acc[1][0], acc[1][1], ty), tz)
}

fn fractal_noise(p: &Vector3<f64>, seed: u64, octaves: u32) -> f64 {
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0;
    for o in 0..octaves {
        sum += amp * value_noise(&(p * freq), rng::derive_seed(seed, o as u64));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 3] = ["acceptance", "textureless_strip", "occluding_planes"];

/// Index of the constant-albedo strip in the `textureless_strip` preset.
pub const STRIP_PRIMITIVE: usize = 3;

fn noise(scale: f64) -> Texture {
    Texture::Noise {
        scale,
        lo: [0.15, 0.12, 0.1],
        hi: [0.95, 0.9, 0.85],
        octaves: 2,
    }
}

fn plane(point: [f64; 3], normal: [f64; 3], extent: Option<PlaneExtent>, texture: Texture) -> Primitive {
    Primitive {
        shape: Shape::Plane { point, normal, extent },
        texture,
        specular: 0.0,
    }
}

fn sphere(center: [f64; 3], radius: f64, texture: Texture) -> Primitive {
    Primitive {
        shape: Shape::Sphere { center, radius },
        texture,
        specular: 0.0,
    }
}

// Camera rig and texture size shared by the presets.
const FOCAL_FACTOR: f64 = 1.6;
const BASELINE: f64 = 3.0;
const TEXTURE_SCALE: f64 = 1.0;

fn three_views(width: usize, target: [f64; 3]) -> Vec<ViewSpec> {
    let focal = FOCAL_FACTOR * width as f64;
    [[0.0, 0.0, 0.0], [-BASELINE, 0.4, 0.0], [BASELINE, -0.4, 0.0]]
        .into_iter()
        .map(|position| ViewSpec {
            position,
            target,
            up: default_up(),
            focal,
        })
        .collect()
}

/// Slanted wall `z = 31 + 0.35 x` facing the cameras.
fn wall() -> ([f64; 3], Vector3<f64>) {
    ([0.0, 0.0, 31.0], Vector3::new(0.35, 0.0, -1.0).normalize())
}

/// Sphere cap of the given radius rising `height` out of the wall at
/// `(x, y)`.
fn dome(x: f64, y: f64, radius: f64, height: f64) -> Primitive {
    let (p, n) = wall();
    let z = p[2] + 0.35 * x;
    let center = Vector3::new(x, y, z) - n * (radius - height);
    sphere(center.into(), radius, noise(TEXTURE_SCALE))
}

/// Built-in scenes, all viewed by three cameras with a 6-unit baseline
/// and depths in `[15, 40]`.
///
/// - `acceptance`: a slanted textured wall with two low domes. Nothing is
///   occluded, so ground-truth depth is photometrically consistent
///   everywhere both views see.
/// - `textureless_strip`: the same with the top of the wall (primitive
///   [`STRIP_PRIMITIVE`]) given a constant albedo.
/// - `occluding_planes`: a bounded textured plane half covering a textured
///   wall.
pub fn preset(name: &str, width: usize, height: usize) -> Option<SceneSpec> {
    let target = [0.0, 0.0, 31.0];
    let (wall_point, wall_n) = wall();
    let domes = || vec![dome(-4.0, 3.5, 6.0, 2.0), dome(5.0, -0.5, 5.0, 1.6)];
    let base = |primitives| SceneSpec {
        width,
        height,
        seed: 7,
        depth_range: [15.0, 40.0],
        depth_count: DEFAULT_DEPTH_COUNT,
        primitives,
        views: three_views(width, target),
        light: Light::default(),
        noise_sigma: 0.0,
    };
    let toward = [0.0, 0.0, -1.0];
    Some(match name {
        "acceptance" => {
            let mut p = domes();
            p.push(plane(wall_point, wall_n.into(), None, noise(TEXTURE_SCALE)));
            base(p)
        }
        "textureless_strip" => {
            // World y points down; the strip covers y < split.
            let split = -6.5;
            let big = 1000.0;
            let half = |y: f64| {
                let z = wall_point[2];
                let extent = PlaneExtent { u_axis: [1.0, 0.0, 0.0], half_u: big, half_v: big };
                ([0.0, y, z], Some(extent))
            };
            let mut p = domes();
            let (pt, ext) = half(split + big);
            p.push(plane(pt, wall_n.into(), ext, noise(TEXTURE_SCALE)));
            let (pt, ext) = half(split - big);
            p.push(plane(pt, wall_n.into(), ext, Texture::Constant { color: [0.6, 0.6, 0.6] }));
            base(p)
        }
        "occluding_planes" => {
            let p = vec![
                plane(
                    [-6.0, 0.0, 18.0],
                    toward,
                    Some(PlaneExtent { u_axis: [1.0, 0.0, 0.0], half_u: 6.0, half_v: 100.0 }),
                    noise(0.8),
                ),
                plane([0.0, 0.0, 28.0], toward, None, noise(1.0)),
            ];
            let mut s = base(p);
            s.views = three_views(width, [0.0, 0.0, 24.0]);
            s
        }
        _ => return None,
    })
}
