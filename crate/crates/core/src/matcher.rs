//! A non-learned depth and flow backbone.
//!
//! Depth comes from a plane sweep: every source image is warped into the
//! reference view through fronto-parallel planes, each pixel gets a 5×5
//! patch descriptor (mean-subtracted intensity plus forward gradients,
//! 75 values, on the 0..255 gray scale), and the cost of a hypothesis is
//! the across-view variance of the descriptors averaged over elements.
//! Soft-argmin over the costs gives depth and a distributional variance
//! that serves as the aleatoric map. Ensembles come from dropping random
//! cost entries before the soft-argmin.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{bilinear_sample, forward_pair, warp_field, Camera};
use crate::raster::{DepthMap, FlowField, Mask, Raster};
use crate::rng;
use crate::uncertainty::EnsembleStack;

/// Default number of depth hypotheses.
pub const DEFAULT_HYPOTHESES: usize = 192;
/// Default soft-argmin temperature, in cost units.
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
/// Default cost-volume memory budget: 1 GiB.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

const RADIUS: isize = 2;
const WINDOW: usize = 25;
const ELEMENTS: f64 = 75.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatcherError {
    #[error("need at least 2 hypotheses, got {0}")]
    TooFewHypotheses(usize),
    #[error("need at least one source view")]
    NoSources,
    #[error("cost volume needs {required} bytes, budget is {budget}")]
    MemoryBudget { required: usize, budget: usize },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("drop rate must lie in [0, 1), got {0}")]
    BadDropRate(f64),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("image size mismatch: {0}")]
    Shape(String),
}

/// How hypotheses are spread over the depth range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Depth,
    InverseDepth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub hypotheses: usize,
    pub spacing: Spacing,
    pub memory_budget: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            hypotheses: DEFAULT_HYPOTHESES,
            spacing: Spacing::Depth,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

/// Strictly increasing hypothesis depths covering `range` inclusively.
pub fn hypothesis_depths(range: (f64, f64), count: usize, spacing: Spacing) -> Vec<f64> {
    let (lo, hi) = range;
    let step = |k: usize| k as f64 / (count - 1) as f64;
    (0..count)
        .map(|k| match spacing {
            Spacing::Depth => lo + (hi - lo) * step(k),
            Spacing::InverseDepth => {
                // Far to near in inverse depth, reversed so depths increase.
                let t = step(count - 1 - k);
                1.0 / (1.0 / hi + (1.0 / lo - 1.0 / hi) * t)
            }
        })
        .collect()
}

/// Matching costs for every pixel and hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    depths: Vec<f64>,
    /// Indexed `pixel * D + k`.
    cost: Vec<f64>,
    /// Pixels where no hypothesis had two valid views.
    degenerate: Mask,
}

impl CostVolume {
    /// Builds a volume from raw costs; `None` entries are invalid and get
    /// the largest valid cost.
    pub fn from_entries(width: usize, height: usize, depths: Vec<f64>, entries: &[Option<f64>]) -> Result<Self, MatcherError> {
        let d = depths.len();
        if d < 2 {
            return Err(MatcherError::TooFewHypotheses(d));
        }
        if entries.len() != width * height * d {
            return Err(MatcherError::Shape(format!("{} entries for {width}x{height}x{d}", entries.len())));
        }
        let fill = entries.iter().flatten().copied().fold(0.0, f64::max);
        let cost = entries.iter().map(|c| c.unwrap_or(fill)).collect();
        let degenerate = Mask::from_fn(width, height, |x, y| {
            let p = y * width + x;
            entries[p * d..(p + 1) * d].iter().all(Option::is_none)
        });
        Ok(Self {
            width,
            height,
            depths,
            cost,
            degenerate,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    /// Costs of pixel `p` over all hypotheses.
    pub fn costs(&self, p: usize) -> &[f64] {
        let d = self.depths.len();
        &self.cost[p * d..(p + 1) * d]
    }

    pub fn degenerate(&self) -> &Mask {
        &self.degenerate
    }
}

struct Descriptors {
    /// Gray samples on the 0..255 scale.
    img: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
    /// Window mean per pixel.
    mean: Vec<f64>,
    /// Whether the whole window (with gradient partners) is valid.
    valid: Vec<bool>,
}

fn window(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    (-RADIUS..=RADIUS).flat_map(move |dy| {
        (-RADIUS..=RADIUS).map(move |dx| {
            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            yy * w + xx
        })
    })
}

fn descriptors(img: Vec<f64>, ok: &[bool], w: usize, h: usize) -> Descriptors {
    let n = w * h;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut pair_ok = vec![false; n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (a, b) = forward_pair(x, w);
            let (c, d) = forward_pair(y, h);
            let (xa, xb) = (y * w + a, y * w + b);
            let (ya, yb) = (c * w + x, d * w + x);
            gx[p] = img[xa] - img[xb];
            gy[p] = img[ya] - img[yb];
            pair_ok[p] = ok[p] && ok[xa] && ok[xb] && ok[ya] && ok[yb];
        }
    }
    let mut mean = vec![0.0; n];
    let mut valid = vec![false; n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut s = 0.0;
            let mut all = true;
            for q in window(x, y, w, h) {
                s += img[q];
                all &= pair_ok[q];
            }
            mean[p] = s / WINDOW as f64;
            valid[p] = all;
        }
    }
    Descriptors { img, gx, gy, mean, valid }
}

fn gray255(img: &Raster) -> Vec<f64> {
    img.to_gray().data().iter().map(|v| v * 255.0).collect()
}

/// Plane-sweep cost volume. Sources are `(image, camera)` pairs; images
/// may have any channel count and must share the reference size.
pub fn build_cost_volume(i_ref: &Raster, sources: &[(&Raster, &Camera)], cam_ref: &Camera, opts: &SweepOptions) -> Result<CostVolume, MatcherError> {
    if opts.hypotheses < 2 {
        return Err(MatcherError::TooFewHypotheses(opts.hypotheses));
    }
    if sources.is_empty() {
        return Err(MatcherError::NoSources);
    }
    let (w, h) = (i_ref.width(), i_ref.height());
    if w < 2 || h < 2 {
        return Err(MatcherError::Shape(format!("reference is {w}x{h}")));
    }
    for (j, (img, _)) in sources.iter().enumerate() {
        if img.width() != w || img.height() != h {
            return Err(MatcherError::Shape(format!("source {j} is {}x{}, reference is {w}x{h}", img.width(), img.height())));
        }
    }
    let n = w * h;
    let d = opts.hypotheses;
    let required = n
        .checked_mul(d)
        .and_then(|e| e.checked_mul(std::mem::size_of::<Option<f64>>() + std::mem::size_of::<f64>()))
        .unwrap_or(usize::MAX);
    if required > opts.memory_budget {
        return Err(MatcherError::MemoryBudget {
            required,
            budget: opts.memory_budget,
        });
    }
    let depths = hypothesis_depths(cam_ref.depth_range(), d, opts.spacing);
    let reference = descriptors(gray255(i_ref), &vec![true; n], w, h);
    let grays: Vec<Raster> = sources
        .iter()
        .map(|(img, _)| Raster::from_vec(w, h, 1, gray255(img)).expect("shape"))
        .collect();

    let mut entries = vec![None; n * d];
    for (k, &depth) in depths.iter().enumerate() {
        let plane = DepthMap::constant(w, h, depth);
        let warped: Vec<Descriptors> = sources
            .iter()
            .zip(&grays)
            .map(|((_, cam), gray)| {
                let wf = warp_field(&plane, cam_ref, cam, w, h);
                let s = bilinear_sample(gray, &wf.coords, w, h);
                let ok: Vec<bool> = s.inbounds.and(&wf.mask).bits().to_vec();
                descriptors(s.image.into_vec(), &ok, w, h)
            })
            .collect();
        let mut views: Vec<&Descriptors> = Vec::with_capacity(sources.len() + 1);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                views.clear();
                views.push(&reference);
                views.extend(warped.iter().filter(|v| v.valid[p]));
                if views.len() < 2 {
                    continue;
                }
                let vn = views.len() as f64;
                let mut total = 0.0;
                for q in window(x, y, w, h) {
                    let (mut s1, mut s2) = (0.0, 0.0);
                    let (mut g1, mut g2) = (0.0, 0.0);
                    let (mut h1, mut h2) = (0.0, 0.0);
                    for v in &views {
                        let a = v.img[q] - v.mean[p];
                        s1 += a;
                        s2 += a * a;
                        g1 += v.gx[q];
                        g2 += v.gx[q] * v.gx[q];
                        h1 += v.gy[q];
                        h2 += v.gy[q] * v.gy[q];
                    }
                    let var = |s1: f64, s2: f64| (s2 / vn - (s1 / vn) * (s1 / vn)).max(0.0);
                    total += var(s1, s2) + var(g1, g2) + var(h1, h2);
                }
                entries[p * d + k] = Some(total / ELEMENTS);
            }
        }
    }
    CostVolume::from_entries(w, h, depths, &entries)
}

/// Depth and distributional variance of one pixel's kept hypotheses.
fn softmin(costs: &[f64], depths: &[f64], keep: impl Fn(usize) -> bool, temperature: f64) -> Option<(f64, f64)> {
    let cmin = (0..costs.len()).filter(|&k| keep(k)).map(|k| costs[k]).fold(f64::INFINITY, f64::min);
    if !cmin.is_finite() {
        return None;
    }
    let mut sw = 0.0;
    let mut swd = 0.0;
    let mut weights = vec![0.0; costs.len()];
    for k in (0..costs.len()).filter(|&k| keep(k)) {
        let wk = (-(costs[k] - cmin) / temperature).exp();
        weights[k] = wk;
        sw += wk;
        swd += wk * depths[k];
    }
    let lo = depths[0];
    let hi = depths[depths.len() - 1];
    let mean = (swd / sw).clamp(lo, hi);
    let var = weights
        .iter()
        .zip(depths)
        .map(|(wk, dk)| wk * (dk - mean) * (dk - mean))
        .sum::<f64>()
        / sw;
    Some((mean, var))
}

/// Soft-argmin depth and per-pixel variance `Σ w_k (d_k - D)²` with
/// `w = softmin(cost / temperature)`. Degenerate pixels are invalid and
/// get zero variance.
pub fn soft_argmin_depth(cv: &CostVolume, temperature: f64) -> Result<(DepthMap, Vec<f64>), MatcherError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(MatcherError::BadTemperature(temperature));
    }
    let n = cv.width * cv.height;
    let mut depth = vec![0.0; n];
    let mut var = vec![0.0; n];
    for p in 0..n {
        if cv.degenerate.at(p) {
            continue;
        }
        let (m, v) = softmin(cv.costs(p), &cv.depths, |_| true, temperature).expect("nonempty");
        depth[p] = m;
        var[p] = v;
    }
    let mask = cv.degenerate.not();
    Ok((DepthMap::with_mask(cv.width, cv.height, depth, mask).expect("shape"), var))
}

/// Parameters of the cost-dropout ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub samples: usize,
    pub drop_rate: f64,
    pub seed: u64,
    pub temperature: f64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            samples: 20,
            drop_rate: 0.2,
            seed: 0,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl SamplerSpec {
    pub fn validate(&self) -> Result<(), MatcherError> {
        if self.samples < 2 {
            return Err(MatcherError::TooFewSamples(self.samples));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(MatcherError::BadDropRate(self.drop_rate));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(MatcherError::BadTemperature(self.temperature));
        }
        Ok(())
    }
}

/// Draws `spec.samples` depth maps from one cost volume. Sample `t` keeps
/// each (pixel, hypothesis) entry with probability `1 - drop_rate` using
/// its own seeded stream, then runs the soft-argmin over kept entries.
pub fn mc_sample_volume(cv: &CostVolume, spec: &SamplerSpec) -> Result<EnsembleStack, MatcherError> {
    spec.validate()?;
    let (w, h) = (cv.width, cv.height);
    let d = cv.depths.len();
    let mut stack = EnsembleStack::new(w, h);
    let mut keep = vec![true; d];
    for t in 0..spec.samples {
        let mut r = rng::stream(spec.seed, t as u64);
        let mut depth = vec![0.0; w * h];
        let mut var = vec![0.0; w * h];
        let mut mask = Mask::new(w, h, false);
        for p in 0..w * h {
            if spec.drop_rate > 0.0 {
                for k in keep.iter_mut() {
                    *k = r.random::<f64>() >= spec.drop_rate;
                }
            }
            if cv.degenerate.at(p) {
                continue;
            }
            if let Some((m, v)) = softmin(cv.costs(p), &cv.depths, |k| keep[k], spec.temperature) {
                depth[p] = m;
                var[p] = v;
                mask.set_at(p, true);
            }
        }
        let dm = DepthMap::with_mask(w, h, depth, mask).expect("shape");
        stack.push(dm, Some(var)).expect("shape");
    }
    Ok(stack)
}

/// Builds the cost volume and samples an ensemble from it.
pub fn mc_sample(
    i_ref: &Raster,
    sources: &[(&Raster, &Camera)],
    cam_ref: &Camera,
    opts: &SweepOptions,
    spec: &SamplerSpec,
) -> Result<EnsembleStack, MatcherError> {
    spec.validate()?;
    let cv = build_cost_volume(i_ref, sources, cam_ref, opts)?;
    mc_sample_volume(&cv, spec)
}

/// Window half-size of the block matcher (9×9 windows).
const BM_RADIUS: isize = 4;

struct Gray {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Gray {
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.v[y * self.w + x]
    }

    fn down(&self) -> Gray {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (a, b) = ((2 * x) as isize, (2 * y) as isize);
                v[y * w + x] = 0.25 * (self.at(a, b) + self.at(a + 1, b) + self.at(a, b + 1) + self.at(a + 1, b + 1));
            }
        }
        Gray { w, h, v }
    }
}

fn ssd(a: &Gray, b: &Gray, x: isize, y: isize, fx: isize, fy: isize) -> f64 {
    let mut s = 0.0;
    for dy in -BM_RADIUS..=BM_RADIUS {
        for dx in -BM_RADIUS..=BM_RADIUS {
            let e = a.at(x + dx, y + dy) - b.at(x + dx + fx, y + dy + fy);
            s += e * e;
        }
    }
    s
}

fn parabola(cm: f64, c0: f64, cp: f64) -> f64 {
    let denom = cm - 2.0 * c0 + cp;
    if c0 == 0.0 || denom <= 0.0 {
        return 0.0;
    }
    (0.5 * (cm - cp) / denom).clamp(-0.5, 0.5)
}

/// Coarse-to-fine SSD block matching with 9×9 windows, so that
/// `I_b(p + F(p)) ≈ I_a(p)`. Each level searches integer displacements
/// within `max_disp` of the upsampled coarser estimate; the finest level
/// adds a parabolic sub-pixel step per axis.
pub fn block_match_flow(a: &Raster, b: &Raster, max_disp: usize, levels: usize) -> Result<FlowField, MatcherError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MatcherError::Shape(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let to_gray = |r: &Raster| Gray {
        w: r.width(),
        h: r.height(),
        v: r.to_gray().into_vec(),
    };
    let mut pa = vec![to_gray(a)];
    let mut pb = vec![to_gray(b)];
    for _ in 1..levels.max(1) {
        let (la, lb) = (pa.last().expect("level"), pb.last().expect("level"));
        if la.w < 2 * (2 * BM_RADIUS as usize + 1) || la.h < 2 * (2 * BM_RADIUS as usize + 1) {
            break;
        }
        let (na, nb) = (la.down(), lb.down());
        pa.push(na);
        pb.push(nb);
    }
    let m = max_disp as isize;
    let mut flow: Vec<[isize; 2]> = vec![[0, 0]; pa.last().map_or(0, |g| g.w * g.h)];
    let mut prev_w = pa.last().map_or(0, |g| g.w);
    for lvl in (0..pa.len()).rev() {
        let (ga, gb) = (&pa[lvl], &pb[lvl]);
        let (w, h) = (ga.w, ga.h);
        let init: Vec<[isize; 2]> = if lvl == pa.len() - 1 {
            vec![[0, 0]; w * h]
        } else {
            let ph = flow.len() / prev_w;
            (0..w * h)
                .map(|p| {
                    let (x, y) = ((p % w) / 2, (p / w) / 2);
                    let f = flow[y.min(ph - 1) * prev_w + x.min(prev_w - 1)];
                    [2 * f[0], 2 * f[1]]
                })
                .collect()
        };
        let mut next = vec![[0isize; 2]; w * h];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let c = init[p];
                // Ties keep the prior estimate.
                let mut best = (ssd(ga, gb, x as isize, y as isize, c[0], c[1]), c);
                for fy in c[1] - m..=c[1] + m {
                    for fx in c[0] - m..=c[0] + m {
                        let s = ssd(ga, gb, x as isize, y as isize, fx, fy);
                        if s < best.0 {
                            best = (s, [fx, fy]);
                        }
                    }
                }
                next[p] = best.1;
            }
        }
        flow = next;
        prev_w = w;
    }
    let (ga, gb) = (&pa[0], &pb[0]);
    let (w, h) = (ga.w, ga.h);
    Ok(FlowField::from_fn(w, h, |x, y| {
        let f = flow[y * w + x];
        let (xi, yi) = (x as isize, y as isize);
        let c0 = ssd(ga, gb, xi, yi, f[0], f[1]);
        let sx = parabola(ssd(ga, gb, xi, yi, f[0] - 1, f[1]), c0, ssd(ga, gb, xi, yi, f[0] + 1, f[1]));
        let sy = parabola(ssd(ga, gb, xi, yi, f[0], f[1] - 1), c0, ssd(ga, gb, xi, yi, f[0], f[1] + 1));
        [f[0] as f64 + sx, f[1] as f64 + sy]
    }))
}
