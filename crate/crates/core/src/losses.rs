//! Self-supervision objectives and their analytic gradients.
//!
//! Masked residual norms are vector 2-norms: for a residual `r` and a
//! per-pixel weight `w`, `||r ⊙ w||_2 = sqrt(sum_p sum_c w(p)^2 r(p, c)^2)`.
//! Every loss normalizes by the L1 norm of its weight map.
//!
//! Gradients are taken with the masks held fixed; masks only change where a
//! pixel crosses an image border or a validity boundary.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{bilinear_sample, depth_to_flow, forward_pair, image_gradient, warp_field, BilinearTap, Camera, VirtualFlow};
use crate::raster::{DepthMap, FlowField, Mask, Raster};
use crate::rng;

/// Occlusion threshold in pixels for the forward-backward check.
pub const DEFAULT_EPSILON: f64 = 0.5;
/// Weight of the flow-depth term in the combined loss.
pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("no valid supervision support")]
    NoSupport,
    #[error("empty certainty support")]
    EmptyCertainty,
    #[error("at least one source view is required")]
    NoSources,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Result of a loss evaluation.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub name: String,
    /// Finite. Non-negative for every loss except the aleatoric one, whose
    /// log-variance regularizer may be negative.
    pub value: f64,
    /// Per-pixel residual magnitude, one channel.
    pub residual: Raster,
    /// `d value / d depth` per reference pixel.
    pub grad_depth: Option<Vec<f64>>,
    /// `d value / d log-variance` per reference pixel (aleatoric loss only).
    pub grad_log_variance: Option<Vec<f64>>,
    /// Normalization count: the summed L1 norm of the masks used.
    pub denom: f64,
}

/// Serializable summary of a [`LossReport`] with the constants it used.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LossSummary {
    pub name: String,
    pub value: f64,
    pub denom: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
}

impl LossReport {
    pub fn summary(&self) -> LossSummary {
        LossSummary {
            name: self.name.clone(),
            value: self.value,
            denom: self.denom,
            lambda: None,
            epsilon: None,
            xi: None,
        }
    }

    /// Gradient as a one-channel raster (zeros where absent).
    pub fn grad_depth_raster(&self) -> Option<Raster> {
        let g = self.grad_depth.as_ref()?;
        Raster::from_vec(self.residual.width(), self.residual.height(), 1, g.clone())
    }
}

/// A source image with its camera.
#[derive(Debug, Clone, Copy)]
pub struct SourceView<'a> {
    pub image: &'a Raster,
    pub camera: &'a Camera,
}

struct PhotoCore {
    value: f64,
    residual: Raster,
    grad_depth: Vec<f64>,
    /// `sum_j w_j(p) * d term_j / d w_j(p)`
    w_dot_grad_w: Vec<f64>,
    denom: f64,
}

/// Shared evaluation of the photometric terms. `base` scales every view's
/// binary mask per pixel; `None` means all ones.
fn photometric_core(i_ref: &Raster, sources: &[SourceView<'_>], depth: &DepthMap, cam_ref: &Camera, base: Option<&[f64]>) -> Result<PhotoCore, LossError> {
    if sources.is_empty() {
        return Err(LossError::NoSources);
    }
    let (w, h, nc) = (i_ref.width(), i_ref.height(), i_ref.channels());
    if depth.width() != w || depth.height() != h {
        return Err(LossError::Shape(format!(
            "depth {}x{} vs image {w}x{h}",
            depth.width(),
            depth.height()
        )));
    }
    for (j, s) in sources.iter().enumerate() {
        if s.image.channels() != nc || s.image.width() < 2 || s.image.height() < 2 {
            return Err(LossError::Shape(format!("source {j} does not match the reference image")));
        }
    }
    let (gx_ref, gy_ref) = image_gradient(i_ref).map_err(|e| LossError::Shape(e.to_string()))?;
    let n = w * h;
    let base = |p: usize| base.map_or(1.0, |b| b[p]);

    let mut value = 0.0;
    let mut denom = 0.0;
    let mut any = false;
    let mut grad_depth = vec![0.0; n];
    let mut w_dot = vec![0.0; n];
    let mut res_sum = vec![0.0; n];
    let mut res_cnt = vec![0u32; n];

    for s in sources {
        let wf = warp_field(depth, cam_ref, s.camera, s.image.width(), s.image.height());
        let sampled = bilinear_sample(s.image, &wf.coords, w, h);
        let m = wf.mask.and(&sampled.inbounds);
        if m.is_empty() {
            continue;
        }
        any = true;
        let img = &sampled.image;
        let (gx_s, gy_s) = image_gradient(img).map_err(|e| LossError::Shape(e.to_string()))?;

        let wts: Vec<f64> = (0..n).map(|p| if m.at(p) { base(p) } else { 0.0 }).collect();
        let norm: f64 = wts.iter().sum();
        // Gradient-term masks need both differenced pixels valid.
        let pair_x = |p: usize| {
            let (x, y) = (p % w, p / w);
            let (a, b) = forward_pair(x, w);
            (y * w + a, y * w + b)
        };
        let pair_y = |p: usize| {
            let (x, y) = (p % w, p / w);
            let (a, b) = forward_pair(y, h);
            (a * w + x, b * w + x)
        };
        let mx: Vec<bool> = (0..n).map(|p| { let (a, b) = pair_x(p); m.at(a) && m.at(b) }).collect();
        let my: Vec<bool> = (0..n).map(|p| { let (a, b) = pair_y(p); m.at(a) && m.at(b) }).collect();

        let mut sum_a = 0.0;
        let mut sum_b = 0.0;
        let mut r2 = vec![0.0; n];
        let mut g2 = vec![0.0; n];
        for p in 0..n {
            if m.at(p) {
                let mut acc = 0.0;
                for c in 0..nc {
                    let r = i_ref.data()[p * nc + c] - img.data()[p * nc + c];
                    acc += r * r;
                }
                r2[p] = acc;
                sum_a += wts[p] * wts[p] * acc;
                res_sum[p] += acc.sqrt();
                res_cnt[p] += 1;
            }
            let mut acc = 0.0;
            if mx[p] {
                for c in 0..nc {
                    let g = gx_ref.data()[p * nc + c] - gx_s.data()[p * nc + c];
                    acc += g * g;
                }
            }
            if my[p] {
                for c in 0..nc {
                    let g = gy_ref.data()[p * nc + c] - gy_s.data()[p * nc + c];
                    acc += g * g;
                }
            }
            g2[p] = acc;
            sum_b += wts[p] * wts[p] * acc;
        }
        let (na, nb) = (sum_a.sqrt(), sum_b.sqrt());
        let term = (na + nb) / norm;
        value += term;
        denom += norm;

        // d term / d sampled(p, c)
        let mut g_img = vec![0.0; n * nc];
        for p in 0..n {
            let wp2 = wts[p] * wts[p];
            if wp2 == 0.0 {
                continue;
            }
            if na > 0.0 {
                for c in 0..nc {
                    let r = i_ref.data()[p * nc + c] - img.data()[p * nc + c];
                    g_img[p * nc + c] -= wp2 * r / (na * norm);
                }
            }
            if nb > 0.0 {
                if mx[p] {
                    let (a, b) = pair_x(p);
                    for c in 0..nc {
                        let g = gx_ref.data()[p * nc + c] - gx_s.data()[p * nc + c];
                        let k = wp2 * g / (nb * norm);
                        g_img[a * nc + c] -= k;
                        g_img[b * nc + c] += k;
                    }
                }
                if my[p] {
                    let (a, b) = pair_y(p);
                    for c in 0..nc {
                        let g = gy_ref.data()[p * nc + c] - gy_s.data()[p * nc + c];
                        let k = wp2 * g / (nb * norm);
                        g_img[a * nc + c] -= k;
                        g_img[b * nc + c] += k;
                    }
                }
            }
        }
        for p in 0..n {
            if !m.at(p) {
                continue;
            }
            let dc = wf.d_coords[p];
            let mut g = 0.0;
            for c in 0..nc {
                let j = sampled.jacobian[p * nc + c];
                g += g_img[p * nc + c] * (j[0] * dc[0] + j[1] * dc[1]);
            }
            grad_depth[p] += g;

            // w * d term / d w
            let wp = wts[p];
            let mut dnum = 0.0;
            if na > 0.0 {
                dnum += wp * r2[p] / na;
            }
            if nb > 0.0 {
                dnum += wp * g2[p] / nb;
            }
            w_dot[p] += wp * (dnum * norm - (na + nb)) / (norm * norm);
        }
    }
    if !any {
        return Err(LossError::NoSupport);
    }
    let residual = Raster::from_vec(
        w,
        h,
        1,
        res_sum
            .iter()
            .zip(&res_cnt)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect(),
    )
    .expect("shape");
    Ok(PhotoCore {
        value,
        residual,
        grad_depth,
        w_dot_grad_w: w_dot,
        denom,
    })
}

/// Photometric consistency of the reference image with every source warped
/// through `depth`: intensity and image-gradient residuals, each under a
/// vector 2-norm, normalized by the mask size, summed over sources.
pub fn photometric_loss(i_ref: &Raster, sources: &[SourceView<'_>], depth: &DepthMap, cam_ref: &Camera) -> Result<LossReport, LossError> {
    let core = photometric_core(i_ref, sources, depth, cam_ref, None)?;
    Ok(LossReport {
        name: "photometric".into(),
        value: core.value,
        residual: core.residual,
        grad_depth: Some(core.grad_depth),
        grad_log_variance: None,
        denom: core.denom,
    })
}

/// Per-pixel log-variance `log Σ²` of the data noise.
#[derive(Debug, Clone, PartialEq)]
pub struct AleatoricMap {
    pub width: usize,
    pub height: usize,
    pub log_variance: Vec<f64>,
}

impl AleatoricMap {
    pub fn constant(width: usize, height: usize, v: f64) -> Self {
        Self {
            width,
            height,
            log_variance: vec![v; width * height],
        }
    }

    /// Log of a variance map; variances are floored at `floor` first.
    pub fn from_variance(width: usize, height: usize, variance: &[f64], floor: f64) -> Self {
        Self {
            width,
            height,
            log_variance: variance.iter().map(|v| v.max(floor).ln()).collect(),
        }
    }
}

/// Photometric loss with masks weighted by `½ exp(-log Σ²)` and the
/// regularizer `½ mean(log Σ²)` over valid depth pixels.
pub fn aleatoric_photometric_loss(
    i_ref: &Raster,
    sources: &[SourceView<'_>],
    depth: &DepthMap,
    cam_ref: &Camera,
    log_var: &AleatoricMap,
) -> Result<LossReport, LossError> {
    if log_var.width != depth.width() || log_var.height != depth.height() || log_var.log_variance.len() != depth.width() * depth.height() {
        return Err(LossError::Shape("log-variance map does not match the depth map".into()));
    }
    if log_var.log_variance.iter().any(|v| !v.is_finite()) {
        return Err(LossError::Shape("log-variance must be finite".into()));
    }
    let base: Vec<f64> = log_var.log_variance.iter().map(|s| 0.5 * (-s).exp()).collect();
    let core = photometric_core(i_ref, sources, depth, cam_ref, Some(&base))?;
    let valid = depth.mask().count();
    let mut grad_s: Vec<f64> = core.w_dot_grad_w.iter().map(|g| -g).collect();
    let mut reg = 0.0;
    if valid > 0 {
        let sum: f64 = (0..base.len())
            .filter(|&p| depth.mask().at(p))
            .map(|p| log_var.log_variance[p])
            .sum();
        reg = 0.5 * sum / valid as f64;
        for (p, g) in grad_s.iter_mut().enumerate() {
            if depth.mask().at(p) {
                *g += 0.5 / valid as f64;
            }
        }
    }
    Ok(LossReport {
        name: "aleatoric_photometric".into(),
        value: core.value + reg,
        residual: core.residual,
        grad_depth: Some(core.grad_depth),
        grad_log_variance: Some(grad_s),
        denom: core.denom,
    })
}

/// How the backward flow is looked up in the forward-backward check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionMode {
    /// `|F_fwd(p) + F_bwd(p + F_fwd(p))| <= eps`, bilinear lookup.
    #[default]
    Warped,
    /// `|F_fwd(p) + F_bwd(p)| <= eps`, pointwise.
    Literal,
}

/// Forward-backward consistency. Returns the VALID (non-occluded) mask;
/// its complement is the occluded set.
pub fn occlusion_mask(fwd: &FlowField, bwd: &FlowField, epsilon: f64, mode: OcclusionMode) -> Mask {
    let (w, h) = (fwd.width(), fwd.height());
    let bwd_r = bwd.to_raster();
    Mask::from_fn(w, h, |x, y| {
        let f = fwd.get(x, y);
        let b = match mode {
            OcclusionMode::Literal => {
                if x >= bwd.width() || y >= bwd.height() {
                    return false;
                }
                bwd.get(x, y)
            }
            OcclusionMode::Warped => {
                let c = [x as f64 + f[0], y as f64 + f[1]];
                match BilinearTap::new(c, bwd.width(), bwd.height()) {
                    Some(tap) => [tap.eval(&bwd_r, 0).0, tap.eval(&bwd_r, 1).0],
                    None => return false,
                }
            }
        };
        let (du, dv) = (f[0] + b[0], f[1] + b[1]);
        (du * du + dv * dv).sqrt() <= epsilon
    })
}

/// Flow-depth consistency with a per-pixel minimum over source views.
///
/// For each view `j`, `e_j(p) = |F_j(p) - F̂_j(p)| / sum(O_j)` on pixels
/// where `O_j` (ANDed with the virtual flow's own mask) is set. The value
/// sums, over pixels with at least one set mask, the minimum `e_j(p)` over
/// views whose mask is set there. The depth gradient flows through the
/// minimizing view only (lowest index on ties). When any virtual flow lacks
/// its depth derivative, no gradient is reported.
pub fn flow_depth_loss(virtual_flows: &[VirtualFlow], measured: &[FlowField], masks: &[Mask]) -> Result<LossReport, LossError> {
    if virtual_flows.is_empty() {
        return Err(LossError::NoSources);
    }
    if virtual_flows.len() != measured.len() || measured.len() != masks.len() {
        return Err(LossError::Shape("flow lists differ in length".into()));
    }
    let (w, h) = (virtual_flows[0].flow.width(), virtual_flows[0].flow.height());
    for ((vf, f), m) in virtual_flows.iter().zip(measured).zip(masks) {
        let dims = [
            (vf.flow.width(), vf.flow.height()),
            (f.width(), f.height()),
            (m.width(), m.height()),
            (vf.mask.width(), vf.mask.height()),
        ];
        if dims.iter().any(|&d| d != (w, h)) {
            return Err(LossError::Shape("flow fields and masks must share dimensions".into()));
        }
    }
    let n = w * h;
    let eff: Vec<Mask> = virtual_flows.iter().zip(masks).map(|(vf, m)| m.and(&vf.mask)).collect();
    let norms: Vec<f64> = eff.iter().map(|m| m.count() as f64).collect();
    if norms.iter().all(|&c| c == 0.0) {
        return Err(LossError::NoSupport);
    }
    let with_grad = virtual_flows.iter().all(|vf| vf.d_flow.len() == n);
    let mut grad = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let mut value = 0.0;
    for p in 0..n {
        let mut best: Option<(f64, usize, [f64; 2], f64)> = None;
        for j in 0..virtual_flows.len() {
            if !eff[j].at(p) {
                continue;
            }
            let fh = virtual_flows[j].flow.at(p);
            let fm = measured[j].at(p);
            let d = [fh[0] - fm[0], fh[1] - fm[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let e = len / norms[j];
            if best.is_none_or(|(b, ..)| e < b) {
                best = Some((e, j, d, len));
            }
        }
        if let Some((e, j, d, len)) = best {
            value += e;
            residual[p] = e;
            if with_grad && len > 0.0 {
                let df = virtual_flows[j].d_flow[p];
                grad[p] = (d[0] * df[0] + d[1] * df[1]) / (len * norms[j]);
            }
        }
    }
    Ok(LossReport {
        name: "flow_depth".into(),
        value,
        residual: Raster::from_vec(w, h, 1, residual).expect("shape"),
        grad_depth: with_grad.then_some(grad),
        grad_log_variance: None,
        denom: norms.iter().sum(),
    })
}

/// A source view with measured forward (reference to source) and backward
/// (source to reference) flows.
#[derive(Debug, Clone, Copy)]
pub struct FlowSource<'a> {
    pub camera: &'a Camera,
    pub forward: &'a FlowField,
    pub backward: &'a FlowField,
}

/// [`flow_depth_loss`] with virtual flows computed from `depth` and masks
/// from the forward-backward check.
pub fn flow_depth_loss_for_depth(
    depth: &DepthMap,
    cam_ref: &Camera,
    sources: &[FlowSource<'_>],
    epsilon: f64,
    mode: OcclusionMode,
) -> Result<LossReport, LossError> {
    let mut vfs = Vec::with_capacity(sources.len());
    let mut measured = Vec::with_capacity(sources.len());
    let mut masks = Vec::with_capacity(sources.len());
    for s in sources {
        if s.forward.width() != depth.width() || s.forward.height() != depth.height() {
            return Err(LossError::Shape("forward flow does not match the depth map".into()));
        }
        vfs.push(depth_to_flow(depth, cam_ref, s.camera, s.backward.width(), s.backward.height()));
        measured.push(s.forward.clone());
        masks.push(occlusion_mask(s.forward, s.backward, epsilon, mode));
    }
    flow_depth_loss(&vfs, &measured, &masks)
}

/// `L_pc + lambda * L_fc`, gradients combined the same way.
pub fn combined_loss(pc: &LossReport, fc: &LossReport, lambda: f64) -> LossReport {
    let grad_depth = match (&pc.grad_depth, &fc.grad_depth) {
        (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| x + lambda * y).collect()),
        (Some(a), None) => Some(a.clone()),
        (None, Some(b)) => Some(b.iter().map(|y| lambda * y).collect()),
        (None, None) => None,
    };
    let residual = if pc.residual.same_shape(&fc.residual) {
        let data = pc
            .residual
            .data()
            .iter()
            .zip(fc.residual.data())
            .map(|(a, b)| a + lambda * b)
            .collect();
        Raster::from_vec(pc.residual.width(), pc.residual.height(), 1, data).expect("shape")
    } else {
        pc.residual.clone()
    };
    LossReport {
        name: "combined".into(),
        value: pc.value + lambda * fc.value,
        residual,
        grad_depth,
        grad_log_variance: pc.grad_log_variance.clone(),
        denom: pc.denom,
    }
}

/// Consistency of a prediction with a pseudo-label on certain pixels:
/// `||(D_aug - D̄) ⊙ U||_2 / ||U||_1`, gradient w.r.t. `D_aug`.
pub fn self_training_loss(d_aug: &DepthMap, pseudo: &DepthMap, certain: &Mask) -> Result<LossReport, LossError> {
    let (w, h) = (d_aug.width(), d_aug.height());
    if (pseudo.width(), pseudo.height()) != (w, h) || (certain.width(), certain.height()) != (w, h) {
        return Err(LossError::Shape("depth maps and mask must share dimensions".into()));
    }
    let support = certain.and(d_aug.mask()).and(pseudo.mask());
    let count = support.count();
    if count == 0 {
        return Err(LossError::EmptyCertainty);
    }
    let n = w * h;
    let mut diff = vec![0.0; n];
    let mut sum = 0.0;
    for (p, d) in diff.iter_mut().enumerate() {
        if support.at(p) {
            *d = d_aug.values()[p] - pseudo.values()[p];
            sum += *d * *d;
        }
    }
    let norm = sum.sqrt();
    let denom = count as f64;
    let grad = diff
        .iter()
        .map(|d| if norm > 0.0 { d / (norm * denom) } else { 0.0 })
        .collect();
    Ok(LossReport {
        name: "self_training".into(),
        value: norm / denom,
        residual: Raster::from_vec(w, h, 1, diff.iter().map(|d| d.abs()).collect()).expect("shape"),
        grad_depth: Some(grad),
        grad_log_variance: None,
        denom,
    })
}

/// Per-image color jitter: `clamp((gain * x + bias)^gamma, 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Jitter {
    pub gain: [f64; 3],
    pub bias: [f64; 3],
    pub gamma: f64,
}

impl Jitter {
    pub const IDENTITY: Jitter = Jitter {
        gain: [1.0; 3],
        bias: [0.0; 3],
        gamma: 1.0,
    };

    pub fn apply(&self, img: &Raster) -> Raster {
        let nc = img.channels();
        let data = img
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i % nc;
                let lin = (self.gain[c] * v + self.bias[c]).max(0.0);
                lin.powf(self.gamma).clamp(0.0, 1.0)
            })
            .collect();
        Raster::from_vec(img.width(), img.height(), nc, data).expect("shape")
    }
}

/// Ranges for random photometric augmentation. Geometry is never altered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AugmentationSpec {
    pub gain: (f64, f64),
    pub bias: (f64, f64),
    pub gamma: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            gain: (0.8, 1.2),
            bias: (-0.1, 0.1),
            gamma: (0.8, 1.25),
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    /// Augmentation that leaves images unchanged.
    pub fn identity(seed: u64) -> Self {
        Self {
            gain: (1.0, 1.0),
            bias: (0.0, 0.0),
            gamma: (1.0, 1.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let within = |(lo, hi): (f64, f64), a: f64, b: f64| lo <= hi && lo >= a && hi <= b;
        if !within(self.gain, 0.8, 1.2) {
            return Err(format!("gain range {:?} outside [0.8, 1.2]", self.gain));
        }
        if !within(self.bias, -0.1, 0.1) {
            return Err(format!("bias range {:?} outside [-0.1, 0.1]", self.bias));
        }
        if !within(self.gamma, 0.8, 1.25) {
            return Err(format!("gamma range {:?} outside [0.8, 1.25]", self.gamma));
        }
        Ok(())
    }

    /// Jitter for the `index`-th image, drawn from its own seeded stream.
    pub fn draw(&self, index: usize) -> Jitter {
        let mut r = rng::stream(self.seed, index as u64);
        let mut u = |(lo, hi): (f64, f64)| if hi > lo { r.random_range(lo..=hi) } else { lo };
        let gain = [u(self.gain), u(self.gain), u(self.gain)];
        let bias = [u(self.bias), u(self.bias), u(self.bias)];
        let gamma = u(self.gamma);
        Jitter { gain, bias, gamma }
    }
}

/// Applies an independently drawn jitter to each image.
pub fn augment(images: &[Raster], spec: &AugmentationSpec) -> Vec<Raster> {
    images.iter().enumerate().map(|(i, img)| spec.draw(i).apply(img)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn cams() -> (Camera, Camera) {
        let k = Matrix3::new(8.0, 0.0, 3.5, 0.0, 8.0, 3.5, 0.0, 0.0, 1.0);
        let a = Camera::new(k, Matrix3::identity(), Vector3::zeros(), (1.0, 10.0)).unwrap();
        let b = Camera::new(k, Matrix3::identity(), Vector3::new(-0.1, 0.0, 0.0), (1.0, 10.0)).unwrap();
        (a, b)
    }

    fn full_vf(flow: FlowField) -> VirtualFlow {
        let (w, h) = (flow.width(), flow.height());
        VirtualFlow {
            flow,
            mask: Mask::new(w, h, true),
            d_flow: vec![[0.0; 2]; w * h],
        }
    }

    #[test]
    fn constant_images_give_zero_photometric_loss() {
        let (a, b) = cams();
        let img = Raster::from_fn(8, 8, 3, |_, _, c| 0.2 + 0.1 * c as f64);
        let d = DepthMap::constant(8, 8, 4.0);
        let r = photometric_loss(&img, &[SourceView { image: &img, camera: &b }], &d, &a).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad_depth.unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn empty_support_is_an_error() {
        let (a, _) = cams();
        let far = Camera::new(*a.k(), Matrix3::identity(), Vector3::new(-100.0, 0.0, 0.0), (1.0, 10.0)).unwrap();
        let img = Raster::new(8, 8, 1);
        let d = DepthMap::constant(8, 8, 4.0);
        let err = photometric_loss(&img, &[SourceView { image: &img, camera: &far }], &d, &a).unwrap_err();
        assert_eq!(err, LossError::NoSupport);
        assert_eq!(err.to_string(), "no valid supervision support");
    }

    #[test]
    fn unit_variance_matches_plain_photometric() {
        let (a, b) = cams();
        let i1 = Raster::from_fn(8, 8, 1, |x, y, _| ((x * 3 + y * 5) % 7) as f64 / 7.0);
        let i2 = Raster::from_fn(8, 8, 1, |x, y, _| ((x * 2 + y * 5) % 7) as f64 / 7.0);
        let d = DepthMap::constant(8, 8, 4.0);
        let src = [SourceView { image: &i2, camera: &b }];
        let plain = photometric_loss(&i1, &src, &d, &a).unwrap();
        let ale = aleatoric_photometric_loss(&i1, &src, &d, &a, &AleatoricMap::constant(8, 8, 0.0)).unwrap();
        assert!((plain.value - ale.value).abs() < 1e-12 * plain.value.max(1.0));
    }

    #[test]
    fn zero_residual_leaves_regularizer() {
        let (a, _) = cams();
        let img = Raster::from_fn(8, 8, 1, |x, y, _| (x + y) as f64 / 14.0);
        let d = DepthMap::constant(8, 8, 4.0);
        let src = [SourceView { image: &img, camera: &a }];
        let lv = AleatoricMap::constant(8, 8, -1.0);
        let r = aleatoric_photometric_loss(&img, &src, &d, &a, &lv).unwrap();
        assert!((r.value - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn occlusion_threshold() {
        let fwd = FlowField::from_fn(4, 4, |_, _| [1.0, 0.0]);
        let bwd = FlowField::from_fn(4, 4, |_, _| [-1.0, 0.0]);
        let lit = occlusion_mask(&fwd, &bwd, 0.5, OcclusionMode::Literal);
        assert_eq!(lit.count(), 16);
        // Warped lookups leave the image in the last column.
        let warped = occlusion_mask(&fwd, &bwd, 0.5, OcclusionMode::Warped);
        assert_eq!(warped.count(), 12);

        let off = |r: f64| FlowField::from_fn(2, 2, move |_, _| [r, 0.0]);
        let zero = FlowField::zeros(2, 2);
        assert_eq!(occlusion_mask(&zero, &off(0.6), 0.5, OcclusionMode::Literal).count(), 0);
        assert_eq!(occlusion_mask(&zero, &off(0.4), 0.5, OcclusionMode::Literal).count(), 4);
        for mode in [OcclusionMode::Literal, OcclusionMode::Warped] {
            assert_eq!(occlusion_mask(&zero, &zero, DEFAULT_EPSILON, mode).count(), 4);
        }
    }

    #[test]
    fn flow_depth_min_over_views() {
        let (w, h) = (5, 4);
        let n = (w * h) as f64;
        let truth = FlowField::zeros(w, h);
        let e1 = FlowField::from_fn(w, h, |_, _| [1.0, 0.0]);
        let e2 = FlowField::from_fn(w, h, |_, _| [0.0, 0.5]);
        let full = Mask::new(w, h, true);
        let r = flow_depth_loss(&[full_vf(truth.clone()), full_vf(truth.clone())], &[e1.clone(), e2.clone()], &[full.clone(), full.clone()]).unwrap();
        // Brute force: per pixel min(1/N, 0.5/N), summed.
        let brute: f64 = (0..w * h).map(|_| (1.0 / n).min(0.5 / n)).sum();
        assert!((r.value - brute).abs() < 1e-12);
        assert!((r.value - 0.5).abs() < 1e-12);

        let exact = flow_depth_loss(&[full_vf(truth.clone())], std::slice::from_ref(&truth), std::slice::from_ref(&full)).unwrap();
        assert_eq!(exact.value, 0.0);

        let empty = Mask::new(w, h, false);
        let one = flow_depth_loss(&[full_vf(truth.clone()), full_vf(truth.clone())], &[e1.clone(), e2.clone()], &[full.clone(), empty.clone()]).unwrap();
        let single = flow_depth_loss(&[full_vf(truth.clone())], std::slice::from_ref(&e1), std::slice::from_ref(&full)).unwrap();
        assert_eq!(one.value, single.value);
        assert_eq!(flow_depth_loss(&[full_vf(truth.clone())], &[e1], &[empty]).unwrap_err(), LossError::NoSupport);
    }

    #[test]
    fn combined_arithmetic() {
        let mk = |v: f64| LossReport {
            name: "x".into(),
            value: v,
            residual: Raster::new(1, 1, 1),
            grad_depth: Some(vec![v]),
            grad_log_variance: None,
            denom: 1.0,
        };
        let c = combined_loss(&mk(0.4), &mk(1.0), 0.1);
        assert!((c.value - 0.5).abs() < 1e-15);
        assert_eq!(combined_loss(&mk(0.4), &mk(1.0), 0.0).value, 0.4);
        assert_eq!(combined_loss(&mk(0.4), &mk(0.0), 0.1).value, 0.4);
    }

    #[test]
    fn self_training_cases() {
        let n = 9;
        let pseudo = DepthMap::constant(3, 3, 2.0);
        let certain = Mask::new(3, 3, true);
        assert_eq!(self_training_loss(&pseudo, &pseudo, &certain).unwrap().value, 0.0);
        let mut vals = vec![2.0; n];
        vals[4] = 2.5;
        let aug = DepthMap::from_values(3, 3, vals).unwrap();
        let one = Mask::from_fn(3, 3, |x, y| x == 1 && y == 1);
        assert!((self_training_loss(&aug, &pseudo, &one).unwrap().value - 0.5).abs() < 1e-15);
        assert_eq!(self_training_loss(&aug, &pseudo, &Mask::new(3, 3, false)).unwrap_err(), LossError::EmptyCertainty);
    }

    #[test]
    fn augmentation_properties() {
        let imgs = vec![Raster::from_fn(4, 4, 3, |x, y, c| ((x + y + c) % 5) as f64 / 4.0); 3];
        assert_eq!(augment(&imgs, &AugmentationSpec::identity(3)), imgs);
        let spec = AugmentationSpec { seed: 11, ..Default::default() };
        spec.validate().unwrap();
        let a = augment(&imgs, &spec);
        assert_eq!(a, augment(&imgs, &spec));
        assert_ne!(a[0], a[1]);
        assert!(a.iter().flat_map(|r| r.data()).all(|&v| (0.0..=1.0).contains(&v)));
        assert!(AugmentationSpec { gain: (0.5, 1.0), ..Default::default() }.validate().is_err());
    }
}
