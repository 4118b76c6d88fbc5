//! Pinhole reprojection between views and the per-pixel operations built on it.
//!
//! A reference pixel `p = (x, y)` at depth `d` maps into a source view as
//!
//! ```text
//! q  = K_src T_src (K_ref T_ref)^-1 (d * [x, y, 1])
//! p' = (q.x / q.z, q.y / q.z),   d' = q.z
//! ```
//!
//! Writing `a = K_src R_rel K_ref^-1 [x, y, 1]` and `b = K_src t_rel` for the
//! relative pose, `q = d * a + b`, so `dp'/dd` has a closed form that the
//! losses use for their depth gradients.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::raster::{DepthMap, FlowField, Mask, Raster};
use crate::scene_io::CameraFile;

/// Source-frame depths at or below this are treated as behind the camera.
pub const MIN_SOURCE_DEPTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal with det +1 (deviation {0:.3e})")]
    BadRotation(f64),
    #[error("intrinsics must be upper-triangular with K[2][2] = 1 and positive focal lengths")]
    BadIntrinsics,
    #[error("depth range must satisfy 0 < min < max, got ({0}, {1})")]
    BadDepthRange(f64, f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("point lands behind the source camera (depth {0})")]
    BehindCamera(f64),
    #[error("image gradient needs at least 2x2 pixels, got {0}x{1}")]
    DegenerateImage(usize, usize),
}

/// Pinhole camera with world-to-camera pose `x_cam = R x_world + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    k: Matrix3<f64>,
    k_inv: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
    depth_range: (f64, f64),
}

impl Camera {
    pub fn new(k: Matrix3<f64>, r: Matrix3<f64>, t: Vector3<f64>, depth_range: (f64, f64)) -> Result<Self, GeometryError> {
        let dev = (r * r.transpose() - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if !(dev <= 1e-6 && (det - 1.0).abs() <= 1e-6) {
            return Err(GeometryError::BadRotation(dev.max((det - 1.0).abs())));
        }
        let upper = k[(1, 0)] == 0.0 && k[(2, 0)] == 0.0 && k[(2, 1)] == 0.0 && k[(2, 2)] == 1.0;
        if !upper || !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) || !t.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::BadIntrinsics);
        }
        let (lo, hi) = depth_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(GeometryError::BadDepthRange(lo, hi));
        }
        let k_inv = k.try_inverse().ok_or(GeometryError::BadIntrinsics)?;
        Ok(Self {
            k,
            k_inv,
            r,
            t,
            depth_range,
        })
    }

    /// Camera with focal length `f` (pixels), principal point `(cx, cy)`,
    /// centered at `center` and looking at `target`. Image y points away
    /// from the world direction `up`.
    pub fn look_at(
        f: f64,
        cx: f64,
        cy: f64,
        center: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        depth_range: (f64, f64),
    ) -> Result<Self, GeometryError> {
        let c = Vector3::from(center);
        let z = (Vector3::from(target) - c).normalize();
        let down = -Vector3::from(up);
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * c);
        let k = Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0);
        Camera::new(k, r, t, depth_range)
    }

    pub fn from_file(cam: &CameraFile) -> Result<Self, GeometryError> {
        let e = &cam.extrinsic;
        let r = Matrix3::new(e[0][0], e[0][1], e[0][2], e[1][0], e[1][1], e[1][2], e[2][0], e[2][1], e[2][2]);
        let t = Vector3::new(e[0][3], e[1][3], e[2][3]);
        let i = &cam.intrinsic;
        let k = Matrix3::new(i[0][0], i[0][1], i[0][2], i[1][0], i[1][1], i[1][2], i[2][0], i[2][1], i[2][2]);
        Camera::new(k, r, t, (cam.depth_min, cam.resolved_depth_max()))
    }

    /// Camera file for this camera with `count` hypotheses spanning the depth range.
    pub fn to_file(&self, count: usize) -> CameraFile {
        let (lo, hi) = self.depth_range;
        let count = count.max(2);
        let mut extrinsic = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                extrinsic[i][j] = self.r[(i, j)];
            }
            extrinsic[i][3] = self.t[i];
        }
        extrinsic[3] = [0.0, 0.0, 0.0, 1.0];
        let mut intrinsic = [[0.0; 3]; 3];
        for (i, row) in intrinsic.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.k[(i, j)];
            }
        }
        CameraFile {
            extrinsic,
            intrinsic,
            depth_min: lo,
            depth_interval: (hi - lo) / (count - 1) as f64,
            depth_count: Some(count),
            depth_max: Some(hi),
        }
    }

    pub fn k(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn k_inv(&self) -> &Matrix3<f64> {
        &self.k_inv
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn depth_range(&self) -> (f64, f64) {
        self.depth_range
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    /// World point seen at pixel `(x, y)` with depth `d`.
    pub fn back_project(&self, x: f64, y: f64, d: f64) -> Vector3<f64> {
        let cam = self.k_inv * Vector3::new(x, y, 1.0) * d;
        self.r.transpose() * (cam - self.t)
    }

    /// Pixel and depth of a world point; `None` behind the camera.
    pub fn project(&self, world: &Vector3<f64>) -> Option<([f64; 2], f64)> {
        let q = self.k * (self.r * world + self.t);
        (q.z > MIN_SOURCE_DEPTH).then(|| ([q.x / q.z, q.y / q.z], q.z))
    }

    /// Same camera with depths, depth range and translation multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Camera {
        Camera {
            t: self.t * s,
            depth_range: (self.depth_range.0 * s, self.depth_range.1 * s),
            ..self.clone()
        }
    }
}

/// Precomputed transfer from a reference camera into a source camera.
#[derive(Debug, Clone)]
pub struct Transfer {
    /// `K_src R_rel K_ref^-1`
    h: Matrix3<f64>,
    /// `K_src t_rel`
    b: Vector3<f64>,
}

/// One reprojected pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reprojection {
    pub coord: [f64; 2],
    /// Depth in the source frame.
    pub depth: f64,
    /// `d coord / d depth`
    pub d_coord: [f64; 2],
}

impl Transfer {
    pub fn new(cam_ref: &Camera, cam_src: &Camera) -> Self {
        let r_rel = cam_src.r * cam_ref.r.transpose();
        let t_rel = cam_src.t - r_rel * cam_ref.t;
        Self {
            h: cam_src.k * r_rel * cam_ref.k_inv,
            b: cam_src.k * t_rel,
        }
    }

    /// The ray direction term `a` for pixel `(x, y)`.
    #[inline]
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        self.h * Vector3::new(x, y, 1.0)
    }

    /// Reprojection given a precomputed ray term; `None` when the point falls
    /// behind the source camera.
    #[inline]
    pub fn apply(&self, a: &Vector3<f64>, d: f64) -> Option<Reprojection> {
        let q = a * d + self.b;
        if q.z <= MIN_SOURCE_DEPTH {
            return None;
        }
        let iz = 1.0 / q.z;
        let coord = [q.x * iz, q.y * iz];
        let d_coord = [(a.x * q.z - q.x * a.z) * iz * iz, (a.y * q.z - q.y * a.z) * iz * iz];
        Some(Reprojection {
            coord,
            depth: q.z,
            d_coord,
        })
    }

    #[inline]
    pub fn at(&self, x: f64, y: f64, d: f64) -> Option<Reprojection> {
        self.apply(&self.ray(x, y), d)
    }
}

/// Maps reference pixel `p` at depth `d` into the source view.
///
/// Returns the continuous source pixel and the depth in the source frame.
pub fn reproject_point(p: [f64; 2], d: f64, cam_ref: &Camera, cam_src: &Camera) -> Result<([f64; 2], f64), GeometryError> {
    if !(d > 0.0) {
        return Err(GeometryError::NonPositiveDepth(d));
    }
    let tr = Transfer::new(cam_ref, cam_src);
    let q = tr.ray(p[0], p[1]) * d + tr.b;
    if q.z <= MIN_SOURCE_DEPTH {
        return Err(GeometryError::BehindCamera(q.z));
    }
    Ok(([q.x / q.z, q.y / q.z], q.z))
}

/// Dense reprojection of a depth map into a source image of size
/// `src_width x src_height`.
#[derive(Debug, Clone)]
pub struct WarpField {
    pub coords: Vec<[f64; 2]>,
    /// Source-frame depth per pixel (0 where invalid).
    pub src_depth: Vec<f64>,
    /// `d coords / d depth` per pixel.
    pub d_coords: Vec<[f64; 2]>,
    pub mask: Mask,
}

/// True when bilinear sampling at `c` stays inside a `w x h` image.
#[inline]
pub fn in_bounds(c: [f64; 2], w: usize, h: usize) -> bool {
    c[0] >= 0.0 && c[1] >= 0.0 && c[0] <= (w - 1) as f64 && c[1] <= (h - 1) as f64
}

/// Reprojects every valid reference pixel. The mask is set where the depth
/// is valid, the point lies in front of the source camera, and the
/// coordinate falls inside the source image.
pub fn warp_field(depth: &DepthMap, cam_ref: &Camera, cam_src: &Camera, src_width: usize, src_height: usize) -> WarpField {
    let (w, h) = (depth.width(), depth.height());
    let tr = Transfer::new(cam_ref, cam_src);
    let n = w * h;
    let mut out = WarpField {
        coords: Vec::with_capacity(n),
        src_depth: vec![0.0; n],
        d_coords: vec![[0.0; 2]; n],
        mask: Mask::new(w, h, false),
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let id = [x as f64, y as f64];
            let Some(d) = depth.at(i) else {
                out.coords.push(id);
                continue;
            };
            match tr.at(x as f64, y as f64, d) {
                Some(rp) => {
                    out.coords.push(rp.coord);
                    out.src_depth[i] = rp.depth;
                    out.d_coords[i] = rp.d_coord;
                    if src_width >= 2 && src_height >= 2 && in_bounds(rp.coord, src_width, src_height) {
                        out.mask.set_at(i, true);
                    }
                }
                None => out.coords.push(id),
            }
        }
    }
    out
}

/// Virtual flow induced by a depth map, with its per-pixel depth derivative.
#[derive(Debug, Clone)]
pub struct VirtualFlow {
    pub flow: FlowField,
    pub mask: Mask,
    /// `d flow / d depth` per pixel.
    pub d_flow: Vec<[f64; 2]>,
}

/// Depth2Flow: `F(p) = reproject(p, D(p)) - p`.
///
/// Shares [`warp_field`]'s code path, so `flow + p` equals the warp
/// coordinates exactly.
pub fn depth_to_flow(depth: &DepthMap, cam_ref: &Camera, cam_src: &Camera, src_width: usize, src_height: usize) -> VirtualFlow {
    let wf = warp_field(depth, cam_ref, cam_src, src_width, src_height);
    let w = depth.width();
    let uv = wf
        .coords
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if wf.src_depth[i] > 0.0 {
                [c[0] - (i % w) as f64, c[1] - (i / w) as f64]
            } else {
                [0.0, 0.0]
            }
        })
        .collect();
    VirtualFlow {
        flow: FlowField::from_vec(w, depth.height(), uv).expect("shape"),
        mask: wf.mask,
        d_flow: wf.d_coords,
    }
}

/// Bilinear lookup at a continuous coordinate with integer pixel centers.
///
/// Returns `None` outside `[0, w-1] x [0, h-1]`. The cell is chosen so
/// that all four taps are inside; at the last row/column the cell to the
/// left/above is used.
#[derive(Debug, Clone, Copy)]
pub struct BilinearTap {
    pub x0: usize,
    pub y0: usize,
    pub fx: f64,
    pub fy: f64,
}

impl BilinearTap {
    #[inline]
    pub fn new(c: [f64; 2], w: usize, h: usize) -> Option<Self> {
        if w < 2 || h < 2 || !in_bounds(c, w, h) {
            return None;
        }
        let x0 = (c[0].floor() as usize).min(w - 2);
        let y0 = (c[1].floor() as usize).min(h - 2);
        Some(Self {
            x0,
            y0,
            fx: c[0] - x0 as f64,
            fy: c[1] - y0 as f64,
        })
    }

    /// The four integer pixels and their weights.
    pub fn taps(&self) -> [(usize, usize, f64); 4] {
        let (x, y, fx, fy) = (self.x0, self.y0, self.fx, self.fy);
        [
            (x, y, (1.0 - fx) * (1.0 - fy)),
            (x + 1, y, fx * (1.0 - fy)),
            (x, y + 1, (1.0 - fx) * fy),
            (x + 1, y + 1, fx * fy),
        ]
    }

    /// Value and gradient `(d/dx, d/dy)` of channel `ch`.
    #[inline]
    pub fn eval(&self, img: &Raster, ch: usize) -> (f64, [f64; 2]) {
        let v00 = img.get(self.x0, self.y0, ch);
        let v10 = img.get(self.x0 + 1, self.y0, ch);
        let v01 = img.get(self.x0, self.y0 + 1, ch);
        let v11 = img.get(self.x0 + 1, self.y0 + 1, ch);
        let (fx, fy) = (self.fx, self.fy);
        let top = v00 + (v10 - v00) * fx;
        let bottom = v01 + (v11 - v01) * fx;
        let value = top + (bottom - top) * fy;
        let dx = (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy;
        let dy = bottom - top;
        (value, [dx, dy])
    }
}

/// Result of [`bilinear_sample`].
#[derive(Debug, Clone)]
pub struct Sampled {
    pub image: Raster,
    pub inbounds: Mask,
    /// Per pixel and channel, `d sample / d (x, y)`; index `pixel * channels + channel`.
    pub jacobian: Vec<[f64; 2]>,
}

/// Samples `image` at one continuous coordinate per output pixel.
/// Out-of-bounds samples are 0 with a cleared mask bit.
pub fn bilinear_sample(image: &Raster, coords: &[[f64; 2]], out_width: usize, out_height: usize) -> Sampled {
    assert_eq!(coords.len(), out_width * out_height, "one coordinate per output pixel");
    let c = image.channels();
    let mut out = Raster::new(out_width, out_height, c);
    let mut inbounds = Mask::new(out_width, out_height, false);
    let mut jacobian = vec![[0.0; 2]; coords.len() * c];
    for (i, &co) in coords.iter().enumerate() {
        if let Some(tap) = BilinearTap::new(co, image.width(), image.height()) {
            inbounds.set_at(i, true);
            for ch in 0..c {
                let (v, g) = tap.eval(image, ch);
                out.data_mut()[i * c + ch] = v;
                jacobian[i * c + ch] = g;
            }
        }
    }
    Sampled {
        image: out,
        inbounds,
        jacobian,
    }
}

/// Pixel pair `(hi, lo)` whose difference is the forward derivative at
/// index `i` along an axis of length `n`; the last index reuses the
/// previous pair.
#[inline]
pub fn forward_pair(i: usize, n: usize) -> (usize, usize) {
    if i + 1 < n {
        (i + 1, i)
    } else {
        (n - 1, n - 2)
    }
}

/// Forward-difference gradients `(Gx, Gy)`; the final column of `Gx` and
/// the final row of `Gy` repeat the previous one so the output keeps the
/// input size.
pub fn image_gradient(img: &Raster) -> Result<(Raster, Raster), GeometryError> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    if w < 2 || h < 2 {
        return Err(GeometryError::DegenerateImage(w, h));
    }
    let gx = Raster::from_fn(w, h, c, |x, y, ch| {
        let (a, b) = forward_pair(x, w);
        img.get(a, y, ch) - img.get(b, y, ch)
    });
    let gy = Raster::from_fn(w, h, c, |x, y, ch| {
        let (a, b) = forward_pair(y, h);
        img.get(x, a, ch) - img.get(x, b, ch)
    });
    Ok((gx, gy))
}
