//! Dense per-pixel grids: images, depth maps, flow fields and masks.
//!
//! Every grid is row-major with the origin at the top-left pixel. Pixel
//! centers sit at integer coordinates, so pixel `(x, y)` is the sample at
//! continuous position `(x as f64, y as f64)`.

use std::fmt;

/// Multi-channel image of real samples.
#[derive(Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Raster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Raster {
    /// Zero-filled raster.
    ///
    /// Panics if `channels` is not 1, 2 or 3.
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!((1..=3).contains(&channels), "channels must be 1, 2 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    /// Wraps existing samples; returns `None` when the length does not match.
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Option<Self> {
        if !(1..=3).contains(&channels) || data.len() != width * height * channels {
            return None;
        }
        Some(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a raster by evaluating `f(x, y, channel)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut r = Self::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    r.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        r
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// All channels of one pixel.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Per-pixel mean over channels.
    pub fn to_gray(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.channels as f64;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / n)
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Swaps the x and y axes.
    pub fn transpose(&self) -> Raster {
        Raster::from_fn(self.height, self.width, self.channels, |x, y, c| self.get(y, x, c))
    }
}

/// Per-pixel boolean grid.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("set", &self.count())
            .finish()
    }
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == width * height).then_some(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn at(&self, i: usize) -> bool {
        self.bits[i]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    #[inline]
    pub fn set_at(&mut self, i: usize, v: bool) {
        self.bits[i] = v;
    }

    /// Number of set pixels, i.e. the L1 norm of the mask.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect();
        Mask {
            width: self.width,
            height: self.height,
            bits,
        }
    }

    pub fn or(&self, other: &Mask) -> Mask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Mask {
            width: self.width,
            height: self.height,
            bits,
        }
    }

    pub fn not(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Set pixels as 1.0, cleared as 0.0.
    pub fn to_raster(&self) -> Raster {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Raster::from_vec(self.width, self.height, 1, data).expect("shape")
    }
}

/// Per-pixel depth along the camera's optical axis, with a validity mask.
#[derive(Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Mask,
}

impl fmt::Debug for DepthMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DepthMap")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("valid", &self.valid.count())
            .finish()
    }
}

impl DepthMap {
    /// Depth map from raw values; a pixel is valid iff its value is finite and positive.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Option<Self> {
        if values.len() != width * height {
            return None;
        }
        let bits = values.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Some(Self {
            width,
            height,
            values,
            valid: Mask { width, height, bits },
        })
    }

    /// Depth map with an explicit mask. Set pixels must hold positive finite depths.
    pub fn with_mask(width: usize, height: usize, values: Vec<f64>, mask: Mask) -> Option<Self> {
        if values.len() != width * height || mask.width != width || mask.height != height {
            return None;
        }
        let ok = values
            .iter()
            .zip(mask.bits())
            .all(|(d, &m)| !m || (d.is_finite() && *d > 0.0));
        ok.then_some(Self {
            width,
            height,
            values,
            valid: mask,
        })
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Self {
        Self::from_values(width, height, vec![depth; width * height]).expect("shape")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.valid
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid.bits[i].then_some(self.values[i])
    }

    #[inline]
    pub fn at(&self, i: usize) -> Option<f64> {
        self.valid.bits[i].then_some(self.values[i])
    }

    /// Restricts validity to `mask`.
    pub fn masked(&self, mask: &Mask) -> DepthMap {
        DepthMap {
            width: self.width,
            height: self.height,
            values: self.values.clone(),
            valid: self.valid.and(mask),
        }
    }

    /// Applies `f` to every valid depth; results that are not positive and finite invalidate the pixel.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> DepthMap {
        let mut values = self.values.clone();
        let mut valid = self.valid.clone();
        for (i, v) in values.iter_mut().enumerate() {
            if valid.bits[i] {
                *v = f(*v);
                if !(v.is_finite() && *v > 0.0) {
                    valid.bits[i] = false;
                }
            }
        }
        DepthMap {
            width: self.width,
            height: self.height,
            values,
            valid,
        }
    }

    /// Single-channel raster with invalid pixels written as 0.
    pub fn to_raster(&self) -> Raster {
        let data = self
            .values
            .iter()
            .zip(self.valid.bits())
            .map(|(&d, &m)| if m { d } else { 0.0 })
            .collect();
        Raster::from_vec(self.width, self.height, 1, data).expect("shape")
    }

    /// Inverse of [`DepthMap::to_raster`]; non-positive samples become invalid.
    pub fn from_raster(r: &Raster) -> Option<DepthMap> {
        if r.channels() != 1 {
            return None;
        }
        DepthMap::from_values(r.width(), r.height(), r.data().to_vec())
    }
}

/// Per-pixel 2D displacement `F(p) = p' - p`, in pixels.
#[derive(Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    uv: Vec<[f64; 2]>,
}

impl fmt::Debug for FlowField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowField")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            uv: vec![[0.0; 2]; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, uv: Vec<[f64; 2]>) -> Option<Self> {
        (uv.len() == width * height).then_some(Self { width, height, uv })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 2]) -> Self {
        let mut uv = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                uv.push(f(x, y));
            }
        }
        Self { width, height, uv }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f64; 2]] {
        &self.uv
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.uv[y * self.width + x]
    }

    #[inline]
    pub fn at(&self, i: usize) -> [f64; 2] {
        self.uv[i]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f64; 2]) {
        self.uv[y * self.width + x] = v;
    }

    pub fn negated(&self) -> FlowField {
        FlowField {
            width: self.width,
            height: self.height,
            uv: self.uv.iter().map(|[u, v]| [-u, -v]).collect(),
        }
    }

    /// Two-channel raster `(u, v)`.
    pub fn to_raster(&self) -> Raster {
        let data = self.uv.iter().flat_map(|[u, v]| [*u, *v]).collect();
        Raster::from_vec(self.width, self.height, 2, data).expect("shape")
    }

    pub fn from_raster(r: &Raster) -> Option<FlowField> {
        if r.channels() != 2 {
            return None;
        }
        let uv = r.data().chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        FlowField::from_vec(r.width(), r.height(), uv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_validity_follows_sign() {
        let d = DepthMap::from_values(2, 1, vec![1.5, 0.0]).unwrap();
        assert_eq!(d.get(0, 0), Some(1.5));
        assert_eq!(d.get(1, 0), None);
        assert_eq!(DepthMap::from_raster(&d.to_raster()).unwrap(), d);
    }

    #[test]
    fn with_mask_rejects_bad_valid_depth() {
        let m = Mask::new(1, 1, true);
        assert!(DepthMap::with_mask(1, 1, vec![-1.0], m).is_none());
    }

    #[test]
    fn transpose_twice_is_identity() {
        let r = Raster::from_fn(3, 2, 2, |x, y, c| (x * 10 + y * 3 + c) as f64);
        assert_eq!(r.transpose().transpose(), r);
        assert_eq!(r.transpose().get(1, 2, 1), r.get(2, 1, 1));
    }

    #[test]
    fn flow_raster_round_trip() {
        let f = FlowField::from_fn(3, 3, |x, y| [x as f64, -(y as f64)]);
        assert_eq!(FlowField::from_raster(&f.to_raster()).unwrap(), f);
    }
}
