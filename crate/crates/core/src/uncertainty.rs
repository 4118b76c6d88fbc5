//! Ensemble statistics, certainty masks and sparsification curves.

use serde::Serialize;
use thiserror::Error;

use crate::raster::{DepthMap, Mask};

/// Certainty threshold on `exp(-U)`.
pub const DEFAULT_XI: f64 = 0.3;
/// Default ensemble size.
pub const DEFAULT_SAMPLES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UncertaintyError {
    #[error("ensemble needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("xi must lie in (0, 1), got {0}")]
    BadXi(f64),
    #[error("bins must be at least 2, got {0}")]
    BadBins(usize),
    #[error("empty mask")]
    EmptyMask,
}

/// `T` sampled depth maps with their per-pixel aleatoric variances.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStack {
    width: usize,
    height: usize,
    depths: Vec<DepthMap>,
    variances: Vec<Vec<f64>>,
}

impl EnsembleStack {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depths: Vec::new(),
            variances: Vec::new(),
        }
    }

    /// Adds a sample. `variance` may be `None` for a zero-filled map.
    pub fn push(&mut self, depth: DepthMap, variance: Option<Vec<f64>>) -> Result<(), UncertaintyError> {
        let n = self.width * self.height;
        if depth.width() != self.width || depth.height() != self.height {
            return Err(UncertaintyError::Dimensions(format!(
                "sample is {}x{}, stack is {}x{}",
                depth.width(),
                depth.height(),
                self.width,
                self.height
            )));
        }
        let variance = variance.unwrap_or_else(|| vec![0.0; n]);
        if variance.len() != n {
            return Err(UncertaintyError::Dimensions(format!("variance has {} entries, expected {n}", variance.len())));
        }
        self.depths.push(depth);
        self.variances.push(variance);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depths(&self) -> &[DepthMap] {
        &self.depths
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Pixels valid in every sample.
    pub fn common_mask(&self) -> Mask {
        let mut m = Mask::new(self.width, self.height, true);
        for d in &self.depths {
            m = m.and(d.mask());
        }
        m
    }
}

/// Ensemble mean and total predictive variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    /// Pseudo-label: the per-pixel mean depth.
    pub mean: DepthMap,
    /// `U >= 0`, zero outside `mean`'s mask.
    pub uncertainty: Vec<f64>,
    /// Mean aleatoric variance alone.
    pub aleatoric: Vec<f64>,
}

impl EnsembleStats {
    /// Epistemic part `U - mean(σ²)`.
    pub fn epistemic(&self) -> Vec<f64> {
        self.uncertainty
            .iter()
            .zip(&self.aleatoric)
            .map(|(u, a)| (u - a).max(0.0))
            .collect()
    }
}

/// Per-pixel population variance of the depth samples plus the mean
/// aleatoric variance. Only pixels valid in every sample are valid in the
/// result.
pub fn ensemble_stats(stack: &EnsembleStack) -> Result<EnsembleStats, UncertaintyError> {
    let t = stack.len();
    if t < 2 {
        return Err(UncertaintyError::TooFewSamples(t));
    }
    let (w, h) = (stack.width, stack.height);
    let mask = stack.common_mask();
    let n = w * h;
    let tf = t as f64;
    let mut mean = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut alea = vec![0.0; n];
    for p in (0..n).filter(|&p| mask.at(p)) {
        // Shifted two-pass: identical samples give exactly zero spread.
        let first = stack.depths[0].values()[p];
        let shift: f64 = stack.depths.iter().map(|d| d.values()[p] - first).sum::<f64>() / tf;
        let m = first + shift;
        let var = stack
            .depths
            .iter()
            .map(|d| {
                let e = d.values()[p] - m;
                e * e
            })
            .sum::<f64>()
            / tf;
        let a = stack.variances.iter().map(|v| v[p]).sum::<f64>() / tf;
        mean[p] = m;
        alea[p] = a;
        u[p] = (var + a).max(0.0);
    }
    let mean = DepthMap::with_mask(w, h, mean, mask).expect("shape");
    Ok(EnsembleStats {
        mean,
        uncertainty: u,
        aleatoric: alea,
    })
}

/// Pixels with `exp(-U / scale²) > xi`, restricted to `valid`. `scale` is the
/// optional normalization (e.g. the depth interval); `None` uses raw `U`.
pub fn certainty_mask(u: &[f64], valid: &Mask, xi: f64, scale: Option<f64>) -> Result<Mask, UncertaintyError> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(UncertaintyError::BadXi(xi));
    }
    if u.len() != valid.width() * valid.height() {
        return Err(UncertaintyError::Dimensions(format!(
            "{} uncertainty values for a {}x{} mask",
            u.len(),
            valid.width(),
            valid.height()
        )));
    }
    let limit = -xi.ln();
    let norm = scale.map_or(1.0, |s| s * s);
    let bits = u
        .iter()
        .enumerate()
        .map(|(p, &v)| valid.at(p) && v / norm < limit)
        .collect();
    Ok(Mask::from_vec(valid.width(), valid.height(), bits).expect("shape"))
}

/// A sparsification curve, its oracle, and the area between them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sparsification {
    /// `(density, mean absolute error)` for densities `k / bins`, `k = 1..=bins`.
    pub curve: Vec<(f64, f64)>,
    pub oracle: Vec<(f64, f64)>,
    /// Trapezoid area of `curve - oracle` over density.
    pub ause: f64,
}

impl Sparsification {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("density,error\n");
        for (d, e) in &self.curve {
            s.push_str(&format!("{d},{e}\n"));
        }
        s
    }
}

fn curve(error: &[f64], confidence: &[f64], pixels: &[usize], bins: usize) -> Vec<(f64, f64)> {
    let mut order = pixels.to_vec();
    order.sort_by(|&a, &b| confidence[b].total_cmp(&confidence[a]).then(a.cmp(&b)));
    let n = order.len();
    (1..=bins)
        .map(|k| {
            let take = ((k * n) as f64 / bins as f64).round().max(1.0) as usize;
            let mut top = order[..take.min(n)].to_vec();
            // Sum in pixel order so the full-density point is the global mean.
            top.sort_unstable();
            let sum: f64 = top.iter().map(|&p| error[p].abs()).sum();
            (k as f64 / bins as f64, sum / top.len() as f64)
        })
        .collect()
}

/// Mean absolute error of the most confident pixels as the retained
/// fraction grows, with the error-ranked oracle curve.
pub fn sparsification_curve(confidence: &[f64], error: &[f64], mask: &Mask, bins: usize) -> Result<Sparsification, UncertaintyError> {
    if bins < 2 {
        return Err(UncertaintyError::BadBins(bins));
    }
    let n = mask.width() * mask.height();
    if confidence.len() != n || error.len() != n {
        return Err(UncertaintyError::Dimensions("confidence, error and mask must have equal size".into()));
    }
    let pixels: Vec<usize> = (0..n).filter(|&p| mask.at(p)).collect();
    if pixels.is_empty() {
        return Err(UncertaintyError::EmptyMask);
    }
    let c = curve(error, confidence, &pixels, bins);
    let neg: Vec<f64> = error.iter().map(|e| -e.abs()).collect();
    let o = curve(error, &neg, &pixels, bins);
    let mut ause = 0.0;
    for k in 1..bins {
        let (d0, d1) = (c[k - 1].0, c[k].0);
        let g0 = c[k - 1].1 - o[k - 1].1;
        let g1 = c[k].1 - o[k].1;
        ause += 0.5 * (g0 + g1) * (d1 - d0);
    }
    Ok(Sparsification { curve: c, oracle: o, ause })
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// input is constant or shorter than 2.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(samples: &[f64]) -> EnsembleStack {
        let mut s = EnsembleStack::new(1, 1);
        for &d in samples {
            s.push(DepthMap::constant(1, 1, d), None).unwrap();
        }
        s
    }

    #[test]
    fn identical_and_symmetric_samples() {
        let st = ensemble_stats(&stack(&[3.7; 5])).unwrap();
        assert_eq!(st.mean.values(), &[3.7]);
        assert_eq!(st.uncertainty, vec![0.0]);
        let st = ensemble_stats(&stack(&[2.0 - 0.25, 2.0 + 0.25])).unwrap();
        assert_eq!(st.mean.values(), &[2.0]);
        assert_eq!(st.uncertainty, vec![0.0625]);
    }

    #[test]
    fn too_few_and_mismatched() {
        assert_eq!(ensemble_stats(&stack(&[1.0])).unwrap_err(), UncertaintyError::TooFewSamples(1));
        let mut s = EnsembleStack::new(2, 2);
        assert!(s.push(DepthMap::constant(3, 2, 1.0), None).is_err());
        assert!(s.push(DepthMap::constant(2, 2, 1.0), Some(vec![0.0; 3])).is_err());
    }

    #[test]
    fn certainty_boundary() {
        let valid = Mask::new(3, 1, true);
        let b = -(0.3f64).ln();
        let m = certainty_mask(&[0.0, b, b.next_down()], &valid, 0.3, None).unwrap();
        assert_eq!(m.bits(), &[true, false, true]);
        assert!(certainty_mask(&[0.0], &Mask::new(1, 1, true), 1.0, None).is_err());
        let scaled = certainty_mask(&[4.0 * b * 0.99], &Mask::new(1, 1, true), 0.3, Some(2.0)).unwrap();
        assert!(scaled.at(0));
    }

    #[test]
    fn sparsification_examples() {
        let err = [0.3, 0.1, 0.5, 0.2];
        let mask = Mask::new(4, 1, true);
        let flat = sparsification_curve(&[1.0; 4], &err, &mask, 4).unwrap();
        let total: f64 = err.iter().sum::<f64>() / 4.0;
        assert_eq!(flat.curve.last().unwrap().1, total);
        let oracle_conf: Vec<f64> = err.iter().map(|e| -e).collect();
        let o = sparsification_curve(&oracle_conf, &err, &mask, 4).unwrap();
        assert_eq!(o.ause, 0.0);
        let want = [0.1, 0.15, 0.2, 0.275];
        for (c, w) in o.curve.iter().zip(want) {
            assert!((c.1 - w).abs() < 1e-12);
        }
        assert_eq!(flat.to_csv().lines().next(), Some("density,error"));
        assert!(sparsification_curve(&[1.0; 4], &err, &Mask::new(4, 1, false), 4).is_err());
        assert!(sparsification_curve(&[1.0; 4], &err, &mask, 1).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }
}
