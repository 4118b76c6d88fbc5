//! Geometric consistency filtering, point-cloud fusion and reconstruction
//! metrics.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::geometry::{BilinearTap, Camera, Transfer};
use crate::raster::{DepthMap, Mask, Raster};
use crate::scene_io::{quantize, ViewGraph};

/// Default distance cap of the DTU metrics, in scene units.
pub const DEFAULT_MAX_DIST: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("view graph is empty")]
    EmptyGraph,
    #[error("view count mismatch: {0}")]
    ViewCount(String),
    #[error("{0} point cloud is empty")]
    EmptyCloud(&'static str),
    #[error("invalid fusion config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Relative depth tolerance of the round trip.
    pub geo_depth_tol: f64,
    /// Round-trip pixel distance tolerance.
    pub geo_pix_tol: f64,
    pub min_consistent_views: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            geo_depth_tol: 0.01,
            geo_pix_tol: 1.0,
            min_consistent_views: 3,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.geo_depth_tol > 0.0 && self.geo_pix_tol > 0.0) {
            return Err(FusionError::Config("tolerances must be positive".into()));
        }
        if self.min_consistent_views == 0 {
            return Err(FusionError::Config("min_consistent_views must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-view keep masks plus any warning about the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub masks: Vec<Mask>,
    pub warnings: Vec<String>,
}

/// Round trip of reference pixel `(x, y)` at depth `d` through a neighbor.
/// Returns the pixel distance and relative depth change, or `None` when the
/// pixel leaves the neighbor or lands on an invalid depth.
fn round_trip(x: f64, y: f64, d: f64, fwd: &Transfer, back: &Transfer, nb_depth: &DepthMap, nb_raster: &Raster) -> Option<(f64, f64)> {
    let r = fwd.at(x, y, d)?;
    let tap = BilinearTap::new(r.coord, nb_depth.width(), nb_depth.height())?;
    if !tap.taps().iter().all(|&(px, py, _)| nb_depth.mask().get(px, py)) {
        return None;
    }
    let dn = tap.eval(nb_raster, 0).0;
    let b = back.at(r.coord[0], r.coord[1], dn)?;
    let dist = ((b.coord[0] - x).powi(2) + (b.coord[1] - y).powi(2)).sqrt();
    Some((dist, (b.depth - d).abs() / d))
}

/// Keeps pixels whose depth survives a round trip through at least
/// `min_consistent_views` of their neighbors in `graph`.
pub fn filter_depths(depths: &[DepthMap], cams: &[Camera], graph: &ViewGraph, cfg: &FusionConfig) -> Result<Filtered, FusionError> {
    cfg.validate()?;
    if graph.is_empty() {
        return Err(FusionError::EmptyGraph);
    }
    if depths.len() != cams.len() || depths.len() != graph.num_views() {
        return Err(FusionError::ViewCount(format!(
            "{} depth maps, {} cameras, {} views in graph",
            depths.len(),
            cams.len(),
            graph.num_views()
        )));
    }
    let rasters: Vec<Raster> = depths.iter().map(DepthMap::to_raster).collect();
    let mut warnings = Vec::new();
    let mut masks = Vec::with_capacity(depths.len());
    for (v, dm) in depths.iter().enumerate() {
        let nbs: Vec<usize> = graph.neighbors(v).iter().map(|&(n, _)| n).collect();
        if nbs.len() < cfg.min_consistent_views {
            warnings.push(format!(
                "view {v}: {} neighbors, fewer than min_consistent_views = {}; no pixels kept",
                nbs.len(),
                cfg.min_consistent_views
            ));
            masks.push(Mask::new(dm.width(), dm.height(), false));
            continue;
        }
        let transfers: Vec<(Transfer, Transfer)> = nbs
            .iter()
            .map(|&n| (Transfer::new(&cams[v], &cams[n]), Transfer::new(&cams[n], &cams[v])))
            .collect();
        let mask = Mask::from_fn(dm.width(), dm.height(), |x, y| {
            let Some(d) = dm.get(x, y) else { return false };
            let ok = nbs
                .iter()
                .zip(&transfers)
                .filter(|(&n, (f, b))| {
                    round_trip(x as f64, y as f64, d, f, b, &depths[n], &rasters[n])
                        .is_some_and(|(dist, rel)| dist <= cfg.geo_pix_tol && rel <= cfg.geo_depth_tol)
                })
                .count();
            ok >= cfg.min_consistent_views
        });
        masks.push(mask);
    }
    Ok(Filtered { masks, warnings })
}

/// Back-projects every kept pixel with its color. With `voxel = Some(cell)`
/// only the first point falling into each cubic cell of that edge is kept
/// (views in order, pixels in row-major order).
pub fn fuse(depths: &[DepthMap], masks: &[Mask], images: &[Raster], cams: &[Camera], voxel: Option<f64>) -> Result<PointCloud, FusionError> {
    let n = depths.len();
    if masks.len() != n || images.len() != n || cams.len() != n {
        return Err(FusionError::ViewCount(format!(
            "{n} depth maps, {} masks, {} images, {} cameras",
            masks.len(),
            images.len(),
            cams.len()
        )));
    }
    if let Some(c) = voxel {
        if !(c > 0.0 && c.is_finite()) {
            return Err(FusionError::Config(format!("voxel size {c} must be positive")));
        }
    }
    let mut seen = HashSet::new();
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for v in 0..n {
        let (dm, m, img) = (&depths[v], &masks[v], &images[v]);
        for y in 0..dm.height() {
            for x in 0..dm.width() {
                if !m.get(x, y) {
                    continue;
                }
                let Some(d) = dm.get(x, y) else { continue };
                let p = cams[v].back_project(x as f64, y as f64, d);
                if let Some(c) = voxel {
                    let key = [p.x, p.y, p.z].map(|t| (t / c).floor() as i64);
                    if !seen.insert(key) {
                        continue;
                    }
                }
                points.push([p.x, p.y, p.z]);
                let px = img.pixel(x.min(img.width() - 1), y.min(img.height() - 1));
                colors.push(match px.len() {
                    3 => [quantize(px[0]), quantize(px[1]), quantize(px[2])],
                    _ => [quantize(px[0]); 3],
                });
            }
        }
    }
    Ok(PointCloud::with_colors(points, colors))
}

/// Exact nearest-neighbor search over a fixed point set.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Point indices in tree order; node `i` covers `order[lo..hi]` with
    /// its split point at the midpoint.
    order: Vec<usize>,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        Self::build(points, &mut order, 0);
        Self {
            points: points.to_vec(),
            order,
        }
    }

    fn build(points: &[[f64; 3]], idx: &mut [usize], depth: usize) {
        if idx.len() <= 1 {
            return;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
        let (left, right) = idx.split_at_mut(mid);
        Self::build(points, left, depth + 1);
        Self::build(points, &mut right[1..], depth + 1);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point; ties go to the
    /// smallest index.
    pub fn nearest(&self, q: &[f64; 3]) -> Option<(usize, f64)> {
        let mut best = None;
        self.search(q, 0, self.order.len(), 0, &mut best);
        best
    }

    fn search(&self, q: &[f64; 3], lo: usize, hi: usize, depth: usize, best: &mut Option<(usize, f64)>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let p = &self.points[i];
        let d = dist2(p, q);
        if best.is_none_or(|(bi, bd)| d < bd || (d == bd && i < bi)) {
            *best = Some((i, d));
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, depth + 1, best);
        if best.is_none_or(|(_, bd)| diff * diff <= bd) {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }

    /// Distance from every query point to its nearest neighbor.
    pub fn distances(&self, queries: &[[f64; 3]]) -> Vec<f64> {
        queries
            .iter()
            .map(|q| self.nearest(q).map_or(f64::INFINITY, |(_, d)| d.sqrt()))
            .collect()
    }
}

/// DTU-style reconstruction errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DtuMetrics {
    pub accuracy: f64,
    pub completeness: f64,
    pub overall: f64,
}

/// Precision, recall and F-score at a distance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub threshold: f64,
}

fn check_clouds(recon: &PointCloud, gt: &PointCloud) -> Result<(), FusionError> {
    if recon.is_empty() {
        return Err(FusionError::EmptyCloud("reconstructed"));
    }
    if gt.is_empty() {
        return Err(FusionError::EmptyCloud("ground-truth"));
    }
    Ok(())
}

fn capped_mean(d: &[f64], cap: f64) -> f64 {
    d.iter().map(|v| v.min(cap)).sum::<f64>() / d.len() as f64
}

/// Mean capped nearest-neighbor distances in both directions.
pub fn dtu_metrics(recon: &PointCloud, gt: &PointCloud, max_dist: f64) -> Result<DtuMetrics, FusionError> {
    check_clouds(recon, gt)?;
    let acc = capped_mean(&KdTree::new(&gt.points).distances(&recon.points), max_dist);
    let comp = capped_mean(&KdTree::new(&recon.points).distances(&gt.points), max_dist);
    Ok(DtuMetrics {
        accuracy: acc,
        completeness: comp,
        overall: (acc + comp) / 2.0,
    })
}

/// Fraction of points within `threshold` in both directions and their
/// harmonic mean (zero when both are zero).
pub fn f_score(recon: &PointCloud, gt: &PointCloud, threshold: f64) -> Result<FScore, FusionError> {
    check_clouds(recon, gt)?;
    let within = |d: Vec<f64>| d.iter().filter(|&&v| v <= threshold).count() as f64 / d.len() as f64;
    let precision = within(KdTree::new(&gt.points).distances(&recon.points));
    let recall = within(KdTree::new(&recon.points).distances(&gt.points));
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(FScore {
        precision,
        recall,
        f,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn cam(tx: f64) -> Camera {
        let k = Matrix3::new(10.0, 0.0, 4.5, 0.0, 10.0, 4.5, 0.0, 0.0, 1.0);
        Camera::new(k, Matrix3::identity(), Vector3::new(tx, 0.0, 0.0), (1.0, 20.0)).unwrap()
    }

    #[test]
    fn consistent_planes_are_kept() {
        let cams = vec![cam(0.0), cam(-0.2), cam(0.2)];
        let depths = vec![DepthMap::constant(10, 10, 5.0); 3];
        let g = ViewGraph::complete(3);
        let cfg = FusionConfig { min_consistent_views: 2, ..Default::default() };
        let f = filter_depths(&depths, &cams, &g, &cfg).unwrap();
        assert!(f.warnings.is_empty());
        // The reference view loses the columns that leave a neighbor.
        assert!(f.masks[0].get(5, 5));
        let mut scaled = depths.clone();
        scaled[0] = DepthMap::constant(10, 10, 10.0);
        let f = filter_depths(&scaled, &cams, &g, &FusionConfig { min_consistent_views: 1, ..Default::default() }).unwrap();
        assert_eq!(f.masks[0].count(), 0);
    }

    #[test]
    fn too_few_neighbors_warns() {
        let cams = vec![cam(0.0), cam(-0.2)];
        let depths = vec![DepthMap::constant(4, 4, 5.0); 2];
        let f = filter_depths(&depths, &cams, &ViewGraph::complete(2), &FusionConfig::default()).unwrap();
        assert_eq!(f.masks.iter().map(Mask::count).sum::<usize>(), 0);
        assert_eq!(f.warnings.len(), 2);
        let empty = ViewGraph::new(vec![]).unwrap();
        assert_eq!(filter_depths(&[], &[], &empty, &FusionConfig::default()).unwrap_err(), FusionError::EmptyGraph);
    }

    #[test]
    fn fuse_back_projects_and_merges() {
        let c = cam(0.0);
        let d = DepthMap::constant(2, 2, 2.0);
        let img = Raster::new(2, 2, 3);
        let m = Mask::new(2, 2, true);
        let cloud = fuse(std::slice::from_ref(&d), std::slice::from_ref(&m), std::slice::from_ref(&img), std::slice::from_ref(&c), None).unwrap();
        assert_eq!(cloud.len(), 4);
        assert_eq!(cloud.points[0], [2.0 * (0.0 - 4.5) / 10.0, 2.0 * (0.0 - 4.5) / 10.0, 2.0]);
        let twice = fuse(&[d.clone(), d.clone()], &[m.clone(), m.clone()], &[img.clone(), img.clone()], &[c.clone(), c.clone()], Some(0.05)).unwrap();
        assert_eq!(twice.len(), 4);
        let none = fuse(&[d], &[Mask::new(2, 2, false)], &[img], &[c], None).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn kd_tree_ties_pick_smallest_index() {
        let pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 5.0]];
        let t = KdTree::new(&pts);
        assert_eq!(t.nearest(&[0.0, 0.0, 0.0]), Some((0, 1.0)));
        assert_eq!(t.nearest(&[0.0, 0.0, 4.0]), Some((3, 1.0)));
        assert_eq!(KdTree::new(&[]).nearest(&[0.0; 3]), None);
    }

    #[test]
    fn metric_examples() {
        let a = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let m = dtu_metrics(&a, &a, 20.0).unwrap();
        assert_eq!((m.accuracy, m.completeness, m.overall), (0.0, 0.0, 0.0));
        let f = f_score(&a, &a, 0.1).unwrap();
        assert_eq!((f.precision, f.recall, f.f), (1.0, 1.0, 1.0));
        let far = PointCloud::new(vec![[10.0, 0.0, 0.0]]);
        let f = f_score(&far, &a, 0.1).unwrap();
        assert_eq!((f.precision, f.recall, f.f), (0.0, 0.0, 0.0));
        let half = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 9.0, 0.0], [1.0, 9.0, 0.0]]);
        let f = f_score(&half, &a, 0.1).unwrap();
        assert_eq!((f.precision, f.recall), (0.5, 1.0));
        assert!((f.f - 2.0 / 3.0).abs() < 1e-15);
        assert!(dtu_metrics(&PointCloud::default(), &a, 1.0).is_err());
        assert_eq!(dtu_metrics(&far, &a, 2.0).unwrap().accuracy, 2.0);
    }
}
