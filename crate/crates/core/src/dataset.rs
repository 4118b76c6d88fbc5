//! The on-disk dataset layout:
//!
//! ```text
//! <root>/images/00000000.ppm    color images
//! <root>/depths/00000000.pfm    depth maps, 0 where invalid
//! <root>/flows/00000000_00000001.flo
//! <root>/cams/00000000_cam.txt
//! <root>/pair.txt
//! <root>/gt.ply                 reference point cloud
//! ```
//!
//! Flow `a_b` maps pixels of view `a` into view `b`.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cloud::PointCloud;
use crate::geometry::{Camera, GeometryError};
use crate::raster::{DepthMap, FlowField, Raster};
use crate::scene_io::{self, FormatError, PlyFormat, PnmOptions, ViewGraph};
use crate::synth::{GtFlow, Rendered, Scene};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error("{path}: {source}")]
    Camera { path: PathBuf, source: GeometryError },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

pub fn image_path(root: &Path, view: usize) -> PathBuf {
    root.join("images").join(format!("{view:08}.ppm"))
}

pub fn depth_path(root: &Path, view: usize) -> PathBuf {
    root.join("depths").join(format!("{view:08}.pfm"))
}

pub fn flow_path(root: &Path, a: usize, b: usize) -> PathBuf {
    root.join("flows").join(format!("{a:08}_{b:08}.flo"))
}

pub fn camera_path(root: &Path, view: usize) -> PathBuf {
    root.join("cams").join(format!("{view:08}_cam.txt"))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

fn format_err(path: &Path) -> impl FnOnce(FormatError) -> DatasetError + '_ {
    move |source| DatasetError::Format {
        path: path.to_owned(),
        source,
    }
}

pub fn read_image(path: &Path) -> Result<Raster, DatasetError> {
    scene_io::read_pnm(&read_bytes(path)?, PnmOptions::default()).map_err(format_err(path))
}

/// Reads a one-channel PFM; non-positive samples are invalid.
pub fn read_depth(path: &Path) -> Result<DepthMap, DatasetError> {
    let pfm = scene_io::read_pfm(&read_bytes(path)?).map_err(format_err(path))?;
    if pfm.raster.channels() != 1 {
        return Err(DatasetError::Invalid {
            path: path.to_owned(),
            message: format!("expected 1 channel, found {}", pfm.raster.channels()),
        });
    }
    Ok(DepthMap::from_raster(&pfm.raster).expect("one channel"))
}

/// Reads a one-channel PFM as raw samples.
pub fn read_scalar(path: &Path) -> Result<Raster, DatasetError> {
    let pfm = scene_io::read_pfm(&read_bytes(path)?).map_err(format_err(path))?;
    if pfm.raster.channels() != 1 {
        return Err(DatasetError::Invalid {
            path: path.to_owned(),
            message: format!("expected 1 channel, found {}", pfm.raster.channels()),
        });
    }
    Ok(pfm.raster)
}

pub fn write_raster_pfm(path: &Path, raster: &Raster) -> Result<(), DatasetError> {
    write_bytes(path, &scene_io::write_pfm(raster).map_err(format_err(path))?)
}

pub fn read_flow(path: &Path) -> Result<FlowField, DatasetError> {
    scene_io::read_flo(&read_bytes(path)?).map_err(format_err(path))
}

pub fn read_camera(path: &Path) -> Result<Camera, DatasetError> {
    let file = scene_io::parse_camera(&read_bytes(path)?).map_err(format_err(path))?;
    Camera::from_file(&file).map_err(|source| DatasetError::Camera {
        path: path.to_owned(),
        source,
    })
}

pub fn read_cloud(path: &Path) -> Result<PointCloud, DatasetError> {
    scene_io::read_ply(&read_bytes(path)?).map_err(format_err(path))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<(), DatasetError> {
    write_bytes(path, &scene_io::write_ply(cloud, PlyFormat::BinaryLittleEndian))
}

/// Cameras and view graph of a dataset directory; images, depths and
/// flows are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub cameras: Vec<Camera>,
    pub pairs: ViewGraph,
    /// Hypothesis count from the reference camera file.
    pub depth_count: usize,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, DatasetError> {
        let pair_file = root.join("pair.txt");
        let pairs = scene_io::parse_pairs(&read_bytes(&pair_file)?).map_err(format_err(&pair_file))?;
        let mut cameras = Vec::with_capacity(pairs.num_views());
        let mut depth_count = scene_io::DEFAULT_DEPTH_COUNT;
        for v in 0..pairs.num_views() {
            let path = camera_path(root, v);
            if v == 0 {
                let file = scene_io::parse_camera(&read_bytes(&path)?).map_err(format_err(&path))?;
                depth_count = file.depth_count.unwrap_or(depth_count);
            }
            cameras.push(read_camera(&path)?);
        }
        Ok(Self {
            root: root.to_owned(),
            cameras,
            pairs,
            depth_count,
        })
    }

    pub fn num_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn image(&self, view: usize) -> Result<Raster, DatasetError> {
        read_image(&image_path(&self.root, view))
    }

    pub fn depth(&self, view: usize) -> Result<DepthMap, DatasetError> {
        read_depth(&depth_path(&self.root, view))
    }

    pub fn flow(&self, a: usize, b: usize) -> Result<FlowField, DatasetError> {
        read_flow(&flow_path(&self.root, a, b))
    }

    pub fn gt_cloud(&self) -> Result<PointCloud, DatasetError> {
        read_cloud(&self.root.join("gt.ply"))
    }

    /// Depth spacing of uniformly spaced hypotheses of `view`.
    pub fn depth_interval(&self, view: usize) -> f64 {
        let (lo, hi) = self.cameras[view].depth_range();
        (hi - lo) / (self.depth_count.max(2) - 1) as f64
    }
}

/// View graph scored by inverse camera distance, best first.
pub fn pairs_by_distance(cameras: &[Camera]) -> ViewGraph {
    let n = cameras.len();
    let neighbors = (0..n)
        .map(|a| {
            let mut v: Vec<(usize, f64)> = (0..n)
                .filter(|&b| b != a)
                .map(|b| {
                    let d = (cameras[a].center() - cameras[b].center()).norm();
                    (b, 1.0 / (1.0 + d))
                })
                .collect();
            v.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            v
        })
        .collect();
    ViewGraph::new(neighbors).expect("valid by construction")
}

/// Writes a rendered scene in the dataset layout, including flows between
/// every ordered pair of views.
pub fn write_rendered(root: &Path, scene: &Scene, rendered: &Rendered) -> Result<(), DatasetError> {
    let views = &rendered.views;
    for (i, v) in views.iter().enumerate() {
        let p = image_path(root, i);
        write_bytes(&p, &scene_io::write_pnm(&v.image).map_err(format_err(&p))?)?;
        write_raster_pfm(&depth_path(root, i), &v.depth.to_raster())?;
        let cam = v.camera.to_file(scene.spec().depth_count);
        write_bytes(&camera_path(root, i), cam.to_text().as_bytes())?;
    }
    for a in 0..views.len() {
        for b in a + 1..views.len() {
            let GtFlow { forward, backward, .. } = scene.gt_flow(views, a, b).map_err(|e| DatasetError::Invalid {
                path: root.to_owned(),
                message: e.to_string(),
            })?;
            for (path, f) in [(flow_path(root, a, b), forward), (flow_path(root, b, a), backward)] {
                write_bytes(&path, &scene_io::write_flo(&f).map_err(format_err(&path))?)?;
            }
        }
    }
    let cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    write_bytes(&root.join("pair.txt"), pairs_by_distance(&cams).to_text().as_bytes())?;
    write_cloud(&root.join("gt.ply"), &rendered.cloud)
}
