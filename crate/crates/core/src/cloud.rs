//! Point clouds with optional per-point color.

/// A set of 3D points in world units, optionally colored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    /// When present, has the same length as `points`.
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points, colors: None }
    }

    /// Colored cloud; panics if the lengths differ.
    pub fn with_colors(points: Vec<[f64; 3]>, colors: Vec<[u8; 3]>) -> Self {
        assert_eq!(points.len(), colors.len(), "one color per point");
        Self {
            points,
            colors: Some(colors),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }

    /// Appends `other`. Colors are kept only if both clouds carry them
    /// (or `self` is empty).
    pub fn extend(&mut self, other: &PointCloud) {
        let was_empty = self.points.is_empty();
        self.points.extend_from_slice(&other.points);
        self.colors = match (self.colors.take(), &other.colors) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b.clone()),
            _ => None,
        };
    }

    /// Applies `x -> R x + t` to every point.
    pub fn transformed(&self, r: &[[f64; 3]; 3], t: [f64; 3]) -> PointCloud {
        let points = self
            .points
            .iter()
            .map(|p| {
                let mut q = t;
                for (i, row) in r.iter().enumerate() {
                    q[i] += row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
                }
                q
            })
            .collect();
        PointCloud {
            points,
            colors: self.colors.clone(),
        }
    }
}
