//! Closed-form recovery of extrusion-cylinder parameters from labelled or
//! soft-labelled oriented points.

use crate::geom::{project_cloud, project_to_sketch_plane, smallest_eigenvector_sym3, OrientedPointCloud};
use crate::labels::{HardLabels, MembershipMatrix, BARREL};
use crate::sketch::{Sketch, SketchPoints};
use crate::{Error, Mat3, Result, Vec3};

/// A sketch swept along `axis` over `extent`, measured from `center`.
///
/// The sketch lives in the normalized plane frame: world point `p` maps to
/// `project_to_sketch_plane(p, axis, center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrusionCylinder {
    pub axis: Vec3,
    pub center: Vec3,
    pub sketch: Sketch,
    pub scale: f64,
    pub extent: (f64, f64),
}

impl ExtrusionCylinder {
    pub fn height(&self) -> f64 {
        self.extent.1 - self.extent.0
    }

    /// Normalized sketch coordinates of a world point.
    pub fn to_sketch(&self, p: &Vec3) -> crate::Vec2 {
        project_to_sketch_plane(p, &self.axis, &self.center) / self.scale
    }
}

/// Per-point barrel/base weights of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftWeights {
    pub barrel: Vec<f64>,
    pub base: Vec<f64>,
}

impl SoftWeights {
    pub fn from_membership(m: &MembershipMatrix, k: usize) -> Result<Self> {
        if k >= m.segments() {
            return Err(Error::SegmentOutOfRange { segment: k, segments: m.segments() });
        }
        Ok(SoftWeights { barrel: m.barrel_column(k), base: m.base_column(k) })
    }

    pub fn from_labels(labels: &HardLabels, k: usize) -> Self {
        let (barrel, base) = labels
            .seg
            .iter()
            .zip(&labels.bb)
            .map(|(&s, &b)| {
                let own = s == k;
                (f64::from(u8::from(own && b == BARREL)), f64::from(u8::from(own && b != BARREL)))
            })
            .unzip();
        SoftWeights { barrel, base }
    }

    pub fn len(&self) -> usize {
        self.barrel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.barrel.is_empty()
    }
}

/// `sum_i (barrel_i^2 - base_i^2) n_i n_i^T`.
pub fn scatter_matrix(normals: &[Vec3], w: &SoftWeights) -> Mat3 {
    let mut h = Mat3::zeros();
    for ((n, a), b) in normals.iter().zip(&w.barrel).zip(&w.base) {
        let coef = a * a - b * b;
        if coef != 0.0 {
            h += n * n.transpose() * coef;
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisEstimate {
    /// Unit axis, sign canonicalized (largest component positive).
    pub axis: Vec3,
    /// Gap between the two smallest eigenvalues of the scatter matrix.
    pub gap: f64,
}

/// The direction minimizing `e^T H e`: barrel normals want to be orthogonal
/// to the axis, base normals parallel to it.
pub fn recover_axis(normals: &[Vec3], w: &SoftWeights) -> Result<AxisEstimate> {
    if normals.len() != w.len() || w.base.len() != w.barrel.len() {
        return Err(Error::LengthMismatch { points: w.len(), normals: normals.len() });
    }
    let support = w.barrel.iter().zip(&w.base).filter(|(a, b)| **a > 0.0 || **b > 0.0).count();
    if support < 2 {
        return Err(Error::InvalidInput(format!("axis recovery needs 2 weighted points, got {support}")));
    }
    let eig = smallest_eigenvector_sym3(&scatter_matrix(normals, w));
    if eig.is_ambiguous() {
        return Err(Error::AmbiguousAxis { gap: eig.gap, tolerance: eig.tolerance() });
    }
    Ok(AxisEstimate { axis: eig.vector, gap: eig.gap })
}

/// Barrel-weighted mean of the points.
pub fn recover_center(points: &[Vec3], barrel: &[f64]) -> Result<Vec3> {
    let total: f64 = barrel.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("zero total barrel weight".into()));
    }
    Ok(points.iter().zip(barrel).fold(Vec3::zeros(), |acc, (p, w)| acc + p * *w) / total)
}

/// Largest planar distance of a barrel point from the axis.
pub fn recover_scale(barrel_points: &[Vec3], e: &Vec3, c: &Vec3) -> Result<f64> {
    if barrel_points.is_empty() {
        return Err(Error::InvalidInput("empty barrel set".into()));
    }
    Ok(barrel_points
        .iter()
        .map(|p| project_to_sketch_plane(p, e, c).norm())
        .fold(0.0, f64::max))
}

/// Symmetric extent `(-r, r)` with `r` the largest axial offset of a barrel
/// point; the axis is unoriented, so the range is extruded both ways.
pub fn recover_extent(barrel_points: &[Vec3], e: &Vec3, c: &Vec3) -> Result<(f64, f64)> {
    if barrel_points.is_empty() {
        return Err(Error::InvalidInput("empty barrel set".into()));
    }
    let r = barrel_points.iter().map(|p| e.dot(&(p - c)).abs()).fold(0.0, f64::max);
    Ok((-r, r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CylinderFit {
    pub cylinder: ExtrusionCylinder,
    pub gap: f64,
    /// All barrel points lie in one plane orthogonal to the axis.
    pub zero_extent: bool,
}

/// Fits segment `k`.
///
/// The axis and center use the soft weights directly; the scale, extent and
/// sketch use the points whose most likely class is barrel of segment `k`.
pub fn fit_cylinder(cloud: &OrientedPointCloud, m: &MembershipMatrix, k: usize) -> Result<CylinderFit> {
    if m.rows() != cloud.len() {
        return Err(Error::InvalidInput(format!(
            "membership has {} rows for {} points",
            m.rows(),
            cloud.len()
        )));
    }
    let weights = SoftWeights::from_membership(m, k)?;
    let labels = m.argmax();
    let barrel_idx: Vec<usize> = (0..cloud.len())
        .filter(|&i| labels.seg[i] == k && labels.bb[i] == BARREL)
        .collect();
    fit_with(cloud, &weights, &barrel_idx, k)
}

/// [`fit_cylinder`] for hard labels.
pub fn fit_cylinder_hard(cloud: &OrientedPointCloud, labels: &HardLabels, k: usize) -> Result<CylinderFit> {
    if labels.len() != cloud.len() {
        return Err(Error::InvalidInput(format!("{} labels for {} points", labels.len(), cloud.len())));
    }
    let weights = SoftWeights::from_labels(labels, k);
    fit_with(cloud, &weights, &labels.barrel_indices(k), k)
}

fn fit_with(cloud: &OrientedPointCloud, w: &SoftWeights, barrel_idx: &[usize], k: usize) -> Result<CylinderFit> {
    if barrel_idx.is_empty() || !(w.barrel.iter().sum::<f64>() > 0.0) {
        return Err(Error::EmptySegment { segment: k });
    }
    let est = recover_axis(&cloud.normals, w)?;
    fit_with_axis(cloud, w, barrel_idx, est.axis, est.gap)
}

/// Everything but the axis, which is supplied (e.g. by a voting scheme).
pub(crate) fn fit_with_axis(
    cloud: &OrientedPointCloud,
    w: &SoftWeights,
    barrel_idx: &[usize],
    axis: Vec3,
    gap: f64,
) -> Result<CylinderFit> {
    let center = recover_center(&cloud.points, &w.barrel)?;
    let barrel: Vec<Vec3> = barrel_idx.iter().map(|&i| cloud.points[i]).collect();
    let normals: Vec<Vec3> = barrel_idx.iter().map(|&i| cloud.normals[i]).collect();
    let scale = recover_scale(&barrel, &axis, &center)?;
    let extent = recover_extent(&barrel, &axis, &center)?;
    let projected = project_cloud(&barrel, &normals, &axis, &center);
    let sketch = if scale > 0.0 {
        Sketch::Points(SketchPoints {
            points: projected.points.iter().map(|q| q / scale).collect(),
            normals: projected.normals,
        })
    } else {
        Sketch::Points(SketchPoints { points: projected.points, normals: projected.normals })
    };
    let zero_extent = extent.1 <= 0.0;
    Ok(CylinderFit {
        cylinder: ExtrusionCylinder { axis, center, sketch, scale, extent },
        gap,
        zero_extent,
    })
}

/// Fits every segment of a hard-labelled cloud.
pub fn fit_all_hard(cloud: &OrientedPointCloud, labels: &HardLabels) -> Vec<Result<CylinderFit>> {
    (0..labels.segment_count()).map(|k| fit_cylinder_hard(cloud, labels, k)).collect()
}
