//! Geometric foundations: oriented clouds, the sketch-plane projection,
//! symmetric 3x3 eigen-solves and PCA normal estimation.

use nalgebra::SymmetricEigen;

use crate::labels::HardLabels;
use crate::spatial::KdTree;
use crate::{Error, Mat3, Result, Vec2, Vec3};

/// Relative tolerance on the eigenvalue gap below which the smallest
/// eigenvector is reported as ambiguous.
pub const GAP_TOLERANCE: f64 = 1e-7;

/// Projected normals shorter than this are treated as vanishing in the
/// sketch plane.
pub const MIN_PROJECTED_NORMAL: f64 = 1e-6;

/// Points with unit (sign-ambiguous) normals and optional ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedPointCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub labels: Option<HardLabels>,
}

impl OrientedPointCloud {
    /// Builds a cloud, normalizing every normal to unit length. Normals that
    /// are already unit up to rounding are kept bit-for-bit so that text
    /// round trips are stable.
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::LengthMismatch { points: points.len(), normals: normals.len() });
        }
        let normals = normals
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                let len = n.norm();
                if !len.is_finite() || len < 1e-12 {
                    Err(Error::InvalidInput(format!("normal {i} has zero length")))
                } else if (len - 1.0).abs() < 1e-14 {
                    Ok(n)
                } else {
                    Ok(n / len)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(i) = points.iter().position(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidInput(format!("point {i} is not finite")));
        }
        Ok(OrientedPointCloud { points, normals, labels: None })
    }

    pub fn with_labels(mut self, labels: HardLabels) -> Result<Self> {
        if labels.len() != self.points.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} points",
                labels.len(),
                self.points.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Translates the bounding-box center to the origin and scales so the
    /// farthest point lies on the unit sphere. Returns `(translation, scale)`
    /// such that `p_new = (p_old - translation) * scale`.
    pub fn normalize_to_unit_sphere(&mut self) -> (Vec3, f64) {
        if self.points.is_empty() {
            return (Vec3::zeros(), 1.0);
        }
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let mid = (lo + hi) / 2.0;
        let radius = self.points.iter().map(|p| (p - mid).norm()).fold(0.0, f64::max);
        let scale = if radius > 0.0 { 1.0 / radius } else { 1.0 };
        for p in &mut self.points {
            *p = (*p - mid) * scale;
        }
        (mid, scale)
    }

    pub fn max_radius(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Mat3);

impl Rotation3 {
    pub fn identity() -> Self {
        Rotation3(Mat3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation3(m)
    }

    /// Rotation by `angle` radians about the unit vector `axis`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let k = axis.normalize();
        let kx = k.cross_matrix();
        Rotation3(Mat3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos()))
    }

    /// Minimal rotation taking the unit vector `e` onto `+z`.
    ///
    /// Rodrigues' formula about `e x z`; when `e` is (numerically) `-z` the
    /// rotation is fixed to a half turn about `x`.
    pub fn align_to_z(e: &Vec3) -> Self {
        let z = Vec3::z();
        let c = e.dot(&z);
        if c < -1.0 + 1e-9 {
            return Rotation3(Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)));
        }
        let v = e.cross(&z);
        let vx = v.cross_matrix();
        Rotation3(Mat3::identity() + vx + vx * vx / (1.0 + c))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation3(self.0.transpose())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn compose(&self, other: &Rotation3) -> Self {
        Rotation3(self.0 * other.0)
    }
}

/// Sketch-plane projection: rotate `p - c` so that `e` maps to `+z` and keep
/// the first two coordinates.
pub fn project_to_sketch_plane(p: &Vec3, e: &Vec3, c: &Vec3) -> Vec2 {
    let q = Rotation3::align_to_z(e).apply(&(p - c));
    Vec2::new(q.x, q.y)
}

/// Inverse of [`project_to_sketch_plane`] for a point at height `h` along `e`.
pub fn lift_from_sketch_plane(q: &Vec2, h: f64, e: &Vec3, c: &Vec3) -> Vec3 {
    c + Rotation3::align_to_z(e).transpose().apply(&Vec3::new(q.x, q.y, h))
}

/// A cloud mapped into a sketch plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedCloud {
    pub points: Vec<Vec2>,
    /// `None` where the 3D normal is (nearly) parallel to the axis.
    pub normals: Vec<Option<Vec2>>,
}

pub fn project_cloud(points: &[Vec3], normals: &[Vec3], e: &Vec3, c: &Vec3) -> ProjectedCloud {
    let rot = Rotation3::align_to_z(e);
    let points = points
        .iter()
        .map(|p| {
            let q = rot.apply(&(p - c));
            Vec2::new(q.x, q.y)
        })
        .collect();
    let normals = normals
        .iter()
        .map(|n| {
            let m = rot.apply(n);
            let planar = Vec2::new(m.x, m.y);
            let len = planar.norm();
            (len > MIN_PROJECTED_NORMAL).then(|| planar / len)
        })
        .collect();
    ProjectedCloud { points, normals }
}

/// Flips `v` so that its largest-magnitude component is positive.
pub fn canonical_axis(v: &Vec3) -> Vec3 {
    let i = v.iamax();
    if v[i] < 0.0 {
        -v
    } else {
        *v
    }
}

/// Unoriented angle between two directions, in degrees.
pub fn axis_angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    // atan2 keeps precision for nearly parallel directions, where acos does not.
    a.cross(b).norm().atan2(a.dot(b).abs()).to_degrees()
}

/// Smallest eigenpair of a symmetric 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen {
    pub vector: Vec3,
    pub value: f64,
    /// `lambda_2 - lambda_min`.
    pub gap: f64,
    /// Frobenius norm of the decomposed matrix; ambiguity is judged relative to it.
    pub scale: f64,
}

impl SymEigen {
    pub fn tolerance(&self) -> f64 {
        GAP_TOLERANCE * self.scale
    }

    pub fn is_ambiguous(&self) -> bool {
        self.gap <= self.tolerance()
    }
}

/// Eigenvalues of a symmetric 3x3 matrix in ascending order.
pub fn symmetric_eigenvalues(a: &Mat3) -> [f64; 3] {
    let mut vals: [f64; 3] = SymmetricEigen::new((a + a.transpose()) / 2.0).eigenvalues.into();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Any unit vector orthogonal to `v`.
pub fn any_orthogonal(v: &Vec3) -> Vec3 {
    let a = if v.x.abs() <= v.y.abs() && v.x.abs() <= v.z.abs() {
        Vec3::x()
    } else if v.y.abs() <= v.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    v.cross(&a).normalize()
}

/// Eigenvector of the smallest eigenvalue of a symmetric 3x3 matrix, with
/// the eigenvalue gap to the next one. Sign: largest component positive.
pub fn smallest_eigenvector_sym3(h: &Mat3) -> SymEigen {
    let h = (h + h.transpose()) / 2.0;
    let scale = h.norm();
    let eig = SymmetricEigen::new(h);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let v = eig.eigenvectors.column(order[0]).normalize();
    let value = eig.eigenvalues[order[0]];
    let gap = (eig.eigenvalues[order[1]] - value).max(0.0);
    SymEigen { vector: canonical_axis(&v), value, gap, scale }
}

/// Unoriented normals by local plane fitting: the smallest-variance
/// direction of each point's `k` nearest neighbours (the point included).
/// Neighbourhoods whose covariance has rank below two yield `None`.
pub fn estimate_normals_pca(points: &[Vec3], k: usize) -> Result<Vec<Option<Vec3>>> {
    if k < 3 {
        return Err(Error::InvalidInput(format!("neighbourhood size {k} < 3")));
    }
    if points.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} points is fewer than neighbourhood size {k}",
            points.len()
        )));
    }
    let tree = KdTree::new(points.iter().map(|p| [p.x, p.y, p.z]).collect());
    Ok(points
        .iter()
        .map(|p| {
            let nbrs = tree.nearest_k(&[p.x, p.y, p.z], k);
            let mean = nbrs.iter().map(|&(i, _)| points[i]).sum::<Vec3>() / nbrs.len() as f64;
            let cov = nbrs.iter().fold(Mat3::zeros(), |acc, &(i, _)| {
                let d = points[i] - mean;
                acc + d * d.transpose()
            });
            let vals = symmetric_eigenvalues(&cov);
            if vals[2] <= 1e-24 || vals[1] <= 1e-10 * vals[2] {
                return None;
            }
            Some(smallest_eigenvector_sym3(&cov).vector)
        })
        .collect())
}
