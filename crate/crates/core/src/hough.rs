//! Classical extrusion-axis voting: every oriented point votes for the
//! directions orthogonal to its normal, mean-shift finds the peaks, and
//! points are split among the peaks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fitting::{fit_with_axis, scatter_matrix, ExtrusionCylinder, SoftWeights};
use crate::geom::{any_orthogonal, canonical_axis, smallest_eigenvector_sym3, OrientedPointCloud};
use crate::labels::{HardLabels, BARREL, BASE};
use crate::postproc::{dbscan, DbscanParams};
use crate::spatial::KdTree;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoughParams {
    /// A direction `e` receives a vote from normal `n` when `|e . n| < epsilon`.
    pub epsilon: f64,
    /// Geodesic mean-shift window, radians.
    pub bandwidth: f64,
    pub tangent_samples: usize,
    pub directions: usize,
    /// Modes lighter than this fraction of the heaviest are dropped.
    pub min_mode_ratio: f64,
    pub max_seeds: usize,
    pub seed: u64,
}

impl Default for HoughParams {
    fn default() -> Self {
        HoughParams {
            epsilon: 0.05,
            bandwidth: 0.15,
            tangent_samples: 8,
            directions: 2048,
            min_mode_ratio: 0.25,
            max_seeds: 32,
            seed: 0,
        }
    }
}

impl HoughParams {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) || !(self.bandwidth > 0.0) || self.directions == 0 {
            return Err(Error::InvalidInput(format!(
                "voting needs 0 < epsilon < 1, bandwidth > 0 and directions > 0 (got {}, {}, {})",
                self.epsilon, self.bandwidth, self.directions
            )));
        }
        Ok(())
    }
}

/// Binary vote: 1 when `e` is (nearly) orthogonal to `n`.
pub fn vote(e: &Vec3, n: &Vec3, epsilon: f64) -> u8 {
    u8::from(e.dot(n).abs() < epsilon)
}

/// `m` Fibonacci-spiral directions on the upper hemisphere (`z > 0`).
pub fn fibonacci_hemisphere(m: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..m)
        .map(|i| {
            let z = (i as f64 + 0.5) / m as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Vote tallies over hemisphere directions.
#[derive(Debug, Clone)]
pub struct HoughAccumulator {
    directions: Vec<Vec3>,
    scores: Vec<f64>,
    /// Directions followed by their antipodes.
    tree: KdTree<3>,
}

impl HoughAccumulator {
    pub fn new(directions: Vec<Vec3>) -> Self {
        let both = directions
            .iter()
            .map(|d| [d.x, d.y, d.z])
            .chain(directions.iter().map(|d| [-d.x, -d.y, -d.z]))
            .collect();
        HoughAccumulator { scores: vec![0.0; directions.len()], directions, tree: KdTree::new(both) }
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// Index of the direction nearest to `v` or `-v`.
    pub fn snap(&self, v: &Vec3) -> usize {
        let (i, _) = self.tree.nearest(&[v.x, v.y, v.z]).expect("accumulator has directions");
        i % self.directions.len()
    }

    pub fn add(&mut self, index: usize, weight: f64) {
        self.scores[index] += weight;
    }

    /// Indices within geodesic distance `radius` of `v`, each paired with
    /// the copy (direction or antipode) on `v`'s side.
    fn window(&self, v: &Vec3, radius: f64) -> Vec<(usize, Vec3)> {
        let chord = 2.0 * (radius.min(std::f64::consts::PI) / 2.0).sin();
        let m = self.directions.len();
        self.tree
            .within(&[v.x, v.y, v.z], chord)
            .into_iter()
            .map(|i| {
                let p = self.tree.point(i);
                (i % m, Vec3::new(p[0], p[1], p[2]))
            })
            .collect()
    }
}

/// Casts `tangent_samples` votes per point: random unit tangents of the
/// normal, snapped to the nearest direction and kept if that direction still
/// passes [`vote`].
pub fn accumulate(cloud: &OrientedPointCloud, params: &HoughParams) -> Result<HoughAccumulator> {
    params.validate()?;
    let mut acc = HoughAccumulator::new(fibonacci_hemisphere(params.directions));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for n in &cloud.normals {
        let t1 = any_orthogonal(n);
        let t2 = n.cross(&t1);
        for _ in 0..params.tangent_samples {
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let t = t1 * theta.cos() + t2 * theta.sin();
            let j = acc.snap(&t);
            if vote(&acc.directions[j], n, params.epsilon) == 1 {
                acc.add(j, 1.0);
            }
        }
    }
    Ok(acc)
}

/// Peaks of the accumulator as `(axis, weight)`, heaviest first.
///
/// Seeds are the highest-scoring directions (at most one per window); each
/// climbs to the weighted mean of its window until it moves less than
/// 1e-4 rad. Modes closer than half a window are merged, and modes below
/// `min_mode_ratio` of the heaviest are dropped.
pub fn mean_shift_modes(acc: &HoughAccumulator, params: &HoughParams) -> Vec<(Vec3, f64)> {
    if acc.total() <= 0.0 {
        return Vec::new();
    }
    let bw = params.bandwidth;
    let mut order: Vec<usize> = (0..acc.directions.len()).filter(|&i| acc.scores[i] > 0.0).collect();
    order.sort_by(|&a, &b| acc.scores[b].total_cmp(&acc.scores[a]).then(a.cmp(&b)));
    let mut seeds: Vec<Vec3> = Vec::new();
    for &i in &order {
        if seeds.len() >= params.max_seeds {
            break;
        }
        let d = acc.directions[i];
        if seeds.iter().all(|s| s.dot(&d).abs() < bw.cos()) {
            seeds.push(d);
        }
    }

    let weight_at = |x: &Vec3| acc.window(x, bw).iter().map(|(j, _)| acc.scores[*j]).sum::<f64>();
    let mut modes: Vec<(Vec3, f64)> = Vec::new();
    for seed in seeds {
        let mut x = seed;
        for _ in 0..200 {
            let sum = acc
                .window(&x, bw)
                .iter()
                .fold(Vec3::zeros(), |s, (j, p)| s + p * acc.scores[*j]);
            if sum.norm() == 0.0 {
                break;
            }
            let next = sum.normalize();
            let moved = next.cross(&x).norm().atan2(next.dot(&x));
            x = next;
            if moved < 1e-4 {
                break;
            }
        }
        modes.push((canonical_axis(&x), weight_at(&x)));
    }
    modes.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut merged: Vec<(Vec3, f64)> = Vec::new();
    for (x, w) in modes {
        if merged.iter().all(|(m, _)| m.dot(&x).abs() < (bw / 2.0).cos()) {
            merged.push((x, w));
        }
    }
    let top = merged.first().map_or(0.0, |m| m.1);
    merged.retain(|m| m.1 > 0.0 && m.1 >= params.min_mode_ratio * top);
    merged
}

/// Hough decomposition of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub labels: HardLabels,
    pub cylinders: Vec<ExtrusionCylinder>,
    /// Modes that explain a segment, heaviest first; one per cylinder.
    pub modes: Vec<(Vec3, f64)>,
    pub warnings: Vec<String>,
}

/// A normal within this angle of perpendicular (or parallel) to an axis is
/// explained by it.
const EXPLAIN_DEG: f64 = 10.0;
/// A further mode is kept only if it explains this share of the points not
/// explained by the modes kept before it.
const MIN_NEW_SHARE: f64 = 0.05;

fn fit_score(n: &Vec3, e: &Vec3) -> f64 {
    let d = n.dot(e).abs();
    d.max(1.0 - d)
}

fn assign(normals: &[Vec3], axes: &[Vec3]) -> Vec<usize> {
    normals
        .iter()
        .map(|n| {
            (0..axes.len()).fold(0, |best, k| if fit_score(n, &axes[k]) > fit_score(n, &axes[best]) { k } else { best })
        })
        .collect()
}

pub fn decompose(cloud: &OrientedPointCloud, params: &HoughParams) -> Result<Decomposition> {
    if cloud.is_empty() {
        return Err(Error::InvalidInput("cannot decompose an empty cloud".into()));
    }
    let acc = accumulate(cloud, params)?;
    let modes = mean_shift_modes(&acc, params);
    if modes.is_empty() {
        return Err(Error::NoModes);
    }

    let n = cloud.len();
    let (sin_t, cos_t) = EXPLAIN_DEG.to_radians().sin_cos();
    let explains = |e: &Vec3, i: usize| {
        let d = cloud.normals[i].dot(e).abs();
        d < sin_t || d > cos_t
    };
    let mut explained = vec![false; n];
    let mut axes: Vec<Vec3> = Vec::new();
    let mut accepted = Vec::new();
    for &(e, w) in &modes {
        let fresh: Vec<usize> = (0..n).filter(|&i| !explained[i] && explains(&e, i)).collect();
        if axes.is_empty() || fresh.len() as f64 >= MIN_NEW_SHARE * n as f64 {
            for i in fresh {
                explained[i] = true;
            }
            axes.push(e);
            accepted.push((e, w));
        }
    }

    // Axes left without any barrel point cannot be fitted; drop them and
    // reassign until every segment has a wall.
    let cos45 = std::f64::consts::FRAC_1_SQRT_2;
    let (seg, bb) = loop {
        let seg = assign(&cloud.normals, &axes);
        let bb: Vec<u8> = (0..n)
            .map(|i| if cloud.normals[i].dot(&axes[seg[i]]).abs() > cos45 { BASE } else { BARREL })
            .collect();
        let has_barrel: Vec<bool> = (0..axes.len()).map(|k| (0..n).any(|i| seg[i] == k && bb[i] == BARREL)).collect();
        if has_barrel.iter().all(|&b| b) || axes.len() == 1 {
            break (seg, bb);
        }
        accepted = accepted.into_iter().zip(&has_barrel).filter(|(_, &b)| b).map(|(m, _)| m).collect();
        axes = accepted.iter().map(|m| m.0).collect();
    };
    let labels = HardLabels::new(seg, bb)?;

    let mut cylinders = Vec::with_capacity(axes.len());
    let mut warnings = Vec::new();
    let db = DbscanParams::for_points(n);
    for (k, axis) in axes.iter().enumerate() {
        let barrel_idx = labels.barrel_indices(k);
        if barrel_idx.is_empty() {
            return Err(Error::EmptySegment { segment: k });
        }
        let w = SoftWeights::from_labels(&labels, k);
        let gap = smallest_eigenvector_sym3(&scatter_matrix(&cloud.normals, &w)).gap;
        let fit = fit_with_axis(cloud, &w, &barrel_idx, *axis, gap)?;
        let offsets: Vec<[f64; 1]> =
            barrel_idx.iter().map(|&i| [axis.dot(&(cloud.points[i] - fit.cylinder.center))]).collect();
        let clusters = dbscan(&offsets, &db)?.into_iter().flatten().max().map_or(0, |m| m + 1);
        if clusters > 1 {
            warnings.push(format!(
                "segment {k}: walls form {clusters} separate runs along the axis; \
                 several extrusions sharing this axis may have been merged"
            ));
        }
        cylinders.push(fit.cylinder);
    }
    Ok(Decomposition { labels, cylinders, modes: accepted, warnings })
}
