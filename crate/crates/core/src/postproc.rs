//! Cleanup of predicted decompositions: density clustering of segments,
//! neighbour voting on labels, robust scale and extent estimates.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geom::{project_to_sketch_plane, OrientedPointCloud};
use crate::labels::HardLabels;
use crate::spatial::KdTree;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl DbscanParams {
    /// Four times the expected sample spacing `2/sqrt(N)` of `n` points
    /// spread over a unit-sphere-sized surface.
    pub fn for_points(n: usize) -> Self {
        DbscanParams { eps: 8.0 / (n.max(1) as f64).sqrt(), min_pts: 8 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || self.min_pts == 0 {
            return Err(Error::InvalidInput(format!(
                "DBSCAN needs eps > 0 and min_pts >= 1, got {} and {}",
                self.eps, self.min_pts
            )));
        }
        Ok(())
    }
}

/// Density clustering. Returns a cluster id per point (`None` for noise);
/// ids are assigned in order of each cluster's lowest-index core point.
pub fn dbscan<const D: usize>(points: &[[f64; D]], params: &DbscanParams) -> Result<Vec<Option<usize>>> {
    params.validate()?;
    let tree = KdTree::new(points.to_vec());
    let mut cluster = vec![None; points.len()];
    let mut visited = vec![false; points.len()];
    let mut next_id = 0;
    for start in 0..points.len() {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let seeds = tree.within(&points[start], params.eps);
        if seeds.len() < params.min_pts {
            continue;
        }
        let id = next_id;
        next_id += 1;
        cluster[start] = Some(id);
        let mut stack = seeds;
        while let Some(i) = stack.pop() {
            if cluster[i].is_none() {
                cluster[i] = Some(id);
            }
            if visited[i] {
                continue;
            }
            visited[i] = true;
            let ns = tree.within(&points[i], params.eps);
            if ns.len() >= params.min_pts {
                stack.extend(ns.into_iter().filter(|&j| !visited[j] || cluster[j].is_none()));
            }
        }
    }
    Ok(cluster)
}

/// Id of the most populated cluster (ties to the lower id).
pub fn largest_cluster(clusters: &[Option<usize>]) -> Option<usize> {
    let count = clusters.iter().flatten().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; count];
    for c in clusters.iter().flatten() {
        sizes[*c] += 1;
    }
    (0..count).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineParams {
    /// `None` derives the radius from the cloud size.
    pub dbscan: Option<DbscanParams>,
    pub neighbours: usize,
    pub consensus: f64,
    pub max_passes: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams { dbscan: None, neighbours: 10, consensus: 0.7, max_passes: 3 }
    }
}

fn majority(labels: impl Iterator<Item = usize>) -> Option<(usize, usize)> {
    let mut counts: Vec<usize> = Vec::new();
    for l in labels {
        if counts.len() <= l {
            counts.resize(l + 1, 0);
        }
        counts[l] += 1;
    }
    (0..counts.len())
        .filter(|&l| counts[l] > 0)
        .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
        .map(|l| (l, counts[l]))
}

/// One pass: drop every segment's minor spatial clusters, hand the dropped
/// points to their labelled neighbours' majority, then overturn labels that
/// a strong neighbour consensus disagrees with.
fn refine_pass(points: &[[f64; 3]], seg: &[usize], params: &RefineParams, db: &DbscanParams) -> Result<Vec<usize>> {
    let n = points.len();
    let segments = seg.iter().max().map_or(0, |&m| m + 1);
    let mut label: Vec<Option<usize>> = seg.iter().map(|&s| Some(s)).collect();
    for k in 0..segments {
        let members: Vec<usize> = (0..n).filter(|&i| seg[i] == k).collect();
        if members.is_empty() {
            continue;
        }
        let sub: Vec<[f64; 3]> = members.iter().map(|&i| points[i]).collect();
        let clusters = dbscan(&sub, db)?;
        // A segment without any dense core keeps its points.
        if let Some(keep) = largest_cluster(&clusters) {
            for (&i, c) in members.iter().zip(&clusters) {
                if *c != Some(keep) {
                    label[i] = None;
                }
            }
        }
    }

    let labelled: Vec<usize> = (0..n).filter(|&i| label[i].is_some()).collect();
    if labelled.is_empty() {
        return Ok(seg.to_vec());
    }
    let tree = KdTree::new(labelled.iter().map(|&i| points[i]).collect());
    let mut filled: Vec<usize> = label
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.unwrap_or_else(|| {
                let ns = tree.nearest_k(&points[i], params.neighbours);
                majority(ns.iter().map(|&(j, _)| label[labelled[j]].expect("tree holds labelled points")))
                    .map_or(seg[i], |(l, _)| l)
            })
        })
        .collect();

    let all = KdTree::new(points.to_vec());
    let snapshot = filled.clone();
    for i in 0..n {
        let ns = all.nearest_k(&points[i], params.neighbours + 1);
        let others: Vec<usize> = ns.iter().map(|&(j, _)| j).filter(|&j| j != i).take(params.neighbours).collect();
        if others.is_empty() {
            continue;
        }
        if let Some((l, count)) = majority(others.iter().map(|&j| snapshot[j])) {
            if l != snapshot[i] && count as f64 >= params.consensus * others.len() as f64 {
                filled[i] = l;
            }
        }
    }
    Ok(filled)
}

/// Spatially coherent segment labels. Base/barrel flags are kept as given,
/// and no new segment index is ever introduced.
pub fn refine_segmentation(cloud: &OrientedPointCloud, labels: &HardLabels, params: &RefineParams) -> Result<HardLabels> {
    if labels.len() != cloud.len() {
        return Err(Error::InvalidInput(format!("{} labels for {} points", labels.len(), cloud.len())));
    }
    let db = params.dbscan.unwrap_or_else(|| DbscanParams::for_points(cloud.len()));
    let points: Vec<[f64; 3]> = cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let mut seg = labels.seg.clone();
    for _ in 0..params.max_passes.max(1) {
        let next = refine_pass(&points, &seg, params, &db)?;
        if next == seg {
            break;
        }
        seg = next;
    }
    HardLabels::new(seg, labels.bb.clone())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub sample_frac: f64,
    pub accept_frac: f64,
    /// Relative slack on a candidate radius.
    pub inlier_tol: f64,
    pub max_iters: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams { sample_frac: 0.01, accept_frac: 0.8, inlier_tol: 0.02, max_iters: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacScale {
    pub scale: f64,
    /// Fraction of barrel points within `scale * (1 + inlier_tol)`.
    pub coverage: f64,
    /// Some candidate reached `accept_frac`.
    pub accepted: bool,
}

/// Outlier-tolerant sketch scale.
///
/// Each round takes the largest projected radius of a small random sample
/// as a candidate and counts the barrel points it covers; a candidate
/// covering `accept_frac` is accepted. On large segments almost every
/// sample contains an outlier, so the candidates only certify that the
/// `accept_frac` quantile of the radii lies on the surface. The estimate is
/// the top of the dense run of sorted radii starting at that quantile: it
/// climbs while consecutive radii differ by at most `inlier_tol` relative,
/// reaching the true silhouette on clean data and stopping at the gap
/// before far outliers.
pub fn ransac_scale(barrel: &[Vec3], e: &Vec3, c: &Vec3, params: &RansacParams, seed: u64) -> Result<RansacScale> {
    if barrel.is_empty() {
        return Err(Error::InvalidInput("empty barrel set".into()));
    }
    for f in [params.sample_frac, params.accept_frac] {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidInput(format!("RANSAC fraction {f} outside (0, 1]")));
        }
    }
    let mut radii: Vec<f64> = barrel.iter().map(|p| project_to_sketch_plane(p, e, c).norm()).collect();
    radii.sort_by(f64::total_cmp);
    let n = radii.len();
    let covered = |s: f64| radii.partition_point(|&r| r <= s * (1.0 + params.inlier_tol)) as f64 / n as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = ((params.sample_frac * n as f64).ceil() as usize).clamp(1, n);
    let mut accepted: Option<f64> = None;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for _ in 0..params.max_iters.max(1) {
        let candidate = sample(&mut rng, n, take).iter().map(|i| radii[i]).fold(0.0, f64::max);
        let cov = covered(candidate);
        if cov >= params.accept_frac && accepted.is_none_or(|a| candidate < a) {
            accepted = Some(candidate);
        }
        if cov > best.0 || (cov == best.0 && candidate < best.1) {
            best = (cov, candidate);
        }
    }
    let start = accepted.unwrap_or(best.1);
    let mut i = radii.partition_point(|&r| r <= start).max(1) - 1;
    if accepted.is_some() {
        i = i.min(((params.accept_frac * n as f64).ceil() as usize).clamp(1, n) - 1);
    }
    while i + 1 < n && radii[i + 1] - radii[i] <= params.inlier_tol * radii[i] {
        i += 1;
    }
    let scale = radii[i];
    Ok(RansacScale { scale, coverage: covered(scale), accepted: accepted.is_some() })
}

/// Symmetric extent of the dominant cluster of axial offsets.
pub fn robust_extent(barrel: &[Vec3], e: &Vec3, c: &Vec3, params: &DbscanParams) -> Result<(f64, f64)> {
    if barrel.is_empty() {
        return Err(Error::InvalidInput("empty barrel set".into()));
    }
    let t: Vec<[f64; 1]> = barrel.iter().map(|p| [e.dot(&(p - c))]).collect();
    let clusters = dbscan(&t, params)?;
    let r = match largest_cluster(&clusters) {
        Some(keep) => t.iter().zip(&clusters).filter(|(_, c)| **c == Some(keep)).map(|(x, _)| x[0].abs()).fold(0.0, f64::max),
        None => t.iter().map(|x| x[0].abs()).fold(0.0, f64::max),
    };
    Ok((-r, r))
}
