//! Closed 2D sketch profiles: exact signed distance, sampled distance
//! fields and zero-level-set extraction by marching squares.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::spatial::KdTree;
use crate::{Error, Result, Vec2};

/// Half-width of the square domain sampled by [`rasterize_field`]; unit-disk
/// sketches plus a 20% margin.
pub const FIELD_EXTENT: f64 = 1.2;

/// Default marching-squares grid resolution.
pub const DEFAULT_RESOLUTION: usize = 256;

/// Closed polygonal loops. Outer boundaries run counter-clockwise, holes
/// clockwise; inside/outside follows the even-odd rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchProfile {
    loops: Vec<Vec<Vec2>>,
}

fn signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

fn point_segment_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

fn orient(a: &Vec2, b: &Vec2, c: &Vec2) -> f64 {
    (b - a).perp(&(c - a))
}

fn on_segment(a: &Vec2, b: &Vec2, p: &Vec2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test (touching counts).
fn segments_intersect(p1: &Vec2, p2: &Vec2, q1: &Vec2, q2: &Vec2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Even-odd containment against a single loop.
fn crossings(poly: &[Vec2], p: &Vec2) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn bbox(poly: &[Vec2]) -> (Vec2, Vec2) {
    poly.iter().fold(
        (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

fn edges(poly: &[Vec2]) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
    (0..poly.len()).map(move |i| (poly[i], poly[(i + 1) % poly.len()]))
}

fn loop_self_intersects(poly: &[Vec2]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (alo, ahi) = (a.inf(&b), a.sup(&b));
        for j in i + 1..n {
            // Adjacent edges share exactly one endpoint.
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if c.inf(&d).x > ahi.x || c.sup(&d).x < alo.x || c.inf(&d).y > ahi.y || c.sup(&d).y < alo.y {
                continue;
            }
            if segments_intersect(&a, &b, &c, &d) {
                return true;
            }
        }
        // Degenerate backtracking onto the neighbouring edge.
        let c = poly[(i + 2) % n];
        if n > 3 && orient(&a, &b, &c) == 0.0 && (c - b).dot(&(a - b)) > 0.0 {
            return true;
        }
    }
    false
}

fn loops_cross(p: &[Vec2], q: &[Vec2]) -> bool {
    let (plo, phi) = bbox(p);
    let (qlo, qhi) = bbox(q);
    if plo.x > qhi.x || qlo.x > phi.x || plo.y > qhi.y || qlo.y > phi.y {
        return false;
    }
    edges(p).any(|(a, b)| edges(q).any(|(c, d)| segments_intersect(&a, &b, &c, &d)))
}

impl SketchProfile {
    /// Validates and orients a set of loops. A repeated closing vertex is
    /// dropped. An empty loop list gives the empty profile.
    pub fn new(loops: Vec<Vec<Vec2>>) -> Result<Self> {
        let mut loops: Vec<Vec<Vec2>> = loops
            .into_iter()
            .map(|mut l| {
                if l.len() > 1 && l.first() == l.last() {
                    l.pop();
                }
                l
            })
            .collect();
        for (i, l) in loops.iter().enumerate() {
            if l.len() < 3 {
                return Err(Error::InvalidProfile(format!("loop {i} has {} vertices", l.len())));
            }
            if l.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(Error::InvalidProfile(format!("loop {i} has a non-finite vertex")));
            }
            if signed_area(l).abs() <= 0.0 {
                return Err(Error::InvalidProfile(format!("loop {i} encloses no area")));
            }
            if loop_self_intersects(l) {
                return Err(Error::InvalidProfile(format!("loop {i} self-intersects")));
            }
        }
        for i in 0..loops.len() {
            for j in i + 1..loops.len() {
                if loops_cross(&loops[i], &loops[j]) {
                    return Err(Error::InvalidProfile(format!("loops {i} and {j} intersect")));
                }
            }
        }
        // Nesting depth decides orientation: even depth is material boundary.
        let depths: Vec<usize> = (0..loops.len())
            .map(|i| {
                (0..loops.len())
                    .filter(|&j| j != i && crossings(&loops[j], &loops[i][0]))
                    .count()
            })
            .collect();
        for (l, depth) in loops.iter_mut().zip(depths) {
            let ccw = signed_area(l) > 0.0;
            if ccw != (depth % 2 == 0) {
                l.reverse();
            }
        }
        let profile = SketchProfile { loops };
        if !profile.loops.is_empty() && profile.area() <= 0.0 {
            return Err(Error::InvalidProfile("profile encloses no area".into()));
        }
        Ok(profile)
    }

    pub fn empty() -> Self {
        SketchProfile { loops: Vec::new() }
    }

    pub fn loops(&self) -> &[Vec<Vec2>] {
        &self.loops
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.loops.iter().map(Vec::len).sum()
    }

    /// Enclosed area (holes subtracted).
    pub fn area(&self) -> f64 {
        self.loops.iter().map(|l| signed_area(l)).sum()
    }

    pub fn perimeter(&self) -> f64 {
        self.loops.iter().flat_map(|l| edges(l)).map(|(a, b)| (b - a).norm()).sum()
    }

    pub fn contains(&self, r: &Vec2) -> bool {
        self.loops.iter().filter(|l| crossings(l, r)).count() % 2 == 1
    }

    /// Exact signed distance to the boundary, negative inside.
    pub fn signed_distance(&self, r: &Vec2) -> f64 {
        let d = self.unsigned_distance(r);
        if self.contains(r) {
            -d
        } else {
            d
        }
    }

    pub fn unsigned_distance(&self, r: &Vec2) -> f64 {
        self.loops
            .iter()
            .flat_map(|l| edges(l))
            .map(|(a, b)| point_segment_distance(r, &a, &b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Applies `f` to every vertex.
    pub fn map(&self, f: impl Fn(&Vec2) -> Vec2) -> Result<Self> {
        SketchProfile::new(self.loops.iter().map(|l| l.iter().map(&f).collect()).collect())
    }

    /// Points spaced evenly by arc length along every loop, `per_unit` per
    /// unit of length (at least one per edge).
    pub fn sample_boundary(&self, per_unit: f64) -> Vec<Vec2> {
        let mut out = Vec::new();
        for (a, b) in self.loops.iter().flat_map(|l| edges(l)) {
            let n = ((b - a).norm() * per_unit).ceil().max(1.0) as usize;
            out.extend((0..n).map(|i| a + (b - a) * (i as f64 / n as f64)));
        }
        out
    }

    /// Standalone SVG document, one even-odd path per loop, y pointing up.
    pub fn to_svg(&self) -> String {
        let e = FIELD_EXTENT;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}" width="512" height="512">"#,
            -e,
            -e,
            2.0 * e,
            2.0 * e
        );
        let _ = writeln!(s, r#"<g transform="scale(1,-1)">"#);
        for l in &self.loops {
            let mut d = String::new();
            for (i, p) in l.iter().enumerate() {
                let _ = write!(d, "{}{} {} ", if i == 0 { "M" } else { "L" }, p.x, p.y);
            }
            d.push('Z');
            let _ = writeln!(
                s,
                r##"<path d="{d}" fill="#8ab4f8" fill-opacity="0.5" fill-rule="evenodd" stroke="#1a4d8f" stroke-width="0.006"/>"##
            );
        }
        s.push_str("</g>\n</svg>\n");
        s
    }
}

/// Anything that can be sampled as a 2D signed field (negative inside).
pub trait SignedField2D {
    fn eval(&self, r: &Vec2) -> f64;
}

impl SignedField2D for SketchProfile {
    fn eval(&self, r: &Vec2) -> f64 {
        self.signed_distance(r)
    }
}

/// Mean unsigned distance from `points` to the profile boundary.
pub fn fit_distance(profile: &SketchProfile, points: &[Vec2]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidInput("fit distance of an empty point set".into()));
    }
    if profile.is_empty() {
        return Err(Error::InvalidProfile("fit distance to an empty profile".into()));
    }
    Ok(points.iter().map(|p| profile.unsigned_distance(p)).sum::<f64>() / points.len() as f64)
}

/// A sketch recovered from points: projected barrel samples with their 2D
/// normals (`None` where the normal vanished in the plane).
#[derive(Debug, Clone, PartialEq)]
pub struct SketchPoints {
    pub points: Vec<Vec2>,
    pub normals: Vec<Option<Vec2>>,
}

/// Normalized sketch of an extrusion cylinder.
#[derive(Debug, Clone, PartialEq)]
pub enum Sketch {
    Profile(SketchProfile),
    Points(SketchPoints),
}

impl Sketch {
    /// Prepares repeated unsigned-distance queries.
    pub fn distance_evaluator(&self) -> SketchDistance<'_> {
        match self {
            Sketch::Profile(p) => SketchDistance::Profile(p),
            Sketch::Points(s) => {
                SketchDistance::Points(KdTree::new(s.points.iter().map(|p| [p.x, p.y]).collect()))
            }
        }
    }

    /// Closed-loop profile: the profile itself, or marching squares over
    /// the oriented point field.
    pub fn to_profile(&self, resolution: usize) -> Result<SketchProfile> {
        match self {
            Sketch::Profile(p) => Ok(p.clone()),
            Sketch::Points(s) => {
                let field = PointSketchField::new(s)?;
                marching_squares(&rasterize_field(&field, resolution)?)
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Sketch::Profile(p) => p.is_empty(),
            Sketch::Points(s) => s.points.is_empty(),
        }
    }
}

pub enum SketchDistance<'a> {
    Profile(&'a SketchProfile),
    Points(KdTree<2>),
}

impl SketchDistance<'_> {
    pub fn unsigned(&self, r: &Vec2) -> f64 {
        match self {
            SketchDistance::Profile(p) => p.unsigned_distance(r),
            SketchDistance::Points(t) => t.nearest(&[r.x, r.y]).map_or(f64::INFINITY, |(_, d2)| d2.sqrt()),
        }
    }
}

/// Total order on confidences for the propagation heap.
#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Signed field of an oriented 2D point sketch: distance to the nearest
/// sample, signed by the side of its normal.
///
/// The unoriented input normals are made consistent by propagation over a
/// nearest-neighbour graph, most decisive chords first. Separate pieces of
/// the graph are joined through their closest pairs, and the result is
/// turned outward by the sign of the flux of the position field.
pub struct PointSketchField {
    tree: KdTree<2>,
    points: Vec<Vec2>,
    normals: Vec<Vec2>,
}

impl PointSketchField {
    const NEIGHBOURS: usize = 8;
    const SIGN_NEIGHBOURS: usize = 4;

    pub fn new(sketch: &SketchPoints) -> Result<Self> {
        let (points, mut normals): (Vec<Vec2>, Vec<Vec2>) = sketch
            .points
            .iter()
            .zip(&sketch.normals)
            .filter_map(|(p, n)| n.map(|n| (*p, n)))
            .unzip();
        if points.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "{} sketch points with in-plane normals; need at least 3",
                points.len()
            )));
        }
        let tree = KdTree::new(points.iter().map(|p| [p.x, p.y]).collect());
        let n = points.len();
        let neighbours: Vec<Vec<usize>> = points
            .iter()
            .map(|p| {
                tree.nearest_k(&[p.x, p.y], Self::NEIGHBOURS + 1)
                    .into_iter()
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        // Symmetrize so propagation reaches every point of a component.
        let mut adjacency = neighbours.clone();
        for (i, ns) in neighbours.iter().enumerate() {
            for &j in ns {
                if !adjacency[j].contains(&i) {
                    adjacency[j].push(i);
                }
            }
        }
        link_components(&points, &mut adjacency);

        // Two consistently oriented samples either run the same way along a
        // chord that follows the curve (tangent test), or each sees the
        // other on the same side, both inside or both outside, of its own
        // tangent line when the chord cuts across a corner or a thin
        // feature (normal test). Each chord uses whichever test its
        // geometry makes decisive, and orientation spreads along the most
        // decisive chords first.
        let tangent = |v: &Vec2| Vec2::new(-v.y, v.x);
        let chords: Vec<Vec<(f64, bool)>> = adjacency
            .iter()
            .enumerate()
            .map(|(i, ns)| {
                ns.iter()
                    .map(|&j| {
                        let d = points[j] - points[i];
                        let len = d.norm();
                        if len == 0.0 {
                            return (0.0, false);
                        }
                        let d = d / len;
                        let along = tangent(&normals[i]).dot(&d).abs().min(tangent(&normals[j]).dot(&d).abs());
                        let across = normals[i].dot(&d).abs().min(normals[j].dot(&d).abs());
                        if across > along {
                            (across, true)
                        } else {
                            (along, false)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut visited = vec![false; n];
        let mut heap = std::collections::BinaryHeap::new();
        let push = |heap: &mut std::collections::BinaryHeap<(OrdF64, usize, usize, bool)>, i: usize, visited: &[bool]| {
            for (&j, &(c, across)) in adjacency[i].iter().zip(&chords[i]) {
                if !visited[j] {
                    heap.push((OrdF64(c), i, j, across));
                }
            }
        };
        visited[0] = true;
        push(&mut heap, 0, &visited);
        while let Some((_, i, j, across)) = heap.pop() {
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let d = points[j] - points[i];
            let flip = if across {
                normals[i].dot(&d) * normals[j].dot(&d) > 0.0
            } else {
                tangent(&normals[i]).dot(&d) * tangent(&normals[j]).dot(&d) < 0.0
            };
            if flip {
                normals[j] = -normals[j];
            }
            push(&mut heap, j, &visited);
        }
        // Outward normals give a positive flux of the position field: twice
        // the enclosed area, holes counted negatively.
        let c = points.iter().fold(Vec2::zeros(), |acc, p| acc + p) / n as f64;
        let flux: f64 = points.iter().zip(&normals).map(|(p, v)| (p - c).dot(v)).sum();
        if flux < 0.0 {
            for v in normals.iter_mut() {
                *v = -*v;
            }
        }
        let field = PointSketchField { tree, points, normals };
        Ok(field)
    }
}

/// Adds the closest cross pair between components until the graph is
/// connected (one Boruvka round per pass).
fn link_components(points: &[Vec2], adjacency: &mut [Vec<usize>]) {
    let n = points.len();
    loop {
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            let mut stack = vec![start];
            while let Some(i) = stack.pop() {
                for &j in &adjacency[i] {
                    if label[j] == usize::MAX {
                        label[j] = count;
                        stack.push(j);
                    }
                }
            }
            count += 1;
        }
        if count <= 1 {
            return;
        }
        let mut best = vec![(f64::INFINITY, 0, 0); count];
        for i in 0..n {
            for j in i + 1..n {
                if label[i] == label[j] {
                    continue;
                }
                let d = (points[j] - points[i]).norm_squared();
                for (c, a, b) in [(label[i], i, j), (label[j], j, i)] {
                    if d < best[c].0 {
                        best[c] = (d, a, b);
                    }
                }
            }
        }
        for &(_, a, b) in &best {
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
    }
}

impl SignedField2D for PointSketchField {
    fn eval(&self, r: &Vec2) -> f64 {
        let near = self.tree.nearest_k(&[r.x, r.y], Self::SIGN_NEIGHBOURS);
        let Some(&(_, d2)) = near.first() else {
            return f64::INFINITY;
        };
        // One sample alone misjudges points beyond a sparsely sampled sharp
        // tip; the cosines to a few nearby tangent lines, weighted by
        // inverse distance, do not.
        let side: f64 = near
            .iter()
            .map(|&(j, e2)| {
                let v = r - self.points[j];
                if e2 == 0.0 {
                    0.0
                } else {
                    v.dot(&self.normals[j]) / e2
                }
            })
            .sum();
        if side < 0.0 {
            -d2.sqrt()
        } else {
            d2.sqrt()
        }
    }
}

/// Signed field sampled on a uniform grid over `[-1.2, 1.2]^2`, plus one
/// sample at every cell center for saddle disambiguation.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField2D {
    resolution: usize,
    /// Row-major, row index along y.
    values: Vec<f64>,
    centers: Vec<f64>,
}

impl DistanceField2D {
    /// Builds a field from explicit samples. `values` has `resolution^2`
    /// entries and `centers` `(resolution - 1)^2`.
    pub fn from_samples(resolution: usize, values: Vec<f64>, centers: Vec<f64>) -> Result<Self> {
        if resolution < 2
            || values.len() != resolution * resolution
            || centers.len() != (resolution - 1) * (resolution - 1)
        {
            return Err(Error::InvalidInput("field sample counts do not match resolution".into()));
        }
        Ok(DistanceField2D { resolution, values, centers })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Grid spacing.
    pub fn cell_size(&self) -> f64 {
        2.0 * FIELD_EXTENT / (self.resolution - 1) as f64
    }

    pub fn node(&self, i: usize, j: usize) -> Vec2 {
        let h = self.cell_size();
        Vec2::new(-FIELD_EXTENT + i as f64 * h, -FIELD_EXTENT + j as f64 * h)
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.resolution + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn center_value(&self, i: usize, j: usize) -> f64 {
        self.centers[j * (self.resolution - 1) + i]
    }

    /// Bilinear interpolation, clamped to the domain.
    pub fn interpolate(&self, r: &Vec2) -> f64 {
        let h = self.cell_size();
        let last = (self.resolution - 1) as f64;
        let fx = ((r.x + FIELD_EXTENT) / h).clamp(0.0, last);
        let fy = ((r.y + FIELD_EXTENT) / h).clamp(0.0, last);
        let i = (fx.floor() as usize).min(self.resolution - 2);
        let j = (fy.floor() as usize).min(self.resolution - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let v00 = self.value(i, j);
        let v10 = self.value(i + 1, j);
        let v01 = self.value(i, j + 1);
        let v11 = self.value(i + 1, j + 1);
        v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty
    }
}

/// Samples `field` on an `R x R` grid (R >= 16).
pub fn rasterize_field(field: &impl SignedField2D, resolution: usize) -> Result<DistanceField2D> {
    if resolution < 16 {
        return Err(Error::InvalidInput(format!("field resolution {resolution} < 16")));
    }
    let h = 2.0 * FIELD_EXTENT / (resolution - 1) as f64;
    let at = |x: f64, y: f64| field.eval(&Vec2::new(-FIELD_EXTENT + x * h, -FIELD_EXTENT + y * h));
    let mut values = Vec::with_capacity(resolution * resolution);
    for j in 0..resolution {
        for i in 0..resolution {
            values.push(at(i as f64, j as f64));
        }
    }
    let mut centers = Vec::with_capacity((resolution - 1) * (resolution - 1));
    for j in 0..resolution - 1 {
        for i in 0..resolution - 1 {
            centers.push(at(i as f64 + 0.5, j as f64 + 0.5));
        }
    }
    DistanceField2D::from_samples(resolution, values, centers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum EdgeKey {
    /// Between nodes (i, j) and (i + 1, j).
    H(isize, isize),
    /// Between nodes (i, j) and (i, j + 1).
    V(isize, isize),
}

/// Zero-level-set loops of a sampled field.
///
/// Crossings are placed by linear interpolation along cell edges; saddle
/// cells are resolved with the cell-center sample. Values outside the grid
/// count as positive so every loop closes.
pub fn marching_squares(field: &DistanceField2D) -> Result<SketchProfile> {
    let r = field.resolution as isize;
    let value = |i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= r || j >= r {
            f64::INFINITY
        } else {
            field.value(i as usize, j as usize)
        }
    };
    let h = field.cell_size();
    let pos = |i: isize, j: isize| {
        Vec2::new(-FIELD_EXTENT + i as f64 * h, -FIELD_EXTENT + j as f64 * h)
    };
    let crossing = |key: EdgeKey| -> Vec2 {
        let ((ai, aj), (bi, bj)) = match key {
            EdgeKey::H(i, j) => ((i, j), (i + 1, j)),
            EdgeKey::V(i, j) => ((i, j), (i, j + 1)),
        };
        let (va, vb) = (value(ai, aj), value(bi, bj));
        // Exactly one endpoint is negative; an infinite one pins the crossing
        // to the finite node.
        let t = if vb.is_infinite() {
            0.0
        } else if va.is_infinite() {
            1.0
        } else {
            (va / (va - vb)).clamp(0.0, 1.0)
        };
        pos(ai, aj) * (1.0 - t) + pos(bi, bj) * t
    };

    let mut next: HashMap<EdgeKey, EdgeKey> = HashMap::new();
    let mut starts: Vec<EdgeKey> = Vec::new();
    for j in -1..r {
        for i in -1..r {
            let corners = [value(i, j), value(i + 1, j), value(i + 1, j + 1), value(i, j + 1)];
            let mask = corners
                .iter()
                .enumerate()
                .fold(0u8, |m, (k, &v)| if v < 0.0 { m | (1 << k) } else { m });
            if mask == 0 || mask == 15 {
                continue;
            }
            let e = [EdgeKey::H(i, j), EdgeKey::V(i + 1, j), EdgeKey::H(i, j + 1), EdgeKey::V(i, j)];
            // Segments run with the inside on their left.
            let segs: &[(usize, usize)] = match mask {
                1 => &[(0, 3)],
                2 => &[(1, 0)],
                4 => &[(2, 1)],
                8 => &[(3, 2)],
                14 => &[(3, 0)],
                13 => &[(0, 1)],
                11 => &[(1, 2)],
                7 => &[(2, 3)],
                3 => &[(1, 3)],
                6 => &[(2, 0)],
                12 => &[(3, 1)],
                9 => &[(0, 2)],
                5 | 10 => {
                    let center_inside = i >= 0
                        && j >= 0
                        && i < r - 1
                        && j < r - 1
                        && field.center_value(i as usize, j as usize) < 0.0;
                    match (mask, center_inside) {
                        (5, true) => &[(0, 1), (2, 3)],
                        (5, false) => &[(0, 3), (2, 1)],
                        (10, true) => &[(3, 0), (1, 2)],
                        _ => &[(1, 0), (3, 2)],
                    }
                }
                _ => unreachable!(),
            };
            for &(a, b) in segs {
                next.insert(e[a], e[b]);
                starts.push(e[a]);
            }
        }
    }

    let mut loops = Vec::new();
    let mut used: std::collections::HashSet<EdgeKey> = std::collections::HashSet::new();
    for start in starts {
        if used.contains(&start) {
            continue;
        }
        let mut poly: Vec<Vec2> = Vec::new();
        let mut key = start;
        loop {
            used.insert(key);
            let p = crossing(key);
            if poly.last().is_none_or(|q: &Vec2| (p - q).norm() > 1e-12) {
                poly.push(p);
            }
            key = match next.get(&key) {
                Some(&k) => k,
                None => break,
            };
            if key == start {
                break;
            }
        }
        while poly.len() > 1 && (poly[0] - poly[poly.len() - 1]).norm() <= 1e-12 {
            poly.pop();
        }
        if poly.len() >= 3 && signed_area(&poly).abs() > 0.0 {
            loops.push(poly);
        }
    }
    SketchProfile::new(loops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn square(half: f64) -> SketchProfile {
        SketchProfile::new(vec![vec![
            Vec2::new(-half, -half),
            Vec2::new(half, -half),
            Vec2::new(half, half),
            Vec2::new(-half, half),
        ]])
        .unwrap()
    }

    fn circle(radius: f64, n: usize) -> SketchProfile {
        SketchProfile::new(vec![(0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                Vec2::new(radius * t.cos(), radius * t.sin())
            })
            .collect()])
        .unwrap()
    }

    fn random_star(rng: &mut impl Rng) -> SketchProfile {
        let n = rng.random_range(3..12);
        SketchProfile::new(vec![(0..n)
            .map(|i| {
                let t = 2.0 * PI * (i as f64 + rng.random_range(-0.3..0.3)) / n as f64;
                let r = rng.random_range(0.3..1.0);
                Vec2::new(r * t.cos(), r * t.sin())
            })
            .collect()])
        .unwrap()
    }

    /// Independent oracle: brute-force edge distance with a winding-number sign.
    fn oracle_sdf(profile: &SketchProfile, r: &Vec2) -> f64 {
        let mut best = f64::INFINITY;
        let mut winding = 0i32;
        for l in profile.loops() {
            for i in 0..l.len() {
                let (a, b) = (l[i], l[(i + 1) % l.len()]);
                let ab = b - a;
                let t = ((r - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
                best = best.min((r - (a + ab * t)).norm());
                let side = ab.perp(&(r - a));
                if a.y <= r.y && b.y > r.y && side > 0.0 {
                    winding += 1;
                } else if a.y > r.y && b.y <= r.y && side < 0.0 {
                    winding -= 1;
                }
            }
        }
        if winding != 0 {
            -best
        } else {
            best
        }
    }

    #[test]
    fn square_distances() {
        let s = square(0.5);
        assert_eq!(s.signed_distance(&Vec2::zeros()), -0.5);
        assert_eq!(s.signed_distance(&Vec2::new(1.0, 0.0)), 0.5);
        assert_eq!(s.unsigned_distance(&Vec2::zeros()), 0.5);
        assert_eq!(s.unsigned_distance(&Vec2::new(0.5, 0.5)), 0.0);
    }

    #[test]
    fn sdf_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let p = random_star(&mut rng);
            for _ in 0..200 {
                let r = Vec2::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2));
                let got = p.signed_distance(&r);
                assert!((got - oracle_sdf(&p, &r)).abs() < 1e-12);
                assert_eq!(p.unsigned_distance(&r), got.abs());
            }
        }
    }

    #[test]
    fn sdf_with_hole() {
        let outer = square(1.0).loops()[0].clone();
        let hole = square(0.4).loops()[0].clone();
        let p = SketchProfile::new(vec![outer, hole]).unwrap();
        assert!((p.area() - (4.0 - 0.64)).abs() < 1e-12);
        assert!((p.signed_distance(&Vec2::zeros()) - 0.4).abs() < 1e-12);
        assert!((p.signed_distance(&Vec2::new(0.7, 0.0)) + 0.3).abs() < 1e-12);
        assert!(signed_area(&p.loops()[1]) < 0.0);
    }

    #[test]
    fn sdf_is_one_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..20 {
            let p = random_star(&mut rng);
            for _ in 0..200 {
                let r = Vec2::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2));
                let t = rng.random_range(0.0..2.0 * PI);
                let delta = rng.random_range(-0.3..0.3);
                let r2 = r + Vec2::new(t.cos(), t.sin()) * delta;
                assert!((p.signed_distance(&r2) - p.signed_distance(&r)).abs() <= delta.abs() + 1e-12);
            }
        }
    }

    #[test]
    fn convex_centroid_is_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..50 {
            let n = rng.random_range(3..10);
            let pts: Vec<Vec2> = (0..n)
                .map(|i| {
                    let t = 2.0 * PI * i as f64 / n as f64;
                    Vec2::new(t.cos(), t.sin()) * rng.random_range(0.5..1.0)
                })
                .collect();
            let centroid = pts.iter().sum::<Vec2>() / n as f64;
            let p = SketchProfile::new(vec![pts]).unwrap();
            assert!(p.signed_distance(&centroid) < 0.0);
        }
    }

    #[test]
    fn profile_validation() {
        let bowtie = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ];
        assert!(SketchProfile::new(vec![bowtie]).is_err());
        assert!(SketchProfile::new(vec![vec![Vec2::zeros(), Vec2::x()]]).is_err());
        let flat = vec![Vec2::zeros(), Vec2::x(), Vec2::new(2.0, 0.0)];
        assert!(SketchProfile::new(vec![flat]).is_err());
        let a = square(0.5).loops()[0].clone();
        let b: Vec<Vec2> = a.iter().map(|p| p + Vec2::new(0.5, 0.0)).collect();
        assert!(SketchProfile::new(vec![a.clone(), b]).is_err());
        // Clockwise input is reoriented; a repeated closing vertex is dropped.
        let mut cw = a.clone();
        cw.reverse();
        cw.push(cw[0]);
        let p = SketchProfile::new(vec![cw]).unwrap();
        assert_eq!(p.loops()[0].len(), 4);
        assert!(p.area() > 0.0);
    }

    #[test]
    fn grid_sample_near_vertex_is_small() {
        let p = circle(0.7, 40);
        let field = rasterize_field(&p, 64).unwrap();
        let h = field.cell_size();
        for v in &p.loops()[0] {
            let i = ((v.x + FIELD_EXTENT) / h).round() as usize;
            let j = ((v.y + FIELD_EXTENT) / h).round() as usize;
            // Nearest node is within h/sqrt(2); the field is 1-Lipschitz.
            assert!(field.value(i, j).abs() <= h / 2f64.sqrt() + 1e-12);
        }
        // A vertex sitting exactly on a node samples to zero.
        let on_grid = square(FIELD_EXTENT - 10.0 * h);
        let f = rasterize_field(&on_grid, 64).unwrap();
        assert!(f.value(10, 10).abs() <= h / 2.0);
        assert!(rasterize_field(&on_grid, 15).is_err());
    }

    #[test]
    fn field_of_circle_polygon() {
        let p = circle(1.0, 256);
        let field = rasterize_field(&p, 64).unwrap();
        // Polygonization error of a 256-gon is 1 - cos(pi/256).
        let poly_err = 1.0 - (PI / 256.0).cos();
        for j in 0..64 {
            for i in 0..64 {
                let r = field.node(i, j);
                assert!((field.value(i, j) - (r.norm() - 1.0)).abs() <= poly_err + 1e-12);
            }
        }
    }

    #[test]
    fn refinement_does_not_increase_interpolation_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let p = random_star(&mut rng);
        let probes: Vec<Vec2> = (0..2000)
            .map(|_| Vec2::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)))
            .collect();
        let max_err = |res: usize| {
            let f = rasterize_field(&p, res).unwrap();
            probes.iter().map(|r| (f.interpolate(r) - p.signed_distance(r)).abs()).fold(0.0, f64::max)
        };
        let errs: Vec<f64> = [17, 33, 65, 129].iter().map(|&r| max_err(r)).collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0], "{errs:?}");
        }
    }

    #[test]
    fn marching_squares_circle() {
        let p = circle(0.5, 512);
        let field = rasterize_field(&p, 128).unwrap();
        let h = field.cell_size();
        let out = marching_squares(&field).unwrap();
        assert_eq!(out.loops().len(), 1);
        for v in &out.loops()[0] {
            assert!((v.norm() - 0.5).abs() <= 2.0 * h);
        }
    }

    #[test]
    fn marching_squares_uniform_field_is_empty() {
        let r = 32;
        let field = DistanceField2D::from_samples(r, vec![1.0; r * r], vec![1.0; (r - 1) * (r - 1)]).unwrap();
        assert!(marching_squares(&field).unwrap().is_empty());
    }

    #[test]
    fn marching_squares_square_area() {
        let p = square(0.6);
        let field = rasterize_field(&p, 96).unwrap();
        let h = field.cell_size();
        let out = marching_squares(&field).unwrap();
        assert!((out.area() - p.area()).abs() <= 5.0 * h * p.perimeter());
    }

    #[test]
    fn marching_squares_keeps_holes_and_orientation() {
        let outer = square(1.0).loops()[0].clone();
        let hole = circle(0.4, 64).loops()[0].clone();
        let p = SketchProfile::new(vec![outer, hole]).unwrap();
        let out = marching_squares(&rasterize_field(&p, 128).unwrap()).unwrap();
        assert_eq!(out.loops().len(), 2);
        assert!((out.area() - p.area()).abs() < 0.05);
        assert!(out.signed_distance(&Vec2::zeros()) > 0.0);
    }

    #[test]
    fn marching_squares_closes_at_domain_border() {
        // Negative everywhere: the single loop hugs the grid boundary.
        let r = 16;
        let field = DistanceField2D::from_samples(r, vec![-1.0; r * r], vec![-1.0; (r - 1) * (r - 1)]).unwrap();
        let out = marching_squares(&field).unwrap();
        assert_eq!(out.loops().len(), 1);
        assert!((out.area() - 4.0 * FIELD_EXTENT * FIELD_EXTENT).abs() < 1e-9);
    }

    #[test]
    fn saddle_uses_center_sample() {
        // Two diagonal negative corners of a single cell.
        let r = 16;
        let mut values = vec![1.0; r * r];
        values[7 * r + 7] = -1.0;
        values[8 * r + 8] = -1.0;
        let mut centers = vec![1.0; (r - 1) * (r - 1)];
        let separate = marching_squares(&DistanceField2D::from_samples(r, values.clone(), centers.clone()).unwrap()).unwrap();
        assert_eq!(separate.loops().len(), 2);
        centers[7 * (r - 1) + 7] = -1.0;
        let joined = marching_squares(&DistanceField2D::from_samples(r, values, centers).unwrap()).unwrap();
        assert_eq!(joined.loops().len(), 1);
    }

    #[test]
    fn fit_distance_examples() {
        let p = square(0.5);
        let on = p.sample_boundary(40.0);
        assert!(fit_distance(&p, &on).unwrap() < 1e-12);
        // Offset outward along edge normals (edge interiors only).
        let delta = 0.03;
        let off: Vec<Vec2> = (1..20)
            .flat_map(|i| {
                let t = -0.5 + i as f64 / 20.0;
                [
                    Vec2::new(t, -0.5 - delta),
                    Vec2::new(0.5 + delta, t),
                    Vec2::new(t, 0.5 + delta),
                    Vec2::new(-0.5 - delta, t),
                ]
            })
            .collect();
        assert!((fit_distance(&p, &off).unwrap() - delta).abs() < 1e-9);
        assert!(fit_distance(&p, &[]).is_err());
    }

    #[test]
    fn point_sketch_field_recovers_profile() {
        let truth = circle(0.8, 128);
        let pts = truth.sample_boundary(300.0);
        let normals = pts.iter().map(|p| Some(if p.x > 0.3 { -p.normalize() } else { p.normalize() })).collect();
        let sketch = Sketch::Points(SketchPoints { points: pts, normals });
        let out = sketch.to_profile(128).unwrap();
        assert_eq!(out.loops().len(), 1);
        assert!((out.area() - truth.area()).abs() < 0.05);
    }

    #[test]
    fn point_sketch_field_with_hole() {
        let outer = square(1.0).loops()[0].clone();
        let hole = circle(0.4, 64).loops()[0].clone();
        let truth = SketchProfile::new(vec![outer, hole]).unwrap();
        let pts = truth.sample_boundary(200.0);
        let normals = pts
            .iter()
            .map(|p| {
                // Unoriented normals: perpendicular to the nearest edge, random sign.
                let g = if p.norm() < 0.5 { p.normalize() } else if p.x.abs() > p.y.abs() { Vec2::x() } else { Vec2::y() };
                Some(if (p.x * 7.0).sin() > 0.0 { g } else { -g })
            })
            .collect();
        let out = Sketch::Points(SketchPoints { points: pts, normals }).to_profile(128).unwrap();
        assert_eq!(out.loops().len(), 2);
        assert!((out.area() - truth.area()).abs() < 0.1, "{}", out.area());
    }

    /// Evenly spaced boundary samples with edge normals of random sign.
    fn unoriented_samples(profile: &SketchProfile, spacing: f64, seed: u64) -> SketchPoints {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (mut points, mut normals) = (Vec::new(), Vec::new());
        for l in profile.loops() {
            for (a, b) in edges(l) {
                let n = Vec2::new(b.y - a.y, a.x - b.x).normalize();
                let steps = ((b - a).norm() / spacing).ceil() as usize;
                for i in 0..steps {
                    points.push(a + (b - a) * ((i as f64 + 0.5) / steps as f64));
                    normals.push(Some(if rng.random_bool(0.5) { n } else { -n }));
                }
            }
        }
        SketchPoints { points, normals }
    }

    #[test]
    fn point_sketch_field_handles_sharp_corners() {
        let star: Vec<Vec2> = (0..10)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / 10.0 + 0.1;
                let r = if i % 2 == 0 { 0.95 } else { 0.3 };
                Vec2::new(r * t.cos(), r * t.sin())
            })
            .collect();
        let l = [(0.0, 0.0), (1.4, 0.0), (1.4, 0.3), (0.3, 0.3), (0.3, 1.4), (0.0, 1.4)]
            .iter()
            .map(|&(x, y)| Vec2::new(x - 0.7, y - 0.7))
            .collect();
        for (k, truth) in [SketchProfile::new(vec![star]).unwrap(), SketchProfile::new(vec![l]).unwrap()]
            .iter()
            .enumerate()
        {
            for seed in 0..3 {
                let sp = unoriented_samples(truth, 0.004, seed);
                let field = PointSketchField::new(&sp).unwrap();
                let truth_n = unoriented_samples(truth, 0.004, 999);
                let bad = field.points.iter().zip(&field.normals).filter(|(p, n)| {
                    let i = truth_n.points.iter().position(|q| q == *p).unwrap();
                    let t = truth_n.normals[i].unwrap();
                    let t = if truth.contains(&(**p + t * 1e-3)) { -t } else { t };
                    n.dot(&t) < 0.0
                }).count();
                assert_eq!(bad, 0, "profile {k} seed {seed}: misoriented normals");
                let mut wrong = 0;
                for i in 0..60 {
                    for j in 0..60 {
                        let r = Vec2::new(-1.18 + 2.36 * i as f64 / 59.0, -1.18 + 2.36 * j as f64 / 59.0);
                        if truth.unsigned_distance(&r) > 0.02 && (field.eval(&r) < 0.0) != truth.contains(&r) {
                            wrong += 1;
                        }
                    }
                }
                assert_eq!(wrong, 0, "profile {k} seed {seed}");
            }
        }
    }

    #[test]
    fn svg_has_one_path_per_loop() {
        let svg = circle(0.5, 32).to_svg();
        assert_eq!(svg.matches("<path").count(), 1);
        assert!(svg.contains("evenodd"));
    }
}
