//! Triangle meshes of extrusion cylinders: cap triangulation by ear clipping
//! (holes bridged into their outer loop), quad-strip walls, OBJ export.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::fitting::ExtrusionCylinder;
use crate::geom::Rotation3;
use crate::sketch::SketchProfile;
use crate::{Error, Result, Vec2, Vec3};

fn cross(o: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    (a - o).perp(&(b - o))
}

fn point_in_triangle(p: &Vec2, a: &Vec2, b: &Vec2, c: &Vec2) -> bool {
    cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0
}

/// Whether direction `to` from the corner `v` lies within the interior
/// wedge formed by `prev -> v -> next` (counter-clockwise polygon).
fn in_wedge(prev: &Vec2, v: &Vec2, next: &Vec2, to: &Vec2) -> bool {
    if cross(prev, v, next) >= 0.0 {
        cross(v, next, to) >= 0.0 && cross(prev, v, to) >= 0.0
    } else {
        !(cross(v, next, to) < 0.0 && cross(prev, v, to) < 0.0)
    }
}

/// Splices `hole` into `poly` through a mutually visible vertex pair.
fn bridge_hole(poly: &mut Vec<usize>, hole: &[usize], pts: &[Vec2]) {
    let (mi, &m) = hole
        .iter()
        .enumerate()
        .max_by(|a, b| pts[*a.1].x.total_cmp(&pts[*b.1].x).then(b.0.cmp(&a.0)))
        .expect("hole is non-empty");
    let mp = pts[m];

    // Closest edge hit by the ray from M towards +x.
    let n = poly.len();
    let mut best: Option<(f64, usize)> = None;
    for i in 0..n {
        let (a, b) = (pts[poly[i]], pts[poly[(i + 1) % n]]);
        if (a.y > mp.y) == (b.y > mp.y) && a.y != mp.y && b.y != mp.y {
            continue;
        }
        let x = if a.y == b.y {
            a.x.max(b.x)
        } else {
            a.x + (mp.y - a.y) * (b.x - a.x) / (b.y - a.y)
        };
        if x < mp.x || (a.y - mp.y) * (b.y - mp.y) > 0.0 {
            continue;
        }
        if best.is_none_or(|(bx, _)| x < bx) {
            best = Some((x, i));
        }
    }
    let (hit_x, edge) = best.expect("hole lies inside its outer loop");
    let hit = Vec2::new(hit_x, mp.y);
    let (ea, eb) = (edge, (edge + 1) % n);
    let mut candidate = if pts[poly[ea]].x > pts[poly[eb]].x { ea } else { eb };
    if pts[poly[ea]] == hit {
        candidate = ea;
    } else if pts[poly[eb]] == hit {
        candidate = eb;
    } else {
        // Reflex vertices inside (M, hit, P) may block the view; take the
        // one closest in angle to the ray.
        let p = pts[poly[candidate]];
        let (t0, t1, t2) = if cross(&mp, &hit, &p) >= 0.0 { (mp, hit, p) } else { (mp, p, hit) };
        let mut best_key = (f64::INFINITY, f64::INFINITY);
        for i in 0..n {
            let v = pts[poly[i]];
            if i == candidate || v == p {
                continue;
            }
            let prev = pts[poly[(i + n - 1) % n]];
            let next = pts[poly[(i + 1) % n]];
            if cross(&prev, &v, &next) >= 0.0 || !point_in_triangle(&v, &t0, &t1, &t2) {
                continue;
            }
            let d = v - mp;
            let key = ((d.y).abs().atan2(d.x), d.norm());
            if key < best_key {
                best_key = key;
                candidate = i;
            }
        }
    }
    // Among duplicated positions (earlier bridges), use the corner whose
    // wedge opens towards M.
    let target = pts[poly[candidate]];
    if let Some(i) = (0..n).find(|&i| {
        pts[poly[i]] == target
            && in_wedge(&pts[poly[(i + n - 1) % n]], &target, &pts[poly[(i + 1) % n]], &mp)
    }) {
        candidate = i;
    }

    let mut spliced = Vec::with_capacity(n + hole.len() + 2);
    spliced.extend_from_slice(&poly[..=candidate]);
    spliced.extend((0..hole.len()).map(|k| hole[(mi + k) % hole.len()]));
    spliced.push(m);
    spliced.extend_from_slice(&poly[candidate..]);
    *poly = spliced;
}

fn ear_clip(mut poly: Vec<usize>, pts: &[Vec2], out: &mut Vec<[usize; 3]>) {
    let mut strict = true;
    while poly.len() > 3 {
        let n = poly.len();
        let mut clipped = false;
        for i in 0..n {
            let (ia, ib, ic) = (poly[(i + n - 1) % n], poly[i], poly[(i + 1) % n]);
            let (a, b, c) = (pts[ia], pts[ib], pts[ic]);
            let turn = cross(&a, &b, &c);
            if turn < 0.0 || (strict && turn == 0.0) {
                continue;
            }
            let blocked = poly.iter().any(|&j| {
                let p = pts[j];
                p != a && p != b && p != c && point_in_triangle(&p, &a, &b, &c)
            });
            if !blocked {
                out.push([ia, ib, ic]);
                poly.remove(i);
                clipped = true;
                strict = true;
                break;
            }
        }
        if !clipped {
            if strict {
                strict = false;
            } else {
                // Numerically stuck: cut the least-reflex corner anyway.
                let i = (0..n)
                    .max_by(|&x, &y| {
                        let t = |i: usize| cross(&pts[poly[(i + n - 1) % n]], &pts[poly[i]], &pts[poly[(i + 1) % n]]);
                        t(x).total_cmp(&t(y))
                    })
                    .unwrap_or(0);
                out.push([poly[(i + n - 1) % n], poly[i], poly[(i + 1) % n]]);
                poly.remove(i);
            }
        }
    }
    if poly.len() == 3 {
        out.push([poly[0], poly[1], poly[2]]);
    }
}

/// Triangulates the profile's enclosed area. Indices refer to the profile's
/// vertices with loops concatenated in order; triangles are counter-clockwise.
pub fn triangulate_profile(profile: &SketchProfile) -> Result<Vec<[usize; 3]>> {
    if profile.is_empty() {
        return Err(Error::InvalidProfile("cannot triangulate an empty profile".into()));
    }
    let pts: Vec<Vec2> = profile.loops().iter().flatten().copied().collect();
    let mut ranges = Vec::new();
    let mut start = 0;
    for l in profile.loops() {
        ranges.push((start..start + l.len()).collect::<Vec<usize>>());
        start += l.len();
    }
    let loops = profile.loops();
    let contains = |outer: usize, inner: usize| -> bool {
        let single = SketchProfile::new(vec![loops[outer].clone()]).ok();
        single.is_some_and(|s| s.contains(&loops[inner][0]))
    };
    let count = loops.len();
    let depth: Vec<usize> = (0..count)
        .map(|i| (0..count).filter(|&j| j != i && contains(j, i)).count())
        .collect();

    let mut triangles = Vec::new();
    for outer in (0..count).filter(|&i| depth[i] % 2 == 0) {
        let mut holes: Vec<usize> = (0..count)
            .filter(|&h| depth[h] == depth[outer] + 1 && contains(outer, h))
            .collect();
        holes.sort_by(|&a, &b| {
            let mx = |i: usize| loops[i].iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
            mx(b).total_cmp(&mx(a)).then(a.cmp(&b))
        });
        let mut poly = ranges[outer].clone();
        for h in holes {
            bridge_hole(&mut poly, &ranges[h], &pts);
        }
        ear_clip(poly, &pts, &mut triangles);
    }
    Ok(triangles)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn append(&mut self, other: &TriMesh) {
        let offset = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        (b - a).cross(&(c - a)).norm() / 2.0
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Every undirected edge is shared by exactly two triangles, traversed
    /// once in each direction.
    pub fn is_watertight(&self) -> bool {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        !self.triangles.is_empty()
            && directed
                .iter()
                .all(|(&(a, b), &count)| count == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Enclosed volume by the divergence theorem (positive for outward faces).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Area-uniform random surface points.
    pub fn sample_surface(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.triangle_area(t);
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let x = rng.random_range(0.0..total);
                let t = cumulative.partition_point(|&c| c <= x).min(self.triangles.len() - 1);
                let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect()
    }

    pub fn to_obj(&self, name: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "o {name}");
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }
}

/// Closed mesh of `profile` swept along `+z` from `z0` to `z1`, in the
/// profile's own units.
pub fn extrude_profile(profile: &SketchProfile, z0: f64, z1: f64) -> Result<TriMesh> {
    if !(z1 > z0) {
        return Err(Error::InvalidInput(format!("empty extrusion range [{z0}, {z1}]")));
    }
    let caps = triangulate_profile(profile)?;
    let flat: Vec<Vec2> = profile.loops().iter().flatten().copied().collect();
    let nv = flat.len();
    let mut mesh = TriMesh {
        vertices: flat
            .iter()
            .map(|q| Vec3::new(q.x, q.y, z0))
            .chain(flat.iter().map(|q| Vec3::new(q.x, q.y, z1)))
            .collect(),
        triangles: Vec::with_capacity(2 * caps.len() + 2 * nv),
    };
    for t in &caps {
        mesh.triangles.push([t[0], t[2], t[1]]);
        mesh.triangles.push([t[0] + nv, t[1] + nv, t[2] + nv]);
    }
    let mut start = 0;
    for l in profile.loops() {
        for i in 0..l.len() {
            let a = start + i;
            let b = start + (i + 1) % l.len();
            mesh.triangles.push([a, b, b + nv]);
            mesh.triangles.push([a, b + nv, a + nv]);
        }
        start += l.len();
    }
    Ok(mesh)
}

/// World-space mesh of a cylinder; point sketches are first closed by
/// marching squares at `resolution`.
pub fn cylinder_mesh(cyl: &ExtrusionCylinder, resolution: usize) -> Result<TriMesh> {
    if cyl.height() <= 0.0 {
        return Err(Error::InvalidInput("zero-extent cylinder has no volume".into()));
    }
    let profile = cyl.sketch.to_profile(resolution)?;
    let mut mesh = extrude_profile(&profile, cyl.extent.0, cyl.extent.1)?;
    let back = Rotation3::align_to_z(&cyl.axis).transpose();
    for v in &mut mesh.vertices {
        let local = Vec3::new(v.x * cyl.scale, v.y * cyl.scale, v.z);
        *v = cyl.center + back.apply(&local);
    }
    Ok(mesh)
}
