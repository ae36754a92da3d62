//! Seeded synthetic sketch-extrude models with exact ground truth.
//!
//! Each model is a set of disjoint extruded solids. Points are sampled
//! uniformly by area over walls (barrel) and caps (base), the cloud is
//! normalized to the unit sphere, and ground-truth cylinders are derived
//! from the clean labelled points exactly as a fitter would define them:
//! the generator's axis, the barrel mean as center, the farthest projected
//! barrel point as scale and the symmetric axial range as extent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::fitting::ExtrusionCylinder;
use crate::geom::{canonical_axis, project_to_sketch_plane, OrientedPointCloud, Rotation3};
use crate::labels::{HardLabels, BARREL, BASE};
use crate::mesh::triangulate_profile;
use crate::sketch::{Sketch, SketchProfile};
use crate::{Error, Result, Vec2, Vec3};

pub const MAX_SEGMENTS: usize = 8;
pub const DEFAULT_POINTS: usize = 8192;
/// Shortest admissible extrusion, in normalized units.
pub const MIN_EXTENT: f64 = 0.015;
/// Smallest admissible share of the cloud per segment.
pub const MIN_SEGMENT_SHARE: f64 = 0.02;
pub const MIN_SEGMENT_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileFamily {
    Polygon,
    Star,
    RoundedRect,
}

impl ProfileFamily {
    pub const ALL: [ProfileFamily; 3] = [ProfileFamily::Polygon, ProfileFamily::Star, ProfileFamily::RoundedRect];
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Number of solids, 1..=8.
    pub segments: usize,
    pub points: usize,
    /// Half-width of the uniform displacement along normals.
    pub noise: f64,
    pub seed: u64,
    /// `None` draws a family per solid.
    pub family: Option<ProfileFamily>,
    pub min_extent: f64,
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            segments: 1,
            points: DEFAULT_POINTS,
            noise: 0.0,
            seed: 0,
            family: None,
            min_extent: MIN_EXTENT,
            max_attempts: 100,
        }
    }
}

/// One solid: `profile` in a local frame whose `+z` maps to `axis`,
/// extruded over `[-half_height, half_height]` about `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolidSpec {
    pub profile: SketchProfile,
    pub axis: Vec3,
    pub origin: Vec3,
    pub half_height: f64,
}

impl SolidSpec {
    fn to_world(&self) -> Rotation3 {
        Rotation3::align_to_z(&self.axis).transpose()
    }

    fn bounding_radius(&self) -> f64 {
        let r = self.profile.loops().iter().flatten().map(|v| v.norm()).fold(0.0, f64::max);
        (r * r + self.half_height * self.half_height).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthModel {
    /// Labelled, normalized cloud.
    pub cloud: OrientedPointCloud,
    pub labels: HardLabels,
    pub cylinders: Vec<ExtrusionCylinder>,
    /// The solids in normalized coordinates.
    pub solids: Vec<SolidSpec>,
}

fn rotate2(v: &Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

fn circle_loop(radius: f64, n: usize) -> Vec<Vec2> {
    (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            Vec2::new(radius * t.cos(), radius * t.sin())
        })
        .collect()
}

/// Regular `n`-gon of circumradius `radius`.
pub fn regular_polygon(n: usize, radius: f64) -> Result<SketchProfile> {
    SketchProfile::new(vec![circle_loop(radius, n)])
}

/// Axis-aligned rectangle centered at the origin.
pub fn rectangle(half_w: f64, half_h: f64) -> Result<SketchProfile> {
    SketchProfile::new(vec![vec![
        Vec2::new(-half_w, -half_h),
        Vec2::new(half_w, -half_h),
        Vec2::new(half_w, half_h),
        Vec2::new(-half_w, half_h),
    ]])
}

/// L-shaped profile with unit legs and thickness 0.4, centered on its bounding box.
pub fn l_profile() -> SketchProfile {
    let l = [(0.0, 0.0), (1.0, 0.0), (1.0, 0.4), (0.4, 0.4), (0.4, 1.0), (0.0, 1.0)]
        .iter()
        .map(|&(x, y)| Vec2::new(x - 0.5, y - 0.5))
        .collect();
    SketchProfile::new(vec![l]).expect("L profile is valid")
}

/// Random simple profile of outer radius at most `radius`. Radial
/// perturbations of convex shapes stay star-shaped about the origin, so
/// the loop cannot self-intersect; an optional central hole is kept
/// inside the inradius.
pub fn random_profile(family: ProfileFamily, radius: f64, rng: &mut impl Rng) -> Result<SketchProfile> {
    let tau = std::f64::consts::TAU;
    let (outer, inradius) = match family {
        ProfileFamily::Polygon => {
            let n = rng.random_range(3..=8);
            let step = tau / n as f64;
            let mut loop_ = Vec::with_capacity(n);
            let mut rmin = radius;
            for i in 0..n {
                let t = step * (i as f64 + rng.random_range(-0.2..0.2));
                let r = radius * rng.random_range(0.8..1.0);
                rmin = rmin.min(r);
                loop_.push(Vec2::new(r * t.cos(), r * t.sin()));
            }
            // Largest angular gap is 1.4 steps.
            (loop_, rmin * (0.7 * step).cos().max(0.0))
        }
        ProfileFamily::Star => {
            let m = rng.random_range(4..=7);
            let inner = radius * rng.random_range(0.45..0.7);
            let step = tau / (2 * m) as f64;
            let loop_ = (0..2 * m)
                .map(|i| {
                    let r = if i % 2 == 0 { radius * rng.random_range(0.9..1.0) } else { inner };
                    let t = step * i as f64;
                    Vec2::new(r * t.cos(), r * t.sin())
                })
                .collect();
            (loop_, inner * step.cos())
        }
        ProfileFamily::RoundedRect => {
            let aspect = rng.random_range(0.4..1.0);
            let (a, b) = (radius * std::f64::consts::FRAC_1_SQRT_2, radius * std::f64::consts::FRAC_1_SQRT_2 * aspect);
            let rho = b * rng.random_range(0.1..0.6);
            let arc = 6;
            let mut loop_ = Vec::new();
            for (q, (cx, cy)) in [(a - rho, b - rho), (-(a - rho), b - rho), (-(a - rho), -(b - rho)), (a - rho, -(b - rho))]
                .into_iter()
                .enumerate()
            {
                for k in 0..=arc {
                    let t = tau / 4.0 * (q as f64 + k as f64 / arc as f64);
                    loop_.push(Vec2::new(cx + rho * t.cos(), cy + rho * t.sin()));
                }
            }
            (loop_, b)
        }
    };
    let angle = rng.random_range(0.0..tau);
    let mut loops = vec![outer.iter().map(|v| rotate2(v, angle)).collect::<Vec<_>>()];
    if family != ProfileFamily::Star && rng.random_bool(0.2) {
        let r = inradius * rng.random_range(0.25..0.5);
        loops.push(circle_loop(r, 24).iter().rev().copied().collect());
    }
    SketchProfile::new(loops)
}

fn random_axis(rng: &mut impl Rng) -> Vec3 {
    if rng.random_bool(0.5) {
        // Modelling axes are usually aligned with the part frame.
        [Vec3::x(), Vec3::y(), Vec3::z()][rng.random_range(0..3)]
    } else {
        loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return v / n;
            }
        }
    }
}

/// Segment count for a dataset entry: one with probability `single_frac`,
/// otherwise uniform over `2..=max`.
pub fn dataset_segment_count(rng: &mut impl Rng, max: usize, single_frac: f64) -> usize {
    let max = max.clamp(1, MAX_SEGMENTS);
    if max == 1 || rng.random_bool(single_frac.clamp(0.0, 1.0)) {
        1
    } else {
        rng.random_range(2..=max)
    }
}

fn random_solids(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<Vec<SolidSpec>> {
    let mut solids: Vec<SolidSpec> = Vec::with_capacity(cfg.segments);
    for _ in 0..cfg.segments {
        let family = cfg.family.unwrap_or_else(|| ProfileFamily::ALL[rng.random_range(0..3)]);
        let profile = random_profile(family, rng.random_range(0.4..1.0), rng)?;
        solids.push(SolidSpec {
            profile,
            axis: random_axis(rng),
            origin: Vec3::zeros(),
            half_height: rng.random_range(0.15..0.8),
        });
    }
    // Disjoint placement: bounding spheres may not meet.
    let radii: Vec<f64> = solids.iter().map(SolidSpec::bounding_radius).collect();
    let box_half = radii.iter().sum::<f64>().max(1e-3);
    for k in 0..solids.len() {
        let mut placed = false;
        for _ in 0..500 {
            let c = Vec3::new(
                rng.random_range(-box_half..box_half),
                rng.random_range(-box_half..box_half),
                rng.random_range(-box_half..box_half),
            );
            if (0..k).all(|j| (c - solids[j].origin).norm() > 1.05 * (radii[k] + radii[j])) {
                solids[k].origin = c;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidInput("could not place solids disjointly".into()));
        }
    }
    Ok(solids)
}

enum Face {
    Wall { solid: usize, a: Vec2, b: Vec2 },
    Cap { solid: usize, tri: [Vec2; 3], top: bool },
}

/// Samples `points` oriented points from `solids` (area-uniform), normalizes
/// to the unit sphere and derives the ground truth.
pub fn build_model(solids: &[SolidSpec], points: usize, rng: &mut impl Rng) -> Result<SynthModel> {
    if solids.is_empty() || points == 0 {
        return Err(Error::InvalidInput("a model needs at least one solid and one point".into()));
    }
    let mut faces = Vec::new();
    let mut cumulative = Vec::new();
    let mut total = 0.0;
    let mut push = |face: Face, area: f64, faces: &mut Vec<Face>| {
        if area > 0.0 {
            total += area;
            cumulative.push(total);
            faces.push(face);
        }
    };
    for (k, s) in solids.iter().enumerate() {
        let height = 2.0 * s.half_height;
        for l in s.profile.loops() {
            for i in 0..l.len() {
                let (a, b) = (l[i], l[(i + 1) % l.len()]);
                push(Face::Wall { solid: k, a, b }, (b - a).norm() * height, &mut faces);
            }
        }
        let flat: Vec<Vec2> = s.profile.loops().iter().flatten().copied().collect();
        for t in triangulate_profile(&s.profile)? {
            let tri = t.map(|i| flat[i]);
            let area = (tri[1] - tri[0]).perp(&(tri[2] - tri[0])) / 2.0;
            push(Face::Cap { solid: k, tri, top: true }, area, &mut faces);
            push(Face::Cap { solid: k, tri, top: false }, area, &mut faces);
        }
    }
    let frames: Vec<Rotation3> = solids.iter().map(SolidSpec::to_world).collect();

    let mut pts = Vec::with_capacity(points);
    let mut nrm = Vec::with_capacity(points);
    let mut seg = Vec::with_capacity(points);
    let mut bb = Vec::with_capacity(points);
    for _ in 0..points {
        let x = rng.random_range(0.0..total);
        let f = cumulative.partition_point(|&c| c <= x).min(faces.len() - 1);
        let (k, local, normal, class) = match &faces[f] {
            Face::Wall { solid, a, b } => {
                let t: f64 = rng.random();
                let h = solids[*solid].half_height;
                let z = rng.random_range(-h..=h);
                let q = a + (b - a) * t;
                let d = (b - a).normalize();
                (*solid, Vec3::new(q.x, q.y, z), Vec3::new(d.y, -d.x, 0.0), BARREL)
            }
            Face::Cap { solid, tri, top } => {
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                let q = tri[0] + (tri[1] - tri[0]) * u + (tri[2] - tri[0]) * v;
                let h = solids[*solid].half_height;
                let (z, n) = if *top { (h, Vec3::z()) } else { (-h, -Vec3::z()) };
                (*solid, Vec3::new(q.x, q.y, z), n, BASE)
            }
        };
        pts.push(solids[k].origin + frames[k].apply(&local));
        nrm.push(frames[k].apply(&normal));
        seg.push(k);
        bb.push(class);
    }
    let labels = HardLabels::new(seg, bb)?;
    let mut cloud = OrientedPointCloud::new(pts, nrm)?;
    let (mid, factor) = cloud.normalize_to_unit_sphere();
    let solids: Vec<SolidSpec> = solids
        .iter()
        .map(|s| SolidSpec {
            profile: s.profile.map(|v| v * factor).expect("scaling keeps a profile valid"),
            axis: s.axis,
            origin: (s.origin - mid) * factor,
            half_height: s.half_height * factor,
        })
        .collect();
    let cloud = cloud.with_labels(labels.clone())?;
    let cylinders = ground_truth(&cloud, &labels, &solids)?;
    Ok(SynthModel { cloud, labels, cylinders, solids })
}

fn ground_truth(cloud: &OrientedPointCloud, labels: &HardLabels, solids: &[SolidSpec]) -> Result<Vec<ExtrusionCylinder>> {
    solids
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let barrel: Vec<Vec3> = labels.barrel_indices(k).iter().map(|&i| cloud.points[i]).collect();
            if barrel.is_empty() {
                return Err(Error::EmptySegment { segment: k });
            }
            let axis = canonical_axis(&s.axis);
            let center = barrel.iter().sum::<Vec3>() / barrel.len() as f64;
            let scale = barrel
                .iter()
                .map(|p| project_to_sketch_plane(p, &axis, &center).norm())
                .fold(0.0, f64::max);
            let r = barrel.iter().map(|p| axis.dot(&(p - center)).abs()).fold(0.0, f64::max);
            let frame = s.to_world();
            let sketch = s.profile.map(|v| {
                let world = s.origin + frame.apply(&Vec3::new(v.x, v.y, 0.0));
                project_to_sketch_plane(&world, &axis, &center) / scale
            })?;
            Ok(ExtrusionCylinder { axis, center, sketch: Sketch::Profile(sketch), scale, extent: (-r, r) })
        })
        .collect()
}

fn discard_reason(model: &SynthModel, min_extent: f64) -> Option<String> {
    let n = model.labels.len();
    for (k, s) in model.solids.iter().enumerate() {
        if 2.0 * s.half_height < min_extent {
            return Some(format!("segment {k} extent {} below {min_extent}", 2.0 * s.half_height));
        }
        let count = model.labels.seg.iter().filter(|&&x| x == k).count();
        if count < MIN_SEGMENT_POINTS || (count as f64) < MIN_SEGMENT_SHARE * n as f64 {
            return Some(format!("segment {k} has only {count} of {n} points"));
        }
    }
    None
}

/// Draws a random model, resampling (up to `max_attempts` times) whenever a
/// segment is too short or too sparsely sampled.
pub fn generate_model(cfg: &SynthConfig) -> Result<SynthModel> {
    if !(1..=MAX_SEGMENTS).contains(&cfg.segments) {
        return Err(Error::InvalidInput(format!("segment count {} outside 1..={MAX_SEGMENTS}", cfg.segments)));
    }
    if cfg.points == 0 || !(cfg.noise >= 0.0) {
        return Err(Error::InvalidInput("points must be positive and noise non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reason = String::new();
    for _ in 0..cfg.max_attempts.max(1) {
        let solids = match random_solids(cfg, &mut rng) {
            Ok(s) => s,
            Err(e) => {
                reason = e.to_string();
                continue;
            }
        };
        let model = match build_model(&solids, cfg.points, &mut rng) {
            Ok(m) => m,
            Err(e) => {
                reason = e.to_string();
                continue;
            }
        };
        if let Some(r) = discard_reason(&model, cfg.min_extent) {
            reason = r;
            continue;
        }
        let noise_seed: u64 = rng.random();
        return Ok(if cfg.noise > 0.0 { with_surface_noise(model, cfg.noise, noise_seed)? } else { model });
    }
    Err(Error::GenerationFailed { attempts: cfg.max_attempts.max(1), reason })
}

/// Applies [`perturb_noise`] and, if points left the unit ball, shrinks the
/// whole model (ground truth included) back into it.
fn with_surface_noise(mut model: SynthModel, sigma: f64, seed: u64) -> Result<SynthModel> {
    let labels = model.cloud.labels.take();
    let mut cloud = perturb_noise(&model.cloud, sigma, seed)?;
    let r = cloud.max_radius();
    if r > 1.0 {
        let f = 1.0 / r;
        for p in &mut cloud.points {
            *p *= f;
        }
        for c in &mut model.cylinders {
            c.center *= f;
            c.scale *= f;
            c.extent = (c.extent.0 * f, c.extent.1 * f);
        }
        for s in &mut model.solids {
            s.origin *= f;
            s.half_height *= f;
            s.profile = s.profile.map(|v| v * f)?;
        }
    }
    cloud.labels = labels;
    model.cloud = cloud;
    Ok(model)
}

/// Moves every point along its normal by `u ~ Uniform[-sigma, sigma]`.
pub fn perturb_noise(cloud: &OrientedPointCloud, sigma: f64, seed: u64) -> Result<OrientedPointCloud> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidInput(format!("noise amplitude {sigma} is negative")));
    }
    let mut out = cloud.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (p, n) in out.points.iter_mut().zip(&cloud.normals) {
        *p += n * rng.random_range(-sigma..=sigma);
    }
    Ok(out)
}

/// Replaces each normal by `normalize(n + g)`, `g` isotropic Gaussian with
/// per-component deviation `sigma`.
pub fn perturb_normals(cloud: &OrientedPointCloud, sigma: f64, seed: u64) -> Result<OrientedPointCloud> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidInput(format!("normal noise {sigma} is negative")));
    }
    let mut out = cloud.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    for n in &mut out.normals {
        loop {
            let m = *n + Vec3::new(gauss.sample(&mut rng), gauss.sample(&mut rng), gauss.sample(&mut rng));
            let len = m.norm();
            if len > 1e-12 {
                *n = m / len;
                break;
            }
        }
    }
    Ok(out)
}

/// A single L-profile extrusion with a tilted axis.
pub fn l_profile_fixture(points: usize, seed: u64) -> Result<SynthModel> {
    let solid = SolidSpec {
        profile: l_profile(),
        axis: Vec3::new(0.3, -0.5, 0.8).normalize(),
        origin: Vec3::zeros(),
        half_height: 0.6,
    };
    build_model(&[solid], points, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Two disjoint round rods sharing one axis line.
pub fn coaxial_fixture(points: usize, seed: u64) -> Result<SynthModel> {
    let axis = Vec3::new(1.0, 2.0, 0.5).normalize();
    let solids = [(0.4, -1.2), (0.3, 1.2)].map(|(r, offset)| SolidSpec {
        profile: regular_polygon(48, r).expect("polygon is valid"),
        axis,
        origin: axis * offset,
        half_height: 1.0,
    });
    build_model(&solids, points, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// A single extrusion of the given profile along `axis`.
pub fn single_fixture(profile: SketchProfile, axis: Vec3, half_height: f64, points: usize, seed: u64) -> Result<SynthModel> {
    let solid = SolidSpec { profile, axis: axis.normalize(), origin: Vec3::zeros(), half_height };
    build_model(&[solid], points, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::fit_cylinder_hard;
    use crate::geom::axis_angle_deg;

    #[test]
    fn square_model_satisfies_orthogonality_exactly() {
        let m = single_fixture(rectangle(0.5, 0.5).unwrap(), Vec3::new(0.2, 0.7, -0.1), 0.5, 4000, 1).unwrap();
        let e = m.cylinders[0].axis;
        for (n, &b) in m.cloud.normals.iter().zip(&m.labels.bb) {
            if b == BARREL {
                assert!(n.dot(&e).abs() < 1e-9);
            } else {
                assert!(n.dot(&e).abs() > 1.0 - 1e-9);
            }
        }
        assert!(m.cloud.max_radius() <= 1.0 + 1e-6);
    }

    #[test]
    fn ground_truth_is_self_consistent() {
        for seed in 0..30 {
            let cfg = SynthConfig { segments: 1 + (seed as usize % 8), points: 3000, seed, ..Default::default() };
            let m = generate_model(&cfg).unwrap();
            for (k, gt) in m.cylinders.iter().enumerate() {
                let fit = fit_cylinder_hard(&m.cloud, &m.labels, k).unwrap().cylinder;
                assert!(axis_angle_deg(&fit.axis, &gt.axis) < 0.01);
                assert!((fit.center - gt.center).norm() < 1e-6);
                assert!((fit.scale - gt.scale).abs() < 1e-6);
                assert!((fit.extent.1 - gt.extent.1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig { segments: 3, points: 2000, seed: 7, noise: 0.01, ..Default::default() };
        assert_eq!(generate_model(&cfg).unwrap(), generate_model(&cfg).unwrap());
        let other = SynthConfig { seed: 8, ..cfg.clone() };
        assert_ne!(generate_model(&cfg).unwrap().cloud.points, generate_model(&other).unwrap().cloud.points);
    }

    #[test]
    fn noise_changes_only_coordinates() {
        let clean = SynthConfig { segments: 3, points: 2000, seed: 11, ..Default::default() };
        let noisy = SynthConfig { noise: 0.01, ..clean.clone() };
        let (a, b) = (generate_model(&clean).unwrap(), generate_model(&noisy).unwrap());
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.cloud.normals, b.cloud.normals);
        assert_ne!(a.cloud.points, b.cloud.points);
        assert!(b.cloud.max_radius() <= 1.0 + 1e-9);
    }

    #[test]
    fn discard_rules_hold() {
        for seed in 0..40 {
            let cfg = SynthConfig { segments: 8, points: 4096, seed, ..Default::default() };
            let m = generate_model(&cfg).unwrap();
            assert_eq!(m.labels.segment_count(), 8);
            assert!(discard_reason(&m, MIN_EXTENT).is_none());
            for c in &m.cylinders {
                assert!(c.height() >= MIN_EXTENT);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_model(&SynthConfig { segments: 0, ..Default::default() }).is_err());
        assert!(generate_model(&SynthConfig { segments: 9, ..Default::default() }).is_err());
        assert!(generate_model(&SynthConfig { points: 0, ..Default::default() }).is_err());
        let tiny = SynthConfig { points: 30, max_attempts: 3, ..Default::default() };
        assert!(matches!(generate_model(&tiny), Err(Error::GenerationFailed { attempts: 3, .. })));
    }

    #[test]
    fn area_uniform_class_counts() {
        // Barrel/base split of a box follows the area ratio within 3 sigma.
        let n = 20000;
        let m = single_fixture(rectangle(0.5, 0.25).unwrap(), Vec3::z(), 0.4, n, 3).unwrap();
        let barrel_area = 3.0 * 0.8;
        let base_area = 2.0 * 0.5;
        let p = barrel_area / (barrel_area + base_area);
        let count = m.labels.bb.iter().filter(|&&b| b == BARREL).count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((count - n as f64 * p).abs() < 3.0 * sigma);
    }

    #[test]
    fn random_profiles_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for family in ProfileFamily::ALL {
            for _ in 0..200 {
                let p = random_profile(family, 0.8, &mut rng).unwrap();
                assert!(p.area() > 0.0);
                assert!(p.loops().iter().flatten().all(|v| v.norm() <= 0.8 + 1e-12));
            }
        }
    }

    #[test]
    fn surface_noise_is_bounded_and_uniform() {
        let m = single_fixture(regular_polygon(16, 0.5).unwrap(), Vec3::z(), 0.5, 100_000, 9).unwrap();
        assert_eq!(perturb_noise(&m.cloud, 0.0, 1).unwrap(), m.cloud);
        let sigma = 0.02;
        let noisy = perturb_noise(&m.cloud, sigma, 1).unwrap();
        let u: Vec<f64> = noisy
            .points
            .iter()
            .zip(&m.cloud.points)
            .zip(&m.cloud.normals)
            .map(|((a, b), n)| (a - b).dot(n))
            .collect();
        assert!(u.iter().all(|x| x.abs() <= sigma + 1e-15));
        // Ten equal bins, chi-square against uniform (9 dof, 0.999 quantile 27.9).
        let mut bins = [0usize; 10];
        for x in &u {
            bins[(((x + sigma) / (2.0 * sigma)) * 10.0).floor().clamp(0.0, 9.0) as usize] += 1;
        }
        let expect = u.len() as f64 / 10.0;
        let chi2: f64 = bins.iter().map(|&b| (b as f64 - expect).powi(2) / expect).sum();
        assert!(chi2 < 27.9, "chi2 {chi2}");
        assert_eq!(noisy.normals, m.cloud.normals);
    }

    #[test]
    fn normal_noise_grows_with_sigma() {
        let m = l_profile_fixture(4000, 2).unwrap();
        assert_eq!(perturb_normals(&m.cloud, 0.0, 3).unwrap(), m.cloud);
        let mut last = 0.0;
        for sigma in [0.02, 0.05, 0.1, 0.2, 0.4] {
            let p = perturb_normals(&m.cloud, sigma, 3).unwrap();
            assert!(p.normals.iter().all(|n| (n.norm() - 1.0).abs() < 1e-12));
            let dev = p
                .normals
                .iter()
                .zip(&m.cloud.normals)
                .map(|(a, b)| axis_angle_deg(a, b))
                .sum::<f64>()
                / p.len() as f64;
            assert!(dev > last);
            last = dev;
        }
    }

    #[test]
    fn fixtures_build() {
        let l = l_profile_fixture(2000, 1).unwrap();
        assert_eq!(l.cylinders.len(), 1);
        let c = coaxial_fixture(2000, 1).unwrap();
        assert_eq!(c.cylinders.len(), 2);
        assert!(axis_angle_deg(&c.cylinders[0].axis, &c.cylinders[1].axis) < 1e-12);
    }
}
