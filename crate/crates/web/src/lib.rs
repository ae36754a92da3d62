//! Browser bindings for the demo page. Every entry point returns a JSON
//! string so the page needs no generated glue types.

use cylfit::fitting::{recover_axis, SoftWeights};
use cylfit::geom::axis_angle_deg;
use cylfit::hough::{accumulate, decompose, HoughParams};
use cylfit::metrics::seg_iou_labels;
use cylfit::sketch::{marching_squares, rasterize_field, PointSketchField, SketchPoints, SketchProfile};
use cylfit::synth::{generate_model, l_profile_fixture, perturb_normals, SynthConfig};
use cylfit::{Error, Vec2, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn to_js(r: Result<Value, Error>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

fn xyz(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Signed field of a clicked polygon and the loops marching squares finds
/// in it. `coords` is `x0, y0, x1, y1, ...` in `[-1.2, 1.2]`.
#[wasm_bindgen]
pub fn sketch_field(coords: Vec<f64>, resolution: usize, from_samples: bool, seed: u64) -> Result<String, JsError> {
    to_js(sketch_field_json(&coords, resolution, from_samples, seed))
}

/// With `from_samples`, the field is rebuilt from boundary samples whose
/// normals have random signs, as a fitted segment would provide them.
pub fn sketch_field_json(coords: &[f64], resolution: usize, from_samples: bool, seed: u64) -> Result<Value, Error> {
    if coords.len() % 2 != 0 {
        return Err(Error::InvalidInput("odd number of coordinates".into()));
    }
    let polygon: Vec<Vec2> = coords.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect();
    let profile = SketchProfile::new(vec![polygon])?;
    let field = if from_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sp = SketchPoints { points: Vec::new(), normals: Vec::new() };
        for l in profile.loops() {
            for i in 0..l.len() {
                let (a, b) = (l[i], l[(i + 1) % l.len()]);
                let n = Vec2::new(b.y - a.y, a.x - b.x).normalize();
                let steps = ((b - a).norm() / 0.01).ceil() as usize;
                for s in 0..steps {
                    sp.points.push(a + (b - a) * ((s as f64 + rng.random::<f64>()) / steps as f64));
                    sp.normals.push(Some(if rng.random_bool(0.5) { n } else { -n }));
                }
            }
        }
        rasterize_field(&PointSketchField::new(&sp)?, resolution)?
    } else {
        rasterize_field(&profile, resolution)?
    };
    let extracted = marching_squares(&field)?;
    let loops: Vec<Vec<[f64; 2]>> = extracted.loops().iter().map(|l| l.iter().map(|p| [p.x, p.y]).collect()).collect();
    Ok(json!({
        "resolution": resolution,
        "values": field.values(),
        "loops": loops,
        "area": profile.area(),
        "extracted_area": extracted.area(),
    }))
}

/// Hough accumulator and decomposition of a random synthetic model.
#[wasm_bindgen]
pub fn hough_demo(segments: usize, points: usize, seed: u64) -> Result<String, JsError> {
    to_js(hough_json(segments, points, seed))
}

pub fn hough_json(segments: usize, points: usize, seed: u64) -> Result<Value, Error> {
    let model = generate_model(&SynthConfig { segments, points, seed, ..SynthConfig::default() })?;
    let params = HoughParams { seed, ..HoughParams::default() };
    let mut cloud = model.cloud.clone();
    cloud.labels = None;
    let acc = accumulate(&cloud, &params)?;
    let d = decompose(&cloud, &params)?;
    let truth: Vec<[f64; 3]> = model.cylinders.iter().map(|c| xyz(&c.axis)).collect();
    // Each detected axis against its closest ground-truth axis.
    let errors: Vec<f64> = d
        .cylinders
        .iter()
        .map(|c| model.cylinders.iter().map(|g| axis_angle_deg(&c.axis, &g.axis)).fold(f64::INFINITY, f64::min))
        .collect();
    Ok(json!({
        "directions": acc.directions().iter().map(xyz).collect::<Vec<_>>(),
        "scores": acc.scores(),
        "modes": d.modes.iter().map(|(v, w)| json!({"axis": xyz(v), "weight": w})).collect::<Vec<_>>(),
        "truth": truth,
        "axis_errors_deg": errors,
        "seg_iou": seg_iou_labels(&d.labels, &model.labels)?,
        "warnings": d.warnings,
    }))
}

/// Mean and worst axis error of closed-form recovery on the L-profile
/// fixture as Gaussian noise is added to the normals.
#[wasm_bindgen]
pub fn noise_curve(sigmas: Vec<f64>, seeds: u64, points: usize) -> Result<String, JsError> {
    to_js(noise_curve_json(&sigmas, seeds, points))
}

pub fn noise_curve_json(sigmas: &[f64], seeds: u64, points: usize) -> Result<Value, Error> {
    let m = l_profile_fixture(points, 0)?;
    let w = SoftWeights::from_labels(&m.labels, 0);
    let truth = m.cylinders[0].axis;
    let mut rows = Vec::new();
    for (i, &sigma) in sigmas.iter().enumerate() {
        let mut errs = Vec::new();
        for s in 0..seeds {
            let noisy = perturb_normals(&m.cloud, sigma, (i as u64) << 32 | s)?;
            if let Ok(a) = recover_axis(&noisy.normals, &w) {
                errs.push(axis_angle_deg(&a.axis, &truth));
            }
        }
        let mean = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
        let max = errs.iter().copied().fold(0.0, f64::max);
        rows.push(json!({"sigma": sigma, "mean_deg": mean, "max_deg": max, "trials": errs.len()}));
    }
    Ok(Value::Array(rows))
}
