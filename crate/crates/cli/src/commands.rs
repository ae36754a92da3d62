use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cylfit::fitting::{fit_all_hard, fit_cylinder_hard, recover_axis, SoftWeights};
use cylfit::geom::{axis_angle_deg, estimate_normals_pca};
use cylfit::hough::{decompose, HoughParams};
use cylfit::io::{
    cylinders_from_json, cylinders_to_json, labels_from_json, labels_to_json, parse_points, profile_from_json,
    profile_to_json, write_points, CylinderJson,
};
use cylfit::mesh::{cylinder_mesh, TriMesh};
use cylfit::metrics::{aggregate, evaluate, report_table, EvalReport, GroundTruth, Prediction};
use cylfit::postproc::{refine_segmentation, RefineParams};
use cylfit::sketch::Sketch;
use cylfit::synth::{
    dataset_segment_count, generate_model, l_profile_fixture, perturb_normals, ProfileFamily, SynthConfig,
    DEFAULT_POINTS, MAX_SEGMENTS,
};
use cylfit::{ExtrusionCylinder, HardLabels, OrientedPointCloud, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::manifest::{DatasetEntry, DatasetManifest, RunManifest, SCHEMA};
use crate::{Cli, Command, Family, Format};

/// Share of single-segment models when `gen` draws segment counts.
const SINGLE_SEGMENT_SHARE: f64 = 0.3;
const MIN_RESOLUTION: usize = 16;

struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    summary: Value,
    text: String,
}

/// Decorrelates per-item seeds derived from one base seed.
fn split_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Gen { .. } => "gen",
        Command::Fit { .. } => "fit",
        Command::Decompose { .. } => "decompose",
        Command::Eval { .. } => "eval",
        Command::Sketch { .. } => "sketch",
        Command::Recon { .. } => "recon",
        Command::NoiseSweep { .. } => "noise-sweep",
        Command::Replay { .. } => "replay",
    }
}

pub fn dispatch(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    let start = Instant::now();
    let out = &cli.global.out;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let seed = cli.global.seed;
    let outcome = match &cli.command {
        Command::Gen { models, k, points, noise, family } => gen(out, seed, *models, *k, *points, *noise, *family),
        Command::Fit { inputs, labels, estimate_normals, neighbours, allow_degenerate } => {
            fit(out, inputs, labels.as_deref(), *estimate_normals, *neighbours, *allow_degenerate)
        }
        Command::Decompose { inputs, epsilon, bandwidth, tangent_samples, directions, refine } => {
            let params = HoughParams {
                epsilon: *epsilon,
                bandwidth: *bandwidth,
                tangent_samples: *tangent_samples,
                directions: *directions,
                seed,
                ..HoughParams::default()
            };
            decompose_cmd(out, inputs, &params, *refine)
        }
        Command::Eval { pred, gt } => eval(out, pred, gt),
        Command::Sketch { inputs, resolution } => sketch(out, inputs, *resolution),
        Command::Recon { inputs, resolution } => recon(out, inputs, *resolution),
        Command::NoiseSweep { model, sigmas, seeds } => noise_sweep(out, seed, model.as_deref(), sigmas, *seeds),
        Command::Replay { .. } => unreachable!("replay is resolved before dispatch"),
    }?;

    match cli.global.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&outcome.summary)?),
        Format::Text => print!("{}", outcome.text),
    }
    let name = command_name(&cli.command);
    let manifest = RunManifest {
        schema: SCHEMA,
        command: name.into(),
        argv: argv.to_vec(),
        config: json!({
            "command": format!("{:?}", cli.command),
            "jobs": cli.global.jobs,
            "format": format!("{:?}", cli.global.format),
        }),
        seed,
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        version: env!("CARGO_PKG_VERSION").into(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write(&out.join(format!("run_{name}.json")), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

/// Files with the given extension, directories expanded (sorted).
fn expand(inputs: &[PathBuf], ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|q| q.is_file() && q.extension().is_some_and(|x| x == ext))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(CliError::Data(format!("{}: no such file or directory", p.display())));
        }
    }
    if files.is_empty() {
        return Err(CliError::Usage(format!("no .{ext} inputs found")));
    }
    Ok(files)
}

/// Refuses to write an output over one of the inputs.
fn guard_overwrite(inputs: &[PathBuf], output: &Path) -> Result<(), CliError> {
    let Ok(o) = output.canonicalize() else { return Ok(()) };
    if inputs.iter().any(|i| i.canonicalize().is_ok_and(|i| i == o)) {
        return Err(CliError::Usage(format!("output {} would overwrite an input; choose another --out", output.display())));
    }
    Ok(())
}

fn check_resolution(r: usize) -> Result<(), CliError> {
    if r < MIN_RESOLUTION {
        return Err(CliError::Usage(format!("resolution {r} below {MIN_RESOLUTION}")));
    }
    Ok(())
}

fn axis_text(v: &Vec3) -> String {
    format!("({:.4}, {:.4}, {:.4})", v.x, v.y, v.z)
}

fn gen(
    out: &Path,
    seed: u64,
    models: usize,
    k: Option<usize>,
    points: usize,
    noise: f64,
    family: Option<Family>,
) -> Result<Outcome, CliError> {
    if models == 0 {
        return Err(CliError::Usage("--models must be at least 1".into()));
    }
    if let Some(k) = k {
        if !(1..=MAX_SEGMENTS).contains(&k) {
            return Err(CliError::Usage(format!("--k must be in 1..={MAX_SEGMENTS}")));
        }
    }
    if points == 0 || !(noise >= 0.0 && noise.is_finite()) {
        return Err(CliError::Usage("--points must be positive and --noise finite and non-negative".into()));
    }
    let family = family.map(|f| match f {
        Family::Polygon => ProfileFamily::Polygon,
        Family::Star => ProfileFamily::Star,
        Family::Rounded => ProfileFamily::RoundedRect,
    });
    let generated: Vec<_> = (0..models)
        .into_par_iter()
        .map(|i| {
            let model_seed = split_seed(seed, i as u64);
            let segments = k.unwrap_or_else(|| {
                dataset_segment_count(&mut ChaCha8Rng::seed_from_u64(model_seed), MAX_SEGMENTS, SINGLE_SEGMENT_SHARE)
            });
            let cfg = SynthConfig { segments, points, noise, seed: model_seed, family, ..SynthConfig::default() };
            generate_model(&cfg).map(|m| (i, model_seed, segments, m))
        })
        .collect::<Result<_, _>>()?;

    let mut outputs = Vec::new();
    let mut entries = Vec::new();
    for (i, model_seed, segments, m) in &generated {
        let name = format!("model_{i:04}");
        let cloud = out.join(format!("{name}.xyz"));
        let cyl = out.join(format!("{name}.json"));
        write(&cloud, &write_points(&m.cloud))?;
        write(&cyl, &cylinders_to_json(&m.cylinders))?;
        entries.push(DatasetEntry {
            name,
            cloud: cloud.file_name().unwrap().into(),
            cylinders: cyl.file_name().unwrap().into(),
            seed: *model_seed,
            segments: *segments,
        });
        outputs.push(cloud);
        outputs.push(cyl);
    }
    let manifest = DatasetManifest {
        schema: SCHEMA,
        seed,
        points,
        noise,
        family: family.map(|f| format!("{f:?}").to_lowercase()),
        models: entries,
    };
    let manifest_path = out.join("manifest.json");
    write(&manifest_path, &serde_json::to_string_pretty(&manifest)?)?;
    outputs.push(manifest_path);
    let total: usize = manifest.models.iter().map(|e| e.segments).sum();
    let text = format!("generated {models} models ({total} segments) in {}\n", out.display());
    Ok(Outcome { inputs: vec![], outputs, summary: serde_json::to_value(&manifest)?, text })
}

fn load_cloud(path: &Path, estimate: bool, neighbours: usize) -> Result<OrientedPointCloud, CliError> {
    let file = parse_points(&read(path)?).map_err(|e| CliError::from(e).at(path))?;
    if file.normals.is_some() {
        return file.into_cloud().map_err(|e| CliError::from(e).at(path));
    }
    if !estimate {
        return Err(CliError::Usage(format!("{}: no normals; pass --estimate-normals", path.display())));
    }
    let est = estimate_normals_pca(&file.points, neighbours).map_err(|e| CliError::from(e).at(path))?;
    let missing = est.iter().filter(|n| n.is_none()).count();
    if missing > 0 {
        return Err(CliError::Data(format!("{}: no normal could be estimated for {missing} points", path.display())));
    }
    let cloud = OrientedPointCloud::new(file.points, est.into_iter().flatten().collect())?;
    match file.labels {
        Some(l) => Ok(cloud.with_labels(l)?),
        None => Ok(cloud),
    }
}

#[derive(Serialize)]
struct FitSummary {
    name: String,
    fitted: usize,
    skipped: Vec<String>,
    axes: Vec<[f64; 3]>,
}

fn write_sketch_points(path: &Path, sketch: &Sketch) -> Result<(), CliError> {
    let mut s = String::from("# x y nx ny (0 0 where the normal vanished in the plane)\n");
    if let Sketch::Points(p) = sketch {
        for (q, n) in p.points.iter().zip(&p.normals) {
            let n = n.unwrap_or_default();
            let _ = writeln!(s, "{} {} {} {}", q.x, q.y, n.x, n.y);
        }
    }
    write(path, &s)
}

fn fit(
    out: &Path,
    inputs: &[PathBuf],
    labels: Option<&Path>,
    estimate: bool,
    neighbours: usize,
    allow_degenerate: bool,
) -> Result<Outcome, CliError> {
    let files = expand(inputs, "xyz")?;
    if labels.is_some() && files.len() != 1 {
        return Err(CliError::Usage("--labels needs exactly one input cloud".into()));
    }
    let results: Vec<(String, OrientedPointCloud, Vec<(usize, ExtrusionCylinder)>, Vec<String>)> = files
        .par_iter()
        .map(|path| {
            let mut cloud = load_cloud(path, estimate, neighbours)?;
            if let Some(lp) = labels {
                let l = labels_from_json(&read(lp)?).map_err(|e| CliError::from(e).at(lp))?;
                cloud = cloud.with_labels(l).map_err(|e| CliError::from(e).at(lp))?;
            }
            let Some(l) = cloud.labels.clone() else {
                return Err(CliError::Usage(format!("{}: cloud is unlabelled; pass --labels", path.display())));
            };
            let mut fitted = Vec::new();
            let mut skipped = Vec::new();
            for k in 0..l.segment_count() {
                match fit_cylinder_hard(&cloud, &l, k) {
                    Ok(f) => fitted.push((k, f.cylinder)),
                    Err(e) if e.is_degenerate() && allow_degenerate => skipped.push(format!("segment {k}: {e}")),
                    Err(e) => return Err(CliError::from(e).at(path)),
                }
            }
            Ok((stem(path), cloud, fitted, skipped))
        })
        .collect::<Result<_, _>>()?;

    let mut outputs = Vec::new();
    let mut summaries = Vec::new();
    let mut text = String::new();
    for (name, cloud, fitted, skipped) in &results {
        let cyl_path = out.join(format!("{name}.json"));
        let cloud_path = out.join(format!("{name}.xyz"));
        guard_overwrite(&files, &cyl_path)?;
        guard_overwrite(&files, &cloud_path)?;
        let cylinders: Vec<ExtrusionCylinder> = fitted.iter().map(|(_, c)| c.clone()).collect();
        write(&cyl_path, &cylinders_to_json(&cylinders))?;
        write(&cloud_path, &write_points(cloud))?;
        outputs.push(cyl_path);
        outputs.push(cloud_path);
        for (k, c) in fitted {
            let p = out.join(format!("{name}.sketch{k}.txt"));
            write_sketch_points(&p, &c.sketch)?;
            outputs.push(p);
        }
        let _ = writeln!(text, "{name}: {} cylinders", fitted.len());
        for (k, c) in fitted {
            let _ = writeln!(
                text,
                "  segment {k}: axis {} scale {:.4} extent [{:.4}, {:.4}]",
                axis_text(&c.axis),
                c.scale,
                c.extent.0,
                c.extent.1
            );
        }
        for s in skipped {
            eprintln!("warning: {name}: skipped {s}");
            let _ = writeln!(text, "  skipped {s}");
        }
        summaries.push(FitSummary {
            name: name.clone(),
            fitted: fitted.len(),
            skipped: skipped.clone(),
            axes: fitted.iter().map(|(_, c)| c.axis.into()).collect(),
        });
    }
    let mut all_inputs = files.clone();
    all_inputs.extend(labels.map(Path::to_path_buf));
    Ok(Outcome { inputs: all_inputs, outputs, summary: serde_json::to_value(&summaries)?, text })
}

/// Renumbers the segments present to `0..k`, keeping their order.
fn compact(labels: &HardLabels) -> HardLabels {
    let present: BTreeSet<usize> = labels.seg.iter().copied().collect();
    let map: Vec<usize> = {
        let mut m = vec![0; labels.segment_count()];
        for (new, &old) in present.iter().enumerate() {
            m[old] = new;
        }
        m
    };
    HardLabels { seg: labels.seg.iter().map(|&s| map[s]).collect(), bb: labels.bb.clone() }
}

#[derive(Serialize)]
struct DecomposeSummary {
    name: String,
    segments: usize,
    axes: Vec<[f64; 3]>,
    mode_weights: Vec<f64>,
    refined: bool,
    warnings: Vec<String>,
}

fn decompose_cmd(out: &Path, inputs: &[PathBuf], params: &HoughParams, refine: bool) -> Result<Outcome, CliError> {
    let files = expand(inputs, "xyz")?;
    let results: Vec<(String, OrientedPointCloud, HardLabels, Vec<ExtrusionCylinder>, DecomposeSummary)> = files
        .par_iter()
        .map(|path| {
            let mut cloud = load_cloud(path, false, 0)?;
            cloud.labels = None;
            let d = decompose(&cloud, params).map_err(|e| CliError::from(e).at(path))?;
            let mut warnings = d.warnings.clone();
            let (mut labels, mut cylinders, mut refined) = (d.labels.clone(), d.cylinders.clone(), false);
            if refine {
                let r = compact(&refine_segmentation(&cloud, &d.labels, &RefineParams::default())?);
                match fit_all_hard(&cloud, &r).into_iter().collect::<Result<Vec<_>, _>>() {
                    Ok(fits) => {
                        labels = r;
                        cylinders = fits.into_iter().map(|f| f.cylinder).collect();
                        refined = true;
                    }
                    Err(e) => warnings.push(format!("refinement discarded: refit failed ({e})")),
                }
            }
            let summary = DecomposeSummary {
                name: stem(path),
                segments: cylinders.len(),
                axes: cylinders.iter().map(|c| c.axis.into()).collect(),
                mode_weights: d.modes.iter().map(|m| m.1).collect(),
                refined,
                warnings,
            };
            Ok((stem(path), cloud, labels, cylinders, summary))
        })
        .collect::<Result<_, CliError>>()?;

    let mut outputs = Vec::new();
    let mut text = String::new();
    let mut summaries = Vec::new();
    for (name, cloud, labels, cylinders, summary) in results {
        let cloud_path = out.join(format!("{name}.xyz"));
        let cyl_path = out.join(format!("{name}.json"));
        let label_path = out.join(format!("{name}.labels.json"));
        for p in [&cloud_path, &cyl_path, &label_path] {
            guard_overwrite(&files, p)?;
        }
        write(&cloud_path, &write_points(&cloud.clone().with_labels(labels.clone())?))?;
        write(&cyl_path, &cylinders_to_json(&cylinders))?;
        write(&label_path, &labels_to_json(&labels))?;
        outputs.extend([cloud_path, cyl_path, label_path]);
        let _ = writeln!(text, "{name}: {} segments{}", summary.segments, if summary.refined { " (refined)" } else { "" });
        for c in &cylinders {
            let _ = writeln!(text, "  axis {} scale {:.4}", axis_text(&c.axis), c.scale);
        }
        for w in &summary.warnings {
            eprintln!("warning: {name}: {w}");
            let _ = writeln!(text, "  warning: {w}");
        }
        summaries.push(summary);
    }
    Ok(Outcome { inputs: files, outputs, summary: serde_json::to_value(&summaries)?, text })
}

fn model_files(dir: &Path) -> Result<Vec<String>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Data(format!("{}: not a directory", dir.display())));
    }
    Ok(expand(&[dir.to_path_buf()], "xyz")?.iter().map(|p| stem(p)).collect())
}

fn load_model(dir: &Path, name: &str) -> Result<(OrientedPointCloud, Vec<ExtrusionCylinder>), CliError> {
    let cloud_path = dir.join(format!("{name}.xyz"));
    let cloud = load_cloud(&cloud_path, false, 0)?;
    if cloud.labels.is_none() {
        return Err(CliError::Data(format!("{}: model is unlabelled", cloud_path.display())));
    }
    let cyl_path = dir.join(format!("{name}.json"));
    let cylinders = cylinders_from_json(&read(&cyl_path)?).map_err(|e| CliError::from(e).at(&cyl_path))?;
    Ok((cloud, cylinders))
}

#[derive(Serialize)]
struct EvalEntry {
    name: String,
    report: EvalReport,
}

fn eval(out: &Path, pred: &Path, gt: &Path) -> Result<Outcome, CliError> {
    let pred_names = model_files(pred)?;
    let gt_names = model_files(gt)?;
    if pred_names != gt_names {
        return Err(CliError::Data(format!(
            "prediction has {} models and ground truth {}; names must match one to one",
            pred_names.len(),
            gt_names.len()
        )));
    }
    let entries: Vec<EvalEntry> = gt_names
        .par_iter()
        .map(|name| {
            let (pc, pcyl) = load_model(pred, name)?;
            let (gc, gcyl) = load_model(gt, name)?;
            if pc.len() != gc.len() {
                return Err(CliError::Data(format!("{name}: {} predicted points vs {} ground truth", pc.len(), gc.len())));
            }
            let report = evaluate(
                &Prediction { labels: pc.labels.as_ref().unwrap(), normals: &pc.normals, cylinders: &pcyl },
                &GroundTruth { points: &gc.points, normals: &gc.normals, labels: gc.labels.as_ref().unwrap(), cylinders: &gcyl },
            )
            .map_err(|e| CliError::from(e).at(&pred.join(name)))?;
            Ok(EvalEntry { name: name.clone(), report })
        })
        .collect::<Result<_, CliError>>()?;
    let reports: Vec<EvalReport> = entries.iter().map(|e| e.report).collect();
    let mean = aggregate(&reports).expect("at least one model");
    let mut rows: Vec<(String, EvalReport)> = entries.iter().map(|e| (e.name.clone(), e.report)).collect();
    rows.push(("mean".into(), mean));
    let summary = json!({ "schema": SCHEMA, "models": entries, "mean": mean });
    let path = out.join("eval.json");
    write(&path, &serde_json::to_string_pretty(&summary)?)?;
    Ok(Outcome { inputs: vec![pred.into(), gt.into()], outputs: vec![path], summary, text: report_table(&rows) })
}

/// Cylinder files among the inputs. Explicit files must parse; other JSON
/// found in a directory (manifests, labels, reports) is passed over.
fn cylinder_inputs(inputs: &[PathBuf]) -> Result<Vec<(PathBuf, Vec<ExtrusionCylinder>)>, CliError> {
    let mut found = Vec::new();
    for p in inputs {
        if p.is_dir() {
            for f in expand(std::slice::from_ref(p), "json")? {
                let text = read(&f)?;
                if serde_json::from_str::<Vec<CylinderJson>>(&text).is_ok() {
                    found.push((f.clone(), cylinders_from_json(&text).map_err(|e| CliError::from(e).at(&f))?));
                }
            }
        } else {
            let text = read(p)?;
            found.push((p.clone(), cylinders_from_json(&text).map_err(|e| CliError::from(e).at(p))?));
        }
    }
    if found.is_empty() {
        return Err(CliError::Usage("no cylinder files among the inputs".into()));
    }
    Ok(found)
}

fn sketch(out: &Path, inputs: &[PathBuf], resolution: usize) -> Result<Outcome, CliError> {
    check_resolution(resolution)?;
    let files = cylinder_inputs(inputs)?;
    let profiles: Vec<(String, Vec<Result<cylfit::SketchProfile, cylfit::Error>>)> = files
        .par_iter()
        .map(|(path, cyls)| (stem(path), cyls.iter().map(|c| c.sketch.to_profile(resolution)).collect()))
        .collect();
    let mut outputs = Vec::new();
    let mut text = String::new();
    let mut summary = Vec::new();
    for (name, list) in profiles {
        for (k, profile) in list.into_iter().enumerate() {
            let profile = profile.map_err(|e| CliError::from(e).at(Path::new(&name)))?;
            let json_path = out.join(format!("{name}.sketch{k}.json"));
            let svg_path = out.join(format!("{name}.sketch{k}.svg"));
            let encoded = profile_to_json(&profile);
            // Every written profile must load back as the same closed loops.
            if profile_from_json(&encoded)? != profile {
                return Err(CliError::Data(format!("{name} sketch {k}: profile does not survive re-ingestion")));
            }
            write(&json_path, &encoded)?;
            write(&svg_path, &profile.to_svg())?;
            let _ = writeln!(
                text,
                "{name} sketch {k}: {} loops, {} vertices, area {:.4}",
                profile.loops().len(),
                profile.vertex_count(),
                profile.area()
            );
            summary.push(json!({
                "name": name, "segment": k, "loops": profile.loops().len(),
                "vertices": profile.vertex_count(), "area": profile.area(),
            }));
            outputs.extend([json_path, svg_path]);
        }
    }
    Ok(Outcome { inputs: files.into_iter().map(|f| f.0).collect(), outputs, summary: Value::Array(summary), text })
}

fn recon(out: &Path, inputs: &[PathBuf], resolution: usize) -> Result<Outcome, CliError> {
    check_resolution(resolution)?;
    let files = cylinder_inputs(inputs)?;
    let mut outputs = Vec::new();
    let mut text = String::new();
    let mut summary = Vec::new();
    for (path, cyls) in &files {
        let name = stem(path);
        let meshes: Vec<Result<TriMesh, cylfit::Error>> =
            cyls.par_iter().map(|c| cylinder_mesh(c, resolution)).collect();
        let mut scene = TriMesh::default();
        let mut skipped = Vec::new();
        for (k, (mesh, cyl)) in meshes.into_iter().zip(cyls).enumerate() {
            if cyl.height() <= 0.0 {
                eprintln!("warning: {name}: cylinder {k} has zero extent; skipped");
                skipped.push(k);
                continue;
            }
            let mesh = mesh.map_err(|e| CliError::from(e).at(path))?;
            let p = out.join(format!("{name}.cyl{k}.obj"));
            write(&p, &mesh.to_obj(&format!("{name}_cyl{k}")))?;
            outputs.push(p);
            let _ = writeln!(
                text,
                "{name} cylinder {k}: {} triangles, watertight {}",
                mesh.triangles.len(),
                mesh.is_watertight()
            );
            scene.append(&mesh);
        }
        let p = out.join(format!("{name}.obj"));
        write(&p, &scene.to_obj(&name))?;
        outputs.push(p);
        summary.push(json!({
            "name": name, "cylinders": cyls.len(), "skipped": skipped, "triangles": scene.triangles.len(),
        }));
    }
    Ok(Outcome { inputs: files.into_iter().map(|f| f.0).collect(), outputs, summary: Value::Array(summary), text })
}

#[derive(Serialize)]
struct SweepRow {
    sigma: f64,
    mean_deg: f64,
    std_deg: f64,
    max_deg: f64,
    /// Noisy trials where the axis was ambiguous.
    failures: usize,
}

fn noise_sweep(out: &Path, seed: u64, model: Option<&Path>, sigmas: &[f64], seeds: u64) -> Result<Outcome, CliError> {
    if sigmas.is_empty() || sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(CliError::Usage("--sigmas must be finite and non-negative".into()));
    }
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    // Reference axes: the ground-truth file next to the cloud, the fixture's
    // own truth, or failing both the noise-free recovery.
    let (cloud, reference, source) = match model {
        Some(p) => {
            let cloud = load_cloud(p, false, 0)?;
            let gt = p.with_extension("json");
            let labels = cloud.labels.clone().ok_or_else(|| CliError::Usage(format!("{}: cloud is unlabelled", p.display())))?;
            let reference: Vec<Vec3> = if gt.is_file() {
                cylinders_from_json(&read(&gt)?).map_err(|e| CliError::from(e).at(&gt))?.iter().map(|c| c.axis).collect()
            } else {
                (0..labels.segment_count())
                    .map(|k| recover_axis(&cloud.normals, &SoftWeights::from_labels(&labels, k)).map(|a| a.axis))
                    .collect::<Result<_, _>>()?
            };
            let source = if gt.is_file() { "ground truth" } else { "noise-free recovery" };
            (cloud, reference, source)
        }
        None => {
            let m = l_profile_fixture(DEFAULT_POINTS, seed)?;
            (m.cloud, m.cylinders.iter().map(|c| c.axis).collect(), "ground truth")
        }
    };
    let labels = cloud.labels.clone().expect("checked above");
    if reference.len() != labels.segment_count() {
        return Err(CliError::Data(format!(
            "{} reference axes for {} segments",
            reference.len(),
            labels.segment_count()
        )));
    }
    let weights: Vec<SoftWeights> = (0..labels.segment_count()).map(|k| SoftWeights::from_labels(&labels, k)).collect();

    let mut rows = Vec::new();
    for (si, &sigma) in sigmas.iter().enumerate() {
        let trials: Vec<Vec<Option<f64>>> = (0..seeds)
            .into_par_iter()
            .map(|s| {
                let noisy = perturb_normals(&cloud, sigma, split_seed(seed, (si as u64) << 32 | s))?;
                Ok(weights
                    .iter()
                    .zip(&reference)
                    .map(|(w, r)| recover_axis(&noisy.normals, w).ok().map(|a| axis_angle_deg(&a.axis, r)))
                    .collect())
            })
            .collect::<Result<_, cylfit::Error>>()?;
        let errs: Vec<f64> = trials.iter().flatten().flatten().copied().collect();
        let failures = trials.iter().flatten().filter(|e| e.is_none()).count();
        let n = errs.len().max(1) as f64;
        let mean = errs.iter().sum::<f64>() / n;
        let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
        let max = errs.iter().copied().fold(0.0, f64::max);
        rows.push(SweepRow { sigma, mean_deg: mean, std_deg: std, max_deg: max, failures });
    }
    let mut csv = String::from("sigma,mean_deg,std_deg,max_deg,failures\n");
    let mut text = format!("axis error vs normal noise ({seeds} seeds, reference: {source})\n");
    let _ = writeln!(text, "{:>8} {:>10} {:>10} {:>10} {:>8}", "sigma", "mean", "std", "max", "failed");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{}", r.sigma, r.mean_deg, r.std_deg, r.max_deg, r.failures);
        let _ = writeln!(text, "{:>8} {:>10.4} {:>10.4} {:>10.4} {:>8}", r.sigma, r.mean_deg, r.std_deg, r.max_deg, r.failures);
    }
    let path = out.join("noise_sweep.csv");
    write(&path, &csv)?;
    Ok(Outcome {
        inputs: model.map(Path::to_path_buf).into_iter().collect(),
        outputs: vec![path],
        summary: json!({ "schema": SCHEMA, "seeds": seeds, "reference": source, "rows": rows }),
        text,
    })
}
