use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cylfit::geom::axis_angle_deg;
use cylfit::io::{cylinders_from_json, cylinders_to_json, labels_to_json, parse_points, write_points};
use cylfit::synth::{coaxial_fixture, l_profile_fixture};
use cylfit::{HardLabels, OrientedPointCloud};
use serde_json::Value;
use tempfile::TempDir;

fn cylfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cylfit")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = cylfit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_with(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    v.sort();
    v
}

fn read_cloud(path: &Path) -> OrientedPointCloud {
    parse_points(&fs::read_to_string(path).unwrap()).unwrap().into_cloud().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen", "--out", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn gen_writes_requested_models_and_reruns_identically() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        gen(d, &["--models", "10", "--k", "3", "--seed", "7", "--points", "1024"]);
    }
    let clouds = files_with(&a, "xyz");
    assert_eq!(clouds.len(), 10);
    for c in &clouds {
        assert!(c.with_extension("json").is_file());
        let name = c.file_name().unwrap();
        assert_eq!(fs::read(c).unwrap(), fs::read(b.join(name)).unwrap());
        let gt = c.with_extension("json");
        assert_eq!(fs::read(&gt).unwrap(), fs::read(b.join(gt.file_name().unwrap())).unwrap());
        assert_eq!(read_cloud(c).labels.unwrap().segment_count(), 3);
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema"], 1);
    assert_eq!(manifest["models"].as_array().unwrap().len(), 10);
}

#[test]
fn gen_noise_moves_only_coordinates() {
    let t = TempDir::new().unwrap();
    let (clean, noisy) = (t.path().join("clean"), t.path().join("noisy"));
    gen(&clean, &["--models", "2", "--k", "2", "--seed", "3", "--points", "2048"]);
    gen(&noisy, &["--models", "2", "--k", "2", "--seed", "3", "--points", "2048", "--noise", "0.01"]);
    for c in files_with(&clean, "xyz") {
        let a = read_cloud(&c);
        let b = read_cloud(&noisy.join(c.file_name().unwrap()));
        assert_eq!(a.len(), b.len());
        assert_eq!(a.normals, b.normals);
        assert_eq!(a.labels, b.labels);
        let mut moved = 0;
        for (p, q) in a.points.iter().zip(&b.points) {
            let d = q - p;
            // The noise half-width plus the shrink back into the unit ball.
            assert!(d.norm() <= 0.02 + 1e-12);
            if d.norm() > 0.0 {
                moved += 1;
            }
        }
        assert!(moved > a.len() / 2);
    }
}

#[test]
fn fit_recovers_generated_parameters() {
    let t = TempDir::new().unwrap();
    let (gt, fit) = (t.path().join("gt"), t.path().join("fit"));
    gen(&gt, &["--models", "3", "--seed", "5", "--points", "4096"]);
    ok(&["fit", s(&gt), "--out", s(&fit)]);
    for c in files_with(&gt, "xyz") {
        let name = c.file_name().unwrap();
        let truth = cylinders_from_json(&fs::read_to_string(c.with_extension("json")).unwrap()).unwrap();
        let got = cylinders_from_json(&fs::read_to_string(fit.join(name).with_extension("json")).unwrap()).unwrap();
        assert_eq!(truth.len(), got.len());
        for (a, b) in truth.iter().zip(&got) {
            assert!(axis_angle_deg(&a.axis, &b.axis) < 0.01);
            assert!((a.center - b.center).norm() < 1e-6);
            assert!((a.scale - b.scale).abs() < 1e-6);
            assert!((a.extent.0 - b.extent.0).abs() < 1e-6 && (a.extent.1 - b.extent.1).abs() < 1e-6);
        }
        assert!(fit.join(name).with_extension("sketch0.txt").is_file());
    }
}

#[test]
fn fit_estimates_missing_normals_on_request() {
    let t = TempDir::new().unwrap();
    let m = l_profile_fixture(8192, 2).unwrap();
    let bare: String = m.cloud.points.iter().map(|p| format!("{} {} {}\n", p.x, p.y, p.z)).collect();
    let cloud = t.path().join("bare.xyz");
    let labels = t.path().join("bare.labels.json");
    fs::write(&cloud, bare).unwrap();
    fs::write(&labels, labels_to_json(&m.labels)).unwrap();
    let out = t.path().join("out");

    let refused = cylfit(&["fit", s(&cloud), "--labels", s(&labels), "--out", s(&out)]);
    assert_eq!(code(&refused), 1);

    ok(&["fit", s(&cloud), "--labels", s(&labels), "--estimate-normals", "--out", s(&out)]);
    let got = cylinders_from_json(&fs::read_to_string(out.join("bare.json")).unwrap()).unwrap();
    assert_eq!(got.len(), 1);
    assert!(axis_angle_deg(&got[0].axis, &m.cylinders[0].axis) < 2.0);
}

#[test]
fn fit_rejects_unlabelled_input() {
    let t = TempDir::new().unwrap();
    let m = l_profile_fixture(2048, 0).unwrap();
    let path = t.path().join("plain.xyz");
    fs::write(&path, write_points(&OrientedPointCloud::new(m.cloud.points, m.cloud.normals).unwrap())).unwrap();
    let out = cylfit(&["fit", s(&path), "--out", s(&t.path().join("o"))]);
    assert_eq!(code(&out), 1);
}

/// A flat barrel patch: every normal agrees, so any axis in the plane fits.
fn plate_file(dir: &Path) -> PathBuf {
    let mut text = String::new();
    for i in 0..20 {
        for j in 0..20 {
            let (y, z) = (i as f64 / 19.0 - 0.5, j as f64 / 19.0 - 0.5);
            text.push_str(&format!("0 {y} {z} 1 0 0 0 0\n"));
        }
    }
    let p = dir.join("plate.xyz");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn fit_reports_degenerate_axis() {
    let t = TempDir::new().unwrap();
    let p = plate_file(t.path());
    let out = t.path().join("o");
    assert_eq!(code(&cylfit(&["fit", s(&p), "--out", s(&out)])), 3);
    let skipped = ok(&["fit", s(&p), "--allow-degenerate", "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&skipped.stderr).contains("skipped"));
    assert!(cylinders_from_json(&fs::read_to_string(out.join("plate.json")).unwrap()).unwrap().is_empty());
}

fn write_model(dir: &Path, name: &str, cloud: &OrientedPointCloud, cyls: &[cylfit::ExtrusionCylinder]) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join(format!("{name}.xyz")), write_points(cloud)).unwrap();
    fs::write(dir.join(format!("{name}.json")), cylinders_to_json(cyls)).unwrap();
}

#[test]
fn decompose_single_and_coaxial() {
    let t = TempDir::new().unwrap();
    let gt = t.path().join("gt");
    let l = l_profile_fixture(8192, 4).unwrap();
    let co = coaxial_fixture(8192, 4).unwrap();
    write_model(&gt, "single", &l.cloud, &l.cylinders);
    write_model(&gt, "coaxial", &co.cloud, &co.cylinders);
    let pred = t.path().join("pred");

    ok(&["decompose", s(&gt.join("single.xyz")), "--out", s(&pred)]);
    let got = cylinders_from_json(&fs::read_to_string(pred.join("single.json")).unwrap()).unwrap();
    assert_eq!(got.len(), 1);
    assert!(axis_angle_deg(&got[0].axis, &l.cylinders[0].axis) < 5.0);
    assert!(pred.join("single.labels.json").is_file());

    let out = ok(&["decompose", s(&gt.join("coaxial.xyz")), "--out", s(&pred)]);
    let got = cylinders_from_json(&fs::read_to_string(pred.join("coaxial.json")).unwrap()).unwrap();
    assert_eq!(got.len(), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn decompose_is_deterministic_under_seed() {
    let t = TempDir::new().unwrap();
    let gt = t.path().join("gt");
    gen(&gt, &["--models", "2", "--seed", "9", "--points", "4096"]);
    for d in ["a", "b"] {
        ok(&["decompose", s(&gt), "--seed", "4", "--refine", "--out", s(&t.path().join(d))]);
    }
    for f in files_with(&t.path().join("a"), "json").into_iter().chain(files_with(&t.path().join("a"), "xyz")) {
        let name = f.file_name().unwrap();
        if name.to_string_lossy().starts_with("run_") {
            continue;
        }
        assert_eq!(fs::read(&f).unwrap(), fs::read(t.path().join("b").join(name)).unwrap(), "{name:?}");
    }
}

fn eval_json(pred: &Path, gt: &Path, out: &Path) -> Value {
    let o = ok(&["eval", s(pred), s(gt), "--out", s(out), "--format", "json"]);
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn refine_never_lowers_segmentation_quality() {
    let t = TempDir::new().unwrap();
    let gt = t.path().join("gt");
    gen(&gt, &["--models", "4", "--seed", "11", "--points", "8192"]);
    let l = l_profile_fixture(8192, 1).unwrap();
    let co = coaxial_fixture(8192, 1).unwrap();
    write_model(&gt, "l_profile", &l.cloud, &l.cylinders);
    write_model(&gt, "coaxial", &co.cloud, &co.cylinders);
    let (plain, refined) = (t.path().join("plain"), t.path().join("refined"));
    ok(&["decompose", s(&gt), "--out", s(&plain)]);
    ok(&["decompose", s(&gt), "--refine", "--out", s(&refined)]);
    let a = eval_json(&plain, &gt, &t.path().join("ea"));
    let b = eval_json(&refined, &gt, &t.path().join("eb"));
    for (x, y) in a["models"].as_array().unwrap().iter().zip(b["models"].as_array().unwrap()) {
        assert_eq!(x["name"], y["name"]);
        let (sx, sy) = (x["report"]["seg_iou"].as_f64().unwrap(), y["report"]["seg_iou"].as_f64().unwrap());
        assert!(sy >= sx - 1e-12, "{}: {sx} -> {sy}", x["name"]);
    }
}

#[test]
fn eval_of_ground_truth_is_perfect_and_order_free() {
    let t = TempDir::new().unwrap();
    let gt = t.path().join("gt");
    gen(&gt, &["--models", "3", "--k", "4", "--seed", "13", "--points", "4096"]);
    let perfect = eval_json(&gt, &gt, &t.path().join("e0"));
    let mean = &perfect["mean"];
    assert_eq!(mean["seg_iou"].as_f64().unwrap(), 1.0);
    assert_eq!(mean["bb_acc"].as_f64().unwrap(), 1.0);
    assert!(mean["normal_err_deg"].as_f64().unwrap() < 1e-9);
    assert!(mean["ea_err_deg"].as_f64().unwrap() < 1e-9);
    assert!(mean["ec_err"].as_f64().unwrap() < 1e-9);
    assert!(mean["fit_cyl"].as_f64().unwrap() < 1e-3);
    assert!(mean["fit_glob"].as_f64().unwrap() < 1e-3);

    // Same models with segment indices permuted.
    let shuffled = t.path().join("shuffled");
    let perm = [2usize, 0, 3, 1];
    for c in files_with(&gt, "xyz") {
        let cloud = read_cloud(&c);
        let l = cloud.labels.clone().unwrap();
        let relabelled = HardLabels::new(l.seg.iter().map(|&k| perm[k]).collect(), l.bb.clone()).unwrap();
        let cyls = cylinders_from_json(&fs::read_to_string(c.with_extension("json")).unwrap()).unwrap();
        let mut moved = cyls.clone();
        for (k, cyl) in cyls.into_iter().enumerate() {
            moved[perm[k]] = cyl;
        }
        let name = c.file_stem().unwrap().to_str().unwrap();
        write_model(&shuffled, name, &cloud.with_labels(relabelled).unwrap(), &moved);
    }
    let again = eval_json(&shuffled, &gt, &t.path().join("e1"));
    assert_eq!(perfect["models"], again["models"]);
    assert_eq!(perfect["mean"], again["mean"]);
}

#[test]
fn eval_rejects_mismatched_model_sets() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    gen(&a, &["--models", "2", "--seed", "1", "--points", "1024"]);
    gen(&b, &["--models", "3", "--seed", "1", "--points", "1024"]);
    assert_eq!(code(&cylfit(&["eval", s(&a), s(&b), "--out", s(&t.path().join("e"))])), 2);
}

fn cylinder_json(loops: &str, extent: [f64; 2]) -> String {
    format!(
        r#"{{"schema": 1, "axis": [0, 0, 1], "center": [0, 0, 0], "scale": 0.5, "extent": [{}, {}], "sketch": {{"loops": {loops}}}, "op": "unknown"}}"#,
        extent[0], extent[1]
    )
}

fn circle_loops() -> String {
    let pts: Vec<String> = (0..64)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / 64.0;
            format!("[{}, {}]", 0.8 * t.cos(), 0.8 * t.sin())
        })
        .collect();
    format!("[[{}]]", pts.join(", "))
}

const SQUARE: &str = "[[[-1, -1], [1, -1], [1, 1], [-1, 1]]]";

#[test]
fn sketch_of_circle_gives_one_closed_path() {
    let t = TempDir::new().unwrap();
    let p = t.path().join("circle.json");
    fs::write(&p, format!("[{}]", cylinder_json(&circle_loops(), [-0.5, 0.5]))).unwrap();
    let out = t.path().join("o");
    ok(&["sketch", s(&p), "--out", s(&out)]);
    let svg = fs::read_to_string(out.join("circle.sketch0.svg")).unwrap();
    assert_eq!(svg.matches("<path").count(), 1);
    let profile: Value = serde_json::from_str(&fs::read_to_string(out.join("circle.sketch0.json")).unwrap()).unwrap();
    assert_eq!(profile["schema"], 1);
    assert_eq!(profile["loops"].as_array().unwrap().len(), 1);

    assert_eq!(code(&cylfit(&["sketch", s(&p), "--resolution", "0", "--out", s(&out)])), 1);
}

#[test]
fn sketch_of_fitted_segments_closes_every_loop() {
    let t = TempDir::new().unwrap();
    let (gt, fit, sk) = (t.path().join("gt"), t.path().join("fit"), t.path().join("sk"));
    gen(&gt, &["--models", "2", "--seed", "21", "--points", "8192"]);
    ok(&["fit", s(&gt), "--out", s(&fit)]);
    let out = ok(&["sketch", s(&fit), "--out", s(&sk), "--format", "json"]);
    let rows: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!rows.as_array().unwrap().is_empty());
    for f in files_with(&sk, "json").into_iter().filter(|f| f.to_string_lossy().contains(".sketch")) {
        let v: Value = serde_json::from_str(&fs::read_to_string(&f).unwrap()).unwrap();
        for l in v["loops"].as_array().unwrap() {
            assert!(l.as_array().unwrap().len() >= 3);
        }
    }
}

/// Undirected edge multiplicities of the faces in an OBJ file.
fn obj_edges(obj: &str) -> (usize, HashMap<(usize, usize), usize>) {
    let mut faces = 0;
    let mut edges = HashMap::new();
    for line in obj.lines().filter(|l| l.starts_with("f ")) {
        let idx: Vec<usize> = line[2..].split_whitespace().map(|t| t.split('/').next().unwrap().parse().unwrap()).collect();
        faces += 1;
        for i in 0..idx.len() {
            let (a, b) = (idx[i], idx[(i + 1) % idx.len()]);
            *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    (faces, edges)
}

#[test]
fn recon_exports_watertight_box_and_skips_flat_cylinders() {
    let t = TempDir::new().unwrap();
    let p = t.path().join("box.json");
    fs::write(&p, format!("[{}, {}]", cylinder_json(SQUARE, [-0.5, 0.5]), cylinder_json(SQUARE, [0.2, 0.2]))).unwrap();
    let out = t.path().join("o");
    let run = ok(&["recon", s(&p), "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&run.stderr).contains("zero extent"));
    assert!(!out.join("box.cyl1.obj").exists());

    let (faces, edges) = obj_edges(&fs::read_to_string(out.join("box.cyl0.obj")).unwrap());
    assert!(faces >= 12);
    assert!(edges.values().all(|&c| c == 2));
    let (scene_faces, _) = obj_edges(&fs::read_to_string(out.join("box.obj")).unwrap());
    assert_eq!(scene_faces, faces);
}

#[test]
fn noise_sweep_reports_small_errors() {
    let t = TempDir::new().unwrap();
    ok(&["noise-sweep", "--sigmas", "0,0.1", "--seeds", "20", "--out", s(t.path())]);
    let csv = fs::read_to_string(t.path().join("noise_sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("sigma,mean_deg,std_deg,max_deg,failures"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0][1] < 0.01);
    assert!(rows[1][1] < 10.0);
}

#[test]
fn noise_sweep_error_grows_with_sigma_on_average() {
    let t = TempDir::new().unwrap();
    ok(&["noise-sweep", "--sigmas", "0.02,0.05,0.1,0.2", "--seeds", "20", "--out", s(t.path())]);
    let csv = fs::read_to_string(t.path().join("noise_sweep.csv")).unwrap();
    let means: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}

#[test]
fn replay_reproduces_outputs_byte_for_byte() {
    let t = TempDir::new().unwrap();
    let gt = t.path().join("gt");
    let pred = t.path().join("pred");
    gen(&gt, &["--models", "2", "--seed", "17", "--points", "2048"]);
    ok(&["decompose", s(&gt), "--refine", "--seed", "3", "--out", s(&pred)]);
    for (dir, cmd) in [(&gt, "gen"), (&pred, "decompose")] {
        let manifest_path = dir.join(format!("run_{cmd}.json"));
        let manifest: Value = serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
        assert_eq!(manifest["schema"], 1);
        let outputs: Vec<PathBuf> =
            manifest["outputs"].as_array().unwrap().iter().map(|v| PathBuf::from(v.as_str().unwrap())).collect();
        assert!(!outputs.is_empty());
        let before: Vec<Vec<u8>> = outputs.iter().map(|p| fs::read(p).unwrap()).collect();
        for p in &outputs {
            fs::remove_file(p).unwrap();
        }
        let saved = t.path().join(format!("{cmd}.manifest.json"));
        fs::copy(&manifest_path, &saved).unwrap();
        ok(&["replay", s(&saved)]);
        for (p, b) in outputs.iter().zip(&before) {
            assert_eq!(&fs::read(p).unwrap(), b, "{}", p.display());
        }
    }
}

#[test]
fn json_summaries_and_usage_errors() {
    let t = TempDir::new().unwrap();
    let out = ok(&["gen", "--models", "1", "--k", "2", "--points", "512", "--format", "json", "--out", s(t.path())]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["models"].as_array().unwrap().len(), 1);
    assert_eq!(code(&cylfit(&["gen", "--k", "99", "--out", s(t.path())])), 1);
    assert_eq!(code(&cylfit(&["frobnicate"])), 1);
    assert_eq!(code(&cylfit(&["decompose", s(&t.path().join("missing.xyz"))])), 2);
    assert!(cylfit(&["--help"]).status.success());
}
