//! Per-model evaluation of a decomposition against ground truth.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::fitting::ExtrusionCylinder;
use crate::geom::axis_angle_deg;
use crate::labels::{hard_to_m, hungarian_match, marginalize_w, HardLabels, BARREL};
use crate::{Error, Result, Vec3};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-12;

/// Relaxed intersection over union of two nonnegative vectors; two empty
/// vectors agree perfectly.
pub fn riou(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!("RIoU of lengths {} and {}", u.len(), v.len())));
    }
    let inter: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let union = u.iter().sum::<f64>() + v.iter().sum::<f64>() - inter;
    Ok(if union <= 0.0 { 1.0 } else { inter / union })
}

fn column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

/// Row-wise argmax as a one-hot matrix (ties to the lower column).
pub fn one_hot(w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(w.nrows(), w.ncols());
    for i in 0..w.nrows() {
        if w.ncols() == 0 {
            break;
        }
        let row = w.row(i);
        let j = (0..w.ncols()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
        out[(i, j)] = 1.0;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMatch {
    /// Mean over ground-truth segments of the one-hot RIoU with the matched
    /// prediction; unmatched segments count as zero.
    pub score: f64,
    /// Predicted segment for each ground-truth segment.
    pub matching: Vec<Option<usize>>,
    pub unmatched: usize,
}

/// Segmentation score: Hungarian matching on `1 - RIoU` of the soft
/// columns, then RIoU of the one-hot prediction under that matching.
pub fn seg_iou(w_pred: &DMatrix<f64>, w_gt: &DMatrix<f64>) -> Result<SegmentMatch> {
    if w_pred.nrows() != w_gt.nrows() {
        return Err(Error::InvalidInput(format!(
            "prediction has {} rows, ground truth {}",
            w_pred.nrows(),
            w_gt.nrows()
        )));
    }
    let (kp, kg) = (w_pred.ncols(), w_gt.ncols());
    if kg == 0 {
        return Err(Error::InvalidInput("ground truth has no segments".into()));
    }
    let n = kp.max(kg);
    let mut cost = DMatrix::from_element(n, n, 1.0);
    for g in 0..kg {
        let gc = column(w_gt, g);
        for p in 0..kp {
            cost[(g, p)] = 1.0 - riou(&column(w_pred, p), &gc)?;
        }
    }
    let assignment = hungarian_match(&cost)?;
    let hard = one_hot(w_pred);
    let mut total = 0.0;
    let mut matching = Vec::with_capacity(kg);
    for (g, &p) in assignment.iter().enumerate().take(kg) {
        if p < kp {
            total += riou(&column(&hard, p), &column(w_gt, g))?;
            matching.push(Some(p));
        } else {
            matching.push(None);
        }
    }
    let unmatched = matching.iter().filter(|m| m.is_none()).count();
    Ok(SegmentMatch { score: total / kg as f64, matching, unmatched })
}

fn segment_matrix(labels: &HardLabels, k: usize) -> Result<DMatrix<f64>> {
    Ok(marginalize_w(&hard_to_m(labels, k)?))
}

/// [`seg_iou`] score for two hard labellings.
pub fn seg_iou_labels(pred: &HardLabels, gt: &HardLabels) -> Result<f64> {
    Ok(seg_iou(&segment_matrix(pred, pred.segment_count().max(1))?, &segment_matrix(gt, gt.segment_count())?)?.score)
}

/// Mean unoriented angle between corresponding normals, in degrees.
pub fn normal_angle_err(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::InvalidInput(format!("normal sets of sizes {} and {}", pred.len(), gt.len())));
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| axis_angle_deg(a, b)).sum::<f64>() / pred.len() as f64)
}

/// Fraction of matching base/barrel flags.
pub fn bb_accuracy(pred: &[u8], gt: &[u8]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::InvalidInput(format!("flag sets of sizes {} and {}", pred.len(), gt.len())));
    }
    Ok(pred.iter().zip(gt).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

/// Unoriented axis error in degrees.
pub fn ea_err(pred: &Vec3, gt: &Vec3) -> f64 {
    axis_angle_deg(pred, gt)
}

pub fn ec_err(pred: &Vec3, gt: &Vec3) -> f64 {
    (pred - gt).norm()
}

/// Cross-entropy of soft base/barrel predictions (`N x 2`, barrel column
/// first) against hard flags, summed over points.
pub fn bce_bb(pred: &DMatrix<f64>, gt: &[u8]) -> Result<f64> {
    if pred.nrows() != gt.len() || pred.ncols() != 2 {
        return Err(Error::InvalidInput(format!(
            "base/barrel prediction is {}x{} for {} flags",
            pred.nrows(),
            pred.ncols(),
            gt.len()
        )));
    }
    Ok(gt
        .iter()
        .enumerate()
        .map(|(i, &b)| -pred[(i, usize::from(b))].clamp(BCE_CLAMP, 1.0 - BCE_CLAMP).ln())
        .sum())
}

fn mean_sketch_distance(cyl: &ExtrusionCylinder, points: &[Vec3]) -> f64 {
    let d = cyl.sketch.distance_evaluator();
    points.iter().map(|p| d.unsigned(&cyl.to_sketch(p))).sum::<f64>() / points.len() as f64
}

/// Mean over `(gt segment, predicted cylinder)` pairs of the mean distance
/// from the segment's barrel points, mapped into the predicted sketch plane,
/// to the predicted sketch.
pub fn fit_cyl(pred: &[ExtrusionCylinder], points: &[Vec3], gt: &HardLabels, pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no matched segments".into()));
    }
    let mut total = 0.0;
    for &(g, p) in pairs {
        let barrel: Vec<Vec3> = gt.barrel_indices(g).iter().map(|&i| points[i]).collect();
        if barrel.is_empty() {
            return Err(Error::EmptySegment { segment: g });
        }
        let cyl = pred.get(p).ok_or(Error::SegmentOutOfRange { segment: p, segments: pred.len() })?;
        total += mean_sketch_distance(cyl, &barrel);
    }
    Ok(total / pairs.len() as f64)
}

/// Mean over barrel points of the distance to the best-fitting predicted
/// cylinder's sketch.
pub fn fit_glob(pred: &[ExtrusionCylinder], barrel: &[Vec3]) -> Result<f64> {
    if pred.is_empty() || barrel.is_empty() {
        return Err(Error::InvalidInput("global fit needs cylinders and barrel points".into()));
    }
    let evals: Vec<_> = pred.iter().map(|c| (c, c.sketch.distance_evaluator())).collect();
    Ok(barrel
        .iter()
        .map(|p| evals.iter().map(|(c, d)| d.unsigned(&c.to_sketch(p))).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / barrel.len() as f64)
}

/// The seven per-model scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub seg_iou: f64,
    pub normal_err_deg: f64,
    pub bb_acc: f64,
    pub ea_err_deg: f64,
    pub ec_err: f64,
    /// Infinite when nothing could be matched; `null` in JSON.
    #[serde(with = "infinite_as_null")]
    pub fit_cyl: f64,
    #[serde(with = "infinite_as_null")]
    pub fit_glob: f64,
    /// Ground-truth segments without a predicted partner.
    pub unmatched: usize,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// A decomposition to be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<'a> {
    pub labels: &'a HardLabels,
    pub normals: &'a [Vec3],
    pub cylinders: &'a [ExtrusionCylinder],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<'a> {
    pub points: &'a [Vec3],
    pub normals: &'a [Vec3],
    pub labels: &'a HardLabels,
    pub cylinders: &'a [ExtrusionCylinder],
}

pub fn evaluate(pred: &Prediction, gt: &GroundTruth) -> Result<EvalReport> {
    let n = gt.points.len();
    if pred.labels.len() != n || gt.labels.len() != n || gt.normals.len() != n || pred.normals.len() != n {
        return Err(Error::InvalidInput("prediction and ground truth differ in point count".into()));
    }
    let kp = pred.labels.segment_count().max(pred.cylinders.len()).max(1);
    let kg = gt.labels.segment_count().max(gt.cylinders.len());
    let matched = seg_iou(&segment_matrix(pred.labels, kp)?, &segment_matrix(gt.labels, kg)?)?;
    let pairs: Vec<(usize, usize)> = matched
        .matching
        .iter()
        .enumerate()
        .filter_map(|(g, p)| p.filter(|&p| p < pred.cylinders.len() && g < gt.cylinders.len()).map(|p| (g, p)))
        .collect();
    let (mut ea, mut ec) = (0.0, 0.0);
    for &(g, p) in &pairs {
        ea += ea_err(&pred.cylinders[p].axis, &gt.cylinders[g].axis);
        ec += ec_err(&pred.cylinders[p].center, &gt.cylinders[g].center);
    }
    let count = pairs.len().max(1) as f64;
    let barrel: Vec<Vec3> = (0..n).filter(|&i| gt.labels.bb[i] == BARREL).map(|i| gt.points[i]).collect();
    Ok(EvalReport {
        seg_iou: matched.score,
        normal_err_deg: normal_angle_err(pred.normals, gt.normals)?,
        bb_acc: bb_accuracy(&pred.labels.bb, &gt.labels.bb)?,
        ea_err_deg: ea / count,
        ec_err: ec / count,
        fit_cyl: if pairs.is_empty() { f64::INFINITY } else { fit_cyl(pred.cylinders, gt.points, gt.labels, &pairs)? },
        fit_glob: if pred.cylinders.is_empty() { f64::INFINITY } else { fit_glob(pred.cylinders, &barrel)? },
        unmatched: kg - pairs.len(),
    })
}

/// Mean of each score; unmatched counts are summed.
pub fn aggregate(reports: &[EvalReport]) -> Option<EvalReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(EvalReport {
        seg_iou: mean(|r| r.seg_iou),
        normal_err_deg: mean(|r| r.normal_err_deg),
        bb_acc: mean(|r| r.bb_acc),
        ea_err_deg: mean(|r| r.ea_err_deg),
        ec_err: mean(|r| r.ec_err),
        fit_cyl: mean(|r| r.fit_cyl),
        fit_glob: mean(|r| r.fit_glob),
        unmatched: reports.iter().map(|r| r.unmatched).sum(),
    })
}

/// Aligned plain-text table, one row per named report.
pub fn report_table(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$} {:>7} {:>8} {:>7} {:>8} {:>8} {:>9} {:>9} {:>9}",
        "model", "Seg.", "Norm.", "B.B.", "E.A.", "E.C.", "Fit Cyl", "Fit Glob", "unmatched"
    );
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<width$} {:>7.4} {:>8.3} {:>7.4} {:>8.3} {:>8.4} {:>9.5} {:>9.5} {:>9}",
            name, r.seg_iou, r.normal_err_deg, r.bb_acc, r.ea_err_deg, r.ec_err, r.fit_cyl, r.fit_glob, r.unmatched
        );
    }
    s
}
