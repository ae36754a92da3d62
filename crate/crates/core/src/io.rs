//! Text point-cloud format and versioned JSON schemas.
//!
//! Point files hold one point per line, `x y z [nx ny nz [seg bb]]`,
//! whitespace-delimited with `#` comments. A label of `-1` marks an
//! unlabelled point; a file is either fully labelled or not at all.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::ExtrusionCylinder;
use crate::geom::OrientedPointCloud;
use crate::labels::HardLabels;
use crate::sketch::{Sketch, SketchPoints, SketchProfile};
use crate::{Vec2, Vec3};

pub const SCHEMA_VERSION: u32 = 1;

/// Contents of a point file before normals are required.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFile {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub labels: Option<HardLabels>,
}

impl PointFile {
    pub fn into_cloud(self) -> Result<OrientedPointCloud> {
        let normals = self
            .normals
            .ok_or_else(|| Error::InvalidInput("point file has no normals".into()))?;
        let cloud = OrientedPointCloud::new(self.points, normals)?;
        match self.labels {
            Some(l) => cloud.with_labels(l),
            None => Ok(cloud),
        }
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::Parse { line, message: format!("not a number: {tok:?}") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, message: format!("non-finite value {tok:?}") });
    }
    Ok(v)
}

fn parse_label(tok: &str, line: usize) -> Result<Option<usize>> {
    let v: i64 = tok
        .parse()
        .map_err(|_| Error::Parse { line, message: format!("not an integer label: {tok:?}") })?;
    match v {
        -1 => Ok(None),
        v if v >= 0 => Ok(Some(v as usize)),
        v => Err(Error::Parse { line, message: format!("label {v} below -1") }),
    }
}

pub fn parse_points(text: &str) -> Result<PointFile> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut seg = Vec::new();
    let mut bb = Vec::new();
    let mut columns = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = content.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if !matches!(toks.len(), 3 | 6 | 8) {
            return Err(Error::Parse { line, message: format!("expected 3, 6 or 8 columns, got {}", toks.len()) });
        }
        match columns {
            None => columns = Some(toks.len()),
            Some(c) if c != toks.len() => {
                return Err(Error::Parse { line, message: format!("{} columns after {c} on earlier lines", toks.len()) })
            }
            _ => {}
        }
        let f = |j: usize| parse_f64(toks[j], line);
        points.push(Vec3::new(f(0)?, f(1)?, f(2)?));
        if toks.len() >= 6 {
            normals.push(Vec3::new(f(3)?, f(4)?, f(5)?));
        }
        if toks.len() == 8 {
            let s = parse_label(toks[6], line)?;
            let b = parse_label(toks[7], line)?;
            if let Some(b) = b {
                if b > 1 {
                    return Err(Error::Parse { line, message: format!("base/barrel flag {b}") });
                }
            }
            if s.is_some() != b.is_some() {
                return Err(Error::Parse { line, message: "segment and base/barrel must both be -1 or both set".into() });
            }
            seg.push(s);
            bb.push(b.map(|b| b as u8));
        }
    }
    let columns = columns.unwrap_or(3);
    let labels = if columns == 8 {
        let labelled = seg.iter().filter(|s| s.is_some()).count();
        if labelled == 0 {
            None
        } else if labelled < seg.len() {
            let line = seg.iter().position(|s| s.is_none()).map_or(0, |i| i + 1);
            return Err(Error::InvalidInput(format!(
                "{labelled} of {} points labelled (first unlabelled point {line}); partial labelling is not supported",
                seg.len()
            )));
        } else {
            Some(HardLabels::new(seg.into_iter().flatten().collect(), bb.into_iter().flatten().collect())?)
        }
    } else {
        None
    };
    Ok(PointFile { points, normals: (columns >= 6).then_some(normals), labels })
}

/// Eight-column text when labelled, six otherwise.
pub fn write_points(cloud: &OrientedPointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 64);
    for i in 0..cloud.len() {
        let p = cloud.points[i];
        let n = cloud.normals[i];
        write!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z).unwrap();
        if let Some(l) = &cloud.labels {
            write!(out, " {} {}", l.seg[i], l.bb[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

fn from_json_err(e: serde_json::Error) -> Error {
    Error::Parse { line: e.line(), message: e.to_string() }
}

fn check_schema(schema: u32) -> Result<()> {
    if schema != SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!("unsupported schema version {schema}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SketchJson {
    Loops { loops: Vec<Vec<[f64; 2]>> },
    Points { points: Vec<[f64; 2]>, normals: Vec<Option<[f64; 2]>> },
}

impl SketchJson {
    pub fn from_sketch(s: &Sketch) -> Self {
        match s {
            Sketch::Profile(p) => SketchJson::Loops {
                loops: p.loops().iter().map(|l| l.iter().map(|v| [v.x, v.y]).collect()).collect(),
            },
            Sketch::Points(s) => SketchJson::Points {
                points: s.points.iter().map(|v| [v.x, v.y]).collect(),
                normals: s.normals.iter().map(|n| n.map(|v| [v.x, v.y])).collect(),
            },
        }
    }

    pub fn to_sketch(&self) -> Result<Sketch> {
        let v = |a: &[f64; 2]| Vec2::new(a[0], a[1]);
        match self {
            SketchJson::Loops { loops } => Ok(Sketch::Profile(SketchProfile::new(
                loops.iter().map(|l| l.iter().map(v).collect()).collect(),
            )?)),
            SketchJson::Points { points, normals } => {
                if points.len() != normals.len() {
                    return Err(Error::InvalidInput(format!(
                        "sketch has {} points but {} normals",
                        points.len(),
                        normals.len()
                    )));
                }
                Ok(Sketch::Points(SketchPoints {
                    points: points.iter().map(v).collect(),
                    normals: normals.iter().map(|n| n.as_ref().map(v)).collect(),
                }))
            }
        }
    }
}

/// Whether a primitive adds or removes material; never inferred.
pub const OP_UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderJson {
    pub schema: u32,
    pub axis: [f64; 3],
    pub center: [f64; 3],
    pub scale: f64,
    pub extent: [f64; 2],
    pub sketch: SketchJson,
    pub op: String,
}

impl CylinderJson {
    pub fn from_cylinder(c: &ExtrusionCylinder) -> Self {
        CylinderJson {
            schema: SCHEMA_VERSION,
            axis: c.axis.into(),
            center: c.center.into(),
            scale: c.scale,
            extent: [c.extent.0, c.extent.1],
            sketch: SketchJson::from_sketch(&c.sketch),
            op: OP_UNKNOWN.into(),
        }
    }

    pub fn to_cylinder(&self) -> Result<ExtrusionCylinder> {
        check_schema(self.schema)?;
        let axis = Vec3::from(self.axis);
        if (axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("axis norm {} is not 1", axis.norm())));
        }
        if !(self.scale > 0.0) || self.extent[0] > self.extent[1] {
            return Err(Error::InvalidInput("scale must be positive and extent ordered".into()));
        }
        Ok(ExtrusionCylinder {
            axis,
            center: Vec3::from(self.center),
            sketch: self.sketch.to_sketch()?,
            scale: self.scale,
            extent: (self.extent[0], self.extent[1]),
        })
    }
}

pub fn cylinders_to_json(cylinders: &[ExtrusionCylinder]) -> String {
    let dto: Vec<CylinderJson> = cylinders.iter().map(CylinderJson::from_cylinder).collect();
    serde_json::to_string_pretty(&dto).expect("cylinder json is always serializable")
}

pub fn cylinders_from_json(text: &str) -> Result<Vec<ExtrusionCylinder>> {
    let dto: Vec<CylinderJson> = serde_json::from_str(text).map_err(from_json_err)?;
    dto.iter().map(CylinderJson::to_cylinder).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileJson {
    pub schema: u32,
    pub loops: Vec<Vec<[f64; 2]>>,
}

pub fn profile_to_json(p: &SketchProfile) -> String {
    let dto = ProfileJson {
        schema: SCHEMA_VERSION,
        loops: p.loops().iter().map(|l| l.iter().map(|v| [v.x, v.y]).collect()).collect(),
    };
    serde_json::to_string_pretty(&dto).expect("profile json is always serializable")
}

pub fn profile_from_json(text: &str) -> Result<SketchProfile> {
    let dto: ProfileJson = serde_json::from_str(text).map_err(from_json_err)?;
    check_schema(dto.schema)?;
    SketchProfile::new(dto.loops.iter().map(|l| l.iter().map(|a| Vec2::new(a[0], a[1])).collect()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsJson {
    pub schema: u32,
    pub seg: Vec<usize>,
    pub bb: Vec<u8>,
}

pub fn labels_to_json(l: &HardLabels) -> String {
    let dto = LabelsJson { schema: SCHEMA_VERSION, seg: l.seg.clone(), bb: l.bb.clone() };
    serde_json::to_string(&dto).expect("label json is always serializable")
}

pub fn labels_from_json(text: &str) -> Result<HardLabels> {
    let dto: LabelsJson = serde_json::from_str(text).map_err(from_json_err)?;
    check_schema(dto.schema)?;
    HardLabels::new(dto.seg, dto.bb)
}
