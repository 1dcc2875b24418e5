//! Line-record annotation files.
//!
//! One JSON object per line:
//!
//! ```text
//! {"name":"a","path":"images/a.png","width":448,"height":448,
//!  "targets":[{"class":"light","xmin":10,"ymin":20,"xmax":40,"ymax":90}]}
//! ```
//!
//! `path` is resolved relative to the annotation file. Box corners are in
//! source pixel coordinates, origin top-left, y down.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{AnnotatedImage, DatasetError, DatasetResult, Target};
use crate::env::BoxF;
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub class: String,
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub name: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub targets: Vec<TargetRecord>,
}

fn parse_err(record: usize, field: &str, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse { record, field: field.to_string(), message: message.into() }
}

fn field<'a>(obj: &'a Map<String, Value>, record: usize, name: &str) -> DatasetResult<&'a Value> {
    obj.get(name).ok_or_else(|| parse_err(record, name, "missing"))
}

fn str_field(obj: &Map<String, Value>, record: usize, name: &str) -> DatasetResult<String> {
    field(obj, record, name)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| parse_err(record, name, "expected a string"))
}

fn num_field(obj: &Map<String, Value>, record: usize, name: &str) -> DatasetResult<f64> {
    field(obj, record, name)?
        .as_f64()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(record, name, "expected a finite number"))
}

fn dim_field(obj: &Map<String, Value>, record: usize, name: &str) -> DatasetResult<u32> {
    field(obj, record, name)?
        .as_u64()
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| parse_err(record, name, "expected a non-negative integer"))
}

fn parse_record(line: &str, record: usize) -> DatasetResult<AnnotationRecord> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| parse_err(record, "<record>", e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| parse_err(record, "<record>", "expected an object"))?;
    let targets = field(obj, record, "targets")?
        .as_array()
        .ok_or_else(|| parse_err(record, "targets", "expected an array"))?
        .iter()
        .map(|t| {
            let t = t.as_object().ok_or_else(|| parse_err(record, "targets", "expected objects"))?;
            Ok(TargetRecord {
                class: str_field(t, record, "class")?,
                xmin: num_field(t, record, "xmin")?,
                ymin: num_field(t, record, "ymin")?,
                xmax: num_field(t, record, "xmax")?,
                ymax: num_field(t, record, "ymax")?,
            })
        })
        .collect::<DatasetResult<Vec<_>>>()?;
    Ok(AnnotationRecord {
        name: str_field(obj, record, "name")?,
        path: str_field(obj, record, "path")?,
        width: dim_field(obj, record, "width")?,
        height: dim_field(obj, record, "height")?,
        targets,
    })
}

/// Reads every record and decodes its image, normalizing pixels to `[0, 1]`.
/// Records are numbered from 1 in error messages; blank lines are skipped.
pub fn load_annotations(path: &Path) -> DatasetResult<Vec<AnnotatedImage>> {
    let text = fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let record = i + 1;
            let rec = parse_record(line, record)?;
            load_record(&rec, &base, record)
        })
        .collect()
}

fn load_record(rec: &AnnotationRecord, base: &Path, record: usize) -> DatasetResult<AnnotatedImage> {
    let img_path = base.join(&rec.path);
    if !img_path.is_file() {
        return Err(DatasetError::MissingImage { record, path: img_path });
    }
    let decoded = image::open(&img_path)
        .map_err(|source| DatasetError::Image { record, path: img_path.clone(), source })?
        .to_rgb8();
    if decoded.width() != rec.width || decoded.height() != rec.height {
        return Err(DatasetError::Validation {
            record,
            message: format!(
                "declared size {}x{} but image is {}x{}",
                rec.width,
                rec.height,
                decoded.width(),
                decoded.height()
            ),
        });
    }
    let (w, h) = (rec.width as f64, rec.height as f64);
    let targets = rec
        .targets
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let bbox = BoxF::new(t.xmin, t.ymin, t.xmax, t.ymax);
            if !bbox.is_within(w, h) {
                return Err(DatasetError::Validation {
                    record,
                    message: format!("target {k} box {bbox} outside image bounds {w}x{h}"),
                });
            }
            Ok(Target { label: t.class.clone(), bbox })
        })
        .collect::<DatasetResult<Vec<_>>>()?;
    Ok(AnnotatedImage { name: rec.name.clone(), pixels: Raster::from_rgb8(&decoded), targets })
}

/// Writes `images/<name>.png` under `dir` plus the annotation file
/// `dir/<file_name>`, returning the annotation path.
pub fn save_dataset(dir: &Path, file_name: &str, images: &[AnnotatedImage]) -> DatasetResult<PathBuf> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(io(&img_dir))?;
    let ann_path = dir.join(file_name);
    let mut out = fs::File::create(&ann_path).map_err(io(&ann_path))?;
    for img in images {
        let rel = format!("images/{}.png", img.name);
        let png = dir.join(&rel);
        img.pixels
            .to_rgb8()
            .save(&png)
            .map_err(|source| DatasetError::Encode { path: png.clone(), source })?;
        let rec = AnnotationRecord {
            name: img.name.clone(),
            path: rel,
            width: img.width() as u32,
            height: img.height() as u32,
            targets: img
                .targets
                .iter()
                .map(|t| TargetRecord {
                    class: t.label.clone(),
                    xmin: t.bbox.xmin,
                    ymin: t.bbox.ymin,
                    xmax: t.bbox.xmax,
                    ymax: t.bbox.ymax,
                })
                .collect(),
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(out, "{line}").map_err(io(&ann_path))?;
    }
    Ok(ann_path)
}
