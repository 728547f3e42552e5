//! COCO instances JSON: parsing, typed annotations and small-object subsets.
//!
//! Records keep every key they were read with, so a filtered subset written
//! back out has the same schema as the input.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Boxes must lie inside their image up to this slack (px); published COCO
/// files contain boxes that overshoot by a fraction of a pixel.
pub const EXTENT_SLACK: f64 = 1.0;

/// Default small-object bound: area strictly below 32 x 32.
pub const SMALL_OBJECT_MAX_AREA: f64 = 1024.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, width, height]` in pixels.
    pub bbox: [f64; 4],
    /// As stored in the file; never used for filtering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<Value>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Validated annotation with the area recomputed as `w * h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub area: f64,
}

impl Annotation {
    pub fn new(image_id: u64, category_id: u64, bbox: BBox) -> Result<Self> {
        if !(bbox.w > 0.0 && bbox.h > 0.0) || ![bbox.x, bbox.y, bbox.w, bbox.h].iter().all(|v| v.is_finite()) {
            return Err(Error::Data(format!("bbox {bbox:?} must be finite with positive width and height")));
        }
        Ok(Self { image_id, category_id, bbox, area: bbox.w * bbox.h })
    }

    /// Anchor scale: side of the square with the same area.
    pub fn scale(&self) -> f64 {
        self.area.sqrt()
    }

    /// Aspect ratio `w / h`.
    pub fn ratio(&self) -> f64 {
        self.bbox.w / self.bbox.h
    }
}

/// Parses a COCO instances file. Errors name the file and the location
/// inside the document (e.g. `annotations[2].bbox`).
pub fn parse_coco(path: &Path) -> Result<CocoDataset> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
    parse_coco_str(&text).map_err(|e| match e {
        Error::Parse { path: inner, msg } => Error::Parse { path: format!("{}: {inner}", path.display()), msg },
        other => other,
    })
}

pub fn parse_coco_str(text: &str) -> Result<CocoDataset> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let dataset: CocoDataset = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: match e.path().to_string() {
            p if p == "." => "<document>".to_string(),
            p => p,
        },
        msg: e.inner().to_string(),
    })?;
    dataset.typed_annotations()?;
    Ok(dataset)
}

impl CocoDataset {
    /// Validated annotations in file order.
    pub fn typed_annotations(&self) -> Result<Vec<Annotation>> {
        let extents: std::collections::HashMap<u64, (Option<f64>, Option<f64>)> =
            self.images.iter().map(|im| (im.id, (im.width, im.height))).collect();
        self.annotations
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let [x, y, w, h] = a.bbox;
                let ann = Annotation::new(a.image_id, a.category_id, BBox { x, y, w, h })
                    .map_err(|e| Error::Parse { path: format!("annotations[{i}].bbox"), msg: e.to_string() })?;
                if let Some(&(iw, ih)) = extents.get(&a.image_id) {
                    let outside = |lo: f64, len: f64, extent: Option<f64>| {
                        extent.is_some_and(|e| lo < -EXTENT_SLACK || lo + len > e + EXTENT_SLACK)
                    };
                    if outside(x, w, iw) || outside(y, h, ih) {
                        return Err(Error::Parse {
                            path: format!("annotations[{i}].bbox"),
                            msg: format!("box {:?} exceeds image {} extents {iw:?}x{ih:?}", a.bbox, a.image_id),
                        });
                    }
                }
                Ok(ann)
            })
            .collect()
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(format!("serialising COCO subset: {e}")))
    }
}

/// Annotations whose recomputed area is strictly below `max_area`.
pub fn filter_small(annotations: &[Annotation], max_area: f64) -> Vec<Annotation> {
    annotations.iter().filter(|a| a.area < max_area).copied().collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub annotations_retained: usize,
    pub annotations_dropped: usize,
    pub images_retained: usize,
    pub images_dropped: usize,
}

/// Small-object subset of a whole dataset: keeps annotations with area below
/// `max_area` and the images that still have at least one of them.
pub fn filter_dataset(dataset: &CocoDataset, max_area: f64) -> Result<(CocoDataset, FilterStats)> {
    let typed = dataset.typed_annotations()?;
    let annotations: Vec<CocoAnnotation> = dataset
        .annotations
        .iter()
        .zip(&typed)
        .filter(|(_, t)| t.area < max_area)
        .map(|(raw, _)| raw.clone())
        .collect();
    let keep: HashSet<u64> = annotations.iter().map(|a| a.image_id).collect();
    let images: Vec<CocoImage> = dataset.images.iter().filter(|im| keep.contains(&im.id)).cloned().collect();
    let stats = FilterStats {
        annotations_retained: annotations.len(),
        annotations_dropped: dataset.annotations.len() - annotations.len(),
        images_retained: images.len(),
        images_dropped: dataset.images.len() - images.len(),
    };
    let subset = CocoDataset {
        images,
        annotations,
        categories: dataset.categories.clone(),
        extra: dataset.extra.clone(),
    };
    Ok((subset, stats))
}
