//! Annotation ingestion, anchor statistics and the synthetic dataset.

mod anchors;
mod coco;
mod histogram;
mod synthetic;

pub use anchors::{cluster_anchors, kmeans_1d, AnchorClustering, AnchorSet, KMeans1d, MAX_ITERATIONS};
pub use coco::{
    filter_dataset, filter_small, parse_coco, parse_coco_str, Annotation, BBox, CocoAnnotation, CocoDataset,
    CocoImage, FilterStats, EXTENT_SLACK, SMALL_OBJECT_MAX_AREA,
};
pub use histogram::{size_histogram, HistogramBins, HistogramRow, SizeHistogram};
pub use synthetic::{class_colour, generate_synthetic, item_seed, SyntheticConfig, SyntheticSample, Target};
