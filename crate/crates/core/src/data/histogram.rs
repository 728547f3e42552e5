//! Two-dimensional width/height histogram of box sizes.

use serde::{Deserialize, Serialize};

use super::coco::Annotation;
use crate::error::{Error, Result};

/// Square bins of `bin_width` px, `bins` per axis, starting at zero. Sizes
/// past the last edge fall into the last bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBins {
    pub bin_width: f64,
    pub bins: usize,
}

impl Default for HistogramBins {
    fn default() -> Self {
        Self { bin_width: 4.0, bins: 8 }
    }
}

impl HistogramBins {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) || self.bins == 0 {
            return Err(Error::Config(format!("histogram bins need a positive width and count, got {self:?}")));
        }
        Ok(())
    }

    fn index(&self, v: f64) -> usize {
        ((v / self.bin_width).floor() as usize).min(self.bins - 1)
    }
}

/// One emitted cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub w_bin: usize,
    pub h_bin: usize,
    pub w_lo: f64,
    pub w_hi: f64,
    pub h_lo: f64,
    pub h_hi: f64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeHistogram {
    pub bins: HistogramBins,
    /// Row-major over (w_bin, h_bin).
    pub counts: Vec<u64>,
}

impl SizeHistogram {
    pub fn count(&self, w_bin: usize, h_bin: usize) -> u64 {
        self.counts[w_bin * self.bins.bins + h_bin]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Every cell, zero counts included, in row-major order.
    pub fn rows(&self) -> Vec<HistogramRow> {
        let HistogramBins { bin_width, bins } = self.bins;
        (0..bins)
            .flat_map(|w| (0..bins).map(move |h| (w, h)))
            .map(|(w, h)| HistogramRow {
                w_bin: w,
                h_bin: h,
                w_lo: w as f64 * bin_width,
                w_hi: (w + 1) as f64 * bin_width,
                h_lo: h as f64 * bin_width,
                h_hi: (h + 1) as f64 * bin_width,
                count: self.count(w, h),
            })
            .collect()
    }
}

pub fn size_histogram(annotations: &[Annotation], bins: HistogramBins) -> Result<SizeHistogram> {
    bins.validate()?;
    let mut counts = vec![0u64; bins.bins * bins.bins];
    for a in annotations {
        counts[bins.index(a.bbox.w) * bins.bins + bins.index(a.bbox.h)] += 1;
    }
    Ok(SizeHistogram { bins, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::coco::BBox;

    fn ann(w: f64, h: f64) -> Annotation {
        Annotation::new(1, 1, BBox { x: 0.0, y: 0.0, w, h }).unwrap()
    }

    #[test]
    fn single_box_lands_in_one_cell() {
        let hist = size_histogram(&[ann(5.0, 8.0)], HistogramBins { bin_width: 10.0, bins: 4 }).unwrap();
        assert_eq!(hist.count(0, 0), 1);
        assert_eq!(hist.total(), 1);
        assert_eq!(hist.rows().len(), 16);
    }

    #[test]
    fn empty_input_is_all_zero() {
        let hist = size_histogram(&[], HistogramBins::default()).unwrap();
        assert!(hist.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn overflow_goes_to_last_bin() {
        let hist = size_histogram(&[ann(500.0, 1.0)], HistogramBins { bin_width: 10.0, bins: 3 }).unwrap();
        assert_eq!(hist.count(2, 0), 1);
        assert!(size_histogram(&[], HistogramBins { bin_width: 0.0, bins: 3 }).is_err());
    }
}
