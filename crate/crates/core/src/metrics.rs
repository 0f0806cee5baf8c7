//! Sample-quality metrics for 2-D point clouds and class labels.

use crate::error::{Error, Result};

/// Bins per axis of the comparison histograms.
pub const JSD_BINS: usize = 64;
/// Histogram bounds are the reference bounding box with half-widths scaled
/// by `1 + JSD_MARGIN`.
pub const JSD_MARGIN: f64 = 0.1;
/// Samples outside the reference box with half-widths scaled by this count
/// as outliers.
pub const OUTLIER_INFLATION: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn of_points(points: &[[f64; 2]]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::OutOfRange("bounds of an empty point cloud".into()));
        }
        let mut b = Bounds {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for &[x, y] in points {
            if !(x.is_finite() && y.is_finite()) {
                return Err(Error::NonFinite("point cloud"));
            }
            b.x_min = b.x_min.min(x);
            b.x_max = b.x_max.max(x);
            b.y_min = b.y_min.min(y);
            b.y_max = b.y_max.max(y);
        }
        Ok(b)
    }

    /// Scale both half-widths about the center.
    pub fn inflate(&self, factor: f64) -> Self {
        let (cx, cy) = ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0);
        let (hx, hy) = (factor * (self.x_max - self.x_min) / 2.0, factor * (self.y_max - self.y_min) / 2.0);
        Bounds {
            x_min: cx - hx,
            x_max: cx + hx,
            y_min: cy - hy,
            y_max: cy + hy,
        }
    }

    pub fn contains(&self, [x, y]: [f64; 2]) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    counts: Vec<u64>,
    bins: usize,
    bounds: Bounds,
}

impl Histogram2D {
    /// Points outside `bounds` land in the nearest edge bin.
    pub fn new(points: &[[f64; 2]], bounds: Bounds, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::OutOfRange("histogram needs at least one bin".into()));
        }
        if !(bounds.x_max > bounds.x_min && bounds.y_max > bounds.y_min) {
            return Err(Error::OutOfRange("histogram bounds must have positive extent".into()));
        }
        let mut counts = vec![0u64; bins * bins];
        let bin_of = |v: f64, lo: f64, hi: f64| -> usize {
            let f = ((v - lo) / (hi - lo) * bins as f64).floor();
            f.clamp(0.0, (bins - 1) as f64) as usize
        };
        for &[x, y] in points {
            if !(x.is_finite() && y.is_finite()) {
                return Err(Error::NonFinite("histogram input"));
            }
            let i = bin_of(x, bounds.x_min, bounds.x_max);
            let j = bin_of(y, bounds.y_min, bounds.y_max);
            counts[j * bins + i] += 1;
        }
        Ok(Self { counts, bins, bounds })
    }

    /// Histogram from raw counts (row-major, `y` outer).
    pub fn from_counts(counts: Vec<u64>, bins: usize, bounds: Bounds) -> Result<Self> {
        if counts.len() != bins * bins {
            return Err(Error::DimensionMismatch {
                what: "histogram counts",
                expected: bins * bins,
                got: counts.len(),
            });
        }
        Ok(Self { counts, bins, bounds })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Base-2 Jensen-Shannon divergence between two normalized histograms.
pub fn hist_jsd(a: &Histogram2D, b: &Histogram2D) -> Result<f64> {
    if a.bins != b.bins || a.bounds != b.bounds {
        return Err(Error::Config("histograms differ in bins or bounds".into()));
    }
    let (ta, tb) = (a.total(), b.total());
    if ta == 0 || tb == 0 {
        return Err(Error::OutOfRange("histogram is empty".into()));
    }
    let mut jsd = 0.0;
    for (&ca, &cb) in a.counts.iter().zip(&b.counts) {
        let p = ca as f64 / ta as f64;
        let q = cb as f64 / tb as f64;
        let m = 0.5 * (p + q);
        if p > 0.0 {
            jsd += 0.5 * p * (p / m).log2();
        }
        if q > 0.0 {
            jsd += 0.5 * q * (q / m).log2();
        }
    }
    Ok(jsd.clamp(0.0, 1.0))
}

/// Histograms of both clouds on the reference box (inflated by
/// [`JSD_MARGIN`]) with [`JSD_BINS`] bins per axis, and their JSD.
pub fn cloud_jsd(generated: &[[f64; 2]], reference: &[[f64; 2]]) -> Result<(f64, Bounds)> {
    let bounds = Bounds::of_points(reference)?.inflate(1.0 + JSD_MARGIN);
    let a = Histogram2D::new(generated, bounds, JSD_BINS)?;
    let b = Histogram2D::new(reference, bounds, JSD_BINS)?;
    Ok((hist_jsd(&a, &b)?, bounds))
}

/// Fraction of samples outside `reference` inflated by `inflation`.
pub fn outlier_rate(samples: &[[f64; 2]], reference: Bounds, inflation: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::OutOfRange("outlier rate of no samples".into()));
    }
    let bounds = reference.inflate(inflation);
    let outside = samples.iter().filter(|&&p| !bounds.contains(p)).count();
    Ok(outside as f64 / samples.len() as f64)
}

/// Empirical class frequencies of `labels` over `classes` classes.
pub fn class_proportions(labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::OutOfRange("no labels".into()));
    }
    let mut counts = vec![0usize; classes];
    for &l in labels {
        if l >= classes {
            return Err(Error::IndexOutOfRange { index: l, classes });
        }
        counts[l] += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / labels.len() as f64).collect())
}

/// Largest absolute gap between empirical and reference class proportions.
pub fn class_proportion_error(labels: &[usize], reference: &[f64]) -> Result<f64> {
    if reference.len() < 2 {
        return Err(Error::OutOfRange("class proportions need K >= 2".into()));
    }
    let empirical = class_proportions(labels, reference.len())?;
    Ok(empirical
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - r).abs())
        .fold(0.0, f64::max))
}
