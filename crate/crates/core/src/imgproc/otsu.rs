use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 256;

/// Result of an Otsu split over a histogram spanning `[min, max]` of the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuSplit {
    /// Last bin of the lower class.
    pub bin: usize,
    /// Center of `bin`.
    pub threshold: f64,
    pub lo: f64,
    pub bin_width: f64,
    pub bins: usize,
    /// Between-class variance at the chosen split.
    pub between_variance: f64,
}

impl OtsuSplit {
    #[inline]
    pub fn bin_of(&self, v: f64) -> usize {
        bin_index(v, self.lo, self.bin_width, self.bins)
    }

    /// True when `v` falls in a bin above the split.
    #[inline]
    pub fn is_above(&self, v: f64) -> bool {
        self.bin_of(v) > self.bin
    }
}

#[inline]
fn bin_index(v: f64, lo: f64, width: f64, bins: usize) -> usize {
    let i = ((v - lo) / width).floor();
    if i <= 0.0 {
        0
    } else {
        (i as usize).min(bins - 1)
    }
}

/// Otsu split maximizing the between-class variance `w0 w1 (mu0 - mu1)^2`.
///
/// Class means use bin centers. Ties resolve to the lowest bin.
pub fn otsu_split(values: &[f64], bins: usize) -> Result<OtsuSplit> {
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "otsu needs at least 2 values, got {}",
            values.len()
        )));
    }
    if bins < 2 {
        return Err(Error::invalid(format!("otsu needs at least 2 bins, got {bins}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("otsu values must be finite"));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        return Err(Error::DegenerateDistribution { count: values.len() });
    }
    let width = (hi - lo) / bins as f64;
    let mut hist = vec![0usize; bins];
    for &v in values {
        hist[bin_index(v, lo, width, bins)] += 1;
    }
    let center = |i: usize| lo + (i as f64 + 0.5) * width;

    let total = values.len() as f64;
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &h)| h as f64 * center(i)).sum();

    let mut best: Option<(usize, f64)> = None;
    let mut count0 = 0.0;
    let mut sum0 = 0.0;
    for (k, &h) in hist.iter().enumerate().take(bins - 1) {
        count0 += h as f64;
        sum0 += h as f64 * center(k);
        let count1 = total - count0;
        if count0 == 0.0 || count1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / count0;
        let mu1 = (total_sum - sum0) / count1;
        let var = (count0 / total) * (count1 / total) * (mu0 - mu1) * (mu0 - mu1);
        if best.is_none_or(|(_, b)| var > b) {
            best = Some((k, var));
        }
    }
    // hi > lo puts the min and max in different bins, so some split exists
    let (bin, between_variance) = best.expect("non-degenerate histogram has a split");
    Ok(OtsuSplit {
        bin,
        threshold: center(bin),
        lo,
        bin_width: width,
        bins,
        between_variance,
    })
}

/// Bin-center threshold of [`otsu_split`].
pub fn otsu_threshold(values: &[f64], bins: usize) -> Result<f64> {
    otsu_split(values, bins).map(|s| s.threshold)
}
