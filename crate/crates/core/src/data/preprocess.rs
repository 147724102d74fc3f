use std::ops::Range;

use super::RawSeries;
use crate::error::{Error, Result};

/// Values outside `[q1 − 1.5·IQR, q3 + 1.5·IQR]` are treated as outliers.
pub const IQR_MULTIPLIER: f64 = 1.5;

/// Lower bound on the standard deviation used when standardizing.
pub const STD_FLOOR: f64 = 1e-8;

/// Quantile of sorted data, interpolating linearly between order statistics.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-variable statistics, fitted on the training region only.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessStats {
    pub mean: Vec<f64>,
    /// Population standard deviation after outlier removal and imputation.
    pub std: Vec<f64>,
    pub q1: Vec<f64>,
    pub q3: Vec<f64>,
    /// Observed (non-missing) training values per variable before outlier removal.
    pub observed: Vec<usize>,
}

impl PreprocessStats {
    /// Fits quantiles on the observed raw training values, then the mean of the
    /// values that survive the IQR rule, then the standard deviation of the
    /// training region as it will look after mean imputation.
    ///
    /// `train[k]` is the training time range of `series[k]` (possibly empty).
    pub fn fit(series: &[RawSeries], train: &[Range<usize>]) -> Result<Self> {
        let m = series
            .first()
            .map(RawSeries::variables)
            .ok_or_else(|| Error::Config("no series to fit preprocessing on".into()))?;
        if series.len() != train.len() {
            return Err(Error::Config("one training range per series is required".into()));
        }
        let mut stats = Self {
            mean: vec![0.0; m],
            std: vec![0.0; m],
            q1: vec![0.0; m],
            q3: vec![0.0; m],
            observed: vec![0; m],
        };
        let total: usize = train.iter().map(|r| r.len()).sum();
        for i in 0..m {
            let mut obs: Vec<f64> = series
                .iter()
                .zip(train)
                .flat_map(|(s, r)| s.observed(i, r.clone()))
                .collect();
            stats.observed[i] = obs.len();
            if obs.is_empty() {
                continue;
            }
            obs.sort_by(|a, b| a.total_cmp(b));
            let (q1, q3) = (quantile_linear(&obs, 0.25), quantile_linear(&obs, 0.75));
            stats.q1[i] = q1;
            stats.q3[i] = q3;
            let (lo, hi) = stats.bounds(i);
            let kept: Vec<f64> = obs.into_iter().filter(|v| (lo..=hi).contains(v)).collect();
            let mean = kept.iter().sum::<f64>() / kept.len() as f64;
            let ss: f64 = kept.iter().map(|v| (v - mean).powi(2)).sum();
            stats.mean[i] = mean;
            stats.std[i] = (ss / total as f64).sqrt();
        }
        Ok(stats)
    }

    pub fn variables(&self) -> usize {
        self.mean.len()
    }

    /// Inclusive inlier bounds for variable `var`.
    pub fn bounds(&self, var: usize) -> (f64, f64) {
        let iqr = self.q3[var] - self.q1[var];
        (self.q1[var] - IQR_MULTIPLIER * iqr, self.q3[var] + IQR_MULTIPLIER * iqr)
    }

    pub fn scale(&self, var: usize) -> f64 {
        self.std[var].max(STD_FLOOR)
    }

    pub fn destandardize(&self, var: usize, z: f64) -> f64 {
        z * self.scale(var) + self.mean[var]
    }

    fn check(&self, series: &RawSeries) -> Result<()> {
        if series.variables() != self.variables() {
            return Err(Error::dim(
                "preprocess",
                &[series.variables()],
                &[self.variables()],
            ));
        }
        Ok(())
    }
}

/// Marks values outside the IQR bounds as missing.
pub fn remove_outliers_iqr(series: &RawSeries, stats: &PreprocessStats) -> Result<RawSeries> {
    stats.check(series)?;
    let mut out = series.clone();
    for i in 0..series.variables() {
        let (lo, hi) = stats.bounds(i);
        for s in 0..series.len() {
            let v = series.value(i, s);
            if !series.is_missing(i, s) && !(lo..=hi).contains(&v) {
                out.set_missing(i, s);
            }
        }
    }
    Ok(out)
}

/// Replaces every missing entry with its variable's training mean.
pub fn impute_mean(series: &RawSeries, stats: &PreprocessStats) -> Result<RawSeries> {
    stats.check(series)?;
    if let Some(i) = stats.observed.iter().position(|&n| n == 0) {
        return Err(Error::Imputation {
            variable: series.names[i].clone(),
        });
    }
    let mut out = series.clone();
    for i in 0..series.variables() {
        for s in 0..series.len() {
            if series.is_missing(i, s) {
                out.set_value(i, s, stats.mean[i]);
            }
        }
    }
    out.clear_missing();
    Ok(out)
}

/// `(v − mean) / max(std, 1e-8)` per variable.
pub fn standardize(series: &RawSeries, stats: &PreprocessStats) -> Result<RawSeries> {
    stats.check(series)?;
    let mut out = series.clone();
    for i in 0..series.variables() {
        let (mean, scale) = (stats.mean[i], stats.scale(i));
        for s in 0..series.len() {
            out.set_value(i, s, (series.value(i, s) - mean) / scale);
        }
    }
    Ok(out)
}
