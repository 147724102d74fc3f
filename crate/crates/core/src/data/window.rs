use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::preprocess::{impute_mean, remove_outliers_iqr, standardize, PreprocessStats};
use super::RawSeries;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Evaluation protocol and `(train, val, test)` ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    /// 1: time-ordered split within each series. 2: whole series per split.
    pub protocol: u8,
    pub ratios: [f64; 3],
}

impl SplitSpec {
    pub fn protocol1(train: f64, val: f64, test: f64) -> Self {
        Self {
            protocol: 1,
            ratios: [train, val, test],
        }
    }

    pub fn protocol2(train: f64, val: f64, test: f64) -> Self {
        Self {
            protocol: 2,
            ratios: [train, val, test],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.protocol, 1 | 2) {
            return Err(Error::Config(format!("protocol must be 1 or 2, got {}", self.protocol)));
        }
        validate_ratios(&self.ratios)
    }
}

fn validate_ratios(r: &[f64; 3]) -> Result<()> {
    if r.iter().any(|&x| !(x > 0.0 && x < 1.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must each lie in (0, 1) and sum to 1, got {r:?}"
        )));
    }
    Ok(())
}

/// `floor(ratio·n)`, tolerant of ratios like 0.7 + 0.1 landing just below 0.8.
fn ratio_floor(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Protocol-1 time boundaries `[b1, b2]` for a series of length `len`.
pub(crate) fn time_boundaries(ratios: &[f64; 3], len: usize) -> [usize; 2] {
    [ratio_floor(ratios[0], len), ratio_floor(ratios[0] + ratios[1], len)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesInfo {
    pub id: String,
    pub len: usize,
}

/// A supervised pair: lookback `x` (`[M, t]`) immediately followed by target `y` (`[M, H]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub x: Tensor,
    pub y: Tensor,
    /// Index into [`WindowedDataset::series`].
    pub series: usize,
    pub start: usize,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub variables: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub series: Vec<SeriesInfo>,
    pub windows: Vec<Window>,
}

impl WindowedDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Window> + '_ {
        self.windows.iter().filter(move |w| w.split == Some(split))
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Series ids that contribute at least one window to `split`.
    pub fn series_ids(&self, split: Split) -> Vec<&str> {
        let mut ids: Vec<&str> = self.split(split).map(|w| self.series[w.series].id.as_str()).collect();
        ids.dedup();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn require_splits(&self) -> Result<()> {
        for s in Split::ALL {
            if self.count(s) == 0 {
                return Err(Error::Config(format!("the {s} split has no windows")));
            }
        }
        Ok(())
    }
}

/// Slides a `t + H` window over every series with the given stride.
pub fn make_windows(series: &[RawSeries], lookback: usize, horizon: usize, stride: usize) -> Result<WindowedDataset> {
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "lookback, horizon and stride must be at least 1 (got {lookback}, {horizon}, {stride})"
        )));
    }
    let m = series
        .first()
        .map(RawSeries::variables)
        .ok_or_else(|| Error::Config("no series given".into()))?;
    let mut windows = Vec::new();
    let mut infos = Vec::with_capacity(series.len());
    for (k, s) in series.iter().enumerate() {
        if s.variables() != m {
            return Err(Error::Config(format!(
                "series `{}` has {} variables, expected {m}",
                s.id,
                s.variables()
            )));
        }
        infos.push(SeriesInfo {
            id: s.id.clone(),
            len: s.len(),
        });
        let len = s.len();
        if len < lookback + horizon {
            continue;
        }
        for start in (0..=len - lookback - horizon).step_by(stride) {
            let x = Tensor::from_fn([m, lookback], |i| s.value(i / lookback, start + i % lookback));
            let y = Tensor::from_fn([m, horizon], |i| s.value(i / horizon, start + lookback + i % horizon));
            windows.push(Window {
                x,
                y,
                series: k,
                start,
                split: None,
            });
        }
    }
    if windows.is_empty() {
        return Err(Error::Config(format!(
            "no series is long enough for lookback {lookback} + horizon {horizon}"
        )));
    }
    Ok(WindowedDataset {
        variables: m,
        lookback,
        horizon,
        series: infos,
        windows,
    })
}

/// Time-ordered split: each series' axis is cut at `floor(r·T)` boundaries and a
/// window joins the split that contains its whole extent. Windows straddling a
/// boundary are dropped.
pub fn split_protocol1(dataset: &WindowedDataset, ratios: [f64; 3]) -> Result<WindowedDataset> {
    validate_ratios(&ratios)?;
    let span = dataset.lookback + dataset.horizon;
    let mut out = dataset.clone();
    out.windows.retain_mut(|w| {
        let [b1, b2] = time_boundaries(&ratios, dataset.series[w.series].len);
        let (lo, hi) = (w.start, w.start + span);
        w.split = if hi <= b1 {
            Some(Split::Train)
        } else if lo >= b1 && hi <= b2 {
            Some(Split::Val)
        } else if lo >= b2 {
            Some(Split::Test)
        } else {
            None
        };
        w.split.is_some()
    });
    out.require_splits()?;
    Ok(out)
}

/// Seeded assignment of whole series to splits by the ratios.
pub(crate) fn assign_series(n: usize, ratios: &[f64; 3], seed: u64) -> Result<Vec<Split>> {
    validate_ratios(ratios)?;
    if n < 3 {
        return Err(Error::Config(format!("protocol 2 needs at least 3 series, got {n}")));
    }
    let mut counts = [ratio_floor(ratios[0], n), ratio_floor(ratios[1], n), 0];
    counts[2] = n - counts[0] - counts[1];
    // Keep every split populated for small n by borrowing from the largest.
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let largest = (0..3).max_by_key(|&i| counts[i]).expect("three counts");
        counts[largest] -= 1;
        counts[empty] += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![Split::Train; n];
    for (rank, &idx) in order.iter().enumerate() {
        assignment[idx] = if rank < counts[0] {
            Split::Train
        } else if rank < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(assignment)
}

/// Entity split: whole series are shuffled with `seed` and dealt to splits.
pub fn split_protocol2(dataset: &WindowedDataset, ratios: [f64; 3], seed: u64) -> Result<WindowedDataset> {
    let assignment = assign_series(dataset.series.len(), &ratios, seed)?;
    let mut out = dataset.clone();
    for w in &mut out.windows {
        w.split = Some(assignment[w.series]);
    }
    out.require_splits()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    pub split: SplitSpec,
    /// Seeds the protocol-2 series shuffle.
    pub seed: u64,
}

/// Standardized windows with split labels, plus the statistics that produced them.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: WindowedDataset,
    pub stats: PreprocessStats,
    /// Series after outlier removal, imputation and standardization.
    pub series: Vec<RawSeries>,
}

/// Runs IQR outlier removal, mean imputation and standardization with statistics
/// from the training region only, then windows and splits.
pub fn prepare(series: &[RawSeries], spec: &PipelineSpec) -> Result<Prepared> {
    spec.split.validate()?;
    let train: Vec<Range<usize>> = match spec.split.protocol {
        1 => series
            .iter()
            .map(|s| 0..time_boundaries(&spec.split.ratios, s.len())[0])
            .collect(),
        _ => assign_series(series.len(), &spec.split.ratios, spec.seed)?
            .iter()
            .zip(series)
            .map(|(a, s)| if *a == Split::Train { 0..s.len() } else { 0..0 })
            .collect(),
    };
    let stats = PreprocessStats::fit(series, &train)?;
    let processed = series
        .iter()
        .map(|s| standardize(&impute_mean(&remove_outliers_iqr(s, &stats)?, &stats)?, &stats))
        .collect::<Result<Vec<_>>>()?;
    let windows = make_windows(&processed, spec.lookback, spec.horizon, spec.stride)?;
    let dataset = match spec.split.protocol {
        1 => split_protocol1(&windows, spec.split.ratios)?,
        _ => split_protocol2(&windows, spec.split.ratios, spec.seed)?,
    };
    Ok(Prepared {
        dataset,
        stats,
        series: processed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(id: &str, len: usize) -> RawSeries {
        RawSeries::from_values(id, Tensor::from_fn([2, len], |i| i as f64)).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&[ramp("a", 10)], 3, 2, 1).unwrap().windows.len(), 6);
        assert_eq!(make_windows(&[ramp("a", 5)], 3, 2, 1).unwrap().windows.len(), 1);
        assert!(matches!(make_windows(&[ramp("a", 4)], 3, 2, 1), Err(Error::Config(_))));
        assert_eq!(make_windows(&[ramp("a", 10)], 3, 2, 2).unwrap().windows.len(), 3);
        // short series are skipped, not fatal, when another qualifies
        let ds = make_windows(&[ramp("a", 4), ramp("b", 6)], 3, 2, 1).unwrap();
        assert!(ds.windows.iter().all(|w| w.series == 1));
    }

    #[test]
    fn windows_are_contiguous() {
        let s = ramp("a", 12);
        let ds = make_windows(std::slice::from_ref(&s), 4, 3, 1).unwrap();
        for w in &ds.windows {
            assert!(w.start + 7 <= 12);
            for i in 0..2 {
                for j in 0..4 {
                    assert_eq!(w.x.get(&[i, j]), s.value(i, w.start + j));
                }
                for j in 0..3 {
                    assert_eq!(w.y.get(&[i, j]), s.value(i, w.start + 4 + j));
                }
            }
        }
    }

    #[test]
    fn protocol1_boundaries() {
        assert_eq!(time_boundaries(&[0.7, 0.1, 0.2], 100), [70, 80]);
        assert_eq!(time_boundaries(&[0.5, 0.2, 0.3], 100), [50, 70]);
        let ds = make_windows(&[ramp("a", 100)], 3, 2, 1).unwrap();
        let split = split_protocol1(&ds, [0.7, 0.1, 0.2]).unwrap();
        assert!(split.windows.iter().all(|w| w.start != 68));
        assert_eq!(split.count(Split::Train), 66);
        assert_eq!(split.count(Split::Val), 6);
        assert_eq!(split.count(Split::Test), 16);
        assert!(split_protocol1(&ds, [0.7, 0.2, 0.2]).is_err());
    }

    #[test]
    fn protocol1_empty_split_is_an_error() {
        let ds = make_windows(&[ramp("a", 20)], 3, 2, 1).unwrap();
        assert!(matches!(split_protocol1(&ds, [0.7, 0.1, 0.2]), Err(Error::Config(_))));
    }

    #[test]
    fn protocol2_assignment() {
        let a = assign_series(100, &[0.5, 0.15, 0.35], 3).unwrap();
        let count = |s| a.iter().filter(|&&x| x == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (50, 15, 35));
        assert_eq!(a, assign_series(100, &[0.5, 0.15, 0.35], 3).unwrap());
        assert_ne!(a, assign_series(100, &[0.5, 0.15, 0.35], 4).unwrap());
        let small = assign_series(3, &[0.5, 0.15, 0.35], 0).unwrap();
        assert!(Split::ALL.iter().all(|s| small.contains(s)));
        assert!(assign_series(2, &[0.5, 0.15, 0.35], 0).is_err());
    }

    #[test]
    fn protocol2_keeps_series_together() {
        let series: Vec<_> = (0..10).map(|i| ramp(&format!("s{i}"), 9)).collect();
        let ds = make_windows(&series, 3, 2, 1).unwrap();
        let split = split_protocol2(&ds, [0.5, 0.2, 0.3], 1).unwrap();
        let ids: Vec<Vec<&str>> = Split::ALL.iter().map(|&s| split.series_ids(s)).collect();
        for a in 0..3 {
            for b in a + 1..3 {
                assert!(ids[a].iter().all(|x| !ids[b].contains(x)));
            }
        }
        assert_eq!(ids.iter().map(Vec::len).sum::<usize>(), 10);
    }

    #[test]
    fn prepare_uses_training_statistics() {
        let mut s = RawSeries::from_values("a", Tensor::from_fn([1, 100], |i| (i % 7) as f64)).unwrap();
        // A spike in the test region must not move the statistics.
        s.set_value(0, 95, 1e6);
        let spec = PipelineSpec {
            lookback: 5,
            horizon: 2,
            stride: 1,
            split: SplitSpec::protocol1(0.7, 0.1, 0.2),
            seed: 0,
        };
        let prepared = prepare(&[s.clone()], &spec).unwrap();
        let clean = RawSeries::from_values("a", Tensor::from_fn([1, 100], |i| (i % 7) as f64)).unwrap();
        let reference = prepare(&[clean], &spec).unwrap();
        assert_eq!(prepared.stats, reference.stats);
        // The spike is beyond the IQR fence, so it was imputed with the mean (0 after standardizing).
        assert_eq!(prepared.series[0].value(0, 95), 0.0);
    }
}
