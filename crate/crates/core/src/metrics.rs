//! Improvement percentages, Pearson correlation, paired t-tests and the
//! plain-text metrics report.
//!
//! Report format (one `key=value` per line, then a table):
//!
//! ```text
//! method=nft
//! split=test
//! windows=240
//! mse=0.0123
//! mse_raw=0.456
//! horizon,mse,mse_raw
//! 1,0.0101,0.401
//! ```
//!
//! `mse_raw` is optional in both places. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// `(baseline − model) / baseline · 100`.
pub fn improvement_percent(model_mse: f64, baseline_mse: f64) -> Result<f64> {
    if baseline_mse.is_nan() || baseline_mse <= 0.0 {
        return Err(Error::Domain(format!("baseline MSE must be > 0, got {baseline_mse}")));
    }
    Ok((baseline_mse - model_mse) / baseline_mse * 100.0)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Domain(format!(
            "pearson_correlation needs two equal-length lists of at least 2 values, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation of a constant sequence is undefined".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t_statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    pub degrees_of_freedom: usize,
}

/// Paired t-test on `a − b` with sample standard deviation.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Domain(format!(
            "paired_t_test needs two equal-length lists of at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let md = mean(&d);
    let var = d.iter().map(|v| (v - md).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(Error::Degenerate("differences have zero variance".into()));
    }
    let t = md / (var.sqrt() / n.sqrt());
    let df = d.len() - 1;
    Ok(TTest {
        t_statistic: t,
        p_value: student_t_two_sided_p(t, df as f64),
        degrees_of_freedom: df,
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(0.5 * df, 0.5, x)
}

/// Lanczos approximation (g = 7, 9 terms).
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `I_x(a, b)` by the continued fraction, using the symmetry relation where it
/// converges faster.
fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Modified Lentz evaluation.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Test-set accuracy of one method, per forecast step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub split: String,
    pub windows: usize,
    /// Aggregate MSE on the standardized scale.
    pub mse: f64,
    pub mse_raw: Option<f64>,
    pub per_horizon: Vec<f64>,
    pub per_horizon_raw: Option<Vec<f64>>,
}

impl MetricsReport {
    pub fn horizons(&self) -> Vec<usize> {
        (1..=self.per_horizon.len()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "method={}", self.method).unwrap();
        writeln!(s, "split={}", self.split).unwrap();
        writeln!(s, "windows={}", self.windows).unwrap();
        writeln!(s, "mse={}", self.mse).unwrap();
        if let Some(raw) = self.mse_raw {
            writeln!(s, "mse_raw={raw}").unwrap();
        }
        match &self.per_horizon_raw {
            Some(raw) => {
                s.push_str("horizon,mse,mse_raw\n");
                for (h, (v, r)) in self.per_horizon.iter().zip(raw).enumerate() {
                    writeln!(s, "{},{v},{r}", h + 1).unwrap();
                }
            }
            None => {
                s.push_str("horizon,mse\n");
                for (h, v) in self.per_horizon.iter().enumerate() {
                    writeln!(s, "{},{v}", h + 1).unwrap();
                }
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Config(format!("report line {line}: {msg}"));
        let num = |line: usize, v: &str| v.trim().parse::<f64>().map_err(|_| bad(line, format!("`{v}` is not a number")));
        let mut method = None;
        let mut split = None;
        let mut windows = None;
        let mut mse = None;
        let mut mse_raw = None;
        let mut table: Option<bool> = None;
        let mut per_horizon = Vec::new();
        let mut per_horizon_raw = Vec::new();
        for (i, raw_line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(with_raw) = table {
                let cells: Vec<&str> = line.split(',').collect();
                if cells.len() != 2 + usize::from(with_raw) {
                    return Err(bad(ln, "wrong number of table cells".into()));
                }
                let h: usize = cells[0].trim().parse().map_err(|_| bad(ln, format!("bad horizon `{}`", cells[0])))?;
                if h != per_horizon.len() + 1 {
                    return Err(bad(ln, format!("expected horizon {}, got {h}", per_horizon.len() + 1)));
                }
                per_horizon.push(num(ln, cells[1])?);
                if with_raw {
                    per_horizon_raw.push(num(ln, cells[2])?);
                }
                continue;
            }
            match line {
                "horizon,mse" => table = Some(false),
                "horizon,mse,mse_raw" => table = Some(true),
                _ => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| bad(ln, format!("expected key=value, got `{line}`")))?;
                    match k.trim() {
                        "method" => method = Some(v.trim().to_owned()),
                        "split" => split = Some(v.trim().to_owned()),
                        "windows" => {
                            windows = Some(v.trim().parse().map_err(|_| bad(ln, format!("bad window count `{v}`")))?)
                        }
                        "mse" => mse = Some(num(ln, v)?),
                        "mse_raw" => mse_raw = Some(num(ln, v)?),
                        other => return Err(bad(ln, format!("unknown key `{other}`"))),
                    }
                }
            }
        }
        let missing = |k: &str| Error::Config(format!("report is missing `{k}`"));
        if table.is_none() || per_horizon.is_empty() {
            return Err(missing("per-horizon table"));
        }
        Ok(Self {
            method: method.ok_or_else(|| missing("method"))?,
            split: split.ok_or_else(|| missing("split"))?,
            windows: windows.ok_or_else(|| missing("windows"))?,
            mse: mse.ok_or_else(|| missing("mse"))?,
            mse_raw,
            per_horizon,
            per_horizon_raw: (table == Some(true)).then_some(per_horizon_raw),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// A statistic that may be undefined for degenerate inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Statistic<T> {
    Value(T),
    Undefined(String),
}

impl<T> Statistic<T> {
    fn from_result(r: Result<T>) -> Result<Self> {
        match r {
            Ok(v) => Ok(Statistic::Value(v)),
            Err(Error::Degenerate(msg)) => Ok(Statistic::Undefined(msg)),
            Err(e) => Err(e),
        }
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            Statistic::Value(v) => Some(v),
            Statistic::Undefined(_) => None,
        }
    }
}

/// Model report versus baseline report, horizon by horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub model: String,
    pub baseline: String,
    pub model_mse: Vec<f64>,
    pub baseline_mse: Vec<f64>,
    /// `None` where the baseline MSE is not positive.
    pub improvement: Vec<Option<f64>>,
    /// Mean of the defined per-horizon improvements.
    pub mean_improvement: Option<f64>,
    /// Pearson r between horizon and improvement.
    pub correlation: Statistic<f64>,
    /// Paired over per-horizon MSEs, model minus baseline.
    pub t_test: Statistic<TTest>,
}

pub fn compare(model: &MetricsReport, baseline: &MetricsReport) -> Result<Comparison> {
    if model.per_horizon.len() != baseline.per_horizon.len() {
        return Err(Error::Compatibility(format!(
            "reports cover different horizons: {} vs {}",
            model.per_horizon.len(),
            baseline.per_horizon.len()
        )));
    }
    let improvement: Vec<Option<f64>> = model
        .per_horizon
        .iter()
        .zip(&baseline.per_horizon)
        .map(|(&m, &b)| improvement_percent(m, b).ok())
        .collect();
    let defined: Vec<(f64, f64)> = improvement
        .iter()
        .enumerate()
        .filter_map(|(h, v)| v.map(|v| ((h + 1) as f64, v)))
        .collect();
    let mean_improvement = (!defined.is_empty()).then(|| defined.iter().map(|p| p.1).sum::<f64>() / defined.len() as f64);
    let correlation = if defined.len() < 2 {
        Statistic::Undefined("fewer than two horizons with a positive baseline".into())
    } else {
        let (h, imp): (Vec<f64>, Vec<f64>) = defined.into_iter().unzip();
        Statistic::from_result(pearson_correlation(&h, &imp))?
    };
    let t_test = if model.per_horizon.len() < 2 {
        Statistic::Undefined("a paired t-test needs at least two horizons".into())
    } else {
        Statistic::from_result(paired_t_test(&model.per_horizon, &baseline.per_horizon))?
    };
    Ok(Comparison {
        model: model.method.clone(),
        baseline: baseline.method.clone(),
        model_mse: model.per_horizon.clone(),
        baseline_mse: baseline.per_horizon.clone(),
        improvement,
        mean_improvement,
        correlation,
        t_test,
    })
}

impl Comparison {
    /// Notices for every undefined statistic.
    pub fn notices(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Statistic::Undefined(m) = &self.correlation {
            out.push(format!("correlation undefined: {m}"));
        }
        if let Statistic::Undefined(m) = &self.t_test {
            out.push(format!("t-test undefined: {m}"));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_owned(), |v| v.to_string());
        let mut s = String::new();
        writeln!(s, "model={}", self.model).unwrap();
        writeln!(s, "baseline={}", self.baseline).unwrap();
        writeln!(s, "mean_improvement_percent={}", opt(self.mean_improvement)).unwrap();
        writeln!(s, "correlation={}", opt(self.correlation.value().copied())).unwrap();
        let t = self.t_test.value();
        writeln!(s, "t_statistic={}", opt(t.map(|t| t.t_statistic))).unwrap();
        writeln!(s, "p_value={}", opt(t.map(|t| t.p_value))).unwrap();
        for n in self.notices() {
            writeln!(s, "# notice: {n}").unwrap();
        }
        s.push_str("horizon,model_mse,baseline_mse,improvement_percent\n");
        for (h, ((m, b), i)) in self.model_mse.iter().zip(&self.baseline_mse).zip(&self.improvement).enumerate() {
            writeln!(s, "{},{m},{b},{}", h + 1, opt(*i)).unwrap();
        }
        s
    }
}
