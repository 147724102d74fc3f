//! Command implementations behind the `nft` binary.
//!
//! Every command reads a [`RunConfig`], writes its artifacts under the
//! configured output directory, and returns what it wrote so tests can
//! inspect results without parsing stdout.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use nft_core::checkpoint;
use nft_core::metrics::compare;
use nft_core::training::check_compatible;
use nft_core::{
    evaluate, evaluate_raw, prepare, train, Comparison, Error, MetricsReport, NftModel, Prepared, Result, Split,
    Tensor, TrainingHistory,
};

pub use config::RunConfig;

pub const CHECKPOINT_FILE: &str = "checkpoint.nft";
pub const HISTORY_FILE: &str = "history.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const REPORT_FILE: &str = "report.txt";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const DECOMPOSITION_FILE: &str = "decomposition.csv";
pub const COMPARISON_FILE: &str = "comparison.txt";

/// 2 for problems with the user's inputs, 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::Imputation { .. }
        | Error::Checkpoint(_)
        | Error::Compatibility(_)
        | Error::Domain(_)
        | Error::Degenerate(_) => 2,
        Error::Dimension { .. } | Error::Evaluation(_) | Error::Divergence { .. } => 1,
    }
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::Io {
        path: cfg.out.clone(),
        source: e,
    })?;
    Ok(&cfg.out)
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

/// Loads and prepares the configured data.
pub fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    prepare(&cfg.load_series()?, &cfg.pipeline())
}

fn load_checked(cfg: &RunConfig, checkpoint_path: &Path) -> Result<(NftModel, Prepared)> {
    let model = checkpoint::load(checkpoint_path)?;
    let prepared = load_prepared(cfg)?;
    check_compatible(&model, &prepared.dataset)?;
    Ok((model, prepared))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub history: TrainingHistory,
    pub model: NftModel,
}

/// Data pipeline, training, then the checkpoint, history and resolved config.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let prepared = load_prepared(cfg)?;
    let initial = NftModel::new(cfg.model(prepared.dataset.variables))?;
    let (model, history) = train(&initial, &prepared.dataset, &cfg.training())?;
    let dir = out_dir(cfg)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    checkpoint::save(&model, &ckpt)?;
    history.write_csv(dir.join(HISTORY_FILE))?;
    write(dir.join(RESOLVED_CONFIG_FILE), &cfg.to_toml())?;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        history,
        model,
    })
}

/// Standardized and raw-scale MSE of a checkpoint on one split.
pub fn cmd_eval(cfg: &RunConfig, checkpoint_path: &Path, split: Split) -> Result<MetricsReport> {
    let (model, prepared) = load_checked(cfg, checkpoint_path)?;
    let std_eval = evaluate(&model, &prepared.dataset, split)?;
    let raw_eval = evaluate_raw(&model, &prepared.dataset, split, &prepared.stats)?;
    let report = MetricsReport {
        method: format!("nft-{}", model.config().learner.name()),
        split: split.to_string(),
        windows: std_eval.per_window.len(),
        mse: std_eval.aggregate,
        mse_raw: Some(raw_eval.aggregate),
        per_horizon: std_eval.per_horizon,
        per_horizon_raw: Some(raw_eval.per_horizon),
    };
    report.write(out_dir(cfg)?.join(REPORT_FILE))?;
    Ok(report)
}

/// Forecasts the `H` steps after the end of every series from its last `t` steps.
///
/// Columns: `series,time_index,variable,forecast,forecast_standardized`.
pub fn cmd_forecast(cfg: &RunConfig, checkpoint_path: &Path) -> Result<PathBuf> {
    let (model, prepared) = load_checked(cfg, checkpoint_path)?;
    let (m, t, h) = (model.variables(), model.lookback(), model.horizon());
    let mut w = csv_writer()?;
    w.write_record(["series", "time_index", "variable", "forecast", "forecast_standardized"])
        .map_err(csv_err)?;
    for s in &prepared.series {
        if s.len() < t {
            continue;
        }
        let start = s.len() - t;
        let x = Tensor::from_fn([1, m, t], |i| s.value(i / t, start + i % t));
        let total = model.forward(&x)?.total;
        for i in 0..m {
            for k in 0..h {
                let z = total.data()[i * h + k];
                w.write_record([
                    s.id.clone(),
                    (s.len() + k).to_string(),
                    s.names[i].clone(),
                    prepared.stats.destandardize(i, z).to_string(),
                    z.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    finish_csv(w, out_dir(cfg)?.join(FORECAST_FILE))
}

/// Per-stack forecast components of test window `window`, standardized scale.
///
/// Columns: `time_index,variable`, one column per stack in model order, `total`.
/// Rows run over variables, then forecast steps.
pub fn cmd_decompose(cfg: &RunConfig, checkpoint_path: &Path, window: usize) -> Result<PathBuf> {
    let (model, prepared) = load_checked(cfg, checkpoint_path)?;
    let tests: Vec<_> = prepared.dataset.split(Split::Test).collect();
    let w = tests.get(window).ok_or_else(|| {
        Error::Config(format!(
            "window {window} out of range: the test split has {} windows",
            tests.len()
        ))
    })?;
    let (m, h) = (model.variables(), model.horizon());
    let dec = model.decompose(&Tensor::stack(std::slice::from_ref(&w.x))?)?;
    let names = &prepared.series[w.series].names;
    let mut out = csv_writer()?;
    let mut header = vec!["time_index".to_owned(), "variable".to_owned()];
    header.extend(dec.components.iter().map(|(n, _)| n.clone()));
    header.push("total".into());
    out.write_record(&header).map_err(csv_err)?;
    for (i, name) in names.iter().enumerate().take(m) {
        for k in 0..h {
            let at = i * h + k;
            let mut row = vec![(w.start + model.lookback() + k).to_string(), name.clone()];
            row.extend(dec.components.iter().map(|(_, c)| c.data()[at].to_string()));
            row.push(dec.total.data()[at].to_string());
            out.write_record(&row).map_err(csv_err)?;
        }
    }
    finish_csv(out, out_dir(cfg)?.join(DECOMPOSITION_FILE))
}

/// Writes the configured synthetic series as `series_NNN.csv`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    if cfg.data.is_some() {
        return Err(Error::Config("synth generates data; remove `data` from the config".into()));
    }
    cfg.validate()?;
    let dir = out_dir(cfg)?.to_path_buf();
    cfg.load_series()?
        .iter()
        .map(|s| {
            let path = dir.join(format!("{}.csv", s.id));
            nft_core::write_csv(s, &path)?;
            Ok(path)
        })
        .collect()
}

/// Per-horizon improvement of `model_report` over `baseline_report`.
pub fn cmd_compare(model_report: &Path, baseline_report: &Path, out: &Path) -> Result<Comparison> {
    let cmp = compare(&MetricsReport::read(model_report)?, &MetricsReport::read(baseline_report)?)?;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    write(out.join(COMPARISON_FILE), &cmp.to_text())?;
    Ok(cmp)
}

fn csv_writer() -> Result<csv::Writer<Vec<u8>>> {
    Ok(csv::Writer::from_writer(Vec::new()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Evaluation(format!("csv encoding failed: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>, path: PathBuf) -> Result<PathBuf> {
    let bytes = w.into_inner().map_err(|e| Error::Evaluation(e.to_string()))?;
    fs::write(&path, bytes).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}
