//! End-to-end runs: train, evaluate, ablate, count FLOPs, predict.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::MixupMode;
use crate::config::ExperimentConfig;
use crate::data::{
    load_csv, make_splits, normalize_global, prediction_records, write_predictions, Scaler, Splits, TimeSeriesTable,
    WindowDataset,
};
use crate::error::{Error, Result};
use crate::model::{estimate_flops, CMambaModel, Checkpoint, FlopReport};
use crate::rng::{streams, Rng};
use crate::ssm::AblationCase;
use crate::tensor::{ParamStore, Tensor};
use crate::train::{metrics, predict_dataset, train, SplitData, TrainReport};

pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.txt";
pub const TIMING_FILE: &str = "timing.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

/// A dataset loaded, normalized with training statistics, and windowed.
pub struct Prepared {
    pub table: TimeSeriesTable,
    pub scaler: Scaler,
    pub splits: Splits,
    pub data: SplitData,
}

fn dataset_path(cfg: &ExperimentConfig) -> Result<&Path> {
    cfg.dataset_path
        .as_deref()
        .ok_or_else(|| Error::Config("dataset_path is not set".into()))
}

fn check_channels(cfg: &ExperimentConfig, found: usize) -> Result<()> {
    match cfg.channels {
        Some(c) if c != found => Err(Error::Config(format!(
            "config declares channels = {c} but the dataset has {found}"
        ))),
        _ => Ok(()),
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let raw = load_csv(dataset_path(cfg)?, cfg.has_timestamp)?;
    check_channels(cfg, raw.channels)?;
    let splits = make_splits(raw.rows, &cfg.split_spec()?, cfg.look_back, cfg.horizon)?;
    let (table, scaler) = normalize_global(&raw, splits.train.clone())?;
    let window = |rows: &std::ops::Range<usize>| -> Result<Option<WindowDataset>> {
        if rows.len() < cfg.look_back + cfg.horizon {
            return Ok(None);
        }
        WindowDataset::new(&table, rows.clone(), cfg.look_back, cfg.horizon).map(Some)
    };
    let data = SplitData {
        train: WindowDataset::new(&table, splits.train.clone(), cfg.look_back, cfg.horizon)?,
        val: window(&splits.val)?,
        test: window(&splits.test)?,
    };
    Ok(Prepared {
        table,
        scaler,
        splits,
        data,
    })
}

/// A freshly initialized model for `channels` series.
pub fn build_model(cfg: &ExperimentConfig, channels: usize) -> Result<(CMambaModel, ParamStore)> {
    let model_cfg = cfg.model_config(channels)?;
    let mut store = ParamStore::new();
    let mut init = Rng::new(cfg.seed).child(streams::INIT);
    let model = CMambaModel::new(&mut store, &model_cfg, &mut init)?;
    Ok((model, store))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::file(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

fn scaler_tensors(scaler: &Scaler) -> Vec<(String, Tensor)> {
    let n = scaler.mean.len();
    vec![
        ("scaler.mean".into(), Tensor::new([n], scaler.mean.clone()).expect("scaler shape")),
        ("scaler.std".into(), Tensor::new([n], scaler.std.clone()).expect("scaler shape")),
    ]
}

fn test_predictions(model: &CMambaModel, store: &ParamStore, prep: &Prepared, batch_size: usize, path: &Path) -> Result<Option<(f64, f64)>> {
    match &prep.data.test {
        Some(test) => {
            let (pred, truth) = predict_dataset(model, store, test, batch_size)?;
            write_predictions(path, &prediction_records(0, Some(&truth), &pred))?;
            Ok(Some(metrics(&pred, &truth)?))
        }
        None => {
            write_predictions(path, &[])?;
            Ok(None)
        }
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub output_dir: PathBuf,
}

/// Trains one configuration and writes every artifact into `out_dir`:
/// the resolved config, the report, wall time, a checkpoint, and test-split
/// predictions in normalized units.
pub fn run_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainOutcome> {
    let prep = prepare(cfg)?;
    let mut resolved = cfg.clone();
    resolved.channels = Some(prep.table.channels);
    let train_cfg = resolved.train_config()?;
    let (model, mut store) = build_model(&resolved, prep.table.channels)?;
    let report = train(&model, &mut store, &prep.data, &train_cfg, &resolved.mixup_config())?;

    create_dir(out_dir)?;
    let echo = resolved.to_toml();
    write_file(&out_dir.join(CONFIG_FILE), &echo)?;
    write_file(&out_dir.join(REPORT_FILE), report.to_text())?;
    write_file(&out_dir.join(TIMING_FILE), format!("wall_seconds: {:.3}\n", report.wall_seconds))?;
    Checkpoint::from_store(echo, &store, scaler_tensors(&prep.scaler)).save(&out_dir.join(CHECKPOINT_FILE))?;
    test_predictions(&model, &store, &prep, train_cfg.batch_size, &out_dir.join(PREDICTIONS_FILE))?;
    Ok(TrainOutcome {
        report,
        output_dir: out_dir.to_path_buf(),
    })
}

/// A trained model restored from a checkpoint.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub model: CMambaModel,
    pub store: ParamStore,
    pub scaler: Scaler,
}

pub fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let ck = Checkpoint::load(path)?;
    let config = ExperimentConfig::from_toml(&ck.config)
        .map_err(|e| Error::Checkpoint(format!("{}: embedded config: {e}", path.display())))?;
    let vec_of = |name: &str| -> Result<Vec<f64>> {
        ck.get(name)
            .map(|t| t.data().to_vec())
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing {name}", path.display())))
    };
    let scaler = Scaler {
        mean: vec_of("scaler.mean")?,
        std: vec_of("scaler.std")?,
    };
    let (model, mut store) = build_model(&config, scaler.mean.len())?;
    ck.load_into(&mut store)?;
    Ok(Loaded {
        config,
        model,
        store,
        scaler,
    })
}

/// Test-split `(mse, mae)` of a checkpoint. The dataset path recorded in the
/// checkpoint is used unless `dataset` is given. Predictions are written to
/// `predictions` when set.
pub fn run_eval(checkpoint: &Path, dataset: Option<&Path>, predictions: Option<&Path>) -> Result<(f64, f64)> {
    let mut loaded = load_checkpoint(checkpoint)?;
    if let Some(d) = dataset {
        loaded.config.dataset_path = Some(d.to_path_buf());
    }
    let prep = prepare(&loaded.config)?;
    let test = prep
        .data
        .test
        .as_ref()
        .ok_or_else(|| Error::Data("the test split has no complete windows".into()))?;
    let (pred, truth) = predict_dataset(&loaded.model, &loaded.store, test, loaded.config.batch_size)?;
    if let Some(p) = predictions {
        write_predictions(p, &prediction_records(0, Some(&truth), &pred))?;
    }
    metrics(&pred, &truth)
}

/// Rolling forecasts over every length-L window of `input`, in data units.
/// `y_true` is filled wherever the file extends past the window.
pub fn run_predict(checkpoint: &Path, input: &Path, horizon: Option<usize>, output: &Path) -> Result<usize> {
    let loaded = load_checkpoint(checkpoint)?;
    let cfg = &loaded.config;
    let t_model = cfg.horizon;
    let t_out = horizon.unwrap_or(t_model);
    if t_out == 0 || t_out > t_model {
        return Err(Error::Config(format!(
            "requested horizon {t_out} must be between 1 and the trained horizon {t_model}"
        )));
    }
    let raw = load_csv(input, cfg.has_timestamp)?;
    let v = loaded.scaler.mean.len();
    if raw.channels != v {
        return Err(Error::Config(format!(
            "checkpoint expects {v} channels but {} has {}",
            input.display(),
            raw.channels
        )));
    }
    let l = cfg.look_back;
    if raw.rows < l {
        return Err(Error::Data(format!(
            "{} has {} rows; at least the look-back of {l} is needed",
            input.display(),
            raw.rows
        )));
    }
    let table = loaded.scaler.transform(&raw);
    let windows = raw.rows - l + 1;
    let mut records = Vec::with_capacity(windows * t_out * v);
    for start in 0..windows {
        let x = Tensor::new([1, l, v], table.rows_slice(start..start + l).to_vec())?;
        let pred = loaded.model.predict(&loaded.store, &x)?;
        for c in 0..v {
            for s in 0..t_out {
                let row = start + l + s;
                records.push(crate::data::PredictionRecord {
                    sample_index: start,
                    channel: c,
                    step: s,
                    y_true: (row < raw.rows).then(|| raw.row(row)[c]),
                    y_pred: loaded.scaler.inverse(c, pred.data()[s * v + c]),
                });
            }
        }
    }
    write_predictions(output, &records)?;
    Ok(windows)
}

/// `(total FLOPs, report)` for one forward pass of `batch` samples.
pub fn run_flops(cfg: &ExperimentConfig, batch: u64) -> Result<FlopReport> {
    let channels = match (&cfg.dataset_path, cfg.channels) {
        (_, Some(c)) => c,
        (Some(path), None) => load_csv(path, cfg.has_timestamp)?.channels,
        (None, None) => return Err(Error::Config("set channels or dataset_path to count FLOPs".into())),
    };
    let (model, _) = build_model(cfg, channels)?;
    Ok(estimate_flops(&model, batch))
}

/// Ablation axes. `Mamba` enumerates the seven block variants; `Gdd` and
/// `Mixup` toggle the channel-dependency module and channel mixup.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Mamba,
    Gdd,
    Mixup,
}

impl AblationAxis {
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "mamba" => Ok(AblationAxis::Mamba),
            "gdd" => Ok(AblationAxis::Gdd),
            "mixup" => Ok(AblationAxis::Mixup),
            other => Err(Error::Config(format!(
                "unknown ablation axis {other:?}; expected mamba, gdd or mixup"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub run: String,
    pub config: ExperimentConfig,
    pub best_epoch: usize,
    pub test: Option<(f64, f64)>,
}

/// Every configuration of the cartesian product of `axes`, labelled.
pub fn ablation_grid(base: &ExperimentConfig, axes: &[AblationAxis]) -> Result<Vec<(String, ExperimentConfig)>> {
    if axes.is_empty() {
        return Err(Error::Config("no ablation axes given".into()));
    }
    let mut grid = vec![(String::new(), base.clone())];
    let mut seen = Vec::new();
    for &axis in axes {
        if seen.contains(&axis) {
            return Err(Error::Config(format!("ablation axis {axis:?} given twice")));
        }
        seen.push(axis);
        let mut next = Vec::new();
        for (label, cfg) in &grid {
            let join = |part: &str| if label.is_empty() { part.to_string() } else { format!("{label}+{part}") };
            match axis {
                AblationAxis::Mamba => {
                    for case in AblationCase::ALL {
                        let mut c = cfg.clone();
                        let b = cfg.block_config().with_case(case);
                        c.use_conv = b.use_conv;
                        c.use_z_branch = b.use_z_branch;
                        c.a_mode = b.a_mode;
                        c.d_mode = b.d_mode;
                        next.push((join(case.label()), c));
                    }
                }
                AblationAxis::Gdd => {
                    for on in [false, true] {
                        let mut c = cfg.clone();
                        c.use_gdd = on;
                        next.push((join(if on { "gdd_on" } else { "gdd_off" }), c));
                    }
                }
                AblationAxis::Mixup => {
                    for on in [false, true] {
                        let mut c = cfg.clone();
                        c.mixup = if on { MixupMode::Channel } else { MixupMode::Off };
                        next.push((join(if on { "mixup_on" } else { "mixup_off" }), c));
                    }
                }
            }
        }
        grid = next;
    }
    Ok(grid)
}

fn fmt_metric(m: Option<f64>) -> String {
    m.map(|v| format!("{v:?}")).unwrap_or_default()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("run,use_conv,use_z_branch,a_mode,d_mode,use_gdd,mixup,best_epoch,test_mse,test_mae\n");
    for r in rows {
        let c = &r.config;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.run,
            c.use_conv,
            c.use_z_branch,
            serde_label(&c.a_mode),
            serde_label(&c.d_mode),
            c.use_gdd,
            serde_label(&c.mixup),
            r.best_epoch,
            fmt_metric(r.test.map(|t| t.0)),
            fmt_metric(r.test.map(|t| t.1)),
        );
    }
    s
}

fn serde_label<T: serde::Serialize>(v: &T) -> String {
    toml::Value::try_from(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Trains every grid configuration with the base seed and writes
/// `ablation.csv` plus one artifact directory per run.
pub fn run_ablate(base: &ExperimentConfig, axes: &[AblationAxis], out_dir: &Path) -> Result<Vec<AblationRow>> {
    let grid = ablation_grid(base, axes)?;
    create_dir(out_dir)?;
    let mut rows = Vec::with_capacity(grid.len());
    for (run, cfg) in grid {
        let outcome = run_train(&cfg, &out_dir.join(&run))?;
        rows.push(AblationRow {
            run,
            config: cfg,
            best_epoch: outcome.report.best_epoch,
            test: outcome.report.test,
        });
    }
    write_file(&out_dir.join(ABLATION_FILE), ablation_csv(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{AMode, DMode};

    #[test]
    fn grid_sizes_and_labels() {
        let base = ExperimentConfig::default();
        let g = ablation_grid(&base, &[AblationAxis::Mamba]).unwrap();
        assert_eq!(g.len(), 7);
        assert_eq!(g[0].0, "vanilla");
        assert!(g[0].1.use_conv && g[0].1.d_mode == DMode::Free && g[0].1.a_mode == AMode::FeatureSpecific);
        assert_eq!(g[6].0, "cmamba");

        let g = ablation_grid(&base, &[AblationAxis::Gdd, AblationAxis::Mixup]).unwrap();
        let labels: Vec<_> = g.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, ["gdd_off+mixup_off", "gdd_off+mixup_on", "gdd_on+mixup_off", "gdd_on+mixup_on"]);
        assert!(g.iter().all(|(_, c)| c.seed == base.seed));
        assert_eq!(ablation_grid(&base, &[AblationAxis::Mamba, AblationAxis::Gdd, AblationAxis::Mixup]).unwrap().len(), 28);
    }

    #[test]
    fn bad_axes() {
        assert!(AblationAxis::parse("bogus").unwrap_err().to_string().contains("bogus"));
        assert!(ablation_grid(&ExperimentConfig::default(), &[]).is_err());
        assert!(ablation_grid(&ExperimentConfig::default(), &[AblationAxis::Gdd, AblationAxis::Gdd]).is_err());
    }

    #[test]
    fn csv_layout() {
        let row = AblationRow {
            run: "cmamba".into(),
            config: ExperimentConfig::default(),
            best_epoch: 2,
            test: Some((0.5, 0.25)),
        };
        let csv = ablation_csv(&[row]);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "cmamba,false,true,feature_independent,data_dependent,true,channel,2,0.5,0.25"
        );
    }

    #[test]
    fn flops_need_channels() {
        assert!(run_flops(&ExperimentConfig::default(), 1).is_err());
        let cfg = ExperimentConfig {
            channels: Some(7),
            use_gdd: false,
            ..Default::default()
        };
        assert_eq!(run_flops(&cfg, 64).unwrap().increment_ratio(), 0.0);
    }
}
