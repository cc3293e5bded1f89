//! Accuracy tables and learning curves.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::MetricsRecord;
use super::setting::{Setting, TestSet};
use crate::error::{Error, Result};

/// One line of the accuracy table. Accuracies are means over the runs it
/// covers; `mean` and `std` summarise each run's mean test accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub setting: Setting,
    pub model: String,
    pub val_acc: f64,
    pub test_org_acc: Option<f64>,
    pub test_aug_acc: Option<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample (n−1) standard deviation; zero spread for a single value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ReportRow {
    pub fn from_run(rec: &MetricsRecord) -> Self {
        ReportRow {
            setting: rec.setting,
            model: rec.config.kind.name().to_string(),
            val_acc: rec.val_acc,
            test_org_acc: rec.test_acc(TestSet::Original),
            test_aug_acc: rec.test_acc(TestSet::Augmented),
            mean: rec.headline(),
            std: 0.0,
        }
    }

    /// Summary over repeats of one plan.
    pub fn aggregate(runs: &[MetricsRecord]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::InvalidArgument("no runs to aggregate".into()))?;
        if runs.iter().any(|r| r.setting != first.setting || r.config.kind != first.config.kind) {
            return Err(Error::InvalidArgument("runs of different plans cannot be aggregated".into()));
        }
        let avg = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| -> Option<f64> {
            let v: Option<Vec<f64>> = runs.iter().map(f).collect();
            v.map(|v| mean_std(&v).0)
        };
        let (mean, std) = mean_std(&runs.iter().map(|r| r.headline()).collect::<Vec<_>>());
        Ok(ReportRow {
            setting: first.setting,
            model: first.config.kind.name().to_string(),
            val_acc: avg(&|r| Some(r.val_acc)).unwrap_or(f64::NAN),
            test_org_acc: avg(&|r| r.test_acc(TestSet::Original)),
            test_aug_acc: avg(&|r| r.test_acc(TestSet::Augmented)),
            mean,
            std,
        })
    }
}

const HEADER: [&str; 7] = ["setting", "model", "val_acc", "test_org_acc", "test_aug_acc", "mean", "std"];

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

/// Rows sorted by setting, then model, with six decimals.
pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| (a.setting, &a.model).cmp(&(b.setting, &b.model)));
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(HEADER).map_err(io)?;
    for r in &rows {
        w.write_record([
            r.setting.name().to_string(),
            r.model.clone(),
            fmt6(r.val_acc),
            r.test_org_acc.map(fmt6).unwrap_or_default(),
            r.test_aug_acc.map(fmt6).unwrap_or_default(),
            fmt6(r.mean),
            fmt6(r.std),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(e) if e.kind() == std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
        csv::ErrorKind::Io(e) => Error::io(path, e),
        k => Error::Format {
            path: path.to_path_buf(),
            detail: format!("{k:?}"),
        },
    })?;
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
    let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != HEADER.len() {
            return Err(bad(format!("expected {} columns, found {}", HEADER.len(), rec.len())));
        }
        out.push(ReportRow {
            setting: rec[0].parse()?,
            model: rec[1].to_string(),
            val_acc: num(&rec[2])?,
            test_org_acc: opt(&rec[3])?,
            test_aug_acc: opt(&rec[4])?,
            mean: num(&rec[5])?,
            std: num(&rec[6])?,
        });
    }
    Ok(out)
}

/// Per-epoch loss and accuracy for plotting.
pub fn write_curves(path: &Path, rec: &MetricsRecord) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]).map_err(io)?;
    for e in &rec.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.train_acc.to_string(),
            e.val_loss.to_string(),
            e.val_acc.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_spread() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[0.9, 1.0]);
        assert!((m - 0.95).abs() < 1e-15);
        assert!((s - 0.05f64.hypot(0.05)).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_at_six_decimals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![
            ReportRow {
                setting: Setting::C,
                model: "lrcn".into(),
                val_acc: 0.123_456_7,
                test_org_acc: Some(0.5),
                test_aug_acc: Some(2.0 / 3.0),
                mean: 0.583_333_3,
                std: 0.0,
            },
            ReportRow {
                setting: Setting::A,
                model: "slowfast".into(),
                val_acc: 1.0,
                test_org_acc: None,
                test_aug_acc: Some(0.25),
                mean: 0.25,
                std: 0.01,
            },
            ReportRow {
                setting: Setting::A,
                model: "cnn1".into(),
                val_acc: 0.5,
                test_org_acc: None,
                test_aug_acc: Some(0.5),
                mean: 0.5,
                std: 0.0,
            },
        ];
        write_csv(&path, &rows).unwrap();
        let back = read_csv(&path).unwrap();
        let order: Vec<(Setting, &str)> = back.iter().map(|r| (r.setting, r.model.as_str())).collect();
        assert_eq!(order, [(Setting::A, "cnn1"), (Setting::A, "slowfast"), (Setting::C, "lrcn")]);
        let c = &back[2];
        assert!((c.val_acc - 0.123_457).abs() < 5e-7);
        assert!((c.test_aug_acc.unwrap() - 2.0 / 3.0).abs() < 5e-7);
        assert_eq!(back[0].test_org_acc, None);
        // a second pass is lossless
        write_csv(&path, &back).unwrap();
        assert_eq!(read_csv(&path).unwrap(), back);
    }
}
