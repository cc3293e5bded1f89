//! Repeated runs of one plan, their on-disk records and the aggregate.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::Dataset;
use super::report::{self, ReportRow};
use super::setting::{make_setting, Sampling, Setting, TestSet};
use super::train::{clips_per_batch, evaluate, evaluate_batch_stats, train, EpochRecord, EvalResult, TrainOptions};
use crate::dataio::synth::derive_seed;
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::nn::Hyperparams;

const MODEL_INIT: u64 = 10;

/// Everything that determines a set of runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub setting: Setting,
    pub config: ModelConfig,
    pub hyperparams: Hyperparams,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub manifest_org: Option<PathBuf>,
    #[serde(default)]
    pub manifest_aug: Option<PathBuf>,
    #[serde(default)]
    pub options: TrainOptions,
}

impl ExperimentPlan {
    /// `repeats` consecutive seeds starting at `seed`.
    pub fn seeds_from(seed: u64, repeats: usize) -> Vec<u64> {
        (0..repeats as u64).map(|i| seed.wrapping_add(i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.hyperparams.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one repeat is required".into()));
        }
        let distinct: HashSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::InvalidArgument(format!("repeat seeds must be distinct, got {:?}", self.seeds)));
        }
        Ok(())
    }

    /// Short content hash naming the plan's results directory.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("plan serialises");
        hex::encode(&Sha256::digest(text.as_bytes())[..6])
    }
}

/// One run's curves and final scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub setting: Setting,
    pub config: ModelConfig,
    pub hyperparams: Hyperparams,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub val_acc: f64,
    /// Validation accuracy of the best model with batch statistics in place of
    /// running averages.
    pub val_acc_batch_stats: f64,
    pub tests: BTreeMap<TestSet, EvalResult>,
    /// Absent in deterministic mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
}

impl MetricsRecord {
    pub fn test_acc(&self, set: TestSet) -> Option<f64> {
        self.tests.get(&set).map(|r| r.accuracy)
    }

    /// Mean accuracy over the setting's test sets; the figure averaged across repeats.
    pub fn headline(&self) -> f64 {
        let accs: Vec<f64> = self.tests.values().map(|r| r.accuracy).collect();
        accs.iter().sum::<f64>() / accs.len().max(1) as f64
    }
}

/// Train one model from `seed` and score it on every test set of the plan.
pub fn run_once(plan: &ExperimentPlan, data: &Dataset, seed: u64, run_dir: Option<&Path>, deterministic: bool) -> Result<MetricsRecord> {
    let started = Instant::now();
    let splits = make_setting(plan.setting, &data.manifests, Sampling::for_model(&plan.config))?;
    let mut model = Model::<f32>::build(&plan.config, derive_seed(seed, &[MODEL_INIT]))?;
    let mut opts = plan.options.clone();
    opts.checkpoint = run_dir.map(|d| d.join("best.msck"));
    let outcome = train(&mut model, data, &splits, &plan.hyperparams, seed, &opts)?;
    let batch = clips_per_batch(&model, &plan.hyperparams);
    let mut tests = BTreeMap::new();
    for (set, samples) in &splits.tests {
        tests.insert(*set, evaluate(&mut model, data, samples, batch, seed)?);
    }
    let val_acc_batch_stats = evaluate_batch_stats(&model, data, &splits.val, batch, seed)?.accuracy;
    Ok(MetricsRecord {
        seed,
        setting: plan.setting,
        config: plan.config.clone(),
        hyperparams: plan.hyperparams.clone(),
        epochs: outcome.epochs,
        best_epoch: outcome.best_epoch,
        val_acc: outcome.best_val_acc,
        val_acc_batch_stats,
        tests,
        wall_clock_s: (!deterministic).then(|| started.elapsed().as_secs_f64()),
    })
}

/// Result of all repeats of a plan.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub runs: Vec<MetricsRecord>,
    /// Withheld unless every repeat finished.
    pub summary: Option<ReportRow>,
    pub failures: Vec<(u64, String)>,
}

#[derive(Serialize)]
struct Status<'a> {
    complete: bool,
    finished: Vec<u64>,
    failed: &'a [(u64, String)],
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Run every seed of `plan`, writing `<runs_dir>/<plan-hash>/<seed>/` for each
/// plus a summary. If any repeat fails the remaining ones still run, the
/// summary is withheld, `status.json` lists the failures, and the first error
/// is returned.
pub fn run_experiment(plan: &ExperimentPlan, data: &Dataset, runs_dir: &Path, deterministic: bool) -> Result<ExperimentOutcome> {
    plan.validate()?;
    let dir = runs_dir.join(plan.hash());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_text(&dir.join("plan.json"), &(serde_json::to_string_pretty(plan).expect("plan serialises") + "\n"))?;

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for &seed in &plan.seeds {
        let run_dir = dir.join(seed.to_string());
        fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        plan.config.save(&run_dir.join("config.json"))?;
        info!("setting {} {} seed {seed}", plan.setting, plan.config.kind.name());
        match run_once(plan, data, seed, Some(&run_dir), deterministic) {
            Ok(rec) => {
                write_run(&run_dir, &rec)?;
                runs.push(rec);
            }
            Err(e) => {
                warn!("seed {seed} failed: {e}");
                failures.push((seed, e.to_string()));
                first_error.get_or_insert(e);
            }
        }
    }
    let status = Status {
        complete: failures.is_empty(),
        finished: runs.iter().map(|r| r.seed).collect(),
        failed: &failures,
    };
    write_text(&dir.join("status.json"), &(serde_json::to_string_pretty(&status).expect("status serialises") + "\n"))?;
    if let Some(e) = first_error {
        return Err(e);
    }
    let summary = ReportRow::aggregate(&runs)?;
    report::write_csv(&dir.join("summary.csv"), std::slice::from_ref(&summary))?;
    Ok(ExperimentOutcome {
        dir,
        runs,
        summary: Some(summary),
        failures,
    })
}

/// `metrics.json`, `report.csv` and `curves.csv` for one run.
pub fn write_run(run_dir: &Path, rec: &MetricsRecord) -> Result<()> {
    write_text(&run_dir.join("metrics.json"), &(serde_json::to_string_pretty(rec).expect("record serialises") + "\n"))?;
    report::write_csv(&run_dir.join("report.csv"), &[ReportRow::from_run(rec)])?;
    report::write_curves(&run_dir.join("curves.csv"), rec)
}

/// Every `metrics.json` two levels below `runs_dir`, in path order.
pub fn collect_runs(runs_dir: &Path) -> Result<Vec<MetricsRecord>> {
    if !runs_dir.is_dir() {
        return Err(Error::Missing(runs_dir.to_path_buf()));
    }
    let list = |d: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = fs::read_dir(d)
            .map_err(|e| Error::io(d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        v.sort();
        Ok(v)
    };
    let mut out = Vec::new();
    for plan_dir in list(runs_dir)? {
        for run_dir in list(&plan_dir)? {
            let path = run_dir.join("metrics.json");
            if !path.is_file() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let rec = serde_json::from_str(&text).map_err(|e| Error::Format {
                path: path.clone(),
                detail: e.to_string(),
            })?;
            out.push(rec);
        }
    }
    Ok(out)
}
