use std::path::{Path, PathBuf};

use log::info;
use meltstream_core::augment::{augment_dataset, enumerate_specs, DirectorySink};
use meltstream_core::dataio::{mpv, synthesize_dataset, Manifest, Split, SynthConfig};
use meltstream_core::harness::{
    self, collect_runs, run_experiment, setting, write_csv, Dataset, EvalResult, Manifests, Origin, ReportRow, Sampling,
};
use meltstream_core::models::{Model, ModelConfig};
use meltstream_core::optflow::{stack_flows_jobs, write_flow_dump, FlowParams};
use meltstream_core::{Error, Result};

use crate::args::*;
use crate::config::{self, TrainFile};

/// `flag`, else `<data root>/<rel>`.
fn or_data(flag: &Option<PathBuf>, data: Option<&Path>, rel: &str, what: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| data.map(|d| d.join(rel)))
        .ok_or_else(|| Error::InvalidArgument(format!("no {what}: pass it explicitly or set MELTSTREAM_DATA")))
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn synth(a: &SynthArgs, data: Option<&Path>) -> Result<Manifest> {
    let out = or_data(&a.out, data, "original", "output directory")?;
    let cfg = if a.full_size {
        SynthConfig::full_size(a.height, a.width)
    } else {
        SynthConfig::uniform(a.videos_per_class, a.val_per_class, a.frames, a.height, a.width)
    };
    let m = synthesize_dataset(&cfg, a.seed, &out, a.jobs)?;
    println!(
        "{} videos, {} train + {} val frames -> {}",
        m.entries.len(),
        m.frame_total(Split::Train),
        m.frame_total(Split::Val),
        out.join("manifest.json").display()
    );
    Ok(m)
}

pub fn augment(a: &AugmentArgs, data: Option<&Path>) -> Result<Manifest> {
    let src = or_data(&a.manifest, data, "original/manifest.json", "source manifest")?;
    let out = or_data(&a.out, data, "augmented", "output directory")?;
    let m = Manifest::load(&src)?;
    std::fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
    let specs = enumerate_specs();
    info!("augmenting {} videos with {} specs", m.entries.len(), specs.len());
    let sink = DirectorySink { root: out.clone() };
    let derived = augment_dataset(&m, &specs, a.seed, &sink, &out, a.jobs)?;
    let path = out.join("manifest.json");
    derived.save(&path)?;
    println!(
        "{} videos, {} train + {} val frames -> {}",
        derived.entries.len(),
        derived.frame_total(Split::Train),
        derived.frame_total(Split::Val),
        path.display()
    );
    Ok(derived)
}

fn load_optional(path: Option<&Path>) -> Result<Option<Manifest>> {
    path.map(Manifest::load).transpose()
}

pub fn train(a: &TrainArgs, data: Option<&Path>) -> Result<harness::ExperimentOutcome> {
    let file = match &a.config {
        Some(p) => TrainFile::load(p)?,
        None => TrainFile::default(),
    };
    let resolved = config::resolve(a, &file, data)?;
    let runs_dir = or_data(&a.out, data, "runs", "results directory")?;
    let manifests = Manifests {
        original: load_optional(resolved.manifest_org.as_deref())?,
        augmented: load_optional(resolved.manifest_aug.as_deref())?,
    };
    let dataset = Dataset::new(manifests);
    let plan = &resolved.plan;
    info!("plan {}: {}", plan.hash(), serde_json::to_string(plan).expect("plan serialises"));
    let outcome = run_experiment(plan, &dataset, &runs_dir, a.deterministic)?;
    if let Some(row) = &outcome.summary {
        let show = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "setting {} {}: val {:.4} test_org {} test_aug {} mean {:.4} ± {:.4} over {} run(s)",
            row.setting,
            row.model,
            row.val_acc,
            show(row.test_org_acc),
            show(row.test_aug_acc),
            row.mean,
            row.std,
            outcome.runs.len()
        );
    }
    println!("results in {}", outcome.dir.display());
    Ok(outcome)
}

pub fn flow(a: &FlowArgs) -> Result<()> {
    let clip = mpv::read(&a.clip)?;
    let params = FlowParams {
        alpha: a.alpha,
        iterations: a.iters,
    };
    let stack = stack_flows_jobs(&clip, params, a.jobs)?;
    write_flow_dump(&a.out, &stack)?;
    println!("{} flow fields -> {}", stack.shape()[0] / 2, a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<EvalResult> {
    if !a.checkpoint.is_file() {
        return Err(Error::Missing(a.checkpoint.clone()));
    }
    let cfg = ModelConfig::load(&a.checkpoint.with_extension("json"))?;
    let mut model = Model::<f32>::load(&cfg, &a.checkpoint)?;
    let manifest = Manifest::load(&a.manifest)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
    };
    let samples = setting::samples(&manifest, Origin::Original, split, Sampling::for_model(&cfg))?;
    let mut hp = cfg.kind.default_hyperparams();
    if let Some(b) = a.batch_size {
        hp.batch_size = b;
    }
    let batch = harness::clips_per_batch(&model, &hp);
    let data = Dataset::new(Manifests {
        original: Some(manifest),
        augmented: None,
    });
    let r = harness::evaluate(&mut model, &data, &samples, batch, a.seed)?;
    let text = serde_json::to_string_pretty(&r).expect("result serialises") + "\n";
    if let Some(out) = &a.out {
        std::fs::write(out, &text).map_err(|e| io(out, e))?;
    }
    println!("accuracy {:.6} over {} clips", r.accuracy, r.clips);
    Ok(r)
}

pub fn report(a: &ReportArgs, data: Option<&Path>) -> Result<Vec<ReportRow>> {
    let runs_dir = or_data(&a.runs_dir, data, "runs", "results directory")?;
    let runs = collect_runs(&runs_dir)?;
    if runs.is_empty() {
        return Err(Error::Missing(runs_dir.join("*/*/metrics.json")));
    }
    let rows = if a.aggregate {
        // one group per (setting, model config, hyperparameters), in first-seen order
        let mut groups: Vec<(String, Vec<_>)> = Vec::new();
        for r in runs {
            let key = serde_json::to_string(&(r.setting, &r.config, &r.hyperparams)).expect("plan serialises");
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(r),
                None => groups.push((key, vec![r])),
            }
        }
        groups.iter().map(|(_, v)| ReportRow::aggregate(v)).collect::<Result<Vec<_>>>()?
    } else {
        runs.iter().map(ReportRow::from_run).collect()
    };
    let out = a.out.clone().unwrap_or_else(|| runs_dir.join("report.csv"));
    write_csv(&out, &rows)?;
    print!("{}", std::fs::read_to_string(&out).map_err(|e| io(&out, e))?);
    Ok(rows)
}
