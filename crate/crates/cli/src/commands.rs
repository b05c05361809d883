use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use adepos::calibration::{fold_threshold, good_bearing_errors, loo_features, loo_trained, monitor_bearing};
use adepos::energy::AnchorFile;
use adepos::features::features_csv;
use adepos::ingest::synthetic_manifest;
use adepos::pipeline::{extract_manifest, normalize_with, train_all, BearingFeatures};
use adepos::seeds::ensemble_base_seed;
use adepos::{
    BearingManifest, Detector as _, EnergyModel, Ensemble, FixedFormat, Inference, MonitorLog, PipelineConfig, RunConfig,
    TrainedBearing, TrainingReport,
};
use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use crate::output::{write_atomic, Staged};

const TRAIN_REPORT: &str = "train_report.csv";
const THRESHOLDS: &str = "thresholds.csv";

fn load_manifest(cfg: &RunConfig) -> Result<BearingManifest> {
    let path = cfg.manifest_path()?;
    BearingManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn energy_model(cfg: &RunConfig) -> Result<EnergyModel> {
    match &cfg.anchors {
        None => Ok(EnergyModel::calibrated_default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading anchors {}", p.display()))?;
            Ok(AnchorFile::parse(&text)?.model()?)
        }
    }
}

fn ensemble_path(out: &Path, id: &str) -> PathBuf {
    out.join("ensembles").join(format!("{id}.ens"))
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let pipe = cfg.pipeline_any_width()?;
    let seed = ensemble_base_seed(cfg.seed, 0, pipe.n_max);
    let feats = extract_manifest(&manifest)?;
    let trained = train_all(&feats, &pipe, seed)?;

    let mut staged = Staged::default();
    let mut report =
        String::from("bearing_id,label,base_seed,learner,learner_seed,converged_at,samples_used,bootstrap,monitor_start\n");
    for b in &trained {
        staged.add(ensemble_path(&cfg.out, &b.id), b.ensemble.to_text()?);
        for (i, (s, at)) in b.report.seeds.iter().zip(&b.report.converged_at).enumerate() {
            let _ = writeln!(
                report,
                "{},{},{seed},{i},{s},{},{},{},{}",
                b.id,
                b.label,
                at.map(|v| v.to_string()).unwrap_or_default(),
                b.report.samples_used,
                b.report.bootstrap,
                b.monitor_start
            );
        }
        println!("{}: converged after {} samples", b.id, b.report.samples_used);
    }
    staged.add(cfg.out.join(TRAIN_REPORT), report);
    staged.commit()?;
    Ok(())
}

/// Training bookkeeping of one bearing, read back from the train report.
struct TrainRow {
    report: TrainingReport,
    monitor_start: usize,
}

fn read_train_report(out: &Path) -> Result<BTreeMap<String, TrainRow>> {
    let path = out.join(TRAIN_REPORT);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {} (run `adepos train` first)", path.display()))?;
    let mut rows: BTreeMap<String, TrainRow> = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            bail!("{}:{}: expected 9 fields", path.display(), n + 1);
        }
        let num = |i: usize| -> Result<usize> {
            f[i].parse().with_context(|| format!("{}:{}: bad number `{}`", path.display(), n + 1, f[i]))
        };
        let row = rows.entry(f[0].to_owned()).or_insert_with(|| TrainRow {
            report: TrainingReport {
                seeds: Vec::new(),
                converged_at: Vec::new(),
                samples_used: 0,
                bootstrap: 0,
            },
            monitor_start: 0,
        });
        row.report.seeds.push(f[4].parse().with_context(|| format!("{}:{}: bad seed", path.display(), n + 1))?);
        row.report.converged_at.push(if f[5].is_empty() { None } else { Some(num(5)?) });
        row.report.samples_used = num(6)?;
        row.report.bootstrap = num(7)?;
        row.monitor_start = num(8)?;
    }
    Ok(rows)
}

/// Rebuilds every bearing's trained state from `train` outputs.
fn load_trained(cfg: &RunConfig, feats: &[BearingFeatures]) -> Result<Vec<TrainedBearing>> {
    let rows = read_train_report(&cfg.out)?;
    feats
        .iter()
        .map(|b| {
            let path = ensemble_path(&cfg.out, &b.id);
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading {} (run `adepos train` first)", path.display()))?;
            let ensemble = Ensemble::from_text(&text).with_context(|| format!("parsing {}", path.display()))?;
            if ensemble.members() != cfg.n_max || ensemble.hidden() != cfg.hidden {
                bail!(
                    "{} holds {} learners of {} neurons; config asks for {} of {}",
                    path.display(),
                    ensemble.members(),
                    ensemble.hidden(),
                    cfg.n_max,
                    cfg.hidden
                );
            }
            let row = rows
                .get(&b.id)
                .ok_or_else(|| anyhow!("bearing {} missing from {TRAIN_REPORT}", b.id))?;
            if row.monitor_start >= b.features.len() {
                bail!("bearing {}: no monitoring data after window {}", b.id, row.monitor_start);
            }
            let monitor = normalize_with(&ensemble, &b.features[row.monitor_start..])?;
            Ok(TrainedBearing {
                id: b.id.clone(),
                label: b.label,
                ensemble,
                report: row.report.clone(),
                monitor_start: row.monitor_start,
                monitor,
            })
        })
        .collect()
}

pub fn calibrate(cfg: &RunConfig) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let pipe = cfg.pipeline()?;
    let feats = extract_manifest(&manifest)?;
    let trained = load_trained(cfg, &feats)?;
    let t_x = good_bearing_errors(&trained, &pipe)?;

    let mut tx_csv = String::from("bearing_id,label,t_x\n");
    for (b, t) in trained.iter().zip(&t_x) {
        if let Some(t) = t {
            let _ = writeln!(tx_csv, "{},{},{t}", b.id, b.label);
        }
    }
    let mut thr_csv = String::from("held_out,n_good,max_err,sigma,k,thr\n");
    for (i, b) in trained.iter().enumerate() {
        let f = fold_threshold(&t_x, i, pipe.k).map_err(|e| {
            anyhow!(
                "fold holding out {}: {e}; the threshold needs at least 2 good bearings among the others",
                b.id
            )
        })?;
        let _ = writeln!(thr_csv, "{},{},{},{},{},{}", b.id, f.t_values.len(), f.max, f.sigma, f.k, f.thr);
    }
    let mut staged = Staged::default();
    staged.add(cfg.out.join("tx.csv"), tx_csv);
    staged.add(cfg.out.join(THRESHOLDS), thr_csv);
    staged.commit()?;
    println!("thresholds for {} folds written", trained.len());
    Ok(())
}

fn read_thresholds(out: &Path) -> Result<BTreeMap<String, f64>> {
    let path = out.join(THRESHOLDS);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {} (run `adepos calibrate` first)", path.display()))?;
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let thr = f
                .get(5)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| anyhow!("{}:{}: bad threshold row", path.display(), n + 2))?;
            Ok((f[0].to_owned(), thr))
        })
        .collect()
}

pub fn monitor(cfg: &RunConfig, only: Option<&str>) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let pipe = cfg.pipeline()?;
    let controller = pipe.controller()?;
    let model = energy_model(cfg)?;
    let thresholds = read_thresholds(&cfg.out)?;
    if let Some(id) = only {
        manifest.entry(id)?;
    }
    let feats: Vec<BearingFeatures> = extract_manifest(&manifest)?
        .into_iter()
        .filter(|b| only.is_none_or(|id| id == b.id))
        .collect();
    let trained = load_trained(cfg, &feats)?;

    let mut staged = Staged::default();
    for b in &trained {
        let thr = *thresholds
            .get(&b.id)
            .ok_or_else(|| anyhow!("no threshold for {} in {THRESHOLDS}", b.id))?;
        let (outcome, log) = monitor_bearing(b, &pipe, controller, thr)?;
        let energy = model.trace_energy(&log, cfg.bits, pipe.mode)?;
        staged.add(cfg.out.join("monitor").join(format!("{}.csv", b.id)), log.to_csv());
        staged.add(cfg.out.join("energy").join(format!("{}.csv", b.id)), energy.to_csv());
        match outcome.fault_sample {
            Some(s) => println!("{}: fault at window {s}", b.id),
            None => println!("{}: healthy over {} windows, avg L_eff {:.2}", b.id, outcome.monitored, outcome.avg_l_eff),
        }
    }
    staged.commit()?;
    Ok(())
}

/// All logs of a run as one trace, for lifetime energy totals.
fn concat_logs(logs: &[MonitorLog]) -> MonitorLog {
    MonitorLog {
        hidden: logs[0].hidden,
        n_max: logs[0].n_max,
        records: logs.iter().flat_map(|l| l.records.iter().cloned()).collect(),
    }
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let pipe = cfg.pipeline()?;
    let model = energy_model(cfg)?;
    let feats = extract_manifest(&manifest)?;
    let report = loo_features(&feats, &pipe, cfg.seed, cfg.replicas)?;

    let mut summary =
        String::from("replica,base_seed,accuracy,avg_l_eff,avg_nj_per_sample,savings_ratio,ae_savings_ratio\n");
    for (r, set) in report.replicas.iter().enumerate() {
        let all = concat_logs(&set.logs);
        let e = model.trace_energy(&all, cfg.bits, pipe.mode)?;
        let _ = writeln!(
            summary,
            "{r},{},{},{},{},{},{}",
            set.base_seed,
            set.accuracy(),
            all.avg_l_eff(),
            e.avg_nj_per_sample,
            e.savings_ratio,
            e.ae_savings_ratio.map(|v| v.to_string()).unwrap_or_default()
        );
    }
    let mut staged = Staged::default();
    staged.add(cfg.out.join("report.csv"), report.to_csv());
    staged.add(cfg.out.join("report_summary.csv"), summary);
    staged.commit()?;
    println!("mean accuracy {:.4} over {} replica(s)", report.mean_accuracy(), cfg.replicas);
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let base = cfg.pipeline_any_width()?;
    let model = energy_model(cfg)?;
    let cells = cfg.sweep.cells()?;
    let formats: Vec<FixedFormat> = cfg
        .sweep
        .bits
        .iter()
        .map(|&b| FixedFormat::with_default_split(b))
        .collect::<adepos::Result<_>>()?;
    if cfg.replicas == 0 {
        bail!("at least one replica is required");
    }
    let feats = extract_manifest(&manifest)?;

    // accuracy[cell][bits], averaged over replicas
    let accuracy: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|cell| -> Result<Vec<f64>> {
            let mut pipe = PipelineConfig {
                hidden: cell.hidden,
                n_max: cell.n_bl,
                n_min: cell.n_bl,
                ..base.clone()
            };
            let mut sums = vec![0.0; formats.len()];
            for r in 0..cfg.replicas as u64 {
                let seed = ensemble_base_seed(cfg.seed, r, cell.n_bl);
                let trained = train_all(&feats, &pipe, seed)?;
                for (sum, fmt) in sums.iter_mut().zip(&formats) {
                    pipe.inference = Inference::Fixed(*fmt);
                    *sum += loo_trained(&trained, &pipe, seed)?.accuracy();
                }
            }
            Ok(sums.into_iter().map(|s| s / cfg.replicas as f64).collect())
        })
        .collect::<Result<_>>()?;

    let reference = model.estimate((cfg.hidden * cfg.n_max) as f64, 16, cfg.mode)?;
    let mut acc_csv = String::from("hidden,n_bl,l_eff,bits,mean_accuracy,replicas\n");
    let mut energy_csv = String::from("hidden,n_bl,l_eff,bits,nj_per_inference,relative_energy\n");
    for (cell, accs) in cells.iter().zip(&accuracy) {
        for (fmt, acc) in formats.iter().zip(accs) {
            let bits = fmt.bits();
            let _ = writeln!(acc_csv, "{},{},{},{bits},{acc},{}", cell.hidden, cell.n_bl, cell.l_eff(), cfg.replicas);
            let nj = model.estimate(cell.l_eff() as f64, bits, cfg.mode)?;
            let _ = writeln!(energy_csv, "{},{},{},{bits},{nj},{}", cell.hidden, cell.n_bl, cell.l_eff(), nj / reference);
        }
    }
    let mut staged = Staged::default();
    staged.add(cfg.out.join("sweep_accuracy.csv"), acc_csv);
    staged.add(cfg.out.join("sweep_energy.csv"), energy_csv);
    staged.commit()?;
    println!("{} cells x {} widths", cells.len(), formats.len());
    Ok(())
}

pub fn features(cfg: &RunConfig) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let feats = extract_manifest(&manifest)?;
    let mut staged = Staged::default();
    for b in &feats {
        staged.add(
            cfg.out.join("features").join(format!("{}.csv", b.id)),
            features_csv(&b.id, &b.features),
        );
    }
    staged.commit()?;
    Ok(())
}

pub fn synth(out: &Path, healthy: usize, degrading: usize, windows: usize, onset: f64, seed: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&onset) {
        bail!("onset fraction must lie in [0, 1], got {onset}");
    }
    let m = synthetic_manifest(healthy, degrading, windows, onset, seed)?;
    write_atomic(out, &m.to_toml())?;
    Ok(())
}
