//! One function per subcommand. Each writes its artifacts through a
//! temporary file and a rename, and records the resolved config next to them.

use std::ops::Range;
use std::path::{Path, PathBuf};

use stdn_core::cluster::MembershipMatrix;
use stdn_core::decompose::{decompose_panel, Component};
use stdn_core::eval::{config_hash, evaluate, inject_missing, split_peak, synth_generate, EvalReport, ForecastSet};
use stdn_core::panel::{filter_complete, impute_forward, load_csv, Panel, FLOW};
use stdn_model::{
    baseline_current, cluster_sensors, records_from_raw, records_from_stationary, test_anchors, Forecaster,
    WeekdayHourly,
};

use crate::{CliError, Result, RunConfig};

/// Writes `dest` by writing a sibling temporary file and renaming it.
pub fn atomic<T>(dest: &Path, write: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let name = dest
        .file_name()
        .ok_or_else(|| CliError::Config(format!("{} is not a file path", dest.display())))?;
    let tmp = dest.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let out = write(&tmp)?;
    std::fs::rename(&tmp, dest).map_err(|e| CliError::io(dest, e))?;
    Ok(out)
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn make_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => make_dir(dir),
        _ => Ok(()),
    }
}

fn need<'a>(what: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::Config(format!("missing --{what}")))
}

fn need_seed(cfg: &RunConfig) -> Result<u64> {
    cfg.seed.ok_or_else(|| CliError::Config("this command needs --seed".into()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic(path, |tmp| std::fs::write(tmp, text).map_err(|e| CliError::io(tmp, e)))
}

fn emit_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    eprint!("{}", cfg.to_text());
    write_text(path, &cfg.to_text())
}

fn write_panel(p: &Panel, data: &Path, meta: &Path) -> Result<()> {
    let tmp_meta = meta.with_file_name(".panel-meta.tmp");
    atomic(data, |tmp| Ok(p.write_csv(tmp, &tmp_meta)?))?;
    std::fs::rename(&tmp_meta, meta).map_err(|e| CliError::io(meta, e))
}

fn load_panel(cfg: &RunConfig) -> Result<Panel> {
    let data = need("data", &cfg.paths.data)?;
    let meta = need("meta", &cfg.paths.meta)?;
    Ok(filter_complete(&load_csv(data, meta)?, cfg.min_fraction)?)
}

/// Training span of `p` under the run's `model.train_days`, clipped to the panel.
fn train_span(p: &Panel, cfg: &RunConfig) -> usize {
    (cfg.model.train_days * p.steps_per_day()).min(p.n_steps())
}

/// `synth`: writes `data.csv` and `meta.csv` for a seeded corridor.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let seed = need_seed(cfg)?;
    let out = need("out", &cfg.paths.out)?;
    make_dir(out)?;
    let p = synth_generate(&cfg.synth, cfg.synth_sensors, cfg.synth_days, seed)?;
    write_panel(&p, &out.join("data.csv"), &out.join("meta.csv"))?;
    emit_config(cfg, &out.join("run.cfg"))
}

/// `decompose`: writes `seasonal.csv`, `trend.csv` and `residual.csv` in the
/// input layout plus the kept sensors in `meta.csv`.
pub fn cmd_decompose(cfg: &RunConfig) -> Result<()> {
    let out = need("out", &cfg.paths.out)?;
    let p = impute_forward(&load_panel(cfg)?)?;
    let period = if cfg.period == 0 { p.steps_per_day() } else { cfg.period };
    let d = decompose_panel(&p, period)?;
    make_dir(out)?;
    for (c, name) in [
        (Component::Seasonal, "seasonal.csv"),
        (Component::Trend, "trend.csv"),
        (Component::Residual, "residual.csv"),
    ] {
        let part = Panel::from_dense(p.sensors().to_vec(), p.start(), p.step_minutes(), p.n_steps(), d.block(c).to_vec())?;
        write_panel(&part, &out.join(name), &out.join("meta.csv"))?;
    }
    emit_config(cfg, &out.join("run.cfg"))
}

/// `cluster`: distance table, merge log and memberships over the training span.
pub fn cmd_cluster(cfg: &RunConfig) -> Result<()> {
    let out = need("out", &cfg.paths.out)?;
    let p = load_panel(cfg)?;
    let c = cluster_sensors(&p, 0..train_span(&p, cfg), &cfg.rolling, cfg.fhc)?;
    make_dir(out)?;
    atomic(&out.join("distances.csv"), |t| Ok(c.distances.write_csv(t)?))?;
    atomic(&out.join("merges.csv"), |t| Ok(c.fhc.write_merge_log(t)?))?;
    atomic(&out.join("clusters.csv"), |t| Ok(c.memberships.write_csv(p.sensors(), t)?))?;
    atomic(&out.join("meta.csv"), |t| Ok(stdn_core::panel::write_meta(p.sensors(), t)?))?;
    emit_config(cfg, &out.join("run.cfg"))
}

/// `train`: fits the forecaster on `--data` (or a seeded synthetic corridor)
/// and writes the model directory, run logs and notes.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let seed = need_seed(cfg)?;
    let out = need("out", &cfg.paths.out)?;
    make_dir(out)?;
    let raw = if cfg.paths.data.is_some() {
        load_panel(cfg)?
    } else {
        let p = synth_generate(&cfg.synth, cfg.synth_sensors, cfg.synth_days, seed)?;
        write_panel(&p, &out.join("data.csv"), &out.join("meta.csv"))?;
        p
    };
    let clusters = match &cfg.paths.clusters {
        Some(path) => MembershipMatrix::read_csv(path, raw.sensors())?,
        None => cluster_sensors(&raw, 0..train_span(&raw, cfg), &cfg.rolling, cfg.fhc)?.memberships,
    };
    let outcome = Forecaster::train(&raw, &clusters, &cfg.model, seed)?;
    outcome.forecaster.save(&out.join("model"))?;
    atomic(&out.join("train_log.csv"), |t| Ok(outcome.history.write_log(t)?))?;
    for (j, h) in outcome.pretrain.iter().enumerate() {
        atomic(&out.join(format!("pretrain_log_{j}.csv")), |t| Ok(h.write_log(t)?))?;
    }
    let notes: String = outcome.notes.iter().map(|n| format!("{n}\n")).collect();
    write_text(&out.join("notes.txt"), &notes)?;
    emit_config(cfg, &out.join("run.cfg"))
}

/// Model, sensors and raw panel aligned to the model's sensor order.
fn load_for_model(cfg: &RunConfig) -> Result<(Forecaster, Panel)> {
    let model = need("model", &cfg.paths.model)?;
    let f = Forecaster::load(model)?;
    let data = need("data", &cfg.paths.data)?;
    let meta = need("meta", &cfg.paths.meta)?;
    let p = load_csv(data, meta)?;
    let idx: Vec<usize> = f
        .sensors
        .iter()
        .map(|s| {
            p.sensors()
                .iter()
                .position(|q| q.id == s.id)
                .ok_or_else(|| CliError::Data(format!("sensor {:?} of the model is not in the data", s.id)))
        })
        .collect::<Result<_>>()?;
    Ok((f, p.select_sensors(&idx)))
}

/// Test anchors after the training span when the panel extends past it,
/// else every anchor.
fn eval_anchors(f: &Forecaster, p: &Panel) -> Range<usize> {
    let train_end = f.config.train_days * p.steps_per_day();
    if train_end + f.config.horizon < p.n_steps() {
        test_anchors(train_end, p.n_steps())
    } else {
        0..p.n_steps()
    }
}

fn report_path(report: &Path, suffix: &str) -> PathBuf {
    let stem = report.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    report.with_file_name(format!("{stem}.{suffix}.csv"))
}

fn score(name: &str, f: &Forecaster, cfg: &RunConfig, set: &ForecastSet, p: &Panel) -> Result<EvalReport> {
    let part = split_peak(p, cfg.peak_occupancy)?;
    // Paths and seed do not change what is measured.
    let settings: String = cfg
        .to_text()
        .lines()
        .filter(|l| !l.starts_with("seed") && !l.starts_with("path."))
        .map(|l| format!("{l}\n"))
        .collect();
    let hash = config_hash(&format!("{}{settings}", f.config.to_text()));
    Ok(evaluate(name, f.seed, &hash, set, &part)?)
}

/// `eval`: scores the model and both baselines on `--data`. The model report
/// goes to `--report`; baselines to sibling files.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let report = need("report", &cfg.paths.report)?;
    let (f, p) = load_for_model(cfg)?;
    make_parent(report)?;
    let anchors = eval_anchors(&f, &p);
    let prep = f.prepare(&p)?;
    let samples = f.windows(&prep, anchors)?;
    if samples.is_empty() {
        return Err(CliError::Data("no complete windows to evaluate".into()));
    }
    let h = f.config.horizon;
    let preds = f.predict(&samples)?;
    let model = records_from_stationary(&prep, &p, &f.scaling, &samples, &preds, h)?;
    let cur: Vec<f64> = samples
        .iter()
        .flat_map(|s| baseline_current(s, f.config.window, p.n_features(), FLOW))
        .collect();
    let current = records_from_stationary(&prep, &p, &f.scaling, &samples, &cur, h)?;
    let fit_end = (f.config.train_days * p.steps_per_day()).min(p.n_steps());
    let table = WeekdayHourly::fit(&p, 0..fit_end, FLOW, cfg.weekday_bin_minutes)?;
    let weekly = records_from_raw(&prep, &p, &f.scaling, &samples, h, |_, i, t| table.predict(i, p.timestamp(t)))?;

    let r = score("model", &f, cfg, &model, &p)?;
    atomic(report, |t| Ok(r.write_csv(t)?))?;
    for (name, set) in [("baseline_current", &current), ("baseline_weekday_hourly", &weekly)] {
        let b = score(name, &f, cfg, set, &p)?;
        atomic(&report_path(report, name), |t| Ok(b.write_csv(t)?))?;
    }
    print!("{r}");
    emit_config(cfg, &report.with_extension("cfg"))
}

/// `missing-eval`: injects seeded missing blocks into the inputs and reports
/// the model's scores with their change against clean inputs.
pub fn cmd_missing_eval(cfg: &RunConfig) -> Result<()> {
    let seed = need_seed(cfg)?;
    let report = need("report", &cfg.paths.report)?;
    let (f, p) = load_for_model(cfg)?;
    make_parent(report)?;
    let anchors = eval_anchors(&f, &p);
    let inj = inject_missing(&p, seed, &cfg.missing)?;
    let clean = score("model", &f, cfg, &f.forecast(&p, &p, anchors.clone())?, &p)?;
    let missing = score("model", &f, cfg, &f.forecast(&inj.input, &inj.truth, anchors)?, &p)?;
    let mut r = missing.clone();
    r.add_missing_deltas(&clean, &missing);
    atomic(report, |t| Ok(r.write_csv(t)?))?;
    print!("{r}");
    emit_config(cfg, &report.with_extension("cfg"))
}
