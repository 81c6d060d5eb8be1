//! Runs one experiment mode end to end and writes its artifacts.
//!
//! Every run writes `trajectory.csv`, `report.json` and `timing.json`.
//! The report is a pure function of the config and seed; wall-clock times
//! live in `timing.json` only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::database::ReferenceDatabase;
use crate::error::{KmpError, Result};
use crate::frames::{LocalFrame, LocalKmpSet, LocalLearnOptions};
use crate::gmm::{fit_em, uniform_grid, DemoSet, EmOptions, GmmModel};
use crate::kernels::KernelSpec;
use crate::kmp::{
    default_zeta, predict_time_scaled, superpose, update_database_all, DesiredPoint, KmpModel, Prediction, TimeScale,
    UpdateAction,
};
use crate::linalg::from_row_major;
use crate::tooling::config::{
    preset_defaults, DataSource, DesiredPointConfig, ExperimentConfig, Mode, PriorityConfig,
};
use crate::tooling::datasets::{generate, Dataset};
use crate::tooling::force::{force_sim_step, ForceEvent, ForceParams};
use crate::tooling::io::{load_demos, load_model, save_gmm, save_model, write_json, write_trajectory};

/// Components used for CSV data when the config gives none.
pub const DEFAULT_COMPONENTS: usize = 5;

/// Priority values are clamped into the open unit interval by this margin.
pub const PRIORITY_MARGIN: f64 = 1e-12;

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub mode: Mode,
    pub files: Vec<PathBuf>,
    pub report: Value,
}

struct Timer {
    start: Instant,
    stages: BTreeMap<String, f64>,
}

impl Timer {
    fn new() -> Self {
        Timer {
            start: Instant::now(),
            stages: BTreeMap::new(),
        }
    }

    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f().map_err(|e| e.in_stage(name));
        *self.stages.entry(name.to_string()).or_default() += t.elapsed().as_secs_f64();
        out
    }
}

/// Everything learned from the data source, or loaded from a saved model.
struct Base {
    model: KmpModel,
    gmm: Option<GmmModel>,
    em: Option<Value>,
    data: Option<Value>,
    time_driven: bool,
}

impl Base {
    /// Dimension a position-only desired point carries.
    fn position_dim(&self) -> usize {
        if self.time_driven {
            self.model.output_dim() / 2
        } else {
            self.model.output_dim()
        }
    }
}

#[derive(Clone, Copy)]
struct Resolved {
    length_scale: f64,
    lambda: f64,
    time_driven: bool,
    em: EmOptions,
    reference_points: Option<usize>,
    sample_reference: bool,
}

fn resolve(config: &ExperimentConfig, demos: &DemoSet) -> Result<Resolved> {
    let defaults = config.preset().map(preset_defaults);
    let length_scale = config
        .kernel
        .length_scale
        .or(defaults.map(|d| d.length_scale))
        .ok_or_else(|| KmpError::validation("kernel.length_scale is required"))?;
    let lambda = config
        .lambda
        .or(defaults.map(|d| d.lambda))
        .ok_or_else(|| KmpError::validation("lambda is required"))?;
    let time_driven = config.time_driven.or(defaults.map(|d| d.time_driven)).unwrap_or(false);
    if time_driven && demos.input_dim() != 1 {
        return Err(KmpError::validation("time_driven needs a scalar time input"));
    }
    let mut em = EmOptions::new(
        config
            .gmm
            .components
            .or(defaults.map(|d| d.components))
            .unwrap_or(DEFAULT_COMPONENTS),
        config.seed,
    );
    if let Some(m) = config.gmm.max_iter {
        em.max_iter = m;
    }
    if let Some(t) = config.gmm.tol {
        em.tol = t;
    }
    let sample_reference = config
        .reference
        .sample
        .or(defaults.map(|d| d.sample_reference))
        .unwrap_or(demos.input_dim() != 1);
    if !sample_reference && demos.input_dim() != 1 {
        return Err(KmpError::validation("grid reference inputs need a scalar input; set reference.sample"));
    }
    Ok(Resolved {
        length_scale,
        lambda,
        time_driven,
        em,
        reference_points: config.reference.points.or(defaults.map(|d| d.reference_points)),
        sample_reference,
    })
}

fn kernel_for(config: &ExperimentConfig, r: &Resolved) -> Result<KernelSpec> {
    if r.time_driven {
        KernelSpec::time_driven(r.length_scale, config.delta())
    } else {
        KernelSpec::gaussian(r.length_scale)
    }
}

fn load_dataset(config: &ExperimentConfig, base_dir: &Path) -> Result<Dataset> {
    match config.data.as_ref().ok_or_else(|| KmpError::validation("config has no 'data'"))? {
        DataSource::Preset(p) => generate(*p, config.seed),
        DataSource::Csv(path) => Ok(Dataset {
            demos: load_demos(&ExperimentConfig::resolve(base_dir, path))?,
            frames: None,
        }),
    }
}

fn reference_inputs(
    gmm: Option<&GmmModel>,
    demos: &DemoSet,
    r: &Resolved,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let n = r.reference_points.unwrap_or(demos.demo_len());
    if r.sample_reference {
        let gmm = gmm.ok_or_else(|| KmpError::validation("sampled reference inputs need a mixture"))?;
        Ok(gmm.sample_input_marginal(n, seed.wrapping_add(1)))
    } else {
        let (lo, hi) = demos.time_span()?;
        Ok(uniform_grid(lo, hi, n).into_iter().map(|t| DVector::from_element(1, t)).collect())
    }
}

fn learn_base(config: &ExperimentConfig, base_dir: &Path, timer: &mut Timer) -> Result<Base> {
    if let Some(path) = &config.model {
        let model = timer.stage("load", || load_model(&ExperimentConfig::resolve(base_dir, path)))?;
        let time_driven = model.kernel().derivative_mode;
        return Ok(Base {
            model,
            gmm: None,
            em: None,
            data: None,
            time_driven,
        });
    }
    let data = timer.stage("load", || load_dataset(config, base_dir))?;
    timer.stage("learn", || {
        let r = resolve(config, &data.demos)?;
        let demos = if r.time_driven {
            data.demos.with_velocities()?
        } else {
            data.demos.clone()
        };
        let fit = fit_em(&demos, &r.em)?;
        let inputs = reference_inputs(Some(&fit.model), &demos, &r, config.seed)?;
        let db = fit.model.extract_reference(&inputs)?;
        let model = KmpModel::build(db, kernel_for(config, &r)?, r.lambda)?;
        Ok(Base {
            model,
            em: Some(json!({
                "components": r.em.components,
                "iterations": fit.log_likelihood.len(),
                "converged": fit.converged,
                "log_likelihood": fit.log_likelihood.last().copied(),
            })),
            gmm: Some(fit.model),
            data: Some(json!({
                "demonstrations": data.demos.num_demos(),
                "points_per_demonstration": data.demos.demo_len(),
                "input_dim": data.demos.input_dim(),
                "output_dim": data.demos.output_dim(),
            })),
            time_driven: r.time_driven,
        })
    })
}

fn time_span_of(db: &ReferenceDatabase) -> Result<(f64, f64)> {
    if db.input_dim() != 1 {
        return Err(KmpError::validation("a query grid needs a scalar input; give queries.inputs"));
    }
    Ok(db
        .inputs()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s[0]), hi.max(s[0]))))
}

fn query_inputs(config: &ExperimentConfig, db: &ReferenceDatabase) -> Result<Vec<DVector<f64>>> {
    if let Some(q) = &config.queries.inputs {
        return q
            .iter()
            .map(|v| {
                if v.len() != db.input_dim() {
                    return Err(KmpError::DimensionMismatch {
                        context: "query input",
                        expected: db.input_dim(),
                        found: v.len(),
                    });
                }
                Ok(DVector::from_column_slice(v))
            })
            .collect();
    }
    if db.input_dim() != 1 && config.time_scale.is_none() {
        return Ok(db.inputs().cloned().collect());
    }
    let (lo, hi) = match &config.time_scale {
        Some(ts) => (0.0, ts.duration),
        None => time_span_of(db)?,
    };
    Ok(uniform_grid(lo, hi, config.queries.points)
        .into_iter()
        .map(|t| DVector::from_element(1, t))
        .collect())
}

fn predict_all(config: &ExperimentConfig, model: &KmpModel, queries: &[DVector<f64>]) -> Result<Vec<Prediction>> {
    match &config.time_scale {
        None => model.predict_many(queries),
        Some(ts) => {
            let (lo, hi) = time_span_of(model.database())?;
            if lo != 0.0 {
                return Err(KmpError::validation("time scaling needs demonstrations that start at t = 0"));
            }
            let scale = TimeScale::linear(hi, ts.duration)?;
            queries.iter().map(|q| predict_time_scaled(model, &scale, q[0])).collect()
        }
    }
}

/// Converts a configured point, completing a position-only mean on a
/// time-driven model.
pub fn desired_point(p: &DesiredPointConfig, output_dim: usize, time_driven: bool) -> Result<DesiredPoint> {
    let d = p.mean.len();
    let cov = match &p.cov {
        Some(c) => from_row_major(d, d, c).ok_or(KmpError::DimensionMismatch {
            context: "desired covariance",
            expected: d * d,
            found: c.len(),
        })?,
        None => DMatrix::identity(d, d) * p.variance,
    };
    let input = DVector::from_column_slice(&p.input);
    let mean = DVector::from_column_slice(&p.mean);
    if time_driven && 2 * d == output_dim {
        DesiredPoint::position_only(input, mean, cov)
    } else if d == output_dim {
        DesiredPoint::new(input, mean, cov)
    } else {
        Err(KmpError::DimensionMismatch {
            context: "desired mean",
            expected: output_dim,
            found: d,
        })
    }
}

/// Largest per-dimension extent of the first `dims` mean components.
pub fn trajectory_range(predictions: &[Prediction], dims: usize) -> f64 {
    (0..dims)
        .map(|j| {
            let (lo, hi) = predictions
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.mean[j]), hi.max(p.mean[j])));
            hi - lo
        })
        .fold(0.0, f64::max)
}

fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>, dims: usize) -> f64 {
    (0..dims).map(|j| (a[j] - b[j]).abs()).fold(0.0, f64::max)
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn actions_json(actions: &[UpdateAction]) -> Value {
    Value::Array(
        actions
            .iter()
            .map(|a| match a {
                UpdateAction::Replaced(i) => json!({"replaced": i}),
                UpdateAction::Inserted => json!("inserted"),
            })
            .collect(),
    )
}

/// Errors of `model` at each desired point, on the constrained components.
fn point_errors(model: &KmpModel, points: &[(DesiredPoint, usize)], range: f64) -> Result<(Value, f64)> {
    let mut worst: f64 = 0.0;
    let mut rows = Vec::with_capacity(points.len());
    for (p, dims) in points {
        let pred = model.predict_mean(&p.input)?;
        let err = max_abs_diff(&pred, &p.mean, *dims);
        let rel = if range > 0.0 { err / range } else { err };
        worst = worst.max(rel);
        rows.push(json!({
            "input": vec_json(&p.input),
            "desired": p.mean.as_slice()[..*dims].to_vec(),
            "predicted": pred.as_slice()[..*dims].to_vec(),
            "abs_error": err,
            "relative_error": rel,
        }));
    }
    Ok((Value::Array(rows), worst))
}

fn convert_points(cfgs: &[DesiredPointConfig], base: &Base) -> Result<Vec<(DesiredPoint, usize)>> {
    cfgs.iter()
        .map(|c| Ok((desired_point(c, base.model.output_dim(), base.time_driven)?, c.mean.len())))
        .collect()
}

fn model_json(model: &KmpModel) -> Value {
    json!({
        "reference_points": model.database().len(),
        "input_dim": model.input_dim(),
        "output_dim": model.output_dim(),
        "lambda": model.lambda(),
        "length_scale": model.kernel().length_scale,
        "derivative_mode": model.kernel().derivative_mode,
        "jitter": model.jitter(),
    })
}

/// Output directory: the command-line override, else the config's
/// `output_dir` relative to the config file, else `kmp_output`.
pub fn output_dir(config: &ExperimentConfig, base_dir: &Path, cli_out: Option<&Path>) -> PathBuf {
    match (cli_out, &config.output_dir) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => ExperimentConfig::resolve(base_dir, p),
        (None, None) => PathBuf::from("kmp_output"),
    }
}

/// Validates `config` for `mode`, runs it and writes the artifacts into
/// `out_dir`. Relative paths in the config resolve against `base_dir`.
pub fn run_experiment(config: &ExperimentConfig, mode: Mode, base_dir: &Path, out_dir: &Path) -> Result<RunSummary> {
    config.validate(mode).map_err(|e| e.in_stage("config"))?;
    let mut timer = Timer::new();
    let mut files = Vec::new();
    let mut report = serde_json::Map::new();
    report.insert("mode".into(), json!(mode.name()));
    report.insert("seed".into(), json!(config.seed));

    let cov_out = config.covariance_output;
    let traj_path = out_dir.join("trajectory.csv");

    match mode {
        Mode::Local => run_local(config, base_dir, out_dir, &mut timer, &mut report, &mut files)?,
        _ => {
            let base = learn_base(config, base_dir, &mut timer)?;
            if let Some(d) = &base.data {
                report.insert("data".into(), d.clone());
            }
            if let Some(em) = &base.em {
                report.insert("em".into(), em.clone());
            }
            if let Some(gmm) = &base.gmm {
                let p = out_dir.join("gmm.json");
                timer.stage("write", || save_gmm(&p, gmm))?;
                files.push(p);
            }
            let queries = timer.stage("predict", || query_inputs(config, base.model.database()))?;
            let unadapted = timer.stage("predict", || predict_all(config, &base.model, &queries))?;
            let dims = base.position_dim();
            let range = trajectory_range(&unadapted, dims);
            report.insert("range".into(), json!(range));

            let (final_model, predictions) = match mode {
                Mode::Fit | Mode::Predict => (base.model.clone(), unadapted),
                Mode::Adapt => {
                    let (model, preds) = timer.stage("adapt", || {
                        let points = convert_points(&config.desired_points, &base)?;
                        let zeta = match config.zeta {
                            Some(z) => z,
                            None => default_zeta(base.model.database())?,
                        };
                        let plain: Vec<DesiredPoint> = points.iter().map(|(p, _)| p.clone()).collect();
                        let (db, actions) = update_database_all(base.model.database(), &plain, zeta)?;
                        let model = base.model.with_database(db)?;
                        let (errors, worst) = point_errors(&model, &points, range)?;
                        report.insert("zeta".into(), json!(zeta));
                        report.insert("updates".into(), actions_json(&actions));
                        report.insert("desired_points".into(), errors);
                        report.insert("max_relative_error".into(), json!(worst));
                        let preds = predict_all(config, &model, &queries)?;
                        Ok((model, preds))
                    })?;
                    report.insert("max_shift".into(), json!(max_shift(&unadapted, &preds, dims)));
                    (model, preds)
                }
                Mode::Superpose => timer.stage("superpose", || {
                    run_superpose(config, &base, &queries, range, out_dir, &mut report, &mut files)
                })?,
                Mode::ForceSim => timer.stage("force", || run_force(config, &base, &queries, range, &mut report))?,
                Mode::Local => unreachable!("handled above"),
            };
            report.insert("model".into(), model_json(&final_model));
            let p = out_dir.join("model.json");
            timer.stage("write", || save_model(&p, &final_model))?;
            files.push(p);
            timer.stage("write", || write_trajectory(&traj_path, &queries, &predictions, cov_out))?;
            files.insert(0, traj_path.clone());
        }
    }

    let report = Value::Object(report);
    let report_path = out_dir.join("report.json");
    write_json(&report_path, &report).map_err(|e| e.in_stage("write"))?;
    files.push(report_path);
    let timing = json!({
        "total_seconds": timer.start.elapsed().as_secs_f64(),
        "stages": timer.stages,
    });
    let timing_path = out_dir.join("timing.json");
    write_json(&timing_path, &timing).map_err(|e| e.in_stage("write"))?;
    files.push(timing_path);
    Ok(RunSummary { mode, files, report })
}

fn max_shift(a: &[Prediction], b: &[Prediction], dims: usize) -> f64 {
    a.iter().zip(b).map(|(x, y)| max_abs_diff(&x.mean, &y.mean, dims)).fold(0.0, f64::max)
}

/// Priorities per reference input for the configured profile.
pub fn priorities(profile: &PriorityConfig, inputs: &[DVector<f64>], candidates: usize) -> Result<Vec<Vec<f64>>> {
    match profile {
        PriorityConfig::ExpDecay => {
            if candidates != 2 {
                return Err(KmpError::validation("exp_decay priority needs exactly two candidates"));
            }
            inputs
                .iter()
                .map(|s| {
                    if s.len() != 1 {
                        return Err(KmpError::validation("exp_decay priority needs a time input"));
                    }
                    let g = (-s[0]).exp().clamp(PRIORITY_MARGIN, 1.0 - PRIORITY_MARGIN);
                    Ok(vec![g, 1.0 - g])
                })
                .collect()
        }
        PriorityConfig::Constant(g) => {
            if g.len() != candidates {
                return Err(KmpError::validation("constant priority needs one weight per candidate"));
            }
            Ok(vec![g.clone(); inputs.len()])
        }
    }
}

fn run_superpose(
    config: &ExperimentConfig,
    base: &Base,
    queries: &[DVector<f64>],
    range: f64,
    out_dir: &Path,
    report: &mut serde_json::Map<String, Value>,
    files: &mut Vec<PathBuf>,
) -> Result<(KmpModel, Vec<Prediction>)> {
    let s = config.superpose.as_ref().expect("validated");
    let zeta = match config.zeta {
        Some(z) => z,
        None => default_zeta(base.model.database())?,
    };
    let inputs: Vec<DVector<f64>> = base.model.database().inputs().cloned().collect();
    let mut dbs = Vec::with_capacity(s.candidates.len());
    let mut cand_reports = Vec::with_capacity(s.candidates.len());
    for (l, c) in s.candidates.iter().enumerate() {
        let points = convert_points(c, base)?;
        let plain: Vec<DesiredPoint> = points.iter().map(|(p, _)| p.clone()).collect();
        let (db, actions) = update_database_all(base.model.database(), &plain, zeta)?;
        let model = base.model.with_database(db)?;
        let (errors, worst) = point_errors(&model, &points, range)?;
        cand_reports.push(json!({
            "updates": actions_json(&actions),
            "desired_points": errors,
            "max_relative_error": worst,
        }));
        let preds = predict_all(config, &model, queries)?;
        let p = out_dir.join(format!("candidate_{}.csv", l + 1));
        write_trajectory(&p, queries, &preds, config.covariance_output)?;
        files.push(p);
        dbs.push(model.to_database(&inputs)?);
    }
    let gammas = priorities(&s.priority, &inputs, dbs.len())?;
    let mixed = superpose(&dbs, &gammas)?;
    let model = KmpModel::build(mixed, base.model.kernel().clone(), base.model.lambda())?;
    let preds = predict_all(config, &model, queries)?;
    report.insert("zeta".into(), json!(zeta));
    report.insert("candidates".into(), Value::Array(cand_reports));
    Ok((model, preds))
}

fn run_force(
    config: &ExperimentConfig,
    base: &Base,
    _queries: &[DVector<f64>],
    range: f64,
    report: &mut serde_json::Map<String, Value>,
) -> Result<(KmpModel, Vec<Prediction>)> {
    let f = config.force.as_ref().expect("validated");
    if !base.time_driven && base.model.input_dim() != 1 {
        return Err(KmpError::validation("force simulation needs a time-input model"));
    }
    let o = base.position_dim();
    let mut params = ForceParams::new(DMatrix::identity(o, o) * f.gain, f.regulation_time, f.threshold)?;
    params.position_variance = f.position_variance;
    let zeta = match config.zeta {
        Some(z) => z,
        None => default_zeta(base.model.database())?,
    };
    let mut model = base.model.clone();
    let mut events = Vec::with_capacity(f.events.len());
    let mut worst: f64 = 0.0;
    for e in &f.events {
        let force = DVector::from_column_slice(&e.force);
        let event = match &e.position {
            Some(p) => ForceEvent::new(e.time, force, DVector::from_column_slice(p))?,
            None => ForceEvent::at_prediction(&model, e.time, force)?,
        };
        let out = force_sim_step(&model, &event, &params, zeta)?;
        let mut row = json!({
            "time": e.time,
            "force_norm": event.force.norm(),
            "position": vec_json(&event.position),
            "applied": out.applied,
            "updates": actions_json(&out.actions),
        });
        if out.applied {
            let marked: Vec<(DesiredPoint, usize)> = out.points.iter().map(|p| (p.clone(), o)).collect();
            let (errors, w) = point_errors(&out.model, &marked, range)?;
            worst = worst.max(w);
            row["desired_points"] = errors;
        }
        events.push(row);
        model = out.model;
    }
    let queries = query_inputs(config, base.model.database())?;
    let preds = predict_all(config, &model, &queries)?;
    report.insert("zeta".into(), json!(zeta));
    report.insert("events".into(), Value::Array(events));
    report.insert("max_relative_error".into(), json!(worst));
    Ok((model, preds))
}

fn run_local(
    config: &ExperimentConfig,
    base_dir: &Path,
    out_dir: &Path,
    timer: &mut Timer,
    report: &mut serde_json::Map<String, Value>,
    files: &mut Vec<PathBuf>,
) -> Result<()> {
    let data = timer.stage("load", || load_dataset(config, base_dir))?;
    let fc = config.frames.as_ref().expect("validated");
    let (set, r) = timer.stage("learn", || {
        let r = resolve(config, &data.demos)?;
        let training: Vec<Vec<LocalFrame>> = match (&fc.training, &data.frames) {
            (Some(t), _) => t
                .iter()
                .map(|fs| fs.iter().map(LocalFrame::from_document).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?,
            (None, Some(f)) => f.clone(),
            (None, None) => return Err(KmpError::validation("no training frames")),
        };
        let demos = if r.time_driven {
            data.demos.with_velocities()?
        } else {
            data.demos.clone()
        };
        let inputs = reference_inputs(None, &demos, &Resolved { sample_reference: false, ..r }, config.seed)?;
        let options = LocalLearnOptions {
            em: r.em,
            reference_inputs: inputs,
            kernel: kernel_for(config, &r)?,
            lambda: r.lambda,
        };
        Ok((LocalKmpSet::learn(&demos, &training, &options)?, r))
    })?;
    let frames: Vec<LocalFrame> = fc
        .prediction
        .iter()
        .map(LocalFrame::from_document)
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("local"))?;
    let (set, queries, predictions) = timer.stage("local", || {
        let mut set = set.with_frames(frames)?;
        let output_dim = set.models()[0].output_dim();
        if !config.desired_points.is_empty() {
            let zeta = match config.zeta {
                Some(z) => z,
                None => default_zeta(set.models()[0].database())?,
            };
            let mut updates = Vec::new();
            for c in &config.desired_points {
                let p = desired_point(c, output_dim, r.time_driven)?;
                let (next, actions) = set.update_local(&p, zeta)?;
                updates.push(actions_json(&actions));
                set = next;
            }
            report.insert("zeta".into(), json!(zeta));
            report.insert("updates".into(), Value::Array(updates));
        }
        let queries = query_inputs(config, set.models()[0].database())?;
        if config.time_scale.is_some() {
            return Err(KmpError::validation("time scaling is not supported in local mode"));
        }
        let predictions = queries.iter().map(|q| set.local_predict(q)).collect::<Result<Vec<_>>>()?;
        Ok((set, queries, predictions))
    })?;
    let o = set.frames()[0].output_dim();
    let first = &predictions[0].mean;
    let last = &predictions[predictions.len() - 1].mean;
    let range = trajectory_range(&predictions, o);
    let start_err = max_abs_diff(first, set.frames()[0].output_offset(), o);
    let end_err = max_abs_diff(last, set.frames()[set.frames().len() - 1].output_offset(), o);
    report.insert("range".into(), json!(range));
    report.insert(
        "frames".into(),
        Value::Array(set.frames().iter().map(|f| vec_json(f.output_offset())).collect()),
    );
    report.insert("start".into(), json!(first.as_slice()[..o].to_vec()));
    report.insert("end".into(), json!(last.as_slice()[..o].to_vec()));
    report.insert("start_error".into(), json!(start_err));
    report.insert("end_error".into(), json!(end_err));
    report.insert(
        "models".into(),
        Value::Array(set.models().iter().map(model_json).collect()),
    );
    timer.stage("write", || {
        for (p, m) in set.models().iter().enumerate() {
            let path = out_dir.join(format!("model_frame_{}.json", p + 1));
            save_model(&path, m)?;
            files.push(path);
        }
        let traj = out_dir.join("trajectory.csv");
        write_trajectory(&traj, &queries, &predictions, config.covariance_output)?;
        files.insert(0, traj);
        Ok(())
    })
}
