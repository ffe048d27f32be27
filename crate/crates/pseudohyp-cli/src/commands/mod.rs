//! Subcommand implementations and the glue they share.

pub mod continuity;
pub mod fields;
pub mod kneading;
pub mod lyapunov;
pub mod render;
pub mod section;
pub mod sweep;
pub mod verify;

use std::path::Path;

use serde_json::Value;

use pseudohyp::integrate::{integrate_trajectory, iterate_map};
use pseudohyp::lyapunov::NecessaryConditionReport;
use pseudohyp::systems::SystemKind;
use pseudohyp::{IntegratorOptions, SystemModel, Trajectory};

use crate::{CliError, CliResult, ConfigBag};

/// JSON number from a finite f64.
pub(crate) fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

pub(crate) fn vec_value(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

pub(crate) fn build_model(bag: &ConfigBag) -> CliResult<SystemModel> {
    let system = bag.system()?;
    let params = bag.params()?;
    Ok(SystemModel::builtin(&system, &params)?)
}

/// The effective parameter set (overrides applied over system defaults).
pub(crate) fn params_value(model: &SystemModel) -> Value {
    let mut obj = serde_json::Map::new();
    for (name, v) in model.params() {
        obj.insert(name.to_string(), num(v));
    }
    Value::Object(obj)
}

pub(crate) fn resolve_x0(bag: &ConfigBag, model: &SystemModel) -> CliResult<Vec<f64>> {
    match bag.opt_vec_f64("x0")? {
        Some(x0) => {
            if x0.len() != model.dim() {
                return Err(CliError::usage(format!(
                    "--x0 needs {} components for {}, got {}",
                    model.dim(),
                    model.name(),
                    x0.len()
                )));
            }
            Ok(x0)
        }
        None => Ok(crate::verify::default_x0(model)),
    }
}

pub(crate) fn integrator_from(bag: &ConfigBag) -> CliResult<IntegratorOptions> {
    Ok(IntegratorOptions::with_tol(
        bag.f64("rtol")?,
        bag.f64("atol")?,
    ))
}

pub(crate) fn print_json(v: &Value) {
    print!("{}", crate::manifest::render_json(v));
}

pub(crate) fn conditions_value(c: &NecessaryConditionReport<f64>) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("k".into(), Value::Number((c.k as u64).into()));
    obj.insert("sum_first_k".into(), num(c.sum_first_k));
    obj.insert("gap".into(), num(c.gap));
    obj.insert(
        "neutral_abs".into(),
        c.neutral_abs.map(num).unwrap_or(Value::Null),
    );
    obj.insert("tol_zero".into(), num(c.tol_zero));
    obj.insert("pass".into(), Value::Bool(c.pass));
    Value::Object(obj)
}

/// The orbit sample used by the field commands: either a cached trajectory or
/// a fresh integration driven by the `transient` / `samples` / `sample_dt`
/// config keys (`samples` counts iterations for maps).
pub(crate) fn sampled_trajectory(
    model: &SystemModel,
    x0: &[f64],
    bag: &ConfigBag,
    from_cache: Option<&Path>,
    iopts: &IntegratorOptions,
) -> CliResult<Trajectory> {
    if let Some(path) = from_cache {
        let traj = pseudohyp::cache::read_trajectory::<f64>(path)?;
        if traj.dim() != model.dim() {
            return Err(CliError::usage(format!(
                "cache {} holds dim-{} states, {} needs {}",
                path.display(),
                traj.dim(),
                model.name(),
                model.dim()
            )));
        }
        return Ok(traj);
    }
    let transient = bag.f64("transient")?;
    let samples = bag.usize("samples")?;
    if samples < 2 {
        return Err(CliError::usage("samples must be at least 2"));
    }
    match model.kind() {
        SystemKind::Flow => {
            let dt = bag.f64("sample_dt")?;
            let span = samples as f64 * dt;
            Ok(integrate_trajectory(model, x0, transient, span, dt, iopts)?)
        }
        SystemKind::Map => Ok(iterate_map(
            model,
            x0,
            transient.round().max(0.0) as usize,
            samples,
            iopts,
        )?),
    }
}
