use serde_json::Value;

use pseudohyp::integrate::integrate_adaptive;
use pseudohyp::sections::{
    attractor_section_trace, builtin_section, find_crossings, nth_return_containment,
    separatrix_trajectory, stable_manifold_boundary, write_crossings_csv, Branch, CrossDirection,
    CrossingOptions, TraceColor, Window, DEFAULT_TIME_BUDGET_PER_RETURN,
};
use pseudohyp::systems::SystemKind;
use pseudohyp::{CrossingEvent, SectionSpec, SystemModel};

use super::{build_model, integrator_from, num, params_value, print_json, resolve_x0, vec_value};
use crate::manifest::{ensure_out_dir, write_annotated_csv, write_json_file};
use crate::{CliError, CliResult, ConfigBag, RunManifest, SectionArgs};

fn parse_direction(s: &str) -> CliResult<CrossDirection> {
    match s {
        "up" => Ok(CrossDirection::Up),
        "down" => Ok(CrossDirection::Down),
        "both" => Ok(CrossDirection::Both),
        other => Err(CliError::usage(format!(
            "--direction {other}: expected up, down, or both"
        ))),
    }
}

fn parse_branch(s: &str) -> CliResult<Branch> {
    match s {
        "plus" => Ok(Branch::Plus),
        "minus" => Ok(Branch::Minus),
        other => Err(CliError::usage(format!(
            "--branch {other}: expected plus or minus"
        ))),
    }
}

fn grid_from(bag: &ConfigBag) -> CliResult<[usize; 3]> {
    let grid = bag
        .opt_vec_f64("grid")?
        .unwrap_or_else(|| vec![20.0, 20.0, 20.0]);
    if grid.len() != 3 || grid.iter().any(|&g| g < 2.0 || g.fract() != 0.0) {
        return Err(CliError::usage(
            "--grid needs three integer resolutions >= 2 (nx,ny,nw)",
        ));
    }
    Ok([grid[0] as usize, grid[1] as usize, grid[2] as usize])
}

fn default_section_name(model: &SystemModel) -> CliResult<&'static str> {
    match model.name() {
        "lorenz4d" => Ok("lorenz4d_sigma"),
        "lorenz3d" => Ok("lorenz_plane"),
        other => Err(CliError::usage(format!(
            "no built-in section for {other}; pass --section"
        ))),
    }
}

fn event_counts(events: &[CrossingEvent]) -> (usize, usize, usize) {
    let grazing = events.iter().filter(|e| e.grazing).count();
    let members = events
        .iter()
        .filter(|e| !e.grazing && e.window != Window::Outside)
        .count();
    let outside = events.len() - grazing - members;
    (members, outside, grazing)
}

pub fn run(args: &SectionArgs) -> CliResult<()> {
    crate::init_threads(args.common.threads)?;
    let mut bag = ConfigBag::with_defaults(&[
        ("mode", Value::String("crossings".into())),
        ("section", Value::Null),
        ("count", Value::Null),
        ("discard", Value::Number(0u64.into())),
        ("grid", Value::Null),
        ("direction", Value::Null),
        ("budget", num(DEFAULT_TIME_BUDGET_PER_RETURN)),
        ("transient", num(100.0)),
        ("branch", Value::String("plus".into())),
        ("offset", num(1e-6)),
        ("span", num(100.0)),
        ("sample_dt", num(0.01)),
        ("rtol", num(1e-10)),
        ("atol", num(1e-12)),
        ("x0", Value::Null),
    ]);
    bag.overlay_common(&args.common)?;
    bag.set_str("mode", Some(&args.mode));
    bag.set_str("section", args.section.as_deref());
    bag.set_u64("count", args.count);
    bag.set_u64("discard", args.discard);
    if let Some(grid) = &args.grid {
        bag.set(
            "grid",
            Value::Array(grid.iter().map(|&g| Value::Number(g.into())).collect()),
        );
    }
    bag.set_str("direction", args.direction.as_deref());
    bag.set_f64("budget", args.budget);
    bag.set_f64("transient", args.transient);
    bag.set_str("branch", args.branch.as_deref());
    bag.set_f64("offset", args.offset);
    bag.set_f64("span", args.span);
    bag.set_f64("sample_dt", args.sample_dt);

    let model = build_model(&bag)?;
    if model.kind() != SystemKind::Flow {
        return Err(CliError::usage("section modes need a flow system"));
    }
    let iopts = integrator_from(&bag)?;
    let mode = bag.str("mode")?;
    let section_name = match bag.opt_str("section")? {
        Some(name) => name,
        None => default_section_name(&model)?.to_string(),
    };
    let model_params: Vec<(String, f64)> = model
        .params()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let section: SectionSpec = builtin_section(&section_name, &model_params)?;

    let copts = CrossingOptions {
        direction: match bag.opt_str("direction")? {
            Some(d) => parse_direction(&d)?,
            None => CrossDirection::Both,
        },
        window_only: false,
        time_budget_per_return: bag.f64("budget")?,
        integrator: iopts.clone(),
    };

    let mut manifest = RunManifest::new("section", bag.to_value());
    manifest.tolerance("rtol", iopts.rtol);
    manifest.tolerance("atol", iopts.atol);
    manifest.budget("time_budget_per_return", copts.time_budget_per_return);
    ensure_out_dir(&args.common.out)?;
    let digest = manifest.config_digest.clone();

    let count = bag.opt_usize("count")?;
    let mut result = serde_json::Map::new();
    result.insert("system".into(), Value::String(model.name().to_string()));
    result.insert("params".into(), params_value(&model));
    result.insert("section".into(), Value::String(section_name.clone()));
    result.insert("mode".into(), Value::String(mode.clone()));

    match mode.as_str() {
        "crossings" => {
            let x0 = resolve_x0(&bag, &model)?;
            let transient = bag.f64("transient")?;
            let x = if transient > 0.0 {
                integrate_adaptive(&model, &x0, 0.0, transient, &iopts)?
            } else {
                x0
            };
            let n = count.unwrap_or(100);
            let events = find_crossings(&model, &x, &section, n, &copts)?;
            let (members, outside, grazing) = event_counts(&events);
            let mut csv = Vec::new();
            write_crossings_csv(&events, None, model.dim(), &mut csv)?;
            let path = args.common.out.join("crossings.csv");
            write_annotated_csv(&path, &digest, &csv)?;
            manifest.record_output(&path);
            result.insert("counted".into(), Value::Number((n as u64).into()));
            result.insert("window_members".into(), Value::Number((members as u64).into()));
            result.insert("outside".into(), Value::Number((outside as u64).into()));
            result.insert("grazing".into(), Value::Number((grazing as u64).into()));
            result.insert("csv".into(), Value::String(path.display().to_string()));
        }
        "trace" => {
            let x0 = resolve_x0(&bag, &model)?;
            let transient = bag.f64("transient")?;
            let x = if transient > 0.0 {
                integrate_adaptive(&model, &x0, 0.0, transient, &iopts)?
            } else {
                x0
            };
            let n = count.unwrap_or(1000);
            let discard = bag.usize("discard")?;
            let trace = attractor_section_trace(&model, &section, &x, n, discard, &copts)?;
            let events: Vec<CrossingEvent> = trace.iter().map(|t| t.event.clone()).collect();
            let colors: Vec<TraceColor> = trace.iter().map(|t| t.color).collect();
            let mut csv = Vec::new();
            write_crossings_csv(&events, Some(&colors), model.dim(), &mut csv)?;
            let path = args.common.out.join("trace.csv");
            write_annotated_csv(&path, &digest, &csv)?;
            manifest.record_output(&path);
            let mut color_counts = serde_json::Map::new();
            for color in [
                TraceColor::Green,
                TraceColor::Black,
                TraceColor::Red,
                TraceColor::Blue,
            ] {
                let k = colors.iter().filter(|&&c| c == color).count();
                color_counts.insert(color.as_str().to_string(), Value::Number((k as u64).into()));
            }
            result.insert("events".into(), Value::Number((events.len() as u64).into()));
            result.insert("colors".into(), Value::Object(color_counts));
            result.insert("csv".into(), Value::String(path.display().to_string()));
        }
        "containment" => {
            let grid = grid_from(&bag)?;
            let n = count.unwrap_or(10);
            let report = nth_return_containment(&model, &section, grid, n, &copts)?;
            let violations: Vec<Value> = report
                .violations
                .iter()
                .take(100)
                .map(|v| {
                    let mut obj = serde_json::Map::new();
                    obj.insert("start".into(), vec_value(&v.start));
                    obj.insert(
                        "end".into(),
                        v.end.as_ref().map(|e| vec_value(e)).unwrap_or(Value::Null),
                    );
                    obj.insert("reason".into(), Value::String(v.reason.clone()));
                    Value::Object(obj)
                })
                .collect();
            let non_returning: Vec<Value> = report
                .non_returning
                .iter()
                .take(20)
                .map(|(p, why)| {
                    let mut obj = serde_json::Map::new();
                    obj.insert("start".into(), vec_value(p));
                    obj.insert("reason".into(), Value::String(why.clone()));
                    Value::Object(obj)
                })
                .collect();
            result.insert("return_index".into(), Value::Number((n as u64).into()));
            result.insert(
                "grid".into(),
                Value::Array(grid.iter().map(|&g| Value::Number((g as u64).into())).collect()),
            );
            result.insert("checked".into(), Value::Number((report.checked as u64).into()));
            result.insert(
                "skipped_outside_quadric".into(),
                Value::Number((report.skipped_outside_quadric as u64).into()),
            );
            result.insert("all_inside".into(), Value::Bool(report.all_inside));
            result.insert(
                "n_violations".into(),
                Value::Number((report.violations.len() as u64).into()),
            );
            result.insert("violations".into(), Value::Array(violations));
            result.insert(
                "n_non_returning".into(),
                Value::Number((report.non_returning.len() as u64).into()),
            );
            result.insert("non_returning".into(), Value::Array(non_returning));
        }
        "boundary" => {
            let grid = grid_from(&bag)?;
            let report = stable_manifold_boundary(&model, &section, grid, &copts)?;
            let mut csv = Vec::new();
            {
                use std::io::Write;
                write!(csv, "x1")?;
                for j in 2..=model.dim() {
                    write!(csv, ",x{j}")?;
                }
                writeln!(csv)?;
                for p in &report.boundary_points {
                    let cells: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
                    writeln!(csv, "{}", cells.join(","))?;
                }
            }
            let path = args.common.out.join("boundary.csv");
            write_annotated_csv(&path, &digest, &csv)?;
            manifest.record_output(&path);
            result.insert(
                "grid".into(),
                Value::Array(grid.iter().map(|&g| Value::Number((g as u64).into())).collect()),
            );
            result.insert(
                "boundary_points".into(),
                Value::Number((report.boundary_points.len() as u64).into()),
            );
            result.insert("unknown".into(), Value::Number((report.unknown as u64).into()));
            result.insert("csv".into(), Value::String(path.display().to_string()));
        }
        "separatrix" => {
            let eq = model.origin_info_closed()?;
            let branch = parse_branch(&bag.str("branch")?)?;
            let traj = separatrix_trajectory(
                &model,
                &eq,
                branch,
                bag.f64("offset")?,
                bag.f64("span")?,
                bag.f64("sample_dt")?,
                &iopts,
            )?;
            let mut csv = Vec::new();
            traj.write_csv(&mut csv)?;
            let path = args.common.out.join("separatrix.csv");
            write_annotated_csv(&path, &digest, &csv)?;
            manifest.record_output(&path);
            result.insert("samples".into(), Value::Number((traj.len() as u64).into()));
            result.insert("csv".into(), Value::String(path.display().to_string()));
        }
        other => {
            return Err(CliError::usage(format!(
                "--mode {other}: expected crossings, trace, containment, boundary, or separatrix"
            )))
        }
    }
    result.insert("config_digest".into(), Value::String(digest.clone()));
    let jpath = args.common.out.join(format!("section_{mode}.json"));
    let value = Value::Object(result);
    write_json_file(&jpath, &value)?;
    manifest.record_output(&jpath);
    manifest.write(&args.common.out)?;
    print_json(&value);
    Ok(())
}
