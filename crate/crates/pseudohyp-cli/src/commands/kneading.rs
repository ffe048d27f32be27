use serde_json::Value;

use pseudohyp::kneading::{
    adjacent_change_density_axis1, kneading_bits, kneading_diagram, kneading_value,
    median_run_length_axis1, separatrix_start, KneadingAxes, KneadingDiagramOptions,
    DEFAULT_GREEN_SEED, DEFAULT_Q_PANORAMA, DEFAULT_SEPARATRIX_OFFSET, DEFAULT_TIME_BUDGET,
};
use pseudohyp::systems::SystemKind;

use super::{build_model, integrator_from, num, params_value, print_json, vec_value};
use crate::manifest::{ensure_out_dir, write_annotated_csv, write_json_file};
use crate::{CliError, CliResult, ConfigBag, KneadingArgs, RunManifest};

fn parse_axis(spec: &str, which: &str) -> CliResult<(String, f64, f64, usize)> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 4 {
        return Err(CliError::usage(format!(
            "--{which} {spec}: expected NAME:LO:HI:N"
        )));
    }
    let lo: f64 = parts[1]
        .parse()
        .map_err(|_| CliError::usage(format!("--{which}: {} is not a number", parts[1])))?;
    let hi: f64 = parts[2]
        .parse()
        .map_err(|_| CliError::usage(format!("--{which}: {} is not a number", parts[2])))?;
    let n: usize = parts[3]
        .parse()
        .map_err(|_| CliError::usage(format!("--{which}: {} is not a resolution", parts[3])))?;
    Ok((parts[0].to_string(), lo, hi, n))
}

pub fn run(args: &KneadingArgs) -> CliResult<()> {
    crate::init_threads(args.common.threads)?;
    let mut bag = ConfigBag::with_defaults(&[
        ("q", Value::Number(u64::from(DEFAULT_Q_PANORAMA).into())),
        ("offset", num(DEFAULT_SEPARATRIX_OFFSET)),
        ("budget", num(DEFAULT_TIME_BUDGET)),
        ("green_seed", Value::Number(DEFAULT_GREEN_SEED.into())),
        ("axis1", Value::Null),
        ("axis2", Value::Null),
        ("image", Value::String("kneading.png".into())),
        // Diagram-grade tolerances; override for high-precision single orbits.
        ("rtol", num(1e-7)),
        ("atol", num(1e-9)),
        ("x0", Value::Null),
    ]);
    bag.overlay_common(&args.common)?;
    bag.set_u64("q", args.q);
    bag.set_f64("offset", args.offset);
    bag.set_f64("budget", args.budget);
    bag.set_u64("green_seed", args.green_seed);
    bag.set_str("axis1", args.axis1.as_deref());
    bag.set_str("axis2", args.axis2.as_deref());
    bag.set_str("image", args.image.as_deref());

    let model = build_model(&bag)?;
    if model.kind() != SystemKind::Flow {
        return Err(CliError::usage("kneading needs a flow system"));
    }
    let iopts = integrator_from(&bag)?;
    let q = bag.u64("q")? as u32;
    if q == 0 || q > 63 {
        return Err(CliError::usage("--q must be between 1 and 63"));
    }
    let offset = bag.f64("offset")?;
    let budget = bag.f64("budget")?;
    let green_seed = bag.u64("green_seed")?;

    let axis1 = bag.opt_str("axis1")?;
    let axis2 = bag.opt_str("axis2")?;
    if axis1.is_some() != axis2.is_some() {
        return Err(CliError::usage("diagram mode needs both --axis1 and --axis2"));
    }

    let mut manifest = RunManifest::new("kneading", bag.to_value());
    manifest.tolerance("rtol", iopts.rtol);
    manifest.tolerance("atol", iopts.atol);
    manifest.seed("green_seed", green_seed);
    manifest.budget("time_budget", budget);
    ensure_out_dir(&args.common.out)?;
    let digest = manifest.config_digest.clone();

    let result = if let (Some(a1), Some(a2)) = (axis1, axis2) {
        let (name1, lo1, hi1, n1) = parse_axis(&a1, "axis1")?;
        let (name2, lo2, hi2, n2) = parse_axis(&a2, "axis2")?;
        let axes = KneadingAxes {
            name1,
            lo1,
            hi1,
            n1,
            name2,
            lo2,
            hi2,
            n2,
        };
        let opts = KneadingDiagramOptions {
            q,
            separatrix_offset: offset,
            time_budget: budget,
            green_seed,
            integrator: iopts.clone(),
        };
        let fixed = bag.params()?;
        let diag = kneading_diagram(model.name(), &fixed, &axes, &opts)?;

        let mut csv = Vec::new();
        diag.write_csv(&mut csv)?;
        let cpath = args.common.out.join("kneading.csv");
        write_annotated_csv(&cpath, &digest, &csv)?;
        manifest.record_output(&cpath);
        let ipath = args.common.out.join(bag.str("image")?);
        diag.raster.save_annotated(&ipath, &digest)?;
        manifest.record_output(&ipath);

        let mut obj = serde_json::Map::new();
        obj.insert("system".into(), Value::String(model.name().to_string()));
        obj.insert("params".into(), params_value(&model));
        obj.insert("q".into(), Value::Number(u64::from(q).into()));
        obj.insert(
            "axes".into(),
            serde_json::json!({
                "axis1": {"name": diag.axes.name1, "lo": diag.axes.lo1, "hi": diag.axes.hi1, "n": diag.axes.n1},
                "axis2": {"name": diag.axes.name2, "lo": diag.axes.lo2, "hi": diag.axes.hi2, "n": diag.axes.n2},
            }),
        );
        obj.insert(
            "failures".into(),
            Value::Number((diag.failures.len() as u64).into()),
        );
        obj.insert(
            "median_run_length_axis1".into(),
            num(median_run_length_axis1(&diag)),
        );
        obj.insert(
            "adjacent_change_density_axis1".into(),
            num(adjacent_change_density_axis1(&diag)),
        );
        obj.insert("csv".into(), Value::String(cpath.display().to_string()));
        obj.insert("image".into(), Value::String(ipath.display().to_string()));
        obj.insert("config_digest".into(), Value::String(digest.clone()));
        Value::Object(obj)
    } else {
        let x0 = match bag.opt_vec_f64("x0")? {
            Some(x0) => {
                if x0.len() != model.dim() {
                    return Err(CliError::usage(format!(
                        "--x0 needs {} components for {}",
                        model.dim(),
                        model.name()
                    )));
                }
                x0
            }
            None => separatrix_start(&model, offset)?,
        };
        let bits = kneading_bits(&model, &x0, q, budget, &iopts)?;
        let d = kneading_value(&bits);
        let bit_string: String = bits.iter().map(|b| char::from(b'0' + b)).collect();
        let mut obj = serde_json::Map::new();
        obj.insert("system".into(), Value::String(model.name().to_string()));
        obj.insert("params".into(), params_value(&model));
        obj.insert("x0".into(), vec_value(&x0));
        obj.insert("q".into(), Value::Number(u64::from(q).into()));
        obj.insert("bits".into(), Value::String(bit_string));
        obj.insert("D".into(), Value::Number(d.into()));
        obj.insert("config_digest".into(), Value::String(digest.clone()));
        Value::Object(obj)
    };

    let jpath = args.common.out.join("kneading.json");
    write_json_file(&jpath, &result)?;
    manifest.record_output(&jpath);
    manifest.write(&args.common.out)?;
    print_json(&result);
    Ok(())
}
