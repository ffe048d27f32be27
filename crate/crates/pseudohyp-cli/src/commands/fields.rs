use serde_json::Value;

use pseudohyp::lyapunov::DEFAULT_TRANSIENT;
use pseudohyp::tangent_fields::{build_eu_field, build_fields, default_trim, write_fields_csv};

use super::{
    build_model, integrator_from, num, params_value, print_json, resolve_x0, sampled_trajectory,
};
use crate::manifest::{ensure_out_dir, write_annotated_csv};
use crate::verify::{DEFAULT_FIELD_SEED, DEFAULT_SAMPLE_DT};
use crate::{CliResult, ConfigBag, FieldsArgs, RunManifest};

/// Default sample count for a field dump (the continuity and verify commands
/// use ten times more; a dump this size stays a few megabytes of CSV).
const DEFAULT_DUMP_SAMPLES: u64 = 20_000;

pub fn run(args: &FieldsArgs) -> CliResult<()> {
    crate::init_threads(args.common.threads)?;
    let mut bag = ConfigBag::with_defaults(&[
        ("transient", num(DEFAULT_TRANSIENT)),
        ("samples", Value::Number(DEFAULT_DUMP_SAMPLES.into())),
        ("sample_dt", num(DEFAULT_SAMPLE_DT)),
        ("m1", Value::Null),
        ("m2", Value::Null),
        ("seed", Value::Number(DEFAULT_FIELD_SEED.into())),
        ("eu", Value::Bool(false)),
        ("rtol", num(1e-10)),
        ("atol", num(1e-12)),
        ("x0", Value::Null),
    ]);
    bag.overlay_common(&args.common)?;
    bag.set_f64("transient", args.transient);
    bag.set_u64("samples", args.samples);
    bag.set_f64("sample_dt", args.sample_dt);
    bag.set_u64("m1", args.m1);
    bag.set_u64("m2", args.m2);
    bag.set_u64("seed", args.seed);
    if args.eu {
        bag.set_bool("eu", true);
    }

    let model = build_model(&bag)?;
    let x0 = resolve_x0(&bag, &model)?;
    let iopts = integrator_from(&bag)?;
    let seed = bag.u64("seed")?;
    let eu = bag.bool("eu")?;

    let mut manifest = RunManifest::new("fields", bag.to_value());
    manifest.tolerance("rtol", iopts.rtol);
    manifest.tolerance("atol", iopts.atol);
    manifest.seed("field_seed", seed);

    let traj = sampled_trajectory(&model, &x0, &bag, args.from_cache.as_deref(), &iopts)?;
    ensure_out_dir(&args.common.out)?;
    if let Some(cache) = &args.cache {
        pseudohyp::cache::write_trajectory(&traj, cache)?;
        manifest.record_output(cache);
    }

    // The stock trim assumes verify-sized trajectories; a short dump keeps at
    // least half its samples.
    let auto_trim = default_trim(traj.len()).min(traj.len() / 4);
    let m1 = bag.opt_usize("m1")?.unwrap_or(auto_trim);
    let m2 = bag.opt_usize("m2")?.unwrap_or(auto_trim);
    let samples = if eu {
        build_eu_field(&model, &traj, m1, m2, seed, &iopts)?
    } else {
        build_fields(&model, &traj, m1, m2, seed, &iopts)?
    };

    let mut csv = Vec::new();
    write_fields_csv(&samples, model.dim(), &mut csv)?;
    let cpath = args.common.out.join("fields.csv");
    write_annotated_csv(&cpath, &manifest.config_digest, &csv)?;
    manifest.record_output(&cpath);
    manifest.write(&args.common.out)?;

    let summary = {
        let mut obj = serde_json::Map::new();
        obj.insert("system".into(), Value::String(model.name().to_string()));
        obj.insert("params".into(), params_value(&model));
        obj.insert("trajectory_samples".into(), Value::Number((traj.len() as u64).into()));
        obj.insert("field_samples".into(), Value::Number((samples.len() as u64).into()));
        obj.insert("m1".into(), Value::Number((m1 as u64).into()));
        obj.insert("m2".into(), Value::Number((m2 as u64).into()));
        obj.insert("eu".into(), Value::Bool(eu));
        obj.insert("csv".into(), Value::String(cpath.display().to_string()));
        obj.insert(
            "config_digest".into(),
            Value::String(manifest.config_digest.clone()),
        );
        Value::Object(obj)
    };
    print_json(&summary);
    Ok(())
}
