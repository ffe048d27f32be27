use serde_json::Value;

use pseudohyp::sweep::{run_sweep, RegimeClass, SweepJob, TaskKind};

use super::print_json;
use crate::manifest::{ensure_out_dir, write_annotated_csv};
use crate::{CliError, CliResult, RunManifest, SweepArgs};

pub fn run(args: &SweepArgs) -> CliResult<()> {
    crate::init_threads(args.threads)?;
    let job = SweepJob::from_json_file(&args.job)
        .map_err(|e| CliError::usage(format!("job {}: {e}", args.job.display())))?;
    job.validate()?;

    // The journal fences on the job digest, so the manifest carries the same
    // one and every sweep artifact references a single digest.
    let digest = job.config_digest();
    let mut manifest =
        RunManifest::with_digest("sweep", serde_json::to_value(&job)?, digest.clone());
    manifest.tolerance("rtol", job.rtol);
    manifest.tolerance("atol", job.atol);
    manifest.seed("cell_seed", job.seed);
    manifest.budget("span", job.span);
    manifest.budget("transient", job.transient);
    manifest.budget("pair_budget", job.pair_budget as f64);

    // Detach the csv/image outputs: the library writes them raw, the CLI
    // re-writes them below with the digest annotation.
    let mut run_job = job.clone();
    run_job.outputs.csv = None;
    run_job.outputs.image = None;
    let result = run_sweep(&run_job)?;

    ensure_out_dir(&args.out)?;
    if let Some(cpath) = &job.outputs.csv {
        let mut csv = Vec::new();
        result.write_csv(&mut csv)?;
        write_annotated_csv(cpath, &digest, &csv)?;
        manifest.record_output(cpath);
    }
    if let Some(ipath) = &job.outputs.image {
        result.raster.save_annotated(ipath, &digest)?;
        manifest.record_output(ipath);
    }
    if let Some(jpath) = &job.outputs.journal {
        manifest.record_output(jpath);
    }
    manifest.write(&args.out)?;

    let mut obj = serde_json::Map::new();
    obj.insert("system".into(), Value::String(job.system.clone()));
    obj.insert(
        "grid".into(),
        serde_json::json!([job.param1.n, job.param2.n]),
    );
    obj.insert(
        "computed".into(),
        Value::Number((result.computed as u64).into()),
    );
    obj.insert(
        "resumed".into(),
        Value::Number((result.resumed as u64).into()),
    );
    if job.task == TaskKind::Spectrum {
        let mut classes = serde_json::Map::new();
        for class in [
            RegimeClass::StableEquilibrium,
            RegimeClass::LimitCycle,
            RegimeClass::StrangeSumNeg,
            RegimeClass::StrangeSumPos,
            RegimeClass::Escaped,
            RegimeClass::Unresolved,
        ] {
            classes.insert(
                class.as_str().to_string(),
                Value::Number((result.count_class(class) as u64).into()),
            );
        }
        obj.insert("classes".into(), Value::Object(classes));
    }
    obj.insert("config_digest".into(), Value::String(digest));
    print_json(&Value::Object(obj));
    Ok(())
}
