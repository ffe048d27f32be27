use serde_json::Value;

use pseudohyp::continuity::{
    build_cloud, classify_cloud_with, default_rho_limit, ContinuityVerdict, FieldTag, Thresholds,
    DEFAULT_PAIR_BUDGET, DEFAULT_PHI_GAP, DEFAULT_RHO_BINS,
};
use pseudohyp::lyapunov::DEFAULT_TRANSIENT;
use pseudohyp::tangent_fields::{build_eu_field, build_fields, default_trim};
use pseudohyp::{ContinuityCloud, SystemModel, TangentFieldSample};

use super::{
    build_model, integrator_from, num, params_value, print_json, resolve_x0, sampled_trajectory,
};
use crate::manifest::{ensure_out_dir, write_annotated_csv, write_json_file};
use crate::verify::{DEFAULT_FIELD_SEED, DEFAULT_SAMPLES, DEFAULT_SAMPLE_DT};
use crate::{CliError, CliResult, ConfigBag, ContinuityArgs, RunManifest};

/// Cap on cloud CSV rows; classification always uses the full cloud, the dump
/// is strided down so a 10^7-pair run does not write a half-gigabyte file.
const CLOUD_CSV_CAP: usize = 500_000;

fn write_cloud_csv(
    cloud: &ContinuityCloud,
    path: &std::path::Path,
    digest: &str,
) -> CliResult<usize> {
    let stride = cloud.pairs.len().div_ceil(CLOUD_CSV_CAP).max(1);
    let mut body = Vec::new();
    {
        use std::io::Write;
        writeln!(body, "rho,phi")?;
        for (rho, phi) in cloud.pairs.iter().step_by(stride) {
            writeln!(body, "{rho:.16e},{phi:.16e}")?;
        }
    }
    write_annotated_csv(path, digest, &body)?;
    Ok(stride)
}

fn verdict_value(v: &ContinuityVerdict<f64>, cloud: &ContinuityCloud, stride: usize) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("class".into(), Value::String(v.class.as_str().to_string()));
    obj.insert("pairs".into(), Value::Number((cloud.pairs.len() as u64).into()));
    obj.insert("max_rho".into(), num(cloud.max_rho()));
    obj.insert("max_phi".into(), num(cloud.max_phi()));
    obj.insert("rho_limit".into(), num(v.thresholds.rho_limit));
    obj.insert("phi_gap".into(), num(v.thresholds.phi_gap));
    obj.insert("csv_stride".into(), Value::Number((stride as u64).into()));
    let bins: Vec<Value> = v
        .evidence
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| {
            let mut bin = serde_json::Map::new();
            bin.insert("rho_lo".into(), num(b.rho_lo));
            bin.insert("rho_hi".into(), num(b.rho_hi));
            bin.insert("count".into(), Value::Number((b.count as u64).into()));
            bin.insert("phi_max".into(), num(b.phi_max));
            bin.insert("mid_count".into(), Value::Number((b.mid_count as u64).into()));
            bin.insert("high_count".into(), Value::Number((b.high_count as u64).into()));
            Value::Object(bin)
        })
        .collect();
    obj.insert("bins".into(), Value::Array(bins));
    Value::Object(obj)
}

fn run_tag(
    model: &SystemModel,
    samples: &[TangentFieldSample],
    tag: FieldTag,
    bag: &ConfigBag,
    out_dir: &std::path::Path,
    manifest: &mut RunManifest,
) -> CliResult<Value> {
    let pair_budget = bag.usize("pair_budget")?;
    let seed = bag.u64("seed")?;
    let cloud = build_cloud(model, samples, tag, pair_budget, seed)?;
    let mut th = Thresholds::with_rho_limit(match bag.opt_f64("rho_limit")? {
        Some(limit) => limit,
        None => default_rho_limit(&cloud),
    });
    th.rho_bins = bag.usize("rho_bins")?;
    th.phi_gap = bag.f64("phi_gap")?;
    let verdict = classify_cloud_with(&cloud, th);
    let path = out_dir.join(format!("cloud_{}.csv", tag.as_str()));
    let stride = write_cloud_csv(&cloud, &path, &manifest.config_digest)?;
    manifest.record_output(&path);
    Ok(verdict_value(&verdict, &cloud, stride))
}

pub fn run(args: &ContinuityArgs) -> CliResult<()> {
    crate::init_threads(args.common.threads)?;
    let mut bag = ConfigBag::with_defaults(&[
        ("transient", num(DEFAULT_TRANSIENT)),
        ("samples", Value::Number((DEFAULT_SAMPLES as u64).into())),
        ("sample_dt", num(DEFAULT_SAMPLE_DT)),
        ("m1", Value::Null),
        ("m2", Value::Null),
        ("seed", Value::Number(DEFAULT_FIELD_SEED.into())),
        ("field", Value::String("both".into())),
        ("pair_budget", Value::Number((DEFAULT_PAIR_BUDGET as u64).into())),
        ("rho_bins", Value::Number((DEFAULT_RHO_BINS as u64).into())),
        ("phi_gap", num(DEFAULT_PHI_GAP)),
        ("rho_limit", Value::Null),
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
    bag.set_str("field", args.field.as_deref());
    bag.set_u64("pair_budget", args.pair_budget);
    bag.set_u64("rho_bins", args.rho_bins);
    bag.set_f64("phi_gap", args.phi_gap);
    bag.set_f64("rho_limit", args.rho_limit);

    let model = build_model(&bag)?;
    let x0 = resolve_x0(&bag, &model)?;
    let iopts = integrator_from(&bag)?;
    let field = bag.str("field")?;
    let tags: Vec<FieldTag> = match field.as_str() {
        "both" => vec![FieldTag::Ess, FieldTag::Ncu],
        other => vec![other
            .parse()
            .map_err(|_| CliError::usage(format!("--field {other}: expected ess, ncu, eu, or both")))?],
    };
    let seed = bag.u64("seed")?;

    let mut manifest = RunManifest::new("continuity", bag.to_value());
    manifest.tolerance("rtol", iopts.rtol);
    manifest.tolerance("atol", iopts.atol);
    manifest.seed("field_seed", seed);
    manifest.seed("pair_seed", seed);
    manifest.budget("pair_budget", bag.u64("pair_budget")? as f64);

    let traj = sampled_trajectory(&model, &x0, &bag, args.from_cache.as_deref(), &iopts)?;
    let auto_trim = default_trim(traj.len()).min(traj.len() / 4);
    let m1 = bag.opt_usize("m1")?.unwrap_or(auto_trim);
    let m2 = bag.opt_usize("m2")?.unwrap_or(auto_trim);

    let needs_pair = tags.iter().any(|t| *t != FieldTag::Eu);
    let pair_samples = if needs_pair {
        Some(build_fields(&model, &traj, m1, m2, seed, &iopts)?)
    } else {
        None
    };
    let eu_samples = if tags.contains(&FieldTag::Eu) {
        Some(build_eu_field(&model, &traj, m1, m2, seed, &iopts)?)
    } else {
        None
    };
    drop(traj);

    ensure_out_dir(&args.common.out)?;
    let mut verdicts = serde_json::Map::new();
    for tag in tags {
        let samples = match tag {
            FieldTag::Eu => eu_samples.as_ref().expect("eu samples built"),
            _ => pair_samples.as_ref().expect("pair samples built"),
        };
        let verdict = run_tag(&model, samples, tag, &bag, &args.common.out, &mut manifest)?;
        verdicts.insert(tag.as_str().to_string(), verdict);
    }

    let result = {
        let mut obj = serde_json::Map::new();
        obj.insert("system".into(), Value::String(model.name().to_string()));
        obj.insert("params".into(), params_value(&model));
        obj.insert("verdicts".into(), Value::Object(verdicts));
        obj.insert(
            "config_digest".into(),
            Value::String(manifest.config_digest.clone()),
        );
        Value::Object(obj)
    };
    let jpath = args.common.out.join("continuity.json");
    write_json_file(&jpath, &result)?;
    manifest.record_output(&jpath);
    manifest.write(&args.common.out)?;
    print_json(&result);
    Ok(())
}
