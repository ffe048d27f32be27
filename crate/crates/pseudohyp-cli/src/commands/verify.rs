use serde_json::Value;

use pseudohyp::continuity::{DEFAULT_PAIR_BUDGET, DEFAULT_PHI_GAP, DEFAULT_RHO_BINS};
use pseudohyp::lyapunov::{DEFAULT_RENORM_INTERVAL, DEFAULT_SPAN, DEFAULT_TRANSIENT};

use super::{
    build_model, conditions_value, integrator_from, num, params_value, print_json, vec_value,
};
use crate::manifest::{ensure_out_dir, write_json_file};
use crate::verify::{
    verify_pseudohyperbolicity, CloudSummary, VerifySettings, DEFAULT_FIELD_SEED, DEFAULT_SAMPLES,
    DEFAULT_SAMPLE_DT,
};
use crate::{CliError, CliResult, ConfigBag, RunManifest, VerifyArgs};

fn cloud_value(c: &CloudSummary) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert(
        "class".into(),
        Value::String(c.verdict.class.as_str().to_string()),
    );
    obj.insert("pairs".into(), Value::Number((c.pairs as u64).into()));
    obj.insert("max_rho".into(), num(c.max_rho));
    obj.insert("max_phi".into(), num(c.max_phi));
    obj.insert("rho_limit".into(), num(c.verdict.thresholds.rho_limit));
    Value::Object(obj)
}

pub fn run(args: &VerifyArgs) -> CliResult<()> {
    crate::init_threads(args.common.threads)?;
    let mut bag = ConfigBag::with_defaults(&[
        ("transient", num(DEFAULT_TRANSIENT)),
        ("samples", Value::Number((DEFAULT_SAMPLES as u64).into())),
        ("sample_dt", num(DEFAULT_SAMPLE_DT)),
        ("spectrum_transient", num(DEFAULT_TRANSIENT)),
        ("spectrum_span", num(DEFAULT_SPAN)),
        ("renorm", num(DEFAULT_RENORM_INTERVAL)),
        ("k", Value::Null),
        ("m1", Value::Null),
        ("m2", Value::Null),
        ("seed", Value::Number(DEFAULT_FIELD_SEED.into())),
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
    bag.set_f64("spectrum_transient", args.spectrum_transient);
    bag.set_f64("spectrum_span", args.spectrum_span);
    bag.set_f64("renorm", args.renorm);
    bag.set_u64("k", args.k);
    bag.set_u64("m1", args.m1);
    bag.set_u64("m2", args.m2);
    bag.set_u64("seed", args.seed);
    bag.set_u64("pair_budget", args.pair_budget);
    bag.set_u64("rho_bins", args.rho_bins);
    bag.set_f64("phi_gap", args.phi_gap);
    bag.set_f64("rho_limit", args.rho_limit);

    let model = build_model(&bag)?;
    if let Some(k) = bag.opt_usize("k")? {
        if k < 1 || k >= model.dim() {
            return Err(CliError::usage(format!(
                "--k {k} out of range: need 1 <= k <= {}",
                model.dim() - 1
            )));
        }
    }
    let settings = VerifySettings {
        x0: bag.opt_vec_f64("x0")?,
        spectrum_transient: bag.f64("spectrum_transient")?,
        spectrum_span: bag.f64("spectrum_span")?,
        renorm_interval: bag.f64("renorm")?,
        k: bag.opt_usize("k")?,
        transient: bag.f64("transient")?,
        samples: bag.usize("samples")?,
        sample_dt: bag.f64("sample_dt")?,
        m1: bag.opt_usize("m1")?,
        m2: bag.opt_usize("m2")?,
        seed: bag.u64("seed")?,
        pair_budget: bag.usize("pair_budget")?,
        rho_bins: bag.usize("rho_bins")?,
        phi_gap: bag.f64("phi_gap")?,
        rho_limit: bag.opt_f64("rho_limit")?,
        integrator: integrator_from(&bag)?,
    };
    if let Some(x0) = &settings.x0 {
        if x0.len() != model.dim() {
            return Err(CliError::usage(format!(
                "--x0 needs {} components for {}, got {}",
                model.dim(),
                model.name(),
                x0.len()
            )));
        }
    }

    let mut manifest = RunManifest::new("verify", bag.to_value());
    manifest.tolerance("rtol", settings.integrator.rtol);
    manifest.tolerance("atol", settings.integrator.atol);
    manifest.seed("field_seed", settings.seed);
    manifest.seed("pair_seed", settings.seed);
    manifest.budget("pair_budget", settings.pair_budget as f64);
    manifest.budget("samples", settings.samples as f64);
    manifest.budget("spectrum_span", settings.spectrum_span);

    let outcome = verify_pseudohyperbolicity(&model, &settings)?;

    let result = {
        let mut obj = serde_json::Map::new();
        obj.insert("system".into(), Value::String(model.name().to_string()));
        obj.insert("params".into(), params_value(&model));
        obj.insert("exponents".into(), vec_value(&outcome.spectrum.exponents));
        obj.insert(
            "necessary_conditions".into(),
            conditions_value(&outcome.conditions),
        );
        obj.insert(
            "continuity".into(),
            match (&outcome.ess, &outcome.ncu) {
                (Some(ess), Some(ncu)) => {
                    let mut cont = serde_json::Map::new();
                    cont.insert("ess".into(), cloud_value(ess));
                    cont.insert("ncu".into(), cloud_value(ncu));
                    Value::Object(cont)
                }
                _ => Value::Null,
            },
        );
        obj.insert(
            "verdict".into(),
            Value::String(
                if outcome.pseudohyperbolic {
                    "Pseudohyperbolic"
                } else {
                    "NotPseudohyperbolic"
                }
                .to_string(),
            ),
        );
        obj.insert(
            "failing_stage".into(),
            outcome
                .failing_stage
                .map(|s| Value::String(s.to_string()))
                .unwrap_or(Value::Null),
        );
        obj.insert(
            "config_digest".into(),
            Value::String(manifest.config_digest.clone()),
        );
        Value::Object(obj)
    };

    ensure_out_dir(&args.common.out)?;
    let vpath = args.common.out.join("verify.json");
    write_json_file(&vpath, &result)?;
    manifest.record_output(&vpath);
    manifest.write(&args.common.out)?;
    print_json(&result);
    Ok(())
}
