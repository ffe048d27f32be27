use serde_json::Value;

use pseudohyp::lyapunov::{
    check_necessary_conditions, lyapunov_spectrum, DEFAULT_RENORM_INTERVAL, DEFAULT_SPAN,
    DEFAULT_TRANSIENT,
};
use pseudohyp::systems::SystemKind;

use super::{
    build_model, conditions_value, integrator_from, num, params_value, print_json, resolve_x0,
    vec_value,
};
use crate::manifest::{ensure_out_dir, write_json_file};
use crate::{CliError, CliResult, ConfigBag, LyapunovArgs, RunManifest};

pub fn run(args: &LyapunovArgs) -> CliResult<()> {
    crate::init_threads(args.common.threads)?;
    let mut bag = ConfigBag::with_defaults(&[
        ("transient", num(DEFAULT_TRANSIENT)),
        ("span", num(DEFAULT_SPAN)),
        ("renorm", num(DEFAULT_RENORM_INTERVAL)),
        ("rtol", num(1e-10)),
        ("atol", num(1e-12)),
        ("k", Value::Null),
        ("x0", Value::Null),
    ]);
    bag.overlay_common(&args.common)?;
    bag.set_f64("transient", args.transient);
    bag.set_f64("span", args.span);
    bag.set_f64("renorm", args.renorm);
    bag.set_u64("k", args.k);

    let model = build_model(&bag)?;
    let x0 = resolve_x0(&bag, &model)?;
    let iopts = integrator_from(&bag)?;
    let (transient, span, renorm) = (bag.f64("transient")?, bag.f64("span")?, bag.f64("renorm")?);
    let k = match bag.opt_usize("k")? {
        Some(k) if k >= 1 && k < model.dim() => k,
        Some(k) => {
            return Err(CliError::usage(format!(
                "--k {k} out of range: need 1 <= k <= {}",
                model.dim() - 1
            )))
        }
        None => model.dim() - 1,
    };

    let mut manifest = RunManifest::new("lyapunov", bag.to_value());
    manifest.tolerance("rtol", iopts.rtol);
    manifest.tolerance("atol", iopts.atol);
    manifest.budget("transient", transient);
    manifest.budget("span", span);

    let spectrum = lyapunov_spectrum(&model, &x0, transient, span, renorm, &iopts)?;
    let conditions =
        check_necessary_conditions(&spectrum, k, model.kind() == SystemKind::Flow);

    let result = {
        let mut obj = serde_json::Map::new();
        obj.insert("system".into(), Value::String(model.name().to_string()));
        obj.insert("params".into(), params_value(&model));
        obj.insert("x0".into(), vec_value(&x0));
        obj.insert("exponents".into(), vec_value(&spectrum.exponents));
        obj.insert("sum".into(), num(spectrum.sum()));
        obj.insert("total_time".into(), num(spectrum.total_time));
        obj.insert("necessary_conditions".into(), conditions_value(&conditions));
        obj.insert(
            "config_digest".into(),
            Value::String(manifest.config_digest.clone()),
        );
        Value::Object(obj)
    };

    ensure_out_dir(&args.common.out)?;
    let spath = args.common.out.join("spectrum.json");
    write_json_file(&spath, &result)?;
    manifest.record_output(&spath);
    manifest.write(&args.common.out)?;
    print_json(&result);
    Ok(())
}
