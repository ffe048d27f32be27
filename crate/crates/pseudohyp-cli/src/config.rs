//! Merged run configuration: defaults < config file < explicit flags.
//!
//! The bag is an ordinary JSON object (keys sorted by the map type), so the
//! merged result can be hashed canonically and echoed into the manifest
//! verbatim.

use std::path::Path;

use serde_json::{Map, Value};

use crate::{CliError, CliResult, CommonArgs};

#[derive(Debug, Clone)]
pub struct ConfigBag {
    map: Map<String, Value>,
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

impl ConfigBag {
    /// Starts from subcommand defaults. `Value::Null` marks a key that is
    /// understood but unset (e.g. an optional override).
    pub fn with_defaults(defaults: &[(&str, Value)]) -> Self {
        let mut map = Map::new();
        for (k, v) in defaults {
            map.insert((*k).to_string(), v.clone());
        }
        ConfigBag { map }
    }

    /// Overlays every entry of a JSON config file (must hold an object).
    pub fn overlay_file(&mut self, path: Option<&Path>) -> CliResult<()> {
        let Some(path) = path else {
            return Ok(());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        let Value::Object(obj) = value else {
            return Err(CliError::usage(format!(
                "config {}: top level must be a JSON object",
                path.display()
            )));
        };
        for (k, v) in obj {
            if k == "params" {
                self.merge_param_object(&v, &path.display().to_string())?;
            } else {
                self.map.insert(k, v);
            }
        }
        Ok(())
    }

    fn merge_param_object(&mut self, v: &Value, origin: &str) -> CliResult<()> {
        let Value::Object(obj) = v else {
            return Err(CliError::usage(format!(
                "{origin}: \"params\" must be an object of name: number"
            )));
        };
        let params = self
            .map
            .entry("params".to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        let Value::Object(target) = params else {
            unreachable!("params entry is always an object");
        };
        for (name, val) in obj {
            let Some(x) = val.as_f64() else {
                return Err(CliError::usage(format!(
                    "{origin}: parameter {name} must be a number"
                )));
            };
            target.insert(name.clone(), num(x));
        }
        Ok(())
    }

    /// Applies the shared flags: system, --param overrides, x0, tolerances.
    pub fn overlay_common(&mut self, common: &CommonArgs) -> CliResult<()> {
        self.overlay_file(common.config.as_deref())?;
        if let Some(system) = &common.system {
            self.set("system", Value::String(system.clone()));
        }
        for spec in &common.param {
            let (name, val) = spec.split_once('=').ok_or_else(|| {
                CliError::usage(format!("--param {spec}: expected NAME=VALUE"))
            })?;
            let x: f64 = val
                .parse()
                .map_err(|_| CliError::usage(format!("--param {spec}: {val} is not a number")))?;
            let obj = serde_json::json!({ name: x });
            self.merge_param_object(&obj, "--param")?;
        }
        if let Some(x0) = &common.x0 {
            self.set(
                "x0",
                Value::Array(x0.iter().map(|&v| num(v)).collect()),
            );
        }
        self.set_f64("rtol", common.rtol);
        self.set_f64("atol", common.atol);
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: Value) {
        self.map.insert(key.to_string(), v);
    }

    /// Overrides `key` when the flag was given.
    pub fn set_f64(&mut self, key: &str, v: Option<f64>) {
        if let Some(x) = v {
            self.set(key, num(x));
        }
    }

    pub fn set_u64(&mut self, key: &str, v: Option<u64>) {
        if let Some(x) = v {
            self.set(key, Value::Number(x.into()));
        }
    }

    pub fn set_str(&mut self, key: &str, v: Option<&str>) {
        if let Some(s) = v {
            self.set(key, Value::String(s.to_string()));
        }
    }

    pub fn set_bool(&mut self, key: &str, v: bool) {
        self.set(key, Value::Bool(v));
    }

    fn get(&self, key: &str) -> CliResult<&Value> {
        self.map
            .get(key)
            .ok_or_else(|| CliError::usage(format!("missing config key {key}")))
    }

    pub fn f64(&self, key: &str) -> CliResult<f64> {
        self.get(key)?
            .as_f64()
            .ok_or_else(|| CliError::usage(format!("config key {key} must be a number")))
    }

    pub fn opt_f64(&self, key: &str) -> CliResult<Option<f64>> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| {
                CliError::usage(format!("config key {key} must be a number"))
            }),
        }
    }

    pub fn u64(&self, key: &str) -> CliResult<u64> {
        self.get(key)?
            .as_u64()
            .ok_or_else(|| CliError::usage(format!("config key {key} must be a nonnegative integer")))
    }

    pub fn usize(&self, key: &str) -> CliResult<usize> {
        Ok(self.u64(key)? as usize)
    }

    pub fn opt_usize(&self, key: &str) -> CliResult<Option<usize>> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|x| Some(x as usize))
                .ok_or_else(|| CliError::usage(format!("config key {key} must be a nonnegative integer"))),
        }
    }

    pub fn bool(&self, key: &str) -> CliResult<bool> {
        match self.get(key)? {
            Value::Bool(b) => Ok(*b),
            _ => Err(CliError::usage(format!("config key {key} must be a boolean"))),
        }
    }

    pub fn str(&self, key: &str) -> CliResult<String> {
        match self.get(key)? {
            Value::String(s) => Ok(s.clone()),
            _ => Err(CliError::usage(format!("config key {key} must be a string"))),
        }
    }

    pub fn opt_str(&self, key: &str) -> CliResult<Option<String>> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(CliError::usage(format!("config key {key} must be a string"))),
        }
    }

    pub fn opt_vec_f64(&self, key: &str) -> CliResult<Option<Vec<f64>>> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    out.push(item.as_f64().ok_or_else(|| {
                        CliError::usage(format!("config key {key} must be an array of numbers"))
                    })?);
                }
                Ok(Some(out))
            }
            Some(_) => Err(CliError::usage(format!(
                "config key {key} must be an array of numbers"
            ))),
        }
    }

    /// The system name; a usage error when neither flag nor file provided it.
    pub fn system(&self) -> CliResult<String> {
        match self.map.get("system") {
            Some(Value::String(s)) => Ok(s.clone()),
            _ => Err(CliError::usage("missing --system (or \"system\" in the config file)")),
        }
    }

    /// Parameter overrides in sorted-name order.
    pub fn params(&self) -> CliResult<Vec<(String, f64)>> {
        match self.map.get("params") {
            None | Some(Value::Null) => Ok(Vec::new()),
            Some(Value::Object(obj)) => {
                let mut out = Vec::with_capacity(obj.len());
                for (name, val) in obj {
                    let x = val.as_f64().ok_or_else(|| {
                        CliError::usage(format!("parameter {name} must be a number"))
                    })?;
                    out.push((name.clone(), x));
                }
                Ok(out)
            }
            Some(_) => Err(CliError::usage("\"params\" must be an object of name: number")),
        }
    }

    /// The merged config as a JSON value (for the manifest and its digest).
    pub fn to_value(&self) -> Value {
        Value::Object(self.map.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_cli_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(
            &cfg,
            r#"{"span": 500.0, "transient": 50.0, "params": {"r": 30.0, "b": 1.0}}"#,
        )
        .unwrap();
        let mut bag = ConfigBag::with_defaults(&[
            ("span", num(1e4)),
            ("transient", num(1e3)),
            ("renorm", num(0.5)),
        ]);
        let common = CommonArgs {
            system: Some("lorenz3d".into()),
            param: vec!["r=28".into()],
            config: Some(cfg),
            ..CommonArgs::default()
        };
        bag.overlay_common(&common).unwrap();
        assert_eq!(bag.f64("span").unwrap(), 500.0); // file beats default
        assert_eq!(bag.f64("renorm").unwrap(), 0.5); // default survives
        let params = bag.params().unwrap();
        assert_eq!(params, vec![("b".into(), 1.0), ("r".into(), 28.0)]); // flag beats file
    }

    #[test]
    fn bad_param_spec_is_usage() {
        let mut bag = ConfigBag::with_defaults(&[]);
        let common = CommonArgs {
            param: vec!["r".into()],
            ..CommonArgs::default()
        };
        let err = bag.overlay_common(&common).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_system_is_usage() {
        let bag = ConfigBag::with_defaults(&[]);
        let err = bag.system().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
