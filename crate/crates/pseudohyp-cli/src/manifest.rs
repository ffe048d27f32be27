//! Run metadata: the manifest, its config digest, and the output writers
//! that stamp the digest into every file a run produces.
//!
//! Floating-point values in JSON files are printed with 17 significant
//! digits (`{:.16e}`), like the CSV writers, so outputs round-trip doubles
//! exactly and reruns are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliResult;

/// sha256 over the compact canonical rendering (the map type keeps keys
/// sorted, so equal configs hash equally regardless of flag order).
pub fn digest_value(v: &Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(v.to_string().as_bytes());
    pseudohyp::sweep::hex_string(&hasher.finalize())
}

fn push_number(out: &mut String, n: &serde_json::Number) {
    if n.is_i64() || n.is_u64() {
        let _ = write!(out, "{n}");
    } else {
        // 17 significant digits: exact double round-trip.
        let _ = write!(out, "{:.16e}", n.as_f64().expect("finite JSON number"));
    }
}

fn push_value(out: &mut String, v: &Value, indent: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => {
            let _ = write!(out, "{b}");
        }
        Value::Number(n) => push_number(out, n),
        Value::String(s) => {
            let _ = write!(out, "{}", Value::String(s.clone()));
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                out.push_str(&"  ".repeat(indent + 1));
                push_value(out, item, indent + 1);
            }
            out.push('\n');
            out.push_str(&"  ".repeat(indent));
            out.push(']');
        }
        Value::Object(obj) => {
            if obj.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (i, (k, item)) in obj.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                out.push_str(&"  ".repeat(indent + 1));
                let _ = write!(out, "{}: ", Value::String(k.clone()));
                push_value(out, item, indent + 1);
            }
            out.push('\n');
            out.push_str(&"  ".repeat(indent));
            out.push('}');
        }
    }
}

/// Pretty JSON with 17-significant-digit floats, trailing newline.
pub fn render_json(v: &Value) -> String {
    let mut out = String::new();
    push_value(&mut out, v, 0);
    out.push('\n');
    out
}

pub fn write_json_file(path: &Path, v: &Value) -> CliResult<()> {
    std::fs::write(path, render_json(v))?;
    Ok(())
}

/// Writes a CSV body behind a `# manifest=<digest>` comment line.
pub fn write_annotated_csv(path: &Path, digest: &str, body: &[u8]) -> CliResult<()> {
    let mut buf = Vec::with_capacity(body.len() + 80);
    writeln!(buf, "# manifest={digest}")?;
    buf.extend_from_slice(body);
    std::fs::write(path, buf)?;
    Ok(())
}

#[derive(Debug)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub subcommand: String,
    pub config: Value,
    pub config_digest: String,
    pub rng_seeds: BTreeMap<String, u64>,
    pub integrator_tolerances: BTreeMap<String, f64>,
    pub budgets: BTreeMap<String, f64>,
    pub module_versions: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    started: Instant,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: Value) -> Self {
        let digest = digest_value(&config);
        RunManifest::with_digest(subcommand, config, digest)
    }

    /// For runs whose digest convention is owned elsewhere (the sweep journal
    /// fences on the job digest, so the manifest must carry the same one).
    pub fn with_digest(subcommand: &str, config: Value, config_digest: String) -> Self {
        let mut module_versions = BTreeMap::new();
        module_versions.insert("pseudohyp".to_string(), pseudohyp::VERSION.to_string());
        module_versions.insert(
            "pseudohyp-cli".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        );
        RunManifest {
            command_line: std::env::args().collect(),
            subcommand: subcommand.to_string(),
            config,
            config_digest,
            rng_seeds: BTreeMap::new(),
            integrator_tolerances: BTreeMap::new(),
            budgets: BTreeMap::new(),
            module_versions,
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, name: &str, v: u64) {
        self.rng_seeds.insert(name.to_string(), v);
    }

    pub fn tolerance(&mut self, name: &str, v: f64) {
        self.integrator_tolerances.insert(name.to_string(), v);
    }

    pub fn budget(&mut self, name: &str, v: f64) {
        self.budgets.insert(name.to_string(), v);
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes `manifest.json` into `out_dir` and returns its path.
    pub fn write(&self, out_dir: &Path) -> CliResult<PathBuf> {
        let mut obj = serde_json::Map::new();
        obj.insert(
            "command_line".into(),
            Value::Array(self.command_line.iter().cloned().map(Value::String).collect()),
        );
        obj.insert("subcommand".into(), Value::String(self.subcommand.clone()));
        obj.insert("config".into(), self.config.clone());
        obj.insert("config_digest".into(), Value::String(self.config_digest.clone()));
        obj.insert(
            "rng_seeds".into(),
            Value::Object(
                self.rng_seeds
                    .iter()
                    .map(|(k, &v)| (k.clone(), Value::Number(v.into())))
                    .collect(),
            ),
        );
        let f64_map = |m: &BTreeMap<String, f64>| {
            Value::Object(
                m.iter()
                    .map(|(k, &v)| {
                        (
                            k.clone(),
                            serde_json::Number::from_f64(v)
                                .map(Value::Number)
                                .unwrap_or(Value::Null),
                        )
                    })
                    .collect(),
            )
        };
        obj.insert("integrator_tolerances".into(), f64_map(&self.integrator_tolerances));
        obj.insert("budgets".into(), f64_map(&self.budgets));
        obj.insert(
            "module_versions".into(),
            Value::Object(
                self.module_versions
                    .iter()
                    .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                    .collect(),
            ),
        );
        obj.insert(
            "outputs".into(),
            Value::Array(self.outputs.iter().cloned().map(Value::String).collect()),
        );
        obj.insert(
            "wall_clock_seconds".into(),
            serde_json::Number::from_f64(self.started.elapsed().as_secs_f64())
                .map(Value::Number)
                .unwrap_or(Value::Null),
        );
        let path = out_dir.join("manifest.json");
        write_json_file(&path, &Value::Object(obj))?;
        Ok(path)
    }
}

/// Creates the output directory (and parents) if needed.
pub fn ensure_out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_json_uses_17_digit_floats() {
        let v = serde_json::json!({"a": 0.1, "n": 3, "s": "x", "arr": [1.5]});
        let text = render_json(&v);
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        assert!(text.contains("\"n\": 3"), "{text}");
        assert!(text.contains("1.5000000000000000e0"), "{text}");
        // keys render sorted, so equal values render identically
        assert!(text.find("\"a\"").unwrap() < text.find("\"arr\"").unwrap());
    }

    #[test]
    fn digest_ignores_insertion_order() {
        let a = serde_json::json!({"x": 1, "y": 2});
        let mut m = serde_json::Map::new();
        m.insert("y".into(), 2.into());
        m.insert("x".into(), 1.into());
        assert_eq!(digest_value(&a), digest_value(&Value::Object(m)));
    }

    #[test]
    fn manifest_written_with_outputs_and_versions() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("lyapunov", serde_json::json!({"span": 10.0}));
        m.seed("field_seed", 7);
        m.tolerance("rtol", 1e-10);
        m.budget("pair_budget", 1e7);
        m.record_output(&dir.path().join("spectrum.json"));
        let path = m.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["subcommand"], "lyapunov");
        assert_eq!(v["config_digest"].as_str().unwrap().len(), 64);
        assert!(v["module_versions"]["pseudohyp"].is_string());
        assert_eq!(v["rng_seeds"]["field_seed"], 7);
        assert_eq!(v["outputs"].as_array().unwrap().len(), 1);
    }
}
