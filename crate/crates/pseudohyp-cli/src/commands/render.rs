use std::path::{Path, PathBuf};

use serde_json::Value;

use pseudohyp::kneading::{kneading_color, DEFAULT_GREEN_SEED};
use pseudohyp::render::{load_png, Raster};
use pseudohyp::sweep::RegimeClass;

use super::print_json;
use crate::manifest::ensure_out_dir;
use crate::{CliError, CliResult, RenderArgs, RunManifest};

fn read_csv(path: &Path) -> CliResult<(String, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CliError::usage(format!("{}: no CSV header", path.display())))?
        .to_string();
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

/// Recovers (n1, n2) from a grid CSV written j-major with p1 cycling fastest:
/// n1 is the length of the leading block sharing the first p2 value.
fn grid_shape(rows: &[Vec<String>], path: &Path) -> CliResult<(usize, usize)> {
    if rows.is_empty() {
        return Err(CliError::usage(format!("{}: no data rows", path.display())));
    }
    let p2_first = &rows[0][1];
    let n1 = rows
        .iter()
        .take_while(|r| &r[1] == p2_first)
        .count()
        .max(1);
    if !rows.len().is_multiple_of(n1) {
        return Err(CliError::usage(format!(
            "{}: rows ({}) do not tile a grid of width {n1}",
            path.display(),
            rows.len()
        )));
    }
    Ok((n1, rows.len() / n1))
}

fn grid_raster<F>(rows: &[Vec<String>], path: &Path, mut color: F) -> CliResult<Raster>
where
    F: FnMut(&[String]) -> CliResult<[u8; 3]>,
{
    let (n1, n2) = grid_shape(rows, path)?;
    let mut raster = Raster::new(n1, n2, [0, 0, 0]);
    for (r, row) in rows.iter().enumerate() {
        let (i, j) = (r % n1, r / n1);
        raster.set(i, n2 - 1 - j, color(row)?);
    }
    Ok(raster)
}

fn kneading_raster(rows: &[Vec<String>], path: &Path, green_seed: u64) -> CliResult<Raster> {
    grid_raster(rows, path, |row| {
        if row.len() < 4 || row[2].is_empty() {
            return Ok([0, 0, 0]);
        }
        let d: u64 = row[2]
            .parse()
            .map_err(|_| CliError::usage(format!("bad D value {:?}", row[2])))?;
        let q = row[3].trim().len() as u32;
        Ok(kneading_color(d, q.max(1), green_seed))
    })
}

fn sweep_raster(rows: &[Vec<String>], path: &Path) -> CliResult<Raster> {
    grid_raster(rows, path, |row| {
        Ok(row
            .get(6)
            .and_then(|label| RegimeClass::from_str(label))
            .map(|class| class.rgb())
            .unwrap_or([0, 0, 0]))
    })
}

fn continuity_raster(rows: &[Vec<String>], path: &Path) -> CliResult<Raster> {
    grid_raster(rows, path, |row| {
        let (ess, ncu) = match (row.get(2), row.get(3)) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => (a.as_str(), b.as_str()),
            _ => return Ok([0, 0, 0]),
        };
        Ok(if ess == "Continuous" && ncu == "Continuous" {
            [0, 160, 0]
        } else if ess == "Discontinuous" || ncu == "Discontinuous" {
            [220, 0, 0]
        } else {
            [128, 128, 128]
        })
    })
}

fn cloud_raster(
    rows: &[Vec<String>],
    path: &Path,
    width: usize,
    height: usize,
) -> CliResult<Raster> {
    let mut pairs = Vec::with_capacity(rows.len());
    for row in rows {
        if row.len() < 2 {
            return Err(CliError::usage(format!("{}: bad rho,phi row", path.display())));
        }
        let rho: f64 = row[0]
            .parse()
            .map_err(|_| CliError::usage(format!("bad rho {:?}", row[0])))?;
        let phi: f64 = row[1]
            .parse()
            .map_err(|_| CliError::usage(format!("bad phi {:?}", row[1])))?;
        pairs.push((rho, phi));
    }
    let max_rho = pairs.iter().map(|p| p.0).fold(0.0, f64::max).max(1e-300);
    let mut raster = Raster::new(width, height, [255, 255, 255]);
    for (rho, phi) in pairs {
        let x = ((rho / max_rho) * (width - 1) as f64).round() as usize;
        let y = ((phi / std::f64::consts::PI) * (height - 1) as f64).round() as usize;
        raster.set(
            x.min(width - 1),
            height - 1 - y.min(height - 1),
            [20, 20, 20],
        );
    }
    Ok(raster)
}

pub fn run(args: &RenderArgs) -> CliResult<()> {
    let green_seed = args.green_seed.unwrap_or(DEFAULT_GREEN_SEED);
    let width = args.width.unwrap_or(800) as usize;
    let height = args.height.unwrap_or(600) as usize;
    if width < 2 || height < 2 {
        return Err(CliError::usage("--width/--height must be at least 2"));
    }

    let is_png = args
        .input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let kind = match args.kind.as_str() {
        "auto" => {
            if is_png {
                "image".to_string()
            } else {
                let (header, _) = read_csv(&args.input)?;
                match header.as_str() {
                    "p1,p2,D,bits" => "kneading".to_string(),
                    "p1,p2,L1,L2,L3,L4,label" => "sweep".to_string(),
                    "p1,p2,ess,ncu" => "continuity".to_string(),
                    "rho,phi" => "cloud".to_string(),
                    other => {
                        return Err(CliError::usage(format!(
                            "unrecognized CSV header {other:?}; pass --kind"
                        )))
                    }
                }
            }
        }
        k => k.to_string(),
    };

    let output: PathBuf = match &args.output {
        Some(p) => p.clone(),
        None => {
            if kind == "image" {
                args.input.with_extension("ppm")
            } else {
                args.input.with_extension("png")
            }
        }
    };

    let config = serde_json::json!({
        "input": args.input.display().to_string(),
        "output": output.display().to_string(),
        "kind": kind,
        "green_seed": green_seed,
        "width": width,
        "height": height,
    });
    let mut manifest = RunManifest::new("render", config);
    manifest.seed("green_seed", green_seed);

    let raster = match kind.as_str() {
        "image" => load_png(&args.input)?,
        "kneading" => {
            let (_, rows) = read_csv(&args.input)?;
            kneading_raster(&rows, &args.input, green_seed)?
        }
        "sweep" => {
            let (_, rows) = read_csv(&args.input)?;
            sweep_raster(&rows, &args.input)?
        }
        "continuity" => {
            let (_, rows) = read_csv(&args.input)?;
            continuity_raster(&rows, &args.input)?
        }
        "cloud" => {
            let (_, rows) = read_csv(&args.input)?;
            cloud_raster(&rows, &args.input, width, height)?
        }
        other => {
            return Err(CliError::usage(format!(
                "--kind {other}: expected auto, kneading, sweep, continuity, cloud, or image"
            )))
        }
    };

    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    raster.save_annotated(&output, &manifest.config_digest)?;
    manifest.record_output(&output);
    ensure_out_dir(&args.out)?;
    manifest.write(&args.out)?;

    let mut obj = serde_json::Map::new();
    obj.insert("kind".into(), Value::String(kind));
    obj.insert("output".into(), Value::String(output.display().to_string()));
    obj.insert(
        "size".into(),
        serde_json::json!([raster.width(), raster.height()]),
    );
    obj.insert(
        "config_digest".into(),
        Value::String(manifest.config_digest.clone()),
    );
    print_json(&Value::Object(obj));
    Ok(())
}
