//! Binary trajectory cache: a 16-byte header (8-byte magic `PHYPTRAJ`,
//! u32 version, u32 dim), then len/t_start/sample_dt/transient and the flat
//! f64 state data, all little-endian.

use crate::error::{Error, Result};
use crate::integrate::Trajectory;
use crate::scalar::Real;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"PHYPTRAJ";
pub const VERSION: u32 = 1;

pub fn write_trajectory<T: Real>(traj: &Trajectory<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(traj.dim() as u32).to_le_bytes())?;
    w.write_all(&(traj.len() as u64).to_le_bytes())?;
    w.write_all(&traj.t_start.as_f64().to_le_bytes())?;
    w.write_all(&traj.sample_dt.as_f64().to_le_bytes())?;
    w.write_all(&traj.transient_discarded.as_f64().to_le_bytes())?;
    for v in traj.data() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_trajectory<T: Real>(path: &Path) -> Result<Trajectory<T>> {
    let file = std::fs::File::open(path)?;
    let mut r = std::io::BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Cache(format!("{}: truncated header", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Cache(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Cache(format!(
            "{}: unsupported version {version} (expected {VERSION})",
            path.display()
        )));
    }
    r.read_exact(&mut u32buf)?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let len = u64::from_le_bytes(u64buf) as usize;
    let mut f64buf = [0u8; 8];
    let mut read_f64 = |r: &mut std::io::BufReader<std::fs::File>| -> Result<f64> {
        r.read_exact(&mut f64buf)?;
        Ok(f64::from_le_bytes(f64buf))
    };
    let t_start = read_f64(&mut r)?;
    let sample_dt = read_f64(&mut r)?;
    let transient = read_f64(&mut r)?;
    if dim == 0 || dim > 64 {
        return Err(Error::Cache(format!("{}: implausible dim {dim}", path.display())));
    }
    let mut data = Vec::with_capacity(len * dim);
    let mut buf = [0u8; 8];
    for _ in 0..len * dim {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Cache(format!("{}: truncated data", path.display())))?;
        data.push(T::lit(f64::from_le_bytes(buf)));
    }
    Trajectory::from_flat(
        dim,
        T::lit(t_start),
        T::lit(sample_dt),
        T::lit(transient),
        data,
    )
}
