//! Parameter-plane sweeps: regime-classified Lyapunov diagrams plus batch
//! kneading / continuity grids, with an append-only journal for resumable
//! desk-scale runs.

use crate::continuity::{
    build_cloud, classify_cloud_with, default_rho_limit, CloudClass, FieldTag, Thresholds,
};
use crate::error::{Error, Result};
use crate::integrate::{integrate_trajectory, iterate_map, IntegratorOptions};
use crate::kneading::{kneading_color, kneading_value, value_to_bits};
use crate::lyapunov::{lyapunov_spectrum, LyapunovSpectrum, DEFAULT_TOL_ZERO};
use crate::render::Raster;
use crate::scalar::Real;
use crate::systems::{SystemKind, SystemModel};
use crate::tangent_fields::{build_fields, default_trim};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::{BufRead, Write as IoWrite};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub const DEFAULT_SWEEP_SPAN: f64 = 2e3;
pub const DEFAULT_SWEEP_TRANSIENT: f64 = 2e2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegimeClass {
    StableEquilibrium,
    LimitCycle,
    StrangeSumNeg,
    StrangeSumPos,
    Escaped,
    Unresolved,
}

impl RegimeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeClass::StableEquilibrium => "StableEquilibrium",
            RegimeClass::LimitCycle => "LimitCycle",
            RegimeClass::StrangeSumNeg => "StrangeSumNeg",
            RegimeClass::StrangeSumPos => "StrangeSumPos",
            RegimeClass::Escaped => "Escaped",
            RegimeClass::Unresolved => "Unresolved",
        }
    }

    pub fn from_str(s: &str) -> Option<RegimeClass> {
        Some(match s {
            "StableEquilibrium" => RegimeClass::StableEquilibrium,
            "LimitCycle" => RegimeClass::LimitCycle,
            "StrangeSumNeg" => RegimeClass::StrangeSumNeg,
            "StrangeSumPos" => RegimeClass::StrangeSumPos,
            "Escaped" => RegimeClass::Escaped,
            "Unresolved" => RegimeClass::Unresolved,
            _ => return None,
        })
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            RegimeClass::StableEquilibrium => [0, 160, 0],
            RegimeClass::LimitCycle => [0, 0, 220],
            RegimeClass::StrangeSumNeg => [235, 200, 0],
            RegimeClass::StrangeSumPos => [220, 0, 0],
            RegimeClass::Escaped => [0, 0, 0],
            RegimeClass::Unresolved => [128, 128, 128],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub class: RegimeClass,
    /// Spectrum snapshot (empty for Escaped cells).
    pub spectrum: Vec<f64>,
}

/// Pure classification of a spectrum into the diagram regimes.
pub fn classify_regime<T: Real>(spec: &LyapunovSpectrum<T>, tol_zero: T) -> RegimeLabel {
    let e = &spec.exponents;
    let snapshot: Vec<f64> = e.iter().map(|v| v.as_f64()).collect();
    let class = if e.is_empty() {
        RegimeClass::Unresolved
    } else {
        let l1 = e[0];
        let sum3: T = e.iter().take(3).copied().sum();
        if l1 < -tol_zero {
            RegimeClass::StableEquilibrium
        } else if l1.abs() <= tol_zero && e.len() >= 2 && e[1] < -tol_zero {
            RegimeClass::LimitCycle
        } else if l1 > tol_zero && sum3 < -tol_zero {
            RegimeClass::StrangeSumNeg
        } else if l1 > tol_zero && sum3 > tol_zero {
            RegimeClass::StrangeSumPos
        } else {
            RegimeClass::Unresolved
        }
    };
    RegimeLabel {
        class,
        spectrum: snapshot,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Spectrum,
    Kneading,
    Continuity,
}

impl Default for TaskKind {
    fn default() -> Self {
        TaskKind::Spectrum
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepAxis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl SweepAxis {
    pub fn value(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepOutputs {
    pub csv: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub journal: Option<PathBuf>,
}

fn default_span() -> f64 {
    DEFAULT_SWEEP_SPAN
}
fn default_transient() -> f64 {
    DEFAULT_SWEEP_TRANSIENT
}
fn default_rtol() -> f64 {
    1e-8
}
fn default_atol() -> f64 {
    1e-10
}
fn default_q() -> u32 {
    crate::kneading::DEFAULT_Q_PANORAMA
}
fn default_pair_budget() -> u64 {
    1_000_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepJob {
    pub system: String,
    pub param1: SweepAxis,
    pub param2: SweepAxis,
    #[serde(default)]
    pub fixed: Vec<(String, f64)>,
    #[serde(default)]
    pub task: TaskKind,
    /// Time units for flows, iterations for maps.
    #[serde(default = "default_span")]
    pub span: f64,
    #[serde(default = "default_transient")]
    pub transient: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    /// Kneading-task sequence length.
    #[serde(default = "default_q")]
    pub q: u32,
    /// Continuity-task pair budget (reduced from the headline 1e7).
    #[serde(default = "default_pair_budget")]
    pub pair_budget: u64,
    #[serde(default)]
    pub outputs: SweepOutputs,
}

impl SweepJob {
    pub fn from_json(text: &str) -> Result<SweepJob> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_json_file(path: &Path) -> Result<SweepJob> {
        SweepJob::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for axis in [&self.param1, &self.param2] {
            if axis.n < 2 {
                return Err(Error::InvalidArgument(format!(
                    "axis {}: resolution must be >= 2",
                    axis.name
                )));
            }
            if !axis.lo.is_finite() || !axis.hi.is_finite() || axis.lo >= axis.hi {
                return Err(Error::InvalidArgument(format!(
                    "axis {}: range must be finite and increasing",
                    axis.name
                )));
            }
        }
        for &(ref name, v) in &self.fixed {
            if !v.is_finite() {
                return Err(Error::NonFiniteParameter { name: name.clone() });
            }
        }
        if !(self.span.is_finite() && self.span > 0.0) {
            return Err(Error::InvalidArgument("span must be positive".into()));
        }
        Ok(())
    }

    /// Digest over everything that affects per-cell results (output paths
    /// excluded), used to fence the resume journal.
    pub fn config_digest(&self) -> String {
        let key = serde_json::json!({
            "system": self.system,
            "param1": [&self.param1.name, self.param1.lo, self.param1.hi, self.param1.n],
            "param2": [&self.param2.name, self.param2.lo, self.param2.hi, self.param2.n],
            "fixed": self.fixed,
            "task": self.task,
            "span": self.span,
            "transient": self.transient,
            "seed": self.seed,
            "x0": self.x0,
            "rtol": self.rtol,
            "atol": self.atol,
            "q": self.q,
            "pair_budget": self.pair_budget,
        });
        let mut hasher = Sha256::new();
        hasher.update(key.to_string().as_bytes());
        hex_string(&hasher.finalize())
    }

    fn integrator(&self) -> IntegratorOptions<f64> {
        IntegratorOptions::with_tol(self.rtol, self.atol)
    }

    fn start_state(&self, dim: usize) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| vec![1.0; dim])
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Regime(RegimeLabel),
    Kneading { d: u64, q: u32 },
    Continuity { ess: CloudClass, ncu: CloudClass },
    Failed(String),
}

impl CellOutcome {
    pub fn rgb(&self, green_seed: u64, q: u32) -> [u8; 3] {
        match self {
            CellOutcome::Regime(label) => label.class.rgb(),
            CellOutcome::Kneading { d, .. } => kneading_color(*d, q, green_seed),
            CellOutcome::Continuity { ess, ncu } => {
                if *ess == CloudClass::Continuous && *ncu == CloudClass::Continuous {
                    [0, 160, 0]
                } else if *ess == CloudClass::Discontinuous || *ncu == CloudClass::Discontinuous {
                    [220, 0, 0]
                } else {
                    [128, 128, 128]
                }
            }
            CellOutcome::Failed(_) => [0, 0, 0],
        }
    }

    fn to_status(&self) -> String {
        match self {
            CellOutcome::Regime(label) => {
                let mut s = label.class.as_str().to_string();
                for v in &label.spectrum {
                    s.push(' ');
                    s.push_str(&format!("{v:.16e}"));
                }
                s
            }
            CellOutcome::Kneading { d, q } => format!("kneading {d} {q}"),
            CellOutcome::Continuity { ess, ncu } => {
                format!("continuity {} {}", ess.as_str(), ncu.as_str())
            }
            CellOutcome::Failed(reason) => {
                format!("failed {}", reason.replace([',', '\n'], ";"))
            }
        }
    }

    fn from_status(s: &str) -> Option<CellOutcome> {
        let mut tokens = s.split(' ');
        let head = tokens.next()?;
        if let Some(class) = RegimeClass::from_str(head) {
            let mut spectrum = Vec::new();
            for tok in tokens {
                spectrum.push(tok.parse::<f64>().ok()?);
            }
            return Some(CellOutcome::Regime(RegimeLabel { class, spectrum }));
        }
        match head {
            "kneading" => {
                let d = tokens.next()?.parse().ok()?;
                let q = tokens.next()?.parse().ok()?;
                Some(CellOutcome::Kneading { d, q })
            }
            "continuity" => {
                let ess = cloud_class_from_str(tokens.next()?)?;
                let ncu = cloud_class_from_str(tokens.next()?)?;
                Some(CellOutcome::Continuity { ess, ncu })
            }
            "failed" => Some(CellOutcome::Failed(tokens.collect::<Vec<_>>().join(" "))),
            _ => None,
        }
    }
}

fn cloud_class_from_str(s: &str) -> Option<CloudClass> {
    Some(match s {
        "Continuous" => CloudClass::Continuous,
        "Discontinuous" => CloudClass::Discontinuous,
        "NonorientableCandidate" => CloudClass::NonorientableCandidate,
        "Inconclusive" => CloudClass::Inconclusive,
        _ => return None,
    })
}

#[derive(Debug)]
pub struct SweepResult {
    pub job: SweepJob,
    /// Row-major, index = i + n1 * j.
    pub outcomes: Vec<CellOutcome>,
    pub raster: Raster,
    /// Cells recomputed this run (the rest came from the journal).
    pub computed: usize,
    pub resumed: usize,
}

impl SweepResult {
    pub fn outcome(&self, i: usize, j: usize) -> &CellOutcome {
        &self.outcomes[i + self.job.param1.n * j]
    }

    pub fn class_at(&self, i: usize, j: usize) -> Option<RegimeClass> {
        match self.outcome(i, j) {
            CellOutcome::Regime(label) => Some(label.class),
            _ => None,
        }
    }

    pub fn count_class(&self, class: RegimeClass) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, CellOutcome::Regime(l) if l.class == class))
            .count()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        match self.job.task {
            TaskKind::Spectrum => writeln!(out, "p1,p2,L1,L2,L3,L4,label")?,
            TaskKind::Kneading => writeln!(out, "p1,p2,D,bits")?,
            TaskKind::Continuity => writeln!(out, "p1,p2,ess,ncu")?,
        }
        for j in 0..self.job.param2.n {
            for i in 0..self.job.param1.n {
                let p1 = self.job.param1.value(i);
                let p2 = self.job.param2.value(j);
                write!(out, "{p1:.16e},{p2:.16e}")?;
                match (self.job.task, self.outcome(i, j)) {
                    (TaskKind::Spectrum, CellOutcome::Regime(label)) => {
                        for k in 0..4 {
                            match label.spectrum.get(k) {
                                Some(v) => write!(out, ",{v:.16e}")?,
                                None => write!(out, ",")?,
                            }
                        }
                        writeln!(out, ",{}", label.class.as_str())?;
                    }
                    (TaskKind::Spectrum, CellOutcome::Failed(_)) => {
                        writeln!(out, ",,,,,Escaped")?;
                    }
                    (TaskKind::Kneading, CellOutcome::Kneading { d, q }) => {
                        let bits: String = value_to_bits(*d, *q)
                            .iter()
                            .map(|b| char::from(b'0' + b))
                            .collect();
                        writeln!(out, ",{d},{bits}")?;
                    }
                    (TaskKind::Continuity, CellOutcome::Continuity { ess, ncu }) => {
                        writeln!(out, ",{},{}", ess.as_str(), ncu.as_str())?;
                    }
                    (TaskKind::Kneading, _) | (TaskKind::Continuity, _) => {
                        writeln!(out, ",,")?;
                    }
                    (TaskKind::Spectrum, _) => writeln!(out, ",,,,,Unresolved")?,
                }
            }
        }
        Ok(())
    }
}

fn run_cell(job: &SweepJob, i: usize, j: usize) -> CellOutcome {
    let p1 = job.param1.value(i);
    let p2 = job.param2.value(j);
    let mut params = job.fixed.clone();
    params.push((job.param1.name.clone(), p1));
    params.push((job.param2.name.clone(), p2));
    let opts = job.integrator();
    let model: SystemModel<f64> = match SystemModel::builtin(&job.system, &params) {
        Ok(m) => m,
        Err(e) => return CellOutcome::Failed(e.to_string()),
    };
    match job.task {
        TaskKind::Spectrum => {
            let x0 = job.start_state(model.dim());
            match lyapunov_spectrum(&model, &x0, job.transient, job.span, 0.5, &opts) {
                Ok(spec) => CellOutcome::Regime(classify_regime(&spec, DEFAULT_TOL_ZERO)),
                Err(Error::Escape { .. }) | Err(Error::NonFiniteState { .. }) => {
                    CellOutcome::Regime(RegimeLabel {
                        class: RegimeClass::Escaped,
                        spectrum: Vec::new(),
                    })
                }
                Err(e) => CellOutcome::Failed(e.to_string()),
            }
        }
        TaskKind::Kneading => {
            let run = || -> Result<CellOutcome> {
                let eq = model.origin_info_closed()?;
                let v = eq
                    .unstable_eigenvector
                    .as_ref()
                    .ok_or(Error::NoUnstableDirection)?;
                let mut dir = v.clone();
                if dir[0] < 0.0 {
                    dir.iter_mut().for_each(|c| *c = -*c);
                }
                let x0: Vec<f64> = eq
                    .location
                    .iter()
                    .zip(dir.iter())
                    .map(|(&c, &d)| c + crate::kneading::DEFAULT_SEPARATRIX_OFFSET * d)
                    .collect();
                let bits = crate::kneading::kneading_bits(&model, &x0, job.q, job.span, &opts)?;
                Ok(CellOutcome::Kneading {
                    d: kneading_value(&bits),
                    q: job.q,
                })
            };
            run().unwrap_or_else(|e| CellOutcome::Failed(e.to_string()))
        }
        TaskKind::Continuity => {
            let run = || -> Result<CellOutcome> {
                let x0 = job.start_state(model.dim());
                let traj = match model.kind() {
                    SystemKind::Flow => integrate_trajectory(
                        &model,
                        &x0,
                        job.transient,
                        job.span,
                        0.01,
                        &opts,
                    )?,
                    SystemKind::Map => iterate_map(
                        &model,
                        &x0,
                        job.transient as usize,
                        job.span as usize,
                        &opts,
                    )?,
                };
                let trim = default_trim(traj.len()).min(traj.len() / 4);
                let samples = build_fields(&model, &traj, trim, trim, job.seed, &opts)?;
                let budget = job.pair_budget as usize;
                let verdict = |tag: FieldTag| -> Result<CloudClass> {
                    let cloud = build_cloud(&model, &samples, tag, budget, job.seed)?;
                    let th = Thresholds::with_rho_limit(default_rho_limit(&cloud));
                    Ok(classify_cloud_with(&cloud, th).class)
                };
                Ok(CellOutcome::Continuity {
                    ess: verdict(FieldTag::Ess)?,
                    ncu: verdict(FieldTag::Ncu)?,
                })
            };
            run().unwrap_or_else(|e| CellOutcome::Failed(e.to_string()))
        }
    }
}

fn read_journal(
    path: &Path,
    digest: &str,
    n1: usize,
    n2: usize,
) -> Result<HashMap<(usize, usize), CellOutcome>> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Ok(HashMap::new()),
    };
    let found = header
        .strip_prefix("# sha256=")
        .unwrap_or("<malformed header>");
    if found != digest {
        return Err(Error::JournalMismatch {
            journal: found.to_string(),
            job: digest.to_string(),
        });
    }
    let mut completed = HashMap::new();
    for line in lines {
        let line = line?;
        let mut parts = line.splitn(3, ',');
        let (Some(i), Some(j), Some(status)) = (parts.next(), parts.next(), parts.next()) else {
            continue; // torn tail line from an interrupted run
        };
        let (Ok(i), Ok(j)) = (i.parse::<usize>(), j.parse::<usize>()) else {
            continue;
        };
        if i >= n1 || j >= n2 {
            continue;
        }
        if let Some(outcome) = CellOutcome::from_status(status) {
            completed.insert((i, j), outcome);
        }
    }
    Ok(completed)
}

/// Runs the sweep, cell-parallel, resuming from `outputs.journal` when it
/// already holds lines for this exact job config. Per-cell failures are
/// recorded in the grid; only job-level I/O aborts.
pub fn run_sweep(job: &SweepJob) -> Result<SweepResult> {
    job.validate()?;
    let digest = job.config_digest();
    let (n1, n2) = (job.param1.n, job.param2.n);

    let mut completed: HashMap<(usize, usize), CellOutcome> = HashMap::new();
    let mut journal_file = None;
    if let Some(jpath) = &job.outputs.journal {
        if jpath.exists() {
            completed = read_journal(jpath, &digest, n1, n2)?;
        }
        let fresh = !jpath.exists();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(jpath)?;
        if fresh {
            writeln!(file, "# sha256={digest}")?;
            file.flush()?;
        }
        journal_file = Some(Mutex::new(file));
    }

    let pending: Vec<(usize, usize)> = (0..n2)
        .flat_map(|j| (0..n1).map(move |i| (i, j)))
        .filter(|key| !completed.contains_key(key))
        .collect();
    let computed = pending.len();
    let resumed = n1 * n2 - computed;

    let fresh_results: Vec<((usize, usize), CellOutcome)> = pending
        .par_iter()
        .map(|&(i, j)| {
            let outcome = run_cell(job, i, j);
            if let Some(lock) = &journal_file {
                let line = format!("{i},{j},{}\n", outcome.to_status());
                let mut file = lock.lock().expect("journal lock");
                let _ = file.write_all(line.as_bytes()).and_then(|_| file.flush());
            }
            ((i, j), outcome)
        })
        .collect();
    completed.extend(fresh_results);

    let mut outcomes = Vec::with_capacity(n1 * n2);
    let mut raster = Raster::new(n1, n2, [0, 0, 0]);
    for j in 0..n2 {
        for i in 0..n1 {
            let outcome = completed
                .remove(&(i, j))
                .expect("every cell has an outcome");
            raster.set(i, n2 - 1 - j, outcome.rgb(job.seed, job.q));
            outcomes.push(outcome);
        }
    }

    let result = SweepResult {
        job: job.clone(),
        outcomes,
        raster,
        computed,
        resumed,
    };
    if let Some(csv_path) = &job.outputs.csv {
        let mut buf = Vec::new();
        result.write_csv(&mut buf)?;
        std::fs::write(csv_path, buf)?;
    }
    if let Some(img_path) = &job.outputs.image {
        result.raster.save(img_path)?;
    }
    Ok(result)
}
