//! Kneading sequences of separatrices, D-values, RGB coding, and
//! parameter-plane kneading diagrams.
//!
//! Bits come from successive maxima of |x(t)| (computed as maxima of x² to
//! avoid the kink at x = 0): s_j = 1 iff x > 0 at the j-th maximum. The very
//! first maximum is dropped — on the plus branch it always has x > 0. A
//! section-membership rule (s_j = 1 iff the (j+1)-th window crossing lies in
//! Σ₊) is available as a cross-check.

use crate::error::{Error, Result};
use crate::integrate::{IntegratorOptions, Trajectory};
use crate::linalg::Mat;
use crate::render::Raster;
use crate::scalar::Real;
use crate::sections::{
    find_crossings, nth_counted, CrossDirection, CrossingOptions, SectionSpec, Window,
};
use crate::systems::{SystemKind, SystemModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// x² below this at a detected maximum means the pass hugs W^s(O) too closely
/// to call the symbol.
pub const AMBIGUITY_FLOOR: f64 = 1e-6;
/// |d(x²)/dt| at a refined maximum.
pub const MAXIMUM_RESIDUAL_TOL: f64 = 1e-8;
pub const DEFAULT_Q_PANORAMA: u32 = 16;
pub const DEFAULT_Q_ZOOM: u32 = 30;
pub const DEFAULT_SEPARATRIX_OFFSET: f64 = 1e-6;
pub const DEFAULT_TIME_BUDGET: f64 = 500.0;
pub const DEFAULT_GREEN_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneadingRecord {
    /// s₁…s_q (s₀ already dropped).
    pub bits: Vec<u8>,
    pub q: u32,
    pub d: u64,
    pub rgb: [u8; 3],
    pub param_point: (f64, f64),
}

/// D = Σ_{i=1}^q s_i 2^{q−i}.
pub fn kneading_value(bits: &[u8]) -> u64 {
    assert!(bits.len() <= 63, "kneading_value: q too large for u64");
    bits.iter()
        .fold(0u64, |acc, &b| (acc << 1) | u64::from(b & 1))
}

/// Inverse of `kneading_value` at fixed q.
pub fn value_to_bits(d: u64, q: u32) -> Vec<u8> {
    (0..q).rev().map(|i| ((d >> i) & 1) as u8).collect()
}

/// Lower half of the D-range shades the red channel, upper half the blue one;
/// intensity = floor(255 · D_half / (half_range − 1)). The green channel is a
/// random value keyed by D alone, so equal D always gets equal color.
pub fn kneading_color(d: u64, q: u32, green_seed: u64) -> [u8; 3] {
    let half_range = 1u64 << (q - 1);
    let denom = (half_range - 1).max(1);
    let (red, blue) = if d < half_range {
        (((255 * d) / denom) as u8, 0)
    } else {
        (0, ((255 * (d - half_range)) / denom) as u8)
    };
    let mut rng =
        ChaCha8Rng::seed_from_u64(green_seed ^ d.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let green = rng.gen::<u8>();
    [red, green, blue]
}

/// A refined maximum of x² along an orbit.
#[derive(Debug, Clone)]
pub struct MaximumEvent<T> {
    pub t: T,
    pub x: T,
    pub x_sq: T,
    /// |d(x²)/dt| after refinement.
    pub g_residual: T,
}

/// Section whose zero set is d(x²)/dt = 2·x·F₀(x); downward crossings are
/// maxima of x².
fn derivative_section<T: Real>(model: &SystemModel<T>) -> SectionSpec<T> {
    let m_g = model.clone();
    let m_grad = model.clone();
    let dim = model.dim();
    let two = T::lit(2.0);
    SectionSpec::custom(
        "d(x^2)/dt",
        Arc::new(move |x: &[T]| {
            let mut f = vec![T::zero(); x.len()];
            m_g.eval(x, &mut f);
            two * x[0] * f[0]
        }),
        Arc::new(move |x: &[T], out: &mut [T]| {
            let mut f = vec![T::zero(); x.len()];
            m_grad.eval(x, &mut f);
            let mut j = Mat::zeros(x.len(), x.len());
            m_grad.jacobian(x, &mut j);
            for (k, o) in out.iter_mut().enumerate() {
                *o = two * x[0] * j[(0, k)];
            }
            out[0] += two * f[0];
        }),
        None,
        vec![crate::sections::WindowBox {
            window: Window::Plus,
            bounds: vec![None; dim],
        }],
    )
}

/// Streams the orbit of `x0` until `count` maxima of x² are found (or the
/// time budget runs out), without storing the trajectory.
pub fn kneading_maxima<T: Real>(
    model: &SystemModel<T>,
    x0: &[T],
    count: usize,
    time_budget: T,
    opts: &IntegratorOptions<T>,
) -> Result<Vec<MaximumEvent<T>>> {
    if model.kind() != SystemKind::Flow {
        return Err(Error::InvalidArgument(
            "kneading sequences are defined for flows".into(),
        ));
    }
    let section = derivative_section(model);
    let copts = CrossingOptions {
        direction: CrossDirection::Down,
        window_only: false,
        time_budget_per_return: time_budget / T::lit(count as f64),
        integrator: opts.clone(),
    };
    let events = match find_crossings(model, x0, &section, count, &copts) {
        Ok(ev) => ev,
        Err(Error::NoCrossing { found, .. }) => {
            return Err(Error::NotEnoughMaxima {
                found,
                needed: count,
            })
        }
        Err(e) => return Err(e),
    };
    Ok(events
        .iter()
        .filter(|e| !e.grazing)
        .take(count)
        .map(|e| MaximumEvent {
            t: e.t,
            x: e.state[0],
            x_sq: e.state[0] * e.state[0],
            g_residual: e.residual,
        })
        .collect())
}

fn bits_from_maxima<T: Real>(maxima: &[MaximumEvent<T>], q: u32) -> Result<Vec<u8>> {
    let needed = q as usize + 1;
    if maxima.len() < needed {
        return Err(Error::NotEnoughMaxima {
            found: maxima.len(),
            needed,
        });
    }
    let floor = T::lit(AMBIGUITY_FLOOR);
    let mut bits = Vec::with_capacity(q as usize);
    // s₀ (the first maximum) is dropped.
    for (j, m) in maxima[1..needed].iter().enumerate() {
        if m.x_sq < floor {
            return Err(Error::AmbiguousSymbol {
                index: j + 1,
                value: m.x_sq.as_f64(),
            });
        }
        bits.push(u8::from(m.x > T::zero()));
    }
    Ok(bits)
}

/// Streaming kneading bits from an initial point (used by the diagrams: no
/// trajectory storage).
pub fn kneading_bits<T: Real>(
    model: &SystemModel<T>,
    x0: &[T],
    q: u32,
    time_budget: T,
    opts: &IntegratorOptions<T>,
) -> Result<Vec<u8>> {
    let maxima = kneading_maxima(model, x0, q as usize + 1, time_budget, opts)?;
    bits_from_maxima(&maxima, q)
}

/// Kneading bits from a stored separatrix trajectory: maxima are bracketed at
/// sample level by the sign of d(x²)/dt and each bracketing interval is
/// re-integrated for dense-output refinement.
pub fn kneading_sequence<T: Real>(
    model: &SystemModel<T>,
    traj: &Trajectory<T>,
    q: u32,
    opts: &IntegratorOptions<T>,
) -> Result<Vec<u8>> {
    if model.kind() != SystemKind::Flow {
        return Err(Error::InvalidArgument(
            "kneading sequences are defined for flows".into(),
        ));
    }
    let needed = q as usize + 1;
    let section = derivative_section(model);
    let g_at = |x: &[T]| section.g(x);
    let mut maxima: Vec<MaximumEvent<T>> = Vec::with_capacity(needed);
    let mut prev_sign: i8 = 0;
    let dt = traj.sample_dt;
    for s in 0..traj.len() {
        let g = g_at(traj.state(s));
        let sign = if g > T::zero() {
            1
        } else if g < T::zero() {
            -1
        } else {
            0
        };
        if prev_sign > 0 && sign < 0 {
            // Re-integrate the bracketing sample interval for refinement.
            let copts = CrossingOptions {
                direction: CrossDirection::Down,
                window_only: false,
                time_budget_per_return: dt * T::lit(1.5),
                integrator: opts.clone(),
            };
            let events = find_crossings(model, traj.state(s - 1), &section, 1, &copts)?;
            let ev = nth_counted(&events, 1, false).expect("one refined maximum");
            maxima.push(MaximumEvent {
                t: traj.time(s - 1) + ev.t,
                x: ev.state[0],
                x_sq: ev.state[0] * ev.state[0],
                g_residual: ev.residual,
            });
            if maxima.len() == needed {
                break;
            }
        }
        if sign != 0 {
            prev_sign = sign;
        }
    }
    bits_from_maxima(&maxima, q)
}

/// Cross-check bit rule: s_j = 1 iff the (j+1)-th window-member crossing of
/// `section` lies in Σ₊ (the first crossing plays the role of s₀).
pub fn kneading_bits_by_section<T: Real>(
    model: &SystemModel<T>,
    x0: &[T],
    section: &SectionSpec<T>,
    q: u32,
    time_budget: T,
    opts: &IntegratorOptions<T>,
) -> Result<Vec<u8>> {
    let needed = q as usize + 1;
    let copts = CrossingOptions {
        direction: CrossDirection::Both,
        window_only: true,
        time_budget_per_return: time_budget / T::lit(needed as f64),
        integrator: opts.clone(),
    };
    let events = match find_crossings(model, x0, section, needed, &copts) {
        Ok(ev) => ev,
        Err(Error::NoCrossing { found, .. }) => {
            return Err(Error::NotEnoughMaxima {
                found,
                needed,
            })
        }
        Err(e) => return Err(e),
    };
    let members: Vec<_> = events
        .iter()
        .filter(|e| !e.grazing && e.window != Window::Outside)
        .take(needed)
        .collect();
    Ok(members[1..]
        .iter()
        .map(|e| u8::from(e.window == Window::Plus))
        .collect())
}

/// Number of positions where the |x|-maxima rule and the section-membership
/// rule disagree for the same separatrix.
pub fn compare_bit_rules<T: Real>(
    model: &SystemModel<T>,
    x0: &[T],
    section: &SectionSpec<T>,
    q: u32,
    time_budget: T,
    opts: &IntegratorOptions<T>,
) -> Result<usize> {
    let a = kneading_bits(model, x0, q, time_budget, opts)?;
    let b = kneading_bits_by_section(model, x0, section, q, time_budget, opts)?;
    Ok(a.iter().zip(b.iter()).filter(|(x, y)| x != y).count())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KneadingAxes {
    pub name1: String,
    pub lo1: f64,
    pub hi1: f64,
    pub n1: usize,
    pub name2: String,
    pub lo2: f64,
    pub hi2: f64,
    pub n2: usize,
}

impl KneadingAxes {
    pub fn value1(&self, i: usize) -> f64 {
        self.lo1 + (self.hi1 - self.lo1) * i as f64 / (self.n1 - 1) as f64
    }
    pub fn value2(&self, j: usize) -> f64 {
        self.lo2 + (self.hi2 - self.lo2) * j as f64 / (self.n2 - 1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct KneadingDiagramOptions {
    pub q: u32,
    pub separatrix_offset: f64,
    pub time_budget: f64,
    pub green_seed: u64,
    pub integrator: IntegratorOptions<f64>,
}

impl Default for KneadingDiagramOptions {
    fn default() -> Self {
        KneadingDiagramOptions {
            q: DEFAULT_Q_PANORAMA,
            separatrix_offset: DEFAULT_SEPARATRIX_OFFSET,
            time_budget: DEFAULT_TIME_BUDGET,
            green_seed: DEFAULT_GREEN_SEED,
            integrator: IntegratorOptions::with_tol(1e-7, 1e-9),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KneadingDiagram {
    pub axes: KneadingAxes,
    /// Row-major, index = i + n1 * j (i along axis 1, j along axis 2).
    pub records: Vec<Option<KneadingRecord>>,
    /// (i, j, reason) for ambiguous/failed points (rendered black).
    pub failures: Vec<(usize, usize, String)>,
    pub raster: Raster,
}

impl KneadingDiagram {
    pub fn record(&self, i: usize, j: usize) -> Option<&KneadingRecord> {
        self.records[i + self.axes.n1 * j].as_ref()
    }

    /// CSV `p1,p2,D,bits` (failed points get empty D and bits).
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "p1,p2,D,bits")?;
        for j in 0..self.axes.n2 {
            for i in 0..self.axes.n1 {
                let p1 = self.axes.value1(i);
                let p2 = self.axes.value2(j);
                match self.record(i, j) {
                    Some(rec) => {
                        let bits: String =
                            rec.bits.iter().map(|b| char::from(b'0' + b)).collect();
                        writeln!(out, "{:.16e},{:.16e},{},{}", p1, p2, rec.d, bits)?;
                    }
                    None => writeln!(out, "{:.16e},{:.16e},,", p1, p2)?,
                }
            }
        }
        Ok(())
    }
}

/// Separatrix start point for the plus branch at the current parameters.
pub fn separatrix_start(model: &SystemModel<f64>, offset: f64) -> Result<Vec<f64>> {
    let eq = model.origin_info_closed()?;
    let v = eq
        .unstable_eigenvector
        .as_ref()
        .ok_or(Error::NoUnstableDirection)?;
    let mut dir = v.clone();
    if dir[0] < 0.0 {
        dir.iter_mut().for_each(|c| *c = -*c);
    }
    Ok(eq
        .location
        .iter()
        .zip(dir.iter())
        .map(|(&c, &d)| c + offset * d)
        .collect())
}

/// Builds the model at every grid point of the two swept parameters, computes
/// the plus-branch kneading sequence, and assembles the record grid and the
/// colored raster (axis 1 horizontal, axis 2 vertical, low values at the
/// bottom-left). One point failing never aborts the sweep.
pub fn kneading_diagram(
    system: &str,
    fixed: &[(String, f64)],
    axes: &KneadingAxes,
    opts: &KneadingDiagramOptions,
) -> Result<KneadingDiagram> {
    if axes.n1 < 2 || axes.n2 < 2 {
        return Err(Error::InvalidArgument(
            "kneading_diagram needs resolution >= 2 on both axes".into(),
        ));
    }
    let cells: Vec<(usize, usize)> = (0..axes.n2)
        .flat_map(|j| (0..axes.n1).map(move |i| (i, j)))
        .collect();
    let results: Vec<std::result::Result<KneadingRecord, String>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let p1 = axes.value1(i);
            let p2 = axes.value2(j);
            let mut params = fixed.to_vec();
            params.push((axes.name1.clone(), p1));
            params.push((axes.name2.clone(), p2));
            let run = || -> Result<KneadingRecord> {
                let model: SystemModel<f64> = SystemModel::builtin(system, &params)?;
                let x0 = separatrix_start(&model, opts.separatrix_offset)?;
                let bits =
                    kneading_bits(&model, &x0, opts.q, opts.time_budget, &opts.integrator)?;
                let d = kneading_value(&bits);
                Ok(KneadingRecord {
                    rgb: kneading_color(d, opts.q, opts.green_seed),
                    bits,
                    q: opts.q,
                    d,
                    param_point: (p1, p2),
                })
            };
            run().map_err(|e| e.to_string())
        })
        .collect();

    let mut records: Vec<Option<KneadingRecord>> = vec![None; axes.n1 * axes.n2];
    let mut failures = Vec::new();
    let mut raster = Raster::new(axes.n1, axes.n2, [0, 0, 0]);
    for (&(i, j), res) in cells.iter().zip(results.into_iter()) {
        match res {
            Ok(rec) => {
                raster.set(i, axes.n2 - 1 - j, rec.rgb);
                records[i + axes.n1 * j] = Some(rec);
            }
            Err(reason) => failures.push((i, j, reason)),
        }
    }
    Ok(KneadingDiagram {
        axes: axes.clone(),
        records,
        failures,
        raster,
    })
}

/// Median run length of constant-D stretches along axis 1 (the r-axis rows),
/// the band-structure statistic.
pub fn median_run_length_axis1(diag: &KneadingDiagram) -> f64 {
    let mut runs: Vec<usize> = Vec::new();
    for j in 0..diag.axes.n2 {
        let mut current: Option<(u64, usize)> = None;
        for i in 0..diag.axes.n1 {
            match (diag.record(i, j).map(|r| r.d), &mut current) {
                (Some(d), Some((cd, len))) if d == *cd => *len += 1,
                (Some(d), cur) => {
                    if let Some((_, len)) = cur.take() {
                        runs.push(len);
                    }
                    *cur = Some((d, 1));
                }
                (None, cur) => {
                    if let Some((_, len)) = cur.take() {
                        runs.push(len);
                    }
                }
            }
        }
        if let Some((_, len)) = current {
            runs.push(len);
        }
    }
    if runs.is_empty() {
        return 0.0;
    }
    runs.sort_unstable();
    let n = runs.len();
    if n % 2 == 1 {
        runs[n / 2] as f64
    } else {
        (runs[n / 2 - 1] + runs[n / 2]) as f64 / 2.0
    }
}

/// Fraction of horizontally adjacent classified cell pairs whose D differs,
/// the blurredness statistic.
pub fn adjacent_change_density_axis1(diag: &KneadingDiagram) -> f64 {
    let mut pairs = 0usize;
    let mut changed = 0usize;
    for j in 0..diag.axes.n2 {
        for i in 1..diag.axes.n1 {
            if let (Some(a), Some(b)) = (diag.record(i - 1, j), diag.record(i, j)) {
                pairs += 1;
                if a.d != b.d {
                    changed += 1;
                }
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        changed as f64 / pairs as f64
    }
}
