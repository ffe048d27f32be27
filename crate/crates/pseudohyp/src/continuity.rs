//! (ρ, φ) continuity clouds: for sampled pairs of trajectory points, plot the
//! state-space distance ρ against the angle φ between the field vectors at the
//! two points. A field is continuous precisely when φ → 0 as ρ → 0; the
//! classifier encodes the "visible gap above the ρ-axis" of the diagrams as
//! explicit thresholds.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::systems::SystemModel;
use crate::tangent_fields::TangentFieldSample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldTag {
    Ess,
    Ncu,
    Eu,
}

impl FieldTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldTag::Ess => "ess",
            FieldTag::Ncu => "ncu",
            FieldTag::Eu => "eu",
        }
    }
}

impl std::str::FromStr for FieldTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ess" => Ok(FieldTag::Ess),
            "ncu" => Ok(FieldTag::Ncu),
            "eu" => Ok(FieldTag::Eu),
            other => Err(Error::InvalidArgument(format!(
                "unknown field tag '{other}' (expected ess|ncu|eu)"
            ))),
        }
    }
}

/// Sampled (ρ, φ) pairs for one field along one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityCloud<T> {
    pub pairs: Vec<(T, T)>,
    pub field_tag: FieldTag,
    pub pair_budget: usize,
    pub seed: u64,
}

impl<T: Real> ContinuityCloud<T> {
    pub fn max_rho(&self) -> T {
        self.pairs
            .iter()
            .map(|p| p.0)
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn max_phi(&self) -> T {
        self.pairs
            .iter()
            .map(|p| p.1)
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// CSV dump `rho,phi`, 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "rho,phi")?;
        for &(rho, phi) in &self.pairs {
            writeln!(out, "{:.16e},{:.16e}", rho.as_f64(), phi.as_f64())?;
        }
        Ok(())
    }
}

pub const DEFAULT_PAIR_BUDGET: usize = 10_000_000;
pub const DEFAULT_RHO_BINS: usize = 64;
pub const DEFAULT_PHI_GAP: f64 = 0.3;
/// rho_limit as a fraction of the attractor diameter (max sampled ρ).
pub const DEFAULT_RHO_LIMIT_FRAC: f64 = 0.01;
/// Envelope φ < phi_floor + slope · (ρ / rho_limit) over the near-zero bins.
pub const DEFAULT_PHI_FLOOR: f64 = 0.15;
pub const DEFAULT_ENVELOPE_SLOPE: f64 = 1.0;
/// Bins with fewer pairs than this carry no statistical weight.
pub const MIN_BIN_COUNT: usize = 5;
/// Minimum number of near-zero pairs needed for any verdict.
pub const MIN_NEAR_PAIRS: usize = 50;

const PAIR_CHUNK: usize = 1 << 16;

/// Samples up to `pair_budget` distinct index pairs (all of them when the
/// sample set is small enough) and records (ρ, φ) per pair — φ between the u
/// vectors for `ess`, the w vectors for `ncu`/`eu`. Distances use the model
/// metric (wrapped on the torus). Deterministic for a fixed seed regardless
/// of thread count: each chunk of pairs draws from its own RNG stream.
pub fn build_cloud<T: Real>(
    model: &SystemModel<T>,
    samples: &[TangentFieldSample<T>],
    field: FieldTag,
    pair_budget: usize,
    seed: u64,
) -> Result<ContinuityCloud<T>> {
    if samples.len() < 2 {
        return Err(Error::NotEnoughData {
            context: "build_cloud",
            needed: 2,
            got: samples.len(),
        });
    }
    let n = samples.len();
    let evaluate = |i: usize, j: usize| -> (T, T) {
        let a = &samples[i];
        let b = &samples[j];
        let rho = model.dist(&a.state, &b.state);
        let (va, vb) = match field {
            FieldTag::Ess => (&a.u, &b.u),
            FieldTag::Ncu | FieldTag::Eu => (&a.w, &b.w),
        };
        let phi = crate::linalg::angle(va, vb);
        (rho, phi)
    };

    let total_unordered = n * (n - 1) / 2;
    let pairs: Vec<(T, T)> = if total_unordered <= pair_budget {
        let mut all = Vec::with_capacity(total_unordered);
        for i in 0..n {
            for j in i + 1..n {
                all.push(evaluate(i, j));
            }
        }
        all
    } else {
        let chunks = pair_budget / PAIR_CHUNK;
        let rem = pair_budget % PAIR_CHUNK;
        let counts: Vec<(u64, usize)> = (0..chunks)
            .map(|c| (c as u64, PAIR_CHUNK))
            .chain((rem > 0).then_some((chunks as u64, rem)))
            .collect();
        counts
            .par_iter()
            .flat_map_iter(|&(stream, count)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                (0..count)
                    .map(|_| {
                        let i = rng.gen_range(0..n);
                        let mut j = rng.gen_range(0..n - 1);
                        if j >= i {
                            j += 1;
                        }
                        evaluate(i, j)
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    Ok(ContinuityCloud {
        pairs,
        field_tag: field,
        pair_budget,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudClass {
    Continuous,
    Discontinuous,
    NonorientableCandidate,
    Inconclusive,
}

impl CloudClass {
    pub fn as_str(self) -> &'static str {
        match self {
            CloudClass::Continuous => "Continuous",
            CloudClass::Discontinuous => "Discontinuous",
            CloudClass::NonorientableCandidate => "NonorientableCandidate",
            CloudClass::Inconclusive => "Inconclusive",
        }
    }
}

/// Per-ρ-bin evidence.
#[derive(Debug, Clone)]
pub struct BinStat<T> {
    pub rho_lo: T,
    pub rho_hi: T,
    pub count: usize,
    pub phi_max: T,
    /// Pairs with φ in the middle band (phi_gap, π − phi_gap).
    pub mid_count: usize,
    /// Pairs with φ > π − phi_gap.
    pub high_count: usize,
}

#[derive(Debug, Clone)]
pub struct Thresholds<T> {
    pub rho_bins: usize,
    pub phi_gap: T,
    pub rho_limit: T,
    pub phi_floor: T,
    /// Envelope slope, normalized: allowed φ = phi_floor + slope·(ρ/rho_limit).
    pub envelope_slope: T,
    pub min_bin_count: usize,
    pub min_near_pairs: usize,
}

impl<T: Real> Thresholds<T> {
    pub fn with_rho_limit(rho_limit: T) -> Self {
        Thresholds {
            rho_bins: DEFAULT_RHO_BINS,
            phi_gap: T::lit(DEFAULT_PHI_GAP),
            rho_limit,
            phi_floor: T::lit(DEFAULT_PHI_FLOOR),
            envelope_slope: T::lit(DEFAULT_ENVELOPE_SLOPE),
            min_bin_count: MIN_BIN_COUNT,
            min_near_pairs: MIN_NEAR_PAIRS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContinuityVerdict<T> {
    pub class: CloudClass,
    pub evidence: Vec<BinStat<T>>,
    pub thresholds: Thresholds<T>,
}

/// Default absolute rho_limit for a cloud: 1% of the attractor diameter,
/// itself estimated as the maximum sampled pair distance.
pub fn default_rho_limit<T: Real>(cloud: &ContinuityCloud<T>) -> T {
    T::lit(DEFAULT_RHO_LIMIT_FRAC) * cloud.max_rho()
}

/// Bins the cloud by log-spaced ρ and classifies:
/// Continuous — every populated bin below rho_limit sits under the envelope
/// line and the smallest populated bin's φ-max is below phi_gap;
/// Discontinuous — the small-ρ bins hold φ values bounded away from both 0
/// and π; NonorientableCandidate — small-ρ φ mass clusters only near 0 AND π;
/// Inconclusive — anything else (including too little near-zero evidence).
pub fn classify_cloud<T: Real>(
    cloud: &ContinuityCloud<T>,
    rho_bins: usize,
    phi_gap: T,
    rho_limit: T,
) -> ContinuityVerdict<T> {
    let mut th = Thresholds::with_rho_limit(rho_limit);
    th.rho_bins = rho_bins;
    th.phi_gap = phi_gap;
    classify_cloud_with(cloud, th)
}

pub fn classify_cloud_with<T: Real>(
    cloud: &ContinuityCloud<T>,
    th: Thresholds<T>,
) -> ContinuityVerdict<T> {
    let diameter = cloud.max_rho();
    let rho_min_pos = cloud
        .pairs
        .iter()
        .map(|p| p.0)
        .filter(|&r| r > T::zero())
        .fold(T::infinity(), |a, b| a.min(b));
    if cloud.pairs.is_empty() || !(diameter > T::zero()) || !rho_min_pos.is_finite() {
        return ContinuityVerdict {
            class: CloudClass::Inconclusive,
            evidence: Vec::new(),
            thresholds: th,
        };
    }

    // Log-spaced bin edges over [rho_min_pos, diameter]; zero-ρ pairs fall
    // into the first bin.
    let nb = th.rho_bins.max(2);
    let lo = rho_min_pos.max(diameter * T::lit(1e-12));
    let log_lo = lo.ln();
    let log_hi = diameter.ln();
    let width = (log_hi - log_lo) / T::lit(nb as f64);
    let mut stats: Vec<BinStat<T>> = (0..nb)
        .map(|b| BinStat {
            rho_lo: (log_lo + width * T::lit(b as f64)).exp(),
            rho_hi: (log_lo + width * T::lit((b + 1) as f64)).exp(),
            count: 0,
            phi_max: T::zero(),
            mid_count: 0,
            high_count: 0,
        })
        .collect();
    let pi = T::PI();
    for &(rho, phi) in &cloud.pairs {
        let b = if rho <= lo || width <= T::zero() {
            0
        } else {
            ((rho.ln() - log_lo) / width)
                .as_f64()
                .floor()
                .min((nb - 1) as f64)
                .max(0.0) as usize
        };
        let s = &mut stats[b];
        s.count += 1;
        s.phi_max = s.phi_max.max(phi);
        if phi > th.phi_gap && phi < pi - th.phi_gap {
            s.mid_count += 1;
        } else if phi >= pi - th.phi_gap {
            s.high_count += 1;
        }
    }

    // Near-zero evidence: populated bins whose midpoint lies below rho_limit.
    let near: Vec<&BinStat<T>> = stats
        .iter()
        .filter(|s| {
            s.count >= th.min_bin_count
                && (s.rho_lo + s.rho_hi) * T::lit(0.5) < th.rho_limit
        })
        .collect();
    let near_pairs: usize = near.iter().map(|s| s.count).sum();
    let class = if near.is_empty() || near_pairs < th.min_near_pairs {
        CloudClass::Inconclusive
    } else {
        let smallest = near[0];
        let envelope_ok = near.iter().all(|s| {
            let mid = (s.rho_lo + s.rho_hi) * T::lit(0.5);
            s.phi_max < th.phi_floor + th.envelope_slope * (mid / th.rho_limit)
        });
        let mid_total: usize = near.iter().map(|s| s.mid_count).sum();
        let high_total: usize = near.iter().map(|s| s.high_count).sum();
        if envelope_ok && smallest.phi_max < th.phi_gap {
            CloudClass::Continuous
        } else if mid_total == 0 && high_total > 0 {
            CloudClass::NonorientableCandidate
        } else if smallest.mid_count > 0
            || mid_total * 20 >= near_pairs
            || (near.len() >= 2 && near[0].mid_count + near[1].mid_count > 0)
        {
            CloudClass::Discontinuous
        } else {
            CloudClass::Inconclusive
        }
    };
    ContinuityVerdict {
        class,
        evidence: stats,
        thresholds: th,
    }
}

/// 1-D clustering of small-ρ φ values into discrete levels: sorts and splits
/// where consecutive values gap by more than `merge_gap`. Returns
/// (center, count, half_width) per cluster, by descending count.
pub fn phi_level_clusters<T: Real>(
    cloud: &ContinuityCloud<T>,
    rho_max: T,
    merge_gap: T,
) -> Vec<(T, usize, T)> {
    let mut phis: Vec<T> = cloud
        .pairs
        .iter()
        .filter(|p| p.0 < rho_max)
        .map(|p| p.1)
        .collect();
    phis.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut clusters = Vec::new();
    let mut start = 0usize;
    for i in 1..=phis.len() {
        if i == phis.len() || phis[i] - phis[i - 1] > merge_gap {
            let slice = &phis[start..i];
            let lo = slice[0];
            let hi = slice[slice.len() - 1];
            let center = (lo + hi) * T::lit(0.5);
            clusters.push((center, slice.len(), (hi - lo) * T::lit(0.5)));
            start = i;
        }
    }
    clusters.sort_by(|a, b| b.1.cmp(&a.1));
    clusters
}

/// Scatter raster of the cloud with the per-bin φ-maxima overlay in red,
/// 800×600, φ ∈ [0, π] upward, ρ ∈ [0, max] rightward. Deterministic.
pub fn export_cloud_plot<T: Real>(
    cloud: &ContinuityCloud<T>,
    verdict: &ContinuityVerdict<T>,
    path: &std::path::Path,
) -> Result<()> {
    if cloud.pairs.is_empty() {
        return Err(Error::NotEnoughData {
            context: "export_cloud_plot",
            needed: 1,
            got: 0,
        });
    }
    let (w, h) = (800usize, 600usize);
    let mut img = crate::render::Raster::new(w, h, [255, 255, 255]);
    let rho_max = cloud.max_rho().as_f64().max(f64::MIN_POSITIVE);
    let pi = std::f64::consts::PI;
    let to_px = |rho: f64, phi: f64| -> (usize, usize) {
        let x = (rho / rho_max * (w - 1) as f64).round().clamp(0.0, (w - 1) as f64) as usize;
        let y = ((1.0 - phi / pi) * (h - 1) as f64).round().clamp(0.0, (h - 1) as f64) as usize;
        (x, y)
    };
    for &(rho, phi) in &cloud.pairs {
        let (x, y) = to_px(rho.as_f64(), phi.as_f64());
        img.set(x, y, [40, 40, 90]);
    }
    for s in &verdict.evidence {
        if s.count == 0 {
            continue;
        }
        let mid = 0.5 * (s.rho_lo.as_f64() + s.rho_hi.as_f64());
        let (x, y) = to_px(mid, s.phi_max.as_f64());
        for dx in 0..2usize {
            for dy in 0..2usize {
                img.set(
                    (x + dx).min(w - 1),
                    (y + dy).min(h - 1),
                    [200, 30, 30],
                );
            }
        }
    }
    img.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn euclid_model() -> SystemModel<f64> {
        SystemModel::custom_map(
            "plane",
            2,
            Arc::new(|x: &[f64], out: &mut [f64]| out.copy_from_slice(x)),
            Arc::new(|_x: &[f64], j: &mut crate::linalg::Mat<f64>| {
                j[(0, 0)] = 1.0;
                j[(0, 1)] = 0.0;
                j[(1, 0)] = 0.0;
                j[(1, 1)] = 1.0;
            }),
        )
    }

    fn sample(i: usize, x: f64, u: [f64; 2]) -> TangentFieldSample<f64> {
        TangentFieldSample {
            index: i,
            state: vec![x, 0.0],
            u: u.to_vec(),
            w: u.to_vec(),
        }
    }

    fn line_samples<F: Fn(usize, f64) -> [f64; 2]>(n: usize, f: F) -> Vec<TangentFieldSample<f64>> {
        (0..n)
            .map(|i| {
                let x = i as f64 / n as f64;
                sample(i + 1, x, f(i, x))
            })
            .collect()
    }

    #[test]
    fn constant_field_gives_zero_angles_and_continuous() {
        let m = euclid_model();
        let samples = line_samples(400, |_, _| [1.0, 0.0]);
        let cloud = build_cloud(&m, &samples, FieldTag::Ess, 200_000, 4).unwrap();
        assert!(cloud.max_phi() < 1e-12);
        let v = classify_cloud(&cloud, 64, 0.3, default_rho_limit(&cloud));
        assert_eq!(v.class, CloudClass::Continuous);
    }

    #[test]
    fn antipodal_alternating_field_is_nonorientable_candidate() {
        let m = euclid_model();
        let samples = line_samples(400, |i, _| if i % 2 == 0 { [1.0, 0.0] } else { [-1.0, 0.0] });
        let cloud = build_cloud(&m, &samples, FieldTag::Ess, 200_000, 4).unwrap();
        for &(_, phi) in &cloud.pairs {
            assert!(phi < 1e-9 || phi > std::f64::consts::PI - 1e-9);
        }
        let v = classify_cloud(&cloud, 64, 0.3, default_rho_limit(&cloud));
        assert_eq!(v.class, CloudClass::NonorientableCandidate);
    }

    #[test]
    fn step_discontinuity_is_detected() {
        let m = euclid_model();
        // Field jumps by 1 rad across x = 0.5003 (between grid points).
        let samples = line_samples(400, |_, x| {
            if x < 0.5003 {
                [1.0, 0.0]
            } else {
                [1.0f64.cos(), 1.0f64.sin()]
            }
        });
        let cloud = build_cloud(&m, &samples, FieldTag::Ess, 200_000, 4).unwrap();
        let v = classify_cloud(&cloud, 64, 0.3, default_rho_limit(&cloud));
        assert_eq!(v.class, CloudClass::Discontinuous);
    }

    #[test]
    fn smooth_rotating_field_is_continuous() {
        let m = euclid_model();
        // u rotates by 2 rad total across the segment — Lipschitz, so φ ≈ 2ρ.
        let samples = line_samples(500, |_, x| [(2.0 * x).cos(), (2.0 * x).sin()]);
        let cloud = build_cloud(&m, &samples, FieldTag::Ess, 200_000, 9).unwrap();
        let v = classify_cloud(&cloud, 64, 0.3, default_rho_limit(&cloud));
        assert_eq!(v.class, CloudClass::Continuous);
    }

    #[test]
    fn cloud_is_deterministic_and_thread_count_independent() {
        let m = euclid_model();
        let samples = line_samples(2000, |_, x| [x.cos(), x.sin()]);
        let budget = 150_000; // forces the sampling path (2000·1999/2 > budget)
        let a = build_cloud(&m, &samples, FieldTag::Ess, budget, 77).unwrap();
        let b = build_cloud(&m, &samples, FieldTag::Ess, budget, 77).unwrap();
        assert_eq!(a.pairs, b.pairs);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| build_cloud(&m, &samples, FieldTag::Ess, budget, 77).unwrap());
        assert_eq!(a.pairs, c.pairs);
        let d = build_cloud(&m, &samples, FieldTag::Ess, budget, 78).unwrap();
        assert_ne!(a.pairs, d.pairs);
    }

    #[test]
    fn pair_symmetry_and_no_self_pairs() {
        let m = euclid_model();
        let samples = line_samples(50, |_, x| [x.cos(), x.sin()]);
        // Full enumeration path: every unordered pair appears exactly once.
        let cloud = build_cloud(&m, &samples, FieldTag::Ess, 10_000, 4).unwrap();
        assert_eq!(cloud.pairs.len(), 50 * 49 / 2);
        // ρ = 0 never appears for distinct line points; angles are symmetric
        // by construction (recompute a few by hand).
        for &(rho, _) in &cloud.pairs {
            assert!(rho > 0.0);
        }
        let a = &samples[3];
        let b = &samples[17];
        let fwd = crate::linalg::angle(&a.u, &b.u);
        let rev = crate::linalg::angle(&b.u, &a.u);
        assert_eq!(fwd, rev);
    }

    #[test]
    fn torus_metric_is_used() {
        let m: SystemModel<f64> = SystemModel::builtin("anosov_linear", &[]).unwrap();
        let s1 = TangentFieldSample {
            index: 1,
            state: vec![0.01, 0.5],
            u: vec![1.0, 0.0],
            w: vec![1.0, 0.0],
        };
        let s2 = TangentFieldSample {
            index: 2,
            state: vec![0.99, 0.5],
            u: vec![1.0, 0.0],
            w: vec![1.0, 0.0],
        };
        let cloud = build_cloud(&m, &[s1, s2], FieldTag::Ess, 100, 1).unwrap();
        assert!((cloud.pairs[0].0 - 0.02).abs() < 1e-12, "wrapped distance");
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let m = euclid_model();
        let samples = line_samples(1, |_, _| [1.0, 0.0]);
        assert!(build_cloud(&m, &samples, FieldTag::Ess, 100, 1).is_err());
    }

    #[test]
    fn level_clustering_finds_bands() {
        let m = euclid_model();
        // Two bands: φ = 0 and φ = 0.8, from a field taking two values on
        // interleaved points.
        let samples = line_samples(300, |i, _| {
            if i % 2 == 0 {
                [1.0, 0.0]
            } else {
                [0.8f64.cos(), 0.8f64.sin()]
            }
        });
        let cloud = build_cloud(&m, &samples, FieldTag::Ess, 100_000, 4).unwrap();
        let clusters = phi_level_clusters(&cloud, 0.05, 0.05);
        assert_eq!(clusters.len(), 2, "{clusters:?}");
        let centers: Vec<f64> = clusters.iter().map(|c| c.0).collect();
        assert!(centers.iter().any(|&c| c.abs() < 1e-6));
        assert!(centers.iter().any(|&c| (c - 0.8).abs() < 1e-6));
        for c in &clusters {
            assert!(c.2 < 1e-9, "band width {}", c.2);
        }
    }

    #[test]
    fn verdict_records_thresholds_and_evidence() {
        let m = euclid_model();
        let samples = line_samples(200, |_, _| [1.0, 0.0]);
        let cloud = build_cloud(&m, &samples, FieldTag::Ncu, 50_000, 4).unwrap();
        let v = classify_cloud(&cloud, 32, 0.25, 0.01);
        assert_eq!(v.thresholds.rho_bins, 32);
        assert_eq!(v.thresholds.phi_gap, 0.25);
        assert_eq!(v.evidence.len(), 32);
        let total: usize = v.evidence.iter().map(|b| b.count).sum();
        assert_eq!(total, cloud.pairs.len());
    }

    #[test]
    fn csv_format() {
        let cloud = ContinuityCloud::<f64> {
            pairs: vec![(0.5, 0.25)],
            field_tag: FieldTag::Ess,
            pair_budget: 10,
            seed: 0,
        };
        let mut buf = Vec::new();
        cloud.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "rho,phi");
        assert!(text.lines().nth(1).unwrap().starts_with("5.0000000000000000e-1,2.5000000000000000e-1"));
    }
}
