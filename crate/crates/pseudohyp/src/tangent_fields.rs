//! Oriented strong-stable fields Ē^ss(x_s) (vectors u_s, grown by the backward
//! variational pass) and center-unstable normal fields N̄^cu(x_s) (vectors w_s,
//! grown by the forward adjoint pass) along a stored trajectory, with
//! convergence-window trimming and the every-second-sample decimation for
//! orientation-flipping maps.

use crate::error::{Error, Result};
use crate::integrate::{
    propagate_adjoint_forward, propagate_map_tangent, propagate_variational_backward,
    IntegratorOptions, MapTangentDirection, Trajectory,
};
use crate::linalg::{angle, dot, norm, normalize};
use crate::scalar::Real;
use crate::systems::{SystemKind, SystemModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One trimmed-window sample: the state x_s with its unit field vectors.
/// `index` is the 1-based sample number within the source trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFieldSample<T> {
    pub index: usize,
    pub state: Vec<T>,
    pub u: Vec<T>,
    pub w: Vec<T>,
}

/// Default trim on each end: max(10⁴ samples, 5% of m).
pub fn default_trim(m: usize) -> usize {
    (m / 20).max(10_000)
}

pub fn random_unit_vector<T: Real, R: Rng>(dim: usize, rng: &mut R) -> Vec<T> {
    loop {
        let mut v: Vec<T> = (0..dim)
            .map(|_| T::lit(rng.gen_range(-1.0..1.0)))
            .collect();
        let n = norm(&v);
        if n > T::lit(1e-3) {
            normalize(&mut v);
            return v;
        }
    }
}

/// Builds u (Ē^ss) and w (N̄^cu) along `traj` from the given unit seeds
/// (u seeded at the last sample, w at the first), trims `m1`/`m2` samples
/// from the ends, and — for orientation-flipping maps — keeps only samples
/// with even 1-based index so the pairing always spans an even number of
/// iterations.
pub fn build_fields_with_seeds<T: Real>(
    model: &SystemModel<T>,
    traj: &Trajectory<T>,
    m1: usize,
    m2: usize,
    u_seed: &[T],
    w_seed: &[T],
    opts: &IntegratorOptions<T>,
) -> Result<Vec<TangentFieldSample<T>>> {
    let m = traj.len();
    if m1 + m2 >= m {
        return Err(Error::NotEnoughData {
            context: "build_fields trim window",
            needed: m1 + m2 + 1,
            got: m,
        });
    }
    let (u_all, w_all) = match model.kind() {
        SystemKind::Flow => (
            propagate_variational_backward(model, traj, u_seed, opts)?,
            propagate_adjoint_forward(model, traj, w_seed, opts)?,
        ),
        SystemKind::Map => (
            propagate_map_tangent(model, traj, MapTangentDirection::BackwardForEss, u_seed)?,
            propagate_map_tangent(model, traj, MapTangentDirection::ForwardAdjointForNcu, w_seed)?,
        ),
    };
    let drop_odd = model.kind() == SystemKind::Map && model.orientation_flipping();
    let mut out = Vec::with_capacity(m - m1 - m2);
    for s in m1..m - m2 {
        let index = s + 1;
        if drop_odd && index % 2 != 0 {
            continue;
        }
        out.push(TangentFieldSample {
            index,
            state: traj.state(s).to_vec(),
            u: u_all[s].clone(),
            w: w_all[s].clone(),
        });
    }
    Ok(out)
}

/// As `build_fields_with_seeds`, drawing both unit seeds from a seeded RNG.
pub fn build_fields<T: Real>(
    model: &SystemModel<T>,
    traj: &Trajectory<T>,
    m1: usize,
    m2: usize,
    rng_seed: u64,
    opts: &IntegratorOptions<T>,
) -> Result<Vec<TangentFieldSample<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let u_seed = random_unit_vector::<T, _>(model.dim(), &mut rng);
    let w_seed = random_unit_vector::<T, _>(model.dim(), &mut rng);
    build_fields_with_seeds(model, traj, m1, m2, &u_seed, &w_seed, opts)
}

/// Builds the oriented unstable-direction field Ē^u by forward variational
/// pushforward of a random unit seed; both `u` and `w` of the emitted samples
/// carry the e_u vector so the continuity machinery can be reused unchanged.
pub fn build_eu_field<T: Real>(
    model: &SystemModel<T>,
    traj: &Trajectory<T>,
    m1: usize,
    m2: usize,
    rng_seed: u64,
    opts: &IntegratorOptions<T>,
) -> Result<Vec<TangentFieldSample<T>>> {
    let m = traj.len();
    if m1 + m2 >= m {
        return Err(Error::NotEnoughData {
            context: "build_eu_field trim window",
            needed: m1 + m2 + 1,
            got: m,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let seed = random_unit_vector::<T, _>(model.dim(), &mut rng);
    let v_all = match model.kind() {
        SystemKind::Flow => {
            crate::integrate::propagate_variational_forward(model, traj, &seed, opts)?
        }
        SystemKind::Map => {
            crate::integrate::propagate_map_tangent_pushforward(model, traj, &seed)?
        }
    };
    let drop_odd = model.kind() == SystemKind::Map && model.orientation_flipping();
    let mut out = Vec::with_capacity(m - m1 - m2);
    for s in m1..m - m2 {
        let index = s + 1;
        if drop_odd && index % 2 != 0 {
            continue;
        }
        out.push(TangentFieldSample {
            index,
            state: traj.state(s).to_vec(),
            u: v_all[s].clone(),
            w: v_all[s].clone(),
        });
    }
    Ok(out)
}

/// Retains every second sample of the list (the 2nd, 4th, … positions),
/// preserving order. Deliberately positional, so repeated application keeps
/// thinning the sequence.
pub fn decimate_orientation<T>(samples: Vec<TangentFieldSample<T>>) -> Vec<TangentFieldSample<T>> {
    samples.into_iter().skip(1).step_by(2).collect()
}

/// Result of the seed-independence check. Angles compare the spanned lines
/// (min(φ, π−φ)): the limit field's orientation depends on the seed's sign,
/// its direction does not.
#[derive(Debug, Clone)]
pub struct SeedConvergence<T> {
    pub max_u_angle: T,
    pub max_w_angle: T,
    /// Seeds excluded as measure-zero outliers (e.g. exactly on an invariant
    /// complement), by position in the seed list.
    pub outliers: Vec<usize>,
}

fn line_angle<T: Real>(a: &[T], b: &[T]) -> T {
    let phi = angle(a, b);
    phi.min(T::PI() - phi)
}

/// Runs the field construction from `n_seeds` random seed pairs and returns
/// the worst line angle between corresponding vectors inside the trimmed
/// window, across the largest mutually-agreeing group of seeds; seeds outside
/// that consensus (a measure-zero event for random seeds, certain for seeds
/// chosen inside an invariant complement) are reported as outliers.
pub fn seed_convergence_check<T: Real>(
    model: &SystemModel<T>,
    traj: &Trajectory<T>,
    m1: usize,
    m2: usize,
    n_seeds: usize,
    rng_seed: u64,
    opts: &IntegratorOptions<T>,
) -> Result<SeedConvergence<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let seeds: Vec<(Vec<T>, Vec<T>)> = (0..n_seeds)
        .map(|_| {
            (
                random_unit_vector::<T, _>(model.dim(), &mut rng),
                random_unit_vector::<T, _>(model.dim(), &mut rng),
            )
        })
        .collect();
    seed_convergence_check_with(model, traj, m1, m2, &seeds, opts)
}

pub fn seed_convergence_check_with<T: Real>(
    model: &SystemModel<T>,
    traj: &Trajectory<T>,
    m1: usize,
    m2: usize,
    seeds: &[(Vec<T>, Vec<T>)],
    opts: &IntegratorOptions<T>,
) -> Result<SeedConvergence<T>> {
    if seeds.len() < 2 {
        return Err(Error::NotEnoughData {
            context: "seed_convergence_check",
            needed: 2,
            got: seeds.len(),
        });
    }
    let runs: Vec<Vec<TangentFieldSample<T>>> = seeds
        .iter()
        .map(|(us, ws)| build_fields_with_seeds(model, traj, m1, m2, us, ws, opts))
        .collect::<Result<_>>()?;

    let k = runs.len();
    let pair_angle = |a: &[TangentFieldSample<T>], b: &[TangentFieldSample<T>]| -> (T, T) {
        let mut mu = T::zero();
        let mut mw = T::zero();
        for (sa, sb) in a.iter().zip(b.iter()) {
            mu = mu.max(line_angle(&sa.u, &sb.u));
            mw = mw.max(line_angle(&sa.w, &sb.w));
        }
        (mu, mw)
    };
    let outlier_tol = T::lit(1e-3);
    // Largest group of seeds that pairwise agree within outlier_tol.
    let mut agree = vec![vec![false; k]; k];
    let mut angles = vec![vec![(T::zero(), T::zero()); k]; k];
    for i in 0..k {
        agree[i][i] = true;
        for j in i + 1..k {
            let (mu, mw) = pair_angle(&runs[i], &runs[j]);
            angles[i][j] = (mu, mw);
            angles[j][i] = (mu, mw);
            let ok = mu < outlier_tol && mw < outlier_tol;
            agree[i][j] = ok;
            agree[j][i] = ok;
        }
    }
    let mut best: Vec<usize> = vec![0];
    for mask in 1u32..(1 << k) {
        let members: Vec<usize> = (0..k).filter(|&i| mask & (1 << i) != 0).collect();
        if members.len() <= best.len() {
            continue;
        }
        let all = members
            .iter()
            .all(|&i| members.iter().all(|&j| agree[i][j]));
        if all {
            best = members;
        }
    }
    let outliers: Vec<usize> = (0..k).filter(|i| !best.contains(i)).collect();
    let mut max_u = T::zero();
    let mut max_w = T::zero();
    for (pos, &i) in best.iter().enumerate() {
        for &j in best[pos + 1..].iter() {
            let (mu, mw) = angles[i][j];
            max_u = max_u.max(mu);
            max_w = max_w.max(mw);
        }
    }
    Ok(SeedConvergence {
        max_u_angle: max_u,
        max_w_angle: max_w,
        outliers,
    })
}

/// CSV dump `s,x...,u...,w...` with 17 significant digits.
pub fn write_fields_csv<T: Real, W: std::io::Write>(
    samples: &[TangentFieldSample<T>],
    dim: usize,
    mut out: W,
) -> Result<()> {
    write!(out, "s")?;
    for j in 1..=dim {
        write!(out, ",x{j}")?;
    }
    for j in 1..=dim {
        write!(out, ",u{j}")?;
    }
    for j in 1..=dim {
        write!(out, ",w{j}")?;
    }
    writeln!(out)?;
    for s in samples {
        write!(out, "{}", s.index)?;
        for v in s.state.iter().chain(s.u.iter()).chain(s.w.iter()) {
            write!(out, ",{:.16e}", v.as_f64())?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Orientation continuity for flow fields: ⟨v_s, v_{s+1}⟩ > 0 along the
/// emitted sequence. Returns the first violating index, if any.
pub fn first_orientation_flip<T: Real>(
    samples: &[TangentFieldSample<T>],
    pick_u: bool,
) -> Option<usize> {
    samples.windows(2).find_map(|pair| {
        let a = if pick_u { &pair[0].u } else { &pair[0].w };
        let b = if pick_u { &pair[1].u } else { &pair[1].w };
        (dot(a, b) <= T::zero()).then_some(pair[1].index)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{integrate_trajectory, iterate_map};
    use crate::linalg::Mat;
    use std::sync::Arc;

    fn diag_flow() -> SystemModel<f64> {
        SystemModel::custom_flow(
            "diag",
            2,
            Arc::new(|x: &[f64], out: &mut [f64]| {
                out[0] = -x[0];
                out[1] = -10.0 * x[1];
            }),
            Arc::new(|_x: &[f64], j: &mut Mat<f64>| {
                j[(0, 0)] = -1.0;
                j[(0, 1)] = 0.0;
                j[(1, 0)] = 0.0;
                j[(1, 1)] = -10.0;
            }),
        )
    }

    #[test]
    fn diag_flow_fields_align_with_strong_axis() {
        let m = diag_flow();
        let opts = IntegratorOptions::default();
        let traj = integrate_trajectory(&m, &[1.0, 1.0], 0.0, 20.0, 0.01, &opts).unwrap();
        let samples = build_fields(&m, &traj, 300, 300, 42, &opts).unwrap();
        assert!(!samples.is_empty());
        let mut sign_u = 0.0f64;
        let mut sign_w = 0.0f64;
        for s in &samples {
            assert!((norm(&s.u) - 1.0).abs() < 1e-12);
            assert!((norm(&s.w) - 1.0).abs() < 1e-12);
            assert!(s.u[0].abs() < 1e-8, "u = {:?}", s.u);
            assert!(s.w[0].abs() < 1e-8);
            // consistent sign along the sequence
            if sign_u == 0.0 {
                sign_u = s.u[1].signum();
                sign_w = s.w[1].signum();
            }
            assert_eq!(s.u[1].signum(), sign_u);
            assert_eq!(s.w[1].signum(), sign_w);
        }
        assert!(first_orientation_flip(&samples, true).is_none());
        assert!(first_orientation_flip(&samples, false).is_none());
    }

    #[test]
    fn trim_window_is_respected() {
        let m = diag_flow();
        let opts = IntegratorOptions::default();
        let traj = integrate_trajectory(&m, &[1.0, 1.0], 0.0, 5.0, 0.01, &opts).unwrap();
        let mtot = traj.len();
        let samples = build_fields(&m, &traj, 100, 50, 7, &opts).unwrap();
        assert_eq!(samples.len(), mtot - 150);
        assert_eq!(samples.first().unwrap().index, 101);
        assert_eq!(samples.last().unwrap().index, mtot - 50);
        assert!(build_fields(&m, &traj, 300, 300, 7, &opts).is_err());
    }

    #[test]
    fn decimation_is_positional() {
        let mk = |i: usize| TangentFieldSample {
            index: i,
            state: vec![0.0],
            u: vec![1.0],
            w: vec![1.0],
        };
        let ten: Vec<_> = (1..=10).map(mk).collect();
        let once = decimate_orientation(ten);
        assert_eq!(once.iter().map(|s| s.index).collect::<Vec<_>>(), vec![2, 4, 6, 8, 10]);
        let twice = decimate_orientation(once);
        assert_eq!(twice.iter().map(|s| s.index).collect::<Vec<_>>(), vec![4, 8]);
        assert!(decimate_orientation::<f64>(Vec::new()).is_empty());
    }

    #[test]
    fn henon_fields_keep_even_indices_only() {
        let m: SystemModel<f64> = SystemModel::builtin("henon2d", &[]).unwrap();
        let opts = IntegratorOptions::default();
        let traj = iterate_map(&m, &[0.0, 0.0], 500, 400, &opts).unwrap();
        let samples = build_fields(&m, &traj, 50, 50, 3, &opts).unwrap();
        assert!(!samples.is_empty());
        for s in &samples {
            assert_eq!(s.index % 2, 0, "index {} is odd", s.index);
            assert!(s.index > 50 && s.index <= 350);
        }
        // Non-flipping map keeps all indices.
        let a: SystemModel<f64> = SystemModel::builtin("anosov_linear", &[]).unwrap();
        let traj = iterate_map(&a, &[0.1, 0.2], 0, 200, &opts).unwrap();
        let samples = build_fields(&a, &traj, 20, 20, 3, &opts).unwrap();
        assert!(samples.iter().any(|s| s.index % 2 == 1));
    }

    #[test]
    fn seed_independence_on_diag_flow() {
        let m = diag_flow();
        let opts = IntegratorOptions::default();
        let traj = integrate_trajectory(&m, &[1.0, 1.0], 0.0, 20.0, 0.01, &opts).unwrap();
        let conv = seed_convergence_check(&m, &traj, 300, 300, 3, 11, &opts).unwrap();
        assert!(conv.outliers.is_empty());
        // The agreement floor is set by integrator noise in the per-interval
        // re-integration, not by the e⁻⁹ᵗ contraction, so the bound is loose.
        assert!(conv.max_u_angle < 1e-6, "max u angle {}", conv.max_u_angle);
        assert!(conv.max_w_angle < 1e-6, "max w angle {}", conv.max_w_angle);
    }

    #[test]
    fn adversarial_seed_is_flagged_as_outlier() {
        let m = diag_flow();
        let opts = IntegratorOptions::default();
        let traj = integrate_trajectory(&m, &[1.0, 1.0], 0.0, 20.0, 0.01, &opts).unwrap();
        // e₁ spans the invariant complement of the strong-stable axis: the
        // backward pass never leaves it.
        let seeds = vec![
            (vec![0.6, 0.8], vec![0.6, 0.8]),
            (vec![-0.8, 0.6], vec![-0.8, 0.6]),
            (vec![1.0, 0.0], vec![0.3, 0.953939201416946]),
        ];
        let conv = seed_convergence_check_with(&m, &traj, 300, 300, &seeds, &opts).unwrap();
        assert_eq!(conv.outliers, vec![2]);
        assert!(conv.max_u_angle < 1e-6);
    }

    #[test]
    fn anosov_fields_are_constant() {
        let m: SystemModel<f64> = SystemModel::builtin("anosov_linear", &[]).unwrap();
        let opts = IntegratorOptions::default();
        let traj = iterate_map(&m, &[0.1, 0.2], 0, 300, &opts).unwrap();
        let samples = build_fields(&m, &traj, 40, 40, 9, &opts).unwrap();
        let u0 = samples[0].u.clone();
        let w0 = samples[0].w.clone();
        for s in &samples {
            assert!(line_angle(&s.u, &u0) < 1e-9);
            assert!(line_angle(&s.w, &w0) < 1e-9);
        }
        // The u field is the contracting eigendirection.
        let s5 = 5.0f64.sqrt();
        let mut v_ss = vec![1.0, -(1.0 + s5) / 2.0];
        normalize(&mut v_ss);
        assert!(line_angle(&u0, &v_ss) < 1e-9);
    }

    #[test]
    fn csv_round_shape() {
        let m = diag_flow();
        let opts = IntegratorOptions::default();
        let traj = integrate_trajectory(&m, &[1.0, 1.0], 0.0, 2.0, 0.01, &opts).unwrap();
        let samples = build_fields(&m, &traj, 10, 10, 1, &opts).unwrap();
        let mut buf = Vec::new();
        write_fields_csv(&samples, 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "s,x1,x2,u1,u2,w1,w2");
        assert_eq!(lines.count(), samples.len());
    }
}
