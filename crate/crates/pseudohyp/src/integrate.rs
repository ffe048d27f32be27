//! Adaptive Dormand–Prince 5(4) integration with dense output, fixed-step RK4
//! cross-checking, trajectory sampling, exact map iteration, and the
//! variational / adjoint tangent propagation passes.

use crate::error::{Error, Result};
use crate::linalg::{norm, normalize, Lu, Mat};
use crate::scalar::Real;
use crate::systems::{SystemKind, SystemModel};

/// Integrator tolerances and guards.
#[derive(Debug, Clone)]
pub struct IntegratorOptions<T> {
    pub rtol: T,
    pub atol: T,
    /// Declare divergence when the state norm exceeds this bound.
    pub escape_bound: T,
    /// Check the escape bound only on the first `escape_dim` components
    /// (used by augmented tangent systems to guard the base state only).
    pub escape_dim: Option<usize>,
    pub max_steps: u64,
}

impl<T: Real> Default for IntegratorOptions<T> {
    fn default() -> Self {
        IntegratorOptions {
            rtol: T::lit(1e-10),
            atol: T::lit(1e-12),
            escape_bound: T::lit(1e4),
            escape_dim: None,
            max_steps: u64::MAX,
        }
    }
}

impl<T: Real> IntegratorOptions<T> {
    pub fn with_tol(rtol: f64, atol: f64) -> Self {
        IntegratorOptions {
            rtol: T::lit(rtol),
            atol: T::lit(atol),
            ..Self::default()
        }
    }
}

/// One accepted adaptive step, with the order-5 interpolant over it.
pub struct DenseStep<'a, T> {
    pub t_old: T,
    pub t_new: T,
    pub x_old: &'a [T],
    pub x_new: &'a [T],
    rcont: &'a [Vec<T>; 5],
}

impl<T: Real> DenseStep<'_, T> {
    /// Evaluates the interpolant at `t` within [t_old, t_new].
    pub fn eval(&self, t: T, out: &mut [T]) {
        let h = self.t_new - self.t_old;
        let theta = (t - self.t_old) / h;
        let theta1 = T::one() - theta;
        let [r1, r2, r3, r4, r5] = self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
    }
}

/// Whether to keep integrating after a step callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepControl {
    Continue,
    Stop,
}

// Dormand–Prince 5(4) tableau (FSAL), with the order-5 dense-output weights.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const A7: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

struct Tableau<T> {
    c: [T; 7],
    a: [Vec<T>; 6],
    e: [T; 7],
    d: [T; 7],
}

impl<T: Real> Tableau<T> {
    fn new() -> Self {
        let lift = |xs: &[f64]| xs.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let arr7 = |xs: &[f64; 7]| {
            let mut out = [T::zero(); 7];
            for (o, &x) in out.iter_mut().zip(xs.iter()) {
                *o = T::lit(x);
            }
            out
        };
        Tableau {
            c: arr7(&C),
            a: [lift(&A2), lift(&A3), lift(&A4), lift(&A5), lift(&A6), lift(&A7)],
            e: arr7(&E),
            d: arr7(&D),
        }
    }
}

/// Core adaptive driver. Integrates `rhs` from (t0, x0) to t1 (t1 < t0 runs
/// backward), invoking `on_step` with a dense interpolant after every accepted
/// step. Returns the state at t1 (or at the stopping step's endpoint).
pub fn integrate_with<T, F, C2>(
    mut rhs: F,
    x0: &[T],
    t0: T,
    t1: T,
    opts: &IntegratorOptions<T>,
    mut on_step: C2,
) -> Result<Vec<T>>
where
    T: Real,
    F: FnMut(T, &[T], &mut [T]),
    C2: FnMut(&DenseStep<T>) -> StepControl,
{
    let n = x0.len();
    let tab = Tableau::<T>::new();
    let dir = if t1 >= t0 { T::one() } else { -T::one() };
    let span = (t1 - t0).abs();
    if span == T::zero() {
        return Ok(x0.to_vec());
    }

    let mut x = x0.to_vec();
    let mut t = t0;
    let mut k: [Vec<T>; 7] = std::array::from_fn(|_| vec![T::zero(); n]);
    let mut x_stage = vec![T::zero(); n];
    let mut x_new = vec![T::zero(); n];
    let mut rcont: [Vec<T>; 5] = std::array::from_fn(|_| vec![T::zero(); n]);

    rhs(t, &x, &mut k[0]);
    let mut h = dir * initial_step(&mut rhs, &x, t, dir, &k[0], opts);
    let mut fsal_valid = true;
    let mut steps: u64 = 0;

    let safety = T::lit(0.9);
    let fac_min = T::lit(0.2);
    let fac_max = T::lit(10.0);
    let order_inv = T::lit(0.2);

    loop {
        if (t - t1) * dir >= T::zero() {
            return Ok(x);
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StepSizeUnderflow {
                t: t.as_f64(),
                h: h.as_f64(),
            });
        }
        // Don't overshoot t1.
        if (t + h - t1) * dir > T::zero() {
            h = t1 - t;
        }
        let h_floor = T::lit(4.0) * T::epsilon() * t.abs().max(T::one());
        if h.abs() < h_floor {
            return Err(Error::StepSizeUnderflow {
                t: t.as_f64(),
                h: h.as_f64(),
            });
        }
        if !fsal_valid {
            rhs(t, &x, &mut k[0]);
            fsal_valid = true;
        }

        // Stages 2..7.
        for stage in 1..7 {
            let a_row = &tab.a[stage - 1];
            for i in 0..n {
                let mut acc = T::zero();
                for (j, &aij) in a_row.iter().enumerate() {
                    acc += aij * k[j][i];
                }
                x_stage[i] = x[i] + h * acc;
            }
            let t_stage = t + tab.c[stage] * h;
            if stage == 6 {
                // Stage 7 is evaluated at x_new (A7 row == order-5 weights).
                x_new.copy_from_slice(&x_stage);
            }
            let (head, tail) = k.split_at_mut(stage);
            let _ = head;
            rhs(t_stage, &x_stage, &mut tail[0]);
        }

        // Weighted RMS error estimate.
        let mut err_sq = T::zero();
        for i in 0..n {
            let mut e_acc = T::zero();
            for j in 0..7 {
                e_acc += tab.e[j] * k[j][i];
            }
            let sk = opts.atol + opts.rtol * x[i].abs().max(x_new[i].abs());
            let r = h * e_acc / sk;
            err_sq += r * r;
        }
        let err = (err_sq / T::lit(n as f64)).sqrt();

        if err <= T::one() {
            // Accept: build the dense interpolant, then advance.
            let t_new = t + h;
            for i in 0..n {
                let dx = x_new[i] - x[i];
                let mut dsum = T::zero();
                for j in 0..7 {
                    dsum += tab.d[j] * k[j][i];
                }
                rcont[0][i] = x[i];
                rcont[1][i] = dx;
                rcont[2][i] = h * k[0][i] - dx;
                rcont[3][i] = dx - h * k[6][i] - rcont[2][i];
                rcont[4][i] = h * dsum;
            }

            let esc_dim = opts.escape_dim.unwrap_or(n).min(n);
            let base_norm = norm(&x_new[..esc_dim]);
            if !base_norm.is_finite() {
                return Err(Error::NonFiniteState { t: t_new.as_f64() });
            }
            if base_norm > opts.escape_bound {
                return Err(Error::Escape {
                    t: t_new.as_f64(),
                    norm: base_norm.as_f64(),
                    bound: opts.escape_bound.as_f64(),
                });
            }

            let step = DenseStep {
                t_old: t,
                t_new,
                x_old: &x,
                x_new: &x_new,
                rcont: &rcont,
            };
            let control = on_step(&step);

            std::mem::swap(&mut x, &mut x_new);
            t = t_new;
            k.swap(0, 6); // FSAL: k7 at x_new is k1 of the next step.

            if control == StepControl::Stop {
                return Ok(x);
            }
            let fac = (safety * err.powf(-order_inv)).max(fac_min).min(fac_max);
            h *= fac;
        } else {
            let fac = (safety * err.powf(-order_inv)).max(fac_min);
            h *= fac;
            // k[0] still belongs to (t, x); no FSAL invalidation on rejection.
        }
    }
}

/// Hairer-style initial step-size guess.
fn initial_step<T, F>(rhs: &mut F, x0: &[T], t0: T, dir: T, f0: &[T], opts: &IntegratorOptions<T>) -> T
where
    T: Real,
    F: FnMut(T, &[T], &mut [T]),
{
    let n = x0.len();
    let weight = |v: &[T], reference: &[T]| -> T {
        let mut acc = T::zero();
        for i in 0..n {
            let sk = opts.atol + opts.rtol * reference[i].abs();
            let r = v[i] / sk;
            acc += r * r;
        }
        (acc / T::lit(n as f64)).sqrt()
    };
    let d0 = weight(x0, x0);
    let d1 = weight(f0, x0);
    let h0 = if d0 < T::lit(1e-5) || d1 < T::lit(1e-5) {
        T::lit(1e-6)
    } else {
        T::lit(0.01) * d0 / d1
    };
    let mut x1 = vec![T::zero(); n];
    for i in 0..n {
        x1[i] = x0[i] + dir * h0 * f0[i];
    }
    let mut f1 = vec![T::zero(); n];
    rhs(t0 + dir * h0, &x1, &mut f1);
    let mut df = vec![T::zero(); n];
    for i in 0..n {
        df[i] = f1[i] - f0[i];
    }
    let d2 = weight(&df, x0) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= T::lit(1e-15) {
        (h0 * T::lit(1e-3)).max(T::lit(1e-6))
    } else {
        (T::lit(0.01) / dm).powf(T::lit(0.2))
    };
    (T::lit(100.0) * h0).min(h1)
}

/// Integrates the flow from x0 over [t0, t1] and returns the final state.
pub fn integrate_adaptive<T: Real>(
    model: &SystemModel<T>,
    x0: &[T],
    t0: T,
    t1: T,
    opts: &IntegratorOptions<T>,
) -> Result<Vec<T>> {
    debug_assert_eq!(model.kind(), SystemKind::Flow);
    integrate_with(
        |_t, x, out| model.eval(x, out),
        x0,
        t0,
        t1,
        opts,
        |_| StepControl::Continue,
    )
}

/// Classical fixed-step RK4, offered for cross-checking the adaptive result.
pub fn rk4_integrate<T: Real>(
    model: &SystemModel<T>,
    x0: &[T],
    t0: T,
    t1: T,
    n_steps: usize,
) -> Vec<T> {
    let n = x0.len();
    let h = (t1 - t0) / T::lit(n_steps as f64);
    let half = T::lit(0.5);
    let sixth = T::lit(1.0 / 6.0);
    let two = T::lit(2.0);
    let mut x = x0.to_vec();
    let mut k1 = vec![T::zero(); n];
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    for _ in 0..n_steps {
        model.eval(&x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + half * h * k1[i];
        }
        model.eval(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + half * h * k2[i];
        }
        model.eval(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        model.eval(&tmp, &mut k4);
        for i in 0..n {
            x[i] += h * sixth * (k1[i] + two * (k2[i] + k3[i]) + k4[i]);
        }
    }
    x
}

/// Time-stamped state sequence with uniform sampling, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    dim: usize,
    len: usize,
    /// First sample time (0 for flows after the transient; 1 for maps).
    pub t_start: T,
    pub sample_dt: T,
    /// Transient discarded before the first sample (time units or iterations).
    pub transient_discarded: T,
    data: Vec<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(dim: usize, t_start: T, sample_dt: T, transient_discarded: T) -> Self {
        Trajectory {
            dim,
            len: 0,
            t_start,
            sample_dt,
            transient_discarded,
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, state: &[T]) {
        debug_assert_eq!(state.len(), self.dim);
        self.data.extend_from_slice(state);
        self.len += 1;
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn state(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn time(&self, i: usize) -> T {
        self.t_start + T::lit(i as f64) * self.sample_dt
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn from_flat(dim: usize, t_start: T, sample_dt: T, transient: T, data: Vec<T>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len(),
            });
        }
        let len = data.len() / dim;
        Ok(Trajectory {
            dim,
            len,
            t_start,
            sample_dt,
            transient_discarded: transient,
            data,
        })
    }

    /// CSV dump with header `t,x1,...,xn`, 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t")?;
        for j in 1..=self.dim {
            write!(w, ",x{j}")?;
        }
        writeln!(w)?;
        for i in 0..self.len {
            write!(w, "{:.16e}", self.time(i).as_f64())?;
            for v in self.state(i) {
                write!(w, ",{:.16e}", v.as_f64())?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Integrates a flow, discards the transient, and records states on the
/// uniform sampling grid via dense output.
pub fn integrate_trajectory<T: Real>(
    model: &SystemModel<T>,
    x0: &[T],
    transient: T,
    span: T,
    sample_dt: T,
    opts: &IntegratorOptions<T>,
) -> Result<Trajectory<T>> {
    debug_assert_eq!(model.kind(), SystemKind::Flow);
    if sample_dt <= T::zero() || span <= T::zero() {
        return Err(Error::InvalidArgument(
            "span and sample_dt must be positive".into(),
        ));
    }
    let x_start = if transient > T::zero() {
        integrate_adaptive(model, x0, T::zero(), transient, opts)?
    } else {
        x0.to_vec()
    };

    let n = model.dim();
    let m_last = (span / sample_dt).as_f64().floor() as usize;
    let mut traj = Trajectory::new(n, T::zero(), sample_dt, transient);
    traj.push(&x_start);
    let mut next_idx: usize = 1;
    let mut sample = vec![T::zero(); n];
    integrate_with(
        |_t, x, out| model.eval(x, out),
        &x_start,
        T::zero(),
        span,
        opts,
        |step| {
            while next_idx <= m_last {
                let ts = T::lit(next_idx as f64) * sample_dt;
                if ts > step.t_new {
                    break;
                }
                step.eval(ts, &mut sample);
                traj.push(&sample);
                next_idx += 1;
            }
            StepControl::Continue
        },
    )?;
    Ok(traj)
}

/// Iterates a map, discarding `transient` iterations and recording `count`
/// states x_1..x_m (times are the integers 1..m).
pub fn iterate_map<T: Real>(
    model: &SystemModel<T>,
    x0: &[T],
    transient: usize,
    count: usize,
    opts: &IntegratorOptions<T>,
) -> Result<Trajectory<T>> {
    debug_assert_eq!(model.kind(), SystemKind::Map);
    if count == 0 {
        return Err(Error::InvalidArgument("count must be ≥ 1".into()));
    }
    let n = model.dim();
    let mut x = x0.to_vec();
    let mut next = vec![T::zero(); n];
    let step = |x: &mut Vec<T>, next: &mut Vec<T>, k: usize| -> Result<()> {
        model.eval(x, next);
        std::mem::swap(x, next);
        let nrm = norm(x);
        if !nrm.is_finite() {
            return Err(Error::NonFiniteState { t: k as f64 });
        }
        if nrm > opts.escape_bound {
            return Err(Error::Escape {
                t: k as f64,
                norm: nrm.as_f64(),
                bound: opts.escape_bound.as_f64(),
            });
        }
        Ok(())
    };
    for k in 0..transient {
        step(&mut x, &mut next, k)?;
    }
    let mut traj = Trajectory::new(n, T::one(), T::one(), T::lit(transient as f64));
    traj.push(&x);
    for k in 1..count {
        step(&mut x, &mut next, transient + k)?;
        traj.push(&x);
    }
    Ok(traj)
}

/// RHS of the variational system: base flow plus `k` tangent columns
/// transported by U̇ = DF(x)·U (`adjoint` = false) or Ẇ = −DF(x)ᵀ·W (true).
/// Augmented layout: [x | v₁ | v₂ | …].
pub fn tangent_rhs<T: Real>(
    model: &SystemModel<T>,
    k: usize,
    adjoint: bool,
) -> impl FnMut(T, &[T], &mut [T]) + '_ {
    let n = model.dim();
    let mut jac = Mat::zeros(n, n);
    move |_t, y, out| {
        let x = &y[..n];
        model.eval(x, &mut out[..n]);
        model.jacobian(x, &mut jac);
        for c in 0..k {
            let v = &y[n * (c + 1)..n * (c + 2)];
            let off = n * (c + 1);
            for i in 0..n {
                let mut acc = T::zero();
                if adjoint {
                    for j in 0..n {
                        acc -= jac[(j, i)] * v[j];
                    }
                } else {
                    for j in 0..n {
                        acc += jac[(i, j)] * v[j];
                    }
                }
                out[off + i] = acc;
            }
        }
    }
}

fn interval_opts<T: Real>(opts: &IntegratorOptions<T>, n: usize) -> IntegratorOptions<T> {
    IntegratorOptions {
        escape_dim: Some(n),
        ..opts.clone()
    }
}

/// Backward variational pass (flows): starting from a unit seed at the last
/// sample, transports by U̇ = DF(x)U backward one sampling interval at a
/// time, re-integrating the base trajectory backward from each STORED sample
/// to suppress the instability of x in reverse time; normalizes per sample.
pub fn propagate_variational_backward<T: Real>(
    model: &SystemModel<T>,
    traj: &Trajectory<T>,
    u_m: &[T],
    opts: &IntegratorOptions<T>,
) -> Result<Vec<Vec<T>>> {
    debug_assert_eq!(model.kind(), SystemKind::Flow);
    let n = model.dim();
    let m = traj.len();
    if m < 2 {
        return Err(Error::NotEnoughData {
            context: "propagate_variational_backward",
            needed: 2,
            got: m,
        });
    }
    let iopts = interval_opts(opts, n);
    let mut out = vec![vec![T::zero(); n]; m];
    let mut u = u_m.to_vec();
    normalize(&mut u);
    out[m - 1].copy_from_slice(&u);
    let mut aug = vec![T::zero(); 2 * n];
    for s in (1..m).rev() {
        aug[..n].copy_from_slice(traj.state(s));
        aug[n..].copy_from_slice(&u);
        let end = integrate_with(
            tangent_rhs(model, 1, false),
            &aug,
            traj.time(s),
            traj.time(s - 1),
            &iopts,
            |_| StepControl::Continue,
        )?;
        u.copy_from_slice(&end[n..]);
        let nrm = normalize(&mut u);
        if !(nrm.is_finite() && nrm > T::zero()) {
            return Err(Error::NonFiniteState {
                t: traj.time(s - 1).as_f64(),
            });
        }
        out[s - 1].copy_from_slice(&u);
    }
    Ok(out)
}

/// Forward adjoint pass (flows): transports a unit seed from the first sample
/// by Ẇ = −DF(x)ᵀW across each sampling interval, normalizing at samples.
pub fn propagate_adjoint_forward<T: Real>(
    model: &SystemModel<T>,
    traj: &Trajectory<T>,
    w_0: &[T],
    opts: &IntegratorOptions<T>,
) -> Result<Vec<Vec<T>>> {
    debug_assert_eq!(model.kind(), SystemKind::Flow);
    let n = model.dim();
    let m = traj.len();
    if m < 2 {
        return Err(Error::NotEnoughData {
            context: "propagate_adjoint_forward",
            needed: 2,
            got: m,
        });
    }
    let iopts = interval_opts(opts, n);
    let mut out = vec![vec![T::zero(); n]; m];
    let mut w = w_0.to_vec();
    normalize(&mut w);
    out[0].copy_from_slice(&w);
    let mut aug = vec![T::zero(); 2 * n];
    for s in 0..m - 1 {
        aug[..n].copy_from_slice(traj.state(s));
        aug[n..].copy_from_slice(&w);
        let end = integrate_with(
            tangent_rhs(model, 1, true),
            &aug,
            traj.time(s),
            traj.time(s + 1),
            &iopts,
            |_| StepControl::Continue,
        )?;
        w.copy_from_slice(&end[n..]);
        let nrm = normalize(&mut w);
        if !(nrm.is_finite() && nrm > T::zero()) {
            return Err(Error::NonFiniteState {
                t: traj.time(s + 1).as_f64(),
            });
        }
        out[s + 1].copy_from_slice(&w);
    }
    Ok(out)
}

/// Forward variational pass (flows): transports a unit seed from the first
/// sample by v̇ = DF(x)v, normalizing at samples — converges to the leading
/// (unstable) direction.
pub fn propagate_variational_forward<T: Real>(
    model: &SystemModel<T>,
    traj: &Trajectory<T>,
    v_0: &[T],
    opts: &IntegratorOptions<T>,
) -> Result<Vec<Vec<T>>> {
    debug_assert_eq!(model.kind(), SystemKind::Flow);
    let n = model.dim();
    let m = traj.len();
    if m < 2 {
        return Err(Error::NotEnoughData {
            context: "propagate_variational_forward",
            needed: 2,
            got: m,
        });
    }
    let iopts = interval_opts(opts, n);
    let mut out = vec![vec![T::zero(); n]; m];
    let mut v = v_0.to_vec();
    normalize(&mut v);
    out[0].copy_from_slice(&v);
    let mut aug = vec![T::zero(); 2 * n];
    for s in 0..m - 1 {
        aug[..n].copy_from_slice(traj.state(s));
        aug[n..].copy_from_slice(&v);
        let end = integrate_with(
            tangent_rhs(model, 1, false),
            &aug,
            traj.time(s),
            traj.time(s + 1),
            &iopts,
            |_| StepControl::Continue,
        )?;
        v.copy_from_slice(&end[n..]);
        let nrm = normalize(&mut v);
        if !(nrm.is_finite() && nrm > T::zero()) {
            return Err(Error::NonFiniteState {
                t: traj.time(s + 1).as_f64(),
            });
        }
        out[s + 1].copy_from_slice(&v);
    }
    Ok(out)
}

/// Forward pushforward along a stored map orbit: v_{s+1} = DF(x_s)v_s / ‖·‖.
pub fn propagate_map_tangent_pushforward<T: Real>(
    model: &SystemModel<T>,
    traj: &Trajectory<T>,
    seed: &[T],
) -> Result<Vec<Vec<T>>> {
    debug_assert_eq!(model.kind(), SystemKind::Map);
    let n = model.dim();
    let m = traj.len();
    if m < 2 {
        return Err(Error::NotEnoughData {
            context: "propagate_map_tangent_pushforward",
            needed: 2,
            got: m,
        });
    }
    let mut out = vec![vec![T::zero(); n]; m];
    let mut jac = Mat::zeros(n, n);
    let mut v = seed.to_vec();
    normalize(&mut v);
    out[0].copy_from_slice(&v);
    let mut next = vec![T::zero(); n];
    for s in 0..m - 1 {
        model.jacobian(traj.state(s), &mut jac);
        jac.mul_vec(&v, &mut next);
        v.copy_from_slice(&next);
        let nrm = normalize(&mut v);
        if !(nrm.is_finite() && nrm > T::zero()) {
            return Err(Error::NonFiniteState { t: (s + 1) as f64 });
        }
        out[s + 1].copy_from_slice(&v);
    }
    Ok(out)
}

/// Direction of a map tangent pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapTangentDirection {
    /// u_{s−1} = DF(x_{s−1})⁻¹ u_s / ‖·‖ — converges to the strong-stable field.
    BackwardForEss,
    /// w_{s+1} = (DF(x_s)ᵀ)⁻¹ w_s / ‖·‖ — converges to the center-unstable normal.
    ForwardAdjointForNcu,
}

const MAP_COND_LIMIT: f64 = 1e12;

/// Tangent transport along a stored map orbit by inverse Jacobian pullbacks.
pub fn propagate_map_tangent<T: Real>(
    model: &SystemModel<T>,
    traj: &Trajectory<T>,
    direction: MapTangentDirection,
    seed: &[T],
) -> Result<Vec<Vec<T>>> {
    debug_assert_eq!(model.kind(), SystemKind::Map);
    let n = model.dim();
    let m = traj.len();
    if m < 2 {
        return Err(Error::NotEnoughData {
            context: "propagate_map_tangent",
            needed: 2,
            got: m,
        });
    }
    let mut out = vec![vec![T::zero(); n]; m];
    let mut jac = Mat::zeros(n, n);
    let mut v = seed.to_vec();
    normalize(&mut v);
    let mut next = vec![T::zero(); n];
    match direction {
        MapTangentDirection::BackwardForEss => {
            out[m - 1].copy_from_slice(&v);
            for s in (1..m).rev() {
                model.jacobian(traj.state(s - 1), &mut jac);
                let lu = Lu::new(&jac).map_err(|_| Error::SingularJacobian {
                    index: s - 1,
                    cond: f64::INFINITY,
                })?;
                let cond = lu.pivot_ratio().as_f64();
                if cond > MAP_COND_LIMIT {
                    return Err(Error::SingularJacobian { index: s - 1, cond });
                }
                lu.solve(&v, &mut next);
                v.copy_from_slice(&next);
                normalize(&mut v);
                out[s - 1].copy_from_slice(&v);
            }
        }
        MapTangentDirection::ForwardAdjointForNcu => {
            out[0].copy_from_slice(&v);
            for s in 0..m - 1 {
                model.jacobian(traj.state(s), &mut jac);
                let jt = jac.transpose();
                let lu = Lu::new(&jt).map_err(|_| Error::SingularJacobian {
                    index: s,
                    cond: f64::INFINITY,
                })?;
                let cond = lu.pivot_ratio().as_f64();
                if cond > MAP_COND_LIMIT {
                    return Err(Error::SingularJacobian { index: s, cond });
                }
                lu.solve(&v, &mut next);
                v.copy_from_slice(&next);
                normalize(&mut v);
                out[s + 1].copy_from_slice(&v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn decay_flow() -> SystemModel<f64> {
        SystemModel::custom_flow(
            "decay",
            1,
            Arc::new(|x: &[f64], out: &mut [f64]| out[0] = -x[0]),
            Arc::new(|_x: &[f64], j: &mut Mat<f64>| j[(0, 0)] = -1.0),
        )
    }

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
    fn scalar_linear_flow_hits_exp_minus_one() {
        let m = decay_flow();
        let opts = IntegratorOptions::default();
        let xf = integrate_adaptive(&m, &[1.0], 0.0, 1.0, &opts).unwrap();
        assert!((xf[0] - (-1.0f64).exp()).abs() < 1e-9); // rtol·10
    }

    #[test]
    fn backward_integration_works() {
        let m = decay_flow();
        let opts = IntegratorOptions::default();
        let xf = integrate_adaptive(&m, &[1.0], 0.0, -1.0, &opts).unwrap();
        assert!((xf[0] - 1.0f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn dense_output_matches_endpoints_and_interior() {
        let m = decay_flow();
        let opts = IntegratorOptions::with_tol(1e-10, 1e-12);
        integrate_with(
            |_t, x, out| m.eval(x, out),
            &[1.0],
            0.0,
            2.0,
            &opts,
            |step| {
                let mut v = [0.0];
                step.eval(step.t_old, &mut v);
                assert!((v[0] - step.x_old[0]).abs() < 1e-12);
                step.eval(step.t_new, &mut v);
                assert!((v[0] - step.x_new[0]).abs() < 1e-12);
                let tm = 0.5 * (step.t_old + step.t_new);
                step.eval(tm, &mut v);
                assert!((v[0] - (-tm).exp()).abs() < 1e-9);
                StepControl::Continue
            },
        )
        .unwrap();
    }

    #[test]
    fn escape_is_reported_with_time() {
        let m = SystemModel::custom_flow(
            "blowup",
            1,
            Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x[0]),
            Arc::new(|_x: &[f64], j: &mut Mat<f64>| j[(0, 0)] = 1.0),
        );
        let opts = IntegratorOptions {
            escape_bound: 10.0,
            ..IntegratorOptions::default()
        };
        match integrate_adaptive(&m, &[1.0], 0.0, 10.0, &opts) {
            Err(Error::Escape { t, .. }) => assert!(t > 2.0 && t < 3.0, "escape at t={t}"),
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_sampling_grid_is_uniform() {
        let m = decay_flow();
        let opts = IntegratorOptions::default();
        let traj = integrate_trajectory(&m, &[1.0], 0.5, 1.0, 0.01, &opts).unwrap();
        assert_eq!(traj.len(), 101);
        for i in 0..traj.len() {
            let t = traj.time(i);
            assert!((t - 0.01 * i as f64).abs() < 1e-12);
            let expect = (-0.5f64).exp() * (-t).exp();
            assert!((traj.state(i)[0] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn rk4_cross_checks_dopri5_on_lorenz() {
        let m: SystemModel<f64> = SystemModel::builtin("lorenz3d", &[]).unwrap();
        let opts = IntegratorOptions::default();
        let a = integrate_adaptive(&m, &[1.0, 1.0, 1.0], 0.0, 5.0, &opts).unwrap();
        let b = rk4_integrate(&m, &[1.0, 1.0, 1.0], 0.0, 5.0, 500_000);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-6, "component {i}: {} vs {}", a[i], b[i]);
        }
    }

    #[test]
    fn lorenz3d_stays_bounded() {
        let m: SystemModel<f64> = SystemModel::builtin("lorenz3d", &[]).unwrap();
        let opts = IntegratorOptions::default();
        let traj = integrate_trajectory(&m, &[1.0, 1.0, 1.0], 100.0, 50.0, 0.01, &opts).unwrap();
        for i in 0..traj.len() {
            assert!(norm(traj.state(i)) < 100.0);
        }
    }

    #[test]
    fn lorenz4d_projection_ranges_match() {
        let m: SystemModel<f64> = SystemModel::builtin("lorenz4d", &[]).unwrap();
        let opts = IntegratorOptions::default();
        let traj = integrate_trajectory(&m, &[1.0, 1.0, 1.0, 1.0], 100.0, 100.0, 0.01, &opts).unwrap();
        for i in 0..traj.len() {
            let s = traj.state(i);
            // long-run attractor extents are x ∈ ±34, z ∈ [−34, 72]
            assert!(s[0].abs() < 40.0, "|x| = {}", s[0].abs());
            assert!(s[2] > -40.0 && s[2] < 80.0, "z = {}", s[2]);
        }
    }

    #[test]
    fn map_iteration_examples() {
        let m: SystemModel<f64> = SystemModel::builtin("anosov_linear", &[]).unwrap();
        let opts = IntegratorOptions::default();
        let traj = iterate_map(&m, &[0.1, 0.2], 0, 2, &opts).unwrap();
        assert_relative_eq!(traj.state(1)[0], 0.4, epsilon = 1e-15);
        assert_relative_eq!(traj.state(1)[1], 0.3, epsilon = 1e-15);
        assert_eq!(traj.time(0), 1.0);
        assert_eq!(traj.time(1), 2.0);

        let h: SystemModel<f64> = SystemModel::builtin("henon2d", &[]).unwrap();
        let traj = iterate_map(&h, &[0.0, 0.0], 1000, 2000, &opts).unwrap();
        for i in 0..traj.len() {
            let s = traj.state(i);
            assert!(s[0].abs() < 2.0 && s[1].abs() < 2.0);
        }

        // Fixed point of henon2d: y* = x*, x* = M − b x* − x*² .
        let (b, m_par) = (0.1f64, 1.7f64);
        let x_star = (-(1.0 + b) + ((1.0 + b) * (1.0 + b) + 4.0 * m_par).sqrt()) / 2.0;
        let traj = iterate_map(&h, &[x_star, x_star], 0, 5, &opts).unwrap();
        for i in 0..traj.len() {
            assert_relative_eq!(traj.state(i)[0], x_star, epsilon = 1e-12);
        }
    }

    #[test]
    fn backward_variational_on_diag_flow_finds_strong_stable_axis() {
        let m = diag_flow();
        let opts = IntegratorOptions::default();
        // Base trajectory decays; use samples over 10 time units.
        let traj = integrate_trajectory(&m, &[1.0, 1.0], 0.0, 10.0, 0.01, &opts).unwrap();
        let u = propagate_variational_backward(&m, &traj, &[0.6, 0.8], &opts).unwrap();
        // At the trajectory start (10 time units of backward transport) u ≈ ±e₂.
        let u0 = &u[0];
        assert!(u0[0].abs() < 1e-6, "u0 = {u0:?}");
        assert_relative_eq!(u0[1].abs(), 1.0, epsilon = 1e-9);
        // Invariant axis stays put.
        let u_inv = propagate_variational_backward(&m, &traj, &[1.0, 0.0], &opts).unwrap();
        for s in [0, traj.len() / 2, traj.len() - 1] {
            assert!((u_inv[s][0].abs() - 1.0).abs() < 1e-9);
            assert!(u_inv[s][1].abs() < 1e-9);
        }
    }

    #[test]
    fn adjoint_forward_on_diag_flow_finds_normal() {
        let m = diag_flow();
        let opts = IntegratorOptions::default();
        let traj = integrate_trajectory(&m, &[1.0, 1.0], 0.0, 10.0, 0.01, &opts).unwrap();
        let w = propagate_adjoint_forward(&m, &traj, &[0.6, 0.8], &opts).unwrap();
        let wm = &w[traj.len() - 1];
        // Ẇ = −diag(−1,−10)W grows e^{10t} along e₂ ⇒ w → ±e₂ = N^cu of the e₁ axis.
        assert!(wm[0].abs() < 1e-6);
        assert_relative_eq!(wm[1].abs(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn unit_norm_everywhere() {
        let m = diag_flow();
        let opts = IntegratorOptions::default();
        let traj = integrate_trajectory(&m, &[1.0, 1.0], 0.0, 2.0, 0.01, &opts).unwrap();
        let u = propagate_variational_backward(&m, &traj, &[0.6, 0.8], &opts).unwrap();
        let w = propagate_adjoint_forward(&m, &traj, &[0.6, 0.8], &opts).unwrap();
        for s in 0..traj.len() {
            assert!((norm(&u[s]) - 1.0).abs() < 1e-12);
            assert!((norm(&w[s]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_adjoint_preserves_norm() {
        // A = [[0,1],[−1,0]] ⇒ −Aᵀ = A is skew-symmetric: ‖W(t)‖ constant.
        let rot = SystemModel::custom_flow(
            "rotation",
            2,
            Arc::new(|x: &[f64], out: &mut [f64]| {
                out[0] = x[1];
                out[1] = -x[0];
            }),
            Arc::new(|_x: &[f64], j: &mut Mat<f64>| {
                j[(0, 0)] = 0.0;
                j[(0, 1)] = 1.0;
                j[(1, 0)] = -1.0;
                j[(1, 1)] = 0.0;
            }),
        );
        let opts = IntegratorOptions::default();
        let mut aug = [1.0, 0.0, 0.6, 0.8];
        let end = integrate_with(
            tangent_rhs(&rot, 1, true),
            &aug,
            0.0,
            7.3,
            &opts,
            |_| StepControl::Continue,
        )
        .unwrap();
        aug.copy_from_slice(&end);
        assert_relative_eq!(norm(&aug[2..]), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn one_interval_inner_product_is_conserved() {
        // Simultaneous unrenormalized Eq.(7)/Eq.(8) over one sampling interval.
        let m: SystemModel<f64> = SystemModel::builtin("lorenz4d", &[]).unwrap();
        let opts = IntegratorOptions::default();
        let x0 = integrate_adaptive(&m, &[1.0, 1.0, 1.0, 1.0], 0.0, 50.0, &opts).unwrap();
        let n = 4;
        let mut aug = vec![0.0; 3 * n];
        aug[..n].copy_from_slice(&x0);
        let u0 = [0.5, -0.5, 0.5, -0.5];
        let w0 = [0.5, 0.5, -0.5, -0.5];
        aug[n..2 * n].copy_from_slice(&u0);
        aug[2 * n..].copy_from_slice(&w0);
        let mut jac = Mat::zeros(n, n);
        let rhs = |_t: f64, y: &[f64], out: &mut [f64]| {
            let x = &y[..n];
            m.eval(x, &mut out[..n]);
            m.jacobian(x, &mut jac);
            for i in 0..n {
                let mut au = 0.0;
                let mut atw = 0.0;
                for j in 0..n {
                    au += jac[(i, j)] * y[n + j];
                    atw += jac[(j, i)] * y[2 * n + j];
                }
                out[n + i] = au;
                out[2 * n + i] = -atw;
            }
        };
        let before = dot(&u0, &w0);
        let end = integrate_with(rhs, &aug, 0.0, 0.01, &opts, |_| StepControl::Continue).unwrap();
        let after = dot(&end[n..2 * n], &end[2 * n..]);
        assert!(
            (after - before).abs() < 1e-9,
            "inner product drift {}",
            (after - before).abs()
        );
    }

    #[test]
    fn map_tangent_anosov_converges_to_eigendirections() {
        let m: SystemModel<f64> = SystemModel::builtin("anosov_linear", &[]).unwrap();
        let opts = IntegratorOptions::default();
        let traj = iterate_map(&m, &[0.1, 0.2], 0, 60, &opts).unwrap();
        let u = propagate_map_tangent(&m, &traj, MapTangentDirection::BackwardForEss, &[0.6, 0.8])
            .unwrap();
        // Contracting eigendirection of [[2,1],[1,1]]: (1, −(1+√5)/2)/‖·‖.
        let s5 = 5.0f64.sqrt();
        let mut v_ss = [1.0, -(1.0 + s5) / 2.0];
        normalize(&mut v_ss);
        let got = &u[10]; // 50 backward applications from the seed
        let align = dot(got, &v_ss).abs();
        assert!(1.0 - align < 1e-8, "align = {align}");

        let w = propagate_map_tangent(
            &m,
            &traj,
            MapTangentDirection::ForwardAdjointForNcu,
            &[0.6, 0.8],
        )
        .unwrap();
        // Left eigenvector orthogonal to the expanding direction (1, (√5−1)/2)/‖·‖.
        let mut v_u = [1.0, (s5 - 1.0) / 2.0];
        normalize(&mut v_u);
        let got = &w[50];
        assert!(dot(got, &v_u).abs() < 1e-8, "⟨w, v_u⟩ = {}", dot(got, &v_u));
    }

    #[test]
    fn identity_map_keeps_seed() {
        let id = SystemModel::custom_map(
            "identity",
            2,
            Arc::new(|x: &[f64], out: &mut [f64]| out.copy_from_slice(x)),
            Arc::new(|_x: &[f64], j: &mut Mat<f64>| {
                j[(0, 0)] = 1.0;
                j[(0, 1)] = 0.0;
                j[(1, 0)] = 0.0;
                j[(1, 1)] = 1.0;
            }),
        );
        let opts = IntegratorOptions::default();
        let traj = iterate_map(&id, &[0.3, 0.4], 0, 10, &opts).unwrap();
        let seed = [0.6, 0.8];
        for dir in [
            MapTangentDirection::BackwardForEss,
            MapTangentDirection::ForwardAdjointForNcu,
        ] {
            let vs = propagate_map_tangent(&id, &traj, dir, &seed).unwrap();
            for v in &vs {
                assert_relative_eq!(v[0], 0.6, epsilon = 1e-14);
                assert_relative_eq!(v[1], 0.8, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn map_adjoint_orthogonality_transport() {
        // If ⟨v, w_s⟩ = 0 then ⟨DF(x_s)v, w_{s+1}⟩ = 0.
        let m: SystemModel<f64> = SystemModel::builtin("henon2d", &[]).unwrap();
        let opts = IntegratorOptions::default();
        let traj = iterate_map(&m, &[0.0, 0.0], 500, 50, &opts).unwrap();
        let w = propagate_map_tangent(
            &m,
            &traj,
            MapTangentDirection::ForwardAdjointForNcu,
            &[0.6, 0.8],
        )
        .unwrap();
        let mut jac = Mat::zeros(2, 2);
        for s in 0..traj.len() - 1 {
            let v = [-w[s][1], w[s][0]]; // ⊥ w_s
            m.jacobian(traj.state(s), &mut jac);
            let mut dfv = [0.0; 2];
            jac.mul_vec(&v, &mut dfv);
            assert!(
                dot(&dfv, &w[s + 1]).abs() < 1e-10,
                "s={s}: {}",
                dot(&dfv, &w[s + 1])
            );
        }
    }

    #[test]
    fn backward_then_forward_consistency() {
        let m: SystemModel<f64> = SystemModel::builtin("lorenz3d", &[]).unwrap();
        let opts = IntegratorOptions::default();
        let traj = integrate_trajectory(&m, &[1.0, 1.0, 1.0], 100.0, 5.0, 0.01, &opts).unwrap();
        let u = propagate_variational_backward(&m, &traj, &[1.0, 0.0, 0.0], &opts).unwrap();
        let n = 3;
        let iopts = interval_opts(&opts, n);
        for s in [50usize, 200, 400] {
            let mut aug = vec![0.0; 2 * n];
            aug[..n].copy_from_slice(traj.state(s));
            aug[n..].copy_from_slice(&u[s]);
            let end = integrate_with(
                tangent_rhs(&m, 1, false),
                &aug,
                traj.time(s),
                traj.time(s + 1),
                &iopts,
                |_| StepControl::Continue,
            )
            .unwrap();
            let mut fwd = end[n..].to_vec();
            normalize(&mut fwd);
            let align = dot(&fwd, &u[s + 1]).abs();
            assert!(1.0 - align < 1e-6, "s={s}: align {align}");
        }
    }

    #[test]
    fn csv_dump_has_header_and_17_digits() {
        let m = decay_flow();
        let opts = IntegratorOptions::default();
        let traj = integrate_trajectory(&m, &[1.0], 0.0, 0.05, 0.01, &opts).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x1");
        let first = lines.next().unwrap();
        assert!(first.starts_with("0.0000000000000000e0,1.0000000000000000e0"), "{first}");
    }
}
