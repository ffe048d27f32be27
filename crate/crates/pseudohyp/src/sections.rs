//! Poincaré sections: implicit hypersurfaces with box windows, dense-output
//! crossing detection (bisection + Newton polish), n-th-return containment
//! checks, separatrix tracking, stable-manifold boundary grids, and the
//! 4-color section trace.

use crate::error::{Error, Result};
use crate::integrate::{
    integrate_trajectory, integrate_with, IntegratorOptions, StepControl, Trajectory,
};
use crate::linalg::dot;
use crate::scalar::Real;
use crate::systems::{EquilibriumInfo, SystemModel};
use rayon::prelude::*;
use std::sync::Arc;

/// Which window of the section a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Plus,
    Minus,
    Outside,
}

impl Window {
    pub fn as_str(self) -> &'static str {
        match self {
            Window::Plus => "plus",
            Window::Minus => "minus",
            Window::Outside => "outside",
        }
    }
}

/// Per-component box bounds (None = unconstrained coordinate).
#[derive(Debug, Clone)]
pub struct WindowBox<T> {
    pub window: Window,
    pub bounds: Vec<Option<(T, T)>>,
}

impl<T: Real> WindowBox<T> {
    pub fn contains(&self, x: &[T]) -> bool {
        self.bounds.iter().zip(x.iter()).all(|(b, &v)| match b {
            Some((lo, hi)) => v >= *lo && v <= *hi,
            None => true,
        })
    }
}

type ScalarFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
type GradFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;
type DomainFn<T> = Arc<dyn Fn(&[T]) -> bool + Send + Sync>;

/// Implicit section G(x) = 0 with optional domain restriction (sheet
/// selection), a crossing orientation, and labeled window boxes.
///
/// `orientation` is the sign of dG/dt that makes a transversal crossing count
/// for this section; `Both` accepts either sign. Return counting, containment
/// checks and traces all go through it, so a curved section that the flow
/// clips incidentally in the "wrong" direction still yields a clean return
/// sequence.
#[derive(Clone)]
pub struct SectionSpec<T: Real> {
    pub name: String,
    g: ScalarFn<T>,
    grad: GradFn<T>,
    domain: Option<DomainFn<T>>,
    pub orientation: CrossDirection,
    pub windows: Vec<WindowBox<T>>,
}

impl<T: Real> std::fmt::Debug for SectionSpec<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SectionSpec")
            .field("name", &self.name)
            .field("windows", &self.windows.len())
            .finish()
    }
}

impl<T: Real> SectionSpec<T> {
    pub fn custom(
        name: &str,
        g: ScalarFn<T>,
        grad: GradFn<T>,
        domain: Option<DomainFn<T>>,
        windows: Vec<WindowBox<T>>,
    ) -> Self {
        SectionSpec {
            name: name.to_string(),
            g,
            grad,
            domain,
            orientation: CrossDirection::Both,
            windows,
        }
    }

    pub fn with_orientation(mut self, orientation: CrossDirection) -> Self {
        self.orientation = orientation;
        self
    }

    #[inline]
    pub fn g(&self, x: &[T]) -> T {
        (self.g)(x)
    }

    pub fn grad(&self, x: &[T], out: &mut [T]) {
        (self.grad)(x, out)
    }

    pub fn in_domain(&self, x: &[T]) -> bool {
        self.domain.as_ref().map_or(true, |d| d(x))
    }

    pub fn window_label(&self, x: &[T]) -> Window {
        for w in &self.windows {
            if w.contains(x) {
                return w.window;
            }
        }
        Window::Outside
    }

    /// dG/dt along the flow: ⟨∇G(x), F(x)⟩.
    pub fn g_dot(&self, model: &SystemModel<T>, x: &[T]) -> T {
        let n = x.len();
        let mut grad = vec![T::zero(); n];
        let mut f = vec![T::zero(); n];
        (self.grad)(x, &mut grad);
        model.eval(x, &mut f);
        dot(&grad, &f)
    }
}

/// Builds one of the named sections. `lorenz_plane` (G = z − (r−1), windows
/// split by sign(x)) needs parameter `r`; `lorenz4d_sigma` is the curved
/// hypersurface G = 9x² − w² − 550 − z² on the z > 0 sheet with the two
/// (x, y, w) window boxes.
pub fn builtin_section<T: Real>(name: &str, params: &[(String, f64)]) -> Result<SectionSpec<T>> {
    match name {
        "lorenz_plane" => {
            let r = params
                .iter()
                .rev()
                .find(|(k, _)| k == "r")
                .map(|&(_, v)| v)
                .ok_or_else(|| {
                    Error::InvalidArgument("lorenz_plane needs --param r=<value>".into())
                })?;
            let level = T::lit(r - 1.0);
            let inf = T::infinity();
            Ok(SectionSpec::custom(
                "lorenz_plane",
                Arc::new(move |x: &[T]| x[2] - level),
                Arc::new(|x: &[T], out: &mut [T]| {
                    out.iter_mut().for_each(|v| *v = T::zero());
                    let _ = x;
                    out[2] = T::one();
                }),
                None,
                vec![
                    WindowBox {
                        window: Window::Plus,
                        bounds: vec![Some((T::zero(), inf))],
                    },
                    WindowBox {
                        window: Window::Minus,
                        bounds: vec![Some((-inf, T::zero()))],
                    },
                ],
            ))
        }
        "lorenz4d_sigma" => {
            let nine = T::lit(9.0);
            let c550 = T::lit(550.0);
            let two = T::lit(2.0);
            let b = |lo: f64, hi: f64| Some((T::lit(lo), T::lit(hi)));
            Ok(SectionSpec::custom(
                "lorenz4d_sigma",
                Arc::new(move |x: &[T]| nine * x[0] * x[0] - x[3] * x[3] - c550 - x[2] * x[2]),
                Arc::new(move |x: &[T], out: &mut [T]| {
                    out[0] = T::lit(18.0) * x[0];
                    out[1] = T::zero();
                    out[2] = -two * x[2];
                    out[3] = -two * x[3];
                }),
                Some(Arc::new(|x: &[T]| x[2] >= T::zero())),
                vec![
                    WindowBox {
                        window: Window::Plus,
                        bounds: vec![b(10.0, 30.0), b(-20.0, 20.0), None, b(-60.0, -10.0)],
                    },
                    WindowBox {
                        window: Window::Minus,
                        bounds: vec![b(-30.0, -10.0), b(-20.0, 20.0), None, b(-60.0, -10.0)],
                    },
                ],
            )
            // The attractor pierces the window boxes descending through the
            // sheet (dG/dt < 0); ascending clips of the low-z skirt between
            // wing passes are not returns.
            .with_orientation(CrossDirection::Down))
        }
        other => Err(Error::UnknownSystem(format!("section '{other}'"))),
    }
}

/// Required sign of dG/dt at an accepted crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossDirection {
    Up,
    Down,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossingEvent<T> {
    pub t: T,
    pub state: Vec<T>,
    pub window: Window,
    /// |G(x*)| after refinement.
    pub residual: T,
    /// |⟨∇G, F⟩| fell below the transversality threshold: reported, never
    /// counted as a crossing.
    pub grazing: bool,
}

pub const DEFAULT_TIME_BUDGET_PER_RETURN: f64 = 200.0;
pub const CROSSING_RESIDUAL_TOL: f64 = 1e-9;
pub const TRANSVERSALITY_TOL: f64 = 1e-8;
const BISECTION_BRACKET: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CrossingOptions<T> {
    /// Explicit override of the section's own orientation; `Both` defers to it.
    pub direction: CrossDirection,
    /// Count only window-member crossings toward the requested n.
    pub window_only: bool,
    pub time_budget_per_return: T,
    pub integrator: IntegratorOptions<T>,
}

impl<T: Real> Default for CrossingOptions<T> {
    fn default() -> Self {
        CrossingOptions {
            direction: CrossDirection::Both,
            window_only: false,
            time_budget_per_return: T::lit(DEFAULT_TIME_BUDGET_PER_RETURN),
            integrator: IntegratorOptions::default(),
        }
    }
}

fn sign_of<T: Real>(v: T) -> i8 {
    if v > T::zero() {
        1
    } else if v < T::zero() {
        -1
    } else {
        0
    }
}

/// Scans the orbit of `x0` for section crossings until `t_max`, reporting
/// every refined event (grazing ones flagged). A start exactly on the
/// hypersurface is excluded: detection begins once G attains a definite sign.
/// Returns when `stop` says so or the time runs out.
fn scan_with<T: Real, S>(
    model: &SystemModel<T>,
    x0: &[T],
    section: &SectionSpec<T>,
    copts: &CrossingOptions<T>,
    t_max: T,
    mut stop: S,
) -> Result<Vec<CrossingEvent<T>>>
where
    T: Real,
    S: FnMut(&CrossingEvent<T>, usize) -> bool,
{
    let n_dim = model.dim();
    let mut events: Vec<CrossingEvent<T>> = Vec::new();
    let mut counted = 0usize;
    let res_tol = T::lit(CROSSING_RESIDUAL_TOL);
    // A start with |G| below the residual tolerance is "on the section" for
    // exclusion purposes; latching its (numerically meaningless) sign would
    // report the starting point itself as a crossing at t ~ 0.
    let g0 = section.g(x0);
    let mut prev_sign = if g0.abs() < res_tol { 0 } else { sign_of(g0) };
    let mut state_buf = vec![T::zero(); n_dim];
    let want_dir = match copts.direction {
        CrossDirection::Both => section.orientation,
        d => d,
    };
    let trans_tol = T::lit(TRANSVERSALITY_TOL);
    let bracket_tol = T::lit(BISECTION_BRACKET);

    integrate_with(
        |_t, x, out| model.eval(x, out),
        x0,
        T::zero(),
        t_max,
        &copts.integrator,
        |step| {
            // Scan sub-intervals of the accepted step for sign changes.
            const SUBS: usize = 4;
            let h = step.t_new - step.t_old;
            let mut t_a = step.t_old;
            for s in 1..=SUBS {
                let t_b = if s == SUBS {
                    step.t_new
                } else {
                    step.t_old + h * T::lit(s as f64 / SUBS as f64)
                };
                step.eval(t_b, &mut state_buf);
                let g_b = section.g(&state_buf);
                let sign_b = sign_of(g_b);
                if prev_sign == 0 {
                    prev_sign = sign_b;
                    t_a = t_b;
                    continue;
                }
                if sign_b != 0 && sign_b != prev_sign {
                    // Bisection to a 1e-12 time bracket on the interpolant.
                    let (mut lo, mut hi) = (t_a, t_b);
                    let g_at = |t: T, buf: &mut Vec<T>| -> T {
                        step.eval(t, buf);
                        section.g(buf)
                    };
                    let mut g_lo = g_at(lo, &mut state_buf);
                    while hi - lo > bracket_tol {
                        let mid = (lo + hi) * T::lit(0.5);
                        let g_mid = g_at(mid, &mut state_buf);
                        if sign_of(g_mid) == sign_of(g_lo) && g_mid != T::zero() {
                            lo = mid;
                            g_lo = g_mid;
                        } else {
                            hi = mid;
                        }
                    }
                    // Newton polish on G∘x(t), extra iterations while the
                    // residual still exceeds the acceptance tolerance.
                    let mut t_star = (lo + hi) * T::lit(0.5);
                    for _ in 0..5 {
                        step.eval(t_star, &mut state_buf);
                        let g = section.g(&state_buf);
                        if g.abs() < res_tol {
                            break;
                        }
                        let gd = section.g_dot(model, &state_buf);
                        if gd == T::zero() {
                            break;
                        }
                        let t_next = t_star - g / gd;
                        if t_next >= lo - (hi - lo) && t_next <= hi + (hi - lo) {
                            t_star = t_next;
                        } else {
                            break;
                        }
                    }
                    step.eval(t_star, &mut state_buf);
                    let residual = section.g(&state_buf).abs();
                    let g_dot_star = section.g_dot(model, &state_buf);

                    let dir_ok = match want_dir {
                        CrossDirection::Both => true,
                        CrossDirection::Up => g_dot_star > T::zero(),
                        CrossDirection::Down => g_dot_star < T::zero(),
                    };
                    if dir_ok && section.in_domain(&state_buf) {
                        let grazing = g_dot_star.abs() < trans_tol || residual >= res_tol;
                        let window = section.window_label(&state_buf);
                        let ev = CrossingEvent {
                            t: t_star,
                            state: state_buf.clone(),
                            window,
                            residual,
                            grazing,
                        };
                        let counts = !grazing && (!copts.window_only || window != Window::Outside);
                        if counts {
                            counted += 1;
                        }
                        let want_stop = stop(&ev, counted);
                        events.push(ev);
                        if want_stop {
                            prev_sign = sign_b;
                            return StepControl::Stop;
                        }
                    }
                }
                if sign_b != 0 {
                    prev_sign = sign_b;
                }
                t_a = t_b;
            }
            StepControl::Continue
        },
    )?;
    Ok(events)
}

/// Scans for crossings over a fixed horizon; never errors on "too few".
pub fn scan_crossings<T: Real>(
    model: &SystemModel<T>,
    x0: &[T],
    section: &SectionSpec<T>,
    t_max: T,
    copts: &CrossingOptions<T>,
) -> Result<Vec<CrossingEvent<T>>> {
    scan_with(model, x0, section, copts, t_max, |_, _| false)
}

/// Finds crossings until `n` of them count (all refined events are returned,
/// the counted ones interleaved with grazing/out-of-window ones). Errors with
/// `NoCrossing` when the time budget n × per_return expires first.
pub fn find_crossings<T: Real>(
    model: &SystemModel<T>,
    x0: &[T],
    section: &SectionSpec<T>,
    n: usize,
    copts: &CrossingOptions<T>,
) -> Result<Vec<CrossingEvent<T>>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let t_max = copts.time_budget_per_return * T::lit(n as f64);
    let events = scan_with(model, x0, section, copts, t_max, |_, counted| counted >= n)?;
    let counted = events
        .iter()
        .filter(|e| !e.grazing && (!copts.window_only || e.window != Window::Outside))
        .count();
    if counted < n {
        return Err(Error::NoCrossing {
            budget: t_max.as_f64(),
            found: counted,
            wanted: n,
        });
    }
    Ok(events)
}

/// The n-th counted crossing from a list returned by `find_crossings`.
pub fn nth_counted<'a, T: Real>(
    events: &'a [CrossingEvent<T>],
    n: usize,
    window_only: bool,
) -> Option<&'a CrossingEvent<T>> {
    events
        .iter()
        .filter(|e| !e.grazing && (!window_only || e.window != Window::Outside))
        .nth(n - 1)
}

fn linspace<T: Real>(lo: T, hi: T, k: usize) -> Vec<T> {
    if k <= 1 {
        return vec![(lo + hi) * T::lit(0.5)];
    }
    (0..k)
        .map(|i| lo + (hi - lo) * T::lit(i as f64 / (k - 1) as f64))
        .collect()
}

/// Grid points on Σ₊ ∪ Σ₋: (x, y, w) over each window box, z from the
/// quadric. Returns (states, skipped) where skipped counts grid nodes with
/// 9x² − w² − 550 < 0.
pub fn section_grid<T: Real>(section: &SectionSpec<T>, grid: [usize; 3]) -> (Vec<Vec<T>>, usize) {
    let mut points = Vec::new();
    let mut skipped = 0usize;
    let nine = T::lit(9.0);
    let c550 = T::lit(550.0);
    for wbox in &section.windows {
        let b = |i: usize| wbox.bounds[i].expect("boxed coordinate");
        let (xlo, xhi) = b(0);
        let (ylo, yhi) = b(1);
        let (wlo, whi) = b(3);
        for &x in &linspace(xlo, xhi, grid[0]) {
            for &y in &linspace(ylo, yhi, grid[1]) {
                for &w in &linspace(wlo, whi, grid[2]) {
                    let z2 = nine * x * x - w * w - c550;
                    if z2 < T::zero() {
                        skipped += 1;
                        continue;
                    }
                    points.push(vec![x, y, z2.sqrt(), w]);
                }
            }
        }
    }
    (points, skipped)
}

#[derive(Debug, Clone)]
pub struct ContainmentViolation<T> {
    pub start: Vec<T>,
    pub end: Option<Vec<T>>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ContainmentReport<T> {
    pub checked: usize,
    pub skipped_outside_quadric: usize,
    pub all_inside: bool,
    pub violations: Vec<ContainmentViolation<T>>,
    /// Points with no n-th return within the budget: reported, not failed.
    pub non_returning: Vec<(Vec<T>, String)>,
}

/// Follows every grid point of Σ₊ ∪ Σ₋ to its n-th return to the hypersurface
/// (all z ≥ 0 crossings count, both directions) and checks that the return
/// lands back inside Σ₊ ∪ Σ₋.
pub fn nth_return_containment<T: Real>(
    model: &SystemModel<T>,
    section: &SectionSpec<T>,
    grid: [usize; 3],
    n: usize,
    copts: &CrossingOptions<T>,
) -> Result<ContainmentReport<T>> {
    let (points, skipped) = section_grid(section, grid);
    let outcomes: Vec<(usize, std::result::Result<Option<Vec<T>>, String>)> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            if n == 0 {
                return (i, Ok(Some(p.clone())));
            }
            let mut local = copts.clone();
            local.window_only = false;
            match find_crossings(model, p, section, n, &local) {
                Ok(events) => {
                    let ev = nth_counted(&events, n, false).expect("n counted crossings");
                    (i, Ok(Some(ev.state.clone())))
                }
                Err(Error::NoCrossing { .. }) => (i, Ok(None)),
                Err(e) => (i, Err(e.to_string())),
            }
        })
        .collect();
    let mut report = ContainmentReport {
        checked: points.len(),
        skipped_outside_quadric: skipped,
        all_inside: true,
        violations: Vec::new(),
        non_returning: Vec::new(),
    };
    for (i, outcome) in outcomes {
        match outcome {
            Ok(Some(end)) => {
                if section.window_label(&end) == Window::Outside {
                    report.violations.push(ContainmentViolation {
                        start: points[i].clone(),
                        end: Some(end),
                        reason: "nth return outside the window boxes".into(),
                    });
                }
            }
            Ok(None) => report
                .non_returning
                .push((points[i].clone(), "time budget exhausted".into())),
            Err(reason) => report.violations.push(ContainmentViolation {
                start: points[i].clone(),
                end: None,
                reason,
            }),
        }
    }
    report.all_inside = report.violations.is_empty();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

/// Starts on the unstable separatrix: eq.location ± offset·v_u, the sign of
/// the x-component fixed so `Plus` is the right (x > 0) branch.
pub fn separatrix_trajectory<T: Real>(
    model: &SystemModel<T>,
    eq: &EquilibriumInfo<T>,
    branch: Branch,
    offset: T,
    span: T,
    sample_dt: T,
    opts: &IntegratorOptions<T>,
) -> Result<Trajectory<T>> {
    let v = eq
        .unstable_eigenvector
        .as_ref()
        .ok_or(Error::NoUnstableDirection)?;
    let mut dir: Vec<T> = v.clone();
    if dir[0] < T::zero() {
        dir.iter_mut().for_each(|c| *c = -*c);
    }
    let sign = match branch {
        Branch::Plus => T::one(),
        Branch::Minus => -T::one(),
    };
    let x0: Vec<T> = eq
        .location
        .iter()
        .zip(dir.iter())
        .map(|(&c, &d)| c + sign * offset * d)
        .collect();
    integrate_trajectory(model, &x0, T::zero(), span, sample_dt, opts)
}

/// First-return window labels over the section grid, and the grid points
/// whose lattice neighbors carry a different label (≈ W^s(O) ∩ Σ).
#[derive(Debug, Clone)]
pub struct BoundaryReport<T> {
    pub grid: [usize; 3],
    /// One flattened label lattice per window box, +1 / −1 / 0 (unknown).
    pub labels: Vec<Vec<i8>>,
    pub boundary_points: Vec<Vec<T>>,
    pub unknown: usize,
}

pub fn stable_manifold_boundary<T: Real>(
    model: &SystemModel<T>,
    section: &SectionSpec<T>,
    grid: [usize; 3],
    copts: &CrossingOptions<T>,
) -> Result<BoundaryReport<T>> {
    let [nx, ny, nw] = grid;
    let nine = T::lit(9.0);
    let c550 = T::lit(550.0);
    let mut labels: Vec<Vec<i8>> = Vec::new();
    let mut point_lattices: Vec<Vec<Option<Vec<T>>>> = Vec::new();
    let mut unknown = 0usize;
    for wbox in &section.windows {
        let b = |i: usize| wbox.bounds[i].expect("boxed coordinate");
        let (xlo, xhi) = b(0);
        let (ylo, yhi) = b(1);
        let (wlo, whi) = b(3);
        let xs = linspace(xlo, xhi, nx);
        let ys = linspace(ylo, yhi, ny);
        let ws = linspace(wlo, whi, nw);
        let mut lattice_points: Vec<Option<Vec<T>>> = Vec::with_capacity(nx * ny * nw);
        for &x in &xs {
            for &y in &ys {
                for &w in &ws {
                    let z2 = nine * x * x - w * w - c550;
                    lattice_points.push(
                        (z2 >= T::zero()).then(|| vec![x, y, z2.sqrt(), w]),
                    );
                }
            }
        }
        let lattice_labels: Vec<i8> = lattice_points
            .par_iter()
            .map(|maybe| {
                let Some(p) = maybe else { return 0 };
                let mut local = copts.clone();
                local.window_only = false;
                match find_crossings(model, p, section, 1, &local) {
                    Ok(events) => {
                        let ev = nth_counted(&events, 1, false).expect("one crossing");
                        if ev.state[0] > T::zero() {
                            1
                        } else {
                            -1
                        }
                    }
                    Err(_) => 0,
                }
            })
            .collect();
        unknown += lattice_labels.iter().filter(|&&l| l == 0).count();
        labels.push(lattice_labels);
        point_lattices.push(lattice_points);
    }

    let mut boundary_points = Vec::new();
    let idx = |i: usize, j: usize, k: usize| (i * ny + j) * nw + k;
    for (lat, pts) in labels.iter().zip(point_lattices.iter()) {
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nw {
                    let l = lat[idx(i, j, k)];
                    if l == 0 {
                        continue;
                    }
                    let mut is_boundary = false;
                    let neighbors = [
                        (i.wrapping_sub(1), j, k),
                        (i + 1, j, k),
                        (i, j.wrapping_sub(1), k),
                        (i, j + 1, k),
                        (i, j, k.wrapping_sub(1)),
                        (i, j, k + 1),
                    ];
                    for (a, bj, c) in neighbors {
                        if a < nx && bj < ny && c < nw {
                            let ln = lat[idx(a, bj, c)];
                            if ln != 0 && ln != l {
                                is_boundary = true;
                                break;
                            }
                        }
                    }
                    if is_boundary {
                        if let Some(p) = &pts[idx(i, j, k)] {
                            boundary_points.push(p.clone());
                        }
                    }
                }
            }
        }
    }
    Ok(BoundaryReport {
        grid,
        labels,
        boundary_points,
        unknown,
    })
}

/// Fig.-12-style color classes keyed by (next window, previous window) of a
/// window-member crossing under the return map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceColor {
    /// next ∈ Σ₋, prev ∈ Σ₊
    Green,
    /// next ∈ Σ₋, prev ∈ Σ₋
    Black,
    /// next ∈ Σ₊, prev ∈ Σ₊
    Red,
    /// next ∈ Σ₊, prev ∈ Σ₋
    Blue,
}

impl TraceColor {
    pub fn of(next: Window, prev: Window) -> Option<TraceColor> {
        match (next, prev) {
            (Window::Minus, Window::Plus) => Some(TraceColor::Green),
            (Window::Minus, Window::Minus) => Some(TraceColor::Black),
            (Window::Plus, Window::Plus) => Some(TraceColor::Red),
            (Window::Plus, Window::Minus) => Some(TraceColor::Blue),
            _ => None,
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            TraceColor::Green => [0, 160, 0],
            TraceColor::Black => [0, 0, 0],
            TraceColor::Red => [220, 0, 0],
            TraceColor::Blue => [0, 0, 220],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TraceColor::Green => "green",
            TraceColor::Black => "black",
            TraceColor::Red => "red",
            TraceColor::Blue => "blue",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TraceEvent<T> {
    pub event: CrossingEvent<T>,
    pub color: TraceColor,
}

/// Collects `n_crossings` window-member crossings, discards the first
/// `discard`, and colors each survivor by the windows of its successor and
/// predecessor member crossings (the ends, lacking one of those, are dropped).
pub fn attractor_section_trace<T: Real>(
    model: &SystemModel<T>,
    section: &SectionSpec<T>,
    x0: &[T],
    n_crossings: usize,
    discard: usize,
    copts: &CrossingOptions<T>,
) -> Result<Vec<TraceEvent<T>>> {
    if n_crossings <= discard {
        return Err(Error::InvalidArgument(
            "attractor_section_trace needs n_crossings > discard".into(),
        ));
    }
    let mut local = copts.clone();
    local.window_only = true;
    let events = find_crossings(model, x0, section, n_crossings, &local)?;
    let members: Vec<&CrossingEvent<T>> = events
        .iter()
        .filter(|e| !e.grazing && e.window != Window::Outside)
        .collect();
    let mut out = Vec::new();
    for k in 1..members.len().saturating_sub(1) {
        if k < discard {
            continue;
        }
        let prev = members[k - 1].window;
        let next = members[k + 1].window;
        if let Some(color) = TraceColor::of(next, prev) {
            out.push(TraceEvent {
                event: members[k].clone(),
                color,
            });
        }
    }
    Ok(out)
}

/// CSV dump `k,t,x1,...,xn,window,color` (color empty for plain crossings).
pub fn write_crossings_csv<T: Real, W: std::io::Write>(
    events: &[CrossingEvent<T>],
    colors: Option<&[TraceColor]>,
    dim: usize,
    mut out: W,
) -> Result<()> {
    write!(out, "k,t")?;
    for j in 1..=dim {
        write!(out, ",x{j}")?;
    }
    writeln!(out, ",window,color")?;
    for (k, ev) in events.iter().enumerate() {
        write!(out, "{k},{:.16e}", ev.t.as_f64())?;
        for v in &ev.state {
            write!(out, ",{:.16e}", v.as_f64())?;
        }
        let color = colors.map_or("", |c| c[k].as_str());
        writeln!(out, ",{},{color}", ev.window.as_str())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;

    fn half_space_section(dim: usize) -> SectionSpec<f64> {
        SectionSpec::custom(
            "x1=0",
            Arc::new(|x: &[f64]| x[0]),
            Arc::new(|_x: &[f64], out: &mut [f64]| {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[0] = 1.0;
            }),
            None,
            vec![WindowBox {
                window: Window::Plus,
                bounds: vec![None; dim],
            }],
        )
    }

    #[test]
    fn builtin_sigma_examples() {
        let s: SectionSpec<f64> = builtin_section("lorenz4d_sigma", &[]).unwrap();
        let z = 2650.0f64.sqrt();
        let p_plus = [20.0, 0.0, z, -20.0];
        assert!(s.g(&p_plus).abs() < 1e-9);
        assert_eq!(s.window_label(&p_plus), Window::Plus);
        let p_minus = [-20.0, 0.0, z, -20.0];
        assert!(s.g(&p_minus).abs() < 1e-9);
        assert_eq!(s.window_label(&p_minus), Window::Minus);
        let originish = [0.0, 0.0, 1.0, 0.0];
        assert_eq!(s.g(&originish), -551.0);
        assert_eq!(s.window_label(&originish), Window::Outside);
        assert!(s.in_domain(&p_plus));
        assert!(!s.in_domain(&[20.0, 0.0, -z, -20.0]));
    }

    #[test]
    fn builtin_plane_needs_r() {
        assert!(builtin_section::<f64>("lorenz_plane", &[]).is_err());
        let s: SectionSpec<f64> =
            builtin_section("lorenz_plane", &[("r".into(), 28.0)]).unwrap();
        assert_eq!(s.g(&[0.0, 0.0, 27.0]), 0.0);
        assert_eq!(s.window_label(&[3.0, 0.0, 27.0]), Window::Plus);
        assert_eq!(s.window_label(&[-3.0, 0.0, 27.0]), Window::Minus);
        assert!(builtin_section::<f64>("nosuch", &[]).is_err());
    }

    fn constant_flow(vx: f64, vy: f64) -> SystemModel<f64> {
        SystemModel::custom_flow(
            "const",
            2,
            Arc::new(move |_x: &[f64], out: &mut [f64]| {
                out[0] = vx;
                out[1] = vy;
            }),
            Arc::new(|_x: &[f64], j: &mut Mat<f64>| {
                for i in 0..2 {
                    for k in 0..2 {
                        j[(i, k)] = 0.0;
                    }
                }
            }),
        )
    }

    #[test]
    fn linear_motion_crossing() {
        let m = constant_flow(1.0, 0.0);
        let s = half_space_section(2);
        let copts = CrossingOptions::default();
        let events = find_crossings(&m, &[-1.0, 0.0], &s, 1, &copts).unwrap();
        let ev = nth_counted(&events, 1, false).unwrap();
        assert!((ev.t - 1.0).abs() < 1e-10);
        assert!(ev.state[0].abs() < 1e-9);
        assert!(ev.state[1].abs() < 1e-12);
        assert!(!ev.grazing);
        assert!(ev.residual < 1e-9);
    }

    #[test]
    fn parabola_start_on_section_is_excluded() {
        // ẋ = (x₂, 1) from (0, −1): x₁(t) = t²/2 − t touches zero at t = 0
        // (the start, excluded) and crosses transversally at t = 2.
        let m = SystemModel::custom_flow(
            "parabola",
            2,
            Arc::new(|x: &[f64], out: &mut [f64]| {
                out[0] = x[1];
                out[1] = 1.0;
            }),
            Arc::new(|_x: &[f64], j: &mut Mat<f64>| {
                j[(0, 0)] = 0.0;
                j[(0, 1)] = 1.0;
                j[(1, 0)] = 0.0;
                j[(1, 1)] = 0.0;
            }),
        );
        let s = half_space_section(2);
        let copts = CrossingOptions::default();
        let events = find_crossings(&m, &[0.0, -1.0], &s, 1, &copts).unwrap();
        let ev = nth_counted(&events, 1, false).unwrap();
        assert!((ev.t - 2.0).abs() < 1e-9, "t* = {}", ev.t);
        assert!((ev.state[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grazing_flow_is_flagged_not_counted() {
        let m = constant_flow(1e-9, 1.0);
        let s = half_space_section(2);
        let copts = CrossingOptions::default();
        let events = scan_crossings(&m, &[-1e-9, 0.0], &s, 2.0, &copts).unwrap();
        assert!(!events.is_empty());
        assert!(events.iter().all(|e| e.grazing));
        // find_crossings can never satisfy n=1 with only grazing events.
        let tight = CrossingOptions {
            time_budget_per_return: 3.0,
            ..CrossingOptions::default()
        };
        match find_crossings(&m, &[-1e-9, 0.0], &s, 1, &tight) {
            Err(Error::NoCrossing { found, wanted, .. }) => {
                assert_eq!((found, wanted), (0, 1));
            }
            other => panic!("expected NoCrossing, got {other:?}"),
        }
    }

    #[test]
    fn direction_filter() {
        // Oscillator crosses x₁ = 0 alternately upward and downward.
        let m = SystemModel::custom_flow(
            "osc",
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
        let s = half_space_section(2);
        let both = scan_crossings(&m, &[1.0, 0.0], &s, 12.6, &CrossingOptions::default()).unwrap();
        assert_eq!(both.len(), 4); // two full periods
        let up = CrossingOptions {
            direction: CrossDirection::Up,
            ..CrossingOptions::default()
        };
        let ups = scan_crossings(&m, &[1.0, 0.0], &s, 12.6, &up).unwrap();
        assert_eq!(ups.len(), 2);
        for e in &ups {
            assert!(e.state[1] > 0.0); // dG/dt = ẋ₁ = x₂ > 0
        }
    }

    #[test]
    fn lorenz_plane_crossings_have_tight_residuals() {
        let m: SystemModel<f64> = SystemModel::builtin("lorenz3d", &[("r".into(), 28.0)]).unwrap();
        let s: SectionSpec<f64> =
            builtin_section("lorenz_plane", &[("r".into(), 28.0)]).unwrap();
        let copts = CrossingOptions::default();
        let events = find_crossings(&m, &[1.0, 1.0, 1.0], &s, 20, &copts).unwrap();
        let counted: Vec<_> = events.iter().filter(|e| !e.grazing).collect();
        assert!(counted.len() >= 20);
        for e in counted {
            assert!(e.residual < 1e-9);
            assert!((e.state[2] - 27.0).abs() < 1e-8);
            assert!(e.window != Window::Outside);
            assert!(section_transversality(&m, &s, &e.state).abs() > 1e-8);
        }
    }

    fn section_transversality(
        m: &SystemModel<f64>,
        s: &SectionSpec<f64>,
        x: &[f64],
    ) -> f64 {
        s.g_dot(m, x)
    }

    #[test]
    fn zero_returns_are_trivially_inside() {
        let m: SystemModel<f64> = SystemModel::builtin("lorenz4d", &[]).unwrap();
        let s: SectionSpec<f64> = builtin_section("lorenz4d_sigma", &[]).unwrap();
        let copts = CrossingOptions {
            integrator: IntegratorOptions::with_tol(1e-8, 1e-10),
            ..CrossingOptions::default()
        };
        let rep = nth_return_containment(&m, &s, [3, 3, 3], 0, &copts).unwrap();
        assert!(rep.all_inside);
        assert!(rep.checked > 0);
        assert!(rep.violations.is_empty());
    }

    #[test]
    fn single_center_point_returns_inside() {
        let m: SystemModel<f64> = SystemModel::builtin("lorenz4d", &[]).unwrap();
        let s: SectionSpec<f64> = builtin_section("lorenz4d_sigma", &[]).unwrap();
        let copts = CrossingOptions {
            integrator: IntegratorOptions::with_tol(1e-8, 1e-10),
            ..CrossingOptions::default()
        };
        let rep = nth_return_containment(&m, &s, [1, 1, 1], 10, &copts).unwrap();
        assert_eq!(rep.checked, 2); // box centers of Σ₊ and Σ₋
        assert!(rep.all_inside, "{:?}", rep.violations);
        assert!(rep.non_returning.is_empty());
    }

    #[test]
    fn separatrix_branches_are_symmetry_images() {
        let m: SystemModel<f64> = SystemModel::builtin("lorenz4d", &[]).unwrap();
        let eq = m.origin_info_closed().unwrap();
        let opts = IntegratorOptions::default();
        let plus =
            separatrix_trajectory(&m, &eq, Branch::Plus, 1e-6, 3.0, 0.01, &opts).unwrap();
        let minus =
            separatrix_trajectory(&m, &eq, Branch::Minus, 1e-6, 3.0, 0.01, &opts).unwrap();
        assert!(plus.state(0)[0] > 0.0);
        assert!(minus.state(0)[0] < 0.0);
        for i in (0..plus.len()).step_by(50) {
            let img = m.apply_symmetry(plus.state(i)).unwrap();
            for c in 0..4 {
                assert!(
                    (img[c] - minus.state(i)[c]).abs() < 1e-6,
                    "i={i} c={c}: {} vs {}",
                    img[c],
                    minus.state(i)[c]
                );
            }
        }
    }

    #[test]
    fn trace_color_table() {
        assert_eq!(
            TraceColor::of(Window::Minus, Window::Plus),
            Some(TraceColor::Green)
        );
        assert_eq!(
            TraceColor::of(Window::Minus, Window::Minus),
            Some(TraceColor::Black)
        );
        assert_eq!(
            TraceColor::of(Window::Plus, Window::Plus),
            Some(TraceColor::Red)
        );
        assert_eq!(
            TraceColor::of(Window::Plus, Window::Minus),
            Some(TraceColor::Blue)
        );
        assert_eq!(TraceColor::of(Window::Outside, Window::Plus), None);
    }

    #[test]
    fn csv_format() {
        let ev = CrossingEvent {
            t: 1.5,
            state: vec![0.0, 2.0],
            window: Window::Plus,
            residual: 1e-12,
            grazing: false,
        };
        let mut buf = Vec::new();
        write_crossings_csv(&[ev], Some(&[TraceColor::Green]), 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "k,t,x1,x2,window,color");
        let row = lines.next().unwrap();
        assert!(row.starts_with("0,1.5000000000000000e0,"));
        assert!(row.ends_with(",plus,green"));
    }
}
